//! Frontend behavior: lexing, parsing, desugaring, lowering, and the
//! frontend-level invariants over the corpus programs.

use scoop_core::frontend::ast::{Expr, FeatureDecl};
use scoop_core::frontend::ir::{Expression, FeatureKind, Literal};
use scoop_core::frontend::lower::LowerError;
use scoop_core::frontend::token::{tokenize, LexError, Position};
use scoop_core::frontend::{compile, parse_source, print_program};
use scoop_core::runtime::rules::Engine;
use scoop_core::scheduler::{run, RunStatus, SchedulePolicy};
use scoop_core::state::Value;
use scoop_core::typing::{ExprCtx, TypingEnv};

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).expect("corpus file")
}

const CORPUS: &[&str] = &[
    "producer_consumer.scoop",
    "share_market.scoop",
    "callback.scoop",
    "dining.scoop",
    "once_pair.scoop",
    "pingpong.scoop",
    "counter_loop.scoop",
    "tiny_deadlock.scoop",
    "async_post.scoop",
    "explicit_processors.scoop",
];

#[test]
fn lex_error_position_is_exact() {
    let err = tokenize("x @ y").unwrap_err();
    assert_eq!(
        err,
        LexError::IllegalCharacter {
            ch: '@',
            pos: Position { line: 1, column: 3 }
        }
    );
}

#[test]
fn zero_class_program_parses_but_fails_to_lower() {
    let program = parse_source("{C}.f").expect("grammar allows zero classes");
    assert!(program.classes.is_empty());
    let err = scoop_core::frontend::lower(&program).unwrap_err();
    assert_eq!(err, LowerError::UnknownClass("C".to_string()));
}

#[test]
fn producer_consumer_lowering_monomorphizes_buffer_once() {
    let ir = compile(&corpus("producer_consumer.scoop")).unwrap();
    let buffer_derivations: Vec<&str> = ir
        .classes
        .iter()
        .filter(|c| c.name.starts_with("BUFFER["))
        .map(|c| c.name.as_str())
        .collect();
    assert_eq!(buffer_derivations, vec!["BUFFER[INTEGER]"]);
    // The derivation's formal generic turned into INTEGER everywhere.
    let buffer = ir.class_by_name["BUFFER[INTEGER]"];
    let put = ir.feature_by_name(buffer, "put").unwrap();
    assert_eq!(ir.feature(put).formals[0].ty.class, ir.integer_class);
    let items = ir.attribute_def(buffer, "items").unwrap();
    assert_eq!(
        ir.class(items.result.as_ref().unwrap().class).name,
        "ARRAY[INTEGER]"
    );
}

#[test]
fn root_procedure_with_formals_is_rejected() {
    let source = "
class APPLICATION
create make
feature
  make (n: INTEGER) do end
end
{APPLICATION}.make
";
    let err = compile(source).unwrap_err();
    assert!(
        err.to_string().contains("no formal arguments"),
        "unexpected error: {err}"
    );
}

#[test]
fn root_procedure_with_precondition_is_rejected() {
    let source = "
class APPLICATION
create make
feature
  make require True do end
end
{APPLICATION}.make
";
    let err = compile(source).unwrap_err();
    assert!(err.to_string().contains("precondition"), "{err}");
}

#[test]
fn expanded_class_flag_propagates() {
    let source = "
expanded class C
feature
  x: INTEGER
end
class APPLICATION
create make
feature
  make do end
end
{APPLICATION}.make
";
    let ir = compile(source).unwrap();
    let c = ir.class_by_name["C"];
    assert!(ir.class(c).is_exp);
    assert!(!ir.class(c).is_ref());
}

#[test]
fn unqualified_attribute_read_is_rejected() {
    let source = "
class APPLICATION
create make
feature
  counter: INTEGER
  make
    local
      x: INTEGER
    do
      x := counter
    end
end
{APPLICATION}.make
";
    let err = compile(source).unwrap_err();
    assert!(err.to_string().contains("unqualified"), "{err}");
}

#[test]
fn processor_attribute_must_be_typed_processor() {
    let source = "
class APPLICATION
create make
feature
  p: INTEGER
  x: separate <p> APPLICATION
  make do end
end
{APPLICATION}.make
";
    let err = compile(source).unwrap_err();
    assert!(err.to_string().contains("PROCESSOR"), "{err}");
}

#[test]
fn parse_print_round_trip_on_every_corpus_program() {
    for name in CORPUS {
        let first = parse_source(&corpus(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        let printed = print_program(&first);
        let second =
            parse_source(&printed).unwrap_or_else(|e| panic!("{name} after print: {e}\n{printed}"));
        assert_eq!(first, second, "{name} round trip");
    }
}

#[test]
fn lowering_is_deterministic() {
    for name in CORPUS {
        let a = compile(&corpus(name)).unwrap();
        let b = compile(&corpus(name)).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"), "{name}");
    }
}

#[test]
fn every_ir_expression_has_a_type() {
    for name in CORPUS {
        let ir = compile(&corpus(name)).unwrap();
        let typing = TypingEnv::new(&ir);
        let visit = |e: &Expression, ctx: ExprCtx| {
            typing
                .type_of(e, ctx)
                .unwrap_or_else(|err| panic!("{name}: untyped expression: {err}"));
        };
        for (idx, feature) in ir.features.iter().enumerate() {
            let ctx = ExprCtx::Feature(scoop_core::frontend::ir::FeatureId(idx));
            if let Some(pre) = &feature.pre {
                visit_expressions(pre, &mut |e| visit(e, ctx));
            }
            if let Some(post) = &feature.post {
                visit_expressions(post, &mut |e| visit(e, ctx));
            }
            for instr in &feature.body {
                visit_instruction_expressions(instr, &mut |e| visit(e, ctx));
            }
        }
        for (idx, class) in ir.classes.iter().enumerate() {
            if let Some(inv) = &class.invariant {
                let ctx = ExprCtx::Invariant(scoop_core::frontend::ir::ClassId(idx));
                visit_expressions(inv, &mut |e| visit(e, ctx));
            }
        }
    }
}

fn visit_expressions(e: &Expression, f: &mut impl FnMut(&Expression)) {
    f(e);
    if let Expression::Call { target, args, .. } = e {
        visit_expressions(target, f);
        for a in args {
            visit_expressions(a, f);
        }
    }
}

fn visit_instruction_expressions(
    instr: &scoop_core::frontend::ir::Instruction,
    f: &mut impl FnMut(&Expression),
) {
    use scoop_core::frontend::ir::Instruction as I;
    match instr {
        I::Assign { expr, .. } => visit_expressions(expr, f),
        I::Call { target, args, .. } => {
            visit_expressions(target, f);
            for a in args {
                visit_expressions(a, f);
            }
        }
        I::Create { args, .. } => {
            for a in args {
                visit_expressions(a, f);
            }
        }
        I::If {
            condition,
            then_branch,
            else_branch,
        } => {
            visit_expressions(condition, f);
            for i in then_branch.iter().chain(else_branch.iter()) {
                visit_instruction_expressions(i, f);
            }
        }
        I::Until { condition, body } => {
            visit_expressions(condition, f);
            for i in body {
                visit_instruction_expressions(i, f);
            }
        }
    }
}

#[test]
fn consume_precondition_parses_to_the_quoted_call_chain() {
    // not (buffer.count = 0) as a qualified-call chain.
    let program = parse_source(&corpus("producer_consumer.scoop")).unwrap();
    let consumer = program
        .classes
        .iter()
        .find(|c| c.name == "CONSUMER")
        .unwrap();
    let consume = consumer
        .feature_blocks
        .iter()
        .flat_map(|b| &b.features)
        .find_map(|f| match f {
            FeatureDecl::Routine(r) if r.name == "consume" => Some(r),
            _ => None,
        })
        .unwrap();
    let expected = Expr::Call {
        target: Box::new(Expr::Call {
            target: Box::new(Expr::Call {
                target: Box::new(Expr::Entity("buffer".into())),
                feature: "count".into(),
                args: vec![],
            }),
            feature: "is_equal".into(),
            args: vec![Expr::Literal(scoop_core::frontend::ast::Literal::Int(0))],
        }),
        feature: "negated".into(),
        args: vec![],
    };
    assert_eq!(consume.precondition.as_ref(), Some(&expected));
}

/// Cross-check of the `not` desugaring by running both spellings: the
/// operator form and the explicit qualified call must compute the same
/// attribute value.
#[test]
fn negation_desugaring_agrees_with_explicit_call() {
    let template = |expr: &str| {
        format!(
            "
class APPLICATION
create make
feature
  flag: BOOLEAN
  make
    local
      b: BOOLEAN
    do
      b := False
      flag := {expr}
    end
end
{{APPLICATION}}.make
"
        )
    };
    let result_of = |source: &str| -> Value {
        let ir = compile(source).unwrap();
        let engine = Engine::new(ir);
        let outcome = run(&engine, &SchedulePolicy::RoundRobin, 10_000).unwrap();
        assert_eq!(outcome.status, RunStatus::Terminated);
        let root_class = engine.ir.root_class;
        let root = outcome
            .final_config
            .state
            .heap_objects_of_class(root_class)
            .into_iter()
            .next()
            .unwrap();
        let flag_ref = root.att_val("flag").unwrap().as_ref().unwrap();
        outcome
            .final_config
            .state
            .ref_obj(flag_ref)
            .unwrap()
            .att_val("item")
            .unwrap()
    };
    assert_eq!(result_of(&template("not b")), Value::Bool(true));
    assert_eq!(result_of(&template("b.negated")), Value::Bool(true));
}

#[test]
fn command_in_expression_position_is_rejected() {
    let source = "
class C
create make
feature
  make do end
  act do end
end
class APPLICATION
create make
feature
  make
    local
      c: C
      x: INTEGER
    do
      create c.make
      x := c.act
    end
end
{APPLICATION}.make
";
    let err = compile(source).unwrap_err();
    assert!(err.to_string().contains("not a query"), "{err}");
}

#[test]
fn literal_kinds_lower_intact() {
    let source = "
class APPLICATION
create make
feature
  make
    local
      c: CHARACTER
      n: INTEGER
    do
      c := 'z'
      n := -5
    end
end
{APPLICATION}.make
";
    let ir = compile(source).unwrap();
    let make = ir.feature(ir.root_procedure);
    let literals: Vec<Literal> = make
        .body
        .iter()
        .filter_map(|i| match i {
            scoop_core::frontend::ir::Instruction::Assign {
                expr: Expression::Literal(l),
                ..
            } => Some(*l),
            _ => None,
        })
        .collect();
    assert_eq!(literals, vec![Literal::Char('z'), Literal::Int(-5)]);
    assert_eq!(make.kind, FeatureKind::Procedure);
}
