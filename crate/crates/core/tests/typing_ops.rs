//! The three typing judgments, plus their coherence
//! invariants over the corpus.

use scoop_core::frontend::compile;
use scoop_core::frontend::ir::{Detachable, Expression, FeatureId, Literal, ProcTag, ProgramIR};
use scoop_core::typing::{ExprCtx, TypeError, TypingEnv};

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).expect("corpus file")
}

fn feature_named(ir: &ProgramIR, class: &str, name: &str) -> FeatureId {
    ir.feature_by_name(ir.class_by_name[class], name)
        .unwrap_or_else(|| panic!("{class}.{name}"))
}

#[test]
fn separate_formal_types_as_separate_attached() {
    let ir = compile(&corpus("producer_consumer.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let consume = feature_named(&ir, "CONSUMER", "consume");
    let t = typing
        .type_of(
            &Expression::Entity("buffer".into()),
            ExprCtx::Feature(consume),
        )
        .unwrap();
    assert_eq!(t.detachable, Detachable::Attached);
    assert_eq!(t.processor, ProcTag::SeparateTop);
    assert_eq!(ir.class(t.class).name, "BUFFER[INTEGER]");
}

#[test]
fn void_literal_has_no_processor() {
    let ir = compile(&corpus("pingpong.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let make = ir.root_procedure;
    let t = typing
        .type_of(&Expression::Literal(Literal::Void), ExprCtx::Feature(make))
        .unwrap();
    assert_eq!(t.detachable, Detachable::Detachable);
    assert_eq!(t.processor, ProcTag::NoProcessor);
    assert_eq!(t.class, ir.none_class);
}

#[test]
fn current_is_non_separate_in_any_feature() {
    let ir = compile(&corpus("share_market.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    for (class_name, feature_name) in [("MARKET", "buy"), ("INVESTOR", "sell"), ("UUID", "make")] {
        let f = feature_named(&ir, class_name, feature_name);
        let t = typing
            .type_of(&Expression::Entity("Current".into()), ExprCtx::Feature(f))
            .unwrap();
        assert_eq!(t.detachable, Detachable::Attached);
        assert_eq!(t.processor, ProcTag::NonSeparate);
        assert_eq!(ir.class(t.class).name, class_name);
    }
}

#[test]
fn call_on_non_query_is_a_type_error() {
    let ir = compile(&corpus("share_market.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let buy_proc = feature_named(&ir, "MARKET", "buy");
    let investor_buy = feature_named(&ir, "INVESTOR", "buy");
    // A hand-built expression calling the procedure `buy` as a query.
    let bogus = Expression::Call {
        target: Box::new(Expression::Entity("market".into())),
        feature: buy_proc,
        args: vec![],
    };
    let err = typing
        .type_of(&bogus, ExprCtx::Feature(investor_buy))
        .unwrap_err();
    assert!(matches!(err, TypeError::NotAQuery { .. }));
}

#[test]
fn separate_target_makes_non_separate_result_separate() {
    let ir = compile(&corpus("producer_consumer.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let consume = feature_named(&ir, "CONSUMER", "consume");
    let count = feature_named(&ir, "BUFFER[INTEGER]", "count");
    // buffer.count: count is declared (!, •, INTEGER); through the separate
    // target the result becomes separate.
    let expr = Expression::Call {
        target: Box::new(Expression::Entity("buffer".into())),
        feature: count,
        args: vec![],
    };
    let t = typing.type_of(&expr, ExprCtx::Feature(consume)).unwrap();
    assert_eq!(t.processor, ProcTag::SeparateTop);
    assert_eq!(t.class, ir.integer_class);
}

#[test]
fn controlled_formal_and_its_controlling_entity() {
    let ir = compile(&corpus("producer_consumer.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let consume = feature_named(&ir, "CONSUMER", "consume");
    let buffer = Expression::Entity("buffer".into());
    assert!(typing.is_controlled(&buffer, ExprCtx::Feature(consume)));
    assert_eq!(
        typing
            .controlling_entity(&buffer, ExprCtx::Feature(consume))
            .unwrap(),
        "buffer"
    );
}

#[test]
fn separate_non_formal_is_not_controlled() {
    let ir = compile(&corpus("once_pair.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let go = feature_named(&ir, "WORKER", "go");
    // `t: separate TOKEN` is a local, attached and separate, but no formal
    // of `go` shares its handler.
    let t_entity = Expression::Entity("t".into());
    assert!(!typing.is_controlled(&t_entity, ExprCtx::Feature(go)));
    assert!(matches!(
        typing.controlling_entity(&t_entity, ExprCtx::Feature(go)),
        Err(TypeError::NotControlled)
    ));
}

#[test]
fn non_separate_attached_is_always_controlled() {
    let ir = compile(&corpus("once_pair.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let go = feature_named(&ir, "WORKER", "go");
    let h = Expression::Entity("h".into());
    assert!(typing.is_controlled(&h, ExprCtx::Feature(go)));
    assert_eq!(
        typing.controlling_entity(&h, ExprCtx::Feature(go)).unwrap(),
        "Current"
    );
}

#[test]
fn market_target_controls_through_the_formal() {
    let ir = compile(&corpus("share_market.scoop")).unwrap();
    let typing = TypingEnv::new(&ir);
    let buy = feature_named(&ir, "INVESTOR", "buy");
    let market = Expression::Entity("market".into());
    assert_eq!(
        typing
            .controlling_entity(&market, ExprCtx::Feature(buy))
            .unwrap(),
        "market"
    );
    // Current.id: the target Current is controlled by Current itself.
    let current = Expression::Entity("Current".into());
    assert_eq!(
        typing
            .controlling_entity(&current, ExprCtx::Feature(buy))
            .unwrap(),
        "Current"
    );
}

#[test]
fn qualified_explicit_specification_controls_through_its_formal() {
    let source = "
class WORKER
create make
feature
  make do end
  use (anchor: separate WORKER; mate: separate <anchor.handler> WORKER)
    do
      mate.poke
    end
  poke do end
end
class APPLICATION
create make
feature
  make do end
end
{APPLICATION}.make
";
    let ir = compile(source).unwrap();
    let typing = TypingEnv::new(&ir);
    let use_f = ir
        .feature_by_name(ir.class_by_name["WORKER"], "use")
        .unwrap();
    let mate = Expression::Entity("mate".into());
    assert_eq!(
        typing
            .controlling_entity(&mate, ExprCtx::Feature(use_f))
            .unwrap(),
        // mate is itself an attached formal, which already controls it.
        "mate"
    );
    // A qualified-spec expression that is not a formal: the result of a
    // query with the same spec would control through `anchor`; simulate by
    // dropping mate from the formals check via a non-entity expression.
    let poke = ir
        .feature_by_name(ir.class_by_name["WORKER"], "poke")
        .unwrap();
    let call = Expression::Call {
        target: Box::new(mate),
        feature: poke,
        args: vec![],
    };
    // poke has no result: a call to it has no type, so it is simply not
    // controlled.
    assert!(!typing.is_controlled(&call, ExprCtx::Feature(use_f)));
}

#[test]
fn shared_unqualified_specification_controls_through_a_formal() {
    let source = "
class WORKER
create make
feature
  make do end
  boss: PROCESSOR
  helper: separate <boss> WORKER
  use (chief: separate <boss> WORKER)
    do
      Current.helper.poke
    end
  poke do end
end
class APPLICATION
create make
feature
  make do end
end
{APPLICATION}.make
";
    let ir = compile(source).unwrap();
    let typing = TypingEnv::new(&ir);
    let use_f = ir
        .feature_by_name(ir.class_by_name["WORKER"], "use")
        .unwrap();
    // Current.helper has the unqualified spec <boss>, shared with the
    // attached formal `chief`.
    let helper = ir
        .feature_by_name(ir.class_by_name["WORKER"], "helper")
        .unwrap();
    let expr = Expression::Call {
        target: Box::new(Expression::Entity("Current".into())),
        feature: helper,
        args: vec![],
    };
    assert_eq!(
        typing
            .controlling_entity(&expr, ExprCtx::Feature(use_f))
            .unwrap(),
        "chief"
    );
}

/// is_controlled and controlling_entity agree everywhere, and the
/// controlling entity is always Current or a formal, never a local.
#[test]
fn judgment_coherence_over_the_corpus() {
    for name in [
        "producer_consumer.scoop",
        "share_market.scoop",
        "callback.scoop",
        "once_pair.scoop",
        "dining.scoop",
    ] {
        let ir = compile(&corpus(name)).unwrap();
        let typing = TypingEnv::new(&ir);
        for (idx, feature) in ir.features.iter().enumerate() {
            let fid = FeatureId(idx);
            let ctx = ExprCtx::Feature(fid);
            let mut check = |e: &Expression| {
                let controlled = typing.is_controlled(e, ctx);
                let entity = typing.controlling_entity(e, ctx);
                assert_eq!(controlled, entity.is_ok(), "{name}: coherence");
                if let Ok(y) = entity {
                    let ok = y == "Current" || feature.formals.iter().any(|d| d.name == y);
                    assert!(ok, "{name}: controlling entity '{y}' is not Current/formal");
                }
            };
            for e in feature.pre.iter().chain(feature.post.iter()) {
                walk(e, &mut check);
            }
            for instr in &feature.body {
                walk_instruction(instr, &mut check);
            }
        }
    }
}

fn walk(e: &Expression, f: &mut impl FnMut(&Expression)) {
    f(e);
    if let Expression::Call { target, args, .. } = e {
        walk(target, f);
        for a in args {
            walk(a, f);
        }
    }
}

fn walk_instruction(
    instr: &scoop_core::frontend::ir::Instruction,
    f: &mut impl FnMut(&Expression),
) {
    use scoop_core::frontend::ir::Instruction as I;
    match instr {
        I::Assign { expr, .. } => walk(expr, f),
        I::Call { target, args, .. } => {
            walk(target, f);
            for a in args {
                walk(a, f);
            }
        }
        I::Create { args, .. } => {
            for a in args {
                walk(a, f);
            }
        }
        I::If {
            condition,
            then_branch,
            else_branch,
        } => {
            walk(condition, f);
            for i in then_branch.iter().chain(else_branch.iter()) {
                walk_instruction(i, f);
            }
        }
        I::Until { condition, body } => {
            walk(condition, f);
            for i in body {
                walk_instruction(i, f);
            }
        }
    }
}
