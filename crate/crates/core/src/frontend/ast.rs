//! Concrete syntax tree for parsed programs.
//!
//! Expressions are stored in desugared form: every operator application has
//! already been rewritten into a qualified call, so the tree only contains
//! literals, entities and query calls. [`print_program`] renders a tree back
//! to source text that re-parses to an identical tree.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceProgram {
    pub classes: Vec<ClassDecl>,
    pub root: RootSpec,
}

/// `{CLASS}.feature` designation of the root procedure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootSpec {
    pub class_name: String,
    pub feature_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDecl {
    pub is_expanded: bool,
    pub name: String,
    pub formal_generics: Vec<String>,
    pub creators: Vec<String>,
    pub feature_blocks: Vec<FeatureBlock>,
    pub invariant: Option<Expr>,
}

/// One `feature [{CLIENTS}]` clause with its declarations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureBlock {
    /// `None` for an unrestricted clause; `Some(clients)` for `feature {A, B}`.
    pub clients: Option<Vec<String>>,
    pub features: Vec<FeatureDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeatureDecl {
    Attribute(EntityDecl),
    Routine(RoutineDecl),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDecl {
    pub name: String,
    pub ty: TypeAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutineDecl {
    pub name: String,
    pub formals: Vec<EntityDecl>,
    pub result_type: Option<TypeAnnotation>,
    pub precondition: Option<Expr>,
    pub locals: Vec<EntityDecl>,
    pub is_once: bool,
    pub body: Vec<Instruction>,
    pub postcondition: Option<Expr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetachableTag {
    Attached,
    Detachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcessorTag {
    NonSeparate,
    SeparateTop,
    /// `separate <x>` where `x` is a processor attribute.
    ExplicitUnqualified(String),
    /// `separate <y.handler>` where `y` is a non-writable attached entity.
    ExplicitQualified(String),
}

/// A type annotation `(d, p, c)`: detachable tag, processor tag, class with
/// actual generic parameters. The absence of both detachable keywords has
/// already been resolved to `Attached` by the parser.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeAnnotation {
    pub detachable: DetachableTag,
    pub processor: ProcessorTag,
    pub class_name: String,
    pub actual_generics: Vec<TypeAnnotation>,
}

impl TypeAnnotation {
    pub fn plain(class_name: &str) -> TypeAnnotation {
        TypeAnnotation {
            detachable: DetachableTag::Attached,
            processor: ProcessorTag::NonSeparate,
            class_name: class_name.to_string(),
            actual_generics: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Assign {
        target: String,
        expr: Expr,
    },
    /// Command call `e0.f(e1, ..., en)`.
    Call {
        target: Expr,
        feature: String,
        args: Vec<Expr>,
    },
    Create {
        target: String,
        feature: String,
        args: Vec<Expr>,
    },
    If {
        condition: Expr,
        then_branch: Vec<Instruction>,
        else_branch: Vec<Instruction>,
    },
    Until {
        condition: Expr,
        body: Vec<Instruction>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Literal {
    Bool(bool),
    Int(i64),
    Char(char),
    Void,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Literal(Literal),
    Entity(String),
    Call {
        target: Box<Expr>,
        feature: String,
        args: Vec<Expr>,
    },
}

/// Expression syntax as parsed, before infix desugaring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawExpr {
    Literal(Literal),
    Entity(String),
    Call {
        target: Box<RawExpr>,
        feature: String,
        args: Vec<RawExpr>,
    },
    Unary {
        op: UnaryOp,
        operand: Box<RawExpr>,
    },
    Binary {
        op: BinaryOp,
        left: Box<RawExpr>,
        right: Box<RawExpr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Plus,
    Minus,
    Equal,
    Less,
    Greater,
    And,
    Or,
}

impl BinaryOp {
    /// The feature each operator rewrites to.
    pub fn feature_name(&self) -> &'static str {
        match self {
            BinaryOp::Plus => "plus",
            BinaryOp::Minus => "minus",
            BinaryOp::Equal => "is_equal",
            BinaryOp::Less => "is_less",
            BinaryOp::Greater => "is_greater",
            BinaryOp::And => "conjuncted",
            BinaryOp::Or => "disjuncted",
        }
    }
}

/// Rewrite operator applications into qualified calls: `x > y` becomes
/// `x.is_greater (y)` and `not b` becomes `b.negated`. Total on parsed
/// expressions.
pub fn desugar_infix(raw: RawExpr) -> Expr {
    match raw {
        RawExpr::Literal(l) => Expr::Literal(l),
        RawExpr::Entity(n) => Expr::Entity(n),
        RawExpr::Call {
            target,
            feature,
            args,
        } => Expr::Call {
            target: Box::new(desugar_infix(*target)),
            feature,
            args: args.into_iter().map(desugar_infix).collect(),
        },
        RawExpr::Unary {
            op: UnaryOp::Not,
            operand,
        } => Expr::Call {
            target: Box::new(desugar_infix(*operand)),
            feature: "negated".to_string(),
            args: Vec::new(),
        },
        RawExpr::Binary { op, left, right } => Expr::Call {
            target: Box::new(desugar_infix(*left)),
            feature: op.feature_name().to_string(),
            args: vec![desugar_infix(*right)],
        },
    }
}

// --- pretty printer -------------------------------------------------------

pub fn print_program(program: &SourceProgram) -> String {
    let mut out = String::new();
    for class in &program.classes {
        print_class(&mut out, class);
        out.push('\n');
    }
    out.push_str(&format!(
        "{{{}}}.{}\n",
        program.root.class_name, program.root.feature_name
    ));
    out
}

fn print_class(out: &mut String, class: &ClassDecl) {
    if class.is_expanded {
        out.push_str("expanded ");
    }
    out.push_str("class ");
    out.push_str(&class.name);
    if !class.formal_generics.is_empty() {
        out.push_str(&format!(" [{}]", class.formal_generics.join(", ")));
    }
    out.push('\n');
    if !class.creators.is_empty() {
        out.push_str(&format!("create {}\n", class.creators.join(", ")));
    }
    for block in &class.feature_blocks {
        out.push_str("feature");
        if let Some(clients) = &block.clients {
            out.push_str(&format!(" {{{}}}", clients.join(", ")));
        }
        out.push('\n');
        for feature in &block.features {
            print_feature(out, feature);
        }
    }
    if let Some(inv) = &class.invariant {
        out.push_str(&format!("invariant {}\n", PrintExpr(inv)));
    }
    out.push_str("end\n");
}

fn print_feature(out: &mut String, feature: &FeatureDecl) {
    match feature {
        FeatureDecl::Attribute(decl) => {
            out.push_str(&format!("  {}: {}\n", decl.name, PrintType(&decl.ty)));
        }
        FeatureDecl::Routine(r) => {
            out.push_str(&format!("  {}", r.name));
            if !r.formals.is_empty() {
                let formals: Vec<String> = r
                    .formals
                    .iter()
                    .map(|d| format!("{}: {}", d.name, PrintType(&d.ty)))
                    .collect();
                out.push_str(&format!(" ({})", formals.join("; ")));
            }
            if let Some(ty) = &r.result_type {
                out.push_str(&format!(": {}", PrintType(ty)));
            }
            out.push('\n');
            if let Some(pre) = &r.precondition {
                out.push_str(&format!("    require {}\n", PrintExpr(pre)));
            }
            if !r.locals.is_empty() {
                out.push_str("    local\n");
                for local in &r.locals {
                    out.push_str(&format!("      {}: {}\n", local.name, PrintType(&local.ty)));
                }
            }
            out.push_str(if r.is_once { "    once\n" } else { "    do\n" });
            for instr in &r.body {
                print_instruction(out, instr, 6);
            }
            if let Some(post) = &r.postcondition {
                out.push_str(&format!("    ensure {}\n", PrintExpr(post)));
            }
            out.push_str("    end\n");
        }
    }
}

fn print_instruction(out: &mut String, instr: &Instruction, indent: usize) {
    let pad = " ".repeat(indent);
    match instr {
        Instruction::Assign { target, expr } => {
            out.push_str(&format!("{pad}{target} := {}\n", PrintExpr(expr)));
        }
        Instruction::Call {
            target,
            feature,
            args,
        } => {
            out.push_str(&format!(
                "{pad}{}\n",
                render_call(&PrintExpr(target).to_string(), feature, args)
            ));
        }
        Instruction::Create {
            target,
            feature,
            args,
        } => {
            out.push_str(&format!(
                "{pad}create {}\n",
                render_call(target, feature, args)
            ));
        }
        Instruction::If {
            condition,
            then_branch,
            else_branch,
        } => {
            out.push_str(&format!("{pad}if {} then\n", PrintExpr(condition)));
            for i in then_branch {
                print_instruction(out, i, indent + 2);
            }
            out.push_str(&format!("{pad}else\n"));
            for i in else_branch {
                print_instruction(out, i, indent + 2);
            }
            out.push_str(&format!("{pad}end\n"));
        }
        Instruction::Until { condition, body } => {
            out.push_str(&format!("{pad}until {} loop\n", PrintExpr(condition)));
            for i in body {
                print_instruction(out, i, indent + 2);
            }
            out.push_str(&format!("{pad}end\n"));
        }
    }
}

fn render_call(target: &str, feature: &str, args: &[Expr]) -> String {
    if args.is_empty() {
        format!("{target}.{feature}")
    } else {
        let rendered: Vec<String> = args.iter().map(|a| PrintExpr(a).to_string()).collect();
        format!("{target}.{feature} ({})", rendered.join(", "))
    }
}

pub struct PrintExpr<'a>(pub &'a Expr);

impl fmt::Display for PrintExpr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Expr::Literal(l) => write!(f, "{}", PrintLiteral(*l)),
            Expr::Entity(n) => write!(f, "{n}"),
            Expr::Call {
                target,
                feature,
                args,
            } => {
                write!(f, "{}.{feature}", PrintExpr(target))?;
                if !args.is_empty() {
                    let rendered: Vec<String> =
                        args.iter().map(|a| PrintExpr(a).to_string()).collect();
                    write!(f, " ({})", rendered.join(", "))?;
                }
                Ok(())
            }
        }
    }
}

pub struct PrintLiteral(pub Literal);

impl fmt::Display for PrintLiteral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Literal::Bool(true) => write!(f, "True"),
            Literal::Bool(false) => write!(f, "False"),
            Literal::Int(v) => write!(f, "{v}"),
            Literal::Char(c) => write!(f, "'{c}'"),
            Literal::Void => write!(f, "Void"),
        }
    }
}

pub struct PrintType<'a>(pub &'a TypeAnnotation);

impl fmt::Display for PrintType<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.0;
        if t.detachable == DetachableTag::Detachable {
            write!(f, "detachable ")?;
        }
        match &t.processor {
            ProcessorTag::NonSeparate => {}
            ProcessorTag::SeparateTop => write!(f, "separate ")?,
            ProcessorTag::ExplicitUnqualified(x) => write!(f, "separate <{x}> ")?,
            ProcessorTag::ExplicitQualified(y) => write!(f, "separate <{y}.handler> ")?,
        }
        write!(f, "{}", t.class_name)?;
        if !t.actual_generics.is_empty() {
            let rendered: Vec<String> = t
                .actual_generics
                .iter()
                .map(|g| PrintType(g).to_string())
                .collect();
            write!(f, " [{}]", rendered.join(", "))?;
        }
        Ok(())
    }
}
