//! Lowered program model: class types, features, expressions, instructions.
//!
//! Generic classes are monomorphized during lowering, so every
//! [`ClassType`] here is a concrete derivation with a unique name
//! (`BUFFER[INTEGER]`, `ARRAY[ARRAY[INTEGER]]`, ...). Feature references in
//! expressions and instructions are resolved to [`FeatureId`]s.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use super::ast::Literal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FeatureId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Detachable {
    Attached,
    Detachable,
}

/// Processor tag of a type triple: `•` (non-separate), `⊤` (separate),
/// `⊥` (no processor, only for the void literal), or an explicit
/// specification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProcTag {
    NonSeparate,
    SeparateTop,
    NoProcessor,
    ExplicitUnqualified(String),
    ExplicitQualified(String),
}

impl ProcTag {
    pub fn is_separate(&self) -> bool {
        matches!(
            self,
            ProcTag::SeparateTop | ProcTag::ExplicitUnqualified(_) | ProcTag::ExplicitQualified(_)
        )
    }
}

/// A type `t = (d, p, c)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeTriple {
    pub detachable: Detachable,
    pub processor: ProcTag,
    pub class: ClassId,
}

impl TypeTriple {
    pub fn attached(&self) -> bool {
        self.detachable == Detachable::Attached
    }

    pub fn non_separate(class: ClassId) -> TypeTriple {
        TypeTriple {
            detachable: Detachable::Attached,
            processor: ProcTag::NonSeparate,
            class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityDef {
    pub name: String,
    pub ty: TypeTriple,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expression {
    Literal(Literal),
    Entity(String),
    Call {
        target: Box<Expression>,
        feature: FeatureId,
        args: Vec<Expression>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Assign {
        target: String,
        expr: Expression,
    },
    Call {
        target: Expression,
        feature: FeatureId,
        args: Vec<Expression>,
    },
    Create {
        target: String,
        feature: FeatureId,
        args: Vec<Expression>,
    },
    If {
        condition: Expression,
        then_branch: Vec<Instruction>,
        else_branch: Vec<Instruction>,
    },
    Until {
        condition: Expression,
        body: Vec<Instruction>,
    },
}

/// Intrinsic operations backing the built-in classes. They execute as
/// atomic feature applications in the runtime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinOp {
    IntPlus,
    IntMinus,
    IntIsEqual,
    IntIsGreater,
    IntIsLess,
    BoolNegated,
    BoolConjuncted,
    BoolDisjuncted,
    BoolIsEqual,
    CharIsEqual,
    ArrayMake,
    ArrayItem,
    ArrayPut,
    ArrayCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Attribute,
    Function,
    Procedure,
}

#[derive(Debug, Clone)]
pub struct Feature {
    pub name: String,
    pub class: ClassId,
    pub kind: FeatureKind,
    pub is_once: bool,
    pub formals: Vec<EntityDef>,
    pub locals: Vec<EntityDef>,
    /// Result type for functions, declared type for attributes.
    pub result: Option<TypeTriple>,
    pub pre: Option<Expression>,
    pub post: Option<Expression>,
    pub body: Vec<Instruction>,
    pub exported: bool,
    pub builtin: Option<BuiltinOp>,
}

impl Feature {
    pub fn is_routine(&self) -> bool {
        matches!(self.kind, FeatureKind::Function | FeatureKind::Procedure)
    }

    pub fn is_query(&self) -> bool {
        matches!(self.kind, FeatureKind::Function | FeatureKind::Attribute)
    }

    pub fn pre_exists(&self) -> bool {
        self.pre.is_some()
    }

    pub fn post_exists(&self) -> bool {
        self.post.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct ClassType {
    pub name: String,
    pub is_exp: bool,
    pub attributes: Vec<FeatureId>,
    pub functions: Vec<FeatureId>,
    pub procedures: Vec<FeatureId>,
    pub creators: BTreeSet<String>,
    pub invariant: Option<Expression>,
    /// Element type for `ARRAY` derivations; `None` elsewhere.
    pub array_element: Option<TypeTriple>,
}

impl ClassType {
    pub fn is_ref(&self) -> bool {
        !self.is_exp
    }

    pub fn inv_exists(&self) -> bool {
        self.invariant.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct ProgramIR {
    pub classes: Vec<ClassType>,
    pub features: Vec<Feature>,
    pub class_by_name: BTreeMap<String, ClassId>,
    pub root_class: ClassId,
    pub root_procedure: FeatureId,
    pub boolean_class: ClassId,
    pub integer_class: ClassId,
    pub character_class: ClassId,
    pub none_class: ClassId,
    pub processor_class: ClassId,
}

impl ProgramIR {
    pub fn class(&self, id: ClassId) -> &ClassType {
        &self.classes[id.0]
    }

    pub fn feature(&self, id: FeatureId) -> &Feature {
        &self.features[id.0]
    }

    pub fn feature_by_name(&self, class: ClassId, name: &str) -> Option<FeatureId> {
        let c = self.class(class);
        c.attributes
            .iter()
            .chain(c.functions.iter())
            .chain(c.procedures.iter())
            .copied()
            .find(|&f| self.feature(f).name == name)
    }

    /// Attribute names of a class in declaration order.
    pub fn attribute_names(&self, class: ClassId) -> Vec<&str> {
        self.class(class)
            .attributes
            .iter()
            .map(|&f| self.feature(f).name.as_str())
            .collect()
    }

    pub fn attribute_def(&self, class: ClassId, name: &str) -> Option<&Feature> {
        self.class(class)
            .attributes
            .iter()
            .map(|&f| self.feature(f))
            .find(|f| f.name == name)
    }

    pub fn literal_class(&self, literal: Literal) -> ClassId {
        match literal {
            Literal::Bool(_) => self.boolean_class,
            Literal::Int(_) => self.integer_class,
            Literal::Char(_) => self.character_class,
            Literal::Void => self.none_class,
        }
    }

    /// Qualified `CLASS.feature` label, used in diagnostics and dumps.
    pub fn feature_label(&self, id: FeatureId) -> String {
        let f = self.feature(id);
        format!("{}.{}", self.class(f.class).name, f.name)
    }
}

pub struct DisplayExpression<'a> {
    pub ir: &'a ProgramIR,
    pub expr: &'a Expression,
}

impl fmt::Display for DisplayExpression<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expression::Literal(l) => {
                write!(f, "{}", crate::frontend::ast::PrintLiteral(*l))
            }
            Expression::Entity(n) => write!(f, "{n}"),
            Expression::Call {
                target,
                feature,
                args,
            } => {
                write!(
                    f,
                    "{}.{}",
                    DisplayExpression {
                        ir: self.ir,
                        expr: target
                    },
                    self.ir.feature(*feature).name
                )?;
                write_args(f, self.ir, args)
            }
        }
    }
}

pub struct DisplayInstruction<'a> {
    pub ir: &'a ProgramIR,
    pub instr: &'a Instruction,
}

impl fmt::Display for DisplayInstruction<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ir = self.ir;
        match self.instr {
            Instruction::Assign { target, expr } => {
                write!(f, "{target} := {}", DisplayExpression { ir, expr })
            }
            Instruction::Call {
                target,
                feature,
                args,
            } => {
                write!(
                    f,
                    "{}.{}",
                    DisplayExpression { ir, expr: target },
                    ir.feature(*feature).name
                )?;
                write_args(f, ir, args)
            }
            Instruction::Create {
                target,
                feature,
                args,
            } => {
                write!(f, "create {target}.{}", ir.feature(*feature).name)?;
                write_args(f, ir, args)
            }
            Instruction::If { condition, .. } => {
                write!(
                    f,
                    "if {} then ... else ... end",
                    DisplayExpression {
                        ir,
                        expr: condition
                    }
                )
            }
            Instruction::Until { condition, .. } => {
                write!(
                    f,
                    "until {} loop ... end",
                    DisplayExpression {
                        ir,
                        expr: condition
                    }
                )
            }
        }
    }
}

fn write_args(f: &mut fmt::Formatter<'_>, ir: &ProgramIR, args: &[Expression]) -> fmt::Result {
    if !args.is_empty() {
        let rendered: Vec<String> = args
            .iter()
            .map(|a| DisplayExpression { ir, expr: a }.to_string())
            .collect();
        write!(f, "({})", rendered.join(", "))?;
    }
    Ok(())
}
