//! The typing environment: the three judgments the semantics consumes.
//!
//! `type_of` answers the static type of an expression, `is_controlled`
//! decides whether an expression is guaranteed to denote an object whose
//! handler's queue is locked in the current context, and
//! `controlling_entity` names the attached formal (or Current) that makes
//! it so. Programs are fully annotated, so all three are plain lookups
//! over the lowered IR.

use thiserror::Error;

use crate::frontend::ir::{
    ClassId, Detachable, Expression, FeatureId, FeatureKind, Literal, ProcTag, ProgramIR,
    TypeTriple,
};
use crate::frontend::lower::combine_result_type;

/// Where an expression occurs: inside a routine, or inside a class
/// invariant (which has no formals).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExprCtx {
    Feature(FeatureId),
    Invariant(ClassId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TypeError {
    #[error("unknown entity '{0}' in this context")]
    UnknownEntity(String),
    #[error("'{feature}' is not a query of class '{class}'")]
    NotAQuery { class: String, feature: String },
    #[error("expression is not controlled")]
    NotControlled,
}

/// Read-only view over a lowered program answering the typing judgments.
pub struct TypingEnv<'a> {
    pub ir: &'a ProgramIR,
}

impl<'a> TypingEnv<'a> {
    pub fn new(ir: &'a ProgramIR) -> Self {
        TypingEnv { ir }
    }

    fn ctx_class(&self, ctx: ExprCtx) -> ClassId {
        match ctx {
            ExprCtx::Feature(f) => self.ir.feature(f).class,
            ExprCtx::Invariant(c) => c,
        }
    }

    /// Declared type of an entity name in the given context. Covers
    /// Current, Result, formals, locals, and attributes of the context
    /// class (the latter for assignment and creation targets).
    pub fn entity_type(&self, name: &str, ctx: ExprCtx) -> Result<TypeTriple, TypeError> {
        if name == "Current" {
            return Ok(TypeTriple::non_separate(self.ctx_class(ctx)));
        }
        if let ExprCtx::Feature(fid) = ctx {
            let f = self.ir.feature(fid);
            if name == "Result" {
                if f.kind == FeatureKind::Function {
                    return Ok(f.result.clone().expect("function result type"));
                }
                return Err(TypeError::UnknownEntity(name.to_string()));
            }
            if let Some(d) = f
                .formals
                .iter()
                .chain(f.locals.iter())
                .find(|d| d.name == name)
            {
                return Ok(d.ty.clone());
            }
        }
        if let Some(attr) = self.ir.attribute_def(self.ctx_class(ctx), name) {
            return Ok(attr.result.clone().expect("attribute type"));
        }
        Err(TypeError::UnknownEntity(name.to_string()))
    }

    /// The type of expression `e` in context `ctx`.
    pub fn type_of(&self, e: &Expression, ctx: ExprCtx) -> Result<TypeTriple, TypeError> {
        match e {
            Expression::Literal(Literal::Void) => Ok(TypeTriple {
                detachable: Detachable::Detachable,
                processor: ProcTag::NoProcessor,
                class: self.ir.none_class,
            }),
            Expression::Literal(l) => Ok(TypeTriple::non_separate(self.ir.literal_class(*l))),
            Expression::Entity(name) => self.entity_type(name, ctx),
            Expression::Call {
                target, feature, ..
            } => {
                let t0 = self.type_of(target, ctx)?;
                let f = self.ir.feature(*feature);
                if !f.is_query() {
                    return Err(TypeError::NotAQuery {
                        class: self.ir.class(t0.class).name.clone(),
                        feature: f.name.clone(),
                    });
                }
                let declared = f.result.clone().expect("query result type");
                Ok(combine_result_type(&t0, declared))
            }
        }
    }

    /// An expression is controlled iff its type is attached and it is
    /// non-separate, or some attached formal of the context routine
    /// guarantees the same handler.
    pub fn is_controlled(&self, e: &Expression, ctx: ExprCtx) -> bool {
        self.controlling_entity(e, ctx).is_ok()
    }

    /// The controlling entity for a controlled expression: Current for
    /// non-separate expressions, the matching attached formal otherwise.
    pub fn controlling_entity(&self, e: &Expression, ctx: ExprCtx) -> Result<String, TypeError> {
        let t = self.type_of(e, ctx).map_err(|_| TypeError::NotControlled)?;
        if !t.attached() {
            return Err(TypeError::NotControlled);
        }
        if t.processor == ProcTag::NonSeparate {
            return Ok("Current".to_string());
        }
        let ExprCtx::Feature(fid) = ctx else {
            return Err(TypeError::NotControlled);
        };
        let f = self.ir.feature(fid);
        let attached_formal =
            |name: &str| f.formals.iter().find(|d| d.name == name && d.ty.attached());
        // The expression is itself an attached formal argument.
        if let Expression::Entity(name) = e {
            if attached_formal(name).is_some() {
                return Ok(name.clone());
            }
        }
        match &t.processor {
            // Qualified specification `<w.handler>` with w an attached formal.
            ProcTag::ExplicitQualified(w) => {
                if attached_formal(w).is_some() {
                    return Ok(w.clone());
                }
            }
            // Unqualified specification `<p>` shared with an attached formal.
            ProcTag::ExplicitUnqualified(p) => {
                if let Some(formal) = f.formals.iter().find(|d| {
                    d.ty.attached() && d.ty.processor == ProcTag::ExplicitUnqualified(p.clone())
                }) {
                    return Ok(formal.name.clone());
                }
            }
            _ => {}
        }
        Err(TypeError::NotControlled)
    }
}

/// Target subexpressions of an expression: for `e0.f(e1, ..., en)` the set
/// `{e0}` plus the targets of every subexpression.
pub fn targets(e: &Expression) -> Vec<&Expression> {
    let mut out = Vec::new();
    collect_targets(e, &mut out);
    out
}

fn collect_targets<'e>(e: &'e Expression, out: &mut Vec<&'e Expression>) {
    if let Expression::Call { target, args, .. } = e {
        out.push(target);
        collect_targets(target, out);
        for a in args {
            collect_targets(a, out);
        }
    }
}

/// Argument occurrences of an expression: triples of (argument expression,
/// called feature, 1-based position).
pub fn args_of(e: &Expression) -> Vec<(&Expression, FeatureId, usize)> {
    let mut out = Vec::new();
    collect_args(e, &mut out);
    out
}

fn collect_args<'e>(e: &'e Expression, out: &mut Vec<(&'e Expression, FeatureId, usize)>) {
    if let Expression::Call {
        target,
        feature,
        args,
    } = e
    {
        collect_args(target, out);
        for (i, a) in args.iter().enumerate() {
            out.push((a, *feature, i + 1));
            collect_args(a, out);
        }
    }
}
