//! Lowering from the syntax tree to the intermediate representation.
//!
//! Lowering resolves every name, monomorphizes generic classes per distinct
//! instantiation, injects the built-in classes, and enforces the validity
//! rules of the subset: no unqualified calls (including bare attribute reads
//! in expressions), query/command positions respected, root procedure a
//! creation procedure with no formals and no precondition, processor
//! attributes typed `(!, •, PROCESSOR)`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::ast::{self, DetachableTag, FeatureDecl, ProcessorTag, SourceProgram, TypeAnnotation};
use super::ir::*;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error("unknown class '{0}'")]
    UnknownClass(String),
    #[error("duplicate class name '{0}'")]
    DuplicateClass(String),
    #[error("class '{class}': duplicate feature name '{feature}'")]
    DuplicateFeature { class: String, feature: String },
    #[error("class '{class}': name '{name}' collides between attributes, formals or locals")]
    NameCollision { class: String, name: String },
    #[error("class '{class}' expects {expected} generic parameters, got {got}")]
    GenericArity {
        class: String,
        expected: usize,
        got: usize,
    },
    #[error("class '{class}' has no feature '{feature}'")]
    UnknownFeature { class: String, feature: String },
    #[error("feature '{feature}' of class '{class}' expects {expected} arguments, got {got}")]
    ArityMismatch {
        class: String,
        feature: String,
        expected: usize,
        got: usize,
    },
    #[error("unknown entity '{0}'")]
    UnknownEntity(String),
    #[error("unqualified call to '{0}': attribute reads in expressions must go through Current")]
    UnqualifiedCall(String),
    #[error("'{feature}' of class '{class}' is not a query and cannot appear in an expression")]
    NotAQuery { class: String, feature: String },
    #[error("'{feature}' of class '{class}' is not a procedure and cannot be a command call")]
    NotAProcedure { class: String, feature: String },
    #[error("'{feature}' is not a creation procedure of class '{class}'")]
    NotACreationProcedure { class: String, feature: String },
    #[error("root procedure '{0}' must have no formal arguments")]
    RootHasFormals(String),
    #[error("root procedure '{0}' must have no precondition")]
    RootHasPrecondition(String),
    #[error("root class '{0}' must not be generic")]
    RootClassGeneric(String),
    #[error("processor attribute '{0}' must have the type (!, •, PROCESSOR)")]
    BadProcessorAttribute(String),
    #[error("'Result' used outside a function body")]
    ResultOutsideFunction,
    #[error("'{0}' cannot be assigned to")]
    NotWritable(String),
    #[error("call on void-typed expression")]
    CallOnVoid,
    #[error(
        "a non-exported feature '{feature}' of '{class}' can only be called on Current from its own class"
    )]
    ExportViolation { class: String, feature: String },
}

#[derive(Clone, Copy)]
enum BuiltinSig {
    IntIntToInt,
    IntIntToBool,
    BoolToBool,
    BoolBoolToBool,
    CharCharToBool,
}

const INTEGER_OPS: &[(&str, BuiltinOp, BuiltinSig)] = &[
    ("plus", BuiltinOp::IntPlus, BuiltinSig::IntIntToInt),
    ("minus", BuiltinOp::IntMinus, BuiltinSig::IntIntToInt),
    ("is_equal", BuiltinOp::IntIsEqual, BuiltinSig::IntIntToBool),
    (
        "is_greater",
        BuiltinOp::IntIsGreater,
        BuiltinSig::IntIntToBool,
    ),
    ("is_less", BuiltinOp::IntIsLess, BuiltinSig::IntIntToBool),
];

const BOOLEAN_OPS: &[(&str, BuiltinOp, BuiltinSig)] = &[
    ("negated", BuiltinOp::BoolNegated, BuiltinSig::BoolToBool),
    (
        "conjuncted",
        BuiltinOp::BoolConjuncted,
        BuiltinSig::BoolBoolToBool,
    ),
    (
        "disjuncted",
        BuiltinOp::BoolDisjuncted,
        BuiltinSig::BoolBoolToBool,
    ),
    (
        "is_equal",
        BuiltinOp::BoolIsEqual,
        BuiltinSig::BoolBoolToBool,
    ),
];

const CHARACTER_OPS: &[(&str, BuiltinOp, BuiltinSig)] = &[(
    "is_equal",
    BuiltinOp::CharIsEqual,
    BuiltinSig::CharCharToBool,
)];

pub fn lower(program: &SourceProgram) -> Result<ProgramIR, LowerError> {
    Lowerer::new(program)?.run()
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct DerivationKey {
    template: String,
    actuals: Vec<String>,
}

struct PendingFeature<'a> {
    feature: FeatureId,
    routine: &'a ast::RoutineDecl,
}

struct PendingInvariant<'a> {
    class: ClassId,
    expr: &'a ast::Expr,
}

#[derive(Clone, Copy)]
struct Scope {
    class: ClassId,
    feature: Option<FeatureId>,
}

struct Lowerer<'a> {
    program: &'a SourceProgram,
    templates: BTreeMap<String, &'a ast::ClassDecl>,
    classes: Vec<ClassType>,
    features: Vec<Feature>,
    class_by_name: BTreeMap<String, ClassId>,
    derivations: BTreeMap<DerivationKey, ClassId>,
    pending: Vec<PendingFeature<'a>>,
    pending_invariants: Vec<PendingInvariant<'a>>,
    boolean_class: ClassId,
    integer_class: ClassId,
    character_class: ClassId,
    none_class: ClassId,
    processor_class: ClassId,
}

impl<'a> Lowerer<'a> {
    fn new(program: &'a SourceProgram) -> Result<Self, LowerError> {
        let mut templates = BTreeMap::new();
        for class in &program.classes {
            if templates.insert(class.name.clone(), class).is_some() {
                return Err(LowerError::DuplicateClass(class.name.clone()));
            }
        }
        Ok(Lowerer {
            program,
            templates,
            classes: Vec::new(),
            features: Vec::new(),
            class_by_name: BTreeMap::new(),
            derivations: BTreeMap::new(),
            pending: Vec::new(),
            pending_invariants: Vec::new(),
            boolean_class: ClassId(0),
            integer_class: ClassId(0),
            character_class: ClassId(0),
            none_class: ClassId(0),
            processor_class: ClassId(0),
        })
    }

    fn run(mut self) -> Result<ProgramIR, LowerError> {
        self.install_builtins();

        for class in &self.program.classes {
            if class.formal_generics.is_empty() {
                self.instantiate(&class.name, &[])?;
            }
        }

        let root_name = self.program.root.class_name.clone();
        if self
            .templates
            .get(&root_name)
            .is_some_and(|c| !c.formal_generics.is_empty())
        {
            return Err(LowerError::RootClassGeneric(root_name));
        }
        let root_class = *self
            .class_by_name
            .get(&root_name)
            .ok_or_else(|| LowerError::UnknownClass(root_name.clone()))?;
        let root_procedure = self
            .feature_id_by_name(root_class, &self.program.root.feature_name)
            .ok_or_else(|| LowerError::UnknownFeature {
                class: root_name.clone(),
                feature: self.program.root.feature_name.clone(),
            })?;
        {
            let f = &self.features[root_procedure.0];
            if f.kind != FeatureKind::Procedure
                || !self.classes[root_class.0].creators.contains(&f.name)
            {
                return Err(LowerError::NotACreationProcedure {
                    class: root_name.clone(),
                    feature: f.name.clone(),
                });
            }
            if !f.formals.is_empty() {
                return Err(LowerError::RootHasFormals(f.name.clone()));
            }
        }

        // Phase two: bodies and assertions, with the class table complete.
        let pending = std::mem::take(&mut self.pending);
        for item in pending {
            let scope = self.feature_scope(item.feature);
            let pre = item
                .routine
                .precondition
                .as_ref()
                .map(|e| self.lower_expr(e, scope))
                .transpose()?;
            let post = item
                .routine
                .postcondition
                .as_ref()
                .map(|e| self.lower_expr(e, scope))
                .transpose()?;
            let body = self.lower_instructions(&item.routine.body, item.feature)?;
            let f = &mut self.features[item.feature.0];
            f.pre = pre;
            f.post = post;
            f.body = body;
        }
        let pending_invariants = std::mem::take(&mut self.pending_invariants);
        for inv in pending_invariants {
            let lowered = self.lower_expr(
                inv.expr,
                Scope {
                    class: inv.class,
                    feature: None,
                },
            )?;
            self.classes[inv.class.0].invariant = Some(lowered);
        }

        if self.features[root_procedure.0].pre.is_some() {
            return Err(LowerError::RootHasPrecondition(
                self.features[root_procedure.0].name.clone(),
            ));
        }

        Ok(ProgramIR {
            classes: self.classes,
            features: self.features,
            class_by_name: self.class_by_name,
            root_class,
            root_procedure,
            boolean_class: self.boolean_class,
            integer_class: self.integer_class,
            character_class: self.character_class,
            none_class: self.none_class,
            processor_class: self.processor_class,
        })
    }

    fn feature_scope(&self, feature: FeatureId) -> Scope {
        Scope {
            class: self.features[feature.0].class,
            feature: Some(feature),
        }
    }

    // --- built-ins ----------------------------------------------------------

    fn install_builtins(&mut self) {
        self.boolean_class = self.install_basic_class("BOOLEAN", BOOLEAN_OPS);
        self.integer_class = self.install_basic_class("INTEGER", INTEGER_OPS);
        self.character_class = self.install_basic_class("CHARACTER", CHARACTER_OPS);
        self.none_class = self.push_class(ClassType {
            name: "NONE".to_string(),
            is_exp: false,
            attributes: Vec::new(),
            functions: Vec::new(),
            procedures: Vec::new(),
            creators: BTreeSet::new(),
            invariant: None,
            array_element: None,
        });
        self.processor_class = self.push_class(ClassType {
            name: "PROCESSOR".to_string(),
            is_exp: false,
            attributes: Vec::new(),
            functions: Vec::new(),
            procedures: Vec::new(),
            creators: BTreeSet::new(),
            invariant: None,
            array_element: None,
        });
    }

    fn install_basic_class(
        &mut self,
        name: &str,
        ops: &[(&str, BuiltinOp, BuiltinSig)],
    ) -> ClassId {
        let id = self.push_class(ClassType {
            name: name.to_string(),
            is_exp: true,
            attributes: Vec::new(),
            functions: Vec::new(),
            procedures: Vec::new(),
            creators: BTreeSet::new(),
            invariant: None,
            array_element: None,
        });
        let item = self.push_feature(Feature {
            name: "item".to_string(),
            class: id,
            kind: FeatureKind::Attribute,
            is_once: false,
            formals: Vec::new(),
            locals: Vec::new(),
            result: Some(TypeTriple::non_separate(id)),
            pre: None,
            post: None,
            body: Vec::new(),
            exported: true,
            builtin: None,
        });
        self.classes[id.0].attributes.push(item);
        for (op_name, op, sig) in ops {
            // BOOLEAN is installed first and always has ClassId(0).
            let boolean = ClassId(0);
            let (formals, result) = match sig {
                BuiltinSig::IntIntToInt => (
                    vec![EntityDef {
                        name: "other".to_string(),
                        ty: TypeTriple::non_separate(id),
                    }],
                    TypeTriple::non_separate(id),
                ),
                BuiltinSig::IntIntToBool
                | BuiltinSig::CharCharToBool
                | BuiltinSig::BoolBoolToBool => (
                    vec![EntityDef {
                        name: "other".to_string(),
                        ty: TypeTriple::non_separate(id),
                    }],
                    TypeTriple::non_separate(boolean),
                ),
                BuiltinSig::BoolToBool => (Vec::new(), TypeTriple::non_separate(boolean)),
            };
            let f = self.push_feature(Feature {
                name: op_name.to_string(),
                class: id,
                kind: FeatureKind::Function,
                is_once: false,
                formals,
                locals: Vec::new(),
                result: Some(result),
                pre: None,
                post: None,
                body: Vec::new(),
                exported: true,
                builtin: Some(*op),
            });
            self.classes[id.0].functions.push(f);
        }
        id
    }

    fn instantiate_array(&mut self, element: TypeTriple) -> ClassId {
        let name = format!("ARRAY[{}]", self.classes[element.class.0].name);
        if let Some(&id) = self.class_by_name.get(&name) {
            return id;
        }
        let id = self.push_class(ClassType {
            name,
            is_exp: false,
            attributes: Vec::new(),
            functions: Vec::new(),
            procedures: Vec::new(),
            creators: BTreeSet::from(["make".to_string()]),
            invariant: None,
            array_element: Some(element.clone()),
        });
        let integer = TypeTriple::non_separate(self.integer_class);
        let make = self.push_feature(Feature {
            name: "make".to_string(),
            class: id,
            kind: FeatureKind::Procedure,
            is_once: false,
            formals: vec![EntityDef {
                name: "n".to_string(),
                ty: integer.clone(),
            }],
            locals: Vec::new(),
            result: None,
            pre: None,
            post: None,
            body: Vec::new(),
            exported: true,
            builtin: Some(BuiltinOp::ArrayMake),
        });
        let item = self.push_feature(Feature {
            name: "item".to_string(),
            class: id,
            kind: FeatureKind::Function,
            is_once: false,
            formals: vec![EntityDef {
                name: "i".to_string(),
                ty: integer.clone(),
            }],
            locals: Vec::new(),
            result: Some(element.clone()),
            pre: None,
            post: None,
            body: Vec::new(),
            exported: true,
            builtin: Some(BuiltinOp::ArrayItem),
        });
        let put = self.push_feature(Feature {
            name: "put".to_string(),
            class: id,
            kind: FeatureKind::Procedure,
            is_once: false,
            formals: vec![
                EntityDef {
                    name: "v".to_string(),
                    ty: element,
                },
                EntityDef {
                    name: "i".to_string(),
                    ty: integer.clone(),
                },
            ],
            locals: Vec::new(),
            result: None,
            pre: None,
            post: None,
            body: Vec::new(),
            exported: true,
            builtin: Some(BuiltinOp::ArrayPut),
        });
        let count = self.push_feature(Feature {
            name: "count".to_string(),
            class: id,
            kind: FeatureKind::Function,
            is_once: false,
            formals: Vec::new(),
            locals: Vec::new(),
            result: Some(integer),
            pre: None,
            post: None,
            body: Vec::new(),
            exported: true,
            builtin: Some(BuiltinOp::ArrayCount),
        });
        let class = &mut self.classes[id.0];
        class.functions.extend([item, count]);
        class.procedures.extend([make, put]);
        id
    }

    fn push_class(&mut self, class: ClassType) -> ClassId {
        let id = ClassId(self.classes.len());
        self.class_by_name.insert(class.name.clone(), id);
        self.classes.push(class);
        id
    }

    fn push_feature(&mut self, feature: Feature) -> FeatureId {
        let id = FeatureId(self.features.len());
        self.features.push(feature);
        id
    }

    fn feature_id_by_name(&self, class: ClassId, name: &str) -> Option<FeatureId> {
        let c = &self.classes[class.0];
        c.attributes
            .iter()
            .chain(c.functions.iter())
            .chain(c.procedures.iter())
            .copied()
            .find(|&f| self.features[f.0].name == name)
    }

    // --- instantiation ------------------------------------------------------

    fn instantiate(&mut self, name: &str, actuals: &[TypeTriple]) -> Result<ClassId, LowerError> {
        if name == "ARRAY" {
            if actuals.len() != 1 {
                return Err(LowerError::GenericArity {
                    class: "ARRAY".to_string(),
                    expected: 1,
                    got: actuals.len(),
                });
            }
            return Ok(self.instantiate_array(actuals[0].clone()));
        }
        let key = DerivationKey {
            template: name.to_string(),
            actuals: actuals
                .iter()
                .map(|t| self.classes[t.class.0].name.clone())
                .collect(),
        };
        if let Some(&id) = self.derivations.get(&key) {
            return Ok(id);
        }
        let Some(&decl) = self.templates.get(name) else {
            return Err(LowerError::UnknownClass(name.to_string()));
        };
        if decl.formal_generics.len() != actuals.len() {
            return Err(LowerError::GenericArity {
                class: name.to_string(),
                expected: decl.formal_generics.len(),
                got: actuals.len(),
            });
        }
        let mangled = if actuals.is_empty() {
            name.to_string()
        } else {
            format!("{name}[{}]", key.actuals.join(","))
        };
        if self.class_by_name.contains_key(&mangled) {
            return Err(LowerError::DuplicateClass(mangled));
        }
        let id = self.push_class(ClassType {
            name: mangled.clone(),
            is_exp: decl.is_expanded,
            attributes: Vec::new(),
            functions: Vec::new(),
            procedures: Vec::new(),
            creators: decl.creators.iter().cloned().collect(),
            invariant: None,
            array_element: None,
        });
        self.derivations.insert(key, id);
        if let Some(inv) = &decl.invariant {
            self.pending_invariants.push(PendingInvariant {
                class: id,
                expr: inv,
            });
        }

        let subst: BTreeMap<String, TypeTriple> = decl
            .formal_generics
            .iter()
            .cloned()
            .zip(actuals.iter().cloned())
            .collect();

        let mut seen: BTreeSet<String> = BTreeSet::new();
        for block in &decl.feature_blocks {
            let exported = block.clients.is_none();
            for feature in &block.features {
                match feature {
                    FeatureDecl::Attribute(attr) => {
                        if !seen.insert(attr.name.clone()) {
                            return Err(LowerError::DuplicateFeature {
                                class: mangled.clone(),
                                feature: attr.name.clone(),
                            });
                        }
                        let ty = self.resolve_type(&attr.ty, &subst, id)?;
                        let f = self.push_feature(Feature {
                            name: attr.name.clone(),
                            class: id,
                            kind: FeatureKind::Attribute,
                            is_once: false,
                            formals: Vec::new(),
                            locals: Vec::new(),
                            result: Some(ty),
                            pre: None,
                            post: None,
                            body: Vec::new(),
                            exported,
                            builtin: None,
                        });
                        self.classes[id.0].attributes.push(f);
                    }
                    FeatureDecl::Routine(routine) => {
                        if !seen.insert(routine.name.clone()) {
                            return Err(LowerError::DuplicateFeature {
                                class: mangled.clone(),
                                feature: routine.name.clone(),
                            });
                        }
                        let formals = routine
                            .formals
                            .iter()
                            .map(|d| {
                                Ok(EntityDef {
                                    name: d.name.clone(),
                                    ty: self.resolve_type(&d.ty, &subst, id)?,
                                })
                            })
                            .collect::<Result<Vec<_>, LowerError>>()?;
                        let locals = routine
                            .locals
                            .iter()
                            .map(|d| {
                                Ok(EntityDef {
                                    name: d.name.clone(),
                                    ty: self.resolve_type(&d.ty, &subst, id)?,
                                })
                            })
                            .collect::<Result<Vec<_>, LowerError>>()?;
                        let result = routine
                            .result_type
                            .as_ref()
                            .map(|t| self.resolve_type(t, &subst, id))
                            .transpose()?;
                        let kind = if result.is_some() {
                            FeatureKind::Function
                        } else {
                            FeatureKind::Procedure
                        };
                        let f = self.push_feature(Feature {
                            name: routine.name.clone(),
                            class: id,
                            kind,
                            is_once: routine.is_once,
                            formals,
                            locals,
                            result,
                            pre: None,
                            post: None,
                            body: Vec::new(),
                            exported,
                            builtin: None,
                        });
                        match kind {
                            FeatureKind::Function => self.classes[id.0].functions.push(f),
                            FeatureKind::Procedure => self.classes[id.0].procedures.push(f),
                            FeatureKind::Attribute => unreachable!(),
                        }
                        self.pending.push(PendingFeature {
                            feature: f,
                            routine,
                        });
                    }
                }
            }
        }

        // Attribute names and formal/local names never collide within any
        // feature's scope.
        let attr_names: BTreeSet<String> = self.classes[id.0]
            .attributes
            .iter()
            .map(|&f| self.features[f.0].name.clone())
            .collect();
        let routine_ids: Vec<FeatureId> = self.classes[id.0]
            .functions
            .iter()
            .chain(self.classes[id.0].procedures.iter())
            .copied()
            .collect();
        for fid in routine_ids {
            let f = &self.features[fid.0];
            let mut names: BTreeSet<String> = BTreeSet::new();
            for d in f.formals.iter().chain(f.locals.iter()) {
                if attr_names.contains(&d.name) || !names.insert(d.name.clone()) {
                    return Err(LowerError::NameCollision {
                        class: mangled.clone(),
                        name: d.name.clone(),
                    });
                }
            }
        }
        Ok(id)
    }

    fn resolve_type(
        &mut self,
        annotation: &TypeAnnotation,
        subst: &BTreeMap<String, TypeTriple>,
        declaring_class: ClassId,
    ) -> Result<TypeTriple, LowerError> {
        if let Some(actual) = subst.get(&annotation.class_name) {
            // A formal generic parameter: the actual's class, with the
            // annotation's explicit tags layered on top.
            let detachable = if annotation.detachable == DetachableTag::Detachable {
                Detachable::Detachable
            } else {
                actual.detachable
            };
            let processor = match &annotation.processor {
                ProcessorTag::NonSeparate => actual.processor.clone(),
                other => lower_processor_tag(other),
            };
            return Ok(TypeTriple {
                detachable,
                processor,
                class: actual.class,
            });
        }
        let actuals = annotation
            .actual_generics
            .iter()
            .map(|g| self.resolve_type(g, subst, declaring_class))
            .collect::<Result<Vec<_>, _>>()?;
        let class = if actuals.is_empty() {
            match self.class_by_name.get(&annotation.class_name) {
                Some(&existing) => existing,
                None => self.instantiate(&annotation.class_name, &[])?,
            }
        } else {
            self.instantiate(&annotation.class_name, &actuals)?
        };
        let triple = TypeTriple {
            detachable: match annotation.detachable {
                DetachableTag::Attached => Detachable::Attached,
                DetachableTag::Detachable => Detachable::Detachable,
            },
            processor: lower_processor_tag(&annotation.processor),
            class,
        };
        if let ProcTag::ExplicitUnqualified(attr) = &triple.processor {
            let ok = self
                .feature_id_by_name(declaring_class, attr)
                .map(|f| &self.features[f.0])
                .is_some_and(|f| {
                    f.kind == FeatureKind::Attribute
                        && f.result.as_ref().is_some_and(|t| {
                            t.detachable == Detachable::Attached
                                && t.processor == ProcTag::NonSeparate
                                && t.class == self.processor_class
                        })
                });
            if !ok {
                return Err(LowerError::BadProcessorAttribute(attr.clone()));
            }
        }
        Ok(triple)
    }

    // --- body lowering ------------------------------------------------------

    fn lower_instructions(
        &self,
        instructions: &[ast::Instruction],
        feature: FeatureId,
    ) -> Result<Vec<Instruction>, LowerError> {
        instructions
            .iter()
            .map(|i| self.lower_instruction(i, feature))
            .collect()
    }

    fn lower_instruction(
        &self,
        instruction: &ast::Instruction,
        feature: FeatureId,
    ) -> Result<Instruction, LowerError> {
        let scope = self.feature_scope(feature);
        match instruction {
            ast::Instruction::Assign { target, expr } => {
                let lowered = self.lower_expr(expr, scope)?;
                self.writable_entity_type(target, scope)?;
                Ok(Instruction::Assign {
                    target: target.clone(),
                    expr: lowered,
                })
            }
            ast::Instruction::Call {
                target,
                feature: fname,
                args,
            } => {
                let lowered_target = self.lower_expr(target, scope)?;
                let t0 = self.expr_type(&lowered_target, scope)?;
                let fid = self.resolve_call(t0.class, fname, args.len())?;
                let f = &self.features[fid.0];
                if f.kind != FeatureKind::Procedure {
                    return Err(LowerError::NotAProcedure {
                        class: self.classes[t0.class.0].name.clone(),
                        feature: fname.clone(),
                    });
                }
                self.check_export(fid, &lowered_target, scope)?;
                let lowered_args = args
                    .iter()
                    .map(|a| self.lower_expr(a, scope))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Instruction::Call {
                    target: lowered_target,
                    feature: fid,
                    args: lowered_args,
                })
            }
            ast::Instruction::Create {
                target,
                feature: fname,
                args,
            } => {
                let t = self.writable_entity_type(target, scope)?;
                let class = &self.classes[t.class.0];
                let fid = self.resolve_call(t.class, fname, args.len())?;
                let f = &self.features[fid.0];
                if f.kind != FeatureKind::Procedure || !class.creators.contains(fname) {
                    return Err(LowerError::NotACreationProcedure {
                        class: class.name.clone(),
                        feature: fname.clone(),
                    });
                }
                let lowered_args = args
                    .iter()
                    .map(|a| self.lower_expr(a, scope))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Instruction::Create {
                    target: target.clone(),
                    feature: fid,
                    args: lowered_args,
                })
            }
            ast::Instruction::If {
                condition,
                then_branch,
                else_branch,
            } => Ok(Instruction::If {
                condition: self.lower_expr(condition, scope)?,
                then_branch: self.lower_instructions(then_branch, feature)?,
                else_branch: self.lower_instructions(else_branch, feature)?,
            }),
            ast::Instruction::Until { condition, body } => Ok(Instruction::Until {
                condition: self.lower_expr(condition, scope)?,
                body: self.lower_instructions(body, feature)?,
            }),
        }
    }

    fn lower_expr(&self, expr: &ast::Expr, scope: Scope) -> Result<Expression, LowerError> {
        match expr {
            ast::Expr::Literal(l) => Ok(Expression::Literal(*l)),
            ast::Expr::Entity(name) => {
                if self.entity_in_scope(name, scope) {
                    Ok(Expression::Entity(name.clone()))
                } else if self.feature_id_by_name(scope.class, name).is_some() {
                    Err(LowerError::UnqualifiedCall(name.clone()))
                } else {
                    Err(LowerError::UnknownEntity(name.clone()))
                }
            }
            ast::Expr::Call {
                target,
                feature: fname,
                args,
            } => {
                let lowered_target = self.lower_expr(target, scope)?;
                let t0 = self.expr_type(&lowered_target, scope)?;
                let fid = self.resolve_call(t0.class, fname, args.len())?;
                let f = &self.features[fid.0];
                if !matches!(f.kind, FeatureKind::Function | FeatureKind::Attribute) {
                    return Err(LowerError::NotAQuery {
                        class: self.classes[t0.class.0].name.clone(),
                        feature: fname.clone(),
                    });
                }
                self.check_export(fid, &lowered_target, scope)?;
                let lowered_args = args
                    .iter()
                    .map(|a| self.lower_expr(a, scope))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Expression::Call {
                    target: Box::new(lowered_target),
                    feature: fid,
                    args: lowered_args,
                })
            }
        }
    }

    fn resolve_call(
        &self,
        class: ClassId,
        fname: &str,
        arg_count: usize,
    ) -> Result<FeatureId, LowerError> {
        if class == self.none_class {
            return Err(LowerError::CallOnVoid);
        }
        let fid =
            self.feature_id_by_name(class, fname)
                .ok_or_else(|| LowerError::UnknownFeature {
                    class: self.classes[class.0].name.clone(),
                    feature: fname.to_string(),
                })?;
        let f = &self.features[fid.0];
        if f.formals.len() != arg_count {
            return Err(LowerError::ArityMismatch {
                class: self.classes[class.0].name.clone(),
                feature: fname.to_string(),
                expected: f.formals.len(),
                got: arg_count,
            });
        }
        Ok(fid)
    }

    fn check_export(
        &self,
        fid: FeatureId,
        target: &Expression,
        scope: Scope,
    ) -> Result<(), LowerError> {
        let f = &self.features[fid.0];
        if f.exported {
            return Ok(());
        }
        let on_current = matches!(target, Expression::Entity(n) if n == "Current");
        if on_current && scope.class == f.class {
            Ok(())
        } else {
            Err(LowerError::ExportViolation {
                class: self.classes[f.class.0].name.clone(),
                feature: f.name.clone(),
            })
        }
    }

    fn entity_in_scope(&self, name: &str, scope: Scope) -> bool {
        if name == "Current" {
            return true;
        }
        let Some(feature) = scope.feature else {
            return false;
        };
        let f = &self.features[feature.0];
        if name == "Result" {
            return f.kind == FeatureKind::Function;
        }
        f.formals
            .iter()
            .chain(f.locals.iter())
            .any(|d| d.name == name)
    }

    fn writable_entity_type(&self, name: &str, scope: Scope) -> Result<TypeTriple, LowerError> {
        if name == "Current" {
            return Err(LowerError::NotWritable(name.to_string()));
        }
        if let Some(feature) = scope.feature {
            let f = &self.features[feature.0];
            if name == "Result" {
                return match (&f.kind, &f.result) {
                    (FeatureKind::Function, Some(t)) => Ok(t.clone()),
                    _ => Err(LowerError::ResultOutsideFunction),
                };
            }
            if let Some(d) = f.locals.iter().find(|d| d.name == name) {
                return Ok(d.ty.clone());
            }
            if f.formals.iter().any(|d| d.name == name) {
                return Err(LowerError::NotWritable(name.to_string()));
            }
        }
        if let Some(attr) = self
            .feature_id_by_name(scope.class, name)
            .map(|f| &self.features[f.0])
            .filter(|f| f.kind == FeatureKind::Attribute)
        {
            return Ok(attr.result.clone().expect("attribute type"));
        }
        Err(LowerError::UnknownEntity(name.to_string()))
    }

    fn expr_type(&self, expr: &Expression, scope: Scope) -> Result<TypeTriple, LowerError> {
        match expr {
            Expression::Literal(Literal::Bool(_)) => {
                Ok(TypeTriple::non_separate(self.boolean_class))
            }
            Expression::Literal(Literal::Int(_)) => {
                Ok(TypeTriple::non_separate(self.integer_class))
            }
            Expression::Literal(Literal::Char(_)) => {
                Ok(TypeTriple::non_separate(self.character_class))
            }
            Expression::Literal(Literal::Void) => Ok(TypeTriple {
                detachable: Detachable::Detachable,
                processor: ProcTag::NoProcessor,
                class: self.none_class,
            }),
            Expression::Entity(name) => {
                if name == "Current" {
                    return Ok(TypeTriple::non_separate(scope.class));
                }
                let Some(feature) = scope.feature else {
                    return Err(LowerError::UnknownEntity(name.clone()));
                };
                let f = &self.features[feature.0];
                if name == "Result" {
                    return f
                        .result
                        .clone()
                        .filter(|_| f.kind == FeatureKind::Function)
                        .ok_or(LowerError::ResultOutsideFunction);
                }
                f.formals
                    .iter()
                    .chain(f.locals.iter())
                    .find(|d| d.name == *name)
                    .map(|d| d.ty.clone())
                    .ok_or_else(|| LowerError::UnknownEntity(name.clone()))
            }
            Expression::Call {
                target, feature, ..
            } => {
                let t0 = self.expr_type(target, scope)?;
                let f = &self.features[feature.0];
                let declared = f.result.clone().ok_or_else(|| LowerError::NotAQuery {
                    class: self.classes[t0.class.0].name.clone(),
                    feature: f.name.clone(),
                })?;
                Ok(combine_result_type(&t0, declared))
            }
        }
    }
}

fn lower_processor_tag(tag: &ProcessorTag) -> ProcTag {
    match tag {
        ProcessorTag::NonSeparate => ProcTag::NonSeparate,
        ProcessorTag::SeparateTop => ProcTag::SeparateTop,
        ProcessorTag::ExplicitUnqualified(x) => ProcTag::ExplicitUnqualified(x.clone()),
        ProcessorTag::ExplicitQualified(y) => ProcTag::ExplicitQualified(y.clone()),
    }
}

/// Result-type combination for qualified calls: a non-separate target keeps
/// the feature's declared tag; a separate target makes a non-separate
/// declared result separate.
pub fn combine_result_type(target: &TypeTriple, declared: TypeTriple) -> TypeTriple {
    match &target.processor {
        ProcTag::NonSeparate => declared,
        _ => TypeTriple {
            processor: if declared.processor == ProcTag::NonSeparate {
                ProcTag::SeparateTop
            } else {
                declared.processor.clone()
            },
            ..declared
        },
    }
}
