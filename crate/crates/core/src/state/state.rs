//! The state facade: regions, heap, and store behind one interface.
//!
//! Commands return updated state values; nothing is mutated in place. Every
//! command re-wraps its parts through [`State::set`], whose precondition
//! enforces the consistency clauses between them:
//!
//! 1. handled objects are on the heap,
//! 2. heap objects are handled by some processor,
//! 3. non-fresh once entries belong to known processors,
//! 4. processor attribute values are known processors,
//! 5. non-empty environments belong to known processors,
//! 6. environment values are known references or processors.

use std::collections::{BTreeMap, BTreeSet};

use crate::frontend::ir::{ClassId, FeatureId, FeatureKind, ProgramIR};

use super::error::{StateError, StateResult};
use super::heap::{Heap, Obj};
use super::ids::{ObjId, Proc, Ref, Value};
use super::regions::Regions;
use super::store::{Env, Store};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct State {
    pub regions: Regions,
    pub heap: Heap,
    pub store: Store,
    last_imported_ref: Option<Ref>,
    next_id: u64,
}

impl State {
    /// A fresh state: no processors, no objects, empty store.
    pub fn make() -> State {
        State {
            regions: Regions::make(),
            heap: Heap::make(),
            store: Store::make(),
            last_imported_ref: None,
            next_id: 1,
        }
    }

    fn alloc(&self) -> (State, u64) {
        let mut s = self.clone();
        let id = s.next_id;
        s.next_id += 1;
        (s, id)
    }

    /// Allocates `n` fresh identifiers at once; used by the runtime for
    /// channel creation.
    pub fn alloc_ids(&self, n: usize) -> (State, Vec<u64>) {
        let mut s = self.clone();
        let ids = (0..n as u64).map(|i| s.next_id + i).collect();
        s.next_id += n as u64;
        (s, ids)
    }

    /// Replaces all three parts at once, checking the consistency clauses.
    pub fn set(&self, regions: Regions, heap: Heap, store: Store) -> StateResult<State> {
        validate_parts(&regions, &heap, &store)?;
        Ok(State {
            regions,
            heap,
            store,
            last_imported_ref: self.last_imported_ref,
            next_id: self.next_id,
        })
    }

    /// Re-checks the consistency clauses on the current parts.
    pub fn validate(&self) -> StateResult<()> {
        validate_parts(&self.regions, &self.heap, &self.store)
    }

    // --- processors and objects ---------------------------------------------

    pub fn procs(&self) -> &BTreeSet<Proc> {
        self.regions.procs()
    }

    pub fn last_added_proc(&self) -> StateResult<Proc> {
        self.regions.last_added_proc()
    }

    pub fn new_proc(&self) -> (State, Proc) {
        let (s, id) = self.alloc();
        (s, Proc(id))
    }

    pub fn new_obj(&self, ir: &ProgramIR, class: ClassId) -> (State, Obj) {
        let (s, id) = self.alloc();
        (s, Obj::make(ObjId(id), class, ir))
    }

    pub fn add_proc(&self, p: Proc) -> StateResult<State> {
        self.set(
            self.regions.add_proc(p)?,
            self.heap.clone(),
            self.store.clone(),
        )
    }

    /// Adds `o` to the heap under a fresh reference and to `p`'s region.
    pub fn add_obj(&self, p: Proc, o: Obj) -> StateResult<State> {
        for (name, v) in &o.att_val {
            if let Value::Proc(q) = v {
                if !self.regions.contains_proc(*q) {
                    return Err(StateError::pre(
                        "STATE.add_obj",
                        format!("attribute '{name}' holds unknown processor {q}"),
                    ));
                }
            }
        }
        let (s, id) = self.alloc();
        let r = Ref(id);
        s.set(
            s.regions.add_obj(p, o.id)?,
            s.heap.add_obj(o, r)?,
            s.store.clone(),
        )
    }

    /// Replaces the object referenced by `r` with its updated version `o`,
    /// keeping it in the same region.
    pub fn update_ref(&self, r: Ref, o: Obj) -> StateResult<State> {
        for (name, v) in &o.att_val {
            if let Value::Proc(q) = v {
                if !self.regions.contains_proc(*q) {
                    return Err(StateError::pre(
                        "STATE.update_ref",
                        format!("attribute '{name}' holds unknown processor {q}"),
                    ));
                }
            }
        }
        let u = self.heap.ref_obj(r)?;
        let handler = self.regions.handler(u.id)?;
        let regions = self.regions.remove_obj(u.id)?.add_obj(handler, o.id)?;
        let heap = self.heap.update_ref(r, o)?;
        self.set(regions, heap, self.store.clone())
    }

    pub fn handler(&self, r: Ref) -> StateResult<Proc> {
        let o = self.heap.ref_obj(r)?;
        self.regions.handler(o.id)
    }

    pub fn ref_obj(&self, r: Ref) -> StateResult<&Obj> {
        self.heap.ref_obj(r)
    }

    pub fn ref_of(&self, o: ObjId) -> StateResult<Ref> {
        self.heap.ref_of(o)
    }

    pub fn last_added_obj(&self) -> StateResult<&Obj> {
        self.heap.last_added_obj()
    }

    pub fn last_imported_ref(&self) -> StateResult<Ref> {
        self.last_imported_ref
            .ok_or_else(|| StateError::pre("STATE.last_imported_ref", "no deep import happened"))
    }

    /// All heap objects of a class type, in id order.
    pub fn heap_objects_of_class(&self, class: ClassId) -> Vec<&Obj> {
        self.heap.objs().filter(|o| o.class_type == class).collect()
    }

    // --- environments ---------------------------------------------------------

    pub fn envs(&self, p: Proc) -> &[Env] {
        self.store.envs(p)
    }

    pub fn push_env(&self, p: Proc, e: Env) -> StateResult<State> {
        if !self.regions.contains_proc(p) {
            return Err(StateError::pre(
                "STATE.push_env",
                format!("unknown processor {p}"),
            ));
        }
        self.set(
            self.regions.clone(),
            self.heap.clone(),
            self.store.push_env(p, e),
        )
    }

    pub fn pop_env(&self, p: Proc) -> StateResult<State> {
        self.set(
            self.regions.clone(),
            self.heap.clone(),
            self.store.pop_env(p)?,
        )
    }

    pub fn env_val(&self, p: Proc, name: &str) -> StateResult<Value> {
        self.store.top(p)?.value(name)
    }

    /// Sets `name` to `v` in `p`'s top environment.
    pub fn set_env_val(&self, p: Proc, name: &str, v: Value) -> StateResult<State> {
        if !self.regions.contains_proc(p) {
            return Err(StateError::pre(
                "STATE.set_env_val",
                format!("unknown processor {p}"),
            ));
        }
        self.check_value("STATE.set_env_val", v)?;
        let e = self.store.top(p)?.update(name, v);
        let store = self.store.pop_env(p)?.push_env(p, e);
        self.set(self.regions.clone(), self.heap.clone(), store)
    }

    fn check_value(&self, command: &'static str, v: Value) -> StateResult<()> {
        match v {
            Value::Ref(r) if !r.is_void() && !self.heap.contains_ref(r) => {
                Err(StateError::pre(command, format!("unknown reference {r}")))
            }
            Value::Proc(q) if !self.regions.contains_proc(q) => {
                Err(StateError::pre(command, format!("unknown processor {q}")))
            }
            _ => Ok(()),
        }
    }

    // --- attribute values -------------------------------------------------------

    pub fn att_val(&self, o: ObjId, name: &str) -> StateResult<Value> {
        let r = self.heap.ref_of(o)?;
        self.heap.ref_obj(r)?.att_val(name)
    }

    pub fn set_att_val(&self, o: ObjId, name: &str, v: Value) -> StateResult<State> {
        self.check_value("STATE.set_att_val", v)?;
        let r = self.heap.ref_of(o)?;
        let updated = self.heap.ref_obj(r)?.set_att_val(name, v)?;
        self.update_ref(r, updated)
    }

    // --- unified get and set ------------------------------------------------------

    /// The value of name `n` in `p`'s current feature execution context:
    /// the top environment when it defines the name, the current object's
    /// attribute otherwise.
    pub fn value(&self, p: Proc, name: &str) -> StateResult<Value> {
        let top = self.store.top(p)?;
        if top.contains(name) {
            return top.value(name);
        }
        let current = top.value("Current")?;
        let Value::Ref(r) = current else {
            return Err(StateError::pre("STATE.value", "Current is not a reference"));
        };
        self.heap.ref_obj(r)?.att_val(name).map_err(|_| {
            StateError::pre(
                "STATE.value",
                format!("name '{name}' neither in environment nor an attribute of Current"),
            )
        })
    }

    /// Attaches `v` to the entity named `n` on `p`: an attribute of the
    /// current object when one matches, the top environment otherwise.
    /// A reference to an expanded object handled by `p` is copied first;
    /// expanded objects handled elsewhere were already imported when they
    /// arrived.
    pub fn set_val(&self, ir: &ProgramIR, p: Proc, name: &str, v: Value) -> StateResult<State> {
        let top = self.store.top(p)?;
        let current = top.value("Current")?;
        let Value::Ref(current_ref) = current else {
            return Err(StateError::pre(
                "STATE.set_val",
                "Current is not a reference",
            ));
        };
        self.check_value("STATE.set_val", v)?;
        let current_obj_id = self.heap.ref_obj(current_ref)?.id;
        let (state, value) = match v {
            Value::Ref(r) if !r.is_void() => {
                let obj = self.heap.ref_obj(r)?.clone();
                let expanded = ir.class(obj.class_type).is_exp;
                if expanded && self.handler(r)? == p {
                    let (s, id) = self.alloc();
                    let copy = obj.copy(ObjId(id));
                    let s = s.add_obj(p, copy)?;
                    let copy_ref = s.heap.ref_of(ObjId(id))?;
                    (s, Value::Ref(copy_ref))
                } else {
                    (self.clone(), v)
                }
            }
            _ => (self.clone(), v),
        };
        let has_attribute = state.heap.ref_obj(current_ref)?.att_val.contains_key(name);
        if has_attribute {
            state.set_att_val(current_obj_id, name, value)
        } else {
            state.set_env_val(p, name, value)
        }
    }

    // --- once status -----------------------------------------------------------

    pub fn is_fresh(&self, p: Proc, f: FeatureId) -> bool {
        self.heap.is_fresh(p, f)
    }

    pub fn once_result(&self, p: Proc, f: FeatureId) -> StateResult<Ref> {
        self.heap.once_result(p, f)
    }

    pub fn set_once_func_not_fresh(
        &self,
        ir: &ProgramIR,
        p: Proc,
        f: FeatureId,
        r: Ref,
    ) -> StateResult<State> {
        if !self.regions.contains_proc(p) {
            return Err(StateError::pre(
                "STATE.set_once_func_not_fresh",
                format!("unknown processor {p}"),
            ));
        }
        self.set(
            self.regions.clone(),
            self.heap.set_once_func_not_fresh(ir, p, f, r)?,
            self.store.clone(),
        )
    }

    pub fn set_once_proc_not_fresh(
        &self,
        ir: &ProgramIR,
        p: Proc,
        f: FeatureId,
    ) -> StateResult<State> {
        if !self.regions.contains_proc(p) {
            return Err(StateError::pre(
                "STATE.set_once_proc_not_fresh",
                format!("unknown processor {p}"),
            ));
        }
        self.set(
            self.regions.clone(),
            self.heap.set_once_proc_not_fresh(ir, p, f)?,
            self.store.clone(),
        )
    }

    // --- locking ---------------------------------------------------------------

    pub fn rq_locked(&self, p: Proc) -> StateResult<bool> {
        self.regions.rq_locked(p)
    }

    pub fn rq_locks(&self, p: Proc) -> StateResult<BTreeSet<Proc>> {
        self.regions.rq_locks(p)
    }

    pub fn cs_locks(&self, p: Proc) -> StateResult<BTreeSet<Proc>> {
        self.regions.cs_locks(p)
    }

    pub fn locks_passed(&self, p: Proc) -> StateResult<bool> {
        self.regions.locks_passed(p)
    }

    pub fn lock_rqs(&self, p: Proc, locks: &BTreeSet<Proc>) -> StateResult<State> {
        self.set(
            self.regions.lock_rqs(p, locks)?,
            self.heap.clone(),
            self.store.clone(),
        )
    }

    pub fn pop_obtained_rq_locks(&self, p: Proc) -> StateResult<State> {
        self.set(
            self.regions.pop_obtained_rq_locks(p)?,
            self.heap.clone(),
            self.store.clone(),
        )
    }

    pub fn unlock_rq(&self, p: Proc) -> StateResult<State> {
        self.set(
            self.regions.unlock_rq(p)?,
            self.heap.clone(),
            self.store.clone(),
        )
    }

    pub fn delegate_obtained_rq_locks(
        &self,
        p: Proc,
        locks: &BTreeSet<Proc>,
    ) -> StateResult<State> {
        self.set(
            self.regions.delegate_obtained_rq_locks(p, locks)?,
            self.heap.clone(),
            self.store.clone(),
        )
    }

    pub fn pass_locks(
        &self,
        p: Proc,
        q: Proc,
        rq: &BTreeSet<Proc>,
        cs: &BTreeSet<Proc>,
    ) -> StateResult<State> {
        self.set(
            self.regions.pass_locks(p, q, rq, cs)?,
            self.heap.clone(),
            self.store.clone(),
        )
    }

    pub fn revoke_locks(&self, p: Proc, q: Proc) -> StateResult<State> {
        self.set(
            self.regions.revoke_locks(p, q)?,
            self.heap.clone(),
            self.store.clone(),
        )
    }

    // --- argument passing and deep import ----------------------------------------

    /// Pushes a new environment on `p` initialized for executing `f` on
    /// target `r0` with actual arguments `args`. Expanded actuals handled
    /// by `p` are copied; expanded actuals handled elsewhere are deep
    /// imported; reference actuals are aliased. Formals map to the
    /// processed references, locals to void, Current to `r0`, and Result to
    /// void for functions.
    pub fn push_env_with_feature(
        &self,
        ir: &ProgramIR,
        p: Proc,
        f: FeatureId,
        r0: Ref,
        args: &[Ref],
    ) -> StateResult<State> {
        if !self.regions.contains_proc(p) {
            return Err(StateError::pre(
                "STATE.push_env_with_feature",
                format!("unknown processor {p}"),
            ));
        }
        let feature = ir.feature(f);
        if feature.formals.len() != args.len() {
            return Err(StateError::pre(
                "STATE.push_env_with_feature",
                format!(
                    "feature '{}' takes {} arguments, got {}",
                    feature.name,
                    feature.formals.len(),
                    args.len()
                ),
            ));
        }
        for r in std::iter::once(&r0).chain(args.iter()) {
            if !r.is_void() && !self.heap.contains_ref(*r) {
                return Err(StateError::pre(
                    "STATE.push_env_with_feature",
                    format!("unknown reference {r}"),
                ));
            }
        }
        let mut state = self.clone();
        let mut bound: Vec<Ref> = Vec::with_capacity(args.len());
        for (formal, &actual) in feature.formals.iter().zip(args.iter()) {
            let expanded = ir.class(formal.ty.class).is_exp;
            if expanded && !actual.is_void() && state.handler(actual)? != p {
                state = state.deep_import(ir, p, actual)?;
                bound.push(state.last_imported_ref()?);
            } else if expanded && !actual.is_void() {
                let obj = state.heap.ref_obj(actual)?.clone();
                let (s, id) = state.alloc();
                let copy = obj.copy(ObjId(id));
                state = s.add_obj(p, copy)?;
                bound.push(state.heap.ref_of(ObjId(id))?);
            } else {
                bound.push(actual);
            }
        }
        let mut env = Env::make();
        for (formal, r) in feature.formals.iter().zip(bound.iter()) {
            env = env.update(&formal.name, Value::Ref(*r));
        }
        for local in &feature.locals {
            env = env.update(&local.name, Value::VOID);
        }
        env = env.update("Current", Value::Ref(r0));
        if feature.kind == FeatureKind::Function {
            env = env.update("Result", Value::VOID);
        }
        state.push_env(p, env)
    }

    /// Deep import: a full recursive copy of the object structure rooted at
    /// `r`, importing onto `p` the objects handled by `r`'s handler and
    /// leaving others on their original handlers. Reference identity inside
    /// the structure is preserved (no object is copied twice) and once
    /// statuses move with the copies. The copied root is available through
    /// [`State::last_imported_ref`]; the source structure is unmodified.
    pub fn deep_import(&self, ir: &ProgramIR, p: Proc, r: Ref) -> StateResult<State> {
        if !self.regions.contains_proc(p) {
            return Err(StateError::pre(
                "STATE.deep_import",
                format!("unknown processor {p}"),
            ));
        }
        if !self.heap.contains_ref(r) {
            return Err(StateError::pre(
                "STATE.deep_import",
                format!("unknown reference {r}"),
            ));
        }
        let q = self.handler(r)?;
        let mut map: BTreeMap<Ref, Ref> = BTreeMap::new();
        let (imported, mut state) = deep_import_rec(self.clone(), ir, p, q, r, &mut map)?;
        state.last_imported_ref = Some(imported);
        Ok(state)
    }
}

/// Recursive deep import with the memoization map threaded through.
fn deep_import_rec(
    state: State,
    ir: &ProgramIR,
    p: Proc,
    q: Proc,
    r: Ref,
    map: &mut BTreeMap<Ref, Ref>,
) -> StateResult<(Ref, State)> {
    if let Some(&copied) = map.get(&r) {
        return Ok((copied, state));
    }
    let original = state.heap.ref_obj(r)?.clone();
    let original_handler = state.handler(r)?;
    let (state, id) = state.alloc();
    let copy_id = ObjId(id);
    let copy = original.copy(copy_id);
    let target = if original_handler == q {
        p
    } else {
        original_handler
    };
    let mut state = state.add_obj(target, copy)?;
    let copy_ref = state.heap.ref_of(copy_id)?;
    map.insert(r, copy_ref);

    // Import non-void reference attribute values, in declaration order.
    let mut updated = state.heap.ref_obj(copy_ref)?.clone();
    for name in ir.attribute_names(original.class_type) {
        if let Value::Ref(val) = original.att_val(name)? {
            if !val.is_void() {
                let (imported, next) = deep_import_rec(state, ir, p, q, val, map)?;
                state = next;
                updated = updated.set_att_val(name, Value::Ref(imported))?;
            }
        }
    }
    // Array cells are part of the object structure as well.
    if let Some(cells) = original.cells.clone() {
        let mut imported_cells = Vec::with_capacity(cells.len());
        for cell in cells {
            match cell {
                Value::Ref(val) if !val.is_void() => {
                    let (imported, next) = deep_import_rec(state, ir, p, q, val, map)?;
                    state = next;
                    imported_cells.push(Value::Ref(imported));
                }
                other => imported_cells.push(other),
            }
        }
        updated.cells = Some(imported_cells);
    }
    let mut state = state.update_ref(copy_ref, updated)?;

    // Take over once statuses that are non-fresh on the original handler
    // but fresh on the copy's handler.
    let copy_handler = state.handler(copy_ref)?;
    let class = ir.class(original.class_type);
    for &func in &class.functions {
        let feature = ir.feature(func);
        let non_separate = feature
            .result
            .as_ref()
            .is_some_and(|t| !t.processor.is_separate());
        if feature.is_once
            && non_separate
            && state.is_fresh(copy_handler, func)
            && !state.is_fresh(original_handler, func)
        {
            let result = state.once_result(original_handler, func)?;
            state = state.set_once_func_not_fresh(ir, copy_handler, func, result)?;
        }
    }
    for &proc_feature in &class.procedures {
        let feature = ir.feature(proc_feature);
        if feature.is_once
            && state.is_fresh(copy_handler, proc_feature)
            && !state.is_fresh(original_handler, proc_feature)
        {
            state = state.set_once_proc_not_fresh(ir, copy_handler, proc_feature)?;
        }
    }
    Ok((copy_ref, state))
}

fn validate_parts(regions: &Regions, heap: &Heap, store: &Store) -> StateResult<()> {
    // Clause 1: every handled object is on the heap.
    for p in regions.procs() {
        for o in regions.handled_objs(*p)? {
            if !heap.contains_obj_id(*o) {
                return Err(StateError::Consistency {
                    clause: 1,
                    detail: format!("object {o} handled by {p} is not on the heap"),
                });
            }
        }
    }
    // Clause 2: every heap object is handled by exactly one processor.
    for o in heap.objs() {
        if regions.handler(o.id).is_err() {
            return Err(StateError::Consistency {
                clause: 2,
                detail: format!("object {} is not handled by any processor", o.id),
            });
        }
    }
    // Clause 3: non-fresh once entries name known processors.
    for (p, _f) in heap.once_table().per_proc.keys() {
        if !regions.contains_proc(*p) {
            return Err(StateError::Consistency {
                clause: 3,
                detail: format!("once status for unknown processor {p}"),
            });
        }
    }
    // Clause 4: processor attribute values are known processors.
    for o in heap.objs() {
        for (name, v) in &o.att_val {
            if let Value::Proc(q) = v {
                if !regions.contains_proc(*q) {
                    return Err(StateError::Consistency {
                        clause: 4,
                        detail: format!(
                            "attribute '{name}' of {} holds unknown processor {q}",
                            o.id
                        ),
                    });
                }
            }
        }
    }
    // Clause 5: non-empty environments belong to known processors.
    for (p, envs) in store.procs_with_envs() {
        if envs.iter().any(|e| !e.is_empty()) && !regions.contains_proc(p) {
            return Err(StateError::Consistency {
                clause: 5,
                detail: format!("environment for unknown processor {p}"),
            });
        }
    }
    // Clause 6: environment values are known references or processors.
    for (p, envs) in store.procs_with_envs() {
        if !regions.contains_proc(p) {
            continue;
        }
        for env in envs {
            for (name, v) in env.iter() {
                match v {
                    Value::Ref(r) if !r.is_void() && !heap.contains_ref(r) => {
                        return Err(StateError::Consistency {
                            clause: 6,
                            detail: format!("environment value '{name}' is unknown reference {r}"),
                        });
                    }
                    Value::Proc(q) if !regions.contains_proc(q) => {
                        return Err(StateError::Consistency {
                            clause: 6,
                            detail: format!("environment value '{name}' is unknown processor {q}"),
                        });
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(())
}
