//! Objects, references, and the heap.
//!
//! The heap maintains a bijection between references and objects, tracks
//! the last object added, and records the once status of once routines.
//! All commands are persistent: they return an updated heap and leave the
//! receiver untouched.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::frontend::ir::{ClassId, FeatureId, ProgramIR};

use super::error::{StateError, StateResult};
use super::ids::{ObjId, Ref, Value};

/// A run-time object: identity, class type, and one value per attribute of
/// the class type. `ARRAY` derivations additionally carry their cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Obj {
    pub id: ObjId,
    pub class_type: ClassId,
    pub att_val: BTreeMap<String, Value>,
    pub cells: Option<Vec<Value>>,
}

impl Obj {
    /// A new object with all attribute values void. The caller supplies the
    /// fresh identity.
    pub fn make(id: ObjId, class_type: ClassId, ir: &ProgramIR) -> Obj {
        let att_val = ir
            .attribute_names(class_type)
            .into_iter()
            .map(|n| (n.to_string(), Value::VOID))
            .collect();
        let cells = ir
            .class(class_type)
            .array_element
            .as_ref()
            .map(|_| Vec::new());
        Obj {
            id,
            class_type,
            att_val,
            cells,
        }
    }

    pub fn att_val(&self, name: &str) -> StateResult<Value> {
        self.att_val
            .get(name)
            .copied()
            .ok_or_else(|| StateError::pre("OBJ.att_val", format!("no attribute '{name}'")))
    }

    /// Updated object with attribute `name` set to `v`. The class type must
    /// declare the attribute.
    pub fn set_att_val(&self, name: &str, v: Value) -> StateResult<Obj> {
        if !self.att_val.contains_key(name) {
            return Err(StateError::pre(
                "OBJ.set_att_val",
                format!("no attribute '{name}'"),
            ));
        }
        let mut updated = self.clone();
        updated.att_val.insert(name.to_string(), v);
        Ok(updated)
    }

    /// A copy with the same class type and attribute values but a new
    /// identity. Attribute references are aliased, not followed.
    pub fn copy(&self, fresh_id: ObjId) -> Obj {
        Obj {
            id: fresh_id,
            ..self.clone()
        }
    }
}

/// Once status bookkeeping: a once routine is fresh everywhere until marked
/// non-fresh for one processor or for the whole system. The stored value is
/// the once result for functions and `None` for procedures.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OnceTable {
    pub all_procs: BTreeMap<FeatureId, Option<Ref>>,
    pub per_proc: BTreeMap<(super::ids::Proc, FeatureId), Option<Ref>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Heap {
    objs: BTreeMap<ObjId, Arc<Obj>>,
    ref_obj: BTreeMap<Ref, ObjId>,
    obj_ref: BTreeMap<ObjId, Ref>,
    last_added_obj: Option<ObjId>,
    pub(super) once: OnceTable,
}

impl Heap {
    /// A heap with no objects and every once routine fresh.
    pub fn make() -> Heap {
        Heap::default()
    }

    pub fn objs(&self) -> impl Iterator<Item = &Obj> {
        self.objs.values().map(|o| o.as_ref())
    }

    pub fn obj_count(&self) -> usize {
        self.objs.len()
    }

    pub fn refs(&self) -> impl Iterator<Item = Ref> + '_ {
        self.ref_obj.keys().copied()
    }

    pub fn ref_count(&self) -> usize {
        self.ref_obj.len()
    }

    pub fn contains_ref(&self, r: Ref) -> bool {
        self.ref_obj.contains_key(&r)
    }

    pub fn contains_obj_id(&self, id: ObjId) -> bool {
        self.objs.contains_key(&id)
    }

    pub fn ref_obj(&self, r: Ref) -> StateResult<&Obj> {
        self.ref_obj
            .get(&r)
            .and_then(|id| self.objs.get(id))
            .map(|o| o.as_ref())
            .ok_or_else(|| StateError::pre("HEAP.ref_obj", format!("unknown reference {r}")))
    }

    /// Inverse mapping: the unique reference to an object on the heap.
    pub fn ref_of(&self, id: ObjId) -> StateResult<Ref> {
        self.obj_ref
            .get(&id)
            .copied()
            .ok_or_else(|| StateError::pre("HEAP.ref", format!("object {id} not on heap")))
    }

    pub fn last_added_obj(&self) -> StateResult<&Obj> {
        self.last_added_obj
            .and_then(|id| self.objs.get(&id))
            .map(|o| o.as_ref())
            .ok_or_else(|| StateError::pre("HEAP.last_added_obj", "heap is empty"))
    }

    fn check_attribute_refs(&self, o: &Obj, command: &'static str) -> StateResult<()> {
        for (name, v) in &o.att_val {
            if let Value::Ref(r) = v {
                if !r.is_void() && !self.contains_ref(*r) {
                    return Err(StateError::pre(
                        command,
                        format!("attribute '{name}' of {} holds unknown reference {r}", o.id),
                    ));
                }
            }
        }
        if let Some(cells) = &o.cells {
            for v in cells {
                if let Value::Ref(r) = v {
                    if !r.is_void() && !self.contains_ref(*r) {
                        return Err(StateError::pre(
                            command,
                            format!("cell of {} holds unknown reference {r}", o.id),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Adds object `o` to the heap under the fresh reference `r`.
    pub fn add_obj(&self, o: Obj, r: Ref) -> StateResult<Heap> {
        if self.objs.contains_key(&o.id) {
            return Err(StateError::pre(
                "HEAP.add_obj",
                format!("object id {} already on heap", o.id),
            ));
        }
        if r.is_void() || self.contains_ref(r) {
            return Err(StateError::pre(
                "HEAP.add_obj",
                format!("reference {r} is not fresh"),
            ));
        }
        self.check_attribute_refs(&o, "HEAP.add_obj")?;
        let mut heap = self.clone();
        heap.ref_obj.insert(r, o.id);
        heap.obj_ref.insert(o.id, r);
        heap.last_added_obj = Some(o.id);
        heap.objs.insert(o.id, Arc::new(o));
        Ok(heap)
    }

    /// Points `r` at the updated object `o`, which must keep the identity of
    /// the object currently referenced by `r`.
    pub fn update_ref(&self, r: Ref, o: Obj) -> StateResult<Heap> {
        let current = self.ref_obj(r)?;
        if current.id != o.id {
            return Err(StateError::pre(
                "HEAP.update_ref",
                format!("object identity mismatch: {} vs {}", current.id, o.id),
            ));
        }
        self.check_attribute_refs(&o, "HEAP.update_ref")?;
        let mut heap = self.clone();
        heap.objs.insert(o.id, Arc::new(o));
        Ok(heap)
    }

    // --- once status --------------------------------------------------------

    pub fn is_fresh(&self, p: super::ids::Proc, f: FeatureId) -> bool {
        !(self.once.all_procs.contains_key(&f) || self.once.per_proc.contains_key(&(p, f)))
    }

    pub fn once_result(&self, p: super::ids::Proc, f: FeatureId) -> StateResult<Ref> {
        let slot = self
            .once
            .all_procs
            .get(&f)
            .or_else(|| self.once.per_proc.get(&(p, f)));
        match slot {
            Some(Some(r)) => Ok(*r),
            Some(None) => Err(StateError::pre(
                "HEAP.once_result",
                "once procedure has no result",
            )),
            None => Err(StateError::pre(
                "HEAP.once_result",
                "once routine is fresh on this processor",
            )),
        }
    }

    /// Marks a once function non-fresh: system-wide when its declared result
    /// type is separate (with or without explicit specification), on `p`
    /// only when non-separate.
    pub fn set_once_func_not_fresh(
        &self,
        ir: &ProgramIR,
        p: super::ids::Proc,
        f: FeatureId,
        r: Ref,
    ) -> StateResult<Heap> {
        let feature = ir.feature(f);
        if !feature.is_once || feature.kind != crate::frontend::ir::FeatureKind::Function {
            return Err(StateError::pre(
                "HEAP.set_once_func_not_fresh",
                "feature is not a once function",
            ));
        }
        if !r.is_void() && !self.contains_ref(r) {
            return Err(StateError::pre(
                "HEAP.set_once_func_not_fresh",
                format!("unknown result reference {r}"),
            ));
        }
        let separate_result = feature
            .result
            .as_ref()
            .is_some_and(|t| t.processor.is_separate());
        let mut heap = self.clone();
        if separate_result {
            heap.once.all_procs.insert(f, Some(r));
        } else {
            heap.once.per_proc.insert((p, f), Some(r));
        }
        Ok(heap)
    }

    /// Marks a once procedure non-fresh on `p`.
    pub fn set_once_proc_not_fresh(
        &self,
        ir: &ProgramIR,
        p: super::ids::Proc,
        f: FeatureId,
    ) -> StateResult<Heap> {
        let feature = ir.feature(f);
        if !feature.is_once || feature.kind != crate::frontend::ir::FeatureKind::Procedure {
            return Err(StateError::pre(
                "HEAP.set_once_proc_not_fresh",
                "feature is not a once procedure",
            ));
        }
        let mut heap = self.clone();
        heap.once.per_proc.insert((p, f), None);
        Ok(heap)
    }

    pub fn once_table(&self) -> &OnceTable {
        &self.once
    }
}
