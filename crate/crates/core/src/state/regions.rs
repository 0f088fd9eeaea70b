//! Processors, regions, and the two-lock model.
//!
//! Each processor owns a region of objects and two locks: a request queue
//! lock (the right to append feature requests) and a call stack lock (the
//! right to prepend). Obtained locks are acquired with `lock_rqs`;
//! retrieved locks arrive through lock passing. The retrieved request
//! queue and call stack stacks grow and shrink in parallel.

use std::collections::{BTreeMap, BTreeSet};

use super::error::{StateError, StateResult};
use super::ids::{ObjId, Proc};

type ProcSet = BTreeSet<Proc>;

/// A stack of processor sets; bottom is index 0.
pub type LockStack = Vec<ProcSet>;

pub fn flat(stack: &LockStack) -> ProcSet {
    stack.iter().flatten().copied().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Regions {
    procs: BTreeSet<Proc>,
    handled_objs: BTreeMap<Proc, BTreeSet<ObjId>>,
    last_added_proc: Option<Proc>,
    rq_locked: BTreeMap<Proc, bool>,
    cs_locked: BTreeMap<Proc, bool>,
    obtained_rq_locks: BTreeMap<Proc, LockStack>,
    obtained_cs_lock: BTreeMap<Proc, Proc>,
    retrieved_rq_locks: BTreeMap<Proc, LockStack>,
    retrieved_cs_locks: BTreeMap<Proc, LockStack>,
    locks_passed: BTreeMap<Proc, bool>,
}

impl Regions {
    pub fn make() -> Regions {
        Regions::default()
    }

    // --- queries -------------------------------------------------------------

    pub fn procs(&self) -> &BTreeSet<Proc> {
        &self.procs
    }

    pub fn contains_proc(&self, p: Proc) -> bool {
        self.procs.contains(&p)
    }

    pub fn last_added_proc(&self) -> StateResult<Proc> {
        self.last_added_proc
            .ok_or_else(|| StateError::pre("REG.last_added_proc", "no processors"))
    }

    pub fn handled_objs(&self, p: Proc) -> StateResult<&BTreeSet<ObjId>> {
        self.handled_objs
            .get(&p)
            .ok_or_else(|| StateError::pre("REG.handled_objs", format!("unknown processor {p}")))
    }

    pub fn handler(&self, o: ObjId) -> StateResult<Proc> {
        self.handled_objs
            .iter()
            .find(|(_, objs)| objs.contains(&o))
            .map(|(p, _)| *p)
            .ok_or_else(|| StateError::pre("REG.handler", format!("object {o} not in any region")))
    }

    pub fn rq_locked(&self, p: Proc) -> StateResult<bool> {
        self.rq_locked
            .get(&p)
            .copied()
            .ok_or_else(|| StateError::pre("REG.rq_locked", format!("unknown processor {p}")))
    }

    pub fn cs_locked(&self, p: Proc) -> StateResult<bool> {
        self.cs_locked
            .get(&p)
            .copied()
            .ok_or_else(|| StateError::pre("REG.cs_locked", format!("unknown processor {p}")))
    }

    pub fn obtained_rq_locks(&self, p: Proc) -> StateResult<&LockStack> {
        self.obtained_rq_locks.get(&p).ok_or_else(|| {
            StateError::pre("REG.obtained_rq_locks", format!("unknown processor {p}"))
        })
    }

    pub fn obtained_cs_lock(&self, p: Proc) -> StateResult<Proc> {
        self.obtained_cs_lock.get(&p).copied().ok_or_else(|| {
            StateError::pre("REG.obtained_cs_lock", format!("unknown processor {p}"))
        })
    }

    pub fn retrieved_rq_locks(&self, p: Proc) -> StateResult<&LockStack> {
        self.retrieved_rq_locks.get(&p).ok_or_else(|| {
            StateError::pre("REG.retrieved_rq_locks", format!("unknown processor {p}"))
        })
    }

    pub fn retrieved_cs_locks(&self, p: Proc) -> StateResult<&LockStack> {
        self.retrieved_cs_locks.get(&p).ok_or_else(|| {
            StateError::pre("REG.retrieved_cs_locks", format!("unknown processor {p}"))
        })
    }

    pub fn locks_passed(&self, p: Proc) -> StateResult<bool> {
        self.locks_passed
            .get(&p)
            .copied()
            .ok_or_else(|| StateError::pre("REG.locks_passed", format!("unknown processor {p}")))
    }

    /// All request queue locks of `p`: obtained and retrieved.
    pub fn rq_locks(&self, p: Proc) -> StateResult<ProcSet> {
        let mut set = flat(self.obtained_rq_locks(p)?);
        set.extend(flat(self.retrieved_rq_locks(p)?));
        Ok(set)
    }

    /// All call stack locks of `p`: the obtained one plus retrieved ones.
    pub fn cs_locks(&self, p: Proc) -> StateResult<ProcSet> {
        let mut set = flat(self.retrieved_cs_locks(p)?);
        set.insert(self.obtained_cs_lock(p)?);
        Ok(set)
    }

    // --- commands ------------------------------------------------------------

    /// Adds a processor: request queue unlocked, call stack locked and owned
    /// by itself, empty lock stacks, locks not passed.
    pub fn add_proc(&self, p: Proc) -> StateResult<Regions> {
        if self.contains_proc(p) {
            return Err(StateError::pre(
                "REG.add_proc",
                format!("processor {p} already known"),
            ));
        }
        let mut k = self.clone();
        k.procs.insert(p);
        k.last_added_proc = Some(p);
        k.handled_objs.insert(p, BTreeSet::new());
        k.rq_locked.insert(p, false);
        k.cs_locked.insert(p, true);
        k.obtained_rq_locks.insert(p, Vec::new());
        k.obtained_cs_lock.insert(p, p);
        k.retrieved_rq_locks.insert(p, Vec::new());
        k.retrieved_cs_locks.insert(p, Vec::new());
        k.locks_passed.insert(p, false);
        Ok(k)
    }

    pub fn add_obj(&self, p: Proc, o: ObjId) -> StateResult<Regions> {
        if !self.contains_proc(p) {
            return Err(StateError::pre(
                "REG.add_obj",
                format!("unknown processor {p}"),
            ));
        }
        if self.handled_objs.values().any(|objs| objs.contains(&o)) {
            return Err(StateError::pre(
                "REG.add_obj",
                format!("object {o} already handled"),
            ));
        }
        let mut k = self.clone();
        k.handled_objs.get_mut(&p).expect("known proc").insert(o);
        Ok(k)
    }

    pub fn remove_obj(&self, o: ObjId) -> StateResult<Regions> {
        let p = self.handler(o).map_err(|_| {
            StateError::pre("REG.remove_obj", format!("object {o} not in any region"))
        })?;
        let mut k = self.clone();
        k.handled_objs.get_mut(&p).expect("known proc").remove(&o);
        Ok(k)
    }

    /// Locks the request queues of `locks` on behalf of `p`, pushing the set
    /// onto `p`'s obtained stack. None of them may be locked already.
    pub fn lock_rqs(&self, p: Proc, locks: &ProcSet) -> StateResult<Regions> {
        if !self.contains_proc(p) {
            return Err(StateError::pre(
                "REG.lock_rqs",
                format!("unknown processor {p}"),
            ));
        }
        for x in locks {
            if !self.contains_proc(*x) {
                return Err(StateError::pre(
                    "REG.lock_rqs",
                    format!("unknown processor {x}"),
                ));
            }
            if self.rq_locked(*x)? {
                return Err(StateError::pre(
                    "REG.lock_rqs",
                    format!("request queue of {x} already locked"),
                ));
            }
        }
        let mut k = self.clone();
        k.obtained_rq_locks
            .get_mut(&p)
            .expect("known proc")
            .push(locks.clone());
        for x in locks {
            k.rq_locked.insert(*x, true);
        }
        Ok(k)
    }

    /// Removes `p`'s claim on its most recently obtained request queue
    /// locks. The queues stay locked until `unlock_rq`.
    pub fn pop_obtained_rq_locks(&self, p: Proc) -> StateResult<Regions> {
        if !self.contains_proc(p) {
            return Err(StateError::pre(
                "REG.pop_obtained_rq_locks",
                format!("unknown processor {p}"),
            ));
        }
        if self.obtained_rq_locks(p)?.is_empty() {
            return Err(StateError::pre(
                "REG.pop_obtained_rq_locks",
                "obtained request queue lock stack is empty",
            ));
        }
        if self.locks_passed(p)? {
            return Err(StateError::pre(
                "REG.pop_obtained_rq_locks",
                format!("{p} has passed its locks"),
            ));
        }
        let mut k = self.clone();
        k.obtained_rq_locks.get_mut(&p).expect("known proc").pop();
        Ok(k)
    }

    /// Unlocks `p`'s request queue; no processor may still claim it among
    /// its obtained locks.
    pub fn unlock_rq(&self, p: Proc) -> StateResult<Regions> {
        if !self.contains_proc(p) {
            return Err(StateError::pre(
                "REG.unlock_rq",
                format!("unknown processor {p}"),
            ));
        }
        if !self.rq_locked(p)? {
            return Err(StateError::pre(
                "REG.unlock_rq",
                format!("request queue of {p} is not locked"),
            ));
        }
        for q in &self.procs {
            if flat(self.obtained_rq_locks(*q)?).contains(&p) {
                return Err(StateError::pre(
                    "REG.unlock_rq",
                    format!("request queue lock of {p} still claimed by {q}"),
                ));
            }
        }
        let mut k = self.clone();
        k.rq_locked.insert(p, false);
        Ok(k)
    }

    /// Permanently transfers unclaimed, locked request queue locks to `p`.
    pub fn delegate_obtained_rq_locks(&self, p: Proc, locks: &ProcSet) -> StateResult<Regions> {
        if !self.contains_proc(p) {
            return Err(StateError::pre(
                "REG.delegate_obtained_rq_locks",
                format!("unknown processor {p}"),
            ));
        }
        for x in locks {
            if !self.contains_proc(*x) {
                return Err(StateError::pre(
                    "REG.delegate_obtained_rq_locks",
                    format!("unknown processor {x}"),
                ));
            }
            for y in &self.procs {
                if flat(self.obtained_rq_locks(*y)?).contains(x) {
                    return Err(StateError::pre(
                        "REG.delegate_obtained_rq_locks",
                        format!("request queue lock of {x} still claimed by {y}"),
                    ));
                }
            }
            if !self.rq_locked(*x)? {
                return Err(StateError::pre(
                    "REG.delegate_obtained_rq_locks",
                    format!("request queue of {x} is not locked"),
                ));
            }
        }
        let mut k = self.clone();
        k.obtained_rq_locks
            .get_mut(&p)
            .expect("known proc")
            .push(locks.clone());
        Ok(k)
    }

    /// Temporarily passes locks from `p` to `q`. Every passed lock must be
    /// obtained or retrieved by `p`, and `p` must not have passed already.
    /// Passing back exactly the locks a processor passed earlier unmarks it.
    pub fn pass_locks(&self, p: Proc, q: Proc, rq: &ProcSet, cs: &ProcSet) -> StateResult<Regions> {
        if !self.contains_proc(p) || !self.contains_proc(q) {
            return Err(StateError::pre(
                "REG.pass_locks",
                format!("unknown processor {p} or {q}"),
            ));
        }
        for x in rq.iter().chain(cs.iter()) {
            if !self.contains_proc(*x) {
                return Err(StateError::pre(
                    "REG.pass_locks",
                    format!("unknown processor {x}"),
                ));
            }
        }
        let p_rq = self.rq_locks(p)?;
        for x in rq {
            if !p_rq.contains(x) {
                return Err(StateError::pre(
                    "REG.pass_locks",
                    format!("{p} does not hold request queue lock of {x}"),
                ));
            }
        }
        let p_cs = self.cs_locks(p)?;
        for x in cs {
            if !p_cs.contains(x) {
                return Err(StateError::pre(
                    "REG.pass_locks",
                    format!("{p} does not hold call stack lock of {x}"),
                ));
            }
        }
        if self.locks_passed(p)? {
            return Err(StateError::pre(
                "REG.pass_locks",
                format!("{p} has already passed its locks"),
            ));
        }
        // The separate-callback unmark clause is decided on the pre state.
        let unmark_q = p != q
            && self.locks_passed(q)?
            && flat(self.obtained_rq_locks(q)?).is_subset(rq)
            && flat(self.retrieved_rq_locks(q)?).is_subset(rq)
            && cs.contains(&self.obtained_cs_lock(q)?)
            && flat(self.retrieved_cs_locks(q)?).is_subset(cs);
        let mut k = self.clone();
        k.locks_passed.insert(p, !rq.is_empty() || !cs.is_empty());
        k.retrieved_rq_locks
            .get_mut(&q)
            .expect("known proc")
            .push(rq.clone());
        k.retrieved_cs_locks
            .get_mut(&q)
            .expect("known proc")
            .push(cs.clone());
        if unmark_q {
            k.locks_passed.insert(q, false);
        }
        Ok(k)
    }

    /// Reverses a lock passing operation from `p` to `q`: pops `q`'s
    /// retrieved stacks and unmarks `p`. If `p` still holds retrieved locks
    /// shared with `q`'s remaining locks, `q` is re-marked as passed.
    pub fn revoke_locks(&self, p: Proc, q: Proc) -> StateResult<Regions> {
        if !self.contains_proc(p) || !self.contains_proc(q) {
            return Err(StateError::pre(
                "REG.revoke_locks",
                format!("unknown processor {p} or {q}"),
            ));
        }
        let q_rq = self.retrieved_rq_locks(q)?;
        let q_cs = self.retrieved_cs_locks(q)?;
        let (Some(rq_top), Some(cs_top)) = (q_rq.last(), q_cs.last()) else {
            return Err(StateError::pre(
                "REG.revoke_locks",
                format!("{q} has no retrieved locks"),
            ));
        };
        let p_available_rq = self.rq_locks(p)?;
        if !rq_top.is_subset(&p_available_rq) {
            return Err(StateError::pre(
                "REG.revoke_locks",
                "retrieved request queue locks are not locks of the revoker",
            ));
        }
        let p_available_cs = self.cs_locks(p)?;
        if !cs_top.is_subset(&p_available_cs) {
            return Err(StateError::pre(
                "REG.revoke_locks",
                "retrieved call stack locks are not locks of the revoker",
            ));
        }
        if (!rq_top.is_empty() || !cs_top.is_empty()) && !self.locks_passed(p)? {
            return Err(StateError::pre(
                "REG.revoke_locks",
                format!("{p} has not passed locks"),
            ));
        }
        if self.locks_passed(q)? {
            return Err(StateError::pre(
                "REG.revoke_locks",
                format!("{q} has passed its locks"),
            ));
        }
        let mut k = self.clone();
        k.locks_passed.insert(p, false);
        k.retrieved_rq_locks.get_mut(&q).expect("known proc").pop();
        k.retrieved_cs_locks.get_mut(&q).expect("known proc").pop();
        // Re-mark clause: shared retrieved locks mean q's locks are still in
        // p's possession.
        let q_rq_after = flat(k.retrieved_rq_locks.get(&q).expect("known proc"));
        let q_cs_after = flat(k.retrieved_cs_locks.get(&q).expect("known proc"));
        let q_obtained_rq = flat(self.obtained_rq_locks(q)?);
        let q_obtained_cs = self.obtained_cs_lock(q)?;
        let p_retrieved_rq = flat(self.retrieved_rq_locks(p)?);
        let p_retrieved_cs = flat(self.retrieved_cs_locks(p)?);
        let shared = p != q
            && (p_retrieved_rq
                .iter()
                .any(|x| q_obtained_rq.contains(x) || q_rq_after.contains(x))
                || p_retrieved_cs
                    .iter()
                    .any(|x| *x == q_obtained_cs || q_cs_after.contains(x)));
        if shared {
            k.locks_passed.insert(q, true);
        }
        Ok(k)
    }
}
