//! Bounded-exhaustive exploration of the interleaving space.
//!
//! Breadth-first search over configurations, branching on every enabled
//! processor up to the depth bound. States are deduplicated by a canonical
//! digest that renames identities by first encounter, so configurations
//! reached through different interleavings but equal up to id allocation
//! order coincide. Breadth-first order makes the reported deadlock and
//! violation traces minimal.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashSet, VecDeque};
use std::hash::{Hash, Hasher};

use serde::Serialize;

use crate::frontend::ir::ProgramIR;
use crate::runtime::invariants::check_configuration;
use crate::runtime::rules::{Engine, StuckClass};
use crate::runtime::statement::{Op, Statement};
use crate::runtime::Configuration;
use crate::state::{Proc, Ref, Value};

/// 128-bit digest of a canonicalized configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanonicalDigest(pub u64, pub u64);

#[derive(Debug, Clone, Serialize)]
pub struct DeadlockFinding {
    /// One `step | processor | rule | head` line per step of a minimal
    /// trace reaching the deadlock.
    pub trace: Vec<String>,
    pub blocked: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationFinding {
    pub description: String,
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplorationReport {
    pub states_visited: usize,
    pub terminals: usize,
    pub deadlocks: Vec<DeadlockFinding>,
    pub violations: Vec<ViolationFinding>,
    pub depth: usize,
    pub truncated: bool,
}

impl ExplorationReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("states visited: {}\n", self.states_visited));
        out.push_str(&format!(
            "distinct terminal configurations: {}\n",
            self.terminals
        ));
        out.push_str(&format!("depth bound: {}\n", self.depth));
        if self.truncated {
            out.push_str("note: some branches were cut at the depth bound\n");
        }
        if self.deadlocks.is_empty() {
            out.push_str("deadlocks: none\n");
        } else {
            out.push_str(&format!("deadlocks: {}\n", self.deadlocks.len()));
            if let Some(first) = self.deadlocks.first() {
                out.push_str("minimal deadlock trace:\n");
                for line in &first.trace {
                    out.push_str(&format!("  {line}\n"));
                }
                for line in &first.blocked {
                    out.push_str(&format!("  blocked: {line}\n"));
                }
            }
        }
        if self.violations.is_empty() {
            out.push_str("invariant violations: none\n");
        } else {
            out.push_str(&format!(
                "invariant violations: {}\n",
                self.violations.len()
            ));
            for v in &self.violations {
                out.push_str(&format!("  {}\n", v.description));
            }
        }
        out
    }

    pub fn render_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Node {
    config: Configuration,
    /// Trace lines from the initial configuration to this node.
    trace: Vec<String>,
}

/// Explores every schedule up to `depth` steps.
pub fn explore(engine: &Engine, depth: usize) -> ExplorationReport {
    explore_with_visited(engine, depth).0
}

/// Exploration that also returns the visited digest set, letting tests
/// replay runs against the explored tree.
pub fn explore_with_visited(
    engine: &Engine,
    depth: usize,
) -> (ExplorationReport, HashSet<CanonicalDigest>) {
    let initial = engine.initial_configuration();
    let mut visited: HashSet<CanonicalDigest> = HashSet::new();
    let mut terminals: HashSet<CanonicalDigest> = HashSet::new();
    let mut deadlocks = Vec::new();
    let mut violations = Vec::new();
    let mut truncated = false;

    visited.insert(canonical_digest(engine, &initial));
    let mut frontier = VecDeque::new();
    frontier.push_back((
        Node {
            config: initial,
            trace: Vec::new(),
        },
        0usize,
    ));

    while let Some((node, level)) = frontier.pop_front() {
        for violation in check_configuration(engine, &node.config) {
            violations.push(ViolationFinding {
                description: violation,
                trace: node.trace.clone(),
            });
        }
        if node.config.is_terminal() {
            terminals.insert(canonical_digest(engine, &node.config));
            continue;
        }
        let enabled = engine.enabled_procs(&node.config);
        if enabled.is_empty() {
            let blocked = match engine.classify_stuck(&node.config) {
                StuckClass::Deadlock(list) => list
                    .iter()
                    .map(|b| format!("{}: {} -- {}", b.proc, b.head, b.reason))
                    .collect(),
                StuckClass::Live => Vec::new(),
            };
            deadlocks.push(DeadlockFinding {
                trace: node.trace.clone(),
                blocked,
            });
            continue;
        }
        if level >= depth {
            truncated = true;
            continue;
        }
        for p in enabled {
            let head = engine.render_head(&node.config, p);
            let result = engine
                .step(&node.config, p)
                .expect("enabled processors step");
            let mut trace = node.trace.clone();
            trace.push(format!(
                "{} | {} | {} | {}",
                level,
                p,
                result.rule.name(),
                head
            ));
            if let Some(violation) = result.violation {
                violations.push(ViolationFinding {
                    description: violation.to_string(),
                    trace: trace.clone(),
                });
                continue;
            }
            let digest = canonical_digest(engine, &result.config);
            if visited.insert(digest) {
                frontier.push_back((
                    Node {
                        config: result.config,
                        trace,
                    },
                    level + 1,
                ));
            }
        }
    }

    (
        ExplorationReport {
            states_visited: visited.len(),
            terminals: terminals.len(),
            deadlocks,
            violations,
            depth,
            truncated,
        },
        visited,
    )
}

/// Digest of a configuration with identities renamed canonically by first
/// encounter along a deterministic traversal, so that configurations that
/// differ only in id allocation order collide.
pub fn canonical_digest(engine: &Engine, config: &Configuration) -> CanonicalDigest {
    let text = canonical_text(&engine.ir, config);
    let mut h1 = DefaultHasher::new();
    text.hash(&mut h1);
    let mut h2 = DefaultHasher::new();
    (text.len() as u64).hash(&mut h2);
    text.hash(&mut h2);
    0xabcd_ef01_u64.hash(&mut h2);
    CanonicalDigest(h1.finish(), h2.finish())
}

struct Renamer {
    procs: BTreeMap<Proc, usize>,
    refs: BTreeMap<Ref, usize>,
    channels: BTreeMap<u64, usize>,
}

impl Renamer {
    fn proc(&mut self, p: Proc) -> String {
        let n = self.procs.len();
        let id = *self.procs.entry(p).or_insert(n);
        format!("P{id}")
    }

    fn reference(&mut self, r: Ref) -> String {
        if r.is_void() {
            return "void".to_string();
        }
        let n = self.refs.len();
        let id = *self.refs.entry(r).or_insert(n);
        format!("R{id}")
    }

    fn channel(&mut self, c: u64) -> String {
        let n = self.channels.len();
        let id = *self.channels.entry(c).or_insert(n);
        format!("A{id}")
    }

    fn value(&mut self, v: Value) -> String {
        match v {
            Value::Ref(r) => self.reference(r),
            Value::Proc(p) => self.proc(p),
            other => other.to_string(),
        }
    }
}

/// Canonical rendering: processors in queue order, then per processor its
/// queue, locks, region (objects ordered by reference), environments, and
/// finally the once table.
fn canonical_text(ir: &ProgramIR, config: &Configuration) -> String {
    let mut renamer = Renamer {
        procs: BTreeMap::new(),
        refs: BTreeMap::new(),
        channels: BTreeMap::new(),
    };
    let mut out = String::new();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    // First pass fixes processor numbering in id order (creation order).
    for &p in &procs {
        renamer.proc(p);
    }
    for &p in &procs {
        out.push_str(&format!("=== {}\n", renamer.proc(p)));
        for statement in config.queue(p) {
            out.push_str(&canonical_statement(ir, statement, &mut renamer));
            out.push('\n');
        }
        let state = &config.state;
        let regions = &state.regions;
        out.push_str(&format!(
            "rq_locked={} passed={}\n",
            state.rq_locked(p).unwrap_or(false),
            state.locks_passed(p).unwrap_or(false)
        ));
        for stack_name in ["obtained", "ret_rq", "ret_cs"] {
            let stack = match stack_name {
                "obtained" => regions.obtained_rq_locks(p),
                "ret_rq" => regions.retrieved_rq_locks(p),
                _ => regions.retrieved_cs_locks(p),
            };
            if let Ok(stack) = stack {
                out.push_str(stack_name);
                out.push(':');
                for set in stack {
                    let mut members: Vec<String> = set.iter().map(|q| renamer.proc(*q)).collect();
                    members.sort();
                    out.push_str(&format!("{{{}}}", members.join(",")));
                }
                out.push('\n');
            }
        }
        // Objects of this region ordered by reference id (creation order).
        if let Ok(objs) = regions.handled_objs(p) {
            let mut refs: Vec<Ref> = objs.iter().filter_map(|o| state.ref_of(*o).ok()).collect();
            refs.sort();
            for r in refs {
                let name = renamer.reference(r);
                let obj = state.ref_obj(r).expect("object on heap");
                out.push_str(&format!("{name}:{}", ir.class(obj.class_type).name));
                for attr in ir.attribute_names(obj.class_type) {
                    let v = obj.att_val(attr).expect("declared attribute");
                    out.push_str(&format!(" {attr}={}", renamer.value(v)));
                }
                if let Some(cells) = &obj.cells {
                    out.push_str(" cells=");
                    for cell in cells {
                        out.push_str(&renamer.value(*cell));
                        out.push(',');
                    }
                }
                out.push('\n');
            }
        }
        for env in state.envs(p) {
            out.push_str("env{");
            for (name, v) in env.iter() {
                out.push_str(&format!("{name}={};", renamer.value(v)));
            }
            out.push_str("}\n");
        }
    }
    // Once table.
    let once = config.state.heap.once_table();
    for (f, result) in &once.all_procs {
        let value = result.map(|r| renamer.reference(r)).unwrap_or_default();
        out.push_str(&format!("once_all {} {}\n", ir.feature_label(*f), value));
    }
    for ((p, f), result) in &once.per_proc {
        let value = result.map(|r| renamer.reference(r)).unwrap_or_default();
        out.push_str(&format!(
            "once {} {} {}\n",
            renamer.proc(*p),
            ir.feature_label(*f),
            value
        ));
    }
    out
}

fn canonical_statement(ir: &ProgramIR, statement: &Statement, renamer: &mut Renamer) -> String {
    match statement {
        Statement::Instruction { instr, .. } => {
            format!(
                "I:{}",
                crate::frontend::ir::DisplayInstruction { ir, instr }
            )
        }
        Statement::Op(op) => match op {
            Op::Issue { target, statements } => {
                let inner: Vec<String> = statements
                    .iter()
                    .map(|s| canonical_statement(ir, s, renamer))
                    .collect();
                format!("issue({},[{}])", renamer.proc(*target), inner.join(";"))
            }
            Op::ExecuteDelegated { body, env, locks } => {
                let inner: Vec<String> = body
                    .iter()
                    .map(|s| canonical_statement(ir, s, renamer))
                    .collect();
                let mut rendered_env = String::new();
                for (name, v) in env.iter() {
                    rendered_env.push_str(&format!("{name}={};", renamer.value(v)));
                }
                let mut members: Vec<String> = locks.iter().map(|q| renamer.proc(*q)).collect();
                members.sort();
                format!(
                    "exec_delegated([{}],{{{rendered_env}}},{{{}}})",
                    inner.join(";"),
                    members.join(",")
                )
            }
            Op::LeaveDelegated => "leave_delegated".to_string(),
            Op::Eval { channel, expr, .. } => format!(
                "eval({},{})",
                renamer.channel(channel.0),
                crate::frontend::ir::DisplayExpression { ir, expr }
            ),
            Op::Wait { channel } => format!("wait({})", renamer.channel(channel.0)),
            Op::Result { channel, value } => format!(
                "result({},{})",
                renamer.channel(channel.0),
                canonical_operand(value, renamer)
            ),
            Op::Notify { channel } => format!("notify({})", renamer.channel(channel.0)),
            Op::Read { name, channel } => {
                format!("read({name},{})", renamer.channel(channel.0))
            }
            Op::Write { name, value } => {
                format!("write({name},{})", canonical_operand(value, renamer))
            }
            Op::Lock { locks } => {
                let mut members: Vec<String> = locks.iter().map(|q| renamer.proc(*q)).collect();
                members.sort();
                format!("lock({{{}}})", members.join(","))
            }
            Op::Unlock => "unlock".to_string(),
            Op::PopObtainedRqLocks => "pop_obtained".to_string(),
            Op::CallCommand {
                target,
                feature,
                args,
                ..
            } => format!(
                "callc({},{},{})",
                canonical_operand(target, renamer),
                ir.feature_label(*feature),
                args.iter()
                    .map(|a| canonical_operand(a, renamer))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            Op::CallQuery {
                channel,
                target,
                feature,
                args,
                ..
            } => format!(
                "callq({},{},{},{})",
                renamer.channel(channel.0),
                canonical_operand(target, renamer),
                ir.feature_label(*feature),
                args.iter()
                    .map(|a| canonical_operand(a, renamer))
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            Op::Apply {
                channel,
                target,
                feature,
                args,
                caller,
                passed_rq,
                passed_cs,
            } => {
                let mut rq: Vec<String> = passed_rq.iter().map(|q| renamer.proc(*q)).collect();
                rq.sort();
                let mut cs: Vec<String> = passed_cs.iter().map(|q| renamer.proc(*q)).collect();
                cs.sort();
                format!(
                    "apply({},{},{},{},{},{{{}}},{{{}}})",
                    renamer.channel(channel.0),
                    canonical_operand(target, renamer),
                    ir.feature_label(*feature),
                    args.iter()
                        .map(|a| canonical_operand(a, renamer))
                        .collect::<Vec<_>>()
                        .join(","),
                    renamer.proc(*caller),
                    rq.join(","),
                    cs.join(",")
                )
            }
            Op::CheckPreAndLockRqs { locks, feature } => {
                let mut members: Vec<String> = locks.iter().map(|q| renamer.proc(*q)).collect();
                members.sort();
                format!(
                    "check_pre({{{}}},{})",
                    members.join(","),
                    ir.feature_label(*feature)
                )
            }
            Op::CheckPostAndUnlockRqs { locks, feature } => {
                let mut members: Vec<String> = locks.iter().map(|q| renamer.proc(*q)).collect();
                members.sort();
                format!(
                    "check_post({{{}}},{})",
                    members.join(","),
                    ir.feature_label(*feature)
                )
            }
            Op::ReturnQuery {
                channel,
                value,
                caller,
            } => format!(
                "returnq({},{},{})",
                renamer.channel(channel.0),
                canonical_operand(value, renamer),
                renamer.proc(*caller)
            ),
            Op::ReturnCommand { channel, caller } => format!(
                "returnc({},{})",
                renamer.channel(channel.0),
                renamer.proc(*caller)
            ),
            Op::SetNotFreshFunction { feature, value } => format!(
                "snf_f({},{})",
                ir.feature_label(*feature),
                canonical_operand(value, renamer)
            ),
            Op::SetNotFreshProcedure { feature } => {
                format!("snf_p({})", ir.feature_label(*feature))
            }
            Op::SetNotFreshWithResult { feature } => {
                format!("snf_r({})", ir.feature_label(*feature))
            }
            Op::Provided {
                condition,
                then_branch,
                else_branch,
            } => {
                let t: Vec<String> = then_branch
                    .iter()
                    .map(|s| canonical_statement(ir, s, renamer))
                    .collect();
                let e: Vec<String> = else_branch
                    .iter()
                    .map(|s| canonical_statement(ir, s, renamer))
                    .collect();
                format!(
                    "provided({},[{}],[{}])",
                    canonical_operand(condition, renamer),
                    t.join(";"),
                    e.join(";")
                )
            }
            Op::Assert {
                kind, condition, ..
            } => format!("assert({kind},{})", canonical_operand(condition, renamer)),
            Op::Nop => "nop".to_string(),
        },
    }
}

fn canonical_operand(
    operand: &crate::runtime::statement::Operand,
    renamer: &mut Renamer,
) -> String {
    match operand {
        crate::runtime::statement::Operand::Val(v) => renamer.value(*v),
        crate::runtime::statement::Operand::ChannelData(a) => {
            format!("{}.data", renamer.channel(a.0))
        }
    }
}
