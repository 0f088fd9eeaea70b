//! The transition rules: one rewrite per inference rule.
//!
//! `enabled` asks whether a processor's queue head matches a rule whose
//! side conditions (including the preconditions of the state commands the
//! rule uses) hold; `step` performs the rewrite. Rules never mutate: they
//! build a new configuration from the old one.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use crate::frontend::ir::{
    Expression, FeatureId, FeatureKind, Instruction, Literal, ProgramIR, TypeTriple,
};
use crate::state::{Proc, Ref, State, Value};
use crate::typing::{args_of, targets, ExprCtx, TypingEnv};

use super::config::Configuration;
use super::statement::{AssertionKind, Channel, DisplayStatement, Op, Operand, Statement};

/// Rule identifiers; `name` returns the rule titles used in traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleId {
    IssueNonSeparate,
    IssueSeparate,
    IssueSeparateCallback,
    ExecuteDelegated,
    LeaveDelegated,
    WaitAndResultNonSeparate,
    WaitAndResultSeparate,
    WaitAndNotifyNonSeparate,
    WaitAndNotifySeparate,
    Lock,
    Unlock,
    PopObtainedRqLocks,
    Write,
    Read,
    SetNotFreshFunction,
    SetNotFreshProcedure,
    SetNotFreshWithResult,
    ConditionalTrue,
    ConditionalFalse,
    NoOperation,
    EntityExpression,
    LiteralExpression,
    QueryExpression,
    CommandInstruction,
    CallCommand,
    CallQuery,
    ApplyRoutine,
    ApplyNonFreshOnce,
    ApplyAttribute,
    CheckPreAndLockRqs,
    CheckPostAndUnlockRqs,
    ReturnQuery,
    ReturnCommand,
    CreateTop,
    CreateExistingExplicit,
    CreateNonExistingExplicit,
    CreateNonSeparate,
    IfInstruction,
    LoopInstruction,
    Assignment,
    AssertionCheck,
}

impl RuleId {
    pub fn name(&self) -> &'static str {
        match self {
            RuleId::IssueNonSeparate => "Issue Operation -- Non-Separate",
            RuleId::IssueSeparate => "Issue Operation -- Separate",
            RuleId::IssueSeparateCallback => "Issue Operation -- Separate Callback",
            RuleId::ExecuteDelegated => "Execute Delegated Operation",
            RuleId::LeaveDelegated => "Leave Delegated Execution Operation",
            RuleId::WaitAndResultNonSeparate => "Wait and Result Operation -- Non-Separate",
            RuleId::WaitAndResultSeparate => "Wait and Result Operation -- Separate",
            RuleId::WaitAndNotifyNonSeparate => "Wait and Notify Operation -- Non-Separate",
            RuleId::WaitAndNotifySeparate => "Wait and Notify Operation -- Separate",
            RuleId::Lock => "Lock Operation",
            RuleId::Unlock => "Unlock Operation",
            RuleId::PopObtainedRqLocks => "Pop Obtained Request Queue Locks",
            RuleId::Write => "Write Value Operation",
            RuleId::Read => "Read Value Operation",
            RuleId::SetNotFreshFunction => "Set Once Routine Not Fresh Operation -- Function",
            RuleId::SetNotFreshProcedure => "Set Once Routine Not Fresh Operation -- Procedure",
            RuleId::SetNotFreshWithResult => {
                "Set Once Routine Not Fresh Operation -- Function With Result"
            }
            RuleId::ConditionalTrue => "Conditional Operation -- True",
            RuleId::ConditionalFalse => "Conditional Operation -- False",
            RuleId::NoOperation => "No Operation",
            RuleId::EntityExpression => "Entity Expression",
            RuleId::LiteralExpression => "Literal Expression",
            RuleId::QueryExpression => "Query Expression",
            RuleId::CommandInstruction => "Command Instruction",
            RuleId::CallCommand => "Call Operation -- Command",
            RuleId::CallQuery => "Call Operation -- Query",
            RuleId::ApplyRoutine => {
                "Application Operation -- Non-Once Routine or Fresh Once Routine"
            }
            RuleId::ApplyNonFreshOnce => "Application Operation -- Non-Fresh Once Routine",
            RuleId::ApplyAttribute => "Application Operation -- Attribute",
            RuleId::CheckPreAndLockRqs => "Check Precondition and Lock Request Queues Operation",
            RuleId::CheckPostAndUnlockRqs => {
                "Check Postcondition and Unlock Request Queues Operation"
            }
            RuleId::ReturnQuery => "Return Operation -- Query",
            RuleId::ReturnCommand => "Return Operation -- Command",
            RuleId::CreateTop => "Create Instruction -- Top",
            RuleId::CreateExistingExplicit => "Create Instruction -- Existing Explicit Processor",
            RuleId::CreateNonExistingExplicit => {
                "Create Instruction -- Non-Existing Explicit Processor"
            }
            RuleId::CreateNonSeparate => "Create Instruction -- Non-Separate",
            RuleId::IfInstruction => "If Instruction",
            RuleId::LoopInstruction => "Loop Instruction",
            RuleId::Assignment => "Assignment",
            RuleId::AssertionCheck => "Assertion Check",
        }
    }
}

/// Why a processor cannot take a step right now.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockReason {
    EmptyQueue,
    RequestQueueHeld { requested: Proc },
    ChannelUnresolved { channel: Channel },
    Condition { detail: String },
}

impl std::fmt::Display for BlockReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockReason::EmptyQueue => write!(f, "action queue is empty"),
            BlockReason::RequestQueueHeld { requested } => {
                write!(f, "request queue of {requested} is locked")
            }
            BlockReason::ChannelUnresolved { channel } => {
                write!(f, "no matching notification on channel {channel}")
            }
            BlockReason::Condition { detail } => write!(f, "{detail}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("processor {proc} cannot step: {reason}")]
pub struct StuckError {
    pub proc: Proc,
    pub reason: BlockReason,
}

/// A failed postcondition or invariant, trapped rather than ignored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionViolation {
    pub proc: Proc,
    pub kind: AssertionKind,
    pub feature: String,
}

impl std::fmt::Display for AssertionViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} of '{}' violated on {}",
            self.kind, self.feature, self.proc
        )
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub rule: RuleId,
    pub config: Configuration,
    pub violation: Option<AssertionViolation>,
}

/// Rule switches for experiments; all rules are on by default.
#[derive(Debug, Clone, Copy)]
pub struct RuleToggles {
    pub separate_callback_issue: bool,
}

impl Default for RuleToggles {
    fn default() -> Self {
        RuleToggles {
            separate_callback_issue: true,
        }
    }
}

/// The rewriting engine for one lowered program.
#[derive(Clone)]
pub struct Engine {
    pub ir: Arc<ProgramIR>,
    pub toggles: RuleToggles,
}

/// Deadlock diagnosis for a non-terminal configuration.
#[derive(Debug, Clone)]
pub enum StuckClass {
    Deadlock(Vec<BlockedProcessor>),
    Live,
}

#[derive(Debug, Clone)]
pub struct BlockedProcessor {
    pub proc: Proc,
    pub head: String,
    pub reason: BlockReason,
}

type RuleResult = Result<StepResult, BlockReason>;

impl Engine {
    pub fn new(ir: ProgramIR) -> Engine {
        Engine {
            ir: Arc::new(ir),
            toggles: RuleToggles::default(),
        }
    }

    pub fn with_toggles(ir: ProgramIR, toggles: RuleToggles) -> Engine {
        Engine {
            ir: Arc::new(ir),
            toggles,
        }
    }

    fn typing(&self) -> TypingEnv<'_> {
        TypingEnv::new(&self.ir)
    }

    /// The initial configuration: a bootstrap processor asks the root
    /// processor to apply the root procedure on the root object, then asks
    /// it to unlock, then drops its claim on the root's request queue.
    pub fn initial_configuration(&self) -> Configuration {
        let state = State::make();
        let (state, bootstrap) = state.new_proc();
        let state = state.add_proc(bootstrap).expect("fresh bootstrap");
        let (state, root_proc) = state.new_proc();
        let state = state.add_proc(root_proc).expect("fresh root");
        let (state, root_obj) = state.new_obj(&self.ir, self.ir.root_class);
        let root_obj_id = root_obj.id;
        let state = state.add_obj(root_proc, root_obj).expect("fresh object");
        let root_ref = state.ref_of(root_obj_id).expect("root object on heap");
        let state = state
            .lock_rqs(bootstrap, &BTreeSet::from([root_proc]))
            .expect("root request queue unlocked");
        let mut queues = BTreeMap::new();
        queues.insert(
            bootstrap,
            vec![
                Statement::op(Op::CallCommand {
                    target: Operand::Val(Value::Ref(root_ref)),
                    feature: self.ir.root_procedure,
                    args: Vec::new(),
                    arg_exprs: Vec::new(),
                    ctx: ExprCtx::Feature(self.ir.root_procedure),
                }),
                Statement::op(Op::Issue {
                    target: root_proc,
                    statements: vec![Statement::op(Op::Unlock)],
                }),
                Statement::op(Op::PopObtainedRqLocks),
            ],
        );
        queues.insert(root_proc, Vec::new());
        Configuration { state, queues }
    }

    pub fn enabled(&self, config: &Configuration, p: Proc) -> Option<RuleId> {
        self.attempt(config, p).ok().map(|r| r.rule)
    }

    pub fn enabled_procs(&self, config: &Configuration) -> Vec<Proc> {
        config
            .queues
            .keys()
            .copied()
            .filter(|&p| self.enabled(config, p).is_some())
            .collect()
    }

    pub fn step(&self, config: &Configuration, p: Proc) -> Result<StepResult, StuckError> {
        self.attempt(config, p)
            .map_err(|reason| StuckError { proc: p, reason })
    }

    /// Like [`Engine::step`] but returning the block reason; the scheduler
    /// uses this to probe and step in one pass.
    pub fn try_step(&self, config: &Configuration, p: Proc) -> Result<StepResult, BlockReason> {
        self.attempt(config, p)
    }

    /// Renders the queue head of `p`, used for traces.
    pub fn render_head(&self, config: &Configuration, p: Proc) -> String {
        config
            .head(p)
            .map(|s| {
                DisplayStatement {
                    ir: &self.ir,
                    statement: s,
                }
                .to_string()
            })
            .unwrap_or_default()
    }

    /// Deadlock iff the configuration is non-terminal and no processor can
    /// step; the report lists each blocked head with the unmet condition.
    pub fn classify_stuck(&self, config: &Configuration) -> StuckClass {
        if config.is_terminal() {
            return StuckClass::Live;
        }
        let mut blocked = Vec::new();
        for &p in config.queues.keys() {
            match self.attempt(config, p) {
                Ok(_) => return StuckClass::Live,
                Err(BlockReason::EmptyQueue) => {}
                Err(reason) => blocked.push(BlockedProcessor {
                    proc: p,
                    head: self.render_head(config, p),
                    reason,
                }),
            }
        }
        StuckClass::Deadlock(blocked)
    }

    // --- dispatch -------------------------------------------------------------

    fn attempt(&self, config: &Configuration, p: Proc) -> RuleResult {
        let head = config.head(p).ok_or(BlockReason::EmptyQueue)?;
        match head.clone() {
            Statement::Instruction { instr, ctx } => match instr {
                Instruction::Assign { target, expr } => {
                    self.rule_assignment(config, p, &target, &expr, ctx)
                }
                Instruction::Call {
                    target,
                    feature,
                    args,
                } => self.rule_command_instruction(config, p, &target, feature, &args, ctx),
                Instruction::Create {
                    target,
                    feature,
                    args,
                } => self.rule_create(config, p, &target, feature, &args, ctx),
                Instruction::If {
                    condition,
                    then_branch,
                    else_branch,
                } => self.rule_if(config, p, &condition, &then_branch, &else_branch, ctx),
                Instruction::Until { condition, body } => {
                    self.rule_loop(config, p, &condition, &body, ctx)
                }
            },
            Statement::Op(op) => match op {
                Op::Issue { target, statements } => self.rule_issue(config, p, target, statements),
                Op::ExecuteDelegated { body, env, locks } => {
                    self.rule_execute_delegated(config, p, body, env, locks)
                }
                Op::LeaveDelegated => self.rule_leave_delegated(config, p),
                Op::Eval { channel, expr, ctx } => self.rule_eval(config, p, channel, &expr, ctx),
                Op::Wait { channel } => Err(BlockReason::ChannelUnresolved { channel }),
                Op::Result { channel, value } => {
                    let v = value
                        .value()
                        .ok_or_else(|| condition("result value is an unresolved channel access"))?;
                    self.rule_wait_sender(config, p, channel, Some(v))
                }
                Op::Notify { channel } => self.rule_wait_sender(config, p, channel, None),
                Op::Read { name, channel } => self.rule_read(config, p, &name, channel),
                Op::Write { name, value } => self.rule_write(config, p, &name, value),
                Op::Lock { locks } => self.rule_lock(config, p, &locks),
                Op::Unlock => self.rule_unlock(config, p),
                Op::PopObtainedRqLocks => self.rule_pop_obtained(config, p),
                Op::CallCommand {
                    target,
                    feature,
                    args,
                    arg_exprs,
                    ctx,
                } => self.rule_call(config, p, None, target, feature, &args, &arg_exprs, ctx),
                Op::CallQuery {
                    channel,
                    target,
                    feature,
                    args,
                    arg_exprs,
                    ctx,
                } => self.rule_call(
                    config,
                    p,
                    Some(channel),
                    target,
                    feature,
                    &args,
                    &arg_exprs,
                    ctx,
                ),
                Op::Apply {
                    channel,
                    target,
                    feature,
                    args,
                    caller,
                    passed_rq,
                    passed_cs,
                } => self.rule_apply(
                    config, p, channel, target, feature, &args, caller, &passed_rq, &passed_cs,
                ),
                Op::CheckPreAndLockRqs { locks, feature } => {
                    self.rule_check_pre(config, p, &locks, feature)
                }
                Op::CheckPostAndUnlockRqs { locks, feature } => {
                    self.rule_check_post(config, p, &locks, feature)
                }
                Op::ReturnQuery {
                    channel,
                    value,
                    caller,
                } => self.rule_return_query(config, p, channel, value, caller),
                Op::ReturnCommand { channel, caller } => {
                    self.rule_return_command(config, p, channel, caller)
                }
                Op::SetNotFreshFunction { feature, value } => {
                    self.rule_set_not_fresh_function(config, p, feature, value)
                }
                Op::SetNotFreshProcedure { feature } => {
                    self.rule_set_not_fresh_procedure(config, p, feature)
                }
                Op::SetNotFreshWithResult { feature } => {
                    self.rule_set_not_fresh_with_result(config, p, feature)
                }
                Op::Provided {
                    condition,
                    then_branch,
                    else_branch,
                } => self.rule_provided(config, p, condition, then_branch, else_branch),
                Op::Assert {
                    kind,
                    condition,
                    feature,
                } => self.rule_assert(config, p, kind, condition, feature),
                Op::Nop => Ok(StepResult {
                    rule: RuleId::NoOperation,
                    config: replace_head(config, p, Vec::new()),
                    violation: None,
                }),
            },
        }
    }

    // --- mechanisms -------------------------------------------------------------

    fn rule_issue(
        &self,
        config: &Configuration,
        p: Proc,
        q: Proc,
        statements: Vec<Statement>,
    ) -> RuleResult {
        let state = &config.state;
        if state.locks_passed(p).map_err(pre)? {
            return Err(condition(format!("{p} has passed its locks")));
        }
        if q == p {
            // Non-separate: prepend to the own action queue.
            if !state.cs_locks(p).map_err(pre)?.contains(&p) {
                return Err(condition(format!("{p} does not hold its call stack lock")));
            }
            return Ok(StepResult {
                rule: RuleId::IssueNonSeparate,
                config: replace_head(config, p, statements),
                violation: None,
            });
        }
        let q_holds_lock_on_p = state.rq_locks(q).map_err(pre)?.contains(&p)
            || state.cs_locks(q).map_err(pre)?.contains(&p);
        if !q_holds_lock_on_p {
            // Separate: append to the end of q's action queue.
            if !state.rq_locks(p).map_err(pre)?.contains(&q) {
                return Err(condition(format!(
                    "{p} does not hold the request queue lock of {q}"
                )));
            }
            let mut next = replace_head(config, p, Vec::new());
            next.queues.entry(q).or_default().extend(statements);
            return Ok(StepResult {
                rule: RuleId::IssueSeparate,
                config: next,
                violation: None,
            });
        }
        // Separate callback: prepend to q's action queue.
        if !self.toggles.separate_callback_issue {
            return Err(condition(
                "separate callback issuing is disabled in this build",
            ));
        }
        if !state.cs_locks(p).map_err(pre)?.contains(&q) {
            return Err(condition(format!(
                "{p} does not hold the call stack lock of {q}"
            )));
        }
        let mut next = replace_head(config, p, Vec::new());
        let queue = next.queues.entry(q).or_default();
        let mut new_queue = statements;
        new_queue.extend(queue.iter().cloned());
        *queue = new_queue;
        Ok(StepResult {
            rule: RuleId::IssueSeparateCallback,
            config: next,
            violation: None,
        })
    }

    fn rule_execute_delegated(
        &self,
        config: &Configuration,
        p: Proc,
        body: Vec<Statement>,
        env: crate::state::Env,
        locks: BTreeSet<Proc>,
    ) -> RuleResult {
        let state = &config.state;
        for x in &locks {
            for y in state.procs() {
                if state.rq_locks(*y).map_err(pre)?.contains(x) {
                    return Err(condition(format!(
                        "request queue lock of {x} still claimed by {y}"
                    )));
                }
            }
            if !state.rq_locked(*x).map_err(pre)? {
                return Err(condition(format!("request queue of {x} is not locked")));
            }
        }
        let state = state
            .push_env(p, env)
            .and_then(|s| s.delegate_obtained_rq_locks(p, &locks))
            .map_err(pre)?;
        let mut replacement = body;
        replacement.push(Statement::op(Op::LeaveDelegated));
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::ExecuteDelegated,
            config: next,
            violation: None,
        })
    }

    fn rule_leave_delegated(&self, config: &Configuration, p: Proc) -> RuleResult {
        let state = &config.state;
        if state.envs(p).is_empty() {
            return Err(condition(format!("{p} has no environment to leave")));
        }
        let state = state
            .pop_env(p)
            .and_then(|s| s.pop_obtained_rq_locks(p))
            .map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.state = state;
        Ok(StepResult {
            rule: RuleId::LeaveDelegated,
            config: next,
            violation: None,
        })
    }

    /// The sender side of the notification mechanism: a `result` or
    /// `notify` at the head of `p` matched with a `wait` on the same
    /// channel, in `p`'s own queue (non-separate) or another queue
    /// (separate).
    fn rule_wait_sender(
        &self,
        config: &Configuration,
        p: Proc,
        channel: Channel,
        value: Option<Value>,
    ) -> RuleResult {
        // Non-separate: the wait is later in p's own queue.
        if let Some(i) = config.find_wait(p, channel) {
            debug_assert!(i >= 1, "head is the sender, not the wait");
            let mut next = config.clone();
            let queue = next.queues.get_mut(&p).expect("queue exists");
            queue.remove(i);
            queue.remove(0);
            if let Some(v) = value {
                // Statements after the removed wait start at i - 1.
                next.substitute_suffix(p, i - 1, channel, v);
                debug_assert!(
                    !next.mentions_channel_data(channel),
                    "substitution left channel data behind"
                );
            }
            let rule = if value.is_some() {
                RuleId::WaitAndResultNonSeparate
            } else {
                RuleId::WaitAndNotifyNonSeparate
            };
            return Ok(StepResult {
                rule,
                config: next,
                violation: None,
            });
        }
        // Separate: the wait is in another processor's queue.
        if let Some((waiter, i)) = config.find_waiter(channel) {
            if waiter != p {
                let mut next = config.clone();
                next.queues
                    .get_mut(&waiter)
                    .expect("queue exists")
                    .remove(i);
                next.queues.get_mut(&p).expect("queue exists").remove(0);
                if let Some(v) = value {
                    next.substitute_suffix(waiter, i, channel, v);
                }
                let rule = if value.is_some() {
                    RuleId::WaitAndResultSeparate
                } else {
                    RuleId::WaitAndNotifySeparate
                };
                return Ok(StepResult {
                    rule,
                    config: next,
                    violation: None,
                });
            }
        }
        Err(BlockReason::ChannelUnresolved { channel })
    }

    fn rule_read(
        &self,
        config: &Configuration,
        p: Proc,
        name: &str,
        channel: Channel,
    ) -> RuleResult {
        let v = config.state.value(p, name).map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.substitute_suffix(p, 0, channel, v);
        debug_assert!(
            !next.mentions_channel_data(channel),
            "read substitution left channel data behind"
        );
        Ok(StepResult {
            rule: RuleId::Read,
            config: next,
            violation: None,
        })
    }

    fn rule_write(
        &self,
        config: &Configuration,
        p: Proc,
        name: &str,
        value: Operand,
    ) -> RuleResult {
        let v = value
            .value()
            .ok_or_else(|| condition("write value is an unresolved channel access"))?;
        let state = config.state.set_val(&self.ir, p, name, v).map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.state = state;
        Ok(StepResult {
            rule: RuleId::Write,
            config: next,
            violation: None,
        })
    }

    fn rule_lock(&self, config: &Configuration, p: Proc, locks: &BTreeSet<Proc>) -> RuleResult {
        for q in locks {
            if config.state.rq_locked(*q).map_err(pre)? {
                return Err(BlockReason::RequestQueueHeld { requested: *q });
            }
        }
        let state = config.state.lock_rqs(p, locks).map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.state = state;
        Ok(StepResult {
            rule: RuleId::Lock,
            config: next,
            violation: None,
        })
    }

    fn rule_unlock(&self, config: &Configuration, p: Proc) -> RuleResult {
        let state = &config.state;
        if !state.rq_locked(p).map_err(pre)? {
            return Err(condition(format!("request queue of {p} is not locked")));
        }
        for q in state.procs() {
            if state.rq_locks(*q).map_err(pre)?.contains(&p) {
                return Err(condition(format!(
                    "request queue lock of {p} still held by {q}"
                )));
            }
        }
        let state = state.unlock_rq(p).map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.state = state;
        Ok(StepResult {
            rule: RuleId::Unlock,
            config: next,
            violation: None,
        })
    }

    fn rule_pop_obtained(&self, config: &Configuration, p: Proc) -> RuleResult {
        let state = config.state.pop_obtained_rq_locks(p).map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.state = state;
        Ok(StepResult {
            rule: RuleId::PopObtainedRqLocks,
            config: next,
            violation: None,
        })
    }

    fn rule_set_not_fresh_function(
        &self,
        config: &Configuration,
        p: Proc,
        feature: FeatureId,
        value: Operand,
    ) -> RuleResult {
        let v = value
            .value()
            .ok_or_else(|| condition("once result is an unresolved channel access"))?;
        let r = value_as_ref(v)?;
        let state = config
            .state
            .set_once_func_not_fresh(&self.ir, p, feature, r)
            .map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.state = state;
        Ok(StepResult {
            rule: RuleId::SetNotFreshFunction,
            config: next,
            violation: None,
        })
    }

    fn rule_set_not_fresh_procedure(
        &self,
        config: &Configuration,
        p: Proc,
        feature: FeatureId,
    ) -> RuleResult {
        let state = config
            .state
            .set_once_proc_not_fresh(&self.ir, p, feature)
            .map_err(pre)?;
        let mut next = replace_head(config, p, Vec::new());
        next.state = state;
        Ok(StepResult {
            rule: RuleId::SetNotFreshProcedure,
            config: next,
            violation: None,
        })
    }

    fn rule_set_not_fresh_with_result(
        &self,
        config: &Configuration,
        p: Proc,
        feature: FeatureId,
    ) -> RuleResult {
        let state = &config.state;
        let top = state
            .envs(p)
            .last()
            .ok_or_else(|| condition(format!("{p} has no environment")))?;
        if !top.contains("Result") {
            return Err(condition("top environment has no Result entity"));
        }
        let (state, ids) = state.alloc_ids(1);
        let a = Channel(ids[0]);
        let replacement = vec![
            Statement::op(Op::Read {
                name: "Result".to_string(),
                channel: a,
            }),
            Statement::op(Op::SetNotFreshFunction {
                feature,
                value: Operand::ChannelData(a),
            }),
        ];
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::SetNotFreshWithResult,
            config: next,
            violation: None,
        })
    }

    fn rule_provided(
        &self,
        config: &Configuration,
        p: Proc,
        cond: Operand,
        then_branch: Vec<Statement>,
        else_branch: Vec<Statement>,
    ) -> RuleResult {
        let v = cond.value().ok_or(BlockReason::Condition {
            detail: "condition is an unresolved channel access".to_string(),
        })?;
        match self.truthiness(&config.state, v) {
            Some(true) => Ok(StepResult {
                rule: RuleId::ConditionalTrue,
                config: replace_head(config, p, then_branch),
                violation: None,
            }),
            Some(false) => Ok(StepResult {
                rule: RuleId::ConditionalFalse,
                config: replace_head(config, p, else_branch),
                violation: None,
            }),
            None => Err(condition("condition is not a boolean")),
        }
    }

    fn rule_assert(
        &self,
        config: &Configuration,
        p: Proc,
        kind: AssertionKind,
        cond: Operand,
        feature: FeatureId,
    ) -> RuleResult {
        let v = cond
            .value()
            .ok_or_else(|| condition("assertion value is an unresolved channel access"))?;
        let holds = self
            .truthiness(&config.state, v)
            .ok_or_else(|| condition("assertion value is not a boolean"))?;
        let next = replace_head(config, p, Vec::new());
        Ok(StepResult {
            rule: RuleId::AssertionCheck,
            config: next,
            violation: (!holds).then(|| AssertionViolation {
                proc: p,
                kind,
                feature: self.ir.feature_label(feature),
            }),
        })
    }

    /// Boolean interpretation of a condition value: a boolean, or a
    /// reference to a BOOLEAN object whose `item` decides.
    fn truthiness(&self, state: &State, v: Value) -> Option<bool> {
        match v {
            Value::Bool(b) => Some(b),
            Value::Ref(r) if !r.is_void() => {
                let obj = state.ref_obj(r).ok()?;
                if obj.class_type != self.ir.boolean_class {
                    return None;
                }
                match obj.att_val("item").ok()? {
                    Value::Bool(b) => Some(b),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    // --- expressions ---------------------------------------------------------

    fn rule_eval(
        &self,
        config: &Configuration,
        p: Proc,
        channel: Channel,
        expr: &Expression,
        ctx: ExprCtx,
    ) -> RuleResult {
        match expr {
            Expression::Entity(name) => {
                let (state, ids) = config.state.alloc_ids(1);
                let a_prime = Channel(ids[0]);
                let replacement = vec![
                    Statement::op(Op::Read {
                        name: name.clone(),
                        channel: a_prime,
                    }),
                    Statement::op(Op::Result {
                        channel,
                        value: Operand::ChannelData(a_prime),
                    }),
                ];
                let mut next = replace_head(config, p, replacement);
                next.state = state;
                Ok(StepResult {
                    rule: RuleId::EntityExpression,
                    config: next,
                    violation: None,
                })
            }
            Expression::Literal(Literal::Void) => {
                let replacement = vec![Statement::op(Op::Result {
                    channel,
                    value: Operand::Val(Value::VOID),
                })];
                Ok(StepResult {
                    rule: RuleId::LiteralExpression,
                    config: replace_head(config, p, replacement),
                    violation: None,
                })
            }
            Expression::Literal(l) => {
                // A new object of the literal class type on the evaluating
                // processor, with `item` holding the represented value.
                let class = self.ir.literal_class(*l);
                let (state, obj) = config.state.new_obj(&self.ir, class);
                let obj_id = obj.id;
                let item = match l {
                    Literal::Bool(b) => Value::Bool(*b),
                    Literal::Int(v) => Value::Int(*v),
                    Literal::Char(c) => Value::Char(*c),
                    Literal::Void => unreachable!(),
                };
                let obj = obj.set_att_val("item", item).map_err(pre)?;
                let state = state.add_obj(p, obj).map_err(pre)?;
                let r = state.ref_of(obj_id).map_err(pre)?;
                let replacement = vec![Statement::op(Op::Result {
                    channel,
                    value: Operand::Val(Value::Ref(r)),
                })];
                let mut next = replace_head(config, p, replacement);
                next.state = state;
                Ok(StepResult {
                    rule: RuleId::LiteralExpression,
                    config: next,
                    violation: None,
                })
            }
            Expression::Call {
                target,
                feature,
                args,
            } => {
                let (state, mut statements, operands) =
                    self.eval_operands(&config.state, target, args, ctx);
                let (state, ids) = state.alloc_ids(1);
                let a_prime = Channel(ids[0]);
                statements.push(Statement::op(Op::CallQuery {
                    channel: a_prime,
                    target: operands[0],
                    feature: *feature,
                    args: operands[1..].to_vec(),
                    arg_exprs: args.clone(),
                    ctx,
                }));
                statements.push(Statement::op(Op::Result {
                    channel,
                    value: Operand::ChannelData(a_prime),
                }));
                let mut next = replace_head(config, p, statements);
                next.state = state;
                Ok(StepResult {
                    rule: RuleId::QueryExpression,
                    config: next,
                    violation: None,
                })
            }
        }
    }

    /// The shared eval/wait fan-out of call forms: one eval and one wait per
    /// target and argument expression, returning the channel-data operands.
    fn eval_operands(
        &self,
        state: &State,
        target: &Expression,
        args: &[Expression],
        ctx: ExprCtx,
    ) -> (State, Vec<Statement>, Vec<Operand>) {
        let count = 1 + args.len();
        let (state, ids) = state.alloc_ids(count);
        let channels: Vec<Channel> = ids.into_iter().map(Channel).collect();
        let mut statements = Vec::with_capacity(2 * count);
        for (i, expr) in std::iter::once(target).chain(args.iter()).enumerate() {
            statements.push(Statement::op(Op::Eval {
                channel: channels[i],
                expr: expr.clone(),
                ctx,
            }));
        }
        for channel in &channels {
            statements.push(Statement::op(Op::Wait { channel: *channel }));
        }
        let operands = channels.into_iter().map(Operand::ChannelData).collect();
        (state, statements, operands)
    }

    // --- instructions ----------------------------------------------------------

    fn rule_assignment(
        &self,
        config: &Configuration,
        p: Proc,
        target: &str,
        expr: &Expression,
        ctx: ExprCtx,
    ) -> RuleResult {
        let (state, ids) = config.state.alloc_ids(1);
        let a = Channel(ids[0]);
        let mut replacement = vec![
            Statement::op(Op::Eval {
                channel: a,
                expr: expr.clone(),
                ctx,
            }),
            Statement::op(Op::Wait { channel: a }),
            Statement::op(Op::Write {
                name: target.to_string(),
                value: Operand::ChannelData(a),
            }),
        ];
        if let Some(once_feature) = self.once_splice(target, ctx) {
            replacement.push(Statement::op(Op::SetNotFreshWithResult {
                feature: once_feature,
            }));
        }
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::Assignment,
            config: next,
            violation: None,
        })
    }

    /// A write to Result inside the body of a once function updates the
    /// once status right after the write.
    fn once_splice(&self, target: &str, ctx: ExprCtx) -> Option<FeatureId> {
        if target != "Result" {
            return None;
        }
        let ExprCtx::Feature(f) = ctx else {
            return None;
        };
        let feature = self.ir.feature(f);
        (feature.is_once && feature.kind == FeatureKind::Function).then_some(f)
    }

    fn rule_command_instruction(
        &self,
        config: &Configuration,
        p: Proc,
        target: &Expression,
        feature: FeatureId,
        args: &[Expression],
        ctx: ExprCtx,
    ) -> RuleResult {
        let (state, mut statements, operands) =
            self.eval_operands(&config.state, target, args, ctx);
        statements.push(Statement::op(Op::CallCommand {
            target: operands[0],
            feature,
            args: operands[1..].to_vec(),
            arg_exprs: args.to_vec(),
            ctx,
        }));
        let mut next = replace_head(config, p, statements);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::CommandInstruction,
            config: next,
            violation: None,
        })
    }

    fn rule_if(
        &self,
        config: &Configuration,
        p: Proc,
        cond: &Expression,
        then_branch: &[Instruction],
        else_branch: &[Instruction],
        ctx: ExprCtx,
    ) -> RuleResult {
        let (state, ids) = config.state.alloc_ids(1);
        let a = Channel(ids[0]);
        let replacement = vec![
            Statement::op(Op::Eval {
                channel: a,
                expr: cond.clone(),
                ctx,
            }),
            Statement::op(Op::Wait { channel: a }),
            Statement::op(Op::Provided {
                condition: Operand::ChannelData(a),
                then_branch: instruction_statements(then_branch, ctx),
                else_branch: instruction_statements(else_branch, ctx),
            }),
        ];
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::IfInstruction,
            config: next,
            violation: None,
        })
    }

    fn rule_loop(
        &self,
        config: &Configuration,
        p: Proc,
        cond: &Expression,
        body: &[Instruction],
        ctx: ExprCtx,
    ) -> RuleResult {
        let (state, ids) = config.state.alloc_ids(1);
        let a = Channel(ids[0]);
        let mut else_branch = instruction_statements(body, ctx);
        else_branch.push(Statement::Instruction {
            instr: Instruction::Until {
                condition: cond.clone(),
                body: body.to_vec(),
            },
            ctx,
        });
        let replacement = vec![
            Statement::op(Op::Eval {
                channel: a,
                expr: cond.clone(),
                ctx,
            }),
            Statement::op(Op::Wait { channel: a }),
            Statement::op(Op::Provided {
                condition: Operand::ChannelData(a),
                then_branch: Vec::new(),
                else_branch,
            }),
        ];
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::LoopInstruction,
            config: next,
            violation: None,
        })
    }

    // --- feature calls -----------------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn rule_call(
        &self,
        config: &Configuration,
        p: Proc,
        query_channel: Option<Channel>,
        target: Operand,
        feature: FeatureId,
        args: &[Operand],
        arg_exprs: &[Expression],
        ctx: ExprCtx,
    ) -> RuleResult {
        let state = &config.state;
        let target_value = target
            .value()
            .ok_or_else(|| condition("call target is an unresolved channel access"))?;
        let r0 = value_as_ref(target_value)?;
        if r0.is_void() {
            return Err(condition("call on void target"));
        }
        let q = state.handler(r0).map_err(pre)?;
        let mut arg_refs = Vec::with_capacity(args.len());
        for a in args {
            let v = a
                .value()
                .ok_or_else(|| condition("call argument is an unresolved channel access"))?;
            arg_refs.push(v);
        }

        // Lock passing: pass everything if a controlled actual is attached
        // to an attached formal of reference type, or on a separate
        // callback.
        let typing = self.typing();
        let f = self.ir.feature(feature);
        let controlled_ref_arg = q != p
            && arg_exprs.iter().enumerate().any(|(i, e)| {
                let formal: &TypeTriple = &f.formals[i].ty;
                formal.attached()
                    && self.ir.class(formal.class).is_ref()
                    && typing.is_controlled(e, ctx)
            });
        let callback = q != p
            && (state
                .rq_locks(q)
                .map(|locks| locks.contains(&p))
                .unwrap_or(false)
                || state
                    .cs_locks(q)
                    .map(|locks| locks.contains(&p))
                    .unwrap_or(false));
        let (passed_rq, passed_cs) = if controlled_ref_arg || callback {
            (
                state.rq_locks(p).map_err(pre)?,
                state.cs_locks(p).map_err(pre)?,
            )
        } else {
            (BTreeSet::new(), BTreeSet::new())
        };
        let passing = !passed_rq.is_empty() || !passed_cs.is_empty();

        let (state, channel) = match query_channel {
            Some(a) => (state.clone(), a),
            None => {
                let (s, ids) = state.alloc_ids(1);
                (s, Channel(ids[0]))
            }
        };
        let apply = Statement::op(Op::Apply {
            channel,
            target: Operand::Val(Value::Ref(r0)),
            feature,
            args: arg_refs.into_iter().map(Operand::Val).collect(),
            caller: p,
            passed_rq,
            passed_cs,
        });
        let mut replacement = vec![Statement::op(Op::Issue {
            target: q,
            statements: vec![apply],
        })];
        let rule = if query_channel.is_some() {
            replacement.push(Statement::op(Op::Wait { channel }));
            RuleId::CallQuery
        } else {
            if passing {
                replacement.push(Statement::op(Op::Wait { channel }));
            }
            RuleId::CallCommand
        };
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule,
            config: next,
            violation: None,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn rule_apply(
        &self,
        config: &Configuration,
        p: Proc,
        channel: Channel,
        target: Operand,
        feature: FeatureId,
        args: &[Operand],
        caller: Proc,
        passed_rq: &BTreeSet<Proc>,
        passed_cs: &BTreeSet<Proc>,
    ) -> RuleResult {
        let state = &config.state;
        let r0 = value_as_ref(
            target
                .value()
                .ok_or_else(|| condition("apply target is an unresolved channel access"))?,
        )?;
        // Each processor can only apply features on its own objects.
        if state.handler(r0).map_err(pre)? != p {
            return Err(condition(format!(
                "{p} is not the handler of the target {r0}"
            )));
        }
        let mut arg_refs = Vec::with_capacity(args.len());
        for a in args {
            arg_refs.push(value_as_ref(a.value().ok_or_else(|| {
                condition("apply argument is an unresolved channel access")
            })?)?);
        }
        // Enabling probe: lock passing must be possible and must leave p in
        // possession of its own locks.
        let passed = state
            .pass_locks(caller, p, passed_rq, passed_cs)
            .map_err(pre)?;
        if passed.locks_passed(p).map_err(pre)? {
            return Err(condition(format!("{p} has passed its locks")));
        }
        let f = self.ir.feature(feature);
        match f.kind {
            FeatureKind::Attribute => {
                let state = passed
                    .push_env_with_feature(&self.ir, p, feature, r0, &arg_refs)
                    .map_err(pre)?;
                let (state, ids) = state.alloc_ids(1);
                let a_prime = Channel(ids[0]);
                let replacement = vec![
                    Statement::op(Op::Eval {
                        channel: a_prime,
                        expr: Expression::Entity(f.name.clone()),
                        ctx: ExprCtx::Feature(feature),
                    }),
                    Statement::op(Op::Wait { channel: a_prime }),
                    Statement::op(Op::ReturnQuery {
                        channel,
                        value: Operand::ChannelData(a_prime),
                        caller,
                    }),
                ];
                let mut next = replace_head(config, p, replacement);
                next.state = state;
                Ok(StepResult {
                    rule: RuleId::ApplyAttribute,
                    config: next,
                    violation: None,
                })
            }
            FeatureKind::Function | FeatureKind::Procedure => {
                if f.is_once && !state.is_fresh(p, feature) {
                    self.apply_non_fresh_once(
                        config, p, channel, feature, r0, &arg_refs, caller, passed,
                    )
                } else {
                    self.apply_routine(
                        config, p, channel, feature, r0, &arg_refs, caller, passed_rq, passed_cs,
                    )
                }
            }
        }
    }

    /// Application of a non-once routine or a fresh once routine: set the
    /// once status, pass locks, bind arguments, then synchronize, run the
    /// body, evaluate postcondition and invariant, and return.
    #[allow(clippy::too_many_arguments)]
    fn apply_routine(
        &self,
        config: &Configuration,
        p: Proc,
        channel: Channel,
        feature: FeatureId,
        r0: Ref,
        args: &[Ref],
        caller: Proc,
        passed_rq: &BTreeSet<Proc>,
        passed_cs: &BTreeSet<Proc>,
    ) -> RuleResult {
        let f = self.ir.feature(feature);
        // Once status is set before argument passing so that a deep import
        // does not take over the status this application is about to create.
        let pre_set = if f.is_once {
            match f.kind {
                FeatureKind::Function => config
                    .state
                    .set_once_func_not_fresh(&self.ir, p, feature, Ref::VOID)
                    .map_err(pre)?,
                FeatureKind::Procedure => config
                    .state
                    .set_once_proc_not_fresh(&self.ir, p, feature)
                    .map_err(pre)?,
                FeatureKind::Attribute => unreachable!(),
            }
        } else {
            config.state.clone()
        };
        let state = pre_set
            .pass_locks(caller, p, passed_rq, passed_cs)
            .map_err(pre)?
            .push_env_with_feature(&self.ir, p, feature, r0, args)
            .map_err(pre)?;

        if let Some(op) = f.builtin {
            return self.apply_builtin(config, state, p, channel, feature, op, r0, caller);
        }

        // Synchronization: required locks per formal of attached reference
        // type, split into call stack locks (self and callbacks) and
        // request queue locks; the missing ones are obtained by
        // check_pre_and_lock_rqs.
        let mut required: BTreeSet<Proc> = BTreeSet::from([p]);
        for (formal, r) in f.formals.iter().zip(args.iter()) {
            if formal.ty.attached() && self.ir.class(formal.ty.class).is_ref() {
                if r.is_void() {
                    return Err(condition(format!(
                        "void actual for attached formal '{}'",
                        formal.name
                    )));
                }
                required.insert(state.handler(*r).map_err(pre)?);
            }
        }
        let mut required_cs: BTreeSet<Proc> = BTreeSet::new();
        for &x in &required {
            if x == p
                || state.rq_locks(x).map_err(pre)?.contains(&p)
                || state.cs_locks(x).map_err(pre)?.contains(&p)
            {
                required_cs.insert(x);
            }
        }
        let p_cs = state.cs_locks(p).map_err(pre)?;
        for x in &required_cs {
            if !p_cs.contains(x) {
                return Err(condition(format!(
                    "call stack lock of {x} is not available to {p}"
                )));
            }
        }
        let p_rq = state.rq_locks(p).map_err(pre)?;
        let missing: BTreeSet<Proc> = required
            .difference(&required_cs)
            .copied()
            .filter(|x| !p_rq.contains(x))
            .collect();

        let mut replacement = vec![Statement::op(Op::CheckPreAndLockRqs {
            locks: missing.clone(),
            feature,
        })];
        replacement.extend(instruction_statements(&f.body, ExprCtx::Feature(feature)));
        replacement.push(Statement::op(Op::CheckPostAndUnlockRqs {
            locks: missing,
            feature,
        }));
        let class = self.ir.class(f.class);
        let mut state = state;
        if class.inv_exists() && f.exported {
            let (s, ids) = state.alloc_ids(1);
            state = s;
            let a_inv = Channel(ids[0]);
            replacement.push(Statement::op(Op::Eval {
                channel: a_inv,
                expr: class.invariant.clone().expect("invariant exists"),
                ctx: ExprCtx::Invariant(f.class),
            }));
            replacement.push(Statement::op(Op::Wait { channel: a_inv }));
            replacement.push(Statement::op(Op::Assert {
                kind: AssertionKind::Invariant,
                condition: Operand::ChannelData(a_inv),
                feature,
            }));
        }
        if f.kind == FeatureKind::Function {
            let (s, ids) = state.alloc_ids(1);
            state = s;
            let a_prime = Channel(ids[0]);
            replacement.push(Statement::op(Op::Read {
                name: "Result".to_string(),
                channel: a_prime,
            }));
            replacement.push(Statement::op(Op::ReturnQuery {
                channel,
                value: Operand::ChannelData(a_prime),
                caller,
            }));
        } else {
            replacement.push(Statement::op(Op::ReturnCommand { channel, caller }));
        }
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::ApplyRoutine,
            config: next,
            violation: None,
        })
    }

    /// A non-fresh once routine does not run its body: a function returns
    /// the stored once result, a procedure just returns.
    #[allow(clippy::too_many_arguments)]
    fn apply_non_fresh_once(
        &self,
        config: &Configuration,
        p: Proc,
        channel: Channel,
        feature: FeatureId,
        r0: Ref,
        args: &[Ref],
        caller: Proc,
        passed: State,
    ) -> RuleResult {
        let f = self.ir.feature(feature);
        let state = passed
            .push_env_with_feature(&self.ir, p, feature, r0, args)
            .map_err(pre)?;
        let mut replacement = Vec::new();
        let class = self.ir.class(f.class);
        let mut state = state;
        if class.inv_exists() && f.exported {
            let (s, ids) = state.alloc_ids(1);
            state = s;
            let a_inv = Channel(ids[0]);
            replacement.push(Statement::op(Op::Eval {
                channel: a_inv,
                expr: class.invariant.clone().expect("invariant exists"),
                ctx: ExprCtx::Invariant(f.class),
            }));
            replacement.push(Statement::op(Op::Wait { channel: a_inv }));
            replacement.push(Statement::op(Op::Assert {
                kind: AssertionKind::Invariant,
                condition: Operand::ChannelData(a_inv),
                feature,
            }));
        }
        if f.kind == FeatureKind::Function {
            let result = state.once_result(p, feature).map_err(pre)?;
            replacement.push(Statement::op(Op::ReturnQuery {
                channel,
                value: Operand::Val(Value::Ref(result)),
                caller,
            }));
        } else {
            replacement.push(Statement::op(Op::ReturnCommand { channel, caller }));
        }
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::ApplyNonFreshOnce,
            config: next,
            violation: None,
        })
    }

    /// Built-in features execute as atomic apply bodies producing fresh
    /// objects on the executing processor.
    #[allow(clippy::too_many_arguments)]
    fn apply_builtin(
        &self,
        config: &Configuration,
        state: State,
        p: Proc,
        channel: Channel,
        feature: FeatureId,
        op: crate::frontend::ir::BuiltinOp,
        r0: Ref,
        caller: Proc,
    ) -> RuleResult {
        let f = self.ir.feature(feature);
        match super::builtins::execute(&state, &self.ir, p, op, feature, r0) {
            Ok((state, result)) => {
                let replacement = if f.kind == FeatureKind::Function {
                    let r = result.expect("builtin function produces a result");
                    vec![Statement::op(Op::ReturnQuery {
                        channel,
                        value: Operand::Val(Value::Ref(r)),
                        caller,
                    })]
                } else {
                    vec![Statement::op(Op::ReturnCommand { channel, caller })]
                };
                let mut next = replace_head(config, p, replacement);
                next.state = state;
                Ok(StepResult {
                    rule: RuleId::ApplyRoutine,
                    config: next,
                    violation: None,
                })
            }
            Err(detail) => {
                // A built-in contract violation halts the processor with a
                // diagnostic instead of wedging the run.
                let next = replace_head(config, p, Vec::new());
                Ok(StepResult {
                    rule: RuleId::ApplyRoutine,
                    config: next,
                    violation: Some(AssertionViolation {
                        proc: p,
                        kind: AssertionKind::Postcondition,
                        feature: format!("{} ({detail})", self.ir.feature_label(feature)),
                    }),
                })
            }
        }
    }

    fn rule_check_pre(
        &self,
        config: &Configuration,
        p: Proc,
        locks: &BTreeSet<Proc>,
        feature: FeatureId,
    ) -> RuleResult {
        let f = self.ir.feature(feature);
        let mut state = config.state.clone();
        let mut replacement = vec![Statement::op(Op::Lock {
            locks: locks.clone(),
        })];
        if let Some(pre_expr) = &f.pre {
            let (s, ids) = state.alloc_ids(1);
            state = s;
            let a = Channel(ids[0]);
            // On failure: release the request queues and try again; the
            // precondition is a wait condition.
            let mut retry = Vec::new();
            for q in locks {
                retry.push(Statement::op(Op::Issue {
                    target: *q,
                    statements: vec![Statement::op(Op::Unlock)],
                }));
            }
            retry.push(Statement::op(Op::PopObtainedRqLocks));
            retry.push(Statement::op(Op::CheckPreAndLockRqs {
                locks: locks.clone(),
                feature,
            }));
            replacement.push(Statement::op(Op::Eval {
                channel: a,
                expr: pre_expr.clone(),
                ctx: ExprCtx::Feature(feature),
            }));
            replacement.push(Statement::op(Op::Wait { channel: a }));
            replacement.push(Statement::op(Op::Provided {
                condition: Operand::ChannelData(a),
                then_branch: Vec::new(),
                else_branch: retry,
            }));
        }
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::CheckPreAndLockRqs,
            config: next,
            violation: None,
        })
    }

    fn rule_check_post(
        &self,
        config: &Configuration,
        p: Proc,
        locks: &BTreeSet<Proc>,
        feature: FeatureId,
    ) -> RuleResult {
        let state = &config.state;
        if locks.contains(&p) {
            return Err(condition(
                "a processor never obtains its own request queue lock",
            ));
        }
        let f = self.ir.feature(feature);
        let typing = self.typing();
        let ctx = ExprCtx::Feature(feature);

        // The postcondition can be evaluated asynchronously by one of the
        // processors locked in the synchronization step if every call in it
        // only needs those locks and no lock passing is involved.
        let async_candidate = match &f.post {
            Some(post) if !locks.is_empty() => {
                let mut all_targets_covered = true;
                for target in targets(post) {
                    let covered = typing
                        .controlling_entity(target, ctx)
                        .ok()
                        .and_then(|entity| state.value(p, &entity).ok())
                        .and_then(|v| v.as_ref())
                        .and_then(|r| state.handler(r).ok())
                        .map(|h| locks.contains(&h))
                        .unwrap_or(false);
                    if !covered {
                        all_targets_covered = false;
                        break;
                    }
                }
                let lock_passing_involved = args_of(post).iter().any(|(arg, called, index)| {
                    let called_feature = self.ir.feature(*called);
                    let formal = &called_feature.formals[*index - 1];
                    formal.ty.attached()
                        && self.ir.class(formal.ty.class).is_ref()
                        && typing.is_controlled(arg, ctx)
                });
                if all_targets_covered && !lock_passing_involved {
                    locks.iter().min().copied()
                } else {
                    None
                }
            }
            _ => None,
        };

        let mut state = state.clone();
        let mut replacement = Vec::new();
        match (f.post.clone(), async_candidate) {
            (Some(post), Some(g0)) => {
                let (s, ids) = state.alloc_ids(1);
                state = s;
                let a = Channel(ids[0]);
                let mut body = vec![
                    Statement::op(Op::Eval {
                        channel: a,
                        expr: post,
                        ctx,
                    }),
                    Statement::op(Op::Wait { channel: a }),
                    Statement::op(Op::Assert {
                        kind: AssertionKind::Postcondition,
                        condition: Operand::ChannelData(a),
                        feature,
                    }),
                ];
                for g in locks.iter().filter(|&&g| g != g0) {
                    body.push(Statement::op(Op::Issue {
                        target: *g,
                        statements: vec![Statement::op(Op::Unlock)],
                    }));
                }
                let env = state
                    .envs(p)
                    .last()
                    .cloned()
                    .ok_or_else(|| condition(format!("{p} has no environment")))?;
                replacement.push(Statement::op(Op::Issue {
                    target: g0,
                    statements: vec![
                        Statement::op(Op::ExecuteDelegated {
                            body,
                            env,
                            locks: locks.clone(),
                        }),
                        Statement::op(Op::Unlock),
                    ],
                }));
                replacement.push(Statement::op(Op::PopObtainedRqLocks));
            }
            (post, _) => {
                if let Some(post) = post {
                    let (s, ids) = state.alloc_ids(1);
                    state = s;
                    let a = Channel(ids[0]);
                    replacement.push(Statement::op(Op::Eval {
                        channel: a,
                        expr: post,
                        ctx,
                    }));
                    replacement.push(Statement::op(Op::Wait { channel: a }));
                    replacement.push(Statement::op(Op::Assert {
                        kind: AssertionKind::Postcondition,
                        condition: Operand::ChannelData(a),
                        feature,
                    }));
                }
                for q in locks {
                    replacement.push(Statement::op(Op::Issue {
                        target: *q,
                        statements: vec![Statement::op(Op::Unlock)],
                    }));
                }
                replacement.push(Statement::op(Op::PopObtainedRqLocks));
            }
        }
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::CheckPostAndUnlockRqs,
            config: next,
            violation: None,
        })
    }

    fn rule_return_query(
        &self,
        config: &Configuration,
        p: Proc,
        channel: Channel,
        value: Operand,
        caller: Proc,
    ) -> RuleResult {
        let state = &config.state;
        let r = value_as_ref(
            value
                .value()
                .ok_or_else(|| condition("return value is an unresolved channel access"))?,
        )?;
        // Expanded results crossing processors are deep imported by the
        // caller.
        let (state, r_prime) = if !r.is_void()
            && self
                .ir
                .class(state.ref_obj(r).map_err(pre)?.class_type)
                .is_exp
            && state.handler(r).map_err(pre)? != caller
        {
            let imported = state.deep_import(&self.ir, caller, r).map_err(pre)?;
            let new_ref = imported.last_imported_ref().map_err(pre)?;
            (imported, new_ref)
        } else {
            (state.clone(), r)
        };
        let state = state
            .pop_env(p)
            .and_then(|s| s.revoke_locks(caller, p))
            .map_err(pre)?;
        let replacement = vec![Statement::op(Op::Result {
            channel,
            value: Operand::Val(Value::Ref(r_prime)),
        })];
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::ReturnQuery,
            config: next,
            violation: None,
        })
    }

    fn rule_return_command(
        &self,
        config: &Configuration,
        p: Proc,
        channel: Channel,
        caller: Proc,
    ) -> RuleResult {
        let state = &config.state;
        // The notification is only needed when the caller passed locks and
        // is waiting for them to come back; decided on the pre state.
        let notify = state.locks_passed(caller).map_err(pre)?;
        let state = state
            .pop_env(p)
            .and_then(|s| s.revoke_locks(caller, p))
            .map_err(pre)?;
        let replacement = if notify {
            vec![Statement::op(Op::Notify { channel })]
        } else {
            Vec::new()
        };
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::ReturnCommand,
            config: next,
            violation: None,
        })
    }

    // --- creation ------------------------------------------------------------------

    fn rule_create(
        &self,
        config: &Configuration,
        p: Proc,
        target: &str,
        feature: FeatureId,
        args: &[Expression],
        ctx: ExprCtx,
    ) -> RuleResult {
        use crate::frontend::ir::ProcTag;
        let typing = self.typing();
        let entity_type = typing
            .entity_type(target, ctx)
            .map_err(|e| condition(format!("create target: {e}")))?;
        let class = entity_type.class;
        let call_instruction = Statement::Instruction {
            instr: Instruction::Call {
                target: Expression::Entity(target.to_string()),
                feature,
                args: args.to_vec(),
            },
            ctx,
        };
        let once_splice = self.once_splice(target, ctx);
        match &entity_type.processor {
            ProcTag::SeparateTop => self.create_with_new_proc(
                config,
                p,
                RuleId::CreateTop,
                None,
                class,
                feature,
                call_instruction,
                once_splice,
            ),
            ProcTag::NonSeparate => {
                let (state, obj) = config.state.new_obj(&self.ir, class);
                let obj_id = obj.id;
                let state = state.add_obj(p, obj).map_err(pre)?;
                let r = state.ref_of(obj_id).map_err(pre)?;
                let f = self.ir.feature(feature);
                let cls = self.ir.class(f.class);
                let mut replacement = vec![
                    Statement::op(Op::Write {
                        name: target.to_string(),
                        value: Operand::Val(Value::Ref(r)),
                    }),
                    call_instruction,
                ];
                let mut state = state;
                if cls.inv_exists() && !f.exported {
                    let (s, ids) = state.alloc_ids(1);
                    state = s;
                    let a = Channel(ids[0]);
                    replacement.push(Statement::op(Op::Eval {
                        channel: a,
                        expr: cls.invariant.clone().expect("invariant exists"),
                        ctx: ExprCtx::Invariant(f.class),
                    }));
                    replacement.push(Statement::op(Op::Wait { channel: a }));
                    replacement.push(Statement::op(Op::Assert {
                        kind: AssertionKind::Invariant,
                        condition: Operand::ChannelData(a),
                        feature,
                    }));
                }
                if let Some(once_feature) = once_splice {
                    replacement.push(Statement::op(Op::SetNotFreshWithResult {
                        feature: once_feature,
                    }));
                }
                let mut next = replace_head(config, p, replacement);
                next.state = state;
                Ok(StepResult {
                    rule: RuleId::CreateNonSeparate,
                    config: next,
                    violation: None,
                })
            }
            ProcTag::ExplicitUnqualified(x) => {
                let current = config.state.value(p, x).map_err(pre)?;
                match current {
                    Value::Proc(q) if config.state.procs().contains(&q) => self.create_on_existing(
                        config,
                        p,
                        q,
                        class,
                        feature,
                        call_instruction,
                        once_splice,
                    ),
                    _ => self.create_with_new_proc(
                        config,
                        p,
                        RuleId::CreateNonExistingExplicit,
                        Some(x.clone()),
                        class,
                        feature,
                        call_instruction,
                        once_splice,
                    ),
                }
            }
            ProcTag::ExplicitQualified(y) => {
                let v = config.state.value(p, y).map_err(pre)?;
                let r = v
                    .as_ref()
                    .ok_or_else(|| condition(format!("'{y}' holds no reference")))?;
                let q = config.state.handler(r).map_err(pre)?;
                self.create_on_existing(config, p, q, class, feature, call_instruction, once_splice)
            }
            ProcTag::NoProcessor => Err(condition("create target has no processor tag")),
        }
    }

    /// Create on a fresh processor: Top and the non-existing explicit
    /// variant (which additionally writes the processor attribute first).
    #[allow(clippy::too_many_arguments)]
    fn create_with_new_proc(
        &self,
        config: &Configuration,
        p: Proc,
        rule: RuleId,
        processor_attribute: Option<String>,
        class: crate::frontend::ir::ClassId,
        feature: FeatureId,
        call_instruction: Statement,
        once_splice: Option<FeatureId>,
    ) -> RuleResult {
        let (state, q) = config.state.new_proc();
        let (state, obj) = state.new_obj(&self.ir, class);
        let obj_id = obj.id;
        let state = state
            .add_proc(q)
            .and_then(|s| s.add_obj(q, obj))
            .map_err(pre)?;
        let r = state.ref_of(obj_id).map_err(pre)?;
        let f = self.ir.feature(feature);
        let cls = self.ir.class(f.class);
        let mut replacement = Vec::new();
        if let Some(attr) = &processor_attribute {
            replacement.push(Statement::op(Op::Write {
                name: attr.clone(),
                value: Operand::Val(Value::Proc(q)),
            }));
        }
        replacement.push(Statement::op(Op::Lock {
            locks: BTreeSet::from([q]),
        }));
        replacement.push(Statement::op(Op::Write {
            name: create_target_name(&call_instruction),
            value: Operand::Val(Value::Ref(r)),
        }));
        replacement.push(call_instruction);
        let mut state = state;
        if cls.inv_exists() && !f.exported {
            let (s, ids) = state.alloc_ids(1);
            state = s;
            let a = Channel(ids[0]);
            replacement.push(Statement::op(Op::Issue {
                target: q,
                statements: vec![
                    Statement::op(Op::Eval {
                        channel: a,
                        expr: cls.invariant.clone().expect("invariant exists"),
                        ctx: ExprCtx::Invariant(f.class),
                    }),
                    Statement::op(Op::Wait { channel: a }),
                    Statement::op(Op::Assert {
                        kind: AssertionKind::Invariant,
                        condition: Operand::ChannelData(a),
                        feature,
                    }),
                ],
            }));
        }
        replacement.push(Statement::op(Op::Issue {
            target: q,
            statements: vec![Statement::op(Op::Unlock)],
        }));
        replacement.push(Statement::op(Op::PopObtainedRqLocks));
        if let Some(once_feature) = once_splice {
            replacement.push(Statement::op(Op::SetNotFreshWithResult {
                feature: once_feature,
            }));
        }
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        next.queues.insert(q, vec![Statement::op(Op::Nop)]);
        Ok(StepResult {
            rule,
            config: next,
            violation: None,
        })
    }

    /// Create on an existing processor (explicit specification).
    #[allow(clippy::too_many_arguments)]
    fn create_on_existing(
        &self,
        config: &Configuration,
        p: Proc,
        q: Proc,
        class: crate::frontend::ir::ClassId,
        feature: FeatureId,
        call_instruction: Statement,
        once_splice: Option<FeatureId>,
    ) -> RuleResult {
        let state = &config.state;
        let required_cs = q != p
            && (state.rq_locks(q).map_err(pre)?.contains(&p)
                || state.cs_locks(q).map_err(pre)?.contains(&p));
        if required_cs {
            if state.locks_passed(p).map_err(pre)? {
                return Err(condition(format!("{p} has passed its locks")));
            }
            if !state.cs_locks(p).map_err(pre)?.contains(&q) {
                return Err(condition(format!(
                    "call stack lock of {q} is not available to {p}"
                )));
            }
        }
        let (state, obj) = state.new_obj(&self.ir, class);
        let obj_id = obj.id;
        let state = state.add_obj(q, obj).map_err(pre)?;
        let r = state.ref_of(obj_id).map_err(pre)?;
        let need_lock = q != p
            && !state.rq_locks(p).map_err(pre)?.contains(&q)
            && !state.rq_locks(q).map_err(pre)?.contains(&p);
        let f = self.ir.feature(feature);
        let cls = self.ir.class(f.class);
        let mut replacement = Vec::new();
        if need_lock {
            replacement.push(Statement::op(Op::Lock {
                locks: BTreeSet::from([q]),
            }));
        }
        replacement.push(Statement::op(Op::Write {
            name: create_target_name(&call_instruction),
            value: Operand::Val(Value::Ref(r)),
        }));
        replacement.push(call_instruction);
        let mut state = state;
        if cls.inv_exists() && !f.exported {
            let (s, ids) = state.alloc_ids(1);
            state = s;
            let a = Channel(ids[0]);
            replacement.push(Statement::op(Op::Issue {
                target: q,
                statements: vec![
                    Statement::op(Op::Eval {
                        channel: a,
                        expr: cls.invariant.clone().expect("invariant exists"),
                        ctx: ExprCtx::Invariant(f.class),
                    }),
                    Statement::op(Op::Wait { channel: a }),
                    Statement::op(Op::Assert {
                        kind: AssertionKind::Invariant,
                        condition: Operand::ChannelData(a),
                        feature,
                    }),
                ],
            }));
        }
        if need_lock {
            replacement.push(Statement::op(Op::Issue {
                target: q,
                statements: vec![Statement::op(Op::Unlock)],
            }));
            replacement.push(Statement::op(Op::PopObtainedRqLocks));
        }
        if let Some(once_feature) = once_splice {
            replacement.push(Statement::op(Op::SetNotFreshWithResult {
                feature: once_feature,
            }));
        }
        let mut next = replace_head(config, p, replacement);
        next.state = state;
        Ok(StepResult {
            rule: RuleId::CreateExistingExplicit,
            config: next,
            violation: None,
        })
    }
}

// --- helpers ---------------------------------------------------------------------

fn condition(detail: impl Into<String>) -> BlockReason {
    BlockReason::Condition {
        detail: detail.into(),
    }
}

fn pre(e: crate::state::StateError) -> BlockReason {
    BlockReason::Condition {
        detail: e.to_string(),
    }
}

fn value_as_ref(v: Value) -> Result<Ref, BlockReason> {
    v.as_ref()
        .ok_or_else(|| condition(format!("expected a reference, got {v}")))
}

/// A configuration with `p`'s head replaced by `replacement`.
fn replace_head(config: &Configuration, p: Proc, replacement: Vec<Statement>) -> Configuration {
    let mut next = config.clone();
    let queue = next.queues.get_mut(&p).expect("processor has a queue");
    let mut new_queue = replacement;
    new_queue.extend(queue.iter().skip(1).cloned());
    *queue = new_queue;
    next
}

fn instruction_statements(instructions: &[Instruction], ctx: ExprCtx) -> Vec<Statement> {
    instructions
        .iter()
        .map(|i| Statement::Instruction {
            instr: i.clone(),
            ctx,
        })
        .collect()
}

fn create_target_name(call_instruction: &Statement) -> String {
    match call_instruction {
        Statement::Instruction {
            instr: Instruction::Call { target, .. },
            ..
        } => match target {
            Expression::Entity(name) => name.clone(),
            _ => unreachable!("creation call targets are entities"),
        },
        _ => unreachable!("creation rewrites carry a call instruction"),
    }
}
