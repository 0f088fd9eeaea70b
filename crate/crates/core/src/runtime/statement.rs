//! Statements: user instructions and run-time operations.
//!
//! Instructions originate from the program text; operations are run-time
//! syntax created by the inference rules. Channel accesses (`a.data`)
//! appear as unresolved [`Operand`]s until a wait or read substitutes the
//! carried value through the rest of the queue.

use std::collections::BTreeSet;
use std::fmt;

use crate::frontend::ir::{Expression, FeatureId, Instruction, ProgramIR};
use crate::state::{Env, Proc, Value};
use crate::typing::ExprCtx;

/// A one-shot notification carrier: each channel is resolved by exactly one
/// `result`/`notify` and consumed by exactly one `wait`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Channel(pub u64);

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a{}", self.0)
    }
}

/// A value position inside an operation: either an already known value or
/// the pending content of a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Val(Value),
    ChannelData(Channel),
}

impl Operand {
    pub fn value(&self) -> Option<Value> {
        match self {
            Operand::Val(v) => Some(*v),
            Operand::ChannelData(_) => None,
        }
    }
}

impl From<Value> for Operand {
    fn from(v: Value) -> Operand {
        Operand::Val(v)
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Val(v) => write!(f, "{v}"),
            Operand::ChannelData(a) => write!(f, "{a}.data"),
        }
    }
}

/// What a failed assertion means for the diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssertionKind {
    Postcondition,
    Invariant,
}

impl fmt::Display for AssertionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssertionKind::Postcondition => write!(f, "postcondition"),
            AssertionKind::Invariant => write!(f, "invariant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Statement {
    /// A user instruction executing in the scope of `ctx`.
    Instruction {
        instr: Instruction,
        ctx: ExprCtx,
    },
    Op(Op),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Issue {
        target: Proc,
        statements: Vec<Statement>,
    },
    ExecuteDelegated {
        body: Vec<Statement>,
        env: Env,
        locks: BTreeSet<Proc>,
    },
    LeaveDelegated,
    Eval {
        channel: Channel,
        expr: Expression,
        ctx: ExprCtx,
    },
    Wait {
        channel: Channel,
    },
    Result {
        channel: Channel,
        value: Operand,
    },
    Notify {
        channel: Channel,
    },
    Read {
        name: String,
        channel: Channel,
    },
    Write {
        name: String,
        value: Operand,
    },
    Lock {
        locks: BTreeSet<Proc>,
    },
    Unlock,
    PopObtainedRqLocks,
    /// Command call: target, feature, actual argument values, and the
    /// actual argument expressions consulted for the lock-passing decision.
    CallCommand {
        target: Operand,
        feature: FeatureId,
        args: Vec<Operand>,
        arg_exprs: Vec<Expression>,
        ctx: ExprCtx,
    },
    /// Query call: a command call plus the channel carrying the result.
    CallQuery {
        channel: Channel,
        target: Operand,
        feature: FeatureId,
        args: Vec<Operand>,
        arg_exprs: Vec<Expression>,
        ctx: ExprCtx,
    },
    Apply {
        channel: Channel,
        target: Operand,
        feature: FeatureId,
        args: Vec<Operand>,
        caller: Proc,
        passed_rq: BTreeSet<Proc>,
        passed_cs: BTreeSet<Proc>,
    },
    CheckPreAndLockRqs {
        locks: BTreeSet<Proc>,
        feature: FeatureId,
    },
    CheckPostAndUnlockRqs {
        locks: BTreeSet<Proc>,
        feature: FeatureId,
    },
    /// Query return: send the result (deep imported when expanded and
    /// crossing processors) and the locks back to the caller.
    ReturnQuery {
        channel: Channel,
        value: Operand,
        caller: Proc,
    },
    ReturnCommand {
        channel: Channel,
        caller: Proc,
    },
    SetNotFreshFunction {
        feature: FeatureId,
        value: Operand,
    },
    SetNotFreshProcedure {
        feature: FeatureId,
    },
    SetNotFreshWithResult {
        feature: FeatureId,
    },
    Provided {
        condition: Operand,
        then_branch: Vec<Statement>,
        else_branch: Vec<Statement>,
    },
    /// Traps a false postcondition or invariant; exceptions are out of
    /// scope but silent continuation would mask semantics bugs.
    Assert {
        kind: AssertionKind,
        condition: Operand,
        feature: FeatureId,
    },
    Nop,
}

impl Statement {
    pub fn op(op: Op) -> Statement {
        Statement::Op(op)
    }

    /// Substitutes the value carried by `channel` for every `a.data`
    /// occurrence in this statement, recursing into nested bodies.
    pub fn substitute(&self, channel: Channel, value: Value) -> Statement {
        let sub_operand = |o: &Operand| match o {
            Operand::ChannelData(a) if *a == channel => Operand::Val(value),
            other => *other,
        };
        let sub_vec = |body: &[Statement]| -> Vec<Statement> {
            body.iter().map(|s| s.substitute(channel, value)).collect()
        };
        match self {
            Statement::Instruction { .. } => self.clone(),
            Statement::Op(op) => Statement::Op(match op {
                Op::Issue { target, statements } => Op::Issue {
                    target: *target,
                    statements: sub_vec(statements),
                },
                Op::ExecuteDelegated { body, env, locks } => Op::ExecuteDelegated {
                    body: sub_vec(body),
                    env: env.clone(),
                    locks: locks.clone(),
                },
                Op::Result { channel: c, value } => Op::Result {
                    channel: *c,
                    value: sub_operand(value),
                },
                Op::Write { name, value } => Op::Write {
                    name: name.clone(),
                    value: sub_operand(value),
                },
                Op::CallCommand {
                    target,
                    feature,
                    args,
                    arg_exprs,
                    ctx,
                } => Op::CallCommand {
                    target: sub_operand(target),
                    feature: *feature,
                    args: args.iter().map(sub_operand).collect(),
                    arg_exprs: arg_exprs.clone(),
                    ctx: *ctx,
                },
                Op::CallQuery {
                    channel: c,
                    target,
                    feature,
                    args,
                    arg_exprs,
                    ctx,
                } => Op::CallQuery {
                    channel: *c,
                    target: sub_operand(target),
                    feature: *feature,
                    args: args.iter().map(sub_operand).collect(),
                    arg_exprs: arg_exprs.clone(),
                    ctx: *ctx,
                },
                Op::Apply {
                    channel: c,
                    target,
                    feature,
                    args,
                    caller,
                    passed_rq,
                    passed_cs,
                } => Op::Apply {
                    channel: *c,
                    target: sub_operand(target),
                    feature: *feature,
                    args: args.iter().map(sub_operand).collect(),
                    caller: *caller,
                    passed_rq: passed_rq.clone(),
                    passed_cs: passed_cs.clone(),
                },
                Op::ReturnQuery {
                    channel: c,
                    value,
                    caller,
                } => Op::ReturnQuery {
                    channel: *c,
                    value: sub_operand(value),
                    caller: *caller,
                },
                Op::SetNotFreshFunction { feature, value } => Op::SetNotFreshFunction {
                    feature: *feature,
                    value: sub_operand(value),
                },
                Op::Provided {
                    condition,
                    then_branch,
                    else_branch,
                } => Op::Provided {
                    condition: sub_operand(condition),
                    then_branch: sub_vec(then_branch),
                    else_branch: sub_vec(else_branch),
                },
                Op::Assert {
                    kind,
                    condition,
                    feature,
                } => Op::Assert {
                    kind: *kind,
                    condition: sub_operand(condition),
                    feature: *feature,
                },
                other => other.clone(),
            }),
        }
    }

    /// True if any `a.data` occurrence of `channel` remains in this
    /// statement.
    pub fn mentions_channel_data(&self, channel: Channel) -> bool {
        let op_mentions = |o: &Operand| matches!(o, Operand::ChannelData(a) if *a == channel);
        let vec_mentions =
            |body: &[Statement]| body.iter().any(|s| s.mentions_channel_data(channel));
        match self {
            Statement::Instruction { .. } => false,
            Statement::Op(op) => match op {
                Op::Issue { statements, .. } => vec_mentions(statements),
                Op::ExecuteDelegated { body, .. } => vec_mentions(body),
                Op::Result { value, .. } => op_mentions(value),
                Op::Write { value, .. } => op_mentions(value),
                Op::CallCommand { target, args, .. } => {
                    op_mentions(target) || args.iter().any(op_mentions)
                }
                Op::CallQuery { target, args, .. } => {
                    op_mentions(target) || args.iter().any(op_mentions)
                }
                Op::Apply { target, args, .. } => {
                    op_mentions(target) || args.iter().any(op_mentions)
                }
                Op::ReturnQuery { value, .. } => op_mentions(value),
                Op::SetNotFreshFunction { value, .. } => op_mentions(value),
                Op::Provided {
                    condition,
                    then_branch,
                    else_branch,
                } => {
                    op_mentions(condition) || vec_mentions(then_branch) || vec_mentions(else_branch)
                }
                Op::Assert { condition, .. } => op_mentions(condition),
                _ => false,
            },
        }
    }
}

/// Compact statement rendering for traces.
pub struct DisplayStatement<'a> {
    pub ir: &'a ProgramIR,
    pub statement: &'a Statement,
}

impl fmt::Display for DisplayStatement<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ir = self.ir;
        let render_vec = |body: &[Statement]| -> String {
            body.iter()
                .map(|s| DisplayStatement { ir, statement: s }.to_string())
                .collect::<Vec<_>>()
                .join("; ")
        };
        match self.statement {
            Statement::Instruction { instr, .. } => {
                write!(
                    f,
                    "{}",
                    crate::frontend::ir::DisplayInstruction { ir, instr }
                )
            }
            Statement::Op(op) => match op {
                Op::Issue { target, statements } => {
                    write!(f, "issue({target}, {})", render_vec(statements))
                }
                Op::ExecuteDelegated { body, locks, .. } => {
                    write!(
                        f,
                        "execute_delegated({}, env, {})",
                        render_vec(body),
                        render_proc_set(locks)
                    )
                }
                Op::LeaveDelegated => write!(f, "leave_delegated"),
                Op::Eval { channel, expr, .. } => {
                    write!(
                        f,
                        "eval({channel}, {})",
                        crate::frontend::ir::DisplayExpression { ir, expr }
                    )
                }
                Op::Wait { channel } => write!(f, "wait({channel})"),
                Op::Result { channel, value } => write!(f, "result({channel}, {value})"),
                Op::Notify { channel } => write!(f, "notify({channel})"),
                Op::Read { name, channel } => write!(f, "read({name}, {channel})"),
                Op::Write { name, value } => write!(f, "write({name}, {value})"),
                Op::Lock { locks } => write!(f, "lock({})", render_proc_set(locks)),
                Op::Unlock => write!(f, "unlock"),
                Op::PopObtainedRqLocks => write!(f, "pop_obtained_rq_locks"),
                Op::CallCommand {
                    target,
                    feature,
                    args,
                    ..
                } => {
                    write!(
                        f,
                        "call({target}, {}, {})",
                        ir.feature(*feature).name,
                        render_operands(args)
                    )
                }
                Op::CallQuery {
                    channel,
                    target,
                    feature,
                    args,
                    ..
                } => {
                    write!(
                        f,
                        "call({channel}, {target}, {}, {})",
                        ir.feature(*feature).name,
                        render_operands(args)
                    )
                }
                Op::Apply {
                    channel,
                    target,
                    feature,
                    args,
                    caller,
                    passed_rq,
                    passed_cs,
                } => {
                    write!(
                        f,
                        "apply({channel}, {target}, {}, {}, {caller}, <{}, {}>)",
                        ir.feature(*feature).name,
                        render_operands(args),
                        render_proc_set(passed_rq),
                        render_proc_set(passed_cs)
                    )
                }
                Op::CheckPreAndLockRqs { locks, feature } => {
                    write!(
                        f,
                        "check_pre_and_lock_rqs({}, {})",
                        render_proc_set(locks),
                        ir.feature(*feature).name
                    )
                }
                Op::CheckPostAndUnlockRqs { locks, feature } => {
                    write!(
                        f,
                        "check_post_and_unlock_rqs({}, {})",
                        render_proc_set(locks),
                        ir.feature(*feature).name
                    )
                }
                Op::ReturnQuery {
                    channel,
                    value,
                    caller,
                } => write!(f, "return({channel}, {value}, {caller})"),
                Op::ReturnCommand { channel, caller } => {
                    write!(f, "return({channel}, {caller})")
                }
                Op::SetNotFreshFunction { feature, value } => {
                    write!(f, "set_not_fresh({}, {value})", ir.feature(*feature).name)
                }
                Op::SetNotFreshProcedure { feature } => {
                    write!(f, "set_not_fresh({})", ir.feature(*feature).name)
                }
                Op::SetNotFreshWithResult { feature } => {
                    write!(
                        f,
                        "set_not_fresh_with_result({})",
                        ir.feature(*feature).name
                    )
                }
                Op::Provided {
                    condition,
                    then_branch,
                    else_branch,
                } => {
                    write!(
                        f,
                        "provided({condition}) {{ {} }} else {{ {} }}",
                        render_vec(then_branch),
                        render_vec(else_branch)
                    )
                }
                Op::Assert {
                    kind, condition, ..
                } => write!(f, "assert({kind}, {condition})"),
                Op::Nop => write!(f, "nop"),
            },
        }
    }
}

fn render_proc_set(set: &BTreeSet<Proc>) -> String {
    let members: Vec<String> = set.iter().map(|p| p.to_string()).collect();
    format!("{{{}}}", members.join(", "))
}

fn render_operands(operands: &[Operand]) -> String {
    let rendered: Vec<String> = operands.iter().map(|o| o.to_string()).collect();
    format!("<{}>", rendered.join(", "))
}
