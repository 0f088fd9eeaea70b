//! Runtime rule behavior: the initial configuration, rule
//! enabledness, rewrite shapes, termination, and stuck classification.

use std::collections::BTreeSet;

use scoop_core::frontend::compile;
use scoop_core::frontend::ir::{Expression, Instruction};
use scoop_core::runtime::rules::{Engine, RuleId, StuckClass};
use scoop_core::runtime::statement::{Channel, Op, Operand, Statement};
use scoop_core::scheduler::{run_observed, SchedulePolicy};
use scoop_core::state::{Env, Proc, Value};
use scoop_core::typing::ExprCtx;

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).expect("corpus file")
}

fn engine_for(name: &str) -> Engine {
    Engine::new(compile(&corpus(name)).unwrap())
}

#[test]
fn initial_configuration_matches_the_bootstrap_recipe() {
    for name in ["pingpong.scoop", "share_market.scoop", "dining.scoop"] {
        let engine = engine_for(name);
        let config = engine.initial_configuration();
        let procs: Vec<Proc> = config.queues.keys().copied().collect();
        assert_eq!(procs.len(), 2, "{name}: bootstrap and root only");
        let (bootstrap, root) = (procs[0], procs[1]);

        // The root object is the only object, handled by the root processor.
        assert_eq!(config.state.heap.obj_count(), 1);
        let root_ref = config.state.heap.refs().next().unwrap();
        assert_eq!(config.state.handler(root_ref).unwrap(), root);
        assert_eq!(
            config.state.ref_obj(root_ref).unwrap().class_type,
            engine.ir.root_class
        );

        // Bootstrap queue: call; issue(root, unlock); pop_obtained_rq_locks.
        let expected = vec![
            Statement::op(Op::CallCommand {
                target: Operand::Val(Value::Ref(root_ref)),
                feature: engine.ir.root_procedure,
                args: vec![],
                arg_exprs: vec![],
                ctx: ExprCtx::Feature(engine.ir.root_procedure),
            }),
            Statement::op(Op::Issue {
                target: root,
                statements: vec![Statement::op(Op::Unlock)],
            }),
            Statement::op(Op::PopObtainedRqLocks),
        ];
        assert_eq!(config.queue(bootstrap), expected.as_slice(), "{name}");
        assert!(config.queue(root).is_empty(), "{name}");

        // Root's request queue is locked on behalf of the bootstrap
        // processor.
        assert!(config.state.rq_locked(root).unwrap());
        assert!(!config.state.rq_locked(bootstrap).unwrap());
        assert_eq!(
            config.state.regions.obtained_rq_locks(bootstrap).unwrap(),
            &vec![BTreeSet::from([root])]
        );
        assert!(config.state.envs(bootstrap).is_empty());
        assert!(config.state.envs(root).is_empty());
    }
}

#[test]
fn initial_state_dump_is_frozen() {
    let engine = engine_for("pingpong.scoop");
    let config = engine.initial_configuration();
    let dump = scoop_core::state::dump_state(&config.state, &engine.ir);
    let expected = "\
locks:
  p1: obtained_rq=[{p2}] retrieved_rq=[] retrieved_cs=[] rq=unlocked
  p2: obtained_rq=[] retrieved_rq=[] retrieved_cs=[] rq=locked
objects:
  p1:
  p2: r4=o3
once:
environments:
  p1:
  p2:
";
    assert_eq!(dump, expected);
}

#[test]
fn blocked_lock_head_is_not_enabled() {
    let engine = engine_for("pingpong.scoop");
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    let (bootstrap, root) = (procs[0], procs[1]);
    // Root's queue is already locked by bootstrap: a lock on it blocks.
    config.queues.insert(
        bootstrap,
        vec![Statement::op(Op::Lock {
            locks: BTreeSet::from([root]),
        })],
    );
    assert_eq!(engine.enabled(&config, bootstrap), None);
    // Unlocked target: enabled.
    let mut unlocked = config.clone();
    unlocked.state = config.state.pop_obtained_rq_locks(bootstrap).unwrap();
    unlocked.state = unlocked.state.unlock_rq(root).unwrap();
    assert_eq!(engine.enabled(&unlocked, bootstrap), Some(RuleId::Lock));
}

#[test]
fn nop_head_enables_the_no_operation_rule() {
    let engine = engine_for("pingpong.scoop");
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    config.queues.insert(procs[0], vec![Statement::op(Op::Nop)]);
    assert_eq!(engine.enabled(&config, procs[0]), Some(RuleId::NoOperation));
    let result = engine.step(&config, procs[0]).unwrap();
    assert!(result.config.queue(procs[0]).is_empty());
}

#[test]
fn empty_queue_is_not_enabled() {
    let engine = engine_for("pingpong.scoop");
    let config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    assert_eq!(engine.enabled(&config, procs[1]), None);
}

#[test]
fn command_instruction_fans_out_into_evals_waits_and_call() {
    // x.f(y) rewrites to eval; eval; wait; wait; call.
    let engine = engine_for("producer_consumer.scoop");
    let ir = &engine.ir;
    let produce = ir
        .feature_by_name(ir.class_by_name["PRODUCER"], "produce")
        .unwrap();
    let put = ir
        .feature_by_name(ir.class_by_name["BUFFER[INTEGER]"], "put")
        .unwrap();
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    let instr = Instruction::Call {
        target: Expression::Entity("buffer".into()),
        feature: put,
        args: vec![Expression::Entity("n".into())],
    };
    config.queues.insert(
        procs[0],
        vec![Statement::Instruction {
            instr,
            ctx: ExprCtx::Feature(produce),
        }],
    );
    let result = engine.step(&config, procs[0]).unwrap();
    assert_eq!(result.rule, RuleId::CommandInstruction);
    let queue = result.config.queue(procs[0]);
    assert_eq!(queue.len(), 5);
    assert!(matches!(queue[0], Statement::Op(Op::Eval { .. })));
    assert!(matches!(queue[1], Statement::Op(Op::Eval { .. })));
    assert!(matches!(queue[2], Statement::Op(Op::Wait { .. })));
    assert!(matches!(queue[3], Statement::Op(Op::Wait { .. })));
    assert!(matches!(queue[4], Statement::Op(Op::CallCommand { .. })));
    // The call's operands are the channels of the evals, in order.
    let (Statement::Op(Op::Eval { channel: c0, .. }), Statement::Op(Op::Eval { channel: c1, .. })) =
        (&queue[0], &queue[1])
    else {
        unreachable!()
    };
    let Statement::Op(Op::CallCommand { target, args, .. }) = &queue[4] else {
        unreachable!()
    };
    assert_eq!(*target, Operand::ChannelData(*c0));
    assert_eq!(args.as_slice(), &[Operand::ChannelData(*c1)]);
}

#[test]
fn share_market_buy_call_resolves_to_market_and_issuer_references() {
    // Drive the share market until the first apply of `buy` shows up and
    // check the resolved argument references: the market object and an
    // integer copy of the issuer id.
    let engine = engine_for("share_market.scoop");
    let ir = engine.ir.clone();
    let buy = ir
        .feature_by_name(ir.class_by_name["INVESTOR"], "buy")
        .unwrap();
    let mut seen = false;
    let _ = run_observed(
        &engine,
        &SchedulePolicy::RoundRobin,
        100_000,
        |config, _| {
            if seen {
                return;
            }
            for queue in config.queues.values() {
                for statement in queue {
                    if let Statement::Op(Op::Apply {
                        target,
                        feature,
                        args,
                        ..
                    }) = statement
                    {
                        if *feature == buy {
                            seen = true;
                            let target_ref = target.value().unwrap().as_ref().unwrap();
                            let target_obj = config.state.ref_obj(target_ref).unwrap();
                            assert_eq!(ir.class(target_obj.class_type).name, "INVESTOR");
                            assert_eq!(args.len(), 2);
                            let market_ref = args[0].value().unwrap().as_ref().unwrap();
                            let market_obj = config.state.ref_obj(market_ref).unwrap();
                            assert_eq!(ir.class(market_obj.class_type).name, "MARKET");
                            let issuer_ref = args[1].value().unwrap().as_ref().unwrap();
                            let issuer_obj = config.state.ref_obj(issuer_ref).unwrap();
                            assert_eq!(issuer_obj.class_type, ir.integer_class);
                            assert_eq!(issuer_obj.att_val("item").unwrap(), Value::Int(1));
                        }
                    }
                }
            }
        },
    )
    .unwrap();
    assert!(seen, "no apply of buy observed");
}

#[test]
fn adjacent_result_and_wait_cancel_and_substitute() {
    let engine = engine_for("pingpong.scoop");
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    let p = procs[0];
    let root_ref = config.state.heap.refs().next().unwrap();
    let a = Channel(900);
    config.queues.insert(
        p,
        vec![
            Statement::op(Op::Result {
                channel: a,
                value: Operand::Val(Value::Ref(root_ref)),
            }),
            Statement::op(Op::Wait { channel: a }),
            Statement::op(Op::Write {
                name: "x".into(),
                value: Operand::ChannelData(a),
            }),
        ],
    );
    let result = engine.step(&config, p).unwrap();
    assert_eq!(result.rule, RuleId::WaitAndResultNonSeparate);
    let queue = result.config.queue(p);
    assert_eq!(queue.len(), 1);
    let Statement::Op(Op::Write { value, .. }) = &queue[0] else {
        panic!("expected the write to remain");
    };
    assert_eq!(*value, Operand::Val(Value::Ref(root_ref)));
    assert!(!result.config.mentions_channel_data(a));
}

#[test]
fn separate_result_resolves_a_wait_in_another_queue() {
    let engine = engine_for("pingpong.scoop");
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    let (p, q) = (procs[0], procs[1]);
    let a = Channel(901);
    config.queues.insert(
        p,
        vec![
            Statement::op(Op::Wait { channel: a }),
            Statement::op(Op::Result {
                channel: Channel(902),
                value: Operand::ChannelData(a),
            }),
        ],
    );
    config
        .queues
        .insert(q, vec![Statement::op(Op::Notify { channel: a })]);
    // The waiter cannot move; the sender fires the separate rule.
    assert_eq!(engine.enabled(&config, p), None);
    let result = engine.step(&config, q).unwrap();
    assert_eq!(result.rule, RuleId::WaitAndNotifySeparate);
    assert!(result.config.queue(q).is_empty());
    assert_eq!(result.config.queue(p).len(), 1);
}

#[test]
fn provided_with_a_non_boolean_condition_blocks() {
    // Neither conditional rule matches a void condition: the truth value
    // cannot be determined, so the processor stays blocked.
    let engine = engine_for("pingpong.scoop");
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    config.queues.insert(
        procs[0],
        vec![Statement::op(Op::Provided {
            condition: Operand::Val(Value::VOID),
            then_branch: vec![],
            else_branch: vec![],
        })],
    );
    assert_eq!(engine.enabled(&config, procs[0]), None);
    // A reference to a BOOLEAN object decides through its item.
    let (state, obj) = config.state.new_obj(&engine.ir, engine.ir.boolean_class);
    let obj_id = obj.id;
    let obj = obj.set_att_val("item", Value::Bool(false)).unwrap();
    let state = state.add_obj(procs[0], obj).unwrap();
    let r = state.ref_of(obj_id).unwrap();
    config.state = state;
    config.queues.insert(
        procs[0],
        vec![Statement::op(Op::Provided {
            condition: Operand::Val(Value::Ref(r)),
            then_branch: vec![Statement::op(Op::Nop)],
            else_branch: vec![],
        })],
    );
    let result = engine.step(&config, procs[0]).unwrap();
    assert_eq!(result.rule, RuleId::ConditionalFalse);
    assert!(result.config.queue(procs[0]).is_empty());
}

#[test]
fn terminality_is_empty_queues() {
    let engine = engine_for("pingpong.scoop");
    let config = engine.initial_configuration();
    assert!(!config.is_terminal());
    let mut all_empty = config.clone();
    for queue in all_empty.queues.values_mut() {
        queue.clear();
    }
    assert!(all_empty.is_terminal());
    let mut one_nop = all_empty.clone();
    let first = *one_nop.queues.keys().next().unwrap();
    one_nop.queues.insert(first, vec![Statement::op(Op::Nop)]);
    assert!(!one_nop.is_terminal());
}

#[test]
fn cross_waiting_processors_classify_as_deadlock() {
    let engine = engine_for("pingpong.scoop");
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    config.queues.insert(
        procs[0],
        vec![Statement::op(Op::Wait {
            channel: Channel(910),
        })],
    );
    config.queues.insert(
        procs[1],
        vec![Statement::op(Op::Wait {
            channel: Channel(911),
        })],
    );
    match engine.classify_stuck(&config) {
        StuckClass::Deadlock(blocked) => {
            assert_eq!(blocked.len(), 2);
            for b in blocked {
                assert!(b.head.starts_with("wait("), "{}", b.head);
                assert!(b.reason.to_string().contains("channel"), "{}", b.reason);
            }
        }
        StuckClass::Live => panic!("expected deadlock"),
    }
}

#[test]
fn terminal_configuration_is_vacuously_live() {
    let engine = engine_for("pingpong.scoop");
    let mut config = engine.initial_configuration();
    for queue in config.queues.values_mut() {
        queue.clear();
    }
    assert!(matches!(engine.classify_stuck(&config), StuckClass::Live));
}

#[test]
fn precondition_retry_snapshot_is_live() {
    // Mid-run in the producer/consumer program, while the consumer spins on
    // its wait condition, the configuration is always classified live.
    let engine = engine_for("producer_consumer.scoop");
    let mut checked = 0;
    let outcome = run_observed(
        &engine,
        &SchedulePolicy::RoundRobin,
        100_000,
        |config, _| {
            if checked < 200 {
                checked += 1;
                assert!(matches!(engine.classify_stuck(config), StuckClass::Live));
            }
        },
    )
    .unwrap();
    assert_eq!(outcome.status, scoop_core::scheduler::RunStatus::Terminated);
}

#[test]
fn write_applies_the_unified_set_val_dispatch() {
    let engine = engine_for("pingpong.scoop");
    let ir = engine.ir.clone();
    let mut config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    let root = procs[1];
    let root_ref = config.state.heap.refs().next().unwrap();
    // Environment with Current on the root processor.
    let env = Env::make().update("Current", Value::Ref(root_ref));
    config.state = config.state.push_env(root, env).unwrap();
    // Writing the attribute name goes to the object.
    config.queues.insert(
        root,
        vec![Statement::op(Op::Write {
            name: "w".into(),
            value: Operand::Val(Value::VOID),
        })],
    );
    let result = engine.step(&config, root).unwrap();
    assert_eq!(result.rule, RuleId::Write);
    let root_obj = result.config.state.ref_obj(root_ref).unwrap();
    assert_eq!(root_obj.att_val("w").unwrap(), Value::VOID);
    let _ = ir;
}
