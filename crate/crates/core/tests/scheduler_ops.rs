//! Scheduling policies and exploration behavior.

use scoop_core::frontend::compile;
use scoop_core::runtime::rules::Engine;
use scoop_core::runtime::statement::{Op, Operand, Statement};
use scoop_core::scheduler::explore::{canonical_digest, explore};
use scoop_core::scheduler::run::ScheduleError;
use scoop_core::scheduler::{run, RunStatus, SchedulePolicy};
use scoop_core::state::{dump_state, Env, Proc, State, Value};

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).expect("corpus file")
}

fn engine_for(name: &str) -> Engine {
    Engine::new(compile(&corpus(name)).unwrap())
}

#[test]
fn producer_consumer_terminates_under_round_robin() {
    let engine = engine_for("producer_consumer.scoop");
    let outcome = run(&engine, &SchedulePolicy::RoundRobin, 100_000).unwrap();
    assert_eq!(outcome.status, RunStatus::Terminated);
    assert!(outcome.final_config.is_terminal());
}

#[test]
fn explicit_processor_creations_share_one_handler() {
    let engine = engine_for("explicit_processors.scoop");
    let outcome = run(&engine, &SchedulePolicy::RoundRobin, 100_000).unwrap();
    assert_eq!(outcome.status, RunStatus::Terminated);
    let rules: Vec<&str> = outcome.trace.iter().map(|s| s.rule).collect();
    assert!(rules.contains(&"Create Instruction -- Non-Existing Explicit Processor"));
    assert!(
        rules
            .iter()
            .filter(|r| **r == "Create Instruction -- Existing Explicit Processor")
            .count()
            >= 2
    );
    // Both cells and the mate live on the processor stored in `boss`.
    let state = &outcome.final_config.state;
    let ir = &engine.ir;
    let hub = state
        .heap_objects_of_class(ir.class_by_name["HUB"])
        .into_iter()
        .next()
        .unwrap();
    let boss = hub.att_val("boss").unwrap().as_proc().unwrap();
    let cells = state.heap_objects_of_class(ir.class_by_name["CELL"]);
    assert_eq!(cells.len(), 3);
    for cell in cells {
        assert_eq!(state.regions.handler(cell.id).unwrap(), boss);
    }
}

#[test]
fn false_postcondition_halts_with_a_violation() {
    let engine = Engine::new(
        compile(
            "
class APPLICATION
create make
feature
  make
    do
      Current.bad
    end
  bad
    do
    ensure
      False
    end
end
{APPLICATION}.make
",
        )
        .unwrap(),
    );
    let outcome = run(&engine, &SchedulePolicy::RoundRobin, 10_000).unwrap();
    assert_eq!(outcome.status, RunStatus::AssertionViolation);
    let violation = outcome.violation.unwrap();
    assert!(
        violation.to_string().contains("postcondition"),
        "{violation}"
    );
    assert!(
        violation.to_string().contains("APPLICATION.bad"),
        "{violation}"
    );
}

#[test]
fn false_invariant_halts_after_an_exported_routine() {
    let engine = Engine::new(
        compile(
            "
class SHAKY
create make
feature
  make
    do
    end
invariant
  False
end
class APPLICATION
create make
feature
  s: SHAKY
  make
    do
      create s.make
    end
end
{APPLICATION}.make
",
        )
        .unwrap(),
    );
    let outcome = run(&engine, &SchedulePolicy::RoundRobin, 10_000).unwrap();
    assert_eq!(outcome.status, RunStatus::AssertionViolation);
    let violation = outcome.violation.unwrap();
    assert!(violation.to_string().contains("invariant"), "{violation}");
}

#[test]
fn random_policy_is_deterministic_per_seed() {
    let engine = engine_for("producer_consumer.scoop");
    for seed in [0u64, 1, 42, 0xdead_beef] {
        let a = run(&engine, &SchedulePolicy::Random { seed }, 100_000).unwrap();
        let b = run(&engine, &SchedulePolicy::Random { seed }, 100_000).unwrap();
        assert_eq!(a.render_trace(), b.render_trace(), "seed {seed}");
        assert_eq!(a.status, b.status);
    }
}

#[test]
fn one_step_budget_exhausts() {
    let engine = engine_for("pingpong.scoop");
    let outcome = run(&engine, &SchedulePolicy::RoundRobin, 1).unwrap();
    assert_eq!(outcome.status, RunStatus::BudgetExhausted);
    assert_eq!(outcome.steps, 1);
}

#[test]
fn script_policy_replays_and_rejects_disabled_processors() {
    let engine = engine_for("counter_loop.scoop");
    // The bootstrap processor (ordinal 0) can take the first steps.
    let outcome = run(&engine, &SchedulePolicy::Script(vec![0, 0]), 2).unwrap();
    assert_eq!(outcome.status, RunStatus::BudgetExhausted);
    // A script that ends before the run does aborts.
    let err = run(&engine, &SchedulePolicy::Script(vec![0, 0]), 100).unwrap_err();
    assert!(matches!(err, ScheduleError::ScriptExhausted));
    // Naming a disabled processor aborts.
    let err = run(&engine, &SchedulePolicy::Script(vec![1]), 100).unwrap_err();
    assert!(matches!(
        err,
        ScheduleError::ScriptProcessorDisabled {
            step: 0,
            ordinal: 1
        }
    ));
}

#[test]
fn exhaustive_policy_is_not_runnable() {
    let engine = engine_for("pingpong.scoop");
    let err = run(&engine, &SchedulePolicy::Exhaustive { depth: 5 }, 100).unwrap_err();
    assert!(matches!(err, ScheduleError::ExhaustiveNotRunnable));
}

#[test]
fn single_processor_program_has_one_terminal_configuration() {
    let engine = engine_for("counter_loop.scoop");
    let report = explore(&engine, 400);
    assert_eq!(report.terminals, 1);
    assert!(report.deadlocks.is_empty());
    assert!(report.violations.is_empty());
    assert!(!report.truncated);
}

/// Two independent processors each performing one write reach the same
/// terminal state through both interleavings.
#[test]
fn independent_writes_are_confluent() {
    let engine = engine_for("pingpong.scoop");
    let base = engine.initial_configuration();
    let procs: Vec<Proc> = base.queues.keys().copied().collect();
    let (p, q) = (procs[0], procs[1]);
    let root_ref = base.state.heap.refs().next().unwrap();

    // Hand-built: both processors have an environment with one local and
    // write to it. No allocation happens on the write path.
    let mut state = base.state.clone();
    for &proc in &[p, q] {
        let env = Env::make()
            .update("Current", Value::Ref(root_ref))
            .update("slot", Value::VOID);
        state = state.push_env(proc, env).unwrap();
    }
    let mut config = base.clone();
    config.state = state;
    config.queues.insert(
        p,
        vec![Statement::op(Op::Write {
            name: "slot".into(),
            value: Operand::Val(Value::Ref(root_ref)),
        })],
    );
    config.queues.insert(
        q,
        vec![Statement::op(Op::Write {
            name: "slot".into(),
            value: Operand::Val(Value::Ref(root_ref)),
        })],
    );

    // Order p then q.
    let pq = {
        let c = engine.step(&config, p).unwrap().config;
        engine.step(&c, q).unwrap().config
    };
    // Order q then p.
    let qp = {
        let c = engine.step(&config, q).unwrap().config;
        engine.step(&c, p).unwrap().config
    };
    assert!(pq.is_terminal() && qp.is_terminal());
    assert_eq!(
        dump_state(&pq.state, &engine.ir),
        dump_state(&qp.state, &engine.ir)
    );
    assert_eq!(
        canonical_digest(&engine, &pq),
        canonical_digest(&engine, &qp)
    );
}

#[test]
fn tiny_deadlock_is_found_with_a_minimal_trace() {
    let engine = engine_for("tiny_deadlock.scoop");
    let report = explore(&engine, 150);
    assert!(!report.deadlocks.is_empty());
    let finding = &report.deadlocks[0];
    assert!(!finding.trace.is_empty());
    assert!(
        finding
            .blocked
            .iter()
            .any(|line| line.contains("does not hold the request queue lock")),
        "{:?}",
        finding.blocked
    );
    // Breadth-first search: no shorter deadlock exists among the findings.
    let min = report
        .deadlocks
        .iter()
        .map(|d| d.trace.len())
        .min()
        .unwrap();
    assert_eq!(finding.trace.len(), min);
}

#[test]
fn deadlocking_run_reports_the_blocked_heads() {
    let engine = engine_for("dining.scoop");
    let outcome = run(&engine, &SchedulePolicy::RoundRobin, 100_000).unwrap();
    assert_eq!(outcome.status, RunStatus::Deadlock);
    assert_eq!(outcome.deadlock_report.len(), 2);
    for line in &outcome.deadlock_report {
        assert!(line.contains("lock("), "{line}");
        assert!(line.contains("request queue"), "{line}");
    }
}

#[test]
fn dining_terminates_under_some_seed() {
    let engine = engine_for("dining.scoop");
    let mut statuses = Vec::new();
    for seed in 0..30u64 {
        let outcome = run(&engine, &SchedulePolicy::Random { seed }, 100_000).unwrap();
        statuses.push(outcome.status);
    }
    assert!(statuses.contains(&RunStatus::Terminated));
    assert!(statuses.contains(&RunStatus::Deadlock));
}

#[test]
fn asynchronous_postcondition_is_delegated_to_the_locked_processor() {
    let engine = engine_for("async_post.scoop");
    let mut policies = vec![SchedulePolicy::RoundRobin];
    policies.extend((1..=10).map(|seed| SchedulePolicy::Random { seed }));
    for policy in &policies {
        let outcome = run(&engine, policy, 100_000).unwrap();
        assert_eq!(outcome.status, RunStatus::Terminated, "{policy:?}");
        assert!(
            outcome
                .trace
                .iter()
                .any(|s| s.rule == "Execute Delegated Operation"),
            "{policy:?}: delegation not taken"
        );
        assert!(outcome
            .trace
            .iter()
            .any(|s| s.rule == "Leave Delegated Execution Operation"));
        // The delegate evaluates the postcondition, not the worker: the
        // eval of `box.ready` happens on the box's processor.
        let delegate = outcome
            .trace
            .iter()
            .find(|s| s.rule == "Execute Delegated Operation")
            .unwrap()
            .proc;
        assert!(outcome
            .trace
            .iter()
            .any(|s| s.proc == delegate && s.head.contains("ready")));
    }
}

#[test]
fn run_only_steps_enabled_processors() {
    // The run loop asserts this internally; replaying the trace confirms
    // every step named a processor that was enabled at that point.
    let engine = engine_for("callback.scoop");
    let outcome = run(&engine, &SchedulePolicy::Random { seed: 9 }, 100_000).unwrap();
    let mut config = engine.initial_configuration();
    for step in &outcome.trace {
        assert!(engine.enabled(&config, step.proc).is_some());
        config = engine.step(&config, step.proc).unwrap().config;
    }
    let _ = config;
}

#[test]
fn state_clone_snapshots_are_independent() {
    // Exploration relies on configurations being persistent values.
    let engine = engine_for("pingpong.scoop");
    let config = engine.initial_configuration();
    let procs: Vec<Proc> = config.queues.keys().copied().collect();
    let before: State = config.state.clone();
    let stepped = engine.step(&config, procs[0]).unwrap().config;
    assert_eq!(config.state, before, "stepping must not mutate the source");
    assert_ne!(stepped.queue(procs[0]), config.queue(procs[0]));
}
