//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Run with `cargo test --test acceptance -- --nocapture` to see the
//! lines even on success.

use std::collections::BTreeSet;

use scoop_core::frontend::compile;
use scoop_core::frontend::ir::ProgramIR;
use scoop_core::runtime::rules::{Engine, RuleToggles};
use scoop_core::runtime::statement::{Op, Statement};
use scoop_core::runtime::Configuration;
use scoop_core::scheduler::explore::{canonical_digest, explore, explore_with_visited};
use scoop_core::scheduler::policy::SplitMix64;
use scoop_core::scheduler::{run, run_observed, RunStatus, SchedulePolicy};
use scoop_core::state::{dump_state, Proc, Ref, Regions, State, Value};
use scoop_core::typing::ExprCtx;

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).expect("corpus file")
}

fn engine_for(name: &str) -> Engine {
    Engine::new(compile(&corpus(name)).unwrap())
}

fn criterion(number: u32, description: &str, body: impl FnOnce() + std::panic::UnwindSafe) {
    let result = std::panic::catch_unwind(body);
    match &result {
        Ok(()) => println!("ACCEPTANCE {number} PASS -- {description}"),
        Err(_) => println!("ACCEPTANCE {number} FAIL -- {description}"),
    }
    if let Err(panic) = result {
        std::panic::resume_unwind(panic);
    }
}

// --- 1: initial-configuration fidelity ---------------------------------------

#[test]
fn acceptance_1_initial_configuration_fidelity() {
    criterion(
        1,
        "initial configuration matches the bootstrap recipe",
        || {
            for name in [
                "producer_consumer.scoop",
                "share_market.scoop",
                "callback.scoop",
                "dining.scoop",
                "once_pair.scoop",
                "pingpong.scoop",
                "counter_loop.scoop",
                "tiny_deadlock.scoop",
                "async_post.scoop",
                "explicit_processors.scoop",
            ] {
                let engine = engine_for(name);
                let config = engine.initial_configuration();
                let procs: Vec<Proc> = config.queues.keys().copied().collect();
                assert_eq!(procs.len(), 2, "{name}");
                let (bootstrap, root) = (procs[0], procs[1]);
                let root_ref = config.state.heap.refs().next().expect("root object");
                let expected = vec![
                    Statement::op(Op::CallCommand {
                        target: scoop_core::runtime::statement::Operand::Val(Value::Ref(root_ref)),
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
                assert!(config.state.rq_locked(root).unwrap(), "{name}");
                assert_eq!(
                    config.state.regions.obtained_rq_locks(bootstrap).unwrap(),
                    &vec![BTreeSet::from([root])],
                    "{name}"
                );
                assert_eq!(config.state.heap.obj_count(), 1, "{name}");
                assert_eq!(
                    config.state.ref_obj(root_ref).unwrap().class_type,
                    engine.ir.root_class,
                    "{name}"
                );
            }
        },
    );
}

// --- 2: share-market replay ---------------------------------------------------

fn market_landmark(state: &State, ir: &ProgramIR) -> bool {
    let Some(&market_class) = ir.class_by_name.get("MARKET") else {
        return false;
    };
    let Some(market) = state.heap_objects_of_class(market_class).into_iter().next() else {
        return false;
    };
    let cell_int = |attr: &str, index: usize| -> Option<i64> {
        let arr_ref = market.att_val(attr).ok()?.as_ref()?;
        if arr_ref.is_void() {
            return None;
        }
        let arr = state.ref_obj(arr_ref).ok()?;
        let cell = *arr.cells.as_ref()?.get(index)?;
        let r = cell.as_ref()?;
        match state.ref_obj(r).ok()?.att_val("item").ok()? {
            Value::Int(v) => Some(v),
            _ => None,
        }
    };
    let owned_first = || -> Option<i64> {
        let arr_ref = market.att_val("owned_shares").ok()?.as_ref()?;
        let arr = state.ref_obj(arr_ref).ok()?;
        let row_ref = arr.cells.as_ref()?.first()?.as_ref()?;
        let row = state.ref_obj(row_ref).ok()?;
        let cell_ref = row.cells.as_ref()?.first()?.as_ref()?;
        match state.ref_obj(cell_ref).ok()?.att_val("item").ok()? {
            Value::Int(v) => Some(v),
            _ => None,
        }
    };
    let id_non_fresh_on_all =
        ir.class(market_class).functions.iter().any(|&f| {
            ir.feature(f).name == "id" && state.heap.once_table().all_procs.contains_key(&f)
        });
    cell_int("cash", 0) == Some(90)
        && cell_int("available_shares", 0) == Some(0)
        && owned_first() == Some(1)
        && id_non_fresh_on_all
}

#[test]
fn acceptance_2_share_market_replay() {
    criterion(
        2,
        "share-market reaches cash 90 / available 0 / owned 1 with a system-wide once id",
        || {
            let engine = engine_for("share_market.scoop");
            let mut policies = vec![SchedulePolicy::RoundRobin];
            policies.extend((1..=20).map(|seed| SchedulePolicy::Random { seed }));
            for policy in policies {
                let mut found = false;
                let outcome = run_observed(&engine, &policy, 200_000, |config, _| {
                    if !found && market_landmark(&config.state, &engine.ir) {
                        found = true;
                    }
                })
                .unwrap();
                assert_eq!(outcome.status, RunStatus::Terminated, "{policy:?}");
                assert!(found, "landmark state missed under {policy:?}");
            }
        },
    );
}

// --- 3: producer-consumer wait condition ---------------------------------------

#[test]
fn acceptance_3_producer_consumer_wait_condition() {
    criterion(
        3,
        "consumer-first producer-consumer terminates; starving the producer forces retries",
        || {
            let engine = engine_for("producer_consumer.scoop");
            // Terminates under every policy tested.
            let mut policies = vec![SchedulePolicy::RoundRobin];
            policies.extend((1..=20).map(|seed| SchedulePolicy::Random { seed }));
            for policy in &policies {
                let outcome = run(&engine, policy, 200_000).unwrap();
                assert_eq!(outcome.status, RunStatus::Terminated, "{policy:?}");
            }

            // Starve the producer: among the enabled processors prefer any
            // that is not the producer's handler. The consumer's
            // precondition check must come around more than once.
            let producer_class = engine.ir.class_by_name["PRODUCER"];
            let mut config = engine.initial_configuration();
            let mut consume_checks = 0usize;
            for _ in 0..600 {
                let producer_proc = config
                    .state
                    .heap_objects_of_class(producer_class)
                    .first()
                    .and_then(|o| config.state.regions.handler(o.id).ok());
                let enabled = engine.enabled_procs(&config);
                if enabled.is_empty() {
                    break;
                }
                let starved: Vec<Proc> = enabled
                    .iter()
                    .copied()
                    .filter(|p| Some(*p) != producer_proc)
                    .collect();
                let chosen = *starved.first().unwrap_or(&enabled[0]);
                let head = engine.render_head(&config, chosen);
                let result = engine.step(&config, chosen).unwrap();
                if result.rule.name().starts_with("Check Precondition") && head.contains("consume")
                {
                    consume_checks += 1;
                }
                config = result.config;
            }
            assert!(
                consume_checks >= 2,
                "expected a failed precondition retry, saw {consume_checks} checks"
            );
        },
    );
}

// --- 4: once semantics -----------------------------------------------------------

#[test]
fn acceptance_4_once_semantics() {
    criterion(
        4,
        "separate once body runs once system-wide, non-separate once once per processor",
        || {
            let engine = engine_for("once_pair.scoop");
            let mut policies = vec![SchedulePolicy::RoundRobin];
            policies.extend((1..=5).map(|seed| SchedulePolicy::Random { seed }));
            for policy in &policies {
                let outcome = run(&engine, policy, 200_000).unwrap();
                assert_eq!(outcome.status, RunStatus::Terminated, "{policy:?}");
                let per_processor = outcome
                    .trace
                    .iter()
                    .filter(|s| s.rule == "Literal Expression" && s.head.contains(", 111)"))
                    .count();
                let per_system = outcome
                    .trace
                    .iter()
                    .filter(|s| s.rule == "Literal Expression" && s.head.contains(", 222)"))
                    .count();
                assert_eq!(per_processor, 2, "{policy:?}: non-separate once");
                assert_eq!(per_system, 1, "{policy:?}: separate once");
            }
        },
    );
}

// --- 5: deep-import invariant ------------------------------------------------------

#[test]
fn acceptance_5_deep_import_invariant() {
    criterion(
        5,
        "deep import preserves a.c = b by reference identity and leaves the source intact",
        || {
            let ir = compile(
                "
class Y
create make
feature
  make do end
end
class Z
create make
feature
  make do end
  c: separate Y
end
class X
create make
feature
  make do end
  a: separate Z
  b: Y
end
class APPLICATION
create make
feature
  make do end
end
{APPLICATION}.make
",
            )
            .unwrap();
            let mut state = State::make();
            let mut procs = Vec::new();
            for _ in 0..3 {
                let (s, p) = state.new_proc();
                state = s.add_proc(p).unwrap();
                procs.push(p);
            }
            let add = |st: &State, p: Proc, name: &str| -> (State, Ref) {
                let (s, o) = st.new_obj(&ir, ir.class_by_name[name]);
                let id = o.id;
                let s = s.add_obj(p, o).unwrap();
                let r = s.ref_of(id).unwrap();
                (s, r)
            };
            let (s, y) = add(&state, procs[0], "Y");
            let (s, z) = add(&s, procs[1], "Z");
            let (s, x) = add(&s, procs[0], "X");
            let s = s
                .set_att_val(s.ref_obj(z).unwrap().id, "c", Value::Ref(y))
                .unwrap();
            let s = s
                .set_att_val(s.ref_obj(x).unwrap().id, "a", Value::Ref(z))
                .unwrap();
            let s = s
                .set_att_val(s.ref_obj(x).unwrap().id, "b", Value::Ref(y))
                .unwrap();
            let before: Vec<(Ref, scoop_core::state::Obj)> = s
                .heap
                .refs()
                .map(|r| (r, s.ref_obj(r).unwrap().clone()))
                .collect();
            let imported = s.deep_import(&ir, procs[2], x).unwrap();
            let x2 = imported.last_imported_ref().unwrap();
            let a2 = imported
                .ref_obj(x2)
                .unwrap()
                .att_val("a")
                .unwrap()
                .as_ref()
                .unwrap();
            let b2 = imported
                .ref_obj(x2)
                .unwrap()
                .att_val("b")
                .unwrap()
                .as_ref()
                .unwrap();
            let c2 = imported
                .ref_obj(a2)
                .unwrap()
                .att_val("c")
                .unwrap()
                .as_ref()
                .unwrap();
            assert_eq!(c2, b2, "a.c = b must hold in the copy");
            assert_ne!(b2, y, "the copy must not alias the original");
            for (r, obj) in before {
                assert_eq!(imported.ref_obj(r).unwrap(), &obj, "source modified");
            }
        },
    );
}

// --- 6: separate-callback progress ----------------------------------------------------

#[test]
fn acceptance_6_separate_callback_progress() {
    criterion(
        6,
        "callback program terminates via the callback rule; without it, explore deadlocks",
        || {
            let engine = engine_for("callback.scoop");
            let mut policies = vec![SchedulePolicy::RoundRobin];
            policies.extend((1..=10).map(|seed| SchedulePolicy::Random { seed }));
            for policy in &policies {
                let outcome = run(&engine, policy, 200_000).unwrap();
                assert_eq!(outcome.status, RunStatus::Terminated, "{policy:?}");
                assert!(
                    outcome
                        .trace
                        .iter()
                        .any(|s| s.rule == "Issue Operation -- Separate Callback"),
                    "{policy:?}: callback path not taken"
                );
            }
            // Disable the callback rule: the program cannot finish and
            // exploration reports a deadlock.
            let toggled = Engine::with_toggles(
                compile(&corpus("callback.scoop")).unwrap(),
                RuleToggles {
                    separate_callback_issue: false,
                },
            );
            let report = explore(&toggled, 130);
            assert!(!report.deadlocks.is_empty(), "no deadlock found");
            assert_eq!(report.terminals, 0, "nothing terminates without the rule");
        },
    );
}

// --- 7: lock-algebra round trip ----------------------------------------------------------

/// Builds a random but valid Regions value by replaying random commands,
/// then picks a processor with locks, passes them, revokes, and compares.
#[test]
fn acceptance_7_lock_algebra_round_trip() {
    criterion(
        7,
        "pass_locks then revoke_locks restores the Regions value (1000 random cases)",
        || {
            let mut rng = SplitMix64::new(0x5c0_0b5);
            let mut tested = 0usize;
            let mut attempts = 0usize;
            while tested < 1000 {
                attempts += 1;
                assert!(attempts < 50_000, "generator starved");
                let mut regions = Regions::make();
                let mut procs: Vec<Proc> = Vec::new();
                let proc_count = 2 + rng.pick(3);
                for i in 0..proc_count {
                    let p = Proc(1 + i as u64);
                    regions = regions.add_proc(p).unwrap();
                    procs.push(p);
                }
                // Random locking prelude.
                for _ in 0..rng.pick(6) {
                    let p = procs[rng.pick(procs.len())];
                    let candidates: Vec<Proc> = procs
                        .iter()
                        .copied()
                        .filter(|q| !regions.rq_locked(*q).unwrap())
                        .filter(|_| rng.pick(2) == 0)
                        .collect();
                    let set: BTreeSet<Proc> = candidates.into_iter().collect();
                    regions = regions.lock_rqs(p, &set).unwrap();
                }
                // Choose p and q and pass a subset of p's locks.
                let p = procs[rng.pick(procs.len())];
                let q = procs[rng.pick(procs.len())];
                if regions.locks_passed(p).unwrap() {
                    continue;
                }
                let rq_all: Vec<Proc> = regions.rq_locks(p).unwrap().into_iter().collect();
                let cs_all: Vec<Proc> = regions.cs_locks(p).unwrap().into_iter().collect();
                let rq: BTreeSet<Proc> = rq_all
                    .iter()
                    .copied()
                    .filter(|_| rng.pick(2) == 0)
                    .collect();
                let cs: BTreeSet<Proc> = cs_all
                    .iter()
                    .copied()
                    .filter(|_| rng.pick(2) == 0)
                    .collect();
                let before = regions.clone();
                let Ok(passed) = regions.pass_locks(p, q, &rq, &cs) else {
                    continue;
                };
                let Ok(restored) = passed.revoke_locks(p, q) else {
                    continue;
                };
                assert_eq!(
                    restored, before,
                    "case {tested}: p={p} q={q} rq={rq:?} cs={cs:?}"
                );
                tested += 1;
            }
        },
    );
}

// --- 8: exhaustive safety at depth 12 -------------------------------------------------------

#[test]
fn acceptance_8_exhaustive_safety() {
    criterion(
        8,
        "depth-12 exploration is invariant-clean and covers 100 random run prefixes",
        || {
            for name in ["pingpong.scoop", "counter_loop.scoop", "callback.scoop"] {
                let engine = engine_for(name);
                let (report, visited) = explore_with_visited(&engine, 12);
                assert!(
                    report.violations.is_empty(),
                    "{name}: {:?}",
                    report.violations
                );
                assert!(report.deadlocks.is_empty(), "{name}");
                // Every trace of length <= 12 producible by run appears in
                // the explored tree.
                for seed in 0..100u64 {
                    let mut prefix: Vec<Configuration> = Vec::new();
                    let _ = run_observed(
                        &engine,
                        &SchedulePolicy::Random { seed },
                        12,
                        |config, _| prefix.push(config.clone()),
                    )
                    .unwrap();
                    for (i, config) in prefix.iter().enumerate() {
                        let digest = canonical_digest(&engine, config);
                        assert!(
                            visited.contains(&digest),
                            "{name}: seed {seed} step {i} not visited"
                        );
                    }
                }
            }
        },
    );
}

// --- 9: golden traces --------------------------------------------------------------------------

#[test]
fn acceptance_9_golden_traces() {
    criterion(
        9,
        "fixed (program, schedule, seed) runs reproduce byte-identical trace and dump files",
        || {
            let cases: [(&str, SchedulePolicy); 3] = [
                ("producer_consumer", SchedulePolicy::RoundRobin),
                ("share_market", SchedulePolicy::Random { seed: 7 }),
                ("callback", SchedulePolicy::RoundRobin),
            ];
            for (name, policy) in cases {
                let engine = engine_for(&format!("{name}.scoop"));
                let outcome = run(&engine, &policy, 200_000).unwrap();
                assert_eq!(outcome.status, RunStatus::Terminated, "{name}");
                let trace = outcome.render_trace();
                let dump = dump_state(&outcome.final_config.state, &engine.ir);
                let golden_dir = format!("{}/tests/golden", env!("CARGO_MANIFEST_DIR"));
                let trace_path = format!("{golden_dir}/{name}.trace.txt");
                let dump_path = format!("{golden_dir}/{name}.dump.txt");
                let expected_trace =
                    std::fs::read_to_string(&trace_path).expect("golden trace file");
                let expected_dump = std::fs::read_to_string(&dump_path).expect("golden dump file");
                assert_eq!(trace, expected_trace, "{name}: trace drifted");
                assert_eq!(dump, expected_dump, "{name}: dump drifted");
                // And a second run is byte-identical to the first.
                let again = run(&engine, &policy, 200_000).unwrap();
                assert_eq!(again.render_trace(), trace, "{name}");
            }
        },
    );
}
