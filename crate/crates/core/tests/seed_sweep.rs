//! Seed sweep: every corpus program under many random schedules, with the
//! structural invariants sampled along the way. Programs without genuine
//! deadlocks must terminate under every seed.

use scoop_core::frontend::compile;
use scoop_core::runtime::invariants::check_configuration;
use scoop_core::runtime::rules::Engine;
use scoop_core::scheduler::{run_observed, RunStatus, SchedulePolicy};

fn corpus(name: &str) -> String {
    let path = format!("{}/../../corpus/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).expect("corpus file")
}

fn sweep(name: &str, seeds: u64, deadlock_allowed: bool) {
    let engine = Engine::new(compile(&corpus(name)).unwrap());
    for seed in 0..seeds {
        let mut sampled = 0usize;
        let outcome = run_observed(
            &engine,
            &SchedulePolicy::Random { seed },
            300_000,
            |config, step| {
                // Sampling keeps the sweep cheap while still touching
                // early, middle and late configurations.
                let index = step.map(|s| s.index).unwrap_or(0);
                if index % 97 == 0 {
                    sampled += 1;
                    let violations = check_configuration(&engine, config);
                    assert!(violations.is_empty(), "{name} seed {seed}: {violations:?}");
                }
            },
        )
        .unwrap();
        assert!(sampled > 0);
        match outcome.status {
            RunStatus::Terminated => {}
            RunStatus::Deadlock if deadlock_allowed => {}
            other => panic!("{name} seed {seed}: unexpected status {other:?}"),
        }
    }
}

#[test]
fn pingpong_sweep() {
    sweep("pingpong.scoop", 60, false);
}

#[test]
fn counter_loop_sweep() {
    sweep("counter_loop.scoop", 40, false);
}

#[test]
fn callback_sweep() {
    sweep("callback.scoop", 60, false);
}

#[test]
fn once_pair_sweep() {
    sweep("once_pair.scoop", 40, false);
}

#[test]
fn async_post_sweep() {
    sweep("async_post.scoop", 60, false);
}

#[test]
fn explicit_processors_sweep() {
    sweep("explicit_processors.scoop", 40, false);
}

#[test]
fn producer_consumer_sweep() {
    sweep("producer_consumer.scoop", 40, false);
}

#[test]
fn share_market_sweep() {
    sweep("share_market.scoop", 15, false);
}

#[test]
fn dining_sweep_allows_deadlock() {
    sweep("dining.scoop", 40, true);
}

#[test]
fn tiny_deadlock_always_deadlocks() {
    let engine = Engine::new(compile(&corpus("tiny_deadlock.scoop")).unwrap());
    for seed in 0..40u64 {
        let outcome =
            scoop_core::scheduler::run(&engine, &SchedulePolicy::Random { seed }, 300_000).unwrap();
        assert_eq!(outcome.status, RunStatus::Deadlock, "seed {seed}");
    }
}
