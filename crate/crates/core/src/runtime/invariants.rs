//! Run-time invariant checks over configurations.
//!
//! Used by exploration and the test suites to verify that every reachable
//! configuration respects handler locality, channel linearity, the region
//! partition, and the state consistency clauses.

use std::collections::BTreeMap;

use crate::state::Value;

use super::config::Configuration;
use super::rules::Engine;
use super::statement::{Op, Statement};

/// Returns a violation description per broken invariant; empty when the
/// configuration is clean.
pub fn check_configuration(engine: &Engine, config: &Configuration) -> Vec<String> {
    let mut violations = Vec::new();

    // State consistency clauses.
    if let Err(e) = config.state.validate() {
        violations.push(e.to_string());
    }

    // Region partition: every heap object in exactly one region.
    let mut seen = BTreeMap::new();
    for &p in config.state.procs() {
        if let Ok(objs) = config.state.regions.handled_objs(p) {
            for o in objs {
                if let Some(previous) = seen.insert(*o, p) {
                    violations.push(format!("object {o} is handled by both {previous} and {p}"));
                }
            }
        }
    }

    // Handler locality: an apply at a queue head targets an object of the
    // owning processor.
    for (&p, queue) in &config.queues {
        if let Some(Statement::Op(Op::Apply { target, .. })) = queue.first() {
            if let Some(Value::Ref(r)) = target.value() {
                match config.state.handler(r) {
                    Ok(handler) if handler == p => {}
                    Ok(handler) => {
                        violations.push(format!("apply on {p} targets {r} handled by {handler}"))
                    }
                    Err(e) => violations.push(format!("apply target {r}: {e}")),
                }
            }
        }
    }

    // Channel linearity within the configuration: at most one pending
    // sender and one pending waiter per channel, and a sender in the same
    // queue as its wait must weakly precede it.
    let mut senders = BTreeMap::new();
    let mut waiters = BTreeMap::new();
    for (&p, queue) in &config.queues {
        let mut wait_positions: BTreeMap<_, usize> = BTreeMap::new();
        for (i, statement) in queue.iter().enumerate() {
            match statement {
                Statement::Op(Op::Result { channel, .. })
                | Statement::Op(Op::Notify { channel }) => {
                    *senders.entry(*channel).or_insert(0usize) += 1;
                    if let Some(&wait_at) = wait_positions.get(channel) {
                        violations.push(format!(
                            "on {p}, wait({channel}) at {wait_at} strongly precedes its sender at {i}"
                        ));
                    }
                }
                Statement::Op(Op::Wait { channel }) => {
                    *waiters.entry(*channel).or_insert(0usize) += 1;
                    wait_positions.insert(*channel, i);
                }
                _ => {}
            }
        }
    }
    for (channel, count) in senders {
        if count > 1 {
            violations.push(format!("channel {channel} has {count} pending senders"));
        }
    }
    for (channel, count) in waiters {
        if count > 1 {
            violations.push(format!("channel {channel} has {count} pending waiters"));
        }
    }

    let _ = engine;
    violations
}
