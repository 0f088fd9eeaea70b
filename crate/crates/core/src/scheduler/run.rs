//! Driving a single run to termination, deadlock, or budget exhaustion.

use thiserror::Error;

use crate::runtime::rules::{AssertionViolation, Engine, StepResult, StuckClass};
use crate::runtime::Configuration;
use crate::state::Proc;

use super::policy::{SchedulePolicy, SplitMix64};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Terminated,
    Deadlock,
    BudgetExhausted,
    AssertionViolation,
}

#[derive(Debug, Clone)]
pub struct TraceStep {
    pub index: usize,
    pub proc: Proc,
    pub rule: &'static str,
    pub head: String,
}

impl std::fmt::Display for TraceStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} | {} | {} | {}",
            self.index, self.proc, self.rule, self.head
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub final_config: Configuration,
    pub trace: Vec<TraceStep>,
    pub steps: usize,
    pub violation: Option<AssertionViolation>,
    /// Deadlock report lines, one per blocked processor.
    pub deadlock_report: Vec<String>,
}

impl RunOutcome {
    pub fn render_trace(&self) -> String {
        let mut out = String::new();
        for step in &self.trace {
            out.push_str(&step.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("script step {step}: processor ordinal {ordinal} is not enabled")]
    ScriptProcessorDisabled { step: usize, ordinal: usize },
    #[error("script ended before the run finished")]
    ScriptExhausted,
    #[error("the exhaustive policy drives the explorer, not single runs")]
    ExhaustiveNotRunnable,
}

/// Runs the program from its initial configuration, stepping one enabled
/// processor at a time per the policy.
pub fn run(
    engine: &Engine,
    policy: &SchedulePolicy,
    max_steps: usize,
) -> Result<RunOutcome, ScheduleError> {
    run_observed(engine, policy, max_steps, |_, _| {})
}

/// Like [`run`] but invoking `observer` with every configuration reached
/// (including the initial one, paired with no trace step yet).
pub fn run_observed(
    engine: &Engine,
    policy: &SchedulePolicy,
    max_steps: usize,
    mut observer: impl FnMut(&Configuration, Option<&TraceStep>),
) -> Result<RunOutcome, ScheduleError> {
    let mut config = engine.initial_configuration();
    observer(&config, None);
    let mut trace: Vec<TraceStep> = Vec::new();
    let mut rng = match policy {
        SchedulePolicy::Random { seed } => Some(SplitMix64::new(*seed)),
        SchedulePolicy::Exhaustive { .. } => return Err(ScheduleError::ExhaustiveNotRunnable),
        _ => None,
    };
    // Round-robin position: ordinal rank of the last stepped processor.
    let mut rr_last: Option<Proc> = None;
    let mut script_pos = 0usize;

    for index in 0..max_steps {
        // Probe and step in one pass, reusing the computed rewrite of the
        // chosen processor.
        let chosen: Option<(Proc, StepResult)> = match policy {
            SchedulePolicy::RoundRobin => {
                // Processors ordered by id; continue after the last stepped
                // one, skipping disabled processors.
                let procs: Vec<Proc> = config.queues.keys().copied().collect();
                let start = rr_last
                    .and_then(|last| procs.iter().position(|&p| p > last))
                    .unwrap_or(0);
                let mut found = None;
                for offset in 0..procs.len() {
                    let p = procs[(start + offset) % procs.len()];
                    if let Ok(result) = engine.try_step(&config, p) {
                        found = Some((p, result));
                        break;
                    }
                }
                if let Some((p, _)) = &found {
                    rr_last = Some(*p);
                }
                found
            }
            SchedulePolicy::Random { .. } => {
                let mut candidates: Vec<(Proc, StepResult)> = Vec::new();
                for &p in config.queues.keys() {
                    if let Ok(result) = engine.try_step(&config, p) {
                        candidates.push((p, result));
                    }
                }
                if candidates.is_empty() {
                    None
                } else {
                    let rng = rng.as_mut().expect("random policy has a generator");
                    Some(candidates.swap_remove(rng.pick(candidates.len())))
                }
            }
            SchedulePolicy::Script(ordinals) => {
                if engine.enabled_procs(&config).is_empty() {
                    None
                } else {
                    let Some(&ordinal) = ordinals.get(script_pos) else {
                        return Err(ScheduleError::ScriptExhausted);
                    };
                    script_pos += 1;
                    let by_ordinal: Vec<Proc> = config.queues.keys().copied().collect();
                    let attempt = by_ordinal
                        .get(ordinal)
                        .and_then(|&p| engine.try_step(&config, p).ok().map(|r| (p, r)));
                    match attempt {
                        Some(found) => Some(found),
                        None => {
                            return Err(ScheduleError::ScriptProcessorDisabled {
                                step: index,
                                ordinal,
                            })
                        }
                    }
                }
            }
            SchedulePolicy::Exhaustive { .. } => unreachable!("rejected above"),
        };
        let Some((proc, result)) = chosen else {
            let status = if config.is_terminal() {
                RunStatus::Terminated
            } else {
                RunStatus::Deadlock
            };
            let deadlock_report = deadlock_report(engine, &config);
            return Ok(RunOutcome {
                status,
                final_config: config,
                trace,
                steps: index,
                violation: None,
                deadlock_report,
            });
        };
        let head = engine.render_head(&config, proc);
        let step = TraceStep {
            index,
            proc,
            rule: result.rule.name(),
            head,
        };
        config = result.config;
        observer(&config, Some(&step));
        trace.push(step);
        if let Some(violation) = result.violation {
            return Ok(RunOutcome {
                status: RunStatus::AssertionViolation,
                final_config: config,
                trace,
                steps: index + 1,
                violation: Some(violation),
                deadlock_report: Vec::new(),
            });
        }
    }
    Ok(RunOutcome {
        status: RunStatus::BudgetExhausted,
        final_config: config,
        trace,
        steps: max_steps,
        violation: None,
        deadlock_report: Vec::new(),
    })
}

fn deadlock_report(engine: &Engine, config: &Configuration) -> Vec<String> {
    match engine.classify_stuck(config) {
        StuckClass::Deadlock(blocked) => blocked
            .iter()
            .map(|b| format!("{}: {} -- {}", b.proc, b.head, b.reason))
            .collect(),
        StuckClass::Live => Vec::new(),
    }
}
