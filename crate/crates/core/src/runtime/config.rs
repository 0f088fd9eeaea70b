//! Configurations: a state plus one action queue per processor.

use std::collections::BTreeMap;

use crate::frontend::ir::ProgramIR;
use crate::state::{Proc, State, Value};

use super::statement::{Channel, DisplayStatement, Op, Statement};

/// A snapshot in the execution: the state and the action queues. The queue
/// head is the statement being executed; the tail is the request queue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Configuration {
    pub state: State,
    pub queues: BTreeMap<Proc, Vec<Statement>>,
}

impl Configuration {
    /// Termination: all action queues are empty.
    pub fn is_terminal(&self) -> bool {
        self.queues.values().all(|q| q.is_empty())
    }

    pub fn queue(&self, p: Proc) -> &[Statement] {
        self.queues.get(&p).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn head(&self, p: Proc) -> Option<&Statement> {
        self.queue(p).first()
    }

    /// Substitutes `value` for `channel.data` in the statements of `p`'s
    /// queue starting at index `from`.
    pub fn substitute_suffix(&mut self, p: Proc, from: usize, channel: Channel, value: Value) {
        if let Some(queue) = self.queues.get_mut(&p) {
            for statement in queue.iter_mut().skip(from) {
                *statement = statement.substitute(channel, value);
            }
        }
    }

    /// Position of the first top-level `wait(channel)` in `p`'s queue.
    pub fn find_wait(&self, p: Proc, channel: Channel) -> Option<usize> {
        self.queue(p)
            .iter()
            .position(|s| matches!(s, Statement::Op(Op::Wait { channel: c }) if *c == channel))
    }

    /// The processor whose queue holds a top-level `wait(channel)`.
    pub fn find_waiter(&self, channel: Channel) -> Option<(Proc, usize)> {
        self.queues
            .keys()
            .copied()
            .find_map(|p| self.find_wait(p, channel).map(|i| (p, i)))
    }

    /// True if `channel.data` still occurs anywhere in the configuration.
    pub fn mentions_channel_data(&self, channel: Channel) -> bool {
        self.queues
            .values()
            .flatten()
            .any(|s| s.mentions_channel_data(channel))
    }

    pub fn render_queues(&self, ir: &ProgramIR) -> String {
        let mut out = String::new();
        for (p, queue) in &self.queues {
            let rendered: Vec<String> = queue
                .iter()
                .map(|s| DisplayStatement { ir, statement: s }.to_string())
                .collect();
            out.push_str(&format!("{p} :: {}\n", rendered.join("; ")));
        }
        out
    }
}
