//! Scheduling policies and the deterministic random source.

/// How the next enabled processor is chosen. `Random` is fully determined
/// by its seed; `Script` aborts when it names a processor that is not
/// enabled; `Exhaustive` belongs to the explorer entry point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SchedulePolicy {
    RoundRobin,
    Random { seed: u64 },
    Script(Vec<usize>),
    Exhaustive { depth: usize },
}

/// splitmix64: small, platform-stable, and good enough for schedule choice.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> SplitMix64 {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform index into `0..n` (n > 0).
    pub fn pick(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }
}
