//! Wall-clock accounting of computation and communication overlap.
//!
//! Update tasks and the communication agent bracket their work with
//! [`ActivityClock::compute`] and [`ActivityClock::comm`] guards. Every
//! transition charges the time since the previous transition to the bucket
//! for the state that just ended: compute only, comm only, or both.

use serde::{Deserialize, Serialize};
use std::sync::Mutex;
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub compute_s: f64,
    pub comm_s: f64,
    pub both_s: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.compute_s + self.comm_s + self.both_s
    }

    pub fn since(&self, earlier: &PhaseTimes) -> PhaseTimes {
        PhaseTimes {
            compute_s: self.compute_s - earlier.compute_s,
            comm_s: self.comm_s - earlier.comm_s,
            both_s: self.both_s - earlier.both_s,
        }
    }
}

#[derive(Debug)]
struct ClockState {
    compute: usize,
    comm: usize,
    last: Instant,
    compute_only: Duration,
    comm_only: Duration,
    both: Duration,
}

impl ClockState {
    fn charge(&mut self, now: Instant) {
        let dt = now - self.last;
        self.last = now;
        match (self.compute > 0, self.comm > 0) {
            (true, false) => self.compute_only += dt,
            (false, true) => self.comm_only += dt,
            (true, true) => self.both += dt,
            (false, false) => {}
        }
    }
}

#[derive(Debug)]
pub struct ActivityClock {
    state: Mutex<ClockState>,
}

impl Default for ActivityClock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
enum Activity {
    Compute,
    Comm,
}

/// Marks one activity as running until dropped.
pub struct ActivityGuard<'a> {
    clock: &'a ActivityClock,
    what: Activity,
}

impl Drop for ActivityGuard<'_> {
    fn drop(&mut self) {
        self.clock.transition(self.what, false);
    }
}

impl ActivityClock {
    pub fn new() -> Self {
        ActivityClock {
            state: Mutex::new(ClockState {
                compute: 0,
                comm: 0,
                last: Instant::now(),
                compute_only: Duration::ZERO,
                comm_only: Duration::ZERO,
                both: Duration::ZERO,
            }),
        }
    }

    fn transition(&self, what: Activity, enter: bool) {
        let now = Instant::now();
        let mut s = self.state.lock().unwrap();
        s.charge(now);
        let counter = match what {
            Activity::Compute => &mut s.compute,
            Activity::Comm => &mut s.comm,
        };
        if enter {
            *counter += 1;
        } else {
            *counter -= 1;
        }
    }

    pub fn compute(&self) -> ActivityGuard<'_> {
        self.transition(Activity::Compute, true);
        ActivityGuard { clock: self, what: Activity::Compute }
    }

    pub fn comm(&self) -> ActivityGuard<'_> {
        self.transition(Activity::Comm, true);
        ActivityGuard { clock: self, what: Activity::Comm }
    }

    /// Totals so far, including the interval still open.
    pub fn snapshot(&self) -> PhaseTimes {
        let mut s = self.state.lock().unwrap();
        s.charge(Instant::now());
        PhaseTimes {
            compute_s: s.compute_only.as_secs_f64(),
            comm_s: s.comm_only.as_secs_f64(),
            both_s: s.both.as_secs_f64(),
        }
    }
}
