//! Gait library, gait composition and contact phases.
//!
//! Periodic gaits use a per-leg phase variable: leg `j` is in contact at time
//! `t` (measured from the start of its segment) iff
//! `frac(t / period - offset_j) < duty_j`. Aperiodic gaits list contact
//! intervals explicitly; uncovered time is swing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ContactFlags, ResetKind};
use crate::robot::{LegIndex, NUM_LEGS};

/// Keeps sample times that land on a phase switch on the later side.
const SAMPLE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaitError {
    #[error("invalid gait: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGait {
    pub period: f64,
    pub offsets: [f64; NUM_LEGS],
    pub duty: [f64; NUM_LEGS],
}

impl PeriodicGait {
    /// Contact flags at time `t` after the gait's origin.
    pub fn flags_at(&self, t: f64) -> ContactFlags {
        ContactFlags(std::array::from_fn(|j| {
            let phase = (t / self.period - self.offsets[j] + SAMPLE_EPS).rem_euclid(1.0);
            phase < self.duty[j]
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactInterval {
    pub start: f64,
    pub end: f64,
    pub contact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GaitKind {
    Periodic(PeriodicGait),
    Aperiodic { intervals: [Vec<ContactInterval>; NUM_LEGS] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    pub kind: GaitKind,
    /// Segment length (s).
    pub duration: f64,
}

pub const TROT: PeriodicGait = PeriodicGait {
    period: 0.36,
    offsets: [0.0, 0.5, 0.5, 0.0],
    duty: [0.5; NUM_LEGS],
};

pub const BOUND: PeriodicGait = PeriodicGait {
    period: 0.36,
    offsets: [0.0, 0.0, 0.5, 0.5],
    duty: [0.4; NUM_LEGS],
};

pub const HOP_DIAGONAL: PeriodicGait = PeriodicGait {
    period: 0.6,
    offsets: [0.0, 0.5, 0.5, 0.0],
    duty: [0.3; NUM_LEGS],
};

pub const HOP_FOUR: PeriodicGait = PeriodicGait {
    period: 0.5,
    offsets: [0.0; NUM_LEGS],
    duty: [0.5; NUM_LEGS],
};

pub const STAND: PeriodicGait = PeriodicGait {
    period: 1.0,
    offsets: [0.0; NUM_LEGS],
    duty: [1.0; NUM_LEGS],
};

impl GaitSpec {
    pub fn periodic(gait: PeriodicGait, duration: f64) -> Self {
        Self {
            kind: GaitKind::Periodic(gait),
            duration,
        }
    }

    pub fn stand(duration: f64) -> Self {
        Self::periodic(STAND, duration)
    }

    pub fn trot(duration: f64) -> Self {
        Self::periodic(TROT, duration)
    }

    /// All feet on the ground for `stance`, then all feet off for `flight`.
    pub fn jump(stance: f64, flight: f64) -> Self {
        let leg = vec![ContactInterval {
            start: 0.0,
            end: stance,
            contact: true,
        }];
        Self {
            kind: GaitKind::Aperiodic {
                intervals: std::array::from_fn(|_| leg.clone()),
            },
            duration: stance + flight,
        }
    }

    /// A segment with every leg in swing.
    pub fn flight(duration: f64) -> Self {
        Self {
            kind: GaitKind::Aperiodic {
                intervals: Default::default(),
            },
            duration,
        }
    }

    /// Periodic preset by name: stand, trot, bound, hop-diagonal, hop-four.
    pub fn periodic_preset(name: &str) -> Option<PeriodicGait> {
        match name {
            "stand" => Some(STAND),
            "trot" => Some(TROT),
            "bound" => Some(BOUND),
            "hop-diagonal" | "hop_diagonal" => Some(HOP_DIAGONAL),
            "hop-four" | "hop_four" => Some(HOP_FOUR),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), GaitError> {
        let invalid = |m: String| Err(GaitError::InvalidSpec(m));
        if !(self.duration > 0.0) {
            return invalid(format!("duration {} must be positive", self.duration));
        }
        match &self.kind {
            GaitKind::Periodic(g) => {
                if !(g.period > 0.0) {
                    return invalid(format!("period {} must be positive", g.period));
                }
                for j in 0..NUM_LEGS {
                    if !(0.0..=1.0).contains(&g.offsets[j]) || !(0.0..=1.0).contains(&g.duty[j]) {
                        return invalid("offsets and duty factors must lie in [0, 1]".into());
                    }
                }
            }
            GaitKind::Aperiodic { intervals } => {
                for (j, leg) in intervals.iter().enumerate() {
                    let mut sorted = leg.clone();
                    sorted.sort_by(|a, b| a.start.total_cmp(&b.start));
                    for iv in &sorted {
                        if !(iv.start >= 0.0 && iv.end <= self.duration + SAMPLE_EPS && iv.start < iv.end) {
                            return invalid(format!("interval {iv:?} of leg {j} outside [0, {}]", self.duration));
                        }
                    }
                    if sorted.windows(2).any(|w| w[1].start < w[0].end - SAMPLE_EPS) {
                        return invalid(format!("intervals of leg {j} overlap"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Contact flags at time `t` within the segment.
    pub fn flags_at(&self, t: f64) -> ContactFlags {
        match &self.kind {
            GaitKind::Periodic(g) => g.flags_at(t),
            GaitKind::Aperiodic { intervals } => {
                let t = t + SAMPLE_EPS;
                ContactFlags(std::array::from_fn(|j| {
                    intervals[j]
                        .iter()
                        .find(|iv| iv.start <= t && t < iv.end)
                        .is_some_and(|iv| iv.contact)
                }))
            }
        }
    }

    fn steps(&self, dt: f64) -> Result<usize, GaitError> {
        let n = (self.duration / dt).round();
        if (n * dt - self.duration).abs() > 1e-9 || n < 1.0 {
            return Err(GaitError::InvalidSpec(format!(
                "duration {} is not a multiple of dt {dt}",
                self.duration
            )));
        }
        Ok(n as usize)
    }
}

/// How contact flags continue past the end of a schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Continuation {
    /// Hold the final column.
    Hold,
    /// Keep evaluating a periodic gait whose phase origin is at `origin`
    /// (a step index relative to the schedule start).
    Periodic { gait: PeriodicGait, origin: i64 },
}

/// Per-step contact flags at a fixed time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSchedule {
    pub dt: f64,
    /// Time of column 0 (s).
    pub start_time: f64,
    pub contacts: Vec<ContactFlags>,
    pub continuation: Continuation,
}

pub fn build_gait(spec: &GaitSpec, dt: f64) -> Result<ContactSchedule, GaitError> {
    compose(std::slice::from_ref(spec), dt)
}

/// Concatenate gait segments into one schedule starting at time 0.
pub fn compose(specs: &[GaitSpec], dt: f64) -> Result<ContactSchedule, GaitError> {
    if !(dt > 0.0) {
        return Err(GaitError::InvalidSpec(format!("dt {dt} must be positive")));
    }
    if specs.is_empty() {
        return Err(GaitError::InvalidSpec("no gait segments".into()));
    }
    let mut contacts = Vec::new();
    let mut continuation = Continuation::Hold;
    for spec in specs {
        spec.validate()?;
        let n = spec.steps(dt)?;
        let origin = contacts.len();
        contacts.extend((0..n).map(|k| spec.flags_at(k as f64 * dt)));
        continuation = match &spec.kind {
            GaitKind::Periodic(gait) => Continuation::Periodic {
                gait: *gait,
                origin: origin as i64,
            },
            GaitKind::Aperiodic { .. } => Continuation::Hold,
        };
    }
    Ok(ContactSchedule {
        dt,
        start_time: 0.0,
        contacts,
        continuation,
    })
}

impl ContactSchedule {
    pub fn len(&self) -> usize {
        self.contacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contacts.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.len() as f64 * self.dt
    }

    /// Absolute step index of column 0 on the global `dt` grid.
    pub fn start_step(&self) -> i64 {
        (self.start_time / self.dt).round() as i64
    }

    /// Step index (relative to column 0) containing time `t`.
    pub fn step_at(&self, t: f64) -> i64 {
        ((t - self.start_time) / self.dt + SAMPLE_EPS).floor() as i64
    }

    /// Flags at relative step `k`; steps past the end follow the
    /// continuation rule and steps before the start use column 0.
    pub fn flags(&self, k: i64) -> ContactFlags {
        if k < 0 {
            return self.contacts[0];
        }
        if let Some(f) = self.contacts.get(k as usize) {
            return *f;
        }
        match self.continuation {
            Continuation::Hold => *self.contacts.last().expect("nonempty schedule"),
            Continuation::Periodic { gait, origin } => gait.flags_at((k - origin) as f64 * self.dt),
        }
    }

    pub fn flags_at_time(&self, t: f64) -> ContactFlags {
        self.flags(self.step_at(t))
    }

    /// The `round(horizon / dt)` columns starting at the step containing
    /// `t0`.
    pub fn window(&self, t0: f64, horizon: f64) -> ContactSchedule {
        let k0 = self.step_at(t0).max(0);
        let n = ((horizon / self.dt).round() as usize).max(1);
        let contacts = (0..n as i64).map(|k| self.flags(k0 + k)).collect();
        // A window ending inside the scripted part does not know what
        // follows it and holds its last column.
        let continuation = match self.continuation {
            Continuation::Periodic { gait, origin } if k0 as usize + n >= self.len() => {
                Continuation::Periodic {
                    gait,
                    origin: origin - k0,
                }
            }
            _ => Continuation::Hold,
        };
        ContactSchedule {
            dt: self.dt,
            start_time: self.start_time + k0 as f64 * self.dt,
            contacts,
            continuation,
        }
    }

    /// Relative steps `[start, end)` of the constant-contact run of `leg`
    /// containing step `k`. The search is limited to `max_steps` beyond the
    /// end of the schedule.
    pub fn contact_run(&self, leg: LegIndex, k: i64, max_steps: i64) -> (i64, i64) {
        let j = leg.index();
        let state = self.flags(k).0[j];
        let mut start = k;
        while start > 0 && self.flags(start - 1).0[j] == state {
            start -= 1;
        }
        let mut end = k + 1;
        let limit = self.len() as i64 + max_steps;
        while end < limit && self.flags(end).0[j] == state {
            end += 1;
        }
        (start, end)
    }
}

/// A maximal run of constant contact flags with the resets applied at its
/// end.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub start: usize,
    pub end: usize,
    pub flags: ContactFlags,
    /// Reset applied to each leg at `end`; all `None` for the final phase.
    pub resets: [Option<ResetKind>; NUM_LEGS],
}

pub fn transition_resets(before: &ContactFlags, after: &ContactFlags) -> [Option<ResetKind>; NUM_LEGS] {
    std::array::from_fn(|j| match (before.0[j], after.0[j]) {
        (false, true) => Some(ResetKind::Touchdown),
        (true, false) => Some(ResetKind::Takeoff),
        _ => None,
    })
}

pub fn segment_phases(schedule: &ContactSchedule) -> Vec<Phase> {
    let mut phases: Vec<Phase> = Vec::new();
    for (k, flags) in schedule.contacts.iter().enumerate() {
        match phases.last_mut() {
            Some(p) if p.flags == *flags => p.end = k + 1,
            Some(p) => {
                p.resets = transition_resets(&p.flags, flags);
                phases.push(Phase {
                    start: k,
                    end: k + 1,
                    flags: *flags,
                    resets: [None; NUM_LEGS],
                });
            }
            None => phases.push(Phase {
                start: 0,
                end: 1,
                flags: *flags,
                resets: [None; NUM_LEGS],
            }),
        }
    }
    phases
}
