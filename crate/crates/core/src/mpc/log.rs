//! Run logs and the files written from them.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ContactFlags, ControlInput, HkdState, POSITION, VELOCITY};
use crate::robot::{LegIndex, NUM_LEGS};
use crate::stats::{render_table, SolveStats};

/// One plant step.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    /// State at `t`, leg slots in the physical contact modes.
    pub x: HkdState,
    pub u: ControlInput,
    pub torque: [Vector3<f64>; NUM_LEGS],
    pub contacts: ContactFlags,
    /// Window start of the plan that produced `u`.
    pub plan_t0: f64,
    pub z_ref: f64,
    pub vx_ref: f64,
}

/// One replan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub t: f64,
    pub wall_ms: f64,
    pub iterations: usize,
    pub cost: f64,
    /// Largest touchdown residual of the returned trajectory (m).
    pub violation: f64,
    pub converged: bool,
    pub cold: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Touchdown,
    Takeoff,
    Disturbance,
    Divergence,
    IkFailure,
    TorqueSaturation,
    NotConverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub t: f64,
    pub kind: EventKind,
    pub leg: Option<LegIndex>,
    pub detail: String,
}

/// Where a swing foot met the ground relative to where it was sent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TouchdownRecord {
    pub t: f64,
    pub leg: LegIndex,
    pub foot: Vector3<f64>,
    pub target: Vector3<f64>,
    /// Scheduled touchdown time of the swing.
    pub scheduled: f64,
}

impl TouchdownRecord {
    pub fn error(&self) -> f64 {
        (self.foot - self.target).norm()
    }
}

/// A contiguous interval with all four feet off the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightRecord {
    pub start: f64,
    pub end: f64,
    pub duration: f64,
    /// Highest CoM height within the interval.
    pub apex: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub duration: f64,
    pub ticks: usize,
    pub diverged: Option<String>,
    pub flights: Vec<FlightRecord>,
    pub height_rmse: f64,
    pub solves: Option<SolveStats>,
    pub max_replan_iterations: usize,
    pub max_replan_violation: f64,
    pub divergence_events: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub scenario: String,
    pub plant_dt: f64,
    pub ticks: Vec<TickRecord>,
    pub solves: Vec<SolveRecord>,
    pub events: Vec<Event>,
    pub touchdowns: Vec<TouchdownRecord>,
}

impl RunLog {
    pub fn event(&mut self, t: f64, kind: EventKind, leg: Option<LegIndex>, detail: impl Into<String>) {
        self.events.push(Event {
            t,
            kind,
            leg,
            detail: detail.into(),
        });
    }

    pub fn diverged(&self) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == EventKind::Divergence)
    }

    /// Maximal all-feet-off intervals. An interval still open at the end of
    /// the log is dropped.
    pub fn flights(&self) -> Vec<FlightRecord> {
        let mut out = Vec::new();
        let mut open: Option<(f64, f64)> = None;
        for r in &self.ticks {
            let airborne = r.contacts.stance_count() == 0;
            let z = r.x.0[POSITION + 2];
            open = match (open, airborne) {
                (None, true) => Some((r.t, z)),
                (Some((s, apex)), true) => Some((s, apex.max(z))),
                (Some((s, apex)), false) => {
                    out.push(FlightRecord {
                        start: s,
                        end: r.t,
                        duration: r.t - s,
                        apex: apex.max(z),
                    });
                    None
                }
                (None, false) => None,
            };
        }
        out
    }

    /// Root-mean-square of `z − z_ref` over ticks with `t ∈ [from, to)`.
    pub fn height_rmse(&self, from: f64, to: f64) -> f64 {
        let errs: Vec<f64> = self
            .ticks
            .iter()
            .filter(|r| r.t >= from && r.t < to)
            .map(|r| r.x.0[POSITION + 2] - r.z_ref)
            .collect();
        if errs.is_empty() {
            return 0.0;
        }
        (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()
    }

    /// Statistics of the warm-started replans.
    pub fn replan_stats(&self) -> Option<SolveStats> {
        let ms: Vec<f64> = self.solves.iter().filter(|s| !s.cold).map(|s| s.wall_ms).collect();
        SolveStats::from_samples(&ms).ok()
    }

    pub fn summary(&self) -> RunSummary {
        let warm = self.solves.iter().filter(|s| !s.cold);
        RunSummary {
            scenario: self.scenario.clone(),
            duration: self.ticks.last().map_or(0.0, |r| r.t + self.plant_dt),
            ticks: self.ticks.len(),
            diverged: self.diverged().map(|e| e.detail.clone()),
            flights: self.flights(),
            height_rmse: self.height_rmse(f64::NEG_INFINITY, f64::INFINITY),
            solves: self.replan_stats(),
            max_replan_iterations: warm.clone().map(|s| s.iterations).max().unwrap_or(0),
            max_replan_violation: warm.map(|s| s.violation).fold(0.0, f64::max),
            divergence_events: self.events.iter().filter(|e| e.kind == EventKind::Divergence).count(),
        }
    }

    /// Per-tick CSV: time, 24 state entries, 24 control entries, 12 torques,
    /// 4 contact flags, plan window start and the height and forward velocity
    /// references.
    pub fn run_csv(&self) -> String {
        let mut out = String::new();
        let mut header = vec!["t".to_string()];
        for name in ["roll", "pitch", "yaw", "px", "py", "pz", "wx", "wy", "wz", "vx", "vy", "vz"] {
            header.push(name.to_string());
        }
        for leg in LegIndex::ALL {
            for i in 0..3 {
                header.push(format!("leg_{leg}_{i}"));
            }
        }
        for leg in LegIndex::ALL {
            for c in ["x", "y", "z"] {
                header.push(format!("f_{leg}_{c}"));
            }
        }
        for prefix in ["qd", "tau"] {
            for leg in LegIndex::ALL {
                for i in 0..3 {
                    header.push(format!("{prefix}_{leg}_{i}"));
                }
            }
        }
        for leg in LegIndex::ALL {
            header.push(format!("contact_{leg}"));
        }
        header.extend(["plan_t0", "z_ref", "vx_ref"].map(String::from));
        let _ = writeln!(out, "{}", header.join(","));
        for r in &self.ticks {
            let mut row = vec![r.t.to_string()];
            row.extend(r.x.0.iter().map(f64::to_string));
            row.extend(r.u.0.iter().map(f64::to_string));
            row.extend(r.torque.iter().flat_map(|t| t.iter().map(f64::to_string).collect::<Vec<_>>()));
            row.extend(r.contacts.0.iter().map(|&c| u8::from(c).to_string()));
            row.extend([r.plan_t0, r.z_ref, r.vx_ref].map(|v| v.to_string()));
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Plot series: body height, forward velocity, roll rate and references.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("t,z,z_ref,vx,vx_ref,wx\n");
        for r in &self.ticks {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.t,
                r.x.0[POSITION + 2],
                r.z_ref,
                r.x.0[VELOCITY],
                r.vx_ref,
                r.x.omega().x
            );
        }
        out
    }

    pub fn telemetry_csv(&self) -> String {
        let mut out = String::from("t,wall_ms,iterations,cost,violation,converged,cold\n");
        for s in &self.solves {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.t, s.wall_ms, s.iterations, s.cost, s.violation, s.converged, s.cold
            );
        }
        out
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("t,kind,leg,detail\n");
        for e in &self.events {
            let kind = serde_json::to_value(e.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            let leg = e.leg.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},\"{}\"", e.t, kind, leg, e.detail.replace('"', "'"));
        }
        out
    }

    /// Write `run.csv`, `series.csv`, `telemetry.csv`, `events.csv`,
    /// `summary.json` and `stats.md` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("run.csv"), self.run_csv())?;
        fs::write(dir.join("series.csv"), self.series_csv())?;
        fs::write(dir.join("telemetry.csv"), self.telemetry_csv())?;
        fs::write(dir.join("events.csv"), self.events_csv())?;
        let summary = serde_json::to_string_pretty(&self.summary()).map_err(io::Error::other)?;
        fs::write(dir.join("summary.json"), summary)?;
        let table = match self.replan_stats() {
            Some(s) => render_table(&[(self.scenario.clone(), s)]),
            None => String::new(),
        };
        fs::write(dir.join("stats.md"), table)?;
        Ok(())
    }
}

/// Wall times of a `telemetry.csv`, warm-started replans only.
pub fn read_telemetry_times(text: &str) -> Result<Vec<f64>, String> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty telemetry")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or(format!("missing column {name}"));
    let (wall, cold) = (col("wall_ms")?, col("cold")?);
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cells: Vec<&str> = line.split(',').collect();
        let cell = |c: usize| cells.get(c).copied().ok_or(format!("line {}: too few columns", i + 2));
        if cell(cold)? == "true" {
            continue;
        }
        out.push(cell(wall)?.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2))?);
    }
    Ok(out)
}
