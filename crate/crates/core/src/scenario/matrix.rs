//! The attack by technique matrix and its Pass/Fail classification.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::attack::{AttackKind, AttackSpec};
use crate::flags::RuleId;
use crate::pipeline::{Delivery, PipelineMode};
use crate::sim::{FrameRecord, SimError, SimOutcome, Simulation, SwitchAction};
use crate::time::SimTime;
use crate::transmission::TransmissionProfile;

use super::bench::BenchReport;
use super::config::ScenarioConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn of(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn letter(self) -> char {
        match self {
            Outcome::Pass => 'P',
            Outcome::Fail => 'F',
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Pass => "Pass",
            Outcome::Fail => "Fail",
        })
    }
}

/// Expected (detection, mitigation) per cell.
pub fn golden(mode: PipelineMode, attack: AttackKind) -> (Outcome, Outcome) {
    use AttackKind::*;
    use Outcome::{Fail as F, Pass as P};
    use PipelineMode::*;
    match (mode, attack) {
        (MacOnly, Replay) => (F, F),
        (MacOnly, Masquerade) => (P, P),
        (MacOnly, Flood) => (P, P),
        (MacOnly, Drop) => (F, F),
        (IdsOnly, Replay) => (P, P),
        (IdsOnly, Masquerade) => (F, F),
        (IdsOnly, Flood) => (F, F),
        (IdsOnly, Drop) => (P, F),
        (Hybrid, Replay) => (P, P),
        (Hybrid, Masquerade) => (P, P),
        (Hybrid, Flood) => (P, P),
        (Hybrid, Drop) => (P, F),
    }
}

/// Fate of a group of frames. `in_flight` counts frames still on the wire
/// when the run ended.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub sent: usize,
    pub delivered: usize,
    pub rejected: usize,
    pub switch_dropped: usize,
    pub in_flight: usize,
}

impl Tally {
    fn of<'a>(frames: impl Iterator<Item = &'a FrameRecord>) -> Self {
        let mut t = Tally::default();
        for f in frames {
            t.sent += 1;
            match (&f.verdict, f.switch) {
                (_, SwitchAction::Drop) => t.switch_dropped += 1,
                (Some(v), _) if v.decision == Delivery::Deliver => t.delivered += 1,
                (Some(_), _) => t.rejected += 1,
                (None, _) => t.in_flight += 1,
            }
        }
        t
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Evidence {
    pub legitimate: Tally,
    pub injected: Tally,
    /// Legitimate frames the pipeline refused while the attack was active.
    pub legitimate_alerts_in_window: usize,
    pub alerts: usize,
    pub flags: BTreeMap<RuleId, usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cell {
    pub mode: PipelineMode,
    pub attack: AttackKind,
    pub spec: AttackSpec,
    pub detection: Outcome,
    pub mitigation: Outcome,
    pub evidence: Evidence,
}

impl Cell {
    pub fn expected(&self) -> (Outcome, Outcome) {
        golden(self.mode, self.attack)
    }

    pub fn matches_golden(&self) -> bool {
        self.expected() == (self.detection, self.mitigation)
    }
}

/// Scores one simulated attack.
///
/// An injection is detected when one of its frames raised an alert and no
/// legitimate frame raised one between the first injected arrival and one
/// t1 past the last; alerts on legitimate traffic mean the subscriber blamed
/// the wrong frames. A drop is detected when any alert falls between the
/// first dropped frame and two t1 past the last one.
///
/// Mitigation needs every injected frame refused and every legitimate frame
/// delivered. The information in dropped frames never reaches the
/// subscriber, so a drop is never mitigated.
pub fn classify(outcome: &SimOutcome, spec: &AttackSpec, profile: &TransmissionProfile) -> Cell {
    let t1_us = u64::from(profile.t1_ms()) * 1_000;
    let mut flags = BTreeMap::new();
    for f in &outcome.flags {
        *flags.entry(f.event.rule).or_insert(0) += 1;
    }
    let alerts = outcome.flags.iter().filter(|f| f.event.is_alert()).count();
    let mut evidence = Evidence {
        legitimate: Tally::of(outcome.legitimate()),
        injected: Tally::of(outcome.injected()),
        legitimate_alerts_in_window: 0,
        alerts,
        flags,
    };

    let detected = if spec.kind().injects() {
        let arrivals: Vec<SimTime> = outcome.injected().filter_map(|f| f.arrived_at).collect();
        match (arrivals.iter().min(), arrivals.iter().max()) {
            (Some(&first), Some(&last)) => {
                let window = first..=last.plus_micros(t1_us);
                evidence.legitimate_alerts_in_window = outcome
                    .legitimate()
                    .filter(|f| f.alerted() && f.arrived_at.is_some_and(|t| window.contains(&t)))
                    .count();
                outcome.injected().any(FrameRecord::alerted) && evidence.legitimate_alerts_in_window == 0
            }
            _ => false,
        }
    } else {
        let dropped: Vec<SimTime> =
            outcome.legitimate().filter(|f| f.switch == SwitchAction::Drop).map(|f| f.sent_at).collect();
        match (dropped.first(), dropped.last()) {
            (Some(&first), Some(&last)) => {
                let window = first..=last.plus_micros(2 * t1_us);
                outcome.flags.iter().any(|f| f.event.is_alert() && window.contains(&f.event.time))
            }
            _ => false,
        }
    };

    let injected = evidence.injected;
    let legit = evidence.legitimate;
    let mitigated = spec.kind().injects()
        && injected.delivered == 0
        && legit.rejected == 0
        && legit.switch_dropped == 0;

    Cell {
        mode: outcome.mode,
        attack: spec.kind(),
        spec: spec.clone(),
        detection: Outcome::of(detected),
        mitigation: Outcome::of(mitigated),
        evidence,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub duration_ms: u64,
    pub profile: TransmissionProfile,
    pub cells: Vec<Cell>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub latency: Option<BenchReport>,
}

impl ScenarioReport {
    pub fn empty(config: &ScenarioConfig) -> Self {
        ScenarioReport {
            seed: config.seed,
            duration_ms: config.duration_ms,
            profile: config.profile,
            cells: Vec::new(),
            latency: None,
        }
    }

    pub fn cell(&self, mode: PipelineMode, attack: AttackKind) -> Option<&Cell> {
        self.cells.iter().find(|c| c.mode == mode && c.attack == attack)
    }

    pub fn mismatches(&self) -> Vec<&Cell> {
        self.cells.iter().filter(|c| !c.matches_golden()).collect()
    }
}

/// Simulates `spec` alone under `mode`.
pub fn run_cell(config: &ScenarioConfig, mode: PipelineMode, spec: &AttackSpec) -> Result<(Cell, SimOutcome), SimError> {
    let outcome = Simulation::new(config.bus_config(mode, vec![spec.clone()]))?.run()?;
    let cell = classify(&outcome, spec, &config.profile);
    Ok((cell, outcome))
}

/// Every configured attack under every configured mode, one simulation each.
pub fn run_matrix(config: &ScenarioConfig) -> Result<ScenarioReport, SimError> {
    let mut report = ScenarioReport::empty(config);
    for &mode in &config.modes {
        for spec in &config.attacks {
            report.cells.push(run_cell(config, mode, spec)?.0);
        }
    }
    Ok(report)
}
