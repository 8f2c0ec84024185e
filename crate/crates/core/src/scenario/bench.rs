//! Wall-clock processing time of the three pipelines on one shared stream.

use serde::Serialize;

use crate::ids::IdsConfig;
use crate::pipeline::{measure_into, LatencyAccumulator, LatencyStats, Pipeline, PipelineMode};
use crate::sim::{legitimate_stream, SimError, Signing};

use super::config::ScenarioConfig;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub packets: usize,
    pub rounds: usize,
    pub warmup: usize,
    /// MAC, IDS and Hybrid, in that order.
    pub rows: Vec<LatencyStats>,
    /// avg(IDS) < avg(MAC) < avg(Hybrid)
    pub ordering_holds: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_budget: Option<bool>,
}

impl BenchReport {
    pub fn row(&self, mode: PipelineMode) -> &LatencyStats {
        self.rows.iter().find(|r| r.mode == mode).expect("bench measures every mode")
    }

    pub fn low_confidence(&self) -> bool {
        self.rows.iter().any(|r| r.low_confidence)
    }
}

/// Measures every mode on the same signed stream of mixed steady and burst
/// traffic. The stream is cut into `rounds` chunks and the modes take turns
/// chunk by chunk (rotating who goes first) so slow drift in machine state
/// hits all three alike. Each mode keeps its own pipeline across chunks.
pub fn bench(config: &ScenarioConfig, budget_ms: Option<f64>) -> Result<BenchReport, SimError> {
    let opts = config.bench;
    let mut bus = config.bus_config(PipelineMode::Hybrid, Vec::new());
    bus.signing = Some(Signing { sender: config.security.sender_id, key_id: config.security.key_id });
    let stream = legitimate_stream(&bus, opts.packets, config.seed)?;
    let warmup = legitimate_stream(&bus, opts.warmup, config.seed.wrapping_add(1))?;

    let ids = IdsConfig::new(config.profile);
    let order = [PipelineMode::MacOnly, PipelineMode::IdsOnly, PipelineMode::Hybrid];
    for mode in order {
        let mut p = Pipeline::new(mode, bus.keystore.clone(), ids.clone());
        let mut scratch = LatencyAccumulator::new(mode);
        measure_into(&warmup, &mut p, &mut scratch);
    }

    let mut pipelines: Vec<Pipeline> =
        order.iter().map(|&m| Pipeline::new(m, bus.keystore.clone(), ids.clone())).collect();
    let mut accs: Vec<LatencyAccumulator> = order.iter().map(|&m| LatencyAccumulator::new(m)).collect();
    let rounds = opts.rounds.max(1);
    let chunk = stream.len().div_ceil(rounds).max(1);
    for (r, part) in stream.chunks(chunk).enumerate() {
        for k in 0..order.len() {
            let i = (r + k) % order.len();
            measure_into(part, &mut pipelines[i], &mut accs[i]);
        }
    }

    let rows: Vec<LatencyStats> = accs.iter().map(LatencyAccumulator::finish).collect();
    let (mac, ids_row, hybrid) = (&rows[0], &rows[1], &rows[2]);
    let ordering_holds = ids_row.avg_ms < mac.avg_ms && mac.avg_ms < hybrid.avg_ms;
    let within_budget = budget_ms.map(|b| rows.iter().all(|r| r.max_ms < b));
    Ok(BenchReport { packets: stream.len(), rounds, warmup: warmup.len(), rows, ordering_holds, budget_ms, within_budget })
}
