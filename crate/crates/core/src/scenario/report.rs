//! Text and JSON renderings of matrix reports, bench tables and frame traces.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::codec::MacAddress;
use crate::pipeline::{Delivery, PipelineMode, Stage};
use crate::sim::{FrameRecord, LogRecord, Origin, SimOutcome, SwitchAction};

use super::bench::BenchReport;
use super::matrix::ScenarioReport;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Format {
    #[default]
    Text,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Format::Text),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected text or json)")),
        }
    }
}

pub fn render_report(report: &ScenarioReport, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
        Format::Text => render_text(report),
    }
}

const HEADER: &str = "  Attack        Detection  Mitigation  Expected";

fn render_text(report: &ScenarioReport) -> String {
    let mut out = String::new();
    let p = report.profile;
    let _ = writeln!(
        out,
        "GOOSE attack matrix  seed={}  duration={} ms  t0={} ms  t1={} ms  ttl_multiplier={}",
        report.seed,
        report.duration_ms,
        p.t0_ms(),
        p.t1_ms(),
        p.ttl_multiplier()
    );
    let mut modes: Vec<PipelineMode> = report.cells.iter().map(|c| c.mode).collect();
    modes.dedup();
    if modes.is_empty() {
        let _ = writeln!(out, "\n{HEADER}");
    }
    for mode in &modes {
        let _ = writeln!(out, "\n{}\n{HEADER}", mode.label());
        for c in report.cells.iter().filter(|c| c.mode == *mode) {
            let (d, m) = c.expected();
            let mark = if c.matches_golden() { "" } else { "  MISMATCH" };
            let _ = writeln!(
                out,
                "  {:<13} {:<10} {:<11} {}/{}{mark}",
                c.attack.label(),
                c.detection.to_string(),
                c.mitigation.to_string(),
                d.letter(),
                m.letter()
            );
        }
    }
    if !report.cells.is_empty() {
        let _ = writeln!(out, "\nEvidence (sent/delivered/rejected/switch-dropped)");
        let _ = writeln!(out, "  Mode    Attack        Legitimate         Injected           Alerts  Flags");
        for c in &report.cells {
            let t = |t: crate::scenario::matrix::Tally| {
                format!("{}/{}/{}/{}", t.sent, t.delivered, t.rejected, t.switch_dropped)
            };
            let flags: Vec<String> = c.evidence.flags.iter().map(|(r, n)| format!("{r}={n}")).collect();
            let _ = writeln!(
                out,
                "  {:<7} {:<13} {:<18} {:<18} {:<7} {}",
                c.mode.label(),
                c.attack.label(),
                t(c.evidence.legitimate),
                t(c.evidence.injected),
                c.evidence.alerts,
                flags.join(" ")
            );
        }
        let mismatches = report.mismatches().len();
        let _ = if mismatches == 0 {
            writeln!(out, "\nGolden matrix: match")
        } else {
            writeln!(out, "\nGolden matrix: {mismatches} cell(s) differ")
        };
    }
    if let Some(bench) = &report.latency {
        out.push('\n');
        out.push_str(&render_bench(bench, Format::Text));
    }
    out
}

pub fn render_bench(bench: &BenchReport, format: Format) -> String {
    if format == Format::Json {
        let mut s = serde_json::to_string_pretty(bench).expect("bench report serializes");
        s.push('\n');
        return s;
    }
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Processing time per packet ({} packets per mode, {} rounds, {} warm-up)",
        bench.packets, bench.rounds, bench.warmup
    );
    let _ = writeln!(out, "  Technique  Avg/ms     Max/ms     Avg wall/ms  Max wall/ms  Interrupted");
    for r in &bench.rows {
        let _ = writeln!(
            out,
            "  {:<10} {:<10.5} {:<10.5} {:<12.5} {:<12.5} {}",
            r.mode.label(),
            r.avg_ms,
            r.max_ms,
            r.avg_wall_ms,
            r.max_wall_ms,
            r.interrupted
        );
    }
    let _ = writeln!(
        out,
        "Ordering avg(IDS) < avg(MAC) < avg(Hybrid): {}",
        if bench.ordering_holds { "holds" } else { "violated" }
    );
    if let (Some(budget), Some(ok)) = (bench.budget_ms, bench.within_budget) {
        let _ = writeln!(out, "Budget max < {budget} ms: {}", if ok { "met" } else { "exceeded" });
    }
    if bench.low_confidence() {
        let _ = writeln!(out, "warning: fewer than {} samples per mode", crate::pipeline::MIN_CONFIDENT_SAMPLES);
    }
    out
}

fn macs(f: &FrameRecord) -> (MacAddress, MacAddress) {
    let dst = MacAddress(f.bytes[0..6].try_into().expect("header"));
    let src = MacAddress(f.bytes[6..12].try_into().expect("header"));
    (dst, src)
}

/// Console-style trace of one subscriber, a line per frame on the bus and
/// per clock-driven flag.
pub fn render_trace(outcome: &SimOutcome) -> String {
    let mut out = String::new();
    for rec in &outcome.log {
        match rec {
            LogRecord::Switch { time, frame, action: SwitchAction::Drop } => {
                let f = &outcome.frames[*frame];
                let (dst, src) = macs(f);
                let _ = writeln!(out, "[{:>11.3} ms] - GOOSE ({dst}) lost in transit from {src}", time.as_millis_f64());
            }
            LogRecord::Verdict { time, frame, mode, decision, stage, flags } => {
                let f = &outcome.frames[*frame];
                let (dst, src) = macs(f);
                let line = match (decision, stage, mode) {
                    (Delivery::Deliver, _, PipelineMode::MacOnly) => {
                        format!("✓ GOOSE ({dst}) MAC Auth PASS. Forwarding packet from {src}")
                    }
                    (Delivery::Deliver, _, PipelineMode::IdsOnly) => {
                        format!("✓ GOOSE ({dst}) IDS PASS. Forwarding packet from {src}")
                    }
                    (Delivery::Deliver, _, PipelineMode::Hybrid) => {
                        format!("✓ GOOSE ({dst}) Auth + IDS PASS. Forwarding packet from {src}")
                    }
                    (Delivery::Drop, Stage::Mac, _) => {
                        format!("✗ GOOSE ({dst}) MAC Auth FAIL. Dropping packet from {src}")
                    }
                    (Delivery::Drop, _, _) => format!("✗ GOOSE IDS ({dst}) FAIL. Dropping packet from {src}"),
                };
                let origin = match f.origin {
                    Origin::Publisher => String::new(),
                    Origin::Attacker { .. } => " [injected]".into(),
                };
                let names: Vec<&str> = flags.iter().map(|r| r.name()).collect();
                let flags = if names.is_empty() { String::new() } else { format!(" {{{}}}", names.join(",")) };
                let _ = writeln!(
                    out,
                    "[{:>11.3} ms] {line}  st={} sq={}{origin}{flags}",
                    time.as_millis_f64(),
                    f.st_num,
                    f.sq_num
                );
            }
            LogRecord::Flag(flag) if flag.frame.is_none() => {
                let _ = writeln!(
                    out,
                    "[{:>11.3} ms] ! {} on {}",
                    flag.event.time.as_millis_f64(),
                    flag.event.rule,
                    flag.event.stream
                );
            }
            _ => {}
        }
    }
    out
}
