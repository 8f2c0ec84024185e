//! Subscriber-side filtering: MAC verification, the IDS, or both in series.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_frame_with_spans, encode_frame, DecodeError, EncodeError, FrameSpans, GooseFrame};
use crate::flags::{packet_digest, FlagEvent, RuleId, StreamKey};
use crate::ids::{Ids, IdsConfig};
use crate::secure_ext::{verify_bytes, AuthVerdict, KeyStore, SecurityExtension};
use crate::time::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    MacOnly,
    IdsOnly,
    Hybrid,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [PipelineMode::MacOnly, PipelineMode::IdsOnly, PipelineMode::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            PipelineMode::MacOnly => "mac-only",
            PipelineMode::IdsOnly => "ids-only",
            PipelineMode::Hybrid => "hybrid",
        }
    }

    /// Short label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            PipelineMode::MacOnly => "MAC",
            PipelineMode::IdsOnly => "IDS",
            PipelineMode::Hybrid => "Hybrid",
        }
    }

    pub fn uses_mac(self) -> bool {
        self != PipelineMode::IdsOnly
    }

    pub fn uses_ids(self) -> bool {
        self != PipelineMode::MacOnly
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mode {s:?} (expected mac-only, ids-only or hybrid)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Delivery {
    Deliver,
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Mac,
    Ids,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub decision: Delivery,
    pub stage: Stage,
    pub flags: Vec<FlagEvent>,
}

impl Verdict {
    pub fn delivered(&self) -> bool {
        self.decision == Delivery::Deliver
    }

    pub fn has_alert(&self) -> bool {
        self.flags.iter().any(FlagEvent::is_alert)
    }
}

/// A frame as it arrived: the exact octets plus the decoded view. Decoding
/// happens before the pipeline so it is not counted as processing time.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReceivedFrame {
    pub bytes: Vec<u8>,
    pub frame: GooseFrame,
    pub spans: FrameSpans,
}

impl ReceivedFrame {
    pub fn decode(bytes: Vec<u8>) -> Result<Self, DecodeError> {
        let (frame, spans) = decode_frame_with_spans(&bytes)?;
        Ok(ReceivedFrame { bytes, frame, spans })
    }

    pub fn from_frame(frame: &GooseFrame) -> Result<Self, EncodeError> {
        let bytes = encode_frame(frame)?;
        let (frame, spans) = decode_frame_with_spans(&bytes).expect("encoder output decodes");
        Ok(ReceivedFrame { bytes, frame, spans })
    }

    pub fn pdu_bytes(&self) -> &[u8] {
        &self.bytes[self.spans.pdu.clone()]
    }
}

/// How many frames reached each stage. In hybrid mode every IDS check is
/// preceded by a passed MAC check.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StageCounters {
    pub received: u64,
    pub mac_checked: u64,
    pub mac_failed: u64,
    pub ids_checked: u64,
    pub ids_rejected: u64,
    pub delivered: u64,
}

#[derive(Debug)]
pub struct Pipeline {
    mode: PipelineMode,
    keystore: KeyStore,
    ids: Ids,
    counters: StageCounters,
}

impl Pipeline {
    pub fn new(mode: PipelineMode, keystore: KeyStore, ids: IdsConfig) -> Self {
        Pipeline { mode, keystore, ids: Ids::new(ids), counters: StageCounters::default() }
    }

    pub fn mode(&self) -> PipelineMode {
        self.mode
    }

    pub fn ids(&self) -> &Ids {
        &self.ids
    }

    pub fn counters(&self) -> StageCounters {
        self.counters
    }

    fn authenticate(&self, rx: &ReceivedFrame) -> Option<RuleId> {
        let Some(raw) = rx.frame.extension.as_deref() else {
            return Some(RuleId::NoAuthExtension);
        };
        let Ok(ext) = SecurityExtension::from_bytes(raw) else {
            return Some(RuleId::MalformedAuthExtension);
        };
        match verify_bytes(rx.pdu_bytes(), &ext, &self.keystore) {
            AuthVerdict::Authentic => None,
            AuthVerdict::Forged => Some(RuleId::AuthFailed),
            AuthVerdict::UnknownKey => Some(RuleId::UnknownKey),
        }
    }

    fn flag_events(rx: &ReceivedFrame, now: SimTime, rules: &[RuleId]) -> Vec<FlagEvent> {
        if rules.is_empty() {
            return Vec::new();
        }
        let key = StreamKey::of(&rx.frame);
        let digest = packet_digest(&rx.bytes);
        rules.iter().map(|&r| FlagEvent::new(now, key.clone(), r, Some(digest.clone()))).collect()
    }

    /// Decides whether `rx` reaches the application.
    pub fn process(&mut self, rx: &ReceivedFrame, now: SimTime) -> Verdict {
        self.counters.received += 1;
        if self.mode.uses_mac() {
            self.counters.mac_checked += 1;
            if let Some(rule) = self.authenticate(rx) {
                self.counters.mac_failed += 1;
                return Verdict { decision: Delivery::Drop, stage: Stage::Mac, flags: Self::flag_events(rx, now, &[rule]) };
            }
        }
        if self.mode.uses_ids() {
            self.counters.ids_checked += 1;
            let verdict = self.ids.inspect(&rx.frame, now);
            let flags = Self::flag_events(rx, now, &verdict.flags);
            if !verdict.is_accept() {
                self.counters.ids_rejected += 1;
                return Verdict { decision: Delivery::Drop, stage: Stage::Ids, flags };
            }
            self.counters.delivered += 1;
            return Verdict { decision: Delivery::Deliver, stage: Stage::None, flags };
        }
        self.counters.delivered += 1;
        Verdict { decision: Delivery::Deliver, stage: Stage::None, flags: Vec::new() }
    }

    /// Earliest instant a TTL check could fire. MAC-only pipelines keep no
    /// stream timing.
    pub fn next_expiry(&self) -> Option<SimTime> {
        if self.mode.uses_ids() {
            self.ids.next_expiry()
        } else {
            None
        }
    }

    pub fn check_expiry(&mut self, now: SimTime) -> Vec<FlagEvent> {
        if self.mode.uses_ids() {
            self.ids.check_expiry(now)
        } else {
            Vec::new()
        }
    }
}

/// Below this many samples the statistics are marked low-confidence.
pub const MIN_CONFIDENT_SAMPLES: usize = 1_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mode: PipelineMode,
    /// Mean over samples the thread ran uninterrupted.
    pub avg_ms: f64,
    /// Largest processing time among samples the thread ran uninterrupted.
    pub max_ms: f64,
    pub samples: usize,
    /// Samples during which the measuring thread was switched out or stalled;
    /// their wall time includes time spent not running the pipeline.
    pub interrupted: usize,
    /// Mean wall time over all samples, interrupted ones included.
    pub avg_wall_ms: f64,
    /// Largest wall time over all samples, interrupted ones included.
    pub max_wall_ms: f64,
    pub low_confidence: bool,
}

/// Wall time a sample may spend with its thread not running before it
/// counts as interrupted.
pub const STALL_SLACK_NS: u128 = 50_000;

/// What the OS reports about the calling thread: context switches so far and
/// CPU time consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ThreadProbe {
    switches: i64,
    cpu_ns: u128,
}

#[cfg(target_os = "linux")]
fn probe() -> ThreadProbe {
    // SAFETY: both calls only write into the zero-initialised structs we pass.
    unsafe {
        let mut usage: libc::rusage = std::mem::zeroed();
        let switches = if libc::getrusage(libc::RUSAGE_THREAD, &mut usage) == 0 {
            usage.ru_nvcsw + usage.ru_nivcsw
        } else {
            0
        };
        let mut ts: libc::timespec = std::mem::zeroed();
        let cpu_ns = if libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) == 0 {
            ts.tv_sec as u128 * 1_000_000_000 + ts.tv_nsec as u128
        } else {
            u128::MAX
        };
        ThreadProbe { switches, cpu_ns }
    }
}

#[cfg(not(target_os = "linux"))]
fn probe() -> ThreadProbe {
    ThreadProbe { switches: 0, cpu_ns: u128::MAX }
}

impl ThreadProbe {
    /// True if between `self` and `after` the thread was switched out, or
    /// spent more than [`STALL_SLACK_NS`] of `wall_ns` not running (hypervisor
    /// steal, interrupt storms).
    fn interrupted(self, after: ThreadProbe, wall_ns: u128) -> bool {
        if after.switches != self.switches {
            return true;
        }
        match after.cpu_ns.checked_sub(self.cpu_ns) {
            Some(cpu) if self.cpu_ns != u128::MAX => wall_ns > cpu + STALL_SLACK_NS,
            _ => false,
        }
    }
}

/// Running latency totals for one mode; several measurement chunks can feed
/// the same accumulator.
#[derive(Clone, Debug)]
pub struct LatencyAccumulator {
    mode: PipelineMode,
    samples: usize,
    clean: usize,
    clean_ns: u128,
    wall_ns: u128,
    max_ns: u128,
    max_wall_ns: u128,
}

impl LatencyAccumulator {
    pub fn new(mode: PipelineMode) -> Self {
        LatencyAccumulator { mode, samples: 0, clean: 0, clean_ns: 0, wall_ns: 0, max_ns: 0, max_wall_ns: 0 }
    }

    pub fn record(&mut self, elapsed_ns: u128, interrupted: bool) {
        self.samples += 1;
        self.wall_ns += elapsed_ns;
        self.max_wall_ns = self.max_wall_ns.max(elapsed_ns);
        if !interrupted {
            self.clean += 1;
            self.clean_ns += elapsed_ns;
            self.max_ns = self.max_ns.max(elapsed_ns);
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn finish(&self) -> LatencyStats {
        let mean = |ns: u128, n: usize| if n == 0 { 0.0 } else { ns as f64 / n as f64 / 1e6 };
        LatencyStats {
            mode: self.mode,
            avg_ms: mean(self.clean_ns, self.clean),
            max_ms: self.max_ns as f64 / 1e6,
            samples: self.samples,
            interrupted: self.samples - self.clean,
            avg_wall_ms: mean(self.wall_ns, self.samples),
            max_wall_ms: self.max_wall_ns as f64 / 1e6,
            low_confidence: self.samples < MIN_CONFIDENT_SAMPLES,
        }
    }
}

/// Times [`Pipeline::process`] for each frame of `stream`, which carries its
/// own virtual arrival times. The thread probes run outside the timed region.
pub fn measure_into(stream: &[(SimTime, ReceivedFrame)], pipeline: &mut Pipeline, acc: &mut LatencyAccumulator) {
    for (at, rx) in stream {
        let before = probe();
        let start = Instant::now();
        let verdict = pipeline.process(black_box(rx), *at);
        let elapsed = start.elapsed().as_nanos();
        let after = probe();
        black_box(verdict);
        acc.record(elapsed, before.interrupted(after, elapsed));
    }
}

pub fn measure(stream: &[(SimTime, ReceivedFrame)], pipeline: &mut Pipeline) -> LatencyStats {
    let mut acc = LatencyAccumulator::new(pipeline.mode());
    measure_into(stream, pipeline, &mut acc);
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::fixtures::frame;
    use crate::secure_ext::{KeyId, SenderId, Signer};

    fn keystore() -> KeyStore {
        let mut ks = KeyStore::new();
        ks.insert(KeyId(1), [7; 16]).unwrap();
        ks.set_active(SenderId(1), KeyId(1));
        ks
    }

    fn signed(signer: &mut Signer, st: u32, sq: u32) -> ReceivedFrame {
        let mut f = frame(st, sq, vec![false]);
        let bytes = signer.sign_frame(&mut f, &keystore()).unwrap();
        ReceivedFrame::decode(bytes).unwrap()
    }

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    fn pipeline(mode: PipelineMode) -> Pipeline {
        Pipeline::new(mode, keystore(), IdsConfig::default())
    }

    #[test]
    fn mode_names_round_trip() {
        for m in PipelineMode::ALL {
            assert_eq!(m.name().parse::<PipelineMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("both".parse::<PipelineMode>().is_err());
    }

    #[test]
    fn mac_only_delivers_legitimate_frames_without_flags() {
        let mut s = Signer::new(SenderId(1));
        let mut p = pipeline(PipelineMode::MacOnly);
        let v = p.process(&signed(&mut s, 0, 0), ms(0));
        assert_eq!(v, Verdict { decision: Delivery::Deliver, stage: Stage::None, flags: vec![] });
        assert_eq!(p.counters().ids_checked, 0);
        assert_eq!(p.next_expiry(), None);
    }

    #[test]
    fn unsigned_frames_fail_closed() {
        let rx = ReceivedFrame::from_frame(&frame(0, 0, vec![])).unwrap();
        for mode in [PipelineMode::MacOnly, PipelineMode::Hybrid] {
            let v = pipeline(mode).process(&rx, ms(0));
            assert_eq!((v.decision, v.stage), (Delivery::Drop, Stage::Mac));
            assert_eq!(v.flags.len(), 1);
            assert_eq!(v.flags[0].rule, RuleId::NoAuthExtension);
        }
        assert!(pipeline(PipelineMode::IdsOnly).process(&rx, ms(0)).delivered());
    }

    #[test]
    fn tampered_frame_is_dropped_at_mac_with_auth_flag() {
        let mut s = Signer::new(SenderId(1));
        let rx = signed(&mut s, 1, 0);
        let mut bytes = rx.bytes.clone();
        bytes[rx.spans.pdu.end - 1] ^= 1;
        let forged = ReceivedFrame::decode(bytes).unwrap();
        let v = pipeline(PipelineMode::MacOnly).process(&forged, ms(0));
        assert_eq!(v.stage, Stage::Mac);
        assert_eq!(v.flags[0].rule, RuleId::AuthFailed);
        assert_eq!(v.flags[0].digest.as_deref(), Some(packet_digest(&forged.bytes).as_str()));
    }

    #[test]
    fn hybrid_replay_passes_mac_and_fails_ids() {
        let mut s = Signer::new(SenderId(1));
        let mut p = pipeline(PipelineMode::Hybrid);
        let first = signed(&mut s, 1, 0);
        assert!(p.process(&first, ms(0)).delivered());
        assert!(p.process(&signed(&mut s, 1, 1), ms(2)).delivered());
        assert!(p.process(&signed(&mut s, 1, 2), ms(6)).delivered());
        let v = p.process(&first, ms(500));
        assert_eq!((v.decision, v.stage), (Delivery::Drop, Stage::Ids));
        assert_eq!(v.flags[0].rule, RuleId::SeqReplayOrGap);
    }

    #[test]
    fn hybrid_mac_failures_never_reach_ids() {
        let mut s = Signer::new(SenderId(1));
        let mut p = pipeline(PipelineMode::Hybrid);
        assert!(p.process(&signed(&mut s, 1, 0), ms(0)).delivered());
        let mut forged = signed(&mut s, 1, 1);
        forged.frame.pdu.apdu.sq_num = 99;
        let forged = ReceivedFrame::from_frame(&forged.frame).unwrap();
        for i in 0..2_000 {
            let v = p.process(&forged, SimTime::from_micros(1_000 + i * 1_000));
            assert_eq!(v.stage, Stage::Mac);
        }
        let c = p.counters();
        assert_eq!(c.ids_checked, c.mac_checked - c.mac_failed);
        assert!(p.ids().streams().all(|(_, st)| st.synchronized()));
        assert!(p.process(&signed(&mut s, 1, 1), ms(3_000)).delivered());
    }

    #[test]
    fn unknown_key_is_reported_distinctly() {
        let mut other = KeyStore::new();
        other.insert(KeyId(9), [1; 16]).unwrap();
        other.set_active(SenderId(1), KeyId(9));
        let mut f = frame(0, 0, vec![]);
        let bytes = Signer::new(SenderId(1)).sign_frame(&mut f, &other).unwrap();
        let v = pipeline(PipelineMode::MacOnly).process(&ReceivedFrame::decode(bytes).unwrap(), ms(0));
        assert_eq!(v.flags[0].rule, RuleId::UnknownKey);
    }

    #[test]
    fn measure_reports_low_confidence_for_short_streams() {
        let stats = measure(&[], &mut pipeline(PipelineMode::IdsOnly));
        assert_eq!(stats.samples, 0);
        assert!(stats.low_confidence);
        assert_eq!(stats.avg_ms, 0.0);
    }

    #[test]
    fn stalls_without_cpu_time_count_as_interrupted() {
        let p = |switches, cpu_ns| ThreadProbe { switches, cpu_ns };
        assert!(!p(3, 1_000).interrupted(p(3, 2_000), 900));
        assert!(!p(3, 1_000).interrupted(p(3, 2_000), 1_000 + STALL_SLACK_NS));
        assert!(p(3, 1_000).interrupted(p(3, 2_000), 1_001 + STALL_SLACK_NS));
        assert!(p(3, 1_000).interrupted(p(4, 2_000), 900));
        assert!(!p(3, u128::MAX).interrupted(p(3, u128::MAX), 10_000_000));
    }

    #[test]
    fn interrupted_samples_only_count_towards_wall_figures() {
        let mut acc = LatencyAccumulator::new(PipelineMode::MacOnly);
        acc.record(1_000, false);
        acc.record(3_000, false);
        acc.record(5_000_000, true);
        let s = acc.finish();
        assert_eq!((s.samples, s.interrupted), (3, 1));
        assert!((s.avg_ms - 0.002).abs() < 1e-12);
        assert!((s.max_ms - 0.003).abs() < 1e-12);
        assert!((s.max_wall_ms - 5.0).abs() < 1e-12);
        assert!((s.avg_wall_ms - 5.004 / 3.0).abs() < 1e-12);
    }
}
