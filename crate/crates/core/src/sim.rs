//! Deterministic discrete-event process bus.
//!
//! One publisher, a switch that can drop frames, an attacker with a tap on
//! the bus, and one subscriber running a filter pipeline. Everything runs on
//! a virtual microsecond clock; actions at the same instant run in the order
//! they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::attack::{
    flood_frames, flood_schedule, masquerade_frame, replay_frame, AttackError, AttackKind, AttackSpec, FrameArchive,
};
use crate::codec::{encode_frame, EncodeError, EthernetHeader, GooseFrame, GoosePdu, MacAddress, PcapError, PcapWriter, VlanTag};
use crate::flags::{FlagEvent, RuleId};
use crate::ids::IdsConfig;
use crate::pipeline::{measure, Delivery, LatencyStats, Pipeline, PipelineMode, ReceivedFrame, Stage, StageCounters};
use crate::secure_ext::{KeyId, KeyStore, SenderId, SignError, Signer};
use crate::time::SimTime;
use crate::transmission::{Publisher, PublisherIdentity, TransmissionProfile};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cannot schedule at {at}: the clock is already at {now}")]
pub struct ScheduleError {
    pub at: SimTime,
    pub now: SimTime,
}

struct Entry<A> {
    at: SimTime,
    seq: u64,
    action: A,
}

impl<A> PartialEq for Entry<A> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}

impl<A> Eq for Entry<A> {}

impl<A> PartialOrd for Entry<A> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<A> Ord for Entry<A> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

/// Virtual clock plus pending actions.
pub struct EventQueue<A> {
    heap: BinaryHeap<Entry<A>>,
    next_seq: u64,
    now: SimTime,
}

impl<A> Default for EventQueue<A> {
    fn default() -> Self {
        EventQueue { heap: BinaryHeap::new(), next_seq: 0, now: SimTime::ZERO }
    }
}

impl<A> EventQueue<A> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn schedule(&mut self, at: SimTime, action: A) -> Result<(), ScheduleError> {
        if at < self.now {
            return Err(ScheduleError { at, now: self.now });
        }
        self.heap.push(Entry { at, seq: self.next_seq, action });
        self.next_seq += 1;
        Ok(())
    }

    pub fn peek_time(&self) -> Option<SimTime> {
        self.heap.peek().map(|e| e.at)
    }

    /// Advances the clock to the next action and returns it.
    pub fn pop(&mut self) -> Option<(SimTime, A)> {
        let e = self.heap.pop()?;
        assert!(e.at >= self.now, "virtual clock went backwards");
        self.now = e.at;
        Some((e.at, e.action))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchAction {
    Forward,
    Drop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrameMatch {
    Any,
    Source(MacAddress),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SwitchRule {
    pub matcher: FrameMatch,
    pub action: SwitchAction,
    pub from: SimTime,
    /// Exclusive end of the active window.
    pub until: Option<SimTime>,
    /// Rule retires after acting on this many frames.
    pub limit: Option<u32>,
    hits: u32,
}

impl SwitchRule {
    pub fn new(matcher: FrameMatch, action: SwitchAction, from: SimTime) -> Self {
        SwitchRule { matcher, action, from, until: None, limit: None, hits: 0 }
    }

    pub fn until(mut self, until: SimTime) -> Self {
        self.until = Some(until);
        self
    }

    pub fn limit(mut self, frames: u32) -> Self {
        self.limit = Some(frames);
        self
    }

    pub fn hits(&self) -> u32 {
        self.hits
    }

    fn applies(&self, src: MacAddress, at: SimTime) -> bool {
        let matched = match self.matcher {
            FrameMatch::Any => true,
            FrameMatch::Source(mac) => mac == src,
        };
        matched
            && at >= self.from
            && self.until.is_none_or(|u| at < u)
            && self.limit.is_none_or(|l| self.hits < l)
    }
}

/// Forwards everything unless a rule says otherwise; the first active
/// matching rule decides.
#[derive(Clone, Debug, Default)]
pub struct Switch {
    rules: Vec<SwitchRule>,
}

impl Switch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_rule(&mut self, rule: SwitchRule) {
        self.rules.push(rule);
    }

    pub fn rules(&self) -> &[SwitchRule] {
        &self.rules
    }

    pub fn decide(&mut self, src: MacAddress, at: SimTime) -> SwitchAction {
        match self.rules.iter_mut().find(|r| r.applies(src, at)) {
            Some(rule) => {
                rule.hits += 1;
                rule.action
            }
            None => SwitchAction::Forward,
        }
    }
}

/// Installs the switch rule a drop attack needs; nothing is injected.
pub fn drop_attack(switch: &mut Switch, spec: &AttackSpec, publisher: MacAddress) -> Result<(), AttackError> {
    let AttackSpec::Drop { count, duration_ms, src, .. } = *spec else {
        return Ok(());
    };
    spec.validate(u32::MAX)?;
    let mut rule = SwitchRule::new(FrameMatch::Source(src.unwrap_or(publisher)), SwitchAction::Drop, spec.trigger());
    if let Some(d) = duration_ms {
        rule = rule.until(spec.trigger().plus_millis(d));
    }
    if let Some(n) = count {
        rule = rule.limit(n);
    }
    switch.add_rule(rule);
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Signing {
    pub sender: SenderId,
    pub key_id: KeyId,
}

#[derive(Clone, Debug)]
pub struct BusConfig {
    pub profile: TransmissionProfile,
    pub identity: PublisherIdentity,
    pub src: MacAddress,
    pub dst: MacAddress,
    pub vlan: Option<VlanTag>,
    pub appid: u16,
    pub initial_data: Vec<bool>,
    /// Publisher state changes, sorted by time.
    pub events: Vec<(SimTime, Vec<bool>)>,
    pub duration: SimTime,
    pub hop_delay_us: u64,
    /// Unix time (ms) at simulation time zero.
    pub epoch_offset_ms: u64,
    /// `None` publishes unsigned frames.
    pub signing: Option<Signing>,
    pub keystore: KeyStore,
    pub mode: PipelineMode,
    pub attacks: Vec<AttackSpec>,
}

pub const DEFAULT_SRC: MacAddress = MacAddress([0xDC, 0x37, 0x52, 0x0A, 0xCF, 0xC2]);
pub const DEFAULT_DST: MacAddress = MacAddress([0x01, 0x0C, 0xCD, 0x01, 0x00, 0x10]);

impl Default for BusConfig {
    fn default() -> Self {
        BusConfig {
            profile: TransmissionProfile::default(),
            identity: PublisherIdentity::default(),
            src: DEFAULT_SRC,
            dst: DEFAULT_DST,
            vlan: Some(VlanTag { priority: 4, vid: 0 }),
            appid: 0x0001,
            initial_data: vec![false; 4],
            events: Vec::new(),
            duration: SimTime::from_millis(10_000),
            hop_delay_us: 0,
            epoch_offset_ms: 1_700_000_000_000,
            signing: Some(Signing { sender: SenderId(0xDC37_520A), key_id: KeyId(1) }),
            keystore: KeyStore::new(),
            mode: PipelineMode::Hybrid,
            attacks: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("attack {index}: {source}")]
    Attack { index: usize, source: AttackError },
    #[error(transparent)]
    Sign(#[from] SignError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "origin", rename_all = "lowercase")]
pub enum Origin {
    Publisher,
    Attacker { attack: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VerdictSummary {
    pub decision: Delivery,
    pub stage: Stage,
    pub rules: Vec<RuleId>,
    pub alert: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FrameRecord {
    pub id: usize,
    #[serde(flatten)]
    pub origin: Origin,
    pub sent_at: SimTime,
    pub st_num: u32,
    pub sq_num: u32,
    pub switch: SwitchAction,
    pub arrived_at: Option<SimTime>,
    pub verdict: Option<VerdictSummary>,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

impl FrameRecord {
    pub fn is_attack(&self) -> bool {
        matches!(self.origin, Origin::Attacker { .. })
    }

    pub fn delivered(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.decision == Delivery::Deliver)
    }

    pub fn alerted(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.alert)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlagRecord {
    /// Frame that raised it; `None` for clock-driven flags.
    pub frame: Option<usize>,
    #[serde(flatten)]
    pub event: FlagEvent,
}

/// One line of the bus log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Publish { time: SimTime, frame: usize, st_num: u32, sq_num: u32 },
    Inject { time: SimTime, frame: usize, attack: usize, attack_kind: AttackKind, st_num: u32, sq_num: u32 },
    Switch { time: SimTime, frame: usize, action: SwitchAction },
    Verdict { time: SimTime, frame: usize, mode: PipelineMode, decision: Delivery, stage: Stage, flags: Vec<RuleId> },
    Flag(FlagRecord),
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub mode: PipelineMode,
    pub profile: TransmissionProfile,
    pub attacks: Vec<AttackSpec>,
    pub frames: Vec<FrameRecord>,
    pub flags: Vec<FlagRecord>,
    pub log: Vec<LogRecord>,
    pub archive: FrameArchive,
    pub counters: StageCounters,
    pub end: SimTime,
}

impl SimOutcome {
    /// The log as JSON lines.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for rec in &self.log {
            out.push_str(&serde_json::to_string(rec).expect("log records serialize"));
            out.push('\n');
        }
        out
    }

    /// Every frame put on the bus, in send order.
    pub fn to_pcap(&self) -> Result<Vec<u8>, PcapError> {
        let mut w = PcapWriter::new(Vec::new())?;
        for f in &self.frames {
            w.push(f.sent_at, &f.bytes)?;
        }
        Ok(w.into_inner())
    }

    pub fn legitimate(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(|f| !f.is_attack())
    }

    pub fn injected(&self) -> impl Iterator<Item = &FrameRecord> {
        self.frames.iter().filter(|f| f.is_attack())
    }
}

enum Action {
    Tick(u64),
    Event(usize),
    Attack(usize),
    Inject { attack: usize, bytes: Vec<u8> },
    Deliver(usize),
    Expiry,
}

pub struct Simulation {
    cfg: BusConfig,
    queue: EventQueue<Action>,
    publisher: Publisher,
    signer: Option<Signer>,
    pipeline: Pipeline,
    switch: Switch,
    archive: FrameArchive,
    frames: Vec<FrameRecord>,
    flags: Vec<FlagRecord>,
    log: Vec<LogRecord>,
    tick_generation: u64,
    expiry_scheduled: Option<SimTime>,
}

impl Simulation {
    pub fn new(mut cfg: BusConfig) -> Result<Self, SimError> {
        let t1 = cfg.profile.t1_ms();
        let mut switch = Switch::new();
        for (index, spec) in cfg.attacks.iter().enumerate() {
            spec.validate(t1).map_err(|source| SimError::Attack { index, source })?;
            drop_attack(&mut switch, spec, cfg.src).map_err(|source| SimError::Attack { index, source })?;
        }
        let signer = cfg.signing.map(|s| {
            cfg.keystore.set_active(s.sender, s.key_id);
            Signer::new(s.sender)
        });
        if let (Some(s), Some(signing)) = (&signer, cfg.signing) {
            if !cfg.keystore.contains(signing.key_id) {
                return Err(SignError::UnknownKey(signing.key_id).into());
            }
            debug_assert_eq!(s.sender(), signing.sender);
        }
        let publisher = Publisher::new(cfg.profile, cfg.identity.clone(), cfg.initial_data.clone(), SimTime::ZERO)
            .with_epoch_offset(cfg.epoch_offset_ms);
        let pipeline = Pipeline::new(cfg.mode, cfg.keystore.clone(), IdsConfig::new(cfg.profile));
        let mut queue = EventQueue::new();
        // Events and attack triggers are queued before the first tick so that
        // they win ties against frames due at the same instant.
        for (i, (at, _)) in cfg.events.iter().enumerate() {
            queue.schedule(*at, Action::Event(i))?;
        }
        for (i, spec) in cfg.attacks.iter().enumerate() {
            if spec.kind().injects() {
                queue.schedule(spec.trigger(), Action::Attack(i))?;
            }
        }
        queue.schedule(publisher.next_send_at(), Action::Tick(0))?;
        Ok(Simulation {
            cfg,
            queue,
            publisher,
            signer,
            pipeline,
            switch,
            archive: FrameArchive::new(),
            frames: Vec::new(),
            flags: Vec::new(),
            log: Vec::new(),
            tick_generation: 0,
            expiry_scheduled: None,
        })
    }

    /// Runs every action due up to and including the configured duration.
    pub fn run(mut self) -> Result<SimOutcome, SimError> {
        let end = self.cfg.duration;
        while self.queue.peek_time().is_some_and(|t| t <= end) {
            let (now, action) = self.queue.pop().expect("peeked");
            self.dispatch(now, action)?;
        }
        Ok(SimOutcome {
            mode: self.cfg.mode,
            profile: self.cfg.profile,
            attacks: self.cfg.attacks,
            frames: self.frames,
            flags: self.flags,
            log: self.log,
            archive: self.archive,
            counters: self.pipeline.counters(),
            end,
        })
    }

    fn dispatch(&mut self, now: SimTime, action: Action) -> Result<(), SimError> {
        match action {
            Action::Tick(generation) if generation == self.tick_generation => {
                if let Some(apdu) = self.publisher.tick(now) {
                    let mut frame = GooseFrame {
                        eth: EthernetHeader { dst: self.cfg.dst, src: self.cfg.src, vlan: self.cfg.vlan },
                        pdu: GoosePdu { appid: self.cfg.appid, reserved1: 0, reserved2: 0, apdu },
                        extension: None,
                    };
                    let bytes = match &mut self.signer {
                        Some(signer) => signer.sign_frame(&mut frame, &self.cfg.keystore)?,
                        None => encode_frame(&frame)?,
                    };
                    self.transmit(now, Origin::Publisher, bytes)?;
                }
                self.queue.schedule(self.publisher.next_send_at(), Action::Tick(generation))?;
            }
            Action::Tick(_) => {}
            Action::Event(i) => {
                let data = self.cfg.events[i].1.clone();
                self.publisher.report_event(data, now);
                self.tick_generation += 1;
                self.queue.schedule(self.publisher.next_send_at(), Action::Tick(self.tick_generation))?;
            }
            Action::Attack(index) => self.launch(now, index).map_err(|source| SimError::Attack { index, source })?,
            Action::Inject { attack, bytes } => self.transmit(now, Origin::Attacker { attack }, bytes)?,
            Action::Deliver(id) => {
                let rx = ReceivedFrame::decode(self.frames[id].bytes.clone())
                    .expect("only encoder output is put on the bus");
                let verdict = self.pipeline.process(&rx, now);
                let rules: Vec<RuleId> = verdict.flags.iter().map(|f| f.rule).collect();
                self.log.push(LogRecord::Verdict {
                    time: now,
                    frame: id,
                    mode: self.cfg.mode,
                    decision: verdict.decision,
                    stage: verdict.stage,
                    flags: rules.clone(),
                });
                let record = &mut self.frames[id];
                record.arrived_at = Some(now);
                record.verdict = Some(VerdictSummary {
                    decision: verdict.decision,
                    stage: verdict.stage,
                    alert: verdict.has_alert(),
                    rules,
                });
                for event in verdict.flags {
                    self.flag(Some(id), event);
                }
                self.schedule_expiry(now)?;
            }
            Action::Expiry => {
                for event in self.pipeline.check_expiry(now) {
                    self.flag(None, event);
                }
                self.schedule_expiry(now)?;
            }
        }
        Ok(())
    }

    fn flag(&mut self, frame: Option<usize>, event: FlagEvent) {
        let rec = FlagRecord { frame, event };
        self.log.push(LogRecord::Flag(rec.clone()));
        self.flags.push(rec);
    }

    fn schedule_expiry(&mut self, now: SimTime) -> Result<(), SimError> {
        // Checked one microsecond past the deadline: expiry is strict.
        if let Some(at) = self.pipeline.next_expiry().map(|d| d.plus_micros(1)) {
            if at > now && self.expiry_scheduled != Some(at) {
                self.expiry_scheduled = Some(at);
                self.queue.schedule(at, Action::Expiry)?;
            }
        }
        Ok(())
    }

    fn launch(&mut self, now: SimTime, index: usize) -> Result<(), AttackError> {
        let injections = match &self.cfg.attacks[index] {
            AttackSpec::Replay { frame, .. } => vec![(now, replay_frame(&self.archive, *frame)?)],
            AttackSpec::Masquerade { data, .. } => vec![(now, masquerade_frame(&self.archive, data.as_deref())?)],
            AttackSpec::Flood { rate_hz, duration_ms, increment_sq, .. } => {
                let times = flood_schedule(now, *rate_hz, *duration_ms);
                flood_frames(&self.archive, &times, *increment_sq)?
            }
            AttackSpec::Drop { .. } => Vec::new(),
        };
        for (at, bytes) in injections {
            self.queue
                .schedule(at, Action::Inject { attack: index, bytes })
                .expect("injections are never in the past");
        }
        Ok(())
    }

    fn transmit(&mut self, now: SimTime, origin: Origin, bytes: Vec<u8>) -> Result<(), SimError> {
        let id = self.frames.len();
        let src = MacAddress(bytes[6..12].try_into().expect("frame has an Ethernet header"));
        let (st_num, sq_num) = {
            let rx = ReceivedFrame::decode(bytes.clone()).expect("only encoder output is put on the bus");
            (rx.frame.pdu.apdu.st_num, rx.frame.pdu.apdu.sq_num)
        };
        match origin {
            Origin::Publisher => {
                self.archive.capture(now, &bytes);
                self.log.push(LogRecord::Publish { time: now, frame: id, st_num, sq_num });
            }
            Origin::Attacker { attack } => self.log.push(LogRecord::Inject {
                time: now,
                frame: id,
                attack,
                attack_kind: self.cfg.attacks[attack].kind(),
                st_num,
                sq_num,
            }),
        }
        let action = self.switch.decide(src, now);
        self.log.push(LogRecord::Switch { time: now, frame: id, action });
        self.frames.push(FrameRecord {
            id,
            origin,
            sent_at: now,
            st_num,
            sq_num,
            switch: action,
            arrived_at: None,
            verdict: None,
            bytes,
        });
        if action == SwitchAction::Forward {
            self.queue.schedule(now.plus_micros(self.cfg.hop_delay_us), Action::Deliver(id))?;
        }
        Ok(())
    }
}

/// Legitimate traffic mixing steady state and bursts: an event every 1.5 to
/// 4 s. Frames are signed when `cfg.signing` is set.
pub fn legitimate_stream(cfg: &BusConfig, packets: usize, seed: u64) -> Result<Vec<(SimTime, ReceivedFrame)>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keystore = cfg.keystore.clone();
    let mut signer = cfg.signing.map(|s| {
        keystore.set_active(s.sender, s.key_id);
        Signer::new(s.sender)
    });
    let mut publisher = Publisher::new(cfg.profile, cfg.identity.clone(), cfg.initial_data.clone(), SimTime::ZERO)
        .with_epoch_offset(cfg.epoch_offset_ms);
    let mut next_event = SimTime::from_micros(rng.gen_range(1_500_000..4_000_000));
    let mut out = Vec::with_capacity(packets);
    while out.len() < packets {
        let due = publisher.next_send_at();
        if next_event <= due {
            let data = (0..cfg.initial_data.len()).map(|_| rng.gen()).collect();
            publisher.report_event(data, next_event);
            next_event = next_event.plus_micros(rng.gen_range(1_500_000..4_000_000));
            continue;
        }
        let apdu = publisher.tick(due).expect("frame due");
        let mut frame = GooseFrame {
            eth: EthernetHeader { dst: cfg.dst, src: cfg.src, vlan: cfg.vlan },
            pdu: GoosePdu { appid: cfg.appid, reserved1: 0, reserved2: 0, apdu },
            extension: None,
        };
        let bytes = match &mut signer {
            Some(s) => s.sign_frame(&mut frame, &keystore)?,
            None => encode_frame(&frame)?,
        };
        out.push((due, ReceivedFrame::decode(bytes).expect("encoder output decodes")));
    }
    Ok(out)
}

/// Drives a pre-generated stream through `pipeline` under the wall clock.
pub fn real_time_mode(stream: &[(SimTime, ReceivedFrame)], pipeline: &mut Pipeline) -> LatencyStats {
    measure(stream, pipeline)
}
