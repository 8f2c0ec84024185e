//! Rule-based GOOSE intrusion detection.
//!
//! Each stream is checked against the publisher state machine it should be
//! following:
//!
//! | rule | condition | flag |
//! |------|-----------|------|
//! | R1 | same stNum, sqNum ≠ last + 1 | `SEQ_REPLAY_OR_GAP` |
//! | R2 | stNum = last + 1, sqNum ≠ 0 | `EVENT_SEQ` |
//! | R3 | any other stNum | `STNUM_ANOMALY` |
//! | R4 | more than `cap` arrivals in a t1 window | `RATE_EXCEEDED`, desync |
//! | R5 | gap since last accepted frame < t0 − jitter | `TOO_FAST` |
//! | R6 | silence longer than the last timeAllowedToLive | `TTL_EXPIRED` |
//!
//! Counters wrap modulo 2³². Sequence state only advances on Accept; the
//! rate window counts every arrival. Once R4 fires the stream is
//! desynchronized and every frame is rejected until one arrives after a
//! quiet period of at least t1, which is then adopted as the new baseline.
//!
//! A rejected frame that is *ahead* of the baseline (lost frames, not a
//! replay) is remembered. If the next frame continues it exactly, the
//! stream is taken to have resumed and that frame is accepted with an
//! informational `RESYNCHRONIZED` flag. Frames at or behind the baseline
//! are never remembered, so a replay cannot steer the stream.

use std::collections::VecDeque;

use serde::Serialize;

use crate::codec::{GooseApdu, GooseFrame};
use crate::flags::{FlagEvent, RuleId, StreamKey};
use crate::time::SimTime;
use crate::transmission::TransmissionProfile;

const HALF_RANGE: u32 = 1 << 31;

#[derive(Clone, Debug, PartialEq)]
pub struct IdsConfig {
    profile: TransmissionProfile,
    jitter_us: u64,
    cap: usize,
}

impl IdsConfig {
    /// Jitter tolerance defaults to a quarter of t0.
    pub fn new(profile: TransmissionProfile) -> Self {
        IdsConfig {
            jitter_us: profile.t0_ms() as u64 * 250,
            cap: profile.burst_schedule().len() + 2,
            profile,
        }
    }

    pub fn with_jitter_us(mut self, jitter_us: u64) -> Self {
        self.jitter_us = jitter_us;
        self
    }

    pub fn profile(&self) -> &TransmissionProfile {
        &self.profile
    }

    /// Most frames a legitimate publisher can emit inside one t1 window:
    /// a full burst plus the heartbeats on either side of it.
    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn jitter_us(&self) -> u64 {
        self.jitter_us
    }

    fn t1_us(&self) -> u64 {
        self.profile.t1_ms() as u64 * 1_000
    }

    fn min_gap_us(&self) -> u64 {
        (self.profile.t0_ms() as u64 * 1_000).saturating_sub(self.jitter_us)
    }
}

impl Default for IdsConfig {
    fn default() -> Self {
        IdsConfig::new(TransmissionProfile::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdsVerdict {
    pub decision: Decision,
    pub flags: Vec<RuleId>,
}

impl IdsVerdict {
    pub fn is_accept(&self) -> bool {
        self.decision == Decision::Accept
    }
}

/// Where in the retransmission schedule the stream is expected to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BurstPosition {
    Burst(usize),
    Steady,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Seq {
    st: u32,
    sq: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Progress {
    Continue,
    NewEvent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Anomaly {
    rule: RuleId,
    forward: bool,
}

fn progress(base: Seq, st: u32, sq: u32) -> Result<Progress, Anomaly> {
    if st == base.st {
        if sq == base.sq.wrapping_add(1) {
            return Ok(Progress::Continue);
        }
        let ahead = sq.wrapping_sub(base.sq);
        Err(Anomaly { rule: RuleId::SeqReplayOrGap, forward: (2..HALF_RANGE).contains(&ahead) })
    } else if st == base.st.wrapping_add(1) {
        if sq == 0 {
            return Ok(Progress::NewEvent);
        }
        Err(Anomaly { rule: RuleId::EventSeq, forward: true })
    } else {
        let ahead = st.wrapping_sub(base.st);
        Err(Anomaly { rule: RuleId::StnumAnomaly, forward: (2..HALF_RANGE).contains(&ahead) })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamState {
    baseline: Option<Seq>,
    last_arrival: Option<SimTime>,
    last_ttl_ms: u32,
    expected_interval_ms: u32,
    burst_position: BurstPosition,
    window: VecDeque<SimTime>,
    synchronized: bool,
    last_seen: Option<SimTime>,
    /// Forward-anomalous frame that may turn out to be the stream resuming.
    provisional: Option<(Seq, SimTime, u32)>,
    /// Latest evidence the publisher is alive: accepted or provisional frames.
    live_at: Option<SimTime>,
    expiry_flagged: bool,
}

impl StreamState {
    /// A stream that has not seen any frame yet.
    pub fn fresh(cfg: &IdsConfig) -> Self {
        StreamState {
            baseline: None,
            last_arrival: None,
            last_ttl_ms: 0,
            expected_interval_ms: cfg.profile.t1_ms(),
            burst_position: BurstPosition::Steady,
            window: VecDeque::with_capacity(cfg.cap + 1),
            synchronized: false,
            last_seen: None,
            provisional: None,
            live_at: None,
            expiry_flagged: false,
        }
    }

    pub fn last_st_num(&self) -> Option<u32> {
        self.baseline.map(|b| b.st)
    }

    pub fn last_sq_num(&self) -> Option<u32> {
        self.baseline.map(|b| b.sq)
    }

    pub fn last_arrival(&self) -> Option<SimTime> {
        self.last_arrival
    }

    pub fn last_ttl_ms(&self) -> u32 {
        self.last_ttl_ms
    }

    pub fn expected_interval_ms(&self) -> u32 {
        self.expected_interval_ms
    }

    pub fn burst_position(&self) -> BurstPosition {
        self.burst_position
    }

    pub fn window_count(&self) -> usize {
        self.window.len()
    }

    pub fn synchronized(&self) -> bool {
        self.synchronized
    }

    /// Instant after which [`check_expiry`](Self::check_expiry) would fire.
    pub fn expiry_deadline(&self) -> Option<SimTime> {
        if self.expiry_flagged {
            return None;
        }
        self.live_at.map(|t| t.plus_millis(self.last_ttl_ms as u64))
    }

    fn set_position(&mut self, cfg: &IdsConfig, position: BurstPosition) {
        let schedule_len = cfg.cap - 2;
        self.burst_position = match position {
            BurstPosition::Burst(i) if i + 1 >= schedule_len => BurstPosition::Steady,
            p => p,
        };
        self.expected_interval_ms = match self.burst_position {
            BurstPosition::Burst(i) => cfg.profile.t0_ms() << i,
            BurstPosition::Steady => cfg.profile.t1_ms(),
        };
    }

    fn accept(&mut self, cfg: &IdsConfig, seq: Seq, apdu: &GooseApdu, now: SimTime, progress: Option<Progress>) {
        let position = match (progress, self.burst_position) {
            (Some(Progress::NewEvent), _) => BurstPosition::Burst(0),
            (Some(Progress::Continue), BurstPosition::Burst(i)) => BurstPosition::Burst(i + 1),
            (Some(Progress::Continue), BurstPosition::Steady) => BurstPosition::Steady,
            // Adopted baseline: the advertised TTL gives away the current interval.
            (None, _) => {
                let interval = apdu.time_allowed_to_live / cfg.profile.ttl_multiplier();
                let schedule = cfg.profile.burst_schedule();
                match schedule.iter().position(|&i| i >= interval) {
                    Some(i) => BurstPosition::Burst(i),
                    None => BurstPosition::Steady,
                }
            }
        };
        self.set_position(cfg, position);
        self.baseline = Some(seq);
        self.last_arrival = Some(now);
        self.last_ttl_ms = apdu.time_allowed_to_live;
        self.live_at = Some(now);
        self.expiry_flagged = false;
        self.provisional = None;
    }

    fn adopt(&mut self, cfg: &IdsConfig, seq: Seq, apdu: &GooseApdu, now: SimTime) -> IdsVerdict {
        self.synchronized = true;
        self.accept(cfg, seq, apdu, now, None);
        IdsVerdict { decision: Decision::Accept, flags: vec![RuleId::BaselineAdopted] }
    }

    /// Runs the packet rules and updates the state in place.
    pub fn inspect(&mut self, apdu: &GooseApdu, now: SimTime, cfg: &IdsConfig) -> IdsVerdict {
        debug_assert!(self.last_seen.is_none_or(|s| now >= s), "IDS clock went backwards");
        let t1 = cfg.t1_us();
        let quiet = self.last_seen.is_none_or(|s| now.micros_since(s) >= t1);
        self.last_seen = Some(now);
        while self.window.front().is_some_and(|&t| now.micros_since(t) >= t1) {
            self.window.pop_front();
        }
        self.window.push_back(now);

        let seq = Seq { st: apdu.st_num, sq: apdu.sq_num };
        let Some(base) = self.baseline else {
            return self.adopt(cfg, seq, apdu, now);
        };
        if !self.synchronized {
            if quiet {
                return self.adopt(cfg, seq, apdu, now);
            }
            return IdsVerdict { decision: Decision::Reject, flags: vec![RuleId::Desynchronized] };
        }

        let mut flags = Vec::new();
        let outcome = progress(base, seq.st, seq.sq);
        if let Err(anomaly) = outcome {
            flags.push(anomaly.rule);
        }
        let min_gap = cfg.min_gap_us();
        let too_fast = |since: Option<SimTime>| since.is_some_and(|t| now.micros_since(t) < min_gap);
        if too_fast(self.last_arrival) {
            flags.push(RuleId::TooFast);
        }
        if self.window.len() > cfg.cap {
            flags.push(RuleId::RateExceeded);
            self.synchronized = false;
            self.window.clear();
            self.provisional = None;
            return IdsVerdict { decision: Decision::Reject, flags };
        }

        match outcome {
            Ok(p) if flags.is_empty() => {
                self.accept(cfg, seq, apdu, now, Some(p));
                IdsVerdict { decision: Decision::Accept, flags }
            }
            Err(anomaly) if flags.len() == 1 => {
                if let Some((prov, at, _)) = self.provisional {
                    if let Ok(p) = progress(prov, seq.st, seq.sq) {
                        if !too_fast(Some(at)) {
                            self.accept(cfg, seq, apdu, now, Some(p));
                            return IdsVerdict { decision: Decision::Accept, flags: vec![RuleId::Resynchronized] };
                        }
                    }
                }
                if anomaly.forward {
                    self.provisional = Some((seq, now, apdu.time_allowed_to_live));
                    self.live_at = Some(now);
                    self.last_ttl_ms = apdu.time_allowed_to_live;
                    self.expiry_flagged = false;
                }
                IdsVerdict { decision: Decision::Reject, flags }
            }
            _ => IdsVerdict { decision: Decision::Reject, flags },
        }
    }

    /// R6: true when the stream has been silent for longer than the last
    /// timeAllowedToLive. Fires at most once per silence episode.
    pub fn check_expiry(&mut self, now: SimTime) -> bool {
        match self.expiry_deadline() {
            Some(deadline) if now > deadline => {
                self.expiry_flagged = true;
                true
            }
            _ => false,
        }
    }
}

/// Pure form of [`StreamState::inspect`]: returns the verdict and the next
/// state, leaving the input untouched.
pub fn inspect(state: &StreamState, apdu: &GooseApdu, now: SimTime, cfg: &IdsConfig) -> (IdsVerdict, StreamState) {
    let mut next = state.clone();
    let verdict = next.inspect(apdu, now, cfg);
    (verdict, next)
}

/// Pure form of [`StreamState::check_expiry`].
pub fn check_expiry(state: &StreamState, now: SimTime) -> (bool, StreamState) {
    let mut next = state.clone();
    let fired = next.check_expiry(now);
    (fired, next)
}

/// IDS over any number of streams, each tracked independently.
#[derive(Clone, Debug)]
pub struct Ids {
    cfg: IdsConfig,
    // Few streams per subscriber; a linear scan avoids allocating a key per lookup.
    streams: Vec<(StreamKey, StreamState)>,
}

impl Ids {
    pub fn new(cfg: IdsConfig) -> Self {
        Ids { cfg, streams: Vec::new() }
    }

    pub fn config(&self) -> &IdsConfig {
        &self.cfg
    }

    pub fn stream(&self, key: &StreamKey) -> Option<&StreamState> {
        self.streams.iter().find(|(k, _)| k == key).map(|(_, s)| s)
    }

    pub fn streams(&self) -> impl Iterator<Item = (&StreamKey, &StreamState)> {
        self.streams.iter().map(|(k, s)| (k, s))
    }

    fn slot(&mut self, frame: &GooseFrame) -> usize {
        let found = self.streams.iter().position(|(k, _)| {
            k.src == frame.eth.src && k.appid == frame.pdu.appid && k.go_id == frame.pdu.apdu.go_id
        });
        found.unwrap_or_else(|| {
            self.streams.push((StreamKey::of(frame), StreamState::fresh(&self.cfg)));
            self.streams.len() - 1
        })
    }

    pub fn inspect(&mut self, frame: &GooseFrame, now: SimTime) -> IdsVerdict {
        let idx = self.slot(frame);
        self.streams[idx].1.inspect(&frame.pdu.apdu, now, &self.cfg)
    }

    /// Earliest instant at which some stream would expire.
    pub fn next_expiry(&self) -> Option<SimTime> {
        self.streams.iter().filter_map(|(_, s)| s.expiry_deadline()).min()
    }

    pub fn check_expiry(&mut self, now: SimTime) -> Vec<FlagEvent> {
        self.streams
            .iter_mut()
            .filter_map(|(k, s)| s.check_expiry(now).then(|| FlagEvent::new(now, k.clone(), RuleId::TtlExpired, None)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::fixtures::{apdu, frame};
    use crate::transmission::{drive, Publisher, PublisherIdentity};
    use proptest::prelude::*;

    fn ms(v: u64) -> SimTime {
        SimTime::from_millis(v)
    }

    fn cfg() -> IdsConfig {
        IdsConfig::default()
    }

    fn legit(events: &[u64], end_ms: u64) -> Vec<(SimTime, GooseApdu)> {
        let mut p = Publisher::new(TransmissionProfile::default(), PublisherIdentity::default(), vec![false], ms(0));
        let ev: Vec<_> = events.iter().map(|&t| (SimTime::from_micros(t), vec![true])).collect();
        drive(&mut p, &ev, ms(end_ms))
    }

    fn run(state: &mut StreamState, trace: &[(SimTime, GooseApdu)]) -> Vec<IdsVerdict> {
        trace.iter().map(|(t, a)| state.inspect(a, *t, &cfg())).collect()
    }

    #[test]
    fn default_cap_is_twelve() {
        assert_eq!(cfg().cap(), 12);
        assert_eq!(cfg().jitter_us(), 500);
    }

    #[test]
    fn steady_stream_is_accepted_without_flags() {
        let mut s = StreamState::fresh(&cfg());
        let v = run(&mut s, &legit(&[], 5_000));
        assert_eq!(v[0].flags, [RuleId::BaselineAdopted]);
        assert!(v[1..].iter().all(|v| v.is_accept() && v.flags.is_empty()));
        assert_eq!(s.burst_position(), BurstPosition::Steady);
        assert_eq!(s.expected_interval_ms(), 1_000);
    }

    #[test]
    fn event_burst_tracks_schedule_position() {
        let mut s = StreamState::fresh(&cfg());
        let trace = legit(&[3_000_000], 3_010);
        run(&mut s, &trace);
        // frames at 3000, 3002, 3006: third burst frame, next interval 8 ms
        assert_eq!(s.burst_position(), BurstPosition::Burst(2));
        assert_eq!(s.expected_interval_ms(), 8);
    }

    #[test]
    fn old_event_frame_is_a_replay() {
        let mut s = StreamState::fresh(&cfg());
        s.inspect(&apdu(1, 6, vec![true]), ms(0), &cfg());
        s.inspect(&apdu(1, 7, vec![true]), ms(1_000), &cfg());
        let v = s.inspect(&apdu(1, 0, vec![true]), ms(1_500), &cfg());
        assert_eq!(v, IdsVerdict { decision: Decision::Reject, flags: vec![RuleId::SeqReplayOrGap] });
        assert_eq!(s.last_sq_num(), Some(7));
        // the stream continues normally afterwards
        assert!(s.inspect(&apdu(1, 8, vec![true]), ms(2_000), &cfg()).flags.is_empty());
    }

    #[test]
    fn masquerade_with_valid_sequence_is_accepted() {
        let mut s = StreamState::fresh(&cfg());
        s.inspect(&apdu(1, 7, vec![false]), ms(0), &cfg());
        let v = s.inspect(&apdu(2, 0, vec![true]), ms(500), &cfg());
        assert!(v.is_accept() && v.flags.is_empty());
    }

    #[test]
    fn masquerade_too_soon_after_a_frame_is_rejected() {
        let mut s = StreamState::fresh(&cfg());
        s.inspect(&apdu(1, 7, vec![false]), ms(0), &cfg());
        let v = s.inspect(&apdu(2, 0, vec![true]), SimTime::from_micros(1_000), &cfg());
        assert_eq!(v.flags, [RuleId::TooFast]);
        assert_eq!(v.decision, Decision::Reject);
    }

    #[test]
    fn event_without_sq_zero_and_stnum_jumps() {
        let mut s = StreamState::fresh(&cfg());
        s.inspect(&apdu(1, 3, vec![]), ms(0), &cfg());
        assert_eq!(s.clone().inspect(&apdu(2, 1, vec![]), ms(10), &cfg()).flags, [RuleId::EventSeq]);
        assert_eq!(s.clone().inspect(&apdu(0, 4, vec![]), ms(10), &cfg()).flags, [RuleId::StnumAnomaly]);
        assert_eq!(s.clone().inspect(&apdu(5, 0, vec![]), ms(10), &cfg()).flags, [RuleId::StnumAnomaly]);
    }

    #[test]
    fn counters_wrap() {
        let mut s = StreamState::fresh(&cfg());
        s.inspect(&apdu(u32::MAX, u32::MAX, vec![]), ms(0), &cfg());
        assert!(s.clone().inspect(&apdu(u32::MAX, 0, vec![]), ms(1_000), &cfg()).flags.is_empty());
        assert!(s.inspect(&apdu(0, 0, vec![]), ms(1_000), &cfg()).flags.is_empty());
    }

    #[test]
    fn flood_desynchronizes_and_quiet_period_recovers() {
        let mut s = StreamState::fresh(&cfg());
        s.inspect(&apdu(1, 10, vec![]), ms(0), &cfg());
        let replayed = apdu(1, 10, vec![]);
        let mut rate_flag_at = None;
        for i in 1..=20u64 {
            let v = s.inspect(&replayed, ms(500 + i), &cfg());
            assert_eq!(v.decision, Decision::Reject);
            if v.flags.contains(&RuleId::RateExceeded) {
                rate_flag_at.get_or_insert(i);
            }
        }
        // 12 floods plus the legitimate frame fill the window on the 12th flood frame
        assert_eq!(rate_flag_at, Some(12));
        assert!(!s.synchronized());
        // legitimate continuation during the flood is collateral damage
        let v = s.inspect(&apdu(1, 11, vec![]), ms(1_000), &cfg());
        assert_eq!(v.flags, [RuleId::Desynchronized]);
        // after a full t1 of silence the next frame is adopted
        let v = s.inspect(&apdu(1, 12, vec![]), ms(2_000), &cfg());
        assert_eq!(v.flags, [RuleId::BaselineAdopted]);
        assert!(s.synchronized());
        assert!(s.inspect(&apdu(1, 13, vec![]), ms(3_000), &cfg()).flags.is_empty());
    }

    #[test]
    fn dropped_burst_frames_flag_once_then_resume() {
        let mut s = StreamState::fresh(&cfg());
        let trace = legit(&[3_000_000], 4_000);
        let kept: Vec<_> = trace
            .into_iter()
            .filter(|(t, _)| !(ms(3_000)..=ms(3_006)).contains(t))
            .collect();
        let v = run(&mut s, &kept);
        let flagged: Vec<_> = v.iter().filter(|v| !v.flags.is_empty()).map(|v| v.flags.clone()).collect();
        assert_eq!(
            flagged,
            [vec![RuleId::BaselineAdopted], vec![RuleId::EventSeq], vec![RuleId::Resynchronized]]
        );
        assert_eq!(s.last_st_num(), Some(1));
    }

    #[test]
    fn replay_is_never_adopted_as_resumption() {
        let mut s = StreamState::fresh(&cfg());
        s.inspect(&apdu(2, 5, vec![]), ms(0), &cfg());
        // two consecutive old frames: backwards, so no provisional baseline
        assert_eq!(s.inspect(&apdu(1, 0, vec![]), ms(100), &cfg()).decision, Decision::Reject);
        assert_eq!(s.inspect(&apdu(1, 1, vec![]), ms(200), &cfg()).decision, Decision::Reject);
        assert_eq!(s.last_st_num(), Some(2));
    }

    #[test]
    fn ttl_expiry_is_strict_and_fires_once() {
        let mut s = StreamState::fresh(&cfg());
        let mut a = apdu(0, 0, vec![]);
        a.time_allowed_to_live = 2_000;
        s.inspect(&a, ms(1_000), &cfg());
        assert!(!s.check_expiry(ms(3_000)));
        assert!(s.check_expiry(SimTime::from_micros(3_000_001)));
        assert!(!s.check_expiry(ms(3_500)));
        assert!(!s.check_expiry(ms(9_000)));
        a.sq_num = 1;
        s.inspect(&a, ms(9_000), &cfg());
        assert!(s.check_expiry(ms(11_001)));
    }

    #[test]
    fn forward_gap_refreshes_liveness() {
        // one steady frame lost: the next arrival is a gap, not a silence
        let mut s = StreamState::fresh(&cfg());
        let trace = legit(&[], 6_000);
        let kept: Vec<_> = trace.into_iter().filter(|(t, _)| *t != ms(3_000)).collect();
        let mut expired = false;
        let mut flags = Vec::new();
        for (t, a) in &kept {
            expired |= s.check_expiry(*t);
            flags.extend(s.inspect(a, *t, &cfg()).flags);
            expired |= s.check_expiry(t.plus_micros(1));
        }
        assert!(!expired);
        assert_eq!(flags, [RuleId::BaselineAdopted, RuleId::SeqReplayOrGap, RuleId::Resynchronized]);
    }

    #[test]
    fn streams_are_independent() {
        let mut ids = Ids::new(cfg());
        let a = frame(1, 0, vec![]);
        let mut b = frame(7, 3, vec![]);
        b.pdu.apdu.go_id = "OTHER".into();
        assert_eq!(ids.inspect(&a, ms(0)).flags, [RuleId::BaselineAdopted]);
        assert_eq!(ids.inspect(&b, ms(0)).flags, [RuleId::BaselineAdopted]);
        let mut a1 = a.clone();
        a1.pdu.apdu.sq_num = 1;
        let mut b1 = b.clone();
        b1.pdu.apdu.sq_num = 4;
        assert!(ids.inspect(&b1, ms(1_000)).flags.is_empty());
        assert!(ids.inspect(&a1, ms(1_000)).flags.is_empty());
        assert_eq!(ids.streams().count(), 2);
        assert_eq!(ids.stream(&StreamKey::of(&b)).unwrap().last_sq_num(), Some(4));
    }

    #[test]
    fn expiry_across_streams() {
        let mut ids = Ids::new(cfg());
        ids.inspect(&frame(0, 0, vec![]), ms(0));
        assert_eq!(ids.next_expiry(), Some(ms(2_000)));
        assert!(ids.check_expiry(ms(2_000)).is_empty());
        let flags = ids.check_expiry(SimTime::from_micros(2_000_001));
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].rule, RuleId::TtlExpired);
        assert_eq!(ids.next_expiry(), None);
    }

    #[test]
    fn worst_case_two_events_fit_the_cap() {
        // every second-resolution spacing of two events at least t1 apart
        for gap in 1_000..3_000u64 {
            let trace = legit(&[2_500_000, (2_500 + gap) * 1_000], 2_500 + gap + 3_000);
            let mut s = StreamState::fresh(&cfg());
            for v in run(&mut s, &trace).iter().skip(1) {
                assert!(v.flags.is_empty(), "gap {gap}: {:?}", v.flags);
            }
        }
    }

    fn event_times() -> impl Strategy<Value = Vec<u64>> {
        // gaps of at least t1, in microseconds
        prop::collection::vec(1_000_000u64..5_000_000, 0..12).prop_map(|gaps| {
            gaps.iter()
                .scan(0u64, |t, g| {
                    *t += g;
                    Some(*t)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn legitimate_traffic_raises_no_flags(events in event_times()) {
            let end = events.last().copied().unwrap_or(0) / 1_000 + 5_000;
            let mut s = StreamState::fresh(&cfg());
            let trace = legit(&events, end);
            for (i, v) in run(&mut s, &trace).iter().enumerate() {
                if i == 0 { continue; }
                prop_assert!(v.is_accept() && v.flags.is_empty(), "frame {}: {:?}", i, v.flags);
            }
        }

        #[test]
        fn any_earlier_frame_replayed_is_rejected(
            events in event_times(), pick in any::<prop::sample::Index>(), later in 1usize..5, offset_us in 0u64..1_000_000,
        ) {
            let end = events.last().copied().unwrap_or(0) / 1_000 + 8_000;
            let trace = legit(&events, end);
            let victim = pick.index(trace.len() - later);
            let until = victim + later;
            let mut s = StreamState::fresh(&cfg());
            run(&mut s, &trace[..=until]);
            let at = trace[until].0.plus_micros(offset_us);
            let v = s.inspect(&trace[victim].1, at, &cfg());
            prop_assert_eq!(v.decision, Decision::Reject);
        }

        #[test]
        fn inspect_is_deterministic(events in event_times(), extra_sq in any::<u32>(), dt in 0u64..3_000_000) {
            let trace = legit(&events, 4_000);
            let mut s = StreamState::fresh(&cfg());
            run(&mut s, &trace);
            let probe = apdu(trace.last().unwrap().1.st_num, extra_sq, vec![]);
            let at = trace.last().unwrap().0.plus_micros(dt);
            let before = s.clone();
            let a = inspect(&s, &probe, at, &cfg());
            let b = inspect(&s, &probe, at, &cfg());
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&s, &before);
        }

        #[test]
        fn sustained_over_cap_always_desyncs(spacing_us in 1u64..(1_000_000 / 13), st in any::<u32>(), sq in any::<u32>()) {
            let c = cfg();
            let mut s = StreamState::fresh(&c);
            let mut t = SimTime::from_millis(10_000);
            for i in 0..=c.cap() as u32 {
                s.inspect(&apdu(st, sq.wrapping_add(i), vec![]), t, &c);
                t = t.plus_micros(spacing_us);
            }
            prop_assert!(!s.synchronized());
        }
    }
}
