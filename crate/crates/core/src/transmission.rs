//! Publisher-side GOOSE retransmission.
//!
//! Steady state repeats the last APDU every `t1`. A state change bumps
//! stNum, resets sqNum and restarts retransmission at `t0`, doubling the
//! interval after every frame until it is back at `t1`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::GooseApdu;
use crate::time::SimTime;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileError {
    #[error("t0 ({t0} ms) must be positive and below t1 ({t1} ms)")]
    Intervals { t0: u32, t1: u32 },
    #[error("ttl_multiplier must be at least 2, got {0}")]
    TtlMultiplier(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawProfile", into = "RawProfile")]
pub struct TransmissionProfile {
    t0_ms: u32,
    t1_ms: u32,
    ttl_multiplier: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProfile {
    t0_ms: u32,
    t1_ms: u32,
    #[serde(default = "default_ttl_multiplier")]
    ttl_multiplier: u32,
}

fn default_ttl_multiplier() -> u32 {
    2
}

impl TryFrom<RawProfile> for TransmissionProfile {
    type Error = ProfileError;

    fn try_from(raw: RawProfile) -> Result<Self, Self::Error> {
        TransmissionProfile::new(raw.t0_ms, raw.t1_ms, raw.ttl_multiplier)
    }
}

impl From<TransmissionProfile> for RawProfile {
    fn from(p: TransmissionProfile) -> Self {
        RawProfile { t0_ms: p.t0_ms, t1_ms: p.t1_ms, ttl_multiplier: p.ttl_multiplier }
    }
}

impl Default for TransmissionProfile {
    fn default() -> Self {
        TransmissionProfile { t0_ms: 2, t1_ms: 1_000, ttl_multiplier: 2 }
    }
}

impl TransmissionProfile {
    pub fn new(t0_ms: u32, t1_ms: u32, ttl_multiplier: u32) -> Result<Self, ProfileError> {
        if t0_ms == 0 || t0_ms >= t1_ms {
            return Err(ProfileError::Intervals { t0: t0_ms, t1: t1_ms });
        }
        if ttl_multiplier < 2 {
            return Err(ProfileError::TtlMultiplier(ttl_multiplier));
        }
        Ok(TransmissionProfile { t0_ms, t1_ms, ttl_multiplier })
    }

    pub fn t0_ms(&self) -> u32 {
        self.t0_ms
    }

    pub fn t1_ms(&self) -> u32 {
        self.t1_ms
    }

    pub fn ttl_multiplier(&self) -> u32 {
        self.ttl_multiplier
    }

    /// Intervals between consecutive frames after an event: `t0`, `2·t0`, …
    /// capped at `t1`, ending with the first interval equal to `t1`.
    pub fn burst_schedule(&self) -> Vec<u32> {
        let mut out = Vec::new();
        let mut interval = self.t0_ms;
        loop {
            out.push(interval);
            if interval == self.t1_ms {
                return out;
            }
            interval = self.next_interval(interval);
        }
    }

    pub(crate) fn next_interval(&self, interval: u32) -> u32 {
        interval.saturating_mul(2).min(self.t1_ms)
    }

    pub fn time_allowed_to_live(&self, interval_ms: u32) -> u32 {
        interval_ms.saturating_mul(self.ttl_multiplier)
    }
}

/// Static description of the control block a publisher speaks for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PublisherIdentity {
    pub gocb_ref: String,
    pub dat_set: String,
    pub go_id: String,
    pub conf_rev: u32,
    pub test: bool,
    pub nds_com: bool,
}

impl Default for PublisherIdentity {
    fn default() -> Self {
        PublisherIdentity {
            gocb_ref: "PCIED1LD0/LLN0$GO$gcbTrip".into(),
            dat_set: "PCIED1LD0/LLN0$DSTrip".into(),
            go_id: "PCIED1_TRIP".into(),
            conf_rev: 1,
            test: false,
            nds_com: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublisherState {
    pub st_num: u32,
    pub sq_num: u32,
    pub current_interval_ms: u32,
    pub next_send_at: SimTime,
    pub last_emission: Option<SimTime>,
    pub event_data: Vec<bool>,
    /// When the current stNum began; published as the APDU `t`.
    pub event_time: SimTime,
}

/// A single GOOSE control block's retransmission machine.
#[derive(Clone, Debug)]
pub struct Publisher {
    profile: TransmissionProfile,
    identity: PublisherIdentity,
    state: PublisherState,
    epoch_offset_ms: u64,
    last_now: SimTime,
}

impl Publisher {
    /// Starts in steady state with the first frame due at `start`.
    pub fn new(
        profile: TransmissionProfile,
        identity: PublisherIdentity,
        initial_data: Vec<bool>,
        start: SimTime,
    ) -> Self {
        Publisher {
            profile,
            identity,
            state: PublisherState {
                st_num: 0,
                sq_num: 0,
                current_interval_ms: profile.t1_ms,
                next_send_at: start,
                last_emission: None,
                event_data: initial_data,
                event_time: start,
            },
            epoch_offset_ms: 0,
            last_now: SimTime::ZERO,
        }
    }

    /// Wall-clock epoch (ms) corresponding to simulation time zero, used for `t`.
    pub fn with_epoch_offset(mut self, epoch_offset_ms: u64) -> Self {
        self.epoch_offset_ms = epoch_offset_ms;
        self
    }

    pub fn with_counters(mut self, st_num: u32, sq_num: u32) -> Self {
        self.state.st_num = st_num;
        self.state.sq_num = sq_num;
        self
    }

    pub fn profile(&self) -> &TransmissionProfile {
        &self.profile
    }

    pub fn identity(&self) -> &PublisherIdentity {
        &self.identity
    }

    pub fn state(&self) -> &PublisherState {
        &self.state
    }

    pub fn next_send_at(&self) -> SimTime {
        self.state.next_send_at
    }

    /// Emits the next APDU if one is due at `now`.
    pub fn tick(&mut self, now: SimTime) -> Option<GooseApdu> {
        debug_assert!(now >= self.last_now, "publisher clock went backwards");
        self.last_now = now;
        if now < self.state.next_send_at {
            return None;
        }
        let s = &mut self.state;
        let apdu = GooseApdu {
            gocb_ref: self.identity.gocb_ref.clone(),
            time_allowed_to_live: self.profile.time_allowed_to_live(s.current_interval_ms),
            dat_set: self.identity.dat_set.clone(),
            go_id: self.identity.go_id.clone(),
            t: self.epoch_offset_ms + s.event_time.as_millis(),
            st_num: s.st_num,
            sq_num: s.sq_num,
            test: self.identity.test,
            conf_rev: self.identity.conf_rev,
            nds_com: self.identity.nds_com,
            all_data: s.event_data.clone(),
        };
        s.last_emission = Some(now);
        s.next_send_at = now.plus_millis(s.current_interval_ms as u64);
        s.current_interval_ms = self.profile.next_interval(s.current_interval_ms);
        s.sq_num = s.sq_num.wrapping_add(1);
        Some(apdu)
    }

    /// Records a state change: new stNum, sqNum back to zero, burst restarts.
    ///
    /// The first burst frame goes out at `now`, or `t0` after the previous
    /// frame if that is later, so consecutive frames are never closer than `t0`.
    pub fn report_event(&mut self, new_data: Vec<bool>, now: SimTime) {
        let s = &mut self.state;
        s.st_num = s.st_num.wrapping_add(1);
        s.sq_num = 0;
        s.current_interval_ms = self.profile.t0_ms;
        s.event_data = new_data;
        s.event_time = now;
        let earliest = s
            .last_emission
            .map_or(now, |last| last.plus_millis(self.profile.t0_ms as u64));
        s.next_send_at = now.max(earliest);
    }
}

/// Runs `publisher` through every emission due up to and including `end`,
/// applying `events` (sorted by time) along the way. An event falling on
/// the same instant as a due frame is applied first.
pub fn drive(
    publisher: &mut Publisher,
    events: &[(SimTime, Vec<bool>)],
    end: SimTime,
) -> Vec<(SimTime, GooseApdu)> {
    let mut out = Vec::new();
    let mut pending = events.iter().peekable();
    loop {
        let due = publisher.next_send_at();
        match pending.peek() {
            Some((at, data)) if *at <= due && *at <= end => {
                publisher.report_event(data.clone(), *at);
                pending.next();
            }
            _ if due <= end => {
                let apdu = publisher.tick(due).expect("frame due");
                out.push((due, apdu));
            }
            _ => return out,
        }
    }
}
