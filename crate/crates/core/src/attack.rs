//! Attack generators: replay, masquerade, flooding and packet drop.
//!
//! Injection attacks work from frames the attacker captured on the bus. The
//! attacker has no key, so anything it modifies keeps the captured (now
//! stale) security extension.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{decode_frame, encode_frame, DecodeError, EncodeError, MacAddress, PcapError, PcapWriter};
use crate::time::SimTime;

/// Bit-exact copies of every frame the attacker's tap observed, in order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameArchive {
    frames: Vec<(SimTime, Vec<u8>)>,
}

impl FrameArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn capture(&mut self, at: SimTime, bytes: &[u8]) {
        self.frames.push((at, bytes.to_vec()));
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&(SimTime, Vec<u8>)> {
        self.frames.get(index)
    }

    pub fn latest(&self) -> Option<&(SimTime, Vec<u8>)> {
        self.frames.last()
    }

    pub fn iter(&self) -> impl DoubleEndedIterator<Item = &(SimTime, Vec<u8>)> {
        self.frames.iter()
    }

    pub fn to_pcap(&self) -> Result<Vec<u8>, PcapError> {
        let mut w = PcapWriter::new(Vec::new())?;
        for (at, bytes) in &self.frames {
            w.push(*at, bytes)?;
        }
        Ok(w.into_inner())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Replay,
    Masquerade,
    Flood,
    Drop,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Replay, AttackKind::Masquerade, AttackKind::Flood, AttackKind::Drop];

    pub fn label(self) -> &'static str {
        match self {
            AttackKind::Replay => "Replay",
            AttackKind::Masquerade => "Masquerade",
            AttackKind::Flood => "Flooding",
            AttackKind::Drop => "Packet drop",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Replay => "replay",
            AttackKind::Masquerade => "masquerade",
            AttackKind::Flood => "flood",
            AttackKind::Drop => "drop",
        }
    }

    pub fn injects(self) -> bool {
        self != AttackKind::Drop
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which captured frame a replay re-sends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReplaySelect {
    /// First frame of the most recent event (sqNum 0).
    #[default]
    LatestEvent,
    /// Most recently captured frame.
    Latest,
    /// Position in the capture archive.
    #[serde(untagged)]
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AttackSpec {
    Replay {
        trigger_ms: u64,
        #[serde(default)]
        frame: ReplaySelect,
    },
    Masquerade {
        trigger_ms: u64,
        /// Data set values to publish; all TRUE when omitted.
        #[serde(default)]
        data: Option<Vec<bool>>,
    },
    Flood {
        trigger_ms: u64,
        rate_hz: u32,
        duration_ms: u64,
        /// Bump sqNum on every copy instead of re-sending the same one.
        #[serde(default)]
        increment_sq: bool,
    },
    Drop {
        trigger_ms: u64,
        #[serde(default)]
        count: Option<u32>,
        #[serde(default)]
        duration_ms: Option<u64>,
        /// Source address to drop; the publisher's when omitted.
        #[serde(default)]
        src: Option<MacAddress>,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AttackError {
    #[error("the attacker has not captured any frame yet")]
    EmptyArchive,
    #[error("capture index {index} out of range ({len} frames captured)")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no event frame (sqNum 0) has been captured")]
    NoEventFrame,
    #[error("flood rate {rate_hz} Hz does not exceed the steady rate of one frame per {t1_ms} ms")]
    FloodTooSlow { rate_hz: u32, t1_ms: u32 },
    #[error("flood duration must be positive")]
    EmptyFlood,
    #[error("drop attack needs a count or a duration")]
    UnboundedDrop,
    #[error("captured frame does not decode: {0}")]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

impl AttackSpec {
    pub fn kind(&self) -> AttackKind {
        match self {
            AttackSpec::Replay { .. } => AttackKind::Replay,
            AttackSpec::Masquerade { .. } => AttackKind::Masquerade,
            AttackSpec::Flood { .. } => AttackKind::Flood,
            AttackSpec::Drop { .. } => AttackKind::Drop,
        }
    }

    pub fn trigger(&self) -> SimTime {
        let ms = match self {
            AttackSpec::Replay { trigger_ms, .. }
            | AttackSpec::Masquerade { trigger_ms, .. }
            | AttackSpec::Flood { trigger_ms, .. }
            | AttackSpec::Drop { trigger_ms, .. } => *trigger_ms,
        };
        SimTime::from_millis(ms)
    }

    /// Last instant the attack can act.
    pub fn end(&self) -> SimTime {
        match self {
            AttackSpec::Flood { duration_ms, .. } | AttackSpec::Drop { duration_ms: Some(duration_ms), .. } => {
                self.trigger().plus_millis(*duration_ms)
            }
            _ => self.trigger(),
        }
    }

    pub fn validate(&self, t1_ms: u32) -> Result<(), AttackError> {
        match *self {
            AttackSpec::Flood { rate_hz, duration_ms, .. } => {
                if u64::from(rate_hz) * u64::from(t1_ms) <= 1_000 {
                    return Err(AttackError::FloodTooSlow { rate_hz, t1_ms });
                }
                if duration_ms == 0 {
                    return Err(AttackError::EmptyFlood);
                }
                Ok(())
            }
            AttackSpec::Drop { count: None, duration_ms: None, .. } => Err(AttackError::UnboundedDrop),
            _ => Ok(()),
        }
    }
}

/// The captured frame a replay sends, unchanged.
pub fn replay_frame(archive: &FrameArchive, select: ReplaySelect) -> Result<Vec<u8>, AttackError> {
    if archive.is_empty() {
        return Err(AttackError::EmptyArchive);
    }
    let bytes = match select {
        ReplaySelect::Latest => &archive.latest().unwrap().1,
        ReplaySelect::Index(index) => {
            &archive.get(index).ok_or(AttackError::IndexOutOfRange { index, len: archive.len() })?.1
        }
        ReplaySelect::LatestEvent => {
            let mut found = None;
            for (_, bytes) in archive.iter().rev() {
                let f = decode_frame(bytes)?;
                if f.pdu.apdu.sq_num == 0 && f.pdu.apdu.st_num > 0 {
                    found = Some(bytes);
                    break;
                }
            }
            found.ok_or(AttackError::NoEventFrame)?
        }
    };
    Ok(bytes.clone())
}

/// A fake event built on the latest captured frame: next stNum, sqNum 0,
/// forged data. The captured extension is kept as is.
pub fn masquerade_frame(archive: &FrameArchive, data: Option<&[bool]>) -> Result<Vec<u8>, AttackError> {
    let (_, latest) = archive.latest().ok_or(AttackError::EmptyArchive)?;
    let mut f = decode_frame(latest)?;
    let apdu = &mut f.pdu.apdu;
    apdu.st_num = apdu.st_num.wrapping_add(1);
    apdu.sq_num = 0;
    apdu.all_data = match data {
        Some(d) => d.to_vec(),
        None => vec![true; apdu.all_data.len().max(1)],
    };
    Ok(encode_frame(&f)?)
}

/// Send times of a flood: `rate_hz` frames per second from `start` for
/// `duration_ms`, without cumulative rounding drift.
pub fn flood_schedule(start: SimTime, rate_hz: u32, duration_ms: u64) -> Vec<SimTime> {
    let count = u64::from(rate_hz) * duration_ms / 1_000;
    (0..count).map(|i| start.plus_micros(i * 1_000_000 / u64::from(rate_hz))).collect()
}

/// Copies of the latest captured frame, one per send time. Each copy's `t`
/// is moved forward by the time elapsed since capture, as a live sender's
/// would be; with `increment_sq` the sqNum also advances per copy.
pub fn flood_frames(
    archive: &FrameArchive,
    times: &[SimTime],
    increment_sq: bool,
) -> Result<Vec<(SimTime, Vec<u8>)>, AttackError> {
    let (captured_at, latest) = archive.latest().ok_or(AttackError::EmptyArchive)?;
    let template = decode_frame(latest)?;
    times
        .iter()
        .enumerate()
        .map(|(i, &at)| {
            let mut f = template.clone();
            f.pdu.apdu.t += at.micros_since(*captured_at) / 1_000;
            if increment_sq {
                f.pdu.apdu.sq_num = f.pdu.apdu.sq_num.wrapping_add(i as u32 + 1);
            }
            Ok((at, encode_frame(&f)?))
        })
        .collect()
}
