//! Intrusion flags raised by the authentication and IDS stages.

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::codec::{GooseFrame, MacAddress};
use crate::time::SimTime;

/// Identity of a GOOSE stream as seen by a subscriber.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct StreamKey {
    pub src: MacAddress,
    pub appid: u16,
    pub go_id: String,
}

impl StreamKey {
    pub fn of(frame: &GooseFrame) -> Self {
        StreamKey { src: frame.eth.src, appid: frame.pdu.appid, go_id: frame.pdu.apdu.go_id.clone() }
    }
}

impl fmt::Display for StreamKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{:04x}/{}", self.src, self.appid, self.go_id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Alert,
    Info,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RuleId {
    SeqReplayOrGap,
    EventSeq,
    StnumAnomaly,
    RateExceeded,
    TooFast,
    TtlExpired,
    Desynchronized,
    BaselineAdopted,
    Resynchronized,
    AuthFailed,
    UnknownKey,
    NoAuthExtension,
    MalformedAuthExtension,
}

impl RuleId {
    pub const ALL: [RuleId; 13] = [
        RuleId::SeqReplayOrGap,
        RuleId::EventSeq,
        RuleId::StnumAnomaly,
        RuleId::RateExceeded,
        RuleId::TooFast,
        RuleId::TtlExpired,
        RuleId::Desynchronized,
        RuleId::BaselineAdopted,
        RuleId::Resynchronized,
        RuleId::AuthFailed,
        RuleId::UnknownKey,
        RuleId::NoAuthExtension,
        RuleId::MalformedAuthExtension,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RuleId::SeqReplayOrGap => "SEQ_REPLAY_OR_GAP",
            RuleId::EventSeq => "EVENT_SEQ",
            RuleId::StnumAnomaly => "STNUM_ANOMALY",
            RuleId::RateExceeded => "RATE_EXCEEDED",
            RuleId::TooFast => "TOO_FAST",
            RuleId::TtlExpired => "TTL_EXPIRED",
            RuleId::Desynchronized => "DESYNCHRONIZED",
            RuleId::BaselineAdopted => "BASELINE_ADOPTED",
            RuleId::Resynchronized => "RESYNCHRONIZED",
            RuleId::AuthFailed => "AUTH_FAILED",
            RuleId::UnknownKey => "UNKNOWN_KEY",
            RuleId::NoAuthExtension => "NO_AUTH_EXTENSION",
            RuleId::MalformedAuthExtension => "MALFORMED_AUTH_EXTENSION",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            RuleId::SeqReplayOrGap => "sqNum does not continue the stream",
            RuleId::EventSeq => "new stNum without sqNum 0",
            RuleId::StnumAnomaly => "stNum regressed or skipped",
            RuleId::RateExceeded => "more frames in one t1 window than any legitimate schedule allows",
            RuleId::TooFast => "inter-arrival time below t0",
            RuleId::TtlExpired => "no frame within timeAllowedToLive",
            RuleId::Desynchronized => "stream lost synchronization; waiting for a quiet period",
            RuleId::BaselineAdopted => "stNum/sqNum adopted as stream baseline",
            RuleId::Resynchronized => "stream resumed after a forward sequence gap",
            RuleId::AuthFailed => "MAC tag mismatch",
            RuleId::UnknownKey => "MAC key ID not in keystore",
            RuleId::NoAuthExtension => "frame carries no security extension",
            RuleId::MalformedAuthExtension => "security extension has the wrong length",
        }
    }

    pub fn severity(self) -> Severity {
        match self {
            RuleId::BaselineAdopted | RuleId::Resynchronized => Severity::Info,
            _ => Severity::Alert,
        }
    }

    /// Bit position used by the C ABI flag mask.
    pub fn bit(self) -> u32 {
        1 << (self as u32)
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Hex SHA-256 of the frame octets, truncated to 16 hex digits for logs.
pub fn packet_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FlagEvent {
    pub time: SimTime,
    pub stream: StreamKey,
    pub rule: RuleId,
    pub severity: Severity,
    /// Absent for flags raised on clock ticks rather than packets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

impl FlagEvent {
    pub fn new(time: SimTime, stream: StreamKey, rule: RuleId, digest: Option<String>) -> Self {
        FlagEvent { time, stream, rule, severity: rule.severity(), digest }
    }

    pub fn is_alert(&self) -> bool {
        self.severity == Severity::Alert
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_serialize_as_screaming_snake() {
        for rule in RuleId::ALL {
            assert_eq!(serde_json::to_string(&rule).unwrap(), format!("\"{}\"", rule.name()));
        }
    }

    #[test]
    fn bits_are_distinct() {
        let mask = RuleId::ALL.iter().fold(0u32, |m, r| {
            assert_eq!(m & r.bit(), 0);
            m | r.bit()
        });
        assert_eq!(mask.count_ones() as usize, RuleId::ALL.len());
    }

    #[test]
    fn only_adoption_flags_are_informational() {
        let info: Vec<_> = RuleId::ALL.into_iter().filter(|r| r.severity() == Severity::Info).collect();
        assert_eq!(info, [RuleId::BaselineAdopted, RuleId::Resynchronized]);
    }

    #[test]
    fn digest_is_stable() {
        // sha256("abc") begins ba7816bf8f01cfea
        assert_eq!(packet_digest(b"abc"), "ba7816bf8f01cfea");
    }
}
