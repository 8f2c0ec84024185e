//! Scenario files: TOML with a handful of sections.
//!
//! ```toml
//! seed = 1
//! duration_ms = 12000
//! modes = ["mac-only", "ids-only", "hybrid"]
//!
//! [profile]
//! t0_ms = 2
//! t1_ms = 1000
//! ttl_multiplier = 2
//!
//! [publisher]
//! events_ms = [3000]
//!
//! [security]
//! keystore = "keys.txt"
//!
//! [[attack]]
//! kind = "replay"
//! trigger_ms = 7500
//! ```
//!
//! Every key is optional. Relative paths resolve against the scenario file.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::attack::{AttackSpec, ReplaySelect};
use crate::codec::{MacAddress, VlanTag};
use crate::pipeline::PipelineMode;
use crate::secure_ext::{KeyId, KeyStore, KeyStoreError, SenderId};
use crate::sim::{BusConfig, Signing, DEFAULT_DST, DEFAULT_SRC};
use crate::time::SimTime;
use crate::transmission::{PublisherIdentity, TransmissionProfile};

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_DURATION_MS: u64 = 12_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{origin}: {message}")]
    Syntax { origin: String, message: String },
    #[error("{origin}:{line}: {message}")]
    Invalid { origin: String, line: usize, message: String },
    #[error("{origin}: keystore: {source}")]
    Keystore { origin: String, source: KeyStoreError },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    duration_ms: Option<u64>,
    modes: Option<Vec<PipelineMode>>,
    #[serde(default)]
    profile: TransmissionProfile,
    #[serde(default)]
    publisher: PublisherSection,
    #[serde(default)]
    security: SecuritySection,
    #[serde(default, rename = "attack")]
    attacks: Vec<AttackSpec>,
    #[serde(default)]
    bench: BenchSection,
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PublisherSection {
    pub src: MacAddress,
    pub dst: MacAddress,
    pub appid: u16,
    /// `None` sends untagged frames.
    pub vlan: Option<VlanTag>,
    pub gocb_ref: String,
    pub dat_set: String,
    pub go_id: String,
    pub conf_rev: u32,
    pub data_entries: usize,
    pub events_ms: Vec<u64>,
    pub hop_delay_us: u64,
    pub epoch_offset_ms: u64,
}

impl PublisherSection {
    pub fn identity(&self) -> PublisherIdentity {
        PublisherIdentity {
            gocb_ref: self.gocb_ref.clone(),
            dat_set: self.dat_set.clone(),
            go_id: self.go_id.clone(),
            conf_rev: self.conf_rev,
            ..PublisherIdentity::default()
        }
    }
}

impl Default for PublisherSection {
    fn default() -> Self {
        let bus = BusConfig::default();
        PublisherSection {
            src: DEFAULT_SRC,
            dst: DEFAULT_DST,
            appid: bus.appid,
            vlan: bus.vlan,
            gocb_ref: bus.identity.gocb_ref,
            dat_set: bus.identity.dat_set,
            go_id: bus.identity.go_id,
            conf_rev: bus.identity.conf_rev,
            data_entries: bus.initial_data.len(),
            events_ms: vec![3_000],
            hop_delay_us: 0,
            epoch_offset_ms: bus.epoch_offset_ms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecuritySection {
    /// Keystore file; a key derived from the seed is used when absent.
    pub keystore: Option<PathBuf>,
    pub sender_id: SenderId,
    pub key_id: KeyId,
    /// Sign publisher traffic. Modes without MAC ignore the extension.
    pub sign: bool,
}

impl Default for SecuritySection {
    fn default() -> Self {
        SecuritySection { keystore: None, sender_id: SenderId(0xDC37_520A), key_id: KeyId(1), sign: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Packets measured per mode.
    pub packets: usize,
    /// Chunks the packets are split into; modes take turns chunk by chunk.
    pub rounds: usize,
    /// Unmeasured packets pushed through each mode first.
    pub warmup: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection { packets: 120_000, rounds: 12, warmup: 10_000 }
    }
}

/// A validated scenario.
#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_ms: u64,
    pub modes: Vec<PipelineMode>,
    pub profile: TransmissionProfile,
    pub publisher: PublisherSection,
    pub security: SecuritySection,
    pub attacks: Vec<AttackSpec>,
    pub bench: BenchSection,
    keystore: Option<KeyStore>,
}

impl Default for ScenarioConfig {
    /// One of each attack against the default bus.
    fn default() -> Self {
        ScenarioConfig {
            seed: DEFAULT_SEED,
            duration_ms: DEFAULT_DURATION_MS,
            modes: PipelineMode::ALL.to_vec(),
            profile: TransmissionProfile::default(),
            publisher: PublisherSection::default(),
            security: SecuritySection::default(),
            attacks: default_attacks(),
            bench: BenchSection::default(),
            keystore: None,
        }
    }
}

pub fn default_attacks() -> Vec<AttackSpec> {
    vec![
        AttackSpec::Replay { trigger_ms: 7_500, frame: ReplaySelect::LatestEvent },
        AttackSpec::Masquerade { trigger_ms: 7_500, data: None },
        AttackSpec::Flood { trigger_ms: 6_000, rate_hz: 1_000, duration_ms: 2_000, increment_sq: false },
        AttackSpec::Drop { trigger_ms: 3_000, count: Some(3), duration_ms: None, src: None },
    ]
}

/// 1-based line of the `index`-th line equal to `header` once trimmed.
fn header_line(text: &str, header: &str, index: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.split('#').next().unwrap_or("").trim() == header)
        .nth(index)
        .map(|(i, _)| i + 1)
}

/// 1-based line where `key` is first assigned, at any nesting level.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start().strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

impl ScenarioConfig {
    /// Parses scenario text. `origin` names the source in error messages and
    /// `base` anchors relative paths.
    pub fn parse(text: &str, origin: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigError::Syntax { origin: origin.into(), message: e.to_string() })?;
        let invalid = |line: Option<usize>, message: String| ConfigError::Invalid {
            origin: origin.into(),
            line: line.unwrap_or(1),
            message,
        };

        let duration_ms = raw.duration_ms.unwrap_or(DEFAULT_DURATION_MS);
        if duration_ms == 0 {
            return Err(invalid(key_line(text, "duration_ms"), "duration_ms must be positive".into()));
        }
        let modes = raw.modes.unwrap_or_else(|| PipelineMode::ALL.to_vec());
        if modes.is_empty() {
            return Err(invalid(key_line(text, "modes"), "at least one mode is required".into()));
        }
        let mut events = raw.publisher.events_ms.clone();
        events.sort_unstable();
        if events != raw.publisher.events_ms {
            return Err(invalid(key_line(text, "events_ms"), "events_ms must be in ascending order".into()));
        }
        if let Some(&late) = events.iter().find(|&&e| e >= duration_ms) {
            return Err(invalid(
                key_line(text, "events_ms"),
                format!("event at {late} ms is not before the end of the run ({duration_ms} ms)"),
            ));
        }
        if raw.publisher.data_entries == 0 {
            return Err(invalid(key_line(text, "data_entries"), "data_entries must be positive".into()));
        }
        for (i, spec) in raw.attacks.iter().enumerate() {
            let line = header_line(text, "[[attack]]", i);
            spec.validate(raw.profile.t1_ms()).map_err(|e| invalid(line, format!("attack {}: {e}", i + 1)))?;
            if spec.trigger() >= SimTime::from_millis(duration_ms) {
                return Err(invalid(
                    line,
                    format!("attack {} triggers at {} ms, after the run ends ({duration_ms} ms)", i + 1, spec.trigger().as_millis()),
                ));
            }
        }

        let mut security = raw.security;
        let keystore = match &security.keystore {
            Some(path) => {
                let path = base.join(path);
                let ks = KeyStore::load(&path).map_err(|source| ConfigError::Keystore { origin: origin.into(), source })?;
                if security.sign && !ks.contains(security.key_id) {
                    return Err(invalid(
                        key_line(text, "key_id").or(key_line(text, "keystore")),
                        format!("key {} is not in {}", security.key_id, path.display()),
                    ));
                }
                security.keystore = Some(path);
                Some(ks)
            }
            None => None,
        };

        Ok(ScenarioConfig {
            seed: raw.seed.unwrap_or(DEFAULT_SEED),
            duration_ms,
            modes,
            profile: raw.profile,
            publisher: raw.publisher,
            security,
            attacks: raw.attacks,
            bench: raw.bench,
            keystore,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, &path.display().to_string(), base)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// The configured keystore, or a single seed-derived key under the
    /// configured key ID.
    pub fn keystore(&self) -> KeyStore {
        if let Some(ks) = &self.keystore {
            return ks.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut ks = KeyStore::new();
        ks.insert(self.security.key_id, rng.gen()).expect("empty keystore");
        ks
    }

    /// Publisher event times with seed-derived data values; every event
    /// changes at least one entry.
    pub fn events(&self) -> Vec<(SimTime, Vec<bool>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6576_656e_7473);
        let mut data = vec![false; self.publisher.data_entries];
        self.publisher
            .events_ms
            .iter()
            .map(|&ms| {
                let previous = data.clone();
                while data == previous {
                    data.iter_mut().for_each(|d| *d = rng.gen());
                }
                (SimTime::from_millis(ms), data.clone())
            })
            .collect()
    }

    /// Bus settings for one simulation of `mode` under `attacks`.
    pub fn bus_config(&self, mode: PipelineMode, attacks: Vec<AttackSpec>) -> BusConfig {
        let p = &self.publisher;
        BusConfig {
            profile: self.profile,
            identity: p.identity(),
            src: p.src,
            dst: p.dst,
            vlan: p.vlan,
            appid: p.appid,
            initial_data: vec![false; p.data_entries],
            events: self.events(),
            duration: SimTime::from_millis(self.duration_ms),
            hop_delay_us: p.hop_delay_us,
            epoch_offset_ms: p.epoch_offset_ms,
            signing: self
                .security
                .sign
                .then_some(Signing { sender: self.security.sender_id, key_id: self.security.key_id }),
            keystore: self.keystore(),
            mode,
            attacks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secure_ext::Signer;

    fn parse(text: &str) -> Result<ScenarioConfig, ConfigError> {
        ScenarioConfig::parse(text, "test.toml", Path::new("."))
    }

    #[test]
    fn empty_file_means_defaults_without_attacks() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.seed, DEFAULT_SEED);
        assert_eq!(cfg.modes, PipelineMode::ALL);
        assert_eq!(cfg.profile, TransmissionProfile::default());
        assert!(cfg.attacks.is_empty());
    }

    #[test]
    fn full_file() {
        let cfg = parse(
            r#"
seed = 9
duration_ms = 5000
modes = ["ids-only"]

[profile]
t0_ms = 4
t1_ms = 500

[publisher]
src = "02:00:00:00:00:01"
go_id = "X"
vlan = { priority = 6, vid = 10 }
events_ms = [1000, 2000]

[security]
sender_id = "00000007"
key_id = "000000aa"

[[attack]]
kind = "flood"
trigger_ms = 3000
rate_hz = 50
duration_ms = 100

[[attack]]
kind = "replay"
trigger_ms = 4000
frame = 3
"#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.modes, [PipelineMode::IdsOnly]);
        assert_eq!(cfg.profile.ttl_multiplier(), 2);
        assert_eq!(cfg.publisher.identity().go_id, "X");
        assert_eq!(cfg.publisher.vlan, Some(VlanTag { priority: 6, vid: 10 }));
        assert_eq!(cfg.security.key_id, KeyId(0xaa));
        assert_eq!(cfg.attacks[1], AttackSpec::Replay { trigger_ms: 4000, frame: ReplaySelect::Index(3) });
        assert!(cfg.keystore().contains(KeyId(0xaa)));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse("seed = 1\nduration_ms = \"x\"\n").unwrap_err().to_string();
        assert!(err.starts_with("test.toml: "), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(parse("[profile]\nt2_ms = 4\n"), Err(ConfigError::Syntax { .. })));
        assert!(matches!(parse("[[attack]]\nkind = \"replay\"\ntrigger_ms = 1\nspeed = 2\n"), Err(ConfigError::Syntax { .. })));
    }

    #[test]
    fn attack_validation_points_at_its_header() {
        let text = "duration_ms = 9000\n\n[[attack]]\nkind = \"replay\"\ntrigger_ms = 1\n\n[[attack]]\nkind = \"drop\"\ntrigger_ms = 2\n";
        let err = parse(text).unwrap_err().to_string();
        assert_eq!(err, "test.toml:7: attack 2: drop attack needs a count or a duration");
        let err = parse("duration_ms = 5000\n[[attack]]\nkind = \"replay\"\ntrigger_ms = 5000\n").unwrap_err().to_string();
        assert!(err.starts_with("test.toml:2: attack 1 triggers at 5000 ms"), "{err}");
    }

    #[test]
    fn invalid_profile_is_a_syntax_error() {
        assert!(parse("[profile]\nt0_ms = 0\nt1_ms = 1000\n").is_err());
    }

    #[test]
    fn missing_keystore_file() {
        let err = parse("[security]\nkeystore = \"/nonexistent/keys.txt\"\n").unwrap_err();
        assert!(matches!(err, ConfigError::Keystore { .. }));
    }

    #[test]
    fn keystore_must_hold_the_signing_key() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("k.txt"), "00000002 = 000102030405060708090a0b0c0d0e0f\n").unwrap();
        let text = "[security]\nkeystore = \"k.txt\"\nkey_id = \"00000001\"\n";
        let err = ScenarioConfig::parse(text, "s.toml", dir.path()).unwrap_err().to_string();
        assert!(err.starts_with("s.toml:3: key 00000001 is not in"), "{err}");
        let ok = ScenarioConfig::parse(&text.replace("00000001\"", "00000002\""), "s.toml", dir.path()).unwrap();
        assert!(ok.keystore().contains(KeyId(2)));
    }

    #[test]
    fn unordered_events_are_rejected() {
        let err = parse("[publisher]\nevents_ms = [3000, 1000]\n").unwrap_err().to_string();
        assert!(err.starts_with("test.toml:2:"), "{err}");
    }

    #[test]
    fn events_always_change_data_and_follow_the_seed() {
        let mut cfg = ScenarioConfig::default();
        cfg.publisher.data_entries = 1;
        cfg.publisher.events_ms = vec![1_000, 2_000, 3_000, 4_000];
        let ev = cfg.events();
        let values: Vec<bool> = ev.iter().map(|(_, d)| d[0]).collect();
        assert_eq!(values, [true, false, true, false]);
        let a = ScenarioConfig::default().with_seed(5);
        assert_eq!(a.events(), ScenarioConfig::default().with_seed(5).events());
    }

    #[test]
    fn seed_derives_key_material() {
        let tag = |seed| {
            let mut ks = ScenarioConfig::default().with_seed(seed).keystore();
            ks.set_active(SenderId(1), KeyId(1));
            Signer::new(SenderId(1)).sign_bytes(b"pdu", &ks).unwrap().tag
        };
        assert_eq!(tag(1), tag(1));
        assert_ne!(tag(1), tag(2));
    }
}
