//! Authentication extension appended to GOOSE frames: IV, key ID and an
//! AES-GMAC-128 tag over the PDU.
//!
//! Wire layout (32 octets, after the APDU):
//!
//! ```text
//! +-------------------+-----------+--------------------+
//! | IV (12)           | KeyID (4) | MAC tag (16)       |
//! | sender ‖ counter  |           | GMAC(k, IV, PDU)   |
//! +-------------------+-----------+--------------------+
//! ```
//!
//! The MAC covers the encoded PDU (APPID through the end of the APDU) with
//! the Reserved1 security bit already set. GMAC is AES-GCM with an empty
//! plaintext and the PDU as associated data.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use aes_gcm::aead::AeadInPlace;
use aes_gcm::{Aes128Gcm, KeyInit, Nonce, Tag};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::codec::{encode_frame, encode_pdu, EncodeError, GooseFrame, GoosePdu};

pub const IV_LEN: usize = 12;
pub const KEY_ID_LEN: usize = 4;
pub const TAG_LEN: usize = 16;
pub const EXTENSION_LEN: usize = IV_LEN + KEY_ID_LEN + TAG_LEN;

macro_rules! hex_id {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{:08x}", self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({:08x})"), self.0)
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                if s.len() != 8 {
                    return Err(format!("expected 8 hex digits, got {s:?}"));
                }
                u32::from_str_radix(s, 16)
                    .map($name)
                    .map_err(|_| format!("expected 8 hex digits, got {s:?}"))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                serializer.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(KeyId);
hex_id!(SenderId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SecurityExtension {
    pub iv: [u8; IV_LEN],
    pub key_id: KeyId,
    pub tag: [u8; TAG_LEN],
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("security extension must be {EXTENSION_LEN} octets, got {0}")]
pub struct ExtensionLengthError(pub usize);

impl SecurityExtension {
    pub fn to_bytes(&self) -> [u8; EXTENSION_LEN] {
        let mut out = [0u8; EXTENSION_LEN];
        out[..IV_LEN].copy_from_slice(&self.iv);
        out[IV_LEN..IV_LEN + KEY_ID_LEN].copy_from_slice(&self.key_id.0.to_be_bytes());
        out[IV_LEN + KEY_ID_LEN..].copy_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ExtensionLengthError> {
        if bytes.len() != EXTENSION_LEN {
            return Err(ExtensionLengthError(bytes.len()));
        }
        let mut iv = [0u8; IV_LEN];
        iv.copy_from_slice(&bytes[..IV_LEN]);
        let key_id = u32::from_be_bytes(bytes[IV_LEN..IV_LEN + KEY_ID_LEN].try_into().unwrap());
        let mut tag = [0u8; TAG_LEN];
        tag.copy_from_slice(&bytes[IV_LEN + KEY_ID_LEN..]);
        Ok(SecurityExtension { iv, key_id: KeyId(key_id), tag })
    }
}

/// AES-GMAC-128 of `aad` under `key` and `iv`.
pub fn gmac(key: &[u8; 16], iv: &[u8; IV_LEN], aad: &[u8]) -> [u8; TAG_LEN] {
    let cipher = Aes128Gcm::new(key.into());
    gmac_with(&cipher, iv, aad)
}

fn gmac_with(cipher: &Aes128Gcm, iv: &[u8; IV_LEN], aad: &[u8]) -> [u8; TAG_LEN] {
    let tag = cipher
        .encrypt_in_place_detached(Nonce::from_slice(iv), aad, &mut [])
        .expect("GMAC over a bounded PDU cannot exceed AES-GCM limits");
    tag.into()
}

#[derive(Debug, Error)]
pub enum KeyStoreError {
    #[error("reading keystore {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("keystore line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("key {0} is defined twice")]
    DuplicateKey(KeyId),
}

/// Pre-shared keys by key ID, plus the key each sender signs with.
#[derive(Clone, Default)]
pub struct KeyStore {
    keys: HashMap<KeyId, Aes128Gcm>,
    active: HashMap<SenderId, KeyId>,
}

impl fmt::Debug for KeyStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<_> = self.keys.keys().collect();
        ids.sort();
        f.debug_struct("KeyStore").field("key_ids", &ids).field("active", &self.active).finish()
    }
}

impl KeyStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key_id: KeyId, key: [u8; 16]) -> Result<(), KeyStoreError> {
        if self.keys.contains_key(&key_id) {
            return Err(KeyStoreError::DuplicateKey(key_id));
        }
        self.keys.insert(key_id, Aes128Gcm::new(&key.into()));
        Ok(())
    }

    pub fn set_active(&mut self, sender: SenderId, key_id: KeyId) {
        self.active.insert(sender, key_id);
    }

    pub fn contains(&self, key_id: KeyId) -> bool {
        self.keys.contains_key(&key_id)
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn cipher(&self, key_id: KeyId) -> Option<&Aes128Gcm> {
        self.keys.get(&key_id)
    }

    /// Parses the text keystore format: one `<key id> = <key>` pair per
    /// line, 8 and 32 hex digits respectively. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, KeyStoreError> {
        let mut store = KeyStore::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| KeyStoreError::Parse { line, message };
            let (id, key) = content
                .split_once('=')
                .ok_or_else(|| err("expected `<key id> = <key>`".into()))?;
            let key_id: KeyId = id.trim().parse().map_err(err)?;
            let key_hex = key.trim();
            if key_hex.len() != 32 {
                return Err(err(format!("key must be 32 hex digits, got {}", key_hex.len())));
            }
            let mut key = [0u8; 16];
            hex::decode_to_slice(key_hex, &mut key).map_err(|e| err(e.to_string()))?;
            store.insert(key_id, key).map_err(|e| err(e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, KeyStoreError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| KeyStoreError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignError {
    #[error("sender {0} has no active key")]
    NoActiveKey(SenderId),
    #[error("key {0} is not in the keystore")]
    UnknownKey(KeyId),
    #[error("Reserved1 security bit must be set before signing")]
    SecurityBitClear,
    #[error("IV counter exhausted for sender {0}")]
    IvExhausted(SenderId),
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

/// Per-sender signing state. The IV is the 4-octet sender ID followed by
/// an 8-octet counter that never repeats for the life of the signer.
#[derive(Clone, Debug)]
pub struct Signer {
    sender: SenderId,
    counter: u64,
}

impl Signer {
    pub fn new(sender: SenderId) -> Self {
        Signer { sender, counter: 0 }
    }

    pub fn sender(&self) -> SenderId {
        self.sender
    }

    fn next_iv(&mut self) -> Result<[u8; IV_LEN], SignError> {
        let counter = self.counter;
        self.counter = counter.checked_add(1).ok_or(SignError::IvExhausted(self.sender))?;
        let mut iv = [0u8; IV_LEN];
        iv[..4].copy_from_slice(&self.sender.0.to_be_bytes());
        iv[4..].copy_from_slice(&counter.to_be_bytes());
        Ok(iv)
    }

    pub fn sign(&mut self, pdu: &GoosePdu, keystore: &KeyStore) -> Result<SecurityExtension, SignError> {
        if !pdu.has_security_bit() {
            return Err(SignError::SecurityBitClear);
        }
        let bytes = encode_pdu(pdu)?;
        self.sign_bytes(&bytes, keystore)
    }

    /// Signs already-encoded PDU octets.
    pub fn sign_bytes(&mut self, pdu_bytes: &[u8], keystore: &KeyStore) -> Result<SecurityExtension, SignError> {
        let key_id = *keystore
            .active
            .get(&self.sender)
            .ok_or(SignError::NoActiveKey(self.sender))?;
        let cipher = keystore.cipher(key_id).ok_or(SignError::UnknownKey(key_id))?;
        let iv = self.next_iv()?;
        Ok(SecurityExtension { iv, key_id, tag: gmac_with(cipher, &iv, pdu_bytes) })
    }

    /// Sets the security bit, signs the PDU and attaches the extension.
    /// Returns the encoded frame.
    pub fn sign_frame(&mut self, frame: &mut GooseFrame, keystore: &KeyStore) -> Result<Vec<u8>, SignError> {
        frame.pdu.set_security_bit(true);
        let ext = self.sign(&frame.pdu, keystore)?;
        frame.extension = Some(ext.to_bytes().to_vec());
        Ok(encode_frame(frame)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum AuthVerdict {
    Authentic,
    Forged,
    UnknownKey,
}

/// Recomputes the tag over the encoded PDU and compares in constant time.
pub fn verify(pdu: &GoosePdu, ext: &SecurityExtension, keystore: &KeyStore) -> AuthVerdict {
    match encode_pdu(pdu) {
        Ok(bytes) => verify_bytes(&bytes, ext, keystore),
        Err(_) => AuthVerdict::Forged,
    }
}

/// Verifies an extension against the PDU octets exactly as received.
pub fn verify_bytes(pdu_bytes: &[u8], ext: &SecurityExtension, keystore: &KeyStore) -> AuthVerdict {
    let Some(cipher) = keystore.cipher(ext.key_id) else {
        return AuthVerdict::UnknownKey;
    };
    // Decrypting an empty ciphertext checks the tag in constant time.
    match cipher.decrypt_in_place_detached(
        Nonce::from_slice(&ext.iv),
        pdu_bytes,
        &mut [],
        Tag::from_slice(&ext.tag),
    ) {
        Ok(()) => AuthVerdict::Authentic,
        Err(_) => AuthVerdict::Forged,
    }
}
