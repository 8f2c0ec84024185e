//! GOOSE Ethernet frames: header, PDU (APPID, Length, Reserved1/2, APDU),
//! and an optional trailing security extension.
//!
//! The APDU is encoded with the standard GOOSE context tags in fixed
//! field order. Only boolean data set members are modelled.

mod ber;
mod pcap;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use pcap::{frames_to_pcap, PcapError, PcapWriter};

pub const ETHERTYPE_GOOSE: u16 = 0x88B8;
pub const TPID_8021Q: u16 = 0x8100;
/// Reserved1 bit announcing an appended security extension.
pub const SECURITY_BIT: u16 = 0x8000;
/// VisibleString129 limit for gocbRef, datSet and goID.
pub const MAX_VISIBLE_STRING: usize = 129;
/// APPID + Length + Reserved1 + Reserved2.
pub const PDU_HEADER_LEN: usize = 8;

const TAG_GOOSE_PDU: u8 = 0x61;
const TAG_GOCB_REF: u8 = 0x80;
const TAG_TIME_ALLOWED_TO_LIVE: u8 = 0x81;
const TAG_DAT_SET: u8 = 0x82;
const TAG_GO_ID: u8 = 0x83;
const TAG_T: u8 = 0x84;
const TAG_ST_NUM: u8 = 0x85;
const TAG_SQ_NUM: u8 = 0x86;
const TAG_TEST: u8 = 0x87;
const TAG_CONF_REV: u8 = 0x88;
const TAG_NDS_COM: u8 = 0x89;
const TAG_NUM_DAT_SET_ENTRIES: u8 = 0x8A;
const TAG_ALL_DATA: u8 = 0xAB;
const TAG_DATA_BOOLEAN: u8 = 0x83;

/// Time-quality octet written into every UtcTime (10 bits of accuracy).
const UTC_TIME_QUALITY: u8 = 0x0A;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MacAddress(pub [u8; 6]);

impl MacAddress {
    pub const fn new(octets: [u8; 6]) -> Self {
        MacAddress(octets)
    }

    pub fn is_multicast(&self) -> bool {
        self.0[0] & 0x01 != 0
    }
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl fmt::Debug for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid MAC address {0:?}")]
pub struct ParseMacError(String);

impl FromStr for MacAddress {
    type Err = ParseMacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut octets = [0u8; 6];
        let mut parts = s.split([':', '-']);
        for octet in octets.iter_mut() {
            let part = parts.next().ok_or_else(|| ParseMacError(s.to_owned()))?;
            if part.len() != 2 {
                return Err(ParseMacError(s.to_owned()));
            }
            *octet = u8::from_str_radix(part, 16).map_err(|_| ParseMacError(s.to_owned()))?;
        }
        if parts.next().is_some() {
            return Err(ParseMacError(s.to_owned()));
        }
        Ok(MacAddress(octets))
    }
}

impl Serialize for MacAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// 802.1Q tag. The drop-eligible bit is not modelled and is written as zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VlanTag {
    pub priority: u8,
    pub vid: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EthernetHeader {
    pub dst: MacAddress,
    pub src: MacAddress,
    pub vlan: Option<VlanTag>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GooseApdu {
    pub gocb_ref: String,
    /// Milliseconds.
    pub time_allowed_to_live: u32,
    pub dat_set: String,
    pub go_id: String,
    /// Time of the last state change, epoch milliseconds.
    pub t: u64,
    pub st_num: u32,
    pub sq_num: u32,
    pub test: bool,
    pub conf_rev: u32,
    pub nds_com: bool,
    pub all_data: Vec<bool>,
}

impl GooseApdu {
    pub fn num_dat_set_entries(&self) -> usize {
        self.all_data.len()
    }
}

/// The GOOSE PDU. The Length field is derived on encode and checked on decode.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GoosePdu {
    pub appid: u16,
    pub reserved1: u16,
    pub reserved2: u16,
    pub apdu: GooseApdu,
}

impl GoosePdu {
    pub fn has_security_bit(&self) -> bool {
        self.reserved1 & SECURITY_BIT != 0
    }

    pub fn set_security_bit(&mut self, on: bool) {
        if on {
            self.reserved1 |= SECURITY_BIT;
        } else {
            self.reserved1 &= !SECURITY_BIT;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GooseFrame {
    pub eth: EthernetHeader,
    pub pdu: GoosePdu,
    /// Opaque security extension bytes; present iff the Reserved1 security bit is set.
    pub extension: Option<Vec<u8>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{field} is {len} octets, limit is {MAX_VISIBLE_STRING}")]
    StringTooLong { field: &'static str, len: usize },
    #[error("timeAllowedToLive must be positive")]
    ZeroTimeAllowedToLive,
    #[error("timestamp {0} ms does not fit a UtcTime")]
    TimestampOutOfRange(u64),
    #[error("destination {0} is not a multicast address")]
    NotMulticast(MacAddress),
    #[error("VLAN priority {priority} or id {vid} out of range")]
    VlanOutOfRange { priority: u8, vid: u16 },
    #[error("Reserved1 security bit does not match extension presence")]
    SecurityBitMismatch,
    #[error("security extension is empty")]
    EmptyExtension,
    #[error("PDU of {0} octets exceeds the Length field")]
    PduTooLong(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated frame: need {needed} octets, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("ethertype {ethertype:#06x} is not GOOSE")]
    NotGoose { ethertype: u16 },
    #[error("malformed GOOSE frame: {0}")]
    Malformed(&'static str),
}

/// Byte ranges of a decoded frame inside the original buffer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameSpans {
    /// APPID through the end of the APDU: the region covered by the MAC.
    pub pdu: Range<usize>,
    pub extension: Option<Range<usize>>,
}

pub fn encode_frame(frame: &GooseFrame) -> Result<Vec<u8>, EncodeError> {
    match &frame.extension {
        Some(ext) if ext.is_empty() => return Err(EncodeError::EmptyExtension),
        ext if ext.is_some() != frame.pdu.has_security_bit() => {
            return Err(EncodeError::SecurityBitMismatch)
        }
        _ => {}
    }
    let eth = &frame.eth;
    if !eth.dst.is_multicast() {
        return Err(EncodeError::NotMulticast(eth.dst));
    }

    let mut out = Vec::with_capacity(160);
    out.extend_from_slice(&eth.dst.0);
    out.extend_from_slice(&eth.src.0);
    if let Some(VlanTag { priority, vid }) = eth.vlan {
        if priority > 7 || vid > 0x0FFF {
            return Err(EncodeError::VlanOutOfRange { priority, vid });
        }
        out.extend_from_slice(&TPID_8021Q.to_be_bytes());
        out.extend_from_slice(&(((priority as u16) << 13) | vid).to_be_bytes());
    }
    out.extend_from_slice(&ETHERTYPE_GOOSE.to_be_bytes());
    encode_pdu_into(&frame.pdu, &mut out)?;
    if let Some(ext) = &frame.extension {
        out.extend_from_slice(ext);
    }
    Ok(out)
}

/// Encodes just the PDU (APPID through the APDU), as covered by the MAC.
pub fn encode_pdu(pdu: &GoosePdu) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(140);
    encode_pdu_into(pdu, &mut out)?;
    Ok(out)
}

fn encode_pdu_into(pdu: &GoosePdu, out: &mut Vec<u8>) -> Result<(), EncodeError> {
    let apdu = encode_apdu(&pdu.apdu)?;
    let length = PDU_HEADER_LEN + apdu.len();
    if length > u16::MAX as usize {
        return Err(EncodeError::PduTooLong(length));
    }
    out.extend_from_slice(&pdu.appid.to_be_bytes());
    out.extend_from_slice(&(length as u16).to_be_bytes());
    out.extend_from_slice(&pdu.reserved1.to_be_bytes());
    out.extend_from_slice(&pdu.reserved2.to_be_bytes());
    out.extend_from_slice(&apdu);
    Ok(())
}

fn put_visible_string(
    out: &mut Vec<u8>,
    tag: u8,
    field: &'static str,
    s: &str,
) -> Result<(), EncodeError> {
    if s.len() > MAX_VISIBLE_STRING {
        return Err(EncodeError::StringTooLong { field, len: s.len() });
    }
    ber::put_tlv(out, tag, s.as_bytes());
    Ok(())
}

fn encode_utc_time(epoch_ms: u64) -> Result<[u8; 8], EncodeError> {
    let secs = u32::try_from(epoch_ms / 1_000)
        .map_err(|_| EncodeError::TimestampOutOfRange(epoch_ms))?;
    let fraction = ((epoch_ms % 1_000) << 24) / 1_000;
    let mut out = [0u8; 8];
    out[..4].copy_from_slice(&secs.to_be_bytes());
    out[4..7].copy_from_slice(&(fraction as u32).to_be_bytes()[1..]);
    out[7] = UTC_TIME_QUALITY;
    Ok(out)
}

fn decode_utc_time(value: &[u8]) -> Result<u64, DecodeError> {
    let value: &[u8; 8] = value
        .try_into()
        .map_err(|_| DecodeError::Malformed("UtcTime must be 8 octets"))?;
    let secs = u32::from_be_bytes([value[0], value[1], value[2], value[3]]) as u64;
    let fraction = u32::from_be_bytes([0, value[4], value[5], value[6]]) as u64;
    // Round to the nearest millisecond; the encoder's 24-bit fraction is
    // far finer than 1 ms so this recovers the encoded value exactly.
    let ms = (fraction * 1_000 + (1 << 23)) >> 24;
    Ok(secs * 1_000 + ms)
}

fn encode_apdu(apdu: &GooseApdu) -> Result<Vec<u8>, EncodeError> {
    if apdu.time_allowed_to_live == 0 {
        return Err(EncodeError::ZeroTimeAllowedToLive);
    }
    let mut body = Vec::with_capacity(128);
    put_visible_string(&mut body, TAG_GOCB_REF, "gocbRef", &apdu.gocb_ref)?;
    ber::put_uint(&mut body, TAG_TIME_ALLOWED_TO_LIVE, apdu.time_allowed_to_live as u64);
    put_visible_string(&mut body, TAG_DAT_SET, "datSet", &apdu.dat_set)?;
    put_visible_string(&mut body, TAG_GO_ID, "goID", &apdu.go_id)?;
    ber::put_tlv(&mut body, TAG_T, &encode_utc_time(apdu.t)?);
    ber::put_uint(&mut body, TAG_ST_NUM, apdu.st_num as u64);
    ber::put_uint(&mut body, TAG_SQ_NUM, apdu.sq_num as u64);
    ber::put_bool(&mut body, TAG_TEST, apdu.test);
    ber::put_uint(&mut body, TAG_CONF_REV, apdu.conf_rev as u64);
    ber::put_bool(&mut body, TAG_NDS_COM, apdu.nds_com);
    ber::put_uint(&mut body, TAG_NUM_DAT_SET_ENTRIES, apdu.all_data.len() as u64);
    let mut data = Vec::with_capacity(apdu.all_data.len() * 3);
    for &value in &apdu.all_data {
        ber::put_bool(&mut data, TAG_DATA_BOOLEAN, value);
    }
    ber::put_tlv(&mut body, TAG_ALL_DATA, &data);

    // Worst case the outer length needs 0x82 + two octets.
    if body.len() > u16::MAX as usize {
        return Err(EncodeError::PduTooLong(body.len()));
    }
    let mut out = Vec::with_capacity(body.len() + 4);
    ber::put_tlv(&mut out, TAG_GOOSE_PDU, &body);
    Ok(out)
}

struct FrameReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> FrameReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos + n;
        let out = self.buf.get(self.pos..end).ok_or(DecodeError::Truncated {
            needed: end,
            available: self.buf.len(),
        })?;
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn mac(&mut self) -> Result<MacAddress, DecodeError> {
        let mut octets = [0u8; 6];
        octets.copy_from_slice(self.take(6)?);
        Ok(MacAddress(octets))
    }
}

pub fn decode_frame(bytes: &[u8]) -> Result<GooseFrame, DecodeError> {
    decode_frame_with_spans(bytes).map(|(frame, _)| frame)
}

/// Decodes a frame and also reports where its PDU and extension sit in `bytes`.
pub fn decode_frame_with_spans(bytes: &[u8]) -> Result<(GooseFrame, FrameSpans), DecodeError> {
    let mut r = FrameReader { buf: bytes, pos: 0 };
    let dst = r.mac()?;
    let src = r.mac()?;
    let mut ethertype = r.u16()?;
    let mut vlan = None;
    if ethertype == TPID_8021Q {
        let tci = r.u16()?;
        vlan = Some(VlanTag { priority: (tci >> 13) as u8, vid: tci & 0x0FFF });
        ethertype = r.u16()?;
    }
    if ethertype != ETHERTYPE_GOOSE {
        return Err(DecodeError::NotGoose { ethertype });
    }
    if !dst.is_multicast() {
        return Err(DecodeError::Malformed("destination is not multicast"));
    }

    let pdu_start = r.pos;
    let appid = r.u16()?;
    let length = r.u16()? as usize;
    let reserved1 = r.u16()?;
    let reserved2 = r.u16()?;
    if length < PDU_HEADER_LEN {
        return Err(DecodeError::Malformed("Length field smaller than the PDU header"));
    }
    let apdu_bytes = r.take(length - PDU_HEADER_LEN)?;
    let pdu_end = r.pos;
    let apdu = decode_apdu(apdu_bytes)?;

    let trailing = &bytes[pdu_end..];
    let security = reserved1 & SECURITY_BIT != 0;
    let (extension, ext_span) = if security {
        if trailing.is_empty() {
            return Err(DecodeError::Malformed("security bit set but no extension present"));
        }
        (Some(trailing.to_vec()), Some(pdu_end..bytes.len()))
    } else {
        // Zero octets after the PDU are Ethernet padding.
        if trailing.iter().any(|&b| b != 0) {
            return Err(DecodeError::Malformed("trailing octets without security bit"));
        }
        (None, None)
    };

    let frame = GooseFrame {
        eth: EthernetHeader { dst, src, vlan },
        pdu: GoosePdu { appid, reserved1, reserved2, apdu },
        extension,
    };
    Ok((frame, FrameSpans { pdu: pdu_start..pdu_end, extension: ext_span }))
}

fn decode_apdu(bytes: &[u8]) -> Result<GooseApdu, DecodeError> {
    use DecodeError::Malformed;

    let mut outer = ber::BerReader::new(bytes);
    let body = outer.expect(TAG_GOOSE_PDU, "APDU must start with the goosePdu tag").map_err(Malformed)?;
    if !outer.is_empty() {
        return Err(Malformed("octets after the APDU inside the Length field"));
    }

    let mut r = ber::BerReader::new(body);
    let string = |r: &mut ber::BerReader<'_>, tag, what| -> Result<String, DecodeError> {
        let value = r.expect(tag, what).map_err(Malformed)?;
        if value.len() > MAX_VISIBLE_STRING {
            return Err(Malformed("VisibleString longer than 129 octets"));
        }
        String::from_utf8(value.to_vec()).map_err(|_| Malformed("string is not valid text"))
    };
    let uint32 = |r: &mut ber::BerReader<'_>, tag, what| -> Result<u32, DecodeError> {
        let value = r.expect(tag, what).map_err(Malformed)?;
        ber::parse_uint(value, 4).map(|v| v as u32).map_err(Malformed)
    };
    let boolean = |r: &mut ber::BerReader<'_>, tag, what| -> Result<bool, DecodeError> {
        let value = r.expect(tag, what).map_err(Malformed)?;
        ber::parse_bool(value).map_err(Malformed)
    };

    let gocb_ref = string(&mut r, TAG_GOCB_REF, "expected gocbRef")?;
    let time_allowed_to_live = uint32(&mut r, TAG_TIME_ALLOWED_TO_LIVE, "expected timeAllowedToLive")?;
    if time_allowed_to_live == 0 {
        return Err(Malformed("timeAllowedToLive is zero"));
    }
    let dat_set = string(&mut r, TAG_DAT_SET, "expected datSet")?;
    let go_id = string(&mut r, TAG_GO_ID, "expected goID")?;
    let t = decode_utc_time(r.expect(TAG_T, "expected t").map_err(Malformed)?)?;
    let st_num = uint32(&mut r, TAG_ST_NUM, "expected stNum")?;
    let sq_num = uint32(&mut r, TAG_SQ_NUM, "expected sqNum")?;
    let test = boolean(&mut r, TAG_TEST, "expected test")?;
    let conf_rev = uint32(&mut r, TAG_CONF_REV, "expected confRev")?;
    let nds_com = boolean(&mut r, TAG_NDS_COM, "expected ndsCom")?;
    let entries = uint32(&mut r, TAG_NUM_DAT_SET_ENTRIES, "expected numDatSetEntries")? as usize;
    let data = r.expect(TAG_ALL_DATA, "expected allData").map_err(Malformed)?;
    if !r.is_empty() {
        return Err(Malformed("unexpected field after allData"));
    }

    let mut all_data = Vec::with_capacity(entries.min(data.len() / 3));
    let mut dr = ber::BerReader::new(data);
    while !dr.is_empty() {
        all_data.push(boolean(&mut dr, TAG_DATA_BOOLEAN, "only boolean data set members are supported")?);
    }
    if all_data.len() != entries {
        return Err(Malformed("numDatSetEntries does not match allData"));
    }

    Ok(GooseApdu {
        gocb_ref,
        time_allowed_to_live,
        dat_set,
        go_id,
        t,
        st_num,
        sq_num,
        test,
        conf_rev,
        nds_com,
        all_data,
    })
}
