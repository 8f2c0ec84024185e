//! Cross-checks the codec against third-party parsers: pcap-file for the
//! capture container, etherparse for Ethernet/802.1Q, der-parser for the BER
//! APDU.

use std::io::Cursor;
use std::time::Duration;

use gooseguard::codec::{
    decode_frame, decode_frame_with_spans, encode_frame, frames_to_pcap, EthernetHeader, GooseApdu, GooseFrame,
    GoosePdu, MacAddress, VlanTag, SECURITY_BIT,
};
use gooseguard::time::SimTime;
use pcap_file::pcap::PcapReader;
use pcap_file::DataLink;
use proptest::prelude::*;

mod common;
use common::dissect_and_compare;

fn sample(vlan: Option<VlanTag>, extension: Option<Vec<u8>>) -> GooseFrame {
    GooseFrame {
        eth: EthernetHeader {
            dst: MacAddress([0x01, 0x0C, 0xCD, 0x01, 0x00, 0x10]),
            src: MacAddress([0xDC, 0x37, 0x52, 0x0A, 0xCF, 0xC2]),
            vlan,
        },
        pdu: GoosePdu {
            appid: 0x3001,
            reserved1: if extension.is_some() { SECURITY_BIT } else { 0 },
            reserved2: 0x1234,
            apdu: GooseApdu {
                gocb_ref: "PCIED1LD0/LLN0$GO$gcbTrip".into(),
                time_allowed_to_live: 2_000,
                dat_set: "PCIED1LD0/LLN0$DSTrip".into(),
                go_id: "PCIED1_TRIP".into(),
                t: 1_700_000_123_456,
                st_num: 70_000,
                sq_num: 129,
                test: false,
                conf_rev: 3,
                nds_com: true,
                all_data: vec![true, false, true],
            },
        },
        extension,
    }
}

#[test]
fn pcap_opens_in_third_party_reader_with_matching_fields() {
    let frames = vec![
        (SimTime::from_micros(0), sample(Some(VlanTag { priority: 4, vid: 0 }), None)),
        (SimTime::from_micros(2_000), sample(None, None)),
        (SimTime::from_micros(1_234_567), sample(Some(VlanTag { priority: 7, vid: 4095 }), Some(vec![0xAB; 32]))),
    ];
    let pcap = frames_to_pcap(&frames).unwrap();
    let mut reader = PcapReader::new(Cursor::new(pcap)).expect("valid pcap header");
    assert_eq!(reader.header().datalink, DataLink::ETHERNET);
    let mut n = 0;
    while let Some(pkt) = reader.next_packet() {
        let pkt = pkt.expect("valid record");
        let (at, frame) = &frames[n];
        assert_eq!(pkt.timestamp, Duration::from_micros(at.as_micros()));
        assert_eq!(pkt.orig_len as usize, pkt.data.len());
        dissect_and_compare(&pkt.data, frame);
        assert_eq!(&decode_frame(&pkt.data).unwrap(), frame);
        n += 1;
    }
    assert_eq!(n, frames.len());
}

#[test]
fn spans_agree_with_the_length_field() {
    let frame = sample(Some(VlanTag { priority: 4, vid: 0 }), Some(vec![7; 32]));
    let bytes = encode_frame(&frame).unwrap();
    let (_, spans) = decode_frame_with_spans(&bytes).unwrap();
    let length = u16::from_be_bytes([bytes[spans.pdu.start + 2], bytes[spans.pdu.start + 3]]);
    assert_eq!(spans.pdu.len(), usize::from(length));
    assert_eq!(spans.extension, Some(spans.pdu.end..bytes.len()));
}

/// Octets of the UtcTime value in an encoded frame, found by walking the
/// TLVs that precede it.
fn utc_time_range(bytes: &[u8]) -> std::ops::Range<usize> {
    let mut i = if bytes[12..14] == [0x81, 0x00] { 18 } else { 14 } + 8;
    let skip_header = |i: &mut usize| -> usize {
        *i += 1;
        let first = bytes[*i];
        *i += 1;
        if first < 0x80 {
            return usize::from(first);
        }
        let n = usize::from(first & 0x7F);
        let len = bytes[*i..*i + n].iter().fold(0, |acc, b| (acc << 8) | usize::from(*b));
        *i += n;
        len
    };
    skip_header(&mut i);
    for _ in 0..4 {
        let len = skip_header(&mut i);
        i += len;
    }
    let len = skip_header(&mut i);
    i..i + len
}

fn printable(max: usize) -> impl Strategy<Value = String> {
    proptest::string::string_regex(&format!("[ -~]{{0,{max}}}")).unwrap()
}

fn arb_apdu() -> impl Strategy<Value = GooseApdu> {
    (
        (printable(129), 1..=u32::MAX, printable(129), printable(129)),
        (0..=u64::from(u32::MAX) * 1_000 + 999, any::<u32>(), any::<u32>()),
        (any::<bool>(), any::<u32>(), any::<bool>(), proptest::collection::vec(any::<bool>(), 0..48)),
    )
        .prop_map(|((gocb_ref, ttl, dat_set, go_id), (t, st_num, sq_num), (test, conf_rev, nds_com, all_data))| {
            GooseApdu {
                gocb_ref,
                time_allowed_to_live: ttl,
                dat_set,
                go_id,
                t,
                st_num,
                sq_num,
                test,
                conf_rev,
                nds_com,
                all_data,
            }
        })
}

fn arb_frame() -> impl Strategy<Value = GooseFrame> {
    (
        any::<[u8; 6]>(),
        any::<[u8; 6]>(),
        proptest::option::of((0u8..8, 0u16..4096)),
        (any::<u16>(), 0u16..0x8000, any::<u16>()),
        proptest::option::of(proptest::collection::vec(any::<u8>(), 1..64)),
        arb_apdu(),
    )
        .prop_map(|(mut dst, src, vlan, (appid, reserved1, reserved2), extension, apdu)| {
            dst[0] |= 1;
            let reserved1 = if extension.is_some() { reserved1 | SECURITY_BIT } else { reserved1 };
            GooseFrame {
                eth: EthernetHeader {
                    dst: MacAddress(dst),
                    src: MacAddress(src),
                    vlan: vlan.map(|(priority, vid)| VlanTag { priority, vid }),
                },
                pdu: GoosePdu { appid, reserved1, reserved2, apdu },
                extension,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn decode_inverts_encode(frame in arb_frame()) {
        let bytes = encode_frame(&frame).unwrap();
        prop_assert_eq!(decode_frame(&bytes).unwrap(), frame);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn random_frames_dissect_identically(frame in arb_frame()) {
        let bytes = encode_frame(&frame).unwrap();
        dissect_and_compare(&bytes, &frame);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(5_000))]

    #[test]
    fn decoder_is_total_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = decode_frame(&bytes);
    }

    /// Corrupted frames either fail to decode or decode to something that
    /// re-encodes to the same octets. Two things are not modelled: UtcTime
    /// below millisecond resolution and the 802.1Q drop-eligible bit.
    #[test]
    fn accepted_input_is_canonical(
        frame in arb_frame(),
        edits in proptest::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..4),
        cut in proptest::option::of(any::<prop::sample::Index>()),
    ) {
        let mut bytes = encode_frame(&frame).unwrap();
        for (at, value) in edits {
            let i = at.index(bytes.len());
            bytes[i] = value;
        }
        if let Some(c) = cut {
            bytes.truncate(c.index(bytes.len()));
        }
        if let Ok(decoded) = decode_frame(&bytes) {
            let again = encode_frame(&decoded).unwrap();
            prop_assert_eq!(again.len(), bytes.len());
            let t = utc_time_range(&again);
            for (i, (a, b)) in again.iter().zip(&bytes).enumerate() {
                let dei = decoded.eth.vlan.is_some() && i == 14 && a ^ b == 0x10;
                prop_assert!(a == b || dei || t.contains(&i), "octet {} differs", i);
            }
            prop_assert_eq!(decode_frame(&again).unwrap(), decoded);
        }
    }
}
