//! Third-party dissection shared by the integration tests: etherparse for
//! Ethernet/802.1Q, der-parser for the BER APDU.

use der_parser::ber::{parse_ber, BerObject, BerObjectContent};
use der_parser::der::Class;
use etherparse::{LinkSlice, SlicedPacket, VlanSlice};
use gooseguard::codec::{GooseFrame, ETHERTYPE_GOOSE};

/// Children of a constructed BER object whose class der-parser does not
/// interpret, parsed one level down.
fn children<'a>(obj: &BerObject<'a>) -> Vec<BerObject<'a>> {
    let BerObjectContent::Unknown(any) = &obj.content else {
        panic!("expected an opaque constructed object, got {:?}", obj.content);
    };
    let mut rest = any.data;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let (r, child) = parse_ber(rest).expect("child TLV parses");
        out.push(child);
        rest = r;
    }
    out
}

fn raw<'a>(obj: &BerObject<'a>) -> &'a [u8] {
    match &obj.content {
        BerObjectContent::Unknown(any) => any.data,
        other => panic!("expected raw content, got {other:?}"),
    }
}

fn uint(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0, |acc, b| (acc << 8) | u64::from(*b))
}

/// Checks one captured packet field by field against the frame it came from.
pub fn dissect_and_compare(data: &[u8], frame: &GooseFrame) {
    let packet = SlicedPacket::from_ethernet(data).expect("etherparse accepts the frame");
    let Some(LinkSlice::Ethernet2(eth)) = &packet.link else { panic!("no Ethernet II header") };
    assert_eq!(eth.destination(), frame.eth.dst.0);
    assert_eq!(eth.source(), frame.eth.src.0);
    let payload = match (&packet.vlan, frame.eth.vlan) {
        (Some(VlanSlice::SingleVlan(v)), Some(tag)) => {
            assert_eq!(v.priority_code_point().value(), tag.priority);
            assert_eq!(v.vlan_identifier().value(), tag.vid);
            assert_eq!(v.ether_type().0, ETHERTYPE_GOOSE);
            v.payload_slice()
        }
        (None, None) => {
            assert_eq!(eth.ether_type().0, ETHERTYPE_GOOSE);
            eth.payload_slice()
        }
        (seen, expected) => panic!("VLAN layer mismatch: {seen:?} vs {expected:?}"),
    };

    let be16 = |i: usize| u16::from_be_bytes([payload[i], payload[i + 1]]);
    assert_eq!(be16(0), frame.pdu.appid);
    let length = usize::from(be16(2));
    assert_eq!(be16(4), frame.pdu.reserved1);
    assert_eq!(be16(6), frame.pdu.reserved2);
    let apdu_bytes = &payload[8..length];
    let trailer = &payload[length..];
    assert_eq!(trailer, frame.extension.as_deref().unwrap_or_default());

    let (rest, goose_pdu) = parse_ber(apdu_bytes).expect("der-parser accepts the APDU");
    assert!(rest.is_empty());
    assert_eq!(goose_pdu.header.class(), Class::Application);
    assert_eq!(goose_pdu.header.tag().0, 1);
    assert!(goose_pdu.header.is_constructed());

    let fields = children(&goose_pdu);
    let tags: Vec<u32> = fields.iter().map(|f| f.header.tag().0).collect();
    assert_eq!(tags, (0..=11).collect::<Vec<_>>());
    assert!(fields.iter().all(|f| f.header.class() == Class::ContextSpecific));
    let a = &frame.pdu.apdu;
    assert_eq!(raw(&fields[0]), a.gocb_ref.as_bytes());
    assert_eq!(uint(raw(&fields[1])), u64::from(a.time_allowed_to_live));
    assert_eq!(raw(&fields[2]), a.dat_set.as_bytes());
    assert_eq!(raw(&fields[3]), a.go_id.as_bytes());
    let t = raw(&fields[4]);
    assert_eq!(t.len(), 8);
    assert_eq!(uint(&t[..4]), a.t / 1_000);
    assert_eq!(uint(raw(&fields[5])), u64::from(a.st_num));
    assert_eq!(uint(raw(&fields[6])), u64::from(a.sq_num));
    assert_eq!(raw(&fields[7]), [u8::from(a.test)]);
    assert_eq!(uint(raw(&fields[8])), u64::from(a.conf_rev));
    assert_eq!(raw(&fields[9]), [u8::from(a.nds_com)]);
    assert_eq!(uint(raw(&fields[10])), a.all_data.len() as u64);
    // INTEGER content is minimal two's complement: a leading zero appears
    // only to keep a high bit from reading as a sign.
    for f in [&fields[1], &fields[5], &fields[6], &fields[8], &fields[10]] {
        let v = raw(f);
        assert!(v.len() == 1 || !(v[0] == 0 && v[1] & 0x80 == 0), "non-minimal INTEGER {v:02x?}");
    }
    assert!(fields[11].header.is_constructed());
    let data = children(&fields[11]);
    let values: Vec<bool> = data
        .iter()
        .map(|d| {
            assert_eq!(d.header.tag().0, 3);
            raw(d) != [0]
        })
        .collect();
    assert_eq!(values, a.all_data);
}
