use std::collections::HashSet;

use gooseguard::codec::{encode_pdu, EthernetHeader, GooseApdu, GooseFrame, GoosePdu, MacAddress};
use gooseguard::pipeline::ReceivedFrame;
use gooseguard::secure_ext::{verify, verify_bytes, AuthVerdict, KeyId, KeyStore, SecurityExtension, SenderId, Signer};
use proptest::prelude::*;

fn keystore() -> KeyStore {
    let mut ks = KeyStore::new();
    ks.insert(KeyId(1), *b"0123456789abcdef").unwrap();
    ks.insert(KeyId(2), *b"fedcba9876543210").unwrap();
    ks.set_active(SenderId(0xDC37_520A), KeyId(1));
    ks
}

fn pdu(st_num: u32, sq_num: u32, all_data: Vec<bool>) -> GoosePdu {
    GoosePdu {
        appid: 1,
        reserved1: 0x8000,
        reserved2: 0,
        apdu: GooseApdu {
            gocb_ref: "PCIED1LD0/LLN0$GO$gcbTrip".into(),
            time_allowed_to_live: 2_000,
            dat_set: "PCIED1LD0/LLN0$DSTrip".into(),
            go_id: "PCIED1_TRIP".into(),
            t: 1_700_000_000_000,
            st_num,
            sq_num,
            test: false,
            conf_rev: 1,
            nds_com: false,
            all_data,
        },
    }
}

#[test]
fn ivs_never_repeat_over_a_million_signatures() {
    let ks = keystore();
    let mut signer = Signer::new(SenderId(0xDC37_520A));
    let bytes = encode_pdu(&pdu(1, 0, vec![true])).unwrap();
    let mut seen = HashSet::with_capacity(1_000_000);
    let mut tags = HashSet::new();
    for i in 0..1_000_000u32 {
        let ext = signer.sign_bytes(&bytes, &ks).unwrap();
        assert_eq!(&ext.iv[..4], &0xDC37_520Au32.to_be_bytes());
        assert!(seen.insert(ext.iv), "IV repeated at signature {i}");
        if i < 1_000 {
            // identical payloads still get distinct tags
            assert!(tags.insert(ext.tag));
        }
    }
}

#[test]
fn signed_frame_survives_the_wire() {
    let ks = keystore();
    let mut frame = GooseFrame {
        eth: EthernetHeader {
            dst: MacAddress([0x01, 0x0C, 0xCD, 0x01, 0x00, 0x10]),
            src: MacAddress([0xDC, 0x37, 0x52, 0x0A, 0xCF, 0xC2]),
            vlan: None,
        },
        pdu: pdu(3, 7, vec![false, true]),
        extension: None,
    };
    let bytes = Signer::new(SenderId(0xDC37_520A)).sign_frame(&mut frame, &ks).unwrap();
    let rx = ReceivedFrame::decode(bytes).unwrap();
    let ext = SecurityExtension::from_bytes(rx.frame.extension.as_deref().unwrap()).unwrap();
    assert_eq!(ext.key_id, KeyId(1));
    assert_eq!(verify_bytes(rx.pdu_bytes(), &ext, &ks), AuthVerdict::Authentic);
    assert_eq!(verify(&rx.frame.pdu, &ext, &ks), AuthVerdict::Authentic);
}

#[test]
fn keystore_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("keys.txt");
    std::fs::write(&path, "# substation keys\n00000001 = 000102030405060708090a0b0c0d0e0f\n\n000000ff = ffeeddccbbaa99887766554433221100 # spare\n").unwrap();
    let ks = KeyStore::load(&path).unwrap();
    assert_eq!(ks.len(), 2);
    assert!(ks.contains(KeyId(0xff)));
    assert!(!format!("{ks:?}").contains("0001020304"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn verify_accepts_whatever_sign_produced(
        st in any::<u32>(),
        sq in any::<u32>(),
        data in proptest::collection::vec(any::<bool>(), 0..32),
        skip in 0u32..50,
    ) {
        let ks = keystore();
        let mut signer = Signer::new(SenderId(0xDC37_520A));
        let p = pdu(st, sq, data);
        for _ in 0..skip {
            signer.sign(&p, &ks).unwrap();
        }
        let ext = signer.sign(&p, &ks).unwrap();
        prop_assert_eq!(verify(&p, &ext, &ks), AuthVerdict::Authentic);
        let other = SecurityExtension { key_id: KeyId(2), ..ext };
        prop_assert_eq!(verify(&p, &other, &ks), AuthVerdict::Forged);
        let unknown = SecurityExtension { key_id: KeyId(3), ..ext };
        prop_assert_eq!(verify(&p, &unknown, &ks), AuthVerdict::UnknownKey);
    }
}
