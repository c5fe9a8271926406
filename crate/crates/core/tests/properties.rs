use proptest::prelude::*;

use cvqkd::rates::{secret_rates, ChannelModel, DetectorModel, Modulation};
use cvqkd::session::{Frame, HmacAuthenticator, MsgType, HEADER_LEN};

const TYPES: [MsgType; 8] = [
    MsgType::Hello,
    MsgType::BlockMeta,
    MsgType::SiftReveal,
    MsgType::EstimateReveal,
    MsgType::Syndromes,
    MsgType::PaSeeds,
    MsgType::KeyConfirm,
    MsgType::Abort,
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frames_roundtrip(t in 0usize..8, id in any::<u32>(), payload in prop::collection::vec(any::<u8>(), 0..512)) {
        let auth = HmacAuthenticator::new(b"k").unwrap();
        let frame = Frame::new(TYPES[t], id, payload);
        let bytes = frame.encode(&auth);
        prop_assert_eq!(Frame::read_from(&mut &bytes[..], &auth).unwrap(), Some(frame));
    }

    #[test]
    fn any_flipped_bit_is_rejected(payload in prop::collection::vec(any::<u8>(), 1..64), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let auth = HmacAuthenticator::new(b"k").unwrap();
        let mut bytes = Frame::new(MsgType::Syndromes, 3, payload).encode(&auth);
        // Keep the magic intact so the flip reaches authentication.
        let i = 4 + pos.index(bytes.len() - 4);
        bytes[i] ^= 1 << bit;
        prop_assert!(Frame::read_from(&mut &bytes[..], &auth).is_err());
    }

    #[test]
    fn wrong_key_is_rejected(payload in prop::collection::vec(any::<u8>(), 0..64)) {
        let bytes = Frame::new(MsgType::PaSeeds, 0, payload).encode(&HmacAuthenticator::new(b"a").unwrap());
        prop_assert!(bytes.len() >= HEADER_LEN);
        prop_assert!(Frame::read_from(&mut &bytes[..], &HmacAuthenticator::new(b"b").unwrap()).is_err());
    }

    #[test]
    fn rate_ordering(v in 1.5f64..40.0, t in 0.05f64..1.0, eps in 0.0f64..0.05, eta in 0.4f64..1.0, vel in 0.0f64..0.1, beta in 0.8f64..1.0) {
        let m = Modulation::new(v).unwrap();
        let ch = ChannelModel::new(t, eps).unwrap();
        let det = DetectorModel::new(eta, vel).unwrap();
        let r = secret_rates(&m, &ch, &det, 1.0, beta, 0.0).unwrap();
        prop_assert!(r.i_ab > 0.0 && r.i_be >= 0.0);
        prop_assert!(r.chi_be >= r.i_be - 1e-9, "chi {} < I_BE {}", r.chi_be, r.i_be);
        prop_assert!(r.delta_shannon_raw >= r.delta_holevo_raw - 1e-9);
        prop_assert!(r.delta_shannon_eff <= r.delta_shannon_raw);
    }

    #[test]
    fn mutual_information_grows_with_transmission(t in 0.05f64..0.95, dt in 0.01f64..0.05) {
        let m = Modulation::new(18.5).unwrap();
        let det = DetectorModel::new(0.606, 0.041).unwrap();
        let at = |t: f64| secret_rates(&m, &ChannelModel::new(t, 0.005).unwrap(), &det, 1.0, 1.0, 0.0).unwrap();
        prop_assert!(at(t + dt).i_ab > at(t).i_ab);
    }
}
