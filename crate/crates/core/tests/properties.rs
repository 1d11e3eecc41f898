use std::sync::{Arc, OnceLock};

use dhsa::codec::{self, AggregateVector, QuantParams};
use dhsa::protocol::{Message, MessageKind, PartyRef, Payload, SessionConfig, SessionContext};
use dhsa::ring::{RingElement, RingParams};
use dhsa::shprg::{add_seeds, Seed, Setting, Shprg, ShprgParams};
use proptest::prelude::*;

fn ring8() -> Arc<RingParams> {
    static P: OnceLock<Arc<RingParams>> = OnceLock::new();
    P.get_or_init(|| {
        RingParams::new(8, &[dhsa::ring::DEFAULT_PRIME_0, dhsa::ring::DEFAULT_PRIME_1], 1 << 64).unwrap()
    })
    .clone()
}

fn shprg_a() -> &'static Shprg {
    static S: OnceLock<Shprg> = OnceLock::new();
    S.get_or_init(|| Shprg::new(ShprgParams::preset(Setting::A, [3; 32])).unwrap().with_cached_prefix(64))
}

fn elem() -> impl Strategy<Value = RingElement> {
    let q = ring8().modulus();
    prop::collection::vec(0..q, 8).prop_map(|c| RingElement::from_u128(&ring8(), &c))
}

fn seed_a() -> impl Strategy<Value = Seed> {
    let params = shprg_a().params().clone();
    prop::collection::vec(0..params.q(), params.mu).prop_map(move |e| Seed::new(e, &params).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ring_add_commutes_and_neg_inverts(a in elem(), b in elem()) {
        prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        prop_assert_eq!(a.add(&a.neg()).unwrap(), RingElement::zero(&ring8()));
        prop_assert_eq!(a.sub(&b).unwrap().add(&b).unwrap(), a.clone());
    }

    #[test]
    fn ring_mul_distributes(a in elem(), b in elem(), c in elem()) {
        let lhs = a.mul(&b.add(&c).unwrap()).unwrap();
        let rhs = a.mul(&b).unwrap().add(&a.mul(&c).unwrap()).unwrap();
        prop_assert_eq!(lhs, rhs);
    }

    #[test]
    fn ring_serialization_roundtrips(a in elem(), ntt in any::<bool>()) {
        let a = if ntt { a.to_ntt() } else { a };
        let bytes = a.to_bytes();
        prop_assert_eq!(bytes.len(), a.serialized_len());
        prop_assert_eq!(RingElement::from_bytes(&ring8(), &bytes).unwrap(), a);
    }

    #[test]
    fn shprg_pair_error_in_minus_one_zero(s1 in seed_a(), s2 in seed_a()) {
        let g = shprg_a();
        let p = g.params().p();
        let sum = add_seeds(&[s1.clone(), s2.clone()], g.params()).unwrap();
        let out = g.expand_many(&[&s1, &s2, &sum], 64).unwrap();
        for j in 0..64 {
            let lhs = (out[0].values[j] + out[1].values[j]) % p;
            let d = dhsa::shprg::centered_diff(lhs, out[2].values[j], p);
            prop_assert!(d == 0 || d == -1, "entry {} error {}", j, d);
        }
    }

    #[test]
    fn quantization_error_below_one_step(v in prop::collection::vec(-1.0f64..1.0, 1..200), n in 1usize..50) {
        let qp = QuantParams { w: 16, m_min: -1.0, m_max: 1.0, n_parties: n, log_p: 24 };
        let x = codec::quantize(&v, &qp).unwrap();
        prop_assert_eq!(x.clipped, 0);
        let single = QuantParams { n_parties: 1, ..qp };
        let agg = AggregateVector { values: x.values.iter().map(|&v| v as i64).collect() };
        let back = codec::dequantize(&agg, &single).unwrap();
        for (a, b) in v.iter().zip(&back) {
            prop_assert!(a - b >= 0.0 && a - b < qp.step());
        }
    }

    #[test]
    fn masking_then_unmasking_recovers_sum(
        xs in prop::collection::vec(prop::collection::vec(0u32..(1 << 16), 16), 1..8),
        gs in prop::collection::vec(prop::collection::vec(0u64..(1 << 24), 16), 8),
    ) {
        let n = xs.len();
        let qp = QuantParams { w: 16, m_min: -1.0, m_max: 1.0, n_parties: n, log_p: 24 };
        let p = qp.p();
        let mut uploads = Vec::new();
        let mut g0 = vec![0u64; 16];
        for (x, g) in xs.iter().zip(&gs) {
            let x = codec::QuantizedVector { values: x.clone(), clipped: 0 };
            let g = dhsa::shprg::MaskStream { values: g.clone() };
            uploads.push(codec::mask(&x, &g, p).unwrap());
            for (a, b) in g0.iter_mut().zip(&g.values) {
                *a = (*a + b) % p;
            }
        }
        let y0 = codec::aggregate_masked(&uploads, p).unwrap();
        let agg = codec::unmask(&y0, &dhsa::shprg::MaskStream { values: g0 }, &qp).unwrap();
        for j in 0..16 {
            prop_assert_eq!(agg.values[j], xs.iter().map(|x| x[j] as i64).sum::<i64>());
        }
    }

    #[test]
    fn masked_wire_roundtrips(v in prop::collection::vec(0u64..(1 << 20), 0..300), log_p in 20u32..=24) {
        let mv = codec::MaskedVector { values: v.clone() };
        let bytes = codec::encode_masked(&mv, log_p);
        prop_assert_eq!(bytes.len(), codec::masked_wire_len(v.len(), log_p));
        prop_assert_eq!(codec::decode_masked(&bytes, v.len(), log_p).unwrap(), mv);
    }

    #[test]
    fn seed_packing_roundtrips(tau in 1usize..12, fill in any::<u64>()) {
        let params = ShprgParams::preset(Setting::A, [5; 32]);
        let seeds: Vec<Seed> = (0..tau)
            .map(|t| {
                let e = (0..params.mu).map(|j| ((fill ^ (t * 7919 + j) as u64) as u128) & (params.q() - 1)).collect();
                Seed::new(e, &params).unwrap()
            })
            .collect();
        let arrays = codec::pack_seeds(&seeds, 4096).unwrap();
        prop_assert_eq!(arrays.len(), (params.mu * tau).div_ceil(4096));
        prop_assert_eq!(codec::unpack_seeds(&arrays, &params, tau).unwrap(), seeds);
    }
}

fn ctx() -> Arc<SessionContext> {
    static C: OnceLock<Arc<SessionContext>> = OnceLock::new();
    C.get_or_init(|| {
        SessionContext::new(SessionConfig { n_clients: 4, model_size: 33, ..Default::default() }).unwrap()
    })
    .clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn masked_messages_roundtrip(values in prop::collection::vec(0u64..(1 << 24), 33), sender in 0u32..4, run in any::<u32>(), epoch in any::<u32>(), up in any::<bool>()) {
        let ctx = ctx();
        let v = codec::MaskedVector { values };
        let (payload, sender) = if up {
            (Payload::MaskedUpload(v), PartyRef::Client(sender))
        } else {
            (Payload::MaskedAggBroadcast(v), PartyRef::Server)
        };
        let msg = Message { sender, run, epoch, payload };
        let bytes = msg.encode(&ctx);
        prop_assert_eq!(bytes.len(), 16 + codec::masked_wire_len(33, 24));
        prop_assert_eq!(&Message::decode(&bytes, &ctx).unwrap(), &msg);
        let mut bad = bytes.clone();
        bad.push(0);
        prop_assert!(Message::decode(&bad, &ctx).is_err());
        prop_assert!(Message::decode(&bytes[..bytes.len() - 1], &ctx).is_err());
    }

    #[test]
    fn unknown_tags_are_rejected(tag in 10u32..u32::MAX) {
        let mut bytes = tag.to_le_bytes().to_vec();
        bytes.extend_from_slice(&[0; 12]);
        prop_assert!(Message::decode(&bytes, &ctx()).is_err());
        prop_assert!(MessageKind::from_tag(tag).is_err());
    }
}
