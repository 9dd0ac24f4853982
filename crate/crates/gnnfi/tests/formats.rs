use proptest::prelude::*;

use gnnfi::checkpoint::{decode_checkpoint, encode_checkpoint, StoredModel};
use gnnfi::error_map::{parse_error_map, render_error_map};
use gnnfi::profile::{parse_profile, render_profile};
use gnnfi_core::inject::{generate_error_map, ShapeCensus};
use gnnfi_core::mitigation::{ClipRange, RangeProfile};
use gnnfi_core::model::{Arch, Hyper, ModelCheckpoint};

fn arch() -> impl Strategy<Value = Arch> {
    prop::sample::select(Arch::ALL.to_vec())
}

fn range() -> impl Strategy<Value = ClipRange> {
    (-1e6f32..1e6, 0f32..1e6).prop_map(|(lo, w)| ClipRange::new(lo, lo + w).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_round_trip(a in arch(), f in 1usize..30, c in 2usize..6, seed in any::<u64>(), name in "[a-z:=,0-9]{1,20}") {
        let ckpt = ModelCheckpoint::init(a, Hyper::standard(a, f, c), seed);
        let stored = StoredModel { dataset: name, ckpt };
        let back = decode_checkpoint(&encode_checkpoint(&stored).unwrap(), "x").unwrap();
        prop_assert_eq!(&back.dataset, &stored.dataset);
        prop_assert!(back.ckpt.bit_eq(&stored.ckpt));
    }

    #[test]
    fn truncated_checkpoints_are_rejected(a in arch(), cut in 0.0f64..1.0) {
        let stored = StoredModel { dataset: "cora".into(), ckpt: ModelCheckpoint::init(a, Hyper::standard(a, 5, 3), 1) };
        let bytes = encode_checkpoint(&stored).unwrap();
        let n = (bytes.len() as f64 * cut) as usize;
        prop_assert!(decode_checkpoint(&bytes[..n], "x").is_err());
    }

    #[test]
    fn error_maps_round_trip(lens in prop::collection::vec(1usize..50, 1..4), ber in 0.0f64..0.2, seed in any::<u64>()) {
        let census: ShapeCensus = lens.into_iter().enumerate().map(|(i, n)| (format!("conv{i}.weight"), n)).collect();
        let map = generate_error_map(&census, ber, seed).unwrap();
        let back = parse_error_map(&render_error_map(&map), &census, "m").unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn profiles_round_trip(w in proptest::option::of(range()), a in proptest::option::of(range())) {
        let p = RangeProfile { weights: w, activations: a };
        prop_assert_eq!(parse_profile(&render_profile(&p), "p").unwrap(), p);
    }
}
