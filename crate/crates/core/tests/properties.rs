use proptest::prelude::*;

use gnnfi_core::bits::{classify, ValueClass};
use gnnfi_core::graph::Graph;
use gnnfi_core::inject::{census_errors, generate_error_map, ShapeCensus};
use gnnfi_core::mitigation::{clip_value, mask_repair, topo_filter, MaskMode};
use gnnfi_core::tensor::Matrix;

fn census() -> impl Strategy<Value = ShapeCensus> {
    prop::collection::vec(0usize..40, 1..4)
        .prop_map(|lens| lens.into_iter().enumerate().map(|(i, n)| (format!("t{i}"), n)).collect())
}

fn graph(n: usize) -> impl Strategy<Value = Graph> {
    prop::collection::vec((0..n, 0..n), 0..3 * n).prop_map(move |pairs| {
        let edges: Vec<(usize, usize)> = pairs.into_iter().filter(|(u, v)| u != v).collect();
        Graph::from_edges(n, edges).unwrap()
    })
}

fn value() -> impl Strategy<Value = f32> {
    prop_oneof![
        8 => -10f32..10.0,
        1 => Just(f32::NAN),
        1 => Just(f32::INFINITY),
        1 => Just(f32::NEG_INFINITY),
        1 => any::<u32>().prop_map(f32::from_bits),
    ]
}

proptest! {
    #[test]
    fn error_maps_are_sorted_unique_and_in_range(c in census(), ber in 0.0f64..0.3, seed in any::<u64>()) {
        let map = generate_error_map(&c, ber, seed).unwrap();
        let sites = map.sites();
        prop_assert!(sites.windows(2).all(|w| w[0] < w[1]));
        for s in sites {
            prop_assert!(s.element < c[s.tensor].1 && s.bit < 32);
        }
        let again = generate_error_map(&c, ber, seed).unwrap();
        prop_assert_eq!(again.sites(), sites);
    }

    #[test]
    fn extreme_rates(c in census(), seed in any::<u64>()) {
        let total: usize = c.iter().map(|(_, n)| n * 32).sum();
        prop_assert!(generate_error_map(&c, 0.0, seed).unwrap().is_empty());
        prop_assert_eq!(generate_error_map(&c, 1.0, seed).unwrap().len(), total);
    }

    #[test]
    fn census_partitions_changed_elements(before in prop::collection::vec(any::<u32>(), 0..50), masks in prop::collection::vec(any::<u32>(), 50)) {
        let a: Vec<f32> = before.iter().map(|&w| f32::from_bits(w)).collect();
        let b: Vec<f32> = before.iter().zip(&masks).map(|(&w, &m)| f32::from_bits(w ^ m)).collect();
        let c = census_errors(&a, &b).unwrap();
        let changed = before.iter().zip(&masks).filter(|(_, &m)| m != 0).count() as u64;
        prop_assert_eq!(c.changed(), changed);
        prop_assert_eq!(c.transitions.iter().flatten().sum::<u64>(), changed);
        let nan = b.iter().zip(&masks).filter(|(v, &m)| m != 0 && v.is_nan()).count() as u64;
        prop_assert_eq!(c.nan_producing, nan);
        prop_assert_eq!(c.transitions.iter().map(|r| r[ValueClass::NaN.index()]).sum::<u64>(), nan);
    }

    #[test]
    fn topo_filter_stays_within_neighbor_envelope(g in graph(12), vals in prop::collection::vec(value(), 12 * 2)) {
        let m = Matrix::new(12, 2, vals).unwrap();
        let out = topo_filter(&m, &g).unwrap();
        for v in 0..12 {
            let nb: Vec<usize> = g.neighbors(v).iter().copied().filter(|&u| u != v).collect();
            for i in 0..2 {
                let (x, y) = (m.get(v, i), out.get(v, i));
                if nb.len() <= 1 {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                    continue;
                }
                prop_assert!(!y.is_nan());
                let finite: Vec<f32> = nb.iter().map(|&u| m.get(u, i)).filter(|x| !x.is_nan()).collect();
                if let (Some(lo), Some(hi)) = (
                    finite.iter().cloned().reduce(f32::min),
                    finite.iter().cloned().reduce(f32::max),
                ) {
                    prop_assert!(lo <= y && y <= hi, "{y} outside [{lo}, {hi}]");
                }
            }
        }
    }

    #[test]
    fn clip_is_idempotent(x in value(), lo in -5f32..5.0, w in 0f32..5.0) {
        let once = clip_value(x, lo + w, lo).unwrap();
        prop_assert_eq!(clip_value(once, lo + w, lo).unwrap().to_bits(), once.to_bits());
        prop_assert!(!once.is_nan());
    }

    #[test]
    fn masks_clear_detected_bits(words in prop::collection::vec(any::<u32>(), 1..20), picks in prop::collection::vec((any::<prop::sample::Index>(), 0u8..32), 0..20)) {
        let vals: Vec<f32> = words.iter().map(|&w| f32::from_bits(w)).collect();
        let sites: Vec<(usize, u8)> = picks.iter().map(|(i, b)| (i.index(vals.len()), *b)).collect();
        let bit = mask_repair(&vals, sites.iter().copied(), MaskMode::Bit).unwrap();
        let word = mask_repair(&vals, sites.iter().copied(), MaskMode::Word).unwrap();
        for (e, b) in &sites {
            prop_assert_eq!(bit[*e].to_bits() >> b & 1, 0);
            prop_assert_eq!(word[*e].to_bits(), 0);
        }
        for e in (0..vals.len()).filter(|e| sites.iter().all(|s| s.0 != *e)) {
            prop_assert_eq!(bit[e].to_bits(), words[e]);
            prop_assert_eq!(word[e].to_bits(), words[e]);
            prop_assert_eq!(classify(bit[e]), classify(vals[e]));
        }
    }
}
