use gnnfi_core::graph::Dataset;
use gnnfi_core::inject::{census_checkpoints, generate_error_map, inject_weights, ActivationInjector, FaultTarget};
use gnnfi_core::mitigation::{mask_weights, profile_ranges, MaskMode};
use gnnfi_core::model::layers::{gcn_layer, log_softmax_rows};
use gnnfi_core::model::{evaluate_accuracy, model_logits, Arch, Hyper, InterceptorRegistry, LayerSelector, ModelCheckpoint};
use gnnfi_core::synthetic::{synthetic_graph, SyntheticSpec};
use gnnfi_core::trial::{derive_seed, run_trial, run_trial_with_map, target_census, MitigationKind, MitigationPolicy, TrialContext};

fn dataset() -> Dataset {
    let (g, x, split) = synthetic_graph(SyntheticSpec {
        seed: 3,
        nodes: 120,
        avg_degree: 3.0,
        num_features: 20,
        num_classes: 3,
    })
    .unwrap();
    Dataset::new("toy", g, x, split).unwrap()
}

fn model(arch: Arch, ds: &Dataset) -> ModelCheckpoint {
    ModelCheckpoint::init(arch, Hyper::standard(arch, ds.num_features(), ds.num_classes()), 17)
}

#[test]
fn interceptor_injection_matches_manual_layers() {
    let ds = dataset();
    let ckpt = model(Arch::Gcn, &ds);
    let ctx = TrialContext::new(&ckpt, &ds).unwrap();
    let target: FaultTarget = "act:conv1".parse().unwrap();
    let map = generate_error_map(&target_census(&ctx, &target).unwrap(), 1e-3, 5).unwrap();
    assert!(!map.is_empty());

    let mut injector = ActivationInjector::new(&map, &target).unwrap();
    let mut reg = InterceptorRegistry::new();
    reg.register(LayerSelector::layer("conv1"), &mut injector);
    let got = model_logits(&ckpt, &ds.ops, &ds.features, &mut reg).unwrap();
    drop(reg);

    let mut hidden = gcn_layer(&ds.features, &ds.ops.adjacency, &ckpt.matrix("conv1.weight").unwrap(), true).unwrap();
    for site in map.sites() {
        let v = &mut hidden.data_mut()[site.element];
        *v = f32::from_bits(v.to_bits() ^ (1 << site.bit));
    }
    let mut want = gcn_layer(&hidden, &ds.ops.adjacency, &ckpt.matrix("conv2.weight").unwrap(), false).unwrap();
    log_softmax_rows(&mut want);
    assert!(got.bit_eq(&want));
    assert_eq!(injector.stats().applied, map.len() as u64);
}

#[test]
fn weight_trial_matches_materialized_checkpoint() {
    let ds = dataset();
    for arch in Arch::ALL {
        let ckpt = model(arch, &ds);
        let ctx = TrialContext::new(&ckpt, &ds).unwrap();
        let target = FaultTarget::ModelWise;
        let seed = derive_seed(1, arch.name(), "toy", "model", 1e-4, 0);
        let outcome = run_trial(&ctx, &target, &MitigationPolicy::None, 1e-4, seed).unwrap();

        let map = generate_error_map(&target_census(&ctx, &target).unwrap(), 1e-4, seed).unwrap();
        let (corrupt, stats) = inject_weights(&ckpt, &map, &target).unwrap();
        let logits = model_logits(&corrupt, &ds.ops, &ds.features, &mut InterceptorRegistry::new()).unwrap();
        let acc = evaluate_accuracy(&logits, &ds.split).unwrap();
        assert_eq!(outcome.accuracy.to_bits(), acc.to_bits(), "{arch}");
        assert_eq!(outcome.bits_flipped, stats.applied);
        assert_eq!(outcome.census, census_checkpoints(&ckpt, &corrupt).unwrap());

        // Replaying the same map gives the same row.
        let again = run_trial_with_map(&ctx, &target, &MitigationPolicy::None, &map).unwrap();
        assert_eq!(again, outcome);
    }
}

#[test]
fn empty_maps_reproduce_the_baseline() {
    let ds = dataset();
    for arch in Arch::ALL {
        let ckpt = model(arch, &ds);
        let ctx = TrialContext::new(&ckpt, &ds).unwrap();
        let profile = profile_ranges(&ckpt, &ds.ops, &ds.features).unwrap();
        for target in ["model", "gnn1", "act"] {
            let target: FaultTarget = target.parse().unwrap();
            for kind in MitigationKind::ALL.into_iter().filter(|k| k.applies_to(&target)) {
                if kind == MitigationKind::TopoFilter {
                    // Filtering alters clean activations too.
                    continue;
                }
                let policy = MitigationPolicy::from_kind(kind, Some(&profile)).unwrap();
                let o = run_trial(&ctx, &target, &policy, 0.0, 9).unwrap();
                assert_eq!(o.accuracy, ctx.baseline, "{arch} {target} {kind}");
                assert_eq!((o.bits_flipped, o.census.changed()), (0, 0));
            }
        }
    }
}

#[test]
fn injection_then_bit_mask_matches_clearing_the_bits() {
    let ds = dataset();
    let ckpt = model(Arch::Cheb, &ds);
    let target = FaultTarget::ModelWise;
    let ctx = TrialContext::new(&ckpt, &ds).unwrap();
    let map = generate_error_map(&target_census(&ctx, &target).unwrap(), 1e-3, 2).unwrap();
    let (corrupt, _) = inject_weights(&ckpt, &map, &target).unwrap();
    let repaired = mask_weights(&corrupt, &map, &target, MaskMode::Bit).unwrap();
    for (clean, fixed) in ckpt.tensors.iter().zip(&repaired.tensors) {
        let idx = map.tensor_index(&clean.name).unwrap();
        let masks = map.word_masks(idx);
        for (i, (a, b)) in clean.data.iter().zip(&fixed.data).enumerate() {
            let mask = masks.iter().find(|(e, _)| *e == i).map_or(0, |m| m.1);
            assert_eq!(b.to_bits(), a.to_bits() & !mask, "{} element {i}", clean.name);
        }
    }
}

#[test]
fn seeds_do_not_collide_over_a_full_grid() {
    let mut seen = std::collections::HashSet::new();
    let bers = [0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];
    for model in ["gcn", "gat", "cheb", "sgc"] {
        for ds in ["cora", "citeseer", "pubmed"] {
            for target in ["model", "gnn1", "gnn2", "act"] {
                for ber in bers {
                    for trial in 0..50 {
                        assert!(seen.insert(derive_seed(0, model, ds, target, ber, trial)));
                    }
                }
            }
        }
    }
    assert_eq!(seen.len(), 4 * 3 * 4 * 9 * 50);
}
