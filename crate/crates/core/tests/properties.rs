//! Property tests for the invariants each module promises.

mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sepg::data::{generate_synthetic, pk_sample, Modality, PkSampler, SamplerConfig, SyntheticConfig};
use sepg::eval::{evaluate_descriptors, rank_from_distances, Descriptors, Protocol};
use sepg::losses::{compute_pseudo_anchors, id_loss, paba_loss, LossConfig};
use sepg::model::{EmbeddingBatch, Model};
use sepg::numerics::checkpoint::{read_checkpoint, restore, write_checkpoint};
use sepg::numerics::{finite_diff_check, ParamStore, Tape, Tensor};
use sepg::spectral::{compose_seg, decompose, ifft2, rgb_to_grey, GrayscaleCoefficients, Image, ImageKind, SegConfig};
use sepg::train::{tiny_backbone, TrainConfig};

fn pixels(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=255.0f64, len)
}

fn rgb_image(h: usize, w: usize) -> impl Strategy<Value = Image> {
    pixels(h * w * 3).prop_map(move |p| Image::new(h, w, 3, p, ImageKind::Visible).unwrap())
}

/// Balanced batch: `p` identities, `k` rows each per modality, `parts` x `dim` chunks.
fn batch_rows(p: usize, k: usize) -> (Vec<usize>, Vec<Modality>) {
    let mut ids = Vec::new();
    let mut mods = Vec::new();
    for m in Modality::BOTH {
        for i in 0..p {
            for _ in 0..k {
                ids.push(i);
                mods.push(m);
            }
        }
    }
    (ids, mods)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tensor_length_must_match_shape(a in 1usize..5, b in 1usize..5, extra in 1usize..3) {
        prop_assert!(Tensor::<f32>::new(vec![a, b], vec![0.0; a * b]).is_ok());
        prop_assert!(Tensor::<f32>::new(vec![a, b], vec![0.0; a * b + extra]).is_err());
    }

    #[test]
    fn grey_of_channel_constant_image_is_the_constant(v in 0.0..=255.0f64) {
        let img = Image::filled(3, 4, &[v, v, v], ImageKind::Visible).unwrap();
        let g = rgb_to_grey(&img, &GrayscaleCoefficients::default()).unwrap();
        prop_assert_eq!(g.kind(), ImageKind::Grey);
        for &p in g.pixels() {
            prop_assert!((p - v).abs() < 1e-9);
        }
    }

    #[test]
    fn amplitude_is_shift_invariant_and_recombination_exact(
        img in rgb_image(6, 5), dy in 0usize..6, dx in 0usize..5
    ) {
        let (h, w) = (6, 5);
        let mut shifted = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    shifted[(((y + dy) % h) * w + (x + dx) % w) * 3 + c] = img.get(y, x, c);
                }
            }
        }
        let shifted = Image::new(h, w, 3, shifted, ImageKind::Visible).unwrap();
        let (a, b) = (decompose(&img).unwrap(), decompose(&shifted).unwrap());
        for c in 0..3 {
            for (x, y) in a.amplitude[c].iter().zip(&b.amplitude[c]) {
                prop_assert!(*x >= 0.0 && (x - y).abs() < 1e-6 * x.max(1.0));
            }
            let back = ifft2(&b.recombine(c)).real_part();
            for (r, s) in back.iter().zip(shifted.channel(c)) {
                prop_assert!((r - s).abs() < 1e-4);
            }
            for &ph in &a.phase[c] {
                prop_assert!(ph > -std::f64::consts::PI - 1e-12 && ph <= std::f64::consts::PI + 1e-12);
            }
        }
    }

    #[test]
    fn seg_is_deterministic_and_in_range(img in rgb_image(8, 6), weight in 0.0..2.0f64) {
        let cfg = SegConfig::with_weight(weight);
        let a = compose_seg(&img, &cfg).unwrap();
        let b = compose_seg(&img, &cfg).unwrap();
        prop_assert_eq!(a.kind(), ImageKind::Seg);
        prop_assert!(a.pixels().iter().zip(b.pixels()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert!(a.pixels().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }

    #[test]
    fn paba_is_non_negative_translation_invariant_and_matches_oracle(
        p in 2usize..4, k in 2usize..4, parts in 1usize..3, dim in 1usize..4,
        seed in any::<u64>(), shift in -3.0..3.0f64
    ) {
        let (ids, mods) = batch_rows(p, k);
        let rows = ids.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * parts * dim).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let cfg = LossConfig::default();
        let eval = |values: &[f64]| {
            let mut tape = Tape::<f64>::new();
            let c = tape.input(Tensor::new(vec![rows, parts, dim], values.to_vec()).unwrap());
            let b = EmbeddingBatch::new(&tape, c, None, ids.clone(), mods.clone()).unwrap();
            let l = paba_loss(&mut tape, &b, &cfg).unwrap();
            tape.value(l).item()
        };
        let base = eval(&data);
        prop_assert!(base >= 0.0);
        let moved: Vec<f64> = data.iter().map(|v| v + shift).collect();
        prop_assert!((eval(&moved) - base).abs() < 1e-9);

        let feats: Vec<Vec<Vec<f64>>> = (0..rows)
            .map(|r| (0..parts).map(|q| data[(r * parts + q) * dim..(r * parts + q + 1) * dim].to_vec()).collect())
            .collect();
        prop_assert!((common::naive_paba(&feats, &ids, &mods, cfg.margin) - base).abs() < 1e-9);
    }

    #[test]
    fn anchors_pass_equal_gradient_shares(m in 2usize..5, seed in any::<u64>()) {
        let (ids, mods) = batch_rows(2, m);
        let rows = ids.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let fid = store
            .add("f", Tensor::from_fn(&[rows, 1, 3], |_| rand::Rng::random_range(&mut rng, -1.0..1.0)))
            .unwrap();
        let weights: Vec<f64> = vec![0.3, -1.2, 0.7];
        let mut tape = Tape::new();
        let c = tape.param(&store, fid);
        let b = EmbeddingBatch::new(&tape, c, None, ids.clone(), mods.clone()).unwrap();
        let anchors = compute_pseudo_anchors(&mut tape, &b).unwrap();
        // Linear read-out summed over every identity's visible anchor.
        let w = tape.input(Tensor::new(vec![3, 1], weights.clone()).unwrap());
        let z = tape.input(Tensor::zeros(&[1]));
        let lin = tape.linear(anchors.var(0, Modality::Visible), w, z).unwrap();
        let out = tape.sum(lin);
        tape.backward(out, &mut store).unwrap();
        let g = store.get(fid).grad.data().to_vec();
        for r in 0..rows {
            for d in 0..3 {
                let expect = if mods[r] == Modality::Visible { weights[d] / m as f64 } else { 0.0 };
                prop_assert!((g[r * 3 + d] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn id_loss_is_log_classes_at_uniform_logits(classes in 2usize..20, rows in 1usize..6, c in -5.0..5.0f64) {
        let mut tape = Tape::<f64>::new();
        let l = tape.input(Tensor::full(&[rows, classes], c));
        let labels: Vec<usize> = (0..rows).map(|r| r % classes).collect();
        let v = id_loss(&mut tape, l, &labels).unwrap();
        prop_assert!((tape.value(v).item() - (classes as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn id_loss_gradient_matches_finite_differences(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f64>::new();
        let id = store.add("logits", Tensor::from_fn(&[3, 4], |_| rand::Rng::random_range(&mut rng, -2.0..2.0))).unwrap();
        let err = finite_diff_check(&mut store, id, 1e-6, |t: &mut Tape<f64>, s: &ParamStore<f64>| {
            let l = t.param(s, id);
            id_loss(t, l, &[0, 3, 1])
        })
        .unwrap();
        prop_assert!(err < 1e-6);
    }

    #[test]
    fn pk_batches_hold_k_per_identity_and_modality(p in 2usize..6, k in 2usize..5, seed in any::<u64>()) {
        let (data, _) = generate_synthetic(&SyntheticConfig {
            num_identities: 6,
            images_per_identity: 3,
            height: 8,
            width: 8,
            seed: 1,
            difficulty: 0.3,
        })
        .unwrap();
        let cfg = SamplerConfig { p, k, seed };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = pk_sample(&data.index, &cfg, &mut rng).unwrap();
        prop_assert_eq!(batch.identities.len(), p.min(6));
        for (rows, m) in [(&batch.visible, Modality::Visible), (&batch.infrared, Modality::Infrared)] {
            for &id in &batch.identities {
                let n = rows.iter().filter(|&&r| data.record(r).identity == id).count();
                prop_assert_eq!(n, k);
            }
            prop_assert!(rows.iter().all(|&r| data.record(r).modality == m));
        }

        let mut sampler = PkSampler::new(&data.index, SamplerConfig { p: p.min(6), k, seed }).unwrap();
        let mut seen = [false; 6];
        for b in sampler.next_epoch() {
            for id in b.identities {
                seen[id] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn cmc_monotone_bounded_and_map_is_mean(
        seed in any::<u64>(), nq in 1usize..8, ng in 2usize..12, ids in 2usize..4
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |n| (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect::<Vec<f64>>();
        let q = Descriptors::new(2, r(nq * 2)).unwrap();
        let g = Descriptors::new(2, r(ng * 2)).unwrap();
        let gids: Vec<usize> = (0..ng).map(|i| i % ids).collect();
        let qids: Vec<usize> = (0..nq).map(|i| i % ids).collect();
        let res = evaluate_descriptors(Protocol::V2I, &q, &qids, &g, &gids, false).unwrap();
        prop_assert!(res.cmc.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(res.cmc.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let mean = res.per_query_ap.iter().sum::<f64>() / res.per_query_ap.len() as f64;
        prop_assert!((res.map - mean).abs() < 1e-12);
    }

    #[test]
    fn ranking_agrees_with_brute_force(
        dists in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 1.5, 2.0]), 1..15),
        seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gids: Vec<usize> = dists.iter().map(|_| rand::Rng::random_range(&mut rng, 0..3usize)).collect();
        let ours = rank_from_distances(&dists, &gids, 1, None);
        let oracle = common::brute_force_ap(&dists, &gids, 1);
        match (ours, oracle) {
            (None, None) => {}
            (Some(o), Some((first, ap))) => {
                prop_assert_eq!(o.first_hit, first);
                prop_assert!((o.ap - ap).abs() < 1e-12);
            }
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn lr_schedule_is_a_step_function_of_epoch(epoch in 0usize..200) {
        let cfg = TrainConfig::paper();
        let expect = if epoch < 30 { 0.03 } else if epoch < 70 { 0.003 } else { 0.0003 };
        prop_assert!((cfg.lr_at(epoch) - expect).abs() < 1e-15);
        prop_assert_eq!(cfg.lr_at(epoch).to_bits(), cfg.lr_at(epoch).to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn checkpoint_round_trip_preserves_values_and_outputs(seed in any::<u64>()) {
        let model = Model::<f32>::new(tiny_backbone(seed)).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(model.params(), &mut bytes).unwrap();
        let mut fresh = Model::<f32>::new(tiny_backbone(seed.wrapping_add(1))).unwrap();
        restore(fresh.params_mut(), read_checkpoint(bytes.as_slice()).unwrap()).unwrap();
        for (a, b) in model.params().iter().zip(fresh.params().iter()) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        let x = Tensor::from_fn(&[2, 3, 16, 8], |i| ((i * 31) % 97) as f32 / 97.0);
        let (ya, yb) = (model.embed_chunks(x.clone()).unwrap(), fresh.embed_chunks(x).unwrap());
        prop_assert!(ya.data().iter().zip(yb.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn synthetic_generation_is_pure(seed in any::<u64>(), difficulty in 0.0..=1.0f64) {
        let cfg = SyntheticConfig {
            num_identities: 4,
            images_per_identity: 2,
            height: 16,
            width: 8,
            seed,
            difficulty,
        };
        let (a, ma) = generate_synthetic(&cfg).unwrap();
        let (b, mb) = generate_synthetic(&cfg).unwrap();
        prop_assert_eq!(ma, mb);
        prop_assert_eq!(&a.index.records, &b.index.records);
        for (x, y) in a.images.iter().zip(&b.images) {
            prop_assert!(x.pixels().iter().zip(y.pixels()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        // Every identity has images in both modalities, labels are dense.
        for id in 0..4 {
            for m in Modality::BOTH {
                prop_assert!(a.index.records.iter().any(|r| r.identity == id && r.modality == m));
            }
        }
    }
}

#[test]
fn decay_epochs_must_increase_and_precede_the_end() {
    let bad = [vec![20, 10], vec![10, 10], vec![10, 30]];
    for d in bad {
        let cfg = TrainConfig {
            decay_epochs: d.clone(),
            ..TrainConfig::desk()
        };
        assert!(cfg.validate().is_err(), "{d:?}");
    }
}

#[test]
fn paper_profile_values() {
    let p = TrainConfig::paper();
    assert_eq!((p.margin, p.lambda1, p.lambda2, p.lambda3), (0.5, 1.0, 2.5, 1.0));
    assert_eq!((p.lr0, p.epochs, p.decay_epochs.clone()), (0.03, 120, vec![30, 70]));
    assert_eq!((p.p, p.k, p.parts), (8, 7, 12));
    let g = GrayscaleCoefficients::default();
    assert_eq!((g.alpha, g.beta, g.gamma), (0.299, 0.587, 0.114));
}
