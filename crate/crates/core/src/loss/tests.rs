use super::*;
use crate::harness::{random_anchor_set, random_loss_instance};
use crate::head::{init_prototypes, SemanticType};
use crate::numerics::Rng;

fn small_instance(seed: u64) -> crate::harness::LossInstance {
    random_loss_instance(seed, 8, 5, 1.0)
}

fn batch(inst: &crate::harness::LossInstance) -> Batch<'_> {
    Batch::new(&inst.z, &inst.labels).unwrap()
}

#[test]
fn weights_validation() {
    assert!(LossWeights::default().validate().is_ok());
    let mut w = LossWeights::default();
    w.pull = -0.1;
    assert!(w.validate().is_err());
    let mut w = LossWeights::default();
    w.tau_push = 0.0;
    assert!(w.validate().is_err());
    let mut w = LossWeights::default();
    w.delta = 1.0;
    assert!(w.validate().is_err());
}

#[test]
fn reference_weight_vector_is_the_default() {
    let w = LossWeights::default();
    assert_eq!(
        w.lambdas(),
        [0.1, 0.05, 0.01, 1.0, 0.01, 0.1, 2.0, 0.5, 1e-6, 1e-4]
    );
    assert_eq!(w.tau_push, 0.1);
    assert_eq!(w.delta, 0.7);
}

#[test]
fn class_weights_examples() {
    // 2:1 imbalance → 0.75 : 1.5, mean one over the training set.
    let w = class_weights_from_counts(200, 100).unwrap();
    assert_eq!(w, [0.75, 1.5]);
    let mean = (200.0 * w[0] + 100.0 * w[1]) / 300.0;
    assert!((mean - 1.0).abs() < 1e-12);
    assert!(class_weights_from_counts(0, 5).is_err());
}

#[test]
fn cls_perfect_prediction_is_zero_and_uniform_is_ln2() {
    let mut rng = Rng::new(41);
    let anchors = random_anchor_set(8, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();

    // Mirror defect prototypes onto non-defect ones: p = (0.5, 0.5).
    for k in 0..3 {
        let row = model.prototypes.row(k).to_vec();
        model.prototypes.row_mut(k + 3).copy_from_slice(&row);
    }
    let z = Mat64::from_rows(&[vec![0.1; 8]]).unwrap();
    let labels = vec![crate::data::Label::Defect];
    let b = Batch::new(&z, &labels).unwrap();
    let state = head_state(&b, &model).unwrap();
    let (v, _) = loss_cls(&b, &model, &state, [1.0, 1.0]).unwrap();
    assert!((v - 2f64.ln()).abs() < 1e-12, "uniform probability gives ln 2, got {v}");

    // Near-certain correct class: loss approaches zero.
    let mut certain = init_prototypes(&anchors, 1.0).unwrap();
    for k in 0..3 {
        for v in certain.prototypes.row_mut(k) {
            *v += 300.0;
        }
    }
    let z = Mat64::from_rows(&[certain.prototypes.row(4).to_vec()]).unwrap();
    let b = Batch::new(&z, &labels).unwrap();
    let state = head_state(&b, &certain).unwrap();
    let (v, _) = loss_cls(&b, &certain, &state, [1.0, 1.0]).unwrap();
    assert!(v < 1e-9, "correct certain prediction, got {v}");
}

#[test]
fn pull_single_sample_quarter() {
    let mut rng = Rng::new(42);
    let anchors = random_anchor_set(4, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    // Place every prototype far except non-defect prototype 0.
    for k in 1..6 {
        for v in model.prototypes.row_mut(k) {
            *v += 100.0;
        }
    }
    // Sample offset from P_0 by exactly 1 in one coordinate: d = 1/D = 0.25.
    let mut z0 = model.prototypes.row(0).to_vec();
    z0[2] += 1.0;
    let z = Mat64::from_rows(&[z0]).unwrap();
    let labels = vec![crate::data::Label::NonDefect];
    let b = Batch::new(&z, &labels).unwrap();
    let state = head_state(&b, &model).unwrap();
    let (v, _) = loss_pull(&b, &model, &state).unwrap();
    assert!((v - 0.25).abs() < 1e-12, "got {v}");
}

#[test]
fn pull_matches_bruteforce_min_distance() {
    let inst = small_instance(5);
    let b = batch(&inst);
    let state = head_state(&b, &inst.model).unwrap();
    let (v, _) = loss_pull(&b, &inst.model, &state).unwrap();
    let mut expect = 0.0;
    for i in 0..5 {
        let own: Vec<usize> = (0..6)
            .filter(|&k| inst.model.class_of(k) == inst.labels[i])
            .collect();
        let best = own
            .iter()
            .map(|&k| state.d.row(i)[k])
            .fold(f64::INFINITY, f64::min);
        expect += best / 5.0;
    }
    assert!((v - expect).abs() < 1e-12);
}

#[test]
fn push_examples() {
    let mut rng = Rng::new(43);
    let anchors = random_anchor_set(4, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    for k in 0..6 {
        for (d, v) in model.prototypes.row_mut(k).iter_mut().enumerate() {
            *v = if d == k % 4 { 30.0 + k as f64 } else { 0.0 };
        }
    }
    // Sample exactly on an opposite-class prototype: contribution 1.
    let z = Mat64::from_rows(&[model.prototypes.row(3).to_vec()]).unwrap();
    let labels = vec![crate::data::Label::NonDefect];
    let b = Batch::new(&z, &labels).unwrap();
    let state = head_state(&b, &model).unwrap();
    let (v, _) = loss_push(&b, &model, &state, 0.1).unwrap();
    assert!((v - 1.0).abs() < 1e-12, "on opposite prototype, got {v}");

    // d/τ_push = 1 → e⁻¹: craft the distance to be exactly τ_push.
    let mut z1 = model.prototypes.row(3).to_vec();
    let dim = 4.0;
    z1[0] += (0.1f64 * dim).sqrt();
    let z = Mat64::from_rows(&[z1]).unwrap();
    let b = Batch::new(&z, &labels).unwrap();
    let state = head_state(&b, &model).unwrap();
    let d3 = state.d.row(0)[3];
    assert!((d3 - 0.1).abs() < 1e-12);
    assert!(state.d.row(0)[4] > d3 && state.d.row(0)[5] > d3);
    let (v, _) = loss_push(&b, &model, &state, 0.1).unwrap();
    assert!((v - (-1.0f64).exp()).abs() < 1e-12, "scale definition, got {v}");
}

#[test]
fn div_examples() {
    let mut rng = Rng::new(44);
    let anchors = random_anchor_set(6, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();

    // Orthogonal same-class prototypes → 0 at δ = 0.7.
    for k in 0..6 {
        let row: Vec<f64> = (0..6).map(|d| if d == k { 2.0 } else { 0.0 }).collect();
        model.prototypes.row_mut(k).copy_from_slice(&row);
    }
    let (v, _) = loss_div(&model, 0.7, 1).unwrap();
    assert_eq!(v, 0.0);

    // Identical same-class prototypes: cos = 1 → 0.3 per pair.
    for k in 0..6 {
        let class_rep: Vec<f64> = if k < 3 { vec![1.0; 6] } else { vec![-1.0; 6] };
        model.prototypes.row_mut(k).copy_from_slice(&class_rep);
    }
    let (v, _) = loss_div(&model, 0.7, 1).unwrap();
    assert!((v - 0.3).abs() < 1e-12, "got {v}");

    // Rescaling a prototype by a positive factor leaves the value fixed.
    let mut scaled = model.clone();
    for v in scaled.prototypes.row_mut(1) {
        *v *= 7.5;
    }
    let (v2, _) = loss_div(&scaled, 0.7, 1).unwrap();
    assert!((v2 - v).abs() < 1e-12);

    // Zero-norm prototype errors.
    let mut degenerate = model;
    for v in degenerate.prototypes.row_mut(2) {
        *v = 0.0;
    }
    assert!(matches!(
        loss_div(&degenerate, 0.7, 1),
        Err(crate::Error::DegenerateDirection)
    ));
}

#[test]
fn div_matches_pairwise_oracle() {
    let inst = small_instance(13);
    let (v, _) = loss_div(&inst.model, 0.7, 1).unwrap();
    let mut expect = 0.0;
    let mut pairs = 0;
    for class in [&[0usize, 1, 2][..], &[3usize, 4, 5][..]] {
        for a in 0..3 {
            for b in a + 1..3 {
                let cos = crate::numerics::cosine_sim(
                    inst.model.prototypes.row(class[a]),
                    inst.model.prototypes.row(class[b]),
                )
                .unwrap();
                expect += (cos - 0.7).max(0.0);
                pairs += 1;
            }
        }
    }
    assert!((v - expect / pairs as f64).abs() < 1e-12);
}

#[test]
fn ent_range_and_extremes() {
    let mut rng = Rng::new(45);
    let anchors = random_anchor_set(4, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    // Symmetric prototypes so the zero vector is equidistant within class.
    for k in 0..6 {
        let row: Vec<f64> = (0..4)
            .map(|d| {
                if d == k % 4 {
                    if k < 3 {
                        3.0
                    } else {
                        -3.0
                    }
                } else {
                    0.0
                }
            })
            .collect();
        model.prototypes.row_mut(k).copy_from_slice(&row);
    }
    let z = Mat64::from_rows(&[vec![0.0; 4]]).unwrap();
    let labels = vec![crate::data::Label::NonDefect];
    let b = Batch::new(&z, &labels).unwrap();
    let state = head_state(&b, &model).unwrap();
    let d = state.d.row(0);
    assert!((d[0] - d[1]).abs() < 1e-12 && (d[1] - d[2]).abs() < 1e-12);
    let (v, _) = loss_ent(&b, &model, &state, true).unwrap();
    assert!((v + 3f64.ln()).abs() < 1e-12, "uniform assignment, got {v}");

    // Sharp temperature concentrates the assignment: entropy → 0.
    let z = Mat64::from_rows(&[{
        let mut r = model.prototypes.row(0).to_vec();
        r[3] += 0.01;
        r
    }])
    .unwrap();
    let b = Batch::new(&z, &labels).unwrap();
    let mut sharp = model.clone();
    sharp.tau = 1e-3;
    let state_sharp = head_state(&b, &sharp).unwrap();
    let (v, _) = loss_ent(&b, &sharp, &state_sharp, true).unwrap();
    assert!(v.abs() < 1e-6, "one-hot assignment, got {v}");

    // Range property on random instances.
    for seed in 0..10 {
        let inst = small_instance(seed);
        let b = batch(&inst);
        let state = head_state(&b, &inst.model).unwrap();
        let (v, _) = loss_ent(&b, &inst.model, &state, true).unwrap();
        assert!(v <= 1e-12 && v >= -(3f64.ln()) - 1e-12, "range, got {v}");
    }
}

#[test]
fn ent_all_prototype_switch() {
    let inst = small_instance(3);
    let b = batch(&inst);
    let state = head_state(&b, &inst.model).unwrap();
    let (within, _) = loss_ent(&b, &inst.model, &state, true).unwrap();
    let (global, _) = loss_ent(&b, &inst.model, &state, false).unwrap();
    assert!(global >= -(6f64.ln()) - 1e-12);
    assert!((within - global).abs() > 1e-9);
}

#[test]
fn usage_uniform_is_zero_and_symmetric() {
    let mut rng = Rng::new(46);
    let anchors = random_anchor_set(4, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    // All prototypes coincide: every sample attributes exactly 1/6.
    let row = vec![0.3; 4];
    for k in 0..6 {
        model.prototypes.row_mut(k).copy_from_slice(&row);
    }
    let z = Mat64::from_rows(&[vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 4]]).unwrap();
    let labels = vec![crate::data::Label::NonDefect, crate::data::Label::Defect];
    let b = Batch::new(&z, &labels).unwrap();
    let state = head_state(&b, &model).unwrap();
    let (v, _) = loss_usage(&b, &model, &state).unwrap();
    assert!(v.abs() < 1e-12, "uniform usage, got {v}");

    // Permutation symmetry.
    let inst = small_instance(9);
    let b = batch(&inst);
    let state = head_state(&b, &inst.model).unwrap();
    let (v1, _) = loss_usage(&b, &inst.model, &state).unwrap();
    let mut permuted = inst.model.clone();
    for k in 0..6 {
        let src = inst.model.prototypes.row((k + 2) % 6).to_vec();
        permuted.prototypes.row_mut(k).copy_from_slice(&src);
    }
    let state_p = head_state(&b, &permuted).unwrap();
    let (v2, _) = loss_usage(&b, &permuted, &state_p).unwrap();
    assert!((v1 - v2).abs() < 1e-12);
}

#[test]
fn anchor_at_centroid_equals_mean_variance() {
    let mut rng = Rng::new(47);
    let anchors = random_anchor_set(8, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    for t in SemanticType::ALL {
        let c = crate::head::centroid(anchors.of_type(t)).unwrap();
        model.prototypes.row_mut(t.index()).copy_from_slice(&c);
    }
    let (v, _) = loss_anchor(&model, &anchors, 1).unwrap();
    // Variance decomposition oracle.
    let mut expect = 0.0;
    for t in SemanticType::ALL {
        let c = crate::head::centroid(anchors.of_type(t)).unwrap();
        let mut type_mean = 0.0;
        for a in anchors.of_type(t) {
            type_mean += crate::numerics::squared_distance(&a.embedding, &c).unwrap() / 8.0 / 6.0;
        }
        expect += type_mean / 6.0;
    }
    assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");

    // Translation invariance for one type moved together.
    let (v0, _) = loss_anchor(&model, &anchors, 1).unwrap();
    let mut moved_model = model.clone();
    for x in moved_model.prototypes.row_mut(0) {
        *x += 5.0;
    }
    let mut per_type: Vec<Vec<crate::head::Anchor>> = SemanticType::ALL
        .iter()
        .map(|&t| anchors.of_type(t).to_vec())
        .collect();
    for a in &mut per_type[0] {
        for x in &mut a.embedding {
            *x += 5.0;
        }
    }
    let moved_anchors = crate::head::AnchorSet::new(per_type).unwrap();
    let (v1, _) = loss_anchor(&moved_model, &moved_anchors, 1).unwrap();
    assert!((v0 - v1).abs() < 1e-12);
}

#[test]
fn medoid_displacement_closed_form() {
    let mut rng = Rng::new(48);
    let anchors = random_anchor_set(8, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    let (v, _) = loss_medoid(&model, 1).unwrap();
    assert_eq!(v, 0.0, "P = M at init");

    // One prototype displaced by a unit vector: 1/(K·D).
    model.prototypes.row_mut(2)[5] += 1.0;
    let (v, _) = loss_medoid(&model, 1).unwrap();
    assert!((v - 1.0 / (6.0 * 8.0)).abs() < 1e-15, "got {v}");
}

#[test]
fn proto_norm_and_tau_closed_forms() {
    let mut rng = Rng::new(49);
    let anchors = random_anchor_set(4, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    for v in model.prototypes.data_mut() {
        *v = 0.0;
    }
    assert_eq!(loss_proto_norm(&model, 1).0, 0.0);
    model.prototypes.row_mut(0)[0] = 2.0;
    assert_eq!(loss_proto_norm(&model, 1).0, 4.0);

    model.tau = 1.0;
    assert_eq!(loss_tau(&model, 1).0, 0.0);
    model.tau = 0.5;
    assert_eq!(loss_tau(&model, 1).0, 0.5);
    model.tau = 2.0;
    assert_eq!(loss_tau(&model, 1).0, 1.0);
}

#[test]
fn total_all_zero_weights() {
    let inst = small_instance(11);
    let b = batch(&inst);
    let zero = LossWeights {
        cls: 0.0,
        pull: 0.0,
        push: 0.0,
        div: 0.0,
        ent: 0.0,
        usage: 0.0,
        anchor: 0.0,
        medoid: 0.0,
        proto_norm: 0.0,
        tau_pen: 0.0,
        ..LossWeights::default()
    };
    let (breakdown, grads) =
        total_loss(&b, &inst.model, &inst.anchors, &zero, inst.class_weights).unwrap();
    assert_eq!(breakdown.total, 0.0);
    assert_eq!(grads.norm(), 0.0);
}

#[test]
fn total_matches_independent_recomposition() {
    let weights = LossWeights::default();
    for seed in [0, 7, 19] {
        let inst = small_instance(seed);
        let b = batch(&inst);
        let (breakdown, _) =
            total_loss(&b, &inst.model, &inst.anchors, &weights, inst.class_weights).unwrap();
        let mut recomposed = 0.0;
        for (idx, lambda) in weights.lambdas().iter().enumerate() {
            let (value, _) =
                eval_term(idx, &b, &inst.model, &inst.anchors, &weights, inst.class_weights)
                    .unwrap();
            assert!((value - breakdown.values[idx]).abs() < 1e-12);
            recomposed += lambda * value;
        }
        assert!((breakdown.total - recomposed).abs() < 1e-10);
    }
}

#[test]
fn terms_nonnegative_except_entropy() {
    for seed in 0..10 {
        let inst = small_instance(seed);
        let b = batch(&inst);
        let weights = LossWeights::default();
        for idx in 0..NUM_TERMS {
            let (v, _) =
                eval_term(idx, &b, &inst.model, &inst.anchors, &weights, inst.class_weights)
                    .unwrap();
            if TERM_NAMES[idx] == "ent" {
                assert!(v <= 1e-12 && v >= -(3f64.ln()) - 1e-12);
            } else {
                assert!(v >= 0.0, "{} = {v} negative", TERM_NAMES[idx]);
            }
        }
    }
}

#[test]
fn pull_push_invariant_under_within_class_permutation() {
    let inst = small_instance(23);
    let b = batch(&inst);
    let state = head_state(&b, &inst.model).unwrap();
    let (pull0, _) = loss_pull(&b, &inst.model, &state).unwrap();
    let (push0, _) = loss_push(&b, &inst.model, &state, 0.1).unwrap();

    // Swap two prototype rows inside each class.
    let mut permuted = inst.model.clone();
    for (a, b_) in [(0usize, 2usize), (3usize, 5usize)] {
        let ra = inst.model.prototypes.row(a).to_vec();
        let rb = inst.model.prototypes.row(b_).to_vec();
        permuted.prototypes.row_mut(a).copy_from_slice(&rb);
        permuted.prototypes.row_mut(b_).copy_from_slice(&ra);
    }
    let state_p = head_state(&b, &permuted).unwrap();
    let (pull1, _) = loss_pull(&b, &permuted, &state_p).unwrap();
    let (push1, _) = loss_push(&b, &permuted, &state_p, 0.1).unwrap();
    assert!((pull0 - pull1).abs() < 1e-12);
    assert!((push0 - push1).abs() < 1e-12);
}

#[test]
fn gradient_certification_off_unit_tau() {
    // The acceptance suite pins τ = 1; exercise the τ-dependent chain on
    // both sides of 1 as well.
    for tau in [0.7, 1.3] {
        for seed in 0..5 {
            let inst = random_loss_instance(seed, 8, 5, tau);
            let b = Batch::new(&inst.z, &inst.labels).unwrap();
            let weights = LossWeights::default();
            let (_, analytic) =
                total_loss(&b, &inst.model, &inst.anchors, &weights, inst.class_weights).unwrap();
            let numeric = crate::numerics::finite_diff_grad(
                |t| {
                    let mut m = inst.model.clone();
                    m.tau = t[0];
                    let (bd, _) =
                        total_loss(&b, &m, &inst.anchors, &weights, inst.class_weights).unwrap();
                    bd.total
                },
                &[tau],
                1e-5,
            )
            .unwrap();
            let mismatch = crate::numerics::max_grad_mismatch(&[analytic.tau], &numeric, 1e-8);
            assert!(mismatch < 1e-4, "tau {tau} seed {seed}: {mismatch:.2e}");
        }
    }
}

#[test]
fn medoid_pinning_under_large_weight() {
    // With a very large medoid weight, gradient steps pull the
    // prototypes monotonically back toward the frozen snapshot.
    let inst = small_instance(31);
    let b = batch(&inst);
    let weights = LossWeights {
        medoid: 1e4,
        ..LossWeights::default()
    };
    let mut model = inst.model.clone();
    let max_dev = |m: &crate::head::PrototypeModel| -> f64 {
        (0..6)
            .map(|k| {
                crate::numerics::squared_distance(m.prototypes.row(k), m.medoids.row(k)).unwrap()
            })
            .fold(0.0, f64::max)
    };
    let mut prev = max_dev(&model);
    assert!(prev > 0.0, "instance must start displaced");
    for _ in 0..10 {
        let (_, grads) =
            total_loss(&b, &model, &inst.anchors, &weights, inst.class_weights).unwrap();
        let lr = 1e-5;
        for (p, g) in model.prototypes.data_mut().iter_mut().zip(grads.p.data()) {
            *p -= lr * g;
        }
        let now = max_dev(&model);
        assert!(now < prev + 1e-15, "deviation must decrease: {prev} -> {now}");
        prev = now;
    }
}

#[test]
fn breakdown_csv_row_shape() {
    let inst = small_instance(2);
    let b = batch(&inst);
    let (breakdown, _) = total_loss(
        &b,
        &inst.model,
        &inst.anchors,
        &LossWeights::default(),
        inst.class_weights,
    )
    .unwrap();
    assert_eq!(
        LossBreakdown::csv_header(),
        "step,cls,pull,push,div,ent,usage,anchor,medoid,proto_norm,tau_pen,total"
    );
    let row = breakdown.csv_row(17);
    assert!(row.starts_with("17,"));
    assert_eq!(row.split(',').count(), 12);
}
