use super::*;
use crate::numerics::{Mat64, Rng};
use proptest::prelude::*;

fn anchor(id: u32, e: Vec<f64>) -> Anchor {
    Anchor {
        record_id: id,
        embedding: e,
        edge: false,
    }
}

fn random_anchor_set(dim: usize, rng: &mut Rng) -> AnchorSet {
    crate::harness::random_anchor_set(dim, rng)
}

#[test]
fn semantic_type_class_map() {
    let non: Vec<_> = SemanticType::ALL
        .iter()
        .filter(|t| t.class() == crate::data::Label::NonDefect)
        .collect();
    assert_eq!(non.len(), 3);
    assert_eq!(SemanticType::parse("matrix+air").unwrap(), SemanticType::MatrixAir);
    assert_eq!(SemanticType::parse("pores+lines").unwrap(), SemanticType::PoresLines);
    assert!(SemanticType::parse("cracks").is_err());
    for t in SemanticType::ALL {
        assert_eq!(SemanticType::from_index(t.index()).unwrap(), t);
        assert_eq!(SemanticType::parse(t.as_str()).unwrap(), t);
    }
}

#[test]
fn anchor_set_validation() {
    let mut rng = Rng::new(1);
    let good = random_anchor_set(4, &mut rng);
    assert_eq!(good.dim(), 4);

    // Missing a type's anchors is reported by name.
    let mut per_type: Vec<Vec<Anchor>> = SemanticType::ALL
        .iter()
        .map(|_| (0..6).map(|i| anchor(i, vec![0.0; 4])).collect())
        .collect();
    per_type[4].pop();
    let err = AnchorSet::new(per_type).unwrap_err().to_string();
    assert!(err.contains("lines"), "{err}");

    // Wrong edge count on a defect type.
    let per_type: Vec<Vec<Anchor>> = SemanticType::ALL
        .iter()
        .map(|t| {
            (0..6)
                .map(|i| Anchor {
                    record_id: i,
                    embedding: vec![0.0; 4],
                    edge: t.class() == crate::data::Label::Defect && i < 2,
                })
                .collect()
        })
        .collect();
    let err = AnchorSet::new(per_type).unwrap_err().to_string();
    assert!(err.contains("edge anchors"), "{err}");
}

#[test]
fn centroid_examples() {
    let single = vec![anchor(0, vec![2.5, -1.0])];
    assert_eq!(centroid(&single).unwrap(), vec![2.5, -1.0]);
    let pair = vec![anchor(0, vec![0.0, 0.0]), anchor(1, vec![2.0, 0.0])];
    assert_eq!(centroid(&pair).unwrap(), vec![1.0, 0.0]);
    assert!(matches!(centroid(&[]), Err(crate::Error::EmptyReduction)));

    let mut rng = Rng::new(2);
    let six: Vec<Anchor> = (0..6)
        .map(|i| anchor(i, (0..5).map(|_| rng.normal()).collect()))
        .collect();
    let c = centroid(&six).unwrap();
    for d in 0..5 {
        let direct: f64 = six.iter().map(|a| a.embedding[d]).sum::<f64>() / 6.0;
        assert!((c[d] - direct).abs() < 1e-14);
    }
}

#[test]
fn medoid_examples() {
    let single = vec![anchor(9, vec![1.0])];
    assert_eq!(medoid(&single).unwrap().record_id, 9);

    // Symmetric pair: both equidistant from the centroid, lower id wins.
    let pair = vec![anchor(7, vec![1.0, 0.0]), anchor(3, vec![-1.0, 0.0])];
    assert_eq!(medoid(&pair).unwrap().record_id, 3);
}

#[test]
fn medoid_matches_bruteforce_oracle() {
    crate::harness::medoid_oracle_check(200, 123).unwrap();
}

#[test]
fn init_prototypes_from_medoids() {
    let mut rng = Rng::new(3);
    let anchors = random_anchor_set(6, &mut rng);
    let model = init_prototypes(&anchors, 1.0).unwrap();
    assert_eq!(model.k(), 6);
    assert_eq!(model.tau, 1.0);
    assert_eq!(model.prototypes, model.medoids);
    for t in SemanticType::ALL {
        let row = model.prototypes.row(t.index());
        let is_real = anchors
            .of_type(t)
            .iter()
            .any(|a| a.embedding.as_slice() == row);
        assert!(is_real, "prototype row must equal a real anchor embedding");
    }
    assert!(init_prototypes(&anchors, 0.0).is_err());
}

#[test]
fn distances_examples() {
    let p = Mat64::from_rows(&[vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4]]).unwrap();
    let d = distances(&[1.0, 2.0, 3.0, 4.0], &p).unwrap();
    assert_eq!(d[0], 0.0);
    // One-coordinate offset: d = 1/D.
    let d2 = distances(&[2.0, 2.0, 3.0, 4.0], &p).unwrap();
    assert!((d2[0] - 0.25).abs() < 1e-15);
    // Direct loop oracle on random input.
    let mut rng = Rng::new(4);
    let z: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
    let d3 = distances(&z, &p).unwrap();
    for k in 0..2 {
        let direct: f64 = z
            .iter()
            .zip(p.row(k))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / 4.0;
        assert!((d3[k] - direct).abs() < 1e-14);
    }
    assert!(distances(&[1.0], &p).is_err());
}

#[test]
fn logits_scaling_law() {
    let d = vec![0.0, 0.5, 2.0];
    assert_eq!(prototype_logits(&d, 1.0).unwrap(), vec![0.0, -0.5, -2.0]);
    let l1 = prototype_logits(&d, 1.0).unwrap();
    let l_half = prototype_logits(&d, 0.5).unwrap();
    for (a, b) in l_half.iter().zip(&l1) {
        assert!((a - 2.0 * b).abs() < 1e-15);
    }
    assert!(prototype_logits(&d, 0.0).is_err());
    assert!(prototype_logits(&d, -1.0).is_err());
}

#[test]
fn class_logits_examples() {
    // One prototype per class: the class logit is that logit.
    let map = [SemanticType::Matrix, SemanticType::Pores];
    let (non, def) = class_logits(&[-1.5, -0.25], &map).unwrap();
    assert_eq!(non, -1.5);
    assert_eq!(def, -0.25);

    // Three equal logits pool to x + ln 3.
    let x = -0.8;
    let (non, _) = class_logits(&[x; 6], &SemanticType::ALL).unwrap();
    assert!((non - (x + 3f64.ln())).abs() < 1e-13);

    // Naive oracle on random logits.
    let mut rng = Rng::new(5);
    let l: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
    let (non, def) = class_logits(&l, &SemanticType::ALL).unwrap();
    let naive = |xs: &[f64]| xs.iter().map(|v| v.exp()).sum::<f64>().ln();
    assert!((non - naive(&l[..3])).abs() < 1e-12);
    assert!((def - naive(&l[3..])).abs() < 1e-12);

    // Empty class rejected.
    let all_def = [SemanticType::Pores, SemanticType::Lines];
    assert!(class_logits(&[0.0, 0.0], &all_def).is_err());
}

#[test]
fn class_probabilities_examples() {
    let (a, b) = class_probabilities((0.3, 0.3));
    assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
    let (a, b) = class_probabilities((0.0, 3f64.ln()));
    assert!((a - 0.25).abs() < 1e-14 && (b - 0.75).abs() < 1e-14);
    // Shift invariance.
    let (a1, b1) = class_probabilities((1.2, -0.4));
    let (a2, b2) = class_probabilities((1.2 + 100.0, -0.4 + 100.0));
    assert!((a1 - a2).abs() < 1e-12 && (b1 - b2).abs() < 1e-12);
}

#[test]
fn prototype_distribution_uniform_and_argmax_invariance() {
    let d = prototype_distribution(&[-2.0; 6]).unwrap();
    for v in &d {
        assert!((v - 1.0 / 6.0).abs() < 1e-14);
    }
    // Argmax invariant under any τ > 0 with fixed distances.
    let dists = vec![0.9, 0.2, 1.5, 0.4, 2.0, 0.3];
    let mut winners = std::collections::BTreeSet::new();
    for tau in [0.1, 0.5, 1.0, 3.0, 10.0] {
        let l = prototype_logits(&dists, tau).unwrap();
        winners.insert(argmax(&prototype_distribution(&l).unwrap()));
    }
    assert_eq!(winners.len(), 1);
    assert!(winners.contains(&1));
}

#[test]
fn predict_boundary_and_attribution() {
    let mut rng = Rng::new(6);
    let anchors = random_anchor_set(8, &mut rng);
    let model = init_prototypes(&anchors, 1.0).unwrap();

    // Boundary: mirror defect rows onto non-defect rows so the class
    // logits tie exactly; p_defect = 0.5 = t decides defect (≥ rule).
    let mut symmetric = model.clone();
    for k in 0..3 {
        let row = symmetric.prototypes.row(k).to_vec();
        symmetric.prototypes.row_mut(k + 3).copy_from_slice(&row);
    }
    let z = vec![0.0; 8];
    let p = predict(&z, &symmetric, 0.5).unwrap();
    assert!((p.p_defect - 0.5).abs() < 1e-12);
    assert_eq!(p.label, crate::data::Label::Defect, "p = t classifies defect");

    // A point sitting on a defect prototype far from everything else.
    let mut far = model.clone();
    for k in 0..6 {
        if k != 4 {
            for v in far.prototypes.row_mut(k) {
                *v += 40.0;
            }
        }
    }
    let z: Vec<f64> = far.prototypes.row(4).to_vec();
    let p = predict(&z, &far, 0.5).unwrap();
    assert_eq!(p.label, crate::data::Label::Defect);
    assert_eq!(p.attributed_type, SemanticType::Lines);
    assert!(p.p_defect > 0.9);

    assert!(predict(&z, &far, 0.0).is_err());
    assert!(predict(&z, &far, 1.0).is_err());
}

#[test]
fn head_identity_marginalization() {
    crate::harness::head_identity_check(1000, 99).unwrap();
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(7);
    let anchors = random_anchor_set(16, &mut rng);
    let mut model = init_prototypes(&anchors, 1.0).unwrap();
    model.tau = 0.85;
    model.calibration_temperature = 1.7;
    for v in model.prototypes.data_mut() {
        *v += 0.01;
    }
    let path = dir.path().join("model.pmdl");
    model.save(&path).unwrap();
    let back = PrototypeModel::load(&path).unwrap();
    assert_eq!(back.prototypes, model.prototypes);
    assert_eq!(back.medoids, model.medoids);
    assert_eq!(back.tau, model.tau);
    assert_eq!(back.calibration_temperature, model.calibration_temperature);
    assert_eq!(back.semantic_map, model.semantic_map);
    assert_eq!(back.anchor_ids, model.anchor_ids);
    assert_eq!(back.checksum(), model.checksum());
}

#[test]
fn checkpoint_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.pmdl");
    std::fs::write(&path, b"NOPE").unwrap();
    let err = PrototypeModel::load(&path).unwrap_err().to_string();
    assert!(err.contains("magic"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Softmax-then-marginalize equals LSE-pool-then-softmax.
    #[test]
    fn head_identity_property(logits in proptest::collection::vec(-40.0f64..10.0, 6)) {
        let dist = prototype_distribution(&logits).unwrap();
        let marginal: f64 = dist[3..].iter().sum();
        let cls = class_logits(&logits, &SemanticType::ALL).unwrap();
        let (_, p_def) = class_probabilities(cls);
        prop_assert!((marginal - p_def).abs() < 1e-12);
    }

    #[test]
    fn distances_nonnegative(seed in 0u64..500) {
        let mut rng = Rng::new(seed);
        let p = Mat64::from_rows(&[
            (0..6).map(|_| rng.normal()).collect::<Vec<f64>>(),
            (0..6).map(|_| rng.normal()).collect::<Vec<f64>>(),
        ]).unwrap();
        let z: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        for d in distances(&z, &p).unwrap() {
            prop_assert!(d >= 0.0);
        }
        let self_d = distances(p.row(0), &p).unwrap();
        prop_assert_eq!(self_d[0], 0.0);
    }
}
