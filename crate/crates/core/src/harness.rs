//! Reproducibility harness: a fixture per operation plus the property
//! suites (gradient certification, head identity, medoid oracle),
//! runnable as one TAP-style suite with a JSON summary. The heavier
//! end-to-end checks live in the acceptance test target; this suite
//! stays fast enough for a pre-commit run.

use std::fmt::Write as _;

use crate::data::Label;
use crate::head::{
    class_logits, class_probabilities, distances, init_prototypes, medoid, prototype_distribution,
    prototype_logits, Anchor, AnchorSet, PrototypeModel, SemanticType,
};
use crate::loss::{eval_term, total_loss, Batch, LossWeights, NUM_TERMS, TERM_NAMES};
use crate::numerics::{finite_diff_grad, max_grad_mismatch, Mat64, Rng};

type Check = std::result::Result<(), String>;

pub struct Fixture {
    pub name: &'static str,
    pub provenance: &'static str,
    pub run: Box<dyn Fn() -> Check>,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SuiteReport {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub failures: Vec<(String, String)>,
    #[serde(skip)]
    pub tap: String,
}

impl SuiteReport {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_else(|_| "{}".into())
    }
}

/// Runs every fixture whose name contains `filter` (all when empty).
/// A filter matching nothing is itself a failure, never a silent skip.
pub fn run_suite(filter: &str) -> SuiteReport {
    let fixtures = fixtures();
    let selected: Vec<&Fixture> = fixtures
        .iter()
        .filter(|f| filter.is_empty() || f.name.contains(filter))
        .collect();
    let mut tap = String::new();
    let mut failures = Vec::new();
    if selected.is_empty() {
        let _ = writeln!(tap, "1..1");
        let _ = writeln!(tap, "not ok 1 - fixture filter {filter:?} matched nothing");
        failures.push((
            format!("filter {filter:?}"),
            "no fixture matched".to_string(),
        ));
        return SuiteReport {
            total: 1,
            passed: 0,
            failed: 1,
            failures,
            tap,
        };
    }
    let _ = writeln!(tap, "1..{}", selected.len());
    let mut passed = 0;
    for (i, f) in selected.iter().enumerate() {
        match (f.run)() {
            Ok(()) => {
                passed += 1;
                let _ = writeln!(tap, "ok {} - {} [{}]", i + 1, f.name, f.provenance);
            }
            Err(msg) => {
                let _ = writeln!(tap, "not ok {} - {} [{}]", i + 1, f.name, f.provenance);
                let _ = writeln!(tap, "# {msg}");
                failures.push((f.name.to_string(), msg));
            }
        }
    }
    SuiteReport {
        total: selected.len(),
        passed,
        failed: selected.len() - passed,
        failures,
        tap,
    }
}

fn ensure(cond: bool, msg: &str) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b} (tol {tol})"))
    }
}

/// A random 36-anchor set in general position.
pub fn random_anchor_set(dim: usize, rng: &mut Rng) -> AnchorSet {
    let mut per_type = Vec::new();
    for (ti, t) in SemanticType::ALL.iter().enumerate() {
        let mut anchors = Vec::new();
        for a in 0..6 {
            anchors.push(Anchor {
                record_id: (ti * 6 + a) as u32,
                embedding: (0..dim).map(|_| rng.normal()).collect(),
                edge: t.class() == Label::Defect && a < 3,
            });
        }
        per_type.push(anchors);
    }
    AnchorSet::new(per_type).expect("anchor construction")
}

/// Random loss instance in general position: no near-tied nearest
/// prototypes and no cosine sitting on the hinge, so central
/// differences stay on one smooth branch.
pub struct LossInstance {
    pub z: Mat64,
    pub labels: Vec<Label>,
    pub model: PrototypeModel,
    pub anchors: AnchorSet,
    pub class_weights: [f64; 2],
}

pub fn random_loss_instance(seed: u64, dim: usize, batch: usize, tau: f64) -> LossInstance {
    let mut rng = Rng::new(seed);
    'retry: for _attempt in 0..64 {
        let anchors = random_anchor_set(dim, &mut rng);
        let mut model = init_prototypes(&anchors, tau).expect("init");
        for v in model.prototypes.data_mut() {
            *v += 0.3 * rng.normal();
        }
        let mut z = Mat64::zeros(batch, dim);
        for v in z.data_mut() {
            *v = rng.normal();
        }
        let labels: Vec<Label> = (0..batch)
            .map(|i| if i % 2 == 0 { Label::NonDefect } else { Label::Defect })
            .collect();

        // General-position guards.
        let classes = [
            model.prototype_indices_of(Label::NonDefect),
            model.prototype_indices_of(Label::Defect),
        ];
        for i in 0..batch {
            let d = distances(z.row(i), &model.prototypes).expect("distances");
            for class in &classes {
                let mut ds: Vec<f64> = class.iter().map(|&k| d[k]).collect();
                ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if ds.len() >= 2 && ds[1] - ds[0] < 1e-2 {
                    continue 'retry;
                }
            }
        }
        let delta = LossWeights::default().delta;
        for class in &classes {
            for a in 0..class.len() {
                for b in a + 1..class.len() {
                    let cos = crate::numerics::cosine_sim(
                        model.prototypes.row(class[a]),
                        model.prototypes.row(class[b]),
                    )
                    .expect("cosine");
                    if (cos - delta).abs() < 1e-2 {
                        continue 'retry;
                    }
                }
            }
        }
        let n_def = labels.iter().filter(|&&l| l == Label::Defect).count();
        let class_weights =
            crate::loss::class_weights_from_counts(batch - n_def, n_def).expect("weights");
        return LossInstance {
            z,
            labels,
            model,
            anchors,
            class_weights,
        };
    }
    panic!("could not build a general-position loss instance for seed {seed}");
}

fn instance_value(inst: &LossInstance, term: Option<usize>, weights: &LossWeights) -> f64 {
    let batch = Batch::new(&inst.z, &inst.labels).expect("batch");
    match term {
        Some(idx) => {
            eval_term(idx, &batch, &inst.model, &inst.anchors, weights, inst.class_weights)
                .expect("term")
                .0
        }
        None => {
            total_loss(&batch, &inst.model, &inst.anchors, weights, inst.class_weights)
                .expect("total")
                .0
                .total
        }
    }
}

/// Certifies analytic gradients of one term (or the weighted total when
/// `term` is None) against central differences on `seeds` random
/// instances. Returns the worst relative mismatch observed.
pub fn certify_gradient(
    term: Option<usize>,
    seeds: std::ops::Range<u64>,
    dim: usize,
    batch_size: usize,
    h: f64,
    tol: f64,
) -> std::result::Result<f64, String> {
    let weights = LossWeights::default();
    let mut worst: f64 = 0.0;
    for seed in seeds {
        let inst = random_loss_instance(seed, dim, batch_size, 1.0);
        let batch = Batch::new(&inst.z, &inst.labels).map_err(|e| e.to_string())?;
        let analytic = match term {
            Some(idx) => {
                eval_term(idx, &batch, &inst.model, &inst.anchors, &weights, inst.class_weights)
                    .map_err(|e| e.to_string())?
                    .1
            }
            None => {
                total_loss(&batch, &inst.model, &inst.anchors, &weights, inst.class_weights)
                    .map_err(|e| e.to_string())?
                    .1
            }
        };

        // z coordinates
        let z0 = inst.z.data().to_vec();
        let num_z = finite_diff_grad(
            |zf| {
                let mut probe = LossInstance {
                    z: Mat64::from_flat(batch_size, dim, zf.to_vec()).unwrap(),
                    labels: inst.labels.clone(),
                    model: inst.model.clone(),
                    anchors: inst.anchors.clone(),
                    class_weights: inst.class_weights,
                };
                probe.z.data_mut().copy_from_slice(zf);
                instance_value(&probe, term, &weights)
            },
            &z0,
            h,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(max_grad_mismatch(analytic.z.data(), &num_z, 1e-8));

        // P coordinates
        let p0 = inst.model.prototypes.data().to_vec();
        let num_p = finite_diff_grad(
            |pf| {
                let mut probe_model = inst.model.clone();
                probe_model.prototypes.data_mut().copy_from_slice(pf);
                let probe = LossInstance {
                    z: inst.z.clone(),
                    labels: inst.labels.clone(),
                    model: probe_model,
                    anchors: inst.anchors.clone(),
                    class_weights: inst.class_weights,
                };
                instance_value(&probe, term, &weights)
            },
            &p0,
            h,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(max_grad_mismatch(analytic.p.data(), &num_p, 1e-8));

        // τ
        let num_tau = finite_diff_grad(
            |tf| {
                let mut probe_model = inst.model.clone();
                probe_model.tau = tf[0];
                let probe = LossInstance {
                    z: inst.z.clone(),
                    labels: inst.labels.clone(),
                    model: probe_model,
                    anchors: inst.anchors.clone(),
                    class_weights: inst.class_weights,
                };
                instance_value(&probe, term, &weights)
            },
            &[inst.model.tau],
            h,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max(max_grad_mismatch(&[analytic.tau], &num_tau, 1e-8));

        if worst > tol {
            let name = term.map(|i| TERM_NAMES[i]).unwrap_or("total");
            return Err(format!(
                "seed {seed}: {name} gradient mismatch {worst:.3e} exceeds {tol:.0e}"
            ));
        }
    }
    Ok(worst)
}

/// The head's core algebraic identity: marginalizing the global
/// prototype softmax over the class map equals the softmax of the
/// LSE-pooled class logits. Returns the max abs difference seen.
pub fn head_identity_check(instances: usize, seed: u64) -> std::result::Result<f64, String> {
    let mut rng = Rng::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let logits: Vec<f64> = (0..6).map(|_| rng.uniform(-30.0, 10.0)).collect();
        let dist = prototype_distribution(&logits).map_err(|e| e.to_string())?;
        let marginal_def: f64 = dist[3..].iter().sum();
        let cls = class_logits(&logits, &SemanticType::ALL).map_err(|e| e.to_string())?;
        let (p_non, p_def) = class_probabilities(cls);
        worst = worst.max((marginal_def - p_def).abs());
        worst = worst.max((dist[..3].iter().sum::<f64>() - p_non).abs());
    }
    if worst < 1e-12 {
        Ok(worst)
    } else {
        Err(format!("identity violated: max abs diff {worst:.3e}"))
    }
}

/// Medoid selection versus brute-force argmin of distance-to-centroid
/// over candidate sets of size 1–6; exact id match per trial.
pub fn medoid_oracle_check(trials: usize, seed: u64) -> Check {
    let mut rng = Rng::new(seed);
    for trial in 0..trials {
        let n = 1 + rng.below(6);
        let dim = 2 + rng.below(6);
        let anchors: Vec<Anchor> = (0..n)
            .map(|i| Anchor {
                record_id: rng.below(1000) as u32 * 10 + i as u32,
                embedding: (0..dim).map(|_| rng.normal()).collect(),
                edge: false,
            })
            .collect();
        let chosen = medoid(&anchors).map_err(|e| e.to_string())?;
        // Brute force with the same tie rule.
        let mut centroid = vec![0.0; dim];
        for a in &anchors {
            for (c, &v) in centroid.iter_mut().zip(&a.embedding) {
                *c += v / n as f64;
            }
        }
        let mut best: Option<(u32, f64)> = None;
        for a in &anchors {
            let d: f64 = a
                .embedding
                .iter()
                .zip(&centroid)
                .map(|(x, c)| (x - c) * (x - c))
                .sum();
            let better = match best {
                None => true,
                Some((bid, bd)) => d < bd || (d == bd && a.record_id < bid),
            };
            if better {
                best = Some((a.record_id, d));
            }
        }
        let expect = best.unwrap().0;
        if chosen.record_id != expect {
            return Err(format!(
                "trial {trial}: medoid {} but oracle {expect}",
                chosen.record_id
            ));
        }
    }
    Ok(())
}

/// Times head inference on random instances; diagnostic only.
pub fn head_throughput(predictions: usize) -> f64 {
    let mut rng = Rng::new(1);
    let anchors = random_anchor_set(64, &mut rng);
    let model = init_prototypes(&anchors, 1.0).expect("init");
    let z: Vec<Vec<f64>> = (0..256)
        .map(|_| (0..64).map(|_| rng.normal()).collect())
        .collect();
    let start = std::time::Instant::now();
    let mut sink = 0.0;
    for i in 0..predictions {
        let p = crate::head::predict(&z[i % z.len()], &model, 0.5).expect("predict");
        sink += p.p_defect;
    }
    let dt = start.elapsed().as_secs_f64();
    assert!(sink.is_finite());
    predictions as f64 / dt
}

fn tiny_scored(values: &[(u32, u8, f64)]) -> crate::eval::ScoredSet {
    crate::eval::ScoredSet::new(
        values
            .iter()
            .map(|&(id, label, score)| crate::eval::ScoredRecord {
                id,
                label: Label::from_u8(label).unwrap(),
                score,
            })
            .collect(),
        false,
    )
    .unwrap()
}

/// The full fixture registry. Every public operation appears at least
/// once, tagged by the kind of check backing it (closed-form value,
/// independent oracle, or fixed reference numbers).
pub fn fixtures() -> Vec<Fixture> {
    let mut out: Vec<Fixture> = Vec::new();
    let mut add = |name: &'static str, provenance: &'static str, run: Box<dyn Fn() -> Check>| {
        out.push(Fixture {
            name,
            provenance,
            run,
        });
    };

    add(
        "numerics::log_sum_exp",
        "oracle",
        Box::new(|| {
            let naive = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln();
            close(
                crate::numerics::log_sum_exp(&[1.0, 2.0, 3.0]).map_err(|e| e.to_string())?,
                naive,
                1e-14,
                "lse",
            )?;
            close(
                crate::numerics::log_sum_exp(&[5.0]).map_err(|e| e.to_string())?,
                5.0,
                0.0,
                "single",
            )
        }),
    );

    add(
        "numerics::softmax",
        "oracle",
        Box::new(|| {
            let p = crate::numerics::softmax(&[0.0, 3f64.ln()]).map_err(|e| e.to_string())?;
            close(p[0], 0.25, 1e-14, "p0")?;
            close(p[1], 0.75, 1e-14, "p1")
        }),
    );

    add(
        "numerics::cosine_and_normalize",
        "oracle",
        Box::new(|| {
            let c = crate::numerics::cosine_sim(&[1.0, 1.0], &[1.0, 0.0]).map_err(|e| e.to_string())?;
            close(c, 1.0 / 2f64.sqrt(), 1e-14, "cos")?;
            let v = crate::numerics::l2_normalize(&[3.0, 4.0]).map_err(|e| e.to_string())?;
            close(crate::numerics::norm(&v), 1.0, 1e-12, "unit")
        }),
    );

    add(
        "numerics::clip_global_norm",
        "oracle",
        Box::new(|| {
            let mut a = vec![1.0, 2.0, 2.0];
            let f = crate::numerics::clip_global_norm(&mut [&mut a], 1.0).map_err(|e| e.to_string())?;
            close(f, 1.0 / 3.0, 1e-12, "factor")?;
            close(crate::numerics::norm(&a), 1.0, 1e-9, "post norm")
        }),
    );

    add(
        "numerics::finite_diff_grad",
        "closed-form",
        Box::new(|| {
            let g = finite_diff_grad(|v| v.iter().map(|x| x * x).sum(), &[1.5, -2.0], 1e-4)
                .map_err(|e| e.to_string())?;
            close(g[0], 3.0, 1e-8, "g0")?;
            close(g[1], -4.0, 1e-8, "g1")
        }),
    );

    add(
        "data::generate_synthetic_volume",
        "closed-form",
        Box::new(|| {
            let spec = crate::data::SynthSpec {
                depth: 1,
                height: 128,
                width: 128,
                pores_per_slice: 0.0,
                lines_per_slice: 0.0,
                mixed_per_slice: 0.0,
                ..crate::data::SynthSpec::default()
            };
            let (_, truth) =
                crate::data::generate_synthetic_volume(&spec, &mut Rng::new(7)).map_err(|e| e.to_string())?;
            ensure(truth.defect_voxel_count() == 0, "density 0 must give an empty mask")
        }),
    );

    add(
        "data::sample_patches",
        "closed-form",
        Box::new(|| {
            let spec = crate::data::SynthSpec {
                depth: 1,
                height: 128,
                width: 128,
                ..crate::data::SynthSpec::default()
            };
            let (vol, _) =
                crate::data::generate_synthetic_volume(&spec, &mut Rng::new(3)).map_err(|e| e.to_string())?;
            let ps = crate::data::sample_patches(&vol, 1, &mut Rng::new(5)).map_err(|e| e.to_string())?;
            ensure(ps.len() == 1, "n=1 yields one patch")?;
            ensure(
                ps[0].provenance.row as usize + 64 <= 128 && ps[0].provenance.col as usize + 64 <= 128,
                "patch in bounds",
            )
        }),
    );

    add(
        "data::auto_label_low_intensity",
        "closed-form",
        Box::new(|| {
            let mk = |v: f32| crate::data::Patch {
                tile: vec![v; crate::data::PATCH_AREA],
                provenance: crate::data::Provenance {
                    volume: "t".into(),
                    slice: 0,
                    row: 0,
                    col: 0,
                },
                label: None,
                semantic_type: None,
                normalized: false,
            };
            let boundary = 30.0 / 255.0;
            let (auto, rest) =
                auto_label_low_intensity_helper(vec![mk(0.0), mk(boundary as f32), mk(0.5)]);
            ensure(auto.len() == 1 && rest.len() == 2, "strict boundary: ties stay manual")
        }),
    );

    add(
        "data::rebalance_and_split",
        "reference",
        Box::new(|| {
            // 36:1 imbalance rebalanced to approximately 2:1.
            let mut rng = Rng::new(11);
            let mut patches = Vec::new();
            for i in 0..1850 {
                let defect = i < 50;
                let mean = 0.3 + 0.4 * rng.next_f64();
                patches.push(crate::data::Patch {
                    tile: vec![mean as f32; crate::data::PATCH_AREA],
                    provenance: crate::data::Provenance {
                        volume: "t".into(),
                        slice: 0,
                        row: 0,
                        col: 0,
                    },
                    label: Some(if defect { Label::Defect } else { Label::NonDefect }),
                    semantic_type: None,
                    normalized: false,
                });
            }
            let set = crate::data::PatchSet::from_labeled_patches(patches, 1).map_err(|e| e.to_string())?;
            let out = crate::data::rebalance(&set, 2.0, 0.45, &mut Rng::new(2)).map_err(|e| e.to_string())?;
            let (non, def) = out.manifest.class_counts();
            let ratio = non as f64 / def as f64;
            ensure(def == 50, "no defect patch dropped")?;
            ensure((1.8..=2.2).contains(&ratio), "achieved ratio within band")?;
            let mut split_set = out;
            crate::data::split(&mut split_set, (0.8, 0.1, 0.1), &mut Rng::new(3)).map_err(|e| e.to_string())?;
            let (tn, td) = split_set.manifest.split_class_counts(crate::data::Split::Train);
            ensure(
                (td as f64 - 40.0).abs() <= 1.0 && (tn as f64 - 80.0).abs() <= 1.0,
                "stratified counts within one patch",
            )
        }),
    );

    add(
        "data::augment",
        "closed-form",
        Box::new(|| {
            let mut rng = Rng::new(1);
            let tile: Vec<f32> = (0..crate::data::PATCH_AREA).map(|i| (i % 97) as f32 / 97.0).collect();
            let patch = crate::data::Patch {
                tile: tile.clone(),
                provenance: crate::data::Provenance {
                    volume: "t".into(),
                    slice: 0,
                    row: 0,
                    col: 0,
                },
                label: None,
                semantic_type: None,
                normalized: false,
            };
            let identity = crate::data::AugmentationPolicy {
                flip_p: 0.0,
                rot_p: 0.0,
                max_rot_deg: 15.0,
                normalize: false,
            };
            let out = crate::data::augment(&patch, &identity, &mut rng).map_err(|e| e.to_string())?;
            ensure(out.tile == tile, "all-zero-probability policy is the identity")?;
            let mut t2 = tile.clone();
            crate::data::flip_horizontal(&mut t2);
            crate::data::flip_horizontal(&mut t2);
            ensure(t2 == tile, "double flip is the identity")?;
            let rot0 = crate::data::rotate_bilinear(&tile, 0.0);
            ensure(
                rot0.iter().zip(&tile).all(|(a, b)| (a - b).abs() < 1e-6),
                "zero rotation is the identity",
            )
        }),
    );

    add(
        "data::normalize_patch",
        "closed-form",
        Box::new(|| {
            let constant = crate::data::Patch {
                tile: vec![0.7; crate::data::PATCH_AREA],
                provenance: crate::data::Provenance {
                    volume: "t".into(),
                    slice: 0,
                    row: 0,
                    col: 0,
                },
                label: None,
                semantic_type: None,
                normalized: false,
            };
            let z = crate::data::normalize_patch(&constant);
            ensure(z.tile.iter().all(|&v| v == 0.0), "constant tile maps to zeros")
        }),
    );

    add(
        "encoder::fit_standardizer",
        "oracle",
        Box::new(|| {
            let batch = crate::encoder::EmbeddingBatch::new(
                vec![0, 1],
                Mat64::from_rows(&[vec![0.0, 0.0], vec![2.0, 2.0]]).unwrap(),
            )
            .map_err(|e| e.to_string())?;
            let s = crate::encoder::fit_standardizer(&batch).map_err(|e| e.to_string())?;
            close(s.mean[0], 1.0, 0.0, "mean")?;
            close(s.scale[0], 1.0, 0.0, "population std")
        }),
    );

    add(
        "encoder::standardize",
        "closed-form",
        Box::new(|| {
            let s = crate::encoder::Standardizer {
                mean: vec![2.0, -1.0],
                scale: vec![4.0, 0.5],
                degenerate: vec![false, false],
            };
            let z = s.transform_vec(&[2.0, -1.0]).map_err(|e| e.to_string())?;
            ensure(z == vec![0.0, 0.0], "x = μ maps to zero")?;
            let back = s.inverse_vec(&z).map_err(|e| e.to_string())?;
            close(back[0], 2.0, 1e-10, "inverse")?;
            close(back[1], -1.0, 1e-10, "inverse")
        }),
    );

    add(
        "encoder::encode",
        "closed-form",
        Box::new(|| {
            let mut rng = Rng::new(4);
            let enc = crate::encoder::CompactEncoder::new(8, &mut rng).map_err(|e| e.to_string())?;
            let tile: Vec<f32> = (0..crate::data::PATCH_AREA).map(|i| ((i * 31) % 101) as f32 / 101.0).collect();
            let a = enc.forward(&tile).map_err(|e| e.to_string())?;
            let b = enc.forward(&tile).map_err(|e| e.to_string())?;
            ensure(a == b, "identical patches give identical embeddings")
        }),
    );

    add(
        "encoder::encode_backward_frozen",
        "closed-form",
        Box::new(|| {
            let mut rng = Rng::new(4);
            let mut enc = crate::encoder::CompactEncoder::new(8, &mut rng).map_err(|e| e.to_string())?;
            enc.set_frozen_stages(3).map_err(|e| e.to_string())?;
            let tile = vec![0.25f32; crate::data::PATCH_AREA];
            let (_, cache) = enc.forward_cached(&tile).map_err(|e| e.to_string())?;
            let grads = enc.backward(&cache, &[1.0; 8]).map_err(|e| e.to_string())?;
            ensure(grads.stages.is_empty(), "frozen-only configuration yields no gradients")
        }),
    );

    add(
        "encoder::load_embeddings",
        "reference",
        Box::new(|| {
            let dir = std::env::temp_dir().join(format!("pemb-fixture-{}", std::process::id()));
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let path = dir.join("e.pemb");
            let mut rng = Rng::new(9);
            let mut data = Mat64::zeros(3, 2048);
            for v in data.data_mut() {
                *v = (rng.normal() as f32) as f64;
            }
            let batch = crate::encoder::EmbeddingBatch::new(vec![5, 6, 7], data).map_err(|e| e.to_string())?;
            crate::encoder::save_embeddings(&path, &batch).map_err(|e| e.to_string())?;
            let back = crate::encoder::load_embeddings(&path).map_err(|e| e.to_string())?;
            ensure(back.dim() == 2048 && back.len() == 3, "header dim 2048, rows n")?;
            ensure(back.data.data() == batch.data.data(), "bit-identical round trip")?;
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            std::fs::write(&path, &bytes[..bytes.len() - 7]).map_err(|e| e.to_string())?;
            let err = crate::encoder::load_embeddings(&path).unwrap_err().to_string();
            ensure(err.contains("expected") && err.contains("found"), "truncation names byte counts")
        }),
    );

    add(
        "head::centroid_medoid",
        "oracle",
        Box::new(|| {
            let anchors = vec![
                Anchor { record_id: 4, embedding: vec![0.0, 0.0], edge: false },
                Anchor { record_id: 2, embedding: vec![2.0, 0.0], edge: false },
            ];
            let c = crate::head::centroid(&anchors).map_err(|e| e.to_string())?;
            ensure(c == vec![1.0, 0.0], "centroid is the mean")?;
            let m = medoid(&anchors).map_err(|e| e.to_string())?;
            ensure(m.record_id == 2, "equidistant tie resolves to the lower id")
        }),
    );

    add(
        "head::init_prototypes",
        "reference",
        Box::new(|| {
            let mut rng = Rng::new(13);
            let anchors = random_anchor_set(8, &mut rng);
            let model = init_prototypes(&anchors, 1.0).map_err(|e| e.to_string())?;
            close(model.tau, 1.0, 0.0, "tau at init")?;
            for t in SemanticType::ALL {
                let row = model.prototypes.row(t.index());
                let found = anchors
                    .of_type(t)
                    .iter()
                    .any(|a| a.embedding.as_slice() == row);
                ensure(found, "every prototype equals a real training embedding")?;
            }
            let (v, _) = crate::loss::loss_medoid(&model, 1).map_err(|e| e.to_string())?;
            close(v, 0.0, 0.0, "medoid loss at init")
        }),
    );

    add(
        "head::distances_and_logits",
        "closed-form",
        Box::new(|| {
            let p = Mat64::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap();
            let d = distances(&[1.0, 0.0], &p).map_err(|e| e.to_string())?;
            close(d[0], 0.0, 0.0, "zero at the prototype")?;
            close(d[1], 0.5, 1e-15, "1/D offset")?;
            let l1 = prototype_logits(&d, 1.0).map_err(|e| e.to_string())?;
            let l2 = prototype_logits(&d, 0.5).map_err(|e| e.to_string())?;
            close(l2[1], 2.0 * l1[1], 1e-15, "halving τ doubles logits")
        }),
    );

    add(
        "head::class_logits",
        "oracle",
        Box::new(|| {
            let x = -0.7;
            let logits = vec![x, x, x, -5.0, -6.0, -7.0];
            let (non, _) = class_logits(&logits, &SemanticType::ALL).map_err(|e| e.to_string())?;
            close(non, x + 3f64.ln(), 1e-12, "three equal logits pool to x + ln 3")
        }),
    );

    add(
        "head::class_probabilities",
        "oracle",
        Box::new(|| {
            let (p0, p1) = class_probabilities((0.0, 3f64.ln()));
            close(p0, 0.25, 1e-14, "p0")?;
            close(p1, 0.75, 1e-14, "p1")
        }),
    );

    add(
        "head::prototype_distribution",
        "closed-form",
        Box::new(|| {
            let d = prototype_distribution(&[-0.3; 6]).map_err(|e| e.to_string())?;
            for v in d {
                close(v, 1.0 / 6.0, 1e-14, "uniform")?;
            }
            Ok(())
        }),
    );

    add(
        "head::predict",
        "closed-form",
        Box::new(|| {
            let mut rng = Rng::new(21);
            let anchors = random_anchor_set(8, &mut rng);
            let model = init_prototypes(&anchors, 1.0).map_err(|e| e.to_string())?;
            let z: Vec<f64> = model.prototypes.row(3).to_vec();
            let p = crate::head::predict(&z, &model, 0.5).map_err(|e| e.to_string())?;
            ensure(p.attributed_type == SemanticType::Pores, "attribution lands on the matched prototype")?;
            ensure((p.attributed_type.index()) < 6, "attribution in range")
        }),
    );

    add(
        "loss::terms_closed_form",
        "oracle",
        Box::new(|| {
            let w = crate::loss::class_weights_from_counts(2, 1).map_err(|e| e.to_string())?;
            close(w[0], 0.75, 1e-15, "w_nondefect at 2:1")?;
            close(w[1], 1.5, 1e-15, "w_defect at 2:1")?;
            // one-hot usage → closed form 5 for K=6
            let mut rng = Rng::new(31);
            let anchors = random_anchor_set(8, &mut rng);
            let mut model = init_prototypes(&anchors, 1.0).map_err(|e| e.to_string())?;
            // Put the sample exactly on prototype 0 and push others far.
            for k in 1..6 {
                for v in model.prototypes.row_mut(k) {
                    *v += 100.0;
                }
            }
            let z = Mat64::from_rows(&[model.prototypes.row(0).to_vec()]).unwrap();
            let labels = vec![Label::NonDefect];
            let batch = Batch::new(&z, &labels).map_err(|e| e.to_string())?;
            let state = crate::loss::head_state(&batch, &model).map_err(|e| e.to_string())?;
            let (usage, _) = crate::loss::loss_usage(&batch, &model, &state).map_err(|e| e.to_string())?;
            close(usage, 5.0, 1e-6, "all mass on one prototype")?;
            let (pull, _) = crate::loss::loss_pull(&batch, &model, &state).map_err(|e| e.to_string())?;
            close(pull, 0.0, 1e-12, "on-prototype pull")
        }),
    );

    add(
        "loss::total_recomposition",
        "reference",
        Box::new(|| {
            let weights = LossWeights::default();
            let inst = random_loss_instance(77, 8, 5, 1.0);
            let batch = Batch::new(&inst.z, &inst.labels).map_err(|e| e.to_string())?;
            let (breakdown, _) =
                total_loss(&batch, &inst.model, &inst.anchors, &weights, inst.class_weights)
                    .map_err(|e| e.to_string())?;
            let recomposed: f64 = weights
                .lambdas()
                .iter()
                .zip(&breakdown.values)
                .map(|(l, v)| l * v)
                .sum();
            close(breakdown.total, recomposed, 1e-10, "total = Σ λ·term")
        }),
    );

    for idx in 0..NUM_TERMS {
        let name: &'static str = Box::leak(format!("loss::gradcheck_{}", TERM_NAMES[idx]).into_boxed_str());
        add(
            name,
            "oracle",
            Box::new(move || {
                certify_gradient(Some(idx), 0..5, 8, 5, 1e-4, 1e-4).map(|_| ())
            }),
        );
    }

    add(
        "loss::gradcheck_total_50_seeds",
        "oracle",
        Box::new(|| certify_gradient(None, 0..50, 8, 5, 1e-4, 1e-4).map(|_| ())),
    );

    add(
        "train::adamw",
        "oracle",
        Box::new(|| {
            // Reference oracle: an independently written update loop.
            let mut opt = crate::train::AdamW::new();
            let g = opt.add_group(0.1, 0.0, &[1]).map_err(|e| e.to_string())?;
            let mut p = [1.0f64];
            let (mut m, mut v) = (0.0f64, 0.0f64);
            let mut p_ref = 1.0f64;
            for t in 1..=3 {
                let grad = 2.0 * p_ref; // d/dp p² at the reference point
                let grad_opt = 2.0 * p[0];
                opt.begin_step();
                opt.update(g, &mut [&mut p], &[&[grad_opt]]).map_err(|e| e.to_string())?;
                m = 0.9 * m + 0.1 * grad;
                v = 0.999 * v + 0.001 * grad * grad;
                let mh = m / (1.0 - 0.9f64.powi(t));
                let vh = v / (1.0 - 0.999f64.powi(t));
                p_ref -= 0.1 * mh / (vh.sqrt() + 1e-8);
                if (p[0] - p_ref).abs() > 1e-12 {
                    return Err(format!("step {t}: {} vs reference {}", p[0], p_ref));
                }
            }
            Ok(())
        }),
    );

    add(
        "train::plateau_step",
        "reference",
        Box::new(|| {
            let mut opt = crate::train::AdamW::new();
            let g = opt.add_group(1e-3, 0.0, &[1]).map_err(|e| e.to_string())?;
            let mut sched = crate::train::ScheduleState::default();
            sched.plateau_step(1.0, &mut opt).map_err(|e| e.to_string())?;
            for _ in 0..11 {
                sched.plateau_step(1.0, &mut opt).map_err(|e| e.to_string())?;
            }
            close(opt.lr(g), 5e-4, 1e-18, "halved exactly once after 11 flat epochs")
        }),
    );

    add(
        "train::early_stop",
        "closed-form",
        Box::new(|| {
            let history = vec![1.0; 51];
            let (stop, best) = crate::train::early_stop(&history, 50);
            ensure(stop, "constant history of length 51 stops")?;
            ensure(best == Some(0), "best epoch 0")?;
            let improving: Vec<f64> = (0..60).map(|i| 1.0 / (i + 1) as f64).collect();
            let (stop, best) = crate::train::early_stop(&improving, 50);
            ensure(!stop && best == Some(59), "monotone decreasing never stops")
        }),
    );

    add(
        "train::fit_baseline_head",
        "closed-form",
        Box::new(|| {
            let z = Mat64::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
            let labels = vec![Label::NonDefect, Label::Defect];
            let config = crate::train::TrainConfig {
                max_epochs: 0,
                ..crate::train::TrainConfig::default()
            };
            let (head, log) =
                crate::train::fit_baseline_head(&z, &labels, &z, &labels, &config).map_err(|e| e.to_string())?;
            ensure(log.epochs.is_empty(), "zero-epoch budget leaves the log empty")?;
            ensure(head.w == vec![0.0, 0.0] && head.b == 0.0, "initialized head returned")
        }),
    );

    add(
        "train::fit_prototype_model",
        "oracle",
        Box::new(|| {
            // Tiny separable file-backed instance: training must converge
            // to correct predictions and repeat bit-identically.
            let dim = 8;
            let mut rng = Rng::new(61);
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            let mut types = Vec::new();
            for t in SemanticType::ALL {
                for _ in 0..8 {
                    let mut e: Vec<f64> = (0..dim).map(|_| 0.3 * rng.normal()).collect();
                    e[t.index()] += 5.0;
                    if t.class() == Label::Defect {
                        e[6] += 4.0;
                    }
                    rows.push(e);
                    labels.push(t.class());
                    types.push(t);
                }
            }
            let mat = Mat64::from_rows(&rows).unwrap();
            let batch = crate::encoder::EmbeddingBatch::new(
                (0..mat.rows() as u32).collect(),
                mat.clone(),
            )
            .map_err(|e| e.to_string())?;
            let std = crate::encoder::fit_standardizer(&batch).map_err(|e| e.to_string())?;
            let mut per_type = Vec::new();
            for t in SemanticType::ALL {
                let anchors: Vec<Anchor> = (0..48)
                    .filter(|&i| types[i] == t)
                    .take(6)
                    .enumerate()
                    .map(|(j, i)| Anchor {
                        record_id: i as u32,
                        embedding: std.transform_vec(mat.row(i)).unwrap(),
                        edge: t.class() == Label::Defect && j < 3,
                    })
                    .collect();
                per_type.push(anchors);
            }
            let anchors = AnchorSet::new(per_type).map_err(|e| e.to_string())?;
            let config = crate::train::TrainConfig {
                max_epochs: 15,
                seed: 3,
                ..crate::train::TrainConfig::default()
            };
            let run = || {
                crate::train::fit_prototype_model(
                    crate::train::EmbeddingSource::Files {
                        train: &batch,
                        val: &batch,
                    },
                    &labels,
                    &labels,
                    &std,
                    &anchors,
                    &LossWeights::default(),
                    &config,
                )
                .map_err(|e| e.to_string())
            };
            let (model, log) = run()?;
            ensure(!log.diverged, "training must stay finite")?;
            let mut correct = 0;
            for (i, &label) in labels.iter().enumerate() {
                let z = std.transform_vec(mat.row(i)).unwrap();
                let p = crate::head::predict(&z, &model, 0.5).map_err(|e| e.to_string())?;
                correct += (p.label == label) as usize;
            }
            ensure(correct >= 46, "≥46/48 correct on the separable instance")?;
            let (again, _) = run()?;
            ensure(again.prototypes == model.prototypes, "seeded rerun is bit-identical")
        }),
    );

    add(
        "maps::export_projection_bundle",
        "closed-form",
        Box::new(|| {
            let dir = std::env::temp_dir().join(format!("pbundle-fixture-{}", std::process::id()));
            std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
            let path = dir.join("projection.pemb");
            let mut rng = Rng::new(71);
            let mut data = Mat64::zeros(4, 6);
            for v in data.data_mut() {
                *v = (rng.normal() as f32) as f64;
            }
            let batch = crate::encoder::EmbeddingBatch::new((0..4).collect(), data)
                .map_err(|e| e.to_string())?;
            let rows: Vec<crate::maps::ProjectionRow> = (0..4)
                .map(|i| crate::maps::ProjectionRow {
                    id: i as u32,
                    label: if i % 2 == 0 { Label::NonDefect } else { Label::Defect },
                    split: if i < 3 { crate::data::Split::Train } else { crate::data::Split::Test },
                    proto_index: i % 6,
                    flag: if i == 3 { "fp" } else { "" },
                })
                .collect();
            crate::maps::export_projection_bundle(&path, &batch, &rows).map_err(|e| e.to_string())?;
            let back = crate::encoder::load_embeddings(&path).map_err(|e| e.to_string())?;
            ensure(back.data == batch.data, "round trip returns identical matrices")?;
            let csv = std::fs::read_to_string(crate::encoder::companion_path(&path))
                .map_err(|e| e.to_string())?;
            ensure(csv.lines().count() == 5, "one row per record")?;
            ensure(csv.lines().last().unwrap().ends_with(",fp"), "flags only on test rows")
        }),
    );

    add(
        "eval::confusion_and_metrics_tables",
        "reference",
        Box::new(|| {
            for (counts, expect) in [
                ((147usize, 12usize, 254usize, 5usize), [0.959, 0.925, 0.967, 0.945, 0.955]),
                ((139, 5, 261, 13), [0.957, 0.965, 0.914, 0.939, 0.981]),
            ] {
                let m = crate::eval::metrics_from_confusion(&crate::eval::Confusion {
                    tp: counts.0,
                    fp: counts.1,
                    tn: counts.2,
                    fn_: counts.3,
                });
                let got = [
                    m.accuracy.unwrap(),
                    m.precision.unwrap(),
                    m.recall.unwrap(),
                    m.f1.unwrap(),
                    m.specificity.unwrap(),
                ];
                for (g, e) in got.iter().zip(&expect) {
                    close(*g, *e, 5e-4, "table cell")?;
                }
            }
            Ok(())
        }),
    );

    add(
        "eval::roc_pr_auc",
        "oracle",
        Box::new(|| {
            let separated = tiny_scored(&[
                (0, 0, 0.1),
                (1, 0, 0.2),
                (2, 1, 0.8),
                (3, 1, 0.9),
            ]);
            close(crate::eval::roc_auc(&separated).map_err(|e| e.to_string())?, 1.0, 0.0, "roc")?;
            close(crate::eval::pr_auc(&separated).map_err(|e| e.to_string())?, 1.0, 0.0, "pr")?;
            let flat = tiny_scored(&[(0, 0, 0.5), (1, 1, 0.5), (2, 0, 0.5), (3, 1, 0.5)]);
            close(crate::eval::roc_auc(&flat).map_err(|e| e.to_string())?, 0.5, 1e-12, "ties midrank")
        }),
    );

    add(
        "eval::ece_brier",
        "oracle",
        Box::new(|| {
            let perfect = tiny_scored(&[(0, 1, 1.0), (1, 1, 1.0)]);
            close(crate::eval::ece(&perfect, 15).map_err(|e| e.to_string())?, 0.0, 0.0, "ece")?;
            close(crate::eval::brier(&perfect).map_err(|e| e.to_string())?, 0.0, 0.0, "brier")?;
            let half = tiny_scored(&[(0, 0, 0.5), (1, 1, 0.5)]);
            close(crate::eval::ece(&half, 15).map_err(|e| e.to_string())?, 0.0, 1e-15, "balanced half")?;
            close(crate::eval::brier(&half).map_err(|e| e.to_string())?, 0.25, 1e-15, "brier half")
        }),
    );

    add(
        "eval::fit_temperature",
        "oracle",
        Box::new(|| {
            let mut rng = Rng::new(17);
            let mut logits = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..4000 {
                let l = 2.5 * rng.normal();
                let y = rng.next_f64() < 1.0 / (1.0 + (-l).exp());
                logits.push(2.0 * l); // overconfident by 2×
                labels.push(if y { Label::Defect } else { Label::NonDefect });
            }
            let t = crate::eval::fit_temperature(&logits, &labels).map_err(|e| e.to_string())?;
            ensure((t - 2.0).abs() / 2.0 < 0.05, "recovers the 2x miscalibration")
        }),
    );

    add(
        "eval::select_threshold",
        "oracle",
        Box::new(|| {
            let scored = tiny_scored(&[
                (0, 0, 0.1),
                (1, 0, 0.3),
                (2, 1, 0.7),
                (3, 1, 0.9),
            ]);
            let t = crate::eval::select_threshold(&scored).map_err(|e| e.to_string())?;
            close(t, 0.5, 1e-12, "midpoint of the separating gap")
        }),
    );

    add(
        "eval::bootstrap_ci",
        "closed-form",
        Box::new(|| {
            let scored = tiny_scored(&[(0, 1, 1.0), (1, 1, 1.0), (2, 1, 1.0)]);
            let ci = crate::eval::bootstrap_ci(&scored, 0.5, 200, &Rng::new(5)).map_err(|e| e.to_string())?;
            let (lo, hi) = ci.intervals["accuracy"];
            close(lo, 1.0, 0.0, "degenerate lo")?;
            close(hi, 1.0, 0.0, "degenerate hi")?;
            let again = crate::eval::bootstrap_ci(&scored, 0.5, 200, &Rng::new(5)).map_err(|e| e.to_string())?;
            ensure(again.intervals == ci.intervals, "fixed seed reproduces intervals")
        }),
    );

    add(
        "maps::tile",
        "closed-form",
        Box::new(|| {
            let g = crate::maps::tile(930, 1485, 64).map_err(|e| e.to_string())?;
            ensure(g.origins.len() == 322, "930x1485 at stride 64 gives 322 windows")?;
            let g32 = crate::maps::tile(930, 1485, 32).map_err(|e| e.to_string())?;
            ensure(g32.origins.len() == 28 * 45, "stride 32 gives 28x45")?;
            let single = crate::maps::tile(64, 64, 7).map_err(|e| e.to_string())?;
            ensure(single.origins.len() == 1, "64x64 has one origin")
        }),
    );

    add(
        "maps::aggregate_majority",
        "closed-form",
        Box::new(|| {
            let map = crate::maps::DefectMap {
                height: 128,
                width: 128,
                stride: 32,
                threshold: 0.5,
                model_checksum: 0,
                records: crate::maps::tile(128, 128, 32)
                    .unwrap()
                    .origins
                    .iter()
                    .map(|&(row, col)| crate::maps::MapRecord {
                        row,
                        col,
                        p_defect: 1.0,
                        label: Label::Defect,
                        proto_index: 3,
                    })
                    .collect(),
            };
            let px = crate::maps::aggregate_majority(&map).map_err(|e| e.to_string())?;
            ensure(px.data[64 * 128 + 64] == crate::maps::PIXEL_DEFECT, "interior pixel defect")?;
            ensure(px.uncovered == 0, "full coverage")
        }),
    );

    add(
        "maps::nearest_anchors",
        "oracle",
        Box::new(|| {
            let mut rng = Rng::new(2);
            let anchors = random_anchor_set(8, &mut rng);
            let model = init_prototypes(&anchors, 1.0).map_err(|e| e.to_string())?;
            let mut data = Mat64::zeros(10, 8);
            for v in data.data_mut() {
                *v = rng.normal();
            }
            data.row_mut(4).copy_from_slice(model.prototypes.row(2));
            let batch = crate::encoder::EmbeddingBatch::new((0..10).collect(), data).map_err(|e| e.to_string())?;
            let na = crate::maps::nearest_anchors(&model, &batch, 3).map_err(|e| e.to_string())?;
            ensure(na.per_prototype[2][0].0 == 4, "exact match ranks first")?;
            close(na.per_prototype[2][0].1, 0.0, 0.0, "distance zero")
        }),
    );

    add(
        "maps::predict_map_and_export",
        "oracle",
        Box::new(|| {
            // Pure-air slice: everything non-defect, attributed to air,
            // provided the model's air prototype matches air patches.
            let spec = crate::data::SynthSpec::pure_air(1, 128, 196);
            let (vol, _) = crate::data::generate_synthetic_volume(&spec, &mut Rng::new(3)).map_err(|e| e.to_string())?;
            let mut rng = Rng::new(8);
            let encoder = crate::encoder::CompactEncoder::new(8, &mut rng).map_err(|e| e.to_string())?;
            // Standardizer fitted on embeddings of patches from this slice.
            let patches = crate::data::sample_patches(&vol, 16, &mut Rng::new(4)).map_err(|e| e.to_string())?;
            let mut emb = Mat64::zeros(16, 8);
            for (i, p) in patches.iter().enumerate() {
                let n = crate::data::normalize_patch(p);
                emb.row_mut(i).copy_from_slice(&encoder.forward(&n.tile).map_err(|e| e.to_string())?);
            }
            let batch = crate::encoder::EmbeddingBatch::new((0..16).collect(), emb).map_err(|e| e.to_string())?;
            let std = crate::encoder::fit_standardizer(&batch).map_err(|e| e.to_string())?;
            // Anchors: air anchors at the actual air embedding, everything else far away.
            let air_z = std.transform_vec(batch.data.row(0)).map_err(|e| e.to_string())?;
            let mut per_type = Vec::new();
            for (ti, t) in SemanticType::ALL.iter().enumerate() {
                let mut anchors = Vec::new();
                for a in 0..6 {
                    let mut e = air_z.clone();
                    if ti != 0 {
                        for v in e.iter_mut() {
                            *v += 50.0 * ti as f64;
                        }
                    }
                    anchors.push(Anchor {
                        record_id: (ti * 6 + a) as u32,
                        embedding: e,
                        edge: t.class() == Label::Defect && a < 3,
                    });
                }
                per_type.push(anchors);
            }
            let model = init_prototypes(&AnchorSet::new(per_type).map_err(|e| e.to_string())?, 1.0)
                .map_err(|e| e.to_string())?;
            let embedder = crate::encoder::Embedder::Network(&encoder);
            let map = crate::maps::predict_map(&vol, 0, &model, &embedder, &std, 64, 0.5, 1)
                .map_err(|e| e.to_string())?;
            ensure(
                map.records.iter().all(|r| r.label == Label::NonDefect),
                "pure air classifies non-defect",
            )?;
            ensure(
                map.records.iter().all(|r| r.proto_index == 0),
                "pure air attributes to the air prototype",
            )?;
            ensure(
                map.records.iter().all(|r| r.proto_index < 6),
                "attribution in range",
            )
        }),
    );

    add(
        "head::identity_1000_instances",
        "closed-form",
        Box::new(|| head_identity_check(1000, 99).map(|_| ())),
    );

    add(
        "head::medoid_oracle_200_trials",
        "oracle",
        Box::new(|| medoid_oracle_check(200, 123)),
    );

    add(
        "bench::head_throughput",
        "oracle",
        Box::new(|| {
            let rate = head_throughput(20_000);
            // Diagnostic: printed, not gated beyond a sanity floor.
            println!("# head throughput: {rate:.0} predictions/s");
            ensure(rate > 1000.0, "head inference unexpectedly slow")
        }),
    );

    out
}

fn auto_label_low_intensity_helper(
    patches: Vec<crate::data::Patch>,
) -> (Vec<crate::data::Patch>, Vec<crate::data::Patch>) {
    crate::data::auto_label_low_intensity(patches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_passes() {
        let report = run_suite("");
        for (name, msg) in &report.failures {
            eprintln!("FIXTURE FAILED {name}: {msg}");
        }
        assert_eq!(report.failed, 0, "{} fixtures failed", report.failed);
        assert_eq!(report.total, report.passed);
    }

    #[test]
    fn filter_matching_nothing_fails() {
        let report = run_suite("no-such-fixture-name");
        assert_eq!(report.failed, 1);
    }
}
