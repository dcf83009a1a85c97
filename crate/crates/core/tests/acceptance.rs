//! Acceptance suite: ten checks covering the loss oracles, gradient
//! correctness, k-NN and metrics oracles, the data pipeline, the synthetic
//! end-to-end benchmark, fusion, CSV reproducibility, and confidence
//! intervals. One PASS/FAIL line is printed per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use guided_dml::data::{
    extract_patches, generate_synthetic_dataset, split_dataset, ClassSet, DatasetSplit,
    PatchOptions, SourceImage, SyntheticSpec, View,
};
use guided_dml::eval::{
    aggregate_seeds, compute_metrics, knn_classify, EmbeddingSet, MetricsRow, Provenance, SplitTag,
};
use guided_dml::fusion::{
    fuse_concat, fuse_stack_maxpool, pair_views, train_fusion, FusionConfig, FusionStrategy,
};
use guided_dml::losses::{
    contrastive_loss, contrastive_loss_with_grad, gemini_loss, gemini_loss_with_grad, hybrid_loss,
    hybrid_loss_with_grad, triplet_margin_loss, triplet_margin_loss_with_grad, ContrastivePair,
    GeminiItem, GeminiLossParams, HybridItem, HybridLossParams, TripletItem,
};
use guided_dml::models::{StudentConfig, StudentModel, TeacherConfig};
use guided_dml::training::{
    compute_distillation_targets, heldout_triplet_margin, student_embeddings, train_student,
    train_teacher, RunConfig,
};

#[test]
fn acceptance() {
    let criteria: &[(&str, fn())] = &[
        ("loss oracles", c1_loss_oracles),
        ("gradient finite-difference suite", c2_gradient_suite),
        ("k-NN oracle equivalence", c3_knn_oracle),
        ("metrics identity", c4_metrics_identity),
        ("data pipeline", c5_datapipe),
        ("synthetic end-to-end benchmark", c6_synthetic_benchmark),
        ("comparative ordering vs untrained baseline", c7_comparative_ordering),
        ("multi-view fusion", c8_fusion),
        ("CSV reproducibility", c9_reproducibility),
        ("confidence-interval aggregation", c10_confidence_intervals),
    ];
    let mut failures = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("criterion {} ({name}): PASS", i + 1),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panic".into());
                println!("criterion {} ({name}): FAIL — {msg}", i + 1);
                failures.push(format!("criterion {} ({name}): {msg}", i + 1));
            }
        }
    }
    assert!(failures.is_empty(), "{} criterion(s) failed:\n{}", failures.len(), failures.join("\n"));
}

// ---------------------------------------------------------------- criterion 1

fn c1_loss_oracles() {
    let params = GeminiLossParams { beta: 0.5, margin: 1.0 };
    let gemini = |f_a: f64, f_p: f64, g_a: f64, g_p: f64, g_n: f64| GeminiItem {
        f_anchor: vec![f_a],
        f_positive: vec![f_p],
        g_anchor: vec![g_a],
        g_positive: vec![g_p],
        g_negative: vec![g_n],
    };
    // M = d(g_a,g_p) + 1 = 2; hinge [2 - 2]+ = 0; loss = 0.5 * 3.
    let loss = gemini_loss(&[gemini(0.0, 3.0, 0.0, 1.0, 2.0)], &params).unwrap();
    assert!((loss - 1.5).abs() < 1e-5, "expected 1.5, got {loss}");
    // Negative at 1.5: hinge = 0.5; loss = 1.5 + 0.5 * 0.5.
    let loss = gemini_loss(&[gemini(0.0, 3.0, 0.0, 1.0, 1.5)], &params).unwrap();
    assert!((loss - 1.75).abs() < 1e-5, "expected 1.75, got {loss}");

    // gamma * ||z - z_hat|| + CE over uniform 6-way logits = 0.5 + ln 6.
    let item = HybridItem { z: vec![1.0, 0.0], z_hat: vec![0.0, 0.0], y: 2, logits: vec![0.0; 6] };
    let loss = hybrid_loss(&[item], &HybridLossParams { gamma: 0.5 }).unwrap();
    assert!((loss - 2.29176).abs() < 1e-5, "expected 2.29176, got {loss}");

    // Contrastive: similar identical pair -> 0; dissimilar beyond margin -> 0;
    // dissimilar at 0.5 under margin 1 -> (1 - 0.5)^2 = 0.25.
    let same = ContrastivePair { e1: vec![1.0, 2.0], e2: vec![1.0, 2.0], same: true };
    assert_eq!(contrastive_loss(&[same], 1.0).unwrap(), 0.0);
    let far = ContrastivePair { e1: vec![0.0], e2: vec![2.0], same: false };
    assert_eq!(contrastive_loss(&[far], 1.0).unwrap(), 0.0);
    let near = ContrastivePair { e1: vec![0.0], e2: vec![0.5], same: false };
    assert_eq!(contrastive_loss(&[near], 1.0).unwrap(), 0.25);

    // Triplet: d(a,p)=1, d(a,n)=1.5, margin 1 -> 0.5; satisfied case -> 0.
    let t = |ap: f64, an: f64| TripletItem {
        anchor: vec![0.0],
        positive: vec![ap],
        negative: vec![an],
    };
    assert_eq!(triplet_margin_loss(&[t(1.0, 1.5)], 1.0).unwrap(), 0.5);
    assert_eq!(triplet_margin_loss(&[t(1.0, 3.0)], 1.0).unwrap(), 0.0);
}

// ---------------------------------------------------------------- criterion 2

const FD_H: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-3;

/// Central finite differences of `f` at `theta` against `analytic`;
/// relative error measured as a vector-norm ratio.
fn check_fd(f: &dyn Fn(&[f64]) -> f64, theta: &[f64], analytic: &[f64], what: &str) {
    let mut fd = vec![0.0; theta.len()];
    let mut t = theta.to_vec();
    for i in 0..theta.len() {
        t[i] = theta[i] + FD_H;
        let up = f(&t);
        t[i] = theta[i] - FD_H;
        let down = f(&t);
        t[i] = theta[i];
        fd[i] = (up - down) / (2.0 * FD_H);
    }
    let diff: f64 = analytic.iter().zip(&fd).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let scale = analytic
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(fd.iter().map(|v| v * v).sum::<f64>().sqrt())
        .max(1e-8);
    assert!(
        diff / scale < FD_TOL,
        "{what}: relative gradient error {} exceeds {FD_TOL}",
        diff / scale
    );
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn c2_gradient_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let dim = 4;

    // Coupled teacher loss.
    let params = GeminiLossParams { beta: 0.4, margin: 0.7 };
    let mut done = 0;
    while done < 50 {
        let item = GeminiItem {
            f_anchor: rand_vec(&mut rng, dim),
            f_positive: rand_vec(&mut rng, dim),
            g_anchor: rand_vec(&mut rng, dim),
            g_positive: rand_vec(&mut rng, dim),
            g_negative: rand_vec(&mut rng, dim),
        };
        let d_fp = dist(&item.f_anchor, &item.f_positive);
        let d_gp = dist(&item.g_anchor, &item.g_positive);
        let d_gn = dist(&item.g_anchor, &item.g_negative);
        let hinge_arg = d_gp + params.margin - d_gn;
        if d_fp < KINK_MARGIN || d_gp < KINK_MARGIN || d_gn < KINK_MARGIN
            || hinge_arg.abs() < KINK_MARGIN
        {
            continue;
        }
        let theta: Vec<f64> = [
            &item.f_anchor[..],
            &item.f_positive,
            &item.g_anchor,
            &item.g_positive,
            &item.g_negative,
        ]
        .concat();
        let f = |t: &[f64]| {
            let item = GeminiItem {
                f_anchor: t[0..dim].to_vec(),
                f_positive: t[dim..2 * dim].to_vec(),
                g_anchor: t[2 * dim..3 * dim].to_vec(),
                g_positive: t[3 * dim..4 * dim].to_vec(),
                g_negative: t[4 * dim..5 * dim].to_vec(),
            };
            gemini_loss(&[item], &params).unwrap()
        };
        let (_, grads) = gemini_loss_with_grad(&[item], &params).unwrap();
        let g = &grads[0];
        let analytic: Vec<f64> =
            [&g.f_anchor[..], &g.f_positive, &g.g_anchor, &g.g_positive, &g.g_negative].concat();
        check_fd(&f, &theta, &analytic, "teacher loss");
        done += 1;
    }

    // Hybrid distillation loss.
    let hparams = HybridLossParams { gamma: 0.6 };
    let mut done = 0;
    while done < 50 {
        let z = rand_vec(&mut rng, dim);
        let z_hat = rand_vec(&mut rng, dim);
        if dist(&z, &z_hat) < KINK_MARGIN {
            continue;
        }
        let logits = rand_vec(&mut rng, 6);
        let y = rng.gen_range(0..6);
        let theta: Vec<f64> = [&z[..], &z_hat, &logits].concat();
        let f = |t: &[f64]| {
            let item = HybridItem {
                z: t[0..dim].to_vec(),
                z_hat: t[dim..2 * dim].to_vec(),
                y,
                logits: t[2 * dim..2 * dim + 6].to_vec(),
            };
            hybrid_loss(&[item], &hparams).unwrap()
        };
        let (_, grads) =
            hybrid_loss_with_grad(&[HybridItem { z, z_hat, y, logits }], &hparams).unwrap();
        let g = &grads[0];
        let analytic: Vec<f64> = [&g.z[..], &g.z_hat, &g.logits].concat();
        check_fd(&f, &theta, &analytic, "hybrid loss");
        done += 1;
    }

    // Contrastive loss, alternating similar/dissimilar pairs.
    let margin = 1.0;
    let mut done = 0;
    while done < 50 {
        let e1 = rand_vec(&mut rng, dim);
        let e2 = rand_vec(&mut rng, dim);
        let same = done % 2 == 0;
        let d = dist(&e1, &e2);
        if d < KINK_MARGIN || (!same && (margin - d).abs() < KINK_MARGIN) {
            continue;
        }
        let theta: Vec<f64> = [&e1[..], &e2].concat();
        let f = |t: &[f64]| {
            let pair = ContrastivePair {
                e1: t[0..dim].to_vec(),
                e2: t[dim..2 * dim].to_vec(),
                same,
            };
            contrastive_loss(&[pair], margin).unwrap()
        };
        let (_, grads) =
            contrastive_loss_with_grad(&[ContrastivePair { e1, e2, same }], margin).unwrap();
        let analytic: Vec<f64> = [&grads[0].e1[..], &grads[0].e2].concat();
        check_fd(&f, &theta, &analytic, "contrastive loss");
        done += 1;
    }

    // Triplet margin loss.
    let mut done = 0;
    while done < 50 {
        let item = TripletItem {
            anchor: rand_vec(&mut rng, dim),
            positive: rand_vec(&mut rng, dim),
            negative: rand_vec(&mut rng, dim),
        };
        let d_ap = dist(&item.anchor, &item.positive);
        let d_an = dist(&item.anchor, &item.negative);
        if d_ap < KINK_MARGIN
            || d_an < KINK_MARGIN
            || (d_ap - d_an + margin).abs() < KINK_MARGIN
        {
            continue;
        }
        let theta: Vec<f64> = [&item.anchor[..], &item.positive, &item.negative].concat();
        let f = |t: &[f64]| {
            let item = TripletItem {
                anchor: t[0..dim].to_vec(),
                positive: t[dim..2 * dim].to_vec(),
                negative: t[2 * dim..3 * dim].to_vec(),
            };
            triplet_margin_loss(&[item], margin).unwrap()
        };
        let (_, grads) = triplet_margin_loss_with_grad(&[item], margin).unwrap();
        let g = &grads[0];
        let analytic: Vec<f64> = [&g.anchor[..], &g.positive, &g.negative].concat();
        check_fd(&f, &theta, &analytic, "triplet loss");
        done += 1;
    }
}

// ---------------------------------------------------------------- criterion 3

/// Independent brute-force k-NN: full sort of all squared distances with
/// index tiebreak, majority vote, vote ties resolved by the class of the
/// nearest tied neighbor.
fn brute_force_knn(
    train: &[Vec<f64>],
    labels: &[usize],
    query: &[f64],
    k: usize,
) -> usize {
    let mut all: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, t)| (t.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let k_eff = k.min(all.len());
    let neighbors = &all[..k_eff];
    let mut counts = std::collections::HashMap::new();
    for &(_, i) in neighbors {
        *counts.entry(labels[i]).or_insert(0usize) += 1;
    }
    let best = *counts.values().max().unwrap();
    for &(_, i) in neighbors {
        if counts[&labels[i]] == best {
            return labels[i];
        }
    }
    unreachable!()
}

fn c3_knn_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (n_train, n_test, d) = (200, 50, 8);
    for instance in 0..1000 {
        let n_classes = rng.gen_range(2..=6);
        // Coordinates on a coarse grid so exact distance ties occur.
        let grid_val = |rng: &mut ChaCha8Rng| rng.gen_range(-4i32..=4) as f64 * 0.5;
        let mut train: Vec<Vec<f64>> = (0..n_train)
            .map(|_| (0..d).map(|_| grid_val(&mut rng)).collect())
            .collect();
        // Sprinkle exact duplicates to force index tiebreaks.
        for _ in 0..10 {
            let src = rng.gen_range(0..n_train);
            let dst = rng.gen_range(0..n_train);
            train[dst] = train[src].clone();
        }
        let labels: Vec<usize> = (0..n_train).map(|_| rng.gen_range(0..n_classes)).collect();
        let test: Vec<Vec<f64>> = (0..n_test)
            .map(|_| (0..d).map(|_| grid_val(&mut rng)).collect())
            .collect();

        let to_set = |rows: &[Vec<f64>], labels: Vec<usize>, split: SplitTag| {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            EmbeddingSet::new(
                Array2::from_shape_vec((rows.len(), d), flat).unwrap(),
                labels,
                split,
                Provenance { model_id: "oracle".into(), seed: instance, embedding_dim: d },
            )
            .unwrap()
        };
        let train_set = to_set(&train, labels.clone(), SplitTag::Train);
        let test_set = to_set(&test, vec![0; n_test], SplitTag::Test);
        for &k in &[1usize, 3, 5, 7, 10, 100, 1000] {
            let got = knn_classify(&train_set, &test_set, k).unwrap();
            for (qi, q) in test.iter().enumerate() {
                let want = brute_force_knn(&train, &labels, q, k);
                assert_eq!(
                    got[qi], want,
                    "instance {instance}, k={k}, query {qi}: got {} want {want}",
                    got[qi]
                );
            }
        }
    }
}

// ---------------------------------------------------------------- criterion 4

fn c4_metrics_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..100 {
        let n = rng.gen_range(1..300);
        let c = rng.gen_range(2..8);
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let row = compute_metrics(&truth, &pred, c).unwrap();
        assert!(
            (row.recall - row.accuracy).abs() <= 1e-12,
            "recall {} != accuracy {}",
            row.recall,
            row.accuracy
        );
    }

    // Hand confusion matrix:
    //   true 0 (support 4): 3 correct, 1 -> class 1
    //   true 1 (support 3): 1 -> class 0, 2 correct
    //   true 2 (support 3): 1 -> class 1, 2 correct
    let truth = vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2];
    let pred = vec![0, 0, 0, 1, 0, 1, 1, 1, 2, 2];
    let row = compute_metrics(&truth, &pred, 3).unwrap();
    assert!((row.accuracy - 0.7).abs() < 1e-12);
    let precision = 0.4 * 0.75 + 0.3 * 0.5 + 0.3 * 1.0;
    assert!((row.precision - precision).abs() < 1e-12);
    let recall = 0.4 * 0.75 + 0.3 * (2.0 / 3.0) + 0.3 * (2.0 / 3.0);
    assert!((row.recall - recall).abs() < 1e-12);
    let f = |p: f64, r: f64| 2.0 * p * r / (p + r);
    let f1 = 0.4 * f(0.75, 0.75) + 0.3 * f(0.5, 2.0 / 3.0) + 0.3 * f(1.0, 2.0 / 3.0);
    assert!((row.f1 - f1).abs() < 1e-12);
}

// ---------------------------------------------------------------- criterion 5

fn c5_datapipe() {
    // Full-HD frame with smooth but non-constant channels.
    let mut pixels = Array3::<u8>::zeros((1080, 1920, 3));
    for ((y, x, c), v) in pixels.indexed_iter_mut() {
        *v = ((x * 7 + y * 13 + c * 31) % 251) as u8;
    }
    let classes = ClassSet::default_stones();
    let img = SourceImage::new(
        "fullhd".into(),
        pixels,
        classes.label(0).unwrap(),
        View::Sur,
        None,
    )
    .unwrap();
    let opts = PatchOptions::default();
    let patches = extract_patches(&img, &opts).unwrap();
    assert_eq!(patches.len(), 32, "expected 32 patches, got {}", patches.len());

    // Pairwise overlap: grid positions translate to pixel offsets via the
    // stride; any two distinct patches overlap by at most 20 px along at
    // least one axis.
    let stride = opts.stride();
    let ps = opts.patch_size as i64;
    for a in &patches {
        for b in &patches {
            if a.patch_id == b.patch_id {
                continue;
            }
            let dy = ((a.grid_position.0 * stride) as i64 - (b.grid_position.0 * stride) as i64).abs();
            let dx = ((a.grid_position.1 * stride) as i64 - (b.grid_position.1 * stride) as i64).abs();
            let oy = (ps - dy).max(0);
            let ox = (ps - dx).max(0);
            assert!(
                oy.min(ox) <= 20,
                "patches {} and {} overlap {}x{} px",
                a.patch_id,
                b.patch_id,
                oy,
                ox
            );
        }
    }

    // Whitening: per-channel mean ~ 0 and std ~ 1 on every patch.
    for patch in &patches {
        let (h, w, _) = patch.values.dim();
        let n = (h * w) as f64;
        for c in 0..3 {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for y in 0..h {
                for x in 0..w {
                    let v = patch.values[[y, x, c]] as f64;
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / n;
            let std = (sum_sq / n - mean * mean).sqrt();
            assert!(mean.abs() <= 1e-5, "channel {c} mean {mean}");
            assert!((std - 1.0).abs() <= 1e-5, "channel {c} std {std}");
        }
    }

    // Leakage-free splits across 50 seeds.
    let spec = SyntheticSpec {
        n_classes: 3,
        images_per_class: 6,
        image_size: (64, 64),
        seed: 5,
        view: View::Sur,
    };
    let images = generate_synthetic_dataset(&spec, &classes).unwrap();
    let split_opts = PatchOptions { patch_size: 32, max_overlap: 4, mask_threshold: 0.5 };
    for seed in 0..50 {
        let split = split_dataset(&images, 0.8, seed, &split_opts).unwrap();
        let train_sources: std::collections::HashSet<&str> =
            split.train.iter().map(|p| p.source_image_id.as_str()).collect();
        let test_sources: std::collections::HashSet<&str> =
            split.test.iter().map(|p| p.source_image_id.as_str()).collect();
        assert!(
            train_sources.is_disjoint(&test_sources),
            "seed {seed}: a source image appears on both sides"
        );
    }
}

// ------------------------------------------------- criteria 6-8 (benchmark)

struct Benchmark {
    distilled_acc: Vec<f64>,
    margins: Vec<f64>,
    untrained_acc: Vec<f64>,
    sec_acc: f64,
    fused_concat_acc: f64,
    fused_stack_acc: f64,
    elapsed_secs: f64,
}

static BENCHMARK: OnceLock<Benchmark> = OnceLock::new();

const BENCH_SEEDS: [u64; 3] = [0, 1, 2];

fn bench_split(view: View, seed: u64) -> DatasetSplit {
    let classes = ClassSet::default_stones();
    let spec = SyntheticSpec {
        n_classes: 6,
        images_per_class: 20,
        image_size: (512, 512),
        seed: 42,
        view,
    };
    let images = generate_synthetic_dataset(&spec, &classes).unwrap();
    split_dataset(&images, 0.8, seed, &PatchOptions::default()).unwrap()
}

fn knn_accuracy(model: &StudentModel, split: &DatasetSplit, seed: u64) -> f64 {
    let train = student_embeddings(model, &split.train, SplitTag::Train, "bench", seed).unwrap();
    let test = student_embeddings(model, &split.test, SplitTag::Test, "bench", seed).unwrap();
    let predictions = knn_classify(&train, &test, 5).unwrap();
    let truth: Vec<usize> = split.test.iter().map(|p| p.label.index).collect();
    compute_metrics(&truth, &predictions, 6).unwrap().accuracy * 100.0
}

fn train_distilled(split: &DatasetSplit, dim: usize, seed: u64) -> StudentModel {
    let teacher_cfg = TeacherConfig {
        n_classes: 6,
        embedding_dim: dim,
        stream_channels: (8, 16),
        hidden_dim: 64,
        input_downsample: 16,
        patch_size: 256,
    };
    let run_cfg = RunConfig { seed, epochs: 12, learning_rate: 1e-3, batch_size: 32 };
    let teacher = train_teacher(split, &teacher_cfg, &GeminiLossParams::default(), &run_cfg)
        .unwrap();
    let targets = compute_distillation_targets(&teacher.model, split).unwrap();
    let student_cfg = StudentConfig {
        embedding_dim: dim,
        n_classes: 6,
        width: 12,
        input_downsample: 16,
        patch_size: 256,
    };
    train_student(split, &targets, &student_cfg, &HybridLossParams::default(), &run_cfg)
        .unwrap()
        .model
}

fn benchmark() -> &'static Benchmark {
    BENCHMARK.get_or_init(|| {
        let start = Instant::now();
        let mut distilled_acc = Vec::new();
        let mut margins = Vec::new();
        let mut untrained_acc = Vec::new();
        let mut sur_seed0: Option<(StudentModel, DatasetSplit)> = None;
        for &seed in &BENCH_SEEDS {
            let split = bench_split(View::Sur, seed);
            let model = train_distilled(&split, 32, seed);
            let acc = knn_accuracy(&model, &split, seed);
            let margin = heldout_triplet_margin(&model, &split.test, 200, seed ^ 0xBEEF).unwrap();
            let untrained = StudentModel::new(
                StudentConfig {
                    embedding_dim: 32,
                    n_classes: 6,
                    width: 12,
                    input_downsample: 16,
                    patch_size: 256,
                },
                seed,
            )
            .unwrap();
            let base_acc = knn_accuracy(&untrained, &split, seed);
            println!(
                "  [bench] seed {seed}: distilled {acc:.2}%, untrained {base_acc:.2}%, margin {margin:.4}"
            );
            distilled_acc.push(acc);
            margins.push(margin);
            untrained_acc.push(base_acc);
            if seed == BENCH_SEEDS[0] {
                sur_seed0 = Some((model, split));
            }
        }

        // Section view for fusion: one seed, a smaller embedding.
        let (sur_model, sur_split) = sur_seed0.unwrap();
        let sec_split = bench_split(View::Sec, BENCH_SEEDS[0]);
        let sec_model = train_distilled(&sec_split, 16, BENCH_SEEDS[0]);
        let sec_acc = knn_accuracy(&sec_model, &sec_split, BENCH_SEEDS[0]);
        let train_pairs = pair_views(&sur_split.train, &sec_split.train, 0).unwrap();
        let test_pairs = pair_views(&sur_split.test, &sec_split.test, 1).unwrap();
        let fuse_acc = |strategy: FusionStrategy| {
            let cfg = FusionConfig { strategy, seed: 0, epochs: 40, ..Default::default() };
            train_fusion(&train_pairs, &test_pairs, &sur_model, &sec_model, &cfg)
                .unwrap()
                .metrics
                .accuracy
                * 100.0
        };
        let fused_concat_acc = fuse_acc(FusionStrategy::Concat);
        let fused_stack_acc = fuse_acc(FusionStrategy::StackMaxpool);
        let elapsed_secs = start.elapsed().as_secs_f64();
        println!(
            "  [bench] sec {sec_acc:.2}%, fused concat {fused_concat_acc:.2}%, fused stack {fused_stack_acc:.2}%, elapsed {elapsed_secs:.0}s"
        );
        Benchmark {
            distilled_acc,
            margins,
            untrained_acc,
            sec_acc,
            fused_concat_acc,
            fused_stack_acc,
            elapsed_secs,
        }
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c6_synthetic_benchmark() {
    let b = benchmark();
    let acc = mean(&b.distilled_acc);
    assert!(
        acc >= 90.0,
        "mean distilled k-NN accuracy {acc:.2}% < 90% (per seed: {:?})",
        b.distilled_acc
    );
    let margin = mean(&b.margins);
    assert!(margin > 0.0, "mean held-out triplet margin {margin:.4} not positive");
    assert!(
        b.elapsed_secs <= 900.0,
        "benchmark took {:.0}s, over the 15-minute budget",
        b.elapsed_secs
    );
}

fn c7_comparative_ordering() {
    let b = benchmark();
    let distilled = mean(&b.distilled_acc);
    let untrained = mean(&b.untrained_acc);
    assert!(
        distilled - untrained >= 20.0,
        "distilled {distilled:.2}% beats untrained {untrained:.2}% by only {:.2} points",
        distilled - untrained
    );
}

fn c8_fusion() {
    // Dimension law: 128 + 16 -> 144, surface first.
    let sur: Vec<f64> = (0..128).map(|i| i as f64 * 0.25).collect();
    let sec: Vec<f64> = (0..16).map(|i| -(i as f64)).collect();
    let fused = fuse_concat(&sur, &sec).unwrap();
    assert_eq!(fused.len(), 144);
    assert_eq!(&fused[..128], &sur[..]);
    assert_eq!(&fused[128..], &sec[..]);

    // Hand-computed 2x2x3 stack-and-max example.
    let surface = Array3::from_shape_vec(
        (2, 2, 3),
        vec![1.0, 5.0, 2.0, -1.0, -2.0, -3.0, 0.0, 0.0, 7.0, 3.0, 1.0, 2.0],
    )
    .unwrap();
    let section = Array3::from_shape_vec(
        (2, 2, 3),
        vec![4.0, 0.0, 1.0, 2.0, 6.0, 0.0, -9.0, -9.0, -9.0, 3.5, 0.0, 0.0],
    )
    .unwrap();
    assert_eq!(
        fuse_stack_maxpool(&surface, &section).unwrap(),
        vec![5.0, 6.0, 7.0, 3.5]
    );

    // Fused accuracy keeps up with the best single view on the benchmark.
    let b = benchmark();
    let best_single = b.distilled_acc[0].max(b.sec_acc);
    let best_fused = b.fused_concat_acc.max(b.fused_stack_acc);
    assert!(
        best_fused >= best_single - 2.0,
        "fused {best_fused:.2}% trails best single view {best_single:.2}% by more than 2 points"
    );
}

// ---------------------------------------------------------------- criterion 9

fn c9_reproducibility() {
    use guided_dml::commands::{cmd_eval, cmd_prepare, cmd_train, TrainTarget};
    use guided_dml::manifest::ExperimentManifest;

    let run_once = |dir: &std::path::Path| -> (String, String) {
        let text = format!(
            r#"
            [dataset]
            source = "synthetic"
            n_classes = 2
            images_per_class = 6
            image_size = [32, 32]
            patch_size = 32
            max_overlap = 4
            train_fraction = 0.75

            [model]
            embedding_dim = 8
            student_width = 4
            teacher_hidden_dim = 16
            teacher_stream_channels = [4, 6]
            input_downsample = 4

            [loss]
            epochs = 3

            [sweep]
            embedding_dims = [8]
            k_values = [1, 5]
            seeds = [0, 1]

            [output]
            dir = "{}"
            "#,
            dir.display()
        );
        let manifest: ExperimentManifest = toml::from_str(&text).unwrap();
        manifest.validate().unwrap();
        cmd_prepare(&manifest).unwrap();
        cmd_train(&manifest, TrainTarget::Teacher).unwrap();
        cmd_train(&manifest, TrainTarget::Student).unwrap();
        let outputs = cmd_eval(&manifest).unwrap();
        (
            std::fs::read_to_string(&outputs.results_csv).unwrap(),
            std::fs::read_to_string(&outputs.pca_csv).unwrap(),
        )
    };

    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let (results_a, pca_a) = run_once(dir_a.path());
    let (results_b, pca_b) = run_once(dir_b.path());
    assert_eq!(results_a, results_b, "results CSVs differ between identical runs");
    assert_eq!(pca_a, pca_b, "PCA scatter CSVs differ between identical runs");
}

// --------------------------------------------------------------- criterion 10

fn c10_confidence_intervals() {
    let row = |v: f64| MetricsRow { accuracy: v, precision: v, recall: v, f1: v };
    let report = aggregate_seeds(&[row(80.0), row(90.0)], 1, 8).unwrap();
    assert!((report.mean.accuracy - 85.0).abs() < 1e-12);
    assert!(
        (report.ci95_halfwidth.accuracy - 63.53).abs() <= 0.01,
        "two-seed half-width {} != 63.53",
        report.ci95_halfwidth.accuracy
    );

    let rows: Vec<MetricsRow> = (0..10).map(|i| row(70.0 + i as f64)).collect();
    let report = aggregate_seeds(&rows, 1, 8).unwrap();
    let m = mean(&rows.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let s = (rows.iter().map(|r| (r.accuracy - m).powi(2)).sum::<f64>() / 9.0).sqrt();
    let t = report.ci95_halfwidth.accuracy * (10.0f64).sqrt() / s;
    assert!((t - 2.2622).abs() < 1e-3, "ten-seed t value {t} != 2.2622");
}
