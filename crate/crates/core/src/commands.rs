//! Pipeline commands behind the CLI: prepare a patch store, train models,
//! run the evaluation sweep, fuse the two views, and render plots. Every
//! command reads one manifest and writes only under its output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{
    generate_synthetic_dataset, load_image_tree, load_patch_store, split_dataset,
    write_patch_store, write_split_manifest, ClassSet, DatasetSplit, SplitManifest, View,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_seeds, pca_project, sweep, EmbeddingSet, MetricsRow, Provenance, SplitTag, SweepGrid,
};
use crate::fusion::{pair_views, train_fusion, FusionConfig, FusionStrategy};
use crate::losses::{GeminiLossParams, HybridLossParams};
use crate::manifest::{DatasetSource, ExperimentManifest};
use crate::models::{
    load_student, load_teacher, param_bytes, save_student, save_teacher, StudentConfig,
    TeacherConfig,
};
use crate::training::{
    compute_distillation_targets, student_embeddings, train_baseline, train_student,
    train_teacher, BaselineKind, RunConfig,
};

/// Environment variable prefixed to relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "GDML_OUTPUT_ROOT";

/// Resolve the manifest's output directory against `GDML_OUTPUT_ROOT`.
pub fn output_dir(manifest: &ExperimentManifest) -> PathBuf {
    let dir = &manifest.output.dir;
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.clone(),
    }
}

fn store_dir(out: &Path) -> PathBuf {
    out.join("store")
}

fn split_manifest_path(out: &Path, view: View) -> PathBuf {
    store_dir(out).join(format!("split_{}.json", view.as_str()))
}

fn checkpoint_stem(out: &Path, target: &str, view: View, dim: usize, seed: u64) -> PathBuf {
    out.join("checkpoints")
        .join(format!("{target}_{}_d{dim}_s{seed}", view.as_str()))
}

fn results_dir(out: &Path) -> PathBuf {
    out.join("results")
}

fn plots_dir(out: &Path) -> PathBuf {
    out.join("plots")
}

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug)]
pub struct PrepareSummary {
    pub n_images: usize,
    pub n_train_patches: usize,
    pub n_test_patches: usize,
    pub split_manifest: PathBuf,
}

/// Build the dataset (synthetic or from an image tree), split it without
/// source leakage, and persist the patch store plus its split manifest.
pub fn cmd_prepare(manifest: &ExperimentManifest) -> Result<PrepareSummary> {
    manifest.validate()?;
    let out = output_dir(manifest);
    let view = manifest.view();
    let images = match manifest.dataset.source {
        DatasetSource::Synthetic => {
            let classes = ClassSet::default_stones();
            if manifest.dataset.n_classes > classes.len() {
                return Err(Error::Manifest(format!(
                    "synthetic source supports up to {} classes, got {}",
                    classes.len(),
                    manifest.dataset.n_classes
                )));
            }
            generate_synthetic_dataset(&manifest.synthetic_spec(view), &classes)?
        }
        DatasetSource::Tree => {
            let root = manifest.dataset.path.as_ref().expect("validated");
            let view_dir = root.join(view.as_str());
            let mut names: Vec<String> = fs::read_dir(&view_dir)
                .map_err(|e| Error::Config(format!("{}: {e}", view_dir.display())))?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().into_string().ok())
                .collect();
            names.sort();
            let classes = ClassSet::new(names)?;
            load_image_tree(root, view, &classes)?
        }
    };
    let n_images = images.len();
    let split = split_dataset(
        &images,
        manifest.dataset.train_fraction,
        manifest.dataset.seed,
        &manifest.patch_options(),
    )?;
    let store = store_dir(&out);
    fs::create_dir_all(&store)?;
    let split_manifest = write_patch_store(&store, &split)?;
    let path = split_manifest_path(&out, view);
    write_split_manifest(&path, &split_manifest)?;
    Ok(PrepareSummary {
        n_images,
        n_train_patches: split.train.len(),
        n_test_patches: split.test.len(),
        split_manifest: path,
    })
}

fn load_split(out: &Path, view: View) -> Result<DatasetSplit> {
    let path = split_manifest_path(out, view);
    let manifest: SplitManifest = serde_json::from_slice(&fs::read(&path).map_err(|e| {
        Error::Config(format!("missing prepared store at {}: {e}; run prepare first", path.display()))
    })?)?;
    load_patch_store(&store_dir(out), view, &manifest)
}

fn n_classes_of(split: &DatasetSplit) -> usize {
    split
        .train
        .iter()
        .chain(&split.test)
        .map(|p| p.label.index + 1)
        .max()
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Teacher,
    Student,
    Siamese,
    Triplet,
}

impl TrainTarget {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainTarget::Teacher => "teacher",
            TrainTarget::Student => "student",
            TrainTarget::Siamese => "siamese",
            TrainTarget::Triplet => "triplet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(TrainTarget::Teacher),
            "student" => Ok(TrainTarget::Student),
            "siamese" => Ok(TrainTarget::Siamese),
            "triplet" => Ok(TrainTarget::Triplet),
            other => Err(Error::Config(format!(
                "unknown train target '{other}'; expected teacher|student|siamese|triplet"
            ))),
        }
    }
}

fn run_config(manifest: &ExperimentManifest, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        epochs: manifest.loss.epochs,
        learning_rate: manifest.loss.learning_rate,
        batch_size: manifest.loss.batch_size,
    }
}

fn teacher_config(manifest: &ExperimentManifest, dim: usize, n_classes: usize) -> TeacherConfig {
    TeacherConfig {
        n_classes,
        embedding_dim: dim,
        stream_channels: (
            manifest.model.teacher_stream_channels[0],
            manifest.model.teacher_stream_channels[1],
        ),
        hidden_dim: manifest.model.teacher_hidden_dim,
        input_downsample: manifest.model.input_downsample,
        patch_size: manifest.dataset.patch_size,
    }
}

fn student_config(manifest: &ExperimentManifest, dim: usize, n_classes: usize) -> StudentConfig {
    StudentConfig {
        embedding_dim: dim,
        n_classes,
        width: manifest.model.student_width,
        input_downsample: manifest.model.input_downsample,
        patch_size: manifest.dataset.patch_size,
    }
}

/// Train one target over the sweep's (embedding_dim x seed) grid. A grid
/// point whose checkpoint already loads cleanly is skipped, which is how an
/// interrupted multi-seed run resumes.
pub fn cmd_train(manifest: &ExperimentManifest, target: TrainTarget) -> Result<Vec<PathBuf>> {
    manifest.validate()?;
    let out = output_dir(manifest);
    let view = manifest.view();
    let split = load_split(&out, view)?;
    let n_classes = n_classes_of(&split);
    let mut stems = Vec::new();

    for &dim in &manifest.sweep.embedding_dims {
        for &seed in &manifest.sweep.seeds {
            let stem = checkpoint_stem(&out, target.as_str(), view, dim, seed);
            stems.push(stem.clone());
            let run_cfg = run_config(manifest, seed);
            match target {
                TrainTarget::Teacher => {
                    if load_teacher(&stem).is_ok() {
                        continue;
                    }
                    let params = GeminiLossParams {
                        beta: manifest.loss.beta,
                        margin: manifest.loss.margin,
                    };
                    let cfg = teacher_config(manifest, dim, n_classes);
                    let run = train_teacher(&split, &cfg, &params, &run_cfg)?;
                    save_teacher(&stem, &run.model, &run.meta)?;
                    let mut csv = String::from("epoch,loss\n");
                    for (e, l) in &run.meta.loss_curve {
                        let _ = writeln!(csv, "{e},{}", fmt_f(*l));
                    }
                    write_text(
                        &results_dir(&out).join(format!(
                            "loss_teacher_{}_d{dim}_s{seed}.csv",
                            view.as_str()
                        )),
                        &csv,
                    )?;
                }
                TrainTarget::Student => {
                    if load_student(&stem).is_ok() {
                        continue;
                    }
                    let teacher_stem = checkpoint_stem(&out, "teacher", view, dim, seed);
                    let (teacher, _) = load_teacher(&teacher_stem).map_err(|e| {
                        Error::Config(format!(
                            "student needs a teacher checkpoint at {}: {e}",
                            teacher_stem.display()
                        ))
                    })?;
                    let targets = compute_distillation_targets(&teacher, &split)?;
                    let params = HybridLossParams { gamma: manifest.loss.gamma };
                    let cfg = student_config(manifest, dim, n_classes);
                    let run = train_student(&split, &targets, &cfg, &params, &run_cfg)?;
                    save_student(&stem, &run.model, &run.meta)?;
                    let mut csv = String::from("epoch,total,distance,cross_entropy\n");
                    for (i, (e, l)) in run.meta.loss_curve.iter().enumerate() {
                        let _ = writeln!(
                            csv,
                            "{e},{},{},{}",
                            fmt_f(*l),
                            fmt_f(run.distance_curve[i]),
                            fmt_f(run.ce_curve[i])
                        );
                    }
                    write_text(
                        &results_dir(&out).join(format!(
                            "loss_student_{}_d{dim}_s{seed}.csv",
                            view.as_str()
                        )),
                        &csv,
                    )?;
                }
                TrainTarget::Siamese | TrainTarget::Triplet => {
                    if load_student(&stem).is_ok() {
                        continue;
                    }
                    let kind = if target == TrainTarget::Siamese {
                        BaselineKind::Siamese
                    } else {
                        BaselineKind::Triplet
                    };
                    let cfg = student_config(manifest, dim, n_classes);
                    let run =
                        train_baseline(&split, kind, &cfg, manifest.loss.margin, &run_cfg)?;
                    save_student(&stem, &run.model, &run.meta)?;
                    let mut csv = String::from("epoch,loss\n");
                    for (e, l) in &run.meta.loss_curve {
                        let _ = writeln!(csv, "{e},{}", fmt_f(*l));
                    }
                    write_text(
                        &results_dir(&out).join(format!(
                            "loss_{}_{}_d{dim}_s{seed}.csv",
                            target.as_str(),
                            view.as_str()
                        )),
                        &csv,
                    )?;
                }
            }
        }
    }
    Ok(stems)
}

#[derive(Debug)]
pub struct EvalOutputs {
    pub results_csv: PathBuf,
    pub pca_csv: PathBuf,
    pub pca_plot: PathBuf,
}

fn load_student_embeddings(
    out: &Path,
    view: View,
    split: &DatasetSplit,
    dim: usize,
    seed: u64,
) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let stem = checkpoint_stem(out, "student", view, dim, seed);
    let (model, _) = load_student(&stem).map_err(|e| {
        Error::Config(format!("missing student checkpoint at {}: {e}", stem.display()))
    })?;
    let id = format!("student_{}_d{dim}", view.as_str());
    Ok((
        student_embeddings(&model, &split.train, SplitTag::Train, &id, seed)?,
        student_embeddings(&model, &split.test, SplitTag::Test, &id, seed)?,
    ))
}

/// Run the k-NN sweep over trained student checkpoints, emit the results
/// table, a 2-D PCA scatter of the first grid point, and its plot.
pub fn cmd_eval(manifest: &ExperimentManifest) -> Result<EvalOutputs> {
    manifest.validate()?;
    let out = output_dir(manifest);
    let view = manifest.view();
    let split = load_split(&out, view)?;
    let grid = SweepGrid {
        embedding_dims: manifest.sweep.embedding_dims.clone(),
        k_values: manifest.sweep.k_values.clone(),
        seeds: manifest.sweep.seeds.clone(),
    };
    let rows = sweep(
        |dim, seed| load_student_embeddings(&out, view, &split, dim, seed),
        &grid,
    )?;

    let mut csv = String::from(
        "embedding_dim,k,accuracy_mean,accuracy_ci95,precision_mean,precision_ci95,recall_mean,recall_ci95,f1_mean,f1_ci95\n",
    );
    for row in &rows {
        let m = &row.report.mean;
        let c = &row.report.ci95_halfwidth;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            row.embedding_dim,
            row.k,
            fmt_f(m.accuracy),
            fmt_f(c.accuracy),
            fmt_f(m.precision),
            fmt_f(c.precision),
            fmt_f(m.recall),
            fmt_f(c.recall),
            fmt_f(m.f1),
            fmt_f(c.f1)
        );
    }
    let results_csv = results_dir(&out).join("results.csv");
    write_text(&results_csv, &csv)?;

    // PCA scatter of the first (dim, seed) grid point, train and test
    // projected in one shared basis to expose train/test displacement.
    let dim = manifest.sweep.embedding_dims[0];
    let seed = manifest.sweep.seeds[0];
    let (train, test) = load_student_embeddings(&out, view, &split, dim, seed)?;
    let n_train = train.len();
    let mut all = ndarray::Array2::<f64>::zeros((n_train + test.len(), train.dim()));
    let mut labels = Vec::new();
    for (i, row) in train.embeddings.rows().into_iter().chain(test.embeddings.rows()).enumerate() {
        all.row_mut(i).assign(&row);
    }
    labels.extend(&train.labels);
    labels.extend(&test.labels);
    let combined = EmbeddingSet::new(
        all,
        labels.clone(),
        SplitTag::Train,
        Provenance { model_id: format!("pca_d{dim}"), seed, embedding_dim: dim },
    )?;
    let (projection, _) = pca_project(&combined, 2)?;
    let mut scatter = String::from("x,y,label,split\n");
    for i in 0..projection.dim().0 {
        let split_tag = if i < n_train { "train" } else { "test" };
        let _ = writeln!(
            scatter,
            "{},{},{},{split_tag}",
            fmt_f(projection[[i, 0]]),
            fmt_f(projection[[i, 1]]),
            labels[i]
        );
    }
    let pca_csv = results_dir(&out).join(format!("pca_{}_d{dim}_s{seed}.csv", view.as_str()));
    write_text(&pca_csv, &scatter)?;
    let pca_plot = plots_dir(&out).join(format!("pca_{}_d{dim}_s{seed}.png", view.as_str()));
    render_scatter(&pca_csv, &pca_plot)?;
    Ok(EvalOutputs { results_csv, pca_csv, pca_plot })
}

#[derive(Debug)]
pub struct FuseOutputs {
    pub csv: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

/// Fuse the surface-view and section-view students. The surface model uses
/// the first sweep dimension and the section model the last one, so a
/// two-entry `embedding_dims` expresses asymmetric per-view sizes.
pub fn cmd_fuse(manifest: &ExperimentManifest, strategy: FusionStrategy) -> Result<FuseOutputs> {
    manifest.validate()?;
    let out = output_dir(manifest);
    let sur_dim = manifest.sweep.embedding_dims[0];
    let sec_dim = *manifest.sweep.embedding_dims.last().unwrap();
    let sur_split = load_split(&out, View::Sur)?;
    let sec_split = load_split(&out, View::Sec)?;

    let mut per_seed: Vec<MetricsRow> = Vec::new();
    let mut checkpoints = Vec::new();
    let mut csv = String::from("method,strategy,seed,accuracy,precision,recall,f1,fused_dim\n");
    for &seed in &manifest.sweep.seeds {
        let sur_stem = checkpoint_stem(&out, "student", View::Sur, sur_dim, seed);
        let sec_stem = checkpoint_stem(&out, "student", View::Sec, sec_dim, seed);
        let (sur_model, _) = load_student(&sur_stem).map_err(|e| {
            Error::Config(format!("missing surface-view model at {}: {e}", sur_stem.display()))
        })?;
        let (sec_model, _) = load_student(&sec_stem).map_err(|e| {
            Error::Config(format!("missing section-view model at {}: {e}", sec_stem.display()))
        })?;
        let train_pairs = pair_views(&sur_split.train, &sec_split.train, seed)?;
        let test_pairs = pair_views(&sur_split.test, &sec_split.test, seed ^ 0xF00D)?;
        let cfg = FusionConfig { strategy, seed, ..Default::default() };
        let run = train_fusion(&train_pairs, &test_pairs, &sur_model, &sec_model, &cfg)?;
        let _ = writeln!(
            csv,
            "fusion,{},{seed},{},{},{},{},{}",
            strategy.as_str(),
            fmt_f(run.metrics.accuracy),
            fmt_f(run.metrics.precision),
            fmt_f(run.metrics.recall),
            fmt_f(run.metrics.f1),
            run.input_dim
        );
        per_seed.push(run.metrics);

        // Persist the trained head alongside the per-view checkpoints.
        let stem = out
            .join("checkpoints")
            .join(format!("fusion_{}_s{seed}", strategy.as_str()));
        fs::create_dir_all(stem.parent().unwrap())?;
        fs::write(stem.with_extension("params.bin"), param_bytes(&run.head.params()))?;
        let head_cfg = serde_json::json!({
            "version": 1,
            "kind": "fusion_head",
            "strategy": strategy.as_str(),
            "input_dim": run.input_dim,
            "n_classes": run.n_classes,
            "epochs": cfg.epochs,
        });
        fs::write(stem.with_extension("config.json"), serde_json::to_vec_pretty(&head_cfg)?)?;
        checkpoints.push(stem);
    }
    if per_seed.len() >= 2 {
        let report = aggregate_seeds(&per_seed, 0, sur_dim)?;
        let _ = writeln!(
            csv,
            "fusion_mean,{},all,{},{},{},{},",
            strategy.as_str(),
            fmt_f(report.mean.accuracy),
            fmt_f(report.mean.precision),
            fmt_f(report.mean.recall),
            fmt_f(report.mean.f1)
        );
    }
    let csv_path = results_dir(&out).join(format!("fusion_{}.csv", strategy.as_str()));
    write_text(&csv_path, &csv)?;
    Ok(FuseOutputs { csv: csv_path, checkpoints })
}

const PALETTE: [[u8; 3]; 6] = [
    [214, 69, 65],
    [68, 108, 179],
    [38, 166, 91],
    [243, 156, 18],
    [142, 68, 173],
    [22, 160, 133],
];

/// Render a `x,y,label,split` scatter CSV to a PNG. Train points are drawn
/// as filled squares, test points as single pixels in a lighter shade.
pub fn render_scatter(csv_path: &Path, png_path: &Path) -> Result<()> {
    let text = fs::read_to_string(csv_path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::RejectedInput(format!(
                "{}: line {} has {} columns, expected 4",
                csv_path.display(),
                i + 1,
                cols.len()
            )));
        }
        let x: f64 = cols[0].parse().map_err(|e| Error::RejectedInput(format!("x: {e}")))?;
        let y: f64 = cols[1].parse().map_err(|e| Error::RejectedInput(format!("y: {e}")))?;
        let label: usize =
            cols[2].parse().map_err(|e| Error::RejectedInput(format!("label: {e}")))?;
        points.push((x, y, label, cols[3] == "train"));
    }
    if points.is_empty() {
        return Err(Error::RejectedInput("scatter CSV has no data rows".into()));
    }
    let (min_x, max_x) = points
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    let (min_y, max_y) = points
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let side = 600u32;
    let margin = 20.0;
    let scale = |v: f64, lo: f64, hi: f64| -> u32 {
        let span = if hi > lo { hi - lo } else { 1.0 };
        (margin + (v - lo) / span * (side as f64 - 2.0 * margin)) as u32
    };
    let mut img = image::RgbImage::from_pixel(side, side, image::Rgb([255, 255, 255]));
    for &(x, y, label, is_train) in &points {
        let px = scale(x, min_x, max_x).min(side - 1);
        // Flip y so larger values are higher in the image.
        let py = (side - 1).saturating_sub(scale(y, min_y, max_y)).min(side - 1);
        let base = PALETTE[label % PALETTE.len()];
        let color = if is_train {
            image::Rgb(base)
        } else {
            image::Rgb(base.map(|c| c / 2 + 128))
        };
        let radius: i64 = if is_train { 2 } else { 1 };
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let nx = px as i64 + dx;
                let ny = py as i64 + dy;
                if nx >= 0 && ny >= 0 && (nx as u32) < side && (ny as u32) < side {
                    img.put_pixel(nx as u32, ny as u32, color);
                }
            }
        }
    }
    if let Some(parent) = png_path.parent() {
        fs::create_dir_all(parent)?;
    }
    img.save(png_path)?;
    Ok(())
}

/// Re-render every PCA scatter CSV under the results directory.
pub fn cmd_plot(manifest: &ExperimentManifest) -> Result<Vec<PathBuf>> {
    manifest.validate()?;
    let out = output_dir(manifest);
    let results = results_dir(&out);
    let mut outputs = Vec::new();
    let mut csvs: Vec<PathBuf> = fs::read_dir(&results)
        .map_err(|e| Error::Config(format!("no results at {}: {e}", results.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("pca_"))
        })
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(Error::Config("no PCA scatter CSVs found; run eval first".into()));
    }
    for csv in csvs {
        let png = plots_dir(&out).join(csv.with_extension("png").file_name().unwrap());
        render_scatter(&csv, &png)?;
        outputs.push(png);
    }
    Ok(outputs)
}
