use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pst_core::attention::AttentionToggles;
use pst_core::checkpoint;
use pst_core::dataio::{generate_synthetic, generate_synthetic_raw, import_csv, Dataset, LabeledRecording, SyntheticRawSpec};
use pst_core::features::{extract_de, BandSet, DeFeatureFrame, RawRecording};
use pst_core::layout::{assemble_4d, collapse_to_3d, BandReduce, Collapse, ElectrodeGrid, FeatureTensor4D};
use pst_core::model::Model;
use pst_core::train::{evaluate, fit, mean_std, split, RunMetrics};

use crate::config::RunConfig;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CONFIG_FILE: &str = "config.txt";
pub const ABLATION_TABLE: &str = "ablation.tsv";
pub const REPR_TABLE: &str = "repr_ablation.tsv";

/// Row labels and attention settings of the attention ablation.
pub const ABLATION_ROWS: [(&str, AttentionToggles); 5] = [
    ("3D-CNN", AttentionToggles::NONE),
    (
        "3D-CNN & P-Attention",
        AttentionToggles {
            positional: true,
            spectral: false,
            temporal: false,
        },
    ),
    (
        "3D-CNN & S-Attention",
        AttentionToggles {
            positional: false,
            spectral: true,
            temporal: false,
        },
    ),
    (
        "3D-CNN & T-Attention",
        AttentionToggles {
            positional: false,
            spectral: false,
            temporal: true,
        },
    ),
    ("3D-CNN & PST-Attention", AttentionToggles::ALL),
];

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("{}", path.display()))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let ds = Dataset::read(path)?;
    if ds.is_empty() {
        bail!("{}: dataset holds no samples", path.display());
    }
    Ok(ds)
}

/// Synthetic dataset from the configured spec; raw recordings when `raw`.
pub fn cmd_generate(cfg: &RunConfig, raw: bool, out: &Path) -> Result<String> {
    let grid = cfg.grid()?;
    let spec = &cfg.synthetic;
    let ds = if raw {
        let raw_spec = SyntheticRawSpec {
            features: spec.clone(),
            sample_rate: cfg.sample_rate,
            slice_length_s: cfg.slice_length_s,
            bands: BandSet::default(),
        };
        Dataset::raw(spec.n_classes, &cfg.layout, generate_synthetic_raw(&raw_spec, &grid)?)?
    } else {
        Dataset::features(spec.n_classes, &cfg.layout, generate_synthetic(spec, &grid)?)?
    };
    ds.write(out)?;
    Ok(format!(
        "wrote {} {} samples ({} classes) to {}",
        ds.len(),
        if raw { "raw" } else { "feature" },
        spec.n_classes,
        out.display()
    ))
}

/// DE frames of one recording, with channels reordered to the grid's order.
fn frames_on_grid(rec: &RawRecording, grid: &ElectrodeGrid, slice_length_s: f64) -> Result<Vec<DeFeatureFrame>> {
    let order = grid.channel_order_for(rec.channels())?;
    let reordered = RawRecording::new(
        grid.channels().to_vec(),
        order.iter().map(|&i| rec.samples()[i].clone()).collect(),
        rec.sample_rate(),
    )?;
    Ok(extract_de(&reordered, &BandSet::default(), slice_length_s)?)
}

/// DE features of every recording assembled into `(T, S, V, H)` samples.
/// T is the number of whole slices, which must agree across recordings.
pub fn extract_samples(recordings: &[LabeledRecording], grid: &ElectrodeGrid, slice_length_s: f64) -> Result<Vec<FeatureTensor4D>> {
    let mut out = Vec::with_capacity(recordings.len());
    let mut t = None;
    for (i, r) in recordings.iter().enumerate() {
        let frames = frames_on_grid(&r.recording, grid, slice_length_s).with_context(|| format!("recording {i}"))?;
        if frames.is_empty() {
            bail!("recording {i}: no complete {slice_length_s} s slice");
        }
        let t = *t.get_or_insert(frames.len());
        if frames.len() != t {
            bail!("recording {i}: {} slices, earlier recordings have {t}", frames.len());
        }
        out.push(FeatureTensor4D::new(assemble_4d(&frames, grid, t)?, r.label)?);
    }
    Ok(out)
}

/// DE features from a raw dataset, or precomputed ones from a `.csv` file.
pub fn cmd_extract(cfg: &RunConfig, input: &Path, out: &Path) -> Result<String> {
    let grid = cfg.grid()?;
    let (samples, n_classes) = if input.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        import_csv(input, &grid)?
    } else {
        let ds = read_dataset(input)?;
        let n_classes = ds.n_classes();
        (extract_samples(&ds.into_raw()?, &grid, cfg.slice_length_s)?, n_classes)
    };
    let dims = samples[0].dims();
    let ds = Dataset::features(n_classes, &cfg.layout, samples)?;
    ds.write(out)?;
    Ok(format!("wrote {} samples of shape {dims:?} to {}", ds.len(), out.display()))
}

fn load_features(path: &Path) -> Result<(Vec<FeatureTensor4D>, usize)> {
    let ds = read_dataset(path)?;
    let n = ds.n_classes();
    let samples = ds
        .into_features()
        .map_err(|e| anyhow!("{e} (run `extract` on raw datasets first)"))?;
    Ok((samples, n))
}

fn summary_line(m: &RunMetrics) -> String {
    let s = m.summary();
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
    let mut line = format!(
        "epochs {} train_loss {} train_acc {} test_acc {} params {}",
        s.epochs_completed,
        s.final_train_loss.map_or("-".into(), |l| format!("{l:.5}")),
        pct(s.final_train_acc),
        pct(s.final_test_acc),
        s.n_params
    );
    if let Some(r) = &s.abort_reason {
        let _ = write!(line, " aborted: {r}");
    }
    line
}

pub struct TrainRun {
    pub metrics: RunMetrics,
    pub report: String,
}

/// Splits, trains and writes checkpoint, metrics and resolved config to `out`.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<TrainRun> {
    let (samples, n_classes) = load_features(data)?;
    let model_cfg = cfg.model.for_input(samples[0].dims(), n_classes);
    let (train, test) = split(&samples, cfg.train.split_ratio, cfg.seed, cfg.train.shuffle);
    let (model, init) = Model::new(model_cfg, cfg.seed)?;
    let outcome = fit(&model, init, &train, &test, &cfg.train)?;
    checkpoint::save(&outcome.state, out)?;
    write_file(&out.join(METRICS_FILE), outcome.metrics.to_jsonl())?;
    write_file(&out.join(CONFIG_FILE), cfg.to_text())?;
    let report = format!(
        "{} train / {} test samples; {}; wrote {}",
        train.len(),
        test.len(),
        summary_line(&outcome.metrics),
        out.display()
    );
    Ok(TrainRun {
        metrics: outcome.metrics,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    All,
    Train,
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            _ => bail!("split must be all, train or test, got {s:?}"),
        }
    }
}

/// Accuracy of a trained checkpoint on each dataset, with Mean/Std across
/// datasets. The checkpoint's saved config decides the architecture and the
/// split.
pub fn cmd_evaluate(checkpoint_dir: &Path, data: &[PathBuf], which: EvalSplit) -> Result<(Vec<f64>, String)> {
    if data.is_empty() {
        bail!("evaluate needs at least one dataset");
    }
    let cfg = RunConfig::load(Some(&checkpoint_dir.join(CONFIG_FILE)), &[])?;
    let state = checkpoint::load(checkpoint_dir)?;
    let mut accs = Vec::new();
    let mut report = String::new();
    for path in data {
        let (samples, n_classes) = load_features(path)?;
        let (model, _) = Model::new(cfg.model.for_input(samples[0].dims(), n_classes), cfg.seed)?;
        model
            .check_state(&state)
            .with_context(|| format!("{} does not fit this checkpoint", path.display()))?;
        let (train, test) = split(&samples, cfg.train.split_ratio, cfg.seed, cfg.train.shuffle);
        let set = match which {
            EvalSplit::All => samples,
            EvalSplit::Train => train,
            EvalSplit::Test => test,
        };
        if set.is_empty() {
            bail!("{}: the selected split is empty", path.display());
        }
        let acc = evaluate(&model, &state, &set, cfg.train.standardize)?;
        let _ = writeln!(report, "{}\t{}\t{:.2}", path.display(), set.len(), 100.0 * acc);
        accs.push(acc);
    }
    let (mean, std) = mean_std(&accs);
    let _ = write!(report, "Mean (%)\t{:.2}\nStd (%)\t{:.2}", 100.0 * mean, 100.0 * std);
    Ok((accs, report))
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub label: String,
    pub input: String,
    pub n_params: usize,
    pub accuracies: Vec<f64>,
}

impl Row {
    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(&self.accuracies)
    }
}

pub fn format_table(rows: &[Row]) -> String {
    let mut out = String::from("Model\tInput\tMean (%)\tStd (%)\tParams\n");
    for r in rows {
        let (m, s) = r.mean_std();
        let _ = writeln!(out, "{}\t{}\t{:.2}\t{:.2}\t{}", r.label, r.input, 100.0 * m, 100.0 * s, r.n_params);
    }
    out
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

fn shape_str(d: [usize; 4]) -> String {
    format!("({}, {}, {}, {})", d[0], d[1], d[2], d[3])
}

/// Trains `cfg` on `samples` once per run (seeds `seed`, `seed + 1`, ...) and
/// writes each run's metrics under `dir`.
fn run_row(
    cfg: &RunConfig,
    label: &str,
    attention: AttentionToggles,
    samples: &[FeatureTensor4D],
    n_classes: usize,
    dir: &Path,
) -> Result<Row> {
    let model_cfg = pst_core::model::ModelConfig {
        attention,
        ..cfg.model.for_input(samples[0].dims(), n_classes)
    };
    let mut row = Row {
        label: label.to_string(),
        input: shape_str(samples[0].dims()),
        n_params: 0,
        accuracies: Vec::new(),
    };
    for run in 0..cfg.ablate_runs {
        let seed = cfg.seed + run as u64;
        let train_cfg = pst_core::train::TrainConfig {
            seed,
            ..cfg.train.clone()
        };
        let (train, test) = split(samples, train_cfg.split_ratio, seed, train_cfg.shuffle);
        if test.is_empty() {
            bail!("the split leaves no test samples");
        }
        let (model, init) = Model::new(model_cfg.clone(), seed)?;
        row.n_params = init.n_scalars();
        let out = fit(&model, init, &train, &test, &train_cfg)?;
        write_file(&dir.join(slug(label)).join(format!("run{run}.jsonl")), out.metrics.to_jsonl())?;
        let acc = out
            .metrics
            .last()
            .and_then(|e| e.test_acc)
            .ok_or_else(|| anyhow!("{label}, run {run}: no completed epoch"))?;
        row.accuracies.push(acc);
    }
    Ok(row)
}

/// The five attention configurations on shared data and seeds.
pub fn cmd_ablate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(Vec<Row>, String)> {
    let (samples, n_classes) = load_features(data)?;
    let rows = ABLATION_ROWS
        .iter()
        .map(|(label, toggles)| run_row(cfg, label, *toggles, &samples, n_classes, out))
        .collect::<Result<Vec<_>>>()?;
    let table = format_table(&rows);
    write_file(&out.join(ABLATION_TABLE), &table)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_text())?;
    Ok((rows, table))
}

/// Collapses every sample and lifts the 3-D result back to `(T, S, V, H)`
/// with singleton axes, so the same network runs on it.
pub fn collapse_samples(samples: &[FeatureTensor4D], mode: Collapse) -> Result<Vec<FeatureTensor4D>> {
    samples
        .iter()
        .map(|s| {
            let y = collapse_to_3d(s.data(), mode)?;
            let d = y.shape().to_vec();
            let shape = match mode {
                Collapse::Vhs => [1, d[0], d[1], d[2]],
                Collapse::Vht(_) => [d[0], 1, d[1], d[2]],
                Collapse::Pst => [d[0], d[1], 1, d[2]],
            };
            Ok(FeatureTensor4D::new(y.reshape(&shape)?, s.label())?)
        })
        .collect()
}

/// The three 3-D representations against the full 4-D input. For VHT the
/// best of the per-band and band-mean variants is reported.
pub fn cmd_repr_ablate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(Vec<Row>, String)> {
    let (samples, n_classes) = load_features(data)?;
    let s = samples[0].dims()[1];
    let attention = cfg.model.attention;
    let mut rows = Vec::new();

    let vhs = collapse_samples(&samples, Collapse::Vhs)?;
    rows.push(run_row(cfg, "3D (VHS)", attention, &vhs, n_classes, out)?);

    let mut best: Option<Row> = None;
    let variants = std::iter::once(BandReduce::Mean).chain((0..s).map(BandReduce::Band));
    for reduce in variants {
        let mode = Collapse::Vht(reduce);
        let set = collapse_samples(&samples, mode)?;
        let mut row = run_row(cfg, &format!("3D (VHT) {mode}"), attention, &set, n_classes, out)?;
        row.label = format!("3D (VHT) [{mode}]");
        if best.as_ref().is_none_or(|b| row.mean_std().0 > b.mean_std().0) {
            best = Some(row);
        }
    }
    rows.push(best.expect("at least the band mean"));

    let pst = collapse_samples(&samples, Collapse::Pst)?;
    rows.push(run_row(cfg, "3D (PST)", attention, &pst, n_classes, out)?);
    rows.push(run_row(cfg, "4D (VHST)", attention, &samples, n_classes, out)?);

    let table = format_table(&rows);
    write_file(&out.join(REPR_TABLE), &table)?;
    write_file(&out.join(CONFIG_FILE), cfg.to_text())?;
    Ok((rows, table))
}
