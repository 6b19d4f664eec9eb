//! Plain-text `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and anything after `#` are ignored.
//! Settings are resolved in three layers: built-in defaults, then the config
//! file, then command-line overrides. Unknown keys are an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use pst_core::attention::AttentionToggles;
use pst_core::dataio::{Activation, Region, SyntheticSpec};
use pst_core::features::BandSet;
use pst_core::layout::ElectrodeGrid;
use pst_core::model::ModelConfig;
use pst_core::train::TrainConfig;

/// Layout reference recorded in datasets built on the bundled grid.
pub const BUILTIN_LAYOUT: &str = "builtin:seed62-8x9";

/// Every accepted key with its default, in the order `to_text` writes them.
/// `synthetic.class.<k>` keys are accepted in addition for every class index.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "0"),
    ("layout", BUILTIN_LAYOUT),
    ("model.channels", "32,64"),
    ("model.kernel", "3,5,5"),
    ("model.attention_blocks", "2"),
    ("model.attention", "pst"),
    ("model.fc_hidden", "128"),
    ("model.dropout", "0.5"),
    ("train.lr", "0.001"),
    ("train.beta1", "0.9"),
    ("train.beta2", "0.999"),
    ("train.epsilon", "1e-8"),
    ("train.batch_size", "32"),
    ("train.epochs", "300"),
    ("train.split", "9:6"),
    ("train.shuffle", "true"),
    ("train.standardize", "true"),
    ("synthetic.preset", "default"),
    ("synthetic.samples_per_class", "30"),
    ("synthetic.t", "9"),
    ("synthetic.sigma", "0.5"),
    ("synthetic.amplitude", ""),
    ("raw.sample_rate", "200"),
    ("raw.slice_length", "1"),
    ("ablate.runs", "5"),
];

const CLASS_PREFIX: &str = "synthetic.class.";

/// Model settings that do not depend on the data; input extents and the
/// class count come from the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSettings {
    pub conv_channels: Vec<usize>,
    pub kernel: [usize; 3],
    pub n_attention_blocks: usize,
    pub attention: AttentionToggles,
    pub fc_hidden: usize,
    pub dropout: f64,
}

impl ModelSettings {
    pub fn for_input(&self, dims: [usize; 4], n_classes: usize) -> ModelConfig {
        let [t, s, v, h] = dims;
        ModelConfig {
            t,
            s,
            v,
            h,
            n_classes,
            conv_channels: self.conv_channels.clone(),
            kernel: self.kernel,
            n_attention_blocks: self.n_attention_blocks,
            attention: self.attention,
            fc_hidden: self.fc_hidden,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub layout: String,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub synthetic: SyntheticSpec,
    pub sample_rate: f64,
    pub slice_length_s: f64,
    pub ablate_runs: usize,
    pairs: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_pairs(BTreeMap::new()).expect("built-in defaults are valid")
    }
}

/// Parses config text into key/value pairs. Later duplicates win.
pub fn parse_pairs(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin} line {}: expected key = value, got {line:?}", i + 1))?;
        let key = k.trim().to_string();
        check_key(&key).with_context(|| format!("{origin} line {}", i + 1))?;
        out.insert(key, v.trim().to_string());
    }
    Ok(out)
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        return Ok(());
    }
    if let Some(idx) = key.strip_prefix(CLASS_PREFIX) {
        if idx.parse::<usize>().is_ok() {
            return Ok(());
        }
    }
    bail!("unknown key {key:?}")
}

/// Splits a `key=value` override.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("override {s:?} is not key=value"))?;
    let key = k.trim().to_string();
    check_key(&key)?;
    Ok((key, v.trim().to_string()))
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("{key}: cannot parse {v:?}: {e}"))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse(key, p.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => bail!("{key}: expected true or false, got {v:?}"),
    }
}

fn parse_range(key: &str, v: &str) -> Result<(usize, usize)> {
    let (a, b) = v
        .split_once('-')
        .ok_or_else(|| anyhow!("{key}: expected a range like 1-4, got {v:?}"))?;
    Ok((parse(key, a)?, parse(key, b)?))
}

fn band_index(key: &str, name: &str) -> Result<usize> {
    if let Ok(i) = name.parse::<usize>() {
        return Ok(i);
    }
    BandSet::default()
        .bands()
        .iter()
        .position(|b| b.name.eq_ignore_ascii_case(name))
        .ok_or_else(|| anyhow!("{key}: unknown band {name:?}"))
}

/// `band:rows:cols:window:amplitude` activations joined by `+`, e.g.
/// `alpha:1-4:0-4:0-9:2.0`.
pub fn parse_signature(key: &str, v: &str) -> Result<Vec<Activation>> {
    v.split('+')
        .map(|part| {
            let f: Vec<&str> = part.trim().split(':').collect();
            if f.len() != 5 {
                bail!("{key}: expected band:rows:cols:window:amplitude, got {part:?}");
            }
            Ok(Activation {
                band: band_index(key, f[0])?,
                region: Region {
                    rows: parse_range(key, f[1])?,
                    cols: parse_range(key, f[2])?,
                },
                window: parse_range(key, f[3])?,
                amplitude: parse(key, f[4])?,
            })
        })
        .collect()
}

pub fn format_signature(sig: &[Activation]) -> String {
    let names = BandSet::default();
    sig.iter()
        .map(|a| {
            let band = names
                .bands()
                .get(a.band)
                .map_or_else(|| a.band.to_string(), |b| b.name.clone());
            format!(
                "{band}:{}-{}:{}-{}:{}-{}:{}",
                a.region.rows.0, a.region.rows.1, a.region.cols.0, a.region.cols.1, a.window.0, a.window.1, a.amplitude
            )
        })
        .collect::<Vec<_>>()
        .join("+")
}

fn preset(name: &str) -> Result<SyntheticSpec> {
    match name {
        "default" => Ok(SyntheticSpec::default()),
        "ablation" => Ok(SyntheticSpec::ablation()),
        other => bail!("synthetic.preset: unknown preset {other:?} (default, ablation)"),
    }
}

impl RunConfig {
    /// Resolves explicit pairs over the defaults.
    pub fn from_pairs(pairs: BTreeMap<String, String>) -> Result<Self> {
        for k in pairs.keys() {
            check_key(k)?;
        }
        let get = |key: &str| -> &str {
            pairs
                .get(key)
                .map(String::as_str)
                .unwrap_or_else(|| KEYS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v).unwrap_or(""))
        };
        let seed: u64 = parse("seed", get("seed"))?;

        let kernel = parse_list("model.kernel", get("model.kernel"))?;
        let kernel: [usize; 3] = kernel
            .try_into()
            .map_err(|k: Vec<usize>| anyhow!("model.kernel: expected 3 extents, got {}", k.len()))?;
        let model = ModelSettings {
            conv_channels: parse_list("model.channels", get("model.channels"))?,
            kernel,
            n_attention_blocks: parse("model.attention_blocks", get("model.attention_blocks"))?,
            attention: parse("model.attention", get("model.attention"))?,
            fc_hidden: parse("model.fc_hidden", get("model.fc_hidden"))?,
            dropout: parse("model.dropout", get("model.dropout"))?,
        };

        let (a, b) = get("train.split")
            .split_once(':')
            .ok_or_else(|| anyhow!("train.split: expected a ratio like 9:6"))?;
        let train = TrainConfig {
            learning_rate: parse("train.lr", get("train.lr"))?,
            beta1: parse("train.beta1", get("train.beta1"))?,
            beta2: parse("train.beta2", get("train.beta2"))?,
            epsilon: parse("train.epsilon", get("train.epsilon"))?,
            batch_size: parse("train.batch_size", get("train.batch_size"))?,
            epochs: parse("train.epochs", get("train.epochs"))?,
            seed,
            split_ratio: (parse("train.split", a.trim())?, parse("train.split", b.trim())?),
            shuffle: parse_bool("train.shuffle", get("train.shuffle"))?,
            standardize: parse_bool("train.standardize", get("train.standardize"))?,
        };
        train.validate()?;

        let mut synthetic = preset(get("synthetic.preset"))?;
        synthetic.seed = seed;
        // unset keys keep the preset's own values
        let explicit = |key: &str| pairs.get(key).map(String::as_str);
        if let Some(v) = explicit("synthetic.samples_per_class") {
            synthetic.n_samples_per_class = parse("synthetic.samples_per_class", v)?;
        }
        if let Some(v) = explicit("synthetic.t") {
            synthetic.t = parse("synthetic.t", v)?;
        }
        if let Some(v) = explicit("synthetic.sigma") {
            synthetic.noise_sigma = parse("synthetic.sigma", v)?;
        }
        for (k, v) in pairs.range(CLASS_PREFIX.to_string()..) {
            let Some(idx) = k.strip_prefix(CLASS_PREFIX) else { break };
            let idx: usize = parse(k, idx)?;
            if idx > synthetic.signatures.len() {
                bail!("{k}: classes must be numbered consecutively from 0");
            }
            let sig = parse_signature(k, v)?;
            if idx == synthetic.signatures.len() {
                synthetic.signatures.push(sig);
            } else {
                synthetic.signatures[idx] = sig;
            }
        }
        synthetic.n_classes = synthetic.signatures.len();
        let amp = get("synthetic.amplitude");
        if !amp.is_empty() {
            let amp: f64 = parse("synthetic.amplitude", amp)?;
            synthetic.signatures.iter_mut().flatten().for_each(|a| a.amplitude = amp);
        }

        let cfg = Self {
            seed,
            layout: get("layout").to_string(),
            model,
            train,
            synthetic,
            sample_rate: parse("raw.sample_rate", get("raw.sample_rate"))?,
            slice_length_s: parse("raw.slice_length", get("raw.slice_length"))?,
            ablate_runs: parse("ablate.runs", get("ablate.runs"))?,
            pairs,
        };
        if cfg.ablate_runs == 0 {
            bail!("ablate.runs must be at least 1");
        }
        if !(cfg.sample_rate > 0.0 && cfg.slice_length_s > 0.0) {
            bail!("raw.sample_rate and raw.slice_length must be positive");
        }
        Ok(cfg)
    }

    /// Defaults, then `file`, then `overrides` in order.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("{}", p.display()))?;
                parse_pairs(&text, &p.display().to_string())?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in overrides {
            pairs.insert(k.clone(), v.clone());
        }
        Self::from_pairs(pairs)
    }

    /// The same configuration with `key` set to `value`.
    pub fn with(&self, key: &str, value: &str) -> Result<Self> {
        let mut pairs = self.pairs.clone();
        check_key(key)?;
        pairs.insert(key.to_string(), value.to_string());
        Self::from_pairs(pairs)
    }

    pub fn grid(&self) -> Result<ElectrodeGrid> {
        if self.layout == BUILTIN_LAYOUT {
            Ok(ElectrodeGrid::seed62())
        } else {
            Ok(ElectrodeGrid::load(&PathBuf::from(&self.layout))?)
        }
    }

    /// Every setting, fully resolved, in a form `load` reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let m = &self.model;
        let t = &self.train;
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let lines: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("layout", self.layout.clone()),
            ("model.channels", list(&m.conv_channels)),
            ("model.kernel", list(&m.kernel)),
            ("model.attention_blocks", m.n_attention_blocks.to_string()),
            ("model.attention", m.attention.to_string()),
            ("model.fc_hidden", m.fc_hidden.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("train.lr", t.learning_rate.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.epsilon", t.epsilon.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.split", format!("{}:{}", t.split_ratio.0, t.split_ratio.1)),
            ("train.shuffle", t.shuffle.to_string()),
            ("train.standardize", t.standardize.to_string()),
            ("synthetic.preset", self.pairs.get("synthetic.preset").cloned().unwrap_or_else(|| "default".into())),
            ("synthetic.samples_per_class", self.synthetic.n_samples_per_class.to_string()),
            ("synthetic.t", self.synthetic.t.to_string()),
            ("synthetic.sigma", self.synthetic.noise_sigma.to_string()),
            ("raw.sample_rate", self.sample_rate.to_string()),
            ("raw.slice_length", self.slice_length_s.to_string()),
            ("ablate.runs", self.ablate_runs.to_string()),
        ];
        for (k, v) in lines {
            let _ = writeln!(out, "{k} = {v}");
        }
        for (i, sig) in self.synthetic.signatures.iter().enumerate() {
            let _ = writeln!(out, "{CLASS_PREFIX}{i} = {}", format_signature(sig));
        }
        out
    }
}
