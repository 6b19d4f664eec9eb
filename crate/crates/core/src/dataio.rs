//! Dataset files, CSV import of precomputed DE features and synthetic data.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic "PSTEEGDS" | u32 version | u8 endian flag (1) | u8 kind | u16 0
//! u64 n_samples | u32 rank | rank x u64 per-sample dims
//! u32 n_classes | n_samples x u32 labels
//! f64 sample_rate | u32 n_names, each u16 len + utf8 | u32 len + layout ref
//! payload: n_samples x prod(dims) x f64
//! ```
//!
//! Kind 0 holds `(T, S, V, H)` feature samples, kind 1 raw recordings with
//! per-sample dims `(channels, samples)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use pst_tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::features::{BandSet, RawRecording};
use crate::layout::{ElectrodeGrid, FeatureTensor4D};
use crate::params::stream_rng;

pub const MAGIC: &[u8; 8] = b"PSTEEGDS";
pub const VERSION: u32 = 1;
const LITTLE_ENDIAN: u8 = 1;
const KIND_FEATURES: u8 = 0;
const KIND_RAW: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecording {
    pub recording: RawRecording,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Features(Vec<FeatureTensor4D>),
    Raw(Vec<LabeledRecording>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_classes: usize,
    layout_ref: String,
    payload: Payload,
}

impl Dataset {
    /// Samples must share dims and carry labels below `n_classes`.
    pub fn features(n_classes: usize, layout_ref: &str, samples: Vec<FeatureTensor4D>) -> Result<Self> {
        if let Some(first) = samples.first() {
            if let Some(s) = samples.iter().find(|s| s.dims() != first.dims()) {
                return Err(Error::Config(format!(
                    "sample dims {:?} differ from {:?}",
                    s.dims(),
                    first.dims()
                )));
            }
        }
        check_labels(samples.iter().map(FeatureTensor4D::label), n_classes)?;
        Ok(Self {
            n_classes,
            layout_ref: layout_ref.to_string(),
            payload: Payload::Features(samples),
        })
    }

    /// Recordings must share channel names, length and sample rate.
    pub fn raw(n_classes: usize, layout_ref: &str, recordings: Vec<LabeledRecording>) -> Result<Self> {
        if let Some(first) = recordings.first() {
            let r0 = &first.recording;
            for r in &recordings {
                let r = &r.recording;
                if r.channels() != r0.channels() || r.n_samples() != r0.n_samples() || r.sample_rate() != r0.sample_rate() {
                    return Err(Error::Config(
                        "raw recordings in one dataset must share channels, length and sample rate".into(),
                    ));
                }
            }
        }
        check_labels(recordings.iter().map(|r| r.label), n_classes)?;
        Ok(Self {
            n_classes,
            layout_ref: layout_ref.to_string(),
            payload: Payload::Raw(recordings),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn layout_ref(&self) -> &str {
        &self.layout_ref
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn len(&self) -> usize {
        match &self.payload {
            Payload::Features(s) => s.len(),
            Payload::Raw(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<usize> {
        match &self.payload {
            Payload::Features(s) => s.iter().map(FeatureTensor4D::label).collect(),
            Payload::Raw(r) => r.iter().map(|r| r.label).collect(),
        }
    }

    pub fn into_features(self) -> Result<Vec<FeatureTensor4D>> {
        match self.payload {
            Payload::Features(s) => Ok(s),
            Payload::Raw(_) => Err(Error::Config(
                "dataset holds raw recordings; run feature extraction first".into(),
            )),
        }
    }

    pub fn into_raw(self) -> Result<Vec<LabeledRecording>> {
        match self.payload {
            Payload::Raw(r) => Ok(r),
            Payload::Features(_) => Err(Error::Config("dataset holds features, not raw recordings".into())),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(LITTLE_ENDIAN);
        let (kind, dims, sample_rate, names): (u8, Vec<usize>, f64, Vec<String>) = match &self.payload {
            Payload::Features(s) => (
                KIND_FEATURES,
                s.first().map_or(vec![0; 4], |x| x.dims().to_vec()),
                0.0,
                Vec::new(),
            ),
            Payload::Raw(r) => match r.first() {
                Some(first) => (
                    KIND_RAW,
                    vec![first.recording.channels().len(), first.recording.n_samples()],
                    first.recording.sample_rate(),
                    first.recording.channels().to_vec(),
                ),
                None => (KIND_RAW, vec![0, 0], 0.0, Vec::new()),
            },
        };
        out.push(kind);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        for l in self.labels() {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        out.extend_from_slice(&sample_rate.to_le_bytes());
        out.extend_from_slice(&(names.len() as u32).to_le_bytes());
        for n in &names {
            out.extend_from_slice(&(n.len() as u16).to_le_bytes());
            out.extend_from_slice(n.as_bytes());
        }
        out.extend_from_slice(&(self.layout_ref.len() as u32).to_le_bytes());
        out.extend_from_slice(self.layout_ref.as_bytes());
        let mut push = |v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        match &self.payload {
            Payload::Features(s) => s.iter().for_each(|x| push(x.data().data())),
            Payload::Raw(r) => r.iter().flat_map(|r| r.recording.samples()).for_each(|row| push(row)),
        }
        out
    }

    /// Parses a dataset file image; `path` only labels diagnostics.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        let magic = r.take(8, "magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                offset: 0,
                found: magic.to_vec(),
            });
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.fail(format!("unsupported version {version} (this build reads {VERSION})")));
        }
        let endian = r.u8("endian flag")?;
        if endian != LITTLE_ENDIAN {
            return Err(r.fail(format!("endian flag {endian}, only little-endian (1) is supported")));
        }
        let kind = r.u8("kind")?;
        r.take(2, "reserved")?;
        let n = r.u64("sample count")?;
        let rank = r.u32("rank")? as usize;
        let dims = (0..rank).map(|_| r.u64("dims")).collect::<Result<Vec<_>>>()?;
        let n_classes = r.u32("class count")? as usize;
        let labels = (0..n).map(|_| r.u32("labels").map(|l| l as usize)).collect::<Result<Vec<_>>>()?;
        let sample_rate = r.f64("sample rate")?;
        let n_names = r.u32("channel name count")?;
        let mut names = Vec::new();
        for _ in 0..n_names {
            let len = r.u16("channel name length")? as usize;
            names.push(r.string(len, "channel name")?);
        }
        let ref_len = r.u32("layout reference length")? as usize;
        let layout_ref = r.string(ref_len, "layout reference")?;
        let per_sample: usize = dims.iter().product();
        let payload_start = r.pos;
        let want = per_sample
            .checked_mul(n)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| r.fail("payload size overflows".into()))?;
        let have = bytes.len() - payload_start;
        if have != want {
            return Err(r.fail(format!(
                "payload starting at offset {payload_start} has {have} bytes, header implies {want}{}",
                if have < want { " (truncated)" } else { " (trailing bytes)" }
            )));
        }
        let mut values = bytes[payload_start..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        match kind {
            KIND_FEATURES => {
                if rank != 4 {
                    return Err(r.fail(format!("feature samples need rank 4, header says {rank}")));
                }
                let samples = labels
                    .iter()
                    .map(|&l| {
                        let data: Vec<f64> = values.by_ref().take(per_sample).collect();
                        FeatureTensor4D::new(Tensor::new(dims.clone(), data)?, l)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Dataset::features(n_classes, &layout_ref, samples)
            }
            KIND_RAW => {
                if rank != 2 || (n > 0 && dims[0] != names.len()) {
                    return Err(r.fail(format!(
                        "raw recordings need dims (channels, samples) matching {} names, got {dims:?}",
                        names.len()
                    )));
                }
                let recordings = labels
                    .iter()
                    .map(|&label| {
                        let rows: Vec<Vec<f64>> =
                            (0..dims[0]).map(|_| values.by_ref().take(dims[1]).collect()).collect();
                        Ok(LabeledRecording {
                            recording: RawRecording::new(names.clone(), rows, sample_rate)?,
                            label,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Dataset::raw(n_classes, &layout_ref, recordings)
            }
            other => Err(r.fail(format!("unknown payload kind {other}"))),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

fn check_labels(labels: impl Iterator<Item = usize>, n_classes: usize) -> Result<()> {
    for l in labels {
        if l >= n_classes {
            return Err(Error::Config(format!("label {l} out of range for {n_classes} classes")));
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: String) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg,
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated header: {what} needs {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| self.fail(format!("{what} {v} too large")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.fail(format!("{what} is not UTF-8")))
    }
}

/// Reads precomputed DE features from CSV with header
/// `sample,label,t,channel,<one column per band>`, one row per
/// `(sample, t, channel)`. Every sample must cover the same time steps and
/// every grid channel exactly once per step. Samples are ordered by their
/// `sample` id.
pub fn import_csv(path: &Path, grid: &ElectrodeGrid) -> Result<(Vec<FeatureTensor4D>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, grid, path)
}

fn parse_csv(text: &str, grid: &ElectrodeGrid, path: &Path) -> Result<(Vec<FeatureTensor4D>, usize)> {
    let fail = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| fail(e.to_string()))?.clone();
    let fixed = ["sample", "label", "t", "channel"];
    if header.len() <= fixed.len() || header.iter().zip(fixed).any(|(h, f)| !h.eq_ignore_ascii_case(f)) {
        return Err(fail(format!(
            "header must start with sample,label,t,channel followed by band columns, got {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    let n_bands = header.len() - fixed.len();
    // sample id -> (label, t -> channel -> band values)
    type Steps = BTreeMap<usize, Vec<Option<Vec<f64>>>>;
    let mut samples: BTreeMap<u64, (usize, Steps)> = BTreeMap::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| fail(format!("line {line}: {e}")))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let int = |k: usize| {
            field(k)
                .parse::<u64>()
                .map_err(|_| fail(format!("line {line}: column {} is not an integer: {:?}", fixed[k], field(k))))
        };
        let (id, label, t) = (int(0)?, int(1)? as usize, int(2)? as usize);
        let ch = grid
            .channel_index(field(3))
            .ok_or_else(|| fail(format!("line {line}: channel {:?} is not in the layout", field(3))))?;
        let values = (4..4 + n_bands)
            .map(|k| field(k).parse::<f64>().map_err(|_| fail(format!("line {line}: bad value {:?}", field(k)))))
            .collect::<Result<Vec<_>>>()?;
        let entry = samples.entry(id).or_insert_with(|| (label, BTreeMap::new()));
        if entry.0 != label {
            return Err(fail(format!("line {line}: sample {id} has labels {} and {label}", entry.0)));
        }
        let slot = &mut entry.1.entry(t).or_insert_with(|| vec![None; grid.n_channels()])[ch];
        if slot.is_some() {
            return Err(fail(format!("line {line}: duplicate row for sample {id}, t {t}, channel {}", field(3))));
        }
        *slot = Some(values);
    }
    let n_classes = samples.values().map(|(l, _)| l + 1).max().unwrap_or(0);
    let mut out = Vec::with_capacity(samples.len());
    let mut t_count = None;
    for (id, (label, steps)) in samples {
        let t = steps.len();
        if steps.keys().copied().ne(0..t) {
            return Err(fail(format!("sample {id}: time steps must be 0..{t} without gaps")));
        }
        if *t_count.get_or_insert(t) != t {
            return Err(fail(format!("sample {id} has {t} time steps, others have {}", t_count.unwrap_or(0))));
        }
        let (v, h) = (grid.rows(), grid.cols());
        let mut data = vec![grid.fill_value(); t * n_bands * v * h];
        for (ti, chans) in steps {
            for (c, vals) in chans.iter().enumerate() {
                let vals = vals
                    .as_ref()
                    .ok_or_else(|| fail(format!("sample {id}, t {ti}: channel {} missing", grid.channels()[c])))?;
                let (r, col) = grid.cell(c);
                for (b, &x) in vals.iter().enumerate() {
                    data[((ti * n_bands + b) * v + r) * h + col] = x;
                }
            }
        }
        out.push(FeatureTensor4D::new(Tensor::new(vec![t, n_bands, v, h], data)?, label)?);
    }
    Ok((out, n_classes))
}

/// Half-open block of grid cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl Region {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.rows.0..self.rows.1).contains(&r) && (self.cols.0..self.cols.1).contains(&c)
    }
}

/// Extra amplitude on one band, over one region, during time steps
/// `window.0..window.1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub band: usize,
    pub region: Region,
    pub window: (usize, usize),
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub n_samples_per_class: usize,
    pub t: usize,
    pub s: usize,
    /// One activation list per class.
    pub signatures: Vec<Vec<Activation>>,
    pub noise_sigma: f64,
    pub seed: u64,
}

const ALPHA: usize = 2;
const BETA: usize = 3;
const GAMMA: usize = 4;

impl Default for SyntheticSpec {
    /// Three classes on the 8 × 9 grid: alpha over the left fronto-central
    /// area, beta over the right one, gamma over the parieto-occipital area.
    fn default() -> Self {
        let act = |band, rows, cols| {
            vec![Activation {
                band,
                region: Region { rows, cols },
                window: (0, 9),
                amplitude: 2.0,
            }]
        };
        Self {
            n_classes: 3,
            n_samples_per_class: 30,
            t: 9,
            s: 5,
            signatures: vec![act(ALPHA, (1, 4), (0, 4)), act(BETA, (1, 4), (5, 9)), act(GAMMA, (5, 8), (2, 7))],
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// All classes activate the alpha band over the same rows and differ in
    /// which columns light up and when: left early, right early, left late.
    pub fn ablation() -> Self {
        let act = |cols, window| Activation {
            band: ALPHA,
            region: Region { rows: (2, 6), cols },
            window,
            amplitude: 0.7,
        };
        Self {
            n_classes: 3,
            n_samples_per_class: 60,
            t: 9,
            s: 5,
            signatures: vec![
                vec![act((1, 4), (0, 5))],
                vec![act((5, 8), (0, 5))],
                vec![act((1, 4), (4, 9))],
            ],
            noise_sigma: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self, grid: &ElectrodeGrid) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_classes < 2 || self.signatures.len() != self.n_classes {
            return bad(format!(
                "{} signatures for {} classes (need one per class, at least two)",
                self.signatures.len(),
                self.n_classes
            ));
        }
        if self.t == 0 || self.s == 0 {
            return bad("synthetic T and S must be positive".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be finite and >= 0", self.noise_sigma));
        }
        for (c, sig) in self.signatures.iter().enumerate() {
            for a in sig {
                let Region { rows, cols } = a.region;
                if a.band >= self.s
                    || rows.0 >= rows.1
                    || cols.0 >= cols.1
                    || rows.1 > grid.rows()
                    || cols.1 > grid.cols()
                    || a.window.0 >= a.window.1
                    || a.window.1 > self.t
                    || !a.amplitude.is_finite()
                {
                    return bad(format!("class {c}: activation {a:?} outside T={} S={} grid {}x{}", self.t, self.s, grid.rows(), grid.cols()));
                }
            }
        }
        Ok(())
    }

    /// Noise-free class template in `(T, S, V, H)` order.
    pub fn template(&self, class: usize, grid: &ElectrodeGrid) -> Tensor {
        let (v, h) = (grid.rows(), grid.cols());
        let occupied = grid.occupied();
        let mut x = Tensor::full(&[self.t, self.s, v, h], grid.fill_value());
        for (i, o) in occupied.iter().enumerate() {
            if *o {
                for ts in 0..self.t * self.s {
                    x.data_mut()[ts * v * h + i] = 0.0;
                }
            }
        }
        for a in &self.signatures[class] {
            for t in a.window.0..a.window.1 {
                for r in 0..v {
                    for c in 0..h {
                        if occupied[r * h + c] && a.region.contains(r, c) {
                            x.data_mut()[((t * self.s + a.band) * v + r) * h + c] += a.amplitude;
                        }
                    }
                }
            }
        }
        x
    }

    /// Smallest, over class pairs, of the largest template difference at
    /// any cell.
    pub fn min_class_contrast(&self, grid: &ElectrodeGrid) -> f64 {
        let templates: Vec<Tensor> = (0..self.n_classes).map(|c| self.template(c, grid)).collect();
        let mut min = f64::INFINITY;
        for a in 0..templates.len() {
            for b in a + 1..templates.len() {
                let d = templates[a]
                    .data()
                    .iter()
                    .zip(templates[b].data())
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                min = min.min(d);
            }
        }
        min
    }
}

/// Class-major samples: template plus N(0, sigma) on every occupied cell.
/// Sample `i` draws from its own RNG stream, so the result depends only on
/// the spec.
pub fn generate_synthetic(spec: &SyntheticSpec, grid: &ElectrodeGrid) -> Result<Vec<FeatureTensor4D>> {
    spec.validate(grid)?;
    let occupied = grid.occupied();
    let plane = occupied.len();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(spec.n_classes * spec.n_samples_per_class);
    for class in 0..spec.n_classes {
        let template = spec.template(class, grid);
        for k in 0..spec.n_samples_per_class {
            let index = class * spec.n_samples_per_class + k;
            let mut rng = stream_rng(spec.seed, &format!("synthetic/{index}"));
            let mut x = template.clone();
            for (i, v) in x.data_mut().iter_mut().enumerate() {
                if occupied[i % plane] {
                    *v += noise.sample(&mut rng);
                }
            }
            out.push(FeatureTensor4D::new(x, class)?);
        }
    }
    Ok(out)
}

/// Raw-signal counterpart of [`SyntheticSpec`]: each activation becomes a
/// sinusoid at the band's carrier frequency on the channels inside its
/// region, during its time slices, on top of broadband Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRawSpec {
    pub features: SyntheticSpec,
    pub sample_rate: f64,
    pub slice_length_s: f64,
    pub bands: BandSet,
}

impl Default for SyntheticRawSpec {
    fn default() -> Self {
        Self {
            features: SyntheticSpec::default(),
            sample_rate: 200.0,
            slice_length_s: 1.0,
            bands: BandSet::default(),
        }
    }
}

/// Whole-hertz carrier inside a band.
pub fn carrier_hz(low: f64, high: f64) -> f64 {
    ((low + high) / 2.0).floor()
}

pub fn generate_synthetic_raw(spec: &SyntheticRawSpec, grid: &ElectrodeGrid) -> Result<Vec<LabeledRecording>> {
    let fs_spec = &spec.features;
    fs_spec.validate(grid)?;
    if fs_spec.s != spec.bands.len() {
        return Err(Error::Config(format!(
            "spec has {} bands, band set has {}",
            fs_spec.s,
            spec.bands.len()
        )));
    }
    let fs = spec.sample_rate;
    let slice = (spec.slice_length_s * fs).round() as usize;
    if slice < 2 {
        return Err(Error::Config("slice shorter than two samples".into()));
    }
    let n = slice * fs_spec.t;
    let noise = Normal::new(0.0, fs_spec.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for class in 0..fs_spec.n_classes {
        for k in 0..fs_spec.n_samples_per_class {
            let index = class * fs_spec.n_samples_per_class + k;
            let mut rng = stream_rng(fs_spec.seed, &format!("synthetic-raw/{index}"));
            let mut rows = Vec::with_capacity(grid.n_channels());
            for ch in 0..grid.n_channels() {
                let (r, c) = grid.cell(ch);
                let mut row: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
                for a in &fs_spec.signatures[class] {
                    if !a.region.contains(r, c) {
                        continue;
                    }
                    let band = &spec.bands.bands()[a.band];
                    let f = carrier_hz(band.low_hz, band.high_hz);
                    let phase = rng.gen_range(0.0..2.0 * PI);
                    for (i, x) in row.iter_mut().enumerate().take(a.window.1 * slice).skip(a.window.0 * slice) {
                        *x += a.amplitude * (2.0 * PI * f * i as f64 / fs + phase).sin();
                    }
                }
                rows.push(row);
            }
            out.push(LabeledRecording {
                recording: RawRecording::new(grid.channels().to_vec(), rows, fs)?,
                label: class,
            });
        }
    }
    Ok(out)
}
