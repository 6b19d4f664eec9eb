//! Electrode placement on a `V × H` grid and the `(T, S, V, H)` sample
//! representation.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use pst_tensor::Tensor;

use crate::error::{Error, Result};
use crate::features::DeFeatureFrame;

/// Built-in 62-channel placement on an 8 × 9 grid.
pub const SEED62_LAYOUT: &str = include_str!("../data/seed62_8x9.layout");

/// Mapping of channel names to grid cells. Channel order is the order the
/// placements were given in, and band values passed to
/// [`scatter_to_grid`] follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectrodeGrid {
    rows: usize,
    cols: usize,
    channels: Vec<String>,
    cells: Vec<(usize, usize)>,
    fill_value: f64,
}

impl ElectrodeGrid {
    pub fn new(rows: usize, cols: usize, placements: Vec<(String, (usize, usize))>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Layout(format!("grid {rows}x{cols} is empty")));
        }
        let mut by_cell = HashMap::new();
        let mut by_name = HashMap::new();
        for (name, (r, c)) in &placements {
            if *r >= rows || *c >= cols {
                return Err(Error::Layout(format!(
                    "{name} at ({r}, {c}) outside {rows}x{cols} grid"
                )));
            }
            if let Some(other) = by_cell.insert((*r, *c), name) {
                return Err(Error::Layout(format!(
                    "{name} and {other} share cell ({r}, {c})"
                )));
            }
            if by_name.insert(name.as_str(), ()).is_some() {
                return Err(Error::Layout(format!("channel {name} placed twice")));
            }
        }
        let (channels, cells) = placements.into_iter().unzip();
        Ok(Self {
            rows,
            cols,
            channels,
            cells,
            fill_value: 0.0,
        })
    }

    /// Parses `<name> <row> <col>` lines (zero-indexed, `#` comments). The
    /// grid extent is the smallest rectangle holding every placement.
    pub fn parse(text: &str) -> Result<Self> {
        let mut placements = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::Layout(format!("line {}: expected `<name> <row> <col>`", lineno + 1));
            if fields.len() != 3 {
                return Err(bad());
            }
            let r = fields[1].parse::<usize>().map_err(|_| bad())?;
            let c = fields[2].parse::<usize>().map_err(|_| bad())?;
            placements.push((fields[0].to_string(), (r, c)));
        }
        if placements.is_empty() {
            return Err(Error::Layout("no placements".into()));
        }
        let rows = placements.iter().map(|p| p.1 .0).max().unwrap_or(0) + 1;
        let cols = placements.iter().map(|p| p.1 .1).max().unwrap_or(0) + 1;
        Self::new(rows, cols, placements)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// The built-in 62-channel 8 × 9 layout.
    pub fn seed62() -> Self {
        Self::parse(SEED62_LAYOUT).expect("built-in layout is valid")
    }

    pub fn with_fill_value(mut self, fill_value: f64) -> Self {
        self.fill_value = fill_value;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn fill_value(&self) -> f64 {
        self.fill_value
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn cell(&self, channel: usize) -> (usize, usize) {
        self.cells[channel]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.eq_ignore_ascii_case(name))
    }

    /// For each grid channel, its index among `names` (case-insensitive).
    pub fn channel_order_for(&self, names: &[String]) -> Result<Vec<usize>> {
        self.channels
            .iter()
            .map(|ch| {
                names
                    .iter()
                    .position(|n| n.eq_ignore_ascii_case(ch))
                    .ok_or_else(|| Error::Layout(format!("recording has no channel {ch}")))
            })
            .collect()
    }

    /// Row-major `V × H` occupancy.
    pub fn occupied(&self) -> Vec<bool> {
        let mut mask = vec![false; self.rows * self.cols];
        for &(r, c) in &self.cells {
            mask[r * self.cols + c] = true;
        }
        mask
    }

    /// Layout file text for this grid.
    pub fn to_layout_text(&self) -> String {
        self.channels
            .iter()
            .zip(&self.cells)
            .map(|(n, (r, c))| format!("{n} {r} {c}\n"))
            .collect()
    }
}

/// Places one value per channel on its cell; unoccupied cells get the
/// grid's fill value. Returns the `V × H` plane row-major.
pub fn scatter_to_grid(values: &[f64], grid: &ElectrodeGrid) -> Result<Vec<f64>> {
    if values.len() != grid.n_channels() {
        return Err(Error::Count {
            what: "channel values",
            expected: grid.n_channels(),
            actual: values.len(),
        });
    }
    let mut plane = vec![grid.fill_value; grid.rows * grid.cols];
    for (&v, &(r, c)) in values.iter().zip(&grid.cells) {
        plane[r * grid.cols + c] = v;
    }
    Ok(plane)
}

/// Reads the channel values back from a `V × H` plane.
pub fn gather_from_grid(plane: &[f64], grid: &ElectrodeGrid) -> Vec<f64> {
    grid.cells.iter().map(|&(r, c)| plane[r * grid.cols + c]).collect()
}

/// One labelled sample in `(T, S, V, H)` axis order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor4D {
    data: Tensor,
    label: usize,
}

impl FeatureTensor4D {
    pub fn new(data: Tensor, label: usize) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::Config(format!(
                "sample must be (T, S, V, H), got {:?}",
                data.shape()
            )));
        }
        if !data.all_finite() {
            return Err(Error::NonFinite("sample value"));
        }
        Ok(Self { data, label })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn label(&self) -> usize {
        self.label
    }

    /// `[T, S, V, H]`.
    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }
}

/// Stacks `t` frames into a `(T, S, V, H)` tensor. Frames must list channels
/// in the grid's channel order.
pub fn assemble_4d(frames: &[DeFeatureFrame], grid: &ElectrodeGrid, t: usize) -> Result<Tensor> {
    if frames.len() != t {
        return Err(Error::Count {
            what: "time frames",
            expected: t,
            actual: frames.len(),
        });
    }
    let s = frames.first().map_or(0, |f| f.n_bands);
    let plane = grid.rows * grid.cols;
    let mut data = Vec::with_capacity(t * s * plane);
    for frame in frames {
        if frame.n_channels != grid.n_channels() || frame.n_bands != s {
            return Err(Error::Count {
                what: "channels per frame",
                expected: grid.n_channels(),
                actual: frame.n_channels,
            });
        }
        for band in 0..s {
            data.extend(scatter_to_grid(&frame.band_column(band), grid)?);
        }
    }
    Ok(Tensor::new(vec![t, s, grid.rows, grid.cols], data)?)
}

/// Subtracts the mean and divides by the standard deviation over the whole
/// tensor (std floored at 1e-8).
pub fn standardize(x: &mut Tensor) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    x.data_mut().iter_mut().for_each(|v| *v = (*v - mean) / std);
}

/// How the spectral axis is reduced for the VHT collapse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandReduce {
    Mean,
    Band(usize),
}

/// 3-D reductions of a `(T, S, V, H)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Collapse {
    /// Mean over time → `(S, V, H)`.
    Vhs,
    /// One band or the band mean → `(T, V, H)`.
    Vht(BandReduce),
    /// Grid flattened to a channel axis → `(T, S, V·H)`.
    Pst,
}

impl fmt::Display for Collapse {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Collapse::Vhs => write!(f, "vhs"),
            Collapse::Vht(BandReduce::Mean) => write!(f, "vht:mean"),
            Collapse::Vht(BandReduce::Band(b)) => write!(f, "vht:{b}"),
            Collapse::Pst => write!(f, "pst"),
        }
    }
}

impl FromStr for Collapse {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vhs" => Ok(Collapse::Vhs),
            "vht" | "vht:mean" => Ok(Collapse::Vht(BandReduce::Mean)),
            "pst" => Ok(Collapse::Pst),
            other => other
                .strip_prefix("vht:")
                .and_then(|b| b.parse().ok())
                .map(|b| Collapse::Vht(BandReduce::Band(b)))
                .ok_or_else(|| Error::Config(format!("unknown collapse mode {s:?}"))),
        }
    }
}

pub fn collapse_to_3d(x: &Tensor, mode: Collapse) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(Error::Config(format!("collapse needs (T, S, V, H), got {:?}", x.shape())));
    }
    let [t, s, v, h] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let plane = v * h;
    let d = x.data();
    match mode {
        Collapse::Vhs => {
            let mut out = vec![0.0; s * plane];
            for ti in 0..t {
                for (o, &val) in out.iter_mut().zip(&d[ti * s * plane..(ti + 1) * s * plane]) {
                    *o += val;
                }
            }
            out.iter_mut().for_each(|o| *o /= t as f64);
            Ok(Tensor::new(vec![s, v, h], out)?)
        }
        Collapse::Vht(reduce) => {
            let mut out = vec![0.0; t * plane];
            for ti in 0..t {
                let dst = &mut out[ti * plane..(ti + 1) * plane];
                match reduce {
                    BandReduce::Band(b) if b >= s => {
                        return Err(Error::Config(format!("band {b} out of range for S={s}")))
                    }
                    BandReduce::Band(b) => {
                        let base = (ti * s + b) * plane;
                        dst.copy_from_slice(&d[base..base + plane]);
                    }
                    BandReduce::Mean => {
                        for si in 0..s {
                            let base = (ti * s + si) * plane;
                            for (o, &val) in dst.iter_mut().zip(&d[base..base + plane]) {
                                *o += val;
                            }
                        }
                        dst.iter_mut().for_each(|o| *o /= s as f64);
                    }
                }
            }
            Ok(Tensor::new(vec![t, v, h], out)?)
        }
        Collapse::Pst => Ok(x.clone().reshape(&[t, s, plane])?),
    }
}
