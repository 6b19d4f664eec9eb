//! Positional, spectral and temporal attention masks over a
//! `(B, T, S, V, H)` activation, and the recalibration that multiplies the
//! input by all enabled masks.
//!
//! Positional: directional means along H and V are concatenated into a
//! length-(V+H) axis, mixed across that axis by a 1×1 2-D convolution over
//! the (T, S) plane, squashed by a sigmoid and split back into an
//! H-extent mask `m_v (B,T,S,1,H)` and a V-extent mask `m_h (B,T,S,V,1)`.
//!
//! Spectral: each (b, t) slice is read as a single-channel volume of depth S
//! and convolved with an (S×1×1) kernel into S output channels, one weight
//! per band and grid cell. Temporal does the same along T with a (T×1×1)
//! kernel.

use std::fmt;
use std::str::FromStr;

use pst_tensor::{Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::params::{uniform_init, Bound, ParamId, ParamSet};

/// Which of the three attention branches are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AttentionToggles {
    pub positional: bool,
    pub spectral: bool,
    pub temporal: bool,
}

impl AttentionToggles {
    pub const ALL: Self = Self {
        positional: true,
        spectral: true,
        temporal: true,
    };
    pub const NONE: Self = Self {
        positional: false,
        spectral: false,
        temporal: false,
    };

    pub fn any(self) -> bool {
        self.positional || self.spectral || self.temporal
    }
}

impl Default for AttentionToggles {
    fn default() -> Self {
        Self::ALL
    }
}

impl fmt::Display for AttentionToggles {
    /// `p`, `s`, `t` letters of the enabled branches, or `none`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.any() {
            return write!(f, "none");
        }
        for (on, c) in [(self.positional, 'p'), (self.spectral, 's'), (self.temporal, 't')] {
            if on {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

impl FromStr for AttentionToggles {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" || s.is_empty() {
            return Ok(Self::NONE);
        }
        let mut t = Self::NONE;
        for c in s.chars() {
            match c {
                'p' => t.positional = true,
                's' => t.spectral = true,
                't' => t.temporal = true,
                _ => return Err(Error::Config(format!("attention flags {s:?}: expected letters from `pst` or `none`"))),
            }
        }
        Ok(t)
    }
}

/// Extents of the activation an attention block operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDims {
    pub t: usize,
    pub s: usize,
    pub v: usize,
    pub h: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvParams {
    weight: ParamId,
    bias: ParamId,
}

/// Masks produced by one block; `None` for disabled branches.
#[derive(Clone, Copy, Debug)]
pub struct AttentionMasks {
    pub m_v: Option<Var>,
    pub m_h: Option<Var>,
    pub m_s: Option<Var>,
    pub m_t: Option<Var>,
}

impl AttentionMasks {
    pub fn iter(&self) -> impl Iterator<Item = Var> {
        [self.m_v, self.m_h, self.m_s, self.m_t].into_iter().flatten()
    }
}

/// One PST-Attention block. Parameters live in a shared [`ParamSet`]; only
/// branches enabled at construction get parameters.
#[derive(Clone, Debug)]
pub struct PstAttentionBlock {
    name: String,
    dims: BlockDims,
    enabled: AttentionToggles,
    positional: Option<ConvParams>,
    spectral: Option<ConvParams>,
    temporal: Option<ConvParams>,
}

impl PstAttentionBlock {
    pub fn new(
        name: &str,
        dims: BlockDims,
        enabled: AttentionToggles,
        params: &mut ParamSet,
        seed: u64,
    ) -> Result<Self> {
        let BlockDims { t, s, v, h } = dims;
        if [t, s, v, h].contains(&0) {
            return Err(Error::Config(format!("{name}: zero extent in {dims:?}")));
        }
        let mut conv = |branch: &str, w_shape: &[usize], fan_in: usize| -> Result<ConvParams> {
            let wname = format!("{name}.{branch}.weight");
            let bname = format!("{name}.{branch}.bias");
            let weight = params.add(&wname, uniform_init(w_shape, fan_in, seed, &wname))?;
            let bias = params.add(bname, Tensor::zeros(&w_shape[..1]))?;
            Ok(ConvParams { weight, bias })
        };
        let vh = v + h;
        let positional = enabled
            .positional
            .then(|| conv("positional", &[vh, vh, 1, 1], vh))
            .transpose()?;
        let spectral = enabled
            .spectral
            .then(|| conv("spectral", &[s, 1, s, 1, 1], s))
            .transpose()?;
        let temporal = enabled
            .temporal
            .then(|| conv("temporal", &[t, 1, t, 1, 1], t))
            .transpose()?;
        Ok(Self {
            name: name.to_string(),
            dims,
            enabled,
            positional,
            spectral,
            temporal,
        })
    }

    pub fn dims(&self) -> BlockDims {
        self.dims
    }

    pub fn enabled(&self) -> AttentionToggles {
        self.enabled
    }

    /// Switches branches on or off. A branch built without parameters cannot
    /// be switched on.
    pub fn set_enabled(&mut self, enabled: AttentionToggles) -> Result<()> {
        let missing = (enabled.positional && self.positional.is_none())
            || (enabled.spectral && self.spectral.is_none())
            || (enabled.temporal && self.temporal.is_none());
        if missing {
            return Err(Error::Config(format!(
                "{}: cannot enable {enabled} on a block built with {}",
                self.name, self.enabled
            )));
        }
        self.enabled = enabled;
        Ok(())
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<usize> {
        let s = tape.shape(x);
        let BlockDims { t, s: bands, v, h } = self.dims;
        if s.len() != 5 || s[1..] != [t, bands, v, h] {
            return Err(Error::Config(format!(
                "{}: input {:?} does not match (B, {t}, {bands}, {v}, {h})",
                self.name, s
            )));
        }
        Ok(s[0])
    }

    fn wrap(&self, branch: &str) -> impl FnOnce(pst_tensor::TensorError) -> Error {
        Error::layer(format!("{}.{branch}", self.name))
    }

    /// Returns `(m_v, m_h)` with shapes `(B,T,S,1,H)` and `(B,T,S,V,1)`.
    pub fn positional_attention(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<(Var, Var)> {
        let conv = self
            .positional
            .ok_or_else(|| Error::Config(format!("{}: positional branch has no parameters", self.name)))?;
        let b = self.check_input(tape, x)?;
        let BlockDims { t, s, v, h } = self.dims;
        let mut inner = || -> pst_tensor::Result<(Var, Var)> {
            let r_h = tape.adaptive_avg_pool(x, 4)?;
            let r_v = tape.adaptive_avg_pool(x, 3)?;
            let r_v = tape.reshape(r_v, &[b, t, s, h])?;
            let r_h = tape.reshape(r_h, &[b, t, s, v])?;
            let joined = tape.concat(&[r_v, r_h], 3)?;
            let chan = tape.transpose(joined, &[0, 3, 1, 2])?;
            let mixed = tape.conv2d(chan, p[conv.weight], Some(p[conv.bias]), [1, 1], [0, 0])?;
            let mask = tape.sigmoid(mixed);
            let mask = tape.transpose(mask, &[0, 2, 3, 1])?;
            let parts = tape.split(mask, 3, &[h, v])?;
            let m_v = tape.reshape(parts[0], &[b, t, s, 1, h])?;
            let m_h = tape.reshape(parts[1], &[b, t, s, v, 1])?;
            Ok((m_v, m_h))
        };
        inner().map_err(self.wrap("positional"))
    }

    /// Spectral mask, same shape as `x`.
    pub fn spectral_attention(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let conv = self
            .spectral
            .ok_or_else(|| Error::Config(format!("{}: spectral branch has no parameters", self.name)))?;
        let b = self.check_input(tape, x)?;
        let BlockDims { t, s, v, h } = self.dims;
        let mut inner = || -> pst_tensor::Result<Var> {
            let vol = tape.reshape(x, &[b * t, 1, s, v, h])?;
            let y = tape.conv3d(vol, p[conv.weight], Some(p[conv.bias]), [1; 3], [0; 3])?;
            let y = tape.reshape(y, &[b, t, s, v, h])?;
            Ok(tape.sigmoid(y))
        };
        inner().map_err(self.wrap("spectral"))
    }

    /// Temporal mask, same shape as `x`.
    pub fn temporal_attention(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let conv = self
            .temporal
            .ok_or_else(|| Error::Config(format!("{}: temporal branch has no parameters", self.name)))?;
        let b = self.check_input(tape, x)?;
        let BlockDims { t, s, v, h } = self.dims;
        let mut inner = || -> pst_tensor::Result<Var> {
            let swapped = tape.transpose(x, &[0, 2, 1, 3, 4])?;
            let vol = tape.reshape(swapped, &[b * s, 1, t, v, h])?;
            let y = tape.conv3d(vol, p[conv.weight], Some(p[conv.bias]), [1; 3], [0; 3])?;
            let y = tape.reshape(y, &[b, s, t, v, h])?;
            let y = tape.transpose(y, &[0, 2, 1, 3, 4])?;
            Ok(tape.sigmoid(y))
        };
        inner().map_err(self.wrap("temporal"))
    }

    pub fn masks(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<AttentionMasks> {
        self.check_input(tape, x)?;
        let (m_v, m_h) = if self.enabled.positional {
            let (a, b) = self.positional_attention(tape, p, x)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        let m_s = if self.enabled.spectral {
            Some(self.spectral_attention(tape, p, x)?)
        } else {
            None
        };
        let m_t = if self.enabled.temporal {
            Some(self.temporal_attention(tape, p, x)?)
        } else {
            None
        };
        Ok(AttentionMasks { m_v, m_h, m_s, m_t })
    }

    /// `x * m_v * m_h * m_s * m_t` over the enabled masks, as one broadcast
    /// product. With every branch disabled `x` itself is returned.
    pub fn apply(&self, tape: &mut Tape, p: &Bound, x: Var) -> Result<Var> {
        let masks = self.masks(tape, p, x)?;
        let factors: Vec<Var> = std::iter::once(x).chain(masks.iter()).collect();
        tape.product(&factors).map_err(self.wrap("recalibrate"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toggles_round_trip() {
        for s in ["none", "p", "s", "t", "ps", "pst"] {
            let t: AttentionToggles = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("px".parse::<AttentionToggles>().is_err());
    }

    #[test]
    fn disabled_branches_get_no_parameters() {
        let dims = BlockDims { t: 3, s: 2, v: 4, h: 5 };
        let mut full = ParamSet::new();
        PstAttentionBlock::new("a", dims, AttentionToggles::ALL, &mut full, 0).unwrap();
        let mut none = ParamSet::new();
        let mut blk = PstAttentionBlock::new("a", dims, AttentionToggles::NONE, &mut none, 0).unwrap();
        assert_eq!(full.len(), 6);
        assert_eq!(full.n_scalars(), 81 + 9 + 4 + 2 + 9 + 3);
        assert!(none.is_empty());
        assert!(blk.set_enabled(AttentionToggles::ALL).is_err());
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let dims = BlockDims { t: 3, s: 2, v: 4, h: 5 };
        let mut ps = ParamSet::new();
        let blk = PstAttentionBlock::new("a", dims, AttentionToggles::ALL, &mut ps, 0).unwrap();
        let mut tape = Tape::new();
        let p = ps.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(&[1, 3, 2, 5, 4]));
        assert!(blk.apply(&mut tape, &p, x).is_err());
    }
}
