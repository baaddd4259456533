//! Brute-force reference operations and tolerance-based comparison.
//!
//! Reference loops accumulate in f64 so that oracle-side rounding does not
//! eat into the tolerance budget of the f32 kernels under test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frontend::{Activation, ConvParams, PoolParams};
use crate::nda::{index_flatten, DimsSpec, NdArray};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Relative tolerance with an absolute floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceSpec {
    pub rel_tol: f64,
    pub abs_floor: f64,
}

impl Default for ToleranceSpec {
    fn default() -> Self {
        ToleranceSpec { rel_tol: 1e-5, abs_floor: 1e-6 }
    }
}

impl ToleranceSpec {
    pub const TIGHT: f64 = 1e-5;
    pub const LOOSE: f64 = 1e-3;
    /// Reductions longer than this get the loose tolerance.
    pub const LONG_REDUCTION: usize = 4096;

    pub fn for_reduction(terms: usize) -> Self {
        let rel_tol = if terms > Self::LONG_REDUCTION { Self::LOOSE } else { Self::TIGHT };
        ToleranceSpec { rel_tol, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub pass: bool,
    pub max_rel_err: f64,
    /// Logical index of the element furthest outside (or closest to) its bound.
    pub worst: Option<Vec<usize>>,
}

/// Uniform noise in [0.1, 1.0], never zero. Same seed, same values.
pub fn noise(dims: DimsSpec, seed: u64) -> NdArray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.span();
    let vals = (0..n).map(|_| rng.gen_range(0.1f32..=1.0f32)).collect();
    NdArray::from_vec(dims, vals).expect("span-sized buffer")
}

/// FNV-1a over a string, used to derive per-signature seeds.
pub fn seed_for(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

struct Strided<'a> {
    data: &'a [f32],
    strides: [usize; 4],
    sizes: [usize; 4],
}

impl<'a> Strided<'a> {
    fn new(a: &'a NdArray, names: [&str; 4]) -> Result<Self, OracleError> {
        let mut strides = [0; 4];
        let mut sizes = [0; 4];
        for (k, n) in names.iter().enumerate() {
            let d = a.dims().get(n).ok_or_else(|| {
                OracleError::ShapeMismatch(format!("`{}` lacks dimension `{n}`", a.dims().names_joined()))
            })?;
            strides[k] = d.stride;
            sizes[k] = d.size;
        }
        if a.dims().len() != 4 {
            return Err(OracleError::ShapeMismatch(format!("expected 4 dims, got `{}`", a.dims().names_joined())));
        }
        Ok(Strided { data: a.elems(), strides, sizes })
    }

    fn at(&self, i: [usize; 4]) -> f64 {
        let off: usize = (0..4).map(|k| i[k] * self.strides[k]).sum();
        self.data[off] as f64
    }
}

fn out_extent(input: usize, ksz: usize, stride: usize, pad: usize) -> Result<usize, OracleError> {
    crate::frontend::conv_out_size(input, ksz, stride, pad)
        .ok_or_else(|| OracleError::ShapeMismatch(format!("window {ksz} does not fit input {input} with pad {pad}")))
}

/// Direct convolution. Output is dense `img:chan:y:x`.
pub fn ref_conv(
    input: &NdArray,
    filters: &NdArray,
    bias: &NdArray,
    p: ConvParams,
    act: Option<Activation>,
) -> Result<NdArray, OracleError> {
    let inp = Strided::new(input, ["img", "chan", "y", "x"])?;
    let flt = Strided::new(filters, ["out_chan", "in_chan", "y", "x"])?;
    let [batch, in_chan, in_y, in_x] = inp.sizes;
    let [oc_n, f_ic, f_y, f_x] = flt.sizes;
    if f_ic != in_chan || f_y != p.ksz || f_x != p.ksz || oc_n != p.out_chans {
        return Err(OracleError::ShapeMismatch(format!(
            "filters {} do not match input {} and params {p:?}",
            filters.dims(),
            input.dims()
        )));
    }
    let bias_d = bias.dims().get("out_chan").filter(|d| d.size == oc_n && bias.dims().len() == 1);
    let bias_stride = bias_d.ok_or_else(|| OracleError::ShapeMismatch(format!("bias {}", bias.dims())))?.stride;
    let oy_n = out_extent(in_y, p.ksz, p.stride, p.pad)?;
    let ox_n = out_extent(in_x, p.ksz, p.stride, p.pad)?;
    let dims = DimsSpec::new(&["img", "chan", "y", "x"], &[batch, oc_n, oy_n, ox_n]).expect("valid dims");
    let mut out = NdArray::zeros(dims);
    let o = out.elems_mut();
    let mut w = 0;
    for b in 0..batch {
        for oc in 0..oc_n {
            for oy in 0..oy_n {
                for ox in 0..ox_n {
                    let mut acc = bias.elems()[oc * bias_stride] as f64;
                    for ic in 0..in_chan {
                        for ky in 0..p.ksz {
                            let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                            if iy < 0 || iy >= in_y as isize {
                                continue;
                            }
                            for kx in 0..p.ksz {
                                let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                                if ix < 0 || ix >= in_x as isize {
                                    continue;
                                }
                                acc += inp.at([b, ic, iy as usize, ix as usize]) * flt.at([oc, ic, ky, kx]);
                            }
                        }
                    }
                    let v = acc as f32;
                    o[w] = act.map_or(v, |a| a.apply(v));
                    w += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Max pooling with a -inf identity for out-of-range taps.
pub fn ref_pool_max(input: &NdArray, p: PoolParams) -> Result<NdArray, OracleError> {
    let inp = Strided::new(input, ["img", "chan", "y", "x"])?;
    let [batch, chans, in_y, in_x] = inp.sizes;
    let oy_n = out_extent(in_y, p.ksz, p.stride, p.pad)?;
    let ox_n = out_extent(in_x, p.ksz, p.stride, p.pad)?;
    let dims = DimsSpec::new(&["img", "chan", "y", "x"], &[batch, chans, oy_n, ox_n]).expect("valid dims");
    let mut out = NdArray::zeros(dims);
    let o = out.elems_mut();
    let mut w = 0;
    for b in 0..batch {
        for c in 0..chans {
            for oy in 0..oy_n {
                for ox in 0..ox_n {
                    let mut m = f64::NEG_INFINITY;
                    for ky in 0..p.ksz {
                        for kx in 0..p.ksz {
                            let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                            let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < in_y && (ix as usize) < in_x {
                                m = m.max(inp.at([b, c, iy as usize, ix as usize]));
                            }
                        }
                    }
                    o[w] = m as f32;
                    w += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise `max(0, x)`; `-0.0` maps to `0.0`. Output is dense.
pub fn ref_relu(input: &NdArray) -> NdArray {
    let dims = input.dims().densified();
    let mut out = NdArray::zeros(dims.clone());
    let mut w = 0;
    let src = input.dims().clone();
    let o = out.elems_mut();
    NdArray::for_each_index(&dims, |idx| {
        let v = input.elems()[index_flatten(&src, idx).expect("in range")];
        o[w] = Activation::Relu.apply(v);
        w += 1;
    });
    out
}

/// Elementwise check `|a-b| <= max(abs_floor, rel_tol * max(|a|,|b|))`.
///
/// Both arrays must have the same names and sizes; strides may differ.
pub fn compare(a: &NdArray, b: &NdArray, tol: ToleranceSpec) -> Result<Comparison, OracleError> {
    let same = a.dims().len() == b.dims().len()
        && a.dims().dims().iter().zip(b.dims().dims()).all(|(x, y)| x.name == y.name && x.size == y.size);
    if !same {
        return Err(OracleError::ShapeMismatch(format!("{} vs {}", a.dims(), b.dims())));
    }
    let mut pass = true;
    let mut max_rel_err = 0.0f64;
    let mut worst: Option<(f64, Vec<usize>)> = None;
    NdArray::for_each_index(a.dims(), |idx| {
        let x = a.elems()[index_flatten(a.dims(), idx).expect("in range")] as f64;
        let y = b.elems()[index_flatten(b.dims(), idx).expect("in range")] as f64;
        let diff = (x - y).abs();
        let mag = x.abs().max(y.abs());
        let rel = if diff == 0.0 { 0.0 } else if mag == 0.0 { f64::INFINITY } else { diff / mag };
        let allowed = tol.abs_floor.max(tol.rel_tol * mag);
        let ratio = if diff.is_nan() { f64::INFINITY } else { diff / allowed };
        if diff.is_nan() || diff > allowed {
            pass = false;
        }
        if rel.is_nan() || rel > max_rel_err {
            max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
        }
        if worst.as_ref().is_none_or(|(r, _)| ratio > *r) {
            worst = Some((ratio, idx.to_vec()));
        }
    });
    Ok(Comparison { pass, max_rel_err, worst: worst.map(|w| w.1) })
}
