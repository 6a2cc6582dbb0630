//! Per-layer kernels and their reverse-mode counterparts. Tensors are flat,
//! channels-last `(len, ch)` buffers.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Swish,
    Linear,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Swish => x * sigmoid(x),
            Activation::Linear => x,
        }
    }

    /// Derivative given both the pre-activation `z` and the output `y`.
    pub fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Swish => {
                let s = sigmoid(z);
                s + z * s * (1.0 - s)
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn apply_all(self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.apply(v)).collect()
    }

    /// `gz = act'(z) ⊙ gy`
    pub fn backward(self, z: &[f64], y: &[f64], gy: &[f64]) -> Vec<f64> {
        match self {
            Activation::Linear => gy.to_vec(),
            _ => z.iter().zip(y).zip(gy).map(|((&z, &y), &g)| self.derivative(z, y) * g).collect(),
        }
    }
}

/// `out[j] = b[j] + Σ_i x[i] W[i, j]` with `W` stored row-major `(inp, out)`.
pub fn dense_forward(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n_out = b.len();
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        let row = &w[i * n_out..(i + 1) * n_out];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
}

/// Accumulates `gx += W gz` and, when requested, `gW += x ⊗ gz`, `gb += gz`.
pub fn dense_backward(w: &[f64], x: &[f64], gz: &[f64], gx: &mut [f64], grads: Option<(&mut [f64], &mut [f64])>) {
    let n_out = gz.len();
    for (i, g) in gx.iter_mut().enumerate() {
        let row = &w[i * n_out..(i + 1) * n_out];
        *g += row.iter().zip(gz).map(|(a, b)| a * b).sum::<f64>();
    }
    if let Some((gw, gb)) = grads {
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let row = &mut gw[i * n_out..(i + 1) * n_out];
            for (r, g) in row.iter_mut().zip(gz) {
                *r += xi * g;
            }
        }
        for (a, g) in gb.iter_mut().zip(gz) {
            *a += g;
        }
    }
}

/// Geometry of a stride-1, same-padded 1-D convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub len: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub transpose: bool,
}

impl ConvGeom {
    /// Input row feeding output row `i` through kernel tap `j`, if any.
    #[inline]
    fn source(&self, i: usize, j: usize) -> Option<usize> {
        let p = (self.kernel as isize - 1) / 2;
        let s = if self.transpose { i as isize - j as isize + p } else { i as isize + j as isize - p };
        (s >= 0 && (s as usize) < self.len).then_some(s as usize)
    }

    #[inline]
    fn k_index(&self, j: usize, c: usize) -> usize {
        (j * self.in_ch + c) * self.out_ch
    }
}

/// `out[i, o] = b[o] + Σ_{j, c} K[j, c, o] x[src(i, j), c]`
pub fn conv_forward(g: &ConvGeom, k: &[f64], b: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
    for i in 0..g.len {
        let orow = &mut out[i * g.out_ch..(i + 1) * g.out_ch];
        match b {
            Some(b) => orow.copy_from_slice(b),
            None => orow.fill(0.0),
        }
        for j in 0..g.kernel {
            let Some(s) = g.source(i, j) else { continue };
            for c in 0..g.in_ch {
                let xv = x[s * g.in_ch + c];
                if xv == 0.0 {
                    continue;
                }
                let kk = &k[g.k_index(j, c)..g.k_index(j, c) + g.out_ch];
                for (o, kv) in orow.iter_mut().zip(kk) {
                    *o += kv * xv;
                }
            }
        }
    }
}

/// Accumulates input and (optionally) kernel/bias cotangents of [`conv_forward`].
pub fn conv_backward(
    g: &ConvGeom,
    k: &[f64],
    x: &[f64],
    gz: &[f64],
    gx: &mut [f64],
    mut gk: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    for i in 0..g.len {
        let grow = &gz[i * g.out_ch..(i + 1) * g.out_ch];
        for j in 0..g.kernel {
            let Some(s) = g.source(i, j) else { continue };
            for c in 0..g.in_ch {
                let base = g.k_index(j, c);
                let kk = &k[base..base + g.out_ch];
                gx[s * g.in_ch + c] += kk.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                if let Some(gk) = gk.as_deref_mut() {
                    let xv = x[s * g.in_ch + c];
                    if xv != 0.0 {
                        for (a, gv) in gk[base..base + g.out_ch].iter_mut().zip(grow) {
                            *a += xv * gv;
                        }
                    }
                }
            }
        }
    }
    if let Some(gb) = gb {
        for i in 0..g.len {
            for (a, gv) in gb.iter_mut().zip(&gz[i * g.out_ch..(i + 1) * g.out_ch]) {
                *a += gv;
            }
        }
    }
}
