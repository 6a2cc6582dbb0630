//! Small feed-forward and recurrent networks with hand-written vector-Jacobian
//! products.
//!
//! A [`Network`] is an ordered list of [`LayerSpec`]s over a flat parameter
//! vector. Inputs are sequences of channels-last tensors; only a recurrent
//! first layer may consume more than one sequence element.

pub mod arch;
mod layers;

pub use arch::{Arch, ClosureFamily};
pub use layers::Activation;

use layers::{conv_backward, conv_forward, dense_backward, dense_forward, ConvGeom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("layer {layer}: {msg}")]
    Shape { layer: usize, msg: String },
    #[error("parameter vector has length {got}, network expects {expected}")]
    ParamLength { expected: usize, got: usize },
    #[error("input element has length {got}, network expects {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("cotangent has length {got}, network output has {expected}")]
    CotangentLength { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("non-recurrent network given a sequence of {0} elements")]
    SequenceNotAllowed(usize),
    #[error("layer {0} needs an evaluation context")]
    MissingContext(usize),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense { inp: usize, out: usize, act: Activation },
    SimpleRnn { inp: usize, hidden: usize, act: Activation },
    /// Convolutional recurrent cell: the input is lifted to the hidden
    /// channel count by a linear convolution, then
    /// `h_t = act(K_x * e_t + K_h * h_{t-1} + b)`.
    ConvRnn { in_ch: usize, hidden: usize, kernel: usize, act: Activation },
    Conv1d { in_ch: usize, out_ch: usize, kernel: usize, act: Activation },
    Conv1dTranspose { in_ch: usize, out_ch: usize, kernel: usize, act: Activation },
    /// Appends the depth and irradiance channels from the evaluation context.
    AddExtraChannels,
    /// Maps one channel `s` to `(βs, −s, (1−β)s)` with a trainable `β`.
    BioConstrain,
}

impl LayerSpec {
    pub fn n_params(&self) -> usize {
        match *self {
            LayerSpec::Dense { inp, out, .. } => inp * out + out,
            LayerSpec::SimpleRnn { inp, hidden, .. } => inp * hidden + hidden * hidden + hidden,
            LayerSpec::ConvRnn { in_ch, hidden, kernel, .. } => {
                kernel * in_ch * hidden + hidden + 2 * kernel * hidden * hidden + hidden
            }
            LayerSpec::Conv1d { in_ch, out_ch, kernel, .. }
            | LayerSpec::Conv1dTranspose { in_ch, out_ch, kernel, .. } => kernel * in_ch * out_ch + out_ch,
            LayerSpec::AddExtraChannels => 0,
            LayerSpec::BioConstrain => 1,
        }
    }

    fn is_recurrent(&self) -> bool {
        matches!(self, LayerSpec::SimpleRnn { .. } | LayerSpec::ConvRnn { .. })
    }
}

/// Per-grid-point auxiliary inputs supplied by the physical model.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalContext {
    pub depth: Vec<f64>,
    pub irradiance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkSpec", into = "NetworkSpec")]
pub struct Network {
    input_shape: (usize, usize),
    layers: Vec<LayerSpec>,
    shapes: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    n_params: usize,
}

/// Serialized form of a [`Network`]: the layout is rederived on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_shape: (usize, usize),
    pub layers: Vec<LayerSpec>,
}

impl TryFrom<NetworkSpec> for Network {
    type Error = NnError;
    fn try_from(s: NetworkSpec) -> Result<Self> {
        Network::new(s.input_shape, s.layers)
    }
}

impl From<Network> for NetworkSpec {
    fn from(n: Network) -> Self {
        NetworkSpec { input_shape: n.input_shape, layers: n.layers }
    }
}

enum LayerTape {
    Plain { input: Vec<f64>, z: Vec<f64>, y: Vec<f64> },
    Rnn { xs: Vec<Vec<f64>>, es: Vec<Vec<f64>>, zs: Vec<Vec<f64>>, hs: Vec<Vec<f64>> },
}

/// Intermediate values of one forward pass, consumed by [`Network::backward`].
pub struct Tape {
    layers: Vec<LayerTape>,
    seq_len: usize,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Network {
    pub fn new(input_shape: (usize, usize), layers: Vec<LayerSpec>) -> Result<Self> {
        let mut shapes = Vec::with_capacity(layers.len() + 1);
        let mut offsets = Vec::with_capacity(layers.len() + 1);
        let (mut len, mut ch) = input_shape;
        if len == 0 || ch == 0 {
            return Err(NnError::Shape { layer: 0, msg: "empty input shape".into() });
        }
        shapes.push((len, ch));
        let mut off = 0;
        for (idx, layer) in layers.iter().enumerate() {
            let err = |msg: String| NnError::Shape { layer: idx, msg };
            if layer.is_recurrent() && idx != 0 {
                return Err(err("recurrent layers must come first".into()));
            }
            (len, ch) = match *layer {
                LayerSpec::Dense { inp, out, .. } | LayerSpec::SimpleRnn { inp, hidden: out, .. } => {
                    if inp != len * ch || out == 0 {
                        return Err(err(format!("expects {inp} inputs, receives {}", len * ch)));
                    }
                    (1, out)
                }
                LayerSpec::ConvRnn { in_ch, hidden: out_ch, kernel, .. }
                | LayerSpec::Conv1d { in_ch, out_ch, kernel, .. }
                | LayerSpec::Conv1dTranspose { in_ch, out_ch, kernel, .. } => {
                    if in_ch != ch || out_ch == 0 || kernel == 0 {
                        return Err(err(format!("expects {in_ch} channels, receives {ch}")));
                    }
                    (len, out_ch)
                }
                LayerSpec::AddExtraChannels => (len, ch + 2),
                LayerSpec::BioConstrain => {
                    if ch != 1 {
                        return Err(err(format!("expects 1 channel, receives {ch}")));
                    }
                    (len, 3)
                }
            };
            offsets.push(off);
            off += layer.n_params();
            shapes.push((len, ch));
        }
        offsets.push(off);
        Ok(Self { input_shape, layers, shapes, offsets, n_params: off })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }

    pub fn output_shape(&self) -> (usize, usize) {
        *self.shapes.last().expect("at least the input shape")
    }

    pub fn output_len(&self) -> usize {
        let (l, c) = self.output_shape();
        l * c
    }

    pub fn is_recurrent(&self) -> bool {
        self.layers.first().is_some_and(LayerSpec::is_recurrent)
    }

    /// Parameter range `[start, end)` of layer `i`.
    pub fn layer_params(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Stable textual description of the architecture.
    pub fn fingerprint(&self) -> String {
        serde_json::to_string(&(self.input_shape, &self.layers)).expect("serializable layers")
    }

    fn check_inputs(&self, params: &[f64], seq: &[&[f64]]) -> Result<()> {
        if params.len() != self.n_params {
            return Err(NnError::ParamLength { expected: self.n_params, got: params.len() });
        }
        if seq.is_empty() {
            return Err(NnError::EmptySequence);
        }
        if !self.is_recurrent() && seq.len() != 1 {
            return Err(NnError::SequenceNotAllowed(seq.len()));
        }
        let n = self.input_len();
        if let Some(x) = seq.iter().find(|x| x.len() != n) {
            return Err(NnError::InputLength { expected: n, got: x.len() });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], seq: &[&[f64]], ctx: Option<&EvalContext>) -> Result<Vec<f64>> {
        Ok(self.forward_tape(params, seq, ctx)?.output)
    }

    pub fn forward_tape(&self, params: &[f64], seq: &[&[f64]], ctx: Option<&EvalContext>) -> Result<Tape> {
        self.check_inputs(params, seq)?;
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut cur: Vec<f64> = seq[0].to_vec();
        for (idx, layer) in self.layers.iter().enumerate() {
            let p = &params[self.layer_params(idx)];
            let (len, ch) = self.shapes[idx];
            let (olen, och) = self.shapes[idx + 1];
            let mut z = vec![0.0; olen * och];
            match *layer {
                LayerSpec::Dense { inp, out, act } => {
                    dense_forward(&p[..inp * out], &p[inp * out..], &cur, &mut z);
                    let y = act.apply_all(&z);
                    tapes.push(LayerTape::Plain { input: std::mem::replace(&mut cur, y.clone()), z, y });
                }
                LayerSpec::Conv1d { in_ch, out_ch, kernel, act }
                | LayerSpec::Conv1dTranspose { in_ch, out_ch, kernel, act } => {
                    let g = ConvGeom {
                        len,
                        in_ch,
                        out_ch,
                        kernel,
                        transpose: matches!(layer, LayerSpec::Conv1dTranspose { .. }),
                    };
                    let nk = kernel * in_ch * out_ch;
                    conv_forward(&g, &p[..nk], Some(&p[nk..]), &cur, &mut z);
                    let y = act.apply_all(&z);
                    tapes.push(LayerTape::Plain { input: std::mem::replace(&mut cur, y.clone()), z, y });
                }
                LayerSpec::SimpleRnn { inp, hidden, act } => {
                    let (wx, rest) = p.split_at(inp * hidden);
                    let (wh, b) = rest.split_at(hidden * hidden);
                    let mut hs = vec![vec![0.0; hidden]];
                    let mut zs = Vec::with_capacity(seq.len());
                    for x in seq {
                        let mut zt = vec![0.0; hidden];
                        dense_forward(wx, b, x, &mut zt);
                        let mut rec = vec![0.0; hidden];
                        dense_forward(wh, &vec![0.0; hidden], hs.last().expect("h0"), &mut rec);
                        for (a, r) in zt.iter_mut().zip(&rec) {
                            *a += r;
                        }
                        hs.push(act.apply_all(&zt));
                        zs.push(zt);
                    }
                    cur = hs.last().expect("nonempty").clone();
                    let xs = seq.iter().map(|x| x.to_vec()).collect();
                    tapes.push(LayerTape::Rnn { xs, es: Vec::new(), zs, hs });
                }
                LayerSpec::ConvRnn { in_ch, hidden, kernel, act } => {
                    let gl = ConvGeom { len, in_ch, out_ch: hidden, kernel, transpose: false };
                    let gh = ConvGeom { len, in_ch: hidden, out_ch: hidden, kernel, transpose: false };
                    let (kl, rest) = p.split_at(kernel * in_ch * hidden);
                    let (bl, rest) = rest.split_at(hidden);
                    let (kx, rest) = rest.split_at(kernel * hidden * hidden);
                    let (kh, b) = rest.split_at(kernel * hidden * hidden);
                    let n = len * hidden;
                    let mut hs = vec![vec![0.0; n]];
                    let mut es = Vec::with_capacity(seq.len());
                    let mut zs = Vec::with_capacity(seq.len());
                    let mut tmp = vec![0.0; n];
                    for x in seq {
                        let mut e = vec![0.0; n];
                        conv_forward(&gl, kl, Some(bl), x, &mut e);
                        let mut zt = vec![0.0; n];
                        conv_forward(&gh, kx, Some(b), &e, &mut zt);
                        conv_forward(&gh, kh, None, hs.last().expect("h0"), &mut tmp);
                        for (a, r) in zt.iter_mut().zip(&tmp) {
                            *a += r;
                        }
                        hs.push(act.apply_all(&zt));
                        zs.push(zt);
                        es.push(e);
                    }
                    cur = hs.last().expect("nonempty").clone();
                    let xs = seq.iter().map(|x| x.to_vec()).collect();
                    tapes.push(LayerTape::Rnn { xs, es, zs, hs });
                }
                LayerSpec::AddExtraChannels => {
                    let c = ctx.ok_or(NnError::MissingContext(idx))?;
                    if c.depth.len() != len || c.irradiance.len() != len {
                        return Err(NnError::Shape {
                            layer: idx,
                            msg: format!("context has {} points, tensor has {len}", c.depth.len()),
                        });
                    }
                    for i in 0..len {
                        z[i * och..i * och + ch].copy_from_slice(&cur[i * ch..(i + 1) * ch]);
                        z[i * och + ch] = c.depth[i];
                        z[i * och + ch + 1] = c.irradiance[i];
                    }
                    tapes.push(LayerTape::Plain { input: std::mem::replace(&mut cur, z), z: Vec::new(), y: Vec::new() });
                }
                LayerSpec::BioConstrain => {
                    let beta = p[0];
                    for i in 0..len {
                        let s = cur[i];
                        z[3 * i] = beta * s;
                        z[3 * i + 1] = -s;
                        z[3 * i + 2] = (1.0 - beta) * s;
                    }
                    tapes.push(LayerTape::Plain { input: std::mem::replace(&mut cur, z), z: Vec::new(), y: Vec::new() });
                }
            }
        }
        Ok(Tape { layers: tapes, seq_len: seq.len(), output: cur })
    }

    /// Reverse pass for the scalar `cot · output`. Returns the cotangent of
    /// every input sequence element and adds the parameter gradient into
    /// `grad` when given.
    pub fn backward(&self, params: &[f64], tape: &Tape, cot: &[f64], mut grad: Option<&mut [f64]>) -> Result<Vec<Vec<f64>>> {
        if params.len() != self.n_params {
            return Err(NnError::ParamLength { expected: self.n_params, got: params.len() });
        }
        if cot.len() != self.output_len() {
            return Err(NnError::CotangentLength { expected: self.output_len(), got: cot.len() });
        }
        if let Some(g) = grad.as_deref() {
            if g.len() != self.n_params {
                return Err(NnError::ParamLength { expected: self.n_params, got: g.len() });
            }
        }
        let mut gcur = cot.to_vec();
        let mut seq_grads: Option<Vec<Vec<f64>>> = None;
        for idx in (0..self.layers.len()).rev() {
            let range = self.layer_params(idx);
            let p = &params[range.clone()];
            let mut gp = grad.as_deref_mut().map(|g| &mut g[range]);
            let (len, ch) = self.shapes[idx];
            let mut gin = vec![0.0; len * ch];
            match (&self.layers[idx], &tape.layers[idx]) {
                (&LayerSpec::Dense { inp, out, act }, LayerTape::Plain { input, z, y }) => {
                    let gz = act.backward(z, y, &gcur);
                    let split = gp.as_deref_mut().map(|g| g.split_at_mut(inp * out));
                    dense_backward(&p[..inp * out], input, &gz, &mut gin, split);
                }
                (
                    &(LayerSpec::Conv1d { in_ch, out_ch, kernel, act }
                    | LayerSpec::Conv1dTranspose { in_ch, out_ch, kernel, act }),
                    LayerTape::Plain { input, z, y },
                ) => {
                    let g = ConvGeom {
                        len,
                        in_ch,
                        out_ch,
                        kernel,
                        transpose: matches!(self.layers[idx], LayerSpec::Conv1dTranspose { .. }),
                    };
                    let gz = act.backward(z, y, &gcur);
                    let nk = kernel * in_ch * out_ch;
                    match gp.as_deref_mut() {
                        Some(gp) => {
                            let (gk, gb) = gp.split_at_mut(nk);
                            conv_backward(&g, &p[..nk], input, &gz, &mut gin, Some(gk), Some(gb));
                        }
                        None => conv_backward(&g, &p[..nk], input, &gz, &mut gin, None, None),
                    }
                }
                (&LayerSpec::SimpleRnn { inp, hidden, act }, LayerTape::Rnn { xs, zs, hs, .. }) => {
                    let (wx, rest) = p.split_at(inp * hidden);
                    let (wh, _) = rest.split_at(hidden * hidden);
                    let mut gh = gcur.clone();
                    let mut gxs = vec![vec![0.0; inp]; xs.len()];
                    for t in (0..xs.len()).rev() {
                        let gz = act.backward(&zs[t], &hs[t + 1], &gh);
                        let mut gprev = vec![0.0; hidden];
                        match gp.as_deref_mut() {
                            Some(gp) => {
                                let (gwx, rest) = gp.split_at_mut(inp * hidden);
                                let (gwh, gb) = rest.split_at_mut(hidden * hidden);
                                dense_backward(wx, &xs[t], &gz, &mut gxs[t], Some((gwx, &mut *gb)));
                                let mut dummy = vec![0.0; hidden];
                                dense_backward(wh, &hs[t], &gz, &mut gprev, Some((gwh, &mut dummy)));
                            }
                            None => {
                                dense_backward(wx, &xs[t], &gz, &mut gxs[t], None);
                                dense_backward(wh, &hs[t], &gz, &mut gprev, None);
                            }
                        }
                        gh = gprev;
                    }
                    seq_grads = Some(gxs);
                }
                (&LayerSpec::ConvRnn { in_ch, hidden, kernel, act }, LayerTape::Rnn { xs, es, zs, hs }) => {
                    let gl = ConvGeom { len, in_ch, out_ch: hidden, kernel, transpose: false };
                    let ghg = ConvGeom { len, in_ch: hidden, out_ch: hidden, kernel, transpose: false };
                    let nl = kernel * in_ch * hidden;
                    let nh = kernel * hidden * hidden;
                    let kl = &p[..nl];
                    let kx = &p[nl + hidden..nl + hidden + nh];
                    let kh = &p[nl + hidden + nh..nl + hidden + 2 * nh];
                    let n = len * hidden;
                    let mut gh = gcur.clone();
                    let mut gxs = vec![vec![0.0; len * in_ch]; xs.len()];
                    for t in (0..xs.len()).rev() {
                        let gz = act.backward(&zs[t], &hs[t + 1], &gh);
                        let mut ge = vec![0.0; n];
                        let mut gprev = vec![0.0; n];
                        match gp.as_deref_mut() {
                            Some(gp) => {
                                let (gkl, rest) = gp.split_at_mut(nl);
                                let (gbl, rest) = rest.split_at_mut(hidden);
                                let (gkx, rest) = rest.split_at_mut(nh);
                                let (gkh, gb) = rest.split_at_mut(nh);
                                conv_backward(&ghg, kx, &es[t], &gz, &mut ge, Some(gkx), Some(gb));
                                conv_backward(&ghg, kh, &hs[t], &gz, &mut gprev, Some(gkh), None);
                                conv_backward(&gl, kl, &xs[t], &ge, &mut gxs[t], Some(gkl), Some(gbl));
                            }
                            None => {
                                conv_backward(&ghg, kx, &es[t], &gz, &mut ge, None, None);
                                conv_backward(&ghg, kh, &hs[t], &gz, &mut gprev, None, None);
                                conv_backward(&gl, kl, &xs[t], &ge, &mut gxs[t], None, None);
                            }
                        }
                        gh = gprev;
                    }
                    seq_grads = Some(gxs);
                }
                (LayerSpec::AddExtraChannels, LayerTape::Plain { .. }) => {
                    let och = ch + 2;
                    for i in 0..len {
                        gin[i * ch..(i + 1) * ch].copy_from_slice(&gcur[i * och..i * och + ch]);
                    }
                }
                (LayerSpec::BioConstrain, LayerTape::Plain { input, .. }) => {
                    let beta = p[0];
                    let mut gbeta = 0.0;
                    for i in 0..len {
                        let (g0, g1, g2) = (gcur[3 * i], gcur[3 * i + 1], gcur[3 * i + 2]);
                        gin[i] = beta * g0 - g1 + (1.0 - beta) * g2;
                        gbeta += input[i] * (g0 - g2);
                    }
                    if let Some(gp) = gp.as_deref_mut() {
                        gp[0] += gbeta;
                    }
                }
                _ => unreachable!("tape built by forward_tape for this network"),
            }
            gcur = gin;
        }
        Ok(seq_grads.unwrap_or_else(|| {
            let mut v = vec![vec![0.0; self.input_len()]; tape.seq_len];
            v[0] = gcur;
            v
        }))
    }

    pub fn vjp_input(&self, params: &[f64], seq: &[&[f64]], ctx: Option<&EvalContext>, cot: &[f64]) -> Result<Vec<Vec<f64>>> {
        let tape = self.forward_tape(params, seq, ctx)?;
        self.backward(params, &tape, cot, None)
    }

    pub fn vjp_params(&self, params: &[f64], seq: &[&[f64]], ctx: Option<&EvalContext>, cot: &[f64]) -> Result<Vec<f64>> {
        let tape = self.forward_tape(params, seq, ctx)?;
        let mut g = vec![0.0; self.n_params];
        self.backward(params, &tape, cot, Some(&mut g))?;
        Ok(g)
    }

    /// Glorot-uniform weights, zero biases, `β = 0.5`. With `zero_last` the
    /// last weight-carrying layer is all zeros so the network outputs zero.
    pub fn init_params(&self, seed: u64, zero_last: bool) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = vec![0.0; self.n_params];
        let mut glorot = |dst: &mut [f64], fan_in: usize, fan_out: usize| {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for v in dst {
                *v = rng.gen_range(-lim..=lim);
            }
        };
        for (idx, layer) in self.layers.iter().enumerate() {
            let dst = &mut p[self.layer_params(idx)];
            match *layer {
                LayerSpec::Dense { inp, out, .. } => glorot(&mut dst[..inp * out], inp, out),
                LayerSpec::SimpleRnn { inp, hidden, .. } => {
                    let (wx, rest) = dst.split_at_mut(inp * hidden);
                    glorot(wx, inp, hidden);
                    glorot(&mut rest[..hidden * hidden], hidden, hidden);
                }
                LayerSpec::ConvRnn { in_ch, hidden, kernel, .. } => {
                    let nl = kernel * in_ch * hidden;
                    let nh = kernel * hidden * hidden;
                    glorot(&mut dst[..nl], kernel * in_ch, kernel * hidden);
                    glorot(&mut dst[nl + hidden..nl + hidden + nh], kernel * hidden, kernel * hidden);
                    glorot(&mut dst[nl + hidden + nh..nl + hidden + 2 * nh], kernel * hidden, kernel * hidden);
                }
                LayerSpec::Conv1d { in_ch, out_ch, kernel, .. }
                | LayerSpec::Conv1dTranspose { in_ch, out_ch, kernel, .. } => {
                    glorot(&mut dst[..kernel * in_ch * out_ch], kernel * in_ch, kernel * out_ch)
                }
                LayerSpec::AddExtraChannels => {}
                LayerSpec::BioConstrain => dst[0] = 0.5,
            }
        }
        if zero_last {
            let last = self
                .layers
                .iter()
                .rposition(|l| !matches!(l, LayerSpec::AddExtraChannels | LayerSpec::BioConstrain));
            if let Some(i) = last {
                p[self.layer_params(i)].fill(0.0);
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn fd_check(net: &Network, params: &[f64], seq: &[Vec<f64>], ctx: Option<&EvalContext>, cot: &[f64]) -> (f64, f64) {
        let refs: Vec<&[f64]> = seq.iter().map(Vec::as_slice).collect();
        let tape = net.forward_tape(params, &refs, ctx).unwrap();
        let mut gp = vec![0.0; net.n_params()];
        let gx = net.backward(params, &tape, cot, Some(&mut gp)).unwrap();
        let scalar = |p: &[f64], s: &[Vec<f64>]| {
            let r: Vec<&[f64]> = s.iter().map(Vec::as_slice).collect();
            let o = net.forward(p, &r, ctx).unwrap();
            o.iter().zip(cot).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        let mut num_p = vec![0.0; params.len()];
        for i in 0..params.len() {
            let mut a = params.to_vec();
            let mut b = params.to_vec();
            a[i] += h;
            b[i] -= h;
            num_p[i] = (scalar(&a, seq) - scalar(&b, seq)) / (2.0 * h);
        }
        let mut num_x = Vec::new();
        let mut ana_x = Vec::new();
        for (k, x) in seq.iter().enumerate() {
            for i in 0..x.len() {
                let mut a = seq.to_vec();
                let mut b = seq.to_vec();
                a[k][i] += h;
                b[k][i] -= h;
                num_x.push((scalar(params, &a) - scalar(params, &b)) / (2.0 * h));
                ana_x.push(gx[k][i]);
            }
        }
        let rel = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let n: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            d / n.max(1e-8)
        };
        (rel(&gp, &num_p), rel(&ana_x, &num_x))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn layer_zoo(kind: usize, act: Activation) -> (Network, usize) {
        match kind {
            0 => (Network::new((1, 4), vec![LayerSpec::Dense { inp: 4, out: 3, act }]).unwrap(), 1),
            1 => (
                Network::new(
                    (1, 3),
                    vec![LayerSpec::SimpleRnn { inp: 3, hidden: 4, act }, LayerSpec::Dense { inp: 4, out: 2, act: Activation::Linear }],
                )
                .unwrap(),
                3,
            ),
            2 => (Network::new((7, 2), vec![LayerSpec::Conv1d { in_ch: 2, out_ch: 3, kernel: 3, act }]).unwrap(), 1),
            3 => (Network::new((6, 3), vec![LayerSpec::Conv1dTranspose { in_ch: 3, out_ch: 2, kernel: 3, act }]).unwrap(), 1),
            4 => (Network::new((5, 1), vec![LayerSpec::ConvRnn { in_ch: 1, hidden: 2, kernel: 3, act }]).unwrap(), 3),
            5 => (
                Network::new(
                    (4, 2),
                    vec![
                        LayerSpec::AddExtraChannels,
                        LayerSpec::Conv1d { in_ch: 4, out_ch: 1, kernel: 1, act },
                        LayerSpec::BioConstrain,
                    ],
                )
                .unwrap(),
                1,
            ),
            _ => (
                Network::new(
                    (4, 3),
                    vec![
                        LayerSpec::ConvRnn { in_ch: 3, hidden: 2, kernel: 1, act },
                        LayerSpec::AddExtraChannels,
                        LayerSpec::Conv1d { in_ch: 4, out_ch: 1, kernel: 1, act: Activation::Linear },
                        LayerSpec::BioConstrain,
                    ],
                )
                .unwrap(),
                2,
            ),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn vjps_match_finite_differences(kind in 0usize..7, act_i in 0usize..3, seed in any::<u64>()) {
            let act = [Activation::Tanh, Activation::Swish, Activation::Linear][act_i];
            let (net, seq_len) = layer_zoo(kind, act);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = random_vec(&mut rng, net.n_params());
            let seq: Vec<Vec<f64>> = (0..seq_len).map(|_| random_vec(&mut rng, net.input_len())).collect();
            let cot = random_vec(&mut rng, net.output_len());
            let len = net.input_shape().0;
            let ctx = EvalContext { depth: random_vec(&mut rng, len), irradiance: random_vec(&mut rng, len) };
            let (ep, ex) = fd_check(&net, &params, &seq, Some(&ctx), &cot);
            prop_assert!(ep < 1e-6, "param rel err {ep}");
            prop_assert!(ex < 1e-6, "input rel err {ex}");
        }

        #[test]
        fn bio_constrain_sums_to_zero(s in -1e3f64..1e3, beta in -5.0f64..5.0) {
            let net = Network::new((1, 1), vec![LayerSpec::BioConstrain]).unwrap();
            let o = net.forward(&[beta], &[&[s]], None).unwrap();
            prop_assert!((o[0] + o[1] + o[2]).abs() <= 4.0 * f64::EPSILON * s.abs() * (1.0 + beta.abs()));
        }
    }

    #[test]
    fn bio_constrain_example() {
        let net = Network::new((1, 1), vec![LayerSpec::BioConstrain]).unwrap();
        let o = net.forward(&[0.3], &[&[2.0]], None).unwrap();
        assert!((o[0] - 0.6).abs() < 1e-15 && o[1] == -2.0 && (o[2] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn dense_affine_example() {
        let net = Network::new((1, 1), vec![LayerSpec::Dense { inp: 1, out: 1, act: Activation::Linear }]).unwrap();
        assert_eq!(net.forward(&[2.0, 1.0], &[&[3.0]], None).unwrap(), vec![7.0]);
        let w = vec![0.5];
        assert_eq!(net.vjp_input(&[2.0, 1.0], &[&[3.0]], None, &w).unwrap()[0], vec![1.0]);
    }

    #[test]
    fn zero_params_give_zero_output() {
        for kind in 0..7 {
            let (net, seq_len) = layer_zoo(kind, Activation::Tanh);
            let p = vec![0.0; net.n_params()];
            let x = vec![0.7; net.input_len()];
            let seq: Vec<&[f64]> = (0..seq_len).map(|_| x.as_slice()).collect();
            let len = net.input_shape().0;
            let ctx = EvalContext { depth: vec![1.0; len], irradiance: vec![2.0; len] };
            let o = net.forward(&p, &seq, Some(&ctx)).unwrap();
            assert!(o.iter().all(|&v| v == 0.0), "kind {kind}: {o:?}");
        }
    }

    #[test]
    fn rnn_single_step_is_dense_on_zero_hidden() {
        let rnn = Network::new((1, 2), vec![LayerSpec::SimpleRnn { inp: 2, hidden: 3, act: Activation::Tanh }]).unwrap();
        let dense = Network::new((1, 2), vec![LayerSpec::Dense { inp: 2, out: 3, act: Activation::Tanh }]).unwrap();
        let p = rnn.init_params(3, false);
        let mut pd = p[..6].to_vec();
        pd.extend_from_slice(&[0.1, -0.2, 0.3]);
        let mut pr = p.clone();
        pr[15..18].copy_from_slice(&[0.1, -0.2, 0.3]);
        let x = [0.4, -0.9];
        assert_eq!(rnn.forward(&pr, &[&x], None).unwrap(), dense.forward(&pd, &[&x], None).unwrap());
    }

    #[test]
    fn rnn_two_step_hand_unroll() {
        let net = Network::new((1, 1), vec![LayerSpec::SimpleRnn { inp: 1, hidden: 1, act: Activation::Tanh }]).unwrap();
        let (wx, wh, b) = (0.8_f64, -0.5_f64, 0.1_f64);
        let (x1, x2) = (0.3_f64, -0.7_f64);
        let h1 = (wx * x1 + b).tanh();
        let h2 = (wx * x2 + wh * h1 + b).tanh();
        let got = net.forward(&[wx, wh, b], &[&[x1], &[x2]], None).unwrap()[0];
        assert!((got - h2).abs() < 1e-15);
    }

    #[test]
    fn glorot_bounds_and_determinism() {
        let net = Network::new((1, 100), vec![LayerSpec::Dense { inp: 100, out: 100, act: Activation::Tanh }]).unwrap();
        let a = net.init_params(11, false);
        assert_eq!(a, net.init_params(11, false));
        let lim = (6.0f64 / 200.0).sqrt();
        assert!(a[..10_000].iter().all(|w| w.abs() <= lim));
        assert!(a[10_000..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_last_layer_keeps_beta() {
        let net = layer_zoo(5, Activation::Swish).0;
        let p = net.init_params(1, true);
        assert_eq!(p[..net.n_params() - 1].iter().filter(|v| **v != 0.0).count(), 0);
        assert_eq!(p[net.n_params() - 1], 0.5);
    }

    #[test]
    fn conv_same_padding_preserves_length() {
        let net = Network::new((9, 2), vec![LayerSpec::Conv1d { in_ch: 2, out_ch: 5, kernel: 3, act: Activation::Swish }]).unwrap();
        assert_eq!(net.output_shape(), (9, 5));
    }

    #[test]
    fn shape_errors() {
        assert!(Network::new((1, 3), vec![LayerSpec::Dense { inp: 4, out: 2, act: Activation::Tanh }]).is_err());
        let net = Network::new((1, 3), vec![LayerSpec::Dense { inp: 3, out: 2, act: Activation::Tanh }]).unwrap();
        assert!(matches!(net.forward(&[0.0; 7], &[&[0.0; 3]], None), Err(NnError::ParamLength { .. })));
        let add = Network::new((2, 1), vec![LayerSpec::AddExtraChannels]).unwrap();
        assert_eq!(add.forward(&[], &[&[0.0; 2]], None).unwrap_err(), NnError::MissingContext(0));
    }
}
