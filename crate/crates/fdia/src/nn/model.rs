//! Model definitions, forward passes, and exact reverse-mode gradients.

use crate::spectral::ScaledLaplacian;
use crate::{FdiaError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

pub const INPUT_CHANNELS: usize = 2;

/// One graph-convolution layer: Chebyshev coefficient tensor theta indexed
/// `[k][c_in][c_out]` (row-major) plus a per-output-channel bias, with ReLU
/// activation.
#[derive(Debug, Clone)]
pub struct ChebConvLayer {
    pub theta: Vec<f64>,
    pub bias: Vec<f64>,
    pub k: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ChebConvLayer {
    fn theta_at(&self, k: usize, i: usize, j: usize) -> usize {
        (k * self.c_in + i) * self.c_out + j
    }

    pub fn num_params(&self) -> usize {
        self.theta.len() + self.bias.len()
    }
}

/// Scalar logit head: Frobenius inner product of an n x c weight matrix with
/// the final hidden activations, plus a scalar bias.
#[derive(Debug, Clone)]
pub struct DenseHead {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CgcnArch {
    pub n: usize,
    pub layers: usize,
    pub channels: usize,
    pub order: usize,
}

impl Default for CgcnArch {
    fn default() -> Self {
        CgcnArch {
            n: 0,
            layers: 4,
            channels: 32,
            order: 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CgcnModel {
    pub arch: CgcnArch,
    pub laplacian: Arc<ScaledLaplacian>,
    pub layers: Vec<ChebConvLayer>,
    pub head: DenseHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct FcnArch {
    pub n: usize,
    pub layers: usize,
    pub units: usize,
}

impl Default for FcnArch {
    fn default() -> Self {
        FcnArch {
            n: 0,
            layers: 4,
            units: 64,
        }
    }
}

/// Dense ReLU stack on the flattened 2n feature vector with a sigmoid head.
#[derive(Debug, Clone)]
pub struct FcnModel {
    pub arch: FcnArch,
    /// Per layer: (weights out x in row-major, bias).
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
    pub head_weights: Vec<f64>,
    pub head_bias: f64,
}

#[derive(Debug, Clone)]
pub enum Model {
    Cgcn(CgcnModel),
    Fcn(FcnModel),
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..limit)).collect()
}

impl CgcnModel {
    /// Glorot-uniform Chebyshev coefficients (fan counted through the filter
    /// order), zero biases. Deterministic per seed. `zero_init` is a test
    /// hook that yields sigma(0) = 0.5 for any input.
    pub fn init(arch: CgcnArch, laplacian: Arc<ScaledLaplacian>, seed: u64, zero_init: bool) -> Result<Self> {
        if arch.n != laplacian.n {
            return Err(FdiaError::Dimension(format!(
                "arch n={} vs laplacian n={}",
                arch.n, laplacian.n
            )));
        }
        if arch.layers < 1 || arch.channels < 1 || arch.order < 1 {
            return Err(FdiaError::Config("cgcn arch fields must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.layers);
        let mut c_in = INPUT_CHANNELS;
        for _ in 0..arch.layers {
            let c_out = arch.channels;
            let len = arch.order * c_in * c_out;
            let theta = if zero_init {
                vec![0.0; len]
            } else {
                glorot(&mut rng, arch.order * c_in, arch.order * c_out, len)
            };
            layers.push(ChebConvLayer {
                theta,
                bias: vec![0.0; c_out],
                k: arch.order,
                c_in,
                c_out,
            });
            c_in = c_out;
        }
        let head_len = arch.n * arch.channels;
        let head = DenseHead {
            weights: if zero_init {
                vec![0.0; head_len]
            } else {
                glorot(&mut rng, head_len, 1, head_len)
            },
            bias: 0.0,
            n: arch.n,
            c: arch.channels,
        };
        Ok(CgcnModel {
            arch,
            laplacian,
            layers,
            head,
        })
    }
}

impl FcnModel {
    pub fn init(arch: FcnArch, seed: u64, zero_init: bool) -> Result<Self> {
        if arch.layers < 1 || arch.units < 1 || arch.n < 1 {
            return Err(FdiaError::Config("fcn arch fields must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(arch.layers);
        let mut fan_in = arch.n * INPUT_CHANNELS;
        for _ in 0..arch.layers {
            let out = arch.units;
            let w = if zero_init {
                vec![0.0; out * fan_in]
            } else {
                glorot(&mut rng, fan_in, out, out * fan_in)
            };
            layers.push((w, vec![0.0; out]));
            fan_in = out;
        }
        let head_weights = if zero_init {
            vec![0.0; arch.units]
        } else {
            glorot(&mut rng, arch.units, 1, arch.units)
        };
        Ok(FcnModel {
            arch,
            layers,
            head_weights,
            head_bias: 0.0,
        })
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// softplus(z) = ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy computed in log-space from logits, with the
/// gradient w.r.t. the logits.
pub fn bce_from_logits(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(FdiaError::Dimension(format!(
            "bce over {} logits and {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let inv_n = 1.0 / logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        loss += softplus(z) - y * z;
        grad.push((sigmoid(z) - y) * inv_n);
    }
    Ok((loss * inv_n, grad))
}

/// Mean binary cross-entropy over probabilities, with the gradient w.r.t.
/// the predictions. Prefer [`bce_from_logits`] inside training.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    if predictions.is_empty() || predictions.len() != labels.len() {
        return Err(FdiaError::Dimension(format!(
            "bce over {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let inv_n = 1.0 / predictions.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(predictions.len());
    for (&p, &y) in predictions.iter().zip(labels) {
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        grad.push(((p - y) / (p * (1.0 - p))) * inv_n);
    }
    Ok((loss * inv_n, grad))
}

/// Forward caches for one CGCN layer.
struct LayerCache {
    /// K matrices, each n x c_in row-major: the Chebyshev basis of the input.
    xbar: Vec<Vec<f64>>,
    /// Pre-activation n x c_out.
    pre: Vec<f64>,
}

impl CgcnModel {
    /// Chebyshev basis of every input channel: xbar[k] holds T_k(L~) applied
    /// column-wise. Does c_in * (K-1) Laplacian matvecs.
    fn cheb_basis(&self, k: usize, c_in: usize, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.arch.n;
        let mut xbar = vec![vec![0.0; n * c_in]; k];
        xbar[0].copy_from_slice(x);
        if k == 1 {
            return xbar;
        }
        let mut col = vec![0.0; n];
        let mut out = vec![0.0; n];
        for i in 0..c_in {
            for v in 0..n {
                col[v] = x[v * c_in + i];
            }
            self.laplacian.matvec(&col, &mut out);
            for v in 0..n {
                xbar[1][v * c_in + i] = out[v];
            }
            for order in 2..k {
                for v in 0..n {
                    col[v] = xbar[order - 1][v * c_in + i];
                }
                self.laplacian.matvec(&col, &mut out);
                for v in 0..n {
                    xbar[order][v * c_in + i] = 2.0 * out[v] - xbar[order - 2][v * c_in + i];
                }
            }
        }
        xbar
    }

    fn layer_forward(&self, layer: &ChebConvLayer, x: &[f64]) -> LayerCache {
        let n = self.arch.n;
        let (k, c_in, c_out) = (layer.k, layer.c_in, layer.c_out);
        let xbar = self.cheb_basis(k, c_in, x);
        let mut pre = vec![0.0; n * c_out];
        for row in pre.chunks_exact_mut(c_out) {
            row.copy_from_slice(&layer.bias);
        }
        for order in 0..k {
            let basis = &xbar[order];
            for v in 0..n {
                let row_in = &basis[v * c_in..(v + 1) * c_in];
                let row_out = &mut pre[v * c_out..(v + 1) * c_out];
                for (i, &a) in row_in.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let t0 = layer.theta_at(order, i, 0);
                    let th = &layer.theta[t0..t0 + c_out];
                    for (o, &t) in row_out.iter_mut().zip(th) {
                        *o += a * t;
                    }
                }
            }
        }
        LayerCache { xbar, pre }
    }

    fn forward_caches(&self, x: &[f64]) -> (Vec<LayerCache>, Vec<f64>, f64) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for layer in &self.layers {
            let cache = self.layer_forward(layer, &act);
            act = cache.pre.iter().map(|&v| v.max(0.0)).collect();
            caches.push(cache);
        }
        let logit: f64 = self
            .head
            .weights
            .iter()
            .zip(&act)
            .map(|(&w, &a)| w * a)
            .sum::<f64>()
            + self.head.bias;
        (caches, act, logit)
    }

    pub fn forward_logit(&self, x: &[f64]) -> f64 {
        self.forward_caches(x).2
    }

    /// Gradient of `d_logit * logit(x)` w.r.t. every parameter, appended to
    /// `grad` in parameter-vector order.
    #[cfg(test)]
    fn accumulate_grad(&self, x: &[f64], d_logit: f64, grad: &mut [f64]) {
        let (caches, final_act, _) = self.forward_caches(x);
        self.backward(&caches, &final_act, d_logit, grad);
    }

    /// Reverse pass given cached forward intermediates.
    fn backward(&self, caches: &[LayerCache], final_act: &[f64], d_logit: f64, grad: &mut [f64]) {
        let n = self.arch.n;
        // head
        let mut offset = 0;
        for layer in &self.layers {
            offset += layer.num_params();
        }
        for (g, &a) in grad[offset..offset + self.head.weights.len()]
            .iter_mut()
            .zip(final_act)
        {
            *g += d_logit * a;
        }
        grad[offset + self.head.weights.len()] += d_logit;
        // delta w.r.t. the last hidden activation
        let mut delta: Vec<f64> = self.head.weights.iter().map(|&w| w * d_logit).collect();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[li];
            let (k, c_in, c_out) = (layer.k, layer.c_in, layer.c_out);
            // ReLU gate
            for (d, &p) in delta.iter_mut().zip(&cache.pre) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
            let param_offset: usize = self.layers[..li].iter().map(|l| l.num_params()).sum();
            let (theta_grad, bias_grad) =
                grad[param_offset..param_offset + layer.num_params()].split_at_mut(layer.theta.len());
            for v in 0..n {
                let drow = &delta[v * c_out..(v + 1) * c_out];
                for (b, &d) in bias_grad.iter_mut().zip(drow) {
                    *b += d;
                }
            }
            // d theta[k][i][j] = sum_v xbar_k[v][i] * delta[v][j]
            // d xbar_k[v][i] = sum_j theta[k][i][j] * delta[v][j]
            let mut dxbar = vec![vec![0.0; n * c_in]; k];
            for order in 0..k {
                let basis = &cache.xbar[order];
                let dx = &mut dxbar[order];
                for v in 0..n {
                    let drow = &delta[v * c_out..(v + 1) * c_out];
                    let brow = &basis[v * c_in..(v + 1) * c_in];
                    let dxrow = &mut dx[v * c_in..(v + 1) * c_in];
                    for i in 0..c_in {
                        let t0 = layer.theta_at(order, i, 0);
                        let th = &layer.theta[t0..t0 + c_out];
                        let tg = &mut theta_grad[t0..t0 + c_out];
                        let a = brow[i];
                        let mut acc = 0.0;
                        for j in 0..c_out {
                            tg[j] += a * drow[j];
                            acc += th[j] * drow[j];
                        }
                        dxrow[i] += acc;
                    }
                }
            }
            // adjoint of the Chebyshev recursion (L~ is symmetric)
            let mut col = vec![0.0; n];
            let mut out = vec![0.0; n];
            for order in (2..k).rev() {
                for i in 0..c_in {
                    for v in 0..n {
                        col[v] = dxbar[order][v * c_in + i];
                    }
                    self.laplacian.matvec(&col, &mut out);
                    for v in 0..n {
                        dxbar[order - 1][v * c_in + i] += 2.0 * out[v];
                        dxbar[order - 2][v * c_in + i] -= dxbar[order][v * c_in + i];
                    }
                }
            }
            let mut dx = std::mem::take(&mut dxbar[0]);
            if k > 1 {
                for i in 0..c_in {
                    for v in 0..n {
                        col[v] = dxbar[1][v * c_in + i];
                    }
                    self.laplacian.matvec(&col, &mut out);
                    for v in 0..n {
                        dx[v * c_in + i] += out[v];
                    }
                }
            }
            delta = dx;
        }
    }
}

impl FcnModel {
    fn forward_caches(&self, x: &[f64]) -> (Vec<Vec<f64>>, f64) {
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        for (w, b) in &self.layers {
            let out = b.len();
            let fan_in = act.len();
            let mut pre = b.clone();
            for (o, wrow) in pre.iter_mut().zip(w.chunks_exact(fan_in)) {
                *o += wrow.iter().zip(&act).map(|(&wi, &a)| wi * a).sum::<f64>();
            }
            act = pre.iter().map(|&v| v.max(0.0)).collect();
            pres.push(pre);
            let _ = out;
        }
        let logit = self
            .head_weights
            .iter()
            .zip(&act)
            .map(|(&w, &a)| w * a)
            .sum::<f64>()
            + self.head_bias;
        (pres, logit)
    }

    pub fn forward_logit(&self, x: &[f64]) -> f64 {
        self.forward_caches(x).1
    }

    #[cfg(test)]
    fn accumulate_grad(&self, x: &[f64], d_logit: f64, grad: &mut [f64]) {
        let (pres, _) = self.forward_caches(x);
        self.backward(x, &pres, d_logit, grad);
    }

    /// Reverse pass given the cached pre-activations.
    fn backward(&self, x: &[f64], pres: &[Vec<f64>], d_logit: f64, grad: &mut [f64]) {
        let acts: Vec<Vec<f64>> = pres
            .iter()
            .map(|p| p.iter().map(|&v| v.max(0.0)).collect())
            .collect();
        let layer_sizes: Vec<usize> = self.layers.iter().map(|(w, b)| w.len() + b.len()).collect();
        let head_offset: usize = layer_sizes.iter().sum();
        let final_act = acts.last().expect("fcn has at least one layer");
        for (g, &a) in grad[head_offset..head_offset + self.head_weights.len()]
            .iter_mut()
            .zip(final_act)
        {
            *g += d_logit * a;
        }
        grad[head_offset + self.head_weights.len()] += d_logit;
        let mut delta: Vec<f64> = self.head_weights.iter().map(|&w| w * d_logit).collect();
        for li in (0..self.layers.len()).rev() {
            for (d, &p) in delta.iter_mut().zip(&pres[li]) {
                if p <= 0.0 {
                    *d = 0.0;
                }
            }
            let input: &[f64] = if li == 0 { x } else { &acts[li - 1] };
            let fan_in = input.len();
            let offset: usize = layer_sizes[..li].iter().sum();
            let (w, _) = &self.layers[li];
            let (wg, bg) = grad[offset..offset + layer_sizes[li]].split_at_mut(w.len());
            let mut next_delta = vec![0.0; fan_in];
            for (o, &d) in delta.iter().enumerate() {
                bg[o] += d;
                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                let wgrow = &mut wg[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    wgrow[i] += d * input[i];
                    next_delta[i] += wrow[i] * d;
                }
            }
            delta = next_delta;
        }
    }
}

impl Model {
    pub fn n(&self) -> usize {
        match self {
            Model::Cgcn(m) => m.arch.n,
            Model::Fcn(m) => m.arch.n,
        }
    }

    pub fn input_width(&self) -> usize {
        self.n() * INPUT_CHANNELS
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Model::Cgcn(_) => "cgcn",
            Model::Fcn(_) => "fcn",
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Model::Cgcn(m) => {
                m.layers.iter().map(|l| l.num_params()).sum::<usize>() + m.head.weights.len() + 1
            }
            Model::Fcn(m) => {
                m.layers.iter().map(|(w, b)| w.len() + b.len()).sum::<usize>()
                    + m.head_weights.len()
                    + 1
            }
        }
    }

    /// Flat parameter vector: layers in order (theta/weights then bias),
    /// then head weights, then head bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        match self {
            Model::Cgcn(m) => {
                for l in &m.layers {
                    p.extend_from_slice(&l.theta);
                    p.extend_from_slice(&l.bias);
                }
                p.extend_from_slice(&m.head.weights);
                p.push(m.head.bias);
            }
            Model::Fcn(m) => {
                for (w, b) in &m.layers {
                    p.extend_from_slice(w);
                    p.extend_from_slice(b);
                }
                p.extend_from_slice(&m.head_weights);
                p.push(m.head_bias);
            }
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.num_params(), "parameter vector length");
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = &params[pos..pos + len];
            pos += len;
            s
        };
        match self {
            Model::Cgcn(m) => {
                for l in &mut m.layers {
                    let tl = l.theta.len();
                    l.theta.copy_from_slice(take(tl));
                    let bl = l.bias.len();
                    l.bias.copy_from_slice(take(bl));
                }
                let hl = m.head.weights.len();
                m.head.weights.copy_from_slice(take(hl));
                m.head.bias = take(1)[0];
            }
            Model::Fcn(m) => {
                for (w, b) in &mut m.layers {
                    let wl = w.len();
                    w.copy_from_slice(take(wl));
                    let bl = b.len();
                    b.copy_from_slice(take(bl));
                }
                let hl = m.head_weights.len();
                m.head_weights.copy_from_slice(take(hl));
                m.head_bias = take(1)[0];
            }
        }
    }

    /// Logit for one standardized sample (interleaved `[p_0, q_0, ...]`).
    /// The CGCN path reads it as an n x 2 node-feature matrix; the FCN path
    /// consumes the flat vector directly.
    pub fn forward_logit(&self, x: &[f64]) -> f64 {
        match self {
            Model::Cgcn(m) => m.forward_logit(x),
            Model::Fcn(m) => m.forward_logit(x),
        }
    }

    /// Mean BCE loss over a batch plus the full parameter gradient. One
    /// forward pass per sample; its caches feed the reverse pass directly.
    pub fn batch_loss_and_grad(
        &self,
        batch: &[(&[f64], f64)],
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(FdiaError::Dimension("empty training batch".into()));
        }
        let inv_n = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        for &(x, y) in batch {
            match self {
                Model::Cgcn(m) => {
                    let (caches, final_act, z) = m.forward_caches(x);
                    loss += softplus(z) - y * z;
                    m.backward(&caches, &final_act, (sigmoid(z) - y) * inv_n, &mut grad);
                }
                Model::Fcn(m) => {
                    let (pres, z) = m.forward_caches(x);
                    loss += softplus(z) - y * z;
                    m.backward(x, &pres, (sigmoid(z) - y) * inv_n, &mut grad);
                }
            }
        }
        Ok((loss * inv_n, grad))
    }
}
