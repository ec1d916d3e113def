//! Dense feed-forward Q-network with backpropagation and Adam.
//!
//! The production architecture is `1024 → 256 → 64 → 32 → 4` with rectifier
//! hidden activations and a linear output head, but every routine works on
//! arbitrary dimension chains so that gradient checks can run on small
//! networks. The loss is mean squared error on the *selected* action's output
//! only; gradients with respect to the other outputs are exactly zero.
//!
//! All reductions use a fixed lane-striped summation order (see [`dot`]), so
//! results are bit-identical across runs, thread counts, and target CPUs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// The Q-network dimension chain: 1024 spectrum bins in, one Q-value per
/// channel out.
pub const ARCH_DIMS: [usize; 5] = [1024, 256, 64, 32, 4];

/// Adam defaults; the learning rate is the protocol's pinned α.
pub const LEARNING_RATE: f64 = 0.0001;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("input length {got} does not match the network's input dimension {expected}")]
    InputLength { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty minibatch")]
    EmptyBatch,
    #[error("action index {action} out of range (0..{actions})")]
    BadAction { action: usize, actions: usize },
    #[error("invalid dimension chain: {0}")]
    BadDims(String),
    #[error("parameter count mismatch: expected {expected}, got {got}")]
    ParamCount { expected: usize, got: usize },
    #[error("weight file dimension mismatch: expected {expected:?}, got {got:?}")]
    DimsMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("malformed weight file: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Lane-striped dot product: eight independent accumulators, combined in a
/// fixed tree. The stripes map 1:1 onto SIMD lanes, so the compiler can
/// vectorize without reassociating anything — the result is the same bit
/// pattern whether the loop runs scalar, AVX2, or AVX-512.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ai = a.chunks_exact(8);
    let mut bi = b.chunks_exact(8);
    for (ca, cb) in (&mut ai).zip(&mut bi) {
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    for (l, (x, y)) in ai.remainder().iter().zip(bi.remainder()).enumerate() {
        acc[l] += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

/// `dst += scale * src`, element-wise.
#[inline]
fn axpy(dst: &mut [f64], scale: f64, src: &[f64]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// One dense layer's parameters, weights row-major (`rows × cols`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LayerParams {
    fn row(&self, r: usize) -> &[f64] {
        &self.w[r * self.cols..(r + 1) * self.cols]
    }
}

/// Dense feed-forward network: rectifier hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    dims: Vec<usize>,
    layers: Vec<LayerParams>,
}

impl QNetwork {
    /// He-initialized network: weights zero-mean Gaussian with variance
    /// `2 / fan_in` (rectifier-appropriate), biases zero.
    pub fn init(dims: &[usize], rng: &mut impl Rng) -> Result<Self, NetError> {
        Self::check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|io| {
                let (cols, rows) = (io[0], io[1]);
                let std = (2.0 / cols as f64).sqrt();
                let w = (0..rows * cols)
                    .map(|_| {
                        let g: f64 = rng.sample(StandardNormal);
                        g * std
                    })
                    .collect();
                LayerParams {
                    rows,
                    cols,
                    w,
                    b: vec![0.0; rows],
                }
            })
            .collect();
        Ok(QNetwork {
            dims: dims.to_vec(),
            layers,
        })
    }

    fn check_dims(dims: &[usize]) -> Result<(), NetError> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(NetError::BadDims(format!("{dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass. Validates shape and finiteness of the input.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::InputLength {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFinite("observation"));
        }
        let mut act = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            let mut next = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let z = dot(layer.row(r), &act) + layer.b[r];
                next.push(if last { z } else { z.max(0.0) });
            }
            act = next;
        }
        Ok(act)
    }

    /// Forward pass keeping every layer's (post-activation) output; used by
    /// backpropagation. `acts[0]` is the input, `acts.last()` the Q-values.
    fn forward_trace(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let last = i + 1 == self.layers.len();
            let prev = &acts[i];
            let mut next = Vec::with_capacity(layer.rows);
            for r in 0..layer.rows {
                let z = dot(layer.row(r), prev) + layer.b[r];
                next.push(if last { z } else { z.max(0.0) });
            }
            acts.push(next);
        }
        acts
    }

    /// Flatten all parameters (per layer: weights row-major, then biases)
    /// into one vector. The companion of [`QNetwork::set_parameters`] and the
    /// gradient layout of [`QNetwork::loss_and_gradients`].
    pub fn flatten_parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_parameters(&mut self, flat: &[f64]) -> Result<(), NetError> {
        if flat.len() != self.param_count() {
            return Err(NetError::ParamCount {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Mean-squared error over the batch on the selected actions only:
    /// `loss = mean_i (q(obs_i)[a_i] − target_i)²`.
    pub fn batch_loss(&self, batch: &[TrainSample<'_>]) -> Result<f64, NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let mut loss = 0.0;
        for s in batch {
            let q = self.forward(s.obs)?;
            if s.action >= q.len() {
                return Err(NetError::BadAction {
                    action: s.action,
                    actions: q.len(),
                });
            }
            let d = q[s.action] - s.target;
            loss += d * d;
        }
        Ok(loss / batch.len() as f64)
    }

    /// Backpropagation: returns the batch loss and writes the flat gradient
    /// (layout of [`QNetwork::flatten_parameters`]) into `grads`.
    pub fn loss_and_gradients(
        &self,
        batch: &[TrainSample<'_>],
        grads: &mut Vec<f64>,
    ) -> Result<f64, NetError> {
        if batch.is_empty() {
            return Err(NetError::EmptyBatch);
        }
        let n_layers = self.layers.len();
        grads.clear();
        grads.resize(self.param_count(), 0.0);

        // Per-layer offsets into the flat gradient vector.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in &self.layers {
            offsets.push((off, off + l.w.len()));
            off += l.w.len() + l.b.len();
        }

        let inv_n = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for s in batch {
            if s.action >= self.output_dim() {
                return Err(NetError::BadAction {
                    action: s.action,
                    actions: self.output_dim(),
                });
            }
            if !s.target.is_finite() {
                return Err(NetError::NonFinite("target"));
            }
            if s.obs.len() != self.input_dim() {
                return Err(NetError::InputLength {
                    expected: self.input_dim(),
                    got: s.obs.len(),
                });
            }
            let acts = self.forward_trace(s.obs);
            let q = acts.last().unwrap();
            let residual = q[s.action] - s.target;
            loss += residual * residual;

            // The output error has a single nonzero entry (masked loss), so
            // the last layer's gradient touches only the selected row and the
            // first backward step is a plain row read instead of a transposed
            // mat-vec.
            let dq = 2.0 * residual * inv_n;
            let out_layer = &self.layers[n_layers - 1];
            let (w_off, b_off) = offsets[n_layers - 1];
            let prev = &acts[n_layers - 1];
            axpy(
                &mut grads[w_off + s.action * out_layer.cols..w_off + (s.action + 1) * out_layer.cols],
                dq,
                prev,
            );
            grads[b_off + s.action] += dq;

            // delta over the last hidden layer: W_out[action] · dq, gated by
            // the rectifier mask.
            let mut delta: Vec<f64> = out_layer
                .row(s.action)
                .iter()
                .zip(prev)
                .map(|(w, &a)| if a > 0.0 { w * dq } else { 0.0 })
                .collect();

            // Hidden layers, back to front.
            for li in (0..n_layers - 1).rev() {
                let layer = &self.layers[li];
                let (w_off, b_off) = offsets[li];
                let prev = &acts[li];
                for r in 0..layer.rows {
                    let d = delta[r];
                    if d != 0.0 {
                        axpy(
                            &mut grads[w_off + r * layer.cols..w_off + (r + 1) * layer.cols],
                            d,
                            prev,
                        );
                        grads[b_off + r] += d;
                    }
                }
                if li > 0 {
                    // delta_prev[c] = Σ_r W[r][c]·delta[r], gated by the
                    // previous layer's rectifier mask.
                    let mut next_delta = vec![0.0; layer.cols];
                    for r in 0..layer.rows {
                        let d = delta[r];
                        if d != 0.0 {
                            axpy(&mut next_delta, d, layer.row(r));
                        }
                    }
                    for (nd, &a) in next_delta.iter_mut().zip(prev) {
                        if a <= 0.0 {
                            *nd = 0.0;
                        }
                    }
                    delta = next_delta;
                }
            }
        }
        Ok(loss * inv_n)
    }

    /// One optimizer step on a minibatch; returns the pre-update loss.
    pub fn train_minibatch(
        &mut self,
        opt: &mut AdamState,
        batch: &[TrainSample<'_>],
    ) -> Result<f64, NetError> {
        let mut grads = Vec::new();
        let loss = self.loss_and_gradients(batch, &mut grads)?;
        opt.apply(self, &grads)?;
        Ok(loss)
    }

    /// Deep value copy; later updates to `self` do not affect the clone.
    pub fn clone_parameters(&self) -> QNetwork {
        self.clone()
    }

    // -- persistence ---------------------------------------------------------

    /// Write the parameters as JSON:
    /// `{"dims":[...],"layers":[{"w":[[row],...],"b":[...]},...]}`,
    /// every value with 17 significant digits so the decimal text round-trips
    /// to the exact same bits.
    pub fn save_parameters(&self, path: &Path) -> Result<(), NetError> {
        let ioerr = |source| NetError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(ioerr)?);
        (|| -> std::io::Result<()> {
            write!(out, "{{\"dims\":[")?;
            for (i, d) in self.dims.iter().enumerate() {
                write!(out, "{}{}", if i > 0 { "," } else { "" }, d)?;
            }
            write!(out, "],\"layers\":[")?;
            for (li, l) in self.layers.iter().enumerate() {
                write!(out, "{}{{\"w\":[", if li > 0 { "," } else { "" })?;
                for r in 0..l.rows {
                    write!(out, "{}[", if r > 0 { "," } else { "" })?;
                    for (c, v) in l.row(r).iter().enumerate() {
                        write!(out, "{}{:.16e}", if c > 0 { "," } else { "" }, v)?;
                    }
                    write!(out, "]")?;
                }
                write!(out, "],\"b\":[")?;
                for (c, v) in l.b.iter().enumerate() {
                    write!(out, "{}{:.16e}", if c > 0 { "," } else { "" }, v)?;
                }
                write!(out, "]}}")?;
            }
            writeln!(out, "]}}")?;
            out.flush()
        })()
        .map_err(ioerr)
    }

    /// Load parameters, validating the dimension chain against `expected_dims`
    /// and every layer's shape against the chain.
    pub fn load_parameters(path: &Path, expected_dims: &[usize]) -> Result<QNetwork, NetError> {
        let ioerr = |source| NetError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut text = String::new();
        BufReader::new(File::open(path).map_err(ioerr)?)
            .read_to_string(&mut text)
            .map_err(ioerr)?;
        Self::from_json(&text, expected_dims)
    }

    fn from_json(text: &str, expected_dims: &[usize]) -> Result<QNetwork, NetError> {
        #[derive(serde::Deserialize)]
        struct FileLayer {
            w: Vec<Vec<f64>>,
            b: Vec<f64>,
        }
        #[derive(serde::Deserialize)]
        struct FileNet {
            dims: Vec<usize>,
            layers: Vec<FileLayer>,
        }
        let parsed: FileNet =
            serde_json::from_str(text).map_err(|e| NetError::Malformed(e.to_string()))?;
        if parsed.dims != expected_dims {
            return Err(NetError::DimsMismatch {
                expected: expected_dims.to_vec(),
                got: parsed.dims,
            });
        }
        if parsed.layers.len() + 1 != parsed.dims.len() {
            return Err(NetError::Malformed(format!(
                "{} layers for a {}-element dimension chain",
                parsed.layers.len(),
                parsed.dims.len()
            )));
        }
        let mut layers = Vec::with_capacity(parsed.layers.len());
        for (i, fl) in parsed.layers.into_iter().enumerate() {
            let (cols, rows) = (parsed.dims[i], parsed.dims[i + 1]);
            if fl.w.len() != rows || fl.w.iter().any(|row| row.len() != cols) || fl.b.len() != rows
            {
                return Err(NetError::Malformed(format!(
                    "layer {i} shape does not match dims {rows}x{cols}"
                )));
            }
            let mut w = Vec::with_capacity(rows * cols);
            for row in &fl.w {
                w.extend_from_slice(row);
            }
            if !w.iter().chain(fl.b.iter()).all(|v| v.is_finite()) {
                return Err(NetError::NonFinite("weight file"));
            }
            layers.push(LayerParams {
                rows,
                cols,
                w,
                b: fl.b,
            });
        }
        Ok(QNetwork {
            dims: expected_dims.to_vec(),
            layers,
        })
    }
}

/// One training example: the stored observation, the action taken, and the
/// bootstrap target for that action's Q-value.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub obs: &'a [f64],
    pub action: usize,
    pub target: f64,
}

/// Adam optimizer state (first/second moment per parameter, flat layout).
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &QNetwork) -> AdamState {
        Self::with_learning_rate(net, LEARNING_RATE)
    }

    pub fn with_learning_rate(net: &QNetwork, learning_rate: f64) -> AdamState {
        AdamState {
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            step: 0,
            m: vec![0.0; net.param_count()],
            v: vec![0.0; net.param_count()],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected moment update over the flat parameter vector.
    pub fn apply(&mut self, net: &mut QNetwork, grads: &[f64]) -> Result<(), NetError> {
        if grads.len() != self.m.len() {
            return Err(NetError::ParamCount {
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let mut off = 0;
        for l in &mut net.layers {
            for params in [&mut l.w, &mut l.b] {
                for p in params.iter_mut() {
                    let g = grads[off];
                    let m = &mut self.m[off];
                    let v = &mut self.v[off];
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                    off += 1;
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
