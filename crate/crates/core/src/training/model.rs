//! Dense x-prediction network with hand-written backpropagation.

use std::io::{Read, Write};

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::scalar::{lit, Scalar};

use super::TrainingError;

pub const MODEL_MAGIC: &[u8; 4] = b"HBTD";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Silu,
    Identity,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Self::Silu => 0,
            Self::Identity => 1,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(Self::Silu),
            1 => Some(Self::Identity),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub horizon: usize,
    pub n_joints: usize,
    pub obs_dim: usize,
    /// Width of the sinusoidal timestep embedding (even).
    pub time_embedding: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train_steps: usize,
    /// Assumed spread of clean chunk entries; sets the noise-level dependent
    /// skip `c(τ) · x_τ` added to the output. `0` disables the skip.
    #[serde(default = "default_data_std")]
    pub data_std: f64,
    /// Chunk rows at which the network works; the chunk is read through a
    /// least-squares fit of a piecewise-linear curve through these rows and
    /// written by interpolating between them. Empty means every row.
    #[serde(default)]
    pub knots: Vec<usize>,
}

fn default_data_std() -> f64 {
    0.5
}

impl ModelConfig {
    pub fn chunk_dim(&self) -> usize {
        self.horizon * self.n_joints * crate::embodiment::ACTION_WIDTH
    }

    /// Chunk entries seen and produced by the network.
    pub fn net_chunk_dim(&self) -> usize {
        let rows = if self.knots.is_empty() { self.horizon } else { self.knots.len() };
        rows * self.n_joints * crate::embodiment::ACTION_WIDTH
    }

    /// Knots must start at row 0, end at the last row and increase strictly.
    pub fn check(&self) -> Result<(), TrainingError> {
        let k = &self.knots;
        if !k.is_empty()
            && (k.len() < 2 || k[0] != 0 || k[k.len() - 1] + 1 != self.horizon || k.windows(2).any(|w| w[1] <= w[0]))
        {
            return Err(TrainingError::BadModelFile(format!(
                "knots {k:?} must increase from 0 to {}",
                self.horizon.saturating_sub(1)
            )));
        }
        if self.time_embedding % 2 != 0 || !(self.data_std.is_finite() && self.data_std >= 0.0) {
            return Err(TrainingError::BadModelFile("odd time embedding or bad data_std".into()));
        }
        Ok(())
    }

    /// Interpolation matrix `(horizon, knots)` and its least-squares inverse.
    fn basis(&self) -> Option<(Array2<f64>, Array2<f64>)> {
        if self.knots.is_empty() {
            return None;
        }
        let (h, k) = (self.horizon, self.knots.len());
        let mut b = Array2::zeros((h, k));
        for j in 0..k - 1 {
            let (a, c) = (self.knots[j], self.knots[j + 1]);
            for t in a..=c {
                let u = (t - a) as f64 / (c - a) as f64;
                b[[t, j]] = if t == c { 0.0 } else { 1.0 - u };
                b[[t, j + 1]] = u;
            }
        }
        let gram = b.t().dot(&b);
        let p = cholesky_solve(&gram, &b.t().to_owned());
        Some((b, p))
    }

    /// Observation features plus timestep embedding; fed to every layer.
    pub fn cond_dim(&self) -> usize {
        self.obs_dim + self.time_embedding
    }

    pub fn input_dim(&self) -> usize {
        self.net_chunk_dim() + self.cond_dim()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(&self.hidden);
        d.push(self.net_chunk_dim());
        d
    }

    /// `(in, out)` of each dense layer. Layers after the first also see the
    /// conditioning features.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let d = self.layer_dims();
        (0..d.len() - 1)
            .map(|l| (if l == 0 { d[0] } else { d[l] + self.cond_dim() }, d[l + 1]))
            .collect()
    }

    /// Skip coefficient `√ᾱ σ² / (ᾱ σ² + 1 − ᾱ)` for every timestep.
    pub fn skip_table(&self) -> Vec<f64> {
        if self.data_std == 0.0 {
            return vec![0.0; self.train_steps];
        }
        let sched = crate::diffusion::NoiseSchedule::<f64>::cosine(self.train_steps);
        let v = self.data_std * self.data_std;
        sched
            .alpha_bars
            .iter()
            .map(|&ab| ab.sqrt() * v / (ab * v + 1.0 - ab))
            .collect()
    }
}

/// Solves `a x = rhs` for symmetric positive definite `a`.
fn cholesky_solve(a: &Array2<f64>, rhs: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let dot: f64 = (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum();
            l[[i, j]] = if i == j {
                (a[[i, i]] - dot).sqrt()
            } else {
                (a[[i, j]] - dot) / l[[j, j]]
            };
        }
    }
    let mut x = rhs.clone();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let dot: f64 = (0..i).map(|k| l[[i, k]] * col[k]).sum();
            col[i] = (col[i] - dot) / l[[i, i]];
        }
        for i in (0..n).rev() {
            let dot: f64 = (i + 1..n).map(|k| l[[k, i]] * col[k]).sum();
            col[i] = (col[i] - dot) / l[[i, i]];
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    /// `(in, out)`.
    pub w: Array2<T>,
    pub b: Array1<T>,
}

/// MLP over `[noisy chunk | observation | timestep embedding]` predicting the
/// clean chunk. The conditioning features are appended to every hidden layer's
/// input, and the output is `c(τ) · x_τ + network`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDenoiser<T> {
    pub config: ModelConfig,
    pub layers: Vec<Dense<T>>,
    skip: Vec<T>,
    /// Interpolation and projection matrices when `config.knots` is set.
    basis: Option<(Array2<T>, Array2<T>)>,
}

/// Network input rows, the raw noisy chunks and the per-row skip coefficient.
#[derive(Debug, Clone)]
pub struct ModelInput<T> {
    pub x: Array2<T>,
    pub raw: Array2<T>,
    pub skip: Vec<T>,
}

/// Activations kept from a forward pass for backpropagation.
pub struct ForwardCache<T> {
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Array2<T>>,
}

fn silu<T: Scalar>(x: T) -> T {
    x / (T::one() + (-x).exp())
}

fn silu_grad<T: Scalar>(x: T) -> T {
    let s = T::one() / (T::one() + (-x).exp());
    s * (T::one() + x * (T::one() - s))
}

pub fn timestep_embedding<T: Scalar>(tau: usize, width: usize) -> Vec<T> {
    let half = width / 2;
    let mut out = vec![T::zero(); width];
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half.max(1) as f64).exp();
        let a = tau as f64 * freq;
        out[k] = lit(a.sin());
        out[half + k] = lit(a.cos());
    }
    out
}

impl<T: Scalar> ToyDenoiser<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, TrainingError> {
        config.check()?;
        let shapes = config.layer_shapes();
        let n = shapes.len();
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = shapes[l];
                let scale = if l + 1 == n { 0.1 } else { 1.0 } / (fan_in as f64).sqrt();
                Dense {
                    w: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        let z: f64 = StandardNormal.sample(rng);
                        lit(z * scale)
                    }),
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self::from_parts(config, layers))
    }

    /// Wraps existing weights, checking their shapes against `config`.
    pub fn from_layers(config: ModelConfig, layers: Vec<Dense<T>>) -> Result<Self, TrainingError> {
        config.check()?;
        let shapes = config.layer_shapes();
        if layers.len() != shapes.len()
            || layers.iter().zip(&shapes).any(|(l, &(i, o))| l.w.dim() != (i, o) || l.b.len() != o)
        {
            return Err(TrainingError::BadModelFile("layer shapes do not match the config".into()));
        }
        Ok(Self::from_parts(config, layers))
    }

    fn from_parts(config: ModelConfig, layers: Vec<Dense<T>>) -> Self {
        let skip = config.skip_table().into_iter().map(lit).collect();
        let basis = config.basis().map(|(b, p)| (b.mapv(lit), p.mapv(lit)));
        Self {
            config,
            layers,
            skip,
            basis,
        }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Builds the input matrix from flattened noisy chunks, observations and timesteps.
    pub fn assemble_input(&self, chunks: &[&[T]], obs: &[&[T]], taus: &[usize]) -> ModelInput<T> {
        let c = &self.config;
        let net = c.net_chunk_dim();
        let mut raw = Array2::zeros((chunks.len(), c.chunk_dim()));
        let mut x = Array2::zeros((chunks.len(), c.input_dim()));
        for (r, ((chunk, o), &tau)) in chunks.iter().zip(obs).zip(taus).enumerate() {
            raw.row_mut(r).assign(&ndarray::ArrayView1::from(*chunk));
            let mut row = x.row_mut(r);
            match &self.basis {
                None => row.slice_mut(s![..net]).assign(&raw.row(r)),
                Some((_, p)) => {
                    let m = raw.row(r).into_shape_with_order((c.horizon, net / p.nrows())).expect("chunk size");
                    let coef = p.dot(&m);
                    row.slice_mut(s![..net]).assign(&coef.into_shape_with_order(net).expect("contiguous"));
                }
            }
            row.slice_mut(s![net..net + c.obs_dim]).assign(&ndarray::ArrayView1::from(*o));
            let emb = timestep_embedding::<T>(tau, c.time_embedding);
            row.slice_mut(s![net + c.obs_dim..]).assign(&Array1::from(emb));
        }
        let skip = taus.iter().map(|&t| self.skip[t.min(self.skip.len() - 1)]).collect();
        ModelInput { x, raw, skip }
    }

    pub fn forward(&self, input: &ModelInput<T>) -> (Array2<T>, ForwardCache<T>) {
        let net = self.config.net_chunk_dim();
        let cond = input.x.slice(s![.., net..]);
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = input.x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 {
                h = ndarray::concatenate![Axis(1), h, cond];
            }
            let z = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            if l == last {
                h = z;
            } else {
                h = match self.config.activation {
                    Activation::Silu => z.mapv(silu),
                    Activation::Identity => z.clone(),
                };
                pre.push(z);
            }
        }
        let mut out = match &self.basis {
            None => h,
            Some((b, _)) => {
                let cols = net / b.ncols();
                let mut out = Array2::zeros((h.nrows(), self.config.chunk_dim()));
                for (mut o, r) in out.rows_mut().into_iter().zip(h.rows()) {
                    let m = b.dot(&r.into_shape_with_order((b.ncols(), cols)).expect("net size"));
                    let n = m.len();
                    o.assign(&m.into_shape_with_order(n).expect("contiguous"));
                }
                out
            }
        };
        for (mut row, (&c, x)) in out.rows_mut().into_iter().zip(input.skip.iter().zip(input.raw.rows())) {
            if c != T::zero() {
                row.zip_mut_with(&x, |o, &v| *o += c * v);
            }
        }
        (out, ForwardCache { inputs, pre })
    }

    /// Parameter gradients given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Array2<T>) -> Vec<Dense<T>> {
        let dims = self.config.layer_dims();
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = match &self.basis {
            None => grad_out.clone(),
            Some((b, _)) => {
                let cols = self.config.net_chunk_dim() / b.ncols();
                let mut g = Array2::zeros((grad_out.nrows(), self.config.net_chunk_dim()));
                for (mut o, r) in g.rows_mut().into_iter().zip(grad_out.rows()) {
                    let m = b.t().dot(&r.into_shape_with_order((b.nrows(), cols)).expect("chunk size"));
                    let n = m.len();
                    o.assign(&m.into_shape_with_order(n).expect("contiguous"));
                }
                g
            }
        };
        for l in (0..self.layers.len()).rev() {
            let gw = cache.inputs[l].t().dot(&g);
            let gb = g.sum_axis(Axis(0));
            if l > 0 {
                let w_hidden = self.layers[l].w.slice(s![..dims[l], ..]);
                let mut gi = g.dot(&w_hidden.t());
                if self.config.activation == Activation::Silu {
                    gi.zip_mut_with(&cache.pre[l - 1], |d, &z| *d = *d * silu_grad(z));
                }
                g = gi;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        grads
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ToyDenoiser<U> {
        let layers = self
            .layers
            .iter()
            .map(|l| Dense {
                w: l.w.mapv(|v| U::lit(v.as_f64())),
                b: l.b.mapv(|v| U::lit(v.as_f64())),
            })
            .collect();
        ToyDenoiser::from_parts(self.config.clone(), layers)
    }

    /// Writes the model: magic, version, metadata, then each layer's weights
    /// (row-major) and biases as little-endian `f64`.
    pub fn save<W: Write>(&self, mut out: W) -> Result<(), TrainingError> {
        let c = &self.config;
        out.write_all(MODEL_MAGIC)?;
        let dims = c.layer_dims();
        let mut header = vec![
            MODEL_VERSION,
            c.horizon as u32,
            c.n_joints as u32,
            c.obs_dim as u32,
            c.time_embedding as u32,
            c.train_steps as u32,
            c.activation.code(),
            dims.len() as u32,
        ];
        header.extend(dims.iter().map(|&d| d as u32));
        for v in header {
            out.write_all(&v.to_le_bytes())?;
        }
        out.write_all(&c.data_std.to_le_bytes())?;
        out.write_all(&(c.knots.len() as u32).to_le_bytes())?;
        for &k in &c.knots {
            out.write_all(&(k as u32).to_le_bytes())?;
        }
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                out.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut input: R) -> Result<Self, TrainingError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(TrainingError::BadModelFile("bad magic".into()));
        }
        fn read_u32s<R: Read>(input: &mut R, n: usize) -> Result<Vec<u32>, TrainingError> {
            (0..n)
                .map(|_| {
                    let mut b = [0u8; 4];
                    input.read_exact(&mut b)?;
                    Ok(u32::from_le_bytes(b))
                })
                .collect()
        }
        let mut u32s = |n: usize| read_u32s(&mut input, n);
        let h = u32s(8)?;
        if h[0] != MODEL_VERSION {
            return Err(TrainingError::BadModelFile(format!("unsupported version {}", h[0])));
        }
        let activation = Activation::from_code(h[6])
            .ok_or_else(|| TrainingError::BadModelFile(format!("unknown activation {}", h[6])))?;
        let n_dims = h[7] as usize;
        if !(2..=64).contains(&n_dims) {
            return Err(TrainingError::BadModelFile(format!("bad layer count {n_dims}")));
        }
        let dims: Vec<usize> = u32s(n_dims)?.into_iter().map(|d| d as usize).collect();
        let mut std_bytes = [0u8; 8];
        input.read_exact(&mut std_bytes)?;
        let mut u32s = |n: usize| read_u32s(&mut input, n);
        let data_std = f64::from_le_bytes(std_bytes);
        let n_knots = u32s(1)?[0] as usize;
        if n_knots > h[1] as usize {
            return Err(TrainingError::BadModelFile(format!("{n_knots} knots for horizon {}", h[1])));
        }
        let knots = u32s(n_knots)?.into_iter().map(|k| k as usize).collect();
        let config = ModelConfig {
            data_std,
            knots,
            horizon: h[1] as usize,
            n_joints: h[2] as usize,
            obs_dim: h[3] as usize,
            time_embedding: h[4] as usize,
            train_steps: h[5] as usize,
            activation,
            hidden: dims[1..n_dims - 1].to_vec(),
        };
        config.check()?;
        if config.layer_dims() != dims {
            return Err(TrainingError::BadModelFile("layer dims disagree with metadata".into()));
        }
        let mut f64s = |n: usize| -> Result<Vec<T>, TrainingError> {
            let mut buf = vec![0u8; n * 8];
            input.read_exact(&mut buf)?;
            Ok(buf
                .chunks_exact(8)
                .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect())
        };
        let mut layers = Vec::with_capacity(n_dims - 1);
        for (fan_in, fan_out) in config.layer_shapes() {
            let w = Array2::from_shape_vec((fan_in, fan_out), f64s(fan_in * fan_out)?).expect("sized above");
            let b = Array1::from(f64s(fan_out)?);
            layers.push(Dense { w, b });
        }
        Ok(Self::from_parts(config, layers))
    }

    pub fn save_path(&self, path: &std::path::Path) -> Result<(), TrainingError> {
        let f = std::fs::File::create(path)?;
        self.save(std::io::BufWriter::new(f))
    }

    pub fn load_path(path: &std::path::Path) -> Result<Self, TrainingError> {
        let f = std::fs::File::open(path)?;
        Self::load(std::io::BufReader::new(f))
    }
}

impl<T: Scalar> Denoiser<T> for ToyDenoiser<T> {
    fn denoise(&self, x: &Array2<T>, obs: &[T], tau: usize) -> Array2<T> {
        let flat: Vec<T> = x.iter().copied().collect();
        let input = self.assemble_input(&[&flat], &[obs], &[tau]);
        let (out, _) = self.forward(&input);
        out.into_shape_with_order(x.dim()).expect("output matches chunk size")
    }
}
