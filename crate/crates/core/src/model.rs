//! The full forecasting network: patch embedding, stacked residual
//! RWKV blocks, flatten head, and de-normalization.
//!
//! Channels are independent: every channel of every window becomes one
//! univariate series that flows through the same weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::block::{
    channel_mix_step, channel_mix_tape, time_mix_step, time_mix_tape, ChannelMixParams, HeadState, Mode, ShiftCache,
    TimeMixParams,
};
use crate::error::{Error, Result};
use crate::numeric::{layer_norm, Matrix, Precision, Real, Tape, Var, NORM_EPS};
use crate::preprocessing::{count_patches, instance_normalize, write_patches, NormStats};

/// Architectural hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_len: usize,
    pub horizon: usize,
    pub patch_len: usize,
    pub stride: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub eps: f64,
    pub mode: Mode,
    pub precision: Precision,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 336,
            horizon: 96,
            patch_len: 16,
            stride: 8,
            d_model: 128,
            n_heads: 2,
            n_layers: 2,
            ffn_mult: 4,
            eps: NORM_EPS,
            mode: Mode::Parallel,
            precision: Precision::F32,
            seed: 2024,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("input_len", self.input_len),
            ("horizon", self.horizon),
            ("patch_len", self.patch_len),
            ("stride", self.stride),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("ffn_mult", self.ffn_mult),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.patch_len > self.input_len {
            return Err(Error::config(format!(
                "patch_len {} exceeds input_len {}",
                self.patch_len, self.input_len
            )));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        (self.input_len - self.patch_len) / self.stride + 2
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn ffn_width(&self) -> usize {
        self.ffn_mult * self.d_model
    }
}

/// Weights of one residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<M> {
    pub ln1_gamma: M,
    pub ln1_beta: M,
    pub time_mix: TimeMixParams<M>,
    pub ln2_gamma: M,
    pub ln2_beta: M,
    pub channel_mix: ChannelMixParams<M>,
}

impl<M> LayerParams<M> {
    fn try_map<N, E>(&self, prefix: &str, f: &mut impl FnMut(&str, &M) -> Result<N, E>) -> Result<LayerParams<N>, E> {
        Ok(LayerParams {
            ln1_gamma: f(&format!("{prefix}ln1.gamma"), &self.ln1_gamma)?,
            ln1_beta: f(&format!("{prefix}ln1.beta"), &self.ln1_beta)?,
            time_mix: self.time_mix.try_map(&format!("{prefix}time_mix."), f)?,
            ln2_gamma: f(&format!("{prefix}ln2.gamma"), &self.ln2_gamma)?,
            ln2_beta: f(&format!("{prefix}ln2.beta"), &self.ln2_beta)?,
            channel_mix: self.channel_mix.try_map(&format!("{prefix}channel_mix."), f)?,
        })
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut M)) {
        f(&format!("{prefix}ln1.gamma"), &mut self.ln1_gamma);
        f(&format!("{prefix}ln1.beta"), &mut self.ln1_beta);
        self.time_mix.visit_mut(&format!("{prefix}time_mix."), f);
        f(&format!("{prefix}ln2.gamma"), &mut self.ln2_gamma);
        f(&format!("{prefix}ln2.beta"), &mut self.ln2_beta);
        self.channel_mix.visit_mut(&format!("{prefix}channel_mix."), f);
    }

    fn tensors(&self) -> Vec<&M> {
        let mut out = vec![&self.ln1_gamma, &self.ln1_beta];
        out.extend(self.time_mix.tensors());
        out.extend([&self.ln2_gamma, &self.ln2_beta]);
        out.extend(self.channel_mix.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut M> {
        let mut out = vec![&mut self.ln1_gamma, &mut self.ln1_beta];
        out.extend(self.time_mix.tensors_mut());
        out.extend([&mut self.ln2_gamma, &mut self.ln2_beta]);
        out.extend(self.channel_mix.tensors_mut());
        out
    }
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<M> {
    /// `P × D` patch projection.
    pub embed: M,
    pub ln0_gamma: M,
    pub ln0_beta: M,
    pub layers: Vec<LayerParams<M>>,
    /// `(N·D) × T`.
    pub head_weight: M,
    /// `1 × T`.
    pub head_bias: M,
}

impl<M> ModelParams<M> {
    /// Maps every tensor in a fixed order, passing its dotted name.
    pub fn try_map<N, E>(&self, f: &mut impl FnMut(&str, &M) -> Result<N, E>) -> Result<ModelParams<N>, E> {
        Ok(ModelParams {
            embed: f("embed", &self.embed)?,
            ln0_gamma: f("ln0.gamma", &self.ln0_gamma)?,
            ln0_beta: f("ln0.beta", &self.ln0_beta)?,
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("layers.{i}."), f))
                .collect::<Result<_, E>>()?,
            head_weight: f("head.weight", &self.head_weight)?,
            head_bias: f("head.bias", &self.head_bias)?,
        })
    }

    pub fn map<N>(&self, f: &mut impl FnMut(&str, &M) -> N) -> ModelParams<N> {
        self.try_map(&mut |name, m| Ok::<N, std::convert::Infallible>(f(name, m)))
            .unwrap_or_else(|e| match e {})
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &M)) {
        let _ = self.map(&mut |name, m| f(name, m));
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut M)) {
        f("embed", &mut self.embed);
        f("ln0.gamma", &mut self.ln0_gamma);
        f("ln0.beta", &mut self.ln0_beta);
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&format!("layers.{i}."), f);
        }
        f("head.weight", &mut self.head_weight);
        f("head.bias", &mut self.head_bias);
    }

    /// Every tensor, in the same order as [`ModelParams::names`].
    pub fn tensors(&self) -> Vec<&M> {
        let mut out = vec![&self.embed, &self.ln0_gamma, &self.ln0_beta];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.extend([&self.head_weight, &self.head_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut M> {
        let mut out = vec![&mut self.embed, &mut self.ln0_gamma, &mut self.ln0_beta];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        out.extend([&mut self.head_weight, &mut self.head_bias]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |name, _| out.push(name.to_string()));
        out
    }
}

impl<T: Real> ModelParams<Matrix<T>> {
    pub fn cast<U: Real>(&self) -> ModelParams<Matrix<U>> {
        self.map(&mut |_, m| m.cast())
    }

    pub fn count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.len());
        n
    }

    /// All values concatenated in tensor order.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.count());
        self.visit(&mut |_, m| out.extend_from_slice(m.as_slice()));
        out
    }

    /// Same shapes as `self`, filled from a flat vector in tensor order.
    pub fn unflatten_like(&self, flat: &[T]) -> Result<Self> {
        if flat.len() != self.count() {
            return Err(Error::Shape {
                op: "unflatten parameters",
                left: (1, flat.len()),
                right: (1, self.count()),
            });
        }
        let mut offset = 0;
        self.try_map(&mut |_, m| {
            let next = offset + m.len();
            let out = Matrix::from_vec(m.rows(), m.cols(), flat[offset..next].to_vec());
            offset = next;
            out
        })
    }

    pub fn check_finite(&self) -> Result<()> {
        let mut bad = None;
        self.visit(&mut |name, m| {
            if bad.is_none() && !m.is_finite() {
                bad = Some(name.to_string());
            }
        });
        match bad {
            None => Ok(()),
            Some(name) => Err(Error::Numeric(format!("parameter {name} is not finite"))),
        }
    }

    /// Registers every tensor as a tape leaf.
    pub fn to_tape(&self, tape: &mut Tape<T>) -> ModelParams<Var> {
        self.map(&mut |_, m| tape.leaf(m.clone()))
    }

    /// Zero tensors with the shapes `config` requires.
    pub fn zeros(config: &ModelConfig) -> Self {
        shape_template(config).map(&mut |_, &(r, c)| Matrix::zeros(r, c))
    }

    /// Expected `(rows, cols)` of every tensor under `config`.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let shapes = shape_template(config);
        let mut out = Vec::new();
        shapes.visit(&mut |name, s| out.push((name.to_string(), *s)));
        out
    }
}

fn shape_template(c: &ModelConfig) -> ModelParams<(usize, usize)> {
    let d = c.d_model;
    let f = c.ffn_width();
    let row = (1, d);
    let layer = LayerParams {
        ln1_gamma: row,
        ln1_beta: row,
        time_mix: TimeMixParams {
            mu_g: row,
            mu_r: row,
            mu_k: row,
            mu_v: row,
            w_g: (d, d),
            w_r: (d, d),
            w_k: (d, d),
            w_v: (d, d),
            w_raw: row,
            u: row,
            ln_gamma: row,
            ln_beta: row,
            w_o: (d, d),
        },
        ln2_gamma: row,
        ln2_beta: row,
        channel_mix: ChannelMixParams {
            mu_k: row,
            mu_r: row,
            w_k: (d, f),
            w_v: (f, d),
            w_r: (d, d),
        },
    };
    ModelParams {
        embed: (c.patch_len, d),
        ln0_gamma: row,
        ln0_beta: row,
        layers: vec![layer; c.n_layers],
        head_weight: (c.n_patches() * d, c.horizon),
        head_bias: (1, c.horizon),
    }
}

/// Per-layer recurrent state for streaming inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerState<T> {
    pub cache: ShiftCache<T>,
    pub heads: Vec<HeadState<T>>,
}

/// Fixed-size state carried across patches of one series.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceState<T> {
    pub layers: Vec<LayerState<T>>,
    pub stats: NormStats<T>,
    pub consumed: usize,
}

impl<T: Real> InferenceState<T> {
    pub fn new(config: &ModelConfig, stats: NormStats<T>) -> Self {
        let d = config.d_model;
        InferenceState {
            layers: (0..config.n_layers)
                .map(|_| LayerState {
                    cache: ShiftCache::zeros(d),
                    heads: (0..config.n_heads).map(|_| HeadState::zeros(config.head_dim())).collect(),
                })
                .collect(),
            stats,
            consumed: 0,
        }
    }

    /// Bytes of numeric state held (caches, head matrices, statistics).
    pub fn byte_size(&self) -> usize {
        let w = std::mem::size_of::<T>();
        let layers: usize = self
            .layers
            .iter()
            .map(|l| {
                (l.cache.prev_time_mix.len() + l.cache.prev_channel_mix.len()) * w
                    + l.heads.iter().map(|h| h.s.byte_size()).sum::<usize>()
            })
            .sum();
        layers + 3 * w + std::mem::size_of::<usize>()
    }
}

/// Instance-normalized patches for a stack of series, ready for the tape.
pub struct SeriesBatch<T> {
    /// `(series · N) × P`.
    pub patches: Matrix<T>,
    pub stats: Vec<NormStats<T>>,
}

impl<T> SeriesBatch<T> {
    pub fn series(&self) -> usize {
        self.stats.len()
    }
}

/// A configuration bound to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<Matrix<T>>,
}

fn normal_matrix<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix<T> {
    let dist = Normal::new(0.0, std).expect("positive std");
    let data = (0..rows * cols).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// Log-spaced decays in `[0.1, 0.96]` across the channels of each head,
/// expressed as the raw parameter `ln(−ln w)`.
fn decay_schedule(d_model: usize, n_heads: usize) -> Vec<f64> {
    let d = d_model / n_heads;
    let (lo, hi) = (0.1f64.ln(), 0.96f64.ln());
    (0..d_model)
        .map(|c| {
            let j = c % d;
            let frac = if d == 1 { 0.5 } else { j as f64 / (d - 1) as f64 };
            let w = (lo + (hi - lo) * frac).exp();
            (-w.ln()).ln()
        })
        .collect()
}

impl<T: Real> Model<T> {
    /// Deterministic initialization from `seed`.
    ///
    /// Projections ~ N(0, 1/fan_in); token-shift mixes 0.5; decays log-spaced
    /// over (0.1, 0.96) within each head; bonus 0.5 down to 0.1 across each
    /// head; norms identity; head zero.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, p) = (config.d_model, config.ffn_width(), config.patch_len);
        let hd = config.head_dim();
        let inv = |fan_in: usize| 1.0 / (fan_in as f64).sqrt();
        let half = || Matrix::filled(1, d, T::from_f64_lossy(0.5));
        let ones = || Matrix::filled(1, d, T::one());
        let zeros = || Matrix::zeros(1, d);
        let w_raw = decay_schedule(d, config.n_heads);
        let u: Vec<T> = (0..d)
            .map(|c| {
                let j = c % hd;
                let frac = if hd == 1 { 0.0 } else { j as f64 / (hd - 1) as f64 };
                T::from_f64_lossy(0.5 - 0.4 * frac)
            })
            .collect();
        let embed = normal_matrix(&mut rng, p, d, inv(p));
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let time_mix = TimeMixParams {
                mu_g: half(),
                mu_r: half(),
                mu_k: half(),
                mu_v: half(),
                w_g: normal_matrix(&mut rng, d, d, inv(d)),
                w_r: normal_matrix(&mut rng, d, d, inv(d)),
                w_k: normal_matrix(&mut rng, d, d, inv(d)),
                w_v: normal_matrix(&mut rng, d, d, inv(d)),
                w_raw: Matrix::row_vector(w_raw.iter().map(|&v| T::from_f64_lossy(v)).collect()),
                u: Matrix::row_vector(u.clone()),
                ln_gamma: ones(),
                ln_beta: zeros(),
                w_o: normal_matrix(&mut rng, d, d, inv(d)),
            };
            let channel_mix = ChannelMixParams {
                mu_k: half(),
                mu_r: half(),
                w_k: normal_matrix(&mut rng, d, f, inv(d)),
                w_v: normal_matrix(&mut rng, f, d, inv(f)),
                w_r: normal_matrix(&mut rng, d, d, inv(d)),
            };
            layers.push(LayerParams {
                ln1_gamma: ones(),
                ln1_beta: zeros(),
                time_mix,
                ln2_gamma: ones(),
                ln2_beta: zeros(),
                channel_mix,
            });
        }
        Ok(Model {
            config: config.clone(),
            params: ModelParams {
                embed,
                ln0_gamma: ones(),
                ln0_beta: zeros(),
                layers,
                head_weight: Matrix::zeros(config.n_patches() * d, config.horizon),
                head_bias: Matrix::zeros(1, config.horizon),
            },
        })
    }

    /// Like [`Model::init`], then draws every tensor at random so that no
    /// parameter sits at a degenerate value: mixes and bonuses uniform,
    /// raw decays in [−3, 1.5], norm affines near identity, and a dense head.
    pub fn init_randomized(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::init(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
        model.params.visit_mut(&mut |name, m| {
            let fan_in = m.rows().max(1) as f64;
            let leaf = name.rsplit('.').next().unwrap_or(name);
            for v in m.as_mut_slice() {
                let x = unit.sample(&mut rng);
                let value = match leaf {
                    n if n.starts_with("mu_") => 0.05 + 0.9 * x,
                    "w_raw" => -3.0 + 4.5 * x,
                    "u" => -0.5 + 1.5 * x,
                    "gamma" | "ln_gamma" => 0.5 + x,
                    "beta" | "ln_beta" | "bias" => x - 0.5,
                    _ => (2.0 * x - 1.0) * (3.0 / fan_in).sqrt(),
                };
                *v = T::from_f64_lossy(value);
            }
        });
        Ok(model)
    }

    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    fn eps(&self) -> T {
        T::from_f64_lossy(self.config.eps)
    }

    /// Normalizes and patches every channel of every `L × M` window.
    /// Series are ordered window-major, channel-minor.
    pub fn prepare(&self, windows: &[&Matrix<T>]) -> Result<SeriesBatch<T>> {
        let c = &self.config;
        let n = count_patches(c.input_len, c.patch_len, c.stride)?;
        let channels = windows.first().map_or(0, |w| w.cols());
        let series = windows.len() * channels;
        let mut patches = Matrix::zeros(series * n, c.patch_len);
        let mut stats = Vec::with_capacity(series);
        let mut column = vec![T::zero(); c.input_len];
        let block = n * c.patch_len;
        for (b, w) in windows.iter().enumerate() {
            if w.rows() != c.input_len || w.cols() != channels {
                return Err(Error::Shape {
                    op: "forward input window",
                    left: w.shape(),
                    right: (c.input_len, channels),
                });
            }
            for m in 0..channels {
                for (t, slot) in column.iter_mut().enumerate() {
                    *slot = w.get(t, m);
                }
                let (norm, st) = instance_normalize(&column, self.eps())?;
                let s = b * channels + m;
                write_patches(
                    &norm,
                    c.patch_len,
                    c.stride,
                    &mut patches.as_mut_slice()[s * block..(s + 1) * block],
                );
                stats.push(st);
            }
        }
        Ok(SeriesBatch { patches, stats })
    }

    /// Records the parallel forward pass and returns the de-normalized
    /// `series × T` prediction node.
    pub fn forward_tape(&self, tape: &mut Tape<T>, p: &ModelParams<Var>, batch: &SeriesBatch<T>) -> Result<Var> {
        let c = &self.config;
        let n = c.n_patches();
        let eps = self.eps();
        let input = tape.leaf(batch.patches.clone());
        let embedded = tape.matmul(input, p.embed)?;
        let mut x = tape.group_norm(embedded, p.ln0_gamma, p.ln0_beta, 1, eps)?;
        for layer in &p.layers {
            let h = tape.group_norm(x, layer.ln1_gamma, layer.ln1_beta, 1, eps)?;
            let tm = time_mix_tape(tape, h, &layer.time_mix, c.n_heads, eps, n)?;
            x = tape.add(x, tm)?;
            let h = tape.group_norm(x, layer.ln2_gamma, layer.ln2_beta, 1, eps)?;
            let cm = channel_mix_tape(tape, h, &layer.channel_mix, n)?;
            x = tape.add(x, cm)?;
        }
        let flat = tape.reshape(x, batch.series(), n * c.d_model)?;
        let head = tape.matmul(flat, p.head_weight)?;
        let head = tape.add_row(head, p.head_bias)?;
        let (scale, shift) = batch.stats.iter().map(|s| (s.std, s.mean)).unzip();
        tape.scale_rows(head, scale, shift)
    }

    /// Backbone only: embeds `patches` (`(series · N) × P`, already
    /// normalized) and runs every block, returning the token node.
    pub fn encode_tape(&self, tape: &mut Tape<T>, p: &ModelParams<Var>, patches: Matrix<T>, seq_len: usize) -> Result<Var> {
        let c = &self.config;
        let eps = self.eps();
        let input = tape.leaf(patches);
        let embedded = tape.matmul(input, p.embed)?;
        let mut x = tape.group_norm(embedded, p.ln0_gamma, p.ln0_beta, 1, eps)?;
        for layer in &p.layers {
            let h = tape.group_norm(x, layer.ln1_gamma, layer.ln1_beta, 1, eps)?;
            let tm = time_mix_tape(tape, h, &layer.time_mix, c.n_heads, eps, seq_len)?;
            x = tape.add(x, tm)?;
            let h = tape.group_norm(x, layer.ln2_gamma, layer.ln2_beta, 1, eps)?;
            let cm = channel_mix_tape(tape, h, &layer.channel_mix, seq_len)?;
            x = tape.add(x, cm)?;
        }
        Ok(x)
    }

    /// `series × T` predictions for a prepared batch in parallel mode.
    pub fn predict_series(&self, batch: &SeriesBatch<T>) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let vars = self.params.to_tape(&mut tape);
        let out = self.forward_tape(&mut tape, &vars, batch)?;
        let y = tape.value(out).clone();
        y.check_finite("forecast")?;
        Ok(y)
    }

    /// Forecasts `T × M` for each `L × M` window, using the configured mode.
    pub fn forward(&self, windows: &[&Matrix<T>]) -> Result<Vec<Matrix<T>>> {
        self.forward_with_mode(windows, self.config.mode)
    }

    pub fn forward_with_mode(&self, windows: &[&Matrix<T>], mode: Mode) -> Result<Vec<Matrix<T>>> {
        let Some(first) = windows.first() else {
            return Ok(Vec::new());
        };
        let channels = first.cols();
        let rows = match mode {
            Mode::Parallel => {
                let batch = self.prepare(windows)?;
                self.predict_series(&batch)?
            }
            Mode::Recurrent => {
                let mut out = Matrix::zeros(windows.len() * channels, self.config.horizon);
                let mut column = vec![T::zero(); self.config.input_len];
                for (b, w) in windows.iter().enumerate() {
                    if w.rows() != self.config.input_len || w.cols() != channels {
                        return Err(Error::Shape {
                            op: "forward input window",
                            left: w.shape(),
                            right: (self.config.input_len, channels),
                        });
                    }
                    for m in 0..channels {
                        for (t, slot) in column.iter_mut().enumerate() {
                            *slot = w.get(t, m);
                        }
                        let y = self.predict_streaming(&column)?;
                        out.row_mut(b * channels + m).copy_from_slice(&y);
                    }
                }
                out
            }
        };
        let horizon = self.config.horizon;
        Ok((0..windows.len())
            .map(|b| {
                let mut m = Matrix::zeros(horizon, channels);
                for c in 0..channels {
                    let row = rows.row(b * channels + c);
                    for t in 0..horizon {
                        m.set(t, c, row[t]);
                    }
                }
                m
            })
            .collect())
    }

    /// Fresh streaming state for a series with the given statistics.
    pub fn start_stream(&self, stats: NormStats<T>) -> InferenceState<T> {
        InferenceState::new(&self.config, stats)
    }

    /// Consumes one raw patch in recurrent mode and returns the top-layer
    /// representation of that token.
    pub fn forward_streaming(&self, state: &mut InferenceState<T>, next_patch: &[T]) -> Result<Vec<T>> {
        let c = &self.config;
        if next_patch.len() != c.patch_len {
            return Err(Error::Shape {
                op: "forward_streaming",
                left: (1, next_patch.len()),
                right: (1, c.patch_len),
            });
        }
        if state.layers.len() != self.params.layers.len() {
            return Err(Error::Contract("inference state does not match the model depth".into()));
        }
        let eps = self.eps();
        let normed: Vec<T> = next_patch
            .iter()
            .map(|&v| (v - state.stats.mean) / state.stats.std)
            .collect();
        let p = &self.params;
        let emb = Matrix::row_vector(normed).matmul(&p.embed)?.into_vec();
        let mut x = layer_norm(&emb, p.ln0_gamma.as_slice(), p.ln0_beta.as_slice(), eps);
        for (lp, ls) in p.layers.iter().zip(state.layers.iter_mut()) {
            let h = layer_norm(&x, lp.ln1_gamma.as_slice(), lp.ln1_beta.as_slice(), eps);
            let tm = time_mix_step(&h, &lp.time_mix, c.n_heads, eps, &mut ls.cache.prev_time_mix, &mut ls.heads)?;
            for (xi, ti) in x.iter_mut().zip(&tm) {
                *xi += *ti;
            }
            let h = layer_norm(&x, lp.ln2_gamma.as_slice(), lp.ln2_beta.as_slice(), eps);
            let cm = channel_mix_step(&h, &lp.channel_mix, &mut ls.cache.prev_channel_mix)?;
            for (xi, ci) in x.iter_mut().zip(&cm) {
                *xi += *ci;
            }
        }
        state.consumed += 1;
        Ok(x)
    }

    /// Whole-window forecast for one raw univariate series, computed by
    /// streaming its patches through the recurrent formulation.
    pub fn predict_streaming(&self, series: &[T]) -> Result<Vec<T>> {
        let c = &self.config;
        if series.len() != c.input_len {
            return Err(Error::Shape {
                op: "predict_streaming",
                left: (1, series.len()),
                right: (1, c.input_len),
            });
        }
        let (_, stats) = instance_normalize(series, self.eps())?;
        let n = c.n_patches();
        let mut raw = vec![T::zero(); n * c.patch_len];
        write_patches(series, c.patch_len, c.stride, &mut raw);
        let mut state = self.start_stream(stats);
        let mut tokens = Vec::with_capacity(n * c.d_model);
        for patch in raw.chunks(c.patch_len) {
            tokens.extend(self.forward_streaming(&mut state, patch)?);
        }
        let flat = Matrix::row_vector(tokens);
        let y = flat.matmul(&self.params.head_weight)?.add_row(&self.params.head_bias)?;
        let out: Vec<T> = y.as_slice().iter().map(|&v| v * stats.std + stats.mean).collect();
        Ok(out)
    }
}
