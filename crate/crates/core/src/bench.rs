//! Latency and memory scaling measurements over the patch count.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::block::Mode;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::numeric::{meter, Matrix, Real};
use crate::preprocessing::instance_normalize;

/// The patch counts used by default.
pub const DEFAULT_LENGTHS: [usize; 6] = [128, 256, 512, 1024, 2048, 4096];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub repeats: usize,
    pub warmup: usize,
    /// Smallest wall time one timed sample may take; shorter runs are
    /// repeated inside the sample until they reach it.
    pub min_sample: Duration,
    /// Time forward plus backward instead of forward alone.
    pub backward: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repeats: 5,
            warmup: 1,
            min_sample: Duration::from_millis(2),
            backward: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub slope: f64,
    /// Sum of squared residuals in log-log space.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_us: Option<f64>,
    /// Peak matrix bytes allocated during one parallel forward pass.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_bytes: Option<u64>,
    /// Streaming state size after consuming `n` patches.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub precision: String,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub patch_len: usize,
    pub stride: usize,
}

impl Environment {
    fn capture(config: &ModelConfig) -> Self {
        Environment {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            precision: config.precision.to_string(),
            d_model: config.d_model,
            n_heads: config.n_heads,
            n_layers: config.n_layers,
            patch_len: config.patch_len,
            stride: config.stride,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub points: Vec<ScalingPoint>,
    pub latency_fit: Option<Fit>,
    pub memory_fit: Option<Fit>,
    pub environment: Option<Environment>,
    pub notes: Vec<String>,
}

impl ScalingReport {
    fn empty(lengths: &[usize]) -> Self {
        ScalingReport {
            points: lengths
                .iter()
                .map(|&n| ScalingPoint {
                    n,
                    latency_us: None,
                    mem_bytes: None,
                    state_bytes: None,
                })
                .collect(),
            latency_fit: None,
            memory_fit: None,
            environment: None,
            notes: Vec::new(),
        }
    }

    /// Folds the memory columns and fit of `other` into `self`.
    pub fn merge_memory(&mut self, other: ScalingReport) {
        for (p, q) in self.points.iter_mut().zip(other.points) {
            p.mem_bytes = q.mem_bytes;
            p.state_bytes = q.state_bytes;
        }
        self.memory_fit = other.memory_fit;
        self.notes.extend(other.notes);
    }

    /// `N=<n> latency_us=<v> mem_bytes=<v>` per point and a summary line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = write!(out, "N={}", p.n);
            if let Some(l) = p.latency_us {
                let _ = write!(out, " latency_us={l:.3}");
            }
            if let Some(m) = p.mem_bytes {
                let _ = write!(out, " mem_bytes={m}");
            }
            if let Some(s) = p.state_bytes {
                let _ = write!(out, " state_bytes={s}");
            }
            out.push('\n');
        }
        match self.latency_fit.or(self.memory_fit) {
            Some(f) => {
                let _ = writeln!(out, "slope={:.6} residual={:.6e}", f.slope, f.residual);
            }
            None => out.push_str("slope=n/a residual=n/a\n"),
        }
        if let (Some(_), Some(m)) = (self.latency_fit, self.memory_fit) {
            let _ = writeln!(out, "memory_slope={:.6} memory_residual={:.6e}", m.slope, m.residual);
        }
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}

/// Least-squares slope of `ln y` against `ln n`, with the residual sum of squares.
pub fn fit_scaling_exponent(lengths: &[usize], measurements: &[f64]) -> Result<Fit> {
    if lengths.len() != measurements.len() {
        return Err(Error::data(format!(
            "{} lengths but {} measurements",
            lengths.len(),
            measurements.len()
        )));
    }
    if lengths.len() < 3 {
        return Err(Error::data(format!("need at least 3 points to fit, got {}", lengths.len())));
    }
    if let Some(bad) = measurements.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
        return Err(Error::data(format!("measurements must be positive, got {bad}")));
    }
    if lengths.contains(&0) {
        return Err(Error::data("lengths must be positive"));
    }
    let xs: Vec<f64> = lengths.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = measurements.iter().map(|m| m.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::data("lengths must not all be equal"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    Ok(Fit { slope, residual })
}

fn check_lengths(lengths: &[usize]) -> Result<()> {
    if lengths.is_empty() {
        return Err(Error::config("no lengths requested"));
    }
    if lengths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config(format!("lengths must be strictly increasing, got {lengths:?}")));
    }
    if lengths[0] < 2 {
        return Err(Error::config("the model always produces at least 2 patches"));
    }
    Ok(())
}

fn fit_or_note(lengths: &[usize], values: &[f64], what: &str, notes: &mut Vec<String>) -> Result<Option<Fit>> {
    if lengths.len() < 3 {
        notes.push(format!("{what} fit skipped: {} point(s), need at least 3", lengths.len()));
        return Ok(None);
    }
    fit_scaling_exponent(lengths, values).map(Some)
}

/// Times `sample(n, inner)` for each length. The sampler runs its workload
/// `inner` times and returns the total elapsed time. Reports the median over
/// `repeats` of the per-run time and fits the scaling exponent.
pub fn measure_latency_with(
    lengths: &[usize],
    opts: &BenchOptions,
    mut sample: impl FnMut(usize, usize) -> Result<Duration>,
) -> Result<ScalingReport> {
    check_lengths(lengths)?;
    if opts.repeats < 5 {
        return Err(Error::config(format!("repeats must be at least 5, got {}", opts.repeats)));
    }
    let mut report = ScalingReport::empty(lengths);
    let mut medians = Vec::with_capacity(lengths.len());
    for point in &mut report.points {
        let n = point.n;
        let mut inner = 1usize;
        loop {
            let t = sample(n, inner)?;
            if t >= opts.min_sample || inner >= 1 << 20 {
                break;
            }
            inner *= 2;
        }
        if inner > 1 {
            report
                .notes
                .push(format!("N={n}: timer too coarse for one run, batched {inner} runs per sample"));
        }
        for _ in 1..opts.warmup {
            sample(n, inner)?;
        }
        let mut times: Vec<f64> = (0..opts.repeats)
            .map(|_| sample(n, inner).map(|d| d.as_secs_f64() * 1e6 / inner as f64))
            .collect::<Result<_>>()?;
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        point.latency_us = Some(median);
        medians.push(median);
    }
    report.latency_fit = fit_or_note(lengths, &medians, "latency", &mut report.notes)?;
    Ok(report)
}

/// `config` with `input_len` chosen so the model sees exactly `n` patches.
pub fn config_for_patches(config: &ModelConfig, n: usize) -> Result<ModelConfig> {
    if n < 2 {
        return Err(Error::config("the model always produces at least 2 patches"));
    }
    let mut c = config.clone();
    c.input_len = (n - 2) * c.stride + c.patch_len;
    c.mode = Mode::Parallel;
    c.validate()?;
    debug_assert_eq!(c.n_patches(), n);
    Ok(c)
}

fn random_window<T: Real>(len: usize, seed: u64) -> Matrix<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..len)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::from_f64_lossy(v)
        })
        .collect();
    Matrix::from_vec(len, 1, data).expect("sized by construction")
}

/// Median single-series forward latency of a randomly initialized model at
/// each patch count, with `d_model`, heads and depth taken from `config`.
/// The measured region runs on the calling thread only.
pub fn measure_latency<T: Real>(config: &ModelConfig, lengths: &[usize], opts: &BenchOptions) -> Result<ScalingReport> {
    let mut current: Option<(usize, Model<T>, Matrix<T>)> = None;
    let mut report = measure_latency_with(lengths, opts, |n, inner| {
        if current.as_ref().map(|c| c.0) != Some(n) {
            let c = config_for_patches(config, n)?;
            let model = Model::<T>::init_randomized(&c, config.seed)?;
            let window = random_window(c.input_len, config.seed ^ n as u64);
            current = Some((n, model, window));
        }
        let (_, model, window) = current.as_ref().expect("initialized above");
        let start = Instant::now();
        for _ in 0..inner {
            if opts.backward {
                let batch = model.prepare(&[window])?;
                let mut tape = crate::numeric::Tape::new();
                let vars = model.params.to_tape(&mut tape);
                let y = model.forward_tape(&mut tape, &vars, &batch)?;
                let loss = tape.mean(y);
                std::hint::black_box(tape.backward(loss)?);
            } else {
                std::hint::black_box(model.forward(&[window])?);
            }
        }
        Ok(start.elapsed())
    })?;
    report.environment = Some(Environment::capture(config));
    Ok(report)
}

/// Peak matrix bytes of one parallel forward pass, and the streaming state
/// size after consuming all `n` patches, for each patch count.
pub fn measure_state_memory<T: Real>(config: &ModelConfig, lengths: &[usize]) -> Result<ScalingReport> {
    check_lengths(lengths)?;
    let mut report = ScalingReport::empty(lengths);
    let mut peaks = Vec::with_capacity(lengths.len());
    for point in &mut report.points {
        let c = config_for_patches(config, point.n)?;
        let model = Model::<T>::init_randomized(&c, config.seed)?;
        let window = random_window::<T>(c.input_len, config.seed ^ point.n as u64);
        let (out, usage) = meter::measure(|| model.forward(&[&window]));
        out?;
        let series = window.as_slice();
        let (_, stats) = instance_normalize(series, T::from_f64_lossy(c.eps))?;
        let mut state = model.start_stream(stats);
        let mut raw = vec![T::zero(); c.n_patches() * c.patch_len];
        crate::preprocessing::write_patches(series, c.patch_len, c.stride, &mut raw);
        for patch in raw.chunks(c.patch_len) {
            model.forward_streaming(&mut state, patch)?;
        }
        point.mem_bytes = Some(usage.peak_bytes);
        point.state_bytes = Some(state.byte_size() as u64);
        peaks.push(usage.peak_bytes as f64);
    }
    report.memory_fit = fit_or_note(lengths, &peaks, "memory", &mut report.notes)?;
    report.environment = Some(Environment::capture(config));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let n = [2usize, 4, 8, 16];
        let lin: Vec<f64> = n.iter().map(|&x| x as f64).collect();
        let f = fit_scaling_exponent(&n, &lin).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && f.residual < 1e-20);
        let sq: Vec<f64> = n.iter().map(|&x| (x * x) as f64 * 3.0).collect();
        assert!((fit_scaling_exponent(&n, &sq).unwrap().slope - 2.0).abs() < 1e-12);
        let flat = vec![7.0; 4];
        assert!(fit_scaling_exponent(&n, &flat).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(fit_scaling_exponent(&[1, 2], &[1.0, 2.0]).is_err());
        assert!(matches!(fit_scaling_exponent(&[1, 2, 3], &[1.0, 0.0, 2.0]), Err(Error::Data(_))));
    }

    #[test]
    fn stub_sampler_slopes() {
        let lengths = [128, 256, 512, 1024];
        let opts = BenchOptions {
            min_sample: Duration::ZERO,
            ..BenchOptions::default()
        };
        let r = measure_latency_with(&lengths, &opts, |n, inner| Ok(Duration::from_nanos((n * 1000 * inner) as u64))).unwrap();
        assert!((r.latency_fit.unwrap().slope - 1.0).abs() < 0.01);
        assert_eq!(r.points.iter().map(|p| p.n).collect::<Vec<_>>(), lengths);
        let r = measure_latency_with(&lengths, &opts, |n, inner| Ok(Duration::from_nanos((n * n * inner) as u64))).unwrap();
        assert!((r.latency_fit.unwrap().slope - 2.0).abs() < 0.01);
    }

    #[test]
    fn coarse_timer_batches_runs() {
        let opts = BenchOptions {
            min_sample: Duration::from_micros(100),
            ..BenchOptions::default()
        };
        let r = measure_latency_with(&[2, 4, 8], &opts, |n, inner| Ok(Duration::from_nanos((n * inner) as u64))).unwrap();
        assert!(!r.notes.is_empty());
        assert!((r.points[1].latency_us.unwrap() - 0.004).abs() < 1e-9);
    }

    #[test]
    fn single_length_skips_fit() {
        let r = measure_latency_with(&[64], &BenchOptions::default(), |_, i| Ok(Duration::from_millis(i as u64 * 3))).unwrap();
        assert!(r.latency_fit.is_none());
        assert!(r.notes.iter().any(|n| n.contains("skipped")));
        assert!(r.to_lines().contains("slope=n/a"));
    }

    #[test]
    fn repeats_below_five_rejected() {
        let opts = BenchOptions {
            repeats: 3,
            ..BenchOptions::default()
        };
        assert!(measure_latency_with(&[2, 3, 4], &opts, |_, _| Ok(Duration::from_millis(1))).is_err());
    }
}
