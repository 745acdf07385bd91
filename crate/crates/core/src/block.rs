//! Time-mixing and channel-mixing sub-blocks.
//!
//! Each sub-block has two execution paths over the same parameters:
//! a whole-sequence path (`Mode::Parallel`, also recorded on the gradient
//! tape for training) and a one-token-at-a-time path (`Mode::Recurrent`)
//! that carries a [`ShiftCache`] and one [`HeadState`] per head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{
    decay_from_raw, group_norm, group_norm_rows, sigmoid, silu, sq_relu, token_shift_seq, wkv_scan, Matrix, Real,
    Tape, Var, WkvStates,
};
use crate::params::param_group;

/// Execution formulation for the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Parallel,
    Recurrent,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "parallel" => Ok(Mode::Parallel),
            "recurrent" => Ok(Mode::Recurrent),
            other => Err(format!("unknown mode `{other}` (expected parallel or recurrent)")),
        }
    }
}

/// Time-mixing weights. Projections are stored input-major (`x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMixParams<M> {
    pub mu_g: M,
    pub mu_r: M,
    pub mu_k: M,
    pub mu_v: M,
    pub w_g: M,
    pub w_r: M,
    pub w_k: M,
    pub w_v: M,
    /// Decay before the `exp(−exp(·))` transform, laid out head by head.
    pub w_raw: M,
    /// Current-token bonus.
    pub u: M,
    pub ln_gamma: M,
    pub ln_beta: M,
    pub w_o: M,
}

param_group!(TimeMixParams {
    mu_g, mu_r, mu_k, mu_v, w_g, w_r, w_k, w_v, w_raw, u, ln_gamma, ln_beta, w_o
});

/// Channel-mixing weights; `w_k` is `D × F`, `w_v` is `F × D`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMixParams<M> {
    pub mu_k: M,
    pub mu_r: M,
    pub w_k: M,
    pub w_v: M,
    pub w_r: M,
}

param_group!(ChannelMixParams { mu_k, mu_r, w_k, w_v, w_r });

impl<T: Real> TimeMixParams<Matrix<T>> {
    pub fn width(&self) -> usize {
        self.w_o.cols()
    }

    /// Effective per-channel decay `exp(−exp(w_raw))`.
    pub fn decay(&self) -> Vec<T> {
        transform_decay(self.w_raw.as_slice())
    }
}

/// The `d × d` WKV accumulator of one head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadState<T> {
    pub s: Matrix<T>,
}

impl<T: Real> HeadState<T> {
    pub fn zeros(head_dim: usize) -> Self {
        HeadState {
            s: Matrix::zeros(head_dim, head_dim),
        }
    }
}

/// Previous-token inputs of both token shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftCache<T> {
    pub prev_time_mix: Vec<T>,
    pub prev_channel_mix: Vec<T>,
}

impl<T: Real> ShiftCache<T> {
    pub fn zeros(width: usize) -> Self {
        ShiftCache {
            prev_time_mix: vec![T::zero(); width],
            prev_channel_mix: vec![T::zero(); width],
        }
    }
}

/// `mu ⊙ x_t + (1 − mu) ⊙ x_prev`.
pub fn token_shift<T: Real>(x_t: &[T], x_prev: &[T], mu: &[T]) -> Vec<T> {
    x_t.iter()
        .zip(x_prev)
        .zip(mu)
        .map(|((&x, &p), &m)| m * x + (T::one() - m) * p)
        .collect()
}

/// `exp(−exp(w_raw))` elementwise; strictly inside (0, 1) for finite input
/// of moderate magnitude.
pub fn transform_decay<T: Real>(w_raw: &[T]) -> Vec<T> {
    w_raw.iter().map(|&x| decay_from_raw(x)).collect()
}

fn outer_into<T: Real>(k: &[T], v: &[T], scale: Option<&[T]>, out: &mut Matrix<T>) {
    let d = v.len();
    for i in 0..k.len() {
        let ki = scale.map_or(k[i], |u| u[i] * k[i]);
        let row = out.row_mut(i);
        for j in 0..d {
            row[j] += ki * v[j];
        }
    }
}

/// One recurrent WKV step of a single head:
/// `wkv_t = s + diag(u)·k_tᵀ·v_t` and `s' = diag(w)·s + k_tᵀ·v_t`.
pub fn wkv_recurrent_step<T: Real>(
    state: &HeadState<T>,
    k_t: &[T],
    v_t: &[T],
    u: &[T],
    w: &[T],
) -> Result<(Matrix<T>, HeadState<T>)> {
    let d = k_t.len();
    if v_t.len() != d || u.len() != d || w.len() != d || state.s.shape() != (d, d) {
        return Err(Error::Shape {
            op: "wkv_recurrent_step",
            left: state.s.shape(),
            right: (k_t.len(), v_t.len()),
        });
    }
    let mut wkv = state.s.clone();
    outer_into(k_t, v_t, Some(u), &mut wkv);
    let mut next = state.s.clone();
    for i in 0..d {
        let wi = w[i];
        for x in next.row_mut(i) {
            *x *= wi;
        }
    }
    outer_into(k_t, v_t, None, &mut next);
    next.check_finite("wkv state")?;
    Ok((wkv, HeadState { s: next }))
}

/// WKV matrices for a whole single-head sequence, via one running decayed
/// accumulator (`O(N·d²)` work, `d²` extra memory besides the outputs).
pub fn wkv_parallel<T: Real>(keys: &Matrix<T>, values: &Matrix<T>, u: &[T], w: &[T]) -> Result<Vec<Matrix<T>>> {
    wkv_parallel_counted(keys, values, u, w).map(|(out, _)| out)
}

/// [`wkv_parallel`] plus the number of scalar multiply-adds it performed.
pub fn wkv_parallel_counted<T: Real>(
    keys: &Matrix<T>,
    values: &Matrix<T>,
    u: &[T],
    w: &[T],
) -> Result<(Vec<Matrix<T>>, u64)> {
    let d = keys.cols();
    if values.shape() != keys.shape() || u.len() != d || w.len() != d {
        return Err(Error::Shape {
            op: "wkv_parallel",
            left: keys.shape(),
            right: values.shape(),
        });
    }
    let mut acc = Matrix::zeros(d, d);
    let mut out = Vec::with_capacity(keys.rows());
    let mut ops = 0u64;
    for t in 0..keys.rows() {
        let (k, v) = (keys.row(t), values.row(t));
        let mut wkv = acc.clone();
        outer_into(k, v, Some(u), &mut wkv);
        ops += (d * d) as u64;
        out.push(wkv);
        for i in 0..d {
            let wi = w[i];
            let ki = k[i];
            let row = acc.row_mut(i);
            for j in 0..d {
                row[j] = wi * row[j] + ki * v[j];
            }
            ops += d as u64;
        }
    }
    acc.check_finite("wkv accumulator")?;
    Ok((out, ops))
}

fn check_heads(width: usize, heads: usize) -> Result<usize> {
    if heads == 0 || width % heads != 0 {
        return Err(Error::config(format!("model width {width} is not divisible by {heads} heads")));
    }
    Ok(width / heads)
}

fn project<T: Real>(x: &[T], w: &Matrix<T>) -> Result<Vec<T>> {
    Ok(Matrix::row_vector(x.to_vec()).matmul(w)?.into_vec())
}

/// One recurrent time-mixing step. Advances `prev` and `states` in place.
pub fn time_mix_step<T: Real>(
    x_t: &[T],
    p: &TimeMixParams<Matrix<T>>,
    heads: usize,
    eps: T,
    prev: &mut Vec<T>,
    states: &mut [HeadState<T>],
) -> Result<Vec<T>> {
    let width = x_t.len();
    let d = check_heads(width, heads)?;
    if states.len() != heads || prev.len() != width {
        return Err(Error::Shape {
            op: "time_mix_step",
            left: (heads, width),
            right: (states.len(), prev.len()),
        });
    }
    let g = project(&token_shift(x_t, prev, p.mu_g.as_slice()), &p.w_g)?;
    let r = project(&token_shift(x_t, prev, p.mu_r.as_slice()), &p.w_r)?;
    let k = project(&token_shift(x_t, prev, p.mu_k.as_slice()), &p.w_k)?;
    let v = project(&token_shift(x_t, prev, p.mu_v.as_slice()), &p.w_v)?;
    let w = p.decay();
    let u = p.u.as_slice();
    let mut read = vec![T::zero(); width];
    for h in 0..heads {
        let s = h * d..(h + 1) * d;
        let (wkv, next) = wkv_recurrent_step(&states[h], &k[s.clone()], &v[s.clone()], &u[s.clone()], &w[s.clone()])?;
        states[h] = next;
        // r_t · wkv_t, row vector times d × d matrix.
        let rh = &r[s.clone()];
        let out = &mut read[s];
        for i in 0..d {
            let row = wkv.row(i);
            for j in 0..d {
                out[j] += rh[i] * row[j];
            }
        }
    }
    let normed = group_norm(&read, heads, p.ln_gamma.as_slice(), p.ln_beta.as_slice(), eps)?;
    let gated: Vec<T> = g.iter().zip(&normed).map(|(&gi, &n)| silu(gi) * n).collect();
    prev.copy_from_slice(x_t);
    project(&gated, &p.w_o)
}

/// One recurrent channel-mixing step. Advances `prev` in place.
pub fn channel_mix_step<T: Real>(x_t: &[T], p: &ChannelMixParams<Matrix<T>>, prev: &mut Vec<T>) -> Result<Vec<T>> {
    let k = project(&token_shift(x_t, prev, p.mu_k.as_slice()), &p.w_k)?;
    let r = project(&token_shift(x_t, prev, p.mu_r.as_slice()), &p.w_r)?;
    let hidden: Vec<T> = k.into_iter().map(sq_relu).collect();
    let v = project(&hidden, &p.w_v)?;
    prev.copy_from_slice(x_t);
    Ok(r.iter().zip(&v).map(|(&ri, &vi)| sigmoid(ri) * vi).collect())
}

/// Time mixing over an `N × D` sequence, starting from `cache`/`states`.
///
/// Both modes return the same outputs and the same advanced cache and
/// states up to floating-point reassociation.
pub fn time_mix_forward<T: Real>(
    x_seq: &Matrix<T>,
    p: &TimeMixParams<Matrix<T>>,
    heads: usize,
    eps: T,
    mode: Mode,
    cache: &ShiftCache<T>,
    states: &[HeadState<T>],
) -> Result<(Matrix<T>, ShiftCache<T>, Vec<HeadState<T>>)> {
    let width = x_seq.cols();
    let d = check_heads(width, heads)?;
    if states.len() != heads {
        return Err(Error::Shape {
            op: "time_mix_forward",
            left: (heads, d),
            right: (states.len(), d),
        });
    }
    let mut next_cache = cache.clone();
    match mode {
        Mode::Recurrent => {
            let mut st = states.to_vec();
            let mut out = Matrix::zeros(x_seq.rows(), width);
            for t in 0..x_seq.rows() {
                let y = time_mix_step(x_seq.row(t), p, heads, eps, &mut next_cache.prev_time_mix, &mut st)?;
                out.row_mut(t).copy_from_slice(&y);
            }
            Ok((out, next_cache, st))
        }
        Mode::Parallel => {
            let n = x_seq.rows();
            if n == 0 {
                return Ok((Matrix::zeros(0, width), next_cache, states.to_vec()));
            }
            let init_prev = Matrix::row_vector(cache.prev_time_mix.clone());
            let shifted = |mu: &Matrix<T>| token_shift_seq(x_seq, mu, n, Some(&init_prev));
            let g = shifted(&p.mu_g)?.matmul(&p.w_g)?;
            let r = shifted(&p.mu_r)?.matmul(&p.w_r)?;
            let k = shifted(&p.mu_k)?.matmul(&p.w_k)?;
            let v = shifted(&p.mu_v)?.matmul(&p.w_v)?;
            let mut init = WkvStates::zeros(1, heads, d);
            for (h, st) in states.iter().enumerate() {
                init.block_mut(0, h).copy_from_slice(st.s.as_slice());
            }
            let (read, fin) = wkv_scan(&r, &k, &v, &p.decay(), p.u.as_slice(), heads, n, Some(&init))?;
            let normed = group_norm_rows(&read, heads, &p.ln_gamma, &p.ln_beta, eps)?;
            let gated = g.map(silu).hadamard(&normed)?;
            let y = gated.matmul(&p.w_o)?;
            next_cache.prev_time_mix = x_seq.row(n - 1).to_vec();
            let next_states = (0..heads)
                .map(|h| {
                    Ok(HeadState {
                        s: Matrix::from_vec(d, d, fin.block(0, h).to_vec())?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            y.check_finite("time mix output")?;
            Ok((y, next_cache, next_states))
        }
    }
}

/// Channel mixing over an `N × D` sequence, starting from `cache`.
pub fn channel_mix_forward<T: Real>(
    x_seq: &Matrix<T>,
    p: &ChannelMixParams<Matrix<T>>,
    mode: Mode,
    cache: &ShiftCache<T>,
) -> Result<(Matrix<T>, ShiftCache<T>)> {
    let mut next_cache = cache.clone();
    let n = x_seq.rows();
    match mode {
        Mode::Recurrent => {
            let mut out = Matrix::zeros(n, x_seq.cols());
            for t in 0..n {
                let y = channel_mix_step(x_seq.row(t), p, &mut next_cache.prev_channel_mix)?;
                out.row_mut(t).copy_from_slice(&y);
            }
            Ok((out, next_cache))
        }
        Mode::Parallel => {
            if n == 0 {
                return Ok((Matrix::zeros(0, x_seq.cols()), next_cache));
            }
            let init_prev = Matrix::row_vector(cache.prev_channel_mix.clone());
            let k = token_shift_seq(x_seq, &p.mu_k, n, Some(&init_prev))?.matmul(&p.w_k)?;
            let r = token_shift_seq(x_seq, &p.mu_r, n, Some(&init_prev))?.matmul(&p.w_r)?;
            let v = k.map(sq_relu).matmul(&p.w_v)?;
            let y = r.map(sigmoid).hadamard(&v)?;
            next_cache.prev_channel_mix = x_seq.row(n - 1).to_vec();
            Ok((y, next_cache))
        }
    }
}

/// Time mixing recorded on `tape` for a stack of zero-initialized sequences
/// of length `seq_len`.
pub fn time_mix_tape<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    p: &TimeMixParams<Var>,
    heads: usize,
    eps: T,
    seq_len: usize,
) -> Result<Var> {
    check_heads(tape.value(x).cols(), heads)?;
    let mut proj = |mu: Var, w: Var| -> Result<Var> {
        let s = tape.token_shift(x, mu, seq_len)?;
        tape.matmul(s, w)
    };
    let g = proj(p.mu_g, p.w_g)?;
    let r = proj(p.mu_r, p.w_r)?;
    let k = proj(p.mu_k, p.w_k)?;
    let v = proj(p.mu_v, p.w_v)?;
    let read = tape.wkv(r, k, v, p.w_raw, p.u, heads, seq_len)?;
    let normed = tape.group_norm(read, p.ln_gamma, p.ln_beta, heads, eps)?;
    let gate = tape.silu(g);
    let gated = tape.mul(gate, normed)?;
    tape.matmul(gated, p.w_o)
}

/// Channel mixing recorded on `tape`.
pub fn channel_mix_tape<T: Real>(tape: &mut Tape<T>, x: Var, p: &ChannelMixParams<Var>, seq_len: usize) -> Result<Var> {
    let sk = tape.token_shift(x, p.mu_k, seq_len)?;
    let k = tape.matmul(sk, p.w_k)?;
    let sr = tape.token_shift(x, p.mu_r, seq_len)?;
    let r = tape.matmul(sr, p.w_r)?;
    let hidden = tape.sq_relu(k);
    let v = tape.matmul(hidden, p.w_v)?;
    let gate = tape.sigmoid(r);
    tape.mul(gate, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_shift_endpoints() {
        let (x, p) = ([1.0f64, 2.0], [3.0, 4.0]);
        assert_eq!(token_shift(&x, &p, &[1.0, 1.0]), x.to_vec());
        assert_eq!(token_shift(&x, &p, &[0.0, 0.0]), p.to_vec());
        assert_eq!(token_shift(&[2.0f64], &[0.0], &[0.5]), vec![1.0]);
    }

    #[test]
    fn decay_transform() {
        let w = transform_decay(&[0.0f64, 3.0, -3.0, 30.0, -30.0]);
        assert!((w[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w[0] - 0.367879).abs() < 1e-6);
        assert!(w[1] < w[0] && w[0] < w[2]);
        assert!(w[3] >= 0.0 && w[3] < 1e-12);
        assert!(w[4] < 1.0 && w[4] > 1.0 - 1e-12);
    }

    #[test]
    fn scalar_recurrence_by_hand() {
        let s0 = HeadState::zeros(1);
        let (wkv1, s1) = wkv_recurrent_step(&s0, &[1.0f64], &[3.0], &[2.0], &[0.5]).unwrap();
        assert_eq!((wkv1.get(0, 0), s1.s.get(0, 0)), (6.0, 3.0));
        let (wkv2, s2) = wkv_recurrent_step(&s1, &[2.0], &[1.0], &[2.0], &[0.5]).unwrap();
        assert_eq!((wkv2.get(0, 0), s2.s.get(0, 0)), (7.0, 3.5));

        let keys = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let values = Matrix::from_rows(&[vec![3.0], vec![1.0]]).unwrap();
        let seq = wkv_parallel(&keys, &values, &[2.0], &[0.5]).unwrap();
        assert_eq!(seq.iter().map(|m| m.get(0, 0)).collect::<Vec<_>>(), vec![6.0, 7.0]);
    }

    #[test]
    fn first_step_is_bonus_only() {
        let (k, v, u) = ([1.0f64, -2.0], [0.5, 3.0], [0.3, 0.7]);
        let (wkv, _) = wkv_recurrent_step(&HeadState::zeros(2), &k, &v, &u, &[0.9, 0.2]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(wkv.get(i, j), u[i] * k[i] * v[j]);
            }
        }
    }

    #[test]
    fn zero_key_only_decays() {
        let mut s = HeadState::zeros(2);
        s.s = Matrix::from_rows(&[vec![1.0f64, 2.0], vec![3.0, 4.0]]).unwrap();
        let (wkv, next) = wkv_recurrent_step(&s, &[0.0, 0.0], &[5.0, 6.0], &[1.0, 1.0], &[0.5, 0.25]).unwrap();
        assert_eq!(wkv, s.s);
        assert_eq!(next.s.as_slice(), &[0.5, 1.0, 0.75, 1.0]);
    }

    fn scalar_tm(d: usize) -> TimeMixParams<Matrix<f64>> {
        let eye = Matrix::identity(d);
        let ones = Matrix::filled(1, d, 1.0);
        TimeMixParams {
            mu_g: ones.clone(),
            mu_r: ones.clone(),
            mu_k: ones.clone(),
            mu_v: ones.clone(),
            w_g: eye.clone(),
            w_r: eye.clone(),
            w_k: eye.clone(),
            w_v: eye.clone(),
            w_raw: Matrix::zeros(1, d),
            u: ones.clone(),
            ln_gamma: ones,
            ln_beta: Matrix::zeros(1, d),
            w_o: eye,
        }
    }

    #[test]
    fn zero_output_projection_silences_time_mix() {
        let mut p = scalar_tm(4);
        p.w_o = Matrix::zeros(4, 4);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0, 0.5], vec![0.1, 0.2, -0.3, 9.0]]).unwrap();
        for mode in [Mode::Parallel, Mode::Recurrent] {
            let (y, _, _) =
                time_mix_forward(&x, &p, 2, 1e-5, mode, &ShiftCache::zeros(4), &[HeadState::zeros(2), HeadState::zeros(2)])
                    .unwrap();
            assert_eq!(y, Matrix::zeros(2, 4));
        }
    }

    #[test]
    fn single_token_ignores_history_when_mu_is_one() {
        let p = scalar_tm(4);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0, 0.5]]).unwrap();
        let states = [HeadState::zeros(2), HeadState::zeros(2)];
        let (a, _, _) = time_mix_forward(&x, &p, 2, 1e-5, Mode::Parallel, &ShiftCache::zeros(4), &states).unwrap();
        let mut cache = ShiftCache::zeros(4);
        cache.prev_time_mix = vec![10.0, 20.0, -5.0, 7.0];
        let (b, _, _) = time_mix_forward(&x, &p, 2, 1e-5, Mode::Parallel, &cache, &states).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let p = scalar_tm(4);
        let x = Matrix::zeros(1, 4);
        let err = time_mix_forward(&x, &p, 3, 1e-5, Mode::Parallel, &ShiftCache::zeros(4), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn scalar_cm(wk: f64, wv: f64, wr: f64) -> ChannelMixParams<Matrix<f64>> {
        ChannelMixParams {
            mu_k: Matrix::filled(1, 1, 1.0),
            mu_r: Matrix::filled(1, 1, 1.0),
            w_k: Matrix::filled(1, 1, wk),
            w_v: Matrix::filled(1, 1, wv),
            w_r: Matrix::filled(1, 1, wr),
        }
    }

    #[test]
    fn channel_mix_dead_zones() {
        let x = Matrix::from_rows(&[vec![2.0], vec![-1.0]]).unwrap();
        let (y, _) = channel_mix_forward(&x, &scalar_cm(0.0, 1.0, 1.0), Mode::Parallel, &ShiftCache::zeros(1)).unwrap();
        assert_eq!(y, Matrix::zeros(2, 1));
        let pos = Matrix::from_rows(&[vec![2.0], vec![1.0]]).unwrap();
        let (y, _) = channel_mix_forward(&pos, &scalar_cm(-1.0, 1.0, 1.0), Mode::Parallel, &ShiftCache::zeros(1)).unwrap();
        assert_eq!(y, Matrix::zeros(2, 1));
    }

    #[test]
    fn channel_mix_scalar_by_hand() {
        // x = 2, mu = 1: k' = 1.5·2 = 3, r' = 0.5·2 = 1, v' = 9·2 = 18, o' = σ(1)·18.
        let x = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let (y, cache) =
            channel_mix_forward(&x, &scalar_cm(1.5, 2.0, 0.5), Mode::Recurrent, &ShiftCache::zeros(1)).unwrap();
        let expected = 18.0 / (1.0 + (-1.0f64).exp());
        assert!((y.get(0, 0) - expected).abs() < 1e-12);
        assert_eq!(cache.prev_channel_mix, vec![2.0]);
    }
}
