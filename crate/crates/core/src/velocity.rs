//! Generalized velocity vectors.
//!
//! Three routes to the same object:
//!
//! - [`instantaneous_gfvv`]: the per-frame ratio `b(f) / (w^T b(f))`.
//! - [`estimate_gfvv_ls`]: a least-squares estimator that exploits source
//!   nonstationarity against stationary noise. For channel `c` and bin `f`
//!   the frames are split into sub-segments; in each one the auto power
//!   `phi_s = <|B_c|^2>` and the cross power `x_s = <(w^T b) B_c^*>` satisfy
//!   `phi_s = v_c(f) x_s + phi_U` with `phi_U` constant across segments, and
//!   the two unknowns are fitted jointly.
//! - [`gtvv_closed_form`]: the causal series expansion of the model GTVV,
//!   built directly from ground-truth wavefronts.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GtvvError, Result};
use crate::fdelay;
use crate::par;
use crate::room::GroundTruthScene;
use crate::sh::{channel_count, sh_eval, BeamWeights, Direction};
use crate::spectral::{gfvv_to_gtvv, GtvvMatrix, SpectrumTensor};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// A wavefront relative to the direct path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeWavefront {
    pub direction: Direction,
    /// `g = gain / gain_direct`.
    pub gain: f64,
    /// `tau = toa - toa_direct`, seconds.
    pub delay: f64,
    /// Beam response `w^T y(direction)`.
    pub beta: f64,
}

impl RelativeWavefront {
    /// `gamma(f) = g beta exp(-j 2 pi f tau)`.
    pub fn gamma(&self, freq: f64) -> Complex64 {
        Complex64::from_polar(self.gain * self.beta, -2.0 * std::f64::consts::PI * freq * self.delay)
    }
}

/// Converts a scene to relative wavefronts seen through the beam `w`.
/// The direct path comes first.
pub fn relative_wavefronts(scene: &GroundTruthScene, w: &BeamWeights) -> Result<Vec<RelativeWavefront>> {
    let direct = scene.direct();
    scene
        .wavefronts
        .iter()
        .map(|wf| {
            let y = sh_eval(&wf.direction, w.order())?;
            Ok(RelativeWavefront {
                direction: wf.direction,
                gain: wf.gain / direct.gain,
                delay: wf.toa - direct.toa,
                beta: w.response(y.coeffs()),
            })
        })
        .collect()
}

/// Model GFVV `sum_n a_n y_n / sum_n a_n beta_n` at the given frequencies,
/// with `a_n = g_n exp(-j 2 pi f tau_n)`. Returns `channels x freqs.len()`.
pub fn gfvv_model(waves: &[RelativeWavefront], order: usize, freqs: &[f64]) -> Result<DMatrix<Complex64>> {
    let ys = waves
        .iter()
        .map(|w| sh_eval(&w.direction, order).map(|y| y.into_coeffs()))
        .collect::<Result<Vec<_>>>()?;
    let channels = channel_count(order);
    let mut out = DMatrix::from_element(channels, freqs.len(), ZERO);
    for (k, &f) in freqs.iter().enumerate() {
        let mut den = ZERO;
        let mut num = vec![ZERO; channels];
        for (w, y) in waves.iter().zip(&ys) {
            let a = Complex64::from_polar(w.gain, -2.0 * std::f64::consts::PI * f * w.delay);
            den += a * w.beta;
            for (n, yc) in num.iter_mut().zip(y) {
                *n += a * yc;
            }
        }
        for (c, n) in num.into_iter().enumerate() {
            out[(c, k)] = n / den;
        }
    }
    Ok(out)
}

/// One-sided GFVV with a per-bin validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Gfvv {
    /// `channels x bins`.
    pub values: DMatrix<Complex64>,
    pub valid: Vec<bool>,
}

impl Gfvv {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Sub-segmenting and regularization of the least-squares estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorParams {
    /// Number of sub-segments (rows of each least-squares system).
    pub seg_count: usize,
    /// STFT frames averaged inside each sub-segment.
    pub frames_per_seg: usize,
    /// Diagonal load relative to the trace of the normal equations.
    pub diagonal_load: f64,
}

impl Default for EstimatorParams {
    fn default() -> Self {
        EstimatorParams {
            seg_count: 8,
            frames_per_seg: 24,
            diagonal_load: 1e-6,
        }
    }
}

impl EstimatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.seg_count < 2 {
            return Err(GtvvError::invalid("seg_count must be at least 2"));
        }
        if self.frames_per_seg == 0 {
            return Err(GtvvError::invalid("frames_per_seg must be positive"));
        }
        if !(self.diagonal_load >= 0.0) || !self.diagonal_load.is_finite() {
            return Err(GtvvError::invalid("diagonal_load must be finite and non-negative"));
        }
        Ok(())
    }

    /// Frames consumed by one estimate.
    pub fn frames_needed(&self) -> usize {
        self.seg_count * self.frames_per_seg
    }

    pub fn with_reference(self, reference: BeamWeights) -> EstimatorConfig {
        EstimatorConfig { params: self, reference }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorConfig {
    pub params: EstimatorParams,
    pub reference: BeamWeights,
}

impl EstimatorConfig {
    pub fn new(reference: BeamWeights) -> Self {
        EstimatorParams::default().with_reference(reference)
    }
}

fn reference_output(w: &[f64], obs: &[Complex64]) -> Complex64 {
    w.iter().zip(obs).map(|(wc, b)| b * *wc).sum()
}

/// Per-bin ratio `b(f) / (w^T b(f))` for one frame. Bins whose reference
/// output is at or below `1e-9` times the frame RMS are flagged invalid and
/// left at zero.
pub fn instantaneous_gfvv(spec: &SpectrumTensor, w: &BeamWeights, frame: usize) -> Result<Gfvv> {
    if w.weights().len() != spec.channels() {
        return Err(GtvvError::invalid("beam order does not match the spectrum"));
    }
    if frame >= spec.frames() {
        return Err(GtvvError::invalid(format!("frame {frame} out of range")));
    }
    let data = spec.frame(frame);
    let rms = (data.iter().map(|z| z.norm_sqr()).sum::<f64>() / data.len() as f64).sqrt();
    let floor = 1e-9 * rms;
    let channels = spec.channels();
    let mut values = DMatrix::from_element(channels, spec.bins(), ZERO);
    let mut valid = vec![false; spec.bins()];
    for f in 0..spec.bins() {
        let obs = spec.observation(frame, f);
        let r = reference_output(w.weights(), obs);
        if r.norm() > floor {
            valid[f] = true;
            for c in 0..channels {
                values[(c, f)] = obs[c] / r;
            }
        }
    }
    if !valid.iter().any(|v| *v) {
        return Err(GtvvError::SilentFrame { frame });
    }
    Ok(Gfvv { values, valid })
}

struct BinSolution {
    values: Vec<Complex64>,
    valid: bool,
    degenerate: Option<(usize, f64)>,
}

/// Relative spread of the cross-power column below which the two columns of
/// the system are treated as collinear.
const DEGENERATE_SPREAD: f64 = 1e-10;
/// Bins whose reference energy is this far below the strongest bin carry no
/// usable signal and are flagged invalid.
const SILENT_BIN: f64 = 1e-14;
/// Channels this far below the reference inside a bin are exactly zero.
const SILENT_CHANNEL: f64 = 1e-24;

/// Solves `phi = v x + c` in the least-squares sense over segments,
/// with column equilibration, diagonal loading and two refinement steps
/// against the unloaded normal equations.
fn solve_two_column(phi: &[f64], x: &[Complex64], load: f64) -> std::result::Result<Complex64, ()> {
    let s = x.len() as f64;
    let d1 = x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if !(d1 > 0.0) {
        return Err(());
    }
    let d2 = s.sqrt();
    // equilibrated normal equations: G = [[1, g12], [conj(g12), 1]]
    let g12: Complex64 = x.iter().map(|z| z.conj()).sum::<Complex64>() / (d1 * d2);
    let spread = 1.0 - g12.norm_sqr();
    if spread < DEGENERATE_SPREAD {
        return Err(());
    }
    let rhs1: Complex64 = x.iter().zip(phi).map(|(z, p)| z.conj() * *p).sum::<Complex64>() / d1;
    let rhs2 = Complex64::new(phi.iter().sum::<f64>() / d2, 0.0);
    let lambda = load * 2.0;
    let m11 = 1.0 + lambda;
    let det = m11 * m11 - g12.norm_sqr();
    let solve = |b1: Complex64, b2: Complex64| -> (Complex64, Complex64) {
        ((b1 * m11 - g12 * b2) / det, (b2 * m11 - g12.conj() * b1) / det)
    };
    let (mut t1, mut t2) = solve(rhs1, rhs2);
    for _ in 0..2 {
        let r1 = rhs1 - (t1 + g12 * t2);
        let r2 = rhs2 - (g12.conj() * t1 + t2);
        let (e1, e2) = solve(r1, r2);
        t1 += e1;
        t2 += e2;
    }
    Ok(t1 / d1)
}

fn solve_bin(spec: &SpectrumTensor, cfg: &EstimatorConfig, f: usize, energy_floor: f64) -> BinSolution {
    let p = &cfg.params;
    let channels = spec.channels();
    let w = cfg.reference.weights();
    let frames = p.frames_needed();
    let refs: Vec<Complex64> = (0..frames)
        .map(|u| reference_output(w, spec.observation(u, f)))
        .collect();
    let ref_energy: f64 = refs.iter().map(|z| z.norm_sqr()).sum();
    if ref_energy <= energy_floor {
        return BinSolution {
            values: vec![ZERO; channels],
            valid: false,
            degenerate: None,
        };
    }
    let selected = cfg.reference.selected_channel();
    let mut values = vec![ZERO; channels];
    let mut degenerate: Option<(usize, f64)> = None;
    let mut phi = vec![0.0; p.seg_count];
    let mut cross = vec![ZERO; p.seg_count];
    let inv = 1.0 / p.frames_per_seg as f64;
    for (c, value) in values.iter_mut().enumerate() {
        if selected == Some(c) {
            *value = Complex64::new(1.0, 0.0);
            continue;
        }
        let mut energy = 0.0;
        for s in 0..p.seg_count {
            let mut auto = 0.0;
            let mut xc = ZERO;
            for u in s * p.frames_per_seg..(s + 1) * p.frames_per_seg {
                let b = spec.get(u, f, c);
                auto += b.norm_sqr();
                xc += refs[u] * b.conj();
            }
            phi[s] = auto * inv;
            cross[s] = xc * inv;
            energy += auto;
        }
        if energy <= SILENT_CHANNEL * ref_energy {
            continue;
        }
        match solve_two_column(&phi, &cross, p.diagonal_load) {
            Ok(v) => *value = v,
            Err(()) => {
                if degenerate.is_none_or(|(_, e)| energy > e) {
                    degenerate = Some((c, energy));
                }
            }
        }
    }
    BinSolution {
        values,
        valid: true,
        degenerate,
    }
}

/// Least-squares GFVV over the first `seg_count * frames_per_seg` frames.
///
/// Bins with no reference energy are flagged invalid. A bin whose system is
/// rank deficient (stationary source) is an error; when several are, the one
/// carrying the most energy is reported.
pub fn estimate_gfvv_ls(spec: &SpectrumTensor, cfg: &EstimatorConfig) -> Result<Gfvv> {
    cfg.params.validate()?;
    if cfg.reference.weights().len() != spec.channels() {
        return Err(GtvvError::invalid("reference beam order does not match the spectrum"));
    }
    let needed = cfg.params.frames_needed();
    if spec.frames() < needed {
        return Err(GtvvError::invalid(format!(
            "estimator needs {needed} frames, spectrum has {}",
            spec.frames()
        )));
    }
    let w = cfg.reference.weights();
    let bin_energy = par::map_range(spec.bins(), |f| {
        (0..needed)
            .map(|u| reference_output(w, spec.observation(u, f)).norm_sqr())
            .sum::<f64>()
    });
    let peak = bin_energy.iter().cloned().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(GtvvError::SilentFrame { frame: 0 });
    }
    let floor = SILENT_BIN * peak;
    let solved = par::map_range(spec.bins(), |f| solve_bin(spec, cfg, f, floor));
    let mut worst: Option<(usize, usize, f64)> = None;
    let mut values = DMatrix::from_element(spec.channels(), spec.bins(), ZERO);
    let mut valid = Vec::with_capacity(spec.bins());
    for (f, sol) in solved.into_iter().enumerate() {
        if let Some((c, e)) = sol.degenerate {
            if worst.is_none_or(|(_, _, we)| e > we) {
                worst = Some((f, c, e));
            }
        }
        for (c, v) in sol.values.into_iter().enumerate() {
            values[(c, f)] = v;
        }
        valid.push(sol.valid);
    }
    if let Some((bin, channel, _)) = worst {
        return Err(GtvvError::EstimatorDegenerate { bin, channel });
    }
    Ok(Gfvv { values, valid })
}

/// Fills invalid bins by linear interpolation (in the complex plane) between
/// the nearest valid neighbours; edge bins copy the nearest valid bin. The
/// DC and Nyquist bins keep only their real part when filled.
pub fn interpolate_invalid_bins(gfvv: &Gfvv) -> Result<DMatrix<Complex64>> {
    let bins = gfvv.valid.len();
    let valid_idx: Vec<usize> = (0..bins).filter(|&f| gfvv.valid[f]).collect();
    if valid_idx.is_empty() {
        return Err(GtvvError::SilentFrame { frame: 0 });
    }
    let mut out = gfvv.values.clone();
    for f in 0..bins {
        if gfvv.valid[f] {
            continue;
        }
        let next = valid_idx.partition_point(|&v| v < f);
        let hi = valid_idx.get(next).copied();
        let lo = next.checked_sub(1).map(|i| valid_idx[i]);
        for c in 0..out.nrows() {
            let mut v = match (lo, hi) {
                (Some(a), Some(b)) => {
                    let t = (f - a) as f64 / (b - a) as f64;
                    gfvv.values[(c, a)] * (1.0 - t) + gfvv.values[(c, b)] * t
                }
                (Some(a), None) => gfvv.values[(c, a)],
                (None, Some(b)) => gfvv.values[(c, b)],
                (None, None) => unreachable!(),
            };
            if f == 0 || f == bins - 1 {
                v.im = 0.0;
            }
            out[(c, f)] = v;
        }
    }
    Ok(out)
}

/// Least-squares GFVV, invalid-bin interpolation, inverse transform.
pub fn estimate_gtvv(spec: &SpectrumTensor, cfg: &EstimatorConfig) -> Result<GtvvMatrix> {
    let gfvv = estimate_gfvv_ls(spec, cfg)?;
    let filled = interpolate_invalid_bins(&gfvv)?;
    gfvv_to_gtvv(&filled, spec.win_len(), spec.fs())
}

/// One single-wavefront term of the series: coefficient `(-g beta)^k` at
/// lag `k tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesTerm {
    /// Index into the wavefront list (>= 1).
    pub wavefront: usize,
    pub k: usize,
    pub coefficient: f64,
    /// Seconds.
    pub lag: f64,
    /// False when the lag falls outside the analysis window.
    pub placed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeriesExpansion {
    pub terms: Vec<SeriesTerm>,
    /// Truncation order `K`.
    pub max_k: usize,
    /// Upper bound on the magnitude of any entry of the cross-term
    /// remainder at any lag: the l1 mass of every product involving two or
    /// more distinct reflections. Infinite when `sum |g beta| >= 1`.
    pub cross_term_budget: f64,
    /// Upper bound on the entry magnitude lost to terms beyond `K` or
    /// outside the window.
    pub truncation_budget: f64,
    /// Whether `sum_n |g_n beta_n| < 1`.
    pub sufficient_condition: bool,
}

/// Closed-form GTVV of a set of relative wavefronts (index 0 = direct path
/// with `g = 1`, `tau = 0`, `beta = 1`):
///
/// `v(t) = delta(t) y_0 + sum_{k=1..K} sum_n (-g_n beta_n)^k (y_0 - y_n / beta_n) delta(t - k tau_n)`.
///
/// Fractional lags are spread with the shared windowed-sinc kernel.
pub fn gtvv_closed_form(
    waves: &[RelativeWavefront],
    order: usize,
    max_k: usize,
    win_len: usize,
    fs: f64,
) -> Result<(GtvvMatrix, SeriesExpansion)> {
    let direct = waves
        .first()
        .ok_or_else(|| GtvvError::invalid("closed form needs the direct path"))?;
    if (direct.beta - 1.0).abs() > 1e-9 || (direct.gain - 1.0).abs() > 1e-12 || direct.delay != 0.0 {
        return Err(GtvvError::invalid(
            "direct path must have unit gain, zero delay and unit beam response",
        ));
    }
    if win_len < 2 || win_len % 2 != 0 {
        return Err(GtvvError::invalid("window length must be even"));
    }
    for (n, w) in waves.iter().enumerate().skip(1) {
        let m = (w.gain * w.beta).abs();
        if m >= 1.0 {
            return Err(GtvvError::ExpansionInvalid {
                wavefront: n,
                magnitude: m,
            });
        }
        if !(w.delay > 0.0) {
            return Err(GtvvError::invalid(format!(
                "reflection {n} must arrive after the direct path"
            )));
        }
    }
    let channels = channel_count(order);
    let half = win_len / 2;
    let y0 = sh_eval(&direct.direction, order)?.into_coeffs();
    let mut rows = vec![vec![0.0; win_len]; channels];
    for (c, row) in rows.iter_mut().enumerate() {
        row[half] = y0[c];
    }
    let mut terms = Vec::new();
    let mut truncation_budget = 0.0;
    for (n, w) in waves.iter().enumerate().skip(1) {
        let yn = sh_eval(&w.direction, order)?.into_coeffs();
        // (-g)^k (beta^k y0 - beta^(k-1) yn), written without dividing by beta
        let pattern_max = y0
            .iter()
            .zip(&yn)
            .map(|(a, b)| (w.beta * a - b).abs())
            .fold(0.0, f64::max);
        let gb = w.gain * w.beta;
        for k in 1..=max_k {
            let coefficient = (-gb).powi(k as i32);
            let lag = k as f64 * w.delay;
            let lag_samples = lag * fs;
            let placed = lag_samples <= (half - 1) as f64 + 1e-9;
            let scale = (-w.gain).powi(k as i32) * w.beta.powi(k as i32 - 1);
            if placed {
                for (c, row) in rows.iter_mut().enumerate() {
                    let amp = scale * (w.beta * y0[c] - yn[c]);
                    if amp != 0.0 {
                        fdelay::add_delayed_impulse(row, half as f64 + lag_samples, amp);
                    }
                }
            } else {
                truncation_budget += scale.abs() * pattern_max;
            }
            terms.push(SeriesTerm {
                wavefront: n,
                k,
                coefficient,
                lag,
                placed,
            });
        }
        let tail = w.gain.abs().powi(max_k as i32 + 1) * w.beta.abs().powi(max_k as i32)
            / (1.0 - gb.abs());
        truncation_budget += tail * pattern_max;
    }
    let sum_abs: f64 = waves.iter().skip(1).map(|w| (w.gain * w.beta).abs()).sum();
    let sufficient_condition = sum_abs < 1.0;
    let cross_term_budget = if sufficient_condition {
        let sum_g: f64 = waves.iter().skip(1).map(|w| w.gain.abs()).sum();
        let single: f64 = waves
            .iter()
            .skip(1)
            .map(|w| (1.0 + w.gain.abs()) / (1.0 - (w.gain * w.beta).abs()) - 1.0)
            .sum();
        ((1.0 + sum_g) / (1.0 - sum_abs) - 1.0 - single).max(0.0)
    } else {
        log::warn!("sum of |g*beta| is {sum_abs:.3} >= 1; cross terms are unbounded");
        f64::INFINITY
    };
    let data = DMatrix::from_fn(channels, win_len, |c, j| rows[c][j]);
    let gtvv = GtvvMatrix::new(data, fs)?;
    Ok((
        gtvv,
        SeriesExpansion {
            terms,
            max_k,
            cross_term_budget,
            truncation_budget,
            sufficient_condition,
        },
    ))
}
