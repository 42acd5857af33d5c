//! Shoebox scenes with exact plane-wave ground truth.
//!
//! Wavefronts come from the image-source model with one frequency-independent
//! reflection coefficient for all six walls, derived from the requested RT60
//! with Sabine's formula. Encoding places each wavefront's SH vector at its
//! time of arrival using the shared fractional-delay kernel, then convolves
//! with the dry source.

use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{GtvvError, Result};
use crate::fdelay;
use crate::par;
use crate::sh::{channel_count, fill_sh, Direction};

/// Speed of sound in m/s.
pub const SPEED_OF_SOUND: f64 = 343.0;

/// One plane wave reaching the microphone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wavefront {
    pub direction: Direction,
    /// Time of arrival in seconds.
    pub toa: f64,
    /// Linear amplitude.
    pub gain: f64,
    /// Number of wall reflections along the path.
    pub reflection_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScene {
    /// Sorted by time of arrival; index 0 is the direct path.
    pub wavefronts: Vec<Wavefront>,
    /// True exactly for the six first-order images.
    pub first_order_flags: Vec<bool>,
    pub room: [f64; 3],
    pub src: [f64; 3],
    pub mic: [f64; 3],
    pub rt60: f64,
    pub fs: f64,
    pub reflection_coefficient: f64,
    pub max_order: usize,
}

impl GroundTruthScene {
    pub fn direct(&self) -> &Wavefront {
        &self.wavefronts[0]
    }

    /// Indices of the first-order reflections.
    pub fn first_order_indices(&self) -> Vec<usize> {
        self.first_order_flags
            .iter()
            .enumerate()
            .filter_map(|(i, &f)| f.then_some(i))
            .collect()
    }

    /// Largest time of arrival.
    pub fn max_toa(&self) -> f64 {
        self.wavefronts.iter().map(|w| w.toa).fold(0.0, f64::max)
    }
}

/// Multichannel Ambisonic signal, ACN/SN3D, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbisonicSignal {
    pub fs: f64,
    pub channels: Vec<Vec<f64>>,
}

impl AmbisonicSignal {
    pub fn new(fs: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(GtvvError::invalid("sampling rate must be positive"));
        }
        let order = ((channels.len() as f64).sqrt() as usize).saturating_sub(1);
        if channels.is_empty() || channel_count(order) != channels.len() {
            return Err(GtvvError::invalid(format!(
                "{} channels is not a full Ambisonic order",
                channels.len()
            )));
        }
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(GtvvError::invalid("channels differ in length"));
        }
        Ok(AmbisonicSignal { fs, channels })
    }

    pub fn order(&self) -> usize {
        (self.channels.len() as f64).sqrt() as usize - 1
    }

    pub fn num_samples(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    /// Keeps the channels up to `order` (ACN nesting makes this a prefix).
    pub fn truncate_order(&self, order: usize) -> Result<Self> {
        if order > self.order() {
            return Err(GtvvError::invalid(format!(
                "cannot raise order {} to {order}",
                self.order()
            )));
        }
        Ok(AmbisonicSignal {
            fs: self.fs,
            channels: self.channels[..channel_count(order)].to_vec(),
        })
    }

    /// Keeps samples `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.num_samples() {
            return Err(GtvvError::invalid("slice exceeds signal length"));
        }
        Ok(AmbisonicSignal {
            fs: self.fs,
            channels: self.channels.iter().map(|c| c[start..start + len].to_vec()).collect(),
        })
    }

    /// Mean square of the omnidirectional channel.
    pub fn omni_power(&self) -> f64 {
        mean_square(&self.channels[0])
    }
}

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Uniform wall reflection coefficient (pressure) giving `rt60` under
/// Sabine's formula.
pub fn sabine_reflection_coefficient(room: [f64; 3], rt60: f64) -> Result<f64> {
    if !(rt60 > 0.0) || !rt60.is_finite() {
        return Err(GtvvError::invalid(format!("rt60 {rt60} must be positive")));
    }
    let [lx, ly, lz] = room;
    let volume = lx * ly * lz;
    let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
    let alpha = 24.0 * std::f64::consts::LN_10 * volume / (SPEED_OF_SOUND * surface * rt60);
    if alpha > 1.0 {
        return Err(GtvvError::invalid(format!(
            "rt60 {rt60} s is shorter than the anechoic limit of this room"
        )));
    }
    Ok((1.0 - alpha).sqrt())
}

fn check_geometry(room: [f64; 3], src: [f64; 3], mic: [f64; 3]) -> Result<()> {
    if room.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
        return Err(GtvvError::invalid("room dimensions must be positive"));
    }
    for (name, p) in [("source", src), ("microphone", mic)] {
        for axis in 0..3 {
            if !(p[axis] > 0.0 && p[axis] < room[axis]) {
                return Err(GtvvError::invalid(format!(
                    "{name} position {p:?} is not strictly inside the room"
                )));
            }
        }
    }
    if src == mic {
        return Err(GtvvError::invalid("source and microphone coincide"));
    }
    Ok(())
}

/// Enumerates all image sources up to `max_order` reflections.
pub fn image_source_scene(
    room: [f64; 3],
    src: [f64; 3],
    mic: [f64; 3],
    rt60: f64,
    max_order: usize,
    fs: f64,
) -> Result<GroundTruthScene> {
    check_geometry(room, src, mic)?;
    if !(fs > 0.0) {
        return Err(GtvvError::invalid("sampling rate must be positive"));
    }
    let beta = sabine_reflection_coefficient(room, rt60)?;
    let n = max_order as i64;
    let mut wavefronts = Vec::new();
    for nx in -n..=n {
        for px in 0..2i64 {
            let ox = (nx - px).unsigned_abs() + nx.unsigned_abs();
            if ox as usize > max_order {
                continue;
            }
            for ny in -n..=n {
                for py in 0..2i64 {
                    let oy = (ny - py).unsigned_abs() + ny.unsigned_abs();
                    if (ox + oy) as usize > max_order {
                        continue;
                    }
                    for nz in -n..=n {
                        for pz in 0..2i64 {
                            let oz = (nz - pz).unsigned_abs() + nz.unsigned_abs();
                            let order = (ox + oy + oz) as usize;
                            if order > max_order {
                                continue;
                            }
                            let image = [
                                (1 - 2 * px) as f64 * src[0] + 2.0 * nx as f64 * room[0],
                                (1 - 2 * py) as f64 * src[1] + 2.0 * ny as f64 * room[1],
                                (1 - 2 * pz) as f64 * src[2] + 2.0 * nz as f64 * room[2],
                            ];
                            let d = [image[0] - mic[0], image[1] - mic[1], image[2] - mic[2]];
                            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                            wavefronts.push(Wavefront {
                                direction: Direction::from_cartesian(d)?,
                                toa: dist / SPEED_OF_SOUND,
                                gain: beta.powi(order as i32) / dist,
                                reflection_order: order,
                            });
                        }
                    }
                }
            }
        }
    }
    wavefronts.sort_by(|a, b| {
        a.toa
            .total_cmp(&b.toa)
            .then(a.reflection_order.cmp(&b.reflection_order))
    });
    let first_order_flags = wavefronts.iter().map(|w| w.reflection_order == 1).collect();
    Ok(GroundTruthScene {
        wavefronts,
        first_order_flags,
        room,
        src,
        mic,
        rt60,
        fs,
        reflection_coefficient: beta,
        max_order,
    })
}

/// Multichannel impulse response of a scene: channel `c` holds
/// `sum_n gain_n Y_c(dir_n) k(t - toa_n)` with `k` the fractional-delay kernel.
pub fn scene_impulse_response(scene: &GroundTruthScene, order: usize) -> Result<Vec<Vec<f64>>> {
    if order > crate::sh::MAX_ORDER {
        return Err(GtvvError::invalid(format!("order {order} out of range")));
    }
    let channels = channel_count(order);
    let max_delay = scene.max_toa() * scene.fs;
    let len = max_delay.ceil() as usize + fdelay::tail() + 1;
    let mut rir = vec![vec![0.0; len]; channels];
    let mut y = vec![0.0; channels];
    for w in &scene.wavefronts {
        fill_sh(&w.direction, order, &mut y);
        let (start, taps) = fdelay::kernel(w.toa * scene.fs);
        for (c, row) in rir.iter_mut().enumerate() {
            let amp = w.gain * y[c];
            if amp == 0.0 {
                continue;
            }
            for (k, t) in taps.iter().enumerate() {
                let pos = start + k as isize;
                if pos >= 0 && (pos as usize) < len {
                    row[pos as usize] += amp * t;
                }
            }
        }
    }
    Ok(rir)
}

/// Renders the scene for a dry mono `source` sampled at `scene.fs`.
///
/// Output length is `source.len() + ceil(max toa * fs) + 32`.
pub fn encode_scene(
    scene: &GroundTruthScene,
    source: &[f64],
    order: usize,
) -> Result<AmbisonicSignal> {
    if source.is_empty() {
        return Err(GtvvError::invalid("source signal is empty"));
    }
    let rir = scene_impulse_response(scene, order)?;
    let out_len = source.len() + rir[0].len() - 1;
    let conv = FftConvolver::new(source, out_len);
    let channels = par::map_slice(&rir, |h| conv.convolve(h));
    AmbisonicSignal::new(scene.fs, channels)
}

/// Linear convolution of many kernels with one fixed signal.
struct FftConvolver {
    size: usize,
    out_len: usize,
    signal: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FftConvolver {
    fn new(signal: &[f64], out_len: usize) -> Self {
        let size = out_len.next_power_of_two();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(size);
        let inverse = planner.plan_fft_inverse(size);
        let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        buf.resize(size, Complex64::new(0.0, 0.0));
        forward.process(&mut buf);
        FftConvolver {
            size,
            out_len,
            signal: buf,
            forward,
            inverse,
        }
    }

    fn convolve(&self, kernel: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = kernel.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        buf.resize(self.size, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.signal) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.size as f64;
        buf[..self.out_len].iter().map(|c| c.re * scale).collect()
    }
}

/// Adds white Gaussian noise of equal variance to every channel so that
/// omni signal power over per-channel noise power is `10^(snr_db/10)`.
/// `snr_db = +inf` returns the input unchanged.
pub fn add_noise(sig: &AmbisonicSignal, snr_db: f64, seed: u64) -> Result<AmbisonicSignal> {
    if snr_db.is_nan() {
        return Err(GtvvError::invalid("SNR is NaN"));
    }
    let power = sig.omni_power();
    if !(power > 0.0) {
        return Err(GtvvError::invalid("cannot set an SNR on an all-zero signal"));
    }
    if snr_db == f64::INFINITY {
        return Ok(sig.clone());
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| GtvvError::invalid(e.to_string()))?;
    let indices: Vec<usize> = (0..sig.channels.len()).collect();
    let channels = par::map_slice(&indices, |&c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        sig.channels[c].iter().map(|x| x + normal.sample(&mut rng)).collect()
    });
    AmbisonicSignal::new(sig.fs, channels)
}

/// Speech-like test source: Gaussian bursts of 0.2-0.5 s with random level
/// and spectral tilt, separated by exact silences of 0.05-0.2 s.
pub fn make_burst_source(duration: f64, fs: f64, seed: u64) -> Vec<f64> {
    let n = (duration * fs).round().max(0.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; n];
    let mut envelope = vec![0.0; n];
    let ramp = ((0.005 * fs).round() as usize).max(1);
    let mut pos = 0usize;
    while pos < n {
        let gap = (rng.random_range(0.05..0.2) * fs).round() as usize;
        pos += gap;
        if pos >= n {
            break;
        }
        let len = ((rng.random_range(0.2..0.5) * fs).round() as usize).min(n - pos);
        let level = 10f64.powf(rng.random_range(-12.0..0.0) / 20.0);
        let pole: f64 = rng.random_range(-0.5..0.9);
        let gain = (1.0 - pole * pole).sqrt();
        let mut state = 0.0;
        for i in 0..len {
            let white: f64 = rng.sample(rand_distr::StandardNormal);
            state = pole * state + gain * white;
            let edge = i.min(len - 1 - i);
            let shape = if edge < ramp {
                0.5 - 0.5 * (std::f64::consts::PI * (edge as f64 + 0.5) / ramp as f64).cos()
            } else {
                1.0
            };
            envelope[pos + i] = level * shape;
            out[pos + i] = level * shape * state;
        }
        pos += len;
    }
    let env_sum: f64 = envelope.iter().sum();
    if env_sum > 0.0 {
        let mean = out.iter().sum::<f64>() / env_sum;
        for (x, e) in out.iter_mut().zip(&envelope) {
            *x -= mean * e;
        }
    }
    out
}

/// RT60 implied by the energy decay of the scene's image sources.
///
/// Arrival energies are summed in 5 ms bins over the interval where every
/// image up to `scene.max_order` reflections is present, and the dB slope of
/// a least-squares line through the bins is extrapolated to -60 dB.
pub fn energy_decay_rt60(scene: &GroundTruthScene) -> Option<f64> {
    let inv: f64 = scene.room.iter().map(|l| 1.0 / (l * l)).sum::<f64>().sqrt();
    let complete = 0.8 * scene.max_order as f64 / inv / SPEED_OF_SOUND;
    let start = scene.direct().toa + 0.25 * complete;
    let bin = 0.005;
    let nbins = ((complete - start) / bin).floor() as usize;
    if nbins < 4 {
        return None;
    }
    let mut energy = vec![0.0; nbins];
    for w in &scene.wavefronts {
        if w.toa >= start {
            let b = ((w.toa - start) / bin) as usize;
            if b < nbins {
                energy[b] += w.gain * w.gain;
            }
        }
    }
    let pts: Vec<(f64, f64)> = energy
        .iter()
        .enumerate()
        .filter(|(_, e)| **e > 0.0)
        .map(|(i, e)| (start + (i as f64 + 0.5) * bin, 10.0 * e.log10()))
        .collect();
    if pts.len() < 4 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let me = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - me)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let slope = cov / var;
    (slope < 0.0).then(|| -60.0 / slope)
}
