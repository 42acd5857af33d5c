//! STFT analysis and the GFVV to GTVV inverse transform.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{GtvvError, Result};
use crate::par;
use crate::room::AmbisonicSignal;

/// Imaginary residue (relative to the channel peak) tolerated by
/// [`gfvv_to_gtvv`] before the spectrum is declared inconsistent.
pub const IMAG_TOLERANCE: f64 = 1e-8;

/// Periodic Hamming window of length `n`.
pub fn hamming(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// One-sided STFT of every Ambisonic channel.
///
/// Storage is frame-major: `data[(u * bins + f) * channels + c]`, so the
/// observation vector `b(u, f)` is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTensor {
    frames: usize,
    bins: usize,
    channels: usize,
    data: Vec<Complex64>,
    fs: f64,
    win_len: usize,
    hop: usize,
}

impl SpectrumTensor {
    /// Wraps precomputed coefficients laid out as described on the type.
    pub fn from_raw(
        frames: usize,
        win_len: usize,
        channels: usize,
        data: Vec<Complex64>,
        fs: f64,
        hop: usize,
    ) -> Result<Self> {
        let bins = win_len / 2 + 1;
        if data.len() != frames * bins * channels {
            return Err(GtvvError::invalid("spectrum data has the wrong length"));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(GtvvError::invalid("spectrum contains non-finite values"));
        }
        Ok(SpectrumTensor {
            frames,
            bins,
            channels,
            data,
            fs,
            win_len,
            hop,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn order(&self) -> usize {
        (self.channels as f64).sqrt() as usize - 1
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn win_len(&self) -> usize {
        self.win_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn get(&self, frame: usize, bin: usize, channel: usize) -> Complex64 {
        self.data[(frame * self.bins + bin) * self.channels + channel]
    }

    /// Observation vector `b(u, f)` across channels.
    pub fn observation(&self, frame: usize, bin: usize) -> &[Complex64] {
        let start = (frame * self.bins + bin) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// All bins of one frame, `bins * channels` values.
    pub fn frame(&self, frame: usize) -> &[Complex64] {
        let n = self.bins * self.channels;
        &self.data[frame * n..(frame + 1) * n]
    }

    /// Sub-tensor with frames `start..start + count`.
    pub fn frame_range(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.frames {
            return Err(GtvvError::invalid("frame range exceeds the spectrum"));
        }
        let n = self.bins * self.channels;
        Ok(SpectrumTensor {
            frames: count,
            data: self.data[start * n..(start + count) * n].to_vec(),
            ..*self
        })
    }

    /// Keeps the channels of the leading `order` harmonics.
    pub fn truncate_order(&self, order: usize) -> Result<Self> {
        let channels = crate::sh::channel_count(order);
        if channels > self.channels {
            return Err(GtvvError::invalid("cannot raise the spectrum order"));
        }
        let mut data = Vec::with_capacity(self.frames * self.bins * channels);
        for obs in self.data.chunks_exact(self.channels) {
            data.extend_from_slice(&obs[..channels]);
        }
        Ok(SpectrumTensor {
            channels,
            data,
            ..*self
        })
    }
}

/// Hamming-windowed STFT; frame `u` starts at sample `u * hop`.
pub fn stft(sig: &AmbisonicSignal, win_len: usize, hop: usize) -> Result<SpectrumTensor> {
    if win_len < 2 || !win_len.is_power_of_two() {
        return Err(GtvvError::invalid(format!("window length {win_len} is not a power of two")));
    }
    if hop == 0 || win_len % hop != 0 {
        return Err(GtvvError::invalid(format!("hop {hop} does not divide {win_len}")));
    }
    let n = sig.num_samples();
    if n < win_len {
        return Err(GtvvError::invalid(format!(
            "signal of {n} samples is shorter than one {win_len}-sample window"
        )));
    }
    let frames = (n - win_len) / hop + 1;
    let bins = win_len / 2 + 1;
    let channels = sig.channels.len();
    let window = hamming(win_len);
    let fft = FftPlanner::new().plan_fft_forward(win_len);
    let per_frame = par::map_range(frames, |u| {
        let mut out = vec![Complex64::new(0.0, 0.0); bins * channels];
        let mut buf = vec![Complex64::new(0.0, 0.0); win_len];
        let start = u * hop;
        for (c, ch) in sig.channels.iter().enumerate() {
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex64::new(ch[start + i] * window[i], 0.0);
            }
            fft.process(&mut buf);
            for f in 0..bins {
                out[f * channels + c] = buf[f];
            }
        }
        out
    });
    let data = per_frame.concat();
    SpectrumTensor::from_raw(frames, win_len, channels, data, sig.fs, hop)
}

/// Time-domain velocity vector: `(L+1)^2 x T`, column `j` at lag
/// `(j - T/2) / fs` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct GtvvMatrix {
    data: DMatrix<f64>,
    time_axis: Vec<f64>,
    fs: f64,
}

impl GtvvMatrix {
    /// Wraps a `channels x T` matrix with the standard lag axis.
    pub fn new(data: DMatrix<f64>, fs: f64) -> Result<Self> {
        let t = data.ncols();
        if t % 2 != 0 {
            return Err(GtvvError::invalid("GTVV length must be even"));
        }
        if !(fs > 0.0) {
            return Err(GtvvError::invalid("sampling rate must be positive"));
        }
        let half = (t / 2) as f64;
        let time_axis = (0..t).map(|j| (j as f64 - half) / fs).collect();
        Ok(GtvvMatrix { data, time_axis, fs })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn time_axis(&self) -> &[f64] {
        &self.time_axis
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn order(&self) -> usize {
        (self.channels() as f64).sqrt() as usize - 1
    }

    /// Window length `T`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Column holding `t = 0`.
    pub fn zero_column(&self) -> usize {
        self.len() / 2
    }

    /// Column whose lag is closest to `t` seconds, if inside the window.
    pub fn column_at(&self, t: f64) -> Option<usize> {
        let j = (t * self.fs).round() + self.zero_column() as f64;
        (j >= 0.0 && (j as usize) < self.len()).then_some(j as usize)
    }

    /// Energy at negative lags over total energy.
    pub fn negative_lag_energy_fraction(&self) -> f64 {
        let total = self.data.norm_squared();
        if total == 0.0 {
            return 0.0;
        }
        let neg: f64 = (0..self.zero_column())
            .map(|j| self.data.column(j).norm_squared())
            .sum();
        neg / total
    }

    /// `||v(t < 0)|| / ||v(t >= 0)||` in Frobenius norm.
    pub fn causality_ratio(&self) -> f64 {
        let z = self.zero_column();
        let neg: f64 = (0..z).map(|j| self.data.column(j).norm_squared()).sum();
        let pos: f64 = (z..self.len()).map(|j| self.data.column(j).norm_squared()).sum();
        (neg / pos).sqrt()
    }
}

/// Inverse transform of a one-sided GFVV (`channels x (T/2 + 1)`) to the
/// GTVV on lags `-T/2 .. T/2 - 1`.
pub fn gfvv_to_gtvv(v_f: &DMatrix<Complex64>, win_len: usize, fs: f64) -> Result<GtvvMatrix> {
    if win_len < 2 || win_len % 2 != 0 {
        return Err(GtvvError::invalid("window length must be even"));
    }
    let bins = win_len / 2 + 1;
    if v_f.ncols() != bins {
        return Err(GtvvError::invalid(format!(
            "GFVV has {} bins, expected {bins}",
            v_f.ncols()
        )));
    }
    if v_f.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(GtvvError::invalid("GFVV contains non-finite values"));
    }
    let channels = v_f.nrows();
    let ifft = FftPlanner::new().plan_fft_inverse(win_len);
    let half = win_len / 2;
    let rows = par::map_range(channels, |c| {
        let mut buf = vec![Complex64::new(0.0, 0.0); win_len];
        for k in 0..bins {
            buf[k] = v_f[(c, k)];
        }
        for k in 1..half {
            buf[win_len - k] = v_f[(c, k)].conj();
        }
        ifft.process(&mut buf);
        let scale = 1.0 / win_len as f64;
        let peak = buf.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let imag = buf.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let residue = if peak > 0.0 { imag / peak } else { 0.0 };
        if residue > IMAG_TOLERANCE {
            return Err(GtvvError::InconsistentSpectrum { channel: c, residue });
        }
        // circular shift: lag 0 lands in column T/2
        let row: Vec<f64> = (0..win_len)
            .map(|j| buf[(j + win_len - half) % win_len].re * scale)
            .collect();
        Ok(row)
    });
    let mut data = DMatrix::zeros(channels, win_len);
    for (c, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.into_iter().enumerate() {
            data[(c, j)] = v;
        }
    }
    GtvvMatrix::new(data, fs)
}
