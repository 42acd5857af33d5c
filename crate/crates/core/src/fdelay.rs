//! Windowed-sinc fractional delay.
//!
//! A delay of `d` samples is realized by 64 taps of a Hann-windowed sinc
//! centered on `d`, covering positions `floor(d) - 31 ..= floor(d) + 32`.
//! Integer delays reduce to a single unit tap.

use std::f64::consts::PI;

pub const KERNEL_TAPS: usize = 64;
const HALF: isize = (KERNEL_TAPS / 2) as isize;

/// Kernel for a delay of `delay` samples: returns the absolute position of
/// the first tap and the tap values.
pub fn kernel(delay: f64) -> (isize, [f64; KERNEL_TAPS]) {
    let base = delay.floor();
    let frac = delay - base;
    let start = base as isize - (HALF - 1);
    let mut taps = [0.0; KERNEL_TAPS];
    if frac == 0.0 {
        taps[(HALF - 1) as usize] = 1.0;
        return (start, taps);
    }
    for (i, tap) in taps.iter_mut().enumerate() {
        let x = (i as isize - (HALF - 1)) as f64 - frac;
        *tap = sinc(x) * hann(x / HALF as f64);
    }
    (start, taps)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn hann(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * x).cos())
    }
}

/// Adds `amplitude` delayed by `delay` samples into `buf`. Taps outside
/// the buffer are dropped.
pub fn add_delayed_impulse(buf: &mut [f64], delay: f64, amplitude: f64) {
    let (start, taps) = kernel(delay);
    for (i, tap) in taps.iter().enumerate() {
        let pos = start + i as isize;
        if pos >= 0 && (pos as usize) < buf.len() {
            buf[pos as usize] += amplitude * tap;
        }
    }
}

/// Number of samples past `floor(delay)` touched by the kernel.
pub const fn tail() -> usize {
    HALF as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_delay_is_a_unit_tap() {
        let mut buf = vec![0.0; 100];
        add_delayed_impulse(&mut buf, 32.0, 2.5);
        for (i, v) in buf.iter().enumerate() {
            assert_eq!(*v, if i == 32 { 2.5 } else { 0.0 });
        }
    }

    #[test]
    fn half_sample_delay_is_symmetric_and_sums_near_one() {
        let (start, taps) = kernel(40.5);
        assert_eq!(start, 40 - 31);
        for i in 0..KERNEL_TAPS / 2 {
            assert!((taps[i] - taps[KERNEL_TAPS - 1 - i]).abs() < 1e-14);
        }
        let dc: f64 = taps.iter().sum();
        assert!((dc - 1.0).abs() < 1e-2, "dc gain {dc}");
    }

    #[test]
    fn fractional_delay_of_low_frequency_tone() {
        // A slow cosine delayed by 10.3 samples should match the analytic
        // shifted cosine to better than -60 dB.
        let n = 512;
        let f = 0.02;
        let delay = 10.3;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64).cos()).collect();
        let mut y = vec![0.0; n + 80];
        for (i, &xi) in x.iter().enumerate() {
            let (start, taps) = kernel(delay);
            for (k, t) in taps.iter().enumerate() {
                let pos = start + k as isize + i as isize;
                if pos >= 0 && (pos as usize) < y.len() {
                    y[pos as usize] += xi * t;
                }
            }
        }
        let mut err: f64 = 0.0;
        for i in 100..400 {
            let expect = (2.0 * PI * f * (i as f64 - delay)).cos();
            err = err.max((y[i] - expect).abs());
        }
        assert!(err < 1e-3, "max error {err}");
    }
}
