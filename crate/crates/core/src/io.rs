//! File formats: WAV audio, GTVV trace CSV, scene JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GtvvError, Result};
use crate::room::{AmbisonicSignal, GroundTruthScene, Wavefront};
use crate::sh::Direction;
use crate::spectral::GtvvMatrix;

fn sample_rate(fs: f64) -> Result<u32> {
    if fs > 0.0 && fs.fract() == 0.0 && fs <= u32::MAX as f64 {
        Ok(fs as u32)
    } else {
        Err(GtvvError::invalid(format!("sampling rate {fs} is not a positive integer")))
    }
}

/// Writes a multichannel 32-bit float WAV, one WAV channel per Ambisonic
/// channel in ACN order.
pub fn write_wav(path: &Path, sig: &AmbisonicSignal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: sig.channels.len() as u16,
        sample_rate: sample_rate(sig.fs)?,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for i in 0..sig.num_samples() {
        for ch in &sig.channels {
            w.write_sample(ch[i] as f32)?;
        }
    }
    w.finalize()?;
    Ok(())
}

/// Reads every channel of a WAV file as `f64` in `[-1, 1]` for integer
/// formats. Returns the channels and the sampling rate.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, f64)> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    let n = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => r
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (hound::SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            r.samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
        (fmt, bits) => {
            return Err(GtvvError::Config(format!(
                "{}: unsupported WAV format {fmt:?}/{bits} bit",
                path.display()
            )))
        }
    };
    let mut channels = vec![Vec::with_capacity(interleaved.len() / n.max(1)); n];
    for (i, s) in interleaved.into_iter().enumerate() {
        channels[i % n].push(s);
    }
    Ok((channels, spec.sample_rate as f64))
}

/// Reads a mono source signal.
pub fn read_mono_wav(path: &Path) -> Result<(Vec<f64>, f64)> {
    let (mut channels, fs) = read_wav(path)?;
    if channels.len() != 1 {
        return Err(GtvvError::Config(format!(
            "{}: expected a mono file, found {} channels",
            path.display(),
            channels.len()
        )));
    }
    Ok((channels.remove(0), fs))
}

pub fn read_ambisonic_wav(path: &Path) -> Result<AmbisonicSignal> {
    let (channels, fs) = read_wav(path)?;
    AmbisonicSignal::new(fs, channels)
}

/// CSV of `|v(t)|`: lag in seconds, one column per channel, then the
/// 2-norm of each column.
pub fn write_trace_csv<W: Write>(v: &GtvvMatrix, mut out: W) -> std::io::Result<()> {
    write!(out, "time_s")?;
    for c in 0..v.channels() {
        write!(out, ",ch{c}")?;
    }
    writeln!(out, ",norm")?;
    for (j, t) in v.time_axis().iter().enumerate() {
        write!(out, "{t}")?;
        let col = v.data().column(j);
        for x in col.iter() {
            write!(out, ",{}", x.abs())?;
        }
        writeln!(out, ",{}", col.norm())?;
    }
    Ok(())
}

pub fn dump_traces(v: &GtvvMatrix, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_trace_csv(v, &mut out)?;
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavefrontJson {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub toa: f64,
    pub gain: f64,
    pub reflection_order: usize,
    pub first_order: bool,
}

/// Scene ground truth with directions in degrees, times in seconds and
/// linear gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneJson {
    pub room: [f64; 3],
    pub src: [f64; 3],
    pub mic: [f64; 3],
    pub rt60: f64,
    pub fs: f64,
    pub reflection_coefficient: f64,
    pub max_order: usize,
    pub wavefronts: Vec<WavefrontJson>,
}

impl From<&GroundTruthScene> for SceneJson {
    fn from(s: &GroundTruthScene) -> Self {
        SceneJson {
            room: s.room,
            src: s.src,
            mic: s.mic,
            rt60: s.rt60,
            fs: s.fs,
            reflection_coefficient: s.reflection_coefficient,
            max_order: s.max_order,
            wavefronts: s
                .wavefronts
                .iter()
                .zip(&s.first_order_flags)
                .map(|(w, &first_order)| WavefrontJson {
                    azimuth_deg: w.direction.azimuth_deg(),
                    elevation_deg: w.direction.elevation_deg(),
                    toa: w.toa,
                    gain: w.gain,
                    reflection_order: w.reflection_order,
                    first_order,
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneJson> for GroundTruthScene {
    type Error = GtvvError;

    fn try_from(s: SceneJson) -> Result<Self> {
        if s.wavefronts.is_empty() {
            return Err(GtvvError::Config("scene has no wavefronts".into()));
        }
        let mut wavefronts = Vec::with_capacity(s.wavefronts.len());
        let mut flags = Vec::with_capacity(s.wavefronts.len());
        for w in &s.wavefronts {
            let direction = Direction::try_new(w.azimuth_deg.to_radians(), w.elevation_deg.to_radians())
                .map_err(|e| GtvvError::Config(format!("scene wavefront: {e}")))?;
            wavefronts.push(Wavefront {
                direction,
                toa: w.toa,
                gain: w.gain,
                reflection_order: w.reflection_order,
            });
            flags.push(w.first_order);
        }
        Ok(GroundTruthScene {
            wavefronts,
            first_order_flags: flags,
            room: s.room,
            src: s.src,
            mic: s.mic,
            rt60: s.rt60,
            fs: s.fs,
            reflection_coefficient: s.reflection_coefficient,
            max_order: s.max_order,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

pub fn write_scene(path: &Path, scene: &GroundTruthScene) -> Result<()> {
    write_json(path, &SceneJson::from(scene))
}

pub fn read_scene(path: &Path) -> Result<GroundTruthScene> {
    let text = std::fs::read_to_string(path)?;
    let json: SceneJson = serde_json::from_str(&text)?;
    json.try_into()
}
