//! Comparison methods: the omni-referenced GTVV (H-TDVV) and a plain
//! steered-response-power direction map.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{GtvvError, Result};
use crate::par;
use crate::sh::{make_omni_beam, make_reference_beam, Dictionary, Direction};
use crate::spectral::{GtvvMatrix, SpectrumTensor};
use crate::velocity::{estimate_gtvv, EstimatorParams};

/// GTVV with the omnidirectional channel as reference.
pub fn h_tdvv(spec: &SpectrumTensor, params: &EstimatorParams) -> Result<GtvvMatrix> {
    let cfg = params.with_reference(make_omni_beam(spec.order())?);
    estimate_gtvv(spec, &cfg)
}

/// GTVV with the reference beam steered at `doa`.
pub fn steered_gtvv(spec: &SpectrumTensor, params: &EstimatorParams, doa: &Direction) -> Result<GtvvMatrix> {
    let cfg = params.with_reference(make_reference_beam(doa, spec.order())?);
    estimate_gtvv(spec, &cfg)
}

/// Steered response power per dictionary direction.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMap {
    pub directions: Vec<Direction>,
    pub values: Vec<f64>,
}

impl PowerMap {
    /// Index of the largest value; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = j;
            }
        }
        best
    }

    pub fn peak_direction(&self) -> Direction {
        self.directions[self.argmax()]
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "direction_deg_az,direction_deg_el,power")?;
        for (d, p) in self.directions.iter().zip(&self.values) {
            writeln!(out, "{},{},{}", d.azimuth_deg(), d.elevation_deg(), p)?;
        }
        Ok(())
    }
}

/// `P_j = sum_u y_j^T C_u y_j / tr(C_u)` with `C_u = sum_f b(u,f) b(u,f)^H`.
/// Silent frames are skipped. No PHAT weighting.
pub fn srp_map(spec: &SpectrumTensor, dict: &Dictionary) -> Result<PowerMap> {
    if spec.frames() == 0 {
        return Err(GtvvError::invalid("spectrum has no frames"));
    }
    if dict.order() != spec.order() {
        return Err(GtvvError::invalid(format!(
            "dictionary order {} does not match spectrum order {}",
            dict.order(),
            spec.order()
        )));
    }
    let channels = spec.channels();
    // only the real part matters for real steering vectors
    let per_frame = par::map_range(spec.frames(), |u| {
        let mut c = DMatrix::<f64>::zeros(channels, channels);
        for f in 0..spec.bins() {
            let b = spec.observation(u, f);
            for i in 0..channels {
                for j in i..channels {
                    let v = (b[i] * b[j].conj()).re;
                    c[(i, j)] += v;
                }
            }
        }
        let trace = c.trace();
        if trace > 0.0 {
            c /= trace;
            c.fill_lower_triangle_with_upper_triangle();
            Some(c)
        } else {
            None
        }
    });
    let mut cov = DMatrix::<f64>::zeros(channels, channels);
    let mut used = 0;
    for c in per_frame.into_iter().flatten() {
        cov += c;
        used += 1;
    }
    if used == 0 {
        return Err(GtvvError::SilentFrame { frame: 0 });
    }
    let atoms = dict.atoms();
    let values = par::map_range(dict.len(), |j| {
        let y = atoms.column(j);
        (y.transpose() * &cov * y)[(0, 0)].max(0.0)
    });
    Ok(PowerMap {
        directions: dict.directions().to_vec(),
        values,
    })
}
