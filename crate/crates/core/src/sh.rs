//! Real spherical harmonics (SN3D normalization, ACN channel order),
//! direction grids and reference beamformer weights.
//!
//! With SN3D the order-0 harmonic is identically 1 and each order carries
//! unit total energy: `sum_m Y_lm(dir)^2 = 1` for every direction. Channel
//! `l*l + l + m` holds degree `m` of order `l`, so order 1 reads `[W, Y, Z, X]`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GtvvError, Result};

/// Highest supported Ambisonic order.
pub const MAX_ORDER: usize = 8;

/// Minimum great-circle separation between two dictionary directions.
pub const MIN_ATOM_SEPARATION: f64 = 0.1 * PI / 180.0;

/// Number of Ambisonic channels up to `order`.
pub const fn channel_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// ACN index of order `l`, degree `m`.
pub const fn acn(l: usize, m: isize) -> usize {
    ((l * l + l) as isize + m) as usize
}

/// A direction on the unit sphere, stored as azimuth in (-pi, pi] and
/// elevation in [-pi/2, pi/2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    azimuth: f64,
    elevation: f64,
}

impl Direction {
    /// Builds a direction, folding the angles into their canonical ranges.
    ///
    /// Panics on non-finite input; use [`Direction::try_new`] for untrusted
    /// values.
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self::try_new(azimuth, elevation).expect("direction angles must be finite")
    }

    pub fn try_new(azimuth: f64, elevation: f64) -> Result<Self> {
        if !azimuth.is_finite() || !elevation.is_finite() {
            return Err(GtvvError::invalid(format!(
                "non-finite direction ({azimuth}, {elevation})"
            )));
        }
        let mut az = azimuth;
        let mut el = wrap_pi(elevation);
        if el > PI / 2.0 {
            el = PI - el;
            az += PI;
        } else if el < -PI / 2.0 {
            el = -PI - el;
            az += PI;
        }
        Ok(Direction {
            azimuth: wrap_pi(az),
            elevation: el,
        })
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians())
    }

    /// Direction of a (not necessarily unit) Cartesian vector.
    pub fn from_cartesian(v: [f64; 3]) -> Result<Self> {
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(GtvvError::invalid("zero or non-finite direction vector"));
        }
        let el = (v[2] / norm).clamp(-1.0, 1.0).asin();
        let az = v[1].atan2(v[0]);
        Self::try_new(az, el)
    }

    pub fn azimuth(&self) -> f64 {
        self.azimuth
    }

    pub fn elevation(&self) -> f64 {
        self.elevation
    }

    pub fn azimuth_deg(&self) -> f64 {
        self.azimuth.to_degrees()
    }

    pub fn elevation_deg(&self) -> f64 {
        self.elevation.to_degrees()
    }

    /// Unit vector `[x, y, z]` (x forward, y left, z up).
    pub fn to_cartesian(&self) -> [f64; 3] {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [ce * ca, ce * sa, se]
    }
}

fn wrap_pi(x: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = x % two_pi;
    if r > PI {
        r -= two_pi;
    } else if r <= -PI {
        r += two_pi;
    }
    r
}

/// Great-circle distance in radians.
pub fn angular_distance(a: &Direction, b: &Direction) -> f64 {
    let u = a.to_cartesian();
    let v = b.to_cartesian();
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    let cross = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    sin.atan2(dot)
}

/// Real SH coefficients of one direction, ACN/SN3D.
#[derive(Debug, Clone, PartialEq)]
pub struct ShVector {
    order: usize,
    coeffs: Vec<f64>,
}

impl ShVector {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.coeffs.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_ORDER {
        return Err(GtvvError::invalid(format!(
            "Ambisonic order {order} outside [0, {MAX_ORDER}]"
        )));
    }
    Ok(())
}

/// Evaluates all real SN3D harmonics up to `order` at `dir`.
pub fn sh_eval(dir: &Direction, order: usize) -> Result<ShVector> {
    check_order(order)?;
    let mut coeffs = vec![0.0; channel_count(order)];
    fill_sh(dir, order, &mut coeffs);
    Ok(ShVector { order, coeffs })
}

/// Writes the harmonics into `out` (length `channel_count(order)`).
pub(crate) fn fill_sh(dir: &Direction, order: usize, out: &mut [f64]) {
    let x = dir.elevation.sin();
    let c = dir.elevation.cos();
    // Associated Legendre values without the Condon-Shortley phase, by
    // the standard three-term recurrence in l for each fixed m.
    let n = order + 1;
    let mut p = vec![0.0; n * n];
    let idx = |l: usize, m: usize| l * n + m;
    let mut pmm = 1.0;
    for m in 0..=order {
        if m > 0 {
            pmm *= (2 * m - 1) as f64 * c;
        }
        p[idx(m, m)] = pmm;
        if m < order {
            p[idx(m + 1, m)] = x * (2 * m + 1) as f64 * pmm;
        }
        for l in (m + 2)..=order {
            p[idx(l, m)] = ((2 * l - 1) as f64 * x * p[idx(l - 1, m)]
                - (l + m - 1) as f64 * p[idx(l - 2, m)])
                / (l - m) as f64;
        }
    }
    for l in 0..=order {
        for m in 0..=l {
            // (l-m)!/(l+m)! as a running product.
            let ratio: f64 = ((l - m + 1)..=(l + m)).map(|k| 1.0 / k as f64).product();
            let norm = if m == 0 { 1.0 } else { (2.0 * ratio).sqrt() };
            let base = norm * p[idx(l, m)];
            if m == 0 {
                out[l * l + l] = base;
            } else {
                let (s, co) = (m as f64 * dir.azimuth).sin_cos();
                out[l * l + l + m] = base * co;
                out[l * l + l - m] = base * s;
            }
        }
    }
}

/// Frequency-independent spatial filter applied to the Ambisonic channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamWeights {
    order: usize,
    weights: Vec<f64>,
}

impl BeamWeights {
    pub fn new(order: usize, weights: Vec<f64>) -> Result<Self> {
        check_order(order)?;
        if weights.len() != channel_count(order) {
            return Err(GtvvError::invalid(format!(
                "{} beam weights for order {order}",
                weights.len()
            )));
        }
        Ok(BeamWeights { order, weights })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Beam response `w^T y` for a harmonic vector.
    pub fn response(&self, y: &[f64]) -> f64 {
        self.weights.iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// Index of the only nonzero weight when the beam selects one channel.
    pub fn selected_channel(&self) -> Option<usize> {
        let mut found = None;
        for (i, &w) in self.weights.iter().enumerate() {
            if w != 0.0 {
                if w != 1.0 || found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }
}

/// Beam `y(dir) / |y(dir)|^2`: matched to `dir` with unit response there.
pub fn make_reference_beam(dir: &Direction, order: usize) -> Result<BeamWeights> {
    let y = sh_eval(dir, order)?;
    let energy = y.norm_sqr();
    let weights = y.coeffs.iter().map(|c| c / energy).collect();
    Ok(BeamWeights { order, weights })
}

/// Omnidirectional reference: selects the W channel.
pub fn make_omni_beam(order: usize) -> Result<BeamWeights> {
    check_order(order)?;
    let mut weights = vec![0.0; channel_count(order)];
    weights[0] = 1.0;
    Ok(BeamWeights { order, weights })
}

/// How dictionary directions are generated.
#[derive(Debug, Clone, PartialEq)]
pub enum GridScheme {
    /// Golden-angle spiral, deterministic for any count.
    Fibonacci,
    /// Direction-list file, one `azimuth_rad elevation_rad` pair per line.
    File(PathBuf),
}

/// SH dictionary: one atom (column) per sampled direction.
#[derive(Debug, Clone)]
pub struct Dictionary {
    order: usize,
    directions: Vec<Direction>,
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Builds a dictionary from explicit directions. Rejects pairs closer
    /// than [`MIN_ATOM_SEPARATION`].
    pub fn from_directions(directions: Vec<Direction>, order: usize) -> Result<Self> {
        check_order(order)?;
        if directions.is_empty() {
            return Err(GtvvError::invalid("dictionary needs at least one direction"));
        }
        let cart: Vec<[f64; 3]> = directions.iter().map(Direction::to_cartesian).collect();
        let cos_min = MIN_ATOM_SEPARATION.cos();
        for i in 0..cart.len() {
            for j in (i + 1)..cart.len() {
                let d = cart[i][0] * cart[j][0] + cart[i][1] * cart[j][1] + cart[i][2] * cart[j][2];
                if d > cos_min {
                    return Err(GtvvError::invalid(format!(
                        "dictionary directions {i} and {j} are closer than 0.1 degrees"
                    )));
                }
            }
        }
        let channels = channel_count(order);
        let mut atoms = DMatrix::zeros(channels, directions.len());
        for (j, dir) in directions.iter().enumerate() {
            let mut col = atoms.column_mut(j);
            fill_sh(dir, order, col.as_mut_slice());
        }
        Ok(Dictionary {
            order,
            directions,
            atoms,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    /// `(L+1)^2 x Y` atom matrix.
    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        let c = self.atoms.nrows();
        &self.atoms.as_slice()[j * c..(j + 1) * c]
    }

    /// Index of the atom closest to `dir` (lowest index on ties).
    pub fn nearest(&self, dir: &Direction) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (j, d) in self.directions.iter().enumerate() {
            let dist = angular_distance(d, dir);
            if dist < best_d {
                best_d = dist;
                best = j;
            }
        }
        best
    }

    /// Same directions, harmonics truncated to a lower order.
    pub fn with_order(&self, order: usize) -> Result<Self> {
        check_order(order)?;
        let channels = channel_count(order);
        let mut atoms = DMatrix::zeros(channels, self.len());
        for (j, dir) in self.directions.iter().enumerate() {
            let mut col = atoms.column_mut(j);
            fill_sh(dir, order, col.as_mut_slice());
        }
        Ok(Dictionary {
            order,
            directions: self.directions.clone(),
            atoms,
        })
    }
}

/// Golden-angle spiral with `count` points.
pub fn fibonacci_directions(count: usize) -> Vec<Direction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            Direction::new(i as f64 * golden, z.asin())
        })
        .collect()
}

/// Parses a direction list: `azimuth_rad elevation_rad` per line, `#`
/// starts a comment, blank lines are skipped.
pub fn parse_direction_list(text: &str, origin: &Path) -> Result<Vec<Direction>> {
    let bad = |line: usize, reason: &str| GtvvError::DirectionFile {
        path: origin.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(bad(i + 1, "expected two fields"));
        }
        let az: f64 = fields[0].parse().map_err(|_| bad(i + 1, "azimuth is not a number"))?;
        let el: f64 = fields[1].parse().map_err(|_| bad(i + 1, "elevation is not a number"))?;
        let dir = Direction::try_new(az, el).map_err(|_| bad(i + 1, "non-finite angle"))?;
        out.push(dir);
    }
    Ok(out)
}

pub fn read_direction_file(path: &Path) -> Result<Vec<Direction>> {
    let text = std::fs::read_to_string(path).map_err(|e| GtvvError::DirectionFile {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    parse_direction_list(&text, path)
}

/// Builds a dictionary of `count` atoms. For [`GridScheme::File`] the file
/// must hold exactly `count` directions.
pub fn build_dictionary(count: usize, order: usize, scheme: &GridScheme) -> Result<Dictionary> {
    check_order(order)?;
    if count < channel_count(order) {
        return Err(GtvvError::invalid(format!(
            "dictionary of {count} atoms is smaller than the {} channels of order {order}",
            channel_count(order)
        )));
    }
    let directions = match scheme {
        GridScheme::Fibonacci => fibonacci_directions(count),
        GridScheme::File(path) => {
            let dirs = read_direction_file(path)?;
            if dirs.len() != count {
                return Err(GtvvError::DirectionFile {
                    path: path.clone(),
                    reason: format!("expected {count} directions, found {}", dirs.len()),
                });
            }
            dirs
        }
    };
    Dictionary::from_directions(directions, order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Independent oracle: P_l^m(x) = (1-x^2)^{m/2} d^m/dx^m P_l(x) with the
    // Legendre polynomial expanded explicitly.
    fn legendre_poly(l: usize) -> Vec<f64> {
        let binom = |n: usize, k: usize| -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        };
        let mut coeffs = vec![0.0; l + 1];
        for k in 0..=l / 2 {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[l - 2 * k] += sign * binom(l, k) * binom(2 * l - 2 * k, l) / 2f64.powi(l as i32);
        }
        coeffs
    }

    fn oracle_assoc(l: usize, m: usize, x: f64) -> f64 {
        let mut poly = legendre_poly(l);
        for _ in 0..m {
            poly = poly.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect();
        }
        let val: f64 = poly.iter().enumerate().map(|(i, c)| c * x.powi(i as i32)).sum();
        (1.0 - x * x).powf(m as f64 / 2.0) * val
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    fn oracle_sh(az: f64, el: f64, order: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for l in 0..=order {
            for m in -(l as isize)..=(l as isize) {
                let am = m.unsigned_abs();
                let delta = if am == 0 { 1.0 } else { 0.0 };
                let n = ((2.0 - delta) * factorial(l - am) / factorial(l + am)).sqrt();
                let p = oracle_assoc(l, am, el.sin());
                let trig = if m >= 0 { (am as f64 * az).cos() } else { (am as f64 * az).sin() };
                out.push(n * p * trig);
            }
        }
        out
    }

    #[test]
    fn order_one_front_and_left() {
        let y = sh_eval(&Direction::new(0.0, 0.0), 1).unwrap();
        assert_eq!(y.coeffs(), &[1.0, 0.0, 0.0, 1.0]);
        let y = sh_eval(&Direction::new(PI / 2.0, 0.0), 1).unwrap();
        let expect = [1.0, 1.0, 0.0, 0.0];
        for (a, b) in y.coeffs().iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn order_four_matches_polynomial_oracle() {
        let y = sh_eval(&Direction::new(0.7, -0.3), 4).unwrap();
        let oracle = oracle_sh(0.7, -0.3, 4);
        assert_eq!(y.coeffs().len(), 25);
        for (a, b) in y.coeffs().iter().zip(&oracle) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn order_eight_matches_oracle_and_rejects_nine() {
        let y = sh_eval(&Direction::new(-2.1, 0.9), 8).unwrap();
        let oracle = oracle_sh(-2.1, 0.9, 8);
        for (a, b) in y.coeffs().iter().zip(&oracle) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
        assert!(matches!(
            sh_eval(&Direction::new(0.0, 0.0), 9),
            Err(GtvvError::InvalidArgument(_))
        ));
    }

    #[test]
    fn direction_normalization() {
        let d = Direction::new(3.0 * PI / 2.0, 0.1);
        assert_abs_diff_eq!(d.azimuth(), -PI / 2.0, epsilon = 1e-12);
        let d = Direction::new(0.0, PI / 2.0 + 0.2);
        assert_abs_diff_eq!(d.elevation(), PI / 2.0 - 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(d.azimuth(), PI, epsilon = 1e-12);
        assert!(Direction::try_new(f64::NAN, 0.0).is_err());
        assert_eq!(Direction::new(-PI, 0.0).azimuth(), PI);
    }

    #[test]
    fn reference_beam_examples() {
        let w = make_reference_beam(&Direction::new(1.0, 0.4), 0).unwrap();
        assert_eq!(w.weights(), &[1.0]);
        let w = make_reference_beam(&Direction::new(0.0, 0.0), 1).unwrap();
        assert_eq!(w.weights(), &[0.5, 0.0, 0.0, 0.5]);
        let dir = Direction::new(0.7, -0.3);
        let w = make_reference_beam(&dir, 3).unwrap();
        let y = sh_eval(&dir, 3).unwrap();
        assert_abs_diff_eq!(w.response(y.coeffs()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn omni_beam_examples() {
        assert_eq!(make_omni_beam(1).unwrap().weights(), &[1.0, 0.0, 0.0, 0.0]);
        let w = make_omni_beam(4).unwrap();
        assert_eq!(w.weights().len(), 25);
        assert_eq!(w.weights()[0], 1.0);
        assert!(w.weights()[1..].iter().all(|&x| x == 0.0));
        let y = sh_eval(&Direction::new(2.0, -1.1), 4).unwrap();
        assert_eq!(w.response(y.coeffs()), 1.0);
        assert_eq!(w.selected_channel(), Some(0));
    }

    #[test]
    fn dictionary_770_at_order_four() {
        let dict = build_dictionary(770, 4, &GridScheme::Fibonacci).unwrap();
        assert_eq!(dict.len(), 770);
        assert_eq!(dict.atoms().shape(), (25, 770));
        for j in 0..770 {
            assert!(dict.atoms().column(j).norm() > 0.0);
        }
    }

    #[test]
    fn four_point_grid_is_spread() {
        let dict = build_dictionary(4, 1, &GridScheme::Fibonacci).unwrap();
        let d = dict.directions();
        for i in 0..4 {
            for j in (i + 1)..4 {
                let u = d[i].to_cartesian();
                let v = d[j].to_cartesian();
                let ang = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).acos();
                assert!(ang > PI / 3.0, "pair {i},{j}: {ang}");
            }
        }
    }

    #[test]
    fn dictionary_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.txt");
        std::fs::write(&path, "# two points\n0 0\n1.5708 0\n").unwrap();
        let dict = build_dictionary(2, 0, &GridScheme::File(path.clone())).unwrap();
        assert_eq!(dict.len(), 2);
        for (j, d) in [(0.0, 0.0), (1.5708, 0.0)].iter().enumerate() {
            let y = sh_eval(&Direction::new(d.0, d.1), 0).unwrap();
            assert_eq!(dict.atom(j), y.coeffs());
        }
        let dict1 = Dictionary::from_directions(read_direction_file(&path).unwrap(), 1).unwrap();
        let y = sh_eval(&Direction::new(1.5708, 0.0), 1).unwrap();
        assert_eq!(dict1.atom(1), y.coeffs());
    }

    #[test]
    fn dictionary_errors() {
        assert!(build_dictionary(3, 1, &GridScheme::Fibonacci).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "0 zero\n").unwrap();
        assert!(matches!(
            build_dictionary(1, 0, &GridScheme::File(path)),
            Err(GtvvError::DirectionFile { .. })
        ));
        let missing = dir.path().join("missing.txt");
        assert!(build_dictionary(1, 0, &GridScheme::File(missing)).is_err());
        let close = vec![Direction::new(0.0, 0.0), Direction::new(0.001, 0.0)];
        assert!(Dictionary::from_directions(close, 1).is_err());
    }

    #[test]
    fn angular_distance_examples() {
        let a = Direction::new(0.0, 0.0);
        let b = Direction::new(PI / 2.0, 0.0);
        assert_abs_diff_eq!(angular_distance(&a, &b), PI / 2.0, epsilon = 1e-15);
        assert_eq!(angular_distance(&a, &a), 0.0);
        let (p, q) = ((0.3f64, 0.2f64), (-0.4f64, -0.1f64));
        let u = [p.1.cos() * p.0.cos(), p.1.cos() * p.0.sin(), p.1.sin()];
        let v = [q.1.cos() * q.0.cos(), q.1.cos() * q.0.sin(), q.1.sin()];
        let cross = [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ];
        let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let cos = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
        let oracle = sin.atan2(cos);
        assert_abs_diff_eq!(
            angular_distance(&Direction::new(p.0, p.1), &Direction::new(q.0, q.1)),
            oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn nearest_neighbour_spacing_is_quasi_uniform() {
        let dirs = fibonacci_directions(770);
        let mut nn: Vec<f64> = dirs
            .iter()
            .enumerate()
            .map(|(i, a)| {
                dirs.iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| angular_distance(a, b))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut sorted = nn.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        nn.retain(|&d| d < 0.5 * median || d > 2.0 * median);
        assert!(nn.is_empty(), "outliers: {nn:?}");
    }

    fn any_direction() -> impl Strategy<Value = Direction> {
        (-PI..PI, -PI / 2.0..PI / 2.0).prop_map(|(a, e)| Direction::new(a, e))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn reference_beam_has_unit_response(dir in any_direction(), order in 0usize..=8) {
            let w = make_reference_beam(&dir, order).unwrap();
            let y = sh_eval(&dir, order).unwrap();
            prop_assert!((w.response(y.coeffs()) - 1.0).abs() < 1e-10);
        }

        #[test]
        fn omni_and_first_order_bounds(dir in any_direction()) {
            let y = sh_eval(&dir, 4).unwrap();
            prop_assert_eq!(y.coeffs()[0], 1.0);
            for c in &y.coeffs()[1..4] {
                prop_assert!(c.abs() <= 1.0 + 1e-15);
            }
            // first order is the Cartesian unit vector permuted to (Y, Z, X)
            let [x, yy, z] = dir.to_cartesian();
            prop_assert!((y.coeffs()[1] - yy).abs() < 1e-14);
            prop_assert!((y.coeffs()[2] - z).abs() < 1e-14);
            prop_assert!((y.coeffs()[3] - x).abs() < 1e-14);
        }

        #[test]
        fn sn3d_energy_per_order_is_one(dir in any_direction()) {
            let y = sh_eval(&dir, 6).unwrap();
            for l in 0..=6usize {
                let e: f64 = y.coeffs()[l * l..(l + 1) * (l + 1)].iter().map(|c| c * c).sum();
                prop_assert!((e - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn angular_distance_is_symmetric(a in any_direction(), b in any_direction()) {
            let d1 = angular_distance(&a, &b);
            prop_assert_eq!(d1, angular_distance(&b, &a));
            prop_assert!(d1 >= 0.0 && d1 <= PI);
        }

        #[test]
        fn cartesian_round_trip(dir in any_direction()) {
            let back = Direction::from_cartesian(dir.to_cartesian()).unwrap();
            prop_assert!(angular_distance(&dir, &back) < 1e-7);
        }
    }
}
