//! Simultaneous orthogonal matching pursuit over a spherical-harmonic
//! dictionary, and matching of the recovered wavefronts to ground truth.
//!
//! Each iteration scores every atom by the largest magnitude of its
//! projection onto any residual column, reads the delay of the selected
//! atom at the lag where that projection peaks, and re-fits all selected
//! atoms to the GTVV by least squares.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{GtvvError, Result};
use crate::par;
use crate::room::GroundTruthScene;
use crate::sh::{angular_distance, channel_count, Dictionary, Direction};
use crate::spectral::GtvvMatrix;

/// Relative diagonal load of the projection's normal equations.
pub const PROJECTION_LOAD: f64 = 1e-10;
/// Residual norm, relative to the input, below which nothing is left to fit.
const RESIDUAL_FLOOR: f64 = 1e-12;

/// Iteration cap used by the experiments: 4 for first order, 7 above.
pub fn default_iteration_cap(order: usize) -> usize {
    if order <= 1 {
        4
    } else {
        7
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    /// The best atom was already selected.
    DuplicateAtom,
    /// The residual vanished before the iteration budget ran out.
    ResidualExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SompOptions {
    /// Restrict the delay readout to lags `t >= 0`.
    pub causal_only: bool,
}

impl Default for SompOptions {
    fn default() -> Self {
        SompOptions { causal_only: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    /// Dictionary indices, in selection order.
    pub atoms: Vec<usize>,
    pub directions: Vec<Direction>,
    /// Seconds, one per iteration.
    pub delays: Vec<f64>,
    /// Least-squares coefficients, `atoms.len() x T`.
    pub coeffs: DMatrix<f64>,
    /// Frobenius norm of the residual after each iteration.
    pub residual_norms: Vec<f64>,
    pub initial_norm: f64,
    pub termination: Termination,
}

impl EstimateSet {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn terminated_early(&self) -> bool {
        self.termination != Termination::Completed
    }

    pub fn to_json(&self) -> EstimateSetJson {
        EstimateSetJson {
            atoms: self.atoms.clone(),
            directions_deg: self
                .directions
                .iter()
                .map(|d| [d.azimuth_deg(), d.elevation_deg()])
                .collect(),
            delays_ms: self.delays.iter().map(|t| t * 1e3).collect(),
            residual_norms: self.residual_norms.clone(),
            initial_norm: self.initial_norm,
            termination: self.termination,
        }
    }
}

/// Serialized form of an [`EstimateSet`]: azimuth/elevation pairs in
/// degrees and delays in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSetJson {
    pub atoms: Vec<usize>,
    pub directions_deg: Vec<[f64; 2]>,
    pub delays_ms: Vec<f64>,
    pub residual_norms: Vec<f64>,
    pub initial_norm: f64,
    pub termination: Termination,
}

/// Best `(atom, score)` by `max_q |y_s^T R_q|`; ties go to the lowest index.
fn select_atom(residual: &DMatrix<f64>, dict: &Dictionary) -> (usize, f64) {
    let scores = par::map_range(dict.len(), |s| {
        let y = dict.atom(s);
        residual
            .column_iter()
            .map(|col| y.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max)
    });
    let mut best = (0, scores[0]);
    for (s, &score) in scores.iter().enumerate().skip(1) {
        if score > best.1 {
            best = (s, score);
        }
    }
    best
}

/// Column of the largest `|y^T R_q|` over `q >= first`; ties go to the
/// earliest lag.
fn read_delay(residual: &DMatrix<f64>, y: &[f64], first: usize) -> usize {
    let mut best = (first, -1.0);
    for q in first..residual.ncols() {
        let p = y
            .iter()
            .zip(residual.column(q).iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            .abs();
        if p > best.1 {
            best = (q, p);
        }
    }
    best.0
}

/// Least-squares `Z` minimizing `||Y Z - V||_F`, with a small diagonal load.
fn project(selected: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut gram = selected.transpose() * selected;
    let load = PROJECTION_LOAD * gram.trace();
    for i in 0..gram.nrows() {
        gram[(i, i)] += load;
    }
    let rhs = selected.transpose() * v;
    let chol = gram
        .cholesky()
        .ok_or_else(|| GtvvError::invalid("selected atoms are numerically dependent"))?;
    Ok(chol.solve(&rhs))
}

pub fn somp(v: &GtvvMatrix, dict: &Dictionary, iters: usize) -> Result<EstimateSet> {
    somp_with(v, dict, iters, SompOptions::default())
}

pub fn somp_with(v: &GtvvMatrix, dict: &Dictionary, iters: usize, opts: SompOptions) -> Result<EstimateSet> {
    let channels = v.channels();
    if dict.order() != v.order() || channel_count(dict.order()) != channels {
        return Err(GtvvError::invalid(format!(
            "dictionary order {} does not match GTVV order {}",
            dict.order(),
            v.order()
        )));
    }
    if iters == 0 || iters > channels {
        return Err(GtvvError::invalid(format!(
            "iteration count must be in 1..={channels}, got {iters}"
        )));
    }
    if v.is_empty() {
        return Err(GtvvError::invalid("GTVV matrix is empty"));
    }
    let data = v.data();
    let initial_norm = data.norm();
    let first_lag = if opts.causal_only { v.zero_column() } else { 0 };
    let mut residual = data.clone();
    let mut atoms: Vec<usize> = Vec::new();
    let mut delays = Vec::new();
    let mut residual_norms = Vec::new();
    let mut coeffs = DMatrix::zeros(0, v.len());
    let mut termination = Termination::Completed;
    for _ in 0..iters {
        if residual.norm() <= RESIDUAL_FLOOR * initial_norm {
            termination = Termination::ResidualExhausted;
            break;
        }
        let (s, _) = select_atom(&residual, dict);
        if atoms.contains(&s) {
            termination = Termination::DuplicateAtom;
            break;
        }
        let q = read_delay(&residual, dict.atom(s), first_lag);
        atoms.push(s);
        delays.push(v.time_axis()[q]);
        let selected = DMatrix::from_fn(channels, atoms.len(), |c, i| dict.atom(atoms[i])[c]);
        coeffs = project(&selected, data)?;
        residual = &selected * &coeffs - data;
        residual_norms.push(residual.norm());
    }
    if termination != Termination::Completed {
        log::debug!("S-OMP stopped after {} atoms: {:?}", atoms.len(), termination);
    }
    Ok(EstimateSet {
        directions: atoms.iter().map(|&s| dict.directions()[s]).collect(),
        atoms,
        delays,
        coeffs,
        residual_norms,
        initial_norm,
        termination,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    /// Index into the estimate set (>= 1).
    pub estimate: usize,
    /// Index into the scene's wavefront list.
    pub wavefront: usize,
    /// Radians.
    pub angular_error: f64,
    /// Seconds.
    pub delay_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    /// Angle between the first estimate and the direct path, radians.
    pub doa_error: Option<f64>,
    pub matches: Vec<Match>,
    pub detections: usize,
    pub first_order_count: usize,
    /// Mean over matches, radians.
    pub angular_error: Option<f64>,
    /// Mean over matches, seconds.
    pub delay_error: Option<f64>,
}

/// Greedy one-to-one matching of estimates 2.. to the first-order
/// reflections, in ascending angular distance, discarding pairs beyond
/// `gate`. The first estimate is scored against the direct path only.
pub fn match_to_truth(est: &EstimateSet, truth: &GroundTruthScene, gate: f64) -> MatchReport {
    let direct = truth.direct();
    let doa_error = est.directions.first().map(|d| angular_distance(d, &direct.direction));
    let targets = truth.first_order_indices();
    let mut pairs = Vec::new();
    for i in 1..est.directions.len() {
        for &n in &targets {
            let d = angular_distance(&est.directions[i], &truth.wavefronts[n].direction);
            if d <= gate {
                pairs.push((d, i, n));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_est = vec![false; est.directions.len()];
    let mut used_truth = vec![false; truth.wavefronts.len()];
    let mut matches = Vec::new();
    for (d, i, n) in pairs {
        if used_est[i] || used_truth[n] {
            continue;
        }
        used_est[i] = true;
        used_truth[n] = true;
        let tau = truth.wavefronts[n].toa - direct.toa;
        matches.push(Match {
            estimate: i,
            wavefront: n,
            angular_error: d,
            delay_error: (est.delays[i] - tau).abs(),
        });
    }
    let mean = |f: fn(&Match) -> f64| {
        (!matches.is_empty()).then(|| matches.iter().map(f).sum::<f64>() / matches.len() as f64)
    };
    MatchReport {
        doa_error,
        detections: matches.len(),
        first_order_count: targets.len(),
        angular_error: mean(|m| m.angular_error),
        delay_error: mean(|m| m.delay_error),
        matches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::room::{image_source_scene, Wavefront};
    use crate::sh::{build_dictionary, make_reference_beam, sh_eval, GridScheme};
    use crate::velocity::{gtvv_closed_form, RelativeWavefront};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const FS: f64 = 16000.0;

    fn dict(order: usize) -> Dictionary {
        build_dictionary(770, order, &GridScheme::Fibonacci).unwrap()
    }

    /// Relative wavefronts on dictionary atoms; `spec` holds
    /// `(atom, gain, delay in samples)`.
    fn on_grid_waves(d: &Dictionary, direct: usize, spec: &[(usize, f64, f64)]) -> Vec<RelativeWavefront> {
        let d0 = d.directions()[direct];
        let w = make_reference_beam(&d0, d.order()).unwrap();
        let mut waves = vec![RelativeWavefront {
            direction: d0,
            gain: 1.0,
            delay: 0.0,
            beta: 1.0,
        }];
        for &(atom, gain, lag) in spec {
            let dir = d.directions()[atom];
            let beta = w.response(d.atom(atom));
            waves.push(RelativeWavefront {
                direction: dir,
                gain,
                delay: lag / FS,
                beta,
            });
        }
        waves
    }

    /// Index of the atom farthest from `from` among those at least `min`
    /// radians from every atom in `avoid`, scanning in a fixed stride.
    fn pick_atom(d: &Dictionary, avoid: &[usize], min: f64, start: usize) -> usize {
        (0..d.len())
            .map(|k| (start + 97 * k) % d.len())
            .find(|&j| {
                avoid
                    .iter()
                    .all(|&a| angular_distance(&d.directions()[a], &d.directions()[j]) >= min)
            })
            .unwrap()
    }

    /// Straightforward S-OMP: exhaustive (atom, lag) search with plain
    /// loops and an SVD pseudo-inverse for the projection.
    fn brute_force(v: &GtvvMatrix, d: &Dictionary, iters: usize) -> (Vec<usize>, Vec<usize>) {
        let data = v.data();
        let mut r = data.clone();
        let (mut atoms, mut lags) = (Vec::new(), Vec::new());
        for _ in 0..iters {
            let mut best = (0, 0, -1.0);
            for s in 0..d.len() {
                for q in 0..v.len() {
                    let mut p = 0.0;
                    for c in 0..v.channels() {
                        p += d.atom(s)[c] * r[(c, q)];
                    }
                    if p.abs() > best.2 {
                        best = (s, q, p.abs());
                    }
                }
            }
            let s = best.0;
            let mut lag = (0, -1.0);
            for q in v.zero_column()..v.len() {
                let p: f64 = (0..v.channels()).map(|c| d.atom(s)[c] * r[(c, q)]).sum();
                if p.abs() > lag.1 {
                    lag = (q, p.abs());
                }
            }
            atoms.push(s);
            lags.push(lag.0);
            let y = DMatrix::from_fn(v.channels(), atoms.len(), |c, i| d.atom(atoms[i])[c]);
            let z = y.clone().pseudo_inverse(1e-12).unwrap() * data;
            r = y * z - data;
        }
        (atoms, lags)
    }

    #[test]
    fn direct_path_only_selects_nearest_atom_at_zero_lag() {
        let d = dict(2);
        let dir = Direction::from_degrees(33.3, 12.1);
        let waves = [RelativeWavefront {
            direction: dir,
            gain: 1.0,
            delay: 0.0,
            beta: 1.0,
        }];
        let (v, _) = gtvv_closed_form(&waves, 2, 1, 512, FS).unwrap();
        let est = somp(&v, &d, 1).unwrap();
        assert_eq!(est.atoms, vec![d.nearest(&dir)]);
        assert_eq!(est.delays, vec![0.0]);
        assert_eq!(est.termination, Termination::Completed);
    }

    #[test]
    fn one_reflection_on_grid_is_recovered_exactly() {
        let d = dict(3);
        let a0 = 10;
        let w = make_reference_beam(&d.directions()[a0], 3).unwrap();
        // greedy recovery is exact once the reflection sits outside the
        // reference beam's main lobe (>= 60 degrees at order 3)
        let a1 = (0..d.len())
            .find(|&j| {
                angular_distance(&d.directions()[a0], &d.directions()[j]) >= 60f64.to_radians()
                    && w.response(d.atom(j)) > 0.21
            })
            .unwrap();
        let gain = 0.2 / w.response(d.atom(a1));
        assert!(gain < 1.0);
        let waves = on_grid_waves(&d, a0, &[(a1, gain, 64.0)]);
        let (v, _) = gtvv_closed_form(&waves, 3, 40, 1024, FS).unwrap();
        let est = somp(&v, &d, 2).unwrap();
        assert_eq!(est.atoms, vec![a0, a1]);
        assert_eq!(est.delays, vec![0.0, 64.0 / FS]);
        let (atoms, lags) = brute_force(&v, &d, 2);
        assert_eq!(atoms, est.atoms);
        assert_eq!(lags, vec![512, 576]);
    }

    #[test]
    fn three_reflections_match_exhaustive_oracle() {
        let d = dict(4);
        let a0 = 123;
        let a1 = pick_atom(&d, &[a0], 60f64.to_radians(), 50);
        let a2 = pick_atom(&d, &[a0, a1], 60f64.to_radians(), 400);
        let a3 = pick_atom(&d, &[a0, a1, a2], 60f64.to_radians(), 700);
        let waves = on_grid_waves(&d, a0, &[(a1, 0.6, 41.0), (a2, -0.5, 67.0), (a3, 0.4, 95.0)]);
        let (v, _) = gtvv_closed_form(&waves, 4, 20, 512, FS).unwrap();
        let est = somp(&v, &d, 7).unwrap();
        let (atoms, lags) = brute_force(&v, &d, est.len());
        assert_eq!(est.atoms, atoms);
        let zero = v.zero_column();
        let lags_s: Vec<f64> = lags.iter().map(|&q| (q as f64 - zero as f64) / FS).collect();
        assert_eq!(est.delays, lags_s);
        assert_eq!(&est.atoms[..4], &[a0, a1, a2, a3]);
        assert_eq!(&est.delays[..4], &[0.0, 41.0 / FS, 67.0 / FS, 95.0 / FS]);
    }

    #[test]
    fn duplicate_selection_stops_early() {
        let d = dict(1);
        let dir = d.directions()[5];
        let waves = [RelativeWavefront {
            direction: dir,
            gain: 1.0,
            delay: 0.0,
            beta: 1.0,
        }];
        let (v, _) = gtvv_closed_form(&waves, 1, 1, 64, FS).unwrap();
        let est = somp(&v, &d, 4).unwrap();
        assert_eq!(est.len(), 1);
        assert!(est.terminated_early());
    }

    #[test]
    fn argument_checks() {
        let d = dict(1);
        let waves = [RelativeWavefront {
            direction: Direction::new(0.0, 0.0),
            gain: 1.0,
            delay: 0.0,
            beta: 1.0,
        }];
        let (v, _) = gtvv_closed_form(&waves, 2, 1, 64, FS).unwrap();
        assert!(somp(&v, &d, 1).is_err());
        let d2 = dict(2);
        assert!(somp(&v, &d2, 0).is_err());
        assert!(somp(&v, &d2, 10).is_err());
    }

    #[test]
    fn full_range_readout_can_find_negative_lags() {
        let d = dict(1);
        let dir = d.directions()[40];
        let y = sh_eval(&dir, 1).unwrap();
        let mut data = DMatrix::zeros(4, 64);
        for c in 0..4 {
            data[(c, 20)] = y.coeffs()[c];
        }
        let v = GtvvMatrix::new(data, FS).unwrap();
        let causal = somp(&v, &d, 1).unwrap();
        let full = somp_with(&v, &d, 1, SompOptions { causal_only: false }).unwrap();
        assert_eq!(causal.atoms, full.atoms);
        assert_eq!(full.delays[0], -12.0 / FS);
        assert!(causal.delays[0] >= 0.0);
    }

    #[test]
    fn json_uses_degrees_and_milliseconds() {
        let d = dict(2);
        let a1 = pick_atom(&d, &[0], 90f64.to_radians(), 200);
        let waves = on_grid_waves(&d, 0, &[(a1, 0.3, 16.0)]);
        let (v, _) = gtvv_closed_form(&waves, 2, 10, 256, FS).unwrap();
        let est = somp(&v, &d, 2).unwrap();
        let json = est.to_json();
        assert_eq!(json.delays_ms[1], 1.0);
        assert!((json.directions_deg[1][0] - d.directions()[a1].azimuth_deg()).abs() < 1e-12);
        let text = serde_json::to_string(&json).unwrap();
        let back: EstimateSetJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back, json);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residual_norms_never_increase(
            seed_atoms in proptest::collection::vec(0usize..770, 3),
            gains in proptest::collection::vec(-0.6f64..0.6, 3),
            lags in proptest::collection::vec(1.0f64..100.0, 3),
            noise_seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let d = dict(2);
            let spec: Vec<_> = seed_atoms.iter().zip(&gains).zip(&lags)
                .filter(|((a, _), _)| **a != 0)
                .map(|((a, g), l)| (*a, *g, *l)).collect();
            let waves = on_grid_waves(&d, 0, &spec);
            prop_assume!(waves.iter().skip(1).all(|w| w.beta.abs() > 1e-3));
            let (v, _) = gtvv_closed_form(&waves, 2, 8, 256, FS).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);
            let noisy = v.data().map(|x| x + 0.01 * (rng.random::<f64>() - 0.5));
            let v = GtvvMatrix::new(noisy, FS).unwrap();
            let est = somp(&v, &d, 7).unwrap();
            let mut prev = est.initial_norm;
            for &r in &est.residual_norms {
                prop_assert!(r <= prev * (1.0 + 1e-9));
                prev = r;
            }
            let mut seen = est.atoms.clone();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), est.atoms.len());
        }

        #[test]
        fn doa_first_on_well_conditioned_scenes(
            az in -PI..PI,
            el in -1.4f64..1.4,
            g in proptest::collection::vec(0.05f64..0.3, 3),
            lags in proptest::collection::vec(2.0f64..120.0, 3),
            refl in proptest::collection::vec((-PI..PI, -1.4f64..1.4), 3),
        ) {
            let order = 3;
            let d = dict(order);
            let d0 = Direction::new(az, el);
            let w = make_reference_beam(&d0, order).unwrap();
            let mut waves = vec![RelativeWavefront { direction: d0, gain: 1.0, delay: 0.0, beta: 1.0 }];
            for ((gain, lag), (a, e)) in g.iter().zip(&lags).zip(&refl) {
                let dir = Direction::new(*a, *e);
                let beta = w.response(sh_eval(&dir, order).unwrap().coeffs());
                waves.push(RelativeWavefront { direction: dir, gain: *gain, delay: lag / FS, beta });
            }
            let s: f64 = waves.iter().skip(1).map(|w| (w.gain * w.beta).abs()).sum();
            prop_assume!(s < 1.0);
            let (v, _) = gtvv_closed_form(&waves, order, 20, 512, FS).unwrap();
            let est = somp(&v, &d, 1).unwrap();
            prop_assert_eq!(est.atoms[0], d.nearest(&d0));
            prop_assert!(est.delays[0].abs() <= 1.0 / FS);
        }

        #[test]
        fn integer_delays_read_out_exactly(
            lag in 1usize..200,
            gain in 0.1f64..0.9,
            sign in prop::bool::ANY,
            pick in 0usize..770,
        ) {
            let d = dict(2);
            let a1 = pick_atom(&d, &[0], 90f64.to_radians(), pick);
            let gain = if sign { gain } else { -gain };
            let waves = on_grid_waves(&d, 0, &[(a1, gain, lag as f64)]);
            let (v, _) = gtvv_closed_form(&waves, 2, 40, 512, FS).unwrap();
            let est = somp(&v, &d, 2).unwrap();
            prop_assert_eq!(&est.atoms, &vec![0, a1]);
            prop_assert_eq!(est.delays[1], lag as f64 / FS);
        }
    }

    fn scene_with_reflections(dirs: &[Direction]) -> GroundTruthScene {
        let mut wavefronts = vec![Wavefront {
            direction: Direction::new(0.0, 0.0),
            toa: 0.005,
            gain: 1.0,
            reflection_order: 0,
        }];
        for (i, d) in dirs.iter().enumerate() {
            wavefronts.push(Wavefront {
                direction: *d,
                toa: 0.006 + 0.001 * i as f64,
                gain: 0.5,
                reflection_order: 1,
            });
        }
        let n = wavefronts.len();
        GroundTruthScene {
            wavefronts,
            first_order_flags: (0..n).map(|i| i > 0).collect(),
            room: [5.0, 4.0, 2.8],
            src: [1.0; 3],
            mic: [2.0; 3],
            rt60: 0.3,
            fs: FS,
            reflection_coefficient: 0.5,
            max_order: 1,
        }
    }

    fn estimates(dirs: Vec<Direction>, delays: Vec<f64>) -> EstimateSet {
        let n = dirs.len();
        EstimateSet {
            atoms: (0..n).collect(),
            directions: dirs,
            delays,
            coeffs: DMatrix::zeros(n, 1),
            residual_norms: vec![0.0; n],
            initial_norm: 1.0,
            termination: Termination::Completed,
        }
    }

    #[test]
    fn perfect_estimates_match_everything() {
        let scene = image_source_scene([5.0, 4.0, 2.8], [1.0, 1.5, 1.2], [3.2, 2.4, 1.6], 0.3, 1, FS).unwrap();
        let idx = scene.first_order_indices();
        let mut dirs = vec![scene.direct().direction];
        let mut delays = vec![0.0];
        for &n in &idx {
            dirs.push(scene.wavefronts[n].direction);
            delays.push(scene.wavefronts[n].toa - scene.direct().toa);
        }
        let report = match_to_truth(&estimates(dirs, delays), &scene, 20f64.to_radians());
        assert_eq!(report.detections, 6);
        assert_eq!(report.first_order_count, 6);
        assert_eq!(report.doa_error, Some(0.0));
        assert!(report.angular_error.unwrap() < 1e-7);
        assert!(report.delay_error.unwrap() < 1e-15);
    }

    #[test]
    fn estimates_beyond_gate_are_discarded() {
        let truth = [Direction::from_degrees(90.0, 0.0), Direction::from_degrees(-90.0, 0.0)];
        let scene = scene_with_reflections(&truth);
        let est = estimates(
            vec![
                Direction::new(0.0, 0.0),
                Direction::from_degrees(120.0, 0.0),
                Direction::from_degrees(-60.0, 0.0),
            ],
            vec![0.0, 0.001, 0.002],
        );
        let report = match_to_truth(&est, &scene, 20f64.to_radians());
        assert_eq!(report.detections, 0);
        assert_eq!(report.angular_error, None);
        assert_eq!(report.delay_error, None);
    }

    #[test]
    fn first_estimate_is_not_a_reflection() {
        let truth = [Direction::from_degrees(0.0, 0.0)];
        let mut scene = scene_with_reflections(&truth);
        scene.wavefronts[0].direction = Direction::from_degrees(0.0, 60.0);
        let est = estimates(vec![Direction::from_degrees(0.0, 0.0)], vec![0.0]);
        let report = match_to_truth(&est, &scene, 20f64.to_radians());
        assert_eq!(report.detections, 0);
        assert!((report.doa_error.unwrap() - 60f64.to_radians()).abs() < 1e-12);
    }

    /// Largest matching size within the gate, by exhaustive search.
    fn max_matching(cost: &[Vec<f64>], gate: f64, row: usize, used: &mut Vec<bool>) -> usize {
        if row == cost.len() {
            return 0;
        }
        let mut best = max_matching(cost, gate, row + 1, used);
        for j in 0..used.len() {
            if !used[j] && cost[row][j] <= gate {
                used[j] = true;
                best = best.max(1 + max_matching(cost, gate, row + 1, used));
                used[j] = false;
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn perturbed_estimates_match_exhaustive_assignment(
            perturb in proptest::collection::vec((0.0f64..5.0, -PI..PI), 6),
            keep in proptest::collection::vec(prop::bool::ANY, 6),
        ) {
            let scene = image_source_scene([5.0, 4.0, 2.8], [1.0, 1.5, 1.2], [3.2, 2.4, 1.6], 0.3, 1, FS).unwrap();
            let idx = scene.first_order_indices();
            let mut dirs = vec![scene.direct().direction];
            for (k, &n) in idx.iter().enumerate() {
                if !keep[k] {
                    continue;
                }
                let (mag, heading) = perturb[k];
                let base = scene.wavefronts[n].direction;
                let el = (base.elevation() + mag.to_radians() * heading.sin()).clamp(-1.5, 1.5);
                let az = base.azimuth() + mag.to_radians() * heading.cos() / base.elevation().cos().max(0.2);
                dirs.push(Direction::new(az, el));
            }
            let delays = vec![0.0; dirs.len()];
            let gate = 20f64.to_radians();
            let report = match_to_truth(&estimates(dirs.clone(), delays), &scene, gate);
            let cost: Vec<Vec<f64>> = dirs[1..].iter()
                .map(|d| idx.iter().map(|&n| angular_distance(d, &scene.wavefronts[n].direction)).collect())
                .collect();
            let oracle = max_matching(&cost, gate, 0, &mut vec![false; idx.len()]);
            prop_assert_eq!(report.detections, oracle);
        }
    }
}
