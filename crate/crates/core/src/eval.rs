//! Experiment sweeps: simulate scenes, run every method on each order,
//! match against ground truth and aggregate.
//!
//! A run is one (scene, rt60) pair. Its signal is encoded once at the
//! highest requested order, noise is added once, and lower orders are
//! obtained by truncation. The signal is cut into segments of
//! `seg_count * frames_per_seg` frames; each segment yields one estimate
//! per method.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{h_tdvv, srp_map, steered_gtvv};
use crate::error::{GtvvError, Result};
use crate::io::{write_json, SceneJson};
use crate::par;
use crate::room::{
    add_noise, encode_scene, image_source_scene, make_burst_source, sabine_reflection_coefficient,
    AmbisonicSignal, GroundTruthScene,
};
use crate::sh::{angular_distance, build_dictionary, channel_count, Dictionary, Direction, GridScheme};
use crate::somp::{default_iteration_cap, match_to_truth, somp, EstimateSetJson, MatchReport};
use crate::spectral::{stft, SpectrumTensor};
use crate::velocity::EstimatorParams;

pub const SH_CONVENTION: &str = "ACN/SN3D";
pub const MAX_EXPERIMENT_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain steered response power (stand-in for TRAMP).
    Srp,
    Htdvv,
    Gtvv,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Srp, Method::Htdvv, Method::Gtvv];

    pub fn name(self) -> &'static str {
        match self {
            Method::Srp => "srp",
            Method::Htdvv => "htdvv",
            Method::Gtvv => "gtvv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridConfig {
    Fibonacci,
    File(PathBuf),
}

impl GridConfig {
    fn scheme(&self) -> GridScheme {
        match self {
            GridConfig::Fibonacci => GridScheme::Fibonacci,
            GridConfig::File(p) => GridScheme::File(p.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub src: [f64; 3],
    pub mic: [f64; 3],
}

/// Experiment settings. Every field has a default, so `{}` is a valid
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Room dimensions in metres.
    pub room: [f64; 3],
    /// Reverberation conditions, seconds.
    pub rt60: Vec<f64>,
    /// Explicit source/microphone placements. When empty, `scene_count`
    /// placements are drawn from `seed`.
    pub placements: Vec<Placement>,
    pub scene_count: usize,
    /// Minimum distance of random placements from every wall, metres.
    pub wall_margin: f64,
    /// Minimum source-microphone distance of random placements, metres.
    pub min_source_distance: f64,
    /// `null` disables noise.
    pub snr_db: Option<f64>,
    pub fs: f64,
    pub orders: Vec<usize>,
    pub dict_size: usize,
    pub grid: GridConfig,
    /// S-OMP iterations at order 1.
    pub iteration_cap_foa: usize,
    /// S-OMP iterations at orders 2 and above.
    pub iteration_cap_hoa: usize,
    /// Image-source order of the simulated scenes.
    pub image_order: usize,
    pub win_len: usize,
    pub hop: usize,
    pub gate_deg: f64,
    pub estimator: EstimatorParams,
    pub segments_per_scene: usize,
    pub seed: u64,
    /// Optional dry mono source; a seeded burst source is used otherwise.
    pub source_wav: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub sh_convention: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            room: [5.0, 4.0, 2.8],
            rt60: vec![0.16, 0.44],
            placements: Vec::new(),
            scene_count: 5,
            wall_margin: 0.5,
            min_source_distance: 1.0,
            snr_db: Some(20.0),
            fs: 16000.0,
            orders: vec![1, 2, 3, 4],
            dict_size: 770,
            grid: GridConfig::Fibonacci,
            iteration_cap_foa: default_iteration_cap(1),
            iteration_cap_hoa: default_iteration_cap(2),
            image_order: 3,
            win_len: 1024,
            hop: 256,
            gate_deg: 20.0,
            estimator: EstimatorParams::default(),
            segments_per_scene: 1,
            seed: 2021,
            source_wav: None,
            methods: Method::ALL.to_vec(),
            sh_convention: SH_CONVENTION.to_string(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> GtvvError {
    GtvvError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            GtvvError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn iteration_cap(&self, order: usize) -> usize {
        if order <= 1 {
            self.iteration_cap_foa
        } else {
            self.iteration_cap_hoa
        }
    }

    pub fn max_order(&self) -> usize {
        self.orders.iter().copied().max().unwrap_or(1)
    }

    /// Frames consumed by one segment.
    pub fn segment_frames(&self) -> usize {
        self.estimator.frames_needed()
    }

    /// Samples needed for all segments of one scene.
    pub fn signal_samples(&self) -> usize {
        (self.segments_per_scene * self.segment_frames() - 1) * self.hop + self.win_len
    }

    /// Checks every value before anything runs.
    pub fn validate(&self) -> Result<()> {
        if self.sh_convention != SH_CONVENTION {
            return Err(config_err(format!(
                "sh_convention must be {SH_CONVENTION:?}, got {:?}",
                self.sh_convention
            )));
        }
        if self.room.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(config_err("room dimensions must be positive"));
        }
        if self.rt60.is_empty() {
            return Err(config_err("rt60 list is empty"));
        }
        for &rt in &self.rt60 {
            sabine_reflection_coefficient(self.room, rt).map_err(|e| config_err(format!("rt60 {rt}: {e}")))?;
        }
        if self.placements.is_empty() {
            if self.scene_count == 0 {
                return Err(config_err("scene_count must be positive"));
            }
            if self.room.iter().any(|d| *d <= 2.0 * self.wall_margin) || self.wall_margin < 0.0 {
                return Err(config_err("wall_margin leaves no room for placements"));
            }
            let inner: f64 = self.room.iter().map(|d| (d - 2.0 * self.wall_margin).powi(2)).sum();
            if self.min_source_distance >= inner.sqrt() || self.min_source_distance < 0.0 {
                return Err(config_err("min_source_distance cannot be met inside the room"));
            }
        }
        for (i, p) in self.placements.iter().enumerate() {
            for pos in [p.src, p.mic] {
                if pos.iter().zip(&self.room).any(|(x, d)| !(*x > 0.0 && x < d)) {
                    return Err(config_err(format!("placement {i} lies outside the room")));
                }
            }
            if p.src == p.mic {
                return Err(config_err(format!("placement {i}: source and microphone coincide")));
            }
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(config_err("snr_db must be finite or null"));
            }
        }
        if !(self.fs > 0.0) || self.fs.fract() != 0.0 {
            return Err(config_err("fs must be a positive integer"));
        }
        if self.orders.is_empty() {
            return Err(config_err("orders list is empty"));
        }
        if let Some(o) = self.orders.iter().find(|o| !(1..=MAX_EXPERIMENT_ORDER).contains(*o)) {
            return Err(config_err(format!("order {o} outside 1..={MAX_EXPERIMENT_ORDER}")));
        }
        if self.dict_size < channel_count(self.max_order()) {
            return Err(config_err("dict_size is smaller than the channel count"));
        }
        if let GridConfig::File(p) = &self.grid {
            if !p.is_file() {
                return Err(config_err(format!("grid file {} not found", p.display())));
            }
        }
        for &o in &self.orders {
            let cap = self.iteration_cap(o);
            if cap == 0 || cap > channel_count(o) {
                return Err(config_err(format!("iteration cap {cap} invalid at order {o}")));
            }
        }
        if self.win_len < 16 || self.win_len % 2 != 0 {
            return Err(config_err("win_len must be even and at least 16"));
        }
        if self.hop == 0 || self.hop > self.win_len {
            return Err(config_err("hop must be in 1..=win_len"));
        }
        if !(self.gate_deg > 0.0 && self.gate_deg <= 180.0) {
            return Err(config_err("gate_deg must be in (0, 180]"));
        }
        self.estimator.validate().map_err(|e| config_err(e.to_string()))?;
        if self.segments_per_scene == 0 {
            return Err(config_err("segments_per_scene must be positive"));
        }
        if self.methods.is_empty() {
            return Err(config_err("methods list is empty"));
        }
        if let Some(p) = &self.source_wav {
            if !p.is_file() {
                return Err(config_err(format!("source file {} not found", p.display())));
            }
        }
        Ok(())
    }
}

/// Stream ids for the derived random generators.
const STREAM_PLACEMENT: u64 = 1;
const STREAM_SOURCE: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Seed for one (purpose, scene, condition) triple.
fn derive_seed(master: u64, stream: u64, a: usize, b: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(((a as u128) << 40) | ((b as u128) << 8));
    rng.random()
}

/// Placements used by the experiment: the explicit list, or seeded random
/// draws at least `wall_margin` from every wall and `min_source_distance`
/// apart.
pub fn resolve_placements(cfg: &ExperimentConfig) -> Vec<Placement> {
    if !cfg.placements.is_empty() {
        return cfg.placements.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_PLACEMENT);
    let m = cfg.wall_margin;
    let draw = |rng: &mut ChaCha8Rng| {
        let mut p = [0.0; 3];
        for (x, d) in p.iter_mut().zip(&cfg.room) {
            *x = rng.random_range(m..d - m);
        }
        p
    };
    (0..cfg.scene_count)
        .map(|_| loop {
            let src = draw(&mut rng);
            let mic = draw(&mut rng);
            let d: f64 = src.iter().zip(&mic).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if d >= cfg.min_source_distance {
                break Placement { src, mic };
            }
        })
        .collect()
}

/// Outcome of one method on one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub doa_deg: Option<[f64; 2]>,
    /// Degrees.
    pub doa_error_deg: Option<f64>,
    pub estimates: Option<EstimateSetJson>,
    pub matching: Option<MatchReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub scene: usize,
    pub rt60: f64,
    pub order: usize,
    pub segment: usize,
    pub outcomes: Vec<MethodOutcome>,
}

impl SegmentRecord {
    pub fn file_stem(&self, rt_index: usize) -> String {
        format!(
            "scene{}_rt{}_order{}_seg{}",
            self.scene, rt_index, self.order, self.segment
        )
    }
}

fn failure(method: Method, e: &GtvvError) -> MethodOutcome {
    MethodOutcome {
        method,
        doa_deg: None,
        doa_error_deg: None,
        estimates: None,
        matching: None,
        error: Some(e.to_string()),
    }
}

fn deg(d: &Direction) -> [f64; 2] {
    [d.azimuth_deg(), d.elevation_deg()]
}

/// Runs the requested methods on one segment. GTVV is steered at the
/// H-TDVV DoA, so H-TDVV is always computed when GTVV is requested.
pub fn analyze_segment(
    spec: &SpectrumTensor,
    dict: &Dictionary,
    params: &EstimatorParams,
    iters: usize,
    methods: &[Method],
    truth: Option<&GroundTruthScene>,
    gate: f64,
) -> Vec<MethodOutcome> {
    let doa_error = |d: &Direction| truth.map(|t| angular_distance(d, &t.direct().direction).to_degrees());
    let mut outcomes = Vec::new();
    if methods.contains(&Method::Srp) {
        outcomes.push(match srp_map(spec, dict) {
            Ok(map) => {
                let d = map.peak_direction();
                MethodOutcome {
                    method: Method::Srp,
                    doa_deg: Some(deg(&d)),
                    doa_error_deg: doa_error(&d),
                    estimates: None,
                    matching: None,
                    error: None,
                }
            }
            Err(e) => failure(Method::Srp, &e),
        });
    }
    let sparse = |method: Method, est: Result<crate::somp::EstimateSet>| match est {
        Ok(est) => {
            let d = est.directions[0];
            MethodOutcome {
                method,
                doa_deg: Some(deg(&d)),
                doa_error_deg: doa_error(&d),
                matching: truth.map(|t| match_to_truth(&est, t, gate)),
                estimates: Some(est.to_json()),
                error: None,
            }
        }
        Err(e) => failure(method, &e),
    };
    if methods.contains(&Method::Htdvv) || methods.contains(&Method::Gtvv) {
        let htdvv = h_tdvv(spec, params).and_then(|v| somp(&v, dict, iters));
        let gtvv = match &htdvv {
            Ok(est) => steered_gtvv(spec, params, &est.directions[0]).and_then(|v| somp(&v, dict, iters)),
            Err(e) => Err(GtvvError::invalid(format!("no H-TDVV DoA to steer at: {e}"))),
        };
        if methods.contains(&Method::Htdvv) {
            outcomes.push(sparse(Method::Htdvv, htdvv));
        }
        if methods.contains(&Method::Gtvv) {
            outcomes.push(sparse(Method::Gtvv, gtvv));
        }
    }
    outcomes
}

/// Reads the configured dry source, if any.
pub fn load_source(cfg: &ExperimentConfig) -> Result<Option<Vec<f64>>> {
    let Some(path) = &cfg.source_wav else {
        return Ok(None);
    };
    let (x, fs) = crate::io::read_mono_wav(path)?;
    if fs != cfg.fs {
        return Err(config_err(format!(
            "source {} has rate {fs}, experiment uses {}",
            path.display(),
            cfg.fs
        )));
    }
    Ok(Some(x))
}

/// Dry source for one scene: a slice of the supplied recording (cycled if
/// short), or a seeded burst signal.
fn scene_source(cfg: &ExperimentConfig, recording: Option<&[f64]>, scene: usize, rt: usize) -> Vec<f64> {
    let n = cfg.signal_samples();
    match recording {
        Some(x) if !x.is_empty() => (0..n).map(|i| x[(i + scene * n) % x.len()]).collect(),
        _ => {
            let seed = derive_seed(cfg.seed, STREAM_SOURCE, scene, rt);
            let mut s = make_burst_source(n as f64 / cfg.fs, cfg.fs, seed);
            s.resize(n, 0.0);
            s
        }
    }
}

struct Run {
    scene_index: usize,
    rt_index: usize,
    scene: GroundTruthScene,
}

/// Noisy Ambisonic signal of one (scene, condition) pair at the highest
/// configured order, exactly as the sweep sees it.
pub fn simulate_signal(
    cfg: &ExperimentConfig,
    scene: &GroundTruthScene,
    scene_index: usize,
    rt_index: usize,
    recording: Option<&[f64]>,
) -> Result<AmbisonicSignal> {
    let source = scene_source(cfg, recording, scene_index, rt_index);
    let clean = encode_scene(scene, &source, cfg.max_order())?;
    match cfg.snr_db {
        Some(snr) => add_noise(&clean, snr, derive_seed(cfg.seed, STREAM_NOISE, scene_index, rt_index)),
        None => Ok(clean),
    }
}

/// Ground truth of one (scene, condition) pair.
pub fn simulate_scene(cfg: &ExperimentConfig, placement: &Placement, rt_index: usize) -> Result<GroundTruthScene> {
    let rt = *cfg
        .rt60
        .get(rt_index)
        .ok_or_else(|| config_err(format!("rt60 index {rt_index} not configured")))?;
    image_source_scene(cfg.room, placement.src, placement.mic, rt, cfg.image_order, cfg.fs)
}

fn run_one(cfg: &ExperimentConfig, run: &Run, recording: Option<&[f64]>, dicts: &[(usize, Dictionary)]) -> Result<Vec<SegmentRecord>> {
    let sig = simulate_signal(cfg, &run.scene, run.scene_index, run.rt_index, recording)?;
    let full = stft(&sig, cfg.win_len, cfg.hop)?;
    let seg_frames = cfg.segment_frames();
    let gate = cfg.gate_deg.to_radians();
    let mut records = Vec::new();
    for (order, dict) in dicts {
        let spec = full.truncate_order(*order)?;
        for segment in 0..cfg.segments_per_scene {
            let seg = spec.frame_range(segment * seg_frames, seg_frames)?;
            let outcomes = analyze_segment(
                &seg,
                dict,
                &cfg.estimator,
                cfg.iteration_cap(*order),
                &cfg.methods,
                Some(&run.scene),
                gate,
            );
            records.push(SegmentRecord {
                scene: run.scene_index,
                rt60: cfg.rt60[run.rt_index],
                order: *order,
                segment,
                outcomes,
            });
        }
    }
    Ok(records)
}

/// Aggregates of one (method, order, rt60) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub order: usize,
    pub rt60: f64,
    /// Segments that produced an estimate.
    pub runs: usize,
    pub failures: usize,
    pub doa_error_deg: Option<f64>,
    /// Mean over segments with at least one matched reflection.
    pub reflection_error_deg: Option<f64>,
    /// Mean number of matched first-order reflections per segment.
    pub detections: Option<f64>,
    /// Mean over segments with at least one matched reflection, seconds.
    pub delay_error_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub cells: Vec<CellResult>,
}

impl ResultsTable {
    pub fn cell(&self, method: Method, order: usize, rt60: f64) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.order == order && c.rt60 == rt60)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "method,order,rt60,runs,failures,doa_error_deg,reflection_error_deg,detections,delay_error_s"
        )?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                c.method.name(),
                c.order,
                c.rt60,
                c.runs,
                c.failures,
                opt(c.doa_error_deg),
                opt(c.reflection_error_deg),
                opt(c.detections),
                opt(c.delay_error_s)
            )?;
        }
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn aggregate(cfg: &ExperimentConfig, records: &[SegmentRecord]) -> ResultsTable {
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &order in &cfg.orders {
            for &rt60 in &cfg.rt60 {
                let outcomes: Vec<&MethodOutcome> = records
                    .iter()
                    .filter(|r| r.order == order && r.rt60 == rt60)
                    .flat_map(|r| r.outcomes.iter().filter(|o| o.method == method))
                    .collect();
                let ok: Vec<&&MethodOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
                let matches = || ok.iter().filter_map(|o| o.matching.as_ref());
                cells.push(CellResult {
                    method,
                    order,
                    rt60,
                    runs: ok.len(),
                    failures: outcomes.len() - ok.len(),
                    doa_error_deg: mean(ok.iter().filter_map(|o| o.doa_error_deg)),
                    reflection_error_deg: mean(matches().filter_map(|m| m.angular_error.map(f64::to_degrees))),
                    detections: mean(matches().map(|m| m.detections as f64)),
                    delay_error_s: mean(matches().filter_map(|m| m.delay_error)),
                });
            }
        }
    }
    ResultsTable { cells }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub placements: Vec<Placement>,
    pub scenes: Vec<SceneJson>,
    pub table: ResultsTable,
    pub records: Vec<SegmentRecord>,
    /// Runs that failed before any method could start.
    pub run_failures: Vec<String>,
    pub notes: Vec<String>,
}

/// Runs the whole sweep. Deterministic for a given config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let recording = load_source(cfg)?;
    let placements = resolve_placements(cfg);
    let scheme = cfg.grid.scheme();
    let mut orders = cfg.orders.clone();
    orders.sort_unstable();
    orders.dedup();
    let dicts = orders
        .iter()
        .map(|&o| build_dictionary(cfg.dict_size, o, &scheme).map(|d| (o, d)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| config_err(format!("dictionary: {e}")))?;
    let mut runs = Vec::new();
    for (si, p) in placements.iter().enumerate() {
        for (ri, &rt) in cfg.rt60.iter().enumerate() {
            let scene = simulate_scene(cfg, p, ri).map_err(|e| config_err(format!("placement {si} rt60 {rt}: {e}")))?;
            runs.push(Run {
                scene_index: si,
                rt_index: ri,
                scene,
            });
        }
    }
    log::info!(
        "running {} scenes x {} conditions x {} orders",
        placements.len(),
        cfg.rt60.len(),
        orders.len()
    );
    let results = par::map_slice(&runs, |run| run_one(cfg, run, recording.as_deref(), &dicts));
    let mut records = Vec::new();
    let mut run_failures = Vec::new();
    for (run, res) in runs.iter().zip(results) {
        match res {
            Ok(r) => records.extend(r),
            Err(e) => {
                log::warn!("scene {} rt60 {} failed: {e}", run.scene_index, cfg.rt60[run.rt_index]);
                run_failures.push(format!(
                    "scene {} rt60 {}: {e}",
                    run.scene_index, cfg.rt60[run.rt_index]
                ));
            }
        }
    }
    let table = aggregate(cfg, &records);
    Ok(ExperimentOutput {
        config: cfg.clone(),
        placements,
        scenes: runs.iter().map(|r| SceneJson::from(&r.scene)).collect(),
        table,
        records,
        run_failures,
        notes: vec![
            format!("spherical harmonics: {SH_CONVENTION}"),
            "one estimate per segment of seg_count * frames_per_seg frames; errors are per-segment means".into(),
            "srp is a plain steered-response-power map without PHAT weighting".into(),
            "gtvv reference beam is steered at the htdvv DoA estimate".into(),
            "the first S-OMP estimate is scored as DoA and excluded from reflection matching".into(),
        ],
    })
}

/// Writes `results.csv`, `results.json`, per-segment estimate JSONs under
/// `runs/` and scene ground truth under `scenes/`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("runs"))?;
    std::fs::create_dir_all(dir.join("scenes"))?;
    let mut csv = BufWriter::new(File::create(dir.join("results.csv"))?);
    out.table.write_csv(&mut csv)?;
    if !out.run_failures.is_empty() {
        for f in &out.run_failures {
            writeln!(csv, "# failed: {f}")?;
        }
    }
    csv.flush()?;
    #[derive(Serialize)]
    struct Summary<'a> {
        config: &'a ExperimentConfig,
        placements: &'a [Placement],
        table: &'a ResultsTable,
        run_failures: &'a [String],
        notes: &'a [String],
    }
    write_json(
        &dir.join("results.json"),
        &Summary {
            config: &out.config,
            placements: &out.placements,
            table: &out.table,
            run_failures: &out.run_failures,
            notes: &out.notes,
        },
    )?;
    let rt_index = |rt: f64| out.config.rt60.iter().position(|r| *r == rt).unwrap_or(0);
    for rec in &out.records {
        write_json(&dir.join("runs").join(format!("{}.json", rec.file_stem(rt_index(rec.rt60)))), rec)?;
    }
    let per_scene = out.config.rt60.len();
    for (i, s) in out.scenes.iter().enumerate() {
        write_json(
            &dir.join("scenes").join(format!("scene{}_rt{}.json", i / per_scene, i % per_scene)),
            s,
        )?;
    }
    Ok(())
}
