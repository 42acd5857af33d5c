//! `gtvv` command-line tool.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 numerical
//! failure during a run.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gtvv_core::baselines::{h_tdvv, srp_map, steered_gtvv};
use gtvv_core::eval::{self, ExperimentConfig, GridConfig, Method};
use gtvv_core::io;
use gtvv_core::room::{AmbisonicSignal, GroundTruthScene};
use gtvv_core::sh::{build_dictionary, Dictionary, Direction, GridScheme};
use gtvv_core::somp::somp;
use gtvv_core::spectral::{stft, GtvvMatrix, SpectrumTensor};
use gtvv_core::GtvvError;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gtvv", version, about = "Generalized time-domain velocity vector analysis of Ambisonic recordings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate room scenes and write Ambisonic WAV files plus ground truth.
    Simulate(Common),
    /// Estimate a GTVV (or SRP map) from an Ambisonic WAV and dump it.
    Estimate(WithInput),
    /// Estimate wavefront directions and delays from an Ambisonic WAV.
    Infer(WithInput),
    /// Run the full experiment sweep and write result tables.
    Evaluate(Common),
    /// Write H-TDVV and GTVV magnitude traces as CSV.
    Traces(WithInput),
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). Defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Ambisonic order; restricts the sweep to this order.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    order: Option<u8>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
}

#[derive(Args, Clone)]
struct WithInput {
    #[command(flatten)]
    common: Common,
    /// Ambisonic WAV (ACN/SN3D). `traces` simulates the first configured
    /// scene when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Ground-truth scene JSON for scoring the estimates.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Analysis segment index.
    #[arg(long, default_value_t = 0)]
    segment: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Gtvv,
    Htdvv,
    Srp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gtvv => Method::Gtvv,
            MethodArg::Htdvv => Method::Htdvv,
            MethodArg::Srp => Method::Srp,
        }
    }
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<GtvvError> for Failure {
    fn from(e: GtvvError) -> Self {
        if e.is_config_error() {
            Failure::Config(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn config_failure(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn load_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(order) = c.order {
        cfg.orders = vec![order as usize];
    }
    if let Some(m) = c.method {
        cfg.methods = vec![m.into()];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(c: &Common) -> CliResult<&Path> {
    std::fs::create_dir_all(&c.out).map_err(|e| config_failure(format!("{}: {e}", c.out.display())))?;
    Ok(&c.out)
}

fn simulate(cfg: &ExperimentConfig, scene: usize, rt_index: usize) -> CliResult<(GroundTruthScene, AmbisonicSignal)> {
    let placements = eval::resolve_placements(cfg);
    let p = placements
        .get(scene)
        .ok_or_else(|| config_failure(format!("scene {scene} not configured")))?;
    let recording = eval::load_source(cfg)?;
    let truth = eval::simulate_scene(cfg, p, rt_index)?;
    let sig = eval::simulate_signal(cfg, &truth, scene, rt_index, recording.as_deref())?;
    Ok((truth, sig))
}

fn cmd_simulate(c: &Common) -> CliResult<()> {
    let cfg = load_config(c)?;
    let out = output_dir(c)?;
    let placements = eval::resolve_placements(&cfg);
    for scene in 0..placements.len() {
        for rt_index in 0..cfg.rt60.len() {
            let (truth, sig) = simulate(&cfg, scene, rt_index)?;
            let stem = format!("scene{scene}_rt{rt_index}");
            io::write_wav(&out.join(format!("{stem}.wav")), &sig)?;
            io::write_scene(&out.join(format!("{stem}.json")), &truth)?;
            log::info!("wrote {stem} ({} wavefronts)", truth.wavefronts.len());
        }
    }
    Ok(())
}

struct Analysis {
    cfg: ExperimentConfig,
    spec: SpectrumTensor,
    dict: Dictionary,
    truth: Option<GroundTruthScene>,
}

fn prepare(w: &WithInput, simulate_if_missing: bool) -> CliResult<Analysis> {
    let cfg = load_config(&w.common)?;
    let order = cfg.max_order();
    let (sig, simulated) = match &w.input {
        Some(p) => (
            io::read_ambisonic_wav(p).map_err(|e| config_failure(format!("{}: {e}", p.display())))?,
            None,
        ),
        None if simulate_if_missing => {
            let (truth, sig) = simulate(&cfg, 0, 0)?;
            (sig, Some(truth))
        }
        None => return Err(config_failure("--input is required")),
    };
    if sig.order() < order {
        return Err(config_failure(format!(
            "input has order {}, order {order} requested",
            sig.order()
        )));
    }
    let truth = match &w.scene {
        Some(p) => Some(io::read_scene(p).map_err(|e| config_failure(format!("{}: {e}", p.display())))?),
        None => simulated,
    };
    let full = stft(&sig.truncate_order(order)?, cfg.win_len, cfg.hop)?;
    let frames = cfg.segment_frames();
    let spec = full.frame_range(w.segment * frames, frames).map_err(|_| {
        config_failure(format!(
            "input too short for segment {} ({} frames, {} per segment)",
            w.segment,
            full.frames(),
            frames
        ))
    })?;
    let scheme = match &cfg.grid {
        GridConfig::Fibonacci => GridScheme::Fibonacci,
        GridConfig::File(p) => GridScheme::File(p.clone()),
    };
    let dict = build_dictionary(cfg.dict_size, order, &scheme).map_err(config_failure)?;
    Ok(Analysis { cfg, spec, dict, truth })
}

fn requested_method(c: &Common) -> Method {
    c.method.map(Method::from).unwrap_or(Method::Gtvv)
}

/// H-TDVV and the GTVV steered at its DoA.
fn velocity_pair(a: &Analysis) -> CliResult<(GtvvMatrix, GtvvMatrix)> {
    let htdvv = h_tdvv(&a.spec, &a.cfg.estimator)?;
    let doa: Direction = somp(&htdvv, &a.dict, 1)?.directions[0];
    let gtvv = steered_gtvv(&a.spec, &a.cfg.estimator, &doa)?;
    Ok((htdvv, gtvv))
}

fn cmd_estimate(w: &WithInput) -> CliResult<()> {
    let a = prepare(w, false)?;
    let out = output_dir(&w.common)?;
    match requested_method(&w.common) {
        Method::Srp => {
            let map = srp_map(&a.spec, &a.dict)?;
            let f = std::fs::File::create(out.join("srp_map.csv")).map_err(GtvvError::from)?;
            map.write_csv(std::io::BufWriter::new(f)).map_err(GtvvError::from)?;
        }
        Method::Htdvv => {
            let v = h_tdvv(&a.spec, &a.cfg.estimator)?;
            io::dump_traces(&v, &out.join("htdvv_traces.csv"))?;
        }
        Method::Gtvv => {
            let (_, v) = velocity_pair(&a)?;
            io::dump_traces(&v, &out.join("gtvv_traces.csv"))?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct SrpResult {
    doa_deg: [f64; 2],
}

fn cmd_infer(w: &WithInput) -> CliResult<()> {
    let a = prepare(w, false)?;
    let out = output_dir(&w.common)?;
    let method = requested_method(&w.common);
    let gate = a.cfg.gate_deg.to_radians();
    let outcomes = eval::analyze_segment(
        &a.spec,
        &a.dict,
        &a.cfg.estimator,
        a.cfg.iteration_cap(a.dict.order()),
        &[method],
        a.truth.as_ref(),
        gate,
    );
    let outcome = &outcomes[0];
    if let Some(e) = &outcome.error {
        return Err(Failure::Numerical(e.clone()));
    }
    io::write_json(&out.join(format!("{}_estimates.json", method.name())), outcome)?;
    if method == Method::Srp {
        let d = outcome.doa_deg.expect("srp outcome carries a DoA");
        io::write_json(&out.join("srp_doa.json"), &SrpResult { doa_deg: d })?;
    }
    if let Some(e) = &outcome.estimates {
        for (d, t) in e.directions_deg.iter().zip(&e.delays_ms) {
            println!("az {:8.2} deg  el {:7.2} deg  delay {:7.3} ms", d[0], d[1], t);
        }
    } else if let Some(d) = outcome.doa_deg {
        println!("az {:8.2} deg  el {:7.2} deg", d[0], d[1]);
    }
    Ok(())
}

fn cmd_evaluate(c: &Common) -> CliResult<()> {
    let cfg = load_config(c)?;
    let out = output_dir(c)?;
    let result = eval::run_experiment(&cfg)?;
    eval::write_outputs(&result, out)?;
    result
        .table
        .write_csv(std::io::stdout().lock())
        .map_err(GtvvError::from)?;
    if !result.run_failures.is_empty() {
        return Err(Failure::Numerical(format!("{} runs failed", result.run_failures.len())));
    }
    Ok(())
}

fn cmd_traces(w: &WithInput) -> CliResult<()> {
    let a = prepare(w, true)?;
    let out = output_dir(&w.common)?;
    let (htdvv, gtvv) = velocity_pair(&a)?;
    io::dump_traces(&htdvv, &out.join("htdvv_traces.csv"))?;
    io::dump_traces(&gtvv, &out.join("gtvv_traces.csv"))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Estimate(w) => cmd_estimate(w),
        Command::Infer(w) => cmd_infer(w),
        Command::Evaluate(c) => cmd_evaluate(c),
        Command::Traces(w) => cmd_traces(w),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
