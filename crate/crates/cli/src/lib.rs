//! Commands behind the `dualmesh` binary. Each returns the process exit
//! status: 0 success, 1 runtime or oracle failure, 2 input error.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;

use dualmesh::bundled;
use dualmesh::domain::Mode;
use dualmesh::engine::{self, EngineError, RunOutput, Simulation};
use dualmesh::generate::{random_scenario, Limits};
use dualmesh::oracle;
use dualmesh::results::{self, ComparisonRow, Format, SweepRow};
use dualmesh::scenario::{apply_override, derive_single_band, parse_scenario, serialize_scenario, Scenario};
use dualmesh::solver::{solve_instance, RateAssignment, RateInstance};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

pub const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct Options {
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub format: Format,
    pub quiet: bool,
}

impl Default for Options {
    fn default() -> Self {
        Options { out: PathBuf::from("results"), seed: None, format: Format::All, quiet: false }
    }
}

impl Options {
    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

#[derive(Debug)]
pub enum Failure {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => EXIT_INPUT,
            Failure::Runtime(_) => EXIT_FAILURE,
        }
    }

    fn report(&self) -> i32 {
        match self {
            Failure::Input(e) | Failure::Runtime(e) => eprintln!("error: {e:#}"),
        }
        self.exit_code()
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Scenario(_) => Failure::Input(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// Finds a scenario by path, by path plus `.toml`, or by bundled name.
pub fn load_scenario(arg: &str) -> Result<Scenario, Failure> {
    let path = Path::new(arg);
    let candidates = [path.to_path_buf(), PathBuf::from(format!("{arg}.toml"))];
    let found = candidates.iter().find(|p| p.is_file());
    let (origin, text) = match found {
        Some(p) => (p.display().to_string(), fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).map_err(Failure::Input)?),
        None => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(arg);
            let name = stem.strip_suffix(".toml").unwrap_or(stem);
            match bundled::source(name) {
                Some(text) => (format!("bundled:{name}"), text.to_string()),
                None => return Err(Failure::Input(anyhow::anyhow!("no scenario file or bundled scenario named {arg:?}"))),
            }
        }
    };
    parse_scenario(&text).with_context(|| format!("in {origin}")).map_err(Failure::Input)
}

fn with_seed(mut s: Scenario, opts: &Options) -> Scenario {
    if let Some(seed) = opts.seed {
        s.sim.seed = seed;
    }
    s
}

fn finish(r: Result<(), Failure>) -> i32 {
    match r {
        Ok(()) => EXIT_OK,
        Err(f) => f.report(),
    }
}

pub fn cmd_run(path: &str, opts: &Options) -> i32 {
    finish(run_inner(path, opts))
}

fn run_inner(path: &str, opts: &Options) -> Result<(), Failure> {
    let s = with_seed(load_scenario(path)?, opts);
    let out = engine::run(&s)?;
    results::write_run(&opts.out, &out, opts.format).map_err(runtime)?;
    opts.say(format!(
        "{}: average throughput {:.0} bps over {} nodes ({} s window)",
        out.scenario_name, out.report.average_bps, out.report.node_count, out.report.window_s
    ));
    Ok(())
}

/// Runs `s` and its single-band twin in parallel.
pub fn run_pair(s: &Scenario) -> Result<(RunOutput, RunOutput), Failure> {
    if s.mode != Mode::DualBand {
        return Err(Failure::Input(anyhow::anyhow!("scenario {:?} is already single-band; compare needs a dual-band input", s.name)));
    }
    let twin = derive_single_band(s).map_err(|e| Failure::Input(e.into()))?;
    let (a, b) = rayon::join(|| engine::run(s), || engine::run(&twin));
    Ok((a?, b?))
}

pub fn cmd_compare(paths: &[String], opts: &Options) -> i32 {
    finish(compare_inner(paths, opts))
}

fn compare_inner(paths: &[String], opts: &Options) -> Result<(), Failure> {
    let scenarios: Vec<Scenario> = paths.iter().map(|p| load_scenario(p).map(|s| with_seed(s, opts))).collect::<Result<_, _>>()?;
    let runs: Vec<(RunOutput, RunOutput)> = scenarios.par_iter().map(run_pair).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (dual, single) in &runs {
        let dir = opts.out.join(&dual.scenario_name);
        results::write_run(&dir.join("dual"), dual, opts.format).map_err(runtime)?;
        results::write_run(&dir.join("single"), single, opts.format).map_err(runtime)?;
        let row = ComparisonRow { case: dual.scenario_name.clone(), dual_avg_bps: dual.report.average_bps, single_avg_bps: single.report.average_bps };
        opts.say(format!("{}: dual {:.0} bps, single {:.0} bps, ratio {:.3}", row.case, row.dual_avg_bps, row.single_avg_bps, row.ratio()));
        rows.push(row);
    }
    results::write_comparison(&opts.out, &rows).map_err(runtime)?;
    Ok(())
}

pub fn cmd_sweep(path: &str, parameter: &str, values: &[String], opts: &Options) -> i32 {
    finish(sweep_inner(path, parameter, values, opts))
}

fn sweep_inner(path: &str, parameter: &str, values: &[String], opts: &Options) -> Result<(), Failure> {
    let base = with_seed(load_scenario(path)?, opts);
    let variants: Vec<Scenario> = values
        .iter()
        .map(|v| apply_override(&base, parameter, v).with_context(|| format!("{parameter} = {v}")).map_err(Failure::Input))
        .collect::<Result<_, _>>()?;
    let rows: Vec<SweepRow> = variants
        .par_iter()
        .zip(values.par_iter())
        .map(|(s, v)| {
            let (dual, single) = if s.mode == Mode::DualBand {
                let (d, x) = run_pair(s)?;
                (d, Some(x))
            } else {
                (engine::run(s)?, None)
            };
            Ok(SweepRow { value: v.clone(), dual_avg_bps: dual.report.average_bps, single_avg_bps: single.map(|x| x.report.average_bps) })
        })
        .collect::<Result<_, Failure>>()?;
    for r in &rows {
        opts.say(format!("{parameter} = {}: {:.0} bps{}", r.value, r.dual_avg_bps, r.single_avg_bps.map(|x| format!(" (single {x:.0} bps)")).unwrap_or_default()));
    }
    results::write_sweep(&opts.out, parameter, &rows).map_err(runtime)?;
    Ok(())
}

pub fn cmd_validate(path: &str, opts: &Options) -> i32 {
    finish(load_scenario(path).map(|s| opts.say(format!("{}: ok ({} nodes, {} flows)", s.name, s.nodes.len(), s.traffic.flows.len()))))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleLimits {
    pub max_nodes: usize,
    pub max_flows: usize,
}

impl Default for OracleLimits {
    fn default() -> Self {
        OracleLimits { max_nodes: 6, max_flows: 6 }
    }
}

/// Rate instances a scenario produces: mid-run and at the end, for the
/// scenario and its single-band twin.
pub fn sample_instances(s: &Scenario) -> Result<Vec<RateInstance>, EngineError> {
    let mut out = Vec::new();
    let mut variants = vec![s.clone()];
    if let Ok(t) = derive_single_band(s) {
        variants.push(t);
    }
    for v in variants {
        let mut sim = Simulation::new(&v)?;
        sim.run_until(v.sim.duration_s * 0.6)?;
        out.push(sim.rate_instance().clone());
        while sim.step()? {}
        out.push(sim.rate_instance().clone());
    }
    Ok(out)
}

pub fn cmd_oracle_check(limits: OracleLimits, seeds: u64, opts: &Options) -> i32 {
    cmd_oracle_check_with(limits, seeds, opts, solve_instance)
}

struct Mismatch {
    seed: u64,
    scenario: Box<Scenario>,
    message: String,
}

/// Oracle check against an arbitrary solver; the harness self-test feeds it
/// a corrupted one.
pub fn cmd_oracle_check_with(limits: OracleLimits, seeds: u64, opts: &Options, solver: fn(&RateInstance) -> RateAssignment) -> i32 {
    let base = opts.seed.unwrap_or(0);
    let gen = Limits::small(limits.max_nodes, limits.max_flows);
    let outcome: Vec<Result<usize, Mismatch>> = (base..base + seeds)
        .into_par_iter()
        .map(|seed| {
            let s = random_scenario(seed, &gen);
            let fail = |message: String| Mismatch { seed, scenario: Box::new(s.clone()), message };
            let instances = sample_instances(&s).map_err(|e| fail(e.to_string()))?;
            let mut flows = 0;
            for inst in &instances {
                let got = solver(inst);
                let bad = oracle::compare(inst, &got.rates, ORACLE_TOLERANCE);
                if let Some(m) = bad.first() {
                    return Err(fail(format!("flow {}: solver {} bps, oracle {} bps", m.flow, m.solver_bps, m.oracle_bps)));
                }
                flows += inst.flows.len();
            }
            Ok(flows)
        })
        .collect();
    let mut checked = 0;
    let mut failed = false;
    for r in outcome {
        match r {
            Ok(n) => checked += n,
            Err(Mismatch { seed, scenario, message: msg }) => {
                failed = true;
                let path = opts.out.join(format!("oracle_failure_seed{seed}.toml"));
                let written = fs::create_dir_all(&opts.out).and_then(|_| fs::write(&path, serialize_scenario(&scenario)));
                match written {
                    Ok(()) => eprintln!("mismatch at seed {seed}: {msg}; repro written to {}", path.display()),
                    Err(e) => eprintln!("mismatch at seed {seed}: {msg}; could not write repro: {e}"),
                }
            }
        }
    }
    if failed {
        return EXIT_FAILURE;
    }
    opts.say(format!("oracle check: {seeds} seeds, {checked} flow rates agree within {ORACLE_TOLERANCE:e}"));
    EXIT_OK
}

pub fn cmd_list(opts: &Options) -> i32 {
    for n in bundled::names() {
        opts.say(n);
    }
    EXIT_OK
}
