//! Commands behind the `nfplace` binary.
//!
//! Each command takes a fully inlined [`RunConfig`] and an output
//! directory, writes its files there and returns the list of outputs.
//! [`run`] wraps a command with a [`RunManifest`]; [`replay`] re-runs a
//! manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{RunConfig, RunManifest};
use crate::error::{Error, Result};
use crate::fim::position_fim;
use crate::likelihood::{axis_cut, surface_scan, ScanProblem};
use crate::metric::{eccdf, rho, sample_peb_map, write_file, InformationTable, PebMap};
use crate::optimizer::{default_initial, exhaustive_search, greedy_search, Evaluator, Strategy};
use crate::deployment::Selection;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit code for an error: 2 configuration, 3 infeasible trial,
/// 4 non-identifiable, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Read { .. } | Error::Parse { .. } | Error::InvalidInput(_) => 2,
        Error::Infeasible { .. } => 3,
        Error::NonIdentifiable { .. } | Error::NoIdentifiableDeployment { .. } | Error::GreedyStalled { .. } => 4,
        Error::Write { .. } | Error::ZeroDirection => 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    PebMap,
    Optimize,
    Likelihood,
    Eccdf,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::PebMap => "peb-map",
            Command::Optimize => "optimize",
            Command::Likelihood => "likelihood",
            Command::Eccdf => "eccdf",
        }
    }
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Command::PebMap, Command::Optimize, Command::Likelihood, Command::Eccdf]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// Files written by a command, plus what it prints to standard output.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub evaluations: usize,
    pub stdout: String,
}

struct Writer<'a> {
    dir: &'a Path,
    outputs: Vec<String>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, contents: &str) -> Result<()> {
        write_file(&self.dir.join(name), contents)?;
        self.outputs.push(name.to_owned());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("output serializes");
        text.push('\n');
        self.put(name, &text)
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Write { path: dir.to_owned(), source })
}

#[derive(Serialize)]
struct MapSummary {
    label: String,
    epsilon: f64,
    /// `null` when more than an ε fraction of cells is non-identifiable.
    rho_m: Option<f64>,
    cells: usize,
    non_identifiable_cells: usize,
}

impl MapSummary {
    fn of(map: &PebMap, epsilon: f64) -> Result<Self> {
        let r = rho(map, epsilon)?;
        Ok(MapSummary {
            label: map.label.clone(),
            epsilon,
            rho_m: r.is_finite().then_some(r),
            cells: map.values.len(),
            non_identifiable_cells: map.non_identifiable_cells(),
        })
    }
}

pub fn peb_map(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let r = cfg.resolve(Path::new("."))?;
    let dep = r.deployment(cfg)?;
    let suffix = if r.scenario.ground_reflection { "" } else { "_los" };
    let label = format!("{}{suffix}", cfg.mode);
    eprintln!("peb-map: {} sub-arrays, {} poses, {label}", dep.len(), cfg.sampling.cells());
    let map = sample_peb_map(&dep, &cfg.sampling, &r.scenario, &r.body, cfg.mode, &label)?;
    let summary = MapSummary::of(&map, r.scenario.peb_percentile)?;
    let mut w = Writer { dir: out, outputs: Vec::new() };
    w.put(&format!("peb_map_{label}.csv"), &map.to_csv())?;
    if map.values.iter().any(|v| v.is_finite()) {
        w.put(&format!("eccdf_{label}.csv"), &eccdf(&map)?.to_csv())?;
    }
    w.json(&format!("summary_{label}.json"), &summary)?;
    let stdout = match summary.rho_m {
        Some(v) => format!("rho_m={v:e} non_identifiable_cells={}\n", summary.non_identifiable_cells),
        None => format!("rho_m=inf non_identifiable_cells={}\n", summary.non_identifiable_cells),
    };
    Ok(Outcome { outputs: w.outputs, evaluations: map.values.len(), stdout })
}

pub fn optimize(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let r = cfg.resolve(Path::new("."))?;
    let k = cfg.trial.k;
    eprintln!(
        "optimize: {} K = {k}, M = {}, {} poses, tabulating {} placements",
        cfg.trial.strategy,
        r.layout.len(),
        cfg.sampling.cells(),
        r.grid.placement_count()
    );
    let table = InformationTable::build(&r.grid.placements(&r.layout), &cfg.sampling, &r.scenario, &r.body)?;
    let eval = Evaluator::new(&r.grid, &table, cfg.mode, r.scenario.peb_percentile)?;
    let trial = match cfg.trial.strategy {
        Strategy::Exhaustive => exhaustive_search(&eval, k)?,
        Strategy::Greedy => {
            let initial = match &cfg.trial.initial {
                Some(ids) => {
                    if let Some(bad) = ids.iter().find(|&&i| i >= r.grid.len()) {
                        return Err(Error::Config(format!("initial selection refers to grid point {bad}")));
                    }
                    Selection::from_ids(ids)
                }
                None => default_initial(&r.grid)?,
            };
            greedy_search(&eval, k, initial)?
        }
    };
    let mut w = Writer { dir: out, outputs: Vec::new() };
    w.json("trial.json", &trial)?;
    w.put("ranking.csv", &trial.ranking_csv())?;
    w.json("best_grid.json", &r.grid.subset(trial.best.selection)?.to_file())?;
    let stdout = format!(
        "total={} identifiable={} discarded={} best={:?} rho_m={:e}\n",
        trial.total, trial.identifiable, trial.discarded, trial.best.ids, trial.best.rho
    );
    Ok(Outcome { outputs: w.outputs, evaluations: eval.evaluations(), stdout })
}

pub fn likelihood(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let r = cfg.resolve(Path::new("."))?;
    let dep = r.deployment(cfg)?;
    let truth = r.likelihood_pose(cfg);
    let fim = position_fim(&dep, &truth, &r.scenario, &r.body, cfg.mode)?;
    if !fim.identifiable {
        return Err(Error::NonIdentifiable { rcond: fim.rcond });
    }
    let l = &cfg.likelihood;
    let lambda = r.scenario.wavelength();
    let offsets = r.scenario.true_offsets(cfg.mode, dep.len());
    let problem = ScanProblem::new(&dep, truth, &r.scenario, &r.body, offsets, l.noise.then_some(cfg.seed))?;
    let mut w = Writer { dir: out, outputs: Vec::new() };
    let mut evaluations = 0;
    let mut stdout = String::new();
    let mode = cfg.mode;
    if l.surface {
        let spacing = l.spacing.meters(lambda)?;
        eprintln!("likelihood: {mode} surface, spacing {spacing:e} m");
        let s = surface_scan(&problem, mode, l.half_width_m, spacing)?;
        evaluations += s.values.len();
        let (i, j, v) = s.global_minimum();
        stdout.push_str(&format!(
            "surface minimum {v:e} at x={} y={}, {} secondary minima\n",
            s.x_m[j],
            s.y_m[i],
            s.secondary_minima().len()
        ));
        w.put(&format!("surface_{mode}.csv"), &s.to_csv())?;
        w.put(&format!("surface_{mode}.json"), &s.sidecar_json())?;
    }
    for &axis in &l.cuts {
        let spacing = l.cut_spacing.meters(lambda)?;
        eprintln!("likelihood: {mode} {axis} cut, spacing {spacing:e} m");
        let c = axis_cut(&problem, mode, axis, l.cut_half_width_m, spacing)?;
        evaluations += c.values.len();
        match c.minima_spacing() {
            Some(d) => stdout.push_str(&format!("{axis} cut minima spacing {d:e} m\n")),
            None => stdout.push_str(&format!("{axis} cut has fewer than two local minima\n")),
        }
        w.put(&format!("cut_{axis}_{mode}.csv"), &c.to_csv())?;
        w.put(&format!("cut_{axis}_{mode}.json"), &c.sidecar_json())?;
    }
    Ok(Outcome { outputs: w.outputs, evaluations, stdout })
}

/// ECCDF and ρ of an existing map file; `arguments` holds the map path.
pub fn eccdf_of_map(cfg: &RunConfig, arguments: &[String], out: &Path) -> Result<Outcome> {
    let [path] = arguments else {
        return Err(Error::Config("eccdf needs exactly one map file".into()));
    };
    let path = Path::new(path);
    let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_owned(), source })?;
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("map");
    let label = label.strip_prefix("peb_map_").unwrap_or(label);
    let map = PebMap::from_csv(&text, label)?;
    let epsilon = cfg.resolve(Path::new("."))?.scenario.peb_percentile;
    let summary = MapSummary::of(&map, epsilon)?;
    let mut w = Writer { dir: out, outputs: Vec::new() };
    w.put(&format!("eccdf_{label}.csv"), &eccdf(&map)?.to_csv())?;
    w.json(&format!("summary_{label}.json"), &summary)?;
    let stdout = match summary.rho_m {
        Some(v) => format!("rho_m={v:e}\n"),
        None => "rho_m=inf\n".to_owned(),
    };
    Ok(Outcome { outputs: w.outputs, evaluations: 0, stdout })
}

pub fn execute(command: Command, cfg: &RunConfig, arguments: &[String], out: &Path) -> Result<Outcome> {
    create_dir(out)?;
    match command {
        Command::PebMap => peb_map(cfg, out),
        Command::Optimize => optimize(cfg, out),
        Command::Likelihood => likelihood(cfg, out),
        Command::Eccdf => eccdf_of_map(cfg, arguments, out),
    }
}

/// Run a command on an inlined config and write `manifest.json` next to
/// its outputs.
pub fn run(command: Command, cfg: &RunConfig, arguments: &[String], out: &Path) -> Result<(RunManifest, Outcome)> {
    let start = Instant::now();
    let outcome = execute(command, cfg, arguments, out)?;
    let manifest = RunManifest {
        version: VERSION.to_owned(),
        command: command.name().to_owned(),
        arguments: arguments.to_vec(),
        seed: cfg.seed,
        config: cfg.clone(),
        outputs: outcome.outputs.clone(),
        wall_clock_s: start.elapsed().as_secs_f64(),
        evaluations: outcome.evaluations,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&out.join("manifest.json"), &text)?;
    Ok((manifest, outcome))
}

/// Re-run a manifest into `out`.
pub fn replay(manifest: &Path, out: &Path) -> Result<(RunManifest, Outcome)> {
    let m = RunManifest::load(manifest)?;
    if m.version != VERSION {
        eprintln!("replay: manifest written by version {}, running {VERSION}", m.version);
    }
    let command: Command = m.command.parse()?;
    run(command, &m.config, &m.arguments, out)
}

/// Absolute form of a path argument, so a manifest stays valid from any
/// working directory.
pub fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_owned())
}
