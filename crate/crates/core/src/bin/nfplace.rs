use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nfplace::cli::{self, Command};
use nfplace::config::{RunConfig, Source, Spacing};
use nfplace::likelihood::Axis;
use nfplace::optimizer::Strategy;
use nfplace::scenario::Mode;
use nfplace::Result;

/// Sub-array placement evaluation for near-field vehicular positioning.
#[derive(Parser)]
#[command(name = "nfplace", version)]
struct Cli {
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON). Built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,

    #[arg(long)]
    mode: Option<Mode>,

    /// Model the ground-reflected path.
    #[arg(long, value_enum)]
    ground_reflection: Option<OnOff>,

    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// PEB over the pose grid for the configured selection.
    PebMap(Common),
    /// Search the grid for the deployment with the lowest ρ.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Number of sub-arrays.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        strategy: Option<Strategy>,
    },
    /// Compressed likelihood surface and axis cuts around the true pose.
    Likelihood {
        #[command(flatten)]
        common: Common,
        /// Axis cut through the truth; repeatable. Disables the surface
        /// unless `--surface` is given.
        #[arg(long)]
        cut: Vec<Axis>,
        #[arg(long)]
        surface: bool,
        /// Sample spacing in meters or `lambda`, `lambda/10`, `lambda/100`;
        /// applies to the cuts when any are requested.
        #[arg(long)]
        spacing: Option<Spacing>,
        /// Add receiver noise drawn from the seed.
        #[arg(long)]
        noise: bool,
    },
    /// ECCDF and ρ of a PEB map CSV.
    Eccdf {
        /// Map written by `peb-map`.
        #[arg(long)]
        map: PathBuf,
        /// Run configuration supplying ε.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: Option<&Path>) -> Result<RunConfig> {
    match config {
        None => RunConfig::default().snapshot(Path::new(".")),
        Some(p) => {
            let (cfg, base) = RunConfig::load(p)?;
            cfg.snapshot(&base)
        }
    }
}

fn prepare(c: &Common) -> Result<RunConfig> {
    let mut cfg = load(c.config.as_deref())?;
    if let Some(m) = c.mode {
        cfg.mode = m;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let (Some(g), Some(Source::Inline(s))) = (c.ground_reflection, cfg.scenario.as_mut()) {
        s.ground_reflection = matches!(g, OnOff::On);
    }
    Ok(cfg)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    let (command, cfg, arguments, out) = match cmd {
        Cmd::Replay { manifest, out } => {
            let (_, outcome) = cli::replay(&manifest, &out)?;
            print!("{}", outcome.stdout);
            return Ok(());
        }
        Cmd::PebMap(c) => (Command::PebMap, prepare(&c)?, Vec::new(), c.out),
        Cmd::Optimize { common, k, strategy } => {
            let mut cfg = prepare(&common)?;
            if let Some(k) = k {
                cfg.trial.k = k;
            }
            if let Some(s) = strategy {
                cfg.trial.strategy = s;
            }
            (Command::Optimize, cfg, Vec::new(), common.out)
        }
        Cmd::Likelihood { common, cut, surface, spacing, noise } => {
            let mut cfg = prepare(&common)?;
            let l = &mut cfg.likelihood;
            if !cut.is_empty() {
                l.cuts = cut;
                l.surface = surface;
                if let Some(s) = spacing {
                    l.cut_spacing = s;
                }
            } else if let Some(s) = spacing {
                l.spacing = s;
            }
            l.surface |= surface;
            l.noise |= noise;
            (Command::Likelihood, cfg, Vec::new(), common.out)
        }
        Cmd::Eccdf { map, config, out } => {
            let cfg = load(config.as_deref())?;
            let arg = cli::absolute(&map).to_string_lossy().into_owned();
            (Command::Eccdf, cfg, vec![arg], out)
        }
    };
    let (_, outcome) = cli::run(command, &cfg, &arguments, &out)?;
    print!("{}", outcome.stdout);
    eprintln!("{}: wrote {} files to {}", command.name(), outcome.outputs.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Cli::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(args.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}

