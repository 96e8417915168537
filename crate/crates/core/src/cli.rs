//! Command-line front end: `fuzz`, `cmin`, `ablate`, `report` and
//! `fixture`. Exit codes: 0 ok, 1 runtime failure, 2 usage or config error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{run_ablation, summary_text, AblationConfig};
use crate::config::{resolve_meter, AblateSection, ConfigError, HavocSection, SchedulerSection, Settings, METER_ENV};
use crate::corpus::{coverage_minimise, load_seed_dir, minimise, profile_corpus, write_minimised, SeedInput};
use crate::energy::Meter;
use crate::engine::{fixtures, run_campaign_with_seeds, CampaignConfig, EngineError};
use crate::report::{build_curves, find_campaigns, load_campaign, report_text, write_report, Axis};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "greenfuzz", version, about = "Energy-aware coverage-guided fuzzer")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one fuzzing campaign.
    Fuzz(CampaignArgs),
    /// Minimise a seed corpus.
    Cmin(CampaignArgs),
    /// Run the 2x2 ablation matrix.
    Ablate(AblateArgs),
    /// Average edges-over-time curves from campaign directories.
    Report(ReportArgs),
    /// Write a built-in seed corpus to a directory.
    Fixture(FixtureArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CampaignArgs {
    /// `synthetic:<model>` or `exec:<command> [args]` (`@@` = input file).
    #[arg(long)]
    pub target: Option<String>,
    #[arg(short = 'i', long = "corpus", alias = "corpus-dir")]
    pub corpus_dir: Option<PathBuf>,
    #[arg(short = 'o', long = "output", alias = "output-dir")]
    pub output_dir: Option<PathBuf>,
    /// rapl or synthetic.
    #[arg(long)]
    pub meter: Option<String>,
    /// green, coverage or off.
    #[arg(long, alias = "mode")]
    pub cmin: Option<String>,
    /// green or baseline.
    #[arg(long)]
    pub heuristics: Option<String>,
    #[arg(long)]
    pub max_execs: Option<u64>,
    /// e.g. 30s, 10m, 2h.
    #[arg(long)]
    pub duration: Option<String>,
    #[arg(long = "rng", alias = "rng-seed")]
    pub rng_seed: Option<u64>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    #[arg(long)]
    pub total_edges: Option<usize>,
    #[arg(long)]
    pub map_size: Option<usize>,
    /// Profile initial seeds on all cores (synthetic meter only).
    #[arg(long)]
    pub parallel_profiling: bool,
    #[arg(long)]
    pub airtime_min_mult: Option<f64>,
    #[arg(long)]
    pub airtime_max_mult: Option<f64>,
    #[arg(long)]
    pub favoured_min_mult: Option<f64>,
    #[arg(long)]
    pub favoured_max_mult: Option<f64>,
    #[arg(long)]
    pub havoc_max_mult: Option<f64>,
    #[arg(long)]
    pub havoc_divisor: Option<f64>,
    #[arg(long)]
    pub havoc_min_execs: Option<u32>,
    #[arg(long)]
    pub havoc_max_stack_pow: Option<u32>,
    #[arg(long)]
    pub splice_prob: Option<f64>,
    #[arg(long)]
    pub max_input_len: Option<usize>,
}

impl CampaignArgs {
    fn settings(&self) -> Settings {
        Settings {
            target: self.target.clone(),
            corpus_dir: self.corpus_dir.clone(),
            output_dir: self.output_dir.clone(),
            meter: self.meter.clone(),
            cmin: self.cmin.clone(),
            heuristics: self.heuristics.clone(),
            max_execs: self.max_execs,
            duration: self.duration.clone(),
            rng_seed: self.rng_seed,
            timeout_ms: self.timeout_ms,
            total_edges: self.total_edges,
            map_size: self.map_size,
            parallel_profiling: self.parallel_profiling.then_some(true),
            scheduler: SchedulerSection {
                airtime_min_mult: self.airtime_min_mult,
                airtime_max_mult: self.airtime_max_mult,
                favoured_min_mult: self.favoured_min_mult,
                favoured_max_mult: self.favoured_max_mult,
                havoc_max_mult: self.havoc_max_mult,
            },
            havoc: HavocSection {
                divisor: self.havoc_divisor,
                min_execs: self.havoc_min_execs,
                max_stack_pow: self.havoc_max_stack_pow,
                splice_prob: self.splice_prob,
                max_input_len: self.max_input_len,
            },
            ablate: AblateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub campaign: CampaignArgs,
    /// Repetitions per arm.
    #[arg(short = 'r', long)]
    pub repetitions: Option<u32>,
    /// Run campaigns concurrently (synthetic meter only).
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Campaign or ablation output directories (searched recursively).
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
    /// time or execs.
    #[arg(long, default_value = "time")]
    pub axis: String,
    /// Bin width in seconds or executions (default 1 s / 1000 execs).
    #[arg(long)]
    pub bin: Option<f64>,
    /// Write curves.csv and report.txt here instead of printing.
    #[arg(short = 'o', long = "output")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FixtureArgs {
    /// One of the built-in corpora.
    pub name: String,
    pub dir: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.0)
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            EngineError::Config(_) | EngineError::UnknownModel(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn layered(file: &Option<PathBuf>, flags: Settings) -> Result<(Settings, Settings), CliError> {
    let file = match file {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    Ok((flags.clone().over(file.clone()), file))
}

/// Merged settings plus the campaign config they describe.
fn campaign_config(cli_config: &Option<PathBuf>, args: &CampaignArgs) -> Result<(Settings, CampaignConfig), CliError> {
    let (merged, file) = layered(cli_config, args.settings())?;
    let env = std::env::var(METER_ENV).ok();
    let meter = resolve_meter(args.meter.as_deref(), env.as_deref(), file.meter.as_deref())?;
    let config = merged.to_campaign(meter)?;
    Ok((merged, config))
}

fn load_seeds(dir: &Path) -> Result<Vec<SeedInput>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("corpus directory {} does not exist", dir.display())));
    }
    let seeds = load_seed_dir(dir).map_err(|e| CliError::Usage(e.to_string()))?;
    if seeds.is_empty() {
        return Err(CliError::Usage(format!("corpus directory {} is empty", dir.display())));
    }
    Ok(seeds)
}

fn cmd_fuzz(cli_config: &Option<PathBuf>, args: &CampaignArgs) -> CliResult {
    let (_, config) = campaign_config(cli_config, args)?;
    let seeds = load_seeds(&config.corpus_dir)?;
    let r = run_campaign_with_seeds(&config, &seeds)?;
    println!("{} rng={} target={}", r.label, r.rng_seed, r.target);
    println!(
        "execs {} ({} profiling) in {:.3} s, {:.1} exec/s",
        r.total_execs, r.profiling_execs, r.elapsed_s, r.execs_per_sec
    );
    match r.coverage_pct {
        Some(p) => println!("edges {} ({p:.2}%), queue {}, crashes {}", r.unique_edges, r.queue_len, r.crashes),
        None => println!("edges {}, queue {}, crashes {}", r.unique_edges, r.queue_len, r.crashes),
    }
    println!("energy {:.6} J (cpu {:.6}, ram {:.6})", r.energy_j, r.cpu_j, r.ram_j);
    if let Some(dir) = &config.output_dir {
        println!("results in {}", dir.display());
    }
    Ok(())
}

fn cmd_cmin(cli_config: &Option<PathBuf>, args: &CampaignArgs) -> CliResult {
    let (_, config) = campaign_config(cli_config, args)?;
    let seeds = load_seeds(&config.corpus_dir)?;
    let target = config.target.resolve()?;
    let mut meter = Meter::open(config.meter).map_err(|e| CliError::Runtime(e.to_string()))?;
    let profile =
        profile_corpus(&seeds, &target, &mut meter, config.profiling).map_err(|e| CliError::Runtime(e.to_string()))?;
    if profile.records.is_empty() {
        return Err(CliError::Runtime("every seed crashed or timed out".into()));
    }
    let kept = minimise(config.cmin, &profile.records);
    let energy = |ids: &mut dyn Iterator<Item = &str>| -> f64 {
        let ids: Vec<&str> = ids.collect();
        profile.records.iter().filter(|r| ids.contains(&r.id.as_str())).map(|r| r.energy.total()).sum()
    };
    let kept_j = energy(&mut kept.iter().map(|r| r.id.as_str()));
    let coverage_ids = coverage_minimise(&profile.records);
    let coverage_j = energy(&mut coverage_ids.iter().map(|s| s.as_str()));

    println!("kept {}/{} seeds ({} mode)", kept.len(), seeds.len(), config.cmin);
    if !profile.rejected.is_empty() {
        println!("{} seeds crashed or timed out and were dropped", profile.rejected.len());
    }
    let saved = coverage_j - kept_j;
    let pct = if coverage_j > 0.0 { 100.0 * saved / coverage_j } else { 0.0 };
    println!(
        "energy of kept seeds {kept_j:.6} J; coverage-only rule keeps {} seeds at {coverage_j:.6} J; saved {saved:.6} J ({pct:.1}%)",
        coverage_ids.len()
    );
    if let Some(out) = &config.output_dir {
        let m = write_minimised(config.cmin, seeds.len(), &kept, out).map_err(|e| CliError::Runtime(e.to_string()))?;
        println!("wrote {} seeds covering {} edges to {}", m.kept, m.total_edges, out.display());
    }
    Ok(())
}

fn cmd_ablate(cli_config: &Option<PathBuf>, args: &AblateArgs) -> CliResult {
    let (merged, config) = campaign_config(cli_config, &args.campaign)?;
    let repetitions = args.repetitions.or(merged.ablate.repetitions).unwrap_or(3);
    if repetitions < 1 {
        return Err(CliError::Usage("repetitions must be at least 1".into()));
    }
    let parallel = args.parallel || merged.ablate.parallel.unwrap_or(false);
    let seeds = load_seeds(&config.corpus_dir)?;
    let output_dir = config.output_dir.clone();
    let ablation = AblationConfig { base: config, repetitions, parallel, output_dir };
    let summary = run_ablation(&ablation, &seeds)?;
    print!("{}", summary_text(&summary));
    if let Some(dir) = &ablation.output_dir {
        println!("\nper-run reports and summary.csv in {}", dir.display());
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> CliResult {
    let axis: Axis = args.axis.parse().map_err(CliError::Usage)?;
    let bin = args.bin.unwrap_or(axis.default_bin());
    if !(bin.is_finite() && bin > 0.0) {
        return Err(CliError::Usage("bin width must be positive".into()));
    }
    let mut campaigns = Vec::new();
    for d in &args.dirs {
        if !d.is_dir() {
            return Err(CliError::Usage(format!("{} is not a directory", d.display())));
        }
        for c in find_campaigns(d) {
            campaigns.push(load_campaign(&c)?);
        }
    }
    if campaigns.is_empty() {
        return Err(CliError::Usage("no campaign directories found".into()));
    }
    let curves = build_curves(&campaigns, axis, bin);
    match &args.output_dir {
        Some(out) => {
            write_report(out, &curves, axis, bin)?;
            println!("wrote {} configurations to {}", curves.len(), out.display());
        }
        None => print!("{}", report_text(&curves, axis, bin)),
    }
    Ok(())
}

fn cmd_fixture(args: &FixtureArgs) -> CliResult {
    let seeds = fixtures::corpus(&args.name).ok_or_else(|| {
        CliError::Usage(format!("unknown corpus `{}` (known: {})", args.name, fixtures::CORPORA.join(", ")))
    })?;
    fs::create_dir_all(&args.dir).map_err(|e| CliError::Runtime(format!("{}: {e}", args.dir.display())))?;
    for (name, bytes) in &seeds {
        let p = args.dir.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
    }
    println!("wrote {} seeds to {}", seeds.len(), args.dir.display());
    Ok(())
}

pub fn run(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Fuzz(a) => cmd_fuzz(&cli.config, a),
        Command::Cmin(a) => cmd_cmin(&cli.config, a),
        Command::Ablate(a) => cmd_ablate(&cli.config, a),
        Command::Report(a) => cmd_report(a),
        Command::Fixture(a) => cmd_fixture(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = match &e {
                CliError::Usage(m) | CliError::Runtime(m) => m,
            };
            eprintln!("greenfuzz: {msg}");
            e.exit_code()
        }
    }
}
