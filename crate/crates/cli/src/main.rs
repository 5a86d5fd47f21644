use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vfloc::bench::{run_suite, SuiteSettings};
use vfloc::dapw::{decompose, Decomposition};
use vfloc::demod::{demodulate_channel, ModulatingSignal};
use vfloc::grid::{quasi_stationary_warnings, synthesize, GridError, ScenarioConfig, Topology};
use vfloc::io::{
    import_dataset, read_binary_recording, read_recording, read_recording_dir, write_recording_dir, write_report,
    ReportBody, ReportFile, UnsupportedLayout,
};
use vfloc::localize::{run_identification, AnalysisSettings, LocalizeError};
use vfloc::{ChannelId, Error};

mod exit {
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const SCHEMA: u8 = 4;
    pub const ANALYSIS: u8 = 5;
}

/// A failed command: exit status plus a one-line diagnostic.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn schema(message: impl Into<String>) -> Self {
        Self::new(exit::SCHEMA, message)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => exit::IO,
            Error::Format(_) => exit::SCHEMA,
            Error::Localize(LocalizeError::Settings(_)) => exit::SCHEMA,
            Error::Demod(vfloc::demod::DemodError::Settings(_)) => exit::SCHEMA,
            Error::Dapw(vfloc::dapw::DapwError::Settings(_)) => exit::SCHEMA,
            Error::Grid(GridError::Singular(_)) => exit::ANALYSIS,
            Error::Grid(_) => exit::SCHEMA,
            _ => exit::ANALYSIS,
        };
        Failure::new(code, e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "vfloc", version, about = "Identify and localize voltage fluctuation sources in radial LV grids")]
struct Cli {
    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a multi-point recording from a scenario file.
    Simulate(SimulateArgs),
    /// Identify and localize fluctuation sources in a recording directory.
    Analyze(AnalyzeArgs),
    /// Run a randomized benchmark suite and print its table.
    Bench(BenchArgs),
    /// Demodulate one channel and write the envelope as CSV.
    Demod(StageArgs),
    /// Demodulate and decompose one channel.
    Decompose(DecomposeArgs),
    /// Convert an external dataset into a recording directory.
    Import(ImportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output recording directory.
    #[arg(long)]
    out: PathBuf,
    /// Noise seed; overrides the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the packed binary format instead of text.
    #[arg(long)]
    binary: bool,
}

/// Analysis tunables. Flags override values from `--config`.
#[derive(Args, Default)]
struct Tunables {
    /// Analysis settings file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    guard: Option<f64>,
    #[arg(long)]
    median_window: Option<usize>,
    #[arg(long)]
    match_tolerance: Option<f64>,
    #[arg(long)]
    trigger_threshold: Option<f64>,
    #[arg(long)]
    tie_band: Option<f64>,
    #[arg(long)]
    min_energy: Option<f64>,
    #[arg(long)]
    max_components: Option<usize>,
    /// Analysis block start, seconds.
    #[arg(long)]
    block_start: Option<f64>,
    /// Analysis block length, seconds.
    #[arg(long)]
    block_duration: Option<f64>,
}

impl Tunables {
    fn apply(&self, s: &mut AnalysisSettings) {
        let d = &mut s.demod;
        set(&mut d.guard, self.guard);
        set(&mut d.median_window, self.median_window);
        let c = &mut s.decomposition;
        set(&mut c.min_energy, self.min_energy);
        set(&mut c.max_components, self.max_components);
        set(&mut s.match_tolerance, self.match_tolerance);
        set(&mut s.trigger_threshold, self.trigger_threshold);
        set(&mut s.tie_band, self.tie_band);
        set(&mut s.block_start_s, self.block_start);
        if self.block_duration.is_some() {
            s.block_duration_s = self.block_duration;
        }
    }

    fn analysis(&self) -> Result<AnalysisSettings, Failure> {
        let mut s = match &self.config {
            Some(p) => AnalysisSettings::from_toml(&read_text(p)?)
                .map_err(|e| Failure::schema(format!("{}: {}", p.display(), one_line(&e.to_string()))))?,
            None => AnalysisSettings::default(),
        };
        self.apply(&mut s);
        s.validate().map_err(|e| Failure::schema(e.to_string()))?;
        Ok(s)
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Recording directory.
    #[arg(long)]
    rec: PathBuf,
    /// Topology file, or a scenario file holding one.
    #[arg(long)]
    topology: PathBuf,
    /// Report output (JSON).
    #[arg(long)]
    report: PathBuf,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Suite settings file (TOML); analysis flags override its `[analysis]`.
    #[arg(long)]
    suite_config: Option<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Also write a JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Args)]
struct StageArgs {
    /// A single channel file, or a recording directory with `--channel`.
    #[arg(long)]
    rec: PathBuf,
    /// Channel in a recording directory, e.g. P3/L1.
    #[arg(long)]
    channel: Option<ChannelId>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tunables: Tunables,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Also write the components as JSON.
    #[arg(long)]
    components: Option<PathBuf>,
}

#[derive(Args)]
struct ImportArgs {
    /// Adapter name.
    #[arg(long, default_value = "public-dataset")]
    adapter: String,
    #[arg(long)]
    input: PathBuf,
    /// Output recording directory.
    #[arg(long)]
    out: PathBuf,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn read_text(p: &Path) -> Result<String, Failure> {
    fs::read_to_string(p).map_err(|e| Failure::new(exit::IO, format!("cannot read {}: {e}", p.display())))
}

fn write_text(p: &Path, text: &str) -> CmdResult {
    fs::write(p, text).map_err(|e| Failure::new(exit::IO, format!("cannot write {}: {e}", p.display())))
}

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(a: &SimulateArgs) -> CmdResult {
    let mut config = ScenarioConfig::from_toml(&read_text(&a.scenario)?)
        .map_err(|e| Failure::schema(format!("{}: {}", a.scenario.display(), one_line(&e.to_string()))))?;
    set(&mut config.seed, a.seed);
    if config.name.is_none() {
        config.name = a.scenario.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    for w in quasi_stationary_warnings(&config) {
        log::warn!("{w}");
    }
    let rec = synthesize(&config).map_err(Error::from)?;
    let written = write_recording_dir(&a.out, &rec, a.binary)?;
    log::info!("wrote {} channels to {}", written.len(), a.out.display());
    Ok(())
}

fn analyze(a: &AnalyzeArgs) -> CmdResult {
    let settings = a.tunables.analysis()?;
    let topology = Topology::from_toml(&read_text(&a.topology)?)
        .map_err(|e| Failure::schema(format!("{}: {}", a.topology.display(), one_line(&e.to_string()))))?;
    let rec = read_recording_dir(&a.rec)?;
    let report = run_identification(&rec, &topology, &settings).map_err(Error::from)?;
    if !report.trigger.fired {
        log::info!("trigger not fired ({:.5} < {})", report.trigger.metric, report.trigger.threshold);
    }
    for t in &report.tracks {
        log::info!("{} {:.3} Hz {:?} -> {:?}", t.phase, t.consensus_frequency, t.max_amplitude, t.indicated);
    }
    write_report(&a.report, &ReportFile::new(ReportBody::Localization { settings, report }))?;
    Ok(())
}

fn bench(a: &BenchArgs) -> CmdResult {
    let mut settings = match &a.suite_config {
        Some(p) => SuiteSettings::from_toml(&read_text(p)?)
            .map_err(|e| Failure::schema(format!("{}: {}", p.display(), one_line(&e.to_string()))))?,
        None => SuiteSettings::default(),
    };
    if let Some(p) = &a.tunables.config {
        settings.analysis = AnalysisSettings::from_toml(&read_text(p)?)
            .map_err(|e| Failure::schema(format!("{}: {}", p.display(), one_line(&e.to_string()))))?;
    }
    a.tunables.apply(&mut settings.analysis);
    settings.validate().map_err(Failure::schema)?;
    let table = run_suite(a.cases, a.seed, &settings);
    emit(a.table.as_deref(), &table.to_csv())?;
    if let Some(p) = &a.report {
        let body = ReportBody::Suite {
            settings,
            seed: a.seed,
            cases: a.cases,
            table,
        };
        write_report(p, &ReportFile::new(body))?;
    }
    Ok(())
}

fn load_channel(a: &StageArgs) -> Result<(ChannelId, Vec<f64>, f64, f64), Failure> {
    if a.rec.is_dir() {
        let c = a
            .channel
            .clone()
            .ok_or_else(|| Failure::new(exit::USAGE, "--channel is required when --rec is a directory"))?;
        let mut rec = read_recording_dir(&a.rec)?;
        let u = rec
            .channels
            .remove(&c)
            .ok_or_else(|| Failure::schema(format!("channel {c} not in {}", a.rec.display())))?;
        Ok((c, u, rec.sample_rate, rec.carrier_frequency_nominal))
    } else {
        let f = if a.rec.extension().and_then(|e| e.to_str()) == Some("bin") {
            read_binary_recording(&a.rec)?
        } else {
            read_recording(&a.rec)?
        };
        Ok((f.channel, f.samples, f.sample_rate, f.carrier_frequency_nominal))
    }
}

fn envelope(a: &StageArgs) -> Result<ModulatingSignal, Failure> {
    let settings = a.tunables.analysis()?;
    let (c, u, fs, fc) = load_channel(a)?;
    let mut m = demodulate_channel(&u, fs, fc, &settings.demod).map_err(Error::from)?;
    m.channel = Some(c);
    Ok(m)
}

fn demod(a: &StageArgs) -> CmdResult {
    let m = envelope(a)?;
    let mut s = String::from("t_s,envelope_v\n");
    for (i, v) in m.samples.iter().enumerate() {
        let _ = writeln!(s, "{:.6},{:.9e}", i as f64 / m.sample_rate, v);
    }
    emit(a.out.as_deref(), &s)
}

fn decompose_cmd(a: &DecomposeArgs) -> CmdResult {
    let settings = a.stage.tunables.analysis()?;
    let m = envelope(&a.stage)?;
    let d: Decomposition = decompose(&m, &settings.decomposition).map_err(Error::from)?;
    let fit = d.reconstruct();
    let mut s = String::from("t_s,envelope_v,reconstruction_v,residual_v\n");
    for (i, (v, r)) in m.samples.iter().zip(&fit).enumerate() {
        let _ = writeln!(s, "{:.6},{:.9e},{:.9e},{:.9e}", i as f64 / m.sample_rate, v, r, v - r);
    }
    emit(a.stage.out.as_deref(), &s)?;
    for c in &d.components {
        log::info!("{:.4} Hz  A={:.4e} V  duty={:.3}", c.frequency, c.amplitude, c.duty);
    }
    if let Some(p) = &a.components {
        let json = serde_json::to_string_pretty(&d).expect("decomposition is serializable");
        write_text(p, &(json + "\n"))?;
    }
    Ok(())
}

fn import(a: &ImportArgs) -> CmdResult {
    let adapter = UnsupportedLayout;
    if a.adapter != vfloc::io::DatasetAdapter::name(&adapter) {
        return Err(Failure::new(exit::USAGE, format!("unknown adapter '{}'", a.adapter)));
    }
    let rec = import_dataset(&adapter, &a.input)?;
    write_recording_dir(&a.out, &rec, false)?;
    Ok(())
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Analyze(a) => analyze(a),
        Command::Bench(a) => bench(a),
        Command::Demod(a) => demod(a),
        Command::Decompose(a) => decompose_cmd(a),
        Command::Import(a) => import(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("vfloc: {}", first.trim_start_matches("error: "));
            return ExitCode::from(exit::USAGE);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("vfloc: {}", one_line(&f.message));
            ExitCode::from(f.code)
        }
    }
}
