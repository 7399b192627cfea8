use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fgshield::ga::{decode_match, run_search_observed, SearchOutcome};
use fgshield::ingest::{to_custom_line, to_netfilter_line, LogFormat};
use fgshield::ldb::LearningDb;
use fgshield::pipeline::{
    format_ground_truth, load_ground_truth, load_logs, performance_mean, run_pipeline, PipelineConfig, PipelineError,
    PipelineInput, SavedSummary,
};
use fgshield::rules::{CommandSink, FileSink, RuleSink};
use fgshield::sensor::FlowKey;
use fgshield::sim::{generate, generate_records, label_ground_truth, OutputFormat, Payload, Scenario, ScenarioKind};

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "fgshield", version, about = "Fuzzy-genetic packet filter")]
struct Cli {
    /// TOML config file; absent keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the GA and simulator seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic traffic log.
    Simulate(SimulateArgs),
    /// Parse and validate log files.
    Ingest(IngestArgs),
    /// Run the full detection pipeline.
    Detect(DetectArgs),
    /// Search an LDB file for one target entry.
    GaSearch(GaSearchArgs),
    /// Recompute metrics from a saved report.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Netfilter,
    Custom,
    Auto,
}

impl From<FormatArg> for LogFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Netfilter => LogFormat::NetfilterLog,
            FormatArg::Custom => LogFormat::CustomLog,
            FormatArg::Auto => LogFormat::AutoDetect,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    SynFlood,
    PingFlood,
    Smurf,
    Benign,
    /// SYN flood interleaved with benign sessions from 10.0.0.20.
    Mixed,
}

#[derive(Debug, Args)]
struct ScenarioArgs {
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long)]
    count: Option<usize>,
    /// Seconds between packets (between sessions for benign traffic).
    #[arg(long)]
    interarrival: Option<f64>,
    #[arg(long)]
    src: Option<Ipv4Addr>,
    #[arg(long)]
    dst: Option<Ipv4Addr>,
    #[arg(long)]
    dport: Option<u16>,
    /// Fixed payload bytes.
    #[arg(long)]
    payload: Option<u32>,
    /// Epoch seconds of the first packet.
    #[arg(long)]
    start_time: Option<f64>,
}

impl ScenarioArgs {
    fn build(&self, kind: ScenarioArg, seed: u64, format: OutputFormat) -> Scenario {
        let base = |k: ScenarioKind| {
            let mut s = Scenario::new(k);
            s.rng_seed = seed;
            s.output_format = format;
            if let Some(v) = self.count {
                s.packet_count = v;
            }
            if let Some(v) = self.interarrival {
                s.interarrival_seconds = v;
            }
            if let Some(v) = self.src {
                s.src_ip = v;
            }
            if let Some(v) = self.dst {
                s.dst_ip = v;
            }
            if let Some(v) = self.dport {
                s.dst_port = v;
            }
            if let Some(v) = self.payload {
                s.payload = Payload::Fixed(v);
            }
            if let Some(v) = self.start_time {
                s.start_time = v;
            }
            s
        };
        match kind {
            ScenarioArg::SynFlood => base(ScenarioKind::SynFlood),
            ScenarioArg::PingFlood => base(ScenarioKind::PingFlood),
            ScenarioArg::Smurf => base(ScenarioKind::Smurf),
            ScenarioArg::Benign => base(ScenarioKind::Benign),
            ScenarioArg::Mixed => {
                let flood = base(ScenarioKind::SynFlood);
                let mut benign = Scenario::new(ScenarioKind::Benign);
                benign.src_ip = Ipv4Addr::new(10, 0, 0, 20);
                benign.dst_ip = flood.dst_ip;
                benign.dst_port = flood.dst_port;
                benign.packet_count = (flood.packet_count / 100).max(1);
                benign.interarrival_seconds = 0.5;
                benign.rng_seed = seed.wrapping_add(1);
                benign.start_time = flood.start_time;
                let mut mixed = Scenario::new(ScenarioKind::Mixed(vec![flood.clone(), benign]));
                mixed.rng_seed = seed;
                mixed.output_format = format;
                mixed
            }
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value = "netfilter")]
    format: FormatArg,
    /// Log file to write; standard output if absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the attack flow keys here.
    #[arg(long)]
    truth_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Print accepted records re-serialized in this format.
    #[arg(long, value_enum)]
    emit: Option<FormatArg>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    /// Log files to analyse. Mutually exclusive with --scenario.
    #[arg(long = "input", conflicts_with = "scenario")]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Attack flow keys for scoring, one `src dst port proto` per line.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    #[arg(long)]
    rules_out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    ldb: Option<PathBuf>,
    #[arg(long)]
    ledger: Option<PathBuf>,
    /// When false, rules are also executed as commands.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    dry_run: bool,
    /// Include wall-clock GA timings in the report file.
    #[arg(long)]
    timings: bool,
}

#[derive(Debug, Args)]
struct GaSearchArgs {
    #[arg(long)]
    target: String,
    #[arg(long)]
    ldb: PathBuf,
    /// Print best fitness every N generations.
    #[arg(long)]
    progress: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report file written by `detect`.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated run times in seconds.
    #[arg(long, value_delimiter = ',')]
    runs: Vec<f64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Input(String),
    Internal(String),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::Input { .. } | PipelineError::GroundTruth { .. } => {
                Failure::Input(e.to_string())
            }
            _ => Failure::Internal(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(EXIT_INTERNAL)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| Failure::Input(e.to_string()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.ga.rng_seed = seed;
    }
    let seed = cli.seed.unwrap_or(config.ga.rng_seed);
    match cli.command {
        Command::Simulate(args) => simulate(args, seed),
        Command::Ingest(args) => ingest(args, &config),
        Command::Detect(args) => detect(args, config, seed),
        Command::GaSearch(args) => ga_search(args, &config),
        Command::Report(args) => report(args),
    }
}

fn simulate(args: SimulateArgs, seed: u64) -> Result<(), Failure> {
    let kind = args
        .scenario
        .scenario
        .ok_or_else(|| Failure::Usage("--scenario is required".into()))?;
    let format = match args.format {
        FormatArg::Custom => OutputFormat::CustomLog,
        FormatArg::Netfilter => OutputFormat::NetfilterLog,
        FormatArg::Auto => return Err(Failure::Usage("simulate needs --format netfilter or custom".into())),
    };
    let scenario = args.scenario.build(kind, seed, format);
    let lines = generate(&scenario).map_err(|e| Failure::Input(e.to_string()))?;
    let mut text = lines.join("\n");
    text.push('\n');
    match &args.out {
        Some(path) => write_file(path, &text)?,
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Internal(e.to_string()))?,
    }
    if let Some(path) = &args.truth_out {
        write_file(path, &format_ground_truth(&label_ground_truth(&scenario)))?;
    }
    Ok(())
}

fn ingest(args: IngestArgs, config: &PipelineConfig) -> Result<(), Failure> {
    let mut ingest = config.ingest.clone();
    if let Some(f) = args.format {
        ingest.format = f.into();
    }
    let report = load_logs(&args.inputs, &ingest)?;
    if let Some(emit) = args.emit {
        let mut out = io::stdout().lock();
        for (i, r) in report.records.iter().enumerate() {
            let line = match emit {
                FormatArg::Custom => to_custom_line(r, i as u64 + 1),
                _ => to_netfilter_line(r),
            };
            writeln!(out, "{line}").map_err(|e| Failure::Internal(e.to_string()))?;
        }
    }
    for (line, reason) in &report.rejected {
        eprintln!("line {line}: {reason}");
    }
    eprintln!("accepted: {}", report.records.len());
    eprintln!("rejected: {}", report.rejected.len());
    if report.rejected.is_empty() {
        Ok(())
    } else {
        Err(Failure::Input(format!("{} line(s) rejected", report.rejected.len())))
    }
}

fn detect(args: DetectArgs, mut config: PipelineConfig, seed: u64) -> Result<(), Failure> {
    if let Some(f) = args.format {
        config.ingest.format = f.into();
    }
    if let Some(p) = args.rules_out {
        config.output.rules_path = p;
    }
    if let Some(p) = args.report_out {
        config.output.report_path = Some(p);
    }
    if let Some(p) = args.ldb {
        config.storage.ldb_path = p;
    }
    if let Some(p) = args.ledger {
        config.storage.ledger_path = p;
    }
    if args.timings {
        config.output.include_timings = true;
    }
    config.validate().map_err(|e| Failure::Input(e.to_string()))?;

    // Everything is read and checked before the LDB or any output is touched.
    let input = match (args.inputs.is_empty(), args.scenario.scenario) {
        (false, _) => {
            let truth = args.truth.as_deref().map(load_ground_truth).transpose()?;
            PipelineInput::from_report(load_logs(&args.inputs, &config.ingest)?, truth)
        }
        (true, Some(kind)) => {
            let scenario = args.scenario.build(kind, seed, OutputFormat::NetfilterLog);
            let records = generate_records(&scenario).map_err(|e| Failure::Input(e.to_string()))?;
            let truth: BTreeSet<FlowKey> = match &args.truth {
                Some(path) => load_ground_truth(path)?,
                None => label_ground_truth(&scenario),
            };
            PipelineInput {
                records,
                rejected: Vec::new(),
                ground_truth: Some(truth),
            }
        }
        (true, None) => return Err(Failure::Usage("detect needs --input or --scenario".into())),
    };

    let mut store = LearningDb::open(&config.storage.ldb_path, &config.storage.ledger_path)
        .map_err(|e| Failure::Input(e.to_string()))?;
    let file_sink = FileSink::open(&config.output.rules_path)
        .map_err(|e| Failure::Input(format!("{}: {e}", config.output.rules_path.display())))?;
    let mut sink: Box<dyn RuleSink> = if args.dry_run {
        Box::new(file_sink)
    } else {
        Box::new(Tee(CommandSink::default(), file_sink))
    };

    let report = run_pipeline(&input, &config, &mut store, sink.as_mut())?;
    if let Some(path) = &config.output.report_path {
        write_file(path, &report.render(config.output.include_timings))?;
    }
    print!("{}", report.render(true));
    Ok(())
}

/// Executes a rule, then records it in the rules file.
struct Tee(CommandSink, FileSink);

impl RuleSink for Tee {
    fn apply(&mut self, rendered: &str) -> Result<(), String> {
        self.0.apply(rendered)?;
        self.1.apply(rendered)
    }
}

fn ga_search(args: GaSearchArgs, config: &PipelineConfig) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.ldb).map_err(|e| Failure::Input(format!("{}: {e}", args.ldb.display())))?;
    let mut store = LearningDb::in_memory();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        store
            .append_raw(line.trim())
            .map_err(|e| Failure::Input(format!("{}:{}: {e}", args.ldb.display(), i + 1)))?;
    }
    let every = args.progress.unwrap_or(0);
    let result = run_search_observed(&args.target, &store.snapshot(), &config.ga, |gen, best| {
        if every > 0 && gen % every == 0 {
            eprintln!("generation {gen}: {best}");
        }
    })
    .map_err(|e| Failure::Input(e.to_string()))?;

    println!("Input String: {}", result.target);
    println!("Best Match: {}\n", result.best);
    println!("%{} Matching\n", trim_percent(result.fitness.value() * 100.0));
    if let Some(entry) = &result.confirmed_entry {
        let d = decode_match(entry.raw()).map_err(|e| Failure::Internal(e.to_string()))?;
        println!("Extracting rules from LDB ...");
        println!("Source IP: {}", d.src_ip);
        println!("Source Port: {}", d.src_port);
        println!("Destination IP: {}", d.dst_ip);
        println!("Destination Port: {}", d.dst_port);
        println!("Protocol: {} = {}\n", d.proto_number, d.proto_name);
    } else {
        println!("Not found in LDB\n");
    }
    match result.outcome {
        SearchOutcome::ExactMatch => println!("Match found in Generation: {}", result.generation),
        SearchOutcome::Exhausted => println!("No exact match after {} generations", result.generation),
    }
    println!("Total time: {:.3} seconds.", result.elapsed_seconds);
    Ok(())
}

fn trim_percent(p: f64) -> String {
    if p == p.trunc() {
        format!("{p:.0}")
    } else {
        format!("{p:.2}")
    }
}

fn report(args: ReportArgs) -> Result<(), Failure> {
    if args.input.is_none() && args.runs.is_empty() {
        return Err(Failure::Usage("report needs --input or --runs".into()));
    }
    if let Some(path) = &args.input {
        let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        let summary = SavedSummary::parse(&text)
            .ok_or_else(|| Failure::Input(format!("{}: no [summary] section", path.display())))?;
        for (k, v) in &summary.values {
            println!("{k}: {v}");
        }
        match summary.detection_rate() {
            Some(Ok(rate)) => {
                let saved = summary.values.get("rate_percent").cloned().unwrap_or_default();
                if saved != format!("{rate:.2}") {
                    return Err(Failure::Input(format!(
                        "saved rate_percent {saved} does not match {rate:.2}"
                    )));
                }
                println!("detection_rate: {rate:.2}");
            }
            Some(Err(e)) => return Err(Failure::Input(e.to_string())),
            None => println!("detection_rate: n/a"),
        }
    }
    if !args.runs.is_empty() {
        let mean = performance_mean(&args.runs).map_err(|e| Failure::Input(e.to_string()))?;
        println!("performance_mean_seconds: {mean}");
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}
