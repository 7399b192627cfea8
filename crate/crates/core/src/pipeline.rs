//! End-to-end orchestration: ingest, sensor, LDB, GA search, final filter,
//! rule enforcement, and the detection report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{FuzzyError, LinguisticRule, MembershipFunction, RuleSpec, TermLibrary};
use crate::ga::{decode_match, run_search, DecodedMatch, GaConfig, GaError, SearchOutcome};
use crate::ingest::{ingest_stream, LogFormat, ParseReport};
use crate::ldb::{LdbEntry, LdbError, LearningDb, DEFAULT_ROTATE_LIMIT};
use crate::packet::HeaderRecord;
use crate::rules::{
    decide, default_filter_rules, enforce, filter_terms, render_rule, Action, EnforceOutcome, FilterConfig, RuleError,
    RuleSink, VAR_SUSPICION,
};
use crate::sensor::{
    default_sensor_rules, flow_tuple, FlowKey, Sensor, SensorConfig, SensorConfigError, Suspicion, SuspicionKind,
    VAR_ABNORMAL_RATIO, VAR_MEAN_INTERARRIVAL, VAR_PACKET_COUNT, VAR_PACKET_RATE, VAR_SYN_RATIO,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid sensor config: {0}")]
    Sensor(#[from] SensorConfigError),
    #[error("invalid GA config: {0}")]
    Ga(#[from] GaError),
    #[error("invalid fuzzy rule: {0}")]
    Rule(#[from] FuzzyError),
    #[error("rule variable {0:?} is not available to this stage")]
    UnknownVariable(String),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ldb(#[from] LdbError),
    #[error(transparent)]
    Ga(#[from] GaError),
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("cannot read {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: bad ground-truth flow {text:?}")]
    GroundTruth { path: PathBuf, line: usize, text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub format: LogFormat,
    /// Spacing of synthetic timestamps for netfilter lines without one.
    pub synthetic_spacing: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            format: LogFormat::AutoDetect,
            synthetic_spacing: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuzzyConfig {
    /// Extra or overriding terms: `terms.<variable>.<term> = { crisp_step = x }`
    /// or `{ trapezoid = [a, b, c, d] }`.
    pub terms: BTreeMap<String, BTreeMap<String, MembershipFunction>>,
    pub sensor_rules: Vec<RuleSpec>,
    pub filter_rules: Vec<RuleSpec>,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        FuzzyConfig {
            terms: BTreeMap::new(),
            sensor_rules: default_sensor_rules(),
            filter_rules: default_filter_rules(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StorageConfig {
    pub ldb_path: PathBuf,
    pub ledger_path: PathBuf,
    /// Newest entries kept when the LDB is rotated.
    pub rotate_limit: usize,
}

impl Default for StorageConfig {
    fn default() -> Self {
        StorageConfig {
            ldb_path: PathBuf::from("fgshield-ldb.txt"),
            ledger_path: PathBuf::from("fgshield-ledger.tsv"),
            rotate_limit: DEFAULT_ROTATE_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub rules_path: PathBuf,
    pub report_path: Option<PathBuf>,
    /// Adds wall-clock GA timings to the report file. Off by default so
    /// seeded runs produce byte-identical reports.
    pub include_timings: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            rules_path: PathBuf::from("fgshield-rules.out"),
            report_path: None,
            include_timings: false,
        }
    }
}

/// Every tunable of the pipeline, loadable from one TOML file. Unknown keys
/// are rejected; absent keys take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    pub sensor: SensorConfig,
    pub fuzzy: FuzzyConfig,
    pub ga: GaConfig,
    pub filter: FilterConfig,
    pub storage: StorageConfig,
    pub output: OutputConfig,
}

/// Compiled sensor and filter rule sets.
#[derive(Debug, Clone)]
pub struct CompiledRules {
    pub sensor: Vec<LinguisticRule>,
    pub filter: Vec<LinguisticRule>,
}

const SENSOR_VARIABLES: [&str; 5] = [
    VAR_PACKET_COUNT,
    VAR_PACKET_RATE,
    VAR_SYN_RATIO,
    VAR_ABNORMAL_RATIO,
    VAR_MEAN_INTERARRIVAL,
];

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sensor.validate()?;
        self.ga.validate()?;
        if !(self.filter.drop_threshold > 0.0 && self.filter.drop_threshold <= 1.0) {
            return Err(ConfigError::Other(format!(
                "filter.drop_threshold must be in (0, 1], got {}",
                self.filter.drop_threshold
            )));
        }
        if self.filter.ban_seconds == 0 {
            return Err(ConfigError::Other("filter.ban_seconds must be positive".into()));
        }
        if self.storage.rotate_limit == 0 {
            return Err(ConfigError::Other("storage.rotate_limit must be positive".into()));
        }
        if !(self.ingest.synthetic_spacing > 0.0 && self.ingest.synthetic_spacing.is_finite()) {
            return Err(ConfigError::Other("ingest.synthetic_spacing must be positive".into()));
        }
        self.compile_rules().map(|_| ())
    }

    pub fn sensor_terms(&self) -> TermLibrary {
        let mut lib = self.sensor.term_library();
        for (variable, terms) in &self.fuzzy.terms {
            for (term, mf) in terms {
                lib.insert(variable, term, *mf);
            }
        }
        lib
    }

    pub fn compile_rules(&self) -> Result<CompiledRules, ConfigError> {
        for terms in self.fuzzy.terms.values() {
            for mf in terms.values() {
                mf.validate()?;
            }
        }
        let sensor_lib = self.sensor_terms();
        let filter_lib = filter_terms(&sensor_lib);
        let compile = |specs: &[RuleSpec], lib: &TermLibrary, allowed: &[&str]| -> Result<Vec<_>, ConfigError> {
            if specs.is_empty() {
                return Err(ConfigError::Rule(FuzzyError::EmptyRuleSet));
            }
            specs
                .iter()
                .map(|spec| {
                    let rule = spec.compile(lib)?;
                    if let Some(v) = rule.antecedent().variables().into_iter().find(|v| !allowed.contains(v)) {
                        return Err(ConfigError::UnknownVariable(v.to_string()));
                    }
                    Ok(rule)
                })
                .collect()
        };
        let mut filter_vars = SENSOR_VARIABLES.to_vec();
        filter_vars.push(VAR_SUSPICION);
        Ok(CompiledRules {
            sensor: compile(&self.fuzzy.sensor_rules, &sensor_lib, &SENSOR_VARIABLES)?,
            filter: compile(&self.fuzzy.filter_rules, &filter_lib, &filter_vars)?,
        })
    }
}

/// Records to analyse plus optional labels for scoring.
#[derive(Debug, Clone, Default)]
pub struct PipelineInput {
    pub records: Vec<HeaderRecord>,
    pub rejected: Vec<(usize, String)>,
    pub ground_truth: Option<BTreeSet<FlowKey>>,
}

impl PipelineInput {
    pub fn from_report(report: ParseReport, ground_truth: Option<BTreeSet<FlowKey>>) -> Self {
        PipelineInput {
            records: report.records,
            rejected: report.rejected,
            ground_truth,
        }
    }
}

/// Reads and parses log files in order.
pub fn load_logs(paths: &[PathBuf], config: &IngestConfig) -> Result<ParseReport, PipelineError> {
    let mut combined = ParseReport::default();
    for path in paths {
        let text = fs::read_to_string(path).map_err(|source| PipelineError::Input {
            path: path.clone(),
            source,
        })?;
        let report = ingest_stream(text.lines(), config.format, config.synthetic_spacing);
        combined.records.extend(report.records);
        combined.rejected.extend(report.rejected);
    }
    Ok(combined)
}

/// One flow per line: `src_ip dst_ip dst_port proto`. `#` starts a comment.
pub fn load_ground_truth(path: &Path) -> Result<BTreeSet<FlowKey>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| PipelineError::Input {
        path: path.to_path_buf(),
        source,
    })?;
    parse_ground_truth(&text).map_err(|(line, text)| PipelineError::GroundTruth {
        path: path.to_path_buf(),
        line,
        text,
    })
}

pub fn parse_ground_truth(text: &str) -> Result<BTreeSet<FlowKey>, (usize, String)> {
    let mut out = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.insert(FlowKey::parse(line).ok_or_else(|| (i + 1, line.to_string()))?);
    }
    Ok(out)
}

pub fn format_ground_truth(flows: &BTreeSet<FlowKey>) -> String {
    flows.iter().map(|f| format!("{f}\n")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowOutcome {
    pub flow: FlowKey,
    pub kind: SuspicionKind,
    pub degree: f64,
    pub escalated_at: f64,
    pub packets: u64,
    pub flagged_packets: u64,
    pub target: String,
    pub best: String,
    pub fitness: f64,
    pub generation: u64,
    pub elapsed_seconds: f64,
    pub outcome: SearchOutcome,
    pub confirmed: bool,
    pub decoded: Option<DecodedMatch>,
    pub action: Action,
    pub rule: Option<String>,
    pub enforcement: Option<EnforceOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub total_packets: u64,
    pub rejected_lines: u64,
    pub late_records: u64,
    /// Attack packets flagged (a).
    pub attack_packets_flagged: u64,
    /// Attack packets in the input (n); 0 without ground truth.
    pub total_attack_packets: u64,
    pub rate_percent: Option<f64>,
    pub benign_packets_flagged: u64,
    pub flows: Vec<FlowOutcome>,
    pub rules_emitted: Vec<String>,
    pub rules_skipped: u64,
    pub rules_failed: u64,
}

impl DetectionReport {
    pub fn ga_generations_total(&self) -> u64 {
        self.flows.iter().map(|f| f.generation).sum()
    }

    pub fn ga_elapsed(&self) -> Vec<f64> {
        self.flows.iter().map(|f| f.elapsed_seconds).collect()
    }

    /// Fig-7 style block per escalated flow followed by a `[summary]`
    /// section of `key: value` lines.
    pub fn render(&self, include_timings: bool) -> String {
        let mut out = String::new();
        for f in &self.flows {
            render_flow(&mut out, f, include_timings);
        }
        out.push_str("[summary]\n");
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}: {v}");
        };
        kv("total_packets", self.total_packets.to_string());
        kv("rejected_lines", self.rejected_lines.to_string());
        kv("late_records", self.late_records.to_string());
        kv("flows_escalated", self.flows.len().to_string());
        kv("attack_packets_flagged", self.attack_packets_flagged.to_string());
        kv("total_attack_packets", self.total_attack_packets.to_string());
        kv(
            "rate_percent",
            self.rate_percent.map_or("n/a".to_string(), |r| format!("{r:.2}")),
        );
        kv("benign_packets_flagged", self.benign_packets_flagged.to_string());
        kv("rules_emitted", self.rules_emitted.len().to_string());
        kv("rules_skipped", self.rules_skipped.to_string());
        kv("rules_failed", self.rules_failed.to_string());
        kv("ga_searches", self.flows.len().to_string());
        kv("ga_generations_total", self.ga_generations_total().to_string());
        if include_timings {
            let mean = performance_mean(&self.ga_elapsed()).map_or("n/a".to_string(), |m| format!("{m:.3}"));
            kv("ga_elapsed_mean_seconds", mean);
        }
        out
    }
}

fn render_flow(out: &mut String, f: &FlowOutcome, include_timings: bool) {
    let _ = writeln!(out, "=====");
    let _ = writeln!(
        out,
        "Suspicious flow: {} -> {} port {} proto {} ({}, degree {})",
        f.flow.src_ip,
        f.flow.dst_ip,
        f.flow.dst_port,
        f.flow.proto.number(),
        f.kind.tag(),
        f.degree
    );
    let _ = writeln!(out, "Input String: {}", f.target);
    let _ = writeln!(out, "Best Match: {}\n", f.best);
    let _ = writeln!(out, "%{} Matching\n", format_percent(f.fitness * 100.0));
    if let Some(d) = &f.decoded {
        let _ = writeln!(out, "Extracting rules from LDB ...");
        let _ = writeln!(out, "Source IP: {}", d.src_ip);
        let _ = writeln!(out, "Source Port: {}", d.src_port);
        let _ = writeln!(out, "Destination IP: {}", d.dst_ip);
        let _ = writeln!(out, "Destination Port: {}", d.dst_port);
        let _ = writeln!(out, "Protocol: {} = {}\n", d.proto_number, d.proto_name);
    }
    let _ = writeln!(out, "Checking Learning Database...");
    match (&f.enforcement, &f.rule) {
        (Some(EnforceOutcome::Applied), Some(rule)) => {
            let _ = writeln!(out, "New rule: {rule}");
        }
        (Some(EnforceOutcome::Skipped { .. }), _) => {
            let _ = writeln!(out, "Existing.. (No need to add more rules)");
        }
        (Some(EnforceOutcome::Failed(reason)), _) => {
            let _ = writeln!(out, "Rule failed: {reason}");
        }
        _ if !f.confirmed => {
            let _ = writeln!(out, "Not found in LDB (accepted)");
        }
        _ => {
            let _ = writeln!(out, "Below drop threshold (accepted)");
        }
    }
    let _ = writeln!(out);
    match f.outcome {
        SearchOutcome::ExactMatch => {
            let _ = writeln!(out, "Match found in Generation: {}", f.generation);
        }
        SearchOutcome::Exhausted => {
            let _ = writeln!(out, "No exact match after {} generations", f.generation);
        }
    }
    if include_timings {
        let _ = writeln!(out, "Total time: {:.3} seconds.", f.elapsed_seconds);
    }
    let _ = writeln!(out, "=====");
}

fn format_percent(p: f64) -> String {
    if p == p.trunc() {
        format!("{p:.0}")
    } else {
        format!("{p:.2}")
    }
}

#[derive(Debug, Default)]
struct FlowTally {
    packets: u64,
    flagged: u64,
    escalated: Option<usize>,
}

/// Runs every record through the three stages. Rules go to `sink`; the LDB
/// and rule ledger live in `store`.
pub fn run_pipeline(
    input: &PipelineInput,
    config: &PipelineConfig,
    store: &mut LearningDb,
    sink: &mut dyn RuleSink,
) -> Result<DetectionReport, PipelineError> {
    config.validate()?;
    let rules = config.compile_rules()?;
    let mut sensor = Sensor::new(config.sensor.clone(), rules.sensor);
    let mut tallies: BTreeMap<FlowKey, FlowTally> = BTreeMap::new();
    let mut flows: Vec<FlowOutcome> = Vec::new();
    let mut report = DetectionReport {
        total_packets: input.records.len() as u64,
        rejected_lines: input.rejected.len() as u64,
        late_records: 0,
        attack_packets_flagged: 0,
        total_attack_packets: 0,
        rate_percent: None,
        benign_packets_flagged: 0,
        flows: Vec::new(),
        rules_emitted: Vec::new(),
        rules_skipped: 0,
        rules_failed: 0,
    };

    for record in &input.records {
        let obs = sensor.observe(record);
        let tally = tallies.entry(obs.flow).or_default();
        tally.packets += 1;
        if tally.escalated.is_some() {
            // Escalated flows stay flagged for the rest of the run.
            tally.flagged += 1;
            continue;
        }
        let Some(suspicion) = obs.suspicion else { continue };
        tally.flagged += suspicion.evidence.packet_count as u64;
        tally.escalated = Some(flows.len());

        let window: Vec<LdbEntry> = sensor
            .window_records(&suspicion.flow)
            .map(|r| LdbEntry::from_tuple(flow_tuple(r)).at(r.timestamp))
            .collect();
        store.append_all(window)?;
        if store.len() > config.storage.rotate_limit {
            store.rotate(config.storage.rotate_limit)?;
        }
        let outcome = escalate(&suspicion, flows.len() as u64, config, &rules.filter, store, sink)?;
        match &outcome.enforcement {
            Some(EnforceOutcome::Applied) => report.rules_emitted.extend(outcome.rule.clone()),
            Some(EnforceOutcome::Skipped { .. }) => report.rules_skipped += 1,
            Some(EnforceOutcome::Failed(_)) => report.rules_failed += 1,
            None => {}
        }
        flows.push(outcome);
    }

    let truth = input.ground_truth.as_ref();
    for (flow, tally) in &tallies {
        if let Some(i) = tally.escalated {
            flows[i].packets = tally.packets;
            flows[i].flagged_packets = tally.flagged;
        }
        match truth {
            Some(t) if t.contains(flow) => {
                report.total_attack_packets += tally.packets;
                report.attack_packets_flagged += tally.flagged;
            }
            Some(_) => report.benign_packets_flagged += tally.flagged,
            None => report.attack_packets_flagged += tally.flagged,
        }
    }
    if truth.is_some() && report.total_attack_packets > 0 {
        report.rate_percent = Some(detection_rate(
            report.attack_packets_flagged,
            report.total_attack_packets,
        )?);
    }
    report.late_records = sensor.late_records();
    report.flows = flows;
    Ok(report)
}

fn escalate(
    suspicion: &Suspicion,
    index: u64,
    config: &PipelineConfig,
    filter_rules: &[LinguisticRule],
    store: &mut LearningDb,
    sink: &mut dyn RuleSink,
) -> Result<FlowOutcome, PipelineError> {
    let snapshot = store.snapshot();
    let ga = GaConfig {
        rng_seed: config.ga.rng_seed.wrapping_add(index),
        ..config.ga.clone()
    };
    let result = run_search(&suspicion.target_entry, &snapshot, &ga)?;
    let action = decide(suspicion, &result, filter_rules, &config.filter);
    let decoded = match &result.confirmed_entry {
        Some(entry) => Some(decode_match(entry.raw())?),
        None => None,
    };
    let (rule, enforcement) = match (&decoded, action) {
        (Some(d), Action::Ban { .. } | Action::Drop) => {
            let rule = render_rule(action, d)?;
            let outcome = enforce(&rule, suspicion.kind, suspicion.observed_at, store, sink)?;
            (Some(rule.rendered), Some(outcome))
        }
        _ => (None, None),
    };
    Ok(FlowOutcome {
        flow: suspicion.flow,
        kind: suspicion.kind,
        degree: suspicion.degree.value(),
        escalated_at: suspicion.observed_at,
        packets: 0,
        flagged_packets: 0,
        target: result.target.clone(),
        best: result.best.to_string(),
        fitness: result.fitness.value(),
        generation: result.generation,
        elapsed_seconds: result.elapsed_seconds,
        outcome: result.outcome,
        confirmed: result.is_confirmed(),
        decoded,
        action,
        rule,
        enforcement,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("detection rate needs n > 0")]
    NoAttackPackets,
    #[error("flagged count {a} exceeds attack count {n}")]
    FlaggedExceedsTotal { a: u64, n: u64 },
    #[error("performance mean of an empty list")]
    EmptyRuns,
}

impl From<MetricsError> for PipelineError {
    fn from(e: MetricsError) -> Self {
        PipelineError::Config(ConfigError::Other(e.to_string()))
    }
}

/// `R = a / n * 100`.
pub fn detection_rate(a: u64, n: u64) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::NoAttackPackets);
    }
    if a > n {
        return Err(MetricsError::FlaggedExceedsTotal { a, n });
    }
    Ok(a as f64 / n as f64 * 100.0)
}

/// Arithmetic mean of run times in seconds.
pub fn performance_mean(run_seconds: &[f64]) -> Result<f64, MetricsError> {
    if run_seconds.is_empty() {
        return Err(MetricsError::EmptyRuns);
    }
    Ok(run_seconds.iter().sum::<f64>() / run_seconds.len() as f64)
}

/// Summary values recovered from a saved report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SavedSummary {
    pub values: BTreeMap<String, String>,
}

impl SavedSummary {
    pub fn parse(report_text: &str) -> Option<Self> {
        let start = report_text.find("[summary]\n")?;
        let values = report_text[start + "[summary]\n".len()..]
            .lines()
            .filter_map(|l| l.split_once(": "))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        Some(SavedSummary { values })
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.values.get(key)?.parse().ok()
    }

    /// Recomputed detection rate, if the report had ground truth.
    pub fn detection_rate(&self) -> Option<Result<f64, MetricsError>> {
        let a = self.get_u64("attack_packets_flagged")?;
        let n = self.get_u64("total_attack_packets")?;
        (n > 0).then(|| detection_rate(a, n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(detection_rate(100, 100).unwrap(), 100.0);
        assert_eq!(detection_rate(90, 100).unwrap(), 90.0);
        assert_eq!(detection_rate(0, 5).unwrap(), 0.0);
        assert_eq!(detection_rate(1, 0), Err(MetricsError::NoAttackPackets));
        assert!(detection_rate(6, 5).is_err());

        let runs = [182.0, 328.0, 133.0, 230.0, 146.0, 181.0, 146.0, 728.0, 133.0, 114.0];
        assert_eq!(performance_mean(&runs).unwrap(), 232.1);
        assert_eq!(performance_mean(&[109.0]).unwrap(), 109.0);
        assert_eq!(performance_mean(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(performance_mean(&[]), Err(MetricsError::EmptyRuns));
    }

    #[test]
    fn config_defaults_and_unknown_keys() {
        let c = PipelineConfig::from_toml_str("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.sensor.packet_threshold, 500);
        assert_eq!(c.ga.population_size, 200);
        assert_eq!(c.filter.ban_seconds, 300);

        assert!(PipelineConfig::from_toml_str("[sensor]\nbogus = 1\n").is_err());
        assert!(PipelineConfig::from_toml_str("nonsense = true\n").is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = PipelineConfig::default();
        let text = c.to_toml_string();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn config_rules_and_terms() {
        let text = r#"
[sensor]
packet_threshold = 100

[ga]
rng_seed = 9
selection = { tournament = 3 }

[fuzzy.terms.packet_rate]
medium = { trapezoid = [10.0, 50.0, 100.0, 200.0] }

[[fuzzy.sensor_rules]]
when = "packet_count IS high AND (packet_rate IS high OR packet_rate IS medium)"
weight = 0.9
"#;
        let c = PipelineConfig::from_toml_str(text).unwrap();
        assert_eq!(c.ga.rng_seed, 9);
        let rules = c.compile_rules().unwrap();
        assert_eq!(rules.sensor.len(), 1);
        assert_eq!(rules.sensor[0].weight().value(), 0.9);
        assert_eq!(rules.filter.len(), 1);

        let bad = "[[fuzzy.sensor_rules]]\nwhen = \"suspicion IS high\"\n";
        assert!(matches!(PipelineConfig::from_toml_str(bad), Err(ConfigError::Rule(_))));
        let bad = "[[fuzzy.sensor_rules]]\nwhen = \"packet_count IS huge\"\n";
        assert!(PipelineConfig::from_toml_str(bad).is_err());
        let bad =
            "[fuzzy.terms.other]\nhigh = { crisp_step = 1.0 }\n[[fuzzy.sensor_rules]]\nwhen = \"other IS high\"\n";
        assert!(matches!(
            PipelineConfig::from_toml_str(bad),
            Err(ConfigError::UnknownVariable(_))
        ));
    }

    #[test]
    fn ground_truth_text() {
        let text = "# attacks\n10.0.0.10 192.168.0.254 80 6\n\n";
        let set = parse_ground_truth(text).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(format_ground_truth(&set), "10.0.0.10 192.168.0.254 80 6\n");
        assert_eq!(parse_ground_truth("1.2.3.4 x"), Err((1, "1.2.3.4 x".into())));
    }

    #[test]
    fn saved_summary_recomputes_rate() {
        let text =
            "=====\nstuff\n[summary]\nattack_packets_flagged: 9\ntotal_attack_packets: 10\nrate_percent: 90.00\n";
        let s = SavedSummary::parse(text).unwrap();
        assert_eq!(s.detection_rate().unwrap().unwrap(), 90.0);
        assert!(SavedSummary::parse("no summary").is_none());
    }
}
