//! Stage two: a genetic algorithm that evolves strings over `0-9` and `:`
//! toward a target LDB entry, then confirms the hit against an LDB snapshot.
//!
//! Fitness is the fraction of positions that agree with the target. Part of
//! the initial population is seeded from same-length snapshot entries; the
//! rest is uniform random. Each generation keeps `elitism_count` elites and
//! fills the remaining slots with tournament selection, single-point
//! crossover and per-gene mutation.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::TruthValue;
use crate::ldb::{FlowTuple, LdbEntry, LdbError};
use crate::packet::decimal_to_ip;

/// Gene alphabet: the ten digits plus the field separator.
pub const ALPHABET: &[u8; 11] = b"0123456789:";

#[derive(Debug, Error)]
pub enum GaError {
    #[error("candidate length {candidate} differs from target length {target}")]
    LengthMismatch { candidate: usize, target: usize },
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grammar(#[from] LdbError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Chromosome(Vec<u8>);

impl Chromosome {
    /// Fails unless every symbol is in [`ALPHABET`].
    pub fn new(genes: &str) -> Option<Self> {
        genes
            .bytes()
            .all(|b| ALPHABET.contains(&b))
            .then(|| Chromosome(genes.as_bytes().to_vec()))
    }

    fn random(len: usize, rng: &mut impl Rng) -> Self {
        Chromosome((0..len).map(|_| random_gene(rng)).collect())
    }

    pub fn genes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_str(&self) -> &str {
        // Genes are always ASCII from ALPHABET.
        std::str::from_utf8(&self.0).unwrap_or_default()
    }
}

impl fmt::Display for Chromosome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn random_gene(rng: &mut impl Rng) -> u8 {
    ALPHABET[rng.gen_range(0..ALPHABET.len())]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossover {
    SinglePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Tournament(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population_size: usize,
    pub mutation_rate: f64,
    pub crossover: Crossover,
    pub selection: Selection,
    pub elitism_count: usize,
    pub max_generations: u64,
    pub rng_seed: u64,
    pub ldb_seed_fraction: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population_size: 200,
            mutation_rate: 0.02,
            crossover: Crossover::SinglePoint,
            selection: Selection::Tournament(2),
            elitism_count: 1,
            max_generations: 20_000,
            rng_seed: 0,
            ldb_seed_fraction: 0.25,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        if self.population_size < 2 {
            return Err(GaError::Config("population_size must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(GaError::Config("mutation_rate must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.ldb_seed_fraction) {
            return Err(GaError::Config("ldb_seed_fraction must be in [0, 1]".into()));
        }
        if self.elitism_count > self.population_size {
            return Err(GaError::Config("elitism_count exceeds population_size".into()));
        }
        let Selection::Tournament(k) = self.selection;
        if k == 0 {
            return Err(GaError::Config("tournament size must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn fitness(candidate: &Chromosome, target: &str) -> Result<TruthValue, GaError> {
    let target = target.as_bytes();
    if candidate.len() != target.len() {
        return Err(GaError::LengthMismatch {
            candidate: candidate.len(),
            target: target.len(),
        });
    }
    if target.is_empty() {
        return Ok(TruthValue::ONE);
    }
    Ok(TruthValue::saturating(
        matches(candidate.genes(), target) as f64 / target.len() as f64,
    ))
}

fn matches(genes: &[u8], target: &[u8]) -> usize {
    genes.iter().zip(target).filter(|(a, b)| a == b).count()
}

/// Individuals with their cached match counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    members: Vec<Chromosome>,
    scores: Vec<usize>,
    target_len: usize,
}

impl Population {
    fn from_members(members: Vec<Chromosome>, target: &[u8]) -> Self {
        let scores = members.iter().map(|c| matches(c.genes(), target)).collect();
        Population {
            members,
            scores,
            target_len: target.len(),
        }
    }

    pub fn members(&self) -> &[Chromosome] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Index of the fittest member; ties go to the lowest index.
    fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s > self.scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn best(&self) -> (&Chromosome, TruthValue) {
        let i = self.best_index();
        (&self.members[i], self.score_to_truth(self.scores[i]))
    }

    fn score_to_truth(&self, score: usize) -> TruthValue {
        if self.target_len == 0 {
            TruthValue::ONE
        } else {
            TruthValue::saturating(score as f64 / self.target_len as f64)
        }
    }
}

/// Generation-zero population: `floor(ldb_seed_fraction * population_size)`
/// copies of same-length snapshot entries, cycled from a random offset, and
/// uniform random strings for the rest.
pub fn init_population(target: &str, snapshot: &[LdbEntry], config: &GaConfig, rng: &mut impl Rng) -> Population {
    let len = target.len();
    let candidates: Vec<&LdbEntry> = snapshot.iter().filter(|e| e.raw().len() == len).collect();
    let seeded = if candidates.is_empty() {
        0
    } else {
        ((config.ldb_seed_fraction * config.population_size as f64).floor() as usize).min(config.population_size)
    };
    let mut members = Vec::with_capacity(config.population_size);
    if seeded > 0 {
        let offset = rng.gen_range(0..candidates.len());
        members.extend(
            (0..seeded).map(|i| Chromosome(candidates[(offset + i) % candidates.len()].raw().as_bytes().to_vec())),
        );
    }
    while members.len() < config.population_size {
        members.push(Chromosome::random(len, rng));
    }
    Population::from_members(members, target.as_bytes())
}

fn tournament<'a>(pop: &'a Population, size: usize, rng: &mut impl Rng) -> &'a Chromosome {
    let mut best = rng.gen_range(0..pop.len());
    for _ in 1..size {
        let challenger = rng.gen_range(0..pop.len());
        if pop.scores[challenger] > pop.scores[best] {
            best = challenger;
        }
    }
    &pop.members[best]
}

fn mutate(genes: &mut [u8], rate: f64, rng: &mut impl Rng) {
    if rate <= 0.0 {
        return;
    }
    for g in genes.iter_mut() {
        if rng.gen_bool(rate) {
            *g = random_gene(rng);
        }
    }
}

/// One generation. Returns the new population and its best fitness.
pub fn evolve_step(
    population: &Population,
    target: &str,
    config: &GaConfig,
    rng: &mut impl Rng,
) -> (Population, TruthValue) {
    let size = population.len();
    let target_bytes = target.as_bytes();
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|a, b| population.scores[*b].cmp(&population.scores[*a]));

    let mut next: Vec<Chromosome> = order
        .iter()
        .take(config.elitism_count.min(size))
        .map(|i| population.members[*i].clone())
        .collect();

    let Selection::Tournament(k) = config.selection;
    while next.len() < size {
        let mother = tournament(population, k, rng).genes();
        let father = tournament(population, k, rng).genes();
        let (mut a, mut b) = (mother.to_vec(), father.to_vec());
        match config.crossover {
            Crossover::SinglePoint if a.len() >= 2 => {
                let point = rng.gen_range(1..a.len());
                a[point..].copy_from_slice(&father[point..]);
                b[point..].copy_from_slice(&mother[point..]);
            }
            Crossover::SinglePoint => {}
        }
        mutate(&mut a, config.mutation_rate, rng);
        next.push(Chromosome(a));
        if next.len() < size {
            mutate(&mut b, config.mutation_rate, rng);
            next.push(Chromosome(b));
        }
    }
    let pop = Population::from_members(next, target_bytes);
    let best = pop.best().1;
    (pop, best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchOutcome {
    ExactMatch,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub target: String,
    pub best: Chromosome,
    pub fitness: TruthValue,
    pub generation: u64,
    pub elapsed_seconds: f64,
    pub confirmed_entry: Option<LdbEntry>,
    pub outcome: SearchOutcome,
}

impl MatchResult {
    pub fn is_confirmed(&self) -> bool {
        self.outcome == SearchOutcome::ExactMatch && self.confirmed_entry.is_some()
    }
}

pub fn run_search(target: &str, snapshot: &[LdbEntry], config: &GaConfig) -> Result<MatchResult, GaError> {
    run_search_observed(target, snapshot, config, |_, _| {})
}

/// [`run_search`] with a callback receiving `(generation, best fitness)`
/// after every generation, starting with generation 0.
pub fn run_search_observed(
    target: &str,
    snapshot: &[LdbEntry],
    config: &GaConfig,
    mut observer: impl FnMut(u64, TruthValue),
) -> Result<MatchResult, GaError> {
    LdbEntry::parse(target)?;
    config.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let mut population = init_population(target, snapshot, config, &mut rng);
    let mut generation = 0;
    let mut best = population.best().1;
    observer(generation, best);
    while best < TruthValue::ONE && generation < config.max_generations {
        let (next, next_best) = evolve_step(&population, target, config, &mut rng);
        population = next;
        best = next_best;
        generation += 1;
        observer(generation, best);
    }

    let best_chromosome = population.best().0.clone();
    let exact = best_chromosome.as_str() == target;
    let confirmed_entry = if exact {
        snapshot.iter().find(|e| e.raw() == target).cloned()
    } else {
        None
    };
    Ok(MatchResult {
        target: target.to_string(),
        best: best_chromosome,
        fitness: best,
        generation,
        elapsed_seconds: started.elapsed().as_secs_f64(),
        confirmed_entry,
        outcome: if exact {
            SearchOutcome::ExactMatch
        } else {
            SearchOutcome::Exhausted
        },
    })
}

/// Human-readable fields of a matched entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedMatch {
    pub src_ip: String,
    pub src_port: u16,
    pub dst_ip: String,
    pub dst_port: u16,
    pub pkt_size: u32,
    pub proto_number: u8,
    pub proto_name: String,
}

pub fn decode_match(entry_raw: &str) -> Result<DecodedMatch, GaError> {
    let t = FlowTuple::decode(entry_raw)?;
    Ok(DecodedMatch {
        src_ip: decimal_to_ip(t.src_ip.into()),
        src_port: t.src_port,
        dst_ip: decimal_to_ip(t.dst_ip.into()),
        dst_port: t.dst_port,
        pkt_size: t.pkt_size,
        proto_number: t.proto.number(),
        proto_name: t.proto.name().to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIG7: &str = "167772170:3325:3232235774:80:160:6";

    fn chromo(s: &str) -> Chromosome {
        Chromosome::new(s).unwrap()
    }

    #[test]
    fn fitness_examples() {
        assert_eq!(fitness(&chromo(FIG7), FIG7).unwrap(), TruthValue::ONE);
        let one_off = FIG7.replacen("3325", "3326", 1);
        assert_eq!(FIG7.len(), 34);
        assert_eq!(fitness(&chromo(&one_off), FIG7).unwrap().value(), 33.0 / 34.0);
        assert_eq!(fitness(&chromo("111"), "222").unwrap(), TruthValue::ZERO);
        assert!(matches!(
            fitness(&chromo("11"), "222"),
            Err(GaError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn chromosome_alphabet() {
        assert!(Chromosome::new("12:34").is_some());
        assert!(Chromosome::new("12;34").is_none());
    }

    #[test]
    fn random_init_without_ldb() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = init_population(FIG7, &[], &GaConfig::default(), &mut rng);
        assert_eq!(pop.len(), 200);
        assert!(pop.members().iter().all(|c| c.len() == FIG7.len()));
        let cfg = GaConfig {
            ldb_seed_fraction: 0.0,
            ..GaConfig::default()
        };
        let snap = vec![LdbEntry::parse(FIG7).unwrap()];
        let pop = init_population(FIG7, &snap, &cfg, &mut rng);
        assert!(pop.members().iter().all(|c| c.as_str() != FIG7));
    }

    #[test]
    fn full_seeding_hits_at_generation_zero() {
        let snap = vec![LdbEntry::parse(FIG7).unwrap(), LdbEntry::parse("1:2:3:4:5:6").unwrap()];
        let cfg = GaConfig {
            ldb_seed_fraction: 1.0,
            rng_seed: 9,
            ..GaConfig::default()
        };
        let r = run_search(FIG7, &snap, &cfg).unwrap();
        assert_eq!(r.generation, 0);
        assert_eq!(r.outcome, SearchOutcome::ExactMatch);
        assert_eq!(r.confirmed_entry.as_ref().map(LdbEntry::raw), Some(FIG7));
    }

    #[test]
    fn frozen_clones_stay_frozen() {
        let cfg = GaConfig {
            mutation_rate: 0.0,
            population_size: 10,
            ..GaConfig::default()
        };
        let members = vec![chromo("12:34"); 10];
        let pop = Population::from_members(members, b"99:99");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (next, best) = evolve_step(&pop, "99:99", &cfg, &mut rng);
        assert_eq!(next, pop);
        assert_eq!(best.value(), 0.2);
    }

    #[test]
    fn max_generations_zero_exhausts() {
        let cfg = GaConfig {
            max_generations: 0,
            ldb_seed_fraction: 0.0,
            ..GaConfig::default()
        };
        let r = run_search(FIG7, &[], &cfg).unwrap();
        assert_eq!(r.generation, 0);
        assert_eq!(r.outcome, SearchOutcome::Exhausted);
        assert!(r.fitness < TruthValue::ONE);
        assert!(r.confirmed_entry.is_none());
    }

    #[test]
    fn unconfirmed_exact_match() {
        let snap: Vec<LdbEntry> = (0..20)
            .map(|i| LdbEntry::parse(&format!("167772170:{}:3232235774:80:160:6", 3300 + i)).unwrap())
            .collect();
        let cfg = GaConfig {
            rng_seed: 5,
            ..GaConfig::default()
        };
        let r = run_search(FIG7, &snap, &cfg).unwrap();
        assert_eq!(r.outcome, SearchOutcome::ExactMatch);
        assert_eq!(r.best.as_str(), FIG7);
        assert!(r.confirmed_entry.is_none());
        assert!(!r.is_confirmed());
    }

    #[test]
    fn seeded_runs_are_reproducible() {
        let cfg = GaConfig {
            rng_seed: 42,
            max_generations: 50,
            ldb_seed_fraction: 0.0,
            ..GaConfig::default()
        };
        let mut rng_a = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut rng_b = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut a = init_population(FIG7, &[], &cfg, &mut rng_a);
        let mut b = init_population(FIG7, &[], &cfg, &mut rng_b);
        for _ in 0..20 {
            a = evolve_step(&a, FIG7, &cfg, &mut rng_a).0;
            b = evolve_step(&b, FIG7, &cfg, &mut rng_b).0;
            assert_eq!(a, b);
        }
        let mut r1 = run_search(FIG7, &[], &cfg).unwrap();
        let mut r2 = run_search(FIG7, &[], &cfg).unwrap();
        r1.elapsed_seconds = 0.0;
        r2.elapsed_seconds = 0.0;
        assert_eq!(r1, r2);
    }

    #[test]
    fn elitism_keeps_best_monotone() {
        let cfg = GaConfig {
            rng_seed: 7,
            max_generations: 300,
            ldb_seed_fraction: 0.0,
            mutation_rate: 0.2,
            ..GaConfig::default()
        };
        let mut history = Vec::new();
        run_search_observed(FIG7, &[], &cfg, |_, f| history.push(f)).unwrap();
        assert!(history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn decode_examples() {
        let d = decode_match(FIG7).unwrap();
        assert_eq!(d.src_ip, "10.0.0.10");
        assert_eq!(d.src_port, 3325);
        assert_eq!(d.dst_ip, "192.168.0.254");
        assert_eq!(d.dst_port, 80);
        assert_eq!(d.pkt_size, 160);
        assert_eq!(d.proto_name, "TCP");
        let z = decode_match("0:0:0:0:0:1").unwrap();
        assert_eq!(
            (z.src_ip.as_str(), z.dst_ip.as_str(), z.proto_name.as_str()),
            ("0.0.0.0", "0.0.0.0", "ICMP")
        );
        assert!(decode_match("1:2:3").is_err());
    }

    #[test]
    fn bad_target_rejected() {
        assert!(matches!(
            run_search("12:ab", &[], &GaConfig::default()),
            Err(GaError::Grammar(_))
        ));
        let cfg = GaConfig {
            population_size: 1,
            ..GaConfig::default()
        };
        assert!(matches!(run_search(FIG7, &[], &cfg), Err(GaError::Config(_))));
    }
}
