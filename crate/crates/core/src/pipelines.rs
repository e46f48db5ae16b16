//! End-to-end lexicon induction runs, P@1 evaluation, the iterative
//! stochastic-add procedures and the GOAT/IterProc combination system.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use log::{debug, info};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embeddings::{
    build_graph, filter_one_to_one, load_dictionary, load_vec, preprocess, split_seeds,
    EmbeddingSpace, Lexicon,
};
use crate::error::{Error, Result};
use crate::graphmatch::{run, seeded_align, GradientBackend, Init, StepSolver};
use crate::matrix::DenseMatrix;
use crate::procrustes::{fit_orthogonal, nearest, RetrievalMethod, DEFAULT_CSLS_K};
use crate::sinkhorn::LotParams;

pub const DEFAULT_H: usize = 100;
pub const DEFAULT_I: usize = 5;

type Pair = (String, String);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseMethod {
    Procrustes,
    Sgm,
    Goat,
}

impl BaseMethod {
    pub fn tag(self) -> &'static str {
        match self {
            BaseMethod::Procrustes => "procrustes",
            BaseMethod::Sgm => "sgm",
            BaseMethod::Goat => "goat",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Procrustes,
    Sgm,
    Goat,
    IterProc,
    IterSgm,
    IterGoat,
    Combine,
}

impl Method {
    pub fn single(base: BaseMethod) -> Self {
        match base {
            BaseMethod::Procrustes => Method::Procrustes,
            BaseMethod::Sgm => Method::Sgm,
            BaseMethod::Goat => Method::Goat,
        }
    }

    pub fn iterative(base: BaseMethod) -> Self {
        match base {
            BaseMethod::Procrustes => Method::IterProc,
            BaseMethod::Sgm => Method::IterSgm,
            BaseMethod::Goat => Method::IterGoat,
        }
    }

    /// The underlying one-shot method, if any.
    pub fn base(self) -> Option<BaseMethod> {
        match self {
            Method::Procrustes | Method::IterProc => Some(BaseMethod::Procrustes),
            Method::Sgm | Method::IterSgm => Some(BaseMethod::Sgm),
            Method::Goat | Method::IterGoat => Some(BaseMethod::Goat),
            Method::Combine => None,
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Method::IterProc | Method::IterSgm | Method::IterGoat)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    #[default]
    Forward,
    Reverse,
    Both,
}

impl Direction {
    pub fn runs(self) -> &'static [bool] {
        match self {
            Direction::Forward => &[false],
            Direction::Reverse => &[true],
            Direction::Both => &[false, true],
        }
    }
}

/// Which system produces the final translations of a combination run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ending {
    /// Start with GOAT, end with IterProc.
    #[default]
    #[serde(rename = "proc")]
    EndProc,
    /// Start with IterProc, end with GOAT.
    #[serde(rename = "goat")]
    EndGoat,
}

impl Ending {
    pub fn tag(self) -> &'static str {
        match self {
            Ending::EndProc => "ep",
            Ending::EndGoat => "eg",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    #[default]
    Barycenter,
    Random,
}

/// Target words Procrustes retrieves from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalScope {
    /// Target words of the dictionary.
    #[default]
    Dictionary,
    /// Every loaded target word.
    Full,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub src_emb: PathBuf,
    pub tgt_emb: PathBuf,
    pub dict: PathBuf,
    /// Target-to-source dictionary for reverse-direction experiments.
    pub rev_dict: Option<PathBuf>,
    /// Rows to read from each embedding file.
    pub limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub pair: String,
    pub data: Option<DataPaths>,
    pub seeds: usize,
    pub method: Method,
    pub direction: Direction,
    /// Hypotheses added per stochastic-add iteration.
    pub h: usize,
    /// Stochastic-add iterations.
    pub i: usize,
    pub cycles: usize,
    pub ending: Ending,
    pub lot: LotParams,
    pub init: InitKind,
    pub max_iter: usize,
    pub tol: f64,
    pub backend: GradientBackend,
    pub csls_k: usize,
    pub retrieval: RetrievalScope,
    /// Pass every intersected hypothesis between combination stages
    /// instead of at most `i·h` of them.
    pub pass_all_hypotheses: bool,
    pub rng_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            pair: "src-tgt".into(),
            data: None,
            seeds: 0,
            method: Method::Goat,
            direction: Direction::Forward,
            h: DEFAULT_H,
            i: DEFAULT_I,
            cycles: 1,
            ending: Ending::EndProc,
            lot: LotParams::default(),
            init: InitKind::Barycenter,
            max_iter: crate::graphmatch::DEFAULT_MAX_ITER,
            tol: crate::graphmatch::DEFAULT_TOL,
            backend: GradientBackend::Clamped,
            csls_k: DEFAULT_CSLS_K,
            retrieval: RetrievalScope::Dictionary,
            pass_all_hypotheses: false,
            rng_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.method.is_iterative() || self.method == Method::Combine) && (self.h == 0 || self.i == 0) {
            return Err(Error::validation("H and I must be at least 1 for iterative methods"));
        }
        if self.method == Method::Combine && self.cycles == 0 {
            return Err(Error::validation("combination needs at least one cycle"));
        }
        if self.csls_k == 0 {
            return Err(Error::validation("CSLS k must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::validation("tol must be positive"));
        }
        self.lot.validate()
    }

    /// First 16 hex digits of the SHA-256 of the JSON-serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn method_tag(&self) -> String {
        match self.method {
            Method::Procrustes => "procrustes".into(),
            Method::Sgm => "sgm".into(),
            Method::Goat => "goat".into(),
            Method::IterProc => "iter-proc".into(),
            Method::IterSgm => "iter-sgm".into(),
            Method::IterGoat => "iter-goat".into(),
            Method::Combine => format!("combine-{}", self.ending.tag()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub target: String,
    pub score: f64,
    /// System (and stage) that proposed it.
    pub provenance: String,
}

/// At most one proposed target per source word, ordered by source.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    map: BTreeMap<String, Hypothesis>,
}

impl HypothesisSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, S, T>(pairs: I, provenance: &str) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut set = Self::new();
        for (s, t) in pairs {
            set.insert(s.into(), t.into(), 0.0, provenance);
        }
        set
    }

    /// Replaces any earlier hypothesis for `source`.
    pub fn insert(&mut self, source: String, target: String, score: f64, provenance: &str) {
        self.map.insert(
            source,
            Hypothesis {
                target,
                score,
                provenance: provenance.to_string(),
            },
        );
    }

    pub fn get(&self, source: &str) -> Option<&Hypothesis> {
        self.map.get(source)
    }

    pub fn target(&self, source: &str) -> Option<&str> {
        self.map.get(source).map(|h| h.target.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Hypothesis)> {
        self.map.iter()
    }

    pub fn pairs(&self) -> Vec<Pair> {
        self.map
            .iter()
            .map(|(s, h)| (s.clone(), h.target.clone()))
            .collect()
    }

    /// `source<TAB>target<TAB>score` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (s, h) in &self.map {
            let _ = writeln!(out, "{s}\t{}\t{}", h.target, h.score);
        }
        out
    }
}

/// Keeps `x → y` iff `fwd` proposes it and `rev` proposes `y → x`.
pub fn intersect_hypotheses(fwd: &HypothesisSet, rev: &HypothesisSet) -> HypothesisSet {
    let mut out = HypothesisSet::new();
    for (x, h) in fwd.iter() {
        if let Some(back) = rev.get(&h.target) {
            if &back.target == x {
                let prov = if h.provenance == back.provenance {
                    h.provenance.clone()
                } else {
                    format!("{}&{}", h.provenance, back.provenance)
                };
                out.insert(x.clone(), h.target.clone(), h.score, &prov);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Precision {
    pub correct: usize,
    pub total: usize,
    /// Percent, rounded to one decimal.
    pub p_at_1: f64,
}

pub fn precision_at_1(predictions: &HypothesisSet, test: &Lexicon) -> Result<Precision> {
    if test.is_empty() {
        return Err(Error::domain("empty test set"));
    }
    let correct = test
        .pairs
        .iter()
        .filter(|(x, y)| predictions.target(x) == Some(y.as_str()))
        .count();
    let p = 100.0 * correct as f64 / test.len() as f64;
    Ok(Precision {
        correct,
        total: test.len(),
        p_at_1: (p * 10.0).round() / 10.0,
    })
}

/// P@1 in percent with one decimal. Unpredicted sources count as wrong.
pub fn evaluate_p_at_1(predictions: &HypothesisSet, test: &Lexicon) -> Result<f64> {
    precision_at_1(predictions, test).map(|p| p.p_at_1)
}

/// Spaces, dictionary and seed/test split for one translation direction.
#[derive(Clone, Debug)]
pub struct BliTask {
    pub pair: String,
    pub src: Arc<EmbeddingSpace>,
    pub tgt: Arc<EmbeddingSpace>,
    /// One-to-one, in-vocabulary, sorted by source frequency: `gold ++ test`.
    pub lexicon: Lexicon,
    pub gold: Lexicon,
    pub test: Lexicon,
    /// Dictionary words of each side in the space's own frequency order;
    /// these are the graph vertices.
    pub src_vocab: Vec<String>,
    pub tgt_vocab: Vec<String>,
    graphs: Arc<OnceLock<(DenseMatrix, DenseMatrix)>>,
}

impl BliTask {
    /// Preprocesses the spaces if needed, filters the lexicon to one-to-one
    /// and splits off the `seeds` most frequent pairs.
    pub fn new(
        pair: &str,
        src: EmbeddingSpace,
        tgt: EmbeddingSpace,
        lexicon: &Lexicon,
        seeds: usize,
    ) -> Result<Self> {
        let prep = |s: EmbeddingSpace| if s.is_preprocessed() { Ok(s) } else { preprocess(&s) };
        let src = prep(src)?;
        let tgt = prep(tgt)?;
        let filtered = filter_one_to_one(lexicon);
        let (gold, test) = split_seeds(&filtered, seeds, &src, &tgt)?;
        let mut pairs = gold.pairs.clone();
        pairs.extend(test.pairs.iter().cloned());
        let lexicon = Lexicon::new(pairs);
        let src_vocab = frequency_ordered(&src, lexicon.sources());
        let tgt_vocab = frequency_ordered(&tgt, lexicon.targets());
        Ok(Self {
            pair: pair.to_string(),
            src: Arc::new(src),
            tgt: Arc::new(tgt),
            lexicon,
            gold,
            test,
            src_vocab,
            tgt_vocab,
            graphs: Arc::new(OnceLock::new()),
        })
    }

    pub fn from_files(pair: &str, paths: &DataPaths, seeds: usize) -> Result<Self> {
        let src = load_vec(&paths.src_emb, paths.limit)?;
        let tgt = load_vec(&paths.tgt_emb, paths.limit)?;
        let lex = load_dictionary(&paths.dict)?;
        info!(
            "{pair}: {} source words, {} target words, {} dictionary pairs",
            src.len(),
            tgt.len(),
            lex.len()
        );
        Self::new(pair, src, tgt, &lex, seeds)
    }

    /// Same pairs and split with the roles of the two sides swapped.
    pub fn reversed(&self) -> Self {
        let swapped = OnceLock::new();
        if let Some((gx, gy)) = self.graphs.get() {
            let _ = swapped.set((gy.clone(), gx.clone()));
        }
        Self {
            pair: reverse_pair(&self.pair),
            src: self.tgt.clone(),
            tgt: self.src.clone(),
            lexicon: self.lexicon.reversed(),
            gold: self.gold.reversed(),
            test: self.test.reversed(),
            src_vocab: self.tgt_vocab.clone(),
            tgt_vocab: self.src_vocab.clone(),
            graphs: Arc::new(swapped),
        }
    }

    /// Cosine graphs over `src_vocab` and `tgt_vocab`.
    pub fn graphs(&self) -> Result<&(DenseMatrix, DenseMatrix)> {
        if let Some(g) = self.graphs.get() {
            return Ok(g);
        }
        let gx = build_graph(&self.src, &self.src_vocab)?;
        let gy = build_graph(&self.tgt, &self.tgt_vocab)?;
        Ok(self.graphs.get_or_init(|| (gx, gy)))
    }

    fn gold_sets(&self) -> (HashSet<&str>, HashSet<&str>) {
        (
            self.gold.pairs.iter().map(|p| p.0.as_str()).collect(),
            self.gold.pairs.iter().map(|p| p.1.as_str()).collect(),
        )
    }
}

fn frequency_ordered(space: &EmbeddingSpace, words: Vec<&str>) -> Vec<String> {
    let mut ranked: Vec<(usize, &str)> = words
        .into_iter()
        .map(|w| (space.index_of(w).expect("in-vocabulary word"), w))
        .collect();
    ranked.sort_unstable();
    ranked.into_iter().map(|(_, w)| w.to_string()).collect()
}

fn reverse_pair(pair: &str) -> String {
    match pair.split_once('-') {
        Some((a, b)) => format!("{b}-{a}"),
        None => format!("{pair}-rev"),
    }
}

/// One base-method run over `task` with `seeds` (gold first) as supervision.
/// Predicts every dictionary source except the gold seeds.
pub fn induce(
    task: &BliTask,
    base: BaseMethod,
    seeds: &[Pair],
    config: &ExperimentConfig,
    provenance: &str,
) -> Result<HypothesisSet> {
    induce_counted(task, base, seeds, config, provenance).map(|(h, _)| h)
}

/// [`induce`] plus the number of LOT solves that hit their iteration cap.
fn induce_counted(
    task: &BliTask,
    base: BaseMethod,
    seeds: &[Pair],
    config: &ExperimentConfig,
    provenance: &str,
) -> Result<(HypothesisSet, usize)> {
    let mut lot_unconverged = 0;
    let (gold_src, _) = task.gold_sets();
    let sources: Vec<&str> = task.src_vocab.iter().map(String::as_str).collect();
    let targets: Vec<&str> = task.tgt_vocab.iter().map(String::as_str).collect();
    let mut out = HypothesisSet::new();
    match base {
        BaseMethod::Procrustes => {
            if seeds.is_empty() {
                return Ok((out, 0));
            }
            let seed_src: Vec<&str> = seeds.iter().map(|p| p.0.as_str()).collect();
            let seed_tgt: Vec<&str> = seeds.iter().map(|p| p.1.as_str()).collect();
            let map = fit_orthogonal(&task.src.rows_for(&seed_src)?, &task.tgt.rows_for(&seed_tgt)?)?;
            let mapped = map.apply(&task.src.rows_for(&sources)?)?;
            let dict_rows;
            let candidates = match config.retrieval {
                RetrievalScope::Dictionary => {
                    dict_rows = task.tgt.indices(&targets)?;
                    Some(&dict_rows[..])
                }
                RetrievalScope::Full => None,
            };
            let n_cand = candidates.map_or(task.tgt.len(), |c| c.len());
            let k = config.csls_k.min(sources.len().min(n_cand).saturating_sub(1));
            let method = if k >= 1 {
                RetrievalMethod::Csls { k }
            } else {
                RetrievalMethod::CosineNn
            };
            let best = nearest(&mapped, task.tgt.vectors(), method, candidates)?;
            for (x, b) in sources.iter().zip(best) {
                if let (false, Some((j, score))) = (gold_src.contains(x), b) {
                    out.insert(x.to_string(), task.tgt.words()[j].clone(), score, provenance);
                }
            }
        }
        BaseMethod::Sgm | BaseMethod::Goat => {
            let (gx, gy) = task.graphs()?;
            let src_pos: HashMap<&str, usize> = sources.iter().enumerate().map(|(i, w)| (*w, i)).collect();
            let tgt_pos: HashMap<&str, usize> = targets.iter().enumerate().map(|(i, w)| (*w, i)).collect();
            let seed_idx = seeds
                .iter()
                .map(|(x, y)| match (src_pos.get(x.as_str()), tgt_pos.get(y.as_str())) {
                    (Some(&i), Some(&j)) => Ok((i, j)),
                    _ => Err(Error::Lookup(format!("{x} / {y}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let solver = match base {
                BaseMethod::Sgm => StepSolver::Hungarian,
                _ => StepSolver::Lot(config.lot),
            };
            let mut aligned = seeded_align(gx, gy, &seed_idx, solver)?;
            aligned.problem.max_iter = config.max_iter;
            aligned.problem.tol = config.tol;
            aligned.problem.backend = config.backend;
            if config.init == InitKind::Random {
                aligned.problem.init = Init::RandomDs(config.rng_seed);
            }
            let result = run(&aligned.problem, None)?;
            lot_unconverged = result.lot_unconverged;
            debug!(
                "{provenance}: {} iterations, converged {}, f = {:?}",
                result.iterations,
                result.converged,
                result.objective_trajectory.last()
            );
            let relaxed = result.final_relaxed.matrix();
            for (i, &j) in result.permutation.image().iter().enumerate() {
                let (xi, yj) = (aligned.x_order[i], aligned.y_order[j]);
                if xi >= aligned.x_len || yj >= aligned.y_len || gold_src.contains(sources[xi]) {
                    continue;
                }
                out.insert(sources[xi].to_string(), targets[yj].to_string(), relaxed.get(i, j), provenance);
            }
        }
    }
    Ok((out, lot_unconverged))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub cycle: usize,
    pub iteration: usize,
    /// Seed pairs used by the forward run (gold plus hypotheses).
    pub seeds: usize,
    pub gold: usize,
    pub test: usize,
    pub intersection: Option<usize>,
    pub passed: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub pair: String,
    pub method: String,
    pub seeds: usize,
    pub p_at_1: f64,
    pub n_test: usize,
    pub correct: usize,
    pub cycles: usize,
    pub ending: Option<String>,
    pub rng_seed: u64,
    pub wall_ms: Option<u64>,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub stages: Vec<StageRecord>,
    /// LOT solves that stopped at their iteration cap.
    pub lot_unconverged: usize,
    #[serde(skip)]
    pub predictions: HypothesisSet,
}

impl RunReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn without_timing(mut self) -> Self {
        self.wall_ms = None;
        self
    }
}

/// Drops hypotheses that reuse a word already taken by `base`, then adds
/// the survivors after it.
fn extend_seeds(base: &[Pair], hyps: &[Pair]) -> Vec<Pair> {
    let src: HashSet<&str> = base.iter().map(|p| p.0.as_str()).collect();
    let tgt: HashSet<&str> = base.iter().map(|p| p.1.as_str()).collect();
    let mut out = base.to_vec();
    out.extend(
        hyps.iter()
            .filter(|(x, y)| !src.contains(x.as_str()) && !tgt.contains(y.as_str()))
            .cloned(),
    );
    out
}

fn available(pool: &HypothesisSet, base: &[Pair]) -> Vec<Pair> {
    let src: HashSet<&str> = base.iter().map(|p| p.0.as_str()).collect();
    let tgt: HashSet<&str> = base.iter().map(|p| p.1.as_str()).collect();
    pool.pairs()
        .into_iter()
        .filter(|(x, y)| !src.contains(x.as_str()) && !tgt.contains(y.as_str()))
        .collect()
}

/// Uniform sample of at most `budget` pairs, kept in pool order.
fn sample_pairs(pool: Vec<Pair>, budget: usize, rng: &mut ChaCha8Rng) -> Vec<Pair> {
    if pool.len() <= budget {
        return pool;
    }
    let mut idx = sample(rng, pool.len(), budget).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

fn reversed_pairs(pairs: &[Pair]) -> Vec<Pair> {
    pairs.iter().map(|(a, b)| (b.clone(), a.clone())).collect()
}

fn check_bookkeeping(task: &BliTask, seeds: &[Pair]) -> Result<()> {
    if task.gold.len() + task.test.len() != task.lexicon.len() || seeds.len() < task.gold.len() {
        return Err(Error::Numerical("seed/test bookkeeping violated".into()));
    }
    if seeds[..task.gold.len()] != task.gold.pairs[..] {
        return Err(Error::Numerical("gold seeds were displaced".into()));
    }
    Ok(())
}

struct Context<'a> {
    fwd: &'a BliTask,
    rev: &'a BliTask,
    config: &'a ExperimentConfig,
    rng: ChaCha8Rng,
    stages: Vec<StageRecord>,
    lot_unconverged: usize,
}

impl<'a> Context<'a> {
    fn new(fwd: &'a BliTask, rev: &'a BliTask, config: &'a ExperimentConfig) -> Self {
        Self {
            fwd,
            rev,
            config,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            stages: Vec::new(),
            lot_unconverged: 0,
        }
    }

    fn record(&mut self, stage: String, cycle: usize, iteration: usize, seeds: usize) -> usize {
        self.stages.push(StageRecord {
            stage,
            cycle,
            iteration,
            seeds,
            gold: self.fwd.gold.len(),
            test: self.fwd.test.len(),
            intersection: None,
            passed: None,
        });
        self.stages.len() - 1
    }

    /// Forward (and optionally reverse) run of `base` seeded with `seeds`.
    fn pair_run(
        &mut self,
        base: BaseMethod,
        seeds: &[Pair],
        want_reverse: bool,
        label: &str,
    ) -> Result<(HypothesisSet, Option<HypothesisSet>)> {
        check_bookkeeping(self.fwd, seeds)?;
        let (fwd, n) = induce_counted(self.fwd, base, seeds, self.config, &format!("{label}/fwd"))?;
        self.lot_unconverged += n;
        let rev = if want_reverse {
            let (rev, n) =
                induce_counted(self.rev, base, &reversed_pairs(seeds), self.config, &format!("{label}/rev"))?;
            self.lot_unconverged += n;
            Some(rev)
        } else {
            None
        };
        Ok((fwd, rev))
    }

    /// Stochastic-add iterations of `base` on top of `start` (gold plus any
    /// passed hypotheses). Returns the last forward run, and the last reverse
    /// run when `want_reverse`.
    fn iterate(
        &mut self,
        base: BaseMethod,
        start: &[Pair],
        want_reverse: bool,
        cycle: usize,
    ) -> Result<(HypothesisSet, Option<HypothesisSet>, usize)> {
        let iters = self.config.i;
        let mut seeds = start.to_vec();
        let mut it = 1;
        loop {
            let label = format!("iter-{}/c{cycle}/i{it}", base.tag());
            let last = it == iters;
            let rec = self.record(label.clone(), cycle, it, seeds.len());
            let (fwd, rev) = self.pair_run(base, &seeds, !last || want_reverse, &label)?;
            if last {
                return Ok((fwd, rev, it));
            }
            let rev = rev.expect("reverse run requested");
            let inter = intersect_hypotheses(&fwd, &rev);
            let pool = available(&inter, start);
            let budget = it * self.config.h;
            let pool_len = pool.len();
            let chosen = sample_pairs(pool, budget, &mut self.rng);
            self.stages[rec].intersection = Some(inter.len());
            self.stages[rec].passed = Some(chosen.len());
            let next = extend_seeds(start, &chosen);
            if chosen.len() == pool_len && next == seeds {
                // every hypothesis is already in: further runs repeat this one
                return Ok((fwd, if want_reverse { Some(rev) } else { None }, it));
            }
            seeds = next;
            it += 1;
        }
    }
}

fn finish(
    task: &BliTask,
    config: &ExperimentConfig,
    predictions: HypothesisSet,
    cycles: usize,
    ctx: Context<'_>,
    started: Instant,
) -> Result<RunReport> {
    let p = precision_at_1(&predictions, &task.test)?;
    Ok(RunReport {
        pair: task.pair.clone(),
        method: config.method_tag(),
        seeds: task.gold.len(),
        p_at_1: p.p_at_1,
        n_test: p.total,
        correct: p.correct,
        cycles,
        ending: (config.method == Method::Combine).then(|| config.ending.tag().to_string()),
        rng_seed: config.rng_seed,
        wall_ms: Some(started.elapsed().as_millis() as u64),
        config_hash: config.hash(),
        config: config.clone(),
        stages: ctx.stages,
        lot_unconverged: ctx.lot_unconverged,
        predictions,
    })
}

/// One Procrustes, SGM or GOAT run on the gold seeds.
pub fn run_single(task: &BliTask, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    let base = config
        .method
        .base()
        .filter(|_| !config.method.is_iterative())
        .ok_or_else(|| Error::validation(format!("{} is not a single-run method", config.method_tag())))?;
    let started = Instant::now();
    let mut ctx = Context::new(task, task, config);
    ctx.record(base.tag().to_string(), 0, 0, task.gold.len());
    let (fwd, _) = ctx.pair_run(base, &task.gold.pairs, false, base.tag())?;
    finish(task, config, fwd, 0, ctx, started)
}

/// Iterative Procrustes/SGM/GOAT with stochastic-add: iteration `i` adds
/// `i·H` hypotheses sampled from the forward/reverse intersection to the
/// gold seeds.
pub fn iterative_stochastic_add(
    task: &BliTask,
    config: &ExperimentConfig,
    base: BaseMethod,
) -> Result<RunReport> {
    config.validate()?;
    if base != BaseMethod::Procrustes {
        task.graphs()?;
    }
    let rev = task.reversed();
    let started = Instant::now();
    let mut ctx = Context::new(task, &rev, config);
    let (fwd, _, iterations) = ctx.iterate(base, &task.gold.pairs, false, 1)?;
    finish(task, config, fwd, iterations, ctx, started)
}

/// GOAT and IterProc alternating over `cycles` cycles, each stage seeded
/// with the gold pairs plus the intersected hypotheses of the previous one.
pub fn combine(task: &BliTask, config: &ExperimentConfig) -> Result<RunReport> {
    config.validate()?;
    task.graphs()?;
    let rev = task.reversed();
    let started = Instant::now();
    let mut ctx = Context::new(task, &rev, config);
    let order: [BaseMethod; 2] = match config.ending {
        Ending::EndProc => [BaseMethod::Goat, BaseMethod::Procrustes],
        Ending::EndGoat => [BaseMethod::Procrustes, BaseMethod::Goat],
    };
    let gold = task.gold.pairs.clone();
    let mut passed: Vec<Pair> = Vec::new();
    let mut final_fwd = HypothesisSet::new();
    for cycle in 1..=config.cycles {
        for (k, &stage) in order.iter().enumerate() {
            let last = cycle == config.cycles && k == 1;
            let seeds = extend_seeds(&gold, &passed);
            let (fwd, rev) = match stage {
                BaseMethod::Procrustes => {
                    let (f, r, _) = ctx.iterate(stage, &seeds, !last, cycle)?;
                    (f, r)
                }
                _ => {
                    let label = format!("{}/c{cycle}", stage.tag());
                    ctx.record(label.clone(), cycle, 0, seeds.len());
                    ctx.pair_run(stage, &seeds, !last, &label)?
                }
            };
            if last {
                final_fwd = fwd;
                break;
            }
            let inter = intersect_hypotheses(&fwd, &rev.expect("reverse run requested"));
            let pool = available(&inter, &gold);
            let budget = config.i * config.h;
            let chosen = if config.pass_all_hypotheses {
                pool
            } else {
                sample_pairs(pool, budget, &mut ctx.rng)
            };
            if let Some(last_rec) = ctx.stages.last_mut() {
                last_rec.intersection = Some(inter.len());
                last_rec.passed = Some(chosen.len());
            }
            passed = chosen;
        }
    }
    finish(task, config, final_fwd, config.cycles, ctx, started)
}

/// Dispatches on `config.method`.
pub fn run_experiment(task: &BliTask, config: &ExperimentConfig) -> Result<RunReport> {
    match config.method {
        Method::Procrustes | Method::Sgm | Method::Goat => run_single(task, config),
        Method::IterProc | Method::IterSgm | Method::IterGoat => {
            iterative_stochastic_add(task, config, config.method.base().expect("iterative base"))
        }
        Method::Combine => combine(task, config),
    }
}

/// Runs `config` in each direction it asks for. The reverse direction uses
/// `reverse_task` when given (a separate target-to-source dictionary) and
/// `task.reversed()` otherwise. Combination runs with [`Direction::Both`]
/// emit both endings per direction.
pub fn run_directions(
    task: &BliTask,
    reverse_task: Option<&BliTask>,
    config: &ExperimentConfig,
) -> Result<Vec<RunReport>> {
    let endings: &[Ending] = match (config.method, config.direction) {
        (Method::Combine, Direction::Both) => &[Ending::EndProc, Ending::EndGoat],
        _ => std::slice::from_ref(&config.ending),
    };
    let mut reports = Vec::new();
    for &reverse in config.direction.runs() {
        let owned;
        let t = match (reverse, reverse_task) {
            (false, _) => task,
            (true, Some(r)) => r,
            (true, None) => {
                owned = task.reversed();
                &owned
            }
        };
        for &ending in endings {
            let cfg = ExperimentConfig {
                pair: t.pair.clone(),
                ending,
                ..config.clone()
            };
            reports.push(run_experiment(t, &cfg)?);
        }
    }
    Ok(reports)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub spearman: f64,
    pub pearson: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Ranks from 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start;
        while end + 1 < idx.len() && x[idx[end + 1]] == x[idx[start]] {
            end += 1;
        }
        let r = (start + end) as f64 / 2.0 + 1.0;
        for &i in &idx[start..=end] {
            ranks[i] = r;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman's ρ (Pearson on average ranks) and Pearson's r.
pub fn correlation_report(metric: &[f64], precision: &[f64]) -> Result<Correlation> {
    if metric.len() != precision.len() {
        return Err(Error::shape(format!(
            "{} metric values for {} precision values",
            metric.len(),
            precision.len()
        )));
    }
    if metric.len() < 3 {
        return Err(Error::domain("correlation needs at least 3 pairs"));
    }
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    if constant(metric) || constant(precision) {
        return Err(Error::domain("correlation of a constant series"));
    }
    Ok(Correlation {
        spearman: pearson(&average_ranks(metric), &average_ranks(precision)),
        pearson: pearson(metric, precision),
    })
}

/// Aligned plain-text table of reports.
pub fn render_table(reports: &[RunReport]) -> String {
    let header = ["pair", "method", "seeds", "P@1", "n_test", "cycles", "ending"];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            [
                r.pair.clone(),
                r.method.clone(),
                r.seeds.to_string(),
                format!("{:.1}", r.p_at_1),
                r.n_test.to_string(),
                r.cycles.to_string(),
                r.ending.clone().unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut width = header.map(str::len);
    for row in &rows {
        for (w, cell) in width.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for row in &rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// `pair,seeds,P,S,G,Delta` rows (Procrustes, SGM, GOAT P@1 and GOAT − SGM),
/// one per (pair, seeds) in first-seen order.
pub fn table_csv(reports: &[RunReport]) -> String {
    let mut keys: Vec<(String, usize)> = Vec::new();
    let mut cells: HashMap<(String, usize), [Option<f64>; 3]> = HashMap::new();
    for r in reports {
        let col = match r.method.as_str() {
            "procrustes" => 0,
            "sgm" => 1,
            "goat" => 2,
            _ => continue,
        };
        let key = (r.pair.clone(), r.seeds);
        if !cells.contains_key(&key) {
            keys.push(key.clone());
        }
        cells.entry(key).or_default()[col] = Some(r.p_at_1);
    }
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.1}")).unwrap_or_default();
    let mut out = String::from("pair,seeds,P,S,G,Delta\n");
    for key in keys {
        let [p, s, g] = cells[&key];
        let delta = match (s, g) {
            (Some(s), Some(g)) => Some(g - s),
            _ => None,
        };
        let _ = writeln!(out, "{},{},{},{},{},{}", key.0, key.1, fmt(p), fmt(s), fmt(g), fmt(delta));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{twin_spaces, TwinSpec};

    fn set(pairs: &[(&str, &str)]) -> HypothesisSet {
        HypothesisSet::from_pairs(pairs.iter().copied(), "t")
    }

    fn lex(pairs: &[(&str, &str)]) -> Lexicon {
        Lexicon::new(pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect())
    }

    fn twin_task(words: usize, dim: usize, noise: f64, seeds: usize) -> BliTask {
        let (src, tgt, lex) = twin_spaces(&TwinSpec {
            words,
            dim,
            noise,
            rotate: true,
            seed: 17,
        });
        BliTask::new("s-t", src, tgt, &lex, seeds).unwrap()
    }

    #[test]
    fn p_at_1_examples() {
        let test = lex(&[("a", "x"), ("b", "y"), ("c", "z"), ("d", "w"), ("e", "v")]);
        let all = set(&[("a", "x"), ("b", "y"), ("c", "z"), ("d", "w"), ("e", "v")]);
        assert_eq!(evaluate_p_at_1(&all, &test).unwrap(), 100.0);
        assert_eq!(evaluate_p_at_1(&HypothesisSet::new(), &test).unwrap(), 0.0);
        let two = set(&[("a", "x"), ("b", "y"), ("c", "q")]);
        assert_eq!(evaluate_p_at_1(&two, &test).unwrap(), 40.0);
        assert!(matches!(evaluate_p_at_1(&two, &Lexicon::default()), Err(Error::Domain(_))));
        let third = lex(&[("a", "x"), ("b", "n"), ("c", "n2")]);
        assert_eq!(evaluate_p_at_1(&all, &third).unwrap(), 33.3);
    }

    #[test]
    fn intersection_examples() {
        let fwd = set(&[("a", "x"), ("b", "y")]);
        let rev = set(&[("x", "a"), ("y", "c")]);
        assert_eq!(intersect_hypotheses(&fwd, &rev).pairs(), vec![("a".into(), "x".into())]);
        assert_eq!(intersect_hypotheses(&fwd, &set(&[("x", "a"), ("y", "b")])), fwd);
        assert!(intersect_hypotheses(&fwd, &set(&[("q", "r")])).is_empty());
    }

    #[test]
    fn sampling_takes_everything_when_short() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool: Vec<Pair> = (0..5).map(|i| (format!("a{i}"), format!("b{i}"))).collect();
        assert_eq!(sample_pairs(pool.clone(), 10, &mut rng), pool);
        let got = sample_pairs(pool.clone(), 3, &mut rng);
        assert_eq!(got.len(), 3);
        assert!(got.iter().all(|p| pool.contains(p)));
    }

    #[test]
    fn extend_keeps_gold_first_and_skips_conflicts() {
        let gold: Vec<Pair> = vec![("a".into(), "x".into())];
        let hyps: Vec<Pair> = vec![("a".into(), "y".into()), ("b".into(), "x".into()), ("c".into(), "z".into())];
        assert_eq!(
            extend_seeds(&gold, &hyps),
            vec![("a".to_string(), "x".to_string()), ("c".to_string(), "z".to_string())]
        );
    }

    #[test]
    fn correlation_examples() {
        let up = correlation_report(&[1.0, 2.0, 3.0, 4.0], &[1.0, 4.0, 9.0, 16.0]).unwrap();
        assert!((up.spearman - 1.0).abs() < 1e-12);
        assert!(up.pearson > 0.0 && up.pearson <= 1.0);
        let down = correlation_report(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((down.spearman + 1.0).abs() < 1e-12);
        // ranks (1,2,3,4) vs (2,1,4,3): Σd² = 4, ρ = 1 − 6·4/(4·15) = 0.6
        let hand = correlation_report(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((hand.spearman - 0.6).abs() < 1e-12);
        assert!(matches!(correlation_report(&[1.0, 2.0], &[1.0, 2.0]), Err(Error::Domain(_))));
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn goat_recovers_twin_spaces() {
        let task = twin_task(120, 20, 0.0, 12);
        let cfg = ExperimentConfig {
            method: Method::Goat,
            ..Default::default()
        };
        let r = run_single(&task, &cfg).unwrap();
        assert_eq!(r.p_at_1, 100.0);
        assert_eq!(r.n_test, 108);
        assert_eq!(r.seeds, 12);
    }

    #[test]
    fn procrustes_needs_seeds() {
        let task = twin_task(60, 10, 0.0, 0);
        let cfg = ExperimentConfig {
            method: Method::Procrustes,
            ..Default::default()
        };
        assert_eq!(run_single(&task, &cfg).unwrap().p_at_1, 0.0);
        let task = twin_task(60, 10, 0.0, 20);
        assert_eq!(run_single(&task, &cfg).unwrap().p_at_1, 100.0);
        let full = ExperimentConfig {
            retrieval: RetrievalScope::Full,
            ..cfg
        };
        assert_eq!(run_single(&task, &full).unwrap().p_at_1, 100.0);
    }

    #[test]
    fn reverse_task_swaps_roles() {
        let task = twin_task(30, 5, 0.0, 5);
        let rev = task.reversed();
        assert_eq!(rev.pair, "t-s");
        assert_eq!(rev.gold.pairs[0].1, task.gold.pairs[0].0);
        assert_eq!(rev.src.words(), task.tgt.words());
        let (gx, gy) = task.graphs().unwrap();
        let rev = task.reversed();
        let (rx, ry) = rev.graphs().unwrap();
        assert_eq!((gx, gy), (ry, rx));
    }

    #[test]
    fn iterative_and_combine_are_reproducible() {
        let task = twin_task(80, 12, 0.3, 6);
        for method in [Method::IterProc, Method::IterSgm, Method::Combine] {
            let cfg = ExperimentConfig {
                method,
                h: 10,
                i: 3,
                rng_seed: 7,
                ..Default::default()
            };
            let a = run_experiment(&task, &cfg).unwrap().without_timing();
            let b = run_experiment(&task, &cfg).unwrap().without_timing();
            assert_eq!(a.to_json_line(), b.to_json_line());
            assert_eq!(a.predictions, b.predictions);
            assert!((0.0..=100.0).contains(&a.p_at_1));
            for s in &a.stages {
                assert_eq!(s.gold + s.test, 80);
                assert!(s.seeds >= s.gold);
            }
        }
    }

    #[test]
    fn both_directions_and_endings() {
        let task = twin_task(40, 8, 0.0, 10);
        let cfg = ExperimentConfig {
            method: Method::Combine,
            direction: Direction::Both,
            h: 5,
            i: 2,
            ..Default::default()
        };
        let reports = run_directions(&task, None, &cfg).unwrap();
        let tags: Vec<(&str, &str)> = reports.iter().map(|r| (r.pair.as_str(), r.method.as_str())).collect();
        assert_eq!(
            tags,
            vec![("s-t", "combine-ep"), ("s-t", "combine-eg"), ("t-s", "combine-ep"), ("t-s", "combine-eg")]
        );
    }

    #[test]
    fn single_rejects_iterative_method() {
        let task = twin_task(20, 4, 0.0, 2);
        let cfg = ExperimentConfig {
            method: Method::IterGoat,
            ..Default::default()
        };
        assert!(run_single(&task, &cfg).is_err());
    }

    #[test]
    fn tables() {
        let task = twin_task(40, 8, 0.0, 10);
        let mut reports = Vec::new();
        for method in [Method::Procrustes, Method::Sgm, Method::Goat] {
            let cfg = ExperimentConfig {
                method,
                pair: "s-t".into(),
                ..Default::default()
            };
            reports.push(run_single(&task, &cfg).unwrap());
        }
        let csv = table_csv(&reports);
        assert_eq!(csv, "pair,seeds,P,S,G,Delta\ns-t,10,100.0,100.0,100.0,0.0\n");
        let table = render_table(&reports);
        assert!(table.starts_with("pair"));
        assert_eq!(table.lines().count(), 4);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            seeds: 1,
            ..Default::default()
        };
        assert_eq!(a.hash(), ExperimentConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn tsv_predictions() {
        let mut s = HypothesisSet::new();
        s.insert("b".into(), "y".into(), 0.5, "p");
        s.insert("a".into(), "x".into(), 1.0, "p");
        assert_eq!(s.to_tsv(), "a\tx\t1\nb\ty\t0.5\n");
    }
}
