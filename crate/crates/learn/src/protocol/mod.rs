//! The training scenarios. Each party first trains on its own data in
//! plaintext; the collaborative phase then runs either under MPC or, with
//! `secure` off, as the identical plaintext program.
//!
//! - NC: own data only.
//! - CTFE: the whole model continues on the other party's shared subset.
//! - SFE: a feature extractor trained on common data is frozen; only the
//!   classifier continues, on exchanged embeddings.
//! - LTFE: every party trains its own extractor; classifiers read the
//!   concatenation of all parties' embeddings.

pub mod cost;
mod secure;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use ndarray::{concatenate, Axis};
use scol_mpc::{DealerMode, FixedPointCodec, Message, RandomnessBudget, TrafficStats};

use crate::backend::Plain;
use crate::data::{share_subset_indices, LabeledDataset, Splits};
use crate::error::{LearnError, Result};
use crate::metrics::{evaluate, Evaluation};
use crate::nn::{self, argmax_rows, ModelConfig, Net, Tensor, TrainConfig};

pub use cost::{estimate_cost, CostArch};
pub use secure::{ltfe_secure_infer, InferenceOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Nc,
    Ctfe,
    Sfe,
    Ltfe,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nc, Method::Ctfe, Method::Sfe, Method::Ltfe];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nc => "nc",
            Method::Ctfe => "ctfe",
            Method::Sfe => "sfe",
            Method::Ltfe => "ltfe",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LearnError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| LearnError::Config(format!("unknown method `{s}`")))
    }
}

/// Mixes a tag into a seed (splitmix64 finaliser).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_PARTY: u64 = 0x100;
const TAG_SHARE: u64 = 1;
const TAG_LOCAL: u64 = 2;
const TAG_COLLAB: u64 = 3;
const TAG_GLOBAL: u64 = 5;
const TAG_GLOBAL_SHUFFLE: u64 = 6;
const TAG_DEALER: u64 = 7;

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub method: Method,
    /// Fraction of each party's data contributed to the other party.
    pub share_fraction: f64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    /// Run the collaborative phase under MPC; otherwise as plaintext.
    pub secure: bool,
    /// Collaborative phase on own data and received data together, instead
    /// of on the received data alone.
    pub mixed: bool,
    pub seed: u64,
    /// Per-party seeds for initialisation, shuffling and subset selection.
    pub party_seeds: [u64; 2],
    pub dealer: DealerMode,
    pub codec: FixedPointCodec,
    /// Keep every message each party receives during secure phases.
    pub capture: bool,
}

impl ScenarioConfig {
    pub fn new(method: Method, model: ModelConfig, seed: u64) -> Self {
        ScenarioConfig {
            method,
            share_fraction: 0.3,
            train: TrainConfig::default(),
            model,
            secure: false,
            mixed: false,
            seed,
            party_seeds: [derive_seed(seed, TAG_PARTY), derive_seed(seed, TAG_PARTY + 1)],
            dealer: DealerMode::Streaming { buffer: 64 },
            codec: FixedPointCodec::default(),
            capture: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.share_fraction) {
            return Err(LearnError::Config(format!(
                "share fraction {} outside [0, 1]",
                self.share_fraction
            )));
        }
        Ok(())
    }

    fn party_seed(&self, party: usize, tag: u64) -> u64 {
        derive_seed(self.party_seeds[party], tag)
    }
}

/// A trained party model as used for inference.
#[derive(Clone, Debug, PartialEq)]
pub enum TrainedModel {
    /// Layers applied in sequence (NC, CTFE, and SFE's frozen extractor
    /// followed by the party's classifier).
    Chain(Net<Tensor>),
    /// Every extractor applied to the input, embeddings concatenated in
    /// party order, then the classifier.
    Concat {
        extractors: Vec<Net<Tensor>>,
        classifier: Net<Tensor>,
    },
}

impl TrainedModel {
    pub fn outputs(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            TrainedModel::Chain(net) => net.outputs(x),
            TrainedModel::Concat {
                extractors,
                classifier,
            } => classifier.outputs(&concat_embeddings(extractors, x)?),
        }
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.outputs(x)?))
    }

    pub fn evaluate(&self, d: &LabeledDataset) -> Result<Evaluation> {
        evaluate(&self.predict(&d.x)?, &d.y, d.classes)
    }
}

/// `[f_1(x), f_2(x), ...]` column-wise.
pub fn concat_embeddings(extractors: &[Net<Tensor>], x: &Tensor) -> Result<Tensor> {
    let parts = extractors.iter().map(|f| f.outputs(x)).collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(1), &views).map_err(|e| LearnError::Shape(e.to_string()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseTiming {
    pub phase: &'static str,
    pub secure: bool,
    pub elapsed: Duration,
}

#[derive(Clone, Debug)]
pub struct PartyResult {
    pub model: TrainedModel,
    pub evaluation: Evaluation,
}

#[derive(Clone, Debug)]
pub struct ScenarioResult {
    pub method: Method,
    pub seed: u64,
    pub parties: Vec<PartyResult>,
    /// Traffic of the secure phase summed over parties; `None` when nothing
    /// ran under MPC.
    pub traffic: Option<TrafficStats>,
    pub timings: Vec<PhaseTiming>,
    /// Per-party transcript digests of the secure phase.
    pub transcripts: Vec<[u8; 32]>,
    /// The randomness schedule the secure phase was planned with.
    pub budget: Option<RandomnessBudget>,
    /// Messages each party received, when capture was requested.
    pub captured: Vec<Vec<Message>>,
}

impl ScenarioResult {
    pub fn timing(&self, phase: &str) -> Duration {
        self.timings.iter().filter(|t| t.phase == phase).map(|t| t.elapsed).sum()
    }
}

pub const PHASE_EXTRACTOR: &str = "feature_extractor";
pub const PHASE_LOCAL: &str = "local";
pub const PHASE_COLLAB: &str = "collaborative";
pub const PHASE_EVALUATE: &str = "evaluate";

struct Timer(Vec<PhaseTiming>);

impl Timer {
    fn time<T>(&mut self, phase: &'static str, secure: bool, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.0.push(PhaseTiming {
            phase,
            secure,
            elapsed: start.elapsed(),
        });
        Ok(out)
    }
}

fn train_plain(net: &mut Net<Tensor>, d: &LabeledDataset, cfg: &TrainConfig, seed: u64) -> Result<()> {
    if d.is_empty() {
        return Ok(());
    }
    nn::train(&mut Plain, net, &d.x, &d.targets(), cfg, seed)
}

/// Rows of several datasets in order.
fn stack(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
    let mut it = parts.iter();
    let first = (*it.next().ok_or_else(|| LearnError::Input("nothing to stack".into()))?).clone();
    it.try_fold(first, |acc, d| acc.append(d))
}

/// One model trained on rows contributed by possibly several owners.
pub(crate) struct Job<'a> {
    pub owner: usize,
    pub init: Net<Tensor>,
    pub sources: Vec<(usize, &'a LabeledDataset)>,
    pub seed: u64,
}

/// What the collaborative phase produced.
struct Collab {
    nets: Vec<Net<Tensor>>,
    secure: Option<secure::SecureOutcome>,
}

enum Stage {
    Run,
    Plan,
}

enum Outcome {
    Done(ScenarioResult),
    Planned(RandomnessBudget),
}

fn run_jobs(cfg: &ScenarioConfig, jobs: Vec<Job<'_>>, stage: &Stage) -> Result<std::result::Result<Collab, RandomnessBudget>> {
    if !cfg.secure {
        let mut nets = Vec::with_capacity(jobs.len());
        for job in jobs {
            let mut net = job.init;
            let present: Vec<&LabeledDataset> = job.sources.iter().map(|s| s.1).filter(|d| !d.is_empty()).collect();
            if !present.is_empty() {
                train_plain(&mut net, &stack(&present)?, &cfg.train, job.seed)?;
            }
            nets.push(net);
        }
        return Ok(Ok(Collab { nets, secure: None }));
    }
    match stage {
        Stage::Plan => Ok(Err(secure::plan_jobs(cfg, &jobs)?)),
        Stage::Run => {
            let (nets, outcome) = secure::run_jobs(cfg, &jobs)?;
            Ok(Ok(Collab {
                nets,
                secure: Some(outcome),
            }))
        }
    }
}

fn finish(
    cfg: &ScenarioConfig,
    models: Vec<TrainedModel>,
    splits: &Splits,
    mut timer: Timer,
    secure: Option<secure::SecureOutcome>,
) -> Result<Outcome> {
    let parties = timer.time(PHASE_EVALUATE, false, || {
        models
            .into_iter()
            .map(|model| {
                let evaluation = model.evaluate(&splits.test)?;
                Ok(PartyResult { model, evaluation })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (traffic, transcripts, budget, captured) = match secure {
        Some(s) => (Some(s.traffic), s.transcripts, s.budget, s.captured),
        None => (None, Vec::new(), None, Vec::new()),
    };
    Ok(Outcome::Done(ScenarioResult {
        method: cfg.method,
        seed: cfg.seed,
        parties,
        traffic,
        timings: timer.0,
        transcripts,
        budget,
        captured,
    }))
}

fn shared_subsets(cfg: &ScenarioConfig, splits: &Splits) -> Result<[LabeledDataset; 2]> {
    let sub = |i: usize| -> Result<LabeledDataset> {
        let d = splits.party(i);
        Ok(d.subset(&share_subset_indices(d, cfg.share_fraction, cfg.party_seed(i, TAG_SHARE))?))
    };
    Ok([sub(0)?, sub(1)?])
}

fn scenario(cfg: &ScenarioConfig, splits: &Splits, stage: Stage) -> Result<Outcome> {
    cfg.validate()?;
    if splits.features() != cfg.model.input_width() || splits.classes() != cfg.model.classes() {
        return Err(LearnError::Config(format!(
            "model {:?} does not fit data with {} features and {} classes",
            cfg.model.layer_sizes,
            splits.features(),
            splits.classes()
        )));
    }
    match cfg.method {
        Method::Nc => {
            let mut timer = Timer(Vec::new());
            let nets = timer.time(PHASE_LOCAL, false, || local_models(cfg, splits))?;
            if let Stage::Plan = stage {
                return Ok(Outcome::Planned(RandomnessBudget::default()));
            }
            finish(cfg, nets.into_iter().map(TrainedModel::Chain).collect(), splits, timer, None)
        }
        Method::Ctfe => ctfe(cfg, splits, stage),
        Method::Sfe => sfe(cfg, splits, stage),
        Method::Ltfe => ltfe(cfg, splits, stage),
    }
}

fn local_models(cfg: &ScenarioConfig, splits: &Splits) -> Result<Vec<Net<Tensor>>> {
    (0..2)
        .map(|i| {
            let mut net = Net::init(&cfg.model, cfg.party_seeds[i])?;
            train_plain(&mut net, splits.party(i), &cfg.train, cfg.party_seed(i, TAG_LOCAL))?;
            Ok(net)
        })
        .collect()
}

fn collab_jobs<'a>(
    cfg: &ScenarioConfig,
    inits: Vec<Net<Tensor>>,
    own: [&'a LabeledDataset; 2],
    shared: [&'a LabeledDataset; 2],
) -> Vec<Job<'a>> {
    inits
        .into_iter()
        .enumerate()
        .map(|(i, init)| {
            let j = 1 - i;
            let mut sources = Vec::new();
            if cfg.mixed {
                sources.push((i, own[i]));
            }
            sources.push((j, shared[j]));
            Job {
                owner: i,
                init,
                sources,
                seed: cfg.party_seed(i, TAG_COLLAB),
            }
        })
        .collect()
}

fn ctfe(cfg: &ScenarioConfig, splits: &Splits, stage: Stage) -> Result<Outcome> {
    let mut timer = Timer(Vec::new());
    let nets = timer.time(PHASE_LOCAL, false, || local_models(cfg, splits))?;
    let shared = shared_subsets(cfg, splits)?;
    let jobs = collab_jobs(cfg, nets, [&splits.party1, &splits.party2], [&shared[0], &shared[1]]);
    let collab = match timer.time(PHASE_COLLAB, cfg.secure, || run_jobs(cfg, jobs, &stage))? {
        Ok(c) => c,
        Err(budget) => return Ok(Outcome::Planned(budget)),
    };
    let models = collab.nets.into_iter().map(TrainedModel::Chain).collect();
    finish(cfg, models, splits, timer, collab.secure)
}

fn embed(f: &Net<Tensor>, d: &LabeledDataset) -> Result<LabeledDataset> {
    d.with_features(f.outputs(&d.x)?)
}

fn sfe(cfg: &ScenarioConfig, splits: &Splits, stage: Stage) -> Result<Outcome> {
    let mut timer = Timer(Vec::new());
    let (f_sh, h_sh) = timer.time(PHASE_EXTRACTOR, false, || {
        let mut g = Net::init(&cfg.model, derive_seed(cfg.seed, TAG_GLOBAL))?;
        train_plain(&mut g, &splits.global, &cfg.train, derive_seed(cfg.seed, TAG_GLOBAL_SHUFFLE))?;
        g.split_at(cfg.model.fe_layers)
    })?;
    let own = [embed(&f_sh, &splits.party1)?, embed(&f_sh, &splits.party2)?];
    let classifiers = timer.time(PHASE_LOCAL, false, || {
        (0..2)
            .map(|i| {
                let mut h = h_sh.clone();
                train_plain(&mut h, &own[i], &cfg.train, cfg.party_seed(i, TAG_LOCAL))?;
                Ok(h)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let shared = shared_subsets(cfg, splits)?;
    let shared = [embed(&f_sh, &shared[0])?, embed(&f_sh, &shared[1])?];
    let jobs = collab_jobs(cfg, classifiers, [&own[0], &own[1]], [&shared[0], &shared[1]]);
    let collab = match timer.time(PHASE_COLLAB, cfg.secure, || run_jobs(cfg, jobs, &stage))? {
        Ok(c) => c,
        Err(budget) => return Ok(Outcome::Planned(budget)),
    };
    let models = collab
        .nets
        .iter()
        .map(|h| TrainedModel::Chain(f_sh.chain(h)))
        .collect();
    finish(cfg, models, splits, timer, collab.secure)
}

fn ltfe(cfg: &ScenarioConfig, splits: &Splits, stage: Stage) -> Result<Outcome> {
    let mut timer = Timer(Vec::new());
    let (extractors, heads): (Vec<_>, Vec<_>) = timer
        .time(PHASE_EXTRACTOR, false, || {
            local_models(cfg, splits)?
                .iter()
                .map(|g| g.split_at(cfg.model.fe_layers))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .unzip();
    let shared = shared_subsets(cfg, splits)?;
    let inits = heads
        .iter()
        .enumerate()
        .map(|(i, h)| widen_head(h, i, heads.len()))
        .collect::<Result<Vec<_>>>()?;
    let own = [&splits.party1, &splits.party2];
    let classifiers = timer.time(PHASE_COLLAB, cfg.secure, || -> Result<_> {
        if cfg.secure {
            let jobs = ltfe_jobs(cfg, inits, own, [&shared[0], &shared[1]]);
            return Ok(match stage {
                Stage::Plan => Err(secure::plan_ltfe(cfg, &extractors, &jobs)?),
                Stage::Run => {
                    let (nets, outcome) = secure::run_ltfe(cfg, &extractors, &jobs)?;
                    Ok((nets, Some(outcome)))
                }
            });
        }
        let mut nets = Vec::with_capacity(2);
        for (i, mut h) in inits.into_iter().enumerate() {
            let rows = stack(&[own[i], &shared[1 - i]])?;
            let emb = rows.with_features(concat_embeddings(&extractors, &rows.x)?)?;
            train_plain(&mut h, &emb, &cfg.train, cfg.party_seed(i, TAG_COLLAB))?;
            nets.push(h);
        }
        Ok(Ok((nets, None)))
    })?;
    let (classifiers, secure) = match classifiers {
        Ok(c) => c,
        Err(budget) => return Ok(Outcome::Planned(budget)),
    };
    let models = classifiers
        .into_iter()
        .map(|classifier| TrainedModel::Concat {
            extractors: extractors.clone(),
            classifier,
        })
        .collect();
    finish(cfg, models, splits, timer, secure)
}

/// Party `own`'s trained head reading the concatenation of `parties`
/// embeddings: its first layer keeps the weights for the own block and
/// starts at zero on every foreign block.
fn widen_head(head: &Net<Tensor>, own: usize, parties: usize) -> Result<Net<Tensor>> {
    let mut layers = head.layers().to_vec();
    let first = &layers[0].w;
    let (out, q) = first.dim();
    let mut w = Tensor::zeros((out, q * parties));
    w.slice_mut(ndarray::s![.., own * q..(own + 1) * q]).assign(first);
    layers[0].w = w;
    Net::from_parts(layers, head.acts().to_vec())
}

/// Classifier jobs of LTFE: party `i` trains on its own rows then the
/// other party's shared rows.
fn ltfe_jobs<'a>(
    cfg: &ScenarioConfig,
    inits: Vec<Net<Tensor>>,
    own: [&'a LabeledDataset; 2],
    shared: [&'a LabeledDataset; 2],
) -> Vec<Job<'a>> {
    inits
        .into_iter()
        .enumerate()
        .map(|(i, init)| Job {
            owner: i,
            init,
            sources: vec![(i, own[i]), (1 - i, shared[1 - i])],
            seed: cfg.party_seed(i, TAG_COLLAB),
        })
        .collect()
}

fn done(o: Outcome) -> Result<ScenarioResult> {
    match o {
        Outcome::Done(r) => Ok(r),
        Outcome::Planned(_) => Err(LearnError::State("scenario stopped after planning".into())),
    }
}

/// Runs the configured method.
pub fn run_scenario(cfg: &ScenarioConfig, splits: &Splits) -> Result<ScenarioResult> {
    done(scenario(cfg, splits, Stage::Run)?)
}

fn with_method(cfg: &ScenarioConfig, method: Method) -> ScenarioConfig {
    ScenarioConfig {
        method,
        ..cfg.clone()
    }
}

pub fn run_nc(cfg: &ScenarioConfig, splits: &Splits) -> Result<ScenarioResult> {
    run_scenario(&with_method(cfg, Method::Nc), splits)
}

pub fn run_ctfe(cfg: &ScenarioConfig, splits: &Splits) -> Result<ScenarioResult> {
    run_scenario(&with_method(cfg, Method::Ctfe), splits)
}

pub fn run_sfe(cfg: &ScenarioConfig, splits: &Splits) -> Result<ScenarioResult> {
    run_scenario(&with_method(cfg, Method::Sfe), splits)
}

pub fn run_ltfe(cfg: &ScenarioConfig, splits: &Splits) -> Result<ScenarioResult> {
    run_scenario(&with_method(cfg, Method::Ltfe), splits)
}

/// The exact randomness schedule the secure phase of `cfg` consumes. Runs
/// the plaintext phases, then plans the secure program without peers.
pub fn plan_budget(cfg: &ScenarioConfig, splits: &Splits) -> Result<RandomnessBudget> {
    let cfg = ScenarioConfig {
        secure: true,
        ..cfg.clone()
    };
    match scenario(&cfg, splits, Stage::Plan)? {
        Outcome::Planned(b) => Ok(b),
        Outcome::Done(_) => Err(LearnError::State("scenario ran instead of planning".into())),
    }
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub fraction: f64,
    /// One evaluation per party.
    pub evaluations: Vec<Evaluation>,
}

/// Runs the configured method at every share fraction.
pub fn sweep_share_fraction(cfg: &ScenarioConfig, splits: &Splits, fractions: &[f64]) -> Result<Vec<SweepPoint>> {
    fractions
        .iter()
        .map(|&fraction| {
            let run = ScenarioConfig {
                share_fraction: fraction,
                ..cfg.clone()
            };
            let r = run_scenario(&run, splits)?;
            Ok(SweepPoint {
                fraction,
                evaluations: r.parties.into_iter().map(|p| p.evaluation).collect(),
            })
        })
        .collect()
}

/// The sharing grid from 0% to 100% in steps of 20%.
pub const SWEEP_GRID: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
