//! Session programs for the collaborative phase. Every party runs the same
//! program; only a data owner touches its private rows, everyone else knows
//! just the public sizes and shapes.

use scol_mpc::{
    plan_schedule, run_session, DealerMode, Message, MpcError, Party, Phase, RandomnessBudget, SessionConfig,
    SessionOutcome, Share, TrafficStats,
};

use super::{derive_seed, Job, ScenarioConfig, TAG_DEALER};
use crate::backend::{reveal_net, share_net, share_tensor, Backend, Secure};
use crate::error::{LearnError, Result};
use crate::nn::{self, Net, Tensor};

/// Rows per secure forward pass when embedding shared inputs.
const EMBED_CHUNK: usize = 256;

pub(crate) struct SecureOutcome {
    pub traffic: TrafficStats,
    pub transcripts: Vec<[u8; 32]>,
    pub budget: Option<RandomnessBudget>,
    pub captured: Vec<Vec<Message>>,
}

fn to_mpc(e: LearnError) -> MpcError {
    match e {
        LearnError::Mpc(e) => e,
        other => MpcError::Protocol(other.to_string()),
    }
}

fn session(cfg: &ScenarioConfig, capture: bool) -> SessionConfig {
    SessionConfig {
        party_count: 2,
        session_id: cfg.seed,
        seed: derive_seed(cfg.seed, TAG_DEALER),
        codec: cfg.codec,
        dealer: cfg.dealer,
        capture,
    }
}

/// Plans the schedule when the dealer mode needs one, runs the program, and
/// checks that every party consumed exactly the planned schedule.
fn run_planned<T, F>(cfg: &ScenarioConfig, capture: bool, program: F) -> Result<(SessionOutcome<T>, Option<RandomnessBudget>)>
where
    T: Send,
    F: Fn(&mut Party) -> Result<T> + Sync,
{
    let budget = match cfg.dealer {
        DealerMode::OnDemand => None,
        _ => Some(plan_schedule(2, cfg.codec, |p| program(p).map(|_| ()).map_err(to_mpc))?),
    };
    let out = run_session(&session(cfg, capture), budget.as_ref(), |p| program(p).map_err(to_mpc))?;
    if let Some(b) = &budget {
        if out.parties.iter().any(|p| &p.consumed != b) {
            return Err(LearnError::State("consumed randomness differs from the plan".into()));
        }
    }
    Ok((out, budget))
}

fn summarise<T>(out: &SessionOutcome<T>, budget: Option<RandomnessBudget>) -> SecureOutcome {
    SecureOutcome {
        traffic: out.total_stats(),
        transcripts: out.parties.iter().map(|p| p.transcript).collect(),
        budget,
        captured: out.parties.iter().map(|p| p.captured.clone()).collect(),
    }
}

/// Shares `d`'s rows and one-hot targets from `owner`.
fn share_rows(p: &mut Party, owner: usize, d: &crate::data::LabeledDataset) -> Result<(Share, Share)> {
    let mine = p.id() == owner;
    let x = share_tensor(p, owner, mine.then_some(&d.x), d.len(), d.features())?;
    let targets = mine.then(|| d.targets());
    let y = share_tensor(p, owner, targets.as_ref(), d.len(), d.classes)?;
    Ok((x, y))
}

fn concat_rows(parts: &[Share]) -> Result<Share> {
    let refs: Vec<&Share> = parts.iter().collect();
    Ok(Share::concat(&refs, 0)?)
}

/// Trains the shared model of one job and reveals it to its owner.
fn train_and_reveal(p: &mut Party, cfg: &ScenarioConfig, job: &Job<'_>, mut net: Net<Share>, x: &Share, y: &Share) -> Result<Option<Net<Tensor>>> {
    nn::train(&mut Secure::new(p), &mut net, x, y, &cfg.train, job.seed)?;
    p.set_phase(Phase::Open);
    let out = reveal_net(p, &net, job.owner);
    p.set_phase(Phase::SecureTrain);
    out
}

fn job_rows(job: &Job<'_>) -> usize {
    job.sources.iter().map(|s| s.1.len()).sum()
}

fn jobs_program(p: &mut Party, cfg: &ScenarioConfig, jobs: &[Job<'_>]) -> Result<Vec<Option<Net<Tensor>>>> {
    let mut out = Vec::with_capacity(jobs.len());
    for job in jobs {
        if job_rows(job) == 0 {
            out.push((p.id() == job.owner).then(|| job.init.clone()));
            continue;
        }
        let mine = p.id() == job.owner;
        let net = share_net(p, job.owner, mine.then_some(&job.init), &job.init.shape())?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &(owner, d) in job.sources.iter().filter(|s| !s.1.is_empty()) {
            let (x, y) = share_rows(p, owner, d)?;
            xs.push(x);
            ys.push(y);
        }
        let (x, y) = (concat_rows(&xs)?, concat_rows(&ys)?);
        out.push(train_and_reveal(p, cfg, job, net, &x, &y)?);
    }
    Ok(out)
}

fn collect_nets(out: &mut SessionOutcome<Vec<Option<Net<Tensor>>>>, jobs: &[Job<'_>]) -> Result<Vec<Net<Tensor>>> {
    jobs.iter()
        .enumerate()
        .map(|(k, job)| {
            out.parties[job.owner].value[k]
                .take()
                .ok_or_else(|| LearnError::State(format!("party {} did not receive its model", job.owner)))
        })
        .collect()
}

pub(crate) fn plan_jobs(cfg: &ScenarioConfig, jobs: &[Job<'_>]) -> Result<RandomnessBudget> {
    Ok(plan_schedule(2, cfg.codec, |p| jobs_program(p, cfg, jobs).map(|_| ()).map_err(to_mpc))?)
}

pub(crate) fn run_jobs(cfg: &ScenarioConfig, jobs: &[Job<'_>]) -> Result<(Vec<Net<Tensor>>, SecureOutcome)> {
    let (mut out, budget) = run_planned(cfg, cfg.capture, |p| jobs_program(p, cfg, jobs))?;
    let summary = summarise(&out, budget);
    Ok((collect_nets(&mut out, jobs)?, summary))
}

/// Secure forward pass of a shared network, in row chunks.
fn secure_outputs(p: &mut Party, net: &Net<Share>, x: &Share) -> Result<Share> {
    let rows = Secure::dims(x).0;
    let idx: Vec<usize> = (0..rows).collect();
    let mut parts = Vec::new();
    for chunk in idx.chunks(EMBED_CHUNK) {
        let xb = x.select_rows(chunk)?;
        parts.push(nn::forward(&mut Secure::new(p), net, &xb)?.output);
    }
    concat_rows(&parts)
}

/// `[f_1(x), f_2(x)]` for rows owned by `owner`: the owner's embedding is
/// computed locally and input, the other one securely on the shared rows.
fn ltfe_embedding(
    p: &mut Party,
    owner: usize,
    x_plain: Option<&Tensor>,
    x: &Share,
    extractors: &[Net<Tensor>],
    shared: &[Net<Share>],
) -> Result<Share> {
    let rows = Secure::dims(x).0;
    let mut cols = Vec::with_capacity(extractors.len());
    for (k, f) in extractors.iter().enumerate() {
        if k == owner {
            let local = match x_plain {
                Some(x) if p.id() == owner => Some(f.outputs(x)?),
                _ => None,
            };
            cols.push(share_tensor(p, owner, local.as_ref(), rows, f.output_width())?);
        } else {
            cols.push(secure_outputs(p, &shared[k], x)?);
        }
    }
    let refs: Vec<&Share> = cols.iter().collect();
    Ok(Share::concat(&refs, 1)?)
}

/// Every extractor shared by its owner. Party `k` owns extractor `k`.
fn share_extractors(p: &mut Party, extractors: &[Net<Tensor>]) -> Result<Vec<Net<Share>>> {
    extractors
        .iter()
        .enumerate()
        .map(|(k, f)| share_net(p, k, (p.id() == k).then_some(f), &f.shape()))
        .collect()
}

fn ltfe_program(p: &mut Party, cfg: &ScenarioConfig, extractors: &[Net<Tensor>], jobs: &[Job<'_>]) -> Result<Vec<Option<Net<Tensor>>>> {
    let shared = share_extractors(p, extractors)?;
    let mut out = Vec::with_capacity(jobs.len());
    for job in jobs {
        if job_rows(job) == 0 {
            out.push((p.id() == job.owner).then(|| job.init.clone()));
            continue;
        }
        let mine = p.id() == job.owner;
        let net = share_net(p, job.owner, mine.then_some(&job.init), &job.init.shape())?;
        let (mut es, mut ys) = (Vec::new(), Vec::new());
        for &(owner, d) in job.sources.iter().filter(|s| !s.1.is_empty()) {
            let (x, y) = share_rows(p, owner, d)?;
            es.push(ltfe_embedding(p, owner, Some(&d.x), &x, extractors, &shared)?);
            ys.push(y);
        }
        let (e, y) = (concat_rows(&es)?, concat_rows(&ys)?);
        out.push(train_and_reveal(p, cfg, job, net, &e, &y)?);
    }
    Ok(out)
}

pub(crate) fn plan_ltfe(cfg: &ScenarioConfig, extractors: &[Net<Tensor>], jobs: &[Job<'_>]) -> Result<RandomnessBudget> {
    Ok(plan_schedule(2, cfg.codec, |p| {
        ltfe_program(p, cfg, extractors, jobs).map(|_| ()).map_err(to_mpc)
    })?)
}

pub(crate) fn run_ltfe(cfg: &ScenarioConfig, extractors: &[Net<Tensor>], jobs: &[Job<'_>]) -> Result<(Vec<Net<Tensor>>, SecureOutcome)> {
    let (mut out, budget) = run_planned(cfg, cfg.capture, |p| ltfe_program(p, cfg, extractors, jobs))?;
    let summary = summarise(&out, budget);
    Ok((collect_nets(&mut out, jobs)?, summary))
}

/// Result of a secure LTFE prediction.
#[derive(Clone, Debug)]
pub struct InferenceOutcome {
    /// Predicted labels, known to the querying party only.
    pub predictions: Vec<usize>,
    pub traffic: TrafficStats,
    /// Messages each party received, when captured.
    pub captured: Vec<Vec<Message>>,
}

/// Classifies `owner`'s private rows `x` with its LTFE model. The other
/// party contributes its extractor; only `owner` learns the labels.
pub fn ltfe_secure_infer(
    owner: usize,
    x: &Tensor,
    extractors: &[Net<Tensor>],
    classifier: &Net<Tensor>,
    cfg: &ScenarioConfig,
    capture: bool,
) -> Result<InferenceOutcome> {
    if extractors.len() != 2 || owner >= 2 {
        return Err(LearnError::Config("secure inference needs two parties".into()));
    }
    let (rows, cols) = x.dim();
    let program = |p: &mut Party| -> Result<Option<Vec<usize>>> {
        let shared = share_extractors(p, extractors)?;
        let mine = p.id() == owner;
        let h = share_net(p, owner, mine.then_some(classifier), &classifier.shape())?;
        let xs = share_tensor(p, owner, mine.then_some(x), rows, cols)?;
        let e = ltfe_embedding(p, owner, Some(x), &xs, extractors, &shared)?;
        let y = secure_outputs(p, &h, &e)?;
        p.set_phase(Phase::Open);
        Ok(p.argmax_reveal(&y, owner)?)
    };
    let (mut out, _) = run_planned(cfg, capture, program)?;
    let predictions = out.parties[owner]
        .value
        .take()
        .ok_or_else(|| LearnError::State("querying party received no predictions".into()))?;
    Ok(InferenceOutcome {
        predictions,
        traffic: out.total_stats(),
        captured: out.parties.iter().map(|p| p.captured.clone()).collect(),
    })
}
