//! Runs one SPMD program across in-process parties and a dealer actor.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::dealer::{Correlation, Dealer, RandomnessBudget};
use crate::error::{MpcError, Result};
use crate::party::{OnDemandDealer, Party, RandomnessSource};
use crate::ring::FixedPointCodec;
use crate::transport::{in_process_mesh, Endpoint, Message, MsgType, PartyId, Phase, TrafficStats};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DealerMode {
    /// The dealer generates the whole budget before any party starts.
    Offline,
    /// The dealer streams randomness frames while parties run; at most
    /// `buffer` frames wait in each party's inbox.
    Streaming { buffer: usize },
    /// Correlations are generated when first requested. Needs no budget.
    OnDemand,
}

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub party_count: usize,
    pub session_id: u64,
    pub seed: u64,
    pub codec: FixedPointCodec,
    pub dealer: DealerMode,
    /// Keep every message each party receives.
    pub capture: bool,
}

impl SessionConfig {
    pub fn two_party(seed: u64) -> Self {
        SessionConfig {
            party_count: 2,
            session_id: seed,
            seed,
            codec: FixedPointCodec::default(),
            dealer: DealerMode::OnDemand,
            capture: false,
        }
    }
}

pub struct PartyOutcome<T> {
    pub value: T,
    pub stats: TrafficStats,
    pub transcript: [u8; 32],
    pub consumed: RandomnessBudget,
    pub captured: Vec<Message>,
}

pub struct SessionOutcome<T> {
    pub parties: Vec<PartyOutcome<T>>,
    /// Time the dealer spent producing randomness.
    pub dealer_time: Duration,
}

impl<T> SessionOutcome<T> {
    /// Traffic summed over parties.
    pub fn total_stats(&self) -> TrafficStats {
        let mut total = TrafficStats::default();
        for p in &self.parties {
            total.merge(&p.stats);
        }
        total
    }
}

fn party_seed(seed: u64) -> u64 {
    seed ^ 0x5CA1_AB1E_0000_0000
}

fn stream_dealer(mut ep: Endpoint, mut dealer: Dealer, budget: RandomnessBudget) -> Duration {
    let start = Instant::now();
    ep.set_phase(Phase::Randomness);
    for req in budget.schedule() {
        for (p, c) in dealer.generate(req).into_iter().enumerate() {
            if ep
                .send_tagged(PartyId(p as u8), MsgType::Randomness, Phase::Randomness, c.to_bytes())
                .is_err()
            {
                return start.elapsed();
            }
        }
    }
    for p in 0..dealer.party_count() {
        // A party that already finished has hung up; nothing to tell it.
        let _ = ep.send_tagged(PartyId(p as u8), MsgType::Control, Phase::Control, Vec::new());
    }
    start.elapsed()
}

/// Runs `program` once per party, each on its own thread.
pub fn run_session<T, F>(
    cfg: &SessionConfig,
    budget: Option<&RandomnessBudget>,
    program: F,
) -> Result<SessionOutcome<T>>
where
    T: Send,
    F: Fn(&mut Party) -> Result<T> + Sync,
{
    let p = cfg.party_count;
    if p < 2 {
        return Err(MpcError::protocol("a session needs at least two parties"));
    }
    let need_budget = || {
        budget
            .cloned()
            .ok_or_else(|| MpcError::protocol("this dealer mode needs a randomness budget"))
    };
    let dealer_bound = match cfg.dealer {
        DealerMode::Streaming { buffer } => Some(buffer.max(2)),
        _ => None,
    };
    let (endpoints, dealer_ep) = in_process_mesh(p, cfg.session_id, dealer_bound);

    let mut dealer_time = Duration::ZERO;
    let mut sources: Vec<RandomnessSource> = match cfg.dealer {
        DealerMode::Offline => {
            let budget = need_budget()?;
            let seed = cfg.seed;
            let (queues, took) = thread::spawn(move || {
                let start = Instant::now();
                let q = Dealer::new(seed, p).generate_all(&budget);
                (q, start.elapsed())
            })
            .join()
            .map_err(|_| MpcError::protocol("dealer thread panicked"))?;
            dealer_time = took;
            queues
                .into_iter()
                .map(|q: Vec<Correlation>| RandomnessSource::Queue(VecDeque::from(q)))
                .collect()
        }
        DealerMode::Streaming { .. } => (0..p).map(|_| RandomnessSource::Stream).collect(),
        DealerMode::OnDemand => {
            let shared = Arc::new(Mutex::new(OnDemandDealer::new(Dealer::new(cfg.seed, p))));
            (0..p).map(|_| RandomnessSource::OnDemand(shared.clone())).collect()
        }
    };
    let stream_budget = match cfg.dealer {
        DealerMode::Streaming { .. } => Some(need_budget()?),
        _ => None,
    };

    let program = &program;
    let results: Vec<Result<PartyOutcome<T>>> = thread::scope(|s| {
        let dealer_handle = dealer_ep.zip(stream_budget).map(|(ep, budget)| {
            let dealer = Dealer::new(cfg.seed, p);
            s.spawn(move || stream_dealer(ep, dealer, budget))
        });
        let handles: Vec<_> = endpoints
            .into_iter()
            .zip(sources.drain(..))
            .map(|(mut ep, source)| {
                if cfg.capture {
                    ep.capture_received();
                }
                let codec = cfg.codec;
                let seed = party_seed(cfg.seed);
                s.spawn(move || -> Result<PartyOutcome<T>> {
                    let mut party = Party::new(ep, p, codec, source, seed);
                    let value = program(&mut party)?;
                    let stats = party.stats();
                    Ok(PartyOutcome {
                        value,
                        stats,
                        transcript: party.endpoint().transcript_digest(),
                        consumed: party.consumed().clone(),
                        captured: party.endpoint().captured().to_vec(),
                    })
                })
            })
            .collect();
        let results = handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(MpcError::protocol("party thread panicked"))))
            .collect();
        if let Some(h) = dealer_handle {
            dealer_time = h.join().unwrap_or_default();
        }
        results
    });

    // Report the root cause: a failing party makes its peers see closed channels.
    let mut parties = Vec::with_capacity(p);
    let mut transport_err = None;
    for r in results {
        match r {
            Ok(o) => parties.push(o),
            Err(e @ MpcError::Transport(_)) => {
                transport_err.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if let Some(e) = transport_err {
        return Err(e);
    }
    Ok(SessionOutcome {
        parties,
        dealer_time,
    })
}

/// Records the randomness schedule `program` consumes, without peers.
/// Programs whose control flow does not depend on opened values consume
/// exactly this schedule when run for real.
pub fn plan_schedule<F>(party_count: usize, codec: FixedPointCodec, program: F) -> Result<RandomnessBudget>
where
    F: FnOnce(&mut Party) -> Result<()>,
{
    let mut party = Party::planner(0, party_count, codec);
    program(&mut party)?;
    Ok(party.consumed().clone())
}
