//! Whole-system view of secure operations: takes [`SharedTensor`]s holding
//! every party's shares, runs the per-party protocol on in-process parties,
//! and returns the resulting [`SharedTensor`].

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::dealer::{Correlation, Dealer, Request};
use crate::error::{MpcError, Result};
use crate::party::{OnDemandDealer, Party, RandomnessSource};
use crate::ring::FixedPointCodec;
use crate::share::{Share, SharedTensor};
use crate::transport::{in_process_mesh, Message, TrafficStats};

/// A dealt correlation held for a single use.
#[derive(Clone, Debug)]
pub struct Dealt {
    parts: Vec<Correlation>,
    consumed: bool,
}

pub type BeaverTriple = Dealt;
pub type TruncPair = Dealt;
pub type ComparisonTuple = Dealt;

impl Dealt {
    pub fn new(parts: Vec<Correlation>) -> Self {
        Dealt {
            parts,
            consumed: false,
        }
    }

    pub fn request(&self) -> Request {
        self.parts[0].request()
    }

    pub fn parts(&self) -> &[Correlation] {
        &self.parts
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    fn take(&mut self) -> Result<Vec<Correlation>> {
        if self.consumed {
            return Err(MpcError::protocol(format!(
                "correlation {:?} was already consumed",
                self.request()
            )));
        }
        self.consumed = true;
        Ok(self.parts.clone())
    }
}

pub struct SimRun {
    pub outputs: Vec<SharedTensor>,
    pub stats: Vec<TrafficStats>,
    pub captured: Vec<Vec<Message>>,
}

pub struct Simulator {
    party_count: usize,
    codec: FixedPointCodec,
    dealer: Dealer,
    on_demand: Arc<Mutex<OnDemandDealer>>,
    rng: ChaCha20Rng,
    runs: u64,
    capture: bool,
    last: Option<(Vec<TrafficStats>, Vec<Vec<Message>>)>,
}

/// One party's outputs, traffic and received messages.
type PartyRun = (Vec<Share>, TrafficStats, Vec<Message>);

impl Simulator {
    pub fn new(party_count: usize, codec: FixedPointCodec, seed: u64) -> Self {
        Simulator {
            party_count,
            codec,
            dealer: Dealer::new(seed, party_count),
            on_demand: Arc::new(Mutex::new(OnDemandDealer::new(Dealer::new(
                seed.wrapping_add(1),
                party_count,
            )))),
            rng: ChaCha20Rng::seed_from_u64(seed.wrapping_add(2)),
            runs: 0,
            capture: false,
            last: None,
        }
    }

    /// Keep received messages of subsequent runs.
    pub fn with_capture(mut self, on: bool) -> Self {
        self.capture = on;
        self
    }

    pub fn codec(&self) -> &FixedPointCodec {
        &self.codec
    }

    pub fn party_count(&self) -> usize {
        self.party_count
    }

    pub fn share(&mut self, secret: &[f64], shape: &[usize]) -> Result<SharedTensor> {
        SharedTensor::share(secret, shape, self.party_count, &self.codec, &mut self.rng)
    }

    pub fn reconstruct(&self, t: &SharedTensor) -> Vec<f64> {
        t.reconstruct(&self.codec)
    }

    pub fn beaver_triple(&mut self, len: usize) -> BeaverTriple {
        Dealt::new(self.dealer.gen_beaver(len))
    }

    pub fn matmul_triple(&mut self, m: usize, k: usize, n: usize) -> BeaverTriple {
        Dealt::new(self.dealer.gen_matmul_triple(m, k, n))
    }

    pub fn trunc_pair(&mut self, len: usize) -> TruncPair {
        Dealt::new(self.dealer.gen_trunc_pair(len, self.codec.scale()))
    }

    pub fn cmp_tuple(&mut self, len: usize) -> ComparisonTuple {
        Dealt::new(self.dealer.gen_cmp_tuple(len))
    }

    /// Traffic of the most recent run, one entry per party.
    pub fn last_stats(&self) -> &[TrafficStats] {
        self.last.as_ref().map(|l| l.0.as_slice()).unwrap_or(&[])
    }

    /// Messages received by each party in the most recent run.
    pub fn last_captured(&self) -> &[Vec<Message>] {
        self.last.as_ref().map(|l| l.1.as_slice()).unwrap_or(&[])
    }

    /// Runs `f` on every party. `dealt` supplies the randomness in order; when
    /// `None` it is generated on demand.
    pub fn run<F>(&mut self, inputs: &[&SharedTensor], dealt: Option<Vec<Vec<Correlation>>>, f: F) -> Result<SimRun>
    where
        F: Fn(&mut Party, Vec<Share>) -> Result<Vec<Share>> + Sync,
    {
        let p = self.party_count;
        if inputs.iter().any(|t| t.party_count() != p) {
            return Err(MpcError::protocol("input shared among a different number of parties"));
        }
        self.runs += 1;
        let (endpoints, _) = in_process_mesh(p, self.runs, None);
        let mut sources: Vec<RandomnessSource> = match dealt {
            Some(per_party) => per_party
                .into_iter()
                .map(|q| RandomnessSource::Queue(VecDeque::from(q)))
                .collect(),
            None => (0..p).map(|_| RandomnessSource::OnDemand(self.on_demand.clone())).collect(),
        };
        let f = &f;
        let capture = self.capture;
        let codec = self.codec;
        let seed = self.runs;
        let results: Vec<Result<PartyRun>> = thread::scope(|s| {
            let handles: Vec<_> = endpoints
                .into_iter()
                .zip(sources.drain(..))
                .enumerate()
                .map(|(i, (mut ep, source))| {
                    if capture {
                        ep.capture_received();
                    }
                    let local: Vec<Share> = inputs.iter().map(|t| t.party_share(i)).collect();
                    s.spawn(move || {
                        let mut party = Party::new(ep, p, codec, source, seed);
                        let out = f(&mut party, local)?;
                        let stats = party.stats();
                        Ok((out, stats, party.endpoint().captured().to_vec()))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(MpcError::protocol("party thread panicked"))))
                .collect()
        });
        let mut per_party = Vec::with_capacity(p);
        for r in results {
            per_party.push(r?);
        }
        let n_out = per_party[0].0.len();
        let mut columns: Vec<Vec<Share>> = (0..n_out).map(|_| Vec::with_capacity(p)).collect();
        let mut stats = Vec::with_capacity(p);
        let mut captured = Vec::with_capacity(p);
        for (outs, st, cap) in per_party {
            for (col, s) in columns.iter_mut().zip(outs) {
                col.push(s);
            }
            stats.push(st);
            captured.push(cap);
        }
        let outputs = columns
            .into_iter()
            .map(SharedTensor::from_party_shares)
            .collect::<Result<Vec<_>>>()?;
        self.last = Some((stats.clone(), captured.clone()));
        Ok(SimRun {
            outputs,
            stats,
            captured,
        })
    }

    fn run_one<F>(&mut self, inputs: &[&SharedTensor], dealt: Option<&mut Dealt>, f: F) -> Result<SharedTensor>
    where
        F: Fn(&mut Party, Vec<Share>) -> Result<Share> + Sync,
    {
        let queues = match dealt {
            Some(d) => Some(d.take()?.into_iter().map(|c| vec![c]).collect()),
            None => None,
        };
        let mut run = self.run(inputs, queues, |party, shares| Ok(vec![f(party, shares)?]))?;
        Ok(run.outputs.remove(0))
    }

    /// Elementwise product at the sum of the operands' scale exponents.
    pub fn mul_beaver(&mut self, x: &SharedTensor, y: &SharedTensor, triple: &mut BeaverTriple) -> Result<SharedTensor> {
        self.run_one(&[x, y], Some(triple), |p, s| p.mul(&s[0], &s[1]))
    }

    pub fn matmul_beaver(&mut self, x: &SharedTensor, y: &SharedTensor, triple: &mut BeaverTriple) -> Result<SharedTensor> {
        self.run_one(&[x, y], Some(triple), |p, s| p.matmul(&s[0], &s[1]))
    }

    pub fn truncate(&mut self, t: &SharedTensor, pair: &mut TruncPair) -> Result<SharedTensor> {
        self.run_one(&[t], Some(pair), |p, s| p.truncate(&s[0]))
    }

    pub fn msb(&mut self, x: &SharedTensor, tuple: &mut ComparisonTuple) -> Result<SharedTensor> {
        self.run_one(&[x], Some(tuple), |p, s| p.msb(&s[0]))
    }

    pub fn mul_truncated(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        self.run_one(&[x, y], None, |p, s| {
            let z = p.mul(&s[0], &s[1])?;
            p.truncate(&z)
        })
    }

    pub fn matmul_truncated(&mut self, x: &SharedTensor, y: &SharedTensor) -> Result<SharedTensor> {
        self.run_one(&[x, y], None, |p, s| {
            let z = p.matmul(&s[0], &s[1])?;
            p.truncate(&z)
        })
    }

    pub fn relu(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        self.run_one(&[x], None, |p, s| Ok(p.relu(&s[0])?.0))
    }

    pub fn semi_sigmoid(&mut self, x: &SharedTensor) -> Result<SharedTensor> {
        self.run_one(&[x], None, |p, s| Ok(p.semi_sigmoid(&s[0])?.0))
    }
}
