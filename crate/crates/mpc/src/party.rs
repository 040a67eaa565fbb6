//! The per-party protocol engine.
//!
//! Every party runs the same program on its own [`Share`]s; the engine
//! exchanges masked values with its peers and consumes correlated randomness
//! in program order. A planning engine runs the same program without peers
//! and records which randomness it would consume.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::dealer::{
    CmpShare, Correlation, Dealer, RandomnessBudget, Request, CMP_ANDS, TRUNC_INPUT_BITS,
};
use crate::error::{MpcError, Result};
use crate::kernels::{add_into, ring_matmul, sub_vec};
use crate::ring::{FixedPointCodec, RingElement};
use crate::share::{decode_elements, encode_elements, Share};
use crate::transport::{Endpoint, MsgType, PartyId, Phase, TrafficStats};

const TOP: u64 = 1 << 63;
const LOW63: u64 = !TOP;

/// A dealer answering requests as they arrive, shared by in-process parties.
/// Parties request in the same order, so the k-th request of every party is
/// served from the same generated correlation.
pub struct OnDemandDealer {
    dealer: Dealer,
    pending: Vec<VecDeque<Correlation>>,
}

impl OnDemandDealer {
    pub fn new(dealer: Dealer) -> Self {
        let pending = vec![VecDeque::new(); dealer.party_count()];
        OnDemandDealer { dealer, pending }
    }

    fn take(&mut self, party: usize, req: &Request) -> Correlation {
        if self.pending[party].is_empty() {
            for (q, c) in self.pending.iter_mut().zip(self.dealer.generate(req)) {
                q.push_back(c);
            }
        }
        self.pending[party].pop_front().expect("just generated")
    }
}

/// Where a party's correlated randomness comes from.
pub enum RandomnessSource {
    /// Pre-generated in full before the online phase.
    Queue(VecDeque<Correlation>),
    /// Frames pushed by a dealer actor over the party's dealer link.
    Stream,
    OnDemand(Arc<Mutex<OnDemandDealer>>),
    /// Planning: hand out zero placeholders and only record requests.
    Plan,
}

pub struct Party {
    id: usize,
    party_count: usize,
    codec: FixedPointCodec,
    endpoint: Endpoint,
    source: RandomnessSource,
    rng: ChaCha20Rng,
    consumed: RandomnessBudget,
}

impl Party {
    pub fn new(
        endpoint: Endpoint,
        party_count: usize,
        codec: FixedPointCodec,
        source: RandomnessSource,
        seed: u64,
    ) -> Self {
        let id = endpoint.me().index();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(1 + id as u64);
        let mut endpoint = endpoint;
        endpoint.set_phase(Phase::SecureTrain);
        Party {
            id,
            party_count,
            codec,
            endpoint,
            source,
            rng,
            consumed: RandomnessBudget::default(),
        }
    }

    /// A peerless engine that records the randomness schedule of a program.
    /// All opened values read as zero.
    pub fn planner(id: usize, party_count: usize, codec: FixedPointCodec) -> Self {
        Party::new(
            Endpoint::new(PartyId(id as u8), 0),
            party_count,
            codec,
            RandomnessSource::Plan,
            0,
        )
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn party_count(&self) -> usize {
        self.party_count
    }

    pub fn codec(&self) -> &FixedPointCodec {
        &self.codec
    }

    pub fn is_planning(&self) -> bool {
        matches!(self.source, RandomnessSource::Plan)
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.endpoint.set_phase(phase);
    }

    pub fn phase(&self) -> Phase {
        self.endpoint.phase()
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    pub fn endpoint_mut(&mut self) -> &mut Endpoint {
        &mut self.endpoint
    }

    pub fn stats(&mut self) -> TrafficStats {
        self.endpoint.stats()
    }

    /// Randomness consumed so far, in order.
    pub fn consumed(&self) -> &RandomnessBudget {
        &self.consumed
    }

    /// Private local randomness (for example, batch order known only to this party).
    pub fn local_rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.party_count).filter(move |p| *p != self.id)
    }

    fn take(&mut self, req: Request) -> Result<Correlation> {
        let got = match &mut self.source {
            RandomnessSource::Plan => Correlation::placeholder(&req),
            RandomnessSource::Queue(q) => q.pop_front().ok_or_else(|| MpcError::Exhausted {
                wanted: format!("{req:?}"),
            })?,
            RandomnessSource::OnDemand(d) => d
                .lock()
                .map_err(|_| MpcError::protocol("on-demand dealer poisoned"))?
                .take(self.id, &req),
            RandomnessSource::Stream => {
                match self.endpoint.recv_any(PartyId::DEALER) {
                    Ok((MsgType::Randomness, payload)) => Correlation::from_bytes(&payload)?,
                    Ok(_) | Err(MpcError::Transport(_)) => {
                        return Err(MpcError::Exhausted {
                            wanted: format!("{req:?}"),
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        if got.request() != req {
            return Err(MpcError::protocol(format!(
                "randomness out of step: wanted {req:?}, next is {:?}",
                got.request()
            )));
        }
        self.consumed.push(req);
        Ok(got)
    }

    /// Pairwise exchange with every peer: the lower id sends first, so the
    /// schedule cannot deadlock on blocking links.
    fn exchange(&mut self, msg_type: MsgType, payload: Vec<u8>) -> Result<Vec<Vec<u8>>> {
        let mut received = Vec::with_capacity(self.party_count - 1);
        let peers: Vec<usize> = self.peers().collect();
        for q in peers {
            let peer = PartyId(q as u8);
            if self.id < q {
                self.endpoint.send(peer, msg_type, payload.clone())?;
                received.push(self.endpoint.recv(peer, msg_type)?);
            } else {
                received.push(self.endpoint.recv(peer, msg_type)?);
                self.endpoint.send(peer, msg_type, payload.clone())?;
            }
        }
        Ok(received)
    }

    /// Opens several share blocks in one round.
    pub fn open_blocks(&mut self, blocks: &[&[RingElement]]) -> Result<Vec<Vec<RingElement>>> {
        let total: usize = blocks.iter().map(|b| b.len()).sum();
        let mut sum: Vec<RingElement> = blocks.iter().flat_map(|b| b.iter().copied()).collect();
        if self.is_planning() {
            sum.iter_mut().for_each(|v| *v = RingElement::ZERO);
        } else {
            let mine = encode_elements(&sum);
            for payload in self.exchange(MsgType::Open, mine)? {
                let theirs = decode_elements(&payload)?;
                if theirs.len() != total {
                    return Err(MpcError::protocol(format!(
                        "open: peer sent {} elements, expected {total}",
                        theirs.len()
                    )));
                }
                add_into(&mut sum, &theirs);
            }
        }
        self.endpoint.count_round();
        let mut out = Vec::with_capacity(blocks.len());
        let mut rest = sum.as_slice();
        for b in blocks {
            let (head, tail) = rest.split_at(b.len());
            out.push(head.to_vec());
            rest = tail;
        }
        Ok(out)
    }

    pub fn open(&mut self, x: &Share) -> Result<Vec<RingElement>> {
        Ok(self.open_blocks(&[x.data()])?.remove(0))
    }

    pub fn open_f64(&mut self, x: &Share) -> Result<Vec<f64>> {
        let raw = self.open(x)?;
        Ok(raw.into_iter().map(|e| self.codec.decode_at(e, x.scale_exponent())).collect())
    }

    /// Opens XOR-shared words in one round.
    pub fn open_xor(&mut self, words: &[u64]) -> Result<Vec<u64>> {
        let mut acc = words.to_vec();
        if self.is_planning() {
            acc.iter_mut().for_each(|v| *v = 0);
        } else {
            let mine: Vec<u8> = words.iter().flat_map(|w| w.to_le_bytes()).collect();
            for payload in self.exchange(MsgType::OpenXor, mine)? {
                if payload.len() != 8 * words.len() {
                    return Err(MpcError::protocol("open_xor: length mismatch"));
                }
                for (a, c) in acc.iter_mut().zip(payload.chunks_exact(8)) {
                    *a ^= u64::from_le_bytes(c.try_into().unwrap());
                }
            }
        }
        self.endpoint.count_round();
        Ok(acc)
    }

    /// Secret-shares a tensor held by `owner`. The owner passes `Some(values)`
    /// (already encoded at `scale_exponent`), everyone else `None`.
    pub fn input(
        &mut self,
        owner: usize,
        values: Option<&[RingElement]>,
        shape: &[usize],
        scale_exponent: u8,
    ) -> Result<Share> {
        let n: usize = shape.iter().product();
        if self.is_planning() {
            return Ok(Share::zeros(shape, scale_exponent));
        }
        if self.id == owner {
            let values = values.ok_or_else(|| MpcError::protocol("input owner has no values"))?;
            if values.len() != n {
                return Err(MpcError::protocol("input: values do not match shape"));
            }
            let mut mine = values.to_vec();
            let peers: Vec<usize> = self.peers().collect();
            for q in peers {
                let theirs: Vec<RingElement> = (0..n).map(|_| RingElement(self.rng.random())).collect();
                for (m, t) in mine.iter_mut().zip(&theirs) {
                    *m -= *t;
                }
                self.endpoint
                    .send(PartyId(q as u8), MsgType::Input, encode_elements(&theirs))?;
            }
            Share::new(shape.to_vec(), scale_exponent, mine)
        } else {
            let payload = self.endpoint.recv(PartyId(owner as u8), MsgType::Input)?;
            let data = decode_elements(&payload)?;
            Share::new(shape.to_vec(), scale_exponent, data)
        }
    }

    /// Encodes and shares a plaintext tensor held by `owner`.
    pub fn input_f64(&mut self, owner: usize, values: Option<&[f64]>, shape: &[usize]) -> Result<Share> {
        let encoded = match values {
            Some(v) if self.id == owner => Some(self.codec.encode_slice(v)?),
            _ => None,
        };
        self.input(owner, encoded.as_deref(), shape, 1)
    }

    /// Reveals a shared tensor to a single party; only `to` learns the result.
    pub fn reveal_to(&mut self, x: &Share, to: usize) -> Result<Option<Vec<RingElement>>> {
        let out = if self.is_planning() {
            (self.id == to).then(|| vec![RingElement::ZERO; x.len()])
        } else if self.id == to {
            let mut acc = x.data().to_vec();
            let peers: Vec<usize> = self.peers().collect();
            for q in peers {
                let theirs = decode_elements(&self.endpoint.recv(PartyId(q as u8), MsgType::Reveal)?)?;
                if theirs.len() != acc.len() {
                    return Err(MpcError::protocol("reveal: length mismatch"));
                }
                add_into(&mut acc, &theirs);
            }
            Some(acc)
        } else {
            self.endpoint
                .send(PartyId(to as u8), MsgType::Reveal, encode_elements(x.data()))?;
            None
        };
        self.endpoint.count_round();
        Ok(out)
    }

    pub fn reveal_f64_to(&mut self, x: &Share, to: usize) -> Result<Option<Vec<f64>>> {
        let e = x.scale_exponent();
        Ok(self
            .reveal_to(x, to)?
            .map(|v| v.into_iter().map(|r| self.codec.decode_at(r, e)).collect()))
    }

    /// Adds a public real constant to every element (party 0 applies it).
    pub fn add_const(&self, x: &Share, c: f64) -> Result<Share> {
        let enc = self.codec.encode_at(c, x.scale_exponent())?;
        Ok(x.add_scalar_raw(self.id, enc))
    }

    /// Elementwise products of several pairs with one triple and one round.
    /// Each result carries the sum of its operands' scale exponents.
    pub fn mul_many(&mut self, pairs: &[(&Share, &Share)]) -> Result<Vec<Share>> {
        for (x, y) in pairs {
            if x.shape() != y.shape() {
                return Err(MpcError::protocol(format!(
                    "mul: shape mismatch {:?} vs {:?}",
                    x.shape(),
                    y.shape()
                )));
            }
        }
        let len: usize = pairs.iter().map(|(x, _)| x.len()).sum();
        let t = match self.take(Request::Triple { len })? {
            Correlation::Triple(t) => t,
            _ => unreachable!("request checked"),
        };
        let xs: Vec<RingElement> = pairs.iter().flat_map(|(x, _)| x.data().iter().copied()).collect();
        let ys: Vec<RingElement> = pairs.iter().flat_map(|(_, y)| y.data().iter().copied()).collect();
        let opened = self.open_blocks(&[&sub_vec(&xs, &t.a), &sub_vec(&ys, &t.b)])?;
        let (e, f) = (&opened[0], &opened[1]);
        let lead = self.id == 0;
        let z: Vec<RingElement> = (0..len)
            .map(|i| {
                let mut v = t.c[i] + e[i] * t.b[i] + f[i] * t.a[i];
                if lead {
                    v += e[i] * f[i];
                }
                v
            })
            .collect();
        let mut out = Vec::with_capacity(pairs.len());
        let mut pos = 0;
        for (x, y) in pairs {
            let n = x.len();
            out.push(Share::new(
                x.shape().to_vec(),
                x.scale_exponent() + y.scale_exponent(),
                z[pos..pos + n].to_vec(),
            )?);
            pos += n;
        }
        Ok(out)
    }

    pub fn mul(&mut self, x: &Share, y: &Share) -> Result<Share> {
        Ok(self.mul_many(&[(x, y)])?.remove(0))
    }

    /// Matrix product of an `m×k` and a `k×n` share in one round.
    pub fn matmul(&mut self, x: &Share, y: &Share) -> Result<Share> {
        let (m, k) = x.dims2()?;
        let (k2, n) = y.dims2()?;
        if k != k2 {
            return Err(MpcError::protocol(format!("matmul: inner dims {k} vs {k2}")));
        }
        let t = match self.take(Request::MatTriple { m, k, n })? {
            Correlation::MatTriple(t) => t,
            _ => unreachable!("request checked"),
        };
        let exponent = x.scale_exponent() + y.scale_exponent();
        let opened = self.open_blocks(&[&sub_vec(x.data(), &t.a), &sub_vec(y.data(), &t.b)])?;
        if self.is_planning() {
            return Ok(Share::zeros(&[m, n], exponent));
        }
        let (e, f) = (&opened[0], &opened[1]);
        // Z = C + E·B + A·F (+ E·F at party 0), folded as E·(B + F) there.
        let mut z = t.c;
        let eb = if self.id == 0 {
            let bf: Vec<RingElement> = t.b.iter().zip(f).map(|(b, f)| *b + *f).collect();
            ring_matmul(e, &bf, m, k, n)
        } else {
            ring_matmul(e, &t.b, m, k, n)
        };
        add_into(&mut z, &eb);
        add_into(&mut z, &ring_matmul(&t.a, f, m, k, n));
        Share::new(vec![m, n], exponent, z)
    }

    /// Shares of `floor(t / divisor)` or one more, each with probability
    /// proportional to the dropped remainder. Inputs must satisfy
    /// `|t| < 2^50` as signed ring integers.
    pub fn div_public(&mut self, t: &Share, divisor: u64, scale_exponent: u8) -> Result<Share> {
        let len = t.len();
        let pair = match self.take(Request::Trunc { len, divisor })? {
            Correlation::Trunc(p) => p,
            _ => unreachable!("request checked"),
        };
        let offset_q = (1u64 << TRUNC_INPUT_BITS).div_ceil(divisor);
        let offset = RingElement(offset_q * divisor);
        let masked: Vec<RingElement> = t.data().iter().zip(&pair.r).map(|(v, r)| *v + *r).collect();
        let lead = self.id == 0;
        // Party 0 adds the public offset so the opened value stays non-negative.
        let masked: Vec<RingElement> = if lead {
            masked.into_iter().map(|v| v + offset).collect()
        } else {
            masked
        };
        let c = self.open_blocks(&[&masked])?.remove(0);
        let data = (0..len)
            .map(|i| {
                let mut v = -pair.r_div[i];
                if lead {
                    v += RingElement(c[i].0 / divisor) - RingElement(offset_q);
                }
                v
            })
            .collect();
        Share::new(t.shape().to_vec(), scale_exponent, data)
    }

    /// Rescales a product back down by one factor of the codec scale.
    pub fn truncate(&mut self, t: &Share) -> Result<Share> {
        if t.scale_exponent() == 0 {
            return Err(MpcError::protocol("truncate: share carries no scale factor"));
        }
        let scale = self.codec.scale();
        self.div_public(t, scale, t.scale_exponent() - 1)
    }

    /// AND of XOR-shared words, using comparison-tuple gates starting at `slot`.
    fn and_words(&mut self, x: &[u64], y: &[u64], cmp: &CmpShare, slot: usize, len: usize) -> Result<Vec<u64>> {
        let base = slot * len;
        let a = &cmp.and_a[base..base + x.len()];
        let b = &cmp.and_b[base..base + x.len()];
        let c = &cmp.and_c[base..base + x.len()];
        let mut masked: Vec<u64> = x.iter().zip(a).map(|(x, a)| x ^ a).collect();
        masked.extend(y.iter().zip(b).map(|(y, b)| y ^ b));
        let opened = self.open_xor(&masked)?;
        let (e, f) = opened.split_at(x.len());
        let lead = self.id == 0;
        Ok((0..x.len())
            .map(|i| {
                let mut z = c[i] ^ (e[i] & b[i]) ^ (f[i] & a[i]);
                if lead {
                    z ^= e[i] & f[i];
                }
                z
            })
            .collect())
    }

    /// Shares of the sign bit: 1 where the signed value is negative, 0
    /// otherwise. Eight rounds regardless of size.
    pub fn msb(&mut self, x: &Share) -> Result<Share> {
        let len = x.len();
        let cmp = match self.take(Request::Cmp { len })? {
            Correlation::Cmp(c) => c,
            _ => unreachable!("request checked"),
        };
        let masked: Vec<RingElement> = x.data().iter().zip(&cmp.r).map(|(v, r)| *v + *r).collect();
        let c: Vec<u64> = self.open_blocks(&[&masked])?.remove(0).into_iter().map(|e| e.0).collect();
        let lead = self.id == 0;

        // x = c - r, so msb(x) = c63 ^ r63 ^ [low63(r) > low63(c)]. The borrow
        // is a prefix (generate, propagate) circuit over the low 63 bits;
        // bit 63 is pinned to (0, 1) so the final top bit of G is the answer.
        let mut g: Vec<u64> = cmp.r_bits.iter().zip(&c).map(|(r, c)| r & !c & LOW63).collect();
        let mut e: Vec<u64> = cmp
            .r_bits
            .iter()
            .zip(&c)
            .map(|(r, c)| {
                let w = (r ^ if lead { !c } else { 0 }) & LOW63;
                if lead {
                    w | TOP
                } else {
                    w
                }
            })
            .collect();
        let mut slot = 0;
        for d in [1u32, 2, 4, 8, 16, 32] {
            let last = d == 32;
            let fill = if lead { (1u64 << d) - 1 } else { 0 };
            let mut left = e.clone();
            let mut right: Vec<u64> = g.iter().map(|w| w << d).collect();
            if !last {
                left.extend_from_slice(&e);
                right.extend(e.iter().map(|w| (w << d) | fill));
            }
            let prod = self.and_words(&left, &right, &cmp, slot, len)?;
            slot += if last { 1 } else { 2 };
            for (gi, p) in g.iter_mut().zip(&prod) {
                *gi ^= p;
            }
            if !last {
                e = prod[len..].to_vec();
            }
        }
        debug_assert_eq!(slot, CMP_ANDS);

        let m: Vec<u64> = (0..len)
            .map(|i| {
                let w = (g[i] ^ cmp.r_bits[i]) & TOP;
                if lead {
                    w ^ (c[i] & TOP)
                } else {
                    w
                }
            })
            .collect();
        // Convert the XOR-shared bit to an arithmetic share with the daBit.
        let masked: Vec<u64> = m.iter().zip(&cmp.dabit_word).map(|(m, s)| m ^ s).collect();
        let opened = self.open_xor(&masked)?;
        let data = (0..len)
            .map(|i| {
                let t = opened[i] >> 63;
                let s = cmp.dabit[i];
                let mut v = if t == 1 { -s } else { s };
                if lead {
                    v += RingElement(t);
                }
                v
            })
            .collect();
        Share::new(x.shape().to_vec(), 0, data)
    }

    /// Shares of `[x > 0]`.
    pub fn positive(&mut self, x: &Share) -> Result<Share> {
        self.msb(&x.neg())
    }

    /// Returns `(max(x, 0), [x > 0])`.
    pub fn relu(&mut self, x: &Share) -> Result<(Share, Share)> {
        let mask = self.positive(x)?;
        let y = self.mul(x, &mask)?;
        Ok((y, mask))
    }

    /// Returns `(clamp(x, 0, 1), [0 < x < 1])`.
    pub fn semi_sigmoid(&mut self, x: &Share) -> Result<(Share, Share)> {
        let len = x.len();
        let x_minus_1 = self.add_const(x, -1.0)?;
        let flat = |s: &Share| s.reshape(vec![s.len()]);
        let both = Share::concat(&[&flat(&x.neg())?, &flat(&x_minus_1)?], 0)?;
        let bits = self.msb(&both)?;
        let p0 = Share::new(x.shape().to_vec(), 0, bits.data()[..len].to_vec())?;
        let below_1 = Share::new(x.shape().to_vec(), 0, bits.data()[len..].to_vec())?;
        // [x >= 1] = 1 - [x - 1 < 0]
        let g1 = below_1.neg().add_scalar_raw(self.id, RingElement::ONE);
        let prods = self.mul_many(&[(x, &p0), (&x_minus_1, &g1)])?;
        let y = prods[0].sub(&prods[1])?;
        let deriv = p0.sub(&g1)?;
        Ok((y, deriv))
    }

    /// Row-wise argmax of an `r×c` share, revealed only to `to`. Ties go to
    /// the lowest index.
    pub fn argmax_reveal(&mut self, x: &Share, to: usize) -> Result<Option<Vec<usize>>> {
        let (rows, cols) = x.dims2()?;
        let xt = x.transpose()?;
        let column = |j: usize| Share::new(vec![rows], x.scale_exponent(), xt.data()[j * rows..(j + 1) * rows].to_vec());
        let mut best = column(0)?;
        let mut idx = Share::zeros(&[rows], 0);
        for j in 1..cols {
            let diff = column(j)?.sub(&best)?;
            let better = self.positive(&diff)?;
            let step = idx.neg().add_scalar_raw(self.id, RingElement(j as u64));
            let prods = self.mul_many(&[(&better, &diff), (&better, &step)])?;
            best = best.add(&prods[0])?;
            idx = idx.add(&prods[1])?;
        }
        Ok(self
            .reveal_to(&idx, to)?
            .map(|v| v.into_iter().map(|e| e.0 as usize).collect()))
    }
}
