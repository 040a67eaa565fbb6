//! The trusted dealer: correlated randomness for multiplication, truncation
//! and comparison, generated from a seed and a request schedule only.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{MpcError, Result};
use crate::kernels::ring_matmul;
use crate::ring::RingElement;
use crate::share::{decode_elements, encode_elements, parse_shape_header, shape_header};

/// AND gates per element in the comparison circuit: six generate updates and
/// five propagate updates of the prefix network.
pub const CMP_ANDS: usize = 11;

/// Truncation keeps inputs below this ring magnitude (as signed integers).
pub const TRUNC_INPUT_BITS: u32 = 50;

/// One unit of correlated randomness as requested by the online phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Request {
    Triple { len: usize },
    MatTriple { m: usize, k: usize, n: usize },
    Trunc { len: usize, divisor: u64 },
    Cmp { len: usize },
}

impl Request {
    fn kind_byte(&self) -> u8 {
        match self {
            Request::Triple { .. } => 1,
            Request::MatTriple { .. } => 2,
            Request::Trunc { .. } => 3,
            Request::Cmp { .. } => 4,
        }
    }

    fn shape(&self) -> Vec<usize> {
        match *self {
            Request::Triple { len } | Request::Trunc { len, .. } | Request::Cmp { len } => vec![len],
            Request::MatTriple { m, k, n } => vec![m, k, n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleShare {
    pub a: Vec<RingElement>,
    pub b: Vec<RingElement>,
    pub c: Vec<RingElement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MatTripleShare {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a: Vec<RingElement>,
    pub b: Vec<RingElement>,
    pub c: Vec<RingElement>,
}

/// Shares of a mask `r` and of `floor(r / divisor)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncShare {
    pub divisor: u64,
    pub r: Vec<RingElement>,
    pub r_div: Vec<RingElement>,
}

/// Per element: arithmetic and XOR shares of a uniform mask `r`, XOR shares of
/// [`CMP_ANDS`] AND triples (laid out gate-major), and a daBit embedded as the
/// top bit of a uniform word together with its arithmetic share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CmpShare {
    pub r: Vec<RingElement>,
    pub r_bits: Vec<u64>,
    pub and_a: Vec<u64>,
    pub and_b: Vec<u64>,
    pub and_c: Vec<u64>,
    pub dabit_word: Vec<u64>,
    pub dabit: Vec<RingElement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Correlation {
    Triple(TripleShare),
    MatTriple(MatTripleShare),
    Trunc(TruncShare),
    Cmp(CmpShare),
}

impl Correlation {
    pub fn request(&self) -> Request {
        match self {
            Correlation::Triple(t) => Request::Triple { len: t.a.len() },
            Correlation::MatTriple(t) => Request::MatTriple { m: t.m, k: t.k, n: t.n },
            Correlation::Trunc(t) => Request::Trunc {
                len: t.r.len(),
                divisor: t.divisor,
            },
            Correlation::Cmp(t) => Request::Cmp { len: t.r.len() },
        }
    }

    /// All-zero correlation of the requested shape, used by planning runs.
    pub fn placeholder(req: &Request) -> Correlation {
        let z = |n: usize| vec![RingElement::ZERO; n];
        match *req {
            Request::Triple { len } => Correlation::Triple(TripleShare {
                a: z(len),
                b: z(len),
                c: z(len),
            }),
            Request::MatTriple { m, k, n } => Correlation::MatTriple(MatTripleShare {
                m,
                k,
                n,
                a: z(m * k),
                b: z(k * n),
                c: z(m * n),
            }),
            Request::Trunc { len, divisor } => Correlation::Trunc(TruncShare {
                divisor,
                r: z(len),
                r_div: z(len),
            }),
            Request::Cmp { len } => Correlation::Cmp(CmpShare {
                r: z(len),
                r_bits: vec![0; len],
                and_a: vec![0; CMP_ANDS * len],
                and_b: vec![0; CMP_ANDS * len],
                and_c: vec![0; CMP_ANDS * len],
                dabit_word: vec![0; len],
                dabit: z(len),
            }),
        }
    }

    fn encode_payload(&self, out: &mut Vec<u8>) {
        let words = |out: &mut Vec<u8>, w: &[u64]| {
            for x in w {
                out.extend_from_slice(&x.to_le_bytes());
            }
        };
        match self {
            Correlation::Triple(t) => {
                for v in [&t.a, &t.b, &t.c] {
                    out.extend(encode_elements(v));
                }
            }
            Correlation::MatTriple(t) => {
                for v in [&t.a, &t.b, &t.c] {
                    out.extend(encode_elements(v));
                }
            }
            Correlation::Trunc(t) => {
                out.extend_from_slice(&t.divisor.to_le_bytes());
                out.extend(encode_elements(&t.r));
                out.extend(encode_elements(&t.r_div));
            }
            Correlation::Cmp(t) => {
                out.extend(encode_elements(&t.r));
                words(out, &t.r_bits);
                words(out, &t.and_a);
                words(out, &t.and_b);
                words(out, &t.and_c);
                words(out, &t.dabit_word);
                out.extend(encode_elements(&t.dabit));
            }
        }
    }

    fn payload_len(kind: u8, shape: &[usize]) -> Result<usize> {
        let n = |i: usize| shape.get(i).copied().unwrap_or(0);
        Ok(8 * match (kind, shape.len()) {
            (1, 1) => 3 * n(0),
            (2, 3) => n(0) * n(1) + n(1) * n(2) + n(0) * n(2),
            (3, 1) => 1 + 2 * n(0),
            (4, 1) => (4 + 3 * CMP_ANDS) * n(0),
            _ => return Err(MpcError::format(format!("bad correlation kind {kind} / shape {shape:?}"))),
        })
    }

    fn decode_payload(kind: u8, shape: &[usize], bytes: &[u8]) -> Result<Correlation> {
        if bytes.len() != Correlation::payload_len(kind, shape)? {
            return Err(MpcError::format("correlation payload has the wrong length"));
        }
        let mut pos = 0;
        let mut take = |count: usize| {
            let v = decode_elements(&bytes[pos..pos + 8 * count]);
            pos += 8 * count;
            v
        };
        let to_words = |v: Vec<RingElement>| v.into_iter().map(|e| e.0).collect::<Vec<u64>>();
        Ok(match kind {
            1 => {
                let len = shape[0];
                Correlation::Triple(TripleShare {
                    a: take(len)?,
                    b: take(len)?,
                    c: take(len)?,
                })
            }
            2 => {
                let (m, k, n) = (shape[0], shape[1], shape[2]);
                Correlation::MatTriple(MatTripleShare {
                    m,
                    k,
                    n,
                    a: take(m * k)?,
                    b: take(k * n)?,
                    c: take(m * n)?,
                })
            }
            3 => {
                let len = shape[0];
                let divisor = take(1)?[0].0;
                Correlation::Trunc(TruncShare {
                    divisor,
                    r: take(len)?,
                    r_div: take(len)?,
                })
            }
            _ => {
                let len = shape[0];
                Correlation::Cmp(CmpShare {
                    r: take(len)?,
                    r_bits: to_words(take(len)?),
                    and_a: to_words(take(CMP_ANDS * len)?),
                    and_b: to_words(take(CMP_ANDS * len)?),
                    and_c: to_words(take(CMP_ANDS * len)?),
                    dabit_word: to_words(take(len)?),
                    dabit: take(len)?,
                })
            }
        })
    }

    /// Wire form used for streamed randomness: kind byte, shape header as in
    /// share serialization, then the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let req = self.request();
        let mut out = vec![req.kind_byte()];
        out.extend(shape_header(0, &req.shape()));
        self.encode_payload(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Correlation> {
        let (&kind, rest) = bytes
            .split_first()
            .ok_or_else(|| MpcError::format("empty correlation frame"))?;
        let (_, shape, used) = parse_shape_header(rest)?;
        Correlation::decode_payload(kind, &shape, &rest[used..])
    }
}

/// An ordered list of randomness requests. The order is the order in which
/// the online phase consumes them.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RandomnessBudget {
    schedule: Vec<Request>,
}

/// Aggregate counts of a budget. Elementwise kinds are counted in elements,
/// matrix triples by shape.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BudgetCounts {
    pub triples: usize,
    pub mat_triples: BTreeMap<(usize, usize, usize), usize>,
    pub trunc_pairs: usize,
    pub cmp_tuples: usize,
}

impl BudgetCounts {
    pub fn mat_triple_total(&self) -> usize {
        self.mat_triples.values().sum()
    }
}

impl RandomnessBudget {
    pub fn new(schedule: Vec<Request>) -> Self {
        RandomnessBudget { schedule }
    }

    pub fn push(&mut self, req: Request) {
        self.schedule.push(req);
    }

    pub fn extend(&mut self, other: &RandomnessBudget) {
        self.schedule.extend_from_slice(&other.schedule);
    }

    pub fn schedule(&self) -> &[Request] {
        &self.schedule
    }

    pub fn len(&self) -> usize {
        self.schedule.len()
    }

    pub fn is_empty(&self) -> bool {
        self.schedule.is_empty()
    }

    pub fn counts(&self) -> BudgetCounts {
        let mut c = BudgetCounts::default();
        for r in &self.schedule {
            match *r {
                Request::Triple { len } => c.triples += len,
                Request::MatTriple { m, k, n } => *c.mat_triples.entry((m, k, n)).or_default() += 1,
                Request::Trunc { len, .. } => c.trunc_pairs += len,
                Request::Cmp { len } => c.cmp_tuples += len,
            }
        }
        c
    }
}

/// The dealer's generator. Output depends only on the seed and the sequence
/// of requests.
pub struct Dealer {
    party_count: usize,
    rng: ChaCha20Rng,
}

const DEALER_STREAM: u64 = 0xDEA1;

impl Dealer {
    pub fn new(seed: u64, party_count: usize) -> Self {
        assert!(party_count >= 2, "the dealer serves at least two parties");
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(DEALER_STREAM);
        Dealer { party_count, rng }
    }

    pub fn party_count(&self) -> usize {
        self.party_count
    }

    fn split_arith(&mut self, values: &[RingElement]) -> Vec<Vec<RingElement>> {
        let p = self.party_count;
        let mut parts: Vec<Vec<RingElement>> = (0..p - 1)
            .map(|_| values.iter().map(|_| RingElement(self.rng.random())).collect())
            .collect();
        let last = values
            .iter()
            .enumerate()
            .map(|(i, v)| parts.iter().fold(*v, |acc, s| acc - s[i]))
            .collect();
        parts.push(last);
        parts
    }

    fn split_xor(&mut self, words: &[u64]) -> Vec<Vec<u64>> {
        let p = self.party_count;
        let mut parts: Vec<Vec<u64>> = (0..p - 1)
            .map(|_| words.iter().map(|_| self.rng.random()).collect())
            .collect();
        let last = words
            .iter()
            .enumerate()
            .map(|(i, w)| parts.iter().fold(*w, |acc, s| acc ^ s[i]))
            .collect();
        parts.push(last);
        parts
    }

    fn uniform(&mut self, n: usize) -> Vec<RingElement> {
        (0..n).map(|_| RingElement(self.rng.random())).collect()
    }

    pub fn gen_beaver(&mut self, len: usize) -> Vec<Correlation> {
        let a = self.uniform(len);
        let b = self.uniform(len);
        let c: Vec<RingElement> = a.iter().zip(&b).map(|(x, y)| *x * *y).collect();
        let (sa, sb, sc) = (self.split_arith(&a), self.split_arith(&b), self.split_arith(&c));
        sa.into_iter()
            .zip(sb)
            .zip(sc)
            .map(|((a, b), c)| Correlation::Triple(TripleShare { a, b, c }))
            .collect()
    }

    pub fn gen_matmul_triple(&mut self, m: usize, k: usize, n: usize) -> Vec<Correlation> {
        let a = self.uniform(m * k);
        let b = self.uniform(k * n);
        let c = ring_matmul(&a, &b, m, k, n);
        let (sa, sb, sc) = (self.split_arith(&a), self.split_arith(&b), self.split_arith(&c));
        sa.into_iter()
            .zip(sb)
            .zip(sc)
            .map(|((a, b), c)| Correlation::MatTriple(MatTripleShare { m, k, n, a, b, c }))
            .collect()
    }

    /// Masks are uniform on `[0, 2^64 - 2^52]`, so `t + K + r` cannot wrap for
    /// `|t| < 2^50` and the offset `K` applied by the online phase.
    pub fn gen_trunc_pair(&mut self, len: usize, divisor: u64) -> Vec<Correlation> {
        assert!((1..1 << 44).contains(&divisor), "unsupported divisor {divisor}");
        let hi = u64::MAX - (1u64 << (TRUNC_INPUT_BITS + 2));
        let r: Vec<RingElement> = (0..len).map(|_| RingElement(self.rng.random_range(0..=hi))).collect();
        let r_div: Vec<RingElement> = r.iter().map(|v| RingElement(v.0 / divisor)).collect();
        let (sr, sd) = (self.split_arith(&r), self.split_arith(&r_div));
        sr.into_iter()
            .zip(sd)
            .map(|(r, r_div)| Correlation::Trunc(TruncShare { divisor, r, r_div }))
            .collect()
    }

    pub fn gen_cmp_tuple(&mut self, len: usize) -> Vec<Correlation> {
        let r = self.uniform(len);
        let r_words: Vec<u64> = r.iter().map(|v| v.0).collect();
        let and_a: Vec<u64> = (0..CMP_ANDS * len).map(|_| self.rng.random()).collect();
        let and_b: Vec<u64> = (0..CMP_ANDS * len).map(|_| self.rng.random()).collect();
        let and_c: Vec<u64> = and_a.iter().zip(&and_b).map(|(a, b)| a & b).collect();
        let dabit_word: Vec<u64> = (0..len).map(|_| self.rng.random()).collect();
        let dabit: Vec<RingElement> = dabit_word.iter().map(|w| RingElement(w >> 63)).collect();

        let sr = self.split_arith(&r);
        let sbits = self.split_xor(&r_words);
        let (sa, sb, sc) = (self.split_xor(&and_a), self.split_xor(&and_b), self.split_xor(&and_c));
        let sw = self.split_xor(&dabit_word);
        let sd = self.split_arith(&dabit);
        (0..self.party_count)
            .map(|p| {
                Correlation::Cmp(CmpShare {
                    r: sr[p].clone(),
                    r_bits: sbits[p].clone(),
                    and_a: sa[p].clone(),
                    and_b: sb[p].clone(),
                    and_c: sc[p].clone(),
                    dabit_word: sw[p].clone(),
                    dabit: sd[p].clone(),
                })
            })
            .collect()
    }

    /// One correlation, as a share per party.
    pub fn generate(&mut self, req: &Request) -> Vec<Correlation> {
        match *req {
            Request::Triple { len } => self.gen_beaver(len),
            Request::MatTriple { m, k, n } => self.gen_matmul_triple(m, k, n),
            Request::Trunc { len, divisor } => self.gen_trunc_pair(len, divisor),
            Request::Cmp { len } => self.gen_cmp_tuple(len),
        }
    }

    /// Generates the whole budget ahead of time, one queue per party.
    pub fn generate_all(&mut self, budget: &RandomnessBudget) -> Vec<Vec<Correlation>> {
        let mut queues: Vec<Vec<Correlation>> = vec![Vec::with_capacity(budget.len()); self.party_count];
        for req in budget.schedule() {
            for (q, c) in queues.iter_mut().zip(self.generate(req)) {
                q.push(c);
            }
        }
        queues
    }
}

/// Writes one party's correlations of a single kind and shape.
pub fn write_triple_file(path: &Path, items: &[Correlation]) -> Result<()> {
    let first = items
        .first()
        .ok_or_else(|| MpcError::format("refusing to write an empty triple file"))?;
    let req = first.request();
    if items.iter().any(|c| c.request() != req) {
        return Err(MpcError::format("a triple file holds one kind and shape"));
    }
    let mut out = vec![req.kind_byte()];
    out.extend_from_slice(&(items.len() as u32).to_le_bytes());
    out.extend(shape_header(0, &req.shape()));
    for c in items {
        c.encode_payload(&mut out);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_triple_file(path: &Path) -> Result<Vec<Correlation>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 5 {
        return Err(MpcError::format("triple file too short"));
    }
    let kind = bytes[0];
    let count = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let (_, shape, used) = parse_shape_header(&bytes[5..])?;
    let item_len = Correlation::payload_len(kind, &shape)?;
    let body = &bytes[5 + used..];
    if body.len() != count * item_len {
        return Err(MpcError::format(format!(
            "triple file body is {} bytes, expected {count} items of {item_len}",
            body.len()
        )));
    }
    body.chunks(item_len.max(1))
        .take(count)
        .map(|chunk| Correlation::decode_payload(kind, &shape, chunk))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum(parts: &[&[RingElement]]) -> Vec<RingElement> {
        let mut out = parts[0].to_vec();
        for p in &parts[1..] {
            for (o, v) in out.iter_mut().zip(p.iter()) {
                *o += *v;
            }
        }
        out
    }

    fn xor(parts: &[&[u64]]) -> Vec<u64> {
        let mut out = parts[0].to_vec();
        for p in &parts[1..] {
            for (o, v) in out.iter_mut().zip(p.iter()) {
                *o ^= *v;
            }
        }
        out
    }

    #[test]
    fn beaver_triples_are_consistent() {
        let mut d = Dealer::new(1, 3);
        for _ in 0..1000 {
            let parts = d.gen_beaver(1);
            let get = |f: fn(&TripleShare) -> &Vec<RingElement>| {
                let v: Vec<&[RingElement]> = parts
                    .iter()
                    .map(|c| match c {
                        Correlation::Triple(t) => f(t).as_slice(),
                        _ => unreachable!(),
                    })
                    .collect();
                sum(&v)[0]
            };
            assert_eq!(get(|t| &t.a) * get(|t| &t.b), get(|t| &t.c));
        }
    }

    #[test]
    fn matmul_triples_are_consistent() {
        let mut d = Dealer::new(2, 2);
        let parts = d.gen_matmul_triple(3, 4, 2);
        let (p0, p1) = match (&parts[0], &parts[1]) {
            (Correlation::MatTriple(a), Correlation::MatTriple(b)) => (a, b),
            _ => unreachable!(),
        };
        let a = sum(&[&p0.a, &p1.a]);
        let b = sum(&[&p0.b, &p1.b]);
        assert_eq!(sum(&[&p0.c, &p1.c]), ring_matmul(&a, &b, 3, 4, 2));
    }

    #[test]
    fn trunc_pairs_divide_the_mask() {
        let mut d = Dealer::new(3, 2);
        let parts = d.gen_trunc_pair(500, 100_000);
        let (p0, p1) = match (&parts[0], &parts[1]) {
            (Correlation::Trunc(a), Correlation::Trunc(b)) => (a, b),
            _ => unreachable!(),
        };
        let r = sum(&[&p0.r, &p1.r]);
        let rd = sum(&[&p0.r_div, &p1.r_div]);
        for (r, rd) in r.iter().zip(&rd) {
            assert_eq!(rd.0, r.0 / 100_000);
            assert!(r.0 <= u64::MAX - (1 << 52));
        }
    }

    #[test]
    fn cmp_tuples_match_bit_decomposition() {
        let mut d = Dealer::new(4, 2);
        let parts = d.gen_cmp_tuple(200);
        let (p0, p1) = match (&parts[0], &parts[1]) {
            (Correlation::Cmp(a), Correlation::Cmp(b)) => (a, b),
            _ => unreachable!(),
        };
        let r = sum(&[&p0.r, &p1.r]);
        let bits = xor(&[&p0.r_bits, &p1.r_bits]);
        for (r, w) in r.iter().zip(&bits) {
            for i in 0..64 {
                assert_eq!((r.0 >> i) & 1, (w >> i) & 1);
            }
        }
        let a = xor(&[&p0.and_a, &p1.and_a]);
        let b = xor(&[&p0.and_b, &p1.and_b]);
        let c = xor(&[&p0.and_c, &p1.and_c]);
        assert!(a.iter().zip(&b).zip(&c).all(|((a, b), c)| a & b == *c));
        let word = xor(&[&p0.dabit_word, &p1.dabit_word]);
        let dabit = sum(&[&p0.dabit, &p1.dabit]);
        assert!(word.iter().zip(&dabit).all(|(w, s)| w >> 63 == s.0));
    }

    #[test]
    fn output_depends_only_on_seed() {
        let budget = RandomnessBudget::new(vec![
            Request::Triple { len: 4 },
            Request::Cmp { len: 2 },
            Request::Trunc { len: 3, divisor: 10 },
        ]);
        assert_eq!(
            Dealer::new(9, 2).generate_all(&budget),
            Dealer::new(9, 2).generate_all(&budget)
        );
        assert_ne!(
            Dealer::new(9, 2).generate_all(&budget),
            Dealer::new(10, 2).generate_all(&budget)
        );
    }

    #[test]
    fn budget_counts() {
        let b = RandomnessBudget::new(vec![
            Request::MatTriple { m: 32, k: 784, n: 64 },
            Request::MatTriple { m: 32, k: 784, n: 64 },
            Request::Triple { len: 5 },
            Request::Cmp { len: 7 },
        ]);
        let c = b.counts();
        assert_eq!(c.mat_triple_total(), 2);
        assert_eq!(c.mat_triples[&(32, 784, 64)], 2);
        assert_eq!((c.triples, c.cmp_tuples, c.trunc_pairs), (5, 7, 0));
    }

    #[test]
    fn wire_round_trip() {
        let mut d = Dealer::new(5, 2);
        for req in [
            Request::Triple { len: 3 },
            Request::MatTriple { m: 2, k: 3, n: 4 },
            Request::Trunc { len: 2, divisor: 7 },
            Request::Cmp { len: 2 },
        ] {
            for c in d.generate(&req) {
                assert_eq!(Correlation::from_bytes(&c.to_bytes()).unwrap(), c);
            }
        }
    }

    #[test]
    fn triple_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p0.triples");
        let mut d = Dealer::new(6, 2);
        let items: Vec<Correlation> = (0..4).map(|_| d.gen_beaver(5).swap_remove(0)).collect();
        write_triple_file(&path, &items).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes[0], 1);
        assert_eq!(&bytes[1..5], &4u32.to_le_bytes());
        assert_eq!(read_triple_file(&path).unwrap(), items);

        let mixed = vec![items[0].clone(), d.gen_beaver(2).swap_remove(0)];
        assert!(write_triple_file(&path, &mixed).is_err());
    }
}
