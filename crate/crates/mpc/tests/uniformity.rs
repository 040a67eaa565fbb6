//! Every value a party receives during a protocol should look uniform:
//! chi-square over the top 8 bits of each 64-bit word.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scol_mpc::sim::Simulator;
use scol_mpc::{FixedPointCodec, Message, MsgType, RingElement, SharedTensor};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const N: usize = 100_000;

fn p_value(words: impl Iterator<Item = u64>) -> (f64, usize) {
    let mut bins = [0u64; 256];
    let mut n = 0usize;
    for w in words {
        bins[(w >> 56) as usize] += 1;
        n += 1;
    }
    let expected = n as f64 / 256.0;
    let stat: f64 = bins.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    (1.0 - ChiSquared::new(255.0).unwrap().cdf(stat), n)
}

fn words_of(msgs: &[Message], kind: MsgType) -> Vec<u64> {
    msgs.iter()
        .filter(|m| m.msg_type == kind)
        .flat_map(|m| m.payload.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())))
        .collect()
}

fn assert_uniform(words: Vec<u64>, what: &str) {
    let (p, n) = p_value(words.into_iter());
    assert!(n >= N, "{what}: only {n} words");
    assert!(p > 0.01, "{what}: chi-square p = {p}");
}

fn sim(seed: u64) -> Simulator {
    Simulator::new(2, FixedPointCodec::default(), seed).with_capture(true)
}

#[test]
fn shares_of_zero_are_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let zeros = vec![RingElement::ZERO; N];
    let t = SharedTensor::share_raw(&zeros, &[N], 1, 2, &mut rng).unwrap();
    assert_uniform(t.raw_shares(0).iter().map(|e| e.0).collect(), "party 0 share");
}

#[test]
fn beaver_openings_are_uniform() {
    let mut s = sim(2);
    // A constant secret: any leak would concentrate the histogram.
    let x = s.share(&vec![1.5; N], &[N]).unwrap();
    let mut triple = s.beaver_triple(N);
    s.mul_beaver(&x, &x, &mut triple).unwrap();
    let msgs = &s.last_captured()[1];
    let words = words_of(msgs, MsgType::Open);
    // x - a and y - b are sent back to back.
    assert_uniform(words[..N].to_vec(), "x - a");
    assert_uniform(words[N..].to_vec(), "y - b");
}

#[test]
fn opened_beaver_values_are_uniform() {
    let mut s = sim(3);
    let x = s.share(&vec![-2.0; N], &[N]).unwrap();
    let mut triple = s.beaver_triple(N);
    s.mul_beaver(&x, &x, &mut triple).unwrap();
    let cap = s.last_captured();
    let (r0, r1) = (words_of(&cap[0], MsgType::Open), words_of(&cap[1], MsgType::Open));
    let opened: Vec<u64> = r0.iter().zip(&r1).map(|(a, b)| a.wrapping_add(*b)).collect();
    assert_uniform(opened[..N].to_vec(), "opened x - a");
}

#[test]
fn truncation_openings_are_uniform() {
    let mut s = sim(4);
    let x = s.share(&vec![3.0; N], &[N]).unwrap();
    let run = s
        .run(&[&x], None, |p, sh| {
            let sq = p.mul(&sh[0], &sh[0])?;
            Ok(vec![p.truncate(&sq)?])
        })
        .unwrap();
    let words = words_of(&run.captured[1], MsgType::Open);
    assert_uniform(words[2 * N..].to_vec(), "t + r");
}

#[test]
fn comparison_openings_are_uniform() {
    let mut s = sim(5);
    let x = s.share(&vec![-3.5; N], &[N]).unwrap();
    let mut tuple = s.cmp_tuple(N);
    s.msb(&x, &mut tuple).unwrap();
    for party in 0..2 {
        let msgs = &s.last_captured()[party];
        assert_uniform(words_of(msgs, MsgType::Open), "x + r");
        let xor_words = words_of(msgs, MsgType::OpenXor);
        // Per AND round the masked words for every gate, then the daBit opening.
        let mut pos = 0;
        for (round, gates) in [2, 2, 2, 2, 2, 1].into_iter().enumerate() {
            let n = 2 * gates * N;
            assert_uniform(xor_words[pos..pos + n].to_vec(), &format!("AND round {round}"));
            pos += n;
        }
        assert_uniform(xor_words[pos..].to_vec(), "daBit opening");
    }
}

#[test]
fn reconstructed_masked_comparison_values_are_uniform() {
    // Opened values (not just shares) of x + r for a constant x.
    let mut s = sim(6);
    let x = s.share(&vec![7.25; N], &[N]).unwrap();
    let mut tuple = s.cmp_tuple(N);
    s.msb(&x, &mut tuple).unwrap();
    let cap = s.last_captured();
    let received0 = words_of(&cap[0], MsgType::Open);
    let received1 = words_of(&cap[1], MsgType::Open);
    // What 0 received is 1's masked share and vice versa: their sum is the opened value.
    let opened: Vec<u64> = received0.iter().zip(&received1).map(|(a, b)| a.wrapping_add(*b)).collect();
    assert_uniform(opened, "opened x + r");
}

#[test]
fn input_shares_are_uniform() {
    let mut s = sim(7);
    let dummy = s.share(&[0.0], &[1]).unwrap();
    let run = s
        .run(&[&dummy], None, |p, _| {
            let mine = vec![42.0; N];
            let owned = (p.id() == 0).then_some(mine.as_slice());
            Ok(vec![p.input_f64(0, owned, &[N])?])
        })
        .unwrap();
    assert_eq!(s.reconstruct(&run.outputs[0])[..3], [42.0, 42.0, 42.0]);
    assert_uniform(words_of(&run.captured[1], MsgType::Input), "input share");
}
