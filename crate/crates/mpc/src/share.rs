//! Additive shares of tensors.
//!
//! [`Share`] is what one party holds; [`SharedTensor`] is the dealer's-eye
//! view of all parties' shares at once, used for sharing, reconstruction and
//! tests. Every linear operation on a [`Share`] is local.

use rand::RngCore;

use crate::error::{MpcError, Result};
use crate::ring::{FixedPointCodec, RingElement};

/// One party's additive share of a tensor.
///
/// `scale_exponent` counts the factors of the codec scale carried by the
/// logical value: 0 for integers and bits, 1 after encoding, 2 after a raw
/// product.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Share {
    shape: Vec<usize>,
    scale_exponent: u8,
    data: Vec<RingElement>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Share {
    pub fn new(shape: Vec<usize>, scale_exponent: u8, data: Vec<RingElement>) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(MpcError::protocol(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Share {
            shape,
            scale_exponent,
            data,
        })
    }

    pub fn zeros(shape: &[usize], scale_exponent: u8) -> Self {
        Share {
            shape: shape.to_vec(),
            scale_exponent,
            data: vec![RingElement::ZERO; numel(shape)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn scale_exponent(&self) -> u8 {
        self.scale_exponent
    }

    pub fn data(&self) -> &[RingElement] {
        &self.data
    }

    pub fn into_data(self) -> Vec<RingElement> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 share.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(MpcError::protocol(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub(crate) fn with_data(&self, scale_exponent: u8, data: Vec<RingElement>) -> Share {
        debug_assert_eq!(data.len(), self.data.len());
        Share {
            shape: self.shape.clone(),
            scale_exponent,
            data,
        }
    }

    fn check_compatible(&self, other: &Share, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(MpcError::protocol(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        if self.scale_exponent != other.scale_exponent {
            return Err(MpcError::protocol(format!(
                "{what}: scale mismatch {} vs {}",
                self.scale_exponent, other.scale_exponent
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Share) -> Result<Share> {
        self.check_compatible(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a + *b).collect();
        Ok(self.with_data(self.scale_exponent, data))
    }

    pub fn sub(&self, other: &Share) -> Result<Share> {
        self.check_compatible(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| *a - *b).collect();
        Ok(self.with_data(self.scale_exponent, data))
    }

    pub fn neg(&self) -> Share {
        self.with_data(self.scale_exponent, self.data.iter().map(|a| -*a).collect())
    }

    /// Adds a public tensor already expressed at this share's scale. Only the
    /// designated party (party 0) applies it.
    pub fn add_public_raw(&self, party: usize, values: &[RingElement]) -> Result<Share> {
        if values.len() != self.data.len() {
            return Err(MpcError::protocol("add_public: length mismatch"));
        }
        if party != 0 {
            return Ok(self.clone());
        }
        let data = self.data.iter().zip(values).map(|(a, b)| *a + *b).collect();
        Ok(self.with_data(self.scale_exponent, data))
    }

    /// Adds the same public constant (at this share's scale) to every element.
    pub fn add_scalar_raw(&self, party: usize, c: RingElement) -> Share {
        if party != 0 {
            return self.clone();
        }
        self.with_data(self.scale_exponent, self.data.iter().map(|a| *a + c).collect())
    }

    /// Multiplication by a public integer; the scale is unchanged.
    pub fn mul_int(&self, c: i64) -> Share {
        let c = RingElement::from_signed(c);
        self.with_data(self.scale_exponent, self.data.iter().map(|a| *a * c).collect())
    }

    /// Multiplication by a public ring constant that carries `extra` scale factors.
    pub fn mul_ring(&self, c: RingElement, extra: u8) -> Share {
        self.with_data(
            self.scale_exponent + extra,
            self.data.iter().map(|a| *a * c).collect(),
        )
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Share> {
        Share::new(shape, self.scale_exponent, self.data.clone())
    }

    pub fn transpose(&self) -> Result<Share> {
        let (r, c) = self.dims2()?;
        let mut data = vec![RingElement::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Share {
            shape: vec![c, r],
            scale_exponent: self.scale_exponent,
            data,
        })
    }

    /// Gathers rows of a matrix share by index.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Share> {
        let (r, c) = self.dims2()?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(MpcError::protocol(format!("row {i} out of range {r}")));
            }
            data.extend_from_slice(&self.data[i * c..(i + 1) * c]);
        }
        Ok(Share {
            shape: vec![rows.len(), c],
            scale_exponent: self.scale_exponent,
            data,
        })
    }

    /// Column sums of a matrix share, as a `1 x cols` share.
    pub fn sum_rows(&self) -> Result<Share> {
        let (r, c) = self.dims2()?;
        let mut data = vec![RingElement::ZERO; c];
        for i in 0..r {
            for (acc, v) in data.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *acc += *v;
            }
        }
        Ok(Share {
            shape: vec![1, c],
            scale_exponent: self.scale_exponent,
            data,
        })
    }

    /// Adds a `1 x cols` (or `cols`) share to every row of a matrix share.
    pub fn add_row(&self, row: &Share) -> Result<Share> {
        let (r, c) = self.dims2()?;
        if row.len() != c || row.scale_exponent != self.scale_exponent {
            return Err(MpcError::protocol(format!(
                "add_row: row of {} (scale {}) against {r}x{c} (scale {})",
                row.len(),
                row.scale_exponent,
                self.scale_exponent
            )));
        }
        let mut data = self.data.clone();
        for chunk in data.chunks_mut(c) {
            for (v, b) in chunk.iter_mut().zip(&row.data) {
                *v += *b;
            }
        }
        Ok(self.with_data(self.scale_exponent, data))
    }

    /// Concatenation along `axis`. Local: each party concatenates its own shares.
    pub fn concat(parts: &[&Share], axis: usize) -> Result<Share> {
        let first = parts
            .first()
            .ok_or_else(|| MpcError::protocol("concat of zero tensors"))?;
        let rank = first.shape.len();
        if axis >= rank {
            return Err(MpcError::protocol(format!("concat axis {axis} >= rank {rank}")));
        }
        for p in parts {
            if p.scale_exponent != first.scale_exponent {
                return Err(MpcError::protocol("concat: scale mismatch"));
            }
            let compatible = p.shape.len() == rank
                && p.shape.iter().zip(&first.shape).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(MpcError::protocol(format!(
                    "concat: shape {:?} incompatible with {:?} along axis {axis}",
                    p.shape, first.shape
                )));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut shape = first.shape.clone();
        shape[axis] = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Share {
            shape,
            scale_exponent: first.scale_exponent,
            data,
        })
    }

    /// `scale_exponent (1) | rank (1) | dims (4 LE each) | elements (8 LE each)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = shape_header(self.scale_exponent, &self.shape);
        out.extend(encode_elements(&self.data));
        out
    }

    /// Parses one share from the front of `bytes`, returning it and the bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Share, usize)> {
        let (scale_exponent, shape, dims_end) = parse_shape_header(bytes)?;
        let end = dims_end + 8 * numel(&shape);
        if bytes.len() < end {
            return Err(MpcError::format(format!(
                "share payload truncated: need {end} bytes, have {}",
                bytes.len()
            )));
        }
        let data = decode_elements(&bytes[dims_end..end])?;
        Ok((
            Share {
                shape,
                scale_exponent,
                data,
            },
            end,
        ))
    }
}

pub(crate) fn shape_header(scale_exponent: u8, shape: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(2 + 4 * shape.len());
    out.push(scale_exponent);
    out.push(shape.len() as u8);
    for d in shape {
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    out
}

/// Returns `(scale_exponent, shape, header_len)`.
pub(crate) fn parse_shape_header(bytes: &[u8]) -> Result<(u8, Vec<usize>, usize)> {
    if bytes.len() < 2 {
        return Err(MpcError::format("share header truncated"));
    }
    let rank = bytes[1] as usize;
    let dims_end = 2 + 4 * rank;
    if bytes.len() < dims_end {
        return Err(MpcError::format("share dims truncated"));
    }
    let shape = bytes[2..dims_end]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    Ok((bytes[0], shape, dims_end))
}

pub(crate) fn encode_elements(data: &[RingElement]) -> Vec<u8> {
    data.iter().flat_map(|e| e.to_le_bytes()).collect()
}

pub(crate) fn decode_elements(bytes: &[u8]) -> Result<Vec<RingElement>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(MpcError::format("element block not a multiple of 8 bytes"));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| RingElement::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// All parties' shares of one tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedTensor {
    shape: Vec<usize>,
    scale_exponent: u8,
    shares: Vec<Vec<RingElement>>,
}

impl SharedTensor {
    pub fn from_party_shares(parts: Vec<Share>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| MpcError::protocol("no party shares"))?;
        let (shape, scale_exponent) = (first.shape.clone(), first.scale_exponent);
        if parts.len() < 2 {
            return Err(MpcError::protocol("a shared tensor needs at least two parties"));
        }
        let mut shares = Vec::with_capacity(parts.len());
        for p in parts {
            if p.shape != shape || p.scale_exponent != scale_exponent {
                return Err(MpcError::protocol(format!(
                    "party shares disagree: {:?}@{} vs {:?}@{}",
                    p.shape, p.scale_exponent, shape, scale_exponent
                )));
            }
            shares.push(p.data);
        }
        Ok(SharedTensor {
            shape,
            scale_exponent,
            shares,
        })
    }

    /// Shares already-encoded ring values: parties `0..p-1` draw uniform shares
    /// from `rng`, the last party holds the difference.
    pub fn share_raw<R: RngCore + ?Sized>(
        values: &[RingElement],
        shape: &[usize],
        scale_exponent: u8,
        party_count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if party_count < 2 {
            return Err(MpcError::protocol("sharing needs at least two parties"));
        }
        if numel(shape) != values.len() {
            return Err(MpcError::protocol("share: shape does not match value count"));
        }
        let mut shares: Vec<Vec<RingElement>> = (0..party_count - 1)
            .map(|_| values.iter().map(|_| RingElement(rng.next_u64())).collect())
            .collect();
        let last = values
            .iter()
            .enumerate()
            .map(|(i, v)| shares.iter().fold(*v, |acc, s| acc - s[i]))
            .collect();
        shares.push(last);
        Ok(SharedTensor {
            shape: shape.to_vec(),
            scale_exponent,
            shares,
        })
    }

    /// Encodes a plaintext tensor at scale exponent 1 and shares it.
    pub fn share<R: RngCore + ?Sized>(
        secret: &[f64],
        shape: &[usize],
        party_count: usize,
        codec: &FixedPointCodec,
        rng: &mut R,
    ) -> Result<Self> {
        let encoded = codec.encode_slice(secret)?;
        SharedTensor::share_raw(&encoded, shape, 1, party_count, rng)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn scale_exponent(&self) -> u8 {
        self.scale_exponent
    }

    pub fn party_count(&self) -> usize {
        self.shares.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn party_share(&self, party: usize) -> Share {
        Share {
            shape: self.shape.clone(),
            scale_exponent: self.scale_exponent,
            data: self.shares[party].clone(),
        }
    }

    pub fn raw_shares(&self, party: usize) -> &[RingElement] {
        &self.shares[party]
    }

    /// Modular sum of all parties' shares.
    pub fn reconstruct_raw(&self) -> Vec<RingElement> {
        let mut out = self.shares[0].clone();
        for s in &self.shares[1..] {
            for (o, v) in out.iter_mut().zip(s) {
                *o += *v;
            }
        }
        out
    }

    /// Decodes the modular sum at this tensor's scale exponent.
    pub fn reconstruct(&self, codec: &FixedPointCodec) -> Vec<f64> {
        self.reconstruct_raw()
            .into_iter()
            .map(|e| codec.decode_at(e, self.scale_exponent))
            .collect()
    }

    pub fn add_shared(&self, other: &SharedTensor) -> Result<SharedTensor> {
        self.zip_parties(other, |a, b| a.add(b))
    }

    pub fn sub_shared(&self, other: &SharedTensor) -> Result<SharedTensor> {
        self.zip_parties(other, |a, b| a.sub(b))
    }

    /// Adds a plaintext tensor (encoded at this tensor's scale) via party 0.
    pub fn add_public(&self, c: &[f64], codec: &FixedPointCodec) -> Result<SharedTensor> {
        let encoded = c
            .iter()
            .map(|v| codec.encode_at(*v, self.scale_exponent))
            .collect::<Result<Vec<_>>>()?;
        let parts = (0..self.party_count())
            .map(|p| self.party_share(p).add_public_raw(p, &encoded))
            .collect::<Result<Vec<_>>>()?;
        SharedTensor::from_party_shares(parts)
    }

    /// Multiplies by a public integer constant; the scale is unchanged.
    pub fn mul_public(&self, c: i64) -> SharedTensor {
        SharedTensor {
            shape: self.shape.clone(),
            scale_exponent: self.scale_exponent,
            shares: (0..self.party_count())
                .map(|p| self.party_share(p).mul_int(c).data)
                .collect(),
        }
    }

    pub fn concat_shared(parts: &[&SharedTensor], axis: usize) -> Result<SharedTensor> {
        let first = parts
            .first()
            .ok_or_else(|| MpcError::protocol("concat of zero tensors"))?;
        let mut out = Vec::with_capacity(first.party_count());
        for p in 0..first.party_count() {
            let locals: Vec<Share> = parts.iter().map(|t| t.party_share(p)).collect();
            let refs: Vec<&Share> = locals.iter().collect();
            out.push(Share::concat(&refs, axis)?);
        }
        SharedTensor::from_party_shares(out)
    }

    fn zip_parties(
        &self,
        other: &SharedTensor,
        f: impl Fn(&Share, &Share) -> Result<Share>,
    ) -> Result<SharedTensor> {
        if self.party_count() != other.party_count() {
            return Err(MpcError::protocol("party count mismatch"));
        }
        let parts = (0..self.party_count())
            .map(|p| f(&self.party_share(p), &other.party_share(p)))
            .collect::<Result<Vec<_>>>()?;
        SharedTensor::from_party_shares(parts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct ZeroRng;

    impl RngCore for ZeroRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn share_reconstruct_exact() {
        let codec = FixedPointCodec::default();
        let t = SharedTensor::share(&[1.5, -2.0], &[2], 2, &codec, &mut rng()).unwrap();
        assert_eq!(t.reconstruct(&codec), vec![1.5, -2.0]);
        let t3 = SharedTensor::share(&[1.5, -2.0], &[2], 5, &codec, &mut rng()).unwrap();
        assert_eq!(t3.party_count(), 5);
        assert_eq!(t3.reconstruct(&codec), vec![1.5, -2.0]);
    }

    #[test]
    fn zero_randomness_puts_secret_on_last_party() {
        let codec = FixedPointCodec::default();
        let t = SharedTensor::share(&[1.5, -2.0], &[2], 3, &codec, &mut ZeroRng).unwrap();
        assert_eq!(t.raw_shares(0), &[RingElement(0); 2]);
        assert_eq!(t.raw_shares(1), &[RingElement(0); 2]);
        assert_eq!(t.raw_shares(2), codec.encode_slice(&[1.5, -2.0]).unwrap().as_slice());
    }

    #[test]
    fn linear_ops() {
        let codec = FixedPointCodec::default();
        let x = SharedTensor::share(&[1.0], &[1], 2, &codec, &mut rng()).unwrap();
        let y = SharedTensor::share(&[2.0], &[1], 2, &codec, &mut rng()).unwrap();
        assert_eq!(x.add_shared(&y).unwrap().reconstruct(&codec), vec![3.0]);
        assert_eq!(x.sub_shared(&x).unwrap().reconstruct(&codec), vec![0.0]);
        let six = SharedTensor::share(&[2.0], &[1], 2, &codec, &mut rng())
            .unwrap()
            .mul_public(3);
        assert_eq!(six.scale_exponent(), 1);
        assert_eq!(six.reconstruct(&codec), vec![6.0]);
        assert_eq!(x.add_public(&[0.25], &codec).unwrap().reconstruct(&codec), vec![1.25]);
    }

    #[test]
    fn scale_mismatch_is_rejected() {
        let codec = FixedPointCodec::default();
        let x = SharedTensor::share(&[1.0], &[1], 2, &codec, &mut rng()).unwrap();
        let sq = SharedTensor::share_raw(&[RingElement(1)], &[1], 2, 2, &mut rng()).unwrap();
        assert!(matches!(x.add_shared(&sq), Err(MpcError::Protocol(_))));
        let other_shape = SharedTensor::share(&[1.0, 2.0], &[2], 2, &codec, &mut rng()).unwrap();
        assert!(x.sub_shared(&other_shape).is_err());
    }

    #[test]
    fn mismatched_party_shares_rejected() {
        let a = Share::zeros(&[2], 1);
        let b = Share::zeros(&[3], 1);
        assert!(SharedTensor::from_party_shares(vec![a, b]).is_err());
    }

    #[test]
    fn concat_embeddings() {
        let codec = FixedPointCodec::default();
        let fe1: Vec<f64> = (0..64).map(|i| i as f64 / 10.0).collect();
        let fe2: Vec<f64> = (0..64).map(|i| -(i as f64) / 7.0).collect();
        let a = SharedTensor::share(&fe1, &[1, 64], 2, &codec, &mut rng()).unwrap();
        let b = SharedTensor::share(&fe2, &[1, 64], 2, &codec, &mut rng()).unwrap();
        let w = SharedTensor::concat_shared(&[&a, &b], 1).unwrap();
        assert_eq!(w.shape(), &[1, 128]);
        let expected: Vec<f64> = codec
            .encode_slice(&fe1)
            .unwrap()
            .into_iter()
            .chain(codec.encode_slice(&fe2).unwrap())
            .map(|e| codec.decode(e))
            .collect();
        assert_eq!(w.reconstruct(&codec), expected);
        let single = SharedTensor::concat_shared(&[&a], 1).unwrap();
        assert_eq!(single, a);
    }

    #[test]
    fn concat_rows_and_mismatch() {
        let a = Share::new(vec![1, 2], 1, vec![RingElement(1), RingElement(2)]).unwrap();
        let b = Share::new(vec![2, 2], 1, (3..7).map(RingElement).collect()).unwrap();
        let c = Share::concat(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        assert_eq!(c.data(), &(1..7).map(RingElement).collect::<Vec<_>>()[..]);
        assert!(Share::concat(&[&a, &b], 1).is_err());
        let scaled = Share::zeros(&[1, 2], 2);
        assert!(Share::concat(&[&a, &scaled], 0).is_err());
    }

    #[test]
    fn matrix_helpers() {
        let m = Share::new(vec![2, 3], 1, (1..=6).map(RingElement).collect()).unwrap();
        let t = m.transpose().unwrap();
        assert_eq!(t.shape(), &[3, 2]);
        assert_eq!(t.data()[..2], [RingElement(1), RingElement(4)]);
        assert_eq!(m.sum_rows().unwrap().data(), &[RingElement(5), RingElement(7), RingElement(9)]);
        let rows = m.select_rows(&[1, 1, 0]).unwrap();
        assert_eq!(rows.shape(), &[3, 3]);
        assert_eq!(rows.data()[0], RingElement(4));
        assert!(m.select_rows(&[2]).is_err());
    }

    #[test]
    fn serialization_layout() {
        let s = Share::new(vec![2, 1], 2, vec![RingElement(1), RingElement(u64::MAX)]).unwrap();
        let bytes = s.to_bytes();
        assert_eq!(bytes.len(), 2 + 8 + 16);
        assert_eq!(&bytes[..2], &[2, 2]);
        assert_eq!(&bytes[2..6], &2u32.to_le_bytes());
        assert_eq!(&bytes[10..18], &1u64.to_le_bytes());
        let (back, used) = Share::from_bytes(&bytes).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, s);
        assert!(Share::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
