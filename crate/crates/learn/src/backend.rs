//! Where layer arithmetic happens: on plaintext tensors, or on secret shares
//! through a party's MPC engine.

use scol_mpc::{Party, Share};

use crate::error::{shape_err, LearnError, Result};
use crate::nn::{Activation, Layer, Net, NetShape, Tensor, TrainConfig};

/// The operations a training step needs. Gradient sums are returned
/// unscaled; [`Backend::sgd`] applies the `2 / count` MSE factor.
pub trait Backend {
    type T: Clone;

    fn dims(t: &Self::T) -> (usize, usize);
    fn rows(&mut self, x: &Self::T, idx: &[usize]) -> Result<Self::T>;
    /// `x·Wᵀ + b`.
    fn linear(&mut self, x: &Self::T, layer: &Layer<Self::T>) -> Result<Self::T>;
    /// Activation value and its derivative.
    fn activate(&mut self, z: &Self::T, act: Activation) -> Result<(Self::T, Self::T)>;
    /// `(y - target) ⊙ deriv`.
    fn output_delta(&mut self, y: &Self::T, target: &Self::T, deriv: &Self::T) -> Result<Self::T>;
    /// `(delta·W) ⊙ deriv`.
    fn backprop(&mut self, delta: &Self::T, w: &Self::T, deriv: &Self::T) -> Result<Self::T>;
    /// `deltaᵀ·a`.
    fn weight_grad(&mut self, delta: &Self::T, a: &Self::T) -> Result<Self::T>;
    fn bias_grad(&mut self, delta: &Self::T) -> Result<Self::T>;
    /// `θ − lr·(raw·2/count + l2·θ)`.
    fn sgd(&mut self, theta: &Self::T, raw: &Self::T, count: usize, cfg: &TrainConfig) -> Result<Self::T>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl Backend for Plain {
    type T = Tensor;

    fn dims(t: &Tensor) -> (usize, usize) {
        t.dim()
    }

    fn rows(&mut self, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= x.nrows()) {
            return Err(shape_err(format!("row {bad} out of {}", x.nrows())));
        }
        Ok(x.select(ndarray::Axis(0), idx))
    }

    fn linear(&mut self, x: &Tensor, layer: &Layer<Tensor>) -> Result<Tensor> {
        Ok(x.dot(&layer.w.t()) + &layer.b)
    }

    fn activate(&mut self, z: &Tensor, act: Activation) -> Result<(Tensor, Tensor)> {
        Ok((z.mapv(|v| act.apply(v).0), z.mapv(|v| act.apply(v).1)))
    }

    fn output_delta(&mut self, y: &Tensor, target: &Tensor, deriv: &Tensor) -> Result<Tensor> {
        Ok((y - target) * deriv)
    }

    fn backprop(&mut self, delta: &Tensor, w: &Tensor, deriv: &Tensor) -> Result<Tensor> {
        Ok(delta.dot(w) * deriv)
    }

    fn weight_grad(&mut self, delta: &Tensor, a: &Tensor) -> Result<Tensor> {
        Ok(delta.t().dot(a))
    }

    fn bias_grad(&mut self, delta: &Tensor) -> Result<Tensor> {
        Ok(delta.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0)))
    }

    fn sgd(&mut self, theta: &Tensor, raw: &Tensor, count: usize, cfg: &TrainConfig) -> Result<Tensor> {
        let grad = raw * (2.0 / count.max(1) as f64);
        Ok(theta - &((&grad + &(theta * cfg.l2)) * cfg.lr))
    }
}

/// Runs layer arithmetic on shares through `party`. Values carry one scale
/// factor; every product is truncated back, and activation derivatives are
/// shared bits.
pub struct Secure<'a> {
    party: &'a mut Party,
}

impl<'a> Secure<'a> {
    pub fn new(party: &'a mut Party) -> Self {
        Secure { party }
    }

    pub fn party(&mut self) -> &mut Party {
        self.party
    }
}

impl Backend for Secure<'_> {
    type T = Share;

    fn dims(t: &Share) -> (usize, usize) {
        match t.shape() {
            [r, c] => (*r, *c),
            [c] => (1, *c),
            _ => (0, 0),
        }
    }

    fn rows(&mut self, x: &Share, idx: &[usize]) -> Result<Share> {
        Ok(x.select_rows(idx)?)
    }

    fn linear(&mut self, x: &Share, layer: &Layer<Share>) -> Result<Share> {
        let z = self.party.matmul(x, &layer.w.transpose()?)?;
        let z = self.party.truncate(&z)?;
        Ok(z.add_row(&layer.b)?)
    }

    fn activate(&mut self, z: &Share, act: Activation) -> Result<(Share, Share)> {
        Ok(match act {
            Activation::Relu => self.party.relu(z)?,
            Activation::SemiSigmoid => self.party.semi_sigmoid(z)?,
        })
    }

    fn output_delta(&mut self, y: &Share, target: &Share, deriv: &Share) -> Result<Share> {
        let diff = y.sub(target)?;
        Ok(self.party.mul(&diff, deriv)?)
    }

    fn backprop(&mut self, delta: &Share, w: &Share, deriv: &Share) -> Result<Share> {
        let d = self.party.matmul(delta, w)?;
        let d = self.party.truncate(&d)?;
        Ok(self.party.mul(&d, deriv)?)
    }

    fn weight_grad(&mut self, delta: &Share, a: &Share) -> Result<Share> {
        let g = self.party.matmul(&delta.transpose()?, a)?;
        Ok(self.party.truncate(&g)?)
    }

    fn bias_grad(&mut self, delta: &Share) -> Result<Share> {
        Ok(delta.sum_rows()?)
    }

    /// With `s` the codec scale and `n = count`, forms
    /// `raw·round(2·lr·s) + θ·round(lr·l2·s·n)` (carrying `s²`) and divides
    /// by `n·s` in one truncation.
    fn sgd(&mut self, theta: &Share, raw: &Share, count: usize, cfg: &TrainConfig) -> Result<Share> {
        if theta.shape() != raw.shape() {
            return Err(shape_err(format!("sgd: {:?} vs {:?}", theta.shape(), raw.shape())));
        }
        let s = self.party.codec().scale();
        let n = count.max(1) as u64;
        let c_grad = (2.0 * cfg.lr * s as f64).round() as i64;
        let c_decay = (cfg.lr * cfg.l2 * s as f64 * n as f64).round() as i64;
        let t = raw.mul_int(c_grad).add(&theta.mul_int(c_decay))?;
        let step = self.party.div_public(&t, n * s, theta.scale_exponent())?;
        Ok(theta.sub(&step)?)
    }
}

/// Shares a tensor held by `owner`; other parties pass `None`.
pub fn share_tensor(party: &mut Party, owner: usize, t: Option<&Tensor>, rows: usize, cols: usize) -> Result<Share> {
    let flat: Option<Vec<f64>> = match t {
        Some(t) if party.id() == owner => {
            if t.dim() != (rows, cols) {
                return Err(shape_err(format!("input {:?} declared as {rows}x{cols}", t.dim())));
            }
            Some(t.iter().copied().collect())
        }
        _ => None,
    };
    Ok(party.input_f64(owner, flat.as_deref(), &[rows, cols])?)
}

/// Reveals a matrix share to `to` only.
pub fn reveal_tensor(party: &mut Party, x: &Share, to: usize) -> Result<Option<Tensor>> {
    let (r, c) = Secure::dims(x);
    match party.reveal_f64_to(x, to)? {
        Some(v) => Ok(Some(Tensor::from_shape_vec((r, c), v).map_err(|e| shape_err(e.to_string()))?)),
        None => Ok(None),
    }
}

/// Shares `owner`'s network; every party supplies the public shape.
pub fn share_net(party: &mut Party, owner: usize, net: Option<&Net<Tensor>>, shape: &NetShape) -> Result<Net<Share>> {
    if let Some(n) = net.filter(|_| party.id() == owner) {
        if &n.shape() != shape {
            return Err(shape_err("shared network differs from its declared shape"));
        }
    }
    let mut layers = Vec::with_capacity(shape.acts.len());
    for (l, w) in shape.sizes.windows(2).enumerate() {
        let own = net.map(|n| &n.layers()[l]);
        layers.push(Layer {
            w: share_tensor(party, owner, own.map(|x| &x.w), w[1], w[0])?,
            b: share_tensor(party, owner, own.map(|x| &x.b), 1, w[1])?,
        });
    }
    Net::from_parts(layers, shape.acts.clone())
}

/// Reveals a shared network to `to`.
pub fn reveal_net(party: &mut Party, net: &Net<Share>, to: usize) -> Result<Option<Net<Tensor>>> {
    let mut layers = Vec::with_capacity(net.depth());
    for l in net.layers() {
        let w = reveal_tensor(party, &l.w, to)?;
        let b = reveal_tensor(party, &l.b, to)?;
        if let (Some(w), Some(b)) = (w, b) {
            layers.push(Layer { w, b });
        }
    }
    if layers.is_empty() {
        return Ok(None);
    }
    if layers.len() != net.depth() {
        return Err(LearnError::State("partial network reveal".into()));
    }
    Ok(Some(Net::from_parts(layers, net.acts().to_vec())?))
}
