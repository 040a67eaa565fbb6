//! Dense networks with ReLU hidden layers and a semi-sigmoid head, trained
//! with MSE and SGD. The training routines are generic over a [`Backend`],
//! so one model definition runs on plaintext tensors or on secret shares.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{Backend, Plain};
use crate::error::{shape_err, LearnError, Result};

pub type Tensor = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// `clamp(x, 0, 1)`, i.e. `relu(x) - relu(x - 1)`.
    SemiSigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::SemiSigmoid => "semi-sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "semi-sigmoid" | "semi_sigmoid" => Some(Activation::SemiSigmoid),
            _ => None,
        }
    }

    /// Value and derivative at `z`. The derivative is 0 at every kink.
    pub fn apply(self, z: f64) -> (f64, f64) {
        match self {
            Activation::Relu if z > 0.0 => (z, 1.0),
            Activation::Relu => (0.0, 0.0),
            Activation::SemiSigmoid if z <= 0.0 => (0.0, 0.0),
            Activation::SemiSigmoid if z >= 1.0 => (1.0, 0.0),
            Activation::SemiSigmoid => (z, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub layer_sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    /// Leading layers forming the feature extractor; the rest is the classifier.
    pub fe_layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::fcn(784, 10)
    }
}

impl ModelConfig {
    /// Three hidden layers of 64 and a single-layer classifier.
    pub fn fcn(input: usize, classes: usize) -> Self {
        ModelConfig {
            layer_sizes: vec![input, 64, 64, 64, classes],
            hidden: Activation::Relu,
            output: Activation::SemiSigmoid,
            fe_layers: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(LearnError::Config(format!("bad layer sizes {:?}", self.layer_sizes)));
        }
        if self.fe_layers >= self.layers() {
            return Err(LearnError::Config(format!(
                "fe_layers {} leaves no classifier in {} layers",
                self.fe_layers,
                self.layers()
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    /// Width of the feature embedding (q).
    pub fn embedding_width(&self) -> usize {
        self.layer_sizes[self.fe_layers]
    }

    pub fn activations(&self) -> Vec<Activation> {
        let n = self.layers();
        (0..n).map(|i| if i + 1 == n { self.output } else { self.hidden }).collect()
    }

    /// The classifier part on its own, reading inputs of `input_width`.
    pub fn classifier(&self, input_width: usize) -> ModelConfig {
        let mut sizes = vec![input_width];
        sizes.extend_from_slice(&self.layer_sizes[self.fe_layers + 1..]);
        ModelConfig {
            layer_sizes: sizes,
            hidden: self.hidden,
            output: self.output,
            fe_layers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub l2: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            l2: 0.0002,
            epochs: 10,
            batch_size: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 || self.l2.is_nan() || self.l2 < 0.0 || self.batch_size == 0 {
            return Err(LearnError::Config(format!(
                "need lr > 0, l2 >= 0, batch_size > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// `w` is `out x in`, `b` is `1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub w: T,
    pub b: T,
}

/// Public description of a network: what every party may know.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub sizes: Vec<usize>,
    pub acts: Vec<Activation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Net<T> {
    layers: Vec<Layer<T>>,
    acts: Vec<Activation>,
    version: u64,
}

impl<T> Net<T> {
    pub fn from_parts(layers: Vec<Layer<T>>, acts: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() || layers.len() != acts.len() {
            return Err(shape_err(format!("{} layers with {} activations", layers.len(), acts.len())));
        }
        Ok(Net {
            layers,
            acts,
            version: 0,
        })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn acts(&self) -> &[Activation] {
        &self.acts
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Bumped by every parameter update; caches from older versions are stale.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn into_layers(self) -> Vec<Layer<T>> {
        self.layers
    }
}

impl<T: Clone> Net<T> {
    /// Splits into the first `k` layers and the rest.
    pub fn split_at(&self, k: usize) -> Result<(Net<T>, Net<T>)> {
        if k == 0 || k >= self.depth() {
            return Err(shape_err(format!("cannot split {} layers at {k}", self.depth())));
        }
        Ok((
            Net::from_parts(self.layers[..k].to_vec(), self.acts[..k].to_vec())?,
            Net::from_parts(self.layers[k..].to_vec(), self.acts[k..].to_vec())?,
        ))
    }

    /// `self` followed by `next`.
    pub fn chain(&self, next: &Net<T>) -> Net<T> {
        let mut layers = self.layers.clone();
        layers.extend(next.layers.iter().cloned());
        let mut acts = self.acts.clone();
        acts.extend_from_slice(&next.acts);
        Net {
            layers,
            acts,
            version: 0,
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    /// Input of every layer: `inputs[0]` is the batch, `inputs[l]` the
    /// activation of layer `l - 1`.
    pub inputs: Vec<T>,
    /// Activation derivative at each layer's pre-activation.
    pub derivs: Vec<T>,
    pub output: T,
    version: u64,
}

/// Per-layer gradient sums: `w = deltaᵀ·a`, `b = Σ delta`, where `delta` is
/// backpropagated from `y - target`. The MSE gradient is these times
/// `2 / (batch · classes)`.
#[derive(Clone, Debug)]
pub struct Grads<T> {
    pub layers: Vec<Layer<T>>,
    version: u64,
}

pub fn forward<B: Backend>(b: &mut B, net: &Net<B::T>, x: &B::T) -> Result<Cache<B::T>> {
    let mut inputs = Vec::with_capacity(net.depth());
    let mut derivs = Vec::with_capacity(net.depth());
    let mut a = x.clone();
    for (layer, &act) in net.layers.iter().zip(&net.acts) {
        let (_, fan_in) = B::dims(&layer.w);
        let (_, width) = B::dims(&a);
        if width != fan_in {
            return Err(shape_err(format!("layer expects width {fan_in}, got {width}")));
        }
        let z = b.linear(&a, layer)?;
        let (next, d) = b.activate(&z, act)?;
        inputs.push(std::mem::replace(&mut a, next));
        derivs.push(d);
    }
    Ok(Cache {
        inputs,
        derivs,
        output: a,
        version: net.version,
    })
}

pub fn backward<B: Backend>(b: &mut B, net: &Net<B::T>, cache: &Cache<B::T>, target: &B::T) -> Result<Grads<B::T>> {
    if cache.version != net.version || cache.inputs.len() != net.depth() {
        return Err(LearnError::State(format!(
            "cache from model version {} used with version {}",
            cache.version, net.version
        )));
    }
    if B::dims(target) != B::dims(&cache.output) {
        return Err(shape_err(format!(
            "target {:?} vs output {:?}",
            B::dims(target),
            B::dims(&cache.output)
        )));
    }
    let depth = net.depth();
    let mut delta = b.output_delta(&cache.output, target, &cache.derivs[depth - 1])?;
    let mut layers = Vec::with_capacity(depth);
    for l in (0..depth).rev() {
        let w = b.weight_grad(&delta, &cache.inputs[l])?;
        let bias = b.bias_grad(&delta)?;
        layers.push(Layer { w, b: bias });
        if l > 0 {
            delta = b.backprop(&delta, &net.layers[l].w, &cache.derivs[l - 1])?;
        }
    }
    layers.reverse();
    Ok(Grads {
        layers,
        version: net.version,
    })
}

/// One SGD step from gradient sums over `count = batch · classes` outputs.
pub fn apply_sgd<B: Backend>(
    b: &mut B,
    net: &mut Net<B::T>,
    grads: &Grads<B::T>,
    count: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.version != net.version || grads.layers.len() != net.depth() {
        return Err(LearnError::State("gradients do not belong to this model version".into()));
    }
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        layer.w = b.sgd(&layer.w, &g.w, count, cfg)?;
        layer.b = b.sgd(&layer.b, &g.b, count, cfg)?;
    }
    net.version += 1;
    Ok(())
}

pub fn train_step<B: Backend>(b: &mut B, net: &mut Net<B::T>, x: &B::T, y: &B::T, cfg: &TrainConfig) -> Result<()> {
    let cache = forward(b, net, x)?;
    let grads = backward(b, net, &cache, y)?;
    let (rows, cols) = B::dims(y);
    apply_sgd(b, net, &grads, rows * cols, cfg)
}

/// Mini-batches of one epoch: a permutation of `0..n` drawn from
/// `(seed, epoch)`, cut into chunks of `batch`.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.chunks(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// `cfg.epochs` epochs of mini-batch SGD over the rows of `x`.
pub fn train<B: Backend>(
    b: &mut B,
    net: &mut Net<B::T>,
    x: &B::T,
    y: &B::T,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<()> {
    let (n, _) = B::dims(x);
    if B::dims(y).0 != n {
        return Err(shape_err(format!("{n} samples with {} targets", B::dims(y).0)));
    }
    for epoch in 0..cfg.epochs {
        for idx in epoch_batches(n, cfg.batch_size, seed, epoch) {
            let xb = b.rows(x, &idx)?;
            let yb = b.rows(y, &idx)?;
            train_step(b, net, &xb, &yb, cfg)?;
        }
    }
    Ok(())
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        t[[i, l]] = 1.0;
    }
    t
}

/// Mean over samples and classes of the squared difference.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(shape_err(format!("{:?} vs {:?}", pred.dim(), target.dim())));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok((pred - target).mapv(|d| d * d).mean().unwrap_or(0.0))
}

impl Net<Tensor> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Layer {
                    w: Tensor::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..=bound)),
                    b: Tensor::zeros((1, fan_out)),
                }
            })
            .collect();
        Net::from_parts(layers, config.activations())
    }

    pub fn shape(&self) -> NetShape {
        let mut sizes = vec![self.layers[0].w.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.w.nrows()));
        NetShape {
            sizes,
            acts: self.acts.clone(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.depth() - 1].w.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn outputs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(forward(&mut Plain, self, x)?.output)
    }

    /// Row-wise argmax of the outputs; ties go to the lowest class.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.outputs(x)?))
    }

    /// Gradient of the mean-squared error over the batch.
    pub fn gradients(&self, x: &Tensor, target: &Tensor) -> Result<Grads<Tensor>> {
        let cache = forward(&mut Plain, self, x)?;
        let mut g = backward(&mut Plain, self, &cache, target)?;
        let factor = 2.0 / target.len().max(1) as f64;
        for l in &mut g.layers {
            l.w *= factor;
            l.b *= factor;
        }
        Ok(g)
    }

    /// `θ ← θ − lr·(∇ + l2·θ)` with true gradients from [`Net::gradients`].
    pub fn sgd_step(&mut self, grads: &Grads<Tensor>, cfg: &TrainConfig) -> Result<()> {
        if grads.version != self.version || grads.layers.len() != self.depth() {
            return Err(LearnError::State("gradients do not belong to this model version".into()));
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            if layer.w.dim() != g.w.dim() || layer.b.dim() != g.b.dim() {
                return Err(shape_err("gradient shape differs from layer"));
            }
            layer.w = &layer.w - &((&g.w + &(&layer.w * cfg.l2)) * cfg.lr);
            layer.b = &layer.b - &((&g.b + &(&layer.b * cfg.l2)) * cfg.lr);
        }
        self.version += 1;
        Ok(())
    }

    /// Mutable access for fixtures and perturbation tests; bumps the version.
    pub fn layers_mut(&mut self) -> &mut [Layer<Tensor>] {
        self.version += 1;
        &mut self.layers
    }

    /// Text header (sizes, activations, seed) followed by every layer's
    /// weights then bias as little-endian f64, row-major.
    pub fn write_checkpoint<W: Write>(&self, mut out: W, seed: u64) -> Result<()> {
        let shape = self.shape();
        let sizes: Vec<String> = shape.sizes.iter().map(usize::to_string).collect();
        let acts: Vec<&str> = shape.acts.iter().map(|a| a.name()).collect();
        writeln!(out, "scol-net 1")?;
        writeln!(out, "sizes {}", sizes.join(" "))?;
        writeln!(out, "activations {}", acts.join(" "))?;
        writeln!(out, "seed {seed}")?;
        writeln!(out, "data")?;
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()) {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<(Self, u64)> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(LearnError::Format("checkpoint header truncated".into()));
            }
            Ok(line.trim_end().to_string())
        };
        if next_line(&mut input)? != "scol-net 1" {
            return Err(LearnError::Format("not a model checkpoint".into()));
        }
        let field = |l: String, key: &str| -> Result<Vec<String>> {
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(LearnError::Format(format!("expected `{key}` line, got `{l}`")));
            }
            Ok(it.map(str::to_string).collect())
        };
        let sizes = field(next_line(&mut input)?, "sizes")?
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| LearnError::Format(format!("bad size: {e}")))?;
        let acts = field(next_line(&mut input)?, "activations")?
            .iter()
            .map(|s| Activation::parse(s).ok_or_else(|| LearnError::Format(format!("unknown activation {s}"))))
            .collect::<Result<Vec<_>>>()?;
        let seed = field(next_line(&mut input)?, "seed")?
            .first()
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| LearnError::Format("bad seed line".into()))?;
        field(next_line(&mut input)?, "data")?;
        if sizes.len() < 2 || acts.len() != sizes.len() - 1 {
            return Err(LearnError::Format("sizes and activations disagree".into()));
        }
        let mut read_tensor = |rows: usize, cols: usize| -> Result<Tensor> {
            let mut buf = vec![0u8; rows * cols * 8];
            input
                .read_exact(&mut buf)
                .map_err(|_| LearnError::Format("checkpoint weights truncated".into()))?;
            let vals = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            Tensor::from_shape_vec((rows, cols), vals).map_err(|e| LearnError::Format(e.to_string()))
        };
        let mut layers = Vec::with_capacity(acts.len());
        for w in sizes.windows(2) {
            let weights = read_tensor(w[1], w[0])?;
            let bias = read_tensor(1, w[1])?;
            layers.push(Layer { w: weights, b: bias });
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(LearnError::Format(format!("{} trailing bytes after weights", rest.len())));
        }
        Ok((Net::from_parts(layers, acts)?, seed))
    }

    pub fn save(&self, path: &Path, seed: u64) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut out, seed)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, u64)> {
        Net::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    t.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
