//! White-box membership inference against a party's trained model. What the
//! attacker observes depends on the scenario: everything it trained itself
//! in CTFE, the shared extractor and its classifier in SFE, only the
//! classifier in LTFE.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::backend::Plain;
use crate::data::{synthetic_splits_with_holdout, LabeledDataset, SplitSpec, SyntheticParams};
use crate::error::{LearnError, Result};
use crate::nn::{self, ModelConfig, Net, Tensor, TrainConfig};
use crate::protocol::{concat_embeddings, derive_seed, run_scenario, Method, ScenarioConfig, TrainedModel};

/// One observable of the target model for a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    Output,
    /// Per-sample MSE.
    Loss,
    /// One-hot true label.
    Label,
    /// Gradient of the loss with respect to layer `l`'s weights.
    Gradient(usize),
    /// Output of hidden layer `l`.
    Activation(usize),
}

impl Component {
    pub fn name(&self) -> String {
        match self {
            Component::Output => "output".into(),
            Component::Loss => "loss".into(),
            Component::Label => "label".into(),
            Component::Gradient(l) => format!("grad{l}"),
            Component::Activation(l) => format!("act{l}"),
        }
    }

    fn tag(&self) -> u64 {
        match self {
            Component::Output => 1,
            Component::Loss => 2,
            Component::Label => 3,
            Component::Gradient(l) => 0x100 + *l as u64,
            Component::Activation(l) => 0x200 + *l as u64,
        }
    }
}

/// What the attacker can observe of its own model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttackerAccess {
    pub method: Method,
    /// Extractor depth of the scenario; SFE hides its gradients.
    pub fe_layers: usize,
    /// The attacking party. Under LTFE it sees only its own extractor's
    /// part of the classifier input.
    pub party: usize,
}

/// The network the attacker runs and the layers it observes.
struct View<'a> {
    net: &'a Net<Tensor>,
    extractors: Option<&'a [Net<Tensor>]>,
    gradients: Vec<usize>,
    activations: Vec<usize>,
    /// Columns of the network input the attacker can compute; `None` for all.
    visible_input: Option<std::ops::Range<usize>>,
    /// Index of `net`'s first layer in the full model, so components name
    /// the same layer under every method.
    offset: usize,
}

impl AttackerAccess {
    pub fn new(method: Method, model: &ModelConfig) -> Self {
        AttackerAccess {
            method,
            fe_layers: model.fe_layers,
            party: 0,
        }
    }

    fn view<'a>(&self, model: &'a TrainedModel) -> Result<View<'a>> {
        let mismatch = || LearnError::Config(format!("{} access does not fit this model", self.method));
        match (self.method, model) {
            (Method::Ctfe | Method::Sfe, TrainedModel::Chain(net)) => {
                let depth = net.depth();
                let first = if self.method == Method::Sfe { self.fe_layers } else { 0 };
                if first >= depth {
                    return Err(mismatch());
                }
                Ok(View {
                    net,
                    extractors: None,
                    gradients: (first..depth).collect(),
                    activations: (0..depth - 1).collect(),
                    visible_input: None,
                    offset: 0,
                })
            }
            (Method::Ltfe, TrainedModel::Concat { extractors, classifier }) => {
                // The other extractors stay private to their owners, so the
                // first-layer gradient is only known on the own block.
                let own = extractors.get(self.party).ok_or_else(mismatch)?;
                let start: usize = extractors[..self.party].iter().map(|f| f.output_width()).sum();
                Ok(View {
                    net: classifier,
                    extractors: Some(extractors),
                    gradients: (0..classifier.depth()).collect(),
                    activations: (0..classifier.depth() - 1).collect(),
                    visible_input: Some(start..start + own.output_width()),
                    offset: self.fe_layers,
                })
            }
            (Method::Nc, _) => Err(LearnError::Config("the non-collaborative baseline is not attacked".into())),
            _ => Err(mismatch()),
        }
    }

    /// Components and their unprojected widths, in feature order.
    pub fn layout(&self, model: &TrainedModel) -> Result<Vec<(Component, usize)>> {
        let v = self.view(model)?;
        let k = v.net.output_width();
        let mut out = vec![(Component::Output, k), (Component::Loss, 1), (Component::Label, k)];
        for &l in &v.gradients {
            let w = &v.net.layers()[l].w;
            let inputs = match (&v.visible_input, l) {
                (Some(cols), 0) => cols.len(),
                _ => w.ncols(),
            };
            out.push((Component::Gradient(l + v.offset), w.nrows() * inputs));
        }
        for &l in &v.activations {
            out.push((Component::Activation(l + v.offset), v.net.layers()[l].w.nrows()));
        }
        Ok(out)
    }
}

/// Seeded random projection for wide components. Gradients, being outer
/// products `delta ⊗ a`, are projected by a Kronecker product `A ⊗ B` of
/// Gaussian maps, which is applied without forming the gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sketch {
    pub seed: u64,
    /// Components at most this wide are kept as they are.
    pub max_width: usize,
    /// Approximate projected width.
    pub target: usize,
}

impl Default for Sketch {
    fn default() -> Self {
        Sketch {
            seed: 0x5EC7,
            max_width: 1024,
            target: 256,
        }
    }
}

impl Sketch {
    fn gaussian(&self, c: Component, side: u64, rows: usize, cols: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(self.seed, c.tag()), side));
        let scale = 1.0 / (rows as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        })
    }

    /// Row factors of the gradient projection: `(a, b)` with `a·b ≈ target`.
    fn gradient_dims(&self, out: usize, inp: usize) -> (usize, usize) {
        let a = out.clamp(1, 16);
        let b = inp.min(self.target.div_ceil(a)).max(1);
        (a, b)
    }
}

/// Per-component feature blocks, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AttackFeatures {
    pub components: Vec<Component>,
    pub blocks: Vec<Array2<f32>>,
}

impl AttackFeatures {
    pub fn len(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.blocks.iter().map(|b| b.ncols()).sum()
    }

    pub fn rows(&self, idx: &[usize]) -> AttackFeatures {
        AttackFeatures {
            components: self.components.clone(),
            blocks: self.blocks.iter().map(|b| b.select(Axis(0), idx)).collect(),
        }
    }

    /// One sample's features, components in order.
    pub fn row(&self, i: usize) -> Vec<f32> {
        self.blocks.iter().flat_map(|b| b.row(i).to_vec()).collect()
    }

    fn append(&mut self, other: AttackFeatures) -> Result<()> {
        if self.components != other.components {
            return Err(LearnError::State("feature layouts differ".into()));
        }
        for (a, b) in self.blocks.iter_mut().zip(other.blocks) {
            *a = concatenate(Axis(0), &[a.view(), b.view()]).map_err(|e| LearnError::Shape(e.to_string()))?;
        }
        Ok(())
    }
}

/// Rows per forward pass when extracting features.
const FEATURE_CHUNK: usize = 256;

fn outer_rows(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f32> {
    let (n, p) = a.dim();
    let q = b.ncols();
    let mut out = Array2::<f32>::zeros((n, p * q));
    for i in 0..n {
        let mut row = out.row_mut(i);
        for j in 0..p {
            let aj = a[[i, j]];
            for k in 0..q {
                row[j * q + k] = (aj * b[[i, k]]) as f32;
            }
        }
    }
    out
}

fn features_chunk(
    view: &View<'_>,
    layout: &[(Component, usize)],
    x: &Tensor,
    labels: &[usize],
    sketch: Option<&Sketch>,
) -> Result<AttackFeatures> {
    let input = match view.extractors {
        Some(f) => concat_embeddings(f, x)?,
        None => x.clone(),
    };
    let net = view.net;
    let k = net.output_width();
    let target = nn::one_hot(labels, k);
    let cache = nn::forward(&mut Plain, net, &input)?;
    let y = &cache.output;
    let diff = y - &target;
    let loss = diff.mapv(|v| v * v).mean_axis(Axis(1)).expect("nonempty classes");
    // Per-sample deltas, from the output layer down.
    let depth = net.depth();
    let mut deltas = vec![Tensor::zeros((0, 0)); depth];
    deltas[depth - 1] = &diff * &cache.derivs[depth - 1] * (2.0 / k as f64);
    for l in (0..depth - 1).rev() {
        deltas[l] = deltas[l + 1].dot(&net.layers()[l + 1].w) * &cache.derivs[l];
    }
    let mut blocks = Vec::with_capacity(layout.len());
    for &(c, width) in layout {
        let block = match c {
            Component::Output => y.mapv(|v| v as f32),
            Component::Loss => loss.clone().insert_axis(Axis(1)).mapv(|v| v as f32),
            Component::Label => target.mapv(|v| v as f32),
            Component::Gradient(g) => {
                let l = g - view.offset;
                let d = &deltas[l];
                let a = match (&view.visible_input, l) {
                    (Some(cols), 0) => cache.inputs[0].slice(s![.., cols.clone()]).to_owned(),
                    _ => cache.inputs[l].clone(),
                };
                match sketch.filter(|s| width > s.max_width) {
                    Some(s) => {
                        let (ra, rb) = s.gradient_dims(d.ncols(), a.ncols());
                        let pa = s.gaussian(c, 0, ra, d.ncols());
                        let pb = s.gaussian(c, 1, rb, a.ncols());
                        outer_rows(&d.dot(&pa.t()), &a.dot(&pb.t()))
                    }
                    None => outer_rows(d, &a),
                }
            }
            Component::Activation(g) => {
                let act = &cache.inputs[g - view.offset + 1];
                match sketch.filter(|s| width > s.max_width) {
                    Some(s) => act.dot(&s.gaussian(c, 0, s.target, width).t()).mapv(|v| v as f32),
                    None => act.mapv(|v| v as f32),
                }
            }
        };
        blocks.push(block);
    }
    Ok(AttackFeatures {
        components: layout.iter().map(|c| c.0).collect(),
        blocks,
    })
}

/// Attack features of every row of `d` against `model`.
pub fn build_features(
    model: &TrainedModel,
    access: &AttackerAccess,
    d: &LabeledDataset,
    sketch: Option<&Sketch>,
) -> Result<AttackFeatures> {
    let view = access.view(model)?;
    let layout = access.layout(model)?;
    let mut out: Option<AttackFeatures> = None;
    for start in (0..d.len()).step_by(FEATURE_CHUNK) {
        let end = (start + FEATURE_CHUNK).min(d.len());
        let x = d.x.slice(s![start..end, ..]).to_owned();
        let chunk = features_chunk(&view, &layout, &x, &d.y[start..end], sketch)?;
        match out.as_mut() {
            Some(o) => o.append(chunk)?,
            None => out = Some(chunk),
        }
    }
    out.ok_or_else(|| LearnError::Input("no samples to featurise".into()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackTrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub encoder_width: usize,
    pub head: [usize; 2],
}

impl Default for AttackTrainConfig {
    fn default() -> Self {
        AttackTrainConfig {
            lr: 0.001,
            epochs: 50,
            batch_size: 64,
            encoder_width: 64,
            head: [128, 64],
        }
    }
}

#[derive(Clone, Debug)]
struct Dense {
    w: Array2<f32>,
    b: Array1<f32>,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Dense {
        let bound = (6.0 / (fan_in + fan_out) as f32).sqrt();
        Dense {
            w: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..=bound)),
            b: Array1::zeros(fan_out),
        }
    }

    fn forward(&self, x: &Array2<f32>) -> Array2<f32> {
        x.dot(&self.w) + &self.b
    }
}

struct Adam {
    m: Vec<(Array2<f32>, Array1<f32>)>,
    v: Vec<(Array2<f32>, Array1<f32>)>,
    t: i32,
}

impl Adam {
    const B1: f32 = 0.9;
    const B2: f32 = 0.999;
    const EPS: f32 = 1e-8;

    fn new(layers: &[Dense]) -> Adam {
        let zeros = || layers.iter().map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.len()))).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Dense], grads: &[(Array2<f32>, Array1<f32>)], lr: f32) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (i, layer) in layers.iter_mut().enumerate() {
            let (gw, gb) = &grads[i];
            let (mw, mb) = &mut self.m[i];
            let (vw, vb) = &mut self.v[i];
            update(&mut layer.w, gw, mw, vw, lr, c1, c2);
            update(&mut layer.b, gb, mb, vb, lr, c1, c2);
        }
    }
}

fn update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f32, D>,
    g: &ndarray::Array<f32, D>,
    m: &mut ndarray::Array<f32, D>,
    v: &mut ndarray::Array<f32, D>,
    lr: f32,
    c1: f32,
    c2: f32,
) {
    ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = Adam::B1 * *m + (1.0 - Adam::B1) * g;
        *v = Adam::B2 * *v + (1.0 - Adam::B2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + Adam::EPS);
    });
}

/// Per-feature z-scores fitted on the attack training set.
#[derive(Clone, Debug)]
struct Standardizer {
    mean: Vec<Array1<f32>>,
    inv_std: Vec<Array1<f32>>,
}

impl Standardizer {
    fn fit(f: &AttackFeatures) -> Standardizer {
        let (mut mean, mut inv_std) = (Vec::new(), Vec::new());
        for b in &f.blocks {
            let m = b.mean_axis(Axis(0)).expect("nonempty");
            let sd = (b - &m).mapv(|v| v * v).mean_axis(Axis(0)).expect("nonempty").mapv(f32::sqrt);
            inv_std.push(sd.mapv(|s| if s > 1e-12 { 1.0 / s } else { 1.0 }));
            mean.push(m);
        }
        Standardizer { mean, inv_std }
    }

    fn apply(&self, f: &AttackFeatures) -> Vec<Array2<f32>> {
        f.blocks
            .iter()
            .zip(self.mean.iter().zip(&self.inv_std))
            .map(|(b, (m, s))| (b - m) * s)
            .collect()
    }
}

/// Per-component encoders feeding a two-hidden-layer head with a sigmoid
/// output.
#[derive(Clone, Debug)]
pub struct AttackModel {
    components: Vec<Component>,
    scaler: Standardizer,
    /// Encoders first, then the three head layers.
    layers: Vec<Dense>,
}

struct Pass {
    enc_in: Vec<Array2<f32>>,
    enc_out: Vec<Array2<f32>>,
    cat: Array2<f32>,
    a1: Array2<f32>,
    a2: Array2<f32>,
    p: Array1<f32>,
}

fn relu(x: Array2<f32>) -> Array2<f32> {
    x.mapv(|v| v.max(0.0))
}

fn relu_mask(grad: Array2<f32>, act: &Array2<f32>) -> Array2<f32> {
    grad * act.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

impl AttackModel {
    fn encoders(&self) -> usize {
        self.components.len()
    }

    fn pass(&self, blocks: Vec<Array2<f32>>) -> Pass {
        let c = self.encoders();
        let enc_out: Vec<Array2<f32>> = blocks.iter().zip(&self.layers[..c]).map(|(x, l)| relu(l.forward(x))).collect();
        let views: Vec<_> = enc_out.iter().map(|e| e.view()).collect();
        let cat = concatenate(Axis(1), &views).expect("equal rows");
        let a1 = relu(self.layers[c].forward(&cat));
        let a2 = relu(self.layers[c + 1].forward(&a1));
        let z = self.layers[c + 2].forward(&a2);
        let p = z.column(0).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        Pass {
            enc_in: blocks,
            enc_out,
            cat,
            a1,
            a2,
            p,
        }
    }

    fn gradients(&self, pass: &Pass, y: &Array1<f32>) -> Vec<(Array2<f32>, Array1<f32>)> {
        let c = self.encoders();
        let n = y.len() as f32;
        let dz3 = ((&pass.p - y) / n).insert_axis(Axis(1));
        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        let lin = |x: &Array2<f32>, d: &Array2<f32>| (x.t().dot(d), d.sum_axis(Axis(0)));
        grads[c + 2] = lin(&pass.a2, &dz3);
        let d2 = relu_mask(dz3.dot(&self.layers[c + 2].w.t()), &pass.a2);
        grads[c + 1] = lin(&pass.a1, &d2);
        let d1 = relu_mask(d2.dot(&self.layers[c + 1].w.t()), &pass.a1);
        grads[c] = lin(&pass.cat, &d1);
        let dcat = d1.dot(&self.layers[c].w.t());
        let mut col = 0;
        for (g, (x, e)) in grads[..c].iter_mut().zip(pass.enc_in.iter().zip(&pass.enc_out)) {
            let w = e.ncols();
            let de = relu_mask(dcat.slice(s![.., col..col + w]).to_owned(), e);
            *g = lin(x, &de);
            col += w;
        }
        grads
    }

    /// Membership probability of every sample.
    pub fn predict(&self, f: &AttackFeatures) -> Result<Vec<f64>> {
        if f.components != self.components {
            return Err(LearnError::Input("features do not match the attack model layout".into()));
        }
        Ok(self.pass(self.scaler.apply(f)).p.iter().map(|&p| p as f64).collect())
    }
}

/// Fits an attack model on member and non-member features, subsampling
/// the larger set so both classes are equally represented.
pub fn train_attack(
    members: &AttackFeatures,
    nonmembers: &AttackFeatures,
    cfg: &AttackTrainConfig,
    seed: u64,
) -> Result<AttackModel> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(LearnError::Input("attack training needs members and non-members".into()));
    }
    if members.components != nonmembers.components {
        return Err(LearnError::Input("member and non-member layouts differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = members.len().min(nonmembers.len());
    let pick = |f: &AttackFeatures, rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..f.len()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.sort_unstable();
        f.rows(&idx)
    };
    let mut data = pick(members, &mut rng);
    data.append(pick(nonmembers, &mut rng))?;
    let y: Array1<f32> = (0..2 * n).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
    let scaler = Standardizer::fit(&data);
    let blocks = scaler.apply(&data);

    let mut layers: Vec<Dense> = blocks
        .iter()
        .map(|b| Dense::init(b.ncols(), cfg.encoder_width, &mut rng))
        .collect();
    let cat = cfg.encoder_width * blocks.len();
    layers.push(Dense::init(cat, cfg.head[0], &mut rng));
    layers.push(Dense::init(cfg.head[0], cfg.head[1], &mut rng));
    layers.push(Dense::init(cfg.head[1], 1, &mut rng));
    let mut model = AttackModel {
        components: data.components.clone(),
        scaler,
        layers,
    };
    let mut adam = Adam::new(&model.layers);
    for epoch in 0..cfg.epochs {
        for idx in nn::epoch_batches(2 * n, cfg.batch_size, seed, epoch) {
            let xb: Vec<Array2<f32>> = blocks.iter().map(|b| b.select(Axis(0), &idx)).collect();
            let yb = y.select(Axis(0), &idx);
            let pass = model.pass(xb);
            let grads = model.gradients(&pass, &yb);
            adam.step(&mut model.layers, &grads, cfg.lr);
        }
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistBin {
    pub low: f64,
    pub high: f64,
    pub members: usize,
    pub nonmembers: usize,
}

pub const HIST_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct AttackReport {
    pub member_scores: Vec<f64>,
    pub nonmember_scores: Vec<f64>,
    /// From the strictest threshold down to accepting everything.
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    pub histogram: Vec<HistBin>,
}

impl AttackReport {
    /// Builds the ROC, AUC and histograms from membership scores.
    pub fn from_scores(member_scores: Vec<f64>, nonmember_scores: Vec<f64>) -> Result<AttackReport> {
        if member_scores.is_empty() || nonmember_scores.is_empty() {
            return Err(LearnError::Input("ROC needs members and non-members".into()));
        }
        let (roc, auc) = roc_auc(&member_scores, &nonmember_scores);
        let histogram = histogram(&member_scores, &nonmember_scores);
        Ok(AttackReport {
            member_scores,
            nonmember_scores,
            roc,
            auc,
            histogram,
        })
    }

    /// AUC computed from histogram bins alone, ties within a bin counted
    /// as half.
    pub fn histogram_auc(&self) -> f64 {
        let (pos, neg): (usize, usize) = (
            self.histogram.iter().map(|b| b.members).sum(),
            self.histogram.iter().map(|b| b.nonmembers).sum(),
        );
        let mut below = 0usize;
        let mut acc = 0.0;
        for b in &self.histogram {
            acc += b.members as f64 * (below as f64 + 0.5 * b.nonmembers as f64);
            below += b.nonmembers;
        }
        acc / (pos as f64 * neg as f64)
    }
}

fn roc_auc(pos: &[f64], neg: &[f64]) -> (Vec<RocPoint>, f64) {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut roc = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / np,
            fpr: fp as f64 / nn,
        });
    }
    let auc = roc.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum();
    (roc, auc)
}

fn histogram(pos: &[f64], neg: &[f64]) -> Vec<HistBin> {
    let bin = |s: f64| ((s.clamp(0.0, 1.0) * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
    let mut bins: Vec<HistBin> = (0..HIST_BINS)
        .map(|i| HistBin {
            low: i as f64 / HIST_BINS as f64,
            high: (i + 1) as f64 / HIST_BINS as f64,
            members: 0,
            nonmembers: 0,
        })
        .collect();
    for &s in pos {
        bins[bin(s)].members += 1;
    }
    for &s in neg {
        bins[bin(s)].nonmembers += 1;
    }
    bins
}

pub fn evaluate_attack(model: &AttackModel, members: &AttackFeatures, nonmembers: &AttackFeatures) -> Result<AttackReport> {
    AttackReport::from_scores(model.predict(members)?, model.predict(nonmembers)?)
}

/// One privacy experiment: the attacker (party 1) holds no data and trains
/// only on everything party 2 contributes; it then tries to tell party 2's
/// samples from fresh ones of the same distribution.
#[derive(Clone, Debug)]
pub struct PrivacyConfig {
    pub method: Method,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub spec: SplitSpec,
    pub params: SyntheticParams,
    pub attack: AttackTrainConfig,
    pub sketch: Sketch,
}

impl PrivacyConfig {
    pub fn new(method: Method, party_size: usize) -> Self {
        PrivacyConfig {
            method,
            model: ModelConfig::fcn(784, 10),
            train: TrainConfig::default(),
            spec: SplitSpec::synthetic().scaled(party_size as f64 / 20_000.0),
            params: SyntheticParams::default(),
            attack: AttackTrainConfig::default(),
            sketch: Sketch::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PrivacyReport {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub reports: Vec<AttackReport>,
}

impl PrivacyReport {
    pub fn mean_auc(&self) -> f64 {
        self.reports.iter().map(|r| r.auc).sum::<f64>() / self.reports.len().max(1) as f64
    }

    pub fn std_auc(&self) -> f64 {
        let n = self.reports.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_auc();
        (self.reports.iter().map(|r| (r.auc - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    }
}

fn halves(d: &LabeledDataset, n: usize) -> (LabeledDataset, LabeledDataset) {
    let h = n / 2;
    (d.subset(&(0..h).collect::<Vec<_>>()), d.subset(&(h..n).collect::<Vec<_>>()))
}

/// Runs one attack per seed.
pub fn run_privacy_experiment(cfg: &PrivacyConfig, seeds: &[u64]) -> Result<PrivacyReport> {
    let access = AttackerAccess::new(cfg.method, &cfg.model);
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (mut splits, holdout) = synthetic_splits_with_holdout(&cfg.spec, &cfg.params, seed)?;
        splits.party1 = LabeledDataset::empty(splits.features(), splits.classes());
        let mut sc = ScenarioConfig::new(cfg.method, cfg.model.clone(), seed);
        sc.share_fraction = 1.0;
        sc.train = cfg.train.clone();
        let target = run_scenario(&sc, &splits)?.parties.swap_remove(0).model;

        let n = splits.party2.len().min(holdout.len());
        let (m_train, m_eval) = halves(&splits.party2, n);
        let (o_train, o_eval) = halves(&holdout, n);
        let feats = |d: &LabeledDataset| build_features(&target, &access, d, Some(&cfg.sketch));
        let attack = train_attack(&feats(&m_train)?, &feats(&o_train)?, &cfg.attack, derive_seed(seed, 0xA77))?;
        reports.push(evaluate_attack(&attack, &feats(&m_eval)?, &feats(&o_eval)?)?);
    }
    Ok(PrivacyReport {
        method: cfg.method,
        seeds: seeds.to_vec(),
        reports,
    })
}
