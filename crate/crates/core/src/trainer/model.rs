//! Embedding → pooling → tanh MLP → linear head, with explicit reverse-mode
//! gradients.
//!
//! Sequence classification mean-pools the embedding outputs of all non-PAD
//! tokens (an all-PAD input pools to the zero vector). Token tagging runs the
//! MLP on every token's embedding independently.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{Example, PAD};
use crate::util::seeded_rng;
use crate::{Error, Result};

/// Floating-point types the model can be instantiated with.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::ScalarOperand
    + ndarray::LinalgScalar
    + Default
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SequenceClassification,
    TokenTagging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_task")]
    pub task: Task,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_task() -> Task {
    Task::SequenceClassification
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.embed_dim == 0
            || self.num_classes == 0
            || self.hidden_dims.iter().any(|&h| h == 0)
        {
            return Err(Error::Config(format!(
                "model dimensions must all be >= 1: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// `V·d + Σ (in·out + out)` over hidden layers and the head.
    pub fn parameter_count(&self) -> usize {
        let mut n = self.vocab_size * self.embed_dim;
        let mut fan_in = self.embed_dim;
        for &h in self.hidden_dims.iter().chain(std::iter::once(&self.num_classes)) {
            n += fan_in * h + h;
            fan_in = h;
        }
        n
    }
}

/// Which dense layer a per-example weight gradient is taken for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerRef {
    /// Last hidden layer before the head (the head itself when there are none).
    #[default]
    LastHidden,
    Head,
    Hidden(usize),
}

/// Dense layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Dense<F: Real> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Real> Dense<F> {
    fn zeros(out: usize, inp: usize) -> Self {
        Dense {
            weight: Array2::zeros((out, inp)),
            bias: Array1::zeros(out),
        }
    }

    fn apply(&self, x: &Array1<F>) -> Array1<F> {
        self.weight.dot(x) + &self.bias
    }

    /// Weight (row-major) followed by bias.
    pub fn flatten(&self) -> Vec<F> {
        self.weight.iter().chain(self.bias.iter()).copied().collect()
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn cast<G: Real>(&self) -> Dense<G> {
        Dense {
            weight: self.weight.mapv(|x| G::of(x.to_f64().unwrap())),
            bias: self.bias.mapv(|x| G::of(x.to_f64().unwrap())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Real")]
pub struct Model<F: Real = f32> {
    pub config: ModelConfig,
    /// `vocab_size × embed_dim` lookup table.
    pub embedding: Array2<F>,
    pub hidden: Vec<Dense<F>>,
    pub head: Dense<F>,
}

/// Gradients for every parameter of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<F: Real> {
    pub embedding: Array2<F>,
    pub hidden: Vec<Dense<F>>,
    pub head: Dense<F>,
}

impl<F: Real> ParamGrads<F> {
    pub fn zeros_like(m: &Model<F>) -> Self {
        ParamGrads {
            embedding: Array2::zeros(m.embedding.raw_dim()),
            hidden: m
                .hidden
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            head: Dense::zeros(m.head.weight.nrows(), m.head.weight.ncols()),
        }
    }

    pub fn fill_zero(&mut self) {
        self.embedding.fill(F::zero());
        for l in self.hidden.iter_mut().chain(std::iter::once(&mut self.head)) {
            l.weight.fill(F::zero());
            l.bias.fill(F::zero());
        }
    }

    pub fn layer(&self, layer: LayerRef) -> &Dense<F> {
        match resolve_layer(self.hidden.len(), layer) {
            Some(i) => &self.hidden[i],
            None => &self.head,
        }
    }
}

/// `Some(hidden index)` or `None` for the head.
fn resolve_layer(n_hidden: usize, layer: LayerRef) -> Option<usize> {
    match layer {
        LayerRef::Head => None,
        LayerRef::LastHidden => n_hidden.checked_sub(1),
        LayerRef::Hidden(i) => Some(i.min(n_hidden.saturating_sub(1))).filter(|_| n_hidden > 0),
    }
}

/// Forward or backward pass mode. Dropout is applied only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut dyn RngCore),
}

/// Per-example artifacts captured at a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCapture<F: Real = f32> {
    /// `len(tokens) × d`: derivative of the gold-label pre-softmax output
    /// with respect to the embedding-layer outputs.
    pub embed_grad: Array2<F>,
    /// Loss gradient with respect to the designated layer (weight, then bias).
    pub layer_grad: Vec<F>,
    pub logits: Array1<F>,
    pub predicted: usize,
}

struct MlpTrace<F: Real> {
    /// Input to every dense layer (hidden layers, then head).
    inputs: Vec<Array1<F>>,
    /// tanh output of each hidden layer, before dropout.
    activations: Vec<Array1<F>>,
    /// Inverted-dropout multipliers per hidden layer, when dropout ran.
    masks: Vec<Option<Array1<F>>>,
}

impl<F: Real> Model<F> {
    /// Scaled-uniform initialization: embeddings `U(±√(3/d))` (unit-norm rows
    /// in expectation), dense weights `U(±√(6/(fan_in+fan_out)))`, zero biases.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.seed, 0x1417);
        let mut uniform = |rows: usize, cols: usize, a: f64| {
            Array2::from_shape_fn((rows, cols), |_| F::of(rng.gen_range(-a..a)))
        };
        let d = cfg.embed_dim;
        let embedding = uniform(cfg.vocab_size, d, (3.0 / d as f64).sqrt());
        let mut fan_in = d;
        let mut hidden = Vec::new();
        for &h in &cfg.hidden_dims {
            hidden.push(Dense {
                weight: uniform(h, fan_in, (6.0 / (fan_in + h) as f64).sqrt()),
                bias: Array1::zeros(h),
            });
            fan_in = h;
        }
        let k = cfg.num_classes;
        let head = Dense {
            weight: uniform(k, fan_in, (6.0 / (fan_in + k) as f64).sqrt()),
            bias: Array1::zeros(k),
        };
        Ok(Model {
            config: cfg.clone(),
            embedding,
            hidden,
            head,
        })
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            embedding: self.embedding.mapv(|x| G::of(x.to_f64().unwrap())),
            hidden: self.hidden.iter().map(Dense::cast).collect(),
            head: self.head.cast(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.embedding.len()
            + self.hidden.iter().map(Dense::len).sum::<usize>()
            + self.head.len()
    }

    pub fn all_finite(&self) -> bool {
        self.embedding.iter().all(|x| x.is_finite())
            && self
                .hidden
                .iter()
                .chain(std::iter::once(&self.head))
                .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn layer(&self, layer: LayerRef) -> &Dense<F> {
        match resolve_layer(self.hidden.len(), layer) {
            Some(i) => &self.hidden[i],
            None => &self.head,
        }
    }

    pub fn layer_mut(&mut self, layer: LayerRef) -> &mut Dense<F> {
        match resolve_layer(self.hidden.len(), layer) {
            Some(i) => &mut self.hidden[i],
            None => &mut self.head,
        }
    }

    fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::invalid("empty token sequence"));
        }
        match tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(t) => Err(Error::invalid(format!(
                "token id {t} is outside the vocabulary of size {}",
                self.config.vocab_size
            ))),
            None => Ok(()),
        }
    }

    /// Embedding-layer outputs, one row per token.
    pub fn embed(&self, tokens: &[u32]) -> Result<Array2<F>> {
        self.check_tokens(tokens)?;
        Ok(self.embedding.select(Axis(0), &tokens.iter().map(|&t| t as usize).collect::<Vec<_>>()))
    }

    /// Logits: shape `(1, K)` for sequence classification, `(len, K)` for
    /// token tagging.
    pub fn forward(&self, tokens: &[u32], mode: Mode<'_>) -> Result<Array2<F>> {
        let embedded = self.embed(tokens)?;
        Ok(self.forward_embedded(embedded.view(), tokens, mode))
    }

    /// Forward pass from explicit embedding outputs. `tokens` only supplies
    /// the PAD mask for pooling.
    pub fn forward_embedded(&self, embedded: ArrayView2<F>, tokens: &[u32], mut mode: Mode<'_>) -> Array2<F> {
        match self.config.task {
            Task::SequenceClassification => {
                let (pooled, _) = pool(embedded, tokens);
                let (logits, _) = self.mlp_forward(pooled, &mut mode);
                logits.insert_axis(Axis(0))
            }
            Task::TokenTagging => {
                let k = self.config.num_classes;
                let mut out = Array2::zeros((tokens.len(), k));
                for (t, row) in embedded.rows().into_iter().enumerate() {
                    let (logits, _) = self.mlp_forward(row.to_owned(), &mut mode);
                    out.row_mut(t).assign(&logits);
                }
                out
            }
        }
    }

    /// Eval-mode class prediction per row (ties go to the lowest index).
    pub fn predict(&self, tokens: &[u32]) -> Result<Vec<usize>> {
        let logits = self.forward(tokens, Mode::Eval)?;
        Ok(logits.rows().into_iter().map(|r| argmax(r)).collect())
    }

    /// Eval-mode softmax probability of `label` (sequence task).
    pub fn class_probability(&self, tokens: &[u32], label: usize) -> Result<F> {
        let logits = self.forward(tokens, Mode::Eval)?;
        Ok(softmax(logits.row(0))[label])
    }

    /// Eval-mode mean cross-entropy for `targets` (one per logits row).
    pub fn loss(&self, tokens: &[u32], targets: &[usize]) -> Result<F> {
        let logits = self.forward(tokens, Mode::Eval)?;
        Ok(mean_cross_entropy(logits.view(), targets))
    }

    fn mlp_forward(&self, x: Array1<F>, mode: &mut Mode<'_>) -> (Array1<F>, MlpTrace<F>) {
        let p = self.config.dropout_rate;
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut activations = Vec::with_capacity(self.hidden.len());
        let mut masks = Vec::with_capacity(self.hidden.len());
        let mut h = x;
        for layer in &self.hidden {
            let a = layer.apply(&h).mapv(|z| z.tanh());
            inputs.push(h);
            let (out, mask) = match mode {
                Mode::Train(rng) if p > 0.0 => {
                    let keep = F::of(1.0 / (1.0 - p));
                    let mask = Array1::from_shape_fn(a.len(), |_| {
                        if rng.gen::<f64>() < p {
                            F::zero()
                        } else {
                            keep
                        }
                    });
                    (&a * &mask, Some(mask))
                }
                _ => (a.clone(), None),
            };
            activations.push(a);
            masks.push(mask);
            h = out;
        }
        let logits = self.head.apply(&h);
        inputs.push(h);
        (
            logits,
            MlpTrace {
                inputs,
                activations,
                masks,
            },
        )
    }

    /// Back-propagates `dlogits` through the MLP, accumulating parameter
    /// gradients (scaled by `scale`) into `grads`. Returns the gradient with
    /// respect to the MLP input.
    fn mlp_backward(
        &self,
        trace: &MlpTrace<F>,
        dlogits: &Array1<F>,
        grads: &mut ParamGrads<F>,
    ) -> Array1<F> {
        let n = self.hidden.len();
        accumulate(&mut grads.head, dlogits, &trace.inputs[n]);
        let mut dh = self.head.weight.t().dot(dlogits);
        for i in (0..n).rev() {
            if let Some(mask) = &trace.masks[i] {
                dh = dh * mask;
            }
            let a = &trace.activations[i];
            let dz = Array1::from_shape_fn(a.len(), |j| dh[j] * (F::one() - a[j] * a[j]));
            accumulate(&mut grads.hidden[i], &dz, &trace.inputs[i]);
            dh = self.hidden[i].weight.t().dot(&dz);
        }
        dh
    }

    /// Forward + backward for one example's loss, accumulating
    /// `scale · ∂loss/∂θ` into `grads`. Returns the unscaled loss.
    pub fn accumulate_loss_grad(
        &self,
        tokens: &[u32],
        targets: &[usize],
        scale: F,
        mut mode: Mode<'_>,
        grads: &mut ParamGrads<F>,
    ) -> Result<F> {
        let embedded = self.embed(tokens)?;
        match self.config.task {
            Task::SequenceClassification => {
                let (pooled, count) = pool(embedded.view(), tokens);
                let (logits, trace) = self.mlp_forward(pooled, &mut mode);
                let (loss, dlogits) = ce_and_grad(logits.view(), targets[0]);
                let dpooled = self.mlp_backward(&trace, &(dlogits * scale), grads);
                scatter_pooled(&mut grads.embedding, tokens, &dpooled, count);
                Ok(loss)
            }
            Task::TokenTagging => {
                let len = F::of(tokens.len() as f64);
                let mut total = F::zero();
                for (t, &tok) in tokens.iter().enumerate() {
                    let (logits, trace) = self.mlp_forward(embedded.row(t).to_owned(), &mut mode);
                    let (loss, dlogits) = ce_and_grad(logits.view(), targets[t]);
                    total = total + loss;
                    let dx = self.mlp_backward(&trace, &(dlogits * (scale / len)), grads);
                    grads
                        .embedding
                        .row_mut(tok as usize)
                        .scaled_add(F::one(), &dx);
                }
                Ok(total / len)
            }
        }
    }

    /// Checkpoint artifacts for one example, computed in eval mode.
    pub fn capture_gradients(&self, ex: &Example, layer: LayerRef) -> Result<GradCapture<F>> {
        if self.config.task != Task::SequenceClassification {
            return Err(Error::invalid(
                "gradient capture is defined for sequence classification models",
            ));
        }
        if ex.label >= self.config.num_classes {
            return Err(Error::invalid(format!(
                "example {} has no valid gold label ({} with K = {})",
                ex.id, ex.label, self.config.num_classes
            )));
        }
        let embedded = self.embed(&ex.tokens)?;
        let (pooled, count) = pool(embedded.view(), &ex.tokens);
        let (logits, trace) = self.mlp_forward(pooled, &mut Mode::Eval);
        let k = self.config.num_classes;

        let mut scratch = ParamGrads {
            embedding: Array2::zeros((0, 0)),
            hidden: self
                .hidden
                .iter()
                .map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols()))
                .collect(),
            head: Dense::zeros(k, self.head.weight.ncols()),
        };

        // ∂A/∂E where A is the gold-label logit.
        let mut onehot = Array1::zeros(k);
        onehot[ex.label] = F::one();
        let dpooled = self.mlp_backward(&trace, &onehot, &mut scratch);
        let d = self.config.embed_dim;
        let mut embed_grad = Array2::zeros((ex.tokens.len(), d));
        if count > 0 {
            let share = dpooled / F::of(count as f64);
            for (t, &tok) in ex.tokens.iter().enumerate() {
                if tok != PAD {
                    embed_grad.row_mut(t).assign(&share);
                }
            }
        }

        // ∂loss/∂(designated layer).
        scratch.fill_zero_dense();
        let (_, dlogits) = ce_and_grad(logits.view(), ex.label);
        self.mlp_backward(&trace, &dlogits, &mut scratch);
        let layer_grad = scratch.layer(layer).flatten();

        Ok(GradCapture {
            embed_grad,
            layer_grad,
            predicted: argmax(logits.view()),
            logits,
        })
    }
}

impl<F: Real> ParamGrads<F> {
    fn fill_zero_dense(&mut self) {
        for l in self.hidden.iter_mut().chain(std::iter::once(&mut self.head)) {
            l.weight.fill(F::zero());
            l.bias.fill(F::zero());
        }
    }
}

fn accumulate<F: Real>(g: &mut Dense<F>, dz: &Array1<F>, input: &Array1<F>) {
    for (i, mut row) in g.weight.rows_mut().into_iter().enumerate() {
        row.scaled_add(dz[i], input);
    }
    g.bias += dz;
}

/// Mean of non-PAD rows and how many there were.
fn pool<F: Real>(embedded: ArrayView2<F>, tokens: &[u32]) -> (Array1<F>, usize) {
    let mut sum = Array1::zeros(embedded.ncols());
    let mut count = 0;
    for (row, &tok) in embedded.rows().into_iter().zip(tokens) {
        if tok != PAD {
            sum += &row;
            count += 1;
        }
    }
    if count > 0 {
        sum /= F::of(count as f64);
    }
    (sum, count)
}

fn scatter_pooled<F: Real>(table_grad: &mut Array2<F>, tokens: &[u32], dpooled: &Array1<F>, count: usize) {
    if count == 0 {
        return;
    }
    let share = F::one() / F::of(count as f64);
    for &tok in tokens {
        if tok != PAD {
            table_grad.row_mut(tok as usize).scaled_add(share, dpooled);
        }
    }
}

/// Lowest index among maxima.
pub fn argmax<F: Real>(v: ArrayView1<F>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax<F: Real>(logits: ArrayView1<F>) -> Array1<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exp = logits.mapv(|z| (z - max).exp());
    let sum: F = exp.iter().copied().sum();
    exp / sum
}

fn ce_and_grad<F: Real>(logits: ArrayView1<F>, target: usize) -> (F, Array1<F>) {
    let p = softmax(logits);
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<F>().ln();
    let loss = lse - logits[target];
    let mut g = p;
    g[target] = g[target] - F::one();
    (loss, g)
}

fn mean_cross_entropy<F: Real>(logits: ArrayView2<F>, targets: &[usize]) -> F {
    let n = F::of(logits.nrows() as f64);
    logits
        .rows()
        .into_iter()
        .zip(targets)
        .map(|(r, &t)| ce_and_grad(r, t).0)
        .sum::<F>()
        / n
}
