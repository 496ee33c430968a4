//! One-step generator `ε ↦ x` and its stop-gradient training loop.
//!
//! Each iteration draws latents and a data minibatch, evaluates the KDE
//! velocity `v` at the generated points against `{data, generated}`, and
//! regresses the generator output onto the frozen target `x + v`. Because
//! the target is frozen, the loss at evaluation time is exactly
//! `mean ‖v‖²` and its gradient w.r.t. the outputs is `−2v/B`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::kernels::KernelSpec;
use crate::metrics::mmd2_biased;
use crate::rng::SeededStream;
use crate::scalar::Scalar;
use crate::velocity::{field_batch, DivergenceSpec, FieldContext, DEFAULT_LOG_RATIO_CLAMP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }
}

/// Fully connected network; `weights[l]` is `out × in`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Generator<T> {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn flatten(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

impl<T: Scalar> Generator<T> {
    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config("need at least input and output layers, all positive".into()));
        }
        let mut rng = SeededStream::new(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push((0..fan_in * fan_out).map(|_| T::lit(bound * (2.0 * rng.uniform() - 1.0))).collect());
            biases.push(vec![T::zero(); fan_out]);
        }
        Ok(Self { layer_sizes: layer_sizes.to_vec(), activation, weights, biases })
    }

    pub fn from_parts(layer_sizes: Vec<usize>, activation: Activation, weights: Vec<Vec<T>>, biases: Vec<Vec<T>>) -> Result<Self> {
        let g = Self { layer_sizes, activation, weights, biases };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let l = &self.layer_sizes;
        if l.len() < 2 || l.contains(&0) || self.weights.len() != l.len() - 1 || self.biases.len() != l.len() - 1 {
            return Err(Error::Config("layer count does not match parameter arrays".into()));
        }
        for (i, pair) in l.windows(2).enumerate() {
            if self.weights[i].len() != pair[0] * pair[1] || self.biases[i].len() != pair[1] {
                return Err(Error::Config(format!("layer {i} parameter shape mismatch")));
            }
        }
        if self.weights.iter().chain(&self.biases).flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("generator parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Parameters flattened layer by layer (weights, then biases).
    pub fn params(&self) -> Vec<T> {
        Gradients { weights: self.weights.clone(), biases: self.biases.clone() }.flatten()
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::InvalidInput(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = it.next().expect("length checked");
            }
        }
        Ok(())
    }

    fn zero_gradients(&self) -> Gradients<T> {
        Gradients {
            weights: self.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    /// Forward pass keeping every layer's output (`acts[0]` is the input).
    fn forward_cached(&self, eps: &[T]) -> Result<Vec<Vec<T>>> {
        let din = self.input_dim();
        if !eps.len().is_multiple_of(din) || eps.is_empty() {
            return Err(Error::Config(format!("latent batch width must be {din}")));
        }
        let batch = eps.len() / din;
        let last = self.weights.len() - 1;
        let mut acts = vec![eps.to_vec()];
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let (fin, fout) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let input = &acts[l];
            let mut out = Vec::with_capacity(batch * fout);
            for a in input.chunks_exact(fin) {
                for (o, row) in w.chunks_exact(fin).enumerate() {
                    let z = row.iter().zip(a).fold(b[o], |acc, (&wi, &ai)| acc + wi * ai);
                    out.push(if l == last { z } else { self.activation.apply(z) });
                }
            }
            acts.push(out);
        }
        Ok(acts)
    }

    /// `x = f_θ(ε)` for a row-major batch of latents.
    pub fn generate(&self, eps: &[T]) -> Result<Vec<T>> {
        Ok(self.forward_cached(eps)?.pop().expect("at least one layer"))
    }

    /// Backpropagates `d_out = ∂L/∂x` (row-major, batch × output).
    fn backward(&self, acts: &[Vec<T>], d_out: Vec<T>) -> Gradients<T> {
        let mut grads = self.zero_gradients();
        let mut delta = d_out;
        for l in (0..self.weights.len()).rev() {
            let (fin, fout) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let input = &acts[l];
            let w = &self.weights[l];
            let mut d_input = vec![T::zero(); input.len()];
            for ((a, dz), da) in input.chunks_exact(fin).zip(delta.chunks_exact(fout)).zip(d_input.chunks_exact_mut(fin)) {
                for (o, &g) in dz.iter().enumerate() {
                    grads.biases[l][o] += g;
                    let gw = &mut grads.weights[l][o * fin..(o + 1) * fin];
                    let row = &w[o * fin..(o + 1) * fin];
                    for i in 0..fin {
                        gw[i] += g * a[i];
                        da[i] += g * row[i];
                    }
                }
            }
            if l > 0 {
                for (d, &a) in d_input.iter_mut().zip(input) {
                    *d *= self.activation.derivative_from_output(a);
                }
            }
            delta = d_input;
        }
        grads
    }

    /// `mean_b ‖f_θ(ε_b) − target_b‖²` with `targets` held fixed.
    pub fn fixed_target_loss(&self, eps: &[T], targets: &[T]) -> Result<T> {
        let x = self.generate(eps)?;
        if x.len() != targets.len() {
            return Err(Error::InvalidInput("targets shape differs from generator output".into()));
        }
        let batch = T::from_usize(x.len() / self.output_dim());
        Ok(x.iter().zip(targets).map(|(&a, &t)| (a - t) * (a - t)).sum::<T>() / batch)
    }

    /// Loss and parameter gradient of [`fixed_target_loss`](Self::fixed_target_loss).
    pub fn fixed_target_gradient(&self, eps: &[T], targets: &[T]) -> Result<(T, Gradients<T>)> {
        let mut acts = self.forward_cached(eps)?;
        let x = acts.last().expect("output layer");
        if x.len() != targets.len() {
            return Err(Error::InvalidInput("targets shape differs from generator output".into()));
        }
        let batch = T::from_usize(x.len() / self.output_dim());
        let two = T::lit(2.0);
        let loss = x.iter().zip(targets).map(|(&a, &t)| (a - t) * (a - t)).sum::<T>() / batch;
        let d_out = x.iter().zip(targets).map(|(&a, &t)| two * (a - t) / batch).collect();
        acts.pop();
        Ok((loss, self.backward(&acts, d_out)))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let g: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        g.validate()?;
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "T: Scalar")]
pub enum Optimizer<T> {
    Sgd,
    Adam {
        #[serde(default = "adam_beta1")]
        beta1: T,
        #[serde(default = "adam_beta2")]
        beta2: T,
        #[serde(default = "adam_eps")]
        eps: T,
    },
}

fn adam_beta1<T: Scalar>() -> T {
    T::lit(0.9)
}
fn adam_beta2<T: Scalar>() -> T {
    T::lit(0.999)
}
fn adam_eps<T: Scalar>() -> T {
    T::lit(1e-8)
}

impl<T: Scalar> Default for Optimizer<T> {
    fn default() -> Self {
        Optimizer::Adam { beta1: adam_beta1(), beta2: adam_beta2(), eps: adam_eps() }
    }
}

/// Optimizer moments, flattened in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    optimizer: Optimizer<T>,
    t: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(optimizer: Optimizer<T>, num_params: usize) -> Self {
        Self { optimizer, t: 0, m: vec![T::zero(); num_params], v: vec![T::zero(); num_params] }
    }

    fn apply(&mut self, params: &mut [T], grad: &[T], lr: T) {
        match self.optimizer {
            Optimizer::Sgd => {
                for (p, &g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let t = self.t as i32;
                let c1 = T::one() - beta1.powi(t);
                let c2 = T::one() - beta2.powi(t);
                for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
                    *m = beta1 * *m + (T::one() - beta1) * g;
                    *v = beta2 * *v + (T::one() - beta2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: T,
    pub divergence: DivergenceSpec<T>,
    pub kernel: KernelSpec<T>,
    pub seed: u64,
    pub optimizer: Optimizer<T>,
    /// Held-out MMD² is recorded every this many iterations.
    pub metric_every: usize,
    pub log_ratio_clamp: T,
}

impl<T: Scalar> TrainConfig<T> {
    pub fn new(kernel: KernelSpec<T>, divergence: DivergenceSpec<T>) -> Self {
        Self {
            batch_size: 256,
            iterations: 1000,
            learning_rate: T::lit(1e-3),
            divergence,
            kernel,
            seed: 0,
            optimizer: Optimizer::default(),
            metric_every: 100,
            log_ratio_clamp: T::lit(DEFAULT_LOG_RATIO_CLAMP),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        if !(self.learning_rate > T::zero()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.metric_every == 0 {
            return Err(Error::Config("metric_every must be positive".into()));
        }
        if self.kernel.geometry().is_sphere() {
            return Err(Error::Unsupported("generator training on the sphere".into()));
        }
        self.divergence.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<T> {
    /// `mean ‖v‖²` over the batch.
    pub loss: T,
    /// The velocity that defined the frozen targets (row-major).
    pub velocity: Vec<T>,
}

/// One stop-gradient update on latents `eps` against `data_batch`.
pub fn train_step<T: Scalar>(
    gen: &mut Generator<T>,
    state: &mut OptimizerState<T>,
    data_batch: &Ensemble<T>,
    eps: &[T],
    cfg: &TrainConfig<T>,
) -> Result<StepOutcome<T>> {
    let d = gen.output_dim();
    if data_batch.dim() != d || data_batch.geometry() != cfg.kernel.geometry() {
        return Err(Error::Config("data batch geometry must match the generator output and kernel".into()));
    }
    let x = gen.generate(eps)?;
    let generated = Ensemble::new(Geometry::Euclidean { dim: d }, x.clone())?;
    let ctx = FieldContext::new(cfg.kernel, data_batch.clone(), generated.clone())?.with_log_ratio_clamp(cfg.log_ratio_clamp);
    let v = field_batch(&cfg.divergence, &ctx, &generated)?;
    if let Some(bad) = v.iter().position(|c| !c.is_finite()) {
        return Err(Error::NonFinite { index: bad / d, what: "velocity".into() });
    }
    let targets: Vec<T> = x.iter().zip(&v).map(|(&a, &b)| a + b).collect();
    let batch = T::from_usize(x.len() / d);
    let loss = v.iter().map(|&c| c * c).sum::<T>() / batch;
    if !loss.is_finite() {
        return Err(Error::NonFinite { index: 0, what: "loss".into() });
    }
    let (_, grads) = gen.fixed_target_gradient(eps, &targets)?;
    let flat = grads.flatten();
    if let Some(bad) = flat.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { index: bad, what: "parameter gradient".into() });
    }
    let mut params = gen.params();
    state.apply(&mut params, &flat, cfg.learning_rate);
    if let Some(bad) = params.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite { index: bad, what: "parameter".into() });
    }
    gen.set_params(&params)?;
    Ok(StepOutcome { loss, velocity: v })
}

/// Standard-normal latents, row-major `count × dim`.
pub fn sample_latents<T: Scalar>(rng: &mut SeededStream, count: usize, dim: usize) -> Vec<T> {
    (0..count * dim).map(|_| T::lit(rng.normal())).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome<T> {
    pub generator: Generator<T>,
    pub loss_history: Vec<T>,
    /// `(iteration, MMD²(generated, held-out))`.
    pub metric_history: Vec<(usize, T)>,
}

/// Runs `cfg.iterations` steps. Minibatches are drawn with replacement from
/// `data`; the held-out metric uses a fixed latent set of `holdout.len()`
/// points so successive values are comparable.
pub fn train<T: Scalar>(gen: &Generator<T>, data: &Ensemble<T>, holdout: &Ensemble<T>, cfg: &TrainConfig<T>) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let mut gen = gen.clone();
    let mut state = OptimizerState::new(cfg.optimizer, gen.num_params());
    let mut batch_rng = SeededStream::derived(cfg.seed, 1);
    let mut latent_rng = SeededStream::derived(cfg.seed, 2);
    let mut metric_rng = SeededStream::derived(cfg.seed, 3);
    let metric_eps: Vec<T> = sample_latents(&mut metric_rng, holdout.len(), gen.input_dim());
    let metric = |g: &Generator<T>| -> Result<T> {
        let x = Ensemble::new(holdout.geometry(), g.generate(&metric_eps)?)?;
        mmd2_biased(&cfg.kernel, &x, holdout)
    };

    let mut loss_history = Vec::with_capacity(cfg.iterations);
    let mut metric_history = vec![(0, metric(&gen)?)];
    for it in 0..cfg.iterations {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| batch_rng.index(data.len())).collect();
        let batch = data.select(&idx)?;
        let eps: Vec<T> = sample_latents(&mut latent_rng, cfg.batch_size, gen.input_dim());
        let out = train_step(&mut gen, &mut state, &batch, &eps, cfg)
            .map_err(|e| Error::AtIteration { iteration: it, source: Box::new(e) })?;
        loss_history.push(out.loss);
        let done = it + 1;
        if done % cfg.metric_every == 0 || done == cfg.iterations {
            let m = metric(&gen).map_err(|e| Error::AtIteration { iteration: it, source: Box::new(e) })?;
            metric_history.push((done, m));
        }
    }
    Ok(TrainOutcome { generator: gen, loss_history, metric_history })
}
