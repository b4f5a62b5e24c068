//! Small-scale DP-SGD / DP-Adam on binary logistic regression, with planted
//! canaries, model distances and a pipeline that emits pool records.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accountant::PrivacyParams;
use crate::calibration::{calibrate_sigma, AccountantKind, CalibrationRequest};
use crate::configs::Config;
use crate::error::{invalid, Error, Result};
use crate::pool::PoolRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDataset {
    pub features: Vec<Vec<f64>>,
    /// 0 or 1.
    pub labels: Vec<u8>,
    pub canary: Vec<bool>,
}

impl SimDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<u8>, canary: Vec<bool>) -> Result<Self> {
        let d = SimDataset {
            features,
            labels,
            canary,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.len();
        if self.labels.len() != n || self.canary.len() != n {
            return Err(invalid(
                "features, labels and canary flags differ in length",
            ));
        }
        if let Some(first) = self.features.first() {
            let d = first.len();
            if self.features.iter().any(|x| x.len() != d) {
                return Err(invalid("feature vectors differ in dimension"));
            }
        }
        if self.labels.iter().any(|&y| y > 1) {
            return Err(invalid("labels must be 0 or 1"));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid("features must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn example(&self, i: usize) -> (&[f64], f64) {
        (&self.features[i], self.labels[i] as f64)
    }

    pub fn concat(&self, other: &SimDataset) -> Result<SimDataset> {
        let mut out = self.clone();
        out.features.extend(other.features.iter().cloned());
        out.labels.extend(&other.labels);
        out.canary.extend(&other.canary);
        out.validate()?;
        Ok(out)
    }
}

/// Weights for d features followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dim: usize) -> Self {
        ModelParams {
            weights: vec![0.0; dim + 1],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(x.len(), d);
        x.iter()
            .zip(&self.weights[..d])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.weights[d]
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn loss(&self, x: &[f64], y: f64) -> f64 {
        logistic_loss(self.logit(x), y)
    }

    pub fn mean_loss(&self, data: &SimDataset) -> f64 {
        let total: f64 = (0..data.len())
            .map(|i| {
                let (x, y) = data.example(i);
                self.loss(x, y)
            })
            .sum();
        total / data.len() as f64
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) − y·z without overflow.
pub fn logistic_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// (sigmoid(w·x̃) − y)·x̃ with x̃ = (x, 1).
pub fn logistic_grad(params: &ModelParams, x: &[f64], y: f64) -> Vec<f64> {
    let r = params.predict(x) - y;
    let mut g: Vec<f64> = x.iter().map(|v| r * v).collect();
    g.push(r);
    g
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn clip_gradient(g: &[f64], c: f64) -> Vec<f64> {
    assert!(c > 0.0, "clipping norm must be positive");
    let scale = (l2_norm(g) / c).max(1.0);
    g.iter().map(|v| v / scale).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Clipping {
    Norm(f64),
    /// c = ∞. Only valid with σ = 0.
    Off,
}

/// (1/|S|)(Σ clip(gᵢ, c) + N(0, σ²c² I)).
pub fn privatized_gradient<R: Rng + ?Sized>(
    grads: &[Vec<f64>],
    clipping: Clipping,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let Some(first) = grads.first() else {
        return Err(invalid("privatized gradient needs at least one sample"));
    };
    if !(sigma >= 0.0) {
        return Err(invalid("noise multiplier must be non-negative"));
    }
    let mut sum = vec![0.0; first.len()];
    for g in grads {
        if g.len() != sum.len() {
            return Err(invalid("per-sample gradients differ in dimension"));
        }
        match clipping {
            Clipping::Norm(c) => {
                let clipped = clip_gradient(g, c);
                debug_assert!(l2_norm(&clipped) <= c * (1.0 + 1e-12));
                sum.iter_mut().zip(&clipped).for_each(|(s, v)| *s += v);
            }
            Clipping::Off => sum.iter_mut().zip(g).for_each(|(s, v)| *s += v),
        }
    }
    if sigma > 0.0 {
        let Clipping::Norm(c) = clipping else {
            return Err(invalid("noise needs a finite clipping norm"));
        };
        for s in &mut sum {
            let z: f64 = StandardNormal.sample(rng);
            *s += sigma * c * z;
        }
    }
    let n = grads.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma: f64,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(gamma > 0.0) {
            return Err(invalid("need 0 <= beta1, beta2 < 1 and gamma > 0"));
        }
        Ok(AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1,
            beta2,
            gamma,
            t: 0,
        })
    }
}

/// One Adam step. The bias corrections use the 1-based step count, and γ
/// sits inside the square root: w ← w − η·m̂/√(v̂ + γ). (Most libraries
/// add it outside.)
#[allow(clippy::needless_range_loop)]
pub fn adam_update(state: &mut AdamState, params: &mut ModelParams, g: &[f64], eta: f64) {
    assert_eq!(g.len(), params.weights.len());
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..g.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params.weights[i] -= eta * m_hat / (v_hat + state.gamma).sqrt();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Each index independently with probability b/n.
    Poisson,
    /// Fixed-size batches from a fresh permutation every epoch.
    Shuffle,
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(SamplerKind::Poisson),
            "shuffle" => Ok(SamplerKind::Shuffle),
            other => Err(invalid(format!("unknown sampler '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchSampler {
    kind: SamplerKind,
    n: usize,
    b: usize,
    perm: Vec<usize>,
    cursor: usize,
}

impl BatchSampler {
    pub fn new(kind: SamplerKind, n: usize, b: usize) -> Result<Self> {
        if n == 0 || b > n {
            return Err(invalid(format!(
                "batch size {b} must lie in [0, n={n}] with n > 0"
            )));
        }
        if kind == SamplerKind::Shuffle && b == 0 {
            return Err(invalid("shuffled batches need b >= 1"));
        }
        Ok(BatchSampler {
            kind,
            n,
            b,
            perm: (0..n).collect(),
            cursor: n,
        })
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        match self.kind {
            SamplerKind::Poisson => {
                let q = self.b as f64 / self.n as f64;
                (0..self.n).filter(|_| rng.random::<f64>() < q).collect()
            }
            SamplerKind::Shuffle => {
                // A partial batch at the end of an epoch is dropped.
                if self.cursor + self.b > self.n {
                    self.perm.shuffle(rng);
                    self.cursor = 0;
                }
                let batch = self.perm[self.cursor..self.cursor + self.b].to_vec();
                self.cursor += self.b;
                batch
            }
        }
    }
}

/// One batch from a fresh sampler.
pub fn draw_batch<R: Rng + ?Sized>(
    n: usize,
    b: usize,
    kind: SamplerKind,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Ok(BatchSampler::new(kind, n, b)?.draw(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, gamma: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            gamma: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub config: Config,
    pub sigma: f64,
    pub sampler: SamplerKind,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Disables clipping (c = ∞); requires σ = 0.
    pub no_clip: bool,
}

impl TrainSpec {
    pub fn clipping(&self) -> Clipping {
        if self.no_clip {
            Clipping::Off
        } else {
            Clipping::Norm(self.config.clip)
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.config.validate()?;
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("noise multiplier must be finite and non-negative"));
        }
        if self.no_clip && self.sigma > 0.0 {
            return Err(invalid("noise needs clipping enabled"));
        }
        if self.config.b as usize > n {
            return Err(invalid(format!(
                "batch size {} exceeds dataset size {n}",
                self.config.b
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 1-based.
    pub step: u64,
    /// Mean training loss after the step.
    pub loss: f64,
    /// 0 for a skipped (empty) Poisson batch.
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceRow>,
    pub skipped_steps: u64,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,loss,batch_size\n");
    for r in trace {
        let _ = writeln!(out, "{},{},{}", r.step, r.loss, r.batch_size);
    }
    out
}

/// Runs T steps from zero weights. Deterministic given the seed.
pub fn train(spec: &TrainSpec, data: &SimDataset) -> Result<TrainOutcome> {
    data.validate()?;
    if data.is_empty() {
        return Err(invalid("training set is empty"));
    }
    spec.validate(data.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sampler = BatchSampler::new(spec.sampler, data.len(), spec.config.b as usize)?;
    let mut params = ModelParams::zeros(data.dim());
    let mut adam = match spec.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam {
            beta1,
            beta2,
            gamma,
        } => Some(AdamState::new(params.weights.len(), beta1, beta2, gamma)?),
    };
    let clipping = spec.clipping();
    let eta = spec.config.eta;
    let mut trace = Vec::with_capacity(spec.config.steps as usize);
    let mut skipped = 0;

    for step in 1..=spec.config.steps {
        let batch = sampler.draw(&mut rng);
        if batch.is_empty() {
            skipped += 1;
        } else {
            let grads: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| {
                    let (x, y) = data.example(i);
                    logistic_grad(&params, x, y)
                })
                .collect();
            let g = privatized_gradient(&grads, clipping, spec.sigma, &mut rng)?;
            match adam.as_mut() {
                None => params
                    .weights
                    .iter_mut()
                    .zip(&g)
                    .for_each(|(w, gi)| *w -= eta * gi),
                Some(state) => adam_update(state, &mut params, &g, eta),
            }
        }
        let loss = params.mean_loss(data);
        if !loss.is_finite() || params.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { step });
        }
        trace.push(TraceRow {
            step,
            loss,
            batch_size: batch.len(),
        });
    }
    Ok(TrainOutcome {
        params,
        trace,
        skipped_steps: skipped,
    })
}

pub fn param_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    if a.weights.len() != b.weights.len() {
        return Err(invalid("models differ in dimension"));
    }
    Ok(a.weights
        .iter()
        .zip(&b.weights)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

/// Mean over held-out points of ‖(p_a, 1−p_a) − (p_b, 1−p_b)‖₂ = √2·|p_a − p_b|.
pub fn functional_distance(a: &ModelParams, b: &ModelParams, heldout: &SimDataset) -> Result<f64> {
    if heldout.is_empty() {
        return Err(invalid("held-out set is empty"));
    }
    if a.weights.len() != b.weights.len() || a.dim() != heldout.dim() {
        return Err(invalid("models and data differ in dimension"));
    }
    let total: f64 = heldout
        .features
        .iter()
        .map(|x| std::f64::consts::SQRT_2 * (a.predict(x) - b.predict(x)).abs())
        .sum();
    Ok(total / heldout.len() as f64)
}

/// Per canary: mean loss over the reference points minus the canary's loss.
/// Positive values mean the model fits the canary better than comparable
/// unseen points.
pub fn canary_exposure(
    model: &ModelParams,
    canaries: &SimDataset,
    references: &SimDataset,
) -> Result<Vec<f64>> {
    if canaries.is_empty() || canaries.len() != references.len() {
        return Err(invalid(
            "canary and reference sets must be non-empty and equal-sized",
        ));
    }
    let ref_loss = model.mean_loss(references);
    Ok((0..canaries.len())
        .map(|i| {
            let (x, y) = canaries.example(i);
            ref_loss - model.loss(x, y)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub canaries: usize,
    /// Feature scale of canaries and their references.
    pub canary_scale: f64,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            n_train: 2000,
            n_test: 1000,
            dim: 10,
            canaries: 20,
            canary_scale: 3.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimWorld {
    /// Ordinary points followed by the canaries (flagged).
    pub train: SimDataset,
    pub test: SimDataset,
    pub canaries: SimDataset,
    /// Drawn like the canaries but never trained on.
    pub references: SimDataset,
    pub true_weights: ModelParams,
}

fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    scale * z
                })
                .collect()
        })
        .collect()
}

/// Gaussian features with labels from a planted logistic model; canaries
/// are wider outliers with coin-flip labels.
pub fn generate_world(spec: &WorldSpec) -> Result<SimWorld> {
    if spec.n_train == 0 || spec.n_test == 0 || spec.dim == 0 || spec.canaries == 0 {
        return Err(invalid("world sizes must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut truth = ModelParams::zeros(spec.dim);
    for w in truth.weights.iter_mut().take(spec.dim) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *w = 2.0 * z / (spec.dim as f64).sqrt();
    }
    let labelled = |rng: &mut ChaCha8Rng, n: usize| -> SimDataset {
        let features = gaussian_points(rng, n, spec.dim, 1.0);
        let labels = features
            .iter()
            .map(|x| u8::from(rng.random::<f64>() < truth.predict(x)))
            .collect();
        SimDataset {
            features,
            labels,
            canary: vec![false; n],
        }
    };
    let ordinary = labelled(&mut rng, spec.n_train);
    let test = labelled(&mut rng, spec.n_test);
    let outliers = |rng: &mut ChaCha8Rng, flag: bool| -> SimDataset {
        let features = gaussian_points(rng, spec.canaries, spec.dim, spec.canary_scale);
        let labels = (0..spec.canaries)
            .map(|_| u8::from(rng.random::<bool>()))
            .collect();
        SimDataset {
            features,
            labels,
            canary: vec![flag; spec.canaries],
        }
    };
    let canaries = outliers(&mut rng, true);
    let references = outliers(&mut rng, false);
    let train = ordinary.concat(&canaries)?;
    Ok(SimWorld {
        train,
        test,
        canaries,
        references,
        true_weights: truth,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub world: WorldSpec,
    pub grid: Vec<Config>,
    pub target: PrivacyParams,
    pub accountant: AccountantKind,
    pub seeds: Vec<u64>,
    pub sampler: SamplerKind,
    pub optimizer: Optimizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibratedConfig {
    pub config: Config,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub calibrated: Vec<CalibratedConfig>,
    /// One per (config, seed), configs in grid order then seeds in order.
    pub records: Vec<PoolRecord>,
    /// Training traces aligned with `records`.
    pub traces: Vec<Vec<TraceRow>>,
}

/// Calibrates every grid config to the common target, trains each with
/// every seed, and records test loss and per-canary exposure.
pub fn run_pipeline(spec: &PipelineSpec) -> Result<PipelineOutput> {
    if spec.grid.is_empty() || spec.seeds.is_empty() {
        return Err(invalid("pipeline needs at least one config and one seed"));
    }
    let world = generate_world(&spec.world)?;
    let n = world.train.len() as u64;
    let calibrated: Vec<CalibratedConfig> = spec
        .grid
        .par_iter()
        .map(|&config| {
            let req =
                CalibrationRequest::new(n, config.b, config.steps, spec.target, spec.accountant);
            Ok(CalibratedConfig {
                config,
                sigma: calibrate_sigma(&req)?,
            })
        })
        .collect::<Result<_>>()?;

    let runs: Vec<(&CalibratedConfig, u64)> = calibrated
        .iter()
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let results: Vec<(PoolRecord, Vec<TraceRow>)> = runs
        .par_iter()
        .map(|&(cal, seed)| {
            let train_spec = TrainSpec {
                config: cal.config,
                sigma: cal.sigma,
                sampler: spec.sampler,
                optimizer: spec.optimizer,
                seed,
                no_clip: false,
            };
            let out = train(&train_spec, &world.train)?;
            let record = PoolRecord {
                b: cal.config.b,
                steps: cal.config.steps,
                eta: cal.config.eta,
                c: cal.config.clip,
                seed,
                utility: out.params.mean_loss(&world.test),
                scores: canary_exposure(&out.params, &world.canaries, &world.references)?,
            };
            Ok((record, out.trace))
        })
        .collect::<Result<_>>()?;
    let (records, traces) = results.into_iter().unzip();
    Ok(PipelineOutput {
        calibrated,
        records,
        traces,
    })
}
