//! Objectives, the Adam optimizer and the alternating training loop.
//!
//! The critic ascends
//! `L_D = mean_unl f − mean_fake f + L^C − λ_CE · mean_lab CE`
//! (implemented as descent on `−L_D`), the generator descends
//! `L_G = −mean_fake f`. Each sum is a mean over its own sub-batch, so λ_CE
//! does not depend on batch sizes. A generator step follows every
//! `n_critic`-th critic step, counted across epochs.

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ConstraintKind, ExperimentConfig, HyperParams, IpmKind};
use crate::constraints::{
    alm_update, constraint_objective_on_tape, fisher_on_tape, gp_on_tape, omega_fisher,
    sample_gp_interpolates, sobolev_on_tape, ConstraintState, Estimates, MuBatch,
};
use crate::critic::Critic;
use crate::data::{self, epoch_batches, noise_sampler, Cycler, Dataset, LabeledSplit};
use crate::error::{Error, Result};
use crate::eval::{misclassification_rate, MetricsRecord};
use crate::nn::checkpoint;
use crate::nn::network::Generator;
use crate::nn::{Graph, ParamGroup, ParamId, ParamStore, Session, Var};
use crate::tensor::Tensor;

/// Rows per forward pass when evaluating a whole split.
const EVAL_CHUNK: usize = 512;
/// Points per half of μ for the end-of-run constraint probe.
const PROBE_HALF: usize = 256;

/// `−log softmax(z)_label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    if !logits.iter().all(|z| z.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let m = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    Ok(lse - logits[label])
}

/// Mean cross-entropy from `(N, K)` log-probabilities.
pub fn cross_entropy_on_tape(g: &mut Graph, log_probs: Var, labels: &[usize]) -> Result<Var> {
    let shape = g.shape(log_probs).to_vec();
    let (n, k) = (shape[0], shape[1]);
    if n == 0 || labels.len() != n {
        return Err(Error::Invalid(format!("{} labels for {n} rows", labels.len())));
    }
    let mut pick = vec![0.0; n * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Invalid(format!("label {y} out of range for {k} classes")));
        }
        pick[i * k + y] = -1.0 / n as f64;
    }
    let w = g.leaf(Tensor::new(vec![n, k], pick)?);
    let picked = g.mul(log_probs, w)?;
    g.sum(picked)
}

/// `mean(f[..n_real]) − mean(f[n_real..])` for a `(N, 1)` column.
pub fn mean_difference(g: &mut Graph, f: Var, n_real: usize) -> Result<Var> {
    let n = g.shape(f)[0];
    if n_real == 0 || n_real >= n {
        return Err(Error::Invalid("both halves of the critic batch must be nonempty".into()));
    }
    let n_fake = n - n_real;
    let w: Vec<f64> = (0..n)
        .map(|i| if i < n_real { 1.0 / n_real as f64 } else { -1.0 / n_fake as f64 })
        .collect();
    let w = g.leaf(Tensor::new(vec![n, 1], w)?);
    let prod = g.mul(f, w)?;
    g.sum(prod)
}

/// `L_D = ipm + L^C − λ_CE · CE`; absent terms count as zero.
pub fn critic_objective(
    g: &mut Graph,
    ipm: Var,
    constraint_term: Option<Var>,
    ce: Option<Var>,
    lambda_ce: f64,
) -> Result<Var> {
    let mut total = ipm;
    if let Some(c) = constraint_term {
        total = g.add(total, c)?;
    }
    if lambda_ce != 0.0 {
        let ce = ce.ok_or_else(|| Error::Invalid("λ_CE > 0 but no labeled batch".into()))?;
        let weighted = g.scale(ce, -lambda_ce)?;
        total = g.add(total, weighted)?;
    }
    Ok(total)
}

/// `L_G = −mean f` over the fake batch.
pub fn generator_objective(g: &mut Graph, f_fake: Var) -> Result<Var> {
    if g.shape(f_fake)[0] == 0 {
        return Err(Error::Invalid("empty noise batch".into()));
    }
    let m = g.mean(f_fake)?;
    g.neg(m)
}

/// L2 coefficient for a parameter group: `wd_backbone` on Φ_ω and S,
/// `wd_v` on v, none on the generator.
pub fn weight_decay(group: ParamGroup, hyper: &HyperParams) -> f64 {
    match group {
        ParamGroup::Backbone | ParamGroup::ClassHead => hyper.wd_backbone,
        ParamGroup::FakeHead => hyper.wd_v,
        ParamGroup::Generator | ParamGroup::Buffer => 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn critic(h: &HyperParams) -> Self {
        Self {
            lr: h.lr_critic,
            beta1: h.adam_beta1,
            beta2: h.adam_beta2,
            eps: h.adam_eps,
        }
    }

    pub fn generator(h: &HyperParams) -> Self {
        Self {
            lr: h.lr_gen,
            ..Self::critic(h)
        }
    }
}

/// Adam with bias correction and coupled L2 decay (`decay · θ` is added to
/// the gradient before the moment updates).
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    ids: Vec<ParamId>,
    decay: Vec<f64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, cfg: AdamConfig, decay: impl Fn(ParamGroup) -> f64) -> Self {
        let zeros = |id: &ParamId| Tensor::zeros(store.get(*id).shape());
        Self {
            cfg,
            decay: ids.iter().map(|&id| decay(store.param(id).group)).collect(),
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            t: 0,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One descent step along `grads`, given in the order of [`Adam::ids`].
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(Error::Invalid(format!("{} gradients for {} params", grads.len(), self.ids.len())));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, &id) in self.ids.iter().enumerate() {
            let wd = self.decay[i];
            let theta = store.get_mut(id);
            if theta.shape() != grads[i].shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for param {:?}",
                    grads[i].shape(),
                    theta.shape()
                )));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (p, &g)) in theta.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = g + wd * *p;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                *p -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Critic, optional generator and the store holding both.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub critic: Critic,
    pub generator: Option<Generator>,
}

impl Model {
    /// Builds the critic (and the generator unless `cfg.ipm` is `None`) for a
    /// dataset with `num_classes` classes and samples of `sample_shape`.
    pub fn build(cfg: &ExperimentConfig, num_classes: usize, sample_shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let critic = Critic::new(
            &mut store,
            rng,
            &cfg.arch,
            cfg.norm,
            cfg.formulation,
            sample_shape,
            num_classes,
        )?;
        let generator = cfg
            .ipm
            .map(|_| Generator::new(&mut store, rng, cfg.arch.noise_dim, &cfg.arch.gen_hidden, sample_shape));
        Ok(Self {
            store,
            critic,
            generator,
        })
    }

    pub fn critic_ids(&self) -> Vec<ParamId> {
        self.store.ids_where(ParamGroup::is_critic)
    }

    pub fn generator_ids(&self) -> Vec<ParamId> {
        self.store.ids_where(|g| g == ParamGroup::Generator)
    }

    fn generator(&self) -> Result<&Generator> {
        self.generator
            .as_ref()
            .ok_or_else(|| Error::Invalid("the supervised model has no generator".into()))
    }

    /// Samples `g(z)`. In training mode the generator's batch-norm running
    /// statistics are updated.
    pub fn generate(&mut self, noise: &Tensor, train: bool) -> Result<Tensor> {
        let gen = self.generator()?;
        let mut s = Session::new(&self.store, train);
        let z = s.input(noise.clone());
        let x = gen.forward(&mut s, z)?;
        let out = s.value(x).clone();
        let updates = s.finish();
        apply_updates_with_prefix(&mut self.store, updates, "gen.");
        Ok(out)
    }

    /// Class probabilities `(N, K)` in evaluation mode.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.critic.outputs(&self.store, x)?.probs)
    }

    /// Misclassification rate on `idx`; `None` for an empty index set.
    pub fn error_on(&self, ds: &Dataset, idx: &[usize]) -> Result<Option<f64>> {
        if idx.is_empty() {
            return Ok(None);
        }
        let mut wrong = 0.0;
        for chunk in idx.chunks(EVAL_CHUNK) {
            let (x, y) = ds.gather(chunk);
            wrong += misclassification_rate(&self.predict(&x)?, &y)? * chunk.len() as f64;
        }
        Ok(Some(wrong / idx.len() as f64))
    }

    /// Mean cross-entropy on `idx` in evaluation mode.
    pub fn cross_entropy_on(&self, ds: &Dataset, idx: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for chunk in idx.chunks(EVAL_CHUNK) {
            let (x, y) = ds.gather(chunk);
            let logits = self.critic.outputs(&self.store, &x)?.logits;
            for (i, &label) in y.iter().enumerate() {
                total += cross_entropy(logits.row(i), label)?;
            }
        }
        Ok(total / idx.len().max(1) as f64)
    }
}

fn apply_updates_with_prefix(store: &mut ParamStore, updates: Vec<(ParamId, Tensor)>, prefix: &str) {
    for (id, t) in updates {
        if store.param(id).name.starts_with(prefix) {
            *store.get_mut(id) = t;
        }
    }
}

/// Everything that evolves during training. The rng drives batch order,
/// noise draws and interpolation weights, so a seed fixes the whole run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub critic_opt: Adam,
    pub gen_opt: Adam,
    pub constraints: ConstraintState,
    pub critic_steps: usize,
    pub gen_steps: usize,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &ExperimentConfig, num_classes: usize, sample_shape: &[usize]) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Model::build(cfg, num_classes, sample_shape, &mut rng)?;
        let h = &cfg.hyper;
        let critic_opt = Adam::new(&model.store, model.critic_ids(), AdamConfig::critic(h), |g| weight_decay(g, h));
        let gen_opt = Adam::new(&model.store, model.generator_ids(), AdamConfig::generator(h), |g| weight_decay(g, h));
        Ok(Self {
            constraints: ConstraintState::new(h, &cfg.placements),
            model,
            critic_opt,
            gen_opt,
            critic_steps: 0,
            gen_steps: 0,
            epoch: 0,
            rng,
        })
    }
}

/// Inputs of one critic step.
#[derive(Clone, Debug)]
pub struct CriticBatch {
    pub unlabeled: Tensor,
    pub labeled: Tensor,
    pub labels: Vec<usize>,
    /// One noise row per unlabeled row, so μ has equal halves.
    pub noise: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CriticStepReport {
    /// `L_D` before the update.
    pub objective: f64,
    pub ipm: f64,
    pub ce: Option<f64>,
    pub omega: Estimates<f64>,
    /// Multipliers after the ALM update.
    pub lambda_f: f64,
    pub lambda_s: f64,
}

fn diverged(step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Diverged {
            step,
            reason: format!("non-finite value in {what}"),
        },
        other => other,
    }
}

/// One Adam ascent step on `L_D` over the critic, then the multiplier
/// updates, then weight clipping for the clipped WGAN.
pub fn critic_step(state: &mut TrainState, batch: &CriticBatch, cfg: &ExperimentConfig) -> Result<CriticStepReport> {
    let step = state.critic_steps + 1;
    critic_step_inner(state, batch, cfg).map_err(|e| diverged(step, e))
}

fn critic_step_inner(state: &mut TrainState, batch: &CriticBatch, cfg: &ExperimentConfig) -> Result<CriticStepReport> {
    let h = &cfg.hyper;
    let n = batch.unlabeled.shape()[0];
    if n == 0 || batch.noise.shape()[0] == 0 {
        return Err(Error::Invalid("empty unlabeled or noise sub-batch".into()));
    }
    if batch.labels.is_empty() && h.lambda_ce > 0.0 {
        return Err(Error::Invalid("empty labeled sub-batch with λ_CE > 0".into()));
    }
    let fake = state.model.generate(&batch.noise, true)?;
    let mu = MuBatch::new(&batch.unlabeled, &fake)?;

    let critic = &state.model.critic;
    let ids = state.critic_opt.ids().to_vec();
    let mut s = Session::new(&state.model.store, true);
    let x = s.input(mu.points().clone());
    let cv = critic.forward(&mut s, x)?;
    let ipm = mean_difference(&mut s.graph, cv.f, n)?;

    let mut est = Estimates::<Var>::default();
    for p in &cfg.placements {
        match p.constraint {
            ConstraintKind::Fisher => {
                let hv = cv.target(p.target)?;
                est.fisher = Some(fisher_on_tape(&mut s.graph, hv)?);
            }
            ConstraintKind::Sobolev => {
                let hv = cv.target(p.target)?;
                est.sobolev = Some(sobolev_on_tape(&mut s.graph, hv, x)?);
            }
            ConstraintKind::Gp => {
                let xi = sample_gp_interpolates(&batch.unlabeled, &fake, &mut state.rng)?;
                let xv = s.input(xi);
                let cvi = critic.forward(&mut s, xv)?;
                let hv = cvi.target(p.target)?;
                est.gp = Some(gp_on_tape(&mut s.graph, hv, xv)?);
            }
        }
    }
    let lc = constraint_objective_on_tape(&mut s.graph, &state.constraints, &est)?;

    let ce = if batch.labels.is_empty() {
        None
    } else {
        let xl = s.input(batch.labeled.clone());
        let cvl = critic.forward(&mut s, xl)?;
        Some(cross_entropy_on_tape(&mut s.graph, cvl.log_probs, &batch.labels)?)
    };
    let ld = critic_objective(&mut s.graph, ipm, lc, ce, h.lambda_ce)?;
    let loss = s.graph.neg(ld)?;
    let grads = s.param_grads(loss, &ids)?;

    let value = |v: Var| s.value(v).item();
    let omega = Estimates {
        fisher: est.fisher.map(value),
        sobolev: est.sobolev.map(value),
        gp: est.gp.map(value),
    };
    let objective = value(ld);
    let ipm_value = value(ipm);
    let ce_value = ce.map(value);
    if !objective.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("critic objective".into()));
    }
    let updates = s.finish();

    let store = &mut state.model.store;
    state.critic_opt.step(store, &grads)?;
    apply_updates_with_prefix(store, updates, "critic.");
    if let Some(o) = omega.fisher {
        state.constraints = alm_update(&state.constraints, o, ConstraintKind::Fisher)?;
    }
    if let Some(o) = omega.sobolev {
        state.constraints = alm_update(&state.constraints, o, ConstraintKind::Sobolev)?;
    }
    if cfg.ipm == Some(IpmKind::WganClip) {
        let c = h.clip_c;
        for &id in &ids {
            for p in store.get_mut(id).data_mut() {
                *p = p.clamp(-c, c);
            }
        }
    }
    state.critic_steps += 1;
    Ok(CriticStepReport {
        objective,
        ipm: ipm_value,
        ce: ce_value,
        omega,
        lambda_f: state.constraints.lambda_f,
        lambda_s: state.constraints.lambda_s,
    })
}

/// One Adam descent step on `L_G` over the generator; returns `L_G`.
pub fn generator_step(state: &mut TrainState, noise: &Tensor) -> Result<f64> {
    let step = state.critic_steps;
    generator_step_inner(state, noise).map_err(|e| diverged(step, e))
}

fn generator_step_inner(state: &mut TrainState, noise: &Tensor) -> Result<f64> {
    let model = &state.model;
    let gen = model.generator()?;
    let ids = state.gen_opt.ids().to_vec();
    let mut s = Session::new(&model.store, true);
    let z = s.input(noise.clone());
    let fake = gen.forward(&mut s, z)?;
    let cv = model.critic.forward(&mut s, fake)?;
    let lg = generator_objective(&mut s.graph, cv.f)?;
    let grads = s.param_grads(lg, &ids)?;
    let value = s.value(lg).item();
    if !value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("generator objective".into()));
    }
    let updates = s.finish();
    let store = &mut state.model.store;
    state.gen_opt.step(store, &grads)?;
    apply_updates_with_prefix(store, updates, "gen.");
    state.gen_steps += 1;
    Ok(value)
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Written whenever the validation error improves.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_lab_error: Option<f64>,
    pub val_error: Option<f64>,
    pub test_error: Option<f64>,
}

/// Lowest validation error seen (earliest epoch on ties).
#[derive(Clone, Debug, PartialEq)]
pub struct BestEpoch {
    pub epoch: usize,
    pub val_error: f64,
    pub test_error: Option<f64>,
}

/// Diagnostics of the final parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FinalProbe {
    /// Mean CE over the whole labeled set.
    pub train_ce: f64,
    /// `Ω̂_F` of `f`, `f₊` and `f₋` on a fresh μ batch.
    pub omega_f: f64,
    pub omega_f_plus: Option<f64>,
    pub omega_f_minus: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub state: TrainState,
    pub metrics: Vec<MetricsRecord>,
    pub epochs: Vec<EpochSummary>,
    pub best: Option<BestEpoch>,
    pub probe: Option<FinalProbe>,
    pub split: LabeledSplit,
}

#[derive(Default)]
struct Pending {
    count: usize,
    objective: f64,
    ce: f64,
    fisher: f64,
    sobolev: f64,
    gp: f64,
}

impl Pending {
    fn add(&mut self, r: &CriticStepReport) {
        self.count += 1;
        self.objective += r.objective;
        self.ce += r.ce.unwrap_or(0.0);
        self.fisher += r.omega.fisher.unwrap_or(0.0);
        self.sobolev += r.omega.sobolev.unwrap_or(0.0);
        self.gp += r.omega.gp.unwrap_or(0.0);
    }

    fn mean(&self, v: f64) -> f64 {
        v / self.count.max(1) as f64
    }
}

/// Loads the configured dataset and trains on it.
pub fn train(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<TrainOutput> {
    let ds = data::load_dataset(&cfg.dataset)?;
    train_on(cfg, &ds, opts)
}

/// Tracks per-epoch evaluation and best-validation selection.
struct Selector {
    epochs: Vec<EpochSummary>,
    best: Option<BestEpoch>,
}

impl Selector {
    fn observe(&mut self, model: &Model, ds: &Dataset, labeled: &[usize], epoch: usize, opts: &TrainOptions) -> Result<EpochSummary> {
        let summary = EpochSummary {
            epoch,
            train_lab_error: model.error_on(ds, labeled)?,
            val_error: model.error_on(ds, &ds.val)?,
            test_error: model.error_on(ds, &ds.test)?,
        };
        if let Some(v) = summary.val_error {
            if self.best.as_ref().is_none_or(|b| v < b.val_error) {
                self.best = Some(BestEpoch {
                    epoch,
                    val_error: v,
                    test_error: summary.test_error,
                });
                if let Some(path) = &opts.checkpoint {
                    checkpoint::save(&model.store, path)?;
                }
            }
        }
        self.epochs.push(summary.clone());
        Ok(summary)
    }
}

/// Semi-supervised GAN training on an already loaded dataset.
pub fn train_on(cfg: &ExperimentConfig, ds: &Dataset, opts: &TrainOptions) -> Result<TrainOutput> {
    if cfg.ipm.is_none() {
        return Err(Error::Invalid("no IPM configured; use the supervised baseline".into()));
    }
    let h = &cfg.hyper;
    let split = data::stratified_label_split(ds, cfg.n_labeled, cfg.seed)?;
    let mut state = TrainState::new(cfg, ds.num_classes, ds.sample_shape())?;
    let mut metrics = Vec::new();
    let mut sel = Selector {
        epochs: Vec::new(),
        best: None,
    };
    if h.epochs == 0 {
        return Ok(TrainOutput {
            state,
            metrics,
            epochs: Vec::new(),
            best: None,
            probe: None,
            split,
        });
    }
    if split.unlabeled.is_empty() {
        return Err(Error::Invalid("every training sample is labeled; nothing to train the GAN on".into()));
    }
    let lab_bs = h.batch_size.min(cfg.n_labeled);
    let n_c = h.n_critic.max(1);
    let noise_dim = cfg.arch.noise_dim;
    let mut lab_cycle = Cycler::new(split.labeled.clone());
    let mut pending = Pending::default();
    let active = state.constraints.active;

    for epoch in 1..=h.epochs {
        state.epoch = epoch;
        for ub in epoch_batches(&split.unlabeled, h.batch_size, &mut state.rng) {
            let lab_idx = lab_cycle.next_batch(lab_bs, &mut state.rng);
            let (labeled, labels) = ds.gather(&lab_idx);
            let noise = noise_sampler(noise_dim, ub.len(), &mut state.rng);
            let batch = CriticBatch {
                unlabeled: ds.samples.select_rows(&ub),
                labeled,
                labels,
                noise,
            };
            let report = critic_step(&mut state, &batch, cfg)?;
            pending.add(&report);
            if state.critic_steps % n_c == 0 {
                let noise = noise_sampler(noise_dim, h.batch_size, &mut state.rng);
                let gen_loss = generator_step(&mut state, &noise)?;
                let p = std::mem::take(&mut pending);
                metrics.push(MetricsRecord {
                    step: state.gen_steps,
                    epoch,
                    critic_loss: p.mean(p.objective),
                    gen_loss: Some(gen_loss),
                    omega_f_hat: active.fisher.then(|| p.mean(p.fisher)),
                    omega_s_hat: active.sobolev.then(|| p.mean(p.sobolev)),
                    omega_gp_hat: active.gp.then(|| p.mean(p.gp)),
                    lambda_f: active.fisher.then_some(state.constraints.lambda_f),
                    lambda_s: active.sobolev.then_some(state.constraints.lambda_s),
                    ce_loss: p.mean(p.ce),
                    train_lab_error: None,
                    val_error: None,
                    test_error: None,
                });
            }
        }
        let summary = sel.observe(&state.model, ds, &split.labeled, epoch, opts)?;
        if let Some(last) = metrics.last_mut().filter(|m| m.epoch == epoch) {
            last.train_lab_error = summary.train_lab_error;
            last.val_error = summary.val_error;
            last.test_error = summary.test_error;
        }
    }
    let probe = final_probe(&mut state, ds, &split)?;
    Ok(TrainOutput {
        state,
        metrics,
        epochs: sel.epochs,
        best: sel.best,
        probe: Some(probe),
        split,
    })
}

fn final_probe(state: &mut TrainState, ds: &Dataset, split: &LabeledSplit) -> Result<FinalProbe> {
    let pool = if split.unlabeled.is_empty() { &ds.train } else { &split.unlabeled };
    let real = ds.samples.select_rows(&pool[..pool.len().min(PROBE_HALF)]);
    let n = real.shape()[0];
    let noise = noise_sampler(state.model.generator()?.noise_dim(), n, &mut state.rng);
    let fake = state.model.generate(&noise, false)?;
    let mu = MuBatch::new(&real, &fake)?;
    let out = state.model.critic.outputs(&state.model.store, mu.points())?;
    Ok(FinalProbe {
        train_ce: state.model.cross_entropy_on(ds, &split.labeled)?,
        omega_f: omega_fisher(&out.f)?,
        omega_f_plus: out.f_plus.as_deref().map(omega_fisher).transpose()?,
        omega_f_minus: out.f_minus.as_deref().map(omega_fisher).transpose()?,
    })
}

/// Result of the supervised baseline.
#[derive(Clone, Debug)]
pub struct BaselineOutput {
    pub model: Model,
    pub metrics: Vec<MetricsRecord>,
    pub epochs: Vec<EpochSummary>,
    pub best: Option<BestEpoch>,
    pub train_ce: Option<f64>,
    pub split: LabeledSplit,
}

pub fn supervised_baseline(cfg: &ExperimentConfig, opts: &TrainOptions) -> Result<BaselineOutput> {
    let ds = data::load_dataset(&cfg.dataset)?;
    supervised_on(cfg, &ds, opts)
}

/// Trains the critic backbone and class head with cross-entropy only, using
/// the critic's optimizer settings. An epoch takes as many steps as the
/// semi-supervised run would take critic steps, so both see the same number
/// of labeled batches.
pub fn supervised_on(cfg: &ExperimentConfig, ds: &Dataset, opts: &TrainOptions) -> Result<BaselineOutput> {
    let h = &cfg.hyper;
    let mut cfg = cfg.clone();
    cfg.ipm = None;
    cfg.placements.clear();
    let split = data::stratified_label_split(ds, cfg.n_labeled, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::build(&cfg, ds.num_classes, ds.sample_shape(), &mut rng)?;
    let ids = model.store.ids_where(|g| matches!(g, ParamGroup::Backbone | ParamGroup::ClassHead));
    let mut opt = Adam::new(&model.store, ids.clone(), AdamConfig::critic(h), |g| weight_decay(g, h));
    let lab_bs = h.batch_size.min(cfg.n_labeled);
    let steps_per_epoch = (split.unlabeled.len() / h.batch_size.max(1)).max(1);
    let mut cycle = Cycler::new(split.labeled.clone());
    let mut metrics = Vec::new();
    let mut sel = Selector {
        epochs: Vec::new(),
        best: None,
    };
    let mut step = 0;
    for epoch in 1..=h.epochs {
        for _ in 0..steps_per_epoch {
            step += 1;
            let idx = cycle.next_batch(lab_bs, &mut rng);
            let (x, y) = ds.gather(&idx);
            let mut s = Session::new(&model.store, true);
            let xv = s.input(x);
            let cv = model.critic.forward(&mut s, xv)?;
            let ce = cross_entropy_on_tape(&mut s.graph, cv.log_probs, &y)?;
            let grads = s.param_grads(ce, &ids).map_err(|e| diverged(step, e))?;
            let ce_value = s.value(ce).item();
            if !ce_value.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged(step, Error::NonFinite("cross-entropy".into())));
            }
            let updates = s.finish();
            opt.step(&mut model.store, &grads)?;
            apply_updates_with_prefix(&mut model.store, updates, "critic.");
            metrics.push(MetricsRecord {
                step,
                epoch,
                critic_loss: ce_value,
                gen_loss: None,
                omega_f_hat: None,
                omega_s_hat: None,
                omega_gp_hat: None,
                lambda_f: None,
                lambda_s: None,
                ce_loss: ce_value,
                train_lab_error: None,
                val_error: None,
                test_error: None,
            });
        }
        let summary = sel.observe(&model, ds, &split.labeled, epoch, opts)?;
        if let Some(last) = metrics.last_mut() {
            last.train_lab_error = summary.train_lab_error;
            last.val_error = summary.val_error;
            last.test_error = summary.test_error;
        }
    }
    let train_ce = if h.epochs > 0 {
        Some(model.cross_entropy_on(ds, &split.labeled)?)
    } else {
        None
    };
    Ok(BaselineOutput {
        model,
        metrics,
        epochs: sel.epochs,
        best: sel.best,
        train_ce,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_examples() {
        assert!((cross_entropy(&[0.0; 10], 3).unwrap() - 10f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[800.0, 0.0], 0).unwrap().abs() < 1e-300);
        let e = std::f64::consts::E;
        let want = -(e / (e + 1.0)).ln();
        assert!((cross_entropy(&[1.0, 0.0], 0).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.313262).abs() < 1e-6);
        assert!(cross_entropy(&[1.0, 0.0], 2).is_err());
    }

    #[test]
    fn objective_arithmetic() {
        let mut g = Graph::new();
        let f = g.leaf(Tensor::new(vec![4, 1], vec![1.0, 1.0, -1.0, -1.0]).unwrap());
        let ipm = mean_difference(&mut g, f, 2).unwrap();
        let ld = critic_objective(&mut g, ipm, None, None, 0.0).unwrap();
        assert_eq!(g.value(ld).item(), 2.0);
        let ce = g.leaf(Tensor::scalar(2.5));
        let ld = critic_objective(&mut g, ipm, None, Some(ce), 1.5).unwrap();
        assert!((g.value(ld).item() - (2.0 - 3.75)).abs() < 1e-12);
        assert!(critic_objective(&mut g, ipm, None, None, 1.5).is_err());

        let fake = g.leaf(Tensor::full(&[3, 1], 3.0));
        let lg = generator_objective(&mut g, fake).unwrap();
        assert_eq!(g.value(lg).item(), -3.0);
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamGroup::Backbone, Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut opt = Adam::new(&store, vec![id], cfg, |_| 0.0);
        // Gradient of ½‖w‖² is w; the first bias-corrected step is lr·g/(|g|+ε).
        let g = store.get(id).clone();
        opt.step(&mut store, &[g]).unwrap();
        let want = [1.0 - 0.1 * 1.0 / (1.0 + 1e-8), -2.0 + 0.1 * 2.0 / (2.0 + 1e-8)];
        for (a, b) in store.get(id).data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_groups() {
        let h = crate::config::default_hyperparams(IpmKind::Fisher, crate::config::CriticFormulation::KPlusOne);
        assert_eq!(weight_decay(ParamGroup::Backbone, &h), 1e-6);
        assert_eq!(weight_decay(ParamGroup::ClassHead, &h), 1e-6);
        assert_eq!(weight_decay(ParamGroup::FakeHead, &h), 1e-3);
        assert_eq!(weight_decay(ParamGroup::Generator, &h), 0.0);
    }
}
