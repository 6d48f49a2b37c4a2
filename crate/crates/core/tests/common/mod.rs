//! Shared helpers for the integration tests: random tensors, a central
//! finite-difference gradient checker, scalar-loop oracles and the
//! gradient-check case list.

#![allow(dead_code, clippy::needless_range_loop)]

use ipm_ssl::config::{
    ArchSpec, BackboneSpec, ConstraintTarget, CriticFormulation, NormalizationKind, ParamScope, StatsScope,
};
use ipm_ssl::constraints::{
    constraint_objective_on_tape, fisher_on_tape, gp_on_tape, sobolev_on_tape, ActiveConstraints, ConstraintState,
    Estimates,
};
use ipm_ssl::critic::Critic;
use ipm_ssl::nn::layers::{Activation, Conv2d, Linear};
use ipm_ssl::nn::network::Generator;
use ipm_ssl::nn::norm::{BatchNorm, LayerNorm, NORM_EPS};
use ipm_ssl::nn::{ParamGroup, ParamId, ParamStore, Session, Var};
use ipm_ssl::tensor::Tensor;
use ipm_ssl::training::{critic_objective, cross_entropy_on_tape, generator_objective, mean_difference};
use ipm_ssl::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor for the elementwise relative error.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Replaces every parameter with N(0, scale²) noise (positive gains for norm
/// layers so they stay well conditioned).
pub fn randomize(store: &mut ParamStore, rng: &mut impl Rng, scale: f64) {
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = store.param(id);
        if p.group == ParamGroup::Buffer {
            continue;
        }
        let is_gain = p.name.ends_with(".gain");
        let mut t = randn(rng, p.value.shape(), scale);
        if is_gain {
            t = t.map(|v| 1.0 + 0.3 * v);
        }
        store.set(id, t).unwrap();
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

fn loss_value(store: &ParamStore, build: &dyn Fn(&mut Session) -> Result<Var>) -> f64 {
    let mut s = Session::new(store, true);
    let l = build(&mut s).unwrap();
    s.value(l).item()
}

/// Max elementwise relative error between autodiff and central differences
/// over every coordinate of `ids`.
pub fn fd_check(store: &ParamStore, ids: &[ParamId], build: &dyn Fn(&mut Session) -> Result<Var>) -> f64 {
    let mut s = Session::new(store, true);
    let loss = build(&mut s).unwrap();
    let analytic = s.param_grads(loss, ids).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for (id, grad) in ids.iter().zip(&analytic) {
        for j in 0..grad.numel() {
            let orig = probe.get(*id).data()[j];
            probe.get_mut(*id).data_mut()[j] = orig + FD_STEP;
            let up = loss_value(&probe, build);
            probe.get_mut(*id).data_mut()[j] = orig - FD_STEP;
            let down = loss_value(&probe, build);
            probe.get_mut(*id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grad.data()[j], numeric));
        }
    }
    worst
}

/// Scalar readout `Σ r ⊙ y` with a fixed random `r`, so every output
/// coordinate contributes.
pub fn readout(s: &mut Session, y: Var, seed: u64) -> Result<Var> {
    let shape = s.graph.shape(y).to_vec();
    let r = randn(&mut rng(seed), &shape, 1.0);
    let rv = s.input(r);
    let p = s.graph.mul(y, rv)?;
    s.graph.sum(p)
}

pub fn small_arch(hidden: Vec<usize>, feature_dim: usize) -> ArchSpec {
    ArchSpec {
        backbone: BackboneSpec::Mlp { hidden, feature_dim },
        leaky_slope: 0.2,
        noise_dim: 3,
        gen_hidden: vec![5],
    }
}

pub struct CriticFixture {
    pub store: ParamStore,
    pub critic: Critic,
    pub x: ParamId,
}

/// Critic with one hidden layer on `(n, d)` inputs; the inputs live in the
/// store so they can be differentiated like parameters.
pub fn critic_fixture(
    formulation: CriticFormulation,
    norm: NormalizationKind,
    n: usize,
    d: usize,
    k: usize,
    seed: u64,
) -> CriticFixture {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let critic = Critic::new(&mut store, &mut r, &small_arch(vec![6], 5), norm, formulation, &[d], k).unwrap();
    randomize(&mut store, &mut r, 0.5);
    let x = store.add("x", ParamGroup::Backbone, randn(&mut r, &[n, d], 1.0));
    CriticFixture { store, critic, x }
}

pub fn conv_critic_fixture(norm: NormalizationKind, seed: u64) -> CriticFixture {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let arch = ArchSpec {
        backbone: BackboneSpec::Conv {
            channels: vec![3],
            strides: vec![2],
            feature_dim: 4,
        },
        leaky_slope: 0.2,
        noise_dim: 3,
        gen_hidden: vec![4],
    };
    let critic = Critic::new(&mut store, &mut r, &arch, norm, CriticFormulation::KPlusOne, &[2, 4, 4], 3).unwrap();
    randomize(&mut store, &mut r, 0.5);
    let x = store.add("x", ParamGroup::Backbone, randn(&mut r, &[3, 2, 4, 4], 1.0));
    CriticFixture { store, critic, x }
}

fn all_ids(store: &ParamStore) -> Vec<ParamId> {
    store.ids_where(|g| g != ParamGroup::Buffer)
}

pub const LN_VARIANTS: [(StatsScope, ParamScope); 4] = [
    (StatsScope::Singleton, ParamScope::PerChannel),
    (StatsScope::Singleton, ParamScope::PerPixel),
    (StatsScope::PerChannel, ParamScope::PerChannel),
    (StatsScope::PerChannel, ParamScope::PerPixel),
];

fn state_with(fisher: bool, sobolev: bool, gp: bool) -> ConstraintState {
    ConstraintState {
        lambda_f: 0.7,
        lambda_s: -0.4,
        rho_f: 0.3,
        rho_s: 0.2,
        lambda_gp: 10.0,
        active: ActiveConstraints { fisher, sobolev, gp },
    }
}

/// Every gradient check as `(name, max relative error)`.
pub fn gradient_cases() -> Vec<(String, f64)> {
    let mut out = Vec::new();

    // Dense layer, including its input.
    {
        let mut r = rng(1);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, &mut r, "lin", ParamGroup::Backbone, 4, 3, true);
        randomize(&mut store, &mut r, 0.5);
        let x = store.add("x", ParamGroup::Backbone, randn(&mut r, &[5, 4], 1.0));
        let ids = all_ids(&store);
        let err = fd_check(&store, &ids, &|s| {
            let xv = s.param(x);
            let y = lin.forward(s, xv)?;
            readout(s, y, 11)
        });
        out.push(("linear".to_string(), err));
    }

    // Convolutions with and without stride.
    for (stride, padding) in [(1, 1), (2, 1), (1, 0)] {
        let mut r = rng(2);
        let mut store = ParamStore::new();
        let conv = Conv2d::new(&mut store, &mut r, "conv", ParamGroup::Backbone, 2, 3, 3, stride, padding);
        randomize(&mut store, &mut r, 0.5);
        let x = store.add("x", ParamGroup::Backbone, randn(&mut r, &[2, 2, 5, 5], 1.0));
        let ids = all_ids(&store);
        let err = fd_check(&store, &ids, &|s| {
            let xv = s.param(x);
            let y = conv.forward(s, xv)?;
            readout(s, y, 12)
        });
        out.push((format!("conv2d stride {stride} pad {padding}"), err));
    }

    // Activations.
    for act in [Activation::LeakyRelu(0.2), Activation::Relu, Activation::Tanh] {
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Backbone, randn(&mut rng(3), &[4, 5], 1.0));
        let err = fd_check(&store, &[x], &|s| {
            let xv = s.param(x);
            let y = act.forward(s, xv)?;
            readout(s, y, 13)
        });
        out.push((format!("activation {act:?}"), err));
    }

    // The four layer-norm variants on (N, C, H, W) activations.
    for (stats, params) in LN_VARIANTS {
        let mut r = rng(4);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", ParamGroup::Backbone, stats, params, 3, 2, 2);
        randomize(&mut store, &mut r, 0.5);
        let x = store.add("x", ParamGroup::Backbone, randn(&mut r, &[2, 3, 2, 2], 1.0));
        let ids = all_ids(&store);
        let err = fd_check(&store, &ids, &|s| {
            let xv = s.param(x);
            let y = ln.forward(s, xv)?;
            readout(s, y, 14)
        });
        out.push((format!("layer norm {stats:?} stats / {params:?} params"), err));
    }

    // Batch norm, dense and conv, training mode.
    for (shape, rank) in [(vec![5, 3], 2), (vec![3, 2, 2, 2], 4)] {
        let mut r = rng(5);
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", ParamGroup::Backbone, shape[1], rank);
        randomize(&mut store, &mut r, 0.5);
        let x = store.add("x", ParamGroup::Backbone, randn(&mut r, &shape, 1.0));
        let ids = all_ids(&store);
        let err = fd_check(&store, &ids, &|s| {
            let xv = s.param(x);
            let y = bn.forward(s, xv)?;
            readout(s, y, 15)
        });
        out.push((format!("batch norm rank {rank}"), err));
    }

    // Critic heads: every formulation and every target component.
    for formulation in CriticFormulation::ALL {
        let fx = critic_fixture(formulation, NormalizationKind::NoNorm, 4, 3, 3, 6);
        let ids = all_ids(&fx.store);
        for target in ConstraintTarget::ALL {
            if formulation == CriticFormulation::Plain && target != ConstraintTarget::FullCritic {
                continue;
            }
            let err = fd_check(&fx.store, &ids, &|s| {
                let xv = s.param(fx.x);
                let cv = fx.critic.forward(s, xv)?;
                let h = cv.target(target)?;
                readout(s, h, 16)
            });
            out.push((format!("critic {formulation} component {}", target.symbol()), err));
        }
    }

    // Objectives.
    {
        let fx = critic_fixture(CriticFormulation::KPlusOne, NormalizationKind::NoNorm, 6, 3, 3, 7);
        let ids = all_ids(&fx.store);
        let labels = [0, 2, 1, 1, 0, 2];
        let err = fd_check(&fx.store, &ids, &|s| {
            let xv = s.param(fx.x);
            let cv = fx.critic.forward(s, xv)?;
            cross_entropy_on_tape(&mut s.graph, cv.log_probs, &labels)
        });
        out.push(("cross-entropy objective".to_string(), err));

        let state = state_with(true, false, false);
        let err = fd_check(&fx.store, &ids, &|s| {
            let xv = s.param(fx.x);
            let cv = fx.critic.forward(s, xv)?;
            let ipm = mean_difference(&mut s.graph, cv.f, 3)?;
            let om = fisher_on_tape(&mut s.graph, cv.f)?;
            let est = Estimates {
                fisher: Some(om),
                ..Default::default()
            };
            let lc = constraint_objective_on_tape(&mut s.graph, &state, &est)?;
            let ce = cross_entropy_on_tape(&mut s.graph, cv.log_probs, &labels)?;
            critic_objective(&mut s.graph, ipm, lc, Some(ce), 1.5)
        });
        out.push(("critic objective L_D".to_string(), err));
    }
    {
        let mut r = rng(8);
        let mut store = ParamStore::new();
        let arch = small_arch(vec![5], 4);
        let critic = Critic::new(
            &mut store,
            &mut r,
            &arch,
            NormalizationKind::NoNorm,
            CriticFormulation::KPlusOne,
            &[3],
            3,
        )
        .unwrap();
        let gen = Generator::new(&mut store, &mut r, 3, &[5], &[3]);
        randomize(&mut store, &mut r, 0.5);
        let z = randn(&mut r, &[6, 3], 1.0);
        let ids = store.ids_where(|g| g == ParamGroup::Generator);
        let err = fd_check(&store, &ids, &|s| {
            let zv = s.input(z.clone());
            let fake = gen.forward(s, zv)?;
            let cv = critic.forward(s, fake)?;
            generator_objective(&mut s.graph, cv.f)
        });
        out.push(("generator objective L_G".to_string(), err));
    }

    // Constraint penalties (second-order for the gradient-norm ones).
    for (name, norm) in [
        ("no norm", NormalizationKind::NoNorm),
        (
            "layer norm",
            NormalizationKind::LayerNorm {
                stats: StatsScope::Singleton,
                params: ParamScope::PerChannel,
            },
        ),
    ] {
        for target in ConstraintTarget::ALL {
            let fx = critic_fixture(CriticFormulation::KPlusOne, norm, 4, 3, 3, 9);
            let ids = all_ids(&fx.store);
            let t = target.symbol();
            let err = fd_check(&fx.store, &ids, &|s| {
                let xv = s.param(fx.x);
                let cv = fx.critic.forward(s, xv)?;
                let h = cv.target(target)?;
                let om = fisher_on_tape(&mut s.graph, h)?;
                let est = Estimates {
                    fisher: Some(om),
                    ..Default::default()
                };
                Ok(constraint_objective_on_tape(&mut s.graph, &state_with(true, false, false), &est)?.unwrap())
            });
            out.push((format!("Fisher penalty on {t}, {name}"), err));
            let err = fd_check(&fx.store, &ids, &|s| {
                let xv = s.param(fx.x);
                let cv = fx.critic.forward(s, xv)?;
                let h = cv.target(target)?;
                let om = sobolev_on_tape(&mut s.graph, h, xv)?;
                let est = Estimates {
                    sobolev: Some(om),
                    ..Default::default()
                };
                Ok(constraint_objective_on_tape(&mut s.graph, &state_with(false, true, false), &est)?.unwrap())
            });
            out.push((format!("Sobolev penalty on {t}, {name}"), err));
            let err = fd_check(&fx.store, &ids, &|s| {
                let xv = s.param(fx.x);
                let cv = fx.critic.forward(s, xv)?;
                let h = cv.target(target)?;
                let om = gp_on_tape(&mut s.graph, h, xv)?;
                let est = Estimates {
                    gp: Some(om),
                    ..Default::default()
                };
                Ok(constraint_objective_on_tape(&mut s.graph, &state_with(false, false, true), &est)?.unwrap())
            });
            out.push((format!("gradient penalty on {t}, {name}"), err));
        }
    }
    {
        let fx = conv_critic_fixture(
            NormalizationKind::LayerNorm {
                stats: StatsScope::PerChannel,
                params: ParamScope::PerPixel,
            },
            10,
        );
        let ids = all_ids(&fx.store);
        let err = fd_check(&fx.store, &ids, &|s| {
            let xv = s.param(fx.x);
            let cv = fx.critic.forward(s, xv)?;
            let om = sobolev_on_tape(&mut s.graph, cv.f, xv)?;
            let est = Estimates {
                sobolev: Some(om),
                ..Default::default()
            };
            Ok(constraint_objective_on_tape(&mut s.graph, &state_with(false, true, false), &est)?.unwrap())
        });
        out.push(("Sobolev penalty, conv critic with layer norm".to_string(), err));
    }
    out
}

// ---------------------------------------------------------------------------
// Scalar-loop oracles. None of these touch the autodiff tape.

pub fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let mut m = z[0];
    for &v in z {
        if v > m {
            m = v;
        }
    }
    let mut total = 0.0;
    let mut e = vec![0.0; z.len()];
    for i in 0..z.len() {
        e[i] = (z[i] - m).exp();
        total += e[i];
    }
    for v in e.iter_mut() {
        *v /= total;
    }
    e
}

pub fn oracle_cross_entropy(z: &[f64], label: usize) -> f64 {
    let mut total = 0.0;
    for &v in z {
        total += v.exp();
    }
    total.ln() - z[label]
}

pub fn oracle_misclassification(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut wrong = 0;
    for (row, &y) in probs.iter().zip(labels) {
        let mut best = 0;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        if best != y {
            wrong += 1;
        }
    }
    wrong as f64 / labels.len() as f64
}

/// Layer norm by explicit loops over an `(N, C, H, W)` buffer.
pub fn oracle_layer_norm(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    per_channel_stats: bool,
    gain: &[f64],
    bias: &[f64],
    per_pixel_params: bool,
) -> Vec<f64> {
    let idx = |s: usize, ch: usize, i: usize, j: usize| ((s * c + ch) * h + i) * w + j;
    let mut y = vec![0.0; x.len()];
    for s in 0..n {
        let groups: Vec<Vec<usize>> = if per_channel_stats {
            (0..c).map(|ch| vec![ch]).collect()
        } else {
            vec![(0..c).collect()]
        };
        for chans in groups {
            let mut sum = 0.0;
            let mut count = 0.0;
            for &ch in &chans {
                for i in 0..h {
                    for j in 0..w {
                        sum += x[idx(s, ch, i, j)];
                        count += 1.0;
                    }
                }
            }
            let mean = sum / count;
            let mut ss = 0.0;
            for &ch in &chans {
                for i in 0..h {
                    for j in 0..w {
                        let d = x[idx(s, ch, i, j)] - mean;
                        ss += d * d;
                    }
                }
            }
            let var = ss / count;
            for &ch in &chans {
                for i in 0..h {
                    for j in 0..w {
                        let p = if per_pixel_params { i * w + j } else { ch };
                        let k = idx(s, ch, i, j);
                        y[k] = gain[p] * (x[k] - mean) / (var + NORM_EPS).sqrt() + bias[p];
                    }
                }
            }
        }
    }
    y
}

/// Training-mode batch norm by loops; `hw = 1` for dense inputs.
pub fn oracle_batch_norm(x: &[f64], n: usize, c: usize, hw: usize, gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for ch in 0..c {
        let mut sum = 0.0;
        for s in 0..n {
            for p in 0..hw {
                sum += x[(s * c + ch) * hw + p];
            }
        }
        let count = (n * hw) as f64;
        let mean = sum / count;
        let mut ss = 0.0;
        for s in 0..n {
            for p in 0..hw {
                let d = x[(s * c + ch) * hw + p] - mean;
                ss += d * d;
            }
        }
        let var = ss / count;
        for s in 0..n {
            for p in 0..hw {
                let k = (s * c + ch) * hw + p;
                y[k] = gain[ch] * (x[k] - mean) / (var + NORM_EPS).sqrt() + bias[ch];
            }
        }
    }
    y
}

/// Leaky-ReLU MLP critic evaluated with explicit loops, with the hand-derived
/// input gradient of a chosen component.
pub struct OracleCritic {
    /// `(weight (in, out) row-major, bias, in, out)` per layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub m: usize,
    pub k: usize,
    pub slope: f64,
}

pub struct OraclePoint {
    pub f_plus: f64,
    pub f_minus: f64,
    pub f: f64,
    /// `∇ₓ` of the requested component.
    pub grad: Vec<f64>,
}

impl OracleCritic {
    /// Reads the weights of a no-norm MLP critic (`critic.phi.{i}`, `critic.S`, `critic.v`).
    pub fn from_store(store: &ParamStore, depth: usize, slope: f64) -> Self {
        let mut layers = Vec::new();
        for i in 0..depth {
            let w = store.get(store.find(&format!("critic.phi.{i}.weight")).unwrap());
            let b = store.get(store.find(&format!("critic.phi.{i}.bias")).unwrap());
            layers.push((w.data().to_vec(), b.data().to_vec(), w.shape()[0], w.shape()[1]));
        }
        let s = store.get(store.find("critic.S").unwrap());
        let v = store.get(store.find("critic.v").unwrap());
        Self {
            layers,
            m: s.shape()[0],
            k: s.shape()[1],
            s: s.data().to_vec(),
            v: v.data().to_vec(),
            slope,
        }
    }

    pub fn eval(&self, x: &[f64], target: ConstraintTarget) -> OraclePoint {
        let mut acts = vec![x.to_vec()];
        let mut pre = Vec::new();
        for (w, b, din, dout) in &self.layers {
            let input = acts.last().unwrap();
            let mut a = vec![0.0; *dout];
            for o in 0..*dout {
                let mut t = b[o];
                for i in 0..*din {
                    t += input[i] * w[i * dout + o];
                }
                a[o] = t;
            }
            let out: Vec<f64> = a.iter().map(|&t| if t > 0.0 { t } else { self.slope * t }).collect();
            pre.push(a);
            acts.push(out);
        }
        let phi = acts.last().unwrap();
        let mut z = vec![0.0; self.k];
        for y in 0..self.k {
            for j in 0..self.m {
                z[y] += phi[j] * self.s[j * self.k + y];
            }
        }
        let p = oracle_softmax(&z);
        let mut f_plus = 0.0;
        for y in 0..self.k {
            f_plus += p[y] * z[y];
        }
        let mut f_minus = 0.0;
        for j in 0..self.m {
            f_minus += phi[j] * self.v[j];
        }
        // d f₊ / d z_y = p_y (1 + z_y − f₊)
        let mut dphi = vec![0.0; self.m];
        let (use_plus, use_minus) = match target {
            ConstraintTarget::FullCritic => (1.0, -1.0),
            ConstraintTarget::RealPart => (1.0, 0.0),
            ConstraintTarget::FakePart => (0.0, 1.0),
        };
        for j in 0..self.m {
            let mut t = 0.0;
            for y in 0..self.k {
                t += self.s[j * self.k + y] * p[y] * (1.0 + z[y] - f_plus);
            }
            dphi[j] = use_plus * t + use_minus * self.v[j];
        }
        let mut upstream = dphi;
        for (li, (w, _, din, dout)) in self.layers.iter().enumerate().rev() {
            let mut down = vec![0.0; *din];
            for o in 0..*dout {
                let slope = if pre[li][o] > 0.0 { 1.0 } else { self.slope };
                let d = upstream[o] * slope;
                for i in 0..*din {
                    down[i] += w[i * dout + o] * d;
                }
            }
            upstream = down;
        }
        OraclePoint {
            f_plus,
            f_minus,
            f: f_plus - f_minus,
            grad: upstream,
        }
    }
}

pub fn oracle_omega_fisher(h: &[f64]) -> f64 {
    let mut total = 0.0;
    for &v in h {
        total += v * v;
    }
    total / h.len() as f64
}

pub fn oracle_omega_sobolev(grads: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for g in grads {
        for &v in g {
            total += v * v;
        }
    }
    total / grads.len() as f64
}

pub fn oracle_omega_gp(grads: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for g in grads {
        let mut sq = 0.0;
        for &v in g {
            sq += v * v;
        }
        total += (1.0 - sq.sqrt()).powi(2);
    }
    total / grads.len() as f64
}

// ---------------------------------------------------------------------------
// Library versus oracle comparisons as `(name, max relative error, tolerance)`.

fn max_rel(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter().zip(want).map(|(g, w)| rel_err(*g, *w)).fold(0.0, f64::max)
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.shape()[0]).map(|i| t.row(i).to_vec()).collect()
}

pub fn oracle_cases() -> Vec<(String, f64, f64)> {
    use ipm_ssl::constraints::omega_fisher;
    use ipm_ssl::critic::classifier_probs;
    use ipm_ssl::eval::misclassification_rate;
    use ipm_ssl::nn::norm::{batch_norm_forward, layer_norm_forward, layer_norm_param_shape};
    use ipm_ssl::training::cross_entropy;

    let mut out = Vec::new();
    let (mut fisher, mut sobolev, mut gp) = (0.0f64, 0.0f64, 0.0f64);
    for seed in 0..4 {
        let fx = critic_fixture(CriticFormulation::KPlusOne, NormalizationKind::NoNorm, 8, 3, 4, 200 + seed);
        let oracle = OracleCritic::from_store(&fx.store, 2, 0.2);
        let x = fx.store.get(fx.x).clone();
        for target in ConstraintTarget::ALL {
            let pts: Vec<OraclePoint> = tensor_rows(&x).iter().map(|r| oracle.eval(r, target)).collect();
            let h: Vec<f64> = pts
                .iter()
                .map(|p| match target {
                    ConstraintTarget::FullCritic => p.f,
                    ConstraintTarget::RealPart => p.f_plus,
                    ConstraintTarget::FakePart => p.f_minus,
                })
                .collect();
            let grads: Vec<Vec<f64>> = pts.iter().map(|p| p.grad.clone()).collect();
            let mut s = Session::new(&fx.store, true);
            let xv = s.input(x.clone());
            let cv = fx.critic.forward(&mut s, xv).unwrap();
            let hv = cv.target(target).unwrap();
            let lib_h = s.value(hv).data().to_vec();
            let sob = sobolev_on_tape(&mut s.graph, hv, xv).unwrap();
            let pen = gp_on_tape(&mut s.graph, hv, xv).unwrap();
            fisher = fisher.max(rel_err(omega_fisher(&lib_h).unwrap(), oracle_omega_fisher(&h)));
            sobolev = sobolev.max(rel_err(s.value(sob).item(), oracle_omega_sobolev(&grads)));
            gp = gp.max(rel_err(s.value(pen).item(), oracle_omega_gp(&grads)));
        }
    }
    out.push(("Fisher estimate".to_string(), fisher, 1e-6));
    out.push(("Sobolev estimate".to_string(), sobolev, 1e-6));
    out.push(("gradient-penalty estimate".to_string(), gp, 1e-6));

    let mut r = rng(300);
    let (n, c, h, w) = (4, 3, 2, 3);
    let x = randn(&mut r, &[n, c, h, w], 2.0);
    for (stats, params) in LN_VARIANTS {
        let ps = layer_norm_param_shape(params, c, h, w);
        let gain = randn(&mut r, &ps, 1.0);
        let bias = randn(&mut r, &ps, 1.0);
        let got = layer_norm_forward(&x, stats, &gain, &bias, NORM_EPS).unwrap();
        let want = oracle_layer_norm(
            x.data(),
            (n, c, h, w),
            stats == StatsScope::PerChannel,
            gain.data(),
            bias.data(),
            params == ParamScope::PerPixel,
        );
        out.push((format!("layer norm {stats:?}/{params:?}"), max_rel(got.data(), &want), 1e-6));
    }
    let xb = randn(&mut r, &[8, 3], 1.5);
    let gain = randn(&mut r, &[1, 3], 1.0);
    let bias = randn(&mut r, &[1, 3], 1.0);
    let got = batch_norm_forward(&xb, &gain, &bias, NORM_EPS).unwrap();
    let want = oracle_batch_norm(xb.data(), 8, 3, 1, gain.data(), bias.data());
    out.push(("batch norm".to_string(), max_rel(got.data(), &want), 1e-6));

    let (mut sm, mut ce) = (0.0f64, 0.0f64);
    for _ in 0..8 {
        let z = randn(&mut r, &[6], 3.0).into_data();
        sm = sm.max(max_rel(&classifier_probs(&z).unwrap(), &oracle_softmax(&z)));
        for y in 0..6 {
            ce = ce.max(rel_err(cross_entropy(&z, y).unwrap(), oracle_cross_entropy(&z, y)));
        }
    }
    out.push(("softmax".to_string(), sm, 1e-12));
    out.push(("cross-entropy".to_string(), ce, 1e-6));

    let mut mis = 0.0f64;
    for _ in 0..10 {
        let probs = randn(&mut r, &[8, 4], 1.0);
        let labels: Vec<usize> = (0..8).map(|i| (i * 7 + 3) % 4).collect();
        let got = misclassification_rate(&probs, &labels).unwrap();
        mis = mis.max((got - oracle_misclassification(&tensor_rows(&probs), &labels)).abs());
    }
    out.push(("misclassification rate".to_string(), mis, 0.0));
    out
}
