//! Critic formulations on top of Φ_ω.
//!
//! With logits `z_y = ⟨S_y, Φ(x)⟩` and `p = softmax(z)`:
//!
//! * plain: `f = ⟨v, Φ(x)⟩`, no real/fake split;
//! * K+1: `f₊ = Σ_y p_y z_y`, `f₋ = ⟨v, Φ(x)⟩`, `f = f₊ − f₋`;
//! * K+1 entropy: `f₊ᴴ = Σ_y p_y log p_y = f₊ − log Z`, `f = f₊ᴴ − f₋`.
//!
//! Neither head has a bias.

use rand::Rng;

use crate::config::{ArchSpec, ConstraintTarget, CriticFormulation, NormalizationKind};
use crate::error::{Error, Result};
use crate::nn::network::FeatureExtractor;
use crate::nn::{ParamGroup, ParamId, ParamStore, Session, Var};
use crate::tensor::Tensor;

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("logits".into()))
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `p(y|x) = softmax(z)_y`, max-subtracted.
pub fn classifier_probs(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(Error::Invalid(format!("need K >= 2 logits, got {}", logits.len())));
    }
    check_finite(logits)?;
    let lse = log_sum_exp(logits);
    Ok(logits.iter().map(|z| (z - lse).exp()).collect())
}

/// `f₊ = Σ_y p_y z_y`.
pub fn real_critic(logits: &[f64]) -> Result<f64> {
    let p = classifier_probs(logits)?;
    Ok(p.iter().zip(logits).map(|(p, z)| p * z).sum())
}

/// `f₊ᴴ = Σ_y p_y log p_y`, the negative entropy of the classifier, via log-softmax.
pub fn entropy_real_critic(logits: &[f64]) -> Result<f64> {
    check_finite(logits)?;
    if logits.is_empty() {
        return Err(Error::Invalid("empty logits".into()));
    }
    let lse = log_sum_exp(logits);
    Ok(logits
        .iter()
        .map(|z| {
            let lp = z - lse;
            lp.exp() * lp
        })
        .sum())
}

/// Per-sample critic values, detached from any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticOutputs {
    /// `(N, K)`
    pub logits: Tensor,
    /// `(N, K)`
    pub probs: Tensor,
    /// `f₊` (or `f₊ᴴ`); `None` under the plain formulation.
    pub f_plus: Option<Vec<f64>>,
    /// `f₋`; `None` under the plain formulation.
    pub f_minus: Option<Vec<f64>>,
    pub f: Vec<f64>,
}

/// Graph handles for one critic evaluation. Per-sample scalars are `(N, 1)`.
#[derive(Clone, Copy, Debug)]
pub struct CriticVars {
    pub features: Var,
    pub logits: Var,
    pub log_probs: Var,
    pub f_plus: Option<Var>,
    pub f_minus: Option<Var>,
    pub f: Var,
}

impl CriticVars {
    /// The critic component a constraint acts on.
    pub fn target(&self, t: ConstraintTarget) -> Result<Var> {
        let missing = || Error::Invalid(format!("the plain critic has no {} component", t.symbol()));
        match t {
            ConstraintTarget::FullCritic => Ok(self.f),
            ConstraintTarget::RealPart => self.f_plus.ok_or_else(missing),
            ConstraintTarget::FakePart => self.f_minus.ok_or_else(missing),
        }
    }
}

/// Φ_ω with the class directions S `(m, K)` and the fake direction v `(m, 1)`.
#[derive(Clone, Debug)]
pub struct Critic {
    pub phi: FeatureExtractor,
    pub class_head: ParamId,
    pub fake_head: ParamId,
    pub formulation: CriticFormulation,
    pub num_classes: usize,
}

impl Critic {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        arch: &ArchSpec,
        norm: NormalizationKind,
        formulation: CriticFormulation,
        input_shape: &[usize],
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Invalid("critic needs at least one class".into()));
        }
        let phi = FeatureExtractor::new(store, rng, &arch.backbone, norm, input_shape, arch.leaky_slope)?;
        let m = phi.feature_dim();
        let class_head = store.add_normal("critic.S", ParamGroup::ClassHead, &[m, num_classes], rng);
        let fake_head = store.add_normal("critic.v", ParamGroup::FakeHead, &[m, 1], rng);
        Ok(Self {
            phi,
            class_head,
            fake_head,
            formulation,
            num_classes,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<CriticVars> {
        let features = self.phi.forward(s, x)?;
        let sv = s.param(self.class_head);
        let vv = s.param(self.fake_head);
        heads(s, features, sv, vv, self.formulation)
    }

    /// Evaluates the critic on `x` without training-mode side effects.
    pub fn outputs(&self, store: &ParamStore, x: &Tensor) -> Result<CriticOutputs> {
        let mut s = Session::new(store, false);
        let xv = s.input(x.clone());
        let vars = self.forward(&mut s, xv)?;
        Ok(detach(&s, &vars))
    }
}

/// Applies the heads to features `(N, m)` given S `(m, K)` and v `(m, 1)`.
pub fn heads(
    s: &mut Session,
    features: Var,
    class_head: Var,
    fake_head: Var,
    formulation: CriticFormulation,
) -> Result<CriticVars> {
    let m = s.graph.shape(features)[1];
    if s.graph.shape(class_head)[0] != m || s.graph.shape(fake_head) != [m, 1] {
        return Err(Error::Shape(format!(
            "features have dim {m}, S is {:?}, v is {:?}",
            s.graph.shape(class_head),
            s.graph.shape(fake_head)
        )));
    }
    let g = &mut s.graph;
    let logits = g.matmul(features, class_head)?;
    let log_probs = g.log_softmax_rows(logits)?;
    let f_minus = g.matmul(features, fake_head)?;
    let (f_plus, f) = match formulation {
        CriticFormulation::Plain => (None, f_minus),
        CriticFormulation::KPlusOne | CriticFormulation::KPlusOneEntropy => {
            let probs = g.exp(log_probs)?;
            let weighted = if formulation == CriticFormulation::KPlusOne {
                g.mul(probs, logits)?
            } else {
                g.mul(probs, log_probs)?
            };
            let fp = g.sum_rows(weighted)?;
            (Some(fp), g.sub(fp, f_minus)?)
        }
    };
    Ok(CriticVars {
        features,
        logits,
        log_probs,
        f_plus,
        f_minus: f_plus.map(|_| f_minus),
        f,
    })
}

pub fn detach(s: &Session, v: &CriticVars) -> CriticOutputs {
    let col = |var: Var| s.value(var).data().to_vec();
    CriticOutputs {
        logits: s.value(v.logits).clone(),
        probs: s.value(v.log_probs).map(f64::exp),
        f_plus: v.f_plus.map(col),
        f_minus: v.f_minus.map(col),
        f: col(v.f),
    }
}

/// Head outputs for given features, S and v (no backbone).
pub fn head_outputs(
    features: &Tensor,
    class_head: &Tensor,
    fake_head: &Tensor,
    formulation: CriticFormulation,
) -> Result<CriticOutputs> {
    let store = ParamStore::new();
    let mut s = Session::new(&store, false);
    let fv = s.input(features.clone());
    let sv = s.input(class_head.clone());
    let vv = s.input(fake_head.clone());
    let vars = heads(&mut s, fv, sv, vv, formulation)?;
    Ok(detach(&s, &vars))
}
