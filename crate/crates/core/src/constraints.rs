//! Constraint estimators and augmented-Lagrangian multiplier dynamics.
//!
//! For the constrained critic component `h` (one of f, f₊, f₋):
//!
//! * Fisher: `Ω̂_F = mean over μ of h(x̃)²`, held at 1;
//! * Sobolev: `Ω̂_S = mean over μ of ‖∇ₓ h(x̃)‖²`, held at 1;
//! * gradient penalty: `Ω̂_GP = mean over interpolates of (1 − ‖∇ₓ h(x̃)‖)²`.
//!
//! μ is the half/half union of a real batch and an equally sized fake batch.
//! Fisher and Sobolev are enforced through
//! `λ(1 − Ω̂) − (ρ/2)(1 − Ω̂)²` added to the maximized critic objective, with
//! `λ ← λ + ρ(Ω̂ − 1)` after every critic step. The penalty enters as
//! `−λ_GP · Ω̂_GP` with a fixed weight.

use rand::Rng;

use crate::config::{ConstraintKind, HyperParams, Placement};
use crate::error::{Error, Result};
use crate::nn::{Graph, Var};
use crate::tensor::Tensor;

/// Keeps `sqrt` differentiable at a zero gradient.
const NORM_FLOOR: f64 = 1e-24;

/// The mixture μ = (P+Q)/2 realized as real rows followed by fake rows.
#[derive(Clone, Debug)]
pub struct MuBatch {
    points: Tensor,
    n_real: usize,
}

impl MuBatch {
    pub fn new(real: &Tensor, fake: &Tensor) -> Result<Self> {
        if real.shape()[0] != fake.shape()[0] {
            return Err(Error::Shape(format!(
                "μ needs equal real/fake counts, got {} and {}",
                real.shape()[0],
                fake.shape()[0]
            )));
        }
        if real.shape()[0] == 0 {
            return Err(Error::Invalid("empty μ batch".into()));
        }
        Ok(Self {
            points: Tensor::concat_rows(&[real, fake])?,
            n_real: real.shape()[0],
        })
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_real(&self, i: usize) -> bool {
        i < self.n_real
    }
}

fn mean_nonempty(v: &[f64], what: &str) -> Result<f64> {
    if v.is_empty() {
        return Err(Error::Invalid(format!("{what}: empty batch")));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Ω̂_F from per-point values of the constrained component.
pub fn omega_fisher(h: &[f64]) -> Result<f64> {
    let sq: Vec<f64> = h.iter().map(|v| v * v).collect();
    mean_nonempty(&sq, "Fisher estimate")
}

/// Ω̂_S from per-point squared input-gradient norms.
pub fn omega_sobolev(grad_norms_sq: &[f64]) -> Result<f64> {
    mean_nonempty(grad_norms_sq, "Sobolev estimate")
}

/// Ω̂_GP from per-interpolate input-gradient norms.
pub fn omega_gp(grad_norms: &[f64]) -> Result<f64> {
    let d: Vec<f64> = grad_norms.iter().map(|n| (1.0 - n).powi(2)).collect();
    mean_nonempty(&d, "gradient-penalty estimate")
}

/// `x̃_i = ε_i x_real,i + (1 − ε_i) x_fake,i` for given mixing weights.
pub fn interpolate(real: &Tensor, fake: &Tensor, eps: &[f64]) -> Result<Tensor> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!(
            "interpolation endpoints {:?} vs {:?}",
            real.shape(),
            fake.shape()
        )));
    }
    let n = real.shape()[0];
    if eps.len() != n {
        return Err(Error::Shape(format!("{} weights for {n} pairs", eps.len())));
    }
    let w = real.numel() / n.max(1);
    let data = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(j, (r, f))| {
            let e = eps[j / w];
            e * r + (1.0 - e) * f
        })
        .collect();
    Tensor::new(real.shape().to_vec(), data)
}

/// Interpolates with ε_i ~ Uniform[0, 1] drawn per pair.
pub fn sample_gp_interpolates(real: &Tensor, fake: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let n = real.shape()[0];
    let eps: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    interpolate(real, fake, &eps)
}

/// Which constraints a run enforces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ActiveConstraints {
    pub fisher: bool,
    pub sobolev: bool,
    pub gp: bool,
}

impl ActiveConstraints {
    pub fn from_placements(p: &[Placement]) -> Self {
        let has = |k| p.iter().any(|p| p.constraint == k);
        Self {
            fisher: has(ConstraintKind::Fisher),
            sobolev: has(ConstraintKind::Sobolev),
            gp: has(ConstraintKind::Gp),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintState {
    pub lambda_f: f64,
    pub lambda_s: f64,
    pub rho_f: f64,
    pub rho_s: f64,
    pub lambda_gp: f64,
    pub active: ActiveConstraints,
}

impl ConstraintState {
    pub fn new(hyper: &HyperParams, placements: &[Placement]) -> Self {
        Self {
            lambda_f: 0.0,
            lambda_s: 0.0,
            rho_f: hyper.rho_f,
            rho_s: hyper.rho_s,
            lambda_gp: hyper.lambda_gp,
            active: ActiveConstraints::from_placements(placements),
        }
    }
}

/// Constraint estimates for one step; each present iff its constraint is active.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimates<T> {
    pub fisher: Option<T>,
    pub sobolev: Option<T>,
    pub gp: Option<T>,
}

impl<T> Default for Estimates<T> {
    fn default() -> Self {
        Self {
            fisher: None,
            sobolev: None,
            gp: None,
        }
    }
}

fn check_presence<T>(state: &ConstraintState, est: &Estimates<T>) -> Result<()> {
    let checks = [
        ("Fisher", state.active.fisher, est.fisher.is_some()),
        ("Sobolev", state.active.sobolev, est.sobolev.is_some()),
        ("gradient penalty", state.active.gp, est.gp.is_some()),
    ];
    for (name, active, given) in checks {
        if active != given {
            return Err(Error::Invalid(if given {
                format!("{name} estimate given but the constraint is not configured")
            } else {
                format!("{name} constraint configured but no estimate given")
            }));
        }
    }
    Ok(())
}

/// `L^C` for scalar estimates.
pub fn constraint_objective(state: &ConstraintState, est: &Estimates<f64>) -> Result<f64> {
    check_presence(state, est)?;
    let alm = |lambda: f64, rho: f64, omega: f64| {
        let gap = 1.0 - omega;
        lambda * gap - 0.5 * rho * gap * gap
    };
    let mut total = 0.0;
    if let Some(o) = est.fisher {
        total += alm(state.lambda_f, state.rho_f, o);
    }
    if let Some(o) = est.sobolev {
        total += alm(state.lambda_s, state.rho_s, o);
    }
    if let Some(o) = est.gp {
        total -= state.lambda_gp * o;
    }
    Ok(total)
}

/// `L^C` on the tape, for estimates that are graph scalars.
pub fn constraint_objective_on_tape(
    g: &mut Graph,
    state: &ConstraintState,
    est: &Estimates<Var>,
) -> Result<Option<Var>> {
    check_presence(state, est)?;
    let mut terms = Vec::new();
    for (omega, lambda, rho) in [
        (est.fisher, state.lambda_f, state.rho_f),
        (est.sobolev, state.lambda_s, state.rho_s),
    ] {
        let Some(omega) = omega else { continue };
        // gap = 1 − Ω̂
        let neg = g.neg(omega)?;
        let gap = g.offset(neg, 1.0)?;
        let lin = g.scale(gap, lambda)?;
        let sq = g.square(gap)?;
        let quad = g.scale(sq, -0.5 * rho)?;
        terms.push(g.add(lin, quad)?);
    }
    if let Some(omega) = est.gp {
        terms.push(g.scale(omega, -state.lambda_gp)?);
    }
    let mut it = terms.into_iter();
    let Some(mut acc) = it.next() else {
        return Ok(None);
    };
    for t in it {
        acc = g.add(acc, t)?;
    }
    Ok(Some(acc))
}

/// One multiplier ascent step, `λ ← λ + ρ(Ω̂ − 1)`.
pub fn alm_update(state: &ConstraintState, omega_hat: f64, which: ConstraintKind) -> Result<ConstraintState> {
    let mut next = *state;
    match which {
        ConstraintKind::Fisher => next.lambda_f += state.rho_f * (omega_hat - 1.0),
        ConstraintKind::Sobolev => next.lambda_s += state.rho_s * (omega_hat - 1.0),
        ConstraintKind::Gp => {
            return Err(Error::Invalid(
                "the gradient penalty has a fixed weight and no multiplier".into(),
            ))
        }
    }
    Ok(next)
}

/// `Ω̂_F` on the tape: mean of `h²` over the `(N, 1)` values.
pub fn fisher_on_tape(g: &mut Graph, h: Var) -> Result<Var> {
    let sq = g.square(h)?;
    g.mean(sq)
}

/// Per-row squared norms of `∇ₓ Σ_i h_i`, shape `(N, 1)`, kept differentiable.
///
/// Each `h_i` must depend on row `i` of `x` only (no batch coupling).
pub fn input_grad_norms_sq(g: &mut Graph, h: Var, x: Var) -> Result<Var> {
    let total = g.sum(h)?;
    let dx = g.grad(total, &[x])?[0];
    let sq = g.square(dx)?;
    g.sum_rows(sq)
}

/// `Ω̂_S` on the tape.
pub fn sobolev_on_tape(g: &mut Graph, h: Var, x: Var) -> Result<Var> {
    let n2 = input_grad_norms_sq(g, h, x)?;
    g.mean(n2)
}

/// `Ω̂_GP` on the tape, `x` being the interpolates.
pub fn gp_on_tape(g: &mut Graph, h: Var, x: Var) -> Result<Var> {
    let n2 = input_grad_norms_sq(g, h, x)?;
    let n2 = g.offset(n2, NORM_FLOOR)?;
    let norm = g.powf(n2, 0.5)?;
    let neg = g.neg(norm)?;
    let gap = g.offset(neg, 1.0)?;
    let d = g.square(gap)?;
    g.mean(d)
}
