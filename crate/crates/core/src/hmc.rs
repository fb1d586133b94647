//! Hamiltonian Monte Carlo with an identity mass matrix.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unnormalized log-density with gradient.
pub trait Target {
    fn dim(&self) -> usize;

    /// Returns `log p(position)` and writes its gradient into `grad`.
    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64;
}

impl<F> Target for (usize, F)
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    fn dim(&self) -> usize {
        self.0
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        (self.1)(position, grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in_steps: usize,
    pub samples_per_restart: usize,
    pub restarts: usize,
    pub seed: u64,
    pub thinning: usize,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            step_size: 0.001,
            leapfrog_steps: 3,
            burn_in_steps: 1000,
            samples_per_restart: 100,
            restarts: 10,
            seed: 0,
            thinning: 1,
        }
    }
}

impl HmcConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str| Err(Error::Input(format!("hmc config field `{field}` must be positive")));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size");
        }
        if self.leapfrog_steps == 0 {
            return bad("leapfrog_steps");
        }
        if self.burn_in_steps == 0 {
            return bad("burn_in_steps");
        }
        if self.samples_per_restart == 0 {
            return bad("samples_per_restart");
        }
        if self.restarts == 0 {
            return bad("restarts");
        }
        if self.thinning == 0 {
            return bad("thinning");
        }
        Ok(())
    }

    pub fn total_iterations(&self) -> usize {
        self.burn_in_steps + self.samples_per_restart * self.thinning
    }
}

/// Integrator state; `grad` is the log-density gradient at `position`.
struct Phase {
    position: Vec<f64>,
    momentum: Vec<f64>,
    grad: Vec<f64>,
    log_density: f64,
}

fn integrate<T: Target + ?Sized>(state: &mut Phase, step_size: f64, n_steps: usize, target: &T) -> Result<()> {
    let half = 0.5 * step_size;
    for step in 0..n_steps {
        for (p, g) in state.momentum.iter_mut().zip(&state.grad) {
            *p += half * g;
        }
        for (q, p) in state.position.iter_mut().zip(&state.momentum) {
            *q += step_size * p;
        }
        state.log_density = target.log_density_and_grad(&state.position, &mut state.grad);
        for (p, g) in state.momentum.iter_mut().zip(&state.grad) {
            *p += half * g;
        }
        let finite = state.log_density.is_finite()
            && state.position.iter().chain(&state.momentum).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Divergence { step });
        }
    }
    Ok(())
}

/// Applies `n_steps` of half-kick / drift / half-kick to `(position, momentum)`.
pub fn leapfrog<T: Target + ?Sized>(
    position: &[f64],
    momentum: &[f64],
    step_size: f64,
    n_steps: usize,
    target: &T,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if position.len() != target.dim() || momentum.len() != target.dim() {
        return Err(Error::Shape(format!(
            "leapfrog state lengths {}/{} for a {}-dimensional target",
            position.len(),
            momentum.len(),
            target.dim()
        )));
    }
    if position.iter().chain(momentum).any(|v| !v.is_finite()) {
        return Err(Error::Input("leapfrog start must be finite".into()));
    }
    let mut grad = vec![0.0; position.len()];
    let log_density = target.log_density_and_grad(position, &mut grad);
    let mut state = Phase { position: position.to_vec(), momentum: momentum.to_vec(), grad, log_density };
    integrate(&mut state, step_size, n_steps, target)?;
    Ok((state.position, state.momentum))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub iterations: usize,
    pub accepted: usize,
    pub divergences: usize,
}

impl ChainStats {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.iterations.max(1) as f64
    }
}

#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub stats: ChainStats,
}

/// Runs one HMC chain from `init`, discarding `burn_in_steps` and keeping every
/// `thinning`-th state until `samples_per_restart` draws are collected.
pub fn hmc_chain<T: Target + ?Sized, R: Rng + ?Sized>(
    init: &[f64],
    config: &HmcConfig,
    target: &T,
    rng: &mut R,
) -> Result<ChainOutput> {
    config.validate()?;
    let dim = target.dim();
    if init.len() != dim {
        return Err(Error::Shape(format!("initial state has {} entries, target has {dim}", init.len())));
    }
    let mut grad = vec![0.0; dim];
    let log_density = target.log_density_and_grad(init, &mut grad);
    if init.iter().chain(&grad).any(|v| !v.is_finite()) || !log_density.is_finite() {
        return Err(Error::Input("chain initial state is not finite under the target".into()));
    }

    let mut current = Phase { position: init.to_vec(), momentum: vec![0.0; dim], grad, log_density };
    let mut proposal = Phase {
        position: vec![0.0; dim],
        momentum: vec![0.0; dim],
        grad: vec![0.0; dim],
        log_density: 0.0,
    };
    let mut stats = ChainStats::default();
    let mut draws = Vec::with_capacity(config.samples_per_restart);

    for it in 0..config.total_iterations() {
        for p in current.momentum.iter_mut() {
            *p = rng.sample(StandardNormal);
        }
        proposal.position.copy_from_slice(&current.position);
        proposal.momentum.copy_from_slice(&current.momentum);
        proposal.grad.copy_from_slice(&current.grad);
        proposal.log_density = current.log_density;

        let kinetic = |p: &[f64]| 0.5 * p.iter().map(|v| v * v).sum::<f64>();
        let h0 = -current.log_density + kinetic(&current.momentum);
        let u: f64 = rng.random();
        match integrate(&mut proposal, config.step_size, config.leapfrog_steps, target) {
            Ok(()) => {
                let h1 = -proposal.log_density + kinetic(&proposal.momentum);
                if h1.is_finite() && u.ln() < h0 - h1 {
                    std::mem::swap(&mut current, &mut proposal);
                    stats.accepted += 1;
                }
            }
            Err(_) => stats.divergences += 1,
        }
        stats.iterations += 1;

        if it >= config.burn_in_steps && (it - config.burn_in_steps + 1) % config.thinning == 0 {
            draws.push(current.position.clone());
        }
    }
    Ok(ChainOutput { draws, stats })
}
