//! Concept bottleneck model: logistic input→concept stage, logistic concept→label stage,
//! Gaussian priors, and the joint log-posterior with its analytic gradient.
//!
//! Flat parameter layout (used by the sampler and by [`flatten_params`]):
//! concept weights row-major `[K × D]`, concept biases `[K]`, label weights `[K]`, label bias.
//! When a concept column is pinned its weight row and bias are omitted from the flat vector.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::hmc::Target;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log σ(z) = -softplus(-z)`.
#[inline]
pub fn log_sigmoid(z: f64) -> f64 {
    -softplus(-z)
}

#[inline]
fn bernoulli_logit_lpmf(y: u8, z: f64) -> f64 {
    if y == 1 {
        log_sigmoid(z)
    } else {
        log_sigmoid(-z)
    }
}

/// Input→concept parameters (θ): one logistic regression per concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptParams {
    /// Row-major `[K × D]`.
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

impl ConceptParams {
    pub fn new(weights: Matrix, biases: Vec<f64>) -> Result<Self> {
        if weights.rows == 0 {
            return Err(Error::Input("at least one concept is required".into()));
        }
        if biases.len() != weights.rows {
            return Err(Error::Shape(format!("{} biases for {} concepts", biases.len(), weights.rows)));
        }
        if let Some(i) = weights.data.iter().chain(&biases).position(|v| !v.is_finite()) {
            return Err(Error::Numerical { index: i });
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(k: usize, d: usize) -> Self {
        Self { weights: Matrix::zeros(k, d), biases: vec![0.0; k] }
    }

    pub fn k(&self) -> usize {
        self.weights.rows
    }

    pub fn d(&self) -> usize {
        self.weights.cols
    }
}

/// Concept→label parameters (φ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LabelParams {
    pub fn zeros(k: usize) -> Self {
        Self { weights: vec![0.0; k], bias: 0.0 }
    }
}

/// Independent zero-mean Gaussian priors on θ and φ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub std_theta: f64,
    pub std_phi: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { std_theta: 1.0, std_phi: 1.0 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.std_theta > 0.0 && self.std_theta.is_finite() && self.std_phi > 0.0 && self.std_phi.is_finite()) {
            return Err(Error::Input(format!("prior stds must be positive and finite: {self:?}")));
        }
        Ok(())
    }
}

/// A concept column whose activations are fixed rather than sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedConcept {
    pub column_index: usize,
    pub values: Vec<f64>,
}

impl PinnedConcept {
    pub fn validate(&self, n: usize, k: usize) -> Result<()> {
        if self.column_index >= k {
            return Err(Error::Input(format!("pinned column {} out of range for K={k}", self.column_index)));
        }
        if self.values.len() != n {
            return Err(Error::Shape(format!("pinned concept has {} values, dataset has {n}", self.values.len())));
        }
        if self.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Input("pinned concept values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Activations `[N × K]`, entry `(n, k) = σ(w_k · x_n + b_k)`.
pub fn concept_forward(params: &ConceptParams, features: &[f64], d: usize) -> Result<Matrix> {
    if params.d() != d || d == 0 || features.len() % d != 0 {
        return Err(Error::Shape(format!(
            "concept weights expect D={}, features have D={d} ({} values)",
            params.d(),
            features.len()
        )));
    }
    if let Some(i) = features.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite feature at flat index {i}")));
    }
    let n = features.len() / d;
    let k = params.k();
    let mut out = Matrix::zeros(n, k);
    for (x, a) in features.chunks_exact(d).zip(out.data.chunks_exact_mut(k)) {
        for (c, slot) in a.iter_mut().enumerate() {
            let w = params.weights.row(c);
            let z = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + params.biases[c];
            *slot = logistic(z);
        }
    }
    Ok(out)
}

/// Label probabilities `σ(φ_w · c_n + φ_b)`.
pub fn label_forward(params: &LabelParams, activations: &Matrix) -> Result<Vec<f64>> {
    if params.weights.len() != activations.cols {
        return Err(Error::Shape(format!(
            "label weights have K={}, activations have K={}",
            params.weights.len(),
            activations.cols
        )));
    }
    Ok(activations
        .data
        .chunks_exact(activations.cols.max(1))
        .map(|c| logistic(c.iter().zip(&params.weights).map(|(a, w)| a * w).sum::<f64>() + params.bias))
        .collect())
}

/// Fraction of rows where `1[p > 0.5]` equals the label; `p == 0.5` predicts 0.
pub fn accuracy(probs: &[f64], labels: &[u8]) -> f64 {
    let hits = probs.iter().zip(labels).filter(|(&p, &y)| u8::from(p > 0.5) == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Log-posterior split into its additive terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogPosteriorTerms {
    pub likelihood: f64,
    pub theta_prior: f64,
    pub phi_prior: f64,
}

impl LogPosteriorTerms {
    pub fn total(&self) -> f64 {
        self.likelihood + self.theta_prior + self.phi_prior
    }
}

fn gaussian_log_density(values: impl Iterator<Item = f64>, std: f64) -> f64 {
    let norm = -0.5 * LN_2PI - std.ln();
    values.map(|v| norm - 0.5 * (v / std).powi(2)).sum()
}

pub fn flat_len(d: usize, k: usize) -> usize {
    k * d + k + k + 1
}

pub fn flatten_params(theta: &ConceptParams, phi: &LabelParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(flat_len(theta.d(), theta.k()));
    out.extend_from_slice(&theta.weights.data);
    out.extend_from_slice(&theta.biases);
    out.extend_from_slice(&phi.weights);
    out.push(phi.bias);
    out
}

pub fn unflatten_params(flat: &[f64], d: usize, k: usize) -> Result<(ConceptParams, LabelParams)> {
    let expected = flat_len(d, k);
    if flat.len() != expected {
        return Err(Error::Shape(format!("flat vector has {} entries, expected {expected}", flat.len())));
    }
    let kd = k * d;
    let theta = ConceptParams {
        weights: Matrix::from_vec(k, d, flat[..kd].to_vec())?,
        biases: flat[kd..kd + k].to_vec(),
    };
    let phi = LabelParams { weights: flat[kd + k..kd + 2 * k].to_vec(), bias: flat[kd + 2 * k] };
    Ok((theta, phi))
}

/// The CBM posterior as a sampling target, optionally with one concept column pinned.
#[derive(Debug, Clone)]
pub struct CbmPosterior<'a> {
    data: &'a Dataset,
    k: usize,
    prior: PriorSpec,
    pinned: Option<&'a PinnedConcept>,
    /// Dataset column for each sampled θ row.
    free_columns: Vec<usize>,
}

impl<'a> CbmPosterior<'a> {
    pub fn new(data: &'a Dataset, k: usize, prior: PriorSpec, pinned: Option<&'a PinnedConcept>) -> Result<Self> {
        if k == 0 {
            return Err(Error::Input("K must be at least 1".into()));
        }
        prior.validate()?;
        if let Some(p) = pinned {
            p.validate(data.n(), k)?;
        }
        let free_columns = (0..k).filter(|&c| pinned.map_or(true, |p| p.column_index != c)).collect();
        Ok(Self { data, k, prior, pinned, free_columns })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn pinned(&self) -> Option<&PinnedConcept> {
        self.pinned
    }

    fn n_free(&self) -> usize {
        self.free_columns.len()
    }

    /// Number of θ entries in the sampled vector.
    fn theta_len(&self) -> usize {
        self.n_free() * (self.data.d() + 1)
    }

    /// Expands a sampled vector into full parameters; a pinned row is left at zero.
    pub fn unpack(&self, q: &[f64]) -> Result<(ConceptParams, LabelParams)> {
        if q.len() != self.dim() {
            return Err(Error::Shape(format!("state has {} entries, expected {}", q.len(), self.dim())));
        }
        let d = self.data.d();
        let nf = self.n_free();
        let mut theta = ConceptParams::zeros(self.k, d);
        for (j, &c) in self.free_columns.iter().enumerate() {
            theta.weights.data[c * d..(c + 1) * d].copy_from_slice(&q[j * d..(j + 1) * d]);
            theta.biases[c] = q[nf * d + j];
        }
        let off = self.theta_len();
        let phi = LabelParams { weights: q[off..off + self.k].to_vec(), bias: q[off + self.k] };
        Ok((theta, phi))
    }

    /// Inverse of [`Self::unpack`]; any pinned row of `theta` is dropped.
    pub fn pack(&self, theta: &ConceptParams, phi: &LabelParams) -> Vec<f64> {
        let d = self.data.d();
        let mut q = Vec::with_capacity(self.dim());
        for &c in &self.free_columns {
            q.extend_from_slice(theta.weights.row(c));
        }
        q.extend(self.free_columns.iter().map(|&c| theta.biases[c]));
        q.extend_from_slice(&phi.weights);
        q.push(phi.bias);
        debug_assert_eq!(q.len(), self.n_free() * (d + 1) + self.k + 1);
        q
    }

    /// Activations for full parameters, substituting the pinned column.
    pub fn activations(&self, theta: &ConceptParams) -> Result<Matrix> {
        let mut act = concept_forward(theta, self.data.features(), self.data.d())?;
        if let Some(p) = self.pinned {
            for (n, v) in p.values.iter().enumerate() {
                act.data[n * self.k + p.column_index] = *v;
            }
        }
        Ok(act)
    }

    pub fn terms(&self, q: &[f64]) -> Result<LogPosteriorTerms> {
        let mut grad = vec![0.0; self.dim()];
        let terms = self.evaluate(q, &mut grad, false);
        Ok(terms)
    }

    /// Computes the log-posterior terms and, if `want_grad`, writes the gradient into `grad`.
    fn evaluate(&self, q: &[f64], grad: &mut [f64], want_grad: bool) -> LogPosteriorTerms {
        let d = self.data.d();
        let k = self.k;
        let nf = self.n_free();
        let (w_theta, rest) = q.split_at(nf * d);
        let (b_theta, rest) = rest.split_at(nf);
        let (v_phi, rest) = rest.split_at(k);
        let v0 = rest[0];

        if want_grad {
            grad.fill(0.0);
        }
        let mut act = vec![0.0; k];
        let mut likelihood = 0.0;
        for (n, (x, &y)) in self.data.features().chunks_exact(d).zip(self.data.labels()).enumerate() {
            if let Some(p) = self.pinned {
                act[p.column_index] = p.values[n];
            }
            for (j, &c) in self.free_columns.iter().enumerate() {
                let w = &w_theta[j * d..(j + 1) * d];
                act[c] = logistic(w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b_theta[j]);
            }
            let z = act.iter().zip(v_phi).map(|(a, v)| a * v).sum::<f64>() + v0;
            likelihood += bernoulli_logit_lpmf(y, z);
            if !want_grad {
                continue;
            }
            let r = f64::from(y) - logistic(z);
            let (g_theta, g_rest) = grad.split_at_mut(nf * d + nf);
            for (gv, a) in g_rest[..k].iter_mut().zip(&act) {
                *gv += r * a;
            }
            g_rest[k] += r;
            for (j, &c) in self.free_columns.iter().enumerate() {
                let g = r * v_phi[c] * act[c] * (1.0 - act[c]);
                for (gw, xi) in g_theta[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *gw += g * xi;
                }
                g_theta[nf * d + j] += g;
            }
        }

        let t = self.theta_len();
        let st = self.prior.std_theta;
        let sp = self.prior.std_phi;
        let theta_prior = gaussian_log_density(q[..t].iter().copied(), st);
        let phi_prior = gaussian_log_density(q[t..].iter().copied(), sp);
        if want_grad {
            let (gt, gp) = grad.split_at_mut(t);
            for (g, v) in gt.iter_mut().zip(&q[..t]) {
                *g -= v / (st * st);
            }
            for (g, v) in gp.iter_mut().zip(&q[t..]) {
                *g -= v / (sp * sp);
            }
        }
        LogPosteriorTerms { likelihood, theta_prior, phi_prior }
    }
}

impl Target for CbmPosterior<'_> {
    fn dim(&self) -> usize {
        self.theta_len() + self.k + 1
    }

    fn log_density_and_grad(&self, position: &[f64], grad: &mut [f64]) -> f64 {
        self.evaluate(position, grad, true).total()
    }
}

fn check_finite(flat: &[f64], value: f64, grad: Option<&[f64]>) -> Result<()> {
    if let Some(i) = flat.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical { index: i });
    }
    if !value.is_finite() {
        let idx = grad.and_then(|g| g.iter().position(|v| !v.is_finite())).unwrap_or(0);
        return Err(Error::Numerical { index: idx });
    }
    if let Some(g) = grad {
        if let Some(i) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical { index: i });
        }
    }
    Ok(())
}

pub fn log_posterior_terms(
    theta: &ConceptParams,
    phi: &LabelParams,
    data: &Dataset,
    prior: &PriorSpec,
) -> Result<LogPosteriorTerms> {
    let target = CbmPosterior::new(data, theta.k(), *prior, None)?;
    check_shapes(theta, phi, data)?;
    let flat = flatten_params(theta, phi);
    let terms = target.terms(&flat)?;
    check_finite(&flat, terms.total(), None)?;
    Ok(terms)
}

pub fn log_posterior(theta: &ConceptParams, phi: &LabelParams, data: &Dataset, prior: &PriorSpec) -> Result<f64> {
    Ok(log_posterior_terms(theta, phi, data, prior)?.total())
}

/// Gradient of [`log_posterior`] in the flat layout of [`flatten_params`].
pub fn grad_log_posterior(
    theta: &ConceptParams,
    phi: &LabelParams,
    data: &Dataset,
    prior: &PriorSpec,
) -> Result<Vec<f64>> {
    check_shapes(theta, phi, data)?;
    let target = CbmPosterior::new(data, theta.k(), *prior, None)?;
    let flat = flatten_params(theta, phi);
    let mut grad = vec![0.0; flat.len()];
    let value = target.log_density_and_grad(&flat, &mut grad);
    check_finite(&flat, value, Some(&grad))?;
    Ok(grad)
}

fn check_shapes(theta: &ConceptParams, phi: &LabelParams, data: &Dataset) -> Result<()> {
    if theta.d() != data.d() {
        return Err(Error::Shape(format!("θ expects D={}, dataset has D={}", theta.d(), data.d())));
    }
    if phi.weights.len() != theta.k() || theta.biases.len() != theta.k() {
        return Err(Error::Shape(format!(
            "θ has K={} ({} biases), φ has K={}",
            theta.k(),
            theta.biases.len(),
            phi.weights.len()
        )));
    }
    Ok(())
}

/// One posterior draw with its induced concept activations on the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub concept_params: ConceptParams,
    pub label_params: LabelParams,
    /// `[N × K]`, entries in `[0, 1]`.
    pub activations: Matrix,
    pub accuracy: f64,
    pub chain_id: usize,
    pub draw_index: usize,
}

impl PosteriorSample {
    /// Computes activations (with any pinned column substituted) and accuracy for a parameter draw.
    pub fn materialize(
        target: &CbmPosterior<'_>,
        theta: ConceptParams,
        phi: LabelParams,
        chain_id: usize,
        draw_index: usize,
    ) -> Result<Self> {
        let activations = target.activations(&theta)?;
        let probs = label_forward(&phi, &activations)?;
        let accuracy = accuracy(&probs, target.data.labels());
        Ok(Self { concept_params: theta, label_params: phi, activations, accuracy, chain_id, draw_index })
    }

    pub fn k(&self) -> usize {
        self.activations.cols
    }
}

/// Accuracy of the sample's label stage applied to its stored activations.
pub fn sample_accuracy(sample: &PosteriorSample, data: &Dataset) -> Result<f64> {
    if sample.activations.rows != data.n() {
        return Err(Error::Shape(format!(
            "sample has {} activation rows, dataset has {}",
            sample.activations.rows,
            data.n()
        )));
    }
    let probs = label_forward(&sample.label_params, &sample.activations)?;
    Ok(accuracy(&probs, data.labels()))
}
