//! Online variational receiver: for every slot, predict each user's channel
//! from the previous slot's posterior through the Gauss-Markov model, then
//! run coordinate-ascent updates of the channels, the time correlations, the
//! data symbols and the noise precision on that slot alone.
//!
//! The predicted covariance of each user is diagonalized once per slot.
//! Every posterior covariance of that slot shares the eigenbasis, so an
//! iteration costs O(M²) per user and the dense covariance is only formed
//! when the slot is done.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baselines::{lmmse_from_observation, LmmseEstimate};
use crate::channel::{Constellation, FrameLayout, Observation};
use crate::error::{Error, Result};
use crate::expectations::{
    expected_residual_sq, ColumnMoments, GammaStat, GaussianStat, ScalarGaussianStat, SymbolPmf,
};
use crate::numerics::{CMatrix, CVector, HermitianCov};

/// Prior hyperparameters shared by both variational receivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VbPriors {
    pub eta_mean: f64,
    pub eta_var: f64,
    pub nu_shape: f64,
    pub nu_rate: f64,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
}

impl Default for VbPriors {
    fn default() -> Self {
        Self {
            eta_mean: 0.95,
            eta_var: 1e-3,
            nu_shape: 1e-4,
            nu_rate: 1e-4,
            gamma_shape: 1e-4,
            gamma_rate: 1e-4,
        }
    }
}

impl VbPriors {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.eta_mean,
            self.eta_var,
            self.nu_shape,
            self.nu_rate,
            self.gamma_shape,
            self.gamma_rate,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!("every prior must be positive: {self:?}")));
        }
        if self.eta_mean > 1.0 {
            return Err(Error::Config(format!("prior eta mean {} exceeds 1", self.eta_mean)));
        }
        Ok(())
    }

    pub fn eta(&self) -> ScalarGaussianStat {
        ScalarGaussianStat {
            mean: self.eta_mean,
            var: self.eta_var,
        }
    }

    pub fn gamma(&self) -> GammaStat {
        GammaStat {
            shape: self.gamma_shape,
            rate: self.gamma_rate,
        }
    }

    pub fn nu(&self) -> GammaStat {
        GammaStat {
            shape: self.nu_shape,
            rate: self.nu_rate,
        }
    }
}

/// How the predicted covariance treats the uncertain time correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    /// Weights with the second moment `⟨η²⟩ = η̂² + τ`.
    #[default]
    SecondMoment,
    /// Weights with the plug-in `η̂²`, ignoring the variance.
    PlugIn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineConfig {
    pub iterations: usize,
    pub priors: VbPriors,
    pub prediction: PredictionMode,
    /// Stop a slot early once no parameter moves by more than this.
    pub early_exit: Option<f64>,
    /// Per-user time correlation handed to the receiver; disables learning.
    pub known_eta: Option<Vec<f64>>,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            priors: VbPriors::default(),
            prediction: PredictionMode::SecondMoment,
            early_exit: None,
            known_eta: None,
        }
    }
}

/// Symbol factor of one user in one slot.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolFactor {
    /// Known pilot symbol.
    Pilot(Complex64),
    Data(SymbolPmf),
}

impl SymbolFactor {
    pub fn mean(&self, constellation: &Constellation) -> Complex64 {
        match self {
            SymbolFactor::Pilot(x) => *x,
            SymbolFactor::Data(pmf) => pmf.mean(constellation),
        }
    }

    pub fn variance(&self, constellation: &Constellation) -> f64 {
        match self {
            SymbolFactor::Pilot(_) => 0.0,
            SymbolFactor::Data(pmf) => pmf.variance(constellation),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPosterior {
    pub h: GaussianStat,
    pub eta: ScalarGaussianStat,
    pub symbol: SymbolFactor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotEstimate {
    pub users: Vec<UserPosterior>,
    pub gamma: GammaStat,
    /// Hard decisions on data slots, `None` on pilot slots.
    pub decisions: Option<Vec<usize>>,
    pub iterations_run: usize,
}

/// Resets a correlation estimate that left `[0, 1]` to `reset`.
pub fn clamp_eta(eta: ScalarGaussianStat, reset: ScalarGaussianStat) -> ScalarGaussianStat {
    if (0.0..=1.0).contains(&eta.mean) {
        eta
    } else {
        reset
    }
}

/// Predicted channel prior of one user for the current slot, kept in the
/// eigenbasis of its covariance.
#[derive(Debug, Clone)]
pub struct ChannelPrior {
    mean: CVector,
    anchor: CVector,
    values: Vec<f64>,
    vectors: CMatrix,
    anchor_coords: CVector,
    anchor_quad: f64,
}

const RIDGE_RTOL: f64 = 1e-10;

impl ChannelPrior {
    /// `mean` is the predicted mean, `anchor` the previous posterior mean the
    /// prediction was formed from. Negative eigenvalues of `cov` are floored
    /// to zero and every eigenvalue to a ridge of 1e-10·Tr/M.
    pub fn new(mean: CVector, anchor: CVector, cov: &HermitianCov) -> Result<Self> {
        let m = cov.dim();
        if mean.len() != m || anchor.len() != m {
            return Err(Error::DimMismatch(format!(
                "prior mean {} / anchor {} vs covariance {m}",
                mean.len(),
                anchor.len()
            )));
        }
        let eig = cov.eigen();
        let floored: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
        let trace: f64 = floored.iter().sum();
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(Error::Singular {
                min_eigenvalue: eig.min_eigenvalue(),
                trace,
            });
        }
        let ridge = RIDGE_RTOL * trace / m as f64;
        let values: Vec<f64> = floored.iter().map(|&l| l.max(ridge)).collect();
        let vectors = eig.vectors;
        let anchor_coords = vectors.adjoint() * &anchor;
        let anchor_quad = anchor_coords
            .iter()
            .zip(&values)
            .map(|(c, l)| c.norm_sqr() / l)
            .sum();
        Ok(Self {
            mean,
            anchor,
            values,
            vectors,
            anchor_coords,
            anchor_quad,
        })
    }

    pub fn mean(&self) -> &CVector {
        &self.mean
    }

    pub fn anchor(&self) -> &CVector {
        &self.anchor
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cov(&self) -> HermitianCov {
        self.dense(&self.values)
    }

    pub fn trace(&self) -> f64 {
        self.values.iter().sum()
    }

    /// `anchorᴴ Σ⁻¹ anchor`.
    pub fn anchor_quadratic(&self) -> f64 {
        self.anchor_quad
    }

    fn dense(&self, diag: &[f64]) -> HermitianCov {
        let mut scaled = self.vectors.clone();
        for (c, &d) in diag.iter().enumerate() {
            scaled.column_mut(c).iter_mut().for_each(|z| *z *= d);
        }
        HermitianCov::from_hermitian_part(scaled * self.vectors.adjoint())
    }
}

/// Prediction step: mean `η̂·ĥ`, covariance `w·Σ̂ + (1 − w)·R` with
/// `w = η̂² + τ` (or `η̂²` in plug-in mode).
pub fn predict_prior(
    prev: &GaussianStat,
    eta: ScalarGaussianStat,
    r: &HermitianCov,
    mode: PredictionMode,
) -> Result<ChannelPrior> {
    let w = match mode {
        PredictionMode::SecondMoment => eta.second_moment(),
        PredictionMode::PlugIn => eta.mean * eta.mean,
    };
    let cov = prev.cov.blend(w, r, 1.0 - w)?;
    ChannelPrior::new(&prev.mean * Complex64::from(eta.mean), prev.mean.clone(), &cov)
}

/// Gaussian channel factor in the eigenbasis of its prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelUpdate {
    pub mean: CVector,
    /// Posterior covariance eigenvalues (same eigenvectors as the prior).
    pub var_diag: Vec<f64>,
}

impl ChannelUpdate {
    /// The factor before any evidence: the prior itself.
    pub fn from_prior(prior: &ChannelPrior) -> Self {
        Self {
            mean: prior.mean.clone(),
            var_diag: prior.values.clone(),
        }
    }

    pub fn trace(&self) -> f64 {
        self.var_diag.iter().sum()
    }

    pub fn moments(&self) -> ColumnMoments<'_> {
        ColumnMoments {
            mean: &self.mean,
            cov_trace: self.trace(),
        }
    }

    pub fn to_stat(&self, prior: &ChannelPrior) -> GaussianStat {
        GaussianStat {
            mean: self.mean.clone(),
            cov: prior.dense(&self.var_diag),
        }
    }
}

/// Channel update for one user given the interference-cancelled residual
/// `y − Σ_{j≠i} ⟨h_j⟩⟨x_j⟩`:
/// `Σ = [γ⟨|x|²⟩ I + Σ̂⁻¹]⁻¹`, `⟨h⟩ = Σ[γ·residual·⟨x⟩* + ⟨η⟩ Σ̂⁻¹ ĥ_prev]`.
pub fn update_channel(
    prior: &ChannelPrior,
    residual: &CVector,
    x_mean: Complex64,
    x_second: f64,
    gamma: f64,
    eta_mean: f64,
) -> ChannelUpdate {
    let c = gamma * x_second;
    let proj = prior.vectors.adjoint() * residual;
    let data_scale = x_mean.conj() * gamma;
    let mut coords = CVector::zeros(prior.dim());
    let mut var_diag = Vec::with_capacity(prior.dim());
    for k in 0..prior.dim() {
        let l = prior.values[k];
        let denom = 1.0 + c * l;
        let d = l / denom;
        coords[k] = proj[k] * data_scale * d + prior.anchor_coords[k] * (eta_mean / denom);
        var_diag.push(d);
    }
    ChannelUpdate {
        mean: &prior.vectors * coords,
        var_diag,
    }
}

/// Time-correlation update:
/// `τ = (ĥᴴ Σ̂⁻¹ ĥ + 1/τ_prev)⁻¹`, `⟨η⟩ = τ(Re{ĥᴴ Σ̂⁻¹ ⟨h⟩} + η̂_prev/τ_prev)`,
/// followed by [`clamp_eta`].
pub fn update_eta(
    prior: &ChannelPrior,
    h_mean: &CVector,
    eta_prev: ScalarGaussianStat,
    reset: ScalarGaussianStat,
) -> ScalarGaussianStat {
    if !(eta_prev.var > 0.0) {
        return eta_prev;
    }
    let coords = prior.vectors.adjoint() * h_mean;
    let cross: f64 = prior
        .anchor_coords
        .iter()
        .zip(coords.iter())
        .zip(&prior.values)
        .map(|((a, h), l)| (a.conj() * h).re / l)
        .sum();
    let var = 1.0 / (prior.anchor_quad + 1.0 / eta_prev.var);
    let mean = var * (cross + eta_prev.mean / eta_prev.var);
    clamp_eta(ScalarGaussianStat { mean, var }, reset)
}

const DEGENERATE_ENERGY: f64 = 1e-30;

/// Symbol update `q(a) ∝ p_a·exp{−⟨γ⟩⟨‖h‖²⟩·|a − z|²}` with
/// `z = ⟨h⟩ᴴ·residual / ⟨‖h‖²⟩`.
pub fn update_symbol(
    residual: &CVector,
    h: ColumnMoments<'_>,
    gamma: f64,
    constellation: &Constellation,
    user: usize,
) -> Result<SymbolPmf> {
    let energy = h.second_moment();
    if !(energy > DEGENERATE_ENERGY) {
        return Err(Error::DegenerateChannel { user, energy });
    }
    let z = h.mean.dotc(residual) / energy;
    let kappa = gamma * energy;
    let log_w: Vec<f64> = constellation
        .points()
        .iter()
        .zip(constellation.priors())
        .map(|(&a, &p)| p.ln() - kappa * (a - z).norm_sqr())
        .collect();
    SymbolPmf::from_log_weights(&log_w)
}

/// Noise-precision update: shape `a0 + M`, rate `b0 + ⟨‖y − H x‖²⟩`.
pub fn update_gamma(
    y: &CVector,
    cols: &[ColumnMoments<'_>],
    x_mean: &[Complex64],
    x_var: &[f64],
    priors: &VbPriors,
) -> Result<GammaStat> {
    let residual = expected_residual_sq(y, cols, x_mean, x_var)?;
    Ok(GammaStat {
        shape: priors.gamma_shape + y.len() as f64,
        rate: priors.gamma_rate + residual,
    })
}

/// `y − Σ_{j≠skip} means[j]·x[j]`.
pub(crate) fn partial_residual(y: &CVector, means: &[&CVector], x: &[Complex64], skip: usize) -> CVector {
    let mut r = y.clone();
    for (j, (h, &xj)) in means.iter().zip(x).enumerate() {
        if j != skip {
            r.axpy(-xj, *h, Complex64::new(1.0, 0.0));
        }
    }
    r
}

fn max_abs_diff(a: &CVector, b: &CVector) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// One slot of the online receiver.
///
/// `prev` holds the previous slot's posteriors (for the first slot, the
/// pilot-based initial estimate). `pilots` is `Some` on pilot slots. The
/// sweep order is channels, then correlations, then symbols (data slots
/// only), then the noise precision.
pub fn run_slot(
    y: &CVector,
    prev: &[UserPosterior],
    r: &[HermitianCov],
    pilots: Option<&[Complex64]>,
    constellation: &Constellation,
    cfg: &OnlineConfig,
) -> Result<SlotEstimate> {
    let k = prev.len();
    if r.len() != k || pilots.is_some_and(|p| p.len() != k) {
        return Err(Error::DimMismatch(format!("{k} users, {} covariances", r.len())));
    }
    if let Some(known) = &cfg.known_eta {
        if known.len() != k {
            return Err(Error::DimMismatch(format!("{} known eta values for {k} users", known.len())));
        }
    }
    let reset = cfg.priors.eta();

    let mut priors = Vec::with_capacity(k);
    let mut eta_prior = Vec::with_capacity(k);
    for i in 0..k {
        let eta = match &cfg.known_eta {
            Some(known) => ScalarGaussianStat::point(known[i]),
            None => prev[i].eta,
        };
        priors.push(predict_prior(&prev[i].h, eta, &r[i], cfg.prediction)?);
        eta_prior.push(eta);
    }

    let mut chans: Vec<ChannelUpdate> = priors.iter().map(ChannelUpdate::from_prior).collect();
    let mut etas = eta_prior.clone();
    let mut symbols: Vec<SymbolFactor> = match pilots {
        Some(p) => p.iter().map(|&x| SymbolFactor::Pilot(x)).collect(),
        None => vec![SymbolFactor::Data(SymbolPmf::prior(constellation)); k],
    };
    let mut x_mean: Vec<Complex64> = symbols.iter().map(|s| s.mean(constellation)).collect();
    let mut x_var: Vec<f64> = symbols.iter().map(|s| s.variance(constellation)).collect();
    let mut gamma = cfg.priors.gamma();

    let mut iterations_run = 0;
    for _ in 0..cfg.iterations {
        iterations_run += 1;
        let mut change: f64 = 0.0;

        for i in 0..k {
            let means: Vec<&CVector> = chans.iter().map(|c| &c.mean).collect();
            let residual = partial_residual(y, &means, &x_mean, i);
            let x2 = x_mean[i].norm_sqr() + x_var[i];
            let next = update_channel(&priors[i], &residual, x_mean[i], x2, gamma.mean(), etas[i].mean);
            change = change.max(max_abs_diff(&next.mean, &chans[i].mean));
            chans[i] = next;
        }

        if cfg.known_eta.is_none() {
            for i in 0..k {
                let next = update_eta(&priors[i], &chans[i].mean, eta_prior[i], reset);
                change = change.max((next.mean - etas[i].mean).abs());
                etas[i] = next;
            }
        }

        if pilots.is_none() {
            for i in 0..k {
                let means: Vec<&CVector> = chans.iter().map(|c| &c.mean).collect();
                let residual = partial_residual(y, &means, &x_mean, i);
                let pmf = update_symbol(&residual, chans[i].moments(), gamma.mean(), constellation, i)?;
                let m = pmf.mean(constellation);
                change = change.max((m - x_mean[i]).norm());
                x_mean[i] = m;
                x_var[i] = pmf.variance(constellation);
                symbols[i] = SymbolFactor::Data(pmf);
            }
        }

        let cols: Vec<ColumnMoments<'_>> = chans.iter().map(ChannelUpdate::moments).collect();
        let next = update_gamma(y, &cols, &x_mean, &x_var, &cfg.priors)?;
        change = change.max(((next.mean() - gamma.mean()) / gamma.mean()).abs());
        gamma = next;

        if cfg.early_exit.is_some_and(|tol| change < tol) {
            break;
        }
    }

    let decisions = pilots.is_none().then(|| {
        symbols
            .iter()
            .map(|s| match s {
                SymbolFactor::Data(pmf) => pmf.argmax(),
                SymbolFactor::Pilot(_) => 0,
            })
            .collect()
    });
    let users = chans
        .iter()
        .zip(&priors)
        .zip(etas)
        .zip(symbols)
        .map(|(((c, p), eta), symbol)| UserPosterior {
            h: c.to_stat(p),
            eta,
            symbol,
        })
        .collect();
    Ok(SlotEstimate {
        users,
        gamma,
        decisions,
        iterations_run,
    })
}

/// Output of the online receiver over a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutput {
    pub init: LmmseEstimate,
    pub slots: Vec<SlotEstimate>,
}

impl OnlineOutput {
    /// Posterior channel means, one `M × K` matrix per slot.
    pub fn channel(&self) -> Vec<CMatrix> {
        self.slots
            .iter()
            .map(|s| CMatrix::from_columns(&s.users.iter().map(|u| u.h.mean.clone()).collect::<Vec<_>>()))
            .collect()
    }

    /// Decisions per `[slot][user]`, zero on pilot slots.
    pub fn decisions(&self) -> Vec<Vec<usize>> {
        self.slots
            .iter()
            .map(|s| s.decisions.clone().unwrap_or_else(|| vec![0; s.users.len()]))
            .collect()
    }

    /// Correlation estimate of every user after the last slot.
    pub fn final_eta(&self) -> Vec<ScalarGaussianStat> {
        self.slots
            .last()
            .map(|s| s.users.iter().map(|u| u.eta).collect())
            .unwrap_or_default()
    }
}

/// Runs the online receiver over every slot of `obs`, starting from the
/// pilot-based LMMSE estimate of the leading pilot block.
pub fn run_frame_online(
    obs: &Observation,
    r: &[HermitianCov],
    n0: f64,
    constellation: &Constellation,
    cfg: &OnlineConfig,
) -> Result<OnlineOutput> {
    cfg.priors.validate()?;
    let init = lmmse_from_observation(obs, r, n0)?;
    let k = obs.users();
    let start: Vec<UserPosterior> = (0..k)
        .map(|i| UserPosterior {
            h: GaussianStat {
                mean: init.h_mean[i].clone(),
                cov: init.h_cov[i].clone(),
            },
            eta: match &cfg.known_eta {
                Some(known) => ScalarGaussianStat::point(known[i]),
                None => cfg.priors.eta(),
            },
            symbol: SymbolFactor::Pilot(Complex64::new(0.0, 0.0)),
        })
        .collect();

    let mut slots: Vec<SlotEstimate> = Vec::with_capacity(obs.slots());
    for t in 0..obs.slots() {
        let prev = slots.last().map_or(start.as_slice(), |s| s.users.as_slice());
        let pilot_col: Option<Vec<Complex64>> = obs.pilot_mask[t].then(|| obs.pilots.column(t).iter().copied().collect());
        let est = run_slot(&obs.y_slot(t), prev, r, pilot_col.as_deref(), constellation, cfg)?;
        slots.push(est);
    }
    Ok(OnlineOutput { init, slots })
}

/// Online receiver over an interleaved frame. The pilot sections re-enter
/// pilot mode while channel and correlation posteriors carry across
/// section boundaries.
pub fn run_frame_interleaved(
    obs: &Observation,
    layout: &FrameLayout,
    r: &[HermitianCov],
    n0: f64,
    constellation: &Constellation,
    cfg: &OnlineConfig,
) -> Result<OnlineOutput> {
    if layout.pilot_mask() != obs.pilot_mask {
        return Err(Error::Config(format!(
            "layout {:?} does not match the frame's pilot positions",
            layout.sections()
        )));
    }
    run_frame_online(obs, r, n0, constellation, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{generate_frame, make_correlation, CorrelationKind, CorrelationSpec, EtaProcess, FrameConfig};
    use crate::numerics::{rel_frobenius, RngStream};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn exp_r(m: usize) -> HermitianCov {
        make_correlation(&CorrelationSpec {
            kind: CorrelationKind::exponential(c(0.5, 0.5)),
            antennas: m,
        })
        .unwrap()
    }

    fn random_stat(rng: &mut RngStream, m: usize, scale: f64) -> GaussianStat {
        let g = CMatrix::from_fn(m, m, |_, _| rng.complex_normal());
        let cov = HermitianCov::new(&g * g.adjoint() * Complex64::from(scale / m as f64)).unwrap();
        GaussianStat::new(rng.complex_normal_vector(m), cov).unwrap()
    }

    #[test]
    fn predict_static_channel_keeps_posterior() {
        let mut rng = RngStream::new(1);
        let prev = random_stat(&mut rng, 4, 0.2);
        let p = predict_prior(&prev, ScalarGaussianStat::point(1.0), &exp_r(4), PredictionMode::SecondMoment).unwrap();
        assert_eq!(p.mean(), &prev.mean);
        assert!(rel_frobenius(p.cov().matrix(), prev.cov.matrix()) < 1e-9);
    }

    #[test]
    fn predict_memoryless_resets_to_prior() {
        let mut rng = RngStream::new(2);
        let prev = random_stat(&mut rng, 4, 0.2);
        let r = exp_r(4);
        let p = predict_prior(&prev, ScalarGaussianStat::point(0.0), &r, PredictionMode::SecondMoment).unwrap();
        assert!(p.mean().norm() == 0.0);
        assert!(rel_frobenius(p.cov().matrix(), r.matrix()) < 1e-12);
    }

    #[test]
    fn predict_blend_from_zero_covariance() {
        let r = exp_r(3);
        let prev = GaussianStat::new(CVector::from_element(3, c(1.0, 0.0)), HermitianCov::zeros(3)).unwrap();
        let eta = ScalarGaussianStat::new(0.985, 1e-3).unwrap();
        let p = predict_prior(&prev, eta, &r, PredictionMode::SecondMoment).unwrap();
        let w = 1.0 - 0.985f64.powi(2) - 1e-3;
        assert!(rel_frobenius(p.cov().matrix(), &r.matrix().scale(w)) < 1e-12);
        let plug = predict_prior(&prev, eta, &r, PredictionMode::PlugIn).unwrap();
        assert!(rel_frobenius(plug.cov().matrix(), &r.matrix().scale(1.0 - 0.985f64.powi(2))) < 1e-12);
    }

    #[test]
    fn clamp_examples() {
        let reset = VbPriors::default().eta();
        let ok = ScalarGaussianStat::new(0.97, 1e-5).unwrap();
        assert_eq!(clamp_eta(ok, reset), ok);
        assert_eq!(clamp_eta(ScalarGaussianStat::point(1.02), reset), ScalarGaussianStat { mean: 0.95, var: 1e-3 });
        assert_eq!(clamp_eta(ScalarGaussianStat::point(-0.01), reset), ScalarGaussianStat { mean: 0.95, var: 1e-3 });
    }

    #[test]
    fn zero_precision_returns_prior() {
        let mut rng = RngStream::new(3);
        let prev = random_stat(&mut rng, 4, 0.3);
        let prior = ChannelPrior::new(prev.mean.clone() * c(0.9, 0.0), prev.mean.clone(), &prev.cov).unwrap();
        let upd = update_channel(&prior, &rng.complex_normal_vector(4), c(1.0, 0.0), 1.0, 0.0, 0.9);
        assert!(rel_frobenius(
            &CMatrix::from_column_slice(4, 1, upd.mean.as_slice()),
            &CMatrix::from_column_slice(4, 1, prior.mean().as_slice())
        ) < 1e-10);
        assert!(rel_frobenius(upd.to_stat(&prior).cov.matrix(), prior.cov().matrix()) < 1e-12);
    }

    #[test]
    fn infinite_snr_pilot_recovers_observation() {
        let mut rng = RngStream::new(4);
        let y = rng.complex_normal_vector(3);
        let prior = ChannelPrior::new(CVector::zeros(3), CVector::zeros(3), &HermitianCov::scaled_identity(3, 0.5)).unwrap();
        let upd = update_channel(&prior, &y, c(1.0, 0.0), 1.0, 1e12, 0.0);
        assert!((&upd.mean - &y).norm() < 1e-10);
        assert!(upd.trace() < 1e-11);
    }

    #[test]
    fn channel_update_matches_dense_formula() {
        let sigma = HermitianCov::new(CMatrix::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.1, -0.2), c(0.1, 0.2), c(0.3, 0.0)])).unwrap();
        let anchor = CVector::from_vec(vec![c(0.7, -0.1), c(-0.2, 0.4)]);
        let y = CVector::from_vec(vec![c(1.0, 0.5), c(-0.3, 0.2)]);
        let (x, x2, gamma, eta) = (c(0.6, -0.8), 1.1, 4.0, 0.93);
        let prior = ChannelPrior::new(anchor.clone() * c(eta, 0.0), anchor.clone(), &sigma).unwrap();
        let upd = update_channel(&prior, &y, x, x2, gamma, eta);

        // straight-line evaluation with explicit 2x2 inverses
        let inv2 = |a: &CMatrix| {
            let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
            CMatrix::from_row_slice(2, 2, &[a[(1, 1)] / det, -a[(0, 1)] / det, -a[(1, 0)] / det, a[(0, 0)] / det])
        };
        let s_inv = inv2(sigma.matrix());
        let post = inv2(&(CMatrix::identity(2, 2) * c(gamma * x2, 0.0) + &s_inv));
        let mean = &post * (&y * (x.conj() * gamma) + &s_inv * &anchor * c(eta, 0.0));
        assert!((&upd.mean - &mean).norm() < 1e-12);
        assert!(rel_frobenius(upd.to_stat(&prior).cov.matrix(), &post) < 1e-12);
    }

    #[test]
    fn eta_update_examples() {
        let reset = VbPriors::default().eta();
        let prev = ScalarGaussianStat::new(0.9, 2e-3).unwrap();
        let prior = ChannelPrior::new(CVector::zeros(2), CVector::zeros(2), &HermitianCov::identity(2)).unwrap();
        let got = update_eta(&prior, &CVector::from_element(2, c(1.0, 0.0)), prev, reset);
        assert!((got.mean - 0.9).abs() < 1e-15 && (got.var - 2e-3).abs() < 1e-18);

        let h = CVector::from_element(2, c(100.0, 0.0));
        let prior = ChannelPrior::new(h.clone(), h.clone(), &HermitianCov::identity(2)).unwrap();
        let got = update_eta(&prior, &h, prev, reset);
        assert!(got.mean > 0.99 && got.mean <= 1.0);

        // straight-line M=2 evaluation
        let sigma = CMatrix::from_row_slice(2, 2, &[c(0.4, 0.0), c(0.05, 0.1), c(0.05, -0.1), c(0.2, 0.0)]);
        let anchor = CVector::from_vec(vec![c(0.3, 0.1), c(-0.2, 0.25)]);
        let cur = CVector::from_vec(vec![c(0.28, 0.12), c(-0.21, 0.2)]);
        let prior = ChannelPrior::new(anchor.clone(), anchor.clone(), &HermitianCov::new(sigma.clone()).unwrap()).unwrap();
        let got = update_eta(&prior, &cur, prev, reset);
        let s_inv = sigma.try_inverse().unwrap();
        let quad = (anchor.adjoint() * &s_inv * &anchor)[(0, 0)].re;
        let cross = (anchor.adjoint() * &s_inv * &cur)[(0, 0)].re;
        let var = 1.0 / (quad + 1.0 / prev.var);
        let mean = var * (cross + prev.mean / prev.var);
        assert!((got.var - var).abs() < 1e-15);
        assert!((got.mean - mean).abs() < 1e-12);
    }

    #[test]
    fn symbol_update_examples() {
        let qpsk = Constellation::qpsk();
        let h = CVector::from_vec(vec![c(1.0, 0.0)]);
        // no evidence
        let pmf = update_symbol(&CVector::from_vec(vec![c(0.3, 0.1)]), ColumnMoments { mean: &h, cov_trace: 0.0 }, 0.0, &qpsk, 0).unwrap();
        assert!(pmf.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        // on a point, high precision
        let a = qpsk.points()[2];
        let pmf = update_symbol(&CVector::from_vec(vec![a]), ColumnMoments { mean: &h, cov_trace: 0.0 }, 1e6, &qpsk, 0).unwrap();
        assert!((pmf.probs()[2] - 1.0).abs() < 1e-12);
        // brute-force normalization, κ = 2
        let z = c(0.3, 0.1);
        let pmf = update_symbol(&CVector::from_vec(vec![z]), ColumnMoments { mean: &h, cov_trace: 0.0 }, 2.0, &qpsk, 0).unwrap();
        let w: Vec<f64> = qpsk.points().iter().map(|&a| (-2.0 * (a - z).norm_sqr()).exp()).collect();
        let total: f64 = w.iter().sum();
        for (p, wi) in pmf.probs().iter().zip(&w) {
            assert!((p - wi / total).abs() < 1e-14);
        }
        let zero = CVector::zeros(1);
        assert!(matches!(
            update_symbol(&h, ColumnMoments { mean: &zero, cov_trace: 0.0 }, 1.0, &qpsk, 3),
            Err(Error::DegenerateChannel { user: 3, .. })
        ));
    }

    #[test]
    fn gamma_update_examples() {
        let priors = VbPriors::default();
        let h = CVector::from_vec(vec![c(1.0, 0.0), c(0.0, 1.0)]);
        let y = h.clone();
        let g = update_gamma(&y, &[ColumnMoments { mean: &h, cov_trace: 0.0 }], &[c(1.0, 0.0)], &[0.0], &priors).unwrap();
        assert!((g.mean() - (1e-4 + 2.0) / 1e-4).abs() < 1e-6);

        // plug-in arithmetic: M = 32, residual 32·N0 with N0 = 0.125
        let m = 32;
        let y = CVector::from_element(m, c(0.125f64.sqrt(), 0.0));
        let zero = CVector::zeros(m);
        let g = update_gamma(&y, &[ColumnMoments { mean: &zero, cov_trace: 0.0 }], &[c(0.0, 0.0)], &[0.0], &priors).unwrap();
        assert!((g.mean() - 8.0).abs() < 1e-3);
    }

    fn small_frame(seed: u64, n0: f64, layout: FrameLayout) -> (crate::channel::ChannelFrame, FrameConfig) {
        let cfg = FrameConfig {
            antennas: 4,
            users: 2,
            layout,
            constellation: Constellation::qpsk(),
            correlation: CorrelationKind::exponential(c(0.5, 0.5)),
            eta: EtaProcess::Fixed { value: 0.985 },
            n0,
        };
        (generate_frame(seed, &cfg).unwrap(), cfg)
    }

    #[test]
    fn zero_iterations_returns_prediction() {
        let (frame, fc) = small_frame(1, 0.05, FrameLayout::single(2, 6));
        let r = fc.covariances().unwrap();
        let cfg = OnlineConfig {
            iterations: 0,
            ..Default::default()
        };
        let out = run_frame_online(&frame.obs, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        let first = &out.slots[0];
        assert_eq!(first.iterations_run, 0);
        assert_eq!(first.gamma, cfg.priors.gamma());
        let start = GaussianStat::new(out.init.h_mean[0].clone(), out.init.h_cov[0].clone()).unwrap();
        let pred = predict_prior(&start, cfg.priors.eta(), &r[0], cfg.prediction).unwrap();
        assert_eq!(&first.users[0].h.mean, pred.mean());
        let data = &out.slots[3];
        assert_eq!(data.decisions, Some(vec![0, 0]));
    }

    #[test]
    fn noiseless_single_user_pilot_converges_to_truth() {
        let m = 4;
        let mut rng = RngStream::new(8);
        let r = exp_r(m);
        let h = crate::numerics::sample_complex_gaussian(&mut rng, &CVector::zeros(m), &r).unwrap();
        let prev = UserPosterior {
            h: GaussianStat::new(h.clone() * c(0.8, 0.0), r.clone()).unwrap(),
            eta: ScalarGaussianStat::new(0.95, 1e-3).unwrap(),
            symbol: SymbolFactor::Pilot(c(1.0, 0.0)),
        };
        let pilot = c(0.6, 0.8);
        let y = &h * pilot;
        let err = |iterations: usize| {
            let cfg = OnlineConfig {
                iterations,
                ..Default::default()
            };
            let est = run_slot(&y, &[prev.clone()], &[r.clone()], Some(&[pilot]), &Constellation::qpsk(), &cfg).unwrap();
            ((&est.users[0].h.mean - &h).norm() / h.norm(), est.gamma.mean())
        };
        let (e1, g1) = err(1);
        let (e5, g5) = err(5);
        let (e50, g50) = err(50);
        assert!(e50 < e5 && e5 < e1, "{e1} {e5} {e50}");
        assert!(g50 > g5 && g5 > g1);
        assert!(e50 < 1e-2);
    }

    #[test]
    fn single_slot_frame_is_run_slot() {
        let (frame, fc) = small_frame(2, 0.05, FrameLayout::single(2, 0));
        let r = fc.covariances().unwrap();
        let cfg = OnlineConfig::default();
        let out = run_frame_online(&frame.obs, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        let start: Vec<UserPosterior> = (0..2)
            .map(|i| UserPosterior {
                h: GaussianStat::new(out.init.h_mean[i].clone(), out.init.h_cov[i].clone()).unwrap(),
                eta: cfg.priors.eta(),
                symbol: SymbolFactor::Pilot(c(0.0, 0.0)),
            })
            .collect();
        let pilots: Vec<Complex64> = frame.obs.pilots.column(0).iter().copied().collect();
        let direct = run_slot(&frame.obs.y_slot(0), &start, &r, Some(&pilots), &fc.constellation, &cfg).unwrap();
        assert_eq!(out.slots[0], direct);
    }

    #[test]
    fn static_noiseless_channel_gives_matching_slots() {
        let m = 4;
        let mut rng = RngStream::new(10);
        let r = vec![exp_r(m)];
        let h = crate::numerics::sample_complex_gaussian(&mut rng, &CVector::zeros(m), &r[0]).unwrap();
        let pilots = CMatrix::from_element(1, 2, c(1.0, 0.0));
        let y = CMatrix::from_columns(&[h.clone(), h.clone()]);
        let obs = Observation {
            y,
            pilots,
            pilot_mask: vec![true, true],
        };
        let out = run_frame_online(&obs, &r, 1e-9, &Constellation::qpsk(), &OnlineConfig::default()).unwrap();
        let a = &out.slots[0].users[0].h.mean;
        let b = &out.slots[1].users[0].h.mean;
        assert!((a - &h).norm() / h.norm() < 1e-2);
        assert!((b - &h).norm() / h.norm() < 1e-2);
        assert!((a - b).norm() / h.norm() < 1e-2);
    }

    #[test]
    fn interleaved_single_section_matches_online() {
        let layout = FrameLayout::single(2, 6);
        let (frame, fc) = small_frame(3, 0.05, layout.clone());
        let r = fc.covariances().unwrap();
        let cfg = OnlineConfig::default();
        let a = run_frame_online(&frame.obs, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        let b = run_frame_interleaved(&frame.obs, &layout, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        assert_eq!(a, b);
        let other = FrameLayout::interleaved(2, 6, 2).unwrap();
        assert!(matches!(
            run_frame_interleaved(&frame.obs, &other, &r, fc.n0, &fc.constellation, &cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seeded_frames_are_reproducible() {
        let (frame, fc) = small_frame(4, 0.05, FrameLayout::interleaved(4, 12, 2).unwrap());
        let r = fc.covariances().unwrap();
        let cfg = OnlineConfig::default();
        let a = run_frame_online(&frame.obs, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        let b = run_frame_online(&frame.obs, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn early_exit_stops_before_budget() {
        let (frame, fc) = small_frame(5, 0.01, FrameLayout::single(2, 4));
        let r = fc.covariances().unwrap();
        let cfg = OnlineConfig {
            early_exit: Some(1e-6),
            ..Default::default()
        };
        let out = run_frame_online(&frame.obs, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        assert!(out.slots.iter().any(|s| s.iterations_run < 50));
    }
}
