//! Block variational receiver: smooths every user's channel over the whole
//! frame with a Gauss-Markov coupling between neighboring slots, learns the
//! time correlation and the innovation precision `ν = (1 − η²)⁻¹` from the
//! full trajectory, and refines symbols and per-slot noise precisions.
//!
//! Channel factors live in the eigenbasis of the spatial covariance `R`.
//! The transition density couples slots only through `R⁻¹`, so every
//! channel posterior is diagonal there and `Tr{R⁻¹Σ}` is a plain sum.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::baselines::LmmseEstimate;
use crate::channel::{Constellation, Observation};
use crate::error::{Error, Result};
use crate::expectations::{
    expected_weighted_quadratic_diag, expected_weighted_quadratic_diag_literal, ColumnMoments, GammaStat,
    GaussianStat, ScalarGaussianStat,
};
use crate::numerics::{CMatrix, CVector, HermitianCov};
use crate::online::{
    clamp_eta, partial_residual, run_frame_online, update_gamma, update_symbol, OnlineConfig, OnlineOutput,
    SymbolFactor, VbPriors,
};

/// Forward neighbor used for the last slot, which has no successor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    /// `⟨η⟩⟨h_T⟩`, so the forward pull cancels in expectation.
    #[default]
    PseudoNeighbor,
    /// `⟨η⟩ĥ_{0|0}`, the pilot-based initial estimate.
    InitialEstimate,
}

/// How the innovation-precision rate is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NuRateMode {
    /// `R⁻¹`-weighted quadratics throughout.
    #[default]
    Lemma,
    /// The `τ` terms scaled by the scalar `Tr R⁻¹` instead.
    Literal,
}

/// Which second moment of the previous channel enters the correlation
/// update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaEvidence {
    /// `⟨h_{t−1}ᴴ R⁻¹ h_{t−1}⟩`, including the posterior covariance.
    #[default]
    WithCovariance,
    /// `⟨h_{t−1}⟩ᴴ R⁻¹ ⟨h_{t−1}⟩`, means only.
    MeansOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockConfig {
    pub iterations: usize,
    pub priors: VbPriors,
    pub boundary: BoundaryMode,
    pub nu_rate: NuRateMode,
    pub eta_evidence: EtaEvidence,
    /// Iterations per slot of the online pass that seeds the block sweeps.
    pub warm_start_iterations: usize,
    /// Per-user time correlation handed to the receiver; fixes `η` and
    /// `ν = (1 − η²)⁻¹`.
    pub known_eta: Option<Vec<f64>>,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            iterations: 50,
            priors: VbPriors::default(),
            boundary: BoundaryMode::PseudoNeighbor,
            nu_rate: NuRateMode::Lemma,
            eta_evidence: EtaEvidence::WithCovariance,
            warm_start_iterations: 50,
            known_eta: None,
        }
    }
}

/// Eigen-decomposed spatial covariance of one user.
#[derive(Debug, Clone)]
pub struct SpatialBasis {
    values: Vec<f64>,
    inv_values: Vec<f64>,
    vectors: CMatrix,
}

impl SpatialBasis {
    pub fn new(r: &HermitianCov) -> Result<Self> {
        let eig = r.eigen();
        let trace = eig.trace();
        let min = eig.min_eigenvalue();
        if !(min > 1e-12 * trace) {
            return Err(Error::Singular {
                min_eigenvalue: min,
                trace,
            });
        }
        let values: Vec<f64> = eig.values.iter().copied().collect();
        let inv_values = values.iter().map(|l| 1.0 / l).collect();
        Ok(Self {
            values,
            inv_values,
            vectors: eig.vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Eigenvalues of `R⁻¹`.
    pub fn inv_values(&self) -> &[f64] {
        &self.inv_values
    }

    pub fn to_coords(&self, v: &CVector) -> CVector {
        self.vectors.adjoint() * v
    }

    pub fn from_coords(&self, w: &CVector) -> CVector {
        &self.vectors * w
    }

    /// Diagonal of `Vᴴ Σ V`.
    pub fn rotated_diag(&self, cov: &HermitianCov) -> Vec<f64> {
        let rotated = self.vectors.adjoint() * cov.matrix() * &self.vectors;
        rotated.diagonal().iter().map(|z| z.re.max(0.0)).collect()
    }

    pub fn dense(&self, diag: &[f64]) -> HermitianCov {
        let mut scaled = self.vectors.clone();
        for (c, &d) in diag.iter().enumerate() {
            scaled.column_mut(c).iter_mut().for_each(|z| *z *= d);
        }
        HermitianCov::from_hermitian_part(scaled * self.vectors.adjoint())
    }
}

/// Channel factor of one user in one slot, in the user's spatial eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockChannel {
    /// Eigen-coordinates of the mean.
    pub coords: CVector,
    /// Mean in antenna space.
    pub mean: CVector,
    pub var_diag: Vec<f64>,
}

impl BlockChannel {
    fn from_coords(basis: &SpatialBasis, coords: CVector, var_diag: Vec<f64>) -> Self {
        Self {
            mean: basis.from_coords(&coords),
            coords,
            var_diag,
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

    pub fn to_stat(&self, basis: &SpatialBasis) -> GaussianStat {
        GaussianStat {
            mean: self.mean.clone(),
            cov: basis.dense(&self.var_diag),
        }
    }
}

/// Channel update of one user in one slot:
/// `var_k = 1/(γ⟨|x|²⟩ + (1 + ⟨η²⟩)ν/λ_k)`,
/// `w_k = var_k·(γ⟨x⟩*(Vᴴ residual)_k + ⟨η⟩ν(prev_k + next_k)/λ_k)`.
#[allow(clippy::too_many_arguments)]
pub fn update_channel_block(
    basis: &SpatialBasis,
    residual: &CVector,
    x_mean: Complex64,
    x_second: f64,
    gamma: f64,
    eta: ScalarGaussianStat,
    nu: f64,
    prev: &CVector,
    next: &CVector,
) -> BlockChannel {
    let proj = basis.to_coords(residual);
    let data_scale = x_mean.conj() * gamma;
    let data_prec = gamma * x_second;
    let coupling = (1.0 + eta.second_moment()) * nu;
    let m = basis.dim();
    let mut coords = CVector::zeros(m);
    let mut var_diag = Vec::with_capacity(m);
    for k in 0..m {
        let inv_l = basis.inv_values[k];
        let var = 1.0 / (data_prec + coupling * inv_l);
        coords[k] = (proj[k] * data_scale + (prev[k] + next[k]) * (eta.mean * nu * inv_l)) * var;
        var_diag.push(var);
    }
    BlockChannel::from_coords(basis, coords, var_diag)
}

/// Time-correlation update from the trajectory (`chans[0]` is the initial
/// estimate): `τ = (ν Σ_t ⟨‖h_{t−1}‖²_{R⁻¹}⟩ + 1/τ₀)⁻¹`,
/// `⟨η⟩ = τ(ν Σ_t Re{⟨h_{t−1}⟩ᴴ R⁻¹ ⟨h_t⟩} + η₀/τ₀)`, then [`clamp_eta`].
/// The energy term includes `Tr{R⁻¹Σ_{t−1}}` unless `evidence` is
/// [`EtaEvidence::MeansOnly`].
pub fn update_eta_block(
    basis: &SpatialBasis,
    chans: &[&BlockChannel],
    nu: f64,
    prior: ScalarGaussianStat,
    evidence: EtaEvidence,
) -> ScalarGaussianStat {
    let mut energy = 0.0;
    let mut cross = 0.0;
    for pair in chans.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for k in 0..basis.dim() {
            let inv_l = basis.inv_values[k];
            energy += a.coords[k].norm_sqr() * inv_l;
            cross += (a.coords[k].conj() * b.coords[k]).re * inv_l;
            if evidence == EtaEvidence::WithCovariance {
                energy += a.var_diag[k] * inv_l;
            }
        }
    }
    let var = 1.0 / (nu * energy + 1.0 / prior.var);
    let mean = var * (nu * cross + prior.mean / prior.var);
    clamp_eta(ScalarGaussianStat { mean, var }, prior)
}

/// Innovation-precision update anchored at the prior: shape `ā₀ + T·M`,
/// rate `b̄₀ + Σ_t ⟨(h_t − η h_{t−1})ᴴ R⁻¹ (h_t − η h_{t−1})⟩`.
/// `chans[0]` is the initial estimate with its covariance.
pub fn update_nu(
    basis: &SpatialBasis,
    chans: &[&BlockChannel],
    eta: ScalarGaussianStat,
    prior: GammaStat,
    mode: NuRateMode,
) -> GammaStat {
    let slots = chans.len().saturating_sub(1);
    let weight = basis.inv_values();
    let increment: f64 = chans
        .windows(2)
        .map(|pair| {
            let (a, y) = (pair[0], pair[1]);
            match mode {
                NuRateMode::Lemma => {
                    expected_weighted_quadratic_diag(&y.coords, &y.var_diag, &a.coords, &a.var_diag, eta, weight)
                }
                NuRateMode::Literal => expected_weighted_quadratic_diag_literal(
                    &y.coords,
                    &y.var_diag,
                    &a.coords,
                    &a.var_diag,
                    eta,
                    weight,
                ),
            }
        })
        .sum();
    GammaStat {
        shape: prior.shape + (slots * basis.dim()) as f64,
        rate: prior.rate + increment,
    }
}

/// Final variational state of the block receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPosterior {
    /// Channel factors per `[user][slot]`.
    pub h: Vec<Vec<GaussianStat>>,
    pub eta: Vec<ScalarGaussianStat>,
    pub nu: Vec<GammaStat>,
    pub gamma: Vec<GammaStat>,
    /// Symbol factors per `[slot][user]`.
    pub symbols: Vec<Vec<SymbolFactor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub init: LmmseEstimate,
    pub posterior: BlockPosterior,
    /// Decisions per `[slot][user]`, zero on pilot slots.
    pub decisions: Vec<Vec<usize>>,
    pub iterations_run: usize,
}

impl BlockOutput {
    /// Posterior channel means, one `M × K` matrix per slot.
    pub fn channel(&self) -> Vec<CMatrix> {
        let slots = self.posterior.h.first().map_or(0, Vec::len);
        (0..slots)
            .map(|t| {
                CMatrix::from_columns(&self.posterior.h.iter().map(|u| u[t].mean.clone()).collect::<Vec<_>>())
            })
            .collect()
    }
}

struct SymbolState {
    factor: SymbolFactor,
    mean: Complex64,
    var: f64,
}

impl SymbolState {
    fn new(factor: SymbolFactor, constellation: &Constellation) -> Self {
        Self {
            mean: factor.mean(constellation),
            var: factor.variance(constellation),
            factor,
        }
    }

    fn second_moment(&self) -> f64 {
        self.mean.norm_sqr() + self.var
    }
}

/// Runs the block receiver over a complete frame. The sweeps start from one
/// pass of the online receiver; each sweep updates all channels slot by
/// slot, then correlations, then innovation precisions, then the data
/// symbols and the noise precision of every slot.
pub fn run_block(
    obs: &Observation,
    r: &[HermitianCov],
    n0: f64,
    constellation: &Constellation,
    cfg: &BlockConfig,
) -> Result<BlockOutput> {
    cfg.priors.validate()?;
    let k = obs.users();
    if r.len() != k {
        return Err(Error::DimMismatch(format!("{k} users, {} covariances", r.len())));
    }
    if let Some(known) = &cfg.known_eta {
        if known.len() != k {
            return Err(Error::DimMismatch(format!("{} known eta values for {k} users", known.len())));
        }
    }
    let online_cfg = OnlineConfig {
        iterations: cfg.warm_start_iterations,
        priors: cfg.priors,
        known_eta: cfg.known_eta.clone(),
        ..OnlineConfig::default()
    };
    let warm = run_frame_online(obs, r, n0, constellation, &online_cfg)?;
    run_block_from(obs, r, constellation, cfg, warm)
}

/// Block sweeps seeded by an existing online pass over the same frame.
pub fn run_block_from(
    obs: &Observation,
    r: &[HermitianCov],
    constellation: &Constellation,
    cfg: &BlockConfig,
    warm: OnlineOutput,
) -> Result<BlockOutput> {
    let k = obs.users();
    let t_len = obs.slots();
    let bases: Vec<SpatialBasis> = r.iter().map(SpatialBasis::new).collect::<Result<_>>()?;
    let OnlineOutput { init, slots } = warm;

    // chans[i][t]: t = 0 is the fixed initial estimate, t = 1..=T the slots.
    let mut chans: Vec<Vec<BlockChannel>> = (0..k)
        .map(|i| {
            let b = &bases[i];
            let mut row = Vec::with_capacity(t_len + 1);
            row.push(BlockChannel::from_coords(
                b,
                b.to_coords(&init.h_mean[i]),
                b.rotated_diag(&init.h_cov[i]),
            ));
            for s in &slots {
                let h = &s.users[i].h;
                row.push(BlockChannel::from_coords(b, b.to_coords(&h.mean), b.rotated_diag(&h.cov)));
            }
            row
        })
        .collect();
    let mut symbols: Vec<Vec<SymbolState>> = slots
        .iter()
        .map(|s| {
            s.users
                .iter()
                .map(|u| SymbolState::new(u.symbol.clone(), constellation))
                .collect()
        })
        .collect();
    let mut gammas: Vec<GammaStat> = slots.iter().map(|s| s.gamma).collect();
    let shape = cfg.priors.nu_shape + (t_len * obs.antennas()) as f64;
    let (mut etas, mut nus): (Vec<ScalarGaussianStat>, Vec<GammaStat>) = (0..k)
        .map(|i| {
            let eta = match &cfg.known_eta {
                Some(known) => ScalarGaussianStat::point(known[i]),
                None => slots.last().map_or(cfg.priors.eta(), |s| s.users[i].eta),
            };
            let spread = (1.0 - eta.second_moment()).max(f64::EPSILON);
            (eta, GammaStat { shape, rate: shape * spread })
        })
        .unzip();
    drop(slots);

    let ys: Vec<CVector> = (0..t_len).map(|t| obs.y_slot(t)).collect();
    let mut iterations_run = 0;
    for _ in 0..cfg.iterations {
        iterations_run += 1;

        for t in 1..=t_len {
            for i in 0..k {
                let means: Vec<&CVector> = chans.iter().map(|c| &c[t].mean).collect();
                let x_mean: Vec<Complex64> = symbols[t - 1].iter().map(|s| s.mean).collect();
                let residual = partial_residual(&ys[t - 1], &means, &x_mean, i);
                let next = if t < t_len {
                    chans[i][t + 1].coords.clone()
                } else {
                    let anchor = match cfg.boundary {
                        BoundaryMode::PseudoNeighbor => &chans[i][t].coords,
                        BoundaryMode::InitialEstimate => &chans[i][0].coords,
                    };
                    anchor * Complex64::from(etas[i].mean)
                };
                let sym = &symbols[t - 1][i];
                let upd = update_channel_block(
                    &bases[i],
                    &residual,
                    sym.mean,
                    sym.second_moment(),
                    gammas[t - 1].mean(),
                    etas[i],
                    nus[i].mean(),
                    &chans[i][t - 1].coords,
                    &next,
                );
                chans[i][t] = upd;
            }
        }

        if cfg.known_eta.is_none() {
            for i in 0..k {
                let row: Vec<&BlockChannel> = chans[i].iter().collect();
                etas[i] = update_eta_block(&bases[i], &row, nus[i].mean(), cfg.priors.eta(), cfg.eta_evidence);
            }
            for i in 0..k {
                let row: Vec<&BlockChannel> = chans[i].iter().collect();
                nus[i] = update_nu(&bases[i], &row, etas[i], cfg.priors.nu(), cfg.nu_rate);
            }
        }

        for t in 0..t_len {
            let mut x_mean: Vec<Complex64> = symbols[t].iter().map(|s| s.mean).collect();
            if !obs.pilot_mask[t] {
                for i in 0..k {
                    let means: Vec<&CVector> = chans.iter().map(|c| &c[t + 1].mean).collect();
                    let residual = partial_residual(&ys[t], &means, &x_mean, i);
                    let pmf = update_symbol(&residual, chans[i][t + 1].moments(), gammas[t].mean(), constellation, i)?;
                    let state = SymbolState::new(SymbolFactor::Data(pmf), constellation);
                    x_mean[i] = state.mean;
                    symbols[t][i] = state;
                }
            }
            let cols: Vec<ColumnMoments<'_>> = chans.iter().map(|c| c[t + 1].moments()).collect();
            let x_var: Vec<f64> = symbols[t].iter().map(|s| s.var).collect();
            gammas[t] = update_gamma(&ys[t], &cols, &x_mean, &x_var, &cfg.priors)?;
        }
    }

    let decisions = symbols
        .iter()
        .map(|row| {
            row.iter()
                .map(|s| match &s.factor {
                    SymbolFactor::Data(pmf) => pmf.argmax(),
                    SymbolFactor::Pilot(_) => 0,
                })
                .collect()
        })
        .collect();
    let h = chans
        .iter()
        .zip(&bases)
        .map(|(row, b)| row[1..].iter().map(|c| c.to_stat(b)).collect())
        .collect();
    let posterior = BlockPosterior {
        h,
        eta: etas,
        nu: nus,
        gamma: gammas,
        symbols: symbols
            .into_iter()
            .map(|row| row.into_iter().map(|s| s.factor).collect())
            .collect(),
    };
    Ok(BlockOutput {
        init,
        posterior,
        decisions,
        iterations_run,
    })
}
