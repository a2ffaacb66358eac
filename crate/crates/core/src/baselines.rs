//! Reference receivers: pilot-only LMMSE channel estimation (also the
//! initial state of both variational receivers), a decision-directed Kalman
//! tracker with genie knowledge of the time correlation, and a detector with
//! perfect channel knowledge.

use num_complex::Complex64;

use crate::channel::{Constellation, Observation};
use crate::error::{Error, Result};
use crate::numerics::{rel_frobenius, CMatrix, CVector, HermitianCov};

/// Per-user pilot-based channel estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseEstimate {
    pub h_mean: Vec<CVector>,
    pub h_cov: Vec<HermitianCov>,
}

impl LmmseEstimate {
    /// Estimates as an `M × K` matrix.
    pub fn channel(&self) -> CMatrix {
        CMatrix::from_columns(&self.h_mean)
    }
}

/// Per-slot channel estimates and hard decisions of a one-shot receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineOutput {
    /// `M × K` estimate per slot.
    pub channel: Vec<CMatrix>,
    /// Constellation index per `[slot][user]`; zero on pilot slots.
    pub decisions: Vec<Vec<usize>>,
}

const ORTHOGONALITY_RTOL: f64 = 1e-9;

/// LMMSE estimate of every user's channel from one pilot block, treating
/// the channel as constant across the block.
///
/// With orthogonal pilots the users decouple: `h̃_i = Y·x_iᴴ/‖x_i‖²` is the
/// true channel plus white noise of variance `N0/‖x_i‖²`, and the
/// estimate is `R_i (R_i + s·I)⁻¹ h̃_i` with error covariance
/// `R_i − R_i (R_i + s·I)⁻¹ R_i`.
pub fn lmmse_pilot_estimate(
    y_pilot: &CMatrix,
    pilots: &CMatrix,
    r: &[HermitianCov],
    n0: f64,
) -> Result<LmmseEstimate> {
    let k = pilots.nrows();
    let m = y_pilot.nrows();
    if y_pilot.ncols() != pilots.ncols() || r.len() != k || r.iter().any(|ri| ri.dim() != m) {
        return Err(Error::DimMismatch(format!(
            "pilot block {}x{}, pilots {}x{}, {} covariances",
            m,
            y_pilot.ncols(),
            k,
            pilots.ncols(),
            r.len()
        )));
    }
    if !(n0 >= 0.0) {
        return Err(Error::Config(format!("noise variance {n0} is invalid")));
    }
    let gram = pilots * pilots.adjoint();
    let diag = CMatrix::from_diagonal(&gram.diagonal());
    if rel_frobenius(&gram, &diag) > ORTHOGONALITY_RTOL || gram.diagonal().iter().any(|z| z.re <= 0.0) {
        return Err(Error::Config("pilot sequences are not orthogonal".into()));
    }

    let mut h_mean = Vec::with_capacity(k);
    let mut h_cov = Vec::with_capacity(k);
    for i in 0..k {
        let power = gram[(i, i)].re;
        let raw = y_pilot * pilots.row(i).adjoint() / Complex64::from(power);
        let s = n0 / power;
        let eig = r[i].eigen();
        let u = &eig.vectors;
        let coords = u.adjoint() * raw;
        let gain = eig.values.map(|l| shrink(l.max(0.0), s));
        let est = u * CVector::from_fn(m, |j, _| coords[j] * gain[j]);
        let cov = eig.reconstruct(|l| {
            let l = l.max(0.0);
            l * (1.0 - shrink(l, s))
        });
        h_mean.push(est);
        h_cov.push(HermitianCov::from_hermitian_part(cov));
    }
    Ok(LmmseEstimate { h_mean, h_cov })
}

fn shrink(lambda: f64, s: f64) -> f64 {
    if lambda + s > 0.0 {
        lambda / (lambda + s)
    } else {
        0.0
    }
}

/// Pilot estimate over the leading pilot block of `obs`.
pub fn lmmse_from_observation(obs: &Observation, r: &[HermitianCov], n0: f64) -> Result<LmmseEstimate> {
    let block = obs.leading_pilot_block();
    if block.is_empty() {
        return Err(Error::Config("frame has no leading pilot block".into()));
    }
    let y = obs.y.columns(block.start, block.len()).into_owned();
    let x = obs.pilots.columns(block.start, block.len()).into_owned();
    lmmse_pilot_estimate(&y, &x, r, n0)
}

/// Joint linear MMSE equalizer `(Hᴴ H + N0·I)⁻¹ Hᴴ` for unit-energy symbols.
fn lmmse_equalizer(h: &CMatrix, n0: f64) -> Result<CMatrix> {
    let k = h.ncols();
    let gram = h.adjoint() * h + CMatrix::identity(k, k) * Complex64::from(n0);
    let inv = gram
        .try_inverse()
        .ok_or(Error::Singular { min_eigenvalue: 0.0, trace: 0.0 })?;
    Ok(inv * h.adjoint())
}

fn detect_linear(w: &CMatrix, y: CVector, constellation: &Constellation) -> Vec<usize> {
    (w * y).iter().map(|&z| constellation.nearest(z)).collect()
}

/// Pilot-only LMMSE receiver: the leading-block estimate is frozen for the
/// whole frame and every data slot is detected by linear MMSE equalization
/// followed by a nearest-point decision.
pub fn lmmse_receiver(
    obs: &Observation,
    r: &[HermitianCov],
    n0: f64,
    constellation: &Constellation,
) -> Result<BaselineOutput> {
    let est = lmmse_from_observation(obs, r, n0)?;
    let h = est.channel();
    let w = lmmse_equalizer(&h, n0)?;
    let mut decisions = Vec::with_capacity(obs.slots());
    for t in 0..obs.slots() {
        if obs.pilot_mask[t] {
            decisions.push(vec![0; obs.users()]);
        } else {
            decisions.push(detect_linear(&w, obs.y_slot(t), constellation));
        }
    }
    Ok(BaselineOutput {
        channel: vec![h; obs.slots()],
        decisions,
    })
}

/// Decision-directed Kalman tracker over the stacked `M·K` channel state.
///
/// Starts from the stationary prior `CN(0, R)`, predicts with the known
/// per-user correlation `eta` and process covariance `(1 − η²)·R`, updates
/// with the known pilots on pilot slots and with its own hard decisions on
/// data slots. A single forward pass.
pub fn kf_track(
    obs: &Observation,
    eta: &[f64],
    r: &[HermitianCov],
    n0: f64,
    constellation: &Constellation,
) -> Result<BaselineOutput> {
    let m = obs.antennas();
    let k = obs.users();
    if eta.len() != k || r.len() != k {
        return Err(Error::DimMismatch(format!("{} eta values, {} covariances for {k} users", eta.len(), r.len())));
    }
    let mk = m * k;
    let mut state = CVector::zeros(mk);
    let mut cov = CMatrix::zeros(mk, mk);
    for i in 0..k {
        cov.view_mut((i * m, i * m), (m, m)).copy_from(r[i].matrix());
    }
    let noise = CMatrix::identity(m, m) * Complex64::from(n0.max(1e-300));

    let mut channel = Vec::with_capacity(obs.slots());
    let mut decisions = Vec::with_capacity(obs.slots());
    for t in 0..obs.slots() {
        // predict
        for i in 0..k {
            let e = Complex64::from(eta[i]);
            state.rows_mut(i * m, m).scale_mut(eta[i]);
            for j in 0..k {
                let ej = Complex64::from(eta[j]);
                let mut block = cov.view_mut((i * m, j * m), (m, m));
                block *= e * ej;
            }
            let q = 1.0 - eta[i] * eta[i];
            let mut block = cov.view_mut((i * m, i * m), (m, m));
            block += r[i].matrix() * Complex64::from(q);
        }
        let predicted = CMatrix::from_fn(m, k, |a, i| state[i * m + a]);
        let y = obs.y_slot(t);

        let (x, slot_decisions) = if obs.pilot_mask[t] {
            (obs.pilots.column(t).into_owned(), vec![0; k])
        } else {
            let w = lmmse_equalizer(&predicted, n0)?;
            let d = detect_linear(&w, y.clone(), constellation);
            let pts = constellation.points();
            (CVector::from_fn(k, |i, _| pts[d[i]]), d)
        };

        // measurement y = (xᵀ ⊗ I_M)·h + n
        let a = CMatrix::from_fn(m, mk, |row, col| if col % m == row { x[col / m] } else { Complex64::new(0.0, 0.0) });
        let pa = &cov * a.adjoint();
        let s = &a * &pa + &noise;
        let chol = s.cholesky().ok_or(Error::Singular { min_eigenvalue: 0.0, trace: 0.0 })?;
        let gain_t = chol.solve(&pa.adjoint());
        let innovation = &y - &a * &state;
        state += gain_t.adjoint() * innovation;
        cov -= &pa * &gain_t;
        cov = (&cov + cov.adjoint()) * Complex64::from(0.5);

        channel.push(CMatrix::from_fn(m, k, |a, i| state[i * m + a]));
        decisions.push(slot_decisions);
    }
    Ok(BaselineOutput { channel, decisions })
}

/// Detection with the true channel: joint MAP by exhaustive search when
/// `|S|^K ≤ 4096`, otherwise linear MMSE equalization and nearest point.
pub fn genie_detect(
    obs: &Observation,
    h: &[CMatrix],
    n0: f64,
    constellation: &Constellation,
) -> Result<Vec<Vec<usize>>> {
    if h.len() != obs.slots() {
        return Err(Error::DimMismatch(format!("{} channel slots for {} observations", h.len(), obs.slots())));
    }
    let k = obs.users();
    let exhaustive = (constellation.len() as f64).powi(k as i32) <= 4096.0;
    let mut out = Vec::with_capacity(obs.slots());
    for t in 0..obs.slots() {
        if obs.pilot_mask[t] {
            out.push(vec![0; k]);
        } else if exhaustive {
            out.push(map_search(&h[t], &obs.y_slot(t), n0, constellation));
        } else {
            let w = lmmse_equalizer(&h[t], n0)?;
            out.push(detect_linear(&w, obs.y_slot(t), constellation));
        }
    }
    Ok(out)
}

/// Exhaustive minimizer of `‖y − H·x‖² − N0·Σ ln p(x_i)`.
fn map_search(h: &CMatrix, y: &CVector, n0: f64, constellation: &Constellation) -> Vec<usize> {
    let k = h.ncols();
    let pts = constellation.points();
    let contrib: Vec<Vec<CVector>> = (0..k)
        .map(|i| pts.iter().map(|&a| h.column(i) * a).collect())
        .collect();
    let penalty: Vec<f64> = constellation
        .priors()
        .iter()
        .map(|&p| if n0 > 0.0 { -n0 * p.ln() } else { 0.0 })
        .collect();

    struct Search<'a> {
        contrib: &'a [Vec<CVector>],
        penalty: &'a [f64],
        residual: Vec<CVector>,
        current: Vec<usize>,
        best: Vec<usize>,
        best_metric: f64,
    }

    impl Search<'_> {
        fn descend(&mut self, depth: usize, pen: f64) {
            if depth == self.contrib.len() {
                let metric = self.residual[depth].norm_squared() + pen;
                if metric < self.best_metric {
                    self.best_metric = metric;
                    self.best.copy_from_slice(&self.current);
                }
                return;
            }
            for a in 0..self.contrib[depth].len() {
                let (head, tail) = self.residual.split_at_mut(depth + 1);
                tail[0].copy_from(&head[depth]);
                tail[0] -= &self.contrib[depth][a];
                self.current[depth] = a;
                self.descend(depth + 1, pen + self.penalty[a]);
            }
        }
    }

    let mut search = Search {
        contrib: &contrib,
        penalty: &penalty,
        residual: vec![y.clone(); k + 1],
        current: vec![0; k],
        best: vec![0; k],
        best_metric: f64::INFINITY,
    };
    search.descend(0, 0.0);
    search.best
}
