//! Channel and frame generation: spatially correlated, Gauss-Markov
//! time-correlated user channels, pilot/data symbol streams, AWGN, and the
//! received signal `y_t = H_t·x_t + n_t`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bessel_j0, hermitian_sqrt, CMatrix, CVector, HermitianCov, RngStream};

/// Spatial correlation model for one user's channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CorrelationKind {
    /// `R = I_M / M`.
    IdentityScaled,
    /// `[R]_kl = α^{k−l}/M` for `k ≥ l`, Hermitian-reflected above the diagonal.
    Exponential { alpha_re: f64, alpha_im: f64 },
}

impl CorrelationKind {
    pub fn exponential(alpha: Complex64) -> Self {
        Self::Exponential {
            alpha_re: alpha.re,
            alpha_im: alpha.im,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationSpec {
    pub kind: CorrelationKind,
    pub antennas: usize,
}

/// Builds the (unit-trace) spatial covariance described by `spec`.
pub fn make_correlation(spec: &CorrelationSpec) -> Result<HermitianCov> {
    let m = spec.antennas;
    if m == 0 {
        return Err(Error::Config("antenna count must be positive".into()));
    }
    let inv_m = 1.0 / m as f64;
    match spec.kind {
        CorrelationKind::IdentityScaled => Ok(HermitianCov::scaled_identity(m, inv_m)),
        CorrelationKind::Exponential { alpha_re, alpha_im } => {
            let alpha = Complex64::new(alpha_re, alpha_im);
            if !(alpha.norm() < 1.0) {
                return Err(Error::BadAlpha(alpha.norm()));
            }
            let mut powers = Vec::with_capacity(m);
            let mut p = Complex64::new(1.0, 0.0);
            for _ in 0..m {
                powers.push(p);
                p *= alpha;
            }
            let mat = CMatrix::from_fn(m, m, |k, l| {
                if k >= l {
                    powers[k - l] * inv_m
                } else {
                    powers[l - k].conj() * inv_m
                }
            });
            HermitianCov::new(mat)
        }
    }
}

/// Time correlation `J0(2π·fd·Ts)` clamped to `[0, 1]`.
pub fn eta_from_doppler(doppler_hz: f64, sample_period_s: f64) -> f64 {
    bessel_j0(2.0 * PI * doppler_hz * sample_period_s).clamp(0.0, 1.0)
}

/// `N0 = K / (M·10^{SNR/10})`, from `SNR = K/(M·N0)`.
pub fn noise_variance_from_snr(snr_db: f64, antennas: usize, users: usize) -> f64 {
    users as f64 / (antennas as f64 * 10f64.powf(snr_db / 10.0))
}

/// Finite symbol alphabet with a prior pmf and unit average energy.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    name: String,
    points: Vec<Complex64>,
    priors: Vec<f64>,
}

impl Constellation {
    pub fn new(name: impl Into<String>, points: Vec<Complex64>, priors: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != priors.len() {
            return Err(Error::Config("constellation needs one prior per point".into()));
        }
        if priors.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config("constellation priors must be nonnegative".into()));
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("constellation priors sum to {total}")));
        }
        let energy: f64 = points.iter().zip(&priors).map(|(a, p)| p * a.norm_sqr()).sum();
        if (energy - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("constellation energy is {energy}, expected 1")));
        }
        Ok(Self {
            name: name.into(),
            points,
            priors,
        })
    }

    fn uniform(name: &str, points: Vec<Complex64>) -> Self {
        let n = points.len();
        let energy = points.iter().map(|a| a.norm_sqr()).sum::<f64>() / n as f64;
        let scale = energy.sqrt().recip();
        let points = points.into_iter().map(|a| a * scale).collect();
        Self::new(name, points, vec![1.0 / n as f64; n]).expect("built-in constellation is valid")
    }

    pub fn bpsk() -> Self {
        Self::uniform("bpsk", vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)])
    }

    pub fn qpsk() -> Self {
        let pts = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
        Self::uniform("qpsk", pts.iter().map(|&(r, i)| Complex64::new(r, i)).collect())
    }

    pub fn qam16() -> Self {
        let levels = [-3.0, -1.0, 1.0, 3.0];
        let pts = levels
            .iter()
            .flat_map(|&i| levels.iter().map(move |&r| Complex64::new(r, i)))
            .collect();
        Self::uniform("16qam", pts)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the point closest to `z`.
    pub fn nearest(&self, z: Complex64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (idx, a) in self.points.iter().enumerate() {
            let d = (a - z).norm_sqr();
            if d < best_d {
                best_d = d;
                best = idx;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    #[serde(rename = "16qam")]
    Qam16,
}

impl Modulation {
    pub fn constellation(self) -> Constellation {
        match self {
            Modulation::Bpsk => Constellation::bpsk(),
            Modulation::Qpsk => Constellation::qpsk(),
            Modulation::Qam16 => Constellation::qam16(),
        }
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modulation::Bpsk => "bpsk",
            Modulation::Qpsk => "qpsk",
            Modulation::Qam16 => "16qam",
        })
    }
}

impl FromStr for Modulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Modulation::Bpsk),
            "qpsk" => Ok(Modulation::Qpsk),
            "16qam" | "qam16" => Ok(Modulation::Qam16),
            other => Err(Error::Config(format!("unknown modulation '{other}'"))),
        }
    }
}

/// Per-user time correlation and spatial covariance for one Gauss-Markov step.
#[derive(Debug, Clone)]
pub struct GaussMarkovParams {
    eta: Vec<f64>,
    r: Vec<HermitianCov>,
    r_sqrt: Vec<CMatrix>,
}

impl GaussMarkovParams {
    pub fn new(eta: Vec<f64>, r: Vec<HermitianCov>) -> Result<Self> {
        if eta.len() != r.len() || eta.is_empty() {
            return Err(Error::DimMismatch(format!(
                "{} eta values for {} covariances",
                eta.len(),
                r.len()
            )));
        }
        if let Some(bad) = eta.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::Config(format!("eta {bad} outside [0, 1]")));
        }
        let dim = r[0].dim();
        if r.iter().any(|ri| ri.dim() != dim) {
            return Err(Error::DimMismatch("user covariances differ in size".into()));
        }
        let r_sqrt = r.iter().map(hermitian_sqrt).collect::<Result<Vec<_>>>()?;
        Ok(Self { eta, r, r_sqrt })
    }

    pub fn users(&self) -> usize {
        self.eta.len()
    }

    pub fn antennas(&self) -> usize {
        self.r[0].dim()
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn covariances(&self) -> &[HermitianCov] {
        &self.r
    }

    /// Replaces the per-user correlation coefficients (each clamped to [0, 1]).
    pub fn set_eta(&mut self, eta: &[f64]) {
        assert_eq!(eta.len(), self.eta.len());
        for (dst, &src) in self.eta.iter_mut().zip(eta) {
            *dst = src.clamp(0.0, 1.0);
        }
    }

    /// One Gauss-Markov step for every user column, or the stationary
    /// initial draw `R^{1/2}·g` when `prev` is `None`.
    pub fn evolve_channel(&self, rng: &mut RngStream, prev: Option<&CMatrix>) -> Result<CMatrix> {
        let m = self.antennas();
        let k = self.users();
        if let Some(p) = prev {
            if p.ncols() != k || p.nrows() != m {
                return Err(Error::DimMismatch(format!(
                    "previous channel is {}x{}, expected {m}x{k}",
                    p.nrows(),
                    p.ncols()
                )));
            }
        }
        let mut h = CMatrix::zeros(m, k);
        for i in 0..k {
            let g = rng.complex_normal_vector(m);
            let innovation = &self.r_sqrt[i] * g;
            let col = match prev {
                None => innovation,
                Some(p) => {
                    let eta = self.eta[i];
                    p.column(i) * Complex64::from(eta)
                        + innovation * Complex64::from((1.0 - eta * eta).max(0.0).sqrt())
                }
            };
            h.set_column(i, &col);
        }
        Ok(h)
    }
}

/// How the true time correlation of each user is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum EtaProcess {
    /// The same fixed value for every user.
    Fixed { value: f64 },
    /// `J0(2π·fd·Ts)` for every user.
    Doppler { doppler_hz: f64, sample_period_s: f64 },
    /// Draws from `N(mean, variance)` clamped to [0, 1], either once per
    /// frame or independently every slot.
    SlowlyVarying {
        mean: f64,
        variance: f64,
        #[serde(default = "default_true")]
        per_slot: bool,
    },
}

fn default_true() -> bool {
    true
}

impl EtaProcess {
    /// The value a receiver told the "true" correlation would use.
    pub fn nominal(&self) -> f64 {
        match *self {
            EtaProcess::Fixed { value } => value,
            EtaProcess::Doppler {
                doppler_hz,
                sample_period_s,
            } => eta_from_doppler(doppler_hz, sample_period_s),
            EtaProcess::SlowlyVarying { mean, .. } => mean.clamp(0.0, 1.0),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            EtaProcess::SlowlyVarying { mean, variance, .. } => {
                (mean + variance.sqrt() * rng.standard_normal()).clamp(0.0, 1.0)
            }
            _ => self.nominal(),
        }
    }
}

/// Pilot/data section lengths of a frame. A single section is the plain
/// pilot-then-data layout; several sections give the interleaved layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLayout {
    sections: Vec<(usize, usize)>,
}

impl FrameLayout {
    pub fn single(pilots: usize, data: usize) -> Self {
        Self {
            sections: vec![(pilots, data)],
        }
    }

    /// Splits `pilots` and `data` as evenly as possible over `sections`
    /// sections, earlier sections taking any remainder.
    pub fn interleaved(pilots: usize, data: usize, sections: usize) -> Result<Self> {
        if sections == 0 {
            return Err(Error::Config("interleaving needs at least one section".into()));
        }
        let split = |total: usize, l: usize| total / sections + usize::from(l < total % sections);
        Ok(Self {
            sections: (0..sections).map(|l| (split(pilots, l), split(data, l))).collect(),
        })
    }

    /// Explicit section lengths, checked against the total pilot and data budgets.
    pub fn from_sections(sections: Vec<(usize, usize)>, pilots: usize, data: usize) -> Result<Self> {
        let sum_p: usize = sections.iter().map(|s| s.0).sum();
        let sum_d: usize = sections.iter().map(|s| s.1).sum();
        if sections.is_empty() || sum_p != pilots || sum_d != data {
            return Err(Error::Config(format!(
                "section lengths sum to ({sum_p}, {sum_d}), expected ({pilots}, {data})"
            )));
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> &[(usize, usize)] {
        &self.sections
    }

    pub fn pilot_slots(&self) -> usize {
        self.sections.iter().map(|s| s.0).sum()
    }

    pub fn data_slots(&self) -> usize {
        self.sections.iter().map(|s| s.1).sum()
    }

    pub fn total_slots(&self) -> usize {
        self.pilot_slots() + self.data_slots()
    }

    pub fn pilot_mask(&self) -> Vec<bool> {
        self.sections
            .iter()
            .flat_map(|&(p, d)| std::iter::repeat_n(true, p).chain(std::iter::repeat_n(false, d)))
            .collect()
    }
}

/// Orthogonal unit-modulus pilots: the first `users` rows of the `len`-point
/// DFT matrix, so `X_p·X_pᴴ = len·I`.
pub fn dft_pilots(users: usize, len: usize) -> Result<CMatrix> {
    if len < users {
        return Err(Error::Config(format!(
            "{len} pilot slots cannot carry orthogonal pilots for {users} users"
        )));
    }
    Ok(CMatrix::from_fn(users, len, |i, tau| {
        Complex64::from_polar(1.0, -2.0 * PI * (i * tau) as f64 / len as f64)
    }))
}

/// Everything needed to synthesize one frame.
#[derive(Debug, Clone)]
pub struct FrameConfig {
    pub antennas: usize,
    pub users: usize,
    pub layout: FrameLayout,
    pub constellation: Constellation,
    pub correlation: CorrelationKind,
    pub eta: EtaProcess,
    pub n0: f64,
}

impl FrameConfig {
    pub fn covariances(&self) -> Result<Vec<HermitianCov>> {
        let r = make_correlation(&CorrelationSpec {
            kind: self.correlation,
            antennas: self.antennas,
        })?;
        Ok(vec![r; self.users])
    }
}

/// What the receiver sees: received vectors and the known pilot symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `M × T`, column `t` is `y_t`.
    pub y: CMatrix,
    /// `K × T`; pilot columns hold the pilot symbols, data columns are zero.
    pub pilots: CMatrix,
    pub pilot_mask: Vec<bool>,
}

impl Observation {
    pub fn antennas(&self) -> usize {
        self.y.nrows()
    }

    pub fn users(&self) -> usize {
        self.pilots.nrows()
    }

    pub fn slots(&self) -> usize {
        self.y.ncols()
    }

    pub fn y_slot(&self, t: usize) -> CVector {
        self.y.column(t).into_owned()
    }

    /// Slots of the leading contiguous pilot block.
    pub fn leading_pilot_block(&self) -> std::ops::Range<usize> {
        let len = self.pilot_mask.iter().take_while(|&&p| p).count();
        0..len
    }
}

/// Ground truth and observation for one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    /// Initial channel state `H_0` (before the first transmitted slot).
    pub h0: CMatrix,
    /// `H_1..H_T`, each `M × K`.
    pub h: Vec<CMatrix>,
    /// Transmitted symbols, `K × T`.
    pub x: CMatrix,
    /// Constellation index per `[slot][user]`; meaningful on data slots only.
    pub symbol_idx: Vec<Vec<usize>>,
    /// Per-slot, per-user true correlation used to step into that slot.
    pub eta: Vec<Vec<f64>>,
    pub n0: f64,
    pub obs: Observation,
}

impl ChannelFrame {
    pub fn slots(&self) -> usize {
        self.h.len()
    }

    pub fn pilot_mask(&self) -> &[bool] {
        &self.obs.pilot_mask
    }
}

// Stream tags, so channel, symbol and noise draws stay paired across
// layouts and SNR points.
const STREAM_CHANNEL: u64 = 1;
const STREAM_ETA: u64 = 2;
const STREAM_SYMBOLS: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// Synthesizes a frame from `seed`.
///
/// Channel, η, symbol and noise draws come from separate sub-streams of the
/// seed, so two configs that differ only in SNR or pilot layout see the same
/// channel trajectory, the same data symbols and the same normalized noise.
pub fn generate_frame(seed: u64, config: &FrameConfig) -> Result<ChannelFrame> {
    let m = config.antennas;
    let k = config.users;
    if m == 0 || k == 0 {
        return Err(Error::Config("antennas and users must be positive".into()));
    }
    if !(config.n0 >= 0.0) {
        return Err(Error::Config(format!("noise variance {} is invalid", config.n0)));
    }
    let t_total = config.layout.total_slots();
    let pilot_mask = config.layout.pilot_mask();

    let mut pilots = CMatrix::zeros(k, t_total);
    let mut cursor = 0;
    for &(tp, td) in config.layout.sections() {
        if tp > 0 {
            let block = dft_pilots(k, tp)?;
            pilots.columns_mut(cursor, tp).copy_from(&block);
        } else {
            return Err(Error::Config("every section needs at least one pilot slot".into()));
        }
        cursor += tp + td;
    }

    let r = config.covariances()?;
    let nominal = config.eta.nominal();
    let mut gm = GaussMarkovParams::new(vec![nominal; k], r)?;

    let mut ch_rng = RngStream::derive(seed, &[STREAM_CHANNEL]);
    let mut eta_rng = RngStream::derive(seed, &[STREAM_ETA]);
    let mut sym_rng = RngStream::derive(seed, &[STREAM_SYMBOLS]);
    let mut noise_rng = RngStream::derive(seed, &[STREAM_NOISE]);

    let per_slot = matches!(config.eta, EtaProcess::SlowlyVarying { per_slot: true, .. });
    let mut frame_eta: Vec<f64> = (0..k).map(|_| config.eta.draw(&mut eta_rng)).collect();

    let h0 = gm.evolve_channel(&mut ch_rng, None)?;
    let mut h = Vec::with_capacity(t_total);
    let mut eta = Vec::with_capacity(t_total);
    let mut prev = h0.clone();
    for t in 0..t_total {
        if per_slot && t > 0 {
            frame_eta = (0..k).map(|_| config.eta.draw(&mut eta_rng)).collect();
        }
        gm.set_eta(&frame_eta);
        let next = gm.evolve_channel(&mut ch_rng, Some(&prev))?;
        eta.push(gm.eta().to_vec());
        h.push(next.clone());
        prev = next;
    }

    let points = config.constellation.points();
    let mut symbol_idx = vec![vec![0usize; k]; t_total];
    let mut x = CMatrix::zeros(k, t_total);
    for t in 0..t_total {
        for i in 0..k {
            let idx = sym_rng.index(points.len());
            if pilot_mask[t] {
                x[(i, t)] = pilots[(i, t)];
            } else {
                symbol_idx[t][i] = idx;
                x[(i, t)] = points[idx];
            }
        }
    }

    let noise_scale = Complex64::from(config.n0.sqrt());
    let mut y = CMatrix::zeros(m, t_total);
    for t in 0..t_total {
        let noise = noise_rng.complex_normal_vector(m);
        let clean = &h[t] * x.column(t);
        y.set_column(t, &(clean + noise * noise_scale));
    }

    Ok(ChannelFrame {
        h0,
        h,
        x,
        symbol_idx,
        eta,
        n0: config.n0,
        obs: Observation { y, pilots, pilot_mask },
    })
}
