//! Independent Monte-Carlo oracles shared by the integration tests and the
//! acceptance suite. Sampling here uses its own Cholesky factor and RNG so
//! it shares no code with the library under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use vbjed::channel::{make_correlation, CorrelationKind, CorrelationSpec, GaussMarkovParams};
use vbjed::expectations::{ColumnMoments, GaussianStat, ScalarGaussianStat};
use vbjed::numerics::{HermitianCov, RngStream};

pub type M = DMatrix<Complex64>;
pub type V = DVector<Complex64>;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub struct Sampler {
    rng: ChaCha20Rng,
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x0bad_5eed_0f_0ac1e),
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// CN(0, 1): real and imaginary parts each N(0, 1/2).
    pub fn cn(&mut self) -> Complex64 {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        c(self.normal() * s, self.normal() * s)
    }

    pub fn cn_vec(&mut self, n: usize) -> V {
        V::from_fn(n, |_, _| self.cn())
    }

    /// Random PSD matrix `G Gᴴ · scale / n`.
    pub fn psd(&mut self, n: usize, scale: f64) -> M {
        let g = M::from_fn(n, n, |_, _| self.cn());
        (&g * g.adjoint()).map(|z| z * (scale / n as f64))
    }
}

/// Lower-triangular `L` with `L Lᴴ = a`, computed by the textbook
/// recurrence (a tiny ridge keeps singular inputs factorizable).
pub fn cholesky(a: &M) -> M {
    let n = a.nrows();
    let ridge = 1e-300_f64.max(1e-14 * (0..n).map(|i| a[(i, i)].re).fold(0.0, f64::max));
    let mut l = M::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)].re + ridge;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        let d = d.max(0.0).sqrt();
        l[(j, j)] = c(d, 0.0);
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = if d > 0.0 { s / d } else { c(0.0, 0.0) };
        }
    }
    l
}

/// Random instance of the residual lemma: `y`, `n` independent Gaussian
/// columns of `A` and independent symbols with given means and variances.
pub struct ResidualInstance {
    pub y: V,
    pub col_mean: Vec<V>,
    pub col_cov: Vec<M>,
    pub x_mean: Vec<Complex64>,
    pub x_var: Vec<f64>,
}

impl ResidualInstance {
    pub fn random(seed: u64) -> Self {
        let mut s = Sampler::new(seed);
        let m = 1 + (seed as usize % 4);
        let n = 1 + (seed as usize / 4) % 2;
        Self {
            y: s.cn_vec(m),
            col_mean: (0..n).map(|_| s.cn_vec(m)).collect(),
            col_cov: (0..n).map(|_| s.psd(m, 0.5)).collect(),
            x_mean: (0..n).map(|_| s.cn()).collect(),
            x_var: (0..n).map(|_| 0.2 + s.uniform()).collect(),
        }
    }

    pub fn stats(&self) -> Vec<GaussianStat> {
        self.col_mean
            .iter()
            .zip(&self.col_cov)
            .map(|(m, cv)| GaussianStat::new(m.clone(), HermitianCov::new(cv.clone()).unwrap()).unwrap())
            .collect()
    }

    pub fn traces(&self) -> Vec<f64> {
        self.col_cov.iter().map(|cv| cv.trace().re).collect()
    }

    pub fn moments<'a>(&'a self, traces: &'a [f64]) -> Vec<ColumnMoments<'a>> {
        self.col_mean
            .iter()
            .zip(traces)
            .map(|(mean, &cov_trace)| ColumnMoments { mean, cov_trace })
            .collect()
    }

    /// Sample average of `‖y − A x‖²`, with `x` drawn complex Gaussian.
    pub fn monte_carlo(&self, samples: usize, seed: u64) -> f64 {
        let mut s = Sampler::new(seed);
        let roots: Vec<M> = self.col_cov.iter().map(cholesky).collect();
        let m = self.y.len();
        let mut total = 0.0;
        for _ in 0..samples {
            let mut r = self.y.clone();
            for j in 0..self.col_mean.len() {
                let a = &self.col_mean[j] + &roots[j] * s.cn_vec(m);
                let x = self.x_mean[j] + s.cn() * self.x_var[j].sqrt();
                r -= a * x;
            }
            total += r.norm_squared();
        }
        total / samples as f64
    }
}

/// Random instance of the weighted lemma: Gaussian `y`, Gaussian column
/// `a`, real Gaussian scalar `x` and a Hermitian PSD weight.
pub struct WeightedInstance {
    pub y_mean: V,
    pub y_cov: M,
    pub a_mean: V,
    pub a_cov: M,
    pub x: ScalarGaussianStat,
    pub weight: M,
}

impl WeightedInstance {
    pub fn random(seed: u64) -> Self {
        let mut s = Sampler::new(seed.wrapping_add(1000));
        let m = 1 + (seed as usize % 4);
        Self {
            y_mean: s.cn_vec(m),
            y_cov: s.psd(m, 0.3),
            a_mean: s.cn_vec(m),
            a_cov: s.psd(m, 0.4),
            x: ScalarGaussianStat::new(s.normal(), 0.1 + 0.5 * s.uniform()).unwrap(),
            weight: s.psd(m, 2.0),
        }
    }

    pub fn stats(&self) -> (GaussianStat, GaussianStat, HermitianCov) {
        let g = |m: &V, cv: &M| GaussianStat::new(m.clone(), HermitianCov::new(cv.clone()).unwrap()).unwrap();
        (
            g(&self.y_mean, &self.y_cov),
            g(&self.a_mean, &self.a_cov),
            HermitianCov::new(self.weight.clone()).unwrap(),
        )
    }

    /// Sample average of `(y − a x)ᴴ W (y − a x)`.
    pub fn monte_carlo(&self, samples: usize, seed: u64) -> f64 {
        let mut s = Sampler::new(seed);
        let ly = cholesky(&self.y_cov);
        let la = cholesky(&self.a_cov);
        let m = self.y_mean.len();
        let mut total = 0.0;
        for _ in 0..samples {
            let y = &self.y_mean + &ly * s.cn_vec(m);
            let a = &self.a_mean + &la * s.cn_vec(m);
            let x = self.x.mean + s.normal() * self.x.var.sqrt();
            let d = y - a * c(x, 0.0);
            total += d.dotc(&(&self.weight * &d)).re;
        }
        total / samples as f64
    }
}

/// Relative Frobenius distance `‖a − b‖ / ‖b‖`.
pub fn rel_fro(a: &M, b: &M) -> f64 {
    (a - b).norm() / b.norm()
}

/// Independent stationary chains, each advanced two steps from a draw of
/// `CN(0, R)`. The second-step covariance and the lag-one cross-covariance
/// are pooled over all chains.
pub fn stationarity_errors(eta: f64, chains: usize) -> (f64, f64) {
    let m = 8;
    let r = make_correlation(&CorrelationSpec {
        kind: CorrelationKind::exponential(c(0.5, 0.5)),
        antennas: m,
    })
    .unwrap();
    let gm = GaussMarkovParams::new(vec![eta], vec![r.clone()]).unwrap();
    let mut rng = RngStream::new(2024);
    let mut cov = M::zeros(m, m);
    let mut lag = M::zeros(m, m);
    for _ in 0..chains {
        let h0 = gm.evolve_channel(&mut rng, None).unwrap();
        let h1 = gm.evolve_channel(&mut rng, Some(&h0)).unwrap();
        let h2 = gm.evolve_channel(&mut rng, Some(&h1)).unwrap();
        cov += &h2 * h2.adjoint();
        lag += &h2 * h1.adjoint();
    }
    let n = chains as f64;
    cov /= c(n, 0.0);
    lag /= c(n, 0.0);
    let target_lag = r.matrix() * c(eta, 0.0);
    (rel_fro(&cov, r.matrix()), rel_fro(&lag, &target_lag))
}

