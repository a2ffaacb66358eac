mod common;

use common::{c, Sampler, M};
use num_complex::Complex64;
use proptest::prelude::*;

use vbjed::block::{run_block, BlockConfig};
use vbjed::channel::{generate_frame, ChannelFrame, Constellation, CorrelationKind, EtaProcess, FrameConfig, FrameLayout, Observation};
use vbjed::expectations::{GaussianStat, ScalarGaussianStat};
use vbjed::harness::nmse_ratio;
use vbjed::numerics::HermitianCov;
use vbjed::online::{run_frame_online, run_slot, OnlineConfig, SymbolFactor, UserPosterior};

fn frame(seed: u64, m: usize, k: usize, layout: FrameLayout, eta: f64, snr_db: f64) -> (FrameConfig, ChannelFrame) {
    let cfg = FrameConfig {
        antennas: m,
        users: k,
        layout,
        constellation: Constellation::qpsk(),
        correlation: CorrelationKind::exponential(c(0.5, 0.5)),
        eta: EtaProcess::Fixed { value: eta },
        n0: k as f64 / (m as f64 * 10f64.powf(snr_db / 10.0)),
    };
    let f = generate_frame(seed, &cfg).unwrap();
    (cfg, f)
}

fn min_eig_ratio(cov: &HermitianCov) -> f64 {
    cov.eigen().min_eigenvalue() / cov.trace().max(f64::MIN_POSITIVE)
}

fn check_pmf(sym: &SymbolFactor) {
    if let SymbolFactor::Data(pmf) = sym {
        let p = pmf.probs();
        assert!(p.iter().all(|&v| v >= 0.0 && v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn noise_precision_recovers_noise_level_with_known_channels() {
    let (m, k) = (16, 2);
    let mut inv_gamma = 0.0;
    let trials = 100;
    let mut n0 = 0.0;
    for seed in 0..trials {
        let (fc, f) = frame(seed, m, k, FrameLayout::single(2, 0), 1.0, 10.0);
        n0 = fc.n0;
        let tiny = HermitianCov::scaled_identity(m, 1e-12);
        let prev: Vec<UserPosterior> = (0..k)
            .map(|i| UserPosterior {
                h: GaussianStat::new(f.h[0].column(i).into_owned(), tiny.clone()).unwrap(),
                eta: ScalarGaussianStat::point(1.0),
                symbol: SymbolFactor::Pilot(Complex64::new(0.0, 0.0)),
            })
            .collect();
        let r = fc.covariances().unwrap();
        let ocfg = OnlineConfig {
            known_eta: Some(vec![1.0; k]),
            ..OnlineConfig::default()
        };
        let pilots: Vec<Complex64> = f.obs.pilots.column(0).iter().copied().collect();
        let est = run_slot(&f.obs.y_slot(0), &prev, &r, Some(&pilots), &fc.constellation, &ocfg).unwrap();
        inv_gamma += 1.0 / est.gamma.mean();
    }
    let avg = inv_gamma / trials as f64;
    assert!((avg - n0).abs() <= 0.2 * n0, "1/gamma {avg} vs N0 {n0}");
}

#[test]
fn tight_correlation_prior_reproduces_known_correlation() {
    for seed in 0..4 {
        let (fc, f) = frame(seed, 16, 2, FrameLayout::single(4, 24), 0.985, 12.0);
        let r = fc.covariances().unwrap();
        let mut tight = OnlineConfig::default();
        tight.priors.eta_mean = 0.985;
        tight.priors.eta_var = 1e-14;
        let known = OnlineConfig {
            known_eta: Some(vec![0.985; 2]),
            ..OnlineConfig::default()
        };
        let a = run_frame_online(&f.obs, &r, fc.n0, &fc.constellation, &tight).unwrap();
        let b = run_frame_online(&f.obs, &r, fc.n0, &fc.constellation, &known).unwrap();
        assert_eq!(a.decisions(), b.decisions(), "seed {seed}");
        let (ha, hb) = (a.channel(), b.channel());
        assert!(nmse_ratio(&hb, &ha).unwrap() < 1e-6);
    }
}

/// Random unitary from the QR factor of a complex Gaussian matrix.
fn random_unitary(m: usize, seed: u64) -> M {
    let mut s = Sampler::new(seed);
    let g = M::from_fn(m, m, |_, _| s.cn());
    g.qr().q()
}

#[test]
fn detection_is_invariant_to_a_common_rotation() {
    let m = 8;
    for seed in 0..4 {
        let (fc, f) = frame(seed, m, 2, FrameLayout::single(4, 20), 0.98, 12.0);
        let r = fc.covariances().unwrap();
        let u = random_unitary(m, seed + 10);
        let r_rot: Vec<HermitianCov> = r
            .iter()
            .map(|ri| {
                let rot = &u * ri.matrix() * u.adjoint();
                HermitianCov::new((&rot + rot.adjoint()) * c(0.5, 0.0)).unwrap()
            })
            .collect();
        let obs_rot = Observation {
            y: &u * &f.obs.y,
            ..f.obs.clone()
        };
        let cfg = OnlineConfig::default();
        let a = run_frame_online(&f.obs, &r, fc.n0, &fc.constellation, &cfg).unwrap();
        let b = run_frame_online(&obs_rot, &r_rot, fc.n0, &fc.constellation, &cfg).unwrap();
        assert_eq!(a.decisions(), b.decisions(), "seed {seed}");
        let back: Vec<M> = b.channel().iter().map(|h| u.adjoint() * h).collect();
        assert!(nmse_ratio(&a.channel(), &back).unwrap() < 1e-8);
    }
}

#[test]
fn smoothing_a_pilot_only_frame_beats_filtering() {
    let mut online = 0.0;
    let mut block = 0.0;
    for seed in 0..20 {
        let (fc, f) = frame(seed, 8, 2, FrameLayout::single(16, 0), 0.98, 5.0);
        let r = fc.covariances().unwrap();
        let on = run_frame_online(&f.obs, &r, fc.n0, &fc.constellation, &OnlineConfig::default()).unwrap();
        let bl = run_block(&f.obs, &r, fc.n0, &fc.constellation, &BlockConfig::default()).unwrap();
        online += nmse_ratio(&f.h, &on.channel()).unwrap();
        block += nmse_ratio(&f.h, &bl.channel()).unwrap();
    }
    assert!(block <= online, "block {block} vs online {online}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn posteriors_stay_valid(seed in 0u64..1_000_000, m in 2usize..6, k in 1usize..3, snr in -5.0f64..25.0, eta in 0.5f64..0.999) {
        let (fc, f) = frame(seed, m, k, FrameLayout::single(k + 1, 6), eta, snr);
        let r = fc.covariances().unwrap();
        let ocfg = OnlineConfig { iterations: 8, ..OnlineConfig::default() };
        let on = run_frame_online(&f.obs, &r, fc.n0, &fc.constellation, &ocfg).unwrap();
        for slot in &on.slots {
            prop_assert!(slot.gamma.shape > 0.0 && slot.gamma.rate > 0.0);
            for u in &slot.users {
                prop_assert!(min_eig_ratio(&u.h.cov) >= -1e-9);
                prop_assert!(u.eta.var >= 0.0 && (0.0..=1.0).contains(&u.eta.mean));
                check_pmf(&u.symbol);
            }
        }
        let bcfg = BlockConfig { iterations: 4, warm_start_iterations: 8, ..BlockConfig::default() };
        let bl = run_block(&f.obs, &r, fc.n0, &fc.constellation, &bcfg).unwrap();
        let post = &bl.posterior;
        for user in &post.h {
            for h in user {
                prop_assert!(min_eig_ratio(&h.cov) >= -1e-9);
            }
        }
        for g in post.gamma.iter().chain(&post.nu) {
            prop_assert!(g.shape > 0.0 && g.rate > 0.0);
        }
        for e in &post.eta {
            prop_assert!(e.var >= 0.0 && (0.0..=1.0).contains(&e.mean));
        }
        for slot in &post.symbols {
            slot.iter().for_each(check_pmf);
        }
    }
}
