mod common;

use common::{compare_central_bins, market, quad_call, quad_spot_density};
use hslv::heston::CosConfig;
use hslv::local_vol::{dupire_local_variance, DupireConfig};
use hslv::surface::{build_market_surface, default_maturities, default_strikes, flat_bs_surface};

/// `sigma_LV^2 = dC/dT / (K^2 q(K) / 2)` with the density by Fourier
/// inversion and the time derivative from quadrature prices (r = 0).
fn dupire_oracle(t: f64, k: f64) -> f64 {
    let p = market();
    let h = 1e-3;
    let c_t = (quad_call(&p, k, t + h) - quad_call(&p, k, t - h)) / (2.0 * h);
    c_t / (0.5 * k * k * quad_spot_density(&p, k, t))
}

#[test]
fn dupire_on_heston_surface_matches_density_oracle() {
    let p = market();
    let surface = build_market_surface(
        &p,
        &default_maturities(),
        &default_strikes(1.0),
        &CosConfig::default(),
    )
    .unwrap();
    for (t, k) in [(2.5, 0.9), (2.5, 1.0), (2.5, 1.1)] {
        let lv = dupire_local_variance(&surface, t, k, &DupireConfig::default()).unwrap();
        let oracle = dupire_oracle(t, k);
        assert!(
            ((lv - oracle) / oracle).abs() < 0.02,
            "t={t} K={k}: surface {lv} oracle {oracle}"
        );
    }
}

#[test]
fn flat_surface_gives_flat_local_vol() {
    let sigma = 0.2;
    let mats: Vec<f64> = (1..=20).map(|i| 0.25 * i as f64).collect();
    let strikes = hslv::surface::log_spaced(0.3, 3.0, 80);
    let surface = flat_bs_surface(1.0, 0.0, sigma, &mats, &strikes).unwrap();
    for i in 0..=8 {
        let t = 0.5 + 0.5 * i as f64;
        for j in 0..=8 {
            let k = 0.7 + 0.1 * j as f64;
            let lv = dupire_local_variance(&surface, t, k, &DupireConfig::default()).unwrap();
            assert!(
                (lv.sqrt() - sigma).abs() <= 1e-3,
                "t={t} K={k}: {}",
                lv.sqrt()
            );
        }
    }
}

#[test]
fn binned_expectation_within_noise_of_kernel_regression() {
    for (i, c) in compare_central_bins(20).iter().enumerate() {
        let z = (c.binned - c.kernel) / c.stderr;
        assert!(
            z.abs() <= 4.0,
            "central bin {i}: binned {} kernel {} z {z:.2}",
            c.binned,
            c.kernel
        );
    }
}
