use std::sync::Arc;

use num_complex::Complex64;
use proptest::prelude::*;

use onsigma::dynamics::drift_ddd;
use onsigma::meanfield::{Flavor, MeanFieldEnsemble, MeanFieldParams};
use onsigma::observables::{
    o1_from_phi, o2_from_phi, theory_free, theory_limit_spectrum, ProductRule, SpectrumEstimate,
};
use onsigma::runner::{parse_config, FieldSnapshot, RunConfig};
use onsigma::spectral::{
    chat_sq, sobolev_norm_sq, Grid, RealField, SpectralField, SpectralTransform, VOLUME,
};
use onsigma::wick::{counterterm_drift, wick_cubic, wick_pair};
use onsigma::Exec;

fn modes() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![2usize, 4, 6, 8, 16])
}

fn field_values(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, m * m)
}

fn grid_and_fields(n: std::ops::Range<usize>) -> impl Strategy<Value = (usize, Vec<Vec<f64>>)> {
    (prop::sample::select(vec![2usize, 4, 8]), n).prop_flat_map(|(m, n)| {
        (Just(m), prop::collection::vec(field_values(m), n))
    })
}

fn to_real(grid: &Grid, v: &[Vec<f64>]) -> Vec<RealField> {
    v.iter().map(|f| RealField::from_values(grid, f.clone()).unwrap()).collect()
}

/// Independent `O(M⁴)` convolution of `Ĉ` with itself, iterating the FFT
/// storage order explicitly.
fn chat_sq_brute(m: usize, mass: f64) -> Vec<f64> {
    let half = (m / 2) as i64;
    let wrap = |j: usize| if (j as i64) < half { j as i64 } else { j as i64 - m as i64 };
    let chat = |k1: i64, k2: i64| 1.0 / (2.0 * (mass + (k1 * k1 + k2 * k2) as f64));
    let inside = |k: i64| (-half..half).contains(&k);
    let mut out = Vec::with_capacity(m * m);
    for a in 0..m {
        for b in 0..m {
            let (k1, k2) = (wrap(a), wrap(b));
            let mut acc = 0.0;
            for c in 0..m {
                for d in 0..m {
                    let (p1, p2) = (wrap(c), wrap(d));
                    let (q1, q2) = (k1 - p1, k2 - p2);
                    if inside(q1) && inside(q2) {
                        acc += chat(p1, p2) * chat(q1, q2);
                    }
                }
            }
            out.push(acc / VOLUME);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parseval((m, v) in modes().prop_flat_map(|m| (Just(m), field_values(m)))) {
        let grid = Grid::new(m, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let f = RealField::from_values(&grid, v).unwrap();
        let hat = tr.forward(&f).unwrap();
        let h = grid.spacing();
        let real: f64 = f.values().iter().map(|x| x * x).sum::<f64>() * h * h;
        let spec = sobolev_norm_sq(&grid, &hat, 0.0);
        prop_assert!((real - spec).abs() <= 1e-10 * real.max(1e-300));
        let back = tr.inverse(&hat).unwrap();
        for (a, b) in back.values().iter().zip(f.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn chat_sq_matches_brute_force(m in modes(), mass in 0.1f64..5.0) {
        let grid = Grid::new(m, mass, false).unwrap();
        for idx in 0..grid.len() {
            let k = grid.wavevector(idx);
            let (a, b) = (idx / m, idx % m);
            let half = (m / 2) as i64;
            let wrap = |j: usize| if (j as i64) < half { j as i64 } else { j as i64 - m as i64 };
            prop_assert_eq!((k.k1, k.k2), (wrap(a), wrap(b)));
        }
        prop_assert_eq!(chat_sq(&grid), chat_sq_brute(m, mass));
    }

    #[test]
    fn h1_dominates_l2((m, v) in modes().prop_flat_map(|m| (Just(m), field_values(m)))) {
        let grid = Grid::new(m, 1.0, false).unwrap();
        let tr = SpectralTransform::new(&grid);
        let hat = tr.forward(&RealField::from_values(&grid, v).unwrap()).unwrap();
        prop_assert!(sobolev_norm_sq(&grid, &hat, 1.0) >= sobolev_norm_sq(&grid, &hat, 0.0));
    }

    #[test]
    fn wick_pair_symmetric((m, v) in grid_and_fields(2..3), a in 0.0f64..2.0) {
        let grid = Grid::new(m, 1.0, false).unwrap();
        let f = to_real(&grid, &v);
        prop_assert_eq!(
            wick_pair(&f[0], &f[1], false, a).unwrap(),
            wick_pair(&f[1], &f[0], false, a).unwrap()
        );
    }

    #[test]
    fn counterterm_is_wick_expansion((m, v) in grid_and_fields(1..6), a in 0.0f64..2.0, lam in 0.0f64..3.0) {
        let grid = Grid::new(m, 1.0, false).unwrap();
        let phi = to_real(&grid, &v);
        let n = phi.len();
        let drift = counterterm_drift(&phi, a, lam).unwrap();
        for i in 0..n {
            for x in 0..grid.len() {
                let s: f64 = (0..n)
                    .map(|j| wick_cubic(&phi[i], &phi[j], i == j, a).unwrap().values()[x])
                    .sum();
                let expect = -lam / n as f64 * s;
                prop_assert!((drift[i].values()[x] - expect).abs() <= 1e-11 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn split_drift_equals_direct_drift(
        (m, y) in grid_and_fields(1..5),
        seed in any::<u64>(),
        a in 0.0f64..2.0,
        lam in 0.0f64..3.0,
    ) {
        // Φ = Y + Z gives the same drift whichever way it is assembled.
        let grid = Grid::new(m, 1.0, false).unwrap();
        let mut rng = seed;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        let z: Vec<Vec<f64>> = y.iter().map(|f| f.iter().map(|_| next()).collect()).collect();
        let phi: Vec<Vec<f64>> = y.iter().zip(&z).map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect()).collect();
        let split = drift_ddd(&y, &z, a, lam);
        let direct = counterterm_drift(&to_real(&grid, &phi), a, lam).unwrap();
        for (s, d) in split.iter().zip(&direct) {
            for (p, q) in s.iter().zip(d.values()) {
                prop_assert!((p - q).abs() <= 1e-10 * (1.0 + q.abs()));
            }
        }
    }

    #[test]
    fn observables_invariant_under_sign_flips(
        (m, v) in grid_and_fields(1..6),
        flips in prop::collection::vec(any::<bool>(), 6),
        a in 0.0f64..1.0,
    ) {
        let flipped: Vec<Vec<f64>> = v
            .iter()
            .zip(&flips)
            .map(|(f, &s)| if s { f.iter().map(|x| -x).collect() } else { f.clone() })
            .collect();
        let _ = m;
        prop_assert_eq!(o1_from_phi(&v, a), o1_from_phi(&flipped, a));
        prop_assert_eq!(o2_from_phi(&v, a).to_bits(), o2_from_phi(&flipped, a).to_bits());
    }

    #[test]
    fn observables_invariant_under_rotations(
        (m, v) in grid_and_fields(2..3),
        theta in 0.0f64..std::f64::consts::TAU,
        a in 0.0f64..1.0,
    ) {
        let (c, s) = (theta.cos(), theta.sin());
        let rotated = vec![
            v[0].iter().zip(&v[1]).map(|(x, y)| c * x - s * y).collect::<Vec<_>>(),
            v[0].iter().zip(&v[1]).map(|(x, y)| s * x + c * y).collect::<Vec<_>>(),
        ];
        let _ = m;
        for (p, q) in o1_from_phi(&v, a).iter().zip(o1_from_phi(&rotated, a)) {
            prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
        }
        let (p, q) = (o2_from_phi(&v, a), o2_from_phi(&rotated, a));
        prop_assert!((p - q).abs() <= 1e-12 * (1.0 + p.abs()));
    }

    #[test]
    fn spectrum_even_in_k((m, v) in grid_and_fields(1..4), alias_free in any::<bool>()) {
        let grid = Arc::new(Grid::new(m, 1.0, false).unwrap());
        let tr = SpectralTransform::new(&grid);
        let hats: Vec<SpectralField> = to_real(&grid, &v).iter().map(|f| tr.forward(f).unwrap()).collect();
        let refs: Vec<&SpectralField> = hats.iter().collect();
        let rule = if alias_free { ProductRule::AliasFree } else { ProductRule::Grid };
        let mut est = SpectrumEstimate::new(&grid, v.len(), 1.0, rule, 1, false);
        let mut o1 = onsigma::observables::O1Transform::new(&grid, 0.1, rule);
        let coeffs: Vec<Complex64> = o1.compute(&refs).to_vec();
        est.accumulate(&coeffs, &refs, None).unwrap();
        let g = est.ghat();
        let c = est.chat_n();
        for idx in 0..grid.len() {
            let j = grid.conj_index(idx);
            prop_assert_eq!(g[idx].mean.to_bits(), g[j].mean.to_bits());
            prop_assert_eq!(c[idx].mean.to_bits(), c[j].mean.to_bits());
        }
    }

    #[test]
    fn limit_below_free(m in modes(), mass in 0.05f64..10.0) {
        let grid = Grid::new(m, mass, false).unwrap();
        for (l, f) in theory_limit_spectrum(&grid).iter().zip(theory_free(&grid)) {
            prop_assert!(*l < f);
        }
    }

    #[test]
    fn plain_mu_permutation_invariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
        let grid = Arc::new(Grid::new(8, 1.0, false).unwrap());
        let mut p = MeanFieldParams::new(grid, 6);
        p.flavor = Flavor::Plain;
        p.master_seed = seed;
        p.exec = Exec::Sequential;
        let mut ens = MeanFieldEnsemble::new(&p).unwrap();
        ens.advance(3).unwrap();
        let before = ens.estimate_mu().to_vec();
        let mut order: Vec<usize> = (0..6).collect();
        let mut r = perm_seed;
        for i in (1..order.len()).rev() {
            r = r.wrapping_mul(6364136223846793005).wrapping_add(1);
            order.swap(i, (r >> 33) as usize % (i + 1));
        }
        ens.permute(&order);
        prop_assert_eq!(before, ens.estimate_mu().to_vec());
    }

    #[test]
    fn snapshot_round_trip(
        (m, v) in grid_and_fields(1..4),
        mass in 0.0f64..10.0,
        lam in 0.0f64..10.0,
        t in 0.0f64..1e4,
    ) {
        let snap = FieldSnapshot { modes: m, mass, coupling: lam, time: t, fields: v };
        prop_assert_eq!(FieldSnapshot::decode(&snap.encode()).unwrap(), snap);
    }

    #[test]
    fn config_round_trip(
        m in prop::sample::select(vec![8i64, 16, 32]),
        mass in 0.1f64..8.0,
        ns in prop::collection::vec(1i64..200, 1..5),
        dt in 1e-4f64..0.1,
        seed in 0..=i64::MAX as u64,
        direct in any::<bool>(),
    ) {
        let mut cfg = RunConfig::minimal(m as usize, mass, 1);
        cfg.dynamics.components = onsigma::runner::config::Components::Many(ns);
        cfg.dynamics.dt = Some(dt);
        cfg.seed = seed;
        if direct {
            cfg.dynamics.scheme = onsigma::dynamics::Scheme::Direct;
        }
        cfg.validate().unwrap();
        let back = parse_config(&cfg.to_toml()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }
}
