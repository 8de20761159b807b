use microadam::theory::{
    c_constants, ef_bound, max_step_size, memory_footprints, nonconvex_bound, pl_bound,
    quantizer_omega, quantizer_omega_worst, solve_mmax, vhat_bound, CompressionParams, MemorySpec,
    ProblemConstants,
};
use proptest::prelude::*;

fn constants(horizon: usize) -> ProblemConstants {
    ProblemConstants {
        g: 1.0,
        sigma2: 0.0,
        l: 1.0,
        mu: 1.0,
        eps: 1.0,
        beta1: 0.9,
        f_gap: 1.0,
        dim: 1,
        horizon,
    }
}

/// Step size `min(eps / (4 L C0), 1 / sqrt(T))`.
fn bound_step(pc: &ProblemConstants, cp: &CompressionParams) -> f64 {
    max_step_size(pc, cp)
        .unwrap()
        .min(1.0 / (pc.horizon as f64).sqrt())
}

#[test]
fn nonconvex_bound_shrinks_with_horizon() {
    for (q, omega) in [(0.0, 0.0), (0.5, 0.2), (0.9, 0.05)] {
        let cp = CompressionParams::new(q, omega).unwrap();
        let mut prev = f64::INFINITY;
        for t in [10, 100, 1_000, 10_000, 100_000, 1_000_000, 10_000_000] {
            let pc = ProblemConstants {
                sigma2: 0.3,
                ..constants(t)
            };
            let b = nonconvex_bound(&pc, &cp, bound_step(&pc, &cp)).unwrap();
            assert!(b < prev, "q={q} omega={omega} T={t}: {b} >= {prev}");
            prev = b;
        }
    }
}

#[test]
fn uncompressed_bound_halves_when_horizon_quadruples() {
    let cp = CompressionParams::new(0.0, 0.0).unwrap();
    let at = |t: usize| {
        let pc = constants(t);
        let eta = 1.0 / (t as f64).sqrt();
        assert!(eta <= max_step_size(&pc, &cp).unwrap());
        nonconvex_bound(&pc, &cp, eta).unwrap()
    };
    let ratio = at(100_000_000) / at(400_000_000);
    assert!((1.95..=2.05).contains(&ratio), "ratio {ratio}");
}

#[test]
fn pl_bound_shrinks_with_horizon_under_log_step() {
    let cp = CompressionParams::new(0.3, 0.1).unwrap();
    let mut prev = f64::INFINITY;
    for t in [10usize, 100, 1_000, 10_000, 100_000] {
        let pc = constants(t);
        let c0 = c_constants(&cp, pc.g, pc.eps, pc.beta1).unwrap().c0;
        let eta = max_step_size(&pc, &cp)
            .unwrap()
            .min(2.0 * c0 * (t as f64).ln() / (pc.mu * t as f64));
        let b = pl_bound(&pc, &cp, eta).unwrap();
        assert!(b < prev, "T={t}: {b} >= {prev}");
        prev = b;
    }
}

/// The PL right-hand side agrees with the unsimplified sum it came from.
#[test]
fn pl_bound_double_entry() {
    let cp = CompressionParams::new(0.0, 0.0).unwrap();
    let pc = constants(100);
    let (g2, l, mu, eps, d, s2) = (1.0f64, 1.0f64, 1.0f64, 1.0f64, 1.0f64, 1.0f64);
    let pc = ProblemConstants { sigma2: s2, ..pc };
    // constants from scratch: q_omega = 0
    let c0 = (4.0 * g2 + eps).sqrt();
    let c1 = 0.9 / 0.1;
    let c2 = 0.0;
    let eta = 0.25 * eps / (4.0 * l * c0);
    let geometric = (1.0 - eta * mu / c0).powi(100) * pc.f_gap;
    let recursion = c0 / (eta * mu)
        * (eta * eta * l * s2 / eps
            + eta * eta * l * (c1 + c2 * c2) * g2 / eps
            + 3.0 * eta.powi(3) * l * l * c1 * c1 * g2 / (2.0 * eps.powf(1.5)))
        + eta * (1.0 + c1) * g2 * d / eps.sqrt()
        + eta * eta * (1.0 + c1) * c1 * l * g2 * d / eps
        + eta * eta * c1 * c1 * l * g2 * d / eps;
    let virtual_gap = eta * c1 * g2 / eps.sqrt() + eta * eta * l * c1 * c1 * g2 / (2.0 * eps);
    let oracle = geometric + recursion + virtual_gap;
    let got = pl_bound(&pc, &cp, eta).unwrap();
    assert!((got - oracle).abs() <= 1e-12 * oracle, "{got} vs {oracle}");
}

#[test]
fn worst_case_omega_grid_oracle() {
    // brute force over an independent (lo, hi) grid
    for (bits, n) in [(2u32, 3usize), (4, 64), (8, 1000)] {
        let mut best = 0.0f64;
        for i in -50..=50 {
            for j in -50..=50 {
                let (lo, hi) = (i as f64 / 10.0, j as f64 / 10.0);
                if lo > hi || (lo == 0.0 && hi == 0.0) {
                    continue;
                }
                best = best.max(quantizer_omega(bits, n, lo, hi).unwrap());
            }
        }
        let worst = quantizer_omega_worst(bits, n).unwrap();
        let closed = 2f64.sqrt() * ((n - 2) as f64).sqrt() / ((1u32 << bits) - 1) as f64;
        assert!((best - closed).abs() <= 1e-12 * closed);
        assert!((worst - closed).abs() <= 1e-9 * closed);
    }
}

#[test]
fn memory_table_matches_reported_figures() {
    let table = memory_footprints(&MemorySpec::llama2_7b()).unwrap();
    let labels: Vec<&str> = table.iter().map(|f| f.label.as_str()).collect();
    assert_eq!(
        labels,
        [
            "adamw-32bit",
            "adamw-16bit",
            "adamw-8bit",
            "microadam-m10",
            "galore-8bit-r256",
            "galore-8bit-r1024",
            "galore-16bit-r256",
            "galore-16bit-r1024"
        ]
    );
    let d = 6_738_415_616f64;
    let k = (d / 100.0).ceil();
    let gib = 1024f64.powi(3);
    let oracle = [
        8.0 * d / gib,
        4.0 * d / gib,
        2.0 * d / gib,
        (0.5 * d + 40.0 * k) / gib,
        (4.0 * 256.0 * 1_423_872.0 + 2.0 * 266_240.0) / gib,
        (4.0 * 1024.0 * 1_423_872.0 + 2.0 * 266_240.0) / gib,
        (6.0 * 256.0 * 1_423_872.0 + 2.0 * 266_240.0) / gib,
        (6.0 * 1024.0 * 1_423_872.0 + 2.0 * 266_240.0) / gib,
    ];
    for (f, o) in table.iter().zip(oracle) {
        assert!((f.gib() - o).abs() <= 1e-12 * o);
    }
    let reported = [50.21, 25.10, 12.55, 5.65, 1.36, 5.43, 2.04, 8.15];
    for (f, r) in table.iter().zip(reported) {
        assert_eq!(format!("{:.2}", f.gib()), format!("{r:.2}"), "{}", f.label);
    }
}

proptest! {
    #[test]
    fn bounds_are_consistent(q in 0.0..0.99f64, omega in 0.0..2.0f64, g in 0.0..10.0f64) {
        prop_assume!((1.0 + omega) * q < 0.999);
        let cp = CompressionParams::new(q, omega).unwrap();
        prop_assert!(vhat_bound(&cp, g) >= 4.0 * g * g * (1.0 - 1e-15));
        prop_assert!(ef_bound(&cp, g) >= 0.0);
        let c = c_constants(&cp, g, 1e-8, 0.9).unwrap();
        prop_assert!(c.c0 * c.c0 >= vhat_bound(&cp, g));
        prop_assert!(c.c1 >= 9.0 * (1.0 - 1e-15));
    }

    #[test]
    fn nonconvex_bound_monotone_in_variance(s1 in 0.0..5.0f64, s2 in 0.0..5.0f64) {
        let cp = CompressionParams::new(0.5, 0.1).unwrap();
        let lo = ProblemConstants { sigma2: s1.min(s2), ..constants(1000) };
        let hi = ProblemConstants { sigma2: s1.max(s2), ..constants(1000) };
        let eta = max_step_size(&lo, &cp).unwrap();
        prop_assert!(nonconvex_bound(&lo, &cp, eta).unwrap() <= nonconvex_bound(&hi, &cp, eta).unwrap());
    }

    #[test]
    fn mmax_formula(d in 1u64..1_000_000_000, kfrac in 0.0..1.0f64) {
        let k = 1 + ((d - 1) as f64 * kfrac) as u64;
        let m = solve_mmax(d, k).unwrap();
        // at m_max the two footprints coincide
        let micro = 0.5 * d as f64 + 4.0 * m * k as f64;
        prop_assert!((micro - 2.0 * d as f64).abs() <= 1e-9 * d as f64);
    }
}
