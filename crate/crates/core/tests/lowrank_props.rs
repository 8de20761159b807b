use microadam::lowrank_ef::{run_lowrank_ef, LowRankEfConfig, LowRankEfRecord};

fn config(period: Option<usize>, steps: usize, seed: u64) -> LowRankEfConfig {
    LowRankEfConfig {
        rows: 32,
        cols: 32,
        rank: 4,
        period,
        steps,
        seed,
        ..Default::default()
    }
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    cov / (vx * vy).sqrt()
}

/// Consecutive steps inside one refresh window, as (previous, current).
fn intra_window_pairs(recs: &[LowRankEfRecord]) -> Vec<(f64, f64)> {
    recs.windows(2)
        .filter(|w| !w[1].refreshed)
        .map(|w| (w[0].error_norm, w[1].error_norm))
        .collect()
}

#[test]
fn fixed_subspace_keeps_error_orthogonal() {
    for seed in 0..3 {
        let recs = run_lowrank_ef(&config(None, 1000, seed)).unwrap();
        for r in &recs {
            assert!(r.projected_error_norm < 1e-8 * r.error_norm, "{r:?}");
        }
    }
}

#[test]
fn periodic_refresh_gives_growing_error_sawtooth() {
    for seed in 0..3 {
        let recs = run_lowrank_ef(&config(Some(200), 1000, seed)).unwrap();
        let pairs = intra_window_pairs(&recs);
        let growing = pairs.iter().filter(|(a, b)| b >= a).count();
        assert!(
            growing as f64 >= 0.9 * pairs.len() as f64,
            "{growing}/{}",
            pairs.len()
        );

        for window in recs.chunks(200) {
            let phase: Vec<f64> = window.iter().map(|r| ((r.step - 1) % 200) as f64).collect();
            let err: Vec<f64> = window.iter().map(|r| r.error_norm).collect();
            assert!(pearson(&phase, &err) > 0.0);
            assert!(window[0].refreshed);
            assert!(window[1..].iter().all(|r| !r.refreshed));
            for r in window {
                assert!(r.projected_error_norm < 1e-8 * r.error_norm.max(f64::MIN_POSITIVE));
            }
        }
        assert!(recs.last().unwrap().loss < recs[0].loss);
    }
}

#[test]
fn full_rank_projection_is_lossless() {
    let cfg = LowRankEfConfig {
        rank: 32,
        ..config(Some(200), 300, 1)
    };
    assert!(run_lowrank_ef(&cfg)
        .unwrap()
        .iter()
        .all(|r| r.error_norm == 0.0));
}
