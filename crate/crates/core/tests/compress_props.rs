use microadam::compress::{
    contraction_factor, lowrank_project, subspace_from_accumulator, topk_blockwise, topk_global,
    zero_selected, BlockLayout,
};
use microadam::theory::topk_q;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn vec_strategy(dims: &'static [usize]) -> impl Strategy<Value = Vec<f64>> {
    prop::sample::select(dims).prop_flat_map(|d| prop::collection::vec(-1e3..1e3f64, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1200))]

    #[test]
    fn topk_contracts(x in vec_strategy(&[4, 64, 1000]), kfrac in 0.0..1.0f64) {
        let d = x.len();
        let k = 1 + ((d - 1) as f64 * kfrac) as usize;
        prop_assume!(x.iter().any(|&v| v != 0.0));
        let sel = topk_global(&x, k).unwrap();
        prop_assert_eq!(sel.len(), k);
        let q = contraction_factor(&x, &sel).unwrap();
        prop_assert!(q <= topk_q(k, d).unwrap() * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn topk_is_idempotent(x in vec_strategy(&[4, 64, 1000]), kfrac in 0.0..1.0f64) {
        let k = 1 + ((x.len() - 1) as f64 * kfrac) as usize;
        let once = topk_global(&x, k).unwrap().embed();
        let twice = topk_global(&once, k).unwrap().embed();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn selection_dominates_rest(x in vec_strategy(&[4, 64]), kfrac in 0.0..1.0f64) {
        let k = 1 + ((x.len() - 1) as f64 * kfrac) as usize;
        let sel = topk_global(&x, k).unwrap();
        let rest = zero_selected(&x, &sel).unwrap();
        let min_kept = sel.values().iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let max_rest = rest.iter().map(|v| v.abs()).fold(0.0, f64::max);
        prop_assert!(min_kept >= max_rest);
        // split is exact: x = embed(sel) + rest
        for ((a, b), c) in sel.embed().iter().zip(&rest).zip(&x) {
            prop_assert_eq!(a + b, *c);
        }
    }

    #[test]
    fn blockwise_contracts_per_block(
        x in prop::collection::vec(-10.0..10.0f64, 10..300),
        block in 3usize..50,
        density in 0.01..1.0f64,
    ) {
        let layout = BlockLayout::new(x.len(), block, density).unwrap();
        let sel = topk_blockwise(&x, &layout).unwrap();
        prop_assert_eq!(sel.len(), layout.total_k());
        let kept = sel.embed();
        for b in 0..layout.num_blocks() {
            let r = layout.block_range(b);
            let total: f64 = x[r.clone()].iter().map(|v| v * v).sum();
            let resid: f64 = x[r.clone()].iter().zip(&kept[r.clone()]).map(|(a, c)| (a - c) * (a - c)).sum();
            let q = topk_q(layout.block_k(b), r.len()).unwrap();
            prop_assert!(resid <= q * q * total * (1.0 + 1e-12) + 1e-300);
        }
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations; returns
/// eigenvalues and eigenvectors (as columns).
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                let (rp, rq) = (a[p].clone(), a[q].clone());
                for k in 0..n {
                    a[p][k] = c * rp[k] - s * rq[k];
                    a[q][k] = s * rp[k] + c * rq[k];
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

#[test]
fn subspace_matches_jacobi_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = microadam::SeededRng::seed_from_u64(3);
    for (rows, cols, rank) in [(6, 4, 2), (8, 8, 3), (5, 9, 4)] {
        let acc = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0));
        let basis = subspace_from_accumulator(&acc, rank).unwrap();
        assert_eq!(basis.rank(), rank);

        let gram = &acc * acc.transpose();
        let a: Vec<Vec<f64>> = (0..rows)
            .map(|i| (0..rows).map(|j| gram[(i, j)]).collect())
            .collect();
        let (vals, vecs) = jacobi_eigen(a);
        let mut order: Vec<usize> = (0..rows).collect();
        order.sort_by(|&x, &y| vals[y].total_cmp(&vals[x]));
        // projector onto the oracle's top-rank eigenvectors
        let mut oracle = DMatrix::<f64>::zeros(rows, rank);
        for (c, &j) in order.iter().take(rank).enumerate() {
            for i in 0..rows {
                oracle[(i, c)] = vecs[i][j];
            }
        }
        let p_oracle = &oracle * oracle.transpose();
        let u = basis.matrix();
        let p_ours = u * u.transpose();
        assert!((p_oracle - p_ours).amax() < 1e-9);

        // sign convention: first nonzero entry of each column is positive
        for c in 0..rank {
            let first = u
                .column(c)
                .iter()
                .copied()
                .find(|v| v.abs() > 1e-12)
                .unwrap();
            assert!(first > 0.0);
        }

        // projecting twice is projecting once
        let once = lowrank_project(&acc, &basis).unwrap();
        let twice = lowrank_project(&once, &basis).unwrap();
        assert!((once - twice).amax() < 1e-12);
    }
}

#[test]
fn rank_deficient_accumulator_flagged() {
    let col = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 0.0, -1.0]);
    let row = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, 2.0]);
    let acc = &col * &row;
    let basis = subspace_from_accumulator(&acc, 3).unwrap();
    assert_eq!(basis.rank(), 1);
    assert!(basis.is_rank_deficient());
    let back = lowrank_project(&acc, &basis).unwrap();
    assert!((back - acc).amax() < 1e-12);
}
