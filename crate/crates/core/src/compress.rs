//! Contractive compressors: Top-K selection (global and blockwise) and a
//! fixed-subspace low-rank projector.
//!
//! Top-K keeps the `k` coordinates of largest magnitude. Ties are broken by
//! the lowest index so every selection is reproducible.

use std::cmp::Ordering;

use nalgebra::DMatrix;

use crate::error::{check_dim, check_finite, Error, Result};

/// Largest block length whose block-relative indices fit in 15 bits.
pub const MAX_BLOCK_SIZE: usize = 32767;

/// Default Top-K block length.
pub const DEFAULT_BLOCK_SIZE: usize = 4096;

/// Coordinates and values picked by a Top-K operator.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSelection {
    indices: Vec<usize>,
    values: Vec<f64>,
    dim: usize,
}

impl SparseSelection {
    /// Builds a selection from parallel index/value lists. Indices must be
    /// strictly increasing and below `dim`.
    pub fn new(indices: Vec<usize>, values: Vec<f64>, dim: usize) -> Result<Self> {
        check_dim(indices.len(), values.len())?;
        if indices.len() > dim {
            return Err(Error::KOutOfRange {
                k: indices.len(),
                dim,
            });
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) || indices.last().is_some_and(|&i| i >= dim) {
            return Err(Error::Layout(
                "selection indices must be strictly increasing and < dim".into(),
            ));
        }
        Ok(Self {
            indices,
            values,
            dim,
        })
    }

    /// Copies the entries of `x` at the (sorted) `indices`.
    fn gather(x: &[f64], mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        let values = indices.iter().map(|&i| x[i]).collect();
        Self {
            indices,
            values,
            dim: x.len(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of selected coordinates.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    /// Dense vector equal to the selected values on their support, zero elsewhere.
    pub fn embed(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Magnitude-descending, index-ascending order.
fn by_magnitude(x: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b))
}

/// Positions of the `k` largest-magnitude entries of `x`, unsorted.
fn top_positions(x: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    if k < x.len() {
        order.select_nth_unstable_by(k, by_magnitude(x));
        order.truncate(k);
    }
    order
}

/// Global Top-K by absolute value.
pub fn topk_global(x: &[f64], k: usize) -> Result<SparseSelection> {
    if k == 0 || k > x.len() {
        return Err(Error::KOutOfRange { k, dim: x.len() });
    }
    check_finite(x)?;
    Ok(SparseSelection::gather(x, top_positions(x, k)))
}

/// Number of coordinates kept out of `n` at the given density, rounded up
/// and clamped to `[1, n]`.
///
/// Products that land within floating-point noise of an integer are not
/// rounded up (`0.01 * 100` keeps 1, not 2).
pub fn density_count(density: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = density * n as f64;
    let nearest = raw.round();
    let count = if (raw - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        raw.ceil()
    };
    (count as usize).clamp(1, n)
}

/// Partition of a `dim`-vector into contiguous Top-K blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockLayout {
    block_size: usize,
    dim: usize,
    density: f64,
}

impl BlockLayout {
    pub fn new(dim: usize, block_size: usize, density: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Empty);
        }
        if block_size == 0 || block_size > MAX_BLOCK_SIZE {
            return Err(Error::Layout(format!(
                "block size {block_size} must be in 1..={MAX_BLOCK_SIZE}"
            )));
        }
        if !(density > 0.0 && density <= 1.0) {
            return Err(Error::Layout(format!(
                "density {density} must be in (0, 1]"
            )));
        }
        Ok(Self {
            block_size,
            dim,
            density,
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn density(&self) -> f64 {
        self.density
    }

    pub fn num_blocks(&self) -> usize {
        self.dim.div_ceil(self.block_size)
    }

    /// Coordinates kept in a full-length block.
    pub fn per_block_k(&self) -> usize {
        density_count(self.density, self.block_size.min(self.dim))
    }

    /// Half-open coordinate range of block `b`.
    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        let start = b * self.block_size;
        start..(start + self.block_size).min(self.dim)
    }

    /// Coordinates kept in block `b` (the last block may be shorter).
    pub fn block_k(&self, b: usize) -> usize {
        density_count(self.density, self.block_range(b).len())
    }

    /// Total selection width across all blocks.
    pub fn total_k(&self) -> usize {
        (0..self.num_blocks()).map(|b| self.block_k(b)).sum()
    }

    /// Splits a global index into (block, block-relative index).
    pub fn split_index(&self, index: usize) -> (usize, u16) {
        let b = index / self.block_size;
        (b, (index - b * self.block_size) as u16)
    }
}

/// Top-K applied independently inside each block of `layout`.
pub fn topk_blockwise(x: &[f64], layout: &BlockLayout) -> Result<SparseSelection> {
    check_dim(layout.dim(), x.len())?;
    check_finite(x)?;
    let mut indices = Vec::with_capacity(layout.total_k());
    for b in 0..layout.num_blocks() {
        let range = layout.block_range(b);
        let start = range.start;
        let block = &x[range];
        let mut relative: Vec<u16> = top_positions(block, layout.block_k(b))
            .into_iter()
            .map(|i| i as u16)
            .collect();
        relative.sort_unstable();
        indices.extend(relative.into_iter().map(|r| start + r as usize));
    }
    Ok(SparseSelection::gather(x, indices))
}

/// `x` with the selected coordinates set to zero, i.e. `x - embed(sel)`.
pub fn zero_selected(x: &[f64], sel: &SparseSelection) -> Result<Vec<f64>> {
    check_dim(sel.dim(), x.len())?;
    let mut out = x.to_vec();
    for &i in sel.indices() {
        out[i] = 0.0;
    }
    Ok(out)
}

/// Empirical contraction `‖x - embed(sel)‖ / ‖x‖`.
pub fn contraction_factor(x: &[f64], sel: &SparseSelection) -> Result<f64> {
    let residual = zero_selected(x, sel)?;
    let total = norm(x);
    if total == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(norm(&residual) / total)
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Orthonormal basis of a rank-`r` subspace of the row space `R^ambient`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    basis: DMatrix<f64>,
    requested_rank: usize,
}

impl SubspaceBasis {
    /// Wraps an `ambient x r` matrix whose columns must be orthonormal.
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let gram = basis.transpose() * &basis;
        let r = basis.ncols();
        if r > basis.nrows() {
            return Err(Error::RankOutOfRange {
                rank: r,
                max: basis.nrows(),
            });
        }
        let off = (gram - DMatrix::<f64>::identity(r, r)).amax();
        if off > 1e-10 {
            return Err(Error::Layout(format!(
                "basis columns not orthonormal (max deviation {off:.3e})"
            )));
        }
        Ok(Self {
            basis,
            requested_rank: r,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// True when fewer directions were available than requested.
    pub fn is_rank_deficient(&self) -> bool {
        self.rank() < self.requested_rank
    }

    pub fn requested_rank(&self) -> usize {
        self.requested_rank
    }
}

/// Orthogonal projection `U Uᵀ g` of a matrix-shaped gradient onto the
/// column span of `basis`.
pub fn lowrank_project(g: &DMatrix<f64>, basis: &SubspaceBasis) -> Result<DMatrix<f64>> {
    if g.nrows() != basis.ambient_dim() {
        return Err(Error::ShapeMismatch {
            expected: (basis.ambient_dim(), g.ncols()),
            actual: g.shape(),
        });
    }
    if basis.rank() == basis.ambient_dim() {
        // U Uᵀ = I for a full orthonormal basis.
        return Ok(g.clone());
    }
    let u = basis.matrix();
    Ok(u * (u.transpose() * g))
}

/// Top-`rank` left singular directions of `acc`, sorted by descending
/// singular value, each column signed so its first nonzero entry is
/// nonnegative. Directions with numerically zero singular value are
/// dropped and the basis is flagged rank deficient.
pub fn subspace_from_accumulator(acc: &DMatrix<f64>, rank: usize) -> Result<SubspaceBasis> {
    let max = acc.nrows().min(acc.ncols());
    if rank == 0 || rank > max {
        return Err(Error::RankOutOfRange { rank, max });
    }
    check_finite(acc.as_slice())?;
    let svd = acc.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let sigma = svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
    let top = sigma.iter().copied().fold(0.0_f64, f64::max);
    let tol = top * f64::EPSILON * acc.nrows().max(acc.ncols()) as f64;
    let kept: Vec<usize> = order
        .into_iter()
        .take(rank)
        .filter(|&j| sigma[j] > tol)
        .collect();

    let mut basis = DMatrix::<f64>::zeros(acc.nrows(), kept.len());
    for (c, &j) in kept.iter().enumerate() {
        let mut col = u.column(j).into_owned();
        let col_tol = 1e-12 * col.amax();
        if let Some(first) = col.iter().find(|v| v.abs() > col_tol) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        basis.set_column(c, &col);
    }
    Ok(SubspaceBasis {
        basis,
        requested_rank: rank,
    })
}
