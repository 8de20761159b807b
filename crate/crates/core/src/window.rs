//! Circular window of the last `m` compressed gradients and the Adam
//! moment estimates recomputed from it.

use crate::compress::SparseSelection;
use crate::error::{check_dim, Error, Result};

/// Ring buffer of `capacity` rows, each holding `row_width` (index, value)
/// pairs. Every row remembers the global step at which it was written.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWindow {
    index_rows: Vec<Vec<u32>>,
    value_rows: Vec<Vec<f64>>,
    stamps: Vec<u64>,
    head: usize,
    filled: usize,
    step: u64,
    dim: usize,
    capacity: usize,
    row_width: usize,
}

/// One stored row: (step stamp, indices, values).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowRow {
    pub stamp: u64,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl GradientWindow {
    pub fn new(dim: usize, capacity: usize, row_width: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::HyperParam("window size m must be at least 1".into()));
        }
        if row_width == 0 || row_width > dim {
            return Err(Error::KOutOfRange { k: row_width, dim });
        }
        if dim > u32::MAX as usize {
            return Err(Error::Layout(format!(
                "dimension {dim} exceeds u32 indexing"
            )));
        }
        Ok(Self {
            index_rows: vec![Vec::new(); capacity],
            value_rows: vec![Vec::new(); capacity],
            stamps: vec![0; capacity],
            head: 0,
            filled: 0,
            step: 0,
            dim,
            capacity,
            row_width,
        })
    }

    /// Rebuilds a window from rows listed in storage order `0..filled`.
    pub fn from_rows(
        dim: usize,
        capacity: usize,
        row_width: usize,
        head: usize,
        step: u64,
        rows: Vec<WindowRow>,
    ) -> Result<Self> {
        let mut w = Self::new(dim, capacity, row_width)?;
        let expected = (step as usize).min(capacity);
        if rows.len() != expected || head >= capacity || head != (step as usize) % capacity {
            return Err(Error::Checkpoint(
                "window head/step/row count inconsistent".into(),
            ));
        }
        for (slot, row) in rows.into_iter().enumerate() {
            if row.indices.len() != row_width || row.values.len() != row_width {
                return Err(Error::WidthMismatch {
                    expected: row_width,
                    actual: row.indices.len(),
                });
            }
            if row.indices.iter().any(|&i| i as usize >= dim) {
                return Err(Error::Checkpoint("window index out of range".into()));
            }
            w.index_rows[slot] = row.indices;
            w.value_rows[slot] = row.values;
            w.stamps[slot] = row.stamp;
        }
        w.head = head;
        w.filled = expected;
        w.step = step;
        let stamps_ok = (0..w.filled)
            .all(|row| w.stamps[row] <= step && step - w.stamps[row] == w.closed_form_age(row));
        if !stamps_ok {
            return Err(Error::Checkpoint("window step stamps inconsistent".into()));
        }
        Ok(w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn row_width(&self) -> usize {
        self.row_width
    }

    /// Row that the next push overwrites.
    pub fn head(&self) -> usize {
        self.head
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    /// Number of pushes so far (the global step `t`).
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Stored rows in storage order.
    pub fn rows(&self) -> impl Iterator<Item = WindowRow> + '_ {
        (0..self.filled).map(|i| WindowRow {
            stamp: self.stamps[i],
            indices: self.index_rows[i].clone(),
            values: self.value_rows[i].clone(),
        })
    }

    /// Writes `sel` over the oldest row and advances the head.
    pub fn push(&mut self, sel: &SparseSelection) -> Result<()> {
        check_dim(self.dim, sel.dim())?;
        if sel.len() != self.row_width {
            return Err(Error::WidthMismatch {
                expected: self.row_width,
                actual: sel.len(),
            });
        }
        self.step += 1;
        let row = self.head;
        self.index_rows[row] = sel.indices().iter().map(|&i| i as u32).collect();
        self.value_rows[row] = sel.values().to_vec();
        self.stamps[row] = self.step;
        self.head = (self.head + 1) % self.capacity;
        self.filled = (self.filled + 1).min(self.capacity);
        Ok(())
    }

    /// Age of every stored row (0 = newest), in storage order.
    pub fn ages(&self) -> Vec<u64> {
        self.stamps[..self.filled]
            .iter()
            .map(|&s| self.step - s)
            .collect()
    }

    /// Closed-form age `(t - i - 1) mod m` of storage row `i`.
    pub fn closed_form_age(&self, row: usize) -> u64 {
        let m = self.capacity as i128;
        (self.step as i128 - row as i128 - 1).rem_euclid(m) as u64
    }

    /// Bias-corrected moment estimate from the stored rows:
    /// `(1 - beta) * sum_r beta^age_r * V_r / (1 - beta^t)`, scattered onto
    /// the stored indices. With `square` the values are squared first.
    pub fn adam_stats(&self, beta: f64, square: bool) -> Result<Vec<f64>> {
        if self.filled == 0 {
            return Err(Error::Empty);
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::HyperParam(format!("beta {beta} must be in (0, 1)")));
        }
        let mut z = vec![0.0; self.dim];
        for row in 0..self.filled {
            let age = self.step - self.stamps[row];
            let decay = beta.powi(age as i32);
            for (&i, &v) in self.index_rows[row].iter().zip(&self.value_rows[row]) {
                let v = if square { v * v } else { v };
                z[i as usize] += decay * v;
            }
        }
        let scale = (1.0 - beta) / (1.0 - beta.powi(self.step as i32));
        for zi in &mut z {
            *zi *= scale;
        }
        Ok(z)
    }
}

/// Bias-corrected exponential moving average of a full gradient history:
/// `(1 - beta) * sum_tau beta^(t - tau) g_tau / (1 - beta^t)`.
pub fn ema_oracle(history: &[Vec<f64>], beta: f64, square: bool) -> Result<Vec<f64>> {
    let first = history.first().ok_or(Error::Empty)?;
    let mut z = vec![0.0; first.len()];
    for g in history {
        check_dim(z.len(), g.len())?;
        for (zi, &gi) in z.iter_mut().zip(g) {
            let gi = if square { gi * gi } else { gi };
            *zi = beta * *zi + (1.0 - beta) * gi;
        }
    }
    let correction = 1.0 - beta.powi(history.len() as i32);
    Ok(z.into_iter().map(|zi| zi / correction).collect())
}
