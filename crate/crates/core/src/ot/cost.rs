use crate::error::{Error, Result};

/// How a cost matrix was assembled.
#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    Plain,
    /// `entries = c1 + c2` elementwise.
    Decomposable { c1: Vec<f64>, c2: Vec<f64> },
}

/// Dense row-major `rows × cols` matrix of nonnegative finite costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    kind: CostKind,
}

fn check_entries(rows: usize, cols: usize, entries: &[f64]) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::DimensionMismatch("cost matrix has an empty side".into()));
    }
    if entries.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "{} entries for a {rows}x{cols} cost",
            entries.len()
        )));
    }
    if let Some(v) = entries.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::InvalidMeasure(format!("cost entry {v} is negative or not finite")));
    }
    Ok(())
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        check_entries(rows, cols, &entries)?;
        Ok(Self {
            rows,
            cols,
            entries,
            kind: CostKind::Plain,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        Self::new(rows, cols, entries)
    }

    /// Cost between two point sets under a ground cost.
    pub fn pairwise(a: &[Vec<f64>], b: &[Vec<f64>], ground: impl Fn(&[f64], &[f64]) -> f64) -> Result<Self> {
        Self::from_fn(a.len(), b.len(), |i, j| ground(&a[i], &b[j]))
    }

    pub fn decomposable(rows: usize, cols: usize, c1: Vec<f64>, c2: Vec<f64>) -> Result<Self> {
        check_entries(rows, cols, &c1)?;
        check_entries(rows, cols, &c2)?;
        let entries = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        Ok(Self {
            rows,
            cols,
            entries,
            kind: CostKind::Decomposable { c1, c2 },
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn kind(&self) -> &CostKind {
        &self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn max_entry(&self) -> f64 {
        self.entries.iter().cloned().fold(0.0, f64::max)
    }

    /// Entries raised to `alpha`; the result is plain.
    pub fn powf(&self, alpha: f64) -> CostMatrix {
        let entries = if alpha == 1.0 {
            self.entries.clone()
        } else {
            self.entries.iter().map(|v| v.powf(alpha)).collect()
        };
        CostMatrix {
            rows: self.rows,
            cols: self.cols,
            entries,
            kind: CostKind::Plain,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposable_sums_parts() {
        let c = CostMatrix::decomposable(1, 2, vec![1.0, 2.0], vec![0.5, 0.25]).unwrap();
        assert_eq!(c.entries(), &[1.5, 2.25]);
        assert!(matches!(c.kind(), CostKind::Decomposable { .. }));
    }

    #[test]
    fn rejects_negative_and_bad_shape() {
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
        assert!(CostMatrix::new(2, 1, vec![1.0]).is_err());
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }
}
