use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::MatExpr;

/// A symmetric block matrix given by its lower triangle.
///
/// Cells above the diagonal are the transposes of their mirror cells;
/// diagonal cells are symmetrized on assembly.
#[derive(Debug, Clone)]
pub struct BlockLmi {
    sizes: Vec<usize>,
    cells: BTreeMap<(usize, usize), MatExpr>,
}

impl BlockLmi {
    pub fn new(sizes: &[usize]) -> Self {
        BlockLmi { sizes: sizes.to_vec(), cells: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Sets block `(row, col)`; a cell above the diagonal is stored as the
    /// transpose of its mirror.
    pub fn set(&mut self, row: usize, col: usize, expr: impl Into<MatExpr>) -> &mut Self {
        let expr = expr.into();
        let (r, c, e) = if row >= col { (row, col, expr) } else { (col, row, expr.transpose()) };
        assert_eq!(e.shape(), (self.sizes[r], self.sizes[c]), "block ({r}, {c}) has the wrong shape");
        self.cells.insert((r, c), e);
        self
    }

    pub fn assemble(&self) -> MatExpr {
        let n = self.dim();
        let offsets: Vec<usize> = self
            .sizes
            .iter()
            .scan(0, |acc, s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect();
        let mut out = MatExpr::zeros(n, n);
        for (&(r, c), e) in &self.cells {
            if r == c {
                out = out + e.clone().sym().place(n, n, offsets[r], offsets[c]);
            } else {
                out = out + e.clone().place(n, n, offsets[r], offsets[c]);
                out = out + e.clone().transpose().place(n, n, offsets[c], offsets[r]);
            }
        }
        out
    }
}
