//! Weighted least squares as an explicit linear operator.

use nalgebra::DMatrix;

/// Singular (or R-diagonal) values below this fraction of the largest are
/// treated as zero.
pub(crate) const RANK_TOLERANCE: f64 = 1e-10;

/// The map `y -> argmin_b sum_i w_i (y_i - x_i' b)^2` as a `p x n` matrix.
/// When the weighted design is rank deficient the minimum-norm solution is
/// used.
#[derive(Debug, Clone)]
pub(crate) struct Projector {
    matrix: DMatrix<f64>,
    rank: usize,
}

impl Projector {
    /// `design` is `n x p`; `weights` are strictly positive.
    pub(crate) fn new(design: &DMatrix<f64>, weights: &[f64]) -> Self {
        let (n, p) = design.shape();
        debug_assert_eq!(weights.len(), n);
        let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut scaled = design.clone();
        for (mut row, &r) in scaled.row_iter_mut().zip(&root) {
            row *= r;
        }
        if n >= p {
            if let Some(m) = Self::via_qr(&scaled) {
                return Self { matrix: scale_columns(m, &root), rank: p };
            }
        }
        let (m, rank) = Self::via_svd(scaled);
        Self { matrix: scale_columns(m, &root), rank }
    }

    /// Householder QR; declines when the triangular factor looks singular.
    fn via_qr(scaled: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let p = scaled.ncols();
        if p == 0 {
            return Some(DMatrix::zeros(0, scaled.nrows()));
        }
        let qr = scaled.clone().qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..p).map(|k| r[(k, k)].abs()).collect();
        let largest = diag.iter().copied().fold(0.0, f64::max);
        if !(largest > 0.0) || diag.iter().any(|&v| v < RANK_TOLERANCE * largest) {
            return None;
        }
        let mut qt = qr.q().transpose();
        if !r.solve_upper_triangular_mut(&mut qt) {
            return None;
        }
        Some(qt)
    }

    fn via_svd(scaled: DMatrix<f64>) -> (DMatrix<f64>, usize) {
        let (n, p) = scaled.shape();
        if n == 0 || p == 0 {
            return (DMatrix::zeros(p, n), 0);
        }
        let svd = scaled.svd(true, true);
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested V^T");
        let largest = svd.singular_values.iter().copied().fold(0.0, f64::max);
        let mut rank = 0;
        // V diag(1/s) U^T restricted to the retained directions.
        let mut out = DMatrix::zeros(p, n);
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if largest > 0.0 && s > RANK_TOLERANCE * largest {
                rank += 1;
                let vk = v_t.row(k).transpose();
                let uk = u.column(k);
                out.ger(1.0 / s, &vk, &uk, 1.0);
            }
        }
        (out, rank)
    }

    pub(crate) fn rank(&self) -> usize {
        self.rank
    }

    pub(crate) fn is_rank_deficient(&self) -> bool {
        self.rank < self.matrix.nrows()
    }

    /// Coefficients for a response vector.
    pub(crate) fn apply(&self, y: &[f64]) -> Vec<f64> {
        let n = self.matrix.ncols();
        debug_assert_eq!(y.len(), n);
        let mut b = vec![0.0; self.matrix.nrows()];
        for (j, &yj) in y.iter().enumerate() {
            if yj != 0.0 {
                for (bk, &pk) in b.iter_mut().zip(self.matrix.column(j).iter()) {
                    *bk += pk * yj;
                }
            }
        }
        b
    }

    /// `P^T q` for a coefficient-space vector `q`.
    pub(crate) fn apply_transpose(&self, q: &[f64]) -> Vec<f64> {
        self.matrix.column_iter().map(|col| col.iter().zip(q).map(|(a, b)| a * b).sum()).collect()
    }
}

fn scale_columns(mut m: DMatrix<f64>, root: &[f64]) -> DMatrix<f64> {
    for (mut col, &r) in m.column_iter_mut().zip(root) {
        col *= r;
    }
    m
}
