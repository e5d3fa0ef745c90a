//! Condensation diagnostics over a layer's neuron input-weight rows.
//!
//! "Weight correlation" is the absolute sum of the off-diagonal entries of
//! the row cosine-similarity matrix; the diagonal is left out since it is the
//! constant `N` for a layer without dead neurons and carries no signal.
//! "Neuron similarity" is the largest absolute off-diagonal entry.

use crate::linalg::{norm, Matrix};

/// Row cosine-similarity matrix of a weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn to_csv(&self) -> String {
        self.0.to_csv()
    }
}

/// Rows scaled to unit length; zero rows stay zero.
pub(crate) fn normalized_rows(w: &Matrix) -> (Matrix, Vec<bool>) {
    let mut out = w.clone();
    let mut alive = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n > 0.0 {
            let inv = 1.0 / n;
            row.iter_mut().for_each(|x| *x *= inv);
            alive.push(true);
        } else {
            alive.push(false);
        }
    }
    (out, alive)
}

/// `C[i][j] = w_iᵀw_j / (‖w_i‖‖w_j‖)`, with every entry touching a zero-norm
/// row (its diagonal included) set to 0.
pub fn cosine_matrix(w: &Matrix) -> SimilarityMatrix {
    let (unit, alive) = normalized_rows(w);
    let n = w.rows();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        if !alive[i] {
            continue;
        }
        c.set(i, i, 1.0);
        let ri = unit.row(i);
        for j in (i + 1)..n {
            if !alive[j] {
                continue;
            }
            let v = crate::linalg::dot(ri, unit.row(j)).clamp(-1.0, 1.0);
            c.set(i, j, v);
            c.set(j, i, v);
        }
    }
    SimilarityMatrix(c)
}

/// `Σ_{i≠j} |C_ij|`.
pub fn weight_correlation(c: &SimilarityMatrix) -> f64 {
    let n = c.len();
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                total += c.get(i, j).abs();
            }
        }
    }
    total
}

/// `max_{i≠j} |C_ij|`, or 0 with fewer than two neurons.
pub fn neuron_similarity(c: &SimilarityMatrix) -> f64 {
    let n = c.len();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                best = best.max(c.get(i, j).abs());
            }
        }
    }
    best
}

/// Per-epoch row of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Loss on a held-out draw of the same task.
    pub val_metric: f64,
    pub neuron_similarity: f64,
    pub weight_correlation: f64,
    pub step_time_ms: f64,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "epoch,train_loss,neuron_similarity,weight_correlation,step_time_ms";

    pub fn csv_row(&self) -> String {
        let mut s = format!("{},", self.epoch);
        crate::linalg::write_f64(&mut s, self.train_loss);
        s.push(',');
        crate::linalg::write_f64(&mut s, self.neuron_similarity);
        s.push(',');
        crate::linalg::write_f64(&mut s, self.weight_correlation);
        s.push(',');
        crate::linalg::write_f64(&mut s, self.step_time_ms);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn m(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn equal_rows_have_unit_cosine() {
        let c = cosine_matrix(&m(&[[0.3, -2.0], [0.3, -2.0]]));
        assert!((c.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((weight_correlation(&c) - 2.0).abs() < 1e-15);
        assert_eq!(neuron_similarity(&c), c.get(0, 1).abs());
    }

    #[test]
    fn orthogonal_rows() {
        let c = cosine_matrix(&m(&[[1.0, 0.0], [0.0, 3.0]]));
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(weight_correlation(&c), 0.0);
        assert_eq!(neuron_similarity(&c), 0.0);
    }

    #[test]
    fn forty_five_degrees() {
        let c = cosine_matrix(&m(&[[1.0, 0.0], [1.0, 1.0]]));
        assert!((c.get(0, 1) - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((weight_correlation(&c) - 2.0 * FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn three_rows_max() {
        let c = cosine_matrix(&m(&[[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]));
        assert!((neuron_similarity(&c) - FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn antiparallel_counts_as_one() {
        let c = cosine_matrix(&m(&[[1.0, 2.0], [-2.0, -4.0], [5.0, -1.0]]));
        assert!((neuron_similarity(&c) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_rows_give_zero_entries() {
        let c = cosine_matrix(&m(&[[0.0, 0.0], [1.0, 1.0]]));
        assert_eq!(c.get(0, 0), 0.0);
        assert_eq!(c.get(0, 1), 0.0);
        assert_eq!(c.get(1, 1), 1.0);
    }

    #[test]
    fn single_neuron_has_no_similarity() {
        let c = cosine_matrix(&Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap());
        assert_eq!(neuron_similarity(&c), 0.0);
        assert_eq!(weight_correlation(&c), 0.0);
    }

    #[test]
    fn csv_row_layout() {
        let r = MetricsRecord {
            epoch: 3,
            train_loss: 0.5,
            val_metric: 0.0,
            neuron_similarity: 1.0,
            weight_correlation: 2.0,
            step_time_ms: 0.0,
        };
        let row = r.csv_row();
        assert!(row.starts_with("3,5.0000000000000000e-1,"));
        assert_eq!(row.split(',').count(), MetricsRecord::CSV_HEADER.split(',').count());
    }
}
