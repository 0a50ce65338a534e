use nalgebra::{DMatrix, DVector};

/// Lawson-Hanson nonnegative least squares: `min |M z - b|` over `z >= 0`.
pub(crate) fn nnls(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    let mut z = DVector::zeros(n);
    let mut passive = vec![false; n];
    let scale = m.amax().max(1.0) * b.amax().max(1.0);
    let tol = 1e-13 * scale * (m.nrows().max(n) as f64);
    for _ in 0..(3 * n + 10) {
        let w = m.transpose() * (b - m * &z);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &c| w[a].total_cmp(&w[c]));
        let Some(j) = candidate else { break };
        passive[j] = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let sub = m.select_columns(&cols);
            let s = sub
                .svd(true, true)
                .solve(b, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(cols.len()));
            if s.iter().all(|&v| v > 0.0) {
                for (k, &c) in cols.iter().enumerate() {
                    z[c] = s[k];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (k, &c) in cols.iter().enumerate() {
                if s[k] <= 0.0 {
                    alpha = alpha.min(z[c] / (z[c] - s[k]));
                }
            }
            for (k, &c) in cols.iter().enumerate() {
                z[c] += alpha * (s[k] - z[c]);
                if z[c] <= 1e-15 * scale {
                    z[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_nonnegative_solution() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let z = nnls(&m, &b);
        assert!((z[0] - 1.0).abs() < 1e-12 && (z[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clamps_negative_directions() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![-1.0, 2.0]);
        let z = nnls(&m, &b);
        assert_eq!(z[0], 0.0);
        assert!((z[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn circulation_on_a_cycle() {
        // rows are agents, columns are edges x1<=x2, x2<=x3, x3<=x1
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, -1.0, -1.0, 1.0, 0.0, 0.0, -1.0, 1.0],
        );
        let b = DVector::from_vec(vec![0.5, -0.2, -0.3]);
        let z = nnls(&m, &b);
        assert!(z.iter().all(|&v| v >= 0.0));
        assert!((&m * &z - &b).amax() < 1e-12);
    }
}
