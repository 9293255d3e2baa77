//! Principal-axis helpers for 3×3 symmetric matrices.

use crate::geom::{sqrt, Vec3};

pub type Mat3 = [[f64; 3]; 3];

/// Mean and covariance of a point set. Returns `None` for an empty slice.
pub fn mean_and_covariance(points: &[Vec3]) -> Option<(Vec3, Mat3)> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let mut mean = Vec3::ZERO;
    for p in points {
        mean += *p;
    }
    mean = mean / n;
    let mut c = [[0.0; 3]; 3];
    for p in points {
        let d = (*p - mean).to_array();
        for i in 0..3 {
            for j in 0..3 {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    Some((mean, c))
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Eigenvalues are returned in ascending order with matching unit
/// eigenvectors.
pub fn symmetric_eigen(m: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let mut a = *m;
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _sweep in 0..64 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / sqrt(t * t + 1.0);
            let s = t * c;
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let vp = row[p];
                let vq = row[q];
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let vals = [a[idx[0]][idx[0]], a[idx[1]][idx[1]], a[idx[2]][idx[2]]];
    let col = |c: usize| Vec3::new(v[0][c], v[1][c], v[2][c]);
    (vals, [col(idx[0]), col(idx[1]), col(idx[2])])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mul(m: &Mat3, x: Vec3) -> Vec3 {
        let a = x.to_array();
        Vec3::new(
            m[0][0] * a[0] + m[0][1] * a[1] + m[0][2] * a[2],
            m[1][0] * a[0] + m[1][1] * a[1] + m[1][2] * a[2],
            m[2][0] * a[0] + m[2][1] * a[1] + m[2][2] * a[2],
        )
    }

    #[test]
    fn diagonal_matrix() {
        let m = [[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let (vals, vecs) = symmetric_eigen(&m);
        assert_eq!(vals, [1.0, 2.0, 3.0]);
        assert!((vecs[2].x.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let m = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.7], [0.5, -0.7, 1.0]];
        let (vals, vecs) = symmetric_eigen(&m);
        for k in 0..3 {
            let r = mul(&m, vecs[k]) - vecs[k] * vals[k];
            assert!(r.norm() < 1e-10, "residual {}", r.norm());
            assert!((vecs[k].norm() - 1.0).abs() < 1e-12);
        }
        // trace is preserved
        assert!((vals.iter().sum::<f64>() - 8.0).abs() < 1e-10);
    }
}
