//! Constant-velocity Kalman filter over `[cx, cy, w, vx, vy, vw]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIM: usize = 6;
pub type Vec6 = [f64; DIM];
pub type Mat6 = [[f64; DIM]; DIM];

pub fn identity() -> Mat6 {
    let mut m = [[0.0; DIM]; DIM];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

/// Position and width advance by their velocity each frame (`dt = 1`).
pub fn transition() -> Mat6 {
    let mut a = identity();
    for i in 0..3 {
        a[i][i + 3] = 1.0;
    }
    a
}

pub fn diag(d: &Vec6) -> Mat6 {
    let mut m = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        m[i][i] = d[i];
    }
    m
}

pub fn matmul(a: &Mat6, b: &Mat6) -> Mat6 {
    let mut c = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for k in 0..DIM {
            if a[i][k] == 0.0 {
                continue;
            }
            for j in 0..DIM {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

pub fn transpose(a: &Mat6) -> Mat6 {
    let mut t = [[0.0; DIM]; DIM];
    for i in 0..DIM {
        for j in 0..DIM {
            t[j][i] = a[i][j];
        }
    }
    t
}

pub fn matvec(a: &Mat6, x: &Vec6) -> Vec6 {
    let mut y = [0.0; DIM];
    for i in 0..DIM {
        y[i] = (0..DIM).map(|j| a[i][j] * x[j]).sum();
    }
    y
}

/// Largest `|P[i][j] - P[j][i]|`.
pub fn asymmetry(p: &Mat6) -> f64 {
    let mut m = 0.0f64;
    for i in 0..DIM {
        for j in 0..DIM {
            m = m.max((p[i][j] - p[j][i]).abs());
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanState {
    pub x: Vec6,
    pub p: Mat6,
}

impl KalmanState {
    fn check(&self) -> Result<()> {
        if self.x.iter().chain(self.p.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Divergence("non-finite tracker state".into()));
        }
        Ok(())
    }

    pub fn covariance_diagonal(&self) -> Vec6 {
        let mut d = [0.0; DIM];
        for (i, v) in d.iter_mut().enumerate() {
            *v = self.p[i][i];
        }
        d
    }
}

/// `x <- A x` (the control term is zero) and `P <- A P A^T + Q`.
pub fn kf_predict(s: &KalmanState, q: &Vec6) -> Result<KalmanState> {
    s.check()?;
    let a = transition();
    let mut p = matmul(&matmul(&a, &s.p), &transpose(&a));
    for i in 0..DIM {
        p[i][i] += q[i];
    }
    Ok(KalmanState { x: matvec(&a, &s.x), p })
}

/// Invert a small symmetric positive definite matrix by Gauss-Jordan with
/// partial pivoting.
fn invert(m: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = m.len();
    let scale = m
        .iter()
        .flatten()
        .fold(0.0f64, |a, v| a.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut inv: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col] == 0.0 || a[piv][col].abs() <= scale * 1e-13 {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for j in 0..n {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                for j in 0..n {
                    a[i][j] -= f * a[col][j];
                    inv[i][j] -= f * inv[col][j];
                }
            }
        }
    }
    Some(inv)
}

/// Standard correction with `H` selecting the state rows in `rows`; the
/// covariance is symmetrized afterwards.
pub fn kf_update(s: &KalmanState, z: &[f64], rows: &[usize], r: &[f64]) -> Result<KalmanState> {
    s.check()?;
    let m = rows.len();
    if z.len() != m || r.len() != m || rows.iter().any(|&k| k >= DIM) {
        return Err(Error::Dimension("measurement, rows and noise lengths disagree".into()));
    }
    // S = H P H^T + R
    let sm: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            (0..m)
                .map(|j| s.p[rows[i]][rows[j]] + if i == j { r[i] } else { 0.0 })
                .collect()
        })
        .collect();
    let s_inv = invert(&sm).ok_or_else(|| Error::Divergence("singular innovation covariance".into()))?;
    // K = P H^T S^-1  (6 x m)
    let k: Vec<Vec<f64>> = (0..DIM)
        .map(|i| {
            (0..m)
                .map(|j| (0..m).map(|l| s.p[i][rows[l]] * s_inv[l][j]).sum())
                .collect()
        })
        .collect();
    let innov: Vec<f64> = (0..m).map(|i| z[i] - s.x[rows[i]]).collect();
    let mut x = s.x;
    for i in 0..DIM {
        x[i] += (0..m).map(|j| k[i][j] * innov[j]).sum::<f64>();
    }
    // P = (I - K H) P
    let mut ikh = identity();
    for i in 0..DIM {
        for (j, &row) in rows.iter().enumerate() {
            ikh[i][row] -= k[i][j];
        }
    }
    let p = matmul(&ikh, &s.p);
    let mut sym = p;
    for i in 0..DIM {
        for j in 0..DIM {
            sym[i][j] = 0.5 * (p[i][j] + p[j][i]);
        }
    }
    let out = KalmanState { x, p: sym };
    out.check()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_state() -> KalmanState {
        let mut p = [[0.0; DIM]; DIM];
        for i in 0..DIM {
            for j in 0..DIM {
                p[i][j] = 0.1 * ((i as f64 - j as f64).abs() + 1.0).recip();
            }
            p[i][i] += 1.0 + i as f64;
        }
        KalmanState {
            x: [3.0, -2.0, 10.0, 0.5, 0.25, 1.0],
            p,
        }
    }

    #[test]
    fn stationary_predict_keeps_mean() {
        let mut s = sample_state();
        s.x[3..].fill(0.0);
        let out = kf_predict(&s, &[0.0; DIM]).unwrap();
        assert_eq!(out.x, s.x);
        let a = transition();
        assert_eq!(out.p, matmul(&matmul(&a, &s.p), &transpose(&a)));
    }

    #[test]
    fn constant_velocity_step() {
        let s = KalmanState {
            x: [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            p: identity(),
        };
        assert_eq!(kf_predict(&s, &[0.0; DIM]).unwrap().x[0], 1.0);
    }

    #[test]
    fn predict_matches_elementwise_oracle() {
        let s = sample_state();
        let q = [0.01, 0.01, 0.01, 0.1, 0.1, 0.1];
        let out = kf_predict(&s, &q).unwrap();
        // A = I + E where E[i][i+3] = 1 for i < 3
        let a = |i: usize, j: usize| ((i == j) || (i < 3 && j == i + 3)) as u8 as f64;
        for i in 0..DIM {
            let xi: f64 = (0..DIM).map(|j| a(i, j) * s.x[j]).sum();
            assert!((out.x[i] - xi).abs() < 1e-12);
            for j in 0..DIM {
                let mut v = if i == j { q[i] } else { 0.0 };
                for k in 0..DIM {
                    for l in 0..DIM {
                        v += a(i, k) * s.p[k][l] * a(j, l);
                    }
                }
                assert!((out.p[i][j] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perfect_measurement_limit() {
        let s = sample_state();
        let out = kf_update(&s, &[7.0, 1.0, 12.0], &[0, 1, 2], &[1e-12; 3]).unwrap();
        for (k, z) in [7.0, 1.0, 12.0].iter().enumerate() {
            assert!((out.x[k] - z).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_innovation_keeps_state() {
        let s = sample_state();
        let out = kf_update(&s, &[s.x[0], s.x[1], s.x[2]], &[0, 1, 2], &[1.0; 3]).unwrap();
        for i in 0..DIM {
            assert!((out.x[i] - s.x[i]).abs() < 1e-12);
        }
        assert!(asymmetry(&out.p) <= 1e-12);
    }

    #[test]
    fn scalar_closed_form() {
        let s = KalmanState {
            x: [2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            p: diag(&[4.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
        };
        let (z, r) = (5.0, 2.0);
        let out = kf_update(&s, &[z], &[0], &[r]).unwrap();
        let gain = 4.0 / (4.0 + r);
        assert!((out.x[0] - (2.0 + gain * (z - 2.0))).abs() < 1e-12);
        assert!((out.p[0][0] - (1.0 - gain) * 4.0).abs() < 1e-12);
        assert_eq!(out.x[1..], s.x[1..]);
    }

    #[test]
    fn singular_innovation_rejected() {
        let s = KalmanState {
            x: [0.0; DIM],
            p: [[0.0; DIM]; DIM],
        };
        assert!(matches!(kf_update(&s, &[1.0], &[0], &[0.0]), Err(Error::Divergence(_))));
    }
}
