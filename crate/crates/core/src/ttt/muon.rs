use crate::numerics::Tensor;

/// Quintic Newton–Schulz coefficients (a, b, c) used by Muon.
pub const NS_QUINTIC: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Trailing iterations run with the cubic map `1.5x − 0.5x³`, whose fixed
/// point is exactly 1. The quintic map alone oscillates in roughly [0.7, 1.1].
pub const NS_POLISH_ITERS: usize = 2;

/// Approximate orthogonal polar factor `U Vᵀ` of `m` by Newton–Schulz iteration
/// on the Frobenius-normalized matrix. A zero matrix maps to zero.
pub fn newton_schulz(m: &Tensor, iters: usize) -> Tensor {
    let norm = m.frobenius_norm();
    if norm == 0.0 || !norm.is_finite() {
        return Tensor::zeros(m.shape());
    }
    let tall = m.rows() > m.cols();
    let mut x = if tall { m.transpose() } else { m.clone() }.scale(1.0 / norm);

    let polish = iters.min(NS_POLISH_ITERS);
    let (a, b, c) = NS_QUINTIC;
    for step in 0..iters {
        let gram = x.matmul_t(&x).expect("square gram");
        if step < iters - polish {
            let gram2 = gram.matmul(&gram).expect("square gram");
            let mut poly = gram.scale(b);
            poly.axpy(c, &gram2).expect("same shape");
            let mut next = x.scale(a);
            next.add_assign(&poly.matmul(&x).expect("conformable")).expect("same shape");
            x = next;
        } else {
            let mut next = x.scale(1.5);
            next.axpy(-0.5, &gram.matmul(&x).expect("conformable")).expect("same shape");
            x = next;
        }
    }
    if tall {
        x.transpose()
    } else {
        x
    }
}

/// One Muon step: accumulate momentum, then orthogonalize it.
///
/// Returns `(direction, new_momentum)` with `new_momentum = μ·momentum + grad`.
/// The caller applies `W ← W − η · direction`.
pub fn muon_step(grad: &Tensor, momentum: &Tensor, momentum_coeff: f64, ns_iters: usize) -> (Tensor, Tensor) {
    let mut new_momentum = momentum.scale(momentum_coeff);
    new_momentum.add_assign(grad).expect("momentum mirrors gradient shape");
    let direction = newton_schulz(&new_momentum, ns_iters);
    (direction, new_momentum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    /// Independent oracle: one-sided Jacobi SVD of a general matrix, returning `U Vᵀ`.
    fn polar_factor_oracle(m: &Tensor) -> Tensor {
        let tall = m.rows() >= m.cols();
        let a = if tall { m.clone() } else { m.transpose() };
        let (r, c) = (a.rows(), a.cols());
        let mut w: Vec<Vec<f64>> = (0..c).map(|j| (0..r).map(|i| a.get(i, j)).collect()).collect();
        let mut v: Vec<Vec<f64>> = (0..c).map(|j| (0..c).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        for _ in 0..100 {
            let mut off = 0.0f64;
            for p in 0..c {
                for q in p + 1..c {
                    let alpha = dot(&w[p], &w[p]);
                    let beta = dot(&w[q], &w[q]);
                    let gamma = dot(&w[p], &w[q]);
                    off = off.max(gamma.abs() / (alpha * beta).sqrt().max(1e-300));
                    if gamma == 0.0 {
                        continue;
                    }
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let cs = 1.0 / (1.0 + t * t).sqrt();
                    let sn = cs * t;
                    for cols in [&mut w, &mut v] {
                        let (wp, wq) = (cols[p].clone(), cols[q].clone());
                        for i in 0..wp.len() {
                            cols[p][i] = cs * wp[i] - sn * wq[i];
                            cols[q][i] = sn * wp[i] + cs * wq[i];
                        }
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        // polar factor = Σ u_j v_jᵀ with u_j = w_j / σ_j
        let mut out = Tensor::zeros(&[r, c]);
        for j in 0..c {
            let s = dot(&w[j], &w[j]).sqrt();
            for i in 0..r {
                for k in 0..c {
                    let val = out.get(i, k) + w[j][i] / s * v[j][k];
                    out.set(i, k, val);
                }
            }
        }
        if tall {
            out
        } else {
            out.transpose()
        }
    }

    /// Square roots of the Jacobi eigenvalues of the smaller Gram matrix.
    fn singular_values(x: &Tensor) -> Vec<f64> {
        let h = if x.rows() <= x.cols() { x.matmul_t(x).unwrap() } else { x.t_matmul(x).unwrap() };
        let n = h.rows();
        let mut a: Vec<Vec<f64>> = (0..n).map(|i| h.row(i).to_vec()).collect();
        for _ in 0..100 {
            for p in 0..n {
                for q in p + 1..n {
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for row in a.iter_mut() {
                        let (akp, akq) = (row[p], row[q]);
                        row[p] = c * akp - s * akq;
                        row[q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = c * apk - s * aqk;
                        a[q][k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][i].max(0.0).sqrt()).collect()
    }

    #[test]
    fn zero_passes_through() {
        let z = Tensor::zeros(&[3, 4]);
        let (dir, mom) = muon_step(&z, &z, 0.9, 5);
        assert!(dir.data().iter().all(|v| *v == 0.0));
        assert!(mom.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rotation_is_a_fixed_point() {
        let th: f64 = 0.7;
        let r = Tensor::matrix(2, 2, vec![th.cos(), -th.sin(), th.sin(), th.cos()]).unwrap();
        let (dir, _) = muon_step(&r, &Tensor::zeros(&[2, 2]), 0.9, 5);
        assert!(dir.max_abs_diff(&r) < 1e-3, "{}", dir.max_abs_diff(&r));
    }

    #[test]
    fn diagonal_maps_to_identity() {
        let g = Tensor::matrix(2, 2, vec![2.0, 0.0, 0.0, 0.5]).unwrap();
        let oracle = polar_factor_oracle(&g);
        assert!(oracle.max_abs_diff(&Tensor::identity(2)) < 1e-12);
        let (dir, _) = muon_step(&g, &Tensor::zeros(&[2, 2]), 0.9, 5);
        assert!(dir.max_abs_diff(&oracle) < 0.05, "{:?}", dir);
    }

    #[test]
    fn momentum_accumulates() {
        let mut rng = RngState::new(1);
        let g = Tensor::randn(3, 5, 1.0, &mut rng);
        let m = Tensor::randn(3, 5, 1.0, &mut rng);
        let (_, new_m) = muon_step(&g, &m, 0.9, 5);
        let mut expect = m.scale(0.9);
        expect.add_assign(&g).unwrap();
        assert!(new_m.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn well_conditioned_inputs_get_unit_singular_values() {
        let mut rng = RngState::new(2);
        for (r, c) in [(4, 4), (8, 4), (4, 16), (16, 4)] {
            // U diag(σ) Vᵀ with σ spread over a decade
            let n = r.min(c);
            let u = Tensor::random_orthogonal(r, n, &mut rng);
            let v = Tensor::random_orthogonal(n, c, &mut rng);
            let sig: Vec<f64> = (0..n).map(|i| 0.1 + 0.9 * i as f64 / (n - 1) as f64).collect();
            let mut us = u.clone();
            for i in 0..r {
                for j in 0..n {
                    us.set(i, j, u.get(i, j) * sig[j]);
                }
            }
            let g = us.matmul(&v).unwrap();
            let dir = newton_schulz(&g, 5);
            for s in singular_values(&dir) {
                assert!((s - 1.0).abs() < 0.3, "{r}x{c}: singular value {s}");
            }
            let oracle = polar_factor_oracle(&g);
            assert!(dir.max_abs_diff(&oracle) < 0.3);
        }
    }
}
