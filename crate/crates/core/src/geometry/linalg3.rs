//! Fixed-size 3-vector / 3×3 helpers and a one-sided Jacobi SVD.

use crate::numerics::RngState;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    m
}

pub fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            m[j][i] = *v;
        }
    }
    m
}

pub fn det(a: &Mat3) -> f64 {
    dot(a[0], cross(a[1], a[2]))
}

pub fn mat_sub(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut m = *a;
    for (row, brow) in m.iter_mut().zip(b) {
        for (v, w) in row.iter_mut().zip(brow) {
            *v -= w;
        }
    }
    m
}

pub fn frobenius(a: &Mat3) -> f64 {
    a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn trace(a: &Mat3) -> f64 {
    a[0][0] + a[1][1] + a[2][2]
}

fn column(a: &Mat3, j: usize) -> Vec3 {
    [a[0][j], a[1][j], a[2][j]]
}

fn set_column(a: &mut Mat3, j: usize, v: Vec3) {
    for (row, x) in a.iter_mut().zip(v) {
        row[j] = x;
    }
}

/// Largest deviation of `RᵀR` from identity and of `det R` from one.
pub fn rotation_defect(r: &Mat3) -> f64 {
    let rtr = mat_mul(&transpose(r), r);
    let ortho = rtr
        .iter()
        .flatten()
        .zip(IDENTITY3.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ortho.max((det(r) - 1.0).abs())
}

/// Singular value decomposition `a = U · diag(σ) · Vᵀ` with σ sorted descending.
///
/// One-sided Jacobi on the columns of `a`. When a singular value vanishes the
/// matching column of `U` is completed to an orthonormal basis, so `U` and `V`
/// are always orthogonal (but may have determinant −1).
pub fn svd3(a: &Mat3) -> (Mat3, Vec3, Mat3) {
    let mut w = *a;
    let mut v = IDENTITY3;
    for _sweep in 0..60 {
        let mut rotated = false;
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            let cp = column(&w, p);
            let cq = column(&w, q);
            let alpha = dot(cp, cp);
            let beta = dot(cq, cq);
            let gamma = dot(cp, cq);
            if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            set_column(&mut w, p, sub(scale(cp, c), scale(cq, s)));
            set_column(&mut w, q, add(scale(cp, s), scale(cq, c)));
            let vp = column(&v, p);
            let vq = column(&v, q);
            set_column(&mut v, p, sub(scale(vp, c), scale(vq, s)));
            set_column(&mut v, q, add(scale(vp, s), scale(vq, c)));
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let sig: Vec3 = [norm(column(&w, 0)), norm(column(&w, 1)), norm(column(&w, 2))];
    order.sort_by(|&i, &j| sig[j].total_cmp(&sig[i]));

    let mut u = [[0.0; 3]; 3];
    let mut vs = [[0.0; 3]; 3];
    let mut sigma = [0.0; 3];
    let tol = 1e-13 * sig[order[0]].max(f64::MIN_POSITIVE);
    for (k, &j) in order.iter().enumerate() {
        sigma[k] = sig[j];
        set_column(&mut vs, k, column(&v, j));
        if sig[j] > tol {
            set_column(&mut u, k, scale(column(&w, j), 1.0 / sig[j]));
        }
    }
    // complete U where singular values vanished
    for k in 0..3 {
        if sigma[k] > tol {
            continue;
        }
        let basis: Vec<Vec3> = (0..k).map(|i| column(&u, i)).collect();
        let candidate = match basis.len() {
            2 => cross(basis[0], basis[1]),
            _ => {
                let mut best = [0.0; 3];
                for e in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] {
                    let mut x = e;
                    for b in &basis {
                        x = sub(x, scale(*b, dot(x, *b)));
                    }
                    if norm(x) > norm(best) {
                        best = x;
                    }
                }
                best
            }
        };
        set_column(&mut u, k, scale(candidate, 1.0 / norm(candidate)));
    }
    (u, sigma, vs)
}

/// Closest rotation in Frobenius norm.
pub fn nearest_rotation(m: &Mat3) -> Mat3 {
    let (u, _, v) = svd3(m);
    let mut d = IDENTITY3;
    if det(&u) * det(&v) < 0.0 {
        d[2][2] = -1.0;
    }
    mat_mul(&mat_mul(&u, &d), &transpose(&v))
}

/// Rodrigues formula for the rotation vector `w` (axis × angle).
pub fn rotation_from_axis_angle(w: Vec3) -> Mat3 {
    let theta = norm(w);
    if theta < 1e-300 {
        return IDENTITY3;
    }
    let k = scale(w, 1.0 / theta);
    let kx: Mat3 = [[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]];
    let kx2 = mat_mul(&kx, &kx);
    let (s, c) = theta.sin_cos();
    let mut r = IDENTITY3;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += s * kx[i][j] + (1.0 - c) * kx2[i][j];
        }
    }
    r
}

/// Geodesic angle of a rotation, in radians.
pub fn rotation_angle(r: &Mat3) -> f64 {
    ((trace(r) - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Uniformly distributed rotation (normalized Gaussian quaternion).
pub fn random_rotation(rng: &mut RngState) -> Mat3 {
    let mut q = [rng.normal(), rng.normal(), rng.normal(), rng.normal()];
    let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= n);
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}
