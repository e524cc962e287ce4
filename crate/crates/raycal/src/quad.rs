//! Gauss-Legendre nodes and the spherical/hemispherical quadratures used
//! for pattern normalization checks.

use crate::geom::{v3, Vec3};

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on
/// the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Integrates f over the full sphere: Gauss-Legendre in cos(theta),
/// trapezoid (periodic, hence spectrally accurate) in phi.
pub fn integrate_sphere(n_theta: usize, n_phi: usize, mut f: impl FnMut(Vec3) -> f64) -> f64 {
    let (nodes, weights) = gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut acc = 0.0;
    for (ct, w) in nodes.iter().zip(&weights) {
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for k in 0..n_phi {
            let phi = dphi * k as f64;
            let dir = v3(st * phi.cos(), st * phi.sin(), *ct);
            acc += w * dphi * f(dir);
        }
    }
    acc
}

/// Integrates f over the upper hemisphere of `normal` (solid-angle
/// measure, no cosine factor).
pub fn integrate_hemisphere(
    n_theta: usize,
    n_phi: usize,
    normal: Vec3,
    mut f: impl FnMut(Vec3) -> f64,
) -> f64 {
    let t1 = normal.any_orthonormal();
    let t2 = normal.cross(t1);
    let (nodes, weights) = gauss_legendre(n_theta);
    let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(&weights) {
        let ct = 0.5 * (x + 1.0); // map [-1,1] -> cos(theta) in [0,1]
        let st = (1.0 - ct * ct).max(0.0).sqrt();
        for k in 0..n_phi {
            let phi = dphi * k as f64;
            let dir = t1 * (st * phi.cos()) + t2 * (st * phi.sin()) + normal * ct;
            acc += 0.5 * w * dphi * f(dir);
        }
    }
    acc
}
