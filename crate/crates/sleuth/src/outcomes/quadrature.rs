//! Gauss-Hermite quadrature rules for integrating over a Gaussian random
//! intercept.
//!
//! Nodes and weights are computed for the physicists' weight function
//! `exp(-x^2)` by Newton iteration on the recurrence for orthonormal
//! Hermite polynomials; the weights sum to sqrt(pi).

/// Nodes and weights of the n-point Gauss-Hermite rule.
///
/// Panics if `n < 1` or Newton iteration fails to converge (does not occur
/// for n up to several hundred).
pub fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one point");
    const EPS: f64 = 3e-14;
    const MAX_ITER: usize = 80;
    let pi_m4 = std::f64::consts::PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        // Initial guesses for the descending positive roots.
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        let mut converged = false;
        for _ in 0..MAX_ITER {
            // Evaluate the orthonormal Hermite polynomial at z.
            let mut p1 = pi_m4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = (j + 1) as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS {
                converged = true;
                break;
            }
        }
        assert!(converged, "Hermite root {i} of {n} did not converge");
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}
