//! Gaussian-copula machinery for rank-one covariance matrices:
//! closed-form density, O(D) sampling, and rank-correlation diagnostics.
//! Usable on its own, apart from any trained model.

use crate::dist::{std_normal_cdf, std_normal_quantile};
use crate::ndcore::{Matrix, Rng, Vector};

/// `log |omega*I + a*a^T|` via the rank-one determinant identity.
pub fn rank_one_logdet(a: &[f64], omega: f64) -> f64 {
    let d = a.len() as f64;
    let norm_sq: f64 = a.iter().map(|v| v * v).sum();
    d * omega.ln() + (norm_sq / omega).ln_1p()
}

/// `x^T (omega*I + a*a^T)^{-1} x` via the Sherman-Morrison identity.
pub fn rank_one_quad(a: &[f64], omega: f64, x: &[f64]) -> f64 {
    assert_eq!(a.len(), x.len(), "rank_one_quad: length mismatch");
    let norm_sq: f64 = a.iter().map(|v| v * v).sum();
    let xx: f64 = x.iter().map(|v| v * v).sum();
    let ax: f64 = a.iter().zip(x).map(|(ai, xi)| ai * xi).sum();
    xx / omega - ax * ax / (omega * omega + omega * norm_sq)
}

/// Covariance of the form `Sigma = omega*I + a*a^T` with `omega > 0`.
#[derive(Clone, Debug)]
pub struct RankOneCovariance {
    pub a: Vector,
    pub omega: f64,
}

impl RankOneCovariance {
    pub fn new(a: Vector, omega: f64) -> Self {
        assert!(omega > 0.0 && omega.is_finite(), "omega must be positive");
        assert!(a.all_finite(), "principal direction must be finite");
        RankOneCovariance { a, omega }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Marginal standard deviation `sigma_d = sqrt(omega + a_d^2)`.
    pub fn sigma(&self, d: usize) -> f64 {
        (self.omega + self.a[d] * self.a[d]).sqrt()
    }

    pub fn log_det(&self) -> f64 {
        rank_one_logdet(self.a.as_slice(), self.omega)
    }

    pub fn quad_form(&self, x: &Vector) -> f64 {
        rank_one_quad(self.a.as_slice(), self.omega, x.as_slice())
    }

    /// Pearson correlation between dimensions `i` and `j`:
    /// `a_i a_j / (sigma_i sigma_j)`.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.a[i] * self.a[j] / (self.sigma(i) * self.sigma(j))
    }
}

/// One draw from the Gaussian copula, kept in both spaces.
#[derive(Clone, Debug)]
pub struct CopulaSample {
    /// Normal-score space: `q ~ N(0, Sigma)`.
    pub q: Vector,
    /// Unit-cube space: `u_d = Phi(q_d / sigma_d)`.
    pub u: Vector,
}

/// Gaussian copula density at `u` in the open unit cube, for normal scores
/// `q_d = sigma_d * quantile(u_d)`:
/// `(prod sigma_d) |Sigma|^{-1/2} exp( (q^T diag(sigma^2)^{-1} q - q^T Sigma^{-1} q) / 2 )`.
///
/// Panics when any coordinate lies on the cube boundary (domain error).
pub fn copula_density(u: &Vector, cov: &RankOneCovariance) -> f64 {
    assert_eq!(u.len(), cov.dim(), "copula_density: dimension mismatch");
    assert!(
        u.iter().all(|&ui| ui > 0.0 && ui < 1.0),
        "copula_density: u must lie strictly inside the unit cube"
    );
    let q: Vector = (0..cov.dim())
        .map(|d| cov.sigma(d) * std_normal_quantile(u[d]))
        .collect();
    log_copula_density_q(&q, cov).exp()
}

/// Log copula density given precomputed normal scores `q` (q_d = sigma_d * Phi^{-1}(u_d)).
pub fn log_copula_density_q(q: &Vector, cov: &RankOneCovariance) -> f64 {
    let mut log_sigmas = 0.0;
    let mut diag_quad = 0.0;
    for d in 0..cov.dim() {
        let s = cov.sigma(d);
        log_sigmas += s.ln();
        diag_quad += q[d] * q[d] / (s * s);
    }
    log_sigmas - 0.5 * cov.log_det() + 0.5 * (diag_quad - cov.quad_form(q))
}

/// Draw `n` copula samples using the rank-one construction
/// `q = a*s + sqrt(omega)*eps` with `s`, `eps` standard normal.
pub fn sample(cov: &RankOneCovariance, n: usize, rng: &mut Rng) -> Vec<CopulaSample> {
    assert!(n >= 1, "sample: n must be >= 1");
    let sqrt_omega = cov.omega.sqrt();
    (0..n)
        .map(|_| {
            let s = rng.std_normal();
            let q: Vector = (0..cov.dim())
                .map(|d| cov.a[d] * s + sqrt_omega * rng.std_normal())
                .collect();
            let u: Vector = (0..cov.dim())
                .map(|d| std_normal_cdf(q[d] / cov.sigma(d)))
                .collect();
            CopulaSample { q, u }
        })
        .collect()
}

/// Kendall's tau between dimensions `i != j`, via the Gaussian bridge
/// `tau = (2/pi) * asin(rho_ij)`.
pub fn kendall_tau(cov: &RankOneCovariance, i: usize, j: usize) -> f64 {
    assert_ne!(i, j, "kendall_tau: need two distinct dimensions");
    (2.0 / std::f64::consts::PI) * cov.correlation(i, j).asin()
}

/// Pairwise Kendall's-tau matrix with unit diagonal.
pub fn rank_correlation_matrix(cov: &RankOneCovariance) -> Matrix {
    let d = cov.dim();
    let mut m = Matrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                m[(i, j)] = kendall_tau(cov, i, j);
            }
        }
    }
    m
}

/// Empirical Kendall's tau (tau-b) in O(n log n) by inversion counting.
/// Returns 0 when either margin is constant.
pub fn kendall_tau_empirical(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "kendall_tau_empirical: length mismatch");
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let n0 = n * (n - 1) / 2;
    let mut n1 = 0usize; // ties in x
    let mut n3 = 0usize; // joint ties
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        let t = j - i;
        n1 += t * (t - 1) / 2;
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && pairs[l].1 == pairs[k].1 {
                l += 1;
            }
            let tt = l - k;
            n3 += tt * (tt - 1) / 2;
            k = l;
        }
        i = j;
    }

    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let swaps = count_inversions(&mut ys_sorted);
    // ys_sorted is now ordered; count ties in y
    let mut n2 = 0usize;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys_sorted[j] == ys_sorted[i] {
            j += 1;
        }
        let t = j - i;
        n2 += t * (t - 1) / 2;
        i = j;
    }

    let num = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let den = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Merge-sort inversion count; sorts `xs` in place.
fn count_inversions(xs: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mut buf = xs.to_vec();
    merge_count(xs, &mut buf)
}

fn merge_count(xs: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let (left_buf, right_buf) = buf.split_at_mut(mid);
    let mut inv = {
        let (left, right) = xs.split_at_mut(mid);
        merge_count(left, left_buf) + merge_count(right, right_buf)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if xs[i] <= xs[j] {
            buf[k] = xs[i];
            i += 1;
        } else {
            buf[k] = xs[j];
            inv += (mid - i) as u64;
            j += 1;
        }
        k += 1;
    }
    while i < mid {
        buf[k] = xs[i];
        i += 1;
        k += 1;
    }
    while j < n {
        buf[k] = xs[j];
        j += 1;
        k += 1;
    }
    xs.copy_from_slice(&buf[..n]);
    inv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov2(a1: f64, a2: f64, omega: f64) -> RankOneCovariance {
        RankOneCovariance::new(Vector::from_vec(vec![a1, a2]), omega)
    }

    #[test]
    fn identity_copula_density_is_one() {
        let cov = cov2(0.0, 0.0, 1.0);
        let mut rng = Rng::new(1);
        for _ in 0..100 {
            let u = Vector::from_vec(vec![
                0.001 + 0.998 * rng.uniform(),
                0.001 + 0.998 * rng.uniform(),
            ]);
            let c = copula_density(&u, &cov);
            assert!((c - 1.0).abs() < 1e-12, "density {c}");
        }
    }

    /// Midpoint-rule integral of the copula density over (0,1)^2.
    fn integral_2d(cov: &RankOneCovariance) -> f64 {
        let n = 400;
        let margin = 1e-4;
        let w = (1.0 - 2.0 * margin) / n as f64;
        // precompute per-axis normal scores at cell midpoints
        let scores: Vec<f64> = (0..n)
            .map(|i| std_normal_quantile(margin + (i as f64 + 0.5) * w))
            .collect();
        let (s0, s1) = (cov.sigma(0), cov.sigma(1));
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let q = Vector::from_vec(vec![s0 * scores[i], s1 * scores[j]]);
                acc += log_copula_density_q(&q, cov).exp();
            }
        }
        acc * w * w
    }

    #[test]
    fn density_integrates_to_one_in_2d() {
        let mut rng = Rng::new(2);
        for _ in 0..3 {
            let cov = cov2(
                2.0 * rng.uniform() - 1.0,
                2.0 * rng.uniform() - 1.0,
                0.3 + rng.uniform(),
            );
            let integral = integral_2d(&cov);
            assert!((integral - 1.0).abs() < 1e-2, "integral {integral}");
        }
    }

    #[test]
    fn density_reflection_symmetry() {
        let cov = cov2(0.8, 0.5, 0.4);
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let u = Vector::from_vec(vec![
                0.01 + 0.98 * rng.uniform(),
                0.01 + 0.98 * rng.uniform(),
            ]);
            let refl = Vector::from_vec(vec![1.0 - u[0], 1.0 - u[1]]);
            let c1 = copula_density(&u, &cov);
            let c2 = copula_density(&refl, &cov);
            assert!((c1 - c2).abs() <= 1e-9 * c1.abs().max(1.0), "{c1} vs {c2}");
        }
    }

    #[test]
    #[should_panic(expected = "strictly inside")]
    fn density_rejects_boundary() {
        copula_density(&Vector::from_vec(vec![0.0, 0.5]), &cov2(0.1, 0.2, 1.0));
    }

    #[test]
    fn independent_case_gives_uniform_marginals() {
        let cov = cov2(0.0, 0.0, 1.7);
        let mut rng = Rng::new(4);
        let samples = sample(&cov, 20_000, &mut rng);
        for dim in 0..2 {
            let mut us: Vec<f64> = samples.iter().map(|s| s.u[dim]).collect();
            us.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = us.len();
            let mut d: f64 = 0.0;
            for (i, u) in us.iter().enumerate() {
                assert!(*u > 0.0 && *u < 1.0);
                d = d.max((u - i as f64 / n as f64).abs());
                d = d.max(((i + 1) as f64 / n as f64 - u).abs());
            }
            // 1.63/sqrt(n) is the alpha=0.01 critical value
            assert!(d < 1.63 / (n as f64).sqrt(), "KS {d}");
        }
    }

    #[test]
    fn sample_covariance_matches_rank_one_form() {
        let cov = cov2(0.9, -0.6, 0.5);
        let mut rng = Rng::new(5);
        let samples = sample(&cov, 100_000, &mut rng);
        let mut m = [[0.0; 2]; 2];
        for s in &samples {
            for i in 0..2 {
                for j in 0..2 {
                    m[i][j] += s.q[i] * s.q[j];
                }
            }
        }
        let n = samples.len() as f64;
        let expect = |i: usize, j: usize| {
            cov.a[i] * cov.a[j] + if i == j { cov.omega } else { 0.0 }
        };
        for i in 0..2 {
            for j in 0..2 {
                let got = m[i][j] / n;
                let want = expect(i, j);
                assert!(
                    (got - want).abs() < 0.02 * want.abs().max(1.0),
                    "cov[{i}][{j}] {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn kendall_tau_closed_form_cases() {
        let cov = cov2(0.0, 1.0, 1.0);
        assert_eq!(kendall_tau(&cov, 0, 1), 0.0);

        // build rho = 0.5: a = (c, c), omega s.t. c^2/(c^2+omega) = 0.5
        let cov = cov2(1.0, 1.0, 1.0);
        assert!((cov.correlation(0, 1) - 0.5).abs() < 1e-15);
        assert!((kendall_tau(&cov, 0, 1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empirical_tau_matches_arcsine_bridge() {
        let cov = cov2(1.0, 1.0, 1.0); // rho = 0.5, tau = 1/3
        let mut rng = Rng::new(6);
        let samples = sample(&cov, 100_000, &mut rng);
        let xs: Vec<f64> = samples.iter().map(|s| s.u[0]).collect();
        let ys: Vec<f64> = samples.iter().map(|s| s.u[1]).collect();
        let tau = kendall_tau_empirical(&xs, &ys);
        assert!((tau - 1.0 / 3.0).abs() < 0.01, "tau {tau}");
    }

    #[test]
    fn concordance_sign_follows_direction_product() {
        let mut rng = Rng::new(7);
        for &(a1, a2) in &[(0.8, 0.7), (0.8, -0.7), (-0.5, -0.9)] {
            let cov = cov2(a1, a2, 0.3);
            let samples = sample(&cov, 20_000, &mut rng);
            let xs: Vec<f64> = samples.iter().map(|s| s.u[0]).collect();
            let ys: Vec<f64> = samples.iter().map(|s| s.u[1]).collect();
            let tau = kendall_tau_empirical(&xs, &ys);
            assert_eq!(tau.signum(), (a1 * a2).signum(), "tau {tau}");
            assert_eq!(kendall_tau(&cov, 0, 1).signum(), (a1 * a2).signum());
        }
    }

    #[test]
    fn rank_matrix_properties() {
        let cov = RankOneCovariance::new(Vector::from_vec(vec![0.0, 0.0, 0.0]), 2.0);
        assert_eq!(rank_correlation_matrix(&cov), Matrix::identity(3));

        let cov = RankOneCovariance::new(Vector::from_vec(vec![1.0, -0.5, 0.3]), 0.7);
        let m = rank_correlation_matrix(&cov);
        for i in 0..3 {
            assert_eq!(m[(i, i)], 1.0);
            for j in 0..3 {
                assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-15);
                assert!(m[(i, j)] >= -1.0 && m[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn empirical_tau_small_cases() {
        assert_eq!(kendall_tau_empirical(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(kendall_tau_empirical(&[1.0, 2.0], &[2.0, 1.0]), -1.0);
        // constant margin
        assert_eq!(kendall_tau_empirical(&[1.0, 1.0], &[1.0, 2.0]), 0.0);
        // brute-force check with ties
        let xs: [f64; 7] = [3.0, 1.0, 1.0, 2.0, 2.0, 3.0, 0.5];
        let ys: [f64; 7] = [1.0, 2.0, 2.0, 0.0, 1.5, 1.0, 2.5];
        let n = xs.len();
        let (mut p, mut q, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = xs[i] - xs[j];
                let dy = ys[i] - ys[j];
                if dx == 0.0 {
                    tx += 1;
                }
                if dy == 0.0 {
                    ty += 1;
                }
                if dx != 0.0 && dy != 0.0 {
                    if (dx > 0.0) == (dy > 0.0) {
                        p += 1;
                    } else {
                        q += 1;
                    }
                }
            }
        }
        let n0 = (n * (n - 1) / 2) as f64;
        let brute = (p - q) as f64 / ((n0 - tx as f64) * (n0 - ty as f64)).sqrt();
        let fast = kendall_tau_empirical(&xs, &ys);
        assert!((brute - fast).abs() < 1e-12, "{brute} vs {fast}");
    }
}
