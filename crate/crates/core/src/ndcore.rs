//! Dense vector/matrix arithmetic and a seedable pseudo-random source.
//!
//! Everything downstream (networks, model cores, copula sampling) is built on
//! these three types. Storage is row-major `f64`; there is intentionally no
//! BLAS, no sparsity and no 32-bit mode — the problem sizes here never
//! justify them and the gradient checks need full double precision.

use std::ops::{Index, IndexMut};

/// Dense column vector of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(n: usize) -> Self {
        Vector { data: vec![0.0; n] }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector { data }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Vector { data: s.to_vec() }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    /// Sum of absolute values.
    pub fn norm_l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "add: length mismatch");
        Vector::from_vec(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "sub: length mismatch");
        Vector::from_vec(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Vector {
        Vector::from_vec(self.data.iter().map(|v| c * v).collect())
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Vector) {
        assert_eq!(self.len(), other.len(), "axpy: length mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

impl FromIterator<f64> for Vector {
    fn from_iter<T: IntoIterator<Item = f64>>(iter: T) -> Self {
        Vector::from_vec(iter.into_iter().collect())
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "from_rows: ragged rows");
            data.extend_from_slice(row);
        }
        Matrix { rows: r, cols: c, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "from_vec: size mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `m · v`.
    pub fn matvec(&self, v: &Vector) -> Vector {
        assert_eq!(
            self.cols,
            v.len(),
            "matvec: {}x{} matrix applied to length-{} vector",
            self.rows,
            self.cols,
            v.len()
        );
        let mut out = Vec::with_capacity(self.rows);
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(v.as_slice()) {
                acc += a * b;
            }
            out.push(acc);
        }
        Vector::from_vec(out)
    }

    /// `mᵀ · v`.
    pub fn matvec_t(&self, v: &Vector) -> Vector {
        assert_eq!(
            self.rows,
            v.len(),
            "matvec_t: {}x{} matrix, length-{} vector",
            self.rows,
            self.cols,
            v.len()
        );
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += vi * a;
            }
        }
        Vector::from_vec(out)
    }

    /// `self += c · u vᵀ` (rank-one accumulation, used for weight gradients).
    pub fn add_outer(&mut self, c: f64, u: &Vector, v: &Vector) {
        assert_eq!(self.rows, u.len(), "add_outer: row mismatch");
        assert_eq!(self.cols, v.len(), "add_outer: col mismatch");
        for i in 0..self.rows {
            let cu = c * u[i];
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, b) in row.iter_mut().zip(v.as_slice()) {
                *r += cu * b;
            }
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Seedable pseudo-random source (SplitMix64 core).
///
/// Identical seed gives an identical stream, bit for bit. An `Rng` is
/// single-owner: parallel code must derive child generators with
/// [`Rng::split`] instead of sharing one.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
    cached_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            state: seed,
            cached_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Derive an independent child generator; advances this stream by one.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64() ^ 0xa5a5_a5a5_5a5a_5a5a)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via the polar (Marsaglia) method.
    pub fn std_normal(&mut self) -> f64 {
        if let Some(v) = self.cached_normal.take() {
            return v;
        }
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                self.cached_normal = Some(v * f);
                return u * f;
            }
        }
    }

    pub fn sample_uniform(&mut self, n: usize) -> Vector {
        assert!(n >= 1, "sample_uniform: n must be >= 1");
        (0..n).map(|_| self.uniform()).collect()
    }

    pub fn sample_std_normal(&mut self, n: usize) -> Vector {
        assert!(n >= 1, "sample_std_normal: n must be >= 1");
        (0..n).map(|_| self.std_normal()).collect()
    }

    /// Unbiased draw from `0..n` by rejection.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below: empty range");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` (partial Fisher-Yates).
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "choose_indices: k > n");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat_2x2(a: f64, b: f64, c: f64, d: f64) -> Matrix {
        Matrix::from_rows(&[&[a, b], &[c, d]])
    }

    #[test]
    fn matvec_identity() {
        let m = Matrix::identity(3);
        let v = Vector::from_slice(&[1.0, 2.0, 3.0]);
        assert_eq!(m.matvec(&v), v);
    }

    #[test]
    fn matvec_zero_annihilates() {
        let m = Matrix::zeros(2, 2);
        let v = Vector::from_slice(&[5.0, 7.0]);
        assert_eq!(m.matvec(&v), Vector::zeros(2));
    }

    #[test]
    fn matvec_hand_expansion() {
        let m = mat_2x2(1.0, 2.0, 3.0, 4.0);
        let v = Vector::from_slice(&[1.0, 1.0]);
        let r = m.matvec(&v);
        assert_eq!(r.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    #[should_panic(expected = "matvec")]
    fn matvec_dimension_mismatch_panics() {
        let m = Matrix::zeros(2, 3);
        let v = Vector::zeros(2);
        m.matvec(&v);
    }

    #[test]
    fn matvec_distributes_over_addition() {
        let mut rng = Rng::new(7);
        for _ in 0..50 {
            let rows = 1 + rng.below(6);
            let cols = 1 + rng.below(6);
            let m = Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.std_normal()).collect(),
            );
            let u = rng.sample_std_normal(cols);
            let v = rng.sample_std_normal(cols);
            let lhs = m.matvec(&u.add(&v));
            let rhs = m.matvec(&u).add(&m.matvec(&v));
            for i in 0..rows {
                assert!((lhs[i] - rhs[i]).abs() <= 1e-12, "{} vs {}", lhs[i], rhs[i]);
            }
        }
    }

    #[test]
    fn matvec_t_agrees_with_explicit_transpose() {
        let m = mat_2x2(1.0, 2.0, 3.0, 4.0);
        let v = Vector::from_slice(&[1.0, -1.0]);
        // transpose is ((1,3),(2,4))
        let r = m.matvec_t(&v);
        assert_eq!(r.as_slice(), &[-2.0, -2.0]);
    }

    #[test]
    fn outer_accumulation() {
        let mut m = Matrix::zeros(2, 3);
        let u = Vector::from_slice(&[1.0, 2.0]);
        let v = Vector::from_slice(&[1.0, 0.0, -1.0]);
        m.add_outer(2.0, &u, &v);
        assert_eq!(m.row(0), &[2.0, 0.0, -2.0]);
        assert_eq!(m.row(1), &[4.0, 0.0, -4.0]);
    }

    #[test]
    fn seeded_streams_reproduce() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        let xs = a.sample_std_normal(100);
        let ys = b.sample_std_normal(100);
        assert_eq!(xs, ys);
    }

    #[test]
    fn uniform_range_and_moments() {
        let mut rng = Rng::new(1);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = rng.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn normal_moments() {
        let mut rng = Rng::new(2);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let x = rng.std_normal();
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn finite_outputs_on_finite_inputs() {
        let mut rng = Rng::new(3);
        for _ in 0..20 {
            let m = Matrix::from_vec(4, 4, (0..16).map(|_| rng.std_normal() * 1e6).collect());
            let v = rng.sample_std_normal(4).scale(1e6);
            assert!(m.matvec(&v).all_finite());
            assert!(m.matvec_t(&v).all_finite());
            assert!(rng.sample_uniform(64).all_finite());
            assert!(rng.sample_std_normal(64).all_finite());
        }
    }

    #[test]
    fn choose_indices_distinct_and_in_range() {
        let mut rng = Rng::new(9);
        for _ in 0..100 {
            let n = 1 + rng.below(30);
            let k = rng.below(n + 1);
            let idx = rng.choose_indices(n, k);
            assert_eq!(idx.len(), k);
            let mut seen = vec![false; n];
            for &i in &idx {
                assert!(i < n);
                assert!(!seen[i], "duplicate index");
                seen[i] = true;
            }
        }
    }
}
