//! Symmetric positive definite solves in skyline (profile) storage.

/// Lower triangle stored row by row from the first structurally nonzero
/// column.
#[derive(Clone, Debug)]
pub struct Skyline {
    first: Vec<usize>,
    start: Vec<usize>,
    vals: Vec<f64>,
}

impl Skyline {
    /// Empty matrix whose row `i` may hold entries in columns
    /// `first[i]..=i`.
    pub fn new(first: Vec<usize>) -> Self {
        let mut start = Vec::with_capacity(first.len() + 1);
        let mut acc = 0;
        for (i, &f) in first.iter().enumerate() {
            assert!(f <= i, "profile must be lower triangular");
            start.push(acc);
            acc += i - f + 1;
        }
        start.push(acc);
        Skyline { first, start, vals: vec![0.0; acc] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `v` at `(i, j)`, either triangle.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(c >= self.first[r]);
        self.vals[self.start[r] + c - self.first[r]] += v;
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.vals[self.start[i] + i - self.first[i]]
    }

    pub fn add_diag(&mut self, shift: f64) {
        for i in 0..self.dim() {
            self.add(i, i, shift);
        }
    }

    /// In-place Cholesky factor `L Lᵀ`. Returns `false` on a nonpositive
    /// pivot, leaving the contents unspecified.
    pub fn factor(&mut self) -> bool {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let si = self.start[i];
            for j in fi..=i {
                let fj = self.first[j];
                let sj = self.start[j];
                let k0 = fi.max(fj);
                let mut s = self.vals[si + j - fi];
                for k in k0..j {
                    s -= self.vals[si + k - fi] * self.vals[sj + k - fj];
                }
                if j < i {
                    s /= self.vals[sj + j - fj];
                    self.vals[si + j - fi] = s;
                } else {
                    if s <= 0.0 || !s.is_finite() {
                        return false;
                    }
                    self.vals[si + i - fi] = s.sqrt();
                }
            }
        }
        true
    }

    /// Solves with a factored matrix.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let (fi, si) = (self.first[i], self.start[i]);
            let mut s = b[i];
            for k in fi..i {
                s -= self.vals[si + k - fi] * b[k];
            }
            b[i] = s / self.vals[si + i - fi];
        }
        for i in (0..n).rev() {
            let (fi, si) = (self.first[i], self.start[i]);
            b[i] /= self.vals[si + i - fi];
            let bi = b[i];
            for k in fi..i {
                b[k] -= self.vals[si + k - fi] * bi;
            }
        }
    }
}
