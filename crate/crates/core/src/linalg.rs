//! Banded symmetric positive definite systems (lower band storage).

#[derive(Debug, Clone)]
pub(crate) struct BandedSpd {
    n: usize,
    bw: usize,
    // data[i * (bw + 1) + k] holds A[i][i - k].
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct NotPositiveDefinite(pub usize);

impl BandedSpd {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Adds `v` to `A[i][j]` (and implicitly `A[j][i]`).
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// In-place Cholesky factorization `A = L Lᵀ`.
    pub fn factor(mut self) -> Result<BandedCholesky, NotPositiveDefinite> {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut d = self.data[self.idx(j, j)];
            for k in lo..j {
                let l = self.data[self.idx(j, k)];
                d -= l * l;
            }
            if !(d > 0.0) {
                return Err(NotPositiveDefinite(j));
            }
            let d = d.sqrt();
            let jj = self.idx(j, j);
            self.data[jj] = d;
            for i in (j + 1)..n.min(j + bw + 1) {
                let mut s = self.data[self.idx(i, j)];
                for k in i.saturating_sub(bw)..j {
                    s -= self.data[self.idx(i, k)] * self.data[self.idx(j, k)];
                }
                let ij = self.idx(i, j);
                self.data[ij] = s / d;
            }
        }
        Ok(BandedCholesky(self))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BandedCholesky(BandedSpd);

impl BandedCholesky {
    #[allow(clippy::needless_range_loop)]
    pub fn solve(&self, rhs: &mut [f64]) {
        let l = &self.0;
        let (n, bw) = (l.n, l.bw);
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(bw)..i {
                s -= l.data[l.idx(i, k)] * rhs[k];
            }
            rhs[i] = s / l.data[l.idx(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in (i + 1)..n.min(i + bw + 1) {
                s -= l.data[l.idx(k, i)] * rhs[k];
            }
            rhs[i] = s / l.data[l.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_against_dense_product() {
        // Pentadiagonal SPD matrix with bandwidth 2.
        let n = 9;
        let bw = 2;
        let mut dense = vec![vec![0.0; n]; n];
        let mut band = BandedSpd::zeros(n, bw);
        for i in 0..n {
            dense[i][i] = 6.0 + i as f64 * 0.1;
            band.add(i, i, dense[i][i]);
            for k in 1..=bw {
                if i + k < n {
                    let v = -1.0 / (k as f64 + 0.3 * i as f64);
                    dense[i][i + k] = v;
                    dense[i + k][i] = v;
                    band.add(i + k, i, v);
                }
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mut b: Vec<f64> = (0..n).map(|i| (0..n).map(|j| dense[i][j] * x[j]).sum()).collect();
        band.factor().unwrap().solve(&mut b);
        for (a, e) in b.iter().zip(&x) {
            assert!((a - e).abs() < 1e-13);
        }
    }

    #[test]
    fn indefinite_detected() {
        let mut band = BandedSpd::zeros(2, 1);
        band.add(0, 0, 1.0);
        band.add(1, 1, 1.0);
        band.add(1, 0, 2.0);
        assert_eq!(band.factor().unwrap_err(), NotPositiveDefinite(1));
    }
}
