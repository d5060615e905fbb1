use crate::error::{Error, Result};

use super::{CsrMatrix, Scalar};

/// Square band matrix with `kl` sub- and `ku` super-diagonals.
///
/// Row `i` stores columns `i - kl ..= i + kl + ku`; the extra `kl` slots on the
/// right hold fill-in produced by row pivoting.
#[derive(Debug, Clone)]
pub struct BandMatrix<T: Scalar> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![T::zero(); n * width],
        }
    }

    /// `Σ c_k A_k` for CSR operands sharing a dimension.
    pub fn from_combination(terms: &[(T, &CsrMatrix)]) -> Self {
        assert!(!terms.is_empty());
        let n = terms[0].1.dim();
        let bw = terms.iter().map(|(_, a)| a.half_bandwidth()).max().unwrap();
        let mut out = Self::zeros(n, bw, bw);
        for (c, a) in terms {
            assert_eq!(a.dim(), n);
            for (i, j, v) in a.triplets() {
                out.add(i, j, c.scale(v));
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn add(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside the band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            T::zero()
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).fold(T::zero(), |acc, j| acc + self.data[self.idx(i, j)] * x[j])
            })
            .collect()
    }

    /// LU factorization with partial pivoting. Consumes the matrix.
    pub fn factor(mut self) -> Result<BandLu<T>> {
        let n = self.n;
        let kl = self.kl;
        let reach = kl + self.ku;
        let mut piv = vec![0usize; n];
        let mut max_pivot = 0.0f64;
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);

            let mut p = k;
            let mut best = self.data[self.idx(k, k)].modulus();
            for i in k + 1..=last_row {
                let m = self.data[self.idx(i, k)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::Singular { row: k });
            }
            max_pivot = max_pivot.max(best);
            min_pivot = min_pivot.min(best);
            piv[k] = p;
            if p != k {
                for j in k..=last_col {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }

            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=last_col {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandLu {
            a: self,
            piv,
            pivot_ratio: if n == 0 { 1.0 } else { min_pivot / max_pivot },
        })
    }
}

/// Factorized band matrix. Solves take `&self` and are safe to share.
#[derive(Debug, Clone)]
pub struct BandLu<T: Scalar> {
    a: BandMatrix<T>,
    piv: Vec<usize>,
    pivot_ratio: f64,
}

impl<T: Scalar> BandLu<T> {
    pub fn dim(&self) -> usize {
        self.a.n
    }

    /// `min |u_kk| / max |u_kk|`, a cheap conditioning indicator.
    pub fn pivot_ratio(&self) -> f64 {
        self.pivot_ratio
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [T]) {
        let a = &self.a;
        let n = a.n;
        assert_eq!(x.len(), n);
        let reach = a.kl + a.ku;
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            if xk == T::zero() {
                continue;
            }
            for i in k + 1..=(k + a.kl).min(n.saturating_sub(1)) {
                x[i] -= a.data[a.idx(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + reach).min(n - 1) {
                s -= a.data[a.idx(k, j)] * x[j];
            }
            x[k] = s / a.data[a.idx(k, k)];
        }
    }
}

impl BandLu<f64> {
    /// Solves a complex right-hand side against a real factorization.
    pub fn solve_complex(&self, b: &[num_complex::Complex64]) -> Vec<num_complex::Complex64> {
        let mut re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let mut im: Vec<f64> = b.iter().map(|z| z.im).collect();
        self.solve_in_place(&mut re);
        self.solve_in_place(&mut im);
        re.into_iter()
            .zip(im)
            .map(|(r, i)| num_complex::Complex64::new(r, i))
            .collect()
    }
}
