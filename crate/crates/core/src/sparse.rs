//! Minimal sparse symmetric linear algebra: COO assembly buffer and a CSR
//! matrix with the handful of operations the solvers need.

/// Triplet buffer filled during assembly. Duplicate entries are summed when
/// the buffer is compressed; compression sorts by (row, col) so the result
/// is independent of insertion order.
#[derive(Debug, Clone)]
pub struct Coo {
    pub n: usize,
    entries: Vec<(u32, u32, f64)>,
}

impl Coo {
    pub fn new(n: usize) -> Self {
        Coo {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.n && j < self.n);
        if v != 0.0 {
            self.entries.push((i as u32, j as u32, v));
        }
    }

    pub fn to_csr(mut self) -> Csr {
        // stable sort: duplicate (row, col) entries keep their push order,
        // so transposed entries sum in the same order and symmetric element
        // contributions stay bit-symmetric
        self.entries.sort_by_key(|e| (e.0, e.1));
        let n = self.n;
        let mut col: Vec<u32> = Vec::new();
        let mut val: Vec<f64> = Vec::new();
        let mut counts = vec![0usize; n];
        let mut last: Option<(u32, u32)> = None;
        for &(i, j, v) in &self.entries {
            if last == Some((i, j)) {
                *val.last_mut().unwrap() += v;
            } else {
                col.push(j);
                val.push(v);
                counts[i as usize] += 1;
                last = Some((i, j));
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for i in 0..n {
            row_ptr[i + 1] = row_ptr[i] + counts[i];
        }
        Csr {
            n,
            row_ptr,
            col,
            val,
        }
    }
}

/// Compressed sparse row matrix, square.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col: Vec<u32>,
    pub val: Vec<f64>,
}

impl Csr {
    pub fn zeros(n: usize) -> Self {
        Csr {
            n,
            row_ptr: vec![0; n + 1],
            col: Vec::new(),
            val: Vec::new(),
        }
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            y[i] = s;
        }
    }

    /// y += c * A x
    pub fn matvec_add(&self, c: f64, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.val[k] * x[self.col[k] as usize];
            }
            y[i] += c * s;
        }
    }

    /// x' A y
    pub fn quad(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n {
            let mut r = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                r += self.val[k] * y[self.col[k] as usize];
            }
            s += x[i] * r;
        }
        s
    }

    pub fn diag(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.col[k] as usize == i {
                    d[i] += self.val[k];
                }
            }
        }
        d
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let mut s = 0.0;
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            if self.col[k] as usize == j {
                s += self.val[k];
            }
        }
        s
    }

    /// max_{ij} |A_ij - A_ji|
    pub fn symmetry_error(&self) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col[k] as usize;
                e = e.max((self.val[k] - self.get(j, i)).abs());
            }
        }
        e
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                a[i * n + self.col[k] as usize] += self.val[k];
            }
        }
        a
    }

    /// A + c * B (same dimension; patterns may differ).
    pub fn add_scaled(&self, c: f64, other: &Csr) -> Csr {
        assert_eq!(self.n, other.n);
        let mut coo = Coo::new(self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                coo.push(i, self.col[k] as usize, self.val[k]);
            }
            for k in other.row_ptr[i]..other.row_ptr[i + 1] {
                coo.push(i, other.col[k] as usize, c * other.val[k]);
            }
        }
        coo.to_csr()
    }
}
