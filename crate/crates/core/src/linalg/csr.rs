use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use super::LinalgError;

/// Compressed sparse row matrix. Column indices are sorted within each row
/// and compression drops entries that sum to exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        let keep: Vec<usize> = (0..n).filter(|&i| d[i] != 0.0).collect();
        let mut row_ptr = vec![0; n + 1];
        for &i in &keep {
            row_ptr[i + 1] = 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            nrows: n,
            ncols: n,
            row_ptr,
            col_idx: keep.clone(),
            values: keep.iter().map(|&i| d[i]).collect(),
        }
    }

    /// Sum duplicate `(row, col, value)` triplets. The result does not
    /// depend on the order of the input.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut i = 0;
        while i < triplets.len() {
            let (r, c, _) = triplets[i];
            assert!(
                r < nrows && c < ncols,
                "triplet ({r}, {c}) outside {nrows}x{ncols}"
            );
            let mut sum = 0.0;
            while i < triplets.len() && triplets[i].0 == r && triplets[i].1 == c {
                sum += triplets[i].2;
                i += 1;
            }
            if sum != 0.0 {
                col_idx.push(c);
                values.push(sum);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != 0.0 {
                    t.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), t)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(i);
            *yi = cols.iter().zip(vals).map(|(&j, &v)| v * x[j]).sum();
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.matvec_into(x, &mut y);
        y
    }

    /// `y = A^T x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for (i, &xi) in x.iter().enumerate() {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += v * xi;
            }
        }
        y
    }

    /// Quadratic form `x^T A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &j in &self.col_idx {
            counts[j + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                col_idx[next[j]] = i;
                values[next[j]] = v;
                next[j] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// Multiply row `i` by `d[i]`.
    pub fn scale_rows(&mut self, d: &[f64]) {
        for (i, &di) in d.iter().enumerate().take(self.nrows) {
            for v in &mut self.values[self.row_ptr[i]..self.row_ptr[i + 1]] {
                *v *= di;
            }
        }
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &CsrMatrix, s: f64) -> Result<Self, LinalgError> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(LinalgError::ShapeMismatch {
                left: (self.nrows, self.ncols),
                right: (other.nrows, other.ncols),
            });
        }
        let t = self
            .triplets()
            .chain(other.triplets().map(|(i, j, v)| (i, j, s * v)))
            .collect();
        Ok(Self::from_triplets(self.nrows, self.ncols, t))
    }

    /// Sparse product `self * other`.
    pub fn matmul(&self, other: &CsrMatrix) -> Result<Self, LinalgError> {
        if self.ncols != other.nrows {
            return Err(LinalgError::ShapeMismatch {
                left: (self.nrows, self.ncols),
                right: (other.nrows, other.ncols),
            });
        }
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut acc = vec![0.0; other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            let (ca, va) = self.row(i);
            for (&k, &a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(k);
                for (&j, &b) in cb.iter().zip(vb) {
                    if marker[j] != i {
                        marker[j] = i;
                        acc[j] = 0.0;
                        touched.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                if acc[j] != 0.0 {
                    col_idx.push(j);
                    values.push(acc[j]);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Assemble `[[a, b], [c, d]]` from optional blocks with consistent shapes.
    pub fn block2x2(
        a: &CsrMatrix,
        b: Option<&CsrMatrix>,
        c: Option<&CsrMatrix>,
        d: Option<&CsrMatrix>,
        lower_rows: usize,
    ) -> Result<Self, LinalgError> {
        let n0 = a.nrows;
        let m0 = a.ncols;
        let m1 = b
            .map(|b| b.ncols)
            .or(d.map(|d| d.ncols))
            .unwrap_or(lower_rows);
        let mut t: Vec<(usize, usize, f64)> = a.triplets().collect();
        let check = |blk: &CsrMatrix, rows: usize, cols: usize| {
            if blk.nrows != rows || blk.ncols != cols {
                Err(LinalgError::ShapeMismatch {
                    left: (rows, cols),
                    right: (blk.nrows, blk.ncols),
                })
            } else {
                Ok(())
            }
        };
        if let Some(b) = b {
            check(b, n0, m1)?;
            t.extend(b.triplets().map(|(i, j, v)| (i, m0 + j, v)));
        }
        if let Some(c) = c {
            check(c, lower_rows, m0)?;
            t.extend(c.triplets().map(|(i, j, v)| (n0 + i, j, v)));
        }
        if let Some(d) = d {
            check(d, lower_rows, m1)?;
            t.extend(d.triplets().map(|(i, j, v)| (n0 + i, m0 + j, v)));
        }
        Ok(Self::from_triplets(n0 + lower_rows, m0 + m1, t))
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |A - A^T|`.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        self.triplets()
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        self.symmetry_defect() <= rel_tol * self.max_abs()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (i, j, v) in self.triplets() {
            d[(i, j)] = v;
        }
        d
    }

    /// MatrixMarket coordinate format, general real.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(w, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }

    pub fn read_matrix_market<R: BufRead>(r: R) -> Result<Self, LinalgError> {
        let mut lines = r.lines().enumerate();
        let bad = |line: usize, msg: &str| LinalgError::MatrixMarket {
            line: line + 1,
            message: msg.to_string(),
        };
        let (l0, header) = lines.next().ok_or_else(|| bad(0, "empty input"))?;
        let header = header?.to_lowercase();
        if !header.starts_with("%%matrixmarket matrix coordinate real") {
            return Err(bad(l0, "expected a real coordinate matrix"));
        }
        let symmetric = header.contains("symmetric");
        let mut shape = None;
        let mut t = Vec::new();
        for (ln, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if shape.is_none() {
                if f.len() != 3 {
                    return Err(bad(ln, "expected `rows cols nnz`"));
                }
                let p = |s: &str| s.parse::<usize>().map_err(|_| bad(ln, "bad size"));
                shape = Some((p(f[0])?, p(f[1])?));
                continue;
            }
            if f.len() != 3 {
                return Err(bad(ln, "expected `row col value`"));
            }
            let i: usize = f[0].parse().map_err(|_| bad(ln, "bad row"))?;
            let j: usize = f[1].parse().map_err(|_| bad(ln, "bad column"))?;
            let v: f64 = f[2].parse().map_err(|_| bad(ln, "bad value"))?;
            if i == 0 || j == 0 {
                return Err(bad(ln, "indices are 1-based"));
            }
            t.push((i - 1, j - 1, v));
            if symmetric && i != j {
                t.push((j - 1, i - 1, v));
            }
        }
        let (nr, nc) = shape.ok_or_else(|| bad(0, "missing size line"))?;
        if t.iter().any(|&(i, j, _)| i >= nr || j >= nc) {
            return Err(bad(0, "entry outside declared shape"));
        }
        Ok(Self::from_triplets(nr, nc, t))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_sparse(n: usize, m: usize, seed: u64) -> CsrMatrix {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let mut t = Vec::new();
        for i in 0..n {
            for j in 0..m {
                if rng.gen_bool(0.3) {
                    t.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        CsrMatrix::from_triplets(n, m, t)
    }

    #[test]
    fn matvec_matches_dense() {
        for seed in 0..5 {
            let a = random_sparse(20, 20, seed);
            let d = a.to_dense();
            let x: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
            let y = a.matvec(&x);
            let yd = &d * nalgebra::DVector::from_vec(x.clone());
            for i in 0..20 {
                assert!((y[i] - yd[i]).abs() < 1e-13);
            }
            let yt = a.matvec_transpose(&x);
            let ytd = d.transpose() * nalgebra::DVector::from_vec(x);
            for i in 0..20 {
                assert!((yt[i] - ytd[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn compression_sorts_sums_and_drops_zeros() {
        let a = CsrMatrix::from_triplets(
            2,
            3,
            vec![
                (1, 2, 1.0),
                (0, 1, 2.0),
                (1, 0, 3.0),
                (0, 1, -2.0),
                (1, 2, 0.5),
            ],
        );
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.row(1), (&[0usize, 2][..], &[3.0, 1.5][..]));
        assert_eq!(a.get(0, 1), 0.0);
    }

    #[test]
    fn matmul_and_transpose_match_dense() {
        let a = random_sparse(7, 5, 11);
        let b = random_sparse(5, 6, 12);
        let c = a.matmul(&b).unwrap().to_dense();
        let cd = a.to_dense() * b.to_dense();
        assert!((c - cd).abs().max() < 1e-14);
        assert_eq!(a.transpose().transpose(), a);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn block_assembly() {
        let a = CsrMatrix::identity(2);
        let b = CsrMatrix::from_triplets(2, 1, vec![(0, 0, 1.0), (1, 0, -1.0)]);
        let k = CsrMatrix::block2x2(&a, Some(&b), Some(&b.transpose()), None, 1).unwrap();
        assert_eq!((k.nrows(), k.ncols()), (3, 3));
        assert!(k.is_symmetric(0.0));
        assert_eq!(k.get(2, 1), -1.0);
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = random_sparse(6, 4, 3);
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf).unwrap();
        let back = CsrMatrix::read_matrix_market(buf.as_slice()).unwrap();
        assert_eq!(a, back);
        let sym = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 2.0\n2 1 -1.0\n";
        let s = CsrMatrix::read_matrix_market(sym.as_bytes()).unwrap();
        assert_eq!(s.get(0, 1), -1.0);
        assert!(CsrMatrix::read_matrix_market("garbage\n".as_bytes()).is_err());
    }
}
