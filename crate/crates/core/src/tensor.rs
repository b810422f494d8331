//! Dense multilinear algebra: matrix products, tensor unfolding, mode-k
//! products, and CP / Tucker reconstruction.
//!
//! Tensors are stored with the first index varying fastest. In math
//! notation the element `x(i₁, …, i_K)` (1-based) sits at offset
//! `Σ_t (i_t − 1)·∏_{n<t} I_n`; in code every index and every mode number
//! is 0-based, so mode `k` here is mode `k + 1` in the usual notation.
//! With this layout the mode-0 unfolding is a plain reinterpretation of
//! the storage.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Elementwise product of two equally shaped matrices.
pub fn hadamard(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.dim() != b.dim() {
        return Err(Error::dim(format!(
            "hadamard operands have shapes {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(&a * &b)
}

/// Kronecker product. Row blocks follow the rows of `a`: element
/// `(i·J + j, m·N + n)` equals `a(i, m)·b(j, n)`.
pub fn kronecker(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (ri, ci) = a.dim();
    let (rj, cj) = b.dim();
    let mut out = Array2::zeros((ri * rj, ci * cj));
    for ((i, m), &av) in a.indexed_iter() {
        let mut block = out.slice_mut(ndarray::s![i * rj..(i + 1) * rj, m * cj..(m + 1) * cj]);
        block.zip_mut_with(&b, |o, &bv| *o = av * bv);
    }
    out
}

/// Column-wise Kronecker product: column `n` of the result is `a_n ⊗ b_n`.
pub fn khatri_rao(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::dim(format!(
            "khatri-rao operands need equal column counts, got {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (ri, n) = a.dim();
    let rj = b.nrows();
    let mut out = Array2::zeros((ri * rj, n));
    for col in 0..n {
        for i in 0..ri {
            let av = a[[i, col]];
            for j in 0..rj {
                out[[i * rj + j, col]] = av * b[[j, col]];
            }
        }
    }
    Ok(out)
}

/// Kronecker product of two vectors, `a` outer and `b` inner.
pub fn kron_vec(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() * b.len());
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[i * b.len() + j] = av * bv;
        }
    }
    out
}

/// An order-K real tensor with first-index-fastest storage.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::dim("tensor order must be at least 1"));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::dim(format!("tensor extents must be positive, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    /// Builds a tensor element by element from its (0-based) multi-index.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0; t.order()];
        for off in 0..t.values.len() {
            t.values[off] = f(&idx);
            t.advance(&mut idx);
        }
        Ok(t)
    }

    /// Order-2 tensor with `T(i, j) = m(i, j)`.
    pub fn from_matrix(m: ArrayView2<f64>) -> Self {
        let (r, c) = m.dim();
        let mut values = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                values.push(m[[i, j]]);
            }
        }
        Self {
            shape: vec![r, c],
            values,
        }
    }

    /// Order-K tensor whose superdiagonal entries are one.
    pub fn superdiagonal(order: usize, size: usize) -> Result<Self> {
        Self::from_fn(vec![size; order], |idx| {
            if idx.iter().all(|&i| i == idx[0]) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order());
        let mut off = 0;
        let mut stride = 1;
        for (&i, &extent) in idx.iter().zip(&self.shape) {
            off += i * stride;
            stride *= extent;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let off = self.offset(idx);
        self.values[off] = v;
    }

    /// Steps a multi-index to the next storage position.
    fn advance(&self, idx: &mut [usize]) {
        for (i, &extent) in idx.iter_mut().zip(&self.shape) {
            *i += 1;
            if *i < extent {
                return;
            }
            *i = 0;
        }
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            return Err(Error::Mode {
                mode: k,
                order: self.order(),
            });
        }
        Ok(())
    }

    /// Column strides of the mode-k unfolding: `J_t = ∏_{n<t, n≠k} I_n`,
    /// zero for `t == k`.
    fn unfold_strides(&self, k: usize) -> Vec<usize> {
        let mut strides = vec![0; self.order()];
        let mut acc = 1;
        for (t, &extent) in self.shape.iter().enumerate() {
            if t != k {
                strides[t] = acc;
                acc *= extent;
            }
        }
        strides
    }

    /// Mode-k unfolding into an `I_k × ∏_{t≠k} I_t` matrix.
    pub fn unfold(&self, k: usize) -> Result<Array2<f64>> {
        self.check_mode(k)?;
        let rows = self.shape[k];
        let cols = self.values.len() / rows;
        let strides = self.unfold_strides(k);
        let mut out = Array2::zeros((rows, cols));
        let mut idx = vec![0; self.order()];
        for &v in &self.values {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            out[[idx[k], col]] = v;
            self.advance(&mut idx);
        }
        Ok(out)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: ArrayView2<f64>, k: usize, shape: &[usize]) -> Result<Self> {
        let mut t = Self::zeros(shape.to_vec())?;
        t.check_mode(k)?;
        let cols = t.values.len() / shape[k];
        if m.dim() != (shape[k], cols) {
            return Err(Error::dim(format!(
                "cannot fold a {:?} matrix along mode {k} into shape {shape:?}",
                m.dim()
            )));
        }
        let strides = t.unfold_strides(k);
        let mut idx = vec![0; t.order()];
        for off in 0..t.values.len() {
            let col: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            t.values[off] = m[[idx[k], col]];
            t.advance(&mut idx);
        }
        Ok(t)
    }

    /// Contracts mode `k` with `u`, giving a tensor of order K−1.
    pub fn mode_vprod(&self, k: usize, u: ArrayView1<f64>) -> Result<Self> {
        self.check_mode(k)?;
        if self.order() < 2 {
            return Err(Error::dim("mode vector product needs a tensor of order at least 2"));
        }
        if u.len() != self.shape[k] {
            return Err(Error::dim(format!(
                "mode-{k} vector product needs length {}, got {}",
                self.shape[k],
                u.len()
            )));
        }
        let unfolded = self.unfold(k)?;
        let out = u.dot(&unfolded);
        let mut shape = self.shape.clone();
        shape.remove(k);
        Self::new(shape, out.to_vec())
    }

    /// Mode-k matrix product `T ×_k U` for `U` of shape `J × I_k`.
    pub fn mode_mprod(&self, k: usize, u: ArrayView2<f64>) -> Result<Self> {
        self.check_mode(k)?;
        if u.ncols() != self.shape[k] {
            return Err(Error::dim(format!(
                "mode-{k} matrix product needs {} columns, got {:?}",
                self.shape[k],
                u.dim()
            )));
        }
        let prod = u.dot(&self.unfold(k)?);
        let mut shape = self.shape.clone();
        shape[k] = u.nrows();
        Self::fold(prod.view(), k, &shape)
    }

    /// The mode-k slice at index `j` (order K−1).
    pub fn slice(&self, k: usize, j: usize) -> Result<Self> {
        self.check_mode(k)?;
        if j >= self.shape[k] {
            return Err(Error::dim(format!(
                "slice index {j} out of range for extent {}",
                self.shape[k]
            )));
        }
        let row = self.unfold(k)?.row(j).to_vec();
        let mut shape = self.shape.clone();
        shape.remove(k);
        Self::new(shape, row)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Rank-R CP factors `U⁽¹⁾ … U⁽ᴷ⁾`, each with R columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CpFactors {
    factors: Vec<Array2<f64>>,
}

impl CpFactors {
    pub fn new(factors: Vec<Array2<f64>>) -> Result<Self> {
        if factors.len() < 2 {
            return Err(Error::dim("CP decomposition needs at least two factors"));
        }
        let rank = factors[0].ncols();
        if rank == 0 {
            return Err(Error::dim("CP rank must be at least 1"));
        }
        if let Some(f) = factors.iter().find(|f| f.ncols() != rank || f.nrows() == 0) {
            return Err(Error::dim(format!(
                "every CP factor needs {rank} columns and positive rows, found {:?}",
                f.dim()
            )));
        }
        Ok(Self { factors })
    }

    pub fn rank(&self) -> usize {
        self.factors[0].ncols()
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    pub fn shape(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.nrows()).collect()
    }

    /// Sum of R rank-one outer products.
    pub fn reconstruct(&self) -> DenseTensor {
        let shape = self.shape();
        let len: usize = shape.iter().product();
        let mut values = vec![0.0; len];
        let mut component = Vec::with_capacity(len);
        for r in 0..self.rank() {
            // Outer product built mode by mode; the earlier modes stay innermost.
            component.clear();
            component.extend(self.factors[0].column(r).iter().copied());
            for f in &self.factors[1..] {
                let prev = std::mem::take(&mut component);
                for &c in f.column(r) {
                    component.extend(prev.iter().map(|p| p * c));
                }
            }
            for (v, c) in values.iter_mut().zip(&component) {
                *v += c;
            }
        }
        DenseTensor { shape, values }
    }

    /// The same factorization as Tucker with a superdiagonal unit core.
    pub fn to_tucker(&self) -> TuckerFactors {
        let core = DenseTensor::superdiagonal(self.factors.len(), self.rank())
            .expect("rank and order are positive");
        TuckerFactors {
            core,
            factors: self.factors.clone(),
        }
    }
}

/// Tucker factors: a core tensor and one factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    core: DenseTensor,
    factors: Vec<Array2<f64>>,
}

impl TuckerFactors {
    pub fn new(core: DenseTensor, factors: Vec<Array2<f64>>) -> Result<Self> {
        if core.order() != factors.len() {
            return Err(Error::dim(format!(
                "core of order {} needs {} factors, got {}",
                core.order(),
                core.order(),
                factors.len()
            )));
        }
        for (k, f) in factors.iter().enumerate() {
            if f.ncols() != core.shape()[k] || f.nrows() == 0 {
                return Err(Error::dim(format!(
                    "factor {k} has shape {:?}, core extent is {}",
                    f.dim(),
                    core.shape()[k]
                )));
            }
        }
        Ok(Self { core, factors })
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[Array2<f64>] {
        &self.factors
    }

    /// `𝓖 ×₁ U⁽¹⁾ ×₂ … ×_K U⁽ᴷ⁾`.
    pub fn reconstruct(&self) -> DenseTensor {
        let mut t = self.core.clone();
        for (k, f) in self.factors.iter().enumerate() {
            t = t.mode_mprod(k, f.view()).expect("shapes validated at construction");
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use ndarray::{arr1, arr2, Array2};

    use super::*;

    #[test]
    fn hadamard_examples() {
        let a = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = arr2(&[[5.0, 6.0], [7.0, 8.0]]);
        assert_eq!(hadamard(a.view(), b.view()).unwrap(), arr2(&[[5.0, 12.0], [21.0, 32.0]]));
        let ones = Array2::ones((2, 2));
        assert_eq!(hadamard(a.view(), ones.view()).unwrap(), a);
        let zeros = Array2::zeros((2, 2));
        assert_eq!(hadamard(a.view(), zeros.view()).unwrap(), zeros);
    }

    #[test]
    fn hadamard_shape_mismatch_names_both_shapes() {
        let a = Array2::<f64>::zeros((2, 3));
        let b = Array2::<f64>::zeros((3, 2));
        let msg = hadamard(a.view(), b.view()).unwrap_err().to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("(3, 2)"), "{msg}");
    }

    #[test]
    fn kronecker_examples() {
        let a = Array2::<f64>::ones((2, 3));
        let b = Array2::<f64>::ones((4, 5));
        assert_eq!(kronecker(a.view(), b.view()).dim(), (8, 15));

        let b = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        let eye = Array2::<f64>::eye(2);
        let k = kronecker(eye.view(), b.view());
        let expected = arr2(&[
            [1.0, 2.0, 0.0, 0.0],
            [3.0, 4.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 2.0],
            [0.0, 0.0, 3.0, 4.0],
        ]);
        assert_eq!(k, expected);

        let u = arr2(&[[1.0], [2.0]]);
        let v = arr2(&[[3.0], [4.0]]);
        assert_eq!(kronecker(u.view(), v.view()), arr2(&[[3.0], [4.0], [6.0], [8.0]]));
        assert_eq!(kron_vec(arr1(&[1.0, 2.0]).view(), arr1(&[3.0, 4.0]).view()), arr1(&[3.0, 4.0, 6.0, 8.0]));
    }

    #[test]
    fn khatri_rao_examples() {
        let u = arr2(&[[1.0], [2.0]]);
        let v = arr2(&[[3.0], [4.0], [5.0]]);
        assert_eq!(khatri_rao(u.view(), v.view()).unwrap(), kronecker(u.view(), v.view()));

        let mut e2 = Array2::zeros((3, 1));
        e2[[1, 0]] = 1.0;
        let mut e1 = Array2::zeros((2, 1));
        e1[[0, 0]] = 1.0;
        let kr = khatri_rao(e2.view(), e1.view()).unwrap();
        let expected: Vec<f64> = (0..6).map(|i| if i == 2 { 1.0 } else { 0.0 }).collect();
        assert_eq!(kr.column(0).to_vec(), expected);

        let a = Array2::<f64>::ones((2, 2));
        assert_eq!(khatri_rao(a.view(), a.view()).unwrap().dim(), (4, 2));
        assert!(khatri_rao(a.view(), Array2::<f64>::ones((2, 3)).view()).is_err());
    }

    #[test]
    fn mode0_unfold_of_cube() {
        let t = DenseTensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap();
        let m = t.unfold(0).unwrap();
        assert_eq!(m, arr2(&[[1.0, 3.0, 5.0, 7.0], [2.0, 4.0, 6.0, 8.0]]));
        // zero-copy reinterpretation: column-major reading of the mode-0 unfolding is the storage
        let col_major: Vec<f64> = m.t().iter().copied().collect();
        assert_eq!(col_major, t.values());
    }

    #[test]
    fn matrix_unfold_is_identity() {
        let m = arr2(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let t = DenseTensor::from_matrix(m.view());
        assert_eq!(t.unfold(0).unwrap(), m);
        assert_eq!(t.unfold(1).unwrap(), m.t());
    }

    #[test]
    fn unfold_rejects_bad_mode() {
        let t = DenseTensor::zeros(vec![2, 2]).unwrap();
        assert!(matches!(t.unfold(2), Err(Error::Mode { mode: 2, order: 2 })));
    }

    #[test]
    fn vprod_examples() {
        let t = DenseTensor::from_matrix(arr2(&[[1.0, 2.0], [3.0, 4.0]]).view());
        let out = t.mode_vprod(1, arr1(&[1.0, 1.0]).view()).unwrap();
        assert_eq!(out.shape(), &[2]);
        assert_eq!(out.values(), &[3.0, 7.0]);

        let cube = DenseTensor::from_fn(vec![2, 3, 4], |i| (i[0] + 10 * i[1] + 100 * i[2]) as f64).unwrap();
        let e = arr1(&[0.0, 1.0, 0.0]);
        let out = cube.mode_vprod(1, e.view()).unwrap();
        assert_eq!(out.order(), 2);
        assert_eq!(out, cube.slice(1, 1).unwrap());
        assert!(cube.mode_vprod(1, arr1(&[1.0]).view()).is_err());
    }

    #[test]
    fn cp_examples() {
        let cp = CpFactors::new(vec![arr2(&[[1.0], [2.0]]), arr2(&[[3.0], [4.0]])]).unwrap();
        let t = cp.reconstruct();
        assert_eq!(t.unfold(0).unwrap(), arr2(&[[3.0, 4.0], [6.0, 8.0]]));

        let zero = CpFactors::new(vec![Array2::zeros((2, 2)), Array2::zeros((3, 2)), Array2::zeros((2, 2))]).unwrap();
        assert!(zero.reconstruct().values().iter().all(|&v| v == 0.0));
        assert!(CpFactors::new(vec![Array2::zeros((2, 2)), Array2::zeros((2, 3))]).is_err());
    }

    #[test]
    fn tucker_identity_factors_return_core() {
        let core = DenseTensor::from_fn(vec![2, 3, 2], |i| (i[0] * 6 + i[1] * 2 + i[2]) as f64).unwrap();
        let tk = TuckerFactors::new(core.clone(), vec![Array2::eye(2), Array2::eye(3), Array2::eye(2)]).unwrap();
        assert_eq!(tk.reconstruct(), core);
        assert!(TuckerFactors::new(core, vec![Array2::eye(2), Array2::eye(2), Array2::eye(2)]).is_err());
    }
}
