//! Kronecker powers, the k-way Lyapunov operator and monomial bases.
//!
//! Kronecker vectors use the usual ordering where the first factor is the most
//! significant digit: `(a ⊗ b)[i * len(b) + j] = a[i] * b[j]`. Matrices that
//! are reshaped from such vectors use column-major `vec`.

use std::collections::HashMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest operator size `n^k` for which the k-way Lyapunov matrix is assembled densely.
pub const DEFAULT_DENSE_CAP: usize = 4096;

pub(crate) fn checked_pow(n: usize, k: usize) -> usize {
    n.checked_pow(k as u32).expect("n^k overflows usize")
}

/// `a ⊗ b` for column vectors.
pub fn kron_vec(a: &[f64], b: &[f64]) -> DVector<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        out.extend(b.iter().map(|&bj| ai * bj));
    }
    DVector::from_vec(out)
}

/// `x ⊗ x ⊗ ... ⊗ x` with `k` factors.
///
/// Panics when `k == 0`.
pub fn kron_power(x: &DVector<f64>, k: usize) -> DVector<f64> {
    assert!(k >= 1, "kron_power needs k >= 1");
    let mut out = x.clone();
    for _ in 1..k {
        out = kron_vec(out.as_slice(), x.as_slice());
    }
    out
}

/// All Kronecker powers `x⊗1 ..= x⊗k_max`; entry `i` holds `x⊗(i+1)`.
pub fn kron_powers(x: &DVector<f64>, k_max: usize) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(k_max);
    if k_max == 0 {
        return out;
    }
    out.push(x.clone());
    for k in 1..k_max {
        let next = kron_vec(out[k - 1].as_slice(), x.as_slice());
        out.push(next);
    }
    out
}

/// Applies `𝓛ₖ(M) = Σₚ I ⊗ … ⊗ M ⊗ … ⊗ I` to `v` without forming the matrix.
///
/// `M` is `q × n`, `v` has length `nᵏ` and the result has length `n^(k-1) q`.
pub fn kway_lyapunov_apply(m: &DMatrix<f64>, k: usize, v: &[f64]) -> Result<DVector<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "k-way Lyapunov operator needs k >= 1".into(),
        ));
    }
    let (q, n) = m.shape();
    let len = checked_pow(n, k);
    if v.len() != len {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} applied to 𝓛_{k} of a {q}x{n} matrix (expects {len})",
            v.len()
        )));
    }
    let mut out = vec![0.0; checked_pow(n, k - 1) * q];
    for p in 0..k {
        let outer = checked_pow(n, p);
        let inner = checked_pow(n, k - 1 - p);
        for a in 0..outer {
            for i in 0..n {
                let src = &v[(a * n + i) * inner..(a * n + i + 1) * inner];
                for j in 0..q {
                    let mji = m[(j, i)];
                    if mji == 0.0 {
                        continue;
                    }
                    let dst = &mut out[(a * q + j) * inner..(a * q + j + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += mji * s;
                    }
                }
            }
        }
    }
    Ok(DVector::from_vec(out))
}

/// Dense `𝓛ₖ(M)`; refuses when `nᵏ` exceeds `cap`.
pub fn kway_lyapunov_matrix(m: &DMatrix<f64>, k: usize, cap: usize) -> Result<DMatrix<f64>> {
    if k == 0 {
        return Err(Error::InvalidInput(
            "k-way Lyapunov operator needs k >= 1".into(),
        ));
    }
    let (q, n) = m.shape();
    let cols = checked_pow(n, k);
    let rows = checked_pow(n, k - 1) * q;
    if cols.max(rows) > cap {
        return Err(Error::InvalidInput(format!(
            "assembled 𝓛_{k} would be {rows}x{cols}, above the dense cap {cap}"
        )));
    }
    let mut out = DMatrix::zeros(rows, cols);
    for p in 0..k {
        let outer = checked_pow(n, p);
        let inner = checked_pow(n, k - 1 - p);
        for a in 0..outer {
            for j in 0..q {
                for i in 0..n {
                    let mji = m[(j, i)];
                    if mji == 0.0 {
                        continue;
                    }
                    for b in 0..inner {
                        out[((a * q + j) * inner + b, (a * n + i) * inner + b)] += mji;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Number of monomials of degree exactly `i` in `n` variables, using
/// `deg_i(n) = Σ_{j=1..n} deg_{i-1}(j)` with `deg_1(n) = n`.
pub fn monomials_of_degree(n: usize, i: usize) -> usize {
    assert!(n >= 1 && i >= 1);
    // row[j] = deg_level(j + 1)
    let mut row: Vec<usize> = (1..=n).collect();
    for _ in 1..i {
        let mut acc = 0;
        for entry in row.iter_mut() {
            acc += *entry;
            *entry = acc;
        }
    }
    row[n - 1]
}

/// `ν = Σ_{i=1..d} deg_i(n)`, the length of the monomial vector `z(x)`.
pub fn monomial_count(n: usize, d: usize) -> usize {
    (1..=d).map(|i| monomials_of_degree(n, i)).sum()
}

/// Monomials `x^α` with `1 ≤ |α| ≤ r` in graded lexicographic order.
///
/// Degree blocks are ascending; inside a block exponents are sorted in
/// descending lexicographic order, so for `n = 2, r = 2` the basis is
/// `x1, x2, x1², x1x2, x2²`.
#[derive(Clone, Debug)]
pub struct MonomialBasis {
    n: usize,
    r: usize,
    exponents: Vec<Vec<u32>>,
    block_sizes: Vec<usize>,
    index: HashMap<Vec<u32>, usize>,
}

impl PartialEq for MonomialBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.r == other.r
    }
}

fn push_exponents(
    n: usize,
    var: usize,
    remaining: u32,
    current: &mut Vec<u32>,
    out: &mut Vec<Vec<u32>>,
) {
    if var == n - 1 {
        current[var] = remaining;
        out.push(current.clone());
        current[var] = 0;
        return;
    }
    for e in (0..=remaining).rev() {
        current[var] = e;
        push_exponents(n, var + 1, remaining - e, current, out);
    }
    current[var] = 0;
}

impl MonomialBasis {
    pub fn new(n: usize, r: usize) -> Self {
        assert!(n >= 1 && r >= 1, "basis needs n >= 1 and r >= 1");
        let mut exponents = Vec::with_capacity(monomial_count(n, r));
        let mut block_sizes = Vec::with_capacity(r);
        let mut scratch = vec![0u32; n];
        for d in 1..=r {
            let before = exponents.len();
            push_exponents(n, 0, d as u32, &mut scratch, &mut exponents);
            block_sizes.push(exponents.len() - before);
        }
        let index = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        Self {
            n,
            r,
            exponents,
            block_sizes,
            index,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_degree(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    /// Index range of the degree-`d` block.
    pub fn block_range(&self, d: usize) -> Range<usize> {
        assert!(d >= 1 && d <= self.r);
        let start: usize = self.block_sizes[..d - 1].iter().sum();
        start..start + self.block_sizes[d - 1]
    }

    pub fn degree_of(&self, i: usize) -> usize {
        self.exponents[i].iter().map(|&e| e as usize).sum()
    }

    pub fn index_of(&self, exponent: &[u32]) -> Option<usize> {
        self.index.get(exponent).copied()
    }

    fn powers(&self, x: &[f64]) -> Vec<Vec<f64>> {
        x.iter()
            .map(|&xi| {
                let mut p = Vec::with_capacity(self.r + 1);
                let mut acc = 1.0;
                for _ in 0..=self.r {
                    p.push(acc);
                    acc *= xi;
                }
                p
            })
            .collect()
    }

    /// `z(x)`.
    pub fn values(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.n);
        let pw = self.powers(x.as_slice());
        DVector::from_iterator(
            self.len(),
            self.exponents.iter().map(|a| {
                a.iter()
                    .enumerate()
                    .map(|(j, &e)| pw[j][e as usize])
                    .product::<f64>()
            }),
        )
    }

    /// `z(x)` and its `ν × n` Jacobian.
    pub fn eval(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        assert_eq!(x.len(), self.n);
        let pw = self.powers(x.as_slice());
        let nu = self.len();
        let mut z = DVector::zeros(nu);
        let mut jz = DMatrix::zeros(nu, self.n);
        for (i, a) in self.exponents.iter().enumerate() {
            z[i] = a
                .iter()
                .enumerate()
                .map(|(j, &e)| pw[j][e as usize])
                .product();
            for j in 0..self.n {
                if a[j] == 0 {
                    continue;
                }
                let mut d = a[j] as f64 * pw[j][a[j] as usize - 1];
                for (l, &e) in a.iter().enumerate() {
                    if l != j {
                        d *= pw[l][e as usize];
                    }
                }
                jz[(i, j)] = d;
            }
        }
        (z, jz)
    }
}

/// Exponent vector of the monomial addressed by a flat Kronecker index.
pub(crate) fn exponent_of(mut flat: usize, n: usize, k: usize) -> Vec<u32> {
    let mut e = vec![0u32; n];
    for _ in 0..k {
        e[flat % n] += 1;
        flat /= n;
    }
    e
}

/// Number of Kronecker indices that map to the same monomial: `k! / Π αᵢ!`.
pub(crate) fn multinomial(exponent: &[u32]) -> f64 {
    let k: u32 = exponent.iter().sum();
    let mut out = 1.0;
    let mut m = 0u32;
    for &e in exponent {
        for j in 1..=e {
            m += 1;
            out *= m as f64 / j as f64;
        }
    }
    debug_assert_eq!(m, k);
    out.round()
}

/// Coefficient vector of `x⊗ᵏ`.
#[derive(Clone, Debug, PartialEq)]
pub struct KronCoeff {
    n: usize,
    k: usize,
    c: DVector<f64>,
}

impl KronCoeff {
    pub fn new(n: usize, k: usize, c: DVector<f64>) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::InvalidInput(
                "Kronecker coefficient needs n, k >= 1".into(),
            ));
        }
        if c.len() != checked_pow(n, k) {
            return Err(Error::DimensionMismatch(format!(
                "coefficient of length {} for n = {n}, k = {k}",
                c.len()
            )));
        }
        Ok(Self { n, k, c })
    }

    pub fn zeros(n: usize, k: usize) -> Self {
        Self {
            n,
            k,
            c: DVector::zeros(checked_pow(n, k)),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self) -> usize {
        self.k
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.c
    }

    /// `cᵀ x⊗ᵏ`.
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        self.c.dot(&kron_power(x, self.k))
    }

    /// Replaces every entry by the mean over its monomial class.
    pub fn symmetrize(&self) -> KronCoeff {
        let mut sums: HashMap<Vec<u32>, f64> = HashMap::new();
        let keys: Vec<Vec<u32>> = (0..self.c.len())
            .map(|i| exponent_of(i, self.n, self.k))
            .collect();
        for (key, &v) in keys.iter().zip(self.c.iter()) {
            *sums.entry(key.clone()).or_insert(0.0) += v;
        }
        let c = DVector::from_iterator(
            self.c.len(),
            keys.iter().map(|key| sums[key] / multinomial(key)),
        );
        KronCoeff {
            n: self.n,
            k: self.k,
            c,
        }
    }

    /// Unique-monomial coefficients in a full-length basis vector; only the
    /// degree-`k` block is populated.
    pub fn to_monomial(&self, basis: &MonomialBasis) -> Result<DVector<f64>> {
        self.check_basis(basis)?;
        let mut out = DVector::zeros(basis.len());
        for (i, &v) in self.c.iter().enumerate() {
            let e = exponent_of(i, self.n, self.k);
            out[basis.index_of(&e).expect("exponent in basis")] += v;
        }
        Ok(out)
    }

    /// Symmetric Kronecker coefficient for the degree-`k` block of `coeffs`.
    pub fn from_monomial(
        coeffs: &DVector<f64>,
        basis: &MonomialBasis,
        k: usize,
    ) -> Result<KronCoeff> {
        if coeffs.len() != basis.len() {
            return Err(Error::DimensionMismatch(format!(
                "monomial vector of length {} for a basis of length {}",
                coeffs.len(),
                basis.len()
            )));
        }
        if k == 0 || k > basis.max_degree() {
            return Err(Error::DegreeOutOfRange {
                degree: k,
                min: 1,
                max: basis.max_degree(),
            });
        }
        let n = basis.n();
        let c = DVector::from_iterator(
            checked_pow(n, k),
            (0..checked_pow(n, k)).map(|i| {
                let e = exponent_of(i, n, k);
                coeffs[basis.index_of(&e).expect("exponent in basis")] / multinomial(&e)
            }),
        );
        Ok(KronCoeff { n, k, c })
    }

    fn check_basis(&self, basis: &MonomialBasis) -> Result<()> {
        if basis.n() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "basis dimension {} vs coefficient dimension {}",
                basis.n(),
                self.n
            )));
        }
        if self.k > basis.max_degree() {
            return Err(Error::DegreeOutOfRange {
                degree: self.k,
                min: 1,
                max: basis.max_degree(),
            });
        }
        Ok(())
    }
}

/// Rows of `c` reshaped row-major to `n × n^(k-1)` contracted with `y` (length `n^(k-1)`).
///
/// For a symmetric coefficient this is `∇(cᵀ x⊗ᵏ) / k` when `y = x⊗(k-1)`.
pub(crate) fn contract_leading(c: &[f64], n: usize, y: &[f64]) -> DVector<f64> {
    let inner = y.len();
    debug_assert_eq!(c.len(), n * inner);
    DVector::from_iterator(
        n,
        (0..n).map(|j| {
            c[j * inner..(j + 1) * inner]
                .iter()
                .zip(y)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        }),
    )
}

/// `∂(x⊗ᵏ)/∂x` as an `nᵏ × n` matrix.
pub fn kron_power_jacobian(x: &DVector<f64>, k: usize) -> DMatrix<f64> {
    assert!(k >= 1);
    let n = x.len();
    let mut d = DMatrix::<f64>::identity(n, n);
    let mut p = x.clone();
    for _ in 1..k {
        // d(p ⊗ x) = dp ⊗ x + p ⊗ dx
        let rows = p.len() * n;
        let mut next = DMatrix::zeros(rows, n);
        for a in 0..p.len() {
            for b in 0..n {
                let r = a * n + b;
                for j in 0..n {
                    next[(r, j)] = d[(a, j)] * x[b];
                }
                next[(r, b)] += p[a];
            }
        }
        d = next;
        p = kron_vec(p.as_slice(), x.as_slice());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force_count(n: usize, d: usize) -> usize {
        // count exponent vectors with 1 <= |α| <= d by odometer
        let mut count = 0;
        let mut e = vec![0usize; n];
        loop {
            let s: usize = e.iter().sum();
            if s >= 1 && s <= d {
                count += 1;
            }
            let mut i = 0;
            loop {
                if i == n {
                    return count;
                }
                e[i] += 1;
                if e[i] <= d {
                    break;
                }
                e[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn kron_power_examples() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        assert_eq!(kron_power(&x, 2).as_slice(), &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(
            kron_power(&DVector::from_vec(vec![3.0]), 3).as_slice(),
            &[27.0]
        );
        let e1 = kron_power(&DVector::from_vec(vec![1.0, 0.0]), 3);
        let mut expected = vec![0.0; 8];
        expected[0] = 1.0;
        assert_eq!(e1.as_slice(), expected.as_slice());
    }

    #[test]
    #[should_panic]
    fn kron_power_rejects_zero() {
        kron_power(&DVector::from_vec(vec![1.0]), 0);
    }

    #[test]
    fn kron_power_inf_norm() {
        let x = DVector::from_vec(vec![0.5, 1.5, 0.25]);
        let p = kron_power(&x, 4);
        assert!((p.amax() - 1.5f64.powi(4)).abs() < 1e-14);
    }

    #[test]
    fn kway_examples() {
        let m = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(
            kway_lyapunov_apply(&m, 2, &[1.0]).unwrap().as_slice(),
            &[4.0]
        );

        let v: Vec<f64> = (0..27).map(|i| i as f64 * 0.5 - 3.0).collect();
        let out = kway_lyapunov_apply(&DMatrix::identity(3, 3), 3, &v).unwrap();
        for (o, vi) in out.iter().zip(&v) {
            assert_eq!(*o, 3.0 * vi);
        }

        // diag(a, b): (M ⊗ I + I ⊗ M) e1 = 2a e1
        let m = DMatrix::from_row_slice(2, 2, &[0.7, 0.0, 0.0, -1.3]);
        let out = kway_lyapunov_apply(&m, 2, &[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out.as_slice(), &[1.4, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn kway_dimension_mismatch() {
        let m = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            kway_lyapunov_apply(&m, 2, &[1.0; 3]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn kway_rectangular_matches_explicit_kron() {
        // q x n with q != n: 𝓛₂(M) = M ⊗ I + I ⊗ M (shapes q n x n²)
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        let explicit = m.kronecker(&id) + id.kronecker(&m);
        let assembled = kway_lyapunov_matrix(&m, 2, 64).unwrap();
        assert_eq!(explicit, assembled);
    }

    #[test]
    fn monomial_count_examples() {
        assert_eq!(monomial_count(1, 2), 2);
        assert_eq!(monomial_count(2, 2), 5);
        assert_eq!(monomial_count(12, 2), 90);
        assert_eq!(monomial_count(6, 2), 27);
    }

    #[test]
    fn monomial_count_matches_enumeration() {
        for n in 1..=8 {
            for d in 1..=5 {
                assert_eq!(monomial_count(n, d), brute_force_count(n, d), "n={n} d={d}");
            }
        }
    }

    #[test]
    fn basis_layout() {
        let b = MonomialBasis::new(2, 2);
        assert_eq!(b.block_sizes(), &[2, 3]);
        assert_eq!(
            b.exponents(),
            &[vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
        let s = MonomialBasis::new(1, 4);
        assert_eq!(s.exponents(), &[vec![1], vec![2], vec![3], vec![4]]);
        assert_eq!(MonomialBasis::new(6, 2).len(), 27);
        assert_eq!(MonomialBasis::new(3, 3).block_range(2), 3..9);
    }

    #[test]
    fn basis_eval_examples() {
        let b = MonomialBasis::new(1, 2);
        let (z, jz) = b.eval(&DVector::from_vec(vec![2.0]));
        assert_eq!(z.as_slice(), &[2.0, 4.0]);
        assert_eq!(jz.as_slice(), &[1.0, 4.0]);

        let b = MonomialBasis::new(2, 2);
        let z = b.values(&DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(z.as_slice(), &[1.0; 5]);

        let b = MonomialBasis::new(3, 3);
        assert!(b.values(&DVector::zeros(3)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn symmetrize_examples() {
        let c = KronCoeff::new(2, 2, DVector::from_vec(vec![0.0, 2.0, 0.0, 0.0])).unwrap();
        assert_eq!(c.symmetrize().as_vector().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        let s = c.symmetrize();
        assert_eq!(s.symmetrize(), s);
    }

    #[test]
    fn kron_to_monomial_examples() {
        let basis = MonomialBasis::new(2, 2);
        let c = KronCoeff::new(2, 2, DVector::from_element(4, 1.0)).unwrap();
        let m = c.to_monomial(&basis).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0, 1.0, 2.0, 1.0]);

        let basis1 = MonomialBasis::new(1, 5);
        let c = KronCoeff::new(1, 4, DVector::from_element(1, -0.75)).unwrap();
        let m = c.to_monomial(&basis1).unwrap();
        assert_eq!(m[3], -0.75);
        assert_eq!(KronCoeff::from_monomial(&m, &basis1, 4).unwrap(), c);

        let c = KronCoeff::zeros(2, 3);
        assert!(matches!(
            c.to_monomial(&basis),
            Err(Error::DegreeOutOfRange { .. })
        ));
    }

    #[test]
    fn jacobian_of_kron_power_matches_differences() {
        let x = DVector::from_vec(vec![0.3, -1.1, 0.8]);
        let d = kron_power_jacobian(&x, 3);
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x.clone();
            xp[j] += h;
            let mut xm = x.clone();
            xm[j] -= h;
            let fd = (kron_power(&xp, 3) - kron_power(&xm, 3)) / (2.0 * h);
            for i in 0..27 {
                assert!((fd[i] - d[(i, j)]).abs() < 1e-8);
            }
        }
    }
}
