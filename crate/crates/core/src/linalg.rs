//! Riccati, Lyapunov and k-way Lyapunov solvers plus a semidefinite Cholesky.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{checked_pow, kway_lyapunov_apply, kway_lyapunov_matrix, DEFAULT_DENSE_CAP};

/// Which energy function a quantity belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    Past,
    Future,
}

impl std::fmt::Display for EnergyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnergyKind::Past => f.write_str("past"),
            EnergyKind::Future => f.write_str("future"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct AreSolution {
    pub x: DMatrix<f64>,
    /// Frobenius norm of the defining Riccati equation evaluated at `x`.
    pub residual_norm: f64,
    pub kind: EnergyKind,
}

fn symmetrized(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// `AᵀX + XA + Q − XGX`.
fn care_residual(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> DMatrix<f64> {
    a.transpose() * x + x * a + q - x * g * x
}

/// Solves `AᵀX + XA + Q = 0`.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(
            "Lyapunov equation needs square A and Q of equal size".into(),
        ));
    }
    // vec(AᵀX + XA) = 𝓛₂(Aᵀ) vec(X) for column-major vec
    let rhs = DVector::from_iterator(n * n, q.iter().map(|v| -v));
    let x = solve_kway_system(a, 2, &rhs, &KwayOptions::default())?;
    Ok(symmetrized(&DMatrix::from_column_slice(n, n, x.as_slice())))
}

/// Matrix sign function by scaled Newton iteration.
fn matrix_sign(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let dim = h.nrows();
    let mut z = h.clone();
    for _ in 0..100 {
        let lu = z.clone().lu();
        let det = lu.determinant();
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let inv = lu.try_inverse()?;
        let c = det.abs().powf(-1.0 / dim as f64);
        let next = (&z * c + inv / c) * 0.5;
        let change = (&next - &z).norm();
        let scale = next.norm();
        z = next;
        if change <= 1e-13 * scale {
            break;
        }
    }
    let err = (&z * &z - DMatrix::identity(dim, dim)).norm();
    if err > 1e-6 * dim as f64 {
        return None;
    }
    Some(z)
}

fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Stabilizing solution of `AᵀX + XA + Q − XGX = 0`, i.e. `A − GX` Hurwitz.
///
/// The stable invariant subspace of the Hamiltonian is taken from its matrix
/// sign function; the result is then polished by Newton–Kleinman steps, each
/// of which is a Lyapunov solve.
pub fn solve_care(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || g.shape() != (n, n) || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch(
            "Riccati data must be square and of equal size".into(),
        ));
    }
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let s = matrix_sign(&h).ok_or_else(|| {
        Error::NoStabilizingSolution(
            "Hamiltonian sign iteration failed (imaginary-axis eigenvalues)".into(),
        )
    })?;
    // (S + I) [I; X] = 0
    let id = DMatrix::<f64>::identity(n, n);
    let mut lhs = DMatrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n))
        .copy_from(&s.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(s.view((n, n), (n, n)) + &id));
    let mut rhs = DMatrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(s.view((0, 0), (n, n)) + &id)));
    rhs.view_mut((n, 0), (n, n))
        .copy_from(&(-s.view((n, 0), (n, n))));

    let svd = lhs.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin <= 1e-10 * smax {
        return Err(Error::NoStabilizingSolution(
            "stable invariant subspace is not a graph over the first block".into(),
        ));
    }
    let x = svd
        .solve(&rhs, 1e-14 * smax)
        .map_err(|e| Error::NoStabilizingSolution(e.to_string()))?;
    let mut x = symmetrized(&x);

    let scale = |x: &DMatrix<f64>| 1.0f64.max(x.norm());
    let mut res = care_residual(a, g, q, &x).norm();
    for _ in 0..20 {
        if res <= 1e-13 * scale(&x) {
            break;
        }
        let ak = a - g * &x;
        let qk = q + &x * g * &x;
        let next = match solve_lyapunov(&ak, &qk) {
            Ok(next) => next,
            Err(_) => break,
        };
        let next_res = care_residual(a, g, q, &next).norm();
        if !(next_res < res) {
            break;
        }
        x = next;
        res = next_res;
    }
    if res > 1e-10 * scale(&x) {
        return Err(Error::NoStabilizingSolution(format!(
            "Riccati residual stalled at {res:e}"
        )));
    }
    let closed = a - g * &x;
    if max_real_eigenvalue(&closed) >= 0.0 {
        return Err(Error::NoStabilizingSolution(
            "closed-loop matrix is not Hurwitz".into(),
        ));
    }
    Ok(x)
}

fn check_system(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || c.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "A {:?}, B {:?}, C {:?}",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    Ok(())
}

fn require_positive_definite(x: &DMatrix<f64>) -> Result<()> {
    if x.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite(
            "Riccati solution has a nonpositive pivot".into(),
        ));
    }
    Ok(())
}

/// `0 = AᵀV + VA − ηCᵀC + VBBᵀV`, the solution for which `A + BBᵀV` is anti-stable.
pub fn solve_are_past(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eta: f64,
) -> Result<AreSolution> {
    let sol = solve_are_stabilizing(EnergyKind::Past, a, b, c, eta)?;
    require_positive_definite(&sol.x)?;
    Ok(sol)
}

/// `0 = AᵀW + WA + CᵀC − ηWBBᵀW`, the solution for which `A − ηBBᵀW` is Hurwitz.
pub fn solve_are_future(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eta: f64,
) -> Result<AreSolution> {
    let sol = solve_are_stabilizing(EnergyKind::Future, a, b, c, eta)?;
    require_positive_definite(&sol.x)?;
    Ok(sol)
}

/// Stabilizing Riccati solution of either kind, required only to be
/// positive semidefinite. Stable modes that the output cannot see give a
/// singular `W₂`; the energies built on top stay well defined.
pub fn solve_are_stabilizing(
    kind: EnergyKind,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    eta: f64,
) -> Result<AreSolution> {
    check_system(a, b, c)?;
    let bbt = b * b.transpose();
    let ctc = c.transpose() * c;
    let (x, residual_norm) = match kind {
        EnergyKind::Past => {
            // negate: (−A)ᵀV + V(−A) + ηCᵀC − VBBᵀV = 0 with −A − BBᵀV Hurwitz
            let x = solve_care(&(-a), &bbt, &(&ctc * eta))?;
            let res = (a.transpose() * &x + &x * a - &ctc * eta + &x * &bbt * &x).norm();
            (x, res)
        }
        EnergyKind::Future => {
            let g = &bbt * eta;
            let x = solve_care(a, &g, &ctc)?;
            let res = care_residual(a, &g, &ctc, &x).norm();
            (x, res)
        }
    };
    cholesky_psd(&x)?;
    Ok(AreSolution {
        x,
        residual_norm,
        kind,
    })
}

#[derive(Clone, Debug)]
pub struct KwayOptions {
    /// Largest `nᵏ` solved by dense LU.
    pub dense_cap: usize,
    /// Relative residual target `‖𝓛ₖ(Mᵀ)v − rhs‖ / ‖rhs‖`.
    pub tol: f64,
    /// Total GMRES iterations; `None` means `10 · nᵏ`.
    pub max_iters: Option<usize>,
    pub restart: usize,
}

impl Default for KwayOptions {
    fn default() -> Self {
        Self {
            dense_cap: DEFAULT_DENSE_CAP,
            tol: 1e-10,
            max_iters: None,
            restart: 60,
        }
    }
}

/// Solves `𝓛ₖ(Mᵀ) v = rhs` for square `M`.
pub fn solve_kway_system(
    m: &DMatrix<f64>,
    k: usize,
    rhs: &DVector<f64>,
    opts: &KwayOptions,
) -> Result<DVector<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch(
            "k-way system needs a square matrix".into(),
        ));
    }
    let len = checked_pow(n, k);
    if rhs.len() != len {
        return Err(Error::DimensionMismatch(format!(
            "rhs of length {} for nᵏ = {len}",
            rhs.len()
        )));
    }
    let rhs_norm = rhs.norm();
    if rhs_norm == 0.0 {
        return Ok(DVector::zeros(len));
    }
    let mt = m.transpose();
    if len <= opts.dense_cap {
        let op = kway_lyapunov_matrix(&mt, k, opts.dense_cap)?;
        let lu = op.clone().lu();
        let mut v = lu
            .solve(rhs)
            .ok_or_else(|| Error::SingularOperator(format!("dense LU of 𝓛_{k} failed")))?;
        // one step of iterative refinement
        let r = rhs - &op * &v;
        if let Some(dv) = lu.solve(&r) {
            v += dv;
        }
        let res = (rhs - &op * &v).norm() / rhs_norm;
        if !res.is_finite() || res > 1e-9 {
            return Err(Error::SingularOperator(format!(
                "relative residual {res:e} after dense solve"
            )));
        }
        return Ok(v);
    }
    gmres_kway(&mt, k, rhs, opts)
}

/// Restarted GMRES with right diagonal preconditioning for `𝓛ₖ(Mt) v = rhs`.
fn gmres_kway(
    mt: &DMatrix<f64>,
    k: usize,
    rhs: &DVector<f64>,
    opts: &KwayOptions,
) -> Result<DVector<f64>> {
    let n = mt.nrows();
    let len = rhs.len();
    let max_iters = opts.max_iters.unwrap_or(10 * len);
    let restart = opts.restart.max(1).min(len);
    let apply = |v: &DVector<f64>| kway_lyapunov_apply(mt, k, v.as_slice()).expect("shape checked");

    // diagonal of 𝓛ₖ(Mt): Σₚ Mt[iₚ, iₚ]
    let diag = DVector::from_iterator(
        len,
        (0..len).map(|mut flat| {
            let mut s = 0.0;
            for _ in 0..k {
                s += mt[(flat % n, flat % n)];
                flat /= n;
            }
            s
        }),
    );
    if diag.iter().any(|&d| d == 0.0) {
        return Err(Error::SingularOperator(
            "zero on the operator diagonal".into(),
        ));
    }
    let precond = |v: &DVector<f64>| v.component_div(&diag);

    let rhs_norm = rhs.norm();
    let mut x = DVector::<f64>::zeros(len);
    let mut r = rhs.clone();
    let mut beta = r.norm();
    let mut total = 0;
    while total < max_iters {
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(restart + 1);
        basis.push(&r / beta);
        let mut hess = DMatrix::<f64>::zeros(restart + 1, restart);
        let mut cs = vec![0.0; restart];
        let mut sn = vec![0.0; restart];
        let mut g = DVector::<f64>::zeros(restart + 1);
        g[0] = beta;
        let mut used = 0;
        for j in 0..restart {
            if total >= max_iters {
                break;
            }
            total += 1;
            let mut w = apply(&precond(&basis[j]));
            for (i, b) in basis.iter().enumerate() {
                let h = w.dot(b);
                hess[(i, j)] = h;
                w.axpy(-h, b, 1.0);
            }
            // reorthogonalize once
            for (i, b) in basis.iter().enumerate() {
                let h = w.dot(b);
                hess[(i, j)] += h;
                w.axpy(-h, b, 1.0);
            }
            let wn = w.norm();
            hess[(j + 1, j)] = wn;
            for i in 0..j {
                let t = cs[i] * hess[(i, j)] + sn[i] * hess[(i + 1, j)];
                hess[(i + 1, j)] = -sn[i] * hess[(i, j)] + cs[i] * hess[(i + 1, j)];
                hess[(i, j)] = t;
            }
            let denom = hess[(j, j)].hypot(hess[(j + 1, j)]);
            cs[j] = hess[(j, j)] / denom;
            sn[j] = hess[(j + 1, j)] / denom;
            hess[(j, j)] = denom;
            hess[(j + 1, j)] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            used = j + 1;
            if wn > 0.0 {
                basis.push(w / wn);
            }
            if g[j + 1].abs() <= 0.5 * opts.tol * rhs_norm || wn == 0.0 {
                break;
            }
        }
        // back substitution
        let mut y = DVector::<f64>::zeros(used);
        for i in (0..used).rev() {
            let mut s = g[i];
            for l in i + 1..used {
                s -= hess[(i, l)] * y[l];
            }
            y[i] = s / hess[(i, i)];
        }
        let mut update = DVector::<f64>::zeros(len);
        for (i, yi) in y.iter().enumerate() {
            update.axpy(*yi, &basis[i], 1.0);
        }
        x += precond(&update);
        r = rhs - apply(&x);
        beta = r.norm();
        if !beta.is_finite() {
            return Err(Error::SingularOperator(
                "GMRES produced a non-finite residual".into(),
            ));
        }
        if beta <= opts.tol * rhs_norm {
            return Ok(x);
        }
    }
    Err(Error::IterationLimitExceeded {
        iterations: total,
        residual: beta / rhs_norm,
    })
}

/// Cholesky factor of a positive semidefinite matrix, `Q = LLᵀ`.
///
/// Pivots within a small tolerance of zero give a zero column, so singular
/// PSD matrices still factor. `L` has a nonnegative diagonal.
pub fn cholesky_psd(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = q.nrows();
    if q.ncols() != n {
        return Err(Error::DimensionMismatch(
            "Cholesky needs a square matrix".into(),
        ));
    }
    let scale = q
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale * n as f64;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut pivot = q[(j, j)];
        for p in 0..j {
            pivot -= l[(j, p)] * l[(j, p)];
        }
        if pivot < -tol {
            return Err(Error::NotPositiveSemidefinite { index: j, pivot });
        }
        if pivot <= tol {
            // column must vanish for a PSD matrix
            for i in j + 1..n {
                let mut s = q[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                if s.abs() > tol.sqrt() * scale.sqrt() {
                    return Err(Error::NotPositiveSemidefinite { index: j, pivot });
                }
            }
            continue;
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = q[(i, j)];
            for p in 0..j {
                s -= l[(i, p)] * l[(j, p)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}
