//! Dense linear-algebra helpers shared by the design and analysis modules.

use nalgebra::{Complex, DMatrix, DVector, SymmetricEigen, SVD};

/// Numerical-rank threshold `max(rows, cols) · ε · σ_max`.
pub fn rank_tolerance(sigma_max: f64, rows: usize, cols: usize) -> f64 {
    rows.max(cols) as f64 * f64::EPSILON * sigma_max
}

/// Singular values in descending order together with a full `n × n` matrix of
/// right singular vectors, columns in the same order.
///
/// Wide inputs are zero-padded so that the trailing (kernel) vectors are
/// always available.
pub fn right_singular_system(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let padded;
    let work = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        padded = p;
        &padded
    } else {
        m
    };
    let svd = SVD::new(work.clone(), false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma = order.iter().map(|&k| svd.singular_values[k]).collect();
    let mut v = DMatrix::zeros(cols, cols);
    for (dst, &src) in order.iter().enumerate() {
        v.set_column(dst, &v_t.row(src).transpose());
    }
    (sigma, v)
}

pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Rank under [`rank_tolerance`].
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let s = singular_values(m);
    match s.first() {
        None => 0,
        Some(&smax) => {
            let tol = rank_tolerance(smax, m.nrows(), m.ncols());
            s.iter().filter(|&&x| x > tol).count()
        }
    }
}

/// Ratio of extreme singular values; infinite for singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Eigenvalues of a general real matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Frobenius norm of `M + Mᵀ`.
pub fn skew_residual(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).norm()
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Solves `A X − X B = C` through the Kronecker form
/// `(I ⊗ A − Bᵀ ⊗ I) vec(X) = vec(C)`.
///
/// Singular operators are handled by a least-squares solve; the caller must
/// check the residual when the equation may be inconsistent.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, q) = (a.nrows(), b.nrows());
    let op = DMatrix::<f64>::identity(q, q).kronecker(a) - b.transpose().kronecker(&DMatrix::identity(p, p));
    let rhs = DVector::from_column_slice(c.as_slice());
    let lu = op.clone().lu();
    let sol = match lu.solve(&rhs) {
        Some(x) if x.iter().all(|v| v.is_finite()) && (&op * &x - &rhs).norm() <= 1e-9 * (1.0 + rhs.norm()) => x,
        _ => {
            let svd = SVD::new(op, true, true);
            let smax = svd.singular_values.max();
            svd.solve(&rhs, 1e-10 * smax.max(1.0)).expect("SVD factors were computed")
        }
    };
    DMatrix::from_column_slice(p, q, sol.as_slice())
}

/// Monic polynomial coefficients `[1, a₁, …, a_q]` of `∏ (s − rᵢ)`, real parts only.
pub fn poly_from_roots(roots: &[Complex<f64>]) -> Vec<f64> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for &r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * r;
        }
        coeffs = next;
    }
    coeffs.into_iter().map(|c| c.re).collect()
}

/// Smallest `d` such that the two multisets can be paired with every pair
/// within distance `d` (bottleneck matching). Returns infinity on length mismatch.
pub fn bottleneck_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    if a.is_empty() {
        return 0.0;
    }
    let n = a.len();
    let dist: Vec<Vec<f64>> = a.iter().map(|x| b.iter().map(|y| (x - y).norm()).collect()).collect();
    let mut candidates: Vec<f64> = dist.iter().flatten().copied().collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    let feasible = |thr: f64| -> bool {
        let mut owner: Vec<Option<usize>> = vec![None; n];
        for i in 0..n {
            let mut seen = vec![false; n];
            if !augment(i, thr, &dist, &mut seen, &mut owner) {
                return false;
            }
        }
        true
    };
    let (mut lo, mut hi) = (0, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if feasible(candidates[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

fn augment(i: usize, thr: f64, dist: &[Vec<f64>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
    for j in 0..dist.len() {
        if dist[i][j] <= thr && !seen[j] {
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, thr, dist, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
    }
    false
}

/// Real block-diagonal matrix whose spectrum is the given conjugate-closed set:
/// `[[σ, ω], [−ω, σ]]` per conjugate pair, scalars for real entries.
pub fn real_spectrum_matrix(spectrum: &[Complex<f64>], tol: f64) -> Option<DMatrix<f64>> {
    let q = spectrum.len();
    let mut m = DMatrix::zeros(q, q);
    let mut used = vec![false; q];
    let mut k = 0;
    for i in 0..q {
        if used[i] {
            continue;
        }
        used[i] = true;
        let z = spectrum[i];
        if z.im.abs() <= tol {
            m[(k, k)] = z.re;
            k += 1;
        } else {
            let partner = (0..q).find(|&j| !used[j] && (spectrum[j] - z.conj()).norm() <= tol)?;
            used[partner] = true;
            let w = z.im.abs();
            m[(k, k)] = z.re;
            m[(k + 1, k + 1)] = z.re;
            m[(k, k + 1)] = w;
            m[(k + 1, k)] = -w;
            k += 2;
        }
    }
    Some(m)
}
