//! Per-agent observability analysis and the orthogonal Kalman decomposition
//! `Tᵢ = [Dᵢ Uᵢ]` splitting each agent's state space into observable and
//! unobservable coordinates.

use nalgebra::DMatrix;

use crate::linalg;
use crate::plant::{LtiPlant, SkewSymmetrizer};
use crate::{Error, Result};

/// Base tolerance for block residuals; scaled by `max(1, ‖A‖)`.
pub const TOL_BLOCK: f64 = 1e-8;
pub const TOL_ORTH: f64 = 1e-10;

/// Stacks `Cᵢ Aᵏ` for `k = 0..n−1`.
pub fn observability_matrix(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || c.ncols() != a.nrows() {
        return Err(Error::Dimension(format!("C is {:?}, A is {:?}", c.shape(), a.shape())));
    }
    let (m, n) = c.shape();
    let mut o = DMatrix::zeros(m * n, n);
    let mut block = c.clone();
    for k in 0..n {
        o.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    Ok(o)
}

/// Observability matrix of `(C, A / s)` with `s = ‖A‖_F` (or 1 when `A = 0`).
///
/// Same kernel as the unscaled matrix, but the blocks no longer grow like
/// `‖A‖ᵏ`, so roundoff in the kernel directions stays near `ε ‖C‖` and the
/// standard rank tolerance separates it from the signal.
pub fn scaled_observability_matrix(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = a.norm();
    if s > 0.0 {
        observability_matrix(c, &(a / s))
    } else {
        observability_matrix(c, a)
    }
}

/// `rank Oᵢ`, evaluated on [`scaled_observability_matrix`].
pub fn observability_rank(c: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<usize> {
    Ok(linalg::numerical_rank(&scaled_observability_matrix(c, a)?))
}

/// Orthonormal bases `(U, D)` of `ker(O)` and `im(Oᵀ)`, both taken from a
/// single SVD so that `[D U]` is orthogonal. Columns follow descending
/// singular values.
pub fn subspace_bases(o: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = o.ncols();
    let (sigma, v) = linalg::right_singular_system(o);
    let rank = match sigma.first() {
        Some(&smax) => {
            let tol = linalg::rank_tolerance(smax, o.nrows(), n);
            sigma.iter().filter(|&&s| s > tol).count()
        }
        None => 0,
    };
    let d = v.columns(0, rank).into_owned();
    let u = v.columns(rank, n - rank).into_owned();
    (u, d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceDecomposition {
    pub agent: usize,
    pub observability: DMatrix<f64>,
    /// Unobservable dimension `νᵢ`.
    pub nu: usize,
    pub u: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub a_obs: DMatrix<f64>,
    pub a_unobs: DMatrix<f64>,
    pub c_obs: DMatrix<f64>,
}

impl SubspaceDecomposition {
    pub fn n(&self) -> usize {
        self.t.nrows()
    }

    pub fn observable_dim(&self) -> usize {
        self.n() - self.nu
    }
}

/// Kalman decomposition of the pair `(C_eff, A_eff)`, where `A_eff` must be
/// skew-symmetric (either `A` itself or `P⁻¹AP` with `C_eff = CᵢP`).
///
/// Besides the block structure the result is certified: the reduced pair is
/// observable, the unobservable block is skew-symmetric and `A_eff Uᵢ = Uᵢ A_iō`.
pub fn kalman_decompose_pair(agent: usize, c_eff: &DMatrix<f64>, a_eff: &DMatrix<f64>) -> Result<SubspaceDecomposition> {
    let n = a_eff.nrows();
    let scale = a_eff.norm().max(1.0);
    let skew_res = linalg::skew_residual(a_eff);
    if skew_res > TOL_BLOCK * scale {
        return Err(Error::NotSkewSymmetric { residual: skew_res });
    }
    let o = observability_matrix(c_eff, a_eff)?;
    let (u, d) = subspace_bases(&scaled_observability_matrix(c_eff, a_eff)?);
    let nu = u.ncols();
    let mut t = DMatrix::zeros(n, n);
    t.view_mut((0, 0), d.shape()).copy_from(&d);
    t.view_mut((0, n - nu), u.shape()).copy_from(&u);

    let a_t = t.transpose() * a_eff * &t;
    let q = n - nu;
    let a_obs = a_t.view((0, 0), (q, q)).into_owned();
    let a_unobs = a_t.view((q, q), (nu, nu)).into_owned();
    let c_t = c_eff * &t;
    let c_obs = c_t.columns(0, q).into_owned();

    let tol = TOL_BLOCK * scale;
    let off = a_t.view((0, q), (q, nu)).norm().max(a_t.view((q, 0), (nu, q)).norm());
    if off > tol {
        return Err(Error::Certification(format!("agent {}: off-diagonal block norm {off:.3e}", agent + 1)));
    }
    let c_tail = c_t.columns(q, nu).norm();
    if c_tail > tol * c_eff.norm().max(1.0) {
        return Err(Error::Certification(format!("agent {}: output leaks into unobservable block ({c_tail:.3e})", agent + 1)));
    }
    let skew = linalg::skew_residual(&a_unobs);
    if skew > tol {
        return Err(Error::Certification(format!("agent {}: unobservable block not skew ({skew:.3e})", agent + 1)));
    }
    let invariance = (a_eff * &u - &u * &a_unobs).norm();
    if invariance > tol {
        return Err(Error::Certification(format!("agent {}: kernel not invariant ({invariance:.3e})", agent + 1)));
    }
    if q > 0
        && observability_rank(&c_obs, &a_obs)? != q {
            return Err(Error::Certification(format!("agent {}: reduced pair is not observable", agent + 1)));
        }

    Ok(SubspaceDecomposition { agent, observability: o, nu, u, d, t, a_obs, a_unobs, c_obs })
}

/// Decomposes agent `agent` (0-based) of `plant` in the coordinates defined by
/// `skew`, i.e. on the pair `(CᵢP, P⁻¹AP)`.
pub fn kalman_decompose(plant: &LtiPlant, agent: usize, skew: &SkewSymmetrizer) -> Result<SubspaceDecomposition> {
    if agent >= plant.agents() {
        return Err(Error::Domain(format!("agent {} out of range 1..={}", agent + 1, plant.agents())));
    }
    if skew.p.nrows() != plant.n() {
        return Err(Error::Dimension("transform size does not match plant".into()));
    }
    let a_eff = skew.transform(plant.a());
    let c_eff = plant.c_block(agent) * &skew.p;
    kalman_decompose_pair(agent, &c_eff, &a_eff)
}

/// `Uᵀ(ℒ ⊗ Iₙ)U` for `U = blockdiag(U₁, …, U_N)`, assembled blockwise as
/// `l_ij Uᵢᵀ Uⱼ` without forming the Kronecker product.
pub fn kernel_coupling(us: &[DMatrix<f64>], l: &DMatrix<f64>) -> DMatrix<f64> {
    let nus: Vec<usize> = us.iter().map(|u| u.ncols()).collect();
    let nu: usize = nus.iter().sum();
    let mut out = DMatrix::zeros(nu, nu);
    let mut r = 0;
    for (i, ui) in us.iter().enumerate() {
        let mut c = 0;
        for (j, uj) in us.iter().enumerate() {
            if l[(i, j)] != 0.0 && nus[i] > 0 && nus[j] > 0 {
                out.view_mut((r, c), (nus[i], nus[j])).copy_from(&(ui.transpose() * uj * l[(i, j)]));
            }
            c += nus[j];
        }
        r += nus[i];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_observed_from_first_coordinate() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let o = observability_matrix(&c, &a).unwrap();
        assert_eq!(o, DMatrix::identity(2, 2));
        assert_eq!(linalg::numerical_rank(&o), 2);
    }

    #[test]
    fn mismatched_dimensions() {
        let a = DMatrix::zeros(2, 2);
        let c = DMatrix::zeros(1, 3);
        assert!(matches!(observability_matrix(&c, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn full_rank_gives_empty_kernel() {
        let (u, d) = subspace_bases(&DMatrix::identity(3, 3));
        assert_eq!(u.ncols(), 0);
        assert_eq!(d.ncols(), 3);
        assert!((d.transpose() * &d - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn zero_matrix_gives_full_kernel() {
        let (u, d) = subspace_bases(&DMatrix::zeros(3, 3));
        assert_eq!(u.ncols(), 3);
        assert_eq!(d.ncols(), 0);
        assert!((u.transpose() * &u - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn identity_output_has_no_unobservable_part() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]);
        let dec = kalman_decompose_pair(0, &DMatrix::identity(2, 2), &a).unwrap();
        assert_eq!(dec.nu, 0);
        let ev = linalg::eigenvalues(&dec.a_obs);
        assert!(ev.iter().all(|z| (z.im.abs() - 2.0).abs() < 1e-12));
    }

    #[test]
    fn rejects_non_skew() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -1.0, 0.0]);
        let r = kalman_decompose_pair(0, &DMatrix::identity(2, 2), &a);
        assert!(matches!(r, Err(Error::NotSkewSymmetric { .. })));
    }

    #[test]
    fn two_oscillators_one_seen() {
        // x1/x2 oscillate at rate 1, x3/x4 at rate 2; the sensor only sees x1.
        let mut a = DMatrix::zeros(4, 4);
        a[(0, 1)] = 1.0;
        a[(1, 0)] = -1.0;
        a[(2, 3)] = 2.0;
        a[(3, 2)] = -2.0;
        let c = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
        let dec = kalman_decompose_pair(0, &c, &a).unwrap();
        assert_eq!(dec.nu, 2);
        assert!((dec.t.transpose() * &dec.t - DMatrix::<f64>::identity(4, 4)).norm() < TOL_ORTH);
        assert!((&dec.observability * &dec.u).norm() < 1e-12);
    }
}
