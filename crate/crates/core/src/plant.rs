//! Plant model: the autonomous system `ẋ = Ax`, its stacked output matrix and
//! the row partition that hands each agent its own block `Cᵢ`.

use nalgebra::{Complex, DMatrix};

use crate::decomposition::observability_rank;
use crate::linalg;
use crate::{Error, Result};

/// Real parts within this distance of zero count as purely imaginary.
pub const TOL_EIG: f64 = 1e-8;
/// Eigenvalues closer than this (relative to the spectral scale) form one cluster.
pub const TOL_CLUSTER: f64 = 1e-6;
/// `‖A + Aᵀ‖` below which `A` is treated as already skew-symmetric.
pub const TOL_SKEW: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    c: DMatrix<f64>,
    partition: Vec<usize>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, c: DMatrix<f64>, partition: Vec<usize>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension(format!("A must be square and non-empty, got {:?}", a.shape())));
        }
        if c.ncols() != a.nrows() {
            return Err(Error::Dimension(format!("C has {} columns, A is {}x{}", c.ncols(), a.nrows(), a.ncols())));
        }
        if partition.is_empty() || partition.contains(&0) {
            return Err(Error::Dimension("every agent needs at least one output row".into()));
        }
        let rows: usize = partition.iter().sum();
        if rows != c.nrows() {
            return Err(Error::Dimension(format!("partition covers {rows} rows, C has {}", c.nrows())));
        }
        Ok(Self { a, c, partition })
    }

    /// Builds the plant from per-agent output blocks stacked in order.
    pub fn from_blocks(a: DMatrix<f64>, blocks: &[DMatrix<f64>]) -> Result<Self> {
        let n = a.ncols();
        if let Some(bad) = blocks.iter().position(|b| b.ncols() != n) {
            return Err(Error::Dimension(format!("C block {} has {} columns, expected {n}", bad + 1, blocks[bad].ncols())));
        }
        let partition: Vec<usize> = blocks.iter().map(|b| b.nrows()).collect();
        let rows = partition.iter().sum();
        let mut c = DMatrix::zeros(rows, n);
        let mut r = 0;
        for b in blocks {
            c.view_mut((r, 0), b.shape()).copy_from(b);
            r += b.nrows();
        }
        Self::new(a, c, partition)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn partition(&self) -> &[usize] {
        &self.partition
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn agents(&self) -> usize {
        self.partition.len()
    }

    /// Output block `Cᵢ` of agent `i` (0-based).
    pub fn c_block(&self, i: usize) -> DMatrix<f64> {
        let start: usize = self.partition[..i].iter().sum();
        self.c.rows(start, self.partition[i]).into_owned()
    }

    pub fn c_blocks(&self) -> Vec<DMatrix<f64>> {
        (0..self.agents()).map(|i| self.c_block(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeutralStabilityReport {
    pub is_neutrally_stable: bool,
    pub eigenvalues: Vec<Complex<f64>>,
    pub max_real_part: f64,
    /// Largest gap between algebraic and geometric multiplicity over all
    /// eigenvalue clusters; zero means every eigenvalue is semi-simple.
    pub semisimplicity_defect: usize,
}

pub fn check_neutral_stability(a: &DMatrix<f64>) -> Result<NeutralStabilityReport> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("A must be square, got {:?}", a.shape())));
    }
    let n = a.nrows();
    let eigenvalues = linalg::eigenvalues(a);
    let max_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let scale = eigenvalues.iter().map(|z| z.norm()).fold(1.0, f64::max);

    let mut clusters: Vec<Vec<Complex<f64>>> = Vec::new();
    for &z in &eigenvalues {
        match clusters.iter_mut().find(|c| (mean(c) - z).norm() <= TOL_CLUSTER * scale) {
            Some(c) => c.push(z),
            None => clusters.push(vec![z]),
        }
    }

    let a_c = a.map(|v| Complex::new(v, 0.0));
    let mut defect = 0;
    for cluster in &clusters {
        let lambda = mean(cluster);
        let shifted = &a_c - DMatrix::<Complex<f64>>::identity(n, n) * lambda;
        let sv = shifted.singular_values();
        let smax = sv.iter().copied().fold(0.0, f64::max);
        let tol = linalg::rank_tolerance(smax, n, n).max(TOL_CLUSTER * smax.max(1.0));
        let rank = sv.iter().filter(|&&s| s > tol).count();
        let geometric = n - rank;
        defect = defect.max(cluster.len().abs_diff(geometric));
    }

    Ok(NeutralStabilityReport {
        is_neutrally_stable: max_real_part.abs() <= TOL_EIG
            && eigenvalues.iter().all(|z| z.re.abs() <= TOL_EIG)
            && defect == 0,
        eigenvalues,
        max_real_part,
        semisimplicity_defect: defect,
    })
}

fn mean(c: &[Complex<f64>]) -> Complex<f64> {
    c.iter().sum::<Complex<f64>>() / c.len() as f64
}

/// Similarity transform `P` with `P⁻¹AP` skew-symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewSymmetrizer {
    pub p: DMatrix<f64>,
    pub p_inv: DMatrix<f64>,
    /// `‖S + Sᵀ‖_F` for `S = P⁻¹AP`.
    pub residual: f64,
    pub condition: f64,
}

impl SkewSymmetrizer {
    pub fn identity(n: usize) -> Self {
        Self { p: DMatrix::identity(n, n), p_inv: DMatrix::identity(n, n), residual: 0.0, condition: 1.0 }
    }

    /// `P⁻¹AP`.
    pub fn transform(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        &self.p_inv * a * &self.p
    }

    pub fn is_identity(&self) -> bool {
        let n = self.p.nrows();
        self.p == DMatrix::identity(n, n)
    }
}

/// Finds `P` such that `P⁻¹AP` is skew-symmetric.
///
/// Real Schur form first, then the quasi-triangular coupling is removed with
/// block Sylvester eliminations and every 2×2 rotation block is brought to
/// `[[0, ω], [−ω, 0]]` using its complex eigenvector.
pub fn skew_symmetrize(a: &DMatrix<f64>) -> Result<SkewSymmetrizer> {
    let report = check_neutral_stability(a)?;
    if !report.is_neutrally_stable {
        return Err(Error::NotNeutrallyStable(Box::new(report)));
    }
    let n = a.nrows();
    if linalg::skew_residual(a) <= TOL_SKEW {
        return Ok(SkewSymmetrizer::identity(n));
    }

    let (z, mut t) = a.clone().schur().unpack();
    let tnorm = t.norm().max(1.0);
    let mut blocks: Vec<(usize, usize)> = Vec::new();
    let mut k = 0;
    while k < n {
        if k + 1 < n && t[(k + 1, k)].abs() > 1e-14 * tnorm {
            blocks.push((k, 2));
            k += 2;
        } else {
            blocks.push((k, 1));
            k += 1;
        }
    }

    // Eliminate the strictly upper block part column by column, bottom-up
    // within each column so earlier zeros survive.
    let mut x = z;
    for j in 1..blocks.len() {
        for i in (0..j).rev() {
            let (ri, si) = blocks[i];
            let (rj, sj) = blocks[j];
            let tii = t.view((ri, ri), (si, si)).into_owned();
            let tjj = t.view((rj, rj), (sj, sj)).into_owned();
            let tij = t.view((ri, rj), (si, sj)).into_owned();
            let y = linalg::solve_sylvester(&tii, &tjj, &(-tij));
            let mut e = DMatrix::<f64>::identity(n, n);
            e.view_mut((ri, rj), (si, sj)).copy_from(&y);
            let mut e_inv = DMatrix::<f64>::identity(n, n);
            e_inv.view_mut((ri, rj), (si, sj)).copy_from(&(-&y));
            t = &e_inv * &t * &e;
            x = &x * &e;
        }
    }

    let mut s = DMatrix::<f64>::identity(n, n);
    for &(r, size) in &blocks {
        if size == 2 {
            let (a11, a12, a21, a22) = (t[(r, r)], t[(r, r + 1)], t[(r + 1, r)], t[(r + 1, r + 1)]);
            let mu = 0.5 * (a11 + a22);
            let disc = 0.25 * (a11 - a22).powi(2) + a12 * a21;
            if disc < 0.0 {
                let omega = (-disc).sqrt();
                let mut blk = DMatrix::from_row_slice(2, 2, &[a12, 0.0, mu - a11, omega]);
                let scale = blk.norm() / std::f64::consts::SQRT_2;
                blk /= scale;
                s.view_mut((r, r), (2, 2)).copy_from(&blk);
            }
        }
    }

    let p = x * s;
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Certification("skew-symmetrizing transform is singular".into()))?;
    let residual = linalg::skew_residual(&(&p_inv * a * &p));
    if residual > 1e-8 * a.norm().max(1.0) {
        return Err(Error::Certification(format!("skew-symmetrization residual {residual:.3e} too large")));
    }
    let condition = linalg::condition_number(&p);
    Ok(SkewSymmetrizer { p, p_inv, residual, condition })
}

/// `rank([C; CA; …; CA^{n−1}]) = n`.
pub fn check_joint_observability(plant: &LtiPlant) -> bool {
    observability_rank(plant.c(), plant.a()).expect("plant dimensions validated at construction") == plant.n()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    #[test]
    fn rotation_is_neutrally_stable() {
        let rep = check_neutral_stability(&m(2, 2, &[0.0, 1.0, -1.0, 0.0])).unwrap();
        assert!(rep.is_neutrally_stable);
        let mut ims: Vec<f64> = rep.eigenvalues.iter().map(|z| z.im).collect();
        ims.sort_by(f64::total_cmp);
        assert!((ims[0] + 1.0).abs() < 1e-12 && (ims[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nilpotent_is_rejected() {
        let rep = check_neutral_stability(&m(2, 2, &[0.0, 1.0, 0.0, 0.0])).unwrap();
        assert!(!rep.is_neutrally_stable);
        assert_eq!(rep.semisimplicity_defect, 1);
    }

    #[test]
    fn zero_matrix_is_semisimple() {
        let rep = check_neutral_stability(&DMatrix::zeros(3, 3)).unwrap();
        assert!(rep.is_neutrally_stable);
    }

    #[test]
    fn unstable_is_rejected() {
        let rep = check_neutral_stability(&m(2, 2, &[0.1, 1.0, -1.0, 0.1])).unwrap();
        assert!(!rep.is_neutrally_stable);
        assert!((rep.max_real_part - 0.1).abs() < 1e-12);
    }

    #[test]
    fn non_square_is_dimension_error() {
        assert!(matches!(check_neutral_stability(&DMatrix::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn skew_input_gets_identity() {
        let s = skew_symmetrize(&m(2, 2, &[0.0, 3.0, -3.0, 0.0])).unwrap();
        assert!(s.is_identity());
    }

    #[test]
    fn anisotropic_rotation_is_symmetrized() {
        let a = m(2, 2, &[0.0, 2.0, -1.0, 0.0]);
        let s = skew_symmetrize(&a).unwrap();
        let sa = &s.p_inv * &a * &s.p;
        assert!((&sa + sa.transpose()).norm() <= 1e-10);
        assert!((&s.p * &s.p_inv - DMatrix::<f64>::identity(2, 2)).norm() <= 1e-12);
    }

    #[test]
    fn defective_matrix_cannot_be_symmetrized() {
        assert!(matches!(skew_symmetrize(&m(2, 2, &[0.0, 1.0, 0.0, 0.0])), Err(Error::NotNeutrallyStable(_))));
    }

    #[test]
    fn joint_observability_trivial_cases() {
        let a = m(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let full = LtiPlant::new(a.clone(), DMatrix::identity(2, 2), vec![1, 1]).unwrap();
        assert!(check_joint_observability(&full));
        let blind = LtiPlant::new(a, DMatrix::zeros(1, 2), vec![1]).unwrap();
        assert!(!check_joint_observability(&blind));
    }

    #[test]
    fn partition_must_cover_rows() {
        let r = LtiPlant::new(DMatrix::zeros(2, 2), DMatrix::zeros(3, 2), vec![1, 1]);
        assert!(matches!(r, Err(Error::Dimension(_))));
        let r = LtiPlant::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2), vec![2, 0]);
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
