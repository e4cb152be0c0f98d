//! Oracles shared by the integration tests. None of them call into the
//! library's linear-algebra helpers.
#![allow(dead_code)]

use nalgebra::{Complex, DMatrix};

/// Rank by Gaussian elimination with full pivoting; pivots below
/// `rel_tol · max|entry|` count as zero.
pub fn rank_by_elimination(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let mut a = m.clone();
    let (rows, cols) = a.shape();
    let scale = a.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return 0;
    }
    let mut rank = 0;
    for _ in 0..rows.min(cols) {
        let mut best = (0.0, 0, 0);
        for i in rank..rows {
            for j in rank..cols {
                if a[(i, j)].abs() > best.0 {
                    best = (a[(i, j)].abs(), i, j);
                }
            }
        }
        if best.0 <= rel_tol * scale {
            break;
        }
        a.swap_rows(rank, best.1);
        a.swap_columns(rank, best.2);
        let pivot = a[(rank, rank)];
        for i in rank + 1..rows {
            let f = a[(i, rank)] / pivot;
            for j in rank..cols {
                let v = a[(rank, j)];
                a[(i, j)] -= f * v;
            }
        }
        rank += 1;
    }
    rank
}

/// `[C; CA; …; CA^{n−1}]` built by repeated multiplication.
pub fn observability(c: &DMatrix<f64>, a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = c.nrows();
    let mut o = DMatrix::zeros(m * n, n);
    let mut block = c.clone();
    for k in 0..n {
        o.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    o
}

pub fn eig(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    m.complex_eigenvalues().iter().copied().collect()
}

/// Largest pairwise distance under the best matching, by trying every permutation.
pub fn matched_distance(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    fn go(a: &[Complex<f64>], b: &[Complex<f64>], used: &mut Vec<bool>, k: usize, worst: f64, best: &mut f64) {
        if worst >= *best {
            return;
        }
        if k == a.len() {
            *best = worst;
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, used, k + 1, worst.max((a[k] - b[j]).norm()), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    if a.is_empty() { 0.0 } else { best }
}

/// Popov–Belevitch–Hautus test: `[A − λI; C]` has full column rank for every
/// eigenvalue `λ` of `A`.
pub fn pbh_observable(c: &DMatrix<f64>, a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    eig(a).into_iter().all(|lambda| {
        let mut stacked = DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                stacked[(i, j)] = Complex::new(a[(i, j)], 0.0) - if i == j { lambda } else { Complex::new(0.0, 0.0) };
            }
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                stacked[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let sv = stacked.singular_values();
        let smax = sv.max();
        sv.min() > 1e-9 * smax.max(1.0)
    })
}

/// Maxima of `values` over consecutive windows `[k w, (k+1) w)`.
pub fn window_maxima(times: &[f64], values: &[f64], w: f64) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        let k = ((t / w) + 1e-9).floor() as usize;
        if out.len() <= k {
            out.resize(k + 1, 0.0);
        }
        out[k] = out[k].max(v);
    }
    out
}

/// Envelope check: window maxima never increase, except once both sit below
/// `floor`.
pub fn envelope_nonincreasing(maxima: &[f64], floor: f64) -> bool {
    maxima.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) || w[1] <= floor)
}
