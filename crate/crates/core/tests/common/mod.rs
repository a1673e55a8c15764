#![allow(dead_code, clippy::needless_range_loop)]

use num::{BigRational, One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Q = BigRational;

pub fn rat(x: f64) -> Q {
    BigRational::from_float(x).expect("finite input")
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().expect("representable")
}

/// Gauss–Jordan elimination over the rationals; `b` holds the right-hand
/// sides as columns.
pub fn solve_exact(mut a: Vec<Vec<Q>>, mut b: Vec<Vec<Q>>) -> Vec<Vec<Q>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n)
            .find(|&r| !a[r][col].is_zero())
            .expect("singular system");
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col].clone();
        for v in a[col].iter_mut() {
            *v /= &p;
        }
        for v in b[col].iter_mut() {
            *v /= &p;
        }
        for r in 0..n {
            if r == col || a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone();
            for c in 0..n {
                let d = &f * &a[col][c];
                a[r][c] -= d;
            }
            for c in 0..b[r].len() {
                let d = &f * &b[col][c];
                b[r][c] -= d;
            }
        }
    }
    b
}

/// Penalty `K = Q R⁻¹ Qᵀ` and `R⁻¹ Qᵀ` in exact arithmetic, straight from the
/// textbook construction of the natural cubic spline roughness.
pub struct ExactPenalty {
    pub k: Vec<Vec<Q>>,
    pub r_inv_qt: Vec<Vec<Q>>,
}

pub fn exact_penalty(t: &[f64]) -> ExactPenalty {
    let n = t.len();
    let m = n - 2;
    let h: Vec<Q> = t.windows(2).map(|w| rat(w[1]) - rat(w[0])).collect();
    let mut q = vec![vec![Q::zero(); m]; n];
    let mut r = vec![vec![Q::zero(); m]; m];
    for k in 0..m {
        q[k][k] = Q::one() / &h[k];
        q[k + 1][k] = -(Q::one() / &h[k]) - Q::one() / &h[k + 1];
        q[k + 2][k] = Q::one() / &h[k + 1];
        r[k][k] = (&h[k] + &h[k + 1]) / Q::from_integer(3.into());
        if k + 1 < m {
            let off = &h[k + 1] / Q::from_integer(6.into());
            r[k][k + 1] = off.clone();
            r[k + 1][k] = off;
        }
    }
    let qt: Vec<Vec<Q>> = (0..m)
        .map(|k| (0..n).map(|i| q[i][k].clone()).collect())
        .collect();
    let r_inv_qt = solve_exact(r, qt);
    let mut kmat = vec![vec![Q::zero(); n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = Q::zero();
            for k in 0..m {
                if !q[i][k].is_zero() {
                    acc += &q[i][k] * &r_inv_qt[k][j];
                }
            }
            kmat[i][j] = acc;
        }
    }
    ExactPenalty { k: kmat, r_inv_qt }
}

/// Exact minimiser of `Σ λ_i (y_i - g_i)² + gᵀ K g`: solves `(Λ + K) g = Λ y`.
/// Returns the fitted values and the interior second derivatives.
pub fn exact_weighted_fit(t: &[f64], y: &[f64], lambda: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = t.len();
    let p = exact_penalty(t);
    let mut a = p.k.clone();
    let mut rhs = vec![vec![Q::zero()]; n];
    for i in 0..n {
        let l = rat(lambda[i]);
        a[i][i] += &l;
        rhs[i][0] = l * rat(y[i]);
    }
    let g = solve_exact(a, rhs);
    let gamma: Vec<f64> = p
        .r_inv_qt
        .iter()
        .map(|row| {
            let mut acc = Q::zero();
            for (v, gi) in row.iter().zip(&g) {
                acc += v * &gi[0];
            }
            to_f64(&acc)
        })
        .collect();
    (g.iter().map(|v| to_f64(&v[0])).collect(), gamma)
}

pub fn dense_penalty(t: &[f64]) -> Vec<Vec<f64>> {
    exact_penalty(t)
        .k
        .iter()
        .map(|r| r.iter().map(to_f64).collect())
        .collect()
}

/// Dyadic blocks written out from the definition: lengths 1, 2, 4, ... below
/// `n`, consecutive from the left, the last block of each length shortened
/// to end at `n`, then the whole range. 1-based inclusive pairs.
pub fn reference_dyadic(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut len = 1;
    while len < n {
        let blocks = n.div_ceil(len);
        for b in 0..blocks {
            out.push((b * len + 1, ((b + 1) * len).min(n)));
        }
        len *= 2;
    }
    out.push((1, n));
    out
}

/// `max_I |Σ_{i∈I} (y_i - g_i)| / √|I|` by direct summation.
pub fn brute_max_w(y: &[f64], g: &[f64], intervals: &[(usize, usize)]) -> f64 {
    intervals
        .iter()
        .map(|&(lo, hi)| {
            let s: f64 = (lo - 1..hi).map(|i| y[i] - g[i]).sum();
            (s / ((hi - lo + 1) as f64).sqrt()).abs()
        })
        .fold(0.0, f64::max)
}

/// Smallest roughness `gᵀ K g` over all `g` with every interval statistic
/// within `threshold`, solved as a convex QP.
pub fn qp_min_roughness(t: &[f64], y: &[f64], threshold: f64) -> Option<(f64, Vec<f64>)> {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettings, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus,
    };

    let n = t.len();
    let k = dense_penalty(t);
    let p: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if j >= i { 2.0 * k[i][j] } else { 0.0 })
                .collect()
        })
        .collect();
    let intervals = reference_dyadic(n);
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &(lo, hi) in &intervals {
        let c = 1.0 / ((hi - lo + 1) as f64).sqrt();
        let sy: f64 = y[lo - 1..hi].iter().sum::<f64>() * c;
        let row: Vec<f64> = (1..=n)
            .map(|i| if i >= lo && i <= hi { c } else { 0.0 })
            .collect();
        // c Σ (y - g) <= thr  and  c Σ (g - y) <= thr
        a.push(row.iter().map(|v| -v).collect::<Vec<f64>>());
        b.push(threshold - sy);
        a.push(row);
        b.push(threshold + sy);
    }
    let p = CscMatrix::from(&p);
    let a = CscMatrix::from(&a);
    let q = vec![0.0; n];
    let cones = [NonnegativeConeT(b.len())];
    let settings = DefaultSettings {
        verbose: false,
        tol_gap_abs: 1e-12,
        tol_gap_rel: 1e-12,
        tol_feas: 1e-12,
        max_iter: 500,
        ..DefaultSettings::default()
    };
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).ok()?;
    solver.solve();
    match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => {
            let g = solver.solution.x.clone();
            let r: f64 = (0..n)
                .map(|i| (0..n).map(|j| g[i] * k[i][j] * g[j]).sum::<f64>())
                .sum();
            Some((r, g))
        }
        _ => None,
    }
}

/// A randomized small instance: sorted distinct dyadic knots in (0, 1],
/// smooth signal plus noise, weights spanning `[1e-6, 1e6]`. Every number is
/// a short dyadic rational so the exact oracle stays cheap.
pub struct Instance {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..=20);
    let mut ticks: Vec<u32> = Vec::with_capacity(n);
    while ticks.len() < n {
        let k = rng.random_range(1..=1024);
        if !ticks.contains(&k) {
            ticks.push(k);
        }
    }
    ticks.sort_unstable();
    let t: Vec<f64> = ticks.iter().map(|&k| k as f64 / 1024.0).collect();
    let grid = (1u32 << 20) as f64;
    let y = t
        .iter()
        .map(|&x| (((5.0 * x).sin() + rng.random_range(-0.3..0.3)) * grid).round() / grid)
        .collect();
    // 2^±20 ≈ 1e∓6, with a small odd mantissa
    let lambda = (0..n)
        .map(|_| {
            let e: i32 = rng.random_range(-20..=20);
            let m = rng.random_range(8..16) as f64 / 8.0;
            m * 2f64.powi(e)
        })
        .collect();
    Instance { t, y, lambda }
}
