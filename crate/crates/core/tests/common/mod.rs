//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use ips_core::exact_engine::GeneratorMatrix;
use nalgebra::{DMatrix, DVector};

/// `μ₀ e^{tQ}` through nalgebra's dense matrix exponential.
pub fn dense_evolve(gen: &GeneratorMatrix<f64>, mu0: &[f64], t: f64) -> Vec<f64> {
    let n = gen.dimension();
    let dense = gen.to_dense();
    let q = DMatrix::from_fn(n, n, |i, j| dense[i][j] * t);
    let e = q.exp();
    let row = DVector::from_column_slice(mu0).transpose() * e;
    row.iter().copied().collect()
}

/// Modified Bessel function `I_n(z)` by its power series.
pub fn bessel_i(n: u32, z: f64) -> f64 {
    let half = z / 2.0;
    let mut term = half.powi(n as i32) / (1..=n).map(|k| k as f64).product::<f64>();
    let mut sum = term;
    for m in 1..200 {
        term *= half * half / (m as f64 * (m + n) as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, 4 points (exact to degree 7).
const GL4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

/// Minimizes `∫_0^t f (λ - 1)²` subject to `∫_0^t (λ - 1) = τ` over
/// profiles that are affine on each of `pieces` cells (discontinuous across
/// cells), with cell boundaries including `breaks`. Conjugate gradients on
/// the constraint hyperplane. Returns the minimum and the optimizer's
/// value of `λ - 1` at the cell midpoints.
pub fn min_cost_oracle(f: impl Fn(f64) -> f64, breaks: &[f64], t: f64, tau: f64, pieces: usize) -> (f64, Vec<f64>) {
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|b| *b > 0.0 && *b < t).collect();
    let extra = pieces.saturating_sub(cuts.len() + 1);
    cuts.extend((1..=extra).map(|i| t * i as f64 / (extra + 1) as f64));
    cuts.push(0.0);
    cuts.push(t);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let cells: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    let n = 2 * cells.len();
    // basis per cell: 1 and the centered linear function
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut c = DVector::<f64>::zeros(n);
    for (k, (lo, hi)) in cells.iter().enumerate() {
        let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
        for (x, w) in GL4 {
            let s = mid + half * x;
            let phi = [1.0, x];
            let fw = f(s) * w * half;
            for i in 0..2 {
                for j in 0..2 {
                    a[(2 * k + i, 2 * k + j)] += fw * phi[i] * phi[j];
                }
                c[2 * k + i] += w * half * phi[i];
            }
        }
    }
    // feasible start: constant shift; then CG on the projected quadratic
    let cc = c.dot(&c);
    let project = |v: &DVector<f64>| v - &c * (c.dot(v) / cc);
    let mut x = &c * (tau / cc);
    let mut r = project(&(-(&a * &x)));
    let mut p = r.clone();
    for _ in 0..(4 * n) {
        let rr = r.dot(&r);
        if rr < 1e-30 {
            break;
        }
        let ap = project(&(&a * &p));
        let alpha = rr / p.dot(&ap);
        x += &p * alpha;
        r -= &ap * alpha;
        let beta = r.dot(&r) / rr;
        p = &r + &p * beta;
    }
    let value = x.dot(&(&a * &x));
    (value, (0..cells.len()).map(|k| x[2 * k]).collect())
}

/// Splitmix-driven uniform numbers for oracle inputs.
pub struct Uniform(u64);

impl Uniform {
    pub fn new(seed: u64) -> Self {
        Uniform(seed)
    }

    pub fn next(&mut self) -> f64 {
        self.0 = ips_core::mc_engine::splitmix64(self.0);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next()
    }
}
