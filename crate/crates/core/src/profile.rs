//! Time profiles on `[0, t]` with closed-form integrals: rate caps `c(s)`,
//! speed-ups `λ(s)` and the weights `f(s)` of the minimal-cost problem.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, PartialEq)]
pub enum Profile<T> {
    /// `values[i]` on `[breaks[i], breaks[i+1])`.
    PiecewiseConstant { breaks: Vec<T>, values: Vec<T> },
    /// `p + q·s`.
    Affine { p: T, q: T },
    /// `1 + num / (p + q·s)`, the shape of optimal speed-ups for affine weights.
    Reciprocal { num: T, p: T, q: T },
}

fn log_ratio<T: Real>(p: T, q: T, a: T, b: T) -> T {
    // ∫_a^b ds / (p + q s)
    if q == T::zero() {
        (b - a) / p
    } else {
        ((p + q * b) / (p + q * a)).ln() / q
    }
}

impl<T: Real> Profile<T> {
    pub fn constant(v: T, t: T) -> Self {
        Profile::PiecewiseConstant {
            breaks: vec![T::zero(), t],
            values: vec![v],
        }
    }

    pub fn piecewise(breaks: Vec<T>, values: Vec<T>) -> Result<Self> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(Error::Precondition("need one more break than values".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition("breaks must increase strictly".into()));
        }
        Ok(Profile::PiecewiseConstant { breaks, values })
    }

    /// `n` equal pieces on `[0, t]`.
    pub fn uniform_pieces(t: T, values: Vec<T>) -> Result<Self> {
        let n = values.len();
        let breaks = (0..=n).map(|i| t * lit(i as f64) / lit(n as f64)).collect();
        Self::piecewise(breaks, values)
    }

    pub fn eval(&self, s: T) -> T {
        match self {
            Profile::PiecewiseConstant { breaks, values } => {
                let i = breaks[1..].partition_point(|b| *b <= s).min(values.len() - 1);
                values[i]
            }
            Profile::Affine { p, q } => *p + *q * s,
            Profile::Reciprocal { num, p, q } => T::one() + *num / (*p + *q * s),
        }
    }

    /// Points in `(0, t)` where the profile is not smooth.
    pub fn breakpoints(&self, t: T) -> Vec<T> {
        match self {
            Profile::PiecewiseConstant { breaks, .. } => {
                breaks.iter().copied().filter(|b| *b > T::zero() && *b < t).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Pieces of `[a, b]` on which the profile is given by one formula.
    fn pieces(&self, a: T, b: T) -> Vec<(T, T)> {
        let mut cuts = vec![a];
        cuts.extend(self.breakpoints(b).into_iter().filter(|x| *x > a));
        cuts.push(b);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// `inf` and `sup` over `[0, t]`.
    pub fn range(&self, t: T) -> (T, T) {
        match self {
            Profile::PiecewiseConstant { breaks, values } => {
                let live = values
                    .iter()
                    .zip(breaks.iter())
                    .filter(|(_, b)| **b < t)
                    .map(|(v, _)| *v);
                live.fold((T::infinity(), T::neg_infinity()), |(lo, hi), v| (lo.min(v), hi.max(v)))
            }
            _ => {
                let (a, b) = (self.eval(T::zero()), self.eval(t));
                (a.min(b), a.max(b))
            }
        }
    }

    pub fn check_positive(&self, t: T) -> Result<()> {
        let (lo, _) = self.range(t);
        if !(lo > T::zero()) {
            return Err(Error::Precondition(format!("profile must be positive on [0, {t}]")));
        }
        Ok(())
    }

    /// `∫_a^b profile`.
    pub fn integral(&self, a: T, b: T) -> T {
        match self {
            Profile::PiecewiseConstant { .. } => {
                self.pieces(a, b).into_iter().map(|(x, y)| self.eval(x) * (y - x)).sum()
            }
            Profile::Affine { p, q } => *p * (b - a) + *q * (b * b - a * a) / lit(2.0),
            Profile::Reciprocal { num, p, q } => (b - a) + *num * log_ratio(*p, *q, a, b),
        }
    }

    /// `∫_a^b 1/profile`.
    pub fn integral_recip(&self, a: T, b: T) -> Result<T> {
        match self {
            Profile::PiecewiseConstant { .. } => {
                Ok(self.pieces(a, b).into_iter().map(|(x, y)| (y - x) / self.eval(x)).sum())
            }
            Profile::Affine { p, q } => Ok(log_ratio(*p, *q, a, b)),
            Profile::Reciprocal { .. } => Err(Error::Unsupported("1/λ for reciprocal speed-ups".into())),
        }
    }

    /// Total time shift `∫_0^t (λ - 1)`.
    pub fn shift(&self, t: T) -> T {
        self.integral(T::zero(), t) - t
    }
}

/// `∫_0^t c(s)(λ(s) - 1)² ds` in closed form, for piecewise-constant or
/// affine `c` against piecewise-constant or reciprocal `λ`.
pub fn weighted_square_integral<T: Real>(c: &Profile<T>, lam: &Profile<T>, t: T) -> Result<T> {
    let mut cuts = vec![T::zero()];
    cuts.extend(c.breakpoints(t));
    cuts.extend(lam.breakpoints(t));
    cuts.push(t);
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite breaks"));
    cuts.dedup();
    let half: T = lit(0.5);
    let mut total = T::zero();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = half * (a + b);
        let piece = match (c, lam) {
            (_, Profile::PiecewiseConstant { .. }) => {
                let d = lam.eval(mid) - T::one();
                match c {
                    Profile::PiecewiseConstant { .. } => c.eval(mid) * (b - a) * d * d,
                    Profile::Affine { .. } => c.integral(a, b) * d * d,
                    Profile::Reciprocal { .. } => return Err(Error::Unsupported("reciprocal rate cap".into())),
                }
            }
            (_, Profile::Reciprocal { num, p, q }) => {
                // (λ-1)² = num² / g², g = p + q s
                let n2 = *num * *num;
                let inv_sq = if *q == T::zero() {
                    (b - a) / (*p * *p)
                } else {
                    (T::one() / (*p + *q * a) - T::one() / (*p + *q * b)) / *q
                };
                match c {
                    Profile::PiecewiseConstant { .. } => c.eval(mid) * n2 * inv_sq,
                    Profile::Affine { p: pc, q: qc } => {
                        if *q == T::zero() {
                            n2 * c.integral(a, b) / (*p * *p)
                        } else {
                            // c = (qc/q) g + (pc - qc p / q)
                            let k1 = *qc / *q;
                            let k0 = *pc - *qc * *p / *q;
                            n2 * (k1 * log_ratio(*p, *q, a, b) + k0 * inv_sq)
                        }
                    }
                    Profile::Reciprocal { .. } => return Err(Error::Unsupported("reciprocal rate cap".into())),
                }
            }
            (_, Profile::Affine { .. }) => return Err(Error::Unsupported("affine speed-up".into())),
        };
        total = total + piece;
    }
    Ok(total)
}
