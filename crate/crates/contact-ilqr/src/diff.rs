//! Forward-mode automatic differentiation for the dynamics.
//!
//! The dynamics code in [`crate::multibody`] and [`crate::hydro_contact`] is
//! generic over the [`Real`] scalar trait. Running it with plain `f64` yields
//! values; running it with [`Dual`] (a value plus a vector of partials) yields
//! exact derivatives through the very same code path. [`linearize_step`] seeds
//! one partial slot per state and input coordinate and recovers the full
//! Jacobians `A = df/dx` and `B = df/du` from a single dynamics evaluation.
//!
//! Tie conventions are fixed so gradients are deterministic: `min`/`max` take
//! the first argument's derivative at ties, and `atan2` reports zero partials
//! at the origin.

use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use nalgebra::{DMatrix, DVector};

use crate::multibody::{ControlInput, GeneralizedState, MultibodyError, MultibodyModel};

/// Maximum number of simultaneous partial-derivative slots.
///
/// Seed dimension is `n + m` (state plus input); the systems here stay well
/// under this cap.
pub const MAX_SEED: usize = 24;

/// Scalar abstraction the dynamics are written against.
///
/// Implemented for `f64` (plain evaluation) and [`Dual`] (forward-mode AD).
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn from_f64(x: f64) -> Self;
    /// The underlying value, stripped of derivative information.
    fn primal(self) -> f64;
    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn min(self, other: Self) -> Self;
    fn max(self, other: Self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn primal(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn min(self, other: Self) -> Self {
        if self <= other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Forward-mode dual number with a fixed-capacity partials vector.
///
/// A `Dual` carries a value and up to [`MAX_SEED`] partial derivatives.
/// Constants are represented with zero active slots so arithmetic against
/// them costs almost nothing.
#[derive(Clone, Copy)]
pub struct Dual {
    value: f64,
    len: u32,
    partials: [f64; MAX_SEED],
}

impl Dual {
    /// A constant: value with no derivative slots.
    #[inline]
    pub fn constant(value: f64) -> Self {
        Dual {
            value,
            len: 0,
            partials: [0.0; MAX_SEED],
        }
    }

    /// A seeded variable: unit partial in `slot` out of `seed_len` slots.
    pub fn variable(value: f64, slot: usize, seed_len: usize) -> Self {
        assert!(
            seed_len <= MAX_SEED,
            "seed dimension {seed_len} exceeds Dual capacity {MAX_SEED}"
        );
        assert!(slot < seed_len);
        let mut partials = [0.0; MAX_SEED];
        partials[slot] = 1.0;
        Dual {
            value,
            len: seed_len as u32,
            partials,
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Active partial slots.
    #[inline]
    pub fn partials(&self) -> &[f64] {
        &self.partials[..self.len as usize]
    }

    #[inline]
    fn width(a: &Dual, b: &Dual) -> u32 {
        a.len.max(b.len)
    }

    /// Chain rule for a unary map: `value = f(self.value)`, partials scaled by
    /// `df`.
    #[inline]
    fn lift(self, value: f64, df: f64) -> Dual {
        let mut out = self;
        out.value = value;
        for p in &mut out.partials[..out.len as usize] {
            *p *= df;
        }
        out
    }
}

impl fmt::Debug for Dual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Dual")
            .field("value", &self.value)
            .field("partials", &self.partials())
            .finish()
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        let n = Dual::width(&self, &rhs);
        let mut out = Dual {
            value: self.value + rhs.value,
            len: n,
            partials: self.partials,
        };
        for i in 0..rhs.len as usize {
            out.partials[i] += rhs.partials[i];
        }
        out
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        let n = Dual::width(&self, &rhs);
        let mut out = Dual {
            value: self.value - rhs.value,
            len: n,
            partials: self.partials,
        };
        for i in 0..rhs.len as usize {
            out.partials[i] -= rhs.partials[i];
        }
        out
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        let n = Dual::width(&self, &rhs);
        let mut out = Dual {
            value: self.value * rhs.value,
            len: n,
            partials: [0.0; MAX_SEED],
        };
        for i in 0..self.len as usize {
            out.partials[i] = self.partials[i] * rhs.value;
        }
        for i in 0..rhs.len as usize {
            out.partials[i] += self.value * rhs.partials[i];
        }
        out
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let n = Dual::width(&self, &rhs);
        let inv = 1.0 / rhs.value;
        let value = self.value * inv;
        let mut out = Dual {
            value,
            len: n,
            partials: [0.0; MAX_SEED],
        };
        for i in 0..self.len as usize {
            out.partials[i] = self.partials[i] * inv;
        }
        for i in 0..rhs.len as usize {
            out.partials[i] -= value * rhs.partials[i] * inv;
        }
        out
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        let mut out = self;
        out.value = -out.value;
        for p in &mut out.partials[..out.len as usize] {
            *p = -*p;
        }
        out
    }
}

impl AddAssign for Dual {
    #[inline]
    fn add_assign(&mut self, rhs: Dual) {
        *self = *self + rhs;
    }
}
impl SubAssign for Dual {
    #[inline]
    fn sub_assign(&mut self, rhs: Dual) {
        *self = *self - rhs;
    }
}
impl MulAssign for Dual {
    #[inline]
    fn mul_assign(&mut self, rhs: Dual) {
        *self = *self * rhs;
    }
}
impl DivAssign for Dual {
    #[inline]
    fn div_assign(&mut self, rhs: Dual) {
        *self = *self / rhs;
    }
}

impl Real for Dual {
    #[inline]
    fn from_f64(x: f64) -> Self {
        Dual::constant(x)
    }
    #[inline]
    fn primal(self) -> f64 {
        self.value
    }
    fn sqrt(self) -> Self {
        let r = self.value.sqrt();
        self.lift(r, 0.5 / r)
    }
    fn ln(self) -> Self {
        self.lift(self.value.ln(), 1.0 / self.value)
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.lift(e, e)
    }
    fn sin(self) -> Self {
        self.lift(self.value.sin(), self.value.cos())
    }
    fn cos(self) -> Self {
        self.lift(self.value.cos(), -self.value.sin())
    }
    fn atan2(self, x: Self) -> Self {
        let y = self;
        let value = y.value.atan2(x.value);
        let denom = x.value * x.value + y.value * y.value;
        let n = Dual::width(&y, &x);
        let mut out = Dual {
            value,
            len: n,
            partials: [0.0; MAX_SEED],
        };
        if denom > 0.0 {
            let dy = x.value / denom;
            let dx = -y.value / denom;
            for i in 0..y.len as usize {
                out.partials[i] = dy * y.partials[i];
            }
            for i in 0..x.len as usize {
                out.partials[i] += dx * x.partials[i];
            }
        }
        out
    }
    /// At ties the first argument's derivative is kept.
    fn min(self, other: Self) -> Self {
        if self.value <= other.value {
            self
        } else {
            other
        }
    }
    /// At ties the first argument's derivative is kept.
    fn max(self, other: Self) -> Self {
        if self.value >= other.value {
            self
        } else {
            other
        }
    }
    fn abs(self) -> Self {
        if self.value >= 0.0 {
            self
        } else {
            -self
        }
    }
    fn is_finite(self) -> bool {
        self.value.is_finite() && self.partials().iter().all(|p| p.is_finite())
    }
}

/// First-order expansion of the discrete dynamics around one `(x, u)` point.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// State Jacobian `df/dx`, `n x n`.
    pub a: DMatrix<f64>,
    /// Input Jacobian `df/du`, `n x m`.
    pub b: DMatrix<f64>,
    /// The primal step result.
    pub x_next: GeneralizedState,
}

/// Linearizes one dynamics step by running it with seeded dual numbers.
///
/// Seeds `n + m` partial slots across `(x, u)`, evaluates
/// [`MultibodyModel::step`] once, and extracts `A`, `B`, and the primal next
/// state together.
pub fn linearize_step(
    model: &MultibodyModel,
    x: &GeneralizedState,
    u: &ControlInput,
) -> Result<Linearization, MultibodyError> {
    let nq = model.num_coords();
    let n = 2 * nq;
    let m = model.num_actuated();
    let seed = n + m;

    let mut q = Vec::with_capacity(nq);
    let mut v = Vec::with_capacity(nq);
    for i in 0..nq {
        q.push(Dual::variable(x.q[i], i, seed));
        v.push(Dual::variable(x.v[i], nq + i, seed));
    }
    let tau: Vec<Dual> = (0..m)
        .map(|j| Dual::variable(u.tau[j], n + j, seed))
        .collect();

    let (q_next, v_next) = model.step_generic(&q, &v, &tau)?;

    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut x_next = GeneralizedState::zeros(nq);
    for (row, d) in q_next.iter().chain(v_next.iter()).enumerate() {
        let parts = d.partials();
        for col in 0..n {
            a[(row, col)] = parts.get(col).copied().unwrap_or(0.0);
        }
        for col in 0..m {
            b[(row, col)] = parts.get(n + col).copied().unwrap_or(0.0);
        }
        if row < nq {
            x_next.q[row] = d.value();
        } else {
            x_next.v[row - nq] = d.value();
        }
    }
    Ok(Linearization { a, b, x_next })
}

/// Central-difference reference Jacobians.
///
/// Test oracle and the backend of the `check-gradients` command; the solver
/// itself always uses [`linearize_step`].
pub fn finite_difference_oracle(
    model: &MultibodyModel,
    x: &GeneralizedState,
    u: &ControlInput,
    step_size: f64,
) -> Linearization {
    assert!(step_size > 0.0, "step_size must be positive");
    let nq = model.num_coords();
    let n = 2 * nq;
    let m = model.num_actuated();

    let eval = |xp: &GeneralizedState, up: &ControlInput| -> DVector<f64> {
        let next = model
            .step(xp, up)
            .expect("finite-difference probe diverged");
        next.stacked()
    };

    let mut a = DMatrix::zeros(n, n);
    for col in 0..n {
        let mut hi = x.clone();
        let mut lo = x.clone();
        let scale = step_size * x.coord(col).abs().max(1.0);
        *hi.coord_mut(col) += scale;
        *lo.coord_mut(col) -= scale;
        let diff = (eval(&hi, u) - eval(&lo, u)) / (2.0 * scale);
        a.set_column(col, &diff);
    }
    let mut b = DMatrix::zeros(n, m);
    for col in 0..m {
        let mut hi = u.clone();
        let mut lo = u.clone();
        let scale = step_size * u.tau[col].abs().max(1.0);
        hi.tau[col] += scale;
        lo.tau[col] -= scale;
        let diff = (eval(x, &hi) - eval(x, &lo)) / (2.0 * scale);
        b.set_column(col, &diff);
    }
    let x_next = model.step(x, u).expect("finite-difference probe diverged");
    Linearization { a, b, x_next }
}

/// Worst relative discrepancy between two Jacobian pairs, column by column.
///
/// Relative scale is `max(1, |column|_inf)` so near-zero columns compare
/// absolutely.
pub fn jacobian_discrepancy(ad: &Linearization, fd: &Linearization) -> f64 {
    let col_err = |m_ad: &DMatrix<f64>, m_fd: &DMatrix<f64>| -> f64 {
        let mut worst: f64 = 0.0;
        for col in 0..m_ad.ncols() {
            let scale = m_ad.column(col).amax().max(1.0);
            let diff = (m_ad.column(col) - m_fd.column(col)).amax();
            worst = worst.max(diff / scale);
        }
        worst
    };
    col_err(&ad.a, &fd.a).max(col_err(&ad.b, &fd.b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(v: f64, slot: usize) -> Dual {
        Dual::variable(v, slot, 2)
    }

    #[test]
    fn arithmetic_chain_rule() {
        let x = d(3.0, 0);
        let y = d(2.0, 1);
        let f = x * y + x / y - y;
        // f = xy + x/y - y; df/dx = y + 1/y; df/dy = x - x/y^2 - 1
        assert!((f.value() - (6.0 + 1.5 - 2.0)).abs() < 1e-15);
        assert!((f.partials()[0] - (2.0 + 0.5)).abs() < 1e-15);
        assert!((f.partials()[1] - (3.0 - 0.75 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn elementary_functions() {
        let x = d(0.7, 0);
        let f = x.sin() * x.exp() + x.sqrt() + x.ln();
        let v = 0.7_f64;
        let expect = v.sin() * v.exp() + v.sqrt() + v.ln();
        let dexpect = v.cos() * v.exp() + v.sin() * v.exp() + 0.5 / v.sqrt() + 1.0 / v;
        assert!((f.value() - expect).abs() < 1e-15);
        assert!((f.partials()[0] - dexpect).abs() < 1e-13);
    }

    #[test]
    fn atan2_matches_closed_form() {
        let y = d(0.3, 0);
        let x = d(-0.8, 1);
        let f = y.atan2(x);
        let denom = 0.3 * 0.3 + 0.8 * 0.8;
        assert!((f.value() - 0.3_f64.atan2(-0.8)).abs() < 1e-15);
        assert!((f.partials()[0] - (-0.8 / denom)).abs() < 1e-14);
        assert!((f.partials()[1] - (-0.3 / denom)).abs() < 1e-14);
    }

    #[test]
    fn atan2_origin_has_zero_partials() {
        let y = d(0.0, 0);
        let x = d(0.0, 1);
        let f = y.atan2(x);
        assert_eq!(f.partials(), &[0.0, 0.0]);
    }

    #[test]
    fn min_max_tie_takes_first_argument() {
        let a = d(1.0, 0);
        let b = d(1.0, 1);
        assert_eq!(Real::min(a, b).partials(), &[1.0, 0.0]);
        assert_eq!(Real::max(a, b).partials(), &[1.0, 0.0]);
        assert_eq!(Real::min(b, a).partials(), &[0.0, 1.0]);
    }

    #[test]
    fn constants_are_cheap_and_correct() {
        let x = d(2.0, 0);
        let c = Dual::constant(10.0);
        let f = c * x + c;
        assert_eq!(f.value(), 30.0);
        assert_eq!(f.partials(), &[10.0, 0.0]);
    }
}
