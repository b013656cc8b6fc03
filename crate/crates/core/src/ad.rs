//! Scalar abstraction shared by plain evaluation and reverse-mode differentiation.
//!
//! Model code is written once against [`Scalar`]. Running it with `f64` gives the
//! ordinary simulation; running it with [`Var`] records every elementary operation
//! on a [`Tape`] so that [`Tape::gradient`] can sweep the adjoints backwards through
//! the whole unrolled recurrence.
//!
//! Kinks (`relu`, `min`, `max`, `abs`) take the zero subgradient at the kink.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// A value that carries no derivative information.
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn sigmoid(self) -> Self;
    fn relu(self) -> Self;

    fn min(self, other: Self) -> Self {
        if other.value() < self.value() {
            other
        } else {
            self
        }
    }

    fn max(self, other: Self) -> Self {
        if other.value() > self.value() {
            other
        } else {
            self
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    #[inline]
    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }
}

const NONE: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Append-only record of the operations performed on [`Var`]s.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push([NONE, NONE], [0.0, 0.0]);
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    #[inline]
    fn push(&self, parents: [u32; 2], partials: [f64; 2]) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NONE as usize, "tape overflow");
        nodes.push(Node { parents, partials });
        idx as u32
    }

    /// d(output)/d(wrt[i]) for every requested variable.
    pub fn gradient(&self, output: Var<'_>, wrt: &[Var<'_>]) -> Vec<f64> {
        let Some(_) = output.tape else {
            return vec![0.0; wrt.len()];
        };
        let nodes = self.nodes.borrow();
        let mut adj = vec![0.0; output.idx as usize + 1];
        adj[output.idx as usize] = 1.0;
        for i in (0..=output.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for k in 0..2 {
                let p = node.parents[k];
                if p != NONE {
                    adj[p as usize] += a * node.partials[k];
                }
            }
        }
        wrt.iter()
            .map(|v| match v.tape {
                Some(_) if (v.idx as usize) < adj.len() => adj[v.idx as usize],
                _ => 0.0,
            })
            .collect()
    }
}

/// A scalar tracked on a [`Tape`]. Constants carry no tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var({})", self.val)
    }
}

impl<'t> Var<'t> {
    #[inline]
    fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::cst(val),
            Some(t) => Var {
                tape: Some(t),
                idx: t.push([self.idx, NONE], [d, 0.0]),
                val,
            },
        }
    }

    #[inline]
    fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::cst(val),
            (Some(t), None) => Var {
                tape: Some(t),
                idx: t.push([self.idx, NONE], [da, 0.0]),
                val,
            },
            (None, Some(t)) => Var {
                tape: Some(t),
                idx: t.push([other.idx, NONE], [db, 0.0]),
                val,
            },
            (Some(t), Some(u)) => {
                debug_assert!(std::ptr::eq(t, u), "mixing tapes");
                Var {
                    tape: Some(t),
                    idx: t.push([self.idx, other.idx], [da, db]),
                    val,
                }
            }
        }
    }
}

impl Add for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl Sub for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl Mul for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl Div for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl Neg for Var<'_> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl Add<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl Sub<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl Mul<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl Div<f64> for Var<'_> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}

impl Scalar for Var<'_> {
    #[inline]
    fn cst(v: f64) -> Self {
        Var {
            tape: None,
            idx: NONE,
            val: v,
        }
    }
    #[inline]
    fn value(self) -> f64 {
        self.val
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.unary(e, e)
    }
    #[inline]
    fn tanh(self) -> Self {
        let t = self.val.tanh();
        self.unary(t, 1.0 - t * t)
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.unary(s, 0.5 / s)
    }
    #[inline]
    fn abs(self) -> Self {
        let d = if self.val > 0.0 {
            1.0
        } else if self.val < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.val.abs(), d)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.val);
        self.unary(s, s * (1.0 - s))
    }
    #[inline]
    fn relu(self) -> Self {
        if self.val > 0.0 {
            self
        } else {
            Var::cst(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6 * (1.0 + x.abs());
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn check_unary<F>(f: F, x: f64)
    where
        F: for<'a> Fn(Var<'a>) -> Var<'a>,
    {
        let tape = Tape::new();
        let v = tape.var(x);
        let y = f(v);
        let g = tape.gradient(y, &[v])[0];
        let num = fd(
            |z| {
                let t = Tape::new();
                f(t.var(z)).value()
            },
            x,
        );
        assert!((g - num).abs() < 1e-6 * (1.0 + num.abs()), "{g} vs {num}");
    }

    #[test]
    fn elementary_derivatives_match_differences() {
        for &x in &[-2.3, -0.4, 0.7, 1.9] {
            check_unary(|v| v.exp(), x);
            check_unary(|v| v.tanh(), x);
            check_unary(|v| v.sigmoid(), x);
            check_unary(|v| v.abs(), x);
            check_unary(|v| v.relu(), x);
            check_unary(|v| (v * v + 1.0).sqrt(), x);
            check_unary(|v| v / (v * v + 2.0), x);
            check_unary(|v| -(v - 3.0) * 2.0, x);
        }
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = tape.var(2.0);
        let z = x * y + x * x;
        let g = tape.gradient(z, &[x, y]);
        assert_eq!(g, vec![2.0 + 6.0, 3.0]);
    }

    #[test]
    fn constants_do_not_touch_the_tape() {
        let tape = Tape::new();
        let x = tape.var(1.5);
        let c = Var::cst(2.0) * Var::cst(4.0) + 1.0;
        assert_eq!(tape.len(), 1);
        let y = x * c;
        assert_eq!(tape.gradient(y, &[x]), vec![9.0]);
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = x.relu() + x.abs();
        assert_eq!(tape.gradient(y, &[x]), vec![0.0]);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(800.0), 1.0);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
