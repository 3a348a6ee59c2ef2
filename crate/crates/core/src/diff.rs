//! Reverse-mode scalar differentiation on an append-only tape.
//!
//! Every loss in this crate is written once, generically over [`Scalar`], and
//! evaluated either on plain `f64` or on tape-backed [`Var`]s. A [`Var`] that
//! is not attached to a tape is a folded constant: arithmetic between
//! constants never touches the tape, so only quantities that depend on a leaf
//! are recorded.
//!
//! ```
//! use ugcl::diff::{Scalar, Tape};
//!
//! let tape = Tape::new();
//! let a = tape.var(2.0);
//! let b = tape.var(3.0);
//! let f = a * b + a.sin();
//! let grads = tape.backward(f);
//! assert!((grads.wrt(a) - (3.0 + 2f64.cos())).abs() < 1e-15);
//! assert_eq!(grads.wrt(b), 2.0);
//! ```

use std::cell::{Cell, RefCell};
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

/// Smallest denominator magnitude accepted by [`Op::Div`].
pub const MIN_DIVISOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum DiffError {
    #[error("division by a denominator of magnitude {0:e}")]
    DivisionByZero(f64),
    #[error("operation {op:?} takes {expected} argument(s), got {got}")]
    Arity { op: Op, expected: usize, got: usize },
    #[error("arguments were recorded on a different tape")]
    ForeignTape,
}

/// Elementary operations the tape can record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Sin,
    Cos,
    Abs,
    Sigmoid,
    Sqrt,
}

impl Op {
    pub fn arity(self) -> usize {
        match self {
            Op::Add | Op::Sub | Op::Mul | Op::Div => 2,
            Op::Sin | Op::Cos | Op::Abs | Op::Sigmoid | Op::Sqrt => 1,
        }
    }

    fn eval_binary(self, a: f64, b: f64) -> Result<(f64, [f64; 2]), DiffError> {
        Ok(match self {
            Op::Add => (a + b, [1.0, 1.0]),
            Op::Sub => (a - b, [1.0, -1.0]),
            Op::Mul => (a * b, [b, a]),
            Op::Div => {
                if b.abs() < MIN_DIVISOR {
                    return Err(DiffError::DivisionByZero(b));
                }
                let q = a / b;
                (q, [1.0 / b, -q / b])
            }
            _ => unreachable!("unary op evaluated as binary"),
        })
    }

    fn eval_unary(self, a: f64) -> (f64, f64) {
        match self {
            Op::Sin => (a.sin(), a.cos()),
            Op::Cos => (a.cos(), -a.sin()),
            // subgradient 0 at the kink
            Op::Abs => (a.abs(), sign_or_zero(a)),
            Op::Sigmoid => {
                let s = sigmoid(a);
                (s, s * (1.0 - s))
            }
            Op::Sqrt => {
                let r = a.sqrt();
                // sqrt(0) has an infinite slope; treat it as a kink like abs
                (r, if r > 0.0 { 0.5 / r } else { 0.0 })
            }
            _ => unreachable!("binary op evaluated as unary"),
        }
    }
}

fn sign_or_zero(a: f64) -> f64 {
    if a > 0.0 {
        1.0
    } else if a < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Identifier of a leaf (independent variable) on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafId(pub u32);

#[derive(Debug, Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
    arity: u8,
}

#[derive(Default)]
struct Nodes {
    values: Vec<f64>,
    nodes: Vec<Node>,
    leaves: Vec<u32>,
    abs_args: Vec<f64>,
}

/// Append-only record of a scalar computation.
///
/// Parents always precede children, so a single reverse sweep computes all
/// adjoints. [`Tape::reset`] clears the record but keeps its allocations.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Nodes>,
    fault: Cell<Option<DiffError>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(nodes: usize) -> Self {
        let tape = Self::default();
        {
            let mut inner = tape.inner.borrow_mut();
            inner.values.reserve(nodes);
            inner.nodes.reserve(nodes);
        }
        tape
    }

    /// Records an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let index = inner.values.len() as u32;
        inner.values.push(value);
        inner.nodes.push(Node {
            parents: [0; 2],
            partials: [0.0; 2],
            arity: 0,
        });
        inner.leaves.push(index);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    /// Records `op` applied to `args`.
    ///
    /// Constant arguments (not attached to any tape) are folded into the
    /// local partials; if every argument is constant the result is a constant
    /// and nothing is recorded.
    pub fn record<'t>(&'t self, op: Op, args: &[Var<'t>]) -> Result<Var<'t>, DiffError> {
        if args.len() != op.arity() {
            return Err(DiffError::Arity {
                op,
                expected: op.arity(),
                got: args.len(),
            });
        }
        for a in args {
            if let Some(t) = a.tape {
                if !std::ptr::eq(t, self) {
                    return Err(DiffError::ForeignTape);
                }
            }
        }
        if op.arity() == 1 {
            let a = args[0];
            let (value, d) = op.eval_unary(a.value);
            if op == Op::Abs && a.tape.is_some() {
                self.inner.borrow_mut().abs_args.push(a.value);
            }
            Ok(match a.tape {
                None => Var::constant(value),
                Some(_) => self.push(value, &[(a.index, d)]),
            })
        } else {
            let (a, b) = (args[0], args[1]);
            let (value, [da, db]) = op.eval_binary(a.value, b.value)?;
            Ok(match (a.tape, b.tape) {
                (None, None) => Var::constant(value),
                (Some(_), None) => self.push(value, &[(a.index, da)]),
                (None, Some(_)) => self.push(value, &[(b.index, db)]),
                (Some(_), Some(_)) => self.push(value, &[(a.index, da), (b.index, db)]),
            })
        }
    }

    fn push(&self, value: f64, parents: &[(u32, f64)]) -> Var<'_> {
        let mut node = Node {
            parents: [0; 2],
            partials: [0.0; 2],
            arity: parents.len() as u8,
        };
        for (slot, &(p, d)) in parents.iter().enumerate() {
            node.parents[slot] = p;
            node.partials[slot] = d;
        }
        let mut inner = self.inner.borrow_mut();
        let index = inner.values.len() as u32;
        inner.values.push(value);
        inner.nodes.push(node);
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    /// Operator-overload entry point: a failing op marks the tape faulted and
    /// yields NaN instead of panicking.
    fn record_or_fault<'t>(&'t self, op: Op, args: &[Var<'t>]) -> Var<'t> {
        match self.record(op, args) {
            Ok(v) => v,
            Err(e) => {
                if self.fault.get().is_none() {
                    self.fault.set(Some(e));
                }
                self.push(f64::NAN, &[])
            }
        }
    }

    /// First error raised by an overloaded operator since the last reset.
    pub fn fault(&self) -> Option<DiffError> {
        self.fault.get()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf_count(&self) -> usize {
        self.inner.borrow().leaves.len()
    }

    /// Arguments of every recorded `abs`, in recording order.
    pub fn abs_arguments(&self) -> Vec<f64> {
        self.inner.borrow().abs_args.clone()
    }

    /// Clears all nodes. Requires exclusive access, so no [`Var`] can outlive it.
    pub fn reset(&mut self) {
        let inner = self.inner.get_mut();
        inner.values.clear();
        inner.nodes.clear();
        inner.leaves.clear();
        inner.abs_args.clear();
        self.fault.set(None);
    }

    /// Reverse sweep from `seed`. Constants yield an all-zero gradient.
    pub fn backward(&self, seed: Var<'_>) -> Gradients {
        let inner = self.inner.borrow();
        let mut adjoints = vec![0.0; inner.values.len()];
        if seed.tape.is_some() {
            adjoints[seed.index as usize] = 1.0;
            for i in (0..=seed.index as usize).rev() {
                let adj = adjoints[i];
                if adj == 0.0 {
                    continue;
                }
                let node = inner.nodes[i];
                for slot in 0..node.arity as usize {
                    adjoints[node.parents[slot] as usize] += adj * node.partials[slot];
                }
            }
        }
        Gradients {
            adjoints,
            leaves: inner.leaves.clone(),
        }
    }

    /// Whether `node` has a recorded path back to `leaf`.
    pub fn depends_on(&self, node: Var<'_>, leaf: Var<'_>) -> bool {
        let (Some(_), Some(_)) = (node.tape, leaf.tape) else {
            return false;
        };
        if leaf.index > node.index {
            return false;
        }
        let inner = self.inner.borrow();
        let mut reach = vec![false; node.index as usize + 1];
        reach[node.index as usize] = true;
        for i in (leaf.index as usize..=node.index as usize).rev() {
            if !reach[i] {
                continue;
            }
            if i == leaf.index as usize {
                return true;
            }
            let n = inner.nodes[i];
            for slot in 0..n.arity as usize {
                reach[n.parents[slot] as usize] = true;
            }
        }
        false
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("leaves", &self.leaf_count())
            .finish()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
    leaves: Vec<u32>,
}

impl Gradients {
    /// Derivative of the seed with respect to `v` (zero for constants).
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        match v.tape {
            Some(_) => self.adjoints[v.index as usize],
            None => 0.0,
        }
    }

    /// Leaf adjoints keyed by leaf id, in creation order.
    pub fn leaves(&self) -> Vec<(LeafId, f64)> {
        self.leaves
            .iter()
            .map(|&i| (LeafId(i), self.adjoints[i as usize]))
            .collect()
    }
}

/// A value on a [`Tape`], or a folded constant.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: u32,
    value: f64,
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            index: 0,
            value,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    pub fn leaf_id(&self) -> Option<LeafId> {
        self.tape.map(|_| LeafId(self.index))
    }

    fn binary(self, other: Self, op: Op) -> Self {
        match self.tape.or(other.tape) {
            Some(tape) => tape.record_or_fault(op, &[self, other]),
            None => {
                // both constant: plain f64 semantics, matching the f64 path
                let value = match op {
                    Op::Add => self.value + other.value,
                    Op::Sub => self.value - other.value,
                    Op::Mul => self.value * other.value,
                    Op::Div => self.value / other.value,
                    _ => unreachable!(),
                };
                Var::constant(value)
            }
        }
    }

    fn unary(self, op: Op) -> Self {
        match self.tape {
            Some(tape) => tape.record_or_fault(op, &[self]),
            None => Var::constant(op.eval_unary(self.value).0),
        }
    }
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var(#{}: {})", self.index, self.value),
            None => write!(f, "Const({})", self.value),
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Add)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Sub)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Mul)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self.binary(rhs, Op::Div)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        // (-1)·x is exact and keeps the sign of zero, like f64 negation
        self * Var::constant(-1.0)
    }
}

/// Real-number interface shared by `f64` and [`Var`].
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;

    /// tanh(x) = 2σ(2x) − 1
    fn tanh(self) -> Self {
        let two = Self::cst(2.0);
        two * (two * self).sigmoid() - Self::cst(1.0)
    }
}

impl Scalar for f64 {
    fn cst(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
}

impl<'t> Scalar for Var<'t> {
    fn cst(v: f64) -> Self {
        Var::constant(v)
    }
    fn value(self) -> f64 {
        self.value
    }
    fn sin(self) -> Self {
        self.unary(Op::Sin)
    }
    fn cos(self) -> Self {
        self.unary(Op::Cos)
    }
    fn abs(self) -> Self {
        self.unary(Op::Abs)
    }
    fn sqrt(self) -> Self {
        self.unary(Op::Sqrt)
    }
    fn sigmoid(self) -> Self {
        self.unary(Op::Sigmoid)
    }
}

/// Sum of a slice, left to right.
pub fn sum<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::cst(0.0), |acc, &x| acc + x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mul_records_product_rule_partials() {
        let tape = Tape::new();
        let a = tape.var(3.0);
        let b = tape.var(4.0);
        let c = tape.record(Op::Mul, &[a, b]).unwrap();
        assert_eq!(c.value(), 12.0);
        let g = tape.backward(c);
        assert_eq!(g.wrt(a), 4.0);
        assert_eq!(g.wrt(b), 3.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let s = tape.record(Op::Sigmoid, &[x]).unwrap();
        assert_eq!(s.value(), 0.5);
        assert_eq!(tape.backward(s).wrt(x), 0.25);
    }

    #[test]
    fn abs_of_negative() {
        let tape = Tape::new();
        let x = tape.var(-2.0);
        let y = x.abs();
        assert_eq!(y.value(), 2.0);
        assert_eq!(tape.backward(y).wrt(x), -1.0);
    }

    #[test]
    fn abs_kink_has_zero_subgradient() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = x.abs();
        assert_eq!(tape.backward(y).wrt(x), 0.0);
        assert_eq!(tape.abs_arguments(), vec![0.0]);
    }

    #[test]
    fn sqrt_at_zero_is_finite() {
        let tape = Tape::new();
        let x = tape.var(0.0);
        let y = (x * x).sqrt();
        let g = tape.backward(y).wrt(x);
        assert_eq!(g, 0.0);
    }

    #[test]
    fn hand_chain_rule() {
        let tape = Tape::new();
        let a = tape.var(2.0);
        let b = tape.var(3.0);
        let f = a * b + a.sin();
        let g = tape.backward(f);
        assert_eq!(g.wrt(a), 3.0 + 2f64.cos());
        assert_eq!(g.wrt(b), 2.0);
    }

    #[test]
    fn identity_gradient() {
        let tape = Tape::new();
        let a = tape.var(5.0);
        assert_eq!(tape.backward(a).wrt(a), 1.0);
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let z = tape.var(0.0);
        assert_eq!(
            tape.record(Op::Div, &[a, z]).unwrap_err(),
            DiffError::DivisionByZero(0.0)
        );
        // operator form faults the tape instead
        let q = a / z;
        assert!(q.value().is_nan());
        assert!(matches!(tape.fault(), Some(DiffError::DivisionByZero(_))));
    }

    #[test]
    fn arity_is_checked() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        assert!(matches!(
            tape.record(Op::Sin, &[a, a]),
            Err(DiffError::Arity { expected: 1, got: 2, .. })
        ));
    }

    #[test]
    fn foreign_tape_is_rejected() {
        let t1 = Tape::new();
        let t2 = Tape::new();
        let a = t1.var(1.0);
        let b = t2.var(1.0);
        assert_eq!(t1.record(Op::Add, &[a, b]).unwrap_err(), DiffError::ForeignTape);
    }

    #[test]
    fn constants_are_folded() {
        let tape = Tape::new();
        let x = tape.var(1.5);
        let k = Var::constant(2.0) * Var::constant(3.0);
        assert!(k.is_constant());
        let y = x * k;
        assert_eq!(tape.len(), 2);
        assert_eq!(tape.backward(y).wrt(x), 6.0);
    }

    #[test]
    fn tanh_matches_std() {
        for &x in &[-3.0, -0.5, 0.0, 0.25, 2.0] {
            assert!((Scalar::tanh(x) - f64::tanh(x)).abs() < 1e-15);
        }
        let tape = Tape::new();
        let x = tape.var(0.3);
        let y = Scalar::tanh(x);
        let expected = 1.0 - 0.3f64.tanh().powi(2);
        assert!((tape.backward(y).wrt(x) - expected).abs() < 1e-14);
    }

    #[test]
    fn reset_reuses_tape_deterministically() {
        let mut tape = Tape::new();
        let run = |tape: &Tape| {
            let a = tape.var(0.7);
            let b = tape.var(-1.3);
            let f = (a * b).sin() / (a.cos() + Var::constant(2.0)) + (b * b).sqrt().abs();
            let g = tape.backward(f);
            (f.value().to_bits(), g.wrt(a).to_bits(), g.wrt(b).to_bits())
        };
        let first = run(&tape);
        tape.reset();
        assert!(tape.is_empty());
        let second = run(&tape);
        assert_eq!(first, second);
    }

    #[test]
    fn leaves_are_keyed_by_id() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(2.0);
        let f = a * b;
        let leaves = tape.backward(f).leaves();
        assert_eq!(leaves, vec![(a.leaf_id().unwrap(), 2.0), (b.leaf_id().unwrap(), 1.0)]);
    }

    #[test]
    fn dependency_inspection() {
        let tape = Tape::new();
        let a = tape.var(1.0);
        let b = tape.var(2.0);
        let f = a.sin() * Var::constant(3.0);
        assert!(tape.depends_on(f, a));
        assert!(!tape.depends_on(f, b));
    }
}
