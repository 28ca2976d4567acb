//! Scalar reverse-mode automatic differentiation on a Wengert tape.
//!
//! Every arithmetic operation on a [`Var`] appends one node holding the local
//! partial derivatives with respect to its (at most two) operands. A single
//! reverse sweep from the output accumulates adjoints for every node.
//!
//! Values not created through [`Tape::var`] are constants: they carry no tape
//! reference and contribute no nodes.
//!
//! ```
//! use faitheval::toydiff::{Real, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(0.5);
//! let y = x * x + x.tanh();
//! let grads = tape.gradients(y);
//! let expected = 2.0 * 0.5 + (1.0 - 0.5f64.tanh().powi(2));
//! assert!((grads.wrt(x) - expected).abs() < 1e-15);
//! ```

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numeric type the toy models are generic over: plain `f64` for forward
/// passes and [`Var`] for recorded passes.
pub trait Real:
    Copy
    + From<f64>
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn value(&self) -> f64;
    fn tanh(self) -> Self;
    fn exp(self) -> Self;
}

impl Real for f64 {
    fn value(&self) -> f64 {
        *self
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }
}

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, Copy)]
struct Node {
    lhs: usize,
    d_lhs: f64,
    rhs: usize,
    d_rhs: f64,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(Node {
            lhs: NONE,
            d_lhs: 0.0,
            rhs: NONE,
            d_rhs: 0.0,
        });
        Var {
            tape: Some(self),
            index,
            value,
        }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Reverse sweep from `output`.
    pub fn gradients(&self, output: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut adjoints = vec![0.0; nodes.len()];
        if output.tape.is_none() {
            return Gradients { adjoints };
        }
        debug_assert!(std::ptr::eq(output.tape.unwrap(), self));
        adjoints[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            if node.lhs != NONE {
                adjoints[node.lhs] += a * node.d_lhs;
            }
            if node.rhs != NONE {
                adjoints[node.rhs] += a * node.d_rhs;
            }
        }
        Gradients { adjoints }
    }
}

/// Adjoints from one reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Gradients {
    /// Derivative of the swept output with respect to `var`; 0 for constants.
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        if var.tape.is_none() {
            0.0
        } else {
            self.adjoints[var.index]
        }
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: usize,
    value: f64,
}

impl<'t> Var<'t> {
    pub fn constant(value: f64) -> Self {
        Self {
            tape: None,
            index: NONE,
            value,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn unary(self, value: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(value),
            Some(tape) => Var {
                tape: Some(tape),
                index: tape.push(Node {
                    lhs: self.index,
                    d_lhs: d,
                    rhs: NONE,
                    d_rhs: 0.0,
                }),
                value,
            },
        }
    }

    fn binary(self, other: Self, value: f64, d_self: f64, d_other: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(value),
            (Some(_), None) => self.unary(value, d_self),
            (None, Some(_)) => other.unary(value, d_other),
            (Some(tape), Some(_)) => Var {
                tape: Some(tape),
                index: tape.push(Node {
                    lhs: self.index,
                    d_lhs: d_self,
                    rhs: other.index,
                    d_rhs: d_other,
                }),
                value,
            },
        }
    }
}

impl From<f64> for Var<'_> {
    fn from(value: f64) -> Self {
        Var::constant(value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl Real for Var<'_> {
    fn value(&self) -> f64 {
        self.value
    }

    fn tanh(self) -> Self {
        let t = self.value.tanh();
        self.unary(t, 1.0 - t * t)
    }

    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
}

/// `Σ w_i x_i + bias`, the workhorse of every dense layer.
pub fn affine<R: Real>(weights: impl IntoIterator<Item = f64>, inputs: &[R], bias: f64) -> R {
    let mut acc = R::from(bias);
    for (w, &x) in weights.into_iter().zip(inputs) {
        acc = acc + x * w;
    }
    acc
}
