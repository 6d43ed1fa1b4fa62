//! Scalar coefficient expressions over `x1..xd` and `t`.
//!
//! Expressions are parsed once into an immutable tree and evaluated
//! generically over [`Scalar`] types, so the same tree gives values, exact
//! gradients (one [`Dual`] pass per coordinate) and exact Hessians (one
//! [`HyperDual`] pass per coordinate pair, mirrored).

mod parser;
pub mod scalar;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub use scalar::{Dual, HyperDual, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier '{name}' at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },
    #[error("variable '{name}' at byte {offset} is out of range for dimension {dim}")]
    VariableOutOfRange {
        name: String,
        dim: usize,
        offset: usize,
    },
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("point has {got} coordinates, expected {expected}")]
    PointLength { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Expression tree node. `Var(i)` with `i < d` is `x{i+1}`; `Var(d)` is `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

/// A parsed expression bound to an ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    dim: usize,
    root: Node,
}

// Largest exponent magnitude handled by repeated squaring.
const MAX_INT_EXPONENT: f64 = 1_048_576.0;

impl Expr {
    pub fn parse(source: &str, dim: usize) -> Result<Self, ExprError> {
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        let root = parser::Parser::new(source, dim).parse()?;
        Ok(Self { dim, root })
    }

    /// Wrap an existing tree. Fails if a variable index exceeds `dim`.
    pub fn from_node(root: Node, dim: usize) -> Result<Self, ExprError> {
        if dim == 0 {
            return Err(ExprError::ZeroDimension);
        }
        fn check(n: &Node, dim: usize) -> Result<(), ExprError> {
            match n {
                Node::Const(_) => Ok(()),
                Node::Var(i) if *i <= dim => Ok(()),
                Node::Var(i) => Err(ExprError::VariableOutOfRange {
                    name: format!("x{}", i + 1),
                    dim,
                    offset: 0,
                }),
                Node::Unary(_, a) => check(a, dim),
                Node::Binary(_, a, b) => check(a, dim).and_then(|_| check(b, dim)),
            }
        }
        check(&root, dim)?;
        Ok(Self { dim, root })
    }

    pub fn constant(value: f64, dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            root: Node::Const(value),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// True if the expression does not reference any `x` variable.
    pub fn is_state_independent(&self) -> bool {
        fn walk(n: &Node, dim: usize) -> bool {
            match n {
                Node::Const(_) => true,
                Node::Var(i) => *i == dim,
                Node::Unary(_, a) => walk(a, dim),
                Node::Binary(_, a, b) => walk(a, dim) && walk(b, dim),
            }
        }
        walk(&self.root, self.dim)
    }

    /// Evaluate at `point = (x1, .., xd, t)`.
    pub fn eval(&self, point: &[f64]) -> Result<f64, ExprError> {
        self.check_point(point)?;
        self.eval_with(&|i| point[i])
    }

    pub fn eval_at(&self, x: &[f64], t: f64) -> Result<f64, ExprError> {
        self.check_state(x)?;
        self.eval_with(&|i| if i < self.dim { x[i] } else { t })
    }

    /// Gradient with respect to `x1..xd` at `point = (x, t)`.
    pub fn grad(&self, point: &[f64]) -> Result<DVector<f64>, ExprError> {
        self.check_point(point)?;
        self.grad_at(&point[..self.dim], point[self.dim])
    }

    pub fn grad_at(&self, x: &[f64], t: f64) -> Result<DVector<f64>, ExprError> {
        self.check_state(x)?;
        let mut g = DVector::zeros(self.dim);
        for dir in 0..self.dim {
            let v = self.eval_with(&|i| {
                let re = if i < self.dim { x[i] } else { t };
                Dual::new(re, if i == dir { 1.0 } else { 0.0 })
            })?;
            g[dir] = v.eps;
        }
        Ok(g)
    }

    /// Hessian with respect to `x1..xd`; symmetric by construction.
    pub fn hess(&self, point: &[f64]) -> Result<DMatrix<f64>, ExprError> {
        self.check_point(point)?;
        self.hess_at(&point[..self.dim], point[self.dim])
    }

    pub fn hess_at(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>, ExprError> {
        self.check_state(x)?;
        let d = self.dim;
        let mut h = DMatrix::zeros(d, d);
        for a in 0..d {
            for b in a..d {
                let v = self.eval_with(&|i| {
                    let re = if i < d { x[i] } else { t };
                    HyperDual::new(
                        re,
                        if i == a { 1.0 } else { 0.0 },
                        if i == b { 1.0 } else { 0.0 },
                        0.0,
                    )
                })?;
                h[(a, b)] = v.e12;
                h[(b, a)] = v.e12;
            }
        }
        Ok(h)
    }

    /// Evaluate over any [`Scalar`] with a variable lookup.
    pub fn eval_with<S: Scalar>(&self, var: &impl Fn(usize) -> S) -> Result<S, ExprError> {
        let v = eval_node(&self.root, var)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Domain("non-finite result"))
        }
    }

    fn check_point(&self, point: &[f64]) -> Result<(), ExprError> {
        if point.len() != self.dim + 1 {
            return Err(ExprError::PointLength {
                expected: self.dim + 1,
                got: point.len(),
            });
        }
        Ok(())
    }

    fn check_state(&self, x: &[f64]) -> Result<(), ExprError> {
        if x.len() != self.dim {
            return Err(ExprError::PointLength {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn eval_node<S: Scalar>(node: &Node, var: &impl Fn(usize) -> S) -> Result<S, ExprError> {
    Ok(match node {
        Node::Const(c) => S::constant(*c),
        Node::Var(i) => var(*i),
        Node::Unary(op, a) => {
            let a = eval_node(a, var)?;
            match op {
                UnaryOp::Neg => -a,
                UnaryOp::Sin => a.sin(),
                UnaryOp::Cos => a.cos(),
                UnaryOp::Exp => a.exp(),
                UnaryOp::Log => {
                    if a.re() <= 0.0 {
                        return Err(ExprError::Domain("log of non-positive value"));
                    }
                    a.ln()
                }
                UnaryOp::Sqrt => {
                    if a.re() < 0.0 {
                        return Err(ExprError::Domain("sqrt of negative value"));
                    }
                    a.sqrt()
                }
                UnaryOp::Abs => a.abs(),
            }
        }
        Node::Binary(op, a, b) => {
            let a = eval_node(a, var)?;
            let b = eval_node(b, var)?;
            match op {
                BinaryOp::Add => a + b,
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                BinaryOp::Div => {
                    if b.re() == 0.0 {
                        return Err(ExprError::Domain("division by zero"));
                    }
                    a / b
                }
                BinaryOp::Pow => pow(a, b)?,
            }
        }
    })
}

fn pow<S: Scalar>(base: S, exponent: S) -> Result<S, ExprError> {
    let e = exponent.re();
    if exponent.is_constant() && e.fract() == 0.0 && e.abs() <= MAX_INT_EXPONENT {
        if e < 0.0 && base.re() == 0.0 {
            return Err(ExprError::Domain("division by zero"));
        }
        return Ok(scalar::powi(base, e as i64));
    }
    if base.re() <= 0.0 {
        return Err(ExprError::Domain("non-integer power of non-positive base"));
    }
    Ok((exponent * base.ln()).exp())
}

// Fully parenthesised so that parse(print(e)) reproduces the tree exactly.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn write(n: &Node, dim: usize, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match n {
                Node::Const(c) if *c < 0.0 => write!(f, "(-{:?})", -c),
                Node::Const(c) => write!(f, "{c:?}"),
                Node::Var(i) if *i == dim => write!(f, "t"),
                Node::Var(i) => write!(f, "x{}", i + 1),
                Node::Unary(UnaryOp::Neg, a) => {
                    write!(f, "(-")?;
                    write(a, dim, f)?;
                    write!(f, ")")
                }
                Node::Unary(op, a) => {
                    let name = match op {
                        UnaryOp::Sin => "sin",
                        UnaryOp::Cos => "cos",
                        UnaryOp::Exp => "exp",
                        UnaryOp::Log => "log",
                        UnaryOp::Sqrt => "sqrt",
                        UnaryOp::Abs => "abs",
                        UnaryOp::Neg => unreachable!(),
                    };
                    write!(f, "{name}(")?;
                    write(a, dim, f)?;
                    write!(f, ")")
                }
                Node::Binary(op, a, b) => {
                    let sym = match op {
                        BinaryOp::Add => "+",
                        BinaryOp::Sub => "-",
                        BinaryOp::Mul => "*",
                        BinaryOp::Div => "/",
                        BinaryOp::Pow => "^",
                    };
                    write!(f, "(")?;
                    write(a, dim, f)?;
                    write!(f, " {sym} ")?;
                    write(b, dim, f)?;
                    write!(f, ")")
                }
            }
        }
        write(&self.root, self.dim, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn var(i: usize) -> Box<Node> {
        Box::new(Node::Var(i))
    }
    fn num(c: f64) -> Box<Node> {
        Box::new(Node::Const(c))
    }
    fn bin(op: BinaryOp, a: Box<Node>, b: Box<Node>) -> Box<Node> {
        Box::new(Node::Binary(op, a, b))
    }

    #[test]
    fn parses_circle_equation() {
        let e = Expr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        let expected = bin(
            BinaryOp::Sub,
            bin(
                BinaryOp::Add,
                bin(BinaryOp::Pow, var(0), num(2.0)),
                bin(BinaryOp::Pow, var(1), num(2.0)),
            ),
            num(1.0),
        );
        assert_eq!(e.root(), &*expected);
    }

    #[test]
    fn parses_function_call() {
        let e = Expr::parse("sin(x1)*x2", 2).unwrap();
        let expected = Node::Binary(
            BinaryOp::Mul,
            Box::new(Node::Unary(UnaryOp::Sin, var(0))),
            var(1),
        );
        assert_eq!(e.root(), &expected);
    }

    #[test]
    fn precedence_and_associativity() {
        // -x^2 is -(x^2); pow is right-associative; - and / are left-associative
        let e = Expr::parse("-x1^2", 1).unwrap();
        assert_eq!(e.eval(&[3.0, 0.0]).unwrap(), -9.0);
        let e = Expr::parse("2^3^2", 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 512.0);
        let e = Expr::parse("8/4/2 - 1 - 1", 1).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), -1.0);
        let e = Expr::parse("x1^-2", 1).unwrap();
        assert_eq!(e.eval(&[2.0, 0.0]).unwrap(), 0.25);
    }

    #[test]
    fn numbers_with_exponents() {
        let e = Expr::parse("1.5e2 + .5 + 2E-1", 1).unwrap();
        assert!((e.eval(&[0.0, 0.0]).unwrap() - 150.7).abs() < 1e-12);
    }

    #[test]
    fn variable_out_of_range() {
        assert!(matches!(
            Expr::parse("x3", 2),
            Err(ExprError::VariableOutOfRange { .. })
        ));
        assert!(matches!(
            Expr::parse("x0", 2),
            Err(ExprError::VariableOutOfRange { .. })
        ));
    }

    #[test]
    fn syntax_errors_report_offsets() {
        match Expr::parse("x1 + * 2", 1) {
            Err(ExprError::Syntax { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            Expr::parse("(x1", 1),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("x1 x1", 1),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("sin x1", 1),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("1e", 1),
            Err(ExprError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("tan(x1)", 1),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn eval_examples() {
        let circle = Expr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        assert_eq!(circle.eval(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        let e = Expr::parse("sin(x1)*x2", 2).unwrap();
        assert_eq!(e.eval(&[0.0, 2.0, 0.0]).unwrap(), 0.0);
        let q = Expr::parse("x1/x2", 2).unwrap();
        assert_eq!(
            q.eval(&[1.0, 0.0, 0.0]),
            Err(ExprError::Domain("division by zero"))
        );
        let tm = Expr::parse("t*x1", 1).unwrap();
        assert_eq!(tm.eval(&[2.0, 3.0]).unwrap(), 6.0);
    }

    #[test]
    fn domain_errors() {
        let e = Expr::parse("log(x1)", 1).unwrap();
        assert!(e.eval(&[0.0, 0.0]).is_err());
        let e = Expr::parse("sqrt(x1)", 1).unwrap();
        assert!(e.eval(&[-1.0, 0.0]).is_err());
        let e = Expr::parse("x1^0.5", 1).unwrap();
        assert!(e.eval(&[-4.0, 0.0]).is_err());
        assert_eq!(e.eval(&[4.0, 0.0]).unwrap(), 2.0);
        // integer exponent on negative base is fine
        let e = Expr::parse("x1^3", 1).unwrap();
        assert_eq!(e.eval(&[-2.0, 0.0]).unwrap(), -8.0);
    }

    #[test]
    fn gradient_examples() {
        let e = Expr::parse("sin(x1)*x2", 2).unwrap();
        let g = e.grad(&[0.0, 2.0, 0.0]).unwrap();
        assert_eq!(g.as_slice(), &[2.0, 0.0]);
        let e = Expr::parse("x1^2*x2", 2).unwrap();
        let g = e.grad(&[3.0, 4.0, 0.0]).unwrap();
        assert_eq!(g.as_slice(), &[24.0, 9.0]);
    }

    #[test]
    fn hessian_of_quadratic_is_constant() {
        let e = Expr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        for p in [[0.3, -1.2, 0.0], [5.0, 2.0, 1.0]] {
            let h = e.hess(&p).unwrap();
            assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        }
    }

    #[test]
    fn time_is_not_differentiated() {
        let e = Expr::parse("t^2*x1", 1).unwrap();
        assert_eq!(e.grad(&[1.0, 3.0]).unwrap()[0], 9.0);
        assert!(Expr::parse("t + 2", 3).unwrap().is_state_independent());
        assert!(!Expr::parse("t + x2", 3).unwrap().is_state_independent());
    }

    #[test]
    fn printer_round_trip() {
        for src in [
            "x1^2 + x2^2 - 1",
            "-x1^-2/(3 - t)",
            "sqrt(abs(x1*x2)) + exp(-t)*log(2.5e-3 + x1^2)",
            "2^3^2",
        ] {
            let e = Expr::parse(src, 2).unwrap();
            let printed = e.to_string();
            let again = Expr::parse(&printed, 2).unwrap();
            assert_eq!(e, again, "{src} -> {printed}");
        }
    }

    // Random smooth expressions over x1..x3 whose domain is all of R^3.
    fn smooth_expr() -> impl Strategy<Value = Node> {
        let leaf = prop_oneof![
            (-3.0..3.0f64).prop_map(Node::Const),
            (0usize..3).prop_map(Node::Var),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Binary(
                    BinaryOp::Add,
                    Box::new(a),
                    Box::new(b)
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Binary(
                    BinaryOp::Sub,
                    Box::new(a),
                    Box::new(b)
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Node::Binary(
                    BinaryOp::Mul,
                    Box::new(a),
                    Box::new(b)
                )),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| {
                    // a / (1 + b^2) never divides by zero
                    let den = Node::Binary(
                        BinaryOp::Add,
                        Box::new(Node::Const(1.0)),
                        Box::new(Node::Binary(
                            BinaryOp::Pow,
                            Box::new(b),
                            Box::new(Node::Const(2.0)),
                        )),
                    );
                    Node::Binary(BinaryOp::Div, Box::new(a), Box::new(den))
                }),
                (inner.clone(), 2i32..4).prop_map(|(a, k)| Node::Binary(
                    BinaryOp::Pow,
                    Box::new(a),
                    Box::new(Node::Const(k as f64))
                )),
                inner
                    .clone()
                    .prop_map(|a| Node::Unary(UnaryOp::Sin, Box::new(a))),
                inner
                    .clone()
                    .prop_map(|a| Node::Unary(UnaryOp::Cos, Box::new(a))),
                inner
                    .clone()
                    .prop_map(|a| Node::Unary(UnaryOp::Neg, Box::new(a))),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hessian_is_exactly_symmetric(node in smooth_expr(),
                                        x in proptest::array::uniform3(-1.5..1.5f64)) {
            let e = Expr::from_node(node, 3).unwrap();
            if let Ok(h) = e.hess_at(&x, 0.3) {
                for a in 0..3 {
                    for b in 0..3 {
                        prop_assert_eq!(h[(a, b)].to_bits(), h[(b, a)].to_bits());
                    }
                }
            }
        }

        #[test]
        fn print_parse_is_idempotent(node in smooth_expr()) {
            let e = Expr::from_node(node, 3).unwrap();
            let once = Expr::parse(&e.to_string(), 3).unwrap();
            let twice = Expr::parse(&once.to_string(), 3).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
