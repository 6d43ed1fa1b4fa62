//! Recursive-descent parser for coefficient expressions.
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := "-" factor | base ("^" factor)?
//! base   := number | ident | ident "(" expr ")" | "(" expr ")"
//! ident  := "x"<digits> | "t" | "sin" | "cos" | "exp" | "log" | "sqrt" | "abs"
//! ```

use super::{BinaryOp, ExprError, Node, UnaryOp};

pub(super) struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    pub(super) fn new(src: &'a str, dim: usize) -> Self {
        Self {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            dim,
        }
    }

    pub(super) fn parse(mut self) -> Result<Node, ExprError> {
        let node = self.expr()?;
        self.skip_ws();
        if self.pos < self.bytes.len() {
            return Err(self.syntax("unexpected trailing input"));
        }
        Ok(node)
    }

    fn syntax(&self, message: &str) -> ExprError {
        ExprError::Syntax {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.factor()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Node, ExprError> {
        if self.eat(b'-') {
            let inner = self.factor()?;
            return Ok(Node::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        let base = self.base()?;
        if self.eat(b'^') {
            // right-associative: the exponent is itself a factor
            let exponent = self.factor()?;
            return Ok(Node::Binary(
                BinaryOp::Pow,
                Box::new(base),
                Box::new(exponent),
            ));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            None => Err(self.syntax("unexpected end of input")),
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.syntax("expected ')'"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            Some(_) => Err(self.syntax("unexpected character")),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            let s = p.pos;
            while p.pos < p.bytes.len() && p.bytes[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
            p.pos - s
        };
        let mut n = digits(self);
        if self.bytes.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            self.pos = start;
            return Err(self.syntax("malformed number"));
        }
        if matches!(self.bytes.get(self.pos), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.bytes.get(self.pos), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = mark;
                return Err(self.syntax("malformed exponent"));
            }
        }
        let text = &self.src[start..self.pos];
        text.parse::<f64>()
            .map(Node::Const)
            .map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number '{text}'"),
            })
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        let func = match name {
            "sin" => Some(UnaryOp::Sin),
            "cos" => Some(UnaryOp::Cos),
            "exp" => Some(UnaryOp::Exp),
            "log" => Some(UnaryOp::Log),
            "sqrt" => Some(UnaryOp::Sqrt),
            "abs" => Some(UnaryOp::Abs),
            _ => None,
        };
        if let Some(op) = func {
            if !self.eat(b'(') {
                return Err(self.syntax(&format!("expected '(' after '{name}'")));
            }
            let arg = self.expr()?;
            if !self.eat(b')') {
                return Err(self.syntax("expected ')'"));
            }
            return Ok(Node::Unary(op, Box::new(arg)));
        }
        if name == "t" {
            return Ok(Node::Var(self.dim));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                let index: usize = digits.parse().map_err(|_| ExprError::VariableOutOfRange {
                    name: name.to_string(),
                    dim: self.dim,
                    offset: start,
                })?;
                if index == 0 || index > self.dim {
                    return Err(ExprError::VariableOutOfRange {
                        name: name.to_string(),
                        dim: self.dim,
                        offset: start,
                    });
                }
                return Ok(Node::Var(index - 1));
            }
        }
        Err(ExprError::UnknownIdentifier {
            name: name.to_string(),
            offset: start,
        })
    }
}
