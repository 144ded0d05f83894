//! Elementwise scalar functions together with their derivatives of every
//! order. The tape differentiates `Unary(x, f, k)` into `Unary(x, f, k + 1)`,
//! so each function must be able to evaluate its `k`-th derivative.

use std::fmt;

/// Elementwise function applied by [`crate::Tape::unary`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Func {
    Exp,
    Cos,
    Sigmoid,
    /// `x·sigmoid(x)`.
    Silu,
    /// `x^p`; the domain is whatever `f64::powf` accepts.
    Pow(f64),
    /// Huber loss with the given transition point `delta > 0`.
    Huber(f64),
}

impl fmt::Display for Func {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Func::Exp => write!(f, "exp"),
            Func::Cos => write!(f, "cos"),
            Func::Sigmoid => write!(f, "sigmoid"),
            Func::Silu => write!(f, "silu"),
            Func::Pow(p) => write!(f, "pow({p})"),
            Func::Huber(d) => write!(f, "huber({d})"),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Coefficients (ascending powers of `s`) of the polynomial `P_n` with
/// `d^n/dx^n sigmoid(x) = P_n(sigmoid(x))`, using `ds/dx = s - s²`.
fn sigmoid_poly(order: u32) -> Vec<f64> {
    let mut p = vec![0.0, 1.0];
    for _ in 0..order {
        // derivative in s
        let dp: Vec<f64> = p
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, c)| c * i as f64)
            .collect();
        // times (s - s^2)
        let mut next = vec![0.0; dp.len() + 2];
        for (i, c) in dp.iter().enumerate() {
            next[i + 1] += c;
            next[i + 2] -= c;
        }
        p = next;
    }
    p
}

#[inline]
fn horner(coeffs: &[f64], s: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
}

/// Evaluator for one `(function, derivative order)` pair. Precomputes the
/// order-dependent constants so the per-element work stays cheap.
pub(crate) struct Evaluator {
    kind: Kind,
}

enum Kind {
    Exp,
    Cos(u32),
    Sigmoid(Vec<f64>),
    Silu {
        order: u32,
        p: Vec<f64>,
        p_prev: Vec<f64>,
    },
    Pow {
        coeff: f64,
        exponent: f64,
    },
    Huber {
        delta: f64,
        order: u32,
    },
}

impl Evaluator {
    pub(crate) fn new(func: Func, order: u32) -> Self {
        let kind = match func {
            Func::Exp => Kind::Exp,
            Func::Cos => Kind::Cos(order % 4),
            Func::Sigmoid => Kind::Sigmoid(sigmoid_poly(order)),
            Func::Silu => Kind::Silu {
                order,
                p: sigmoid_poly(order),
                p_prev: if order > 0 {
                    sigmoid_poly(order - 1)
                } else {
                    Vec::new()
                },
            },
            Func::Pow(p) => {
                let coeff = (0..order).fold(1.0, |acc, i| acc * (p - i as f64));
                Kind::Pow {
                    coeff,
                    exponent: p - order as f64,
                }
            }
            Func::Huber(delta) => Kind::Huber { delta, order },
        };
        Self { kind }
    }

    #[inline]
    pub(crate) fn eval(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Exp => x.exp(),
            Kind::Cos(k) => match k {
                0 => x.cos(),
                1 => -x.sin(),
                2 => -x.cos(),
                _ => x.sin(),
            },
            Kind::Sigmoid(p) => horner(p, sigmoid(x)),
            Kind::Silu { order, p, p_prev } => {
                let s = sigmoid(x);
                // Leibniz: (x·s)^(n) = x·s^(n) + n·s^(n-1)
                let mut v = x * horner(p, s);
                if *order > 0 {
                    v += *order as f64 * horner(p_prev, s);
                }
                v
            }
            Kind::Pow { coeff, exponent } => {
                if *coeff == 0.0 {
                    0.0
                } else {
                    coeff * x.powf(*exponent)
                }
            }
            Kind::Huber { delta, order } => {
                let a = x.abs();
                match order {
                    0 => {
                        if a <= *delta {
                            0.5 * x * x
                        } else {
                            delta * (a - 0.5 * delta)
                        }
                    }
                    1 => x.clamp(-delta, *delta),
                    2 => {
                        if a <= *delta {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    _ => 0.0,
                }
            }
        }
    }
}
