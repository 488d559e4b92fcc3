//! Dense univariate polynomials with ascending coefficients.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn zero() -> Self {
        Poly(vec![0.0])
    }

    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    /// α + β·s
    pub fn linear(alpha: f64, beta: f64) -> Self {
        Poly(vec![alpha, beta])
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    /// Nominal degree (length − 1), trailing zeros included.
    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * s + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly::zero();
        }
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| k as f64 * c)
                .collect(),
        )
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Poly {
        let mut out = Vec::with_capacity(self.0.len() + 1);
        out.push(0.0);
        out.extend(self.0.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64));
        Poly(out)
    }

    /// ∫_a^b p(s) ds
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let anti = self.antiderivative();
        anti.eval(b) - anti.eval(a)
    }

    pub fn scale(&self, k: f64) -> Poly {
        Poly(self.0.iter().map(|c| c * k).collect())
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let (long, short) = if self.0.len() >= other.0.len() {
            (self, other)
        } else {
            (other, self)
        };
        let mut out = long.0.clone();
        for (o, c) in out.iter_mut().zip(&short.0) {
            *o += c;
        }
        Poly(out)
    }

    pub fn add_assign(&mut self, other: &Poly) {
        if other.0.len() > self.0.len() {
            self.0.resize(other.0.len(), 0.0);
        }
        for (o, c) in self.0.iter_mut().zip(&other.0) {
            *o += c;
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn powi(&self, k: usize) -> Poly {
        let mut out = Poly::constant(1.0);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    /// q(s) = p(s + delta)
    pub fn shift(&self, delta: f64) -> Poly {
        let mut c = self.0.clone();
        let n = c.len();
        if delta == 0.0 || n < 2 {
            return Poly(c);
        }
        for i in 0..n - 1 {
            for j in (i..n - 1).rev() {
                c[j] += delta * c[j + 1];
            }
        }
        Poly(c)
    }

    /// q(s) = p(k·s)
    pub fn scale_arg(&self, k: f64) -> Poly {
        let mut f = 1.0;
        Poly(
            self.0
                .iter()
                .map(|c| {
                    let out = c * f;
                    f *= k;
                    out
                })
                .collect(),
        )
    }
}

/// Binomial coefficient as a float; arguments stay tiny here.
pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
