//! Exact derivatives for functions built from Japanese-bracket powers.
//!
//! Every coefficient family in this crate is a finite sum of terms
//! `c · x^β · (1+|x|²)^p`. Differentiation maps this family to itself:
//!
//! ∂_i [x^β (1+|x|²)^p] = β_i x^{β−e_i} (1+|x|²)^p + 2p x^{β+e_i} (1+|x|²)^{p−1},
//!
//! so arbitrary-order partials stay closed-form. This is the cold path used
//! for decay-rate fitting; the flow right-hand sides use specialized
//! evaluators instead.

#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    coeff: f64,
    pow: [u32; 2],
    /// bracket exponent p in (1+|x|²)^p
    bexp: f64,
}

/// Finite sum of `c · x^β · (1+|x|²)^p` terms in dimension `n` (1 or 2).
#[derive(Debug, Clone)]
pub struct BracketPoly {
    n: usize,
    terms: Vec<Term>,
}

impl BracketPoly {
    pub fn zero(n: usize) -> Self {
        Self { n, terms: Vec::new() }
    }

    /// The single term `c · (1+|x|²)^p`.
    pub fn bracket_power(n: usize, c: f64, p: f64) -> Self {
        Self {
            n,
            terms: vec![Term { coeff: c, pow: [0, 0], bexp: p }],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let u = x.iter().map(|v| v * v).sum::<f64>();
        let b = 1.0 + u;
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff * b.powf(t.bexp);
            for (i, &p) in t.pow.iter().take(self.n).enumerate() {
                if p > 0 {
                    v *= x[i].powi(p as i32);
                }
            }
            acc += v;
        }
        acc
    }

    /// Partial derivative along axis `axis`.
    pub fn derivative(&self, axis: usize) -> Self {
        assert!(axis < self.n);
        let mut terms = Vec::with_capacity(self.terms.len() * 2);
        for t in &self.terms {
            if t.pow[axis] > 0 {
                let mut pow = t.pow;
                pow[axis] -= 1;
                terms.push(Term {
                    coeff: t.coeff * f64::from(t.pow[axis]),
                    pow,
                    bexp: t.bexp,
                });
            }
            if t.bexp != 0.0 {
                let mut pow = t.pow;
                pow[axis] += 1;
                terms.push(Term {
                    coeff: 2.0 * t.bexp * t.coeff,
                    pow,
                    bexp: t.bexp - 1.0,
                });
            }
        }
        let mut out = Self { n: self.n, terms };
        out.combine();
        out
    }

    /// Mixed partial ∂^α for a multi-index α (length n).
    pub fn derivative_multi(&self, alpha: &[u32]) -> Self {
        let mut out = self.clone();
        for (axis, &k) in alpha.iter().take(self.n).enumerate() {
            for _ in 0..k {
                out = out.derivative(axis);
            }
        }
        out
    }

    fn combine(&mut self) {
        self.terms.sort_by(|a, b| {
            (a.pow, a.bexp)
                .partial_cmp(&(b.pow, b.bexp))
                .unwrap()
        });
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(m) if m.pow == t.pow && m.bexp == t.bexp => m.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        self.terms = merged;
    }
}
