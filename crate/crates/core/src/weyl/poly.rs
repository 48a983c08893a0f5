//! Sparse multivariate polynomials with complex coefficients.
//!
//! Terms live in a `BTreeMap`, so iteration (and therefore every floating
//! point summation built on it) happens in a fixed order.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::linalg::CMat;
use crate::C64;

/// Exponent vector `α = (α_1, …, α_m)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zeros(len: usize) -> Self {
        MultiIndex(vec![0; len])
    }

    pub fn unit(len: usize, var: usize) -> Self {
        let mut e = vec![0; len];
        e[var] = 1;
        MultiIndex(e)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, var: usize) -> u32 {
        self.0[var]
    }

    pub fn plus(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `α!` as a float.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a)).product()
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

pub(crate) fn factorial(k: u32) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

/// `a (a-1) … (a-k+1)`.
pub(crate) fn falling(a: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (a - i) as f64)
}

pub(crate) fn binomial(a: u32, k: u32) -> f64 {
    falling(a, k) / factorial(k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poly {
    nvars: usize,
    terms: BTreeMap<MultiIndex, C64>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: C64) -> Self {
        let mut p = Poly::zero(nvars);
        p.add_term(MultiIndex::zeros(nvars), c);
        p
    }

    pub fn var(nvars: usize, var: usize) -> Self {
        Poly::monomial(MultiIndex::unit(nvars, var), C64::new(1.0, 0.0))
    }

    pub fn monomial(index: MultiIndex, c: C64) -> Self {
        let mut p = Poly::zero(index.len());
        p.add_term(index, c);
        p
    }

    pub fn from_terms<I: IntoIterator<Item = (MultiIndex, C64)>>(nvars: usize, terms: I) -> Self {
        let mut p = Poly::zero(nvars);
        for (idx, c) in terms {
            assert_eq!(
                idx.len(),
                nvars,
                "multi-index length must match variable count"
            );
            p.add_term(idx, c);
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &C64)> {
        self.terms.iter()
    }

    pub fn coeff(&self, index: &MultiIndex) -> C64 {
        self.terms.get(index).copied().unwrap_or_default()
    }

    /// Adds `c` to the coefficient of `index`; exact zeros are not stored.
    pub fn add_term(&mut self, index: MultiIndex, c: C64) {
        if c == C64::default() {
            return;
        }
        match self.terms.entry(index) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let v = *e.get() + c;
                if v == C64::default() {
                    e.remove();
                } else {
                    *e.get_mut() = v;
                }
            }
        }
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(MultiIndex::degree).max().unwrap_or(0)
    }

    pub fn constant_term(&self) -> C64 {
        self.coeff(&MultiIndex::zeros(self.nvars))
    }

    pub fn is_real(&self) -> bool {
        self.terms.values().all(|c| c.im == 0.0)
    }

    pub fn scale(&self, s: C64) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (idx, c) in &self.terms {
            out.add_term(idx.clone(), c * s);
        }
        out
    }

    pub fn map_coeffs(&self, f: impl Fn(C64) -> C64) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (idx, c) in &self.terms {
            out.add_term(idx.clone(), f(*c));
        }
        out
    }

    /// Largest coefficient modulus.
    pub fn max_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |acc, c| acc.max(c.norm()))
    }

    /// `∂/∂z_var`.
    pub fn derivative(&self, var: usize) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (idx, c) in &self.terms {
            let a = idx.get(var);
            if a == 0 {
                continue;
            }
            let mut e = idx.as_slice().to_vec();
            e[var] -= 1;
            out.add_term(MultiIndex(e), c * a as f64);
        }
        out
    }

    pub fn eval(&self, z: &[C64]) -> C64 {
        assert_eq!(z.len(), self.nvars);
        let mut total = C64::default();
        for (idx, c) in &self.terms {
            let mut term = *c;
            for (zi, &a) in z.iter().zip(idx.as_slice()) {
                if a > 0 {
                    term *= zi.powu(a);
                }
            }
            total += term;
        }
        total
    }

    pub fn eval_real(&self, z: &[f64]) -> C64 {
        let zc: Vec<C64> = z.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.eval(&zc)
    }

    /// Re-expand around `point`: returns `P` with `P(δ) = self(point + δ)`.
    pub fn shift(&self, point: &[C64]) -> Poly {
        assert_eq!(point.len(), self.nvars);
        let mut out = Poly::zero(self.nvars);
        for (idx, c) in &self.terms {
            // expand ∏ (point_i + δ_i)^{α_i} one variable at a time
            let mut partial: Vec<(Vec<u32>, C64)> = vec![(vec![0; self.nvars], *c)];
            for (var, &a) in idx.as_slice().iter().enumerate() {
                if a == 0 {
                    continue;
                }
                let base = point[var];
                let mut next = Vec::with_capacity(partial.len() * (a as usize + 1));
                for (e, v) in &partial {
                    for k in 0..=a {
                        let w = base.powu(a - k) * binomial(a, k);
                        if w == C64::default() {
                            continue;
                        }
                        let mut e2 = e.clone();
                        e2[var] = k;
                        next.push((e2, v * w));
                    }
                }
                partial = next;
            }
            for (e, v) in partial {
                out.add_term(MultiIndex(e), v);
            }
        }
        out
    }

    pub fn shift_real(&self, point: &[f64]) -> Poly {
        let pc: Vec<C64> = point.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.shift(&pc)
    }

    /// Place this polynomial's variables at `offset..offset + nvars` of a
    /// larger variable set.
    pub fn embed(&self, total: usize, offset: usize) -> Poly {
        assert!(offset + self.nvars <= total);
        let mut out = Poly::zero(total);
        for (idx, c) in &self.terms {
            let mut e = vec![0; total];
            e[offset..offset + self.nvars].copy_from_slice(idx.as_slice());
            out.add_term(MultiIndex(e), *c);
        }
        out
    }

    /// Applies `Σ_{μν} A_μν ∂_μ ∂_ν`; only the symmetric part of `A` matters.
    pub fn second_order(&self, a: &CMat) -> Poly {
        assert_eq!(a.nrows(), self.nvars);
        assert_eq!(a.ncols(), self.nvars);
        let n = self.nvars;
        let mut out = Poly::zero(n);
        for (idx, c) in &self.terms {
            if idx.degree() < 2 {
                continue;
            }
            let e = idx.as_slice();
            for mu in 0..n {
                if e[mu] == 0 {
                    continue;
                }
                for nu in mu..n {
                    let w = if mu == nu {
                        if e[mu] < 2 {
                            continue;
                        }
                        a[(mu, mu)] * (e[mu] * (e[mu] - 1)) as f64
                    } else {
                        if e[nu] == 0 {
                            continue;
                        }
                        (a[(mu, nu)] + a[(nu, mu)]) * (e[mu] * e[nu]) as f64
                    };
                    if w == C64::default() {
                        continue;
                    }
                    let mut e2 = e.to_vec();
                    e2[mu] -= 1;
                    e2[nu] -= 1;
                    out.add_term(MultiIndex(e2), c * w);
                }
            }
        }
        out
    }

    /// `[exp(½ ∇ᵀA∇) P](0)`: the series terminates after `degree/2` steps.
    pub fn gaussian_contract(&self, a: &CMat) -> C64 {
        let half = a * C64::new(0.5, 0.0);
        let mut current = self.clone();
        let mut total = current.constant_term();
        let mut k = 1;
        while current.degree() >= 2 {
            current = current
                .second_order(&half)
                .scale(C64::new(1.0 / k as f64, 0.0));
            total += current.constant_term();
            k += 1;
        }
        total
    }

    /// Keeps only the terms of total degree at most `max_degree`.
    pub fn truncate(&self, max_degree: u32) -> Poly {
        let mut out = Poly::zero(self.nvars);
        for (idx, c) in &self.terms {
            if idx.degree() <= max_degree {
                out.add_term(idx.clone(), *c);
            }
        }
        out
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (idx, c) in &rhs.terms {
            out.add_term(idx.clone(), *c);
        }
        out
    }
}

impl Sub for &Poly {
    type Output = Poly;
    fn sub(self, rhs: &Poly) -> Poly {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (idx, c) in &rhs.terms {
            out.add_term(idx.clone(), -c);
        }
        out
    }
}

impl Neg for &Poly {
    type Output = Poly;
    fn neg(self) -> Poly {
        self.scale(C64::new(-1.0, 0.0))
    }
}

/// Pointwise (commutative) product.
impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Poly::zero(self.nvars);
        for (ia, ca) in &self.terms {
            for (ib, cb) in &rhs.terms {
                out.add_term(ia.plus(ib), ca * cb);
            }
        }
        out
    }
}

impl fmt::Display for Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (idx, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({c})")?;
            for (var, &a) in idx.as_slice().iter().enumerate() {
                match a {
                    0 => {}
                    1 => write!(f, "·z{var}")?,
                    _ => write!(f, "·z{var}^{a}")?,
                }
            }
        }
        Ok(())
    }
}
