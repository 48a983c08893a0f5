//! Independent reference implementations used only by the tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scqa::linalg::{RMat, RVec};
use scqa::phasespace::{standard_j, GaussianState, PhaseDim};
use scqa::weyl::{MultiIndex, Poly, PolySymbol};
use scqa::C64;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn one() -> PhaseDim {
    PhaseDim::new(1).unwrap()
}

/// `E[∏_k z_{i_k}]` by expanding around the mean and summing over perfect
/// matchings of the fluctuating factors.
pub fn isserlis(indices: &[usize], mean: &RVec, cov: &RMat) -> f64 {
    let m = indices.len();
    let mut total = 0.0;
    for mask in 0u32..(1 << m) {
        let mut fixed = 1.0;
        let mut free = Vec::new();
        for (k, &i) in indices.iter().enumerate() {
            if mask >> k & 1 == 1 {
                free.push(i);
            } else {
                fixed *= mean[i];
            }
        }
        if fixed != 0.0 {
            total += fixed * matchings(&free, cov);
        }
    }
    total
}

fn matchings(free: &[usize], cov: &RMat) -> f64 {
    if free.is_empty() {
        return 1.0;
    }
    if free.len() % 2 == 1 {
        return 0.0;
    }
    let first = free[0];
    let mut total = 0.0;
    for k in 1..free.len() {
        let rest: Vec<usize> = free[1..]
            .iter()
            .enumerate()
            .filter(|(j, _)| j + 1 != k)
            .map(|(_, &v)| v)
            .collect();
        total += cov[(first, free[k])] * matchings(&rest, cov);
    }
    total
}

/// Expands a multi-index into the list of variables it multiplies.
pub fn index_list(exponents: &[u32]) -> Vec<usize> {
    exponents
        .iter()
        .enumerate()
        .flat_map(|(v, &e)| std::iter::repeat_n(v, e as usize))
        .collect()
}

/// Moyal product through the doubled phase space: `f(z₁)g(z₂)` is acted on
/// by `Σ_k (−iħ/2)^k/k! P^k`, `P = Σ_i (∂_{p_i}¹∂_{x_i}² − ∂_{x_i}¹∂_{p_i}²)`,
/// and then restricted to `z₁ = z₂`.
pub fn moyal_brute(f: &Poly, g: &Poly, n: usize, hbar: f64) -> Poly {
    let size = 2 * n;
    let total = 2 * size;
    let mut current = &f.embed(total, 0) * &g.embed(total, size);
    let mut acc = current.clone();
    let mut k = 1;
    loop {
        let mut next = Poly::zero(total);
        for i in 0..n {
            let a = current.derivative(i).derivative(size + n + i);
            let b = current.derivative(n + i).derivative(size + i);
            next = &next + &(&a - &b);
        }
        if next.is_zero() {
            break;
        }
        next = next.scale(C64::new(0.0, -0.5 * hbar) / k as f64);
        acc = &acc + &next;
        current = next;
        k += 1;
    }
    let mut out = Poly::zero(size);
    for (idx, c) in acc.terms() {
        let e = idx.as_slice();
        let merged: Vec<u32> = (0..size).map(|v| e[v] + e[size + v]).collect();
        out.add_term(MultiIndex::new(merged), *c);
    }
    out
}

/// Signed words of the nested commutator `[[…[V_1, V_2]…], V_m]`.
pub fn nested_commutator_words(m: usize) -> Vec<(Vec<usize>, i32)> {
    let mut words: Vec<(Vec<usize>, i32)> = vec![(vec![1], 1)];
    for next in 2..=m {
        let mut expanded = Vec::new();
        for (w, s) in &words {
            let mut right = w.clone();
            right.push(next);
            expanded.push((right, *s));
            let mut left = vec![next];
            left.extend(w);
            expanded.push((left, -*s));
        }
        words = expanded;
    }
    words.sort();
    words
}

/// Random symmetric matrix with entries in `[-scale, scale]`.
pub fn random_symmetric(rng: &mut impl Rng, size: usize, scale: f64) -> RMat {
    let mut s = RMat::zeros(size, size);
    for i in 0..size {
        for j in i..size {
            let v = rng.gen_range(-scale..scale);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// `exp(JS)` for a random symmetric `S`.
pub fn random_symplectic(rng: &mut impl Rng, n: usize, scale: f64) -> RMat {
    let dim = PhaseDim::new(n).unwrap();
    let s = random_symmetric(rng, 2 * n, scale);
    (standard_j(dim).matrix() * s).exp()
}

/// Random valid Gaussian: `S (ν E) Sᵀ` with symplectic `S`, `ν ≥ ħ/2`.
pub fn random_state(rng: &mut impl Rng, n: usize, hbar: f64) -> GaussianState {
    let s = random_symplectic(rng, n, 0.4);
    let nu = 0.5 * hbar * rng.gen_range(1.0..1.6);
    let cov = &s * s.transpose() * nu;
    let cov = (&cov + cov.transpose()) * 0.5;
    let mean = RVec::from_fn(2 * n, |_, _| rng.gen_range(-0.6..0.6));
    GaussianState::new(mean, cov, hbar).unwrap()
}

/// Random real polynomial symbol with every monomial of degree ≤ `max_degree`
/// present with probability ½.
pub fn random_symbol(rng: &mut impl Rng, dim: PhaseDim, max_degree: u32) -> PolySymbol {
    let mut poly = Poly::zero(dim.len());
    for idx in monomials(dim.len(), max_degree) {
        if rng.gen_bool(0.5) {
            poly.add_term(
                MultiIndex::new(idx),
                C64::new(rng.gen_range(-1.0..1.0), 0.0),
            );
        }
    }
    PolySymbol::new(dim, poly).unwrap()
}

/// All exponent vectors in `nvars` variables of total degree ≤ `max_degree`.
pub fn monomials(nvars: usize, max_degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for _ in 0..nvars {
        let mut next = Vec::new();
        for e in &out {
            let used: u32 = e.iter().sum();
            for k in 0..=(max_degree - used) {
                let mut e2 = e.clone();
                e2.push(k);
                next.push(e2);
            }
        }
        out = next;
    }
    out
}

pub fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol
}
