//! Polynomial Weyl-symbol algebra.
//!
//! Symbols are sparse polynomials in the canonical phase-space variables.
//! Operator products are represented by the Moyal product, which terminates
//! for polynomial arguments; Gaussian expectations are computed by applying
//! `exp(½ ∇ᵀM∇)` to the symbol re-expanded around the mean.

mod literal;
mod poly;

use std::collections::BTreeMap;

pub use literal::{symbol_from_literal, symbol_to_literal, SymbolTerm};
pub use poly::{MultiIndex, Poly};

use crate::linalg::{to_complex, CVec, RVec};
use crate::phasespace::{GaussianState, PhaseDim};
use crate::{Error, Result, C64};

use poly::{factorial, falling};

/// Products whose degree would exceed this are rejected.
pub const DEFAULT_DEGREE_CAP: u32 = 16;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Weyl symbol: a complex polynomial in `(p_1, …, p_n, x_1, …, x_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolySymbol {
    dim: PhaseDim,
    poly: Poly,
}

/// Gradient of a symbol, one entry per canonical coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector(pub Vec<PolySymbol>);

/// Hessian of a symbol; `entries[a][b]` is `∂_a ∂_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolMatrix(pub Vec<Vec<PolySymbol>>);

impl PolySymbol {
    pub fn new(dim: PhaseDim, poly: Poly) -> Result<Self> {
        if poly.nvars() != dim.len() {
            return Err(Error::DimensionMismatch {
                expected: dim.len(),
                found: poly.nvars(),
            });
        }
        let degree = poly.degree();
        if degree > DEFAULT_DEGREE_CAP {
            return Err(Error::DegreeCap {
                degree,
                cap: DEFAULT_DEGREE_CAP,
            });
        }
        Ok(PolySymbol { dim, poly })
    }

    pub fn zero(dim: PhaseDim) -> Self {
        PolySymbol {
            dim,
            poly: Poly::zero(dim.len()),
        }
    }

    pub fn constant(dim: PhaseDim, c: C64) -> Self {
        PolySymbol {
            dim,
            poly: Poly::constant(dim.len(), c),
        }
    }

    /// The coordinate `z_index` (`index < n` are momenta).
    pub fn coordinate(dim: PhaseDim, index: usize) -> Self {
        PolySymbol {
            dim,
            poly: Poly::var(dim.len(), index),
        }
    }

    pub fn p(dim: PhaseDim, mode: usize) -> Self {
        Self::coordinate(dim, dim.p(mode))
    }

    pub fn x(dim: PhaseDim, mode: usize) -> Self {
        Self::coordinate(dim, dim.x(mode))
    }

    /// Real monomial `c · z^exponents`.
    pub fn monomial(dim: PhaseDim, exponents: &[u32], c: f64) -> Result<Self> {
        if exponents.len() != dim.len() {
            return Err(Error::DimensionMismatch {
                expected: dim.len(),
                found: exponents.len(),
            });
        }
        Self::new(
            dim,
            Poly::monomial(MultiIndex::new(exponents.to_vec()), C64::new(c, 0.0)),
        )
    }

    /// Builds a real symbol from `(exponents, coefficient)` pairs.
    pub fn from_real_terms(dim: PhaseDim, terms: &[(&[u32], f64)]) -> Result<Self> {
        let mut poly = Poly::zero(dim.len());
        for (e, c) in terms {
            if e.len() != dim.len() {
                return Err(Error::DimensionMismatch {
                    expected: dim.len(),
                    found: e.len(),
                });
            }
            poly.add_term(MultiIndex::new(e.to_vec()), C64::new(*c, 0.0));
        }
        Self::new(dim, poly)
    }

    pub fn dim(&self) -> PhaseDim {
        self.dim
    }

    pub fn poly(&self) -> &Poly {
        &self.poly
    }

    pub fn degree(&self) -> u32 {
        self.poly.degree()
    }

    pub fn is_zero(&self) -> bool {
        self.poly.is_zero()
    }

    pub fn is_real(&self) -> bool {
        self.poly.is_real()
    }

    pub fn coeff(&self, exponents: &[u32]) -> C64 {
        self.poly.coeff(&MultiIndex::new(exponents.to_vec()))
    }

    pub fn terms(&self) -> impl Iterator<Item = (&MultiIndex, &C64)> {
        self.poly.terms()
    }

    pub fn eval(&self, z: &RVec) -> C64 {
        self.poly.eval_real(z.as_slice())
    }

    pub fn add(&self, other: &PolySymbol) -> Result<PolySymbol> {
        self.same_dim(other)?;
        Ok(PolySymbol {
            dim: self.dim,
            poly: &self.poly + &other.poly,
        })
    }

    pub fn sub(&self, other: &PolySymbol) -> Result<PolySymbol> {
        self.same_dim(other)?;
        Ok(PolySymbol {
            dim: self.dim,
            poly: &self.poly - &other.poly,
        })
    }

    pub fn scale(&self, s: C64) -> PolySymbol {
        PolySymbol {
            dim: self.dim,
            poly: self.poly.scale(s),
        }
    }

    /// Pointwise product (the ħ → 0 limit of the Moyal product).
    pub fn mul(&self, other: &PolySymbol) -> Result<PolySymbol> {
        self.same_dim(other)?;
        PolySymbol::new(self.dim, &self.poly * &other.poly)
    }

    /// Drops the terms above `max_degree`.
    pub fn truncate(&self, max_degree: u32) -> PolySymbol {
        PolySymbol {
            dim: self.dim,
            poly: self.poly.truncate(max_degree),
        }
    }

    fn same_dim(&self, other: &PolySymbol) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim.len(),
                found: other.dim.len(),
            });
        }
        Ok(())
    }
}

impl SymbolMatrix {
    pub fn get(&self, a: usize, b: usize) -> &PolySymbol {
        &self.0[a][b]
    }
}

pub fn gradient(a: &PolySymbol) -> SymbolVector {
    SymbolVector(
        (0..a.dim.len())
            .map(|k| PolySymbol {
                dim: a.dim,
                poly: a.poly.derivative(k),
            })
            .collect(),
    )
}

/// Exactly symmetric: each off-diagonal entry is computed once and shared.
pub fn hessian(a: &PolySymbol) -> SymbolMatrix {
    let size = a.dim.len();
    let grad = gradient(a);
    let mut rows: Vec<Vec<Option<PolySymbol>>> = vec![vec![None; size]; size];
    for i in 0..size {
        for j in i..size {
            let d = PolySymbol {
                dim: a.dim,
                poly: grad.0[i].poly.derivative(j),
            };
            rows[j][i] = Some(d.clone());
            rows[i][j] = Some(d);
        }
    }
    SymbolMatrix(
        rows.into_iter()
            .map(|r| r.into_iter().map(|v| v.expect("filled")).collect())
            .collect(),
    )
}

/// Re-expands `A` in `δq = z − point`, i.e. returns `B(δ) = A(point + δ)`.
pub fn taylor_shift(a: &PolySymbol, point: &RVec) -> Result<PolySymbol> {
    if point.len() != a.dim.len() {
        return Err(Error::DimensionMismatch {
            expected: a.dim.len(),
            found: point.len(),
        });
    }
    Ok(PolySymbol {
        dim: a.dim,
        poly: a.poly.shift_real(point.as_slice()),
    })
}

/// Groenewold series `f exp(-(iħ/2) ←∇ᵀJ→∇) g`, evaluated in closed form.
///
/// For a single mode the bidifferential operator is `←∂_p→∂_x − ←∂_x→∂_p`,
/// and different modes commute, so the exponential factorizes into a product
/// of finite sums per mode.
pub fn moyal_product(f: &PolySymbol, g: &PolySymbol, hbar: f64) -> Result<PolySymbol> {
    f.same_dim(g)?;
    let dim = f.dim;
    let degree = f.degree() + g.degree();
    if degree > DEFAULT_DEGREE_CAP && !f.is_zero() && !g.is_zero() {
        return Err(Error::DegreeCap {
            degree,
            cap: DEFAULT_DEGREE_CAP,
        });
    }
    let n = dim.modes();
    let minus = C64::new(0.0, -0.5 * hbar);
    let plus = C64::new(0.0, 0.5 * hbar);
    let mut out = Poly::zero(dim.len());
    for (ia, ca) in f.poly.terms() {
        for (ib, cb) in g.poly.terms() {
            let mut partial: Vec<(Vec<u32>, C64)> =
                vec![(ia.plus(ib).as_slice().to_vec(), ca * cb)];
            for mode in 0..n {
                let (pi, xi) = (dim.p(mode), dim.x(mode));
                let (fp, fx) = (ia.get(pi), ia.get(xi));
                let (gp, gx) = (ib.get(pi), ib.get(xi));
                let mut next = Vec::new();
                for (e, c) in &partial {
                    for a in 0..=fp.min(gx) {
                        for b in 0..=fx.min(gp) {
                            if (a > 0 || b > 0) && hbar == 0.0 {
                                continue;
                            }
                            let w = minus.powu(a)
                                * plus.powu(b)
                                * (falling(fp, a)
                                    * falling(gx, a)
                                    * falling(fx, b)
                                    * falling(gp, b)
                                    / (factorial(a) * factorial(b)));
                            let mut e2 = e.clone();
                            e2[pi] -= a + b;
                            e2[xi] -= a + b;
                            next.push((e2, c * w));
                        }
                    }
                }
                partial = next;
            }
            for (e, c) in partial {
                out.add_term(MultiIndex::new(e), c);
            }
        }
    }
    PolySymbol::new(dim, out)
}

/// Symbol of `[F, G] = FG − GF`.
pub fn commutator_symbol(f: &PolySymbol, g: &PolySymbol, hbar: f64) -> Result<PolySymbol> {
    moyal_product(f, g, hbar)?.sub(&moyal_product(g, f, hbar)?)
}

/// Symbol vector of `(q − mean) A`: `δz 𝒜 + (iħ/2) Jᵀ∇𝒜`.
pub fn bopp_delta_product(a: &PolySymbol, mean: &RVec, hbar: f64) -> Result<SymbolVector> {
    let dim = a.dim;
    if mean.len() != dim.len() {
        return Err(Error::DimensionMismatch {
            expected: dim.len(),
            found: mean.len(),
        });
    }
    let grad = gradient(a);
    let n = dim.modes();
    let mut out = Vec::with_capacity(dim.len());
    for mu in 0..dim.len() {
        let delta = PolySymbol::coordinate(dim, mu)
            .sub(&PolySymbol::constant(dim, C64::new(mean[mu], 0.0)))?;
        let mut sym = delta.mul(a)?;
        // (Jᵀ∇A)_μ = −∂_{x_i}A for μ = p_i and +∂_{p_i}A for μ = x_i
        let (k, sign) = if mu < n {
            (mu + n, -1.0)
        } else {
            (mu - n, 1.0)
        };
        sym = sym.add(&grad.0[k].scale(I * (0.5 * hbar * sign)))?;
        out.push(sym);
    }
    Ok(SymbolVector(out))
}

/// `⟨A⟩ = [exp(½∇ᵀM∇) 𝒜](⟨q⟩)`; exact for polynomial symbols.
pub fn wick_expectation(a: &PolySymbol, state: &GaussianState) -> Result<C64> {
    if state.dim() != a.dim {
        return Err(Error::DimensionMismatch {
            expected: a.dim.len(),
            found: state.dim().len(),
        });
    }
    let shifted = a.poly.shift_real(state.mean().as_slice());
    Ok(shifted.gaussian_contract(&to_complex(state.cov())))
}

/// `χ(a) = ⟨exp(aᵀq)⟩ = exp(½aᵀMa + aᵀ⟨q⟩)` for complex `a`.
pub fn char_function(state: &GaussianState, a: &CVec) -> Result<C64> {
    if a.len() != state.mean().len() {
        return Err(Error::DimensionMismatch {
            expected: state.mean().len(),
            found: a.len(),
        });
    }
    let m = to_complex(state.cov());
    let mean = crate::linalg::to_complex_vec(state.mean());
    let quad = (a.transpose() * &m * a)[(0, 0)];
    let lin = (a.transpose() * mean)[(0, 0)];
    Ok((0.5 * quad + lin).exp())
}

/// Symbol with an explicit ħ-grading `𝒜 = Σ_k ħ^k/k! a_k`, grade 0 being the
/// classical part.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedSymbol {
    dim: PhaseDim,
    grades: BTreeMap<u32, PolySymbol>,
}

impl GradedSymbol {
    pub fn new(dim: PhaseDim, grades: BTreeMap<u32, PolySymbol>) -> Result<Self> {
        for s in grades.values() {
            if s.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim.len(),
                    found: s.dim.len(),
                });
            }
        }
        let grades = grades.into_iter().filter(|(_, s)| !s.is_zero()).collect();
        Ok(GradedSymbol { dim, grades })
    }

    pub fn dim(&self) -> PhaseDim {
        self.dim
    }

    pub fn grades(&self) -> &BTreeMap<u32, PolySymbol> {
        &self.grades
    }

    /// Whether only the ħ⁰ grade is present.
    pub fn is_ungraded(&self) -> bool {
        self.grades.keys().all(|&k| k == 0)
    }

    pub fn semiclassical_eval(&self, hbar: f64) -> PolySymbol {
        let mut out = Poly::zero(self.dim.len());
        for (&k, s) in &self.grades {
            let w = hbar.powi(k as i32) / factorial(k);
            if k > 0 && w == 0.0 {
                continue;
            }
            out = &out + &s.poly.scale(C64::new(w, 0.0));
        }
        PolySymbol {
            dim: self.dim,
            poly: out,
        }
    }

    pub fn classical_part(&self) -> PolySymbol {
        self.grades
            .get(&0)
            .cloned()
            .unwrap_or_else(|| PolySymbol::zero(self.dim))
    }
}

impl From<PolySymbol> for GradedSymbol {
    fn from(s: PolySymbol) -> Self {
        let dim = s.dim;
        let mut grades = BTreeMap::new();
        if !s.is_zero() {
            grades.insert(0, s);
        }
        GradedSymbol { dim, grades }
    }
}
