//! Symbol literal format used by configuration files.
//!
//! A symbol is a JSON list of records
//! `{"exponents": [..], "re": .., "im": .., "hbar_grade": k}` where `im` and
//! `hbar_grade` default to zero. Exponents follow the canonical ordering
//! `(p_1, …, p_n, x_1, …, x_n)`, and a record with `hbar_grade = k`
//! contributes to the coefficient of `ħ^k / k!`. Repeated records are summed.
//! The canonical encoding lists records sorted by grade, then exponents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GradedSymbol, MultiIndex, Poly, PolySymbol};
use crate::phasespace::PhaseDim;
use crate::{Error, Result, C64};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolTerm {
    pub exponents: Vec<u32>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
    #[serde(default)]
    pub hbar_grade: u32,
}

/// Parses a literal; the mode count is taken from the exponent length.
pub fn symbol_from_literal(terms: &[SymbolTerm]) -> Result<GradedSymbol> {
    let first = terms
        .first()
        .ok_or_else(|| Error::InvalidArgument("symbol literal has no terms".into()))?;
    let dim = PhaseDim::from_len(first.exponents.len())?;
    let mut grades: BTreeMap<u32, Poly> = BTreeMap::new();
    for t in terms {
        if t.exponents.len() != dim.len() {
            return Err(Error::DimensionMismatch {
                expected: dim.len(),
                found: t.exponents.len(),
            });
        }
        if !t.re.is_finite() || !t.im.is_finite() {
            return Err(Error::InvalidArgument(
                "non-finite symbol coefficient".into(),
            ));
        }
        grades
            .entry(t.hbar_grade)
            .or_insert_with(|| Poly::zero(dim.len()))
            .add_term(MultiIndex::new(t.exponents.clone()), C64::new(t.re, t.im));
    }
    let mut symbols = BTreeMap::new();
    for (k, p) in grades {
        symbols.insert(k, PolySymbol::new(dim, p)?);
    }
    GradedSymbol::new(dim, symbols)
}

pub fn symbol_to_literal(symbol: &GradedSymbol) -> Vec<SymbolTerm> {
    let mut out = Vec::new();
    for (&k, s) in symbol.grades() {
        for (idx, c) in s.terms() {
            out.push(SymbolTerm {
                exponents: idx.as_slice().to_vec(),
                re: c.re,
                im: c.im,
                hbar_grade: k,
            });
        }
    }
    out
}
