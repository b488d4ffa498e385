//! Chemical formula parsing.
//!
//! Grammar (positions in errors are byte offsets into the input):
//!
//! ```text
//! Formula := ( Element Count? | '(' Formula ')' Count? )+
//! Element := [A-Z][a-z]?
//! Count   := [0-9]+ ( '.' [0-9]+ )?
//! ```
//!
//! Amounts are kept as exact rationals so that `SiO2` and `Si2O4` reduce to
//! the same composition.

use std::collections::BTreeMap;
use std::fmt;

use num_integer::Integer;
use num_rational::Ratio;
use serde::Serialize;
use thiserror::Error;

use super::elements::ElementTable;

pub type Amount = Ratio<i64>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("empty formula")]
    Empty,
    #[error("unknown element `{symbol}` at position {position}")]
    UnknownElement { symbol: String, position: usize },
    #[error("unbalanced parenthesis at position {position}")]
    UnbalancedParenthesis { position: usize },
    #[error("unexpected character `{found}` at position {position}")]
    UnexpectedCharacter { found: char, position: usize },
    #[error("invalid count at position {position}")]
    InvalidCount { position: usize },
}

/// Element symbol to positive amount.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Composition {
    amounts: BTreeMap<String, Amount>,
}

impl Composition {
    pub fn from_amounts(amounts: BTreeMap<String, Amount>) -> Option<Self> {
        if amounts.is_empty() || amounts.values().any(|a| *a <= Amount::from_integer(0)) {
            return None;
        }
        Some(Self { amounts })
    }

    pub fn amounts(&self) -> &BTreeMap<String, Amount> {
        &self.amounts
    }

    pub fn elements(&self) -> impl Iterator<Item = &str> {
        self.amounts.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.amounts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amounts.is_empty()
    }

    pub fn amount(&self, symbol: &str) -> Option<Amount> {
        self.amounts.get(symbol).copied()
    }

    /// Atomic fractions, in element-symbol order; they sum to one.
    pub fn weights(&self) -> Vec<(&str, f64)> {
        let total = self
            .amounts
            .values()
            .fold(Amount::from_integer(0), |acc, a| acc + a);
        self.amounts
            .iter()
            .map(|(el, a)| {
                let w = a / total;
                (el.as_str(), *w.numer() as f64 / *w.denom() as f64)
            })
            .collect()
    }

    /// Smallest integer amounts with the same element ratios.
    pub fn reduced(&self) -> BTreeMap<String, i64> {
        let lcm = self.amounts.values().fold(1i64, |acc, a| acc.lcm(a.denom()));
        let ints: Vec<i64> = self
            .amounts
            .values()
            .map(|a| (a * Amount::from_integer(lcm)).to_integer())
            .collect();
        let gcd = ints.iter().fold(0i64, |acc, v| acc.gcd(v)).max(1);
        self.amounts
            .keys()
            .cloned()
            .zip(ints.into_iter().map(|v| v / gcd))
            .collect()
    }

    /// Canonical string of the reduced composition, e.g. `O2Si1`.
    pub fn reduced_key(&self) -> String {
        self.reduced()
            .into_iter()
            .map(|(el, n)| format!("{el}{n}"))
            .collect()
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (el, a) in &self.amounts {
            if *a == Amount::from_integer(1) {
                write!(f, "{el}")?;
            } else if a.is_integer() {
                write!(f, "{el}{}", a.numer())?;
            } else {
                write!(f, "{el}{}", *a.numer() as f64 / *a.denom() as f64)?;
            }
        }
        Ok(())
    }
}

impl Serialize for Composition {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut m = s.serialize_map(Some(self.amounts.len()))?;
        for (el, a) in &self.amounts {
            m.serialize_entry(el, &(*a.numer() as f64 / *a.denom() as f64))?;
        }
        m.end()
    }
}

/// Parses against the embedded element table.
pub fn parse_formula(text: &str) -> Result<Composition, FormulaError> {
    parse_formula_with(text, ElementTable::embedded())
}

pub fn parse_formula_with(text: &str, table: &ElementTable) -> Result<Composition, FormulaError> {
    if text.trim().is_empty() {
        return Err(FormulaError::Empty);
    }
    let mut parser = Parser {
        bytes: text.as_bytes(),
        pos: 0,
        table,
    };
    let amounts = parser.group(0)?;
    if parser.pos < parser.bytes.len() {
        let ch = parser.peek().unwrap_or(b' ');
        if ch == b')' {
            return Err(FormulaError::UnbalancedParenthesis { position: parser.pos });
        }
        return Err(parser.unexpected());
    }
    Composition::from_amounts(amounts).ok_or(FormulaError::Empty)
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    table: &'a ElementTable,
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn unexpected(&self) -> FormulaError {
        let rest = std::str::from_utf8(&self.bytes[self.pos..]).unwrap_or("");
        FormulaError::UnexpectedCharacter {
            found: rest.chars().next().unwrap_or('\u{fffd}'),
            position: self.pos,
        }
    }

    /// One or more terms; stops at `)` or end of input.
    fn group(&mut self, depth: usize) -> Result<BTreeMap<String, Amount>, FormulaError> {
        let mut acc: BTreeMap<String, Amount> = BTreeMap::new();
        let start = self.pos;
        loop {
            match self.peek() {
                None | Some(b')') => break,
                Some(b'(') => {
                    let open = self.pos;
                    self.pos += 1;
                    let inner = self.group(depth + 1)?;
                    if self.peek() != Some(b')') {
                        return Err(FormulaError::UnbalancedParenthesis { position: open });
                    }
                    if inner.is_empty() {
                        return Err(FormulaError::UnexpectedCharacter {
                            found: ')',
                            position: self.pos,
                        });
                    }
                    self.pos += 1;
                    let count = self.count()?.unwrap_or_else(|| Amount::from_integer(1));
                    for (el, a) in inner {
                        *acc.entry(el).or_insert_with(|| Amount::from_integer(0)) += a * count;
                    }
                }
                Some(c) if c.is_ascii_uppercase() => {
                    let at = self.pos;
                    self.pos += 1;
                    if self.peek().is_some_and(|c| c.is_ascii_lowercase()) {
                        self.pos += 1;
                    }
                    let symbol = std::str::from_utf8(&self.bytes[at..self.pos])
                        .expect("ascii")
                        .to_string();
                    if !self.table.contains(&symbol) {
                        return Err(FormulaError::UnknownElement { symbol, position: at });
                    }
                    let count = self.count()?.unwrap_or_else(|| Amount::from_integer(1));
                    *acc.entry(symbol).or_insert_with(|| Amount::from_integer(0)) += count;
                }
                Some(_) => return Err(self.unexpected()),
            }
        }
        if self.pos == start && depth == 0 && self.peek().is_none() {
            return Err(FormulaError::Empty);
        }
        Ok(acc)
    }

    fn count(&mut self) -> Result<Option<Amount>, FormulaError> {
        let start = self.pos;
        let mut value = Amount::from_integer(0);
        let ten = Amount::from_integer(10);
        let overflow = || FormulaError::InvalidCount { position: start };
        while let Some(d) = self.peek().filter(u8::is_ascii_digit) {
            if self.pos - start >= 12 {
                return Err(overflow());
            }
            value = value * ten + Amount::from_integer(i64::from(d - b'0'));
            self.pos += 1;
        }
        if self.pos == start {
            return Ok(None);
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            let frac_start = self.pos;
            let mut scale = Amount::from_integer(1);
            while let Some(d) = self.peek().filter(u8::is_ascii_digit) {
                if self.pos - frac_start >= 9 {
                    return Err(overflow());
                }
                scale /= ten;
                value += scale * Amount::from_integer(i64::from(d - b'0'));
                self.pos += 1;
            }
            if self.pos == frac_start {
                return Err(overflow());
            }
        }
        if value <= Amount::from_integer(0) {
            return Err(overflow());
        }
        Ok(Some(value))
    }
}
