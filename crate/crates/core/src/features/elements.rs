//! Embedded elemental property table (elements 1-94).

use std::collections::BTreeMap;
use std::io::Read;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EMBEDDED_TABLE: &str = include_str!("../../resources/elements.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementProps {
    pub symbol: String,
    /// Pauling electronegativity; `None` for the light noble gases.
    pub chi: Option<f64>,
    pub radius_pm: f64,
    pub ns: f64,
    pub np: f64,
    pub nd: f64,
    pub nf: f64,
}

impl ElementProps {
    pub fn valence_total(&self) -> f64 {
        self.ns + self.np + self.nd + self.nf
    }

    /// Share of the valence electrons in each of s, p, d, f.
    pub fn valence_fractions(&self) -> [f64; 4] {
        let total = self.valence_total();
        if total <= 0.0 {
            return [0.0; 4];
        }
        [self.ns / total, self.np / total, self.nd / total, self.nf / total]
    }

    pub fn get(&self, property: ElementProperty) -> Option<f64> {
        match property {
            ElementProperty::Electronegativity => self.chi,
            ElementProperty::CovalentRadius => Some(self.radius_pm),
            ElementProperty::ValenceS => Some(self.ns),
            ElementProperty::ValenceP => Some(self.np),
            ElementProperty::ValenceD => Some(self.nd),
            ElementProperty::ValenceF => Some(self.nf),
        }
    }
}

/// Per-element quantity usable by the elemental statistics featurizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ElementProperty {
    #[serde(rename = "chi")]
    Electronegativity,
    #[serde(rename = "radius_pm")]
    CovalentRadius,
    #[serde(rename = "ns")]
    ValenceS,
    #[serde(rename = "np")]
    ValenceP,
    #[serde(rename = "nd")]
    ValenceD,
    #[serde(rename = "nf")]
    ValenceF,
}

impl ElementProperty {
    pub const ALL: [ElementProperty; 6] = [
        ElementProperty::Electronegativity,
        ElementProperty::CovalentRadius,
        ElementProperty::ValenceS,
        ElementProperty::ValenceP,
        ElementProperty::ValenceD,
        ElementProperty::ValenceF,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ElementProperty::Electronegativity => "chi",
            ElementProperty::CovalentRadius => "radius_pm",
            ElementProperty::ValenceS => "ns",
            ElementProperty::ValenceP => "np",
            ElementProperty::ValenceD => "nd",
            ElementProperty::ValenceF => "nf",
        }
    }
}

#[derive(Debug, Deserialize)]
struct TableRow {
    symbol: String,
    chi: Option<f64>,
    radius_pm: f64,
    ns: f64,
    np: f64,
    nd: f64,
    nf: f64,
}

#[derive(Debug, Clone)]
pub struct ElementTable {
    elements: BTreeMap<String, ElementProps>,
}

impl ElementTable {
    /// The table shipped with the crate.
    pub fn embedded() -> &'static ElementTable {
        static TABLE: OnceLock<ElementTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            ElementTable::from_csv(EMBEDDED_TABLE.as_bytes()).expect("embedded element table is valid")
        })
    }

    /// Reads `symbol,chi,radius_pm,ns,np,nd,nf` rows; `#` lines are comments.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut elements = BTreeMap::new();
        for row in rdr.deserialize::<TableRow>() {
            let row = row?;
            if row.radius_pm <= 0.0 || row.chi.is_some_and(|c| c <= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "element {} has a non-positive property",
                    row.symbol
                )));
            }
            if [row.ns, row.np, row.nd, row.nf].iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "element {} has a negative valence count",
                    row.symbol
                )));
            }
            let props = ElementProps {
                symbol: row.symbol.clone(),
                chi: row.chi,
                radius_pm: row.radius_pm,
                ns: row.ns,
                np: row.np,
                nd: row.nd,
                nf: row.nf,
            };
            if elements.insert(row.symbol.clone(), props).is_some() {
                return Err(Error::InvalidInput(format!("element {} listed twice", row.symbol)));
            }
        }
        Ok(Self { elements })
    }

    pub fn get(&self, symbol: &str) -> Option<&ElementProps> {
        self.elements.get(symbol)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.elements.contains_key(symbol)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn symbols(&self) -> impl Iterator<Item = &str> {
        self.elements.keys().map(String::as_str)
    }

    /// Looks up one property, failing with the element and property name.
    pub fn property(&self, symbol: &str, property: ElementProperty) -> Result<f64> {
        self.get(symbol)
            .and_then(|e| e.get(property))
            .ok_or_else(|| Error::MissingElementProperty {
                element: symbol.to_string(),
                property: property.name().to_string(),
            })
    }
}
