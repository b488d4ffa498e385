//! Record parsing, placeholder normalization, two-source merge and
//! lowest-energy deduplication.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::error::{Error, Result};
use crate::features::formula::parse_formula;

pub const FORMATION_ENERGY: &str = "formation_energy_per_atom";
pub const EHULL: &str = "ehull";
pub const DENSITY: &str = "density";
pub const NAT: &str = "nat";
pub const DIMENSIONALITY: &str = "dimensionality";
pub const SPG_NUMBER: &str = "spg_number";
pub const BULK_MODULUS: &str = "bulk_modulus_kv";
pub const SHEAR_MODULUS: &str = "shear_modulus_gv";
pub const POISSON: &str = "poisson";
pub const EPSX: &str = "epsx";
pub const EPSY: &str = "epsy";
pub const EPSZ: &str = "epsz";
pub const MAX_EFG: &str = "max_efg";
pub const EFG_TENSOR: &str = "efg_tensor";
pub const AVG_ELEC_MASS: &str = "avg_elec_mass";
pub const AVG_HOLE_MASS: &str = "avg_hole_mass";
pub const BANDGAP: &str = "optb88vdw_bandgap";
pub const IS_3D: &str = "is_3D";

/// Text values treated as missing after trimming (case-sensitive).
pub const PLACEHOLDERS: [&str; 4] = ["na", "[]", "None", "nan"];

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
    /// Nested numeric arrays, kept as parsed JSON.
    Tensor(Json),
    Missing,
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    fn from_json(v: Json) -> Value {
        match v {
            Json::Null => Value::Missing,
            Json::Number(n) => n.as_f64().map_or(Value::Missing, Value::Number),
            Json::String(s) => Value::Text(s),
            Json::Bool(b) => Value::Text(b.to_string()),
            arr @ Json::Array(_) => Value::Tensor(arr),
            obj @ Json::Object(_) => Value::Tensor(obj),
        }
    }

    fn to_json(&self) -> Json {
        match self {
            Value::Number(v) => serde_json::Number::from_f64(*v).map_or(Json::Null, Json::Number),
            Value::Text(s) => Json::String(s.clone()),
            Value::Tensor(t) => t.clone(),
            Value::Missing => Json::Null,
        }
    }

    /// CSV cell typing: empty is missing, then number, then JSON array, then text.
    fn from_cell(cell: &str) -> Value {
        let trimmed = cell.trim();
        if trimmed.is_empty() {
            return Value::Missing;
        }
        if let Ok(v) = trimmed.parse::<f64>() {
            return Value::Number(v);
        }
        if trimmed.starts_with('[') {
            if let Ok(arr @ Json::Array(_)) = serde_json::from_str::<Json>(trimmed) {
                return Value::Tensor(arr);
            }
        }
        Value::Text(cell.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub id: String,
    pub formula: String,
    pub values: BTreeMap<String, Value>,
}

impl RawRecord {
    pub fn new(id: impl Into<String>, formula: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            formula: formula.into(),
            values: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: Value) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn with_number(self, key: &str, v: f64) -> Self {
        self.with(key, Value::Number(v))
    }

    pub fn with_text(self, key: &str, v: &str) -> Self {
        self.with(key, Value::Text(v.to_string()))
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key).filter(|v| !v.is_missing())
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(Value::as_number)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.values.get(key).and_then(Value::as_text)
    }

    pub fn to_json(&self) -> Json {
        let mut m = Map::new();
        m.insert("id".into(), Json::String(self.id.clone()));
        m.insert("formula".into(), Json::String(self.formula.clone()));
        for (k, v) in &self.values {
            m.insert(k.clone(), v.to_json());
        }
        Json::Object(m)
    }

    fn from_json_object(mut obj: Map<String, Json>, line: usize) -> Result<Self> {
        let id = match obj.remove("id").or_else(|| obj.remove("jid")) {
            Some(Json::String(s)) if !s.trim().is_empty() => s,
            Some(Json::Number(n)) => n.to_string(),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: "record has no non-empty `id`".into(),
                })
            }
        };
        let formula = match obj.remove("formula") {
            Some(Json::String(s)) => s,
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("record `{id}` has no `formula` string"),
                })
            }
        };
        let values = obj
            .into_iter()
            .map(|(k, v)| (k, Value::from_json(v)))
            .collect();
        Ok(Self { id, formula, values })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Jsonl,
    Csv,
}

impl InputFormat {
    pub fn from_path(path: &std::path::Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

pub fn parse_records<R: Read>(input: R, format: InputFormat) -> Result<Vec<RawRecord>> {
    let records = match format {
        InputFormat::Jsonl => parse_jsonl(input)?,
        InputFormat::Csv => parse_csv(input)?,
    };
    let mut seen = BTreeSet::new();
    for r in &records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }
    Ok(records)
}

fn parse_jsonl<R: Read>(input: R) -> Result<Vec<RawRecord>> {
    let reader = std::io::BufReader::new(input);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Json = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let Json::Object(obj) = parsed else {
            return Err(Error::Parse {
                line: line_no,
                message: "expected a JSON object".into(),
            });
        };
        out.push(RawRecord::from_json_object(obj, line_no)?);
    }
    Ok(out)
}

fn parse_csv<R: Read>(input: R) -> Result<Vec<RawRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "id")
        .or_else(|| headers.iter().position(|h| h == "jid"))
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "CSV header has no `id` column".into(),
        })?;
    let formula_col = headers
        .iter()
        .position(|h| h == "formula")
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "CSV header has no `formula` column".into(),
        })?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty id".into(),
            });
        }
        let formula = row.get(formula_col).unwrap_or("").trim().to_string();
        let mut values = BTreeMap::new();
        for (col, (name, cell)) in headers.iter().zip(row.iter()).enumerate() {
            if col == id_col || col == formula_col {
                continue;
            }
            values.insert(name.to_string(), Value::from_cell(cell));
        }
        out.push(RawRecord { id, formula, values });
    }
    Ok(out)
}

/// Placeholder text, non-finite numbers and empty arrays become missing.
pub fn normalize_missing(mut record: RawRecord) -> RawRecord {
    for v in record.values.values_mut() {
        let missing = match v {
            Value::Text(s) => PLACEHOLDERS.contains(&s.trim()),
            Value::Number(x) => !x.is_finite(),
            Value::Tensor(Json::Array(a)) => a.is_empty(),
            _ => false,
        };
        if missing {
            *v = Value::Missing;
        }
    }
    record
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[RawRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r.to_json())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceMergeReport {
    pub records_in_a: usize,
    pub records_in_b: usize,
    pub merged_total: usize,
    pub shared_fields: Vec<String>,
    pub dedup_groups: usize,
    pub dedup_survivors: usize,
    /// Records excluded because their formula could not be parsed.
    pub unparseable_formulas: usize,
    /// Records dropped from multi-member groups for lacking formation energy.
    pub dropped_missing_energy: usize,
}

impl SourceMergeReport {
    pub fn with_dedup(mut self, dedup: &SourceMergeReport) -> Self {
        self.dedup_groups = dedup.dedup_groups;
        self.dedup_survivors = dedup.dedup_survivors;
        self.unparseable_formulas = dedup.unparseable_formulas;
        self.dropped_missing_energy = dedup.dropped_missing_energy;
        self
    }
}

const MERGE_RELATIVE_TOLERANCE: f64 = 1e-6;

fn field_names(records: &[RawRecord]) -> BTreeSet<&str> {
    records
        .iter()
        .flat_map(|r| r.values.keys().map(String::as_str))
        .collect()
}

/// Union keyed by id; for shared ids the later source fills gaps in the earlier.
pub fn merge_sources(
    a: Vec<RawRecord>,
    b: Vec<RawRecord>,
) -> Result<(Vec<RawRecord>, SourceMergeReport)> {
    let fields_a = field_names(&a);
    let fields_b = field_names(&b);
    let shared_fields: Vec<String> = fields_a
        .intersection(&fields_b)
        .map(|s| s.to_string())
        .collect();
    let mut report = SourceMergeReport {
        records_in_a: a.len(),
        records_in_b: b.len(),
        shared_fields,
        ..Default::default()
    };

    let mut index: HashMap<String, usize> = HashMap::with_capacity(a.len() + b.len());
    let mut merged: Vec<RawRecord> = Vec::with_capacity(a.len() + b.len());
    for r in a.into_iter().chain(b) {
        match index.get(&r.id) {
            None => {
                index.insert(r.id.clone(), merged.len());
                merged.push(r);
            }
            Some(&slot) => {
                let target = &mut merged[slot];
                for (field, incoming) in r.values {
                    if incoming.is_missing() {
                        continue;
                    }
                    match target.values.get(&field) {
                        None | Some(Value::Missing) => {
                            target.values.insert(field, incoming);
                        }
                        Some(Value::Number(existing)) => {
                            if let Value::Number(new) = incoming {
                                let scale = existing.abs().max(new.abs());
                                if (existing - new).abs() > MERGE_RELATIVE_TOLERANCE * scale {
                                    return Err(Error::MergeConflict {
                                        id: target.id.clone(),
                                        field,
                                        left: *existing,
                                        right: new,
                                    });
                                }
                            }
                        }
                        Some(_) => {}
                    }
                }
                if target.formula.trim().is_empty() {
                    target.formula = r.formula;
                }
            }
        }
    }
    report.merged_total = merged.len();
    Ok((merged, report))
}

/// Keeps the lowest-formation-energy record per reduced composition.
pub fn dedup_lowest_energy(records: Vec<RawRecord>) -> (Vec<RawRecord>, SourceMergeReport) {
    let mut report = SourceMergeReport {
        merged_total: records.len(),
        ..Default::default()
    };
    let mut group_of: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut parseable = vec![false; records.len()];
    for (i, r) in records.iter().enumerate() {
        match parse_formula(&r.formula) {
            Ok(comp) => {
                parseable[i] = true;
                let key = comp.reduced_key();
                let g = *group_of.entry(key).or_insert_with(|| {
                    groups.push(Vec::new());
                    groups.len() - 1
                });
                groups[g].push(i);
            }
            Err(_) => report.unparseable_formulas += 1,
        }
    }
    report.dedup_groups = groups.len();

    let mut keep = vec![false; records.len()];
    for members in &groups {
        if members.len() == 1 {
            keep[members[0]] = true;
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for &i in members {
            let Some(e) = records[i].number(FORMATION_ENERGY).filter(|e| e.is_finite()) else {
                report.dropped_missing_energy += 1;
                continue;
            };
            let better = match best {
                None => true,
                Some((be, bi)) => e < be || (e == be && records[i].id < records[bi].id),
            };
            if better {
                best = Some((e, i));
            }
        }
        if let Some((_, i)) = best {
            keep[i] = true;
        }
    }
    debug_assert!(parseable.iter().zip(&keep).all(|(p, k)| *p || !*k));
    let survivors: Vec<RawRecord> = records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    report.dedup_survivors = survivors.len();
    (survivors, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, formula: &str) -> RawRecord {
        RawRecord::new(id, formula)
    }

    #[test]
    fn jsonl_single_typed_value() {
        let input = r#"{"id":"x1","formula":"Si","optb88vdw_bandgap":0.6}"#;
        let recs = parse_records(input.as_bytes(), InputFormat::Jsonl).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].id, "x1");
        assert_eq!(recs[0].formula, "Si");
        assert_eq!(recs[0].values.len(), 1);
        assert_eq!(recs[0].number(BANDGAP), Some(0.6));
    }

    #[test]
    fn empty_stream() {
        assert!(parse_records(&b""[..], InputFormat::Jsonl).unwrap().is_empty());
        assert!(parse_records(&b"id,formula\n"[..], InputFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn trailing_garbage_names_line() {
        let input = "{\"id\":\"a\",\"formula\":\"Si\"}\n{\"id\":\"b\",\"formula\":\"Ge\"} junk\n";
        match parse_records(input.as_bytes(), InputFormat::Jsonl) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let input = "{\"id\":\"a\",\"formula\":\"Si\"}\n{\"id\":\"a\",\"formula\":\"Ge\"}\n";
        assert!(matches!(
            parse_records(input.as_bytes(), InputFormat::Jsonl),
            Err(Error::DuplicateId(id)) if id == "a"
        ));
    }

    #[test]
    fn unknown_descriptors_preserved() {
        let input = r#"{"jid":"JVASP-1","formula":"Si","slme":"na","custom":[1,2]}"#;
        let recs = parse_records(input.as_bytes(), InputFormat::Jsonl).unwrap();
        assert_eq!(recs[0].id, "JVASP-1");
        assert_eq!(recs[0].text("slme"), Some("na"));
        assert!(matches!(recs[0].values["custom"], Value::Tensor(_)));
    }

    #[test]
    fn csv_typing() {
        let input = "id,formula,poisson,epsx,dimensionality,efg_tensor\n\
                     a,Si,0.25,,3D,\"[[1,0,0],[0,1,0],[0,0,1]]\"\n\
                     b,Ge,na,nan,2D,[]\n";
        let recs = parse_records(input.as_bytes(), InputFormat::Csv).unwrap();
        assert_eq!(recs[0].number(POISSON), Some(0.25));
        assert!(recs[0].values[EPSX].is_missing());
        assert_eq!(recs[0].text(DIMENSIONALITY), Some("3D"));
        assert!(matches!(recs[0].values[EFG_TENSOR], Value::Tensor(_)));
        let b = normalize_missing(recs[1].clone());
        assert!(b.values[POISSON].is_missing());
        assert!(b.values[EPSX].is_missing());
        assert!(b.values[EFG_TENSOR].is_missing());
    }

    #[test]
    fn placeholders_become_missing() {
        let r = rec("a", "Si")
            .with_text(POISSON, "na")
            .with_text(EPSX, "nan")
            .with_text(EPSY, " None ")
            .with_text(EPSZ, "[]")
            .with_number(DENSITY, f64::INFINITY)
            .with_text(DIMENSIONALITY, "3D")
            .with_number(BULK_MODULUS, 120.0);
        let n = normalize_missing(r);
        for k in [POISSON, EPSX, EPSY, EPSZ, DENSITY] {
            assert!(n.values[k].is_missing(), "{k}");
        }
        assert_eq!(n.text(DIMENSIONALITY), Some("3D"));
        assert_eq!(n.number(BULK_MODULUS), Some(120.0));
    }

    #[test]
    fn placeholder_match_is_case_sensitive() {
        let n = normalize_missing(rec("a", "Si").with_text(POISSON, "NA"));
        assert_eq!(n.text(POISSON), Some("NA"));
    }

    #[test]
    fn valid_numeric_unchanged() {
        let r = rec("a", "Si").with_number(POISSON, 0.25);
        assert_eq!(normalize_missing(r.clone()), r);
    }

    #[test]
    fn merge_disjoint() {
        let (m, rep) = merge_sources(vec![rec("x1", "Si")], vec![rec("x2", "Ge")]).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(rep.merged_total, 2);
        assert_eq!(rep.records_in_a, 1);
        assert_eq!(rep.records_in_b, 1);
    }

    #[test]
    fn merge_fills_gaps() {
        let a = vec![rec("x1", "Si").with(EPSX, Value::Missing).with_number(DENSITY, 2.3)];
        let b = vec![rec("x1", "Si").with_number(EPSX, 11.7).with_number(DENSITY, 2.3)];
        let (m, rep) = merge_sources(a, b).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].number(EPSX), Some(11.7));
        assert_eq!(rep.shared_fields, vec![DENSITY.to_string(), EPSX.to_string()]);
    }

    #[test]
    fn merge_conflict_names_id_and_field() {
        let a = vec![rec("x1", "Si").with_number(EPSX, 2.0)];
        let b = vec![rec("x1", "Si").with_number(EPSX, 9.0)];
        match merge_sources(a, b) {
            Err(Error::MergeConflict { id, field, .. }) => {
                assert_eq!(id, "x1");
                assert_eq!(field, EPSX);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn merge_tolerates_rounding() {
        let a = vec![rec("x1", "Si").with_number(EPSX, 2.0)];
        let b = vec![rec("x1", "Si").with_number(EPSX, 2.0 + 1e-9)];
        assert!(merge_sources(a, b).is_ok());
    }

    #[test]
    fn dedup_argmin() {
        let recs = vec![
            rec("a", "Si").with_number(FORMATION_ENERGY, -0.1),
            rec("b", "Si").with_number(FORMATION_ENERGY, -0.5),
        ];
        let (out, rep) = dedup_lowest_energy(recs);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].number(FORMATION_ENERGY), Some(-0.5));
        assert_eq!(rep.dedup_groups, 1);
        assert_eq!(rep.dedup_survivors, 1);
    }

    #[test]
    fn dedup_uses_reduced_composition() {
        let recs = vec![
            rec("a", "SiO2").with_number(FORMATION_ENERGY, -3.0),
            rec("b", "Si2O4").with_number(FORMATION_ENERGY, -3.1),
            rec("c", "SiO").with_number(FORMATION_ENERGY, -2.0),
        ];
        let (out, rep) = dedup_lowest_energy(recs);
        let ids: Vec<_> = out.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["b", "c"]);
        assert_eq!(rep.dedup_groups, 2);
    }

    #[test]
    fn dedup_ties_by_smallest_id() {
        let recs = vec![
            rec("z", "GaAs").with_number(FORMATION_ENERGY, -1.0),
            rec("m", "GaAs").with_number(FORMATION_ENERGY, -1.0),
        ];
        let (out, _) = dedup_lowest_energy(recs);
        assert_eq!(out[0].id, "m");
    }

    #[test]
    fn dedup_missing_energy_rules() {
        let recs = vec![
            rec("lonely", "NaCl"),
            rec("a", "KBr"),
            rec("b", "KBr").with_number(FORMATION_ENERGY, -1.5),
            rec("bad", "Qq2"),
        ];
        let (out, rep) = dedup_lowest_energy(recs);
        let ids: Vec<_> = out.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, vec!["lonely", "b"]);
        assert_eq!(rep.unparseable_formulas, 1);
        assert_eq!(rep.dropped_missing_energy, 1);
    }

    #[test]
    fn jsonl_roundtrip() {
        let r = rec("a", "SiO2")
            .with_number(EPSX, 3.9)
            .with_text(DIMENSIONALITY, "3D")
            .with(EPSY, Value::Missing);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, std::slice::from_ref(&r)).unwrap();
        let back = parse_records(buf.as_slice(), InputFormat::Jsonl).unwrap();
        assert_eq!(back, vec![r]);
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        prop_oneof![
            any::<f64>().prop_map(Value::Number),
            prop::sample::select(vec!["na", "[]", "None", "nan", " na ", "3D", "x", "NaN"])
                .prop_map(|s| Value::Text(s.to_string())),
            Just(Value::Missing),
        ]
    }

    fn arb_record() -> impl Strategy<Value = RawRecord> {
        prop::collection::btree_map("[a-e]", arb_value(), 0..5).prop_map(|values| RawRecord {
            id: "r".into(),
            formula: "Si".into(),
            values,
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(r in arb_record()) {
            let once = normalize_missing(r);
            prop_assert_eq!(normalize_missing(once.clone()), once);
        }

        #[test]
        fn merge_membership_commutes(
            ids_a in prop::collection::btree_set("[a-h]", 0..6),
            ids_b in prop::collection::btree_set("[a-h]", 0..6),
        ) {
            let mk = |ids: &BTreeSet<String>| ids.iter().map(|i| rec(i, "Si")).collect::<Vec<_>>();
            let (ab, _) = merge_sources(mk(&ids_a), mk(&ids_b)).unwrap();
            let (ba, _) = merge_sources(mk(&ids_b), mk(&ids_a)).unwrap();
            let s1: BTreeSet<_> = ab.into_iter().map(|r| r.id).collect();
            let s2: BTreeSet<_> = ba.into_iter().map(|r| r.id).collect();
            prop_assert_eq!(s1, s2);
        }

        #[test]
        fn dedup_survivors_are_group_minima(
            rows in prop::collection::vec(
                (prop::sample::select(vec!["SiO2", "Si2O4", "GaAs", "NaCl", "Na2Cl2", "TiO2"]), -5.0f64..0.0),
                1..20,
            )
        ) {
            let recs: Vec<_> = rows
                .iter()
                .enumerate()
                .map(|(i, (f, e))| rec(&format!("r{i:02}"), f).with_number(FORMATION_ENERGY, *e))
                .collect();
            let (out, _) = dedup_lowest_energy(recs.clone());
            let keys: Vec<String> = out.iter().map(|r| parse_formula(&r.formula).unwrap().reduced_key()).collect();
            let distinct: BTreeSet<_> = keys.iter().collect();
            prop_assert_eq!(distinct.len(), keys.len());
            for s in &out {
                let key = parse_formula(&s.formula).unwrap().reduced_key();
                let e = s.number(FORMATION_ENERGY).unwrap();
                for r in &recs {
                    if parse_formula(&r.formula).unwrap().reduced_key() == key {
                        prop_assert!(e <= r.number(FORMATION_ENERGY).unwrap());
                    }
                }
            }
        }
    }
}
