//! Physical validity filters, `max_efg` reconstruction and the curation funnel.

use std::io::Read;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::error::{Error, Result};
use crate::ingest::{self, parse_records, InputFormat, RawRecord, Value};
use crate::ingest::{
    BANDGAP, BULK_MODULUS, DENSITY, DIMENSIONALITY, EFG_TENSOR, EHULL, EPSX, EPSY, EPSZ,
    FORMATION_ENERGY, IS_3D, MAX_EFG, NAT, POISSON, SHEAR_MODULUS, SPG_NUMBER,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub poisson_min: f64,
    pub poisson_max: f64,
    pub bulk_max_gpa: f64,
    pub shear_max_gpa: f64,
    pub eps_cap: f64,
    pub required_fields: Vec<String>,
    pub allowed_dimensionalities: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            poisson_min: 0.1,
            poisson_max: 0.5,
            bulk_max_gpa: 300.0,
            shear_max_gpa: 200.0,
            eps_cap: 100.0,
            required_fields: default_required_fields(),
            allowed_dimensionalities: vec!["2D".into(), "3D".into()],
        }
    }
}

/// The core descriptor set a record must carry to enter curation.
pub fn default_required_fields() -> Vec<String> {
    [
        FORMATION_ENERGY,
        DENSITY,
        NAT,
        DIMENSIONALITY,
        SPG_NUMBER,
        BULK_MODULUS,
        SHEAR_MODULUS,
        POISSON,
        EPSX,
        EPSY,
        EPSZ,
        EHULL,
        BANDGAP,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.poisson_min < self.poisson_max) {
            return Err(Error::Config("poisson_min must be below poisson_max".into()));
        }
        if !(self.bulk_max_gpa > 0.0 && self.shear_max_gpa > 0.0 && self.eps_cap > 0.0) {
            return Err(Error::Config("filter caps must be positive".into()));
        }
        if self.allowed_dimensionalities.is_empty() {
            return Err(Error::Config("allowed_dimensionalities is empty".into()));
        }
        Ok(())
    }

    fn dimensionality_allowed(&self, canonical: &str) -> bool {
        self.allowed_dimensionalities
            .iter()
            .any(|d| canonical_dimensionality(d) == canonical)
    }
}

/// Trimmed, upper-cased, with a trailing `-bulk` qualifier removed.
pub fn canonical_dimensionality(raw: &str) -> String {
    let up = raw.trim().to_ascii_uppercase();
    up.strip_suffix("-BULK").map(str::to_string).unwrap_or(up)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CuratedRecord {
    pub record: RawRecord,
    pub is_3d: bool,
    pub max_efg: f64,
}

impl CuratedRecord {
    pub fn id(&self) -> &str {
        &self.record.id
    }

    pub fn formula(&self) -> &str {
        &self.record.formula
    }

    /// Numeric descriptor; curation guarantees the required ones exist.
    pub fn number(&self, key: &str) -> Option<f64> {
        match key {
            IS_3D => Some(if self.is_3d { 1.0 } else { 0.0 }),
            MAX_EFG => Some(self.max_efg),
            _ => self.record.number(key),
        }
    }

    pub fn bandgap(&self) -> f64 {
        self.record.number(BANDGAP).unwrap_or(f64::NAN)
    }

    pub fn to_json(&self) -> Json {
        let mut j = self.record.to_json();
        if let Json::Object(m) = &mut j {
            m.insert(IS_3D.into(), Json::Bool(self.is_3d));
            m.insert(
                MAX_EFG.into(),
                serde_json::Number::from_f64(self.max_efg).map_or(Json::Null, Json::Number),
            );
        }
        j
    }

    /// Rebuilds a curated record from its JSONL form.
    pub fn from_raw(record: RawRecord) -> Result<Self> {
        let is_3d = match record.values.get(IS_3D) {
            Some(Value::Text(t)) if t == "true" => true,
            Some(Value::Text(t)) if t == "false" => false,
            Some(Value::Number(v)) => *v != 0.0,
            _ => {
                return Err(Error::Data {
                    id: record.id.clone(),
                    message: "curated record lacks is_3D".into(),
                })
            }
        };
        let max_efg = record.number(MAX_EFG).ok_or_else(|| Error::Data {
            id: record.id.clone(),
            message: "curated record lacks max_efg".into(),
        })?;
        let mut record = record;
        record.values.remove(IS_3D);
        record.values.insert(MAX_EFG.into(), Value::Number(max_efg));
        Ok(Self {
            record,
            is_3d,
            max_efg,
        })
    }
}

pub fn read_curated<R: Read>(input: R) -> Result<Vec<CuratedRecord>> {
    parse_records(input, InputFormat::Jsonl)?
        .into_iter()
        .map(CuratedRecord::from_raw)
        .collect()
}

pub fn write_curated<W: std::io::Write>(mut out: W, records: &[CuratedRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &r.to_json())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Native `max_efg`, else the largest absolute EFG tensor component over all sites.
pub fn reconstruct_max_efg(record: &RawRecord) -> Result<Option<f64>> {
    if let Some(v) = record.number(MAX_EFG) {
        return Ok(Some(v));
    }
    let Some(Value::Tensor(tensor)) = record.values.get(EFG_TENSOR) else {
        return Ok(None);
    };
    let mut max: Option<f64> = None;
    let mut stack = vec![tensor];
    while let Some(node) = stack.pop() {
        match node {
            Json::Array(items) => stack.extend(items.iter()),
            Json::Number(n) => {
                let v = n.as_f64().unwrap_or(f64::NAN).abs();
                max = Some(max.map_or(v, |m: f64| m.max(v)));
            }
            other => {
                return Err(Error::Data {
                    id: record.id.clone(),
                    message: format!("efg_tensor has non-numeric entry {other}"),
                })
            }
        }
    }
    Ok(max)
}

/// True iff the dimensionality is 3D; anything other than 2D/3D is a contract violation.
pub fn derive_is_3d(record: &RawRecord) -> Result<bool> {
    let dim = record.text(DIMENSIONALITY).map(canonical_dimensionality);
    match dim.as_deref() {
        Some("3D") => Ok(true),
        Some("2D") => Ok(false),
        other => Err(Error::Protocol(format!(
            "record `{}` has dimensionality {:?}; only 2D/3D records reach is_3D derivation",
            record.id, other
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Completeness,
    FormationEnergy,
    Poisson,
    Moduli,
    Dielectric,
    SpaceGroup,
    Dimensionality,
    MaxEfg,
}

impl Stage {
    pub const ORDER: [Stage; 8] = [
        Stage::Completeness,
        Stage::FormationEnergy,
        Stage::Poisson,
        Stage::Moduli,
        Stage::Dielectric,
        Stage::SpaceGroup,
        Stage::Dimensionality,
        Stage::MaxEfg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Completeness => "completeness",
            Stage::FormationEnergy => "formation_energy",
            Stage::Poisson => "poisson",
            Stage::Moduli => "moduli",
            Stage::Dielectric => "dielectric",
            Stage::SpaceGroup => "space_group",
            Stage::Dimensionality => "dimensionality",
            Stage::MaxEfg => "max_efg",
        }
    }

    fn reason(self, cfg: &FilterConfig) -> String {
        match self {
            Stage::Completeness => format!(
                "required descriptors present and typed; bandgap >= 0 ({} fields)",
                cfg.required_fields.len()
            ),
            Stage::FormationEnergy => "formation_energy_per_atom <= 0".into(),
            Stage::Poisson => format!("{} <= poisson <= {}", cfg.poisson_min, cfg.poisson_max),
            Stage::Moduli => format!(
                "0 < bulk_modulus_kv <= {} GPa and 0 < shear_modulus_gv <= {} GPa",
                cfg.bulk_max_gpa, cfg.shear_max_gpa
            ),
            Stage::Dielectric => format!("epsx, epsy, epsz in (0, {}]", cfg.eps_cap),
            Stage::SpaceGroup => "1 <= spg_number <= 230".into(),
            Stage::Dimensionality => format!(
                "dimensionality in {{{}}}",
                cfg.allowed_dimensionalities.join(", ")
            ),
            Stage::MaxEfg => "max_efg native or reconstructed from efg_tensor".into(),
        }
    }

    /// Returns the violation message, if any.
    pub fn check(self, r: &RawRecord, cfg: &FilterConfig) -> Option<String> {
        let num = |k: &str| r.number(k);
        match self {
            Stage::Completeness => {
                for field in &cfg.required_fields {
                    let ok = if field == DIMENSIONALITY {
                        r.text(field).is_some()
                    } else {
                        num(field).is_some_and(f64::is_finite)
                    };
                    if !ok {
                        return Some(format!("missing or untyped {field}"));
                    }
                }
                match num(BANDGAP) {
                    Some(g) if g >= 0.0 => None,
                    Some(g) => Some(format!("negative bandgap {g}")),
                    None => Some("missing bandgap".into()),
                }
            }
            Stage::FormationEnergy => match num(FORMATION_ENERGY) {
                Some(e) if e <= 0.0 => None,
                other => Some(format!("formation energy {other:?}")),
            },
            Stage::Poisson => match num(POISSON) {
                Some(p) if p >= cfg.poisson_min && p <= cfg.poisson_max => None,
                other => Some(format!("poisson {other:?}")),
            },
            Stage::Moduli => {
                let k = num(BULK_MODULUS);
                let g = num(SHEAR_MODULUS);
                match (k, g) {
                    (Some(k), Some(g))
                        if k > 0.0 && k <= cfg.bulk_max_gpa && g > 0.0 && g <= cfg.shear_max_gpa =>
                    {
                        None
                    }
                    _ => Some(format!("moduli K={k:?} G={g:?}")),
                }
            }
            Stage::Dielectric => {
                for key in [EPSX, EPSY, EPSZ] {
                    match num(key) {
                        Some(e) if e > 0.0 && e <= cfg.eps_cap => {}
                        other => return Some(format!("{key} {other:?}")),
                    }
                }
                None
            }
            Stage::SpaceGroup => match num(SPG_NUMBER) {
                Some(s) if s.fract() == 0.0 && (1.0..=230.0).contains(&s) => None,
                other => Some(format!("space group {other:?}")),
            },
            Stage::Dimensionality => match r.text(DIMENSIONALITY) {
                Some(d) if cfg.dimensionality_allowed(&canonical_dimensionality(d))
                    && matches!(canonical_dimensionality(d).as_str(), "2D" | "3D") =>
                {
                    None
                }
                other => Some(format!("dimensionality {other:?}")),
            },
            Stage::MaxEfg => match reconstruct_max_efg(r) {
                Ok(Some(v)) if v.is_finite() => None,
                Ok(_) => Some("max_efg unavailable".into()),
                Err(e) => Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunnelStage {
    pub stage: String,
    #[serde(rename = "in")]
    pub records_in: usize,
    #[serde(rename = "out")]
    pub records_out: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub id: String,
    pub stage: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurationFunnel {
    pub stages: Vec<FunnelStage>,
    pub final_count: usize,
    pub exclusions: Vec<Exclusion>,
}

/// Applies the stages in their canonical order.
pub fn apply_filters(
    records: Vec<RawRecord>,
    cfg: &FilterConfig,
) -> (Vec<CuratedRecord>, CurationFunnel) {
    apply_stages(records, cfg, &Stage::ORDER)
}

/// Applies `order`; the surviving set does not depend on it, the funnel counts do.
pub fn apply_stages(
    records: Vec<RawRecord>,
    cfg: &FilterConfig,
    order: &[Stage],
) -> (Vec<CuratedRecord>, CurationFunnel) {
    let mut funnel = CurationFunnel::default();
    let mut current = records;
    for &stage in order {
        let records_in = current.len();
        let mut kept = Vec::with_capacity(records_in);
        for r in current {
            match stage.check(&r, cfg) {
                None => kept.push(r),
                Some(detail) => funnel.exclusions.push(Exclusion {
                    id: r.id.clone(),
                    stage: stage.name().into(),
                    detail,
                }),
            }
        }
        funnel.stages.push(FunnelStage {
            stage: stage.name().into(),
            records_in,
            records_out: kept.len(),
            reason: stage.reason(cfg),
        });
        current = kept;
    }
    // Records only become curated once every stage has run; with a partial
    // order the derived fields may still be unavailable.
    let curated: Vec<CuratedRecord> = current
        .into_iter()
        .filter_map(|mut record| {
            let is_3d = derive_is_3d(&record).ok()?;
            let max_efg = reconstruct_max_efg(&record).ok().flatten()?;
            record.values.insert(MAX_EFG.into(), Value::Number(max_efg));
            Some(CuratedRecord {
                record,
                is_3d,
                max_efg,
            })
        })
        .collect();
    funnel.final_count = curated.len();
    (curated, funnel)
}

/// Invariant check used to re-verify survivors.
pub fn violations(record: &CuratedRecord, cfg: &FilterConfig) -> Vec<String> {
    let mut out: Vec<String> = Stage::ORDER
        .iter()
        .filter_map(|s| s.check(&record.record, cfg).map(|m| format!("{}: {m}", s.name())))
        .collect();
    if derive_is_3d(&record.record).ok() != Some(record.is_3d) {
        out.push("is_3D inconsistent with dimensionality".into());
    }
    out
}

/// Records whose `avg_elec_mass` and `avg_hole_mass` are both present.
pub fn effective_mass_subset(records: &[CuratedRecord]) -> Vec<CuratedRecord> {
    records
        .iter()
        .filter(|r| {
            [ingest::AVG_ELEC_MASS, ingest::AVG_HOLE_MASS]
                .iter()
                .all(|k| r.record.number(k).is_some_and(f64::is_finite))
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn valid(id: &str) -> RawRecord {
        RawRecord::new(id, "NaCl")
            .with_number(FORMATION_ENERGY, -1.0)
            .with_number(EHULL, 0.0)
            .with_number(DENSITY, 2.16)
            .with_number(NAT, 2.0)
            .with_text(DIMENSIONALITY, "3D")
            .with_number(SPG_NUMBER, 225.0)
            .with_number(BULK_MODULUS, 250.0)
            .with_number(SHEAR_MODULUS, 150.0)
            .with_number(POISSON, 0.3)
            .with_number(EPSX, 5.0)
            .with_number(EPSY, 5.0)
            .with_number(EPSZ, 5.0)
            .with_number(MAX_EFG, 1.5)
            .with_number(BANDGAP, 5.0)
    }

    #[test]
    fn max_efg_passthrough() {
        let r = RawRecord::new("a", "Si").with_number(MAX_EFG, 3.2);
        assert_eq!(reconstruct_max_efg(&r).unwrap(), Some(3.2));
    }

    #[test]
    fn max_efg_from_tensor() {
        let tensor = serde_json::json!([
            [[1, 0, 0], [0, -4, 0], [0, 0, 3]],
            [[2, 0, 0], [0, 1, 0], [0, 0, -3]]
        ]);
        let r = RawRecord::new("a", "Si").with(EFG_TENSOR, Value::Tensor(tensor));
        assert_eq!(reconstruct_max_efg(&r).unwrap(), Some(4.0));
    }

    #[test]
    fn max_efg_unavailable_and_bad_tensor() {
        let r = RawRecord::new("a", "Si");
        assert_eq!(reconstruct_max_efg(&r).unwrap(), None);
        let bad = RawRecord::new("bad-id", "Si")
            .with(EFG_TENSOR, Value::Tensor(serde_json::json!([[1, "x"]])));
        let err = reconstruct_max_efg(&bad).unwrap_err();
        assert!(err.to_string().contains("bad-id"));
    }

    #[test]
    fn is_3d_derivation() {
        let mk = |d: &str| RawRecord::new("a", "Si").with_text(DIMENSIONALITY, d);
        assert!(derive_is_3d(&mk("3D")).unwrap());
        assert!(derive_is_3d(&mk(" 3d ")).unwrap());
        assert!(derive_is_3d(&mk("3D-bulk")).unwrap());
        assert!(!derive_is_3d(&mk("2D")).unwrap());
        assert!(derive_is_3d(&mk("0D")).is_err());
    }

    #[test]
    fn fully_valid_record_survives() {
        let (out, funnel) = apply_filters(vec![valid("a")], &FilterConfig::default());
        assert_eq!(out.len(), 1);
        assert!(out[0].is_3d);
        assert_eq!(out[0].max_efg, 1.5);
        assert_eq!(funnel.final_count, 1);
        assert_eq!(funnel.stages.len(), 8);
        assert!(violations(&out[0], &FilterConfig::default()).is_empty());
    }

    #[test]
    fn low_poisson_dropped_at_stage_three() {
        let r = valid("a").with_number(POISSON, 0.05);
        let (out, funnel) = apply_filters(vec![r, valid("b")], &FilterConfig::default());
        assert_eq!(out.len(), 1);
        assert_eq!(funnel.stages[2].stage, "poisson");
        assert_eq!(funnel.stages[2].records_in, 2);
        assert_eq!(funnel.stages[2].records_out, 1);
        assert_eq!(funnel.exclusions[0].stage, "poisson");
    }

    #[test]
    fn each_stage_rejects_its_violation() {
        let cases = [
            (valid("x").with_text(POISSON, "na"), "completeness"),
            (valid("x").with_number(BANDGAP, -0.1), "completeness"),
            (valid("x").with_number(FORMATION_ENERGY, 0.2), "formation_energy"),
            (valid("x").with_number(POISSON, 0.51), "poisson"),
            (valid("x").with_number(BULK_MODULUS, 301.0), "moduli"),
            (valid("x").with_number(SHEAR_MODULUS, 0.0), "moduli"),
            (valid("x").with_number(EPSY, 0.0), "dielectric"),
            (valid("x").with_number(EPSZ, 150.0), "dielectric"),
            (valid("x").with_number(SPG_NUMBER, 231.0), "space_group"),
            (valid("x").with_number(SPG_NUMBER, 12.5), "space_group"),
            (valid("x").with_text(DIMENSIONALITY, "intercalated ion"), "dimensionality"),
            (valid("x").with_text(DIMENSIONALITY, "1D"), "dimensionality"),
            (valid("x").with(MAX_EFG, Value::Missing), "max_efg"),
        ];
        for (r, stage) in cases {
            let (out, funnel) = apply_filters(vec![r], &FilterConfig::default());
            assert!(out.is_empty(), "{stage}");
            assert_eq!(funnel.exclusions[0].stage, stage);
        }
    }

    #[test]
    fn metals_with_zero_gap_kept() {
        let (out, _) = apply_filters(vec![valid("m").with_number(BANDGAP, 0.0)], &FilterConfig::default());
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn config_validation() {
        let mut c = FilterConfig::default();
        assert!(c.validate().is_ok());
        c.poisson_min = 0.6;
        assert!(c.validate().is_err());
        let c = FilterConfig {
            eps_cap: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn curated_jsonl_roundtrip() {
        let (out, _) = apply_filters(vec![valid("a")], &FilterConfig::default());
        let mut buf = Vec::new();
        write_curated(&mut buf, &out).unwrap();
        let back = read_curated(buf.as_slice()).unwrap();
        assert_eq!(back, out);
    }

    fn arb_record(i: usize) -> impl Strategy<Value = RawRecord> {
        (
            -1.0f64..0.5,
            0.0f64..0.6,
            -10.0f64..320.0,
            -10.0f64..220.0,
            -1.0f64..120.0,
            0u32..240,
            prop::sample::select(vec!["2D", "3D", "1D", "0D"]),
            prop::bool::ANY,
        )
            .prop_map(move |(e, p, k, g, eps, spg, dim, efg)| {
                let mut r = valid(&format!("r{i}"))
                    .with_number(FORMATION_ENERGY, e)
                    .with_number(POISSON, p)
                    .with_number(BULK_MODULUS, k)
                    .with_number(SHEAR_MODULUS, g)
                    .with_number(EPSY, eps)
                    .with_number(SPG_NUMBER, spg as f64)
                    .with_text(DIMENSIONALITY, dim);
                if !efg {
                    r.values.remove(MAX_EFG);
                }
                r
            })
    }

    proptest! {
        #[test]
        fn survivors_independent_of_stage_order(
            recs in (0..30usize).prop_flat_map(|n| (0..n).map(arb_record).collect::<Vec<_>>()),
            perm_seed in any::<u64>(),
        ) {
            let cfg = FilterConfig::default();
            let mut order = Stage::ORDER.to_vec();
            crate::rng::XorShift64Star::seed_from(perm_seed).shuffle(&mut order);
            let (a, _) = apply_filters(recs.clone(), &cfg);
            let (b, fb) = apply_stages(recs.clone(), &cfg, &order);
            let ids_a: Vec<_> = a.iter().map(|r| r.id().to_string()).collect();
            let ids_b: Vec<_> = b.iter().map(|r| r.id().to_string()).collect();
            prop_assert_eq!(ids_a, ids_b);
            for s in &fb.stages {
                prop_assert!(s.records_out <= s.records_in);
            }
            prop_assert_eq!(fb.final_count, fb.stages.last().unwrap().records_out);
            for r in &a {
                prop_assert!(violations(r, &cfg).is_empty());
            }
            prop_assert_eq!(fb.exclusions.len() + b.len(), recs.len());
        }
    }
}
