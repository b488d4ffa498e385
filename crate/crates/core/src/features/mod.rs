//! Three-phase descriptor construction.
//!
//! * Phase I: twelve descriptors taken directly from curated records.
//! * Phase II: Phase I plus seven engineered physical quantities.
//! * Phase III: Phase I plus eleven composition/orbital descriptors and
//!   elemental-statistics blocks computed from the embedded element table.

pub mod elements;
pub mod formula;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curate::CuratedRecord;
use crate::error::{Error, Result};
use crate::ingest::{
    BULK_MODULUS, DENSITY, EHULL, EPSX, EPSY, EPSZ, FORMATION_ENERGY, IS_3D, MAX_EFG, NAT, POISSON,
    SHEAR_MODULUS,
};
use crate::matrix::{FeatureMatrix, Phase};
use elements::{ElementProperty, ElementTable};
use formula::{parse_formula_with, Composition};

pub type NamedVector = Vec<(String, f64)>;

pub const PHASE1_FEATURES: [&str; 12] = [
    FORMATION_ENERGY,
    EHULL,
    BULK_MODULUS,
    SHEAR_MODULUS,
    POISSON,
    EPSX,
    EPSY,
    EPSZ,
    DENSITY,
    NAT,
    IS_3D,
    MAX_EFG,
];

pub const PHASE2_FEATURES: [&str; 7] = [
    "dielectric_mean",
    "dielectric_anisotropy",
    "pugh_ratio",
    "v_t_proxy",
    "v_l_proxy",
    "specific_stiffness",
    "stability_stiffness_ratio",
];

pub const TABLE3_FEATURES: [&str; 11] = [
    "bond_polarity_index",
    "atomic_size_homogeneity",
    "relative_electronegativity_range",
    "radius_mismatch",
    "atomic_size_uniformity",
    "radius_variance",
    "pauling_ionicity_proxy",
    "d_hybridization_tendency",
    "pd_orbital_interaction_index",
    "sp_promotion_index",
    "transition_metal_electron_index",
];

const GPA_TO_PA: f64 = 1e9;
const G_PER_CM3_TO_KG_PER_M3: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatKind {
    Mean,
    Min,
    Max,
    Range,
    Std,
}

impl StatKind {
    pub const ALL: [StatKind; 5] = [
        StatKind::Mean,
        StatKind::Min,
        StatKind::Max,
        StatKind::Range,
        StatKind::Std,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatKind::Mean => "mean",
            StatKind::Min => "min",
            StatKind::Max => "max",
            StatKind::Range => "range",
            StatKind::Std => "std",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub epsilon_stabilizer: f64,
    pub sp_promotion_clip_max: f64,
    pub elemental_stat_kinds: Vec<StatKind>,
    pub elemental_properties: Vec<ElementProperty>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            epsilon_stabilizer: 1e-12,
            sp_promotion_clip_max: 10.0,
            elemental_stat_kinds: StatKind::ALL.to_vec(),
            elemental_properties: ElementProperty::ALL.to_vec(),
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_stabilizer > 0.0) {
            return Err(Error::Config("epsilon_stabilizer must be positive".into()));
        }
        if !(self.sp_promotion_clip_max > 0.0) {
            return Err(Error::Config("sp_promotion_clip_max must be positive".into()));
        }
        Ok(())
    }

    /// Column names of the elemental-statistics block, in emission order.
    pub fn elemental_columns(&self) -> Vec<String> {
        self.elemental_properties
            .iter()
            .flat_map(|p| {
                self.elemental_stat_kinds
                    .iter()
                    .map(move |k| stat_column(*p, *k))
            })
            .collect()
    }
}

fn stat_column(property: ElementProperty, kind: StatKind) -> String {
    format!("elem_{}_{}", property.name(), kind.name())
}

fn required(record: &CuratedRecord, key: &str) -> Result<f64> {
    record.number(key).ok_or_else(|| Error::Data {
        id: record.id().to_string(),
        message: format!("curated record lacks {key}"),
    })
}

/// The twelve Phase I descriptors in fixed order.
pub fn phase1_features(record: &CuratedRecord) -> Result<NamedVector> {
    PHASE1_FEATURES
        .iter()
        .map(|&k| Ok((k.to_string(), required(record, k)?)))
        .collect()
}

pub fn phase2_features(record: &CuratedRecord, cfg: &FeatureConfig) -> Result<NamedVector> {
    let eps = cfg.epsilon_stabilizer;
    let epsx = required(record, EPSX)?;
    let epsy = required(record, EPSY)?;
    let epsz = required(record, EPSZ)?;
    let kv = required(record, BULK_MODULUS)?;
    let gv = required(record, SHEAR_MODULUS)?;
    let rho_gcc = required(record, DENSITY)?;
    let ehull = required(record, EHULL)?;

    let k_pa = kv * GPA_TO_PA;
    let g_pa = gv * GPA_TO_PA;
    let rho = rho_gcc * G_PER_CM3_TO_KG_PER_M3;

    let dielectric_mean = (epsx + epsy + epsz) / 3.0;
    let eps_max = epsx.max(epsy).max(epsz);
    let eps_min = epsx.min(epsy).min(epsz);
    let values = [
        dielectric_mean,
        (eps_max - eps_min) / (dielectric_mean + eps),
        gv / kv,
        (g_pa / rho).sqrt(),
        ((k_pa + 4.0 * g_pa / 3.0) / rho).sqrt(),
        k_pa / rho,
        ehull / (kv + eps),
    ];
    Ok(PHASE2_FEATURES
        .iter()
        .zip(values)
        .map(|(n, v)| (n.to_string(), v))
        .collect())
}

struct ElementRow {
    weight: f64,
    chi: f64,
    radius: f64,
    fractions: [f64; 4],
}

fn element_rows(comp: &Composition, table: &ElementTable) -> Result<Vec<ElementRow>> {
    comp.weights()
        .into_iter()
        .map(|(el, w)| {
            let props = table.get(el).ok_or_else(|| Error::MissingElementProperty {
                element: el.to_string(),
                property: "table entry".into(),
            })?;
            Ok(ElementRow {
                weight: w,
                chi: table.property(el, ElementProperty::Electronegativity)?,
                radius: props.radius_pm,
                fractions: props.valence_fractions(),
            })
        })
        .collect()
}

/// Composition-weighted mean and variance; min/max over distinct elements.
fn weighted_moments(rows: &[ElementRow], value: impl Fn(&ElementRow) -> f64) -> (f64, f64, f64, f64) {
    let min = rows.iter().map(&value).fold(f64::INFINITY, f64::min);
    let max = rows.iter().map(&value).fold(f64::NEG_INFINITY, f64::max);
    // Rounding can push the weighted sum a ulp outside the range.
    let mean: f64 = rows.iter().map(|r| r.weight * value(r)).sum::<f64>().clamp(min, max);
    let var: f64 = rows
        .iter()
        .map(|r| r.weight * (value(r) - mean).powi(2))
        .sum();
    (mean, var, min, max)
}

/// The eleven chemical, orbital and size descriptors.
pub fn phase3_descriptors(
    comp: &Composition,
    table: &ElementTable,
    cfg: &FeatureConfig,
) -> Result<NamedVector> {
    let rows = element_rows(comp, table)?;
    let (chi_mean, _, chi_min, chi_max) = weighted_moments(&rows, |r| r.chi);
    let (r_mean, r_var, r_min, r_max) = weighted_moments(&rows, |r| r.radius);
    let frac = |k: usize| rows.iter().map(|r| r.weight * r.fractions[k]).sum::<f64>();
    let (f_s, f_p, f_d) = (frac(0), frac(1), frac(2));
    let delta_chi = chi_max - chi_min;
    let mismatch = (r_max - r_min) / r_mean;
    let tm_index = rows.iter().map(|r| r.fractions[2]).sum::<f64>() / rows.len() as f64;

    let values = [
        delta_chi * delta_chi,
        1.0 / (1.0 + mismatch),
        delta_chi / chi_mean,
        mismatch,
        r_mean / r_max,
        r_var,
        1.0 - (-0.25 * delta_chi * delta_chi).exp(),
        f_d,
        f_p * f_d,
        (f_s / (f_p + cfg.epsilon_stabilizer)).min(cfg.sp_promotion_clip_max),
        tm_index,
    ];
    Ok(TABLE3_FEATURES
        .iter()
        .zip(values)
        .map(|(n, v)| (n.to_string(), v))
        .collect())
}

/// Statistics of one elemental property across a composition.
pub fn elemental_stats(
    comp: &Composition,
    property: ElementProperty,
    kinds: &[StatKind],
    table: &ElementTable,
) -> Result<NamedVector> {
    let values: Vec<(f64, f64)> = comp
        .weights()
        .into_iter()
        .map(|(el, w)| Ok((w, table.property(el, property)?)))
        .collect::<Result<_>>()?;
    let mean: f64 = values.iter().map(|(w, v)| w * v).sum();
    let var: f64 = values.iter().map(|(w, v)| w * (v - mean).powi(2)).sum();
    let min = values.iter().map(|(_, v)| *v).fold(f64::INFINITY, f64::min);
    let max = values.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    Ok(kinds
        .iter()
        .map(|&k| {
            let v = match k {
                StatKind::Mean => mean,
                StatKind::Min => min,
                StatKind::Max => max,
                StatKind::Range => max - min,
                StatKind::Std => var.sqrt(),
            };
            (stat_column(property, k), v)
        })
        .collect())
}

/// One Phase III row; fails when the formula or an element property is unusable.
pub fn phase3_row(record: &CuratedRecord, table: &ElementTable, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let comp = parse_formula_with(record.formula(), table)?;
    let mut row: Vec<f64> = phase1_features(record)?.into_iter().map(|(_, v)| v).collect();
    row.extend(phase3_descriptors(&comp, table, cfg)?.into_iter().map(|(_, v)| v));
    for &prop in &cfg.elemental_properties {
        row.extend(
            elemental_stats(&comp, prop, &cfg.elemental_stat_kinds, table)?
                .into_iter()
                .map(|(_, v)| v),
        );
    }
    Ok(row)
}

pub fn phase_columns(phase: Phase, cfg: &FeatureConfig) -> Vec<String> {
    let mut cols: Vec<String> = PHASE1_FEATURES.iter().map(|s| s.to_string()).collect();
    match phase {
        Phase::I => {}
        Phase::II => cols.extend(PHASE2_FEATURES.iter().map(|s| s.to_string())),
        Phase::III => {
            cols.extend(TABLE3_FEATURES.iter().map(|s| s.to_string()));
            cols.extend(cfg.elemental_columns());
        }
    }
    cols
}

/// Builds the matrix for one phase; rows follow input order.
pub fn build_matrix(
    records: &[CuratedRecord],
    phase: Phase,
    cfg: &FeatureConfig,
    table: &ElementTable,
) -> Result<FeatureMatrix> {
    cfg.validate()?;
    let rows: Vec<Result<Vec<f64>>> = records
        .par_iter()
        .map(|r| match phase {
            Phase::I => Ok(phase1_features(r)?.into_iter().map(|(_, v)| v).collect()),
            Phase::II => {
                let mut row: Vec<f64> = phase1_features(r)?.into_iter().map(|(_, v)| v).collect();
                row.extend(phase2_features(r, cfg)?.into_iter().map(|(_, v)| v));
                Ok(row)
            }
            Phase::III => phase3_row(r, table, cfg),
        })
        .collect();

    let mut failures = Vec::new();
    let mut data = Vec::with_capacity(records.len());
    for (r, row) in records.iter().zip(rows) {
        match row {
            Ok(v) => data.push(v),
            Err(e) => failures.push(format!("{} ({e})", r.id())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::InvalidInput(format!(
            "phase {} features failed for {} record(s): {}",
            phase.label(),
            failures.len(),
            failures.join(", ")
        )));
    }
    FeatureMatrix::new(
        phase_columns(phase, cfg),
        data,
        records.iter().map(CuratedRecord::bandgap).collect(),
        records.iter().map(|r| r.id().to_string()).collect(),
        Some(phase),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curate::{apply_filters, FilterConfig};
    use crate::ingest::RawRecord;
    use approx::assert_abs_diff_eq;
    use formula::parse_formula;
    use proptest::prelude::*;

    fn curated(formula: &str, is3d: bool) -> CuratedRecord {
        let r = RawRecord::new("t", formula)
            .with_number(FORMATION_ENERGY, -1.2)
            .with_number(EHULL, 0.05)
            .with_number(DENSITY, 5.0)
            .with_number(NAT, 4.0)
            .with_text(crate::ingest::DIMENSIONALITY, if is3d { "3D" } else { "2D" })
            .with_number(crate::ingest::SPG_NUMBER, 12.0)
            .with_number(BULK_MODULUS, 80.0)
            .with_number(SHEAR_MODULUS, 40.0)
            .with_number(POISSON, 0.28)
            .with_number(EPSX, 2.0)
            .with_number(EPSY, 2.0)
            .with_number(EPSZ, 2.0)
            .with_number(MAX_EFG, 7.5)
            .with_number(crate::ingest::BANDGAP, 1.1);
        let (mut out, _) = apply_filters(vec![r], &FilterConfig::default());
        out.pop().expect("fixture is valid")
    }

    fn value(v: &NamedVector, name: &str) -> f64 {
        v.iter().find(|(n, _)| n == name).unwrap().1
    }

    #[test]
    fn phase1_shape_and_encoding() {
        let f = phase1_features(&curated("SiO2", true)).unwrap();
        let names: Vec<&str> = f.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, PHASE1_FEATURES);
        assert!(f.iter().all(|(_, v)| v.is_finite()));
        assert_eq!(value(&f, IS_3D), 1.0);
        assert_eq!(value(&phase1_features(&curated("SiO2", false)).unwrap(), IS_3D), 0.0);
    }

    #[test]
    fn phase2_values() {
        let f = phase2_features(&curated("SiO2", true), &FeatureConfig::default()).unwrap();
        assert_eq!(f.len(), 7);
        assert_eq!(value(&f, "dielectric_mean"), 2.0);
        assert_eq!(value(&f, "dielectric_anisotropy"), 0.0);
        assert_eq!(value(&f, "pugh_ratio"), 0.5);
        // G = 40 GPa, rho = 5 g/cm3
        assert_abs_diff_eq!(value(&f, "v_t_proxy"), (40e9f64 / 5000.0).sqrt(), epsilon = 1e-9);
        assert_abs_diff_eq!(
            value(&f, "v_l_proxy"),
            ((80e9f64 + 4.0 * 40e9 / 3.0) / 5000.0).sqrt(),
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(value(&f, "specific_stiffness"), 80e9 / 5000.0, epsilon = 1e-6);
        assert_abs_diff_eq!(value(&f, "stability_stiffness_ratio"), 0.05 / 80.0, epsilon = 1e-15);
    }

    #[test]
    fn transverse_velocity_hand_value() {
        // G = 50 GPa, rho = 5 g/cm3: sqrt(50e9 / 5000) = 3162.2777 m/s.
        let mut c = curated("SiO2", true);
        c.record.values.insert(SHEAR_MODULUS.into(), crate::ingest::Value::Number(50.0));
        let f = phase2_features(&c, &FeatureConfig::default()).unwrap();
        assert_abs_diff_eq!(value(&f, "v_t_proxy"), 3162.2776601683795, epsilon = 1e-9);
    }

    #[test]
    fn single_element_degeneracies() {
        let f = phase3_descriptors(
            &parse_formula("Si").unwrap(),
            ElementTable::embedded(),
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(value(&f, "bond_polarity_index"), 0.0);
        assert_eq!(value(&f, "pauling_ionicity_proxy"), 0.0);
        assert_eq!(value(&f, "radius_mismatch"), 0.0);
        assert_eq!(value(&f, "atomic_size_homogeneity"), 1.0);
        assert_eq!(value(&f, "atomic_size_uniformity"), 1.0);
        assert_eq!(value(&f, "radius_variance"), 0.0);
        assert_eq!(value(&f, "relative_electronegativity_range"), 0.0);
        // Si: 3s2 3p2
        assert_eq!(value(&f, "d_hybridization_tendency"), 0.0);
        assert_abs_diff_eq!(value(&f, "sp_promotion_index"), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn water_bond_polarity() {
        let f = phase3_descriptors(
            &parse_formula("H2O").unwrap(),
            ElementTable::embedded(),
            &FeatureConfig::default(),
        )
        .unwrap();
        // chi_O - chi_H = 3.44 - 2.20 = 1.24
        assert_abs_diff_eq!(value(&f, "bond_polarity_index"), 1.5376, epsilon = 1e-12);
        let chi_mean = (2.0 * 2.20 + 3.44) / 3.0;
        assert_abs_diff_eq!(value(&f, "relative_electronegativity_range"), 1.24 / chi_mean, epsilon = 1e-12);
        // r_H = 31, r_O = 66
        let r_mean = (2.0 * 31.0 + 66.0) / 3.0;
        assert_abs_diff_eq!(value(&f, "radius_mismatch"), 35.0 / r_mean, epsilon = 1e-12);
        assert_abs_diff_eq!(value(&f, "atomic_size_uniformity"), r_mean / 66.0, epsilon = 1e-12);
        let var = (2.0 / 3.0) * (31.0 - r_mean).powi(2) + (1.0 / 3.0) * (66.0 - r_mean).powi(2);
        assert_abs_diff_eq!(value(&f, "radius_variance"), var, epsilon = 1e-9);
    }

    #[test]
    fn orbital_fractions_for_iron_oxide() {
        // Fe: 4s2 3d6 -> (0.25, 0, 0.75, 0); O: 2s2 2p4 -> (1/3, 2/3, 0, 0)
        let f = phase3_descriptors(
            &parse_formula("FeO").unwrap(),
            ElementTable::embedded(),
            &FeatureConfig::default(),
        )
        .unwrap();
        let f_s = 0.5 * 0.25 + 0.5 / 3.0;
        let f_p = 0.5 * 2.0 / 3.0;
        let f_d = 0.5 * 0.75;
        assert_abs_diff_eq!(value(&f, "d_hybridization_tendency"), f_d, epsilon = 1e-12);
        assert_abs_diff_eq!(value(&f, "pd_orbital_interaction_index"), f_p * f_d, epsilon = 1e-12);
        assert_abs_diff_eq!(value(&f, "sp_promotion_index"), f_s / f_p, epsilon = 1e-9);
        assert_abs_diff_eq!(value(&f, "transition_metal_electron_index"), 0.375, epsilon = 1e-12);
    }

    #[test]
    fn sp_promotion_is_clipped() {
        let f = phase3_descriptors(
            &parse_formula("Na").unwrap(),
            ElementTable::embedded(),
            &FeatureConfig::default(),
        )
        .unwrap();
        assert_eq!(value(&f, "sp_promotion_index"), 10.0);
    }

    #[test]
    fn missing_electronegativity_names_element() {
        let err = phase3_descriptors(
            &parse_formula("NeO").unwrap(),
            ElementTable::embedded(),
            &FeatureConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("Ne"));
    }

    #[test]
    fn elemental_stats_cases() {
        let table = ElementTable::embedded();
        let si = elemental_stats(&parse_formula("Si").unwrap(), ElementProperty::CovalentRadius, &StatKind::ALL, table).unwrap();
        assert_eq!(value(&si, "elem_radius_pm_mean"), 111.0);
        assert_eq!(value(&si, "elem_radius_pm_min"), 111.0);
        assert_eq!(value(&si, "elem_radius_pm_max"), 111.0);
        assert_eq!(value(&si, "elem_radius_pm_range"), 0.0);
        assert_eq!(value(&si, "elem_radius_pm_std"), 0.0);

        let nacl = elemental_stats(&parse_formula("NaCl").unwrap(), ElementProperty::CovalentRadius, &StatKind::ALL, table).unwrap();
        let expect = (table.get("Na").unwrap().radius_pm + table.get("Cl").unwrap().radius_pm) / 2.0;
        assert_abs_diff_eq!(value(&nacl, "elem_radius_pm_mean"), expect, epsilon = 1e-12);

        // Two elements with equal weight and valence-p counts 1 (B) and 3 (N).
        let bn = elemental_stats(&parse_formula("BN").unwrap(), ElementProperty::ValenceP, &StatKind::ALL, table).unwrap();
        assert_abs_diff_eq!(value(&bn, "elem_np_mean"), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(value(&bn, "elem_np_range"), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(value(&bn, "elem_np_std"), 1.0, epsilon = 1e-12);

        assert!(elemental_stats(&parse_formula("Ar").unwrap(), ElementProperty::Electronegativity, &StatKind::ALL, table).is_err());
    }

    #[test]
    fn matrix_shapes() {
        let recs: Vec<_> = (0..5).map(|_| curated("GaAs", true)).collect();
        let cfg = FeatureConfig::default();
        let table = ElementTable::embedded();
        let m1 = build_matrix(&recs, Phase::I, &cfg, table).unwrap();
        assert_eq!((m1.n_rows(), m1.n_cols()), (5, 12));
        let m2 = build_matrix(&recs, Phase::II, &cfg, table).unwrap();
        assert_eq!(m2.n_cols(), 19);
        let m3 = build_matrix(&recs, Phase::III, &cfg, table).unwrap();
        assert_eq!(m3.n_cols(), 12 + 11 + 30);
        assert_eq!(m3.target(), &[1.1; 5]);
    }

    #[test]
    fn phase3_failure_lists_ids() {
        let mut bad = curated("GaAs", true);
        bad.record.formula = "Qq".into();
        bad.record.id = "broken-7".into();
        let err = build_matrix(&[curated("GaAs", true), bad], Phase::III, &FeatureConfig::default(), ElementTable::embedded())
            .unwrap_err();
        assert!(err.to_string().contains("broken-7"));
    }

    fn arb_formula() -> impl Strategy<Value = String> {
        let symbols = vec!["H", "Li", "O", "Si", "Fe", "Ga", "As", "Cs", "F", "Pb", "La", "Zn", "Pd", "Cu"];
        prop::collection::btree_map(prop::sample::select(symbols), 1u32..6, 1..5).prop_map(|m| {
            m.into_iter().map(|(el, n)| format!("{el}{n}")).collect::<String>()
        })
    }

    proptest! {
        #[test]
        fn descriptor_bounds_and_scale_invariance(formula in arb_formula(), scale in 2u32..5) {
            let table = ElementTable::embedded();
            let cfg = FeatureConfig::default();
            let comp = parse_formula(&formula).unwrap();
            let f = phase3_descriptors(&comp, table, &cfg).unwrap();
            let ion = value(&f, "pauling_ionicity_proxy");
            prop_assert!((0.0..1.0).contains(&ion));
            let hom = value(&f, "atomic_size_homogeneity");
            prop_assert!(hom > 0.0 && hom <= 1.0);
            let uni = value(&f, "atomic_size_uniformity");
            prop_assert!(uni > 0.0 && uni <= 1.0);
            prop_assert!(value(&f, "sp_promotion_index") <= cfg.sp_promotion_clip_max);

            let scaled: String = comp
                .amounts()
                .iter()
                .map(|(el, a)| format!("{el}{}", a.to_integer() * scale as i64))
                .collect();
            let g = phase3_descriptors(&parse_formula(&scaled).unwrap(), table, &cfg).unwrap();
            for ((_, a), (_, b)) in f.iter().zip(&g) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
            let again = phase3_descriptors(&comp, table, &cfg).unwrap();
            prop_assert_eq!(f, again);
        }
    }
}
