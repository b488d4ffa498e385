//! Synthetic fixtures with a planted leak column.
//!
//! Matrix form: latent features `z_j ~ N(0, 1)` for `j < p_clean`,
//!
//! ```text
//! signal = Σ_j z_j / (1 + j) + 0.5 Σ_{j even, j+1 < p} z_j z_{j+1}
//! target = signal + N(0, (target_noise · std(signal))²)
//! leak   = target + N(0, (leak_noise · std(target))²)
//! ```
//!
//! Draw order is fixed: all latents row by row, then target noise, then leak
//! noise, all from one [`XorShift64Star`] stream seeded with `seed`.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::*;
use crate::matrix::FeatureMatrix;
use crate::rng::XorShift64Star;

pub const LEAK_COLUMN: &str = "leak";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub p_clean: usize,
    pub leak_noise_fraction: f64,
    /// Irreducible noise on the target relative to the signal std; 0 gives a noiseless target.
    pub target_noise_fraction: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(n: usize, p_clean: usize, leak_noise_fraction: f64, seed: u64) -> Self {
        Self {
            n,
            p_clean,
            leak_noise_fraction,
            target_noise_fraction: 0.25,
            seed,
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.target_noise_fraction = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMatrix {
    /// Clean features `x0..` and the target.
    pub clean: FeatureMatrix,
    pub leak: Vec<f64>,
}

impl SynthMatrix {
    pub fn with_leak(&self) -> FeatureMatrix {
        self.clean
            .with_column(LEAK_COLUMN, &self.leak)
            .expect("leak column matches the clean matrix")
    }
}

fn std_pop(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn normal(rng: &mut XorShift64Star) -> f64 {
    StandardNormal.sample(rng)
}

pub fn synth_matrix(spec: &SynthSpec) -> Result<SynthMatrix> {
    if spec.n < 50 || spec.p_clean < 3 {
        return Err(Error::InvalidInput(format!(
            "synthetic data needs n >= 50 and p_clean >= 3, got n={} p_clean={}",
            spec.n, spec.p_clean
        )));
    }
    if !(spec.leak_noise_fraction > 0.0 && spec.leak_noise_fraction.is_finite()) {
        return Err(Error::InvalidInput("leak_noise_fraction must be > 0".into()));
    }
    if !(spec.target_noise_fraction >= 0.0) {
        return Err(Error::InvalidInput("target_noise_fraction must be >= 0".into()));
    }
    let (n, p) = (spec.n, spec.p_clean);
    let mut rng = XorShift64Star::seed_from(spec.seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| normal(&mut rng)).collect()).collect();
    let signal: Vec<f64> = rows
        .iter()
        .map(|z| {
            let linear: f64 = z.iter().enumerate().map(|(j, v)| v / (1.0 + j as f64)).sum();
            let pairs: f64 = (0..p - 1).step_by(2).map(|j| z[j] * z[j + 1]).sum();
            linear + 0.5 * pairs
        })
        .collect();
    let sd_signal = std_pop(&signal);
    let target: Vec<f64> = signal
        .iter()
        .map(|s| s + spec.target_noise_fraction * sd_signal * normal(&mut rng))
        .collect();
    let sd_target = std_pop(&target);
    let leak: Vec<f64> = target
        .iter()
        .map(|t| t + spec.leak_noise_fraction * sd_target * normal(&mut rng))
        .collect();
    let names = (0..p).map(|j| format!("x{j}")).collect();
    let ids = (0..n).map(|i| format!("syn-{i}")).collect();
    let clean = FeatureMatrix::new(names, rows, target, ids, None)?.with_target_name("target");
    Ok(SynthMatrix { clean, leak })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthRecordsSpec {
    pub n: usize,
    /// Noise on the effective-mass columns relative to the bandgap std.
    pub leak_noise_fraction: f64,
    pub seed: u64,
    /// Share of records corrupted so that curation removes them.
    pub invalid_fraction: f64,
    /// Share of extra higher-energy polymorphs of earlier compositions.
    pub duplicate_fraction: f64,
}

impl SynthRecordsSpec {
    pub fn new(n: usize, leak_noise_fraction: f64, seed: u64) -> Self {
        Self {
            n,
            leak_noise_fraction,
            seed,
            invalid_fraction: 0.1,
            duplicate_fraction: 0.05,
        }
    }
}

const FORMULA_POOL: [&str; 40] = [
    "Li", "Be", "B", "C", "N", "O", "F", "Na", "Mg", "Al", "Si", "P", "S", "Cl", "K", "Ca", "Ti",
    "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge", "As", "Se", "Br", "Sr", "Zr", "Nb",
    "Mo", "Ag", "Cd", "In", "Sn", "Sb", "Te",
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn random_formula(rng: &mut XorShift64Star) -> String {
    let k = 2 + rng.below(2) as usize;
    let mut idx: Vec<usize> = (0..FORMULA_POOL.len()).collect();
    for i in 0..k {
        let j = i + rng.below((idx.len() - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx[..k]
        .iter()
        .map(|&e| {
            let c = 1 + rng.below(4);
            if c == 1 {
                FORMULA_POOL[e].to_string()
            } else {
                format!("{}{c}", FORMULA_POOL[e])
            }
        })
        .collect()
}

/// Realistic-looking records whose gap is a smooth function of the
/// descriptors plus a hidden latent term, and whose effective masses encode
/// the full gap plus noise.
pub fn synth_records(spec: &SynthRecordsSpec) -> Result<Vec<RawRecord>> {
    if spec.n < 50 {
        return Err(Error::InvalidInput("synthetic records need n >= 50".into()));
    }
    if !(spec.leak_noise_fraction > 0.0) {
        return Err(Error::InvalidInput("leak_noise_fraction must be > 0".into()));
    }
    if !(0.0..1.0).contains(&spec.invalid_fraction) || !(0.0..1.0).contains(&spec.duplicate_fraction) {
        return Err(Error::InvalidInput("fractions must lie in [0, 1)".into()));
    }
    let mut rng = XorShift64Star::seed_from(spec.seed);
    let n = spec.n;

    struct Draft {
        formula: String,
        z: [f64; 6],
        nat: f64,
        spg: f64,
        is_3d: bool,
        visible_gap: f64,
        gap: f64,
    }
    let mut drafts: Vec<Draft> = (0..n)
        .map(|_| {
            let formula = random_formula(&mut rng);
            let mut z = [0.0; 6];
            z.iter_mut().for_each(|v| *v = normal(&mut rng));
            let nat = (1 + rng.below(24)) as f64;
            let spg = (1 + rng.below(230)) as f64;
            let is_3d = rng.next_f64() < 0.85;
            let visible = 1.2 + 1.1 * z[0] - 0.7 * z[2] + 0.4 * z[3] * z[4] + 0.3 * z[5];
            // The hidden term reaches the gap but no descriptor, capping what
            // a leak-free model can explain.
            let hidden = 0.9 * normal(&mut rng);
            let gap = softplus(visible + hidden) + 0.1 * normal(&mut rng);
            Draft {
                formula,
                z,
                nat,
                spg,
                is_3d,
                visible_gap: softplus(visible),
                gap: gap.max(0.0),
            }
        })
        .collect();
    let gaps: Vec<f64> = drafts.iter().map(|d| d.gap).collect();
    let sd_gap = std_pop(&gaps);

    let mut records = Vec::with_capacity(n);
    for (i, d) in drafts.iter_mut().enumerate() {
        let z = d.z;
        let bulk = 20.0 + 200.0 * sigmoid(z[2]);
        let shear = bulk * (0.25 + 0.35 * sigmoid(z[4]));
        let poisson = 0.15 + 0.3 * sigmoid(-z[4] + 0.2 * normal(&mut rng));
        let eps_base = 1.0 + 20.0 / (1.0 + d.visible_gap).powi(2);
        let eps: Vec<f64> = (0..3)
            .map(|_| (eps_base * (1.0 + 0.05 * normal(&mut rng))).clamp(1.0, 95.0))
            .collect();
        let efg = 1e21 * (0.5 + sigmoid(z[1]));
        let mut r = RawRecord::new(format!("syn-{i:05}"), d.formula.clone())
            .with_number(FORMATION_ENERGY, -0.2 - 2.0 * sigmoid(z[1]))
            .with_number(EHULL, 0.05 * z[5].abs())
            .with_number(DENSITY, 2.0 + 6.0 * sigmoid(z[3]))
            .with_number(NAT, d.nat)
            .with_text(DIMENSIONALITY, if d.is_3d { "3D-bulk" } else { "2D-bulk" })
            .with_number(SPG_NUMBER, d.spg)
            .with_number(BULK_MODULUS, bulk)
            .with_number(SHEAR_MODULUS, shear)
            .with_number(POISSON, poisson)
            .with_number(EPSX, eps[0])
            .with_number(EPSY, eps[1])
            .with_number(EPSZ, eps[2])
            .with_number(BANDGAP, d.gap);
        r = if i % 3 == 0 {
            let tensor = serde_json::json!([[[efg, -0.4 * efg, 0.0], [-0.4 * efg, -0.6 * efg, 0.0], [0.0, 0.0, -0.4 * efg]]]);
            r.with(EFG_TENSOR, Value::Tensor(tensor))
        } else {
            r.with_number(MAX_EFG, efg)
        };
        let elec = 0.2 + 0.1 * (d.gap + spec.leak_noise_fraction * sd_gap * normal(&mut rng));
        let hole = 0.3 + 0.12 * (d.gap + spec.leak_noise_fraction * sd_gap * normal(&mut rng));
        if rng.next_f64() < 0.9 {
            r = r.with_number(AVG_ELEC_MASS, elec).with_number(AVG_HOLE_MASS, hole);
        } else {
            r = r.with_text(AVG_ELEC_MASS, "na").with_text(AVG_HOLE_MASS, "na");
        }
        if rng.next_f64() < spec.invalid_fraction {
            r = match rng.below(6) {
                0 => r.with_text(BULK_MODULUS, "na"),
                1 => r.with_number(POISSON, 0.62),
                2 => r.with_text(DIMENSIONALITY, "1D"),
                3 => r.with_number(EPSY, 180.0),
                4 => r.with_number(FORMATION_ENERGY, 0.4),
                _ => r.with_text(BANDGAP, "None"),
            };
        }
        records.push(r);
    }

    let n_dup = (spec.duplicate_fraction * n as f64).round() as usize;
    for k in 0..n_dup {
        let src = rng.below(n as u64) as usize;
        let mut dup = records[src].clone();
        dup.id = format!("syn-dup-{k:05}");
        if let Some(e) = dup.number(FORMATION_ENERGY) {
            dup = dup.with_number(FORMATION_ENERGY, e + 0.05 + 0.1 * rng.next_f64());
        }
        records.push(dup);
    }
    Ok(records)
}
