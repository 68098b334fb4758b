//! Deterministic synthetic burn cohort.
//!
//! The generator constants below are invented. They give right-skewed LOS,
//! cost and TBSA with LOS and cost driven by burn size, depth, theatre visits
//! and ventilation, which is enough structure to exercise the grouping
//! pipeline. They are not fitted to any real registry.

use indexmap::IndexMap;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ExtraColumn, Schema};
use crate::domain::{
    BurnSiteEntry, Depth, FeatureKind, FeatureValue, PatientRecord, SiteCode, SITE_COUNT,
};
use crate::error::{CasemixError, Result};
use crate::rng::{keyed_rng, tag};

/// Generator settings, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortConfig {
    pub n: usize,
    pub seed: u64,
    /// Proportions of minor, moderate and major burns.
    #[serde(default = "default_severity")]
    pub severity_weights: [f64; 3],
    /// Standard deviation of the log-scale LOS noise.
    #[serde(default = "default_los_noise")]
    pub los_noise: f64,
    /// Standard deviation of the log-scale cost noise.
    #[serde(default = "default_cost_noise")]
    pub cost_noise: f64,
    /// Fraction of records given LOS > 360 or cost > £1,000,000.
    #[serde(default = "default_outlier_rate")]
    pub outlier_rate: f64,
    /// Fraction of records with no burn recorded at any site.
    #[serde(default = "default_unclassifiable_rate")]
    pub unclassifiable_rate: f64,
}

fn default_severity() -> [f64; 3] {
    [0.6, 0.3, 0.1]
}
fn default_los_noise() -> f64 {
    0.35
}
fn default_cost_noise() -> f64 {
    0.25
}
fn default_outlier_rate() -> f64 {
    0.01
}
fn default_unclassifiable_rate() -> f64 {
    0.02
}

impl CohortConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        CohortConfig {
            n,
            seed,
            severity_weights: default_severity(),
            los_noise: default_los_noise(),
            cost_noise: default_cost_noise(),
            outlier_rate: default_outlier_rate(),
            unclassifiable_rate: default_unclassifiable_rate(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(CasemixError::invalid("cohort size n must be at least 1"));
        }
        let w = &self.severity_weights;
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(CasemixError::invalid(format!(
                "severity weights {w:?} must be non-negative and sum to 1"
            )));
        }
        for (name, s) in [("los_noise", self.los_noise), ("cost_noise", self.cost_noise)] {
            if !s.is_finite() || s <= 0.0 {
                return Err(CasemixError::invalid(format!("{name} must be positive, got {s}")));
            }
        }
        for (name, r) in [
            ("outlier_rate", self.outlier_rate),
            ("unclassifiable_rate", self.unclassifiable_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(CasemixError::invalid(format!("{name} must lie in [0,1], got {r}")));
            }
        }
        Ok(())
    }
}

pub const SEX: &str = "sex";
pub const BURN_CAUSE: &str = "burn_cause";
pub const VENTILATED: &str = "ventilated";
pub const MECHANICAL_VENTILATION: &str = "mechanical_ventilation";
pub const INHALATION_INJURY: &str = "inhalation_injury";
pub const FULL_THICKNESS: &str = "full_thickness";
pub const REFERRAL_DELAY: &str = "referral_delay_hours";
pub const ADMISSION_YEAR: &str = "admission_year";
pub const HOSPITAL_CODE: &str = "hospital_code";
pub const COHORT: &str = "cohort";
pub const FOLLOWUP_SCORE: &str = "followup_score";

/// Auxiliary columns emitted by the generator. `admission_year` and
/// `hospital_code` are administrative, `cohort` is constant,
/// `mechanical_ventilation` duplicates `ventilated` and `followup_score` is
/// mostly empty, so preprocessing has something to remove.
pub fn generated_schema() -> Schema {
    let col = |name: &str, kind| ExtraColumn {
        name: name.to_string(),
        kind,
    };
    use FeatureKind::*;
    Schema {
        extra: vec![
            col(SEX, Categorical),
            col(BURN_CAUSE, Categorical),
            col(VENTILATED, Categorical),
            col(MECHANICAL_VENTILATION, Categorical),
            col(INHALATION_INJURY, Categorical),
            col(FULL_THICKNESS, Categorical),
            col(REFERRAL_DELAY, Numeric),
            col(ADMISSION_YEAR, Numeric),
            col(HOSPITAL_CODE, Categorical),
            col(COHORT, Categorical),
            col(FOLLOWUP_SCORE, Numeric),
        ],
    }
}

/// Administrative fields of the generated schema.
pub fn administrative_fields() -> Vec<String> {
    vec![ADMISSION_YEAR.to_string(), HOSPITAL_CODE.to_string()]
}

#[derive(Debug, Clone, Copy)]
enum Severity {
    Minor,
    Moderate,
    Major,
}

fn yes_no(b: bool) -> Option<FeatureValue> {
    Some(FeatureValue::Categorical(if b { "yes" } else { "no" }.to_string()))
}

fn round_to(x: f64, step: f64) -> f64 {
    (x / step).round() * step
}

fn pick<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn generate_record(cfg: &CohortConfig, i: usize) -> PatientRecord {
    let seed = cfg.seed;
    let idx = i as u64;

    let mut out_rng = keyed_rng(seed, idx, tag::OUTLIER);
    let outlier_draw: f64 = out_rng.random();
    let unclassifiable_draw: f64 = out_rng.random();
    let outlier_kind_los: bool = out_rng.random();
    let is_outlier = outlier_draw < cfg.outlier_rate;
    let unclassifiable = unclassifiable_draw < cfg.unclassifiable_rate;

    let severity = match pick(&mut keyed_rng(seed, idx, tag::SEVERITY), &cfg.severity_weights) {
        0 => Severity::Minor,
        1 => Severity::Moderate,
        _ => Severity::Major,
    };

    let mut rng = keyed_rng(seed, idx, tag::TBSA);
    let (mu, sigma, lo, hi): (f64, f64, f64, f64) = match severity {
        Severity::Minor => (1.2f64.ln(), 0.7, 0.1, 5.0),
        Severity::Moderate => (8.0f64.ln(), 0.45, 3.0, 30.0),
        Severity::Major => (28.0f64.ln(), 0.5, 10.0, 95.0),
    };
    let tbsa_raw = LogNormal::new(mu, sigma).unwrap().sample(&mut rng).clamp(lo, hi);
    let tbsa = if unclassifiable {
        0.0
    } else {
        round_to(tbsa_raw, 0.1).max(0.1)
    };

    // Spread the burned area over a random subset of sites.
    let mut burn_sites: Vec<BurnSiteEntry> = SiteCode::all().map(BurnSiteEntry::unburned).collect();
    let mut any_full = false;
    if !unclassifiable {
        let mut rng = keyed_rng(seed, idx, tag::SITES);
        let m = (1 + (tbsa / 4.0) as usize + rng.random_range(0..2)).min(SITE_COUNT);
        let chosen = index::sample(&mut rng, SITE_COUNT, m).into_vec();
        let weights: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = weights.iter().sum();
        let mut assigned = 0.0;
        let mut depth_rng = keyed_rng(seed, idx, tag::DEPTH);
        let depth_p: [f64; 3] = match severity {
            Severity::Minor => [0.55, 0.42, 0.03],
            Severity::Moderate => [0.25, 0.57, 0.18],
            Severity::Major => [0.10, 0.45, 0.45],
        };
        for (j, &site) in chosen.iter().enumerate() {
            let area = if j + 1 == m {
                tbsa - assigned
            } else {
                tbsa * weights[j] / total
            };
            assigned += area;
            let depth = match pick(&mut depth_rng, &depth_p) {
                0 => Depth::Superficial,
                1 => Depth::Partial,
                _ => Depth::Full,
            };
            any_full |= depth == Depth::Full;
            burn_sites[site] = BurnSiteEntry {
                site: SiteCode::new(site as u8 + 1).expect("site index in range"),
                area_pct: Some(area),
                depth: Some(depth),
            };
        }
    }

    let mut ex = keyed_rng(seed, idx, tag::EXTRAS);
    let age = round_to(ex.random_range(0.0..16.0), 0.1).min(15.9);
    let sex = if ex.random::<bool>() { "F" } else { "M" };
    let cause = ["scald", "flame", "contact", "chemical", "electrical"]
        [pick(&mut ex, &[0.55, 0.2, 0.15, 0.05, 0.05])];
    let vent_p = match severity {
        Severity::Minor => 0.005,
        Severity::Moderate => 0.05,
        Severity::Major => 0.45,
    };
    let ventilated = !unclassifiable && ex.random::<f64>() < vent_p;
    let inhal_p = if cause == "flame" { 0.25 } else { 0.01 };
    let inhalation = ex.random::<f64>() < inhal_p;
    let referral_delay = round_to(ex.random_range(0.0..48.0), 0.5);
    let admission_year = f64::from(ex.random_range(2003u32..=2019));
    let hospital = format!("H{:02}", ex.random_range(1u32..=24));
    let followup = if ex.random::<f64>() < 0.75 {
        None
    } else {
        Some(FeatureValue::Numeric(f64::from(ex.random_range(0u32..=10))))
    };

    let lambda = 0.1
        + 0.05 * tbsa
        + if any_full { 1.2 + 0.04 * tbsa } else { 0.0 }
        + if ventilated { 0.6 } else { 0.0 };
    let theatre = Poisson::new(lambda)
        .unwrap()
        .sample(&mut keyed_rng(seed, idx, tag::THEATRE))
        .min(40.0) as u32;

    let log_los = 0.9
        + 0.85 * tbsa.ln_1p()
        + 0.1 * f64::from(theatre)
        + if ventilated { 0.5 } else { 0.0 }
        + Normal::new(0.0, cfg.los_noise)
            .unwrap()
            .sample(&mut keyed_rng(seed, idx, tag::LOS));
    let mut los = log_los.exp_m1().round().clamp(0.0, 300.0);

    let base = 800.0
        + 650.0 * los
        + 5000.0 * f64::from(theatre)
        + if ventilated { 6000.0 + 500.0 * los } else { 0.0 };
    let noise = LogNormal::new(0.0, cfg.cost_noise)
        .unwrap()
        .sample(&mut keyed_rng(seed, idx, tag::COST));
    let mut cost = (base * noise).round().min(950_000.0);

    if is_outlier {
        let mut rng = keyed_rng(seed, idx, tag::OUTLIER ^ 0xff);
        if outlier_kind_los {
            los = f64::from(rng.random_range(361u32..=720));
        } else {
            cost = f64::from(rng.random_range(1_000_001u32..=3_000_000));
        }
    }

    let mut extra = IndexMap::new();
    extra.insert(SEX.to_string(), Some(FeatureValue::Categorical(sex.into())));
    extra.insert(BURN_CAUSE.to_string(), Some(FeatureValue::Categorical(cause.into())));
    extra.insert(VENTILATED.to_string(), yes_no(ventilated));
    extra.insert(MECHANICAL_VENTILATION.to_string(), yes_no(ventilated));
    extra.insert(INHALATION_INJURY.to_string(), yes_no(inhalation));
    extra.insert(FULL_THICKNESS.to_string(), yes_no(any_full));
    extra.insert(REFERRAL_DELAY.to_string(), Some(FeatureValue::Numeric(referral_delay)));
    extra.insert(ADMISSION_YEAR.to_string(), Some(FeatureValue::Numeric(admission_year)));
    extra.insert(HOSPITAL_CODE.to_string(), Some(FeatureValue::Categorical(hospital)));
    extra.insert(COHORT.to_string(), Some(FeatureValue::Categorical("paediatric".into())));
    extra.insert(FOLLOWUP_SCORE.to_string(), followup);

    PatientRecord {
        id: format!("P{:06}", i + 1),
        age_years: Some(age),
        los_days: Some(los),
        total_cost: Some(cost),
        tbsa_pct: Some(tbsa),
        theatre_visits: Some(theatre),
        burn_sites,
        extra_features: extra,
    }
}

/// Generates `config.n` records. Each record draws only from streams keyed
/// by its own index, so the output is identical however work is scheduled.
pub fn generate_cohort(config: &CohortConfig) -> Result<Dataset> {
    config.validate()?;
    let records: Vec<PatientRecord> = (0..config.n)
        .into_par_iter()
        .map(|i| generate_record(config, i))
        .collect();
    Ok(Dataset::new(generated_schema(), records))
}

/// Blanks out a fraction of the cells that hold zero (numeric) or `none`
/// (depth), mimicking registries that leave such fields empty.
pub fn inject_missingness(ds: &Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&rate) || rate.is_nan() {
        return Err(CasemixError::invalid(format!("missingness rate must lie in [0,1], got {rate}")));
    }
    let records = ds
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = keyed_rng(seed, i as u64, tag::MISSING);
            let mut hit = |eligible: bool| {
                let u: f64 = rng.random();
                eligible && u < rate
            };
            let mut r = r.clone();
            for field in [&mut r.age_years, &mut r.los_days, &mut r.total_cost, &mut r.tbsa_pct] {
                if hit(*field == Some(0.0)) {
                    *field = None;
                }
            }
            if hit(r.theatre_visits == Some(0)) {
                r.theatre_visits = None;
            }
            for s in &mut r.burn_sites {
                if hit(s.area_pct == Some(0.0)) {
                    s.area_pct = None;
                }
                if hit(s.depth == Some(Depth::None)) {
                    s.depth = None;
                }
            }
            for v in r.extra_features.values_mut() {
                if hit(matches!(v, Some(FeatureValue::Numeric(x)) if *x == 0.0)) {
                    *v = None;
                }
            }
            r
        })
        .collect();
    Ok(Dataset {
        schema: ds.schema.clone(),
        records,
        labels: ds.labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_record;

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn zero_records_rejected() {
        assert!(generate_cohort(&CohortConfig::new(0, 1)).is_err());
    }

    #[test]
    fn bad_weights_rejected() {
        let mut cfg = CohortConfig::new(10, 1);
        cfg.severity_weights = [0.5, 0.5, 0.5];
        assert!(generate_cohort(&cfg).is_err());
        let mut cfg = CohortConfig::new(10, 1);
        cfg.cost_noise = 0.0;
        assert!(generate_cohort(&cfg).is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = CohortConfig::new(300, 7);
        let a = generate_cohort(&cfg).unwrap();
        let b = generate_cohort(&cfg).unwrap();
        assert_eq!(a.to_csv_string().unwrap(), b.to_csv_string().unwrap());
        let c = generate_cohort(&CohortConfig::new(300, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_is_stable_under_larger_n() {
        let small = generate_cohort(&CohortConfig::new(50, 3)).unwrap();
        let large = generate_cohort(&CohortConfig::new(120, 3)).unwrap();
        assert_eq!(small.records[..], large.records[..50]);
    }

    #[test]
    fn records_are_valid_and_sites_sum_to_tbsa() {
        let ds = generate_cohort(&CohortConfig::new(2000, 11)).unwrap();
        for r in &ds.records {
            let v = validate_record(r, &ds.schema);
            assert!(v.is_ok(), "{}: {:?}", r.id, v.violations);
            assert!((r.site_area_sum() - r.tbsa_pct.unwrap()).abs() <= 1e-6, "{}", r.id);
            assert!(r.age_years.unwrap() < 16.0);
        }
    }

    #[test]
    fn log_los_tracks_log_tbsa() {
        // Observed 0.8961 when the generator constants were fixed.
        let ds = generate_cohort(&CohortConfig::new(5000, 42)).unwrap();
        let keep: Vec<&PatientRecord> = ds.records.iter().collect();
        let los: Vec<f64> = keep.iter().map(|r| r.los_days.unwrap().ln_1p()).collect();
        let tbsa: Vec<f64> = keep.iter().map(|r| r.tbsa_pct.unwrap().ln_1p()).collect();
        let rho = pearson(&los, &tbsa);
        assert!(rho >= 0.5, "rho = {rho}");
        assert!((rho - PINNED_LOS_TBSA_CORRELATION).abs() <= 0.05, "rho = {rho}");
    }

    const PINNED_LOS_TBSA_CORRELATION: f64 = 0.8961;

    #[test]
    fn outlier_count_within_four_sigma() {
        for &(n, r) in &[(5000usize, 0.01f64), (4000, 0.05), (3000, 0.2)] {
            let mut cfg = CohortConfig::new(n, 99);
            cfg.outlier_rate = r;
            let ds = generate_cohort(&cfg).unwrap();
            let count = ds
                .records
                .iter()
                .filter(|x| x.los_days.unwrap() > 360.0 || x.total_cost.unwrap() > 1_000_000.0)
                .count() as f64;
            let expected = r * n as f64;
            let sigma = (n as f64 * r * (1.0 - r)).sqrt();
            assert!((count - expected).abs() <= 4.0 * sigma, "n={n} r={r} count={count}");
        }
    }

    #[test]
    fn missingness_identity_and_full() {
        let ds = generate_cohort(&CohortConfig::new(100, 5)).unwrap();
        assert_eq!(inject_missingness(&ds, 0.0, 1).unwrap(), ds);

        let all = inject_missingness(&ds, 1.0, 1).unwrap();
        for r in &all.records {
            assert!(r.burn_sites.iter().all(|s| s.area_pct != Some(0.0)));
            assert!(r.burn_sites.iter().all(|s| s.depth != Some(Depth::None)));
            assert_ne!(r.theatre_visits, Some(0));
        }
        assert!(inject_missingness(&ds, 1.5, 1).is_err());
        assert!(inject_missingness(&ds, -0.1, 1).is_err());
    }

    #[test]
    fn missingness_is_deterministic_per_seed() {
        let ds = generate_cohort(&CohortConfig::new(200, 5)).unwrap();
        let a = inject_missingness(&ds, 0.1, 9).unwrap();
        let b = inject_missingness(&ds, 0.1, 9).unwrap();
        let c = inject_missingness(&ds, 0.1, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, ds);
    }
}
