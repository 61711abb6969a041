//! SDR effect sizes, direction correction, ground-truth recovery and zone
//! classification computed from fitted latent trait estimates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::{Condition, Format, TraitDomain};
use crate::irt::artifact::{FitArtifact, ThetaRow};
use crate::persona::PersonaSet;
use crate::stats::{self, StatsError};

const TRAITS: usize = 5;

/// Shift spreads at or below this are indistinguishable from optimizer noise:
/// θ̂ is only determined to about this precision, so d_z would be noise/noise.
pub const SHIFT_RESOLUTION: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("persona `{persona}` of respondent `{respondent}` has no {missing} counterpart")]
    UnpairedPersona { respondent: String, persona: String, missing: &'static str },
    #[error("persona `{persona}` of respondent `{respondent}` appears more than once")]
    DuplicatePersona { respondent: String, persona: String },
    #[error("persona `{0}` is not in the persona set")]
    UnknownPersona(String),
    #[error("need at least {needed} personas, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("zero variance: the statistic is undefined")]
    ZeroVariance,
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// A statistic that may be undefined; undefined values carry their reason
/// instead of being coerced to zero or infinity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Metric {
    pub fn defined(v: f64) -> Self {
        Metric { value: Some(v), reason: None }
    }

    pub fn undefined(reason: impl Into<String>) -> Self {
        Metric { value: None, reason: Some(reason.into()) }
    }

    pub fn from_result<E: std::fmt::Display>(r: Result<f64, E>) -> Self {
        match r {
            Ok(v) => Metric::defined(v),
            Err(e) => Metric::undefined(e.to_string()),
        }
    }

    pub fn map(&self, f: impl FnOnce(f64) -> f64) -> Self {
        match self.value {
            Some(v) => Metric::defined(f(v)),
            None => self.clone(),
        }
    }

    /// Unweighted mean of the values; undefined if any input is.
    pub fn mean<'a>(items: impl IntoIterator<Item = (&'a str, &'a Metric)>) -> Self {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (label, m) in items {
            match m.value {
                Some(v) => {
                    sum += v;
                    n += 1;
                }
                None => return Metric::undefined(format!("{label} is undefined")),
            }
        }
        if n == 0 {
            return Metric::undefined("no values");
        }
        Metric::defined(sum / n as f64)
    }
}

/// Within-persona shifts Δ = θ̂_fake − θ̂_honest for one respondent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTable {
    pub respondent_id: String,
    /// Sorted by persona id.
    pub persona_ids: Vec<String>,
    /// Trait order A, C, E, N, O.
    pub deltas: Vec<[f64; TRAITS]>,
}

impl ShiftTable {
    pub fn n(&self) -> usize {
        self.deltas.len()
    }

    pub fn trait_column(&self, t: TraitDomain) -> Vec<f64> {
        self.deltas.iter().map(|d| d[t.index()]).collect()
    }
}

fn keyed(rows: &[&ThetaRow], respondent: &str) -> Result<BTreeMap<String, [f64; TRAITS]>, MetricsError> {
    let mut map = BTreeMap::new();
    for r in rows {
        if map.insert(r.persona_id.clone(), r.theta).is_some() {
            return Err(MetricsError::DuplicatePersona {
                respondent: respondent.to_string(),
                persona: r.persona_id.clone(),
            });
        }
    }
    Ok(map)
}

/// Persona-aligned difference of fake-good and honest θ̂ rows of the same
/// respondent. Every persona must appear exactly once on each side.
pub fn shift_table(fake: &[ThetaRow], honest: &[ThetaRow]) -> Result<ShiftTable, MetricsError> {
    let respondent = fake.first().or(honest.first()).map(|r| r.respondent_id.clone()).unwrap_or_default();
    let fake_rows: Vec<&ThetaRow> = fake.iter().collect();
    let honest_rows: Vec<&ThetaRow> = honest.iter().collect();
    let f = keyed(&fake_rows, &respondent)?;
    let h = keyed(&honest_rows, &respondent)?;
    for r in fake.iter().chain(honest) {
        if r.respondent_id != respondent {
            return Err(MetricsError::UnpairedPersona {
                respondent: r.respondent_id.clone(),
                persona: r.persona_id.clone(),
                missing: "same-respondent",
            });
        }
    }
    if let Some(p) = f.keys().find(|p| !h.contains_key(*p)) {
        return Err(MetricsError::UnpairedPersona { respondent, persona: p.clone(), missing: "honest" });
    }
    if let Some(p) = h.keys().find(|p| !f.contains_key(*p)) {
        return Err(MetricsError::UnpairedPersona { respondent, persona: p.clone(), missing: "fake-good" });
    }
    let persona_ids: Vec<String> = f.keys().cloned().collect();
    let deltas = persona_ids.iter().map(|p| std::array::from_fn(|t| f[p][t] - h[p][t])).collect();
    Ok(ShiftTable { respondent_id: respondent, persona_ids, deltas })
}

/// Rows of `fit` for one respondent and condition.
pub fn theta_rows(fit: &FitArtifact, respondent: &str, condition: Condition) -> Vec<ThetaRow> {
    fit.theta.iter().filter(|r| r.respondent_id == respondent && r.condition == condition).cloned().collect()
}

/// Respondent ids present in a fit, sorted.
pub fn respondents(fit: &FitArtifact) -> Vec<String> {
    let mut ids: Vec<String> = fit.theta.iter().map(|r| r.respondent_id.clone()).collect();
    ids.sort();
    ids.dedup();
    ids
}

impl ShiftTable {
    /// Shift table of one respondent from a pooled fit holding both conditions.
    pub fn from_fit(fit: &FitArtifact, respondent: &str) -> Result<Self, MetricsError> {
        let fake = theta_rows(fit, respondent, Condition::FakeGood);
        let honest = theta_rows(fit, respondent, Condition::Honest);
        let mut table = shift_table(&fake, &honest)?;
        table.respondent_id = respondent.to_string();
        Ok(table)
    }
}

/// Cohen's d_z for dependent means: mean(Δ) / sd(Δ), sd with the n−1 denominator.
pub fn cohens_dz(deltas: &[f64]) -> Result<f64, MetricsError> {
    if deltas.len() < 2 {
        return Err(MetricsError::TooFew { needed: 2, got: deltas.len() });
    }
    if deltas.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    let sd = stats::sample_sd(deltas);
    if !(sd > 0.0) {
        return Err(MetricsError::ZeroVariance);
    }
    Ok(stats::mean(deltas) / sd)
}

/// d̃_z = g_t · d_z: positive values always mean a shift toward the socially
/// desirable pole.
pub fn direction_correct(d_z: f64, t: TraitDomain) -> f64 {
    t.desirability_direction() * d_z
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitEffect {
    #[serde(rename = "trait")]
    pub domain: TraitDomain,
    pub n: usize,
    pub mean_shift: f64,
    pub max_abs_shift: f64,
    pub d_z: Metric,
    pub direction: f64,
    pub d_tilde: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSummary {
    pub respondent_id: String,
    pub format: Format,
    pub traits: Vec<TraitEffect>,
    /// Unweighted mean of the five per-trait d̃_z.
    pub aggregate_d_tilde: Metric,
}

impl EffectSummary {
    pub fn trait_effect(&self, t: TraitDomain) -> &TraitEffect {
        &self.traits[t.index()]
    }

    /// True when no persona moved on any trait beyond the estimator resolution.
    pub fn is_null_shift(&self) -> bool {
        self.traits.iter().all(|t| t.max_abs_shift <= SHIFT_RESOLUTION)
    }
}

pub fn effect_summary(table: &ShiftTable, format: Format) -> EffectSummary {
    let traits: Vec<TraitEffect> = TraitDomain::ALL
        .iter()
        .map(|&t| {
            let col = table.trait_column(t);
            let d_z = if col.len() >= 2 && stats::sample_sd(&col) <= SHIFT_RESOLUTION {
                Metric::undefined(format!("{}; shift spread below estimator resolution", MetricsError::ZeroVariance))
            } else {
                Metric::from_result(cohens_dz(&col))
            };
            TraitEffect {
                domain: t,
                n: col.len(),
                mean_shift: if col.is_empty() { f64::NAN } else { stats::mean(&col) },
                max_abs_shift: col.iter().fold(0.0, |m, v| m.max(v.abs())),
                d_tilde: d_z.map(|d| direction_correct(d, t)),
                direction: t.desirability_direction(),
                d_z,
            }
        })
        .collect();
    let aggregate_d_tilde = Metric::mean(traits.iter().map(|e| (e.domain.label(), &e.d_tilde)));
    EffectSummary { respondent_id: table.respondent_id.clone(), format, traits, aggregate_d_tilde }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitRecovery {
    #[serde(rename = "trait")]
    pub domain: TraitDomain,
    pub r: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub respondent_id: String,
    pub condition: Condition,
    pub n: usize,
    pub traits: Vec<TraitRecovery>,
    /// Unweighted mean of the per-trait r.
    pub mean_r: Metric,
}

impl RecoveryReport {
    pub fn trait_r(&self, t: TraitDomain) -> &Metric {
        &self.traits[t.index()].r
    }
}

/// Per-trait Pearson correlation between θ̂ and the persona's target z
/// across personas. A constant column yields an undefined r for that trait.
pub fn recovery(rows: &[ThetaRow], personas: &PersonaSet) -> Result<RecoveryReport, MetricsError> {
    if rows.len() < 3 {
        return Err(MetricsError::TooFew { needed: 3, got: rows.len() });
    }
    let respondent = rows[0].respondent_id.clone();
    let condition = rows[0].condition;
    let mut z = Vec::with_capacity(rows.len());
    for r in rows {
        let p = personas.get(&r.persona_id).ok_or_else(|| MetricsError::UnknownPersona(r.persona_id.clone()))?;
        z.push(p.z);
    }
    let traits: Vec<TraitRecovery> = TraitDomain::ALL
        .iter()
        .map(|&t| {
            let est: Vec<f64> = rows.iter().map(|r| r.theta[t.index()]).collect();
            let tru: Vec<f64> = z.iter().map(|v| v[t.index()]).collect();
            TraitRecovery { domain: t, r: Metric::from_result(stats::pearson(&est, &tru)) }
        })
        .collect();
    let mean_r = Metric::mean(traits.iter().map(|e| (e.domain.label(), &e.r)));
    Ok(RecoveryReport { respondent_id: respondent, condition, n: rows.len(), traits, mean_r })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdrZone {
    Recommended,
    Caution,
    Avoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecoveryZone {
    Strong,
    Acceptable,
    Insufficient,
}

impl SdrZone {
    pub fn as_str(self) -> &'static str {
        match self {
            SdrZone::Recommended => "recommended",
            SdrZone::Caution => "caution",
            SdrZone::Avoid => "avoid",
        }
    }
}

impl RecoveryZone {
    pub fn as_str(self) -> &'static str {
        match self {
            RecoveryZone::Strong => "strong",
            RecoveryZone::Acceptable => "acceptable",
            RecoveryZone::Insufficient => "insufficient",
        }
    }
}

pub const SDR_NEGLIGIBLE: f64 = 0.2;
pub const SDR_MEDIUM: f64 = 0.5;
pub const RECOVERY_STRONG: f64 = 0.70;
pub const RECOVERY_ACCEPTABLE: f64 = 0.50;

/// |d̃_z| ≤ 0.2 recommended, ≤ 0.5 caution, otherwise avoid.
pub fn sdr_zone(d_tilde: f64) -> SdrZone {
    let a = d_tilde.abs();
    if a <= SDR_NEGLIGIBLE {
        SdrZone::Recommended
    } else if a <= SDR_MEDIUM {
        SdrZone::Caution
    } else {
        SdrZone::Avoid
    }
}

/// r ≥ 0.70 strong, ≥ 0.50 acceptable, otherwise insufficient.
pub fn recovery_zone(r: f64) -> RecoveryZone {
    if r >= RECOVERY_STRONG {
        RecoveryZone::Strong
    } else if r >= RECOVERY_ACCEPTABLE {
        RecoveryZone::Acceptable
    } else {
        RecoveryZone::Insufficient
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitZones {
    #[serde(rename = "trait")]
    pub domain: TraitDomain,
    pub sdr: Option<SdrZone>,
    pub recovery: Option<RecoveryZone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneLabels {
    pub traits: Vec<TraitZones>,
    pub aggregate_sdr: Option<SdrZone>,
    pub aggregate_recovery: Option<RecoveryZone>,
}

/// Zone labels per trait and for the aggregates; undefined statistics get no label.
pub fn classify_zones(effect: &EffectSummary, rec: &RecoveryReport) -> ZoneLabels {
    let traits = TraitDomain::ALL
        .iter()
        .map(|&t| TraitZones {
            domain: t,
            sdr: effect.trait_effect(t).d_tilde.value.map(sdr_zone),
            recovery: rec.trait_r(t).value.map(recovery_zone),
        })
        .collect();
    ZoneLabels {
        traits,
        aggregate_sdr: effect.aggregate_d_tilde.value.map(sdr_zone),
        aggregate_recovery: rec.mean_r.value.map(recovery_zone),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub n: usize,
    pub pearson: f64,
    pub spearman: f64,
    /// 95% Fisher-z interval for the Pearson r; needs n ≥ 4.
    pub pearson_ci95: Option<(f64, f64)>,
}

/// Pearson and Spearman correlations of paired samples (n ≥ 3).
pub fn correlations(x: &[f64], y: &[f64]) -> Result<Correlations, MetricsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()).into());
    }
    if x.len() < 3 {
        return Err(MetricsError::TooFew { needed: 3, got: x.len() });
    }
    let pearson = stats::pearson(x, y)?;
    let spearman = stats::spearman(x, y)?;
    let pearson_ci95 = stats::fisher_ci(pearson, x.len(), 0.95).ok();
    Ok(Correlations { n: x.len(), pearson, spearman, pearson_ci95 })
}

/// One point of the SDR–recovery trade-off: aggregate d̃_z against the mean
/// honest-condition recovery for a respondent and format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub respondent_id: String,
    pub format: Format,
    pub aggregate_d_tilde: Metric,
    pub mean_r: Metric,
    pub sdr_zone: Option<SdrZone>,
    pub recovery_zone: Option<RecoveryZone>,
}

pub fn tradeoff_point(effect: &EffectSummary, rec: &RecoveryReport) -> TradeoffPoint {
    TradeoffPoint {
        respondent_id: effect.respondent_id.clone(),
        format: effect.format,
        aggregate_d_tilde: effect.aggregate_d_tilde.clone(),
        mean_r: rec.mean_r.clone(),
        sdr_zone: effect.aggregate_d_tilde.value.map(sdr_zone),
        recovery_zone: rec.mean_r.value.map(recovery_zone),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::persona::{Persona, TraitCovariance};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn row(p: &str, c: Condition, theta: [f64; 5]) -> ThetaRow {
        ThetaRow { respondent_id: "m".into(), persona_id: p.into(), condition: c, theta }
    }

    fn personas(z: &[[f64; 5]]) -> PersonaSet {
        PersonaSet {
            seed: 0,
            covariance: TraitCovariance { matrix: [[0.0; 5]; 5] },
            personas: z
                .iter()
                .enumerate()
                .map(|(i, z)| Persona {
                    id: format!("P{i:03}"),
                    z: *z,
                    stanines: [5; 5],
                    description: String::new(),
                })
                .collect(),
        }
    }

    fn random_z(n: usize, seed: u64) -> Vec<[f64; 5]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| std::array::from_fn(|_| rng.sample(StandardNormal))).collect()
    }

    #[test]
    fn identical_fits_give_zero_shifts() {
        let z = random_z(4, 1);
        let honest: Vec<ThetaRow> =
            z.iter().enumerate().map(|(i, t)| row(&format!("P{i:03}"), Condition::Honest, *t)).collect();
        let fake: Vec<ThetaRow> =
            honest.iter().map(|r| ThetaRow { condition: Condition::FakeGood, ..r.clone() }).collect();
        let table = shift_table(&fake, &honest).unwrap();
        assert_eq!(table.n(), 4);
        assert!(table.deltas.iter().flatten().all(|d| *d == 0.0));
    }

    #[test]
    fn shift_on_one_trait_is_isolated() {
        let z = random_z(5, 2);
        let honest: Vec<ThetaRow> =
            z.iter().enumerate().map(|(i, t)| row(&format!("P{i:03}"), Condition::Honest, *t)).collect();
        // reverse order on the fake side: alignment is by persona id
        let fake: Vec<ThetaRow> = honest
            .iter()
            .rev()
            .map(|r| {
                let mut t = r.theta;
                t[TraitDomain::N.index()] += 0.3;
                ThetaRow { condition: Condition::FakeGood, theta: t, ..r.clone() }
            })
            .collect();
        let table = shift_table(&fake, &honest).unwrap();
        for d in &table.deltas {
            for t in TraitDomain::ALL {
                let want = if t == TraitDomain::N { 0.3 } else { 0.0 };
                assert!((d[t.index()] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unpaired_persona_is_an_error() {
        let honest = vec![row("P000", Condition::Honest, [0.0; 5]), row("P001", Condition::Honest, [0.0; 5])];
        let fake = vec![row("P000", Condition::FakeGood, [0.0; 5])];
        assert!(matches!(
            shift_table(&fake, &honest),
            Err(MetricsError::UnpairedPersona { missing: "fake-good", .. })
        ));
        assert!(matches!(
            shift_table(&honest[..1], &honest[..1].iter().chain(&honest[..1]).cloned().collect::<Vec<_>>()),
            Err(MetricsError::DuplicatePersona { .. })
        ));
    }

    #[test]
    fn cohens_dz_examples() {
        assert!((cohens_dz(&[1.0, 2.0, 3.0]).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(cohens_dz(&[0.5, 0.5, 0.5]), Err(MetricsError::ZeroVariance));
        assert_eq!(cohens_dz(&[1.0]), Err(MetricsError::TooFew { needed: 2, got: 1 }));
        let x = [0.3, -1.2, 2.5, 0.7];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(cohens_dz(&neg).unwrap(), -cohens_dz(&x).unwrap());
        let scaled: Vec<f64> = x.iter().map(|v| 3.7 * v).collect();
        assert!((cohens_dz(&scaled).unwrap() - cohens_dz(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn direction_correction() {
        assert_eq!(direction_correct(-0.8, TraitDomain::N), 0.8);
        assert_eq!(direction_correct(0.3, TraitDomain::A), 0.3);
        for t in TraitDomain::ALL {
            assert_eq!(direction_correct(0.0, t), 0.0);
            assert_eq!(direction_correct(direction_correct(0.42, t), t), 0.42);
        }
    }

    #[test]
    fn effect_summary_aggregates_unweighted_mean() {
        let table = ShiftTable {
            respondent_id: "m".into(),
            persona_ids: vec!["a".into(), "b".into(), "c".into()],
            deltas: vec![[1.0, 0.0, 0.2, -1.0, 2.0], [2.0, 1.0, 0.4, -2.0, 2.0], [3.0, 5.0, 0.9, -3.0, 2.1]],
        };
        let e = effect_summary(&table, Format::Likert);
        assert_eq!(e.trait_effect(TraitDomain::A).d_z.value, Some(2.0));
        assert_eq!(e.trait_effect(TraitDomain::N).d_z.value, Some(-2.0));
        assert_eq!(e.trait_effect(TraitDomain::N).d_tilde.value, Some(2.0));
        let mean = e.traits.iter().map(|t| t.d_tilde.value.unwrap()).sum::<f64>() / 5.0;
        assert!((e.aggregate_d_tilde.value.unwrap() - mean).abs() < 1e-15);

        let mut flat = table.clone();
        for d in &mut flat.deltas {
            d[1] = 0.5;
        }
        let e = effect_summary(&flat, Format::Gfc);
        let c = &e.trait_effect(TraitDomain::C).d_tilde;
        assert_eq!(c.value, None);
        assert!(c.reason.as_deref().unwrap().contains("zero variance"));
        assert_eq!(e.aggregate_d_tilde.value, None);
        assert!(!e.is_null_shift());
        let json = serde_json::to_value(&e).unwrap();
        assert!(json["traits"][1]["d_z"]["value"].is_null());

        // optimizer-level noise is not an effect
        let mut noise = table.clone();
        for (i, d) in noise.deltas.iter_mut().enumerate() {
            *d = [1e-10 * i as f64; 5];
        }
        let e = effect_summary(&noise, Format::Gfc);
        assert!(e.is_null_shift());
        assert!(e.traits.iter().all(|t| t.d_tilde.value.is_none()));
    }

    #[test]
    fn recovery_identity_and_negation() {
        let z = random_z(20, 3);
        let set = personas(&z);
        let rows: Vec<ThetaRow> =
            z.iter().enumerate().map(|(i, t)| row(&format!("P{i:03}"), Condition::Honest, *t)).collect();
        let rep = recovery(&rows, &set).unwrap();
        assert!(rep.traits.iter().all(|t| (t.r.value.unwrap() - 1.0).abs() < 1e-12));
        let neg: Vec<ThetaRow> = rows
            .iter()
            .map(|r| ThetaRow { theta: r.theta.map(|v| -v), ..r.clone() })
            .collect();
        let rep = recovery(&neg, &set).unwrap();
        assert!(rep.traits.iter().all(|t| (t.r.value.unwrap() + 1.0).abs() < 1e-12));
        assert!((rep.mean_r.value.unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovery_under_noise_matches_attenuation() {
        let mut total = 0.0;
        let reps = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for s in 0..reps {
            let z = random_z(50, 100 + s);
            let set = personas(&z);
            let rows: Vec<ThetaRow> = z
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let noisy = t.map(|v| v + 0.25 * rng.sample::<f64, _>(StandardNormal));
                    row(&format!("P{i:03}"), Condition::Honest, noisy)
                })
                .collect();
            total += recovery(&rows, &set).unwrap().mean_r.value.unwrap();
        }
        let mean = total / reps as f64;
        // 1/√(1 + 0.25²) ≈ 0.970
        assert!((mean - 0.97).abs() < 0.02, "mean r {mean}");
    }

    #[test]
    fn recovery_errors() {
        let z = random_z(3, 5);
        let set = personas(&z);
        let rows: Vec<ThetaRow> =
            (0..2).map(|i| row(&format!("P{i:03}"), Condition::Honest, z[i])).collect();
        assert_eq!(recovery(&rows, &set), Err(MetricsError::TooFew { needed: 3, got: 2 }));
        let mut rows: Vec<ThetaRow> =
            (0..3).map(|i| row(&format!("P{i:03}"), Condition::Honest, z[i])).collect();
        for r in &mut rows {
            r.theta[2] = 1.0;
        }
        let rep = recovery(&rows, &set).unwrap();
        assert_eq!(rep.trait_r(TraitDomain::E).value, None);
        assert!(rep.trait_r(TraitDomain::A).value.is_some());
        assert_eq!(rep.mean_r.value, None);
        rows[0].persona_id = "X".into();
        assert_eq!(recovery(&rows, &set), Err(MetricsError::UnknownPersona("X".into())));
    }

    #[test]
    fn zone_boundaries_are_inclusive() {
        assert_eq!(sdr_zone(0.15), SdrZone::Recommended);
        assert_eq!(sdr_zone(0.2), SdrZone::Recommended);
        assert_eq!(sdr_zone(-0.2), SdrZone::Recommended);
        assert_eq!(sdr_zone(0.35), SdrZone::Caution);
        assert_eq!(sdr_zone(0.5), SdrZone::Caution);
        assert_eq!(sdr_zone(0.5000001), SdrZone::Avoid);
        assert_eq!(sdr_zone(-0.9), SdrZone::Avoid);
        assert_eq!(recovery_zone(0.55), RecoveryZone::Acceptable);
        assert_eq!(recovery_zone(0.70), RecoveryZone::Strong);
        assert_eq!(recovery_zone(0.50), RecoveryZone::Acceptable);
        assert_eq!(recovery_zone(0.4999), RecoveryZone::Insufficient);
    }

    #[test]
    fn classify_zones_labels_traits_and_aggregates() {
        let effect = EffectSummary {
            respondent_id: "m".into(),
            format: Format::Gfc,
            traits: TraitDomain::ALL
                .iter()
                .zip([0.1, 0.3, 0.6, f64::NAN, 0.0])
                .map(|(&t, d)| TraitEffect {
                    domain: t,
                    n: 10,
                    mean_shift: d,
                    max_abs_shift: d.abs(),
                    d_z: Metric::defined(d),
                    direction: t.desirability_direction(),
                    d_tilde: if d.is_nan() { Metric::undefined("zero variance") } else { Metric::defined(d) },
                })
                .collect(),
            aggregate_d_tilde: Metric::defined(0.25),
        };
        let rec = RecoveryReport {
            respondent_id: "m".into(),
            condition: Condition::Honest,
            n: 10,
            traits: TraitDomain::ALL
                .iter()
                .zip([0.9, 0.55, 0.2, 0.7, 0.5])
                .map(|(&t, r)| TraitRecovery { domain: t, r: Metric::defined(r) })
                .collect(),
            mean_r: Metric::defined(0.57),
        };
        let z = classify_zones(&effect, &rec);
        let sdr: Vec<Option<SdrZone>> = z.traits.iter().map(|t| t.sdr).collect();
        assert_eq!(
            sdr,
            vec![Some(SdrZone::Recommended), Some(SdrZone::Caution), Some(SdrZone::Avoid), None, Some(SdrZone::Recommended)]
        );
        assert_eq!(z.traits[2].recovery, Some(RecoveryZone::Insufficient));
        assert_eq!(z.aggregate_sdr, Some(SdrZone::Caution));
        assert_eq!(z.aggregate_recovery, Some(RecoveryZone::Acceptable));
        let p = tradeoff_point(&effect, &rec);
        assert_eq!(p.sdr_zone, Some(SdrZone::Caution));
    }

    #[test]
    fn correlation_examples() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 - 4.5).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = correlations(&x, &y).unwrap();
        assert!((c.pearson - 1.0).abs() < 1e-12 && (c.spearman - 1.0).abs() < 1e-12);
        let cube: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
        let c = correlations(&x, &cube).unwrap();
        assert!((c.spearman - 1.0).abs() < 1e-12 && c.pearson < 1.0);
        let anti: Vec<f64> = x.iter().rev().copied().collect();
        assert!((correlations(&x, &anti).unwrap().spearman + 1.0).abs() < 1e-12);
        assert!(matches!(correlations(&x, &[1.0; 10]), Err(MetricsError::Stats(StatsError::ZeroVariance))));
        assert!(matches!(correlations(&x[..2], &y[..2]), Err(MetricsError::TooFew { .. })));
        let (lo, hi) = correlations(&x, &cube).unwrap().pearson_ci95.unwrap();
        assert!(lo < hi);
    }
}
