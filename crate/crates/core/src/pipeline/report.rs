//! Report tables (CSV + JSON bundle) computed from fit artifacts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::inventory::{Condition, Format};
use crate::irt::FitArtifact;
use crate::metrics::{
    classify_zones, effect_summary, recovery, respondents, theta_rows, tradeoff_point, EffectSummary, Metric,
    RecoveryReport, ShiftTable, TradeoffPoint, ZoneLabels,
};
use crate::persona::PersonaSet;

pub const REPORT_JSON: &str = "report.json";
pub const EFFECTS_CSV: &str = "effects.csv";
pub const RECOVERY_CSV: &str = "recovery.csv";
pub const TRADEOFF_CSV: &str = "tradeoff.csv";

/// A fit artifact a report was computed from, identified by content hash.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FitSource {
    pub respondent_id: String,
    pub format: Format,
    /// Path relative to the fits directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatRecovery {
    pub format: Format,
    #[serde(flatten)]
    pub report: RecoveryReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    #[serde(flatten)]
    pub point: TradeoffPoint,
    /// No persona shifted beyond estimator resolution under fake-good instructions.
    pub null_shift: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRow {
    pub respondent_id: String,
    pub format: Format,
    #[serde(flatten)]
    pub zones: ZoneLabels,
}

/// Everything the `report` stage emits, keyed by (respondent, format) and
/// traceable to [`FitSource`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub tool_version: String,
    pub sources: Vec<FitSource>,
    pub effects: Vec<EffectSummary>,
    pub recovery: Vec<FormatRecovery>,
    pub tradeoff: Vec<TradeoffRow>,
    pub zones: Vec<ZoneRow>,
}

impl ReportBundle {
    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }
}

/// Computes effects, honest-condition recovery, zones and trade-off points for
/// every respondent in every fit. Sources are sorted so output order does not
/// depend on directory iteration.
pub fn build_report(fits: &[(FitSource, FitArtifact)], personas: &PersonaSet) -> Result<ReportBundle, PipelineError> {
    let mut fits: Vec<&(FitSource, FitArtifact)> = fits.iter().collect();
    fits.sort_by(|a, b| a.0.cmp(&b.0));
    let stage = |e: crate::metrics::MetricsError, src: &FitSource| PipelineError::Stage {
        stage: "report",
        message: format!("{} ({}): {e}", src.path, src.respondent_id),
    };
    let mut bundle = ReportBundle {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        sources: Vec::new(),
        effects: Vec::new(),
        recovery: Vec::new(),
        tradeoff: Vec::new(),
        zones: Vec::new(),
    };
    for (src, fit) in fits {
        if fit.format != src.format {
            return Err(PipelineError::Stage {
                stage: "report",
                message: format!("{} holds a {} fit, expected {}", src.path, fit.format, src.format),
            });
        }
        bundle.sources.push(src.clone());
        for respondent in respondents(fit) {
            let table = ShiftTable::from_fit(fit, &respondent).map_err(|e| stage(e, src))?;
            let effect = effect_summary(&table, fit.format);
            let rows = theta_rows(fit, &respondent, Condition::Honest);
            let rec = recovery(&rows, personas).map_err(|e| stage(e, src))?;
            bundle.zones.push(ZoneRow {
                respondent_id: respondent.clone(),
                format: fit.format,
                zones: classify_zones(&effect, &rec),
            });
            bundle.tradeoff.push(TradeoffRow { point: tradeoff_point(&effect, &rec), null_shift: effect.is_null_shift() });
            bundle.recovery.push(FormatRecovery { format: fit.format, report: rec });
            bundle.effects.push(effect);
        }
    }
    Ok(bundle)
}

fn cell(m: &Metric) -> String {
    m.value.map(|v| v.to_string()).unwrap_or_default()
}

fn note(m: &Metric) -> String {
    m.reason.clone().unwrap_or_default().replace([',', '\n'], ";")
}

fn opt_str<T>(v: Option<T>, f: impl Fn(T) -> &'static str) -> &'static str {
    v.map(f).unwrap_or("")
}

pub fn effects_csv(b: &ReportBundle) -> String {
    let mut s = String::from("respondent,format,trait,n,mean_shift,max_abs_shift,d_z,direction,d_tilde,sdr_zone,note\n");
    for (e, z) in b.effects.iter().zip(&b.zones) {
        for (t, tz) in e.traits.iter().zip(&z.zones.traits) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{}",
                e.respondent_id,
                e.format,
                t.domain.label(),
                t.n,
                t.mean_shift,
                t.max_abs_shift,
                cell(&t.d_z),
                t.direction,
                cell(&t.d_tilde),
                opt_str(tz.sdr, |z| z.as_str()),
                note(&t.d_z)
            );
        }
    }
    s
}

pub fn recovery_csv(b: &ReportBundle) -> String {
    let mut s = String::from("respondent,format,condition,trait,n,r,recovery_zone,note\n");
    for (r, z) in b.recovery.iter().zip(&b.zones) {
        for (t, tz) in r.report.traits.iter().zip(&z.zones.traits) {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.report.respondent_id,
                r.format,
                r.report.condition,
                t.domain.label(),
                r.report.n,
                cell(&t.r),
                opt_str(tz.recovery, |z| z.as_str()),
                note(&t.r)
            );
        }
    }
    s
}

pub fn tradeoff_csv(b: &ReportBundle) -> String {
    let mut s = String::from("respondent,format,aggregate_d_tilde,mean_r,sdr_zone,recovery_zone,null_shift,note\n");
    for t in &b.tradeoff {
        let p = &t.point;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            p.respondent_id,
            p.format,
            cell(&p.aggregate_d_tilde),
            cell(&p.mean_r),
            opt_str(p.sdr_zone, |z| z.as_str()),
            opt_str(p.recovery_zone, |z| z.as_str()),
            t.null_shift,
            note(&p.aggregate_d_tilde)
        );
    }
    s
}

/// Writes the JSON bundle and the three CSV tables into `dir`.
pub fn write_report(b: &ReportBundle, dir: &Path) -> Result<Vec<String>, PipelineError> {
    if b.is_empty() {
        return Err(PipelineError::Stage { stage: "report", message: "no fits to report".into() });
    }
    let io = |e: std::io::Error| PipelineError::Stage { stage: "report", message: e.to_string() };
    std::fs::create_dir_all(dir).map_err(io)?;
    let json = serde_json::to_string_pretty(b).map_err(|e| PipelineError::Stage { stage: "report", message: e.to_string() })?;
    let files = [
        (REPORT_JSON, json + "\n"),
        (EFFECTS_CSV, effects_csv(b)),
        (RECOVERY_CSV, recovery_csv(b)),
        (TRADEOFF_CSV, tradeoff_csv(b)),
    ];
    for (name, text) in &files {
        std::fs::write(dir.join(name), text).map_err(io)?;
    }
    Ok(files.iter().map(|(n, _)| n.to_string()).collect())
}

pub fn read_report(dir: &Path) -> Result<ReportBundle, PipelineError> {
    let path = dir.join(REPORT_JSON);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Stage { stage: "lint", message: format!("{}: {e}", path.display()) })?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Stage { stage: "lint", message: format!("{}: {e}", path.display()) })
}
