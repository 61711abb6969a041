//! Serialized fit results: item parameters, θ̂ per response unit and a
//! diagnostics summary.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::map::MapFit;
use super::model::{Model, ModelData, TRAITS};
use super::nuts::{ChainStats, DiagnosticsSummary, Posterior};
use super::IrtError;
use crate::inventory::{Condition, Format, Keying, TraitDomain};
use crate::ordinal::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitBackend {
    Map,
    Hmc,
}

impl std::str::FromStr for FitBackend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "map" => Ok(FitBackend::Map),
            "hmc" | "nuts" => Ok(FitBackend::Hmc),
            other => Err(format!("unknown backend `{other}`")),
        }
    }
}

impl FitBackend {
    pub fn as_str(self) -> &'static str {
        match self {
            FitBackend::Map => "map",
            FitBackend::Hmc => "hmc",
        }
    }

    /// Which posterior summary the θ̂ table holds.
    pub fn estimate(self) -> &'static str {
        match self {
            FitBackend::Map => "posterior_mode",
            FitBackend::Hmc => "posterior_mean",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEstimate {
    pub id: String,
    pub domain: TraitDomain,
    pub keying: Keying,
    pub a_plus: f64,
    /// Likert thresholds (GRM only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Thresholds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub id: String,
    pub left: String,
    pub right: String,
    pub kappa: Thresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub respondent_id: String,
    pub persona_id: String,
    pub condition: Condition,
    /// Trait order A, C, E, N, O.
    pub theta: [f64; TRAITS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub log_posterior: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub best_start: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub model: Model,
    pub format: Format,
    pub backend: FitBackend,
    pub estimate: String,
    pub units: usize,
    pub excluded_incomplete: usize,
    pub items: Vec<ItemEstimate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub blocks: Vec<BlockEstimate>,
    pub theta: Vec<ThetaRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<MapSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<DiagnosticsSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chains: Vec<ChainStats>,
}

impl FitArtifact {
    fn build(
        data: &ModelData,
        backend: FitBackend,
        theta: &[[f64; TRAITS]],
        a_plus: &[f64],
        kappa: &[Thresholds],
    ) -> Self {
        let grm = data.model() == Model::Grm;
        let items = data
            .statements()
            .iter()
            .enumerate()
            .map(|(j, s)| ItemEstimate {
                id: s.id.clone(),
                domain: s.domain,
                keying: s.keying,
                a_plus: a_plus[j],
                kappa: grm.then(|| kappa[j]),
            })
            .collect();
        let blocks = if grm {
            Vec::new()
        } else {
            data.blocks()
                .iter()
                .enumerate()
                .map(|(g, b)| BlockEstimate {
                    id: b.id.clone(),
                    left: data.statements()[b.left].id.clone(),
                    right: data.statements()[b.right].id.clone(),
                    kappa: kappa[g],
                })
                .collect()
        };
        let theta = data
            .units()
            .iter()
            .zip(theta)
            .map(|(u, t)| ThetaRow {
                respondent_id: u.respondent_id.clone(),
                persona_id: u.persona_id.clone(),
                condition: u.condition,
                theta: *t,
            })
            .collect();
        FitArtifact {
            model: data.model(),
            format: data.model().format(),
            backend,
            estimate: backend.estimate().to_string(),
            units: data.units().len(),
            excluded_incomplete: data.excluded(),
            items,
            blocks,
            theta,
            map: None,
            diagnostics: None,
            chains: Vec::new(),
        }
    }

    pub fn from_map(data: &ModelData, fit: &MapFit) -> Self {
        let mut a = Self::build(data, FitBackend::Map, &fit.params.theta, &fit.params.a_plus, &fit.params.kappa);
        a.map = Some(MapSummary {
            log_posterior: fit.log_posterior,
            grad_norm: fit.grad_norm,
            converged: fit.converged,
            best_start: fit.best_start,
        });
        a
    }

    pub fn from_posterior(data: &ModelData, post: &Posterior) -> Self {
        let mut a = Self::build(data, FitBackend::Hmc, &post.theta_mean, &post.a_plus_mean, &post.kappa_mean);
        a.diagnostics = Some(post.summary.clone());
        a.chains = post.chains.clone();
        a
    }

    /// False when the sampler gate failed or the optimizer did not converge.
    pub fn diagnostics_passed(&self) -> bool {
        self.diagnostics.as_ref().is_none_or(DiagnosticsSummary::passed)
            && self.map.as_ref().is_none_or(|m| m.converged)
    }

    pub fn theta_for(&self, respondent: &str, persona: &str, condition: Condition) -> Option<[f64; TRAITS]> {
        self.theta
            .iter()
            .find(|r| r.respondent_id == respondent && r.persona_id == persona && r.condition == condition)
            .map(|r| r.theta)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), IrtError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self, IrtError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::map::{fit_map, MapOptions};
    use crate::irt::model::tests::random_data;

    #[test]
    fn map_artifact_round_trips() {
        for model in [Model::Grm, Model::Gfc] {
            let data = random_data(model, 2);
            let fit = fit_map(&data, &MapOptions::default()).unwrap();
            let art = FitArtifact::from_map(&data, &fit);
            assert_eq!(art.theta.len(), data.units().len());
            assert_eq!(art.estimate, "posterior_mode");
            assert_eq!(art.blocks.len(), data.blocks().len());
            assert_eq!(art.items[0].kappa.is_some(), model == Model::Grm);
            let u = &data.units()[3];
            assert_eq!(art.theta_for(&u.respondent_id, &u.persona_id, u.condition), Some(fit.params.theta[3]));
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("fit.json");
            art.write_json(&path).unwrap();
            assert_eq!(FitArtifact::read_json(&path).unwrap(), art);
            assert!(art.diagnostics_passed());
        }
    }
}
