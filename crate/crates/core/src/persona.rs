//! Ground-truth Big Five personas: correlated normal trait vectors, stanine
//! coding, and rendered natural-language descriptions.

use std::collections::BTreeMap;

use nalgebra::{Matrix5, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inventory::TraitDomain;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("covariance matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("covariance diagonal entry {0} is {1}, expected 1")]
    NonUnitDiagonal(usize, f64),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("non-finite trait score")]
    NonFinite,
    #[error("persona count must be at least 1")]
    NoPersonas,
    #[error("lexicon has no {polarity} descriptors for trait {domain}")]
    MissingLexiconEntry { domain: TraitDomain, polarity: &'static str },
    #[error("invalid lexicon: {0}")]
    Lexicon(String),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Trait intercorrelations in (A, C, E, N, O) order with zero mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitCovariance {
    pub matrix: [[f64; 5]; 5],
}

/// Meta-analytic corrected Big Five intercorrelations, (A, C, E, N, O) order.
pub const DEFAULT_SIGMA: [[f64; 5]; 5] = [
    [1.00, 0.43, 0.26, -0.36, 0.21],
    [0.43, 1.00, 0.29, -0.43, 0.20],
    [0.26, 0.29, 1.00, -0.36, 0.43],
    [-0.36, -0.43, -0.36, 1.00, -0.17],
    [0.21, 0.20, 0.43, -0.17, 1.00],
];

pub fn default_covariance() -> TraitCovariance {
    TraitCovariance { matrix: DEFAULT_SIGMA }
}

impl TraitCovariance {
    /// Checks symmetry (to 1e-12), unit diagonal and positive definiteness.
    pub fn new(matrix: [[f64; 5]; 5]) -> Result<Self, PersonaError> {
        let cov = TraitCovariance { matrix };
        cov.validate()?;
        Ok(cov)
    }

    pub fn identity() -> Self {
        let mut m = [[0.0; 5]; 5];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        TraitCovariance { matrix: m }
    }

    pub fn validate(&self) -> Result<(), PersonaError> {
        for i in 0..5 {
            if (self.matrix[i][i] - 1.0).abs() > 1e-12 {
                return Err(PersonaError::NonUnitDiagonal(i, self.matrix[i][i]));
            }
            for j in 0..i {
                if (self.matrix[i][j] - self.matrix[j][i]).abs() > 1e-12 {
                    return Err(PersonaError::NotSymmetric(i, j));
                }
            }
        }
        self.cholesky().map(|_| ())
    }

    /// Lower-triangular factor `L` with `L Lᵀ = Σ`.
    pub fn cholesky(&self) -> Result<Matrix5<f64>, PersonaError> {
        let m = Matrix5::from_fn(|i, j| self.matrix[i][j]);
        m.cholesky().map(|c| c.l()).ok_or(PersonaError::NotPositiveDefinite)
    }

    pub fn get(&self, a: TraitDomain, b: TraitDomain) -> f64 {
        self.matrix[a.index()][b.index()]
    }

    /// Override file: `matrix = [[...], ...]` in TOML.
    pub fn from_toml(text: &str) -> Result<Self, PersonaError> {
        let cov: TraitCovariance = toml::from_str(text)?;
        cov.validate()?;
        Ok(cov)
    }
}

/// Stanine boundaries; a score on a boundary falls in the lower stanine.
pub const STANINE_CUTS: [f64; 8] = [-1.75, -1.25, -0.75, -0.25, 0.25, 0.75, 1.25, 1.75];

pub fn z_to_stanine(z: f64) -> Result<u8, PersonaError> {
    if !z.is_finite() {
        return Err(PersonaError::NonFinite);
    }
    Ok(1 + STANINE_CUTS.iter().filter(|&&c| c < z).count() as u8)
}

/// Descriptor lists per trait pole and the stanine-to-intensity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub intensity: Vec<String>,
    pub traits: BTreeMap<String, TraitDescriptors>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraitDescriptors {
    pub low: Vec<String>,
    pub high: Vec<String>,
}

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.toml");

/// Trait-sentence order of the persona prefix.
pub const SENTENCE_ORDER: [TraitDomain; 5] =
    [TraitDomain::O, TraitDomain::C, TraitDomain::E, TraitDomain::A, TraitDomain::N];

pub const PERSONA_HEADER: &str = "YOU ARE THE RESPONDENT.";
pub const PERSONA_FOOTER: &str = "Answer all questions AS THIS PERSON would.";

impl Lexicon {
    pub fn from_toml(text: &str) -> Result<Self, PersonaError> {
        let lex: Lexicon = toml::from_str(text)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<(), PersonaError> {
        if self.intensity.len() != 9 {
            return Err(PersonaError::Lexicon(format!(
                "intensity table needs 9 entries (stanines 1-9), got {}",
                self.intensity.len()
            )));
        }
        for d in TraitDomain::ALL {
            self.descriptors(d, false)?;
            self.descriptors(d, true)?;
        }
        Ok(())
    }

    pub fn descriptors(&self, domain: TraitDomain, high: bool) -> Result<&[String], PersonaError> {
        let polarity = if high { "high" } else { "low" };
        let list = self.traits.get(domain.label()).map(|t| if high { &t.high } else { &t.low });
        match list {
            Some(l) if !l.is_empty() => Ok(l),
            _ => Err(PersonaError::MissingLexiconEntry { domain, polarity }),
        }
    }

    /// "You are {intensity} d1, d2, and d3." with the pole chosen by stanine ≥ 5.
    pub fn sentence(&self, domain: TraitDomain, stanine: u8) -> Result<String, PersonaError> {
        let list = self.descriptors(domain, stanine >= 5)?;
        let words = match list {
            [one] => one.clone(),
            [a, b] => format!("{a} and {b}"),
            [init @ .., last] => format!("{}, and {last}", init.join(", ")),
            [] => unreachable!("descriptors are non-empty"),
        };
        let intensity = self.intensity.get(stanine as usize - 1).map(String::as_str).unwrap_or("");
        Ok(if intensity.is_empty() {
            format!("You are {words}.")
        } else {
            format!("You are {intensity} {words}.")
        })
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::from_toml(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

/// Persona prefix: header, one sentence per trait (O, C, E, A, N), directive.
pub fn render_persona(z: &[f64; 5], lexicon: &Lexicon) -> Result<String, PersonaError> {
    let mut out = format!("{PERSONA_HEADER}\n\n");
    for d in SENTENCE_ORDER {
        out.push_str(&lexicon.sentence(d, z_to_stanine(z[d.index()])?)?);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(PERSONA_FOOTER);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    /// Ground-truth trait scores in (A, C, E, N, O) order.
    pub z: [f64; 5],
    pub stanines: [u8; 5],
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSet {
    pub seed: u64,
    pub covariance: TraitCovariance,
    pub personas: Vec<Persona>,
}

impl PersonaSet {
    pub fn get(&self, id: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.id == id)
    }

    pub fn to_json(&self) -> Result<String, PersonaError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, PersonaError> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn persona_id(i: usize) -> String {
    format!("P{:03}", i + 1)
}

/// Draws `n` trait vectors `z = L ε` using one ChaCha8 stream per persona.
pub fn sample_z(n: usize, cov: &TraitCovariance, seed: u64) -> Result<Vec<[f64; 5]>, PersonaError> {
    if n == 0 {
        return Err(PersonaError::NoPersonas);
    }
    cov.validate()?;
    let l = cov.cholesky()?;
    Ok((0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let eps = Vector5::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let z = l * eps;
            [z[0], z[1], z[2], z[3], z[4]]
        })
        .collect())
}

pub fn make_persona(id: String, z: [f64; 5], lexicon: &Lexicon) -> Result<Persona, PersonaError> {
    let mut stanines = [0u8; 5];
    for (s, &v) in stanines.iter_mut().zip(&z) {
        *s = z_to_stanine(v)?;
    }
    Ok(Persona { id, z, stanines, description: render_persona(&z, lexicon)? })
}

pub fn sample_personas(
    n: usize,
    cov: &TraitCovariance,
    seed: u64,
    lexicon: &Lexicon,
) -> Result<PersonaSet, PersonaError> {
    lexicon.validate()?;
    let personas = sample_z(n, cov, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, z)| make_persona(persona_id(i), z, lexicon))
        .collect::<Result<_, _>>()?;
    Ok(PersonaSet { seed, covariance: cov.clone(), personas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;
    use TraitDomain::*;

    #[test]
    fn default_sigma_entries() {
        let c = default_covariance();
        assert_eq!(c.get(A, C), 0.43);
        assert_eq!(c.get(N, C), -0.43);
        assert!(TraitDomain::ALL.iter().all(|&t| c.get(t, t) == 1.0));
        c.validate().unwrap();
    }

    #[test]
    fn bad_covariances_are_rejected() {
        let mut m = DEFAULT_SIGMA;
        m[0][1] = 0.5;
        assert!(matches!(TraitCovariance::new(m), Err(PersonaError::NotSymmetric(1, 0))));
        let mut m = DEFAULT_SIGMA;
        m[0][1] = 0.99;
        m[1][0] = 0.99;
        m[0][3] = 0.99;
        m[3][0] = 0.99;
        assert!(matches!(TraitCovariance::new(m), Err(PersonaError::NotPositiveDefinite)));
    }

    #[test]
    fn stanine_boundaries() {
        assert_eq!(z_to_stanine(0.0).unwrap(), 5);
        assert_eq!(z_to_stanine(2.0).unwrap(), 9);
        assert_eq!(z_to_stanine(-1.3).unwrap(), 2);
        for (k, &c) in STANINE_CUTS.iter().enumerate() {
            assert_eq!(z_to_stanine(c - 1e-9).unwrap(), k as u8 + 1);
            assert_eq!(z_to_stanine(c).unwrap(), k as u8 + 1);
            assert_eq!(z_to_stanine(c + 1e-9).unwrap(), k as u8 + 2);
        }
        assert!(z_to_stanine(f64::NAN).is_err());
    }

    #[test]
    fn render_has_frame_and_five_sentences() {
        let lex = Lexicon::default();
        let text = render_persona(&[0.0, 1.0, -2.0, 0.5, 1.9], &lex).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], PERSONA_HEADER);
        assert_eq!(lines[8], PERSONA_FOOTER);
        assert_eq!(lines.iter().filter(|l| l.starts_with("You are ")).count(), 5);
        // A (z=0) is stanine 5: mildest modifier, high pole
        assert_eq!(lines[5], "You are a bit friendly, cooperative, considerate, trusting, and warm.");
        // E (z=-2) is stanine 1
        assert!(lines[4].starts_with("You are extremely quiet"));
        assert_eq!(text, render_persona(&[0.0, 1.0, -2.0, 0.5, 1.9], &lex).unwrap());
    }

    #[test]
    fn incomplete_lexicon_is_an_error() {
        let mut lex = Lexicon::default();
        lex.traits.get_mut("N").unwrap().low.clear();
        assert!(matches!(
            render_persona(&[0.0, 0.0, 0.0, -1.0, 0.0], &lex),
            Err(PersonaError::MissingLexiconEntry { domain: N, polarity: "low" })
        ));
    }

    #[test]
    fn sampling_is_deterministic_and_stream_split() {
        let lex = Lexicon::default();
        let a = sample_personas(50, &default_covariance(), 7, &lex).unwrap();
        let b = sample_personas(50, &default_covariance(), 7, &lex).unwrap();
        assert_eq!(a, b);
        let first10 = sample_personas(10, &default_covariance(), 7, &lex).unwrap();
        assert_eq!(first10.personas[..], a.personas[..10]);
        for t in 0..5 {
            let col: Vec<f64> = a.personas.iter().map(|p| p.z[t]).collect();
            assert!(stats::mean(&col).abs() < 0.45);
        }
        assert!(sample_personas(0, &default_covariance(), 7, &lex).is_err());
    }

    #[test]
    fn empirical_correlation_matches_sigma() {
        let z = sample_z(10_000, &default_covariance(), 3).unwrap();
        let col = |t: usize| z.iter().map(|v| v[t]).collect::<Vec<_>>();
        let r = stats::pearson(&col(E.index()), &col(O.index())).unwrap();
        assert!((r - 0.43).abs() < 0.05, "{r}");
        let z = sample_z(10_000, &TraitCovariance::identity(), 3).unwrap();
        let col = |t: usize| z.iter().map(|v| v[t]).collect::<Vec<_>>();
        for a in 0..5 {
            for b in a + 1..5 {
                assert!(stats::pearson(&col(a), &col(b)).unwrap().abs() < 0.05);
            }
        }
    }

    #[test]
    fn covariance_override_file() {
        let text = "matrix = [[1,0,0,0,0],[0,1,0,0,0],[0,0,1,0.5,0],[0,0,0.5,1,0],[0,0,0,0,1]]\n";
        let c = TraitCovariance::from_toml(text).unwrap();
        assert_eq!(c.get(E, N), 0.5);
    }
}
