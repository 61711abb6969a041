//! Statements, forced-choice blocks, inventories and response sets.
//!
//! Everything here is immutable once constructed and shared by the
//! assembly, administration, simulation and scoring modules.

mod io;
mod validate;

pub use io::{
    load_exclusions, load_inventory, load_item_pool, read_response_sets, write_inventory,
    write_item_pool, write_response_sets,
};
pub use validate::{validate_inventory, ConstraintCheck, ConstraintFamily, ConstraintReport};

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of ordinal response categories for both formats.
pub const CATEGORY_COUNT: u8 = 7;

#[derive(Debug, Error)]
pub enum InventoryError {
    #[error("empty pool")]
    EmptyPool,
    #[error("row {row}: duplicate item id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: unknown domain label `{label}`")]
    UnknownDomain { row: usize, label: String },
    #[error("row {row}: keying must be +1 or -1, got `{value}`")]
    InvalidKeying { row: usize, value: String },
    #[error("row {row}: desirability {value} outside [1, 9]")]
    DesirabilityOutOfRange { row: usize, value: f64 },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("excluded id `{0}` is not in the pool")]
    UnknownExclusion(String),
    #[error("item `{0}` is not in the pool")]
    UnresolvedId(String),
    #[error("item `{0}` has no desirability rating")]
    Unrated(String),
    #[error("block `{block}`: left and right are the same item `{id}`")]
    SelfPair { block: String, id: String },
    #[error("response set {respondent}/{persona}: {message}")]
    IncompleteResponses {
        respondent: String,
        persona: String,
        message: String,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Big Five domain. The declaration order (A, C, E, N, O) is the vector index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraitDomain {
    A,
    C,
    E,
    N,
    O,
}

impl TraitDomain {
    pub const ALL: [TraitDomain; 5] = [
        TraitDomain::A,
        TraitDomain::C,
        TraitDomain::E,
        TraitDomain::N,
        TraitDomain::O,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            TraitDomain::A => "A",
            TraitDomain::C => "C",
            TraitDomain::E => "E",
            TraitDomain::N => "N",
            TraitDomain::O => "O",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TraitDomain::A => "agreeableness",
            TraitDomain::C => "conscientiousness",
            TraitDomain::E => "extraversion",
            TraitDomain::N => "neuroticism",
            TraitDomain::O => "openness",
        }
    }

    /// +1 when a higher trait level is the socially desirable direction, -1 for neuroticism.
    pub fn desirability_direction(self) -> f64 {
        match self {
            TraitDomain::N => -1.0,
            _ => 1.0,
        }
    }
}

impl fmt::Display for TraitDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for TraitDomain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        for d in Self::ALL {
            if t.eq_ignore_ascii_case(d.label()) || t.eq_ignore_ascii_case(d.name()) {
                return Ok(d);
            }
        }
        Err(t.to_string())
    }
}

/// Unordered pair of distinct domains, stored with `first < second`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TraitPair(TraitDomain, TraitDomain);

impl TraitPair {
    pub fn new(a: TraitDomain, b: TraitDomain) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(TraitPair(a, b)),
            std::cmp::Ordering::Greater => Some(TraitPair(b, a)),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn first(self) -> TraitDomain {
        self.0
    }

    pub fn second(self) -> TraitDomain {
        self.1
    }

    /// All ten pairs in lexicographic order.
    pub fn all() -> Vec<TraitPair> {
        let mut out = Vec::with_capacity(10);
        for (i, &a) in TraitDomain::ALL.iter().enumerate() {
            for &b in &TraitDomain::ALL[i + 1..] {
                out.push(TraitPair(a, b));
            }
        }
        out
    }

    /// Position in [`TraitPair::all`].
    pub fn index(self) -> usize {
        let (a, b) = (self.0.index(), self.1.index());
        // rows of the strict upper triangle of a 5x5 matrix
        a * (9 - a) / 2 + (b - a - 1)
    }

    pub fn contains(self, t: TraitDomain) -> bool {
        self.0 == t || self.1 == t
    }
}

impl fmt::Display for TraitPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Keying {
    #[serde(rename = "+1")]
    Positive,
    #[serde(rename = "-1")]
    Negative,
}

impl Keying {
    pub fn sign(self) -> f64 {
        match self {
            Keying::Positive => 1.0,
            Keying::Negative => -1.0,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Keying::Positive => "+",
            Keying::Negative => "-",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Keying::Positive => Keying::Negative,
            Keying::Negative => Keying::Positive,
        }
    }
}

impl FromStr for Keying {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "+1" | "1" | "+" => Ok(Keying::Positive),
            "-1" | "-" => Ok(Keying::Negative),
            other => Err(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub text: String,
    pub domain: TraitDomain,
    pub keying: Keying,
    pub desirability: Option<f64>,
}

impl Item {
    /// +1 if endorsing the statement is the socially desirable answer.
    pub fn desirable_side(&self) -> f64 {
        self.keying.sign() * self.domain.desirability_direction()
    }
}

/// Ordered statement pool after exclusions.
#[derive(Debug, Clone, Default)]
pub struct ItemPool {
    items: Vec<Item>,
    excluded_ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl ItemPool {
    pub fn new(items: Vec<Item>, excluded_ids: Vec<String>) -> Result<Self, InventoryError> {
        if items.is_empty() {
            return Err(InventoryError::EmptyPool);
        }
        let mut index = HashMap::with_capacity(items.len());
        for (row, item) in items.iter().enumerate() {
            if item.text.trim().is_empty() {
                return Err(InventoryError::Malformed {
                    row: row + 1,
                    message: format!("item `{}` has empty text", item.id),
                });
            }
            if let Some(s) = item.desirability {
                if !(1.0..=9.0).contains(&s) {
                    return Err(InventoryError::DesirabilityOutOfRange { row: row + 1, value: s });
                }
            }
            if index.insert(item.id.clone(), row).is_some() {
                return Err(InventoryError::DuplicateId {
                    row: row + 1,
                    id: item.id.clone(),
                });
            }
        }
        Ok(ItemPool {
            items,
            excluded_ids,
            index,
        })
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn excluded_ids(&self) -> &[String] {
        &self.excluded_ids
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.index.get(id).map(|&i| &self.items[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn require(&self, id: &str) -> Result<&Item, InventoryError> {
        self.get(id)
            .ok_or_else(|| InventoryError::UnresolvedId(id.to_string()))
    }

    pub fn desirability(&self, id: &str) -> Result<f64, InventoryError> {
        self.require(id)?
            .desirability
            .ok_or_else(|| InventoryError::Unrated(id.to_string()))
    }

    /// Replace desirability scores. Items missing from `scores` keep their current value.
    pub fn with_desirability(
        &self,
        scores: &BTreeMap<String, f64>,
    ) -> Result<ItemPool, InventoryError> {
        let mut items = self.items.clone();
        for item in &mut items {
            if let Some(&s) = scores.get(&item.id) {
                item.desirability = Some(s);
            }
        }
        ItemPool::new(items, self.excluded_ids.clone())
    }

    /// Number of items per (domain, keying) cell.
    pub fn sign_counts(&self) -> [[usize; 2]; 5] {
        let mut out = [[0usize; 2]; 5];
        for item in &self.items {
            let k = match item.keying {
                Keying::Positive => 0,
                Keying::Negative => 1,
            };
            out[item.domain.index()][k] += 1;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GfcBlock {
    pub id: String,
    pub left: String,
    pub right: String,
    pub desirability_gap: f64,
}

impl GfcBlock {
    /// Builds a block, computing the gap from the pool.
    pub fn from_pool(
        id: impl Into<String>,
        left: &str,
        right: &str,
        pool: &ItemPool,
    ) -> Result<Self, InventoryError> {
        let id = id.into();
        if left == right {
            return Err(InventoryError::SelfPair {
                block: id,
                id: left.to_string(),
            });
        }
        let gap = (pool.desirability(left)? - pool.desirability(right)?).abs();
        Ok(GfcBlock {
            id,
            left: left.to_string(),
            right: right.to_string(),
            desirability_gap: gap,
        })
    }
}

/// Default block id for the block at zero-based `index`.
pub fn block_id(index: usize) -> String {
    format!("B{:02}", index + 1)
}

/// A GFC inventory; its Likert form is the flattened list of statements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    blocks: Vec<GfcBlock>,
}

impl Inventory {
    pub fn new(blocks: Vec<GfcBlock>) -> Self {
        Inventory { blocks }
    }

    pub fn blocks(&self) -> &[GfcBlock] {
        &self.blocks
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, id: &str) -> Option<&GfcBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    /// Statement ids in block order (left then right), first occurrence only.
    pub fn statements(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(self.blocks.len() * 2);
        for b in &self.blocks {
            for id in [&b.left, &b.right] {
                if seen.insert(id.as_str()) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    /// Administered unit ids for a format.
    pub fn unit_ids(&self, format: Format) -> Vec<String> {
        match format {
            Format::Likert => self.statements(),
            Format::Gfc => self.blocks.iter().map(|b| b.id.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Likert,
    Gfc,
}

impl Format {
    pub const ALL: [Format; 2] = [Format::Likert, Format::Gfc];

    pub fn as_str(self) -> &'static str {
        match self {
            Format::Likert => "likert",
            Format::Gfc => "gfc",
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "likert" => Ok(Format::Likert),
            "gfc" => Ok(Format::Gfc),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Honest,
    FakeGood,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Honest, Condition::FakeGood];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Honest => "honest",
            Condition::FakeGood => "fake_good",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "honest" => Ok(Condition::Honest),
            "fake" | "fake_good" | "fakegood" => Ok(Condition::FakeGood),
            other => Err(format!("unknown condition `{other}`")),
        }
    }
}

/// Completed answers of one respondent for one persona, format and condition.
///
/// GFC answers are stored relative to the block's canonical left/right order;
/// `side_assignment[block] == true` means the statements were displayed swapped
/// and the raw displayed answer was `8 - answer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSet {
    pub respondent_id: String,
    pub persona_id: String,
    pub format: Format,
    pub condition: Condition,
    pub answers: BTreeMap<String, u8>,
    pub presentation_order: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub side_assignment: BTreeMap<String, bool>,
}

impl ResponseSet {
    /// Checks that every administered unit has exactly one answer in 1..=7.
    pub fn check_complete(&self, inventory: &Inventory) -> Result<(), InventoryError> {
        let fail = |message: String| InventoryError::IncompleteResponses {
            respondent: self.respondent_id.clone(),
            persona: self.persona_id.clone(),
            message,
        };
        let units = inventory.unit_ids(self.format);
        for u in &units {
            match self.answers.get(u) {
                None => return Err(fail(format!("no answer for `{u}`"))),
                Some(&y) if !(1..=CATEGORY_COUNT).contains(&y) => {
                    return Err(fail(format!("answer {y} for `{u}` outside 1..=7")))
                }
                Some(_) => {}
            }
        }
        if self.answers.len() != units.len() {
            return Err(fail(format!(
                "{} answers for {} administered units",
                self.answers.len(),
                units.len()
            )));
        }
        let mut order = self.presentation_order.clone();
        order.sort();
        let mut expected = units;
        expected.sort();
        if order != expected {
            return Err(fail("presentation order is not a permutation of the units".into()));
        }
        Ok(())
    }
}
