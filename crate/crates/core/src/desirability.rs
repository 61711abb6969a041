//! Social-desirability ratings: aggregation into item scores and agreement
//! statistics (two-way ANOVA ICCs, pairwise and split-half correlations).

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{self, StatsError, TwoWayAnova};

pub const RATING_MIN: u8 = 1;
pub const RATING_MAX: u8 = 9;

#[derive(Debug, Error)]
pub enum DesirabilityError {
    #[error("rating dataset is empty")]
    Empty,
    #[error("row {row}: rating {value} outside 1..9")]
    ValueOutOfRange { row: usize, value: i64 },
    #[error("row {row}: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: duplicate rating for ({item}, {rater}, {replication})")]
    Duplicate { row: usize, item: String, rater: String, replication: u32 },
    #[error("item `{0}` has no ratings")]
    NoRatings(String),
    #[error("unknown rater `{0}`")]
    UnknownRater(String),
    #[error("rater `{rater}` has {found} replication(s); at least 2 are needed")]
    TooFewReplications { rater: String, found: usize },
    #[error("fewer than 2 items with complete ratings for rater `{0}`")]
    TooFewCompleteItems(String),
    #[error("ICC undefined: zero variance across items")]
    ZeroVariance,
    #[error("the two tables share no items")]
    DisjointItems,
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One rating `x_{jlr}` on the 1..9 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rating {
    pub item: String,
    pub rater: String,
    pub replication: u32,
    pub value: u8,
}

/// Ragged (item, rater, replication) array of ratings. Items keep first-seen
/// order unless declared up front with [`RatingDataset::with_items`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RatingDataset {
    items: Vec<String>,
    cells: BTreeMap<(String, String, u32), u8>,
}

impl RatingDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares the expected items so that unrated ones are reported.
    pub fn with_items(items: impl IntoIterator<Item = String>) -> Self {
        let mut ds = Self::default();
        for it in items {
            if !ds.items.contains(&it) {
                ds.items.push(it);
            }
        }
        ds
    }

    /// Adds one rating, returning `false` if the cell was already filled.
    pub fn insert(&mut self, r: Rating) -> Result<bool, DesirabilityError> {
        if !(RATING_MIN..=RATING_MAX).contains(&r.value) {
            return Err(DesirabilityError::ValueOutOfRange { row: 0, value: r.value as i64 });
        }
        if !self.items.contains(&r.item) {
            self.items.push(r.item.clone());
        }
        Ok(self.cells.insert((r.item, r.rater, r.replication), r.value).is_none())
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn raters(&self) -> Vec<String> {
        self.cells.keys().map(|(_, l, _)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Distinct replication indices used by `rater`, ascending.
    pub fn replications(&self, rater: &str) -> Vec<u32> {
        self.cells
            .keys()
            .filter(|(_, l, _)| l == rater)
            .map(|(_, _, r)| *r)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn get(&self, item: &str, rater: &str, replication: u32) -> Option<u8> {
        self.cells.get(&(item.to_string(), rater.to_string(), replication)).copied()
    }

    pub fn ratings(&self) -> impl Iterator<Item = Rating> + '_ {
        self.cells.iter().map(|((item, rater, replication), &value)| Rating {
            item: item.clone(),
            rater: rater.clone(),
            replication: *replication,
            value,
        })
    }

    /// Restricts the dataset to one rater (for per-rater desirability tables).
    pub fn for_rater(&self, rater: &str) -> RatingDataset {
        let mut out = RatingDataset::with_items(self.items.iter().cloned());
        for ((i, l, r), v) in &self.cells {
            if l == rater {
                out.cells.insert((i.clone(), l.clone(), *r), *v);
            }
        }
        out
    }
}

/// Reads `item, rater, replication, value` rows (tab-separated, with header).
pub fn read_ratings<R: Read>(reader: R) -> Result<RatingDataset, DesirabilityError> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut ds = RatingDataset::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() < 4 {
            return Err(DesirabilityError::Malformed { row, message: format!("expected 4 fields, got {}", rec.len()) });
        }
        let replication: u32 = rec[2].parse().map_err(|_| DesirabilityError::Malformed {
            row,
            message: format!("replication `{}` is not a non-negative integer", &rec[2]),
        })?;
        let value: i64 = rec[3]
            .parse()
            .map_err(|_| DesirabilityError::Malformed { row, message: format!("rating `{}` is not an integer", &rec[3]) })?;
        if !(RATING_MIN as i64..=RATING_MAX as i64).contains(&value) {
            return Err(DesirabilityError::ValueOutOfRange { row, value });
        }
        let rating = Rating { item: rec[0].to_string(), rater: rec[1].to_string(), replication, value: value as u8 };
        let (item, rater) = (rating.item.clone(), rating.rater.clone());
        if !ds.insert(rating)? {
            return Err(DesirabilityError::Duplicate { row, item, rater, replication });
        }
    }
    if ds.is_empty() {
        return Err(DesirabilityError::Empty);
    }
    Ok(ds)
}

pub fn write_ratings<W: Write>(ds: &RatingDataset, writer: W) -> Result<(), DesirabilityError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
    w.write_record(["item", "rater", "replication", "value"])?;
    for r in ds.ratings() {
        w.write_record([r.item, r.rater, r.replication.to_string(), r.value.to_string()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesirabilityEntry {
    pub item: String,
    /// Mean of all available ratings, `s_j`.
    pub mean: f64,
    pub n: usize,
    pub min: u8,
    pub max: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesirabilityTable {
    pub entries: Vec<DesirabilityEntry>,
}

impl DesirabilityTable {
    pub fn get(&self, item: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.item == item).map(|e| e.mean)
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.entries.iter().map(|e| (e.item.clone(), e.mean)).collect()
    }

    pub fn write_tsv<W: Write>(&self, writer: W) -> Result<(), DesirabilityError> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(writer);
        w.write_record(["item", "desirability", "n", "min", "max"])?;
        for e in &self.entries {
            w.write_record([e.item.clone(), e.mean.to_string(), e.n.to_string(), e.min.to_string(), e.max.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_tsv<R: Read>(reader: R) -> Result<Self, DesirabilityError> {
        let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |m: &str| DesirabilityError::Malformed { row: i + 1, message: m.to_string() };
            entries.push(DesirabilityEntry {
                item: rec.get(0).ok_or_else(|| bad("missing item"))?.to_string(),
                mean: rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad desirability"))?,
                n: rec.get(2).and_then(|s| s.parse().ok()).unwrap_or(0),
                min: rec.get(3).and_then(|s| s.parse().ok()).unwrap_or(RATING_MIN),
                max: rec.get(4).and_then(|s| s.parse().ok()).unwrap_or(RATING_MAX),
            });
        }
        Ok(DesirabilityTable { entries })
    }
}

/// `s_j` = arithmetic mean over every rater and replication present.
pub fn aggregate_ratings(ds: &RatingDataset) -> Result<DesirabilityTable, DesirabilityError> {
    if ds.items.is_empty() {
        return Err(DesirabilityError::Empty);
    }
    let mut acc: BTreeMap<&str, (u64, usize, u8, u8)> = BTreeMap::new();
    for ((item, _, _), &v) in &ds.cells {
        let e = acc.entry(item.as_str()).or_insert((0, 0, u8::MAX, 0));
        e.0 += v as u64;
        e.1 += 1;
        e.2 = e.2.min(v);
        e.3 = e.3.max(v);
    }
    let entries = ds
        .items
        .iter()
        .map(|item| {
            let &(sum, n, min, max) = acc.get(item.as_str()).ok_or_else(|| DesirabilityError::NoRatings(item.clone()))?;
            Ok(DesirabilityEntry { item: item.clone(), mean: sum as f64 / n as f64, n, min, max })
        })
        .collect::<Result<_, DesirabilityError>>()?;
    Ok(DesirabilityTable { entries })
}

/// Within-rater agreement across replications.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementStats {
    pub rater: String,
    /// Items with a complete row of replications (the ANOVA sample).
    pub items: usize,
    /// Items dropped because at least one replication was missing.
    pub dropped_items: usize,
    /// Replications used, `k`.
    pub k: usize,
    pub icc_a1: f64,
    pub icc_ak: f64,
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_error: f64,
    /// Mean Pearson r over replication pairs; `None` if every pair is undefined.
    pub mean_pairwise_r: Option<f64>,
    pub undefined_pairs: usize,
    pub split_half_r: f64,
    pub split_half_lo: f64,
    pub split_half_hi: f64,
    pub splits: usize,
}

impl AgreementStats {
    /// Flat `key\tvalue` table.
    pub fn to_table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("null".to_string(), |x| format!("{x:.6}"));
        let rows = [
            ("rater", self.rater.clone()),
            ("items", self.items.to_string()),
            ("dropped_items", self.dropped_items.to_string()),
            ("k", self.k.to_string()),
            ("icc_a1", format!("{:.6}", self.icc_a1)),
            ("icc_ak", format!("{:.6}", self.icc_ak)),
            ("mean_pairwise_r", opt(self.mean_pairwise_r)),
            ("split_half_r", format!("{:.6}", self.split_half_r)),
            ("split_half_p2.5", format!("{:.6}", self.split_half_lo)),
            ("split_half_p97.5", format!("{:.6}", self.split_half_hi)),
            ("splits", self.splits.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
    }
}

/// Items × replications matrix for one rater, complete rows only.
fn rater_matrix(ds: &RatingDataset, rater: &str) -> Result<(Vec<Vec<f64>>, usize, usize), DesirabilityError> {
    if !ds.cells.keys().any(|(_, l, _)| l == rater) {
        return Err(DesirabilityError::UnknownRater(rater.to_string()));
    }
    let reps = ds.replications(rater);
    if reps.len() < 2 {
        return Err(DesirabilityError::TooFewReplications { rater: rater.to_string(), found: reps.len() });
    }
    let mut rows = Vec::new();
    let mut dropped = 0;
    for item in &ds.items {
        let row: Option<Vec<f64>> = reps.iter().map(|&r| ds.get(item, rater, r).map(f64::from)).collect();
        match row {
            Some(r) => rows.push(r),
            None => dropped += 1,
        }
    }
    if rows.len() < 2 {
        return Err(DesirabilityError::TooFewCompleteItems(rater.to_string()));
    }
    Ok((rows, dropped, reps.len()))
}

fn column(rows: &[Vec<f64>], c: usize) -> Vec<f64> {
    rows.iter().map(|r| r[c]).collect()
}

fn map_zero_variance(e: StatsError) -> DesirabilityError {
    match e {
        StatsError::ZeroVariance => DesirabilityError::ZeroVariance,
        other => DesirabilityError::Stats(other),
    }
}

/// ICC(A,1)/ICC(A,k), mean pairwise r and split-half reliability for one rater.
///
/// Each random half-split uses its own ChaCha8 stream (`seed`, split index), so
/// results do not depend on evaluation order.
pub fn agreement_stats(
    ds: &RatingDataset,
    rater: &str,
    splits: usize,
    seed: u64,
) -> Result<AgreementStats, DesirabilityError> {
    let (rows, dropped, k) = rater_matrix(ds, rater)?;
    let anova = TwoWayAnova::new(&rows)?;
    let icc_a1 = anova.icc_a1().map_err(map_zero_variance)?;
    let icc_ak = anova.icc_ak().map_err(map_zero_variance)?;

    let cols: Vec<Vec<f64>> = (0..k).map(|c| column(&rows, c)).collect();
    let mut rs = Vec::new();
    let mut undefined_pairs = 0;
    for a in 0..k {
        for b in a + 1..k {
            match stats::pearson(&cols[a], &cols[b]) {
                Ok(r) => rs.push(r),
                Err(_) => undefined_pairs += 1,
            }
        }
    }
    let mean_pairwise_r = (!rs.is_empty()).then(|| stats::mean(&rs));

    let half = k / 2;
    let mut split_rs = Vec::with_capacity(splits);
    for s in 0..splits {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s as u64);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut rng);
        let (first, second) = perm.split_at(half);
        let means = |idx: &[usize]| -> Vec<f64> {
            rows.iter().map(|r| idx.iter().map(|&c| r[c]).sum::<f64>() / idx.len() as f64).collect()
        };
        // a split whose halves have no spread across items carries no information
        if let Ok(r) = stats::pearson(&means(first), &means(second)) {
            split_rs.push(r);
        }
    }
    let (split_half_r, split_half_lo, split_half_hi) = if split_rs.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (stats::mean(&split_rs), stats::quantile(&split_rs, 0.025), stats::quantile(&split_rs, 0.975))
    };
    Ok(AgreementStats {
        rater: rater.to_string(),
        items: rows.len(),
        dropped_items: dropped,
        k,
        icc_a1,
        icc_ak,
        ms_rows: anova.ms_rows,
        ms_cols: anova.ms_cols,
        ms_error: anova.ms_error,
        mean_pairwise_r,
        undefined_pairs,
        split_half_r,
        split_half_lo,
        split_half_hi,
        splits: split_rs.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetweenRater {
    pub items: usize,
    pub pearson: f64,
    pub spearman: f64,
    /// `None` when the per-item means have no spread (ICC undefined).
    pub icc_a1: Option<f64>,
}

/// Agreement between two raters' per-item means over their shared items.
pub fn between_rater_agreement(
    a: &DesirabilityTable,
    b: &DesirabilityTable,
) -> Result<BetweenRater, DesirabilityError> {
    let bm = b.to_map();
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for e in &a.entries {
        if let Some(&v) = bm.get(&e.item) {
            x.push(e.mean);
            y.push(v);
        }
    }
    if x.is_empty() {
        return Err(DesirabilityError::DisjointItems);
    }
    let rows: Vec<Vec<f64>> = x.iter().zip(&y).map(|(&p, &q)| vec![p, q]).collect();
    Ok(BetweenRater {
        items: x.len(),
        pearson: stats::pearson(&x, &y)?,
        spearman: stats::spearman(&x, &y)?,
        icc_a1: TwoWayAnova::new(&rows)?.icc_a1().ok(),
    })
}

/// Why a block-rating reply was rejected; each kind can trigger one refit.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
pub enum RatingParseError {
    #[error("reply contains non-digit text `{residue}`")]
    NonDigit { residue: String },
    #[error("expected {expected} ratings, found {found}")]
    WrongCount { expected: usize, found: usize },
    #[error("rating {digit} at position {position} is outside 1..9")]
    OutOfRange { position: usize, digit: u8 },
}

/// Strips line breaks, commas and whitespace, then accepts exactly `expected`
/// single digits in 1..9.
pub fn parse_block_rating_response(text: &str, expected: usize) -> Result<Vec<u8>, RatingParseError> {
    let cleaned: String = text.chars().filter(|c| !(c.is_whitespace() || *c == ',')).collect();
    let residue: String = cleaned.chars().filter(|c| !c.is_ascii_digit()).collect();
    if !residue.is_empty() {
        return Err(RatingParseError::NonDigit { residue });
    }
    let digits: Vec<u8> = cleaned.bytes().map(|b| b - b'0').collect();
    if digits.len() != expected {
        return Err(RatingParseError::WrongCount { expected, found: digits.len() });
    }
    if let Some((position, &digit)) = digits.iter().enumerate().find(|(_, &d)| d < RATING_MIN) {
        return Err(RatingParseError::OutOfRange { position, digit });
    }
    Ok(digits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn ds_from(rows: &[(&str, &str, u32, u8)]) -> RatingDataset {
        let mut ds = RatingDataset::new();
        for &(i, l, r, v) in rows {
            ds.insert(Rating { item: i.into(), rater: l.into(), replication: r, value: v }).unwrap();
        }
        ds
    }

    #[test]
    fn aggregation_is_a_plain_mean() {
        let mut rows = vec![];
        for r in 0..30 {
            rows.push(("x", "m1", r, 7));
            rows.push(("x", "m2", r, 7));
        }
        rows.extend([("y", "m1", 0, 9), ("y", "m1", 1, 9), ("y", "m2", 0, 8), ("y", "m2", 1, 9)]);
        rows.extend([("z", "m1", 0, 1), ("z", "m1", 1, 2), ("z", "m1", 2, 3)]);
        let t = aggregate_ratings(&ds_from(&rows)).unwrap();
        assert_eq!(t.get("x"), Some(7.0));
        assert_eq!(t.get("y"), Some(8.75));
        assert_eq!(t.get("z"), Some(2.0));
        assert_eq!(t.entries[0].n, 60);
        let mut ds = RatingDataset::new();
        assert!(ds.insert(Rating { item: "a".into(), rater: "m".into(), replication: 0, value: 10 }).is_err());
    }

    #[test]
    fn unrated_declared_item_is_an_error() {
        let mut ds = RatingDataset::with_items(["a".to_string(), "b".to_string()]);
        ds.insert(Rating { item: "a".into(), rater: "m".into(), replication: 0, value: 5 }).unwrap();
        assert!(matches!(aggregate_ratings(&ds), Err(DesirabilityError::NoRatings(i)) if i == "b"));
    }

    #[test]
    fn identical_replications_give_unit_icc() {
        let mut rows = vec![];
        for (j, item) in ["a", "b", "c", "d"].iter().enumerate() {
            for r in 0..5 {
                rows.push((*item, "m", r, (j + 2) as u8));
            }
        }
        let s = agreement_stats(&ds_from(&rows), "m", 20, 1).unwrap();
        assert_eq!(s.icc_a1, 1.0);
        assert_eq!(s.icc_ak, 1.0);
        assert_eq!(s.mean_pairwise_r, Some(1.0));
        assert_eq!(s.split_half_r, 1.0);
    }

    #[test]
    fn zero_item_variance_is_signalled() {
        let rows: Vec<_> = ["a", "b"].iter().flat_map(|i| (0..3).map(move |r| (*i, "m", r, 5u8))).collect();
        assert!(matches!(agreement_stats(&ds_from(&rows), "m", 5, 0), Err(DesirabilityError::ZeroVariance)));
    }

    #[test]
    fn one_replication_is_rejected() {
        let ds = ds_from(&[("a", "m", 0, 5), ("b", "m", 0, 6)]);
        assert!(matches!(agreement_stats(&ds, "m", 5, 0), Err(DesirabilityError::TooFewReplications { .. })));
    }

    #[test]
    fn incomplete_items_are_dropped_and_counted() {
        let mut rows = vec![];
        for (j, item) in ["a", "b", "c"].iter().enumerate() {
            for r in 0..3 {
                rows.push((*item, "m", r, (j * 2 + 1 + (r as usize % 2)) as u8));
            }
        }
        rows.push(("d", "m", 0, 4));
        let s = agreement_stats(&ds_from(&rows), "m", 10, 3).unwrap();
        assert_eq!((s.items, s.dropped_items), (3, 1));
    }

    #[test]
    fn variance_ratio_four_to_one_gives_point_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (u, e) = (Normal::new(0.0, 2.0).unwrap(), Normal::new(0.0, 1.0).unwrap());
        // continuous scores are not on the 1..9 grid, so go through the ANOVA directly
        let mut rows = Vec::new();
        for _ in 0..100 {
            let uj = u.sample(&mut rng);
            rows.push((0..30).map(|_| uj + e.sample(&mut rng)).collect::<Vec<f64>>());
        }
        let icc = TwoWayAnova::new(&rows).unwrap().icc_a1().unwrap();
        assert!((icc - 0.8).abs() < 0.05, "{icc}");
    }

    #[test]
    fn permuting_replication_columns_leaves_icc_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut rows = vec![];
        let items: Vec<String> = (0..12).map(|j| format!("i{j}")).collect();
        let mut vals = vec![];
        for j in 0..12 {
            for r in 0..6u32 {
                let v = (1 + (j * 7 + r as usize * 3 + rand::Rng::random_range(&mut rng, 0..2)) % 9) as u8;
                vals.push((j, r, v));
            }
        }
        for &(j, r, v) in &vals {
            rows.push((items[j].as_str(), "m", r, v));
        }
        let a = agreement_stats(&ds_from(&rows), "m", 10, 0).unwrap();
        let perm = [3u32, 0, 5, 1, 4, 2];
        let permuted: Vec<_> = vals.iter().map(|&(j, r, v)| (items[j].as_str(), "m", perm[r as usize], v)).collect();
        let b = agreement_stats(&ds_from(&permuted), "m", 10, 0).unwrap();
        assert_eq!(a.icc_a1, b.icc_a1);
        assert_eq!(a.icc_ak, b.icc_ak);
    }

    #[test]
    fn split_half_is_reproducible() {
        let rows: Vec<_> = (0..10u8)
            .flat_map(|j| (0..8u32).map(move |r| (j, r)))
            .map(|(j, r)| (format!("i{j}"), r, 1 + (j + (r as u8 * 5) % 3) % 9))
            .collect();
        let mut ds = RatingDataset::new();
        for (i, r, v) in rows {
            ds.insert(Rating { item: i, rater: "m".into(), replication: r, value: v }).unwrap();
        }
        let a = agreement_stats(&ds, "m", 50, 42).unwrap();
        let b = agreement_stats(&ds, "m", 50, 42).unwrap();
        assert_eq!(a.split_half_r.to_bits(), b.split_half_r.to_bits());
        assert!(a.split_half_lo <= a.split_half_r && a.split_half_r <= a.split_half_hi);
    }

    fn table(vals: &[f64]) -> DesirabilityTable {
        DesirabilityTable {
            entries: vals
                .iter()
                .enumerate()
                .map(|(i, &m)| DesirabilityEntry { item: format!("i{i}"), mean: m, n: 1, min: 1, max: 9 })
                .collect(),
        }
    }

    #[test]
    fn between_rater_identity_and_reversal() {
        let a = table(&[2.0, 3.5, 5.0, 8.0, 6.5]);
        let same = between_rater_agreement(&a, &a).unwrap();
        assert_eq!((same.pearson, same.spearman, same.icc_a1), (1.0, 1.0, Some(1.0)));
        let rev = table(&[8.0, 6.5, 5.0, 2.0, 3.5]);
        assert!((between_rater_agreement(&a, &rev).unwrap().pearson + 1.0).abs() < 1e-12);
        let other = DesirabilityTable { entries: vec![DesirabilityEntry { item: "zz".into(), mean: 1.0, n: 1, min: 1, max: 1 }] };
        assert!(matches!(between_rater_agreement(&a, &other), Err(DesirabilityError::DisjointItems)));
    }

    #[test]
    fn block_reply_parsing() {
        assert_eq!(parse_block_rating_response("5 7 3", 3), Ok(vec![5, 7, 3]));
        assert_eq!(parse_block_rating_response("5, 7,\n3", 3), Ok(vec![5, 7, 3]));
        assert!(matches!(parse_block_rating_response("5 0 3", 3), Err(RatingParseError::OutOfRange { position: 1, digit: 0 })));
        assert!(matches!(parse_block_rating_response("5 7", 3), Err(RatingParseError::WrongCount { expected: 3, found: 2 })));
        assert!(matches!(parse_block_rating_response("5 7 x3", 3), Err(RatingParseError::NonDigit { .. })));
    }

    #[test]
    fn ratings_file_round_trip() {
        let ds = ds_from(&[("a", "m1", 0, 5), ("a", "m2", 3, 9), ("b", "m1", 0, 1)]);
        let mut buf = Vec::new();
        write_ratings(&ds, &mut buf).unwrap();
        let back = read_ratings(buf.as_slice()).unwrap();
        assert_eq!(back.ratings().collect::<Vec<_>>(), ds.ratings().collect::<Vec<_>>());
        let bad = "item\trater\treplication\tvalue\na\tm\t0\t10\n";
        assert!(matches!(read_ratings(bad.as_bytes()), Err(DesirabilityError::ValueOutOfRange { row: 1, value: 10 })));
    }
}
