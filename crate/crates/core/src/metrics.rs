//! Ranking metrics, rank statistics, inter-annotator agreement and the
//! paired permutation test.

use std::collections::{BTreeMap, HashSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::RELEVANCE_THRESHOLD;
use crate::run::RankedList;

/// Rank assigned to a generated document missing from the retrieved list.
pub const MISSING_RANK: usize = 20_000;
pub const DEFAULT_PERMUTATIONS: usize = 100_000;
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Graded judgments of one query.
pub type Judgments = BTreeMap<String, u8>;

fn gain(grade: u8) -> f64 {
    (1u64 << grade) as f64 - 1.0
}

fn discount(rank: usize) -> f64 {
    (rank as f64 + 1.0).log2()
}

/// NDCG@k with gain `2^grade - 1` and a `log2(rank + 1)` discount, normalized
/// by the ideal ordering of all judged documents. Zero when no judged
/// document has a positive grade.
pub fn ndcg_at_k(ranked: &RankedList, judgments: &Judgments, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let dcg: f64 = ranked
        .entries
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, e)| gain(judgments.get(&e.doc_id).copied().unwrap_or(0)) / discount(i + 1))
        .sum();
    let mut ideal: Vec<u8> = judgments.values().copied().filter(|&g| g > 0).collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum();
    if idcg == 0.0 {
        0.0
    } else {
        dcg / idcg
    }
}

/// Average precision cut at k over binary relevance (grade at least 2),
/// normalized by `min(k, #relevant)`.
pub fn map_at_k(ranked: &RankedList, judgments: &Judgments, k: usize) -> f64 {
    assert!(k >= 1, "k must be at least 1");
    let total_relevant = judgments.values().filter(|&&g| g >= RELEVANCE_THRESHOLD).count();
    if total_relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in ranked.entries.iter().take(k).enumerate() {
        if judgments.get(&e.doc_id).copied().unwrap_or(0) >= RELEVANCE_THRESHOLD {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / total_relevant.min(k) as f64
}

/// Median with the even-length convention of averaging the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

/// Per-query rank observations feeding [`RankStats`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRanks {
    pub query_id: String,
    /// Rank of the query's generated document, `MISSING_RANK` when not retrieved.
    pub generated_rank: Option<usize>,
    /// Median rank of the original relevant documents that were retrieved.
    pub median_relevant_rank: Option<f64>,
    pub best_relevant_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    /// Median over queries of the generated document's rank.
    pub mg: Option<f64>,
    /// Median over queries of the per-query median relevant rank.
    pub me: Option<f64>,
    /// Median over queries of the best relevant rank.
    pub hr: Option<f64>,
    pub missing_rank: usize,
    /// Queries with no original relevant document in their retrieved list.
    pub queries_without_relevant: usize,
    pub per_query: Vec<QueryRanks>,
}

/// Per-query observations for one ranked list. `generated_id` is the query's
/// generated document; `generated_ids` lists every generated document, which
/// are excluded from the relevant-rank statistics.
pub fn query_ranks(
    ranked: &RankedList,
    judgments: &Judgments,
    generated_id: Option<&str>,
    generated_ids: &HashSet<String>,
) -> QueryRanks {
    let generated_rank =
        generated_id.map(|g| ranked.rank_of(g).unwrap_or(MISSING_RANK));
    let relevant_ranks: Vec<f64> = ranked
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            !generated_ids.contains(&e.doc_id)
                && judgments.get(&e.doc_id).copied().unwrap_or(0) >= RELEVANCE_THRESHOLD
        })
        .map(|(i, _)| (i + 1) as f64)
        .collect();
    QueryRanks {
        query_id: ranked.query_id.clone(),
        generated_rank,
        median_relevant_rank: median(&relevant_ranks),
        best_relevant_rank: relevant_ranks.first().map(|&r| r as usize),
    }
}

/// MG / ME / HR over a set of queries. `generated` maps query ids to that
/// query's generated document.
pub fn rank_stats(
    rankings: &[RankedList],
    qrels: &BTreeMap<String, Judgments>,
    generated: &BTreeMap<String, String>,
) -> RankStats {
    let generated_ids: HashSet<String> = generated.values().cloned().collect();
    let empty = Judgments::new();
    let per_query: Vec<QueryRanks> = rankings
        .iter()
        .map(|r| {
            query_ranks(
                r,
                qrels.get(&r.query_id).unwrap_or(&empty),
                generated.get(&r.query_id).map(String::as_str),
                &generated_ids,
            )
        })
        .collect();
    summarize_ranks(per_query)
}

pub fn summarize_ranks(per_query: Vec<QueryRanks>) -> RankStats {
    let mg: Vec<f64> = per_query
        .iter()
        .filter_map(|q| q.generated_rank.map(|r| r as f64))
        .collect();
    let me: Vec<f64> = per_query.iter().filter_map(|q| q.median_relevant_rank).collect();
    let hr: Vec<f64> = per_query
        .iter()
        .filter_map(|q| q.best_relevant_rank.map(|r| r as f64))
        .collect();
    RankStats {
        mg: median(&mg),
        me: median(&me),
        hr: median(&hr),
        missing_rank: MISSING_RANK,
        queries_without_relevant: per_query
            .iter()
            .filter(|q| q.best_relevant_rank.is_none())
            .count(),
        per_query,
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("at least two pairs are required, got {0}")]
    TooFewPairs(usize),
    #[error("free-marginal kappa needs at least two categories, got {0}")]
    DegenerateCategories(usize),
    #[error("invalid ratings: {0}")]
    InvalidRatings(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    /// Mean of `a[i] - b[i]`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub significant: bool,
}

/// Two-tailed paired permutation (sign-flip) test.
///
/// Each permutation flips the sign of every paired difference independently
/// with probability 1/2. The p-value uses the add-one estimator
/// `(1 + #{|perm| >= |observed|}) / (n_perm + 1)`. Sign draws depend only on
/// the seed and the number of pairs, so swapping `a` and `b` yields exactly
/// the same p-value.
pub fn permutation_test(
    a: &[f64],
    b: &[f64],
    n_perm: usize,
    seed: u64,
) -> Result<SignificanceResult, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(MetricError::TooFewPairs(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>() / n as f64;
    let threshold = observed.abs() - tie_tolerance(&diffs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        let mut sum = 0.0;
        let mut bits = 0u64;
        for (i, d) in diffs.iter().enumerate() {
            if i % 64 == 0 {
                bits = rng.next_u64();
            }
            sum += if bits & 1 == 1 { -d } else { *d };
            bits >>= 1;
        }
        if (sum / n as f64).abs() >= threshold {
            extreme += 1;
        }
    }
    let p_value = (1 + extreme) as f64 / (n_perm + 1) as f64;
    Ok(SignificanceResult {
        statistic: observed,
        p_value,
        n_permutations: n_perm,
        significant: p_value < SIGNIFICANCE_LEVEL,
    })
}

/// Slack for treating permuted means as ties with the observed mean despite
/// summation-order rounding.
fn tie_tolerance(diffs: &[f64]) -> f64 {
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    scale * 1e-12
}

/// Free-marginal multi-rater kappa. `ratings[item][rater]` holds a category
/// in `1..=n_categories`; every item must have the same number of raters.
pub fn free_marginal_kappa(ratings: &[Vec<usize>], n_categories: usize) -> Result<f64, MetricError> {
    if n_categories < 2 {
        return Err(MetricError::DegenerateCategories(n_categories));
    }
    let raters = ratings
        .first()
        .map(Vec::len)
        .ok_or_else(|| MetricError::InvalidRatings("no items".into()))?;
    if raters < 2 {
        return Err(MetricError::InvalidRatings(format!(
            "at least two raters are required, got {raters}"
        )));
    }
    let mut agreement_sum = 0.0;
    for (i, item) in ratings.iter().enumerate() {
        if item.len() != raters {
            return Err(MetricError::InvalidRatings(format!(
                "item {i} has {} ratings, expected {raters}",
                item.len()
            )));
        }
        let mut counts = vec![0usize; n_categories];
        for &c in item {
            if !(1..=n_categories).contains(&c) {
                return Err(MetricError::InvalidRatings(format!(
                    "category {c} outside 1..={n_categories}"
                )));
            }
            counts[c - 1] += 1;
        }
        let agreeing: usize = counts.iter().map(|&c| c * c.saturating_sub(1)).sum();
        agreement_sum += agreeing as f64 / (raters * (raters - 1)) as f64;
    }
    let observed = agreement_sum / ratings.len() as f64;
    let chance = 1.0 / n_categories as f64;
    Ok((observed - chance) / (1.0 - chance))
}
