//! Node-affinity ground truth and NDCG@k.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal_graph::{EdgeEvent, GraphSlice, NodeId};

pub const DEFAULT_K: usize = 10;

/// "How often will `src` interact with each candidate during `[t, t + horizon]`?"
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityQuery {
    pub src: NodeId,
    pub t: f64,
    pub horizon: f64,
    pub candidates: Vec<NodeId>,
}

impl AffinityQuery {
    pub fn new(src: NodeId, t: f64, horizon: f64, candidates: Vec<NodeId>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("query has no candidates"));
        }
        if !(horizon > 0.0) {
            return Err(Error::invalid("query horizon must be positive"));
        }
        let mut sorted = candidates.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate candidate"));
        }
        Ok(Self {
            src,
            t,
            horizon,
            candidates,
        })
    }
}

/// Normalized interaction weights, aligned with the query's candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityTruth {
    pub values: Vec<f64>,
    /// Set when `src` had no interaction with any candidate in the horizon.
    pub all_zero: bool,
}

pub fn ground_truth_affinity(slice: &GraphSlice, query: &AffinityQuery) -> Result<AffinityTruth> {
    truth_from_events(slice.events(), slice.num_nodes(), query)
}

/// Sums `w(src, v, t_i)` over `t <= t_i <= t + horizon` with inclusive ends.
/// `events` must be sorted by timestamp.
pub fn truth_from_events(
    events: &[EdgeEvent],
    num_nodes: usize,
    query: &AffinityQuery,
) -> Result<AffinityTruth> {
    let mut slot = vec![usize::MAX; num_nodes];
    for (i, &c) in query.candidates.iter().enumerate() {
        if c >= num_nodes {
            return Err(Error::UnknownNode { node: c, num_nodes });
        }
        slot[c] = i;
    }
    let mut values = vec![0.0; query.candidates.len()];
    let lo = events.partition_point(|e| e.timestamp < query.t);
    let t_hi = query.t + query.horizon;
    for e in events[lo..].iter().take_while(|e| e.timestamp <= t_hi) {
        if e.src == query.src && slot[e.dst] != usize::MAX {
            values[slot[e.dst]] += e.weight;
        }
    }
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
        Ok(AffinityTruth {
            values,
            all_zero: false,
        })
    } else {
        Ok(AffinityTruth {
            values,
            all_zero: true,
        })
    }
}

/// `sum_{i=1..min(k,n)} (2^rel_i - 1) / log2(i + 1)`
pub fn dcg(relevances_in_predicted_order: &[f64], k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    Ok(relevances_in_predicted_order
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| gain(rel) / ((i + 2) as f64).log2())
        .sum())
}

#[inline]
fn gain(rel: f64) -> f64 {
    rel.exp2() - 1.0
}

/// Candidate indices by descending score; ties go to the lower index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// DCG of the predicted order over IDCG. An all-zero truth scores 1.
pub fn ndcg_at_k(predicted_scores: &[f64], truth: &AffinityTruth, k: usize) -> Result<f64> {
    if predicted_scores.len() != truth.values.len() {
        return Err(Error::LengthMismatch {
            expected: truth.values.len(),
            got: predicted_scores.len(),
        });
    }
    let predicted: Vec<f64> = rank_by_score(predicted_scores)
        .into_iter()
        .map(|i| truth.values[i])
        .collect();
    let mut ideal = truth.values.clone();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, k)?;
    if idcg <= 0.0 {
        return Ok(1.0);
    }
    Ok((dcg(&predicted, k)? / idcg).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanNdcg {
    pub value: f64,
    /// Queries that entered the mean.
    pub counted: usize,
    /// Queries skipped because their truth was all-zero.
    pub skipped: usize,
    /// Every query was all-zero; `value` is then 1 by convention.
    pub all_zero_warning: bool,
}

/// Mean NDCG@k over queries whose truth is not all-zero.
pub fn mean_ndcg_from_truth(
    truths: &[AffinityTruth],
    predicted_scores: &[Vec<f64>],
    k: usize,
) -> Result<MeanNdcg> {
    if truths.is_empty() {
        return Err(Error::NoQueries("empty query list".into()));
    }
    if truths.len() != predicted_scores.len() {
        return Err(Error::LengthMismatch {
            expected: truths.len(),
            got: predicted_scores.len(),
        });
    }
    let mut sum = 0.0;
    let mut counted = 0;
    for (truth, scores) in truths.iter().zip(predicted_scores) {
        if truth.all_zero {
            continue;
        }
        sum += ndcg_at_k(scores, truth, k)?;
        counted += 1;
    }
    let skipped = truths.len() - counted;
    if counted == 0 {
        return Ok(MeanNdcg {
            value: 1.0,
            counted,
            skipped,
            all_zero_warning: true,
        });
    }
    Ok(MeanNdcg {
        value: sum / counted as f64,
        counted,
        skipped,
        all_zero_warning: false,
    })
}

pub fn mean_ndcg(
    slice: &GraphSlice,
    queries: &[AffinityQuery],
    predicted_scores: &[Vec<f64>],
    k: usize,
) -> Result<MeanNdcg> {
    let truths = queries
        .iter()
        .map(|q| ground_truth_affinity(slice, q))
        .collect::<Result<Vec<_>>>()?;
    mean_ndcg_from_truth(&truths, predicted_scores, k)
}

/// How queries are laid out over a slice: one per (active source, bucket).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryPlan {
    pub bucket_width: f64,
    pub horizon: f64,
    /// Candidate set; `None` means every node of the stream.
    pub candidates: Option<Vec<NodeId>>,
}

impl Default for QueryPlan {
    fn default() -> Self {
        Self {
            bucket_width: 4.0,
            horizon: 3.0,
            candidates: None,
        }
    }
}

impl QueryPlan {
    /// Bucket starts `t_start + i * bucket_width` whose horizon ends inside
    /// the slice. Uses only event endpoints (sources), never interaction
    /// outcomes, so it is safe on unlabeled slices.
    pub fn enumerate(&self, slice: &GraphSlice) -> Result<Vec<AffinityQuery>> {
        if !(self.bucket_width > 0.0 && self.horizon > 0.0) {
            return Err(Error::invalid("bucket_width and horizon must be positive"));
        }
        let candidates: Vec<NodeId> = match &self.candidates {
            Some(c) => c.clone(),
            None => (0..slice.num_nodes()).collect(),
        };
        let sources = slice.active_sources();
        let mut out = Vec::new();
        let mut i = 0usize;
        loop {
            let t = slice.t_start() + i as f64 * self.bucket_width;
            if t + self.horizon > slice.t_end() {
                break;
            }
            for &src in &sources {
                out.push(AffinityQuery::new(
                    src,
                    t,
                    self.horizon,
                    candidates.clone(),
                )?);
            }
            i += 1;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::temporal_graph::{EdgeStream, StreamMeta};

    fn slice(events: Vec<(usize, usize, f64, f64)>) -> GraphSlice {
        let ev = events
            .into_iter()
            .map(|(src, dst, timestamp, weight)| EdgeEvent {
                src,
                dst,
                timestamp,
                weight,
            })
            .collect();
        let s = Arc::new(EdgeStream::new(ev, 4, StreamMeta::default()).unwrap());
        GraphSlice::full(&s)
    }

    fn truth(values: Vec<f64>) -> AffinityTruth {
        AffinityTruth {
            all_zero: values.iter().all(|v| *v == 0.0),
            values,
        }
    }

    #[test]
    fn single_destination_is_one_hot() {
        let s = slice(vec![(0, 2, 1.0, 2.0), (0, 2, 2.0, 1.0), (1, 3, 1.5, 1.0)]);
        let q = AffinityQuery::new(0, 1.0, 1.0, vec![1, 2, 3]).unwrap();
        let t = ground_truth_affinity(&s, &q).unwrap();
        assert_eq!(t.values, vec![0.0, 1.0, 0.0]);
        assert!(!t.all_zero);
    }

    #[test]
    fn weighted_split_and_inclusive_horizon() {
        // weights 3.0 to node 1 and 1.0 to node 2; the event at t + horizon counts.
        let s = slice(vec![
            (0, 1, 1.0, 2.0),
            (0, 2, 1.5, 1.0),
            (0, 1, 2.0, 1.0),
            (0, 2, 2.5, 5.0),
        ]);
        let q = AffinityQuery::new(0, 1.0, 1.0, vec![1, 2]).unwrap();
        let t = ground_truth_affinity(&s, &q).unwrap();
        assert!((t.values[0] - 0.75).abs() < 1e-15);
        assert!((t.values[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn empty_horizon_sets_flag() {
        let s = slice(vec![(0, 1, 10.0, 1.0)]);
        let q = AffinityQuery::new(0, 1.0, 1.0, vec![1, 2]).unwrap();
        let t = ground_truth_affinity(&s, &q).unwrap();
        assert!(t.all_zero);
        assert_eq!(t.values, vec![0.0, 0.0]);
    }

    #[test]
    fn candidate_out_of_range() {
        let s = slice(vec![(0, 1, 1.0, 1.0)]);
        let q = AffinityQuery::new(0, 1.0, 1.0, vec![1, 9]).unwrap();
        assert!(matches!(
            ground_truth_affinity(&s, &q),
            Err(Error::UnknownNode { node: 9, .. })
        ));
    }

    #[test]
    fn query_rejects_duplicates_and_empty() {
        assert!(AffinityQuery::new(0, 0.0, 1.0, vec![1, 1]).is_err());
        assert!(AffinityQuery::new(0, 0.0, 1.0, vec![]).is_err());
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg(&[1.0, 0.0, 0.0], 3).unwrap(), 1.0);
        let v = dcg(&[0.0, 1.0], 2).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.63093).abs() < 1e-5);
        assert_eq!(dcg(&[0.0, 0.0], 2).unwrap(), 0.0);
        assert!(dcg(&[1.0], 0).is_err());
    }

    #[test]
    fn ndcg_perfect_and_reversed() {
        let t = truth(vec![0.5, 0.3, 0.2]);
        assert_eq!(ndcg_at_k(&[3.0, 2.0, 1.0], &t, 3).unwrap(), 1.0);
        let rev = ndcg_at_k(&[1.0, 2.0, 3.0], &t, 3).unwrap();
        // Oracle, written out: DCG(0.2,0.3,0.5) / DCG(0.5,0.3,0.2).
        let g = |r: f64| r.exp2() - 1.0;
        let d = |a: f64, b: f64, c: f64| g(a) + g(b) / 3f64.log2() + g(c) / 2.0;
        let expected = d(0.2, 0.3, 0.5) / d(0.5, 0.3, 0.2);
        assert!((rev - expected).abs() < 1e-12);
        assert!((rev - 0.7907).abs() < 5e-5, "{rev}");
    }

    #[test]
    fn ndcg_ties_and_zero_truth() {
        let t = truth(vec![0.0, 1.0]);
        // Tie broken toward index 0, which is irrelevant.
        assert!(ndcg_at_k(&[1.0, 1.0], &t, 2).unwrap() < 1.0);
        assert_eq!(
            ndcg_at_k(&[0.2, 0.1], &truth(vec![0.0, 0.0]), 2).unwrap(),
            1.0
        );
        assert!(ndcg_at_k(&[0.2], &t, 2).is_err());
    }

    #[test]
    fn mean_examples() {
        let a = truth(vec![1.0, 0.0]);
        let b = truth(vec![0.0, 0.0]);
        let single = mean_ndcg_from_truth(std::slice::from_ref(&a), &[vec![0.0, 1.0]], 10).unwrap();
        assert_eq!(single.value, ndcg_at_k(&[0.0, 1.0], &a, 10).unwrap());

        let m = mean_ndcg_from_truth(
            &[a.clone(), a.clone(), b.clone()],
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]],
            10,
        )
        .unwrap();
        let worst = ndcg_at_k(&[0.0, 1.0], &a, 10).unwrap();
        assert!((m.value - (1.0 + worst) / 2.0).abs() < 1e-15);
        assert_eq!(m.skipped, 1);

        let all_zero = mean_ndcg_from_truth(&[b], &[vec![1.0, 0.0]], 10).unwrap();
        assert!(all_zero.all_zero_warning);
        assert_eq!(all_zero.value, 1.0);
        assert!(mean_ndcg_from_truth(&[], &[], 10).is_err());
    }

    #[test]
    fn query_plan_buckets() {
        let s = slice(vec![(0, 1, 0.0, 1.0), (2, 1, 5.0, 1.0), (0, 3, 9.0, 1.0)]);
        let plan = QueryPlan {
            bucket_width: 4.0,
            horizon: 3.0,
            candidates: None,
        };
        let qs = plan.enumerate(&s).unwrap();
        // Slice is [0, 9+): buckets at 0 and 4 fit, 8 + 3 does not.
        let times: Vec<f64> = qs.iter().map(|q| q.t).collect();
        assert_eq!(times, vec![0.0, 0.0, 4.0, 4.0]);
        assert!(qs.iter().all(|q| q.candidates == vec![0, 1, 2, 3]));
    }
}
