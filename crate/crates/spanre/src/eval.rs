//! Exact-match triplet evaluation.
//!
//! A predicted triplet counts as correct only when both entity boundaries and
//! the relation all equal a gold triplet of the same sentence. Micro P/R/F1
//! overall, plus breakdowns by overlap category and by entity length
//! (max of the two entity lengths, bucketed 1..5+).
//!
//! Category attribution: gold triplets carry their own category; a correct
//! prediction inherits the category of the gold triplet it matches, and a
//! wrong prediction is categorized against the predicted set of its sentence,
//! so the per-category gold/predicted/correct counts each partition the
//! overall counts.

use crate::data::{categorize_overlap, DataError, OverlapCategory};
use crate::tagger::Triplet;
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

pub const LENGTH_BUCKETS: usize = 5;

/// One precision/recall/F1 cell with its raw counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prf {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let precision = if predicted > 0 {
            correct as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if gold > 0 {
            correct as f64 / gold as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            gold,
            predicted,
            correct,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub overall: Prf,
    pub per_category: BTreeMap<OverlapCategory, Prf>,
    /// bucket key = max entity length, clamped to 5 ("5+")
    pub per_length: BTreeMap<usize, Prf>,
}

fn length_bucket(t: &Triplet) -> usize {
    t.subject.len().max(t.object.len()).min(LENGTH_BUCKETS)
}

#[derive(Default, Clone, Copy)]
struct Counts {
    gold: usize,
    predicted: usize,
    correct: usize,
}

/// Micro-averaged exact-match evaluation over id-aligned sentences.
pub fn evaluate(
    pred: &[(usize, BTreeSet<Triplet>)],
    gold: &[(usize, BTreeSet<Triplet>)],
) -> Result<EvalReport, DataError> {
    if pred.len() != gold.len() {
        return Err(DataError::MisalignedIds(pred.len().min(gold.len())));
    }
    let mut total = Counts::default();
    let mut by_cat: BTreeMap<OverlapCategory, Counts> = BTreeMap::new();
    let mut by_len: BTreeMap<usize, Counts> = BTreeMap::new();
    for b in 1..=LENGTH_BUCKETS {
        by_len.insert(b, Counts::default());
    }
    for cat in [OverlapCategory::Normal, OverlapCategory::Seo, OverlapCategory::Epo] {
        by_cat.insert(cat, Counts::default());
    }

    for (i, ((pid, p), (gid, g))) in pred.iter().zip(gold).enumerate() {
        if pid != gid {
            return Err(DataError::MisalignedIds(i));
        }
        let gold_list: Vec<Triplet> = g.iter().copied().collect();
        let gold_cats = categorize_overlap(&gold_list);
        let gold_cat: BTreeMap<Triplet, OverlapCategory> =
            gold_list.iter().copied().zip(gold_cats).collect();
        let pred_list: Vec<Triplet> = p.iter().copied().collect();
        let pred_cats = categorize_overlap(&pred_list);
        let pred_cat: BTreeMap<Triplet, OverlapCategory> =
            pred_list.iter().copied().zip(pred_cats).collect();

        total.gold += g.len();
        total.predicted += p.len();
        for t in &gold_list {
            by_cat.get_mut(&gold_cat[t]).unwrap().gold += 1;
            by_len.get_mut(&length_bucket(t)).unwrap().gold += 1;
        }
        for t in &pred_list {
            let cat = gold_cat.get(t).copied().unwrap_or(pred_cat[t]);
            by_cat.get_mut(&cat).unwrap().predicted += 1;
            by_len.get_mut(&length_bucket(t)).unwrap().predicted += 1;
            if g.contains(t) {
                total.correct += 1;
                by_cat.get_mut(&cat).unwrap().correct += 1;
                by_len.get_mut(&length_bucket(t)).unwrap().correct += 1;
            }
        }
    }

    Ok(EvalReport {
        overall: Prf::from_counts(total.gold, total.predicted, total.correct),
        per_category: by_cat
            .into_iter()
            .map(|(k, c)| (k, Prf::from_counts(c.gold, c.predicted, c.correct)))
            .collect(),
        per_length: by_len
            .into_iter()
            .map(|(k, c)| (k, Prf::from_counts(c.gold, c.predicted, c.correct)))
            .collect(),
    })
}

fn table(rows: &[(String, Prf)]) -> String {
    let name_w = rows
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(0)
        .max("overall".len());
    let mut out = format!(
        "{:<name_w$}  {:>9} {:>9} {:>9}  {:>6} {:>6} {:>6}",
        "", "gold", "pred", "correct", "P", "R", "F1",
        name_w = name_w
    );
    for (name, p) in rows {
        out.push('\n');
        out.push_str(&format!(
            "{:<name_w$}  {:>9} {:>9} {:>9}  {:>6.3} {:>6.3} {:>6.3}",
            name,
            p.gold,
            p.predicted,
            p.correct,
            p.precision,
            p.recall,
            p.f1,
            name_w = name_w
        ));
    }
    out
}

impl EvalReport {
    pub fn overall_table(&self) -> String {
        table(&[("overall".to_string(), self.overall)])
    }

    /// Table-style overlap breakdown: one row per category plus overall.
    pub fn overlap_table(&self) -> String {
        let mut rows: Vec<(String, Prf)> = self
            .per_category
            .iter()
            .map(|(c, p)| (c.to_string(), *p))
            .collect();
        rows.push(("overall".to_string(), self.overall));
        table(&rows)
    }

    /// Entity-length breakdown with buckets 1..5+.
    pub fn length_table(&self) -> String {
        let mut rows: Vec<(String, Prf)> = self
            .per_length
            .iter()
            .map(|(b, p)| {
                let name = if *b >= LENGTH_BUCKETS {
                    format!("len {}+", LENGTH_BUCKETS)
                } else {
                    format!("len {}", b)
                };
                (name, *p)
            })
            .collect();
        rows.push(("overall".to_string(), self.overall));
        table(&rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::Span;

    fn t(s: (usize, usize), r: usize, o: (usize, usize)) -> Triplet {
        Triplet {
            subject: Span::new(s.0, s.1),
            relation: r,
            object: Span::new(o.0, o.1),
        }
    }

    fn sent(id: usize, triplets: &[Triplet]) -> (usize, BTreeSet<Triplet>) {
        (id, triplets.iter().copied().collect())
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gold = vec![sent(0, &[t((0, 0), 0, (2, 2)), t((0, 0), 1, (2, 2))])];
        let report = evaluate(&gold, &gold).unwrap();
        assert_eq!(report.overall.precision, 1.0);
        assert_eq!(report.overall.recall, 1.0);
        assert_eq!(report.overall.f1, 1.0);
    }

    #[test]
    fn half_right_scores_half() {
        // pred {A, B}, gold {A, C}
        let a = t((0, 0), 0, (2, 2));
        let b = t((0, 0), 0, (4, 4));
        let c = t((1, 1), 0, (3, 3));
        let report = evaluate(&[sent(0, &[a, b])], &[sent(0, &[a, c])]).unwrap();
        assert_eq!(report.overall.precision, 0.5);
        assert_eq!(report.overall.recall, 0.5);
        assert_eq!(report.overall.f1, 0.5);
    }

    #[test]
    fn boundary_off_by_one_is_wrong() {
        let gold = t((0, 0), 0, (2, 3));
        let off = t((0, 0), 0, (2, 2));
        let report = evaluate(&[sent(0, &[off])], &[sent(0, &[gold])]).unwrap();
        assert_eq!(report.overall.correct, 0);
        assert_eq!(report.overall.f1, 0.0);
    }

    #[test]
    fn swapping_pred_and_gold_swaps_p_and_r() {
        let a = t((0, 0), 0, (2, 2));
        let b = t((0, 0), 1, (2, 2));
        let c = t((4, 4), 0, (6, 6));
        let pred = vec![sent(0, &[a, b, c])];
        let gold = vec![sent(0, &[a])];
        let fwd = evaluate(&pred, &gold).unwrap();
        let rev = evaluate(&gold, &pred).unwrap();
        assert_eq!(fwd.overall.precision, rev.overall.recall);
        assert_eq!(fwd.overall.recall, rev.overall.precision);
    }

    #[test]
    fn misaligned_ids_error() {
        let a = vec![sent(0, &[])];
        let b = vec![sent(1, &[])];
        assert!(matches!(evaluate(&a, &b), Err(DataError::MisalignedIds(0))));
    }

    #[test]
    fn category_corrects_partition_the_total() {
        let normal = t((0, 0), 0, (2, 2));
        let epo1 = t((4, 4), 0, (6, 6));
        let epo2 = t((4, 4), 1, (6, 6));
        let gold = vec![sent(0, &[normal, epo1, epo2])];
        let pred = vec![sent(0, &[normal, epo1, t((1, 1), 0, (3, 3))])];
        let report = evaluate(&pred, &gold).unwrap();
        let cat_correct: usize = report.per_category.values().map(|p| p.correct).sum();
        let cat_gold: usize = report.per_category.values().map(|p| p.gold).sum();
        let cat_pred: usize = report.per_category.values().map(|p| p.predicted).sum();
        assert_eq!(cat_correct, report.overall.correct);
        assert_eq!(cat_gold, report.overall.gold);
        assert_eq!(cat_pred, report.overall.predicted);
        assert_eq!(report.per_category[&OverlapCategory::Epo].gold, 2);
    }

    #[test]
    fn length_buckets_use_max_entity_length_clamped() {
        let short = t((0, 0), 0, (2, 2)); // bucket 1
        let long = t((0, 3), 0, (5, 5)); // bucket 4
        let very_long = t((0, 6), 0, (8, 8)); // length 7 -> bucket 5+
        let gold = vec![sent(0, &[short]), sent(1, &[long]), sent(2, &[very_long])];
        let report = evaluate(&gold, &gold).unwrap();
        assert_eq!(report.per_length[&1].gold, 1);
        assert_eq!(report.per_length[&4].gold, 1);
        assert_eq!(report.per_length[&5].gold, 1);
        let bucket_gold: usize = report.per_length.values().map(|p| p.gold).sum();
        assert_eq!(bucket_gold, 3);
    }

    #[test]
    fn tables_render_every_row() {
        let a = t((0, 0), 0, (2, 2));
        let report = evaluate(&[sent(0, &[a])], &[sent(0, &[a])]).unwrap();
        let overlap = report.overlap_table();
        for name in ["Normal", "SEO", "EPO", "overall"] {
            assert!(overlap.contains(name), "missing {} in
{}", name, overlap);
        }
        let length = report.length_table();
        assert!(length.contains("len 5+"));
        // json parses back
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert!(v["overall"]["f1"].as_f64().is_some());
    }
}
