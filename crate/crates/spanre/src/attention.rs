//! Entity attention: fusing a candidate subject into the sentence features.
//!
//! The subject's rows are sampled to a fixed length K, encoded by a BiLSTM
//! whose final states h_K are broadcast over the sentence with learned
//! relative-position embeddings, and combined with the sentence features P
//! through bilinear multiplicative attention S(q, p) = (U·q)·(V·p). With the
//! attention ablation off, the broadcast subject features are concatenated to
//! P instead.

use crate::model::Pass;
use crate::tensor::{LstmWeights, Result, TensorError, TensorId};
use serde::{Deserialize, Serialize};

/// A contiguous token range, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false // inclusive ends: a span always covers at least one token
    }

    pub fn validate(&self, sentence_len: usize) -> Result<()> {
        if self.start > self.end || self.end >= sentence_len {
            return Err(TensorError::InvalidSpan {
                start: self.start,
                end: self.end,
                len: sentence_len,
            });
        }
        Ok(())
    }

    /// True when the two spans partially overlap or one strictly contains
    /// the other (identical spans are fine).
    pub fn nests_or_crosses(&self, other: &Span) -> bool {
        if self == other {
            return false;
        }
        let disjoint = self.end < other.start || other.end < self.start;
        !disjoint
    }
}

/// Deterministic sampling of K row indices from a span.
///
/// Exact length passes through; shorter spans repeat the last row; longer
/// spans keep the first K-1 rows plus the last (boundaries carry the entity).
pub fn sample_indices(span: Span, k: usize) -> Vec<usize> {
    let len = span.len();
    let mut idx = Vec::with_capacity(k);
    if len >= k {
        idx.extend(span.start..span.start + k - 1);
        idx.push(span.end);
    } else {
        idx.extend(span.start..=span.end);
        while idx.len() < k {
            idx.push(span.end);
        }
    }
    idx
}

/// Rows of P sampled to length K for the given subject span.
pub fn sample_subject(pass: &mut Pass, p: TensorId, span: Span, k: usize) -> Result<TensorId> {
    let t = pass.tape.shape(p)[0];
    span.validate(t)?;
    let idx = sample_indices(span, k);
    pass.tape.gather_rows(p, &idx)
}

/// BiLSTM over the sampled subject rows; returns the concatenated final
/// hidden states of both directions, shape [2·d_h].
pub fn encode_subject(pass: &mut Pass, sampled: TensorId) -> Result<TensorId> {
    let k = pass.tape.shape(sampled)[0];
    let d_h = pass.cfg().d_h();
    let mut finals = Vec::with_capacity(2);
    for dir in ["fw", "bw"] {
        let weights = LstmWeights {
            wx: pass.p(&format!("subj_lstm.{}.wx", dir))?,
            wh: pass.p(&format!("subj_lstm.{}.wh", dir))?,
            b: pass.p(&format!("subj_lstm.{}.b", dir))?,
        };
        let mut h = pass.tape.leaf(vec![d_h], vec![0.0; d_h])?;
        let mut c = pass.tape.leaf(vec![d_h], vec![0.0; d_h])?;
        let steps: Vec<usize> = if dir == "fw" {
            (0..k).collect()
        } else {
            (0..k).rev().collect()
        };
        for t in steps {
            let x = pass.tape.row_vec(sampled, t)?;
            let (h2, c2) = pass.tape.lstm_cell(x, h, c, weights)?;
            h = h2;
            c = c2;
        }
        finals.push(h);
    }
    pass.tape.concat_vec(&finals)
}

/// Relative-position rows R[clamp(i - span.start)] for every position i.
fn relpos_rows(pass: &mut Pass, span: Span, t: usize) -> Result<TensorId> {
    let t_max = pass.cfg().t_max as isize;
    let table = pass.p("relpos.table")?;
    let idx: Vec<usize> = (0..t as isize)
        .map(|i| {
            let off = (i - span.start as isize).clamp(-t_max, t_max);
            (off + t_max) as usize
        })
        .collect();
    pass.tape.gather_rows(table, &idx)
}

/// q_i = h_K + R[clamp(i - span.start)], for every sentence position i.
pub fn broadcast_subject(pass: &mut Pass, h_k: TensorId, span: Span, t: usize) -> Result<TensorId> {
    let rows = relpos_rows(pass, span, t)?;
    pass.tape.add_row_vector(rows, h_k)
}

/// Bilinear attention: s_ij = (U·q_i)·(V·p_j), rows softmaxed, P mixed.
/// Every output row is a convex combination of P's rows.
pub fn attend(pass: &mut Pass, q: TensorId, p: TensorId) -> Result<TensorId> {
    let u = pass.p("att.u")?;
    let v = pass.p("att.v")?;
    let ut = pass.tape.transpose(u)?;
    let vt = pass.tape.transpose(v)?;
    let uq = pass.tape.matmul(q, ut)?;
    let vp = pass.tape.matmul(p, vt)?;
    let vp_t = pass.tape.transpose(vp)?;
    let scores = pass.tape.matmul(uq, vp_t)?;
    let alpha = pass.tape.row_softmax(scores)?;
    pass.tape.matmul(alpha, p)
}

/// Public entry point: fused features for one candidate subject, width
/// d_q + d_x in both modes.
///
/// Attention mode pairs the attended subject-aware context with the token's
/// own features, [attend(Q, P)_i ; p_i]; the concat ablation replaces the
/// attended block with the raw broadcast subject state, [q_i ; p_i]. The two
/// modes differ only in the first block, which is what the ablation isolates.
pub fn fuse(pass: &mut Pass, p: TensorId, span: Span) -> Result<TensorId> {
    let t = pass.tape.shape(p)[0];
    span.validate(t)?;
    let k = pass.cfg().subject_sample_len;
    let sampled = sample_subject(pass, p, span, k)?;
    let h_k = encode_subject(pass, sampled)?;
    let q = broadcast_subject(pass, h_k, span, t)?;
    if pass.cfg().entity_attention {
        let context = attend(pass, q, p)?;
        pass.tape.concat_cols(context, p)
    } else {
        pass.tape.concat_cols(q, p)
    }
}
