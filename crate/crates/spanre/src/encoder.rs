//! The sentence representation layer.
//!
//! Per token: a multi-scale character CNN (kernels 1/2/3, max-over-time,
//! concatenated) next to the word embedding gives z_i = [ū_i; s_i]. A
//! three-branch context CNN (kernels 1/3/5, tanh, componentwise max across
//! branches) gives local features x_i, and a gated pairwise relation layer
//! mixes in global context: r_ij = σ(w·[x_i; x_j] + b),
//! p_i = tanh(mean_j r_ij · x_j).

use crate::model::{Pass, SentenceIds, CONTEXT_KERNELS};
use crate::tensor::{Result, TensorError, TensorId};

/// Character features for one word: per-kernel conv + max-over-time,
/// concatenated across kernel sizes.
pub fn encode_chars(pass: &mut Pass, word_chars: &[usize]) -> Result<TensorId> {
    let chars = if word_chars.is_empty() {
        &[crate::vocab::PAD][..]
    } else {
        word_chars
    };
    let table = pass.p("char.table")?;
    let embedded = pass.tape.gather_rows(table, chars)?;
    let mut pooled = Vec::new();
    for k in pass.cfg().char_kernels() {
        let kernel = pass.p(&format!("char.conv{}.kernel", k))?;
        let bias = pass.p(&format!("char.conv{}.bias", k))?;
        let conv = pass.tape.conv1d_same(embedded, kernel, bias)?;
        pooled.push(pass.tape.max_over_time(conv)?);
    }
    pass.tape.concat_vec(&pooled)
}

/// Token rows z_i = [ū_i; s_i] with word-feature dropout in train mode.
pub fn embed_sentence(pass: &mut Pass, sentence: &SentenceIds) -> Result<TensorId> {
    if sentence.is_empty() {
        return Err(TensorError::EmptyInput { op: "embed_sentence" });
    }
    let char_rows: Result<Vec<TensorId>> = sentence
        .chars
        .iter()
        .map(|cs| encode_chars(pass, cs))
        .collect();
    let char_feats = pass.tape.stack_rows(&char_rows?)?;
    let word_table = pass.p("word.table")?;
    let word_rows = pass.tape.gather_rows(word_table, &sentence.tokens)?;
    let z = pass.tape.concat_cols(char_feats, word_rows)?;
    let p = pass.cfg().dropout_p;
    pass.dropout(z, p)
}

/// Multi-branch context layer: x_i = max over k of tanh(conv_k(Z)_i).
pub fn context_features(pass: &mut Pass, z: TensorId) -> Result<TensorId> {
    let mut branches = Vec::with_capacity(CONTEXT_KERNELS.len());
    for k in CONTEXT_KERNELS {
        let kernel = pass.p(&format!("ctx.conv{}.kernel", k))?;
        let bias = pass.p(&format!("ctx.conv{}.bias", k))?;
        let conv = pass.tape.conv1d_same(z, kernel, bias)?;
        branches.push(pass.tape.tanh(conv)?);
    }
    pass.tape.elementwise_max(&branches)
}

/// Gated relation layer over all token pairs.
///
/// The pair gate is an elementwise vector, r_ij = σ(Wa·x_i + Wb·x_j + b) in
/// (0,1)^d, and p_i = tanh(mean_j r_ij ⊙ x_j). The score decomposition keeps
/// it at two matmuls plus one O(T·d) pass per row.
pub fn gated_relation(pass: &mut Pass, x: TensorId) -> Result<TensorId> {
    let t = pass.tape.shape(x)[0];
    let wa = pass.p("gate.wa")?;
    let wb = pass.p("gate.wb")?;
    let b = pass.p("gate.b")?;
    let row_part = pass.tape.matmul(x, wa)?;
    let col_part = pass.tape.matmul(x, wb)?;
    let col_part = pass.tape.add_row_vector(col_part, b)?;
    let mut mixed_rows = Vec::with_capacity(t);
    for i in 0..t {
        let a_i = pass.tape.row_vec(row_part, i)?;
        let scores = pass.tape.add_row_vector(col_part, a_i)?;
        let gate = pass.tape.sigmoid(scores)?;
        let gated = pass.tape.mul(gate, x)?;
        mixed_rows.push(pass.tape.col_sum(gated)?);
    }
    let mixed = pass.tape.stack_rows(&mixed_rows)?;
    let scaled = pass.tape.scalar_mul(mixed, 1.0 / t as f64)?;
    pass.tape.tanh(scaled)
}

/// Full representation pipeline: per-token feature vectors P, shape [T×d_x].
pub fn encode(pass: &mut Pass, sentence: &SentenceIds) -> Result<TensorId> {
    if sentence.is_empty() {
        return Err(TensorError::EmptyInput { op: "encode" });
    }
    let z = embed_sentence(pass, sentence)?;
    let x = context_features(pass, z)?;
    gated_relation(pass, x)
}
