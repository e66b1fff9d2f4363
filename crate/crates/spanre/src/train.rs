//! Joint objective, Adam with linear warmup, and the epoch loop.
//!
//! The loss is the sum of four binary-cross-entropy terms: subject start,
//! subject end, obj-rel start, obj-rel end, with the obj-rel terms averaged
//! over the sentence's gold subjects. Training is teacher-forced: obj-rel
//! heads only ever see gold subjects; predicted subjects drive them at
//! inference.

use crate::config::TrainConfig;
use crate::data::{AnnotatedExample, DataError, RelationSchema};
use crate::encoder::encode;
use crate::eval::{evaluate, EvalReport};
use crate::model::{derive_seed, ModelParams, Pass, SentenceIds};
use crate::tagger::{encode_gold_tags, extract_triplets, objrel_logits, subject_logits, Triplet};
use crate::tensor::{Tensor, TensorError, TensorId};
use crate::attention::fuse;
use crate::vocab::build_vocabs;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite gradient in parameter {0:?}")]
    NonFiniteGrad(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// The four logged loss components plus the tape node of their sum.
pub struct JointLoss {
    pub total: TensorId,
    pub sub_start: f64,
    pub sub_end: f64,
    pub objrel_start: f64,
    pub objrel_end: f64,
}

impl JointLoss {
    pub fn value(&self) -> f64 {
        self.sub_start + self.sub_end + self.objrel_start + self.objrel_end
    }
}

/// Builds the joint objective for one example on the pass's tape.
///
/// Returns `None` (skip-with-warning signal) when the example has no gold
/// subjects to teacher-force.
pub fn joint_loss(
    pass: &mut Pass,
    sentence: &SentenceIds,
    gold: &[Triplet],
) -> crate::tensor::Result<Option<JointLoss>> {
    let t = sentence.len();
    let r = pass.n_relations();
    let (sub_gold, per_subject) = encode_gold_tags(t, r, gold)?;
    if per_subject.is_empty() {
        return Ok(None);
    }

    let p = encode(pass, sentence)?;
    let (zs, ze) = subject_logits(pass, p)?;
    let sub_start = pass.tape.bce_with_logits(zs, &sub_gold.start)?;
    let sub_end = pass.tape.bce_with_logits(ze, &sub_gold.end)?;

    let mut start_terms = Vec::with_capacity(per_subject.len());
    let mut end_terms = Vec::with_capacity(per_subject.len());
    for (span, tags) in &per_subject {
        let fused = fuse(pass, p, *span)?;
        let (os, oe) = objrel_logits(pass, fused)?;
        start_terms.push(pass.tape.bce_with_logits(os, &tags.start)?);
        end_terms.push(pass.tape.bce_with_logits(oe, &tags.end)?);
    }
    let inv = 1.0 / per_subject.len() as f64;
    let mean_of = |terms: &[TensorId], pass: &mut Pass| -> crate::tensor::Result<TensorId> {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = pass.tape.add(acc, t)?;
        }
        pass.tape.scalar_mul(acc, inv)
    };
    let objrel_start = mean_of(&start_terms, pass)?;
    let objrel_end = mean_of(&end_terms, pass)?;

    let s1 = pass.tape.add(sub_start, sub_end)?;
    let s2 = pass.tape.add(objrel_start, objrel_end)?;
    let total = pass.tape.add(s1, s2)?;
    Ok(Some(JointLoss {
        total,
        sub_start: pass.tape.value(sub_start),
        sub_end: pass.tape.value(sub_end),
        objrel_start: pass.tape.value(objrel_start),
        objrel_end: pass.tape.value(objrel_end),
    }))
}

/// Linear ramp from 0 to `base_lr` over `warmup_steps`, then constant.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.base_lr
    } else {
        cfg.base_lr * step as f64 / cfg.warmup_steps as f64
    }
}

/// Adam moments per named parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState {
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Default for AdamState {
    fn default() -> Self {
        AdamState::new()
    }
}

/// One bias-corrected Adam update over the grad slots; missing grads count
/// as zero. Grad slots are cleared afterwards. A non-finite gradient aborts
/// naming the offending parameter.
pub fn adam_step(
    tensors: &mut BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), TrainError> {
    for (name, t) in tensors.iter() {
        if let Some(g) = &t.grad {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TrainError::NonFiniteGrad(name.clone()));
            }
        }
    }
    state.step += 1;
    let c1 = 1.0 - state.beta1.powi(state.step as i32);
    let c2 = 1.0 - state.beta2.powi(state.step as i32);
    for (name, t) in tensors.iter_mut() {
        if !t.requires_grad {
            t.grad = None;
            continue;
        }
        let n = t.data.len();
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let zero;
        let g: &[f64] = match &t.grad {
            Some(g) => g,
            None => {
                zero = vec![0.0; n];
                &zero
            }
        };
        for i in 0..n {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            t.data[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
        t.grad = None;
    }
    Ok(())
}

/// A training-ready example: ids plus resolved gold triplets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub ids: SentenceIds,
    pub gold: Vec<Triplet>,
}

/// Resolves and id-encodes a corpus against fixed parameters. Examples whose
/// spans fall outside the (possibly truncated) token window are dropped and
/// counted.
pub fn prepare(
    params: &ModelParams,
    corpus: &[AnnotatedExample],
    schema: &RelationSchema,
) -> Result<(Vec<Prepared>, usize), TrainError> {
    let mut out = Vec::with_capacity(corpus.len());
    let mut dropped = 0usize;
    for ex in corpus {
        let gold = ex.resolve(schema)?;
        let ids = params.sentence_ids(&ex.tokens);
        if ids.is_empty() || gold.iter().any(|t| t.object.end >= ids.len() || t.subject.end >= ids.len()) {
            dropped += 1;
            continue;
        }
        out.push(Prepared { ids, gold });
    }
    Ok((out, dropped))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_precision: f64,
    pub val_recall: f64,
    pub val_f1: f64,
    pub lr: f64,
    pub is_best: bool,
}

pub struct TrainResult {
    /// parameters after the last completed epoch
    pub params: ModelParams,
    /// best-by-validation-F1 snapshot
    pub best: ModelParams,
    pub best_f1: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
    pub diverged: bool,
    pub skipped_no_subject: usize,
    pub dropped_out_of_window: usize,
    /// vocabulary rows filled from a word-vector file, when one was given
    pub word_vectors_loaded: Option<usize>,
}

fn map_ordered<T: Sync, U: Send>(
    pool: Option<&rayon::ThreadPool>,
    items: &[T],
    f: impl Fn(&T) -> U + Sync + Send,
) -> Vec<U> {
    match pool {
        Some(p) if items.len() > 1 => p.install(|| items.par_iter().map(f).collect()),
        _ => items.iter().map(f).collect(),
    }
}

/// [`evaluate_prepared`] with an internally built pool of `threads` workers.
pub fn evaluate_with_threads(
    params: &ModelParams,
    prepared: &[Prepared],
    threads: usize,
) -> Result<EvalReport, TrainError> {
    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| TrainError::Config(format!("thread pool: {}", e)))?,
        )
    } else {
        None
    };
    evaluate_prepared(params, prepared, pool.as_ref())
}

/// Extracts predictions for a prepared corpus and scores them against gold.
pub fn evaluate_prepared(
    params: &ModelParams,
    prepared: &[Prepared],
    pool: Option<&rayon::ThreadPool>,
) -> Result<EvalReport, TrainError> {
    let preds = map_ordered(pool, prepared, |ex| extract_triplets(params, &ex.ids));
    let mut pred_sets = Vec::with_capacity(prepared.len());
    for p in preds {
        pred_sets.push(p?);
    }
    let pred: Vec<(usize, BTreeSet<Triplet>)> = pred_sets.into_iter().enumerate().collect();
    let gold: Vec<(usize, BTreeSet<Triplet>)> = prepared
        .iter()
        .enumerate()
        .map(|(i, ex)| (i, ex.gold.iter().copied().collect()))
        .collect();
    Ok(evaluate(&pred, &gold)?)
}

struct ExampleGrads {
    grads: Vec<(String, Vec<f64>)>,
    loss: f64,
}

fn example_pass(
    params: &ModelParams,
    ex: &Prepared,
    dropout_seed: u64,
) -> crate::tensor::Result<Option<ExampleGrads>> {
    let mut pass = Pass::train(params, dropout_seed);
    let loss = match joint_loss(&mut pass, &ex.ids, &ex.gold)? {
        Some(l) => l,
        None => return Ok(None),
    };
    pass.backward(loss.total)?;
    Ok(Some(ExampleGrads {
        grads: pass.grads(),
        loss: loss.value(),
    }))
}

/// Full training loop: deterministic in the seed, teacher forcing, Adam with
/// linear warmup, per-epoch validation, best-by-F1 tracking, and early stop.
///
/// A non-finite loss or gradient stops training with `diverged = true`; the
/// best snapshot up to that point is retained.
pub fn train(
    train_corpus: &[AnnotatedExample],
    val_corpus: Option<&[AnnotatedExample]>,
    schema: &RelationSchema,
    cfg: &TrainConfig,
    threads: usize,
    word_vectors: Option<&std::path::Path>,
) -> Result<TrainResult, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    if train_corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (vocab, char_vocab) =
        build_vocabs(train_corpus.iter().map(|ex| ex.tokens.as_slice()), cfg.model.lowercase);
    let mut params = ModelParams::init(cfg.model.clone(), schema.labels(), vocab, char_vocab, cfg.seed);
    let mut word_vectors_loaded = None;
    if let Some(path) = word_vectors {
        let f = std::fs::File::open(path).map_err(DataError::Io)?;
        word_vectors_loaded = Some(params.load_word_vectors(f).map_err(DataError::Io)?);
    }
    let (train_set, dropped_train) = prepare(&params, train_corpus, schema)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (val_set, dropped_val) = match val_corpus {
        Some(v) => prepare(&params, v, schema)?,
        None => (train_set.clone(), 0),
    };

    let pool = if threads > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| TrainError::Config(format!("thread pool: {}", e)))?,
        )
    } else {
        None
    };

    let mut adam = AdamState::new();
    let mut best = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut history = Vec::new();
    let mut diverged = false;
    let mut skipped = 0usize;

    'epochs: for epoch in 1..=cfg.epochs {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64, 0));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_examples = 0usize;
        let mut last_lr = lr_at(adam.step + 1, cfg);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(usize, &Prepared)> = chunk.iter().map(|&i| (i, &train_set[i])).collect();
            let results = map_ordered(pool.as_ref(), &batch, |(idx, ex)| {
                example_pass(&params, ex, derive_seed(cfg.seed, epoch as u64, *idx as u64))
            });
            let mut contributed = 0usize;
            let mut batch_grads: Vec<(String, Vec<f64>)> = Vec::new();
            let mut batch_loss = 0.0;
            for res in results {
                match res {
                    Ok(Some(eg)) => {
                        contributed += 1;
                        batch_loss += eg.loss;
                        batch_grads.extend(eg.grads);
                    }
                    Ok(None) => skipped += 1,
                    Err(TensorError::NonFinite { .. }) => {
                        diverged = true;
                        break 'epochs;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if contributed == 0 {
                continue;
            }
            let scale = 1.0 / contributed as f64;
            for (_, g) in batch_grads.iter_mut() {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            params.accumulate(batch_grads);
            epoch_loss += batch_loss;
            epoch_examples += contributed;
            // optimizer steps are 1-based so the first update is small but
            // nonzero under warmup
            last_lr = lr_at(adam.step + 1, cfg);
            match adam_step(&mut params.tensors, &mut adam, last_lr) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGrad(_)) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        if epoch_examples == 0 {
            return Err(TrainError::Config(
                "no trainable examples: every sentence lacks gold subjects".into(),
            ));
        }

        let report = evaluate_prepared(&params, &val_set, pool.as_ref())?;
        let f1 = report.overall.f1;
        let is_best = f1 > best_f1;
        if is_best {
            best_f1 = f1;
            best_epoch = epoch;
            best = params.clone();
        }
        history.push(EpochMetrics {
            epoch,
            train_loss: epoch_loss / epoch_examples as f64,
            val_precision: report.overall.precision,
            val_recall: report.overall.recall,
            val_f1: f1,
            lr: last_lr,
            is_best,
        });
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    Ok(TrainResult {
        params,
        best,
        best_f1: if best_f1.is_finite() { best_f1 } else { 0.0 },
        best_epoch,
        history,
        diverged,
        skipped_no_subject: skipped,
        dropped_out_of_window: dropped_train + dropped_val,
        word_vectors_loaded,
    })
}

/// Finite-difference check of the full joint loss on a fixed five-token
/// sentence carrying an EPO pair, in eval mode and with a pinned train-mode
/// dropout stream. Returns the worst relative error across every parameter.
pub fn end_to_end_gradcheck(seed: u64) -> crate::tensor::Result<f64> {
    use crate::attention::Span;
    use crate::config::ModelConfig;
    use crate::model::check_params_gradients;

    let cfg = ModelConfig {
        subject_sample_len: 4,
        ..ModelConfig::tiny()
    };
    let params = ModelParams::init_for_tests(cfg, 3, seed);
    let toks: Vec<String> = ["alpha", "beta", "gamma", "delta", "epsilon"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let ids = params.sentence_ids(&toks);
    let gold = vec![
        Triplet { subject: Span::new(0, 0), relation: 0, object: Span::new(2, 3) },
        Triplet { subject: Span::new(0, 0), relation: 1, object: Span::new(2, 3) },
        Triplet { subject: Span::new(4, 4), relation: 2, object: Span::new(0, 0) },
    ];
    let mut worst = 0.0f64;
    for train_seed in [None, Some(seed ^ 0x5eed)] {
        let err = check_params_gradients(&params, train_seed, |pass| {
            Ok(joint_loss(pass, &ids, &gold)?.expect("has subjects").total)
        })?;
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::check_params_gradients;
    use crate::attention::Span;

    fn example(params: &ModelParams) -> (SentenceIds, Vec<Triplet>) {
        let toks: Vec<String> = ["alpha", "beta", "gamma", "delta", "epsilon"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let ids = params.sentence_ids(&toks);
        let gold = vec![
            Triplet { subject: Span::new(0, 0), relation: 0, object: Span::new(2, 3) },
            Triplet { subject: Span::new(0, 0), relation: 1, object: Span::new(2, 3) },
        ];
        (ids, gold)
    }

    #[test]
    fn loss_components_sum_to_total() {
        let params = ModelParams::init_for_tests(ModelConfig::tiny(), 3, 30);
        let (ids, gold) = example(&params);
        let mut pass = Pass::eval(&params);
        let loss = joint_loss(&mut pass, &ids, &gold).unwrap().unwrap();
        let total = pass.tape.value(loss.total);
        assert!((total - loss.value()).abs() < 1e-12);
        assert!(total >= 0.0);
    }

    #[test]
    fn zero_weight_heads_cost_ln2_per_subject_term() {
        let mut params = ModelParams::init_for_tests(ModelConfig::tiny(), 3, 30);
        for side in ["start", "end"] {
            for part in ["w1", "b1", "w2", "b"] {
                params.get_mut(&format!("subj.{}.{}", side, part)).data.fill(0.0);
            }
        }
        let (ids, gold) = example(&params);
        let mut pass = Pass::eval(&params);
        let loss = joint_loss(&mut pass, &ids, &gold).unwrap().unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((loss.sub_start - ln2).abs() < 1e-12);
        assert!((loss.sub_end - ln2).abs() < 1e-12);
        assert!(loss.value() >= 2.0 * ln2);
    }

    #[test]
    fn saturated_bias_heads_reach_near_zero_loss() {
        // T = 1 self-relation example: with zero weights the logits equal the
        // biases, so ±50 biases place every tag exactly on gold
        let mut params = ModelParams::init_for_tests(ModelConfig::tiny(), 2, 31);
        for side in ["start", "end"] {
            for part in ["w1", "b1", "w2"] {
                params.get_mut(&format!("subj.{}.{}", side, part)).data.fill(0.0);
            }
            params.get_mut(&format!("subj.{}.b", side)).data[0] = 50.0;
            params.get_mut(&format!("objrel.{}.w", side)).data.fill(0.0);
            let b = params.get_mut(&format!("objrel.{}.b", side));
            b.data[0] = 50.0; // relation 0 fires
            b.data[1] = -50.0; // relation 1 stays off
        }
        let ids = params.sentence_ids(&["alpha".into()]);
        let gold = vec![Triplet {
            subject: Span::new(0, 0),
            relation: 0,
            object: Span::new(0, 0),
        }];
        let mut pass = Pass::eval(&params);
        let loss = joint_loss(&mut pass, &ids, &gold).unwrap().unwrap();
        assert!(loss.value() < 1e-8, "loss = {}", loss.value());
    }

    #[test]
    fn no_gold_subjects_signals_skip() {
        let params = ModelParams::init_for_tests(ModelConfig::tiny(), 2, 32);
        let ids = params.sentence_ids(&["alpha".into(), "beta".into()]);
        let mut pass = Pass::eval(&params);
        assert!(joint_loss(&mut pass, &ids, &[]).unwrap().is_none());
    }

    #[test]
    fn end_to_end_gradients_match_finite_differences() {
        let params = ModelParams::init_for_tests(
            ModelConfig {
                subject_sample_len: 4,
                ..ModelConfig::tiny()
            },
            3,
            33,
        );
        let (ids, gold) = example(&params);
        // eval mode and a fixed-dropout train pass both must check out
        for train_seed in [None, Some(77u64)] {
            let err = check_params_gradients(&params, train_seed, |pass| {
                Ok(joint_loss(pass, &ids, &gold)?.expect("has subjects").total)
            })
            .unwrap();
            assert!(err < 1e-4, "train_seed {:?}: max rel err {}", train_seed, err);
        }
    }

    #[test]
    fn warmup_schedule_shape() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert_eq!(lr_at(250, &cfg), 5e-5);
        assert_eq!(lr_at(500, &cfg), 1e-4);
        assert_eq!(lr_at(5000, &cfg), 1e-4);
        // non-decreasing over the ramp
        let mut prev = 0.0;
        for s in 0..=cfg.warmup_steps {
            let lr = lr_at(s, &cfg);
            assert!(lr >= prev);
            prev = lr;
        }
        let instant = TrainConfig {
            warmup_steps: 0,
            ..TrainConfig::default()
        };
        assert_eq!(lr_at(0, &instant), 1e-4);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut tensors = BTreeMap::new();
        let mut w = Tensor::new(vec![1], vec![0.0]).unwrap();
        w.grad = Some(vec![0.37]);
        tensors.insert("w".to_string(), w);
        let mut state = AdamState::new();
        adam_step(&mut tensors, &mut state, 0.01).unwrap();
        let moved = tensors["w"].data[0].abs();
        assert!((moved - 0.01).abs() < 1e-6, "first step moved {}", moved);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_grads_leave_params_unchanged() {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Tensor::new(vec![2], vec![1.5, -2.5]).unwrap());
        let mut state = AdamState::new();
        adam_step(&mut tensors, &mut state, 0.1).unwrap();
        assert_eq!(tensors["w"].data, vec![1.5, -2.5]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Tensor::new(vec![1], vec![0.0]).unwrap());
        let mut state = AdamState::new();
        for _ in 0..100 {
            let w = tensors["w"].data[0];
            tensors.get_mut("w").unwrap().grad = Some(vec![2.0 * (w - 3.0)]);
            adam_step(&mut tensors, &mut state, 0.3).unwrap();
        }
        assert!((tensors["w"].data[0] - 3.0).abs() < 1e-2);
    }

    #[test]
    fn adam_aborts_on_nan_grad_naming_the_parameter() {
        let mut tensors = BTreeMap::new();
        let mut w = Tensor::new(vec![1], vec![0.0]).unwrap();
        w.grad = Some(vec![f64::NAN]);
        tensors.insert("bad.param".to_string(), w);
        let err = adam_step(&mut tensors, &mut AdamState::new(), 0.1).unwrap_err();
        match err {
            TrainError::NonFiniteGrad(name) => assert_eq!(name, "bad.param"),
            other => panic!("unexpected {:?}", other),
        }
    }

    #[test]
    fn one_small_step_decreases_the_loss() {
        let params = ModelParams::init_for_tests(ModelConfig::tiny(), 3, 34);
        let (ids, gold) = example(&params);
        for lr in [1e-5, 1e-6] {
            let mut p = params.clone();
            let mut pass = Pass::eval(&p);
            let before = joint_loss(&mut pass, &ids, &gold).unwrap().unwrap();
            let before_val = before.value();
            pass.backward(before.total).unwrap();
            let grads = pass.grads();
            drop(pass);
            p.accumulate(grads);
            adam_step(&mut p.tensors, &mut AdamState::new(), lr).unwrap();
            let mut pass = Pass::eval(&p);
            let after = joint_loss(&mut pass, &ids, &gold).unwrap().unwrap().value();
            assert!(after < before_val, "lr {}: {} -> {}", lr, before_val, after);
        }
    }
}
