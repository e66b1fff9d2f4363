//! Learnable parameters and the per-pass binding context.
//!
//! All weights live in a name-keyed map so checkpoints, Adam state, and
//! gradient bookkeeping share one addressing scheme. A [`Pass`] owns the tape
//! for one forward/backward and lazily binds each parameter onto it exactly
//! once, so multiple uses accumulate gradients on a single tape node.

use crate::config::ModelConfig;
use crate::tensor::{Result, Tape, Tensor, TensorId};
use crate::vocab::{CharVocab, Vocab, PAD, UNK};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::BufRead;

pub const CONTEXT_KERNELS: [usize; 3] = [1, 3, 5];

const INIT_SCALE: f64 = 0.1;
const RELPOS_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A sentence converted to vocabulary ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceIds {
    pub tokens: Vec<usize>,
    pub chars: Vec<Vec<usize>>,
}

impl SentenceIds {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// All learnable weights keyed by name, plus the vocabularies, relation
/// labels, and the config snapshot (ablation switches included) they were
/// built under.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: ModelConfig,
    pub n_relations: usize,
    pub relation_labels: Vec<String>,
    pub vocab: Vocab,
    pub char_vocab: CharVocab,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Fresh parameters, uniform(-0.1, 0.1) weights and zero biases, in a
    /// fixed creation order so a seed pins every value.
    pub fn init(
        cfg: ModelConfig,
        relations: &[String],
        vocab: Vocab,
        char_vocab: CharVocab,
        seed: u64,
    ) -> Self {
        let n_relations = relations.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        let d_x = cfg.d_x;
        let d_h = cfg.d_h();
        let d_q = cfg.d_q();

        // embedding tables use the fixed ±0.1 fallback; weight matrices are
        // fan-in scaled (uniform with variance 1/fan_in) so activations stay
        // O(1) through the stacked tanh layers
        let fan = |tensors: &mut BTreeMap<String, Tensor>,
                   name: &str,
                   shape: Vec<usize>,
                   fan_in: usize,
                   rng: &mut ChaCha8Rng| {
            let scale = (3.0 / fan_in as f64).sqrt();
            tensors.insert(name.to_string(), Tensor::uniform(shape, scale, rng));
        };
        let embed = |tensors: &mut BTreeMap<String, Tensor>, name: &str, shape: Vec<usize>, rng: &mut ChaCha8Rng| {
            tensors.insert(name.to_string(), Tensor::uniform(shape, INIT_SCALE, rng));
        };
        let zero = |tensors: &mut BTreeMap<String, Tensor>, name: &str, shape: Vec<usize>| {
            tensors.insert(name.to_string(), Tensor::zeros(shape));
        };

        // word embeddings; the <pad> row stays zero (it never appears in a
        // sentence, so it also never receives gradient)
        let mut word = Tensor::uniform(vec![vocab.len(), cfg.d_word], INIT_SCALE, &mut rng);
        word.data[..cfg.d_word].fill(0.0);
        tensors.insert("word.table".to_string(), word);

        embed(&mut tensors, "char.table", vec![char_vocab.len(), cfg.d_char], &mut rng);
        for k in cfg.char_kernels() {
            fan(&mut tensors, &format!("char.conv{}.kernel", k), vec![k, cfg.d_char, cfg.d_c], k * cfg.d_char, &mut rng);
            zero(&mut tensors, &format!("char.conv{}.bias", k), vec![cfg.d_c]);
        }
        for k in CONTEXT_KERNELS {
            fan(&mut tensors, &format!("ctx.conv{}.kernel", k), vec![k, cfg.d_z(), d_x], k * cfg.d_z(), &mut rng);
            zero(&mut tensors, &format!("ctx.conv{}.bias", k), vec![d_x]);
        }
        fan(&mut tensors, "gate.wa", vec![d_x, d_x], d_x, &mut rng);
        fan(&mut tensors, "gate.wb", vec![d_x, d_x], d_x, &mut rng);
        zero(&mut tensors, "gate.b", vec![d_x]);

        for dir in ["fw", "bw"] {
            fan(&mut tensors, &format!("subj_lstm.{}.wx", dir), vec![4 * d_h, d_x], d_x, &mut rng);
            fan(&mut tensors, &format!("subj_lstm.{}.wh", dir), vec![4 * d_h, d_h], d_h, &mut rng);
            zero(&mut tensors, &format!("subj_lstm.{}.b", dir), vec![4 * d_h]);
        }
        {
            // relative-position rows need enough initial amplitude to show
            // through the broadcast subject state; see RELPOS_INIT_SCALE
            let t = Tensor::uniform(vec![2 * cfg.t_max + 1, d_q], RELPOS_INIT_SCALE, &mut rng);
            tensors.insert("relpos.table".to_string(), t);
        }
        fan(&mut tensors, "att.u", vec![cfg.k_att, d_q], d_q, &mut rng);
        fan(&mut tensors, "att.v", vec![cfg.k_att, d_x], d_x, &mut rng);

        for side in ["start", "end"] {
            if cfg.subject_head_hidden {
                fan(&mut tensors, &format!("subj.{}.w1", side), vec![d_x, d_x], d_x, &mut rng);
                zero(&mut tensors, &format!("subj.{}.b1", side), vec![d_x]);
                fan(&mut tensors, &format!("subj.{}.w2", side), vec![d_x], d_x, &mut rng);
            } else {
                fan(&mut tensors, &format!("subj.{}.w", side), vec![d_x], d_x, &mut rng);
            }
            zero(&mut tensors, &format!("subj.{}.b", side), vec![1]);
        }
        for side in ["start", "end"] {
            fan(&mut tensors, &format!("objrel.{}.w", side), vec![cfg.d_fused(), n_relations], cfg.d_fused(), &mut rng);
            zero(&mut tensors, &format!("objrel.{}.b", side), vec![n_relations]);
        }

        ModelParams {
            cfg,
            n_relations,
            relation_labels: relations.to_vec(),
            vocab,
            char_vocab,
            tensors,
        }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {:?}", name))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {:?}", name))
    }

    /// Total number of learnable values.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(|t| t.numel()).sum()
    }

    /// Converts tokens to word/char ids, truncating at `t_max`.
    pub fn sentence_ids(&self, tokens: &[String]) -> SentenceIds {
        let take = tokens.len().min(self.cfg.t_max);
        let mut ids = Vec::with_capacity(take);
        let mut chars = Vec::with_capacity(take);
        for tok in &tokens[..take] {
            let norm = if self.cfg.lowercase {
                tok.to_lowercase()
            } else {
                tok.clone()
            };
            ids.push(self.vocab.id(&norm));
            let cs: Vec<usize> = norm.chars().map(|c| self.char_vocab.id(&c.to_string())).collect();
            // empty words are padded to length 1
            chars.push(if cs.is_empty() { vec![PAD] } else { cs });
        }
        SentenceIds { tokens: ids, chars }
    }

    /// Loads word vectors in the standard text format, one
    /// `token v1 … v_d` line per word. Tokens missing from the file keep
    /// their random initialization; returns how many vocab rows were set.
    pub fn load_word_vectors(&mut self, reader: impl std::io::Read) -> std::io::Result<usize> {
        let d = self.cfg.d_word;
        let mut pending: Vec<(usize, Vec<f64>)> = Vec::new();
        for (lineno, line) in std::io::BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let token = match it.next() {
                Some(t) => t,
                None => continue,
            };
            let id = self.vocab.id(token);
            if id == UNK && token != "<unk>" {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = it.map(|v| v.parse::<f64>()).collect();
            let vals = vals.map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("word-vector line {}: {}", lineno + 1, e),
                )
            })?;
            if vals.len() != d {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("word-vector line {}: expected {} values, got {}", lineno + 1, d, vals.len()),
                ));
            }
            pending.push((id, vals));
        }
        let table = self.get_mut("word.table");
        let n = pending.len();
        for (id, vals) in pending {
            table.data[id * d..(id + 1) * d].copy_from_slice(&vals);
        }
        Ok(n)
    }

    /// Adds per-name gradients into the parameter grad slots.
    pub fn accumulate(&mut self, grads: Vec<(String, Vec<f64>)>) {
        for (name, g) in grads {
            self.get_mut(&name).accumulate_grad(&g);
        }
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors.values_mut() {
            t.zero_grad();
        }
    }
}

/// One forward/backward pass: a private tape plus the parameter bindings made
/// on it.
pub struct Pass<'p> {
    pub tape: Tape,
    params: &'p ModelParams,
    bound: BTreeMap<String, TensorId>,
    pub mode: Mode,
    rng: ChaCha8Rng,
}

impl<'p> Pass<'p> {
    pub fn eval(params: &'p ModelParams) -> Self {
        Pass {
            tape: Tape::new(),
            params,
            bound: BTreeMap::new(),
            mode: Mode::Eval,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    /// Train-mode pass; `dropout_seed` pins the dropout stream so a pass is
    /// reproducible regardless of scheduling.
    pub fn train(params: &'p ModelParams, dropout_seed: u64) -> Self {
        Pass {
            tape: Tape::new(),
            params,
            bound: BTreeMap::new(),
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(dropout_seed),
        }
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.params.cfg
    }

    pub fn n_relations(&self) -> usize {
        self.params.n_relations
    }

    pub fn params(&self) -> &ModelParams {
        self.params
    }

    /// Binds a named parameter, reusing the existing tape node on repeat use.
    pub fn p(&mut self, name: &str) -> Result<TensorId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let t = self.params.get(name);
        let id = self.tape.bind(t)?;
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Word-feature dropout: active only in train mode.
    pub fn dropout(&mut self, x: TensorId, p: f64) -> Result<TensorId> {
        self.tape
            .dropout(x, p, self.mode == Mode::Train, &mut self.rng)
    }

    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Gradients of every bound parameter that requires them, by name.
    /// Call after [`Pass::backward`].
    pub fn grads(&self) -> Vec<(String, Vec<f64>)> {
        self.bound
            .iter()
            .filter(|(name, _)| self.params.get(name).requires_grad)
            .map(|(name, &id)| (name.clone(), self.tape.grad(id).to_vec()))
            .collect()
    }
}

/// Convenience: checks a bound-for-bound match between two parameter sets.
pub fn params_equal(a: &ModelParams, b: &ModelParams) -> bool {
    a.cfg == b.cfg
        && a.n_relations == b.n_relations
        && a.tensors.len() == b.tensors.len()
        && a.tensors.iter().all(|(k, t)| {
            b.tensors
                .get(k)
                .map(|u| u.shape == t.shape && u.data == t.data)
                .unwrap_or(false)
        })
}

/// Verifies tape gradients of an arbitrary forward function against central
/// finite differences over every element of every parameter. Returns the
/// worst relative error. `train_seed` pins the dropout stream when checking
/// train-mode paths; `None` checks in eval mode.
pub fn check_params_gradients<F>(
    params: &ModelParams,
    train_seed: Option<u64>,
    forward: F,
) -> Result<f64>
where
    F: for<'a> Fn(&mut Pass<'a>) -> Result<TensorId>,
{
    fn make_pass(p: &ModelParams, train_seed: Option<u64>) -> Pass<'_> {
        match train_seed {
            Some(s) => Pass::train(p, s),
            None => Pass::eval(p),
        }
    }

    let mut pass = make_pass(params, train_seed);
    let loss = forward(&mut pass)?;
    pass.backward(loss)?;
    let analytic = pass.grads();
    drop(pass);

    let eval_at = |work: &ModelParams| -> Result<f64> {
        let mut pass = make_pass(work, train_seed);
        let id = forward(&mut pass)?;
        Ok(pass.tape.value(id))
    };

    let mut worst = 0.0f64;
    let mut work = params.clone();
    for (name, grad) in &analytic {
        let n = work.get(name).numel();
        debug_assert_eq!(n, grad.len());
        for i in 0..n {
            let orig = work.get(name).data[i];
            work.get_mut(name).data[i] = orig + crate::tensor::gradcheck::STEP;
            let up = eval_at(&work)?;
            work.get_mut(name).data[i] = orig - crate::tensor::gradcheck::STEP;
            let down = eval_at(&work)?;
            work.get_mut(name).data[i] = orig;
            let numeric = (up - down) / (2.0 * crate::tensor::gradcheck::STEP);
            worst = worst.max(crate::tensor::gradcheck::rel_err(grad[i], numeric));
        }
    }
    Ok(worst)
}

/// Mixes a master seed with per-scope indices into a fresh stream seed.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(a.wrapping_add(1)))
        .wrapping_add(0xbf58_476d_1ce4_e5b9u64.wrapping_mul(b.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ModelParams {
    /// Small fixed-vocabulary parameters; used by tests.
    pub fn init_for_tests(cfg: ModelConfig, n_relations: usize, seed: u64) -> Self {
        let mut vocab = Vocab::new();
        for w in ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"] {
            vocab.add(w);
        }
        let mut chars = CharVocab::new();
        for c in "abgdez".chars() {
            chars.add(&c.to_string());
        }
        let relations: Vec<String> = (0..n_relations).map(|i| format!("rel{}", i)).collect();
        ModelParams::init(cfg, &relations, vocab, chars, seed)
    }
}
