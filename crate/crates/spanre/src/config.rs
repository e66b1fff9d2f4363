//! Model and training configuration.
//!
//! The shipped defaults follow the published settings: 300-d word features,
//! 300-d character embeddings, dropout 0.25 on word features, subject
//! sampling length 4, attention hidden size 256, Adam at 1e-4 with linear
//! warmup. Representation-layer widths the original leaves open (`d_c`,
//! `d_x`) are config keys.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// word embedding width
    pub d_word: usize,
    /// character embedding width
    pub d_char: usize,
    /// per-kernel char CNN output width; char features are 3·d_c
    /// multi-scale, d_c otherwise
    pub d_c: usize,
    /// sentence feature width; must be even (the subject BiLSTM uses
    /// hidden d_x/2 per direction so fused widths line up)
    pub d_x: usize,
    /// bilinear attention hidden size
    pub k_att: usize,
    /// subject sampling length K
    pub subject_sample_len: usize,
    /// token cap; sentences are truncated here at ingestion and relative
    /// position offsets clamp to ±t_max
    pub t_max: usize,
    /// char CNN uses kernels {1,2,3}; false falls back to a single k=3 kernel
    pub multi_scale_chars: bool,
    /// bilinear entity attention; false concatenates subject and sentence
    /// features instead
    pub entity_attention: bool,
    /// subject heads get a tanh hidden layer of width d_x; false makes them
    /// plain linear
    pub subject_head_hidden: bool,
    /// lowercase tokens before vocabulary lookup
    pub lowercase: bool,
    /// tag decision threshold τ
    pub threshold: f64,
    /// dropout on the concatenated word feature rows (train mode only)
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_word: 300,
            d_char: 300,
            d_c: 50,
            d_x: 300,
            k_att: 256,
            subject_sample_len: 4,
            t_max: 120,
            multi_scale_chars: true,
            entity_attention: true,
            subject_head_hidden: true,
            lowercase: true,
            threshold: 0.5,
            dropout_p: 0.25,
        }
    }
}

impl ModelConfig {
    /// A small configuration for tests and gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            d_word: 12,
            d_char: 8,
            d_c: 4,
            d_x: 12,
            k_att: 8,
            subject_sample_len: 3,
            t_max: 16,
            ..ModelConfig::default()
        }
    }

    /// BiLSTM hidden width per direction.
    pub fn d_h(&self) -> usize {
        self.d_x / 2
    }

    /// Broadcast subject feature width (2·d_h, equal to d_x by construction).
    pub fn d_q(&self) -> usize {
        self.d_x
    }

    /// Char CNN kernel sizes under the current ablation flag.
    pub fn char_kernels(&self) -> Vec<usize> {
        if self.multi_scale_chars {
            vec![1, 2, 3]
        } else {
            vec![3]
        }
    }

    /// Width of the per-token char feature ū.
    pub fn d_char_feat(&self) -> usize {
        self.char_kernels().len() * self.d_c
    }

    /// Width of the concatenated token row z = [ū; s].
    pub fn d_z(&self) -> usize {
        self.d_char_feat() + self.d_word
    }

    /// Input width of the obj_rel heads. Both fusion modes concatenate a
    /// subject-conditioned block with the token features P, so the width is
    /// d_q + d_x either way; the modes differ in what the first block is
    /// (attended context vs the raw broadcast subject state).
    pub fn d_fused(&self) -> usize {
        self.d_q() + self.d_x
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.d_x == 0 || self.d_x % 2 != 0 {
            return Err(format!("d_x must be positive and even, got {}", self.d_x));
        }
        for (name, v) in [
            ("d_word", self.d_word),
            ("d_char", self.d_char),
            ("d_c", self.d_c),
            ("k_att", self.k_att),
            ("subject_sample_len", self.subject_sample_len),
            ("t_max", self.t_max),
        ] {
            if v == 0 {
                return Err(format!("{} must be positive", name));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(format!("threshold {} outside (0, 1)", self.threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// stop after this many epochs without a validation-F1 improvement
    pub patience: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 1e-4,
            warmup_steps: 500,
            epochs: 100,
            batch_size: 32,
            seed: 42,
            patience: 20,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.base_lr <= 0.0 {
            return Err(format!("base_lr must be positive, got {}", self.base_lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err("epochs and batch_size must be positive".into());
        }
        self.model.validate()
    }
}
