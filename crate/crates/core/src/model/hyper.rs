use alloc::format;

use serde::{Deserialize, Serialize};

use crate::encoding::Variant;
use crate::error::{Error, Result};
use crate::pip::PipOptions;

/// Sub-blocks or towers switched off.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_scb: bool,
    pub no_fcb: bool,
    pub no_pip: bool,
    pub no_hip: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_scb: false,
        no_fcb: false,
        no_pip: false,
        no_hip: false,
    };

    /// `full`, `no_scb`, `no_fcb`, `no_pip`, `no_hip`.
    pub fn standard() -> [(&'static str, Ablation); 5] {
        let f = Ablation::FULL;
        [
            ("full", f),
            ("no_scb", Ablation { no_scb: true, ..f }),
            ("no_fcb", Ablation { no_fcb: true, ..f }),
            ("no_pip", Ablation { no_pip: true, ..f }),
            ("no_hip", Ablation { no_hip: true, ..f }),
        ]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreActivation {
    #[default]
    Softmax,
    Sigmoid,
}

/// Model and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Embedding width; rows of both towers are `2d` wide.
    pub d: usize,
    /// Hidden width of the sequence mixer (default `L`).
    pub d_t: Option<usize>,
    /// Hidden width of the feature mixer heads (default `2d`).
    pub d_c: Option<usize>,
    /// Hidden width of the auxiliary position mixers (default `L'`).
    pub d_t_aux: Option<usize>,
    pub heads: usize,
    pub blocks: usize,
    /// Heterogeneous window `L`.
    pub len: usize,
    /// Auxiliary window `L'`.
    pub aux_len: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub variant: Variant,
    pub ablation: Ablation,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub score_activation: ScoreActivation,
    /// Residual around each auxiliary position mixer.
    pub pip_scb_residual: bool,
    /// Average only over auxiliary behaviors with at least one event.
    pub pip_exclude_padded: bool,
    /// Train on every next event instead of purchases only.
    pub all_targets: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            d: 64,
            d_t: None,
            d_c: None,
            d_t_aux: None,
            heads: 2,
            blocks: 1,
            len: 50,
            aux_len: 5,
            lr: 0.01,
            batch_size: 512,
            dropout_rate: 0.2,
            weight_decay: 1e-4,
            variant: Variant::BT,
            ablation: Ablation::FULL,
            epochs: 200,
            patience: 10,
            seed: 0,
            score_activation: ScoreActivation::Softmax,
            pip_scb_residual: false,
            pip_exclude_padded: false,
            all_targets: false,
        }
    }
}

impl HyperParams {
    pub fn scb_hidden(&self) -> usize {
        self.d_t.unwrap_or(self.len)
    }

    pub fn fcb_hidden(&self) -> usize {
        self.d_c.unwrap_or(2 * self.d)
    }

    pub fn pip_hidden(&self) -> usize {
        self.d_t_aux.unwrap_or(self.aux_len)
    }

    pub fn pip_options(&self) -> PipOptions {
        PipOptions {
            scb_residual: self.pip_scb_residual,
            exclude_padded: self.pip_exclude_padded,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: alloc::string::String| Err(Error::Config(m));
        if self.d == 0 {
            return fail("d must be positive".into());
        }
        if self.heads == 0 || !(2 * self.d).is_multiple_of(self.heads) {
            return fail(format!("heads {} must divide 2d = {}", self.heads, 2 * self.d));
        }
        if self.blocks == 0 {
            return fail("at least one block is required".into());
        }
        if self.aux_len == 0 || self.len < self.aux_len {
            return fail(format!("need L >= L' >= 1, got L = {}, L' = {}", self.len, self.aux_len));
        }
        if self.scb_hidden() == 0 || self.fcb_hidden() == 0 || self.pip_hidden() == 0 {
            return fail("hidden widths must be positive".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("lr and weight_decay must be finite and non-negative".into());
        }
        if self.ablation.no_hip && self.ablation.no_pip {
            return fail("no_hip and no_pip together leave no tower".into());
        }
        Ok(())
    }
}
