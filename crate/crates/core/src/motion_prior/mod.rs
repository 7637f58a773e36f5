//! Learned distribution over canonical 25-frame motion windows.
//!
//! Two interchangeable priors share one interface: a closed-form
//! probabilistic PCA (default) and a small dense VAE.

pub mod pca;
pub mod vae;
pub mod window;

use alloc::vec::Vec;

pub use pca::{fit_pca_prior, PcaPrior};
pub use vae::{train_vae, EpochStats, TrainReport, VaeConfig, VaePrior};
pub use window::{
    canonicalize, canonicalize_states, canonicalize_states_vjp, canonicalize_window, MotionWindow, WINDOW_DIM,
    WINDOW_LEN,
};

use crate::error::{Error, Result};
use crate::fingerprint::Fnv64;

/// Period of the cyclic KL-annealing schedule, in epochs.
pub const KL_CYCLE: usize = 20;
/// Epochs spent ramping from 0 to 1 at the start of each cycle.
pub const KL_RAMP: usize = 10;

/// Cyclic KL weight: linear 0→1 over the first 10 epochs of each 20-epoch
/// cycle, then held at 1.
pub fn kl_weight(epoch: usize) -> f64 {
    let e = epoch % KL_CYCLE;
    if e < KL_RAMP {
        e as f64 / KL_RAMP as f64
    } else {
        1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PriorKind {
    Pca,
    Vae,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "lowercase"))]
pub enum PriorModel {
    Pca(PcaPrior),
    Vae(VaePrior),
}

impl PriorModel {
    pub fn kind(&self) -> PriorKind {
        match self {
            PriorModel::Pca(_) => PriorKind::Pca,
            PriorModel::Vae(_) => PriorKind::Vae,
        }
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            PriorModel::Pca(p) => p.latent_dim(),
            PriorModel::Vae(v) => v.latent_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            PriorModel::Pca(p) => {
                p.mean.len() == WINDOW_DIM
                    && p.components.len() == p.variances.len() * WINDOW_DIM
                    && !p.variances.is_empty()
            }
            PriorModel::Vae(v) => v.input_dim == WINDOW_DIM && v.input_mean.len() == WINDOW_DIM,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("prior dimensions do not match a 25x22x9 motion window"))
        }
    }

    /// Mean of the approximate posterior for a window.
    pub fn encode_mu(&self, x: &MotionWindow) -> Vec<f64> {
        match self {
            PriorModel::Pca(p) => p.encode_mu(&x.data),
            PriorModel::Vae(v) => v.encode_mu(&x.data),
        }
    }

    /// `∂L/∂x` for a loss with gradient `g_m` on `encode_mu(x)`.
    pub fn encode_mu_vjp(&self, x: &MotionWindow, g_m: &[f64]) -> Vec<f64> {
        match self {
            PriorModel::Pca(p) => p.encode_mu_vjp(g_m),
            PriorModel::Vae(v) => v.encode_mu_vjp(&x.data, g_m),
        }
    }

    pub fn decode(&self, m: &[f64]) -> MotionWindow {
        let data = match self {
            PriorModel::Pca(p) => p.decode(m),
            PriorModel::Vae(v) => v.decode(m),
        };
        MotionWindow { data }
    }

    /// Motion decoded from the latent origin.
    pub fn mean_motion(&self) -> MotionWindow {
        self.decode(&alloc::vec![0.0; self.latent_dim()])
    }
}

/// Stable fingerprint of a training corpus.
pub fn corpus_fingerprint(corpus: &[MotionWindow]) -> u64 {
    let mut h = Fnv64::default();
    h.u64(corpus.len() as u64);
    for w in corpus {
        h.f64s(&w.data);
    }
    h.finish()
}
