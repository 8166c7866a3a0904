//! Mini-applications written once against [`MessagePassing`] and run on any
//! stack.
//!
//! [`MessagePassing`]: mpidesk_core::api::MessagePassing

pub mod ring;
pub mod wave;

use std::path::PathBuf;

use mpidesk_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::bench::BenchSnapshot;

/// Take a checkpoint into `dir` once `at` steps (or laps) have completed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointPlan {
    pub at: u64,
    pub dir: PathBuf,
}

/// `hash` is set on rank 0 only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub hash: Option<String>,
    pub checkpointed: bool,
}

pub(crate) fn check_ckpt_at(at: Option<u64>, steps: u64) -> Result<()> {
    match at {
        Some(k) if k == 0 || k >= steps => Err(Error::BackendFailure(format!(
            "checkpoint step {k} must lie strictly between 0 and {steps}"
        ))),
        _ => Ok(()),
    }
}

/// The application blob stored in checkpoint images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "app", rename_all = "lowercase")]
pub enum AppBlob {
    Wave(wave::WaveSnapshot),
    Ring(ring::RingSnapshot),
    Bench(BenchSnapshot),
}

impl AppBlob {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("snapshot types always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AppBlob> {
        serde_json::from_slice(bytes)
            .map_err(|e| Error::BackendFailure(format!("unreadable application state: {e}")))
    }
}
