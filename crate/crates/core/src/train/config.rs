use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, FineLayout, Result};

/// Training hyperparameters. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_neg_cont: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub tau_f: f64,
    pub tau_c: f64,
    pub tau_g: f64,
    pub learning_rate: f64,
    pub pixels_per_iter: usize,
    pub iterations: usize,
    pub gfl_start: usize,
    pub gfl_update_every: usize,
    pub n_spatial: usize,
    pub k_neighbors: usize,
    pub hdbscan_eps_coarse: f64,
    pub hdbscan_eps_fine: f64,
    pub seed: u64,
    /// `shared` (fine = coarse ⊕ fine-only block) or `independent`.
    pub fine_layout: FineLayout,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_neg_cont: 0.1,
            lambda1: 10.0,
            lambda2: 0.2,
            lambda3: 0.2,
            lambda4: 0.5,
            tau_f: 0.75,
            tau_c: 0.5,
            tau_g: 0.9,
            learning_rate: 0.01,
            pixels_per_iter: 10_000,
            iterations: 3000,
            gfl_start: 2000,
            gfl_update_every: 250,
            n_spatial: 100_000,
            k_neighbors: 5,
            hdbscan_eps_coarse: 1e-2,
            hdbscan_eps_fine: 1e-3,
            seed: 0,
            fine_layout: FineLayout::Shared,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Margin τ^l of a level.
    pub fn tau(&self, level: crate::Level) -> f64 {
        match level {
            crate::Level::Coarse => self.tau_c,
            crate::Level::Fine => self.tau_f,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0 < self.tau_c && self.tau_c <= self.tau_f && self.tau_f < self.tau_g && self.tau_g <= 1.0) {
            return bad(format!(
                "margins must satisfy 0 < tau_c <= tau_f < tau_g <= 1 (got {}, {}, {})",
                self.tau_c, self.tau_f, self.tau_g
            ));
        }
        // A zero-iteration run is a valid no-op whatever the GFL schedule.
        if self.iterations > 0 && self.gfl_start >= self.iterations {
            return bad(format!("gfl_start ({}) must be below iterations ({})", self.gfl_start, self.iterations));
        }
        if self.gfl_update_every == 0 {
            return bad("gfl_update_every must be positive".into());
        }
        if self.pixels_per_iter == 0 || self.k_neighbors == 0 {
            return bad("pixels_per_iter and k_neighbors must be positive".into());
        }
        let weights = [
            ("lambda_neg_cont", self.lambda_neg_cont),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("hdbscan_eps_coarse", self.hdbscan_eps_coarse),
            ("hdbscan_eps_fine", self.hdbscan_eps_fine),
        ];
        for (name, v) in weights {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and non-negative (got {v})"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive (got {})", self.learning_rate));
        }
        Ok(())
    }
}
