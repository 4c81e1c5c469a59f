use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{normalize_image, Image, DEFAULT_EPSILON};
use crate::rng::RngStream;
use crate::synthetic::blob_gradient_raw;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    /// Number of images held out for validation (taken from the end).
    pub validation: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 512,
            size: 8,
            seed: 2024,
            validation: 64,
        }
    }
}

/// Deterministic single-channel blob/gradient images.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    config: CorpusConfig,
    images: Vec<Image>,
}

impl SyntheticCorpus {
    pub fn generate(config: CorpusConfig) -> Result<Self> {
        if config.count == 0 || config.validation >= config.count {
            return Err(Error::InvalidConfig(format!(
                "corpus needs count > validation, got {} and {}",
                config.count, config.validation
            )));
        }
        let mut rng = RngStream::new(config.seed, 0xC0_4F05);
        let images = (0..config.count)
            .map(|_| normalize_image(&blob_gradient_raw(config.size, &mut rng), DEFAULT_EPSILON))
            .collect::<Result<_>>()?;
        Ok(Self { config, images })
    }

    pub fn config(&self) -> CorpusConfig {
        self.config
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn train(&self) -> &[Image] {
        &self.images[..self.config.count - self.config.validation]
    }

    pub fn validation(&self) -> &[Image] {
        &self.images[self.config.count - self.config.validation..]
    }
}
