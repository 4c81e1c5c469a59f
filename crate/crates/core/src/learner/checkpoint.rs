//! Binary parameter files.
//!
//! ```text
//! magic    8 bytes  "PXDIFFCK"
//! version  u32 LE
//! hlen     u32 LE   length of the JSON header
//! header   hlen bytes of UTF-8 JSON
//! params   f64 LE x param_count
//! adam     (only when the header carries optimizer state)
//!          f64 LE x param_count first moments, then second moments
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::CorpusConfig;
use super::estimator::{EstimatorConfig, ScaleEstimator};
use super::params::{Adam, Block};
use super::predictor::{PredictorConfig, ReversePredictor};
use super::train::{LossCurve, TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::image::Shape;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PXDIFFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum ModelKind {
    ScaleEstimator(EstimatorConfig),
    ReversePredictor(PredictorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelKind,
    pub shape: Shape,
    pub param_count: usize,
    pub blocks: Vec<Block>,
    pub train: Option<TrainConfig>,
    pub corpus: Option<CorpusConfig>,
    /// Optimizer hyper-parameters and step count; moments follow the
    /// parameters in the body.
    pub adam: Option<Adam>,
    pub iteration: usize,
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn take_f64s(bytes: &[u8], pos: &mut usize, n: usize) -> Result<Vec<f64>> {
    let end = *pos + n * 8;
    let chunk = bytes
        .get(*pos..end)
        .ok_or_else(|| Error::format("checkpoint", "truncated body"))?;
    *pos = end;
    Ok(chunk
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn take_u32(bytes: &[u8], pos: &mut usize) -> Result<u32> {
    let chunk = bytes
        .get(*pos..*pos + 4)
        .ok_or_else(|| Error::format("checkpoint", "truncated preamble"))?;
    *pos += 4;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4-byte chunk")))
}

impl Checkpoint {
    fn new(model: ModelKind, shape: Shape, params: &super::params::ParamStore) -> Self {
        Self {
            header: CheckpointHeader {
                model,
                shape,
                param_count: params.len(),
                blocks: params.blocks().to_vec(),
                train: None,
                corpus: None,
                adam: None,
                iteration: 0,
                losses: Vec::new(),
            },
            params: params.values().to_vec(),
        }
    }

    /// Attaches optimizer state so training can resume from this file.
    pub fn with_training(mut self, state: &TrainState, train: &TrainConfig, corpus: CorpusConfig) -> Self {
        self.header.adam = Some(state.adam.clone());
        self.header.iteration = state.iteration;
        self.header.losses = state.curve.losses.clone();
        self.header.train = Some(train.clone());
        self.header.corpus = Some(corpus);
        self
    }

    pub fn train_state(&self) -> Option<TrainState> {
        self.header.adam.as_ref().map(|a| TrainState {
            iteration: self.header.iteration,
            adam: a.clone(),
            curve: LossCurve {
                losses: self.header.losses.clone(),
            },
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(16 + header.len() + self.params.len() * 24);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        put_f64s(&mut out, &self.params);
        if let Some(adam) = &self.header.adam {
            put_f64s(&mut out, &adam.m);
            put_f64s(&mut out, &adam.v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.get(..8) != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let mut pos = 8;
        let version = take_u32(bytes, &mut pos)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let hlen = take_u32(bytes, &mut pos)? as usize;
        let raw = bytes
            .get(pos..pos + hlen)
            .ok_or_else(|| Error::format("checkpoint", "truncated header"))?;
        pos += hlen;
        let mut header: CheckpointHeader = serde_json::from_slice(raw)?;
        let n = header.param_count;
        let params = take_f64s(bytes, &mut pos, n)?;
        if let Some(adam) = header.adam.as_mut() {
            adam.m = take_f64s(bytes, &mut pos, n)?;
            adam.v = take_f64s(bytes, &mut pos, n)?;
        }
        if pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn check_layout(&self, blocks: &[Block]) -> Result<()> {
        if self.header.blocks != blocks {
            return Err(Error::format("checkpoint", "parameter layout does not match the model"));
        }
        Ok(())
    }
}

impl ScaleEstimator {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(ModelKind::ScaleEstimator(self.config().clone()), self.shape(), self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ModelKind::ScaleEstimator(cfg) = &ck.header.model else {
            return Err(Error::format("checkpoint", "not a scale estimator"));
        };
        let mut est = ScaleEstimator::new(ck.header.shape, cfg.clone(), 0)?;
        ck.check_layout(est.params().blocks())?;
        est.params_mut().set_values(ck.params.clone())?;
        Ok(est)
    }
}

impl ReversePredictor {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(ModelKind::ReversePredictor(self.config().clone()), self.shape(), self.params())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let ModelKind::ReversePredictor(cfg) = &ck.header.model else {
            return Err(Error::format("checkpoint", "not a reverse predictor"));
        };
        let mut pred = ReversePredictor::new(ck.header.shape, cfg.clone(), 0)?;
        ck.check_layout(pred.params().blocks())?;
        pred.params_mut().set_values(ck.params.clone())?;
        Ok(pred)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_optimizer_state() {
        let est = ScaleEstimator::new(Shape::gray(8, 8), EstimatorConfig::default(), 4).unwrap();
        let mut state = TrainState::new(1e-3, est.params().len());
        state.adam.m[3] = 0.25;
        state.adam.v[7] = -0.0;
        state.iteration = 12;
        state.curve.losses = vec![0.1 + 0.2, 1.0 / 3.0, 2.2250738585072014e-308];
        let ck = est.to_checkpoint().with_training(&state, &TrainConfig::default(), CorpusConfig::default());
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), CHECKPOINT_VERSION);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.train_state().unwrap(), state);
        let est2 = ScaleEstimator::from_checkpoint(&back).unwrap();
        assert_eq!(est2.params(), est.params());
        assert!(ReversePredictor::from_checkpoint(&back).is_err());
    }

    #[test]
    fn rejects_corruption() {
        let est = ScaleEstimator::new(Shape::gray(4, 4), EstimatorConfig::default(), 4).unwrap();
        let bytes = est.to_checkpoint().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'Q';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        let mut version = bytes;
        version[8] = 9;
        assert!(Checkpoint::from_bytes(&version).is_err());
    }
}
