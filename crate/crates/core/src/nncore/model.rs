//! The 1-D convolutional backbone and the dense heads built on top of it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Window;
use crate::seed;

use super::graph::{NodeId, Session};
use super::tensor::{ParameterSet, Tensor};
use super::NnError;

/// Backbone geometry: `n_blocks` of conv1d → ReLU → max-pool, then global
/// max pooling over time. The last channel count is the feature dimension
/// fed to the projection and classification heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub n_blocks: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub input_len: usize,
    pub embed_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            n_blocks: 5,
            channels: vec![16, 32, 64, 128, 128],
            kernel: 16,
            pool: 4,
            input_len: crate::dsp::WINDOW_SAMPLES,
            embed_dim: 128,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.n_blocks == 0 || self.n_blocks != self.channels.len() {
            return Err(NnError::InvalidConfig(format!(
                "n_blocks {} must match channels {:?}",
                self.n_blocks, self.channels
            )));
        }
        if self.kernel == 0 || self.pool == 0 || self.input_len == 0 || self.embed_dim == 0 {
            return Err(NnError::InvalidConfig(
                "kernel, pool, input_len, embed_dim must be positive".into(),
            ));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(NnError::InvalidConfig("zero channel count".into()));
        }
        if *self.time_lengths().last().unwrap() == 0 {
            return Err(NnError::InvalidConfig(format!(
                "input_len {} collapses to zero after {} pools of {}",
                self.input_len, self.n_blocks, self.pool
            )));
        }
        Ok(())
    }

    /// Time length after each block (floor division by `pool` per block).
    pub fn time_lengths(&self) -> Vec<usize> {
        let mut lengths = Vec::with_capacity(self.n_blocks);
        let mut len = self.input_len;
        for _ in 0..self.n_blocks {
            len /= self.pool;
            lengths.push(len);
        }
        lengths
    }

    /// Feature dimension produced by the backbone.
    pub fn feature_dim(&self) -> usize {
        *self.channels.last().expect("validated non-empty")
    }

    fn weight_path(block: usize) -> String {
        format!("backbone.block{block}.conv.weight")
    }

    fn bias_path(block: usize) -> String {
        format!("backbone.block{block}.conv.bias")
    }
}

/// He-uniform fill: Uniform[-sqrt(6/fan_in), +sqrt(6/fan_in)].
fn he_uniform<R: Rng>(shape: Vec<usize>, fan_in: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(shape, data).expect("shape/data constructed together")
}

/// Fresh backbone parameters (conv weights He-uniform, biases zero).
pub fn init_backbone_params(cfg: &BackboneConfig, init_seed: u64) -> Result<ParameterSet, NnError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(init_seed, "init.backbone"));
    let mut params = ParameterSet::new();
    let mut ch_in = 1;
    for (block, &ch_out) in cfg.channels.iter().enumerate() {
        let fan_in = ch_in * cfg.kernel;
        params.insert(
            BackboneConfig::weight_path(block),
            he_uniform(vec![ch_out, ch_in, cfg.kernel], fan_in, &mut rng),
        );
        params.insert(BackboneConfig::bias_path(block), Tensor::zeros(vec![ch_out]));
        ch_in = ch_out;
    }
    Ok(params)
}

/// Add the contrastive projection layer (feature_dim → embed_dim).
pub fn init_projection_params(
    params: &mut ParameterSet,
    cfg: &BackboneConfig,
    init_seed: u64,
) -> Result<(), NnError> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(init_seed, "init.projection"));
    let fan_in = cfg.feature_dim();
    params.insert(
        "projection.weight",
        he_uniform(vec![cfg.embed_dim, fan_in], fan_in, &mut rng),
    );
    params.insert("projection.bias", Tensor::zeros(vec![cfg.embed_dim]));
    Ok(())
}

/// Add a task head of dense layers under `head.<task>`; `layer_dims` are
/// the output widths of each layer, the input width is `in_dim`.
pub fn init_head_params(
    params: &mut ParameterSet,
    task: &str,
    in_dim: usize,
    layer_dims: &[usize],
    init_seed: u64,
) -> Result<(), NnError> {
    if layer_dims.is_empty() {
        return Err(NnError::InvalidConfig("head needs at least one layer".into()));
    }
    let mut rng = seed::rng(seed::derive(init_seed, &format!("init.head.{task}")));
    let mut fan_in = in_dim;
    for (i, &dim) in layer_dims.iter().enumerate() {
        params.insert(
            format!("head.{task}.fc{i}.weight"),
            he_uniform(vec![dim, fan_in], fan_in, &mut rng),
        );
        params.insert(format!("head.{task}.fc{i}.bias"), Tensor::zeros(vec![dim]));
        fan_in = dim;
    }
    Ok(())
}

/// Record the backbone on a session: n_blocks of conv → ReLU → pool, then
/// global max pooling. Returns the [batch, feature_dim] node.
pub fn build_backbone(
    sess: &mut Session,
    x: NodeId,
    cfg: &BackboneConfig,
) -> Result<NodeId, NnError> {
    let mut h = x;
    for block in 0..cfg.n_blocks {
        let w = sess.param(&BackboneConfig::weight_path(block))?;
        let b = sess.param(&BackboneConfig::bias_path(block))?;
        h = sess.conv1d(h, w, b)?;
        h = sess.relu(h);
        h = sess.max_pool1d(h, cfg.pool)?;
    }
    sess.global_max_pool(h)
}

/// Record the projection layer on a session.
pub fn build_projection(sess: &mut Session, features: NodeId) -> Result<NodeId, NnError> {
    let w = sess.param("projection.weight")?;
    let b = sess.param("projection.bias")?;
    sess.linear(features, w, b)
}

/// Record a task head: dense layers with ReLU between them and raw logits
/// out of the last.
pub fn build_head(
    sess: &mut Session,
    features: NodeId,
    task: &str,
    n_layers: usize,
) -> Result<NodeId, NnError> {
    let mut h = features;
    for i in 0..n_layers {
        let w = sess.param(&format!("head.{task}.fc{i}.weight"))?;
        let b = sess.param(&format!("head.{task}.fc{i}.bias"))?;
        h = sess.linear(h, w, b)?;
        if i + 1 < n_layers {
            h = sess.relu(h);
        }
    }
    Ok(h)
}

/// Forward-only backbone evaluation: [batch, 1, input_len] → [batch,
/// feature_dim].
pub fn backbone_forward(
    x: &Tensor,
    params: &ParameterSet,
    cfg: &BackboneConfig,
) -> Result<Tensor, NnError> {
    if x.shape().len() != 3 || x.shape()[1] != 1 || x.shape()[2] != cfg.input_len {
        return Err(NnError::ShapeMismatch(format!(
            "backbone expects [batch, 1, {}], got {:?}",
            cfg.input_len,
            x.shape()
        )));
    }
    let mut sess = Session::new(params);
    let input = sess.input(x.clone());
    let out = build_backbone(&mut sess, input, cfg)?;
    Ok(sess.value(out).clone())
}

/// Stack windows into a [n, 1, len] tensor.
pub fn windows_to_tensor(windows: &[&Window]) -> Result<Tensor, NnError> {
    let len = crate::dsp::WINDOW_SAMPLES;
    let mut data = Vec::with_capacity(windows.len() * len);
    for w in windows {
        if w.samples.len() != len {
            return Err(NnError::ShapeMismatch(format!(
                "window has {} samples, expected {len}",
                w.samples.len()
            )));
        }
        data.extend_from_slice(&w.samples);
    }
    Tensor::new(vec![windows.len(), 1, len], data)
}

/// Run the frozen backbone over windows in chunks, returning
/// [n, feature_dim] features.
pub fn embed_windows(
    windows: &[Window],
    params: &ParameterSet,
    cfg: &BackboneConfig,
    chunk: usize,
) -> Result<Tensor, NnError> {
    let dim = cfg.feature_dim();
    let mut data = Vec::with_capacity(windows.len() * dim);
    for group in windows.chunks(chunk.max(1)) {
        let refs: Vec<&Window> = group.iter().collect();
        let x = windows_to_tensor(&refs)?;
        let out = backbone_forward(&x, params, cfg)?;
        data.extend_from_slice(out.data());
    }
    Tensor::new(vec![windows.len(), dim], data)
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}
