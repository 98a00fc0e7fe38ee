//! Contrastive pretraining: two augmented views per window, a projection
//! to the embedding space, NT-Xent minimization with LARS and the
//! warmup/cosine schedule, early stopping on a validation subset, and
//! finally freezing the backbone.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{apply_pipeline, AugmentError, AugmentationPipeline};
use crate::dsp::{Window, WINDOW_SAMPLES};
use crate::nncore::{
    self, build_backbone, build_projection, lr_at, BackboneConfig, EarlyStop, EarlyStopper, Lars,
    NnError, ParameterSet, ScheduleConfig, Session, Tensor,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum SslError {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("train and validation sets share patient `{0}`")]
    PatientOverlap(String),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pretraining hyperparameters. `batch_pairs` source windows produce
/// `2 * batch_pairs` augmented rows per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub batch_pairs: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub temperature: f64,
    pub schedule: ScheduleConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            batch_pairs: 256,
            max_epochs: 50,
            patience: 5,
            temperature: 0.1,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.batch_pairs < 2 {
            return Err(NnError::InvalidConfig(
                "batch_pairs must be at least 2 (NT-Xent needs a negative)".into(),
            ));
        }
        if self.temperature <= 0.0 {
            return Err(NnError::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        if self.max_epochs == 0 {
            return Err(NnError::InvalidConfig("max_epochs must be positive".into()));
        }
        if self.schedule.total_epochs < self.max_epochs {
            return Err(NnError::InvalidConfig(format!(
                "schedule horizon {} shorter than max_epochs {}",
                self.schedule.total_epochs, self.max_epochs
            )));
        }
        self.schedule.validate()
    }
}

/// A batch of augmented views arranged so rows i and N+i come from source
/// window i.
#[derive(Debug, Clone)]
pub struct ContrastiveBatch {
    pub views: Tensor,
    pub source_ids: Vec<String>,
}

impl ContrastiveBatch {
    pub fn pair_count(&self) -> usize {
        self.views.shape()[0] / 2
    }
}

fn window_source_id(w: &Window) -> String {
    format!("{}:{}:{}", w.patient_id, w.recording_index, w.offset_s)
}

/// Build the two views of every window. Row i of the result is
/// `p1(window_i)`, row N+i is `p2(window_i)`; each window gets its own
/// derived generator so the batch is deterministic per seed.
pub fn make_views(
    windows: &[&Window],
    p1: &AugmentationPipeline,
    p2: &AugmentationPipeline,
    views_seed: u64,
) -> Result<ContrastiveBatch, SslError> {
    if windows.is_empty() {
        return Err(SslError::EmptyDataset("make_views on no windows".into()));
    }
    let n = windows.len();
    let mut data = vec![0.0; 2 * n * WINDOW_SAMPLES];
    for (i, w) in windows.iter().enumerate() {
        let mut rng1 = seed::rng(seed::derive_index(views_seed, "view1", i as u64));
        let mut rng2 = seed::rng(seed::derive_index(views_seed, "view2", i as u64));
        let v1 = apply_pipeline(w, p1, &mut rng1)?;
        let v2 = apply_pipeline(w, p2, &mut rng2)?;
        data[i * WINDOW_SAMPLES..(i + 1) * WINDOW_SAMPLES].copy_from_slice(&v1.samples);
        data[(n + i) * WINDOW_SAMPLES..(n + i + 1) * WINDOW_SAMPLES].copy_from_slice(&v2.samples);
    }
    let views = Tensor::new(vec![2 * n, 1, WINDOW_SAMPLES], data)?;
    Ok(ContrastiveBatch {
        views,
        source_ids: windows.iter().map(|w| window_source_id(w)).collect(),
    })
}

/// Normalized temperature-scaled cross-entropy over [2N, d] embeddings
/// (rows i and N+i are positives). Embeddings are L2-normalized inside.
pub fn nt_xent_loss(z: &Tensor, temperature: f64) -> Result<f64, NnError> {
    nncore::nt_xent_value(z, temperature)
}

/// One epoch's bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

pub type History = Vec<EpochStats>;

/// Write the per-epoch history CSV (`epoch,train_loss,val_loss,lr`).
pub fn write_history_csv(path: &Path, history: &History) -> std::io::Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for e in history {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9}\n",
            e.epoch, e.train_loss, e.val_loss, e.lr
        ));
    }
    fs::write(path, out)
}

/// Forward both views through backbone + projection and return the NT-Xent
/// loss, with parameter gradients when requested.
fn contrastive_loss_and_grads(
    batch: &ContrastiveBatch,
    params: &ParameterSet,
    backbone: &BackboneConfig,
    temperature: f64,
    want_grads: bool,
) -> Result<(f64, Option<nncore::GradStore>), SslError> {
    let mut sess = Session::new(params);
    let x = sess.input(batch.views.clone());
    let features = build_backbone(&mut sess, x, backbone)?;
    let z = build_projection(&mut sess, features)?;
    let loss = sess.nt_xent(z, temperature)?;
    let value = sess.value(loss).item();
    let grads = if want_grads {
        Some(sess.backward(loss)?)
    } else {
        None
    };
    Ok((value, grads))
}

/// Mean validation NT-Xent loss with the same fixed view seed every epoch,
/// so the monitored quantity is comparable across epochs.
fn validation_loss(
    val: &[&Window],
    p1: &AugmentationPipeline,
    p2: &AugmentationPipeline,
    params: &ParameterSet,
    backbone: &BackboneConfig,
    cfg: &SslConfig,
    val_seed: u64,
) -> Result<f64, SslError> {
    let chunks: Vec<&[&Window]> = if val.len() >= cfg.batch_pairs {
        val.chunks(cfg.batch_pairs)
            .filter(|c| c.len() == cfg.batch_pairs)
            .collect()
    } else {
        vec![val]
    };
    let mut total = 0.0;
    for (i, chunk) in chunks.iter().enumerate() {
        let batch = make_views(chunk, p1, p2, seed::derive_index(val_seed, "batch", i as u64))?;
        let (loss, _) =
            contrastive_loss_and_grads(&batch, params, backbone, cfg.temperature, false)?;
        total += loss;
    }
    Ok(total / chunks.len() as f64)
}

/// Contrastive pretraining.
///
/// LARS steps follow the warmup/cosine schedule; after every epoch the
/// validation loss decides early stopping (patience in epochs), and the
/// parameters of the best validation epoch are returned. The incomplete
/// final batch of each epoch is dropped so every NT-Xent batch has the
/// configured size.
#[allow(clippy::too_many_arguments)]
pub fn pretrain(
    train: &[Window],
    val: &[Window],
    p1: &AugmentationPipeline,
    p2: &AugmentationPipeline,
    cfg: &SslConfig,
    backbone: &BackboneConfig,
    mut params: ParameterSet,
    master_seed: u64,
) -> Result<(ParameterSet, History), SslError> {
    cfg.validate()?;
    backbone.validate()?;
    p1.validate()?;
    p2.validate()?;
    if train.len() < cfg.batch_pairs {
        return Err(SslError::EmptyDataset(format!(
            "{} training windows cannot fill one batch of {}",
            train.len(),
            cfg.batch_pairs
        )));
    }
    if val.is_empty() {
        return Err(SslError::EmptyDataset("no validation windows".into()));
    }
    let train_patients: BTreeSet<&str> = train.iter().map(|w| w.patient_id.as_str()).collect();
    if let Some(w) = val
        .iter()
        .find(|w| train_patients.contains(w.patient_id.as_str()))
    {
        return Err(SslError::PatientOverlap(w.patient_id.clone()));
    }

    let batches_per_epoch = train.len() / cfg.batch_pairs;
    let schedule = ScheduleConfig {
        steps_per_epoch: batches_per_epoch,
        ..cfg.schedule.clone()
    };
    schedule.validate()?;

    let mut lars = Lars::default();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = History::new();
    let mut best_params = params.clone();
    let val_seed = seed::derive(master_seed, "ssl.val");
    let val_refs: Vec<&Window> = val.iter().collect();
    let mut step = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::derive_index(
            master_seed,
            "ssl.epoch",
            epoch as u64,
        )));

        let mut epoch_loss = 0.0;
        let mut last_lr = 0.0;
        for b in 0..batches_per_epoch {
            let chunk: Vec<&Window> = order[b * cfg.batch_pairs..(b + 1) * cfg.batch_pairs]
                .iter()
                .map(|&i| &train[i])
                .collect();
            let views_seed = seed::derive_index(
                seed::derive_index(master_seed, "ssl.views.epoch", epoch as u64),
                "batch",
                b as u64,
            );
            let batch = make_views(&chunk, p1, p2, views_seed)?;
            let (loss, grads) =
                contrastive_loss_and_grads(&batch, &params, backbone, cfg.temperature, true)?;
            let lr = lr_at(step, &schedule)?;
            params.load_grads(&grads.expect("grads requested"))?;
            lars.step(&mut params, lr);
            epoch_loss += loss;
            last_lr = lr;
            step += 1;
        }
        let train_loss = epoch_loss / batches_per_epoch as f64;
        let val_loss = validation_loss(&val_refs, p1, p2, &params, backbone, cfg, val_seed)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr: last_lr,
        });
        eprintln!(
            "[ssl] epoch {:>3}/{} train {:.5} val {:.5} lr {:.5}",
            epoch + 1,
            cfg.max_epochs,
            train_loss,
            val_loss,
            last_lr
        );
        match stopper.push(val_loss) {
            EarlyStop::Improved => best_params = params.clone(),
            EarlyStop::NoImprovement => {}
            EarlyStop::Stop => break,
        }
    }
    Ok((best_params, history))
}

/// Freeze the convolutional backbone and discard the projection head.
pub fn freeze_backbone(mut params: ParameterSet) -> ParameterSet {
    params.freeze_prefix("backbone.");
    params.remove_prefix("projection.");
    params
}
