//! Contrastive training of the dual encoder.

mod data;
mod loss;

pub use data::{
    crop_pair, cropclr_batch, epoch_batches, supervision_text, text_batch, Batch, SupervisionMode,
    Targets, TrainExample,
};
pub use loss::{combined_loss, combined_loss_grad, info_nce_vm};

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use log::info;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    DualEncoder, ModelConfig, PatchCache, PixelNorm, TextCache, TokenSeq, Tokenizer,
};
use crate::error::{Error, Result};
use crate::exif::{TagRegistry, TextFormat};
use crate::nn::{cosine_lr, AdamW, AdamWConfig};
use crate::synth::child_seed;

/// Examples per gradient-accumulation chunk. Chunks are summed in a fixed
/// order, so results do not depend on the number of worker threads.
const GRAD_CHUNK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
    pub supervision: SupervisionMode,
    pub text_format: TextFormat,
    pub seed: u64,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    /// Fixed batches scored at the end of every epoch.
    pub eval_batches: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tau: 0.07,
            batch_size: 64,
            epochs: 30,
            lr: 1e-3,
            weight_decay: 1e-3,
            schedule: Schedule::Cosine,
            supervision: SupervisionMode::FullExif,
            text_format: TextFormat::default(),
            seed: 0,
            max_steps: None,
            eval_batches: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::invalid("tau must be positive"));
        }
        if self.batch_size < 2 {
            return Err(Error::invalid("batch size must be at least 2"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "learning rate and weight decay must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Loss on the fixed evaluation batches after the epoch.
    pub eval_loss: f64,
    /// Top-1 patch→target retrieval on the evaluation batches.
    pub retrieval: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// Newline-delimited JSON, one record per line.
    pub fn write_ndjson(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for s in &self.steps {
            serde_json::to_writer(
                &mut out,
                &serde_json::json!({"kind": "step", "step": s.step, "epoch": s.epoch, "loss": s.loss, "lr": s.lr}),
            )?;
            out.push(b'\n');
        }
        for e in &self.epochs {
            serde_json::to_writer(
                &mut out,
                &serde_json::json!({"kind": "epoch", "epoch": e.epoch, "mean_loss": e.mean_loss, "eval_loss": e.eval_loss, "retrieval": e.retrieval}),
            )?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

/// Fits the tokenizer and pixel statistics on the training examples and
/// initializes a fresh model.
pub fn init_model(
    examples: &[TrainExample],
    registry: &TagRegistry,
    mut model: ModelConfig,
    train: &TrainConfig,
) -> Result<DualEncoder> {
    if examples.is_empty() {
        return Err(Error::data("no training examples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(train.seed, 10, 0));
    let mut texts = Vec::new();
    for ex in examples {
        if train.supervision == SupervisionMode::CropClr {
            break;
        }
        let fixed = TextFormat {
            order: crate::exif::TagOrder::Fixed,
            ..train.text_format
        };
        if let Some(t) = supervision_text(
            &ex.record,
            ex.caption.as_deref(),
            &train.supervision,
            fixed,
            None,
        )? {
            texts.push(t.text);
        }
    }
    let tokenizer = Tokenizer::fit(
        texts.iter().map(String::as_str),
        registry.names(),
        model.text.max_len,
        crate::encoders::DEFAULT_MAX_VOCAB,
    )?;
    let pixel_norm = PixelNorm::fit(examples.iter().map(|e| &e.image))?;
    model.tau = train.tau;
    DualEncoder::new(model, tokenizer, pixel_norm, &mut rng)
}

/// Forward results of one batch.
struct Forward {
    patch: Vec<PatchCache<f32>>,
    second: Second,
    sim: Array2<f64>,
}

enum Second {
    Text {
        caches: Vec<TextCache<f32>>,
        /// Index into `caches` of every column.
        column: Vec<usize>,
    },
    Crops(Vec<PatchCache<f32>>),
}

fn embeddings<'a, I: Iterator<Item = &'a Array1<f32>>>(rows: I, n: usize, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((n, d));
    for (i, r) in rows.enumerate() {
        out.row_mut(i).assign(&r.mapv(|v| v as f64));
    }
    out
}

fn forward(model: &DualEncoder, batch: &Batch) -> Result<Forward> {
    let d = model.embed_dim();
    let n = batch.len();
    let encode = |imgs: &[image::RgbImage]| -> Result<Vec<PatchCache<f32>>> {
        imgs.par_iter()
            .map(|p| {
                model
                    .patch
                    .forward(&model.patch_params, model.pixel_norm.tensor(p).view())
            })
            .collect()
    };
    let patch = encode(&batch.patches)?;
    let pe = embeddings(patch.iter().map(|c| c.embedding()), n, d);
    let (second, te) = match &batch.targets {
        Targets::Text(seqs) => {
            let mut unique: Vec<&TokenSeq> = Vec::new();
            let mut index: HashMap<&TokenSeq, usize> = HashMap::new();
            let column: Vec<usize> = seqs
                .iter()
                .map(|s| {
                    *index.entry(s).or_insert_with(|| {
                        unique.push(s);
                        unique.len() - 1
                    })
                })
                .collect();
            let caches: Vec<TextCache<f32>> = unique
                .par_iter()
                .map(|s| model.text.forward(&model.text_params, s.ids()))
                .collect::<Result<_>>()?;
            let te = embeddings(column.iter().map(|&u| caches[u].embedding()), n, d);
            (Second::Text { caches, column }, te)
        }
        Targets::Crops(crops) => {
            let caches = encode(crops)?;
            let te = embeddings(caches.iter().map(|c| c.embedding()), n, d);
            (Second::Crops(caches), te)
        }
    };
    let sim = pe.dot(&te.t());
    if sim.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("batch similarities"));
    }
    Ok(Forward { patch, second, sim })
}

fn embedding_matrix(caches: &[&Array1<f32>]) -> Array2<f32> {
    let d = caches.first().map_or(0, |c| c.len());
    let mut out = Array2::zeros((caches.len(), d));
    for (i, c) in caches.iter().enumerate() {
        out.row_mut(i).assign(c);
    }
    out
}

/// Accumulates patch-encoder gradients for `caches` with upstream rows
/// `d_emb`, chunk by chunk.
fn patch_grads(
    model: &DualEncoder,
    caches: &[PatchCache<f32>],
    d_emb: &Array2<f32>,
    grad: &mut [f32],
) {
    let parts: Vec<Vec<f32>> = caches
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = vec![0.0f32; grad.len()];
            for (k, c) in chunk.iter().enumerate() {
                model.patch.backward(
                    &model.patch_params,
                    c,
                    d_emb.row(ci * GRAD_CHUNK + k),
                    &mut g,
                );
            }
            g
        })
        .collect();
    for p in parts {
        for (a, b) in grad.iter_mut().zip(p) {
            *a += b;
        }
    }
}

fn text_grads(
    model: &DualEncoder,
    caches: &[TextCache<f32>],
    d_emb: &Array2<f32>,
    grad: &mut [f32],
) {
    let parts: Vec<Vec<f32>> = caches
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut g = vec![0.0f32; grad.len()];
            for (k, c) in chunk.iter().enumerate() {
                model.text.backward(
                    &model.text_params,
                    c,
                    d_emb.row(ci * GRAD_CHUNK + k),
                    &mut g,
                );
            }
            g
        })
        .collect();
    for p in parts {
        for (a, b) in grad.iter_mut().zip(p) {
            *a += b;
        }
    }
}

/// Loss and gradient over the concatenated `[patch | text]` parameters.
pub fn batch_loss_grad(
    model: &DualEncoder,
    batch: &Batch,
    tau: f64,
) -> Result<(f64, Vec<f32>, Array2<f64>)> {
    let fw = forward(model, batch)?;
    let (loss, dsim) = combined_loss_grad(fw.sim.view(), tau)?;
    let dsim = dsim.mapv(|v| v as f32);
    let np = model.patch_params.len();
    let mut grad_p = vec![0.0f32; np];
    let mut grad_t = vec![0.0f32; model.text_params.len()];
    match &fw.second {
        Second::Text { caches, column } => {
            let te = embedding_matrix(
                &column
                    .iter()
                    .map(|&u| caches[u].embedding())
                    .collect::<Vec<_>>(),
            );
            let pe = embedding_matrix(&fw.patch.iter().map(|c| c.embedding()).collect::<Vec<_>>());
            patch_grads(model, &fw.patch, &dsim.dot(&te), &mut grad_p);
            // Columns sharing a text fold onto one backward pass.
            let d_cols = dsim.t().dot(&pe);
            let mut d_unique = Array2::<f32>::zeros((caches.len(), pe.ncols()));
            for (j, &u) in column.iter().enumerate() {
                let mut row = d_unique.row_mut(u);
                row += &d_cols.row(j);
            }
            text_grads(model, caches, &d_unique, &mut grad_t);
        }
        Second::Crops(second) => {
            let a = embedding_matrix(&fw.patch.iter().map(|c| c.embedding()).collect::<Vec<_>>());
            let b = embedding_matrix(&second.iter().map(|c| c.embedding()).collect::<Vec<_>>());
            patch_grads(model, &fw.patch, &dsim.dot(&b), &mut grad_p);
            patch_grads(model, second, &dsim.t().dot(&a), &mut grad_p);
        }
    }
    grad_p.extend(grad_t);
    if grad_p.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients"));
    }
    Ok((loss, grad_p, fw.sim))
}

/// Loss and number of top-1 retrieval hits of a batch, without gradients.
pub fn evaluate_batch(model: &DualEncoder, batch: &Batch, tau: f64) -> Result<(f64, usize)> {
    let sim = forward(model, batch)?.sim;
    let loss = combined_loss(sim.view(), tau)?;
    Ok((loss, retrieval_hits(&sim, batch)))
}

/// Rows whose best-scoring column is an acceptable match (first index wins
/// ties).
pub fn retrieval_hits(sim: &Array2<f64>, batch: &Batch) -> usize {
    (0..sim.nrows())
        .filter(|&i| {
            let row = sim.row(i);
            let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
            batch.matches(i, best)
        })
        .count()
}

/// Indices of examples that carry supervision under `mode`.
fn usable(examples: &[TrainExample], cfg: &TrainConfig, side: u32) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let (w, h) = ex.image.dimensions();
        if w < side || h < side {
            continue;
        }
        let ok = match &cfg.supervision {
            SupervisionMode::CropClr => w > side || h > side,
            mode => supervision_text(
                &ex.record,
                ex.caption.as_deref(),
                mode,
                TextFormat::default(),
                None,
            )?
            .is_some(),
        };
        if ok {
            out.push(i);
        }
    }
    Ok(out)
}

fn make_batch<R: Rng>(
    model: &DualEncoder,
    examples: &[&TrainExample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Batch> {
    let side = model.patch_side();
    match cfg.supervision {
        SupervisionMode::CropClr => {
            let pool: Vec<(&str, &image::RgbImage)> =
                examples.iter().map(|e| (e.id.as_str(), &e.image)).collect();
            cropclr_batch(&pool, side, rng)
        }
        ref mode => text_batch(examples, &model.tokenizer, mode, cfg.text_format, side, rng),
    }
}

/// Model plus optimizer state; the unit that is checkpointed and resumed.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: DualEncoder,
    pub optimizer: AdamW,
    pub step: u64,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: DualEncoder, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let n = model.patch_params.len() + model.text_params.len();
        let optimizer = AdamW::new(
            AdamWConfig {
                weight_decay: config.weight_decay,
                ..Default::default()
            },
            n,
        );
        Ok(Trainer {
            model,
            optimizer,
            step: 0,
            config,
        })
    }

    /// Continues from saved optimizer state and step count.
    pub fn resume(
        model: DualEncoder,
        optimizer: AdamW,
        step: u64,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if optimizer.m.len() != model.patch_params.len() + model.text_params.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match model size".into(),
            ));
        }
        Ok(Trainer {
            model,
            optimizer,
            step,
            config,
        })
    }

    fn apply(&mut self, grad: &[f32], lr: f64) {
        let np = self.model.patch_params.len();
        let mut params: Vec<f32> = Vec::with_capacity(grad.len());
        params.extend_from_slice(&self.model.patch_params);
        params.extend_from_slice(&self.model.text_params);
        self.optimizer.step(&mut params, grad, lr);
        self.model.text_params = params.split_off(np);
        self.model.patch_params = params;
    }

    /// Runs the configured schedule from the current step to the end.
    ///
    /// Epoch `e` always draws its order and crops from the same seed, so a
    /// resumed run follows the uninterrupted one exactly.
    pub fn train(&mut self, train: &[TrainExample], eval: &[TrainExample]) -> Result<TrainLog> {
        let cfg = self.config.clone();
        let side = self.model.patch_side();
        let idx = usable(train, &cfg, side)?;
        if idx.len() < 2 {
            return Err(Error::data(format!(
                "need at least 2 usable training images, found {}",
                idx.len()
            )));
        }
        let eval_pool: Vec<&TrainExample> = if eval.is_empty() {
            idx.iter().map(|&i| &train[i]).collect()
        } else {
            let e = usable(eval, &cfg, side)?;
            e.iter().map(|&i| &eval[i]).collect()
        };
        let eval_set = self.eval_batches(&eval_pool)?;
        let per_epoch = epoch_batches(idx.len(), cfg.batch_size, &mut ChaCha8Rng::seed_from_u64(0))
            .len() as u64;
        let total = per_epoch * cfg.epochs as u64;
        let stop = cfg.max_steps.map_or(total, |m| m.min(total));
        let mut log = TrainLog::default();
        let mut epoch = (self.step / per_epoch.max(1)) as usize;
        while self.step < stop && epoch < cfg.epochs {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 20, epoch as u64));
            let batches = epoch_batches(idx.len(), cfg.batch_size, &mut rng);
            let skip = (self.step - epoch as u64 * per_epoch) as usize;
            let mut losses = Vec::new();
            for (b, members) in batches.iter().enumerate() {
                let exs: Vec<&TrainExample> = members.iter().map(|&m| &train[idx[m]]).collect();
                // Always draw the batch so skipped batches consume the same
                // random numbers as in an uninterrupted run.
                let batch = make_batch(&self.model, &exs, &cfg, &mut rng)?;
                if b < skip {
                    continue;
                }
                if self.step >= stop {
                    break;
                }
                let lr = match cfg.schedule {
                    Schedule::Cosine => cosine_lr(cfg.lr, self.step, total),
                    Schedule::Constant => cfg.lr,
                };
                let (loss, grad, _) = batch_loss_grad(&self.model, &batch, cfg.tau)?;
                self.apply(&grad, lr);
                self.step += 1;
                log.steps.push(StepRecord {
                    step: self.step,
                    epoch,
                    loss,
                    lr,
                });
                losses.push(loss);
            }
            let (eval_loss, retrieval) = self.evaluate(&eval_set)?;
            let mean_loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
            info!(
                "epoch {epoch}: loss {mean_loss:.4}, eval {eval_loss:.4}, retrieval {retrieval:.3}"
            );
            log.epochs.push(EpochRecord {
                epoch,
                mean_loss,
                eval_loss,
                retrieval,
            });
            epoch += 1;
        }
        Ok(log)
    }

    /// The fixed evaluation batches, drawn once from their own seed.
    pub fn eval_batches(&self, pool: &[&TrainExample]) -> Result<Vec<Batch>> {
        if pool.len() < 2 {
            return Err(Error::data("need at least 2 evaluation images"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(child_seed(self.config.seed, 30, 0));
        let mut out = Vec::new();
        for members in epoch_batches(pool.len(), self.config.batch_size, &mut rng)
            .into_iter()
            .take(self.config.eval_batches.max(1))
        {
            let exs: Vec<&TrainExample> = members.iter().map(|&m| pool[m]).collect();
            out.push(make_batch(&self.model, &exs, &self.config, &mut rng)?);
        }
        Ok(out)
    }

    /// Mean loss and pooled top-1 retrieval over `batches`.
    pub fn evaluate(&self, batches: &[Batch]) -> Result<(f64, f64)> {
        let mut loss = 0.0;
        let mut hits = 0;
        let mut n = 0;
        for b in batches {
            let (l, h) = evaluate_batch(&self.model, b, self.config.tau)?;
            loss += l;
            hits += h;
            n += b.len();
        }
        Ok((
            loss / batches.len().max(1) as f64,
            hits as f64 / n.max(1) as f64,
        ))
    }
}
