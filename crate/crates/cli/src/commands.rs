//! One function per verb. Each writes only under its run directory and
//! records the effective config in `report.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::Ordering;

use anyhow::{anyhow, bail, Context as _, Result};
use camsig_core::distortion::{bin_k1, distort_image, sample_k1, N_BINS};
use camsig_core::encoders::{Checkpoint, DualEncoder};
use camsig_core::exif::{fit_quantizer, ExifRecord, TagRegistry};
use camsig_core::metrics::{c_iou, detection_map, mean_skipping, p_map, ScoredMap};
use camsig_core::patch::{DenseMap, Mask, SpliceBounds};
use camsig_core::probe::{exif_probe_suite, extract_features, is_holdout, train_linear_probe};
use camsig_core::splice::{analysis_grid, analyze_embeddings, Analysis, AnalyzeConfig};
use camsig_core::synth::{
    child_seed, generate_composites, generate_corpus, generate_pristine, standard_cameras,
};
use camsig_core::train::{init_model, Trainer};
use image::RgbImage;
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cache::EmbeddingCache;
use crate::config::Config;
use crate::manifest::{self, Manifest};
use crate::run::RunDir;
use crate::UsageError;

pub struct Context<'a> {
    pub cfg: &'a Config,
    pub dir: &'a RunDir,
    pub cache: &'a EmbeddingCache,
}

fn data_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(camsig_core::Error::Data(msg.into()))
}

struct Loaded {
    checkpoint: Checkpoint,
    model: DualEncoder,
    hash: String,
}

fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let checkpoint =
        Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let model = checkpoint.to_model()?;
    let hash = checkpoint.weights_hash();
    Ok(Loaded {
        checkpoint,
        model,
        hash,
    })
}

fn save_png(dir: &RunDir, rel: &str, img: impl Into<image::DynamicImage>) -> Result<()> {
    let p = dir.join(rel);
    if let Some(parent) = p.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.into()
        .save_with_format(&p, image::ImageFormat::Png)
        .map_err(camsig_core::Error::from)
        .with_context(|| format!("writing {}", p.display()))
}

fn record_tsv(rec: &ExifRecord) -> String {
    rec.tags()
        .iter()
        .map(|(k, v)| format!("{k}\t{v}\n"))
        .collect()
}

// ---------------------------------------------------------------- corpora

pub fn synth_corpus(ctx: &Context) -> Result<()> {
    let cfg = ctx.cfg;
    let cams = standard_cameras();
    let reg = TagRegistry::standard();
    let corpus = generate_corpus(&cams, &reg, cfg.per_camera, cfg.image_size, cfg.seed)?;
    for s in &corpus {
        save_png(ctx.dir, &format!("corpus/{}.png", s.id), s.image.clone())?;
        ctx.dir
            .write(format!("corpus/{}.tsv", s.id), record_tsv(&s.record))?;
    }
    let mut m = manifest::build_corpus(&ctx.dir.join("corpus"), &reg)?;
    m.split = "synthetic".into();
    for (row, s) in m.rows.iter_mut().zip(&corpus) {
        row.label = Some(cams[s.camera].name.clone());
    }
    m.relativize(&ctx.dir.path)?;
    m.save(&ctx.dir.join("corpus.json"))?;

    let mut n_splice = 0;
    if cfg.composites + cfg.pristine > 0 {
        let bounds = SpliceBounds {
            min_fraction: cfg.splice_min,
            max_fraction: cfg.splice_max,
        };
        let mut items = generate_composites(
            &cams,
            cfg.composites,
            cfg.composite_size,
            bounds,
            child_seed(cfg.seed, 50, 0),
        )?;
        items.extend(generate_pristine(
            &cams,
            cfg.pristine,
            cfg.composite_size,
            child_seed(cfg.seed, 50, 1),
        )?);
        for c in &items {
            save_png(ctx.dir, &format!("splice/{}.png", c.id), c.image.clone())?;
            ctx.dir.write(
                format!("splice/{}.tsv", c.id),
                record_tsv(&cams[c.host_camera].record(&reg, &c.id)),
            )?;
            if c.donor_camera.is_some() {
                save_png(
                    ctx.dir,
                    &format!("splice/{}_mask.png", c.id),
                    c.mask.to_gray(),
                )?;
            }
        }
        let mut m = manifest::build_corpus(&ctx.dir.join("splice"), &reg)?;
        m.split = "splice".into();
        let labels: BTreeMap<&str, &str> = items
            .iter()
            .map(|c| {
                (
                    c.id.as_str(),
                    if c.donor_camera.is_some() {
                        "spliced"
                    } else {
                        "pristine"
                    },
                )
            })
            .collect();
        for row in &mut m.rows {
            row.label = labels.get(row.id.as_str()).map(|s| s.to_string());
        }
        m.relativize(&ctx.dir.path)?;
        m.save(&ctx.dir.join("splice.json"))?;
        n_splice = items.len();
    }
    ctx.dir.write_json(
        "report.json",
        &json!({
            "command": "synth-corpus",
            "cameras": cams.iter().map(|c| c.name.clone()).collect::<Vec<_>>(),
            "corpus_images": corpus.len(),
            "splice_images": n_splice,
            "config": cfg,
        }),
    )
}

pub fn build_corpus(ctx: &Context, src: &Path) -> Result<()> {
    let m = manifest::build_corpus(src, &TagRegistry::standard())?;
    m.save(&ctx.dir.join("manifest.json"))?;
    let filtered = m.rows.iter().filter(|r| r.filtered).count();
    info!("{} rows, {} filtered", m.rows.len(), filtered);
    ctx.dir.write_json(
        "report.json",
        &json!({
            "command": "build-corpus",
            "source": src,
            "rows": m.rows.len(),
            "filtered": filtered,
            "usable": m.rows.len() - filtered,
            "warning": m.rows.is_empty().then_some("no images found"),
            "config": ctx.cfg,
        }),
    )
}

// ---------------------------------------------------------------- training

pub fn train(ctx: &Context, manifest_path: &Path, resume: Option<&Path>) -> Result<()> {
    let cfg = ctx.cfg;
    let reg = TagRegistry::standard();
    let m = Manifest::load(manifest_path)?;
    let examples = m.train_examples(&reg)?;
    let (eval, train): (Vec<_>, Vec<_>) = examples
        .into_iter()
        .partition(|e| cfg.eval_fraction > 0.0 && is_holdout(&e.id, cfg.eval_fraction));
    if train.len() < 2 {
        bail!(data_err(format!(
            "{} training images after the eval split; need at least 2",
            train.len()
        )));
    }
    let tc = cfg.train_config()?;
    let mut trainer = match resume {
        Some(p) => {
            let l = load_checkpoint(p)?;
            let opt = l.checkpoint.optimizer.clone().ok_or_else(|| {
                data_err(format!(
                    "{} has no optimizer state to resume from",
                    p.display()
                ))
            })?;
            Trainer::resume(l.model, opt, l.checkpoint.step, tc.clone())?
        }
        None => Trainer::new(
            init_model(&train, &reg, cfg.model_config(), &tc)?,
            tc.clone(),
        )?,
    };
    let start_step = trainer.step;
    info!(
        "training on {} images ({} held out) from step {start_step}",
        train.len(),
        eval.len()
    );
    let log = trainer.train(&train, &eval)?;
    let ckpt = Checkpoint::from_model(
        &trainer.model,
        trainer.step,
        Some(trainer.optimizer.clone()),
        Some(serde_json::to_value(&tc)?),
    );
    ckpt.save(&ctx.dir.join("checkpoint.json"))?;
    log.write_ndjson(&ctx.dir.join("train_log.ndjson"))?;
    let last = log.epochs.last();
    ctx.dir.write_json(
        "report.json",
        &json!({
            "command": "train",
            "manifest": manifest_path,
            "resumed_from": resume.map(|_| start_step),
            "train_images": train.len(),
            "eval_images": eval.len(),
            "steps": trainer.step,
            "final_loss": log.steps.last().map(|s| s.loss),
            "final_eval_loss": last.map(|e| e.eval_loss),
            "final_retrieval": last.map(|e| e.retrieval),
            "weights_hash": ckpt.weights_hash(),
            "config": cfg,
        }),
    )
}

// ---------------------------------------------------------------- analysis

struct Analyzer<'a> {
    loaded: Loaded,
    acfg: AnalyzeConfig,
    cache: &'a EmbeddingCache,
}

impl<'a> Analyzer<'a> {
    fn new(ctx: &Context<'a>, checkpoint: &Path) -> Result<Self> {
        let loaded = load_checkpoint(checkpoint)?;
        let tau = if ctx.cfg.analyze_tau > 0.0 {
            ctx.cfg.analyze_tau
        } else {
            loaded.checkpoint.model.tau
        };
        Ok(Analyzer {
            loaded,
            acfg: AnalyzeConfig {
                grid_longest: ctx.cfg.grid,
                tau,
            },
            cache: ctx.cache,
        })
    }

    fn analyze(&self, image: &RgbImage) -> Result<Analysis> {
        let grid = analysis_grid(
            image.width(),
            image.height(),
            self.loaded.model.patch_side(),
            &self.acfg,
        )?;
        let emb = self
            .cache
            .embed(&self.loaded.model, &self.loaded.hash, image, &grid)?;
        Ok(analyze_embeddings(&grid, emb.view(), self.acfg.tau)?)
    }
}

/// Min-max stretch to [0, 1]; monotone, so ranking metrics are unchanged.
fn stretched(map: &DenseMap) -> DenseMap {
    let lo = map.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    DenseMap {
        width: map.width,
        height: map.height,
        data: map
            .data
            .iter()
            .map(|v| if span > 0.0 { (v - lo) / span } else { 1.0 })
            .collect(),
    }
}

/// Response alpha-blended at 0.5 over the image; low response (unlike the
/// dominant region) shows red, high shows blue.
fn overlay(image: &RgbImage, response: &DenseMap) -> RgbImage {
    RgbImage::from_fn(image.width(), image.height(), |x, y| {
        let r = response.get(x, y).clamp(0.0, 1.0);
        let heat = [255.0 * (1.0 - r), 0.0, 255.0 * r];
        let p = image.get_pixel(x, y).0;
        image::Rgb(std::array::from_fn(|c| {
            (0.5 * p[c] as f64 + 0.5 * heat[c]).round() as u8
        }))
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct AnalyzeEntry {
    id: String,
    image: PathBuf,
    width: u32,
    height: u32,
    grid_rows: usize,
    grid_cols: usize,
    patches: usize,
    phi: f64,
    log_phi: f64,
    phi_bar: f64,
    splice: bool,
    mask_fraction: f64,
    response: String,
    mask: String,
    overlay: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn image_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    if !input.is_dir() {
        bail!(data_err(format!(
            "input {} does not exist",
            input.display()
        )));
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| manifest::is_image(p) && !manifest::is_mask(p))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!(data_err(format!("no images in {}", input.display())));
    }
    Ok(files)
}

pub fn analyze(ctx: &Context, checkpoint: &Path, input: &Path) -> Result<()> {
    let an = Analyzer::new(ctx, checkpoint)?;
    let files = image_inputs(input)?;
    let mut ids: Vec<String> = files.iter().map(|p| manifest::stem(p)).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        bail!(data_err("input images must have distinct file stems"));
    }
    let entries: Vec<AnalyzeEntry> = files
        .par_iter()
        .map(|path| {
            let id = manifest::stem(path);
            let image = image::open(path)
                .map_err(camsig_core::Error::from)
                .with_context(|| format!("reading image {}", path.display()))?
                .to_rgb8();
            let a = an.analyze(&image)?;
            let response = stretched(&a.response);
            let (resp, mask, over) = (
                format!("{id}/response.png"),
                format!("{id}/mask.png"),
                format!("{id}/overlay.png"),
            );
            save_png(ctx.dir, &resp, response.to_gray())?;
            save_png(ctx.dir, &mask, a.mask.to_gray())?;
            save_png(ctx.dir, &over, overlay(&image, &response))?;
            Ok(AnalyzeEntry {
                id,
                image: path.clone(),
                width: image.width(),
                height: image.height(),
                grid_rows: a.grid.rows,
                grid_cols: a.grid.cols,
                patches: a.grid.len(),
                phi: a.score.phi,
                log_phi: a.score.log_phi,
                phi_bar: a.score.phi_bar,
                splice: a.has_splice(),
                mask_fraction: a.mask.fraction(),
                response: resp,
                note: (!a.has_splice()).then(|| format!("no splice: {mask} is empty")),
                mask,
                overlay: over,
            })
        })
        .collect::<Result<_>>()?;
    log_cache(ctx.cache);
    let n = entries.len();
    let n_spliced = entries.iter().filter(|e| e.splice).count();
    ctx.dir.write_json(
        "report.json",
        &json!({
            "command": "analyze",
            "checkpoint_hash": an.loaded.hash,
            "tau": an.acfg.tau,
            "grid_longest": an.acfg.grid_longest,
            "summary": {
                "images": n,
                "spliced": n_spliced,
                "mean_phi_bar": entries.iter().map(|e| e.phi_bar).sum::<f64>() / n as f64,
            },
            "images": entries,
            "config": ctx.cfg,
        }),
    )
}

fn log_cache(cache: &EmbeddingCache) {
    info!(
        "embedding cache: {} hits, {} misses",
        cache.hits.load(Ordering::Relaxed),
        cache.misses.load(Ordering::Relaxed)
    );
}

// ---------------------------------------------------------------- evaluation

struct Scored {
    id: String,
    spliced: bool,
    phi_bar: f64,
    p_map: camsig_core::Result<f64>,
    c_iou: camsig_core::Result<f64>,
}

fn score_maps(id: &str, response: &DenseMap, truth: &Mask, phi_bar: f64) -> Result<Scored> {
    let map = ScoredMap::from_maps(response, truth).with_context(|| format!("scoring {id}"))?;
    Ok(Scored {
        id: id.to_string(),
        spliced: truth.count() > 0,
        phi_bar,
        p_map: p_map(&map),
        c_iou: c_iou(&map),
    })
}

pub fn evaluate(
    ctx: &Context,
    manifest_path: &Path,
    checkpoint: Option<&Path>,
    analysis: Option<&Path>,
) -> Result<()> {
    let m = Manifest::load(manifest_path)?;
    let rows: Vec<_> = m.present().collect();
    if rows.is_empty() {
        bail!(data_err("manifest has no images"));
    }
    let truth = |row: &manifest::Row, w: u32, h: u32| -> Result<Mask> {
        Ok(m.load_mask(row)?.unwrap_or_else(|| Mask::new(w, h)))
    };
    let scored: Vec<Scored> = match (checkpoint, analysis) {
        (Some(ck), _) => {
            let an = Analyzer::new(ctx, ck)?;
            let out = rows
                .par_iter()
                .map(|row| {
                    let image = m.load_image(row)?;
                    let a = an.analyze(&image)?;
                    score_maps(
                        &row.id,
                        &a.response,
                        &truth(row, image.width(), image.height())?,
                        a.score.phi_bar,
                    )
                })
                .collect::<Result<_>>()?;
            log_cache(ctx.cache);
            out
        }
        (None, Some(dir)) => {
            let path = dir.join("report.json");
            let report: Value = serde_json::from_str(
                &std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?,
            )?;
            let entries: Vec<AnalyzeEntry> = serde_json::from_value(report["images"].clone())
                .with_context(|| format!("{} is not an analyze report", path.display()))?;
            let by_id: BTreeMap<&str, &AnalyzeEntry> =
                entries.iter().map(|e| (e.id.as_str(), e)).collect();
            rows.iter()
                .map(|row| {
                    let e = by_id
                        .get(row.id.as_str())
                        .ok_or_else(|| data_err(format!("analysis has no entry for {}", row.id)))?;
                    let p = dir.join(&e.response);
                    let gray = image::open(&p)
                        .map_err(camsig_core::Error::from)
                        .with_context(|| format!("reading {}", p.display()))?
                        .to_luma8();
                    let response = DenseMap::from_gray(&gray);
                    score_maps(
                        &row.id,
                        &response,
                        &truth(row, gray.width(), gray.height())?,
                        e.phi_bar,
                    )
                })
                .collect::<Result<_>>()?
        }
        (None, None) => bail!(UsageError(
            "evaluate needs --checkpoint or --analysis".into()
        )),
    };

    let pm: Vec<_> = scored.iter().map(|s| clone_res(&s.p_map)).collect();
    let ci: Vec<_> = scored.iter().map(|s| clone_res(&s.c_iou)).collect();
    let (mean_p_map, skipped) = mean_skipping(&pm);
    let (mean_c_iou, _) = mean_skipping(&ci);
    let det_items: Vec<(f64, bool)> = scored.iter().map(|s| (s.phi_bar, s.spliced)).collect();
    let detection = match detection_map(&det_items) {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("detection mAP undefined: {e}");
            None
        }
    };
    let fmt = |r: &camsig_core::Result<f64>| {
        r.as_ref()
            .map_or("skipped".to_string(), |v| format!("{v:.6}"))
    };
    let mut tsv = String::from("id\tspliced\tphi_bar\tp_map\tc_iou\n");
    for s in &scored {
        tsv += &format!(
            "{}\t{}\t{:.9}\t{}\t{}\n",
            s.id,
            s.spliced,
            s.phi_bar,
            fmt(&s.p_map),
            fmt(&s.c_iou)
        );
    }
    ctx.dir.write("metrics.tsv", tsv)?;
    let summary = json!({
        "images": scored.len(),
        "spliced": scored.iter().filter(|s| s.spliced).count(),
        "mean_p_map": mean_p_map,
        "mean_c_iou": mean_c_iou,
        "skipped_single_class": skipped,
        "detection_map": detection,
    });
    ctx.dir.write_json(
        "metrics.json",
        &json!({
            "summary": summary,
            "images": scored.iter().map(|s| json!({
                "id": s.id,
                "spliced": s.spliced,
                "phi_bar": s.phi_bar,
                "p_map": s.p_map.as_ref().ok(),
                "c_iou": s.c_iou.as_ref().ok(),
            })).collect::<Vec<_>>(),
        }),
    )?;
    info!("{summary}");
    ctx.dir.write_json(
        "report.json",
        &json!({
            "command": "evaluate",
            "manifest": manifest_path,
            "source": checkpoint.map_or("analysis", |_| "checkpoint"),
            "summary": summary,
            "config": ctx.cfg,
        }),
    )
}

fn clone_res(r: &camsig_core::Result<f64>) -> camsig_core::Result<f64> {
    match r {
        Ok(v) => Ok(*v),
        Err(e) => Err(camsig_core::Error::Data(e.to_string())),
    }
}

// ---------------------------------------------------------------- probes

pub fn distortion_bench(ctx: &Context, manifest_path: &Path, checkpoint: &Path) -> Result<()> {
    let cfg = ctx.cfg;
    let m = Manifest::load(manifest_path)?;
    let loaded = load_checkpoint(checkpoint)?;
    let mut sources = Vec::new();
    for row in m.present() {
        let img = m.load_image(row)?;
        if img.width() != img.height() {
            warn!("skipping non-square image {}", row.id);
            continue;
        }
        sources.push((row.id.clone(), img));
    }
    if sources.is_empty() {
        bail!(data_err("distortion bench needs square images"));
    }
    if cfg.distortion_copies == 0 {
        bail!(UsageError("distortion_copies must be positive".into()));
    }
    // (source id, copy index, k1, bin, image)
    let distorted: Vec<(String, usize, f64, usize, RgbImage)> = sources
        .par_iter()
        .enumerate()
        .map(|(i, (id, img))| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 40, i as u64));
            (0..cfg.distortion_copies)
                .map(|c| {
                    let p = sample_k1(&mut rng);
                    Ok((id.clone(), c, p.k1, bin_k1(p.k1)?, distort_image(img, &p)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut tsv = String::from("file\tsource\tk1\tbin\n");
    for (id, c, k1, bin, img) in &distorted {
        let file = format!("distorted/{id}-{c:02}.png");
        save_png(ctx.dir, &file, img.clone())?;
        tsv += &format!("{file}\t{id}\t{k1:.9}\t{bin}\n");
    }
    ctx.dir.write("distortions.tsv", tsv)?;

    // Copies of one source share its id, so they land on the same side of
    // the train/test split.
    let items: Vec<(&str, &RgbImage)> = distorted.iter().map(|d| (d.0.as_str(), &d.4)).collect();
    let features = extract_features(&loaded.model, &items, cfg.preprocess())?;
    let labels: Vec<usize> = distorted.iter().map(|d| d.3).collect();
    let pcfg = cfg.probe_config();
    let result = train_linear_probe(&features, &labels, N_BINS, &pcfg)?;
    let mut shuffled_labels = labels.clone();
    shuffled_labels.shuffle(&mut ChaCha8Rng::seed_from_u64(child_seed(cfg.seed, 41, 0)));
    let shuffled = train_linear_probe(&features, &shuffled_labels, N_BINS, &pcfg)?;
    let mut bins = vec![0usize; N_BINS];
    labels.iter().for_each(|&b| bins[b] += 1);
    info!(
        "distortion probe accuracy {:.3} (shuffled {:.3})",
        result.accuracy, shuffled.accuracy
    );
    ctx.dir.write_json(
        "report.json",
        &json!({
            "command": "distortion-bench",
            "manifest": manifest_path,
            "checkpoint_hash": loaded.hash,
            "preprocess": cfg.preprocess(),
            "sources": sources.len(),
            "distorted": distorted.len(),
            "classes": N_BINS,
            "chance": 1.0 / N_BINS as f64,
            "accuracy": result.accuracy,
            "shuffled_accuracy": shuffled.accuracy,
            "train": result.n_train,
            "test": result.n_test,
            "bin_counts": bins,
            "config": cfg,
        }),
    )
}

pub fn probe_exif(ctx: &Context, manifest_path: &Path, checkpoint: &Path) -> Result<()> {
    let cfg = ctx.cfg;
    let reg = TagRegistry::standard();
    let m = Manifest::load(manifest_path)?;
    let loaded = load_checkpoint(checkpoint)?;
    let rows: Vec<_> = m.usable().collect();
    let images: Vec<RgbImage> = rows
        .iter()
        .map(|r| m.load_image(r))
        .collect::<Result<_>>()?;
    let records: Vec<ExifRecord> = rows
        .iter()
        .map(|r| m.load_record(r, &reg))
        .collect::<Result<_>>()?;
    let tags: Vec<String> = if cfg.probe_tags.is_empty() {
        reg.names().to_vec()
    } else {
        for t in &cfg.probe_tags {
            if !reg.contains(t) {
                bail!(UsageError(format!("probe_tags: unknown tag {t:?}")));
            }
        }
        cfg.probe_tags
            .iter()
            .map(|t| reg.resolve(t).to_string())
            .collect()
    };
    let mut quantizers = Vec::new();
    for t in &tags {
        let values: Vec<String> = records
            .iter()
            .filter_map(|r| r.get(t).map(str::to_string))
            .collect();
        if values.is_empty() {
            continue;
        }
        match fit_quantizer(t, &values) {
            Ok(q) => quantizers.push(q),
            Err(e) => warn!("no quantizer for {t}: {e}"),
        }
    }
    let items: Vec<(&str, &RgbImage)> = rows
        .iter()
        .zip(&images)
        .map(|(r, i)| (r.id.as_str(), i))
        .collect();
    let features = extract_features(&loaded.model, &items, cfg.preprocess())?;
    let report = exif_probe_suite(&features, &records, &quantizers, &cfg.probe_config())?;
    ctx.dir.write("probe_exif.tsv", report.to_table())?;
    info!(
        "EXIF probe macro accuracy {:?} over {} tags",
        report.macro_accuracy,
        report.tags.len()
    );
    ctx.dir.write_json(
        "report.json",
        &json!({
            "command": "probe-exif",
            "manifest": manifest_path,
            "checkpoint_hash": loaded.hash,
            "images": rows.len(),
            "report": report,
            "config": cfg,
        }),
    )
}
