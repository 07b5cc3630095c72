//! End-to-end flows through the public API: sidecar to training text,
//! synthetic corpus to checkpoint, and embeddings to splice maps and metrics.

use camsig_core::encoders::{Checkpoint, ModelConfig, PatchEncoderConfig, TextEncoderConfig};
use camsig_core::exif::{
    parse_exif, passes_training_filter, serialize, TagOrder, TagRegistry, TextFormat,
};
use camsig_core::metrics::{c_iou, p_map, ScoredMap};
use camsig_core::patch::SpliceBounds;
use camsig_core::splice::{
    analysis_grid, analyze_embeddings, detect_and_localize, embed_grid, AnalyzeConfig,
};
use camsig_core::synth::{
    generate_composites, generate_corpus, generate_pristine, standard_cameras,
};
use camsig_core::train::{init_model, TrainConfig, TrainExample, Trainer};
use ndarray::Array2;

#[test]
fn sidecar_file_becomes_training_text() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.json");
    std::fs::write(
        &path,
        r#"{"Focal Length": "35.0 mm", "Unknown Tag": "x", "Camera Make": "Apple"}"#,
    )
    .unwrap();
    let reg = TagRegistry::standard();
    let rec = parse_exif(&path, &reg).unwrap();
    assert_eq!(rec.len(), 2);
    assert!(!passes_training_filter(&rec));
    let fixed = TextFormat {
        order: TagOrder::Fixed,
        names: true,
    };
    assert_eq!(
        serialize(&rec, fixed, None).unwrap().as_str(),
        "Camera Make: Apple Focal Length: 35.0 mm"
    );
    let bare = TextFormat {
        names: false,
        ..fixed
    };
    assert_eq!(
        serialize(&rec, bare, None).unwrap().as_str(),
        "Apple 35.0 mm"
    );
}

#[test]
fn synthetic_records_pass_the_training_filter() {
    let reg = TagRegistry::standard();
    for img in generate_corpus(&standard_cameras(), &reg, 1, 32, 0).unwrap() {
        assert!(passes_training_filter(&img.record), "{}", img.id);
    }
}

fn tiny() -> ModelConfig {
    ModelConfig {
        patch: PatchEncoderConfig {
            patch_side: 16,
            channels: vec![8, 8],
            strides: vec![1, 2],
            embed_dim: 16,
        },
        text: TextEncoderConfig {
            width: 16,
            embed_dim: 16,
            ..Default::default()
        },
        tau: 0.07,
    }
}

#[test]
fn trained_checkpoint_reloads_and_analyzes_identically() {
    let reg = TagRegistry::standard();
    let examples: Vec<TrainExample> = generate_corpus(&standard_cameras()[..4], &reg, 4, 32, 5)
        .unwrap()
        .into_iter()
        .map(|s| TrainExample {
            id: s.id,
            image: s.image,
            record: s.record,
            caption: None,
        })
        .collect();
    let tc = TrainConfig {
        batch_size: 8,
        epochs: 1,
        eval_batches: 1,
        ..Default::default()
    };
    let model = init_model(&examples, &reg, tiny(), &tc).unwrap();
    let mut trainer = Trainer::new(model, tc).unwrap();
    let log = trainer.train(&examples, &examples).unwrap();
    assert_eq!(log.epochs.len(), 1);
    assert!(log.steps.iter().all(|s| s.loss.is_finite()));

    let ckpt = Checkpoint::from_model(&trainer.model, trainer.step, None, None);
    let back = Checkpoint::from_json(&ckpt.to_json().unwrap()).unwrap();
    assert_eq!(back.weights_hash(), ckpt.weights_hash());
    let reloaded = back.to_model().unwrap();

    let image = &generate_composites(&standard_cameras(), 1, 48, SpliceBounds::default(), 9)
        .unwrap()[0]
        .image;
    let cfg = AnalyzeConfig {
        grid_longest: 5,
        tau: 0.07,
    };
    let a = detect_and_localize(image, &trainer.model, &cfg).unwrap();
    let b = detect_and_localize(image, &reloaded, &cfg).unwrap();
    assert_eq!(a.patch_response, b.patch_response);
    assert_eq!(a.mask, b.mask);
    assert_eq!(a.score.phi_bar, b.score.phi_bar);
    let grid = analysis_grid(48, 48, 16, &cfg).unwrap();
    assert_eq!(
        embed_grid(&reloaded, image, &grid).unwrap().nrows(),
        grid.len()
    );
}

/// One unit vector per source: patches mostly inside the ground-truth
/// splice get `e1`, the rest `e0`.
fn oracle_embeddings(
    grid: &camsig_core::patch::PatchGrid,
    mask: &camsig_core::patch::Mask,
) -> Array2<f64> {
    let mut e = Array2::zeros((grid.len(), 2));
    for (i, p) in grid.patches.iter().enumerate() {
        let inside = (p.y..p.y + p.side)
            .flat_map(|y| (p.x..p.x + p.side).map(move |x| (x, y)))
            .filter(|&(x, y)| mask.get(x, y))
            .count();
        let col = usize::from(2 * inside > (p.side * p.side) as usize);
        e[[i, col]] = 1.0;
    }
    e
}

#[test]
fn source_consistent_embeddings_localize_composites() {
    let cfg = AnalyzeConfig {
        grid_longest: 12,
        tau: 0.07,
    };
    let mut checked = 0;
    for c in generate_composites(&standard_cameras(), 10, 192, SpliceBounds::default(), 11).unwrap()
    {
        let grid = analysis_grid(192, 192, 32, &cfg).unwrap();
        let e = oracle_embeddings(&grid, &c.mask);
        let a = analyze_embeddings(&grid, e.view(), cfg.tau).unwrap();
        if a.partition.spliced.iter().all(|&s| !s) {
            // The splice is too small to hold a majority of any patch.
            assert!(e.column(1).iter().all(|&v| v == 0.0), "{}", c.id);
            continue;
        }
        assert!(a.has_splice(), "{}", c.id);
        let scored = ScoredMap::from_maps(&a.response, &c.mask).unwrap();
        let ap = p_map(&scored).unwrap();
        let iou = c_iou(&scored).unwrap();
        assert!(ap > 0.8, "{}: p-mAP {ap}", c.id);
        assert!(iou > 0.6, "{}: cIoU {iou}", c.id);
        checked += 1;
    }
    assert!(
        checked >= 8,
        "only {checked} composites had a patch-sized splice"
    );
}

#[test]
fn identical_embeddings_mean_no_splice() {
    let cfg = AnalyzeConfig {
        grid_longest: 12,
        tau: 0.07,
    };
    let c = &generate_pristine(&standard_cameras(), 1, 192, 4).unwrap()[0];
    let grid = analysis_grid(192, 192, 32, &cfg).unwrap();
    let e = Array2::from_shape_fn((grid.len(), 3), |(_, j)| if j == 0 { 1.0 } else { 0.0 });
    let a = analyze_embeddings(&grid, e.view(), cfg.tau).unwrap();
    assert!(!a.has_splice(), "{}", c.id);
}
