use super::*;
use crate::synthgen::{generate, SynthConfig, MANIFEST_FILE};
use crate::tensor_file::TensorFile;

fn dataset(rate: f64) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig {
        seed: 5,
        num_scenarios: 2,
        frames_per_scenario: 2,
        image_size: (40, 48),
        anomaly_rate: rate,
        ..SynthConfig::default()
    };
    generate(&cfg, dir.path().join("data")).unwrap();
    let manifest = dir.path().join("data").join(MANIFEST_FILE);
    (dir, manifest)
}

fn weights(w: [f64; 5]) -> FusionWeights {
    FusionWeights::from_array(w).unwrap()
}

#[test]
fn single_source_passthrough() {
    let (dir, manifest) = dataset(0.5);
    let out = dir.path().join("per");
    let rc = RunConfig::new(&manifest, weights([0.0, 0.0, 0.0, 1.0, 0.0]), &out);
    let m = run_score(&rc).unwrap();
    let frame = m.frames()[1];
    let paths = m.frame_paths(frame);
    let rgb = read_rgb_png(&paths.rgb).unwrap();
    let recon = read_image(&paths.recon).unwrap();
    let ex = FeatureExtractor::new(ExtractorConfig::default(), 3).unwrap();
    let raw = perceptual_diff(&ex.extract(&rgb).unwrap(), &ex.extract(&recon).unwrap(), 40, 48).unwrap();
    let expected = normalize_map(&raw).unwrap();
    let written = read_map(score_path(&out, &m, frame)).unwrap();
    assert_eq!(written.data(), expected.data());
    assert!(out.join("run.txt").is_file());
    assert!(!table_path(&out, &m, frame).exists());
}

#[test]
fn mean_over_gt_masks_is_constant_per_instance() {
    let (dir, manifest) = dataset(1.0);
    let out = dir.path().join("mean");
    let rc = RunConfig {
        strategy: Refinement::Mean,
        masks: Some(MaskSource::GroundTruth),
        ..RunConfig::new(&manifest, weights([0.0, 0.25, 0.25, 0.25, 0.25]), &out)
    };
    let m = run_score(&rc).unwrap();
    for frame in m.frames() {
        let map = read_map(score_path(&out, &m, frame)).unwrap();
        let masks = read_instance_png(m.frame_paths(frame).masks).unwrap();
        for id in masks.instance_ids() {
            let vals: Vec<f32> = masks
                .labels()
                .iter()
                .zip(map.data())
                .filter(|(l, _)| **l == id)
                .map(|(_, v)| *v)
                .collect();
            assert!(vals.iter().all(|v| *v == vals[0]));
        }
        let table = fs::read_to_string(table_path(&out, &m, frame)).unwrap();
        assert_eq!(table.lines().count(), masks.instance_ids().len());
    }
}

#[test]
fn config_errors_come_before_work() {
    assert!(FusionWeights::from_array([0.0; 5]).unwrap_err().is_config());
    let (dir, manifest) = dataset(0.5);
    let out = dir.path().join("never");
    let rc = RunConfig {
        strategy: Refinement::Top1,
        ..RunConfig::new(&manifest, weights([1.0, 0.0, 0.0, 0.0, 0.0]), &out)
    };
    assert!(matches!(run_score(&rc), Err(Error::Config(_))));
    assert!(!out.exists());
    let even = RunConfig {
        ssim: SsimConfig::with_window(4),
        ..RunConfig::new(&manifest, weights([0.0, 0.0, 1.0, 0.0, 0.0]), &out)
    };
    assert!(run_score(&even).unwrap_err().is_config());
}

/// Writes one map per frame built from its ground truth.
fn write_maps(manifest: &Path, out: &Path, f: impl Fn(PixelLabel) -> f32) {
    let m = load_manifest(manifest).unwrap();
    for frame in m.frames() {
        let gt = read_gt_png(m.frame_paths(frame).gt).unwrap();
        let data = gt.labels().iter().map(|&l| f(l)).collect();
        let map = AnomalyMap::new(gt.height(), gt.width(), data).unwrap();
        let path = score_path(out, &m, frame);
        create_parent(&path).unwrap();
        write_tensor(&path, &map).unwrap();
    }
}

#[test]
fn perfect_and_constant_detectors() {
    let (dir, manifest) = dataset(0.5);
    let perfect = dir.path().join("perfect");
    write_maps(&manifest, &perfect, |l| if l == PixelLabel::Anomaly { 1.0 } else { 0.0 });
    let r = run_evaluate(&perfect, &manifest).unwrap();
    assert_eq!((r.ap, r.auroc, r.fpr95), (1.0, 1.0, 0.0));
    assert_eq!(r.num_ignored, 2 * 2 * 48 * (40 / 24));

    let constant = dir.path().join("constant");
    write_maps(&manifest, &constant, |_| 0.3);
    assert_eq!(run_evaluate(&constant, &manifest).unwrap().auroc, 0.5);
}

#[test]
fn evaluation_refuses_single_class_and_missing_maps() {
    let (dir, manifest) = dataset(0.0);
    let out = dir.path().join("maps");
    write_maps(&manifest, &out, |_| 0.5);
    assert!(matches!(run_evaluate(&out, &manifest), Err(Error::Contract(_))));

    let (dir, manifest) = dataset(0.5);
    let empty = dir.path().join("empty");
    match run_evaluate(&empty, &manifest) {
        Err(Error::MissingFrameFile { role, .. }) => assert_eq!(role, "score"),
        other => panic!("expected a missing score file, got {other:?}"),
    }
}

#[test]
fn sweep_rows_match_individual_runs() {
    let (dir, manifest) = dataset(0.5);
    let grid = vec![
        GridRow {
            weights: weights([0.0, 0.25, 0.25, 0.25, 0.25]),
            strategy: Refinement::Mean,
            masks: Some(MaskSource::GroundTruth),
        },
        GridRow {
            weights: weights([1.0, 0.0, 0.0, 0.0, 0.0]),
            strategy: Refinement::None,
            masks: None,
        },
        GridRow {
            weights: weights([0.0, 0.5, 0.5, 0.0, 0.0]),
            strategy: Refinement::Top1,
            masks: Some(MaskSource::Predicted),
        },
        GridRow {
            weights: weights([0.2; 5]),
            strategy: Refinement::Max,
            masks: Some(MaskSource::Predicted),
        },
    ];
    let table = run_sweep(&SweepConfig::new(&manifest), &grid).unwrap();
    assert_eq!(table.rows.len(), grid.len());
    for (i, (row, res)) in grid.iter().zip(&table.rows).enumerate() {
        let out = dir.path().join(format!("row{i}"));
        let rc = RunConfig {
            strategy: row.strategy,
            masks: row.masks,
            ..RunConfig::new(&manifest, row.weights, &out)
        };
        run_score(&rc).unwrap();
        let single = run_evaluate(&out, &manifest).unwrap();
        assert_eq!(res.result.as_ref().unwrap(), &single, "row {i}");
    }
}

#[test]
fn sweep_grid_shapes_and_errors() {
    let (dir, manifest) = dataset(0.5);
    let cfg = SweepConfig::new(&manifest);
    assert!(run_sweep(&cfg, &[]).unwrap_err().is_config());

    let row = GridRow {
        weights: weights([0.0, 1.0, 0.0, 0.0, 0.0]),
        strategy: Refinement::None,
        masks: None,
    };
    let bad = GridRow {
        strategy: Refinement::Top1,
        ..row
    };
    let table = run_sweep(&cfg, &[row, bad, row]).unwrap();
    assert_eq!(table.rows.len(), 3);
    assert_eq!(table.rows[0], table.rows[2]);
    assert!(table.rows[1].result.as_ref().unwrap_err().contains("requires a mask source"));

    let text = table.to_text();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().next().unwrap().ends_with("AUROC"));
    let csv = table.to_csv();
    assert_eq!(csv.lines().next().unwrap(), "abs,mse,ssim,per,temp,masks,strategy,AP,FPR95,AUROC,error");
    assert!(csv.lines().all(|l| l.split(',').count() >= 11));

    write_sweep(&table, dir.path().join("sweep")).unwrap();
    assert!(dir.path().join("sweep/results.csv").is_file());
}

#[test]
fn standard_grid() {
    let rows = standard_weight_rows();
    assert_eq!(rows.len(), 15);
    for w in &rows {
        assert!((w.total() - 1.0).abs() < 1e-12);
    }
    assert_eq!(rows[5].as_array()[0], 0.0);
    assert_eq!(rows[9].as_array(), [0.0, 0.25, 0.25, 0.25, 0.25]);
    let grid = default_grid();
    assert_eq!(grid.len(), 75);
    assert!(grid.iter().all(|r| r.validate().is_ok()));
    assert_eq!(grid[0].mask_label(), "gt");
    assert_eq!(grid[1].mask_label(), "none");
}

#[test]
fn feature_directory_matches_extractor() {
    let (dir, manifest) = dataset(0.5);
    let m = load_manifest(&manifest).unwrap();
    let feats = dir.path().join("features");
    let ex = FeatureExtractor::new(ExtractorConfig::default(), 3).unwrap();
    for frame in m.frames() {
        let paths = m.frame_paths(frame);
        let base = feats.join(&m.scenarios[frame.scenario].id);
        fs::create_dir_all(&base).unwrap();
        let name = frame_name(frame.frame);
        let rgb = ex.extract(&read_rgb_png(&paths.rgb).unwrap()).unwrap();
        let recon = ex.extract(&read_image(&paths.recon).unwrap()).unwrap();
        fs::write(base.join(format!("{name}_rgb.umfs")), rgb.encode()).unwrap();
        fs::write(base.join(format!("{name}_recon.umfs")), recon.encode()).unwrap();
    }
    let w = weights([0.0, 0.0, 0.0, 1.0, 0.0]);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_score(&RunConfig::new(&manifest, w, &a)).unwrap();
    run_score(&RunConfig {
        features: FeatureSource::Directory(feats.clone()),
        ..RunConfig::new(&manifest, w, &b)
    })
    .unwrap();
    for frame in m.frames() {
        assert_eq!(fs::read(score_path(&a, &m, frame)).unwrap(), fs::read(score_path(&b, &m, frame)).unwrap());
    }

    fs::remove_file(feats.join("s01").join("0010_recon.umfs")).unwrap();
    let err = run_score(&RunConfig {
        features: FeatureSource::Directory(feats),
        ..RunConfig::new(&manifest, w, dir.path().join("c"))
    })
    .unwrap_err();
    assert!(matches!(err, Error::MissingFrameFile { role: "recon", .. }));
}

#[test]
fn top1_without_instances_gives_zero_map() {
    let set = DiffSet::new().with(
        DiffKind::Abs,
        AnomalyMap::new_normalized(1, 3, vec![0.2, 0.9, 0.4]).unwrap(),
    );
    let row = GridRow {
        weights: weights([1.0, 0.0, 0.0, 0.0, 0.0]),
        strategy: Refinement::Top1,
        masks: Some(MaskSource::Predicted),
    };
    let empty = InstanceLabelMap::new(1, 3, vec![0; 3]).unwrap();
    let (map, table) = score_frame(&set, &row, Some(&empty)).unwrap();
    assert_eq!(map.data(), &[0.0; 3]);
    assert!(table.unwrap().entries.is_empty());
}

#[test]
fn baseline_writes_raw_l2() {
    let (dir, manifest) = dataset(0.5);
    let out = dir.path().join("l2");
    let report = run_baseline(&manifest, &out).unwrap();
    assert!(report.ap > 0.0 && report.ap <= 1.0);
    let m = load_manifest(&manifest).unwrap();
    let frame = m.frames()[0];
    let paths = m.frame_paths(frame);
    let expected = l2_baseline(&read_rgb_png(&paths.rgb).unwrap(), &read_image(&paths.recon).unwrap()).unwrap();
    assert_eq!(read_map(score_path(&out, &m, frame)).unwrap().data(), expected.data());
}

#[test]
fn grid_file_parsing() {
    let rows = parse_grid("# header\n0,1/4,1/4,1/4,1/4 mean gt\n\n1,0,0,0,0 none\n0,1,0,0,0 top1  # trailing\n").unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0].masks, Some(MaskSource::GroundTruth));
    assert_eq!(rows[1].masks, None);
    assert_eq!(rows[2].masks, Some(MaskSource::Predicted));
    assert!(parse_grid("1,0,0,0,0 median").unwrap_err().is_config());
    assert!(parse_grid("1,0,0,0 none").unwrap_err().is_config());
    assert!(parse_grid("").unwrap().is_empty());
}
