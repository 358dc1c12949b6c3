//! Subcommand implementations.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;

use sanet_core::ablation::{default_matrix, run_ablation, AblationRow};
use sanet_core::checkpoint;
use sanet_core::checks::run_gradcheck_suite;
use sanet_core::data::{load_dataset, read_pgm, save_sample, synth_dataset, write_pgm, Sample};
use sanet_core::metrics::{binarize, Mask};
use sanet_core::network::{build, SANetConfig};
use sanet_core::trainer::{evaluate, train as train_loop};
use sanet_core::{SanetError, Tape, Tensor};

use crate::config::{ConfigError, RunConfig};
use crate::manifest::Manifest;
use crate::overlay::write_overlay;

/// Scene indices for the test split start here, keeping the two synthetic
/// splits disjoint for any sane dataset size.
const TEST_INDEX_BASE: u64 = 1_000_000;

pub fn synth(cfg: &RunConfig, out: &Path) -> anyhow::Result<ExitCode> {
    let params = cfg.synth_params();
    params.validate()?;
    let mut manifest = Manifest::new("synth", cfg);

    let train_dir = cfg.path("data.train_dir");
    let test_dir = cfg.path("data.test_dir");
    let n_train = cfg.int("synth.count");
    let n_test = cfg.int("synth.test_count");

    for s in synth_dataset(&params, 0, n_train)? {
        save_sample(&s, &train_dir)?;
    }
    for s in synth_dataset(&params, TEST_INDEX_BASE, n_test)? {
        save_sample(&s, &test_dir)?;
    }
    manifest.record(&train_dir);
    manifest.record(&test_dir);
    let path = manifest.write(out)?;
    println!(
        "synthesized {n_train} training and {n_test} test scenes ({}x{}) into {} and {}",
        params.height,
        params.width,
        train_dir.display(),
        test_dir.display()
    );
    println!("manifest: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn train(cfg: &RunConfig, out: &Path) -> anyhow::Result<ExitCode> {
    let train_dir = cfg.path("data.train_dir");
    let data = load_dataset(&train_dir)?;
    if data.is_empty() {
        return Err(SanetError::Dataset(format!(
            "{}: no samples found (run `sanet synth` first?)",
            train_dir.display()
        ))
        .into());
    }
    std::fs::create_dir_all(out)?;
    let model_cfg = cfg.model_config();
    let train_cfg = cfg.train_config(out);
    let model = build::<f32>(&model_cfg, train_cfg.seed)?;
    println!(
        "training {} parameters on {} samples for {} epochs",
        model.count_params(),
        data.len(),
        train_cfg.epochs
    );

    let history = train_loop(&model, &data, None, &train_cfg)?;

    let mut manifest = Manifest::new("train", cfg);
    let hist_path = out.join("history.csv");
    std::fs::write(&hist_path, history.to_csv())?;
    manifest.record(&hist_path);

    let steps_per_epoch = data.len().div_ceil(train_cfg.batch) as u64;
    let ckpt_path = out.join("final.ckpt");
    checkpoint::save(&ckpt_path, &model, train_cfg.epochs as u64 * steps_per_epoch)?;
    manifest.record(&ckpt_path);
    manifest.write(out)?;

    let last = history.epochs.last().unwrap();
    match &last.metrics {
        Some(m) => println!(
            "final epoch {}: loss {:.4}, holdout IoU {:.4}, Pd {}, Fa {:.3e}",
            last.epoch,
            last.loss,
            m.iou,
            m.pd.map_or("nan".into(), |v| format!("{v:.4}")),
            m.fa
        ),
        None => println!("final epoch {}: loss {:.4}", last.epoch, last.loss),
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(ExitCode::SUCCESS)
}

pub fn eval(cfg: &RunConfig, out: &Path, ckpt: &Path) -> anyhow::Result<ExitCode> {
    let (model, step) = checkpoint::load::<f32>(ckpt)?;
    let test_dir = cfg.path("data.test_dir");
    let data = load_dataset(&test_dir)?;
    let report = evaluate(
        &model,
        &data,
        cfg.float("eval.threshold"),
        cfg.float("eval.match_radius"),
    )?;

    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("eval", cfg);
    let json_path = out.join("report.json");
    std::fs::write(&json_path, report.to_json())?;
    manifest.record(&json_path);
    let csv_path = out.join("report.csv");
    std::fs::write(&csv_path, report.to_csv())?;
    manifest.record(&csv_path);
    manifest.write(out)?;

    let a = &report.aggregate;
    println!(
        "evaluated {} images (checkpoint step {step}): IoU {:.4}, nIoU {:.4}, Pd {}, Fa {:.3e} ({:.2} x1e-6)",
        report.per_image.len(),
        a.iou,
        a.niou,
        a.pd.map_or("nan".into(), |v| format!("{v:.4}")),
        a.fa,
        a.fa_x1e6
    );
    Ok(ExitCode::SUCCESS)
}

pub fn infer(cfg: &RunConfig, out: &Path, ckpt: &Path, image: &Path) -> anyhow::Result<ExitCode> {
    let (model, _) = checkpoint::load::<f32>(ckpt)?;
    let (w, h, maxval, raw) = read_pgm(image)?;
    let pixels: Vec<f32> = raw.iter().map(|&v| v as f32 / maxval as f32).collect();
    let x = Tensor::new(&[1, 1, h, w], pixels.clone())?;
    let pred = model.forward(&mut Tape::no_grad(), &x, false)?;
    let mask = binarize(&pred, cfg.float("eval.threshold"))?.remove(0);

    let stem = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("infer", cfg);

    let mask_path = out.join(format!("{stem}_pred.pgm"));
    let bytes: Vec<u8> = mask.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_pgm(&mask_path, w, h, &bytes)?;
    manifest.record(&mask_path);

    // Outline the ground truth when a sibling masks/ directory has it.
    let gt = image
        .parent()
        .and_then(|p| p.parent())
        .map(|root| root.join("masks").join(format!("{stem}.pgm")))
        .filter(|p| p.exists())
        .map(|p| -> anyhow::Result<Mask> {
            let (gw, gh, _, raw) = read_pgm(&p)?;
            if (gw, gh) != (w, h) {
                return Err(SanetError::Dataset(format!(
                    "mask {} is {}x{}, image is {}x{}",
                    p.display(),
                    gw,
                    gh,
                    w,
                    h
                ))
                .into());
            }
            Ok(Mask::new(gh, gw, raw.iter().map(|&v| v > 0).collect())?)
        })
        .transpose()?;

    let overlay_path = out.join(format!("{stem}_overlay.ppm"));
    write_overlay(&overlay_path, h, w, &pixels, &mask, gt.as_ref())?;
    manifest.record(&overlay_path);
    manifest.write(out)?;

    println!(
        "prediction: {} foreground pixels; wrote {} and {}",
        mask.count_ones(),
        mask_path.display(),
        overlay_path.display()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(cfg: &RunConfig, out: &Path) -> anyhow::Result<ExitCode> {
    let start = Instant::now();
    let results = run_gradcheck_suite()?;
    let mut lines = String::new();
    let mut failures = 0;
    for r in &results {
        let line = format!("{:<28} {}", r.name, r.report);
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
        if !r.report.passed {
            failures += 1;
        }
    }
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("gradcheck", cfg);
    let path = out.join("gradcheck.txt");
    std::fs::write(&path, lines)?;
    manifest.record(&path);
    manifest.write(out)?;
    println!(
        "{} components in {:.1?}: {}",
        results.len(),
        start.elapsed(),
        if failures == 0 { "all pass" } else { "FAILURES" }
    );
    if failures > 0 {
        return Err(SanetError::NonFinite(format!(
            "{failures} gradient check(s) failed; see {}",
            path.display()
        ))
        .into());
    }
    Ok(ExitCode::SUCCESS)
}

pub fn bench(cfg: &RunConfig, out: &Path) -> anyhow::Result<ExitCode> {
    let model_cfg = cfg.model_config();
    let model = build::<f32>(&model_cfg, cfg.int_u64("train.seed"))?;
    let (h, w) = (cfg.int("synth.height"), cfg.int("synth.width"));
    let params = model.count_params();
    let flops = model.count_flops(h, w);

    let x = Tensor::<f32>::full(&[1, 1, h, w], 0.5);
    // Warm up, then take the median of the timed runs.
    for _ in 0..2 {
        model.forward(&mut Tape::no_grad(), &x, false)?;
    }
    let runs = 12;
    let mut times: Vec<f64> = (0..runs)
        .map(|_| {
            let t0 = Instant::now();
            model.forward(&mut Tape::no_grad(), &x, false).map(|_| ())?;
            Ok::<f64, anyhow::Error>(t0.elapsed().as_secs_f64() * 1e3)
        })
        .collect::<Result<_, _>>()?;
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[runs / 2];

    let mut text = format!(
        "configured model: stages={} base_channels={}\n\
         parameters: {params}\n\
         flops per forward at {h}x{w}: {flops} ({:.3} GFLOP)\n\
         forward latency at {h}x{w} (median of {runs}): {median:.2} ms\n",
        model_cfg.stages,
        model_cfg.base_channels,
        flops as f64 / 1e9
    );
    // Informational only: the published full-scale network reports 12.72M
    // parameters / 19.75G FLOPs without per-stage widths; this is the closest
    // width this architecture reaches at five stages.
    let reference_cfg = SANetConfig {
        base_channels: 28,
        stages: 5,
        ..model_cfg.clone()
    };
    let reference = build::<f32>(&reference_cfg, 0)?;
    text.push_str(&format!(
        "reference scale (stages=5, base_channels=28, 320x320): {} parameters, {:.2} GFLOP\n",
        reference.count_params(),
        reference.count_flops(320, 320) as f64 / 1e9
    ));
    print!("{text}");

    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("bench", cfg);
    let path = out.join("bench.txt");
    std::fs::write(&path, text)?;
    manifest.record(&path);
    manifest.write(out)?;
    Ok(ExitCode::SUCCESS)
}

/// Parses an ablation spec: `row.N.name = ...` plus optional per-row flag
/// keys (`use_pinwheel`, `use_cbam`, `safm_residual`, `lambda_learnable`).
/// Rows default to the base model flags.
fn parse_ablation_spec(path: &Path, base: &SANetConfig) -> anyhow::Result<Vec<AblationRow>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read ablation spec {}", path.display()))?;
    let mut rows: Vec<AblationRow> = Vec::new();
    let mut ensure_row = |rows: &mut Vec<AblationRow>, idx: usize| {
        while rows.len() <= idx {
            rows.push(AblationRow {
                name: format!("row{}", rows.len()),
                use_pinwheel: base.use_pinwheel,
                use_cbam: base.use_cbam,
                safm_residual: base.safm_residual,
                lambda_learnable: base.lambda_learnable,
            });
        }
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| {
            anyhow::Error::from(ConfigError(format!(
                "{}:{}: {msg}",
                path.display(),
                lineno + 1
            )))
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad("expected 'key = value'"))?;
        let (key, value) = (key.trim(), value.trim());
        let mut parts = key.splitn(3, '.');
        if parts.next() != Some("row") {
            return Err(bad(&format!("unknown key '{key}' (expected row.N.FIELD)")));
        }
        let idx: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("row index must be an integer"))?;
        let field = parts.next().ok_or_else(|| bad("missing row field"))?;
        ensure_row(&mut rows, idx);
        let row = &mut rows[idx];
        let parse_bool = |v: &str| -> anyhow::Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(bad("expected true|false")),
            }
        };
        match field {
            "name" => row.name = value.to_string(),
            "use_pinwheel" => row.use_pinwheel = parse_bool(value)?,
            "use_cbam" => row.use_cbam = parse_bool(value)?,
            "safm_residual" => row.safm_residual = parse_bool(value)?,
            "lambda_learnable" => row.lambda_learnable = parse_bool(value)?,
            other => return Err(bad(&format!("unknown row field '{other}'"))),
        }
    }
    if rows.is_empty() {
        return Err(ConfigError(format!("{}: no rows defined", path.display())).into());
    }
    Ok(rows)
}

pub fn ablate(cfg: &RunConfig, out: &Path, spec: Option<&Path>) -> anyhow::Result<ExitCode> {
    let base = cfg.model_config();
    let rows = match spec {
        Some(path) => parse_ablation_spec(path, &base)?,
        None => default_matrix(),
    };
    let params = cfg.synth_params();
    let train_set = synth_dataset(&params, 0, cfg.int("synth.count"))?;
    let test_set = synth_dataset(&params, TEST_INDEX_BASE, cfg.int("synth.test_count"))?;
    let mut train_cfg = cfg.train_config(out);
    train_cfg.ckpt_every = 0;
    train_cfg.ckpt_dir = None;

    println!(
        "running {} ablation rows ({} train / {} test scenes, {} epochs each)",
        rows.len(),
        train_set.len(),
        test_set.len(),
        train_cfg.epochs
    );
    let table = run_ablation(&base, &train_cfg, &train_set, &test_set, &rows);

    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("ablate", cfg);
    for row in &table.rows {
        if let Some(report) = &row.report {
            let dir = out.join("rows").join(&row.name);
            std::fs::create_dir_all(&dir)?;
            let json = dir.join("report.json");
            std::fs::write(&json, report.to_json())?;
            manifest.record(&json);
            let csv = dir.join("report.csv");
            std::fs::write(&csv, report.to_csv())?;
            manifest.record(&csv);
        }
    }
    let csv_path = out.join("ablation.csv");
    std::fs::write(&csv_path, table.to_csv())?;
    manifest.record(&csv_path);
    let txt_path = out.join("ablation.txt");
    std::fs::write(&txt_path, table.to_text())?;
    manifest.record(&txt_path);
    manifest.write(out)?;

    print!("{}", table.to_text());
    Ok(ExitCode::SUCCESS)
}
