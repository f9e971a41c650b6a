//! Subcommand implementations. Each validates its configuration before
//! reading inputs and writes every output through an atomic rename.

use std::path::{Path, PathBuf};

use ccsi::charting::{
    affine_alignment, isomap_init, read_chart_csv, read_chart_json, write_chart_csv, write_chart_json,
};
use ccsi::datagen::{
    build_scene, generate_dataset, load_dataset, load_dataset_json, save_dataset, save_dataset_json, Split,
};
use ccsi::evaluate::{
    compression_ratio, compression_ratio_without_norm, rho_stats, rho_stats_by, sum_rate_sweep, sum_rate_sweep_by,
    write_cdf_csv, write_rho_csv, write_sum_rate_csv, EvalSummary, GroupPartition,
};
use ccsi::linalg;
use ccsi::model::{init_model, load_checkpoint, load_checkpoint_json, save_checkpoint, save_checkpoint_json};
use ccsi::training::{self, StopReason, SubsampleConfig};
use ccsi::{write_atomic, Chart64, Dataset64, Model64};

use crate::config::{distinct_paths, require, RunConfig};
use crate::failure::{Context, Failure};
use crate::{ChartArgs, EvalArgs, GenerateArgs, SubsampleArgs, TrainArgs};

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn load_data(path: &Path) -> Result<Dataset64, Failure> {
    if is_json(path) {
        load_dataset_json(path).at(path)
    } else {
        load_dataset(path).at(path)
    }
}

fn load_model(path: &Path) -> Result<Model64, Failure> {
    if is_json(path) {
        load_checkpoint_json(path).at(path)
    } else {
        load_checkpoint(path).at(path)
    }
}

fn save_model(model: &Model64, path: &Path) -> Result<(), Failure> {
    if is_json(path) {
        save_checkpoint_json(model, path).at(path)
    } else {
        save_checkpoint(model, path).at(path)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn to_bytes(f: impl FnOnce(&mut Vec<u8>) -> ccsi::Result<()>) -> Result<Vec<u8>, Failure> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn generate(args: &GenerateArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    distinct_paths(&[("--config", &args.config), ("--out", &args.out)])?;
    let mut scene_cfg = require(&cfg.scene, "scene")?.clone();
    if let Some(seed) = args.seed {
        scene_cfg.rng_seed = seed;
    }
    let geometry = *require(&cfg.array, "array")?;
    let counts = *require(&cfg.counts, "counts")?;
    scene_cfg.validate()?;
    geometry.validate()?;
    if counts.calibration == 0 {
        return Err(Failure::config("counts.calibration must be >= 1"));
    }

    let scene = build_scene(&scene_cfg)?;
    let ds: Dataset64 = generate_dataset(&scene, &geometry, counts, cfg.placement)?;
    if is_json(&args.out) {
        save_dataset_json(&ds, &args.out).at(&args.out)?;
    } else {
        save_dataset(&ds, &args.out).at(&args.out)?;
    }
    let c = ds.counts();
    println!(
        "wrote {} samples ({} calibration, {} train, {} test), Na={} Ns={} to {}",
        ds.samples.len(),
        c.calibration,
        c.train,
        c.test,
        ds.meta.antenna_count,
        ds.meta.subcarrier_count,
        args.out.display()
    );
    Ok(())
}

pub fn chart(args: &ChartArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    distinct_paths(&[
        ("--config", &args.config),
        ("--dataset", &args.dataset),
        ("--out", &args.out),
    ])?;
    let k = args.neighbors.unwrap_or(cfg.chart.neighbors);
    let d = args.dim.unwrap_or(cfg.chart.dim);
    if k == 0 || d == 0 {
        return Err(Failure::config("chart neighbors and dim must be >= 1"));
    }

    let ds = load_data(&args.dataset)?;
    let cal = ds.split_vec(Split::Calibration);
    if k >= cal.len() {
        return Err(Failure::config(format!(
            "neighbors k={k} must be smaller than the {} calibration samples",
            cal.len()
        )));
    }
    let channels: Vec<&[ccsi::Complex64]> = cal.iter().map(|s| s.h.as_slice()).collect();
    let chart: Chart64 = isomap_init(&channels, k, d)?;
    let bytes = if is_json(&args.out) {
        to_bytes(|b| write_chart_json(&chart, b))?
    } else {
        to_bytes(|b| write_chart_csv(&chart, b))?
    };
    write_file(&args.out, &bytes)?;

    let positions: Vec<[f64; 2]> = cal.iter().map(|s| s.position).collect();
    println!("chart: {} locations, d={d}, k={k}", chart.len());
    if chart.degenerate {
        println!("warning: geodesic Gram matrix has significant negative eigenvalues");
    }
    if let Ok(fit) = affine_alignment(&chart, &positions) {
        let (lo, hi) = positions.iter().fold(([f64::MAX; 2], [f64::MIN; 2]), |(lo, hi), p| {
            ([lo[0].min(p[0]), lo[1].min(p[1])], [hi[0].max(p[0]), hi[1].max(p[1])])
        });
        let diag = (hi[0] - lo[0]).hypot(hi[1] - lo[1]);
        println!(
            "affine fit to true positions: mean error {:.4} m ({:.2}% of diagonal {:.2} m), max error {:.4} m",
            fit.mean_error,
            100.0 * fit.mean_error / diag,
            diag,
            fit.max_error
        );
    }
    Ok(())
}

fn load_chart(path: &Path) -> Result<Chart64, Failure> {
    let file = std::fs::File::open(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    if is_json(path) {
        read_chart_json(reader).at(path)
    } else {
        read_chart_csv(reader).at(path)
    }
}

fn epoch_path(dir: &Path, out: &Path, epoch: usize) -> PathBuf {
    let stem = out
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}-epoch{epoch:04}.cckp"))
}

pub fn train(args: &TrainArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    let log_path = args.log.clone().unwrap_or_else(|| args.out.with_extension("log.csv"));
    distinct_paths(&[
        ("--config", &args.config),
        ("--dataset", &args.dataset),
        ("--chart", &args.chart),
        ("--out", &args.out),
        ("--log", &log_path),
    ])?;
    let model_cfg = *require(&cfg.model, "model")?;
    let mut train_cfg = *require(&cfg.train, "train")?;
    if let Some(v) = args.epochs {
        train_cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        train_cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        train_cfg.learning_rate = v;
    }
    if let Some(v) = args.seed {
        train_cfg.rng_seed = v;
    }
    train_cfg.freeze_encoder |= args.freeze_encoder;
    model_cfg.validate()?;
    train_cfg.validate()?;
    let keep = args.subsample.or(cfg.subsample.and_then(|s| s.keep_count));
    let subsample_cfg: Option<SubsampleConfig> = match keep {
        Some(n) => Some(require(&cfg.subsample, "subsample")?.resolve(n)),
        None => None,
    };
    if let Some(s) = &subsample_cfg {
        if s.keep_count == 0 || !(0.0..=1.0).contains(&s.swap_probability) {
            return Err(Failure::config(
                "subsample keep count must be >= 1 and swap_probability in [0, 1]",
            ));
        }
    }

    let ds = load_data(&args.dataset)?;
    let chart = load_chart(&args.chart)?;
    let cal: Vec<&[ccsi::Complex64]> = ds.split(Split::Calibration).map(|s| s.h.as_slice()).collect();
    if chart.len() != cal.len() {
        return Err(Failure::data(format!(
            "chart has {} locations but the dataset has {} calibration samples",
            chart.len(),
            cal.len()
        )));
    }
    let train_split = ds.split_vec(Split::Train);
    if train_split.is_empty() {
        return Err(Failure::data("dataset has no training samples"));
    }
    train_cfg.validate_for(train_split.len())?;
    let mut model = init_model(&model_cfg, &chart, &cal, ds.meta.antenna_count)?;
    if let Some(s) = &subsample_cfg {
        let (small, trace) = training::subsample(&model, s)?;
        println!(
            "subsampled calibration set {} -> {} ({} swaps)",
            model.encoder.len(),
            small.encoder.len(),
            trace.swaps.len()
        );
        model = small;
    }

    if let Some(dir) = &args.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?;
    }
    let outcome = training::train_with(model, &train_split, &train_cfg, |record, current| {
        if let Some(dir) = &args.checkpoint_dir {
            let path = epoch_path(dir, &args.out, record.epoch);
            save_checkpoint(current, &path)?;
        }
        Ok(())
    })?;

    save_model(&outcome.model, &args.out)?;
    let log = to_bytes(|b| training::write_training_log(&outcome.log, b))?;
    write_file(&log_path, &log)?;
    println!(
        "trained {} epochs: initial loss {:.4}, best validation median rho {:.4} at epoch {}",
        outcome.log.len(),
        outcome.initial_train_loss,
        outcome.best_val_median_rho,
        outcome.best_epoch
    );
    println!(
        "learnable parameters: {}",
        outcome.model.param_count(!train_cfg.freeze_encoder)
    );
    match outcome.stop {
        StopReason::Diverged { epoch, stage } => Err(Failure::numeric(format!(
            "training diverged at epoch {epoch} ({stage}); saved the best checkpoint from epoch {}",
            outcome.best_epoch
        ))),
        StopReason::EarlyStopped { epoch } => {
            println!("early stop at epoch {epoch}");
            Ok(())
        }
        StopReason::Completed => Ok(()),
    }
}

pub fn subsample(args: &SubsampleArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    distinct_paths(&[
        ("--config", &args.config),
        ("--checkpoint", &args.checkpoint),
        ("--out", &args.out),
    ])?;
    let mut section = *require(&cfg.subsample, "subsample")?;
    if let Some(seed) = args.seed {
        section.rng_seed = seed;
    }
    let keep = args
        .keep
        .or(section.keep_count)
        .ok_or_else(|| Failure::config("subsample needs --keep or subsample.keep_count"))?;
    let s = section.resolve(keep);
    if s.keep_count == 0 || !(0.0..=1.0).contains(&s.swap_probability) {
        return Err(Failure::config(
            "subsample keep count must be >= 1 and swap_probability in [0, 1]",
        ));
    }

    let model = load_model(&args.checkpoint)?;
    let (small, trace) = training::subsample(&model, &s)?;
    save_model(&small, &args.out)?;
    let first = trace.max_similarity.first().copied().unwrap_or(f64::NAN);
    let last = trace.max_similarity.last().copied().unwrap_or(f64::NAN);
    println!(
        "kept {} of {} calibration columns, {} swaps, max pairwise similarity {first:.4} -> {last:.4}",
        small.encoder.len(),
        model.encoder.len(),
        trace.swaps.len()
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(&args.config)?;
    distinct_paths(&[
        ("--config", &args.config),
        ("--checkpoint", &args.checkpoint),
        ("--dataset", &args.dataset),
        ("--out-dir", &args.out_dir),
    ])?;
    let mut section = require(&cfg.eval, "eval")?.clone();
    if let Some(k) = args.users {
        section.users = k;
    }
    if let Some(seed) = args.group_seed {
        section.group_seed = seed;
    }
    if section.users == 0 {
        return Err(Failure::config("eval.users must be >= 1"));
    }
    if section.snr_grid_db.iter().any(|x| !x.is_finite()) {
        return Err(Failure::config("eval.snr_grid_db must be finite"));
    }

    let model = load_model(&args.checkpoint)?;
    if let Some(t) = section.target_subcarrier {
        if t != model.target_subcarrier {
            return Err(Failure::config(format!(
                "eval.target_subcarrier {t} differs from the checkpoint's {}",
                model.target_subcarrier
            )));
        }
    }
    let ds = load_data(&args.dataset)?;
    if ds.meta.channel_dim() != model.channel_dim() || ds.meta.antenna_count != model.antenna_count {
        return Err(Failure::data("dataset channel layout does not match the checkpoint"));
    }
    let test = ds.split_vec(Split::Test);
    if test.is_empty() {
        return Err(Failure::data("dataset has no test samples"));
    }
    if section.users > test.len() {
        return Err(Failure::config(format!(
            "eval.users {} exceeds the {} test samples",
            section.users,
            test.len()
        )));
    }
    let target = model.target_subcarrier;

    let (stats, curve) = if args.oracle {
        let oracle = |s: &ccsi::ChannelSample64| Ok(s.subcarrier(target).to_vec());
        let partition = GroupPartition::random(test.len(), section.users, section.group_seed)?;
        let stats = rho_stats_by(&test, target, |s| linalg::normalized(s.subcarrier(target)))?;
        let curve = sum_rate_sweep_by(&test, target, &partition, &section.snr_grid_db, oracle)?;
        (stats, curve)
    } else {
        let stats = rho_stats(&model, &test)?;
        let curve = sum_rate_sweep(&model, &test, section.users, &section.snr_grid_db, section.group_seed)?;
        (stats, curve)
    };
    let (na, ns, d) = (
        ds.meta.antenna_count as u64,
        ds.meta.subcarrier_count as u64,
        model.encoder.embedding_dim() as u64,
    );
    let shape = model.shape();
    let summary = EvalSummary {
        test_count: test.len(),
        median_rho: stats.median,
        mean_rho: stats.mean,
        compression_ratio: compression_ratio(na, ns, d)?.into(),
        compression_ratio_without_norm: compression_ratio_without_norm(na, ns, d)?.into(),
        param_count: model.param_count(true),
        encoder_param_count: shape.encoder_params(model.encoder.len()),
        decoder_param_count: shape.decoder_params(),
        oracle: args.oracle,
    };

    std::fs::create_dir_all(&args.out_dir).map_err(|e| Failure::data(format!("{}: {e}", args.out_dir.display())))?;
    let outputs = [
        ("rho.csv", to_bytes(|b| write_rho_csv(&stats, b))?),
        ("rho_cdf.csv", to_bytes(|b| write_cdf_csv(&stats, b))?),
        ("sum_rate.csv", to_bytes(|b| write_sum_rate_csv(&curve, b))?),
        (
            "summary.json",
            serde_json::to_vec_pretty(&summary).map_err(|e| Failure::data(e.to_string()))?,
        ),
    ];
    for (name, bytes) in &outputs {
        write_file(&args.out_dir.join(name), bytes)?;
    }
    println!(
        "test rho: median {:.4}, mean {:.4} over {} samples; compression ratio {} ({} without norm)",
        summary.median_rho,
        summary.mean_rho,
        summary.test_count,
        summary.compression_ratio.value,
        summary.compression_ratio_without_norm.value
    );
    Ok(())
}
