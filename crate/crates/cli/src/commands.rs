use std::collections::HashMap;
use std::path::Path;

use carbseg::calibration::{apply_temperature, fit_temperature, reliability as reliability_diagram, CalibrationModel};
use carbseg::classical::baseline_segment;
use carbseg::evaluation::{compare_methods, morphometrics, summarize, tile_dices, MorphometricsOptions};
use carbseg::fsutil;
use carbseg::imagecore::{
    load_mask, read_tileset, save_image_png16, save_mask_png, split as split_tiles, split_by_source, tile as tile_pair,
    write_tileset, TileSet,
};
use carbseg::synthdata::{generate_dataset, read_dataset, SceneConfig};
use carbseg::tensornet::{load_checkpoint, save_checkpoint, UNet};
use carbseg::training::{hyperparameter_search, predict_image, predict_tiles, train_with_progress, SearchSpace};
use carbseg::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::config::RunConfig;
use crate::par;

pub(crate) fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fsutil::read(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    bytes.push(b'\n');
    fsutil::write_atomic(path, &bytes)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fsutil::create_dir_all(p),
        _ => Ok(()),
    }
}

fn pred_name(id: &str) -> String {
    format!("{id}_pred.png")
}

fn load_tiles(dir: &Path) -> Result<TileSet> {
    Ok(read_tileset(dir)?.0)
}

fn resolve_temperature(t: &TemperatureArgs) -> Result<Option<f64>> {
    if let Some(path) = &t.calibration {
        let bytes = fsutil::read(path)?;
        let model: CalibrationModel =
            serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        return Ok(Some(model.temperature));
    }
    Ok(t.temperature)
}

/// Foreground logits and 0/1 targets of every tile, pixel by pixel.
pub(crate) fn tile_logits(net: &UNet<f32>, set: &TileSet, batch: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let out = predict_tiles(net, set, batch)?;
    let mut logits = Vec::with_capacity(set.len() * set.tile_size * set.tile_size);
    let mut targets = Vec::with_capacity(logits.capacity());
    for (i, t) in set.tiles.iter().enumerate() {
        logits.extend_from_slice(out.channel(i, 0));
        targets.extend(t.target.data().iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
    }
    Ok((logits, targets))
}

pub fn generate(a: GenerateArgs) -> Result<Value> {
    let mut cfg = match (&a.config, a.hard) {
        (Some(_), true) => return Err(Error::InvalidArgument("--hard and --config are exclusive".into())),
        (Some(p), false) => read_toml::<SceneConfig>(p)?,
        (None, true) => SceneConfig::hard(),
        (None, false) => SceneConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.width {
        cfg.width = w;
    }
    if let Some(h) = a.height {
        cfg.height = h;
    }
    let m = generate_dataset(&cfg, a.n, &a.out)?;
    let fractions: Vec<f64> = m.scenes.iter().filter_map(|s| s.foreground_fraction).collect();
    Ok(json!({
        "out": a.out,
        "scenes": m.scenes.len(),
        "width": cfg.width,
        "height": cfg.height,
        "foreground_fraction_mean": fractions.iter().sum::<f64>() / fractions.len().max(1) as f64,
    }))
}

pub fn tile(a: TileArgs) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let size = a.tile_size.unwrap_or(cfg.tiling.tile_size);
    let scenes = read_dataset(&a.data)?;
    let mut set = TileSet { tile_size: size, tiles: Vec::new() };
    for (rec, pair, mask) in &scenes {
        let (w, h) = pair.dims();
        let pair = pair.crop_rows(cfg.data.crop_top, cfg.data.crop_bottom)?;
        let mask = mask.crop(0, cfg.data.crop_top, w, h - cfg.data.crop_top - cfg.data.crop_bottom)?;
        set.extend(tile_pair(&pair, &mask, size, &rec.id)?)?;
    }
    write_tileset(&a.out, &set, None)?;
    Ok(json!({ "out": a.out, "images": scenes.len(), "tiles": set.len(), "tile_size": size }))
}

pub fn split(a: SplitArgs) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let fractions = match &a.fractions {
        Some(f) if f.len() == 3 => (f[0], f[1], f[2]),
        Some(f) => return Err(Error::InvalidArgument(format!("--fractions needs three values, got {}", f.len()))),
        None => cfg.tiling.fractions,
    };
    let seed = a.seed.unwrap_or(cfg.tiling.split_seed);
    let set = load_tiles(&a.tiles)?;
    let splits = if a.by_source || cfg.tiling.by_source {
        split_by_source(set, fractions, seed)?
    } else {
        split_tiles(set, fractions, seed)?
    };
    for (name, part) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        write_tileset(a.out.join(name), part, None)?;
    }
    Ok(json!({
        "out": a.out,
        "train": splits.train.len(),
        "val": splits.val.len(),
        "test": splits.test.len(),
    }))
}

pub fn baseline(a: BaselineArgs, threads: usize) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let scenes = read_dataset(&a.data)?;
    fsutil::create_dir_all(&a.out)?;
    let dices = par::map(&scenes, threads, |(rec, pair, target)| {
        let mask = baseline_segment(pair, &cfg.baseline)?;
        save_mask_png(a.out.join(pred_name(&rec.id)), &mask)?;
        let c = carbseg::evaluation::confusion(&mask, target)?;
        Ok(carbseg::evaluation::dice_coefficient(&c))
    })?;
    let s = summarize(&dices)?;
    Ok(json!({ "out": a.out, "images": scenes.len(), "image_dice_median": s.median }))
}

pub fn train(a: TrainArgs) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let mut tc = cfg.train_config();
    if let Some(e) = a.epochs {
        tc.max_epochs = e;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(lr) = a.lr {
        tc.lr0 = lr;
    }
    if let Some(b) = a.batch_size {
        tc.batch_size = b;
    }
    let train_set = load_tiles(&a.data.join("train"))?;
    let val_set = load_tiles(&a.data.join("val"))?;
    let out = train_with_progress(&train_set, &val_set, &tc, |e| {
        log::info!(
            "epoch {:>3}  train {:.5}  val {:.5}  dice {:.4}  lr {:.2e}  {:.1}s",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_dice,
            e.lr,
            e.seconds
        );
    })?;
    let mut report = out.report;
    report.checkpoint = Some(a.out.display().to_string());
    let summary = json!({
        "checkpoint": a.out,
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "best_val_dice": report.best_val_dice,
        "epochs": report.epochs.len(),
        "stop": report.stop,
        "failure": report.failure,
        "parameters": report.parameters,
    });
    ensure_parent(&a.out)?;
    save_checkpoint(&out.net, &a.out, json!({ "train": summary, "config": tc }))?;
    if let Some(p) = &a.report {
        ensure_parent(p)?;
        fsutil::write_atomic(p, report.to_csv().as_bytes())?;
    }
    Ok(summary)
}

pub fn predict(a: PredictArgs, threads: usize) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let mut opts = cfg.predict_options();
    if let Some(t) = a.tile_size {
        opts.tile_size = t;
    }
    opts.temperature = resolve_temperature(&a.temperature)?;
    let (net, _) = load_checkpoint(&a.checkpoint)?;
    let scenes = read_dataset(&a.data)?;
    fsutil::create_dir_all(&a.out)?;
    let fractions = par::map(&scenes, threads, |(rec, pair, _)| {
        let p = predict_image(&net, pair, &opts)?;
        save_mask_png(a.out.join(pred_name(&rec.id)), &p.mask)?;
        save_image_png16(a.out.join(format!("{}_prob.png", rec.id)), &p.probability)?;
        Ok(p.mask.foreground_fraction())
    })?;
    Ok(json!({
        "out": a.out,
        "images": scenes.len(),
        "temperature": opts.temperature,
        "foreground_fraction_mean": fractions.iter().sum::<f64>() / fractions.len() as f64,
    }))
}

pub fn calibrate(a: CalibrateArgs) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let bins = a.bins.unwrap_or(cfg.calibration.bins);
    let (net, _) = load_checkpoint(&a.checkpoint)?;
    let set = load_tiles(&a.data)?;
    let (logits, targets) = tile_logits(&net, &set, cfg.training.eval_batch_size)?;
    let model = fit_temperature(&logits, &targets, bins)?;
    ensure_parent(&a.out)?;
    write_json(&a.out, &model)?;
    Ok(serde_json::to_value(&model).map_err(|e| Error::Format(e.to_string()))?)
}

pub fn reliability(a: ReliabilityArgs) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let bins = a.bins.unwrap_or(cfg.calibration.bins);
    let t = resolve_temperature(&a.temperature)?.unwrap_or(1.0);
    let (net, _) = load_checkpoint(&a.checkpoint)?;
    let set = load_tiles(&a.data)?;
    let (logits, targets) = tile_logits(&net, &set, cfg.training.eval_batch_size)?;
    let probs = apply_temperature(&logits, t)?;
    let diagram = reliability_diagram(&probs, &targets, bins)?;
    ensure_parent(&a.out)?;
    fsutil::write_atomic(&a.out, diagram.to_csv().as_bytes())?;
    Ok(json!({ "out": a.out, "temperature": t, "bins": bins, "ece": diagram.ece, "pixels": diagram.total }))
}

pub fn evaluate(a: EvaluateArgs, threads: usize) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let size = a.tile_size.unwrap_or(cfg.evaluation.tile_size);
    let scenes = read_dataset(&a.target)?;
    let per_image = par::map(&scenes, threads, |(rec, _, target)| {
        let pred = load_mask(a.pred.join(pred_name(&rec.id)))?;
        tile_dices(&pred, target, size)
    })?;
    let mut csv = String::from("image,tile,dice\n");
    let mut all = Vec::new();
    for ((rec, _, _), dices) in scenes.iter().zip(&per_image) {
        for (i, d) in dices.iter().enumerate() {
            csv.push_str(&format!("{},{i},{d}\n", rec.id));
            all.push(*d);
        }
    }
    ensure_parent(&a.out)?;
    fsutil::write_atomic(&a.out, csv.as_bytes())?;
    let s = summarize(&all)?;
    Ok(json!({ "out": a.out, "images": scenes.len(), "tile_size": size, "dice": s }))
}

/// `dice` column of a score table, keyed by `(image, tile)` when both
/// columns exist.
fn read_scores(path: &Path) -> Result<(Vec<Option<(String, String)>>, Vec<f64>)> {
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let bytes = fsutil::read(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let headers = rdr.headers().map_err(fmt)?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let dice = col("dice").ok_or_else(|| Error::Format(format!("{}: no dice column", path.display())))?;
    let key = col("image").zip(col("tile"));
    let (mut keys, mut values) = (Vec::new(), Vec::new());
    for row in rdr.records() {
        let row = row.map_err(fmt)?;
        let v: f64 = row[dice]
            .trim()
            .parse()
            .map_err(|e| Error::Format(format!("{}: bad dice {:?}: {e}", path.display(), &row[dice])))?;
        keys.push(key.map(|(i, t)| (row[i].to_string(), row[t].to_string())));
        values.push(v);
    }
    Ok((keys, values))
}

pub fn compare(a: CompareArgs) -> Result<Value> {
    let (ka, va) = read_scores(&a.a)?;
    let (kb, vb) = read_scores(&a.b)?;
    let vb = if ka.iter().all(Option::is_some) && kb.iter().all(Option::is_some) && ka != kb {
        let index: HashMap<_, _> = kb.iter().zip(&vb).map(|(k, v)| (k.clone(), *v)).collect();
        if index.len() != ka.len() {
            return Err(Error::ShapeMismatch(format!("{} vs {} scored tiles", ka.len(), kb.len())));
        }
        ka.iter()
            .map(|k| {
                index.get(k).copied().ok_or_else(|| {
                    let (i, t) = k.as_ref().unwrap();
                    Error::ShapeMismatch(format!("tile {i}/{t} missing from {}", a.b.display()))
                })
            })
            .collect::<Result<Vec<f64>>>()?
    } else {
        vb
    };
    let c = compare_methods(&va, &vb, a.alpha)?;
    ensure_parent(&a.out)?;
    write_json(&a.out, &json!({ "a": c.a, "b": c.b, "test": c.test, "test_error": c.test_error }))?;
    if let Some(p) = &a.pairs {
        ensure_parent(p)?;
        fsutil::write_atomic(p, c.to_csv().as_bytes())?;
    }
    Ok(json!({
        "out": a.out,
        "pairs": c.pairs.len(),
        "a_median": c.a.median,
        "b_median": c.b.median,
        "p_value": c.test.as_ref().map(|t| t.p_value),
        "reject": c.test.as_ref().map(|t| t.reject),
        "test_error": c.test_error,
    }))
}

pub fn quantify(a: QuantifyArgs) -> Result<Value> {
    let mask = load_mask(&a.mask)?;
    let opts = MorphometricsOptions {
        bin_width_nm: a.bin_width_nm,
        large_ecd_nm: a.large_ecd_nm,
        ..MorphometricsOptions::default()
    };
    let m = morphometrics(&mask, a.pixel_size_nm, &opts)?;
    ensure_parent(&a.out)?;
    fsutil::write_atomic(&a.out, m.to_csv().as_bytes())?;
    if let Some(h) = &a.histogram {
        ensure_parent(h)?;
        fsutil::write_atomic(h, m.histogram_csv().as_bytes())?;
    }
    Ok(json!({
        "out": a.out,
        "count": m.count,
        "large_count": m.large_count,
        "density_per_um2": m.density_per_um2,
        "area_fraction": m.area_fraction,
    }))
}

pub fn hpo(a: HpoArgs) -> Result<Value> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let mut space = match &a.space {
        Some(p) => read_toml::<SearchSpace>(p)?,
        None => SearchSpace::default(),
    };
    if let Some(b) = a.budget {
        space.budget = b;
    }
    let train_set = load_tiles(&a.data.join("train"))?;
    let val_set = load_tiles(&a.data.join("val"))?;
    let result = hyperparameter_search(&space, &cfg.train_config(), &train_set, &val_set, a.objective.into())?;
    ensure_parent(&a.out)?;
    fsutil::write_atomic(&a.out, result.to_csv().as_bytes())?;
    let best = result.best.map(|i| &result.trials[i]);
    Ok(json!({
        "out": a.out,
        "trials": result.trials.len(),
        "objective": result.objective,
        "best": best,
    }))
}
