use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dacnet::data::{
    extract_patches, load_cube, pad_cube, patch_margin, save_cube, stratified_split, synth_cube, BandStats, HsiCube,
    Partition, PatchSet, SplitSpec,
};
use dacnet::densenet::{load_checkpoint, save_checkpoint, DenseNet, DenseNetConfig, NamedTensor};
use dacnet::train::{audit, evaluate, predict, train, Metrics};
use dacnet::Error;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::map::{encode_pgm, Legend};

/// What a command reports: a JSON value for `--json` and a human summary.
pub struct Report {
    pub json: Value,
    pub text: String,
}

const BAND_MEAN: &str = "input.band_mean";
const BAND_STD: &str = "input.band_std";

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(Error::from).with_context(|| format!("cannot write {}", path.display()))
}

fn read_cube(path: &Path) -> Result<HsiCube> {
    load_cube(path).with_context(|| format!("cannot load cube {}", path.display()))
}

fn read_split(path: &Path, cube: &HsiCube) -> Result<SplitSpec> {
    let text = fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("cannot read split {}", path.display()))?;
    let split: SplitSpec = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if split.assignment.len() != cube.num_pixels() {
        return Err(Error::Data(format!(
            "split {} covers {} pixels, cube has {}",
            path.display(),
            split.assignment.len(),
            cube.num_pixels()
        ))
        .into());
    }
    Ok(split)
}

fn class_counts(cube: &HsiCube) -> Vec<(String, usize)> {
    let mut counts = vec![0usize; cube.num_classes() + 1];
    if let Some(labels) = cube.labels() {
        labels.iter().for_each(|&l| counts[l as usize] += 1);
    }
    std::iter::once("unlabelled".to_string()).chain(cube.class_names().iter().cloned()).zip(counts).collect()
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    pub noise: f64,
    pub seed: u64,
}

pub fn synth(a: &SynthArgs) -> Result<Report> {
    let cube = synth_cube(a.height, a.width, a.bands, a.classes, a.noise, a.seed)?;
    save_cube(&cube, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let counts = class_counts(&cube);
    let mut text = format!("wrote {} ({}x{}x{})\n", a.out.display(), a.height, a.width, a.bands);
    for (name, n) in &counts {
        text += &format!("{name:<12} {n}\n");
    }
    let json = json!({
        "out": a.out,
        "height": a.height,
        "width": a.width,
        "bands": a.bands,
        "class_counts": counts.iter().map(|(k, v)| json!({"class": k, "pixels": v})).collect::<Vec<_>>(),
    });
    Ok(Report { json, text })
}

pub fn split(data: &Path, ratios: [u32; 3], seed: u64, out: &Path) -> Result<Report> {
    let cube = read_cube(data)?;
    let labels = cube.require_labels("splitting")?;
    let spec = stratified_split(labels, cube.num_classes(), ratios, seed)?;
    write_file(out, serde_json::to_string(&spec)?.as_bytes())?;
    let counts: Vec<usize> = [Partition::Train, Partition::Val, Partition::Test].map(|p| spec.count(p)).into();
    Ok(Report {
        json: json!({"out": out, "train": counts[0], "val": counts[1], "test": counts[2]}),
        text: format!("wrote {}: train {} / val {} / test {} pixels\n", out.display(), counts[0], counts[1], counts[2]),
    })
}

/// Band statistics stored in a checkpoint, if any.
fn stored_band_stats(extras: &[NamedTensor]) -> Result<Option<BandStats>> {
    let find = |name: &str| extras.iter().find(|t| t.name == name).map(|t| t.values.clone());
    match (find(BAND_MEAN), find(BAND_STD)) {
        (Some(mean), Some(std)) => Ok(Some(BandStats { mean, std })),
        (None, None) => Ok(None),
        _ => Err(Error::Format("checkpoint holds only one of the band statistics".into()).into()),
    }
}

fn band_stat_tensors(stats: &Option<BandStats>) -> Vec<NamedTensor> {
    stats
        .iter()
        .flat_map(|s| {
            [
                NamedTensor { name: BAND_MEAN.into(), dims: vec![s.mean.len()], values: s.mean.clone() },
                NamedTensor { name: BAND_STD.into(), dims: vec![s.std.len()], values: s.std.clone() },
            ]
        })
        .collect()
}

fn normalise(cube: HsiCube, stats: &Option<BandStats>) -> Result<HsiCube> {
    Ok(match stats {
        Some(s) => s.apply(&cube)?,
        None => cube,
    })
}

pub struct TrainArgs {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub quiet: bool,
}

pub fn train_cmd(a: &TrainArgs) -> Result<Report> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if a.data.is_some() {
        cfg.data.clone_from(&a.data);
    }
    if a.out_dir.is_some() {
        cfg.out_dir.clone_from(&a.out_dir);
    }
    let data = cfg.data.clone().ok_or_else(|| Error::Config("no data cube given (--data or \"data\")".into()))?;
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory given (--out-dir or \"out_dir\")".into()))?;
    let train_cfg = cfg.training()?;
    let margin = patch_margin(cfg.block)?;

    let cube = read_cube(&data)?;
    let labels = cube.require_labels("training")?;
    let net_cfg = cfg.network(cube.bands(), cube.num_classes())?;
    let split = match &a.split {
        Some(p) => read_split(p, &cube)?,
        None => stratified_split(labels, cube.num_classes(), cfg.split_ratios, cfg.seed)?,
    };
    let stats = if cfg.standardize { Some(BandStats::fit(&cube, split.pixels(Partition::Train))?) } else { None };
    let padded = pad_cube(&normalise(cube, &stats)?, margin);
    let sets = extract_patches(&padded, margin, &split, cfg.block)?;

    fs::create_dir_all(&out_dir)
        .map_err(Error::from)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    write_file(&out_dir.join("resolved_config.json"), cfg.resolved().to_pretty_json().as_bytes())?;
    write_file(&out_dir.join("split.json"), serde_json::to_string(&split)?.as_bytes())?;
    let log_path = out_dir.join("epochs.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(Error::from)?);

    let net = DenseNet::new(net_cfg, cfg.seed)?;
    let quiet = a.quiet;
    let outcome = train(net, &sets.train, &sets.val, &train_cfg, &mut |r| {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
        log.flush()?;
        if !quiet {
            let val = r.val_oa.map_or("-".to_string(), |v| format!("{v:.4}"));
            eprintln!("epoch {:>4}  lr {:.2e}  loss {:.5}  val OA {val}", r.epoch, r.lr, r.train_loss);
        }
        Ok(())
    })?;
    drop(log);

    let extras = band_stat_tensors(&stats);
    save_checkpoint(&out_dir.join("best.dacn"), &outcome.best, &extras)?;
    save_checkpoint(&out_dir.join("last.dacn"), &outcome.last, &extras)?;
    let test = if sets.test.is_empty() {
        None
    } else {
        let m = evaluate(&outcome.best, &sets.test, train_cfg.batch_size)?;
        write_file(&out_dir.join("metrics_test.json"), m.to_canonical_json().as_bytes())?;
        Some(m)
    };
    let mut text = format!(
        "trained {} epochs on {} patches; best epoch {}\n",
        outcome.log.len(),
        sets.train.len(),
        outcome.best_epoch
    );
    if let Some(m) = &test {
        text += &format!("test OA {:.4}  AA {:.4}  kappa {:.4}\n", m.oa, m.aa, m.kappa);
    }
    text += &format!("outputs in {}\n", out_dir.display());
    Ok(Report {
        json: json!({
            "out_dir": out_dir,
            "epochs": outcome.log.len(),
            "best_epoch": outcome.best_epoch,
            "final_train_loss": outcome.log.last().map(|r| r.train_loss),
            "test": test,
        }),
        text,
    })
}

/// Network from a checkpoint plus the cube it is applied to, normalised and
/// padded the way training saw it.
struct Prepared {
    net: DenseNet,
    padded: HsiCube,
    margin: usize,
    original: HsiCube,
}

fn prepare(checkpoint: &Path, data: &Path) -> Result<Prepared> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let cube = read_cube(data)?;
    let cfg: &DenseNetConfig = ck.network.config();
    if cfg.bands != cube.bands() {
        return Err(Error::Data(format!(
            "checkpoint expects {} bands, cube {} has {}",
            cfg.bands,
            data.display(),
            cube.bands()
        ))
        .into());
    }
    let margin = patch_margin(cfg.patch)?;
    let stats = stored_band_stats(&ck.extras)?;
    let padded = pad_cube(&normalise(cube.clone(), &stats)?, margin);
    Ok(Prepared { net: ck.network, padded, margin, original: cube })
}

pub fn eval(checkpoint: &Path, data: &Path, split: &Path, partition: Partition, out: Option<&Path>) -> Result<Report> {
    let p = prepare(checkpoint, data)?;
    if p.original.num_classes() != p.net.config().num_classes {
        return Err(Error::Data(format!(
            "checkpoint has {} classes, cube has {}",
            p.net.config().num_classes,
            p.original.num_classes()
        ))
        .into());
    }
    let split = read_split(split, &p.original)?;
    let sets = extract_patches(&p.padded, p.margin, &split, p.net.config().patch)?;
    let set = match partition {
        Partition::Train => &sets.train,
        Partition::Val => &sets.val,
        Partition::Test => &sets.test,
        Partition::Excluded => return Err(Error::Config("cannot evaluate the excluded pixels".into()).into()),
    };
    let m: Metrics = evaluate(&p.net, set, 64)?;
    if let Some(out) = out {
        write_file(out, m.to_canonical_json().as_bytes())?;
    }
    let mut text = format!("{} pixels: OA {:.4}  AA {:.4}  kappa {:.4}\n", set.len(), m.oa, m.aa, m.kappa);
    for (i, r) in m.per_class_recall.iter().enumerate() {
        let name = &p.original.class_names()[i];
        text += &match r {
            Some(r) => format!("  {name:<16} recall {r:.4}\n"),
            None => format!("  {name:<16} (absent)\n"),
        };
    }
    Ok(Report { json: serde_json::to_value(&m)?, text })
}

pub fn audit_cmd(config: Option<&Path>, bands: usize, classes: usize, out: Option<&Path>) -> Result<Report> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let report = audit(&cfg.network(bands, classes)?)?;
    let out = out.map(Path::to_path_buf).or_else(|| cfg.out_dir.as_ref().map(|d| d.join("cost_report.json")));
    if let Some(out) = &out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(Error::from)?;
        }
        write_file(out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(Report { json: serde_json::to_value(&report)?, text: report.to_table() })
}

pub fn predict_cmd(checkpoint: &Path, data: &Path, out_map: &Path, all_pixels: bool) -> Result<Report> {
    let p = prepare(checkpoint, data)?;
    let classes = p.net.config().num_classes;
    if classes > 255 {
        return Err(Error::Config(format!("{classes} classes do not fit an 8-bit map")).into());
    }
    let (h, w) = (p.original.height(), p.original.width());
    let pixels: Vec<usize> = match p.original.labels() {
        Some(l) if !all_pixels => (0..h * w).filter(|&i| l[i] > 0).collect(),
        _ => (0..h * w).collect(),
    };
    let set = PatchSet::new(&p.padded, p.margin, p.net.config().patch, pixels.iter().copied(), None)?;
    let pred = predict(&p.net, &set, 64)?;
    let mut raster = vec![0u8; h * w];
    for (&px, &c) in pixels.iter().zip(&pred) {
        raster[px] = c as u8 + 1;
    }
    write_file(out_map, &encode_pgm(w, h, &raster))?;

    let mut names: Vec<String> = p.original.class_names().to_vec();
    names.resize_with(classes, String::new);
    for (i, n) in names.iter_mut().enumerate() {
        if n.is_empty() {
            *n = format!("class_{}", i + 1);
        }
    }
    let legend = Legend::new(w, h, &names, pixels.len(), all_pixels || p.original.labels().is_none());
    let legend_path = out_map.with_extension("legend.json");
    write_file(&legend_path, serde_json::to_string_pretty(&legend)?.as_bytes())?;
    Ok(Report {
        json: json!({"map": out_map, "legend": legend_path, "width": w, "height": h, "classified_pixels": pixels.len()}),
        text: format!(
            "classified {} pixels; wrote {} and {}\n",
            pixels.len(),
            out_map.display(),
            legend_path.display()
        ),
    })
}
