//! The four commands behind the CLI. Each writes its outputs plus a
//! manifest into one directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use hieralign_core::ablation::{ablation_run, AblationTable, Axis};
use hieralign_core::dataset::{generate, Dataset};
use hieralign_core::eval::{evaluate, EvalOptions, EvalReport, Mode};
use hieralign_core::pyramid::{AnchorTree, Raster};
use hieralign_core::trainer::{train_until, RunLog, TrainState};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{
    encode_raster, metrics_line, parse_metrics, read_text, render_anchors, render_captions, render_patch_index,
    render_slides, render_tiles,
};
use crate::hash::sha256_hex;
use crate::manifest::RunManifest;
use crate::report::{render_reports, report_record};

/// Thumbnails are the 5x-scale raster reduced by this factor again.
pub const THUMB_FACTOR: usize = 8;

pub const CHECKPOINT: &str = "checkpoint.bin";
pub const METRICS: &str = "metrics.log";

/// The text files of a corpus, in manifest order.
fn dataset_texts(cfg: &RunConfig, data: &Dataset) -> Vec<(&'static str, String)> {
    let h = cfg.data_hash();
    let trees: Vec<AnchorTree> = data.anchors.iter().map(|a| a.tree.clone()).collect();
    vec![
        ("slides.txt", render_slides(data, &h)),
        ("anchors.txt", render_anchors(&trees, &h)),
        ("index.txt", render_patch_index(&trees, &h)),
        ("captions.txt", render_captions(data, &h)),
        ("tiles.txt", render_tiles(data, &h)),
    ]
}

/// Generates the corpus for `cfg` into `out`; returns the manifest hash.
pub fn gen_data(cfg: &RunConfig, cfg_path: Option<&Path>, out: &Path) -> Result<String> {
    let data = generate(&cfg.data, cfg.seed)?;
    let mut m = RunManifest::new("gen-data", cfg_path, &cfg.hash(), cfg.seed);
    m.write(out, "config.txt", cfg.canonical().as_bytes())?;
    for (name, text) in dataset_texts(cfg, &data) {
        m.write(out, name, text.as_bytes())?;
    }
    for s in &data.slides {
        let thumb = s.raster_5x(&cfg.data.gen)?.block_mean(THUMB_FACTOR)?;
        m.write(out, &format!("thumbs/slide_{:04}.f32r", s.id), &encode_raster(&thumb))?;
    }
    m.save(out)
}

/// Checks the corpus in `dir` against `cfg` and rebuilds it in memory.
/// Returns the data and the hash of its manifest.
pub fn open_dataset(dir: &Path, cfg: &RunConfig) -> Result<(Dataset, String)> {
    let (m, mhash) = RunManifest::load(dir)?;
    if m.command != "gen-data" {
        return Err(Error::format(
            dir,
            format!("manifest is from {:?}, not gen-data", m.command),
        ));
    }
    m.verify(dir)?;
    let stored = RunConfig::parse(&read_text(&dir.join("config.txt"))?)?;
    if stored.data_hash() != cfg.data_hash() {
        return Err(Error::Mismatch {
            what: "dataset config hash",
            expected: cfg.data_hash(),
            found: stored.data_hash(),
        });
    }
    let data = generate(&cfg.data, cfg.seed)?;
    for (name, text) in dataset_texts(cfg, &data) {
        let got = sha256_hex(text.as_bytes());
        let want = m
            .file_hash(name)
            .ok_or_else(|| Error::format(dir, format!("manifest lacks {name}")))?;
        if got != want {
            return Err(Error::Mismatch {
                what: "regenerated dataset file",
                expected: format!("{name}={want}"),
                found: got,
            });
        }
    }
    Ok((data, mhash))
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub resume: Option<PathBuf>,
    /// stop after this many completed steps
    pub until: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: RunLog,
    pub manifest_hash: String,
}

pub fn train(
    cfg: &RunConfig,
    cfg_path: Option<&Path>,
    data_dir: &Path,
    out: &Path,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let (data, data_hash) = open_dataset(data_dir, cfg)?;
    let start = Instant::now();
    let mut log = RunLog::default();
    let mut state = match &opts.resume {
        Some(p) => {
            let ck = Checkpoint::load(p, Some(&cfg.hash()))?;
            let prior = p.with_file_name(METRICS);
            if prior.exists() {
                let mut old = parse_metrics(&read_text(&prior)?, &prior)?;
                old.records.retain(|r| r.step < ck.state.step);
                if old.records.len() as u64 != ck.state.step {
                    return Err(Error::format(&prior, "log does not cover the checkpoint's steps"));
                }
                log = old;
            }
            ck.state
        }
        None => TrainState::new(&cfg.train)?,
    };
    let more = train_until(&cfg.train, &data, &mut state, opts.until.unwrap_or(u64::MAX), |_| {})?;
    log.records.extend(more.records);

    let mut m = RunManifest::new("train", cfg_path, &cfg.hash(), cfg.seed);
    m.dataset = Some(data_hash);
    m.write(out, "config.txt", cfg.canonical().as_bytes())?;
    let ck = Checkpoint {
        config: cfg.clone(),
        state,
    };
    m.write(out, CHECKPOINT, &ck.encode())?;
    let lines: String = log.records.iter().map(|r| metrics_line(r) + "\n").collect();
    m.write(out, METRICS, lines.as_bytes())?;
    let timing = format!(
        "steps {}\nwall_time_s {:.3}\n",
        log.records.len(),
        start.elapsed().as_secs_f64()
    );
    m.write(out, "timing.txt", timing.as_bytes())?;
    let manifest_hash = m.save(out)?;
    Ok(TrainOutcome {
        state: ck.state,
        log,
        manifest_hash,
    })
}

fn label_raster(map: &hieralign_core::eval::SegmentationMap) -> Result<Raster> {
    Ok(Raster::new(
        map.side,
        map.side,
        map.labels.iter().map(|&l| l as f32).collect(),
    )?)
}

/// Evaluates a checkpoint in every requested mode. When `cfg` is given its
/// hash must match the checkpoint's.
pub fn eval(
    checkpoint: &Path,
    cfg: Option<&RunConfig>,
    data_dir: &Path,
    modes: &[Mode],
    pe: bool,
    out: &Path,
) -> Result<Vec<EvalReport>> {
    let ck = Checkpoint::load(checkpoint, cfg.map(|c| c.hash()).as_deref())?;
    let (data, data_hash) = open_dataset(data_dir, &ck.config)?;
    let mut m = RunManifest::new("eval", None, &ck.config.hash(), ck.config.seed);
    m.dataset = Some(data_hash);
    let mut reports = Vec::new();
    let mut records = String::new();
    for &mode in modes {
        let t = Instant::now();
        let mut r = evaluate(
            &ck.state.params,
            &data,
            EvalOptions {
                mode,
                pe,
                k_o: ck.config.train.k_o,
            },
        )?;
        r.name = mode.name().into();
        records += &report_record(&r, Some(t.elapsed().as_secs_f64())).to_string();
        records.push('\n');
        for map in &r.segmentation {
            let id = data.slides[map.slide].id;
            m.write(
                out,
                &format!("seg/{}/slide_{id:04}.f32r", mode.name()),
                &encode_raster(&label_raster(map)?),
            )?;
        }
        reports.push(r);
    }
    m.write(out, "reports.jsonl", records.as_bytes())?;
    m.write(out, "table.txt", render_reports(&reports).as_bytes())?;
    m.save(out)?;
    Ok(reports)
}

pub fn ablate(
    cfg: &RunConfig,
    cfg_path: Option<&Path>,
    data_dir: &Path,
    axis: Axis,
    mode: Mode,
    pe: bool,
    out: &Path,
    on_arm: impl FnMut(&hieralign_core::ablation::AblationRow),
) -> Result<AblationTable> {
    let (data, data_hash) = open_dataset(data_dir, cfg)?;
    let table = ablation_run(&cfg.train, &data, axis, mode, pe, on_arm)?;
    let mut m = RunManifest::new(&format!("ablate {}", axis.name()), cfg_path, &cfg.hash(), cfg.seed);
    m.dataset = Some(data_hash);
    let records: String = table
        .rows
        .iter()
        .map(|r| report_record(&r.report, None).to_string() + "\n")
        .collect();
    m.write(out, "reports.jsonl", records.as_bytes())?;
    m.write(out, "table.txt", table.render().as_bytes())?;
    m.save(out)?;
    Ok(table)
}
