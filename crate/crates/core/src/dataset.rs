//! Synthetic corpus: slides generated at 5x scale, sampled anchors with
//! their quadtrees and frozen captions, and held-out evaluation tiles.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::Tensor;
use crate::bags::{synth_caption, VocabConfig, Vocabulary};
use crate::error::{Error, Result};
use crate::pyramid::{
    draw_params, expand_children, pooled_from_5x, render_downsampled, sample_anchors, tissue_mask_from_5x, AnchorTree,
    GenConfig, GenParams, Level, PatchId, Raster, MASK_SCALE, POOLED,
};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub gen: GenConfig,
    pub vocab: VocabConfig,
    pub n_slides: usize,
    /// the first `n_train_slides` slides feed training, the rest evaluation
    pub n_train_slides: usize,
    pub anchors_per_slide: usize,
    pub min_coverage: f64,
    pub eval_level: Level,
    pub eval_tiles_per_slide: usize,
    /// probability a caption describes a uniformly drawn other class
    pub caption_flip: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            gen: GenConfig::default(),
            vocab: VocabConfig::default(),
            n_slides: 200,
            n_train_slides: 80,
            anchors_per_slide: 20,
            min_coverage: 0.7,
            eval_level: Level::X20,
            eval_tiles_per_slide: 16,
            caption_flip: 0.3,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        if self.vocab.n_classes != self.gen.n_classes {
            return Err(Error::InvalidArgument(alloc::format!(
                "vocabulary covers {} classes, slides use {}",
                self.vocab.n_classes,
                self.gen.n_classes
            )));
        }
        if self.n_slides == 0 {
            return Err(Error::InvalidArgument("n_slides must be >= 1".into()));
        }
        if self.n_train_slides > self.n_slides {
            return Err(Error::InvalidArgument("n_train_slides exceeds n_slides".into()));
        }
        if self.anchors_per_slide == 0 {
            return Err(Error::InvalidArgument("anchors_per_slide must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.caption_flip) {
            return Err(Error::InvalidArgument("caption_flip must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.min_coverage) {
            return Err(Error::InvalidArgument("min_coverage must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlideMeta {
    pub id: u32,
    pub label: usize,
    pub seed: u64,
    pub gen: GenParams,
    pub threshold_level: u8,
    pub tissue_fraction: f64,
    pub anchor_shortfall: usize,
}

impl SlideMeta {
    pub fn train(&self, cfg: &DataConfig) -> bool {
        (self.id as usize) < cfg.n_train_slides
    }

    /// Cell class under native pixel `(y, x)`.
    pub fn cell_class(&self, y: usize, x: usize, cfg: &GenConfig) -> Option<usize> {
        let n = self.gen.cells_per_side;
        self.gen.cells[(y / cfg.cell_size) * n + x / cfg.cell_size]
    }

    /// The 5x-scale raster (re-rendered; not kept in memory).
    pub fn raster_5x(&self, cfg: &GenConfig) -> Result<Raster> {
        render_downsampled(&self.gen, cfg, MASK_SCALE)
    }
}

/// One training anchor with everything the trainer needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorData {
    pub tree: AnchorTree,
    /// index into `Dataset::slides`
    pub slide: usize,
    /// per member: tissue class of its footprint (5x: the slide label)
    pub classes: Vec<Option<usize>>,
    pub captions: Vec<Vec<usize>>,
    /// pooled encoder inputs `[85, 4096]`, member order
    pub inputs: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalTile {
    pub slide: usize,
    pub level: Level,
    /// native footprint `(y, x, side)`
    pub footprint: (usize, usize, usize),
    pub label: usize,
    /// pooled encoder input, `POOLED * POOLED` values
    pub input: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DataConfig,
    pub seed: u64,
    pub vocab: Vocabulary,
    pub slides: Vec<SlideMeta>,
    pub anchors: Vec<AnchorData>,
    pub tiles: Vec<EvalTile>,
}

impl Dataset {
    pub fn eval_slides(&self) -> impl Iterator<Item = (usize, &SlideMeta)> {
        self.slides.iter().enumerate().filter(|(_, s)| !s.train(&self.config))
    }

    pub fn tiles_of(&self, slide: usize) -> impl Iterator<Item = &EvalTile> {
        self.tiles.iter().filter(move |t| t.slide == slide)
    }
}

/// Caption stream index of one bag member.
pub fn caption_stream(slide: u32, anchor: u32, member: usize) -> u64 {
    ((slide as u64) << 32) | ((anchor as u64) << 8) | member as u64
}

fn anchor_data(
    slide: &SlideMeta,
    index: usize,
    low: &Raster,
    tree: AnchorTree,
    cfg: &DataConfig,
    vocab: &Vocabulary,
    noise: &[usize],
    seed: u64,
) -> Result<AnchorData> {
    let mut classes = Vec::with_capacity(tree.members.len());
    let mut captions = Vec::with_capacity(tree.members.len());
    let mut inputs = Vec::with_capacity(tree.members.len() * POOLED * POOLED);
    for (m, id) in tree.members.iter().enumerate() {
        let (y, x, _) = id.footprint(tree.origin);
        let class = if id.level == Level::X5 {
            Some(slide.label)
        } else {
            slide.cell_class(y, x, &cfg.gen)
        };
        let caption = match class {
            Some(c) => {
                let mut r = rng::stream(seed, "caption", caption_stream(slide.id, tree.anchor.anchor, m));
                let n = cfg.gen.n_classes;
                let described = if r.gen::<f64>() < cfg.caption_flip {
                    (c + 1 + r.gen_range(0..n - 1)) % n
                } else {
                    c
                };
                synth_caption(id.level, described, vocab, noise, &mut r)?
            }
            None => Vec::new(),
        };
        classes.push(class);
        captions.push(caption);
        inputs.extend_from_slice(&pooled_from_5x(low, id, tree.origin)?.data);
    }
    let n = tree.members.len();
    Ok(AnchorData {
        tree,
        slide: index,
        classes,
        captions,
        inputs: Tensor::new(&[n, POOLED * POOLED], inputs)?,
    })
}

fn eval_tiles(
    slide: &SlideMeta,
    index: usize,
    low: &Raster,
    mask: &crate::pyramid::TissueMask,
    cfg: &DataConfig,
    seed: u64,
) -> Result<Vec<EvalTile>> {
    let level = cfg.eval_level;
    let side = level.footprint();
    let n = cfg.gen.side() / side;
    let mut spots = Vec::new();
    for gy in 0..n {
        for gx in 0..n {
            let (y, x) = (gy * side, gx * side);
            let cov = mask.coverage(y / MASK_SCALE, x / MASK_SCALE, side / MASK_SCALE);
            if cov < cfg.min_coverage {
                continue;
            }
            if let Some(label) = slide.cell_class(y, x, &cfg.gen) {
                spots.push((y, x, label));
            }
        }
    }
    let mut r = rng::stream(seed, "eval-tiles", slide.id as u64);
    spots.shuffle(&mut r);
    spots.truncate(cfg.eval_tiles_per_slide);
    spots.sort_unstable();
    let f = level.scale();
    spots
        .into_iter()
        .map(|(y, x, label)| {
            let p = low.block_mean_region(y / MASK_SCALE, x / MASK_SCALE, side / MASK_SCALE, side / MASK_SCALE, f)?;
            Ok(EvalTile {
                slide: index,
                level,
                footprint: (y, x, side),
                label,
                input: p.data,
            })
        })
        .collect()
}

/// Generates the corpus for `seed`. Slide `i` has class `i mod C`.
pub fn generate(cfg: &DataConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let vocab = Vocabulary::new(cfg.vocab)?;
    let mut slides = Vec::with_capacity(cfg.n_slides);
    let mut anchors = Vec::new();
    let mut tiles = Vec::new();
    for i in 0..cfg.n_slides {
        let id = i as u32;
        let label = i % cfg.gen.n_classes;
        let sseed = rng::stream_seed(seed, "slide", i as u64);
        let gen = draw_params(sseed, label, &cfg.gen)?;
        let low = render_downsampled(&gen, &cfg.gen, MASK_SCALE)?;
        let mask = tissue_mask_from_5x(&low, cfg.gen.tissue_darker)?;
        let train = i < cfg.n_train_slides;
        let sample = if train {
            Some(sample_anchors(
                id,
                &mask,
                cfg.anchors_per_slide,
                cfg.min_coverage,
                seed,
            )?)
        } else {
            None
        };
        let meta = SlideMeta {
            id,
            label,
            seed: sseed,
            gen,
            threshold_level: mask.threshold_level,
            tissue_fraction: mask.fraction(),
            anchor_shortfall: sample.as_ref().map_or(0, |s| s.shortfall),
        };
        if let Some(sample) = sample {
            let noise = vocab.slide_noise(&mut rng::stream(seed, "slide-noise-words", i as u64));
            for (anchor, origin) in sample.anchors {
                let tree = expand_children(anchor, origin)?;
                anchors.push(anchor_data(&meta, i, &low, tree, cfg, &vocab, &noise, seed)?);
            }
        } else {
            tiles.extend(eval_tiles(&meta, i, &low, &mask, cfg, seed)?);
        }
        slides.push(meta);
    }
    if anchors.is_empty() && cfg.n_train_slides > 0 {
        return Err(Error::Empty("training anchors"));
    }
    Ok(Dataset {
        config: cfg.clone(),
        seed,
        vocab,
        slides,
        anchors,
        tiles,
    })
}

/// Pooled input of an arbitrary patch, recomputed from the slide.
pub fn patch_input(ds: &Dataset, slide: usize, id: &PatchId, origin: (usize, usize)) -> Result<Vec<f32>> {
    let low = ds.slides[slide].raster_5x(&ds.config.gen)?;
    Ok(pooled_from_5x(&low, id, origin)?.data)
}
