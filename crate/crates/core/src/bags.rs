//! Keyword vocabulary, synthetic captions, and the per-anchor visual and
//! textual bags.

use alloc::string::String;
use alloc::vec::Vec;
use core::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::pyramid::{AnchorTree, Level, PatchId, BAG_SIZE};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabConfig {
    pub n_classes: usize,
    pub coarse_per_class: usize,
    pub fine_per_class: usize,
    /// total tokens; everything past the signal groups is noise
    pub size: usize,
    /// distinct signal keywords per caption
    pub signal_per_caption: usize,
    /// Poisson rate of noise keywords per caption
    pub noise_rate: f64,
    /// probability a signal keyword comes from the other group
    pub cross_rate: f64,
    /// noise keywords available to one slide's captions; 0 means the
    /// whole noise group
    pub noise_pool: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            n_classes: 4,
            coarse_per_class: 6,
            fine_per_class: 6,
            size: 64,
            signal_per_caption: 3,
            noise_rate: 1.0,
            cross_rate: 0.0,
            noise_pool: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Coarse(usize),
    Fine(usize),
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    pub config: VocabConfig,
    tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new(config: VocabConfig) -> Result<Vocabulary> {
        let per = config.coarse_per_class + config.fine_per_class;
        if config.n_classes == 0 || per == 0 {
            return Err(Error::InvalidArgument("vocabulary needs signal tokens".into()));
        }
        if config.n_classes * per >= config.size {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} signal tokens leave no room for noise in a vocabulary of {}",
                config.n_classes * per,
                config.size
            )));
        }
        if config.signal_per_caption > config.coarse_per_class.min(config.fine_per_class) {
            return Err(Error::InvalidArgument(
                "signal_per_caption exceeds a keyword group".into(),
            ));
        }
        let mut tokens = Vec::with_capacity(config.size);
        for c in 0..config.n_classes {
            for j in 0..config.coarse_per_class {
                tokens.push(alloc::format!("layout{c}_{j}"));
            }
            for j in 0..config.fine_per_class {
                tokens.push(alloc::format!("texture{c}_{j}"));
            }
        }
        let mut j = 0;
        while tokens.len() < config.size {
            tokens.push(alloc::format!("noise{j}"));
            j += 1;
        }
        Ok(Vocabulary { config, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(|s| s.as_str())
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    fn per_class(&self) -> usize {
        self.config.coarse_per_class + self.config.fine_per_class
    }

    pub fn coarse(&self, class: usize) -> Range<usize> {
        let s = class * self.per_class();
        s..s + self.config.coarse_per_class
    }

    pub fn fine(&self, class: usize) -> Range<usize> {
        let s = class * self.per_class() + self.config.coarse_per_class;
        s..s + self.config.fine_per_class
    }

    pub fn noise(&self) -> Range<usize> {
        self.config.n_classes * self.per_class()..self.tokens.len()
    }

    /// The noise keywords one slide's captions draw from.
    pub fn slide_noise(&self, rng: &mut Rng) -> Vec<usize> {
        let mut all: Vec<usize> = self.noise().collect();
        let k = self.config.noise_pool;
        if k == 0 || k >= all.len() {
            return all;
        }
        all.shuffle(rng);
        all.truncate(k);
        all.sort_unstable();
        all
    }

    pub fn group(&self, id: usize) -> Option<Group> {
        if id >= self.tokens.len() {
            return None;
        }
        let per = self.per_class();
        if id >= self.config.n_classes * per {
            return Some(Group::Noise);
        }
        let (c, j) = (id / per, id % per);
        Some(if j < self.config.coarse_per_class {
            Group::Coarse(c)
        } else {
            Group::Fine(c)
        })
    }
}

/// Caption of a patch whose tissue class is `class`: distinct signal
/// keywords from the coarse group at 5x/10x and the fine group at
/// 20x/40x, then Poisson-many keywords drawn from the slide's `noise`
/// pool, shuffled.
pub fn synth_caption(
    level: Level,
    class: usize,
    vocab: &Vocabulary,
    noise: &[usize],
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let cfg = &vocab.config;
    if class >= cfg.n_classes {
        return Err(Error::OutOfRange(alloc::format!("class {class}")));
    }
    let coarse_level = matches!(level, Level::X5 | Level::X10);
    let mut own: Vec<usize> = if coarse_level {
        vocab.coarse(class).collect()
    } else {
        vocab.fine(class).collect()
    };
    let mut other: Vec<usize> = if coarse_level {
        vocab.fine(class).collect()
    } else {
        vocab.coarse(class).collect()
    };
    own.shuffle(rng);
    other.shuffle(rng);
    let mut out = Vec::new();
    for _ in 0..cfg.signal_per_caption {
        let cross = rng.gen::<f64>() < cfg.cross_rate;
        let pick = if cross { other.pop() } else { own.pop() };
        if let Some(t) = pick.or_else(|| own.pop()) {
            out.push(t);
        }
    }
    if let Some(&t) = noise.iter().find(|&&t| vocab.group(t) != Some(Group::Noise)) {
        return Err(Error::InvalidArgument(alloc::format!(
            "token {t} is not a noise keyword"
        )));
    }
    let draws = rng::poisson(rng, cfg.noise_rate);
    if !noise.is_empty() {
        for _ in 0..draws {
            out.push(noise[rng.gen_range(0..noise.len())]);
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// Keyword set of one anchor: order-preserving dedup of all captions.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBag {
    pub anchor: PatchId,
    pub keywords: Vec<usize>,
    /// caption per bag member (empty for members left out of the bag)
    pub per_patch: Vec<Vec<usize>>,
}

impl TextBag {
    pub fn position(&self, token: usize) -> Option<usize> {
        self.keywords.iter().position(|&k| k == token)
    }

    pub fn k(&self) -> usize {
        self.keywords.len()
    }

    /// `T`: text features of the keywords under `params`.
    pub fn features(&self, params: &ModelParams) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let t = model::text_encode(&mut g, &b, &self.keywords)?;
        Ok(g.value(t).clone())
    }
}

pub fn make_text_bag(anchor: PatchId, captions: &[Vec<usize>]) -> Result<TextBag> {
    let mut keywords: Vec<usize> = Vec::new();
    for c in captions {
        for &t in c {
            if !keywords.contains(&t) {
                keywords.push(t);
            }
        }
    }
    if keywords.is_empty() {
        return Err(Error::Empty("text bag keywords"));
    }
    Ok(TextBag {
        anchor,
        keywords,
        per_patch: captions.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VisualBag {
    pub anchor: PatchId,
    pub members: Vec<PatchId>,
    /// `[85, d]`, rows aligned with `members`
    pub v: Tensor,
}

/// Encodes the 85 pooled patches of `tree` (`inputs: [85, 4096]`, rows in
/// level-major member order).
pub fn make_visual_bag(tree: &AnchorTree, inputs: &Tensor, params: &ModelParams) -> Result<VisualBag> {
    if tree.members.len() != BAG_SIZE {
        return Err(Error::InvalidArgument(alloc::format!(
            "anchor quadtree has {} of {BAG_SIZE} nodes",
            tree.members.len()
        )));
    }
    if inputs.rank() != 2 || inputs.shape()[0] != BAG_SIZE {
        return Err(Error::ShapeMismatch {
            op: "make_visual_bag",
            lhs: alloc::vec![BAG_SIZE, params.config.input],
            rhs: inputs.shape().to_vec(),
        });
    }
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let x = g.constant(inputs.clone());
    let v = model::vision_encode(&mut g, &b, x)?;
    Ok(VisualBag {
        anchor: tree.anchor,
        members: tree.members.clone(),
        v: g.value(v).clone(),
    })
}
