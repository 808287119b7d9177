//! Zero-shot evaluation: keyword dictionary, prompts, text-guided and
//! classical tile classification, top-K slide pooling, score
//! back-projection and the confusion-based metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{l2_normalize, softmax, Graph, Tensor};
use crate::bags::Vocabulary;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{select_topk_positive, NORM_EPS};
use crate::model::{self, ModelParams, Slot};

/// WSI pooling sizes reported for every evaluation.
pub const POOL_KS: [usize; 5] = [1, 5, 10, 50, 100];

/// Every vocabulary token with its text feature under one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordDictionary {
    pub tokens: Vec<usize>,
    /// `[tokens, d]`
    pub features: Tensor,
}

impl KeywordDictionary {
    pub fn build(params: &ModelParams) -> Result<Self> {
        let mut g = Graph::new();
        let b = params.bind(&mut g, false);
        let t = model::text_table(&mut g, &b)?;
        Ok(KeywordDictionary {
            tokens: (0..params.config.vocab).collect(),
            features: g.value(t).clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn feature(&self, token: usize) -> Option<&[f32]> {
        self.tokens
            .iter()
            .position(|&t| t == token)
            .map(|i| self.features.row(i))
    }
}

/// Per class, one or more keyword templates.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    pub templates: Vec<Vec<Vec<usize>>>,
}

impl PromptSet {
    /// Two templates per class, each naming half of the class's layout
    /// keywords and half of its texture keywords.
    pub fn standard(vocab: &Vocabulary) -> PromptSet {
        let cfg = &vocab.config;
        let templates = (0..cfg.n_classes)
            .map(|c| {
                let (co, fi): (Vec<usize>, Vec<usize>) = (vocab.coarse(c).collect(), vocab.fine(c).collect());
                let (hc, hf) = (co.len().div_ceil(2), fi.len().div_ceil(2));
                let mut a: Vec<usize> = co[..hc].to_vec();
                a.extend_from_slice(&fi[..hf]);
                let mut b: Vec<usize> = co[hc..].to_vec();
                b.extend_from_slice(&fi[hf..]);
                if b.is_empty() {
                    vec![a]
                } else {
                    vec![a, b]
                }
            })
            .collect();
        PromptSet { templates }
    }

    pub fn n_classes(&self) -> usize {
        self.templates.len()
    }

    /// Keeps only the first template of every class.
    pub fn first_only(&self) -> PromptSet {
        PromptSet {
            templates: self.templates.iter().map(|t| t[..1].to_vec()).collect(),
        }
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.templates.is_empty() || self.templates.iter().any(|t| t.is_empty()) {
            return Err(Error::Empty("prompt templates"));
        }
        for t in self.templates.iter().flatten() {
            if t.is_empty() {
                return Err(Error::Empty("prompt keywords"));
            }
            if let Some(&x) = t.iter().find(|&&x| x >= vocab_size) {
                return Err(Error::OutOfRange(alloc::format!("prompt token {x}")));
            }
        }
        Ok(())
    }

    /// Normalized mean keyword feature of template `j` of class `c`.
    pub fn feature(&self, dict: &KeywordDictionary, c: usize, j: usize) -> Result<Vec<f32>> {
        let t = &self.templates[c][j];
        let d = dict.features.last_dim();
        let mut acc = vec![0.0f64; d];
        for &tok in t {
            let f = dict
                .feature(tok)
                .ok_or_else(|| Error::OutOfRange(alloc::format!("token {tok} not in dictionary")))?;
            for (a, &x) in acc.iter_mut().zip(f) {
                *a += x as f64;
            }
        }
        let mean: Vec<f32> = acc.iter().map(|&a| (a / t.len() as f64) as f32).collect();
        Ok(l2_normalize(&mean, NORM_EPS))
    }

    /// `feats[j][c]`: joint-space features of template slot `j` (classes
    /// with fewer templates reuse their last one).
    fn slot_features(&self, params: &ModelParams, dict: &KeywordDictionary) -> Result<Vec<Vec<Vec<f32>>>> {
        let m = self.templates.iter().map(|t| t.len()).max().unwrap_or(0);
        (0..m)
            .map(|j| {
                let rows: Vec<Vec<f32>> = (0..self.n_classes())
                    .map(|c| self.feature(dict, c, j.min(self.templates[c].len() - 1)))
                    .collect::<Result<_>>()?;
                let t = Tensor::new(&[rows.len(), dict.features.last_dim()], rows.concat())?;
                let p = to_joint(params, Side::Text, &t)?;
                Ok((0..p.rows()).map(|i| p.row(i).to_vec()).collect())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// dictionary keywords fused with the tile feature
    Guided,
    /// tile feature against prompts directly
    Classical,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Guided => "guided",
            Mode::Classical => "classical",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "guided" => Ok(Mode::Guided),
            "classical" => Ok(Mode::Classical),
            _ => Err(Error::InvalidArgument(alloc::format!("unknown mode {s:?}"))),
        }
    }
}

/// Lowest index among the maxima.
pub fn argmax(x: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32
}

/// Softmax over `cos(query, prompt_c) / tau`.
pub fn prompt_scores(query: &[f32], prompts: &[Vec<f32>], tau: f32) -> Result<Vec<f32>> {
    if prompts.is_empty() {
        return Err(Error::Empty("prompts"));
    }
    let q = l2_normalize(query, NORM_EPS);
    let logits: Vec<f32> = prompts.iter().map(|p| dot(&q, &l2_normalize(p, NORM_EPS))).collect();
    softmax(&logits, tau)
}

/// Mean of per-template score vectors, renormalized to sum 1.
pub fn prompt_ensemble(per_template: &[Vec<f32>]) -> Result<Vec<f32>> {
    let first = per_template.first().ok_or(Error::Empty("template scores"))?;
    let c = first.len();
    if per_template.iter().any(|s| s.len() != c) {
        return Err(Error::InvalidArgument("template score lengths differ".into()));
    }
    let mut acc = vec![0.0f64; c];
    for s in per_template {
        for (a, &x) in acc.iter_mut().zip(s) {
            *a += x as f64;
        }
    }
    let total: f64 = acc.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain {
            op: "prompt_ensemble",
            detail: "scores sum to zero".into(),
        });
    }
    Ok(acc.iter().map(|&a| (a / total) as f32).collect())
}

/// Vision features `[n, d]` of pooled tile inputs.
pub fn encode_tiles(params: &ModelParams, inputs: &[&[f32]]) -> Result<Tensor> {
    if inputs.is_empty() {
        return Err(Error::Empty("tiles"));
    }
    let dim = params.config.input;
    let mut x = Vec::with_capacity(inputs.len() * dim);
    for t in inputs {
        if t.len() != dim {
            return Err(Error::ShapeMismatch {
                op: "encode_tiles",
                lhs: vec![dim],
                rhs: vec![t.len()],
            });
        }
        x.extend_from_slice(t);
    }
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let xv = g.constant(Tensor::new(&[inputs.len(), dim], x)?);
    let v = model::vision_encode(&mut g, &b, xv)?;
    Ok(g.value(v).clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Image,
    Text,
}

/// Maps `[n, d]` features into the joint image-text space through the
/// contrastive projection of `side`.
pub fn to_joint(params: &ModelParams, side: Side, x: &Tensor) -> Result<Tensor> {
    let name = match side {
        Side::Image => "itc.proj_v",
        Side::Text => "itc.proj_w",
    };
    let w = params
        .get(name)
        .ok_or_else(|| Error::InvalidArgument(alloc::format!("checkpoint lacks {name}")))?;
    let mut g = Graph::new();
    let a = g.constant(x.clone());
    let b = g.constant(w.clone());
    let y = g.matmul(a, b)?;
    Ok(g.value(y).clone())
}

/// Text-guided representations `z` of tile features `v: [n, d]`: each
/// tile is fused with its top-`k_o` dictionary keywords.
pub fn guided_features(params: &ModelParams, dict: &KeywordDictionary, v: &Tensor, k_o: usize) -> Result<Tensor> {
    if dict.is_empty() {
        return Err(Error::Empty("keyword dictionary"));
    }
    let pos = select_topk_positive(v, &dict.features, k_o)?;
    let slots: Vec<Vec<Slot>> = pos
        .rows
        .iter()
        .map(|r| {
            let mut s: Vec<Slot> = r.iter().map(|&b| Slot::Row(b)).collect();
            s.resize(k_o, Slot::Pad);
            s
        })
        .collect();
    let mut g = Graph::new();
    let b = params.bind(&mut g, false);
    let vv = g.constant(v.clone());
    let table = g.constant(dict.features.clone());
    let fused = model::fuse(&mut g, &b, vv, table, &slots)?;
    Ok(g.value(fused.z).clone())
}

/// Class scores for one joint-space query (the projection of `v` for
/// classical, of `z` for guided). With `pe`, per-template scores are
/// ensembled; otherwise only the first template of each class is used.
pub fn classify_query(query: &[f32], slot_feats: &[Vec<Vec<f32>>], tau: f32, pe: bool) -> Result<Vec<f32>> {
    if slot_feats.is_empty() {
        return Err(Error::Empty("prompts"));
    }
    if !pe {
        return prompt_scores(query, &slot_feats[0], tau);
    }
    let per: Vec<Vec<f32>> = slot_feats
        .iter()
        .map(|f| prompt_scores(query, f, tau))
        .collect::<Result<_>>()?;
    prompt_ensemble(&per)
}

/// Scores of a single pooled tile input by the classical protocol.
pub fn classify_tile_classical(
    params: &ModelParams,
    dict: &KeywordDictionary,
    prompts: &PromptSet,
    input: &[f32],
    pe: bool,
) -> Result<Vec<f32>> {
    prompts.validate(params.config.vocab)?;
    let v = encode_tiles(params, &[input])?;
    let q = to_joint(params, Side::Image, &v)?;
    let feats = prompts.slot_features(params, dict)?;
    classify_query(q.row(0), &feats, params.tau(), pe)
}

/// Scores of a single pooled tile input by the text-guided protocol.
pub fn classify_tile_guided(
    params: &ModelParams,
    dict: &KeywordDictionary,
    prompts: &PromptSet,
    input: &[f32],
    k_o: usize,
    pe: bool,
) -> Result<Vec<f32>> {
    prompts.validate(params.config.vocab)?;
    let v = encode_tiles(params, &[input])?;
    let z = guided_features(params, dict, &v, k_o)?;
    let q = to_joint(params, Side::Image, &z)?;
    let feats = prompts.slot_features(params, dict)?;
    classify_query(q.row(0), &feats, params.tau(), pe)
}

/// Scores of many tiles at once.
pub fn classify_tiles(
    params: &ModelParams,
    dict: &KeywordDictionary,
    prompts: &PromptSet,
    inputs: &[&[f32]],
    mode: Mode,
    k_o: usize,
    pe: bool,
) -> Result<Vec<Vec<f32>>> {
    prompts.validate(params.config.vocab)?;
    let v = encode_tiles(params, inputs)?;
    let q = match mode {
        Mode::Classical => v,
        Mode::Guided => guided_features(params, dict, &v, k_o)?,
    };
    let q = to_joint(params, Side::Image, &q)?;
    let feats = prompts.slot_features(params, dict)?;
    let tau = params.tau();
    (0..q.rows())
        .map(|i| classify_query(q.row(i), &feats, tau, pe))
        .collect()
}

/// Per class the sum of its `min(K, n)` highest tile scores; the label is
/// the argmax. One label per entry of `ks`.
pub fn classify_wsi(tile_scores: &[Vec<f32>], ks: &[usize]) -> Result<Vec<usize>> {
    let c = tile_scores.first().ok_or(Error::Empty("slide tiles"))?.len();
    if c == 0 || tile_scores.iter().any(|s| s.len() != c) {
        return Err(Error::InvalidArgument("tile score lengths differ".into()));
    }
    let mut sorted: Vec<Vec<f32>> = (0..c).map(|k| tile_scores.iter().map(|s| s[k]).collect()).collect();
    for col in &mut sorted {
        col.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let sums: Vec<f32> = sorted
                .iter()
                .map(|col| col.iter().take(k).map(|&x| x as f64).sum::<f64>() as f32)
                .collect();
            argmax(&sums)
        })
        .collect())
}

/// Per-pixel labels from tile scores: overlapping footprints are averaged
/// per class, then argmaxed; uncovered pixels get `n_classes`.
pub fn backproject_scores(
    tiles: &[(Vec<f32>, (usize, usize, usize))],
    height: usize,
    width: usize,
    n_classes: usize,
) -> Result<Vec<usize>> {
    let mut acc = vec![0.0f64; height * width * n_classes];
    let mut cover = vec![0u32; height * width];
    for (scores, (y, x, side)) in tiles {
        if scores.len() != n_classes {
            return Err(Error::InvalidArgument("tile score length".into()));
        }
        if y + side > height || x + side > width {
            return Err(Error::OutOfRange(alloc::format!(
                "footprint ({y}, {x}, {side}) outside {height}x{width}"
            )));
        }
        for r in *y..y + side {
            for c in *x..x + side {
                let p = r * width + c;
                cover[p] += 1;
                for (k, &s) in scores.iter().enumerate() {
                    acc[p * n_classes + k] += s as f64;
                }
            }
        }
    }
    Ok((0..height * width)
        .map(|p| {
            if cover[p] == 0 {
                return n_classes;
            }
            let row = &acc[p * n_classes..(p + 1) * n_classes];
            let mut best = 0;
            for k in 1..n_classes {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect())
}

/// Square confusion matrix, `counts[truth * n + predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    pub n: usize,
    pub counts: Vec<u64>,
}

impl Confusion {
    pub fn new(n: usize) -> Self {
        Confusion {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[&[u64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("confusion matrix must be square".into()));
        }
        Ok(Confusion {
            n,
            counts: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        if truth >= self.n || predicted >= self.n {
            return Err(Error::OutOfRange(alloc::format!(
                "label ({truth}, {predicted}) outside {} classes",
                self.n
            )));
        }
        self.counts[truth * self.n + predicted] += 1;
        Ok(())
    }

    pub fn at(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, c: usize) -> u64 {
        (0..self.n).map(|p| self.at(c, p)).sum()
    }

    fn predicted(&self, c: usize) -> u64 {
        (0..self.n).map(|t| self.at(t, c)).sum()
    }

    pub fn accuracy(&self) -> Result<f64> {
        let n = self.nonempty()?;
        Ok((0..self.n).map(|c| self.at(c, c)).sum::<u64>() as f64 / n as f64)
    }

    fn nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::Empty("confusion counts")),
            n => Ok(n),
        }
    }
}

/// `sum_c (support_c / N) F1_c`.
pub fn weighted_f1(cm: &Confusion) -> Result<f64> {
    let n = cm.nonempty()? as f64;
    let mut out = 0.0;
    for c in 0..cm.n {
        let s = cm.support(c);
        if s == 0 {
            continue;
        }
        let tp = cm.at(c, c) as f64;
        let denom = s as f64 + cm.predicted(c) as f64;
        let f1 = if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
        out += s as f64 / n * f1;
    }
    Ok(out)
}

/// Mean recall over classes with non-zero support.
pub fn balanced_accuracy(cm: &Confusion) -> Result<f64> {
    cm.nonempty()?;
    let mut sum = 0.0;
    let mut k = 0usize;
    for c in 0..cm.n {
        let s = cm.support(c);
        if s > 0 {
            sum += cm.at(c, c) as f64 / s as f64;
            k += 1;
        }
    }
    Ok(sum / k as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WsiResult {
    pub k: usize,
    pub confusion: Confusion,
    pub weighted_f1: f64,
    pub balanced_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub name: alloc::string::String,
    pub mode: Mode,
    pub pe: bool,
    pub tiles: Confusion,
    pub weighted_f1: f64,
    pub balanced_accuracy: f64,
    pub wsi: Vec<WsiResult>,
    /// index into `wsi` of the best weighted F1 (first on ties)
    pub best_k: usize,
    /// fraction of tiled 5x-scale pixels whose back-projected label matches
    /// the cell class
    pub segmentation_accuracy: f64,
    /// back-projected label maps of the evaluation slides, one cell per
    /// evaluation-tile footprint unit
    pub segmentation: Vec<SegmentationMap>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    pub slide: usize,
    pub side: usize,
    /// row-major labels; `n_classes` marks cells no tile covered
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub mode: Mode,
    pub pe: bool,
    pub k_o: usize,
}

/// Tile, slide and segmentation evaluation on the held-out slides.
pub fn evaluate(params: &ModelParams, data: &Dataset, opts: EvalOptions) -> Result<EvalReport> {
    if data.tiles.is_empty() {
        return Err(Error::Empty("evaluation tiles"));
    }
    let dict = KeywordDictionary::build(params)?;
    let prompts = PromptSet::standard(&data.vocab);
    let c = prompts.n_classes();
    let inputs: Vec<&[f32]> = data.tiles.iter().map(|t| t.input.as_slice()).collect();
    let scores = classify_tiles(params, &dict, &prompts, &inputs, opts.mode, opts.k_o, opts.pe)?;

    let mut tiles = Confusion::new(c);
    for (t, s) in data.tiles.iter().zip(&scores) {
        tiles.add(t.label, argmax(s))?;
    }

    let mut wsi: Vec<Confusion> = POOL_KS.iter().map(|_| Confusion::new(c)).collect();
    let (mut seg_hit, mut seg_total) = (0u64, 0u64);
    let mut segmentation = Vec::new();
    for (si, slide) in data.eval_slides() {
        let idx: Vec<usize> = (0..data.tiles.len()).filter(|&i| data.tiles[i].slide == si).collect();
        if idx.is_empty() {
            continue;
        }
        let ts: Vec<Vec<f32>> = idx.iter().map(|&i| scores[i].clone()).collect();
        for (cm, label) in wsi.iter_mut().zip(classify_wsi(&ts, &POOL_KS)?) {
            cm.add(slide.label, label)?;
        }
        // back-projection at a coarse grid: one cell per tile footprint unit
        let unit = data.config.eval_level.footprint();
        let side = data.config.gen.side() / unit;
        let placed: Vec<(Vec<f32>, (usize, usize, usize))> = idx
            .iter()
            .map(|&i| {
                let (y, x, s) = data.tiles[i].footprint;
                (scores[i].clone(), (y / unit, x / unit, s / unit))
            })
            .collect();
        let map = backproject_scores(&placed, side, side, c)?;
        for (p, &lab) in map.iter().enumerate() {
            if lab == c {
                continue;
            }
            let (y, x) = ((p / side) * unit, (p % side) * unit);
            seg_total += 1;
            if slide.cell_class(y, x, &data.config.gen) == Some(lab) {
                seg_hit += 1;
            }
        }
        segmentation.push(SegmentationMap {
            slide: si,
            side,
            labels: map,
        });
    }
    let wsi: Vec<WsiResult> = POOL_KS
        .iter()
        .zip(wsi)
        .map(|(&k, cm)| {
            Ok(WsiResult {
                k,
                weighted_f1: weighted_f1(&cm)?,
                balanced_accuracy: balanced_accuracy(&cm)?,
                confusion: cm,
            })
        })
        .collect::<Result<_>>()?;
    let mut best_k = 0;
    for (i, w) in wsi.iter().enumerate() {
        if w.weighted_f1 > wsi[best_k].weighted_f1 {
            best_k = i;
        }
    }
    Ok(EvalReport {
        name: alloc::string::String::new(),
        mode: opts.mode,
        pe: opts.pe,
        weighted_f1: weighted_f1(&tiles)?,
        balanced_accuracy: balanced_accuracy(&tiles)?,
        tiles,
        wsi,
        best_k,
        segmentation_accuracy: if seg_total == 0 {
            0.0
        } else {
            seg_hit as f64 / seg_total as f64
        },
        segmentation,
    })
}
