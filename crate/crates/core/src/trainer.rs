//! Pre-training loop: anchor batches, positive selection, fusion, the full
//! objective, AdamW with warmup plus cosine decay, and queue upkeep.
//!
//! Every random draw of step `s` comes from `stream(seed, "step", s)` and
//! the anchor order of epoch `e` from `stream(seed, "order", e)`, so a run
//! resumed from a saved [`TrainState`] continues bit-identically.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::autodiff::{Graph, Tensor, Var};
use crate::bags::make_text_bag;
use crate::dataset::{AnchorData, Dataset};
use crate::error::{Error, Result};
use crate::losses::{
    cvta_loss, draw_prefix, itc_loss, itm_loss, mask_positions, mlm_loss, mrtva_edges, mrtva_symmetric, plm_loss,
    select_topk_positive, total_loss, FeatureQueue, LossBreakdown, LossTerms, PlmItem, NORM_EPS,
};
use crate::math;
use crate::model::{self, Bound, ModelConfig, ModelParams, Slot};
use crate::optim::{adamw_step, AdamHyper, OptState};
use crate::pyramid::Level;
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// caps the schedule length when non-zero
    pub max_steps: usize,
    /// anchors per step
    pub batch_size: usize,
    pub k_o: usize,
    pub lr_peak: f32,
    pub warmup_steps: usize,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub adam_epsilon: f32,
    pub queue_capacity: usize,
    pub mask_rate: f64,
    pub enable_cvta: bool,
    pub enable_mrtva: bool,
    pub enable_parent_child: bool,
    /// magnifications that enter bags, losses and edges
    pub levels: Vec<Level>,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            max_steps: 0,
            batch_size: 64,
            k_o: 9,
            lr_peak: 5e-5,
            warmup_steps: 1000,
            weight_decay: 0.02,
            beta1: 0.9,
            beta2: 0.98,
            adam_epsilon: 1e-8,
            queue_capacity: 256,
            mask_rate: 0.15,
            enable_cvta: true,
            enable_mrtva: true,
            enable_parent_child: true,
            levels: Level::ALL.to_vec(),
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    /// The smaller batch setting also reported for the method.
    pub fn batch32() -> Self {
        TrainConfig {
            batch_size: 32,
            ..TrainConfig::default()
        }
    }

    /// Short schedule sized for the synthetic benchmark on one CPU core.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 8,
            batch_size: 8,
            lr_peak: 3e-3,
            warmup_steps: 10,
            queue_capacity: 64,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.k_o == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument("batch_size, k_o and epochs must be >= 1".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidArgument("resolution subset is empty".into()));
        }
        if !(self.lr_peak >= 0.0) || !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::InvalidArgument("lr_peak or mask_rate out of range".into()));
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr_peak,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn includes(&self, level: Level) -> bool {
        self.levels.contains(&level)
    }

    pub fn steps_per_epoch(&self, n_anchors: usize) -> usize {
        n_anchors.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, n_anchors: usize) -> usize {
        let full = self.epochs * self.steps_per_epoch(n_anchors);
        if self.max_steps == 0 {
            full
        } else {
            full.min(self.max_steps)
        }
    }
}

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total`.
pub fn lr_schedule(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step >= total {
        return 0.0;
    }
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    let span = (total - warmup) as f64;
    let t = (step - warmup) as f64 / span;
    0.5 * peak * (1.0 + math::cos(core::f64::consts::PI * t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f32,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
}

/// Everything needed to continue training exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt: OptState,
    pub queue_v: FeatureQueue,
    pub queue_w: FeatureQueue,
    /// completed optimizer steps
    pub step: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig) -> Result<TrainState> {
        cfg.validate()?;
        let params = ModelParams::init(cfg.model, cfg.seed)?;
        let opt = OptState::new(&params.tensors, cfg.hyper());
        Ok(TrainState {
            params,
            opt,
            queue_v: FeatureQueue::new(cfg.queue_capacity, cfg.model.d),
            queue_w: FeatureQueue::new(cfg.queue_capacity, cfg.model.d),
            step: 0,
        })
    }
}

/// Anchor indices of global step `step`.
pub fn batch_indices(cfg: &TrainConfig, n_anchors: usize, step: u64) -> Vec<usize> {
    let per = cfg.steps_per_epoch(n_anchors) as u64;
    let (epoch, b) = (step / per, (step % per) as usize);
    let mut order: Vec<usize> = (0..n_anchors).collect();
    order.shuffle(&mut rng::stream(cfg.seed, "order", epoch));
    let end = ((b + 1) * cfg.batch_size).min(n_anchors);
    order[b * cfg.batch_size..end].to_vec()
}

/// Members of one anchor that enter training, with their tokens.
struct AnchorView<'a> {
    data: &'a AnchorData,
    /// tree member index per included row
    members: Vec<usize>,
    /// deduplicated keywords over included captions
    keywords: Vec<usize>,
}

fn view<'a>(a: &'a AnchorData, cfg: &TrainConfig) -> Option<AnchorView<'a>> {
    let members: Vec<usize> = (0..a.tree.members.len())
        .filter(|&m| cfg.includes(a.tree.members[m].level))
        .collect();
    let caps: Vec<Vec<usize>> = members.iter().map(|&m| a.captions[m].clone()).collect();
    let bag = make_text_bag(a.tree.anchor, &caps).ok()?;
    Some(AnchorView {
        data: a,
        members,
        keywords: bag.keywords,
    })
}

/// Values to enqueue once the step's update is applied.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueuePush {
    pub v: Vec<Vec<f32>>,
    pub w: Vec<Vec<f32>>,
}

fn pad_slots(seqs: Vec<Vec<Slot>>) -> Vec<Vec<Slot>> {
    let l = seqs.iter().map(|s| s.len()).max().unwrap_or(1).max(1);
    seqs.into_iter()
        .map(|mut s| {
            s.resize(l, Slot::Pad);
            s
        })
        .collect()
}

fn rows_of(tokens: &[usize]) -> Vec<Slot> {
    tokens.iter().map(|&t| Slot::Row(t)).collect()
}

/// The full objective for one batch of anchors under bound parameters.
/// `step` selects the random stream; queues are read, not written.
pub fn batch_loss(
    g: &mut Graph,
    p: &Bound,
    cfg: &TrainConfig,
    anchors: &[&AnchorData],
    queues: (&FeatureQueue, &FeatureQueue),
    step: u64,
) -> Result<(Var, LossBreakdown, QueuePush)> {
    let views: Vec<AnchorView<'_>> = anchors.iter().filter_map(|a| view(a, cfg)).collect();
    if views.is_empty() {
        return Err(Error::Empty("batch anchors with keywords"));
    }
    let mut r = rng::stream(cfg.seed, "step", step);
    let table = model::text_table(g, p)?;

    // encoder over every included member of every anchor
    let mut x = Vec::new();
    let mut offsets = Vec::with_capacity(views.len());
    let mut n = 0usize;
    for v in &views {
        offsets.push(n);
        for &m in &v.members {
            x.extend_from_slice(v.data.inputs.row(m));
        }
        n += v.members.len();
    }
    let input = cfg.model.input;
    let xv = g.constant(Tensor::new(&[n, input], x)?);
    let vis = model::vision_encode(g, p, xv)?;
    let tau = model::tau(g, p);

    let mut terms = LossTerms::default();

    // positives: top-k_o bag keywords per patch, chosen on current values
    let mut positives = Vec::with_capacity(views.len());
    let mut cvta_sum: Option<Var> = None;
    for (i, v) in views.iter().enumerate() {
        let rows: Vec<usize> = (offsets[i]..offsets[i] + v.members.len()).collect();
        let va = g.gather_rows(vis, &rows)?;
        let ta = g.gather_rows(table, &v.keywords)?;
        let pos = select_topk_positive(g.value(va), g.value(ta), cfg.k_o)?;
        if cfg.enable_cvta {
            let l = cvta_loss(g, va, ta, &pos, tau)?;
            cvta_sum = Some(match cvta_sum {
                None => l,
                Some(s) => g.add(s, l)?,
            });
        }
        positives.push(pos);
    }
    if let Some(s) = cvta_sum {
        terms.cvta = Some(g.scale(s, 1.0 / views.len() as f32));
    }

    if cfg.enable_mrtva {
        let mut edges = Vec::new();
        for (i, v) in views.iter().enumerate() {
            let mut row_of = vec![usize::MAX; v.data.tree.members.len()];
            for (j, &m) in v.members.iter().enumerate() {
                row_of[m] = offsets[i] + j;
            }
            for (pm, cm) in mrtva_edges(&v.data.tree, &cfg.levels, cfg.enable_parent_child) {
                edges.push((row_of[pm], row_of[cm]));
            }
        }
        if !edges.is_empty() {
            let mut slots = Vec::with_capacity(n);
            for (i, v) in views.iter().enumerate() {
                for row in &positives[i].rows {
                    let mut s: Vec<Slot> = row.iter().map(|&b| Slot::Row(v.keywords[b])).collect();
                    s.resize(cfg.k_o, Slot::Pad);
                    slots.push(s);
                }
            }
            let fused = model::fuse(g, p, vis, table, &slots)?;
            let (gj, h) = model::project_predict(g, p, fused.z)?;
            terms.mrtva = Some(mrtva_symmetric(g, gj, h, &edges)?);
        }
    }

    // baseline objectives on one captioned patch per included level and anchor
    let mut sel_rows = Vec::new();
    let mut sel_anchor = Vec::new();
    let mut sel_caps: Vec<&[usize]> = Vec::new();
    for (i, v) in views.iter().enumerate() {
        for &level in &cfg.levels {
            let cands: Vec<usize> = (0..v.members.len())
                .filter(|&j| {
                    let m = v.members[j];
                    v.data.tree.members[m].level == level && !v.data.captions[m].is_empty()
                })
                .collect();
            if cands.is_empty() {
                continue;
            }
            let j = cands[r.gen_range(0..cands.len())];
            sel_rows.push(offsets[i] + j);
            sel_anchor.push(i);
            sel_caps.push(&v.data.captions[v.members[j]]);
        }
    }
    let s = sel_rows.len();
    let vs = g.gather_rows(vis, &sel_rows)?;

    // image-text contrast on projected, normalized features
    let vocab = p.vocab;
    let mut avg = vec![0.0f32; s * vocab];
    for (k, cap) in sel_caps.iter().enumerate() {
        for &t in cap.iter() {
            avg[k * vocab + t] += 1.0 / cap.len() as f32;
        }
    }
    let avg = g.constant(Tensor::new(&[s, vocab], avg)?);
    let ws = g.matmul(avg, table)?;
    let vp = g.matmul(vs, p.itc_v)?;
    let vp = g.l2_normalize(vp, NORM_EPS);
    let wp = g.matmul(ws, p.itc_w)?;
    let wp = g.l2_normalize(wp, NORM_EPS);
    terms.itc = Some(itc_loss(g, vp, wp, queues.0, queues.1, tau)?);
    let push = QueuePush {
        v: (0..s).map(|k| g.value(vp).row(k).to_vec()).collect(),
        w: (0..s).map(|k| g.value(wp).row(k).to_vec()).collect(),
    };

    // one fusion pass for matching, masked and prefix sequences
    let mut seqs: Vec<Vec<Slot>> = Vec::new();
    let mut seq_rows: Vec<usize> = Vec::new();
    for k in 0..s {
        seqs.push(rows_of(sel_caps[k]));
        seq_rows.push(k);
    }
    let mut itm_labels = vec![1usize; s];
    let n_neg = if views.len() > 1 {
        for k in 0..s {
            let others: Vec<usize> = (0..s).filter(|&o| sel_anchor[o] != sel_anchor[k]).collect();
            let o = others[r.gen_range(0..others.len())];
            seqs.push(rows_of(sel_caps[o]));
            seq_rows.push(k);
            itm_labels.push(0);
        }
        s
    } else {
        0
    };
    let mlm_start = seqs.len();
    let mut masked = Vec::new();
    let mut targets = Vec::new();
    for k in 0..s {
        let cap = sel_caps[k];
        let pos = mask_positions(cap.len(), cfg.mask_rate, &mut r)?;
        let mut seq = rows_of(cap);
        for &q in &pos {
            seq[q] = Slot::Mask;
            masked.push((seqs.len() - mlm_start, q));
            targets.push(cap[q]);
        }
        seqs.push(seq);
        seq_rows.push(k);
    }
    let plm_start = seqs.len();
    let mut items = Vec::new();
    for k in 0..s {
        let cap = sel_caps[k];
        if let Some(prefix) = draw_prefix(cap.len(), &mut r) {
            seqs.push(rows_of(&cap[..prefix]));
            seq_rows.push(k);
            items.push(PlmItem {
                tokens: cap.to_vec(),
                prefix,
            });
        }
    }
    let total = seqs.len();
    let seqs = pad_slots(seqs);
    let vseq = g.gather_rows(vs, &seq_rows)?;
    let fused = model::fuse(g, p, vseq, table, &seqs)?;

    if n_neg > 0 {
        let z = g.slice(fused.z, 0, 0, 2 * s)?;
        let logits = g.linear(z, p.itm_w, p.itm_b)?;
        terms.itm = Some(itm_loss(g, logits, &itm_labels)?);
    }
    let st = g.slice(fused.states, 0, mlm_start, s)?;
    terms.mlm = Some(mlm_loss(g, p, st, &masked, &targets)?);
    if !items.is_empty() {
        let zp = g.slice(fused.z, 0, plm_start, total - plm_start)?;
        terms.plm = plm_loss(g, p, zp, table, &items)?;
    }
    let (loss, br) = total_loss(g, &terms)?;
    Ok((loss, br, push))
}

/// One optimizer step on the batch of `state.step`.
pub fn train_step(cfg: &TrainConfig, data: &Dataset, state: &mut TrainState) -> Result<StepRecord> {
    let n = data.anchors.len();
    if n == 0 {
        return Err(Error::Empty("training anchors"));
    }
    let step = state.step;
    let idx = batch_indices(cfg, n, step);
    let anchors: Vec<&AnchorData> = idx.iter().map(|&i| &data.anchors[i]).collect();
    let mut g = Graph::new();
    let bound = state.params.bind(&mut g, true);
    let (loss, br, push) = batch_loss(&mut g, &bound, cfg, &anchors, (&state.queue_v, &state.queue_w), step)?;
    if !br.all_finite() {
        return Err(Error::NonFinite {
            step,
            detail: alloc::format!("{br:?}"),
        });
    }
    let grads = g.backward(loss)?;
    let gt: Vec<Tensor> = bound.vars.iter().map(|&v| grads.wrt(v)).collect();
    let lr = lr_schedule(step as usize, cfg.lr_peak as f64, cfg.warmup_steps, cfg.total_steps(n)) as f32;
    adamw_step(&mut state.params.tensors, &gt, &mut state.opt, lr)?;
    if !state.params.all_finite() {
        return Err(Error::NonFinite {
            step,
            detail: "parameters after update".into(),
        });
    }
    for v in &push.v {
        state.queue_v.push(v)?;
    }
    for w in &push.w {
        state.queue_w.push(w)?;
    }
    state.step += 1;
    Ok(StepRecord { step, lr, loss: br })
}

/// Runs steps until `until` (or the end of the schedule), calling `on_step`
/// after each.
pub fn train_until(
    cfg: &TrainConfig,
    data: &Dataset,
    state: &mut TrainState,
    until: u64,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<RunLog> {
    let total = cfg.total_steps(data.anchors.len()) as u64;
    let mut log = RunLog::default();
    while state.step < until.min(total) {
        let rec = train_step(cfg, data, state)?;
        on_step(&rec);
        log.records.push(rec);
    }
    Ok(log)
}

/// Full schedule from a fresh state.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<(TrainState, RunLog)> {
    if data.anchors.is_empty() {
        return Err(Error::Empty("training anchors"));
    }
    let mut state = TrainState::new(cfg)?;
    let log = train_until(cfg, data, &mut state, u64::MAX, |_| {})?;
    Ok((state, log))
}
