//! Alignment losses (positive-keyword contrast, parent-child text-guided
//! alignment) and the four baseline pre-training objectives.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::autodiff::{cosine_similarity, l2_normalize, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::Bound;
use crate::pyramid::{AnchorTree, Level};
use crate::rng::Rng;

pub const NORM_EPS: f32 = 1e-12;

/// Top-`k_o` keyword indices per visual row, by cosine, ties to the lower
/// index. Rows hold `min(k_o, k)` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PositiveSet {
    pub rows: Vec<Vec<usize>>,
}

impl PositiveSet {
    pub fn per_row(&self) -> usize {
        self.rows.first().map_or(0, |r| r.len())
    }
}

/// Indices of the `k` largest `scores`, descending, ties to the lower index.
pub fn top_k(scores: &[f32], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

pub fn select_topk_positive(v: &Tensor, t: &Tensor, k_o: usize) -> Result<PositiveSet> {
    if t.rank() != 2 || t.rows() == 0 {
        return Err(Error::Empty("keyword matrix"));
    }
    if k_o == 0 {
        return Err(Error::InvalidArgument("k_o must be >= 1".into()));
    }
    if v.last_dim() != t.last_dim() {
        return Err(Error::ShapeMismatch {
            op: "select_topk_positive",
            lhs: v.shape().to_vec(),
            rhs: t.shape().to_vec(),
        });
    }
    let k = t.rows();
    let tn: Vec<Vec<f32>> = (0..k).map(|b| l2_normalize(t.row(b), NORM_EPS)).collect();
    let mut rows = Vec::with_capacity(v.rows());
    for a in 0..v.rows() {
        let vn = l2_normalize(v.row(a), NORM_EPS);
        let sims: Vec<f32> = tn
            .iter()
            .map(|w| vn.iter().zip(w).map(|(&x, &y)| x as f64 * y as f64).sum::<f64>() as f32)
            .collect();
        rows.push(top_k(&sims, k_o.min(k)));
    }
    Ok(PositiveSet { rows })
}

fn check_tau(g: &Graph, tau: Var) -> Result<()> {
    let t = g.value(tau);
    if t.numel() != 1 || !(t.item() > 0.0) {
        return Err(Error::Domain {
            op: "temperature",
            detail: alloc::format!("tau must be a positive scalar, got {:?}", t.data()),
        });
    }
    Ok(())
}

/// `-(1/v_o) sum_a (1/k_o) sum_{b+} log softmax_b(cos(v_a, w_b) / tau)`.
pub fn cvta_loss(g: &mut Graph, v: Var, t: Var, positives: &PositiveSet, tau: Var) -> Result<Var> {
    check_tau(g, tau)?;
    let n = g.shape(v)[0];
    let k = g.shape(t)[0];
    if positives.rows.len() != n || positives.per_row() == 0 {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} positive rows for {n} visual rows",
            positives.rows.len()
        )));
    }
    let m = positives.per_row();
    let mut rep = Vec::with_capacity(n * m);
    let mut cols = Vec::with_capacity(n * m);
    for (a, row) in positives.rows.iter().enumerate() {
        if row.len() != m || row.iter().any(|&b| b >= k) {
            return Err(Error::InvalidArgument(alloc::format!("bad positive row {a}")));
        }
        for &b in row {
            rep.push(a);
            cols.push(b);
        }
    }
    let vn = g.l2_normalize(v, NORM_EPS);
    let tn = g.l2_normalize(t, NORM_EPS);
    let tt = g.transpose(tn)?;
    let s = g.matmul(vn, tt)?;
    let logits = g.div(s, tau)?;
    let lsm = g.log_softmax(logits);
    let rows = g.gather_rows(lsm, &rep)?;
    let picked = g.pick_last(rows, &cols)?;
    let mean = g.mean(picked);
    Ok(g.neg(mean))
}

/// `-cos(h_p, g_c)` for two vectors; 0 when either norm vanishes.
pub fn mrtva_pair(g: &mut Graph, h_p: Var, g_c: Var) -> Result<Var> {
    let c = g.cosine_similarity(h_p, g_c, NORM_EPS)?;
    Ok(g.neg(c))
}

/// Patch pairs aligned by the parent-child loss, as member indices within
/// one anchor. Levels outside `levels` are skipped: each included level is
/// paired with the next coarser included one. With `hierarchy`, a patch
/// pairs with its ancestor only; without it, with every patch of that
/// coarser level.
pub fn mrtva_edges(tree: &AnchorTree, levels: &[Level], hierarchy: bool) -> Vec<(usize, usize)> {
    let mut inc: Vec<Level> = levels.to_vec();
    inc.sort();
    inc.dedup();
    let mut out = Vec::new();
    for w in inc.windows(2) {
        let (pl, cl) = (w[0], w[1]);
        for c in tree.level_members(cl) {
            if hierarchy {
                let mut p = c;
                while tree.members[p].level != pl {
                    p = match tree.parent[p] {
                        Some(q) => q,
                        None => break,
                    };
                }
                out.push((p, c));
            } else {
                for p in tree.level_members(pl) {
                    out.push((p, c));
                }
            }
        }
    }
    out
}

/// Symmetric parent-child alignment averaged over `edges`:
/// `1/2 [-cos(h_p, sg(g_c)) - cos(g_p, sg(h_c))]`.
pub fn mrtva_symmetric(g: &mut Graph, gj: Var, h: Var, edges: &[(usize, usize)]) -> Result<Var> {
    if edges.is_empty() {
        return Err(Error::Empty("parent-child edges"));
    }
    let n = g.shape(gj)[0];
    if g.shape(h)[0] != n || edges.iter().any(|&(p, c)| p >= n || c >= n) {
        return Err(Error::InvalidArgument(alloc::format!(
            "edges reference rows outside {n} representations"
        )));
    }
    let ps: Vec<usize> = edges.iter().map(|e| e.0).collect();
    let cs: Vec<usize> = edges.iter().map(|e| e.1).collect();
    let g_sg = g.stop_gradient(gj);
    let h_sg = g.stop_gradient(h);
    let hp = g.gather_rows(h, &ps)?;
    let gc = g.gather_rows(g_sg, &cs)?;
    let gp = g.gather_rows(gj, &ps)?;
    let hc = g.gather_rows(h_sg, &cs)?;
    let c1 = g.row_cosine(hp, gc, NORM_EPS)?;
    let c2 = g.row_cosine(gp, hc, NORM_EPS)?;
    let s = g.add(c1, c2)?;
    let m = g.mean(s);
    Ok(g.scale(m, -0.5))
}

/// Fixed-capacity FIFO of unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureQueue {
    pub capacity: usize,
    pub dim: usize,
    items: VecDeque<Vec<f32>>,
}

impl FeatureQueue {
    pub fn new(capacity: usize, dim: usize) -> Self {
        FeatureQueue {
            capacity,
            dim,
            items: VecDeque::with_capacity(capacity),
        }
    }

    /// Rebuilds a queue from stored entries, oldest first, as saved.
    pub fn restore(capacity: usize, dim: usize, items: Vec<Vec<f32>>) -> Result<Self> {
        if items.len() > capacity {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} queue entries exceed capacity {capacity}",
                items.len()
            )));
        }
        if items.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidArgument("queue entry width differs from dim".into()));
        }
        Ok(FeatureQueue {
            capacity,
            dim,
            items: items.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Normalizes and enqueues `v`, evicting the oldest entry when full.
    pub fn push(&mut self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "queue push",
                lhs: vec![self.dim],
                rhs: vec![v.len()],
            });
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(l2_normalize(v, NORM_EPS));
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.items.iter().map(|v| v.as_slice())
    }

    /// Contents oldest-first as a `[len, dim]` tensor.
    pub fn tensor(&self) -> Option<Tensor> {
        if self.items.is_empty() {
            return None;
        }
        let data: Vec<f32> = self.items.iter().flatten().copied().collect();
        Tensor::new(&[self.items.len(), self.dim], data).ok()
    }
}

fn contrast_rows(g: &mut Graph, q: Var, keys: Var, queue: &FeatureQueue, tau: Var) -> Result<Var> {
    let n = g.shape(q)[0];
    let all = match queue.tensor() {
        Some(t) => {
            let qv = g.constant(t);
            g.concat(&[keys, qv], 0)?
        }
        None => keys,
    };
    let at = g.transpose(all)?;
    let s = g.matmul(q, at)?;
    let logits = g.div(s, tau)?;
    let lsm = g.log_softmax(logits);
    let diag: Vec<usize> = (0..n).collect();
    let picked = g.pick_last(lsm, &diag)?;
    let m = g.mean(picked);
    Ok(g.neg(m))
}

/// `1/2 (L_i2t + L_t2i)` over unit-norm projections `[B, d]`; negatives are
/// the rest of the batch plus the other modality's queue.
pub fn itc_loss(
    g: &mut Graph,
    v: Var,
    w: Var,
    queue_v: &FeatureQueue,
    queue_w: &FeatureQueue,
    tau: Var,
) -> Result<Var> {
    check_tau(g, tau)?;
    if g.shape(v) != g.shape(w) {
        return Err(Error::ShapeMismatch {
            op: "itc",
            lhs: g.shape(v).to_vec(),
            rhs: g.shape(w).to_vec(),
        });
    }
    let i2t = contrast_rows(g, v, w, queue_w, tau)?;
    let t2i = contrast_rows(g, w, v, queue_v, tau)?;
    let s = g.add(i2t, t2i)?;
    Ok(g.scale(s, 0.5))
}

/// Mean cross-entropy of rows of `logits` against `labels`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    if labels.is_empty() {
        return Err(Error::Empty("cross-entropy targets"));
    }
    let lsm = g.log_softmax(logits);
    let picked = g.pick_last(lsm, labels)?;
    let m = g.mean(picked);
    Ok(g.neg(m))
}

/// Matching loss over 2-way logits; label 1 = paired, 0 = not paired.
pub fn itm_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    if !labels.contains(&1) || !labels.contains(&0) {
        return Err(Error::InvalidArgument(
            "matching needs at least one positive and one negative pair".into(),
        ));
    }
    cross_entropy(g, logits, labels)
}

/// `ceil(rate * n)` distinct positions of an `n`-token sequence.
pub fn mask_positions(n: usize, rate: f64, rng: &mut Rng) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Empty("masked sequence"));
    }
    let m = (libm::ceil(rate * n as f64) as usize).clamp(1, n);
    let mut pos = sample(rng, n, m).into_vec();
    pos.sort_unstable();
    Ok(pos)
}

/// Cross-entropy at masked keyword slots. `states` is the fusion output
/// `[S, 1 + L, d]`; `masked` lists `(sequence, slot)` with slot counted
/// from 0 over keyword positions.
pub fn mlm_loss(g: &mut Graph, p: &Bound, states: Var, masked: &[(usize, usize)], targets: &[usize]) -> Result<Var> {
    if masked.is_empty() || masked.len() != targets.len() {
        return Err(Error::Empty("masked positions"));
    }
    let s = g.shape(states).to_vec();
    let (n, t, d) = (s[0], s[1], s[2]);
    let flat = g.reshape(states, &[n * t, d])?;
    let rows: Vec<usize> = masked.iter().map(|&(i, j)| i * t + 1 + j).collect();
    let x = g.gather_rows(flat, &rows)?;
    let logits = g.linear(x, p.mlm_w, p.mlm_b)?;
    cross_entropy(g, logits, targets)
}

/// One prefix-LM sequence: `tokens` with the first `prefix` given.
#[derive(Debug, Clone, PartialEq)]
pub struct PlmItem {
    pub tokens: Vec<usize>,
    pub prefix: usize,
}

/// Prefix length drawn uniformly from `[1, L - 1]`; `None` when `L < 2`.
pub fn draw_prefix(len: usize, rng: &mut Rng) -> Option<usize> {
    use rand::Rng as _;
    if len < 2 {
        return None;
    }
    Some(rng.gen_range(1..len))
}

/// Teacher-forced next-token loss at positions `prefix..L` given the
/// prefix state (image fused with the prefix) in `prefix_state: [S, d]`.
/// The decoder input is `[prefix_state, e(t_0) .. e(t_{L-2})]`; position `j`
/// predicts `t_j`. Returns `None` when every item is too short.
pub fn plm_loss(
    g: &mut Graph,
    p: &Bound,
    prefix_state: Var,
    token_features: Var,
    items: &[PlmItem],
) -> Result<Option<Var>> {
    let n = items.len();
    if n == 0 || g.shape(prefix_state)[0] != n {
        return Err(Error::InvalidArgument("plm items and prefix states differ".into()));
    }
    let live: Vec<usize> = (0..n).filter(|&i| items[i].tokens.len() >= 2).collect();
    if live.is_empty() {
        return Ok(None);
    }
    for &i in &live {
        let it = &items[i];
        if it.prefix == 0 || it.prefix >= it.tokens.len() {
            return Err(Error::OutOfRange(alloc::format!(
                "prefix {} for length {}",
                it.prefix,
                it.tokens.len()
            )));
        }
    }
    let d = p.d;
    let m = live.iter().map(|&i| items[i].tokens.len() - 1).max().unwrap_or(1);
    let vocab_rows = g.shape(token_features)[0];
    let pad = g.reshape(p.pad, &[1, d])?;
    let table = g.concat(&[token_features, pad], 0)?;
    let mut idx = Vec::with_capacity(live.len() * m);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (si, &i) in live.iter().enumerate() {
        let it = &items[i];
        let l = it.tokens.len();
        for j in 0..m {
            idx.push(if j + 1 < l { it.tokens[j] } else { vocab_rows });
        }
        for t in it.prefix..l {
            rows.push(si * (m + 1) + t);
            targets.push(it.tokens[t]);
        }
    }
    let x = g.gather_rows(table, &idx)?;
    let x = g.reshape(x, &[live.len(), m, d])?;
    let pre = if live.len() == n {
        prefix_state
    } else {
        g.gather_rows(prefix_state, &live)?
    };
    let logits = crate::model::plm_decode(g, p, pre, x)?;
    let flat = g.reshape(logits, &[live.len() * (m + 1), p.vocab])?;
    let sel = g.gather_rows(flat, &rows)?;
    Ok(Some(cross_entropy(g, sel, &targets)?))
}

/// Which terms enter the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossFlags {
    pub cvta: bool,
    pub mrtva: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        LossFlags {
            cvta: true,
            mrtva: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub cvta: f32,
    pub mrtva: f32,
    pub itc: f32,
    pub itm: f32,
    pub mlm: f32,
    pub plm: f32,
    pub bl: f32,
    pub total: f32,
}

impl LossBreakdown {
    pub fn all_finite(&self) -> bool {
        [
            self.cvta, self.mrtva, self.itc, self.itm, self.mlm, self.plm, self.bl, self.total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Graph handles of the individual terms; `None` for a disabled or
/// skipped term.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub cvta: Option<Var>,
    pub mrtva: Option<Var>,
    pub itc: Option<Var>,
    pub itm: Option<Var>,
    pub mlm: Option<Var>,
    pub plm: Option<Var>,
}

/// `bl = itc + itm + mlm + plm`, `total = bl + cvta + mrtva`, summed in
/// that order. Disabled terms are reported as exactly 0.
pub fn total_loss(g: &mut Graph, terms: &LossTerms) -> Result<(Var, LossBreakdown)> {
    let val = |g: &Graph, v: Option<Var>| v.map_or(0.0, |v| g.value(v).item());
    let mut bl: Option<Var> = None;
    for t in [terms.itc, terms.itm, terms.mlm, terms.plm].into_iter().flatten() {
        bl = Some(match bl {
            None => t,
            Some(b) => g.add(b, t)?,
        });
    }
    let mut total = bl;
    for t in [terms.cvta, terms.mrtva].into_iter().flatten() {
        total = Some(match total {
            None => t,
            Some(b) => g.add(b, t)?,
        });
    }
    let total = match total {
        Some(t) => t,
        None => g.constant(Tensor::scalar(0.0)),
    };
    let br = LossBreakdown {
        cvta: val(g, terms.cvta),
        mrtva: val(g, terms.mrtva),
        itc: val(g, terms.itc),
        itm: val(g, terms.itm),
        mlm: val(g, terms.mlm),
        plm: val(g, terms.plm),
        bl: val(g, bl),
        total: g.value(total).item(),
    };
    Ok((total, br))
}

/// Cosine-based convenience used by evaluation and tests.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f32> {
    cosine_similarity(a, b, NORM_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelParams};
    use crate::pyramid::{expand_children, PatchId};
    use crate::rng;

    fn mat(g: &mut Graph, rows: usize, cols: usize, seed: u64) -> Var {
        let mut r = rng::stream(seed, "loss-test", 0);
        let data = (0..rows * cols).map(|_| rng::normal(&mut r)).collect();
        g.param(Tensor::matrix(rows, cols, data).unwrap())
    }

    #[test]
    fn cvta_single_keyword_is_zero() {
        let mut g = Graph::new();
        let v = mat(&mut g, 3, 4, 1);
        let t = mat(&mut g, 1, 4, 2);
        let tau = g.constant(Tensor::scalar(0.07));
        let pos = select_topk_positive(g.value(v), g.value(t), 1).unwrap();
        let l = cvta_loss(&mut g, v, t, &pos, tau).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn cvta_rejects_bad_tau() {
        let mut g = Graph::new();
        let v = mat(&mut g, 2, 4, 1);
        let t = mat(&mut g, 3, 4, 2);
        let tau = g.constant(Tensor::scalar(0.0));
        let pos = select_topk_positive(g.value(v), g.value(t), 2).unwrap();
        assert!(cvta_loss(&mut g, v, t, &pos, tau).is_err());
    }

    #[test]
    fn topk_ties_go_low() {
        assert_eq!(top_k(&[0.5, 0.9, 0.9, 0.1], 3), alloc::vec![1, 2, 0]);
        assert_eq!(top_k(&[1.0, 1.0], 5), alloc::vec![0, 1]);
    }

    #[test]
    fn mrtva_edge_counts() {
        let tree = expand_children(PatchId::anchor(0, 0), (0, 0)).unwrap();
        assert_eq!(mrtva_edges(&tree, &Level::ALL, true).len(), 84);
        assert_eq!(mrtva_edges(&tree, &Level::ALL, false).len(), 4 + 64 + 1024);
        let sub = mrtva_edges(&tree, &[Level::X10, Level::X40], true);
        assert_eq!(sub.len(), 64);
        for (p, c) in sub {
            assert_eq!(tree.members[p].level, Level::X10);
            assert_eq!(tree.members[c].level, Level::X40);
        }
    }

    #[test]
    fn mrtva_equal_reps_is_minus_one() {
        let mut g = Graph::new();
        let row = [0.3f32, -1.0, 2.0];
        let data: Vec<f32> = (0..5).flat_map(|_| row).collect();
        let gj = g.param(Tensor::matrix(5, 3, data.clone()).unwrap());
        let h = g.param(Tensor::matrix(5, 3, data).unwrap());
        let l = mrtva_symmetric(&mut g, gj, h, &[(0, 1), (0, 2), (1, 3), (1, 4)]).unwrap();
        assert!((g.value(l).item() + 1.0).abs() < 1e-6);
    }

    #[test]
    fn itc_batch_one_empty_queue_is_zero() {
        let mut g = Graph::new();
        let v = mat(&mut g, 1, 4, 3);
        let w = mat(&mut g, 1, 4, 4);
        let v = g.l2_normalize(v, NORM_EPS);
        let w = g.l2_normalize(w, NORM_EPS);
        let tau = g.constant(Tensor::scalar(0.07));
        let q = FeatureQueue::new(8, 4);
        let l = itc_loss(&mut g, v, w, &q, &q, tau).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn queue_is_fifo_and_unit_norm() {
        let mut q = FeatureQueue::new(2, 2);
        q.push(&[3.0, 4.0]).unwrap();
        q.push(&[0.0, 2.0]).unwrap();
        q.push(&[5.0, 0.0]).unwrap();
        let items: Vec<&[f32]> = q.iter().collect();
        assert_eq!(items, [&[0.0, 1.0][..], &[1.0, 0.0][..]]);
        assert!(q.push(&[1.0]).is_err());
    }

    #[test]
    fn itm_equal_logits_is_ln2() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(&[4, 2]));
        let l = itm_loss(&mut g, logits, &[1, 0, 1, 0]).unwrap();
        assert!((g.value(l).item() - core::f32::consts::LN_2).abs() < 1e-6);
        assert!(itm_loss(&mut g, logits, &[1, 1, 1, 1]).is_err());
    }

    #[test]
    fn mask_counts_round_up() {
        let mut r = rng::stream(0, "mask", 0);
        for n in 1..=10 {
            let p = mask_positions(n, 0.15, &mut r).unwrap();
            assert_eq!(p.len(), libm::ceil(0.15 * n as f64) as usize);
            assert!(p.windows(2).all(|w| w[0] < w[1]) && p.iter().all(|&i| i < n));
        }
        assert!(mask_positions(0, 0.15, &mut r).is_err());
    }

    fn zero_heads() -> ModelParams {
        let mut p = ModelParams::init(ModelConfig::default(), 5).unwrap();
        for name in ["mlm.w", "mlm.b", "plm.w", "plm.b"] {
            p.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        p
    }

    #[test]
    fn uniform_mlm_head_gives_ln_vocab() {
        let p = zero_heads();
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let states = mat(&mut g, 6, 32, 9);
        let states = g.reshape(states, &[2, 3, 32]).unwrap();
        let l = mlm_loss(&mut g, &b, states, &[(0, 1), (1, 0)], &[5, 7]).unwrap();
        assert!((g.value(l).item() - libm::logf(64.0)).abs() < 1e-5);
    }

    #[test]
    fn uniform_decoder_gives_ln_vocab() {
        let p = zero_heads();
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let pre = mat(&mut g, 2, 32, 9);
        let table = crate::model::text_table(&mut g, &b).unwrap();
        let items = [
            PlmItem {
                tokens: alloc::vec![1, 2, 3, 4],
                prefix: 2,
            },
            PlmItem {
                tokens: alloc::vec![9, 8],
                prefix: 1,
            },
        ];
        let l = plm_loss(&mut g, &b, pre, table, &items).unwrap().unwrap();
        assert!((g.value(l).item() - libm::logf(64.0)).abs() < 1e-5);
        let short = [PlmItem {
            tokens: alloc::vec![1],
            prefix: 0,
        }];
        let pre1 = mat(&mut g, 1, 32, 2);
        assert!(plm_loss(&mut g, &b, pre1, table, &short).unwrap().is_none());
    }

    #[test]
    fn disabled_terms_leave_bl() {
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(1.5));
        let b = g.param(Tensor::scalar(0.25));
        let terms = LossTerms {
            itc: Some(a),
            mlm: Some(b),
            ..LossTerms::default()
        };
        let (t, br) = total_loss(&mut g, &terms).unwrap();
        assert_eq!(g.value(t).item(), 1.75);
        assert_eq!((br.bl, br.total, br.cvta, br.mrtva), (1.75, 1.75, 0.0, 0.0));
    }
}
