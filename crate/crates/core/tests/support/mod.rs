//! Brute-force oracles and the checks behind the acceptance criteria.
//! Shared by the core integration tests and the workspace acceptance
//! target, which includes this file by path.
#![allow(dead_code, clippy::needless_range_loop)]

use hieralign_core::autodiff::gradcheck::{check, relative_error, EPSILON, TOLERANCE};
use hieralign_core::autodiff::{Graph, Tensor, Var};
use hieralign_core::eval::{balanced_accuracy, classify_wsi, weighted_f1, Confusion};
use hieralign_core::losses::{
    cvta_loss, itc_loss, itm_loss, mlm_loss, mrtva_symmetric, plm_loss, select_topk_positive, top_k, FeatureQueue,
    PlmItem, PositiveSet,
};
use hieralign_core::model::{ModelConfig, ModelParams};
use hieralign_core::pyramid::{
    expand_children, otsu_threshold, sample_anchors, tissue_mask_from_5x, AnchorTree, Level, PatchId, Raster,
};
use hieralign_core::rng::{self, Rng};
use rand::Rng as _;

pub struct Outcome {
    pub passed: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(passed: bool, detail: impl Into<String>) -> Outcome {
        Outcome {
            passed,
            detail: detail.into(),
        }
    }
}

pub fn stream(seed: u64, name: &str) -> Rng {
    rng::stream(seed, name, 0)
}

pub fn randn(r: &mut Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng::normal(r)).collect()
}

pub fn randm(r: &mut Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, randn(r, rows * cols)).unwrap()
}

fn rows64(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|i| t.row(i).iter().map(|&x| x as f64).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// scalar f64 reference implementations

pub fn norm(x: &[f64]) -> Vec<f64> {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < 1e-12 {
        vec![0.0; x.len()]
    } else {
        x.iter().map(|v| v / n).collect()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    dot(&norm(a), &norm(b))
}

pub fn log_softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|v| (v - m).exp()).sum();
    x.iter().map(|v| v - m - z.ln()).collect()
}

/// Indices of the `k` largest values by repeated extraction of the
/// maximum, lowest index first among equals.
pub fn brute_topk(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    let mut out = Vec::new();
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| scores[i] > scores[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        out.push(b);
    }
    out
}

/// Returns the loss and the positive sets it used.
pub fn cvta_oracle(v: &[Vec<f64>], t: &[Vec<f64>], k_o: usize, tau: f64) -> (f64, Vec<Vec<usize>>) {
    let mut total = 0.0;
    let mut sets = Vec::new();
    for va in v {
        let sims: Vec<f64> = t.iter().map(|w| cos(va, w)).collect();
        let pos = brute_topk(&sims, k_o);
        let lsm = log_softmax(&sims.iter().map(|s| s / tau).collect::<Vec<_>>());
        total += -pos.iter().map(|&b| lsm[b]).sum::<f64>() / pos.len() as f64;
        sets.push(pos);
    }
    (total / v.len() as f64, sets)
}

pub fn mrtva_oracle(gj: &[Vec<f64>], h: &[Vec<f64>], edges: &[(usize, usize)]) -> f64 {
    let s: f64 = edges
        .iter()
        .map(|&(p, c)| cos(&h[p], &gj[c]) + cos(&gj[p], &h[c]))
        .sum();
    -0.5 * s / edges.len() as f64
}

/// Inputs are already unit rows.
pub fn itc_oracle(v: &[Vec<f64>], w: &[Vec<f64>], qv: &[Vec<f64>], qw: &[Vec<f64>], tau: f64) -> f64 {
    let side = |q: &[Vec<f64>], keys: &[Vec<f64>], extra: &[Vec<f64>]| -> f64 {
        let mut s = 0.0;
        for (i, qi) in q.iter().enumerate() {
            let logits: Vec<f64> = keys.iter().chain(extra).map(|k| dot(qi, k) / tau).collect();
            s -= log_softmax(&logits)[i];
        }
        s / q.len() as f64
    };
    0.5 * (side(v, w, qw) + side(w, v, qv))
}

pub fn ce_oracle(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    logits.iter().zip(labels).map(|(l, &y)| -log_softmax(l)[y]).sum::<f64>() / labels.len() as f64
}

fn matvec(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|j| x.iter().enumerate().map(|(i, xi)| xi * w[i * cols + j]).sum())
        .collect()
}

fn get64(p: &ModelParams, name: &str) -> Vec<f64> {
    p.get(name).unwrap().data().iter().map(|&x| x as f64).collect()
}

pub fn linear_oracle(x: &[f64], p: &ModelParams, w: &str, b: &str) -> Vec<f64> {
    let bias = get64(p, b);
    let out = matvec(x, &get64(p, w), bias.len());
    out.iter().zip(&bias).map(|(a, b)| a + b).collect()
}

/// One attention + MLP block with `allowed(q, k)` deciding which keys a
/// query sees.
pub fn block_oracle(
    x: &[Vec<f64>],
    p: &ModelParams,
    prefix: &str,
    allowed: impl Fn(usize, usize) -> bool,
) -> Vec<Vec<f64>> {
    let d = x[0].len();
    let w = |n: &str| get64(p, &format!("{prefix}.{n}"));
    let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
    let (w1, b1, w2, b2) = (w("w1"), w("b1"), w("w2"), w("b2"));
    let q: Vec<_> = x.iter().map(|r| matvec(r, &wq, d)).collect();
    let k: Vec<_> = x.iter().map(|r| matvec(r, &wk, d)).collect();
    let v: Vec<_> = x.iter().map(|r| matvec(r, &wv, d)).collect();
    let t = x.len();
    let scale = (d as f64).sqrt();
    (0..t)
        .map(|i| {
            let keys: Vec<usize> = (0..t).filter(|&j| allowed(i, j)).collect();
            let logits: Vec<f64> = keys.iter().map(|&j| dot(&q[i], &k[j]) / scale).collect();
            let a: Vec<f64> = log_softmax(&logits).iter().map(|l| l.exp()).collect();
            let mut mixed = vec![0.0; d];
            for (aj, &j) in a.iter().zip(&keys) {
                for c in 0..d {
                    mixed[c] += aj * v[j][c];
                }
            }
            let o = matvec(&mixed, &wo, d);
            let h1: Vec<f64> = x[i].iter().zip(&o).map(|(a, b)| a + b).collect();
            let hid: Vec<f64> = matvec(&h1, &w1, b1.len())
                .iter()
                .zip(&b1)
                .map(|(a, b)| (a + b).tanh())
                .collect();
            let m = matvec(&hid, &w2, d);
            h1.iter().zip(&m).zip(&b2).map(|((h, m), b)| h + m + b).collect()
        })
        .collect()
}

/// `states[s][pos]` rows; slot `j` of sequence `s` sits at position `1 + j`.
pub fn mlm_oracle(states: &[Vec<Vec<f64>>], p: &ModelParams, masked: &[(usize, usize)], targets: &[usize]) -> f64 {
    let logits: Vec<Vec<f64>> = masked
        .iter()
        .map(|&(s, j)| linear_oracle(&states[s][1 + j], p, "mlm.w", "mlm.b"))
        .collect();
    ce_oracle(&logits, targets)
}

/// Each sequence decoded on its own: `[prefix_state, e(t_0) .. e(t_{L-2})]`
/// under a causal mask, position `j` predicting `t_j` for `j >= prefix`.
pub fn plm_oracle(prefix: &[Vec<f64>], feats: &[Vec<f64>], items: &[PlmItem], p: &ModelParams) -> f64 {
    let mut logits = Vec::new();
    let mut targets = Vec::new();
    for (s, it) in items.iter().enumerate() {
        let l = it.tokens.len();
        if l < 2 {
            continue;
        }
        let mut x = vec![prefix[s].clone()];
        for &t in &it.tokens[..l - 1] {
            x.push(feats[t].clone());
        }
        let y = block_oracle(&x, p, "plm.block", |q, k| k <= q);
        for j in it.prefix..l {
            logits.push(linear_oracle(&y[j], p, "plm.w", "plm.b"));
            targets.push(it.tokens[j]);
        }
    }
    ce_oracle(&logits, &targets)
}

pub fn tiny_model(d: usize, vocab: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        d,
        d_proj: d,
        vocab,
        input: 16,
        vision_hidden: 8,
        fusion_blocks: 1,
        mlp_hidden: 8,
        init_tau: 0.07,
    };
    jittered(ModelParams::init(cfg, seed).unwrap(), seed)
}

/// Adds N(0, 0.1^2) to every entry so zero-initialized tensors take part.
pub fn jittered(mut p: ModelParams, seed: u64) -> ModelParams {
    let mut r = stream(seed, "jitter");
    for t in &mut p.tensors {
        for v in t.data_mut() {
            *v += 0.1 * rng::normal(&mut r);
        }
    }
    p
}

// ---------------------------------------------------------------------------
// criterion 2: loss oracles

pub const ORACLE_TOL: f64 = 1e-5;

fn tau_var(g: &mut Graph, tau: f32) -> Var {
    g.constant(Tensor::new(&[1], vec![tau]).unwrap())
}

/// Largest |implementation - oracle| per loss over `n` random tiny
/// instances, plus the CVTA single-keyword value.
pub fn loss_oracles(n: u64) -> Vec<(&'static str, f64)> {
    let mut worst = vec![
        ("cvta", 0.0f64),
        ("mrtva", 0.0),
        ("itc", 0.0),
        ("itm", 0.0),
        ("mlm", 0.0),
        ("plm", 0.0),
    ];
    let mut bump = |i: usize, a: f32, b: f64| worst[i].1 = worst[i].1.max((a as f64 - b).abs());
    for seed in 0..n {
        let mut r = stream(seed, "oracle");
        let d = r.gen_range(2..=8);
        let vo = r.gen_range(1..=8);
        let k = r.gen_range(1..=12);
        let k_o = r.gen_range(1..=4usize).min(k);
        let tau = r.gen_range(0.05f32..1.0);

        // CVTA; the oracle also picks its own positives
        let v = randm(&mut r, vo, d);
        let t = randm(&mut r, k, d);
        let (want, sets) = cvta_oracle(&rows64(&v), &rows64(&t), k_o, tau as f64);
        let pos = select_topk_positive(&v, &t, k_o).unwrap();
        assert_eq!(pos.rows, sets, "positive sets differ at seed {seed}");
        let mut g = Graph::new();
        let (vv, tv, tt) = (g.constant(v), g.constant(t), tau_var(&mut g, tau));
        let l = cvta_loss(&mut g, vv, tv, &pos, tt).unwrap();
        bump(0, g.value(l).item(), want);

        // MRTVA on a real quadtree, possibly restricted to some levels
        let tree = expand_children(PatchId::anchor(0, 0), (0, 0)).unwrap();
        let m = tree.members.len();
        let gj = randm(&mut r, m, d);
        let h = randm(&mut r, m, d);
        let mut edges = tree.edges();
        edges.retain(|_| r.gen_bool(0.5));
        if edges.is_empty() {
            edges.push((0, 1));
        }
        let want = mrtva_oracle(&rows64(&gj), &rows64(&h), &edges);
        let mut g = Graph::new();
        let (gv, hv) = (g.constant(gj), g.constant(h));
        let l = mrtva_symmetric(&mut g, gv, hv, &edges).unwrap();
        bump(1, g.value(l).item(), want);

        // ITC with queues of either modality
        let b = r.gen_range(1..=6);
        let unit = |t: Tensor| -> Tensor {
            let rows: Vec<f32> = (0..t.rows())
                .flat_map(|i| norm(&t.row(i).iter().map(|&x| x as f64).collect::<Vec<_>>()))
                .map(|x| x as f32)
                .collect();
            Tensor::matrix(t.rows(), t.last_dim(), rows).unwrap()
        };
        let vu = unit(randm(&mut r, b, d));
        let wu = unit(randm(&mut r, b, d));
        let mut qv = FeatureQueue::new(4, d);
        let mut qw = FeatureQueue::new(4, d);
        for _ in 0..r.gen_range(0..6) {
            qv.push(&randn(&mut r, d)).unwrap();
            qw.push(&randn(&mut r, d)).unwrap();
        }
        let q64 =
            |q: &FeatureQueue| -> Vec<Vec<f64>> { q.iter().map(|x| x.iter().map(|&y| y as f64).collect()).collect() };
        let want = itc_oracle(&rows64(&vu), &rows64(&wu), &q64(&qv), &q64(&qw), tau as f64);
        let mut g = Graph::new();
        let (a, bb, tt) = (g.constant(vu), g.constant(wu), tau_var(&mut g, tau));
        let l = itc_loss(&mut g, a, bb, &qv, &qw, tt).unwrap();
        bump(2, g.value(l).item(), want);

        // ITM
        let rows = r.gen_range(2..=8);
        let logits = randm(&mut r, rows, 2);
        let mut labels: Vec<usize> = (0..rows).map(|_| r.gen_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let want = ce_oracle(&rows64(&logits), &labels);
        let mut g = Graph::new();
        let lv = g.constant(logits);
        let l = itm_loss(&mut g, lv, &labels).unwrap();
        bump(3, g.value(l).item(), want);

        // MLM and PLM through the real heads of a small model
        let vocab = k.max(2);
        let p = tiny_model(d, vocab, seed);
        let (s, tl) = (r.gen_range(1..=3), r.gen_range(2..=5));
        let states: Vec<f32> = randn(&mut r, s * tl * d);
        let st3: Vec<Vec<Vec<f64>>> = (0..s)
            .map(|i| {
                (0..tl)
                    .map(|j| {
                        states[(i * tl + j) * d..(i * tl + j + 1) * d]
                            .iter()
                            .map(|&x| x as f64)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut masked = Vec::new();
        let mut targets = Vec::new();
        for i in 0..s {
            for j in 0..tl - 1 {
                if masked.is_empty() || r.gen_bool(0.4) {
                    masked.push((i, j));
                    targets.push(r.gen_range(0..vocab));
                }
            }
        }
        let want = mlm_oracle(&st3, &p, &masked, &targets);
        let mut g = Graph::new();
        let bnd = p.bind(&mut g, false);
        let sv = g.constant(Tensor::new(&[s, tl, d], states).unwrap());
        let l = mlm_loss(&mut g, &bnd, sv, &masked, &targets).unwrap();
        bump(4, g.value(l).item(), want);

        let items: Vec<PlmItem> = (0..s)
            .map(|_| {
                let len = r.gen_range(1..=5);
                let tokens: Vec<usize> = (0..len).map(|_| r.gen_range(0..vocab)).collect();
                let prefix = if len >= 2 { r.gen_range(1..len) } else { 0 };
                PlmItem { tokens, prefix }
            })
            .collect();
        if items.iter().any(|it| it.tokens.len() >= 2) {
            let pre = randm(&mut r, s, d);
            let feats = randm(&mut r, vocab, d);
            let want = plm_oracle(&rows64(&pre), &rows64(&feats), &items, &p);
            let mut g = Graph::new();
            let bnd = p.bind(&mut g, false);
            let (pv, fv) = (g.constant(pre), g.constant(feats));
            let l = plm_loss(&mut g, &bnd, pv, fv, &items).unwrap().unwrap();
            bump(5, g.value(l).item(), want);
        }
    }
    worst
}

/// CVTA with one keyword that is also the sole positive.
pub fn cvta_single_keyword(seed: u64) -> f32 {
    let mut r = stream(seed, "cvta-floor");
    let v = randm(&mut r, 5, 8);
    let t = randm(&mut r, 1, 8);
    let pos = PositiveSet { rows: vec![vec![0]; 5] };
    let mut g = Graph::new();
    let (vv, tv, tt) = (g.constant(v), g.constant(t), tau_var(&mut g, 0.07));
    let l = cvta_loss(&mut g, vv, tv, &pos, tt).unwrap();
    g.value(l).item()
}

pub fn criterion_2() -> Outcome {
    let worst = loss_oracles(200);
    let floor = (0..20).map(cvta_single_keyword).collect::<Vec<_>>();
    let ok = worst.iter().all(|(_, e)| *e <= ORACLE_TOL) && floor.iter().all(|&x| x == 0.0);
    let parts: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    Outcome::new(
        ok,
        format!(
            "200 instances, max |impl - oracle|: {} (tol {ORACLE_TOL:.0e}); cvta single keyword == 0 exactly: {}",
            parts.join(", "),
            floor.iter().all(|&x| x == 0.0)
        ),
    )
}

// ---------------------------------------------------------------------------
// criterion 1: finite-difference gradients

pub const GRAD_SEEDS: u64 = 20;
pub const GRAD_D: usize = 32;

/// Worst relative error of each loss over `seeds` seeds.
pub fn gradient_suite(seeds: u64) -> Vec<(&'static str, f32)> {
    let mut out: Vec<(&'static str, f32)> = Vec::new();
    let mut run = |name: &'static str, f: &dyn Fn(u64) -> f32| {
        let worst = (0..seeds).map(f).fold(0.0f32, f32::max);
        out.push((name, worst));
    };
    run("cvta", &grad_cvta);
    run("mrtva", &grad_mrtva);
    run("itc", &grad_itc);
    run("itm", &grad_itm);
    run("mlm", &grad_mlm);
    run("plm", &grad_plm);
    run("mrtva_pipeline", &grad_mrtva_pipeline);
    run("total", &grad_total);
    out
}

fn report(
    params: &[Tensor],
    coords: usize,
    seed: u64,
    f: impl Fn(&mut Graph, &[Var]) -> hieralign_core::Result<Var>,
) -> f32 {
    report_at(EPSILON, params, coords, seed, f)
}

fn report_at(
    eps: f32,
    params: &[Tensor],
    coords: usize,
    seed: u64,
    f: impl Fn(&mut Graph, &[Var]) -> hieralign_core::Result<Var>,
) -> f32 {
    check(params, eps, coords, seed, f).unwrap().max_rel_error
}

pub fn grad_cvta(seed: u64) -> f32 {
    let mut r = stream(seed, "grad-cvta");
    let v = randm(&mut r, 8, GRAD_D);
    let t = randm(&mut r, 12, GRAD_D);
    let pos = select_topk_positive(&v, &t, 4).unwrap();
    let tau = Tensor::new(&[1], vec![0.1]).unwrap();
    report(&[v, t, tau], 64, seed, |g, x| cvta_loss(g, x[0], x[1], &pos, x[2]))
}

/// The stop-gradient arguments are fed from a frozen copy of the inputs so
/// that central differences see the same function the gradient describes.
pub fn grad_mrtva(seed: u64) -> f32 {
    let mut r = stream(seed, "grad-mrtva");
    let tree = expand_children(PatchId::anchor(0, 0), (0, 0)).unwrap();
    let n = tree.members.len();
    let gj = randm(&mut r, n, GRAD_D);
    let h = randm(&mut r, n, GRAD_D);
    let frozen = (gj.clone(), h.clone());
    let edges: Vec<(usize, usize)> = tree.edges().into_iter().map(|(p, c)| (p, n + c)).collect();
    report(&[gj, h], 64, seed, |g, x| {
        let (fg, fh) = (g.constant(frozen.0.clone()), g.constant(frozen.1.clone()));
        let gg = g.concat(&[x[0], fg], 0)?;
        let hh = g.concat(&[x[1], fh], 0)?;
        mrtva_symmetric(g, gg, hh, &edges)
    })
}

pub fn grad_itc(seed: u64) -> f32 {
    let mut r = stream(seed, "grad-itc");
    let v = randm(&mut r, 6, GRAD_D);
    let w = randm(&mut r, 6, GRAD_D);
    let mut qv = FeatureQueue::new(8, GRAD_D);
    let mut qw = FeatureQueue::new(8, GRAD_D);
    for _ in 0..5 {
        qv.push(&randn(&mut r, GRAD_D)).unwrap();
        qw.push(&randn(&mut r, GRAD_D)).unwrap();
    }
    let tau = Tensor::new(&[1], vec![0.1]).unwrap();
    report(&[v, w, tau], 64, seed, |g, x| {
        let a = g.l2_normalize(x[0], 1e-12);
        let b = g.l2_normalize(x[1], 1e-12);
        itc_loss(g, a, b, &qv, &qw, x[2])
    })
}

pub fn grad_itm(seed: u64) -> f32 {
    let mut r = stream(seed, "grad-itm");
    let z = randm(&mut r, 6, GRAD_D);
    let w = randm(&mut r, GRAD_D, 2);
    let b = Tensor::new(&[2], randn(&mut r, 2)).unwrap();
    let labels = [1, 1, 1, 0, 0, 0];
    report(&[z, w, b], 64, seed, |g, x| {
        let l = g.linear(x[0], x[1], x[2])?;
        itm_loss(g, l, &labels)
    })
}

/// Graph leaves for the named tensors, constants for the rest.
fn bind_some(g: &mut Graph, p: &ModelParams, names: &[&str], vars: &[Var]) -> hieralign_core::model::Bound {
    let mut all: Vec<Var> = p.tensors.iter().map(|t| g.constant(t.clone())).collect();
    for (name, &v) in names.iter().zip(vars) {
        all[p.index_of(name).unwrap()] = v;
    }
    p.bound_from(all).unwrap()
}

pub fn grad_mlm(seed: u64) -> f32 {
    let mut r = stream(seed, "grad-mlm");
    let p = jittered(ModelParams::init(ModelConfig::default(), seed).unwrap(), seed);
    let states = Tensor::new(&[3, 5, GRAD_D], randn(&mut r, 3 * 5 * GRAD_D)).unwrap();
    let masked = [(0, 0), (0, 3), (1, 2), (2, 1)];
    let targets = [3, 17, 40, 5];
    let names = ["mlm.w", "mlm.b"];
    let mut params = vec![states];
    params.extend(names.iter().map(|n| p.get(n).unwrap().clone()));
    report(&params, 64, seed, |g, x| {
        let b = bind_some(g, &p, &names, &x[1..]);
        mlm_loss(g, &b, x[0], &masked, &targets)
    })
}

pub fn grad_plm(seed: u64) -> f32 {
    let mut r = stream(seed, "grad-plm");
    let p = jittered(ModelParams::init(ModelConfig::default(), seed).unwrap(), seed);
    let vocab = p.config.vocab;
    let items: Vec<PlmItem> = [(vec![1, 9, 4, 22], 1), (vec![5, 6], 1), (vec![30, 2, 2], 2)]
        .into_iter()
        .map(|(tokens, prefix)| PlmItem { tokens, prefix })
        .collect();
    let names = [
        "fus.pad",
        "plm.block.wq",
        "plm.block.wk",
        "plm.block.wv",
        "plm.block.wo",
        "plm.block.w1",
        "plm.block.b1",
        "plm.block.w2",
        "plm.block.b2",
        "plm.w",
        "plm.b",
    ];
    let mut params = vec![randm(&mut r, 3, GRAD_D), randm(&mut r, vocab, GRAD_D)];
    params.extend(names.iter().map(|n| p.get(n).unwrap().clone()));
    report(&params, 48, seed, |g, x| {
        let b = bind_some(g, &p, &names, &x[2..]);
        Ok(plm_loss(g, &b, x[0], x[1], &items)?.unwrap())
    })
}

/// Keywords available to synthetic captions. With `k_o` equal to this the
/// positive set is the whole bag, so selection cannot flip under a probe.
pub const SYNTH_KEYWORDS: usize = 6;

/// A synthetic anchor with random inputs and captions over the first
/// [`SYNTH_KEYWORDS`] tokens.
pub fn synthetic_anchor(cfg: &ModelConfig, slide: u32, r: &mut Rng) -> hieralign_core::dataset::AnchorData {
    let tree = expand_children(PatchId::anchor(slide, 0), (0, 0)).unwrap();
    let m = tree.members.len();
    let captions: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            (0..r.gen_range(1..=4))
                .map(|_| r.gen_range(0..SYNTH_KEYWORDS))
                .collect()
        })
        .collect();
    hieralign_core::dataset::AnchorData {
        slide: slide as usize,
        classes: vec![Some(0); m],
        captions,
        inputs: Tensor::new(
            &[m, cfg.input],
            (0..m * cfg.input).map(|_| r.gen_range(0.0..1.0)).collect(),
        )
        .unwrap(),
        tree,
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        input: 16,
        ..ModelConfig::default()
    }
}

/// The summed objective: every term on shared leaves, combined by
/// `total_loss`. Parent-child alignment reads its stop-gradient arguments
/// from frozen copies.
pub fn grad_total(seed: u64) -> f32 {
    grad_total_at(seed, EPSILON).0
}

pub fn total_loss_value(seed: u64) -> f32 {
    grad_total_at(seed, 0.0).1
}

/// Worst error of the summed objective at step `eps`, with the loss value.
/// A zero step skips the probes.
pub fn grad_total_at(seed: u64, eps: f32) -> (f32, f32) {
    use hieralign_core::losses::{total_loss, LossTerms};
    let mut r = stream(seed, "grad-total-terms");
    let d = GRAD_D;
    let vocab = 12;
    let p = tiny_model(d, vocab, seed);
    let tree = expand_children(PatchId::anchor(0, 0), (0, 0)).unwrap();
    let n = tree.members.len();
    let v = randm(&mut r, n, d);
    let keys = randm(&mut r, vocab, d);
    let tau = Tensor::new(&[1], vec![0.1]).unwrap();
    let head = randm(&mut r, d, 2);
    let frozen = v.clone();
    let pos = select_topk_positive(&v.clone(), &keys, 4).unwrap();
    let edges: Vec<(usize, usize)> = tree.edges().into_iter().map(|(a, c)| (a, n + c)).collect();
    let mut qv = FeatureQueue::new(8, d);
    let mut qw = FeatureQueue::new(8, d);
    for _ in 0..5 {
        qv.push(&randn(&mut r, d)).unwrap();
        qw.push(&randn(&mut r, d)).unwrap();
    }
    let items: Vec<PlmItem> = [(vec![1, 9, 4, 3], 1), (vec![5, 6], 1), (vec![10, 2, 2], 2)]
        .into_iter()
        .map(|(tokens, prefix)| PlmItem { tokens, prefix })
        .collect();
    let masked = [(0, 0), (1, 2), (2, 1)];
    let targets = [3, 7, 11];
    let names = ["mlm.w", "mlm.b", "plm.block.wq", "plm.block.w1", "plm.w", "plm.b"];
    let mut params = vec![v, keys, tau, head];
    params.extend(names.iter().map(|nm| p.get(nm).unwrap().clone()));
    let f = |g: &mut Graph, x: &[Var]| {
        let (v, keys, tau, head) = (x[0], x[1], x[2], x[3]);
        let b = bind_some(g, &p, &names, &x[4..]);
        let mut terms = LossTerms::default();
        let va = g.slice(v, 0, 0, 8)?;
        terms.cvta = Some(cvta_loss(g, v, keys, &pos, tau)?);
        // g and h as two different views of the same rows
        let h = g.tanh(v);
        let fz = g.constant(frozen.clone());
        let fh = g.tanh(fz);
        let gg = g.concat(&[v, fz], 0)?;
        let hh = g.concat(&[h, fh], 0)?;
        terms.mrtva = Some(mrtva_symmetric(g, gg, hh, &edges)?);
        let ka = g.slice(keys, 0, 0, 8)?;
        let a = g.l2_normalize(va, 1e-12);
        let kb = g.l2_normalize(ka, 1e-12);
        terms.itc = Some(itc_loss(g, a, kb, &qv, &qw, tau)?);
        let logits = g.matmul(va, head)?;
        terms.itm = Some(itm_loss(g, logits, &[1, 1, 1, 1, 0, 0, 0, 0])?);
        let st = g.slice(v, 0, 8, 15)?;
        let st = g.reshape(st, &[3, 5, d])?;
        terms.mlm = Some(mlm_loss(g, &b, st, &masked, &targets)?);
        let pre = g.slice(v, 0, 30, 3)?;
        terms.plm = plm_loss(g, &b, pre, keys, &items)?;
        Ok(total_loss(g, &terms)?.0)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
    let l = f(&mut g, &vars).unwrap();
    let value = g.value(l).item();
    if eps == 0.0 {
        return (0.0, value);
    }
    (report_at(eps, &params, 24, seed, f), value)
}

/// The training objective with every model tensor as a leaf and the
/// parent-child term off (it is checked by [`grad_mrtva_pipeline`]). Inputs
/// are 16 wide so each evaluation stays cheap; other dimensions are desk
/// size. Returns the worst error and the loss value.
pub fn grad_objective(seed: u64) -> (f32, f32) {
    use hieralign_core::trainer::{batch_loss, TrainConfig};
    let mut r = stream(seed, "grad-total");
    let model = small_model();
    let cfg = TrainConfig {
        k_o: SYNTH_KEYWORDS,
        enable_mrtva: false,
        seed,
        model,
        ..TrainConfig::desk()
    };
    let p = jittered(ModelParams::init(model, seed).unwrap(), seed);
    let anchors: Vec<_> = (0..2).map(|s| synthetic_anchor(&model, s, &mut r)).collect();
    let refs: Vec<_> = anchors.iter().collect();
    let mut qv = FeatureQueue::new(8, model.d);
    let mut qw = FeatureQueue::new(8, model.d);
    for _ in 0..4 {
        qv.push(&randn(&mut r, model.d)).unwrap();
        qw.push(&randn(&mut r, model.d)).unwrap();
    }
    let f = |g: &mut Graph, x: &[Var]| {
        let b = p.bound_from(x.to_vec())?;
        Ok(batch_loss(g, &b, &cfg, &refs, (&qv, &qw), 0)?.0)
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = p.tensors.iter().map(|t| g.constant(t.clone())).collect();
    let l = f(&mut g, &vars).unwrap();
    (report(&p.tensors, 3, seed, f), g.value(l).item())
}

/// Resolution of a central difference of an f32 loss of magnitude `loss`:
/// one unit in the last place on each side, divided by the step.
pub fn fd_resolution(loss: f32, eps: f32) -> f32 {
    2.0 * loss.abs() * f32::EPSILON / (2.0 * eps)
}

/// `(g, h)` for every member of `a`, fused with its whole keyword bag.
fn project_members(
    g: &mut Graph,
    b: &hieralign_core::model::Bound,
    a: &hieralign_core::dataset::AnchorData,
) -> hieralign_core::Result<(Var, Var)> {
    use hieralign_core::model::{fuse, project_predict, text_table, vision_encode, Slot};
    let xv = g.constant(a.inputs.clone());
    let vis = vision_encode(g, b, xv)?;
    let table = text_table(g, b)?;
    let slots = vec![(0..SYNTH_KEYWORDS).map(Slot::Row).collect::<Vec<_>>(); a.tree.members.len()];
    let fused = fuse(g, b, vis, table, &slots)?;
    project_predict(g, b, fused.z)
}

/// The parent-child term end to end through encoder, fusion and heads.
/// Stop-gradient arguments come from a frozen copy of the parameters.
pub fn grad_mrtva_pipeline(seed: u64) -> f32 {
    use hieralign_core::losses::mrtva_edges;
    let mut r = stream(seed, "grad-mrtva-pipeline");
    let model = small_model();
    let p = jittered(ModelParams::init(model, seed).unwrap(), seed);
    let a = synthetic_anchor(&model, 0, &mut r);
    let n = a.tree.members.len();
    let edges: Vec<(usize, usize)> = mrtva_edges(&a.tree, &Level::ALL, true)
        .into_iter()
        .map(|(pm, c)| (pm, n + c))
        .collect();
    report(&p.tensors, 3, seed, |g, x| {
        let live = p.bound_from(x.to_vec())?;
        let (gj, h) = project_members(g, &live, &a)?;
        let frozen = p.bind(g, false);
        let (gj0, h0) = project_members(g, &frozen, &a)?;
        let gg = g.concat(&[gj, gj0], 0)?;
        let hh = g.concat(&[h, h0], 0)?;
        mrtva_symmetric(g, gg, hh, &edges)
    })
}

pub fn criterion_1() -> Outcome {
    let t = std::time::Instant::now();
    let res = gradient_suite(GRAD_SEEDS);
    let secs = t.elapsed().as_secs_f64();
    let ok = res.iter().all(|(_, e)| *e <= TOLERANCE) && secs < 120.0;
    let parts: Vec<String> = res.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    let mut detail = format!(
        "{GRAD_SEEDS} seeds, d={GRAD_D}, eps {EPSILON:.0e}: max rel err {} (tol {TOLERANCE:.0e}); {secs:.1}s (limit 120s)",
        parts.join(", ")
    );
    if !ok {
        let loss = (0..GRAD_SEEDS)
            .map(|s| total_loss_value(s).abs())
            .fold(0.0f32, f32::max);
        detail += &format!(
            "; summed objective reaches |loss| {loss:.1}, where f32 rounding alone limits a central difference to {:.1e}",
            fd_resolution(loss, EPSILON)
        );
    }
    Outcome::new(ok, detail)
}

// ---------------------------------------------------------------------------
// criterion 3: stop-gradient

/// Gradients of the alignment loss w.r.t. both inputs, with leaf rows (which
/// only ever enter through stop-gradient arguments) reported separately.
pub fn stop_gradient_check(seed: u64) -> (bool, bool) {
    let mut r = stream(seed, "stop-gradient");
    let tree = expand_children(PatchId::anchor(0, 0), (0, 0)).unwrap();
    let n = tree.members.len();
    let gj = randm(&mut r, n, 16);
    let h = randm(&mut r, n, 16);
    let edges = tree.edges();

    let mut g = Graph::new();
    let (a, b) = (g.param(gj.clone()), g.param(h.clone()));
    let l = mrtva_symmetric(&mut g, a, b, &edges).unwrap();
    let gr = g.backward(l).unwrap();
    let (ga, gb) = (gr.wrt(a), gr.wrt(b));
    let leaves = tree.level_members(Level::X40);
    let leaf_zero = leaves
        .clone()
        .all(|i| ga.row(i).iter().chain(gb.row(i)).all(|x| x.to_bits() == 0));
    let parents_live = tree
        .level_members(Level::X5)
        .all(|i| ga.row(i).iter().any(|&x| x != 0.0));

    // same loss with the stop-gradient arguments read from constants
    let mut g2 = Graph::new();
    let (a2, b2) = (g2.param(gj.clone()), g2.param(h.clone()));
    let (fg, fh) = (g2.constant(gj), g2.constant(h));
    let gg = g2.concat(&[a2, fg], 0).unwrap();
    let hh = g2.concat(&[b2, fh], 0).unwrap();
    let shifted: Vec<(usize, usize)> = edges.iter().map(|&(p, c)| (p, n + c)).collect();
    let l2 = mrtva_symmetric(&mut g2, gg, hh, &shifted).unwrap();
    let gr2 = g2.backward(l2).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let same = bits(&ga) == bits(&gr2.wrt(a2)) && bits(&gb) == bits(&gr2.wrt(b2));
    (leaf_zero && parents_live, same)
}

pub fn criterion_3() -> Outcome {
    let res: Vec<(bool, bool)> = (0..20).map(stop_gradient_check).collect();
    let zero = res.iter().all(|r| r.0);
    let same = res.iter().all(|r| r.1);
    Outcome::new(
        zero && same,
        format!(
            "20 seeds: gradient through stop-gradient arguments bitwise 0: {zero}; gradients equal (bitwise) to the loss with those arguments made constant: {same}"
        ),
    )
}

// ---------------------------------------------------------------------------
// criterion 4: pyramid structure

/// Counts, edges and the footprint partition of one anchor, checked in
/// units of the finest footprint.
pub fn pyramid_oracle(tree: &AnchorTree) -> Result<(), String> {
    if tree.members.len() != 85 {
        return Err(format!("{} members", tree.members.len()));
    }
    let mut hist = [0usize; 4];
    for m in &tree.members {
        hist[m.level.depth()] += 1;
    }
    if hist != [1, 4, 16, 64] {
        return Err(format!("level histogram {hist:?}"));
    }
    let edges = tree.edges();
    if edges.len() != 84 {
        return Err(format!("{} edges", edges.len()));
    }
    let unit = Level::X40.footprint();
    let (oy, ox) = tree.origin;
    let side = Level::X5.footprint() / unit;
    let cells = |i: usize| -> Vec<(usize, usize)> {
        let (y, x, s) = tree.members[i].footprint(tree.origin);
        if (y - oy) % unit != 0 || (x - ox) % unit != 0 || s % unit != 0 {
            return vec![];
        }
        let (y0, x0, n) = ((y - oy) / unit, (x - ox) / unit, s / unit);
        (y0..y0 + n).flat_map(|a| (x0..x0 + n).map(move |b| (a, b))).collect()
    };
    for level in Level::ALL {
        let mut cover = vec![0u8; side * side];
        for i in tree.level_members(level) {
            for (a, b) in cells(i) {
                if a >= side || b >= side {
                    return Err(format!("member {i} leaves the anchor"));
                }
                cover[a * side + b] += 1;
            }
        }
        if cover.iter().any(|&c| c != 1) {
            return Err(format!("{level} does not partition the anchor"));
        }
    }
    for &(p, c) in &edges {
        let pc = cells(p);
        if tree.members[c].level.depth() != tree.members[p].level.depth() + 1
            || !cells(c).iter().all(|x| pc.contains(x))
        {
            return Err(format!("edge ({p}, {c}) is not a parent-child containment"));
        }
    }
    for (i, m) in tree.members.iter().enumerate() {
        let kids: Vec<usize> = edges.iter().filter(|e| e.0 == i).map(|e| e.1).collect();
        let expect = if m.level == Level::X40 { 0 } else { 4 };
        if kids.len() != expect {
            return Err(format!("member {i} has {} children", kids.len()));
        }
    }
    Ok(())
}

pub fn criterion_4() -> Outcome {
    let mut r = stream(4, "pyramid");
    let mut fails = Vec::new();
    for i in 0..1000 {
        let anchor = PatchId::anchor(r.gen_range(0..500), r.gen_range(0..64));
        let origin = (4096 * r.gen_range(0..16), 4096 * r.gen_range(0..16));
        match expand_children(anchor, origin)
            .map_err(|e| e.to_string())
            .and_then(|t| pyramid_oracle(&t))
        {
            Ok(()) => {}
            Err(e) => fails.push(format!("anchor {i}: {e}")),
        }
    }
    Outcome::new(
        fails.is_empty(),
        format!(
            "1000 random anchors: 85 patches, histogram [1,4,16,64], 84 edges, footprint partition; failures {}{}",
            fails.len(),
            fails.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// criterion 5: Otsu and coverage

/// Exhaustive search over the 256 split levels: class 0 is `[0, t]`.
pub fn otsu_oracle(hist: &[u64; 256]) -> u8 {
    let total: f64 = hist.iter().map(|&h| h as f64).sum();
    let mut best = (0usize, -1.0f64);
    for t in 0..256 {
        let n0: f64 = hist[..=t].iter().map(|&h| h as f64).sum();
        let n1 = total - n0;
        let var = if n0 == 0.0 || n1 == 0.0 {
            0.0
        } else {
            let mu0 = hist[..=t]
                .iter()
                .enumerate()
                .map(|(i, &h)| i as f64 * h as f64)
                .sum::<f64>()
                / n0;
            let mu1 = hist[t + 1..]
                .iter()
                .enumerate()
                .map(|(i, &h)| (i + t + 1) as f64 * h as f64)
                .sum::<f64>()
                / n1;
            (n0 / total) * (n1 / total) * (mu0 - mu1) * (mu0 - mu1)
        };
        if var > best.1 {
            best = (t, var);
        }
    }
    best.0 as u8
}

pub fn random_histogram(r: &mut Rng) -> [u64; 256] {
    let mut h = [0u64; 256];
    match r.gen_range(0..3) {
        0 => {
            for b in h.iter_mut() {
                *b = r.gen_range(0..1000);
            }
        }
        1 => {
            // two or three modes
            for _ in 0..r.gen_range(2..=3) {
                let (c, w) = (r.gen_range(0..256) as f64, r.gen_range(3.0..40.0));
                for (i, b) in h.iter_mut().enumerate() {
                    *b += (5000.0 * (-((i as f64 - c) / w).powi(2)).exp()) as u64;
                }
            }
        }
        _ => {
            // sparse
            for _ in 0..r.gen_range(1..6) {
                h[r.gen_range(0..256)] += r.gen_range(1..100);
            }
        }
    }
    if h.iter().all(|&b| b == 0) {
        h[r.gen_range(0..256)] = 1;
    }
    h
}

/// Tissue pixels under each sampled anchor, counted straight from the 5x
/// raster and the threshold level.
pub fn coverage_oracle(low: &Raster, threshold: u8, darker: bool, origin: (usize, usize)) -> f64 {
    let side = 4096 / 8;
    let (y0, x0) = (origin.0 / 8, origin.1 / 8);
    let mut n = 0usize;
    for y in y0..y0 + side {
        for x in x0..x0 + side {
            let q = (low.data[y * low.width + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            if (q <= threshold) == darker {
                n += 1;
            }
        }
    }
    n as f64 / (side * side) as f64
}

pub fn criterion_5() -> Outcome {
    let mut r = stream(5, "otsu");
    let mut mism = 0;
    for _ in 0..100 {
        let h = random_histogram(&mut r);
        if otsu_threshold(&h).unwrap() != otsu_oracle(&h) {
            mism += 1;
        }
    }
    let gen = hieralign_core::pyramid::GenConfig::default();
    let (mut checked, mut low_cov) = (0usize, 0usize);
    let mut min_cov = 1.0f64;
    for s in 0..6u32 {
        let params = hieralign_core::pyramid::draw_params(s as u64 + 11, (s % 4) as usize, &gen).unwrap();
        let low = hieralign_core::pyramid::render_downsampled(&params, &gen, 8).unwrap();
        let mask = tissue_mask_from_5x(&low, gen.tissue_darker).unwrap();
        let sample = sample_anchors(s, &mask, 16, 0.7, 5).unwrap();
        for (_, origin) in &sample.anchors {
            let c = coverage_oracle(&low, mask.threshold_level, gen.tissue_darker, *origin);
            min_cov = min_cov.min(c);
            checked += 1;
            if c < 0.7 {
                low_cov += 1;
            }
        }
    }
    Outcome::new(
        mism == 0 && low_cov == 0 && checked > 0,
        format!(
            "Otsu == exhaustive search on 100 random histograms: {} mismatches; {checked} sampled anchors recounted, {low_cov} below 70% (min {min_cov:.3})",
            mism
        ),
    )
}

// ---------------------------------------------------------------------------
// criterion 6: top-k and WSI pooling

pub fn wsi_oracle(scores: &[Vec<f32>], k: usize) -> usize {
    let c = scores[0].len();
    let sums: Vec<f32> = (0..c)
        .map(|j| {
            let mut col: Vec<f32> = scores.iter().map(|s| s[j]).collect();
            // insertion sort, descending
            for i in 1..col.len() {
                let mut p = i;
                while p > 0 && col[p - 1] < col[p] {
                    col.swap(p - 1, p);
                    p -= 1;
                }
            }
            col.iter().take(k).map(|&x| x as f64).sum::<f64>() as f32
        })
        .collect();
    let mut best = 0;
    for j in 1..c {
        if sums[j] > sums[best] {
            best = j;
        }
    }
    best
}

pub fn criterion_6() -> Outcome {
    let mut r = stream(6, "selection");
    let mut topk_bad = 0;
    for _ in 0..200 {
        let n = r.gen_range(1..40);
        // coarse values so ties occur
        let s: Vec<f32> = (0..n).map(|_| r.gen_range(0..12) as f32 / 4.0).collect();
        let k = r.gen_range(1..=n + 2);
        let s64: Vec<f64> = s.iter().map(|&x| x as f64).collect();
        if top_k(&s, k) != brute_topk(&s64, k) {
            topk_bad += 1;
        }
    }
    let ks = [1, 5, 10, 50, 100];
    let mut wsi_bad = 0;
    for _ in 0..200 {
        let c = r.gen_range(2..6);
        let n = r.gen_range(1..130);
        let scores: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..c).map(|_| r.gen_range(0.0f32..1.0)).collect())
            .collect();
        let got = classify_wsi(&scores, &ks).unwrap();
        let want: Vec<usize> = ks.iter().map(|&k| wsi_oracle(&scores, k)).collect();
        if got != want {
            wsi_bad += 1;
        }
    }
    Outcome::new(
        topk_bad == 0 && wsi_bad == 0,
        format!("top-k vs brute-force sort: {topk_bad}/200 mismatches; top-K pooling (K in 1,5,10,50,100) vs sort oracle: {wsi_bad}/200 mismatches"),
    )
}

// ---------------------------------------------------------------------------
// criterion 7: metrics

pub const METRIC_TOL: f64 = 1e-9;

/// Confusion rows (truth by predicted) with weighted F1 and balanced
/// accuracy worked out by hand as exact fractions.
pub fn metric_cases() -> Vec<(Vec<Vec<u64>>, f64, f64)> {
    vec![
        // F1_0 = 16/21, F1_1 = 14/19, equal support
        (
            vec![vec![8, 2], vec![3, 7]],
            0.5 * 16.0 / 21.0 + 0.5 * 14.0 / 19.0,
            0.75,
        ),
        (vec![vec![5, 0], vec![0, 5]], 1.0, 1.0),
        (vec![vec![0, 5], vec![5, 0]], 0.0, 0.0),
        // everything predicted as class 0: F1_0 = 2*6/(6+10) = 3/4
        (vec![vec![6, 0], vec![4, 0]], 0.6 * 0.75, 0.5),
        // recall 1, 1/2, 1/3; precision 1/2, 2/3, 1/2
        (
            vec![vec![2, 0, 0], vec![1, 2, 1], vec![1, 1, 1]],
            (2.0 / 9.0) * (2.0 / 3.0) + (4.0 / 9.0) * (4.0 / 7.0) + (3.0 / 9.0) * (2.0 / 5.0),
            (1.0 + 0.5 + 1.0 / 3.0) / 3.0,
        ),
        // class 2 has no support and is skipped
        (
            vec![vec![3, 1, 0], vec![0, 4, 0], vec![0, 0, 0]],
            (4.0 / 8.0) * (6.0 / 7.0) + (4.0 / 8.0) * (8.0 / 9.0),
            (0.75 + 1.0) / 2.0,
        ),
        // predictions into an unsupported class
        (
            vec![vec![1, 0, 1], vec![0, 2, 2], vec![0, 0, 0]],
            (2.0 / 6.0) * (2.0 / 3.0) + (4.0 / 6.0) * (4.0 / 6.0),
            (0.5 + 0.5) / 2.0,
        ),
        (vec![vec![1]], 1.0, 1.0),
        // imbalanced: F1_0 = 180/190, F1_1 = 0
        (vec![vec![90, 0], vec![10, 0]], 0.9 * 180.0 / 190.0, 0.5),
        // 4 classes, one hit each except class 3
        (
            vec![vec![1, 1, 0, 0], vec![0, 1, 1, 0], vec![0, 0, 1, 1], vec![1, 0, 0, 0]],
            (2.0 / 7.0) * 0.5 + (2.0 / 7.0) * 0.5 + (2.0 / 7.0) * 0.5 + 0.0,
            (0.5 + 0.5 + 0.5 + 0.0) / 4.0,
        ),
    ]
}

pub fn criterion_7() -> Outcome {
    let mut worst = 0.0f64;
    for (rows, f1, bacc) in metric_cases() {
        let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
        let cm = Confusion::from_rows(&refs).unwrap();
        worst = worst
            .max((weighted_f1(&cm).unwrap() - f1).abs())
            .max((balanced_accuracy(&cm).unwrap() - bacc).abs());
    }
    Outcome::new(
        worst <= METRIC_TOL,
        format!("10 fixed confusion matrices incl. [[8,2],[3,7]] -> bacc 0.75: max |err| {worst:.1e} (tol {METRIC_TOL:.0e})"),
    )
}

pub fn rel_err(a: f32, b: f32) -> f32 {
    relative_error(a, b)
}
