use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::pyramid::POOLED;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    /// feature width of v, w and z
    pub d: usize,
    pub d_proj: usize,
    pub vocab: usize,
    /// flattened pooled patch: 64 * 64
    pub input: usize,
    pub vision_hidden: usize,
    pub fusion_blocks: usize,
    pub mlp_hidden: usize,
    pub init_tau: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 32,
            d_proj: 16,
            vocab: 64,
            input: POOLED * POOLED,
            vision_hidden: 64,
            fusion_blocks: 2,
            mlp_hidden: 64,
            init_tau: 0.07,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Zero,
    /// N(0, scale^2)
    Normal(f32),
    Eye,
    LogTau,
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.d;
    let fan = |n: usize| Init::Normal(1.0 / math::sqrtf(n as f32));
    let mut out: Vec<(String, Vec<usize>, Init)> = Vec::new();
    let mut push = |name: &str, shape: &[usize], init: Init| {
        out.push((name.to_string(), shape.to_vec(), init));
    };
    push("vis.w1", &[cfg.input, cfg.vision_hidden], fan(cfg.input));
    push("vis.b1", &[cfg.vision_hidden], Init::Zero);
    push("vis.w2", &[cfg.vision_hidden, d], fan(cfg.vision_hidden));
    push("vis.b2", &[d], Init::Zero);
    push("txt.emb", &[cfg.vocab, d], Init::Normal(1.0));
    push("txt.w", &[d, d], fan(d));
    push("txt.b", &[d], Init::Zero);
    push("fus.type_img", &[d], Init::Zero);
    push("fus.type_txt", &[d], Init::Normal(0.1));
    push("fus.pad", &[d], Init::Normal(0.1));
    push("fus.mask", &[d], Init::Normal(0.1));
    // `out` initializes the residual branch outputs; zero makes the block
    // an identity map at initialization
    let block = |prefix: &str, out: Init, push: &mut dyn FnMut(&str, &[usize], Init)| {
        for w in ["wq", "wk", "wv"] {
            push(&alloc::format!("{prefix}.{w}"), &[d, d], fan(d));
        }
        push(
            &alloc::format!("{prefix}.wo"),
            &[d, d],
            if out == Init::Zero { out } else { fan(d) },
        );
        push(&alloc::format!("{prefix}.w1"), &[d, cfg.mlp_hidden], fan(d));
        push(&alloc::format!("{prefix}.b1"), &[cfg.mlp_hidden], Init::Zero);
        push(
            &alloc::format!("{prefix}.w2"),
            &[cfg.mlp_hidden, d],
            if out == Init::Zero { out } else { fan(cfg.mlp_hidden) },
        );
        push(&alloc::format!("{prefix}.b2"), &[d], Init::Zero);
    };
    for b in 0..cfg.fusion_blocks {
        block(&alloc::format!("fus.block{b}"), Init::Zero, &mut push);
    }
    push("head.pj_w", &[d, cfg.d_proj], fan(d));
    push("head.pj_b", &[cfg.d_proj], Init::Zero);
    push("head.pd_w", &[cfg.d_proj, cfg.d_proj], Init::Eye);
    push("head.pd_b", &[cfg.d_proj], Init::Zero);
    push("itc.proj_v", &[d, d], Init::Eye);
    push("itc.proj_w", &[d, d], Init::Eye);
    push("itm.w", &[d, 2], fan(d));
    push("itm.b", &[2], Init::Zero);
    push("mlm.w", &[d, cfg.vocab], fan(d));
    push("mlm.b", &[cfg.vocab], Init::Zero);
    block("plm.block", fan(d), &mut push);
    push("plm.w", &[d, cfg.vocab], fan(d));
    push("plm.b", &[cfg.vocab], Init::Zero);
    push("log_tau", &[1], Init::LogTau);
    out
}

/// Named tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<ModelParams> {
        if cfg.d == 0 || cfg.d_proj == 0 || cfg.vocab == 0 || cfg.fusion_blocks == 0 {
            return Err(Error::InvalidArgument("model dims must be positive".into()));
        }
        if !(cfg.init_tau > 0.0) {
            return Err(Error::Domain {
                op: "model init",
                detail: alloc::format!("tau must be positive, got {}", cfg.init_tau),
            });
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (i, (name, shape, init)) in layout(&cfg).into_iter().enumerate() {
            let mut r = rng::stream(seed, "init", i as u64);
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zero => alloc::vec![0.0; n],
                Init::Normal(s) => (0..n).map(|_| s * rng::normal(&mut r)).collect(),
                Init::Eye => {
                    let k = shape[0];
                    let mut v = alloc::vec![0.0; n];
                    for j in 0..k {
                        v[j * k + j] = 1.0;
                    }
                    v
                }
                Init::LogTau => alloc::vec![math::lnf(cfg.init_tau)],
            };
            names.push(name);
            tensors.push(Tensor::new(&shape, data)?);
        }
        Ok(ModelParams {
            config: cfg,
            names,
            tensors,
        })
    }

    /// Rebuilds from stored tensors, checking names and shapes against the
    /// layout of `cfg`.
    pub fn from_named(cfg: ModelConfig, named: Vec<(String, Tensor)>) -> Result<ModelParams> {
        let lay = layout(&cfg);
        if lay.len() != named.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "expected {} tensors, got {}",
                lay.len(),
                named.len()
            )));
        }
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for ((name, shape, _), (n, t)) in lay.into_iter().zip(named) {
            if name != n || shape != t.shape() {
                return Err(Error::InvalidArgument(alloc::format!(
                    "tensor {n} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
            names.push(n);
            tensors.push(t);
        }
        Ok(ModelParams {
            config: cfg,
            names,
            tensors,
        })
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn tau(&self) -> f32 {
        math::expf(self.get("log_tau").map_or(0.0, |t| t.item()))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.all_finite())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    /// Registers every tensor in `g` as a trainable leaf (or a constant).
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars: Vec<Var> = self.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        Bound::new(self, vars)
    }

    /// Role view over leaves created elsewhere, one per tensor in order.
    pub fn bound_from(&self, vars: Vec<Var>) -> Result<Bound> {
        if vars.len() != self.tensors.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} vars for {} tensors",
                vars.len(),
                self.tensors.len()
            )));
        }
        Ok(Bound::new(self, vars))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Parameters registered in one graph, by role.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
    pub d: usize,
    pub vocab: usize,
    pub vis_w1: Var,
    pub vis_b1: Var,
    pub vis_w2: Var,
    pub vis_b2: Var,
    pub txt_emb: Var,
    pub txt_w: Var,
    pub txt_b: Var,
    pub type_img: Var,
    pub type_txt: Var,
    pub pad: Var,
    pub mask: Var,
    pub blocks: Vec<BlockVars>,
    pub pj_w: Var,
    pub pj_b: Var,
    pub pd_w: Var,
    pub pd_b: Var,
    pub itc_v: Var,
    pub itc_w: Var,
    pub itm_w: Var,
    pub itm_b: Var,
    pub mlm_w: Var,
    pub mlm_b: Var,
    pub plm_block: BlockVars,
    pub plm_w: Var,
    pub plm_b: Var,
    pub log_tau: Var,
}

impl Bound {
    fn new(p: &ModelParams, vars: Vec<Var>) -> Bound {
        let v = |name: &str| -> Var {
            let i = p.index_of(name).unwrap_or_else(|| panic!("layout lacks {name}"));
            vars[i]
        };
        let block = |prefix: &str| BlockVars {
            wq: v(&alloc::format!("{prefix}.wq")),
            wk: v(&alloc::format!("{prefix}.wk")),
            wv: v(&alloc::format!("{prefix}.wv")),
            wo: v(&alloc::format!("{prefix}.wo")),
            w1: v(&alloc::format!("{prefix}.w1")),
            b1: v(&alloc::format!("{prefix}.b1")),
            w2: v(&alloc::format!("{prefix}.w2")),
            b2: v(&alloc::format!("{prefix}.b2")),
        };
        Bound {
            d: p.config.d,
            vocab: p.config.vocab,
            vis_w1: v("vis.w1"),
            vis_b1: v("vis.b1"),
            vis_w2: v("vis.w2"),
            vis_b2: v("vis.b2"),
            txt_emb: v("txt.emb"),
            txt_w: v("txt.w"),
            txt_b: v("txt.b"),
            type_img: v("fus.type_img"),
            type_txt: v("fus.type_txt"),
            pad: v("fus.pad"),
            mask: v("fus.mask"),
            blocks: (0..p.config.fusion_blocks)
                .map(|b| block(&alloc::format!("fus.block{b}")))
                .collect(),
            pj_w: v("head.pj_w"),
            pj_b: v("head.pj_b"),
            pd_w: v("head.pd_w"),
            pd_b: v("head.pd_b"),
            itc_v: v("itc.proj_v"),
            itc_w: v("itc.proj_w"),
            itm_w: v("itm.w"),
            itm_b: v("itm.b"),
            mlm_w: v("mlm.w"),
            mlm_b: v("mlm.b"),
            plm_block: block("plm.block"),
            plm_w: v("plm.w"),
            plm_b: v("plm.b"),
            log_tau: v("log_tau"),
            vars,
        }
    }
}
