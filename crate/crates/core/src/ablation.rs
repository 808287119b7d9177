//! Ablation arms derived from one base configuration, and the table that
//! trains and evaluates each of them on shared data.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, EvalReport, Mode, POOL_KS};
use crate::losses::LossBreakdown;
use crate::pyramid::Level;
use crate::trainer::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// the four loss-term combinations
    Losses,
    /// number of positive keywords
    KO,
    /// magnification subsets
    Resolution,
    /// MRTVA restricted to immediate parent-child pairs or not
    ParentChild,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::Losses, Axis::KO, Axis::Resolution, Axis::ParentChild];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Losses => "losses",
            Axis::KO => "k_o",
            Axis::Resolution => "resolution",
            Axis::ParentChild => "parent_child",
        }
    }

    pub fn parse(s: &str) -> Result<Axis> {
        Axis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation axis {s:?}")))
    }
}

pub const KO_SWEEP: [usize; 6] = [3, 6, 9, 12, 15, 18];

pub const RESOLUTION_SUBSETS: [&[Level]; 5] = [
    &[Level::X5, Level::X10],
    &[Level::X20, Level::X40],
    &[Level::X5, Level::X10, Level::X20],
    &[Level::X10, Level::X20, Level::X40],
    &[Level::X5, Level::X10, Level::X20, Level::X40],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub config: TrainConfig,
}

fn levels_name(levels: &[Level]) -> String {
    let m: Vec<String> = levels.iter().map(|l| format!("{}x", l.magnification())).collect();
    m.join("+")
}

/// The arms of `axis`, each `base` with only the axis fields changed.
pub fn arms(base: &TrainConfig, axis: Axis) -> Vec<Arm> {
    let with = |name: String, f: &dyn Fn(&mut TrainConfig)| {
        let mut config = base.clone();
        f(&mut config);
        Arm { name, config }
    };
    match axis {
        Axis::Losses => [(false, false), (true, false), (false, true), (true, true)]
            .into_iter()
            .map(|(cvta, mrtva)| {
                let mut name = String::from("bl");
                if cvta {
                    name += "+cvta";
                }
                if mrtva {
                    name += "+mrtva";
                }
                with(name, &|c| {
                    c.enable_cvta = cvta;
                    c.enable_mrtva = mrtva;
                })
            })
            .collect(),
        Axis::KO => KO_SWEEP
            .into_iter()
            .map(|k| with(format!("k_o={k}"), &|c| c.k_o = k))
            .collect(),
        Axis::Resolution => RESOLUTION_SUBSETS
            .into_iter()
            .map(|l| with(levels_name(l), &|c| c.levels = l.to_vec()))
            .collect(),
        Axis::ParentChild => [true, false]
            .into_iter()
            .map(|on| {
                let name = if on { "hierarchy" } else { "no-hierarchy" };
                with(name.into(), &|c| c.enable_parent_child = on)
            })
            .collect(),
    }
}

/// Names of the fields in which `a` and `b` differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> Vec<&'static str> {
    let mut out = Vec::new();
    macro_rules! cmp {
        ($($f:ident),*) => {
            $(if a.$f != b.$f {
                out.push(stringify!($f));
            })*
        };
    }
    cmp!(
        epochs,
        max_steps,
        batch_size,
        k_o,
        lr_peak,
        warmup_steps,
        weight_decay,
        beta1,
        beta2,
        adam_epsilon,
        queue_capacity,
        mask_rate,
        enable_cvta,
        enable_mrtva,
        enable_parent_child,
        levels,
        seed,
        model
    );
    out
}

/// The fields each axis is allowed to change.
pub fn axis_fields(axis: Axis) -> &'static [&'static str] {
    match axis {
        Axis::Losses => &["enable_cvta", "enable_mrtva"],
        Axis::KO => &["k_o"],
        Axis::Resolution => &["levels"],
        Axis::ParentChild => &["enable_parent_child"],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub arm: String,
    pub final_loss: LossBreakdown,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub axis: Axis,
    pub mode: Mode,
    pub pe: bool,
    pub rows: Vec<AblationRow>,
}

/// Trains and evaluates every arm of `axis` on `data`. Each arm is
/// evaluated with its own `k_o`.
pub fn ablation_run(
    base: &TrainConfig,
    data: &Dataset,
    axis: Axis,
    mode: Mode,
    pe: bool,
    mut on_arm: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for arm in arms(base, axis) {
        let (state, log) = train(&arm.config, data)?;
        let final_loss = log.records.last().map(|r| r.loss).unwrap_or_default();
        let mut report = evaluate(
            &state.params,
            data,
            EvalOptions {
                mode,
                pe,
                k_o: arm.config.k_o,
            },
        )?;
        report.name = arm.name.clone();
        let row = AblationRow {
            arm: arm.name,
            final_loss,
            report,
        };
        on_arm(&row);
        rows.push(row);
    }
    Ok(AblationTable { axis, mode, pe, rows })
}

impl AblationTable {
    /// Aligned text table: one row per arm with tile weighted F1 and
    /// balanced accuracy, WSI weighted F1 per pooling size (best marked
    /// with `*`) and segmentation accuracy.
    pub fn render(&self) -> String {
        let mut header = vec![String::from(self.axis.name()), "tile_f1".into(), "tile_bacc".into()];
        header.extend(POOL_KS.iter().map(|k| format!("wsi@{k}")));
        header.push("seg_acc".into());
        let mut lines = vec![header];
        for r in &self.rows {
            let rep = &r.report;
            let mut line = vec![
                r.arm.clone(),
                format!("{:.3}", rep.weighted_f1),
                format!("{:.3}", rep.balanced_accuracy),
            ];
            for (i, w) in rep.wsi.iter().enumerate() {
                let mark = if i == rep.best_k { "*" } else { "" };
                line.push(format!("{:.3}{mark}", w.weighted_f1));
            }
            line.push(format!("{:.3}", rep.segmentation_accuracy));
            lines.push(line);
        }
        render_columns(&lines)
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub fn render_columns(lines: &[Vec<String>]) -> String {
    let n = lines.iter().map(|l| l.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..n)
        .map(|j| {
            lines
                .iter()
                .filter_map(|l| l.get(j))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for l in lines {
        for (j, cell) in l.iter().enumerate() {
            let pad = widths[j] - cell.chars().count();
            if j == 0 {
                out += cell;
                out.extend(core::iter::repeat_n(' ', pad));
            } else {
                out += "  ";
                out.extend(core::iter::repeat_n(' ', pad));
                out += cell;
            }
        }
        out.push('\n');
    }
    out
}
