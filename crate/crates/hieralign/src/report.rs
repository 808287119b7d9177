//! Evaluation reports: one JSON record per configuration plus aligned
//! text tables.

use hieralign_core::ablation::render_columns;
use hieralign_core::eval::{EvalReport, POOL_KS};
use serde_json::{json, Value};

/// `runtime_s` is null when the caller did not time the evaluation.
pub fn report_record(r: &EvalReport, runtime_s: Option<f64>) -> Value {
    let counts = |n: usize, c: &[u64]| -> Vec<Vec<u64>> { c.chunks(n).map(|r| r.to_vec()).collect() };
    json!({
        "name": r.name,
        "mode": r.mode.name(),
        "pe": r.pe,
        "tile": {
            "confusion": counts(r.tiles.n, &r.tiles.counts),
            "weighted_f1": r.weighted_f1,
            "balanced_accuracy": r.balanced_accuracy,
        },
        "wsi": r.wsi.iter().map(|w| json!({
            "k": w.k,
            "confusion": counts(w.confusion.n, &w.confusion.counts),
            "weighted_f1": w.weighted_f1,
            "balanced_accuracy": w.balanced_accuracy,
        })).collect::<Vec<_>>(),
        "best_k": POOL_KS[r.best_k],
        "segmentation_accuracy": r.segmentation_accuracy,
        "runtime_s": runtime_s,
    })
}

/// Configuration rows against tile and best-K slide metrics.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut lines = vec![[
        "config",
        "mode",
        "pe",
        "tile_f1",
        "tile_bacc",
        "wsi_f1",
        "wsi_bacc",
        "best_k",
        "seg_acc",
    ]
    .map(String::from)
    .to_vec()];
    for r in reports {
        let w = &r.wsi[r.best_k];
        lines.push(vec![
            r.name.clone(),
            r.mode.name().into(),
            if r.pe { "PE" } else { "nPE" }.into(),
            format!("{:.4}", r.weighted_f1),
            format!("{:.4}", r.balanced_accuracy),
            format!("{:.4}", w.weighted_f1),
            format!("{:.4}", w.balanced_accuracy),
            w.k.to_string(),
            format!("{:.4}", r.segmentation_accuracy),
        ]);
    }
    render_columns(&lines)
}
