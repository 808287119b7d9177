mod support;

use hieralign_core::autodiff::{Graph, Tensor};
use hieralign_core::eval::{balanced_accuracy, classify_wsi, prompt_ensemble, weighted_f1, Confusion};
use hieralign_core::losses::{
    cvta_loss, itc_loss, mask_positions, mrtva_symmetric, select_topk_positive, top_k, FeatureQueue,
};
use hieralign_core::pyramid::{expand_children, otsu_threshold, PatchId, PatchIndex};
use hieralign_core::rng;
use hieralign_core::trainer::lr_schedule;
use proptest::prelude::*;
use support::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f32..3.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

fn confusion(n: usize) -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(prop::collection::vec(0u64..20, n), n)
        .prop_filter("needs a sample", |r| r.iter().flatten().sum::<u64>() > 0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn top_k_is_sorted_and_unique(scores in prop::collection::vec(-5i32..5, 1..40), k in 0usize..50) {
        let s: Vec<f32> = scores.iter().map(|&x| x as f32 / 2.0).collect();
        let idx = top_k(&s, k);
        prop_assert_eq!(idx.len(), k.min(s.len()));
        for w in idx.windows(2) {
            prop_assert!(s[w[0]] > s[w[1]] || (s[w[0]] == s[w[1]] && w[0] < w[1]));
        }
        let chosen_min = idx.iter().map(|&i| s[i]).fold(f32::INFINITY, f32::min);
        for (i, &x) in s.iter().enumerate() {
            if !idx.contains(&i) {
                prop_assert!(x <= chosen_min);
            }
        }
    }

    #[test]
    fn cvta_is_non_negative(v in matrix(4, 6), t in matrix(7, 6), k_o in 1usize..5, tau in 0.02f32..2.0) {
        let pos = select_topk_positive(&v, &t, k_o).unwrap();
        let mut g = Graph::new();
        let (a, b, tt) = (g.constant(v), g.constant(t), g.constant(Tensor::new(&[1], vec![tau]).unwrap()));
        let l = cvta_loss(&mut g, a, b, &pos, tt).unwrap();
        prop_assert!(g.value(l).item() >= 0.0);
    }

    #[test]
    fn mrtva_lies_in_unit_interval(gj in matrix(85, 4), h in matrix(85, 4)) {
        let tree = expand_children(PatchId::anchor(0, 0), (0, 0)).unwrap();
        let mut g = Graph::new();
        let (a, b) = (g.constant(gj), g.constant(h));
        let l = mrtva_symmetric(&mut g, a, b, &tree.edges()).unwrap();
        let l = g.value(l).item();
        prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&l));
    }

    #[test]
    fn itc_is_non_negative(v in matrix(5, 6), w in matrix(5, 6), q in matrix(3, 6), tau in 0.02f32..2.0) {
        let mut qv = FeatureQueue::new(4, 6);
        let mut qw = FeatureQueue::new(4, 6);
        for i in 0..3 {
            qv.push(q.row(i)).unwrap();
            qw.push(q.row(2 - i)).unwrap();
        }
        let mut g = Graph::new();
        let (a, b) = (g.constant(v), g.constant(w));
        let (a, b) = (g.l2_normalize(a, 1e-12), g.l2_normalize(b, 1e-12));
        let tt = g.constant(Tensor::new(&[1], vec![tau]).unwrap());
        let l = itc_loss(&mut g, a, b, &qv, &qw, tt).unwrap();
        prop_assert!(g.value(l).item() >= 0.0);
    }

    #[test]
    fn metrics_are_fractions(rows in confusion(4)) {
        let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
        let cm = Confusion::from_rows(&refs).unwrap();
        let f1 = weighted_f1(&cm).unwrap();
        let ba = balanced_accuracy(&cm).unwrap();
        prop_assert!((0.0..=1.0).contains(&f1));
        prop_assert!((0.0..=1.0).contains(&ba));
    }

    #[test]
    fn metrics_ignore_class_relabeling(rows in confusion(4), perm in Just([0usize, 1, 2, 3]).prop_shuffle()) {
        let refs: Vec<&[u64]> = rows.iter().map(|r| r.as_slice()).collect();
        let cm = Confusion::from_rows(&refs).unwrap();
        let mut moved = vec![vec![0u64; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                moved[perm[i]][perm[j]] = rows[i][j];
            }
        }
        let refs2: Vec<&[u64]> = moved.iter().map(|r| r.as_slice()).collect();
        let cm2 = Confusion::from_rows(&refs2).unwrap();
        prop_assert!((weighted_f1(&cm).unwrap() - weighted_f1(&cm2).unwrap()).abs() < 1e-12);
        prop_assert!((balanced_accuracy(&cm).unwrap() - balanced_accuracy(&cm2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pooling_with_every_tile_is_column_sum_argmax(
        scores in prop::collection::vec(prop::collection::vec(0.0f32..1.0, 3), 1..60),
    ) {
        let n = scores.len();
        let all = classify_wsi(&scores, &[n, n + 7]).unwrap();
        let sums: Vec<f64> = (0..3).map(|c| scores.iter().map(|s| s[c] as f64).sum()).collect();
        let mut best = 0;
        for c in 1..3 {
            if sums[c] > sums[best] + 1e-5 {
                best = c;
            }
        }
        // near-ties can resolve either way under f32 summation order
        let tied = (0..3).any(|c| c != best && (sums[c] - sums[best]).abs() <= 1e-5);
        if !tied {
            prop_assert_eq!(all, vec![best, best]);
        }
        let one = classify_wsi(&scores, &[1]).unwrap()[0];
        let max_tile = scores.iter().flatten().cloned().fold(f32::NEG_INFINITY, f32::max);
        prop_assert!(scores.iter().any(|s| s[one] == max_tile));
    }

    #[test]
    fn otsu_ignores_count_scaling(seed in any::<u64>(), m in 2u64..50) {
        let h = random_histogram(&mut stream(seed, "otsu-scale"));
        let mut scaled = h;
        for b in scaled.iter_mut() {
            *b *= m;
        }
        prop_assert_eq!(otsu_threshold(&h).unwrap(), otsu_threshold(&scaled).unwrap());
    }

    #[test]
    fn parents_and_children_agree(slide in 0u32..1000, anchor in 0u32..64, oy in 0usize..8, ox in 0usize..8) {
        let mut index = PatchIndex::new();
        index.push(expand_children(PatchId::anchor(slide, anchor), (oy * 4096, ox * 4096)).unwrap());
        index.validate().unwrap();
        for m in &index.trees[0].members {
            if let Some(ch) = index.children(m) {
                for c in ch {
                    prop_assert_eq!(index.parent(&c), Some(*m));
                    prop_assert_eq!(c.parent(), Some(*m));
                }
            }
            if let Some(p) = index.parent(m) {
                prop_assert!(index.children(&p).unwrap().contains(m));
            }
        }
    }

    #[test]
    fn mask_positions_count_and_range(n in 1usize..200, rate in 0.0f64..1.0, seed in any::<u64>()) {
        let pos = mask_positions(n, rate, &mut rng::stream(seed, "mask", 0)).unwrap();
        prop_assert_eq!(pos.len(), ((rate * n as f64).ceil() as usize).clamp(1, n));
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(pos.iter().all(|&p| p < n));
    }

    #[test]
    fn lr_stays_within_peak(step in 0usize..5000, warmup in 0usize..500, extra in 1usize..5000, peak in 1e-6f64..1e-2) {
        let total = warmup + extra;
        let lr = lr_schedule(step, peak, warmup, total);
        prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr));
        if step >= total {
            prop_assert_eq!(lr, 0.0);
        }
        if step > warmup && step < total {
            prop_assert!(lr_schedule(step + 1, peak, warmup, total) <= lr + 1e-18);
        }
    }

    #[test]
    fn queue_keeps_the_newest_entries(cap in 0usize..10, pushes in prop::collection::vec(prop::collection::vec(0.1f32..1.0, 3), 0..30)) {
        let mut q = FeatureQueue::new(cap, 3);
        for p in &pushes {
            q.push(p).unwrap();
        }
        prop_assert_eq!(q.len(), pushes.len().min(cap));
        let expect: Vec<Vec<f64>> = pushes[pushes.len() - q.len()..]
            .iter()
            .map(|p| norm(&p.iter().map(|&x| x as f64).collect::<Vec<_>>()))
            .collect();
        for (got, want) in q.iter().zip(&expect) {
            for (a, b) in got.iter().zip(want) {
                prop_assert!((*a as f64 - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn identical_templates_ensemble_to_themselves(s in prop::collection::vec(0.01f32..1.0, 2..6), copies in 1usize..5) {
        let total: f32 = s.iter().sum();
        let scores: Vec<f32> = s.iter().map(|x| x / total).collect();
        let out = prompt_ensemble(&vec![scores.clone(); copies]).unwrap();
        for (a, b) in out.iter().zip(&scores) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
