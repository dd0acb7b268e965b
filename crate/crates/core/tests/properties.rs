//! Property tests for the cross-module invariants.

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use smartbed::baselines::{build_bmi_classes, BmiClassMode, Knn, LinearRegression, Metric};
use smartbed::dataset::{compute_bmi, load_corpus, merge_postures, save_corpus};
use smartbed::evalharness::{mean_std, ClassificationMetrics, EvaluationReport, FoldPlan, FoldReport};
use smartbed::exec::Execution;
use smartbed::features::{extract_all, extract_statistical, select_contour_levels, trace_contours};
use smartbed::mtnet::network::{init_params, loss_and_grad, softmax_rows};
use smartbed::mtnet::{Architecture, Batch};
use smartbed::preprocess::{median_filter, temporal_gaussian};
use smartbed::synthgen::{generate_corpus_with, BodyModel, BodyTraits, NoiseSpec, Posture, SynthParams};
use smartbed::{Corpus, FeatureMask, GridSpec, PressureFrame, SubjectRecord};

fn grid(rows: usize, cols: usize) -> GridSpec {
    GridSpec::new(rows, cols, 1000.0, 1.0).unwrap()
}

/// Frames of a small grid with a mix of zeros, integers and reals.
fn frame_values(cells: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(
        prop_oneof![
            3 => Just(0.0),
            3 => (1u32..=1000).prop_map(f64::from),
            2 => 0.0..=1000.0f64,
        ],
        cells,
    )
}

fn frame_strategy() -> impl Strategy<Value = PressureFrame> {
    (2usize..7, 2usize..7)
        .prop_flat_map(|(r, c)| (Just(r), Just(c), frame_values(r * c)))
        .prop_map(|(r, c, v)| PressureFrame::new(grid(r, c), v, "S01", 1, 0).unwrap())
}

// ------------------------------------------------------------------ dataset

fn corpus_strategy() -> impl Strategy<Value = Corpus> {
    (1usize..4, 1usize..4, prop::collection::vec(0.0..=1000.0f64, 12 * 12)).prop_map(|(n_subjects, n_frames, pool)| {
        let g = grid(3, 4);
        let subjects: Vec<SubjectRecord> = (0..n_subjects)
            .map(|s| SubjectRecord::new(format!("S{s:02}"), 1.6 + 0.05 * s as f64, 55.0 + 7.3 * s as f64, (s % 2 == 0).then_some(30.0 + s as f64)).unwrap())
            .collect();
        let mut frames = Vec::new();
        for s in 0..n_subjects {
            for i in 0..n_frames {
                let start = ((s * 4 + i) * 12) % (pool.len() - 12);
                frames.push(PressureFrame::new(g, pool[start..start + 12].to_vec(), format!("S{s:02}"), 1 + (i % 2) as u8, i as u32).unwrap());
            }
        }
        Corpus::new("prop", g, subjects, frames, FeatureMask::all()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn save_then_load_is_identity(corpus in corpus_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        save_corpus(&corpus, dir.path()).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        prop_assert_eq!(&back, &corpus);
        // load∘save: writing the reloaded corpus reproduces the same bytes.
        let again = tempfile::tempdir().unwrap();
        save_corpus(&back, again.path()).unwrap();
        for name in ["manifest.json", "subjects.csv", "frames.csv"] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(again.path().join(name)).unwrap();
            prop_assert!(a == b, "{} differs", name);
        }
    }
}

proptest! {
    #[test]
    fn bmi_monotone(w in 30.0..200.0f64, dw in 1e-6..50.0f64, h in 1.2..2.2f64, dh in 1e-6..0.5f64) {
        prop_assert!(compute_bmi(w + dw, h).unwrap() > compute_bmi(w, h).unwrap());
        prop_assert!(compute_bmi(w, h + dh).unwrap() < compute_bmi(w, h).unwrap());
    }

    #[test]
    fn posture_merge_is_total_on_raw_ids(raw in -1000i64..1000) {
        let merged = merge_postures(raw);
        if (1..=17).contains(&raw) {
            let g = merged.unwrap();
            prop_assert!((1..=10).contains(&g));
        } else {
            prop_assert!(merged.is_err());
        }
    }
}

#[test]
fn posture_merge_is_surjective() {
    let groups: BTreeSet<u8> = (1..=17).map(|r| merge_postures(r).unwrap()).collect();
    assert_eq!(groups, (1..=10).collect());
}

// ----------------------------------------------------------------- synthgen

fn synth(seed: u64, exec: Execution) -> Corpus {
    let params = SynthParams {
        n_subjects: 3,
        frames_per_subject: 4,
        postures: vec![Posture::Supine, Posture::Left],
        noise: NoiseSpec::moderate(),
        grid: grid(16, 8),
        seed,
    };
    generate_corpus_with(&params, exec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn synthesis_is_deterministic(seed in any::<u64>()) {
        let a = synth(seed, Execution::Parallel);
        let b = synth(seed, Execution::Sequential);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn pressure_grows_with_weight(w in 45.0..100.0f64, dw in 0.5..10.0f64, h in 1.55..1.95f64) {
        let g = GridSpec::pmatdata();
        let render = |weight: f64| {
            let s = SubjectRecord::new("a", h, weight, None).unwrap();
            BodyModel::new(s, BodyTraits::neutral(), &g).render(&g, Posture::Supine, &NoiseSpec::none(), &mut ChaCha8Rng::seed_from_u64(0))
        };
        let (light, heavy) = (render(w), render(w + dw));
        let sum = |v: &[f64]| v.iter().sum::<f64>();
        let area = |v: &[f64]| v.iter().filter(|&&x| x > 0.0).count();
        prop_assert!(sum(&heavy) > sum(&light));
        prop_assert!(area(&heavy) >= area(&light));
    }
}

// --------------------------------------------------------------- preprocess

proptest! {
    #[test]
    fn median_filter_stays_in_bounds(f in frame_strategy(), w in prop::sample::select(vec![1usize, 3, 5])) {
        let out = median_filter(&f, w).unwrap();
        let (lo, hi) = (f.min_value(), f.max_value());
        prop_assert!(out.values.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn temporal_filter_stays_in_bounds(
        frames in prop::collection::vec(frame_values(6), 1..8),
        w in prop::sample::select(vec![1usize, 3, 5, 7]),
        sigma in 0.3..3.0f64,
    ) {
        let session: Vec<PressureFrame> = frames
            .into_iter()
            .enumerate()
            .map(|(i, v)| PressureFrame::new(grid(2, 3), v, "S01", 1, i as u32).unwrap())
            .collect();
        let out = temporal_gaussian(&session, w, sigma).unwrap();
        for cell in 0..6 {
            let column: Vec<f64> = session.iter().map(|f| f.values[cell]).collect();
            let lo = column.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for f in &out {
                prop_assert!(f.values[cell] >= lo - 1e-9 && f.values[cell] <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn filters_fix_constant_frames(c in 0.0..=1000.0f64, n in 1usize..6) {
        let session: Vec<PressureFrame> = (0..n)
            .map(|i| PressureFrame::new(grid(4, 3), vec![c; 12], "S01", 1, i as u32).unwrap())
            .collect();
        prop_assert_eq!(&median_filter(&session[0], 3).unwrap().values, &session[0].values);
        for f in temporal_gaussian(&session, 5, 1.0).unwrap() {
            for v in f.values {
                prop_assert!((v - c).abs() <= 1e-12 * c.max(1.0));
            }
        }
    }
}

// ----------------------------------------------------------------- features

proptest! {
    #[test]
    fn entropy_ignores_cell_order(values in frame_values(24), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let f = PressureFrame::new(grid(4, 6), values.clone(), "S01", 1, 0).unwrap();
        let mut shuffled = values;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let g = PressureFrame::new(grid(4, 6), shuffled, "S01", 1, 0).unwrap();
        prop_assert_eq!(extract_statistical(&f).entropy, extract_statistical(&g).entropy);
    }

    #[test]
    fn extraction_is_pure(f in frame_strategy()) {
        let a = extract_all(&f, FeatureMask::all());
        let b = extract_all(&f.clone(), FeatureMask::all());
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.model_input()), bits(&b.model_input()));
    }

    #[test]
    fn contour_levels_are_well_formed(f in frame_strategy()) {
        let levels = select_contour_levels(&f);
        let (lo, hi) = (f.min_value(), f.max_value());
        prop_assert!(levels.len() <= 20);
        prop_assert!(levels.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(levels.iter().all(|&l| l > lo && l <= hi));
        if levels.len() >= 2 {
            let step = levels[1] - levels[0];
            prop_assert!(levels.iter().all(|&l| (l / step - (l / step).round()).abs() < 1e-9));
        }
        if hi > lo {
            // A non-constant frame always has at least one level.
            prop_assert!(!levels.is_empty() || hi - lo < 2.0);
        }
    }

    #[test]
    fn isolines_stay_on_the_grid(f in frame_strategy()) {
        let (rows, cols) = (f.grid.rows as f64, f.grid.cols as f64);
        let on_boundary = |x: f64, y: f64| x == 0.0 || y == 0.0 || x == cols - 1.0 || y == rows - 1.0;
        for lines in trace_contours(&f).polylines {
            for line in lines {
                for p in &line.points {
                    prop_assert!(p.x >= 0.0 && p.x <= cols - 1.0 && p.y >= 0.0 && p.y <= rows - 1.0);
                }
                if !line.closed {
                    let (a, b) = (line.points[0], *line.points.last().unwrap());
                    prop_assert!(on_boundary(a.x, a.y) && on_boundary(b.x, b.y));
                }
            }
        }
    }
}

// -------------------------------------------------------------------- mtnet

proptest! {
    #[test]
    fn softmax_normalizes_and_ignores_shifts(logits in prop::collection::vec(-50.0..50.0f64, 12), shift in -100.0..100.0f64) {
        let mut a = Array2::from_shape_vec((2, 6), logits.clone()).unwrap();
        let mut b = Array2::from_shape_vec((2, 6), logits.iter().map(|v| v + shift).collect()).unwrap();
        softmax_rows(&mut a);
        softmax_rows(&mut b);
        for row in a.rows() {
            prop_assert!((row.sum() - 1.0).abs() <= 1e-9);
        }
        for (x, y) in a.iter().zip(b.iter()) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Central differences agree with the analytic gradient.
    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), decay in prop::sample::select(vec![0.0, 1e-4, 1e-2])) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture { input_dim: 4, hidden: vec![6, 5], n_subjects: 3 };
        let theta: Vec<f64> = init_params(&arch, &mut rng).into_iter().map(|w| w + rng.random_range(-0.1..0.1)).collect();
        let n = 7;
        let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(-2.0..2.0));
        let batch = Batch::new(x, (0..n).map(|i| i % 3).collect(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let mut grad = vec![0.0; theta.len()];
        loss_and_grad(&arch, &theta, &batch, decay, Execution::Sequential, &mut grad);
        let mut scratch = vec![0.0; theta.len()];
        let h = 1e-5;
        for j in 0..theta.len() {
            let mut p = theta.clone();
            p[j] += h;
            let up = loss_and_grad(&arch, &p, &batch, decay, Execution::Sequential, &mut scratch);
            p[j] = theta[j] - h;
            let down = loss_and_grad(&arch, &p, &batch, decay, Execution::Sequential, &mut scratch);
            let numeric = (up - down) / (2.0 * h);
            let rel = (grad[j] - numeric).abs() / grad[j].abs().max(numeric.abs()).max(1e-7);
            prop_assert!(rel < 1e-4, "coordinate {}: analytic {} numeric {}", j, grad[j], numeric);
        }
    }
}

// ---------------------------------------------------------------- baselines

proptest! {
    #[test]
    fn one_nn_memorizes_training_set(points in prop::collection::btree_set((-1000i32..1000, -1000i32..1000), 2..40), metric in prop::sample::select(vec![Metric::Euclidean, Metric::Minkowski3])) {
        let x: Vec<Vec<f64>> = points.iter().map(|&(a, b)| vec![a as f64, b as f64]).collect();
        let labels: Vec<usize> = (0..x.len()).map(|i| i % 3).collect();
        let knn = Knn::fit(x.clone(), labels.clone(), 1, metric).unwrap();
        prop_assert_eq!(knn.predict(&x, Execution::Sequential).unwrap(), labels);
    }

    #[test]
    fn bmi_classes_are_ordered_by_mean_bmi(weights in prop::collection::vec(45.0..120.0f64, 5..14), seed in any::<u64>()) {
        let subjects: Vec<SubjectRecord> = weights
            .iter()
            .enumerate()
            .map(|(i, &w)| SubjectRecord::new(format!("S{i:02}"), 1.55 + 0.03 * (i % 13) as f64, w, None).unwrap())
            .collect();
        let distinct: BTreeSet<u64> = subjects.iter().map(|s| s.bmi.to_bits()).collect();
        prop_assume!(distinct.len() >= 5);
        let classes = build_bmi_classes(&subjects, BmiClassMode::Bmi, true, seed).unwrap();
        prop_assert!(classes.class_mean_bmi.windows(2).all(|w| w[0] <= w[1]));
        for c in 0..classes.class_mean_bmi.len() {
            let members: Vec<f64> = subjects.iter().filter(|s| classes.class_of(&s.subject_id) == Some(c)).map(|s| s.bmi).collect();
            let mean = members.iter().sum::<f64>() / members.len() as f64;
            prop_assert!((mean - classes.class_mean_bmi[c]).abs() <= 1e-9);
        }
    }

    #[test]
    fn linreg_residuals_are_orthogonal(seed in any::<u64>(), n in 6usize..30, d in 1usize..5) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assume!(n > d + 1);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>() + rng.random_range(-1.0..1.0)).collect();
        let model = LinearRegression::fit(&x, &y).unwrap();
        let resid: Vec<f64> = model.predict(&x).iter().zip(&y).map(|(p, t)| t - p).collect();
        prop_assert!(resid.iter().sum::<f64>().abs() <= 1e-8);
        for j in 0..d {
            let dot: f64 = x.iter().zip(&resid).map(|(r, e)| r[j] * e).sum();
            prop_assert!(dot.abs() <= 1e-8, "column {}: {}", j, dot);
        }
    }
}

// ------------------------------------------------------------- evalharness

proptest! {
    #[test]
    fn folds_partition_frames(counts in prop::collection::vec(10usize..30, 1..5), folds in 2usize..10, seed in any::<u64>()) {
        let names: Vec<String> = (0..counts.len()).map(|i| format!("S{i}")).collect();
        let subjects: Vec<&str> = counts.iter().enumerate().flat_map(|(i, &c)| std::iter::repeat_n(names[i].as_str(), c)).collect();
        let plan = FoldPlan::new(&subjects, folds, seed).unwrap();
        let mut seen = vec![0usize; subjects.len()];
        for f in 0..folds {
            let test = plan.test_indices(f);
            let train = plan.train_indices(f);
            prop_assert_eq!(test.len() + train.len(), subjects.len());
            for &i in &test {
                seen[i] += 1;
            }
            // Every subject stays in every training split.
            let in_train: BTreeSet<&str> = train.iter().map(|&i| subjects[i]).collect();
            prop_assert_eq!(in_train.len(), counts.len());
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        prop_assert_eq!(FoldPlan::new(&subjects, folds, seed).unwrap(), plan);
    }

    #[test]
    fn confusion_total_is_test_size(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = ClassificationMetrics::compute(&pred, &truth, 4).unwrap();
        prop_assert_eq!(m.confusion.iter().flatten().sum::<u64>(), truth.len() as u64);
        for c in 0..4 {
            prop_assert_eq!(m.confusion[c].iter().sum::<u64>(), truth.iter().filter(|&&t| t == c).count() as u64);
        }
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
    }

    #[test]
    fn aggregate_is_the_fold_mean(accs in prop::collection::vec(0.0..=1.0f64, 2..12)) {
        let folds: Vec<FoldReport> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| FoldReport {
                fold: i,
                status: "ok".into(),
                error: None,
                n_train: 9,
                n_test: 1,
                metrics: [("identity_accuracy".to_string(), a)].into(),
                identity: None,
                bmi_class: None,
            })
            .collect();
        let report = EvaluationReport::assemble(serde_json::json!({}), folds);
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        prop_assert!((report.aggregate.mean["identity_accuracy"] - mean).abs() <= 1e-12);
        prop_assert_eq!(report.aggregate.std["identity_accuracy"], mean_std(&accs).1);
    }
}
