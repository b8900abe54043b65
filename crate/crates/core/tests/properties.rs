mod common;

use common::*;
use faer::Mat;
use omickriging::baseline::{ols, polygenic_score, principal_components, scan_rows, topk_selection, ScoreInputs, ScoreMode, Selection};
use omickriging::evaluation::{auc, fold_plans, partition, percentile, r_squared, summarize, EvaluationReport, CvSettings, Metric};
use omickriging::grid::{enumerate_grid, GridSpec};
use omickriging::io;
use omickriging::kriging::{krige_weights, predict_fold, KrigingMode, KrigingSystem};
use omickriging::model::{align_samples, OmicDataset, SampleIndexed, SampleRegistry, WeightConfig};
use omickriging::similarity::{build_correlation_similarity, build_grm, compose, unpack_index, CompositeSpec, GrmOptions, PairCounts};
use proptest::prelude::*;

fn dosage_rows() -> impl Strategy<Value = Vec<Vec<u8>>> {
    (2usize..12, 1usize..40).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(0u8..=2, m), n))
}

/// Random SPD matrix A·Aᵀ/n + 0.5·I as rows.
fn spd(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), n).prop_map(move |a| {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| dot(&a[i], &a[j]) / n as f64 + if i == j { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect()
    })
}

#[derive(Debug)]
struct KrigingCase {
    sigma: Vec<Vec<f64>>,
    y: Vec<f64>,
    x: Vec<f64>,
    with_covariate: bool,
    n_test: usize,
}

fn kriging_case() -> impl Strategy<Value = KrigingCase> {
    (4usize..=20)
        .prop_flat_map(|n| {
            (
                spd(n),
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(-2.0f64..2.0, n),
                any::<bool>(),
                1usize..n.min(6),
            )
        })
        .prop_map(|(sigma, y, x, with_covariate, n_test)| KrigingCase {
            sigma,
            y,
            x,
            with_covariate,
            n_test,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grm_equals_standardized_cross_product(rows in dosage_rows()) {
        let built = build_grm(&genotypes(&rows), &GrmOptions::default());
        match brute_force_grm(&rows) {
            None => prop_assert!(built.is_err()),
            Some(want) => {
                let g = built.unwrap().matrix;
                for i in 0..rows.len() {
                    for j in 0..rows.len() {
                        prop_assert!((g.get(i, j) - want[i][j]).abs() < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn correlation_ignores_row_shift_and_scale(
        rows in (2usize..8, 3usize..20).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(-5.0f64..5.0, m), n)),
        shift in -100.0f64..100.0,
        scale in 0.01f64..50.0,
        which in 0usize..8,
    ) {
        let n = rows.len();
        let which = which % n;
        let ds = |rows: &Vec<Vec<f64>>| OmicDataset::continuous(
            registry(n),
            (0..rows[0].len()).map(|l| format!("g{l}")).collect(),
            rows.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect(),
        ).unwrap();
        let base = build_correlation_similarity(&ds(&rows)).unwrap();
        let mut moved = rows.clone();
        for v in moved[which].iter_mut() {
            *v = *v * scale + shift;
        }
        let other = build_correlation_similarity(&ds(&moved)).unwrap();
        for i in 0..n {
            prop_assert_eq!(base.get(i, i), 1.0);
            for j in 0..n {
                prop_assert!((-1.0..=1.0).contains(&base.get(i, j)));
                prop_assert!((base.get(i, j) - other.get(i, j)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn compose_is_the_explicit_weighted_sum(
        (s1, s2) in (2usize..8).prop_flat_map(|n| (spd(n), spd(n))),
        t1 in 0.0f64..0.6,
        t2 in 0.0f64..0.4,
    ) {
        let a = similarity(mat(&s1));
        let b = similarity(mat(&s2));
        let c = compose(&CompositeSpec::new(vec![(&a, t1), (&b, t2)]).unwrap()).unwrap();
        let nugget = 1.0 - t1 - t2;
        for i in 0..s1.len() {
            for j in 0..s1.len() {
                let want = t1 * s1[i][j] + t2 * s2[i][j] + if i == j { nugget } else { 0.0 };
                prop_assert!((c.get(i, j) - want).abs() < 1e-12);
            }
            prop_assert!((c.get(i, i) - (t1 * s1[i][i] + t2 * s2[i][i] + nugget)).abs() < 1e-12);
        }
    }

    #[test]
    fn blup_oracle_and_unbiasedness(case in kriging_case()) {
        let n = case.sigma.len();
        let test: Vec<usize> = (0..case.n_test).collect();
        let train: Vec<usize> = (case.n_test..n).collect();
        let cohort = if case.with_covariate {
            quantitative(case.y.clone())
                .with_covariates(vec!["x".into()], Mat::from_fn(n, 1, |i, _| case.x[i]))
                .unwrap()
        } else {
            quantitative(case.y.clone())
        };
        let zrow = |i: usize| if case.with_covariate { vec![1.0, case.x[i]] } else { vec![1.0] };
        let p = zrow(0).len();
        prop_assume!(train.len() > p);
        let sigma_tr: Vec<Vec<f64>> = train.iter().map(|&i| train.iter().map(|&j| case.sigma[i][j]).collect()).collect();
        let z_tr: Vec<Vec<f64>> = train.iter().map(|&i| zrow(i)).collect();
        let y_tr: Vec<f64> = train.iter().map(|&i| case.y[i]).collect();
        // the covariate column may be (nearly) collinear with the intercept
        let gram = matmul(&transpose(&z_tr), &z_tr);
        let det = if p == 2 { gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0] } else { gram[0][0] };
        prop_assume!(det > 1e-3);

        let pred = predict_fold(&similarity(mat(&case.sigma)), &cohort, &train, &test, KrigingMode::Universal).unwrap();
        for (t, &i) in test.iter().enumerate() {
            let rho: Vec<f64> = train.iter().map(|&j| case.sigma[i][j]).collect();
            let want = blup(&sigma_tr, &z_tr, &y_tr, &rho, &zrow(i));
            prop_assert!((pred[t] - want).abs() < 1e-8, "{} vs {}", pred[t], want);

            let zm = mat(&z_tr);
            let zt = zrow(i);
            let w = krige_weights(&KrigingSystem {
                sigma_train: mat(&sigma_tr).as_ref(),
                rho: &rho,
                covariates: Some((zm.as_ref(), &zt)),
            }).unwrap();
            for c in 0..p {
                let s: f64 = (0..train.len()).map(|r| z_tr[r][c] * w[r]).sum();
                prop_assert!((s - zt[c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn direct_solve_matches_explicit_inverse(
        (sigma, rho) in (2usize..20).prop_flat_map(|n| (spd(n), prop::collection::vec(-1.0f64..1.0, n)))
    ) {
        let w = krige_weights(&KrigingSystem { sigma_train: mat(&sigma).as_ref(), rho: &rho, covariates: None }).unwrap();
        let want = matvec(&inverse(&sigma), &rho);
        for (a, b) in w.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn training_order_permutes_weights_not_predictions(
        case in kriging_case(),
        seed in any::<u64>(),
    ) {
        let n = case.sigma.len();
        let test: Vec<usize> = (0..case.n_test).collect();
        let mut train: Vec<usize> = (case.n_test..n).collect();
        prop_assume!(train.len() >= 2);
        let cohort = quantitative(case.y.clone());
        let sigma = similarity(mat(&case.sigma));
        let base = predict_fold(&sigma, &cohort, &train, &test, KrigingMode::Universal).unwrap();
        let weights = |order: &[usize]| {
            let s = Mat::from_fn(order.len(), order.len(), |a, b| case.sigma[order[a]][order[b]]);
            let rho: Vec<f64> = order.iter().map(|&j| case.sigma[test[0]][j]).collect();
            let ones = Mat::from_fn(order.len(), 1, |_, _| 1.0);
            krige_weights(&KrigingSystem { sigma_train: s.as_ref(), rho: &rho, covariates: Some((ones.as_ref(), &[1.0])) }).unwrap()
        };
        let w0 = weights(&train);
        let original = train.clone();
        let mut state = seed;
        for i in (1..train.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            train.swap(i, (state >> 33) as usize % (i + 1));
        }
        let permuted = predict_fold(&sigma, &cohort, &train, &test, KrigingMode::Universal).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let w1 = weights(&train);
        for (pos, &j) in train.iter().enumerate() {
            let orig = original.iter().position(|&o| o == j).unwrap();
            prop_assert!((w1[pos] - w0[orig]).abs() < 1e-10);
        }
    }

    #[test]
    fn auc_matches_pair_counting_and_symmetries(
        scores in prop::collection::vec(-1000i32..1000, 2..30),
        labels in prop::collection::vec(any::<bool>(), 30),
    ) {
        let n = scores.len();
        let mut labels: Vec<f64> = labels[..n].iter().map(|&b| f64::from(u8::from(b))).collect();
        labels[0] = 1.0;
        labels[1] = 0.0;
        let pred: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
        let a = auc(&pred, &labels).unwrap();
        prop_assert_eq!(a, pair_count_auc(&pred, &labels));
        let neg: Vec<f64> = pred.iter().map(|v| -v).collect();
        let mut distinct = scores.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() == n {
            prop_assert_eq!(a + auc(&neg, &labels).unwrap(), 1.0);
        }
        let cubed: Vec<f64> = pred.iter().map(|v| v * v * v + 2.0 * v + 7.0).collect();
        prop_assert_eq!(a, auc(&cubed, &labels).unwrap());
    }

    #[test]
    fn r_squared_is_affine_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        slope in 0.01f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(pearson(&x, &y).is_finite());
        let moved: Vec<f64> = x.iter().map(|v| slope * v + shift).collect();
        for signed in [true, false] {
            let a = r_squared(&x, &y, signed).unwrap();
            prop_assert!((a - r_squared(&moved, &y, signed).unwrap()).abs() < 1e-9);
            prop_assert!((a - r_squared(&y, &moved, signed).unwrap()).abs() < 1e-9);
            let r = pearson(&x, &y);
            let want = if signed { r.signum() * r * r } else { r * r };
            prop_assert!((a - want).abs() < 1e-12);
        }
    }

    #[test]
    fn partitions_are_balanced_and_complete(n in 2usize..200, k in 2usize..40, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let p = partition(n, k, seed).unwrap();
        prop_assert_eq!(p.assignments.len(), n);
        prop_assert!(p.assignments.iter().all(|&f| f < k));
        let sizes = p.fold_sizes();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
    }

    #[test]
    fn percentile_interval_covers_95_percent(values in prop::collection::vec(-5.0f64..5.0, 40..300)) {
        let (mean, [lo, hi]) = summarize(&values).unwrap();
        let inside = values.iter().filter(|&&v| v >= lo && v <= hi).count();
        prop_assert!(inside as f64 >= 0.95 * values.len() as f64);
        prop_assert!(lo <= mean && mean <= hi);
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(percentile(&sorted, 0.0), sorted[0]);
        prop_assert_eq!(percentile(&sorted, 1.0), *sorted.last().unwrap());
    }

    #[test]
    fn grid_points_stay_on_the_simplex(components in 1usize..4, levels in 1usize..12) {
        let names: Vec<String> = (0..components).map(|i| format!("c{i}")).collect();
        let grid = enumerate_grid(&GridSpec::new(names, 1.0 / levels as f64).unwrap());
        // number of lattice points with Σ ≤ L is C(L + d, d)
        let mut count = 1usize;
        for i in 1..=components {
            count = count * (levels + i) / i;
        }
        prop_assert_eq!(grid.len(), count);
        for w in &grid {
            prop_assert!(w.theta_sum() <= 1.0 + 1e-12);
            prop_assert!(w.thetas().iter().all(|&t| t >= 0.0));
        }
    }

    #[test]
    fn alignment_is_idempotent_and_keeps_values(
        keep_a in prop::collection::vec(any::<bool>(), 12),
        keep_b in prop::collection::vec(any::<bool>(), 12),
    ) {
        let pick = |keep: &[bool]| -> Vec<usize> { (0..12).filter(|&i| keep[i]).collect() };
        let (a, b) = (pick(&keep_a), pick(&keep_b));
        prop_assume!(a.iter().any(|i| b.contains(i)));
        let cohort = |idx: &[usize]| {
            let reg = SampleRegistry::new(idx.iter().rev().map(|i| format!("id{i:02}")).collect()).unwrap();
            omickriging::model::Cohort::new(reg, idx.iter().rev().map(|&i| i as f64 * 1.5).collect(), omickriging::model::TraitKind::Quantitative).unwrap()
        };
        let (reg, once) = align_samples(&[cohort(&a), cohort(&b)]).unwrap();
        let (reg2, twice) = align_samples(&once).unwrap();
        prop_assert_eq!(&reg, &reg2);
        for (x, y) in once.iter().zip(&twice) {
            prop_assert_eq!(x.phenotype(), y.phenotype());
            prop_assert_eq!(x.registry(), y.registry());
        }
        for (pos, id) in reg.ids().iter().enumerate() {
            let i: usize = id[2..].parse().unwrap();
            prop_assert_eq!(once[0].phenotype()[pos], i as f64 * 1.5);
            prop_assert_eq!(once[1].phenotype()[pos], i as f64 * 1.5);
        }
        prop_assert!(reg.ids().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn grm_bytes_follow_the_packed_layout(s in (1usize..30).prop_flat_map(spd)) {
        let dir = tempfile::tempdir().unwrap();
        let n = s.len();
        let files = io::write_grm_gcta(&similarity(mat(&s)), &PairCounts::uniform(n, 7), dir.path().join("g")).unwrap();
        let bytes = std::fs::read(&files.bin_file).unwrap();
        prop_assert_eq!(bytes.len() as u64, io::grm_bin_len(n));
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let i = (((8 * k + 1) as f64).sqrt() as usize - 1) / 2;
            let j = k - i * (i + 1) / 2;
            prop_assert_eq!((i, j), unpack_index(k));
            prop_assert_eq!(f32::from_le_bytes(chunk.try_into().unwrap()), s[i][j] as f32);
        }
        let (back, counts) = io::read_grm_gcta(dir.path().join("g")).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((back.get(i, j) - s[i][j]).abs() <= 1e-6 * s[i][j].abs().max(1e-30));
            }
        }
        prop_assert_eq!(counts.unwrap().get(n - 1, 0), 7.0);
    }

    #[test]
    fn tsv_round_trips(
        rows in (1usize..10, 1usize..8).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, -1e6f64..1e6), m), n)),
        dosages in (1usize..10, 1usize..8).prop_flat_map(|(n, m)| prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 0.0f64..=2.0), m), n)),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let cont = OmicDataset::continuous(registry(rows.len()), (0..rows[0].len()).map(|l| format!("f{l}")).collect(), rows.clone()).unwrap();
        io::write_omic_tsv(&cont, dir.path().join("c.tsv")).unwrap();
        let back = io::read_continuous_tsv(dir.path().join("c.tsv")).unwrap();
        prop_assert_eq!(back.registry(), cont.registry());
        for (i, r) in rows.iter().enumerate() {
            for (l, v) in r.iter().enumerate() {
                prop_assert_eq!(back.get(i, l), *v);
            }
        }
        let geno = OmicDataset::genotype(registry(dosages.len()), (0..dosages[0].len()).map(|l| format!("rs{l}")).collect(), dosages.clone()).unwrap();
        io::write_omic_tsv(&geno, dir.path().join("d.tsv")).unwrap();
        let back = io::read_dosage_tsv(dir.path().join("d.tsv")).unwrap();
        prop_assert_eq!(back.allele_freqs(), geno.allele_freqs());
        for (i, r) in dosages.iter().enumerate() {
            for (l, v) in r.iter().enumerate() {
                prop_assert_eq!(back.get(i, l), *v);
            }
        }
    }

    #[test]
    fn report_json_round_trips(
        values in prop::collection::vec(prop::option::weighted(0.9, -1.0f64..1.0), 1..30),
        seed in any::<u64>(),
        theta in 0.0f64..1.0,
    ) {
        let plans = fold_plans(8, 4, values.len(), seed).unwrap();
        let report = EvaluationReport::from_values(
            values,
            &plans,
            seed,
            &CvSettings { metric: Metric::R2Signed, mode: KrigingMode::Universal },
            &WeightConfig::new(vec![("grm".into(), theta)]).unwrap(),
            ids(8),
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        io::write_report_json(&report, &p).unwrap();
        let back = io::read_report_json(&p).unwrap();
        prop_assert_eq!(&back, &report);
        prop_assert_eq!(io::to_json_string(&back).unwrap(), std::fs::read_to_string(&p).unwrap());
    }

    #[test]
    fn principal_components_are_eigenvectors(s in (3usize..15).prop_flat_map(spd), k in 1usize..3) {
        let g = similarity(mat(&s));
        let pcs = principal_components(&g, k).unwrap();
        let norm = s.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..k {
            let v = pcs.vectors.col_as_slice(c);
            let gv = matvec(&s, v);
            for (a, b) in gv.iter().zip(v) {
                prop_assert!((a - pcs.eigenvalues[c] * b).abs() < 1e-6 * norm);
            }
            prop_assert!((dot(v, v) - 1.0).abs() < 1e-8);
            let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            prop_assert!(lead > 0.0);
            if c > 0 {
                prop_assert!(pcs.eigenvalues[c] <= pcs.eigenvalues[c - 1]);
            }
        }
    }

    #[test]
    fn joint_fit_matches_normal_equations(
        (x, y) in (8usize..25).prop_flat_map(|n| (prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), n), prop::collection::vec(-3.0f64..3.0, n))),
    ) {
        let design: Vec<Vec<f64>> = x.iter().map(|r| { let mut v = vec![1.0]; v.extend(r); v }).collect();
        let xtx = matmul(&transpose(&design), &design);
        let det_guard = inverse(&xtx);
        prop_assume!(det_guard.iter().flatten().all(|v| v.is_finite() && v.abs() < 1e6));
        let want = matvec(&det_guard, &matvec(&transpose(&design), &y));
        let got = ols(mat(&design).as_ref(), &y).unwrap();
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn single_marker_joint_and_marginal_differ_by_a_constant(
        rows in prop::collection::vec((0u8..=2, -3.0f64..3.0), 8..30),
    ) {
        let n = rows.len();
        let data = genotypes(&rows.iter().map(|r| vec![r.0]).collect::<Vec<_>>());
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let train: Vec<usize> = (0..n).filter(|i| i % 4 != 0).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % 4 == 0).collect();
        let xs: Vec<f64> = train.iter().map(|&i| f64::from(rows[i].0)).collect();
        prop_assume!(xs.iter().any(|&v| v != xs[0]));
        let inputs = ScoreInputs { data: &data, phenotype: &y, pcs: None };
        let joint = polygenic_score(&inputs, &train, &test, &[0], ScoreMode::Joint).unwrap();
        let marginal = polygenic_score(&inputs, &train, &test, &[0], ScoreMode::Marginal).unwrap();
        let offset = joint[0] - marginal[0];
        for (j, m) in joint.iter().zip(&marginal) {
            prop_assert!((j - m - offset).abs() < 1e-10);
        }
    }

    #[test]
    fn fold_selection_ignores_test_rows(
        rows in prop::collection::vec((prop::collection::vec(0u8..=2, 6), -3.0f64..3.0), 10..30),
        k in 1usize..4,
    ) {
        let n = rows.len();
        let full = genotypes(&rows.iter().map(|r| r.0.clone()).collect::<Vec<_>>());
        let y: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let train: Vec<usize> = (0..n).filter(|i| i % 3 != 0).collect();
        let from_full = topk_selection(&scan_rows(&full, &y, &train), Selection::TopK(k));
        let reduced = genotypes(&train.iter().map(|&i| rows[i].0.clone()).collect::<Vec<_>>());
        let y_tr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let all: Vec<usize> = (0..train.len()).collect();
        let from_reduced = topk_selection(&scan_rows(&reduced, &y_tr, &all), Selection::TopK(k));
        prop_assert_eq!(from_full, from_reduced);
    }
}

#[test]
fn registries_reindex_by_id() {
    let c = quantitative(vec![1.0, 2.0, 3.0]);
    let target = SampleRegistry::new(vec!["s002".into(), "s000".into()]).unwrap();
    assert_eq!(c.reindex(&target).unwrap().phenotype(), &[3.0, 1.0]);
}
