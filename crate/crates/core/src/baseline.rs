//! Polygenic-score baseline: per-marker association scan, principal
//! components of a GRM, and fold-wise score construction.
//!
//! Marker selection always runs on the training rows of a fold. Principal
//! components are computed once from the full-cohort GRM.

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::evaluation::{defined_metric, fold_plans, CvSettings, EvaluationReport, Metric};
use crate::kriging::KrigingMode;
use crate::model::{Cohort, OmicDataset, SimilarityMatrix, WeightConfig};

/// Smallest-to-largest eigenvalue ratio below which XᵀX is rank deficient.
const DESIGN_RANK_TOL: f64 = 1e-12;
/// Relative gap below which two eigenvalues count as tied.
const SPECTRUM_TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationResult {
    pub marker_id: String,
    pub marker_index: usize,
    pub beta: f64,
    pub se: f64,
    pub t_stat: f64,
    pub p_value: f64,
    /// Complete observations used.
    pub n: usize,
}

/// Simple linear regression of the phenotype on each marker, using all
/// samples. `data` and `cohort` must share a registry.
pub fn univariate_scan(data: &OmicDataset, cohort: &Cohort) -> Result<Vec<AssociationResult>> {
    if data.registry() != cohort.registry() {
        return Err(Error::RegistryMismatch);
    }
    let rows: Vec<usize> = (0..cohort.len()).collect();
    Ok(scan_rows(data, cohort.phenotype(), &rows))
}

/// Association scan restricted to `rows`. Markers with zero variance or
/// fewer than three complete observations in those rows are skipped.
pub fn scan_rows(data: &OmicDataset, phenotype: &[f64], rows: &[usize]) -> Vec<AssociationResult> {
    let values = data.values();
    let results: Vec<Option<AssociationResult>> = (0..data.n_markers())
        .into_par_iter()
        .map(|l| {
            let col = values.col_as_slice(l);
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .filter(|&&i| !col[i].is_nan())
                .map(|&i| (col[i], phenotype[i]))
                .collect();
            regress(&pairs).map(|(beta, se, t_stat, p_value)| AssociationResult {
                marker_id: data.marker_ids()[l].clone(),
                marker_index: l,
                beta,
                se,
                t_stat,
                p_value,
                n: pairs.len(),
            })
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    if skipped > 0 {
        log::warn!("association scan skipped {skipped} markers with zero variance or too few values");
    }
    results.into_iter().flatten().collect()
}

/// (β, se, t, two-sided p) of y on x with an intercept.
fn regress(pairs: &[(f64, f64)]) -> Option<(f64, f64, f64, f64)> {
    let n = pairs.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return None;
    }
    let beta = sxy / sxx;
    let rss = (syy - beta * sxy).max(0.0);
    let df = nf - 2.0;
    let se = (rss / df / sxx).sqrt();
    let t_stat = beta / se;
    let p_value = if se == 0.0 {
        if beta == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t_stat.abs())).clamp(0.0, 1.0)
    };
    let t_stat = if se == 0.0 && beta == 0.0 { 0.0 } else { t_stat };
    Some((beta, se, t_stat, p_value))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The k markers with the smallest p-values.
    TopK(usize),
    /// Markers with p < alpha / (number of scanned markers).
    Bonferroni(f64),
}

/// Selected marker indices, ordered by ascending p-value with ties broken
/// by marker id.
pub fn topk_selection(scan: &[AssociationResult], selection: Selection) -> Vec<usize> {
    let mut order: Vec<&AssociationResult> = scan.iter().collect();
    order.sort_by(|a, b| {
        a.p_value
            .total_cmp(&b.p_value)
            .then_with(|| a.marker_id.cmp(&b.marker_id))
    });
    match selection {
        Selection::TopK(k) => order.iter().take(k).map(|r| r.marker_index).collect(),
        Selection::Bonferroni(alpha) => {
            let threshold = bonferroni_threshold(alpha, scan.len());
            order
                .iter()
                .take_while(|r| r.p_value < threshold)
                .map(|r| r.marker_index)
                .collect()
        }
    }
}

pub fn bonferroni_threshold(alpha: f64, n_markers: usize) -> f64 {
    alpha / n_markers.max(1) as f64
}

#[derive(Debug, Clone)]
pub struct PrincipalComponents {
    /// n × n_pcs, unit-norm columns by descending eigenvalue.
    pub vectors: Mat<f64>,
    pub eigenvalues: Vec<f64>,
    /// Some selected eigenvalue is tied with a neighbour, so the basis of
    /// that eigenspace is arbitrary.
    pub degenerate: bool,
}

/// Leading eigenvectors of a GRM. Each vector is signed so its
/// largest-magnitude entry is positive.
pub fn principal_components(grm: &SimilarityMatrix, n_pcs: usize) -> Result<PrincipalComponents> {
    let n = grm.dim();
    if n_pcs >= n {
        return Err(Error::Validation(format!(
            "{n_pcs} principal components requested for {n} samples"
        )));
    }
    let eig = grm
        .values()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|_| Error::ConvergenceFailure)?;
    let s = eig.S();
    let u = eig.U();
    let all: Vec<f64> = (0..n).map(|i| s[i]).rev().collect();
    let scale = all.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let upper = (n_pcs + 1).min(n);
    let degenerate = n_pcs > 0
        && all[..upper]
            .windows(2)
            .any(|w| (w[0] - w[1]).abs() <= SPECTRUM_TIE_TOL * scale);
    if degenerate {
        log::warn!("degenerate spectrum: leading principal components are not unique");
    }
    let mut vectors = Mat::from_fn(n, n_pcs, |i, c| u[(i, n - 1 - c)]);
    for c in 0..n_pcs {
        let col = vectors.col_as_slice(c);
        let lead = col
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if lead < 0.0 {
            vectors.col_as_slice_mut(c).iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(PrincipalComponents {
        vectors,
        eigenvalues: all[..n_pcs].to_vec(),
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Σ_l dosage·β̂_l with univariate training effect sizes.
    Marginal,
    /// OLS of Y on [1, PCs, dosages] in training rows, applied to test rows.
    Joint,
}

/// Ordinary least squares coefficients via the normal equations.
pub fn ols(x: MatRef<'_, f64>, y: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("{n} design rows, {} responses", y.len())));
    }
    let xtx = x.transpose() * x;
    let ev = xtx
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::ConvergenceFailure)?;
    let max = ev.last().copied().unwrap_or(0.0);
    if p > 0 && (ev[0] <= DESIGN_RANK_TOL * max || max <= 0.0) {
        return Err(Error::RankDeficientDesign);
    }
    let yv = MatRef::from_column_major_slice(y, n, 1);
    let mut rhs = x.transpose() * yv;
    let llt = xtx.llt(Side::Lower).map_err(|_| Error::RankDeficientDesign)?;
    llt.solve_in_place(rhs.as_mut());
    Ok(rhs.col_as_slice(0).to_vec())
}

/// Marker values of `rows` with missing cells set to the training mean of
/// that marker.
fn marker_block(data: &OmicDataset, rows: &[usize], markers: &[usize], train: &[usize]) -> Mat<f64> {
    let values = data.values();
    let fill: Vec<f64> = markers
        .iter()
        .map(|&l| {
            let col = values.col_as_slice(l);
            let (s, c) = train
                .iter()
                .filter(|&&i| !col[i].is_nan())
                .fold((0.0, 0usize), |(s, c), &i| (s + col[i], c + 1));
            if c == 0 {
                0.0
            } else {
                s / c as f64
            }
        })
        .collect();
    Mat::from_fn(rows.len(), markers.len(), |r, c| {
        let v = values[(rows[r], markers[c])];
        if v.is_nan() {
            fill[c]
        } else {
            v
        }
    })
}

/// Inputs shared by every fold of a polygenic-score evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ScoreInputs<'a> {
    pub data: &'a OmicDataset,
    pub phenotype: &'a [f64],
    /// Full-cohort principal components (n × n_pcs), used in Joint mode.
    pub pcs: Option<MatRef<'a, f64>>,
}

/// Predictions for `test` from a score fitted on `train` over `selected`
/// markers. Marginal mode does not use the principal components.
pub fn polygenic_score(
    inputs: &ScoreInputs<'_>,
    train: &[usize],
    test: &[usize],
    selected: &[usize],
    mode: ScoreMode,
) -> Result<Vec<f64>> {
    match mode {
        ScoreMode::Marginal => {
            if selected.is_empty() {
                return Err(Error::EmptyMarkerSet);
            }
            let values = inputs.data.values();
            let betas: Vec<f64> = selected
                .iter()
                .map(|&l| {
                    let col = values.col_as_slice(l);
                    let pairs: Vec<(f64, f64)> = train
                        .iter()
                        .filter(|&&i| !col[i].is_nan())
                        .map(|&i| (col[i], inputs.phenotype[i]))
                        .collect();
                    regress(&pairs).map_or(0.0, |r| r.0)
                })
                .collect();
            let block = marker_block(inputs.data, test, selected, train);
            Ok((0..test.len())
                .map(|r| (0..selected.len()).map(|c| block[(r, c)] * betas[c]).sum())
                .collect())
        }
        ScoreMode::Joint => {
            let n_pcs = inputs.pcs.map_or(0, |p| p.ncols());
            let p = 1 + n_pcs + selected.len();
            if train.len() <= p {
                return Err(Error::InsufficientSamples(format!(
                    "joint fit of {p} coefficients needs more than {} training samples",
                    train.len()
                )));
            }
            let design = |rows: &[usize]| {
                let block = marker_block(inputs.data, rows, selected, train);
                Mat::from_fn(rows.len(), p, |r, c| match c {
                    0 => 1.0,
                    c if c <= n_pcs => inputs.pcs.expect("n_pcs > 0")[(rows[r], c - 1)],
                    c => block[(r, c - 1 - n_pcs)],
                })
            };
            let y: Vec<f64> = train.iter().map(|&i| inputs.phenotype[i]).collect();
            let beta = ols(design(train).as_ref(), &y)?;
            let xt = design(test);
            Ok((0..test.len())
                .map(|r| (0..p).map(|c| xt[(r, c)] * beta[c]).sum())
                .collect())
        }
    }
}

/// Settings of a fold-wise polygenic-score evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolyscoreSettings {
    pub selection: Selection,
    pub mode: ScoreMode,
    pub metric: Metric,
}

/// Predictions of one repeat: every fold scans and selects markers on its
/// own training rows, then scores its test rows.
pub fn polyscore_repeat(
    inputs: &ScoreInputs<'_>,
    assignments: &[usize],
    k: usize,
    settings: &PolyscoreSettings,
) -> Result<Vec<f64>> {
    let n = assignments.len();
    let mut predictions = vec![f64::NAN; n];
    for f in 0..k {
        let (train, test): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| assignments[i] != f);
        if test.is_empty() {
            continue;
        }
        let scan = scan_rows(inputs.data, inputs.phenotype, &train);
        let selected = topk_selection(&scan, settings.selection);
        let fold_pred = match polygenic_score(inputs, &train, &test, &selected, settings.mode) {
            Err(Error::EmptyMarkerSet) => {
                log::debug!("fold {f}: no markers selected, empty score");
                vec![0.0; test.len()]
            }
            other => other?,
        };
        for (&i, p) in test.iter().zip(fold_pred) {
            predictions[i] = p;
        }
    }
    Ok(predictions)
}

/// Repeated fold-wise evaluation of the polygenic score, with the same
/// partitions as kriging under the same master seed.
pub fn polyscore_cv(
    data: &OmicDataset,
    cohort: &Cohort,
    pcs: Option<&Mat<f64>>,
    settings: &PolyscoreSettings,
    k: usize,
    n_repeats: usize,
    master_seed: u64,
) -> Result<(EvaluationReport, Vec<f64>)> {
    if data.registry() != cohort.registry() {
        return Err(Error::RegistryMismatch);
    }
    if n_repeats == 0 {
        return Err(Error::Validation("n_repeats must be at least 1".into()));
    }
    let plans = fold_plans(cohort.len(), k, n_repeats, master_seed)?;
    let inputs = ScoreInputs {
        data,
        phenotype: cohort.phenotype(),
        pcs: pcs.map(|p| p.as_ref()),
    };
    let outcomes: Vec<(Option<f64>, Vec<f64>)> = plans
        .par_iter()
        .map(|plan| {
            let pred = polyscore_repeat(&inputs, &plan.assignments, plan.k, settings)?;
            let v = defined_metric(settings.metric, &pred, cohort.phenotype(), plan.repeat_index)?;
            Ok((v, pred))
        })
        .collect::<Result<_>>()?;
    let first = outcomes[0].1.clone();
    let values = outcomes.into_iter().map(|o| o.0).collect();
    let cv = CvSettings {
        metric: settings.metric,
        mode: KrigingMode::Simple,
    };
    let mut report = EvaluationReport::from_values(
        values,
        &plans,
        master_seed,
        &cv,
        &WeightConfig::zeros::<&str>(&[]),
        cohort.registry().ids().to_vec(),
    );
    report.kriging_mode = match settings.mode {
        ScoreMode::Marginal => "polyscore_marginal".into(),
        ScoreMode::Joint => "polyscore_joint".into(),
    };
    Ok((report, first))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Provenance, SampleRegistry, TraitKind};

    fn dataset(rows: Vec<Vec<f64>>) -> OmicDataset {
        let n = rows.len();
        let m = rows[0].len();
        OmicDataset::continuous(
            SampleRegistry::new((0..n).map(|i| format!("s{i}")).collect()).unwrap(),
            (0..m).map(|l| format!("m{l}")).collect(),
            rows.into_iter()
                .map(|r| r.into_iter().map(Some).collect())
                .collect(),
        )
        .unwrap()
    }

    fn cohort(y: Vec<f64>) -> Cohort {
        let reg = SampleRegistry::new((0..y.len()).map(|i| format!("s{i}")).collect()).unwrap();
        Cohort::new(reg, y, TraitKind::Quantitative).unwrap()
    }

    #[test]
    fn exact_fit_has_zero_p_value() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = dataset(x.iter().map(|&v| vec![v]).collect());
        let c = cohort(x.iter().map(|v| 2.0 * v).collect());
        let r = &univariate_scan(&d, &c).unwrap()[0];
        assert!((r.beta - 2.0).abs() < 1e-12);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn six_point_least_squares() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let y = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0];
        let d = dataset(x.iter().map(|&v| vec![v]).collect());
        let r = &univariate_scan(&d, &cohort(y.to_vec())).unwrap()[0];
        // Sxx = 17.5, Sxy = 14.5, Syy = 17.5
        let beta: f64 = 14.5 / 17.5;
        let se = ((17.5 - beta * 14.5) / 4.0 / 17.5).sqrt();
        let t = beta / se;
        // Student t CDF with 4 degrees of freedom in closed form
        let u = 1.0 + t * t / 4.0;
        let cdf = 0.5 + 0.375 * (t / u.sqrt()) * (1.0 - t * t / (12.0 * u));
        assert!((r.beta - beta).abs() < 1e-12);
        assert!((r.se - se).abs() < 1e-12);
        assert!((r.t_stat - t).abs() < 1e-10);
        assert!((r.p_value - 2.0 * (1.0 - cdf)).abs() < 1e-10);
        assert!((r.p_value - 0.041_562_682_215_743).abs() < 1e-9);
    }

    #[test]
    fn zero_variance_marker_is_skipped() {
        let d = dataset(vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 0.5]]);
        let scan = univariate_scan(&d, &cohort(vec![1.0, 2.0, 0.0, 3.0])).unwrap();
        assert_eq!(scan.len(), 1);
        assert_eq!(scan[0].marker_index, 1);
    }

    fn result(id: &str, index: usize, p: f64) -> AssociationResult {
        AssociationResult {
            marker_id: id.into(),
            marker_index: index,
            beta: 0.0,
            se: 1.0,
            t_stat: 0.0,
            p_value: p,
            n: 10,
        }
    }

    #[test]
    fn selection_rules() {
        let scan = vec![result("b", 0, 0.01), result("a", 1, 0.01), result("c", 2, 0.5)];
        assert_eq!(topk_selection(&scan, Selection::TopK(1)), vec![1]);
        assert_eq!(topk_selection(&scan, Selection::TopK(10)), vec![1, 0, 2]);
        assert_eq!(bonferroni_threshold(0.05, 100), 5e-4);
        assert_eq!(topk_selection(&scan, Selection::Bonferroni(0.06)), vec![1, 0]);
        assert!(topk_selection(&scan, Selection::Bonferroni(0.03)).is_empty());
    }

    fn sim(values: Mat<f64>) -> SimilarityMatrix {
        let reg = SampleRegistry::new((0..values.nrows()).map(|i| format!("s{i}")).collect()).unwrap();
        SimilarityMatrix::new(reg, values, Provenance::Loaded, None).unwrap()
    }

    #[test]
    fn block_grm_first_pc_separates_groups() {
        let group = |i: usize| usize::from(i >= 3);
        let g = sim(Mat::from_fn(6, 6, |i, j| {
            if group(i) == group(j) {
                if i < 3 { 2.0 } else { 1.0 }
            } else {
                0.0
            }
        }));
        let pcs = principal_components(&g, 2).unwrap();
        let v = pcs.vectors.col_as_slice(0);
        assert!(v[..3].iter().all(|&x| (x - 1.0 / 3f64.sqrt()).abs() < 1e-10));
        assert!(v[3..].iter().all(|&x| x.abs() < 1e-10));
        assert!((pcs.eigenvalues[0] - 6.0).abs() < 1e-10);
        assert!((pcs.eigenvalues[1] - 3.0).abs() < 1e-10);
        assert!(!pcs.degenerate);
    }

    #[test]
    fn identity_grm_is_degenerate_but_orthonormal() {
        let pcs = principal_components(&SimilarityMatrix::identity(
            SampleRegistry::new((0..5).map(|i| format!("s{i}")).collect()).unwrap(),
        ), 3)
        .unwrap();
        assert!(pcs.degenerate);
        let vtv = pcs.vectors.transpose() * &pcs.vectors;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[(i, j)] - want).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn too_many_pcs() {
        let g = SimilarityMatrix::identity(SampleRegistry::from_strs(&["a", "b"]).unwrap());
        assert!(matches!(principal_components(&g, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn marginal_single_snp_scores() {
        // training rows 0..4 give y = 0.5·x exactly
        let x = [0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0];
        let d = dataset(x.iter().map(|&v| vec![v]).collect());
        let y: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
        let inputs = ScoreInputs { data: &d, phenotype: &y, pcs: None };
        let p = polygenic_score(&inputs, &[0, 1, 2, 3], &[4, 5, 6], &[0], ScoreMode::Marginal).unwrap();
        for (a, b) in p.iter().zip([0.0, 0.5, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(matches!(
            polygenic_score(&inputs, &[0, 1, 2, 3], &[4], &[], ScoreMode::Marginal),
            Err(Error::EmptyMarkerSet)
        ));
    }

    #[test]
    fn joint_intercept_only_predicts_training_mean() {
        let d = dataset(vec![vec![0.0]; 5]);
        let y = vec![1.0, 2.0, 6.0, 100.0, -50.0];
        let inputs = ScoreInputs { data: &d, phenotype: &y, pcs: None };
        let p = polygenic_score(&inputs, &[0, 1, 2], &[3, 4], &[], ScoreMode::Joint).unwrap();
        assert!(p.iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn joint_requires_enough_rows_and_full_rank() {
        let d = dataset(vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0], vec![0.0, 0.0], vec![5.0, 10.0]]);
        let y = vec![1.0, 0.0, 2.0, 1.0, 3.0];
        let inputs = ScoreInputs { data: &d, phenotype: &y, pcs: None };
        assert!(matches!(
            polygenic_score(&inputs, &[0, 1, 2], &[4], &[0, 1], ScoreMode::Joint),
            Err(Error::InsufficientSamples(_))
        ));
        assert!(matches!(
            polygenic_score(&inputs, &[0, 1, 2, 3], &[4], &[0, 1], ScoreMode::Joint),
            Err(Error::RankDeficientDesign)
        ));
    }
}
