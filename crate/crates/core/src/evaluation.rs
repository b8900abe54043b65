//! Repeated k-fold cross-validation of kriging predictions and the
//! prediction-performance metrics (signed/plain R², AUC).
//!
//! One repeat = one random partition into k folds. Out-of-sample
//! predictions from all folds are concatenated and a single metric value is
//! computed over the full vector. Repeat r draws its partition from a seed
//! derived from `(master_seed, r)` alone, so results do not depend on the
//! number of worker threads or on how many repeats are requested.

use faer::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kriging::{design_matrix, predict_fold_with_design, KrigingMode};
use crate::model::{Cohort, SimilarityMatrix, TraitKind, WeightConfig};

pub const DEFAULT_FOLDS: usize = 16;
pub const DEFAULT_REPEATS: usize = 500;
pub const CI_LOWER: f64 = 0.025;
pub const CI_UPPER: f64 = 0.975;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// sign(r)·r², r the Pearson correlation of predicted and true values.
    R2Signed,
    /// r².
    R2Plain,
    /// Area under the ROC curve (Mann–Whitney form).
    Auc,
}

impl Metric {
    pub fn default_for(kind: TraitKind) -> Self {
        match kind {
            TraitKind::Quantitative => Metric::R2Signed,
            TraitKind::Binary => Metric::Auc,
        }
    }

    pub fn compute(self, pred: &[f64], truth: &[f64]) -> Result<f64> {
        match self {
            Metric::R2Signed => r_squared(pred, truth, true),
            Metric::R2Plain => r_squared(pred, truth, false),
            Metric::Auc => auc(pred, truth),
        }
    }
}

/// Assignment of every sample to one of k folds for a single repeat.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub repeat_index: usize,
}

impl FoldPlan {
    pub fn n(&self) -> usize {
        self.assignments.len()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }

    /// (training, test) index lists of fold `f`, both ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n()).partition(|&i| self.assignments[i] != f)
    }
}

/// Seeded shuffle followed by round-robin slicing, so fold sizes differ by
/// at most one.
pub fn partition(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::BadFoldCount { n, k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (pos, &sample) in order.iter().enumerate() {
        assignments[sample] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
        repeat_index: 0,
    })
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of repeat `r` under `master_seed`.
pub fn repeat_seed(master_seed: u64, r: usize) -> u64 {
    splitmix64(splitmix64(master_seed) ^ (r as u64))
}

/// Fold plans for repeats `0..n_repeats`.
pub fn fold_plans(n: usize, k: usize, n_repeats: usize, master_seed: u64) -> Result<Vec<FoldPlan>> {
    (0..n_repeats)
        .map(|r| {
            let mut plan = partition(n, k, repeat_seed(master_seed, r))?;
            plan.repeat_index = r;
            Ok(plan)
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} observations",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::TooFewValues {
            needed: 3,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ConstantVector);
    }
    if !(sxx.is_finite() && syy.is_finite() && sxy.is_finite()) {
        return Err(Error::Validation("non-finite values in metric input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Squared Pearson correlation; with `signed`, multiplied by sign(r).
pub fn r_squared(pred: &[f64], truth: &[f64], signed: bool) -> Result<f64> {
    let r = pearson(pred, truth)?;
    Ok(if signed { r.signum() * r * r } else { r * r })
}

/// Fraction of (case, control) pairs where the case scores higher, ties
/// counting one half. Counts are kept in integers, so the value is the
/// exact ratio rounded once.
pub fn auc(pred: &[f64], labels: &[f64]) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    if pred.iter().any(|p| p.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l != 0.0 && l != 1.0) {
        return Err(Error::Validation(format!("label {l} is not 0/1")));
    }
    let cases = labels.iter().filter(|&&l| l == 1.0).count() as u128;
    let controls = labels.len() as u128 - cases;
    if cases == 0 || controls == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[a].total_cmp(&pred[b]));
    let (mut wins, mut ties, mut controls_below) = (0u128, 0u128, 0u128);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        let (mut c, mut d) = (0u128, 0u128);
        while end < order.len() && pred[order[end]] == pred[order[start]] {
            if labels[order[end]] == 1.0 {
                c += 1;
            } else {
                d += 1;
            }
            end += 1;
        }
        wins += c * controls_below;
        ties += c * d;
        controls_below += d;
        start = end;
    }
    Ok((2 * wins + ties) as f64 / (2 * cases * controls) as f64)
}

/// Percentile by linear interpolation between order statistics at plotting
/// positions r/(N+1), clamped to the extremes. With N ≥ 39 the interval
/// between the 0.025 and 0.975 values contains at least 95% of the sample.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "percentile of an empty sample");
    let h = (n as f64 + 1.0) * q - 1.0;
    if h <= 0.0 {
        return sorted[0];
    }
    if h >= (n - 1) as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Mean and [0.025, 0.975] percentile interval; `None` for an empty sample.
pub fn summarize(values: &[f64]) -> Option<(f64, [f64; 2])> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some((mean, [percentile(&sorted, CI_LOWER), percentile(&sorted, CI_UPPER)]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvSettings {
    pub metric: Metric,
    pub mode: KrigingMode,
}

impl CvSettings {
    pub fn for_cohort(cohort: &Cohort) -> Self {
        Self {
            metric: Metric::default_for(cohort.trait_kind()),
            mode: KrigingMode::Universal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    /// Out-of-sample prediction for every sample, in registry order.
    pub predictions: Vec<f64>,
    /// Metric over the concatenated predictions; `None` when undefined
    /// (constant predictions, a single class, ...).
    pub value: Option<f64>,
}

/// One repeat of k-fold cross-validation under the given fold plan.
pub fn cross_validate_plan(
    sigma_full: &SimilarityMatrix,
    cohort: &Cohort,
    plan: &FoldPlan,
    settings: &CvSettings,
) -> Result<CvOutcome> {
    let design = design_matrix(cohort, settings.mode);
    cross_validate_with_design(sigma_full, cohort, design.as_ref(), plan, settings.metric)
}

/// One repeat of k-fold cross-validation with a fresh partition from `seed`.
pub fn cross_validate(
    sigma_full: &SimilarityMatrix,
    cohort: &Cohort,
    k: usize,
    seed: u64,
    settings: &CvSettings,
) -> Result<CvOutcome> {
    let plan = partition(cohort.len(), k, seed)?;
    cross_validate_plan(sigma_full, cohort, &plan, settings)
}

fn cross_validate_with_design(
    sigma_full: &SimilarityMatrix,
    cohort: &Cohort,
    design: Option<&Mat<f64>>,
    plan: &FoldPlan,
    metric: Metric,
) -> Result<CvOutcome> {
    if sigma_full.registry() != cohort.registry() {
        return Err(Error::RegistryMismatch);
    }
    if plan.n() != cohort.len() {
        return Err(Error::DimensionMismatch(format!(
            "fold plan covers {} samples, cohort has {}",
            plan.n(),
            cohort.len()
        )));
    }
    let mut predictions = vec![f64::NAN; cohort.len()];
    for f in 0..plan.k {
        let (train, test) = plan.split(f);
        let fold_pred =
            predict_fold_with_design(sigma_full, cohort.phenotype(), design, &train, &test)?;
        for (&i, p) in test.iter().zip(fold_pred) {
            predictions[i] = p;
        }
    }
    let value = defined_metric(metric, &predictions, cohort.phenotype(), plan.repeat_index)?;
    Ok(CvOutcome { predictions, value })
}

/// Metric value, or `None` when it is undefined for these vectors.
pub(crate) fn defined_metric(
    metric: Metric,
    pred: &[f64],
    truth: &[f64],
    repeat_index: usize,
) -> Result<Option<f64>> {
    match metric.compute(pred, truth) {
        Ok(v) => Ok(Some(v)),
        Err(e @ (Error::ConstantVector | Error::OneClassOnly | Error::TooFewValues { .. })) => {
            log::debug!("repeat {repeat_index}: metric undefined ({e})");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Full result of repeated cross-validation at one weight configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub k_folds: usize,
    pub n_repeats: usize,
    pub metric_name: Metric,
    pub kriging_mode: String,
    pub per_repeat_values: Vec<Option<f64>>,
    pub mean: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub missing_repeats: usize,
    /// No repeat has a defined metric, or the weights are pure nugget so
    /// predictions are fold-wise training means.
    pub degenerate: bool,
    pub best_weights: WeightConfig,
    pub nugget: f64,
    pub grid: Option<serde_json::Value>,
    pub sample_ids: Vec<String>,
    pub repeat_seeds: Vec<u64>,
    pub fold_assignments: Vec<Vec<usize>>,
}

impl EvaluationReport {
    /// Assembles a report from per-repeat values, computing mean and CI over
    /// the defined values.
    pub fn from_values(
        values: Vec<Option<f64>>,
        plans: &[FoldPlan],
        master_seed: u64,
        settings: &CvSettings,
        weights: &WeightConfig,
        sample_ids: Vec<String>,
    ) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let summary = summarize(&defined);
        let missing = values.len() - defined.len();
        Self {
            seed: master_seed,
            k_folds: plans.first().map_or(0, |p| p.k),
            n_repeats: values.len(),
            metric_name: settings.metric,
            kriging_mode: match settings.mode {
                KrigingMode::Simple => "simple".into(),
                KrigingMode::Universal => "universal".into(),
            },
            per_repeat_values: values,
            mean: summary.map(|s| s.0),
            ci: summary.map(|s| s.1),
            missing_repeats: missing,
            degenerate: summary.is_none() || weights.theta_sum() == 0.0,
            best_weights: weights.clone(),
            nugget: weights.nugget(),
            grid: None,
            sample_ids,
            repeat_seeds: plans.iter().map(|p| p.seed).collect(),
            fold_assignments: plans.iter().map(|p| p.assignments.clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.per_repeat_values.is_empty() {
            return Err(Error::Validation("report has no repeats".into()));
        }
        if self.per_repeat_values.len() != self.n_repeats {
            return Err(Error::Validation(format!(
                "{} values for {} repeats",
                self.per_repeat_values.len(),
                self.n_repeats
            )));
        }
        Ok(())
    }
}

/// Output of [`repeat_and_summarize`]: the report plus the out-of-sample
/// predictions of the first repeat.
#[derive(Debug, Clone)]
pub struct RepeatedCv {
    pub report: EvaluationReport,
    pub first_predictions: Vec<f64>,
}

/// Metric values of every plan, evaluated in parallel and returned in plan
/// order, plus the predictions of the first plan.
pub fn evaluate_plans(
    sigma_full: &SimilarityMatrix,
    cohort: &Cohort,
    plans: &[FoldPlan],
    settings: &CvSettings,
) -> Result<(Vec<Option<f64>>, Vec<f64>)> {
    let design = design_matrix(cohort, settings.mode);
    let outcomes: Vec<CvOutcome> = plans
        .par_iter()
        .map(|plan| cross_validate_with_design(sigma_full, cohort, design.as_ref(), plan, settings.metric))
        .collect::<Result<_>>()?;
    let first = outcomes.first().map(|o| o.predictions.clone()).unwrap_or_default();
    Ok((outcomes.into_iter().map(|o| o.value).collect(), first))
}

/// Repeated cross-validation with `n_repeats` partitions derived from
/// `master_seed`.
pub fn repeat_and_summarize(
    sigma_full: &SimilarityMatrix,
    cohort: &Cohort,
    weights: &WeightConfig,
    k: usize,
    n_repeats: usize,
    master_seed: u64,
    settings: &CvSettings,
) -> Result<RepeatedCv> {
    if n_repeats == 0 {
        return Err(Error::Validation("n_repeats must be at least 1".into()));
    }
    let plans = fold_plans(cohort.len(), k, n_repeats, master_seed)?;
    let (values, first_predictions) = evaluate_plans(sigma_full, cohort, &plans, settings)?;
    let report = EvaluationReport::from_values(
        values,
        &plans,
        master_seed,
        settings,
        weights,
        cohort.registry().ids().to_vec(),
    );
    Ok(RepeatedCv {
        report,
        first_predictions,
    })
}
