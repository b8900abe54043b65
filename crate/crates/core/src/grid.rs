//! Grid search over component weights on the simplex Σθ ≤ 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{evaluate_plans, fold_plans, summarize, CvSettings};
use crate::model::{Cohort, SimilarityMatrix, WeightConfig};
use crate::similarity::compose_weights;

pub const DEFAULT_STEP: f64 = 0.1;
/// Repeats per grid point during the search; the final report at the
/// winning point uses the full repeat count.
pub const DEFAULT_SEARCH_REPEATS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    component_names: Vec<String>,
    step: f64,
    levels: usize,
}

impl GridSpec {
    /// `step` must be 1/L for a positive integer L (within 1e-9).
    pub fn new(component_names: Vec<String>, step: f64) -> Result<Self> {
        if component_names.is_empty() {
            return Err(Error::Validation("grid needs at least one component".into()));
        }
        if !(step > 0.0 && step <= 1.0) {
            return Err(Error::StepNotUnitFraction(step));
        }
        let inv = 1.0 / step;
        let levels = inv.round();
        if (inv - levels).abs() > 1e-9 * levels.max(1.0) {
            return Err(Error::StepNotUnitFraction(step));
        }
        Ok(Self {
            component_names,
            step,
            levels: levels as usize,
        })
    }

    pub fn n_components(&self) -> usize {
        self.component_names.len()
    }

    pub fn component_names(&self) -> &[String] {
        &self.component_names
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// Number of steps between 0 and 1.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Integer lattice points (multiples of `step`) with Σ ≤ levels, in
    /// lexicographic order.
    pub fn lattice(&self) -> Vec<Vec<usize>> {
        fn recurse(
            remaining: usize,
            depth: usize,
            current: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if depth == 0 {
                out.push(current.clone());
                return;
            }
            for v in 0..=remaining {
                current.push(v);
                recurse(remaining - v, depth - 1, current, out);
                current.pop();
            }
        }
        let mut out = Vec::new();
        recurse(self.levels, self.n_components(), &mut Vec::new(), &mut out);
        out
    }

    fn weights_at(&self, lattice: &[usize]) -> WeightConfig {
        WeightConfig::new(
            self.component_names
                .iter()
                .zip(lattice)
                .map(|(n, &i)| (n.clone(), i as f64 / self.levels as f64))
                .collect(),
        )
        .expect("lattice points satisfy the simplex constraint")
    }
}

/// Every weight configuration of the grid, in lexicographic order.
pub fn enumerate_grid(spec: &GridSpec) -> Vec<WeightConfig> {
    spec.lattice().iter().map(|l| spec.weights_at(l)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub weights: WeightConfig,
    pub nugget: f64,
    pub mean: Option<f64>,
    pub ci: Option<[f64; 2]>,
    pub missing_repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSurface {
    pub step: f64,
    pub components: Vec<String>,
    pub n_repeats: usize,
    pub best_index: usize,
    pub points: Vec<SurfacePoint>,
}

impl GridSurface {
    pub fn best(&self) -> &SurfacePoint {
        &self.points[self.best_index]
    }
}

/// Index of the best point: highest mean; ties go to the smallest total
/// weight (most nugget), then to the earliest point in lexicographic order.
/// Points with an undefined mean never win unless all are undefined.
fn select_best(means: &[Option<f64>], lattice: &[Vec<usize>]) -> usize {
    let mut best = 0;
    for i in 1..means.len() {
        let better = match (means[i], means[best]) {
            (Some(a), Some(b)) if a > b => true,
            (Some(a), Some(b)) if a == b => {
                lattice[i].iter().sum::<usize>() < lattice[best].iter().sum::<usize>()
            }
            (Some(_), None) => true,
            (None, None) => {
                lattice[i].iter().sum::<usize>() < lattice[best].iter().sum::<usize>()
            }
            _ => false,
        };
        if better {
            best = i;
        }
    }
    best
}

/// Evaluates every grid point with the same fold plans (paired comparison).
#[allow(clippy::too_many_arguments)]
pub fn grid_search(
    components: &[SimilarityMatrix],
    cohort: &Cohort,
    spec: &GridSpec,
    k: usize,
    n_repeats: usize,
    master_seed: u64,
    settings: &CvSettings,
) -> Result<GridSurface> {
    if components.len() != spec.n_components() {
        return Err(Error::DimensionMismatch(format!(
            "{} matrices for a {}-component grid",
            components.len(),
            spec.n_components()
        )));
    }
    if n_repeats == 0 {
        return Err(Error::Validation("n_repeats must be at least 1".into()));
    }
    let plans = fold_plans(cohort.len(), k, n_repeats, master_seed)?;
    let lattice = spec.lattice();
    let points: Vec<SurfacePoint> = lattice
        .par_iter()
        .map(|l| {
            let weights = spec.weights_at(l);
            let sigma = compose_weights(components, &weights)?;
            let (values, _) = evaluate_plans(&sigma, cohort, &plans, settings)?;
            let defined: Vec<f64> = values.iter().flatten().copied().collect();
            let summary = summarize(&defined);
            Ok(SurfacePoint {
                nugget: weights.nugget(),
                weights,
                mean: summary.map(|s| s.0),
                ci: summary.map(|s| s.1),
                missing_repeats: values.len() - defined.len(),
            })
        })
        .collect::<Result<_>>()?;
    let means: Vec<Option<f64>> = points.iter().map(|p| p.mean).collect();
    let best_index = select_best(&means, &lattice);
    Ok(GridSurface {
        step: spec.step,
        components: spec.component_names.clone(),
        n_repeats,
        best_index,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn single_component_tenths() {
        let g = enumerate_grid(&GridSpec::new(names(1), 0.1).unwrap());
        let got: Vec<f64> = g.iter().map(|w| w.thetas()[0]).collect();
        let want = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        assert_eq!(got, want);
    }

    #[test]
    fn two_components_half_step_in_order() {
        let g = enumerate_grid(&GridSpec::new(names(2), 0.5).unwrap());
        let got: Vec<Vec<f64>> = g.iter().map(|w| w.thetas()).collect();
        let want = vec![
            vec![0.0, 0.0],
            vec![0.0, 0.5],
            vec![0.0, 1.0],
            vec![0.5, 0.0],
            vec![0.5, 0.5],
            vec![1.0, 0.0],
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn two_components_tenths_count() {
        let g = enumerate_grid(&GridSpec::new(names(2), 0.1).unwrap());
        assert_eq!(g.len(), 66);
        assert!(g.iter().all(|w| w.theta_sum() <= 1.0 + 1e-12));
    }

    #[test]
    fn step_must_be_unit_fraction() {
        assert!(matches!(GridSpec::new(names(1), 0.3), Err(Error::StepNotUnitFraction(_))));
        assert!(matches!(GridSpec::new(names(1), 0.0), Err(Error::StepNotUnitFraction(_))));
        assert!(matches!(GridSpec::new(names(1), 1.5), Err(Error::StepNotUnitFraction(_))));
        assert_eq!(GridSpec::new(names(1), 0.25).unwrap().levels(), 4);
        assert_eq!(GridSpec::new(names(1), 1.0 / 3.0).unwrap().levels(), 3);
    }

    #[test]
    fn tie_break_prefers_nugget_then_order() {
        let lattice = vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]];
        assert_eq!(select_best(&[Some(0.5), Some(0.5), Some(0.5), Some(0.5)], &lattice), 0);
        assert_eq!(select_best(&[Some(0.1), Some(0.5), Some(0.5), Some(0.2)], &lattice), 1);
        assert_eq!(select_best(&[None, Some(-0.5), None, Some(0.2)], &lattice), 3);
        assert_eq!(select_best(&[None, None, None, None], &lattice), 0);
    }
}
