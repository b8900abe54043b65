//! Simple and universal kriging.
//!
//! For a training covariance Σ and the similarity vector ρ between a test
//! sample and the training samples, simple kriging weights are ω = Σ⁻¹ρ.
//! Universal kriging adds covariates Z (training) and z (test) under the
//! unbiasedness constraint Zᵀω = z:
//!
//! ```text
//! ω = Σ⁻¹(ρ + Z m),   m = (ZᵀΣ⁻¹Z)⁻¹ (z − ZᵀΣ⁻¹ρ)
//! ```
//!
//! The prediction is the weighted average ωᵀY of the training phenotypes.
//! Σ is factorized once (Cholesky) and the factor is shared by every test
//! sample of a fold; Σ⁻¹ is never formed.

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::model::{Cohort, SimilarityMatrix};

/// Relative diagonal jitter applied on a failed first factorization.
pub const JITTER_SCALE: f64 = 1e-8;

/// Eigenvalue ratio below which ZᵀΣ⁻¹Z is treated as singular.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KrigingMode {
    /// ω = Σ⁻¹ρ, no mean term.
    Simple,
    /// Intercept plus any cohort covariates, with Zᵀω = z.
    #[default]
    Universal,
}

/// One kriging problem: training covariance, similarity vector of a single
/// test sample, and optional covariates `(Z_train, z_test)`.
#[derive(Debug, Clone, Copy)]
pub struct KrigingSystem<'a> {
    pub sigma_train: MatRef<'a, f64>,
    pub rho: &'a [f64],
    pub covariates: Option<(MatRef<'a, f64>, &'a [f64])>,
}

/// Kriging weights ω for a single system.
pub fn krige_weights(system: &KrigingSystem<'_>) -> Result<Vec<f64>> {
    let solver = KrigingSolver::new(system.sigma_train, system.covariates.map(|(z, _)| z))?;
    solver.weights(system.rho, system.covariates.map(|(_, z)| z))
}

/// Factorized training system, reusable across test samples.
pub struct KrigingSolver {
    llt: Llt<f64>,
    jitter: f64,
    universal: Option<Universal>,
}

struct Universal {
    z_train: Mat<f64>,
    /// Σ⁻¹Z
    sigma_inv_z: Mat<f64>,
    /// factor of ZᵀΣ⁻¹Z
    gram: Llt<f64>,
}

fn factorize(sigma: MatRef<'_, f64>) -> Result<(Llt<f64>, f64)> {
    let first_failure = match sigma.llt(Side::Lower) {
        Ok(llt) => return Ok((llt, 0.0)),
        Err(faer::linalg::solvers::LltError::NonPositivePivot { index }) => index,
    };
    let n = sigma.nrows();
    let mean_diag = (0..n).map(|i| sigma[(i, i)]).sum::<f64>() / n as f64;
    let jitter = JITTER_SCALE * mean_diag.abs();
    let mut jittered = sigma.to_owned();
    for i in 0..n {
        jittered[(i, i)] += jitter;
    }
    match jittered.llt(Side::Lower) {
        Ok(llt) => {
            log::warn!("training covariance needed diagonal jitter {jitter:e}");
            Ok((llt, jitter))
        }
        Err(_) => {
            let min_eigenvalue = sigma
                .self_adjoint_eigenvalues(Side::Lower)
                .ok()
                .and_then(|ev| ev.first().copied())
                .unwrap_or(f64::NAN);
            Err(Error::SingularSigma {
                pivot_index: first_failure,
                min_eigenvalue,
                jitter,
            })
        }
    }
}

impl KrigingSolver {
    /// Factorizes Σ_train and, when covariates are given, ZᵀΣ⁻¹Z.
    pub fn new(sigma_train: MatRef<'_, f64>, z_train: Option<MatRef<'_, f64>>) -> Result<Self> {
        let n = sigma_train.nrows();
        if sigma_train.ncols() != n || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "training covariance is {}x{}",
                sigma_train.nrows(),
                sigma_train.ncols()
            )));
        }
        let (llt, jitter) = factorize(sigma_train)?;
        let universal = match z_train {
            None => None,
            Some(z) => {
                if z.nrows() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "covariates have {} rows for {n} training samples",
                        z.nrows()
                    )));
                }
                if z.ncols() == 0 || z.ncols() >= n {
                    return Err(Error::RankDeficientZ);
                }
                let mut sigma_inv_z = z.to_owned();
                llt.solve_in_place(sigma_inv_z.as_mut());
                let gram_mat = z.transpose() * &sigma_inv_z;
                let gram_mat = Mat::from_fn(gram_mat.nrows(), gram_mat.ncols(), |i, j| {
                    0.5 * (gram_mat[(i, j)] + gram_mat[(j, i)])
                });
                let ev = gram_mat
                    .self_adjoint_eigenvalues(Side::Lower)
                    .map_err(|_| Error::RankDeficientZ)?;
                let max = ev.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
                if ev[0] <= RANK_TOL * max || max == 0.0 {
                    return Err(Error::RankDeficientZ);
                }
                let gram = gram_mat.llt(Side::Lower).map_err(|_| Error::RankDeficientZ)?;
                Some(Universal {
                    z_train: z.to_owned(),
                    sigma_inv_z,
                    gram,
                })
            }
        };
        Ok(Self {
            llt,
            jitter,
            universal,
        })
    }

    /// Diagonal jitter that was needed to factorize Σ (0 when none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_train(&self) -> usize {
        self.llt.L().nrows()
    }

    /// Weights for a batch of test samples: column t of the result is ω for
    /// column t of `rho`; row t of `z_test` holds that sample's covariates.
    pub fn weights_batch(
        &self,
        rho: MatRef<'_, f64>,
        z_test: Option<MatRef<'_, f64>>,
    ) -> Result<Mat<f64>> {
        let n = self.n_train();
        if rho.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "similarity vectors have {} rows for {n} training samples",
                rho.nrows()
            )));
        }
        let mut omega = rho.to_owned();
        self.llt.solve_in_place(omega.as_mut());
        match (&self.universal, z_test) {
            (None, None) => {}
            (Some(u), Some(z_test)) => {
                if z_test.nrows() != rho.ncols() || z_test.ncols() != u.z_train.ncols() {
                    return Err(Error::DimensionMismatch(format!(
                        "test covariates are {}x{}, expected {}x{}",
                        z_test.nrows(),
                        z_test.ncols(),
                        rho.ncols(),
                        u.z_train.ncols()
                    )));
                }
                // m = (ZᵀΣ⁻¹Z)⁻¹ (z − ZᵀΣ⁻¹ρ), one column per test sample
                let mut m = z_test.transpose().to_owned() - u.z_train.transpose() * &omega;
                u.gram.solve_in_place(m.as_mut());
                omega += &u.sigma_inv_z * &m;
            }
            (Some(_), None) => {
                return Err(Error::Validation(
                    "universal kriging needs test covariates".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(Error::Validation(
                    "test covariates given to a simple kriging solver".into(),
                ))
            }
        }
        Ok(omega)
    }

    pub fn weights(&self, rho: &[f64], z: Option<&[f64]>) -> Result<Vec<f64>> {
        let rho = MatRef::from_column_major_slice(rho, rho.len(), 1);
        let z = z.map(|z| MatRef::from_row_major_slice(z, 1, z.len()));
        let omega = self.weights_batch(rho, z)?;
        Ok(omega.col_as_slice(0).to_vec())
    }
}

/// Covariate design for kriging: `None` in simple mode; otherwise an
/// intercept column followed by the cohort's covariates. The intercept is
/// omitted when a covariate column is already constant.
pub fn design_matrix(cohort: &Cohort, mode: KrigingMode) -> Option<Mat<f64>> {
    if mode == KrigingMode::Simple {
        return None;
    }
    let n = cohort.len();
    let Some(z) = cohort.covariates() else {
        return Some(Mat::from_fn(n, 1, |_, _| 1.0));
    };
    let has_constant = (0..z.ncols()).any(|c| (0..n).all(|i| z[(i, c)] == z[(0, c)]) && z[(0, c)] != 0.0);
    if has_constant {
        return Some(z.clone());
    }
    Some(Mat::from_fn(n, z.ncols() + 1, |i, c| if c == 0 { 1.0 } else { z[(i, c - 1)] }))
}

/// Out-of-sample predictions for `test_idx` from the phenotypes of
/// `train_idx`. Only similarities involving test samples are read; their
/// phenotypes never are.
pub fn predict_fold(
    sigma_full: &SimilarityMatrix,
    cohort: &Cohort,
    train_idx: &[usize],
    test_idx: &[usize],
    mode: KrigingMode,
) -> Result<Vec<f64>> {
    let design = design_matrix(cohort, mode);
    predict_fold_with_design(sigma_full, cohort.phenotype(), design.as_ref(), train_idx, test_idx)
}

pub(crate) fn predict_fold_with_design(
    sigma_full: &SimilarityMatrix,
    phenotype: &[f64],
    design: Option<&Mat<f64>>,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<Vec<f64>> {
    let n = sigma_full.dim();
    if phenotype.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} phenotypes for a {n}-sample similarity matrix",
            phenotype.len()
        )));
    }
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Validation("training and test sets must be non-empty".into()));
    }
    let mut role = vec![0u8; n];
    for (&i, flag) in train_idx.iter().map(|i| (i, 1u8)).chain(test_idx.iter().map(|i| (i, 2u8))) {
        if i >= n {
            return Err(Error::Validation(format!("sample index {i} out of range")));
        }
        if role[i] != 0 {
            return Err(Error::Validation(format!(
                "sample index {i} appears twice in the train/test split"
            )));
        }
        role[i] = flag;
    }

    let s = sigma_full.values();
    let sigma_train = Mat::from_fn(train_idx.len(), train_idx.len(), |a, b| {
        s[(train_idx[a], train_idx[b])]
    });
    let rho = Mat::from_fn(train_idx.len(), test_idx.len(), |a, t| s[(train_idx[a], test_idx[t])]);
    let z_train = design.map(|z| Mat::from_fn(train_idx.len(), z.ncols(), |a, c| z[(train_idx[a], c)]));
    let z_test = design.map(|z| Mat::from_fn(test_idx.len(), z.ncols(), |t, c| z[(test_idx[t], c)]));

    let solver = KrigingSolver::new(sigma_train.as_ref(), z_train.as_ref().map(|z| z.as_ref()))?;
    let omega = solver.weights_batch(rho.as_ref(), z_test.as_ref().map(|z| z.as_ref()))?;

    let y_train: Vec<f64> = train_idx.iter().map(|&i| phenotype[i]).collect();
    Ok((0..test_idx.len())
        .map(|t| {
            omega
                .col_as_slice(t)
                .iter()
                .zip(&y_train)
                .map(|(w, y)| w * y)
                .sum()
        })
        .collect())
}
