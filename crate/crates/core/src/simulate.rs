//! Synthetic cohorts under the additive random-effects model
//!
//! ```text
//! Y_i = G_i + T_i + O_i + ε_i,   G = X̃_G β_G,  β_G ~ N(0, θ_G / M_G I), ...
//! ```
//!
//! with ε ~ N(0, 1 − Σθ). Genotypes are Binomial(2, p_l) with
//! p_l ~ U(0.05, 0.95); the other omics are standard normal. Effects act on
//! in-sample standardized columns (genotypes with the same frequency filter
//! as the GRM), so the covariance of Y given the markers is
//! Σ_s θ_s X̃_s X̃_sᵀ / M_s + θ_ε I. The intercept is 0.
//!
//! One cohort is drawn from a single seeded stream.

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cohort, OmicDataset, OmicKind, Provenance, SampleRegistry, SimilarityMatrix, TraitKind, WeightConfig};
use crate::similarity::GrmOptions;

pub const GENETIC: &str = "genetic";
pub const EXPRESSION: &str = "expression";
pub const OTHER: &str = "other";

const FREQ_RANGE: (f64, f64) = (0.05, 0.95);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_samples: usize,
    pub m_genetic: usize,
    pub l_expression: usize,
    pub l_other: usize,
    /// Weights over `genetic`, `expression`, `other`.
    pub theta: WeightConfig,
    pub seed: u64,
    pub trait_kind: TraitKind,
    /// Fraction of cases for a binary trait.
    pub case_fraction: f64,
}

impl SimConfig {
    /// Quantitative trait with a single genetic component.
    pub fn genetic_only(n_samples: usize, m_genetic: usize, theta_g: f64, seed: u64) -> Result<Self> {
        Ok(Self {
            n_samples,
            m_genetic,
            l_expression: 0,
            l_other: 0,
            theta: Self::theta(theta_g, 0.0, 0.0)?,
            seed,
            trait_kind: TraitKind::Quantitative,
            case_fraction: 0.5,
        })
    }

    pub fn theta(genetic: f64, expression: f64, other: f64) -> Result<WeightConfig> {
        WeightConfig::new(vec![
            (GENETIC.into(), genetic),
            (EXPRESSION.into(), expression),
            (OTHER.into(), other),
        ])
        .map_err(|e| Error::BadTheta(e.to_string()))
    }

    fn theta_of(&self, name: &str) -> f64 {
        self.theta
            .components()
            .iter()
            .find(|(n, _)| n == name)
            .map_or(0.0, |c| c.1)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, _) in self.theta.components() {
            if ![GENETIC, EXPRESSION, OTHER].contains(&name.as_str()) {
                return Err(Error::BadTheta(format!("unknown component `{name}`")));
            }
        }
        for (name, count) in [
            (GENETIC, self.m_genetic),
            (EXPRESSION, self.l_expression),
            (OTHER, self.l_other),
        ] {
            if self.theta_of(name) > 0.0 && count == 0 {
                return Err(Error::BadTheta(format!("θ for `{name}` is positive but it has no markers")));
            }
        }
        if self.n_samples < 2 {
            return Err(Error::BadTheta("need at least 2 samples".into()));
        }
        if self.trait_kind == TraitKind::Binary && !(self.case_fraction > 0.0 && self.case_fraction < 1.0) {
            return Err(Error::BadTheta(format!("case fraction {} outside (0, 1)", self.case_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentTruth {
    pub name: String,
    pub theta: f64,
    /// Standardized columns that carry an effect.
    pub n_effective: usize,
    /// One effect per effective column.
    pub beta: Vec<f64>,
    /// X̃β per sample.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub config: SimConfig,
    /// Population allele frequencies of the genetic markers.
    pub allele_freqs: Vec<f64>,
    pub components: Vec<ComponentTruth>,
    pub noise_variance: f64,
    pub noise: Vec<f64>,
    /// Continuous trait before thresholding (equals the phenotype for a
    /// quantitative trait).
    pub liability: Vec<f64>,
    /// Liability cutoff for cases, binary traits only.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SimulatedCohort {
    /// Active components by name, genotypes first.
    pub datasets: Vec<(String, OmicDataset)>,
    pub cohort: Cohort,
    pub truth: SimTruth,
}

fn sample_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len();
    (0..n).map(|i| format!("S{i:0width$}")).collect()
}

/// In-sample standardized marker columns, as the model sees them.
/// Genotypes: (x − 2p̂)/√(2p̂(1−p̂)) over markers passing the default GRM
/// frequency filter. Continuous: column z-scores (population SD), constant
/// columns dropped. Missing values are not supported.
pub fn standardized_columns(data: &OmicDataset) -> Result<Mat<f64>> {
    let n = data.n_samples();
    let values = data.values();
    if (0..data.n_markers()).any(|l| (0..n).any(|i| data.is_missing(i, l))) {
        return Err(Error::Validation("standardization requires complete data".into()));
    }
    let mut columns: Vec<Vec<f64>> = Vec::new();
    match data.kind() {
        OmicKind::GenotypeDosage => {
            let lo = GrmOptions::default().min_freq;
            let freqs = data.allele_freqs().expect("genotype data carries frequencies");
            for (l, p) in freqs.iter().enumerate() {
                if let Some(p) = *p {
                    if p > lo && p < 1.0 - lo {
                        let scale = (2.0 * p * (1.0 - p)).sqrt();
                        columns.push((0..n).map(|i| (values[(i, l)] - 2.0 * p) / scale).collect());
                    }
                }
            }
        }
        OmicKind::Continuous => {
            for l in 0..data.n_markers() {
                let col = values.col_as_slice(l);
                let mean = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 {
                    let sd = var.sqrt();
                    columns.push(col.iter().map(|v| (v - mean) / sd).collect());
                }
            }
        }
    }
    Ok(Mat::from_fn(n, columns.len(), |i, c| columns[c][i]))
}

/// Σ = Σ_s θ_s X̃_s X̃_sᵀ / M_s + (1 − Σθ) I for standardized columns of
/// each dataset.
pub fn theoretical_covariance(datasets: &[(&OmicDataset, f64)]) -> Result<SimilarityMatrix> {
    let first = datasets
        .first()
        .ok_or_else(|| Error::Validation("no datasets".into()))?
        .0;
    let registry = first.registry().clone();
    let n = registry.len();
    let weights = WeightConfig::new(
        datasets
            .iter()
            .enumerate()
            .map(|(i, (_, t))| (format!("c{i}"), *t))
            .collect(),
    )?;
    let mut sigma = Mat::<f64>::zeros(n, n);
    for (data, theta) in datasets {
        if data.registry() != &registry {
            return Err(Error::RegistryMismatch);
        }
        let x = standardized_columns(data)?;
        if x.ncols() == 0 {
            if *theta > 0.0 {
                return Err(Error::EmptyMarkerSet);
            }
            continue;
        }
        let xxt = &x * x.transpose();
        let scale = theta / x.ncols() as f64;
        for j in 0..n {
            for i in 0..n {
                sigma[(i, j)] += scale * xxt[(i, j)];
            }
        }
    }
    let nugget = weights.nugget();
    for i in 0..n {
        sigma[(i, i)] += nugget;
    }
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    SimilarityMatrix::new(registry, sigma, Provenance::Composite, None)
}

/// Draws genotype dosages: returns (population frequencies, n × m dosages).
pub fn simulate_markers<R: Rng>(n: usize, m: usize, rng: &mut R) -> (Vec<f64>, Vec<Vec<f64>>) {
    let freqs: Vec<f64> = (0..m).map(|_| rng.random_range(FREQ_RANGE.0..FREQ_RANGE.1)).collect();
    let rows = (0..n)
        .map(|_| {
            freqs
                .iter()
                .map(|&p| f64::from(u8::from(rng.random::<f64>() < p) + u8::from(rng.random::<f64>() < p)))
                .collect()
        })
        .collect();
    (freqs, rows)
}

fn normal_matrix<R: Rng>(n: usize, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Phenotype draw at fixed standardized markers. `components` pairs each
/// standardized matrix with its θ. Returns the per-component truth, the
/// noise vector and the continuous trait.
pub fn simulate_phenotype<R: Rng>(
    components: &[(&str, &Mat<f64>, f64)],
    n: usize,
    rng: &mut R,
) -> Result<(Vec<ComponentTruth>, f64, Vec<f64>, Vec<f64>)> {
    let theta_sum: f64 = components.iter().map(|c| c.2).sum();
    if theta_sum > 1.0 + 1e-9 || components.iter().any(|c| !(c.2 >= 0.0)) {
        return Err(Error::BadTheta(format!("θ sum {theta_sum}")));
    }
    let mut y = vec![0.0; n];
    let mut truth = Vec::new();
    for &(name, x, theta) in components {
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!("{name}: {} rows for {n} samples", x.nrows())));
        }
        let m = x.ncols();
        if theta > 0.0 && m == 0 {
            return Err(Error::BadTheta(format!("`{name}` has no usable markers")));
        }
        let sd = if m == 0 { 0.0 } else { (theta / m as f64).sqrt() };
        let beta: Vec<f64> = (0..m).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let values: Vec<f64> = (0..n)
            .map(|i| (0..m).map(|l| x[(i, l)] * beta[l]).sum())
            .collect();
        for (yi, v) in y.iter_mut().zip(&values) {
            *yi += v;
        }
        truth.push(ComponentTruth {
            name: name.to_string(),
            theta,
            n_effective: m,
            beta,
            values,
        });
    }
    let noise_variance = (1.0 - theta_sum).max(0.0);
    let noise_sd = noise_variance.sqrt();
    let noise: Vec<f64> = (0..n).map(|_| noise_sd * rng.sample::<f64, _>(StandardNormal)).collect();
    for (yi, e) in y.iter_mut().zip(&noise) {
        *yi += e;
    }
    Ok((truth, noise_variance, noise, y))
}

/// The top round(K·n) liabilities become cases (1), the rest controls (0).
/// Returns the labels and the liability of the lowest case.
pub fn threshold_liability(liability: &[f64], case_fraction: f64) -> (Vec<f64>, f64) {
    let n = liability.len();
    let n_cases = ((case_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| liability[b].total_cmp(&liability[a]).then(a.cmp(&b)));
    let mut labels = vec![0.0; n];
    for &i in &order[..n_cases] {
        labels[i] = 1.0;
    }
    (labels, liability[order[n_cases - 1]])
}

pub fn simulate_cohort(config: &SimConfig) -> Result<SimulatedCohort> {
    config.validate()?;
    let n = config.n_samples;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let registry = SampleRegistry::new(sample_ids(n))?;
    let mut datasets = Vec::new();
    let mut allele_freqs = Vec::new();
    if config.m_genetic > 0 {
        let (freqs, rows) = simulate_markers(n, config.m_genetic, &mut rng);
        allele_freqs = freqs;
        let ids = (0..config.m_genetic).map(|l| format!("snp{l}")).collect();
        let rows = rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect();
        datasets.push((GENETIC.to_string(), OmicDataset::genotype(registry.clone(), ids, rows)?));
    }
    for (name, count, prefix) in [
        (EXPRESSION, config.l_expression, "gene"),
        (OTHER, config.l_other, "omic"),
    ] {
        if count > 0 {
            let ids = (0..count).map(|l| format!("{prefix}{l}")).collect();
            let rows = normal_matrix(n, count, &mut rng)
                .into_iter()
                .map(|r| r.into_iter().map(Some).collect())
                .collect();
            datasets.push((name.to_string(), OmicDataset::continuous(registry.clone(), ids, rows)?));
        }
    }
    let standardized: Vec<(String, Mat<f64>, f64)> = datasets
        .iter()
        .map(|(name, ds)| Ok((name.clone(), standardized_columns(ds)?, config.theta_of(name))))
        .collect::<Result<_>>()?;
    let parts: Vec<(&str, &Mat<f64>, f64)> = standardized
        .iter()
        .map(|(name, x, t)| (name.as_str(), x, *t))
        .collect();
    let (components, noise_variance, noise, liability) = simulate_phenotype(&parts, n, &mut rng)?;
    let (phenotype, threshold) = match config.trait_kind {
        TraitKind::Quantitative => (liability.clone(), None),
        TraitKind::Binary => {
            let (labels, t) = threshold_liability(&liability, config.case_fraction);
            (labels, Some(t))
        }
    };
    let cohort = Cohort::new(registry, phenotype, config.trait_kind)?;
    Ok(SimulatedCohort {
        datasets,
        cohort,
        truth: SimTruth {
            config: config.clone(),
            allele_freqs,
            components,
            noise_variance,
            noise,
            liability,
            threshold,
        },
    })
}
