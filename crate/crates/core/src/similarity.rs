//! Construction of the component similarity matrices (GRM, correlation) and
//! of the weighted composite used for kriging.

use faer::Mat;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{OmicDataset, OmicKind, Provenance, SimilarityMatrix, WeightConfig};

/// Per-pair counts of markers observed in both samples, packed as the lower
/// triangle (row-major, diagonal included) in the layout of `.grm.N.bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCounts {
    n: usize,
    packed: Vec<f32>,
}

/// Flat offset of (i, j), j ≤ i, in a packed lower triangle.
pub fn packed_index(i: usize, j: usize) -> usize {
    let (i, j) = if j > i { (j, i) } else { (i, j) };
    i * (i + 1) / 2 + j
}

/// Inverse of [`packed_index`]: row i = ⌊(√(8k+1) − 1)/2⌋.
pub fn unpack_index(k: usize) -> (usize, usize) {
    let mut i = ((((8 * k + 1) as f64).sqrt() - 1.0) / 2.0).floor() as usize;
    // guard against rounding of the square root for very large k
    while i * (i + 1) / 2 > k {
        i -= 1;
    }
    while (i + 1) * (i + 2) / 2 <= k {
        i += 1;
    }
    (i, k - i * (i + 1) / 2)
}

impl PairCounts {
    pub fn from_packed(n: usize, packed: Vec<f32>) -> Result<Self> {
        if packed.len() != n * (n + 1) / 2 {
            return Err(Error::DimensionMismatch(format!(
                "{} packed counts for {n} samples",
                packed.len()
            )));
        }
        Ok(Self { n, packed })
    }

    pub fn uniform(n: usize, count: usize) -> Self {
        Self {
            n,
            packed: vec![count as f32; n * (n + 1) / 2],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.packed[packed_index(i, j)]
    }

    pub fn packed(&self) -> &[f32] {
        &self.packed
    }
}

/// How the GRM diagonal is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrmDiagonal {
    /// Same standardized cross-product as the off-diagonal entries.
    #[default]
    CrossProduct,
    /// GCTA's `--make-grm` self-relatedness estimator,
    /// 1 + Σ (x² − (1+2p)x + 2p²) / (2p(1−p)) / M.
    Gcta,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrmOptions {
    /// Markers with p ≤ min_freq or p ≥ 1 − min_freq are excluded.
    pub min_freq: f64,
    pub diagonal: GrmDiagonal,
}

impl Default for GrmOptions {
    fn default() -> Self {
        Self {
            min_freq: 0.001,
            diagonal: GrmDiagonal::CrossProduct,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GrmBuild {
    pub matrix: SimilarityMatrix,
    pub counts: PairCounts,
    /// Markers that entered the GRM.
    pub included: Vec<usize>,
    /// Markers dropped as monomorphic, all-missing or below the frequency bound.
    pub excluded: usize,
    /// Pairs with no commonly observed marker; their entry is set to 0.
    pub empty_pairs: Vec<(usize, usize)>,
}

fn copy_lower_to_upper(m: &mut Mat<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Genetic relationship matrix from genotype dosages.
///
/// Entry (i, j) averages (x_il − 2p_l)(x_jl − 2p_l) / (2p_l(1 − p_l)) over
/// the retained markers observed in both i and j.
pub fn build_grm(data: &OmicDataset, options: &GrmOptions) -> Result<GrmBuild> {
    if data.kind() != OmicKind::GenotypeDosage {
        return Err(Error::Validation("GRM requires genotype dosages".into()));
    }
    let freqs = data
        .allele_freqs()
        .ok_or_else(|| Error::Validation("genotype data without allele frequencies".into()))?;
    let lo = options.min_freq;
    let included: Vec<usize> = (0..data.n_markers())
        .filter(|&l| matches!(freqs[l], Some(p) if p > lo && p < 1.0 - lo))
        .collect();
    let excluded = data.n_markers() - included.len();
    if included.is_empty() {
        return Err(Error::NoPolymorphicMarkers);
    }
    if excluded > 0 {
        log::info!("GRM: excluded {excluded} of {} markers", data.n_markers());
    }

    let n = data.n_samples();
    let m = included.len();
    let mut any_missing = false;
    // centered dosages, and the same divided by 2p(1-p)
    let mut centered = Mat::<f64>::zeros(n, m);
    let mut scaled = Mat::<f64>::zeros(n, m);
    let mut present = Mat::<f64>::zeros(n, m);
    for (c, &l) in included.iter().enumerate() {
        let p = freqs[l].expect("filtered");
        let var = 2.0 * p * (1.0 - p);
        for i in 0..n {
            match data.get(i, l) {
                Some(x) => {
                    centered[(i, c)] = x - 2.0 * p;
                    scaled[(i, c)] = (x - 2.0 * p) / var;
                    present[(i, c)] = 1.0;
                }
                None => any_missing = true,
            }
        }
    }

    let mut grm = &scaled * centered.transpose();
    let counts_mat = any_missing.then(|| &present * present.transpose());
    let count = |i: usize, j: usize| match &counts_mat {
        Some(c) => c[(i, j)],
        None => m as f64,
    };

    let mut empty_pairs = Vec::new();
    let mut packed = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            let c = count(i, j);
            packed.push(c as f32);
            if c == 0.0 {
                empty_pairs.push((i, j));
                grm[(i, j)] = 0.0;
            } else {
                grm[(i, j)] /= c;
            }
        }
    }
    if !empty_pairs.is_empty() {
        log::warn!(
            "GRM: {} sample pairs share no observed marker; entries set to 0",
            empty_pairs.len()
        );
    }

    if options.diagonal == GrmDiagonal::Gcta {
        for i in 0..n {
            let c = count(i, i);
            if c == 0.0 {
                continue;
            }
            let sum: f64 = included
                .iter()
                .filter_map(|&l| {
                    let p = freqs[l].expect("filtered");
                    data.get(i, l)
                        .map(|x| (x * x - (1.0 + 2.0 * p) * x + 2.0 * p * p) / (2.0 * p * (1.0 - p)))
                })
                .sum();
            grm[(i, i)] = 1.0 + sum / c;
        }
    }
    copy_lower_to_upper(&mut grm);

    let matrix = SimilarityMatrix::new(data.registry().clone(), grm, Provenance::Grm, Some(m))?;
    Ok(GrmBuild {
        matrix,
        counts: PairCounts { n, packed },
        included,
        excluded,
        empty_pairs,
    })
}

/// Pearson correlation between samples' marker profiles, each profile
/// centered by its own mean. Markers are not standardized, so high-variance
/// markers carry more weight. With missing values each pair uses the
/// markers observed in both samples.
pub fn build_correlation_similarity(data: &OmicDataset) -> Result<SimilarityMatrix> {
    let n = data.n_samples();
    let l = data.n_markers();
    let ids = data.registry().ids();
    let complete = (0..n).all(|i| (0..l).all(|k| !data.is_missing(i, k)));

    let mut out = if complete {
        let mut unit = Mat::<f64>::zeros(n, l);
        for i in 0..n {
            let mean = (0..l).map(|k| data.values()[(i, k)]).sum::<f64>() / l as f64;
            let ss: f64 = (0..l).map(|k| (data.values()[(i, k)] - mean).powi(2)).sum();
            if ss == 0.0 || !ss.is_finite() {
                return Err(Error::ZeroVarianceRow(ids[i].clone()));
            }
            let norm = ss.sqrt();
            for k in 0..l {
                unit[(i, k)] = (data.values()[(i, k)] - mean) / norm;
            }
        }
        &unit * unit.transpose()
    } else {
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..i)
                    .map(|j| pairwise_correlation(data, i, j))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let mut m = Mat::<f64>::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    };

    for i in 0..n {
        out[(i, i)] = 1.0;
        for j in 0..i {
            out[(i, j)] = out[(i, j)].clamp(-1.0, 1.0);
        }
    }
    copy_lower_to_upper(&mut out);
    SimilarityMatrix::new(data.registry().clone(), out, Provenance::Correlation, Some(l))
}

fn pairwise_correlation(data: &OmicDataset, i: usize, j: usize) -> Result<f64> {
    let shared: Vec<(f64, f64)> = (0..data.n_markers())
        .filter_map(|k| Some((data.get(i, k)?, data.get(j, k)?)))
        .collect();
    let ids = data.registry().ids();
    if shared.is_empty() {
        return Err(Error::ZeroVarianceRow(ids[i].clone()));
    }
    let len = shared.len() as f64;
    let mi = shared.iter().map(|p| p.0).sum::<f64>() / len;
    let mj = shared.iter().map(|p| p.1).sum::<f64>() / len;
    let (mut sij, mut sii, mut sjj) = (0.0, 0.0, 0.0);
    for &(a, b) in &shared {
        sij += (a - mi) * (b - mj);
        sii += (a - mi) * (a - mi);
        sjj += (b - mj) * (b - mj);
    }
    if sii == 0.0 {
        return Err(Error::ZeroVarianceRow(ids[i].clone()));
    }
    if sjj == 0.0 {
        return Err(Error::ZeroVarianceRow(ids[j].clone()));
    }
    Ok(sij / (sii * sjj).sqrt())
}

/// Weighted components of a composite similarity; the identity receives the
/// remaining weight 1 − Σθ.
#[derive(Debug, Clone)]
pub struct CompositeSpec<'a> {
    components: Vec<(&'a SimilarityMatrix, f64)>,
}

impl<'a> CompositeSpec<'a> {
    pub fn new(components: Vec<(&'a SimilarityMatrix, f64)>) -> Result<Self> {
        let weights = WeightConfig::new(
            components
                .iter()
                .enumerate()
                .map(|(i, (_, t))| (format!("component{i}"), *t))
                .collect(),
        )?;
        debug_assert_eq!(weights.len(), components.len());
        if let Some((first, _)) = components.first() {
            if components.iter().any(|(s, _)| s.registry() != first.registry()) {
                return Err(Error::RegistryMismatch);
            }
        }
        Ok(Self { components })
    }

    pub fn from_weights(
        components: &'a [SimilarityMatrix],
        weights: &WeightConfig,
    ) -> Result<Self> {
        if components.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} components for {} weights",
                components.len(),
                weights.len()
            )));
        }
        Self::new(components.iter().zip(weights.thetas()).collect())
    }

    pub fn nugget(&self) -> f64 {
        (1.0 - self.components.iter().map(|(_, t)| t).sum::<f64>()).max(0.0)
    }
}

/// Σ = Σ_s θ_s S_s + (1 − Σθ)·I.
pub fn compose(spec: &CompositeSpec<'_>) -> Result<SimilarityMatrix> {
    let (first, _) = spec
        .components
        .first()
        .ok_or_else(|| Error::Validation("composite needs at least one component".into()))?;
    let n = first.dim();
    let mut out = Mat::<f64>::zeros(n, n);
    for (s, theta) in &spec.components {
        if *theta == 0.0 {
            continue;
        }
        for j in 0..n {
            let src = s.values().col_as_slice(j);
            let dst = out.col_as_slice_mut(j);
            for (d, v) in dst.iter_mut().zip(src) {
                *d += theta * v;
            }
        }
    }
    let nugget = spec.nugget();
    for i in 0..n {
        out[(i, i)] += nugget;
    }
    SimilarityMatrix::new(first.registry().clone(), out, Provenance::Composite, None)
}

/// Convenience wrapper: composite from component matrices and a weight config.
pub fn compose_weights(
    components: &[SimilarityMatrix],
    weights: &WeightConfig,
) -> Result<SimilarityMatrix> {
    compose(&CompositeSpec::from_weights(components, weights)?)
}
