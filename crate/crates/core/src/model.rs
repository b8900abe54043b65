//! Domain types shared across the crate: sample registries, omic datasets,
//! similarity matrices, cohorts and component weights.
//!
//! Everything here is immutable once constructed. Reindexing produces new
//! values rather than mutating in place, so the types can be shared freely
//! between worker threads.

use std::collections::{BTreeSet, HashMap};

use faer::Mat;
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Relative tolerance used for the symmetry check on similarity matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Ordered list of unique sample identifiers with a reverse index.
#[derive(Debug, Clone)]
pub struct SampleRegistry {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl SampleRegistry {
    pub fn new(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (pos, id) in ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::EmptyId(pos));
            }
            if index.insert(id.clone(), pos).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn from_strs<S: AsRef<str>>(ids: &[S]) -> Result<Self> {
        Self::new(ids.iter().map(|s| s.as_ref().to_string()).collect())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Positions in `self` of every identifier of `target`, in target order.
    fn positions_of(&self, target: &SampleRegistry) -> Result<Vec<usize>> {
        target
            .ids
            .iter()
            .map(|id| self.position(id).ok_or_else(|| Error::UnknownId(id.clone())))
            .collect()
    }
}

impl PartialEq for SampleRegistry {
    fn eq(&self, other: &Self) -> bool {
        self.ids == other.ids
    }
}

impl Eq for SampleRegistry {}

/// Registry holding the identifiers present in every input, sorted.
pub fn intersect_registries<'a, I>(registries: I) -> Result<SampleRegistry>
where
    I: IntoIterator<Item = &'a SampleRegistry>,
{
    let mut iter = registries.into_iter();
    let first = iter.next().ok_or(Error::EmptyIntersection)?;
    let mut shared: BTreeSet<&str> = first.ids.iter().map(String::as_str).collect();
    for reg in iter {
        shared.retain(|id| reg.position(id).is_some());
    }
    if shared.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    SampleRegistry::new(shared.into_iter().map(str::to_string).collect())
}

/// Anything whose rows are indexed by a [`SampleRegistry`].
pub trait SampleIndexed: Sized {
    fn registry(&self) -> &SampleRegistry;

    /// Returns a copy restricted and permuted to `target`, which must be a
    /// subset of this object's registry.
    fn reindex(&self, target: &SampleRegistry) -> Result<Self>;
}

/// Aligns homogeneous objects onto the sorted intersection of their samples.
pub fn align_samples<T: SampleIndexed>(objects: &[T]) -> Result<(SampleRegistry, Vec<T>)> {
    let shared = intersect_registries(objects.iter().map(SampleIndexed::registry))?;
    let aligned = objects
        .iter()
        .map(|o| o.reindex(&shared))
        .collect::<Result<Vec<_>>>()?;
    Ok((shared, aligned))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum OmicKind {
    GenotypeDosage,
    Continuous,
}

/// Sample-by-marker matrix of dosages or continuous omic levels.
///
/// Missing cells are flagged in the mask and hold `NaN` in `values`.
#[derive(Debug, Clone)]
pub struct OmicDataset {
    registry: SampleRegistry,
    kind: OmicKind,
    values: Mat<f64>,
    missing: Vec<bool>,
    marker_ids: Vec<String>,
    allele_freqs: Option<Vec<Option<f64>>>,
}

impl OmicDataset {
    /// Builds a genotype dataset; `rows[i][l]` is `None` when missing.
    /// Allele frequencies are estimated in-sample as mean dosage / 2.
    pub fn genotype(
        registry: SampleRegistry,
        marker_ids: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let mut ds = Self::from_rows(registry, OmicKind::GenotypeDosage, marker_ids, rows)?;
        for i in 0..ds.n_samples() {
            for l in 0..ds.n_markers() {
                if let Some(v) = ds.get(i, l) {
                    if !(0.0..=2.0).contains(&v) {
                        return Err(Error::Validation(format!(
                            "dosage {v} for sample `{}` marker `{}` is outside [0, 2]",
                            ds.registry.ids[i], ds.marker_ids[l]
                        )));
                    }
                }
            }
        }
        ds.allele_freqs = Some(ds.in_sample_frequencies());
        Ok(ds)
    }

    pub fn continuous(
        registry: SampleRegistry,
        marker_ids: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        Self::from_rows(registry, OmicKind::Continuous, marker_ids, rows)
    }

    fn from_rows(
        registry: SampleRegistry,
        kind: OmicKind,
        marker_ids: Vec<String>,
        rows: Vec<Vec<Option<f64>>>,
    ) -> Result<Self> {
        let n = registry.len();
        let m = marker_ids.len();
        if rows.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for {} samples",
                rows.len(),
                n
            )));
        }
        let mut seen = BTreeSet::new();
        for id in &marker_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate marker id `{id}`")));
            }
        }
        let mut values = Mat::<f64>::zeros(n, m);
        let mut missing = vec![false; n * m];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values for {m} markers",
                    row.len()
                )));
            }
            for (l, v) in row.iter().enumerate() {
                match v {
                    Some(x) if x.is_finite() => values[(i, l)] = *x,
                    Some(x) => {
                        return Err(Error::Validation(format!("non-finite value {x}")));
                    }
                    None => {
                        values[(i, l)] = f64::NAN;
                        missing[i * m + l] = true;
                    }
                }
            }
        }
        Ok(Self {
            registry,
            kind,
            values,
            missing,
            marker_ids,
            allele_freqs: None,
        })
    }

    /// Replaces in-sample frequencies with externally supplied ones.
    /// Entries outside (0, 1) mark the marker as unusable.
    pub fn with_allele_freqs(mut self, freqs: Vec<f64>) -> Result<Self> {
        if self.kind != OmicKind::GenotypeDosage {
            return Err(Error::Validation(
                "allele frequencies apply to genotype data only".into(),
            ));
        }
        if freqs.len() != self.n_markers() {
            return Err(Error::DimensionMismatch(format!(
                "{} frequencies for {} markers",
                freqs.len(),
                self.n_markers()
            )));
        }
        self.allele_freqs = Some(
            freqs
                .into_iter()
                .map(|p| (p > 0.0 && p < 1.0).then_some(p))
                .collect(),
        );
        Ok(self)
    }

    fn in_sample_frequencies(&self) -> Vec<Option<f64>> {
        (0..self.n_markers())
            .map(|l| {
                let (sum, count) = (0..self.n_samples())
                    .filter_map(|i| self.get(i, l))
                    .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                if count == 0 {
                    return None;
                }
                let p = sum / count as f64 / 2.0;
                (p > 0.0 && p < 1.0).then_some(p)
            })
            .collect()
    }

    pub fn registry(&self) -> &SampleRegistry {
        &self.registry
    }

    pub fn kind(&self) -> OmicKind {
        self.kind
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_markers(&self) -> usize {
        self.values.ncols()
    }

    pub fn marker_ids(&self) -> &[String] {
        &self.marker_ids
    }

    /// Raw value matrix; missing cells are `NaN`.
    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    pub fn is_missing(&self, sample: usize, marker: usize) -> bool {
        self.missing[sample * self.n_markers() + marker]
    }

    pub fn get(&self, sample: usize, marker: usize) -> Option<f64> {
        (!self.is_missing(sample, marker)).then(|| self.values[(sample, marker)])
    }

    /// Per-marker reference allele frequency; `None` for monomorphic or
    /// all-missing markers. Always `None` for continuous data.
    pub fn allele_freqs(&self) -> Option<&[Option<f64>]> {
        self.allele_freqs.as_deref()
    }

    /// Markers without a usable frequency (monomorphic or entirely missing).
    pub fn degenerate_markers(&self) -> Vec<usize> {
        match &self.allele_freqs {
            Some(f) => (0..f.len()).filter(|&l| f[l].is_none()).collect(),
            None => Vec::new(),
        }
    }

    /// Restricts to a subset of markers, keeping their order.
    pub fn select_markers(&self, markers: &[usize]) -> Self {
        let n = self.n_samples();
        let m = self.n_markers();
        let values = Mat::from_fn(n, markers.len(), |i, j| self.values[(i, markers[j])]);
        let mut missing = Vec::with_capacity(n * markers.len());
        for i in 0..n {
            missing.extend(markers.iter().map(|&l| self.missing[i * m + l]));
        }
        Self {
            registry: self.registry.clone(),
            kind: self.kind,
            values,
            missing,
            marker_ids: markers.iter().map(|&l| self.marker_ids[l].clone()).collect(),
            allele_freqs: self
                .allele_freqs
                .as_ref()
                .map(|f| markers.iter().map(|&l| f[l]).collect()),
        }
    }
}

impl SampleIndexed for OmicDataset {
    fn registry(&self) -> &SampleRegistry {
        &self.registry
    }

    fn reindex(&self, target: &SampleRegistry) -> Result<Self> {
        let rows = self.registry.positions_of(target)?;
        let m = self.n_markers();
        let values = Mat::from_fn(rows.len(), m, |i, l| self.values[(rows[i], l)]);
        let mut missing = Vec::with_capacity(rows.len() * m);
        for &r in &rows {
            missing.extend_from_slice(&self.missing[r * m..(r + 1) * m]);
        }
        Ok(Self {
            registry: target.clone(),
            kind: self.kind,
            values,
            missing,
            marker_ids: self.marker_ids.clone(),
            allele_freqs: self.allele_freqs.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    Grm,
    Correlation,
    Composite,
    Identity,
    Loaded,
}

/// Symmetric n×n similarity over a sample registry.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    registry: SampleRegistry,
    values: Mat<f64>,
    provenance: Provenance,
    marker_count: Option<usize>,
}

fn asymmetry(values: &Mat<f64>) -> Option<(usize, usize, f64)> {
    let n = values.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let a = values[(i, j)];
            let b = values[(j, i)];
            let diff = (a - b).abs();
            if diff > SYMMETRY_TOL * a.abs().max(b.abs()).max(1.0) || diff.is_nan() {
                return Some((i, j, diff));
            }
        }
    }
    None
}

impl SimilarityMatrix {
    pub fn new(
        registry: SampleRegistry,
        values: Mat<f64>,
        provenance: Provenance,
        marker_count: Option<usize>,
    ) -> Result<Self> {
        if values.nrows() != registry.len() || values.ncols() != registry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for {} samples",
                values.nrows(),
                values.ncols(),
                registry.len()
            )));
        }
        if let Some((i, j, diff)) = asymmetry(&values) {
            return Err(Error::NotSymmetric { i, j, diff });
        }
        Ok(Self {
            registry,
            values,
            provenance,
            marker_count,
        })
    }

    /// Accepts a matrix read from disk, replacing it with (S + Sᵀ)/2 when it
    /// fails the symmetry check.
    pub fn from_loaded(registry: SampleRegistry, values: Mat<f64>) -> Result<Self> {
        match Self::new(registry.clone(), values.clone(), Provenance::Loaded, None) {
            Err(Error::NotSymmetric { i, j, diff }) => {
                log::warn!(
                    "loaded matrix is asymmetric at ({i}, {j}) by {diff:e}; symmetrizing"
                );
                let n = values.nrows();
                let sym = Mat::from_fn(n, n, |a, b| 0.5 * (values[(a, b)] + values[(b, a)]));
                Self::new(registry, sym, Provenance::Loaded, None)
            }
            other => other,
        }
    }

    pub fn identity(registry: SampleRegistry) -> Self {
        let n = registry.len();
        Self {
            registry,
            values: Mat::identity(n, n),
            provenance: Provenance::Identity,
            marker_count: None,
        }
    }

    pub fn registry(&self) -> &SampleRegistry {
        &self.registry
    }

    pub fn values(&self) -> &Mat<f64> {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn marker_count(&self) -> Option<usize> {
        self.marker_count
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

impl SampleIndexed for SimilarityMatrix {
    fn registry(&self) -> &SampleRegistry {
        &self.registry
    }

    fn reindex(&self, target: &SampleRegistry) -> Result<Self> {
        let pos = self.registry.positions_of(target)?;
        let n = pos.len();
        Ok(Self {
            registry: target.clone(),
            values: Mat::from_fn(n, n, |i, j| self.values[(pos[i], pos[j])]),
            provenance: self.provenance,
            marker_count: self.marker_count,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraitKind {
    Quantitative,
    Binary,
}

/// Phenotype vector with optional covariates over a sample registry.
///
/// Binary traits are coded 0 (control) / 1 (case) and are otherwise handled
/// exactly like quantitative ones (linear probability model).
#[derive(Debug, Clone)]
pub struct Cohort {
    registry: SampleRegistry,
    phenotype: Vec<f64>,
    trait_kind: TraitKind,
    covariates: Option<Mat<f64>>,
    covariate_names: Vec<String>,
}

impl Cohort {
    pub fn new(
        registry: SampleRegistry,
        phenotype: Vec<f64>,
        trait_kind: TraitKind,
    ) -> Result<Self> {
        if phenotype.len() != registry.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} phenotype values for {} samples",
                phenotype.len(),
                registry.len()
            )));
        }
        if let Some(v) = phenotype.iter().find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite phenotype {v}")));
        }
        if trait_kind == TraitKind::Binary {
            if let Some(v) = phenotype.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(Error::Validation(format!(
                    "binary phenotype must be 0 or 1, found {v}"
                )));
            }
        }
        Ok(Self {
            registry,
            phenotype,
            trait_kind,
            covariates: None,
            covariate_names: Vec::new(),
        })
    }

    pub fn with_covariates(mut self, names: Vec<String>, covariates: Mat<f64>) -> Result<Self> {
        if covariates.nrows() != self.registry.len() || covariates.ncols() != names.len() {
            return Err(Error::DimensionMismatch(format!(
                "covariates {}x{} for {} samples and {} names",
                covariates.nrows(),
                covariates.ncols(),
                self.registry.len(),
                names.len()
            )));
        }
        self.covariates = Some(covariates);
        self.covariate_names = names;
        Ok(self)
    }

    pub fn registry(&self) -> &SampleRegistry {
        &self.registry
    }

    pub fn phenotype(&self) -> &[f64] {
        &self.phenotype
    }

    pub fn trait_kind(&self) -> TraitKind {
        self.trait_kind
    }

    pub fn covariates(&self) -> Option<&Mat<f64>> {
        self.covariates.as_ref()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.phenotype.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phenotype.is_empty()
    }
}

impl SampleIndexed for Cohort {
    fn registry(&self) -> &SampleRegistry {
        &self.registry
    }

    fn reindex(&self, target: &SampleRegistry) -> Result<Self> {
        let pos = self.registry.positions_of(target)?;
        Ok(Self {
            registry: target.clone(),
            phenotype: pos.iter().map(|&p| self.phenotype[p]).collect(),
            trait_kind: self.trait_kind,
            covariates: self
                .covariates
                .as_ref()
                .map(|z| Mat::from_fn(pos.len(), z.ncols(), |i, c| z[(pos[i], c)])),
            covariate_names: self.covariate_names.clone(),
        })
    }
}

/// Inputs of one analysis after alignment onto a common sample set.
#[derive(Debug, Clone)]
pub struct AlignedInputs {
    pub registry: SampleRegistry,
    pub cohort: Cohort,
    pub components: Vec<SimilarityMatrix>,
    pub datasets: Vec<OmicDataset>,
}

/// Aligns a cohort with any number of similarity matrices and datasets.
pub fn align_inputs(
    cohort: &Cohort,
    components: &[SimilarityMatrix],
    datasets: &[OmicDataset],
) -> Result<AlignedInputs> {
    let registries = std::iter::once(cohort.registry())
        .chain(components.iter().map(SimilarityMatrix::registry))
        .chain(datasets.iter().map(OmicDataset::registry));
    let registry = intersect_registries(registries)?;
    Ok(AlignedInputs {
        cohort: cohort.reindex(&registry)?,
        components: components
            .iter()
            .map(|c| c.reindex(&registry))
            .collect::<Result<_>>()?,
        datasets: datasets
            .iter()
            .map(|d| d.reindex(&registry))
            .collect::<Result<_>>()?,
        registry,
    })
}

/// Sum of component weights above which a configuration is rejected.
const WEIGHT_SUM_SLACK: f64 = 1e-9;

/// Non-negative component weights θ with Σθ ≤ 1; the remainder is the nugget.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightConfig {
    components: Vec<(String, f64)>,
}

impl WeightConfig {
    pub fn new(components: Vec<(String, f64)>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for (name, theta) in &components {
            if !names.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate component `{name}`")));
            }
            if !(theta.is_finite() && *theta >= 0.0) {
                return Err(Error::NegativeWeight {
                    name: name.clone(),
                    value: *theta,
                });
            }
        }
        let sum: f64 = components.iter().map(|(_, t)| t).sum();
        if sum > 1.0 + WEIGHT_SUM_SLACK {
            return Err(Error::WeightSumExceedsOne(sum));
        }
        Ok(Self { components })
    }

    /// All-zero weights for the named components (pure nugget).
    pub fn zeros<S: AsRef<str>>(names: &[S]) -> Self {
        Self {
            components: names.iter().map(|n| (n.as_ref().to_string(), 0.0)).collect(),
        }
    }

    pub fn components(&self) -> &[(String, f64)] {
        &self.components
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.components.iter().map(|(_, t)| *t).collect()
    }

    pub fn theta_sum(&self) -> f64 {
        self.components.iter().map(|(_, t)| t).sum()
    }

    pub fn nugget(&self) -> f64 {
        (1.0 - self.theta_sum()).max(0.0)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Serialized as an object keyed by component name, in component order.
impl Serialize for WeightConfig {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.components.len()))?;
        for (name, theta) in &self.components {
            map.serialize_entry(name, theta)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for WeightConfig {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct OrderedWeights;

        impl<'de> Visitor<'de> for OrderedWeights {
            type Value = WeightConfig;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map from component name to weight")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Self::Value, A::Error> {
                let mut components = Vec::new();
                while let Some((name, theta)) = map.next_entry::<String, f64>()? {
                    components.push((name, theta));
                }
                WeightConfig::new(components).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_map(OrderedWeights)
    }
}
