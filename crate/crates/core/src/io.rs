//! On-disk formats: tab-separated data files, GCTA binary GRM triplets and
//! JSON reports.
//!
//! TSV files are UTF-8 with a header row; the first column holds sample
//! identifiers and `NA` marks a missing value.
//!
//! A GCTA GRM is stored under a common prefix as
//! `<prefix>.grm.id` (family and individual ID per line),
//! `<prefix>.grm.bin` (lower triangle including the diagonal, row by row,
//! little-endian `f32`) and `<prefix>.grm.N.bin` (per-pair marker counts in
//! the same layout).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluation::EvaluationReport;
use crate::model::{Cohort, OmicDataset, OmicKind, SampleRegistry, SimilarityMatrix, TraitKind};
use crate::similarity::PairCounts;

const MISSING: &str = "NA";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// A parsed TSV table: header, then (line number, fields) per body row.
struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(false)
        .flexible(true)
        .from_reader(open(path)?);
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = record.iter().map(|f| f.trim().to_string()).collect();
        match &header {
            None => header = Some(fields),
            Some(h) => {
                if fields.len() != h.len() {
                    return Err(parse_error(
                        path,
                        line,
                        format!(
                            "row `{}` has {} fields, header has {}",
                            fields[0],
                            fields.len(),
                            h.len()
                        ),
                    ));
                }
                rows.push((line, fields));
            }
        }
    }
    let header = header.ok_or_else(|| parse_error(path, 1, "empty file"))?;
    if header.len() < 2 {
        return Err(parse_error(path, 1, "header needs an ID column and at least one data column"));
    }
    Ok(Table { header, rows })
}

fn parse_value(path: &Path, line: u64, column: &str, field: &str) -> Result<Option<f64>> {
    if field == MISSING {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(parse_error(
            path,
            line,
            format!("column `{column}`: cannot parse `{field}` as a finite number"),
        )),
    }
}

fn read_omic_table(path: &Path, kind: OmicKind) -> Result<OmicDataset> {
    let table = read_table(path)?;
    let marker_ids: Vec<String> = table.header[1..].to_vec();
    let mut ids = Vec::with_capacity(table.rows.len());
    let mut rows = Vec::with_capacity(table.rows.len());
    for (line, fields) in &table.rows {
        ids.push(fields[0].clone());
        let mut row = Vec::with_capacity(marker_ids.len());
        for (field, marker) in fields[1..].iter().zip(&marker_ids) {
            let v = parse_value(path, *line, marker, field)?;
            if kind == OmicKind::GenotypeDosage {
                if let Some(x) = v {
                    if !(0.0..=2.0).contains(&x) {
                        return Err(Error::Range {
                            path: path.to_path_buf(),
                            line: *line,
                            column: marker.clone(),
                            value: x,
                        });
                    }
                }
            }
            row.push(v);
        }
        rows.push(row);
    }
    let registry = SampleRegistry::new(ids)?;
    match kind {
        OmicKind::GenotypeDosage => OmicDataset::genotype(registry, marker_ids, rows),
        OmicKind::Continuous => OmicDataset::continuous(registry, marker_ids, rows),
    }
}

/// Genotype dosages in [0, 2]; allele frequencies estimated in-sample.
pub fn read_dosage_tsv(path: impl AsRef<Path>) -> Result<OmicDataset> {
    let ds = read_omic_table(path.as_ref(), OmicKind::GenotypeDosage)?;
    let degenerate = ds.degenerate_markers();
    if !degenerate.is_empty() {
        log::warn!(
            "{}: {} monomorphic or all-missing markers will be excluded downstream",
            path.as_ref().display(),
            degenerate.len()
        );
    }
    Ok(ds)
}

/// Continuous omic levels (expression, methylation, ...).
pub fn read_continuous_tsv(path: impl AsRef<Path>) -> Result<OmicDataset> {
    read_omic_table(path.as_ref(), OmicKind::Continuous)
}

/// Writes any omic dataset in the TSV layout read by the functions above.
pub fn write_omic_tsv(data: &OmicDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut out = String::from("ID");
    for m in data.marker_ids() {
        out.push('\t');
        out.push_str(m);
    }
    out.push('\n');
    for (i, id) in data.registry().ids().iter().enumerate() {
        out.push_str(id);
        for l in 0..data.n_markers() {
            out.push('\t');
            match data.get(i, l) {
                Some(v) => out.push_str(&v.to_string()),
                None => out.push_str(MISSING),
            }
        }
        out.push('\n');
        if out.len() > 1 << 20 {
            w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
            out.clear();
        }
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Two-column `marker<TAB>frequency` file with a header, reordered to match
/// `marker_ids`.
pub fn read_allele_freqs(path: impl AsRef<Path>, marker_ids: &[String]) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let mut by_id = std::collections::HashMap::new();
    for (line, fields) in &table.rows {
        let p = parse_value(path, *line, &table.header[1], &fields[1])?
            .ok_or_else(|| parse_error(path, *line, "missing frequency"))?;
        by_id.insert(fields[0].clone(), p);
    }
    marker_ids
        .iter()
        .map(|m| {
            by_id
                .get(m)
                .copied()
                .ok_or_else(|| Error::Validation(format!("no frequency for marker `{m}`")))
        })
        .collect()
}

/// Phenotype file: sample ID, phenotype, then optional covariate columns
/// (kept in file order). Rows with a missing phenotype or covariate are
/// dropped.
pub fn read_phenotype_tsv(path: impl AsRef<Path>, trait_kind: TraitKind) -> Result<Cohort> {
    let path = path.as_ref();
    let table = read_table(path)?;
    let covariate_names: Vec<String> = table.header[2..].to_vec();
    let mut ids = Vec::new();
    let mut phenotype = Vec::new();
    let mut covariates: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    'rows: for (line, fields) in &table.rows {
        let y = match (trait_kind, fields[1].as_str()) {
            (_, MISSING) => {
                dropped += 1;
                continue;
            }
            (TraitKind::Binary, "0") => 0.0,
            (TraitKind::Binary, "1") => 1.0,
            (TraitKind::Binary, other) => match other.parse::<f64>() {
                Ok(v) if v == 0.0 || v == 1.0 => v,
                _ => {
                    return Err(Error::Coding {
                        path: path.to_path_buf(),
                        line: *line,
                        value: other.to_string(),
                    })
                }
            },
            (TraitKind::Quantitative, field) => {
                parse_value(path, *line, &table.header[1], field)?.expect("NA handled above")
            }
        };
        let mut row = Vec::with_capacity(covariate_names.len());
        for (field, name) in fields[2..].iter().zip(&covariate_names) {
            match parse_value(path, *line, name, field)? {
                Some(v) => row.push(v),
                None => {
                    dropped += 1;
                    continue 'rows;
                }
            }
        }
        ids.push(fields[0].clone());
        phenotype.push(y);
        covariates.push(row);
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} rows with missing values", path.display());
    }
    let registry = SampleRegistry::new(ids)?;
    let cohort = Cohort::new(registry, phenotype, trait_kind)?;
    if covariate_names.is_empty() {
        return Ok(cohort);
    }
    let z = Mat::from_fn(covariates.len(), covariate_names.len(), |i, c| covariates[i][c]);
    cohort.with_covariates(covariate_names, z)
}

pub fn write_phenotype_tsv(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut out = String::from("ID\tphenotype");
    for c in cohort.covariate_names() {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (i, id) in cohort.registry().ids().iter().enumerate() {
        out.push_str(id);
        out.push('\t');
        out.push_str(&cohort.phenotype()[i].to_string());
        if let Some(z) = cohort.covariates() {
            for c in 0..z.ncols() {
                out.push('\t');
                out.push_str(&z[(i, c)].to_string());
            }
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Paths of a GCTA GRM triplet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrmFileSet {
    pub prefix: PathBuf,
    pub id_file: PathBuf,
    pub bin_file: PathBuf,
    pub n_file: PathBuf,
}

impl GrmFileSet {
    pub fn new(prefix: impl AsRef<Path>) -> Self {
        let prefix = prefix.as_ref().to_path_buf();
        let with = |suffix: &str| {
            let mut s = prefix.as_os_str().to_owned();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            id_file: with(".grm.id"),
            bin_file: with(".grm.bin"),
            n_file: with(".grm.N.bin"),
            prefix,
        }
    }
}

/// Byte length of a packed lower-triangle `f32` file for `n` samples.
pub fn grm_bin_len(n: usize) -> u64 {
    4 * (n as u64) * (n as u64 + 1) / 2
}

fn write_packed(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let mut w = create(path)?;
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_packed(path: &Path, n: usize) -> Result<Vec<f32>> {
    let expected = grm_bin_len(n);
    let found = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    if found != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    let mut bytes = Vec::with_capacity(expected as usize);
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_grm_gcta(
    matrix: &SimilarityMatrix,
    counts: &PairCounts,
    prefix: impl AsRef<Path>,
) -> Result<GrmFileSet> {
    let files = GrmFileSet::new(prefix);
    let n = matrix.dim();
    if counts.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "counts for {} samples, matrix has {n}",
            counts.dim()
        )));
    }
    let mut w = create(&files.id_file)?;
    for id in matrix.registry().ids() {
        writeln!(w, "{id}\t{id}").map_err(|e| Error::io(&files.id_file, e))?;
    }
    w.flush().map_err(|e| Error::io(&files.id_file, e))?;
    let v = matrix.values();
    write_packed(
        &files.bin_file,
        (0..n).flat_map(|i| (0..=i).map(move |j| v[(i, j)] as f32)),
    )?;
    write_packed(&files.n_file, counts.packed().iter().copied())?;
    Ok(files)
}

/// Reads a GRM triplet. Sample identifiers are taken from the individual ID
/// column; the counts file is optional.
pub fn read_grm_gcta(prefix: impl AsRef<Path>) -> Result<(SimilarityMatrix, Option<PairCounts>)> {
    let files = GrmFileSet::new(prefix);
    let reader = BufReader::new(open(&files.id_file)?);
    let mut ids = Vec::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&files.id_file, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let iid = match fields.as_slice() {
            [_, iid, ..] => *iid,
            _ => {
                return Err(parse_error(
                    &files.id_file,
                    line_no as u64 + 1,
                    "expected family and individual ID",
                ))
            }
        };
        ids.push(iid.to_string());
    }
    let n = ids.len();
    let packed = read_packed(&files.bin_file, n)?;
    let mut values = Mat::<f64>::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            let v = packed[k] as f64;
            values[(i, j)] = v;
            values[(j, i)] = v;
            k += 1;
        }
    }
    let counts = if files.n_file.exists() {
        Some(PairCounts::from_packed(n, read_packed(&files.n_file, n)?)?)
    } else {
        None
    };
    let matrix = SimilarityMatrix::from_loaded(SampleRegistry::new(ids)?, values)?;
    Ok((matrix, counts))
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

pub fn write_report_json(report: &EvaluationReport, path: impl AsRef<Path>) -> Result<()> {
    report.validate()?;
    write_json(report, path)
}

pub fn read_report_json(path: impl AsRef<Path>) -> Result<EvaluationReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let report: EvaluationReport = serde_json::from_str(&text)?;
    report.validate()?;
    Ok(report)
}

/// Per-sample out-of-sample predictions next to the observed phenotype.
pub fn write_predictions_tsv(
    ids: &[String],
    observed: &[f64],
    predicted: &[f64],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let mut out = String::from("ID\tobserved\tpredicted\n");
    for ((id, y), p) in ids.iter().zip(observed).zip(predicted) {
        out.push_str(&format!("{id}\t{y}\t{p}\n"));
    }
    w.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
