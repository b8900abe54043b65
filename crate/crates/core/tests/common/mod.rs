#![allow(dead_code)]

use faer::Mat;
use omickriging::model::{Cohort, OmicDataset, Provenance, SampleRegistry, SimilarityMatrix, TraitKind};

pub fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:03}")).collect()
}

pub fn registry(n: usize) -> SampleRegistry {
    SampleRegistry::new(ids(n)).unwrap()
}

pub fn mat(rows: &[Vec<f64>]) -> Mat<f64> {
    Mat::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

pub fn to_rows(m: &Mat<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn similarity(values: Mat<f64>) -> SimilarityMatrix {
    SimilarityMatrix::new(registry(values.nrows()), values, Provenance::Loaded, None).unwrap()
}

pub fn quantitative(y: Vec<f64>) -> Cohort {
    Cohort::new(registry(y.len()), y, TraitKind::Quantitative).unwrap()
}

pub fn genotypes(rows: &[Vec<u8>]) -> OmicDataset {
    let m = rows[0].len();
    OmicDataset::genotype(
        registry(rows.len()),
        (0..m).map(|l| format!("rs{l}")).collect(),
        rows.iter()
            .map(|r| r.iter().map(|&v| Some(f64::from(v))).collect())
            .collect(),
    )
    .unwrap()
}

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs()))
            .unwrap();
        m.swap(c, p);
        let d = m[c][c];
        for v in m[c].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                if f != 0.0 {
                    for j in 0..2 * n {
                        m[r][j] -= f * m[c][j];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = b.len();
    let m = b[0].len();
    a.iter()
        .map(|r| (0..m).map(|j| (0..k).map(|t| r[t] * b[t][j]).sum()).collect())
        .collect()
}

pub fn transpose(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Conditional-mean (GLS/BLUP) prediction for one test point:
/// zᵀβ̂ + ρᵀΣ⁻¹(Y − Zβ̂), β̂ = (ZᵀΣ⁻¹Z)⁻¹ZᵀΣ⁻¹Y.
pub fn blup(sigma: &[Vec<f64>], z: &[Vec<f64>], y: &[f64], rho: &[f64], zt: &[f64]) -> f64 {
    let si = inverse(sigma);
    let zt_si = matmul(&transpose(z), &si);
    let gram = matmul(&zt_si, z);
    let beta = matvec(&inverse(&gram), &matvec(&zt_si, y));
    let resid: Vec<f64> = y.iter().zip(matvec(z, &beta)).map(|(a, b)| a - b).collect();
    dot(zt, &beta) + dot(&matvec(&si, rho), &resid)
}

/// (1/M)·X̃X̃ᵀ over markers with 0.001 < p < 0.999, by explicit loops.
pub fn brute_force_grm(rows: &[Vec<u8>]) -> Option<Vec<Vec<f64>>> {
    let n = rows.len();
    let m = rows[0].len();
    let mut cols = Vec::new();
    for l in 0..m {
        let p = rows.iter().map(|r| f64::from(r[l])).sum::<f64>() / (2.0 * n as f64);
        if p > 0.001 && p < 0.999 {
            let s = (2.0 * p * (1.0 - p)).sqrt();
            cols.push(rows.iter().map(|r| (f64::from(r[l]) - 2.0 * p) / s).collect::<Vec<f64>>());
        }
    }
    if cols.is_empty() {
        return None;
    }
    let mm = cols.len() as f64;
    Some(
        (0..n)
            .map(|i| (0..n).map(|j| cols.iter().map(|c| c[i] * c[j]).sum::<f64>() / mm).collect())
            .collect(),
    )
}

/// AUC by enumerating every (case, control) pair.
pub fn pair_count_auc(pred: &[f64], labels: &[f64]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li == 1.0 && lj == 0.0 {
                pairs += 1.0;
                if pred[i] > pred[j] {
                    wins += 1.0;
                } else if pred[i] == pred[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

/// Textbook Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
