use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use omickriging::baseline::{polyscore_cv, principal_components, PolyscoreSettings, ScoreMode, Selection};
use omickriging::evaluation::{repeat_and_summarize, CvSettings, EvaluationReport, Metric, RepeatedCv};
use omickriging::grid::{grid_search, GridSpec, GridSurface};
use omickriging::io;
use omickriging::kriging::KrigingMode;
use omickriging::model::{align_inputs, Cohort, SimilarityMatrix, TraitKind, WeightConfig};
use omickriging::similarity::{build_correlation_similarity, build_grm, compose_weights, GrmDiagonal, GrmOptions, PairCounts};
use omickriging::simulate::{simulate_cohort, SimConfig};

use crate::args::*;
use crate::UsageError;

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!(UsageError(format!("input file `{}` does not exist", path.display())));
    }
    Ok(())
}

fn trait_kind(arg: TraitArg) -> TraitKind {
    match arg {
        TraitArg::Quantitative => TraitKind::Quantitative,
        TraitArg::Binary => TraitKind::Binary,
    }
}

fn metric(arg: Option<MetricArg>, kind: TraitKind) -> Metric {
    match arg {
        Some(MetricArg::R2Signed) => Metric::R2Signed,
        Some(MetricArg::R2) => Metric::R2Plain,
        Some(MetricArg::Auc) => Metric::Auc,
        None => Metric::default_for(kind),
    }
}

fn split_pair<'a>(flag: &str, s: &'a str) -> Result<(&'a str, &'a str)> {
    match s.split_once('=') {
        Some((a, b)) if !a.is_empty() && !b.is_empty() => Ok((a, b)),
        _ => bail!(UsageError(format!("--{flag} expects NAME=VALUE, got `{s}`"))),
    }
}

fn load_cohort(cv: &CvArgs) -> Result<Cohort> {
    require_file(&cv.pheno)?;
    Ok(io::read_phenotype_tsv(&cv.pheno, trait_kind(cv.trait_kind))?)
}

fn load_matrices(specs: &[String]) -> Result<(Vec<String>, Vec<SimilarityMatrix>)> {
    let mut names = Vec::new();
    let mut matrices = Vec::new();
    for spec in specs {
        let (name, prefix) = split_pair("matrix", spec)?;
        if names.iter().any(|n| n == name) {
            bail!(UsageError(format!("component `{name}` given twice")));
        }
        let files = io::GrmFileSet::new(prefix);
        require_file(&files.id_file)?;
        require_file(&files.bin_file)?;
        let (m, _) = io::read_grm_gcta(prefix).with_context(|| format!("reading matrix `{name}`"))?;
        names.push(name.to_string());
        matrices.push(m);
    }
    Ok((names, matrices))
}

fn parse_weights(names: &[String], specs: &[String]) -> Result<WeightConfig> {
    let mut thetas = vec![0.0; names.len()];
    for spec in specs {
        let (name, value) = split_pair("weight", spec)?;
        let Some(pos) = names.iter().position(|n| n == name) else {
            bail!(UsageError(format!("--weight names unknown component `{name}`")));
        };
        thetas[pos] = value
            .parse()
            .map_err(|_| UsageError(format!("--weight {name}: `{value}` is not a number")))?;
    }
    Ok(WeightConfig::new(names.iter().cloned().zip(thetas).collect())?)
}

fn settings(cv: &CvArgs, mode: ModeArg, cohort: &Cohort) -> CvSettings {
    CvSettings {
        metric: metric(cv.metric, cohort.trait_kind()),
        mode: match mode {
            ModeArg::Universal => KrigingMode::Universal,
            ModeArg::Simple => KrigingMode::Simple,
        },
    }
}

fn print_summary(report: &EvaluationReport) {
    let metric = serde_json::to_value(report.metric_name).unwrap_or_default();
    let metric = metric.as_str().unwrap_or("metric");
    match (report.mean, report.ci) {
        (Some(mean), Some([lo, hi])) => {
            say!("{metric}: mean {mean:.6} (95% interval {lo:.6} to {hi:.6}) over {} repeats", report.n_repeats)
        }
        _ => say!("{metric}: undefined in all {} repeats (degenerate predictions)", report.n_repeats),
    }
    if report.missing_repeats > 0 && report.mean.is_some() {
        say!("{} repeats had an undefined metric", report.missing_repeats);
    }
}

fn write_outputs(out: &Path, report: &EvaluationReport, observed: &[f64], predicted: &[f64]) -> Result<()> {
    let report_path = with_suffix(out, ".report.json");
    io::write_report_json(report, &report_path)?;
    io::write_predictions_tsv(&report.sample_ids, observed, predicted, with_suffix(out, ".predictions.tsv"))?;
    say!("wrote {}", report_path.display());
    Ok(())
}

pub fn make_grm(args: &MakeGrmArgs) -> Result<()> {
    require_file(&args.dosage)?;
    if !(0.0..0.5).contains(&args.maf) {
        bail!(UsageError(format!("--maf {} outside [0, 0.5)", args.maf)));
    }
    let mut data = io::read_dosage_tsv(&args.dosage)?;
    if let Some(freq) = &args.freq {
        require_file(freq)?;
        let freqs = io::read_allele_freqs(freq, data.marker_ids())?;
        data = data.with_allele_freqs(freqs)?;
    }
    let options = GrmOptions {
        min_freq: args.maf,
        diagonal: if args.gcta_diagonal { GrmDiagonal::Gcta } else { GrmDiagonal::CrossProduct },
    };
    let built = build_grm(&data, &options)?;
    let files = io::write_grm_gcta(&built.matrix, &built.counts, &args.out)?;
    say!("samples: {}", data.n_samples());
    say!("markers used: {}", built.included.len());
    say!("markers excluded: {}", built.excluded);
    say!("wrote {}", files.bin_file.display());
    Ok(())
}

pub fn make_similarity(args: &MakeSimilarityArgs) -> Result<()> {
    require_file(&args.input)?;
    let data = io::read_continuous_tsv(&args.input)?;
    let matrix = build_correlation_similarity(&data)?;
    let counts = PairCounts::uniform(matrix.dim(), data.n_markers());
    let files = io::write_grm_gcta(&matrix, &counts, &args.out)?;
    say!("samples: {}", data.n_samples());
    say!("features: {}", data.n_markers());
    say!("wrote {}", files.bin_file.display());
    Ok(())
}

fn report_grid(
    names: &[String],
    matrices: &[SimilarityMatrix],
    cohort: &Cohort,
    cv: &CvArgs,
    grid: &GridArgs,
    settings: &CvSettings,
) -> Result<(GridSurface, RepeatedCv)> {
    let spec = GridSpec::new(names.to_vec(), grid.step)?;
    let surface = grid_search(matrices, cohort, &spec, cv.folds, grid.search_repeats, cv.seed, settings)?;
    let best = surface.best().weights.clone();
    say!(
        "best weights: {} (nugget {:.3})",
        best.components()
            .iter()
            .map(|(n, t)| format!("{n}={t:.3}"))
            .collect::<Vec<_>>()
            .join(", "),
        best.nugget()
    );
    let sigma = compose_weights(matrices, &best)?;
    let mut run = repeat_and_summarize(&sigma, cohort, &best, cv.folds, cv.repeats, cv.seed, settings)?;
    run.report.grid = Some(serde_json::to_value(&surface)?);
    Ok((surface, run))
}

fn aligned(cv: &CvArgs, inputs: &KrigingInputs) -> Result<(Vec<String>, Vec<SimilarityMatrix>, Cohort)> {
    let cohort = load_cohort(cv)?;
    let (names, matrices) = load_matrices(&inputs.matrices)?;
    let a = align_inputs(&cohort, &matrices, &[])?;
    if a.registry.len() < cohort.len() || matrices.iter().any(|m| m.dim() != a.registry.len()) {
        log::warn!("analysis restricted to {} samples present in every input", a.registry.len());
    }
    Ok((names, a.components, a.cohort))
}

pub fn krige(args: &KrigeArgs) -> Result<()> {
    let (names, matrices, cohort) = aligned(&args.cv, &args.inputs)?;
    let settings = settings(&args.cv, args.inputs.mode, &cohort);
    let run = if args.grid_search {
        report_grid(&names, &matrices, &cohort, &args.cv, &args.grid, &settings)?.1
    } else {
        if args.weights.is_empty() {
            bail!(UsageError("give component weights with --weight or use --grid-search".into()));
        }
        let weights = parse_weights(&names, &args.weights)?;
        let sigma = compose_weights(&matrices, &weights)?;
        repeat_and_summarize(&sigma, &cohort, &weights, args.cv.folds, args.cv.repeats, args.cv.seed, &settings)?
    };
    print_summary(&run.report);
    write_outputs(&args.cv.out, &run.report, cohort.phenotype(), &run.first_predictions)
}

pub fn gridsearch(args: &GridsearchArgs) -> Result<()> {
    let (names, matrices, cohort) = aligned(&args.cv, &args.inputs)?;
    let settings = settings(&args.cv, args.inputs.mode, &cohort);
    let (surface, run) = report_grid(&names, &matrices, &cohort, &args.cv, &args.grid, &settings)?;
    let surface_path = with_suffix(&args.cv.out, ".surface.json");
    io::write_json(&surface, &surface_path)?;
    say!("grid points: {}", surface.points.len());
    say!("wrote {}", surface_path.display());
    print_summary(&run.report);
    write_outputs(&args.cv.out, &run.report, cohort.phenotype(), &run.first_predictions)
}

pub fn polyscore(args: &PolyscoreArgs) -> Result<()> {
    require_file(&args.dosage)?;
    let cohort = load_cohort(&args.cv)?;
    let data = io::read_dosage_tsv(&args.dosage)?;
    let grm = match (&args.grm, args.n_pcs) {
        (_, 0) => None,
        (Some(prefix), _) => Some(io::read_grm_gcta(prefix)?.0),
        (None, _) => Some(build_grm(&data, &GrmOptions::default())?.matrix),
    };
    let grms: Vec<SimilarityMatrix> = grm.into_iter().collect();
    let a = align_inputs(&cohort, &grms, std::slice::from_ref(&data))?;
    let pcs = match a.components.first() {
        Some(g) => {
            if args.mode == ScoreModeArg::Marginal {
                log::warn!("--n-pcs is ignored in marginal mode");
            }
            let pcs = principal_components(g, args.n_pcs)?;
            Some(pcs.vectors)
        }
        None => None,
    };
    let selection = match (args.top_k, args.bonferroni_alpha) {
        (Some(k), None) => Selection::TopK(k),
        (None, Some(alpha)) => Selection::Bonferroni(alpha),
        _ => bail!(UsageError("give exactly one of --top-k and --bonferroni-alpha".into())),
    };
    let settings = PolyscoreSettings {
        selection,
        mode: match args.mode {
            ScoreModeArg::Marginal => ScoreMode::Marginal,
            ScoreModeArg::Joint => ScoreMode::Joint,
        },
        metric: metric(args.cv.metric, a.cohort.trait_kind()),
    };
    let (report, first) = polyscore_cv(
        &a.datasets[0],
        &a.cohort,
        pcs.as_ref(),
        &settings,
        args.cv.folds,
        args.cv.repeats,
        args.cv.seed,
    )?;
    print_summary(&report);
    write_outputs(&args.cv.out, &report, a.cohort.phenotype(), &first)
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let config = SimConfig {
        n_samples: args.n,
        m_genetic: args.m_genetic,
        l_expression: args.l_expression,
        l_other: args.l_other,
        theta: SimConfig::theta(args.theta_g, args.theta_t, args.theta_o)?,
        seed: args.seed,
        trait_kind: trait_kind(args.trait_kind),
        case_fraction: args.case_fraction,
    };
    let sim = simulate_cohort(&config)?;
    for (name, data) in &sim.datasets {
        let path = with_suffix(&args.out, &format!(".{name}.tsv"));
        io::write_omic_tsv(data, &path)?;
        say!("wrote {}", path.display());
    }
    let pheno = with_suffix(&args.out, ".pheno.tsv");
    io::write_phenotype_tsv(&sim.cohort, &pheno)?;
    let truth = with_suffix(&args.out, ".truth.json");
    io::write_json(&sim.truth, &truth)?;
    say!("wrote {}", pheno.display());
    say!("wrote {}", truth.display());
    Ok(())
}
