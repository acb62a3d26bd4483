//! Experiment runners: method comparison, lambda grid tuning, timing and
//! training-corpus subsampling.
//!
//! Every runner writes TSV files with a header line into the output
//! directory. `report.tsv`, `metrics.tsv`, `iterations.tsv`, `failures.tsv`,
//! `grid.tsv`, `selected.tsv` and `sweep.tsv` are byte-identical across runs
//! of the same config and seed, whatever the worker count; wall-clock times
//! go to `timing.tsv`, `trace.tsv` and `bench.tsv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use twist_core::metrics::{write_metrics_tsv, MetricRow};
use twist_core::twist::TRACE_HEADER;
use twist_core::{map_indexed, rouge_l, BeamConfig, EvalPair, Execution, GuidanceConfig, Metric};

use crate::config::{ExperimentConfig, Method, Role};
use crate::data::{load_dataset, read_lines, Dataset};
use crate::error::{config_err, Result};
use crate::methods::{run_method, LineFailure, LineResult};
use crate::models::{load_model, LoadedModel};

/// Ties in the dev metric closer than this go to the smaller lambdas.
pub const TIE_TOLERANCE: f64 = 1e-9;

pub const REPORT_HEADER: &str =
    "method\tdataset\tsubsample\tlambda_f\tlambda_g\tlines\tfailed\tbleu\trouge_l\tstep_evals\tsequences_scored";
pub const ITERATIONS_HEADER: &str = "method\tdataset\tsubsample\titeration\tbleu\trouge_l";
pub const TIMING_HEADER: &str = "method\tdataset\tsubsample\twall_us";
pub const FAILURES_HEADER: &str = "method\tdataset\tsubsample\tline\terror";
pub const GRID_HEADER: &str = "method\tlambda_f\tlambda_g\tmetric\tvalue\tfailed";
pub const SELECTED_HEADER: &str = "method\tlambda_f\tlambda_g\tmetric\tdev_value\ttest_bleu\ttest_rouge_l";
pub const BENCH_HEADER: &str = "method\tlines\tfailed\tstep_evals\tstep_ratio\tsequences_scored\twall_us\ttime_ratio";
pub const SWEEP_HEADER: &str = "size\tmethod\tdataset\tlines\tfailed\tbleu\trouge_l\tstep_evals";

/// Both models, loaded once and shared by every run.
pub struct Models {
    pub f: LoadedModel,
    pub g: LoadedModel,
}

impl Models {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self { f: load_model(config, &config.models.f, None)?, g: load_model(config, &config.models.g, None)? })
    }

    fn check_methods(&self, methods: &[Method]) -> Result<()> {
        if methods.contains(&Method::Fusion) && self.f.spec().id() != self.g.spec().id() {
            return Err(config_err("fusion needs both models to share vocabulary, tokenization and generation order"));
        }
        Ok(())
    }
}

pub fn load_test(config: &ExperimentConfig) -> Result<Dataset> {
    load_dataset("test", &config.data.test, |p| config.resolve(p))
}

pub fn load_dev(config: &ExperimentConfig) -> Result<Dataset> {
    let decl = config.data.dev.as_ref().ok_or_else(|| config_err("lambda tuning needs a [data.dev] dataset"))?;
    load_dataset("dev", decl, |p| config.resolve(p))
}

/// Corpus-level scores of one method on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub dataset: String,
    pub subsample: Option<usize>,
    pub lambda: (f64, f64),
    pub lines: Vec<Result<LineResult, LineFailure>>,
    pub bleu: f64,
    pub rouge_l: f64,
    pub step_evals: usize,
    pub sequences_scored: usize,
    pub wall: Duration,
    /// `(t, bleu, rouge_l)` of f's output after iteration t (twist only).
    pub iterations: Vec<(usize, f64, f64)>,
}

impl MethodRun {
    pub fn failed(&self) -> usize {
        self.lines.iter().filter(|l| l.is_err()).count()
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Bleu => self.bleu,
            Metric::RougeL => self.rouge_l,
        }
    }

    pub fn hypotheses(&self) -> Vec<Option<&str>> {
        self.lines.iter().map(|l| l.as_ref().ok().map(|r| r.hypothesis.as_str())).collect()
    }

    fn subsample_label(&self) -> String {
        self.subsample.map_or_else(|| "-".to_string(), |s| s.to_string())
    }

    /// Directory of this run's n-best lists, relative to the output root.
    pub fn nbest_dir(&self) -> PathBuf {
        let mut p = PathBuf::from("nbest");
        if let Some(s) = self.subsample {
            p.push(format!("n{s}"));
        }
        p.join(&self.dataset).join(self.method.name())
    }
}

fn scores(pairs: &[EvalPair]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    (Metric::Bleu.evaluate(pairs), rouge_l(pairs).f1)
}

/// Decodes every line of `dataset` with `method`; failed lines are kept in
/// the run and left out of the metrics.
pub fn evaluate_method(
    models: &Models,
    dataset: &Dataset,
    method: Method,
    beam: &BeamConfig,
    guidance: &GuidanceConfig,
    exec: Execution,
) -> MethodRun {
    let lines = map_indexed(&dataset.examples, exec, |i, ex| {
        run_method(method, &models.f, &models.g, &ex.record, beam, guidance, i)
    });
    let pairs_at = |pick: &dyn Fn(&LineResult) -> Option<String>| -> Vec<EvalPair> {
        lines
            .iter()
            .zip(&dataset.examples)
            .filter_map(|(l, ex)| {
                let r = l.as_ref().ok()?;
                Some(EvalPair { hypothesis: pick(r)?, references: ex.references.clone() })
            })
            .collect()
    };
    let (bleu, rouge) = scores(&pairs_at(&|r| Some(r.hypothesis.clone())));
    let mut iterations = Vec::new();
    if method.is_twist() {
        for t in 0..=guidance.iterations {
            let (b, r) = scores(&pairs_at(&|r| r.iterations.get(t).cloned()));
            iterations.push((t, b, r));
        }
    }
    let ok = || lines.iter().filter_map(|l| l.as_ref().ok());
    MethodRun {
        method,
        dataset: dataset.name.clone(),
        subsample: None,
        lambda: (guidance.lambda_f, guidance.lambda_g),
        step_evals: ok().map(|r| r.step_evals).sum(),
        sequences_scored: ok().map(|r| r.sequences_scored).sum(),
        wall: ok().map(|r| r.wall).sum(),
        bleu,
        rouge_l: rouge,
        iterations,
        lines,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub runs: Vec<MethodRun>,
}

fn lambda_cells(run: &MethodRun) -> (String, String) {
    if run.method.is_twist() {
        (run.lambda.0.to_string(), run.lambda.1.to_string())
    } else {
        ("-".into(), "-".into())
    }
}

impl RunReport {
    pub fn report_tsv(&self) -> String {
        let mut s = format!("{REPORT_HEADER}\n");
        for r in &self.runs {
            let (lf, lg) = lambda_cells(r);
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{lf}\t{lg}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{}",
                r.method,
                r.dataset,
                r.subsample_label(),
                r.lines.len(),
                r.failed(),
                r.bleu,
                r.rouge_l,
                r.step_evals,
                r.sequences_scored
            );
        }
        s
    }

    pub fn metrics_tsv(&self) -> Result<String> {
        let rows: Vec<MetricRow> = self
            .runs
            .iter()
            .flat_map(|r| {
                [(Metric::Bleu, r.bleu), (Metric::RougeL, r.rouge_l)].map(|(m, value)| MetricRow {
                    method: r.method.name().to_string(),
                    dataset: r.dataset.clone(),
                    metric: m.name().to_string(),
                    value,
                })
            })
            .collect();
        let mut out = Vec::new();
        write_metrics_tsv(&rows, &mut out)?;
        Ok(String::from_utf8(out).expect("tsv is utf-8"))
    }

    pub fn iterations_tsv(&self) -> String {
        let mut s = format!("{ITERATIONS_HEADER}\n");
        for r in &self.runs {
            for (t, b, rl) in &r.iterations {
                let _ = writeln!(s, "{}\t{}\t{}\t{t}\t{b:.4}\t{rl:.4}", r.method, r.dataset, r.subsample_label());
            }
        }
        s
    }

    pub fn failures_tsv(&self) -> String {
        let mut s = format!("{FAILURES_HEADER}\n");
        for r in &self.runs {
            for (i, l) in r.lines.iter().enumerate() {
                if let Err(e) = l {
                    let msg = e.message.replace(['\t', '\n'], " ");
                    let _ = writeln!(s, "{}\t{}\t{}\t{i}\t{msg}", r.method, r.dataset, r.subsample_label());
                }
            }
        }
        s
    }

    pub fn timing_tsv(&self) -> String {
        let mut s = format!("{TIMING_HEADER}\n");
        for r in &self.runs {
            let _ = writeln!(s, "{}\t{}\t{}\t{}", r.method, r.dataset, r.subsample_label(), r.wall.as_micros());
        }
        s
    }

    pub fn trace_tsv(&self) -> String {
        let mut s = format!("{TRACE_HEADER}\n");
        for r in &self.runs {
            let dir = r.nbest_dir();
            for l in &r.lines {
                let passes = match l {
                    Ok(res) => &res.passes,
                    Err(f) => &f.passes,
                };
                for p in passes {
                    let _ = writeln!(
                        s,
                        "{}\t{}\t{}\t{}\t{}\t{}",
                        r.method,
                        p.iteration,
                        p.label,
                        dir.join(&p.nbest).display(),
                        p.step_evals,
                        p.wall.as_micros()
                    );
                }
            }
        }
        s
    }

    /// Writes every report and n-best list under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.tsv"), self.report_tsv())?;
        fs::write(dir.join("metrics.tsv"), self.metrics_tsv()?)?;
        fs::write(dir.join("iterations.tsv"), self.iterations_tsv())?;
        fs::write(dir.join("failures.tsv"), self.failures_tsv())?;
        fs::write(dir.join("timing.tsv"), self.timing_tsv())?;
        fs::write(dir.join("trace.tsv"), self.trace_tsv())?;
        for r in &self.runs {
            let nb = dir.join(r.nbest_dir());
            fs::create_dir_all(&nb)?;
            for l in &r.lines {
                let files = match l {
                    Ok(res) => &res.nbest,
                    Err(f) => &f.nbest,
                };
                for f in files {
                    fs::write(nb.join(&f.name), &f.contents)?;
                }
            }
        }
        Ok(())
    }
}

fn execution(config: &ExperimentConfig) -> Execution {
    Execution::from_workers(config.workers)
}

fn run_methods(
    config: &ExperimentConfig,
    models: &Models,
    dataset: &Dataset,
    subsample: Option<usize>,
) -> Result<Vec<MethodRun>> {
    models.check_methods(&config.methods)?;
    Ok(config
        .methods
        .iter()
        .map(|&m| {
            let mut run = evaluate_method(models, dataset, m, &config.beam, &config.guidance, execution(config));
            run.subsample = subsample;
            run
        })
        .collect())
}

/// Decodes the test set with every configured method and writes the reports.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let models = Models::load(config)?;
    let test = load_test(config)?;
    run_experiment_with(config, &models, &test)
}

pub fn run_experiment_with(config: &ExperimentConfig, models: &Models, test: &Dataset) -> Result<RunReport> {
    let report = RunReport { runs: run_methods(config, models, test, None)? };
    report.write(&config.output_path())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridCell {
    pub method: Method,
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub value: f64,
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selected {
    pub method: Method,
    pub lambda_f: f64,
    pub lambda_g: f64,
    pub dev_value: f64,
    pub test: MethodRun,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneReport {
    pub metric: Metric,
    pub cells: Vec<GridCell>,
    pub selected: Vec<Selected>,
}

impl TuneReport {
    pub fn grid_tsv(&self) -> String {
        let mut s = format!("{GRID_HEADER}\n");
        for c in &self.cells {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{}",
                c.method,
                c.lambda_f,
                c.lambda_g,
                self.metric.name(),
                c.value,
                c.failed
            );
        }
        s
    }

    pub fn selected_tsv(&self) -> String {
        let mut s = format!("{SELECTED_HEADER}\n");
        for c in &self.selected {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.4}\t{:.4}",
                c.method,
                c.lambda_f,
                c.lambda_g,
                self.metric.name(),
                c.dev_value,
                c.test.bleu,
                c.test.rouge_l
            );
        }
        s
    }
}

/// The grid in evaluation order: ascending lambda_f, then lambda_g.
pub fn grid_points(grid: &[f64]) -> Vec<(f64, f64)> {
    let mut values = grid.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    values.iter().flat_map(|&lf| values.iter().map(move |&lg| (lf, lg))).collect()
}

/// Index of the best cell; a later cell must win by more than
/// [`TIE_TOLERANCE`], so ties go to the earliest (smallest lambdas).
pub fn select_cell(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b] + TIE_TOLERANCE) {
            best = Some(i);
        }
    }
    best
}

fn tuned_methods(config: &ExperimentConfig) -> Vec<Method> {
    let twist: Vec<Method> = config.methods.iter().copied().filter(|m| m.is_twist()).collect();
    if twist.is_empty() {
        vec![Method::TwistFg]
    } else {
        twist
    }
}

/// Evaluates every grid cell on the dev set for each configured twist method,
/// selects the best by the dev metric and scores the selection on the test set.
pub fn tune_lambda(config: &ExperimentConfig) -> Result<TuneReport> {
    let models = Models::load(config)?;
    let dev = load_dev(config)?;
    let test = load_test(config)?;
    tune_lambda_with(config, &models, &dev, &test)
}

pub fn tune_lambda_with(
    config: &ExperimentConfig,
    models: &Models,
    dev: &Dataset,
    test: &Dataset,
) -> Result<TuneReport> {
    let metric = config.dev_metric;
    let mut cells = Vec::new();
    let mut selected = Vec::new();
    for method in tuned_methods(config) {
        let points = grid_points(&config.lambda_grid);
        let mut values = Vec::with_capacity(points.len());
        for &(lf, lg) in &points {
            let guidance = GuidanceConfig { lambda_f: lf, lambda_g: lg, ..config.guidance.clone() };
            let run = evaluate_method(models, dev, method, &config.beam, &guidance, execution(config));
            values.push(run.metric(metric));
            cells.push(GridCell {
                method,
                lambda_f: lf,
                lambda_g: lg,
                value: run.metric(metric),
                failed: run.failed(),
            });
        }
        let best = select_cell(&values).expect("grid is non-empty");
        let (lf, lg) = points[best];
        let guidance = GuidanceConfig { lambda_f: lf, lambda_g: lg, ..config.guidance.clone() };
        let test_run = evaluate_method(models, test, method, &config.beam, &guidance, execution(config));
        selected.push(Selected { method, lambda_f: lf, lambda_g: lg, dev_value: values[best], test: test_run });
    }
    let report = TuneReport { metric, cells, selected };
    let dir = config.output_path();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("grid.tsv"), report.grid_tsv())?;
    fs::write(dir.join("selected.tsv"), report.selected_tsv())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: Method,
    pub lines: usize,
    pub failed: usize,
    pub step_evals: usize,
    pub sequences_scored: usize,
    pub wall: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn baseline(&self) -> &BenchRow {
        self.rows.iter().find(|r| r.method == Method::IsolationF).expect("bench always runs isolation-f")
    }

    pub fn step_ratio(&self, row: &BenchRow) -> f64 {
        row.step_evals as f64 / self.baseline().step_evals.max(1) as f64
    }

    pub fn time_ratio(&self, row: &BenchRow) -> f64 {
        row.wall.as_secs_f64() / self.baseline().wall.as_secs_f64().max(f64::MIN_POSITIVE)
    }

    pub fn tsv(&self) -> String {
        let mut s = format!("{BENCH_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.4}\t{}\t{}\t{:.3}",
                r.method,
                r.lines,
                r.failed,
                r.step_evals,
                self.step_ratio(r),
                r.sequences_scored,
                r.wall.as_micros(),
                self.time_ratio(r)
            );
        }
        s
    }
}

/// Times each method over the whole test set, one line at a time on a
/// single thread, with models already loaded. isolation-f is always run
/// first and is the 1.0 reference.
pub fn bench(config: &ExperimentConfig) -> Result<BenchReport> {
    let models = Models::load(config)?;
    let test = load_test(config)?;
    bench_with(config, &models, &test)
}

pub fn bench_with(config: &ExperimentConfig, models: &Models, test: &Dataset) -> Result<BenchReport> {
    let mut methods = vec![Method::IsolationF];
    methods.extend(config.methods.iter().copied().filter(|&m| m != Method::IsolationF));
    models.check_methods(&methods)?;
    let mut rows = Vec::new();
    for method in methods {
        let start = Instant::now();
        let run = evaluate_method(models, test, method, &config.beam, &config.guidance, Execution::Sequential);
        let wall = start.elapsed();
        rows.push(BenchRow {
            method,
            lines: run.lines.len(),
            failed: run.failed(),
            step_evals: run.step_evals,
            sequences_scored: run.sequences_scored,
            wall,
        });
    }
    let report = BenchReport { rows };
    let dir = config.output_path();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("bench.tsv"), report.tsv())?;
    Ok(report)
}

/// Sorted indices of a seeded uniform sample of `size` out of `total`.
pub fn sample_indices(total: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > total {
        return Err(config_err(format!("subsample size {size} exceeds the corpus size {total}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, total, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub runs: Vec<MethodRun>,
}

impl SweepReport {
    pub fn tsv(&self) -> String {
        let mut s = format!("{SWEEP_HEADER}\n");
        for r in &self.runs {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
                r.subsample_label(),
                r.method,
                r.dataset,
                r.lines.len(),
                r.failed(),
                r.bleu,
                r.rouge_l,
                r.step_evals
            );
        }
        s
    }
}

/// Retrains the designated n-gram model on seeded subsamples of its corpus
/// and reruns every method on the test set for each size.
pub fn subsample_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    let sub = config.subsample.as_ref().ok_or_else(|| config_err("sweep needs a [subsample] section"))?;
    let (decl, other_decl) = match sub.model {
        Role::F => (&config.models.f, &config.models.g),
        Role::G => (&config.models.g, &config.models.f),
    };
    let corpus = read_lines(&config.resolve(decl.train.as_deref().expect("validated")))?;
    for &size in &sub.sizes {
        sample_indices(corpus.len(), size, config.seed)?;
    }
    let test = load_test(config)?;
    let mut other = Some(load_model(config, other_decl, None)?);
    let mut runs = Vec::new();
    for &size in &sub.sizes {
        let idx = sample_indices(corpus.len(), size, config.seed)?;
        let subset: Vec<String> = idx.iter().map(|&i| corpus[i].clone()).collect();
        let trained = load_model(config, decl, Some(&subset))?;
        let fixed = other.take().expect("returned each round");
        let models = match sub.model {
            Role::F => Models { f: trained, g: fixed },
            Role::G => Models { f: fixed, g: trained },
        };
        runs.extend(run_methods(config, &models, &test, Some(size))?);
        other = Some(match sub.model {
            Role::F => models.g,
            Role::G => models.f,
        });
    }
    let report = SweepReport { runs };
    let dir = config.output_path();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("sweep.tsv"), report.tsv())?;
    Ok(report)
}
