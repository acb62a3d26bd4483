use std::fs;
use std::path::Path;

use twist_harness::config::{DatasetDecl, ExperimentConfig, Method};
use twist_harness::experiment::{load_test, run_experiment, run_experiment_with, subsample_sweep, Models};
use twist_harness::synth::{write_scenario, ScenarioKind, SynthOptions};

fn small() -> SynthOptions {
    SynthOptions { seed: 3, dev: 6, test: 8, length: 4, train: 120 }
}

fn load(kind: ScenarioKind, dir: &Path, opts: &SynthOptions) -> ExperimentConfig {
    let path = write_scenario(kind, dir, opts).unwrap();
    let mut config = ExperimentConfig::load(&path).unwrap();
    config.output_dir = dir.join("out");
    config
}

fn rows(tsv: &str) -> Vec<Vec<String>> {
    tsv.lines().skip(1).map(|l| l.split('\t').map(String::from).collect()).collect()
}

fn column(tsv: &str, name: &str) -> usize {
    tsv.lines().next().unwrap().split('\t').position(|c| c == name).unwrap()
}

#[test]
fn single_method_writes_one_row_and_one_list_per_line() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Complementary, dir.path(), &small());
    fs::write(dir.path().join("two.src"), "s0\ns1\n").unwrap();
    fs::write(dir.path().join("two.ref"), "a\nb\n").unwrap();
    config.data.test = DatasetDecl {
        source: Some(dir.path().join("two.src")),
        references: vec![dir.path().join("two.ref")],
        ..Default::default()
    };
    config.methods = vec![Method::IsolationF];
    let report = run_experiment(&config).unwrap();
    assert_eq!(rows(&report.report_tsv()).len(), 1);
    let nbest = dir.path().join("out/nbest/test/isolation-f");
    let mut files: Vec<_> = fs::read_dir(&nbest).unwrap().map(|e| e.unwrap().file_name()).collect();
    files.sort();
    assert_eq!(files, ["0.nbest", "1.nbest"]);
    for report in ["report.tsv", "metrics.tsv", "iterations.tsv", "failures.tsv", "timing.tsv", "trace.tsv"] {
        assert!(dir.path().join("out").join(report).is_file(), "{report}");
    }
}

#[test]
fn guided_methods_beat_isolation_on_complementary_models() {
    let dir = tempfile::tempdir().unwrap();
    let config = load(ScenarioKind::Complementary, dir.path(), &small());
    let report = run_experiment(&config).unwrap();
    let tsv = report.report_tsv();
    let bleu = column(&tsv, "bleu");
    let score = |m: &str| -> f64 { rows(&tsv).iter().find(|r| r[0] == m).unwrap()[bleu].parse().unwrap() };
    assert_eq!(rows(&tsv).len(), 6);
    for twist in ["twist-fg", "twist-gf"] {
        assert!(score(twist) >= score("isolation-f"));
        assert!(score(twist) >= score("isolation-g"));
    }
    assert!(score("twist-fg") > score("isolation-f"));
    let iterations = report.iterations_tsv();
    assert_eq!(rows(&iterations).len(), 2 * (config.guidance.iterations + 1));
}

#[test]
fn both_twist_directions_agree_when_models_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Identical, dir.path(), &small());
    config.methods = vec![Method::TwistFg, Method::TwistGf];
    let models = Models::load(&config).unwrap();
    let test = load_test(&config).unwrap();
    let report = run_experiment_with(&config, &models, &test).unwrap();
    let [fg, gf] = &report.runs[..] else { panic!("two runs") };
    assert_eq!(fg.hypotheses(), gf.hypotheses());
    assert_eq!(fg.bleu, gf.bleu);
    assert_eq!(fg.rouge_l, gf.rouge_l);
}

#[test]
fn reports_do_not_depend_on_workers_or_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Complementary, dir.path(), &small());
    let models = Models::load(&config).unwrap();
    let test = load_test(&config).unwrap();
    let mut outputs = Vec::new();
    for workers in [1, 0, 3, 1] {
        config.workers = workers;
        config.output_dir = dir.path().join(format!("out{}", outputs.len()));
        let r = run_experiment_with(&config, &models, &test).unwrap();
        outputs.push((r.report_tsv(), r.metrics_tsv().unwrap(), r.iterations_tsv(), r.failures_tsv()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let a = fs::read(dir.path().join("out0/nbest/test/twist-fg/3.1.g-guided.nbest")).unwrap();
    let b = fs::read(dir.path().join("out2/nbest/test/twist-fg/3.1.g-guided.nbest")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn full_size_sweep_reproduces_the_base_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Copy, dir.path(), &SynthOptions { test: 5, ..small() });
    config.methods = vec![Method::IsolationG, Method::RerankFg, Method::TwistFg];
    let sweep = subsample_sweep(&config).unwrap();
    let base = run_experiment(&config).unwrap();
    let full = small().train;
    let last: Vec<_> = sweep.runs.iter().filter(|r| r.subsample == Some(full)).collect();
    assert_eq!(last.len(), base.runs.len());
    for (s, b) in last.iter().zip(&base.runs) {
        assert_eq!(s.hypotheses(), b.hypotheses(), "{}", b.method);
        assert_eq!((s.bleu, s.step_evals), (b.bleu, b.step_evals));
    }
    let again = subsample_sweep(&config).unwrap();
    assert_eq!(sweep.tsv(), again.tsv());
    assert!(dir.path().join("out/sweep.tsv").is_file());
}

#[test]
fn a_line_missing_its_field_fails_alone() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Complementary, dir.path(), &small());
    let records = dir.path().join("r.jsonl");
    fs::write(&records, "{\"source\":\"s0\",\"reference\":\"x\"}\n{\"other\":\"s1\",\"reference\":\"y\"}\n").unwrap();
    config.data.test = DatasetDecl { records: Some(records), ..Default::default() };
    let report = run_experiment(&config).unwrap();
    for run in &report.runs {
        assert_eq!(run.lines.len(), 2);
        assert_eq!(run.failed(), 1, "{}", run.method);
        assert!(run.lines[0].is_ok());
    }
    let failures = fs::read_to_string(dir.path().join("out/failures.tsv")).unwrap();
    assert_eq!(rows(&failures).len(), report.runs.len());
    assert!(failures.contains("source"));
}

#[test]
fn each_model_reads_its_own_view() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Complementary, dir.path(), &small());
    let records = dir.path().join("r.jsonl");
    fs::write(&records, "{\"abstract\":\"s0\",\"intro\":\"s1\",\"reference\":\"x\"}\n").unwrap();
    fs::write(dir.path().join("plain.src"), "s0\n").unwrap();
    fs::write(dir.path().join("plain.ref"), "x\n").unwrap();
    config.methods = vec![Method::IsolationF, Method::IsolationG];
    config.output_dir = dir.path().join("plain");
    config.data.test = DatasetDecl {
        source: Some(dir.path().join("plain.src")),
        references: vec![dir.path().join("plain.ref")],
        ..Default::default()
    };
    let plain = run_experiment(&config).unwrap();

    config.output_dir = dir.path().join("views");
    config.data.test = DatasetDecl { records: Some(records), ..Default::default() };
    config.models.f.view = vec!["abstract".into()];
    config.models.g.view = vec!["intro".into()];
    let views = run_experiment(&config).unwrap();
    assert_eq!(views.runs[0].hypotheses(), plain.runs[0].hypotheses());

    fs::write(dir.path().join("plain.src"), "s1\n").unwrap();
    config.output_dir = dir.path().join("plain1");
    config.data.test = DatasetDecl {
        source: Some(dir.path().join("plain.src")),
        references: vec![dir.path().join("plain.ref")],
        ..Default::default()
    };
    config.models.f.view = vec!["source".into()];
    config.models.g.view = vec!["source".into()];
    let plain1 = run_experiment(&config).unwrap();
    assert_eq!(views.runs[1].hypotheses(), plain1.runs[1].hypotheses());
    assert_ne!(plain.runs[1].hypotheses(), plain1.runs[1].hypotheses());
}

#[test]
fn fusion_needs_a_shared_spec() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Complementary, dir.path(), &small());
    config.methods = vec![Method::Fusion];
    let err = run_experiment(&config).unwrap_err();
    assert_eq!(err.exit_code(), 1);

    let dir = tempfile::tempdir().unwrap();
    let mut config = load(ScenarioKind::Identical, dir.path(), &small());
    config.methods = vec![Method::Fusion, Method::IsolationF];
    let report = run_experiment(&config).unwrap();
    assert_eq!(report.runs[0].failed(), 0);
}
