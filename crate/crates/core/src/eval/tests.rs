use super::*;
use crate::datagen::SyntheticTaskSpec;
use crate::error::Error;
use crate::model::ModelConfig;

#[test]
fn accuracy_examples() {
    assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 0]).unwrap(), 2.0 / 3.0);
    assert!(matches!(accuracy(&[], &[]), Err(Error::Metric(_))));
    assert!(accuracy(&[1], &[1, 2]).is_err());
}

#[test]
fn f1_examples() {
    let perfect = f1_macro(&[vec![0.9, 0.1], vec![0.2, 0.7]], &[vec![1, 0], vec![0, 1]], 0.5).unwrap();
    assert_eq!(perfect.value, 1.0);
    assert!(!perfect.zero_division);

    // class A: TP=1 FP=1 FN=0; class B: TP=0 FP=0 FN=1
    let s = f1_macro(&[vec![0.9, 0.1], vec![0.8, 0.2]], &[vec![1, 1], vec![0, 0]], 0.5).unwrap();
    assert!((s.value - 1.0 / 3.0).abs() < 1e-15);
    assert!(s.zero_division);

    let none = f1_macro(&[vec![0.1, 0.2]], &[vec![0, 0]], 0.5).unwrap();
    assert_eq!(none.value, 0.0);
    assert!(none.zero_division);

    for t in [0.0, 1.0, -0.5, f64::NAN] {
        assert!(matches!(f1_macro(&[vec![0.5]], &[vec![1]], t), Err(Error::Config(_))));
    }
}

#[test]
fn single_label_f1() {
    let s = f1_macro_classes(&[0, 0, 1], &[0, 1, 1], 2).unwrap();
    // class 0: TP1 FP1 FN0 -> 2/3; class 1: TP1 FP0 FN1 -> 2/3
    assert!((s.value - 2.0 / 3.0).abs() < 1e-15);
}

fn tiny_matrix() -> MatrixConfig {
    let data = SyntheticTaskSpec {
        a: 2,
        b: 2,
        h: 4,
        w: 4,
        content_len: 2,
        group_size: 2,
        n_distractors: 2,
        seed: 3,
        ..SyntheticTaskSpec::default()
    };
    let mut cfg = MatrixConfig {
        model: ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            patch_size: 2,
            prompt_len: 2,
            ..ModelConfig::for_spec(&data)
        },
        data,
        methods: vec![Method::Head, Method::Msp],
        seeds: vec![7],
        n_pretext: 20,
        n_train: 12,
        n_eval: 10,
        ..MatrixConfig::default()
    };
    cfg.pretrain.epochs = 1;
    cfg.tune.epochs = 1;
    cfg
}

#[test]
fn matrix_grid_size_and_determinism() {
    let cfg = tiny_matrix();
    let a = run_matrix(&cfg).unwrap();
    assert_eq!(a.report.rows.len(), 18);
    assert_eq!(a.report.aggregates.len(), 18);
    assert_eq!(a.cells.len(), 6);
    assert!(a.cells.iter().filter(|c| c.method == Method::Msp).all(|c| c.final_ortho.is_some()));
    let b = run_matrix(&cfg).unwrap();
    for f in [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown] {
        assert_eq!(a.report.render(f), b.report.render(f));
    }

    let csv = a.report.to_csv();
    assert_eq!(csv.lines().count(), 19);
    assert_eq!(MetricsReport::from_csv(&csv).unwrap(), a.report);
    assert_eq!(MetricsReport::from_json(&a.report.to_json()).unwrap(), a.report);

    let md = a.report.to_markdown();
    let body: Vec<&str> = md.lines().filter(|l| l.starts_with("| ") && l.contains('%')).collect();
    assert_eq!(body.len(), 9);
    assert!(body.iter().all(|l| l.matches(" ± ").count() == 2 && l.contains("**")));
}

#[test]
fn matrix_rejects_bad_configs() {
    let mut cfg = tiny_matrix();
    cfg.seeds.clear();
    assert!(matches!(run_matrix(&cfg), Err(Error::Config(_))));
    let mut cfg = tiny_matrix();
    cfg.train_scenarios = vec![Case { p_img: 0.2, p_txt: 0.2 }];
    assert!(matches!(run_matrix(&cfg), Err(Error::Scenario(_))));
    let mut cfg = tiny_matrix();
    cfg.methods = vec![Method::Msp, Method::Msp];
    assert!(run_matrix(&cfg).is_err());
}

#[test]
fn failing_cell_is_named() {
    let mut cfg = tiny_matrix();
    cfg.methods = vec![Method::Map];
    cfg.tune.adam.lr = 1e300;
    cfg.tune.epochs = 3;
    match run_matrix(&cfg) {
        Err(e @ Error::Cell { .. }) => {
            assert!(e.to_string().contains("map train=100/30 seed=7"), "{e}");
            assert_eq!(e.exit_code(), 4);
        }
        other => panic!("expected a cell error, got {other:?}"),
    }
}

#[test]
fn report_rejects_duplicates_and_bad_values() {
    let row = MetricRow {
        method: Method::Msp,
        train: Case { p_img: 1.0, p_txt: 0.3 },
        eval: Case { p_img: 1.0, p_txt: 0.3 },
        seed: 1,
        metric: "accuracy".into(),
        value: 0.5,
        flagged: false,
    };
    assert!(MetricsReport::from_rows(vec![row.clone(), row.clone()]).is_err());
    assert!(MetricsReport::from_rows(vec![MetricRow { value: 1.5, ..row.clone() }]).is_err());
    let two = MetricsReport::from_rows(vec![row.clone(), MetricRow { seed: 2, value: 0.7, ..row }]).unwrap();
    let agg = &two.aggregates[0];
    assert_eq!(agg.n, 2);
    assert!((agg.mean - 0.6).abs() < 1e-15);
    assert!((agg.std - (0.02f64).sqrt()).abs() < 1e-15);
    assert!("pdf".parse::<ReportFormat>().is_err());
    assert_eq!("none".parse::<Method>().unwrap(), Method::Finetune);
}
