use ctxfuse_core::context::ContextKind;
use ctxfuse_core::fusion::FusionKind;
use ctxfuse_core::pipeline::{
    ablation_variants, generate_task, reports_to_csv, run_experiment, run_single, AblationAxis, Alignment,
    ExperimentConfig, ModelConfig, SyntheticTaskConfig, TrainConfig,
};
use ctxfuse_core::Error;

fn tiny_task() -> SyntheticTaskConfig {
    SyntheticTaskConfig {
        train_size: 16,
        val_size: 6,
        test_size: 6,
        ..SyntheticTaskConfig::default()
    }
}

fn short_training() -> TrainConfig {
    TrainConfig {
        runs: 3,
        max_epochs: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn dotted_config_round_trip() {
    let text = r#"
        model.strategy = "global"
        model.fusion = "concat"
        model.alignment = "repeat"
        train.optimizer = "adam"
        train.lr = 0.001
        task.class_separation = 2.5
    "#;
    let cfg = ExperimentConfig::from_toml_str(text).unwrap();
    assert_eq!(cfg.model.strategy, ContextKind::Global);
    assert_eq!(cfg.model.fusion, FusionKind::Concat);
    assert_eq!(cfg.model.alignment, Alignment::Repeat);
    assert_eq!(cfg.task.class_separation, 2.5);
    let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn unknown_keys_are_rejected() {
    let err = ExperimentConfig::from_toml_str("model.heads = 4\n").unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn experiment_is_deterministic_and_ordered() {
    let mc = ModelConfig::default();
    let a = run_experiment("a", &mc, &short_training(), &tiny_task()).unwrap();
    let b = run_experiment("a", &mc, &short_training(), &tiny_task()).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    assert_eq!(a.seeds, vec![0, 1, 2]);
    let csv = reports_to_csv(&[a]).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn run_matches_its_experiment_entry() {
    let mc = ModelConfig::default();
    let tc = short_training();
    let task = tiny_task();
    let report = run_experiment("x", &mc, &tc, &task).unwrap();
    let data = generate_task(&task).unwrap();
    let single = run_single(&mc, &tc, &data, 1).unwrap();
    assert_eq!(report.runs[1], single);
}

#[test]
fn every_variant_trains() {
    let base = ModelConfig::default();
    for axis in AblationAxis::VARIANTS.into_iter().chain([AblationAxis::Layers]) {
        for (name, mc) in ablation_variants(&base, axis) {
            let tc = TrainConfig {
                runs: 1,
                max_epochs: 1,
                ..TrainConfig::default()
            };
            let report = run_experiment(&name, &mc, &tc, &tiny_task()).unwrap();
            assert_eq!(report.runs.len(), 1, "{name}");
        }
    }
}

#[test]
fn identity_alignment_needs_equal_lengths() {
    let mc = ModelConfig {
        alignment: Alignment::Identity,
        ..ModelConfig::default()
    };
    let task = SyntheticTaskConfig {
        t: 9,
        ..tiny_task()
    };
    assert!(matches!(run_experiment("x", &mc, &short_training(), &task), Err(Error::Config(_))));
}
