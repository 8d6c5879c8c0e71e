use priorshift::experiment::{
    compare, ensemble_summary_csv, mixed_selection, run_singles, single_summary_csv, thread_pool,
    DataSource, ExperimentConfig, Prepared, SynthConfig,
};
use priorshift::model::ModelConfig;
use priorshift::shift::Method;
use priorshift::train::TrainConfig;

fn tiny(n_seeds: usize, members: usize) -> ExperimentConfig {
    ExperimentConfig {
        data: DataSource::Synthetic(SynthConfig {
            n_train: 60,
            n_dev: 30,
            n_test: 40,
            ..SynthConfig::default()
        }),
        model: ModelConfig {
            lstm_layers: 1,
            lstm_hidden_per_direction: 3,
            context_hidden: 3,
            mlp_hidden: 8,
            char_cnn_filter_widths: vec![1, 3],
            ..ModelConfig::default()
        },
        train: TrainConfig {
            max_epochs: 2,
            patience: 0,
            learning_rate: 0.003,
            seed: 11,
            ..TrainConfig::default()
        },
        n_seeds,
        ensemble_size: members,
        ..ExperimentConfig::default()
    }
}

#[test]
fn compare_shapes() {
    let config = tiny(2, 3);
    let data = Prepared::load(&config.data).unwrap();
    let cmp = compare(&config, &data, &thread_pool().unwrap()).unwrap();
    assert_eq!(cmp.singles.len(), 5);
    for (m, reports) in cmp.methods.iter().zip(&cmp.singles) {
        assert_eq!(reports.len(), 2);
        assert!(reports.iter().all(|r| r.method == m.label()));
        assert_eq!(
            reports.iter().map(|r| r.seed).collect::<Vec<_>>(),
            vec![11, 12]
        );
    }
    assert_eq!(cmp.ensembles.len(), 5);
    assert!(cmp.ensembles.iter().all(|e| e.members == 3));
    let mixed = cmp.mixed.as_ref().unwrap();
    assert_eq!(mixed.members, 3);
    assert_eq!(single_summary_csv(&cmp).lines().count(), 6);
    assert_eq!(ensemble_summary_csv(&cmp).lines().count(), 7);
}

#[test]
fn singles_do_not_depend_on_other_methods() {
    let all = tiny(1, 1);
    let data = Prepared::load(&all.data).unwrap();
    let pool = thread_pool().unwrap();
    let (reports, _) = run_singles(&all, &data, &pool).unwrap();
    for (i, m) in Method::ALL.iter().enumerate() {
        let alone = ExperimentConfig {
            methods: vec![*m],
            ..all.clone()
        };
        let (solo, _) = run_singles(&alone, &data, &pool).unwrap();
        assert_eq!(
            solo[0][0].csv_row(),
            reports[i][0].csv_row(),
            "{m} differs when run alone"
        );
    }
}

#[test]
fn no_mixed_row_without_all_methods() {
    let config = ExperimentConfig {
        methods: vec![Method::None, Method::CostSensitive],
        ..tiny(1, 2)
    };
    let data = Prepared::load(&config.data).unwrap();
    let cmp = compare(&config, &data, &thread_pool().unwrap()).unwrap();
    assert!(cmp.mixed.is_none());
    assert_eq!(cmp.ensembles.len(), 2);
}

#[test]
fn mixed_selection_round_robin_by_validation_f1() {
    let f1 = vec![vec![0.2, 0.6], vec![0.5, 0.1], vec![0.3, 0.9]];
    assert_eq!(
        mixed_selection(&f1, 5),
        vec![(0, 1), (1, 0), (2, 1), (0, 0), (1, 1)]
    );
}

#[test]
fn shipped_benchmark_config_matches_preset() {
    let path =
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/benchmark.json");
    let config = ExperimentConfig::from_json_file(&path).unwrap();
    let expected = ExperimentConfig {
        output_dir: "runs/benchmark".into(),
        ..ExperimentConfig::benchmark()
    };
    assert_eq!(config, expected);
}
