use geomesh_core::data::{
    generate_synthetic, ingest_records, load_probs_for, random_split, save_probs, save_records, DataError,
    RecordFormat, SynthConfig,
};
use geomesh_core::features::{assemble_m2_input, encode_time_utc, filter_top_k_renormalize, DEFAULT_TOP_K};
use geomesh_core::mesh::{load_mesh, save_mesh, LabelMode, MeshParams};
use geomesh_core::metrics::{best_possible, evaluate_errors, DEFAULT_THRESHOLDS_KM};
use geomesh_core::models::{
    decode_weights, encode_weights, train_m2, DenseNetSpec, M2Dataset, SavedModel, TrainConfig,
};
use geomesh_core::sphere::great_circle_distance;
use ndarray::Array2;

fn small_config(seed: u64) -> SynthConfig {
    SynthConfig {
        n_users: 400,
        mesh: MeshParams {
            init_rows: 6,
            init_cols: 8,
            refinement_limit: 400,
            minimum_examples: 40,
            max_depth: 6,
        },
        ..SynthConfig::with_seed(seed)
    }
}

#[test]
fn files_round_trip_through_disk() {
    let corpus = generate_synthetic(&small_config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();

    let records = dir.path().join("records.csv");
    save_records(&records, &corpus.records, RecordFormat::Delimited).unwrap();
    let back = ingest_records(&records, RecordFormat::Delimited).unwrap();
    assert!(back.rejected.is_empty());
    let again = dir.path().join("again.csv");
    save_records(&again, &back.records, RecordFormat::Delimited).unwrap();
    assert_eq!(std::fs::read(&records).unwrap(), std::fs::read(&again).unwrap());

    let mesh_path = dir.path().join("mesh.gmm");
    save_mesh(&corpus.mesh, &mesh_path).unwrap();
    let mesh = load_mesh(&mesh_path).unwrap();
    assert_eq!(mesh.num_classes(), corpus.mesh.num_classes());
    for r in back.records.iter().take(500) {
        assert_eq!(mesh.assign(r.location), corpus.mesh.assign(r.location));
    }

    let probs = dir.path().join("probs.gmpb");
    save_probs(&probs, &corpus.probs).unwrap();
    assert_eq!(load_probs_for(&probs, mesh.num_classes()).unwrap(), corpus.probs);
    assert!(matches!(
        load_probs_for(&probs, mesh.num_classes() + 1),
        Err(DataError::Dimension { .. })
    ));
}

#[test]
fn imagery_labels_bound_the_achievable_error() {
    let corpus = generate_synthetic(&small_config(2)).unwrap();
    let points: Vec<_> = corpus.records.iter().map(|r| r.location).collect();
    let labels = corpus.mesh.compute_cell_labels(&points, LabelMode::ImageryCentroid).unwrap();
    let best = best_possible(&corpus.mesh, &labels, &points, &DEFAULT_THRESHOLDS_KM).unwrap();

    // Any class assignment does no better than each point's own cell label.
    let errors: Vec<f64> = points
        .iter()
        .filter_map(|p| corpus.mesh.assign(*p).map(|_| great_circle_distance(labels.label(0).unwrap(), *p)))
        .collect();
    let constant = evaluate_errors(&errors, &DEFAULT_THRESHOLDS_KM).unwrap();
    for (b, c) in best.table.accuracy_pct.iter().zip(&constant.accuracy_pct) {
        assert!(b >= c);
    }
    assert_eq!(best.table.n + best.excluded, best.total);
}

#[test]
fn trained_weights_survive_serialisation() {
    let corpus = generate_synthetic(&small_config(3)).unwrap();
    let n = corpus.mesh.num_classes();
    let rows: Vec<usize> = (0..corpus.records.len()).filter(|&i| corpus.truth[i].is_some()).collect();
    let build = |idx: &[usize]| {
        let mut inputs = Array2::zeros((idx.len(), n + 4));
        for (r, &i) in idx.iter().enumerate() {
            let p: Vec<f64> = corpus.probs.row(i).iter().map(|v| f64::from(*v)).collect();
            let f = filter_top_k_renormalize(&p, DEFAULT_TOP_K).unwrap();
            let x = assemble_m2_input(&f, &encode_time_utc(&corpus.records[i].posted_time), n).unwrap();
            inputs.row_mut(r).assign(&ndarray::ArrayView1::from(&x));
        }
        M2Dataset {
            inputs,
            targets: idx.iter().map(|&i| corpus.truth[i].unwrap()).collect(),
        }
    };
    let split = random_split(&corpus.records, &[0.8, 0.2], 4, false).unwrap();
    let keep = |part: &[usize]| part.iter().copied().filter(|i| rows.contains(i)).collect::<Vec<_>>();
    let (train, valid) = (build(&keep(&split.parts[0])), build(&keep(&split.parts[1])));
    let cfg = TrainConfig {
        seed: 8,
        max_epochs: 3,
        ..TrainConfig::default()
    };
    let (model, history) = train_m2(&train, &valid, DenseNetSpec::with_hidden(n, 12), &cfg).unwrap();
    assert!(!history.epochs.is_empty());

    let bytes = encode_weights(&SavedModel::Dense(model.clone()));
    let SavedModel::Dense(back) = decode_weights(&bytes).unwrap() else {
        panic!("kind changed");
    };
    let a = model.predict(valid.inputs.view()).unwrap();
    let b = back.predict(valid.inputs.view()).unwrap();
    assert_eq!(a, b);
}
