//! End-to-end checks of the file formats and the command dispatcher.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sustain_cli::io::{self, FileFormat, ModelMeta};
use sustain_cli::{dispatch, CliError};
use sustain_core::{IntegerFactorModel, SparseTensor};

fn write(path: &Path, content: &str) {
    fs::write(path, content).unwrap();
}

#[test]
fn tns_basic_parse() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tns");
    write(&path, "1 1 2\n2 2 5\n");
    let x = io::load_tensor(&path).unwrap();
    assert_eq!(x.dims(), &[2, 2]);
    assert_eq!(x.nnz(), 2);
    let entries: Vec<_> = x.iter().collect();
    assert_eq!(entries[0], (&[0usize, 0][..], 2.0));
    assert_eq!(entries[1], (&[1usize, 1][..], 5.0));
}

#[test]
fn tns_duplicates_sum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tns");
    write(&path, "1 1 1\n1 1 2\n");
    let x = io::load_tensor(&path).unwrap();
    assert_eq!(x.nnz(), 1);
    assert_eq!(x.values()[0], 3.0);
}

#[test]
fn tns_dims_header_and_comments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tns");
    write(&path, "# a comment\n# dims: 4 5 6\n1 2 3 7.5\n");
    let x = io::load_tensor(&path).unwrap();
    assert_eq!(x.dims(), &[4, 5, 6]);
    assert_eq!(x.nnz(), 1);
}

#[test]
fn tns_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tns");

    write(&path, "1 1 2\n2 oops 5\n");
    let err = io::load_tensor(&path).unwrap_err();
    assert!(matches!(err, io::IoError::Parse { line: 2, .. }), "{err}");

    write(&path, "0 1 2\n");
    let err = io::load_tensor(&path).unwrap_err();
    assert!(matches!(err, io::IoError::Parse { line: 1, .. }), "{err}");

    write(&path, "1 1 inf\n");
    assert!(io::load_tensor(&path).is_err());

    write(&path, "1 1 2\n1 1 1 3\n");
    let err = io::load_tensor(&path).unwrap_err();
    assert!(matches!(err, io::IoError::Parse { line: 2, .. }), "{err}");

    write(&path, "# dims: 2 2\n3 1 4\n");
    let err = io::load_tensor(&path).unwrap_err();
    assert!(matches!(err, io::IoError::Parse { line: 2, .. }), "{err}");
}

#[test]
fn tns_round_trip_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.tns");
    let entries = (0..30)
        .map(|_| {
            (
                vec![rng.random_range(0..6), rng.random_range(0..7)],
                // Non-integral values exercise the shortest-round-trip float
                // formatting.
                rng.random_range(0.0..50.0_f64),
            )
        })
        .collect();
    let x = SparseTensor::new(vec![6, 7], entries).unwrap();
    io::save_tensor(&path, &x).unwrap();
    let back = io::load_tensor(&path).unwrap();
    assert_eq!(x, back);
}

fn random_model(rng: &mut ChaCha8Rng, dims: &[usize], rank: usize, tau: u32) -> IntegerFactorModel {
    loop {
        let factors: Vec<Array2<f64>> = dims
            .iter()
            .map(|&rows| {
                Array2::from_shape_fn((rows, rank), |_| rng.random_range(0..=tau) as f64)
            })
            .collect();
        let lambda: Vec<i64> = (0..rank).map(|_| rng.random_range(1..=9)).collect();
        if let Ok(model) = IntegerFactorModel::new(factors, lambda, tau) {
            return model;
        }
    }
}

#[test]
fn model_round_trip_text_and_binary() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (i, format) in [FileFormat::Text, FileFormat::Binary].into_iter().enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let model = random_model(&mut rng, &[7, 5, 4], 3, 5);
        let meta = ModelMeta {
            format_version: io::FORMAT_VERSION,
            dims: vec![7, 5, 4],
            rank: 3,
            tau: 5,
            seed: 42 + i as u64,
            fit: 0.87651234,
        };
        io::save_model(dir.path(), &model, &meta, format).unwrap();
        let (back, back_meta) = io::load_model(dir.path()).unwrap();
        assert_eq!(model.factors, back.factors);
        assert_eq!(model.lambda, back.lambda);
        assert_eq!(model.tau, back.tau);
        assert_eq!(meta, back_meta);
    }
}

#[test]
fn saved_fit_matches_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("x.tns");
    let out = dir.path().join("run");
    let gen = dispatch([
        "sustain", "generate", "--dims", "25x18", "--rank", "3", "--density", "0.3",
        "--noise", "0.5", "--seed", "4", "--out", tns.to_str().unwrap(),
    ]);
    assert_eq!(gen, 0);
    let code = dispatch([
        "sustain", "factor-m", "--input", tns.to_str().unwrap(), "--rank", "3",
        "--seed", "9", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);

    let x = io::load_tensor(&tns).unwrap();
    let (model, meta) = io::load_model(&out).unwrap();
    let recomputed = model.fit(&x).unwrap();
    assert!((meta.fit - recomputed).abs() <= 1e-10);
    assert_eq!(meta.tau, model.tau);
}

#[test]
fn factor_runs_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("x.tns");
    assert_eq!(
        dispatch([
            "sustain", "generate", "--dims", "20x15", "--rank", "2", "--density", "0.4",
            "--noise", "1.0", "--seed", "3", "--out", tns.to_str().unwrap(),
        ]),
        0
    );
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        assert_eq!(
            dispatch([
                "sustain", "factor-m", "--input", tns.to_str().unwrap(), "--rank", "2",
                "--init", "round", "--seed", "17", "--out", out.to_str().unwrap(),
            ]),
            0
        );
    }
    for file in ["factor_1.txt", "factor_2.txt", "lambda.txt", "meta.txt"] {
        let a = fs::read(out_a.join(file)).unwrap();
        let b = fs::read(out_b.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn binary_format_flag_round_trips_through_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("x.tns");
    assert_eq!(
        dispatch([
            "sustain", "generate", "--dims", "15x10", "--rank", "2", "--density", "0.4",
            "--noise", "0.5", "--seed", "2", "--out", tns.to_str().unwrap(),
        ]),
        0
    );
    let text_out = dir.path().join("text");
    let bin_out = dir.path().join("bin");
    for (format, out) in [("text", &text_out), ("binary", &bin_out)] {
        assert_eq!(
            dispatch([
                "sustain", "factor-m", "--input", tns.to_str().unwrap(), "--rank", "2",
                "--seed", "11", "--format", format, "--out", out.to_str().unwrap(),
            ]),
            0
        );
    }
    assert!(bin_out.join("factor_1.bin").exists());
    let (text_model, _) = io::load_model(&text_out).unwrap();
    let (bin_model, _) = io::load_model(&bin_out).unwrap();
    assert_eq!(text_model.factors, bin_model.factors);
    assert_eq!(text_model.lambda, bin_model.lambda);
}

#[test]
fn factor_t_runs_on_third_order_input() {
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("x.tns");
    assert_eq!(
        dispatch([
            "sustain", "generate", "--dims", "12x9x7", "--rank", "2", "--density", "0.2",
            "--noise", "0.5", "--seed", "21", "--out", tns.to_str().unwrap(),
        ]),
        0
    );
    let out = dir.path().join("run");
    assert_eq!(
        dispatch([
            "sustain", "factor-t", "--input", tns.to_str().unwrap(), "--rank", "2",
            "--init", "sampling", "--seed", "3", "--out", out.to_str().unwrap(),
        ]),
        0
    );
    let (model, _) = io::load_model(&out).unwrap();
    assert_eq!(model.order(), 3);
    assert!(out.join("factor_3.txt").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn trace_csv_has_fixed_columns_and_monotone_objective() {
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("x.tns");
    assert_eq!(
        dispatch([
            "sustain", "generate", "--dims", "22x16", "--rank", "3", "--density", "0.4",
            "--noise", "0.5", "--seed", "6", "--out", tns.to_str().unwrap(),
        ]),
        0
    );
    let out = dir.path().join("run");
    assert_eq!(
        dispatch([
            "sustain", "factor-m", "--input", tns.to_str().unwrap(), "--rank", "3",
            "--seed", "2", "--out", out.to_str().unwrap(),
        ]),
        0
    );
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep,objective,fit,seconds,zero_lock_repairs"
    );
    let objectives: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(objectives.len() >= 2);
    for pair in objectives.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9 * objectives[0].max(1.0));
    }
}

#[test]
fn stability_command_reports_expected_pair_count() {
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("x.tns");
    assert_eq!(
        dispatch([
            "sustain", "generate", "--dims", "24x15", "--rank", "3", "--density", "0.4",
            "--noise", "0.5", "--seed", "8", "--out", tns.to_str().unwrap(),
        ]),
        0
    );
    let out = dir.path().join("stab");
    assert_eq!(
        dispatch([
            "sustain", "stability", "--input", tns.to_str().unwrap(), "--ranks", "2:3",
            "--reps", "5", "--seed", "1", "--out", out.to_str().unwrap(),
        ]),
        0
    );
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("stability.json")).unwrap()).unwrap();
    let ranks = json["ranks"].as_array().unwrap();
    assert_eq!(ranks.len(), 2);
    for rank in ranks {
        let pairs = rank["pairs"].as_array().unwrap().len() as u64;
        let excluded = rank["excluded_pairs"].as_u64().unwrap();
        assert_eq!(pairs + excluded, 10, "5 reps give 10 pairs");
    }
    assert!(out.join("best_model/meta.txt").exists());
}

#[test]
fn baseline_ails_beats_round_on_planted_data() {
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("x.tns");
    assert_eq!(
        dispatch([
            "sustain", "generate", "--dims", "30x12", "--rank", "2", "--density", "0.5",
            "--noise", "0.5", "--seed", "12", "--out", tns.to_str().unwrap(),
        ]),
        0
    );
    let round_out = dir.path().join("round");
    let ails_out = dir.path().join("ails");
    for (method, out) in [("round", &round_out), ("ails", &ails_out)] {
        assert_eq!(
            dispatch([
                "sustain", "baseline", "--method", method, "--input", tns.to_str().unwrap(),
                "--rank", "2", "--seed", "5", "--out", out.to_str().unwrap(),
            ]),
            0,
            "baseline {method} failed"
        );
    }
    let x = io::load_tensor(&tns).unwrap();
    let (round_model, _) = io::load_model(&round_out).unwrap();
    let (ails_model, _) = io::load_model(&ails_out).unwrap();
    assert!(ails_model.fit(&x).unwrap() >= round_model.fit(&x).unwrap());
}

#[test]
fn report_renders_score_tables() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(&mut ChaCha8Rng::seed_from_u64(31), &[6, 4], 2, 5);
    let meta = ModelMeta {
        format_version: io::FORMAT_VERSION,
        dims: vec![6, 4],
        rank: 2,
        tau: 5,
        seed: 0,
        fit: 0.5,
    };
    let model_dir = dir.path().join("model");
    io::save_model(&model_dir, &model, &meta, FileFormat::Text).unwrap();
    let names = dir.path().join("names.txt");
    fs::write(&names, "alpha\nbeta\ngamma\ndelta\n").unwrap();
    assert_eq!(
        dispatch([
            "sustain", "report", "--model", model_dir.to_str().unwrap(),
            "--mode", "2", "--names", names.to_str().unwrap(), "--top", "3",
        ]),
        0
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    // Unknown flag: usage error.
    assert_eq!(dispatch(["sustain", "factor-m", "--bogus"]), 1);
    // Missing input file: usage error.
    assert_eq!(
        dispatch([
            "sustain", "factor-m", "--input", "/nonexistent/x.tns", "--rank", "2",
            "--out", "/tmp/nowhere",
        ]),
        1
    );
    // Help exits cleanly.
    assert_eq!(dispatch(["sustain", "--help"]), 0);

    // Numerical failure: factoring an empty tensor.
    let dir = tempfile::tempdir().unwrap();
    let tns = dir.path().join("empty.tns");
    fs::write(&tns, "# dims: 4 4\n").unwrap();
    let out = dir.path().join("run");
    assert_eq!(
        dispatch([
            "sustain", "factor-m", "--input", tns.to_str().unwrap(), "--rank", "2",
            "--out", out.to_str().unwrap(),
        ]),
        2
    );
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let usage = CliError::Usage("x".into());
    assert_eq!(usage.exit_code(), 1);
    let numerical = CliError::Numerical(sustain_core::Error::InvalidInput("x".into()));
    assert_eq!(numerical.exit_code(), 2);
}
