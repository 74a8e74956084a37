//! End-to-end checks of the command-line surface: artifact layout, exit
//! codes, and bit-reproducibility of seeded commands in 64-bit mode.

use std::path::Path;
use std::process::{Command, Output};

fn treegan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treegan"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Tiny 8-point configuration so the whole suite stays fast.
fn tiny_train(out: &str, seed: &str, steps: &str) -> Output {
    treegan(&[
        "train",
        "--data",
        "synth:sphere,cube",
        "--points",
        "8",
        "--degrees",
        "1,2,4",
        "--steps",
        steps,
        "--batch",
        "2",
        "--seed",
        seed,
        "--precision",
        "f64",
        "--set",
        "clouds_per_class=4",
        "--set",
        "feature_dims=8,12,8,3",
        "--set",
        "supports=4",
        "--set",
        "critic_point_widths=3,8,12",
        "--set",
        "critic_head_widths=12,6,1",
        "--set",
        "critic_steps=2",
        "--out",
        out,
    ])
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn train_writes_expected_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_success(&tiny_train(out_a.to_str().unwrap(), "7", "2"));
    assert_success(&tiny_train(out_b.to_str().unwrap(), "7", "2"));

    for out in [&out_a, &out_b] {
        assert!(out.join("checkpoint.tgn").is_file());
        assert!(out.join("telemetry.csv").is_file());
        assert!(out.join("config.txt").is_file());
        assert!(out.join("samples").read_dir().unwrap().count() >= 1);
    }
    assert_eq!(
        std::fs::read(out_a.join("checkpoint.tgn")).unwrap(),
        std::fs::read(out_b.join("checkpoint.tgn")).unwrap(),
        "same seed must give bit-identical checkpoints in f64"
    );
    let telem = std::fs::read_to_string(out_a.join("telemetry.csv")).unwrap();
    assert!(telem.starts_with("step,l_gen,l_disc,penalty,wall_time_s,fpd"));
    assert_eq!(telem.lines().count(), 3, "{telem}");
}

#[test]
fn train_zero_steps_emits_initialization_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("init");
    assert_success(&tiny_train(out.to_str().unwrap(), "1", "0"));
    assert!(out.join("checkpoint.tgn").is_file());
    let telem = std::fs::read_to_string(out.join("telemetry.csv")).unwrap();
    assert_eq!(telem.lines().count(), 1, "header only");
}

#[test]
fn invalid_degree_schedule_fails_before_compute_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let result = treegan(&[
        "train",
        "--data",
        "synth:sphere",
        "--points",
        "8",
        "--degrees",
        "1,2,2",
        "--steps",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
    assert!(!out.join("checkpoint.tgn").exists());
    let err = String::from_utf8_lossy(&result.stderr);
    assert!(err.contains("4 points") && err.contains("points = 8"), "{err}");
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    assert_success(&tiny_train(out_a.to_str().unwrap(), "9", "1"));

    // Re-run purely from the echoed config file.
    let out_b = dir.path().join("b");
    let result = treegan(&[
        "train",
        "--config",
        out_a.join("config.txt").to_str().unwrap(),
        "--out",
        out_b.to_str().unwrap(),
    ]);
    assert_success(&result);
    assert_eq!(
        std::fs::read(out_a.join("checkpoint.tgn")).unwrap(),
        std::fs::read(out_b.join("checkpoint.tgn")).unwrap()
    );
}

fn train_once(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("model");
    assert_success(&tiny_train(out.to_str().unwrap(), "3", "2"));
    out.join("checkpoint.tgn")
}

#[test]
fn generate_is_seed_reproducible_and_supports_pcb() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_once(dir.path());

    let out_a = dir.path().join("gen_a");
    let out_b = dir.path().join("gen_b");
    for out in [&out_a, &out_b] {
        assert_success(&treegan(&[
            "generate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--count",
            "2",
            "--seed",
            "5",
            "--out",
            out.to_str().unwrap(),
        ]));
        assert!(out.join("gen_0000.ply").is_file());
        assert!(out.join("gen_0001.ply").is_file());
    }
    assert_eq!(
        std::fs::read(out_a.join("gen_0000.ply")).unwrap(),
        std::fs::read(out_b.join("gen_0000.ply")).unwrap()
    );

    let out_pcb = dir.path().join("gen_pcb");
    assert_success(&treegan(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--count",
        "16",
        "--seed",
        "5",
        "--format",
        "pcb",
        "--out",
        out_pcb.to_str().unwrap(),
    ]));
    let clouds: Vec<treegan::data::PointCloud<f64>> =
        treegan::data::read_pcb(&out_pcb.join("generated.pcb")).unwrap();
    assert_eq!(clouds.len(), 16);
    assert_eq!(clouds[0].len(), 8);
}

#[test]
fn evaluate_self_comparison_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    // Build a small PCB set to compare against itself.
    let set: Vec<treegan::data::PointCloud<f64>> = (0..5)
        .map(|i| {
            treegan::data::sample_shape(treegan::data::ShapeKind::Sphere, 12, i, 0.05).unwrap()
        })
        .collect();
    let pcb = dir.path().join("set.pcb");
    treegan::data::write_pcb(&pcb, &set).unwrap();

    let out = dir.path().join("eval");
    let result = treegan(&[
        "evaluate",
        "--reference",
        pcb.to_str().unwrap(),
        "--generated",
        pcb.to_str().unwrap(),
        "--metrics",
        "jsd,mmd-cd,cov-cd",
        "--precision",
        "f64",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&result);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let get = |name: &str| -> f64 {
        report
            .lines()
            .find(|l| l.starts_with(&format!("{name},")))
            .unwrap_or_else(|| panic!("{name} missing in {report}"))
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!(get("jsd").abs() < 1e-9);
    assert_eq!(get("mmd-cd"), 0.0);
    assert_eq!(get("cov-cd"), 1.0);
}

#[test]
fn fpd_pipeline_with_cached_stats_reads_no_clouds() {
    let dir = tempfile::tempdir().unwrap();

    // Train a small extractor.
    let fx = dir.path().join("fx.tgn");
    assert_success(&treegan(&[
        "fpd-stats",
        "--train-extractor",
        "synth:sphere,cube",
        "--extractor-out",
        fx.to_str().unwrap(),
        "--precision",
        "f64",
        "--seed",
        "2",
        "--set",
        "clouds_per_class=20",
        "--set",
        "points=24",
        "--set",
        "extractor_epochs=20",
        "--set",
        "extractor_point_widths=3,12,16",
        "--set",
        "extractor_dense_widths=16,12",
    ]));

    // Cache stats for one synthetic set.
    let stats = dir.path().join("ref.fpds");
    assert_success(&treegan(&[
        "fpd-stats",
        "--clouds",
        "synth:sphere",
        "--extractor",
        fx.to_str().unwrap(),
        "--precision",
        "f64",
        "--seed",
        "3",
        "--set",
        "clouds_per_class=10",
        "--set",
        "points=24",
        "--out",
        stats.to_str().unwrap(),
    ]));

    // FPD of a set against itself from cached stats only: the reference and
    // generated specs point at a directory that does not exist, so any
    // attempt to read clouds would fail loudly.
    let out = dir.path().join("eval");
    let result = treegan(&[
        "evaluate",
        "--reference",
        "/nonexistent/ref",
        "--generated",
        "/nonexistent/gen",
        "--metrics",
        "fpd",
        "--fpd-stats-ref",
        stats.to_str().unwrap(),
        "--fpd-stats-gen",
        stats.to_str().unwrap(),
        "--precision",
        "f64",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&result);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let fpd_value: f64 = report
        .lines()
        .find(|l| l.starts_with("fpd,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!(fpd_value.abs() < 1e-6, "fpd {fpd_value}");
}

#[test]
fn interpolate_endpoints_match_direct_generation() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_once(dir.path());
    let out = dir.path().join("interp");
    assert_success(&treegan(&[
        "interpolate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--seed-a",
        "11",
        "--seed-b",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]));
    let ply_count = out
        .read_dir()
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "ply"))
        .count();
    assert_eq!(ply_count, 6, "six default alphas");

    // Endpoint files α = 0 and α = 1 equal clouds generated from the seeds.
    let gen_a = dir.path().join("from_a");
    assert_success(&treegan(&[
        "generate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--count",
        "1",
        "--seed",
        "11",
        "--out",
        gen_a.to_str().unwrap(),
    ]));
    let endpoint = std::fs::read(out.join("alpha_00_0.ply")).unwrap();
    let direct = std::fs::read(gen_a.join("gen_0000.ply")).unwrap();
    assert_eq!(endpoint, direct);
}

#[test]
fn parts_selection_splits_and_colors_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = train_once(dir.path());
    let out = dir.path().join("parts");
    assert_success(&treegan(&[
        "parts",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--select",
        "2:0,1",
        "--seeds",
        "4,5",
        "--out",
        out.to_str().unwrap(),
    ]));
    for seed in [4, 5] {
        let cloud: treegan::data::PointCloud<f64> =
            treegan::data::read_ply(&out.join(format!("part_seed{seed}.ply"))).unwrap();
        // Two selections at the first informative layer split the 8 leaves 4 + 4.
        assert_eq!(cloud.len(), 8);
        let labels = cloud.labels.unwrap();
        assert_eq!(labels.iter().filter(|&&l| l == 0).count(), 4);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 4);
    }

    // Selection out of range exits with a usage error.
    let bad = treegan(&[
        "parts",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--select",
        "9:0",
        "--seeds",
        "4",
        "--out",
        dir.path().join("bad").to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn missing_extractor_for_fpd_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let set: Vec<treegan::data::PointCloud<f64>> = (0..3)
        .map(|i| {
            treegan::data::sample_shape(treegan::data::ShapeKind::Cube, 12, i, 0.05).unwrap()
        })
        .collect();
    let pcb = dir.path().join("set.pcb");
    treegan::data::write_pcb(&pcb, &set).unwrap();
    let result = treegan(&[
        "evaluate",
        "--reference",
        pcb.to_str().unwrap(),
        "--generated",
        pcb.to_str().unwrap(),
        "--metrics",
        "fpd",
        "--precision",
        "f64",
        "--out",
        dir.path().join("eval").to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}
