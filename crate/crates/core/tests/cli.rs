//! Drives the `idhnet` binary through every subcommand and checks exit codes.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

use idhnet::atlas::TractDensitySet;
use idhnet::volumes::Volume;

fn idhnet(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_idhnet")).args(args).output().unwrap();
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    (out.status.code().unwrap_or(-1), text)
}

fn ok(args: &[&str]) -> String {
    let (code, text) = idhnet(args);
    assert_eq!(code, 0, "{args:?} failed:\n{text}");
    text
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL_COHORT: &str = r#"{
    "mutant": {"count": 10, "affected_edges": 2, "amplitude": 0.3},
    "wild_type": {"count": 10, "affected_edges": 6, "amplitude": 0.3},
    "grid": [16, 16, 16],
    "seed": 4
}"#;

const FAST_PIPELINE: &str = r#"{
    "seed": 4,
    "autoencoder": {"epochs": 5},
    "gnn": {"train": {"max_epochs": 5}},
    "explain": {"iterations": 10}
}"#;

#[test]
fn volume_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("synth.json"), SMALL_COHORT).unwrap();
    std::fs::write(d.join("pipeline.json"), FAST_PIPELINE).unwrap();
    let (synth, cfg) = (d.join("synth"), d.join("pipeline.json"));

    ok(&["synth", "generate", "--level", "volume", "--config", p(&d.join("synth.json")), "--out", p(&synth)]);
    let atlas = d.join("edges.json");
    let text = ok(&[
        "atlas", "build", "--densities", p(&synth.join("atlas/densities")), "--quorum", "9", "--out", p(&atlas),
    ]);
    assert!(text.contains("edges:"), "{text}");

    let features = d.join("features");
    ok(&[
        "features", "extract", "--cohort", p(&synth.join("cohort")), "--node-atlas", p(&synth.join("atlas/labels.f32")),
        "--edge-atlas", p(&atlas), "--out", p(&features), "--config", p(&cfg),
    ]);
    assert!(features.join("split.json").exists());
    assert!(features.join("effective_config.json").exists());

    let (node, edge) = (d.join("node_ae.bin"), d.join("edge_ae.bin"));
    for (kind, out) in [("node", &node), ("edge", &edge)] {
        ok(&["ae", "train", "--features", p(&features), "--kind", kind, "--out", p(out), "--config", p(&cfg)]);
    }
    let latents = d.join("latents.bin");
    ok(&["ae", "encode", "--features", p(&features), "--node-model", p(&node), "--edge-model", p(&edge), "--out", p(&latents)]);
    let dataset = d.join("graphs/dataset.json");
    ok(&["graph", "build", "--latents", p(&latents), "--features", p(&features), "--out", p(&dataset)]);

    let ckpt = d.join("model/gnn.bin");
    ok(&["gnn", "train", "--dataset", p(&dataset), "--out", p(&ckpt), "--config", p(&cfg)]);
    let metrics = d.join("model/metrics.json");
    let table = ok(&[
        "gnn", "eval", "--checkpoint", p(&ckpt), "--dataset", p(&dataset), "--out", p(&metrics), "--config", p(&cfg),
    ]);
    assert!(table.contains("Sensitivity") && table.contains("Test"), "{table}");
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(&metrics).unwrap()).unwrap();
    assert!(json["test"]["tp"].is_u64());

    let explained = d.join("explain");
    ok(&[
        "explain", "run", "--checkpoint", p(&ckpt), "--dataset", p(&dataset), "--edge-atlas", p(&atlas), "--out",
        p(&explained), "--config", p(&cfg),
    ]);
    for f in ["edge_scores.csv", "density_p50.f32", "density_p90.f32", "summary.json"] {
        assert!(explained.join(f).exists(), "missing {f}");
    }

    // Evaluating under different training settings is refused.
    std::fs::write(d.join("other.json"), r#"{"seed": 4, "gnn": {"train": {"max_epochs": 6}}}"#).unwrap();
    let (code, text) = idhnet(&[
        "gnn", "eval", "--checkpoint", p(&ckpt), "--dataset", p(&dataset), "--config", p(&d.join("other.json")),
    ]);
    assert_eq!(code, 5, "{text}");

    // Latents encoded under another split leak into a model that never saw it.
    let mut split: serde_json::Value = serde_json::from_slice(&std::fs::read(features.join("split.json")).unwrap()).unwrap();
    let moved = split["test"].as_array_mut().unwrap().pop().unwrap();
    split["train"].as_array_mut().unwrap().push(moved);
    std::fs::write(features.join("split.json"), serde_json::to_vec(&split).unwrap()).unwrap();
    let (code, text) = idhnet(&[
        "ae", "encode", "--features", p(&features), "--node-model", p(&node), "--edge-model", p(&edge), "--out",
        p(&d.join("other_latents.bin")),
    ]);
    assert_eq!(code, 4, "{text}");
}

#[test]
fn graph_level_cohort_trains_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("synth.json"),
        r#"{"mutant": {"count": 20, "affected_edges": 2, "amplitude": 0.3},
            "wild_type": {"count": 20, "affected_edges": 6, "amplitude": 0.3}}"#,
    )
    .unwrap();
    let out = d.join("graphs");
    ok(&["synth", "generate", "--level", "graph", "--config", p(&d.join("synth.json")), "--out", p(&out)]);
    assert!(out.join("split.json").exists() && out.join("truth.json").exists());
    let ckpt = d.join("gnn.bin");
    ok(&["gnn", "train", "--dataset", p(&out.join("graphs.json")), "--out", p(&ckpt), "--epochs", "10"]);
    assert!(d.join("gnn.bin.log.json").exists());
    ok(&["gnn", "eval", "--checkpoint", p(&ckpt), "--dataset", p(&out.join("graphs.json"))]);
}

#[test]
fn invalid_input_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _) = idhnet(&["atlas", "build", "--densities", p(&dir.path().join("absent")), "--out", "x.json"]);
    assert_eq!(code, 2);
    std::fs::write(dir.path().join("bad.json"), r#"{"gnn": {"train": {"lr": 0.1}}}"#).unwrap();
    let (code, text) = idhnet(&[
        "gnn", "train", "--dataset", "d.json", "--out", "m.bin", "--config", p(&dir.path().join("bad.json")),
    ]);
    assert_eq!(code, 2, "{text}");
    assert!(text.contains("unknown field"), "{text}");
    assert_eq!(idhnet(&["atlas"]).0, 2);
}

#[test]
fn empty_atlas_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let dims = [3, 3, 3];
    let mut data = vec![0.0f32; 27];
    data[4] = 2.0;
    let tract = Volume::new(dims, [2.0; 3], data).unwrap();
    // The single pair appears in one subject of two, short of the quorum.
    let subjects = vec![BTreeMap::from([((0, 1), tract)]), BTreeMap::new()];
    let densities = dir.path().join("densities");
    TractDensitySet::new(dims, [2.0; 3], subjects).unwrap().save_dir(&densities).unwrap();
    let (code, text) = idhnet(&[
        "atlas", "build", "--densities", p(&densities), "--quorum", "2", "--out", p(&dir.path().join("a.json")),
    ]);
    assert_eq!(code, 3, "{text}");
}

#[test]
fn missing_split_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let (code, text) = idhnet(&[
        "ae", "train", "--features", p(dir.path()), "--kind", "node", "--out", p(&dir.path().join("m.bin")),
    ]);
    assert_eq!(code, 4, "{text}");
}
