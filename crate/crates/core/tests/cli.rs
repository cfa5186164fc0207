use std::fs;
use std::path::Path;

use sketchhash::cli::{read_codes, run};
use sketchhash::hamming::PackedCodes;

fn sh(dir: &Path, args: &[&str]) -> anyhow::Result<()> {
    let mut full = vec!["sketchhash".to_string()];
    for a in args {
        full.push(match a.strip_prefix('@') {
            Some(rest) => dir.join(rest).display().to_string(),
            None => a.to_string(),
        });
    }
    run(full)
}

const TINY: [&str; 12] = [
    "--set", "epochs_cnn=1", "--set", "epochs_rnn=1", "--set", "epochs_fused=1", "--set", "epochs_scl=1", "--set",
    "outer_iterations=2", "--set", "batch_size=8",
];

fn prepare(dir: &Path) {
    sh(dir, &["synth", "--out", "@raw.ndjson", "--categories", "3", "--per-category", "14", "--seed", "2"]).unwrap();
    sh(dir, &["ingest", "--input", "@raw.ndjson", "--out", "@corpus.bin"]).unwrap();
    let args = ["split", "--corpus", "@corpus.bin", "--out", "@split.txt", "--train", "8", "--validation", "2"];
    sh(dir, &[&args[..], &["--retrieval", "3", "--query", "1", "--seed", "1"]].concat()).unwrap();
}

fn train(dir: &Path, out: &str) {
    let base = ["train", "--corpus", "@corpus.bin", "--split", "@split.txt", "--out", out, "--seed", "7"];
    sh(dir, &[&base[..], &TINY[..]].concat()).unwrap();
}

#[test]
fn end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    prepare(dir);
    train(dir, "@run");
    for f in [
        "stage1_cnn.ckpt", "stage2_rnn.ckpt", "stage3_fused.ckpt", "stage4_scl.ckpt", "stage5_final.ckpt", "centers.bin",
        "gallery.bin", "train_log.csv", "manifest.json", "run.cfg",
    ] {
        assert!(dir.join("run").join(f).exists(), "missing {f}");
    }
    let ckpt = dir.join("run/stage5_final.ckpt").display().to_string();

    sh(dir, &["filter", "--corpus", "@corpus.bin", "--split", "@split.txt", "--out", "@entropy.csv"]).unwrap();
    let csv = fs::read_to_string(dir.join("entropy.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 8);

    sh(dir, &["index", "--checkpoint", &ckpt, "--corpus", "@corpus.bin", "--split", "@split.txt", "--out", "@g.bin"]).unwrap();
    let rebuilt = fs::read(dir.join("g.bin")).unwrap();
    let trained = fs::read(dir.join("run/gallery.bin")).unwrap();
    assert_eq!(rebuilt, trained);
    let gallery = PackedCodes::from_bytes(&rebuilt).unwrap();
    assert_eq!(gallery.len(), 9);

    sh(dir, &["encode", "--checkpoint", &ckpt, "--corpus", "@corpus.bin", "--split", "@split.txt", "--out", "@q.txt"]).unwrap();
    let (ids, labels, codes) = read_codes(&fs::read_to_string(dir.join("q.txt")).unwrap()).unwrap();
    assert_eq!((ids.len(), labels.len(), codes.len()), (3, 3, 3));

    sh(dir, &["query", "--gallery", "@g.bin", "--code", &codes[0].to_hex(), "--k", "3"]).unwrap();
    assert!(sh(dir, &["query", "--gallery", "@g.bin", "--code", "zz"]).is_err());

    let eval = ["evaluate", "--gallery", "@g.bin", "--queries", "@q.txt", "--k", "5"];
    sh(dir, &[&eval[..], &["--out", "@e1.json", "--pr-csv", "@pr.csv", "--per-query-csv", "@pq.csv"]].concat()).unwrap();
    sh(dir, &[&eval[..], &["--out", "@e2.json"]].concat()).unwrap();
    let e1 = fs::read_to_string(dir.join("e1.json")).unwrap();
    assert_eq!(e1, fs::read_to_string(dir.join("e2.json")).unwrap());
    let v: serde_json::Value = serde_json::from_str(&e1).unwrap();
    let map = v["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    assert!(v["precision_at_5"].is_number());
    assert_eq!(fs::read_to_string(dir.join("pq.csv")).unwrap().lines().count(), 1 + 3);

    sh(dir, &["report", "--gallery", "@g.bin", "--queries", "@q.txt", "--k", "5", "--latency-queries", "100", "--out", "@r1.json"]).unwrap();
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r1.json")).unwrap()).unwrap();
    assert_eq!(r["map"].as_f64().unwrap(), map);
    assert!(r["query_latency_s"].as_f64().unwrap() > 0.0);
    let absent: Vec<&str> = r["absent"].as_array().unwrap().iter().map(|a| a.as_str().unwrap()).collect();
    assert!(absent.contains(&"d1") && absent.contains(&"training"));

    let full = [
        "report", "--gallery", "@g.bin", "--queries", "@q.txt", "--k", "5", "--checkpoint", &ckpt, "--corpus", "@corpus.bin",
        "--split", "@split.txt", "--train-dir", "@run", "--out", "@r2.json",
    ];
    sh(dir, &full).unwrap();
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("r2.json")).unwrap()).unwrap();
    assert!(r["d1_d2"].is_number() && r["final_log_row"].is_object());
    assert!(r["absent"].as_array().unwrap().is_empty());
}

#[test]
fn rejects_bad_input() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.ndjson"), "{\"word\":\"cat\",\"drawing\":[[[0,1],[0,1]]]}\nnot json\n").unwrap();
    sh(dir, &["ingest", "--input", "@bad.ndjson", "--out", "@c.bin"]).unwrap();
    assert!(sh(dir, &["ingest", "--input", "@bad.ndjson", "--out", "@c.bin", "--strict"]).is_err());
    prepare(dir);
    let base = ["train", "--corpus", "@corpus.bin", "--split", "@split.txt", "--out", "@x"];
    assert!(sh(dir, &[&base[..], &["--set", "code_bits=12"]].concat()).is_err());
    assert!(sh(dir, &[&base[..], &["--set", "no_such_key=1"]].concat()).is_err());
    assert!(sh(dir, &[&base[..], &["--stage", "scl"]].concat()).is_err());
    assert!(sh(dir, &["evaluate", "--gallery", "@missing.bin", "--queries", "@q.txt"]).is_err());
    assert!(sh(dir, &["no-such-command"]).is_err());
}
