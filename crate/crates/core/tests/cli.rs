mod common;

use std::fs;

use common::*;
use sasr::decode::{read_dump, write_dump, DumpRecord, DumpUtterance};
use sasr::exit;
use sasr::model::Checkpoint;
use sasr::sot::read_references;

#[test]
fn simulate_is_deterministic_and_validates() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = write_config(a.path(), |s| s);
    let cfg_b = write_config(b.path(), |s| s);
    let da = simulate(&cfg_a, a.path());
    let db = simulate(&cfg_b, b.path());
    let ta = tree(&da);
    assert!(ta.contains_key("train/manifest.jsonl"));
    assert!(ta.contains_key("test/refs.txt"));
    assert_eq!(ta, tree(&db));

    let other = tempfile::tempdir().unwrap();
    let cfg = write_config(other.path(), |s| s);
    let d = other.path().join("data");
    sasr_ok(&["--seed", "6", "simulate", "--config", path_str(&cfg), "--out", path_str(&d)]);
    assert_ne!(tree(&d), ta);
}

#[test]
fn simulate_without_parent_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    let out = dir.path().join("missing").join("data");
    let r = sasr(&["simulate", "--config", path_str(&cfg), "--out", path_str(&out)]);
    assert_eq!(r.status.code(), Some(exit::DATA));
    assert!(!dir.path().join("missing").exists());
    assert!(!String::from_utf8_lossy(&r.stderr).is_empty());
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.replace("[beam]", "[beam]\ncolour = 3"));
    let r = sasr(&["simulate", "--config", path_str(&cfg), "--out", path_str(&dir.path().join("d"))]);
    assert_eq!(r.status.code(), Some(exit::USAGE));
    let r = sasr(&["simulate", "--out", "x"]);
    assert_eq!(r.status.code(), Some(exit::USAGE));
}

#[test]
fn train_zero_steps_writes_initial_checkpoint_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.replace("steps = 6", "steps = 0"));
    simulate(&cfg, dir.path());
    let run = dir.path().join("run");
    sasr_ok(&["train", "--config", path_str(&cfg), "--out", path_str(&run)]);
    let cks = checkpoints(&run);
    assert_eq!(cks.len(), 1);
    assert!(cks[0].starts_with("ckpt-000000-dev"), "{cks:?}");
    assert_eq!(fs::read_to_string(run.join("train.log")).unwrap().lines().count(), 0);
    assert_eq!(fs::read_to_string(run.join("BEST")).unwrap().trim(), cks[0]);
}

#[test]
fn train_logs_every_step_and_marks_best() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    simulate(&cfg, dir.path());
    let run = dir.path().join("run");
    sasr_ok(&["train", "--config", path_str(&cfg), "--out", path_str(&run)]);
    let log = fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 6);
    assert!(log.lines().next().unwrap().starts_with("step 0 total "));
    let cks = checkpoints(&run);
    assert_eq!(cks.len(), 3, "{cks:?}");
    assert!(cks[2].starts_with("ckpt-000006-dev"));
    let best = fs::read_to_string(run.join("BEST")).unwrap();
    let best_loss = Checkpoint::load(&run.join(best.trim())).unwrap().meta.dev_loss.unwrap();
    for c in &cks {
        let ck = Checkpoint::load(&run.join(c)).unwrap();
        assert!(ck.meta.dev_loss.unwrap() >= best_loss);
        assert!(c.contains(&format!("{:06}", ck.meta.step)));
    }
}

#[test]
fn resume_continues_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    simulate(&cfg, dir.path());
    let full = dir.path().join("full");
    sasr_ok(&["train", "--config", path_str(&cfg), "--out", path_str(&full)]);

    let part = dir.path().join("part");
    let short = write_config(dir.path(), |s| s.replace("steps = 6", "steps = 3"));
    sasr_ok(&["train", "--config", path_str(&short), "--out", path_str(&part)]);
    let mid = part.join(&checkpoints(&part)[1]);
    let cfg = write_config(dir.path(), |s| s);
    sasr_ok(&["train", "--config", path_str(&cfg), "--out", path_str(&part), "--checkpoint", path_str(&mid)]);

    assert_eq!(
        fs::read_to_string(part.join("train.log")).unwrap(),
        fs::read_to_string(full.join("train.log")).unwrap()
    );
    assert_eq!(checkpoints(&part), checkpoints(&full));
    let last = checkpoints(&full).pop().unwrap();
    assert_eq!(fs::read(part.join(&last)).unwrap(), fs::read(full.join(&last)).unwrap());
}

#[test]
fn divergence_aborts_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    // one Adam step of this size sends the weights to ~1e300
    let cfg = write_config(dir.path(), |s| s.replace("learning_rate = 0.01", "learning_rate = 1e300"));
    simulate(&cfg, dir.path());
    let run = dir.path().join("run");
    let r = sasr(&["train", "--config", path_str(&cfg), "--out", path_str(&run)]);
    assert_eq!(r.status.code(), Some(exit::NUMERIC), "{}", String::from_utf8_lossy(&r.stderr));
    // the last good checkpoint survives the abort
    let cks = checkpoints(&run);
    assert_eq!(cks.len(), 1);
    Checkpoint::load(&run.join(&cks[0])).unwrap();
}

#[test]
fn decode_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    let data = simulate(&cfg, dir.path());
    let run = dir.path().join("run");
    sasr_ok(&["train", "--config", path_str(&cfg), "--out", path_str(&run)]);
    let ck = run.join(checkpoints(&run).pop().unwrap());

    let hyp = dir.path().join("hyp.jsonl");
    let hyp2 = dir.path().join("hyp2.jsonl");
    sasr_ok(&["decode", "--config", path_str(&cfg), "--checkpoint", path_str(&ck), "--out", path_str(&hyp)]);
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_sasr"))
        .args(["decode", "--config", path_str(&cfg), "--checkpoint", path_str(&ck), "--out", path_str(&hyp2)])
        .env("SASR_THREADS", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(fs::read(&hyp).unwrap(), fs::read(&hyp2).unwrap());
    let dump = read_dump(fs::read(&hyp).unwrap().as_slice()).unwrap();
    assert_eq!(dump.len(), 6);

    let rep = dir.path().join("report");
    let stdout =
        sasr_ok(&["eval", "--config", path_str(&cfg), "--hyp", path_str(&hyp), "--out", path_str(&rep)]).stdout;
    let table = fs::read_to_string(rep.join("report.txt")).unwrap();
    assert_eq!(String::from_utf8(stdout).unwrap(), table);
    for row in ["1-spk", "2-spk", "total"] {
        assert!(table.contains(row), "{table}");
    }
    let json: serde_json::Value = serde_json::from_slice(&fs::read(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["mixtures"].as_array().unwrap().len(), 6);

    // shuffled dump scores identically
    let mut shuffled = dump.clone();
    shuffled.reverse();
    shuffled.swap(0, 3);
    let sh = dir.path().join("shuffled.jsonl");
    write_dump(fs::File::create(&sh).unwrap(), &shuffled).unwrap();
    let rep2 = dir.path().join("report2");
    sasr_ok(&["eval", "--config", path_str(&cfg), "--hyp", path_str(&sh), "--out", path_str(&rep2)]);
    assert_eq!(tree(&rep), tree(&rep2));

    // references as hypotheses score zero everywhere
    let refs = read_references(fs::read(data.join("test/refs.txt")).unwrap().as_slice()).unwrap();
    let mut perfect: Vec<DumpRecord> = Vec::new();
    for r in refs {
        if perfect.last().map(|p| p.mixture != r.mixture).unwrap_or(true) {
            perfect.push(DumpRecord {
                mixture: r.mixture.clone(),
                tokens: vec![],
                score: 0.0,
                truncated: false,
                utterances: vec![],
            });
        }
        perfect.last_mut().unwrap().utterances.push(DumpUtterance {
            speaker: r.utterance.speaker,
            tokens: r.utterance.tokens,
            mean_beta: vec![],
        });
    }
    let ph = dir.path().join("perfect.jsonl");
    write_dump(fs::File::create(&ph).unwrap(), &perfect).unwrap();
    let rep3 = dir.path().join("report3");
    sasr_ok(&[
        "eval",
        "--refs",
        path_str(&data.join("test/refs.txt")),
        "--hyp",
        path_str(&ph),
        "--out",
        path_str(&rep3),
    ]);
    let json: serde_json::Value = serde_json::from_slice(&fs::read(rep3.join("report.json")).unwrap()).unwrap();
    let total = &json["report"]["total"];
    assert_eq!(
        (total["ser"].as_f64(), total["wer"].as_f64(), total["sa_wer"].as_f64()),
        (Some(0.0), Some(0.0), Some(0.0))
    );
}

#[test]
fn empty_split_decodes_to_empty_dump() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s.replace("steps = 6", "steps = 0"));
    simulate(&cfg, dir.path());
    let run = dir.path().join("run");
    sasr_ok(&["train", "--config", path_str(&cfg), "--out", path_str(&run)]);
    let ck = run.join(checkpoints(&run).pop().unwrap());
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    fs::write(empty.join("manifest.jsonl"), "").unwrap();
    fs::write(empty.join("inventories.jsonl"), "").unwrap();
    let hyp = dir.path().join("hyp.jsonl");
    sasr_ok(&[
        "decode",
        "--config",
        path_str(&cfg),
        "--checkpoint",
        path_str(&ck),
        "--dataset",
        path_str(&empty),
        "--out",
        path_str(&hyp),
    ]);
    assert_eq!(fs::read(&hyp).unwrap(), b"");
}

#[test]
fn eval_rejects_incomplete_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), |s| s);
    let data = simulate(&cfg, dir.path());
    let hyp = dir.path().join("hyp.jsonl");
    fs::write(&hyp, "").unwrap();
    let r = sasr(&[
        "eval",
        "--refs",
        path_str(&data.join("test/refs.txt")),
        "--hyp",
        path_str(&hyp),
        "--out",
        path_str(&dir.path().join("rep")),
    ]);
    assert_eq!(r.status.code(), Some(exit::DATA));
}
