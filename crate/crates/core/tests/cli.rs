use std::path::Path;
use std::process::{Command, Output};

use mdvae::data::generate_corpus;
use mdvae::eval::{read_generations, GENERATION_HEADER};

const TINY: [&str; 12] = [
    "--d-model", "16", "--n-layers", "1", "--n-heads", "2", "--d-ff", "32", "--d-z", "8", "--max-len", "40",
];

fn mdvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdvae"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn corpus(dir: &Path) -> String {
    let path = dir.join("train.csv");
    generate_corpus(120, 2, 40).write_csv(&path).unwrap();
    path.to_str().unwrap().to_string()
}

fn train(dir: &Path, corpus: &str, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec!["train", "--corpus", corpus, "--out", out.to_str().unwrap()];
    args.extend_from_slice(&["--variant", "md_dif_col", "--k", "2", "--epochs", "2", "--batch-size", "32"]);
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    mdvae(&args)
}

#[test]
fn tokenize_and_validate() {
    let out = ok(&mdvae(&["tokenize", "--smiles", "C[NH3+]Cl"]));
    assert_eq!(out.trim(), "8\tC [ N H 3 + ] Cl");
    let out = ok(&mdvae(&["validate", "--smiles", "CO(C)C"]));
    assert_eq!(out, "CO(C)C\tinvalid\tVALENCE_VIOLATION\t\n");
    let out = ok(&mdvae(&["validate", "--smiles", "CO(C)C", "--strict", "false"]));
    assert!(out.starts_with("CO(C)C\tvalid\t\t"), "{out}");
}

#[test]
fn tokenize_input_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("in.txt");
    std::fs::write(&path, "CCO\n\nc1ccccc1\n").unwrap();
    let out = ok(&mdvae(&["tokenize", "--input", path.to_str().unwrap()]));
    assert_eq!(out.lines().collect::<Vec<_>>(), ["3\tC C O", "8\tc 1 c c c c c 1"]);
}

#[test]
fn failures_exit_one_and_name_the_path() {
    let out = mdvae(&["train", "--corpus", "/no/such/corpus.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such/corpus.csv"));

    let out = mdvae(&["train", "--no-such-flag", "1"]);
    assert_eq!(out.status.code(), Some(1));

    let out = mdvae(&["train", "--config", "/no/such.conf"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/such.conf"));

    let out = mdvae(&["generate", "--checkpoint", "/no/ckpt.bin"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/no/ckpt.bin"));

    let out = mdvae(&["tokenize", "--smiles", "CXC"]);
    assert_eq!(out.status.code(), Some(1));

    let out = mdvae(&["evaluate"]);
    assert_eq!(out.status.code(), Some(1));

    let out = mdvae(&[]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("bad.conf");
    std::fs::write(&conf, "epochs = 2\nlearning_rate = 0.1\n").unwrap();
    let out = mdvae(&["train", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn training_is_reproducible_and_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    ok(&train(dir.path(), &c, "a", &["--seed", "7"]));
    ok(&train(dir.path(), &c, "b", &["--seed", "7"]));
    let log = |run: &str| std::fs::read(dir.path().join(run).join("metrics.csv")).unwrap();
    assert_eq!(log("a"), log("b"));
    let header = String::from_utf8(log("a")).unwrap();
    assert!(header.starts_with("step,epoch,variant,l_recon,l_reg,beta,inter_kld\n"));
    assert_eq!(header.lines().count(), 3);

    // the dumped settings reproduce the run on their own, apart from `out`
    let dumped = dir.path().join("a").join("effective_config.txt");
    let c_out = dir.path().join("c");
    ok(&mdvae(&["train", "--config", dumped.to_str().unwrap(), "--out", c_out.to_str().unwrap()]));
    assert_eq!(log("a"), log("c"));

    ok(&train(dir.path(), &c, "d", &["--seed", "8"]));
    assert_ne!(log("a"), log("d"));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "# two epochs unless overridden\nepochs = 2\nseed = 3\n").unwrap();
    let out = dir.path().join("run");
    let mut args = vec!["train", "--config", conf.to_str().unwrap(), "--corpus", &c, "--out", out.to_str().unwrap()];
    args.extend_from_slice(&["--epochs", "1", "--variant", "controlvae", "--batch-size", "60"]);
    args.extend_from_slice(&TINY);
    ok(&mdvae(&args));
    let effective = std::fs::read_to_string(out.join("effective_config.txt")).unwrap();
    assert!(effective.contains("epochs = 1\n"));
    assert!(effective.contains("seed = 3\n"));
    let log = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);
    // single decoder: no inter-decoder column value
    assert!(log.lines().nth(1).unwrap().ends_with(','));
}

#[test]
fn resume_continues_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    ok(&train(dir.path(), &c, "full", &["--epochs", "3"]));
    ok(&train(dir.path(), &c, "part", &["--epochs", "3", "--max-steps", "5"]));
    let ckpt = dir.path().join("part").join("checkpoint.bin");
    ok(&train(dir.path(), &c, "part", &["--epochs", "3", "--resume", ckpt.to_str().unwrap()]));
    let log = |run: &str| std::fs::read_to_string(dir.path().join(run).join("metrics.csv")).unwrap();
    assert_eq!(log("part"), log("full"));
    assert!(log("full").lines().last().unwrap().starts_with("12,2,"));
}

#[test]
fn generate_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    ok(&train(dir.path(), &c, "run", &[]));
    let ckpt = dir.path().join("run").join("checkpoint.bin");
    let gen = dir.path().join("gen");
    let gen_args = |out: &Path| {
        vec![
            "generate".to_string(),
            "--checkpoint".into(),
            ckpt.to_str().unwrap().into(),
            "--corpus".into(),
            c.clone(),
            "--n".into(),
            "6".into(),
            "--regime".into(),
            "ood".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let a: Vec<String> = gen_args(&gen);
    ok(&mdvae(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    let csv = gen.join("generations.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), GENERATION_HEADER);
    let rows = read_generations(&csv).unwrap();
    assert_eq!(rows.len(), 6 * 6);
    for r in &rows {
        assert_eq!(r.molwt.is_some(), r.valid);
    }

    let gen2 = dir.path().join("gen2");
    let b: Vec<String> = gen_args(&gen2);
    ok(&mdvae(&b.iter().map(String::as_str).collect::<Vec<_>>()));
    assert_eq!(text, std::fs::read_to_string(gen2.join("generations.csv")).unwrap());

    let ev = dir.path().join("eval");
    let report = ok(&mdvae(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--seen",
        &c,
        "--generations",
        csv.to_str().unwrap(),
        "--out",
        ev.to_str().unwrap(),
    ]));
    for key in ["recon_success_rate_seen", "inter_decoder_kld", "l_recon", "gen_efficiency.ood.molwt."] {
        assert!(report.contains(key), "{key} missing from\n{report}");
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(ev.join("metrics.json")).unwrap()).unwrap();
    assert!(json.get("recon_success_rate_seen").is_some());
    assert!(ev.join("metrics.txt").exists());
}

#[test]
fn sweep_reports_each_k() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path());
    let out = dir.path().join("sweep");
    let mut args = vec!["sweep-k", "--corpus", &c, "--ks", "1,2", "--epochs", "1", "--batch-size", "60"];
    let o = out.to_str().unwrap().to_string();
    args.extend_from_slice(&["--out", &o]);
    args.extend_from_slice(&TINY);
    let stdout = ok(&mdvae(&args));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(stdout, table);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "k,variant,params,l_recon,l_reg,recon_seen,recon_unseen");
    assert!(lines[1].starts_with("1,controlvae,"));
    assert!(lines[2].starts_with("2,md_dif_col,"));
    let params: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!((params[1] - params[0]).abs() / params[0] < 0.05);
}
