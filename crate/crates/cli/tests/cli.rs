use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgnn-bench"))
        .args(args)
        .env("SGNN_THREADS", "2")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn raw_cora(dir: &Path) {
    fs::create_dir_all(dir).unwrap();
    let labels = ["Theory", "Neural_Networks", "Case_Based"];
    let mut content = String::new();
    for i in 0..30 {
        let bits: Vec<&str> = (0..6)
            .map(|j| if (i + j) % 3 == 0 { "1" } else { "0" })
            .collect();
        content.push_str(&format!("p{i}\t{}\t{}\n", bits.join("\t"), labels[i % 3]));
    }
    let mut cites = String::new();
    for i in 0..30 {
        cites.push_str(&format!("p{i}\tp{}\n", (i + 3) % 30));
    }
    cites.push_str("p0\tghost\n");
    fs::write(dir.join("cora.content"), content).unwrap();
    fs::write(dir.join("cora.cites"), cites).unwrap();
}

fn sbm(dir: &Path) {
    let o = bench(&[
        "gen",
        "--out",
        p(dir),
        "--n-per-block",
        "30",
        "--p-in",
        "0.3",
        "--p-out",
        "0.02",
        "--dim",
        "6",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    p(&path).to_string()
}

const SMALL: &str = "[model]\nhidden_dim = 8\ntime_steps = 3\n[train]\nepochs = 15\n[run]\nreport_wall_time = false\n";

#[test]
fn convert_writes_five_tables_and_refuses_to_clobber() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    let out = tmp.path().join("out");
    raw_cora(&raw);
    let o = bench(&["convert", "--data", p(&raw), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "edges.tsv",
        "features.tsv",
        "labels.tsv",
        "split.tsv",
        "meta.tsv",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(stdout(&o).contains("dropped citations  1"));

    let again = bench(&["convert", "--data", p(&raw), "--out", p(&out)]);
    assert_eq!(code(&again), 3);
    let forced = bench(&["convert", "--data", p(&raw), "--out", p(&out), "--force"]);
    assert_eq!(code(&forced), 0);
}

#[test]
fn convert_missing_cites_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    raw_cora(&raw);
    fs::remove_file(raw.join("cora.cites")).unwrap();
    let o = bench(&[
        "convert",
        "--data",
        p(&raw),
        "--out",
        p(&tmp.path().join("out")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("cora.cites"), "{}", stderr(&o));
}

#[test]
fn train_over_five_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    sbm(&data);
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = bench(&[
        "train",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--config",
        &cfg,
        "--seeds",
        "0..4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv
        .lines()
        .next()
        .unwrap()
        .ends_with("seed,val_acc,test_acc,epochs_run,wall_s,params,energy_mJ,firing_rate_mean"));
    assert!(stdout(&o).contains("test acc") && stdout(&o).contains("±"));
    for s in 0..5 {
        assert!(out.join(format!("checkpoint_seed{s}.json")).is_file());
        assert!(out.join(format!("energy_seed{s}.csv")).is_file());
    }

    // replaying the manifest reproduces the result files
    let replay = tmp.path().join("replay");
    let o = bench(&[
        "train",
        "--config",
        p(&out.join("manifest.toml")),
        "--out",
        p(&replay),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [
        "results.csv",
        "energy_seed0.csv",
        "energy_seed4.csv",
        "checkpoint_seed2.json",
    ] {
        assert_eq!(
            fs::read(out.join(f)).unwrap(),
            fs::read(replay.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn dry_run_prints_config_and_runs_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("never");
    let o = bench(&["train", "--config", &cfg, "--out", p(&out), "--dry-run"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("hidden_dim = 8"));
    assert!(!out.exists());
}

#[test]
fn unknown_key_exits_four_with_suggestion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), "[model]\nhiden_dim = 64\n");
    let o = bench(&["train", "--config", &cfg, "--dry-run"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("hiden_dim") && stderr(&o).contains("hidden_dim"));
}

#[test]
fn missing_dataset_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), SMALL);
    let o = bench(&[
        "train",
        "--config",
        &cfg,
        "--data",
        p(&tmp.path().join("nope")),
        "--out",
        p(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn divergence_exits_five() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    sbm(&data);
    let cfg = config(
        tmp.path(),
        "[model]\nhidden_dim = 8\ntime_steps = 2\nnorm = none\n[train]\nlr = 1e300\nepochs = 5\n",
    );
    let o = bench(&[
        "train",
        "--config",
        &cfg,
        "--data",
        p(&data),
        "--out",
        p(&tmp.path().join("o")),
        "--seeds",
        "0..0",
    ]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"));
}

#[test]
fn ablate_emits_five_variants_and_journals_every_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    sbm(&data);
    let cfg = config(tmp.path(), SMALL);
    let out = tmp.path().join("abl");
    let o = bench(&[
        "ablate",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--config",
        &cfg,
        "--seeds",
        "0..4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.len() == 9));
    assert_eq!(rows[1][0], "STFN -> BN");
    assert_eq!(rows[1][1], "norm=batch");
    let journal = fs::read_to_string(out.join("journal.tsv")).unwrap();
    assert_eq!(journal.lines().count(), 25);

    // STFN -> BN differs from Vanilla in the norm field only
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let header: Vec<&str> = results.lines().next().unwrap().split(',').collect();
    let row_of = |cell: &str| -> Vec<String> {
        results
            .lines()
            .find(|l| l.starts_with(&format!("{cell},")))
            .unwrap()
            .split(',')
            .map(String::from)
            .collect()
    };
    let (a, b) = (row_of("Vanilla"), row_of("STFN -> BN"));
    let seed_col = header.iter().position(|h| *h == "seed").unwrap();
    let diff: Vec<&str> = (1..seed_col)
        .filter(|&i| a[i] != b[i])
        .map(|i| header[i])
        .collect();
    assert_eq!(diff, vec!["norm"]);

    let resumed = bench(&[
        "ablate",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--config",
        &cfg,
        "--seeds",
        "0..4",
        "--resume",
    ]);
    assert_eq!(code(&resumed), 0);
    assert!(stdout(&resumed).contains("25 of 25 runs taken from the journal"));
    assert_eq!(fs::read_to_string(out.join("ablation.csv")).unwrap(), table);
}

#[test]
fn grid_writes_ranked_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    sbm(&data);
    let cfg = config(
        tmp.path(),
        "[model]\nhidden_dim = 8\ntime_steps = 3\n[train]\nepochs = 15\nlr = [0.0, 0.01]\n",
    );
    let out = tmp.path().join("grid");
    let o = bench(&[
        "grid",
        "--data",
        p(&data),
        "--out",
        p(&out),
        "--config",
        &cfg,
        "--seeds",
        "0..1",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(summary.lines().last().unwrap().contains("train.lr=0.0"));
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("lr = [0.0, 0.01]"));
}

#[test]
fn profile_is_deterministic_and_totals_add_up() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    sbm(&data);
    let cfg = config(tmp.path(), SMALL);
    let run = tmp.path().join("run");
    assert_eq!(
        code(&bench(&[
            "train",
            "--data",
            p(&data),
            "--out",
            p(&run),
            "--config",
            &cfg,
            "--seeds",
            "0..0"
        ])),
        0
    );
    let ckpt = run.join("checkpoint_seed0.json");
    let (a, b) = (tmp.path().join("pa"), tmp.path().join("pb"));
    for out in [&a, &b] {
        let o = bench(&[
            "profile",
            "--data",
            p(&data),
            "--out",
            p(out),
            "--checkpoint",
            p(&ckpt),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("E_ann"));
    }
    let csv = fs::read_to_string(a.join("energy.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("energy.csv")).unwrap());
    assert_eq!(
        csv,
        fs::read_to_string(run.join("energy_seed0.csv")).unwrap()
    );

    let mut snn = 0.0;
    let mut total = None;
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let e: f64 = f[5].parse().unwrap();
        if f[0] == "TOTAL" {
            total = Some(e);
        } else {
            snn += e;
        }
    }
    let total = total.unwrap();
    assert!((snn - total).abs() <= 1e-9 * total);

    let other = config(tmp.path(), "[model]\nhidden_dim = 4\n");
    let o = bench(&[
        "profile",
        "--data",
        p(&data),
        "--out",
        p(&tmp.path().join("pc")),
        "--checkpoint",
        p(&ckpt),
        "--config",
        &other,
    ]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("mismatch"));
}
