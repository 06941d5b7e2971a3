use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn reagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reagg"))
        .args(args)
        .current_dir(root())
        .output()
        .expect("run reagg")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn column(csv: &str, j: usize) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(j).unwrap().parse().unwrap()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["reaggregate", "--help"], &["validate", "--help"], &["geometry", "--help"]] {
        assert_eq!(reagg(args).status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn toy_fixture_gives_60_40() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("summary.csv");
    let o = reagg(&["reaggregate", "--job", "fixtures/toy/job.json", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    let e = column(&csv, 1);
    assert!((e[0] - 60.0).abs() < 1e-9 && (e[1] - 40.0).abs() < 1e-9, "{csv}");
    let diag: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["strategy"], "exact");
}

#[test]
fn toy_fixture_sampled_strategies() {
    for strategy in ["mcmc", "variational"] {
        let o = reagg(&["reaggregate", "--job", "fixtures/toy/job.json", "--strategy", strategy, "--samples", "20000"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let e = column(&stdout(&o), 1);
        assert!((e[0] - 60.0).abs() < 1.0, "{strategy}: {e:?}");
        assert!((e[0] + e[1] - 100.0).abs() < 1e-6);
    }
}

#[test]
fn weighted_worked_example() {
    let o = reagg(&["reaggregate", "--job", "fixtures/toy/job.json", "--job", "fixtures/worked/job.json"]);
    assert_eq!(o.status.code(), Some(2));
    let o = reagg(&["reaggregate", "--job", "fixtures/worked/job.json", "--method", "weighted"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "dest_id,expectation,lower,upper,sd\nd0,45,,,\nd1,60,,,\n");
}

#[test]
fn flags_without_job_file() {
    let o = reagg(&[
        "reaggregate",
        "--counts",
        "fixtures/worked/source_counts.csv",
        "--covariates",
        "fixtures/worked/covariates.csv",
        "--source-map",
        "fixtures/worked/source_map.csv",
        "--dest-map",
        "fixtures/worked/dest_map.csv",
        "--method",
        "weighted",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(column(&stdout(&o), 1), vec![45.0, 60.0]);
}

#[test]
fn malformed_csv_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let counts = write(dir.path(), "counts.csv", "region_id,value\nS,100\nT,abc\n");
    let o = reagg(&["reaggregate", "--job", "fixtures/toy/job.json", "--counts", &counts]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 3") && err.contains("abc"), "{err}");
}

#[test]
fn unknown_selectors_exit_2() {
    assert_eq!(reagg(&["reaggregate", "--job", "fixtures/toy/job.json", "--method", "bogus"]).status.code(), Some(2));
    assert_eq!(reagg(&["validate", "--methods", "weighted,bogus"]).status.code(), Some(2));
    assert_eq!(reagg(&["reaggregate", "--job", "fixtures/toy/job.json", "--quantiles", "0.5,0.5"]).status.code(), Some(2));
    assert_eq!(reagg(&["reaggregate", "--job", "missing.json"]).status.code(), Some(2));
}

#[test]
fn variational_on_counts_is_rejected() {
    let o = reagg(&["reaggregate", "--job", "fixtures/worked/job.json", "--method", "probabilistic", "--strategy", "exact"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn samples_out_writes_base_samples() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("samples.csv");
    let o = reagg(&[
        "reaggregate",
        "--job",
        "fixtures/toy/job.json",
        "--strategy",
        "projection",
        "--samples",
        "50",
        "--samples-out",
        samples.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(samples).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("b1,b2"));
    for line in lines.clone() {
        let v: Vec<f64> = line.split(',').map(|f| f.parse().unwrap()).collect();
        assert!((v[0] + v[1] - 100.0).abs() < 1e-9);
    }
    assert_eq!(lines.count(), 50);
}

#[test]
fn validate_pinned_scenario_and_determinism() {
    let args = ["validate", "--n-base", "400", "--n-source", "50", "--n-dest", "100", "--seed", "3", "--samples", "500"];
    let a = reagg(&args);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    let csv = stdout(&a);
    assert!(csv.starts_with("scenario,method,r2,rmse,sse,nlp,coverage\n"));
    let r2 = column(&csv, 2);
    assert!(r2[1] > r2[0], "{csv}");
    assert_eq!(stdout(&reagg(&args)), csv);
}

#[test]
fn correspondence_tables() {
    let o = reagg(&[
        "correspond",
        "--source-map",
        "fixtures/worked/source_map.csv",
        "--dest-map",
        "fixtures/worked/dest_map.csv",
        "--covariates",
        "fixtures/worked/covariates.csv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "source_id,dest_id,weight\ns0,d0,1\ns1,d0,0.4\ns1,d1,0.6\n");

    let dir = tempfile::tempdir().unwrap();
    let ident = write(dir.path(), "id.csv", "base_id,group_id\nb0,b0\nb1,b1\nb2,b2\n");
    let o = reagg(&["correspond", "--source-map", &ident, "--dest-map", &ident, "--covariates", "fixtures/worked/covariates.csv"]);
    assert_eq!(stdout(&o), "source_id,dest_id,weight\nb0,b0,1\nb1,b1,1\nb2,b2,1\n");

    let zero = write(dir.path(), "x.csv", "base_id,population\nb0,10\nb1,0\nb2,0\n");
    let o = reagg(&[
        "correspond",
        "--source-map",
        "fixtures/worked/source_map.csv",
        "--dest-map",
        "fixtures/worked/dest_map.csv",
        "--covariates",
        &zero,
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`s1`"), "{}", stderr(&o));
}

#[test]
fn fit_writes_model_json() {
    let dir = tempfile::tempdir().unwrap();
    let x = write(dir.path(), "x.csv", "base_id,z\nb0,0\nb1,1\nb2,2\nb3,3\n");
    let counts = write(dir.path(), "y.csv", "region_id,value\nb0,1\nb1,3\nb2,5\nb3,7\n");
    let map = write(dir.path(), "m.csv", "base_id,group_id\nb0,b0\nb1,b1\nb2,b2\nb3,b3\n");
    let o = reagg(&[
        "fit",
        "--counts",
        &counts,
        "--covariates",
        &x,
        "--source-map",
        &map,
        "--learning",
        "map",
        "--lambda",
        "1e-9",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: reagg_core::ModelDocument = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc.features, vec!["intercept", "z"]);
    let model = doc.into_model().unwrap();
    let pred = reagg_core::model::predict_latent(
        &model,
        &nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 3.0]),
    )
    .unwrap()
    .mean();
    assert!((pred[0] - 1.0).abs() < 1e-6 && (pred[1] - 7.0).abs() < 1e-6, "{pred:?}");
}

#[test]
fn geometry_commands() {
    let dir = tempfile::tempdir().unwrap();
    let regions = write(
        dir.path(),
        "g.json",
        r#"{"regions":[{"id":"A","ring":[[0,0],[2,0],[2,2],[0,2]]},{"id":"B","ring":[[2,0],[4,0],[4,2],[2,2]]}]}"#,
    );
    let points = write(dir.path(), "p.csv", "x,y,weight\n1,1,2\n3,1,\n3,1.5,\n9,9,\n");
    let o = reagg(&["geometry", "synthesize", "--regions", &regions, "--points", &points]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o), "region_id,value\nA,2\nB,2\n");

    let o = reagg(&["geometry", "grid", "--regions", &regions, "--origin", "0,0", "--cell", "1,1", "--cols", "4", "--rows", "2"]);
    let areas = column(&stdout(&o), 4);
    assert_eq!(areas.len(), 8);
    assert!((areas.iter().sum::<f64>() - 8.0).abs() < 1e-12);

    assert_eq!(stdout(&reagg(&["geometry", "ancestor", "SA2", "RA"])), "SA1\n");
    assert_eq!(stdout(&reagg(&["geometry", "ancestor", "SA2", "LGA"])), "MB\n");
    assert_eq!(reagg(&["geometry", "ancestor", "SA2", "XYZ"]).status.code(), Some(2));
}
