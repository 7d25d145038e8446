//! End-to-end runs of the `heapcount` binary: simulate, fit, impute from the
//! fitted posterior draws, and curves from the fit file.

use std::path::Path;
use std::process::Command;

use heapcount::commands::FitReport;
use heapcount::model::coarsen;
use heapcount::model::HeapingClass;

fn heapcount(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_heapcount"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.code().is_some_and(|c| c == 0 || c == 3),
        "heapcount {args:?} exited {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn simulate_fit_impute_curves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let sim = write(
        d,
        "sim.toml",
        "seed = 5\noutput_dir = \"sim\"\n[simulation]\nscenario = \"case2\"\n\
         [simulation.design]\nn_subjects = 40\ndays_per_subject = 8\n",
    );
    heapcount(&["simulate", &sim]);
    assert!(d.join("sim/dataset.csv").exists());
    assert!(d.join("sim/truth.csv").exists());

    let fit = write(
        d,
        "fit.toml",
        "seed = 6\noutput_dir = \"fit\"\n[data]\npath = \"sim/dataset.csv\"\n\
         [sampler]\nproposals = 400\nresample = 100\n",
    );
    heapcount(&["fit", &fit]);
    let report: FitReport =
        serde_json::from_slice(&std::fs::read(d.join("fit/fit.json")).unwrap()).unwrap();
    assert!(report.converged, "{}", report.message);
    assert_eq!(report.n_subjects, 40);
    assert_eq!(report.n_days, 320);
    // Case 2 has beta1 = 1; a 40-subject fit lands well inside (0.5, 1.5).
    assert!(
        (report.theta_hat.beta1 - 1.0).abs() < 0.5,
        "{:?}",
        report.theta_hat
    );
    assert!(report.theta_hat.gamma1 > report.theta_hat.gamma2);
    assert!(report.theta_hat.gamma2 > report.theta_hat.gamma3);
    assert!(report.wald.iter().all(|i| i.lower <= i.upper));

    let imp = write(
        d,
        "impute.toml",
        "seed = 7\noutput_dir = \"imp\"\n[data]\npath = \"sim/dataset.csv\"\n\
         [theta]\ndraws_file = \"fit/draws.json\"\n\
         [imputation]\nmode = { kind = \"full_joint\", proposals = 50 }\nmax_draws = 3\n",
    );
    heapcount(&["impute", &imp]);
    // Every imputed (w, g) coarsens back to the reported count.
    let reported: std::collections::HashMap<(String, u32), u32> =
        csv::Reader::from_path(d.join("sim/dataset.csv"))
            .unwrap()
            .records()
            .map(|r| {
                let r = r.unwrap();
                (
                    (r[0].to_string(), r[1].parse().unwrap()),
                    r[3].parse().unwrap(),
                )
            })
            .collect();
    let mut rdr = csv::Reader::from_path(d.join("imp/imputations.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let col = |n: &str| h.iter().position(|c| c == n).unwrap();
    let (sid, day, w, g) = (col("subject_id"), col("day"), col("w"), col("g"));
    let mut n = 0;
    for r in rdr.records() {
        let r = r.unwrap();
        let class = *HeapingClass::ALL
            .iter()
            .find(|c| c.to_string() == r[g])
            .unwrap();
        let y = reported[&(r[sid].to_string(), r[day].parse().unwrap())];
        assert_eq!(coarsen(r[w].parse().unwrap(), class), y);
        n += 1;
    }
    assert_eq!(n, 3 * 320);

    let curves = write(
        d,
        "curves.toml",
        "seed = 8\noutput_dir = \"curves\"\n[theta]\nfit_file = \"fit/fit.json\"\n",
    );
    let out = heapcount(&["curves", &curves]);
    let listed = String::from_utf8(out.stdout).unwrap();
    assert!(listed.contains("recall_marginal.csv"), "{listed}");
    assert!(d.join("curves/curves.json").exists());
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "seed = 1\nunknown_key = 2\n");
    let out = Command::new(env!("CARGO_BIN_EXE_heapcount"))
        .args(["fit", &bad])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
