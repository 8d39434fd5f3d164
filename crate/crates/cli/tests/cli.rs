//! End-to-end tests of the binary: subcommand behavior, exit codes, file
//! formats, and determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use misiv::dgp::presets;
use misiv::moments::empirical_moments;
use misiv_cli::io::{export_sample, ingest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_misiv"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("misiv-cli-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

const C1_ENDOG_CFG: &str = "format = misiv-dgp-v1\n\
q = 0.5\np_star_0 = 0.3\np_star_1 = 0.7\nc = 1\nbeta = 2\nalpha0 = 0.1\nalpha1 = 0.2\n\
m_10 = 0.5\nm_11 = 0.5\nsecond_raw = 2\nthird_raw = 0.5\nmode = discrete\n";

#[test]
fn ingest_parses_minimal_file() {
    let dir = tmp_dir("ingest");
    let path = dir.join("mini.csv");
    write(&path, "y,t,z\n1.5,1,0\n");
    let sample = ingest(&path).unwrap();
    assert_eq!(sample.len(), 1);
    let o = sample.observations()[0];
    assert_eq!((o.y, o.t, o.z, o.cell), (1.5, 1, 0, 0));
}

#[test]
fn ingest_reports_line_numbers() {
    let dir = tmp_dir("badrow");
    let path = dir.join("bad.csv");
    write(&path, "y,t,z\n1.5,2,0\n");
    let err = ingest(&path).unwrap_err();
    assert!(
        err.message().contains("t not binary at line 2"),
        "{}",
        err.message()
    );
    assert_eq!(err.code(), 2);

    write(&path, "y,t,z\nxyz,1,0\n");
    let err = ingest(&path).unwrap_err();
    assert!(err.message().contains("line 2"));

    write(&path, "t,z\n1,0\n");
    let err = ingest(&path).unwrap_err();
    assert!(err.message().contains("header"));
}

#[test]
fn export_ingest_roundtrip_preserves_moments() {
    let sample = presets::c1_endog().simulate(20_000, 5);
    let before = empirical_moments(&sample, 0).unwrap();
    let dir = tmp_dir("roundtrip");
    let path = dir.join("sample.csv");
    write(
        &path,
        &export_sample(&sample, &[("seed".into(), "5".into())]),
    );
    let back = ingest(&path).unwrap();
    let after = empirical_moments(&back, 0).unwrap();
    let fields = |m: &misiv::MomentSet| {
        [
            m.q,
            m.p[0],
            m.p[1],
            m.cov_tz,
            m.cov_yz,
            m.cov_y2z,
            m.cov_y3z,
            m.cov_tyz,
            m.cov_ty2z,
            m.cell_means[0][0],
            m.cell_means[0][1],
            m.cell_means[1][0],
            m.cell_means[1][1],
        ]
    };
    for (a, b) in fields(&before).iter().zip(fields(&after).iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tmp_dir("determinism");
    let cfg = dir.join("c1e.cfg");
    write(&cfg, C1_ENDOG_CFG);
    let out1 = dir.join("a.csv");
    let out2 = dir.join("b.csv");
    for out in [&out1, &out2] {
        let st = run(&[
            "simulate",
            "--dgp-config",
            cfg.to_str().unwrap(),
            "--n",
            "5000",
            "--seed",
            "11",
            "--output",
            out.to_str().unwrap(),
        ]);
        assert!(st.status.success());
    }
    assert_eq!(
        std::fs::read(&out1).unwrap(),
        std::fs::read(&out2).unwrap(),
        "same seed must give identical bytes"
    );
}

#[test]
fn bounds_report_and_mask() {
    let dir = tmp_dir("bounds");
    let cfg = dir.join("c1e.cfg");
    write(&cfg, C1_ENDOG_CFG);
    let sample = dir.join("sample.csv");
    let st = run(&[
        "simulate",
        "--dgp-config",
        cfg.to_str().unwrap(),
        "--mode",
        "continuous",
        "--n",
        "60000",
        "--seed",
        "3",
        "--output",
        sample.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let report_path = dir.join("bounds.txt");
    let st = run(&[
        "bounds",
        "--input",
        sample.to_str().unwrap(),
        "--grid-step",
        "0.01",
        "--output",
        report_path.to_str().unwrap(),
    ]);
    assert!(
        st.status.success(),
        "{}",
        String::from_utf8_lossy(&st.stderr)
    );
    let report = std::fs::read_to_string(&report_path).unwrap();
    assert!(report.starts_with("# misiv-bounds-v1"));
    assert!(report.contains("beta_first_order_lo"));
    // Interval near the population values.
    let get = |key: &str| -> f64 {
        report
            .lines()
            .find_map(|l| l.strip_prefix(&format!("{key} = ")))
            .unwrap()
            .parse()
            .unwrap()
    };
    assert!((get("beta_first_order_lo") - 0.8).abs() < 0.08);
    assert!((get("beta_first_order_hi") - 2.857).abs() < 0.15);
    // Mask file: row count equals announced grid size.
    let mask = std::fs::read_to_string(dir.join("bounds.mask.csv")).unwrap();
    let rows = mask.lines().filter(|l| !l.starts_with('#')).count() - 1;
    assert_eq!(rows as f64, get("mask_points"));
    // Byte-determinism of the full report pipeline.
    let report2_path = dir.join("bounds2.txt");
    let st = run(&[
        "bounds",
        "--input",
        sample.to_str().unwrap(),
        "--grid-step",
        "0.01",
        "--output",
        report2_path.to_str().unwrap(),
    ]);
    assert!(st.status.success());
    let report2 = std::fs::read_to_string(&report2_path).unwrap();
    // Identical up to the lines naming the output paths.
    let strip = |r: &str| -> String {
        r.lines()
            .filter(|l| !l.starts_with("mask_file"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&report), strip(&report2));
}

#[test]
fn estimate_recovers_and_null_takes_beta_zero_branch() {
    let dir = tmp_dir("estimate");
    let cfg = dir.join("c1e.cfg");
    write(&cfg, C1_ENDOG_CFG);
    let sample = dir.join("sample.csv");
    assert!(run(&[
        "simulate",
        "--dgp-config",
        cfg.to_str().unwrap(),
        "--n",
        "400000",
        "--seed",
        "2",
        "--output",
        sample.to_str().unwrap(),
    ])
    .status
    .success());
    let out = run(&["estimate", "--input", sample.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("branch = full"), "{text}");
    let beta: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("beta = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((beta - 2.0).abs() < 0.15, "beta {beta}");

    // Null-effect config reports the zero branch with exit 0.
    let null_cfg = dir.join("null.cfg");
    write(
        &null_cfg,
        "format = misiv-dgp-v1\nq = 0.5\np_star_0 = 0.3\np_star_1 = 0.7\nc = 1\nbeta = 0\n\
alpha0 = 0.1\nalpha1 = 0.2\nm_10 = 0.3\nm_11 = 0.3\nsecond_raw = 1.5\nthird_raw = 0\nmode = discrete\n",
    );
    let null_sample = dir.join("null.csv");
    assert!(run(&[
        "simulate",
        "--dgp-config",
        null_cfg.to_str().unwrap(),
        "--n",
        "50000",
        "--seed",
        "4",
        "--output",
        null_sample.to_str().unwrap(),
    ])
    .status
    .success());
    let out = run(&["estimate", "--input", null_sample.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("branch = beta_zero"), "{text}");
    assert!(text.contains("alpha0 = unidentified"));

    // One-sided restriction on a config with alpha0 = 0.
    let os_cfg = dir.join("onesided.cfg");
    write(
        &os_cfg,
        "format = misiv-dgp-v1\nq = 0.5\np_star_0 = 0.3\np_star_1 = 0.7\nc = 1\nbeta = 2\n\
alpha0 = 0\nalpha1 = 0.2\nmode = discrete\n",
    );
    let os_sample = dir.join("onesided.csv");
    assert!(run(&[
        "simulate",
        "--dgp-config",
        os_cfg.to_str().unwrap(),
        "--n",
        "200000",
        "--seed",
        "6",
        "--output",
        os_sample.to_str().unwrap(),
    ])
    .status
    .success());
    let out = run(&[
        "estimate",
        "--input",
        os_sample.to_str().unwrap(),
        "--one-sided",
        "a0",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("branch = one_sided_a0"), "{text}");
    let a1: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("alpha1 = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((a1 - 0.2).abs() < 0.05, "alpha1 {a1}");
}

#[test]
fn exit_codes() {
    let dir = tmp_dir("exitcodes");
    // Missing file: input error.
    let out = run(&[
        "estimate",
        "--input",
        dir.join("nope.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    // Non-binary t: input error with line number.
    let bad = dir.join("bad.csv");
    write(&bad, "y,t,z\n1.5,2,0\n");
    let out = run(&["estimate", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    // Degenerate instrument: identification failure.
    let degen = dir.join("degen.csv");
    let mut content = String::from("y,t,z\n");
    for i in 0..50 {
        content.push_str(&format!("{}.0,{},1\n", i, i % 2));
    }
    write(&degen, &content);
    let out = run(&[
        "bounds",
        "--input",
        degen.to_str().unwrap(),
        "--output",
        dir.join("b.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("instrument degenerate"));
    // Bad grid step: input error.
    let ok = dir.join("ok.csv");
    let mut content = String::from("y,t,z\n");
    for i in 0..40 {
        content.push_str(&format!("{}.0,{},{}\n", i, i % 2, (i / 2) % 2));
    }
    write(&ok, &content);
    let out = run(&[
        "bounds",
        "--input",
        ok.to_str().unwrap(),
        "--grid-step",
        "0.3",
        "--output",
        dir.join("c.txt").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_flags_broken_config() {
    let dir = tmp_dir("verify");
    let cfg = dir.join("ok.cfg");
    write(&cfg, C1_ENDOG_CFG);
    let out = run(&["verify", "--dgp-config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("warning = false"), "{text}");
    // The untreated-arm error means vary with z by construction here, so the
    // constant-in-z restriction fails even though every maintained
    // assumption holds.
    assert!(text.contains("error_mean_constant_in_z = false"));

    // Hand-broken distribution override: the (1,1) error mean is shifted,
    // so instrument validity fails; still exit 0, warning flagged.
    let broken = dir.join("broken.cfg");
    write(
        &broken,
        "format = misiv-dgp-v1\nq = 0.5\np_star_0 = 0.3\np_star_1 = 0.7\nc = 1\nbeta = 2\n\
alpha0 = 0.1\nalpha1 = 0.2\nsecond_raw = 0\nthird_raw = 0\nmode = discrete\n\
dist_0_0_points = -0.214285714\ndist_0_0_probs = 1\n\
dist_0_1_points = -1.166666667\ndist_0_1_probs = 1\n\
dist_1_0_points = 0.5\ndist_1_0_probs = 1\n\
dist_1_1_points = 0.7\ndist_1_1_probs = 1\n",
    );
    let out = run(&["verify", "--dgp-config", broken.to_str().unwrap()]);
    assert!(out.status.success(), "verify must exit 0 with warnings");
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("warning = true"), "{text}");
    let viol: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("mean_violation = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!(viol > 0.1, "violation {viol}");
}

#[test]
fn shipped_configs_verify_cleanly() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_none_or(|e| e != "cfg") {
            continue;
        }
        seen += 1;
        let out = run(&["verify", "--dgp-config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{}", path.display());
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(
            text.contains("warning = false"),
            "{}: {text}",
            path.display()
        );
        // And the emitted effective config parses back.
        let out = run(&[
            "simulate",
            "--dgp-config",
            path.to_str().unwrap(),
            "--n",
            "1",
            "--output",
            "/dev/null",
            "--emit-config",
        ]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.starts_with("format = misiv-dgp-v1"));
    }
    assert!(seen >= 4, "expected shipped configs, found {seen}");
}

#[test]
fn oracle_mask_matches_bounds_mask_on_discretized_instance() {
    let dir = tmp_dir("oracle");
    let cfg = dir.join("c1e.cfg");
    write(&cfg, C1_ENDOG_CFG);
    let mask_path = dir.join("oracle.csv");
    let out = run(&[
        "oracle",
        "--dgp-config",
        cfg.to_str().unwrap(),
        "--grid-step",
        "0.02",
        "--output",
        mask_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let mask = std::fs::read_to_string(&mask_path).unwrap();
    assert!(mask.starts_with("# misiv-oracle-mask-v1"));
    let rows: Vec<&str> = mask.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "alpha0,alpha1,feasible");
    // Origin feasible.
    let first: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(first[2], "1");
}
