use std::fs;
use std::path::Path;

use telegraph_cli::config::RunConfig;
use telegraph_cli::manifest::{Manifest, MANIFEST_FILE};
use telegraph_cli::run_from_args;

fn run_in(dir: &Path, args: &[&str]) -> anyhow::Result<Vec<std::path::PathBuf>> {
    let mut full = vec!["telegraph".to_string()];
    for a in args {
        // keep every path inside the temp dir
        full.push(a.replace("@", dir.to_str().unwrap()));
    }
    run_from_args(full)
}

fn assert_error_without_output(dir: &Path, args: &[&str], key: &str) {
    let err = run_in(dir, args).unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains(key), "error should name {key}: {msg}");
    assert!(!dir.join("out").exists(), "nothing may be written on error");
}

#[test]
fn invalid_settings_are_rejected_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_error_without_output(d, &["simulate", "--repetitions", "0", "--out", "@/out"], "simulate.repetitions");
    assert_error_without_output(d, &["simulate", "--duration-ms=-1", "--out", "@/out"], "simulate.duration_ms");
    fs::write(d.join("grid.toml"), "[transmission]\ndetuning_mhz = { start = 0.0, stop = 1.0, points = 0 }\n").unwrap();
    assert_error_without_output(d, &["transmission", "--config", "@/grid.toml", "--out", "@/out"], "transmission.detuning_mhz");
    fs::write(d.join("typo.toml"), "[analyze]\nbin_widht_ms = 1.0\n").unwrap();
    assert_error_without_output(d, &["analyze", "--config", "@/typo.toml", "--out", "@/out"], "bin_widht_ms");
    assert_error_without_output(d, &["hmm", "--input", "@/missing.clicks", "--out", "@/out"], "missing.clicks");
}

#[test]
fn analyze_checks_bin_width_and_file_format() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    run_in(d, &["simulate", "--repetitions", "1", "--duration-ms", "50", "--out", "@/sim"]).unwrap();
    let clicks = "@/sim/clicks/rep_0000.clicks";
    assert_error_without_output(d, &["analyze", "--input", clicks, "--bin-width-ms", "0", "--hist", "--out", "@/out"], "analyze.bin_width_ms");
    fs::write(d.join("old.clicks"), "#clicks v0 duration_s=1\n0.1\n").unwrap();
    assert_error_without_output(d, &["analyze", "--input", "@/old.clicks", "--hist", "--out", "@/out"], "old.clicks");
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("c.toml"), "seed = 3\n[simulate]\nrepetitions = 4\nduration_ms = 20.0\n").unwrap();
    run_in(d, &["simulate", "--config", "@/c.toml", "--repetitions", "2", "--seed", "9", "--out", "@/out"]).unwrap();
    let m = Manifest::load(&d.join("out").join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.subcommand, "simulate");
    assert_eq!(m.config.seed, 9);
    assert_eq!(m.config.simulate.repetitions, 2);
    assert_eq!(m.config.simulate.duration_ms, 20.0);
    assert_eq!(fs::read_dir(d.join("out/clicks")).unwrap().count(), 2);
    // the manifest records every default, so it parses back to the same config
    let text = fs::read_to_string(d.join("out").join(MANIFEST_FILE)).unwrap();
    assert_eq!(RunConfig::parse(&text).unwrap(), m.config);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    for (jobs, out) in [("1", "@/a"), ("3", "@/b")] {
        run_in(d, &["simulate", "--repetitions", "3", "--duration-ms", "100", "--jobs", jobs, "--out", out]).unwrap();
    }
    for i in 0..3 {
        let f = format!("clicks/rep_{i:04}.clicks");
        assert_eq!(fs::read(d.join("a").join(&f)).unwrap(), fs::read(d.join("b").join(&f)).unwrap());
    }
}

#[test]
fn two_atom_filter_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    run_in(d, &["simulate", "--scenario", "two-atom", "--repetitions", "2", "--duration-ms", "100", "--out", "@/sim"]).unwrap();
    run_in(d, &["analyze", "--model", "two-atom", "--input", "@/sim/clicks", "--filter", "--out", "@/an"]).unwrap();
    let csv = fs::read_to_string(d.join("an/filter/0000_rep_0000.csv")).unwrap();
    let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "t_s,p0,p1,p2");
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 101);
}
