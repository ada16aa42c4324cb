use std::path::{Path, PathBuf};
use std::process::Command as Process;

use bowsim_cli::config::RunConfig;
use bowsim_cli::manifest::Manifest;
use bowsim_cli::pipeline::Outcome;
use bowsim_cli::wav::read_pcm16;
use bowsim_cli::{run, Cli, CliError};
use clap::Parser;

fn presets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets")
}

fn invoke(args: &[&str]) -> Result<Outcome, CliError> {
    let mut full = vec!["bowsim"];
    full.extend_from_slice(args);
    run(Cli::try_parse_from(full).map_err(|e| CliError::Usage(e.to_string()))?)
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn all_presets_parse() {
    let mut names: Vec<_> = std::fs::read_dir(presets())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    names.sort();
    for row in ["pinn_fb10", "pinn_fb100", "pinn_fb1000", "deeponet_fb10", "deeponet_fb100", "deeponet_fb1000"] {
        assert!(names.iter().any(|p| p.file_stem().unwrap() == row), "missing preset {row}");
    }
    for p in &names {
        RunConfig::load(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn full_size_presets_carry_their_settings() {
    let c = RunConfig::load(&presets().join("pinn_fb10.toml")).unwrap();
    assert_eq!(c.train.plan.time_windows, 3);
    assert_eq!(c.train.scale_t, 0.1);
    assert_eq!(c.train.scale_pq, 0.2);
    assert_eq!(c.train.sigma_prime, 1.0);
    assert!(!c.train.plan.annealing);
    assert_eq!(c.train.plan.causal_chunks, 1);

    let c = RunConfig::load(&presets().join("pinn_fb1000.toml")).unwrap();
    assert_eq!((c.train.plan.time_windows, c.train.plan.causal_chunks), (5, 50));
    assert_eq!(c.train.plan.causal_threshold, 0.1);
    assert!(c.train.plan.annealing);
    assert_eq!(c.train.sigma_prime, 3.0);

    let c = RunConfig::load(&presets().join("deeponet_fb1000.toml")).unwrap();
    assert_eq!((c.train.scale_t, c.train.scale_pq, c.train.depth), (0.01, 2.0, 6));
    assert!(c.train.plan.annealing);
}

#[test]
fn fdm_without_bow_is_a_sinusoid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nbow_force = 0.0\nq0 = 1.0\nt_max = 0.02\nfdm_rate = 441000.0\n");
    let out = dir.path().join("out");
    invoke(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "fdm"]).unwrap();
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,p,q,eta"));
    let omega = 2.0 * std::f64::consts::PI * 100.0;
    let mut rows = 0;
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        // p = −sin ωt, q = cos ωt up to the midpoint rule's phase error
        assert!((v[1] + (omega * v[0]).sin()).abs() < 1e-3, "{line}");
        assert!((v[2] - (omega * v[0]).cos()).abs() < 1e-3, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 883);
    assert!(out.join("segments.json").exists());
}

#[test]
fn reruns_reproduce_manifest_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[scenario]\nbow_force = 10.0\nt_max = 0.005\nfdm_rate = 441000.0\n\
         [train]\nwidth = 8\ndepth = 1\nc_rff = 4\nscale_t = 0.005\n\
         [train.plan]\nn_ode = 50\nmax_iters = 20\nlog_every = 5\n",
    );
    let hashes = |out: &Path| {
        for cmd in ["fdm", "train-pinn", "synth"] {
            invoke(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "5", cmd]).unwrap();
        }
        Manifest::load_or_default(out).unwrap().hashes()
    };
    let a = hashes(&dir.path().join("a"));
    let b = hashes(&dir.path().join("b"));
    assert!(a.len() >= 7, "{a:?}");
    assert_eq!(a, b);

    invoke(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("c").to_str().unwrap(), "--seed", "6", "train-pinn"])
        .unwrap();
    let c = Manifest::load_or_default(&dir.path().join("c")).unwrap().hashes();
    let ckpt = |h: &[(String, String)]| h.iter().find(|(p, _)| p == "model.ckpt").unwrap().1.clone();
    assert_ne!(ckpt(&a), ckpt(&c));
}

#[test]
fn zero_trajectory_renders_silence_of_the_right_length() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("zero.csv");
    let mut text = String::from("t,p,q\n");
    for n in 0..=1000 {
        text.push_str(&format!("{},0,0\n", n as f64 / 441_000.0));
    }
    std::fs::write(&csv, text).unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nbow_force = 0.0\n");
    let out = dir.path().join("out");
    invoke(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "synth", "--trajectory", csv.to_str().unwrap()])
        .unwrap();
    let (rate, samples) = read_pcm16(&std::fs::read(out.join("synth.wav")).unwrap()).unwrap();
    assert_eq!(rate, 44_100);
    assert_eq!(samples.len(), 101);
    assert!(samples.iter().all(|&s| s == 0));
}

#[test]
fn non_integer_rate_ratio_is_an_export_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("odd.csv");
    let mut text = String::from("t,p,q\n");
    for n in 0..=100 {
        text.push_str(&format!("{},{},0\n", n as f64 / 48_000.0, (n as f64).sin()));
    }
    std::fs::write(&csv, text).unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nbow_force = 0.0\n");
    let err = invoke(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "synth", "--trajectory", csv.to_str().unwrap()])
        .unwrap_err();
    assert!(matches!(err, CliError::Other(ref m) if m.contains("export")), "{err}");
}

#[test]
fn synth_fundamental_matches_the_fdm_spectrum_peak() {
    use rustfft::num_complex::Complex;

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[scenario]\nbow_force = 10.0\nt_max = 0.5\nfdm_rate = 441000.0\n");
    let out = dir.path().join("out");
    invoke(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "fdm"]).unwrap();
    invoke(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "synth"]).unwrap();

    let n = 8192;
    let peak_bin = |x: &[f64]| {
        let mut buf: Vec<Complex<f64>> = x[x.len() - n..].iter().map(|&v| Complex::new(v, 0.0)).collect();
        let mean = buf.iter().map(|c| c.re).sum::<f64>() / n as f64;
        buf.iter_mut().for_each(|c| c.re -= mean);
        rustfft::FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        (1..n / 2).max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm())).unwrap()
    };
    // steady-state tail of the FDM trajectory (44.1 kHz CSV) against the WAV
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let p: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    let (_, pcm) = read_pcm16(&std::fs::read(out.join("synth.wav")).unwrap()).unwrap();
    let audio: Vec<f64> = pcm.iter().map(|&s| s as f64).collect();
    let (a, b) = (peak_bin(&p), peak_bin(&audio));
    assert!(a.abs_diff(b) <= 1, "fdm bin {a} vs wav bin {b}");
}

#[test]
fn plots_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    invoke(&["--out", &out, "plot", "friction"]).unwrap();
    let first = std::fs::read(dir.path().join("friction.svg")).unwrap();
    invoke(&["--out", &out, "plot", "friction"]).unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("friction.svg")).unwrap());
    assert!(matches!(invoke(&["--out", &out, "plot", "waterfall"]), Err(CliError::Usage(_))));
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_bowsim");

    let bad = write_config(dir.path(), "[scenario]\nbow_force = 10.0\n\n[train]\nwidht = 3\n");
    let o = Process::new(bin).args(["--config", bad.to_str().unwrap(), "fdm"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 5") && err.contains("widht"), "{err}");

    let o = Process::new(bin).args(["plot", "nope", "--out", dir.path().to_str().unwrap()]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));

    // a learning rate this large overflows the loss on the first update
    let diverge = dir.path().join("diverge.toml");
    std::fs::write(
        &diverge,
        "[scenario]\nbow_force = 10.0\nt_max = 0.005\n[train]\nwidth = 8\ndepth = 1\nc_rff = 4\nscale_t = 0.005\n\
         [train.plan]\nn_ode = 50\nmax_iters = 200\nlr0 = 1e300\n",
    )
    .unwrap();
    let out = dir.path().join("fail");
    let o = Process::new(bin)
        .args(["--config", diverge.to_str().unwrap(), "--out", out.to_str().unwrap(), "train-pinn"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed.ckpt"));
    bowsim_core::nets::load(&out.join("failed.ckpt")).unwrap();
}
