use std::path::{Path, PathBuf};
use std::process::Command;

use dynamo_cli::{CliError, Experiment, LoadedConfig};

const TINY: &str = r#"
name = "tiny"
seed = 3
methods = ["M", "M-OF"]
frames = [0, 3]

[phantom]
kind = "blocks"
n_x = 32
n_y = 32
n_t = 4
block_size = 5
intensities = [1.0, 0.8]
n_fast = 1

[geometry]
n_rays = 45
n_views = 2

[solver]
epsilon = 3e-3
epsilon_mode = "absolute"
lambda_rule = "dp"
max_iters = 8

[driver]
tau = 4
warm_start_iters = 2
"#;

fn scratch(tag: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

#[test]
fn bundled_configs_parse() {
    let mut n = 0;
    for entry in std::fs::read_dir(configs_dir()).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let c = LoadedConfig::load(&p).unwrap();
            assert_eq!(c.config.method_specs().unwrap().len(), 8, "{}", p.display());
            n += 1;
        }
    }
    assert_eq!(n, 7);
}

#[test]
fn partial_configs_take_defaults() {
    let dir = scratch("defaults");
    let p = write_config(&dir, "name = \"d\"\nmethods = [\"D2-OF\"]\n[phantom]\nkind = \"pinball\"\n");
    let c = LoadedConfig::load(&p).unwrap();
    assert_eq!(c.config.seed, 0);
    assert_eq!(c.config.geometry.n_rays, 117);
    assert_eq!(c.config.driver.tau, 20);
    assert_eq!(c.output_dir(), PathBuf::from("out/d"));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = scratch("bad");
    let cases = [
        TINY.replace("\"M-OF\"", "\"D4-OF\""),
        TINY.replace("n_views = 2", "n_view = 2"),
        TINY.replace("lambda_rule = \"dp\"", "lambda_rule = \"fixed\""),
        TINY.replace("kind = \"blocks\"", "kind = \"spheres\""),
        TINY.replace("methods = [\"M\", \"M-OF\"]", "methods = []"),
    ];
    for text in cases {
        let p = write_config(&dir, &text);
        assert!(matches!(LoadedConfig::load(&p), Err(CliError::Config(_))), "accepted:\n{text}");
    }
    let err = LoadedConfig::load(dir.join("absent.toml")).unwrap_err();
    assert!(matches!(err, CliError::File { .. }));
}

#[test]
fn missing_sequence_file_names_the_path() {
    let exp = Experiment::load(configs_dir().join("test2_casea.toml"), Some(scratch("seq")), None).unwrap();
    let msg = exp.phantom().err().expect("sequence file should be absent").to_string();
    assert!(msg.contains("moving_digits.seq"), "{msg}");
}

#[test]
fn simulate_writes_sinogram_and_operator() {
    let dir = scratch("simulate");
    let exp = Experiment::load(write_config(&dir, TINY), Some(dir.join("out")), None).unwrap();
    let sim = exp.cmd_simulate().unwrap();
    assert_eq!(sim.h.shape(), (45 * 2 * 4, 32 * 32 * 4));
    let csv = std::fs::read_to_string(dir.join("out/sinogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2 * 45);
    let op: toml::Value = toml::from_str(&std::fs::read_to_string(dir.join("out/operator.toml")).unwrap()).unwrap();
    assert_eq!(op["rows"].as_integer(), Some(360));
    assert!(dir.join("out/manifest_simulate.toml").exists());
}

#[test]
fn reconstruct_writes_all_artifacts_deterministically() {
    let dir = scratch("reconstruct");
    let cfg = write_config(&dir, TINY);
    let run = |tag: &str| {
        let exp = Experiment::load(&cfg, Some(dir.join(tag)), None).unwrap();
        let out = exp.cmd_reconstruct().unwrap();
        assert_eq!(out.len(), 2);
        exp
    };
    let a = run("a");
    run("b");
    for m in ["M", "M-OF"] {
        let x = std::fs::read(dir.join(format!("a/convergence/{m}.csv"))).unwrap();
        let y = std::fs::read(dir.join(format!("b/convergence/{m}.csv"))).unwrap();
        assert_eq!(x, y, "{m} convergence differs");
        let text = String::from_utf8(x).unwrap();
        assert!(text.starts_with("iter,lambda,data_residual,rre,ssim,flow_recomputed\n"));
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(dir.join(format!("a/reconstruction/{m}.seq")).exists());
        assert!(dir.join(format!("a/frames/{m}_t03.pgm")).exists());
    }
    let summary = std::fs::read_to_string(dir.join("a/summary.csv")).unwrap();
    assert!(summary.starts_with("method,mean_rre,mean_ssim,wall_seconds\n"));
    assert_eq!(summary.lines().count(), 3);

    let manifest: toml::Value =
        toml::from_str(&std::fs::read_to_string(dir.join("a/manifest_reconstruct.toml")).unwrap()).unwrap();
    assert_eq!(manifest["seed"].as_integer(), Some(3));
    assert_eq!(manifest["config_sha256"].as_str(), Some(a.config_hash().unwrap().as_str()));

    let report = a.cmd_report().unwrap();
    assert!(report.lines().any(|l| l.starts_with("M-OF")));
}

#[test]
fn seed_override_changes_hash_and_data() {
    let dir = scratch("seed");
    let cfg = write_config(&dir, TINY);
    let a = Experiment::load(&cfg, Some(dir.join("a")), None).unwrap();
    let b = Experiment::load(&cfg, Some(dir.join("b")), Some(4)).unwrap();
    assert_eq!(b.loaded.config.seed, 4);
    assert_ne!(a.config_hash().unwrap(), b.config_hash().unwrap());
    assert_ne!(a.simulate().unwrap().sinogram.data, b.simulate().unwrap().sinogram.data);
}

#[test]
fn binary_runs_phantom_and_flow() {
    let dir = scratch("binary");
    let cfg = write_config(&dir, TINY);
    let bin = env!("CARGO_BIN_EXE_dynamo");
    for cmd in ["phantom", "flow"] {
        let st = Command::new(bin)
            .args([cmd, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.join("out"))
            .args(["--threads", "1"])
            .status()
            .unwrap();
        assert!(st.success(), "{cmd} failed");
    }
    assert!(dir.join("out/phantom.seq").exists());
    assert!(dir.join("out/frames/truth_t00.pgm").exists());
    assert!(dir.join("out/flows/flow_t02.csv").exists());
    assert!(dir.join("out/flows/reverse_t03.csv").exists());

    let out = Command::new(bin)
        .args(["reconstruct", "--config"])
        .arg(dir.join("absent.toml"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
