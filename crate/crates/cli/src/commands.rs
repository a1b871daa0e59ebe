//! The five subcommands and the artifacts they write.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dynamo::driver::{run_method, Problem, Reconstruction};
use dynamo::flow::{reverse_flow, FlowField};
use dynamo::phantoms::{moving_blocks, pinball};
use dynamo::sequence::load_sequence;
use dynamo::tomo::{build_dynamic_operator, simulate_sinogram, Sinogram};
use dynamo::{ImageSequence, SparseOperator};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{LoadedConfig, PhantomSection};
use crate::error::{CliError, Result};

/// A config with command-line overrides applied.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub loaded: LoadedConfig,
    pub out_dir: PathBuf,
}

/// Measured data together with the operator used for reconstruction.
pub struct Simulation {
    pub truth: ImageSequence,
    pub sinogram: Sinogram,
    pub h: SparseOperator,
}

pub struct MethodOutcome {
    pub name: String,
    pub reconstruction: Reconstruction,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    name: &'a str,
    config: String,
    config_sha256: String,
    seed: u64,
    version: &'a str,
    methods: &'a [String],
}

#[derive(Serialize)]
struct OperatorManifest {
    rows: usize,
    cols: usize,
    nnz: usize,
    n_t: usize,
    rays_per_step: usize,
    n_rays: usize,
    angles_deg: Vec<Vec<f64>>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::file(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::file(path, e))
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| CliError::Config(e.to_string()))
}

impl Experiment {
    pub fn new(loaded: LoadedConfig, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        let mut loaded = loaded;
        if let Some(s) = seed {
            loaded.config.seed = s;
        }
        let out_dir = out.unwrap_or_else(|| loaded.output_dir());
        Self { loaded, out_dir }
    }

    pub fn load(path: impl AsRef<Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<Self> {
        Ok(Self::new(LoadedConfig::load(path)?, out, seed))
    }

    fn config(&self) -> &crate::ExperimentConfig {
        &self.loaded.config
    }

    /// SHA-256 of the effective config, overrides included.
    pub fn config_hash(&self) -> Result<String> {
        let digest = Sha256::digest(to_toml(self.config())?.as_bytes());
        Ok(digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }

    fn write_manifest(&self, command: &str) -> Result<()> {
        create_dir(&self.out_dir)?;
        let m = Manifest {
            command,
            name: &self.config().name,
            config: self.loaded.source.display().to_string(),
            config_sha256: self.config_hash()?,
            seed: self.config().seed,
            version: env!("CARGO_PKG_VERSION"),
            methods: &self.config().methods,
        };
        write_text(&self.out_dir.join(format!("manifest_{command}.toml")), &to_toml(&m)?)
    }

    pub fn phantom(&self) -> Result<ImageSequence> {
        let cfg = self.config();
        Ok(match &cfg.phantom {
            PhantomSection::Blocks { .. } => moving_blocks(&cfg.blocks().unwrap_or_default())?,
            PhantomSection::Pinball { .. } => pinball(&cfg.pinball().unwrap_or_default())?,
            PhantomSection::File { path } => {
                let p = self.loaded.resolve(path);
                if !p.exists() {
                    return Err(CliError::file(
                        &p,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "sequence file not found"),
                    ));
                }
                load_sequence(&p)?
            }
        })
    }

    pub fn simulate(&self) -> Result<Simulation> {
        let cfg = self.config();
        let truth = self.phantom()?;
        let geom = cfg.geometry(truth.n_x, truth.n_y);
        let schedule = cfg.schedule(truth.n_t)?;
        let sinogram = simulate_sinogram(&geom, &schedule, &truth, &cfg.simulation_options())?;
        let h = build_dynamic_operator(&geom, &schedule, cfg.geometry.ray_model.into())?;
        Ok(Simulation { truth, sinogram, h })
    }

    fn write_frames(&self, seq: &ImageSequence, tag: &str, range: (f64, f64)) -> Result<()> {
        let dir = self.out_dir.join("frames");
        create_dir(&dir)?;
        for &t in &self.config().frames {
            if t >= seq.n_t {
                return Err(CliError::Config(format!("frame {t} outside 0..{}", seq.n_t)));
            }
            seq.frame_image(t)
                .write_pgm(dir.join(format!("{tag}_t{t:02}.pgm")), range.0, range.1)?;
        }
        Ok(())
    }

    pub fn cmd_phantom(&self) -> Result<ImageSequence> {
        let truth = self.phantom()?;
        create_dir(&self.out_dir)?;
        truth.save(self.out_dir.join("phantom.seq"))?;
        self.write_frames(&truth, "truth", truth.min_max())?;
        self.write_manifest("phantom")?;
        Ok(truth)
    }

    pub fn cmd_simulate(&self) -> Result<Simulation> {
        let sim = self.simulate()?;
        create_dir(&self.out_dir)?;
        sim.sinogram.write_csv(self.out_dir.join("sinogram.csv"))?;
        sim.sinogram.write_binary(self.out_dir.join("sinogram.bin"))?;
        let op = OperatorManifest {
            rows: sim.h.n_rows(),
            cols: sim.h.n_cols(),
            nnz: sim.h.nnz(),
            n_t: sim.sinogram.n_t,
            rays_per_step: sim.sinogram.rays_per_step,
            n_rays: sim.sinogram.n_rays,
            angles_deg: sim.sinogram.angles.clone(),
        };
        write_text(&self.out_dir.join("operator.toml"), &to_toml(&op)?)?;
        self.write_manifest("simulate")?;
        Ok(sim)
    }

    /// Runs every configured method and writes convergence CSVs, frames,
    /// reconstructions and the summary table.
    pub fn cmd_reconstruct(&self) -> Result<Vec<MethodOutcome>> {
        let cfg = self.config();
        let sim = self.simulate()?;
        let driver = cfg.driver_config(sim.sinogram.noise_norm())?;
        let problem = Problem {
            h: &sim.h,
            b: &sim.sinogram.data,
            n_x: sim.truth.n_x,
            n_y: sim.truth.n_y,
            n_t: sim.truth.n_t,
            ground_truth: Some(&sim.truth),
        };
        let methods = cfg.method_specs()?;
        let run = |m: &dynamo::driver::MethodSpec| -> Result<MethodOutcome> {
            Ok(MethodOutcome {
                name: m.name(),
                reconstruction: run_method(&problem, &driver, *m)?,
            })
        };
        let outcomes: Vec<MethodOutcome> = if cfg.concurrent {
            methods.par_iter().map(run).collect::<Result<_>>()?
        } else {
            methods.iter().map(run).collect::<Result<_>>()?
        };
        let conv = self.out_dir.join("convergence");
        let recs = self.out_dir.join("reconstruction");
        create_dir(&conv)?;
        create_dir(&recs)?;
        let range = sim.truth.min_max();
        for o in &outcomes {
            write_text(&conv.join(format!("{}.csv", o.name)), &convergence_csv(&o.reconstruction))?;
            o.reconstruction.u.save(recs.join(format!("{}.seq", o.name)))?;
            self.write_frames(&o.reconstruction.u, &o.name, range)?;
        }
        write_text(&self.out_dir.join("summary.csv"), &summary_csv(&outcomes))?;
        self.write_manifest("reconstruct")?;
        Ok(outcomes)
    }

    /// Flows between consecutive ground-truth frames.
    pub fn cmd_flow(&self) -> Result<Vec<FlowField>> {
        let cfg = self.config();
        let truth = self.phantom()?;
        if truth.n_t < 2 {
            return Err(CliError::Config("flow estimation needs at least two frames".into()));
        }
        let driver = cfg.driver_config(Some(1.0))?;
        let alpha = driver.rescale.unwrap_or_else(|| dynamo::driver::auto_rescale(truth.n_x, truth.n_y));
        let (flows, _) = dynamo::driver::estimate_flows(&truth, alpha, &driver.flow)?;
        let dir = self.out_dir.join("flows");
        create_dir(&dir)?;
        for (t, f) in flows.iter().enumerate() {
            f.write_csv(dir.join(format!("flow_t{t:02}.csv")))?;
            f.write_png(dir.join(format!("flow_t{t:02}.png")))?;
            reverse_flow(f).write_csv(dir.join(format!("reverse_t{:02}.csv", t + 1)))?;
        }
        self.write_manifest("flow")?;
        Ok(flows)
    }

    /// Prints the per-method table, running the reconstructions first when
    /// no summary exists yet.
    pub fn cmd_report(&self) -> Result<String> {
        let path = self.out_dir.join("summary.csv");
        if !path.exists() {
            self.cmd_reconstruct()?;
        }
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::file(&path, e))?;
        let table = report_table(&self.config().name, &text)?;
        write_text(&self.out_dir.join("report.txt"), &table)?;
        self.write_manifest("report")?;
        Ok(table)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn convergence_csv(rec: &Reconstruction) -> String {
    let mut s = String::from("iter,lambda,data_residual,rre,ssim,flow_recomputed\n");
    for r in &rec.report.iterations {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iter,
            r.lambda,
            r.data_residual,
            opt(r.rre),
            opt(r.ssim),
            u8::from(r.flow_recomputed)
        );
    }
    s
}

pub fn summary_csv(outcomes: &[MethodOutcome]) -> String {
    let mut s = String::from("method,mean_rre,mean_ssim,wall_seconds\n");
    for o in outcomes {
        let r = &o.reconstruction.report;
        let _ = writeln!(
            s,
            "{},{},{},{:.3}",
            o.name,
            opt(r.final_rre()),
            opt(r.final_ssim()),
            r.wall_seconds
        );
    }
    s
}

/// Methods as rows with RRE and SSIM columns.
pub fn report_table(title: &str, summary: &str) -> Result<String> {
    let mut lines = summary.lines();
    if lines.next() != Some("method,mean_rre,mean_ssim,wall_seconds") {
        return Err(CliError::Config("summary.csv has an unexpected header".into()));
    }
    let mut out = format!("{title}\n{:<8} {:>8} {:>8} {:>10}\n", "method", "RRE", "SSIM", "time [s]");
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(CliError::Config(format!("malformed summary row `{line}`")));
        }
        let num = |s: &str| s.parse::<f64>().map(|v| format!("{v:.3}")).unwrap_or_else(|_| "-".into());
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>10}", f[0], num(f[1]), num(f[2]), f[3]);
    }
    Ok(out)
}
