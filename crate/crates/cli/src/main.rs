//! `casemix`: burn casemix grouping from the command line.

mod commands;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use indexmap::IndexMap;
use serde_json::Value;

use casemix_core::pipeline::sha256_hex;
use commands::{AllConfig, Resolved, RunDir};
use error::{CliError, CliResult};
use manifest::{
    create_dir, input_file, manifest_path, read_input, read_input_text, read_manifest, to_pretty_json, write_atomic,
    InputFile, Outputs, RunManifest, MANIFEST_VERSION,
};

#[derive(Parser, Debug)]
#[command(name = "casemix", version, about = "Burn casemix grouping with cost-sensitive decision trees")]
struct Cli {
    /// Worker threads; affects speed only.
    #[arg(long, global = true, env = "CASEMIX_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic cohort CSV.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Draw missing seeds from the clock and record them.
        #[arg(long)]
        ephemeral: bool,
    },
    /// Assign rule-based groups to a cohort.
    Hrg {
        #[arg(long)]
        cohort: PathBuf,
        /// Ruleset JSON; the reference ruleset when omitted.
        #[arg(long)]
        ruleset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the grouping pipeline on a cohort.
    Train {
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ephemeral: bool,
    },
    /// Compare a training result with rule-based groups.
    Evaluate {
        /// Output directory of `train`.
        #[arg(long)]
        result: PathBuf,
        /// `hrg_labels.csv` from `hrg`.
        #[arg(long)]
        hrg: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
    },
    /// Generate, group, train and evaluate in one run.
    All {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: bool,
        #[arg(long)]
        ephemeral: bool,
    },
    /// Rerun a recorded command into a new location and compare outputs.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A command with everything resolved, ready to run or replay.
struct Job {
    command: &'static str,
    config_path: Option<String>,
    config_sha256: Option<String>,
    config: Option<Value>,
    inputs: IndexMap<String, InputFile>,
    svg: bool,
}

impl Job {
    fn seeds(&self) -> Value {
        self.config.as_ref().map(commands::seeds_of).unwrap_or(Value::Object(Default::default()))
    }

    fn input(&self, role: &str) -> CliResult<&Path> {
        self.inputs
            .get(role)
            .map(|f| Path::new(&f.path))
            .ok_or_else(|| CliError::input(format!("no `{role}` input recorded")))
    }

    fn config_value(&self) -> CliResult<&Value> {
        self.config.as_ref().ok_or_else(|| CliError::input("no configuration recorded"))
    }

    /// Runs the job into `out` and returns the outputs written.
    fn execute(&self, out: &Path) -> CliResult<(bool, Outputs)> {
        let mut outputs = Outputs::default();
        let text = |v: &Value| v.to_string();
        match self.command {
            "generate" => {
                let cfg = commands::resolve_cohort_config(&text(self.config_value()?), false)?.config;
                let bytes = commands::generate(&cfg)?;
                write_atomic(out, &bytes)?;
                let name = out.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                outputs.files.insert(name, sha256_hex(&bytes));
                return Ok((false, outputs));
            }
            "hrg" => {
                create_dir(out)?;
                let cohort = commands::read_cohort(self.input("cohort")?)?;
                let rs = commands::load_ruleset(self.inputs.get("ruleset").map(|f| Path::new(&f.path)))?;
                commands::hrg(&cohort, &rs, out, "", &mut outputs)?;
            }
            "train" => {
                create_dir(out)?;
                let cfg = commands::resolve_pipeline_config(&text(self.config_value()?), false)?.config;
                let cohort = commands::read_cohort(self.input("cohort")?)?;
                commands::train(&cohort, &cfg, out, "", &mut outputs)?;
            }
            "evaluate" => {
                create_dir(out)?;
                let run = RunDir::load(self.input("result")?)?;
                let ids: Vec<&str> = run.cohort.records.iter().map(|r| r.id.as_str()).collect();
                let labels = commands::read_hrg_labels(self.input("hrg")?, &ids)?;
                commands::evaluate(&run, &labels, self.svg, out, "", &mut outputs)?;
            }
            "all" => {
                create_dir(out)?;
                let cfg: AllConfig = commands::resolve_all_config(&text(self.config_value()?), false)?.config;
                let cohort_bytes = commands::generate(&cfg.cohort)?;
                outputs.write(out, "cohort.csv", &cohort_bytes)?;
                let cohort = commands::read_cohort(&out.join("cohort.csv"))?;
                let rs = cfg.ruleset.clone().unwrap_or_else(casemix_core::hrg::reference_ruleset);
                commands::hrg(&cohort, &rs, out, "hrg/", &mut outputs)?;
                commands::train(&cohort, &cfg.pipeline, out, "run/", &mut outputs)?;
                let run = RunDir::load(&out.join("run"))?;
                let ids: Vec<&str> = run.cohort.records.iter().map(|r| r.id.as_str()).collect();
                let labels = commands::read_hrg_labels(&out.join("hrg").join(commands::HRG_LABELS), &ids)?;
                commands::evaluate(&run, &labels, self.svg, out, "report/", &mut outputs)?;
            }
            other => return Err(CliError::input(format!("unknown command {other:?}"))),
        }
        Ok((true, outputs))
    }

    fn manifest(&self, outputs: Outputs) -> RunManifest {
        RunManifest {
            format: MANIFEST_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: self.command.to_string(),
            config_path: self.config_path.clone(),
            config_sha256: self.config_sha256.clone(),
            config: self.config.clone(),
            inputs: self.inputs.clone(),
            svg: self.svg,
            seeds: self.seeds(),
            outputs: outputs.files,
        }
    }

    fn run(&self, out: &Path) -> CliResult<RunManifest> {
        let (is_dir, outputs) = self.execute(out)?;
        let manifest = self.manifest(outputs);
        write_atomic(&manifest_path(out, is_dir), &to_pretty_json(&manifest)?)?;
        Ok(manifest)
    }
}

fn config_job<T>(
    command: &'static str,
    path: &Path,
    resolve: impl Fn(&str) -> CliResult<Resolved<T>>,
) -> CliResult<Job> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::input(format!("{} is not UTF-8", path.display())))?;
    let resolved = resolve(&text)?;
    Ok(Job {
        command,
        config_path: Some(path.display().to_string()),
        config_sha256: Some(sha256_hex(&bytes)),
        config: Some(resolved.value),
        inputs: IndexMap::new(),
        svg: false,
    })
}

fn replay(manifest: &Path, out: &Path) -> CliResult<()> {
    let recorded = read_manifest(manifest)?;
    for (role, f) in &recorded.inputs {
        let now = input_file(Path::new(&f.path))?;
        if now.sha256 != f.sha256 {
            return Err(CliError::input(format!("input `{role}` ({}) changed since the recorded run", f.path)));
        }
    }
    let command = match recorded.command.as_str() {
        "generate" => "generate",
        "hrg" => "hrg",
        "train" => "train",
        "evaluate" => "evaluate",
        "all" => "all",
        other => return Err(CliError::input(format!("cannot replay command {other:?}"))),
    };
    let job = Job {
        command,
        config_path: recorded.config_path.clone(),
        config_sha256: recorded.config_sha256.clone(),
        config: recorded.config.clone(),
        inputs: recorded.inputs.clone(),
        svg: recorded.svg,
    };
    let (is_dir, outputs) = job.execute(out)?;
    let mut fresh = job.manifest(outputs);
    if !is_dir {
        // The file name is the only output key for single-file commands.
        fresh.outputs = fresh.outputs.into_values().zip(recorded.outputs.keys()).map(|(h, k)| (k.clone(), h)).collect();
    }
    write_atomic(&manifest_path(out, is_dir), &to_pretty_json(&fresh)?)?;
    let diverged: Vec<&String> = recorded
        .outputs
        .iter()
        .filter(|(k, h)| fresh.outputs.get(*k) != Some(*h))
        .map(|(k, _)| k)
        .chain(fresh.outputs.keys().filter(|k| !recorded.outputs.contains_key(*k)))
        .collect();
    if diverged.is_empty() {
        eprintln!("replay matches all {} recorded outputs", recorded.outputs.len());
        Ok(())
    } else {
        Err(CliError::Stage(format!("replay diverged on {diverged:?}")))
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let (job, out) = match cli.command {
        Command::Generate { config, out, ephemeral } => (
            config_job("generate", &config, |t| commands::resolve_cohort_config(t, ephemeral))?,
            out,
        ),
        Command::Hrg { cohort, ruleset, out } => {
            let mut inputs = IndexMap::new();
            inputs.insert("cohort".to_string(), input_file(&cohort)?);
            if let Some(r) = ruleset {
                inputs.insert("ruleset".to_string(), input_file(&r)?);
            }
            let job = Job {
                command: "hrg",
                config_path: None,
                config_sha256: None,
                config: None,
                inputs,
                svg: false,
            };
            (job, out)
        }
        Command::Train { cohort, config, out, ephemeral } => {
            let mut job = config_job("train", &config, |t| commands::resolve_pipeline_config(t, ephemeral))?;
            job.inputs.insert("cohort".to_string(), input_file(&cohort)?);
            (job, out)
        }
        Command::Evaluate { result, hrg, out, svg } => {
            let mut inputs = IndexMap::new();
            // The run directory is identified by its provenance record.
            inputs.insert("result".to_string(), InputFile {
                path: result.display().to_string(),
                sha256: sha256_hex(read_input_text(&result.join("provenance.json"))?.as_bytes()),
            });
            inputs.insert("hrg".to_string(), input_file(&hrg)?);
            let job = Job {
                command: "evaluate",
                config_path: None,
                config_sha256: None,
                config: None,
                inputs,
                svg,
            };
            (job, out)
        }
        Command::All { config, out, svg, ephemeral } => {
            let mut job = config_job("all", &config, |t| commands::resolve_all_config(t, ephemeral))?;
            job.svg = svg;
            (job, out)
        }
        Command::Replay { manifest, out } => return replay(&manifest, &out),
    };
    job.run(&out).map(|_| ())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("input error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("input error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let start = Instant::now();
    match dispatch(cli) {
        Ok(()) => {
            eprintln!("done in {:.2}s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
