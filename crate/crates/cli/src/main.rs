use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lpkd_core::bench::BridgeCostReport;
use lpkd_core::config::RunConfig;
use lpkd_core::data::Dataset;
use lpkd_core::gradsuite::{default_settings, run_suite, SuiteReport};
use lpkd_core::losses::Strategy;
use lpkd_core::nn::checkpoint;
use lpkd_core::trainer::{
    env_threads, evaluate, export_embeddings, one_nn_accuracy, sweep, train_student, train_teacher, write_sweep_csv,
    EmbeddingLayer, TrainOutcome,
};
use lpkd_core::{Error, Network32};

#[derive(Parser)]
#[command(name = "lpkd", version, about = "Teacher-student distillation with a locality preserving loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a teacher with cross-entropy.
    TrainTeacher(Common),
    /// Train a student against a teacher checkpoint.
    TrainStudent {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher_ckpt: Option<PathBuf>,
    },
    /// Top-1 accuracy of a checkpoint, with a per-class breakdown.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
    },
    /// Write tap or penultimate features of a checkpoint as CSV.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "penultimate")]
        layer: EmbeddingLayer,
        #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
        split: String,
    },
    /// Train one student per (k, gamma) grid point.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher_ckpt: PathBuf,
    },
    /// Cost model and timing of the LP and FitNet bridges.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long = "dS", default_value_t = 5120)]
        d_s: usize,
        #[arg(long = "dT", default_value_t = 6912)]
        d_t: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Skip the timed runs.
        #[arg(long)]
        analytic_only: bool,
        /// Compute pairwise distances on LPKD_THREADS threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Finite-difference check of every layer and loss gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value = "f32", value_parser = ["f32", "f64"])]
        precision: String,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default `runs/<subcommand>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    mnist_dir: Option<String>,
    /// Any config key, as `key=value`; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut out = Vec::new();
        let flags = [
            ("seed", &self.seed),
            ("strategy", &self.strategy),
            ("k", &self.k),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("tau", &self.tau),
            ("m", &self.m),
            ("epochs", &self.epochs),
            ("mnist_dir", &self.mnist_dir),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                out.push((key.to_string(), v.clone()));
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                key: kv.clone(),
                detail: "expected key=value".into(),
            })?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Resolves the config and prepares the output directory with a
    /// resolved-config snapshot.
    fn setup(&self, name: &str) -> Result<(RunConfig, PathBuf), Error> {
        let cfg = RunConfig::resolve(self.config.as_deref(), &self.overrides()?)?;
        let out = self.out.clone().unwrap_or_else(|| Path::new("runs").join(name));
        fs::create_dir_all(&out)?;
        fs::write(out.join("resolved_config.txt"), cfg.snapshot())?;
        Ok((cfg, out))
    }
}

fn split<'a>(data: &'a lpkd_core::config::DataSplits<f32>, name: &str) -> &'a Dataset<f32> {
    match name {
        "train" => &data.train,
        "val" => &data.val,
        _ => &data.test,
    }
}

fn load_ckpt(path: &Path) -> Result<Network32, Error> {
    checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn finish_training(outcome: &mut TrainOutcome<f32>, test: &Dataset<f32>, out: &Path, role: &str) -> Result<(), Error> {
    let acc = evaluate(&outcome.network, test)?.accuracy;
    outcome.record.test_accuracy = Some(acc);
    checkpoint::save(&outcome.network, &out.join(format!("{role}.ckpt")))?;
    outcome.record.write_jsonl(&out.join(format!("{role}.jsonl")))?;
    println!(
        "{role}: best val {:.4} at epoch {}, test {:.4}, params {} (+{} adapter)",
        outcome.record.best_val_accuracy.unwrap_or(f64::NAN),
        outcome.record.best_epoch.map_or(-1, |e| e as i64),
        acc,
        outcome.record.student_params,
        outcome.record.adapter_params,
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn print_suite(r: &SuiteReport) {
    println!("{:<16}{:>10}{:>14}{:>10}{:>10}", "case", "instances", "max rel err", "checked", "kinks");
    for (name, n, err, checked, skipped) in r.by_case() {
        println!("{name:<16}{n:>10}{err:>14.3e}{checked:>10}{skipped:>10}");
    }
    println!(
        "{} step {:e} tolerance {:e}: max {:.3e} -> {}",
        r.precision,
        r.step,
        r.tolerance,
        r.max_rel_error(),
        if r.passed() { "PASS" } else { "FAIL" }
    );
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::TrainTeacher(common) => {
            let (cfg, out) = common.setup("train-teacher")?;
            let data = cfg.load_data::<f32>()?;
            let net = Network32::init(&cfg.teacher_architecture()?, cfg.seed, cfg.init_scheme())?;
            let mut outcome = train_teacher(net, &data.train, &data.val, &cfg.train_config())?;
            finish_training(&mut outcome, &data.test, &out, "teacher")?;
        }
        Command::TrainStudent { common, teacher_ckpt } => {
            let (cfg, out) = common.setup("train-student")?;
            let data = cfg.load_data::<f32>()?;
            let net = Network32::init(&cfg.student_architecture()?, cfg.seed, cfg.init_scheme())?;
            let mut outcome = match teacher_ckpt {
                Some(p) => {
                    let teacher = load_ckpt(&p)?;
                    train_student(net, &teacher, &data.train, &data.val, &cfg.train_config())?
                }
                None if cfg.strategy == Strategy::Bp => {
                    let mut o = train_teacher(net, &data.train, &data.val, &cfg.train_config())?;
                    o.record.role = "student".into();
                    o
                }
                None => {
                    return Err(Error::Config {
                        key: "teacher-ckpt".into(),
                        detail: format!("required for strategy {}", cfg.strategy),
                    })
                }
            };
            finish_training(&mut outcome, &data.test, &out, "student")?;
        }
        Command::Eval { common, ckpt, split: which } => {
            let (cfg, out) = common.setup("eval")?;
            let net = load_ckpt(&ckpt)?;
            let data = cfg.load_data::<f32>()?;
            let ev = evaluate(&net, split(&data, &which))?;
            println!("{which} accuracy {:.4} over {} samples", ev.accuracy, ev.count);
            for c in &ev.per_class {
                println!("  class {:>3}: {:.4} ({}/{})", c.class, c.accuracy(), c.correct, c.count);
            }
            fs::write(out.join("eval.json"), serde_json::to_string_pretty(&ev)?)?;
        }
        Command::ExportEmbeddings {
            common,
            ckpt,
            layer,
            split: which,
        } => {
            let (cfg, out) = common.setup("export-embeddings")?;
            let net = load_ckpt(&ckpt)?;
            let data = cfg.load_data::<f32>()?;
            let table = export_embeddings(&net, split(&data, &which), layer)?;
            let path = out.join("embeddings.csv");
            table.write_csv(&path)?;
            println!(
                "{} rows of dimension {}; leave-one-out 1-NN accuracy {:.4}",
                table.ids.len(),
                table.dim(),
                one_nn_accuracy(&table)
            );
            println!("wrote {}", path.display());
        }
        Command::Sweep { common, teacher_ckpt } => {
            let (cfg, out) = common.setup("sweep")?;
            let teacher = load_ckpt(&teacher_ckpt)?;
            let data = cfg.load_data::<f32>()?;
            let points = sweep(
                &cfg.student_architecture()?,
                &teacher,
                &data.train,
                &data.val,
                Some(&data.test),
                &cfg.train_config(),
                &cfg.sweep_grid(),
                env_threads(),
            )?;
            println!("{:>4}{:>8}{:>10}{:>10}", "k", "gamma", "val", "test");
            for p in &points {
                println!(
                    "{:>4}{:>8}{:>10.4}{:>10.4}",
                    p.k,
                    p.gamma,
                    p.val_accuracy,
                    p.test_accuracy.unwrap_or(f64::NAN)
                );
            }
            write_sweep_csv(&points, &out.join("sweep.csv"))?;
            println!("wrote {}", out.join("sweep.csv").display());
        }
        Command::Bench {
            common,
            d_s,
            d_t,
            reps,
            analytic_only,
            parallel,
        } => {
            let (cfg, out) = common.setup("bench")?;
            let mut report = BridgeCostReport::analytic(cfg.m, d_s, d_t, cfg.k)?;
            if !analytic_only {
                let threads = if parallel { env_threads() } else { 1 };
                report = report.measure(reps, threads)?;
            }
            print!("{}", report.table());
            fs::write(out.join("bench.json"), report.to_json())?;
        }
        Command::Gradcheck {
            common,
            instances,
            precision,
        } => {
            let (cfg, out) = common.setup("gradcheck")?;
            let report = if precision == "f64" {
                let (step, tol) = default_settings::<f64>();
                run_suite::<f64>(instances, cfg.seed, step, tol)?
            } else {
                let (step, tol) = default_settings::<f32>();
                run_suite::<f32>(instances, cfg.seed, step, tol)?
            };
            print_suite(&report);
            fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 1 } else { 2 })
        }
    }
}
