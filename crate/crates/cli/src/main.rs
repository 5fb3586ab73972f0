use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use cmim_core::data::synth;
use cmim_core::mi::{binary_embeddings, correlation_matrix};
use cmim_core::train::{
    diagnostic_batch, evaluate, initial_network, load_network, load_test_set, run, Checkpoint, CmimConfig,
    RunOptions, METRICS,
};
use cmim_core::{Error, ErrorCategory, Result};

#[derive(Parser)]
#[command(name = "bnn-cmim", version, about = "Binary neural networks with contrastive mutual-information maximization")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a network; writes metrics and checkpoints to the config's output_dir.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// `key=value` with a dotted key, e.g. `data.dir=/tmp/mnist`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed epochs.
        #[arg(long)]
        stop_after: Option<usize>,
        /// Resume even if the checkpoint's config hash differs.
        #[arg(long)]
        force: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Top-1 accuracy of a checkpoint on a test split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory; defaults to the one in the checkpoint's config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train one run per value of a parameter and collect final accuracies.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Cells run as this many concurrent subprocesses.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Correlation matrix and embeddings of one layer's binary activations.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; defaults to `analysis/` next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Layer to analyze; defaults to the last tapped layer.
        #[arg(long)]
        layer: Option<usize>,
        /// Use the checkpoint's architecture with its untrained initial weights.
        #[arg(long)]
        untrained: bool,
        /// Held-out samples to embed, taken from the front of the test set.
        #[arg(long, default_value_t = 512)]
        samples: usize,
    },
    /// Write a synthetic MNIST-format digit dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        train: usize,
        #[arg(long, default_value_t = 2_000)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Lambda,
    NNce,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::NNce => "n_nce",
        }
    }
}

fn exit_code(c: ErrorCategory) -> u8 {
    match c {
        ErrorCategory::Config => 2,
        ErrorCategory::Data | ErrorCategory::Io => 3,
        ErrorCategory::Numeric => 4,
    }
}

fn report(category: &str, message: &str) {
    eprintln!("{}", json!({ "error": { "category": category, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("config", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    if let Err(e) = init_threads() {
        report("config", &e.to_string());
        return ExitCode::from(2);
    }
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.category().as_str(), &e.to_string());
            ExitCode::from(exit_code(e.category()))
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("BNN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("BNN_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(e.to_string()))
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train {
            config,
            overrides,
            resume,
            stop_after,
            force,
            quiet,
        } => {
            let cfg = CmimConfig::load_with_overrides(config.as_deref(), &overrides)?;
            let opts = RunOptions {
                resume,
                stop_after,
                force,
                progress: !quiet,
            };
            let summary = run(&cfg, &opts)?;
            let last = summary.history.last();
            println!(
                "{}",
                json!({
                    "output_dir": summary.dir,
                    "epochs": last.map_or(0, |m| m.epoch),
                    "finished": summary.finished,
                    "test_acc": last.map(|m| m.test_acc),
                })
            );
            Ok(())
        }
        Cmd::Eval { ckpt, data } => {
            let (cfg, net, norm) = load_network(&Checkpoint::load(&ckpt)?)?;
            let mut data_cfg = cfg.data.clone();
            if let Some(dir) = data {
                data_cfg.dir = dir;
            }
            let test = load_test_set(&data_cfg, &norm)?;
            let (acc, loss) = evaluate(&net, &test)?;
            println!("{}", json!({ "top1": acc, "loss": loss, "samples": test.len() }));
            Ok(())
        }
        Cmd::Sweep {
            config,
            overrides,
            param,
            values,
            parallel,
        } => sweep(config.as_deref(), &overrides, param, &values, parallel),
        Cmd::Analyze {
            ckpt,
            data,
            out,
            layer,
            untrained,
            samples,
        } => {
            let ckpt_file = Checkpoint::load(&ckpt)?;
            let (cfg, mut net, norm) = load_network(&ckpt_file)?;
            if untrained {
                net = initial_network(&cfg)?;
            }
            let mut data_cfg = cfg.data.clone();
            if let Some(dir) = data {
                data_cfg.dir = dir;
            }
            let out = out.unwrap_or_else(|| ckpt.parent().unwrap_or(Path::new(".")).join("analysis"));
            analyze(&net, &data_cfg, &norm, &out, layer, samples)
        }
        Cmd::GenData { out, train, test, seed } => {
            synth::write_dataset(&out, train, test, seed)?;
            println!("{}", json!({ "dir": out, "train": train, "test": test }));
            Ok(())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn analyze(
    net: &cmim_core::net::Network<f32>,
    data: &cmim_core::train::DataConfig,
    norm: &cmim_core::data::Normalization,
    out: &Path,
    layer: Option<usize>,
    samples: usize,
) -> Result<()> {
    let layer = match layer.or_else(|| net.tap_layers().iter().copied().max()) {
        Some(k) => k,
        None => net.depth().saturating_sub(1),
    };
    let test = load_test_set(data, norm)?;
    if samples == 0 {
        return Err(Error::Config("--samples must be at least 1".into()));
    }
    let x = diagnostic_batch(&test, samples)?;
    let emb = binary_embeddings(net, &x, layer)?;
    let labels = &test.labels[..emb.dims2()?.0];
    let m = correlation_matrix(&emb, labels)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut csv = String::new();
    for a in 0..m.size {
        let row: Vec<String> = (0..m.size).map(|b| format!("{:.6}", m.get(a, b))).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    write(&out.join("correlation_matrix.csv"), &csv)?;

    let summary = json!({
        "layer": layer,
        "samples": labels.len(),
        "intra_mean": m.intra_mean,
        "inter_mean": m.inter_mean,
        "gap": m.gap(),
        "order": m.order,
        "labels": m.labels,
        "class_boundaries": m.boundaries,
    });
    write(&out.join("similarity.json"), &format!("{:#}\n", summary))?;

    let (rows, dim) = emb.dims2()?;
    let mut csv = String::from("sample,label");
    for d in 0..dim {
        csv.push_str(&format!(",e{d}"));
    }
    csv.push('\n');
    for i in 0..rows {
        csv.push_str(&format!("{i},{}", labels[i]));
        for v in emb.row(i) {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
    }
    write(&out.join("embeddings.csv"), &csv)?;
    println!("{}", json!({ "dir": out, "layer": layer, "intra_mean": m.intra_mean, "inter_mean": m.inter_mean }));
    Ok(())
}

struct Cell {
    value: String,
    seed: u64,
    dir: PathBuf,
    config_path: PathBuf,
}

fn sweep(config: Option<&Path>, overrides: &[String], param: SweepParam, values: &[String], parallel: usize) -> Result<()> {
    let base = CmimConfig::load_with_overrides(config, overrides)?;
    fs::create_dir_all(&base.output_dir).map_err(|e| Error::io(&base.output_dir, e))?;
    let mut cells = Vec::new();
    let mut failures: Vec<Option<String>> = Vec::new();
    for (i, value) in values.iter().enumerate() {
        let value = value.trim().to_string();
        let dir = base.output_dir.join(format!("{}_{value}", param.key()));
        let config_path = dir.join("cell-config.json");
        let seed = base.seed + i as u64;
        let prepared = (|| -> Result<()> {
            let mut cfg = base.with_overrides(&[format!("{}={value}", param.key()), format!("seed={seed}")])?;
            cfg.output_dir = dir.clone();
            cfg.validate()?;
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write(&config_path, &cfg.to_json())
        })();
        failures.push(prepared.err().map(|e| e.to_string()));
        cells.push(Cell {
            value,
            seed,
            dir,
            config_path,
        });
    }

    let runnable: Vec<usize> = (0..cells.len()).filter(|&i| failures[i].is_none()).collect();
    if parallel <= 1 {
        for &i in &runnable {
            let cell = &cells[i];
            eprintln!("sweep: {}={} (seed {})", param.key(), cell.value, cell.seed);
            let result = CmimConfig::load(&cell.config_path).and_then(|cfg| run(&cfg, &RunOptions::default()));
            if let Err(e) = result {
                failures[i] = Some(e.to_string());
            }
        }
    } else {
        let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
        for chunk in runnable.chunks(parallel) {
            let mut children = Vec::new();
            for &i in chunk {
                let cell = &cells[i];
                eprintln!("sweep: {}={} (seed {})", param.key(), cell.value, cell.seed);
                let child = Command::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&cell.config_path)
                    .arg("--quiet")
                    .stdout(std::process::Stdio::null())
                    .stderr(std::process::Stdio::piped())
                    .spawn()
                    .map_err(|e| Error::io(&exe, e))?;
                children.push((i, child));
            }
            for (i, child) in children {
                let out = child.wait_with_output().map_err(|e| Error::io(&exe, e))?;
                if !out.status.success() {
                    failures[i] = Some(String::from_utf8_lossy(&out.stderr).trim().to_string());
                }
            }
        }
    }

    let mut csv = format!("{},seed,status,epochs,final_test_acc,final_train_loss,final_mi_diag,error\n", param.key());
    for (cell, failure) in cells.iter().zip(&failures) {
        let last = match failure {
            None => last_metrics(&cell.dir.join(METRICS)),
            Some(e) => Err(e.clone()),
        };
        match last {
            Ok(row) => csv.push_str(&format!(
                "{},{},ok,{},{},{},{},\n",
                cell.value, cell.seed, row.epoch, row.test_acc, row.train_loss, row.mi_diag
            )),
            Err(e) => csv.push_str(&format!(
                "{},{},failed,,,,,{}\n",
                cell.value,
                cell.seed,
                csv_quote(&e)
            )),
        }
    }
    let path = base.output_dir.join("sweep.csv");
    write(&path, &csv)?;
    let failed = failures.iter().filter(|f| f.is_some()).count();
    println!("{}", json!({ "sweep": path, "cells": cells.len(), "failed": failed }));
    Ok(())
}

fn csv_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}

struct LastRow {
    epoch: String,
    train_loss: String,
    mi_diag: String,
    test_acc: String,
}

fn last_metrics(path: &Path) -> std::result::Result<LastRow, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let row: Vec<&str> = lines.last().ok_or("no epochs recorded")?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .and_then(|i| row.get(i))
            .map(|s| s.to_string())
            .ok_or(format!("metrics column {name} missing"))
    };
    Ok(LastRow {
        epoch: col("epoch")?,
        train_loss: col("train_loss")?,
        mi_diag: col("mi_diag")?,
        test_acc: col("test_acc")?,
    })
}
