//! A complete training run on disk: data loading, the epoch loop, metrics
//! files and checkpoints.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::{
    load_cifar_binary, load_idx, Dataset, Normalization, RawImages, TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES,
    TRAIN_LABELS,
};
use crate::error::{Error, Result};
use crate::tensor::FpTensor;
use crate::train::checkpoint::Checkpoint;
use crate::train::config::{CmimConfig, DataConfig, DataFormat};
use crate::train::trainer::{EpochMetrics, Trainer};

pub const RESOLVED_CONFIG: &str = "resolved-config.json";
pub const METRICS: &str = "metrics.csv";
pub const TIMING: &str = "timing.csv";
pub const LAST_CHECKPOINT: &str = "last.bnnc";
pub const FINAL_CHECKPOINT: &str = "final.bnnc";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

pub fn load_raw(cfg: &DataConfig, split: Split) -> Result<RawImages> {
    let raw = match cfg.format {
        DataFormat::Idx => {
            let (images, labels) = match split {
                Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
                Split::Test => (TEST_IMAGES, TEST_LABELS),
            };
            load_idx(&cfg.dir.join(images), &cfg.dir.join(labels))?
        }
        DataFormat::Cifar => {
            let paths: Vec<PathBuf> = match split {
                Split::Train => (1..=5)
                    .map(|i| cfg.dir.join(format!("data_batch_{i}.bin")))
                    .filter(|p| p.exists())
                    .collect(),
                Split::Test => vec![cfg.dir.join("test_batch.bin")],
            };
            load_cifar_binary(&paths)?
        }
    };
    let per_class = match split {
        Split::Train => cfg.train_per_class,
        Split::Test => cfg.test_per_class,
    };
    Ok(match per_class {
        Some(n) => raw.subset_per_class(n),
        None => raw,
    })
}

/// Train set normalized with its own statistics and the test set normalized
/// with the same ones.
pub fn load_datasets(cfg: &DataConfig) -> Result<(Dataset, Dataset)> {
    let train = Dataset::new(load_raw(cfg, Split::Train)?, None)?;
    let test = Dataset::new(load_raw(cfg, Split::Test)?, Some(train.norm.clone()))?;
    Ok((train, test))
}

pub fn load_test_set(cfg: &DataConfig, norm: &Normalization) -> Result<Dataset> {
    Dataset::new(load_raw(cfg, Split::Test)?, Some(norm.clone()))
}

/// The first `n` test samples, used for the per-epoch MI diagnostic.
pub fn diagnostic_batch(test: &Dataset, n: usize) -> Result<FpTensor<f32>> {
    let idx: Vec<usize> = (0..n.min(test.len())).collect();
    Ok(test.gather::<rand_chacha::ChaCha8Rng>(&idx, None)?.0)
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub resume: Option<PathBuf>,
    /// Stop once this many epochs are complete, leaving `last.bnnc` to resume.
    pub stop_after: Option<usize>,
    /// Accept a resume checkpoint whose config hash differs.
    pub force: bool,
    /// One progress line per epoch on stderr.
    pub progress: bool,
}

pub struct RunSummary {
    pub dir: PathBuf,
    pub history: Vec<EpochMetrics>,
    pub finished: bool,
    pub trainer: Trainer,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn append_timing(path: &Path, m: &EpochMetrics) -> Result<()> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str("epoch,seconds\n");
    }
    line.push_str(&format!("{},{:.3}\n", m.epoch, m.seconds));
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn run(config: &CmimConfig, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&dir.join(RESOLVED_CONFIG), config.to_json().as_bytes())?;

    let (train, test) = load_datasets(&config.data)?;
    let diag = diagnostic_batch(&test, config.diag_samples)?;
    let timing = dir.join(TIMING);
    let mut trainer = match &opts.resume {
        Some(path) => Trainer::from_checkpoint(&Checkpoint::load(path)?, config, &train, opts.force)?,
        None => {
            if timing.exists() {
                fs::remove_file(&timing).map_err(|e| Error::io(&timing, e))?;
            }
            Trainer::new(config, &train)?
        }
    };
    let stop = opts.stop_after.unwrap_or(config.epochs).min(config.epochs);
    while trainer.epoch < stop {
        let m = trainer.run_epoch(&train, &test, &diag)?;
        write_atomic(&dir.join(METRICS), trainer.metrics_csv().as_bytes())?;
        append_timing(&timing, &m)?;
        if opts.progress {
            eprintln!(
                "epoch {:>3}/{}  loss {:.4}  train {:.4}  test {:.4}  mi {:.4}  {:.1}s",
                m.epoch, config.epochs, m.train_loss, m.train_acc, m.test_acc, m.mi_diag, m.seconds
            );
        }
        let periodic = config.checkpoint_every > 0 && m.epoch % config.checkpoint_every == 0;
        if periodic || trainer.epoch == stop {
            let ckpt = trainer.to_checkpoint();
            if periodic {
                ckpt.save(&dir.join(format!("epoch_{:03}.bnnc", m.epoch)))?;
            }
            ckpt.save(&dir.join(LAST_CHECKPOINT))?;
        }
    }
    let finished = trainer.is_done();
    if finished {
        trainer.to_checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
        write_atomic(&dir.join(METRICS), trainer.metrics_csv().as_bytes())?;
    }
    Ok(RunSummary {
        dir,
        history: trainer.history.clone(),
        finished,
        trainer,
    })
}
