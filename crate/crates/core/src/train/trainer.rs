use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[cfg(feature = "cmim")]
use crate::cmim::{Cmim, CmimParams, ColdSlotPolicy, CriticParams, MemoryBank};
use crate::data::{batches, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::loss::{argmax_rows, softmax_cross_entropy};
use crate::mi::binarized_activation_mi;
use crate::net::{ActivationGrads, Mode, Network};
use crate::tensor::FpTensor;
use crate::train::checkpoint::{Checkpoint, Payload};
use crate::train::config::CmimConfig;
use crate::train::optim::{cosine_lr, sgd_step, OptimizerState};

const STREAM_MAIN: u64 = 0;
const STREAM_NEGATIVES: u64 = 1;
const STREAM_INIT: u64 = 2;
const EVAL_BATCH: usize = 256;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

/// One row of `metrics.csv`; `seconds` goes to `timing.csv` instead.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub cls_loss: f64,
    pub cmim_loss: f64,
    /// Mean NCE per tapped layer.
    pub nce: Vec<f64>,
    pub mi_diag: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    const FIXED: usize = 8;

    pub fn csv_header(taps: &[usize]) -> String {
        let mut cols = vec!["epoch", "lr", "train_loss", "cls_loss", "cmim_loss"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend(taps.iter().map(|k| format!("nce_{k}")));
        cols.extend(["mi_diag", "train_acc", "test_acc"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.epoch.to_string(),
            self.lr.to_string(),
            self.train_loss.to_string(),
            self.cls_loss.to_string(),
            self.cmim_loss.to_string(),
        ];
        cols.extend(self.nce.iter().map(f64::to_string));
        cols.extend([self.mi_diag, self.train_acc, self.test_acc].map(|v| v.to_string()));
        cols.join(",")
    }

    fn to_values(&self) -> Vec<f64> {
        let mut v = vec![self.epoch as f64, self.lr, self.train_loss, self.cls_loss, self.cmim_loss];
        v.extend(&self.nce);
        v.extend([self.mi_diag, self.train_acc, self.test_acc]);
        v
    }

    fn from_values(v: &[f64]) -> Self {
        let n = v.len() - Self::FIXED;
        EpochMetrics {
            epoch: v[0] as usize,
            lr: v[1],
            train_loss: v[2],
            cls_loss: v[3],
            cmim_loss: v[4],
            nce: v[5..5 + n].to_vec(),
            mi_diag: v[5 + n],
            train_acc: v[6 + n],
            test_acc: v[7 + n],
            seconds: 0.0,
        }
    }
}

pub fn metrics_csv(taps: &[usize], history: &[EpochMetrics]) -> String {
    let mut out = EpochMetrics::csv_header(taps);
    out.push('\n');
    for m in history {
        out.push_str(&m.csv_row());
        out.push('\n');
    }
    out
}

/// Training-set statistics of one epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStats {
    pub lr: f64,
    pub train_loss: f64,
    pub cls_loss: f64,
    pub cmim_loss: f64,
    pub nce: Vec<f64>,
    pub train_acc: f64,
}

/// Top-1 accuracy and mean cross-entropy in eval mode.
pub fn evaluate(net: &Network<f32>, ds: &Dataset) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::data("", "empty evaluation set"));
    }
    let (mut correct, mut loss) = (0usize, 0.0f64);
    for idx in batches::<ChaCha8Rng>(ds.len(), EVAL_BATCH, None, false) {
        let (x, labels) = ds.gather::<ChaCha8Rng>(&idx, None)?;
        let (logits, _) = net.forward_eval(&x)?;
        let (l, _) = softmax_cross_entropy(&logits, &labels)?;
        loss += l * idx.len() as f64;
        correct += argmax_rows(&logits)?.iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok((correct as f64 / ds.len() as f64, loss / ds.len() as f64))
}

/// Mean binarized-activation MI over the tapped layers, in eval mode.
pub fn mi_diagnostic(net: &Network<f32>, x: &FpTensor<f32>, bins: usize) -> Result<f64> {
    if net.tap_layers().is_empty() {
        return Ok(0.0);
    }
    let (_, cache) = net.forward_eval(x)?;
    let mut total = 0.0;
    for &k in net.tap_layers() {
        total += binarized_activation_mi(&cache.layer(k).expect("tap within depth").a_fp, bins)?;
    }
    Ok(total / net.tap_layers().len() as f64)
}

fn in_batch(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric { context, detail } => Error::Numeric {
            context: format!("epoch {epoch}, batch {batch}: {context}"),
            detail,
        },
        other => other,
    }
}

pub struct Trainer {
    config: CmimConfig,
    pub net: Network<f32>,
    pub opt: OptimizerState<f32>,
    #[cfg(feature = "cmim")]
    pub cmim: Option<Cmim<f32>>,
    rng: ChaCha8Rng,
    neg_rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    train_len: usize,
    norm: Normalization,
}

impl Trainer {
    pub fn new(config: &CmimConfig, train: &Dataset) -> Result<Self> {
        config.validate()?;
        check_compatible(config, train)?;
        let net = Network::new(&config.arch, &mut stream(config.seed, STREAM_INIT))?;
        let opt = OptimizerState::new(&net, config.lr0, config.momentum, config.weight_decay);
        #[cfg(feature = "cmim")]
        let cmim = if config.lambda > 0.0 {
            let params = CmimParams {
                lambda: config.lambda,
                beta: config.beta,
                critic: CriticParams::new(config.tau, config.n_nce, config.m_pairs.unwrap_or(train.len()))?,
                cold_slots: ColdSlotPolicy::SkipAnchor,
                tau_per_dim: true,
                normalize: config.normalize_critic,
            };
            Some(Cmim::new(&net, train.len(), params)?)
        } else {
            None
        };
        #[cfg(not(feature = "cmim"))]
        if config.lambda > 0.0 {
            return Err(Error::Config("this build has no CMIM support; set lambda = 0".into()));
        }
        Ok(Trainer {
            config: config.clone(),
            net,
            opt,
            #[cfg(feature = "cmim")]
            cmim,
            rng: stream(config.seed, STREAM_MAIN),
            neg_rng: stream(config.seed, STREAM_NEGATIVES),
            epoch: 0,
            history: Vec::new(),
            train_len: train.len(),
            norm: train.norm.clone(),
        })
    }

    pub fn config(&self) -> &CmimConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.config.epochs
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(self.net.tap_layers(), &self.history)
    }

    pub fn train_epoch(&mut self, train: &Dataset) -> Result<TrainStats> {
        if train.len() != self.train_len {
            return Err(Error::Config(format!(
                "training set has {} samples, trainer was built for {}",
                train.len(),
                self.train_len
            )));
        }
        let cfg = &self.config;
        let lr = cosine_lr(self.epoch, cfg.epochs, cfg.lr0)?;
        let plan = batches(train.len(), cfg.batch_size, Some(&mut self.rng), true);
        if plan.is_empty() {
            return Err(Error::data("", format!("{} training samples make no batch of {}", train.len(), cfg.batch_size)));
        }
        let taps = self.net.tap_layers().to_vec();
        let depth = self.net.depth();
        let (mut total, mut cls_sum) = (0.0f64, 0.0f64);
        #[cfg_attr(not(feature = "cmim"), allow(unused_mut))]
        let mut cmim_sum = 0.0f64;
        #[cfg_attr(not(feature = "cmim"), allow(unused_mut))]
        let mut nce_sum = vec![0.0f64; taps.len()];
        let (mut correct, mut seen) = (0usize, 0usize);
        let epoch = self.epoch + 1;
        for (b, idx) in plan.iter().enumerate() {
            let augment_rng = cfg.data.augment.then_some(&mut self.rng);
            let (x, labels) = train.gather(idx, augment_rng)?;
            let (logits, cache) = self.net.forward(&x, Mode::Train).map_err(|e| in_batch(e, epoch, b))?;
            let (cls, g) = softmax_cross_entropy(&logits, &labels).map_err(|e| in_batch(e, epoch, b))?;
            correct += argmax_rows(&logits)?.iter().zip(&labels).filter(|(p, l)| p == l).count();
            seen += labels.len();
            #[allow(unused_mut)]
            let mut act = ActivationGrads::none(depth);
            #[allow(unused_mut)]
            let mut batch_total = cls;
            #[cfg(feature = "cmim")]
            let mut emb = None;
            #[cfg(feature = "cmim")]
            if let Some(cmim) = self.cmim.as_mut() {
                let e = cmim.embed(&self.net, &cache)?;
                let (report, grads) = cmim
                    .losses(&self.net, &cache, &e, idx, cls, &mut self.neg_rng)
                    .map_err(|e| in_batch(e, epoch, b))?;
                for (slot, &(_, l, _)) in nce_sum.iter_mut().zip(&report.nce) {
                    *slot += l;
                }
                cmim_sum += report.lambda * report.weighted_nce;
                batch_total = report.total;
                act = grads;
                emb = Some(e);
            }
            let grads = self.net.backward(&cache, &g, &act).map_err(|e| in_batch(e, epoch, b))?;
            sgd_step(&mut self.net, &grads, &mut self.opt, lr).map_err(|e| in_batch(e, epoch, b))?;
            #[cfg(feature = "cmim")]
            if let (Some(cmim), Some(e)) = (self.cmim.as_mut(), emb) {
                cmim.commit(idx, &e)?;
            }
            total += batch_total;
            cls_sum += cls;
        }
        let n = plan.len() as f64;
        Ok(TrainStats {
            lr,
            train_loss: total / n,
            cls_loss: cls_sum / n,
            cmim_loss: cmim_sum / n,
            nce: nce_sum.into_iter().map(|v| v / n).collect(),
            train_acc: correct as f64 / seen as f64,
        })
    }

    /// Trains one epoch, evaluates, and appends the metrics row.
    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset, diag: &FpTensor<f32>) -> Result<EpochMetrics> {
        let start = Instant::now();
        let stats = self.train_epoch(train)?;
        self.epoch += 1;
        let (test_acc, _) = evaluate(&self.net, test)?;
        let mi_diag = mi_diagnostic(&self.net, diag, self.config.mi_bins)?;
        let m = EpochMetrics {
            epoch: self.epoch,
            lr: stats.lr,
            train_loss: stats.train_loss,
            cls_loss: stats.cls_loss,
            cmim_loss: stats.cmim_loss,
            nce: stats.nce,
            mi_diag,
            train_acc: stats.train_acc,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.history.push(m.clone());
        Ok(m)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::default();
        let cfg = serde_json::to_vec(&self.config).expect("config serializes");
        c.push("meta.config", &[cfg.len()], Payload::U8(cfg));
        let hash = self.config.hash().into_bytes();
        c.push("meta.config_hash", &[hash.len()], Payload::U8(hash));
        c.push("meta.progress", &[3], Payload::U64(vec![self.epoch as u64, self.opt.step, self.train_len as u64]));
        c.push("data.norm.mean", &[self.norm.mean.len()], Payload::F32(self.norm.mean.clone()));
        c.push("data.norm.std", &[self.norm.std.len()], Payload::F32(self.norm.std.clone()));
        for (name, _, t) in self.net.params() {
            c.push(format!("param.{name}"), t.shape(), Payload::F32(t.data().to_vec()));
        }
        for (name, t) in self.net.buffers() {
            c.push(format!("buffer.{name}"), t.shape(), Payload::F32(t.data().to_vec()));
        }
        for ((name, _, _), v) in self.net.params().into_iter().zip(&self.opt.velocity) {
            c.push(format!("velocity.{name}"), v.shape(), Payload::F32(v.data().to_vec()));
        }
        for (name, rng) in [("rng.main", &self.rng), ("rng.negatives", &self.neg_rng)] {
            let state = rng_state(rng);
            c.push(name, &[state.len()], Payload::U8(state));
        }
        #[cfg(feature = "cmim")]
        if let Some(cmim) = &self.cmim {
            for (&k, bank) in cmim.taps().iter().zip(cmim.banks()) {
                c.push(format!("bank.layer{k}.data"), &[bank.slots(), bank.dim()], Payload::F32(bank.data().to_vec()));
                let init = bank.initialized().iter().map(|&f| f as u8).collect::<Vec<_>>();
                c.push(format!("bank.layer{k}.init"), &[init.len()], Payload::U8(init));
            }
            // NaN marks a layer whose normalizer is not fixed yet.
            let norms: Vec<f64> = cmim.log_norms().iter().map(|v| v.unwrap_or(f64::NAN)).collect();
            c.push("cmim.log_norm", &[norms.len()], Payload::F64(norms));
        }
        let width = self.history.first().map_or(0, |m| m.to_values().len());
        let values: Vec<f64> = self.history.iter().flat_map(EpochMetrics::to_values).collect();
        c.push("metrics.history", &[self.history.len(), width], Payload::F64(values));
        c
    }

    /// Restores a trainer. The checkpoint's config hash must match `config`
    /// unless `force` is set.
    pub fn from_checkpoint(ckpt: &Checkpoint, config: &CmimConfig, train: &Dataset, force: bool) -> Result<Self> {
        let stored = std::str::from_utf8(ckpt.bytes("meta.config_hash")?).unwrap_or_default().to_string();
        let expected = config.hash();
        if stored != expected && !force {
            return Err(Error::ConfigHashMismatch { expected, found: stored });
        }
        let mut t = Trainer::new(config, train)?;
        let progress = ckpt.u64s("meta.progress")?;
        if progress.len() != 3 || progress[2] as usize != train.len() {
            return Err(ckpt_error("training-set size differs from the checkpoint"));
        }
        t.epoch = progress[0] as usize;
        t.opt.step = progress[1];
        t.norm = checkpoint_norm(ckpt)?;
        restore_network(ckpt, &mut t.net)?;
        let names: Vec<String> = t.net.params().into_iter().map(|(n, _, _)| n).collect();
        for (name, v) in names.iter().zip(t.opt.velocity.iter_mut()) {
            *v = tensor(ckpt, &format!("velocity.{name}"), v.shape())?;
        }
        t.rng = restore_rng(ckpt.bytes("rng.main")?)?;
        t.neg_rng = restore_rng(ckpt.bytes("rng.negatives")?)?;
        #[cfg(feature = "cmim")]
        if let Some(cmim) = t.cmim.as_mut() {
            let taps = cmim.taps().to_vec();
            for (k, bank) in taps.into_iter().zip(cmim.banks_mut()) {
                let (_, data) = ckpt.f32s(&format!("bank.layer{k}.data"))?;
                let init = ckpt.bytes(&format!("bank.layer{k}.init"))?;
                *bank = MemoryBank::from_parts(bank.dim(), data.to_vec(), init.iter().map(|&b| b != 0).collect())?;
            }
            match ckpt.get("cmim.log_norm").map(|r| &r.payload) {
                Some(Payload::F64(v)) => {
                    let norms: Vec<Option<f64>> = v.iter().map(|&x| (!x.is_nan()).then_some(x)).collect();
                    cmim.set_log_norms(&norms).map_err(|e| ckpt_error(e.to_string()))?;
                }
                _ => return Err(ckpt_error("missing critic normalizers")),
            }
        }
        let rec = ckpt.get("metrics.history").ok_or_else(|| ckpt_error("missing metrics history"))?;
        if let Payload::F64(values) = &rec.payload {
            let width = rec.shape.get(1).copied().unwrap_or(0) as usize;
            if width > 0 {
                t.history = values.chunks(width).map(EpochMetrics::from_values).collect();
            }
        }
        Ok(t)
    }
}

fn check_compatible(config: &CmimConfig, train: &Dataset) -> Result<()> {
    if config.arch.input != train.shape {
        return Err(Error::Config(format!(
            "architecture expects input {:?}, data has {:?}",
            config.arch.input, train.shape
        )));
    }
    if config.arch.n_outputs() != train.n_classes {
        return Err(Error::Config(format!(
            "architecture has {} outputs for {} classes",
            config.arch.n_outputs(),
            train.n_classes
        )));
    }
    Ok(())
}

fn ckpt_error(detail: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: Default::default(),
        detail: detail.into(),
    }
}

fn tensor(ckpt: &Checkpoint, name: &str, shape: &[usize]) -> Result<FpTensor<f32>> {
    let (s, data) = ckpt.f32s(name)?;
    if s.iter().map(|&d| d as usize).ne(shape.iter().copied()) {
        return Err(ckpt_error(format!("{name}: shape {s:?}, network expects {shape:?}")));
    }
    FpTensor::new(shape.to_vec(), data.to_vec())
}

pub fn checkpoint_norm(ckpt: &Checkpoint) -> Result<Normalization> {
    Ok(Normalization {
        mean: ckpt.f32s("data.norm.mean")?.1.to_vec(),
        std: ckpt.f32s("data.norm.std")?.1.to_vec(),
    })
}

pub fn checkpoint_config(ckpt: &Checkpoint) -> Result<CmimConfig> {
    let text = std::str::from_utf8(ckpt.bytes("meta.config")?).map_err(|_| ckpt_error("config is not UTF-8"))?;
    CmimConfig::from_json(text)
}

fn restore_network(ckpt: &Checkpoint, net: &mut Network<f32>) -> Result<()> {
    net.update_params(|ps| -> Result<()> {
        for (name, _, p) in ps {
            *p = tensor(ckpt, &format!("param.{name}"), p.shape())?;
        }
        Ok(())
    })?;
    net.update_buffers(|bs| -> Result<()> {
        for (name, b) in bs {
            *b = tensor(ckpt, &format!("buffer.{name}"), b.shape())?;
        }
        Ok(())
    })
}

/// Network, its config and the training normalization stored in a checkpoint.
pub fn load_network(ckpt: &Checkpoint) -> Result<(CmimConfig, Network<f32>, Normalization)> {
    let config = checkpoint_config(ckpt)?;
    let mut net = Network::new(&config.arch, &mut stream(config.seed, STREAM_INIT))?;
    restore_network(ckpt, &mut net)?;
    Ok((config, net, checkpoint_norm(ckpt)?))
}

/// Network exactly as [`Trainer::new`] initializes it.
pub fn initial_network(config: &CmimConfig) -> Result<Network<f32>> {
    Network::new(&config.arch, &mut stream(config.seed, STREAM_INIT))
}

fn rng_state(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = rng.get_seed().to_vec();
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out
}

fn restore_rng(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != 32 + 8 + 16 {
        return Err(ckpt_error(format!("RNG state of {} bytes", bytes.len())));
    }
    let mut rng = ChaCha8Rng::from_seed(bytes[..32].try_into().expect("32 bytes"));
    rng.set_stream(u64::from_le_bytes(bytes[32..40].try_into().expect("8 bytes")));
    rng.set_word_pos(u128::from_le_bytes(bytes[40..56].try_into().expect("16 bytes")));
    Ok(rng)
}
