use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, Dataset, Modality, PkBatch, PkSampler};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult, Protocol, VisibleStyle};
use crate::losses::{total_loss, LossTerms};
use crate::model::{images_to_tensor, EmbeddingBatch, Model};
use crate::numerics::checkpoint;
use crate::numerics::Tape;
use crate::spectral::Image;
use crate::train::{Preset, Sgd, TrainConfig};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ITERATIONS_FILE: &str = "iterations.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const NONFINITE_DUMP: &str = "nonfinite_batch.json";

const FLIP_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Mean training losses and validation retrieval of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub l_id_specific: f64,
    pub l_paba: f64,
    pub l_cc: f64,
    pub l_id_chunks: f64,
    pub total: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch,lr,l_id_specific,l_paba,l_cc,l_id_chunks,total,rank1,rank5,rank10,map";

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.lr,
            self.l_id_specific,
            self.l_paba,
            self.l_cc,
            self.l_id_chunks,
            self.total,
            self.rank1,
            self.rank5,
            self.rank10,
            self.map
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 11 {
            return Err(Error::Config(format!("malformed metrics row {line:?}")));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| Error::Config(format!("bad number {:?} in metrics row", f[i])))
        };
        Ok(Self {
            epoch: num(0)? as usize,
            lr: num(1)?,
            l_id_specific: num(2)?,
            l_paba: num(3)?,
            l_cc: num(4)?,
            l_id_chunks: num(5)?,
            total: num(6)?,
            rank1: num(7)?,
            rank5: num(8)?,
            rank10: num(9)?,
            map: num(10)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: Preset,
    pub seed: u64,
    pub epochs: usize,
    pub iterations: usize,
    pub num_parameters: usize,
    pub train_identities: usize,
    pub test_identities: usize,
    /// 0-based epoch of `best.ckpt`.
    pub best_epoch: usize,
    pub best_rank1: f64,
    /// Final-epoch model.
    pub final_v2i: EvalResult,
    pub final_i2v: EvalResult,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub summary: RunSummary,
    pub history: Vec<EpochRecord>,
    pub model: Model<f32>,
}

/// Loads or generates the dataset described by `cfg` and splits it into
/// training and held-out identities.
pub fn build_datasets(cfg: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let full = match &cfg.dataset_root {
        Some(root) => {
            let (d, report) = Dataset::load(root)?;
            if !report.single_modality.is_empty() {
                warn!("{} identities excluded for missing a modality", report.single_modality.len());
            }
            d
        }
        None => generate_synthetic(&cfg.synthetic())?.0,
    };
    if let Some(img) = full.images.iter().find(|i| i.height() != cfg.image_height || i.width() != cfg.image_width) {
        return Err(Error::Dataset(format!(
            "image of {}x{} in a run configured for {}x{}",
            img.height(),
            img.width(),
            cfg.image_height,
            cfg.image_width
        )));
    }
    full.split_identities(cfg.train_identities)
}

/// Replaces every visible image by its presentation under `style`.
pub fn apply_style(data: &Dataset, style: &VisibleStyle) -> Result<Dataset> {
    let images = data
        .index
        .records
        .iter()
        .zip(&data.images)
        .map(|(r, img)| match r.modality {
            Modality::Visible => style.apply(img),
            Modality::Infrared => Ok(img.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(data.index.clone(), images)
}

/// Model with the weights of a checkpoint written by a run with `cfg`.
pub fn load_model(cfg: &TrainConfig, checkpoint_path: impl AsRef<Path>) -> Result<Model<f32>> {
    let mut model = Model::new(cfg.backbone(cfg.train_identities))?;
    checkpoint::load_into(model.params_mut(), checkpoint_path)?;
    Ok(model)
}

/// Evaluates a checkpoint on the held-out identities of `cfg`.
pub fn evaluate_checkpoint(cfg: &TrainConfig, checkpoint_path: impl AsRef<Path>, protocol: Protocol) -> Result<EvalResult> {
    let model = load_model(cfg, checkpoint_path)?;
    let (_, test) = build_datasets(cfg)?;
    evaluate(&model, &test, protocol, &cfg.visible_style())
}

#[derive(Serialize)]
struct BatchDump<'a> {
    epoch: usize,
    iteration: usize,
    lr: f64,
    records: Vec<&'a Path>,
    identities: &'a [usize],
    flipped: &'a [bool],
    l_id_specific: f64,
    l_aggregation: f64,
    l_id_chunks: f64,
}

struct Stepper<'a> {
    cfg: &'a TrainConfig,
    train: &'a Dataset,
    flip_rng: ChaCha8Rng,
}

struct StepResult {
    terms: LossTerms,
    total: f64,
}

impl Stepper<'_> {
    fn images(&mut self, positions: &[usize], flipped: &mut Vec<bool>) -> Vec<Image> {
        positions
            .iter()
            .map(|&i| {
                let flip = self.cfg.flip && self.flip_rng.random_bool(0.5);
                flipped.push(flip);
                if flip {
                    self.train.images[i].flip_horizontal()
                } else {
                    self.train.images[i].clone()
                }
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        model: &mut Model<f32>,
        sgd: &mut Sgd<f32>,
        batch: &PkBatch,
        lr: f64,
        epoch: usize,
        iteration: usize,
        out_dir: &Path,
    ) -> Result<StepResult> {
        let mut flipped = Vec::with_capacity(batch.len());
        let vis = self.images(&batch.visible, &mut flipped);
        let ir = self.images(&batch.infrared, &mut flipped);
        let vis_t = images_to_tensor::<f32>(&vis.iter().collect::<Vec<_>>())?;
        let ir_t = images_to_tensor::<f32>(&ir.iter().collect::<Vec<_>>())?;

        let mut tape = Tape::new();
        let fwd = model.forward(&mut tape, vis_t, ir_t)?;
        let identities = batch.row_identities(self.cfg.k);
        let modalities: Vec<Modality> = std::iter::repeat_n(Modality::Visible, batch.visible.len())
            .chain(std::iter::repeat_n(Modality::Infrared, batch.infrared.len()))
            .collect();
        let emb = EmbeddingBatch::new(&tape, fwd.chunks, Some(fwd.specific), identities, modalities)?;
        let terms = total_loss(
            &mut tape,
            &emb,
            fwd.specific_logits,
            &fwd.part_logits,
            &self.cfg.loss(),
            self.cfg.preset.aggregation(),
        )?;
        let total = f64::from(tape.value(terms.total).item());
        if !total.is_finite() {
            let path = out_dir.join(NONFINITE_DUMP);
            let records = batch
                .visible
                .iter()
                .chain(&batch.infrared)
                .map(|&i| self.train.index.records[i].path.as_path())
                .collect();
            let dump = BatchDump {
                epoch,
                iteration,
                lr,
                records,
                identities: &emb.identities,
                flipped: &flipped,
                l_id_specific: terms.id_specific,
                l_aggregation: terms.paba + terms.cross_centre,
                l_id_chunks: terms.id_parts,
            };
            std::fs::write(&path, serde_json::to_string_pretty(&dump)?)?;
            return Err(Error::NonFiniteLoss {
                epoch,
                iteration,
                dump: path,
            });
        }
        model.params_mut().zero_grads();
        tape.backward(terms.total, model.params_mut())?;
        sgd.step(model.params_mut(), lr);
        Ok(StepResult { terms, total })
    }
}

/// Trains one preset and writes the run artifacts into `out_dir`:
/// `config.toml`, `metrics.csv`, `iterations.csv`, `best.ckpt`,
/// `last.ckpt` and `summary.json`.
pub fn train(cfg: &TrainConfig, out_dir: impl AsRef<Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(CONFIG_FILE), cfg.to_toml_string()?)?;

    let style = cfg.visible_style();
    let (train_raw, test_raw) = build_datasets(cfg)?;
    let train = apply_style(&train_raw, &style)?;
    let test = apply_style(&test_raw, &style)?;
    let mut model = Model::<f32>::new(cfg.backbone(train.index.num_identities))?;
    let mut sgd = Sgd::new(model.params(), cfg.momentum, cfg.weight_decay);
    let mut sampler = PkSampler::new(&train.index, cfg.sampler())?;
    let mut stepper = Stepper {
        cfg,
        train: &train,
        flip_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ FLIP_STREAM),
    };
    info!(
        "{}: {} parameters, {} train / {} test identities, {} batches per epoch",
        cfg.preset,
        model.params().num_values(),
        train.index.num_identities,
        test.index.num_identities,
        sampler.batches_per_epoch()
    );

    let mut metrics = BufWriter::new(File::create(out_dir.join(METRICS_FILE))?);
    writeln!(metrics, "{}", EpochRecord::HEADER)?;
    let mut iterations = BufWriter::new(File::create(out_dir.join(ITERATIONS_FILE))?);
    writeln!(iterations, "iteration,epoch,l_id_specific,l_paba,l_cc,l_id_chunks,total")?;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64)> = None;
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let batches = sampler.next_epoch();
        let mut sums = [0.0f64; 5];
        for batch in &batches {
            let r = stepper.step(&mut model, &mut sgd, batch, lr, epoch, iteration, out_dir)?;
            let row = [r.terms.id_specific, r.terms.paba, r.terms.cross_centre, r.terms.id_parts, r.total];
            writeln!(
                iterations,
                "{iteration},{epoch},{},{},{},{},{}",
                row[0], row[1], row[2], row[3], row[4]
            )?;
            sums.iter_mut().zip(row).for_each(|(s, v)| *s += v);
            iteration += 1;
        }
        let n = batches.len().max(1) as f64;
        let eval = evaluate(&model, &test, Protocol::V2I, &VisibleStyle::Raw)?;
        let record = EpochRecord {
            epoch,
            lr,
            l_id_specific: sums[0] / n,
            l_paba: sums[1] / n,
            l_cc: sums[2] / n,
            l_id_chunks: sums[3] / n,
            total: sums[4] / n,
            rank1: eval.rank(1),
            rank5: eval.rank(5),
            rank10: eval.rank(10),
            map: eval.map,
        };
        info!(
            "{} epoch {epoch:>3} lr {lr:.5} loss {:.4} rank1 {:.4} mAP {:.4}",
            cfg.preset, record.total, record.rank1, record.map
        );
        writeln!(metrics, "{}", record.csv_row())?;
        if best.is_none_or(|(_, r)| record.rank1 > r) {
            best = Some((epoch, record.rank1));
            checkpoint::save(model.params(), out_dir.join(BEST_CHECKPOINT))?;
        }
        history.push(record);
    }
    metrics.flush()?;
    iterations.flush()?;
    checkpoint::save(model.params(), out_dir.join(LAST_CHECKPOINT))?;

    let final_v2i = evaluate(&model, &test, Protocol::V2I, &VisibleStyle::Raw)?;
    let final_i2v = evaluate(&model, &test, Protocol::I2V, &VisibleStyle::Raw)?;
    let (best_epoch, best_rank1) = best.expect("at least one epoch");
    let summary = RunSummary {
        preset: cfg.preset,
        seed: cfg.seed,
        epochs: cfg.epochs,
        iterations: iteration,
        num_parameters: model.params().num_values(),
        train_identities: train.index.num_identities,
        test_identities: test.index.num_identities,
        best_epoch,
        best_rank1,
        final_v2i,
        final_i2v,
    };
    std::fs::write(out_dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(TrainOutcome { summary, history, model })
}

/// Reads `config.toml` from a run directory.
pub fn load_run_config(run_dir: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = run_dir.as_ref().join(CONFIG_FILE);
    if !path.is_file() {
        return Err(Error::MissingArtifact(path));
    }
    TrainConfig::load(path)
}

/// Run directory that holds `checkpoint`, if it looks like one.
pub fn run_dir_of(checkpoint: &Path) -> Option<PathBuf> {
    let dir = checkpoint.parent()?;
    dir.join(CONFIG_FILE).is_file().then(|| dir.to_path_buf())
}
