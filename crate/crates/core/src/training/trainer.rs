use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::log::{EpochRecord, LogRecord, StepRecord};
use super::optim::{clip_global_norm, AdamW};
use super::schedule::Scheduler;
use super::TrainConfig;
use crate::assignment::LossBreakdown;
use crate::autodiff::{round_f32, Graph, Mat};
use crate::datagen::{color_jitter, LoadedDataset, Split};
use crate::encoders::EncoderMode;
use crate::error::{Error, Result};
use crate::model::{LossWeights, Model, Sample};
use crate::puzzle::{aggregate_report, EvalReport};

// Independent random streams derived from the run seed.
const STREAM_SHUFFLE: u64 = 1;
const STREAM_PAIRS: u64 = 2;
const STREAM_JITTER: u64 = 3;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Encoder mode a dataset supports: precomputed when every record carries
/// feature files, toy when none does. Mixed datasets are rejected.
pub fn dataset_mode(data: &LoadedDataset) -> Result<EncoderMode> {
    let with = data.records.iter().filter(|r| r.features.is_some()).count();
    match with {
        0 => Ok(EncoderMode::Toy),
        n if n == data.records.len() => Ok(EncoderMode::Precomputed),
        n => Err(Error::Config(format!(
            "{n} of {} records carry precomputed features; a dataset must be all-or-none",
            data.records.len()
        ))),
    }
}

fn check_compatible(model: &Model, data: &LoadedDataset) -> Result<()> {
    let mode = dataset_mode(data)?;
    if mode != model.config.mode {
        return Err(Error::Config(format!(
            "the model uses {} encoders but the dataset provides {mode} inputs",
            model.config.mode
        )));
    }
    let (a, b) = (data.geometry(), model.geometry);
    if (a.rows, a.cols, a.piece_px) != (b.rows, b.cols, b.piece_px) {
        return Err(Error::Config(format!(
            "dataset geometry {a} does not match the model's {b}"
        )));
    }
    Ok(())
}

/// Prepares every record of `split`. With `jitter`, each instance gets its
/// own colour perturbation drawn from the given stream.
pub fn prepare_split(
    model: &Model,
    data: &LoadedDataset,
    split: Split,
    mut jitter: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Sample>> {
    data.split(split)
        .map(|rec| match jitter.as_deref_mut() {
            Some(rng) => {
                let mut inst = rec.instance.clone();
                color_jitter(&mut inst.pieces, rng);
                model.prepare(&inst, rec.features.as_ref())
            }
            None => model.prepare(&rec.instance, rec.features.as_ref()),
        })
        .collect()
}

/// Mean loss gradient over a batch, with the mean loss breakdown.
pub fn batch_gradients(
    model: &Model,
    batch: &[&Sample],
    weights: &LossWeights,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Option<Mat>>, LossBreakdown)> {
    let scale = 1.0 / batch.len() as f64;
    let mut acc: Vec<Option<Mat>> = vec![None; model.store.len()];
    let mut parts = Vec::with_capacity(batch.len());
    for sample in batch {
        let mut g = Graph::new(&model.store);
        let fwd = model.forward(&mut g, sample)?;
        let lv = model.loss(&mut g, sample, &fwd, weights, rng)?;
        parts.push(lv.breakdown(&g, weights));
        let grads = g.backward(lv.total).into_params();
        for (slot, gr) in acc.iter_mut().zip(grads) {
            if let Some(gr) = gr {
                match slot {
                    Some(a) => a.scaled_add(scale, &gr),
                    None => *slot = Some(gr * scale),
                }
            }
        }
    }
    Ok((acc, LossBreakdown::mean(&parts)))
}

/// One optimizer step. Parameters are kept at single precision so that
/// checkpoints hold them exactly.
pub fn train_step(
    model: &mut Model,
    optimizer: &mut AdamW,
    batch: &[&Sample],
    weights: &LossWeights,
    lr: f64,
    grad_clip: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let (mut grads, loss) = batch_gradients(model, batch, weights, rng)?;
    if !loss.total.is_finite() {
        return Err(Error::Numeric("non-finite loss".into()));
    }
    if let Some(c) = grad_clip {
        clip_global_norm(&mut grads, c);
    }
    optimizer.step(&mut model.store, &grads, lr);
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        model.store.get_mut(id).mapv_inplace(round_f32);
    }
    Ok(loss)
}

/// Decodes every sample and aggregates the metrics.
pub fn evaluate_samples(model: &Model, samples: &[Sample]) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(model.predict(s)?.1);
        truths.push(s.truth.clone());
    }
    aggregate_report(&preds, &truths, &model.geometry)
}

/// Evaluates a checkpoint on one split of a dataset.
pub fn evaluate(checkpoint: &Checkpoint, data: &LoadedDataset, split: Split) -> Result<EvalReport> {
    check_compatible(&checkpoint.model, data)?;
    let samples = prepare_split(&checkpoint.model, data, split, None)?;
    if samples.is_empty() {
        return Err(Error::arg(format!("split `{split}` is empty")));
    }
    evaluate_samples(&checkpoint.model, &samples)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation piece accuracy.
    pub best: Checkpoint,
    /// Validation report of the best epoch.
    pub best_report: EvalReport,
    pub log: Vec<LogRecord>,
}

/// Trains from scratch. Every log record is passed to `on_record` as it
/// is produced (and also collected in the outcome).
pub fn train(
    config: &TrainConfig,
    data: &LoadedDataset,
    mut on_record: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let geometry = data.geometry();
    let mut model = Model::new(&config.model, &geometry, config.seed)?;
    check_compatible(&model, data)?;

    let mut jitter_rng = stream(config.seed, STREAM_JITTER);
    let train_samples = prepare_split(
        &model,
        data,
        Split::Train,
        config.color_jitter.then_some(&mut jitter_rng),
    )?;
    let val_samples = prepare_split(&model, data, Split::Val, None)?;
    if train_samples.is_empty() || val_samples.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }

    let weights = config.weights();
    let mut optimizer = AdamW::new(&model.store, config.weight_decay);
    let mut scheduler = Scheduler::new(config.scheduler, config.lr);
    let mut shuffle_rng = stream(config.seed, STREAM_SHUFFLE);
    let mut pair_rng = stream(config.seed, STREAM_PAIRS);
    let mut log = Vec::new();
    let mut emit = |r: LogRecord, log: &mut Vec<LogRecord>| -> Result<()> {
        on_record(&r)?;
        log.push(r);
        Ok(())
    };

    let mut best: Option<(Checkpoint, EvalReport)> = None;
    let mut step: u64 = 0;
    let mut order: Vec<usize> = (0..train_samples.len()).collect();
    for epoch in 0..config.max_epochs {
        let lr = scheduler.lr();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut n_steps = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            let loss = train_step(
                &mut model,
                &mut optimizer,
                &batch,
                &weights,
                lr,
                config.grad_clip,
                &mut pair_rng,
            )
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("{m} at step {step}")),
                other => other,
            })?;
            step += 1;
            epoch_loss += loss.total;
            n_steps += 1;
            emit(LogRecord::Step(StepRecord::new(step, epoch, &loss, lr)), &mut log)?;
        }
        let report = evaluate_samples(&model, &val_samples)?;
        let improved = best.as_ref().is_none_or(|(b, _)| report.piece > b.best_val_piece);
        scheduler.step(report.piece);
        if improved {
            let ck = Checkpoint {
                config: config.clone(),
                geometry,
                epoch,
                best_val_piece: report.piece,
                step,
                scheduler: scheduler.clone(),
                model: model.clone(),
                optimizer: optimizer.clone(),
                hash_mismatch: false,
            };
            best = Some((ck, report));
        }
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: epoch_loss / n_steps as f64,
            val: report,
            best: improved,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, val piece {:.3}, perfect {:.3}",
            record.train_loss,
            report.piece,
            report.perfect
        );
        emit(LogRecord::Epoch(record), &mut log)?;
    }
    let (best, best_report) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        best,
        best_report,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{load_external, make_dataset, DatasetConfig, SplitSizes, MANIFEST_FILE};
    use crate::encoders::EncoderConfig;
    use crate::puzzle::GridGeometry;

    fn tiny_config() -> TrainConfig {
        let mut c = TrainConfig {
            batch_size: 4,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        c.model.encoder = EncoderConfig {
            d_v: 8,
            d_b: 8,
            d_t: 8,
            depth: 1,
            patch_px: 8,
            pool_px: 4,
            adapter_hidden: 8,
            max_tokens: 16,
        };
        c.model.align.n_heads = 2;
        c.model.align.encoder_layers = 1;
        c
    }

    fn tiny_data() -> (tempfile::TempDir, LoadedDataset) {
        let dir = tempfile::tempdir().unwrap();
        let geo = GridGeometry::new(3, 3, 8, 2, 1).unwrap();
        let cfg = DatasetConfig::new(geo, SplitSizes { train: 6, val: 3, test: 3 }, 9);
        make_dataset(&cfg, dir.path()).unwrap();
        let data = load_external(&dir.path().join(MANIFEST_FILE), None).unwrap();
        (dir, data)
    }

    #[test]
    fn training_is_deterministic() {
        let (_dir, data) = tiny_data();
        let a = train(&tiny_config(), &data, |_| Ok(())).unwrap();
        let b = train(&tiny_config(), &data, |_| Ok(())).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
        // 6 train samples in batches of 4 → 2 steps per epoch, plus one epoch record
        assert_eq!(a.log.len(), 2 * 3);
    }

    #[test]
    fn small_step_decreases_frozen_batch_loss() {
        let (_dir, data) = tiny_data();
        let cfg = tiny_config();
        let mut model = Model::new(&cfg.model, &data.geometry(), 1).unwrap();
        let samples = prepare_split(&model, &data, Split::Train, None).unwrap();
        let batch: Vec<&Sample> = samples.iter().collect();
        let weights = cfg.weights();
        let loss_of = |m: &Model| {
            let mut rng = stream(0, STREAM_PAIRS);
            batch_gradients(m, &batch, &weights, &mut rng).unwrap().1.total
        };
        let before = loss_of(&model);
        let mut opt = AdamW::new(&model.store, 0.0);
        let (grads, _) = batch_gradients(&model, &batch, &weights, &mut stream(0, STREAM_PAIRS)).unwrap();
        opt.step(&mut model.store, &grads, 1e-5);
        assert!(loss_of(&model) < before);
    }

    #[test]
    fn evaluation_report_is_consistent() {
        let (_dir, data) = tiny_data();
        let out = train(&tiny_config(), &data, |_| Ok(())).unwrap();
        let r = evaluate(&out.best, &data, Split::Val).unwrap();
        assert_eq!(r, out.best_report);
        assert!(r.perfect <= r.piece);
        let back = Checkpoint::from_bytes(&out.best.to_bytes()).unwrap();
        assert_eq!(evaluate(&back, &data, Split::Test).unwrap(), evaluate(&out.best, &data, Split::Test).unwrap());
    }

    #[test]
    fn precomputed_checkpoint_rejects_toy_data() {
        let (_dir, data) = tiny_data();
        let mut cfg = tiny_config();
        cfg.model.mode = EncoderMode::Precomputed;
        assert!(matches!(train(&cfg, &data, |_| Ok(())), Err(Error::Config(_))));
    }
}
