use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::loss::{evaluate_total, mean_square, LossConfig};
use crate::metrics::{report, MetricReport, TemporalFilter};
use crate::nn::Network;
use crate::nn::{Adam, AdamState};
use crate::procgen::{FramePair, SequenceSet};
use crate::seed::{rng_for, streams};
use crate::tensor::{ImageTensor, Mask};

use super::config::Schedule;

/// Seeds the shuffle and perturbation streams of one training stage.
/// Stages that share a seed but differ in `phase` draw independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSeed {
    pub seed: u64,
    pub phase: u64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Mean objective of each epoch, in order.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Mean wall time of one optimizer step in milliseconds; 0 when no step ran.
    pub step_ms: f64,
}

/// Minibatch Adam on `loss` over `data`. The data order is reshuffled every
/// epoch from the shuffle stream; perturbations come from a separate stream,
/// so the batches seen do not depend on the regularizer.
pub fn train(
    net: &mut Network,
    data: &[FramePair],
    loss: &LossConfig,
    schedule: &Schedule,
    seed: StageSeed,
) -> Result<TrainOutcome> {
    loss.validate()?;
    if data.is_empty() {
        return Err(crate::error::config_err("empty training set"));
    }
    let adam = Adam::new(schedule.learning_rate);
    let mut state = AdamState::for_network(net);
    let mut shuffle = rng_for(seed.seed, streams::SHUFFLE, seed.phase);
    let mut perturb = rng_for(seed.seed, streams::PERTURB, seed.phase);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(schedule.epochs);
    let (mut steps, mut elapsed) = (0usize, 0.0f64);
    for epoch in 0..schedule.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        for chunk in order.chunks(schedule.batch_size) {
            let batch: Vec<(ImageTensor, ImageTensor)> = chunk
                .iter()
                .map(|&k| (data[k].x.clone(), data[k].y.clone()))
                .collect();
            let start = Instant::now();
            let out = evaluate_total(net, &batch, loss, &mut perturb).map_err(|e| match e {
                Error::NonFinite(m) => {
                    Error::NonFinite(format!("{m} in epoch {epoch}, step {steps}"))
                }
                e => e,
            })?;
            adam.apply_update(net, &out.gradients, &mut state)?;
            elapsed += start.elapsed().as_secs_f64();
            steps += 1;
            sum += out.total * chunk.len() as f64;
        }
        epoch_losses.push(sum / data.len() as f64);
    }
    if !net.params().iter().all(|p| p.is_finite()) {
        return Err(Error::NonFinite("network parameters after training".into()));
    }
    Ok(TrainOutcome {
        epoch_losses,
        steps,
        step_ms: if steps == 0 {
            0.0
        } else {
            1e3 * elapsed / steps as f64
        },
    })
}

/// Mean reconstruction error of `net` over `data`.
pub fn dataset_mse(net: &Network, data: &[FramePair]) -> Result<f64> {
    let mut sum = 0.0;
    for p in data {
        sum += mean_square(&net.forward(&p.x, None)?, &p.y)?;
    }
    Ok(sum / data.len() as f64)
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub network: Network,
    pub initial_mse: f64,
    pub final_mse: f64,
    pub train: TrainOutcome,
}

/// Fresh initialization from `seed` followed by reconstruction-only training.
pub fn pretrain(
    cfg: &crate::nn::NetworkConfig,
    data: &[FramePair],
    schedule: &Schedule,
    seed: u64,
) -> Result<PretrainOutcome> {
    let mut net = Network::init(cfg, &mut rng_for(seed, streams::INIT, 0))?;
    let initial_mse = dataset_mse(&net, data)?;
    let train = train(
        &mut net,
        data,
        &LossConfig::rec_only(),
        schedule,
        StageSeed { seed, phase: 0 },
    )?;
    let final_mse = if schedule.epochs == 0 {
        initial_mse
    } else {
        dataset_mse(&net, data)?
    };
    if !final_mse.is_finite() {
        return Err(Error::NonFinite("pretraining error".into()));
    }
    Ok(PretrainOutcome {
        network: net,
        initial_mse,
        final_mse,
        train,
    })
}

/// Continues training a copy of `base` under `loss`.
pub fn finetune(
    base: &Network,
    data: &[FramePair],
    loss: &LossConfig,
    schedule: &Schedule,
    seed: u64,
) -> Result<(Network, TrainOutcome)> {
    let mut net = base.clone();
    let out = train(&mut net, data, loss, schedule, StageSeed { seed, phase: 1 })?;
    Ok((net, out))
}

/// Runs `net` on every frame of every sequence.
pub fn predict(net: &Network, set: &SequenceSet) -> Result<Vec<Vec<ImageTensor>>> {
    set.sequences
        .iter()
        .map(|seq| seq.iter().map(|p| net.forward(&p.x, None)).collect())
        .collect()
}

/// Ground truth and saturation masks of every frame of `set`.
pub fn references(set: &SequenceSet) -> (Vec<Vec<ImageTensor>>, Vec<Vec<Mask>>) {
    let refs = set
        .sequences
        .iter()
        .map(|s| s.iter().map(|p| p.y.clone()).collect())
        .collect();
    let masks = set
        .sequences
        .iter()
        .map(|s| s.iter().map(|p| p.mask.clone()).collect())
        .collect();
    (refs, masks)
}

/// PSNR (peak `y_max`) and smoothness of `net` inside the saturated regions.
pub fn evaluate(net: &Network, set: &SequenceSet, y_max: f64) -> Result<MetricReport> {
    evaluate_predictions(set, &predict(net, set)?, y_max)
}

/// Like [`evaluate`] for reconstructions produced elsewhere, one per frame.
pub fn evaluate_predictions(
    set: &SequenceSet,
    recs: &[Vec<ImageTensor>],
    y_max: f64,
) -> Result<MetricReport> {
    let filt = TemporalFilter::new(TemporalFilter::DEFAULT_SIGMA_SECONDS, set.frame_rate)?;
    let (refs, masks) = references(set);
    report(&refs, recs, Some(&masks), y_max, &filt)
}

/// Wall time in milliseconds of `steps` optimizer steps for each objective.
/// Steps of the different objectives are interleaved, each on its own copy
/// of `net` and on the same batches, so that load fluctuations on the host
/// affect all of them alike. Returns one series per objective.
pub fn interleaved_step_times(
    net: &Network,
    data: &[FramePair],
    losses: &[LossConfig],
    schedule: &Schedule,
    steps: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    for l in losses {
        l.validate()?;
    }
    if data.is_empty() {
        return Err(crate::error::config_err("empty training set"));
    }
    let adam = Adam::new(schedule.learning_rate);
    let mut nets: Vec<Network> = losses.iter().map(|_| net.clone()).collect();
    let mut states: Vec<AdamState> = nets.iter().map(AdamState::for_network).collect();
    let mut rngs: Vec<_> = (0..losses.len() as u64)
        .map(|k| rng_for(seed, streams::PERTURB, 100 + k))
        .collect();
    let mut shuffle = rng_for(seed, streams::SHUFFLE, 100);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut times = vec![Vec::with_capacity(steps); losses.len()];
    let mut cursor = order.len();
    for _ in 0..steps {
        if cursor + schedule.batch_size > order.len() {
            order.shuffle(&mut shuffle);
            cursor = 0;
        }
        let end = (cursor + schedule.batch_size).min(order.len());
        let batch: Vec<(ImageTensor, ImageTensor)> = order[cursor..end]
            .iter()
            .map(|&k| (data[k].x.clone(), data[k].y.clone()))
            .collect();
        cursor = end;
        for (k, loss) in losses.iter().enumerate() {
            let start = Instant::now();
            let out = evaluate_total(&nets[k], &batch, loss, &mut rngs[k])?;
            adam.apply_update(&mut nets[k], &out.gradients, &mut states[k])?;
            times[k].push(1e3 * start.elapsed().as_secs_f64());
        }
    }
    Ok(times)
}
