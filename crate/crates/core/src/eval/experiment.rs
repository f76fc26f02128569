//! End-to-end training of the learned codec on a set of latents.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codecs::LearnedModel;
use crate::error::{mismatch, Error, Result};
use crate::histogram::latent_histograms;
use crate::nn::{DistNet, StepLog, TrainConfig, TrainExample, TrainSummary, Trainer, TransformConfig};
use crate::support::LatentTensor;

pub fn examples(latents: &[LatentTensor]) -> Result<Vec<TrainExample>> {
    latents
        .iter()
        .map(|l| Ok(TrainExample::from_bank(&latent_histograms(l)?, l.pixels_per_channel())))
        .collect()
}

/// Trains a learned codec from scratch. Initialization and batch order are
/// seeded from `train.seed`.
pub fn train_learned(
    config: TransformConfig,
    train: &TrainConfig,
    train_set: &[LatentTensor],
    validation: &[LatentTensor],
    log: impl FnMut(&StepLog),
) -> Result<(LearnedModel, TrainSummary)> {
    let first = train_set.first().ok_or_else(|| Error::InvalidArgument("empty training set".into()))?;
    let spec = first.spec();
    if train_set.iter().chain(validation).any(|l| l.spec() != spec || l.channels() != config.channels) {
        return Err(mismatch("training latents must share the model's spec and channel count"));
    }
    let val = if validation.is_empty() { train_set } else { validation };
    let train_ex = examples(train_set)?;
    let val_ex = examples(val)?;
    let net = DistNet::init(config, &mut ChaCha8Rng::seed_from_u64(train.seed))?;
    let mut trainer = Trainer::new(net, train.clone())?;
    let summary = trainer.run(&train_ex, &val_ex, log)?;
    Ok((LearnedModel::new(spec, trainer.into_net())?, summary))
}
