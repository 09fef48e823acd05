//! Convolutional autoencoder training on a mix of real images and
//! images drawn from a frozen generator, producing the frozen encoder
//! used by the GE1 solver.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::began::sample_latent;
use crate::data::{ImageSet, ImageSetMeta};
use crate::error::{GeError, Result};
use crate::nn::Network;
use crate::optim::Adam;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, serde::Serialize)]
pub struct AeConfig {
    /// Fraction of generated images in the mixed training set.
    pub fake_ratio: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            fake_ratio: 0.5,
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-4,
            seed: 0,
        }
    }
}

/// n_total images: floor(fake_ratio * n_total) generated by G, the
/// rest drawn from the real set, shuffled deterministically.
pub fn augment_dataset(
    real: &ImageSet,
    g: &Network,
    fake_ratio: f64,
    n_total: usize,
    seed: u64,
) -> Result<ImageSet> {
    if real.images.is_empty() {
        return Err(GeError::Contract("augment_dataset needs real images".into()));
    }
    if !(0.0..=1.0).contains(&fake_ratio) {
        return Err(GeError::Config("fake_ratio must be in [0, 1]".into()));
    }
    let latent_dim = match g.spec.input_shape.as_slice() {
        [k] => *k,
        other => {
            return Err(GeError::Shape(format!(
                "generator input must be a latent vector, got {other:?}"
            )))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_fake = (fake_ratio * n_total as f64).floor() as usize;
    let mut images = Vec::with_capacity(n_total);
    if n_fake > 0 {
        let z = sample_latent(n_fake, latent_dim, &mut rng);
        for i in 0..n_fake {
            let zi = Tensor::from_vec(z.data[i * latent_dim..(i + 1) * latent_dim].to_vec());
            images.push(g.forward(&mut Tape::frozen(), &zi)?);
        }
    }
    for _ in n_fake..n_total {
        images.push(real.images[rng.gen_range(0..real.images.len())].clone());
    }
    images.shuffle(&mut rng);
    Ok(ImageSet {
        images,
        meta: ImageSetMeta {
            source: format!("augmented(fake_ratio={fake_ratio},n={n_total})"),
            seed,
            split: "train".into(),
        },
    })
}

/// Joint encoder/decoder training minimizing mean reconstruction MSE.
/// Returns both networks frozen plus the per-step loss history.
pub fn train_ae(
    images: &ImageSet,
    mut encoder: Network,
    mut decoder: Network,
    config: &AeConfig,
) -> Result<(Network, Network, Vec<f64>)> {
    if images.images.is_empty() {
        return Err(GeError::Contract("train_ae needs a nonempty dataset".into()));
    }
    if config.batch_size == 0 {
        return Err(GeError::Config("batch_size must be >= 1".into()));
    }
    // shape compatibility up front
    let enc_out = encoder.output_shape()?;
    if decoder.spec.input_shape != enc_out {
        return Err(GeError::Shape(format!(
            "decoder input {:?} does not match encoder output {enc_out:?}",
            decoder.spec.input_shape
        )));
    }
    if decoder.output_shape()? != encoder.spec.input_shape {
        return Err(GeError::Shape(
            "decode(encode(x)) does not preserve image shape".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut enc_opt = Adam::for_params(
        config.learning_rate,
        &encoder.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>(),
    );
    let mut dec_opt = Adam::for_params(
        config.learning_rate,
        &decoder.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>(),
    );
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let result: Result<f64> = (|| {
            let mut tape = Tape::new();
            let enc_handles = encoder.register_as(&mut tape, true);
            let dec_handles = decoder.register_as(&mut tape, true);
            let mut acc: Option<Tensor> = None;
            for _ in 0..config.batch_size {
                let x = &images.images[rng.gen_range(0..images.images.len())];
                let code = encoder.forward_with(&mut tape, &enc_handles, x)?;
                let recon = decoder.forward_with(&mut tape, &dec_handles, &code)?;
                let loss = tape.mse(&recon, x)?;
                acc = Some(match acc {
                    Some(a) => tape.add(&a, &loss)?,
                    None => loss,
                });
            }
            let loss = tape.scale(&acc.expect("batch_size >= 1"), 1.0 / config.batch_size as f64)?;
            let loss_val = loss.item();
            let grads = tape.backward(&loss)?;

            let enc_grads: Vec<Option<&Tensor>> =
                enc_handles.iter().map(|h| grads.get(h)).collect();
            let mut values: Vec<Tensor> =
                encoder.params.iter().map(|p| p.value.clone()).collect();
            enc_opt.step(&mut values, &enc_grads)?;
            for (p, v) in encoder.params.iter_mut().zip(values) {
                p.value = v;
            }

            let dec_grads: Vec<Option<&Tensor>> =
                dec_handles.iter().map(|h| grads.get(h)).collect();
            let mut values: Vec<Tensor> =
                decoder.params.iter().map(|p| p.value.clone()).collect();
            dec_opt.step(&mut values, &dec_grads)?;
            for (p, v) in decoder.params.iter_mut().zip(values) {
                p.value = v;
            }
            Ok(loss_val)
        })();
        let loss = result.map_err(|e| GeError::Training {
            step,
            msg: e.to_string(),
        })?;
        history.push(loss);
    }

    encoder.freeze();
    decoder.freeze();
    Ok((encoder, decoder, history))
}

/// Deterministic forward pass through a frozen encoder.
pub fn encode(encoder: &Network, x: &Tensor) -> Result<Tensor> {
    encoder.forward(&mut Tape::frozen(), x)
}

/// Deterministic forward pass through a frozen decoder.
pub fn decode(decoder: &Network, code: &Tensor) -> Result<Tensor> {
    decoder.forward(&mut Tape::frozen(), code)
}

/// Held-out reconstruction MSE, averaged over the set.
pub fn reconstruction_mse(encoder: &Network, decoder: &Network, set: &ImageSet) -> Result<f64> {
    let mut tape = Tape::frozen();
    let mut total = 0.0;
    for x in &set.images {
        let code = encoder.forward(&mut tape, x)?;
        let recon = decoder.forward(&mut tape, &code)?;
        total += tape.mse(&recon, x)?.item();
    }
    Ok(total / set.images.len() as f64)
}

/// MSE of the best constant-image predictor (the pixelwise mean) on a
/// set; the baseline the autoencoder must beat.
pub fn constant_predictor_mse(set: &ImageSet) -> Result<f64> {
    let first = set
        .images
        .first()
        .ok_or_else(|| GeError::Contract("empty set".into()))?;
    let n = first.numel();
    let mut mean = vec![0.0; n];
    for img in &set.images {
        for (m, v) in mean.iter_mut().zip(&img.data) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= set.images.len() as f64;
    }
    let mut total = 0.0;
    for img in &set.images {
        total += img
            .data
            .iter()
            .zip(&mean)
            .map(|(v, m)| (v - m) * (v - m))
            .sum::<f64>()
            / n as f64;
    }
    Ok(total / set.images.len() as f64)
}
