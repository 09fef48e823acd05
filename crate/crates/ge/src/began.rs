//! Boundary-equilibrium GAN training.
//!
//! The discriminator is itself an autoencoder scored by mean absolute
//! reconstruction error. A proportional control variable k_t balances
//! the generator and discriminator losses; the convergence measure
//! M = L_real + |gamma*L_real - L_fake| tracks training health.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::ImageSet;
use crate::error::{GeError, Result};
use crate::nn::Network;
use crate::optim::Adam;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, serde::Serialize)]
pub struct BeganConfig {
    pub latent_dim: usize,
    /// Diversity ratio in (0, 1].
    pub gamma: f64,
    /// Proportional gain for the k update.
    pub lambda_k: f64,
    pub k0: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub d_learning_rate: f64,
    pub g_learning_rate: f64,
    pub seed: u64,
}

impl Default for BeganConfig {
    fn default() -> Self {
        BeganConfig {
            latent_dim: 8,
            gamma: 0.5,
            lambda_k: 0.001,
            k0: 0.0,
            steps: 2000,
            batch_size: 8,
            d_learning_rate: 1e-4,
            g_learning_rate: 1e-4,
            seed: 0,
        }
    }
}

impl BeganConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(GeError::Config("gamma must be in (0, 1]".into()));
        }
        if self.lambda_k <= 0.0 {
            return Err(GeError::Config("lambda_k must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.k0) {
            return Err(GeError::Config("k0 must be in [0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(GeError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HistoryRow {
    pub step: usize,
    pub l_real: f64,
    pub l_fake: f64,
    pub k: f64,
    pub m: f64,
}

/// CSV rendering of a training history (step, L_real, L_fake, k_t, M).
pub fn history_csv(history: &[HistoryRow]) -> String {
    let mut out = String::from("step,l_real,l_fake,k,m\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.l_real, row.l_fake, row.k, row.m
        ));
    }
    out
}

/// n x k matrix of iid standard normal draws, deterministic under the rng.
pub fn sample_latent(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..n * k)
        .map(|_| StandardNormal.sample(rng))
        .collect::<Vec<f64>>();
    Tensor::new(vec![n, k], data).expect("shape consistent")
}

fn latent_row(m: &Tensor, i: usize) -> Tensor {
    let k = m.shape[1];
    Tensor::from_vec(m.data[i * k..(i + 1) * k].to_vec())
}

/// Mean absolute pixel error between images and the discriminator's
/// reconstructions of them.
pub fn disc_recon_loss(d: &Network, images: &[Tensor]) -> Result<f64> {
    if images.is_empty() {
        return Err(GeError::Contract("disc_recon_loss needs a nonempty batch".into()));
    }
    let mut tape = Tape::frozen();
    let mut total = 0.0;
    for img in images {
        let recon = d.forward(&mut tape, img)?;
        total += tape.mean_abs_diff(&recon, img)?.item();
    }
    Ok(total / images.len() as f64)
}

/// k_{t+1} = clamp(k_t + lambda_k * (gamma * L_real - L_fake), 0, 1)
pub fn update_k(k: f64, gamma: f64, lambda_k: f64, l_real: f64, l_fake: f64) -> f64 {
    (k + lambda_k * (gamma * l_real - l_fake)).clamp(0.0, 1.0)
}

/// M = L_real + |gamma * L_real - L_fake|
pub fn convergence_measure(l_real: f64, l_fake: f64, gamma: f64) -> f64 {
    l_real + (gamma * l_real - l_fake).abs()
}

/// Batch-mean of per-sample scalar losses, on the tape.
fn batch_mean(tape: &mut Tape, losses: &[Tensor]) -> Result<Tensor> {
    let mut acc = losses[0].clone();
    for l in &losses[1..] {
        acc = tape.add(&acc, l)?;
    }
    tape.scale(&acc, 1.0 / losses.len() as f64)
}

/// Alternating BEGAN training. Consumes initialized networks and
/// returns them frozen, along with the full per-step history.
pub fn train_began(
    dataset: &ImageSet,
    mut g: Network,
    mut d: Network,
    config: &BeganConfig,
) -> Result<(Network, Network, Vec<HistoryRow>)> {
    config.validate()?;
    if dataset.images.is_empty() {
        return Err(GeError::Contract("train_began needs a nonempty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut d_opt = Adam::for_params(
        config.d_learning_rate,
        &d.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>(),
    );
    let mut g_opt = Adam::for_params(
        config.g_learning_rate,
        &g.params.iter().map(|p| p.value.clone()).collect::<Vec<_>>(),
    );
    let mut k = config.k0;
    let mut history = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let batch: Vec<&Tensor> = (0..config.batch_size)
            .map(|_| &dataset.images[rng.gen_range(0..dataset.images.len())])
            .collect();
        // separate latent draws for the D-step and the G-step
        let z_d = sample_latent(config.batch_size, config.latent_dim, &mut rng);
        let z_g = sample_latent(config.batch_size, config.latent_dim, &mut rng);

        let step_result: Result<(f64, f64)> = (|| {
            // D-step: minimize L(x_real) - k * L(G(z)) with G held constant
            let mut tape = Tape::new();
            let d_handles = d.register_as(&mut tape, true);
            let mut real_losses = Vec::with_capacity(config.batch_size);
            let mut fake_losses = Vec::with_capacity(config.batch_size);
            for (i, x) in batch.iter().enumerate() {
                let recon = d.forward_with(&mut tape, &d_handles, x)?;
                real_losses.push(tape.mean_abs_diff(&recon, x)?);
                let fake = g.forward(&mut Tape::frozen(), &latent_row(&z_d, i))?;
                let recon_f = d.forward_with(&mut tape, &d_handles, &fake)?;
                fake_losses.push(tape.mean_abs_diff(&recon_f, &fake)?);
            }
            let l_real = batch_mean(&mut tape, &real_losses)?;
            let l_fake_d = batch_mean(&mut tape, &fake_losses)?;
            let weighted = tape.scale(&l_fake_d, k)?;
            let d_loss = tape.sub(&l_real, &weighted)?;
            let l_real_val = l_real.item();
            let grads = tape.backward(&d_loss)?;
            let grad_refs: Vec<Option<&Tensor>> =
                d_handles.iter().map(|h| grads.get(h)).collect();
            let mut values: Vec<Tensor> = d.params.iter().map(|p| p.value.clone()).collect();
            d_opt.step(&mut values, &grad_refs)?;
            for (p, v) in d.params.iter_mut().zip(values) {
                p.value = v;
            }

            // G-step: minimize L(G(z)) with D held constant
            let mut tape = Tape::new();
            let g_handles = g.register_as(&mut tape, true);
            let d_handles = d.register_as(&mut tape, false);
            let mut fake_losses = Vec::with_capacity(config.batch_size);
            for i in 0..config.batch_size {
                let img = g.forward_with(&mut tape, &g_handles, &latent_row(&z_g, i))?;
                let recon = d.forward_with(&mut tape, &d_handles, &img)?;
                fake_losses.push(tape.mean_abs_diff(&recon, &img)?);
            }
            let l_fake = batch_mean(&mut tape, &fake_losses)?;
            let l_fake_val = l_fake.item();
            let grads = tape.backward(&l_fake)?;
            let grad_refs: Vec<Option<&Tensor>> =
                g_handles.iter().map(|h| grads.get(h)).collect();
            let mut values: Vec<Tensor> = g.params.iter().map(|p| p.value.clone()).collect();
            g_opt.step(&mut values, &grad_refs)?;
            for (p, v) in g.params.iter_mut().zip(values) {
                p.value = v;
            }
            Ok((l_real_val, l_fake_val))
        })();

        let (l_real, l_fake) = step_result.map_err(|e| GeError::Training {
            step,
            msg: e.to_string(),
        })?;
        k = update_k(k, config.gamma, config.lambda_k, l_real, l_fake);
        debug_assert!((0.0..=1.0).contains(&k));
        history.push(HistoryRow {
            step,
            l_real,
            l_fake,
            k,
            m: convergence_measure(l_real, l_fake, config.gamma),
        });
    }

    g.freeze();
    d.freeze();
    Ok((g, d, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs_dataset;
    use crate::nn::{build_discriminator, build_generator, extract_encoder};

    #[test]
    fn latent_determinism_and_shape() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let za = sample_latent(3, 4, &mut a);
        let zb = sample_latent(3, 4, &mut b);
        assert_eq!(za.shape, vec![3, 4]);
        assert_eq!(za.data, zb.data);
    }

    #[test]
    fn latent_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_latent(10_000, 10, &mut rng);
        let n = z.numel() as f64;
        let mean = z.data.iter().sum::<f64>() / n;
        let var = z.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn k_update_rules() {
        // equilibrium leaves k unchanged
        assert_eq!(update_k(0.3, 0.5, 0.001, 1.0, 0.5), 0.3);
        let k = update_k(0.0, 0.5, 0.001, 1.0, 0.0);
        assert!((k - 0.0005).abs() < 1e-15);
        // clamping at zero
        assert_eq!(update_k(0.0, 0.5, 0.1, 0.0, 1.0), 0.0);
        assert_eq!(update_k(1.0, 1.0, 1.0, 10.0, 0.0), 1.0);
    }

    #[test]
    fn convergence_measure_values() {
        assert_eq!(convergence_measure(0.0, 0.0, 0.5), 0.0);
        assert_eq!(convergence_measure(1.0, 0.5, 0.5), 1.0);
        for &(lr, lf) in &[(0.2, 0.9), (1.3, 0.0), (0.0, 0.4)] {
            assert!(convergence_measure(lr, lf, 0.5) >= lr);
        }
    }

    #[test]
    fn recon_loss_constant_cases() {
        // a discriminator that reproduces its input exactly: empty layer list
        let spec = crate::nn::NetworkSpec {
            label: "identity_d".into(),
            input_shape: vec![1, 4, 4],
            layers: vec![],
            bottleneck_split: None,
        };
        let d = Network::init(spec, 0).unwrap();
        let img = Tensor::new(vec![1, 4, 4], vec![0.5; 16]).unwrap();
        assert_eq!(disc_recon_loss(&d, &[img.clone()]).unwrap(), 0.0);

        // loop oracle on a random tiny discriminator
        let d = build_discriminator(2, 2, 4, 3, 2, (1, 8, 8), 3).unwrap();
        let x = gen_blobs_dataset(1, 8, 2, 9).images[0].clone();
        let recon = d.forward(&mut Tape::frozen(), &x).unwrap();
        let want: f64 =
            recon.data.iter().zip(&x.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / 64.0;
        let got = disc_recon_loss(&d, &[x]).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn zero_steps_returns_initialized_networks() {
        let data = gen_blobs_dataset(8, 8, 2, 1);
        let g = build_generator(4, 3, 3, (1, 8, 8), 1).unwrap();
        let d = build_discriminator(2, 2, 4, 3, 2, (1, 8, 8), 2).unwrap();
        let g_before: Vec<f64> = g.params.iter().flat_map(|p| p.value.data.clone()).collect();
        let cfg = BeganConfig {
            latent_dim: 4,
            steps: 0,
            ..Default::default()
        };
        let (g2, d2, history) = train_began(&data, g, d, &cfg).unwrap();
        assert!(history.is_empty());
        assert!(g2.frozen && d2.frozen);
        let g_after: Vec<f64> = g2.params.iter().flat_map(|p| p.value.data.clone()).collect();
        assert_eq!(g_before, g_after);
    }

    #[test]
    fn short_run_history_and_reproducibility() {
        let data = gen_blobs_dataset(16, 8, 2, 4);
        let run = || {
            let g = build_generator(4, 3, 3, (1, 8, 8), 10).unwrap();
            let d = build_discriminator(2, 2, 4, 3, 2, (1, 8, 8), 11).unwrap();
            let cfg = BeganConfig {
                latent_dim: 4,
                steps: 5,
                batch_size: 2,
                ..Default::default()
            };
            train_began(&data, g, d, &cfg).unwrap()
        };
        let (g1, _, h1) = run();
        let (g2, _, h2) = run();
        assert_eq!(h1.len(), 5);
        assert_eq!(history_csv(&h1), history_csv(&h2));
        for (a, b) in g1.params.iter().zip(&g2.params) {
            assert_eq!(a.value.data, b.value.data);
        }
        for row in &h1 {
            assert!((0.0..=1.0).contains(&row.k));
            assert!(row.l_real.is_finite() && row.l_fake.is_finite());
        }
        // frozen G output stays in [-1, 1]
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..5 {
            let z = latent_row(&sample_latent(1, 4, &mut rng), 0);
            let img = g1.forward(&mut Tape::frozen(), &z).unwrap();
            assert!(img.data.iter().all(|&v| (-1.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn extracted_encoder_has_bottleneck_width() {
        let d = build_discriminator(2, 2, 6, 3, 2, (1, 8, 8), 21).unwrap();
        let en = extract_encoder(&d).unwrap();
        let x = Tensor::zeros(&[1, 8, 8]);
        let code = en.forward(&mut Tape::frozen(), &x).unwrap();
        assert_eq!(code.shape, vec![6]);
    }
}
