//! Solving phase: latent-space optimization with random restarts.
//!
//! Minimizes mse(EN(S(G(z))), m) + lambda * |z|^2 over z by ADAM, once
//! per restart from an independent normal initialization, and keeps the
//! restart whose final objective is smallest. The Gaussian-sensing
//! variant replaces the encoder with a fixed random matrix.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeError, Result};
use crate::imaging::AdjustmentOp;
use crate::nn::Network;
use crate::optim::Adam;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, Serialize)]
pub struct SolveConfig {
    /// Weight of the squared-l2 latent regularizer.
    pub lambda: f64,
    pub iterations: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            lambda: 1e-3,
            iterations: 500,
            restarts: 2,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 || self.restarts < 1 {
            return Err(GeError::Config(
                "iterations and restarts must be >= 1".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(GeError::Config("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub z_star: Tensor,
    pub x_hat: Tensor,
    /// Final objective of each restart.
    pub objective_final: Vec<f64>,
    /// Per-iteration objective of each restart (value at the iterate
    /// before the update).
    pub objective_trace: Vec<Vec<f64>>,
    pub winning_restart: usize,
}

/// mse(EN(S(G(z))), m) + lambda * |z|^2, on the given tape.
pub fn ge_objective(
    tape: &mut Tape,
    z: &Tensor,
    encoder: &Network,
    generator: &Network,
    adjustment: &AdjustmentOp,
    m: &Tensor,
    lambda: f64,
) -> Result<Tensor> {
    let image = generator.forward(tape, z)?;
    let adjusted = adjustment.apply(tape, &image)?;
    let code = encoder.forward(tape, &adjusted)?;
    let residual = tape.mse(&code, m)?;
    if lambda == 0.0 {
        return Ok(residual);
    }
    let reg = tape.sq_l2(z)?;
    let weighted = tape.scale(&reg, lambda)?;
    tape.add(&residual, &weighted)
}

fn latent_dim_of(generator: &Network) -> Result<usize> {
    match generator.spec.input_shape.as_slice() {
        [k] => Ok(*k),
        other => Err(GeError::Shape(format!(
            "generator input must be a latent vector, got {other:?}"
        ))),
    }
}

/// Shared restart machinery: one ADAM run per restart, restart r seeded
/// with seed ^ r, smallest final objective wins.
fn latent_solve<F>(objective: F, latent_dim: usize, config: &SolveConfig) -> Result<(Tensor, SolveStats)>
where
    F: Fn(&mut Tape, &Tensor) -> Result<Tensor> + Sync,
{
    config.validate()?;
    let runs: Vec<Result<(Tensor, f64, Vec<f64>)>> = (0..config.restarts)
        .into_par_iter()
        .map(|restart| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ restart as u64);
            let mut z = Tensor::from_vec(
                (0..latent_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect(),
            );
            let mut adam = Adam::new(config.learning_rate, &[latent_dim]);
            let mut trace = Vec::with_capacity(config.iterations);
            for step in 0..config.iterations {
                let result: Result<()> = (|| {
                    let mut tape = Tape::new();
                    let leaf = tape.leaf(&z, true);
                    let obj = objective(&mut tape, &leaf)?;
                    trace.push(obj.item());
                    let grads = tape.backward(&obj)?;
                    let mut params = vec![z.clone()];
                    adam.step(&mut params, &[grads.get(&leaf)])?;
                    z = params.pop().expect("one param");
                    Ok(())
                })();
                result.map_err(|e| GeError::Solver {
                    restart,
                    step,
                    msg: e.to_string(),
                })?;
            }
            let final_obj = objective(&mut Tape::frozen(), &z)
                .map_err(|e| GeError::Solver {
                    restart,
                    step: config.iterations,
                    msg: e.to_string(),
                })?
                .item();
            Ok((z, final_obj, trace))
        })
        .collect();

    let mut z_best: Option<Tensor> = None;
    let mut finals = Vec::with_capacity(config.restarts);
    let mut traces = Vec::with_capacity(config.restarts);
    let mut winner = 0;
    for (r, run) in runs.into_iter().enumerate() {
        let (z, final_obj, trace) = run?;
        if z_best.is_none() || final_obj < finals[winner] {
            winner = r;
            z_best = Some(z);
        }
        finals.push(final_obj);
        traces.push(trace);
    }
    Ok((
        z_best.expect("restarts >= 1"),
        SolveStats {
            objective_final: finals,
            objective_trace: traces,
            winning_restart: winner,
        },
    ))
}

struct SolveStats {
    objective_final: Vec<f64>,
    objective_trace: Vec<Vec<f64>>,
    winning_restart: usize,
}

/// Recover an image from its compressed measurement m = EN(x).
pub fn solve_ge(
    m: &Tensor,
    encoder: &Network,
    generator: &Network,
    adjustment: &AdjustmentOp,
    config: &SolveConfig,
) -> Result<SolveResult> {
    let latent_dim = latent_dim_of(generator)?;
    let (z_star, stats) = latent_solve(
        |tape, z| ge_objective(tape, z, encoder, generator, adjustment, m, config.lambda),
        latent_dim,
        config,
    )?;
    let x_hat = generator.forward(&mut Tape::frozen(), &z_star)?;
    Ok(SolveResult {
        z_star,
        x_hat,
        objective_final: stats.objective_final,
        objective_trace: stats.objective_trace,
        winning_restart: stats.winning_restart,
    })
}

/// The Gaussian-sensing baseline: minimize mse(A*vec(G(z)), y) with the
/// same restart machinery.
pub fn solve_ga(
    y: &Tensor,
    sensing: &Tensor,
    generator: &Network,
    config: &SolveConfig,
) -> Result<SolveResult> {
    let latent_dim = latent_dim_of(generator)?;
    if sensing.shape.len() != 2 {
        return Err(GeError::Shape("sensing matrix must be 2-d".into()));
    }
    let n: usize = generator.output_shape()?.iter().product();
    if sensing.shape[1] != n {
        return Err(GeError::Shape(format!(
            "sensing matrix has {} columns, image dimension is {n}",
            sensing.shape[1]
        )));
    }
    let rows = sensing.shape[0];
    if y.shape != vec![rows] {
        return Err(GeError::Shape(format!(
            "measurement shape {:?} does not match sensing rows {rows}",
            y.shape
        )));
    }
    let objective = |tape: &mut Tape, z: &Tensor| -> Result<Tensor> {
        let image = generator.forward(tape, z)?;
        let col = tape.reshape(&image, vec![n, 1])?;
        let meas = tape.matmul(sensing, &col)?;
        let flat = tape.reshape(&meas, vec![rows])?;
        let residual = tape.mse(&flat, y)?;
        if config.lambda == 0.0 {
            return Ok(residual);
        }
        let reg = tape.sq_l2(z)?;
        let weighted = tape.scale(&reg, config.lambda)?;
        tape.add(&residual, &weighted)
    };
    let (z_star, stats) = latent_solve(objective, latent_dim, config)?;
    let x_hat = generator.forward(&mut Tape::frozen(), &z_star)?;
    Ok(SolveResult {
        z_star,
        x_hat,
        objective_final: stats.objective_final,
        objective_trace: stats.objective_trace,
        winning_restart: stats.winning_restart,
    })
}

/// m x n matrix with iid N(0, 1/m) entries.
pub fn gaussian_sensing_matrix(m: usize, n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (1.0 / m as f64).sqrt();
    let data = (0..m * n)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * sigma
        })
        .collect();
    Tensor::new(vec![m, n], data).expect("shape consistent")
}
