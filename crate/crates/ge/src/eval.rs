//! Metrics and experiment drivers: method comparison, fake-vs-real
//! error decomposition, and measurement-size sweeps.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::autoenc::{encode, train_ae, AeConfig};
use crate::began::sample_latent;
use crate::data::ImageSet;
use crate::error::{GeError, Result};
use crate::imaging::AdjustmentOp;
use crate::lasso::{build_dct_dictionary, lasso_solve, LassoConfig};
use crate::nn::{build_decoder, build_encoder, EncoderVariant, Network};
use crate::solver::{gaussian_sensing_matrix, solve_ga, solve_ge, SolveConfig};
use crate::tensor::{matmul_raw, Tape, Tensor};

/// Mean over all pixels/channels of the squared difference, in [-1,1]
/// pixel units.
pub fn image_mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape != b.shape {
        return Err(GeError::Shape(format!(
            "image shapes differ: {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    let n = a.numel();
    if n == 0 {
        return Err(GeError::Contract("empty image".into()));
    }
    Ok(a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64)
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    (values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// FNV-1a over the bit patterns of every parameter value. Used to
/// verify a network was not mutated across an experiment.
pub fn param_hash(net: &Network) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in &net.params {
        for b in p.name.as_bytes() {
            h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
        }
        for v in &p.value.data {
            for b in v.to_bits().to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

fn fnv_str(h: &mut u64, s: &str) {
    for b in s.as_bytes() {
        *h = (*h ^ *b as u64).wrapping_mul(0x100000001b3);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalRow {
    pub image_id: usize,
    pub method: String,
    pub m: usize,
    pub mse: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MethodStats {
    pub method: String,
    pub median: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub stats: Vec<MethodStats>,
    pub config_hash: u64,
    pub seed: u64,
}

impl EvalReport {
    /// Aggregate per-method statistics from per-image rows. Methods are
    /// ordered by first appearance; statistics depend only on the
    /// multiset of values, not row order.
    pub fn from_rows(rows: Vec<EvalRow>, config_hash: u64, seed: u64) -> EvalReport {
        let mut order: Vec<String> = Vec::new();
        for row in &rows {
            if !order.contains(&row.method) {
                order.push(row.method.clone());
            }
        }
        let stats = order
            .into_iter()
            .map(|method| {
                let values: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.method == method)
                    .map(|r| r.mse)
                    .collect();
                MethodStats {
                    median: median(&values),
                    mean: mean(&values),
                    std: std_dev(&values),
                    method,
                }
            })
            .collect();
        EvalReport {
            rows,
            stats,
            config_hash,
            seed,
        }
    }

    /// Full CSV including wall-clock times (not reproducible across
    /// runs; use `csv_deterministic` for byte-level comparisons).
    pub fn csv(&self) -> String {
        let mut out = String::from("image_id,method,m,mse,wall_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.17e},{:.3}\n",
                r.image_id, r.method, r.m, r.mse, r.wall_ms
            ));
        }
        out
    }

    /// CSV of everything except wall times; byte-identical across
    /// reruns with the same seeds.
    pub fn csv_deterministic(&self) -> String {
        let mut out = String::from("image_id,method,m,mse\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.17e}\n",
                r.image_id, r.method, r.m, r.mse
            ));
        }
        out
    }

    pub fn stats_for(&self, method: &str) -> Option<&MethodStats> {
        self.stats.iter().find(|s| s.method == method)
    }
}

/// One recovery method in a comparison run.
#[derive(Clone, Debug)]
pub enum MethodSpec<'a> {
    /// Generative-encoder recovery from m = EN(x).
    Ge { label: String, encoder: &'a Network },
    /// Latent least squares against a random Gaussian sensing matrix.
    Ga { m: usize },
    /// Sparse recovery over a cosine dictionary from Gaussian
    /// measurements of the image.
    Lasso {
        m: usize,
        alpha: f64,
        overcomplete: usize,
        iterations: usize,
    },
}

impl MethodSpec<'_> {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Ge { label, .. } => label.clone(),
            MethodSpec::Ga { .. } => "ga".into(),
            MethodSpec::Lasso { .. } => "lasso".into(),
        }
    }

    fn budget(&self, generator: &Network) -> Result<usize> {
        match self {
            MethodSpec::Ge { encoder, .. } => Ok(*encoder.output_shape()?.last().unwrap()),
            MethodSpec::Ga { m } | MethodSpec::Lasso { m, .. } => {
                let _ = generator;
                Ok(*m)
            }
        }
    }
}

fn run_method(
    method: &MethodSpec,
    image: &Tensor,
    image_id: usize,
    generator: &Network,
    solve: &SolveConfig,
) -> Result<(f64, Tensor)> {
    // each (method, image) pair gets its own deterministic seed
    let mut h = solve.seed;
    fnv_str(&mut h, &method.label());
    let item_seed = h ^ (image_id as u64).wrapping_mul(0x9e3779b97f4a7c15);
    let item_solve = SolveConfig {
        seed: item_seed,
        ..solve.clone()
    };
    match method {
        MethodSpec::Ge { encoder, .. } => {
            let m = encode(encoder, image)?;
            let result = solve_ge(&m, encoder, generator, &AdjustmentOp::Identity, &item_solve)?;
            Ok((image_mse(&result.x_hat, image)?, result.x_hat))
        }
        MethodSpec::Ga { m } => {
            let n = image.numel();
            let a = gaussian_sensing_matrix(*m, n, item_seed);
            let y = Tensor::new(vec![*m], matmul_raw(&a.data, &image.data, *m, n, 1))?;
            let result = solve_ga(&y, &a, generator, &item_solve)?;
            Ok((image_mse(&result.x_hat, image)?, result.x_hat))
        }
        MethodSpec::Lasso {
            m,
            alpha,
            overcomplete,
            iterations,
        } => {
            let [c, height, width] = image.shape[..] else {
                return Err(GeError::Shape("lasso expects a C,H,W image".into()));
            };
            if c != 1 {
                return Err(GeError::Config(
                    "lasso baseline supports single-channel images".into(),
                ));
            }
            let n = height * width;
            let dict = build_dct_dictionary(height, width, *overcomplete)?;
            let p = dict.psi.shape[1];
            let a_sense = gaussian_sensing_matrix(*m, n, item_seed);
            let composed = Tensor::new(
                vec![*m, p],
                matmul_raw(&a_sense.data, &dict.psi.data, *m, n, p),
            )?;
            let b = Tensor::new(vec![*m], matmul_raw(&a_sense.data, &image.data, *m, n, 1))?;
            let config = LassoConfig {
                alpha: *alpha,
                iterations: *iterations,
                step: None,
                fista: false,
            };
            let (_, flat) = lasso_solve(&composed, &b, &dict, &config)?;
            let x_hat = Tensor::new(image.shape.clone(), flat.data)?;
            Ok((image_mse(&x_hat, image)?, x_hat))
        }
    }
}

/// Run every method on every test image at its measurement budget.
/// Returns the report and per-method recovered images (method-major,
/// image-minor) for building comparison grids.
pub fn compare_methods(
    test_set: &[Tensor],
    generator: &Network,
    methods: &[MethodSpec],
    solve: &SolveConfig,
) -> Result<(EvalReport, Vec<Vec<Tensor>>)> {
    if test_set.is_empty() || methods.is_empty() {
        return Err(GeError::Contract(
            "compare_methods needs at least one image and one method".into(),
        ));
    }
    let mut config_hash: u64 = 0xcbf29ce484222325;
    fnv_str(
        &mut config_hash,
        &serde_json::to_string(solve).expect("config serializes"),
    );
    let mut rows = Vec::new();
    let mut recovered = Vec::new();
    for method in methods {
        fnv_str(&mut config_hash, &method.label());
        let budget = method.budget(generator)?;
        let results: Vec<Result<(f64, Tensor, f64)>> = test_set
            .par_iter()
            .enumerate()
            .map(|(image_id, image)| {
                let start = Instant::now();
                let (mse, x_hat) = run_method(method, image, image_id, generator, solve)?;
                Ok((mse, x_hat, start.elapsed().as_secs_f64() * 1e3))
            })
            .collect();
        let mut images = Vec::with_capacity(test_set.len());
        for (image_id, result) in results.into_iter().enumerate() {
            let (mse, x_hat, wall_ms) = result?;
            rows.push(EvalRow {
                image_id,
                method: method.label(),
                m: budget,
                mse,
                wall_ms,
            });
            images.push(x_hat);
        }
        recovered.push(images);
    }
    Ok((EvalReport::from_rows(rows, config_hash, solve.seed), recovered))
}

/// Side-by-side grid: one row per method (originals first), one column
/// per image, 2-pixel white separators.
pub fn comparison_grid(rows: &[(String, Vec<Tensor>)]) -> Result<Tensor> {
    let first = rows
        .first()
        .and_then(|(_, imgs)| imgs.first())
        .ok_or_else(|| GeError::Contract("comparison_grid needs at least one image".into()))?;
    let [c, h, w] = first.shape[..] else {
        return Err(GeError::Shape("grid expects C,H,W images".into()));
    };
    let cols = rows[0].1.len();
    let gap = 2;
    let gh = rows.len() * h + (rows.len() - 1) * gap;
    let gw = cols * w + cols.saturating_sub(1) * gap;
    let mut grid = vec![1.0; c * gh * gw];
    for (r, (_, imgs)) in rows.iter().enumerate() {
        if imgs.len() != cols {
            return Err(GeError::Contract("ragged comparison grid".into()));
        }
        for (col, img) in imgs.iter().enumerate() {
            if img.shape != first.shape {
                return Err(GeError::Shape("mixed image shapes in grid".into()));
            }
            let (oy, ox) = (r * (h + gap), col * (w + gap));
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        grid[ch * gh * gw + (oy + y) * gw + ox + x] =
                            img.data[ch * h * w + y * w + x];
                    }
                }
            }
        }
    }
    Tensor::new(vec![c, gh, gw], grid)
}

/// Median GE recovery MSE over fake targets G(z) vs real held-out
/// targets. Returns (fake_mse, real_mse, ratio).
pub fn error_decomposition(
    generator: &Network,
    encoder: &Network,
    solve: &SolveConfig,
    real_test: &[Tensor],
    n_fake: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    if n_fake == 0 {
        return Err(GeError::Config(
            "error_decomposition needs n_fake >= 1".into(),
        ));
    }
    if real_test.is_empty() {
        return Err(GeError::Contract(
            "error_decomposition needs real targets".into(),
        ));
    }
    let g_hash = param_hash(generator);
    let latent_dim = generator.spec.input_shape[0];
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let zs = sample_latent(n_fake, latent_dim, &mut rng);
    let fakes: Vec<Tensor> = (0..n_fake)
        .map(|i| {
            let z = Tensor::new(
                vec![latent_dim],
                zs.data[i * latent_dim..(i + 1) * latent_dim].to_vec(),
            )?;
            generator.forward(&mut Tape::frozen(), &z)
        })
        .collect::<Result<_>>()?;
    let solve_one = |targets: &[Tensor], salt: u64| -> Result<Vec<f64>> {
        targets
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let item_solve = SolveConfig {
                    seed: solve.seed ^ salt ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15),
                    ..solve.clone()
                };
                let m = encode(encoder, x)?;
                let result = solve_ge(&m, encoder, generator, &AdjustmentOp::Identity, &item_solve)?;
                image_mse(&result.x_hat, x)
            })
            .collect()
    };
    let fake_mse = median(&solve_one(&fakes, 0x66616b65)?);
    let real_mse = median(&solve_one(real_test, 0x7265616c)?);
    // the solver must have seen the same frozen generator throughout
    if param_hash(generator) != g_hash {
        return Err(GeError::Contract(
            "generator parameters changed during decomposition".into(),
        ));
    }
    Ok((fake_mse, real_mse, fake_mse / real_mse))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub m: usize,
    pub median_mse: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub csv: String,
    pub svg: String,
}

/// Architecture knobs shared by every budget of a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct SweepNetConfig {
    pub d: usize,
    pub f: usize,
    pub dec_layers: usize,
    pub dec_filters: usize,
    pub seed: u64,
}

/// For each budget m: train a GE1 autoencoder with bottleneck m on the
/// training set, then solve GE over the test images and record the
/// median MSE.
pub fn sweep_measurements(
    budgets: &[usize],
    train: &ImageSet,
    test: &[Tensor],
    generator: &Network,
    nets: &SweepNetConfig,
    ae: &AeConfig,
    solve: &SolveConfig,
) -> Result<SweepResult> {
    if budgets.is_empty() {
        return Err(GeError::Config("sweep needs at least one budget".into()));
    }
    if test.is_empty() {
        return Err(GeError::Contract("sweep needs test images".into()));
    }
    let [c, h, w] = test[0].shape[..] else {
        return Err(GeError::Shape("sweep expects C,H,W images".into()));
    };
    let shape = (c, h, w);
    let mut points = Vec::with_capacity(budgets.len());
    for &m in budgets {
        let encoder = build_encoder(EncoderVariant::Ge1, nets.d, nets.f, m, shape, nets.seed)?;
        let decoder = build_decoder(m, nets.dec_layers, nets.dec_filters, shape, nets.seed ^ 1)?;
        let (encoder, _, _) = train_ae(train, encoder, decoder, ae)?;
        let mses: Vec<f64> = test
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let item_solve = SolveConfig {
                    seed: solve.seed
                        ^ (m as u64) << 32
                        ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15),
                    ..solve.clone()
                };
                let code = encode(&encoder, x)?;
                let result =
                    solve_ge(&code, &encoder, generator, &AdjustmentOp::Identity, &item_solve)?;
                image_mse(&result.x_hat, x)
            })
            .collect::<Result<_>>()?;
        points.push(SweepPoint {
            m,
            median_mse: median(&mses),
        });
    }
    let mut csv = String::from("m,median_mse\n");
    for p in &points {
        csv.push_str(&format!("{},{:.17e}\n", p.m, p.median_mse));
    }
    let series: Vec<(f64, f64)> = points.iter().map(|p| (p.m as f64, p.median_mse)).collect();
    let svg = svg_line_chart(
        &series,
        "median reconstruction MSE vs measurement size",
        "m",
        "median MSE",
    );
    Ok(SweepResult { points, csv, svg })
}

/// Measurement rate rho = m / (C*H*W).
pub fn measurement_rate(m: usize, image_shape: (usize, usize, usize)) -> f64 {
    let (c, h, w) = image_shape;
    m as f64 / (c * h * w) as f64
}

/// Minimal SVG line chart: axes, ticks, polyline, point markers,
/// labels. Deterministic output for fixed input.
pub fn svg_line_chart(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let (width, height, margin) = (640.0, 480.0, 70.0);
    let (x0, x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (y0, y1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let pad = |lo: f64, hi: f64| {
        let span = (hi - lo).abs();
        if span == 0.0 {
            (lo - 1.0, hi + 1.0)
        } else {
            (lo - 0.05 * span, hi + 0.05 * span)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (width - 2.0 * margin);
    let sy = |y: f64| height - margin - (y - y0) / (y1 - y0) * (height - 2.0 * margin);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n<rect width=\"{width}\" height=\"{height}\" \
         fill=\"white\"/>\n"
    );
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"30\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
        width / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = margin,
        b = height - margin,
        r = width - margin,
        t = margin
    ));
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{b}\" x2=\"{x}\" y2=\"{b2}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{ty}\" text-anchor=\"middle\" font-size=\"11\">{fx:.4}</text>\n",
            x = sx(fx),
            b = height - margin,
            b2 = height - margin + 5.0,
            ty = height - margin + 18.0
        ));
        svg.push_str(&format!(
            "<line x1=\"{m2}\" y1=\"{y}\" x2=\"{m}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{tx}\" y=\"{y}\" text-anchor=\"end\" font-size=\"11\">{fy:.4}</text>\n",
            m = margin,
            m2 = margin - 5.0,
            y = sy(fy),
            tx = margin - 8.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\">{xlabel}</text>\n",
        width / 2.0,
        height - 20.0
    ));
    svg.push_str(&format!(
        "<text x=\"20\" y=\"{}\" text-anchor=\"middle\" font-size=\"13\" \
         transform=\"rotate(-90 20 {})\">{ylabel}</text>\n",
        height / 2.0,
        height / 2.0
    ));
    if !points.is_empty() {
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in points {
            svg.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>\n",
                sx(x),
                sy(y)
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}
