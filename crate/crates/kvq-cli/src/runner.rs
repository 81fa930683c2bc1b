//! Command implementations: train, sweep, render-grid, perturb, inspect.
//!
//! A training run produces
//!   out/
//!     config.txt      resolved config, round-trippable
//!     summary.json    per-seed and aggregate statistics, deterministic
//!     seed-<s>/       trace.csv, codebook.kvq, model.kvm
//! Seeds run in parallel; every artifact is a pure function of the config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use kvq::codebook::{Codebook, InitScheme, Metric};
use kvq::data::{DataSource, Normalization};
use kvq::error::{KvqError, Result};
use kvq::grid::GridTopology;
use kvq::metrics::{self, UsageHistogram};
use kvq::neighborhood::{NeighborhoodKind, NeighborhoodSchedule};
use kvq::quantizer::{EmaParams, Quantizer};
use kvq::vqlayer::{
    self, ModelShape, PerturbMode, ToyAutoencoder, Trace, TrainOptions,
};

use crate::config::{DataConfig, TrainConfig};
use crate::{persist, ppm};

/// Batch index base for held-out evaluation data, far above any training step.
const EVAL_STREAM_BASE: u64 = 1 << 61;

fn derive_seed(seed: u64, purpose: u64) -> u64 {
    // splitmix64 of (seed, purpose) so model/codebook/data streams differ
    let mut z = seed.wrapping_add(purpose.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn build_grid(config: &TrainConfig) -> Result<GridTopology> {
    match config.grid.dims {
        1 => GridTopology::line(config.grid.width),
        _ => GridTopology::rect(config.grid.width, config.grid.height),
    }
}

fn build_schedule(config: &TrainConfig) -> Result<NeighborhoodSchedule> {
    let grid = build_grid(config)?;
    Ok(match config.neighborhood {
        NeighborhoodKind::Identity => NeighborhoodSchedule::identity(grid.size()),
        kind => {
            let threshold = config.grid_threshold.unwrap_or(grid.default_threshold());
            NeighborhoodSchedule::new(kind, grid, threshold, config.tau)
        }
    })
}

pub fn build_source(config: &TrainConfig, seed: u64) -> Result<DataSource> {
    match &config.data {
        DataConfig::GaussianMixture { components, dim, separation } => {
            DataSource::gaussian_mixture(*components, *dim, *separation, seed, config.batch_size)
        }
        DataConfig::UniformSquare { dim } => {
            DataSource::uniform_square(*dim, seed, config.batch_size)
        }
        DataConfig::Cifar10 { paths, patch_size, stride, normalize } => {
            let norm = if *normalize { Normalization::Centered } else { Normalization::None };
            DataSource::cifar10(paths, *patch_size, *stride, norm, seed, config.batch_size)
        }
        DataConfig::RawVectors { path, dim } => {
            let bytes = fs::read(path)?;
            if bytes.len() % 4 != 0 {
                return Err(KvqError::Format {
                    offset: bytes.len() as u64 / 4 * 4,
                    message: "raw vector file length is not a multiple of 4".into(),
                });
            }
            let vectors: Vec<f64> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            DataSource::raw_vectors(vectors, *dim, seed, config.batch_size)
        }
    }
}

/// Everything measured for one seed of a run.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub diverged: Option<String>,
    pub final_val_loss: Option<f64>,
    pub steps_plus10: Option<u64>,
    pub steps_plus20: Option<u64>,
    pub perplexity: Option<f64>,
    pub utilization: Option<f64>,
    pub topographic_error: Option<f64>,
    pub quantization_error: Option<f64>,
}

pub struct SeedRun {
    pub outcome: SeedOutcome,
    pub trace: Option<Trace>,
    pub model: ToyAutoencoder,
    pub quantizer: Quantizer,
}

/// Train one seed end to end; divergence is captured, not propagated.
pub fn run_seed(config: &TrainConfig, seed: u64) -> Result<SeedRun> {
    let source = build_source(config, derive_seed(seed, 0))?;
    let shape = ModelShape {
        d_in: source.dim(),
        n_latents: config.n_latents,
        d_hidden: config.d_hidden,
        d_emb: config.d_emb,
    };
    if shape.d_in % shape.n_latents != 0 {
        return Err(KvqError::Config(format!(
            "d_in {} is not divisible by n-latents {}",
            shape.d_in, shape.n_latents
        )));
    }
    let mut model =
        ToyAutoencoder::new(shape, config.alpha, config.learning_rate, derive_seed(seed, 1))?;
    let k = config.grid.k();
    let scheme = if config.init == "data-sample" {
        InitScheme::DataSample
    } else {
        InitScheme::Gaussian
    };
    let sample_pool;
    let init_data = match scheme {
        InitScheme::DataSample => {
            // embed enough batches of untrained encoder output to sample from
            let mut pool = Vec::new();
            let mut b = 0;
            while pool.len() < k * config.d_emb {
                for x in source.batch(b).chunks_exact(source.dim()) {
                    let (e, _) = model.encode(x)?;
                    pool.extend_from_slice(&e);
                }
                b += 1;
            }
            sample_pool = pool;
            Some(sample_pool.as_slice())
        }
        InitScheme::Gaussian => None,
    };
    let codebook =
        Codebook::init(k, config.d_emb, derive_seed(seed, 2), scheme, config.metric, init_data)?;
    let params = EmaParams {
        n_init: config.n_init,
        update_empty: config.update_empty,
        epsilon: config.epsilon,
        beta: config.beta,
    };
    let mut quantizer = Quantizer::new(codebook, build_schedule(config)?, params)?;
    let options = TrainOptions {
        steps: config.steps,
        eval_interval: config.eval_interval,
        val_batches: 4,
    };
    let trained = vqlayer::train(&mut model, &mut quantizer, config.algorithm, &source, options);
    let mut outcome = SeedOutcome {
        seed,
        diverged: None,
        final_val_loss: None,
        steps_plus10: None,
        steps_plus20: None,
        perplexity: None,
        utilization: None,
        topographic_error: None,
        quantization_error: None,
    };
    let trace = match trained {
        Ok(trace) => trace,
        Err(KvqError::Diverged { step, message }) => {
            outcome.diverged = Some(format!("step {step}: {message}"));
            return Ok(SeedRun { outcome, trace: None, model, quantizer });
        }
        Err(KvqError::NonFinite { context }) => {
            outcome.diverged = Some(format!("non-finite {context}"));
            return Ok(SeedRun { outcome, trace: None, model, quantizer });
        }
        Err(e) => return Err(e),
    };

    let curve = trace.validation_curve();
    outcome.final_val_loss = trace.final_val_loss();
    outcome.steps_plus10 = metrics::steps_to_threshold(&curve, 0.10, 3);
    outcome.steps_plus20 = metrics::steps_to_threshold(&curve, 0.20, 3);

    // held-out embeddings for codebook-space metrics
    let mut embeddings = Vec::new();
    let mut winners = Vec::new();
    for b in 0..8u64 {
        for x in source.batch(EVAL_STREAM_BASE + b).chunks_exact(source.dim()) {
            let fwd = model.forward(x, quantizer.codebook())?;
            embeddings.extend_from_slice(fwd.embeddings());
            winners.extend_from_slice(&fwd.code.0);
        }
    }
    let hist = UsageHistogram::from_winners(&winners, quantizer.codebook().size());
    outcome.perplexity = Some(metrics::perplexity(&hist)?);
    outcome.utilization = Some(metrics::utilization(&hist)?);
    // trailing mean over the last few evaluations damps step-to-step
    // fluctuation of the trained state
    let tail: Vec<f64> = trace
        .rows
        .iter()
        .filter_map(|r| r.val_qerr)
        .rev()
        .take(5)
        .collect();
    outcome.quantization_error = if tail.is_empty() {
        Some(metrics::quantization_error(&embeddings, quantizer.codebook())?)
    } else {
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    };
    let grid = build_grid(config)?;
    outcome.topographic_error =
        Some(metrics::topographic_error(&embeddings, quantizer.codebook(), &grid)?);
    Ok(SeedRun { outcome, trace: Some(trace), model, quantizer })
}

fn trace_csv(trace: &Trace) -> String {
    let mut s =
        String::from("step,recon_loss,commit_loss,perplexity,utilization,val_loss,val_qerr\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &trace.rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.step,
            r.recon_loss,
            r.commit_loss,
            opt(r.perplexity),
            opt(r.utilization),
            opt(r.val_loss),
            opt(r.val_qerr)
        )
        .unwrap();
    }
    s
}

fn json_f64(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => "null".to_string(),
    }
}

fn json_u64(v: Option<u64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "null".to_string())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn aggregate_line(name: &str, values: &[f64]) -> String {
    if values.is_empty() {
        return format!("    \"{name}\": null");
    }
    let (mean, std) = mean_std(values);
    format!("    \"{name}\": {{ \"mean\": {mean}, \"std\": {std} }}")
}

fn summary_json(config: &TrainConfig, outcomes: &[SeedOutcome]) -> String {
    let mut s = String::from("{\n");
    writeln!(s, "  \"algorithm\": \"{}\",", config.algorithm.name()).unwrap();
    writeln!(s, "  \"neighborhood\": \"{}\",", config.neighborhood.name()).unwrap();
    writeln!(s, "  \"steps\": {},", config.steps).unwrap();
    let diverged: Vec<String> = outcomes
        .iter()
        .filter(|o| o.diverged.is_some())
        .map(|o| o.seed.to_string())
        .collect();
    writeln!(s, "  \"diverged_seeds\": [{}],", diverged.join(", ")).unwrap();
    writeln!(s, "  \"per_seed\": [").unwrap();
    for (i, o) in outcomes.iter().enumerate() {
        let comma = if i + 1 == outcomes.len() { "" } else { "," };
        if let Some(why) = &o.diverged {
            writeln!(
                s,
                "    {{ \"seed\": {}, \"diverged\": \"{}\" }}{comma}",
                o.seed,
                why.replace('"', "'")
            )
            .unwrap();
            continue;
        }
        writeln!(
            s,
            "    {{ \"seed\": {}, \"final_val_loss\": {}, \"steps_plus10\": {}, \
             \"steps_plus20\": {}, \"perplexity\": {}, \"utilization\": {}, \
             \"topographic_error\": {}, \"quantization_error\": {} }}{comma}",
            o.seed,
            json_f64(o.final_val_loss),
            json_u64(o.steps_plus10),
            json_u64(o.steps_plus20),
            json_f64(o.perplexity),
            json_f64(o.utilization),
            json_f64(o.topographic_error),
            json_f64(o.quantization_error),
        )
        .unwrap();
    }
    writeln!(s, "  ],").unwrap();
    writeln!(s, "  \"aggregate\": {{").unwrap();
    let healthy: Vec<&SeedOutcome> = outcomes.iter().filter(|o| o.diverged.is_none()).collect();
    let collect = |f: &dyn Fn(&SeedOutcome) -> Option<f64>| -> Vec<f64> {
        healthy.iter().filter_map(|o| f(o)).collect()
    };
    let lines = [
        aggregate_line("final_val_loss", &collect(&|o| o.final_val_loss)),
        aggregate_line("steps_plus10", &collect(&|o| o.steps_plus10.map(|v| v as f64))),
        aggregate_line("steps_plus20", &collect(&|o| o.steps_plus20.map(|v| v as f64))),
        aggregate_line("perplexity", &collect(&|o| o.perplexity)),
        aggregate_line("utilization", &collect(&|o| o.utilization)),
        aggregate_line("topographic_error", &collect(&|o| o.topographic_error)),
        aggregate_line("quantization_error", &collect(&|o| o.quantization_error)),
    ];
    writeln!(s, "{}", lines.join(",\n")).unwrap();
    writeln!(s, "  }}").unwrap();
    s.push_str("}\n");
    s
}

/// Run all seeds of a config and write the run directory. Returns the
/// per-seed outcomes for callers that want them (sweep, tests).
pub fn run_train(config: &TrainConfig, out: &Path) -> Result<Vec<SeedOutcome>> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.txt"), config.serialize())?;
    let runs: Vec<(u64, Result<SeedRun>)> = config
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(config, seed)))
        .collect();
    let mut outcomes = Vec::with_capacity(runs.len());
    for (seed, run) in runs {
        let run = run?;
        let dir = out.join(format!("seed-{seed}"));
        fs::create_dir_all(&dir)?;
        if let Some(trace) = &run.trace {
            fs::write(dir.join("trace.csv"), trace_csv(trace))?;
        }
        persist::save_codebook(
            run.quantizer.codebook(),
            run.quantizer.schedule().grid(),
            &dir.join("codebook.kvq"),
        )?;
        persist::save_model(&run.model, &dir.join("model.kvm"))?;
        outcomes.push(run.outcome);
    }
    fs::write(out.join("summary.json"), summary_json(config, &outcomes))?;
    Ok(outcomes)
}

fn load_config(path: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<TrainConfig> {
    let mut config = TrainConfig::parse(&fs::read_to_string(path)?)?;
    for o in overrides {
        config.apply_override(o)?;
    }
    if let Some(out) = out {
        config.out = out.to_string_lossy().into_owned();
    }
    Ok(config)
}

pub fn cmd_train(path: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<()> {
    let config = load_config(path, overrides, out)?;
    let out_dir = PathBuf::from(&config.out);
    let outcomes = run_train(&config, &out_dir)?;
    for o in &outcomes {
        match &o.diverged {
            Some(why) => println!("seed {}: diverged ({why})", o.seed),
            None => println!(
                "seed {}: val_loss = {}, perplexity = {}, topographic_error = {}",
                o.seed,
                json_f64(o.final_val_loss),
                json_f64(o.perplexity),
                json_f64(o.topographic_error)
            ),
        }
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

/// Cross product of the `[sweep]` axes, in file order.
pub fn sweep_cells(axes: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in axes {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut c = cell.clone();
                c.push((key.clone(), v.clone()));
                next.push(c);
            }
        }
        cells = next;
    }
    cells
}

fn cell_dir_name(cell: &[(String, String)]) -> String {
    cell.iter()
        .map(|(k, v)| format!("{k}-{}", v.replace(['/', ' '], "_")))
        .collect::<Vec<_>>()
        .join("_")
}

pub fn cmd_sweep(path: &Path, overrides: &[String], out: Option<PathBuf>) -> Result<()> {
    let base = load_config(path, overrides, out)?;
    if base.sweep.is_empty() {
        return Err(KvqError::Config("config has no [sweep] section".into()));
    }
    let out_dir = PathBuf::from(&base.out);
    fs::create_dir_all(&out_dir)?;
    let mut index = String::new();
    for cell in sweep_cells(&base.sweep) {
        let mut config = base.clone();
        config.sweep.clear();
        for (k, v) in &cell {
            config.apply_override(&format!("{k}={v}"))?;
        }
        let name = cell_dir_name(&cell);
        let cell_out = out_dir.join(&name);
        config.out = cell_out.to_string_lossy().into_owned();
        run_train(&config, &cell_out)?;
        writeln!(index, "{name}").unwrap();
        println!("finished {name}");
    }
    fs::write(out_dir.join("cells.txt"), index)?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

/// Locate config.txt in the seed directory or its parent run directory.
fn find_config(run_dir: &Path) -> Result<TrainConfig> {
    for dir in [Some(run_dir), run_dir.parent()].into_iter().flatten() {
        let candidate = dir.join("config.txt");
        if candidate.exists() {
            return TrainConfig::parse(&fs::read_to_string(candidate)?);
        }
    }
    Err(KvqError::Config(format!(
        "no config.txt in {} or its parent",
        run_dir.display()
    )))
}

fn load_run(run_dir: &Path) -> Result<(ToyAutoencoder, Codebook, GridTopology, TrainConfig)> {
    let (codebook, grid) = persist::load_codebook(&run_dir.join("codebook.kvq"))?;
    let model = persist::load_model(&run_dir.join("model.kvm"))?;
    let config = find_config(run_dir)?;
    Ok((model, codebook, grid, config))
}

pub fn cmd_render_grid(run_dir: &Path, out: Option<PathBuf>) -> Result<()> {
    let (model, codebook, grid, config) = load_run(run_dir)?;
    let tiles = vqlayer::decode_grid(&model, &codebook)?;
    let centered = !matches!(config.data, DataConfig::Cifar10 { normalize: false, .. });
    let bytes = ppm::render_grid(&tiles, &grid, centered)?;
    let out = out.unwrap_or_else(|| run_dir.join("grid.ppm"));
    fs::write(&out, bytes)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn cmd_perturb(run_dir: &Path, offset: i64, mode: &str, inputs: usize) -> Result<()> {
    let (model, codebook, grid, config) = load_run(run_dir)?;
    let mode = match mode {
        "grid-clamp" => PerturbMode::GridClamp,
        "index-wrap" => PerturbMode::IndexWrap,
        other => return Err(KvqError::Config(format!("unknown perturb mode {other:?}"))),
    };
    let source = build_source(&config, derive_seed(config.seeds[0], 0))?;
    let dim = source.dim();
    let mut base_err = 0.0;
    let mut pert_err = 0.0;
    let mut seen = 0usize;
    let mut b = EVAL_STREAM_BASE;
    while seen < inputs {
        for x in source.batch(b).chunks_exact(dim) {
            if seen == inputs {
                break;
            }
            let fwd = model.forward(x, &codebook)?;
            base_err += fwd.recon_loss;
            let shifted = vqlayer::perturb_code(&fwd.code, offset, &grid, mode)?;
            let xhat = model.decode_latent(&shifted, &codebook)?;
            pert_err += x
                .iter()
                .zip(&xhat)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            seen += 1;
        }
        b += 1;
    }
    let base = base_err / inputs as f64;
    let pert = pert_err / inputs as f64;
    println!("inputs = {inputs}, offset = {offset}");
    println!("baseline mse = {base}");
    println!("perturbed mse = {pert}");
    println!("ratio = {}", pert / base);
    Ok(())
}

pub fn cmd_inspect(path: &Path) -> Result<()> {
    let (codebook, grid) = persist::load_codebook(path)?;
    let (w, h) = grid.extents();
    println!("K = {}, dim = {}", codebook.size(), codebook.dim());
    println!("grid = {}D, {w} x {h}", grid.dimensionality());
    println!(
        "metric = {}",
        match codebook.metric() {
            Metric::Euclidean => "euclidean",
            Metric::NegativeDot => "negative-dot",
        }
    );
    let weights = codebook.weights();
    let min = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm = weights
        .chunks_exact(codebook.dim())
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / codebook.size() as f64;
    println!("weight range = [{min}, {max}], mean prototype norm = {norm}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_cross_product_order() {
        let axes = vec![
            ("a".to_string(), vec!["1".to_string(), "2".to_string()]),
            ("b".to_string(), vec!["x".to_string()]),
        ];
        let cells = sweep_cells(&axes);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0], vec![("a".into(), "1".into()), ("b".into(), "x".into())]);
        assert_eq!(cell_dir_name(&cells[1]), "a-2_b-x");
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
        assert_ne!(derive_seed(0, 0), derive_seed(1, 0));
    }
}
