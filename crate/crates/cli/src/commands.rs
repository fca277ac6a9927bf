use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use log::{info, warn};
use mtt_core::io::{
    read_diagnostics, read_params, read_stack, read_tracks_file, write_frame_dir, write_mts, DiagnosticsWriter,
    ParamsWriter, TracksWriter,
};
use mtt_core::metrics::{greedy_nn_tracker, histogram, ospa_tracks, GreedyConfig, ParamSummary};
use mtt_core::model::{render_frame, sample_images, sample_prior_tracks, states_at, ImageStack, ModelParams, Track};
use mtt_core::params::{surrogate_mle, Estimate};
use mtt_core::sampler::{init_chain, run_chain};
use mtt_core::scenario::{crossing_scenario, perturbed_params};
use mtt_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

const CONFIG_FILE: &str = "config.json";
const THETA_FILE: &str = "theta0.json";

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_params_json(path: &Path) -> Result<ModelParams> {
    let p: ModelParams = serde_json::from_reader(File::open(path)?)?;
    p.validate()?;
    Ok(p)
}

fn write_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    let mut w = TracksWriter::create(path)?;
    w.write(0, tracks)?;
    w.flush()
}

/// Synthetic data: the crossing scenario, or a prior draw when θ is given.
pub fn simulate(cfg: &RunConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let out = cfg.output()?;
    let (params, truth, y) = match &cfg.params {
        Some(_) => {
            let params = read_params_json(cfg.existing(&cfg.params, "params")?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = sample_prior_tracks(&params, &mut rng);
            let y = sample_images(&truth, &params, &mut rng);
            (params, truth, y)
        }
        None => {
            let s = crossing_scenario(seed, &cfg.scenario).ok_or_else(|| {
                Error::InvalidParams(format!("no scenario met the constraints in {} draws", cfg.scenario.max_attempts))
            })?;
            info!("scenario accepted after {} prior draws", s.attempts);
            (s.params, s.truth, s.y)
        }
    };
    let g = &params.geometry;
    let mut rendered = Vec::with_capacity(y.frames() * g.pixels());
    for t in 0..y.frames() {
        rendered.extend(render_frame(&states_at(&truth, t), t, &params));
    }
    let rendered = ImageStack::new(y.frames(), g.rows, g.cols, rendered)?;
    fs::create_dir_all(out)?;
    write_mts(&out.join("images.mts"), &y)?;
    write_frame_dir(&out.join("images"), &y)?;
    write_mts(&out.join("rendered.mts"), &rendered)?;
    write_frame_dir(&out.join("rendered"), &rendered)?;
    write_tracks(&out.join("truth.csv"), &truth)?;
    write_json(&out.join("params.json"), &params)?;
    write_json(&out.join(THETA_FILE), &perturbed_params(&params))?;
    println!("simulated {} tracks over {} frames into {}", truth.len(), y.frames(), out.display());
    Ok(())
}

fn chain_dir(out: &Path, chain: usize, chains: usize) -> PathBuf {
    if chains == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("chain_{}", chain + 1))
    }
}

fn run_one(cfg: &RunConfig, y: &ImageStack, theta: &ModelParams, default_n3: usize, chain: usize, dir: &Path) -> Result<()> {
    let sampler = cfg.sampler(default_n3)?;
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()?);
    rng.set_stream(chain as u64);
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    write_json(&dir.join(THETA_FILE), theta)?;
    let mut tracks = TracksWriter::create(&dir.join("tracks.csv"))?;
    let mut diags = DiagnosticsWriter::create(&dir.join("diagnostics.jsonl"))?;
    let mut params = ParamsWriter::create(&dir.join("params.csv"), theta.frames())?;
    let state = init_chain(y, theta.clone())?;
    let end = run_chain(y, state, &sampler, &mut rng, |s| {
        let iter = s.diagnostics.iter;
        tracks.write(iter, s.tracks.tracks())?;
        diags.write(&s.diagnostics)?;
        params.write(iter, &s.params)
    })?;
    tracks.flush()?;
    diags.flush()?;
    params.flush()?;
    let st = end.stats;
    info!(
        "chain {} done: K = {}, acceptance bd {:.3} ms {:.3} os {:.3} ss {:.3}",
        chain + 1,
        end.tracks.len(),
        st.birth_death.rate(),
        st.multistep.rate(),
        st.onestep.rate(),
        st.swap.rate()
    );
    Ok(())
}

/// Runs `cfg.chains` chains concurrently. Tracking holds θ fixed; learning
/// adds the parameter loop.
pub fn sample(cfg: &RunConfig, learn: bool) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.seed()?;
    if !learn && cfg.n3.is_some_and(|n| n > 0) {
        warn!("track holds θ fixed; ignoring n3 = {}", cfg.n3.unwrap_or(0));
        cfg.n3 = Some(0);
    }
    let default_n3 = usize::from(learn);
    cfg.sampler(default_n3)?;
    let out = cfg.output()?.to_path_buf();
    let y = read_stack(cfg.existing(&cfg.input, "input")?)?;
    let theta = read_params_json(cfg.existing(&cfg.params, "params")?)?;
    y.check_compatible(&theta)?;
    let k = cfg.chains;
    let results: Vec<Result<()>> = thread::scope(|s| {
        let handles: Vec<_> = (0..k)
            .map(|c| {
                let (cfg, y, theta, dir) = (&cfg, &y, &theta, chain_dir(&out, c, k));
                s.spawn(move || run_one(cfg, y, theta, default_n3, c, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;
    println!("wrote {k} chain(s) of {} iterations to {}", cfg.iterations, out.display());
    Ok(())
}

fn burn(len: usize, fraction: f64) -> usize {
    ((fraction * len as f64).floor() as usize).min(len.saturating_sub(1))
}

/// Per-frame OSPA of the post-burn-in samples, a per-sample OSPA trace and,
/// when the images are given, the greedy baseline.
pub fn evaluate(cfg: &RunConfig) -> Result<()> {
    let run = cfg.existing(&cfg.run, "run")?;
    let truth = read_tracks_file(cfg.existing(&cfg.truth, "truth")?)?.remove(&0).unwrap_or_default();
    let theta = read_params_json(&run.join(THETA_FILE))?;
    let q = cfg.ospa()?;
    let n = theta.frames();
    let samples = read_tracks_file(&run.join("tracks.csv"))?;
    let iters = read_diagnostics(File::open(run.join("diagnostics.jsonl"))?)?.len();
    if iters == 0 {
        return Err(Error::Format("run has no samples".into()));
    }
    let empty = Vec::new();
    let per_sample: Vec<Vec<f64>> =
        (0..iters).map(|i| ospa_tracks(samples.get(&i).unwrap_or(&empty), &truth, n, q)).collect();
    let b = burn(iters, cfg.burn_in);
    let kept = &per_sample[b..];
    let mcmc: Vec<f64> = (0..n).map(|t| kept.iter().map(|o| o[t]).sum::<f64>() / kept.len() as f64).collect();
    let greedy = match &cfg.input {
        Some(_) => {
            let y = read_stack(cfg.existing(&cfg.input, "input")?)?;
            y.check_compatible(&theta)?;
            Some(ospa_tracks(&greedy_nn_tracker(&y, &theta, &GreedyConfig::default())?, &truth, n, q))
        }
        None => None,
    };
    let mut w = csv::Writer::from_path(run.join("ospa.csv"))?;
    w.write_record(["frame", "mcmc", "greedy"])?;
    for t in 0..n {
        let g = greedy.as_ref().map_or(String::new(), |g| g[t].to_string());
        w.write_record([(t + 1).to_string(), mcmc[t].to_string(), g])?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(run.join("ospa_trace.csv"))?;
    w.write_record(["iter", "ospa"])?;
    for (i, o) in per_sample.iter().enumerate() {
        w.write_record([i.to_string(), (o.iter().sum::<f64>() / n as f64).to_string()])?;
    }
    w.flush()?;
    let mean = mcmc.iter().sum::<f64>() / n as f64;
    match greedy {
        Some(g) => println!("mean OSPA: mcmc {mean:.4}, greedy {:.4}", g.iter().sum::<f64>() / n as f64),
        None => println!("mean OSPA: mcmc {mean:.4}"),
    }
    Ok(())
}

/// Surrogate-MLE values laid out like the θ columns.
fn estimate_cell(e: Option<&Estimate>) -> String {
    match e {
        Some(Estimate::Value(v)) => v.to_string(),
        Some(Estimate::ZeroLimit) => "0".into(),
        _ => String::new(),
    }
}

/// Summary tables: log-joint trace, parameter summaries and histograms,
/// per-frame count modes.
pub fn export(cfg: &RunConfig) -> Result<()> {
    let run = cfg.existing(&cfg.run, "run")?;
    let run_cfg = RunConfig::load(&run.join(CONFIG_FILE))?;
    let theta = read_params_json(&run.join(THETA_FILE))?;
    let n = theta.frames();
    let diags = read_diagnostics(File::open(run.join("diagnostics.jsonl"))?)?;
    if diags.is_empty() {
        return Err(Error::Format("run has no samples".into()));
    }
    let b = burn(diags.len(), cfg.burn_in);

    let mut w = csv::Writer::from_path(run.join("trace.csv"))?;
    w.write_record(["iter", "log_joint", "K"])?;
    for d in &diags {
        w.write_record([d.iter.to_string(), d.log_joint.to_string(), d.k.to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(run.join("counts.csv"))?;
    w.write_record(["frame", "mode"])?;
    for t in 0..n {
        let mut hist = BTreeMap::new();
        for d in &diags[b..] {
            *hist.entry(d.counts[t]).or_insert(0usize) += 1;
        }
        let mode = hist.into_iter().max_by(|x, y| x.1.cmp(&y.1).then(y.0.cmp(&x.0))).map_or(0, |(k, _)| k);
        w.write_record([(t + 1).to_string(), mode.to_string()])?;
    }
    w.flush()?;

    let mle = match (&cfg.truth, &cfg.input) {
        (Some(_), Some(_)) => {
            let truth = read_tracks_file(cfg.existing(&cfg.truth, "truth")?)?.remove(&0).unwrap_or_default();
            let y = read_stack(cfg.existing(&cfg.input, "input")?)?;
            y.check_compatible(&theta)?;
            let model = run_cfg.observation_model;
            Some(surrogate_mle(&truth, &y, &theta, model).by_name(n, model))
        }
        _ => None,
    };

    let (header, rows) = read_params(File::open(run.join("params.csv"))?)?;
    let kept = &rows[b.min(rows.len().saturating_sub(1))..];
    let mut summary = csv::Writer::from_path(run.join("param_summary.csv"))?;
    summary.write_record(["name", "mean", "std", "mode", "mle"])?;
    let mut hist = csv::Writer::from_path(run.join("histograms.csv"))?;
    hist.write_record(["name", "bin", "lo", "hi", "count"])?;
    for (col, name) in header.iter().enumerate().skip(1) {
        let xs: Vec<f64> = kept.iter().map(|r| r[col]).collect();
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m).sqrt();
        let s = ParamSummary { name: name.clone(), mean, std, histogram: histogram(&xs, cfg.bins) };
        let mle_cell = estimate_cell(mle.as_ref().and_then(|m| m.get(name)));
        summary.write_record([name.clone(), mean.to_string(), std.to_string(), s.mode().to_string(), mle_cell])?;
        for (i, bin) in s.histogram.iter().enumerate() {
            hist.write_record([name.clone(), i.to_string(), bin.lo.to_string(), bin.hi.to_string(), bin.count.to_string()])?;
        }
    }
    summary.flush()?;
    hist.flush()?;
    println!("exported summaries of {} samples ({} after burn-in) to {}", diags.len(), diags.len() - b, run.display());
    Ok(())
}
