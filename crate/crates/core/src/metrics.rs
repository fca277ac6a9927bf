//! OSPA evaluation, chain summaries and a greedy nearest-neighbour baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filtering::{candidate_peaks, gamma_threshold, match_filter, residual_frame, FilteredFrame, GammaRule};
use crate::model::{DynamicsParams, ImageStack, ModelParams, TargetState, Track};
use crate::sampler::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspaParams {
    pub p: f64,
    pub c: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self { p: 1.0, c: 10.0 }
    }
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows ≤ cols`). Returns the column of each row.
pub fn assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    // Shortest augmenting paths with potentials, 1-based with a sentinel.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// OSPA distance between two finite point sets.
pub fn ospa_frame(est: &[[f64; 2]], truth: &[[f64; 2]], q: OspaParams) -> f64 {
    let (small, large) = if est.len() <= truth.len() { (est, truth) } else { (truth, est) };
    let n = large.len();
    if n == 0 {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|a| large.iter().map(|b| dist(*a, *b).min(q.c).powf(q.p)).collect())
        .collect();
    let assign = assignment(&cost);
    let matched: f64 = assign.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    let total = matched + q.c.powf(q.p) * (n - small.len()) as f64;
    (total / n as f64).powf(1.0 / q.p)
}

/// Positions of every track alive at frame `t`.
pub fn positions_at(tracks: &[Track], t: usize) -> Vec<[f64; 2]> {
    tracks.iter().filter_map(|k| k.state_at(t).map(|x| x.s)).collect()
}

/// Per-frame OSPA between two track sets.
pub fn ospa_tracks(est: &[Track], truth: &[Track], frames: usize, q: OspaParams) -> Vec<f64> {
    (0..frames).map(|t| ospa_frame(&positions_at(est, t), &positions_at(truth, t), q)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    /// Detection threshold on the matched-filtered image; `None` uses the
    /// γ rule of the sampler.
    pub threshold: Option<f64>,
    pub gate: f64,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self { threshold: None, gate: 3.0 }
    }
}

/// Sub-pixel offset of a peak from a parabola through three samples.
fn parabolic(l: Option<f64>, c: f64, r: Option<f64>) -> f64 {
    match (l, r) {
        (Some(l), Some(r)) => {
            let den = l - 2.0 * c + r;
            if den < 0.0 {
                (0.5 * (l - r) / den).clamp(-0.5, 0.5)
            } else {
                0.0
            }
        }
        _ => 0.0,
    }
}

fn detections(filt: &FilteredFrame, gamma: f64, params: &ModelParams) -> Vec<TargetState> {
    let g = &params.geometry;
    candidate_peaks(filt, gamma, None, g)
        .into_iter()
        .map(|(r, c)| {
            let f0 = filt.get(r, c).unwrap();
            let at = |dr: isize, dc: isize| {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr < 0 || cc < 0 {
                    None
                } else {
                    filt.get(rr as usize, cc as usize)
                }
            };
            let or = parabolic(at(-1, 0), f0, at(1, 0));
            let oc = parabolic(at(0, -1), f0, at(0, 1));
            TargetState::new(f0, [g.pixel_size * (r as f64 + or), g.pixel_size * (c as f64 + oc)], [0.0; 2])
        })
        .collect()
}

/// Frame-by-frame detection on the matched-filtered image followed by
/// greedy nearest-neighbour linking.
pub fn greedy_nn_tracker(y: &ImageStack, params: &ModelParams, cfg: &GreedyConfig) -> Result<Vec<Track>> {
    y.check_compatible(params)?;
    let mut tracks: Vec<Track> = Vec::new();
    for t in 0..params.frames() {
        let res = residual_frame(y.frame(t), &[], t, params);
        let filt = match_filter(&res, params);
        let gamma = cfg.threshold.unwrap_or_else(|| gamma_threshold(t, params, GammaRule::Min));
        let dets = detections(&filt, gamma, params);
        let active: Vec<usize> = (0..tracks.len()).filter(|&i| tracks[i].end() == t).collect();
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for &i in &active {
            for (j, d) in dets.iter().enumerate() {
                let e = dist(tracks[i].last().s, d.s);
                if e <= cfg.gate {
                    pairs.push((e, i, j));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut track_used = vec![false; tracks.len()];
        let mut det_used = vec![false; dets.len()];
        for (_, i, j) in pairs {
            if track_used[i] || det_used[j] {
                continue;
            }
            track_used[i] = true;
            det_used[j] = true;
            let prev = *tracks[i].last();
            let v = [(dets[j].s[0] - prev.s[0]) / params.delta, (dets[j].s[1] - prev.s[1]) / params.delta];
            if tracks[i].len() == 1 {
                tracks[i].states[0].v = v;
            }
            tracks[i].states.push(TargetState::new(dets[j].a, dets[j].s, v));
        }
        for (j, d) in dets.into_iter().enumerate() {
            if !det_used[j] {
                tracks.push(Track::new(t, vec![d]));
            }
        }
    }
    Ok(tracks)
}

/// Names of the θ components in the order of [`theta_values`].
pub fn theta_names(frames: usize) -> Vec<String> {
    let mut names: Vec<String> = DynamicsParams::NAMES.iter().map(|s| s.to_string()).collect();
    names.push("survival".into());
    names.push("birth_rate".into());
    for t in 1..=frames {
        names.push(format!("background_{t}"));
    }
    for t in 1..=frames {
        names.push(format!("noise_var_{t}"));
    }
    names
}

pub fn theta_values(p: &ModelParams) -> Vec<f64> {
    let mut v = p.psi.to_array().to_vec();
    v.push(p.survival);
    v.push(p.birth_rate);
    v.extend(&p.background);
    v.extend(&p.noise_var);
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub std: f64,
    pub histogram: Vec<Bin>,
}

impl ParamSummary {
    /// Centre of the fullest bin.
    pub fn mode(&self) -> f64 {
        let b = self
            .histogram
            .iter()
            .max_by(|a, b| a.count.cmp(&b.count).then(b.lo.total_cmp(&a.lo)))
            .expect("non-empty histogram");
        0.5 * (b.lo + b.hi)
    }
}

/// Fixed-width histogram over the sample range; a constant sample gives one
/// zero-width bin.
pub fn histogram(xs: &[f64], bins: usize) -> Vec<Bin> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi || bins <= 1 {
        return vec![Bin { lo, hi, count: xs.len() }];
    }
    let w = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins).map(|b| Bin { lo: lo + b as f64 * w, hi: lo + (b + 1) as f64 * w, count: 0 }).collect();
    for &x in xs {
        let b = (((x - lo) / w) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    /// (iteration, log-joint) for every sample.
    pub trace: Vec<(usize, f64)>,
    /// Post-burn-in average OSPA per frame, when truth is given.
    pub ospa: Option<Vec<f64>>,
    pub params: Vec<ParamSummary>,
    /// Posterior mode of the target count per frame.
    pub count_mode: Vec<usize>,
    pub burn_in: usize,
}

pub fn summarize_chain(
    samples: &[Sample],
    truth: Option<&[Track]>,
    burn_in: usize,
    q: OspaParams,
    bins: usize,
) -> Result<ChainReport> {
    if samples.is_empty() {
        return Err(Error::InvalidParams("empty sample stream".into()));
    }
    let kept = if burn_in < samples.len() { &samples[burn_in..] } else { &samples[samples.len() - 1..] };
    let frames = samples[0].params.frames();
    let trace = samples.iter().map(|s| (s.diagnostics.iter, s.diagnostics.log_joint)).collect();
    let ospa = truth.map(|tr| {
        let mut acc = vec![0.0; frames];
        for s in kept {
            for (a, d) in acc.iter_mut().zip(ospa_tracks(s.tracks.tracks(), tr, frames, q)) {
                *a += d;
            }
        }
        acc.iter().map(|a| a / kept.len() as f64).collect()
    });
    let names = theta_names(frames);
    let values: Vec<Vec<f64>> = kept.iter().map(|s| theta_values(&s.params)).collect();
    let params = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            let xs: Vec<f64> = values.iter().map(|v| v[i]).collect();
            let (mean, std) = mean_std(&xs);
            ParamSummary { name, mean, std, histogram: histogram(&xs, bins) }
        })
        .collect();
    let count_mode = (0..frames)
        .map(|t| {
            let mut hist = std::collections::BTreeMap::new();
            for s in kept {
                *hist.entry(s.tracks.count_at(t)).or_insert(0usize) += 1;
            }
            hist.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(k, _)| k).unwrap()
        })
        .collect();
    Ok(ChainReport { trace, ospa, params, count_mode, burn_in })
}
