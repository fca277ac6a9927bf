use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::{mh_accept, Branch, MoveKind, MoveOutcome};
use crate::dynamics::VelocityConditional;
use crate::filtering::ResidualFrame;
use crate::gaussian::InfoGaussian;
use crate::model::{ModelParams, TargetState, Track};
use crate::representation::TrackSet;
use crate::state::{ChainState, Proposal};

/// Head/tail weight of pairing a state at `t` with one at `t + 1`.
fn pair_weight(a: &TargetState, b: &TargetState) -> f64 {
    let d = ((a.s[0] - b.s[0]).powi(2) + (a.s[1] - b.s[1]).powi(2)).sqrt();
    1.0 / (1.0 + d)
}

/// log probability of choosing head `i` and tail `j` at frame `t`.
fn log_select(tracks: &TrackSet, t: usize, i: usize, j: usize) -> f64 {
    let heads = tracks.alive_at(t);
    let tails = tracks.alive_at(t + 1);
    if heads.is_empty() || tails.is_empty() || tracks.frames() < 2 {
        return f64::NEG_INFINITY;
    }
    let x = tracks.get(i).state_at(t).expect("head alive at t");
    let total: f64 = tails.iter().map(|&k| pair_weight(x, tracks.get(k).state_at(t + 1).unwrap())).sum();
    let w = pair_weight(x, tracks.get(j).state_at(t + 1).expect("tail alive at t + 1"));
    -((tracks.frames() - 1) as f64).ln() - (heads.len() as f64).ln() + (w / total).ln()
}

/// Tracks produced by joining the head of `i` (up to `t`) with the tail of
/// `j` (from `t + 1`), together with the complementary pair. Kinematic values
/// are copied and must be refreshed.
fn rewired(tracks: &TrackSet, t: usize, i: usize, j: usize) -> Vec<Track> {
    let ti = tracks.get(i);
    let tj = tracks.get(j);
    let head = &ti.states[..=t - ti.birth];
    let tail = &tj.states[t + 1 - tj.birth..];
    if i == j {
        return vec![Track::new(ti.birth, head.to_vec()), Track::new(t + 1, tail.to_vec())];
    }
    let mut joined = head.to_vec();
    joined.extend_from_slice(tail);
    let mut out = vec![Track::new(ti.birth, joined)];
    let other_head: &[TargetState] = if tj.birth <= t { &tj.states[..=t - tj.birth] } else { &[] };
    let other_tail: &[TargetState] = if ti.end() > t + 1 { &ti.states[t + 1 - ti.birth..] } else { &[] };
    if !other_head.is_empty() || !other_tail.is_empty() {
        let mut states = other_head.to_vec();
        states.extend_from_slice(other_tail);
        let birth = if other_head.is_empty() { t + 1 } else { tj.birth };
        out.push(Track::new(birth, states));
    }
    out
}

/// Head and tail indices in `after` that undo the rewiring of `i` and `j`.
fn reverse_pair(before: &TrackSet, after: &TrackSet, t: usize, i: usize, j: usize) -> (usize, usize) {
    let ti = before.get(i);
    let tj = before.get(j);
    let head_s = ti.state_at(t).unwrap().s;
    let tail_s = tj.state_at(t + 1).unwrap().s;
    let (h, tl) = if let Some(x) = ti.state_at(t + 1) {
        (head_s, x.s)
    } else if let Some(x) = tj.state_at(t) {
        (x.s, tail_s)
    } else {
        (head_s, tail_s)
    };
    let find = |f: usize, s: [f64; 2]| after.find_at(f, s).expect("rewired track is present");
    (find(t, h), find(t + 1, tl))
}

/// Refresh law of velocities and intensities given the positions of a set of
/// tracks, with every rewired track removed from the residual.
struct Refresh {
    velocities: Vec<VelocityConditional>,
    intensities: InfoGaussian,
}

impl Refresh {
    fn new(shapes: &[Track], residual: &[ResidualFrame], params: &ModelParams) -> Option<Self> {
        let psi = &params.psi;
        let g = &params.geometry;
        let velocities = shapes
            .iter()
            .map(|k| VelocityConditional::new(&k.states.iter().map(|x| x.s).collect::<Vec<_>>(), params).ok())
            .collect::<Option<Vec<_>>>()?;
        let mut offset = Vec::with_capacity(shapes.len());
        let mut dim = 0;
        for k in shapes {
            offset.push(dim);
            dim += k.len();
        }
        let mut prec = DMatrix::zeros(dim, dim);
        let mut eta = DVector::zeros(dim);
        for (k, o) in shapes.iter().zip(&offset) {
            prec[(*o, *o)] += 1.0 / psi.var_bi;
            eta[*o] += psi.mu_bi / psi.var_bi;
            for m in 1..k.len() {
                let (a, b) = (o + m - 1, o + m);
                prec[(a, a)] += 1.0 / psi.var_i;
                prec[(b, b)] += 1.0 / psi.var_i;
                prec[(a, b)] -= 1.0 / psi.var_i;
                prec[(b, a)] -= 1.0 / psi.var_i;
            }
        }
        for res in residual {
            let t = res.t;
            let w = 1.0 / params.noise_var[t];
            let mut alive = Vec::new();
            for (k, o) in shapes.iter().zip(&offset) {
                if let Some(x) = k.state_at(t) {
                    let mut fp = Vec::new();
                    g.for_each_footprint(x.s, |idx, h| fp.push((idx, h)));
                    alive.push((o + t - k.birth, fp));
                }
            }
            for (a, fa) in &alive {
                eta[*a] += w * fa.iter().map(|&(idx, h)| h * res.values[idx]).sum::<f64>();
                for (b, fb) in &alive {
                    prec[(*a, *b)] += w * overlap(fa, fb);
                }
            }
        }
        Some(Self { velocities, intensities: InfoGaussian::new(prec, eta)? })
    }

    fn sample<R: Rng + ?Sized>(&self, shapes: &[Track], rng: &mut R) -> Vec<Track> {
        let a = self.intensities.sample(rng);
        let mut off = 0;
        shapes
            .iter()
            .zip(&self.velocities)
            .map(|(k, vc)| {
                let v = vc.sample(rng);
                let states = k
                    .states
                    .iter()
                    .zip(v)
                    .enumerate()
                    .map(|(m, (x, v))| TargetState::new(a[off + m], x.s, v))
                    .collect();
                off += k.len();
                Track::new(k.birth, states)
            })
            .collect()
    }

    fn log_density(&self, tracks: &[Track]) -> f64 {
        let a = DVector::from_iterator(
            tracks.iter().map(|k| k.len()).sum(),
            tracks.iter().flat_map(|k| k.states.iter().map(|x| x.a)),
        );
        let lv: f64 = tracks
            .iter()
            .zip(&self.velocities)
            .map(|(k, vc)| vc.log_density(&k.states.iter().map(|x| x.v).collect::<Vec<_>>()))
            .sum();
        self.intensities.log_density(&a) + lv
    }
}

/// Dot product of two footprints given as ascending (pixel, value) lists.
fn overlap(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Residual frames with the tracks in `removed` taken out, over every frame
/// any of them occupies.
fn cleared_residual(state: &ChainState, removed: &[&Track]) -> Vec<ResidualFrame> {
    let t0 = removed.iter().map(|k| k.birth).min().unwrap();
    let t1 = removed.iter().map(|k| k.end()).max().unwrap();
    (t0..t1)
        .map(|t| state.scene.residual_frame(t, removed.iter().filter_map(|k| k.state_at(t))))
        .collect()
}

fn affected(i: usize, j: usize) -> Vec<usize> {
    if i == j {
        vec![i]
    } else {
        vec![i, j]
    }
}

/// log r for rewiring head `i` and tail `j` at frame `t` into `refreshed`,
/// whose positions must equal those of the rewired shapes.
pub fn swap_log_ratio(state: &ChainState, t: usize, i: usize, j: usize, refreshed: Vec<Track>) -> (Proposal, f64) {
    let remove = affected(i, j);
    let old: Vec<&Track> = remove.iter().map(|&k| state.tracks.get(k)).collect();
    let residual = cleared_residual(state, &old);
    let shapes = rewired(&state.tracks, t, i, j);
    let log_fwd = log_select(&state.tracks, t, i, j)
        + Refresh::new(&shapes, &residual, &state.params).map_or(f64::NEG_INFINITY, |r| r.log_density(&refreshed));
    let prop = state.propose(&remove, refreshed);
    let (ri, rj) = reverse_pair(&state.tracks, &prop.tracks, t, i, j);
    let back: Vec<Track> = rewired(&prop.tracks, t, ri, rj);
    let olds: Vec<Track> = back
        .iter()
        .map(|k| (*old.iter().find(|o| o.birth == k.birth && o.first().s == k.first().s).expect("reverse restores")).clone())
        .collect();
    let log_bwd = log_select(&prop.tracks, t, ri, rj)
        + Refresh::new(&back, &residual, &state.params).map_or(f64::NEG_INFINITY, |r| r.log_density(&olds));
    let lr = state.log_ratio(&prop) + log_bwd - log_fwd;
    (prop, lr)
}

/// Exchanges the futures of two tracks after a frame, merges two tracks or
/// splits one, then refreshes the velocities and intensities of the result.
pub fn state_swap_move<R: Rng + ?Sized>(state: &mut ChainState, rng: &mut R) -> MoveOutcome {
    let n = state.params.frames();
    if n < 2 {
        return MoveOutcome::noop(MoveKind::Swap, Branch::Swap);
    }
    let t = rng.random_range(0..n - 1);
    let heads = state.tracks.alive_at(t);
    let tails = state.tracks.alive_at(t + 1);
    if heads.is_empty() || tails.is_empty() {
        return MoveOutcome::noop(MoveKind::Swap, Branch::Swap);
    }
    let i = heads[rng.random_range(0..heads.len())];
    let x = state.tracks.get(i).state_at(t).unwrap();
    let weights: Vec<f64> = tails.iter().map(|&k| pair_weight(x, state.tracks.get(k).state_at(t + 1).unwrap())).collect();
    let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
    let mut j = *tails.last().unwrap();
    for (k, w) in tails.iter().zip(&weights) {
        if u < *w {
            j = *k;
            break;
        }
        u -= w;
    }
    let old: Vec<&Track> = affected(i, j).into_iter().map(|k| state.tracks.get(k)).collect();
    let residual = cleared_residual(state, &old);
    let shapes = rewired(&state.tracks, t, i, j);
    let Some(refresh) = Refresh::new(&shapes, &residual, &state.params) else {
        return MoveOutcome::noop(MoveKind::Swap, Branch::Swap);
    };
    let refreshed = refresh.sample(&shapes, rng);
    let (prop, log_ratio) = swap_log_ratio(state, t, i, j, refreshed);
    let accepted = mh_accept(log_ratio, rng);
    if accepted {
        state.commit(prop);
    }
    MoveOutcome { kind: MoveKind::Swap, branch: Branch::Swap, log_ratio, accepted, target: Some(i), frame: Some(t) }
}
