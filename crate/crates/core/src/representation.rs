//! The two equivalent descriptions of a multi-target configuration: labelled
//! tracks, and per-frame survival vectors with stacked states.
//!
//! A [`TrackSet`] is always canonical: tracks sorted by birth frame and then
//! by the newborn ordering rule, so label `k` is simply index `k - 1`.

use crate::error::{Error, Result};
use crate::model::{order_cmp, ImageStack, ModelParams, TargetState, Track};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackSet {
    tracks: Vec<Track>,
    frames: usize,
}

fn canonical_cmp(x: &Track, y: &Track) -> std::cmp::Ordering {
    x.birth.cmp(&y.birth).then_with(|| order_cmp(x.first(), y.first()))
}

impl TrackSet {
    pub fn empty(frames: usize) -> Self {
        Self { tracks: Vec::new(), frames }
    }

    /// Validates the tracks against `frames` and sorts them canonically.
    pub fn from_tracks(mut tracks: Vec<Track>, frames: usize) -> Result<Self> {
        for k in &tracks {
            if k.is_empty() {
                return Err(Error::Invariant("track without states".into()));
            }
            if k.end() > frames {
                return Err(Error::Dimension(format!(
                    "track born at frame {} with {} states exceeds {frames} frames",
                    k.birth,
                    k.len()
                )));
            }
            if !k.states.iter().all(TargetState::is_finite) {
                return Err(Error::Invariant("non-finite target state".into()));
            }
        }
        tracks.sort_by(canonical_cmp);
        Ok(Self { tracks, frames })
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn into_tracks(self) -> Vec<Track> {
        self.tracks
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Track {
        &self.tracks[idx]
    }

    /// 1-based label of the track at `idx`.
    pub fn label(idx: usize) -> usize {
        idx + 1
    }

    /// New set with the track at `idx` replaced (or removed) and `added`
    /// inserted, re-canonicalised.
    pub fn edited(&self, remove: &[usize], added: Vec<Track>) -> Self {
        let mut tracks: Vec<Track> = self
            .tracks
            .iter()
            .enumerate()
            .filter(|(i, _)| !remove.contains(i))
            .map(|(_, k)| k.clone())
            .collect();
        tracks.extend(added);
        tracks.sort_by(canonical_cmp);
        Self { tracks, frames: self.frames }
    }

    /// Index of the track whose state at frame `t` has exactly position `s`.
    pub fn find_at(&self, t: usize, s: [f64; 2]) -> Option<usize> {
        self.tracks
            .iter()
            .position(|k| k.state_at(t).is_some_and(|x| x.s == s))
    }

    /// Indices of tracks alive at frame `t`.
    pub fn alive_at(&self, t: usize) -> Vec<usize> {
        (0..self.tracks.len()).filter(|&i| self.tracks[i].alive_at(t)).collect()
    }

    /// Newborn count at frame `t`.
    pub fn births_at(&self, t: usize) -> usize {
        self.tracks.iter().filter(|k| k.birth == t).count()
    }

    pub fn count_at(&self, t: usize) -> usize {
        self.tracks.iter().filter(|k| k.alive_at(t)).count()
    }
}

/// Discrete and continuous configuration of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameConfig {
    /// C_t: one flag per target of the previous frame (empty at frame 0).
    pub survival: Vec<bool>,
    /// K_t^b.
    pub births: usize,
    /// X_t: survivors first, then newborns.
    pub states: Vec<TargetState>,
}

impl FrameConfig {
    pub fn survivors(&self) -> usize {
        self.survival.iter().filter(|&&c| c).count()
    }

    /// I_t: for each survivor, its slot in the previous frame.
    pub fn ancestors(&self) -> Vec<usize> {
        self.survival
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn newborns(&self) -> &[TargetState] {
        &self.states[self.survivors()..]
    }
}

/// The (Z_{1:n}, X_{1:n}) description.
#[derive(Debug, Clone, PartialEq)]
pub struct MttSequence {
    pub frames: Vec<FrameConfig>,
}

impl MttSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks the structural invariants; the ordering rule is checked by
    /// [`MttSequence::ordered`].
    pub fn check_structure(&self) -> Result<()> {
        let mut prev = 0;
        for (t, f) in self.frames.iter().enumerate() {
            if f.survival.len() != prev {
                return Err(Error::Invariant(format!(
                    "frame {t}: survival vector has {} entries, previous frame has {prev} targets",
                    f.survival.len()
                )));
            }
            if f.states.len() != f.survivors() + f.births {
                return Err(Error::Invariant(format!(
                    "frame {t}: {} states for {} survivors and {} births",
                    f.states.len(),
                    f.survivors(),
                    f.births
                )));
            }
            prev = f.states.len();
        }
        Ok(())
    }

    /// Newborns of every frame strictly ascending under the ordering rule.
    pub fn ordered(&self) -> bool {
        self.frames.iter().all(|f| {
            f.newborns()
                .windows(2)
                .all(|w| order_cmp(&w[0], &w[1]) == std::cmp::Ordering::Less)
        })
    }

    /// (Σ_t K_t^s, Σ_t (K_{t−1}^x − K_t^s), Σ_t K_t^b).
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut surv = 0;
        let mut deaths = 0;
        let mut births = 0;
        for f in &self.frames {
            let s = f.survivors();
            surv += s;
            deaths += f.survival.len() - s;
            births += f.births;
        }
        (surv, deaths, births)
    }
}

pub fn tracks_from_mtt(seq: &MttSequence) -> Result<TrackSet> {
    seq.check_structure()?;
    if !seq.ordered() {
        return Err(Error::Invariant("newborns violate the ordering rule".into()));
    }
    let mut tracks: Vec<Track> = Vec::new();
    // Track index occupying each slot of the previous frame.
    let mut slots: Vec<usize> = Vec::new();
    for (t, f) in seq.frames.iter().enumerate() {
        let mut next = Vec::with_capacity(f.states.len());
        for (i, anc) in f.ancestors().into_iter().enumerate() {
            let k = slots[anc];
            tracks[k].states.push(f.states[i]);
            next.push(k);
        }
        for x in f.newborns() {
            next.push(tracks.len());
            tracks.push(Track::new(t, vec![*x]));
        }
        slots = next;
    }
    TrackSet::from_tracks(tracks, seq.frames.len())
}

pub fn mtt_from_tracks(tracks: &[Track], n: usize) -> Result<MttSequence> {
    let set = TrackSet::from_tracks(tracks.to_vec(), n)?;
    let tracks = set.tracks();
    let mut frames = Vec::with_capacity(n);
    let mut slots: Vec<usize> = Vec::new();
    for t in 0..n {
        let mut survival = Vec::with_capacity(slots.len());
        let mut next = Vec::new();
        let mut states = Vec::new();
        for &k in &slots {
            let alive = tracks[k].alive_at(t);
            survival.push(alive);
            if alive {
                next.push(k);
                states.push(tracks[k].states[t - tracks[k].birth]);
            }
        }
        let mut births = 0;
        for (k, track) in tracks.iter().enumerate().filter(|(_, k)| k.birth == t) {
            next.push(k);
            states.push(*track.first());
            births += 1;
        }
        frames.push(FrameConfig { survival, births, states });
        slots = next;
    }
    Ok(MttSequence { frames })
}

/// log p_θ(z, x, y) evaluated on the frame-indexed description; −∞ when the
/// ordering rule is violated.
pub fn log_joint_mtt(seq: &MttSequence, params: &ModelParams, y: &ImageStack) -> Result<f64> {
    seq.check_structure()?;
    if seq.len() != params.frames() {
        return Err(Error::Dimension(format!("{} frames vs {} in model", seq.len(), params.frames())));
    }
    if !seq.ordered() {
        return Ok(f64::NEG_INFINITY);
    }
    let set = tracks_from_mtt(seq)?;
    crate::model::log_joint(set.tracks(), params, y)
}
