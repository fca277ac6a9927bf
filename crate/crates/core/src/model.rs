//! Generative model: target states, point-spread rendering, image likelihood
//! and the joint log-density of tracks and images.
//!
//! Frames are 0-based throughout the API. Pixel `(r, c)` sits at spatial
//! coordinate `(Δ·r, Δ·c)`; storage is row-major.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dynamics;
use crate::error::{Error, Result};
use crate::gaussian::LN_2PI;
use crate::representation::TrackSet;

/// One target's intensity, position and velocity at one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub a: f64,
    pub s: [f64; 2],
    pub v: [f64; 2],
}

impl TargetState {
    pub fn new(a: f64, s: [f64; 2], v: [f64; 2]) -> Self {
        Self { a, s, v }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.s.iter().chain(&self.v).all(|x| x.is_finite())
    }

    /// Key used by the newborn ordering rule: intensity, then position.
    pub fn order_key(&self) -> [f64; 3] {
        [self.a, self.s[0], self.s[1]]
    }
}

/// Compares two states by the newborn ordering rule.
pub fn order_cmp(x: &TargetState, y: &TargetState) -> std::cmp::Ordering {
    let (kx, ky) = (x.order_key(), y.order_key());
    kx[0]
        .total_cmp(&ky[0])
        .then(kx[1].total_cmp(&ky[1]))
        .then(kx[2].total_cmp(&ky[2]))
}

/// Sensor geometry, fixed for a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub rows: usize,
    pub cols: usize,
    /// Pixel pitch Δ.
    pub pixel_size: f64,
    /// PSF blur σ_h.
    pub psf_sigma: f64,
    /// Side length l of the truncation square (odd).
    pub window: usize,
}

impl Geometry {
    pub fn new(rows: usize, cols: usize, pixel_size: f64, psf_sigma: f64, window: usize) -> Self {
        Self { rows, cols, pixel_size, psf_sigma, window }
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn half_window(&self) -> isize {
        (self.window / 2) as isize
    }

    /// Peak PSF scale Δ²/(2πσ_h²).
    pub fn psf_scale(&self) -> f64 {
        self.pixel_size * self.pixel_size / (2.0 * std::f64::consts::PI * self.psf_sigma * self.psf_sigma)
    }

    /// Pixel whose centre is nearest to `s` (may lie outside the image).
    pub fn nearest_pixel(&self, s: [f64; 2]) -> (isize, isize) {
        (
            (s[0] / self.pixel_size).round() as isize,
            (s[1] / self.pixel_size).round() as isize,
        )
    }

    pub fn in_bounds(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols
    }

    /// In-bounds pixel rectangle `[r0, r1) × [c0, c1)` of the square of side
    /// `2·half + 1` centred on `(r, c)`.
    pub fn clip_square(&self, (r, c): (isize, isize), half: isize) -> (usize, usize, usize, usize) {
        let clip = |lo: isize, hi: isize, n: usize| -> (usize, usize) {
            let lo = lo.max(0).min(n as isize) as usize;
            let hi = hi.max(0).min(n as isize) as usize;
            (lo, hi.max(lo))
        };
        let (r0, r1) = clip(r.saturating_sub(half), r.saturating_add(half.saturating_add(1)), self.rows);
        let (c0, c1) = clip(c.saturating_sub(half), c.saturating_add(half.saturating_add(1)), self.cols);
        (r0, r1, c0, c1)
    }

    /// Unit-intensity PSF h̄ at pixel `(r, c)`; exactly zero outside L(s).
    pub fn unit_psf(&self, s: [f64; 2], r: usize, c: usize) -> f64 {
        let (pr, pc) = self.nearest_pixel(s);
        let h = self.half_window();
        if (r as isize).saturating_sub(pr).saturating_abs() > h || (c as isize).saturating_sub(pc).saturating_abs() > h {
            return 0.0;
        }
        let dr = self.pixel_size * r as f64 - s[0];
        let dc = self.pixel_size * c as f64 - s[1];
        self.psf_scale() * (-(dr * dr + dc * dc) / (2.0 * self.psf_sigma * self.psf_sigma)).exp()
    }

    /// Calls `f(pixel_index, h̄)` for every in-bounds pixel of L(s).
    pub fn for_each_footprint(&self, s: [f64; 2], mut f: impl FnMut(usize, f64)) {
        let (r0, r1, c0, c1) = self.clip_square(self.nearest_pixel(s), self.half_window());
        if r0 == r1 || c0 == c1 {
            return;
        }
        let inv = 1.0 / (2.0 * self.psf_sigma * self.psf_sigma);
        let scale = self.psf_scale();
        let mut col_w = [0.0; 64];
        let mut col_vec;
        let cw: &mut [f64] = if c1 - c0 <= 64 {
            &mut col_w[..c1 - c0]
        } else {
            col_vec = vec![0.0; c1 - c0];
            &mut col_vec
        };
        for (k, c) in (c0..c1).enumerate() {
            let d = self.pixel_size * c as f64 - s[1];
            cw[k] = (-d * d * inv).exp();
        }
        for r in r0..r1 {
            let d = self.pixel_size * r as f64 - s[0];
            let rw = scale * (-d * d * inv).exp();
            let base = r * self.cols;
            for (k, c) in (c0..c1).enumerate() {
                f(base + c, rw * cw[k]);
            }
        }
    }

    /// Matched-filter energy E = Σ_{i∈L(j)} h̄_i(j)² for a full window
    /// centred exactly on a pixel.
    pub fn filter_energy(&self) -> f64 {
        let h = self.half_window();
        let inv = 1.0 / (2.0 * self.psf_sigma * self.psf_sigma);
        let one_d: f64 = (-h..=h)
            .map(|d| {
                let x = self.pixel_size * d as f64;
                (-2.0 * x * x * inv).exp()
            })
            .sum();
        self.psf_scale().powi(2) * one_d * one_d
    }
}

/// Dynamics and birth parameters ψ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub mu_bi: f64,
    pub mu_bx: f64,
    pub mu_by: f64,
    pub var_bi: f64,
    pub var_bp: f64,
    pub var_bv: f64,
    pub var_i: f64,
    pub var_x: f64,
    pub var_y: f64,
}

impl DynamicsParams {
    pub const NAMES: [&'static str; 9] =
        ["mu_bi", "mu_bx", "mu_by", "var_bi", "var_bp", "var_bv", "var_i", "var_x", "var_y"];

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.mu_bi, self.mu_bx, self.mu_by, self.var_bi, self.var_bp, self.var_bv, self.var_i,
            self.var_x, self.var_y,
        ]
    }

    pub fn from_array(v: [f64; 9]) -> Self {
        Self {
            mu_bi: v[0],
            mu_bx: v[1],
            mu_by: v[2],
            var_bi: v[3],
            var_bp: v[4],
            var_bv: v[5],
            var_i: v[6],
            var_x: v[7],
            var_y: v[8],
        }
    }

    pub fn birth_position(&self) -> [f64; 2] {
        [self.mu_bx, self.mu_by]
    }

    /// Driving-noise variance of spatial dimension `d`.
    pub fn var_motion(&self, d: usize) -> f64 {
        if d == 0 {
            self.var_x
        } else {
            self.var_y
        }
    }
}

/// Full parameter vector θ plus fixed geometry and frame interval δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub psi: DynamicsParams,
    pub survival: f64,
    pub birth_rate: f64,
    pub background: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub geometry: Geometry,
    pub delta: f64,
}

impl ModelParams {
    /// Parameters with the same background and noise variance in every frame.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(
        psi: DynamicsParams,
        survival: f64,
        birth_rate: f64,
        background: f64,
        noise_var: f64,
        frames: usize,
        geometry: Geometry,
        delta: f64,
    ) -> Self {
        Self {
            psi,
            survival,
            birth_rate,
            background: vec![background; frames],
            noise_var: vec![noise_var; frames],
            geometry,
            delta,
        }
    }

    pub fn frames(&self) -> usize {
        self.background.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        let p = &self.psi;
        for (name, v) in DynamicsParams::NAMES.iter().zip(p.to_array()).skip(3) {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(p.mu_bi.is_finite() && p.mu_bx.is_finite() && p.mu_by.is_finite()) {
            return bad("birth means must be finite");
        }
        if !(0.0..=1.0).contains(&self.survival) {
            return bad("survival probability must lie in [0, 1]");
        }
        if !(self.birth_rate >= 0.0 && self.birth_rate.is_finite()) {
            return bad("birth rate must be non-negative");
        }
        if self.background.len() != self.noise_var.len() || self.background.is_empty() {
            return bad("background and noise variance need one entry per frame");
        }
        if self.noise_var.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("noise variances must be positive");
        }
        if self.background.iter().any(|b| !b.is_finite()) {
            return bad("background must be finite");
        }
        let g = &self.geometry;
        if g.window % 2 == 0 || g.window == 0 {
            return bad("truncation window must be odd and at least 1");
        }
        if !(g.pixel_size > 0.0 && g.psf_sigma > 0.0 && self.delta > 0.0) {
            return bad("pixel size, PSF width and frame interval must be positive");
        }
        if g.rows == 0 || g.cols == 0 {
            return bad("image must have at least one pixel");
        }
        Ok(())
    }
}

/// n frames of rows × cols pixel intensities, frame-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    frames: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageStack {
    pub fn new(frames: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * rows * cols {
            return Err(Error::Dimension(format!(
                "{} values for {frames}x{rows}x{cols} stack",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite pixel value".into()));
        }
        Ok(Self { frames, rows, cols, data })
    }

    pub fn zeros(frames: usize, rows: usize, cols: usize) -> Self {
        Self { frames, rows, cols, data: vec![0.0; frames * rows * cols] }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let m = self.rows * self.cols;
        &self.data[t * m..(t + 1) * m]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let m = self.rows * self.cols;
        &mut self.data[t * m..(t + 1) * m]
    }

    pub fn get(&self, t: usize, r: usize, c: usize) -> f64 {
        self.data[(t * self.rows + r) * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn check_compatible(&self, params: &ModelParams) -> Result<()> {
        let g = &params.geometry;
        if self.frames != params.frames() || self.rows != g.rows || self.cols != g.cols {
            return Err(Error::Dimension(format!(
                "stack {}x{}x{} vs model {}x{}x{}",
                self.frames,
                self.rows,
                self.cols,
                params.frames(),
                g.rows,
                g.cols
            )));
        }
        Ok(())
    }
}

/// A target: birth frame plus a contiguous run of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub birth: usize,
    pub states: Vec<TargetState>,
}

impl Track {
    pub fn new(birth: usize, states: Vec<TargetState>) -> Self {
        Self { birth, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// First frame after the last state (exclusive end).
    pub fn end(&self) -> usize {
        self.birth + self.states.len()
    }

    pub fn alive_at(&self, t: usize) -> bool {
        t >= self.birth && t < self.end()
    }

    pub fn state_at(&self, t: usize) -> Option<&TargetState> {
        if self.alive_at(t) {
            self.states.get(t - self.birth)
        } else {
            None
        }
    }

    pub fn first(&self) -> &TargetState {
        &self.states[0]
    }

    pub fn last(&self) -> &TargetState {
        self.states.last().expect("track has at least one state")
    }
}

/// `a·h̄_i(s)` at `pixel`, zero outside the truncation square.
pub fn psf_value(x: &TargetState, pixel: (usize, usize), params: &ModelParams) -> f64 {
    x.a * params.geometry.unit_psf(x.s, pixel.0, pixel.1)
}

/// Noiseless expected frame: background plus every target's PSF.
pub fn render_frame(targets: &[TargetState], t: usize, params: &ModelParams) -> Vec<f64> {
    let g = &params.geometry;
    let mut out = vec![params.background[t]; g.pixels()];
    for x in targets {
        g.for_each_footprint(x.s, |i, h| out[i] += x.a * h);
    }
    out
}

/// States alive at frame `t`, in track order.
pub fn states_at(tracks: &[Track], t: usize) -> Vec<TargetState> {
    tracks.iter().filter_map(|k| k.state_at(t).copied()).collect()
}

/// Draws a track set from the prior over births, lifetimes and states.
pub fn sample_prior_tracks<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> Vec<Track> {
    let n = params.frames();
    let mut tracks = Vec::new();
    for t in 0..n {
        let births = if params.birth_rate > 0.0 {
            Poisson::new(params.birth_rate).expect("positive rate").sample(rng) as usize
        } else {
            0
        };
        for _ in 0..births {
            let mut states = vec![dynamics::sample_initial(&params.psi, rng)];
            while t + states.len() < n && rng.random::<f64>() < params.survival {
                let next = dynamics::sample_transition(states.last().unwrap(), params, rng);
                states.push(next);
            }
            tracks.push(Track::new(t, states));
        }
    }
    TrackSet::from_tracks(tracks, n)
        .expect("prior draws are valid tracks")
        .into_tracks()
}

/// Renders the tracks and adds per-frame Gaussian pixel noise.
pub fn sample_images<R: Rng + ?Sized>(tracks: &[Track], params: &ModelParams, rng: &mut R) -> ImageStack {
    let g = &params.geometry;
    let n = params.frames();
    let mut stack = ImageStack::zeros(n, g.rows, g.cols);
    for t in 0..n {
        let mean = render_frame(&states_at(tracks, t), t, params);
        let normal = Normal::new(0.0, params.noise_var[t].sqrt()).expect("valid noise");
        for (out, m) in stack.frame_mut(t).iter_mut().zip(mean) {
            *out = m + normal.sample(rng);
        }
    }
    stack
}

/// log Poisson(k; λ), with log P(0; 0) = 0.
pub fn log_poisson(k: usize, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

pub fn ln_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

/// P(K > k) for K ~ Poisson(λ), summed over the tail directly.
pub fn poisson_tail(k: usize, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if k == 0 {
        return -(-lambda).exp_m1();
    }
    let mut term = (log_poisson(k + 1, lambda)).exp();
    let mut sum = 0.0;
    let mut j = k + 1;
    while term > 0.0 && (term > sum * 1e-17 || (j as f64) < lambda) {
        sum += term;
        j += 1;
        term *= lambda / j as f64;
        if j > k + 10_000 {
            break;
        }
    }
    sum
}

/// `c·ln p`, treating 0·ln 0 as 0.
fn xlogy(c: usize, p: f64) -> f64 {
    if c == 0 {
        0.0
    } else {
        c as f64 * p.ln()
    }
}

/// Counts (births per frame, survivals, deaths) of a track set.
pub fn track_counts(tracks: &[Track], n: usize) -> (Vec<usize>, usize, usize) {
    let mut births = vec![0; n];
    let mut survivals = 0;
    let mut deaths = 0;
    for k in tracks {
        births[k.birth] += 1;
        survivals += k.len() - 1;
        if k.end() < n {
            deaths += 1;
        }
    }
    (births, survivals, deaths)
}

/// log p(z) + log p(x | z) for a track set; −∞ when two newborns of the
/// same frame tie under the ordering rule.
pub fn log_prior(tracks: &[Track], params: &ModelParams) -> f64 {
    let n = params.frames();
    let (births, survivals, deaths) = track_counts(tracks, n);
    let mut lp: f64 = births
        .iter()
        .map(|&k| log_poisson(k, params.birth_rate) + ln_factorial(k))
        .sum();
    lp += xlogy(survivals, params.survival) + xlogy(deaths, 1.0 - params.survival);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    if !newborns_distinct(tracks) {
        return f64::NEG_INFINITY;
    }
    for k in tracks {
        lp += dynamics::log_track_prior(k, params);
    }
    lp
}

fn newborns_distinct(tracks: &[Track]) -> bool {
    let mut keys: Vec<(usize, [f64; 3])> = tracks.iter().map(|k| (k.birth, k.first().order_key())).collect();
    keys.sort_by(|x, y| {
        x.0.cmp(&y.0)
            .then(x.1[0].total_cmp(&y.1[0]))
            .then(x.1[1].total_cmp(&y.1[1]))
            .then(x.1[2].total_cmp(&y.1[2]))
    });
    keys.windows(2).all(|w| w[0] != w[1])
}

/// Gaussian log-likelihood of one frame given its expected image.
pub fn log_likelihood_frame(y: &[f64], mean: &[f64], noise_var: f64) -> f64 {
    let ss: f64 = y.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    -0.5 * y.len() as f64 * (LN_2PI + noise_var.ln()) - 0.5 * ss / noise_var
}

pub fn log_likelihood(tracks: &[Track], params: &ModelParams, y: &ImageStack) -> Result<f64> {
    y.check_compatible(params)?;
    let mut ll = 0.0;
    for t in 0..params.frames() {
        let mean = render_frame(&states_at(tracks, t), t, params);
        ll += log_likelihood_frame(y.frame(t), &mean, params.noise_var[t]);
    }
    Ok(ll)
}

/// log p_θ(z, x, y) of a track set.
pub fn log_joint(tracks: &[Track], params: &ModelParams, y: &ImageStack) -> Result<f64> {
    let n = params.frames();
    for k in tracks {
        if k.is_empty() || k.end() > n {
            return Err(Error::Dimension(format!(
                "track born at {} with {} states exceeds {n} frames",
                k.birth,
                k.len()
            )));
        }
    }
    let ll = log_likelihood(tracks, params, y)?;
    Ok(log_prior(tracks, params) + ll)
}

/// Signal-to-noise ratio in dB of a target of intensity `a` at frame `t`.
pub fn snr(a: f64, t: usize, params: &ModelParams) -> Result<f64> {
    let var = params.noise_var[t];
    if !(a > 0.0) || !(var > 0.0) {
        return Err(Error::InvalidParams("snr needs positive intensity and noise".into()));
    }
    Ok(20.0 * (a * params.geometry.psf_scale() / var.sqrt()).log10())
}
