//! Residual images, matched filtering and candidate peak extraction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{Geometry, ModelParams, TargetState};

/// Observed frame minus background and hypothesised targets.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualFrame {
    pub t: usize,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl ResidualFrame {
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Adds `a·h̄(s)` back in, i.e. removes the target from the hypothesis.
    pub fn add_target(&mut self, x: &TargetState, g: &Geometry) {
        g.for_each_footprint(x.s, |i, h| self.values[i] += x.a * h);
    }

    pub fn sub_target(&mut self, x: &TargetState, g: &Geometry) {
        g.for_each_footprint(x.s, |i, h| self.values[i] -= x.a * h);
    }
}

pub fn residual_frame(y_t: &[f64], targets: &[TargetState], t: usize, params: &ModelParams) -> ResidualFrame {
    let g = &params.geometry;
    let b = params.background[t];
    let mut res = ResidualFrame {
        t,
        rows: g.rows,
        cols: g.cols,
        values: y_t.iter().map(|v| v - b).collect(),
    };
    for x in targets {
        res.sub_target(x, g);
    }
    res
}

/// Half-open pixel rectangle `[r0, r1) × [c0, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelWindow {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl PixelWindow {
    pub fn full(g: &Geometry) -> Self {
        Self { r0: 0, r1: g.rows, c0: 0, c1: g.cols }
    }

    pub fn square(g: &Geometry, centre: (isize, isize), half: isize) -> Self {
        let (r0, r1, c0, c1) = g.clip_square(centre, half);
        Self { r0, r1, c0, c1 }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        r >= self.r0 && r < self.r1 && c >= self.c0 && c < self.c1
    }

    pub fn is_empty(&self) -> bool {
        self.r0 >= self.r1 || self.c0 >= self.c1
    }

    /// Grown by `k` pixels on every side, clipped to the image.
    pub fn dilate(&self, k: usize, g: &Geometry) -> Self {
        Self {
            r0: self.r0.saturating_sub(k),
            r1: (self.r1 + k).min(g.rows),
            c0: self.c0.saturating_sub(k),
            c1: (self.c1 + k).min(g.cols),
        }
    }
}

/// Matched-filter output over a window of the image.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredFrame {
    pub window: PixelWindow,
    pub values: Vec<f64>,
    pub energy: f64,
}

impl FilteredFrame {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        if self.window.contains(r, c) {
            let w = self.window.c1 - self.window.c0;
            Some(self.values[(r - self.window.r0) * w + (c - self.window.c0)])
        } else {
            None
        }
    }
}

/// Pixel-centred filter kernel h̄_{j+d}(j), indexed by offset d.
fn kernel(g: &Geometry) -> Vec<f64> {
    let h = g.half_window();
    let inv = 1.0 / (2.0 * g.psf_sigma * g.psf_sigma);
    let mut k = Vec::with_capacity(g.window * g.window);
    for dr in -h..=h {
        for dc in -h..=h {
            let d2 = g.pixel_size * g.pixel_size * (dr * dr + dc * dc) as f64;
            k.push(g.psf_scale() * (-d2 * inv).exp());
        }
    }
    k
}

pub fn match_filter(res: &ResidualFrame, params: &ModelParams) -> FilteredFrame {
    match_filter_window(res, params, PixelWindow::full(&params.geometry))
}

/// Matched filter evaluated only on `window`. Edge pixels use the in-bounds
/// part of L(j) with the same energy normalisation.
pub fn match_filter_window(res: &ResidualFrame, params: &ModelParams, window: PixelWindow) -> FilteredFrame {
    let g = &params.geometry;
    let energy = g.filter_energy();
    let k = kernel(g);
    let h = g.half_window();
    let l = g.window as isize;
    let mut values = Vec::with_capacity((window.r1 - window.r0) * (window.c1 - window.c0));
    for r in window.r0..window.r1 {
        for c in window.c0..window.c1 {
            let (rr0, rr1, cc0, cc1) = g.clip_square((r as isize, c as isize), h);
            let mut acc = 0.0;
            for i in rr0..rr1 {
                let kr = (i as isize - r as isize + h) * l;
                let row = &res.values[i * g.cols..];
                for j in cc0..cc1 {
                    acc += row[j] * k[(kr + j as isize - c as isize + h) as usize];
                }
            }
            values.push(acc / energy);
        }
    }
    FilteredFrame { window, values, energy }
}

/// Rule for the peak-detection threshold γ_t.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GammaRule {
    /// min(μ_bi − 3σ_bi, 3σ_r/√E).
    #[default]
    Min,
    /// max of the same two terms.
    Max,
    Fixed(f64),
}

impl fmt::Display for GammaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaRule::Min => write!(f, "min"),
            GammaRule::Max => write!(f, "max"),
            GammaRule::Fixed(v) => write!(f, "fixed:{v}"),
        }
    }
}

impl FromStr for GammaRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "min" | "paper-min" => Ok(GammaRule::Min),
            "max" => Ok(GammaRule::Max),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|v| v.parse().ok())
                .map(GammaRule::Fixed)
                .ok_or_else(|| Error::InvalidParams(format!("unknown gamma rule '{s}'"))),
        }
    }
}

impl TryFrom<String> for GammaRule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<GammaRule> for String {
    fn from(g: GammaRule) -> String {
        g.to_string()
    }
}

pub fn gamma_threshold(t: usize, params: &ModelParams, rule: GammaRule) -> f64 {
    let psi = &params.psi;
    let plausible = psi.mu_bi - 3.0 * psi.var_bi.sqrt();
    let noise = 3.0 * params.noise_var[t].sqrt() / params.geometry.filter_energy().sqrt();
    match rule {
        GammaRule::Min => plausible.min(noise),
        GammaRule::Max => plausible.max(noise),
        GammaRule::Fixed(v) => v,
    }
}

/// Strict 8-neighbourhood local maxima with value ≥ `gamma`, inside
/// `region` when given. Exact ties go to the lexicographically first pixel.
/// The filtered frame must cover the region dilated by one pixel.
pub fn candidate_peaks(filt: &FilteredFrame, gamma: f64, region: Option<PixelWindow>, g: &Geometry) -> Vec<(usize, usize)> {
    let area = region.unwrap_or(filt.window);
    let mut peaks = Vec::new();
    for r in area.r0..area.r1 {
        for c in area.c0..area.c1 {
            let Some(v) = filt.get(r, c) else { continue };
            if v < gamma {
                continue;
            }
            let mut is_peak = true;
            'nb: for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if !g.in_bounds(nr, nc) {
                        continue;
                    }
                    let w = filt
                        .get(nr as usize, nc as usize)
                        .expect("filtered window covers the neighbourhood");
                    let earlier = (dr, dc) < (0, 0);
                    if w > v || (w == v && earlier) {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                peaks.push((r, c));
            }
        }
    }
    peaks
}

/// Default half-width ⌈(3σ_bv·δ + 3σ_h)/Δ⌉ of the extension search region.
pub fn extension_half_width(params: &ModelParams) -> isize {
    let g = &params.geometry;
    ((3.0 * params.psi.var_bv.sqrt() * params.delta + 3.0 * g.psf_sigma) / g.pixel_size).ceil() as isize
}
