//! Near-constant-velocity dynamics with drifting intensity, plus the exact
//! Gaussian conditionals the proposals are built from.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{log_normal, std_normal, LN_2PI};
use crate::model::{DynamicsParams, ModelParams, TargetState, Track};

/// Per-dimension driving-noise covariance `var·[[δ³/3, δ²/2], [δ²/2, δ]]`.
pub fn motion_cov(var: f64, delta: f64) -> Matrix2<f64> {
    let d2 = delta * delta;
    var * Matrix2::new(d2 * delta / 3.0, d2 / 2.0, d2 / 2.0, delta)
}

fn transition_matrix(delta: f64) -> Matrix2<f64> {
    Matrix2::new(1.0, delta, 0.0, 1.0)
}

fn log_normal2(x: &Vector2<f64>, mean: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let det = cov.determinant();
    let d = x - mean;
    let inv = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
    -LN_2PI - 0.5 * det.ln() - 0.5 * d.dot(&(inv * d))
}

fn sample_normal2<R: Rng + ?Sized>(mean: &Vector2<f64>, cov: &Matrix2<f64>, rng: &mut R) -> Vector2<f64> {
    let l11 = cov[(0, 0)].sqrt();
    let l21 = if l11 > 0.0 { cov[(1, 0)] / l11 } else { 0.0 };
    let l22 = (cov[(1, 1)] - l21 * l21).max(0.0).sqrt();
    let (z1, z2) = (std_normal(rng), std_normal(rng));
    mean + Vector2::new(l11 * z1, l21 * z1 + l22 * z2)
}

pub fn log_initial(x: &TargetState, psi: &DynamicsParams) -> f64 {
    log_normal(x.a, psi.mu_bi, psi.var_bi)
        + log_normal(x.s[0], psi.mu_bx, psi.var_bp)
        + log_normal(x.s[1], psi.mu_by, psi.var_bp)
        + log_normal(x.v[0], 0.0, psi.var_bv)
        + log_normal(x.v[1], 0.0, psi.var_bv)
}

pub fn log_transition(prev: &TargetState, next: &TargetState, params: &ModelParams) -> f64 {
    let psi = &params.psi;
    let f = transition_matrix(params.delta);
    let mut lp = log_normal(next.a, prev.a, psi.var_i);
    for d in 0..2 {
        let mean = f * Vector2::new(prev.s[d], prev.v[d]);
        let cov = motion_cov(psi.var_motion(d), params.delta);
        lp += log_normal2(&Vector2::new(next.s[d], next.v[d]), &mean, &cov);
    }
    lp
}

pub fn log_track_prior(track: &Track, params: &ModelParams) -> f64 {
    let mut lp = log_initial(track.first(), &params.psi);
    for w in track.states.windows(2) {
        lp += log_transition(&w[0], &w[1], params);
    }
    lp
}

pub fn sample_initial<R: Rng + ?Sized>(psi: &DynamicsParams, rng: &mut R) -> TargetState {
    let bp = psi.var_bp.sqrt();
    let bv = psi.var_bv.sqrt();
    TargetState::new(
        psi.mu_bi + psi.var_bi.sqrt() * std_normal(rng),
        [psi.mu_bx + bp * std_normal(rng), psi.mu_by + bp * std_normal(rng)],
        [bv * std_normal(rng), bv * std_normal(rng)],
    )
}

pub fn sample_transition<R: Rng + ?Sized>(prev: &TargetState, params: &ModelParams, rng: &mut R) -> TargetState {
    let psi = &params.psi;
    let f = transition_matrix(params.delta);
    let a = prev.a + psi.var_i.sqrt() * std_normal(rng);
    let mut s = [0.0; 2];
    let mut v = [0.0; 2];
    for d in 0..2 {
        let mean = f * Vector2::new(prev.s[d], prev.v[d]);
        let z = sample_normal2(&mean, &motion_cov(psi.var_motion(d), params.delta), rng);
        s[d] = z[0];
        v[d] = z[1];
    }
    TargetState::new(a, s, v)
}

/// Belief `N(m, p)` over the velocity at a known position `s`, for one
/// spatial dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityFilter {
    pub s: f64,
    pub m: f64,
    pub p: f64,
}

impl VelocityFilter {
    pub fn prior(s: f64, var_bv: f64) -> Self {
        Self { s, m: 0.0, p: var_bv }
    }

    pub fn anchored(s: f64, v: f64) -> Self {
        Self { s, m: v, p: 0.0 }
    }

    /// Predicted mean and covariance of the next (position, velocity).
    fn predicted(&self, var: f64, delta: f64) -> (Vector2<f64>, Matrix2<f64>) {
        let mean = Vector2::new(self.s + delta * self.m, self.m);
        let f = transition_matrix(delta);
        let cov = f * Matrix2::new(0.0, 0.0, 0.0, self.p) * f.transpose() + motion_cov(var, delta);
        (mean, cov)
    }

    /// Predictive mean and variance of the next position.
    pub fn predict_position(&self, var: f64, delta: f64) -> (f64, f64) {
        let (mean, cov) = self.predicted(var, delta);
        (mean[0], cov[(0, 0)])
    }

    /// Conditions the next velocity on the next position.
    pub fn update(&self, s_next: f64, var: f64, delta: f64) -> Self {
        let (mean, cov) = self.predicted(var, delta);
        let k = cov[(1, 0)] / cov[(0, 0)];
        Self {
            s: s_next,
            m: mean[1] + k * (s_next - mean[0]),
            p: (cov[(1, 1)] - k * cov[(1, 0)]).max(0.0),
        }
    }

    /// Linear-Gaussian law of this velocity given the next (position,
    /// velocity): mean `c + g·v_next`, variance `var`.
    fn backward(&self, s_next: f64, var: f64, delta: f64) -> (f64, f64, f64) {
        if self.p == 0.0 {
            return (self.m, 0.0, 0.0);
        }
        // Information form: the predicted covariance is near-singular when
        // the motion noise is small, the motion covariance alone is not.
        let qi = motion_cov(var, delta).try_inverse().expect("motion covariance is positive definite");
        let f = Vector2::new(delta, 1.0);
        let w = qi * f;
        let post = 1.0 / (1.0 / self.p + f.dot(&w));
        let c = post * (self.m / self.p + w[0] * (s_next - self.s));
        (c, post * w[1], post)
    }
}

/// Known state adjacent to a run of positions, used as an anchor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub s: [f64; 2],
    pub v: [f64; 2],
}

impl From<&TargetState> for Anchor {
    fn from(x: &TargetState) -> Self {
        Self { s: x.s, v: x.v }
    }
}

#[derive(Debug, Clone)]
struct VelocityChain {
    /// `(c, g, var)` of v_{k−1} given v_k, for k = 1..L.
    links: Vec<(f64, f64, f64)>,
    last_mean: f64,
    last_var: f64,
}

impl VelocityChain {
    fn new(pos: &[f64], start: Option<(f64, f64)>, end: Option<(f64, f64)>, var_bv: f64, var: f64, delta: f64) -> Self {
        let mut filt = match start {
            None => VelocityFilter::prior(pos[0], var_bv),
            Some((s, v)) => VelocityFilter::anchored(s, v).update(pos[0], var, delta),
        };
        let mut links = Vec::with_capacity(pos.len());
        for &s in &pos[1..] {
            links.push(filt.backward(s, var, delta));
            filt = filt.update(s, var, delta);
        }
        let (last_mean, last_var) = match end {
            None => (filt.m, filt.p),
            Some((s, v)) => {
                let (c, g, w) = filt.backward(s, var, delta);
                (c + g * v, w)
            }
        };
        Self { links, last_mean, last_var }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.links.len() + 1;
        let mut v = vec![0.0; n];
        v[n - 1] = self.last_mean + self.last_var.sqrt() * std_normal(rng);
        for k in (1..n).rev() {
            let (c, g, w) = self.links[k - 1];
            v[k - 1] = c + g * v[k] + w.sqrt() * std_normal(rng);
        }
        v
    }

    fn log_density(&self, v: &[f64]) -> f64 {
        let n = v.len();
        let mut lp = log_normal(v[n - 1], self.last_mean, self.last_var);
        for k in 1..n {
            let (c, g, w) = self.links[k - 1];
            lp += log_normal(v[k - 1], c + g * v[k], w);
        }
        lp
    }

    fn means(&self) -> Vec<f64> {
        let n = self.links.len() + 1;
        let mut m = vec![0.0; n];
        m[n - 1] = self.last_mean;
        for k in (1..n).rev() {
            let (c, g, _) = self.links[k - 1];
            m[k - 1] = c + g * m[k];
        }
        m
    }
}

/// Exact Gaussian law of the velocities of a run of exactly observed
/// positions, optionally anchored by a known preceding and/or following state.
#[derive(Debug, Clone)]
pub struct VelocityConditional {
    dims: [VelocityChain; 2],
}

impl VelocityConditional {
    /// Velocities of a freshly born target given its positions.
    pub fn new(positions: &[[f64; 2]], params: &ModelParams) -> Result<Self> {
        Self::with_anchors(positions, None, None, params)
    }

    pub fn with_anchors(
        positions: &[[f64; 2]],
        start: Option<Anchor>,
        end: Option<Anchor>,
        params: &ModelParams,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParams("velocity conditional needs a position".into()));
        }
        let psi = &params.psi;
        if !(psi.var_x > 0.0 && psi.var_y > 0.0) {
            return Err(Error::Numerical("degenerate motion covariance".into()));
        }
        let chain = |d: usize| {
            let pos: Vec<f64> = positions.iter().map(|s| s[d]).collect();
            VelocityChain::new(
                &pos,
                start.map(|a| (a.s[d], a.v[d])),
                end.map(|a| (a.s[d], a.v[d])),
                psi.var_bv,
                psi.var_motion(d),
                params.delta,
            )
        };
        Ok(Self { dims: [chain(0), chain(1)] })
    }

    pub fn len(&self) -> usize {
        self.dims[0].links.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<[f64; 2]> {
        let x = self.dims[0].sample(rng);
        let y = self.dims[1].sample(rng);
        x.into_iter().zip(y).map(|(a, b)| [a, b]).collect()
    }

    pub fn log_density(&self, v: &[[f64; 2]]) -> f64 {
        let x: Vec<f64> = v.iter().map(|w| w[0]).collect();
        let y: Vec<f64> = v.iter().map(|w| w[1]).collect();
        self.dims[0].log_density(&x) + self.dims[1].log_density(&y)
    }

    pub fn means(&self) -> Vec<[f64; 2]> {
        let x = self.dims[0].means();
        let y = self.dims[1].means();
        x.into_iter().zip(y).map(|(a, b)| [a, b]).collect()
    }
}

/// Law of a state preceding a known state `x0` under a fresh birth:
/// `μ(x)·f(x0 | x)` normalised.
#[derive(Debug, Clone)]
pub struct BackwardConditional {
    a_mean: f64,
    a_var: f64,
    dims: [(Vector2<f64>, Matrix2<f64>); 2],
    log_normalizer: f64,
}

impl BackwardConditional {
    pub fn new(next: &TargetState, params: &ModelParams) -> Self {
        let psi = &params.psi;
        let a_tot = psi.var_bi + psi.var_i;
        let a_mean = (psi.mu_bi * psi.var_i + next.a * psi.var_bi) / a_tot;
        let a_var = psi.var_bi * psi.var_i / a_tot;
        let mut log_normalizer = log_normal(next.a, psi.mu_bi, a_tot);
        let f = transition_matrix(params.delta);
        let mu = psi.birth_position();
        let dims = [0, 1].map(|d| {
            let m = Vector2::new(mu[d], 0.0);
            let p = Matrix2::new(psi.var_bp, 0.0, 0.0, psi.var_bv);
            let s = f * p * f.transpose() + motion_cov(psi.var_motion(d), params.delta);
            let z = Vector2::new(next.s[d], next.v[d]);
            log_normalizer += log_normal2(&z, &(f * m), &s);
            let k = p * f.transpose() * s.try_inverse().expect("positive definite");
            let cov = p - k * s * k.transpose();
            (m + k * (z - f * m), (cov + cov.transpose()) * 0.5)
        });
        Self { a_mean, a_var, dims, log_normalizer }
    }

    /// log ∫ μ(x) f(x0 | x) dx.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TargetState {
        let a = self.a_mean + self.a_var.sqrt() * std_normal(rng);
        let zx = sample_normal2(&self.dims[0].0, &self.dims[0].1, rng);
        let zy = sample_normal2(&self.dims[1].0, &self.dims[1].1, rng);
        TargetState::new(a, [zx[0], zy[0]], [zx[1], zy[1]])
    }

    pub fn log_density(&self, x: &TargetState) -> f64 {
        let mut lp = log_normal(x.a, self.a_mean, self.a_var);
        for d in 0..2 {
            lp += log_normal2(&Vector2::new(x.s[d], x.v[d]), &self.dims[d].0, &self.dims[d].1);
        }
        lp
    }
}
