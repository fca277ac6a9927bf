//! Data-driven construction of new tracks and track extensions.
//!
//! Every proposal here comes as a sampler/evaluator pair. Both walk the same
//! sequence of [`StepMixture`]s, so the evaluator reproduces the sampler's
//! log-density exactly. Each mixture is a sub-probability: the missing mass is
//! the probability that the step is rejected.

use std::borrow::Cow;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Anchor, VelocityConditional, VelocityFilter};
use crate::filtering::{
    candidate_peaks, extension_half_width, gamma_threshold, match_filter, match_filter_window, FilteredFrame,
    GammaRule, PixelWindow, ResidualFrame,
};
use crate::gaussian::{log_normal, std_normal, LN_2PI};
use crate::model::{poisson_tail, DynamicsParams, ModelParams, TargetState, Track};
use crate::representation::TrackSet;
use crate::scene::Scene;

/// How the test ratio ρ turns into a probability of accepting H₁.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum H1Rule {
    /// min(1, ρ)
    #[default]
    MinOne,
    /// ρ / (1 + ρ)
    Odds,
}

impl H1Rule {
    pub fn accept(&self, rho: f64) -> f64 {
        match self {
            H1Rule::MinOne => rho.min(1.0),
            H1Rule::Odds if rho.is_infinite() => 1.0,
            H1Rule::Odds => rho / (1.0 + rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BirthConfig {
    pub gamma_rule: GammaRule,
    pub h1_rule: H1Rule,
    /// Half-width of the extension search region; derived from the dynamics
    /// when absent.
    pub region_half_width: Option<usize>,
}

/// Gaussian density over (a, s₁, s₂) in information form.
#[derive(Debug, Clone, PartialEq)]
pub struct AsPrior {
    pub mean: Vector3<f64>,
    pub precision: Matrix3<f64>,
}

impl AsPrior {
    /// Marginal of the birth density over intensity and position.
    pub fn birth(psi: &DynamicsParams) -> Self {
        Self {
            mean: Vector3::new(psi.mu_bi, psi.mu_bx, psi.mu_by),
            precision: Matrix3::from_diagonal(&Vector3::new(1.0 / psi.var_bi, 1.0 / psi.var_bp, 1.0 / psi.var_bp)),
        }
    }

    /// Predictive density of the next (a, s) given the previous intensity and
    /// the velocity filters at the previous position.
    pub fn continuation(a_prev: f64, filters: &[VelocityFilter; 2], params: &ModelParams) -> Self {
        let mut mean = Vector3::new(a_prev, 0.0, 0.0);
        let mut diag = Vector3::new(1.0 / params.psi.var_i, 0.0, 0.0);
        for d in 0..2 {
            let (m, v) = filters[d].predict_position(params.psi.var_motion(d), params.delta);
            mean[d + 1] = m;
            diag[d + 1] = 1.0 / v;
        }
        Self { mean, precision: Matrix3::from_diagonal(&diag) }
    }

    pub fn log_density(&self, z: &Vector3<f64>) -> f64 {
        let d = z - self.mean;
        0.5 * self.precision.determinant().ln() - 1.5 * LN_2PI - 0.5 * d.dot(&(self.precision * d))
    }
}

/// Second-order expansion of the H₁ posterior around a matched-filter peak.
#[derive(Debug, Clone)]
pub struct LaplaceFit {
    pub center: Vector3<f64>,
    pub precision: Matrix3<f64>,
    pub log_h1_evidence: f64,
    chol: Matrix3<f64>,
    log_det: f64,
}

impl LaplaceFit {
    pub fn log_density(&self, z: &Vector3<f64>) -> f64 {
        let d = z - self.center;
        let w = self.chol.transpose() * d;
        0.5 * self.log_det - 1.5 * LN_2PI - 0.5 * w.norm_squared()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector3<f64> {
        let e = Vector3::new(std_normal(rng), std_normal(rng), std_normal(rng));
        let w = self
            .chol
            .transpose()
            .solve_upper_triangular(&e)
            .expect("cholesky factor is invertible");
        self.center + w
    }
}

/// Laplace fit at `peak`, expanded at (y^f at the peak, pixel position).
/// `None` when the curvature matrix is not positive definite.
pub fn laplace_fit(res: &ResidualFrame, peak: (usize, usize), prior: &AsPrior, params: &ModelParams) -> Option<LaplaceFit> {
    let g = &params.geometry;
    let var = params.noise_var[res.t];
    let s_bar = [g.pixel_size * peak.0 as f64, g.pixel_size * peak.1 as f64];
    let (r0, r1, c0, c1) = g.clip_square((peak.0 as isize, peak.1 as isize), g.half_window());

    let mut num = 0.0;
    for i in r0..r1 {
        for j in c0..c1 {
            num += res.get(i, j) * g.unit_psf(s_bar, i, j);
        }
    }
    let a = num / g.filter_energy();

    let inv_h2 = 1.0 / (g.psf_sigma * g.psf_sigma);
    let mut ll = 0.0;
    let mut d = Matrix3::zeros();
    for i in r0..r1 {
        for j in c0..c1 {
            let h = g.unit_psf(s_bar, i, j);
            let y = res.get(i, j);
            let mu = a * h;
            let e = y - mu;
            ll += log_normal(y, mu, var);
            let off = [g.pixel_size * i as f64 - s_bar[0], g.pixel_size * j as f64 - s_bar[1]];
            let grad = Vector3::new(h, a * h * off[0] * inv_h2, a * h * off[1] * inv_h2);
            let mut hess = Matrix3::zeros();
            for p in 0..2 {
                hess[(0, p + 1)] = h * off[p] * inv_h2;
                hess[(p + 1, 0)] = hess[(0, p + 1)];
                for q in 0..2 {
                    let id = if p == q { inv_h2 } else { 0.0 };
                    hess[(p + 1, q + 1)] = a * h * (off[p] * off[q] * inv_h2 * inv_h2 - id);
                }
            }
            d += (grad * grad.transpose() - e * hess) / var;
        }
    }
    let center = Vector3::new(a, s_bar[0], s_bar[1]);
    d += prior.precision;
    let lp = ll + prior.log_density(&center);
    let chol = d.cholesky()?;
    let l = chol.l();
    let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !log_det.is_finite() {
        return None;
    }
    Some(LaplaceFit { center, precision: d, log_h1_evidence: lp + 1.5 * LN_2PI - 0.5 * log_det, chol: l, log_det })
}

/// log Π_{j∈L} N(y^r_j; 0, σ²): the pure-noise hypothesis H₀.
pub fn log_h0(res: &ResidualFrame, peak: (usize, usize), params: &ModelParams) -> f64 {
    let g = &params.geometry;
    let var = params.noise_var[res.t];
    let (r0, r1, c0, c1) = g.clip_square((peak.0 as isize, peak.1 as isize), g.half_window());
    let mut out = 0.0;
    for i in r0..r1 {
        for j in c0..c1 {
            out += log_normal(res.get(i, j), 0.0, var);
        }
    }
    out
}

fn ratio_from_fit(fit: Option<&LaplaceFit>, res: &ResidualFrame, peak: (usize, usize), p_h1: f64, params: &ModelParams) -> f64 {
    let Some(fit) = fit else { return 0.0 };
    if p_h1 <= 0.0 {
        return 0.0;
    }
    if p_h1 >= 1.0 {
        return f64::INFINITY;
    }
    (p_h1.ln() - (-p_h1).ln_1p() + fit.log_h1_evidence - log_h0(res, peak, params)).exp()
}

/// Test ratio ρ = p(H₁)/p(H₀) · p̂(y^r_L | H₁) / p(y^r_L | H₀); zero for an
/// invalid fit.
pub fn test_ratio(res: &ResidualFrame, peak: (usize, usize), p_h1: f64, prior: &AsPrior, params: &ModelParams) -> f64 {
    let fit = laplace_fit(res, peak, prior, params);
    ratio_from_fit(fit.as_ref(), res, peak, p_h1, params)
}

#[derive(Debug, Clone)]
struct Component {
    peak: (usize, usize),
    accept: f64,
    fit: Option<LaplaceFit>,
}

/// Σ_{i∈G} q(i|G)·P(accept H₁ at i)·N_i, with q(i|G) = 1/|G|.
#[derive(Debug, Clone)]
pub struct StepMixture {
    components: Vec<Component>,
}

/// Result of drawing from a [`StepMixture`].
#[derive(Debug, Clone)]
pub enum StepDraw {
    Empty,
    Rejected((usize, usize)),
    Accepted { peak: (usize, usize), accept: f64, z: Vector3<f64> },
}

impl StepMixture {
    pub fn build(
        res: &ResidualFrame,
        peaks: &[(usize, usize)],
        prior: &AsPrior,
        p_h1: f64,
        params: &ModelParams,
        rule: H1Rule,
    ) -> Self {
        let components = peaks
            .iter()
            .map(|&peak| {
                let fit = laplace_fit(res, peak, prior, params);
                let rho = ratio_from_fit(fit.as_ref(), res, peak, p_h1, params);
                let accept = rule.accept(rho);
                Component { peak, accept, fit: if accept > 0.0 { fit } else { None } }
            })
            .collect();
        Self { components }
    }

    pub fn peaks(&self) -> usize {
        self.components.len()
    }

    /// Probability that a draw is accepted.
    pub fn mass(&self) -> f64 {
        if self.components.is_empty() {
            return 0.0;
        }
        self.components.iter().map(|c| c.accept).sum::<f64>() / self.components.len() as f64
    }

    pub fn log_density(&self, z: &Vector3<f64>) -> f64 {
        let n = self.components.len() as f64;
        let terms: Vec<f64> = self
            .components
            .iter()
            .filter_map(|c| c.fit.as_ref().map(|f| c.accept.ln() - n.ln() + f.log_density(z)))
            .collect();
        log_sum_exp(&terms)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> StepDraw {
        if self.components.is_empty() {
            return StepDraw::Empty;
        }
        let c = &self.components[rng.random_range(0..self.components.len())];
        if c.accept > 0.0 && rng.random::<f64>() < c.accept {
            let fit = c.fit.as_ref().expect("accepted components keep their fit");
            StepDraw::Accepted { peak: c.peak, accept: c.accept, z: fit.sample(rng) }
        } else {
            StepDraw::Rejected(c.peak)
        }
    }
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// The configuration a proposal is built from, viewed through the chain's
/// scene. `restore` lists scene states that are absent from `tracks`.
#[derive(Clone, Copy)]
pub struct ProposalContext<'a> {
    pub tracks: &'a TrackSet,
    pub params: &'a ModelParams,
    pub scene: &'a Scene,
    pub restore: &'a [(usize, TargetState)],
    pub cfg: &'a BirthConfig,
}

impl<'a> ProposalContext<'a> {
    fn restored_at(&self, t: usize) -> impl Iterator<Item = &'a TargetState> + 'a {
        self.restore.iter().filter(move |(u, _)| *u == t).map(|(_, x)| x)
    }

    pub fn residual(&self, t: usize) -> ResidualFrame {
        self.scene.residual_frame(t, self.restored_at(t))
    }

    fn full_filtered(&self, t: usize, res: &ResidualFrame) -> Cow<'a, FilteredFrame> {
        if self.restored_at(t).next().is_none() {
            Cow::Borrowed(self.scene.filtered(t, self.params))
        } else {
            Cow::Owned(match_filter(res, self.params))
        }
    }

    fn half_width(&self) -> isize {
        self.cfg
            .region_half_width
            .map(|w| w as isize)
            .unwrap_or_else(|| extension_half_width(self.params))
    }

    /// Mixture for the first state of a new track at frame `t`.
    pub fn birth_mixture(&self, t: usize) -> StepMixture {
        let res = self.residual(t);
        let filt = self.full_filtered(t, &res);
        let gamma = gamma_threshold(t, self.params, self.cfg.gamma_rule);
        let peaks = candidate_peaks(&filt, gamma, None, &self.params.geometry);
        let p_h1 = poisson_tail(self.tracks.births_at(t), self.params.birth_rate);
        StepMixture::build(&res, &peaks, &AsPrior::birth(&self.params.psi), p_h1, self.params, self.cfg.h1_rule)
    }

    fn continuation_mixture(&self, cursor: &Cursor, t: usize) -> StepMixture {
        let g = &self.params.geometry;
        let centre = g.nearest_pixel([cursor.filters[0].s, cursor.filters[1].s]);
        let region = PixelWindow::square(g, centre, self.half_width());
        let res = self.residual(t);
        let filt = match_filter_window(&res, self.params, region.dilate(1, g));
        let gamma = gamma_threshold(t, self.params, self.cfg.gamma_rule);
        let peaks = candidate_peaks(&filt, gamma, Some(region), g);
        let prior = AsPrior::continuation(cursor.a, &cursor.filters, self.params);
        StepMixture::build(&res, &peaks, &prior, self.params.survival, self.params, self.cfg.h1_rule)
    }
}

/// Position of the sequential construction: last frame, intensity and
/// velocity filters (time-reversed when building backwards).
#[derive(Debug, Clone, Copy)]
struct Cursor {
    t: usize,
    a: f64,
    filters: [VelocityFilter; 2],
    forward: bool,
}

impl Cursor {
    fn after_birth(t: usize, z: &Vector3<f64>, psi: &DynamicsParams) -> Self {
        Self {
            t,
            a: z[0],
            filters: [VelocityFilter::prior(z[1], psi.var_bv), VelocityFilter::prior(z[2], psi.var_bv)],
            forward: true,
        }
    }

    fn from_track(track: &Track, forward: bool) -> Self {
        let (t, x, sign) = if forward {
            (track.end() - 1, track.last(), 1.0)
        } else {
            (track.birth, track.first(), -1.0)
        };
        Self {
            t,
            a: x.a,
            filters: [
                VelocityFilter::anchored(x.s[0], sign * x.v[0]),
                VelocityFilter::anchored(x.s[1], sign * x.v[1]),
            ],
            forward,
        }
    }

    fn next_frame(&self, n: usize) -> Option<usize> {
        if self.forward {
            (self.t + 1 < n).then_some(self.t + 1)
        } else {
            self.t.checked_sub(1)
        }
    }

    fn advance(&self, t: usize, z: &Vector3<f64>, params: &ModelParams) -> Self {
        let mut filters = self.filters;
        for d in 0..2 {
            filters[d] = filters[d].update(z[d + 1], params.psi.var_motion(d), params.delta);
        }
        Self { t, a: z[0], filters, forward: self.forward }
    }
}

/// Why a sequential construction stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BeyondN,
    EmptyG,
    H1Rejected,
    NotSurvive,
}

/// Per-step trace of a construction.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub peak: (usize, usize),
    pub accept: f64,
}

#[derive(Debug, Clone)]
pub struct BirthRecord {
    pub track: Track,
    pub log_density: f64,
    pub steps: Vec<StepRecord>,
    pub stop: StopReason,
}

#[derive(Debug, Clone)]
pub enum BirthOutcome {
    Proposed(BirthRecord),
    Rejected(StopReason),
}

struct Continuation {
    zs: Vec<Vector3<f64>>,
    log_q: f64,
    steps: Vec<StepRecord>,
    stop: StopReason,
}

fn sample_continuation<R: Rng + ?Sized>(ctx: &ProposalContext<'_>, mut cursor: Cursor, rng: &mut R) -> Continuation {
    let ps = ctx.params.survival;
    let mut out = Continuation { zs: Vec::new(), log_q: 0.0, steps: Vec::new(), stop: StopReason::BeyondN };
    while let Some(t) = cursor.next_frame(ctx.params.frames()) {
        let mix = ctx.continuation_mixture(&cursor, t);
        let draw = if rng.random::<f64>() < ps { Some(mix.sample(rng)) } else { None };
        match draw {
            Some(StepDraw::Accepted { peak, accept, z }) => {
                out.log_q += ps.ln() + mix.log_density(&z);
                out.zs.push(z);
                out.steps.push(StepRecord { t, peak, accept });
                cursor = cursor.advance(t, &z, ctx.params);
            }
            other => {
                out.log_q += (-ps * mix.mass()).ln_1p();
                out.stop = match other {
                    None => StopReason::NotSurvive,
                    Some(StepDraw::Empty) => StopReason::EmptyG,
                    _ => StopReason::H1Rejected,
                };
                return out;
            }
        }
    }
    out
}

fn continuation_density(ctx: &ProposalContext<'_>, mut cursor: Cursor, zs: &[Vector3<f64>]) -> f64 {
    let ps = ctx.params.survival;
    let n = ctx.params.frames();
    let mut lq = 0.0;
    for z in zs {
        let Some(t) = cursor.next_frame(n) else { return f64::NEG_INFINITY };
        let mix = ctx.continuation_mixture(&cursor, t);
        lq += ps.ln() + mix.log_density(z);
        if lq == f64::NEG_INFINITY {
            return lq;
        }
        cursor = cursor.advance(t, z, ctx.params);
    }
    if let Some(t) = cursor.next_frame(n) {
        let mix = ctx.continuation_mixture(&cursor, t);
        lq += (-ps * mix.mass()).ln_1p();
    }
    lq
}

fn as_vector(x: &TargetState) -> Vector3<f64> {
    Vector3::new(x.a, x.s[0], x.s[1])
}

fn with_velocities(zs: &[Vector3<f64>], vs: Vec<[f64; 2]>) -> Vec<TargetState> {
    zs.iter().zip(vs).map(|(z, v)| TargetState::new(z[0], [z[1], z[2]], v)).collect()
}

/// Proposes a new track. `fixed_birth` pins the birth frame (the returned
/// density still includes the uniform birth-frame factor).
pub fn sample_birth_track<R: Rng + ?Sized>(ctx: &ProposalContext<'_>, rng: &mut R, fixed_birth: Option<usize>) -> BirthOutcome {
    let n = ctx.params.frames();
    let t_b = fixed_birth.unwrap_or_else(|| rng.random_range(0..n));
    let mix = ctx.birth_mixture(t_b);
    let (peak, accept, z0) = match mix.sample(rng) {
        StepDraw::Empty => return BirthOutcome::Rejected(StopReason::EmptyG),
        StepDraw::Rejected(_) => return BirthOutcome::Rejected(StopReason::H1Rejected),
        StepDraw::Accepted { peak, accept, z } => (peak, accept, z),
    };
    let mut log_q = -(n as f64).ln() + mix.log_density(&z0);
    let cursor = Cursor::after_birth(t_b, &z0, &ctx.params.psi);
    let cont = sample_continuation(ctx, cursor, rng);
    log_q += cont.log_q;
    let mut zs = vec![z0];
    zs.extend(cont.zs);
    let positions: Vec<[f64; 2]> = zs.iter().map(|z| [z[1], z[2]]).collect();
    let vc = VelocityConditional::new(&positions, ctx.params).expect("validated parameters");
    let vs = vc.sample(rng);
    log_q += vc.log_density(&vs);
    let mut steps = vec![StepRecord { t: t_b, peak, accept }];
    steps.extend(cont.steps);
    BirthOutcome::Proposed(BirthRecord {
        track: Track::new(t_b, with_velocities(&zs, vs)),
        log_density: log_q,
        steps,
        stop: cont.stop,
    })
}

/// log q_b of `track` under the birth proposal made from `ctx`.
pub fn birth_density(track: &Track, ctx: &ProposalContext<'_>) -> f64 {
    let n = ctx.params.frames();
    let zs: Vec<Vector3<f64>> = track.states.iter().map(as_vector).collect();
    let mix = ctx.birth_mixture(track.birth);
    let mut log_q = -(n as f64).ln() + mix.log_density(&zs[0]);
    if log_q == f64::NEG_INFINITY {
        return log_q;
    }
    let cursor = Cursor::after_birth(track.birth, &zs[0], &ctx.params.psi);
    log_q += continuation_density(ctx, cursor, &zs[1..]);
    let positions: Vec<[f64; 2]> = track.states.iter().map(|x| x.s).collect();
    let v: Vec<[f64; 2]> = track.states.iter().map(|x| x.v).collect();
    let vc = VelocityConditional::new(&positions, ctx.params).expect("validated parameters");
    log_q + vc.log_density(&v)
}

/// Extension segment (in time order) and its log-density, or `None` when the
/// construction stopped before adding a state.
pub fn sample_extension<R: Rng + ?Sized>(
    ctx: &ProposalContext<'_>,
    track: &Track,
    forward: bool,
    rng: &mut R,
) -> Option<(Vec<TargetState>, f64)> {
    let cont = sample_continuation(ctx, Cursor::from_track(track, forward), rng);
    if cont.zs.is_empty() {
        return None;
    }
    let mut zs = cont.zs;
    if !forward {
        zs.reverse();
    }
    let vc = extension_velocities(&zs, track, forward, ctx.params);
    let vs = vc.sample(rng);
    let log_q = cont.log_q + vc.log_density(&vs);
    Some((with_velocities(&zs, vs), log_q))
}

/// log-density of extending `track` by `segment` (time order).
pub fn extension_density(ctx: &ProposalContext<'_>, track: &Track, segment: &[TargetState], forward: bool) -> f64 {
    let mut zs: Vec<Vector3<f64>> = segment.iter().map(as_vector).collect();
    let vc = extension_velocities(&zs, track, forward, ctx.params);
    let v: Vec<[f64; 2]> = segment.iter().map(|x| x.v).collect();
    let lv = vc.log_density(&v);
    if !forward {
        zs.reverse();
    }
    continuation_density(ctx, Cursor::from_track(track, forward), &zs) + lv
}

fn extension_velocities(zs: &[Vector3<f64>], track: &Track, forward: bool, params: &ModelParams) -> VelocityConditional {
    let positions: Vec<[f64; 2]> = zs.iter().map(|z| [z[1], z[2]]).collect();
    let (start, end) = if forward {
        (Some(Anchor::from(track.last())), None)
    } else {
        (None, Some(Anchor::from(track.first())))
    };
    VelocityConditional::with_anchors(&positions, start, end, params).expect("validated parameters")
}
