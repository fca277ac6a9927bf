//! Conjugate parameter updates against closed forms and against direct
//! numerical integration of the unnormalised conditionals, plus the
//! random-walk MH fallback.

mod common;

use common::*;
use mtt_core::model::ImageStack;
use mtt_core::params::*;
use mtt_core::representation::TrackSet;
use mtt_core::state::ChainState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Gamma, InverseGamma, Normal, StudentsT};

const DRAWS: usize = 100_000;

fn column<const D: usize>(xs: &[[f64; D]], d: usize) -> Vec<f64> {
    xs.iter().map(|x| x[d]).collect()
}

fn ks_pass(name: &str, mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) {
    let (d, p) = ks_test(&mut xs, cdf);
    println!("{name}: D {d:.5} p {p:.3}");
    assert!(p > 0.01, "{name}: KS p {p}");
}

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Uniform grid spanning the draws with some margin, kept positive for
/// variances.
fn span(xs: &[f64], positive: bool, n: usize) -> Vec<f64> {
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w = hi - lo;
    let (mut a, b) = (lo - 0.2 * w, hi + 0.2 * w);
    if positive {
        a = a.max(lo * 0.5);
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// CDF from log-density values on a uniform grid by the trapezoid rule.
fn grid_cdf(grid: Vec<f64>, logd: Vec<f64>) -> impl Fn(f64) -> f64 {
    let m = logd.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let d: Vec<f64> = logd.iter().map(|l| (l - m).exp()).collect();
    let mut cum = vec![0.0; d.len()];
    for i in 1..d.len() {
        cum[i] = cum[i - 1] + 0.5 * (d[i] + d[i - 1]);
    }
    let total = *cum.last().unwrap();
    cum.iter_mut().for_each(|c| *c /= total);
    move |x: f64| {
        if x <= grid[0] {
            return 0.0;
        }
        let h = grid[1] - grid[0];
        let i = ((x - grid[0]) / h) as usize;
        if i + 1 >= grid.len() {
            return 1.0;
        }
        let f = (x - grid[i]) / h;
        cum[i] + f * (cum[i + 1] - cum[i])
    }
}

fn ln_ig(p: InvGamma, x: f64) -> f64 {
    InverseGamma::new(p.alpha, p.beta).unwrap().ln_pdf(x)
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    Normal::new(mean, var.sqrt()).unwrap().ln_pdf(x)
}

/// Checks the marginals of `(μ, σ²)` draws against a 2-D quadrature of
/// prior × likelihood for iid normal data.
fn check_nig(name: &str, draws: &[(f64, f64)], data: &[f64], mean: MeanPrior, ig: InvGamma) {
    let mus: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let vars: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let (gm, gv) = (span(&mus, false, 500), span(&vars, true, 500));
    let logf = |mu: f64, v: f64| {
        ln_ig(ig, v) + ln_normal(mu, mean.mu0, v / mean.n0) + data.iter().map(|&x| ln_normal(x, mu, v)).sum::<f64>()
    };
    let table: Vec<Vec<f64>> = gm.iter().map(|&mu| gv.iter().map(|&v| logf(mu, v)).collect()).collect();
    let lm: Vec<f64> = table.iter().map(|row| log_sum_exp(row.iter().copied())).collect();
    let lv: Vec<f64> = (0..gv.len()).map(|j| log_sum_exp(table.iter().map(|row| row[j]))).collect();
    ks_pass(&format!("{name} mean"), mus, grid_cdf(gm, lm));
    ks_pass(&format!("{name} variance"), vars, grid_cdf(gv, lv));
}

#[test]
fn discrete_posteriors_match_closed_form() {
    let tracks = counted_tracks();
    let prior = PriorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<(f64, f64)> = (0..DRAWS).map(|_| update_discrete_params(&tracks, 6, &prior, &mut rng)).collect();
    let ps: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let lam: Vec<f64> = draws.iter().map(|d| d.1).collect();

    let beta = Beta::new(6.0, 3.0).unwrap();
    let mean = ps.iter().sum::<f64>() / DRAWS as f64;
    let sd = (6.0 * 3.0 / (81.0 * 10.0) / DRAWS as f64).sqrt();
    assert!((mean - 2.0 / 3.0).abs() < 3.0 * sd, "mean {mean}");
    ks_pass("p_s", ps, |x| beta.cdf(x));

    let (alpha, rate) = (0.01 + 3.0, 1.0 / 100.0 + 6.0);
    let gamma = Gamma::new(alpha, rate).unwrap();
    let mean = lam.iter().sum::<f64>() / DRAWS as f64;
    assert!((mean - alpha / rate).abs() < 3.0 * (alpha / rate / rate / DRAWS as f64).sqrt());
    ks_pass("lambda_b", lam, |x| gamma.cdf(x));
}

#[test]
fn single_frame_survival_is_prior() {
    let tracks = vec![still(0, 1), still(0, 1)];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ps: Vec<f64> =
        (0..DRAWS).map(|_| update_discrete_params(&tracks, 1, &PriorConfig::default(), &mut rng).0).collect();
    ks_pass("uniform p_s", ps, |x| x.clamp(0.0, 1.0));
}

#[test]
fn per_frame_observation_update() {
    let (p, tracks, y) = observation_setup();
    let prior = informative_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..DRAWS / 2)
        .map(|_| update_observation_params(&tracks, &y, &p, &prior, ObservationModel::PerFrame, &mut rng))
        .collect();
    for t in [0, 1] {
        let pairs: Vec<(f64, f64)> = draws.iter().map(|(b, v)| (b[t], v[t])).collect();
        check_nig(&format!("frame {t}"), &pairs, &target_free(&y, &tracks, &p, t), prior.background, prior.noise_var);
    }
}

#[test]
fn pooled_observation_update() {
    let (p, tracks, y) = observation_setup();
    let prior = informative_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(f64, f64)> = (0..DRAWS / 2)
        .map(|_| {
            let (b, v) = update_observation_params(&tracks, &y, &p, &prior, ObservationModel::Pooled, &mut rng);
            assert!(b.iter().all(|x| *x == b[0]) && v.iter().all(|x| *x == v[0]));
            (b[0], v[0])
        })
        .collect();
    let data: Vec<f64> = (0..3).flat_map(|t| target_free(&y, &tracks, &p, t)).collect();
    check_nig("pooled", &pairs, &data, prior.background, prior.noise_var);
}

#[test]
fn noise_only_update_keeps_backgrounds() {
    let (p, tracks, y) = observation_setup();
    let prior = informative_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let vars: Vec<f64> = (0..DRAWS)
        .map(|_| {
            let (b, v) = update_observation_params(&tracks, &y, &p, &prior, ObservationModel::NoiseOnly, &mut rng);
            assert_eq!(b, p.background);
            v[0]
        })
        .collect();
    let noise: Vec<f64> =
        (0..3).flat_map(|t| target_free(&y, &tracks, &p, t).into_iter().map(|r| r - p.background[t]).collect::<Vec<_>>()).collect();
    let g = span(&vars, true, 4000);
    let ld = g.iter().map(|&v| ln_ig(prior.noise_var, v) + noise.iter().map(|&r| ln_normal(r, 0.0, v)).sum::<f64>()).collect();
    ks_pass("noise-only variance", vars, grid_cdf(g, ld));
}

/// log N₂(u; 0, q·[[δ³/3, δ²/2], [δ²/2, δ]]).
fn ln_motion(u: [f64; 2], q: f64, delta: f64) -> f64 {
    let (a, b, c) = (q * delta.powi(3) / 3.0, q * delta * delta / 2.0, q * delta);
    let det = a * c - b * b;
    let quad = (c * u[0] * u[0] - 2.0 * b * u[0] * u[1] + a * u[1] * u[1]) / det;
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad
}

#[test]
fn dynamics_update_matches_quadrature() {
    let delta = 0.5;
    let (p, tracks) = dynamics_tracks([10.0, 3.0, 4.0, 2.0, 1.5, 0.3, 0.4, 0.05, 0.08], delta, 6, 4, 7);
    let prior = informative_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws: Vec<[f64; 9]> =
        (0..DRAWS).map(|_| update_dynamics_params(&tracks, p.delta, &prior, &mut rng).to_array()).collect();

    let a0: Vec<f64> = tracks.iter().map(|k| k.first().a).collect();
    let pairs: Vec<(f64, f64)> = draws.iter().map(|d| (d[0], d[3])).collect();
    check_nig("birth intensity", &pairs, &a0, prior.mu_bi, prior.var_bi);

    let one_d = |name: &str, idx: usize, ig: InvGamma, ll: &dyn Fn(f64) -> f64| {
        let xs = column(&draws, idx);
        let g = span(&xs, true, 4000);
        let ld = g.iter().map(|&v| ln_ig(ig, v) + ll(v)).collect();
        ks_pass(name, xs, grid_cdf(g, ld));
    };
    let incs: Vec<f64> = tracks.iter().flat_map(|k| k.states.windows(2).map(|w| w[1].a - w[0].a)).collect();
    one_d("var_i", 6, prior.var_i, &|v| incs.iter().map(|&d| ln_normal(d, 0.0, v)).sum());
    let v0: Vec<f64> = tracks.iter().flat_map(|k| k.first().v).collect();
    one_d("var_bv", 5, prior.var_bv, &|v| v0.iter().map(|&x| ln_normal(x, 0.0, v)).sum());
    for (d, idx, ig) in [(0, 7, prior.var_x), (1, 8, prior.var_y)] {
        let us: Vec<[f64; 2]> = tracks
            .iter()
            .flat_map(|k| {
                k.states.windows(2).map(move |w| [w[1].s[d] - w[0].s[d] - delta * w[0].v[d], w[1].v[d] - w[0].v[d]])
            })
            .collect();
        one_d(&format!("motion variance {d}"), idx, ig, &|q| us.iter().map(|&u| ln_motion(u, q, delta)).sum());
    }

    // (μ_bx, μ_by, σ_bp²): given σ_bp² the two means factorise, so each
    // marginal is a 2-D quadrature with the other mean integrated out on
    // its own grid.
    let (xs, ys, vs) = (column(&draws, 1), column(&draws, 2), column(&draws, 4));
    let (gx, gy, gv) = (span(&xs, false, 400), span(&ys, false, 400), span(&vs, true, 3000));
    let pos: Vec<[f64; 2]> = tracks.iter().map(|k| k.first().s).collect();
    let axis = |d: usize, m: MeanPrior, mu: f64, v: f64| {
        ln_normal(mu, m.mu0, v / m.n0) + pos.iter().map(|s| ln_normal(s[d], mu, v)).sum::<f64>()
    };
    let inner = |d: usize, m: MeanPrior, g: &[f64]| -> Vec<f64> {
        gv.iter().map(|&v| log_sum_exp(g.iter().map(|&mu| axis(d, m, mu, v)))).collect()
    };
    let (ix, iy) = (inner(0, prior.mu_bx, &gx), inner(1, prior.mu_by, &gy));
    let base: Vec<f64> = gv.iter().map(|&v| ln_ig(prior.var_bp, v)).collect();
    let lv = (0..gv.len()).map(|l| base[l] + ix[l] + iy[l]).collect();
    let lx = gx
        .iter()
        .map(|&mu| log_sum_exp(gv.iter().enumerate().map(|(l, &v)| base[l] + iy[l] + axis(0, prior.mu_bx, mu, v))))
        .collect();
    let ly = gy
        .iter()
        .map(|&mu| log_sum_exp(gv.iter().enumerate().map(|(l, &v)| base[l] + ix[l] + axis(1, prior.mu_by, mu, v))))
        .collect();
    ks_pass("mu_bx", xs, grid_cdf(gx, lx));
    ks_pass("mu_by", ys, grid_cdf(gy, ly));
    ks_pass("var_bp", vs, grid_cdf(gv, lv));
}

#[test]
fn no_tracks_draw_from_prior() {
    let prior = informative_prior();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws: Vec<[f64; 9]> = (0..DRAWS).map(|_| update_dynamics_params(&[], 1.0, &prior, &mut rng).to_array()).collect();
    let ig = |p: InvGamma| InverseGamma::new(p.alpha, p.beta).unwrap();
    for (idx, p) in [(3, prior.var_bi), (4, prior.var_bp), (5, prior.var_bv), (6, prior.var_i), (7, prior.var_x), (8, prior.var_y)] {
        let d = ig(p);
        ks_pass(&format!("prior component {idx}"), column(&draws, idx), |x| d.cdf(x));
    }
    // Marginally the mean is Student-t with 2α degrees of freedom.
    let (m, v) = (prior.mu_bi, prior.var_bi);
    let t = StudentsT::new(m.mu0, (v.beta / (v.alpha * m.n0)).sqrt(), 2.0 * v.alpha).unwrap();
    ks_pass("prior mu_bi", column(&draws, 0), |x| t.cdf(x));
}

#[test]
fn many_tracks_recover_dynamics() {
    let truth = [10.0, 3.0, 4.0, 2.0, 1.5, 0.3, 0.4, 0.05, 0.08];
    let (p, tracks) = dynamics_tracks(truth, 1.0, 200, 10, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws: Vec<[f64; 9]> =
        (0..2000).map(|_| update_dynamics_params(&tracks, p.delta, &PriorConfig::default(), &mut rng).to_array()).collect();
    // Transition variances see 1800 increments each and land within 10%.
    // Initial-state variances see only 200 (or 400) draws, whose own
    // sampling spread is about 10%, so they get a 3σ band instead.
    for idx in 3..9 {
        let mean = column(&draws, idx).iter().sum::<f64>() / draws.len() as f64;
        let rel = (mean / truth[idx] - 1.0).abs();
        let band = match idx {
            3 => 3.0 * (2.0 / 200.0f64).sqrt(),
            4 | 5 => 3.0 * (2.0 / 400.0f64).sqrt(),
            _ => 0.1,
        };
        assert!(rel < band, "component {idx}: {mean} vs {}", truth[idx]);
    }
}

/// Binned total variation between chain draws on (0, 1) and a CDF.
fn binned_tv(xs: &[f64], cdf: impl Fn(f64) -> f64, bins: usize) -> f64 {
    let mut h = vec![0.0; bins];
    for &x in xs {
        h[((x * bins as f64) as usize).min(bins - 1)] += 1.0 / xs.len() as f64;
    }
    let exact: Vec<f64> = (0..bins).map(|b| cdf((b + 1) as f64 / bins as f64) - cdf(b as f64 / bins as f64)).collect();
    total_variation(&h, &exact)
}

#[test]
fn mh_step_targets_beta_toy() {
    let target = Beta::new(3.0, 5.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut x = 0.5;
    let xs: Vec<f64> = (0..200_000)
        .map(|_| {
            x = mh_step(x, 1.0, Scale::Logit, |v| target.ln_pdf(v), &mut rng).0;
            x
        })
        .collect();
    let tv = binned_tv(&xs, |v| target.cdf(v), 20);
    println!("mh toy TV {tv:.4}");
    assert!(tv < 0.05);
}

#[test]
fn mh_acceptance_falls_with_step() {
    let target = Beta::new(3.0, 5.0).unwrap();
    let rates: Vec<f64> = [0.1, 0.3, 1.0, 3.0, 10.0]
        .iter()
        .map(|&step| {
            let mut rng = ChaCha8Rng::seed_from_u64(13);
            let mut x = 0.4;
            let mut acc = 0;
            for _ in 0..50_000 {
                let (nx, ok) = mh_step(x, step, Scale::Logit, |v| target.ln_pdf(v), &mut rng);
                x = nx;
                acc += ok as usize;
            }
            acc as f64 / 50_000.0
        })
        .collect();
    println!("acceptance {rates:?}");
    assert!(rates.windows(2).all(|w| w[1] < w[0]), "{rates:?}");
}

#[test]
fn mh_update_agrees_with_conjugate_survival() {
    let mut p = pgibbs_params();
    p.background = vec![0.0; 6];
    p.noise_var = vec![1.0; 6];
    let y = ImageStack::zeros(6, 8, 8);
    let tracks = TrackSet::from_tracks(counted_tracks(), 6).unwrap();
    let mut state = ChainState::new(tracks, p, &y).unwrap();
    let cfg = MhConfig { survival: 1.5, ..Default::default() };
    let prior = PriorConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| {
            mh_update(&mut state, &y, &prior, ObservationModel::PerFrame, &cfg, &mut rng).unwrap();
            state.params.survival
        })
        .collect();
    let beta = Beta::new(6.0, 3.0).unwrap();
    let tv = binned_tv(&xs, |v| beta.cdf(v), 20);
    println!("mh survival TV {tv:.4}");
    assert!(tv < 0.05);
}
