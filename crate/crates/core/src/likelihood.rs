//! Marginal likelihood by tensor-product Gauss–Hermite quadrature over the two
//! subject effects, priors, posterior and BIC.
//!
//! For one subject the integrand factorises per day into
//! `sum_w Poisson(w | b) * A(w | u)`, where `A` is the total probability of
//! the rounding classes that map `w` onto the reported value. Poisson terms
//! are evaluated once per (day, b-node) and rounding terms once per
//! (day, u-node); the (b, u) grid then only needs multiply-adds. Each
//! (day, b-node) Poisson row is scaled by its maximum so the product over
//! days is accumulated in linear space with the logs of the scales carried
//! separately.
//!
//! With an adaptive rule the nodes are placed at `center + scale * z` per
//! effect. A pilot pass uses the mode and curvature of the subject's log joint
//! density of `(b, u)` (a few Newton steps); the final pass uses the posterior
//! means and SDs of the effects estimated by the pilot. The second placement
//! matters for `u`, whose posterior is skewed with a prior-like tail. Shifting
//! and scaling each axis separately keeps the grid a tensor product.

use crate::error::{Error, Result};
use crate::model::{
    coarsen, heaping_probs, ln_factorial, logistic_pair, pair_diff, CovariateLayout, Dataset,
    HeapingClass, ModelSpec, PriorConfig, SubjectRecord, Theta,
};
use crate::par::{self, Execution};
use crate::quadrature::QuadratureRule;

const RESCALE_BELOW: f64 = 1e-150;

/// Per-day scratch buffers, reused across days.
#[derive(Default)]
struct Scratch {
    masks: Vec<[bool; 4]>,
    pois: Vec<f64>,
    heap: Vec<f64>,
}

fn fill_masks(y: u32, masks: &mut Vec<[bool; 4]>) -> u32 {
    masks.clear();
    let (lo, hi) = if y.is_multiple_of(20) {
        (y.saturating_sub(10), y + 9)
    } else if y.is_multiple_of(10) {
        (y.saturating_sub(5), y + 4)
    } else if y.is_multiple_of(5) {
        (y.saturating_sub(2), y + 2)
    } else {
        (y, y)
    };
    for w in lo..=hi {
        let mut m = [false; 4];
        for g in HeapingClass::ALL {
            m[g.index()] = coarsen(w, g) == y;
        }
        masks.push(m);
    }
    lo
}

/// Effect values and log-weights along one axis of the grid.
struct Axis {
    values: Vec<f64>,
    log_weights: Vec<f64>,
}

impl Axis {
    fn point() -> Self {
        Axis {
            values: vec![0.0],
            log_weights: vec![0.0],
        }
    }

    /// Nodes for `E[f(e)]`, `e ~ N(0, sigma^2)`, placed at `center + scale z`.
    fn new(quad: &QuadratureRule, sigma: f64, center: f64, scale: f64) -> Self {
        let values = quad
            .nodes
            .iter()
            .map(|z| center + scale * z)
            .collect::<Vec<_>>();
        let log_weights = quad
            .nodes
            .iter()
            .zip(&quad.weights)
            .zip(&values)
            .map(|((z, w), e)| {
                w.ln() + (scale / sigma).ln() - 0.5 * (e / sigma).powi(2) + 0.5 * z * z
            })
            .collect();
        Axis {
            values,
            log_weights,
        }
    }
}

/// Mode of a subject's log joint density of `(b, u)` and the marginal SDs
/// from the inverse negative Hessian there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectMode {
    pub b: f64,
    pub u: f64,
    pub sd_b: f64,
    pub sd_u: f64,
}

/// Value, gradient and Hessian of `sum_t ln f(y_t | b, u) + ln N(b) + ln N(u)`.
fn log_joint_derivs(
    theta: &Theta,
    subject: &SubjectRecord,
    layout: &CovariateLayout,
    b: f64,
    u: f64,
    masks: &mut Vec<[bool; 4]>,
) -> (f64, [f64; 2], [f64; 3]) {
    let mut val = 0.0;
    let (mut gb, mut gu) = (0.0, 0.0);
    let (mut hbb, mut hbu, mut huu) = (0.0, 0.0, 0.0);
    let cuts = [theta.gamma1, theta.gamma2, theta.gamma3];
    for day in &subject.days {
        let w_lo = fill_masks(day.tlfb_count, masks);
        let lm = theta.beta0
            + theta.beta1 * (day.ema_count as f64).ln()
            + layout.recall_offset(subject, day, &theta.beta2)
            + b;
        let lambda = lm.exp();
        let heap_off = layout.heaping_offset(subject, day, &theta.beta3) + u;
        let mx = (0..masks.len())
            .map(|i| {
                let w = (w_lo + i as u32) as f64;
                w * lm - lambda - ln_factorial(w_lo + i as u32)
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let (mut s, mut sb, mut su, mut sbb, mut sbu, mut suu) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let mut e = ((w_lo as f64) * lm - lambda - ln_factorial(w_lo) - mx).exp();
        for (i, m) in masks.iter().enumerate() {
            let wi = w_lo + i as u32;
            let w = wi as f64;
            if i > 0 {
                e *= lambda / w;
            }
            let x = w * theta.gamma0 + heap_off;
            let a = cuts.map(|c| c + x);
            let lp = a.map(logistic_pair);
            let d: [f64; 3] = lp.map(|(q, r)| q * r);
            let dd: [f64; 3] = [0, 1, 2].map(|k| d[k] * (lp[k].1 - lp[k].0));
            let mut p = 0.0;
            let mut p1 = 0.0;
            let mut p2 = 0.0;
            if m[0] {
                p += lp[0].1;
                p1 -= d[0];
                p2 -= dd[0];
            }
            if m[1] {
                p += pair_diff(a[1], lp[0], lp[1]);
                p1 += d[0] - d[1];
                p2 += dd[0] - dd[1];
            }
            if m[2] {
                p += pair_diff(a[2], lp[1], lp[2]);
                p1 += d[1] - d[2];
                p2 += dd[1] - dd[2];
            }
            if m[3] {
                p += lp[2].0;
                p1 += d[2];
                p2 += dd[2];
            }
            let r = w - lambda;
            s += e * p;
            sb += e * p * r;
            sbb += e * p * (r * r - lambda);
            su += e * p1;
            suu += e * p2;
            sbu += e * p1 * r;
        }
        if !(s > 0.0) {
            return (f64::NEG_INFINITY, [0.0; 2], [0.0; 3]);
        }
        val += mx + s.ln();
        let (mb, mu) = (sb / s, su / s);
        gb += mb;
        gu += mu;
        hbb += sbb / s - mb * mb;
        hbu += sbu / s - mb * mu;
        huu += suu / s - mu * mu;
    }
    let (vb, vu) = (theta.sigma_b.powi(2), theta.sigma_u.powi(2));
    if vb > 0.0 {
        val -= 0.5 * b * b / vb;
        gb -= b / vb;
        hbb -= 1.0 / vb;
    }
    if vu > 0.0 {
        val -= 0.5 * u * u / vu;
        gu -= u / vu;
        huu -= 1.0 / vu;
    }
    (val, [gb, gu], [hbb, hbu, huu])
}

/// Newton search for the joint mode of a subject's effects. Dimensions with
/// zero prior SD are held at zero. Returns `None` when the search does not
/// settle on a point with negative-definite curvature.
pub fn subject_effect_mode(
    theta: &Theta,
    subject: &SubjectRecord,
    layout: &CovariateLayout,
) -> Option<EffectMode> {
    let act = [theta.sigma_b > 0.0, theta.sigma_u > 0.0];
    if !act[0] && !act[1] {
        return None;
    }
    let mut masks = Vec::new();
    let (mut b, mut u) = (0.0, 0.0);
    let (mut f, mut g, mut h) = log_joint_derivs(theta, subject, layout, b, u, &mut masks);
    if !f.is_finite() {
        return None;
    }
    let prior_prec = [
        if act[0] { theta.sigma_b.powi(-2) } else { 1.0 },
        if act[1] { theta.sigma_u.powi(-2) } else { 1.0 },
    ];
    for _ in 0..100 {
        // Negative Hessian restricted to the active dimensions.
        let mut n = [-h[0], -h[1], -h[2]];
        if !act[0] {
            n = [1.0, 0.0, n[2]];
        }
        if !act[1] {
            n = [n[0], 0.0, 1.0];
        }
        let grad = [
            if act[0] { g[0] } else { 0.0 },
            if act[1] { g[1] } else { 0.0 },
        ];
        let det = n[0] * n[2] - n[1] * n[1];
        let step = if n[0] > 0.0 && det > 0.0 {
            [
                (n[2] * grad[0] - n[1] * grad[1]) / det,
                (n[0] * grad[1] - n[1] * grad[0]) / det,
            ]
        } else {
            [grad[0] / prior_prec[0], grad[1] / prior_prec[1]]
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let (nb, nu) = (b + t * step[0], u + t * step[1]);
            let (nf, ng, nh) = log_joint_derivs(theta, subject, layout, nb, nu, &mut masks);
            if nf.is_finite() && nf >= f - 1e-12 * f.abs() {
                b = nb;
                u = nu;
                f = nf;
                g = ng;
                h = nh;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        let size = (t * step[0]).abs().max((t * step[1]).abs());
        if !moved || size < 1e-10 {
            break;
        }
    }
    let (nbb, nbu, nuu) = (-h[0], -h[1], -h[2]);
    let (sd_b, sd_u) = match act {
        [true, true] => {
            let det = nbb * nuu - nbu * nbu;
            if !(nbb > 0.0 && det > 0.0) {
                return None;
            }
            ((nuu / det).sqrt(), (nbb / det).sqrt())
        }
        [true, false] => (nbb.recip().sqrt(), 0.0),
        _ => (0.0, nuu.recip().sqrt()),
    };
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if (act[0] && !ok(sd_b)) || (act[1] && !ok(sd_u)) || !b.is_finite() || !u.is_finite() {
        return None;
    }
    Some(EffectMode { b, u, sd_b, sd_u })
}

/// Posterior mean and SD of each effect under the quadrature weights.
#[derive(Debug, Clone, Copy)]
struct GridMoments {
    mean_b: f64,
    sd_b: f64,
    mean_u: f64,
    sd_u: f64,
}

fn weighted_moments(values: &[f64], mass: &[f64]) -> (f64, f64) {
    let total: f64 = mass.iter().sum();
    let mean = values.iter().zip(mass).map(|(v, m)| v * m).sum::<f64>() / total;
    let var = values
        .iter()
        .zip(mass)
        .map(|(v, m)| (v - mean).powi(2) * m)
        .sum::<f64>()
        / total;
    (mean, var.sqrt())
}

/// Log of the quadrature sum over the tensor grid `bs x us`, and optionally
/// the effect moments under the normalised grid weights.
fn grid_loglik(
    theta: &Theta,
    subject: &SubjectRecord,
    layout: &CovariateLayout,
    bs: &Axis,
    us: &Axis,
    want_moments: bool,
) -> (f64, Option<GridMoments>) {
    let nb = bs.values.len();
    let nu = us.values.len();
    let mut log_scale = vec![0.0; nb];
    let mut prod = vec![1.0; nb * nu];
    let mut s = Scratch::default();

    for day in &subject.days {
        let w_lo = fill_masks(day.tlfb_count, &mut s.masks);
        let nw = s.masks.len();
        let recall = theta.beta0
            + theta.beta1 * (day.ema_count as f64).ln()
            + layout.recall_offset(subject, day, &theta.beta2);
        let heap_off = layout.heaping_offset(subject, day, &theta.beta3);

        s.pois.resize(nb * nw, 0.0);
        for (j, &bj) in bs.values.iter().enumerate().take(nb) {
            let lm = recall + bj;
            let lambda = lm.exp();
            let row = &mut s.pois[j * nw..(j + 1) * nw];
            // Relative to the first term of the window, by the ratio
            // recurrence; then rescaled by the row maximum.
            let mut v = 1.0;
            let mut mx = 0.0f64;
            for (i, r) in row.iter_mut().enumerate() {
                if i > 0 {
                    v *= lambda / (w_lo + i as u32) as f64;
                }
                *r = v;
                mx = mx.max(v);
            }
            if !(mx > 0.0 && mx.is_finite()) {
                // Window extremely far from the mean: fall back to logs.
                let logs: Vec<f64> = (0..nw)
                    .map(|i| {
                        let w = w_lo + i as u32;
                        w as f64 * lm - lambda - ln_factorial(w)
                    })
                    .collect();
                let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for (r, l) in row.iter_mut().zip(&logs) {
                    *r = (l - m).exp();
                }
                log_scale[j] += m;
            } else {
                for r in row.iter_mut() {
                    *r /= mx;
                }
                log_scale[j] += w_lo as f64 * lm - lambda - ln_factorial(w_lo) + mx.ln();
            }
        }

        s.heap.resize(nu * nw, 0.0);
        for k in 0..nu {
            let u = us.values[k];
            let row = &mut s.heap[k * nw..(k + 1) * nw];
            for (i, r) in row.iter_mut().enumerate() {
                let w = w_lo + i as u32;
                let p = heaping_probs(theta, w as f64 * theta.gamma0 + heap_off + u);
                let m = &s.masks[i];
                *r = (0..4).filter(|&g| m[g]).map(|g| p[g]).sum();
            }
        }

        for j in 0..nb {
            let prow = &s.pois[j * nw..(j + 1) * nw];
            let out = &mut prod[j * nu..(j + 1) * nu];
            let mut row_max = 0.0f64;
            for (k, o) in out.iter_mut().enumerate() {
                let hrow = &s.heap[k * nw..(k + 1) * nw];
                let dot: f64 = prow.iter().zip(hrow).map(|(a, b)| a * b).sum();
                *o *= dot;
                row_max = row_max.max(*o);
            }
            if row_max > 0.0 && row_max < RESCALE_BELOW {
                for o in out.iter_mut() {
                    *o /= row_max;
                }
                log_scale[j] += row_max.ln();
            }
        }
    }

    // u log-weights can exceed the exponent range only for absurd scales;
    // factor out their maximum anyway.
    let lwu_max = us
        .log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let wu: Vec<f64> = us.log_weights.iter().map(|l| (l - lwu_max).exp()).collect();
    let terms: Vec<f64> = (0..nb)
        .map(|j| {
            let inner: f64 = wu
                .iter()
                .zip(&prod[j * nu..(j + 1) * nu])
                .map(|(w, p)| w * p)
                .sum();
            bs.log_weights[j] + lwu_max + log_scale[j] + inner.ln()
        })
        .collect();
    let ll = crate::model::log_sum_exp(&terms);
    if !want_moments || !ll.is_finite() {
        return (ll, None);
    }
    let mass_b: Vec<f64> = terms.iter().map(|t| (t - ll).exp()).collect();
    let mut mass_u = vec![0.0; nu];
    for j in 0..nb {
        let c = (bs.log_weights[j] + lwu_max + log_scale[j] - ll).exp();
        for (k, m) in mass_u.iter_mut().enumerate() {
            *m += c * wu[k] * prod[j * nu + k];
        }
    }
    let (mean_b, sd_b) = weighted_moments(&bs.values, &mass_b);
    let (mean_u, sd_u) = weighted_moments(&us.values, &mass_u);
    (
        ll,
        Some(GridMoments {
            mean_b,
            sd_b,
            mean_u,
            sd_u,
        }),
    )
}

fn axis(rule: &QuadratureRule, sigma: f64, center: f64, scale: f64) -> Axis {
    if sigma > 0.0 {
        Axis::new(rule, sigma, center, scale)
    } else {
        Axis::point()
    }
}

/// Posterior means and SDs of a subject's effects, estimated by a quadrature
/// pass placed at the joint mode (using `quad`'s pilot rule). Falls back to
/// the mode and curvature when the moments are unusable. The `b`/`u` fields
/// hold the means.
pub fn subject_effect_moments(
    theta: &Theta,
    subject: &SubjectRecord,
    layout: &CovariateLayout,
    quad: &QuadratureRule,
) -> Option<EffectMode> {
    let m = subject_effect_mode(theta, subject, layout)?;
    let (sb, su) = (theta.sigma_b, theta.sigma_u);
    let pilot = quad.pilot_rule();
    let (_, mom) = grid_loglik(
        theta,
        subject,
        layout,
        &axis(pilot, sb, m.b, m.sd_b),
        &axis(pilot, su, m.u, m.sd_u),
        true,
    );
    let ok = |v: f64| v.is_finite() && v > 0.0;
    match mom {
        Some(g) if (sb == 0.0 || ok(g.sd_b)) && (su == 0.0 || ok(g.sd_u)) => Some(EffectMode {
            b: g.mean_b,
            u: g.mean_u,
            sd_b: g.sd_b,
            sd_u: g.sd_u,
        }),
        _ => Some(m),
    }
}

/// `ln L_i(theta)`: the log marginal likelihood of one subject.
pub fn subject_loglik(
    theta: &Theta,
    subject: &SubjectRecord,
    layout: &CovariateLayout,
    quad: &QuadratureRule,
) -> Result<f64> {
    if subject.days.is_empty() {
        return Err(Error::InvalidInput(format!(
            "subject {} has no days",
            subject.subject_id
        )));
    }
    let (sb, su) = (theta.sigma_b, theta.sigma_u);
    let place = if quad.adaptive {
        subject_effect_moments(theta, subject, layout, quad)
    } else {
        None
    };
    let (bs, us) = match place {
        Some(m) => (axis(quad, sb, m.b, m.sd_b), axis(quad, su, m.u, m.sd_u)),
        None => (axis(quad, sb, 0.0, sb), axis(quad, su, 0.0, su)),
    };
    let ll = grid_loglik(theta, subject, layout, &bs, &us, false).0;
    if !ll.is_finite() {
        return Err(Error::NonFiniteLikelihood {
            subject_id: subject.subject_id.clone(),
            theta: theta.to_string(),
        });
    }
    Ok(ll)
}

/// Per-subject log-likelihoods, in subject order.
pub fn subject_logliks(
    theta: &Theta,
    dataset: &Dataset,
    quad: &QuadratureRule,
    exec: Execution,
) -> Result<Vec<f64>> {
    if dataset.subjects.is_empty() {
        return Err(Error::EmptyDataset);
    }
    theta.validate()?;
    par::map(&dataset.subjects, exec, |s| {
        subject_loglik(theta, s, &dataset.layout, quad)
    })
    .into_iter()
    .collect()
}

/// Sum of [`subject_loglik`] over subjects, reduced in subject order.
pub fn dataset_loglik(theta: &Theta, dataset: &Dataset, quad: &QuadratureRule) -> Result<f64> {
    dataset_loglik_with(theta, dataset, quad, Execution::default())
}

pub fn dataset_loglik_with(
    theta: &Theta,
    dataset: &Dataset,
    quad: &QuadratureRule,
    exec: Execution,
) -> Result<f64> {
    let parts = subject_logliks(theta, dataset, quad, exec)?;
    Ok(par::ordered_sum(&parts))
}

pub fn log_normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (2.0 * std::f64::consts::PI).ln() - sd.ln() - 0.5 * z * z
}

pub fn log_inverse_gamma_density(v: f64, shape: f64, scale: f64) -> f64 {
    if !(v > 0.0) {
        return f64::NEG_INFINITY;
    }
    shape * scale.ln()
        - statrs::function::gamma::ln_gamma(shape)
        - (shape + 1.0) * v.ln()
        - scale / v
}

/// Log prior density. Normal priors on every regression coefficient and
/// intercept, inverse-gamma priors on the random-effect variances (omitted
/// when `random_effects` is false). The intercept-ordering truncation enters
/// as an indicator; its normalising constant is dropped.
pub fn log_prior(theta: &Theta, prior: &PriorConfig, random_effects: bool) -> f64 {
    if !theta.intercepts_ordered() {
        return f64::NEG_INFINITY;
    }
    let sd = prior.coef_prior_sd;
    let mut lp = log_normal_density(theta.beta0, 0.0, sd)
        + log_normal_density(theta.beta1, prior.beta1_prior_mean, prior.beta1_prior_sd);
    for &c in theta.beta2.iter().chain(&theta.beta3).chain(&[
        theta.gamma1,
        theta.gamma2,
        theta.gamma3,
        theta.gamma0,
    ]) {
        lp += log_normal_density(c, 0.0, sd);
    }
    if random_effects {
        let (a, s) = (prior.variance_ig_shape, prior.variance_ig_scale);
        lp += log_inverse_gamma_density(theta.sigma_b * theta.sigma_b, a, s);
        lp += log_inverse_gamma_density(theta.sigma_u * theta.sigma_u, a, s);
    }
    lp
}

/// `dataset_loglik + log_prior`; `-inf` without touching the data when the
/// prior rules `theta` out.
pub fn log_posterior(
    theta: &Theta,
    dataset: &Dataset,
    quad: &QuadratureRule,
    spec: &ModelSpec,
) -> Result<f64> {
    log_posterior_with(theta, dataset, quad, spec, Execution::default())
}

pub fn log_posterior_with(
    theta: &Theta,
    dataset: &Dataset,
    quad: &QuadratureRule,
    spec: &ModelSpec,
    exec: Execution,
) -> Result<f64> {
    let lp = log_prior(theta, &spec.prior, spec.random_effects);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(dataset_loglik_with(theta, dataset, quad, exec)? + lp)
}

/// `-2 loglik + n_params ln(n_subjects)`.
pub fn bic(loglik: f64, n_params: usize, n_subjects: usize) -> Result<f64> {
    if n_subjects < 1 {
        return Err(Error::InvalidInput("BIC needs at least one subject".into()));
    }
    Ok(-2.0 * loglik + n_params as f64 * (n_subjects as f64).ln())
}
