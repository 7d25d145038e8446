//! Acceptance suite. Prints one `PASS`/`FAIL`/`SKIP` line per criterion and
//! exits non-zero if any criterion fails.
//!
//! The bootstrap-coverage criterion takes many hours on a desktop and runs
//! only with `HEAPCOUNT_SLOW=1` (or `--include-ignored` / `--ignored`). The
//! real-data criterion runs only when `HEAPCOUNT_SUPPLEMENT_CSV` points at the
//! study data.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use heapcount::diagnostics::{marginal_heaping_curve, simple_model_fit, HeapingCurveMode};
use heapcount::estimation::{find_posterior_mode, wald_intervals, FitOptions, Objective};
use heapcount::imputation::{
    impute_day, impute_latents, imputed_heap_fractions, observed_heap_fractions, ImputationMode,
    ImputationOptions,
};
use heapcount::likelihood::{dataset_loglik, subject_loglik};
use heapcount::model::VISIT_DAY;
use heapcount::model::{coarsen, heaping_pmf, inverse_coarsen, HeapingClass, SubjectRecord, Theta};
use heapcount::quadrature::QuadratureRule;
use heapcount::rng::stream_rng;
use heapcount::simulation::{
    generate_dataset, marginal_mean_recall, run_simulation_study, scenario_case1, scenario_case2,
    CiMethod, StudyOptions,
};
use heapcount::ModelSpec;

// Tolerances.
const PMF_TOL_PCT: f64 = 0.05;
const MEAN_TOL: f64 = 0.05;
const MC_DRAWS: usize = 1_000_000;
const MC_SUBJECTS: usize = 20;
const MC_SIGMAS: f64 = 3.0;
const NODE_REL_TOL: f64 = 1e-6;
const FIG4_TOL: f64 = 0.02;
const GOF_DRAWS: usize = 100_000;
const GOF_ALPHA: f64 = 0.01;
const GOF_SIMS: usize = 2000;
const SPIKE_MAX: f64 = 1.15;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------------------
// 1. Analytic probability checkpoints.

fn criterion_1() -> Verdict {
    let (c1, _) = scenario_case1();
    let (c2, _) = scenario_case2();
    let mut worst = 0.0f64;
    let mut notes = vec![];
    let pmf_cases: [(&Theta, u32, [f64; 4]); 3] = [
        (&c1, 22, [28.3, 66.3, 5.4, 0.04]),
        (&c1, 36, [7.8, 71.2, 20.8, 0.2]),
        (&c2, 22, [29.6, 62.3, 7.1, 1.0]),
    ];
    for (t, w, expect) in pmf_cases {
        let p = heaping_pmf(t, w, &[], 0.0).unwrap();
        for k in 0..4 {
            let d = (100.0 * p[k] - expect[k]).abs();
            worst = worst.max(d);
            if d > PMF_TOL_PCT {
                notes.push(format!(
                    "pmf w={w} class {k}: {:.3}% vs {}%",
                    100.0 * p[k],
                    expect[k]
                ));
            }
        }
    }
    let mut worst_mean = 0.0f64;
    let cond = |t: &Theta, x: f64| (t.beta0 + t.beta1 * x.ln()).exp();
    let means = [
        ("case1 conditional x=20", cond(&c1, 20.0), 23.2),
        ("case1 conditional x=30", cond(&c1, 30.0), 25.8),
        (
            "case1 marginal x=20",
            marginal_mean_recall(&c1, 20, &[]).unwrap(),
            24.3,
        ),
        (
            "case1 marginal x=30",
            marginal_mean_recall(&c1, 30, &[]).unwrap(),
            27.0,
        ),
        (
            "case2 marginal x=20",
            marginal_mean_recall(&c2, 20, &[]).unwrap(),
            20.5,
        ),
        (
            "case2 marginal x=30",
            marginal_mean_recall(&c2, 30, &[]).unwrap(),
            30.8,
        ),
    ];
    for (name, got, want) in means {
        let d = (got - want).abs();
        worst_mean = worst_mean.max(d);
        if d > MEAN_TOL {
            notes.push(format!("{name}: {got:.3} vs {want}"));
        }
    }
    verdict(
        notes.is_empty(),
        format!(
            "max pmf error {worst:.4} pp (tol {PMF_TOL_PCT}), max mean error {worst_mean:.4} (tol {MEAN_TOL}){}",
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Coarsening oracle.

fn criterion_2() -> Verdict {
    let mut bad = 0;
    for w in 0..=200u32 {
        for g in HeapingClass::ALL {
            let y = coarsen(w, g);
            if !inverse_coarsen(y).contains(&(w, g)) {
                bad += 1;
            }
        }
    }
    for y in 0..=220u32 {
        bad += inverse_coarsen(y)
            .iter()
            .filter(|&&(w, g)| coarsen(w, g) != y)
            .count();
    }
    let mut wg5 = inverse_coarsen(5);
    wg5.sort();
    let mut listed = vec![(5, HeapingClass::Exact)];
    listed.extend((3..=7).map(|w| (w, HeapingClass::Nearest5)));
    listed.sort();
    verdict(
        bad == 0 && wg5 == listed,
        format!(
            "{bad} round-trip violations over w in [0, 200] and y in [0, 220]; WG(5) = {wg5:?}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Quadrature against a Monte Carlo oracle, and node convergence.

/// Per-day terms: for each `w` in the window, the class indices whose
/// rounding of `w` reproduces `y`. Built from an independent rounding rule.
fn oracle_window(y: u32) -> Vec<(u32, Vec<usize>)> {
    let round = |w: u32, base: u32| (w + base / 2) / base * base;
    (0..=y + 20)
        .filter_map(|w| {
            let ks: Vec<usize> = [1u32, 5, 10, 20]
                .iter()
                .enumerate()
                .filter(|(_, &b)| round(w, b) == y)
                .map(|(k, _)| k)
                .collect();
            (!ks.is_empty()).then_some((w, ks))
        })
        .collect()
}

struct OracleDay {
    log_x: f64,
    window: Vec<(u32, Vec<usize>, f64)>,
}

fn ln_fact(w: u32) -> f64 {
    (1..=w).map(|k| (k as f64).ln()).sum()
}

fn oracle_subject_logf(t: &Theta, days: &[OracleDay], b: f64, u: f64) -> f64 {
    let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
    let mut total = 0.0;
    for d in days {
        let lm = t.beta0 + t.beta1 * d.log_x + b;
        let lam = lm.exp();
        let mut f = 0.0;
        for (w, ks, lf) in &d.window {
            let e = *w as f64 * t.gamma0 + u;
            let c = [sig(t.gamma1 + e), sig(t.gamma2 + e), sig(t.gamma3 + e)];
            let probs = [1.0 - c[0], c[0] - c[1], c[1] - c[2], c[2]];
            let pois = (*w as f64 * lm - lam - lf).exp();
            f += pois * ks.iter().map(|&k| probs[k]).sum::<f64>();
        }
        total += f.ln();
    }
    total
}

fn oracle_days(s: &SubjectRecord) -> Vec<OracleDay> {
    s.days
        .iter()
        .map(|d| OracleDay {
            log_x: (d.ema_count as f64).ln(),
            window: oracle_window(d.tlfb_count)
                .into_iter()
                .map(|(w, ks)| (w, ks, ln_fact(w)))
                .collect(),
        })
        .collect()
}

fn criterion_3() -> Verdict {
    let quad20 = QuadratureRule::gauss_hermite(20).unwrap();
    let quad40 = QuadratureRule::gauss_hermite(40).unwrap();
    let mut lines = vec![];
    let mut ok = true;
    for (name, (t, d), seed) in [
        ("case1", scenario_case1(), 31u64),
        ("case2", scenario_case2(), 32u64),
    ] {
        let data = generate_dataset(&t, &d, seed).unwrap().dataset;
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        let idx = rand::seq::index::sample(&mut pick, data.subjects.len(), MC_SUBJECTS);
        let mut worst_z = 0.0f64;
        let mut worst_rel = 0.0f64;
        for (j, i) in idx.into_iter().enumerate() {
            let s = &data.subjects[i];
            let lq = subject_loglik(&t, s, &data.layout, &quad20).unwrap();
            let days = oracle_days(s);
            let mut rng = stream_rng(seed, j as u64);
            let nb = Normal::new(0.0, t.sigma_b).unwrap();
            let nu = Normal::new(0.0, t.sigma_u).unwrap();
            let (mut m, mut m2) = (0.0, 0.0);
            for _ in 0..MC_DRAWS {
                let (b, u) = (nb.sample(&mut rng), nu.sample(&mut rng));
                let r = (oracle_subject_logf(&t, &days, b, u) - lq).exp();
                m += r;
                m2 += r * r;
            }
            let n = MC_DRAWS as f64;
            let mean = m / n;
            let se = ((m2 / n - mean * mean).max(0.0) / n).sqrt();
            let z = (mean - 1.0).abs() / se;
            worst_z = worst_z.max(z);
            worst_rel = worst_rel.max((mean - 1.0).abs());
            if z > MC_SIGMAS {
                ok = false;
                lines.push(format!(
                    "{name} {}: ratio {mean:.5} ± {se:.5}",
                    s.subject_id
                ));
            }
        }
        let l20 = dataset_loglik(&t, &data, &quad20).unwrap();
        let l40 = dataset_loglik(&t, &data, &quad40).unwrap();
        let rel = (l20 - l40).abs() / l40.abs();
        ok &= rel < NODE_REL_TOL;
        lines.push(format!(
            "{name}: max |z| {worst_z:.2} (tol {MC_SIGMAS}), max rel MC gap {worst_rel:.2e}, 20-vs-40 nodes rel {rel:.2e} (tol {NODE_REL_TOL:.0e})"
        ));
    }
    verdict(ok, lines.join("; "))
}

// ---------------------------------------------------------------------------
// 4. Rounding-probability checkpoints at w = 41.

fn criterion_4() -> Verdict {
    let (spec, t) = simple_model_fit(true);
    let q = QuadratureRule::gauss_hermite(40).unwrap().fixed();
    let curve = |visit| {
        marginal_heaping_curve(
            &t,
            &spec.covariates,
            &[41],
            &[0.0],
            visit,
            &q,
            HeapingCurveMode::Marginal,
        )
        .unwrap()
    };
    let (non, vis) = (curve(false), curve(true));
    let h_non = non.series("heaped").unwrap()[0];
    let h_vis = vis.series("heaped").unwrap()[0];
    let r5_vis = vis.series("round5").unwrap()[0];
    let r5_non = non.series("round5").unwrap()[0];
    let ok = (h_non - 0.84).abs() <= FIG4_TOL
        && (h_vis - 0.51).abs() <= FIG4_TOL
        && (r5_vis - 0.39).abs() <= FIG4_TOL;
    verdict(
        ok,
        format!(
            "nonvisit heaped {h_non:.4} (0.84), visit heaped {h_vis:.4} (0.51), visit round5 {r5_vis:.4} (0.39), tol {FIG4_TOL}; nonvisit round5 {r5_non:.4} (not asserted)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Exact conditional law of accepted (w, g) at fixed effects.

fn g_statistic(counts: &[u64], probs: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .zip(probs)
        .filter(|(&c, _)| c > 0)
        .map(|(&c, &p)| 2.0 * c as f64 * (c as f64 / (n * p)).ln())
        .sum()
}

/// Multinomial draw by sequential conditional binomials.
fn multinomial(n: u64, probs: &[f64], rng: &mut impl Rng) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = vec![0; probs.len()];
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k == probs.len() - 1 {
            out[k] = left;
            break;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let c = Binomial::new(left, q).unwrap().sample(rng);
        out[k] = c;
        left -= c;
        mass -= p;
    }
    out
}

fn criterion_5() -> Verdict {
    let (t, _) = scenario_case1();
    let (b, u, x, y) = (0.0, 0.0, 18u32, 20u32);
    let lm = t.beta0 + t.beta1 * (x as f64).ln() + b;
    let lam = lm.exp();
    // Restriction oracle.
    let sig = |a: f64| 1.0 / (1.0 + (-a).exp());
    let mut cells = vec![];
    let mut probs = vec![];
    for (w, ks) in oracle_window(y) {
        let e = w as f64 * t.gamma0 + u;
        let c = [sig(t.gamma1 + e), sig(t.gamma2 + e), sig(t.gamma3 + e)];
        let p = [1.0 - c[0], c[0] - c[1], c[1] - c[2], c[2]];
        let pois = (w as f64 * lm - lam - ln_fact(w)).exp();
        for k in ks {
            cells.push((w, HeapingClass::ALL[k]));
            probs.push(pois * p[k]);
        }
    }
    let total: f64 = probs.iter().sum();
    probs.iter_mut().for_each(|p| *p /= total);
    let mut counts = vec![0u64; cells.len()];
    let mut rng = stream_rng(55, 0);
    for _ in 0..GOF_DRAWS {
        let d = impute_day(&t, y, lam, u, 1_000_000, &mut rng).unwrap();
        let k = cells
            .iter()
            .position(|c| *c == (d.w, d.g))
            .expect("accepted pair in WG(y)");
        counts[k] += 1;
    }
    let n = GOF_DRAWS as f64;
    let g_obs = g_statistic(&counts, &probs, n);
    // Exact multinomial test by Monte Carlo over the null.
    let mut null_rng = stream_rng(56, 0);
    let exceed = (0..GOF_SIMS)
        .filter(|_| {
            let c = multinomial(GOF_DRAWS as u64, &probs, &mut null_rng);
            g_statistic(&c, &probs, n) >= g_obs
        })
        .count();
    let p = (exceed + 1) as f64 / (GOF_SIMS + 1) as f64;
    verdict(
        p > GOF_ALPHA,
        format!(
            "{} cells, G = {g_obs:.2}, Monte Carlo exact p = {p:.3} over {GOF_SIMS} null samples (alpha {GOF_ALPHA})",
            cells.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 6. Posterior-predictive smoothness.

/// Mean ratio of the histogram count at each multiple of 5 in 10..=40 to the
/// mean of its two neighbours. Near 1 (or below, near the mode) for a
/// smooth Poisson mixture.
fn spike_ratio(ws: impl Iterator<Item = u32>) -> f64 {
    let mut hist = vec![0f64; 64];
    for w in ws {
        if (w as usize) < hist.len() {
            hist[w as usize] += 1.0;
        }
    }
    let ratios: Vec<f64> = (2..=8)
        .map(|k| {
            let m = 5 * k;
            hist[m] / (0.5 * (hist[m - 1] + hist[m + 1]))
        })
        .collect();
    ratios.iter().sum::<f64>() / ratios.len() as f64
}

fn criterion_6() -> Verdict {
    let (t, d) = scenario_case1();
    let sim = generate_dataset(&t, &d, 61).unwrap();
    let data = &sim.dataset;
    let draws = vec![t.clone(); 5];
    let prior = impute_latents(&draws, data, &ImputationOptions::default(), 62).unwrap();
    let joint_opts = ImputationOptions {
        mode: ImputationMode::FullJoint { proposals: 200 },
        ..Default::default()
    };
    let joint = impute_latents(&draws, data, &joint_opts, 62).unwrap();

    let obs = observed_heap_fractions(data, 5).unwrap().overall;
    let frac = |r| imputed_heap_fractions(r, 5).unwrap().overall;
    let (f_prior, f_joint) = (frac(&prior), frac(&joint));
    let w_of = |r: &heapcount::imputation::ImputationResult| {
        r.imputations
            .iter()
            .flat_map(|i| i.w.clone())
            .collect::<Vec<_>>()
    };
    let s_prior = spike_ratio(w_of(&prior).into_iter());
    let s_joint = spike_ratio(w_of(&joint).into_iter());
    let s_true = spike_ratio(sim.truth.iter().flat_map(|s| s.days.iter().map(|d| d.w)));
    let range = 0.18..=0.30;
    let ok = obs > 0.5
        && range.contains(&f_prior)
        && range.contains(&f_joint)
        && joint.failures.is_empty()
        && s_joint < SPIKE_MAX;
    verdict(
        ok,
        format!(
            "observed y base-5 fraction {obs:.3} (> 0.5); imputed w base-5 fraction prior-effects mode {f_prior:.3}, full-joint {f_joint:.3} (in [0.18, 0.30]); \
             full-joint spike ratio {s_joint:.3} (< {SPIKE_MAX}, true latent w {s_true:.3}); \
             prior-effects mode spike ratio {s_prior:.3} and {} of {} subject imputations at the rejection cap (reported, not asserted)",
            prior.failures.len(),
            draws.len() * data.subjects.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Desk-scale simulation study.

/// Case 2 and Case 1 studies with the given replicate counts; returns whether
/// every tolerance held and a summary.
fn table1_check(reps2: usize, reps1: usize, seeds: (u64, u64)) -> (bool, String) {
    let opts = StudyOptions::default();
    let spec = ModelSpec::default();
    let mut ok = true;
    let mut lines = vec![];

    let (t2, d2) = scenario_case2();
    let r2 =
        run_simulation_study(&t2, &d2, &spec, reps2, CiMethod::Hessian, seeds.0, &opts).unwrap();
    println!("{}", r2.format_table());
    let n2 = (r2.n_replicates - r2.n_failed) as f64;
    let mut off = vec![];
    for p in &r2.parameters {
        let z = (p.mean - p.true_value).abs() / (p.sd / n2.sqrt());
        if z > 3.0 {
            off.push(format!("{} {z:.2} SEM", p.name));
        }
    }
    let b1 = r2.param("beta1").unwrap();
    let g0 = r2.param("gamma0").unwrap();
    ok &= off.is_empty() && (86.0..=100.0).contains(&b1.coverage_pct) && g0.bias.abs() < 0.01;
    lines.push(format!(
        "case2: {} replicates ({} failed), means outside 3 SEM: [{}], beta1 coverage {:.0}% (86-100), gamma0 bias {:.4} (< 0.01)",
        r2.n_replicates,
        r2.n_failed,
        off.join(", "),
        b1.coverage_pct,
        g0.bias
    ));

    let (t1, d1) = scenario_case1();
    let r1 =
        run_simulation_study(&t1, &d1, &spec, reps1, CiMethod::Hessian, seeds.1, &opts).unwrap();
    println!("{}", r1.format_table());
    let n1 = (r1.n_replicates - r1.n_failed) as f64;
    let mut rel = vec![];
    for name in ["beta0", "beta1", "sigma_b"] {
        let p = r1.param(name).unwrap();
        let r = p.bias.abs() / p.true_value.abs();
        // Monte Carlo standard error of the relative bias, for reading a
        // failure against replicate noise.
        let se = p.sd / n1.sqrt() / p.true_value.abs();
        ok &= r < 0.01;
        rel.push(format!(
            "{name} {:.2}% (MC se {:.2}%)",
            100.0 * r,
            100.0 * se
        ));
    }
    lines.push(format!(
        "case1: {} replicates ({} failed), relative bias {} (< 1%)",
        r1.n_replicates,
        r1.n_failed,
        rel.join(", ")
    ));
    (ok, lines.join("; "))
}

fn criterion_7(run_slow: bool) -> Verdict {
    let (mut ok, mut detail) = table1_check(50, 30, (71, 72));
    if run_slow {
        let (ok_full, full) = table1_check(100, 100, (73, 74));
        ok &= ok_full;
        detail = format!("{detail}; full 100-replicate runs: {full}");
    }
    verdict(ok, detail)
}

// ---------------------------------------------------------------------------
// 8. Bootstrap coverage (slow).

fn criterion_8(run_slow: bool) -> Verdict {
    if !run_slow {
        return Verdict::Skip(
            "slow suite (about 3000 fits); set HEAPCOUNT_SLOW=1 or pass --include-ignored".into(),
        );
    }
    let (t, d) = scenario_case1();
    let r = run_simulation_study(
        &t,
        &d,
        &ModelSpec::default(),
        30,
        CiMethod::Bootstrap { replicates: 100 },
        81,
        &StudyOptions::default(),
    )
    .unwrap();
    let g3 = r.param("gamma3").unwrap();
    println!("{}", r.format_table());
    verdict(
        g3.coverage_pct >= 82.0,
        format!(
            "gamma3 bootstrap coverage {:.0}% (>= 82) over {} replicates",
            g3.coverage_pct, r.n_replicates
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. Real-data pattern check (optional).

fn criterion_9() -> Verdict {
    let Ok(path) = std::env::var("HEAPCOUNT_SUPPLEMENT_CSV") else {
        return Verdict::Skip(
            "study-data figures (posterior modes, BIC, observed heap fractions) need the original data; set HEAPCOUNT_SUPPLEMENT_CSV to run the pattern check".into(),
        );
    };
    let spec = ModelSpec::with_covariates(&[], &[VISIT_DAY]);
    let data = match heapcount::io::load_dataset(std::path::Path::new(&path), &spec.covariates) {
        Ok(d) => d,
        Err(e) => return Verdict::Fail(format!("could not load {path}: {e}")),
    };
    let init = heapcount::estimation::default_init(&data, &spec);
    let opts = FitOptions {
        objective: Objective::Posterior,
        ..FitOptions::default()
    };
    let mode = match find_posterior_mode(&data, &spec, &init, &opts) {
        Ok(m) => m,
        Err(e) => return Verdict::Fail(format!("fit failed: {e}")),
    };
    let t = &mode.theta_hat;
    let visit_upper = wald_intervals(&mode, &spec, 0.95).ok().and_then(|iv| {
        iv.into_iter()
            .find(|i| i.name.contains(VISIT_DAY))
            .map(|i| i.upper)
    });
    let ratio = (t.sigma_u / t.sigma_b).powi(2);
    let ok =
        t.beta1 > 0.0 && t.beta3[0] < 0.0 && visit_upper.is_some_and(|u| u < 0.0) && ratio > 10.0;
    verdict(
        ok,
        format!(
            "beta1 {:.3} (> 0), visit coefficient {:.3} with upper limit {:?} (< 0), sigma_u^2 / sigma_b^2 = {ratio:.1} (> 10)",
            t.beta1, t.beta3[0], visit_upper
        ),
    )
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        // Nothing to list for the libtest protocol.
        return;
    }
    let run_slow = std::env::var("HEAPCOUNT_SLOW").is_ok_and(|v| v == "1")
        || args
            .iter()
            .any(|a| a == "--include-ignored" || a == "--ignored");
    let filter: Option<u32> = std::env::var("HEAPCOUNT_CRITERION")
        .ok()
        .and_then(|v| v.parse().ok());

    type Check = Box<dyn Fn() -> Verdict>;
    let criteria: Vec<(u32, &str, Check)> = vec![
        (1, "analytic probability checkpoints", Box::new(criterion_1)),
        (2, "coarsening oracle", Box::new(criterion_2)),
        (
            3,
            "quadrature vs Monte Carlo and node convergence",
            Box::new(criterion_3),
        ),
        (4, "rounding-probability checkpoints", Box::new(criterion_4)),
        (5, "imputation conditional law", Box::new(criterion_5)),
        (6, "posterior-predictive smoothness", Box::new(criterion_6)),
        (
            7,
            "desk-scale simulation study",
            Box::new(move || criterion_7(run_slow)),
        ),
        (
            8,
            "bootstrap interval coverage",
            Box::new(move || criterion_8(run_slow)),
        ),
        (9, "real-data pattern check", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (id, name, f) in &criteria {
        if filter.is_some_and(|c| c != *id) {
            continue;
        }
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id} [{name}]: {tag} ({secs:.1}s) {detail}");
    }
    if failed > 0 {
        println!("acceptance: {failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("acceptance: all run criteria passed");
}
