//! Acceptance suite: one test per criterion, each printing a single
//! PASS/FAIL line (visible with `--nocapture`) before asserting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use scorelab::distill::{
    delta_cls, delta_gen, rule_delta, RuleConfig, RuleKind, RuleState, TimeWeight, VsdSurrogate,
    WeightSchedule,
};
use scorelab::generator::{random_orthonormal_cameras, Generator};
use scorelab::presets::{three_class_1d, two_mode_1d, world_preset, PRESET_NAMES};
use scorelab::runner::{
    anneal_comparison, edit_experiment, gradient_norm_experiment, run, Optimizer, RunConfig,
    ThetaInit,
};
use scorelab::vecmath::{axpy, norm};
use scorelab::world::{Mixture, World};
use scorelab::DiffusionSchedule;

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    println!("criterion {n:2} [{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn rule(kind: RuleKind, prompt: &str, neg: Option<&str>) -> RuleConfig {
    RuleConfig {
        kind,
        omega: 40.0,
        omega1: 1.0,
        omega2_schedule: WeightSchedule::constant(0.5),
        prompt: prompt.into(),
        neg_prompt: neg.map(String::from),
        w_of_t: TimeWeight::One,
    }
}

fn state<'a>(
    world: &'a World,
    schedule: &'a DiffusionSchedule,
    x_t: &'a [f64],
    t: f64,
    eps: &'a [f64],
) -> RuleState<'a> {
    RuleState {
        world,
        schedule,
        x_t,
        t,
        eps,
        progress: 0.0,
        surrogate: None,
        dds_ref: None,
    }
}

/// Random (world, x_t, t, y) tuples across every preset.
fn random_tuples(count: usize, seed: u64) -> Vec<(World, Vec<f64>, f64, String)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let world = world_preset(PRESET_NAMES[rng.random_range(0..PRESET_NAMES.len())])
                .expect("preset");
            let d = world.dim();
            let x_t: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let t = 0.05 + 0.9 * rng.random::<f64>();
            let y = world.prompts()[rng.random_range(0..world.prompts().len())].clone();
            (world, x_t, t, y)
        })
        .collect()
}

fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = norm(b).max(1e-6);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0_f64, f64::max) / scale
}

#[test]
fn criterion_01_classifier_identity() {
    let s = DiffusionSchedule::linear_sigma();
    let mut worst = 0.0_f64;
    for (world, x_t, t, y) in random_tuples(200, 101) {
        let (_, sigma) = s.at(t).unwrap();
        let cond = world.eps_pred(&s, &x_t, Some(&y), t).unwrap();
        let unc = world.eps_pred(&s, &x_t, None, t).unwrap();
        let analytic: Vec<f64> = cond.iter().zip(&unc).map(|(c, u)| -(c - u) / sigma).collect();
        let fd = fd_grad(|x| world.classifier_logprob(&s, x, t, &y).unwrap(), &x_t, 1e-5);
        worst = worst.max(rel_err(&analytic, &fd));
    }
    report(1, "classifier identity", worst < 1e-4, &format!("worst relative error {worst:.3e}"));
}

#[test]
fn criterion_02_denoiser_exactness() {
    let s = DiffusionSchedule::linear_sigma();
    let mut worst = 0.0_f64;
    for (world, x_t, t, y) in random_tuples(200, 102) {
        let (_, sigma) = s.at(t).unwrap();
        let pred = world.eps_pred(&s, &x_t, Some(&y), t).unwrap();
        let diffused = world.class_mixture(&y).unwrap().diffused(&s, t).unwrap();
        let fd_score = fd_grad(|x| diffused.log_density(x).unwrap(), &x_t, 1e-5);
        let expect: Vec<f64> = fd_score.iter().map(|g| -sigma * g).collect();
        worst = worst.max(rel_err(&pred, &expect));
    }
    report(2, "denoiser exactness", worst < 1e-4, &format!("worst relative error {worst:.3e}"));
}

#[test]
fn criterion_03_sds_decomposition() {
    let s = DiffusionSchedule::linear_sigma();
    let mut rng = ChaCha12Rng::seed_from_u64(103);
    let mut worst = 0.0_f64;
    for (world, x_t, t, y) in random_tuples(1000, 113) {
        let eps: Vec<f64> = (0..x_t.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut r = rule(RuleKind::Sds, &y, None);
        r.omega = rng.random::<f64>() * 100.0;
        let out = rule_delta(&r, &state(&world, &s, &x_t, t, &eps)).unwrap();
        // independent recomputation from the raw oracles
        let dg = delta_gen(&world, &s, &x_t, &y, t, &eps).unwrap();
        let dc = delta_cls(&world, &s, &x_t, &y, t).unwrap();
        for i in 0..x_t.len() {
            worst = worst.max((out.total[i] - (dg[i] + r.omega * dc[i])).abs());
        }
    }
    report(3, "SDS decomposition", worst < 1e-12, &format!("worst abs deviation {worst:.3e}"));
}

#[test]
fn criterion_04_negative_prompt_identities() {
    let s = DiffusionSchedule::linear_sigma();
    let mut rng = ChaCha12Rng::seed_from_u64(104);
    let mut worst9 = 0.0_f64;
    let mut worst10 = 0.0_f64;
    for (world, x_t, t, y) in random_tuples(1000, 114) {
        let others: Vec<&String> = world.prompts().iter().filter(|p| **p != y).collect();
        let y_neg = others[rng.random_range(0..others.len())].clone();
        let mut r = rule(RuleKind::CsdNeg, &y, Some(&y_neg));
        r.omega1 = rng.random::<f64>() * 3.0;
        let o2 = rng.random::<f64>() * 3.0;
        r.omega2_schedule = WeightSchedule::constant(o2);
        let out = rule_delta(&r, &state(&world, &s, &x_t, t, &[0.0; 2][..x_t.len()])).unwrap();
        let dc_pos = delta_cls(&world, &s, &x_t, &y, t).unwrap();
        let dc_neg = delta_cls(&world, &s, &x_t, &y_neg, t).unwrap();
        let ep_y = world.eps_pred(&s, &x_t, Some(&y), t).unwrap();
        let ep_n = world.eps_pred(&s, &x_t, Some(&y_neg), t).unwrap();
        let ep_u = world.eps_pred(&s, &x_t, None, t).unwrap();
        for i in 0..x_t.len() {
            // Eq. 9: the dual-classifier combination written two ways
            let lhs9 = r.omega1 * dc_pos[i] - o2 * dc_neg[i];
            let rhs9 = r.omega1 * (ep_y[i] - ep_u[i]) - o2 * (ep_n[i] - ep_u[i]);
            worst9 = worst9.max((lhs9 - rhs9).abs());
            // Eq. 10: expansion into raw noise predictions
            let rhs10 = r.omega1 * ep_y[i] + (o2 - r.omega1) * ep_u[i] - o2 * ep_n[i];
            worst10 = worst10.max((out.total[i] - rhs10).abs());
        }
    }
    let ok = worst9 < 1e-12 && worst10 < 1e-12;
    report(
        4,
        "negative-prompt identities",
        ok,
        &format!("worst abs deviation Eq9 {worst9:.3e}, Eq10 {worst10:.3e}"),
    );
}

#[test]
fn criterion_05_vsd_rearrangement() {
    let s = DiffusionSchedule::linear_sigma();
    let mut rng = ChaCha12Rng::seed_from_u64(105);
    let mut worst = 0.0_f64;
    for (world, x_t, t, y) in random_tuples(500, 115) {
        let d = x_t.len();
        let sur = VsdSurrogate {
            mean: (0..d).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect(),
            var: (0..d).map(|_| 0.1 + rng.random::<f64>()).collect(),
            fit_window: 64,
            refresh_every: 10,
        };
        let r = rule(RuleKind::Vsd, &y, None);
        let eps = vec![0.0; d];
        let mut st = state(&world, &s, &x_t, t, &eps);
        st.surrogate = Some(&sur);
        let out = rule_delta(&r, &st).unwrap();
        let dc = delta_cls(&world, &s, &x_t, &y, t).unwrap();
        let se = sur.eps(&s, &x_t, t).unwrap();
        let ep_u = world.eps_pred(&s, &x_t, None, t).unwrap();
        for i in 0..d {
            let expect = (r.omega + 1.0) * dc[i] - (se[i] - ep_u[i]);
            worst = worst.max((out.total[i] - expect).abs());
        }
    }

    // Collapse clause: surrogate identical to the unconditional oracle.
    // Both classes coincide, so the pooled distribution is one Gaussian the
    // surrogate can represent exactly.
    let world = World::uniform_prior(
        vec!["p".into(), "q".into()],
        vec![
            Mixture::single(vec![1.0], vec![0.5]).unwrap(),
            Mixture::single(vec![1.0], vec![0.5]).unwrap(),
        ],
    )
    .unwrap();
    let sur = VsdSurrogate { mean: vec![1.0], var: vec![0.5], fit_window: 64, refresh_every: 10 };
    let r = rule(RuleKind::Vsd, "p", None);
    let mut worst_collapse = 0.0_f64;
    for _ in 0..200 {
        let x_t = [rng.random::<f64>() * 6.0 - 3.0];
        let t = 0.05 + 0.9 * rng.random::<f64>();
        let mut st = state(&world, &s, &x_t, t, &[0.0]);
        st.surrogate = Some(&sur);
        let out = rule_delta(&r, &st).unwrap();
        let dc = delta_cls(&world, &s, &x_t, "p", t).unwrap();
        worst_collapse = worst_collapse.max((out.total[0] - (r.omega + 1.0) * dc[0]).abs());
    }
    let ok = worst < 1e-12 && worst_collapse < 1e-12;
    report(
        5,
        "VSD rearrangement",
        ok,
        &format!("worst abs deviation {worst:.3e}, collapse {worst_collapse:.3e}"),
    );
}

#[test]
fn criterion_06_zero_mean_noise_term() {
    let p = 2;
    let n = 100_000;
    let g = Generator::affine(random_orthonormal_cameras(p, 3, 6).unwrap()).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(106);
    let mut acc = vec![0.0; p];
    for _ in 0..n {
        let cam = rng.random_range(0..g.n_cameras());
        let neg: Vec<f64> = (0..p)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                -e
            })
            .collect();
        axpy(&mut acc, 1.0, &g.pullback(cam, &neg).unwrap());
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    let bound = 4.0 * (p as f64 / n as f64).sqrt();
    let got = norm(&acc);
    report(
        6,
        "zero-mean noise term",
        got < bound,
        &format!("|mean| {got:.3e} < bound {bound:.3e}"),
    );
}

fn toy_run(kind: RuleKind, omega: f64, steps: usize) -> RunConfig {
    RunConfig {
        world: two_mode_1d(),
        schedule: DiffusionSchedule::linear_sigma(),
        generator: Generator::identity(1),
        rule: RuleConfig { omega, ..rule(kind, "B", None) },
        steps,
        optimizer: Optimizer::adam_default(),
        seed: 1,
        log_every: 1,
        theta_init: ThetaInit::default(),
    }
}

#[test]
fn criterion_07_csd_drives_generation() {
    let result = run(&toy_run(RuleKind::Csd, 40.0, 2000)).unwrap();
    let p_b = result.prob("B").unwrap();
    let theta = result.final_theta[0];
    let ok = p_b > 0.99 && (theta - 2.0).abs() < 0.3;
    report(
        7,
        "CSD drives generation",
        ok,
        &format!("P(B) = {p_b:.4} (need > 0.99), theta = {theta:.3} (need |theta-2| < 0.3)"),
    );
}

#[test]
fn criterion_08_pure_generative_prior_fails() {
    let result = run(&toy_run(RuleKind::Sds, 0.0, 2000)).unwrap();
    let p_b = result.prob("B").unwrap();
    report(
        8,
        "pure generative prior fails",
        p_b < 0.9,
        &format!("P(B) = {p_b:.4} (need < 0.9), theta = {:.3}", result.final_theta[0]),
    );
}

#[test]
fn criterion_09_annealed_negatives_improve_faithfulness() {
    let base = RunConfig {
        world: three_class_1d(),
        schedule: DiffusionSchedule::linear_sigma(),
        generator: Generator::identity(1),
        rule: RuleConfig {
            omega1: 1.0,
            omega2_schedule: WeightSchedule::constant(1.0),
            ..rule(RuleKind::CsdNeg, "target", Some("near"))
        },
        steps: 2000,
        optimizer: Optimizer::adam_default(),
        seed: 1,
        log_every: 1,
        theta_init: ThetaInit::default(),
    };
    let out = anneal_comparison(&base).unwrap();
    let p_fixed = out.fixed.prob("target").unwrap();
    let p_annealed = out.annealed.prob("target").unwrap();
    report(
        9,
        "annealed negatives improve faithfulness",
        p_annealed > p_fixed,
        &format!("P(target) annealed {p_annealed:.4} vs fixed {p_fixed:.4}"),
    );
}

#[test]
fn criterion_10_editing_moves_between_modes() {
    let mut source = toy_run(RuleKind::Csd, 40.0, 2000);
    source.rule.prompt = "A".into();
    source.theta_init = ThetaInit::Explicit { explicit: vec![-2.0] };
    let out = edit_experiment(&source, "B", "A", 1.0, 0.5).unwrap();
    let before = out.probs_before.iter().find(|(p, _)| p == "A").unwrap().1;
    let p_b = out.result.prob("B").unwrap();
    report(
        10,
        "editing moves between modes",
        p_b > 0.95,
        &format!("P(A) before {before:.4}, P(B) after {p_b:.4} (need > 0.95)"),
    );
}

#[test]
fn criterion_11_dds_ablation() {
    let mk = |kind: RuleKind, omega: f64| {
        let mut cfg = toy_run(kind, omega, 2000);
        cfg.rule.neg_prompt = Some("A".into());
        cfg.theta_init = ThetaInit::Explicit { explicit: vec![-2.0] };
        run(&cfg).unwrap().prob("B").unwrap()
    };
    let p_dds0 = mk(RuleKind::Dds, 0.0);
    let p_nocls = mk(RuleKind::DdsNoCls, 40.0);
    let p_only = mk(RuleKind::CsdOnlyFromDds, 40.0);
    let ok = p_dds0 < 0.5 && p_nocls < 0.5 && p_only > 0.95;
    report(
        11,
        "DDS ablation",
        ok,
        &format!(
            "P(B): DDS omega=0 {p_dds0:.4} (need < 0.5), no-cls {p_nocls:.4} (need < 0.5), \
             cls-only {p_only:.4} (need > 0.95)"
        ),
    );
}

#[test]
fn criterion_12_determinism() {
    let cfg = toy_run(RuleKind::Csd, 40.0, 300);
    let a = run(&cfg).unwrap().trajectory.to_csv(1);
    let b = run(&cfg).unwrap().trajectory.to_csv(1);
    report(
        12,
        "determinism",
        a == b,
        &format!("{} bytes, byte-identical: {}", a.len(), a == b),
    );
}

#[test]
fn criterion_13_gradient_norm_series() {
    let cfg = toy_run(RuleKind::Sds, 40.0, 2000);
    let (result, table) = gradient_norm_experiment(&cfg).unwrap();
    let complete = table.rows.len() == result.trajectory.rows.len()
        && !table.rows.is_empty()
        && table.rows.iter().all(|r| {
            r.norm_gen.is_finite()
                && r.norm_cls.is_finite()
                && r.norm_gen >= 0.0
                && r.norm_cls >= 0.0
        });
    let recomputed = {
        let mg: f64 = table.rows.iter().map(|r| r.norm_gen).sum::<f64>() / table.rows.len() as f64;
        let mc: f64 = table.rows.iter().map(|r| r.norm_cls).sum::<f64>() / table.rows.len() as f64;
        if mc == 0.0 {
            f64::INFINITY
        } else {
            mg / mc
        }
    };
    let ratio_ok = (table.ratio - recomputed).abs() < 1e-9;
    report(
        13,
        "gradient-norm series",
        complete && ratio_ok,
        &format!(
            "{} rows, mean |delta_gen| / mean |delta_cls| = {:.3} (reported, not asserted)",
            table.rows.len(),
            table.ratio
        ),
    );
}
