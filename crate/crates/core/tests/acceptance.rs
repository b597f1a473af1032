//! Acceptance checks. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits non-zero on any FAIL.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use aic_core::controllers::{controller_step, ControlInputs, ControllerState};
use aic_core::experiments::{
    builtin_names, builtin_robot, compare_with_traces, export_trace, run_with_polynomials, scenario_polynomials,
    RunOutput,
};
use aic_core::model::{fit_model_polynomials, jacobian_finite_difference, FitOptions, MuscleLengths};
use aic_core::plant::{measured_lengths, PlantConfig, PlantParams, PlantState};
use aic_core::{ControllerKind, EkfParams, EkfState, JointAngles, PolynomialSet, Scenario};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = Result<String, String>;

fn scenario(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn inline(text: &str) -> Scenario {
    Scenario::parse(text, "<inline>", Path::new(".")).expect("inline scenario")
}

fn run(s: &Scenario, polys: &PolynomialSet) -> RunOutput {
    run_with_polynomials(s, polys).unwrap_or_else(|e| panic!("{}: {e}", s.name))
}

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(budget: Duration, start: Instant) -> (bool, String) {
    let took = start.elapsed();
    (took < budget, format!("{:.1}s of {}s", took.as_secs_f64(), budget.as_secs()))
}

fn jacobian_oracle() -> Check {
    let start = Instant::now();
    let opts = FitOptions::default();
    let mut worst: (f64, String) = (0.0, String::new());
    for name in builtin_names() {
        let model = builtin_robot(name).unwrap().unwrap();
        let polys = fit_model_polynomials(&model, &opts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let theta: Vec<f64> = model
                .tree()
                .joints()
                .iter()
                .map(|j| {
                    let span = j.upper - j.lower;
                    rng.random_range(j.lower + opts.domain_shrink * span..=j.upper - opts.domain_shrink * span)
                })
                .collect();
            let theta = JointAngles(DVector::from_vec(theta));
            let poly = polys.jacobian(&theta).unwrap();
            let fd = jacobian_finite_difference(&model, &theta, 1e-5).unwrap();
            for (p, f) in poly.g.iter().zip(fd.g.iter()) {
                let rel = (p - f).abs() / (1e-3 * f.abs()).max(1e-5);
                if rel > worst.0 {
                    worst = (rel, name.to_string());
                }
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(10), start);
    verdict(
        worst.0 < 1.0 && fast,
        format!("worst error {:.3} of tolerance ({}), {time}", worst.0, worst.1),
    )
}

struct SweepRuns {
    jaic_antagonist: Vec<f64>,
    jaic_slack: Vec<f64>,
    msc_cc: Vec<f64>,
    maic_cc: Vec<f64>,
    elapsed: Duration,
}

fn sweep_runs() -> SweepRuns {
    let start = Instant::now();
    let base = scenario("elbow-sweep.toml");
    let polys = scenario_polynomials(&base).unwrap();
    let kinds = [ControllerKind::Jaic, ControllerKind::Msc, ControllerKind::Maic];
    let mut out = SweepRuns {
        jaic_antagonist: Vec::new(),
        jaic_slack: Vec::new(),
        msc_cc: Vec::new(),
        maic_cc: Vec::new(),
        elapsed: Duration::ZERO,
    };
    for seed in 0..20 {
        let (table, _) = compare_with_traces(&base.with_seed(seed), &polys, &kinds).unwrap();
        let jaic = table.metrics(ControllerKind::Jaic).unwrap();
        out.jaic_antagonist.push(jaic.max_settled_antagonist_tension.unwrap_or(0.0));
        out.jaic_slack.push(jaic.slack_fraction);
        out.msc_cc.push(table.metrics(ControllerKind::Msc).unwrap().co_contraction_index);
        out.maic_cc.push(table.metrics(ControllerKind::Maic).unwrap().co_contraction_index);
    }
    out.elapsed = start.elapsed();
    out
}

fn state13_avoidance(r: &SweepRuns, t_bias: f64) -> Check {
    let worst = r.jaic_antagonist.iter().copied().fold(0.0, f64::max);
    let over = |v: &[f64]| v.iter().filter(|c| **c > 3.0 * t_bias).count();
    let (msc, maic) = (over(&r.msc_cc), over(&r.maic_cc));
    let fast = r.elapsed < Duration::from_secs(120);
    verdict(
        worst <= 1.1 * t_bias && msc * 5 >= 4 * 20 && maic * 5 >= 4 * 20 && fast,
        format!(
            "JAIC max settled antagonist {worst:.3} kgf (limit {:.2}); co-contraction > {:.0} kgf in MSC {msc}/20, MAIC {maic}/20; {:.1}s",
            1.1 * t_bias,
            3.0 * t_bias,
            r.elapsed.as_secs_f64()
        ),
    )
}

fn slack_avoidance(r: &SweepRuns) -> Check {
    let worst = r.jaic_slack.iter().copied().fold(0.0, f64::max);
    verdict(worst == 0.0, format!("JAIC max slack fraction {worst} over 20 runs"))
}

fn direction_of_effect() -> Check {
    let start = Instant::now();
    let ratio = |name: &str| {
        let s = scenario(name);
        let polys = scenario_polynomials(&s).unwrap();
        let (table, _) = compare_with_traces(&s, &polys, &[ControllerKind::Jaic, ControllerKind::Msc]).unwrap();
        table.ratio(ControllerKind::Jaic, ControllerKind::Msc).unwrap()
    };
    let shoulder = ratio("shoulder-raise.toml");
    let scapula = ratio("scapula-shrug.toml");
    let (fast, time) = within(Duration::from_secs(60), start);
    verdict(
        shoulder < 0.9 && scapula < 1.0 && scapula > shoulder && fast,
        format!("JAIC/MSC max tension: shoulder {shoulder:.3}, scapula {scapula:.3}; {time}"),
    )
}

fn tracking() -> Check {
    let clean = scenario("elbow-tracking.toml");
    let polys = scenario_polynomials(&clean).unwrap();
    let errors = run(&clean, &polys).metrics.settle_errors_deg;
    let worst = errors.iter().copied().fold(0.0, f64::max);

    let perturbed = scenario("elbow-tracking-perturbed.toml");
    let (table, _) = compare_with_traces(&perturbed, &polys, &[ControllerKind::Jaic, ControllerKind::Msc]).unwrap();
    let at_90 = |k| {
        let m = table.metrics(k).unwrap();
        let h = m.holds.iter().find(|h| (h.target_deg[0] + 90.0).abs() < 1e-9).unwrap();
        h.settle_error_deg
    };
    let (jaic, msc) = (at_90(ControllerKind::Jaic), at_90(ControllerKind::Msc));
    verdict(
        errors.len() == 3 && worst < 5.0 && jaic < msc,
        format!("clean settle errors {errors:.2?} deg; perturbed at -90: JAIC {jaic:.2} < MSC {msc:.2} deg"),
    )
}

const OVERSHOOT: &str = r#"
name = "forced overshoot"
robot = "builtin:elbow-3"
duration = 10.0
[controller]
kind = "jaic"
[plant]
inertia = 0.3
damping = 6
[[plant.disturbance]]
start = 5.0
end = 8.0
torques = [-8.0]
[[waypoint]]
time = 2.0
target = [-60.0]
"#;

fn overshoot_reversal() -> Check {
    let s = inline(OVERSHOOT);
    let p = s.controller;
    let polys = scenario_polynomials(&s).unwrap();
    let rows = run(&s, &polys).trace.rows;
    let target = (-60.0f64).to_radians();
    let Some(i0) = rows
        .iter()
        .position(|r| r.time >= 5.0 && r.theta[0] < target - p.epsilon_theta)
    else {
        return Err("disturbance never pushed the joint past the target".into());
    };
    // Agonists of the commanded flexion, taken mid-approach.
    let approach = rows.iter().find(|r| r.time >= 1.0).unwrap();
    let former: Vec<usize> = (0..approach.agonist.len()).filter(|&m| approach.agonist[m]).collect();
    if former.is_empty() {
        return Err("no agonist before the overshoot".into());
    }
    let deadline = rows[i0].time + p.t_k * 1e-3 + 2.0 * s.plant.tau_a;
    let mut latest = 0.0f64;
    for &m in &former {
        let back = rows[i0..]
            .iter()
            .find(|r| r.commands[m] == p.t_bias && r.stiffness[m] == 0.0)
            .map(|r| r.time - rows[i0].time);
        match back {
            Some(dt) => latest = latest.max(dt),
            None => return Err(format!("muscle {m} never returned to T_bias")),
        }
    }
    let limit = deadline - rows[i0].time;
    verdict(
        latest <= limit,
        format!(
            "{} former agonist(s) at T_bias with K = 0 after {latest:.2}s (limit {limit:.2}s)",
            former.len()
        ),
    )
}

/// Working range of the elbow scenarios, deg.
const ELBOW_RANGE: (f64, f64) = (-90.0, 0.0);

fn ekf_checks() -> Check {
    let base = scenario("elbow-tracking.toml");
    let polys = scenario_polynomials(&base).unwrap();
    let model = &base.model;
    let postures = || {
        let (lo, hi) = ELBOW_RANGE;
        (0..=9).map(move |i| lo + (hi - lo) * i as f64 / 9.0)
    };

    // Noiseless, unperturbed, no stretch: 100 updates from 20 deg off.
    let exact = PlantParams {
        compliance: 0.0,
        ..PlantParams::default()
    };
    let cfg = PlantConfig::new(model, Vec::new(), &exact).unwrap();
    let mut convergence = 0.0f64;
    for deg in postures() {
        let truth = JointAngles::from_degrees(&[deg]);
        let l = measured_lengths(&cfg, &PlantState::at_rest(&cfg, &truth).unwrap());
        for off in [-20.0, 20.0] {
            let guess = JointAngles::from_degrees(&[deg + off]);
            let est = converge(model, &guess, &l, &polys, &base.estimator, 100);
            convergence = convergence.max((est[0] - truth[0]).abs().to_degrees());
        }
    }

    // Steady bias from wire stretch at 10 kgf.
    let stretched = PlantParams {
        compliance: 2e-4,
        ..PlantParams::default()
    };
    let cfg = PlantConfig::new(model, Vec::new(), &stretched).unwrap();
    let mut bias = 0.0f64;
    for deg in postures() {
        let truth = JointAngles::from_degrees(&[deg]);
        let mut plant = PlantState::at_rest(&cfg, &truth).unwrap();
        plant.tensions.fill(10.0);
        let l = measured_lengths(&cfg, &plant);
        let est = converge(model, &truth, &l, &polys, &base.estimator, 300);
        bias = bias.max((est[0] - truth[0]).abs().to_degrees());
    }

    // Agonist flags from G at the estimate versus G at the truth, along the
    // direction the controller sees, over a perturbed and stretched run.
    let perturbed = scenario("elbow-tracking-perturbed.toml");
    let rows = run(&perturbed, &polys).trace.rows;
    let eps = perturbed.controller.epsilon_theta;
    let (mut compared, mut mismatched) = (0usize, 0usize);
    for r in &rows {
        let hat = JointAngles(r.theta_hat.clone());
        let truth = JointAngles(r.theta.clone());
        let delta = &r.theta_target - &r.theta_hat;
        if delta.norm() < eps {
            continue;
        }
        let u = delta.normalize();
        let s_hat = polys.jacobian(&hat).unwrap().g * &u;
        let s_true = polys.jacobian(&truth).unwrap().g * &u;
        if s_true.iter().all(|v| v.abs() > 0.005) {
            compared += 1;
            let c = perturbed.controller.c;
            if s_hat.iter().zip(s_true.iter()).any(|(a, b)| (*a < c) != (*b < c)) {
                mismatched += 1;
            }
        }
    }

    verdict(
        convergence < 0.5 && bias < 3.0 && compared > 0 && mismatched == 0,
        format!(
            "error after 100 updates from 20 deg off {convergence:.4} deg; stretch bias over [{}, {}] deg {bias:.2} deg; \
             classification mismatches {mismatched}/{compared}",
            ELBOW_RANGE.0, ELBOW_RANGE.1
        ),
    )
}

fn converge(
    model: &aic_core::MusculoskeletalModel,
    start: &JointAngles,
    measured: &MuscleLengths,
    polys: &PolynomialSet,
    params: &EkfParams,
    ticks: usize,
) -> JointAngles {
    let mut ekf = EkfState::new(model.tree(), start, model.muscle_count(), params).unwrap();
    for k in 0..ticks {
        if k > 0 {
            ekf = ekf.predict(0.01).unwrap();
        }
        ekf = ekf.update(measured, polys).unwrap().state;
    }
    ekf.theta_hat
}

fn msc_equivalence() -> Check {
    let s = scenario("elbow-tracking-perturbed.toml").with_controller(ControllerKind::Msc);
    let polys = scenario_polynomials(&s).unwrap();
    let msc = run(&s, &polys);
    let mut params = s.controller;
    params.kind = ControllerKind::Jaic;
    params.c = f64::INFINITY;
    let dt = 1.0 / s.control_rate;
    let mut state = ControllerState::new(&params, s.model.muscle_count());
    let mut saturated_at = None;
    let mut compared = 0usize;
    for (i, r) in msc.trace.rows.iter().enumerate() {
        let hat = JointAngles(r.theta_hat.clone());
        let jac = polys.jacobian(&hat).unwrap();
        let inputs = ControlInputs {
            theta_hat: &hat,
            l_meas: &MuscleLengths(r.lengths.clone()),
            theta_target: &JointAngles(r.theta_target.clone()),
            l_target: &MuscleLengths(r.target_lengths.clone()),
            jacobian: Some(&jac),
        };
        let (next, out) = controller_step(&params, &state, &inputs, dt).unwrap();
        state = next;
        if saturated_at.is_none() && state.stiffness.iter().all(|k| *k == params.k) {
            saturated_at = Some(i);
        }
        if saturated_at.is_some() {
            compared += 1;
            let same = out.commands.iter().zip(r.commands.iter()).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(format!("commands differ at t = {:.2}s", r.time));
            }
        }
    }
    match saturated_at {
        Some(i) => Ok(format!(
            "bit-identical over {compared} ticks after saturation at t = {:.2}s",
            msc.trace.rows[i].time
        )),
        None => Err("stiffness never saturated".into()),
    }
}

fn determinism() -> Check {
    let s = scenario("elbow-sweep.toml");
    let polys = scenario_polynomials(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let hash = |s: &Scenario, file: &str| {
        let path: PathBuf = dir.path().join(file);
        export_trace(&run(s, &polys).trace, &path).unwrap();
        Sha256::digest(std::fs::read(&path).unwrap()).iter().map(|b| format!("{b:02x}")).collect::<String>()
    };
    let (a, b) = (hash(&s, "a.csv"), hash(&s, "b.csv"));
    let other = hash(&s.with_seed(s.seed + 1), "c.csv");
    verdict(
        a == b && a != other,
        format!("sha256 {}.. twice; another seed gives {}..", &a[..12], &other[..12]),
    )
}

fn thermal() -> Check {
    let s = scenario("elbow-dangling.toml");
    let polys = scenario_polynomials(&s).unwrap();
    let (table, runs) = compare_with_traces(&s, &polys, &[ControllerKind::Jaic, ControllerKind::Msc]).unwrap();
    let jaic = &runs[0].trace.rows;
    let ambient = s.plant.thermal.ambient;
    let peak = table.metrics(ControllerKind::Jaic).unwrap().peak_temperature;
    let tail = jaic.iter().filter(|r| r.time >= s.duration - 10.0);
    let (lo, hi) = tail
        .flat_map(|r| r.temperatures.iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let msc = table.metrics(ControllerKind::Msc).unwrap();
    let settled = hi - lo < 0.1;
    let bounded = peak < ambient + 5.0;
    verdict(
        settled && bounded && msc.max_tension > s.plant.t_heat,
        format!(
            "JAIC peak {peak:.2} C, last 10 s spread {:.3} C; MSC max tension {:.1} kgf vs T_heat {:.0}, peak {:.1} C",
            hi - lo,
            msc.max_tension,
            s.plant.t_heat,
            msc.peak_temperature
        ),
    )
}

fn main() {
    let t_bias = scenario("elbow-sweep.toml").controller.t_bias;
    let oracle = jacobian_oracle();
    let sweep = sweep_runs();
    let results = [
        ("1 jacobian oracle", oracle),
        ("2 antagonist stays at bias", state13_avoidance(&sweep, t_bias)),
        ("3 no slack", slack_avoidance(&sweep)),
        ("4 direction of effect", direction_of_effect()),
        ("5 tracking", tracking()),
        ("6 overshoot reversal", overshoot_reversal()),
        ("7 estimator", ekf_checks()),
        ("8 msc equivalence", msc_equivalence()),
        ("9 determinism", determinism()),
        ("10 thermal", thermal()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("PASS  {name}: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
