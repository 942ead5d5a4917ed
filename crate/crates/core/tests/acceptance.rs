//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line. Expensive artifacts (recordings, surrogates, Monte-Carlo
//! reports) are shared between criteria through lazily initialized statics.
//!
//! Runtime targets are printed alongside each criterion rather than
//! asserted: wall time depends on the host, the numerical claims do not.

use koopman_mpc::cost::{ce_default, ds_default, me_default};
use koopman_mpc::cost::GoalFrame;
use koopman_mpc::dictionary::{by_name, registry};
use koopman_mpc::ecdf::Ecdf;
use koopman_mpc::edmd::{fit_surrogate, KoopmanSurrogate, RegressionOptions};
use koopman_mpc::experiments::{
    monte_carlo_closed_loop, open_loop_study, reference_runs, EcdfReport, MonteCarloConfig,
    MonteCarloSpec, OpenLoopReport, OpenLoopStudySpec, ReferenceShape,
};
use koopman_mpc::mpc::{closed_loop, ClosedLoopRun, OcpSpec, PredictionModel, SolverOptions};
use koopman_mpc::postprocess::{build_dataset, PairDensity, PostprocessSpec};
use koopman_mpc::recording::RawRecording;
use koopman_mpc::sampling::{sample, PoseBox, SamplingSpec};
use koopman_mpc::vehicle::{
    dynamic_zoh_step, kinematic_zoh_step, normalize_angle, AccelInput, FullState, InputBox,
    ModelKind, Pose, VelocityInput,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;

// ---------------------------------------------------------------- fixtures

/// Noiseless kinematic training recording (five segments per basis).
fn kinematic_training() -> &'static RawRecording {
    static CELL: OnceLock<RawRecording> = OnceLock::new();
    CELL.get_or_init(|| sample(&SamplingSpec::kinematic_default()).unwrap())
}

/// Kinematic surrogate at the control interval of the closed-loop studies
/// (0.1 s), fitted from all noiseless pairs.
fn kinematic_surrogate() -> &'static KoopmanSurrogate {
    static CELL: OnceLock<KoopmanSurrogate> = OnceLock::new();
    CELL.get_or_init(|| {
        let dataset = build_dataset(
            kinematic_training(),
            &PostprocessSpec::kinematic_default(),
            ModelKind::Kinematic,
        )
        .unwrap();
        fit_surrogate(&by_name("D5t").unwrap(), &dataset, false, RegressionOptions::default())
            .unwrap()
    })
}

/// Dynamic training recording at the default sensor noise (0.5 mm, 0.1 deg).
fn dynamic_training() -> &'static RawRecording {
    static CELL: OnceLock<RawRecording> = OnceLock::new();
    CELL.get_or_init(|| sample(&SamplingSpec::dynamic_default()).unwrap())
}

/// Full-data dynamic surrogate: D8Eul, window 40, regressed drift.
fn dynamic_surrogate() -> &'static KoopmanSurrogate {
    static CELL: OnceLock<KoopmanSurrogate> = OnceLock::new();
    CELL.get_or_init(|| {
        let dataset = build_dataset(
            dynamic_training(),
            &PostprocessSpec::dynamic_default(),
            ModelKind::Dynamic,
        )
        .unwrap();
        fit_surrogate(&by_name("D8Eul").unwrap(), &dataset, true, RegressionOptions::default())
            .unwrap()
    })
}

const MC_SEED: u64 = 5;
const MC_DRAWS: usize = 100;

fn dynamic_mc_spec<'a>(configs: Vec<MonteCarloConfig<'a>>) -> MonteCarloSpec<'a> {
    MonteCarloSpec {
        plant: ModelKind::Dynamic,
        configs,
        draws: MC_DRAWS,
        eval_time: 20.0,
        horizon: 50,
        dt: 0.05,
        input_box: InputBox::acceleration_default(),
        initial_set: PoseBox { x1: [0.0, 1.5], x2: [-0.75, 0.75] },
        goal: GoalFrame::origin(),
        seed: MC_SEED,
        options: SolverOptions::default(),
    }
}

/// Monte-Carlo reports for the four dynamic study configurations:
/// mixed-exponents and quadratic costs with reprojection, plus the
/// mixed-exponents cost without reprojection.
fn dynamic_mc() -> &'static Vec<EcdfReport> {
    static CELL: OnceLock<Vec<EcdfReport>> = OnceLock::new();
    CELL.get_or_init(|| {
        let surrogate = dynamic_surrogate();
        let configs = vec![
            MonteCarloConfig {
                label: "me-proj".to_string(),
                cost: me_default(5),
                model: PredictionModel::SurrogateReprojected(surrogate),
            },
            MonteCarloConfig {
                label: "ce-proj".to_string(),
                cost: ce_default(5),
                model: PredictionModel::SurrogateReprojected(surrogate),
            },
            MonteCarloConfig {
                label: "ds-proj".to_string(),
                cost: ds_default(surrogate.dictionary(), &[0.0; 5]).unwrap(),
                model: PredictionModel::SurrogateReprojected(surrogate),
            },
            MonteCarloConfig {
                label: "me-noproj".to_string(),
                cost: me_default(5),
                model: PredictionModel::SurrogateLifted(surrogate),
            },
        ];
        monte_carlo_closed_loop(&dynamic_mc_spec(configs)).unwrap()
    })
}

fn mc_report(label: &str) -> &'static EcdfReport {
    dynamic_mc().iter().find(|r| r.label == label).unwrap()
}

/// Open-loop study over 20 noised reference runs: D8Eul, window 40.
fn dynamic_open_loop() -> &'static OpenLoopReport {
    static CELL: OnceLock<OpenLoopReport> = OnceLock::new();
    CELL.get_or_init(|| {
        let runs = reference_runs(
            ReferenceShape::Infinity,
            20,
            5e-4,
            0.1_f64.to_radians(),
            9,
        )
        .unwrap();
        let spec = OpenLoopStudySpec {
            training: dynamic_training(),
            runs: &runs,
            model: ModelKind::Dynamic,
            dictionaries: vec![by_name("D8Eul").unwrap()],
            windows: vec![40],
            horizon: 20,
            pair_dt: 0.05,
            drift: true,
            regression: RegressionOptions::default(),
        };
        open_loop_study(&spec).unwrap()
    })
}

/// Kinematic parking run shared by criteria 3 and 9: the reference scenario.
fn kinematic_parking_run() -> ClosedLoopRun {
    let spec = OcpSpec {
        horizon: 60,
        dt: 0.1,
        input_box: InputBox::velocity_default(),
        cost: me_default(3),
        goal: GoalFrame::origin(),
        model: PredictionModel::SurrogateReprojected(kinematic_surrogate()),
        options: SolverOptions::default(),
    };
    closed_loop(&spec, ModelKind::Kinematic, &[-1.0, -0.5, -std::f64::consts::FRAC_PI_6], 10.0)
        .unwrap()
}

// ---------------------------------------------------------------- criteria

#[test]
fn criterion_1_dictionary_closure_exactness() {
    let start = Instant::now();
    let post = PostprocessSpec { window: 1, pair_dt: 0.05, density: PairDensity::ControlRate };
    let dataset = build_dataset(kinematic_training(), &post, ModelKind::Kinematic)
        .unwrap()
        .truncated(200)
        .unwrap();
    for partition in &dataset.partitions {
        assert_eq!(partition.states.len(), 200);
    }
    // Exactness is a property of the unregularized estimator; even the tiny
    // default ridge perturbs the operators above the 1e-8 tolerance.
    let surrogate = fit_surrogate(
        &by_name("D5t").unwrap(),
        &dataset,
        false,
        RegressionOptions { ridge: Some(0.0) },
    )
    .unwrap();

    let x0 = [0.2, -0.1, 0.4];
    for basis in surrogate.bases() {
        let inputs = vec![*basis; 10];
        for reproject in [true, false] {
            let predicted = surrogate.predict(&x0, &inputs, reproject).unwrap();
            let mut pose = Pose::from_slice(&x0);
            for (step, state) in predicted.iter().enumerate().skip(1) {
                pose = kinematic_zoh_step(
                    pose,
                    VelocityInput::new(basis[0], basis[1]),
                    0.05,
                );
                let truth = pose.to_array();
                for (component, (&got, &want)) in
                    state.iter().zip(truth.iter()).enumerate()
                {
                    let err = if component == 2 {
                        normalize_angle(got - want).abs()
                    } else {
                        (got - want).abs()
                    };
                    assert!(
                        err <= 1e-8,
                        "basis {basis:?} reproject {reproject} step {step} \
                         component {component}: error {err:.3e}"
                    );
                }
            }
        }
    }
    println!(
        "criterion 1: 10-step basis-input predictions within 1e-8 of the ZOH flow \
         ({:.1}s, target < 1s)",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_2_bilinear_interpolation_order() {
    let start = Instant::now();
    let dict = by_name("D5t").unwrap();
    let mut surrogates = Vec::new();
    for pair_dt in [0.1, 0.05] {
        let post = PostprocessSpec { window: 1, pair_dt, density: PairDensity::ControlRate };
        let dataset = build_dataset(kinematic_training(), &post, ModelKind::Kinematic).unwrap();
        surrogates
            .push(fit_surrogate(&dict, &dataset, false, RegressionOptions::default()).unwrap());
    }

    let one_step_error = |surrogate: &KoopmanSurrogate, u: [f64; 2], dt: f64| -> f64 {
        let x0 = [0.2, -0.1, 0.4];
        let predicted = surrogate.predict(&x0, &[u], true).unwrap();
        let truth =
            kinematic_zoh_step(Pose::from_slice(&x0), VelocityInput::new(u[0], u[1]), dt)
                .to_array();
        let dx = predicted[1][0] - truth[0];
        let dy = predicted[1][1] - truth[1];
        let dth = normalize_angle(predicted[1][2] - truth[2]);
        (dx * dx + dy * dy + dth * dth).sqrt()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for draw in 0..5 {
        // Off-basis inputs with enough turn rate for a visible error but
        // slow enough to stay in the asymptotic second-order regime.
        let v = rng.random_range(0.3..0.5);
        let omega = rng.random_range(0.6..1.2) * if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
        let u = [v, omega];
        let coarse = one_step_error(&surrogates[0], u, 0.1);
        let fine = one_step_error(&surrogates[1], u, 0.05);
        let ratio = coarse / fine;
        assert!(
            (3.0..=5.0).contains(&ratio),
            "draw {draw} input {u:?}: error {coarse:.3e} -> {fine:.3e}, ratio {ratio:.2}"
        );
    }
    println!(
        "criterion 2: halving the sampling interval cuts off-basis one-step errors \
         by 3-5x at 5 random inputs ({:.1}s, target < 10s)",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_3_kinematic_setpoint_stabilization() {
    let start = Instant::now();
    let run = kinematic_parking_run();
    let lateral = run.final_state[1].abs();
    assert!(lateral <= 1e-3, "|x2(10s)| = {lateral:.3e}");

    // Nonincreasing after the transient, up to the model-mismatch noise
    // floor at the parked equilibrium (values of order 1e-8).
    let values: Vec<f64> = run.steps.iter().map(|s| s.value).collect();
    let transient = values.len() / 5;
    for k in transient..values.len() - 1 {
        assert!(
            values[k + 1] <= values[k] + 1e-6,
            "value rose at step {k}: {:.6e} -> {:.6e}",
            values[k],
            values[k + 1]
        );
    }
    println!(
        "criterion 3: |x2(10s)| = {lateral:.1e} <= 1e-3 with a post-transient \
         nonincreasing value function ({:.1}s, target < 2min)",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_4_cost_geometry_separation() {
    let start = Instant::now();
    let surrogate = kinematic_surrogate();
    let run_with = |cost| {
        let spec = OcpSpec {
            horizon: 60,
            dt: 0.1,
            input_box: InputBox::velocity_default(),
            cost,
            goal: GoalFrame::origin(),
            model: PredictionModel::SurrogateReprojected(surrogate),
            options: SolverOptions::default(),
        };
        closed_loop(&spec, ModelKind::Kinematic, &[0.0, 0.5, 0.0], 10.0).unwrap()
    };

    let me = run_with(me_default(3)).final_state[1].abs();
    let ce = run_with(ce_default(3)).final_state[1].abs();
    let ds = run_with(ds_default(surrogate.dictionary(), &[0.0; 3]).unwrap()).final_state[1]
        .abs();
    assert!(me <= 1e-3, "mixed-exponents parking |x2| = {me:.3e}");
    assert!(ce > 0.02, "quadratic state cost parked too well: |x2| = {ce:.3e}");
    assert!(ds > 0.02, "quadratic lifted cost parked too well: |x2| = {ds:.3e}");
    println!(
        "criterion 4: parallel parking |x2(10s)| me {me:.1e} <= 1e-3, \
         ce {ce:.3} and ds {ds:.3} > 0.02 ({:.1}s, target < 5min)",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_5_dynamic_monte_carlo_ecdf() {
    let start = Instant::now();
    let me = mc_report("me-proj").fraction_below(0.002);
    let ce = mc_report("ce-proj").fraction_below(0.002);
    let ds = mc_report("ds-proj").fraction_below(0.002);
    assert!(me >= 0.70, "me-proj below 2mm in {:.0}% of draws", me * 100.0);
    assert!(ce < 0.30, "ce-proj below 2mm in {:.0}% of draws", ce * 100.0);
    assert!(ds < 0.30, "ds-proj below 2mm in {:.0}% of draws", ds * 100.0);
    println!(
        "criterion 5: |x2(20s)| < 2mm for {:.0}% of me-proj draws (>= 70%), \
         {:.0}% ce-proj and {:.0}% ds-proj (< 30%) ({:.0}s, target < 30min at 8 workers)",
        me * 100.0,
        ce * 100.0,
        ds * 100.0,
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_6_reprojection_necessity() {
    let start = Instant::now();
    let noproj_mc = mc_report("me-noproj").fraction_below(0.002);
    assert!(
        noproj_mc < 0.5,
        "closed loop without reprojection succeeded in {:.0}% of draws",
        noproj_mc * 100.0
    );

    let report = dynamic_open_loop();
    let proj = report.entry("D8Eul", 40, "proj").unwrap().worst_translational_at(20);
    let noproj = report.entry("D8Eul", 40, "noproj").unwrap().worst_translational_at(20);
    assert!(
        noproj >= 3.0 * proj,
        "20-step max position error: noproj {noproj:.4} vs proj {proj:.4}"
    );
    println!(
        "criterion 6: without reprojection only {:.0}% of draws park below 2mm and \
         the 20-step open-loop error grows {:.1}x ({:.0}s)",
        noproj_mc * 100.0,
        noproj / proj,
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_7_open_loop_error_envelope() {
    let start = Instant::now();
    let entry = dynamic_open_loop().entry("D8Eul", 40, "proj").unwrap();
    let position = entry.worst_translational_at(20);
    let orientation = entry.worst_rotational_at(20).to_degrees();
    assert!(position < 0.05, "max 20-step position error {position:.4} m");
    assert!(orientation < 8.0, "max 20-step orientation error {orientation:.2} deg");
    println!(
        "criterion 7: 20-run open-loop envelope at 20 steps: {position:.3} m < 5cm, \
         {orientation:.2} deg < 8deg ({:.0}s)",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_8_data_efficiency() {
    let start = Instant::now();

    // Kinematic: ten control-rate pairs per basis still reach the reference
    // scenario's tolerance in at least 90% of random draws.
    let post = PostprocessSpec { window: 1, pair_dt: 0.1, density: PairDensity::ControlRate };
    let dataset = build_dataset(kinematic_training(), &post, ModelKind::Kinematic)
        .unwrap()
        .truncated(10)
        .unwrap();
    let small =
        fit_surrogate(&by_name("D5t").unwrap(), &dataset, false, RegressionOptions::default())
            .unwrap();
    let spec = OcpSpec {
        horizon: 60,
        dt: 0.1,
        input_box: InputBox::velocity_default(),
        cost: me_default(3),
        goal: GoalFrame::origin(),
        model: PredictionModel::SurrogateReprojected(&small),
        options: SolverOptions::default(),
    };
    let initial_set = PoseBox { x1: [-1.0, 1.0], x2: [-1.0, 1.0] };
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 50;
    let mut passes = 0;
    for _ in 0..draws {
        let pose = initial_set.sample(&mut rng);
        let run =
            closed_loop(&spec, ModelKind::Kinematic, &pose.to_array(), 10.0).unwrap();
        if run.final_state[1].abs() <= 1e-3 {
            passes += 1;
        }
    }
    let fraction = passes as f64 / draws as f64;
    assert!(
        fraction >= 0.9,
        "10-pair kinematic surrogate stabilized {passes}/{draws} draws"
    );

    // Dynamic: 100 control-rate pairs per basis stay within KS distance 0.15
    // of the full-data closed-loop distribution (paired draws).
    let post = PostprocessSpec { window: 40, pair_dt: 0.05, density: PairDensity::ControlRate };
    let dataset = build_dataset(dynamic_training(), &post, ModelKind::Dynamic)
        .unwrap()
        .truncated(100)
        .unwrap();
    let small =
        fit_surrogate(&by_name("D8Eul").unwrap(), &dataset, true, RegressionOptions::default())
            .unwrap();
    let configs = vec![MonteCarloConfig {
        label: "me-proj-d100".to_string(),
        cost: me_default(5),
        model: PredictionModel::SurrogateReprojected(&small),
    }];
    let reports = monte_carlo_closed_loop(&dynamic_mc_spec(configs)).unwrap();
    let ks = reports[0].ecdf.ks_distance(&mc_report("me-proj").ecdf);
    assert!(ks <= 0.15, "KS distance to the full-data distribution: {ks:.3}");
    println!(
        "criterion 8: d=10 kinematic surrogate parks {:.0}% of draws; d=100 dynamic \
         surrogate within KS {ks:.3} of the full-data distribution ({:.0}s)",
        fraction * 100.0,
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_9_property_suites() {
    let start = Instant::now();

    // Dictionary round trips: reproject(lift(x)) = x to 1e-12.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for dict in registry() {
        for _ in 0..10_000 {
            let mut state = vec![
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-3.1..3.1),
            ];
            for _ in 3..dict.arity() {
                state.push(rng.random_range(-2.0..2.0));
            }
            let back = dict.reproject(&dict.lift(&state).unwrap()).unwrap();
            for (i, (&got, &want)) in back.iter().zip(state.iter()).enumerate() {
                let err = if i == 2 {
                    normalize_angle(got - want).abs()
                } else {
                    (got - want).abs()
                };
                assert!(err <= 1e-12, "{} round trip, component {i}: {err:.3e}", dict.name());
            }
        }
    }

    // Cost gradients against central finite differences at random points.
    let lifted_dict = by_name("D8Eul").unwrap();
    let costs = [
        ("me", me_default(5), 5),
        ("ce", ce_default(5), 5),
        ("ds", ds_default(&lifted_dict, &[0.0; 5]).unwrap(), lifted_dict.size()),
    ];
    for _ in 0..1_000 {
        for (name, cost, dim) in &costs {
            let point: Vec<f64> = if *name == "ds" {
                let state: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
                lifted_dict.lift(&state).unwrap().as_slice().to_vec()
            } else {
                (0..*dim).map(|_| rng.random_range(-1.0..1.0)).collect()
            };
            let input = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
            let (gx, gu) = cost.gradient(&point, input).unwrap();
            let h = 1e-6;
            for i in 0..point.len() {
                let mut plus = point.clone();
                let mut minus = point.clone();
                plus[i] += h;
                minus[i] -= h;
                let fd = (cost.evaluate(&plus, input).unwrap()
                    - cost.evaluate(&minus, input).unwrap())
                    / (2.0 * h);
                let rel = (gx[i] - fd).abs() / gx[i].abs().max(1.0);
                assert!(rel <= 1e-6, "{name} state gradient {i}: relative error {rel:.3e}");
            }
            for j in 0..2 {
                let mut plus = input;
                let mut minus = input;
                plus[j] += h;
                minus[j] -= h;
                let fd = (cost.evaluate(&point, plus).unwrap()
                    - cost.evaluate(&point, minus).unwrap())
                    / (2.0 * h);
                let rel = (gu[j] - fd).abs() / gu[j].abs().max(1.0);
                assert!(rel <= 1e-6, "{name} input gradient {j}: relative error {rel:.3e}");
            }
        }
    }

    // Exact discretizations: two half steps equal one full step, and the
    // kinematic step commutes with planar rotations. Turn rates stay away
    // from the straight-line series switch, which has its own tests.
    for _ in 0..1_000 {
        let pose = Pose::from_slice(&[
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-3.0..3.0),
        ]);
        let turn = rng.random_range(0.3..2.0) * if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
        let u = VelocityInput::new(rng.random_range(-0.5..0.5), turn);
        let dt = rng.random_range(0.01..0.1);
        let two = kinematic_zoh_step(kinematic_zoh_step(pose, u, dt), u, dt);
        let one = kinematic_zoh_step(pose, u, 2.0 * dt);
        assert!((two.x1 - one.x1).abs() <= 1e-12);
        assert!((two.x2 - one.x2).abs() <= 1e-12);
        assert!(normalize_angle(two.theta - one.theta).abs() <= 1e-12);

        let phi: f64 = rng.random_range(-3.0..3.0);
        let rotate = |p: Pose| {
            Pose::from_slice(&[
                phi.cos() * p.x1 - phi.sin() * p.x2,
                phi.sin() * p.x1 + phi.cos() * p.x2,
                p.theta + phi,
            ])
        };
        let a = kinematic_zoh_step(rotate(pose), u, dt);
        let b = rotate(kinematic_zoh_step(pose, u, dt));
        assert!((a.x1 - b.x1).abs() <= 1e-12);
        assert!((a.x2 - b.x2).abs() <= 1e-12);
        assert!(normalize_angle(a.theta - b.theta).abs() <= 1e-12);

        // The dynamic step's heading moments are numeric, with a 1e-10
        // accuracy contract instead of the kinematic flow's closed form.
        let full = FullState::from_slice(&[
            pose.x1,
            pose.x2,
            pose.theta,
            rng.random_range(-0.4..0.4),
            rng.random_range(-1.0..1.0),
        ]);
        let a = AccelInput::new(rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0));
        let two = dynamic_zoh_step(dynamic_zoh_step(full, a, dt), a, dt);
        let one = dynamic_zoh_step(full, a, 2.0 * dt);
        for (i, (&x, &y)) in two.to_array().iter().zip(one.to_array().iter()).enumerate() {
            let err = if i == 2 { normalize_angle(x - y).abs() } else { (x - y).abs() };
            assert!(err <= 1e-10, "dynamic semigroup component {i}: {err:.3e}");
        }

        // With zero accelerations the dynamic step reduces exactly to the
        // kinematic flow at the current velocities.
        let coast = dynamic_zoh_step(full, AccelInput::new(0.0, 0.0), dt);
        let kin = kinematic_zoh_step(full.pose, VelocityInput::new(full.v, full.omega), dt);
        assert!((coast.pose.x1 - kin.x1).abs() <= 1e-12);
        assert!((coast.pose.x2 - kin.x2).abs() <= 1e-12);
        assert!(normalize_angle(coast.pose.theta - kin.theta).abs() <= 1e-12);
        assert_eq!(coast.v, full.v);
        assert_eq!(coast.omega, full.omega);
    }

    // Bitwise determinism of sampling, fitting, and closed-loop simulation.
    let post = PostprocessSpec::kinematic_default();
    let dataset =
        build_dataset(kinematic_training(), &post, ModelKind::Kinematic).unwrap();
    let dict = by_name("D5t").unwrap();
    let once = fit_surrogate(&dict, &dataset, false, RegressionOptions::default()).unwrap();
    let twice = fit_surrogate(&dict, &dataset, false, RegressionOptions::default()).unwrap();
    assert_eq!(once.k0(), twice.k0());
    assert_eq!(once.basis_operators(), twice.basis_operators());
    let sampled_again = sample(&SamplingSpec::kinematic_default()).unwrap();
    assert_eq!(kinematic_training(), &sampled_again);

    let first = kinematic_parking_run();
    let second = kinematic_parking_run();
    assert_eq!(first.final_state, second.final_state);
    for (a, b) in first.steps.iter().zip(second.steps.iter()) {
        assert_eq!(a.state, b.state);
        assert_eq!(a.input, b.input);
        assert_eq!(a.value, b.value);
    }

    // Distribution invariants: on a hand-built distribution with a censored
    // entry, then on every Monte-Carlo report produced by this suite.
    let ecdf = Ecdf::new(vec![0.4, f64::INFINITY, 0.1]).unwrap();
    assert_eq!(ecdf.samples(), &[0.1, 0.4, f64::INFINITY][..]);
    for report in dynamic_mc() {
        let samples = report.ecdf.samples();
        assert!(samples.windows(2).all(|w| w[0] <= w[1]), "{} not sorted", report.label);
        assert!(samples.iter().all(|x| *x >= 0.0));
        assert!((report.ecdf.value(f64::INFINITY) - 1.0).abs() <= 1e-12);
        assert!(report.ecdf.value(-1.0) == 0.0);
        let censored = report.ecdf.censored_fraction();
        assert!((0.0..=1.0).contains(&censored));
    }
    println!(
        "criterion 9: round trips, gradient checks, semigroup and invariance \
         properties, distribution invariants, and bitwise determinism hold \
         ({:.0}s, target < 1min of property checks)",
        start.elapsed().as_secs_f64()
    );
}
