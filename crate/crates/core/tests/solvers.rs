mod common;

use bilevel_stability::problems::{
    make_quadratic_scsc, BilevelProblem, MatrixSpec, QuadraticParams, QuadraticPopulation, QuadraticProblem,
};
use bilevel_stability::solvers::{
    run, run_ssgd, run_tsgd, run_ud, scsc_stepsize_window, Algorithm, SolverConfig, StepSchedule, UpdateOrder,
};
use bilevel_stability::{joint_norm, Error, ParameterPair, RandomStream};
use common::*;
use proptest::prelude::*;

fn constant(eta_x: f64, eta_y: f64) -> (StepSchedule, StepSchedule) {
    (StepSchedule::Constant { eta: eta_x }, StepSchedule::Constant { eta: eta_y })
}

fn cfg(algorithm: Algorithm, k: usize, t: usize, eta: (f64, f64)) -> SolverConfig {
    let (x, y) = constant(eta.0, eta.1);
    SolverConfig::new(algorithm, k, t).with_schedules(x, y)
}

#[test]
fn same_seed_gives_identical_trajectories() {
    for inst in all_instances(1) {
        let p = inst.problem.as_ref();
        let (dv, dt) = datasets(inst.population.as_ref(), 15, 12, 2);
        for alg in [Algorithm::Ssgd, Algorithm::Tsgd, Algorithm::Ud] {
            let mut c = cfg(alg, 40, 3, (0.05, 0.05));
            c.checkpoint_every = 7;
            let a = run(p, &dv, &dt, &c, &mut RandomStream::new(3)).unwrap();
            let b = run(p, &dv, &dt, &c, &mut RandomStream::new(3)).unwrap();
            assert_eq!(a, b, "{} {alg}", p.name());
            let c2 = run(p, &dv, &dt, &c, &mut RandomStream::new(4)).unwrap();
            assert_ne!(a.final_pair, c2.final_pair);
        }
    }
}

#[test]
fn zero_outer_updates_return_the_initial_pair() {
    let inst = default_quadratic(5);
    let p = inst.problem.as_ref();
    let (dv, dt) = datasets(inst.population.as_ref(), 5, 5, 6);
    let init = ParameterPair::new(vec![0.1, 0.2, 0.3], vec![-0.4, 0.5]).unwrap();
    for alg in [Algorithm::Ssgd, Algorithm::Tsgd, Algorithm::Ud] {
        let mut c = SolverConfig::new(alg, 0, 2);
        c.init = Some(init.clone());
        let r = run(p, &dv, &dt, &c, &mut RandomStream::new(7)).unwrap();
        assert_eq!(r.final_pair, init);
        assert!(r.risk_path.is_empty());
    }
}

#[test]
fn one_outer_update_moves_away_from_init() {
    let inst = default_quadratic(5);
    let (dv, dt) = datasets(inst.population.as_ref(), 5, 5, 6);
    let r = run_ssgd(inst.problem.as_ref(), &dv, &dt, &cfg(Algorithm::Ssgd, 1, 1, (0.1, 0.1)), &mut RandomStream::new(7)).unwrap();
    assert_ne!(r.final_pair, ParameterPair::zeros(3, 2));
    assert_eq!(r.risk_path.len(), 1);
}

#[test]
fn tsgd_with_one_inner_step_is_ssgd() {
    for inst in all_instances(8) {
        let p = inst.problem.as_ref();
        let (dv, dt) = datasets(inst.population.as_ref(), 17, 23, 9);
        for batch in [1, 4] {
            let mut s = cfg(Algorithm::Ssgd, 200, 1, (0.03, 0.05));
            s.batch_size = batch;
            s.checkpoint_every = 1;
            let mut t = s.clone();
            t.algorithm = Algorithm::Tsgd;
            // The outer update of TSGD reads the refreshed inner state.
            s.update_order = UpdateOrder::GaussSeidel;
            let a = run_ssgd(p, &dv, &dt, &s, &mut RandomStream::new(10)).unwrap();
            let b = run_tsgd(p, &dv, &dt, &t, &mut RandomStream::new(10)).unwrap();
            assert_eq!(a, b, "{}", p.name());
        }
    }
}

#[test]
fn simultaneous_and_gauss_seidel_differ() {
    let inst = logistic(11);
    let p = inst.problem.as_ref();
    let (dv, dt) = datasets(inst.population.as_ref(), 10, 10, 12);
    let a = cfg(Algorithm::Ssgd, 20, 1, (0.1, 0.1));
    let mut b = a.clone();
    b.update_order = UpdateOrder::GaussSeidel;
    let ra = run_ssgd(p, &dv, &dt, &a, &mut RandomStream::new(13)).unwrap();
    let rb = run_ssgd(p, &dv, &dt, &b, &mut RandomStream::new(13)).unwrap();
    assert_ne!(ra.final_pair, rb.final_pair);
}

#[test]
fn simultaneous_update_reads_the_previous_inner_state() {
    // One deterministic step computed by hand from the sample-level gradients.
    let inst = default_quadratic(14);
    let p = inst.problem.as_ref();
    let (dv, dt) = datasets(inst.population.as_ref(), 1, 1, 15);
    let init = ParameterPair::new(vec![0.3, -0.1, 0.2], vec![0.4, -0.5]).unwrap();
    let mut c = cfg(Algorithm::Ssgd, 1, 1, (0.2, 0.3));
    c.init = Some(init.clone());
    let r = run_ssgd(p, &dv, &dt, &c, &mut RandomStream::new(16)).unwrap();
    let mut gx = vec![0.0; 3];
    let mut gy = vec![0.0; 2];
    p.outer_grad_x(&init.x, &init.y, &dv[0], &mut gx);
    p.inner_grad_y(&init.x, &init.y, &dt[0], &mut gy);
    let x: Vec<f64> = init.x.iter().zip(&gx).map(|(a, g)| a - 0.2 * g).collect();
    let y: Vec<f64> = init.y.iter().zip(&gy).map(|(a, g)| a - 0.3 * g).collect();
    assert_eq!(r.final_pair, ParameterPair::new(x, y).unwrap());
}

#[test]
fn ud_and_tsgd_agree_for_one_outer_update() {
    for inst in all_instances(17) {
        let p = inst.problem.as_ref();
        let (dv, dt) = datasets(inst.population.as_ref(), 9, 9, 18);
        let t = cfg(Algorithm::Tsgd, 1, 5, (0.05, 0.05));
        let mut u = t.clone();
        u.algorithm = Algorithm::Ud;
        let a = run_tsgd(p, &dv, &dt, &t, &mut RandomStream::new(19)).unwrap();
        let b = run_ud(p, &dv, &dt, &u, &mut RandomStream::new(19)).unwrap();
        assert_eq!(a, b, "{}", p.name());
    }
}

#[test]
fn ud_resets_the_inner_state_and_tsgd_carries_it() {
    let inst = default_quadratic(20);
    let p = inst.problem.as_ref();
    let (dv, dt) = datasets(inst.population.as_ref(), 8, 8, 21);
    let y0 = vec![0.25, -0.25];
    let mut c = cfg(Algorithm::Ud, 3, 10, (0.1, 0.1));
    c.init = Some(ParameterPair::new(vec![0.0; 3], y0.clone()).unwrap());
    c.checkpoint_every = 1;
    let ud = run_ud(p, &dv, &dt, &c, &mut RandomStream::new(22)).unwrap();
    c.algorithm = Algorithm::Tsgd;
    let ts = run_tsgd(p, &dv, &dt, &c, &mut RandomStream::new(22)).unwrap();
    assert_eq!(ud.checkpoints.len(), 3);
    for (k, (a, b)) in ud.checkpoints.iter().zip(&ts.checkpoints).enumerate() {
        assert_eq!(a.k, k);
        assert_eq!(a.pair.y, y0);
        if k == 0 {
            assert_eq!(b.pair.y, y0);
        } else {
            assert_ne!(b.pair.y, y0);
        }
    }
}

#[test]
fn wrong_algorithm_for_entry_point_is_rejected() {
    let inst = default_quadratic(23);
    let (dv, dt) = datasets(inst.population.as_ref(), 3, 3, 24);
    let c = cfg(Algorithm::Tsgd, 2, 2, (0.1, 0.1));
    assert!(run_ssgd(inst.problem.as_ref(), &dv, &dt, &c, &mut RandomStream::new(1)).is_err());
    assert!(run_ud(inst.problem.as_ref(), &dv, &dt, &c, &mut RandomStream::new(1)).is_err());
}

#[test]
fn invalid_configurations_are_rejected() {
    let inst = default_quadratic(25);
    let p = inst.problem.as_ref();
    let (dv, dt) = datasets(inst.population.as_ref(), 3, 3, 26);
    let mut s = RandomStream::new(1);
    assert!(run(p, &dv, &dt, &cfg(Algorithm::Ssgd, 5, 1, (0.0, 0.1)), &mut s).is_err());
    assert!(run(p, &dv, &dt, &cfg(Algorithm::Ssgd, 5, 1, (0.1, -1.0)), &mut s).is_err());
    assert!(run(p, &dv, &dt, &cfg(Algorithm::Tsgd, 5, 0, (0.1, 0.1)), &mut s).is_err());
    let empty = bilevel_stability::Dataset::new(vec![]);
    assert!(matches!(
        run(p, &empty, &dt, &cfg(Algorithm::Ssgd, 5, 1, (0.1, 0.1)), &mut s),
        Err(Error::EmptyDataset(_))
    ));
    let mut c = cfg(Algorithm::Ssgd, 5, 1, (0.1, 0.1));
    c.init = Some(ParameterPair::zeros(2, 2));
    assert!(matches!(run(p, &dv, &dt, &c, &mut s), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn divergence_is_reported_with_its_iteration() {
    let inst = default_quadratic(27);
    let p = inst.problem.as_ref();
    let (dv, dt) = datasets(inst.population.as_ref(), 3, 3, 28);
    let err = run(p, &dv, &dt, &cfg(Algorithm::Ssgd, 10_000, 1, (50.0, 50.0)), &mut RandomStream::new(1)).unwrap_err();
    match err {
        Error::LeftRegion { iteration, .. } | Error::NonFinite { iteration } => assert!(iteration < 10_000),
        other => panic!("unexpected {other:?}"),
    }
}

fn unit_quadratic(seed: u64) -> (QuadraticProblem, QuadraticPopulation) {
    let mut params = QuadraticParams::new(2, 2);
    params.p = MatrixSpec::Spectrum { lo: 0.8, hi: 1.2 };
    params.q = MatrixSpec::Spectrum { lo: 0.9, hi: 1.1 };
    params.coupling = MatrixSpec::Scaled { norm: 0.3 };
    params.target_center = 0.5;
    make_quadratic_scsc(&params, &mut RandomStream::new(seed)).unwrap()
}

#[test]
fn deterministic_ssgd_converges_geometrically_to_the_stationary_point() {
    let (q, pop) = unit_quadratic(29);
    let p = &q;
    let c = p.constants();
    let w = scsc_stepsize_window(c.mu_f, c.mu_g, c.smooth_f, c.smooth_g).unwrap();
    let (dv, dt) = datasets(&pop, 1, 1, 30);
    let target = q.empirical_stationary_point(&dv, &dt).unwrap();
    let mut conf = SolverConfig::new(Algorithm::Ssgd, 2000, 1);
    conf.checkpoint_every = 1;
    let r = run_ssgd(p, &dv, &dt, &conf, &mut RandomStream::new(31)).unwrap();
    let eta = 0.9 * w.hi;
    assert!(eta >= w.lo);
    let errors: Vec<f64> = r.checkpoints.iter().map(|c| joint_norm(&c.pair, &target).unwrap()).collect();
    for pair in errors.windows(2) {
        assert!(pair[1] <= pair[0] || pair[1] < 1e-13, "{errors:?}");
    }
    // Geometric: one uniform factor below one bounds every step's ratio.
    let ratios: Vec<f64> = errors.windows(2).filter(|e| e[0] > 1e-10).map(|e| e[1] / e[0]).collect();
    assert!(ratios.len() > 5);
    assert!(ratios.iter().all(|r| *r < 0.9), "{ratios:?}");
    let last = joint_norm(&r.final_pair, &target).unwrap();
    assert!(last < 1e-6, "{last}");
}

#[test]
fn deterministic_ssgd_step_is_a_contraction() {
    let (p, pop) = unit_quadratic(32);
    let p = &p;
    let (dv, dt) = datasets(&pop, 1, 1, 33);
    let mut s = RandomStream::new(34);
    for _ in 0..10 {
        let mut a = SolverConfig::new(Algorithm::Ssgd, 300, 1);
        a.checkpoint_every = 1;
        let mut b = a.clone();
        a.init = Some(random_pair(p, 3.0, &mut s));
        b.init = Some(random_pair(p, 3.0, &mut s));
        let ra = run_ssgd(p, &dv, &dt, &a, &mut RandomStream::new(35)).unwrap();
        let rb = run_ssgd(p, &dv, &dt, &b, &mut RandomStream::new(35)).unwrap();
        let mut prev = f64::INFINITY;
        for (ca, cb) in ra.checkpoints.iter().zip(&rb.checkpoints) {
            let d = joint_norm(&ca.pair, &cb.pair).unwrap();
            assert!(d <= prev * (1.0 + 1e-12) + 1e-15, "{d} > {prev}");
            prev = d;
        }
    }
}

#[test]
fn full_batch_inner_loop_converges_linearly() {
    let (q, pop) = unit_quadratic(36);
    let p = &q;
    let (dv, dt) = datasets(&pop, 6, 9, 37);
    let eta_y = 0.3;
    let t = 50;
    let mut c = cfg(Algorithm::Tsgd, 20, t, (0.2, eta_y));
    c.full_batch = true;
    c.checkpoint_every = 1;
    c.init = Some(ParameterPair::new(vec![0.5, -0.5], vec![1.0, 1.0]).unwrap());
    let r = run_tsgd(p, &dv, &dt, &c, &mut RandomStream::new(38)).unwrap();
    let rate = (1.0 - eta_y * p.constants().mu_g).powi(t as i32);
    for k in 0..c.k {
        let x_k = &r.checkpoints[k].pair.x;
        let y_start = &r.checkpoints[k].pair.y;
        let y_end = if k + 1 < c.k { &r.checkpoints[k + 1].pair.y } else { &r.final_pair.y };
        let star = q.empirical_inner_solution(x_k, &dt).unwrap();
        let dist = |y: &[f64]| norm(&y.iter().zip(&star).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(dist(y_end) <= rate * dist(y_start) + 1e-12, "k = {k}");
    }
}

#[test]
fn risk_path_has_one_entry_per_update_ending_at_the_final_pair() {
    for inst in all_instances(39) {
        let p = inst.problem.as_ref();
        let (dv, dt) = datasets(inst.population.as_ref(), 11, 11, 40);
        for alg in [Algorithm::Ssgd, Algorithm::Tsgd, Algorithm::Ud] {
            let r = run(p, &dv, &dt, &cfg(alg, 25, 2, (0.05, 0.05)), &mut RandomStream::new(41)).unwrap();
            assert_eq!(r.risk_path.len(), 25);
            assert!(r.risk_path.iter().all(|v| v.is_finite() && *v >= 0.0));
            let last = bilevel_stability::problems::empirical_outer_risk(p, &dv, &r.final_pair).unwrap();
            assert!((r.risk_path[24] - last).abs() <= 1e-12 * last.max(1.0));
        }
    }
}

#[test]
fn full_batch_consumes_no_randomness() {
    let inst = logistic(42);
    let p = inst.problem.as_ref();
    let (dv, dt) = datasets(inst.population.as_ref(), 7, 7, 43);
    let mut c = cfg(Algorithm::Tsgd, 10, 3, (0.1, 0.1));
    c.full_batch = true;
    let a = run(p, &dv, &dt, &c, &mut RandomStream::new(1)).unwrap();
    let b = run(p, &dv, &dt, &c, &mut RandomStream::new(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn default_schedules_resolve_for_every_regime() {
    for inst in all_instances(44) {
        let p = inst.problem.as_ref();
        let (dv, dt) = datasets(inst.population.as_ref(), 5, 5, 45);
        for alg in [Algorithm::Tsgd, Algorithm::Ud] {
            let c = SolverConfig::new(alg, 10, 4);
            let r = run(p, &dv, &dt, &c, &mut RandomStream::new(46));
            // The quadratic has no TSGD window default of its own; it uses the
            // SSGD window, which must still be feasible.
            assert!(r.is_ok(), "{} {alg}: {r:?}", p.name());
        }
    }
}

#[test]
fn solver_config_round_trips_through_toml() {
    let mut c = cfg(Algorithm::Ud, 12, 3, (0.1, 0.2));
    c.checkpoint_every = 4;
    c.update_order = UpdateOrder::GaussSeidel;
    c.init = Some(ParameterPair::new(vec![1.0], vec![2.0, 3.0]).unwrap());
    let text = toml::to_string(&c).unwrap();
    let back: SolverConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, c);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn risk_paths_are_finite_and_nonnegative(seed in any::<u64>(), k in 1usize..30, t in 1usize..4, alg in 0usize..3) {
        let alg = [Algorithm::Ssgd, Algorithm::Tsgd, Algorithm::Ud][alg];
        for inst in all_instances(seed % 1000) {
            let p = inst.problem.as_ref();
            let (dv, dt) = datasets(inst.population.as_ref(), 6, 6, seed);
            let r = run(p, &dv, &dt, &cfg(alg, k, t, (0.02, 0.02)), &mut RandomStream::new(seed)).unwrap();
            prop_assert_eq!(r.risk_path.len(), k);
            prop_assert!(r.risk_path.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }
}
