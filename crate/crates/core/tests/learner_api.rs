use softq_core::comparison::{co_simulate, ComparisonError};
use softq_core::learner::{
    realized_noise_checked, run, Behavior, LearnerConfig, LearnerError, Sampling,
    TIME_VARYING_POLICY,
};
use softq_core::mdp::{
    assemble_matrices, build_mdp, uniform_distribution, MdpSpec, QTable, TabularMdp,
};
use softq_core::soft::SoftOperator;
use softq_core::solvers::{optimal_q, DEFAULT_MAX_ITER, DEFAULT_TOL};

fn fig1() -> TabularMdp {
    build_mdp(&MdpSpec::two_state_example(), true).unwrap()
}

fn iid(mdp: &TabularMdp) -> Sampling {
    Sampling::Iid {
        d: uniform_distribution(mdp),
    }
}

#[test]
fn runs_reproduce_per_seed_and_stream() {
    let mdp = fig1();
    let cfg = LearnerConfig::new(SoftOperator::Lse { beta: 10.0 }, 0.05, 3000, iid(&mdp));
    let a = run(&cfg.clone().with_seed(1, 0), &mdp).unwrap();
    let b = run(&cfg.clone().with_seed(1, 0), &mdp).unwrap();
    let c = run(&cfg.with_seed(1, 1), &mdp).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.final_q, c.final_q);
}

#[test]
fn iid_learner_approaches_optimum() {
    let mdp = fig1();
    let q_star = optimal_q(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let cfg = LearnerConfig::new(SoftOperator::Lse { beta: 1000.0 }, 0.02, 100_000, iid(&mdp))
        .with_seed(3, 0);
    let trace = run(&cfg, &mdp).unwrap();
    assert!(trace.final_q.linf_distance(&q_star) < 0.3);
    assert!(trace.tail_mean_q.linf_distance(&q_star) < 0.1);
}

#[test]
fn trajectory_protocol_is_tagged_and_cannot_be_co_simulated() {
    let mdp = fig1();
    let sampling = Sampling::Trajectory {
        behavior: Behavior::SoftmaxOfQ,
        max_episode_steps: 50,
        initial_distribution: mdp.initial_distribution().to_vec(),
    };
    let cfg = LearnerConfig::new(SoftOperator::Boltzmann { beta: 10.0 }, 0.01, 500, sampling);
    let trace = run(&cfg, &mdp).unwrap();
    assert_eq!(
        trace.assumption_violations,
        vec![TIME_VARYING_POLICY.to_string()]
    );
    assert_eq!(trace.visit_counts.iter().sum::<u64>(), 500);
    let q_star = optimal_q(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    assert!(matches!(
        co_simulate(&cfg, &mdp, &q_star),
        Err(ComparisonError::RequiresIid)
    ));
}

#[test]
fn noise_model_must_match_sampler() {
    let mdp = fig1();
    let skewed = vec![0.4, 0.2, 0.2, 0.2];
    let mm = assemble_matrices(&mdp, &skewed).unwrap();
    let mut cfg = LearnerConfig::new(SoftOperator::Lse { beta: 1.0 }, 0.1, 1, iid(&mdp));
    let q = QTable::zeros(2, 2);
    let mut learner = softq_core::learner::Learner::new(&cfg, &mdp).unwrap();
    let t = learner.sample();
    assert!(matches!(
        realized_noise_checked(&cfg, &q, &t, &mm, 0.9),
        Err(LearnerError::DistributionMismatch)
    ));
    cfg.sampling = Sampling::Iid { d: skewed };
    assert!(realized_noise_checked(&cfg, &q, &t, &mm, 0.9).is_ok());
}

#[test]
fn invalid_step_size_rejected() {
    let mdp = fig1();
    for alpha in [0.0, 1.0, 1.5, f64::NAN] {
        let cfg = LearnerConfig::new(SoftOperator::Lse { beta: 1.0 }, alpha, 1, iid(&mdp));
        assert!(matches!(
            run(&cfg, &mdp),
            Err(LearnerError::InvalidStepSize(_))
        ));
    }
}

#[test]
fn co_simulation_sandwich_on_a_skewed_distribution() {
    let mdp = fig1();
    let q_star = optimal_q(&mdp, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    let d = vec![0.1, 0.2, 0.3, 0.4];
    for op in [
        SoftOperator::Lse { beta: 5.0 },
        SoftOperator::Boltzmann { beta: 5.0 },
    ] {
        let cfg =
            LearnerConfig::new(op, 0.05, 5000, Sampling::Iid { d: d.clone() }).with_seed(8, 0);
        let trace = co_simulate(&cfg, &mdp, &q_star).unwrap();
        assert!(trace.sandwich_holds(), "{:?}", trace.violations.first());
        assert!(trace.max_switching_norm <= 1.0 - 0.05 * 0.1 * 0.1 + 1e-15);
    }
}
