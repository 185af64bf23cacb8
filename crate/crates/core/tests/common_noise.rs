use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use submfg::common_noise::{
    cn_best_response, cn_brute_force_best_response, cn_learn_from_above, cn_learn_from_below, CommonNoiseProblem,
    ConditionalFlow, ScenarioTree,
};
use submfg::measures::{DiscreteMeasure, StateGrid, TimeGrid};
use submfg::mfg::{learn_from_below, LearningOptions};
use submfg::model::{lq_model, ControlSet, CostModel, Dynamics, Interaction, LqParams, MeanShift, QuadraticCost};
use submfg::{MfgProblem, TieBreak};

fn quadratic() -> CostModel {
    let params = LqParams {
        c: 0.0.into(),
        p: 0.0.into(),
        q: 1.0.into(),
        cost: QuadraticCost {
            n: 1.0.into(),
            m: 1.0.into(),
            m_hat: (-0.5).into(),
            h: 1.0.into(),
            h_hat: (-0.5).into(),
        },
        sigma: 0.3,
    };
    lq_model(&params, 1.0).unwrap().1
}

fn ou() -> Dynamics {
    Dynamics::ou_mean_field(-0.5, MeanShift::clamped_mean(0.3, 1.0).unwrap(), 0.3).unwrap()
}

fn tiny(seed: u64, dynamics: Dynamics) -> (CommonNoiseProblem, ConditionalFlow) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Arc::new(StateGrid::uniform(-1.0, 1.0, 5).unwrap());
    let time = TimeGrid::new(0.4, 2).unwrap();
    let controls = ControlSet::new(vec![-0.5, 0.5]).unwrap();
    let (f1, f2, g1, l1) = (
        rng.gen_range(0.1..1.0),
        rng.gen_range(-1.0..0.0),
        rng.gen_range(0.1..1.0),
        rng.gen_range(0.1..1.0),
    );
    let cost = CostModel::new(
        Interaction::mean(move |_, x, z| f1 * x * x + f2 * x * z),
        move |_, x, a| l1 * a * a + 0.1 * a * x,
        Interaction::mean(move |_, x, z| g1 * (x - z).powi(2)),
    );
    let w: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..1.0)).collect();
    let initial = DiscreteMeasure::from_weights(grid.clone(), w).unwrap();
    let sigma0 = rng.gen_range(0.1..0.8);
    let problem = CommonNoiseProblem::new(grid, time, controls, dynamics, cost, initial, sigma0, 2).unwrap();
    let draws: Vec<f64> = (0..9).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let mu = ConditionalFlow::from_fn(*problem.tree(), 2, |k, j| draws[3 * k + j]);
    (problem, mu)
}

#[test]
fn backward_induction_matches_enumeration() {
    for seed in 0..6 {
        for dynamics in [Dynamics::affine(0.1, -0.2, 1.0, 0.3).unwrap(), ou()] {
            let (problem, mu) = tiny(seed, dynamics);
            let dp = cn_best_response(&problem, &mu, TieBreak::Lowest).unwrap();
            let bf = cn_brute_force_best_response(&problem, &mu).unwrap();
            assert!((dp.expected_cost - bf.expected_cost).abs() <= 1e-12, "seed {seed}");
            assert!(dp.flow.distance(&bf.flow) <= 1e-12, "seed {seed}");
        }
    }
}

#[test]
fn node_means_average_to_the_unconditional_mean() {
    for seed in 10..16 {
        let (problem, mu) = tiny(seed, ou());
        let tree = *problem.tree();
        let r = cn_best_response(&problem, &mu, TieBreak::Highest).unwrap();
        // at tree times every node carries its binomial weight
        for level in 0..=tree.depth() {
            let k = level * tree.steps_per_level();
            let avg: f64 = (0..tree.nodes(level)).map(|j| tree.prob(level, j) * r.flow.get(k, j)).sum();
            assert!((avg - r.unconditional_means[k]).abs() <= 1e-10);
        }
        assert!((r.flow.get(0, 0) - problem.initial().mean()).abs() <= 1e-12);
    }
}

fn sized(sigma0: f64, depth: usize) -> CommonNoiseProblem {
    let grid = Arc::new(StateGrid::uniform(-3.0, 3.0, 51).unwrap());
    let initial = DiscreteMeasure::truncated_gaussian(grid.clone(), 0.5, 0.3).unwrap();
    CommonNoiseProblem::new(
        grid,
        TimeGrid::new(1.0, 50).unwrap(),
        ControlSet::linspace(-1.0, 1.0, 11).unwrap(),
        ou(),
        quadratic(),
        initial,
        sigma0,
        depth,
    )
    .unwrap()
}

#[test]
fn learning_is_nodewise_monotone_and_ordered() {
    let p = sized(0.2, 5);
    let opts = LearningOptions::default();
    let (lo, lo_trace) = cn_learn_from_below(&p, &opts).unwrap();
    let (hi, hi_trace) = cn_learn_from_above(&p, &opts).unwrap();
    assert!(lo.converged && hi.converged);
    for w in lo_trace.flows.windows(2) {
        assert!(w[0].leq(&w[1]));
    }
    for w in hi_trace.flows.windows(2) {
        assert!(w[1].leq(&w[0]));
    }
    assert!(lo.flow.leq(&hi.flow));
    assert!(p.lower_flow().leq(&lo.flow) && hi.flow.leq(&p.upper_flow()));
}

#[test]
fn without_common_noise_the_plain_game_comes_back() {
    let cn = sized(0.0, 5);
    let plain = MfgProblem::new(
        cn.grid().clone(),
        *cn.time(),
        cn.controls().clone(),
        ou(),
        quadratic(),
        cn.initial().clone(),
    )
    .unwrap();
    let opts = LearningOptions::default();
    let (a, _) = cn_learn_from_below(&cn, &opts).unwrap();
    let (b, _) = learn_from_below(&plain, &opts).unwrap();
    for (k, z) in b.flow.means().into_iter().enumerate() {
        let level = cn.tree().level_of_step(k);
        for j in 0..cn.tree().nodes(level) {
            assert!((a.flow.get(k, j) - z).abs() <= 1e-8, "step {k} node {j}");
        }
    }
}

#[test]
fn decoupled_costs_settle_after_two_responses() {
    let grid = Arc::new(StateGrid::uniform(-3.0, 3.0, 51).unwrap());
    let initial = DiscreteMeasure::truncated_gaussian(grid.clone(), 0.5, 0.3).unwrap();
    let cost = CostModel::new(Interaction::Zero, |_, _, a| 0.5 * a * a, Interaction::mean(|_, x, _| (x - 0.3).powi(2)));
    let p = CommonNoiseProblem::new(
        grid,
        TimeGrid::new(1.0, 50).unwrap(),
        ControlSet::linspace(-1.0, 1.0, 11).unwrap(),
        Dynamics::affine(0.0, 0.0, 1.0, 0.3).unwrap(),
        cost,
        initial,
        0.2,
        5,
    )
    .unwrap();
    let (s, _) = cn_learn_from_below(&p, &LearningOptions::default()).unwrap();
    assert_eq!(s.iterations, 2);
    assert_eq!(s.residual, 0.0);
}

#[test]
fn unsupported_setups_are_rejected() {
    let grid = Arc::new(StateGrid::uniform(0.1, 2.0, 21).unwrap());
    let initial = DiscreteMeasure::point_mass(grid.clone(), 1.0).unwrap();
    let time = TimeGrid::new(0.5, 100).unwrap();
    let controls = ControlSet::linspace(-0.5, 0.5, 3).unwrap();
    let geometric = Dynamics::geometric_mean_field(MeanShift::clamped_mean(0.1, 0.2).unwrap(), 0.1).unwrap();
    let err = CommonNoiseProblem::new(grid.clone(), time, controls.clone(), geometric, quadratic(), initial.clone(), 0.1, 4);
    assert!(matches!(err, Err(submfg::Error::UnsupportedCommonNoise(_))));

    let order_one = CostModel::new(Interaction::order_one(|_, x, y| (x - y).powi(2)), |_, _, a| a * a, Interaction::Zero);
    let brownian = Dynamics::affine(0.0, 0.0, 1.0, 0.1).unwrap();
    let err = CommonNoiseProblem::new(grid.clone(), time, controls.clone(), brownian.clone(), order_one, initial.clone(), 0.1, 4);
    assert!(matches!(err, Err(submfg::Error::UnsupportedCommonNoise(_))));

    // depth must divide the number of steps
    assert!(ScenarioTree::new(3, &time, 0.1).is_err());
    assert!(CommonNoiseProblem::new(grid, time, controls, brownian, quadratic(), initial, 0.1, 3).is_err());
}
