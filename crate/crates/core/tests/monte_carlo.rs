use vaml_lab_core::mdp::{expected_return, q_exact};
use vaml_lab_core::random::{random_mdp, random_policy, rng_from_seed, LabRng};
use vaml_lab_core::{TabularMdp, TabularPolicy};

const ROLLOUTS: usize = 100_000;
// gamma^H * r_max / (1 - gamma) is below 1e-7 for these settings
const HORIZON: usize = 200;

fn discounted_return(mdp: &TabularMdp, policy: &TabularPolicy, s0: usize, a0: Option<usize>, rng: &mut LabRng) -> f64 {
    let (mut s, mut total, mut discount) = (s0, 0.0, 1.0);
    for t in 0..HORIZON {
        let a = match (t, a0) {
            (0, Some(a)) => a,
            _ => policy.sample(s, rng),
        };
        total += discount * mdp.reward(s, a);
        discount *= mdp.gamma();
        s = mdp.sample_next(s, a, rng);
    }
    total
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn expected_return_agrees_with_rollouts() {
    let mut rng = rng_from_seed(2024);
    let mdp = random_mdp(&mut rng, 4, 2, 0.9);
    let policy = random_policy(&mut rng, 4, 2);
    let exact = expected_return(&mdp, &policy).unwrap();
    let samples: Vec<f64> = (0..ROLLOUTS)
        .map(|_| {
            let s0 = mdp.sample_start(&mut rng);
            discounted_return(&mdp, &policy, s0, None, &mut rng)
        })
        .collect();
    let (mean, se) = mean_and_se(&samples);
    assert!((mean - exact).abs() <= 3.0 * se, "exact {exact} mc {mean} se {se}");
}

#[test]
fn q_agrees_with_rollouts() {
    let mut rng = rng_from_seed(77);
    let mdp = random_mdp(&mut rng, 3, 2, 0.8);
    let policy = random_policy(&mut rng, 3, 2);
    let q = q_exact(&mdp, &policy).unwrap();
    let (s, a) = (1, 0);
    let samples: Vec<f64> = (0..ROLLOUTS).map(|_| discounted_return(&mdp, &policy, s, Some(a), &mut rng)).collect();
    let (mean, se) = mean_and_se(&samples);
    let exact = q[s * 2 + a];
    assert!((mean - exact).abs() <= 3.0 * se, "exact {exact} mc {mean} se {se}");
}
