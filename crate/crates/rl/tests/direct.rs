use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use wgflow_core::{Activation, Jko, Mlp, Optimizer, OptimizerSpec, ScaleRule};
use wgflow_rl::direct::policy::{log_one_minus_tanh_sq, tanh_mlp};
use wgflow_rl::direct::tabular::{fit_soft_q, TabularFit, TabularMdp};
use wgflow_rl::direct::*;
use wgflow_rl::{EnvName, EnvSpec, Transition};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_box(k: usize) -> ActionBox {
    ActionBox::new(vec![-1.0; k], vec![1.0; k]).unwrap()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    num / den.max(1e-12)
}

/// Central differences of `f` over every parameter of `net`.
fn fd_params(net: &Mlp, mut f: impl FnMut(&Mlp) -> f64) -> Vec<f64> {
    let h = 1e-6;
    let mut probe = net.clone();
    let base = net.as_flat().to_vec();
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_flat(&p).unwrap();
            let up = f(&probe);
            p[i] = base[i] - h;
            probe.set_flat(&p).unwrap();
            let down = f(&probe);
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn transition(state: Vec<f64>, action: Vec<f64>, reward: f64, next: Vec<f64>, terminal: bool) -> Transition {
    Transition {
        state,
        action,
        reward,
        next_state: next,
        terminal,
        truncated: false,
    }
}

fn random_batch(n: usize, obs: usize, act: usize, r: &mut ChaCha8Rng) -> Vec<Transition> {
    (0..n)
        .map(|_| {
            let v = |k: usize, r: &mut ChaCha8Rng| (0..k).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            transition(v(obs, r), v(act, r), r.random_range(-1.0..1.0), v(obs, r), false)
        })
        .collect()
}

#[test]
fn q_loss_gradient_matches_finite_differences() {
    let mut r = rng(1);
    let q = tanh_mlp(5, &[7, 6], 1, &mut r).unwrap();
    let data = random_batch(6, 3, 2, &mut r);
    let batch: Vec<&Transition> = data.iter().collect();
    let targets: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
    let (_, grads) = jq_gradient(&q, &batch, &targets).unwrap();
    let fd = fd_params(&q, |p| jq_gradient(p, &batch, &targets).unwrap().0);
    assert!(rel_err(&grads, &fd) <= 1e-4, "{}", rel_err(&grads, &fd));
}

#[test]
fn q_action_gradient_matches_finite_differences() {
    let mut r = rng(2);
    let q = tanh_mlp(4, &[8, 8], 1, &mut r).unwrap();
    let s = [0.3, -0.2];
    let a = [0.1, 0.5];
    let (_, g) = q_action_gradient(&q, &s, &a).unwrap();
    let h = 1e-6;
    let fd: Vec<f64> = (0..2)
        .map(|j| {
            let mut up = a;
            let mut down = a;
            up[j] += h;
            down[j] -= h;
            (q_value(&q, &s, &up).unwrap() - q_value(&q, &s, &down).unwrap()) / (2.0 * h)
        })
        .collect();
    assert!(rel_err(&g, &fd) <= 1e-6);
}

#[test]
fn v_loss_gradient_matches_finite_differences() {
    let mut r = rng(3);
    let v = tanh_mlp(3, &[6, 5], 1, &mut r).unwrap();
    let q = tanh_mlp(5, &[6], 1, &mut r).unwrap();
    let pi = ExplicitPolicy::new(3, &[5], unit_box(2), &mut r).unwrap();
    let states: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let noises: Vec<_> = states.iter().map(|_| pi.draw_noise(3, &mut r)).collect();
    let (_, g) = jv_gradient(&v, &states, &q, &pi, &noises).unwrap();
    let fd = fd_params(&v, |p| jv_gradient(p, &states, &q, &pi, &noises).unwrap().0);
    assert!(rel_err(&g, &fd) <= 1e-4);
}

#[test]
fn sampling_network_gradient_matches_finite_differences() {
    let mut r = rng(4);
    let f = SamplingNetwork::new(
        3,
        2,
        &[6, 5],
        ActionBox::new(vec![-2.0, 0.0], vec![1.0, 3.0]).unwrap(),
        &mut r,
    )
    .unwrap();
    let s = [0.2, -0.4, 0.9];
    let noise = f.draw_noise(4, &mut r);
    let w: Vec<Vec<f64>> = (0..4)
        .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let (_, cache) = f.latents(&s, &noise).unwrap();
    let mut g = vec![0.0; f.net.len()];
    f.backward(&cache, &w, &mut g, 1.0).unwrap();
    let fd = fd_params(&f.net, |p| {
        let g = SamplingNetwork::from_net(p.clone(), f.bounds().clone(), 2).unwrap();
        let (a, _) = g.latents(&s, &noise).unwrap();
        a.iter().zip(&w).map(|(ai, wi)| ai[0] * wi[0] + ai[1] * wi[1]).sum()
    });
    assert!(rel_err(&g, &fd) <= 1e-4);
}

#[test]
fn explicit_policy_gradient_matches_finite_differences() {
    let mut r = rng(5);
    let pi = ExplicitPolicy::new(
        3,
        &[6, 5],
        ActionBox::new(vec![-1.0, -3.0], vec![1.0, 2.0]).unwrap(),
        &mut r,
    )
    .unwrap();
    let s = [0.5, 0.1, -0.3];
    let noise = pi.draw_noise(5, &mut r);
    let w: Vec<Vec<f64>> = (0..5)
        .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let (_, cache) = pi.latents(&s, &noise).unwrap();
    let mut g = vec![0.0; pi.net.len()];
    pi.backward(&cache, &w, &mut g, 0.5).unwrap();
    let fd = fd_params(&pi.net, |p| {
        let q = ExplicitPolicy::from_net(p.clone(), pi.bounds().clone()).unwrap();
        let (a, _) = q.latents(&s, &noise).unwrap();
        0.5 * a
            .iter()
            .zip(&w)
            .map(|(ai, wi)| ai[0] * wi[0] + ai[1] * wi[1])
            .sum::<f64>()
    });
    assert!(rel_err(&g, &fd) <= 1e-4);
}

#[test]
fn explicit_policy_density_is_normalised_and_consistent() {
    let mut r = rng(6);
    let pi = ExplicitPolicy::new(2, &[4], ActionBox::new(vec![-2.0], vec![2.0]).unwrap(), &mut r).unwrap();
    let s = [0.3, -0.7];
    for _ in 0..20 {
        let xi: Vec<f64> = vec![r.sample(StandardNormal)];
        let (a, logp) = pi.sample_with_log_prob(&s, &xi).unwrap();
        assert!((pi.log_prob(&s, &a).unwrap() - logp).abs() < 1e-8);
    }
    // midpoint rule over the open interval
    let n = 200_000;
    let width = 4.0 / n as f64;
    let mass: f64 = (0..n)
        .map(|i| {
            let a = -2.0 + (i as f64 + 0.5) * width;
            pi.log_prob(&s, &[a]).unwrap().exp() * width
        })
        .sum();
    assert!((mass - 1.0).abs() < 1e-3, "{mass}");
}

#[test]
fn log_one_minus_tanh_sq_is_stable() {
    for u in [-3.0, -0.5, 0.0, 0.2, 4.0] {
        let t: f64 = f64::tanh(u);
        assert!((log_one_minus_tanh_sq(u) - (1.0 - t * t).ln()).abs() < 1e-12);
    }
    let big = log_one_minus_tanh_sq(50.0);
    assert!(big.is_finite() && (big - (4.0f64.ln() - 100.0)).abs() < 1e-9);
}

#[test]
fn zero_noise_gives_identical_particles_within_bounds() {
    let mut r = rng(7);
    let bounds = ActionBox::new(vec![-0.5, 1.0], vec![0.5, 4.0]).unwrap();
    let mut f = SamplingNetwork::new(2, 3, &[8], bounds.clone(), &mut r).unwrap();
    let a = f.actions(&[0.1, 0.2], &vec![vec![0.0; 3]; 6]).unwrap();
    assert!(a.windows(2).all(|w| w[0] == w[1]));
    // huge weights still give in-box actions
    let big: Vec<f64> = f.net.as_flat().iter().map(|w| w * 1e3).collect();
    f.net.set_flat(&big).unwrap();
    let (a, _) = f.policy_particles(&[3.0, -2.0], 50, &mut r).unwrap();
    assert!(a.iter().all(|x| bounds.contains(x)));
    let draw = |seed| f.policy_particles(&[0.1, 0.2], 4, &mut rng(seed)).unwrap().0;
    assert_eq!(draw(9), draw(9));
    assert!(f.policy_particles(&[0.1, 0.2], 0, &mut r).is_err());
}

fn constant_q(c: f64, obs: usize, act: usize) -> Mlp {
    let mut q = Mlp::zeros(&[obs + act, 4, 1], &[Activation::Tanh, Activation::Identity]).unwrap();
    q.layer_mut(1).1[0] = c;
    q
}

#[test]
fn soft_value_of_constant_q_is_exact() {
    let bounds = ActionBox::new(vec![-1.0, -3.0], vec![2.0, 3.0]).unwrap();
    for n in [1, 7, 64] {
        let v = soft_v_estimate(&constant_q(-2.5, 2, 2), &[0.1, 0.4], &bounds, n, &mut rng(1)).unwrap();
        assert!((v + 2.5).abs() < 1e-12);
    }
    assert!(soft_v_estimate(&constant_q(0.0, 2, 2), &[0.0, 0.0], &bounds, 0, &mut rng(1)).is_err());
}

#[test]
fn soft_value_is_shift_equivariant() {
    let mut r = rng(8);
    let q = tanh_mlp(3, &[6], 1, &mut r).unwrap();
    let mut shifted = q.clone();
    let delta = 3.75;
    shifted.layer_mut(1).1[0] += delta;
    let bounds = unit_box(1);
    let a = soft_v_estimate(&q, &[0.2, 0.3], &bounds, 50, &mut rng(3)).unwrap();
    let b = soft_v_estimate(&shifted, &[0.2, 0.3], &bounds, 50, &mut rng(3)).unwrap();
    assert!((b - a - delta).abs() < 1e-10);
}

#[test]
fn soft_value_of_quadratic_matches_gaussian_integral() {
    // Q(a) = -a^2/2 on [-L, L]: log mean exp Q -> log(sqrt(2 pi) erf(L / sqrt 2)) - log(2L)
    let l = 10.0;
    let bounds = ActionBox::new(vec![-l], vec![l]).unwrap();
    let est = soft_v_estimate_with(&mut |a: &[f64]| Ok(-0.5 * a[0] * a[0]), &bounds, 100_000, &mut rng(4)).unwrap();
    let exact = (2.0 * std::f64::consts::PI).sqrt().ln() - (2.0 * l).ln();
    assert!(((est - exact) / exact).abs() < 0.02, "{est} vs {exact}");
}

#[test]
fn discrete_soft_value_is_softmax_expectation() {
    let q = [1.0, -0.5, 2.0];
    let z: f64 = q.iter().map(|v: &f64| v.exp()).sum();
    let expect: f64 = q.iter().map(|v| v.exp() / z * v).sum();
    assert!((discrete_soft_value(&q).unwrap() - expect).abs() < 1e-12);
    assert!((discrete_soft_value(&[4.0; 5]).unwrap() - 4.0).abs() < 1e-12);
    assert!(discrete_soft_value(&[]).is_err());
}

#[test]
fn q_target_masks_terminal_and_scales_rewards() {
    let data = vec![
        transition(vec![0.0], vec![0.0], 2.0, vec![1.0], true),
        transition(vec![0.0], vec![0.0], 2.0, vec![1.0], false),
        Transition {
            truncated: true,
            ..transition(vec![0.0], vec![0.0], -1.0, vec![3.0], false)
        },
    ];
    let batch: Vec<&Transition> = data.iter().collect();
    let mut v = |s: &[f64]| Ok(10.0 * s[0]);
    let y = q_target(&batch, &mut v, 0.5, 3.0).unwrap();
    assert_eq!(y, vec![6.0, 6.0 + 5.0, -3.0 + 15.0]);
    let y0 = q_target(&batch, &mut v, 0.0, 3.0).unwrap();
    assert_eq!(y0, vec![6.0, 6.0, -3.0]);
    assert!(q_target(&[], &mut v, 0.5, 1.0).is_err());
}

#[test]
fn q_step_closed_forms() {
    let mut r = rng(9);
    let q = tanh_mlp(3, &[5], 1, &mut r).unwrap();
    let data = random_batch(4, 2, 1, &mut r);
    let batch: Vec<&Transition> = data.iter().collect();
    let exact: Vec<f64> = data.iter().map(|t| q_value(&q, &t.state, &t.action).unwrap()).collect();
    let (loss, g) = jq_gradient(&q, &batch, &exact).unwrap();
    assert_eq!(loss, 0.0);
    assert!(g.iter().all(|v| *v == 0.0));

    // linear Q on one sample: gradient (Q - y) * [x, 1]
    let lin = Mlp::glorot(&[3, 1], &[Activation::Identity], &mut r).unwrap();
    let t = &data[0];
    let x: Vec<f64> = t.state.iter().chain(&t.action).copied().collect();
    let qv = q_value(&lin, &t.state, &t.action).unwrap();
    let (_, g) = jq_gradient(&lin, &[t], &[0.7]).unwrap();
    let expect: Vec<f64> = x.iter().map(|xi| (qv - 0.7) * xi).chain([qv - 0.7]).collect();
    assert!(rel_err(&g, &expect) < 1e-12);
}

#[test]
fn q_loss_decreases_on_a_frozen_batch() {
    let mut r = rng(10);
    let mut q = Learner::new(tanh_mlp(3, &[16], 1, &mut r).unwrap(), OptimizerSpec::adam(1e-3));
    let data = random_batch(16, 2, 1, &mut r);
    let batch: Vec<&Transition> = data.iter().collect();
    let y: Vec<f64> = (0..16).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut losses = Vec::new();
    for _ in 0..11 {
        losses.push(jq_step(&mut q, &batch, &y).unwrap());
    }
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
}

#[test]
fn v_at_inner_estimate_has_zero_loss() {
    let mut r = rng(11);
    let q = tanh_mlp(3, &[4], 1, &mut r).unwrap();
    let pi = ExplicitPolicy::new(2, &[4], unit_box(1), &mut r).unwrap();
    let s = vec![0.3, 0.6];
    let noise = vec![pi.draw_noise(3, &mut r)];
    let inner: f64 = noise[0]
        .iter()
        .map(|xi| {
            let (a, lp) = pi.sample_with_log_prob(&s, xi).unwrap();
            q_value(&q, &s, &a).unwrap() - lp
        })
        .sum::<f64>()
        / 3.0;
    let mut v = Mlp::zeros(&[2, 1], &[Activation::Identity]).unwrap();
    v.layer_mut(0).1[0] = inner;
    let (loss, g) = jv_gradient(&v, &[s], &q, &pi, &noise).unwrap();
    assert!(loss < 1e-24);
    assert!(g.iter().all(|x| x.abs() < 1e-12));
}

#[test]
fn v_of_constant_q_is_c_plus_entropy() {
    let c = 1.3;
    let mut r = rng(12);
    let mut pi = ExplicitPolicy::new(1, &[3], unit_box(1), &mut r).unwrap();
    // pin the pre-squash Gaussian to N(0.4, 0.8^2) through the output biases
    let mut flat = vec![0.0; pi.net.len()];
    let n = flat.len();
    flat[n - 2] = 0.4;
    flat[n - 1] = 0.8f64.ln();
    pi.net.set_flat(&flat).unwrap();
    let q = constant_q(c, 1, 1);
    // V with only a bias: one SGD step at rate 1/2 lands exactly on the inner estimate
    let mut v = Learner::new(
        Mlp::zeros(&[1, 1], &[Activation::Identity]).unwrap(),
        OptimizerSpec::sgd(0.5),
    );
    jv_step(&mut v, &[vec![0.0]], &q, &pi, 20_000, &mut r).unwrap();
    let learned = v.net.predict(&[0.0]).unwrap()[0];

    // independent entropy estimate of the squashed Gaussian
    let mut r2 = rng(99);
    let m = 100_000;
    let samples: Vec<f64> = (0..m)
        .map(|_| {
            let z: f64 = r2.sample(StandardNormal);
            let u = 0.4 + 0.8 * z;
            let log_gauss = -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.8f64.ln();
            -(log_gauss - (1.0 - u.tanh().powi(2)).ln())
        })
        .collect();
    let mean = samples.iter().sum::<f64>() / m as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let se = (var / m as f64 + var / 20_000.0).sqrt();
    assert!(
        (learned - (c + mean)).abs() < 3.0 * se,
        "{learned} vs {} (se {se})",
        c + mean
    );
}

/// `a = xi + b`, with `b` the bias of a one-layer network fed a constant input.
#[derive(Clone)]
struct Shift {
    net: Mlp,
}

impl ActionSampler for Shift {
    type Cache = usize;

    fn net(&self) -> &Mlp {
        &self.net
    }
    fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }
    fn noise_dim(&self) -> usize {
        self.net.output_dim()
    }
    fn action_dim(&self) -> usize {
        self.net.output_dim()
    }
    fn squash(&self) -> Option<&ActionBox> {
        None
    }
    fn latents(&self, _: &[f64], noises: &[Vec<f64>]) -> wgflow_rl::Result<(Vec<Vec<f64>>, usize)> {
        let b = self.net.biases(0);
        Ok((
            noises
                .iter()
                .map(|xi| xi.iter().zip(b).map(|(x, b)| x + b).collect())
                .collect(),
            noises.len(),
        ))
    }
    fn backward(&self, _: &usize, g: &[Vec<f64>], grads: &mut [f64], scale: f64) -> wgflow_rl::Result<()> {
        let k = self.action_dim();
        let off = grads.len() - k;
        for gi in g {
            for j in 0..k {
                grads[off + j] += scale * gi[j];
            }
        }
        Ok(())
    }
}

#[test]
fn shift_sampler_bias_gradient_is_mean_particle_gradient() {
    let mut r = rng(13);
    let mut net = Mlp::zeros(&[1, 2], &[Activation::Identity]).unwrap();
    net.layer_mut(0).1.copy_from_slice(&[0.2, -0.1]);
    let policy = Shift { net };
    let mut snap = policy.clone();
    snap.net.layer_mut(0).1.copy_from_slice(&[0.5, 0.3]);
    let q = tanh_mlp(4, &[6], 1, &mut r).unwrap();
    let states = vec![vec![0.1, 0.2], vec![-0.4, 0.7], vec![0.0, 0.3]];
    let cur: Vec<_> = states.iter().map(|_| policy.draw_noise(5, &mut r)).collect();
    let prev: Vec<_> = states.iter().map(|_| policy.draw_noise(5, &mut r)).collect();
    let jko = Jko::new(OptimizerSpec::adam(1e-3));
    let (g, _) = policy_wgf_gradient_with_noise(&policy, &snap, &q, &states, &cur, &prev, &jko, 1).unwrap();
    let mut expect = [0.0; 2];
    for s in 0..3 {
        let a = policy.actions(&states[s], &cur[s]).unwrap();
        let b = snap.actions(&states[s], &prev[s]).unwrap();
        let (pg, _) = particle_latent_gradients(&q, &states[s], &a, &b, None, &jko).unwrap();
        for gi in &pg {
            for j in 0..2 {
                expect[j] += gi[j] / 15.0;
            }
        }
    }
    assert!(g[..2].iter().all(|w| *w == 0.0));
    assert!(rel_err(&g[2..], &expect) < 1e-12);
}

#[test]
fn single_unsquashed_particle_without_transport_is_q_ascent() {
    let mut r = rng(14);
    let policy = Shift {
        net: Mlp::zeros(&[1, 2], &[Activation::Identity]).unwrap(),
    };
    let q = tanh_mlp(4, &[6], 1, &mut r).unwrap();
    let s = vec![0.3, -0.1];
    let noise = vec![policy.draw_noise(1, &mut r)];
    let jko = Jko::new(OptimizerSpec::adam(1e-3)).with_w2_scale(0.0);
    let (g, _) = policy_wgf_gradient_with_noise(&policy, &policy, &q, &[s.clone()], &noise, &noise, &jko, 1).unwrap();
    let (_, dq) = q_action_gradient(&q, &s, &noise[0][0]).unwrap();
    assert!(rel_err(&g[2..], &[-dq[0], -dq[1]]) < 1e-12);
}

#[test]
fn single_squashed_particle_ascends_q_plus_log_jacobian() {
    let mut r = rng(14);
    let bounds = ActionBox::new(vec![-1.0, 0.0], vec![1.0, 4.0]).unwrap();
    let f = SamplingNetwork::new(2, 2, &[6], bounds.clone(), &mut r).unwrap();
    let q = tanh_mlp(4, &[6], 1, &mut r).unwrap();
    let s = vec![0.3, -0.1];
    let noise = vec![f.draw_noise(1, &mut r)];
    let prev = vec![f.draw_noise(1, &mut r)];
    let jko = Jko::new(OptimizerSpec::adam(1e-3)).with_w2_scale(0.0);
    let (g, _) = policy_wgf_gradient_with_noise(&f, &f, &q, &[s.clone()], &noise, &prev, &jko, 1).unwrap();
    let fd = fd_params(&f.net, |p| {
        let h = SamplingNetwork::from_net(p.clone(), bounds.clone(), 2).unwrap();
        let (u, _) = h.latents(&s, &noise[0]).unwrap();
        let log_jac: f64 = (0..2)
            .map(|j| bounds.half_width(j).ln() + log_one_minus_tanh_sq(u[0][j]))
            .sum();
        -(q_value(&q, &s, &bounds.squash(&u[0])).unwrap() + log_jac)
    });
    assert!(rel_err(&g, &fd) <= 1e-4);
}

#[test]
fn latent_scores_match_finite_differences() {
    let mut r = rng(19);
    let bounds = ActionBox::new(vec![-2.0, -1.0], vec![1.0, 1.0]).unwrap();
    let q = tanh_mlp(5, &[7], 1, &mut r).unwrap();
    let s = [0.2, -0.3, 0.5];
    let u = vec![vec![0.4, -1.3], vec![-2.0, 0.1]];
    let (scores, _) = latent_scores(&q, &s, &u, Some(&bounds)).unwrap();
    let density = |v: &[f64]| {
        q_value(&q, &s, &bounds.squash(v)).unwrap() + v.iter().map(|x| log_one_minus_tanh_sq(*x)).sum::<f64>()
    };
    let h = 1e-6;
    for (ui, si) in u.iter().zip(&scores) {
        let fd: Vec<f64> = (0..2)
            .map(|j| {
                let (mut up, mut down) = (ui.clone(), ui.clone());
                up[j] += h;
                down[j] -= h;
                (density(&up) - density(&down)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(si, &fd) < 1e-6);
    }
}

#[test]
fn policy_gradient_matches_frozen_surrogate() {
    let mut r = rng(15);
    let pi = ExplicitPolicy::new(2, &[6], unit_box(2), &mut r).unwrap();
    let mut snap = pi.clone();
    let shifted: Vec<f64> = snap.net.as_flat().iter().map(|w| w + 0.05).collect();
    snap.net.set_flat(&shifted).unwrap();
    let q = tanh_mlp(4, &[8], 1, &mut r).unwrap();
    let states = vec![vec![0.2, 0.1], vec![-0.6, 0.4]];
    let cur: Vec<_> = states.iter().map(|_| pi.draw_noise(6, &mut r)).collect();
    let prev: Vec<_> = states.iter().map(|_| pi.draw_noise(6, &mut r)).collect();
    let jko = Jko::new(OptimizerSpec::adam(1e-3));
    let (g, _) = policy_wgf_gradient_with_noise(&pi, &snap, &q, &states, &cur, &prev, &jko, 1).unwrap();
    // particle gradients frozen at the current parameters
    let frozen: Vec<Vec<Vec<f64>>> = (0..2)
        .map(|s| {
            let (a, _) = pi.latents(&states[s], &cur[s]).unwrap();
            let (b, _) = snap.latents(&states[s], &prev[s]).unwrap();
            particle_latent_gradients(&q, &states[s], &a, &b, pi.squash(), &jko)
                .unwrap()
                .0
        })
        .collect();
    let fd = fd_params(&pi.net, |p| {
        let h = ExplicitPolicy::from_net(p.clone(), pi.bounds().clone()).unwrap();
        let mut total = 0.0;
        for s in 0..2 {
            let (a, _) = h.latents(&states[s], &cur[s]).unwrap();
            for (ai, gi) in a.iter().zip(&frozen[s]) {
                total += (ai[0] * gi[0] + ai[1] * gi[1]) / 12.0;
            }
        }
        total
    });
    assert!(rel_err(&g, &fd) <= 1e-3);
}

#[test]
fn thread_count_does_not_change_the_gradient() {
    let mut r = rng(16);
    let pi = ExplicitPolicy::new(2, &[6], unit_box(2), &mut r).unwrap();
    let q = tanh_mlp(4, &[8], 1, &mut r).unwrap();
    let states: Vec<Vec<f64>> = (0..7)
        .map(|_| vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
        .collect();
    let jko = Jko::new(OptimizerSpec::adam(1e-3));
    let run = |threads| policy_wgf_gradient(&pi, &pi, &q, &states, 5, &jko, &mut rng(3), threads).unwrap();
    assert_eq!(run(1), run(3));
    assert_eq!(run(1), run(16));
}

#[test]
fn zero_q_field_does_not_collapse_particles() {
    let mut r = rng(17);
    let mut pi = ExplicitPolicy::new(2, &[8], unit_box(2), &mut r).unwrap();
    let mut opt = Optimizer::new(OptimizerSpec::adam(1e-2), pi.net.len());
    let q = Mlp::zeros(&[4, 4, 1], &[Activation::Tanh, Activation::Identity]).unwrap();
    let s = vec![vec![0.5, -0.5]];
    let mut jko = Jko::new(OptimizerSpec::adam(1e-2));
    jko.lambda = ScaleRule::Median;
    let mut snap = pi.clone();
    for _ in 0..100 {
        let before = pi.clone();
        policy_wgf_step(&mut pi, &mut opt, &snap, &q, &s, 16, &jko, &mut r).unwrap();
        snap = before;
    }
    let a = pi.actions(&s[0], &pi.draw_noise(16, &mut rng(5))).unwrap();
    let mut min = f64::INFINITY;
    for i in 0..a.len() {
        for j in 0..i {
            min = min.min(((a[i][0] - a[j][0]).powi(2) + (a[i][1] - a[j][1]).powi(2)).sqrt());
        }
    }
    assert!(min > 1e-3, "{min}");
}

#[test]
fn polyak_update_rules() {
    let mut r = rng(18);
    let live = tanh_mlp(2, &[3], 1, &mut r).unwrap();
    let mut target = tanh_mlp(2, &[3], 1, &mut r).unwrap();
    let gap0: Vec<f64> = target
        .as_flat()
        .iter()
        .zip(live.as_flat())
        .map(|(t, l)| t - l)
        .collect();
    for _ in 0..20 {
        polyak_update(&live, &mut target, 0.1).unwrap();
    }
    for ((t, l), g0) in target.as_flat().iter().zip(live.as_flat()).zip(&gap0) {
        assert!((t - l - 0.9f64.powi(20) * g0).abs() < 1e-12);
    }
    polyak_update(&live, &mut target, 1.0).unwrap();
    assert_eq!(target.as_flat(), live.as_flat());
    assert!(polyak_update(&live, &mut target, 0.0).is_err());
    assert!(polyak_update(&live, &mut target, 1.5).is_err());
    let other = tanh_mlp(2, &[4], 1, &mut r).unwrap();
    assert!(polyak_update(&other, &mut target, 0.5).is_err());

    let mut a = Mlp::zeros(&[1, 1], &[Activation::Identity]).unwrap();
    let mut b = a.clone();
    a.set_flat(&[2.0, 0.0]).unwrap();
    b.set_flat(&[0.0, 0.0]).unwrap();
    polyak_update(&a, &mut b, 0.5).unwrap();
    assert_eq!(b.as_flat(), &[1.0, 0.0]);
}

fn small_cfg(variant: DirectVariant) -> DirectConfig {
    let mut cfg = DirectConfig::for_env(variant, EnvName::MultiGoal);
    cfg.hidden = vec![8, 8];
    cfg.particles = 4;
    cfg.batch_size = 8;
    cfg.epoch_steps = 20;
    cfg.eval_episodes = 2;
    cfg.value_samples = 4;
    cfg.value_actions = 2;
    cfg
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let spec = EnvSpec::new(EnvName::MultiGoal);
    for variant in [DirectVariant::DpWgf, DirectVariant::DpWgfV] {
        let mut cfg = small_cfg(variant);
        cfg.learning_rate = 0.0;
        let mut agent = DirectAgent::new(&spec, cfg, 3).unwrap();
        let before = (
            agent.q_net().clone(),
            agent.policy_net().clone(),
            agent.v_nets().map(|(v, _)| v.clone()),
        );
        let stats = agent.run_epoch().unwrap();
        assert!(stats.updates > 0 && stats.eval.returns.len() == 2);
        assert_eq!(agent.q_net().as_flat(), before.0.as_flat());
        assert_eq!(agent.q_target_net().as_flat(), before.0.as_flat());
        assert_eq!(agent.policy_net().as_flat(), before.1.as_flat());
        assert_eq!(agent.snapshot_net().as_flat(), before.1.as_flat());
        if let Some((v, v_bar)) = agent.v_nets() {
            assert_eq!(v.as_flat(), before.2.as_ref().unwrap().as_flat());
            assert_eq!(v_bar.as_flat(), v.as_flat());
        }
    }
}

#[test]
fn updates_wait_for_a_full_batch() {
    let spec = EnvSpec::new(EnvName::MultiGoal);
    let mut cfg = small_cfg(DirectVariant::DpWgfV);
    cfg.batch_size = 50;
    cfg.epoch_steps = 49;
    let mut agent = DirectAgent::new(&spec, cfg, 1).unwrap();
    let stats = agent.run_epoch().unwrap();
    assert_eq!((stats.env_steps, stats.updates), (49, 0));
    assert_eq!(agent.replay().len(), 49);
    let stats = agent.run_epoch().unwrap();
    assert_eq!((stats.env_steps, stats.updates), (98, 49));
}

#[test]
fn last_iterate_snapshot_holds_the_pre_update_policy() {
    let spec = EnvSpec::new(EnvName::CartPole);
    let mut cfg = small_cfg(DirectVariant::DpWgf);
    cfg.snapshot = SnapshotStrategy::LastIterate;
    cfg.epoch_steps = cfg.batch_size - 1;
    let mut agent = DirectAgent::new(&spec, cfg.clone(), 2).unwrap();
    agent.run_epoch().unwrap();
    let before = agent.policy_net().clone();
    let mut one = cfg;
    one.epoch_steps = 1;
    // run the single update through a fresh epoch of length one
    let mut agent2 = DirectAgent::new(&spec, one.clone(), 2).unwrap();
    for _ in 0..one.batch_size - 1 {
        agent2.run_epoch().unwrap();
    }
    assert_eq!(agent2.policy_net(), &before);
    agent2.run_epoch().unwrap();
    assert_eq!(agent2.updates(), 1);
    assert_eq!(agent2.snapshot_net().as_flat(), before.as_flat());
    assert_ne!(agent2.policy_net().as_flat(), before.as_flat());
}

#[test]
fn seeded_runs_repeat_and_ignore_thread_count() {
    let spec = EnvSpec::new(EnvName::MultiGoal);
    let run = |threads| {
        let mut cfg = small_cfg(DirectVariant::DpWgfV);
        cfg.threads = threads;
        let mut agent = DirectAgent::new(&spec, cfg, 7).unwrap();
        let stats: Vec<_> = (0..3).map(|_| agent.run_epoch().unwrap()).collect();
        (format!("{stats:?}"), agent.policy_net().clone(), agent.q_net().clone())
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(4));
}

#[test]
fn evaluation_counts_goals() {
    let spec = EnvSpec::new(EnvName::MultiGoal);
    let agent = DirectAgent::new(&spec, small_cfg(DirectVariant::DpWgfV), 0).unwrap();
    let ev = agent.evaluate(12, "probe").unwrap();
    assert_eq!(ev.returns.len(), 12);
    assert_eq!(ev.goal_counts.len(), 4);
    assert!(ev.goal_counts.iter().sum::<usize>() <= 12);
    assert_eq!(ev, agent.evaluate(12, "probe").unwrap());
    let cp = DirectAgent::new(
        &EnvSpec::new(EnvName::CartPole).with_horizon(20),
        small_cfg(DirectVariant::DpWgf),
        0,
    )
    .unwrap();
    assert!(cp.evaluate(2, "probe").unwrap().goal_counts.is_empty());
}

#[test]
fn config_parsing_and_validation() {
    assert_eq!("dp-wgf-v".parse::<DirectVariant>().unwrap(), DirectVariant::DpWgfV);
    assert_eq!(
        DirectVariant::DpWgf.to_string().parse::<DirectVariant>().unwrap(),
        DirectVariant::DpWgf
    );
    assert_eq!(
        "last".parse::<SnapshotStrategy>().unwrap(),
        SnapshotStrategy::LastIterate
    );
    assert!("sac".parse::<DirectVariant>().is_err());
    let spec = EnvSpec::new(EnvName::MultiGoal);
    for broken in [
        DirectConfig {
            tau: 0.0,
            ..small_cfg(DirectVariant::DpWgf)
        },
        DirectConfig {
            particles: 0,
            ..small_cfg(DirectVariant::DpWgf)
        },
        DirectConfig {
            w2_scale: -1.0,
            ..small_cfg(DirectVariant::DpWgf)
        },
        DirectConfig {
            hidden: vec![],
            ..small_cfg(DirectVariant::DpWgf)
        },
    ] {
        assert!(DirectAgent::new(&spec, broken, 0).is_err());
    }
    let d = DirectConfig::new(DirectVariant::DpWgfV);
    assert_eq!(
        (d.particles, d.batch_size, d.hidden.clone(), d.tau, d.w2_scale),
        (32, 64, vec![128, 128], 0.01, 0.4)
    );
}

fn soft_value_iteration(mdp: &TabularMdp) -> Vec<Vec<f64>> {
    let mut q = vec![vec![0.0; mdp.actions()]; mdp.states()];
    for _ in 0..5000 {
        let value: Vec<f64> = q
            .iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
                let lse = m + z.ln();
                let entropy: f64 = row
                    .iter()
                    .map(|x| {
                        let p = (x - lse).exp();
                        -p * p.ln()
                    })
                    .sum();
                lse - entropy
            })
            .collect();
        q = (0..mdp.states())
            .map(|s| {
                (0..mdp.actions())
                    .map(|a| mdp.reward[s][a] + mdp.gamma * value[mdp.next[s][a]])
                    .collect()
            })
            .collect();
    }
    q
}

#[test]
fn tabular_fit_reaches_soft_bellman_fixed_point() {
    let mdp = TabularMdp {
        reward: vec![vec![1.0, 0.0], vec![0.0, 0.5]],
        next: vec![vec![0, 1], vec![0, 1]],
        gamma: 0.9,
    };
    let oracle = soft_value_iteration(&mdp);
    let fitted = fit_soft_q(&mdp, &TabularFit::default(), &mut rng(6)).unwrap();
    let sup = oracle
        .iter()
        .flatten()
        .zip(fitted.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(sup <= 0.05, "sup-norm {sup}, oracle {oracle:?}, fitted {fitted:?}");
}

#[test]
fn tabular_mdp_rejects_bad_shapes() {
    let bad = TabularMdp {
        reward: vec![vec![0.0, 0.0]],
        next: vec![vec![0, 1]],
        gamma: 0.9,
    };
    assert!(bad.validate().is_err());
}
