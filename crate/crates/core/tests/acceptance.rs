//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line with the
//! measured quantities, and the process exits non-zero if any criterion fails.
//!
//! Runs as a plain binary (`harness = false`) so the report is always shown.

use std::process::ExitCode;
use std::time::Instant;

use cfur::data::LabeledDataset;
use cfur::distributions::{
    map_accuracy_closed_form, sample_labeled, simulate_map_accuracy, AffineMechanism, GaussianMixtureSpec,
};
use cfur::dp::{gaussian_epsilon, laplace_epsilon, TABLE_DELTA, TABLE_DIMENSION, TABLE_DISTORTIONS};
use cfur::experiment::{fair_sweep, gmm_sweep, point_rng, sample_rngs, train_representation, FairSweepConfig, GmmSweep, GmmSweepConfig};
use cfur::losses::{
    alpha_loss, arimoto_conditional_entropy, arimoto_entropy, expected_alpha_loss, min_expected_alpha_loss,
    optimal_decision_rule, AlphaParam, JointPmf,
};
use cfur::metrics::{demographic_parity_gap, equalized_odds_gap, fairness_report, train_and_eval_downstream, adversary_accuracy};
use cfur::mi::{knn_entropy, mi_with_discrete_label, SampleCloud, DEFAULT_NEIGHBORS};
use cfur::nn::{Activation, FitConfig, Head, MlpModel, MlpSpec};
use cfur::theory::{kkt_residuals, objective, solve_water_filling};
use cfur::trainer::{
    constraint_registry, encoder_objective, DistortionEstimate, DistortionMeasure, DistortionNorm, EncoderModel,
    PenaltySchedule, TrainConfig, FEASIBILITY_FACTOR,
};
use cfur::{Matrix, RngState};

struct Suite {
    failed: Vec<u32>,
}

impl Suite {
    fn record(&mut self, id: u32, title: &str, pass: bool, detail: String) {
        println!("[{}] criterion {id} ({title}): {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(id);
        }
    }
}

fn uniform_in(rng: &mut RngState, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform()
}

/// Flat Dirichlet draw.
fn random_pmf(rng: &mut RngState, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.uniform()).ln() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| v / total).collect()
}

// ---------------------------------------------------------------- 1 and 7

fn run_gmm_sweeps() -> (Vec<GmmSweep>, f64) {
    let start = Instant::now();
    let sweeps = [0.5, 0.75]
        .iter()
        .map(|&q| gmm_sweep(&GmmSweepConfig { q, ..Default::default() }).expect("gmm sweep"))
        .collect();
    (sweeps, start.elapsed().as_secs_f64())
}

fn criterion_1(suite: &mut Suite, sweeps: &[GmmSweep], seconds: f64) {
    const GAP_TOLERANCE: f64 = 0.015;
    const PRIOR_TOLERANCE: f64 = 0.010;
    // ties at the prior are allowed to differ by rounding
    const MONOTONE_SLACK: f64 = 1e-9;
    let mut pass = true;
    let mut parts = Vec::new();
    for sweep in sweeps {
        let rows = sweep.curve.rows();
        let acc: Vec<f64> = rows.iter().map(|r| r.map_oracle_accuracy.unwrap()).collect();
        let gap = rows
            .iter()
            .map(|r| (r.map_oracle_accuracy.unwrap() - r.theory_accuracy.unwrap()).abs())
            .fold(0.0, f64::max);
        let monotone = acc.windows(2).all(|w| w[1] <= w[0] + MONOTONE_SLACK);
        let prior = sweep.spec.prior_accuracy();
        let tail = (acc.last().unwrap() - prior).abs();
        pass &= rows.len() >= 6 && gap <= GAP_TOLERANCE && monotone && tail <= PRIOR_TOLERANCE;
        let curve: Vec<String> = rows.iter().map(|r| format!("D={}:{:.4}", r.d, r.map_oracle_accuracy.unwrap())).collect();
        parts.push(format!(
            "q={} points={} max gap={:.2}pp non-increasing={monotone} |acc(Dmax)-prior|={:.2}pp [{}]",
            sweep.spec.q,
            rows.len(),
            100.0 * gap,
            100.0 * tail,
            curve.join(" ")
        ));
    }
    parts.push(format!("runtime {seconds:.0}s"));
    suite.record(1, "learned mechanism vs optimal frontier", pass, parts.join("; "));
}

// ---------------------------------------------------------------- 2

/// Exact minimum of the objective over allocations `σ_p,i² = D·k_i/K` with
/// `Σ k_i = K`, by dynamic programming (the objective is separable).
fn grid_minimum(spec: &GaussianMixtureSpec, budget: f64, units: usize) -> f64 {
    let step = budget / units as f64;
    let term = |i: usize, k: usize| spec.mu[i] * spec.mu[i] / (spec.sigma_sq[i] + step * k as f64);
    let mut best: Vec<f64> = (0..=units).map(|k| term(0, k)).collect();
    for i in 1..spec.dim() {
        let mut next = vec![f64::INFINITY; units + 1];
        for total in 0..=units {
            for k in 0..=total {
                let v = best[total - k] + term(i, k);
                if v < next[total] {
                    next[total] = v;
                }
            }
        }
        best = next;
    }
    best[units]
}

fn criterion_2(suite: &mut Suite) {
    const KKT_TOLERANCE: f64 = 1e-8;
    let mut rng = RngState::new(2);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_kkt = 0.0f64;
    let mut pass = true;
    for _ in 0..200 {
        let mu: Vec<f64> = (0..4).map(|_| uniform_in(&mut rng, -2.0, 2.0)).collect();
        let var: Vec<f64> = (0..4).map(|_| uniform_in(&mut rng, 0.1, 2.0)).collect();
        let spec = GaussianMixtureSpec::new(uniform_in(&mut rng, 0.1, 0.9), mu, var).unwrap();
        let budget = uniform_in(&mut rng, 0.01, 10.0);
        let opt = solve_water_filling(&spec, budget).unwrap();
        let wf = objective(&spec, &opt.mech.sigma_p_sq);
        let grid = grid_minimum(&spec, budget, 1000);
        let excess = wf - grid;
        worst_excess = worst_excess.max(excess);
        let kkt = kkt_residuals(&spec, &opt).iter().fold(0.0f64, |m, r| m.max(r.abs()));
        worst_kkt = worst_kkt.max(kkt);
        pass &= excess <= 1e-12 * grid.abs().max(1.0) && kkt < KKT_TOLERANCE;
    }
    suite.record(
        2,
        "water-filling vs simplex grid",
        pass,
        format!("200 instances; max(objective - grid best)={worst_excess:.3e}; max KKT residual={worst_kkt:.3e}"),
    );
}

// ---------------------------------------------------------------- 3

fn criterion_3(suite: &mut Suite) {
    const TOLERANCE: f64 = 0.002;
    let mut rng = RngState::new(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = 1 + rng.below(4);
        let mu: Vec<f64> = (0..m).map(|_| uniform_in(&mut rng, -1.0, 1.0)).collect();
        let var: Vec<f64> = (0..m).map(|_| uniform_in(&mut rng, 0.2, 2.0)).collect();
        let spec = GaussianMixtureSpec::new(uniform_in(&mut rng, 0.2, 0.8), mu, var).unwrap();
        let beta: Vec<f64> = (0..m).map(|_| uniform_in(&mut rng, -0.5, 0.5)).collect();
        let noise: Vec<f64> = (0..m).map(|_| uniform_in(&mut rng, 0.0, 1.0)).collect();
        let mech = AffineMechanism::new(beta, noise).unwrap();
        let closed = map_accuracy_closed_form(&spec, &mech).unwrap();
        let mc = simulate_map_accuracy(&spec, &mech, 1_000_000, &mut rng).unwrap();
        worst = worst.max((closed - mc).abs());
    }
    suite.record(
        3,
        "closed-form MAP accuracy vs Monte Carlo",
        worst <= TOLERANCE,
        format!("50 instances at 1e6 samples; max |closed - empirical|={worst:.5} (tolerance {TOLERANCE})"),
    );
}

// ---------------------------------------------------------------- 4

fn criterion_4(suite: &mut Suite) {
    const TABLE_LAPLACE: [f64; 7] = [5792.61, 4096.0, 3344.36, 2896.31, 2590.53, 579.26, 183.17];
    const TABLE_GAUSSIAN: [f64; 7] = [1918.24, 1354.08, 1107.57, 959.18, 857.76, 191.82, 60.66];
    const TOLERANCE: f64 = 0.01 + 1e-9;
    let mut pass = true;
    let mut misses = Vec::new();
    let mut cells = Vec::new();
    for (i, &d) in TABLE_DISTORTIONS.iter().enumerate() {
        let lap = laplace_epsilon(TABLE_DIMENSION, d).unwrap();
        let gau = gaussian_epsilon(TABLE_DIMENSION, d, TABLE_DELTA).unwrap();
        for (name, value, expected) in [("laplace", lap, TABLE_LAPLACE[i]), ("gaussian", gau, TABLE_GAUSSIAN[i])] {
            cells.push(format!("{name}(D={d})={value:.2}"));
            if (value - expected).abs() > TOLERANCE {
                pass = false;
                misses.push(format!("{name} D={d}: computed {value:.2}, table {expected:.2}"));
            }
        }
    }
    let detail = if misses.is_empty() {
        format!("all 14 entries within 0.01 [{}]", cells.join(" "))
    } else {
        format!("{} of 14 entries off by more than 0.01: {}", misses.len(), misses.join("; "))
    };
    suite.record(4, "local DP epsilon table", pass, detail);
}

// ---------------------------------------------------------------- 5

/// Minimum over a simplex grid of `Σ_s w_s ℓ_α(p̂_s)` for one column `w`.
/// The three-symbol grid is refined around its best point a few times, which
/// is safe because the α-loss is convex in `p̂`.
fn column_grid_minimum(weights: &[f64], alpha: AlphaParam, steps: usize) -> f64 {
    let cost = |p: &[f64]| -> f64 {
        weights
            .iter()
            .zip(p)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, &ph)| w * alpha_loss(ph, alpha).unwrap())
            .sum()
    };
    let h = 1.0 / steps as f64;
    let mut best = f64::INFINITY;
    match weights.len() {
        2 => {
            for i in 0..=steps {
                let a = i as f64 * h;
                best = best.min(cost(&[a, 1.0 - a]));
            }
        }
        3 => {
            let (mut center, mut half) = ((0.5, 0.5), 0.5);
            for _ in 0..5 {
                let step = 2.0 * half / steps as f64;
                let mut arg = center;
                for i in 0..=steps {
                    let a = center.0 - half + i as f64 * step;
                    for j in 0..=steps {
                        let b = center.1 - half + j as f64 * step;
                        if a < 0.0 || b < 0.0 || a + b > 1.0 + 1e-15 {
                            continue;
                        }
                        let v = cost(&[a, b, (1.0 - a - b).max(0.0)]);
                        if v < best {
                            best = v;
                            arg = (a, b);
                        }
                    }
                }
                center = arg;
                half = 4.0 * step;
            }
        }
        n => panic!("grid over a {n}-simplex not supported"),
    }
    best
}

fn criterion_5(suite: &mut Suite) {
    let alphas = [
        AlphaParam::LOG_LOSS,
        AlphaParam::Finite(1.5),
        AlphaParam::Finite(2.0),
        AlphaParam::Finite(5.0),
        AlphaParam::Infinite,
    ];
    let mut rng = RngState::new(5);

    // optimality of the tilted posterior
    let mut worst_gap = 0.0f64;
    let mut beaten = 0.0f64;
    for trial in 0..100 {
        let (s, u, steps) = if trial % 2 == 0 { (2, 3, 20_000) } else { (3, 4, 200) };
        let joint = JointPmf::new(s, u, random_pmf(&mut rng, s * u)).unwrap();
        for &alpha in &alphas {
            let rule = optimal_decision_rule(&joint, alpha).unwrap();
            let tilted = expected_alpha_loss(&joint, &rule, alpha).unwrap();
            let grid: f64 = (0..u).map(|c| column_grid_minimum(&joint.column(c), alpha, steps)).sum();
            worst_gap = worst_gap.max((tilted - grid).abs());
            beaten = beaten.max(tilted - grid);
            let closed = min_expected_alpha_loss(&joint, alpha);
            worst_gap = worst_gap.max((closed - tilted).abs());
        }
    }
    let optimal = worst_gap <= 1e-4 && beaten <= 1e-12;

    // α → 1
    let mut worst_limit = 0.0f64;
    let near_one = AlphaParam::Finite(1.0 + 1e-7);
    for i in 1..=100 {
        let p = i as f64 / 100.0;
        worst_limit = worst_limit.max((alpha_loss(p, near_one).unwrap() + p.ln()).abs());
    }
    for _ in 0..50 {
        let joint = JointPmf::new(3, 4, random_pmf(&mut rng, 12)).unwrap();
        let h = arimoto_conditional_entropy(&joint, AlphaParam::LOG_LOSS);
        worst_limit = worst_limit.max((min_expected_alpha_loss(&joint, near_one) - h).abs());
    }
    let limit = worst_limit <= 1e-5;

    // α = ∞ on dyadic fixtures, where every sum is exact
    let fixtures: [&[&[f64]]; 3] = [
        &[&[0.125, 0.25, 0.0625], &[0.375, 0.0625, 0.125]],
        &[&[0.5, 0.0], &[0.25, 0.25]],
        &[&[0.0625, 0.125, 0.0625, 0.25], &[0.125, 0.0625, 0.0, 0.0625], &[0.0625, 0.0625, 0.125, 0.0]],
    ];
    let mut exact = true;
    for rows in fixtures {
        let joint = JointPmf::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        let map_error: f64 = (0..joint.u_size())
            .map(|c| {
                let col = joint.column(c);
                col.iter().sum::<f64>() - col.iter().cloned().fold(0.0, f64::max)
            })
            .sum();
        let rule = optimal_decision_rule(&joint, AlphaParam::Infinite).unwrap();
        exact &= min_expected_alpha_loss(&joint, AlphaParam::Infinite) == map_error;
        exact &= expected_alpha_loss(&joint, &rule, AlphaParam::Infinite).unwrap() == map_error;
    }

    // H_α(S|U) = H_α(S) for product pmfs and strictly less otherwise. At
    // α = ∞ equality also holds whenever the MAP guess ignores U, so the
    // strict direction is checked for finite α only.
    let mut worst_independent = 0.0f64;
    let mut smallest_dependent_gap = f64::INFINITY;
    let mut map_ties = 0;
    for _ in 0..100 {
        let ps = random_pmf(&mut rng, 3);
        let independent = JointPmf::independent(&ps, &random_pmf(&mut rng, 4)).unwrap();
        let dependent = JointPmf::new(3, 4, random_pmf(&mut rng, 12)).unwrap();
        for &alpha in &alphas {
            let h = arimoto_entropy(&ps, alpha).unwrap();
            worst_independent = worst_independent.max((arimoto_conditional_entropy(&independent, alpha) - h).abs());
            let gap = arimoto_entropy(&dependent.marginal_s(), alpha).unwrap() - arimoto_conditional_entropy(&dependent, alpha);
            if alpha == AlphaParam::Infinite {
                map_ties += usize::from(gap.abs() <= 1e-10);
            } else {
                smallest_dependent_gap = smallest_dependent_gap.min(gap);
            }
        }
    }
    let independence = worst_independent <= 1e-10 && smallest_dependent_gap > 1e-10;

    suite.record(
        5,
        "alpha-loss",
        optimal && limit && exact && independence,
        format!(
            "tilted vs grid max|diff|={worst_gap:.2e} (grid never better by >1e-12: {}); alpha->1 max|diff|={worst_limit:.2e}; \
             alpha=inf exact MAP error={exact}; independent max|H(S|U)-H(S)|={worst_independent:.1e}, dependent min gap (finite alpha)={smallest_dependent_gap:.2e}, \
             dependent joints with a U-blind MAP guess at alpha=inf={map_ties}/100",
            beaten <= 1e-12
        ),
    );
}

// ---------------------------------------------------------------- 6

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn random_matrix(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.standard_normal()).collect()).unwrap()
}

/// Worst relative error of every parameter and input gradient of a random network.
fn network_gradient_error(rng: &mut RngState, batch_norm: bool, training: bool) -> f64 {
    let activations = [Activation::LeakyRelu, Activation::Relu, Activation::Tanh, Activation::Sigmoid, Activation::Identity];
    let depth = 1 + rng.below(3);
    let spec = MlpSpec {
        input_dim: 1 + rng.below(5),
        hidden: (0..depth).map(|_| 2 + rng.below(5)).collect(),
        output_dim: 1 + rng.below(3),
        hidden_activation: activations[rng.below(activations.len())],
        batch_norm,
        head: if rng.bernoulli(0.5) { Head::SoftmaxLogits } else { Head::Linear },
    };
    let mut model = MlpModel::new(&spec, rng).unwrap();
    for layer in &mut model.layers {
        if let Some(bn) = &mut layer.batch_norm {
            bn.gamma.iter_mut().for_each(|g| *g = 0.5 + rng.uniform());
            bn.beta.iter_mut().for_each(|b| *b = 0.3 * rng.standard_normal());
            bn.running_mean.iter_mut().for_each(|m| *m = 0.1 * rng.standard_normal());
            bn.running_var.iter_mut().for_each(|v| *v = 0.5 + rng.uniform());
        }
        layer.bias.iter_mut().for_each(|b| *b = 0.1 * rng.standard_normal());
    }
    let batch = 6 + rng.below(6);
    let x = random_matrix(rng, batch, spec.input_dim);
    let c = random_matrix(rng, batch, spec.output_dim);
    let probe = |m: &MlpModel, input: &Matrix| -> f64 {
        let out = m.forward(input, training).unwrap();
        out.output().as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum()
    };
    let cache = model.forward(&x, training).unwrap();
    let bw = model.backward(&cache, &c).unwrap();
    let mut worst = 0.0f64;
    for b in 0..model.parameter_blocks().len() {
        for i in 0..model.parameter_blocks()[b].len() {
            let orig = model.parameter_blocks()[b][i];
            model.parameter_blocks_mut()[b][i] = orig + FD_STEP;
            let up = probe(&model, &x);
            model.parameter_blocks_mut()[b][i] = orig - FD_STEP;
            let down = probe(&model, &x);
            model.parameter_blocks_mut()[b][i] = orig;
            worst = worst.max(relative_error((up - down) / (2.0 * FD_STEP), bw.gradients.blocks[b][i]));
        }
    }
    let mut xp = x.clone();
    for i in 0..x.as_slice().len() {
        let orig = x.as_slice()[i];
        xp.as_mut_slice()[i] = orig + FD_STEP;
        let up = probe(&model, &xp);
        xp.as_mut_slice()[i] = orig - FD_STEP;
        let down = probe(&model, &xp);
        xp.as_mut_slice()[i] = orig;
        worst = worst.max(relative_error((up - down) / (2.0 * FD_STEP), bw.input_gradient.as_slice()[i]));
    }
    worst
}

/// Worst relative error of the affine encoder's gradient through the full
/// penalty objective, with the budget violated so the penalty is active.
fn encoder_gradient_error(rng: &mut RngState, estimate: DistortionEstimate) -> f64 {
    let m = 2 + rng.below(3);
    let spec = GaussianMixtureSpec::new(0.5, (0..m).map(|_| uniform_in(rng, -1.0, 1.0)).collect(), vec![0.5; m]).unwrap();
    let data = sample_labeled(&spec, 30, rng).unwrap();
    let adversary = MlpModel::new(&MlpSpec::classifier(m, &[5, 4], 2), rng).unwrap();
    let encoder = EncoderModel::AffineGaussian {
        raw_beta: (0..m).map(|_| 0.5 * rng.standard_normal()).collect(),
        raw_sigma: (0..m).map(|_| rng.standard_normal()).collect(),
    };
    let schedule = PenaltySchedule::default().resolved(100);
    let handler = constraint_registry().build("penalty", &schedule).unwrap();
    let measure = DistortionMeasure {
        norm: DistortionNorm::PerSample,
        estimate,
    };
    let noise = encoder.sample_noise(data.len(), rng);
    let budget = 0.05;
    let eval = |e: &EncoderModel| {
        encoder_objective(e, &adversary, handler.as_ref(), &data.x, &data.s, &noise, budget, 50, measure, None).unwrap()
    };
    let analytic = eval(&encoder).gradients;
    let mut worst = 0.0f64;
    for (b, block) in analytic.iter().enumerate() {
        for (i, &a) in block.iter().enumerate() {
            let mut plus = encoder.clone();
            plus.parameter_blocks_mut()[b][i] += FD_STEP;
            let mut minus = encoder.clone();
            minus.parameter_blocks_mut()[b][i] -= FD_STEP;
            let fd = (eval(&plus).loss - eval(&minus).loss) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(fd, a));
        }
    }
    worst
}

fn criterion_6(suite: &mut Suite) {
    let mut rng = RngState::new(6);
    let mut net = 0.0f64;
    let mut bn = 0.0f64;
    for k in 0..40 {
        let with_bn = k % 2 == 1;
        let err = network_gradient_error(&mut rng, with_bn, k % 4 != 3);
        if with_bn {
            bn = bn.max(err);
        } else {
            net = net.max(err);
        }
    }
    let mut enc = 0.0f64;
    for k in 0..10 {
        let estimate = if k % 2 == 0 { DistortionEstimate::Expected } else { DistortionEstimate::Sampled };
        enc = enc.max(encoder_gradient_error(&mut rng, estimate));
    }
    suite.record(
        6,
        "finite-difference gradients",
        net < FD_TOLERANCE && bn < FD_TOLERANCE && enc < FD_TOLERANCE,
        format!("max relative error: 20 plain networks {net:.2e}, 20 batch-norm networks {bn:.2e}, affine encoder objective {enc:.2e}"),
    );
}

// ---------------------------------------------------------------- 7

/// Differential entropy of `½N(−μ,1) + ½N(μ,1)` by Simpson's rule.
fn mixture_entropy(mu: f64) -> f64 {
    let density = |x: f64| {
        let g = |c: f64| (-(x - c) * (x - c) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        0.5 * (g(mu) + g(-mu))
    };
    let integrand = |x: f64| {
        let p = density(x);
        if p > 0.0 {
            -p * p.ln()
        } else {
            0.0
        }
    };
    let (lo, hi, n) = (-mu - 12.0, mu + 12.0, 40_000);
    let h = (hi - lo) / n as f64;
    let mut total = integrand(lo) + integrand(hi);
    for i in 1..n {
        total += integrand(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    total * h / 3.0
}

fn criterion_7(suite: &mut Suite, sweeps: &[GmmSweep]) {
    const ENTROPY_TOLERANCE: f64 = 0.05;
    const INDEPENDENCE_TOLERANCE: f64 = 0.03;
    const QUADRATURE_TOLERANCE: f64 = 0.05;
    let k = DEFAULT_NEIGHBORS;
    let mut rng = RngState::new(7);
    let truth = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();

    let gauss: Vec<f64> = (0..10_000).map(|_| rng.standard_normal()).collect();
    let h = knn_entropy(&SampleCloud::from_values(&gauss).unwrap(), k).unwrap();
    let entropy_ok = (h - truth).abs() <= ENTROPY_TOLERANCE;

    let values: Vec<f64> = (0..20_000).map(|_| rng.standard_normal()).collect();
    let labels: Vec<usize> = (0..20_000).map(|_| usize::from(rng.bernoulli(0.5))).collect();
    let independent = mi_with_discrete_label(&SampleCloud::from_values(&values).unwrap(), &labels, k).unwrap().raw;
    let independence_ok = independent.abs() < INDEPENDENCE_TOLERANCE;

    let mut quadrature_ok = true;
    let mut quad = Vec::new();
    for mu in [0.5, 1.0, 2.0] {
        let exact = mixture_entropy(mu) - truth;
        let labels: Vec<usize> = (0..20_000).map(|_| usize::from(rng.bernoulli(0.5))).collect();
        let values: Vec<f64> = labels
            .iter()
            .map(|&s| if s == 1 { mu } else { -mu } + rng.standard_normal())
            .collect();
        let est = mi_with_discrete_label(&SampleCloud::from_values(&values).unwrap(), &labels, k).unwrap().raw;
        quadrature_ok &= (est - exact).abs() <= QUADRATURE_TOLERANCE;
        quad.push(format!("mu={mu}: {est:.4} vs {exact:.4}"));
    }

    // estimator noise is bounded by the independence tolerance
    let mut sweep_ok = true;
    let mut sweep_parts = Vec::new();
    for sweep in sweeps {
        let mi: Vec<f64> = sweep.curve.rows().iter().map(|r| r.estimated_mi.unwrap()).collect();
        let rise = mi.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
        sweep_ok &= rise <= INDEPENDENCE_TOLERANCE;
        let cells: Vec<String> = mi.iter().map(|v| format!("{v:.3}")).collect();
        sweep_parts.push(format!("q={} [{}] max rise {rise:.3}", sweep.spec.q, cells.join(" ")));
    }

    suite.record(
        7,
        "mutual-information estimator",
        entropy_ok && independence_ok && quadrature_ok && sweep_ok,
        format!(
            "N(0,1) entropy {h:.4} vs {truth:.4}; independent MI {independent:.4}; {}; sweep {}",
            quad.join(", "),
            sweep_parts.join("; ")
        ),
    );
}

// ---------------------------------------------------------------- 8

fn criterion_8(suite: &mut Suite) {
    let mut rng = RngState::new(8);
    let config = FairSweepConfig::default();
    let (mut a, mut b) = sample_rngs(config.seed);
    let train_set = config.population.sample(2000, &mut a).unwrap();
    let test_set = config.population.sample(2000, &mut b).unwrap();

    // a constant representation leaves the downstream classifier nothing to use
    let constant = |d: &LabeledDataset| d.with_features(Matrix::filled(d.len(), d.dim(), 0.25)).unwrap();
    let fit = FitConfig { epochs: 5, ..FitConfig::default() };
    let report = train_and_eval_downstream(&constant(&train_set), &constant(&test_set), &[8], &fit, &mut rng).unwrap();
    let constant_ok = report.fairness.max_demp == 0.0;

    let mut symmetry = 0.0f64;
    for _ in 0..100 {
        let n = 50 + rng.below(200);
        let groups = 2 + rng.below(3);
        let pred: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let mut s: Vec<usize> = (0..n).map(|_| rng.below(groups)).collect();
        s[..groups].iter_mut().enumerate().for_each(|(g, v)| *v = g);
        let r = demographic_parity_gap(&pred, &s, 2, groups, 1).unwrap();
        symmetry = symmetry.max((r.demp_gap[0] - r.demp_gap[1]).abs());
    }
    let symmetry_ok = symmetry <= 1e-12;

    let mut eo_ok = true;
    let y = test_set.require_y().unwrap();
    for c in 0..2 {
        let pred = vec![c; test_set.len()];
        let (gaps, _) = equalized_odds_gap(&pred, y, &test_set.s, 2, 2, 1).unwrap();
        eo_ok &= gaps.iter().all(|g| *g == Some(0.0));
    }
    let downstream = report.model.predict_labels(&constant(&test_set).x).unwrap();
    let full = fairness_report(&downstream, &test_set.s, Some(y), 2, 2).unwrap();
    eo_ok &= full.eo_gap.unwrap().iter().all(|g| g.is_none_or(|v| v == 0.0));

    let curve = fair_sweep(&config).unwrap();
    let rows = curve.rows();
    let first = rows.first().unwrap().max_demp.unwrap();
    let last = rows.last().unwrap().max_demp.unwrap();
    let decrease = 1.0 - last / first;
    let sweep_ok = first > 0.0 && decrease >= 0.5;
    let cells: Vec<String> = rows.iter().map(|r| format!("D={}:{:.3}", r.d, r.max_demp.unwrap())).collect();

    suite.record(
        8,
        "fairness properties",
        constant_ok && symmetry_ok && eo_ok && sweep_ok,
        format!(
            "constant encoder DemP={}; binary DemP asymmetry {symmetry:.1e}; input-free predictors EO zero={eo_ok}; \
             sweep DemP [{}] decrease {:.0}%",
            report.fairness.max_demp,
            cells.join(" "),
            100.0 * decrease
        ),
    );
}

// ---------------------------------------------------------------- 9

fn criterion_9(suite: &mut Suite) {
    const AGREEMENT: f64 = 0.01;
    let budget = 16.0;
    let spec = GaussianMixtureSpec::benchmark(0.5);
    let (mut a, _) = sample_rngs(9);
    let train_set = sample_labeled(&spec, 20_000, &mut a).unwrap();
    let mut fresh_rng = RngState::new(9).derive(1_000);
    let held_out = sample_labeled(&spec, 20_000, &mut fresh_rng).unwrap();
    let base = TrainConfig::default();
    let point = point_rng(9, 0);
    let mut pass = true;
    let mut accuracies = Vec::new();
    let mut parts = Vec::new();
    for method in ["penalty", "augmented-lagrangian"] {
        let cfg = TrainConfig { constraint: method.to_string(), ..base.clone() };
        let encoder = EncoderModel::affine_for_budget(spec.dim(), budget);
        let out = train_representation(&train_set, encoder, &[16, 8], &cfg, budget, &point).unwrap();
        let encoded = out.encoder.encode(&held_out.x, &held_out.s, &mut fresh_rng).unwrap();
        let empirical = cfur::dp::empirical_distortion(&held_out.x, &encoded);
        let acc = adversary_accuracy(&out.adversary, &encoded, &held_out.s).unwrap();
        let feasible = out.final_distortion <= FEASIBILITY_FACTOR * budget && empirical <= FEASIBILITY_FACTOR * budget;
        pass &= feasible;
        accuracies.push(acc);
        parts.push(format!(
            "{method}: distortion {:.3} (held-out {empirical:.3}), adversary accuracy {acc:.4}",
            out.final_distortion
        ));
    }
    let diff = (accuracies[0] - accuracies[1]).abs();
    pass &= diff <= AGREEMENT;
    suite.record(
        9,
        "penalty vs augmented Lagrangian",
        pass,
        format!("D={budget}; {}; |difference|={:.2}pp", parts.join("; "), 100.0 * diff),
    );
}

/// Criteria selected by `ACCEPTANCE_ONLY` (comma-separated numbers), or all.
fn selected() -> Vec<u32> {
    match std::env::var("ACCEPTANCE_ONLY") {
        Ok(list) if !list.trim().is_empty() => list
            .split(',')
            .map(|v| v.trim().parse().unwrap_or_else(|_| panic!("ACCEPTANCE_ONLY: bad criterion `{v}`")))
            .collect(),
        _ => (1..=9).collect(),
    }
}

fn main() -> ExitCode {
    let only = selected();
    let want = |id: u32| only.contains(&id);
    let mut suite = Suite { failed: Vec::new() };
    let sweeps = (want(1) || want(7)).then(run_gmm_sweeps);
    if let Some((sweeps, seconds)) = &sweeps {
        if want(1) {
            criterion_1(&mut suite, sweeps, *seconds);
        }
    }
    let simple: [(u32, fn(&mut Suite)); 5] = [(2, criterion_2), (3, criterion_3), (4, criterion_4), (5, criterion_5), (6, criterion_6)];
    for (id, run) in simple {
        if want(id) {
            run(&mut suite);
        }
    }
    if let (true, Some((sweeps, _))) = (want(7), &sweeps) {
        criterion_7(&mut suite, sweeps);
    }
    if want(8) {
        criterion_8(&mut suite);
    }
    if want(9) {
        criterion_9(&mut suite);
    }
    if suite.failed.is_empty() {
        println!("acceptance: all {} selected criteria passed", only.len());
        ExitCode::SUCCESS
    } else {
        suite.failed.sort_unstable();
        println!("acceptance: failed criteria {:?}", suite.failed);
        ExitCode::FAILURE
    }
}
