//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! `cargo test --release -p seirgrad-cli --test acceptance -- 2 5` runs a subset.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};

use seirgrad::autodiff::{grad_check, CsrMatrix, Tape, Tensor, Var};
use seirgrad::encoder::{
    classification_accuracy, diffpool_level, time_labeled_graphs, train_encoder_on_episodes, Adjacency, DiffPoolModel,
    EncoderConfig, GnnVars,
};
use seirgrad::estimator::{objective_value_and_grad, observe, PriorSpec};
use seirgrad::mobility::*;
use seirgrad::nn::OptimizerConfig;
use seirgrad::rng::{derive_seed, SimRng};
use seirgrad::seir::*;
use seirgrad::surrogate::*;
use seirgrad_cli::commands::cmd_pipeline;
use seirgrad_cli::data::build_dataset;
use seirgrad_cli::experiment::{self, Ablation};
use seirgrad_cli::RunConfig;

type Check = anyhow::Result<(bool, String)>;
type Criterion = (&'static str, fn() -> Check);

const PRIMITIVE_TOL: f64 = 1e-5;
const COMPOSITE_TOL: f64 = 1e-4;
const HARNESS_SEEDS: u64 = 5;

fn rng(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

fn random_matrix(rng: &mut SimRng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Weighted sum so each output entry receives a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var) -> seirgrad::Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let w = tape.constant(Tensor::new(shape, (0..n).map(|i| 0.3 + 0.13 * i as f64).collect())?);
    let p = tape.mul(x, w)?;
    Ok(tape.sum(p))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

// 1 ─ gradient fidelity

/// 4 persons and 2 locations: 6-node graphs.
fn six_node_episode(n_steps: usize, seed: u64) -> Episode {
    let cfg = GeneratorConfig {
        n_persons: 4,
        n_locations: 2,
        n_steps,
        initial_infected: 1,
        initial_exposed: 1,
        ..Default::default()
    };
    generate_synthetic_episode(&cfg, seed).unwrap()
}

fn primitive_checks() -> seirgrad::Result<Vec<(&'static str, f64)>> {
    let mut r = rng(11);
    let eps = 1e-5;
    let a = random_matrix(&mut r, 3, 4);
    let b = random_matrix(&mut r, 4, 2);
    let c = random_matrix(&mut r, 3, 4);
    let col = random_matrix(&mut r, 3, 1);
    let row = random_matrix(&mut r, 1, 4);
    // keep ReLU inputs away from the kink
    let away: Tensor = a.map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let sp = Arc::new(CsrMatrix::from_triplets(3, 4, &[(0, 1, 0.5), (1, 0, 2.0), (2, 3, -1.0), (2, 1, 1.5)])?);
    let sym = {
        let raw = random_matrix(&mut r, 3, 3).map(f64::abs);
        Tensor::matrix(3, 3, (0..9).map(|k| 0.5 * (raw.get(k / 3, k % 3) + raw.get(k % 3, k / 3))).collect())?
    };

    let mut out = Vec::new();
    out.push(("matmul", grad_check(|t, v| { let y = t.matmul(v[0], v[1])?; weighted_sum(t, y) }, &[a.clone(), b.clone()], eps)?));
    out.push(("add", grad_check(|t, v| { let y = t.add(v[0], v[1])?; weighted_sum(t, y) }, &[a.clone(), c.clone()], eps)?));
    out.push(("sub", grad_check(|t, v| { let y = t.sub(v[0], v[1])?; weighted_sum(t, y) }, &[a.clone(), c.clone()], eps)?));
    out.push(("mul", grad_check(|t, v| { let y = t.mul(v[0], v[1])?; weighted_sum(t, y) }, &[a.clone(), c.clone()], eps)?));
    out.push(("sigmoid", grad_check(|t, v| { let y = t.sigmoid(v[0]); weighted_sum(t, y) }, std::slice::from_ref(&a), eps)?));
    out.push(("tanh", grad_check(|t, v| { let y = t.tanh(v[0]); weighted_sum(t, y) }, std::slice::from_ref(&a), eps)?));
    out.push(("relu", grad_check(|t, v| { let y = t.relu(v[0]); weighted_sum(t, y) }, &[away], eps)?));
    out.push(("scale", grad_check(|t, v| { let y = t.scale(v[0], -1.7); weighted_sum(t, y) }, std::slice::from_ref(&a), eps)?));
    out.push(("add_column", grad_check(|t, v| { let y = t.add_column(v[0], v[1])?; weighted_sum(t, y) }, &[a.clone(), col], eps)?));
    out.push(("add_row", grad_check(|t, v| { let y = t.add_row(v[0], v[1])?; weighted_sum(t, y) }, &[a.clone(), row], eps)?));
    out.push(("softmax_rows", grad_check(|t, v| { let y = t.softmax_rows(v[0])?; weighted_sum(t, y) }, std::slice::from_ref(&a), eps)?));
    out.push((
        "concat_rows+slice_rows",
        grad_check(|t, v| { let y = t.concat_rows(v)?; let s = t.slice_rows(y, 1, 4)?; weighted_sum(t, s) }, &[a.clone(), c.clone()], eps)?,
    ));
    out.push(("transpose", grad_check(|t, v| { let y = t.transpose(v[0])?; weighted_sum(t, y) }, std::slice::from_ref(&a), eps)?));
    out.push(("sum", grad_check(|t, v| { let y = t.mul(v[0], v[0])?; Ok(t.sum(y)) }, std::slice::from_ref(&a), eps)?));
    out.push(("mse", grad_check(|t, v| t.mse(v[0], v[1]), &[a.clone(), c.clone()], eps)?));
    out.push(("cross_entropy", grad_check(|t, v| t.cross_entropy(v[0], &[2, 0, 3]), std::slice::from_ref(&a), eps)?));
    out.push(("gather_cols", grad_check(|t, v| { let y = t.gather_cols(v[0], &[3, 0, 3])?; weighted_sum(t, y) }, std::slice::from_ref(&a), eps)?));
    out.push(("sparse_matmul", grad_check(|t, v| { let y = t.sparse_matmul(sp.clone(), v[0])?; weighted_sum(t, y) }, &[b], eps)?));
    out.push(("sym_normalize", grad_check(|t, v| { let y = t.sym_normalize(v[0])?; weighted_sum(t, y) }, &[sym], eps)?));
    Ok(out)
}

fn lstm_check(k: usize) -> seirgrad::Result<f64> {
    let width = 5;
    let mut r = rng(12);
    let mut point: Vec<Tensor> = (0..4).map(|_| random_matrix(&mut r, k, k + width)).collect();
    point.extend((0..4).map(|_| random_matrix(&mut r, k, 1)));
    let x = random_matrix(&mut r, width, 1);
    let h0 = random_matrix(&mut r, k, 1);
    let c0 = random_matrix(&mut r, k, 1);
    grad_check(
        |tape, v| {
            let gates = GateVars::stack(tape, [v[0], v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]])?;
            let h_prev = tape.constant(h0.clone());
            let c_prev = tape.constant(c0.clone());
            let x = tape.constant(x.clone());
            let (h, c) = lstm_cell(tape, &gates, h_prev, c_prev, &[x])?;
            let both = tape.concat_rows(&[h, c])?;
            weighted_sum(tape, both)
        },
        &point,
        1e-6,
    )
}

/// Two pooling levels on a 6-node snapshot: gradients w.r.t. node features
/// and every GNN weight.
fn diffpool_check(k: usize) -> seirgrad::Result<f64> {
    let ep = six_node_episode(3, 5);
    let graph = episode_graphs(&ep)?.remove(0);
    assert_eq!(graph.n_nodes(), 6);
    let mut r = rng(13);
    let (f, clusters) = (NODE_FEATURES, 3);
    let point = vec![
        (*graph.features).clone(),
        random_matrix(&mut r, f, k),
        random_matrix(&mut r, 1, k),
        random_matrix(&mut r, f, clusters),
        random_matrix(&mut r, 1, clusters),
        random_matrix(&mut r, k, k),
        random_matrix(&mut r, 1, k),
        random_matrix(&mut r, k, 2),
        random_matrix(&mut r, 1, 2),
    ];
    grad_check(
        |tape, v| {
            let adj = Adjacency::of(&graph);
            let l0 = diffpool_level(tape, &adj, v[0], GnnVars { weight: v[1], bias: v[2] }, Some(GnnVars { weight: v[3], bias: v[4] }))?;
            let adj1 = Adjacency::Dense(l0.adjacency);
            let l1 = diffpool_level(tape, &adj1, l0.features, GnnVars { weight: v[5], bias: v[6] }, Some(GnnVars { weight: v[7], bias: v[8] }))?;
            let a = weighted_sum(tape, l1.features)?;
            let b = weighted_sum(tape, l1.adjacency)?;
            let s = weighted_sum(tape, l0.assignment)?;
            let ab = tape.add(a, b)?;
            tape.add(ab, s)
        },
        &point,
        1e-6,
    )
}

/// The fitting objective w.r.t. θ through an encoder-fed surrogate.
fn objective_check(k: usize, n_steps: usize) -> seirgrad::Result<f64> {
    let prior = PriorConfig::default();
    let theta_star = prior.center();
    let eps: Vec<Episode> = (0..2)
        .map(|s| {
            let mut ep = six_node_episode(n_steps, 20 + s);
            ep.observed_infections = Some(simulate(&ep, &theta_star, s).unwrap().infections()[1..].to_vec());
            ep
        })
        .collect();
    let enc = DiffPoolModel::new(
        EncoderConfig { embed_dim: k, hidden_dim: 4, max_clusters: 4, ..Default::default() },
        6,
        NODE_FEATURES,
        n_steps,
    )?;
    let cfg = SurrogateConfig { hidden: k, init_range: 0.3, graph_mode: GraphMode::Varying, ..Default::default() };
    let model = SurrogateModel::new(cfg, &prior, Some(enc), None)?;
    let refs: Vec<&Episode> = eps.iter().collect();
    let obs = observe(&model, &refs)?;
    let theta = sample_thetas(&prior, 1, 4).pop().unwrap();
    let mut worst = 0.0_f64;
    for lambda in [0.0, 250.0] {
        let spec = PriorSpec::from_prior(&prior, lambda);
        let (_, grad) = objective_value_and_grad(&model, &obs, &theta, &spec)?;
        let value = |v: &[f64]| objective_value_and_grad(&model, &obs, &ThetaSeir::from_slice(v).unwrap(), &spec).unwrap().0;
        for (j, g) in grad.iter().enumerate() {
            let h = 1e-7;
            let (mut up, mut down) = (theta.to_vec(), theta.to_vec());
            up[j] += h;
            down[j] -= h;
            let numeric = (value(&up) - value(&down)) / (2.0 * h);
            worst = worst.max(seirgrad::autodiff::relative_error(*g, numeric));
        }
    }
    Ok(worst)
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    let prims = primitive_checks()?;
    let (worst_name, worst_prim) = prims.iter().cloned().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let lstm = lstm_check(8)?;
    let pool = diffpool_check(8)?;
    let objective = objective_check(8, 5)?;
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_prim < PRIMITIVE_TOL && lstm < COMPOSITE_TOL && pool < COMPOSITE_TOL && objective < COMPOSITE_TOL && secs < 60.0;
    Ok((
        ok,
        format!(
            "{} primitives worst {worst_prim:.1e} ({worst_name}); LSTM {lstm:.1e}; DiffPool {pool:.1e}; objective {objective:.1e}; {secs:.1}s",
            prims.len()
        ),
    ))
}

// 2 ─ simulator statistics

fn single_room(n: usize, infected: usize, n_steps: usize) -> Episode {
    Episode {
        person_ids: (0..n).map(|p| format!("p{p}")).collect(),
        persons: (0..n)
            .map(|p| PersonAttr { gender: Gender::ALL[p % Gender::COUNT], age_group: AgeGroup::ALL[p % AgeGroup::COUNT] })
            .collect(),
        location_ids: vec!["hall".into()],
        locations: vec![LocationAttr { category: LocationCategory::Workplaces, city_tier: CityTier::First }],
        snapshots: (0..n_steps)
            .map(|t| MobilitySnapshot { time_index: t + 1, edges: (0..n).map(|p| (p, 0)).collect() })
            .collect(),
        initial_state: (0..n).map(|p| if p < infected { Compartment::I } else { Compartment::S }).collect(),
        observed_infections: None,
    }
}

fn simulator_statistics() -> Check {
    let start = Instant::now();
    let (n, reps, steps) = (1000usize, 500usize, 20usize);
    let ep = single_room(n, 60, steps);
    let theta = ThetaSeir::uniform(0.015, 0.015, 0.015, 0.015, 0.25, 0.125);
    let beta_eff = 0.06;
    for p in &ep.persons {
        anyhow::ensure!((effective_beta(p, &ep.locations[0], &theta) - beta_eff).abs() < 1e-15);
    }
    // per step: Σ_r observed S→E, Σ_r S·p, Σ_r S·p(1-p)
    let mut obs = vec![0.0; steps];
    let mut mean = vec![0.0; steps];
    let mut var = vec![0.0; steps];
    let mut conserved = true;
    for r in 0..reps {
        let traj = simulate(&ep, &theta, derive_seed(2024, r as u64))?;
        conserved &= traj.counts.iter().all(|c| c.total() == n as u64);
        for t in 0..steps {
            let (now, next) = (&traj.counts[t], &traj.counts[t + 1]);
            let p = beta_eff * now.i as f64 / n as f64;
            obs[t] += (now.s - next.s) as f64;
            mean[t] += now.s as f64 * p;
            var[t] += now.s as f64 * p * (1.0 - p);
        }
    }
    let z: Vec<f64> = (0..steps).map(|t| (obs[t] - mean[t]) / var[t].sqrt()).collect();
    let worst = z.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
    let secs = start.elapsed().as_secs_f64();
    let ok = conserved && worst < 3.0 && secs < 120.0;
    Ok((ok, format!("{steps} steps × {reps} replicates: max |z| = {worst:.2} (< 3); conservation {}; {secs:.1}s", verdict(conserved))))
}

// 3 ─ surrogate fit quality

fn surrogate_fit_quality() -> Check {
    let start = Instant::now();
    let prior = PriorConfig::default();
    let gen = GeneratorConfig { home_bias: [0.3, 0.7], ..Default::default() };
    let eps: Vec<Episode> = (0..2).map(|s| generate_synthetic_episode(&gen, 300 + s).unwrap()).collect();
    let named: Vec<(String, &Episode)> = eps.iter().enumerate().map(|(i, e)| (format!("ep{i}"), e)).collect();
    let data = simulate_batch(&named, 100, 1, &prior, 31, &SimCounter::new())?;
    let hidden = 32;
    let refs: Vec<&Episode> = eps.iter().collect();
    let enc_cfg = EncoderConfig { embed_dim: hidden, hidden_dim: 16, epochs: 5, seed: 3, ..Default::default() };
    let (encoder, _) = train_encoder_on_episodes(&refs, &enc_cfg)?;
    let cfg = SurrogateConfig {
        hidden,
        epochs: 500,
        max_steps: Some(1500),
        batch_size: 32,
        optimizer: OptimizerConfig::adam(0.005),
        validation_fraction: 0.1,
        seed: 9,
        ..Default::default()
    };
    let (_, curve) = train_surrogate(&data, &named, Some(encoder), &prior, &cfg)?;

    // constant predictor: per-compartment mean of the training targets
    let (val, train) = validation_split(data.len(), cfg.validation_fraction, cfg.seed);
    let targets = |i: usize| {
        let rec = &data.records[i];
        let n = rec.counts[0].iter().sum::<u64>() as f64;
        rec.counts[1..].iter().map(move |c| normalize_counts(*c, n)).collect::<Vec<_>>()
    };
    let mut constant = [0.0; 4];
    let mut count = 0.0;
    for &i in &train {
        for y in targets(i) {
            for j in 0..4 {
                constant[j] += y[j];
            }
            count += 1.0;
        }
    }
    constant.iter_mut().for_each(|c| *c /= count);
    let baseline = val
        .iter()
        .map(|&i| {
            let ys = targets(i);
            ys.iter().map(|y| (0..4).map(|j| (y[j] - constant[j]).powi(2)).sum::<f64>() / 4.0).sum::<f64>() / ys.len() as f64
        })
        .sum::<f64>()
        / val.len() as f64;
    let best = curve.best_val_loss();
    let secs = start.elapsed().as_secs_f64();
    let ratio = best / baseline;
    let ok = ratio < 0.2 && curve.n_val == val.len() && secs < 1200.0;
    Ok((
        ok,
        format!(
            "{}/{} records: best val loss {best:.3e} vs constant baseline {baseline:.3e} (ratio {ratio:.4} < 0.2); {secs:.0}s",
            curve.n_train, curve.n_val
        ),
    ))
}

// harness configuration shared by 4–7

fn harness_config(seed: u64, out: &Path) -> RunConfig {
    let mut cfg = RunConfig { seed, output: out.to_path_buf(), ..Default::default() };
    cfg.dataset.n_episodes = 12;
    cfg.dataset.split = [0.5, 0.25, 0.25];
    cfg.dataset.generator.home_bias = [0.3, 0.7];
    cfg.simulation.k = 100;
    cfg.encoder = EncoderConfig { embed_dim: 16, hidden_dim: 16, ..Default::default() };
    cfg.surrogate = SurrogateConfig {
        hidden: 16,
        epochs: 500,
        max_steps: Some(1000),
        batch_size: 32,
        optimizer: OptimizerConfig::adam(0.01),
        ..Default::default()
    };
    // chosen on seeds 9000–9002, disjoint from every seed below
    cfg.estimation.lambda = 1000.0;
    cfg.estimation.eval_replicates = 20;
    cfg
}

fn scratch() -> PathBuf {
    std::env::temp_dir().join("seirgrad-acceptance")
}

// 4 ─ closed-loop recovery

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs()
}

fn parameter_recovery() -> Check {
    let start = Instant::now();
    let mut errs = Vec::new();
    for seed in 0..10u64 {
        let mut cfg = harness_config(1000 + seed, &scratch());
        cfg.dataset.n_episodes = 4;
        cfg.dataset.split = [1.0, 0.0, 0.0];
        cfg.surrogate.graph_mode = GraphMode::None;
        cfg.estimation.lambda = 0.0;
        cfg.estimation.fit.restarts = 10;
        let data = build_dataset(&cfg)?;
        let truth = ThetaSeir::from_slice(data.split.true_theta.as_ref().unwrap())?;
        let sims = experiment::simulate_train(&cfg, &data, cfg.simulation.k, &SimCounter::new())?;
        let (model, _) = experiment::train_surrogate_on(&cfg, &data, &sims, None, &cfg.surrogate_config())?;
        let got = experiment::fit(&cfg, &data, &model, 0.0)?.theta()?;
        errs.push([
            rel_err(got.kappa, truth.kappa),
            rel_err(got.gamma, truth.gamma),
            rel_err(got.mean_beta(), truth.mean_beta()),
        ]);
    }
    let medians: Vec<f64> = (0..3).map(|c| median(errs.iter().map(|e| e[c]).collect())).collect();
    let secs = start.elapsed().as_secs_f64();
    let ok = medians.iter().all(|m| *m <= 0.2) && secs < 1800.0;
    Ok((
        ok,
        format!("median rel. error κ {:.3}, γ {:.3}, mean β {:.3} (≤ 0.2, 10 seeds); {secs:.0}s", medians[0], medians[1], medians[2]),
    ))
}

// 5 ─ budget-matched comparison

fn budget_matched() -> Check {
    let ks = [20usize, 100, 500];
    let mut vanilla: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut surrogate: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut parity = true;
    for seed in 0..HARNESS_SEEDS {
        let cfg = harness_config(2000 + seed, &scratch());
        let data = build_dataset(&cfg)?;
        let (encoder, _) = experiment::train_encoder(&cfg, &data)?;
        for &k in &ks {
            let row = experiment::compare_k(&cfg, &data, Some(&encoder), k)?;
            parity &= row.vanilla_simulations == row.surrogate_simulations && row.vanilla_simulations == (k * data.split.train.len()) as u64;
            vanilla.entry(k).or_default().push(row.vanilla_error);
            surrogate.entry(k).or_default().push(row.surrogate_error);
        }
    }
    let mut ok = parity;
    let mut parts = Vec::new();
    for k in ks {
        let (v, s) = (median(vanilla[&k].clone()), median(surrogate[&k].clone()));
        ok &= s <= v;
        parts.push(format!("K={k}: surrogate {s:.1} vs vanilla {v:.1}"));
    }
    Ok((ok, format!("{}; ledgers {}", parts.join(", "), verdict(parity))))
}

// 6 ─ ablation directions

fn lockdown_config(seed: u64) -> RunConfig {
    let mut cfg = harness_config(seed, &scratch());
    cfg.dataset.generator.home_bias = [0.2, 0.4];
    cfg.dataset.generator.lockdown = Some(Lockdown { start: [6, 20], home_bias: 0.95 });
    cfg
}

fn medians_by_variant(rows: &[Vec<experiment::AblationRow>], pick: impl Fn(&experiment::AblationRow) -> f64) -> BTreeMap<String, f64> {
    let mut by: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for seed_rows in rows {
        for r in seed_rows {
            by.entry(r.variant.clone()).or_default().push(pick(r));
        }
    }
    by.into_iter().map(|(k, v)| (k, median(v))).collect()
}

fn ablation_directions() -> Check {
    let mut graph = Vec::new();
    let mut incorporation = Vec::new();
    let mut lambda = Vec::new();
    let lambdas = vec![0.0, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7];
    for seed in 0..HARNESS_SEEDS {
        let cfg = lockdown_config(3000 + seed);
        let data = build_dataset(&cfg)?;
        graph.push(experiment::ablate(&cfg, &data, Ablation::Graph, &SimCounter::new())?);

        let cfg = harness_config(4000 + seed, &scratch());
        let data = build_dataset(&cfg)?;
        incorporation.push(experiment::ablate(&cfg, &data, Ablation::Incorporation, &SimCounter::new())?);

        // informative but imperfect: the truth with β scaled by ±30% and κ, γ by +15%, clamped to the box
        let mut cfg = harness_config(5000 + seed, &scratch());
        let truth = build_dataset(&cfg)?.split.true_theta.unwrap();
        let (lo, hi) = cfg.simulation.prior.bounds();
        let center: Vec<f64> = truth
            .iter()
            .enumerate()
            .map(|(j, v)| if j >= KAPPA_INDEX { v * 1.15 } else if j % 2 == 0 { v * 1.3 } else { v * 0.7 })
            .zip(lo.iter().zip(&hi))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect();
        cfg.estimation.prior_center = Some(center);
        cfg.ablation.lambda_grid = lambdas.clone();
        let data = build_dataset(&cfg)?;
        lambda.push(experiment::ablate(&cfg, &data, Ablation::Lambda, &SimCounter::new())?);
    }
    let g = medians_by_variant(&graph, |r| r.test_error);
    let i = medians_by_variant(&incorporation, |r| r.test_error);
    let dev: Vec<f64> = (0..lambdas.len())
        .map(|k| median(lambda.iter().map(|rows| rows[k].dev_error.unwrap()).collect()))
        .collect();
    let argmin = dev.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;

    let a = g["varying"] < g["constant"] && g["constant"] < g["none"];
    let b = i["each"] <= i["first"];
    let c = argmin > 0 && argmin + 1 < dev.len();
    let dev_str: Vec<String> = lambdas.iter().zip(&dev).map(|(l, d)| format!("{l:.0e}:{d:.1}")).collect();
    Ok((
        a && b && c,
        format!(
            "(a) {} varying {:.1} / constant {:.1} / none {:.1}; (b) {} each {:.1} / first {:.1} / hadamard {:.1}; (c) {} dev error by λ [{}], min at index {argmin}",
            verdict(a),
            g["varying"],
            g["constant"],
            g["none"],
            verdict(b),
            i["each"],
            i["first"],
            i["hadamard"],
            verdict(c),
            dev_str.join(" ")
        ),
    ))
}

// 7 ─ determinism

fn csv_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn determinism() -> Check {
    let a = scratch().join("det-a");
    let b = scratch().join("det-b");
    let mut files = Vec::new();
    for dir in [&a, &b] {
        let _ = std::fs::remove_dir_all(dir);
        let mut cfg = harness_config(7, dir);
        cfg.dataset.n_episodes = 6;
        cfg.dataset.generator = GeneratorConfig { n_persons: 400, n_locations: 10, n_steps: 14, initial_infected: 10, initial_exposed: 10, ..Default::default() };
        cfg.simulation.k = 30;
        cfg.surrogate.max_steps = Some(200);
        cfg.estimation.fit.max_iters = 100;
        cmd_pipeline(&cfg)?;
        files.push(csv_files(dir));
    }
    let same = files[0] == files[1];
    let n = files[0].len();
    let has_core = ["metrics.csv", "training_curve.csv", "fit_trace.csv"].iter().all(|f| files[0].contains_key(Path::new(f)));
    Ok((same && has_core && n > 3, format!("{n} CSV files, byte-identical across two runs: {}", verdict(same))))
}

// 8 ─ DiffPool sanity

/// Person p appears only from step ⌊p / (N/T)⌋ on, so presence grows with t.
fn growing_episode(seed: u64) -> Episode {
    let (n, t) = (64, 8);
    let cfg = GeneratorConfig { n_persons: n, n_locations: 6, n_steps: t, initial_infected: 1, initial_exposed: 0, ..Default::default() };
    let mut ep = generate_synthetic_episode(&cfg, seed).unwrap();
    let per_step = n / t;
    for (k, s) in ep.snapshots.iter_mut().enumerate() {
        s.edges.retain(|&(p, _)| p < per_step * (k + 1));
    }
    ep
}

fn diffpool_sanity() -> Check {
    let train: Vec<Episode> = (0..4).map(growing_episode).collect();
    let held_out: Vec<Episode> = (10..13).map(growing_episode).collect();
    let cfg = EncoderConfig {
        embed_dim: 8,
        hidden_dim: 4,
        max_clusters: 4,
        epochs: 20,
        batch_size: 8,
        optimizer: OptimizerConfig::adam(0.02),
        seed: 3,
    };
    let (model, _) = train_encoder_on_episodes(&train.iter().collect::<Vec<_>>(), &cfg)?;
    let mut worst = 0.0_f64;
    let mut levels = 0;
    for ep in train.iter().chain(&held_out) {
        for g in episode_graphs(ep)? {
            let assignments = model.assignments(&g)?;
            levels = levels.max(assignments.len());
            for s in assignments {
                for i in 0..s.rows() {
                    worst = worst.max(((0..s.cols()).map(|j| s.get(i, j)).sum::<f64>() - 1.0).abs());
                }
            }
        }
    }
    let graphs = time_labeled_graphs(&held_out.iter().collect::<Vec<_>>())?;
    let accuracy = classification_accuracy(&model, &graphs)?;
    let chance = 1.0 / 8.0;
    let ok = worst <= 1e-9 && levels >= 2 && accuracy >= 2.0 * chance;
    Ok((ok, format!("{levels} levels, max |row sum − 1| = {worst:.1e}; held-out accuracy {accuracy:.3} vs chance {chance:.3} (≥ 2×)")))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [Criterion; 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("simulator statistics", simulator_statistics),
        ("surrogate fit quality", surrogate_fit_quality),
        ("closed-loop parameter recovery", parameter_recovery),
        ("budget-matched comparison", budget_matched),
        ("ablation directions", ablation_directions),
        ("determinism", determinism),
        ("DiffPool sanity", diffpool_sanity),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = match run() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e:#}")),
        };
        let took = Duration::from_secs_f64(start.elapsed().as_secs_f64());
        failed += usize::from(!ok);
        println!("{} [{id}] {name}: {detail} [{:.0?}]", if ok { "PASS" } else { "FAIL" }, took);
    }
    let _ = std::fs::remove_dir_all(scratch());
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
