//! Acceptance suite. Prints one line per criterion and exits non-zero if
//! any criterion fails.
//!
//! Criteria 1-4 need the converted benchmark datasets under
//! `$GGP_DATA_ROOT/{cora,citeseer,pubmed}` and are skipped without them.
//! Criterion 4 runs the reduced protocol (5 seeds, budget 30) unless
//! `GGP_ACCEPTANCE_FULL=1`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use ggp_core::active::{
    active_loop, alc, summarize, ActiveConfig, Acquisition, GgpClassifier, LpClassifier, NodeClassifier, SoptState,
};
use ggp_core::data::{load_dataset, synth_sbm, Dataset, SbmConfig};
use ggp_core::svgp::{class_probabilities, elbo, expected_loglik, kl_term};
use ggp_core::train::{fit, grad_check};
use ggp_core::{
    FeatureMatrix, GgpPrior, KernelFamily, KernelSpec, QuadratureRule, RobustMaxLikelihood, SparseGraph, TrainConfig,
    TrainedModel, VariationalState,
};

const DENSE_ORACLE_TOL: f64 = 1e-8;
const SPECTRAL_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const MC_SAMPLES: usize = 1_000_000;
const MC_SIGMAS: f64 = 3.0;
const SOPT_TOL: f64 = 1e-8;
const IS_SAMPLES: usize = 100_000;

const CORA_GGP: (f64, f64) = (0.809, 0.020);
const CITESEER_GGP: (f64, f64) = (0.697, 0.020);
const PUBMED_GGP: (f64, f64) = (0.771, 0.025);
const CORA_GGPX: (f64, f64) = (0.847, 0.020);
const CITESEER_GGPX: (f64, f64) = (0.756, 0.020);
const PUBMED_GGPX: (f64, f64) = (0.824, 0.025);
const RESTART_SECONDS: f64 = 600.0;
const ALC_SOPT_GGP: (f64, f64) = (0.733, 0.02);
const ALC_RAND_LP: (f64, f64) = (0.424, 0.05);

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::*;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Pass(detail)
    } else {
        Fail(detail)
    }
}

/// ELBO before and after every fit made by the suite.
static ELBO_RUNS: Mutex<Vec<(String, f64, f64)>> = Mutex::new(Vec::new());

fn tracked_fit(name: &str, prior: &GgpPrior, labelled: &[(usize, usize)], k: usize, cfg: &TrainConfig) -> TrainedModel {
    let model = fit(prior, labelled, k, cfg).expect("fit");
    let first = model.elbo_trace.first().copied().unwrap_or(model.final_elbo);
    ELBO_RUNS.lock().unwrap().push((name.to_string(), first, model.final_elbo));
    model
}

// ---------------------------------------------------------------- oracles

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> SparseGraph {
    let p: f64 = rng.random_range(0.0..0.5);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    SparseGraph::from_edge_list(n, &edges).unwrap()
}

fn random_connected(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> SparseGraph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for _ in 0..extra {
        edges.push((rng.random_range(0..n), rng.random_range(0..n)));
    }
    SparseGraph::from_edge_list(n, &edges).unwrap()
}

fn random_features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| if rng.random_bool(0.4) { rng.random_range(0.0..1.5) } else { 0.0 })
}

fn to_sparse(x: &DMatrix<f64>) -> FeatureMatrix {
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
    if rows.is_empty() {
        return FeatureMatrix::from_rows(x.ncols(), Vec::new()).unwrap();
    }
    FeatureMatrix::from_dense(&rows).unwrap()
}

fn random_spec(rng: &mut ChaCha8Rng, family: KernelFamily) -> KernelSpec {
    match family {
        KernelFamily::Linear => KernelSpec::linear(rng.random_range(0.1..2.0)).unwrap(),
        KernelFamily::Polynomial => KernelSpec::polynomial(rng.random_range(0.1..1.0), rng.random_range(0.1..2.0)).unwrap(),
    }
}

fn kernel(spec: &KernelSpec, r: f64) -> f64 {
    match spec.family {
        KernelFamily::Linear => spec.variance * r,
        KernelFamily::Polynomial => (spec.variance * r + spec.offset).powi(3),
    }
}

fn dense_p(g: &SparseGraph) -> DMatrix<f64> {
    let n = g.n_nodes();
    let mut p = DMatrix::zeros(n, n);
    for u in 0..n {
        let w = 1.0 / (1.0 + g.degree(u) as f64);
        p[(u, u)] = w;
        for &v in g.neighbors(u) {
            p[(u, v)] = w;
        }
    }
    p
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_lower(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            rng.random_range(0.3..1.2)
        } else if i > j {
            0.3 * standard_normal(rng)
        } else {
            0.0
        }
    })
}

fn random_state(rng: &mut ChaCha8Rng, z: DMatrix<f64>, k: usize) -> VariationalState {
    let m = z.nrows();
    let mut means = Vec::new();
    let mut scales = Vec::new();
    for _ in 0..k {
        means.push(DVector::from_fn(m, |_, _| standard_normal(rng)));
        scales.push(random_lower(rng, m));
    }
    VariationalState { z, means, scales }
}

fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut s, mut s2) = (0.0, 0.0, 0.0);
    for x in xs {
        n += 1.0;
        s += x;
        s2 += x * x;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

// ---------------------------------------------------------------- criteria

fn c5_dense_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let family = if trial % 2 == 0 { KernelFamily::Linear } else { KernelFamily::Polynomial };
        let n = rng.random_range(1..=50);
        let d = rng.random_range(1..=12);
        let m = rng.random_range(1..=6);
        let g = random_graph(&mut rng, n);
        let x = random_features(&mut rng, n, d);
        let z = DMatrix::from_fn(m, d, |_, _| rng.random_range(-1.0..1.0));
        let spec = random_spec(&mut rng, family);
        let prior = GgpPrior::new(Arc::new(g.clone()), Arc::new(to_sparse(&x)), spec).unwrap();
        let p = dense_p(&g);
        let kxx = (&x * x.transpose()).map(|r| kernel(&spec, r));
        let kxz = (&x * z.transpose()).map(|r| kernel(&spec, r));
        let want_hh = &p * kxx * p.transpose();
        let want_hu = &p * kxz;
        let all: Vec<usize> = (0..n).collect();
        let got_hh = prior.cov_hh(&all, &all).unwrap();
        let got_hu = prior.cov_hu(&all, &z).unwrap();
        let scale = want_hh.amax().max(want_hu.amax()).max(1.0);
        worst = worst
            .max((got_hh - want_hh).amax() / scale)
            .max((got_hu - want_hu).amax() / scale);
    }
    verdict(
        worst < DENSE_ORACLE_TOL,
        format!("100 graphs, both families: max scaled error {worst:.2e} (tol {DENSE_ORACLE_TOL:.0e})"),
    )
}

fn c6_spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..=40);
        let d = rng.random_range(1..=10);
        let g = random_graph(&mut rng, n);
        let x = random_features(&mut rng, n, d);
        let var: f64 = rng.random_range(0.1..3.0);
        let prior = GgpPrior::new(Arc::new(g.clone()), Arc::new(to_sparse(&x)), KernelSpec::linear(var).unwrap()).unwrap();
        let want = dense_p(&g) * (&x * var.sqrt());
        worst = worst.max((prior.spectral_transform().unwrap() - want).amax());
    }
    verdict(
        worst < SPECTRAL_TOL,
        format!("50 graphs: max abs error {worst:.2e} (tol {SPECTRAL_TOL:.0e})"),
    )
}

fn c7_gradcheck() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (n, k, m, d) = (20, 3, 5, 8);
    let g = random_connected(&mut rng, n, 15);
    let x = random_features(&mut rng, n, d);
    let labelled: Vec<(usize, usize)> = (0..12).map(|i| (i, i % k)).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for family in [KernelFamily::Polynomial, KernelFamily::Linear] {
        let spec = match family {
            KernelFamily::Linear => KernelSpec::linear(0.8).unwrap(),
            KernelFamily::Polynomial => KernelSpec::polynomial(0.5, 1.0).unwrap(),
        };
        let prior = GgpPrior::new(Arc::new(g.clone()), Arc::new(to_sparse(&x)), spec).unwrap();
        let z = DMatrix::from_fn(m, d, |_, _| rng.random_range(0.0..1.0));
        let state = random_state(&mut rng, z, k);
        let report = grad_check(&prior, &state, &labelled, &TrainConfig::default()).unwrap();
        ok &= report.passes(GRAD_TOL);
        let blocks: Vec<String> = report
            .blocks
            .iter()
            .map(|b| format!("{}={:.1e}", b.block, b.max_rel_error))
            .collect();
        lines.push(format!("{family:?}: {}", blocks.join(" ")));
    }
    verdict(ok, format!("{} (tol {GRAD_TOL:.0e})", lines.join("; ")))
}

fn c8_likelihood_mc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let quad = QuadratureRule::gauss_hermite(QuadratureRule::DEFAULT_POINTS).unwrap();
    let mut worst_z = 0.0f64;
    let mut worst_sum = 0.0f64;
    for _ in 0..20 {
        let k = rng.random_range(2..=5);
        let means: Vec<f64> = (0..k).map(|_| standard_normal(&mut rng)).collect();
        let vars: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..2.0)).collect();
        let y = rng.random_range(0..k);
        let lik = RobustMaxLikelihood::new(k, RobustMaxLikelihood::DEFAULT_EPSILON).unwrap();
        let sds: Vec<f64> = vars.iter().map(|v| v.sqrt()).collect();
        let mut wins = vec![0usize; k];
        for _ in 0..MC_SAMPLES {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..k {
                let f = means[c] + sds[c] * standard_normal(&mut rng);
                if f > best_v {
                    best_v = f;
                    best = c;
                }
            }
            wins[best] += 1;
        }
        let ns = MC_SAMPLES as f64;
        // log p(y|f) takes two values, so its MC mean and SE follow from the win count
        let p_y = wins[y] as f64 / ns;
        let (lc, lw) = (lik.log_correct(), lik.log_wrong());
        let mc_ell = p_y * lc + (1.0 - p_y) * lw;
        let se_ell = ((p_y * (1.0 - p_y)) / (ns - 1.0)).sqrt() * (lc - lw).abs();
        let ell = expected_loglik(&means, &vars, y, &lik, &quad).unwrap();
        worst_z = worst_z.max((ell - mc_ell).abs() / se_ell.max(1e-300));
        let probs = class_probabilities(&means, &vars, &lik, &quad).unwrap();
        worst_sum = worst_sum.max((probs.iter().sum::<f64>() - 1.0).abs());
        for c in 0..k {
            let pc = wins[c] as f64 / ns;
            let mc = lik.prob_from_argmax(pc);
            let se = (pc * (1.0 - pc) / (ns - 1.0)).sqrt() * (1.0 - lik.epsilon - lik.epsilon / (k as f64 - 1.0));
            worst_z = worst_z.max((probs[c] - mc).abs() / se.max(1e-300));
        }
    }
    verdict(
        worst_z < MC_SIGMAS && worst_sum < 1e-10,
        format!("20 configs x 1e6 samples: worst |error|/SE {worst_z:.2} (tol {MC_SIGMAS}), worst |row sum - 1| {worst_sum:.1e}"),
    )
}

fn log_normal_density(v: &DVector<f64>, mean: &DVector<f64>, l: &DMatrix<f64>) -> f64 {
    let diff = v - mean;
    let w = l.solve_lower_triangular(&diff).unwrap();
    let logdet: f64 = (0..l.nrows()).map(|i| l[(i, i)].ln()).sum();
    -0.5 * w.norm_squared() - logdet - 0.5 * v.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

fn c9_kl_mc() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_z = 0.0f64;
    for _ in 0..10 {
        let m = rng.random_range(1..=6);
        let state = random_state(&mut rng, DMatrix::zeros(m, 1), 1);
        let (mk, sk) = (&state.means[0], &state.scales[0]);
        let eye = DMatrix::identity(m, m);
        let zero = DVector::zeros(m);
        let samples: Vec<f64> = (0..200_000)
            .map(|_| {
                let e = DVector::from_fn(m, |_, _| standard_normal(&mut rng));
                let v = mk + sk * e;
                log_normal_density(&v, mk, sk) - log_normal_density(&v, &zero, &eye)
            })
            .collect();
        let (mc, se) = mean_se(samples.into_iter());
        worst_z = worst_z.max((kl_term(&state) - mc).abs() / se);
    }
    let at_prior = kl_term(&VariationalState::prior(DMatrix::zeros(4, 2), 3));
    verdict(
        worst_z < MC_SIGMAS && at_prior == 0.0,
        format!("10 random q: worst |error|/SE {worst_z:.2} (tol {MC_SIGMAS}); KL at prior = {at_prior}"),
    )
}

fn grounded_inverse(g: &SparseGraph, unlabelled: &[usize]) -> DMatrix<f64> {
    let u = unlabelled.len();
    let l = DMatrix::from_fn(u, u, |i, j| {
        let (a, b) = (unlabelled[i], unlabelled[j]);
        if i == j {
            g.degree(a) as f64
        } else if g.neighbors(a).contains(&b) {
            -1.0
        } else {
            0.0
        }
    });
    l.try_inverse().unwrap()
}

fn c10_sopt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(12..=40);
        let extra = rng.random_range(0..n);
        let g = random_connected(&mut rng, n, extra);
        let mut labelled = vec![rng.random_range(0..n)];
        let mut state = SoptState::new(&g, &labelled, 0.0).unwrap();
        for _ in 0..10 {
            let v = state.select().unwrap();
            state.update(v).unwrap();
            labelled.push(v);
            let fresh = grounded_inverse(&g, state.unlabelled());
            worst = worst.max((state.covariance() - fresh).amax());
        }
    }
    let path = SparseGraph::from_edge_list(3, &[(0, 1), (1, 2)]).unwrap();
    let pick = SoptState::new(&path, &[0], 0.0).unwrap().select().unwrap();
    let tie = SoptState::new(&path, &[1], 0.0).unwrap().select().unwrap();
    verdict(
        worst < SOPT_TOL && pick == 2 && tie == 0,
        format!("20 trajectories x 10 steps: max diff {worst:.2e} (tol {SOPT_TOL:.0e}); path picks {pick} from {{0}}, {tie} from {{1}}"),
    )
}

fn c11_separable_sbm() -> Outcome {
    let cfg = TrainConfig::default();
    let spec = KernelSpec::polynomial(1.0, 1.0).unwrap();

    let two_cliques = synth_sbm(&SbmConfig { n_per_block: 10, seed: 11, ..SbmConfig::default() }).unwrap();
    let prior = two_cliques.prior(spec, cfg.tfidf).unwrap();
    let train = two_cliques.labelled(&two_cliques.splits.train);
    let model = tracked_fit("c11 two cliques", &prior, &train, 2, &cfg);
    let test_acc = model.accuracy(&two_cliques.splits.test, &two_cliques.labels).unwrap();

    // active learning needs one component, so join the cliques with sparse cross edges
    let joined = synth_sbm(&SbmConfig { n_per_block: 10, p_out: 0.05, seed: 11, ..SbmConfig::default() }).unwrap();
    assert!(joined.graph.is_connected());
    let ggp = GgpClassifier {
        prior: joined.prior(spec, cfg.tfidf).unwrap(),
        n_classes: 2,
        config: cfg.clone(),
    };
    let active = ActiveConfig { acquisition: Acquisition::Sopt, budget: 5, delta: 0.0 };
    let seeds: Vec<u64> = (0..10).collect();
    let runs = active_loop(&joined.graph, &joined.labels, &ggp, &active, &seeds).unwrap();
    let reached: Vec<Option<usize>> = runs
        .iter()
        .map(|r| r.curve.points.iter().find(|p| p.1 == 1.0).map(|p| p.0 - 1))
        .collect();
    let all_reach = reached.iter().all(Option::is_some);
    let worst = reached.iter().flatten().max().copied().unwrap_or(usize::MAX);
    verdict(
        test_acc == 1.0 && all_reach,
        format!(
            "two-clique test accuracy {test_acc}; SOPT-GGP 100% on {}/{} seeds, worst after {worst} acquisitions (limit 4)",
            reached.iter().filter(|r| r.is_some()).count(),
            seeds.len()
        ),
    )
}

fn c12_elbo_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g = SparseGraph::from_edge_list(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 2)]).unwrap();
    let x = DMatrix::from_fn(6, 3, |i, j| if (i + j) % 3 == 0 { 1.0 } else { 0.2 * rng.random_range(0.0..1.0) });
    let features = to_sparse(&x);
    let prior = GgpPrior::new(Arc::new(g.clone()), Arc::new(features), KernelSpec::polynomial(1.0, 1.0).unwrap()).unwrap();
    let labelled = vec![(0, 0), (3, 1), (5, 1)];
    let cfg = TrainConfig { max_iters: 500, ..TrainConfig::default() };
    let model = tracked_fit("c12 toy", &prior, &labelled, 2, &cfg);

    // exact GGP marginal likelihood of the labels by sampling h from the prior
    let spec = *model.prior.spec();
    let p = dense_p(&g);
    let kxx = (&x * x.transpose()).map(|r| kernel(&spec, r));
    let khh = &p * kxx * p.transpose();
    let idx: Vec<usize> = labelled.iter().map(|l| l.0).collect();
    let kll = DMatrix::from_fn(idx.len(), idx.len(), |a, b| khh[(idx[a], idx[b])]);
    let chol = kll.cholesky().unwrap().unpack();
    let lik = model.likelihood;
    let weights: Vec<f64> = (0..IS_SAMPLES)
        .map(|_| {
            let h: Vec<DVector<f64>> = (0..2)
                .map(|_| &chol * DVector::from_fn(idx.len(), |_, _| standard_normal(&mut rng)))
                .collect();
            labelled
                .iter()
                .enumerate()
                .map(|(i, &(_, y))| {
                    let top = if h[1][i] > h[0][i] { 1 } else { 0 };
                    if top == y {
                        1.0 - lik.epsilon
                    } else {
                        lik.epsilon
                    }
                })
                .product()
        })
        .collect();
    let (mean_w, se_w) = mean_se(weights.into_iter());
    let log_ml = mean_w.ln();
    let se_log = se_w / mean_w;
    let bound = elbo(&model.prior, &model.state, &labelled, &lik, &model.quad).unwrap();
    let sound = bound <= log_ml + MC_SIGMAS * se_log;

    let runs = ELBO_RUNS.lock().unwrap();
    let increased = runs.iter().filter(|r| r.2 > r.1).count();
    let failures: Vec<&str> = runs.iter().filter(|r| r.2 <= r.1).map(|r| r.0.as_str()).collect();
    verdict(
        sound && failures.is_empty(),
        format!(
            "toy ELBO {bound:.4} <= log p(y) {log_ml:.4} ± {se_log:.4}: {sound}; ELBO increased on {increased}/{} fits{}",
            runs.len(),
            if failures.is_empty() { String::new() } else { format!(" (not: {failures:?})") }
        ),
    )
}

// ---------------------------------------------------------------- benchmarks

fn data_root() -> Option<PathBuf> {
    std::env::var_os("GGP_DATA_ROOT").map(PathBuf::from)
}

fn benchmark(name: &str) -> std::result::Result<Dataset, String> {
    let root = data_root().ok_or_else(|| "GGP_DATA_ROOT is not set".to_string())?;
    let dir = root.join(name);
    if !dir.is_dir() {
        return Err(format!("{} not found", dir.display()));
    }
    load_dataset(&dir).map_err(|e| e.to_string())
}

struct BenchRun {
    mean: f64,
    slowest: f64,
}

/// Mean test accuracy over 10 restarts of the poly3 GGP.
fn restarts(ds: &Dataset, with_val: bool) -> BenchRun {
    let mut train = ds.splits.train.clone();
    if with_val {
        train.extend_from_slice(&ds.splits.val);
    }
    let labelled = ds.labelled(&train);
    let mut accs = Vec::new();
    let mut slowest = 0.0f64;
    for seed in 0..10 {
        let cfg = TrainConfig { seed, ..TrainConfig::default() };
        let prior = ds.prior(KernelSpec::polynomial(1.0, 1.0).unwrap(), cfg.tfidf).unwrap();
        let t = Instant::now();
        let model = tracked_fit("benchmark", &prior, &labelled, ds.n_classes, &cfg);
        slowest = slowest.max(t.elapsed().as_secs_f64());
        accs.push(model.accuracy(&ds.splits.test, &ds.labels).unwrap());
    }
    BenchRun { mean: accs.iter().sum::<f64>() / accs.len() as f64, slowest }
}

static BENCH_CACHE: Mutex<Vec<(String, bool, f64)>> = Mutex::new(Vec::new());

fn cached_restarts(name: &str, ds: &Dataset, with_val: bool) -> BenchRun {
    let run = restarts(ds, with_val);
    BENCH_CACHE.lock().unwrap().push((name.to_string(), with_val, run.mean));
    run
}

fn within(x: f64, (target, tol): (f64, f64)) -> bool {
    (x - target).abs() <= tol
}

fn c1_cora() -> Outcome {
    let ds = match benchmark("cora") {
        Ok(d) => d,
        Err(e) => return Skip(e),
    };
    let run = cached_restarts("cora", &ds, false);
    verdict(
        within(run.mean, CORA_GGP) && run.slowest <= RESTART_SECONDS,
        format!(
            "Cora GGP mean test accuracy {:.4} (target {} ± {}), slowest restart {:.0}s (limit {RESTART_SECONDS}s)",
            run.mean, CORA_GGP.0, CORA_GGP.1, run.slowest
        ),
    )
}

fn c2_citeseer_pubmed() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, target) in [("citeseer", CITESEER_GGP), ("pubmed", PUBMED_GGP)] {
        let ds = match benchmark(name) {
            Ok(d) => d,
            Err(e) => return Skip(e),
        };
        let run = cached_restarts(name, &ds, false);
        ok &= within(run.mean, target);
        parts.push(format!("{name} {:.4} (target {} ± {})", run.mean, target.0, target.1));
    }
    verdict(ok, parts.join("; "))
}

fn c3_ggpx() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, target) in [("cora", CORA_GGPX), ("citeseer", CITESEER_GGPX), ("pubmed", PUBMED_GGPX)] {
        let ds = match benchmark(name) {
            Ok(d) => d,
            Err(e) => return Skip(e),
        };
        let base = BENCH_CACHE
            .lock()
            .unwrap()
            .iter()
            .find(|c| c.0 == name && !c.1)
            .map(|c| c.2);
        let base = base.unwrap_or_else(|| cached_restarts(name, &ds, false).mean);
        let run = cached_restarts(name, &ds, true);
        ok &= within(run.mean, target) && run.mean > base;
        parts.push(format!("{name} {:.4} (target {} ± {}, GGP {base:.4})", run.mean, target.0, target.1));
    }
    verdict(ok, parts.join("; "))
}

fn c4_active() -> Outcome {
    let ds = match benchmark("cora") {
        Ok(d) => d,
        Err(e) => return Skip(e),
    };
    let (lcc, _) = ds.restrict_to_largest_component().unwrap();
    let full = std::env::var("GGP_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let (n_seeds, budget) = if full { (10, 50) } else { (5, 30) };
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let cfg = TrainConfig::default();
    let ggp = GgpClassifier {
        prior: lcc.prior(KernelSpec::polynomial(1.0, 1.0).unwrap(), cfg.tfidf).unwrap(),
        n_classes: lcc.n_classes,
        config: cfg,
    };
    let lp = LpClassifier { graph: lcc.graph.clone(), n_classes: lcc.n_classes };
    let mut alcs = Vec::new();
    for (model, acq) in [
        (&ggp as &dyn NodeClassifier, Acquisition::Sopt),
        (&lp, Acquisition::Sopt),
        (&ggp, Acquisition::Random),
        (&lp, Acquisition::Random),
    ] {
        let active = ActiveConfig { acquisition: acq, budget, delta: 0.0 };
        let runs = active_loop(&lcc.graph, &lcc.labels, model, &active, &seeds).unwrap();
        let s = summarize(model.name(), &active, &runs).unwrap();
        debug_assert!(runs.iter().all(|r| alc(&r.curve).is_ok()));
        alcs.push(s.alc_mean);
    }
    let ordered = alcs[0] > alcs[1] && alcs[1] > alcs[2] && alcs[2] > alcs[3];
    let values_ok = !full || (within(alcs[0], ALC_SOPT_GGP) && within(alcs[3], ALC_RAND_LP));
    verdict(
        ordered && values_ok && lcc.n_nodes() == 2485,
        format!(
            "{} protocol ({n_seeds} seeds, budget {budget}) on {} nodes: SOPT-GGP {:.3}, SOPT-LP {:.3}, RAND-GGP {:.3}, RAND-LP {:.3}",
            if full { "full" } else { "reduced" },
            lcc.n_nodes(),
            alcs[0],
            alcs[1],
            alcs[2],
            alcs[3]
        ),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "Cora semi-supervised accuracy", c1_cora),
        (2, "Citeseer / Pubmed accuracy", c2_citeseer_pubmed),
        (3, "GGP-X accuracy", c3_ggpx),
        (4, "active learning ALC", c4_active),
        (5, "dense-oracle covariance", c5_dense_oracle),
        (6, "spectral identity", c6_spectral),
        (7, "ELBO gradient check", c7_gradcheck),
        (8, "likelihood Monte Carlo", c8_likelihood_mc),
        (9, "KL correctness", c9_kl_mc),
        (10, "SOPT incremental inverse", c10_sopt),
        (11, "separable block model", c11_separable_sbm),
        (12, "ELBO soundness", c12_elbo_soundness),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Skip(d) => ("SKIP", d),
        };
        println!("criterion {id:>2} [{tag}] {name}: {detail} ({:.1}s)", t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
