//! Posterior-mode estimation with L-BFGS from several starting points.

use std::cell::RefCell;

use argmin::core::{CostFunction, Executor, Gradient, State};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::model::{default_init, evaluate, ModelData, ParamVector, TRAITS};
use super::IrtError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapOptions {
    pub starts: usize,
    /// L-BFGS iterations per run; a run that stops early is restarted from its
    /// best point with a fresh memory up to `restarts` times.
    pub max_iters: u64,
    pub restarts: usize,
    /// Convergence threshold on the Euclidean norm of the gradient.
    pub grad_tol: f64,
    /// Maximum truncated-Newton refinement steps after L-BFGS.
    pub newton_steps: usize,
    pub memory: usize,
    pub seed: u64,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions { starts: 4, max_iters: 3000, restarts: 6, grad_tol: 1e-6, newton_steps: 8, memory: 12, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub log_posterior: f64,
    pub grad_norm: f64,
    pub iterations: u64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapFit {
    /// Unconstrained mode.
    pub x: Vec<f64>,
    pub params: ParamVector,
    pub log_posterior: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub best_start: usize,
    pub starts: Vec<StartSummary>,
}

/// Negative log posterior as an argmin problem; remembers the best point it
/// has evaluated so a failed line search never loses progress.
struct Objective<'a> {
    data: &'a ModelData,
    best: &'a RefCell<Option<(f64, Vec<f64>)>>,
}

impl Objective<'_> {
    fn record(&self, x: &[f64], cost: f64) {
        let mut best = self.best.borrow_mut();
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            *best = Some((cost, x.to_vec()));
        }
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, x: &Self::Param) -> Result<f64, argmin::core::Error> {
        // Non-finite points (overflow during a long trial step) count as +∞ so
        // the line search backs off.
        let c = match evaluate(self.data, x, None) {
            Ok(p) => -p.total(),
            Err(_) => f64::INFINITY,
        };
        if c.is_finite() {
            self.record(x, c);
        }
        Ok(c)
    }
}

impl Gradient for Objective<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    fn gradient(&self, x: &Self::Param) -> Result<Vec<f64>, argmin::core::Error> {
        let mut g = vec![0.0; x.len()];
        match evaluate(self.data, x, Some(&mut g)) {
            Ok(p) => {
                self.record(x, -p.total());
                Ok(g.into_iter().map(|v| -v).collect())
            }
            Err(e) => Err(argmin::core::Error::msg(e.to_string())),
        }
    }
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn grad_norm(data: &ModelData, x: &[f64]) -> Result<(f64, f64), IrtError> {
    let mut g = vec![0.0; x.len()];
    let lp = evaluate(data, x, Some(&mut g))?.total();
    Ok((lp, norm(&g)))
}

fn gradient(data: &ModelData, x: &[f64]) -> Option<(f64, Vec<f64>)> {
    let mut g = vec![0.0; x.len()];
    evaluate(data, x, Some(&mut g)).ok().map(|p| (p.total(), g))
}

/// `−∇² log p · v` by central differences of the analytic gradient.
fn neg_hessian_vec(data: &ModelData, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
    let nv = norm(v);
    if nv == 0.0 {
        return Some(vec![0.0; v.len()]);
    }
    let h = 1e-5 / nv;
    let plus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let minus: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let (_, gp) = gradient(data, &plus)?;
    let (_, gm) = gradient(data, &minus)?;
    Some(gp.iter().zip(&gm).map(|(p, m)| -(p - m) / (2.0 * h)).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Truncated-Newton refinement that only uses gradients. Close to the mode
/// the log posterior changes by less than its rounding error, which stalls
/// value-based line searches, while the gradient is still accurate; steps
/// are accepted when they shrink the gradient norm without lowering the
/// log posterior beyond rounding.
fn newton_polish(data: &ModelData, mut x: Vec<f64>, mut lp: f64, mut gn: f64, opts: &MapOptions) -> (Vec<f64>, f64, f64) {
    let target = opts.grad_tol * 1e-3;
    let slack = 1e-9 * lp.abs().max(1.0);
    for _ in 0..opts.newton_steps {
        if gn < target {
            break;
        }
        let Some((_, g)) = gradient(data, &x) else { break };
        // conjugate gradients on (−H) d = g
        let mut d = vec![0.0; x.len()];
        let mut r = g.clone();
        let mut p = r.clone();
        let mut rr = dot(&r, &r);
        for k in 0..x.len().min(500) {
            let Some(ap) = neg_hessian_vec(data, &x, &p) else { break };
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                if k == 0 {
                    d.clone_from(&g);
                }
                break;
            }
            let alpha = rr / pap;
            for i in 0..d.len() {
                d[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() < 1e-4 * gn {
                break;
            }
            let beta = rr_new / rr;
            for i in 0..p.len() {
                p[i] = r[i] + beta * p[i];
            }
            rr = rr_new;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let cand: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            if let Some((clp, cg)) = gradient(data, &cand) {
                let cgn = norm(&cg);
                if cgn < gn && clp >= lp - slack {
                    x = cand;
                    lp = clp;
                    gn = cgn;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (x, lp, gn)
}

/// One L-BFGS ascent from `x0` with restarts from the best point seen,
/// followed by a gradient-only Newton refinement.
pub fn ascend(data: &ModelData, x0: Vec<f64>, opts: &MapOptions) -> Result<(Vec<f64>, StartSummary), IrtError> {
    let mut x = x0;
    let (mut lp, mut gn) = grad_norm(data, &x)?;
    let mut iterations = 0;
    let lbfgs_tol = opts.grad_tol * 0.1;
    for _ in 0..=opts.restarts {
        if gn < lbfgs_tol {
            break;
        }
        let best = RefCell::new(None);
        let problem = Objective { data, best: &best };
        let linesearch = MoreThuenteLineSearch::new();
        let solver = LBFGS::new(linesearch, opts.memory)
            .with_tolerance_grad(lbfgs_tol)
            .and_then(|s| s.with_tolerance_cost(0.0))
            .map_err(|e| IrtError::Optimizer(e.to_string()))?;
        let run = Executor::new(problem, solver).configure(|s| s.param(x.clone()).max_iters(opts.max_iters)).run();
        match &run {
            Ok(res) => {
                iterations += res.state().get_iter();
                log::debug!(
                    "L-BFGS stopped: {:?} after {} iterations",
                    res.state().get_termination_reason(),
                    res.state().get_iter()
                );
            }
            Err(e) => log::debug!("L-BFGS failed: {e}"),
        }
        // a failed line search still leaves the best evaluated point behind
        let Some((_, cand)) = best.into_inner() else { break };
        let (clp, cgn) = grad_norm(data, &cand)?;
        if !(clp > lp || (clp == lp && cgn < gn)) {
            break;
        }
        x = cand;
        lp = clp;
        gn = cgn;
    }
    let (x, lp, gn) = newton_polish(data, x, lp, gn, opts);
    Ok((x, StartSummary { log_posterior: lp, grad_norm: gn, iterations, converged: gn < opts.grad_tol }))
}

/// Starting points: the deterministic default, then jittered copies.
pub fn start_points(data: &ModelData, opts: &MapOptions) -> Vec<Vec<f64>> {
    let base = default_init(data);
    let layout = data.layout();
    (0..opts.starts.max(1))
        .map(|s| {
            if s == 0 {
                return base.clone();
            }
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(s as u64);
            let mut x = base.clone();
            for (k, v) in x.iter_mut().enumerate() {
                let sd = if k < layout.units * TRAITS { 0.5 } else { 0.1 };
                *v += sd * rng.sample::<f64, _>(StandardNormal);
            }
            x
        })
        .collect()
}

/// Posterior mode from multiple starts, keeping the highest log posterior.
/// Non-convergence is reported in [`MapFit::converged`], never hidden.
pub fn fit_map(data: &ModelData, opts: &MapOptions) -> Result<MapFit, IrtError> {
    if data.units().is_empty() {
        return Err(IrtError::EmptyData);
    }
    let starts = start_points(data, opts);
    let results: Vec<Result<(Vec<f64>, StartSummary), IrtError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = starts.into_iter().map(|x0| scope.spawn(move || ascend(data, x0, opts))).collect();
        handles.into_iter().map(|h| h.join().expect("MAP worker panicked")).collect()
    });
    let mut xs = Vec::with_capacity(results.len());
    let mut summaries = Vec::with_capacity(results.len());
    for r in results {
        let (x, s) = r?;
        xs.push(x);
        summaries.push(s);
    }
    let best_start =
        (0..summaries.len()).fold(0, |b, i| if summaries[i].log_posterior > summaries[b].log_posterior { i } else { b });
    let x = xs.swap_remove(best_start);
    let s = &summaries[best_start];
    Ok(MapFit {
        params: ParamVector::from_unconstrained(&data.layout(), &x)?,
        log_posterior: s.log_posterior,
        grad_norm: s.grad_norm,
        converged: s.converged,
        best_start,
        x,
        starts: summaries,
    })
}
