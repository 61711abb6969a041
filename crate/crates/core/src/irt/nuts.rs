//! No-U-turn Hamiltonian Monte Carlo (multinomial variant) with a diagonal
//! metric, dual-averaging step-size adaptation and windowed metric warmup.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::diagnostics::{diagnose, ParamDiagnostics};
use super::map::{fit_map, MapOptions};
use super::model::{evaluate, Model, ModelData, UnitMeta, TRAITS};
use super::IrtError;
use crate::ordinal::{kappa_from_raw, THRESHOLDS};

/// A differentiable log density on ℝᵈ.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Returns `log p(x)` and writes its gradient into `grad`.
    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, IrtError>;
}

impl LogDensity for ModelData {
    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, IrtError> {
        evaluate(self, x, Some(grad)).map(|p| p.total())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcOptions {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    pub seed: u64,
    /// Target mean acceptance statistic for step-size adaptation.
    pub target_accept: f64,
    pub max_treedepth: usize,
    /// Relative uniform jitter of the step size per transition (0 disables).
    pub step_jitter: f64,
    /// Standard deviation of the jitter added to the mode for each chain's start.
    pub init_jitter: f64,
    /// Divergent fraction of kept draws above which the fit fails its gate.
    pub max_divergent_fraction: f64,
    /// R̂ threshold and the fraction of parameters that must fall below it.
    pub rhat_threshold: f64,
    pub rhat_pass_fraction: f64,
    pub map: MapOptions,
}

impl Default for HmcOptions {
    fn default() -> Self {
        HmcOptions {
            chains: 4,
            warmup: 200,
            draws: 500,
            seed: 0,
            target_accept: 0.95,
            max_treedepth: 10,
            step_jitter: 0.0,
            init_jitter: 0.1,
            max_divergent_fraction: 0.1,
            rhat_threshold: 1.01,
            rhat_pass_fraction: 0.99,
            map: MapOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub step_size: f64,
    pub divergences: usize,
    pub mean_accept: f64,
    pub mean_treedepth: f64,
    pub treedepth_hits: usize,
    pub leapfrog_steps: usize,
}

/// Raw output of one chain: kept draws in the unconstrained space.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub inv_metric: Vec<f64>,
    pub stats: ChainStats,
}

#[derive(Debug, Clone)]
struct Point {
    q: Vec<f64>,
    p: Vec<f64>,
    g: Vec<f64>,
    logp: f64,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Divergence threshold on the energy error.
const MAX_DELTA_H: f64 = 1000.0;

/// Dual averaging of the log step size towards a target acceptance.
#[derive(Debug, Clone)]
struct StepSizeAdapter {
    mu: f64,
    target: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

impl StepSizeAdapter {
    const GAMMA: f64 = 0.05;
    const KAPPA: f64 = 0.75;
    const T0: f64 = 10.0;

    fn new(target: f64) -> Self {
        StepSizeAdapter { mu: 0.0, target, counter: 0.0, s_bar: 0.0, x_bar: 0.0 }
    }

    fn restart(&mut self, eps: f64) {
        self.mu = (10.0 * eps).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    fn learn(&mut self, accept: f64) -> f64 {
        self.counter += 1.0;
        let accept = accept.min(1.0);
        let eta = 1.0 / (self.counter + Self::T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept);
        let x = self.mu - self.s_bar * self.counter.sqrt() / Self::GAMMA;
        let w = self.counter.powf(-Self::KAPPA);
        self.x_bar = (1.0 - w) * self.x_bar + w * x;
        x.exp()
    }

    fn final_step(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Warmup schedule: initial fast interval, doubling slow windows for the
/// metric, final fast interval (75 / 25 / 50 by default, shrunk to
/// 15% / 75% / 10% when the warmup is too short).
#[derive(Debug, Clone)]
struct Windows {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
}

impl Windows {
    fn new(warmup: usize) -> Self {
        let (mut init, mut term, mut base) = (75, 50, 25);
        if init + term + base > warmup {
            init = (0.15 * warmup as f64) as usize;
            term = (0.1 * warmup as f64) as usize;
            base = warmup.saturating_sub(init + term);
        }
        Windows {
            warmup,
            init_buffer: init,
            term_buffer: term,
            window_size: base,
            next_window: (init + base).saturating_sub(1),
            counter: 0,
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer && self.counter < self.warmup - self.term_buffer && self.counter != self.warmup
    }

    fn end_of_window(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.warmup - self.term_buffer {
            self.next_window = last;
        }
    }
}

/// Welford running variance.
#[derive(Debug, Clone)]
struct VarianceEstimator {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VarianceEstimator {
    fn new(dim: usize) -> Self {
        VarianceEstimator { n: 0.0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn add(&mut self, q: &[f64]) {
        self.n += 1.0;
        for (k, &v) in q.iter().enumerate() {
            let d = v - self.mean[k];
            self.mean[k] += d / self.n;
            self.m2[k] += d * (v - self.mean[k]);
        }
    }

    /// Regularised variance, shrunk towards 1e-3.
    fn variance(&self) -> Vec<f64> {
        let n = self.n;
        self.m2.iter().map(|m| (n / (n + 5.0)) * (m / (n - 1.0)) + 1e-3 * (5.0 / (n + 5.0))).collect()
    }
}

struct Sampler<'a, T: LogDensity> {
    target: &'a T,
    inv_metric: Vec<f64>,
    eps: f64,
    max_depth: usize,
    jitter: f64,
    rng: ChaCha8Rng,
}

impl<T: LogDensity> Sampler<'_, T> {
    fn eval(&self, z: &mut Point) {
        match self.target.logp_grad(&z.q, &mut z.g) {
            Ok(lp) if lp.is_finite() => z.logp = lp,
            _ => z.logp = f64::NEG_INFINITY,
        }
    }

    fn hamiltonian(&self, z: &Point) -> f64 {
        let kinetic: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum::<f64>() * 0.5;
        let h = -z.logp + kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    fn p_sharp(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    fn sample_momentum(&mut self, z: &mut Point) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            *p = self.rng.sample::<f64, _>(StandardNormal) / m.sqrt();
        }
    }

    fn leapfrog(&self, z: &mut Point, eps: f64) {
        for (p, g) in z.p.iter_mut().zip(&z.g) {
            *p += 0.5 * eps * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += eps * m * p;
        }
        self.eval(z);
        if z.logp.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.g) {
                *p += 0.5 * eps * g;
            }
        }
    }

    /// Doubling search for a step size whose single-step acceptance crosses 0.8.
    fn init_stepsize(&mut self, z: &Point) -> Result<(), IrtError> {
        let log8 = 0.8f64.ln();
        let mut w = z.clone();
        self.sample_momentum(&mut w);
        let h0 = self.hamiltonian(&w);
        self.leapfrog(&mut w, self.eps);
        let delta = h0 - self.hamiltonian(&w);
        let direction = if delta > log8 { 1 } else { -1 };
        loop {
            let mut w = z.clone();
            self.sample_momentum(&mut w);
            let h0 = self.hamiltonian(&w);
            self.leapfrog(&mut w, self.eps);
            let delta = h0 - self.hamiltonian(&w);
            if (direction == 1 && !(delta > log8)) || (direction == -1 && !(delta < log8)) {
                return Ok(());
            }
            self.eps = if direction == 1 { 2.0 * self.eps } else { 0.5 * self.eps };
            if self.eps > 1e7 {
                return Err(IrtError::Sampler("posterior is improper: step size diverged".into()));
            }
            if self.eps == 0.0 {
                return Err(IrtError::Sampler("no acceptable step size".into()));
            }
        }
    }

    /// One NUTS transition from `z`; returns the new point, its acceptance
    /// statistic, tree depth and whether the trajectory diverged.
    fn transition(&mut self, z0: &Point) -> (Point, f64, usize, bool, usize) {
        let nominal = self.eps;
        if self.jitter > 0.0 {
            self.eps = nominal * (1.0 + self.jitter * (2.0 * self.rng.random::<f64>() - 1.0));
        }
        let out = self.nuts(z0);
        self.eps = nominal;
        out
    }

    fn nuts(&mut self, z0: &Point) -> (Point, f64, usize, bool, usize) {
        let mut z = z0.clone();
        self.sample_momentum(&mut z);
        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let mut p_fwd_fwd = z.p.clone();
        let mut p_sharp_fwd_fwd = self.p_sharp(&z.p);
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp_fwd_fwd.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp_fwd_fwd.clone();
        let mut p_bck_bck = z.p.clone();
        let mut p_sharp_bck_bck = p_sharp_fwd_fwd.clone();

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let h0 = self.hamiltonian(&z);
        let mut n_leapfrog = 0;
        let mut sum_metro = 0.0;
        let mut depth = 0;
        let mut divergent = false;
        let dim = z.q.len();

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut lsw_subtree = f64::NEG_INFINITY;
            let valid = if self.rng.random::<f64>() > 0.5 {
                rho_bck.clone_from(&rho);
                p_bck_fwd.clone_from(&p_fwd_bck);
                p_sharp_bck_fwd.clone_from(&p_sharp_fwd_bck);
                let mut cur = z_fwd.clone();
                let ok = self.build_tree(
                    depth,
                    &mut cur,
                    &mut z_propose,
                    &mut p_sharp_fwd_bck,
                    &mut p_sharp_fwd_fwd,
                    &mut rho_fwd,
                    &mut p_fwd_bck,
                    &mut p_fwd_fwd,
                    h0,
                    1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    &mut divergent,
                );
                z_fwd = cur;
                ok
            } else {
                rho_fwd.clone_from(&rho);
                p_fwd_bck.clone_from(&p_bck_fwd);
                p_sharp_fwd_bck.clone_from(&p_sharp_bck_fwd);
                let mut cur = z_bck.clone();
                let ok = self.build_tree(
                    depth,
                    &mut cur,
                    &mut z_propose,
                    &mut p_sharp_bck_fwd,
                    &mut p_sharp_bck_bck,
                    &mut rho_bck,
                    &mut p_bck_fwd,
                    &mut p_bck_bck,
                    h0,
                    -1.0,
                    &mut n_leapfrog,
                    &mut lsw_subtree,
                    &mut sum_metro,
                    &mut divergent,
                );
                z_bck = cur;
                ok
            };
            if !valid {
                break;
            }
            depth += 1;
            if lsw_subtree > log_sum_weight || self.rng.random::<f64>() < (lsw_subtree - log_sum_weight).exp() {
                z_sample = z_propose.clone();
            }
            log_sum_weight = log_sum_exp(log_sum_weight, lsw_subtree);
            rho = add(&rho_bck, &rho_fwd);
            let mut persist = criterion(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            persist &= criterion(&p_sharp_bck_bck, &p_sharp_fwd_bck, &add(&rho_bck, &p_fwd_bck));
            persist &= criterion(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &add(&rho_fwd, &p_bck_fwd));
            if !persist {
                break;
            }
        }
        let accept = if n_leapfrog > 0 { sum_metro / n_leapfrog as f64 } else { 0.0 };
        (z_sample, accept, depth, divergent, n_leapfrog)
    }

    #[allow(clippy::too_many_arguments)]
    fn build_tree(
        &mut self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        p_sharp_beg: &mut Vec<f64>,
        p_sharp_end: &mut Vec<f64>,
        rho: &mut Vec<f64>,
        p_beg: &mut Vec<f64>,
        p_end: &mut Vec<f64>,
        h0: f64,
        sign: f64,
        n_leapfrog: &mut usize,
        log_sum_weight: &mut f64,
        sum_metro: &mut f64,
        divergent: &mut bool,
    ) -> bool {
        if depth == 0 {
            self.leapfrog(z, sign * self.eps);
            *n_leapfrog += 1;
            let h = self.hamiltonian(z);
            if h - h0 > MAX_DELTA_H {
                *divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, h0 - h);
            *sum_metro += if h0 - h > 0.0 { 1.0 } else { (h0 - h).exp() };
            z_propose.clone_from(z);
            *p_sharp_beg = self.p_sharp(&z.p);
            p_sharp_end.clone_from(p_sharp_beg);
            for (r, p) in rho.iter_mut().zip(&z.p) {
                *r += p;
            }
            p_beg.clone_from(&z.p);
            p_end.clone_from(p_beg);
            return !*divergent;
        }
        let dim = z.q.len();
        let mut lsw_init = f64::NEG_INFINITY;
        let mut p_init_end = vec![0.0; dim];
        let mut p_sharp_init_end = vec![0.0; dim];
        let mut rho_init = vec![0.0; dim];
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            p_sharp_beg,
            &mut p_sharp_init_end,
            &mut rho_init,
            p_beg,
            &mut p_init_end,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_init,
            sum_metro,
            divergent,
        );
        if !valid_init {
            return false;
        }
        let mut z_propose_final = z.clone();
        let mut lsw_final = f64::NEG_INFINITY;
        let mut p_final_beg = vec![0.0; dim];
        let mut p_sharp_final_beg = vec![0.0; dim];
        let mut rho_final = vec![0.0; dim];
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut p_sharp_final_beg,
            p_sharp_end,
            &mut rho_final,
            &mut p_final_beg,
            p_end,
            h0,
            sign,
            n_leapfrog,
            &mut lsw_final,
            sum_metro,
            divergent,
        );
        if !valid_final {
            return false;
        }
        let lsw_subtree = log_sum_exp(lsw_init, lsw_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, lsw_subtree);
        if lsw_final > lsw_subtree || self.rng.random::<f64>() < (lsw_final - lsw_subtree).exp() {
            *z_propose = z_propose_final;
        }
        let rho_subtree = add(&rho_init, &rho_final);
        for (r, s) in rho.iter_mut().zip(&rho_subtree) {
            *r += s;
        }
        let mut persist = criterion(p_sharp_beg, p_sharp_end, &rho_subtree);
        persist &= criterion(p_sharp_beg, &p_sharp_final_beg, &add(&rho_init, &p_final_beg));
        persist &= criterion(&p_sharp_init_end, p_sharp_end, &add(&rho_final, &p_init_end));
        persist
    }
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Runs one chain (warmup then kept draws) from `x0` on RNG stream `stream`.
pub fn sample_chain<T: LogDensity>(
    target: &T,
    x0: &[f64],
    opts: &HmcOptions,
    stream: u64,
) -> Result<ChainOutput, IrtError> {
    let dim = target.dim();
    if x0.len() != dim {
        return Err(IrtError::Dimension { expected: dim, got: x0.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let mut s = Sampler { target, inv_metric: vec![1.0; dim], eps: 1.0, max_depth: opts.max_treedepth, jitter: opts.step_jitter, rng };
    let mut z = Point { q: x0.to_vec(), p: vec![0.0; dim], g: vec![0.0; dim], logp: 0.0 };
    s.eval(&mut z);
    if !z.logp.is_finite() {
        return Err(IrtError::Sampler("initial point has zero density".into()));
    }
    s.init_stepsize(&z)?;
    let mut adapter = StepSizeAdapter::new(opts.target_accept);
    adapter.restart(s.eps);
    let mut windows = Windows::new(opts.warmup);
    let mut estimator = VarianceEstimator::new(dim);

    for _ in 0..opts.warmup {
        let (next, accept, ..) = s.transition(&z);
        z = next;
        s.eps = adapter.learn(accept);
        if windows.in_window() {
            estimator.add(&z.q);
        }
        if windows.end_of_window() {
            windows.compute_next_window();
            s.inv_metric = estimator.variance();
            estimator = VarianceEstimator::new(dim);
            s.init_stepsize(&z)?;
            adapter.restart(s.eps);
        }
        windows.counter += 1;
    }
    if opts.warmup > 0 {
        s.eps = adapter.final_step();
    }

    let mut draws = Vec::with_capacity(opts.draws);
    let (mut divergences, mut hits, mut steps) = (0, 0, 0);
    let (mut accept_sum, mut depth_sum) = (0.0, 0.0);
    for _ in 0..opts.draws {
        let (next, accept, depth, divergent, n) = s.transition(&z);
        z = next;
        draws.push(z.q.clone());
        accept_sum += accept;
        depth_sum += depth as f64;
        divergences += usize::from(divergent);
        hits += usize::from(depth >= opts.max_treedepth);
        steps += n;
    }
    let k = opts.draws.max(1) as f64;
    Ok(ChainOutput {
        draws,
        inv_metric: s.inv_metric,
        stats: ChainStats {
            step_size: s.eps,
            divergences,
            mean_accept: accept_sum / k,
            mean_treedepth: depth_sum / k,
            treedepth_hits: hits,
            leapfrog_steps: steps,
        },
    })
}

/// Runs `inits.len()` chains in parallel; chain `c` uses RNG stream `c`.
pub fn sample_chains<T: LogDensity>(
    target: &T,
    inits: &[Vec<f64>],
    opts: &HmcOptions,
) -> Result<Vec<ChainOutput>, IrtError> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = inits
            .iter()
            .enumerate()
            .map(|(c, x0)| scope.spawn(move || sample_chain(target, x0, opts, c as u64)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("sampler thread panicked")).collect()
    })
}

/// Gate summary of a posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub parameters: usize,
    pub max_rhat: f64,
    /// Fraction of parameters with R̂ below the threshold (NaN counts as failing).
    pub rhat_pass_fraction: f64,
    pub rhat_threshold: f64,
    pub min_ess_bulk: f64,
    pub divergences: usize,
    pub divergent_fraction: f64,
    pub rhat_ok: bool,
    pub divergences_ok: bool,
}

impl DiagnosticsSummary {
    pub fn passed(&self) -> bool {
        self.rhat_ok && self.divergences_ok
    }
}

/// Posterior draws in the constrained parameterisation (θ, a⁺, κ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior {
    pub model: Model,
    pub units: Vec<UnitMeta>,
    pub param_names: Vec<String>,
    /// `draws[chain][iteration][parameter]`.
    pub draws: Vec<Vec<Vec<f64>>>,
    pub theta_mean: Vec<[f64; TRAITS]>,
    pub a_plus_mean: Vec<f64>,
    pub kappa_mean: Vec<[f64; THRESHOLDS]>,
    pub diagnostics: Vec<ParamDiagnostics>,
    pub chains: Vec<ChainStats>,
    pub summary: DiagnosticsSummary,
    pub options: HmcOptions,
}

impl Posterior {
    /// Draws of one parameter, one vector per chain.
    pub fn param_chains(&self, k: usize) -> Vec<Vec<f64>> {
        self.draws.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect()
    }
}

fn param_names(data: &ModelData) -> Vec<String> {
    let mut names = Vec::with_capacity(data.layout().dim());
    for (i, _) in data.units().iter().enumerate() {
        for t in crate::inventory::TraitDomain::ALL {
            names.push(format!("theta[{i},{}]", t.label()));
        }
    }
    for s in data.statements() {
        names.push(format!("a_plus[{}]", s.id));
    }
    for c in data.column_ids() {
        for k in 1..=THRESHOLDS {
            names.push(format!("kappa[{c},{k}]"));
        }
    }
    names
}

fn constrain(data: &ModelData, x: &[f64]) -> Vec<f64> {
    let layout = data.layout();
    let mut out = x.to_vec();
    for j in 0..layout.statements {
        out[layout.log_a(j)] = x[layout.log_a(j)].exp();
    }
    for g in 0..layout.groups {
        let r = layout.raw(g);
        let k = kappa_from_raw(&x[r.clone()]);
        out[r].copy_from_slice(&k);
    }
    out
}

/// Full-posterior fit: chains start from jittered copies of the posterior
/// mode; θ̂ is the posterior mean.
pub fn fit_hmc(data: &ModelData, opts: &HmcOptions) -> Result<Posterior, IrtError> {
    if data.units().is_empty() {
        return Err(IrtError::EmptyData);
    }
    if opts.chains < 2 {
        return Err(super::DiagnosticsError::SingleChain(opts.chains).into());
    }
    let mode = fit_map(data, &opts.map)?;
    let inits: Vec<Vec<f64>> = (0..opts.chains)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_1a17);
            rng.set_stream(c as u64);
            mode.x.iter().map(|v| v + opts.init_jitter * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect();
    let chains = sample_chains(data, &inits, opts)?;
    posterior_from_chains(data, chains, opts)
}

pub fn posterior_from_chains(
    data: &ModelData,
    chains: Vec<ChainOutput>,
    opts: &HmcOptions,
) -> Result<Posterior, IrtError> {
    let layout = data.layout();
    let dim = layout.dim();
    let draws: Vec<Vec<Vec<f64>>> =
        chains.iter().map(|c| c.draws.iter().map(|x| constrain(data, x)).collect()).collect();
    let total = draws.iter().map(Vec::len).sum::<usize>().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for d in draws.iter().flatten() {
        for (m, v) in mean.iter_mut().zip(d) {
            *m += v / total;
        }
    }
    let diagnostics: Vec<ParamDiagnostics> = {
        let per_param = |k: usize| -> Vec<Vec<f64>> { draws.iter().map(|c| c.iter().map(|d| d[k]).collect()).collect() };
        (0..dim).map(|k| diagnose(&per_param(k))).collect::<Result<_, _>>()?
    };
    let passing = diagnostics.iter().filter(|d| d.rhat < opts.rhat_threshold).count();
    let divergences: usize = chains.iter().map(|c| c.stats.divergences).sum();
    let divergent_fraction = divergences as f64 / total;
    let rhat_pass_fraction = passing as f64 / dim.max(1) as f64;
    let summary = DiagnosticsSummary {
        parameters: dim,
        max_rhat: diagnostics.iter().map(|d| d.rhat).fold(f64::NEG_INFINITY, |a, b| if b.is_nan() { f64::NAN } else { a.max(b) }),
        rhat_pass_fraction,
        rhat_threshold: opts.rhat_threshold,
        min_ess_bulk: diagnostics.iter().map(|d| d.ess_bulk).fold(f64::INFINITY, f64::min),
        divergences,
        divergent_fraction,
        rhat_ok: rhat_pass_fraction >= opts.rhat_pass_fraction,
        divergences_ok: divergent_fraction <= opts.max_divergent_fraction,
    };
    Ok(Posterior {
        model: data.model(),
        units: data.units().to_vec(),
        param_names: param_names(data),
        theta_mean: (0..layout.units).map(|i| std::array::from_fn(|t| mean[layout.theta(i, t)])).collect(),
        a_plus_mean: (0..layout.statements).map(|j| mean[layout.log_a(j)]).collect(),
        kappa_mean: (0..layout.groups)
            .map(|g| {
                let r = layout.raw(g);
                std::array::from_fn(|k| mean[r.start + k])
            })
            .collect(),
        draws,
        diagnostics,
        chains: chains.into_iter().map(|c| c.stats).collect(),
        summary,
        options: opts.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::model::tests::random_data;

    /// Independent normals with scales 1..d.
    struct Gaussian {
        scales: Vec<f64>,
    }

    impl LogDensity for Gaussian {
        fn dim(&self) -> usize {
            self.scales.len()
        }

        fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, IrtError> {
            let mut lp = 0.0;
            for ((g, v), s) in grad.iter_mut().zip(x).zip(&self.scales) {
                lp -= 0.5 * (v / s).powi(2);
                *g = -v / (s * s);
            }
            Ok(lp)
        }
    }

    #[test]
    fn warmup_windows_follow_the_default_schedule() {
        let mut w = Windows::new(200);
        let mut ends = vec![];
        let mut first = None;
        for c in 0..200 {
            w.counter = c;
            if w.in_window() && first.is_none() {
                first = Some(c);
            }
            if w.end_of_window() {
                ends.push(c);
                w.compute_next_window();
            }
        }
        assert_eq!(first, Some(75));
        assert_eq!(ends, vec![99, 149]);
        let mut short = Windows::new(100);
        assert_eq!((short.init_buffer, short.term_buffer, short.window_size), (15, 10, 75));
        short.counter = 89;
        assert!(short.end_of_window());
    }

    #[test]
    fn samples_a_scaled_gaussian() {
        let target = Gaussian { scales: vec![1.0, 3.0, 0.2, 10.0, 1.0, 1.0, 0.5, 2.0] };
        let opts = HmcOptions { seed: 7, ..Default::default() };
        let inits = vec![vec![0.5; 8]; 4];
        let chains = sample_chains(&target, &inits, &opts).unwrap();
        for (k, s) in target.scales.iter().enumerate() {
            let per_chain: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|d| d[k]).collect()).collect();
            let all: Vec<f64> = per_chain.iter().flatten().copied().collect();
            let m = crate::stats::mean(&all);
            let sd = crate::stats::sample_sd(&all);
            assert!(m.abs() < 0.15 * s, "param {k}: mean {m}");
            assert!((sd / s - 1.0).abs() < 0.12, "param {k}: sd {sd}");
            // NUTS mixes |x| more slowly than x on Gaussians (tail ESS ≈ 900 of
            // 2000), so a single R̂ exceeds 1.01 about 1% of the time
            let r = crate::irt::diagnostics::rhat(&per_chain).unwrap();
            assert!(r < 1.02, "param {k}: rhat {r}");
            assert!(crate::irt::diagnostics::ess_bulk(&per_chain).unwrap() > 1000.0);
        }
        for c in &chains {
            assert_eq!(c.stats.divergences, 0);
            assert!(c.stats.mean_accept > 0.85, "{:?}", c.stats);
            // the adapted metric recovers the variances
            assert!((c.inv_metric[3] / 100.0 - 1.0).abs() < 0.6, "{:?}", c.inv_metric);
        }
    }

    #[test]
    fn same_seed_gives_identical_draws() {
        let data = random_data(Model::Grm, 5);
        let opts = HmcOptions { warmup: 60, draws: 40, seed: 3, ..Default::default() };
        let a = fit_hmc(&data, &opts).unwrap();
        let b = fit_hmc(&data, &opts).unwrap();
        assert_eq!(a.draws, b.draws);
        let c = fit_hmc(&data, &HmcOptions { seed: 4, ..opts }).unwrap();
        assert_ne!(a.draws, c.draws);
        assert_eq!(a.draws.len(), 4);
        assert!(a.draws.iter().all(|c| c.len() == 40));
        assert_eq!(a.param_names.len(), data.layout().dim());
        assert!(a.a_plus_mean.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn single_chain_is_rejected() {
        let data = random_data(Model::Gfc, 1);
        let opts = HmcOptions { chains: 1, ..Default::default() };
        assert!(matches!(fit_hmc(&data, &opts), Err(IrtError::Diagnostics(_))));
    }
}
