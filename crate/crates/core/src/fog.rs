//! Task offloading to fog nodes as an iterated price/demand negotiation.
//!
//! One offloading user splits a divisible task across `M` fog nodes under a
//! budget. Each round the user picks demands for the announced prices, then
//! every node adapts its price. Either side can be made imprecise with
//! multiplicative uniform noise on its best response, and either side can
//! stabilize itself by executing the running mean of its own noisy best
//! responses instead of the latest one.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noisy demands are clamped at this floor to stay inside the log domain.
pub const DEMAND_FLOOR: f64 = 1e-9;

/// Default per-node constants, cycled when `M` exceeds their length.
const DEFAULT_ALPHA: [f64; 4] = [1.0, 1.5, 2.0, 2.5];
const DEFAULT_C_LOWER: [f64; 4] = [1.0, 1.2, 0.8, 1.0];
const DEFAULT_KAPPA: [f64; 4] = [1.0, 0.9, 0.8, 0.7];

pub const DEFAULT_PRICE_CEILING_FACTOR: f64 = 10.0;
pub const DEFAULT_ETA: f64 = 10.0;
pub const DEFAULT_MAX_ROUNDS: usize = 2000;
pub const DEFAULT_CONV_TOL: f64 = 1e-4;
pub const DEFAULT_CONV_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FogScenario {
    #[serde(rename = "M")]
    pub m: usize,
    /// Utility scale of the offloading user.
    pub a: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Unit cost of each node, also its price floor.
    pub c_lower: Vec<f64>,
    /// Price-regulatory constants in (0, 1].
    pub kappa: Vec<f64>,
    #[serde(rename = "B")]
    pub budget: f64,
    pub c_init: Vec<f64>,
    pub c_max: Vec<f64>,
    /// Step size of the price adaptation.
    pub eta: f64,
    pub noise_rho: f64,
    pub averaging: bool,
    /// Sliding window for signal averaging; `None` averages over all rounds.
    pub averaging_window: Option<usize>,
    pub max_rounds: usize,
    pub conv_tol: f64,
    pub conv_window: usize,
}

impl FogScenario {
    /// Default constants for `m` nodes and budget `budget`.
    ///
    /// The utility scale is set to `budget / sum(alpha)`, which makes the
    /// budget-exhausting demand also the unconstrained utility maximizer.
    pub fn with_defaults(m: usize, budget: f64) -> Self {
        let cycle = |v: &[f64; 4]| (0..m).map(|i| v[i % 4]).collect::<Vec<_>>();
        let alpha = cycle(&DEFAULT_ALPHA);
        let c_lower = cycle(&DEFAULT_C_LOWER);
        let alpha_sum: f64 = alpha.iter().sum();
        Self {
            m,
            a: if alpha_sum > 0.0 { budget / alpha_sum } else { 1.0 },
            beta: vec![1.0; m],
            kappa: cycle(&DEFAULT_KAPPA),
            budget,
            c_init: c_lower.clone(),
            c_max: c_lower.iter().map(|c| c * DEFAULT_PRICE_CEILING_FACTOR).collect(),
            c_lower,
            alpha,
            eta: DEFAULT_ETA,
            noise_rho: 0.0,
            averaging: false,
            averaging_window: None,
            max_rounds: DEFAULT_MAX_ROUNDS,
            conv_tol: DEFAULT_CONV_TOL,
            conv_window: DEFAULT_CONV_WINDOW,
        }
    }

    /// One user, four fog nodes, budget 100.
    pub fn default_four_node() -> Self {
        Self::with_defaults(4, 100.0)
    }

    pub fn with_noise(mut self, rho: f64, averaging: bool) -> Self {
        self.noise_rho = rho;
        self.averaging = averaging;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::validation("M", "need at least one fog node"));
        }
        let vectors = [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("c_lower", &self.c_lower),
            ("kappa", &self.kappa),
            ("c_init", &self.c_init),
            ("c_max", &self.c_max),
        ];
        for (key, v) in vectors {
            if v.len() != self.m {
                return Err(Error::validation(key, format!("expected {} entries, got {}", self.m, v.len())));
            }
            if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
                return Err(Error::validation(key, "entries must be finite and positive"));
            }
        }
        if self.kappa.iter().any(|k| *k > 1.0) {
            return Err(Error::validation("kappa", "entries must lie in (0, 1]"));
        }
        if !(self.a.is_finite() && self.a > 0.0) {
            return Err(Error::validation("a", "must be positive"));
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(Error::validation("B", "must be positive"));
        }
        for i in 0..self.m {
            if self.c_max[i] <= self.c_lower[i] {
                return Err(Error::validation("c_max", format!("node {i}: c_max must exceed c_lower")));
            }
            if self.c_init[i] < self.c_lower[i] {
                return Err(Error::validation("c_init", format!("node {i}: c_init is below c_lower")));
            }
            if self.c_init[i] > self.c_max[i] {
                return Err(Error::validation("c_init", format!("node {i}: c_init is above c_max")));
            }
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::validation("eta", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.noise_rho) {
            return Err(Error::validation("noise_rho", "must lie in [0, 1)"));
        }
        if self.averaging_window == Some(0) {
            return Err(Error::validation("averaging_window", "must be at least 1"));
        }
        if self.max_rounds == 0 {
            return Err(Error::validation("max_rounds", "must be positive"));
        }
        if !(self.conv_tol.is_finite() && self.conv_tol > 0.0) {
            return Err(Error::validation("conv_tol", "must be positive"));
        }
        if self.conv_window < 2 {
            return Err(Error::validation("conv_window", "must be at least 2"));
        }
        Ok(())
    }

    fn alpha_sum(&self) -> f64 {
        self.alpha.iter().sum()
    }

    /// Closed-form demand of node `m` at its own price (other prices do not enter).
    fn node_demand(&self, m: usize, price: f64) -> f64 {
        self.budget * self.alpha[m] / (price * self.alpha_sum())
    }
}

/// How the gradient rule estimates the slope of a node's gain in its price.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeEstimator {
    /// Marginal gain at the latest observation assuming unit-elastic demand:
    /// `kappa * r * c_lower / c`.
    #[default]
    UnitElasticity,
    /// Secant of the observed gain between the last two observations; falls
    /// back to `kappa * r` when the two prices coincide.
    Secant,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceRule {
    /// Root of the first-order condition under closed-form demand, or the
    /// gain-maximizing boundary price when there is none.
    FocRoot,
    /// Projected gradient ascent on the node's gain.
    GradientAscent {
        #[serde(default)]
        slope: SlopeEstimator,
    },
}

impl Default for PriceRule {
    fn default() -> Self {
        PriceRule::GradientAscent {
            slope: SlopeEstimator::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    pub round: usize,
    pub prices: Vec<f64>,
    /// Executed demands (after noise and averaging).
    pub demands: Vec<f64>,
    /// The user's noise-free best response to `prices`.
    pub planned_demands: Vec<f64>,
    pub user_utility: f64,
    pub fog_gains: Vec<f64>,
}

impl RoundState {
    pub fn aggregate_fog_gain(&self) -> f64 {
        self.fog_gains.iter().sum()
    }

    /// Total spent at the executed demands; may exceed the budget under noise.
    pub fn spend(&self) -> f64 {
        self.prices.iter().zip(&self.demands).map(|(c, r)| c * r).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegotiationTrace {
    pub scenario: FogScenario,
    pub rule: PriceRule,
    pub seed: u64,
    pub rounds: Vec<RoundState>,
    pub converged: bool,
    pub convergence_round: Option<usize>,
}

impl NegotiationTrace {
    pub fn last(&self) -> &RoundState {
        self.rounds.last().expect("trace is never empty")
    }

    /// Mean over nodes of the coefficient of variation of the price over the
    /// last `conv_window` rounds.
    pub fn instability_index(&self) -> f64 {
        let window = self.scenario.conv_window.min(self.rounds.len());
        let tail = &self.rounds[self.rounds.len() - window..];
        let m = self.scenario.m;
        let total: f64 = (0..m)
            .map(|node| {
                let n = tail.len() as f64;
                let mean = tail.iter().map(|r| r.prices[node]).sum::<f64>() / n;
                let var = tail.iter().map(|r| (r.prices[node] - mean).powi(2)).sum::<f64>() / n;
                var.sqrt() / mean
            })
            .sum();
        total / m as f64
    }

    /// One row per node per round: round, node_id, price, demand, user_utility, fog_gain.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["round", "node_id", "price", "demand", "user_utility", "fog_gain"])?;
        for state in &self.rounds {
            for node in 0..self.scenario.m {
                w.write_record([
                    state.round.to_string(),
                    node.to_string(),
                    state.prices[node].to_string(),
                    state.demands[node].to_string(),
                    state.user_utility.to_string(),
                    state.fog_gains[node].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_len(scenario: &FogScenario, v: &[f64], what: &str) -> Result<()> {
    if v.len() != scenario.m {
        return Err(Error::InvalidArgument(format!(
            "{what} has {} entries, expected {}",
            v.len(),
            scenario.m
        )));
    }
    Ok(())
}

/// Offloading user's utility `a * sum(alpha_m log(r_m beta_m)) - sum(c_m r_m)`.
pub fn user_utility(scenario: &FogScenario, demands: &[f64], prices: &[f64]) -> Result<f64> {
    check_len(scenario, demands, "demand vector")?;
    check_len(scenario, prices, "price vector")?;
    if let Some(m) = demands.iter().position(|r| !(*r > 0.0)) {
        return Err(Error::Domain(format!("demand of node {m} must be positive, got {}", demands[m])));
    }
    let value: f64 = (0..scenario.m)
        .map(|m| scenario.alpha[m] * (demands[m] * scenario.beta[m]).ln())
        .sum();
    let cost: f64 = prices.iter().zip(demands).map(|(c, r)| c * r).sum();
    Ok(scenario.a * value - cost)
}

/// Gain of node `m`: `kappa_m (c_m r_m - c_lower_m r_m)`.
pub fn fog_gain(scenario: &FogScenario, m: usize, price: f64, demand: f64) -> Result<f64> {
    if m >= scenario.m {
        return Err(Error::InvalidArgument(format!("node {m} out of range")));
    }
    let floor = scenario.c_lower[m];
    if price < floor {
        return Err(Error::InvalidPrice { node: m, price, floor });
    }
    if demand < 0.0 {
        return Err(Error::Domain(format!("demand of node {m} must be nonnegative, got {demand}")));
    }
    Ok(scenario.kappa[m] * (price * demand - floor * demand))
}

/// Budget-exhausting utility-maximizing demand, `B alpha_m / (c_m sum(alpha))`.
pub fn optimal_demand(scenario: &FogScenario, prices: &[f64]) -> Result<Vec<f64>> {
    check_len(scenario, prices, "price vector")?;
    if let Some(m) = prices.iter().position(|c| !(*c > 0.0)) {
        return Err(Error::Domain(format!("price of node {m} must be positive, got {}", prices[m])));
    }
    Ok((0..scenario.m).map(|m| scenario.node_demand(m, prices[m])).collect())
}

/// Left-hand side of the node's pricing first-order condition
/// `r*(c) + kappa (c - c_lower) dr*/dc` under closed-form demand.
pub fn pricing_foc(scenario: &FogScenario, m: usize, price: f64) -> f64 {
    let r = scenario.node_demand(m, price);
    let dr = -r / price;
    r + scenario.kappa[m] * (price - scenario.c_lower[m]) * dr
}

const FOC_SCAN_POINTS: usize = 256;

fn foc_root_price(scenario: &FogScenario, m: usize) -> f64 {
    let (lo, hi) = (scenario.c_lower[m], scenario.c_max[m]);
    let f = |c: f64| pricing_foc(scenario, m, c);
    let step = (hi - lo) / FOC_SCAN_POINTS as f64;
    let mut left = lo;
    let mut f_left = f(lo);
    for i in 1..=FOC_SCAN_POINTS {
        let right = if i == FOC_SCAN_POINTS { hi } else { lo + step * i as f64 };
        let f_right = f(right);
        if f_left == 0.0 {
            return left;
        }
        if f_left.signum() != f_right.signum() {
            let (mut a, mut b) = (left, right);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if f(mid).signum() == f_left.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return 0.5 * (a + b);
        }
        left = right;
        f_left = f_right;
    }
    // no interior stationary point: pick the better boundary
    let gain = |c: f64| scenario.kappa[m] * (c - scenario.c_lower[m]) * scenario.node_demand(m, c);
    if gain(hi) >= gain(lo) {
        hi
    } else {
        lo
    }
}

/// Next price of node `m` from its history of observed `(price, demand)` pairs.
pub fn price_update(scenario: &FogScenario, m: usize, history: &[(f64, f64)], rule: PriceRule) -> Result<f64> {
    if m >= scenario.m {
        return Err(Error::InvalidArgument(format!("node {m} out of range")));
    }
    let Some(&(price, demand)) = history.last() else {
        return Err(Error::InvalidArgument("price update needs at least one observation".into()));
    };
    let (lo, hi) = (scenario.c_lower[m], scenario.c_max[m]);
    let next = match rule {
        PriceRule::FocRoot => foc_root_price(scenario, m),
        PriceRule::GradientAscent { slope } => {
            if history.len() == 1 {
                price + scenario.eta * lo
            } else {
                let kappa = scenario.kappa[m];
                let s = match slope {
                    SlopeEstimator::UnitElasticity => kappa * demand * lo / price,
                    SlopeEstimator::Secant => {
                        let (prev_price, prev_demand) = history[history.len() - 2];
                        let dc = price - prev_price;
                        if dc.abs() <= 1e-12 * price.abs().max(1.0) {
                            kappa * demand
                        } else {
                            let g = kappa * (price - lo) * demand;
                            let g_prev = kappa * (prev_price - lo) * prev_demand;
                            (g - g_prev) / dc
                        }
                    }
                };
                price + scenario.eta * s
            }
        }
    };
    Ok(next.clamp(lo, hi))
}

/// `value * (1 + u)` with `u ~ Uniform[-rho, rho]`; draws nothing when `rho == 0`.
pub fn inject_noise<R: Rng + ?Sized>(value: f64, rho: f64, rng: &mut R) -> f64 {
    if rho == 0.0 {
        return value;
    }
    value * (1.0 + rng.random_range(-rho..=rho))
}

/// Cumulative mean of a nonempty history.
pub fn signal_average(history: &[f64]) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("signal average of an empty history".into()));
    }
    let first = history[0];
    if history.iter().all(|x| *x == first) {
        return Ok(first);
    }
    Ok(history.iter().sum::<f64>() / history.len() as f64)
}

/// Mean of the last `window` entries.
pub fn windowed_average(history: &[f64], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::InvalidArgument("averaging window must be positive".into()));
    }
    signal_average(&history[history.len().saturating_sub(window)..])
}

/// Executed action of one actor under signal averaging.
#[derive(Debug, Clone, Default)]
struct Averager {
    window: Option<usize>,
    history: Vec<f64>,
    sum: f64,
    constant: bool,
}

impl Averager {
    fn new(window: Option<usize>) -> Self {
        Self { window, ..Self::default() }
    }

    fn push(&mut self, best_response: f64) -> f64 {
        self.constant = self.history.is_empty() || (self.constant && best_response == self.history[0]);
        self.history.push(best_response);
        match self.window {
            // the running sum adds in the same order as `signal_average`
            None => {
                self.sum += best_response;
                if self.constant {
                    best_response
                } else {
                    self.sum / self.history.len() as f64
                }
            }
            Some(w) => windowed_average(&self.history, w).expect("history is nonempty"),
        }
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    let diff = (cur - prev).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / prev.abs()
    }
}

fn is_stable(prev: &RoundState, cur: &RoundState, tol: f64) -> bool {
    let pairs = prev.prices.iter().zip(&cur.prices).chain(prev.demands.iter().zip(&cur.demands));
    pairs.into_iter().all(|(p, c)| relative_change(*p, *c) < tol)
}

/// First round `t` such that every price and demand changed by less than
/// `tol` (relative) between consecutive rounds across the window of
/// `window` rounds ending at `t`. Round numbers are taken from the states.
pub fn detect_convergence(rounds: &[RoundState], tol: f64, window: usize) -> Result<(bool, Option<usize>)> {
    if window < 2 {
        return Err(Error::InvalidArgument("convergence window must be at least 2".into()));
    }
    let mut streak = 0;
    for pair in rounds.windows(2) {
        if is_stable(&pair[0], &pair[1], tol) {
            streak += 1;
            if streak + 1 >= window {
                return Ok((true, Some(pair[1].round)));
            }
        } else {
            streak = 0;
        }
    }
    Ok((false, None))
}

/// Runs the negotiation loop; reproducible from `(scenario, rule, seed)`.
pub fn run_negotiation(scenario: &FogScenario, rule: PriceRule, seed: u64) -> Result<NegotiationTrace> {
    scenario.validate()?;
    let m = scenario.m;
    let rho = scenario.noise_rho;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut user_avg: Vec<Averager> = (0..m).map(|_| Averager::new(scenario.averaging_window)).collect();
    let mut node_avg: Vec<Averager> = (0..m).map(|_| Averager::new(scenario.averaging_window)).collect();
    let mut observed: Vec<Vec<(f64, f64)>> = vec![Vec::new(); m];
    let mut prices = scenario.c_init.clone();
    let mut rounds: Vec<RoundState> = Vec::new();
    let mut streak = 0;
    let mut convergence_round = None;

    for round in 1..=scenario.max_rounds {
        let planned = optimal_demand(scenario, &prices)?;
        let mut demands = Vec::with_capacity(m);
        for (i, &r) in planned.iter().enumerate() {
            let noisy = if rho > 0.0 {
                inject_noise(r, rho, &mut rng).max(DEMAND_FLOOR)
            } else {
                r
            };
            demands.push(if scenario.averaging { user_avg[i].push(noisy) } else { noisy });
        }
        let fog_gains = (0..m)
            .map(|i| fog_gain(scenario, i, prices[i], demands[i]))
            .collect::<Result<Vec<_>>>()?;
        let state = RoundState {
            round,
            user_utility: user_utility(scenario, &demands, &prices)?,
            prices: prices.clone(),
            demands,
            planned_demands: planned,
            fog_gains,
        };
        if let Some(prev) = rounds.last() {
            streak = if is_stable(prev, &state, scenario.conv_tol) { streak + 1 } else { 0 };
        }
        rounds.push(state);
        if streak + 1 >= scenario.conv_window {
            convergence_round = Some(round);
            break;
        }
        if round == scenario.max_rounds {
            break;
        }

        let last = rounds.last().expect("just pushed");
        for i in 0..m {
            observed[i].push((last.prices[i], last.demands[i]));
            let best = price_update(scenario, i, &observed[i], rule)?;
            let noisy = if rho > 0.0 {
                inject_noise(best, rho, &mut rng).clamp(scenario.c_lower[i], scenario.c_max[i])
            } else {
                best
            };
            prices[i] = if scenario.averaging { node_avg[i].push(noisy) } else { noisy };
        }
    }

    Ok(NegotiationTrace {
        scenario: scenario.clone(),
        rule,
        seed,
        rounds,
        converged: convergence_round.is_some(),
        convergence_round,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub runs: usize,
    pub mean_user_utility: f64,
    pub mean_fog_gain: f64,
    pub convergence_rate: f64,
    /// Mean over converged runs; `None` when no run converged.
    pub mean_convergence_round: Option<f64>,
    pub instability_index: f64,
}

/// Aggregates the final-round outcomes of a batch of runs of one configuration.
pub fn compute_metrics(traces: &[NegotiationTrace]) -> Result<MetricsSummary> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no traces to summarize".into()));
    }
    let n = traces.len() as f64;
    let mean = |f: &dyn Fn(&NegotiationTrace) -> f64| traces.iter().map(f).sum::<f64>() / n;
    let converged: Vec<f64> = traces
        .iter()
        .filter_map(|t| t.convergence_round.map(|r| r as f64))
        .collect();
    Ok(MetricsSummary {
        runs: traces.len(),
        mean_user_utility: mean(&|t| t.last().user_utility),
        mean_fog_gain: mean(&|t| t.last().aggregate_fog_gain()),
        convergence_rate: converged.len() as f64 / n,
        mean_convergence_round: (!converged.is_empty())
            .then(|| converged.iter().sum::<f64>() / converged.len() as f64),
        instability_index: mean(&|t| t.instability_index()),
    })
}
