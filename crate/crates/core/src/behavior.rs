//! Bounded-rational prediction models.
//!
//! Every model maps `(game, player)` to a [`MixedStrategy`] over that
//! player's actions. The iterative models (level-k, cognitive hierarchy,
//! noisy introspection) compute a full strategy profile per reasoning level
//! so they work for any number of players.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{action_utilities, argmax_set, pure_nash, Belief, MixedStrategy, NormalFormGame};

/// What ε-Nash does when the game has no pure equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoNashFallback {
    #[default]
    Error,
    Uniform,
}

/// How a reasoning level responds to its belief.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    /// Uniform over the best-response set.
    #[default]
    ExactBr,
    Qbr { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level0Spec {
    #[default]
    Uniform,
    /// One strategy per player.
    CustomWeights(Vec<MixedStrategy>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonNashParams {
    pub epsilon: f64,
    #[serde(default)]
    pub no_nash_fallback: NoNashFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelKParams {
    /// Population share of levels `0..=K`.
    pub level_weights: Vec<f64>,
    #[serde(default)]
    pub level0: Level0Spec,
    #[serde(default)]
    pub response: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CognitiveHierarchyParams {
    /// Poisson mean of the level distribution.
    pub tau: f64,
    pub max_level: usize,
    #[serde(default)]
    pub level0: Level0Spec,
    #[serde(default)]
    pub response: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoisyIntrospectionParams {
    pub lambda0: f64,
    /// Precision at depth `d` is `lambda0 * decay^d`.
    pub decay: f64,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "params", rename_all = "snake_case")]
pub enum BehavioralModel {
    /// Best response to uniformly randomizing opponents.
    BestResponse,
    EpsilonNash(EpsilonNashParams),
    /// Player's strategy in the logit quantal-response equilibrium.
    LogitQbr { lambda: f64 },
    LevelK(LevelKParams),
    CognitiveHierarchy(CognitiveHierarchyParams),
    NoisyIntrospection(NoisyIntrospectionParams),
}

fn check_lambda(lambda: f64, key: &str) -> Result<()> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::InvalidParameter(format!("{key} must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

impl Response {
    fn validate(&self) -> Result<()> {
        match self {
            Response::ExactBr => Ok(()),
            Response::Qbr { lambda } => check_lambda(*lambda, "lambda"),
        }
    }
}

impl BehavioralModel {
    pub fn name(&self) -> &'static str {
        match self {
            BehavioralModel::BestResponse => "best_response",
            BehavioralModel::EpsilonNash(_) => "epsilon_nash",
            BehavioralModel::LogitQbr { .. } => "logit_qbr",
            BehavioralModel::LevelK(_) => "level_k",
            BehavioralModel::CognitiveHierarchy(_) => "cognitive_hierarchy",
            BehavioralModel::NoisyIntrospection(_) => "noisy_introspection",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BehavioralModel::BestResponse => Ok(()),
            BehavioralModel::EpsilonNash(p) => {
                if !(0.0..=1.0).contains(&p.epsilon) {
                    return Err(Error::InvalidParameter(format!(
                        "epsilon must lie in [0, 1], got {}",
                        p.epsilon
                    )));
                }
                Ok(())
            }
            BehavioralModel::LogitQbr { lambda } => check_lambda(*lambda, "lambda"),
            BehavioralModel::LevelK(p) => {
                if p.level_weights.is_empty()
                    || p.level_weights.iter().any(|w| !(0.0..=1.0).contains(w))
                {
                    return Err(Error::InvalidParameter(
                        "level_weights must be a nonempty vector of probabilities".into(),
                    ));
                }
                let total: f64 = p.level_weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "level_weights sum to {total}, expected 1"
                    )));
                }
                p.response.validate()
            }
            BehavioralModel::CognitiveHierarchy(p) => {
                if !(p.tau.is_finite() && p.tau > 0.0) {
                    return Err(Error::InvalidParameter(format!("tau must be > 0, got {}", p.tau)));
                }
                if p.max_level < 1 {
                    return Err(Error::InvalidParameter("max_level must be >= 1".into()));
                }
                p.response.validate()
            }
            BehavioralModel::NoisyIntrospection(p) => {
                check_lambda(p.lambda0, "lambda0")?;
                if !(p.decay > 0.0 && p.decay < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "decay must lie in (0, 1), got {}",
                        p.decay
                    )));
                }
                if p.max_depth < 1 {
                    return Err(Error::InvalidParameter("max_depth must be >= 1".into()));
                }
                Ok(())
            }
        }
    }
}

/// Predicted action distribution of `player` under `model`.
pub fn predict(model: &BehavioralModel, game: &NormalFormGame, player: usize) -> Result<MixedStrategy> {
    model.validate()?;
    game.check_player(player)?;
    match model {
        BehavioralModel::BestResponse => {
            let belief = Belief::uniform(game, player)?;
            respond(game, player, &belief, Response::ExactBr)
        }
        BehavioralModel::EpsilonNash(p) => epsilon_nash_predict(game, player, p.epsilon, p.no_nash_fallback),
        BehavioralModel::LogitQbr { lambda } => {
            let eq = qbr_equilibrium_newton(game, *lambda)?;
            Ok(eq.profile.into_iter().nth(player).expect("player checked"))
        }
        BehavioralModel::LevelK(p) => level_k_predict(game, player, p),
        BehavioralModel::CognitiveHierarchy(p) => cognitive_hierarchy_predict(game, player, p),
        BehavioralModel::NoisyIntrospection(p) => noisy_introspection_predict(game, player, p),
    }
}

/// Predictions for every player.
pub fn predict_profile(model: &BehavioralModel, game: &NormalFormGame) -> Result<Vec<MixedStrategy>> {
    (0..game.num_players()).map(|p| predict(model, game, p)).collect()
}

/// Equilibrium action with probability `1 - epsilon`, the rest spread uniformly.
pub fn epsilon_nash_predict(
    game: &NormalFormGame,
    player: usize,
    epsilon: f64,
    fallback: NoNashFallback,
) -> Result<MixedStrategy> {
    game.check_player(player)?;
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidParameter(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    let n = game.num_actions(player);
    let Some(eq) = pure_nash(game).into_iter().next() else {
        return match fallback {
            NoNashFallback::Error => Err(Error::NoEquilibrium),
            NoNashFallback::Uniform => Ok(MixedStrategy::uniform(n)),
        };
    };
    if n == 1 {
        return Ok(MixedStrategy::pure(1, 0));
    }
    let other = epsilon / (n - 1) as f64;
    let weights = (0..n)
        .map(|a| if a == eq[player] { 1.0 - epsilon } else { other })
        .collect();
    Ok(MixedStrategy::from_unnormalized(weights))
}

/// Logit choice probabilities `exp(lambda u_i) / sum_j exp(lambda u_j)`.
///
/// Utilities are shifted by their maximum before exponentiation, so large
/// `lambda * u` cannot overflow.
pub fn logit_qbr(utilities: &[f64], lambda: f64) -> MixedStrategy {
    assert!(!utilities.is_empty(), "logit_qbr needs at least one utility");
    if lambda == 0.0 {
        return MixedStrategy::uniform(utilities.len());
    }
    let top = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights = utilities.iter().map(|u| (lambda * (u - top)).exp()).collect();
    MixedStrategy::from_unnormalized(weights)
}

/// Response of `player` to `belief`.
pub fn respond(game: &NormalFormGame, player: usize, belief: &Belief, response: Response) -> Result<MixedStrategy> {
    let utilities = action_utilities(game, player, belief)?;
    Ok(match response {
        Response::ExactBr => MixedStrategy::uniform_over(utilities.len(), &argmax_set(&utilities)),
        Response::Qbr { lambda } => logit_qbr(&utilities, lambda),
    })
}

fn respond_to_profile(
    game: &NormalFormGame,
    profile: &[MixedStrategy],
    response: impl Fn(usize) -> Response,
) -> Result<Vec<MixedStrategy>> {
    (0..game.num_players())
        .map(|p| respond(game, p, &Belief::from_profile(game, p, profile)?, response(p)))
        .collect()
}

fn level0_profile(game: &NormalFormGame, spec: &Level0Spec) -> Result<Vec<MixedStrategy>> {
    match spec {
        Level0Spec::Uniform => Ok(game
            .action_counts()
            .iter()
            .map(|&n| MixedStrategy::uniform(n))
            .collect()),
        Level0Spec::CustomWeights(weights) => {
            if weights.len() != game.num_players()
                || weights
                    .iter()
                    .zip(game.action_counts())
                    .any(|(w, &n)| w.len() != n)
            {
                return Err(Error::InvalidParameter(
                    "custom level-0 weights do not match the game's action counts".into(),
                ));
            }
            Ok(weights.clone())
        }
    }
}

/// Strategy profile of every level `0..=max_level`, each level responding to the one below.
pub fn level_profiles(
    game: &NormalFormGame,
    level0: &Level0Spec,
    response: Response,
    max_level: usize,
) -> Result<Vec<Vec<MixedStrategy>>> {
    let mut levels = vec![level0_profile(game, level0)?];
    for _ in 0..max_level {
        let next = respond_to_profile(game, levels.last().expect("nonempty"), |_| response)?;
        levels.push(next);
    }
    Ok(levels)
}

pub fn level_k_predict(game: &NormalFormGame, player: usize, params: &LevelKParams) -> Result<MixedStrategy> {
    BehavioralModel::LevelK(params.clone()).validate()?;
    game.check_player(player)?;
    let levels = level_profiles(game, &params.level0, params.response, params.level_weights.len() - 1)?;
    Ok(MixedStrategy::mixture(
        params
            .level_weights
            .iter()
            .zip(&levels)
            .map(|(&w, profile)| (w, &profile[player])),
    ))
}

/// Poisson(tau) probabilities of levels `0..=max_level`.
pub fn poisson_level_weights(tau: f64, max_level: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(max_level + 1);
    let mut p = (-tau).exp();
    for k in 0..=max_level {
        if k > 0 {
            p *= tau / k as f64;
        }
        out.push(p);
    }
    out
}

/// Profiles for levels `0..=max_level` where level k responds to the
/// renormalized Poisson mixture of levels `0..k`.
pub fn cognitive_hierarchy_levels(game: &NormalFormGame, params: &CognitiveHierarchyParams) -> Result<Vec<Vec<MixedStrategy>>> {
    BehavioralModel::CognitiveHierarchy(params.clone()).validate()?;
    let pmf = poisson_level_weights(params.tau, params.max_level);
    let mut levels = vec![level0_profile(game, &params.level0)?];
    for k in 1..=params.max_level {
        let believed: Vec<MixedStrategy> = (0..game.num_players())
            .map(|p| MixedStrategy::mixture((0..k).map(|l| (pmf[l], &levels[l][p]))))
            .collect();
        let next = respond_to_profile(game, &believed, |_| params.response)?;
        levels.push(next);
    }
    Ok(levels)
}

/// Prediction for the highest-level agent.
pub fn cognitive_hierarchy_predict(
    game: &NormalFormGame,
    player: usize,
    params: &CognitiveHierarchyParams,
) -> Result<MixedStrategy> {
    game.check_player(player)?;
    let mut levels = cognitive_hierarchy_levels(game, params)?;
    Ok(levels.pop().expect("nonempty").swap_remove(player))
}

/// Population prediction: Poisson-weighted mixture of levels `0..=max_level`.
pub fn cognitive_hierarchy_population(
    game: &NormalFormGame,
    player: usize,
    params: &CognitiveHierarchyParams,
) -> Result<MixedStrategy> {
    game.check_player(player)?;
    let levels = cognitive_hierarchy_levels(game, params)?;
    let pmf = poisson_level_weights(params.tau, params.max_level);
    Ok(MixedStrategy::mixture(
        pmf.iter().zip(&levels).map(|(&w, profile)| (w, &profile[player])),
    ))
}

pub fn noisy_introspection_predict(
    game: &NormalFormGame,
    player: usize,
    params: &NoisyIntrospectionParams,
) -> Result<MixedStrategy> {
    BehavioralModel::NoisyIntrospection(params.clone()).validate()?;
    game.check_player(player)?;
    // the deepest layer is taken as uniform; shallower layers respond with rising precision
    let mut profile = level0_profile(game, &Level0Spec::Uniform)?;
    for depth in (0..params.max_depth).rev() {
        let lambda = params.lambda0 * params.decay.powi(depth as i32);
        profile = respond_to_profile(game, &profile, |_| Response::Qbr { lambda })?;
    }
    Ok(profile.swap_remove(player))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QbrEquilibrium {
    pub profile: Vec<MixedStrategy>,
    pub residual: f64,
    pub iterations: usize,
}

/// Sup-norm distance between a profile and the logit response to it.
pub fn qbr_residual(game: &NormalFormGame, lambda: f64, profile: &[MixedStrategy]) -> Result<f64> {
    let image = respond_to_profile(game, profile, |_| Response::Qbr { lambda })?;
    Ok(profile
        .iter()
        .zip(&image)
        .map(|(a, b)| a.max_abs_diff(b))
        .fold(0.0, f64::max))
}

/// Logit quantal-response equilibrium by damped fixed-point iteration from uniform play.
pub fn qbr_equilibrium(
    game: &NormalFormGame,
    lambda: f64,
    damping: f64,
    max_iters: usize,
    tol: f64,
) -> Result<QbrEquilibrium> {
    check_lambda(lambda, "lambda")?;
    if !(damping > 0.0 && damping <= 1.0) {
        return Err(Error::InvalidParameter(format!("damping must lie in (0, 1], got {damping}")));
    }
    let mut profile = level0_profile(game, &Level0Spec::Uniform)?;
    let mut residual = f64::INFINITY;
    for iteration in 0..=max_iters {
        let image = respond_to_profile(game, &profile, |_| Response::Qbr { lambda })?;
        residual = profile
            .iter()
            .zip(&image)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max);
        if residual < tol {
            return Ok(QbrEquilibrium {
                profile,
                residual,
                iterations: iteration,
            });
        }
        if iteration == max_iters {
            break;
        }
        profile = profile
            .iter()
            .zip(&image)
            .map(|(old, new)| MixedStrategy::mixture([(1.0 - damping, old), (damping, new)]))
            .collect();
    }
    Err(Error::ConvergenceFailure {
        last: profile,
        residual,
        iterations: max_iters,
    })
}

/// Damping values tried in turn when Newton continuation fails.
pub const QBR_DAMPING_SCHEDULE: [f64; 4] = [0.5, 0.2, 0.05, 0.01];
const QBR_PREDICT_TOL: f64 = 1e-12;
const QBR_PREDICT_ITERS: usize = 20_000;
const NEWTON_ITERS: usize = 40;
const BRANCH_MAX_PREDICTED_MOVE: f64 = 0.1;
const BRANCH_MAX_CORRECTION: f64 = 0.02;
const NEWTON_TOL: f64 = 1e-13;
const MAX_LOG_MOVE: f64 = 4.0;

/// Logit equilibrium used by [`predict`].
///
/// Follows the equilibrium branch that starts at uniform play for
/// `lambda = 0`: the precision is raised in steps, each predicted along the
/// branch tangent and corrected by Newton's method on
/// `sigma - logit(lambda u(sigma)) = 0`; failed steps are retried shorter. Damped iteration over
/// [`QBR_DAMPING_SCHEDULE`] is the last resort.
pub fn qbr_equilibrium_newton(game: &NormalFormGame, lambda: f64) -> Result<QbrEquilibrium> {
    check_lambda(lambda, "lambda")?;
    let uniform = level0_profile(game, &Level0Spec::Uniform)?;
    if lambda == 0.0 {
        return Ok(QbrEquilibrium {
            profile: uniform,
            residual: 0.0,
            iterations: 0,
        });
    }
    let solver = FlatQre::new(game);
    // log-probabilities, so the iterate can never leave the simplex interior
    let mut y: Vec<f64> = uniform.iter().flat_map(|s| s.weights().iter().map(|w| w.ln())).collect();
    // cap steps so lambda * payoff spread grows by at most two per solve,
    // keeping the solution on the branch that starts at uniform play
    let spread = (0..game.num_players())
        .map(|p| {
            let t = game.payoff_table(p);
            t.iter().copied().fold(f64::NEG_INFINITY, f64::max) - t.iter().copied().fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);
    let max_step = if spread > 0.0 { 2.0 / spread } else { lambda };
    let (mut at, mut step, mut iterations) = (0.0, lambda.min(max_step), 0);
    while at < lambda {
        // Euler predictor along the branch, then Newton correction
        let accepted = solver.tangent(at, &y).and_then(|dy| {
            // branch moves are measured in probability space
            let slope = y.iter().zip(&dy).fold(0.0f64, |m, (a, b)| m.max((a.exp() * b).abs()));
            let log_slope = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if slope * step > BRANCH_MAX_PREDICTED_MOVE {
                step = BRANCH_MAX_PREDICTED_MOVE / slope;
            }
            if log_slope * step > MAX_LOG_MOVE {
                step = MAX_LOG_MOVE / log_slope;
            }
            let target = if at + step >= lambda { lambda } else { at + step };
            let guess: Vec<f64> = y.iter().zip(&dy).map(|(a, b)| a + (target - at) * b).collect();
            let next = solver.newton(target, &guess, &mut iterations)?;
            // a large correction means Newton left the branch
            let close = next
                .iter()
                .zip(&guess)
                .all(|(a, b)| (a.exp() - b.exp()).abs() <= BRANCH_MAX_CORRECTION);
            close.then_some((next, target))
        });
        match accepted {
            Some((next, target)) => {
                y = next;
                at = target;
                step = (step * 2.0).min(max_step);
            }
            None => {
                step /= 4.0;
                if step < lambda * 1e-9 {
                    return qbr_equilibrium_damped(game, lambda);
                }
            }
        }
    }
    let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    let profile = solver.unflatten(&x);
    let residual = qbr_residual(game, lambda, &profile)?;
    if residual >= QBR_PREDICT_TOL {
        return qbr_equilibrium_damped(game, lambda);
    }
    Ok(QbrEquilibrium {
        profile,
        residual,
        iterations,
    })
}

fn qbr_equilibrium_damped(game: &NormalFormGame, lambda: f64) -> Result<QbrEquilibrium> {
    let mut last_err = None;
    for damping in QBR_DAMPING_SCHEDULE {
        match qbr_equilibrium(game, lambda, damping, QBR_PREDICT_ITERS, QBR_PREDICT_TOL) {
            Ok(eq) => return Ok(eq),
            Err(e @ Error::ConvergenceFailure { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("schedule is nonempty"))
}

/// Profile stored as one flat vector, player blocks in order.
struct FlatQre<'a> {
    game: &'a NormalFormGame,
    offsets: Vec<usize>,
    dim: usize,
}

impl<'a> FlatQre<'a> {
    fn new(game: &'a NormalFormGame) -> Self {
        let mut offsets = Vec::with_capacity(game.num_players());
        let mut dim = 0;
        for &n in game.action_counts() {
            offsets.push(dim);
            dim += n;
        }
        Self { game, offsets, dim }
    }

    fn unflatten(&self, x: &[f64]) -> Vec<MixedStrategy> {
        (0..self.game.num_players())
            .map(|p| {
                let o = self.offsets[p];
                MixedStrategy::from_unnormalized(x[o..o + self.game.num_actions(p)].to_vec())
            })
            .collect()
    }

    /// Expected utility of each action of `player`; `pin` replaces one
    /// opponent's mixed strategy by a pure action.
    fn utilities(&self, x: &[f64], player: usize, pin: Option<(usize, usize)>) -> Vec<f64> {
        let game = self.game;
        let n = game.num_players();
        let table = game.payoff_table(player);
        let mut u = vec![0.0; game.num_actions(player)];
        let mut profile = vec![0usize; n];
        for &payoff in table {
            let mut w = 1.0;
            for (q, &a) in profile.iter().enumerate() {
                if q == player {
                    continue;
                }
                w *= match pin {
                    Some((pq, pa)) if pq == q => f64::from(u8::from(pa == a)),
                    _ => x[self.offsets[q] + a],
                };
                if w == 0.0 {
                    break;
                }
            }
            u[profile[player]] += w * payoff;
            for q in (0..n).rev() {
                profile[q] += 1;
                if profile[q] < game.num_actions(q) {
                    break;
                }
                profile[q] = 0;
            }
        }
        u
    }

    /// `y - log logit(lambda u(exp y))`, blockwise per player.
    fn residual(&self, lambda: f64, y: &[f64]) -> Vec<f64> {
        let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let mut f = y.to_vec();
        for p in 0..self.game.num_players() {
            let u = self.utilities(&x, p, None);
            let top = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = lambda * top + u.iter().map(|v| (lambda * (v - top)).exp()).sum::<f64>().ln();
            for (a, ua) in u.iter().enumerate() {
                f[self.offsets[p] + a] -= lambda * ua - log_norm;
            }
        }
        f
    }

    fn jacobian(&self, lambda: f64, y: &[f64]) -> Vec<Vec<f64>> {
        let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let d = self.dim;
        let mut jac = vec![vec![0.0; d]; d];
        for (i, row) in jac.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for p in 0..self.game.num_players() {
            let br = logit_qbr(&self.utilities(&x, p, None), lambda);
            let probs = br.weights();
            for q in (0..self.game.num_players()).filter(|&q| q != p) {
                for c in 0..self.game.num_actions(q) {
                    let du = self.utilities(&x, p, Some((q, c)));
                    let mean: f64 = probs.iter().zip(&du).map(|(pb, u)| pb * u).sum();
                    let scale = lambda * x[self.offsets[q] + c];
                    for a in 0..probs.len() {
                        jac[self.offsets[p] + a][self.offsets[q] + c] -= scale * (du[a] - mean);
                    }
                }
            }
        }
        jac
    }

    /// Derivative of the log-equilibrium with respect to the precision.
    fn tangent(&self, lambda: f64, y: &[f64]) -> Option<Vec<f64>> {
        let x: Vec<f64> = y.iter().map(|v| v.exp()).collect();
        let mut rhs = vec![0.0; self.dim];
        for p in 0..self.game.num_players() {
            let u = self.utilities(&x, p, None);
            let br = logit_qbr(&u, lambda);
            let mean: f64 = br.weights().iter().zip(&u).map(|(pb, ub)| pb * ub).sum();
            for (a, ua) in u.iter().enumerate() {
                rhs[self.offsets[p] + a] = ua - mean;
            }
        }
        solve_linear(self.jacobian(lambda, y), rhs)
    }

    fn newton(&self, lambda: f64, start: &[f64], iterations: &mut usize) -> Option<Vec<f64>> {
        let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut y = start.to_vec();
        let mut f = self.residual(lambda, &y);
        let mut norm = sup(&f);
        for _ in 0..NEWTON_ITERS {
            if norm < NEWTON_TOL {
                return Some(y);
            }
            *iterations += 1;
            let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
            let delta = solve_linear(self.jacobian(lambda, &y), rhs)?;
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = y.iter().zip(&delta).map(|(a, b)| a + t * b).collect();
                let fc = self.residual(lambda, &cand);
                let nc = sup(&fc);
                if nc < norm {
                    y = cand;
                    f = fc;
                    norm = nc;
                    break;
                }
                t *= 0.5;
                if t < 1e-6 {
                    // stalled at rounding level
                    return (norm < QBR_PREDICT_TOL).then_some(y);
                }
            }
        }
        (norm < NEWTON_TOL).then_some(y)
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}
