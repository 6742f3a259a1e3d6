//! Finite normal-form games, mixed strategies, beliefs and best responses.
//!
//! Payoffs are stored densely, one row-major tensor per player. The joint
//! action `(a_0, .., a_{n-1})` maps to the flat index
//! `sum_i a_i * stride_i` where the last player varies fastest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability tolerance used for validating distributions.
pub const PROB_TOL: f64 = 1e-9;

/// Actions whose expected utility is within this distance of the maximum
/// are treated as tied best responses.
pub const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GameRepr", into = "GameRepr")]
pub struct NormalFormGame {
    action_counts: Vec<usize>,
    strides: Vec<usize>,
    payoffs: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct GameRepr {
    action_counts: Vec<usize>,
    payoffs: BTreeMap<String, Vec<f64>>,
}

impl TryFrom<GameRepr> for NormalFormGame {
    type Error = Error;

    fn try_from(repr: GameRepr) -> Result<Self> {
        let n = repr.action_counts.len();
        let mut payoffs = vec![None; n];
        for (key, table) in repr.payoffs {
            let player: usize = key
                .parse()
                .map_err(|_| Error::Parse(format!("payoff key `{key}` is not a player index")))?;
            if player >= n {
                return Err(Error::Parse(format!(
                    "payoff key `{key}` out of range for {n} players"
                )));
            }
            payoffs[player] = Some(table);
        }
        let payoffs = payoffs
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::Parse(format!("missing payoffs for player {i}"))))
            .collect::<Result<Vec<_>>>()?;
        NormalFormGame::new(repr.action_counts, payoffs)
    }
}

impl From<NormalFormGame> for GameRepr {
    fn from(game: NormalFormGame) -> Self {
        GameRepr {
            action_counts: game.action_counts,
            payoffs: game
                .payoffs
                .into_iter()
                .enumerate()
                .map(|(i, p)| (i.to_string(), p))
                .collect(),
        }
    }
}

impl NormalFormGame {
    /// Builds a game from per-player flattened payoff tensors.
    pub fn new(action_counts: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self> {
        if action_counts.is_empty() {
            return Err(Error::InvalidArgument("game needs at least one player".into()));
        }
        if let Some(i) = action_counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!("player {i} has no actions")));
        }
        if payoffs.len() != action_counts.len() {
            return Err(Error::InvalidArgument(format!(
                "expected payoffs for {} players, got {}",
                action_counts.len(),
                payoffs.len()
            )));
        }
        let cells: usize = action_counts.iter().product();
        for (i, table) in payoffs.iter().enumerate() {
            if table.len() != cells {
                return Err(Error::InvalidArgument(format!(
                    "player {i} payoff tensor has {} entries, expected {cells}",
                    table.len()
                )));
            }
            if table.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "player {i} has a non-finite payoff"
                )));
            }
        }
        let mut strides = vec![1; action_counts.len()];
        for i in (0..action_counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * action_counts[i + 1];
        }
        Ok(Self {
            action_counts,
            strides,
            payoffs,
        })
    }

    /// Two-player game from row/column payoff matrices indexed `[row][col]`.
    pub fn bimatrix(row: &[Vec<f64>], col: &[Vec<f64>]) -> Result<Self> {
        let rows = row.len();
        let cols = row.first().map_or(0, Vec::len);
        if col.len() != rows || row.iter().chain(col).any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("bimatrix shapes disagree".into()));
        }
        let flat = |m: &[Vec<f64>]| m.iter().flatten().copied().collect::<Vec<_>>();
        Self::new(vec![rows, cols], vec![flat(row), flat(col)])
    }

    pub fn num_players(&self) -> usize {
        self.action_counts.len()
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn num_actions(&self, player: usize) -> usize {
        self.action_counts[player]
    }

    pub fn num_profiles(&self) -> usize {
        self.action_counts.iter().product()
    }

    /// Flattened payoff tensor of one player.
    pub fn payoff_table(&self, player: usize) -> &[f64] {
        &self.payoffs[player]
    }

    pub fn flat_index(&self, profile: &[usize]) -> usize {
        profile.iter().zip(&self.strides).map(|(a, s)| a * s).sum()
    }

    pub fn profile_of(&self, mut index: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let a = index / s;
                index %= s;
                a
            })
            .collect()
    }

    pub fn payoff(&self, player: usize, profile: &[usize]) -> f64 {
        self.payoffs[player][self.flat_index(profile)]
    }

    /// All joint profiles in lexicographic order.
    pub fn profiles(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        (0..self.num_profiles()).map(|i| self.profile_of(i))
    }

    /// Copy of the game with each payoff replaced by `f(player, payoffs_at_cell)`.
    pub(crate) fn map_cells(&self, mut f: impl FnMut(usize, &[f64]) -> f64) -> Self {
        let n = self.num_players();
        let mut payoffs = vec![Vec::with_capacity(self.num_profiles()); n];
        let mut cell = vec![0.0; n];
        for idx in 0..self.num_profiles() {
            for (p, table) in self.payoffs.iter().enumerate() {
                cell[p] = table[idx];
            }
            for (p, out) in payoffs.iter_mut().enumerate() {
                out.push(f(p, &cell));
            }
        }
        Self {
            action_counts: self.action_counts.clone(),
            strides: self.strides.clone(),
            payoffs,
        }
    }

    pub(crate) fn check_player(&self, player: usize) -> Result<()> {
        if player >= self.num_players() {
            return Err(Error::InvalidArgument(format!(
                "player {player} out of range for {}-player game",
                self.num_players()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_action(&self, player: usize, action: usize) -> Result<()> {
        self.check_player(player)?;
        if action >= self.action_counts[player] {
            return Err(Error::InvalidArgument(format!(
                "action {action} out of range for player {player} ({} actions)",
                self.action_counts[player]
            )));
        }
        Ok(())
    }
}

/// Probability distribution over one player's actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct MixedStrategy(Vec<f64>);

impl TryFrom<Vec<f64>> for MixedStrategy {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        MixedStrategy::new(weights)
    }
}

impl From<MixedStrategy> for Vec<f64> {
    fn from(s: MixedStrategy) -> Self {
        s.0
    }
}

impl MixedStrategy {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("empty mixed strategy".into()));
        }
        if weights
            .iter()
            .any(|w| !w.is_finite() || *w < -PROB_TOL || *w > 1.0 + PROB_TOL)
        {
            return Err(Error::InvalidArgument(format!(
                "weights must lie in [0, 1]: {weights:?}"
            )));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(Self(weights))
    }

    /// Normalizes nonnegative weights. Used internally where the sum is known to be positive.
    pub(crate) fn from_unnormalized(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        debug_assert!(total > 0.0 && total.is_finite());
        weights.iter_mut().for_each(|w| *w /= total);
        Self(weights)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn pure(n: usize, action: usize) -> Self {
        let mut w = vec![0.0; n];
        w[action] = 1.0;
        Self(w)
    }

    /// Uniform over a nonempty subset of actions.
    pub fn uniform_over(n: usize, support: &[usize]) -> Self {
        let mut w = vec![0.0; n];
        let p = 1.0 / support.len() as f64;
        for &a in support {
            w[a] = p;
        }
        Self(w)
    }

    /// Weighted combination of strategies over the same action set.
    pub fn mixture<'a>(parts: impl IntoIterator<Item = (f64, &'a MixedStrategy)>) -> Self {
        let mut acc: Vec<f64> = Vec::new();
        for (w, s) in parts {
            if acc.is_empty() {
                acc = vec![0.0; s.len()];
            }
            for (a, p) in acc.iter_mut().zip(&s.0) {
                *a += w * p;
            }
        }
        Self::from_unnormalized(acc)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, action: usize) -> f64 {
        self.0[action]
    }

    /// Largest absolute weight difference.
    pub fn max_abs_diff(&self, other: &MixedStrategy) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A player's independent beliefs about each opponent.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    owner: usize,
    // Indexed by player; the owner's slot is unused.
    marginals: Vec<Option<MixedStrategy>>,
}

impl Belief {
    /// `opponents` lists one strategy per opponent in increasing player order.
    pub fn new(game: &NormalFormGame, owner: usize, opponents: Vec<MixedStrategy>) -> Result<Self> {
        game.check_player(owner)?;
        if opponents.len() + 1 != game.num_players() {
            return Err(Error::InvalidArgument(format!(
                "belief needs {} opponent strategies, got {}",
                game.num_players() - 1,
                opponents.len()
            )));
        }
        let mut it = opponents.into_iter();
        let marginals = (0..game.num_players())
            .map(|p| (p != owner).then(|| it.next().expect("length checked")))
            .collect::<Vec<_>>();
        for (p, m) in marginals.iter().enumerate() {
            if let Some(m) = m {
                if m.len() != game.num_actions(p) {
                    return Err(Error::InvalidArgument(format!(
                        "belief about player {p} has {} weights, expected {}",
                        m.len(),
                        game.num_actions(p)
                    )));
                }
            }
        }
        Ok(Self { owner, marginals })
    }

    /// Belief taken from a full strategy profile, ignoring the owner's own entry.
    pub fn from_profile(game: &NormalFormGame, owner: usize, profile: &[MixedStrategy]) -> Result<Self> {
        let opponents = profile
            .iter()
            .enumerate()
            .filter(|(p, _)| *p != owner)
            .map(|(_, s)| s.clone())
            .collect();
        Self::new(game, owner, opponents)
    }

    pub fn uniform(game: &NormalFormGame, owner: usize) -> Result<Self> {
        let opponents = (0..game.num_players())
            .filter(|&p| p != owner)
            .map(|p| MixedStrategy::uniform(game.num_actions(p)))
            .collect();
        Self::new(game, owner, opponents)
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn about(&self, opponent: usize) -> Option<&MixedStrategy> {
        self.marginals.get(opponent).and_then(Option::as_ref)
    }
}

/// Expected payoff of `action` for `player` against independent opponents.
pub fn expected_utility(game: &NormalFormGame, player: usize, action: usize, belief: &Belief) -> Result<f64> {
    game.check_action(player, action)?;
    if belief.owner != player || belief.marginals.len() != game.num_players() {
        return Err(Error::InvalidArgument(format!(
            "belief owned by player {} used for player {player}",
            belief.owner
        )));
    }
    Ok(eu_unchecked(game, player, action, belief))
}

fn eu_unchecked(game: &NormalFormGame, player: usize, action: usize, belief: &Belief) -> f64 {
    let n = game.num_players();
    let table = game.payoff_table(player);
    let mut profile = vec![0usize; n];
    profile[player] = action;
    let mut total = 0.0;
    loop {
        let mut prob = 1.0;
        for (p, m) in belief.marginals.iter().enumerate() {
            if let Some(m) = m {
                prob *= m.prob(profile[p]);
            }
        }
        if prob != 0.0 {
            total += prob * table[game.flat_index(&profile)];
        }
        // odometer over opponents' actions
        let mut p = n;
        loop {
            if p == 0 {
                return total;
            }
            p -= 1;
            if p == player {
                continue;
            }
            profile[p] += 1;
            if profile[p] < game.num_actions(p) {
                break;
            }
            profile[p] = 0;
        }
    }
}

/// Expected utility of every action of `player`.
pub fn action_utilities(game: &NormalFormGame, player: usize, belief: &Belief) -> Result<Vec<f64>> {
    game.check_player(player)?;
    if belief.owner != player || belief.marginals.len() != game.num_players() {
        return Err(Error::InvalidArgument(format!(
            "belief owned by player {} used for player {player}",
            belief.owner
        )));
    }
    Ok((0..game.num_actions(player))
        .map(|a| eu_unchecked(game, player, a, belief))
        .collect())
}

/// Indices whose value is within [`TIE_TOL`] of the maximum.
pub fn argmax_set(values: &[f64]) -> Vec<usize> {
    let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= best - TIE_TOL)
        .map(|(i, _)| i)
        .collect()
}

/// All actions attaining the maximal expected utility (never empty).
pub fn best_response_set(game: &NormalFormGame, player: usize, belief: &Belief) -> Result<Vec<usize>> {
    Ok(argmax_set(&action_utilities(game, player, belief)?))
}

/// Pure Nash equilibria in lexicographic profile order.
pub fn pure_nash(game: &NormalFormGame) -> Vec<Vec<usize>> {
    game.profiles()
        .filter(|profile| {
            (0..game.num_players()).all(|p| {
                let current = game.payoff(p, profile);
                let mut dev = profile.clone();
                (0..game.num_actions(p)).all(|a| {
                    dev[p] = a;
                    game.payoff(p, &dev) <= current + TIE_TOL
                })
            })
        })
        .collect()
}
