//! Payoff adjustments: prospect-theory valuation of lotteries and
//! social-preference recomposition of game payoffs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{NormalFormGame, PROB_TOL};

/// Smallest accepted weighting-curve exponent. Below roughly 0.279 the
/// single-parameter weighting curve stops being monotone.
pub const MIN_WEIGHT_CURVE: f64 = 0.28;

#[derive(Debug, Clone, PartialEq)]
pub struct Lottery {
    outcomes: Vec<f64>,
    probs: Vec<f64>,
}

impl Lottery {
    pub fn new(outcomes: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if outcomes.is_empty() || outcomes.len() != probs.len() {
            return Err(Error::InvalidArgument(
                "lottery needs matching, nonempty outcome and probability vectors".into(),
            ));
        }
        if outcomes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("lottery outcomes must be finite".into()));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("lottery probabilities must lie in [0, 1]".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidArgument(format!("lottery probabilities sum to {total}")));
        }
        Ok(Self { outcomes, probs })
    }

    pub fn degenerate(x: f64) -> Self {
        Self {
            outcomes: vec![x],
            probs: vec![1.0],
        }
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn expected_value(&self) -> f64 {
        self.outcomes.iter().zip(&self.probs).map(|(x, p)| x * p).sum()
    }
}

/// Power value function and single-parameter probability weighting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProspectRepr", into = "ProspectRepr")]
pub struct ProspectParams {
    gain_exp: f64,
    loss_exp: f64,
    loss_scale: f64,
    weight_curve: f64,
    reference: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProspectRepr {
    #[serde(default = "defaults::gain_exp")]
    gain_exp: f64,
    #[serde(default = "defaults::loss_exp")]
    loss_exp: f64,
    #[serde(default = "defaults::loss_scale")]
    loss_scale: f64,
    #[serde(default = "defaults::weight_curve")]
    weight_curve: f64,
    #[serde(default)]
    reference: f64,
}

mod defaults {
    pub fn gain_exp() -> f64 {
        0.88
    }
    pub fn loss_exp() -> f64 {
        0.88
    }
    pub fn loss_scale() -> f64 {
        2.25
    }
    pub fn weight_curve() -> f64 {
        0.61
    }
}

impl TryFrom<ProspectRepr> for ProspectParams {
    type Error = Error;

    fn try_from(r: ProspectRepr) -> Result<Self> {
        ProspectParams::new(r.gain_exp, r.loss_exp, r.loss_scale, r.weight_curve, r.reference)
    }
}

impl From<ProspectParams> for ProspectRepr {
    fn from(p: ProspectParams) -> Self {
        ProspectRepr {
            gain_exp: p.gain_exp,
            loss_exp: p.loss_exp,
            loss_scale: p.loss_scale,
            weight_curve: p.weight_curve,
            reference: p.reference,
        }
    }
}

impl Default for ProspectParams {
    fn default() -> Self {
        Self {
            gain_exp: defaults::gain_exp(),
            loss_exp: defaults::loss_exp(),
            loss_scale: defaults::loss_scale(),
            weight_curve: defaults::weight_curve(),
            reference: 0.0,
        }
    }
}

impl ProspectParams {
    pub fn new(gain_exp: f64, loss_exp: f64, loss_scale: f64, weight_curve: f64, reference: f64) -> Result<Self> {
        let in_unit = |v: f64| v > 0.0 && v <= 1.0;
        if !in_unit(gain_exp) {
            return Err(Error::validation("gain_exp", format!("must lie in (0, 1], got {gain_exp}")));
        }
        if !in_unit(loss_exp) {
            return Err(Error::validation("loss_exp", format!("must lie in (0, 1], got {loss_exp}")));
        }
        if !(loss_scale.is_finite() && loss_scale >= 1.0) {
            return Err(Error::validation("loss_scale", format!("must be >= 1, got {loss_scale}")));
        }
        if !(weight_curve > MIN_WEIGHT_CURVE && weight_curve <= 1.0) {
            return Err(Error::validation(
                "weight_curve",
                format!("must lie in ({MIN_WEIGHT_CURVE}, 1], got {weight_curve}"),
            ));
        }
        if !reference.is_finite() {
            return Err(Error::validation("reference", "must be finite"));
        }
        let params = Self {
            gain_exp,
            loss_exp,
            loss_scale,
            weight_curve,
            reference,
        };
        params.check_weight_monotone()?;
        Ok(params)
    }

    fn check_weight_monotone(&self) -> Result<()> {
        const STEPS: usize = 1000;
        let mut prev = 0.0;
        for i in 1..=STEPS {
            let w = weight_unchecked(i as f64 / STEPS as f64, self.weight_curve);
            if w <= prev {
                return Err(Error::validation(
                    "weight_curve",
                    format!("weighting curve is not increasing for {}", self.weight_curve),
                ));
            }
            prev = w;
        }
        Ok(())
    }

    pub fn gain_exp(&self) -> f64 {
        self.gain_exp
    }

    pub fn loss_exp(&self) -> f64 {
        self.loss_exp
    }

    pub fn loss_scale(&self) -> f64 {
        self.loss_scale
    }

    pub fn weight_curve(&self) -> f64 {
        self.weight_curve
    }

    pub fn reference(&self) -> f64 {
        self.reference
    }
}

/// Value of outcome `x` relative to the reference point.
pub fn pt_value(x: f64, params: &ProspectParams) -> f64 {
    let g = x - params.reference;
    if g >= 0.0 {
        g.powf(params.gain_exp)
    } else {
        -params.loss_scale * (-g).powf(params.loss_exp)
    }
}

fn weight_unchecked(p: f64, gamma: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let a = p.powf(gamma);
    a / (a + (1.0 - p).powf(gamma)).powf(1.0 / gamma)
}

/// Decision weight of probability `p`.
pub fn pt_weight(p: f64, params: &ProspectParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability must lie in [0, 1], got {p}")));
    }
    Ok(weight_unchecked(p, params.weight_curve))
}

pub fn pt_evaluate(lottery: &Lottery, params: &ProspectParams) -> f64 {
    lottery
        .outcomes
        .iter()
        .zip(&lottery.probs)
        .map(|(&x, &p)| weight_unchecked(p, params.weight_curve) * pt_value(x, params))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InequityMetric {
    /// Largest minus smallest base utility.
    #[default]
    Range,
    /// Mean absolute deviation from the mean base utility.
    MeanDeviation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SocialRepr", into = "SocialRepr")]
pub struct SocialPrefParams {
    pub w_selfish: f64,
    pub w_altruism: f64,
    pub w_inequity: f64,
    pub w_envy: f64,
    pub inequity_metric: InequityMetric,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SocialRepr {
    #[serde(default = "one")]
    w_selfish: f64,
    #[serde(default)]
    w_altruism: f64,
    #[serde(default)]
    w_inequity: f64,
    #[serde(default)]
    w_envy: f64,
    #[serde(default)]
    inequity_metric: InequityMetric,
}

fn one() -> f64 {
    1.0
}

impl TryFrom<SocialRepr> for SocialPrefParams {
    type Error = Error;

    fn try_from(r: SocialRepr) -> Result<Self> {
        let p = SocialPrefParams {
            w_selfish: r.w_selfish,
            w_altruism: r.w_altruism,
            w_inequity: r.w_inequity,
            w_envy: r.w_envy,
            inequity_metric: r.inequity_metric,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<SocialPrefParams> for SocialRepr {
    fn from(p: SocialPrefParams) -> Self {
        SocialRepr {
            w_selfish: p.w_selfish,
            w_altruism: p.w_altruism,
            w_inequity: p.w_inequity,
            w_envy: p.w_envy,
            inequity_metric: p.inequity_metric,
        }
    }
}

impl SocialPrefParams {
    pub fn selfish() -> Self {
        Self {
            w_selfish: 1.0,
            w_altruism: 0.0,
            w_inequity: 0.0,
            w_envy: 0.0,
            inequity_metric: InequityMetric::Range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let named = [
            ("w_selfish", self.w_selfish),
            ("w_altruism", self.w_altruism),
            ("w_inequity", self.w_inequity),
            ("w_envy", self.w_envy),
        ];
        for (key, w) in named {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::validation(key, format!("must be finite and >= 0, got {w}")));
            }
        }
        if named.iter().all(|(_, w)| *w == 0.0) {
            return Err(Error::validation("w_selfish", "at least one weight must be positive"));
        }
        Ok(())
    }
}

fn inequity(base: &[f64], metric: InequityMetric) -> f64 {
    let hi = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = base.iter().copied().fold(f64::INFINITY, f64::min);
    if hi == lo {
        // the computed mean of equal values can be off by an ulp
        return 0.0;
    }
    match metric {
        InequityMetric::Range => hi - lo,
        InequityMetric::MeanDeviation => {
            let mean = base.iter().sum::<f64>() / base.len() as f64;
            base.iter().map(|b| (b - mean).abs()).sum::<f64>() / base.len() as f64
        }
    }
}

/// Social utility of `player` given everyone's base utilities.
pub fn social_utility(base: &[f64], player: usize, params: &SocialPrefParams) -> Result<f64> {
    if player >= base.len() {
        return Err(Error::InvalidArgument(format!(
            "player {player} out of range for {} utilities",
            base.len()
        )));
    }
    if base.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidArgument("base utilities must be finite".into()));
    }
    let own = base[player];
    let others: f64 = base.iter().enumerate().filter(|(j, _)| *j != player).map(|(_, b)| b).sum();
    let top = base.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut u = params.w_selfish * own + params.w_altruism * others;
    // skip zero-weighted terms so an all-selfish transform is exact
    if params.w_inequity != 0.0 {
        u -= params.w_inequity * inequity(base, params.inequity_metric);
    }
    if params.w_envy != 0.0 {
        u -= params.w_envy * (top - own).max(0.0);
    }
    Ok(u)
}

/// Game whose payoffs are the players' social utilities over each cell.
pub fn transform_game_social(game: &NormalFormGame, params: &[SocialPrefParams]) -> Result<NormalFormGame> {
    if params.len() != game.num_players() {
        return Err(Error::InvalidArgument(format!(
            "need social parameters for {} players, got {}",
            game.num_players(),
            params.len()
        )));
    }
    for p in params {
        p.validate()?;
    }
    Ok(game.map_cells(|player, cell| {
        social_utility(cell, player, &params[player]).expect("cell values are finite and in range")
    }))
}
