//! Maximum-likelihood fitting of behavioral models to observed choices.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{predict, BehavioralModel, Response};
use crate::error::{Error, Result};
use crate::game::NormalFormGame;

/// Predicted probabilities are floored here before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

const GOLDEN_ITERS: usize = 30;
/// Refinement stops early once a full pass gains less than this.
const REFINE_MIN_GAIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub game: NormalFormGame,
    pub player: usize,
    pub action: usize,
}

impl Observation {
    pub fn new(game: NormalFormGame, player: usize, action: usize) -> Result<Self> {
        let obs = Self { game, player, action };
        obs.validate()?;
        Ok(obs)
    }

    fn validate(&self) -> Result<()> {
        self.game.check_player(self.player)?;
        self.game.check_action(self.player, self.action)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationDataset {
    pub observations: Vec<Observation>,
}

impl ObservationDataset {
    pub fn new(observations: Vec<Observation>) -> Self {
        Self { observations }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Reads JSON Lines; blank lines are skipped. Every malformed line is
    /// reported, not just the first.
    pub fn read_jsonl<R: Read>(reader: R) -> Result<Self> {
        let mut observations = Vec::new();
        let mut problems = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str::<Observation>(&line)
                .map_err(Error::from)
                .and_then(|o| o.validate().map(|_| o));
            match parsed {
                Ok(o) => observations.push(o),
                Err(e) => problems.push(format!("line {}: {e}", i + 1)),
            }
        }
        if !problems.is_empty() {
            return Err(Error::Parse(format!("malformed dataset lines: {}", problems.join("; "))));
        }
        Ok(Self { observations })
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::fs::File::open(path)?)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for o in &self.observations {
            serde_json::to_writer(&mut writer, o)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn concat(&self, other: &ObservationDataset) -> Self {
        let mut observations = self.observations.clone();
        observations.extend(other.observations.iter().cloned());
        Self { observations }
    }

    fn subset(&self, indices: &[usize]) -> Self {
        Self {
            observations: indices.iter().map(|&i| self.observations[i].clone()).collect(),
        }
    }
}

/// A parametric family of behavioral models with the structure of a template.
///
/// The parameter vector puts level weights (level-k only) first, then the
/// scalar parameters. Weights live on the probability simplex; scalar
/// parameters are searched inside the bounds passed to [`fit_mle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFamily {
    template: BehavioralModel,
}

impl ModelFamily {
    pub fn new(template: BehavioralModel) -> Self {
        Self { template }
    }

    pub fn logit_qbr() -> Self {
        Self::new(BehavioralModel::LogitQbr { lambda: 1.0 })
    }

    pub fn epsilon_nash() -> Self {
        Self::new(BehavioralModel::EpsilonNash(crate::behavior::EpsilonNashParams {
            epsilon: 0.1,
            no_nash_fallback: Default::default(),
        }))
    }

    pub fn name(&self) -> &'static str {
        self.template.name()
    }

    pub fn template(&self) -> &BehavioralModel {
        &self.template
    }

    fn has_lambda(response: &Response) -> bool {
        matches!(response, Response::Qbr { .. })
    }

    /// Number of simplex coordinates at the front of the parameter vector.
    pub fn simplex_dim(&self) -> usize {
        match &self.template {
            BehavioralModel::LevelK(p) => p.level_weights.len(),
            _ => 0,
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.simplex_dim()).map(|k| format!("w{k}")).collect();
        names.extend(self.scalar_names().iter().map(|s| s.to_string()));
        names
    }

    pub fn scalar_names(&self) -> Vec<&'static str> {
        match &self.template {
            BehavioralModel::BestResponse => vec![],
            BehavioralModel::EpsilonNash(_) => vec!["epsilon"],
            BehavioralModel::LogitQbr { .. } => vec!["lambda"],
            BehavioralModel::LevelK(p) => {
                if Self::has_lambda(&p.response) {
                    vec!["lambda"]
                } else {
                    vec![]
                }
            }
            BehavioralModel::CognitiveHierarchy(p) => {
                if Self::has_lambda(&p.response) {
                    vec!["tau", "lambda"]
                } else {
                    vec!["tau"]
                }
            }
            BehavioralModel::NoisyIntrospection(_) => vec!["lambda0", "decay"],
        }
    }

    /// Search bounds used when none are configured.
    pub fn default_bounds(&self) -> Vec<(f64, f64)> {
        self.scalar_names()
            .into_iter()
            .map(|name| match name {
                "epsilon" => (0.0, 1.0),
                "tau" => (0.05, 5.0),
                "decay" => (0.05, 0.95),
                _ => (0.0, 10.0),
            })
            .collect()
    }

    /// Current parameters of the template, in parameter-vector order.
    pub fn template_params(&self) -> Vec<f64> {
        match &self.template {
            BehavioralModel::BestResponse => vec![],
            BehavioralModel::EpsilonNash(p) => vec![p.epsilon],
            BehavioralModel::LogitQbr { lambda } => vec![*lambda],
            BehavioralModel::LevelK(p) => {
                let mut v = p.level_weights.clone();
                if let Response::Qbr { lambda } = p.response {
                    v.push(lambda);
                }
                v
            }
            BehavioralModel::CognitiveHierarchy(p) => {
                let mut v = vec![p.tau];
                if let Response::Qbr { lambda } = p.response {
                    v.push(lambda);
                }
                v
            }
            BehavioralModel::NoisyIntrospection(p) => vec![p.lambda0, p.decay],
        }
    }

    /// The concrete model at `theta`.
    pub fn instantiate(&self, theta: &[f64]) -> Result<BehavioralModel> {
        let dim = self.simplex_dim() + self.scalar_names().len();
        if theta.len() != dim {
            return Err(Error::InvalidParameter(format!(
                "{} takes {dim} parameters, got {}",
                self.name(),
                theta.len()
            )));
        }
        if let Some(x) = theta.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite parameter {x}")));
        }
        let mut model = self.template.clone();
        match &mut model {
            BehavioralModel::BestResponse => {}
            BehavioralModel::EpsilonNash(p) => p.epsilon = theta[0],
            BehavioralModel::LogitQbr { lambda } => *lambda = theta[0],
            BehavioralModel::LevelK(p) => {
                let k = p.level_weights.len();
                p.level_weights = theta[..k].to_vec();
                if let Response::Qbr { lambda } = &mut p.response {
                    *lambda = theta[k];
                }
            }
            BehavioralModel::CognitiveHierarchy(p) => {
                p.tau = theta[0];
                if let Response::Qbr { lambda } = &mut p.response {
                    *lambda = theta[1];
                }
            }
            BehavioralModel::NoisyIntrospection(p) => {
                p.lambda0 = theta[0];
                p.decay = theta[1];
            }
        }
        model.validate()?;
        Ok(model)
    }
}

/// Log-likelihood plus the number of observations that hit the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodDetail {
    pub log_likelihood: f64,
    pub floored: usize,
}

pub fn log_likelihood_detail(family: &ModelFamily, theta: &[f64], data: &ObservationDataset) -> Result<LikelihoodDetail> {
    let model = family.instantiate(theta)?;
    let probs: Vec<f64> = data
        .observations
        .par_iter()
        .map(|obs| Ok(predict(&model, &obs.game, obs.player)?.prob(obs.action)))
        .collect::<Result<_>>()?;
    // summed in dataset order so the result does not depend on scheduling
    let mut total = 0.0;
    let mut floored = 0;
    for p in probs {
        if p < PROBABILITY_FLOOR {
            floored += 1;
        }
        total += p.max(PROBABILITY_FLOOR).ln();
    }
    Ok(LikelihoodDetail {
        log_likelihood: total,
        floored,
    })
}

/// Sum of log predicted probabilities of the chosen actions.
pub fn log_likelihood(family: &ModelFamily, theta: &[f64], data: &ObservationDataset) -> Result<f64> {
    Ok(log_likelihood_detail(family, theta, data)?.log_likelihood)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_refine_iters")]
    pub refine_iters: usize,
}

fn default_grid_points() -> usize {
    21
}

fn default_refine_iters() -> usize {
    3
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_points: default_grid_points(),
            refine_iters: default_refine_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: String,
    pub param_names: Vec<String>,
    pub params: Vec<f64>,
    pub model: BehavioralModel,
    pub log_likelihood: f64,
    pub evaluations: usize,
    pub cv_score: Option<f64>,
    pub observations: usize,
    pub probability_floor: f64,
    /// Observations whose predicted probability fell below the floor at the optimum.
    pub floored_observations: usize,
}

struct Objective<'a> {
    family: &'a ModelFamily,
    data: &'a ObservationDataset,
    evaluations: usize,
}

impl Objective<'_> {
    fn eval(&mut self, theta: &[f64]) -> Result<f64> {
        self.evaluations += 1;
        log_likelihood(self.family, theta, self.data)
    }

    /// Maximizes over one coordinate on `[lo, hi]`: golden section inside, plus both ends.
    fn line_search(&mut self, theta: &[f64], set: &dyn Fn(&mut Vec<f64>, f64), lo: f64, hi: f64) -> Result<(Vec<f64>, f64)> {
        let at = |x: f64, obj: &mut Self| -> Result<(Vec<f64>, f64)> {
            let mut t = theta.to_vec();
            set(&mut t, x);
            let v = obj.eval(&t)?;
            Ok((t, v))
        };
        let mut best = at(lo, self)?;
        if hi > lo {
            let end = at(hi, self)?;
            if end.1 > best.1 {
                best = end;
            }
            let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
            let (mut a, mut b) = (lo, hi);
            let mut x1 = b - inv_phi * (b - a);
            let mut x2 = a + inv_phi * (b - a);
            let mut f1 = at(x1, self)?;
            let mut f2 = at(x2, self)?;
            for _ in 0..GOLDEN_ITERS {
                if f1.1 >= f2.1 {
                    b = x2;
                    x2 = x1;
                    f2 = f1.clone();
                    x1 = b - inv_phi * (b - a);
                    f1 = at(x1, self)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2.clone();
                    x2 = a + inv_phi * (b - a);
                    f2 = at(x2, self)?;
                }
            }
            for cand in [f1, f2] {
                if cand.1 > best.1 {
                    best = cand;
                }
            }
        }
        Ok(best)
    }
}

fn check_bounds(family: &ModelFamily, bounds: &[(f64, f64)]) -> Result<()> {
    let names = family.scalar_names();
    if bounds.len() != names.len() {
        return Err(Error::InvalidArgument(format!(
            "{} needs bounds for {:?}, got {} pairs",
            family.name(),
            names,
            bounds.len()
        )));
    }
    for ((lo, hi), name) in bounds.iter().zip(names) {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!("bounds for {name} must be finite with lo <= hi")));
        }
    }
    Ok(())
}

/// Sets simplex coordinate `i` to `x`, rescaling the others to keep the sum at one.
fn set_simplex(theta: &mut [f64], k: usize, i: usize, x: f64) {
    let rest: f64 = (0..k).filter(|&j| j != i).map(|j| theta[j]).sum();
    for j in 0..k {
        if j == i {
            theta[j] = x;
        } else if rest > 0.0 {
            theta[j] *= (1.0 - x) / rest;
        } else {
            theta[j] = (1.0 - x) / (k - 1) as f64;
        }
    }
    let total: f64 = theta[..k].iter().sum();
    for w in &mut theta[..k] {
        *w /= total;
    }
}

/// Grid search over the scalar parameters followed by coordinate-wise
/// golden-section refinement of every parameter.
pub fn fit_mle(
    family: &ModelFamily,
    data: &ObservationDataset,
    bounds: &[(f64, f64)],
    search: SearchConfig,
) -> Result<FitResult> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if search.grid_points < 3 {
        return Err(Error::InvalidArgument("grid_points must be at least 3".into()));
    }
    check_bounds(family, bounds)?;
    let k = family.simplex_dim();
    let g = search.grid_points;
    let steps: Vec<f64> = bounds.iter().map(|(lo, hi)| (hi - lo) / (g - 1) as f64).collect();
    let mut obj = Objective {
        family,
        data,
        evaluations: 0,
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    let cells = g.pow(bounds.len() as u32);
    for cell in 0..cells {
        let mut theta = vec![1.0 / k.max(1) as f64; k];
        let mut rem = cell;
        for (d, (lo, _)) in bounds.iter().enumerate() {
            theta.push(lo + steps[d] * (rem % g) as f64);
            rem /= g;
        }
        let ll = obj.eval(&theta)?;
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((theta, ll));
        }
    }
    let (mut theta, mut ll) = best.expect("grid is nonempty");

    for _ in 0..search.refine_iters {
        let before = ll;
        for (d, &(lo, hi)) in bounds.iter().enumerate() {
            let idx = k + d;
            let a = (theta[idx] - steps[d]).max(lo);
            let b = (theta[idx] + steps[d]).min(hi);
            let (t, v) = obj.line_search(&theta, &|t, x| t[idx] = x, a, b)?;
            if v > ll {
                theta = t;
                ll = v;
            }
        }
        if k > 1 {
            for i in 0..k {
                let (t, v) = obj.line_search(&theta, &|t, x| set_simplex(t, k, i, x), 0.0, 1.0)?;
                if v > ll {
                    theta = t;
                    ll = v;
                }
            }
        }
        if ll - before < REFINE_MIN_GAIN {
            break;
        }
    }

    let detail = log_likelihood_detail(family, &theta, data)?;
    Ok(FitResult {
        family: family.name().to_string(),
        param_names: family.param_names(),
        model: family.instantiate(&theta)?,
        params: theta,
        log_likelihood: ll,
        evaluations: obj.evaluations,
        cv_score: None,
        observations: data.len(),
        probability_floor: PROBABILITY_FLOOR,
        floored_observations: detail.floored,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    /// Held-out log-likelihood per observation, one entry per fold.
    pub fold_scores: Vec<f64>,
    /// Total held-out log-likelihood divided by the dataset size.
    pub mean: f64,
}

/// Fold membership after a seeded shuffle: fold `i` holds a contiguous block.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    (0..k).map(|i| order[i * n / k..(i + 1) * n / k].to_vec()).collect()
}

/// k-fold cross-validation; folds are fitted concurrently.
pub fn cross_validate(
    family: &ModelFamily,
    data: &ObservationDataset,
    k: usize,
    bounds: &[(f64, f64)],
    search: SearchConfig,
    seed: u64,
) -> Result<CrossValidation> {
    if k < 2 {
        return Err(Error::InvalidArgument("cross-validation needs at least 2 folds".into()));
    }
    if data.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{k} folds requested but the dataset has only {} observations",
            data.len()
        )));
    }
    let folds = fold_assignment(data.len(), k, seed);
    let results: Vec<(f64, usize)> = folds
        .par_iter()
        .enumerate()
        .map(|(i, held)| {
            let train: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .flat_map(|(_, f)| f.iter().copied())
                .collect();
            let fit = fit_mle(family, &data.subset(&train), bounds, search)?;
            let ll = log_likelihood(family, &fit.params, &data.subset(held))?;
            Ok((ll, held.len()))
        })
        .collect::<Result<_>>()?;
    let total: f64 = results.iter().map(|(ll, _)| ll).sum();
    Ok(CrossValidation {
        fold_scores: results.iter().map(|(ll, n)| ll / *n as f64).collect(),
        mean: total / data.len() as f64,
    })
}

/// Game with payoffs drawn uniformly from `[-scale, scale]`.
pub fn random_game<R: Rng + ?Sized>(rng: &mut R, action_counts: &[usize], scale: f64) -> Result<NormalFormGame> {
    let cells: usize = action_counts.iter().product();
    let payoffs = (0..action_counts.len())
        .map(|_| (0..cells).map(|_| rng.random_range(-scale..=scale)).collect())
        .collect();
    NormalFormGame::new(action_counts.to_vec(), payoffs)
}

/// Samples an action index from a distribution.
pub fn sample_action<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// `n` observations of `model` on random 2x2 games with payoffs in
/// `[-scale, scale]`, alternating the observed player. Games for which the
/// model has no prediction (e.g. no pure equilibrium) are redrawn.
pub fn synthetic_dataset(model: &BehavioralModel, n: usize, scale: f64, seed: u64) -> Result<ObservationDataset> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut observations = Vec::with_capacity(n);
    while observations.len() < n {
        let game = random_game(&mut rng, &[2, 2], scale)?;
        let player = observations.len() % 2;
        let dist = match predict(model, &game, player) {
            Ok(d) => d,
            Err(Error::NoEquilibrium) => continue,
            Err(e) => return Err(e),
        };
        let action = sample_action(&mut rng, dist.weights());
        observations.push(Observation { game, player, action });
    }
    Ok(ObservationDataset { observations })
}
