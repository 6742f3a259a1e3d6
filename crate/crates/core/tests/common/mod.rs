//! Shared test oracles: a fixed 2x2 game corpus with recursions written
//! directly in terms of the four payoff cells (strategies are the probability
//! of action 0), and a numeric demand maximizer for the fog market.

#![allow(dead_code)]

use hdm_core::NormalFormGame;

#[derive(Debug, Clone, Copy)]
pub struct Bimatrix {
    pub name: &'static str,
    pub row: [[f64; 2]; 2],
    pub col: [[f64; 2]; 2],
}

impl Bimatrix {
    pub fn game(&self) -> NormalFormGame {
        NormalFormGame::bimatrix(
            &[self.row[0].to_vec(), self.row[1].to_vec()],
            &[self.col[0].to_vec(), self.col[1].to_vec()],
        )
        .unwrap()
    }

    /// Row player's payoff of each action when the column player plays 0 with probability `q`.
    pub fn row_utils(&self, q: f64) -> [f64; 2] {
        let r = &self.row;
        [r[0][0] * q + r[0][1] * (1.0 - q), r[1][0] * q + r[1][1] * (1.0 - q)]
    }

    pub fn col_utils(&self, p: f64) -> [f64; 2] {
        let c = &self.col;
        [c[0][0] * p + c[1][0] * (1.0 - p), c[0][1] * p + c[1][1] * (1.0 - p)]
    }
}

pub fn corpus() -> [Bimatrix; 5] {
    [
        Bimatrix {
            name: "prisoners_dilemma",
            row: [[3.0, 0.0], [5.0, 1.0]],
            col: [[3.0, 5.0], [0.0, 1.0]],
        },
        Bimatrix {
            name: "stag_hunt",
            row: [[4.0, 0.0], [3.0, 3.0]],
            col: [[4.0, 3.0], [0.0, 3.0]],
        },
        Bimatrix {
            name: "matching_pennies",
            row: [[1.0, -1.0], [-1.0, 1.0]],
            col: [[-1.0, 1.0], [1.0, -1.0]],
        },
        Bimatrix {
            name: "asymmetric",
            row: [[2.0, -1.0], [0.0, 3.0]],
            col: [[1.0, 4.0], [2.0, 0.0]],
        },
        Bimatrix {
            name: "battle_of_sexes",
            row: [[3.0, 0.0], [0.0, 2.0]],
            col: [[2.0, 0.0], [0.0, 3.0]],
        },
    ]
}

/// Probability of action 0 under an exact best response with uniform tie-breaking.
pub fn br(u: [f64; 2]) -> f64 {
    if (u[0] - u[1]).abs() <= 1e-9 {
        0.5
    } else if u[0] > u[1] {
        1.0
    } else {
        0.0
    }
}

/// Probability of action 0 under a binary logit response.
pub fn logit(u: [f64; 2], lambda: f64) -> f64 {
    1.0 / (1.0 + (lambda * (u[1] - u[0])).exp())
}

/// `(row, col)` probabilities of action 0 at levels `0..=k` with uniform level 0.
pub fn level_chain(g: &Bimatrix, k: usize, respond: impl Fn([f64; 2]) -> f64) -> Vec<(f64, f64)> {
    let mut chain = vec![(0.5, 0.5)];
    for _ in 0..k {
        let (p, q) = *chain.last().unwrap();
        chain.push((respond(g.row_utils(q)), respond(g.col_utils(p))));
    }
    chain
}

/// Level-k mixture of the row player's action-0 probability.
pub fn level_k_row(g: &Bimatrix, weights: &[f64]) -> f64 {
    let chain = level_chain(g, weights.len() - 1, br);
    weights.iter().zip(&chain).map(|(w, (p, _))| w * p).sum()
}

/// Cognitive hierarchy for tau = 1.5 and three levels above level 0, spelled out.
pub fn cognitive_hierarchy_tau_1_5_level_3(g: &Bimatrix) -> (f64, f64) {
    let tau: f64 = 1.5;
    let e = (-tau).exp();
    let p0 = e;
    let p1 = e * tau;
    let p2 = e * tau * tau / 2.0;

    let (r0, c0) = (0.5, 0.5);
    let (r1, c1) = (br(g.row_utils(c0)), br(g.col_utils(r0)));

    let c_mix2 = (p0 * c0 + p1 * c1) / (p0 + p1);
    let r_mix2 = (p0 * r0 + p1 * r1) / (p0 + p1);
    let (r2, c2) = (br(g.row_utils(c_mix2)), br(g.col_utils(r_mix2)));

    let c_mix3 = (p0 * c0 + p1 * c1 + p2 * c2) / (p0 + p1 + p2);
    let r_mix3 = (p0 * r0 + p1 * r1 + p2 * r2) / (p0 + p1 + p2);
    (br(g.row_utils(c_mix3)), br(g.col_utils(r_mix3)))
}

/// Noisy introspection with lambda0 = 4, decay = 0.5, depth 3: the depth-3 layer is
/// uniform, then depths 2, 1, 0 respond with precision 1, 2, 4.
pub fn noisy_introspection_4_half_3(g: &Bimatrix) -> (f64, f64) {
    let (r3, c3) = (0.5, 0.5);
    let (r2, c2) = (logit(g.row_utils(c3), 1.0), logit(g.col_utils(r3), 1.0));
    let (r1, c1) = (logit(g.row_utils(c2), 2.0), logit(g.col_utils(r2), 2.0));
    (logit(g.row_utils(c1), 4.0), logit(g.col_utils(r1), 4.0))
}

/// Sup-norm residual of `(p, q)` as a logit equilibrium at precision `lambda`.
pub fn logit_residual(g: &Bimatrix, lambda: f64, p: f64, q: f64) -> f64 {
    let p_img = logit(g.row_utils(q), lambda);
    let q_img = logit(g.col_utils(p), lambda);
    (p - p_img).abs().max((q - q_img).abs())
}

/// Maximizer of `a * sum(alpha_m log(r_m beta_m)) - sum(c_m r_m)` subject to
/// `sum(c_m r_m) = budget`, found numerically: for a multiplier `nu` on the
/// spend, each `r_m` solves its own stationarity condition by bisection, and
/// `nu` is bisected (in log space) until the spend matches the budget.
pub fn constrained_demand_oracle(a: f64, alpha: &[f64], prices: &[f64], budget: f64) -> Vec<f64> {
    fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        // geometric bisection for a root of a decreasing function on (lo, hi)
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (lo * hi).sqrt()
    }
    let demand_at = |nu: f64| -> Vec<f64> {
        alpha
            .iter()
            .zip(prices)
            .map(|(&al, &c)| bisect_decreasing(|r| a * al / r - nu * c, 1e-300, 1e300))
            .collect()
    };
    let spend = |r: &[f64]| r.iter().zip(prices).map(|(r, c)| r * c).sum::<f64>();
    let nu = bisect_decreasing(|nu| spend(&demand_at(nu)) - budget, 1e-200, 1e200);
    demand_at(nu)
}
