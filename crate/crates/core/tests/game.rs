use hdm_core::game::{best_response_set, expected_utility, pure_nash, Belief, MixedStrategy, NormalFormGame};
use proptest::prelude::*;

/// Every profile of the given shape, last player varying fastest.
fn all_profiles(counts: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in counts {
        out = out
            .into_iter()
            .flat_map(|p: Vec<usize>| {
                (0..n).map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

fn game_strategy(max_players: usize, max_actions: usize) -> impl Strategy<Value = NormalFormGame> {
    prop::collection::vec(1..=max_actions, 2..=max_players).prop_flat_map(|counts| {
        let cells: usize = counts.iter().product();
        let players = counts.len();
        prop::collection::vec(prop::collection::vec(-10.0..10.0f64, cells), players)
            .prop_map(move |payoffs| NormalFormGame::new(counts.clone(), payoffs).unwrap())
    })
}

fn shaped_game(counts: Vec<usize>) -> impl Strategy<Value = NormalFormGame> {
    let cells: usize = counts.iter().product();
    let players = counts.len();
    prop::collection::vec(prop::collection::vec(-10.0..10.0f64, cells), players)
        .prop_map(move |payoffs| NormalFormGame::new(counts.clone(), payoffs).unwrap())
}

/// Integer payoffs make exact ties common, which exercises tie handling.
fn tie_heavy_game(max_players: usize, max_actions: usize) -> impl Strategy<Value = NormalFormGame> {
    prop::collection::vec(1..=max_actions, 2..=max_players).prop_flat_map(|counts| {
        let cells: usize = counts.iter().product();
        let players = counts.len();
        prop::collection::vec(prop::collection::vec(-2i32..=2, cells), players).prop_map(move |payoffs| {
            let payoffs = payoffs
                .into_iter()
                .map(|row| row.into_iter().map(f64::from).collect())
                .collect();
            NormalFormGame::new(counts.clone(), payoffs).unwrap()
        })
    })
}

fn strategy_of(len: usize) -> impl Strategy<Value = MixedStrategy> {
    prop::collection::vec(0.01..1.0f64, len).prop_map(|w| {
        let s: f64 = w.iter().sum();
        MixedStrategy::new(w.into_iter().map(|x| x / s).collect()).unwrap()
    })
}

fn beliefs_for(game: &NormalFormGame, owner: usize) -> impl Strategy<Value = (Belief, Belief)> {
    let lens: Vec<usize> = (0..game.num_players())
        .filter(|&p| p != owner)
        .map(|p| game.num_actions(p))
        .collect();
    let g = game.clone();
    let one = lens.iter().map(|&n| strategy_of(n)).collect::<Vec<_>>();
    let two = lens.iter().map(|&n| strategy_of(n)).collect::<Vec<_>>();
    (one, two).prop_map(move |(a, b)| {
        (
            Belief::new(&g, owner, a).unwrap(),
            Belief::new(&g, owner, b).unwrap(),
        )
    })
}

/// Mixes opponent `target`'s marginal; every other opponent keeps `a`'s marginal.
/// With independent opponents, expected utility is linear in each marginal separately.
fn mix_beliefs(game: &NormalFormGame, owner: usize, target: usize, a: &Belief, b: &Belief, t: f64) -> Belief {
    let opponents = (0..game.num_players())
        .filter(|&p| p != owner)
        .map(|p| {
            let (x, y) = (a.about(p).unwrap(), b.about(p).unwrap());
            if p == target {
                MixedStrategy::mixture([(t, x), (1.0 - t, y)])
            } else {
                x.clone()
            }
        })
        .collect();
    Belief::new(game, owner, opponents).unwrap()
}

/// Expected utility by brute-force summation over all joint profiles.
fn eu_oracle(game: &NormalFormGame, player: usize, action: usize, belief: &Belief) -> f64 {
    all_profiles(game.action_counts())
        .into_iter()
        .filter(|p| p[player] == action)
        .map(|p| {
            let weight: f64 = (0..game.num_players())
                .filter(|&q| q != player)
                .map(|q| belief.about(q).unwrap().prob(p[q]))
                .product();
            weight * game.payoff(player, &p)
        })
        .sum()
}

/// Profiles from which no player has a strictly profitable unilateral deviation.
fn nash_oracle(game: &NormalFormGame) -> Vec<Vec<usize>> {
    all_profiles(game.action_counts())
        .into_iter()
        .filter(|p| {
            (0..game.num_players()).all(|i| {
                let here = game.payoff(i, p);
                (0..game.num_actions(i)).all(|d| {
                    let mut q = p.clone();
                    q[i] = d;
                    game.payoff(i, &q) <= here + 1e-9
                })
            })
        })
        .collect()
}

fn with_player_payoffs(game: &NormalFormGame, player: usize, f: impl Fn(f64) -> f64) -> NormalFormGame {
    let payoffs = (0..game.num_players())
        .map(|p| {
            let table = game.payoff_table(p);
            if p == player {
                table.iter().map(|&x| f(x)).collect()
            } else {
                table.to_vec()
            }
        })
        .collect();
    NormalFormGame::new(game.action_counts().to_vec(), payoffs).unwrap()
}

#[test]
fn degenerate_belief_selects_a_column() {
    let g = NormalFormGame::bimatrix(&[vec![5.0, 1.0], vec![2.0, 3.0]], &[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
    let b = Belief::new(&g, 0, vec![MixedStrategy::pure(2, 0)]).unwrap();
    assert_eq!(expected_utility(&g, 0, 0, &b).unwrap(), 5.0);
}

#[test]
fn constant_game_expectation_and_ties() {
    let g = NormalFormGame::new(vec![3, 2], vec![vec![4.5; 6], vec![4.5; 6]]).unwrap();
    let b = Belief::uniform(&g, 0).unwrap();
    for a in 0..3 {
        assert!((expected_utility(&g, 0, a, &b).unwrap() - 4.5).abs() < 1e-12);
    }
    assert_eq!(best_response_set(&g, 0, &b).unwrap(), vec![0, 1, 2]);
}

#[test]
fn eu_matches_exhaustive_sum_on_2x3() {
    let g = NormalFormGame::new(
        vec![2, 3],
        vec![vec![0.3, -1.2, 2.5, 4.0, 0.7, -3.1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]],
    )
    .unwrap();
    for player in 0..2 {
        let b = Belief::uniform(&g, player).unwrap();
        for a in 0..g.num_actions(player) {
            let got = expected_utility(&g, player, a, &b).unwrap();
            assert!((got - eu_oracle(&g, player, a, &b)).abs() < 1e-12);
        }
    }
}

#[test]
fn out_of_range_action_is_rejected() {
    let g = NormalFormGame::new(vec![2, 2], vec![vec![0.0; 4], vec![0.0; 4]]).unwrap();
    let b = Belief::uniform(&g, 0).unwrap();
    assert!(expected_utility(&g, 0, 2, &b).is_err());
}

#[test]
fn dominant_action_is_a_singleton_best_response() {
    let g = NormalFormGame::bimatrix(
        &[vec![3.0, 3.0, 3.0], vec![1.0, 2.0, 0.0], vec![0.0, 2.9, 1.0]],
        &[vec![1.0; 3], vec![1.0; 3], vec![1.0; 3]],
    )
    .unwrap();
    let b = Belief::uniform(&g, 0).unwrap();
    assert_eq!(best_response_set(&g, 0, &b).unwrap(), vec![0]);
}

#[test]
fn prisoners_dilemma_has_mutual_defection_only() {
    let row = [vec![3.0, 0.0], vec![5.0, 1.0]];
    let col = [vec![3.0, 5.0], vec![0.0, 1.0]];
    let g = NormalFormGame::bimatrix(&row, &col).unwrap();
    assert_eq!(pure_nash(&g), vec![vec![1, 1]]);
}

#[test]
fn matching_pennies_has_no_pure_equilibrium() {
    let row = [vec![1.0, -1.0], vec![-1.0, 1.0]];
    let col = [vec![-1.0, 1.0], vec![1.0, -1.0]];
    assert!(pure_nash(&NormalFormGame::bimatrix(&row, &col).unwrap()).is_empty());
}

#[test]
fn three_player_game_matches_deviation_oracle() {
    let payoffs = vec![
        vec![3.0, 0.0, 1.0, 2.0, 0.5, 4.0, 2.0, 1.0],
        vec![1.0, 2.0, 3.0, 0.0, 2.0, 2.0, 1.0, 4.0],
        vec![2.0, 2.5, 0.0, 1.0, 3.0, 0.0, 1.5, 1.5],
    ];
    let g = NormalFormGame::new(vec![2, 2, 2], payoffs).unwrap();
    assert_eq!(pure_nash(&g), nash_oracle(&g));
}

#[test]
fn json_round_trip_preserves_the_game() {
    let g = NormalFormGame::new(vec![2, 3], vec![vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], vec![0.0; 6]]).unwrap();
    let text = serde_json::to_string(&g).unwrap();
    assert!(text.contains("\"action_counts\""));
    let back: NormalFormGame = serde_json::from_str(&text).unwrap();
    assert_eq!(back, g);
}

proptest! {
    #[test]
    fn eu_is_linear_in_beliefs(
        (g, owner, beliefs) in game_strategy(3, 3)
            .prop_flat_map(|g| (Just(g.clone()), 0..g.num_players()))
            .prop_flat_map(|(g, o)| (Just(g.clone()), Just(o), beliefs_for(&g, o)))
    ) {
        let (a, b) = beliefs;
        for target in (0..g.num_players()).filter(|&p| p != owner) {
            let only_b = mix_beliefs(&g, owner, target, &a, &b, 0.0);
            for t in [0.0, 0.25, 0.5, 1.0] {
                let mixed = mix_beliefs(&g, owner, target, &a, &b, t);
                for act in 0..g.num_actions(owner) {
                    let lhs = expected_utility(&g, owner, act, &mixed).unwrap();
                    let rhs = t * expected_utility(&g, owner, act, &a).unwrap()
                        + (1.0 - t) * expected_utility(&g, owner, act, &only_b).unwrap();
                    prop_assert!((lhs - rhs).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn eu_matches_brute_force(
        (g, owner, beliefs) in game_strategy(3, 4)
            .prop_flat_map(|g| (Just(g.clone()), 0..g.num_players()))
            .prop_flat_map(|(g, o)| (Just(g.clone()), Just(o), beliefs_for(&g, o)))
    ) {
        let (a, _) = beliefs;
        for act in 0..g.num_actions(owner) {
            let got = expected_utility(&g, owner, act, &a).unwrap();
            prop_assert!((got - eu_oracle(&g, owner, act, &a)).abs() < 1e-9);
        }
    }

    #[test]
    fn best_response_is_the_argmax(
        (g, beliefs) in shaped_game(vec![3, 3])
            .prop_flat_map(|g| (Just(g.clone()), beliefs_for(&g, 0)))
    ) {
        let (b, _) = beliefs;
        let eu: Vec<f64> = (0..3).map(|a| eu_oracle(&g, 0, a, &b)).collect();
        let max = eu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected: Vec<usize> = (0..3).filter(|&a| eu[a] >= max - 1e-9).collect();
        prop_assert_eq!(best_response_set(&g, 0, &b).unwrap(), expected);
    }

    #[test]
    fn best_response_survives_shift_and_scale(
        (g, beliefs) in game_strategy(3, 4).prop_flat_map(|g| (Just(g.clone()), beliefs_for(&g, 0))),
        shift in -50.0..50.0f64,
        scale in 0.1..20.0f64,
    ) {
        let (b, _) = beliefs;
        let base = best_response_set(&g, 0, &b).unwrap();
        let shifted = with_player_payoffs(&g, 0, |x| x + shift);
        let scaled = with_player_payoffs(&g, 0, |x| x * scale);
        prop_assert_eq!(&best_response_set(&shifted, 0, &b).unwrap(), &base);
        prop_assert_eq!(&best_response_set(&scaled, 0, &b).unwrap(), &base);
    }

    #[test]
    fn pure_nash_matches_deviation_oracle(g in game_strategy(3, 4)) {
        prop_assert_eq!(pure_nash(&g), nash_oracle(&g));
    }

    #[test]
    fn pure_nash_matches_oracle_with_ties(g in tie_heavy_game(3, 4)) {
        prop_assert_eq!(pure_nash(&g), nash_oracle(&g));
    }

    #[test]
    fn pure_nash_survives_shift(g in tie_heavy_game(3, 3), player in 0usize..2, shift in -3i32..=3) {
        let shifted = with_player_payoffs(&g, player, |x| x + f64::from(shift));
        prop_assert_eq!(pure_nash(&shifted), pure_nash(&g));
    }
}
