//! Repeated-game incentive check for the three protocol roles.
//!
//! Each role earns `r` per honest round. Deviating once pays `g` now; with
//! probability `p` it is detected, which costs `F` and excludes the node for
//! good (zero continuation). Undetected deviators resume honest play. Future
//! rounds are discounted by `delta`.

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fraction::{self, Rational};

pub const MAX_HORIZON: u32 = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GameError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("horizon {0} exceeds the search bound of {MAX_HORIZON}")]
    SearchBound(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameRole {
    AuctionManager,
    OrderGuardian,
    PrivacyKeeper,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleGame {
    pub role: GameRole,
    /// Per-round payoff from honest play.
    #[serde(with = "fraction::serde_rational")]
    pub honest_payoff: Rational,
    /// One-shot gain from deviating.
    #[serde(with = "fraction::serde_rational")]
    pub deviation_gain: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub detection_prob: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub penalty: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub discount: Rational,
}

impl RoleGame {
    /// r = 1, g = 5, p = 9/10, F = 10, delta = 19/20.
    pub fn with_defaults(role: GameRole) -> Self {
        RoleGame {
            role,
            honest_payoff: fraction::int(1),
            deviation_gain: fraction::int(5),
            detection_prob: fraction::ratio(9, 10),
            penalty: fraction::int(10),
            discount: fraction::ratio(19, 20),
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |what: &str| Err(GameError::InvalidArgument(what.to_string()));
        if self.discount.is_negative() || self.discount >= fraction::one() {
            return bad("discount must lie in [0, 1)");
        }
        if !fraction::in_unit_interval(&self.detection_prob) {
            return bad("detection probability must lie in [0, 1]");
        }
        if self.honest_payoff.is_negative() || self.deviation_gain.is_negative() || self.penalty.is_negative() {
            return bad("payoffs and penalty must be non-negative");
        }
        Ok(())
    }
}

/// Value of honest play forever: `r / (1 - delta)`.
pub fn honest_value(game: &RoleGame) -> Result<Rational, GameError> {
    game.validate()?;
    Ok(&game.honest_payoff / (fraction::one() - &game.discount))
}

/// Value of deviating once, then playing honestly if not caught:
/// `g - p F + (1 - p) delta V_honest`.
pub fn deviate_value(game: &RoleGame) -> Result<Rational, GameError> {
    let v = honest_value(game)?;
    let p = &game.detection_prob;
    Ok(&game.deviation_gain - p * &game.penalty + (fraction::one() - p) * &game.discount * v)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EquilibriumCheck {
    pub honest_is_best_response: bool,
    /// Smallest detection probability at which honesty is a best response.
    pub p_star: Rational,
    pub v_honest: Rational,
    pub v_deviate: Rational,
}

pub fn equilibrium_check(game: &RoleGame) -> Result<EquilibriumCheck, GameError> {
    let v_honest = honest_value(game)?;
    let v_deviate = deviate_value(game)?;
    let excess = &game.deviation_gain - &game.honest_payoff;
    let p_star = if excess.is_positive() {
        let denom = &game.discount * &v_honest + &game.penalty;
        if denom.is_zero() {
            // no stake at all: no p deters deviation
            fraction::one() + fraction::one()
        } else {
            excess / denom
        }
    } else {
        fraction::zero()
    };
    Ok(EquilibriumCheck {
        honest_is_best_response: v_honest >= v_deviate,
        p_star,
        v_honest,
        v_deviate,
    })
}

/// What happens after the last enumerated round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Continuation {
    /// The game stops after the horizon.
    Truncated,
    /// Surviving nodes play honestly forever after the horizon.
    Honest,
}

/// Exhaustive search over deviation plans of length `horizon`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BestResponse {
    pub horizon: u32,
    pub continuation: Continuation,
    /// Bit `t` set means deviate in round `t`. Ties go to the smaller mask.
    pub argmax: u32,
    pub argmax_value: Rational,
    pub all_honest_value: Rational,
    /// Best value among plans that deviate at least once.
    pub best_deviating_value: Option<Rational>,
}

impl BestResponse {
    pub fn honest_is_argmax(&self) -> bool {
        self.argmax == 0
    }

    /// All-honest strictly beats every deviating plan.
    pub fn honest_is_unique_argmax(&self) -> bool {
        match &self.best_deviating_value {
            Some(v) => self.all_honest_value > *v,
            None => true,
        }
    }
}

struct Search<'a> {
    game: &'a RoleGame,
    horizon: u32,
    honest_tail: Rational,
    deviate_step: Rational,
    survive: Rational,
}

impl Search<'_> {
    /// Calls `visit(mask, value)` for every plan, honest branch first.
    fn walk(&self, t: u32, mask: u32, weight: Rational, acc: Rational, visit: &mut dyn FnMut(u32, Rational)) {
        if t == self.horizon {
            let value = acc + &weight * &self.honest_tail;
            visit(mask, value);
            return;
        }
        let delta = &self.game.discount;
        let honest_acc = &acc + &weight * &self.game.honest_payoff;
        self.walk(t + 1, mask, &weight * delta, honest_acc, visit);
        let deviate_acc = acc + &weight * &self.deviate_step;
        self.walk(
            t + 1,
            mask | (1 << t),
            weight * &self.survive * delta,
            deviate_acc,
            visit,
        );
    }
}

fn search<'a>(game: &'a RoleGame, horizon: u32, continuation: Continuation) -> Result<Search<'a>, GameError> {
    if horizon > MAX_HORIZON {
        return Err(GameError::SearchBound(horizon));
    }
    let v = honest_value(game)?;
    Ok(Search {
        game,
        horizon,
        honest_tail: match continuation {
            Continuation::Truncated => fraction::zero(),
            Continuation::Honest => v,
        },
        deviate_step: &game.deviation_gain - &game.detection_prob * &game.penalty,
        survive: fraction::one() - &game.detection_prob,
    })
}

pub fn brute_force_best_response(
    game: &RoleGame,
    horizon: u32,
    continuation: Continuation,
) -> Result<BestResponse, GameError> {
    let s = search(game, horizon, continuation)?;
    let mut best: Option<(u32, Rational)> = None;
    let mut all_honest = None;
    let mut best_dev: Option<Rational> = None;
    s.walk(0, 0, fraction::one(), fraction::zero(), &mut |mask, value| {
        if mask == 0 {
            all_honest = Some(value.clone());
        } else if best_dev.as_ref().is_none_or(|b| value > *b) {
            best_dev = Some(value.clone());
        }
        let better = match &best {
            None => true,
            Some((m, v)) => value > *v || (value == *v && mask < *m),
        };
        if better {
            best = Some((mask, value));
        }
    });
    let (argmax, argmax_value) = best.expect("at least one plan");
    Ok(BestResponse {
        horizon,
        continuation,
        argmax,
        argmax_value,
        all_honest_value: all_honest.expect("all-honest plan visited"),
        best_deviating_value: best_dev,
    })
}

/// Discounted value of every plan, indexed by mask.
pub fn value_table(game: &RoleGame, horizon: u32, continuation: Continuation) -> Result<Vec<Rational>, GameError> {
    if horizon > 16 {
        return Err(GameError::SearchBound(horizon));
    }
    let s = search(game, horizon, continuation)?;
    let mut table = vec![fraction::zero(); 1 << horizon];
    s.walk(0, 0, fraction::one(), fraction::zero(), &mut |mask, value| {
        table[mask as usize] = value
    });
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruteForceSummary {
    pub horizon: u32,
    pub continuation: Continuation,
    pub argmax_plan: String,
    #[serde(with = "fraction::serde_rational")]
    pub argmax_value: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub all_honest_value: Rational,
    pub honest_is_argmax: bool,
    pub agrees_with_closed_form: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleEquilibrium {
    pub role: GameRole,
    #[serde(with = "fraction::serde_rational")]
    pub v_honest: Rational,
    #[serde(with = "fraction::serde_rational")]
    pub v_deviate: Rational,
    pub honest_is_best_response: bool,
    #[serde(with = "fraction::serde_rational")]
    pub p_star: Rational,
    pub p_star_approx: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub brute_force: Option<BruteForceSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub roles: Vec<RoleEquilibrium>,
}

/// Renders a plan as `H`/`D` per round, round 0 first.
pub fn plan_string(mask: u32, horizon: u32) -> String {
    (0..horizon)
        .map(|t| if mask >> t & 1 == 1 { 'D' } else { 'H' })
        .collect()
}

pub fn build_report(games: &[RoleGame], horizon: Option<u32>) -> Result<EquilibriumReport, GameError> {
    let mut roles = Vec::with_capacity(games.len());
    for game in games {
        let check = equilibrium_check(game)?;
        let brute_force = match horizon {
            Some(t) => {
                let br = brute_force_best_response(game, t, Continuation::Honest)?;
                Some(BruteForceSummary {
                    horizon: t,
                    continuation: br.continuation,
                    argmax_plan: plan_string(br.argmax, t),
                    honest_is_argmax: br.honest_is_argmax(),
                    agrees_with_closed_form: br.honest_is_argmax() == check.honest_is_best_response,
                    argmax_value: br.argmax_value,
                    all_honest_value: br.all_honest_value,
                })
            }
            None => None,
        };
        roles.push(RoleEquilibrium {
            role: game.role,
            p_star_approx: fraction::to_f64(&check.p_star),
            v_honest: check.v_honest,
            v_deviate: check.v_deviate,
            honest_is_best_response: check.honest_is_best_response,
            p_star: check.p_star,
            brute_force,
        });
    }
    Ok(EquilibriumReport { roles })
}

/// Role-game parameter file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleGameFile {
    #[serde(default)]
    pub label: String,
    pub roles: Vec<RoleGame>,
}

pub const DEFAULT_PARAMS_JSON: &str = include_str!("../data/role_games.default.json");

pub fn default_games() -> RoleGameFile {
    serde_json::from_str(DEFAULT_PARAMS_JSON).expect("shipped defaults parse")
}
