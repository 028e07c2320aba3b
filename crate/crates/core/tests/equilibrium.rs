use fairflow_core::fraction::{self, Rational};
use fairflow_core::game::{
    brute_force_best_response, build_report, default_games, equilibrium_check, Continuation, GameRole, RoleGame,
};

fn defaults() -> RoleGame {
    RoleGame::with_defaults(GameRole::OrderGuardian)
}

#[test]
fn default_threshold_is_four_twenty_ninths() {
    let check = equilibrium_check(&defaults()).unwrap();
    assert_eq!(check.p_star, fraction::ratio(4, 29));
    assert_eq!(check.v_honest, fraction::int(20));
    assert!(check.honest_is_best_response);
}

#[test]
fn low_detection_makes_the_guardian_deviate() {
    let mut g = defaults();
    g.detection_prob = fraction::ratio(1, 100);
    assert!(!equilibrium_check(&g).unwrap().honest_is_best_response);
    let mut file = default_games();
    for role in &mut file.roles {
        if role.role == GameRole::OrderGuardian {
            role.detection_prob = fraction::ratio(1, 100);
        }
    }
    let report = build_report(&file.roles, Some(4)).unwrap();
    for role in &report.roles {
        let expected = role.role != GameRole::OrderGuardian;
        assert_eq!(role.honest_is_best_response, expected, "{:?}", role.role);
        assert!(role.brute_force.as_ref().unwrap().agrees_with_closed_form);
    }
}

#[test]
fn brute_force_agrees_with_closed_form_on_a_grid() {
    let gs: [Rational; 5] = [0, 2, 5, 10, 40].map(fraction::int);
    let ps: [Rational; 5] = [
        fraction::zero(),
        fraction::ratio(1, 20),
        fraction::ratio(4, 29),
        fraction::ratio(1, 2),
        fraction::one(),
    ];
    let fs: [Rational; 5] = [0, 1, 10, 50, 200].map(fraction::int);
    let mut honest = 0;
    for g in &gs {
        for p in &ps {
            for f in &fs {
                let game = RoleGame {
                    deviation_gain: g.clone(),
                    detection_prob: p.clone(),
                    penalty: f.clone(),
                    ..defaults()
                };
                let closed = equilibrium_check(&game).unwrap().honest_is_best_response;
                let search = brute_force_best_response(&game, 12, Continuation::Honest).unwrap();
                assert_eq!(search.honest_is_argmax(), closed, "g={g} p={p} F={f}");
                honest += closed as u32;
            }
        }
    }
    assert!(honest > 0 && honest < 125);
}
