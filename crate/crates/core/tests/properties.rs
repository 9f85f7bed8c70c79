use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use selconf_core::baselines::{lord_invariant_holds, GammaSequence, LordState};
use selconf_core::engine::{AciConfig, LordConfig};
use selconf_core::metrics::{trajectory_check, MethodAccumulator};
use selconf_core::sim::{generate_dataset, DataGenConfig};
use selconf_core::strategies::Features;
use selconf_core::{
    baselines::AciClip, build_interval, conformal_p_value, conformal_threshold, run_methods,
    select_calibration, BaselineConfig, EngineSettings, Level, Method, Radius, RuleSpec,
    ScoreFunction, SelectionRule, StrategyKind,
};

fn dyadic(max: i32) -> impl Strategy<Value = f64> {
    (0..max).prop_map(|k| k as f64 / 8.0)
}

fn rule_spec() -> impl Strategy<Value = RuleSpec> {
    (0usize..4, 0.5f64..5.0, 0.0f64..2.0).prop_map(|(f, tau0, tau1)| match f {
        0 => RuleSpec::running_count_threshold(tau0, tau1).unwrap(),
        1 => RuleSpec::rising_count_threshold(tau0, tau1).unwrap(),
        2 => RuleSpec::shifted_threshold(tau0, tau1).unwrap(),
        _ => RuleSpec::count_gate(tau1 * 3.0).unwrap(),
    })
}

fn features(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..2.0, 0..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 512,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn interval_and_p_value_agree(
        cal in prop::collection::vec(dyadic(64), 0..15),
        a in 1u32..20,
        x in dyadic(32),
        dy in prop::collection::vec(-10i32..10, 1..8),
    ) {
        let alpha = f64::from(a) / 20.0;
        let score_fn = ScoreFunction::linear(1.0);
        let interval = build_interval(x, &score_fn, conformal_threshold(&cal, alpha));
        let probes = cal.iter().map(|&s| x + s).chain(dy.iter().map(|&d| x + f64::from(d) / 4.0));
        for y in probes {
            let p = conformal_p_value(&cal, score_fn.score(x, y));
            prop_assert_eq!(interval.contains(y), p.exceeds(alpha));
        }
    }

    #[test]
    fn threshold_shrinks_as_alpha_grows(
        cal in prop::collection::vec(0.0f64..5.0, 0..30),
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let wide = conformal_threshold(&cal, lo);
        let narrow = conformal_threshold(&cal, hi);
        prop_assert_eq!(wide.min(narrow), narrow);
    }

    #[test]
    fn p_value_count_in_range(cal in prop::collection::vec(0.0f64..5.0, 0..30), s in 0.0f64..5.0) {
        let p = conformal_p_value(&cal, s);
        prop_assert!(p.count >= 1 && p.count <= p.total);
        prop_assert_eq!(p.total, cal.len() + 1);
    }

    #[test]
    fn ledger_replays_its_own_decisions(spec in rule_spec(), xs in features(40)) {
        let ledger = SelectionRule::uniform(spec).run(&xs);
        for (i, &x) in xs.iter().enumerate() {
            prop_assert_eq!(ledger.replay(i, x).unwrap(), ledger.decision(i));
        }
    }

    #[test]
    fn rules_depend_only_on_the_past(spec in rule_spec(), xs in features(40), cut in 0usize..40) {
        let cut = cut.min(xs.len());
        let rule = SelectionRule::uniform(spec);
        let full = rule.run(&xs);
        let prefix = rule.run(&xs[..cut]);
        prop_assert_eq!(&full.entries()[..cut], prefix.entries());
        let truncated = full.truncated(cut);
        prop_assert_eq!(truncated.entries(), prefix.entries());
    }

    #[test]
    fn calibration_sets_are_nested(
        spec in rule_spec(),
        off in features(6),
        on in prop::collection::vec(0.0f64..2.0, 1..25),
        k in 1usize..6,
    ) {
        let t = on.len() - 1;
        let ledger = SelectionRule::uniform(spec).run(&on[..t]);
        let rule = ledger.next_rule();
        let x_t = on[t];
        prop_assume!(ledger.evaluate(&rule, x_t));
        let f = Features::new(&off, &on[..t]);
        let get = |kind: StrategyKind| {
            select_calibration(&kind, t, x_t, &f, &ledger, &rule).unwrap().indices
        };
        let s_full = get(StrategyKind::SFull);
        let subset = |a: &[i64], b: &[i64]| a.iter().all(|j| b.contains(j));
        let express = get(StrategyKind::Express);
        let k_express = get(StrategyKind::KExpress { k });
        prop_assert!(subset(&get(StrategyKind::SFix), &s_full));
        prop_assert!(subset(&get(StrategyKind::Ada), &s_full));
        prop_assert!(subset(&express, &s_full));
        prop_assert!(subset(&k_express, &s_full));
        // On the shared window, agreeing over more past rules is stricter.
        let window_start = t.saturating_sub(k) as i64;
        let in_window = |v: Vec<i64>| -> Vec<i64> {
            v.into_iter().filter(|&j| j < 0 || j >= window_start).collect()
        };
        let wider = in_window(get(StrategyKind::KExpress { k: k + 1 }));
        prop_assert!(subset(&wider, &k_express));
        prop_assert!(subset(&in_window(express.clone()), &k_express));
        prop_assert_eq!(get(StrategyKind::KExpress { k: t + 1 }), express);
    }

    #[test]
    fn lord_spending_invariant(decisions in prop::collection::vec(any::<bool>(), 1..300), a in 0.05f64..0.95) {
        let mut state = LordState::new(a, a / 2.0, GammaSequence::InverseSquare).unwrap();
        let levels: Vec<f64> = decisions.iter().enumerate().map(|(t, &s)| state.step(t, s)).collect();
        prop_assert!(lord_invariant_holds(&levels, &decisions, a));
    }

    #[test]
    fn baseline_guarantees_hold_on_streams(seed in any::<u64>(), tau0 in 5.0f64..100.0, step in 0.001f64..0.2) {
        let data = DataGenConfig::new(20, 150);
        let stream = generate_dataset(&data, &mut ChaCha8Rng::seed_from_u64(seed));
        let rule = SelectionRule::uniform(RuleSpec::running_count_threshold(tau0, 1.0).unwrap());
        let methods = [
            Method::Baseline(BaselineConfig::Lord(LordConfig { w0: None, gamma_seq: GammaSequence::InverseSquare })),
            Method::Baseline(BaselineConfig::Aci(AciConfig { gamma_step: step, clip: AciClip::None })),
        ];
        let settings = EngineSettings::new(Level::new(0.4).unwrap());
        let trajs = run_methods(&stream, &rule, &methods, settings, &ScoreFunction::linear(1.0)).unwrap();
        for (m, traj) in methods.iter().zip(&trajs) {
            prop_assert_eq!(trajectory_check(m, traj, 0.4), Some(true));
        }
    }

    #[test]
    fn accumulator_merge_is_order_free(seed in any::<u64>(), split in 1usize..9) {
        let data = DataGenConfig::new(10, 30);
        let rule = SelectionRule::uniform(RuleSpec::running_count_threshold(30.0, 1.0).unwrap());
        let methods = [Method::Strategy(StrategyKind::Express), Method::Strategy(StrategyKind::SFix)];
        let settings = EngineSettings::new(Level::new(0.4).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trajs: Vec<_> = (0..10)
            .map(|_| {
                let s = generate_dataset(&data, &mut rng);
                run_methods(&s, &rule, &methods, settings, &ScoreFunction::linear(1.0)).unwrap().remove(0)
            })
            .collect();
        let whole = MethodAccumulator::from_trajectories(&trajs);
        let mut a = MethodAccumulator::from_trajectories(&trajs[split..]);
        a.merge(MethodAccumulator::from_trajectories(&trajs[..split]));
        prop_assert_eq!(whole.rows(), a.rows());
    }
}

#[test]
fn degenerate_levels() {
    assert_eq!(conformal_threshold(&[1.0, 2.0], 0.1), Radius::Infinite);
    assert_eq!(conformal_threshold(&[], 0.5), Radius::Infinite);
}
