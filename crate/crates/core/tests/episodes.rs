use adr_core::env::{action_count, observation_len, Action, MissionState, TerminationReason};
use adr_core::harness::{self, EvaluationMode, SuiteConfig};
use adr_core::planners::{greedy_ca_min_time, greedy_min_dv};
use adr_core::ppo::{self, PolicyParameters};
use adr_core::rng::{rng_from_seed, uniform_index};
use adr_core::scenario::{generate_scenario, load_scenario, save_scenario, MissionParams};
use proptest::prelude::*;

fn params(n: usize, p: f64) -> MissionParams {
    MissionParams { n_debris: n, collision_probability: p, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_episodes_keep_state_invariants(seed in any::<u64>(), n in 1usize..12, p in 0.0f64..1.0) {
        let s = generate_scenario(seed, &params(n, p)).unwrap();
        let mut st = MissionState::reset(&s, seed ^ 0xabc);
        let mut rng = rng_from_seed(seed);
        let mut elapsed = 0.0;
        let mut refuel_budget_ok = true;
        while !st.is_terminal() {
            let obs = st.observation(&s);
            prop_assert_eq!(obs.values.len(), observation_len(n));
            prop_assert!(obs.values.iter().all(|v| v.is_finite()));
            let mask = st.action_mask(&s).unwrap();
            prop_assert_eq!(mask.len(), action_count(n));
            let valid = st.valid_actions(&s).unwrap();
            prop_assert!(!valid.is_empty());
            if let Some(t) = st.pending_target {
                prop_assert!(valid.iter().all(|a| a.is_detour() && a.target() == Some(t)));
            } else {
                prop_assert!(valid.iter().all(|a| !a.is_detour()));
            }
            let a = valid[uniform_index(&mut rng, valid.len())];
            if a == Action::Refuel {
                refuel_budget_ok &= st.refuel_eligible;
            }
            let out = st.step(&s, a).unwrap();
            prop_assert!(st.elapsed_s >= elapsed);
            elapsed = st.elapsed_s;
            prop_assert!(st.fuel <= 1.0);
            prop_assert!(out.reward >= -2.0 && out.reward <= 1.0);
        }
        prop_assert!(refuel_budget_ok);
        prop_assert!(st.step(&s, Action::Debris(0)).is_err());
        let collided = st.termination == Some(TerminationReason::Collision);
        let exhausted = st.termination.is_some_and(|t| t.is_exhaustion());
        let expected = st.visited_count() as f64 - collided as u8 as f64 - exhausted as u8 as f64;
        prop_assert_eq!(st.episode_return, expected);
    }

    #[test]
    fn greedy_episodes_terminate_cleanly(seed in any::<u64>(), n in 1usize..20) {
        let s = generate_scenario(seed, &params(n, 1.0 / 3.0)).unwrap();
        let mut st = MissionState::reset(&s, seed);
        while !st.is_terminal() {
            let a = if st.pending_target.is_some() { greedy_ca_min_time(&st, &s).unwrap() } else { greedy_min_dv(&st, &s).unwrap() };
            prop_assert!(st.action_mask(&s).unwrap()[a.to_index(n)]);
            st.step(&s, a).unwrap();
        }
        if st.termination == Some(TerminationReason::AllVisited) {
            prop_assert_eq!(st.visited_count(), n);
        }
    }
}

#[test]
fn file_round_trip_feeds_the_harness() {
    let dir = tempfile::tempdir().unwrap();
    let s = generate_scenario(21, &params(6, 1.0 / 3.0)).unwrap();
    let path = dir.path().join("case.csv");
    save_scenario(&s, &path).unwrap();
    let loaded = load_scenario(&path).unwrap();
    assert_eq!(loaded, s);

    let policy = PolicyParameters::new(6, [32, 32], 4).unwrap();
    let ppath = dir.path().join("policy.json");
    ppo::save_policy(&policy, &ppath).unwrap();
    let policy = ppo::load_policy(&ppath, Some(loaded.n())).unwrap();

    let cfg = SuiteConfig { n_test_cases: 1, iterations: 4, seed: 3, mission: loaded.params.clone(), ..Default::default() };
    let direct = harness::run_suite_on(&cfg, &[s], Some(&policy)).unwrap();
    let via_file = harness::run_suite_on(&cfg, &[loaded], Some(&policy)).unwrap();
    assert_eq!(direct, via_file);
    assert_eq!(direct.rows.len(), 16);
    assert_eq!(direct.summary.len(), 4);
    let gg = direct.summary.iter().find(|m| m.mode == EvaluationMode::GreedyGreedy).unwrap();
    assert!(gg.min <= gg.max && gg.avg >= gg.min as f64 && gg.avg <= gg.max as f64);
}
