use proptest::prelude::*;

use edca_core::agents::CW_CEILING;
use edca_core::metrics::summarize;
use edca_core::{run_episode, AgentTables, ControllerMode, ServiceCategory, SimConfig};

fn short_config(mode: ControllerMode, seed: u64, duration: f64) -> SimConfig {
    SimConfig {
        mode,
        rng_seed: seed,
        episode_duration: duration,
        episodes: 1,
        write_packet_log: false,
        ..SimConfig::default()
    }
}

fn mode_strategy() -> impl Strategy<Value = ControllerMode> {
    (0..ControllerMode::ALL.len()).prop_map(|i| ControllerMode::ALL[i])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn episode_invariants(mode in mode_strategy(), seed in 0u64..10_000, duration in 4.0f64..15.0) {
        let config = short_config(mode, seed, duration);
        let mut tables = AgentTables::for_mode(mode);
        let out = run_episode(&config, &mut tables, 0).unwrap();

        for s in summarize(&out.packets, out.duration) {
            prop_assert_eq!(s.generated, s.delivered + s.dropped + s.residual);
        }
        for p in &out.packets {
            prop_assert!(!(p.dropped && p.deliver_time.is_some()));
            if let Some(t) = p.deliver_time {
                prop_assert!(t > p.gen_time);
                prop_assert!(t <= duration + config.slot_time);
            }
        }

        for d in &out.decisions {
            let profile = config.profile(d.category);
            let p = d.params;
            prop_assert!(p.cw_min >= 1 && p.cw_min <= p.cw_max && p.cw_max <= CW_CEILING);
            prop_assert!(p.ifsn >= 1 && p.ifsn <= profile.ifsn_max);
            prop_assert!(d.wt >= 0.0 && d.wt <= profile.wt_max);

            prop_assert_eq!(d.a_cw.is_some(), mode.agent_count() >= 1);
            prop_assert_eq!(d.a_ifs.is_some(), mode.has_ifs());
            prop_assert_eq!(d.a_wt.is_some(), mode.has_wt());
            if let (Some(a_cw), Some(key)) = (d.a_cw, &d.ifs_state) {
                prop_assert_eq!(key.0[2], a_cw as u32);
            }
            if let Some(key) = &d.wt_state {
                prop_assert_eq!(key.0.len(), 4);
                prop_assert_eq!(key.0[2], d.category.index() as u32);
            }
            if !mode.has_wt() {
                prop_assert_eq!(d.wt, 0.0);
            }
        }
    }
}

#[test]
fn agent_modes_learn_only_their_tables() {
    for mode in ControllerMode::ALL {
        let mut tables = AgentTables::for_mode(mode);
        run_episode(&short_config(mode, 5, 20.0), &mut tables, 0).unwrap();
        assert_eq!(tables.iter().count(), mode.agent_count(), "{mode}");
        for t in tables.iter() {
            assert!(!t.is_empty(), "{mode}: {:?} table never visited", t.kind());
        }
    }
}

#[test]
fn qos_mode_keeps_standard_parameters() {
    let config = short_config(ControllerMode::Qos, 2, 20.0);
    let mut tables = AgentTables::for_mode(ControllerMode::Qos);
    let out = run_episode(&config, &mut tables, 0).unwrap();
    assert!(!out.decisions.is_empty());
    for d in &out.decisions {
        assert_eq!(d.params, edca_core::EdcaParams::standard(d.category));
    }
}

#[test]
fn every_category_carries_traffic() {
    let config = short_config(ControllerMode::NonQos, 4, 30.0);
    let mut tables = AgentTables::for_mode(ControllerMode::NonQos);
    let out = run_episode(&config, &mut tables, 0).unwrap();
    for c in ServiceCategory::ALL {
        assert!(out.packets.iter().any(|p| p.category == c), "no {c} packets");
    }
}
