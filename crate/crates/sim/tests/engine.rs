use std::collections::BTreeSet;

use oppweb_sim::{
    cross_check, run_scenario, write_messages_csv, write_summary_csv, GroupConfig, LoadConfig, NodeClass, ScenarioConfig,
    Simulation, SizeModel,
};
use proptest::prelude::*;

fn group(name: &str, class: NodeClass, count: usize, speed: (f64, f64), range: f64) -> GroupConfig {
    GroupConfig { name: name.into(), class, count, speed, range, bitrate: 2_000_000.0, positions: Vec::new() }
}

fn fixed(name: &str, positions: &[(f64, f64)], range: f64) -> GroupConfig {
    GroupConfig { positions: positions.to_vec(), ..group(name, NodeClass::NativeMobile, positions.len(), (0.0, 0.0), range) }
}

fn scenario(groups: Vec<GroupConfig>) -> ScenarioConfig {
    ScenarioConfig {
        name: "test".into(),
        seed: 7,
        width: 100.0,
        height: 100.0,
        duration: 100.0,
        step: 1.0,
        runs: 1,
        setup_latency: 0.0,
        map: None,
        load: LoadConfig { interval: 10.0, ttl: 1000.0, size: SizeModel::Constant(350), first_at: None, limit: None, origin: None },
        groups,
        sweep: None,
    }
}

fn coverage(cfg: &ScenarioConfig) -> f64 {
    run_scenario(cfg).unwrap().native_coverage().unwrap()
}

#[test]
fn two_nodes_in_range_share_everything() {
    let cfg = scenario(vec![fixed("a", &[(10.0, 10.0), (40.0, 10.0)], 50.0)]);
    assert_eq!(coverage(&cfg), 1.0);
}

#[test]
fn two_nodes_out_of_range_keep_their_own() {
    let cfg = scenario(vec![fixed("a", &[(0.0, 0.0), (100.0, 100.0)], 50.0)]);
    assert_eq!(coverage(&cfg), 0.5);
}

/// Five static nodes on a line, each hearing only its neighbours. A single
/// message walks down the line one hop at a time; each hop waits for its
/// link's setup and then needs ceil(size * 8 / bitrate) whole steps.
#[test]
fn line_follows_the_hop_schedule() {
    let xs: Vec<(f64, f64)> = (0..5).map(|i| (i as f64 * 10.0, 0.0)).collect();
    let mut cfg = scenario(vec![fixed("line", &xs, 15.0)]);
    cfg.setup_latency = 2.0;
    cfg.groups[0].bitrate = 8000.0;
    cfg.load.size = SizeModel::Constant(3000);
    cfg.load.first_at = Some(0.0);
    cfg.load.limit = Some(1);
    cfg.load.origin = Some(0);
    let run = Simulation::new(&cfg, 0, None).run_to_end();

    // hop k arrives at setup + k * transfer_steps
    let transfer_steps = (3000.0 * 8.0 / 8000.0_f64).ceil();
    let expected: Vec<f64> = (1..5).map(|k| 2.0 + k as f64 * transfer_steps).collect();
    assert_eq!(expected, vec![5.0, 8.0, 11.0, 14.0]);
    let arrivals: Vec<(usize, u64)> = run.transfers.iter().map(|t| (t.to, t.step + 1)).collect();
    assert_eq!(arrivals, vec![(1, 5), (2, 8), (3, 11), (4, 14)]);
    let m = &run.messages[0];
    assert_eq!(m.native_reached, 5);
    assert_eq!(m.latency_p50, Some(8.0));
    assert_eq!(m.latency_p90, Some(14.0));
}

#[test]
fn clique_reaches_everyone() {
    let pts: Vec<(f64, f64)> = (0..6).map(|i| (50.0 + i as f64, 50.0)).collect();
    let mut cfg = scenario(vec![fixed("c", &pts, 30.0)]);
    cfg.duration = 200.0;
    cfg.load.limit = Some(10);
    let run = Simulation::new(&cfg, 0, None).run_to_end();
    assert_eq!(run.messages.len(), 10);
    assert!(run.messages.iter().all(|m| m.native_reached == 6));
    // every receiver gets every message exactly once
    assert_eq!(run.transfers_completed, 10 * 5);
}

fn mobile() -> ScenarioConfig {
    let mut cfg = scenario(vec![group("walkers", NodeClass::NativeMobile, 12, (0.5, 1.5), 25.0)]);
    cfg.width = 300.0;
    cfg.height = 300.0;
    cfg.duration = 1500.0;
    cfg.runs = 3;
    cfg.load.interval = 30.0;
    cfg.load.ttl = 900.0;
    cfg.load.size = SizeModel::Range { min: 1000, max: 400_000 };
    cfg.setup_latency = 1.0;
    cfg
}

fn csv_bytes(cfg: &ScenarioConfig) -> (Vec<u8>, Vec<u8>) {
    let rep = run_scenario(cfg).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_summary_csv(&mut a, std::slice::from_ref(&rep)).unwrap();
    write_messages_csv(&mut b, std::slice::from_ref(&rep)).unwrap();
    (a, b)
}

#[test]
fn same_seed_gives_identical_csv() {
    let cfg = mobile();
    assert_eq!(csv_bytes(&cfg), csv_bytes(&cfg));
    let mut other = cfg.clone();
    other.seed += 100;
    assert_ne!(csv_bytes(&cfg).1, csv_bytes(&other).1);
}

#[test]
fn runs_use_consecutive_seeds() {
    let rep = run_scenario(&mobile()).unwrap();
    let seeds: Vec<u64> = rep.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![7, 8, 9]);
}

/// Replaying the transfer log from the origins reproduces the final
/// holdings: no copy appears from nowhere and none is delivered twice.
#[test]
fn transfer_log_accounts_for_every_copy() {
    let cfg = mobile();
    let run = Simulation::new(&cfg, 1, None).run_to_end();
    assert!(run.transfers_completed > 0 && run.transfers_aborted > 0, "scenario should exercise both outcomes");
    let mut held: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); run.holdings.len()];
    let mut since: std::collections::HashMap<(usize, usize), Option<u64>> = Default::default();
    for m in &run.messages {
        held[m.message.origin].insert(m.message.index);
        since.insert((m.message.origin, m.message.index), None);
    }
    let mut delivered = 0u64;
    for t in &run.transfers {
        let sender_had = since.get(&(t.from, t.message)).expect("sender held the message");
        assert!(sender_had.map_or(true, |s| s < t.step), "relayed within the step it arrived");
        assert!(held[t.to].insert(t.message), "duplicate delivery");
        since.insert((t.to, t.message), Some(t.step));
        delivered += run.messages[t.message].message.size;
    }
    for (n, h) in held.iter().enumerate() {
        assert_eq!(h.iter().copied().collect::<Vec<_>>(), run.holdings[n]);
    }
    assert_eq!(run.transfers_completed, run.transfers.len() as u64);
    assert!(run.bytes_transferred >= delivered);
}

#[test]
fn adding_a_group_leaves_other_trajectories_alone() {
    let base = mobile();
    let mut more = base.clone();
    more.groups.push(group("extra", NodeClass::NativeMobile, 5, (1.0, 2.0), 25.0));
    let mut a = Simulation::new(&base, 0, None);
    let mut b = Simulation::new(&more, 0, None);
    for _ in 0..300 {
        a.step();
        b.step();
    }
    for n in 0..12 {
        assert_eq!(a.position(n), b.position(n));
    }
}

#[test]
fn web_clients_are_reached_only_through_access_points() {
    let mut cfg = scenario(vec![
        fixed("src", &[(10.0, 10.0)], 50.0),
        GroupConfig { positions: vec![(30.0, 10.0)], ..group("ap", NodeClass::NativeApStatic, 1, (0.0, 0.0), 50.0) },
        GroupConfig { positions: vec![(40.0, 10.0), (100.0, 100.0)], ..group("web", NodeClass::WebMobile, 2, (0.0, 0.0), 30.0) },
    ]);
    cfg.load.limit = Some(3);
    let run = Simulation::new(&cfg, 0, None).run_to_end();
    assert_eq!(run.web_nodes, 2);
    assert!(run.messages.iter().all(|m| m.web_reached == 1));
    assert_eq!(run.web_coverage, Some(0.5));
    // the access point is native and holds every message
    assert_eq!(run.native_coverage, Some(1.0));
}

#[test]
fn expired_messages_stop_spreading() {
    // the second node only comes into range after the message has expired
    let mut cfg = scenario(vec![
        fixed("src", &[(0.0, 0.0)], 20.0),
        GroupConfig { positions: vec![(100.0, 0.0)], ..group("late", NodeClass::NativeMobile, 1, (1.0, 1.0), 20.0) },
    ]);
    cfg.width = 100.0;
    cfg.height = 0.0001;
    cfg.duration = 400.0;
    cfg.load.limit = Some(1);
    cfg.load.origin = Some(0);
    cfg.load.ttl = 30.0;
    let run = Simulation::new(&cfg, 0, None).run_to_end();
    assert_eq!(run.messages[0].native_reached, 1);
}

#[test]
fn protocol_replay_agrees_with_the_model() {
    let mut cfg = scenario(vec![group("w", NodeClass::NativeMobile, 6, (0.2, 0.6), 40.0)]);
    cfg.width = 150.0;
    cfg.height = 150.0;
    cfg.duration = 3000.0;
    cfg.load.interval = 40.0;
    cfg.load.limit = Some(6);
    cfg.load.ttl = 10_000.0;
    for run in 0..3 {
        let check = cross_check(&cfg, run).unwrap();
        assert_eq!(check.nodes, 6);
        assert!(check.sessions > 0 && check.data_frames > 0);
        assert!(check.agrees(), "run {run}: {check:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// On a static topology a longer radio range only adds contacts, so
    /// coverage never drops.
    #[test]
    fn longer_range_never_lowers_coverage(seed in 0u64..1000, r in 5.0f64..60.0, extra in 0.0f64..60.0) {
        let mut cfg = scenario(vec![group("s", NodeClass::NativeMobile, 10, (0.0, 0.0), r)]);
        cfg.seed = seed;
        cfg.duration = 120.0;
        cfg.load.limit = Some(5);
        let near = coverage(&cfg);
        cfg.groups[0].range = r + extra;
        let far = coverage(&cfg);
        prop_assert!(far >= near, "{near} -> {far}");
    }
}
