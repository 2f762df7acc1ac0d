use std::collections::{HashMap, HashSet};

use lgs_core::config::ModelConfig;
use lgs_core::controller::vote3;
use lgs_core::kernel::{ChoicePolicy, Chooser, EventId, Kernel};
use lgs_core::model::{
    fingerprint, preset_state, DoorPhysState, GearPhysState, HandleState, ModuleId, ObsEvent, OrderOutputs, Phase,
    Preset, SystemState, SENSOR_COUNT,
};
use lgs_core::monitor;
use lgs_core::scenario::{run_schedule, RunOptions, RunResult};
use lgs_core::trace::{canonical_record, StopReason, TraceHeader};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn moves(start: HandleState, gaps: &[u64]) -> Vec<(u64, EventId)> {
    let mut dir = start;
    let mut cycle = 0;
    gaps.iter()
        .map(|g| {
            cycle += g;
            dir = dir.opposite();
            (cycle, EventId::handle(dir))
        })
        .collect()
}

fn run(seed: u64, preset: Preset, mut schedule: Vec<(u64, EventId)>, silent: Option<ModuleId>) -> RunResult {
    let cfg = ModelConfig::default();
    let kernel = Kernel::new(cfg.clone());
    let s = preset_state(preset);
    if let Some(m) = silent {
        schedule.insert(0, (0, EventId::ForceSilent(m)));
    }
    let header = TraceHeader::new("prop", Some(seed), preset, &cfg);
    let opts = RunOptions { max_steps: 600, stop_on_violation: false, record_deltas: false };
    let mut chooser = Chooser::new(ChoicePolicy::SeededRandom { seed });
    run_schedule(&kernel, header, s, schedule, &mut chooser, &opts).unwrap()
}

/// States of a run in order, the initial state first.
fn states(r: &RunResult) -> Vec<(Option<EventId>, SystemState)> {
    let kernel = Kernel::new(r.trace.header.config.clone());
    let mut s = preset_state(r.trace.header.preset);
    let mut out = vec![(None, s.clone())];
    for rec in &r.trace.records {
        s = kernel.fire_aligned(&s, &rec.event, rec.phase, rec.boundary).unwrap();
        out.push((Some(rec.event.clone()), s.clone()));
    }
    out
}

fn preset() -> impl Strategy<Value = Preset> {
    prop_oneof![Just(Preset::Ground), Just(Preset::Flight)]
}

fn gaps() -> impl Strategy<Value = Vec<u64>> {
    prop::collection::vec(0u64..15, 1..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn vote_is_permutation_invariant(values in any::<[bool; 3]>(), valid in any::<[bool; 3]>(), perm in 0usize..6) {
        let p = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]][perm];
        let a = vote3(values, valid).map(|r| r.value);
        let b = vote3(p.map(|i| values[i]), p.map(|i| valid[i])).map(|r| r.value);
        prop_assert_eq!(a, b);
        // Oracle: strict majority of the valid channels, none on a tie.
        let ones = (0..3).filter(|&i| valid[i] && values[i]).count();
        let zeros = (0..3).filter(|&i| valid[i] && !values[i]).count();
        let expected = if ones + zeros == 0 { None } else if ones > zeros { Some(Some(true)) } else if zeros > ones { Some(Some(false)) } else { Some(None) };
        prop_assert_eq!(a.ok(), expected);
    }

    #[test]
    fn logical_clock_strictly_increases(seed in any::<u64>(), preset in preset(), gaps in gaps()) {
        let start = preset_state(preset).internals.order;
        let r = run(seed, preset, moves(start, &gaps), None);
        let mut last = 0;
        for rec in &r.trace.records {
            prop_assert!(rec.llc > last, "llc {} after {}", rec.llc, last);
            last = rec.llc;
        }
    }

    #[test]
    fn nominal_runs_respect_every_safety_requirement(seed in any::<u64>(), preset in preset(), gaps in gaps()) {
        let start = preset_state(preset).internals.order;
        let r = run(seed, preset, moves(start, &gaps), None);
        prop_assert!(r.violations.is_empty(), "{:?}", r.violations);
        prop_assert!(r.cycles.iter().all(|c| c.status != lgs_core::trace::CycleStatus::Fails));
    }

    #[test]
    fn monitor_is_pure(seed in any::<u64>(), gaps in gaps()) {
        let r = run(seed, Preset::Ground, moves(HandleState::Down, &gaps), None);
        for (_, s) in states(&r) {
            let before = canonical_record(&s);
            let first = monitor::check_safety(&s);
            prop_assert_eq!(&first, &monitor::check_safety(&s));
            prop_assert_eq!(before, canonical_record(&s));
        }
    }

    #[test]
    fn redundant_modules_agree_without_faults(seed in any::<u64>(), preset in preset(), gaps in gaps()) {
        let start = preset_state(preset).internals.order;
        let r = run(seed, preset, moves(start, &gaps), None);
        for (_, s) in states(&r) {
            // Once both modules had their turn and the merge ran, the
            // replicas hold identical state.
            if s.phase == Phase::Order && !s.internals.merge_pending && !s.internals.spawn_pending {
                prop_assert_eq!(s.kstate.k_orders[0], s.kstate.k_orders[1]);
                prop_assert_eq!(s.kstate.k_state_outputs[0], s.kstate.k_state_outputs[1]);
                prop_assert_eq!(s.kstate.k_seq[0], s.kstate.k_seq[1]);
            }
        }
    }

    #[test]
    fn silent_module_leaves_the_healthy_one_in_charge(seed in any::<u64>(), gaps in gaps(), m in 1u8..=2) {
        let silent = ModuleId::new(m).unwrap();
        let r = run(seed, Preset::Ground, moves(HandleState::Down, &gaps), Some(silent));
        let healthy = 1 - silent.index();
        for (ev, s) in states(&r) {
            if ev == Some(EventId::Merge) {
                prop_assert_eq!(s.orders, s.kstate.k_orders[healthy]);
            }
        }
        prop_assert!(r.violations.is_empty(), "{:?}", r.violations);
    }

    #[test]
    fn one_maneuver_order_rises_per_module_step(seed in any::<u64>(), preset in preset(), gaps in gaps()) {
        let start = preset_state(preset).internals.order;
        let r = run(seed, preset, moves(start, &gaps), None);
        let all = states(&r);
        for w in all.windows(2) {
            let (before, (ev, after)) = (&w[0].1, &w[1]);
            if let Some(EventId::Module(m, _)) = ev {
                let i = m.index();
                let (a, b) = (before.kstate.k_orders[i].as_array(), after.kstate.k_orders[i].as_array());
                let risen = (1..5).filter(|&j| !a[j] && b[j]).count();
                prop_assert!(risen <= 1, "{ev:?} raised {risen} maneuver orders");
            }
        }
    }

    #[test]
    fn quiescence_means_nothing_enabled(seed in any::<u64>(), preset in preset(), gaps in gaps()) {
        let start = preset_state(preset).internals.order;
        let r = run(seed, preset, moves(start, &gaps), None);
        if r.stop_reason == StopReason::Quiescent {
            let kernel = Kernel::default();
            for phase in Phase::ALL {
                let mut s = r.final_state.clone();
                s.fired = 0;
                prop_assert!(kernel.enabled_events(&s, *phase).is_empty(), "{phase} still has events");
            }
        }
    }
}

/// Reachable states with a few fields scrambled, so the sample spans far
/// more of the state space than nominal runs reach.
fn perturbed(base: &SystemState, rng: &mut ChaCha8Rng) -> SystemState {
    let mut s = base.clone();
    for _ in 0..rng.gen_range(1..=3) {
        match rng.gen_range(0..8) {
            0 => s.llc = rng.gen_range(0..64),
            1 => {
                let e = ObsEvent::ALL[rng.gen_range(0..ObsEvent::ALL.len())];
                s.ldate.insert(e, rng.gen_range(0..64));
            }
            2 => {
                s.plant.door_state[rng.gen_range(0..3)] = DoorPhysState::ALL[rng.gen_range(0..DoorPhysState::ALL.len())]
            }
            3 => {
                s.plant.gear_state[rng.gen_range(0..3)] = GearPhysState::ALL[rng.gen_range(0..GearPhysState::ALL.len())]
            }
            4 => {
                let (c, d) = (rng.gen_range(0..3), rng.gen_range(0..3));
                s.inputs.door_open[c][d] ^= true;
            }
            5 => s.internals.channel_valid[rng.gen_range(0..SENSOR_COUNT)][rng.gen_range(0..3)] ^= true,
            6 => s.fired = rng.gen(),
            _ => s.kstate.k_orders[rng.gen_range(0..2)] = OrderOutputs::from_array(rng.gen()),
        }
    }
    s
}

#[test]
fn fingerprints_do_not_collide_on_distinct_states() {
    let mut pool = Vec::new();
    for seed in 0..100 {
        let preset = if seed % 2 == 0 { Preset::Ground } else { Preset::Flight };
        let start = preset_state(preset).internals.order;
        let r = run(seed, preset, moves(start, &[0, 3 + seed % 11, 2 + seed % 7]), None);
        pool.extend(states(&r).into_iter().map(|(_, s)| s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut seen: HashMap<u64, String> = HashMap::new();
    let mut distinct: HashSet<String> = HashSet::new();
    while distinct.len() < 100_000 {
        let s = perturbed(&pool[rng.gen_range(0..pool.len())], &mut rng);
        let key = format!("{s:?}");
        let fp = fingerprint(&s);
        if let Some(prev) = seen.get(&fp) {
            assert_eq!(prev, &key, "fingerprint {fp:016x} shared by two distinct states");
        } else {
            seen.insert(fp, key.clone());
        }
        distinct.insert(key);
    }
    assert_eq!(seen.len(), distinct.len());
}
