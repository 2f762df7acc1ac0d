use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use lgs_core::config::ModelConfig;
use lgs_core::controller::vote3;
use lgs_core::explorer::{explore, ExploreConfig};
use lgs_core::kernel::{ChoicePolicy, Chooser, Kernel, Step};
use lgs_core::model::{fingerprint, preset_state, HandleState, Preset};
use lgs_core::scenario::{run_with, Action, RunOptions, Scenario};

fn micro_steps(c: &mut Criterion) {
    let kernel = Kernel::new(ModelConfig::default());
    let start = kernel
        .apply_external(&preset_state(Preset::Ground), &lgs_core::kernel::EventId::handle(HandleState::Up))
        .unwrap();
    c.bench_function("kernel/retraction_to_quiescence", |b| {
        b.iter(|| {
            let mut s = start.clone();
            let mut chooser = Chooser::new(ChoicePolicy::SeededRandom { seed: 1 });
            while let Step::Fired { state, .. } = kernel.step(&s, &mut chooser) {
                s = state;
            }
            black_box(fingerprint(&s))
        })
    });
}

fn scenario_run(c: &mut Criterion) {
    let sc = Scenario { seed: 7, ..Scenario::new("bench") }
        .at(0, Action::HandleUp)
        .at(5, Action::HandleDown)
        .at(40, Action::HandleUp);
    let opts = RunOptions { max_steps: 2_000, stop_on_violation: true, record_deltas: false };
    c.bench_function("scenario/three_moves_no_deltas", |b| {
        b.iter(|| black_box(run_with(&sc, &opts).unwrap().final_state.llc))
    });
    let with_deltas = RunOptions { record_deltas: true, ..opts };
    c.bench_function("scenario/three_moves_with_deltas", |b| {
        b.iter(|| black_box(run_with(&sc, &with_deltas).unwrap().trace.records.len()))
    });
}

fn exploration(c: &mut Criterion) {
    let mut g = c.benchmark_group("explore");
    g.sample_size(20);
    for (name, parallel) in [("budget2_parallel", true), ("budget2_sequential", false)] {
        let cfg = ExploreConfig { parallel, ..Default::default() };
        g.bench_function(name, |b| b.iter(|| black_box(explore(&cfg).unwrap().states_visited)));
    }
    g.finish();
}

fn voting(c: &mut Criterion) {
    c.bench_function("vote3/all_inputs", |b| {
        b.iter(|| {
            let mut agree = 0u32;
            for v in 0u8..8 {
                for m in 1u8..8 {
                    let values = [v & 1 != 0, v & 2 != 0, v & 4 != 0];
                    let valid = [m & 1 != 0, m & 2 != 0, m & 4 != 0];
                    if let Ok(r) = vote3(black_box(values), black_box(valid)) {
                        agree += u32::from(r.unanimous);
                    }
                }
            }
            agree
        })
    });
}

criterion_group!(benches, micro_steps, scenario_run, exploration, voting);
criterion_main!(benches);
