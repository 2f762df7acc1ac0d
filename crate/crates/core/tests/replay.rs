use lgs_core::kernel::EventId;
use lgs_core::scenario::{self, Action, PolicyKind, Scenario};
use lgs_core::trace::{audit, replay, ReplayError, Trace};

fn nominal() -> Trace {
    let sc = Scenario { policy: PolicyKind::Interactive, ..Scenario::new("replay") }
        .at(0, Action::HandleUp)
        .at(30, Action::HandleDown);
    scenario::run(&sc).unwrap().trace
}

#[test]
fn recorded_traces_replay_to_the_same_state() {
    let trace = nominal();
    let text = trace.to_jsonl();
    let parsed = Trace::from_jsonl(&text).unwrap();
    assert_eq!(parsed, trace);
    let a = audit(&parsed).unwrap();
    assert!(a.violations.is_empty());
    assert_eq!(a.cycles.len(), 2);
}

#[test]
fn swapping_two_events_is_detected() {
    let trace = nominal();
    // Find two adjacent, distinct events of the same phase and swap them.
    let i = trace
        .records
        .windows(2)
        .position(|w| w[0].phase == w[1].phase && w[0].event != w[1].event && !w[0].boundary && !w[1].boundary)
        .expect("some phase fires two events");
    let mut tampered = trace.clone();
    let (a, b) = (tampered.records[i].event.clone(), tampered.records[i + 1].event.clone());
    tampered.records[i].event = b;
    tampered.records[i + 1].event = a;
    match replay(&tampered) {
        Err(ReplayError::FingerprintDivergence { .. } | ReplayError::NotReproducible { .. }) => {}
        other => panic!("tampered trace accepted: {other:?}"),
    }
}

#[test]
fn disabled_event_is_not_reproducible() {
    let mut trace = nominal();
    let at = trace.records.iter().position(|r| r.event == EventId::Merge).unwrap();
    trace.records[at].event = EventId::Spawn;
    assert!(matches!(
        replay(&trace),
        Err(ReplayError::NotReproducible { .. } | ReplayError::FingerprintDivergence { .. })
    ));
}

#[test]
fn edited_configuration_is_rejected() {
    let mut trace = nominal();
    trace.header.config.vote_threshold = 2;
    assert!(matches!(replay(&trace), Err(ReplayError::ConfigMismatch { .. })));
    let mut trace = nominal();
    trace.header.catalog_version += 1;
    assert!(matches!(replay(&trace), Err(ReplayError::CatalogMismatch { .. })));
}

#[test]
fn truncated_trace_still_replays_its_prefix() {
    let mut trace = nominal();
    trace.records.truncate(20);
    trace.footer = None;
    let a = audit(&trace).unwrap();
    assert_eq!(a.steps, 20);
}

#[test]
fn malformed_lines_report_their_position() {
    let text = nominal().to_jsonl();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[3] = "{\"type\":\"step\",\"step\":";
    let err = Trace::from_jsonl(&lines.join("\n")).unwrap_err();
    assert!(err.to_string().starts_with("line 4"), "{err}");
}
