use cagtrace::analysis::{score_accuracy, MismatchReason};
use cagtrace::ranker::{AttributeFilter, TieBreak};
use cagtrace::sim::{concurrency_interleaving, generate, three_tier_config, Simulation};
use cagtrace::{correlate_logs, CorrelationOutput, CorrelatorConfig};

fn run(sim: &Simulation, config: &CorrelatorConfig) -> CorrelationOutput {
    correlate_logs(config, sim.node_logs())
}

fn filtered(sim: &Simulation) -> CorrelatorConfig {
    let mut c = sim.correlator_config();
    c.ranker.filters = vec![AttributeFilter::Program("sshd".into()), AttributeFilter::Program("rlogin".into())];
    c
}

#[test]
fn clean_three_tier_run_is_exact() {
    let sim = generate(&three_tier_config(20, 10, 1)).unwrap();
    let out = run(&sim, &sim.correlator_config());
    let score = score_accuracy(&out.cags, &sim.ground_truth);
    assert_eq!(score.requests, 200);
    assert_eq!(score.correct, 200, "{:?}", &score.mismatches[..score.mismatches.len().min(5)]);
    assert!(score.spurious_cags.is_empty());
    assert!(out.summary.is_consistent(), "{:?}", out.summary);
    assert_eq!(out.summary.cags_complete, 200);
    for cag in &out.cags {
        assert_eq!(cag.validate(), Ok(()));
        assert_eq!(cag.vertices.len(), 10);
        assert_eq!(cag.context_edges().count(), 7);
        assert_eq!(cag.message_edges().count(), 4);
    }
}

#[test]
fn split_messages_and_skew() {
    let mut cfg = three_tier_config(30, 5, 2);
    cfg.disturbance.message_split_probability = 0.7;
    cfg.disturbance.max_split_parts = 4;
    cfg.disturbance.clock_skew_ns.insert("app".into(), 300_000_000);
    cfg.disturbance.clock_skew_ns.insert("db".into(), -450_000_000);
    let sim = generate(&cfg).unwrap();
    for window in [1_000_000, 10_000_000, 10_000_000_000] {
        let mut c = sim.correlator_config();
        c.ranker.window_ns = window;
        let out = run(&sim, &c);
        let score = score_accuracy(&out.cags, &sim.ground_truth);
        assert_eq!(score.accuracy, 1.0, "window {window}: {:?}", &score.mismatches[..score.mismatches.len().min(5)]);
        assert!(out.summary.is_consistent());
    }
}

#[test]
fn noise_of_both_kinds_is_tolerated() {
    let mut cfg = three_tier_config(30, 5, 3);
    cfg.disturbance.noise_activity_count = 3_000;
    cfg.disturbance.clock_skew_ns.insert("web".into(), 100_000_000);
    let sim = generate(&cfg).unwrap();
    let out = run(&sim, &filtered(&sim));
    let score = score_accuracy(&out.cags, &sim.ground_truth);
    assert_eq!(score.accuracy, 1.0, "{:?} {:?}", &score.mismatches[..score.mismatches.len().min(5)], out.summary);
    assert!(out.summary.ranker.filtered > 0);
    assert!(out.summary.ranker.noise_discarded > 0);
    assert!(out.summary.is_consistent(), "{:?}", out.summary);
}

#[test]
fn unfiltered_noise_is_still_discarded() {
    let mut cfg = three_tier_config(10, 5, 4);
    cfg.disturbance.noise_activity_count = 1_000;
    let sim = generate(&cfg).unwrap();
    let out = run(&sim, &sim.correlator_config());
    let score = score_accuracy(&out.cags, &sim.ground_truth);
    assert_eq!(score.accuracy, 1.0, "{:?}", &score.mismatches[..score.mismatches.len().min(5)]);
    assert!(out.summary.is_consistent());
}

#[test]
fn drops_lower_accuracy_without_poisoning_neighbours() {
    let mut cfg = three_tier_config(20, 5, 5);
    cfg.disturbance.request_drop_probability = 0.1;
    let sim = generate(&cfg).unwrap();
    let out = run(&sim, &sim.correlator_config());
    let score = score_accuracy(&out.cags, &sim.ground_truth);
    let dropped = sim.ground_truth.requests.values().filter(|r| r.dropped > 0).count();
    assert!(dropped > 0);
    assert!(score.accuracy < 1.0);
    let flagged = score.mismatches.iter().filter(|m| m.reasons.contains(&MismatchReason::ActivitiesDropped)).count();
    assert_eq!(flagged, dropped);
    // Damage is confined to requests that lost activities plus few casualties.
    assert!(score.correct + 2 * dropped >= score.requests, "correct {} dropped {dropped}", score.correct);
    assert!(out.summary.is_consistent(), "{:?}", out.summary);
}

#[test]
fn interleaving_needs_the_stall_resolver() {
    let sim = concurrency_interleaving(true);
    let out = run(&sim, &sim.correlator_config());
    let score = score_accuracy(&out.cags, &sim.ground_truth);
    assert_eq!(score.correct, 2);
    assert!(out.summary.ranker.swaps > 0);

    let mut c = sim.correlator_config();
    c.ranker.resolve_stalls = false;
    let out = run(&sim, &c);
    let score = score_accuracy(&out.cags, &sim.ground_truth);
    assert!(score.correct < 2, "{:?}", out.summary);
}

#[test]
fn tie_break_mode_does_not_change_cags() {
    let mut cfg = three_tier_config(25, 4, 6);
    cfg.disturbance.message_split_probability = 0.4;
    let sim = generate(&cfg).unwrap();
    let a = run(&sim, &sim.correlator_config());
    let mut c = sim.correlator_config();
    c.ranker.tie_break = TieBreak::QueueIndex;
    let b = run(&sim, &c);
    let key = |out: &CorrelationOutput| {
        let mut k: Vec<_> = out.cags.iter().map(|g| serde_json::to_string(g).unwrap()).collect();
        k.sort();
        k
    };
    assert_eq!(key(&a), key(&b));
}
