use gsrm_core::structseq::{parse_sequence, ReasoningPath};
use gsrm_core::train::{
    build_dataset, build_dataset_sample, AcceptedRecord, ScriptedGenerator, ScriptedVerifier, SampleResult,
    VerdictKind, MAX_ATTEMPTS,
};

const GOOD: &str = "<step>\n<meta>isolate x</meta>\n<question>what is x</question>\n<answer>3</answer>\n</step>\n";

fn path(id: &str) -> ReasoningPath {
    let mut p = ReasoningPath::new("solve x + 1 = 4", "subtract one, x is 3").unwrap();
    p.id = Some(id.into());
    p
}

#[test]
fn always_failing_verifier_discards_after_four_attempts() {
    let g = ScriptedGenerator::new([GOOD]);
    let v = ScriptedVerifier::always_fail();
    let s = build_dataset_sample(&path("a"), &g, &v).unwrap();
    assert_eq!(s.result, SampleResult::Discarded);
    assert_eq!(s.attempts.len(), MAX_ATTEMPTS);
    assert!(s.attempts.iter().all(|a| a.verdict == VerdictKind::Fail));
    assert_eq!(g.calls(), 4);
}

#[test]
fn pass_on_attempt_k() {
    for k in 1..=4 {
        let g = ScriptedGenerator::new([GOOD]);
        let v = ScriptedVerifier::new(k - 1);
        let s = build_dataset_sample(&path("a"), &g, &v).unwrap();
        assert_eq!(s.result, SampleResult::Accepted(parse_sequence(GOOD).unwrap().with_source_id("a")));
        assert_eq!(s.attempts.len(), k);
        assert_eq!(s.attempts.last().unwrap().verdict, VerdictKind::Pass);
        for (i, a) in s.attempts[..k - 1].iter().enumerate() {
            assert_eq!(a.feedback, format!("rejected attempt {}", i + 1));
        }
    }
}

#[test]
fn unparseable_outputs_count_as_attempts() {
    let g = ScriptedGenerator::new(["<step><meta>x</meta>", "{}", "plain prose"]);
    let v = ScriptedVerifier::always_pass();
    let s = build_dataset_sample(&path("a"), &g, &v).unwrap();
    assert_eq!(s.result, SampleResult::Discarded);
    assert_eq!(s.attempts.len(), 4);
    assert_eq!(v.calls(), 0);
}

#[test]
fn accepted_records_are_json_lines() {
    let g = ScriptedGenerator::new([GOOD]);
    let v = ScriptedVerifier::new(1);
    let s = build_dataset_sample(&path("p-7"), &g, &v).unwrap();
    let line = serde_json::to_string(&s.accepted_record().unwrap()).unwrap();
    assert!(line.starts_with(r#"{"path_id":"p-7","sequence":{"#));
    assert!(line.ends_with(r#","attempts":2}"#));
    let back: AcceptedRecord = serde_json::from_str(&line).unwrap();
    assert_eq!(back.attempts, 2);
}

#[test]
fn batches_run_concurrently_in_order() {
    let paths: Vec<ReasoningPath> = (0..12).map(|i| path(&format!("p{i}"))).collect();
    let g = ScriptedGenerator::new([GOOD]);
    let v = ScriptedVerifier::always_fail();
    let out = build_dataset(&paths, &g, &v, 4);
    assert_eq!(out.len(), 12);
    for (p, r) in paths.iter().zip(&out) {
        let s = r.as_ref().unwrap();
        assert_eq!(s.path.id, p.id);
        assert_eq!(s.attempts.len(), 4);
    }
    assert_eq!(g.calls(), 48);
}
