//! Replays the checked-in fuzz seeds through the entry points the fuzz
//! targets call.

use std::fs;
use std::path::PathBuf;

use companion_core::backend::parse_chat_response;
use companion_core::companion::parse_assessment;
use companion_core::judge::parse_judge_reply;
use companion_core::probe::ProbeModel;
use companion_core::record::parse_run_record;
use companion_core::router::RoutingPolicy;
use companion_core::trace::parse_trace;

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut out: Vec<(String, String)> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, fs::read_to_string(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn outcome<T, E>(r: &Result<T, E>) -> &'static str {
    if r.is_ok() {
        "ok"
    } else {
        "err"
    }
}

fn check<T, E>(target: &str, expected: &[(&str, &str)], f: impl Fn(&str) -> Result<T, E>) {
    for (name, text) in seeds(target) {
        let got = outcome(&f(&text));
        if let Some((_, want)) = expected.iter().find(|(n, _)| *n == name) {
            assert_eq!(got, *want, "{target}/{name}");
        }
    }
}

#[test]
fn assessment_seeds() {
    check(
        "parse_assessment",
        &[
            ("looping", "ok"),
            ("on_track", "ok"),
            ("lowercase_none", "ok"),
            ("free_text", "err"),
        ],
        |s| parse_assessment(s, 2),
    );
}

#[test]
fn judge_seeds() {
    check(
        "parse_judge_reply",
        &[("slashes", "ok"), ("inline", "ok"), ("out_of_range", "err")],
        parse_judge_reply,
    );
}

#[test]
fn trace_seeds() {
    check(
        "parse_trace",
        &[
            ("pooled_only", "ok"),
            ("raw_window", "ok"),
            ("invalid", "err"),
        ],
        parse_trace,
    );
}

#[test]
fn run_record_seeds() {
    check(
        "parse_run_record",
        &[("complete_llm", "ok"), ("truncated", "ok")],
        parse_run_record,
    );
}

#[test]
fn probe_model_seeds() {
    check("probe_model", &[("layer28", "ok")], ProbeModel::from_json);
}

#[test]
fn chat_response_seeds() {
    check(
        "parse_chat_response",
        &[
            ("plain", "ok"),
            ("hidden_states", "ok"),
            ("no_choices", "err"),
        ],
        parse_chat_response,
    );
}

#[test]
fn routing_policy_seeds() {
    check(
        "routing_policy",
        &[("default", "ok"), ("partial", "err")],
        |s| serde_json::from_str::<RoutingPolicy>(s),
    );
}
