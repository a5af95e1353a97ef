//! Reporting for the acceptance suite in `tests/acceptance.rs`: each
//! criterion runs in isolation and prints one PASS/FAIL line.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

/// Result of one criterion: verdict plus the measured numbers behind it.
#[derive(Debug, Clone)]
pub struct Verdict {
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict {
            pass,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: &'static str,
    pub title: &'static str,
    pub verdict: Verdict,
    pub elapsed: Duration,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "{:<5} {}  {}: {} [{:.1} s]",
            self.id,
            if self.verdict.pass { "PASS" } else { "FAIL" },
            self.title,
            self.verdict.detail,
            self.elapsed.as_secs_f64()
        )
    }
}

/// Runs `f`, turning a panic into a failing verdict, and enforces an
/// optional wall-clock budget.
pub fn run_criterion(
    id: &'static str,
    title: &'static str,
    budget: Option<Duration>,
    f: impl FnOnce() -> Verdict,
) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let mut verdict = result.unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Verdict::new(false, format!("aborted: {msg}"))
    });
    if let Some(limit) = budget {
        if elapsed > limit {
            verdict.pass = false;
            verdict.detail = format!("{}; over the {:.0} s budget", verdict.detail, limit.as_secs_f64());
        }
    }
    let outcome = Outcome {
        id,
        title,
        verdict,
        elapsed,
    };
    println!("{}", outcome.line());
    outcome
}

/// Ordering check `a ≥ b` for floats, rendered for report lines.
pub fn ge(name_a: &str, a: f64, name_b: &str, b: f64) -> (bool, String) {
    (a >= b, format!("{name_a} {a:.4} ≥ {name_b} {b:.4}"))
}

pub fn lt(name_a: &str, a: f64, name_b: &str, b: f64) -> (bool, String) {
    (a < b, format!("{name_a} {a:.4} < {name_b} {b:.4}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_and_budgets_fail_the_criterion() {
        let o = run_criterion("T1", "panics", None, || panic!("boom"));
        assert!(!o.verdict.pass && o.verdict.detail.contains("boom"));
        let o = run_criterion("T2", "slow", Some(Duration::ZERO), || Verdict::new(true, "ok"));
        assert!(!o.verdict.pass);
        let o = run_criterion("T3", "fine", None, || Verdict::new(true, "ok"));
        assert!(o.verdict.pass && o.line().contains("PASS"));
    }

    #[test]
    fn comparisons_render_both_sides() {
        assert_eq!(lt("a", 1.0, "b", 2.0), (true, "a 1.0000 < b 2.0000".to_string()));
        assert!(!ge("a", 1.0, "b", 2.0).0);
    }
}
