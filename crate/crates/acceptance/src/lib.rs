//! Verdict bookkeeping for the acceptance run.

use std::fmt;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// The check could not run here (missing external data, say). Not a pass.
    Blocked,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Blocked => "BLOCKED",
        })
    }
}

/// What a check reports: `Ok(detail)` passes, `Err(detail)` fails.
pub type CheckResult = Result<String, String>;

pub enum Outcome {
    Done(CheckResult),
    Blocked(String),
}

impl From<CheckResult> for Outcome {
    fn from(r: CheckResult) -> Self {
        Outcome::Done(r)
    }
}

#[derive(Default)]
pub struct Report {
    pub lines: Vec<(String, Verdict, String)>,
}

impl Report {
    /// Runs `check`, failing it when it passes but exceeds `budget`.
    pub fn run(&mut self, name: &str, budget: Duration, check: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Outcome::Done(Err(format!("panicked: {msg}")))
            });
        let elapsed = start.elapsed();
        let timing = format!("{:.1}s of {}s budget", elapsed.as_secs_f64(), budget.as_secs());
        let (verdict, detail) = match outcome {
            Outcome::Blocked(why) => (Verdict::Blocked, why),
            Outcome::Done(Ok(d)) if elapsed <= budget => (Verdict::Pass, format!("{d}; {timing}")),
            Outcome::Done(Ok(d)) => (Verdict::Fail, format!("{d}; over budget, {timing}")),
            Outcome::Done(Err(d)) => (Verdict::Fail, format!("{d}; {timing}")),
        };
        println!("{verdict} {name}: {detail}");
        self.lines.push((name.to_string(), verdict, detail));
    }

    pub fn failures(&self) -> usize {
        self.lines.iter().filter(|(_, v, _)| *v == Verdict::Fail).count()
    }
}

/// `Err` with a message unless `cond` holds.
pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}
