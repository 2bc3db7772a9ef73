use std::io::Read;
use std::process::{Command, Stdio};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::{CostError, CostOracle, CostRecord};
use crate::heuristics::VariableOrder;
use crate::polyset::{serialize_problem, ProblemInstance};

const PROBLEM_PLACEHOLDER: &str = "{problem_file}";
const ORDERING_PLACEHOLDER: &str = "{ordering}";
const POLL_INTERVAL: Duration = Duration::from_millis(2);

/// Where the cost of a finished run comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeSource {
    /// Wall-clock time of the whole process.
    #[default]
    WallClock,
    /// The last nonblank line of the command's stdout, in seconds.
    Stdout,
}

/// Counting semaphore capping concurrently running solver processes.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().expect("slot lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("slot lock");
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("slot lock") += 1;
        self.0.cv.notify_one();
    }
}

/// Runs an external CAD command per (problem, ordering) and times it.
///
/// The template is split into arguments with shell quoting rules and
/// `{problem_file}` / `{ordering}` are substituted inside each argument.
/// The command is executed directly, not through a shell.
#[derive(Debug)]
pub struct ExternalSolverAdapter {
    template: Vec<String>,
    timeout: Duration,
    penalty_factor: f64,
    time_source: TimeSource,
    slots: Slots,
}

impl ExternalSolverAdapter {
    pub fn new(template: &str, timeout: Duration, max_concurrent: usize) -> Result<Self, CostError> {
        let args = shell_words::split(template).map_err(|e| CostError::Template(format!("`{template}`: {e}")))?;
        if args.is_empty() {
            return Err(CostError::Template("empty command".into()));
        }
        for placeholder in [PROBLEM_PLACEHOLDER, ORDERING_PLACEHOLDER] {
            if !args.iter().any(|a| a.contains(placeholder)) {
                return Err(CostError::Template(format!("`{template}` is missing the {placeholder} placeholder")));
            }
        }
        if timeout.is_zero() {
            return Err(CostError::Template("timeout must be positive".into()));
        }
        Ok(ExternalSolverAdapter {
            template: args,
            timeout,
            penalty_factor: 1.0,
            time_source: TimeSource::WallClock,
            slots: Slots {
                free: Mutex::new(max_concurrent.max(1)),
                cv: Condvar::new(),
            },
        })
    }

    pub fn with_penalty_factor(mut self, penalty_factor: f64) -> Self {
        self.penalty_factor = penalty_factor;
        self
    }

    pub fn with_time_source(mut self, source: TimeSource) -> Self {
        self.time_source = source;
        self
    }

    /// Runs the command once and records how long it took.
    pub fn external_cost(&self, pr: &ProblemInstance, ord: &VariableOrder) -> Result<CostRecord, CostError> {
        let mut file = tempfile::Builder::new().suffix(".poly").tempfile()?;
        std::io::Write::write_all(&mut file, serialize_problem(pr).as_bytes())?;
        let problem_path = file.path().to_string_lossy().into_owned();
        let ordering = ord.display(pr);
        let args: Vec<String> = self
            .template
            .iter()
            .map(|a| a.replace(PROBLEM_PLACEHOLDER, &problem_path).replace(ORDERING_PLACEHOLDER, &ordering))
            .collect();

        let _slot = self.slots.acquire();
        let capture = self.time_source == TimeSource::Stdout;
        let mut child = Command::new(&args[0])
            .args(&args[1..])
            .stdin(Stdio::null())
            .stdout(if capture { Stdio::piped() } else { Stdio::null() })
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| CostError::Spawn {
                program: args[0].clone(),
                source,
            })?;
        let start = Instant::now();
        let stdout_reader = child.stdout.take().map(|mut out| {
            thread::spawn(move || {
                let mut s = String::new();
                let _ = out.read_to_string(&mut s);
                s
            })
        });
        let stderr_reader = child.stderr.take().map(|mut err| {
            thread::spawn(move || {
                let mut s = String::new();
                let _ = err.read_to_string(&mut s);
                s
            })
        });

        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if start.elapsed() >= self.timeout {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            thread::sleep(POLL_INTERVAL);
        };
        let elapsed = start.elapsed().as_secs_f64();

        let base = CostRecord {
            problem_id: pr.label().to_string(),
            ordering,
            time_s: self.timeout.as_secs_f64(),
            timed_out: true,
        };
        // grandchildren of a killed process may hold the pipes open, so the
        // reader threads are only joined after a normal exit
        let Some(status) = status else {
            return Ok(base);
        };
        let stdout = stdout_reader.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
        let stderr = stderr_reader.map(|h| h.join().unwrap_or_default()).unwrap_or_default();
        if !status.success() {
            return Err(CostError::CommandFailed {
                status: status.to_string(),
                stderr: stderr.trim().to_string(),
            });
        }
        let time_s = match self.time_source {
            TimeSource::WallClock => elapsed,
            TimeSource::Stdout => {
                let last = stdout.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
                last.parse::<f64>()
                    .ok()
                    .filter(|t| t.is_finite() && *t >= 0.0)
                    .ok_or_else(|| CostError::MalformedOutput(last.to_string()))?
            }
        };
        Ok(CostRecord {
            time_s,
            timed_out: false,
            ..base
        })
    }
}

impl CostOracle for ExternalSolverAdapter {
    fn id(&self) -> String {
        format!("cmd({},timeout={}s)", shell_words::join(&self.template), self.timeout.as_secs_f64())
    }

    fn cost(&self, pr: &ProblemInstance, ord: &VariableOrder) -> Result<f64, CostError> {
        let rec = self.external_cost(pr, ord)?;
        Ok(if rec.timed_out {
            rec.time_s * self.penalty_factor
        } else {
            rec.time_s
        })
    }
}
