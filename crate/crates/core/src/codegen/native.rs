//! Running testcases against a compiled harness, one process per execution.
//!
//! The harness reads the wire-format testcase named by `argv[1]` and writes
//! status lines to `$STITCH_STATUS_FILE`:
//!
//! ```text
//! AT <i>                  about to run instance i
//! P <i> <kind> <width>    instance i requested a parameter
//! BAIL <i>                instance i bailed
//! OK                      every instance completed
//! ERR <reason>            the testcase was rejected
//! ```
//!
//! Edge counters land in the 2^16-byte file named by `$STITCH_COVERAGE_FILE`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crate::outcome::{Backend, BackendError, Coverage, Outcome, OutcomeKind, Reshape};
use crate::testcase::{ParamKind, Testcase};
use crate::wire;

pub const COVERAGE_SIZE: usize = 1 << 16;
pub const STATUS_ENV: &str = "STITCH_STATUS_FILE";
pub const COVERAGE_ENV: &str = "STITCH_COVERAGE_FILE";

#[derive(Debug, Clone)]
pub struct NativeConfig {
    pub harness: PathBuf,
    pub timeout: Duration,
    /// Scratch directory for per-execution files. Defaults to the system
    /// temporary directory.
    pub scratch: Option<PathBuf>,
}

impl NativeConfig {
    pub fn new(harness: impl Into<PathBuf>) -> Self {
        NativeConfig {
            harness: harness.into(),
            timeout: Duration::from_secs(5),
            scratch: None,
        }
    }
}

#[derive(Debug)]
pub struct NativeBackend {
    config: NativeConfig,
    dir: PathBuf,
    counter: AtomicU64,
}

/// What the harness reported on its status channel.
#[derive(Debug, Default, PartialEq, Eq)]
struct Status {
    at: Option<usize>,
    bail: Option<usize>,
    ok: bool,
    err: Option<String>,
    requested: BTreeMap<usize, Vec<ParamKind>>,
}

fn parse_status(text: &str) -> Status {
    let mut s = Status::default();
    for line in text.lines() {
        let mut parts = line.split(' ');
        match parts.next() {
            Some("AT") => s.at = parts.next().and_then(|x| x.parse().ok()),
            Some("BAIL") => s.bail = parts.next().and_then(|x| x.parse().ok()),
            Some("OK") => s.ok = true,
            Some("ERR") => s.err = Some(line[4.min(line.len())..].to_string()),
            Some("P") => {
                let nums: Vec<u64> = parts.filter_map(|x| x.parse().ok()).collect();
                if let [i, kind, width] = nums[..] {
                    let k = match kind {
                        0 => ParamKind::Fixed(width as u32),
                        1 => ParamKind::Str,
                        _ => ParamKind::File,
                    };
                    s.requested.entry(i as usize).or_default().push(k);
                }
            }
            _ => {}
        }
    }
    s
}

fn signal_name(sig: i32) -> String {
    let name = match sig {
        libc::SIGSEGV => "SIGSEGV",
        libc::SIGABRT => "SIGABRT",
        libc::SIGBUS => "SIGBUS",
        libc::SIGFPE => "SIGFPE",
        libc::SIGILL => "SIGILL",
        libc::SIGTRAP => "SIGTRAP",
        libc::SIGKILL => "SIGKILL",
        _ => return format!("signal {sig}"),
    };
    name.to_string()
}

/// Crash signature from sanitizer output: the first `ERROR:` line's summary
/// plus the function of its top frame.
pub fn sanitizer_signature(stderr: &str) -> Option<String> {
    let mut lines = stderr.lines();
    let err = lines.by_ref().find(|l| l.contains("ERROR: "))?;
    let mut summary = &err[err.find("ERROR: ").expect("matched above") + 7..];
    for cut in [" on ", " at ", " (", " in "] {
        if let Some(n) = summary.find(cut) {
            summary = &summary[..n];
        }
    }
    let summary = summary.trim();
    let frame = lines
        .map(str::trim_start)
        .find(|l| l.starts_with("#0 "))
        .and_then(|l| l.split_once(" in ").map(|(_, f)| f))
        .map(|f| match f.rsplit_once(' ') {
            Some((func, loc)) if loc.contains('/') || loc.contains(':') || loc.starts_with('(') => func,
            _ => f,
        });
    Some(match frame {
        Some(f) => format!("{summary} in {}", f.trim()),
        None => summary.to_string(),
    })
}

fn crash_id(status: ExitStatus, stderr: &str) -> String {
    use std::os::unix::process::ExitStatusExt;
    if let Some(sig) = sanitizer_signature(stderr) {
        return sig;
    }
    match status.signal() {
        Some(sig) => signal_name(sig),
        None => format!("exit {}", status.code().unwrap_or(-1)),
    }
}

impl NativeBackend {
    pub fn new(config: NativeConfig) -> Result<Self, BackendError> {
        if !config.harness.is_file() {
            return Err(BackendError::Infrastructure(format!(
                "harness {} does not exist",
                config.harness.display()
            )));
        }
        static INSTANCE: AtomicU64 = AtomicU64::new(0);
        let base = config.scratch.clone().unwrap_or_else(std::env::temp_dir);
        let dir = base.join(format!(
            "stitch-native-{}-{}",
            std::process::id(),
            INSTANCE.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&dir).map_err(|e| infra(&dir, e))?;
        Ok(NativeBackend {
            config,
            dir,
            counter: AtomicU64::new(0),
        })
    }

    pub fn shared(config: NativeConfig) -> Result<Arc<Self>, BackendError> {
        Self::new(config).map(Arc::new)
    }

    pub fn harness(&self) -> &Path {
        &self.config.harness
    }

    /// Runs one testcase in a fresh harness process.
    pub fn run_native(&self, t: &Testcase) -> Result<Outcome, BackendError> {
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let input = self.dir.join(format!("{n}.stc"));
        let status_path = self.dir.join(format!("{n}.status"));
        let cov_path = self.dir.join(format!("{n}.cov"));
        let err_path = self.dir.join(format!("{n}.stderr"));
        let result = self.run_files(t, &input, &status_path, &cov_path, &err_path);
        for p in [&input, &status_path, &cov_path, &err_path] {
            let _ = fs::remove_file(p);
        }
        result
    }

    fn run_files(
        &self,
        t: &Testcase,
        input: &Path,
        status_path: &Path,
        cov_path: &Path,
        err_path: &Path,
    ) -> Result<Outcome, BackendError> {
        fs::write(input, wire::serialize(t)).map_err(|e| infra(input, e))?;
        fs::write(cov_path, vec![0u8; COVERAGE_SIZE]).map_err(|e| infra(cov_path, e))?;
        let stderr = fs::File::create(err_path).map_err(|e| infra(err_path, e))?;
        let mut child = Command::new(&self.config.harness)
            .arg(input)
            .env(STATUS_ENV, status_path)
            .env(COVERAGE_ENV, cov_path)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(stderr)
            .spawn()
            .map_err(|e| infra(&self.config.harness, e))?;

        let start = Instant::now();
        let mut pause = Duration::from_micros(100);
        let exit = loop {
            if let Some(st) = child.try_wait().map_err(|e| infra(&self.config.harness, e))? {
                break Some(st);
            }
            if start.elapsed() >= self.config.timeout {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            thread::sleep(pause);
            pause = (pause * 2).min(Duration::from_millis(10));
        };

        let coverage = match fs::read(cov_path) {
            Ok(map) => Coverage::from_events(
                map.iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0)
                    .map(|(i, _)| i as u32)
                    .collect(),
            ),
            Err(_) => Coverage::default(),
        };
        let status = parse_status(&fs::read_to_string(status_path).unwrap_or_default());
        let reshaped = reshapes(t, &status);

        let Some(exit) = exit else {
            return Ok(Outcome {
                kind: OutcomeKind::Hang,
                coverage,
                final_state: None,
                reshaped,
            });
        };
        if let Some(why) = status.err {
            return Err(BackendError::IllFormed(format!("harness rejected testcase: {why}")));
        }
        let kind = if let Some(index) = status.bail.filter(|_| exit.success()) {
            OutcomeKind::Bail { index }
        } else if status.ok && exit.success() {
            OutcomeKind::Completed
        } else {
            let index = match status.at {
                Some(i) => i,
                None if !t.is_empty() => 0,
                None => {
                    return Err(BackendError::Infrastructure(format!(
                        "harness failed before running anything ({exit})"
                    )))
                }
            };
            let stderr = fs::read_to_string(err_path).unwrap_or_default();
            OutcomeKind::Crash {
                index,
                crash_id: crash_id(exit, &stderr).into(),
            }
        };
        Ok(Outcome {
            kind,
            coverage,
            final_state: None,
            reshaped,
        })
    }
}

fn reshapes(t: &Testcase, status: &Status) -> Vec<Reshape> {
    status
        .requested
        .iter()
        .filter_map(|(&i, requested)| {
            let inst = t.instances.get(i)?;
            let differs = requested
                .iter()
                .enumerate()
                .any(|(j, k)| inst.params.values.get(j).map(|v| v.kind) != Some(*k));
            differs.then(|| Reshape {
                instance: i,
                requested: requested.clone(),
            })
        })
        .collect()
}

fn infra(path: &Path, e: std::io::Error) -> BackendError {
    BackendError::Infrastructure(format!("{}: {e}", path.display()))
}

impl Drop for NativeBackend {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

impl Backend for NativeBackend {
    fn execute(&self, t: &Testcase) -> Result<Outcome, BackendError> {
        self.run_native(t)
    }

    fn name(&self) -> &str {
        "native"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_lines() {
        let s = parse_status("AT 0\nP 0 1 0\nP 0 0 4\nAT 1\nBAIL 1\n");
        assert_eq!(s.at, Some(1));
        assert_eq!(s.bail, Some(1));
        assert!(!s.ok);
        assert_eq!(s.requested[&0], vec![ParamKind::Str, ParamKind::Fixed(4)]);
        assert_eq!(parse_status("ERR bad magic\n").err.as_deref(), Some("bad magic"));
    }

    #[test]
    fn asan_signature() {
        let log = "=================================================================\n\
==4242==ERROR: AddressSanitizer: heap-use-after-free on address 0x602000000010 at pc 0x1 bp 0x2 sp 0x3\n\
READ of size 4 at 0x602000000010 thread T0\n\
    #0 0x55d0 in mx_set_attr_ns /src/minixml.h:88:5\n\
    #1 0x55d1 in main harness.cpp:10\n";
        assert_eq!(
            sanitizer_signature(log).as_deref(),
            Some("AddressSanitizer: heap-use-after-free in mx_set_attr_ns")
        );
        let segv = "==1==ERROR: AddressSanitizer: SEGV on unknown address 0x000000000000 (pc 0x1)\n    #0 0x1 in f(int*) (/bin/h+0x1)\n";
        assert_eq!(sanitizer_signature(segv).as_deref(), Some("AddressSanitizer: SEGV in f(int*)"));
        assert_eq!(sanitizer_signature("plain output\n"), None);
    }

    #[test]
    fn missing_harness_is_infrastructure() {
        assert!(matches!(
            NativeBackend::new(NativeConfig::new("/nonexistent/harness")),
            Err(BackendError::Infrastructure(_))
        ));
    }
}
