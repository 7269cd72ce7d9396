//! Child-process execution with wall-clock, memory and output limits.

use std::io::{self, Read, Write};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::Path;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

const STDERR_CAP: usize = 64 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    #[serde(rename = "compile_timeout_ms", with = "millis")]
    pub compile_timeout: Duration,
    #[serde(rename = "run_timeout_ms", with = "millis")]
    pub run_timeout: Duration,
    #[serde(rename = "generator_timeout_ms", with = "millis")]
    pub generator_timeout: Duration,
    /// Address-space limit for solution processes, in bytes.
    pub memory_bytes: u64,
    /// Maximum captured stdout, in bytes.
    pub output_cap: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            compile_timeout: Duration::from_secs(10),
            run_timeout: Duration::from_secs(5),
            generator_timeout: Duration::from_secs(30),
            memory_bytes: 256 * 1024 * 1024,
            output_cap: 8 * 1024 * 1024,
        }
    }
}

pub(crate) mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "snake_case")]
pub enum ExitStatus {
    Exited(i32),
    Signaled(i32),
    TimedOut,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub status: ExitStatus,
    pub wall_time: Duration,
    /// Stdout exceeded the cap; the process was killed and output truncated.
    pub output_limited: bool,
}

impl RunResult {
    pub fn success(&self) -> bool {
        self.status == ExitStatus::Exited(0) && !self.output_limited
    }
}

/// Per-invocation resource bounds.
#[derive(Debug, Clone, Copy)]
pub struct ExecLimits {
    pub timeout: Duration,
    pub memory_bytes: Option<u64>,
    pub output_cap: usize,
}

/// Run `program` with `args` in `workdir`, feeding `stdin` once.
///
/// The child gets its own process group so the whole group can be killed on
/// timeout or when stdout exceeds the cap. Spawn failures are returned as
/// `io::Error`; everything after a successful spawn is reported in the result.
pub fn execute(
    program: &Path,
    args: &[String],
    stdin: &[u8],
    workdir: &Path,
    limits: ExecLimits,
) -> io::Result<RunResult> {
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(workdir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    let memory = limits.memory_bytes;
    unsafe {
        cmd.pre_exec(move || {
            let no_core = libc::rlimit {
                rlim_cur: 0,
                rlim_max: 0,
            };
            libc::setrlimit(libc::RLIMIT_CORE, &no_core);
            if let Some(bytes) = memory {
                let lim = libc::rlimit {
                    rlim_cur: bytes as libc::rlim_t,
                    rlim_max: bytes as libc::rlim_t,
                };
                if libc::setrlimit(libc::RLIMIT_AS, &lim) != 0 {
                    return Err(io::Error::last_os_error());
                }
            }
            Ok(())
        });
    }

    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id() as libc::pid_t;

    let mut child_stdin = child.stdin.take().expect("piped stdin");
    let input = stdin.to_vec();
    let writer = thread::spawn(move || {
        // The child may exit without reading; a broken pipe is not our error.
        let _ = child_stdin.write_all(&input);
    });

    let overflow = Arc::new(AtomicBool::new(false));
    let mut child_stdout = child.stdout.take().expect("piped stdout");
    let cap = limits.output_cap;
    let flag = Arc::clone(&overflow);
    let out_reader = thread::spawn(move || read_capped(&mut child_stdout, cap, Some(&flag)));
    let mut child_stderr = child.stderr.take().expect("piped stderr");
    let err_reader = thread::spawn(move || read_capped(&mut child_stderr, STDERR_CAP, None));

    let deadline = start + limits.timeout;
    let mut pause = Duration::from_millis(1);
    let mut timed_out = false;
    let raw_status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if overflow.load(Ordering::SeqCst) {
            kill_group(pid);
            break child.wait()?;
        }
        let now = Instant::now();
        if now >= deadline {
            timed_out = true;
            kill_group(pid);
            break child.wait()?;
        }
        thread::sleep(pause.min(deadline - now));
        pause = (pause * 2).min(Duration::from_millis(20));
    };
    let wall_time = start.elapsed();
    // Reap anything left in the group so the pipes close.
    kill_group(pid);

    let _ = writer.join();
    let stdout = out_reader.join().unwrap_or_default();
    let stderr = err_reader.join().unwrap_or_default();
    let output_limited = overflow.load(Ordering::SeqCst);

    let status = if timed_out {
        ExitStatus::TimedOut
    } else if let Some(code) = raw_status.code() {
        ExitStatus::Exited(code)
    } else {
        ExitStatus::Signaled(raw_status.signal().unwrap_or(0))
    };

    Ok(RunResult {
        stdout,
        stderr,
        status,
        wall_time,
        output_limited,
    })
}

fn kill_group(pid: libc::pid_t) {
    unsafe {
        libc::killpg(pid, libc::SIGKILL);
    }
}

/// Read until EOF, keeping at most `cap` bytes. Past the cap the overflow
/// flag is raised and the rest is drained so the writer never blocks.
fn read_capped<R: Read>(src: &mut R, cap: usize, overflow: Option<&AtomicBool>) -> Vec<u8> {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    loop {
        match src.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                kept.extend_from_slice(&buf[..n.min(room)]);
                if n > room {
                    if let Some(flag) = overflow {
                        flag.store(true, Ordering::SeqCst);
                        break;
                    }
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(_) => break,
        }
    }
    kept
}
