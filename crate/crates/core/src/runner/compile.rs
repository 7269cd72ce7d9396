use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::exec::{execute, ExecLimits, ExitStatus, Limits};
use super::RunnerError;

/// C compiler invocation: `command <cflags> <source> -o <binary> <libs>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toolchain {
    pub command: String,
    pub cflags: Vec<String>,
    pub libs: Vec<String>,
}

impl Default for Toolchain {
    fn default() -> Self {
        Toolchain {
            command: "cc".to_owned(),
            cflags: vec!["-std=gnu11".into(), "-O1".into(), "-Wall".into()],
            libs: vec!["-lm".into()],
        }
    }
}

/// Compile `source` (written to `workdir/<stem>.c`) into `workdir/<stem>`.
pub fn compile(
    source: &str,
    stem: &str,
    workdir: &Path,
    toolchain: &Toolchain,
    limits: &Limits,
) -> Result<PathBuf, RunnerError> {
    let src_path = workdir.join(format!("{stem}.c"));
    std::fs::write(&src_path, source)?;
    let bin_path = workdir.join(stem);

    let mut args = toolchain.cflags.clone();
    args.push(src_path.display().to_string());
    args.push("-o".into());
    args.push(bin_path.display().to_string());
    args.extend(toolchain.libs.iter().cloned());

    let program = resolve_program(&toolchain.command)
        .ok_or_else(|| RunnerError::ToolchainMissing(toolchain.command.clone()))?;
    let result = execute(
        &program,
        &args,
        b"",
        workdir,
        ExecLimits {
            timeout: limits.compile_timeout,
            memory_bytes: None,
            output_cap: 1024 * 1024,
        },
    )
    .map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => RunnerError::ToolchainMissing(toolchain.command.clone()),
        _ => RunnerError::Io(e),
    })?;

    match result.status {
        ExitStatus::Exited(0) if bin_path.exists() => Ok(bin_path),
        ExitStatus::TimedOut => Err(RunnerError::Compile(format!(
            "compilation timed out after {:?}",
            limits.compile_timeout
        ))),
        _ => {
            let mut diagnostics = String::from_utf8_lossy(&result.stderr).into_owned();
            diagnostics.push_str(&String::from_utf8_lossy(&result.stdout));
            // Scratch paths differ per run; keep diagnostics reproducible.
            let diagnostics = diagnostics.replace(&format!("{}/", workdir.display()), "");
            Err(RunnerError::Compile(diagnostics))
        }
    }
}

/// Look a command up on PATH (or accept it as a path).
pub fn resolve_program(command: &str) -> Option<PathBuf> {
    let direct = Path::new(command);
    if command.contains('/') {
        return direct.is_file().then(|| direct.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(command))
        .find(|candidate| candidate.is_file())
}
