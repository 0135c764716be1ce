//! Sandboxed execution of compute scripts.
//!
//! Scripts run under an isolated `python3` in a fresh scratch directory with
//! CPU, address-space and file-size rlimits. An audit hook installed before
//! the script runs blocks writes outside the scratch directory, sockets and
//! process creation.

use std::io::Read;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ToolResult, ToolStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecLimits {
    pub cpu_seconds: u64,
    pub memory_bytes: u64,
    pub output_bytes: usize,
}

impl Default for ExecLimits {
    fn default() -> Self {
        ExecLimits {
            cpu_seconds: 5,
            memory_bytes: 512 << 20,
            output_bytes: 64 << 10,
        }
    }
}

const PRELUDE: &str = r#"
import os, sys
_scratch = os.path.realpath(sys.argv[1])
_script = sys.argv[2]

def _inside(p):
    try:
        p = os.path.realpath(os.fsdecode(p))
    except Exception:
        return False
    return p == _scratch or p.startswith(_scratch + os.sep)

_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC
_PATH_EVENTS = {"os.remove", "os.rename", "os.replace", "os.rmdir", "os.mkdir",
                "os.chmod", "os.chown", "os.link", "os.symlink", "os.truncate",
                "shutil.rmtree", "shutil.copyfile", "shutil.move", "os.utime"}
_DENY = ("socket.", "subprocess.", "os.system", "os.exec", "os.posix_spawn",
         "os.spawn", "os.fork", "os.forkpty", "pty.", "ctypes.")

def _hook(event, args):
    if event == "open":
        path, mode, flags = args
        if isinstance(path, int):
            return
        writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or \
                  (isinstance(flags, int) and flags & _WRITE_FLAGS)
        if writing and not _inside(path):
            raise PermissionError("sandbox: write outside scratch directory blocked: %s" % (path,))
    elif event in _PATH_EVENTS:
        for a in args:
            if isinstance(a, (str, bytes, os.PathLike)) and not _inside(a):
                raise PermissionError("sandbox: %s outside scratch directory blocked" % event)
    elif event.startswith(_DENY):
        raise PermissionError("sandbox: %s blocked" % event)

with open(_script, "r", encoding="utf-8") as _f:
    _code = compile(_f.read(), "<script>", "exec")
os.chdir(_scratch)
sys.addaudithook(_hook)
del _f
exec(_code, {"__name__": "__main__"})
"#;

/// Runs scripts with a configured interpreter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptExecutor {
    pub python: String,
    pub limits: ExecLimits,
}

impl Default for ScriptExecutor {
    fn default() -> Self {
        ScriptExecutor {
            python: "python3".into(),
            limits: ExecLimits::default(),
        }
    }
}

fn set_rlimit(resource: libc::__rlimit_resource_t, soft: u64, hard: u64) -> std::io::Result<()> {
    let lim = libc::rlimit {
        rlim_cur: soft as libc::rlim_t,
        rlim_max: hard as libc::rlim_t,
    };
    // SAFETY: setrlimit only reads the struct passed by reference.
    if unsafe { libc::setrlimit(resource, &lim) } != 0 {
        return Err(std::io::Error::last_os_error());
    }
    Ok(())
}

fn capture(mut r: impl Read + Send + 'static, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        let mut over = false;
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        over = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, over)
    })
}

impl ScriptExecutor {
    pub fn run(&self, id: &str, source: &str) -> ToolResult {
        self.run_with(id, source, self.limits)
    }

    pub fn run_with(&self, id: &str, source: &str, limits: ExecLimits) -> ToolResult {
        let fail = |msg: String| ToolResult::new(id, ToolStatus::Error, msg);
        let scratch = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return fail(format!("cannot create scratch directory: {e}")),
        };
        // the script lives outside the scratch dir so it cannot be rewritten
        let holder = match tempfile::tempdir() {
            Ok(d) => d,
            Err(e) => return fail(format!("cannot create script directory: {e}")),
        };
        let script = holder.path().join("script.py");
        if let Err(e) = std::fs::write(&script, source) {
            return fail(format!("cannot write script: {e}"));
        }
        let cpu = limits.cpu_seconds.max(1);
        let mem = limits.memory_bytes;
        let fsize = (limits.output_bytes as u64).max(1 << 20) * 16;
        let mut cmd = Command::new(&self.python);
        cmd.arg("-I")
            .arg("-B")
            .arg("-c")
            .arg(PRELUDE)
            .arg(scratch.path())
            .arg(&script)
            .env_clear()
            .env("PATH", "/usr/local/bin:/usr/bin:/bin")
            .env("HOME", scratch.path())
            .env("TMPDIR", scratch.path())
            .env("OPENBLAS_NUM_THREADS", "1")
            .env("OMP_NUM_THREADS", "1")
            .current_dir(scratch.path())
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        // SAFETY: the closure only calls async-signal-safe libc functions.
        unsafe {
            cmd.pre_exec(move || {
                set_rlimit(libc::RLIMIT_CPU, cpu, cpu + 1)?;
                set_rlimit(libc::RLIMIT_AS, mem, mem)?;
                set_rlimit(libc::RLIMIT_FSIZE, fsize, fsize)?;
                set_rlimit(libc::RLIMIT_CORE, 0, 0)?;
                libc::setpgid(0, 0);
                Ok(())
            });
        }
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return fail(format!("cannot start interpreter '{}': {e}", self.python)),
        };
        let out = capture(child.stdout.take().expect("piped"), limits.output_bytes);
        let err = capture(child.stderr.take().expect("piped"), limits.output_bytes);
        let wall = Duration::from_secs(cpu * 2 + 1);
        let start = Instant::now();
        let mut wall_killed = false;
        let status = loop {
            match child.try_wait() {
                Ok(Some(s)) => break Some(s),
                Ok(None) if start.elapsed() >= wall => {
                    let _ = child.kill();
                    wall_killed = true;
                    break child.wait().ok();
                }
                Ok(None) => thread::sleep(Duration::from_millis(10)),
                Err(_) => break None,
            }
        };
        let (stdout, over_out) = out.join().unwrap_or_default();
        let (stderr, over_err) = err.join().unwrap_or_default();
        let stdout = String::from_utf8_lossy(&stdout).trim_end().to_string();
        let stderr = String::from_utf8_lossy(&stderr).trim_end().to_string();
        let signal = status.and_then(|s| s.signal());
        let code = status.and_then(|s| s.code());
        let mut result = if wall_killed || signal == Some(libc::SIGXCPU) {
            ToolResult::new(
                id,
                ToolStatus::Timeout,
                format!("timeout: cpu limit of {cpu} s exceeded\n{stdout}").trim_end().to_string(),
            )
        } else if stderr.contains("MemoryError") || signal == Some(libc::SIGKILL) || signal == Some(libc::SIGSEGV) {
            ToolResult::new(
                id,
                ToolStatus::Error,
                format!("resource limit exceeded: memory ({mem} bytes)\n{stdout}").trim_end().to_string(),
            )
        } else if code == Some(0) {
            ToolResult::new(id, ToolStatus::Ok, stdout)
        } else {
            let mut payload = stdout;
            if !payload.is_empty() {
                payload.push('\n');
            }
            payload.push_str(&format!("exit status: {}\n", code.map_or("signal".into(), |c| c.to_string())));
            payload.push_str(&stderr);
            ToolResult::new(id, ToolStatus::Error, payload)
        };
        if over_out || over_err {
            result.truncated = true;
        }
        result
    }
}
