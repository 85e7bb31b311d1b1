//! Subprocess code execution inside the jail.
//!
//! The interpreter runs with the jail root as working directory, a scrubbed
//! environment, its own process group, and (where the kernel supports it) a
//! Landlock ruleset that grants read-only access to the interpreter's
//! system paths and full access to the jail root only. Network sockets are
//! denied by the same ruleset unless the profile allows them. On kernels
//! without Landlock, a static screen rejects programs naming absolute paths
//! outside the jail; that fallback is best-effort.

use std::io::{Read, Write};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::{Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use landlock::{
    path_beneath_rules, Access, AccessFs, AccessNet, CompatLevel, Compatible, Ruleset, RulesetAttr,
    RulesetCreated, RulesetCreatedAttr, ABI,
};
use wait_timeout::ChildExt;

use crate::agent::profile::CodeSettings;
use crate::jail::Jail;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CodeOutcome {
    Finished { code: Option<i32>, output: String, truncated: bool },
    TimedOut { output: String, truncated: bool },
    SpawnFailed(String),
    Rejected(String),
}

const ABI_LEVEL: ABI = ABI::V4;

fn build_ruleset(settings: &CodeSettings, root: &Path, level: CompatLevel) -> Result<RulesetCreated, String> {
    let existing: Vec<&PathBuf> = settings.read_paths.iter().filter(|p| p.exists()).collect();
    let mut rs = Ruleset::default()
        .set_compatibility(level)
        .handle_access(AccessFs::from_all(ABI_LEVEL))
        .map_err(|e| e.to_string())?;
    if !settings.allow_network {
        // Only meaningful from ABI v4; best effort below that.
        rs = rs
            .set_compatibility(CompatLevel::BestEffort)
            .handle_access(AccessNet::from_all(ABI_LEVEL))
            .map_err(|e| e.to_string())?;
    }
    rs.create()
        .map_err(|e| e.to_string())?
        .add_rules(path_beneath_rules(existing, AccessFs::from_read(ABI_LEVEL)))
        .map_err(|e| e.to_string())?
        // Stdio::null and friends open /dev/null in the child.
        .add_rules(path_beneath_rules(["/dev/null"], AccessFs::from_file(ABI_LEVEL)))
        .map_err(|e| e.to_string())?
        .add_rules(path_beneath_rules([root], AccessFs::from_all(ABI_LEVEL)))
        .map_err(|e| e.to_string())
}

/// Whether this kernel enforces Landlock filesystem rules. Probed once.
pub fn landlock_enforced() -> bool {
    static PROBE: OnceLock<bool> = OnceLock::new();
    *PROBE.get_or_init(|| {
        let ruleset = Ruleset::default()
            .set_compatibility(CompatLevel::HardRequirement)
            .handle_access(AccessFs::from_all(ABI::V1))
            .and_then(|r| r.create());
        let Ok(ruleset) = ruleset else { return false };
        let slot = Mutex::new(Some(ruleset));
        let mut cmd = Command::new("/bin/true");
        cmd.stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::null());
        unsafe {
            cmd.pre_exec(move || {
                let rs = slot.lock().ok().and_then(|mut g| g.take());
                match rs.map(|r| r.restrict_self()) {
                    Some(Ok(_)) => Ok(()),
                    _ => Err(std::io::Error::other("landlock unavailable")),
                }
            });
        }
        // /bin/true lives under /usr or /bin, which the probe does not grant,
        // so exec fails with EACCES when the ruleset is enforced.
        match cmd.status() {
            Ok(_) => false,
            Err(e) => e.kind() == std::io::ErrorKind::PermissionDenied,
        }
    })
}

/// Best-effort screen for kernels without Landlock: reject absolute path
/// literals outside the jail and the read-only system paths, and any `..`
/// inside a quoted literal.
pub fn static_screen(source: &str, jail: &Jail, settings: &CodeSettings) -> Result<(), String> {
    let root = jail.root().display().to_string();
    for lit in string_literals(source) {
        if lit.split('/').any(|seg| seg == "..") {
            return Err(format!("parent-directory reference in {lit:?}"));
        }
        if lit.starts_with('/') {
            let inside = Path::new(&lit).starts_with(&root)
                || settings.read_paths.iter().any(|p| Path::new(&lit).starts_with(p));
            if !inside {
                return Err(format!("absolute path {lit:?} is outside the sandbox"));
            }
        }
    }
    Ok(())
}

fn string_literals(src: &str) -> Vec<String> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let q = bytes[i];
        if q == b'"' || q == b'\'' {
            let start = i + 1;
            let mut j = start;
            while j < bytes.len() && bytes[j] != q && bytes[j] != b'\n' {
                if bytes[j] == b'\\' {
                    j += 1;
                }
                j += 1;
            }
            let end = j.min(bytes.len());
            out.push(String::from_utf8_lossy(&bytes[start..end]).into_owned());
            i = end + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Read everything, keeping at most `cap` bytes.
fn drain<R: Read>(mut r: R, cap: usize) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut buf = [0u8; 8192];
    let mut truncated = false;
    loop {
        match r.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = cap.saturating_sub(kept.len());
                if n > room {
                    truncated = true;
                }
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    (kept, truncated)
}

/// Run `source` with the configured interpreter inside `jail`.
pub fn run_code(source: &str, jail: &Jail, settings: &CodeSettings) -> CodeOutcome {
    let sandboxed = landlock_enforced();
    if !sandboxed {
        if let Err(reason) = static_screen(source, jail, settings) {
            return CodeOutcome::Rejected(reason);
        }
    }

    let (reader, writer) = match std::io::pipe() {
        Ok(p) => p,
        Err(e) => return CodeOutcome::SpawnFailed(e.to_string()),
    };
    let spawned = {
        let writer2 = match writer.try_clone() {
            Ok(w) => w,
            Err(e) => return CodeOutcome::SpawnFailed(e.to_string()),
        };
        let mut cmd = Command::new(&settings.interpreter);
        cmd.args(&settings.args)
            .current_dir(jail.root())
            .env_clear()
            .env("PATH", "/usr/local/bin:/usr/bin:/bin")
            .env("HOME", jail.root())
            .env("LANG", "C.UTF-8")
            .env("PYTHONIOENCODING", "utf-8")
            .env("PYTHONDONTWRITEBYTECODE", "1")
            .stdin(Stdio::piped())
            .stdout(writer)
            .stderr(writer2)
            .process_group(0);
        if sandboxed {
            let ruleset = match build_ruleset(settings, jail.root(), CompatLevel::BestEffort) {
                Ok(r) => r,
                Err(e) => return CodeOutcome::SpawnFailed(format!("sandbox setup: {e}")),
            };
            let slot = Mutex::new(Some(ruleset));
            unsafe {
                cmd.pre_exec(move || {
                    let rs = slot.lock().ok().and_then(|mut g| g.take());
                    match rs.map(|r| r.restrict_self()) {
                        Some(Ok(_)) => Ok(()),
                        _ => Err(std::io::Error::other("cannot apply sandbox ruleset")),
                    }
                });
            }
        }
        cmd.spawn()
        // `cmd` drops here, closing the parent's copies of the pipe writers.
    };
    let mut child = match spawned {
        Ok(c) => c,
        Err(e) => return CodeOutcome::SpawnFailed(e.to_string()),
    };
    let pgid = child.id() as i32;

    let cap = settings.output_limit_bytes;
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let _ = tx.send(drain(reader, cap));
    });
    if let Some(mut stdin) = child.stdin.take() {
        let src = source.to_string();
        // A separate thread so a program that never reads stdin cannot block us.
        thread::spawn(move || {
            let _ = stdin.write_all(src.as_bytes());
        });
    }

    let status = child.wait_timeout(settings.timeout());
    let timed_out = !matches!(status, Ok(Some(_)));
    // Kill the whole group either way: stray background processes must not
    // outlive the call or keep the output pipe open.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
    let status = match status {
        Ok(Some(s)) => Some(s),
        _ => child.wait().ok(),
    };
    let (bytes, truncated) = rx.recv_timeout(Duration::from_secs(2)).unwrap_or_default();
    let output = String::from_utf8_lossy(&bytes).into_owned();
    if timed_out {
        CodeOutcome::TimedOut { output, truncated }
    } else {
        CodeOutcome::Finished { code: status.and_then(|s| s.code()), output, truncated }
    }
}
