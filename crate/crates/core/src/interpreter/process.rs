//! Child-process and HTTP plumbing for external renderers.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{OutputFormat, RenderError, KILL_GRACE};

pub(super) struct ProcessOutput {
    pub stdout: Vec<u8>,
    pub stderr: String,
}

fn drain<R: Read + Send + 'static>(mut reader: R) -> mpsc::Receiver<Vec<u8>> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = reader.read_to_end(&mut buf);
        let _ = tx.send(buf);
    });
    rx
}

/// Run `argv` with `input` on stdin. On timeout the child is killed and
/// reader threads are abandoned rather than joined: a grandchild holding
/// the pipes open must not extend the wait.
pub(super) fn run(argv: &[String], input: &[u8], timeout: Duration) -> Result<ProcessOutput, RenderError> {
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| RenderError::RendererUnavailable("empty renderer command".into()))?;
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| RenderError::RendererUnavailable(format!("cannot start '{program}': {e}")))?;

    let mut stdin = child.stdin.take().expect("piped");
    let input = input.to_vec();
    thread::spawn(move || {
        // A renderer that exits without reading stdin closes the pipe; ignore.
        let _ = stdin.write_all(&input);
    });
    let stdout = drain(child.stdout.take().expect("piped"));
    let stderr = drain(child.stderr.take().expect("piped"));

    let status = match child.wait_timeout(timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(RenderError::RenderTimeout {
                timeout_ms: timeout.as_millis() as u64,
            });
        }
        Err(e) => {
            let _ = child.kill();
            return Err(RenderError::RenderFailed {
                code: None,
                diagnostics: format!("waiting for renderer failed: {e}"),
            });
        }
    };
    let stdout = stdout.recv_timeout(KILL_GRACE).unwrap_or_default();
    let stderr = String::from_utf8_lossy(&stderr.recv_timeout(KILL_GRACE).unwrap_or_default()).into_owned();
    if !status.success() {
        return Err(RenderError::RenderFailed {
            code: status.code(),
            diagnostics: stderr,
        });
    }
    Ok(ProcessOutput { stdout, stderr })
}

/// First nonempty line of a version command's stderr, else stdout.
pub(super) fn probe_version(argv: &[String], timeout: Duration) -> Option<String> {
    let out = run(argv, b"", timeout).ok()?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    [out.stderr.as_str(), stdout.as_str()]
        .iter()
        .find_map(|s| s.lines().map(str::trim).find(|l| !l.is_empty()).map(str::to_string))
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// Any HTTP response counts as reachable.
pub(super) fn probe_http(url: &str, timeout: Duration) -> bool {
    agent(timeout).get(url).call().is_ok()
}

pub(super) fn post_render(
    base_url: &str,
    format: OutputFormat,
    source: &str,
    timeout: Duration,
) -> Result<Vec<u8>, RenderError> {
    let url = format!("{}/{}", base_url.trim_end_matches('/'), format.as_str());
    let mut resp = agent(timeout)
        .post(&url)
        .content_type("text/plain; charset=utf-8")
        .send(source.as_bytes())
        .map_err(|e| match e {
            ureq::Error::Timeout(_) => RenderError::RenderTimeout {
                timeout_ms: timeout.as_millis() as u64,
            },
            other => RenderError::RendererUnavailable(other.to_string()),
        })?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| RenderError::RenderFailed {
            code: None,
            diagnostics: e.to_string(),
        })?;
    if !(200..300).contains(&status) {
        return Err(RenderError::RenderFailed {
            code: Some(i32::from(status)),
            diagnostics: String::from_utf8_lossy(&body).into_owned(),
        });
    }
    Ok(body)
}
