//! Newline-delimited JSON wire protocol.
//!
//! Requests carry a `cmd` field: `spec`, `reset` (`episode`, `seed`),
//! `step` (`action` with `zf`, `xb`, `zb`, `wB`, `wF`) and `close`. Every
//! request gets exactly one reply line. Malformed requests get
//! `{"error": ..., "detail": ...}` and the session stays usable.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpListener;
#[cfg(unix)]
use std::os::unix::net::UnixListener;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Env, RawAction};
use crate::config::RunConfig;
use crate::workload::TraceSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Spec,
    Reset { episode: u32, seed: u64 },
    Step { action: RawAction },
    Close,
}

/// One client's environment instance.
pub struct Session {
    env: Env,
    closed: bool,
}

fn error_reply(kind: &str, detail: impl ToString) -> Value {
    json!({ "error": kind, "detail": detail.to_string() })
}

impl Session {
    pub fn new(env: Env) -> Self {
        Self { env, closed: false }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn handle(&mut self, line: &str) -> Value {
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => return error_reply("bad_request", e),
        };
        match req {
            Request::Spec => {
                let l = self.env.layout();
                let c = self.env.config();
                json!({
                    "obs": l.dim(),
                    "binary": l.binary_dim(),
                    "alloc": l.alloc_dim(),
                    "users": l.users,
                    "window": l.window,
                    "queue_features": l.queue_features,
                    "horizon": c.system.horizon,
                    "include_aqm_state": l.include_aqm_state,
                    "cost_limit": c.reward.cost_limit,
                    "config_hash": c.hash(),
                })
            }
            Request::Reset { episode, seed } => match self.env.reset(episode, seed) {
                Ok(obs) => json!({ "obs": obs }),
                Err(e) => error_reply("reset_failed", e),
            },
            Request::Step { action } => match self.env.step_raw(&action) {
                Ok(s) => json!({
                    "obs": s.obs,
                    "reward": s.reward,
                    "cost": s.cost,
                    "done": s.done,
                    "info": s.info,
                }),
                Err(e) => error_reply("step_failed", e),
            },
            Request::Close => {
                self.closed = true;
                json!({ "ok": true })
            }
        }
    }
}

/// Handles one request line and returns the reply line (without newline).
pub fn handle_message(session: &mut Session, line: &str) -> String {
    session.handle(line).to_string()
}

fn run_connection<R: io::Read, W: Write>(mut session: Session, input: R, mut output: W) -> io::Result<()> {
    let reader = BufReader::new(input);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_message(&mut session, &line);
        output.write_all(reply.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
        if session.is_closed() {
            break;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Unix(PathBuf),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = s.strip_prefix("unix:") {
            if p.is_empty() {
                return Err("empty unix socket path".into());
            }
            return Ok(Endpoint::Unix(PathBuf::from(p)));
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        if !addr.contains(':') {
            return Err(format!("expected HOST:PORT or unix:PATH, got `{s}`"));
        }
        Ok(Endpoint::Tcp(addr.to_string()))
    }
}

pub enum Listener {
    Tcp(TcpListener),
    #[cfg(unix)]
    Unix(UnixListener),
}

impl Listener {
    pub fn bind(endpoint: &Endpoint) -> io::Result<Self> {
        match endpoint {
            Endpoint::Tcp(a) => Ok(Listener::Tcp(TcpListener::bind(a)?)),
            #[cfg(unix)]
            Endpoint::Unix(p) => Ok(Listener::Unix(UnixListener::bind(p)?)),
            #[cfg(not(unix))]
            Endpoint::Unix(_) => Err(io::Error::new(io::ErrorKind::Unsupported, "unix sockets unavailable")),
        }
    }

    /// Printable bound address (resolves port 0).
    pub fn local_addr(&self) -> String {
        match self {
            Listener::Tcp(l) => l.local_addr().map(|a| a.to_string()).unwrap_or_default(),
            #[cfg(unix)]
            Listener::Unix(l) => l
                .local_addr()
                .ok()
                .and_then(|a| a.as_pathname().map(|p| format!("unix:{}", p.display())))
                .unwrap_or_default(),
        }
    }

    /// Accepts connections forever, one thread and one session each.
    pub fn run(self, config: RunConfig, traces: Arc<TraceSet>) -> io::Result<()> {
        let spawn = |config: RunConfig, traces: Arc<TraceSet>, r: Box<dyn io::Read + Send>, w: Box<dyn Write + Send>| {
            thread::spawn(move || match Env::new(config, traces) {
                Ok(env) => {
                    if let Err(e) = run_connection(Session::new(env), r, w) {
                        log::warn!("connection ended with error: {e}");
                    }
                }
                Err(e) => log::error!("cannot create environment: {e}"),
            });
        };
        match self {
            Listener::Tcp(l) => {
                for stream in l.incoming() {
                    let s = stream?;
                    log::info!("session from {:?}", s.peer_addr().ok());
                    spawn(config.clone(), traces.clone(), Box::new(s.try_clone()?), Box::new(s));
                }
            }
            #[cfg(unix)]
            Listener::Unix(l) => {
                for stream in l.incoming() {
                    let s = stream?;
                    spawn(config.clone(), traces.clone(), Box::new(s.try_clone()?), Box::new(s));
                }
            }
        }
        Ok(())
    }
}

pub fn serve(endpoint: &Endpoint, config: RunConfig, traces: Arc<TraceSet>) -> io::Result<()> {
    let listener = Listener::bind(endpoint)?;
    log::info!("listening on {}", listener.local_addr());
    listener.run(config, traces)
}
