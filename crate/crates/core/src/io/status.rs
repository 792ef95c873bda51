//! Live status document: atomic file replacement and a read-only HTTP view.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch};

use crate::timefmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentStatus {
    pub present: bool,
    pub sleeping_now: bool,
    pub phone_now: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusDocument {
    pub session_id: String,
    #[serde(serialize_with = "timefmt::ts")]
    pub ts: f64,
    pub students: BTreeMap<String, StudentStatus>,
    pub open_event_count: usize,
}

impl StatusDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("status document always serializes")
    }
}

/// Writes `contents` to a sibling temp file and renames it over `path`, so
/// readers see either the old or the new document, never a partial one.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "status path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

async fn serve_status(State(rx): State<watch::Receiver<Arc<String>>>) -> impl IntoResponse {
    let body = rx.borrow().as_ref().clone();
    ([(header::CONTENT_TYPE, "application/json")], body)
}

/// Background HTTP server answering `GET /status` (and `GET /`) with the
/// most recently published document.
pub struct StatusServer {
    addr: SocketAddr,
    tx: watch::Sender<Arc<String>>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl StatusServer {
    pub fn start(addr: SocketAddr, initial: String) -> std::io::Result<Self> {
        let (tx, rx) = watch::channel(Arc::new(initial));
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(1)
            .enable_io()
            .build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
        let local = listener.local_addr()?;
        let app = Router::new()
            .route("/", get(serve_status))
            .route("/status", get(serve_status))
            .with_state(rx);
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let served = axum::serve(listener, app).with_graceful_shutdown(async {
                    let _ = stop_rx.await;
                });
                if let Err(e) = served.await {
                    tracing::error!("status server stopped: {e}");
                }
            });
        });
        Ok(Self {
            addr: local,
            tx,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn publish(&self, doc: String) {
        self.tx.send_replace(Arc::new(doc));
    }
}

impl Drop for StatusServer {
    fn drop(&mut self) {
        if let Some(stop) = self.shutdown.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
