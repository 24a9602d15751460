use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::config::ServiceConfig;
use crate::routes::router;
use crate::state::{AppState, ServeError};

async fn bind(config: &ServiceConfig) -> Result<TcpListener, ServeError> {
    let addr: SocketAddr = format!("{}:{}", config.host, config.port)
        .parse()
        .map_err(|e| ServeError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, e)))?;
    TcpListener::bind(addr).await.map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => ServeError::PortInUse(addr),
        _ => ServeError::Io(e),
    })
}

/// A server running on the current Tokio runtime.
#[derive(Debug)]
pub struct RunningServer {
    addr: SocketAddr,
    state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl RunningServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &Arc<AppState> {
        &self.state
    }

    /// Stops accepting connections and waits for in-flight requests,
    /// including generation calls, to finish.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task
            .await
            .map_err(|e| std::io::Error::other(e.to_string()))?
    }
}

/// Loads state from `config`, binds, and starts serving in the background.
pub async fn start(config: ServiceConfig) -> Result<RunningServer, ServeError> {
    let state = {
        let config = config.clone();
        tokio::task::spawn_blocking(move || AppState::from_config(config))
            .await
            .map_err(|e| ServeError::Io(std::io::Error::other(e.to_string())))??
    };
    let state = Arc::new(state);
    let listener = bind(&config).await?;
    let addr = listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = router(state.clone());
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    tracing::info!(%addr, images = state.corpus.len(), "serving");
    Ok(RunningServer {
        addr,
        state,
        stop: Some(stop),
        task,
    })
}

/// Serves until `signal` resolves, then drains.
pub async fn run(
    config: ServiceConfig,
    signal: impl Future<Output = ()>,
) -> Result<(), ServeError> {
    let server = start(config).await?;
    signal.await;
    tracing::info!("shutting down");
    server.shutdown().await?;
    Ok(())
}
