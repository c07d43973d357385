use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;

use meshlabel_core::LabelTaxonomy;
use meshlabel_service::{router, AppState, ServiceConfig, DEFAULT_MAX_UPLOAD};

/// Serves scenes, paint sessions and pipeline jobs over HTTP.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "MESHLABEL_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Root of scenes/, sessions/ and jobs/.
    #[arg(long, env = "MESHLABEL_DATA", default_value = "data")]
    data: PathBuf,
    /// Concurrent preprocessing and job workers [default: available cores].
    #[arg(long, env = "MESHLABEL_WORKERS")]
    workers: Option<usize>,
    /// Taxonomy JSON [default: built-in 13-class set].
    #[arg(long, env = "MESHLABEL_TAXONOMY")]
    taxonomy: Option<PathBuf>,
    /// Largest accepted request body, bytes.
    #[arg(long, env = "MESHLABEL_MAX_UPLOAD", default_value_t = DEFAULT_MAX_UPLOAD)]
    max_upload: usize,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let taxonomy = match &args.taxonomy {
        Some(p) => LabelTaxonomy::load(p).with_context(|| format!("loading taxonomy {}", p.display()))?,
        None => LabelTaxonomy::eigen13(),
    };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let state = AppState::open(ServiceConfig {
        data_dir: args.data.clone(),
        workers,
        taxonomy,
    })
    .await
    .with_context(|| format!("opening data directory {}", args.data.display()))?;

    let listener = tokio::net::TcpListener::bind(args.bind)
        .await
        .with_context(|| format!("binding {}", args.bind))?;
    tracing::info!(addr = %args.bind, "listening");
    axum::serve(listener, router(state, args.max_upload))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
