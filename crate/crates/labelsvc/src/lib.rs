//! HTTP labeling service: hands out images to raters, records their ratings
//! in the append-only label store and reports class distributions.
//!
//! Routes:
//!
//! ```text
//! GET  /api/tasks                                  [{task, labeled, total}]
//! GET  /api/next?task=T&rater=R[&strategy=S][&skip=ID]
//! POST /api/labels   {image_id, task, value, rater_id}  -> 201 stored record
//! GET  /api/stats?task=T                           {counts, shares, reference_shares}
//! GET  /images/{image_id}                          raster bytes
//! GET  /…                                          static UI bundle, when configured
//! ```

mod api;
mod select;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use streetscape::dataset::{read_manifest, DatasetError, ImageRecord, LabelStore, Task};
use streetscape::features::{by_image, import_embeddings, FeatureError, FeatureVector};
use streetscape::model::{load_model, ModelError, SvmModel};
use thiserror::Error;

pub use api::router;
pub use select::{next_item, NextItem, Progress, SelectError, Strategy};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("corpus manifest: {0}")]
    Manifest(#[source] DatasetError),
    #[error("label store: {0}")]
    Store(#[source] DatasetError),
    #[error("model {path}: {source}")]
    Model { path: PathBuf, source: ModelError },
    #[error("features: {0}")]
    Features(#[from] FeatureError),
    #[error("two models loaded for task {0}")]
    DuplicateModel(Task),
    #[error("the corpus manifest lists no images")]
    EmptyCorpus,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Config {
    pub listen: SocketAddr,
    pub manifest: PathBuf,
    pub labels: PathBuf,
    /// Models used by the `uncertain` strategy, at most one per task.
    pub models: Vec<PathBuf>,
    /// Feature file matching the models' extractor.
    pub features: Option<PathBuf>,
    /// Built UI bundle served at `/`.
    pub ui_dir: Option<PathBuf>,
}

/// Shared service state.
pub struct AppState {
    manifest_path: PathBuf,
    images: BTreeMap<String, ImageRecord>,
    store: Arc<LabelStore>,
    models: BTreeMap<Task, SvmModel>,
    features: BTreeMap<String, FeatureVector>,
    /// Per `(rater, task)`: images skipped in the current session.
    sessions: Mutex<HashMap<(String, Task), BTreeSet<String>>>,
    ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn load(config: &Config) -> Result<Self, ServiceError> {
        let images: BTreeMap<String, ImageRecord> = read_manifest(&config.manifest)
            .map_err(ServiceError::Manifest)?
            .into_iter()
            .map(|r| (r.image_id.clone(), r))
            .collect();
        if images.is_empty() {
            return Err(ServiceError::EmptyCorpus);
        }
        let store = LabelStore::open(&config.labels).map_err(ServiceError::Store)?;
        let mut models = BTreeMap::new();
        for path in &config.models {
            let model = load_model(path).map_err(|source| ServiceError::Model { path: path.clone(), source })?;
            let task = model.task;
            if models.insert(task, model).is_some() {
                return Err(ServiceError::DuplicateModel(task));
            }
        }
        let features = match &config.features {
            Some(path) => by_image(import_embeddings(path)?),
            None => BTreeMap::new(),
        };
        Ok(AppState {
            manifest_path: config.manifest.clone(),
            images,
            store: Arc::new(store),
            models,
            features,
            sessions: Mutex::new(HashMap::new()),
            ui_dir: config.ui_dir.clone(),
        })
    }

    pub fn store(&self) -> &LabelStore {
        &self.store
    }

    pub fn manifest_path(&self) -> &Path {
        &self.manifest_path
    }
}

/// Bind `config.listen` and serve until ctrl-c.
pub async fn serve(config: Config) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::load(&config)?);
    let listener = tokio::net::TcpListener::bind(config.listen).await?;
    eprintln!("labelsvc listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
