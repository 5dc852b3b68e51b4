//! HTTP gateway for OpenCourier instances, the quote desk and the registry.

pub mod auth;
pub mod config;
pub mod error;
pub mod extract;
pub mod handlers;
pub mod idempotency;
pub mod routes;

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use opencourier_core::clock::{Clock, SystemClock};
use opencourier_core::federation::Federation;
use opencourier_core::ids::{IdGen, RandomIds, Role};
use opencourier_core::instance::Instance;
use opencourier_core::quoting::QuoteDesk;
use opencourier_core::registry::{load_registry, Registry, RegistryService, SourceKind};
use opencourier_core::store::{FileStore, MemoryStore, Store};
use opencourier_core::Result;

use crate::auth::{Principal, TokenStore};
use crate::config::ServerConfig;
use crate::idempotency::IdempotencyCache;

pub const DEFAULT_IDEMPOTENCY_CAPACITY: usize = 10_000;

#[derive(Clone)]
pub struct AppState {
    pub fed: Arc<Federation>,
    pub tokens: Arc<TokenStore>,
    pub clock: Arc<dyn Clock>,
    pub ids: Arc<dyn IdGen>,
    pub idempotency: Arc<IdempotencyCache>,
}

impl AppState {
    pub fn new(fed: Arc<Federation>, tokens: Arc<TokenStore>, clock: Arc<dyn Clock>, ids: Arc<dyn IdGen>) -> Self {
        Self {
            fed,
            tokens,
            clock,
            ids,
            idempotency: Arc::new(IdempotencyCache::new(DEFAULT_IDEMPOTENCY_CAPACITY)),
        }
    }

    /// Expires stale quotes and retries dispatch of waiting deliveries.
    pub fn tick(&self) -> Result<()> {
        let now = self.clock.now();
        self.fed.desk.expire_quotes(now)?;
        for inst in self.fed.instances() {
            inst.dispatch_pending(now)?;
        }
        Ok(())
    }
}

fn open_store(dir: Option<&Path>, name: &str) -> Result<Arc<dyn Store>> {
    Ok(match dir {
        Some(d) => {
            std::fs::create_dir_all(d)
                .map_err(|e| opencourier_core::Error::internal(format!("cannot create {}: {e}", d.display())))?;
            Arc::new(FileStore::open(d.join(format!("{name}.log")))?)
        }
        None => Arc::new(MemoryStore::new()),
    })
}

/// Builds the full application state described by `cfg`.
pub fn build_state(cfg: &ServerConfig, clock: Arc<dyn Clock>) -> Result<AppState> {
    let ids: Arc<dyn IdGen> = Arc::new(RandomIds);
    let dir = cfg.data_dir.as_deref();
    let registry = match &cfg.registry {
        Some(src) => load_registry(src)?,
        None => Registry::empty(SourceKind::Service),
    };
    let registry = Arc::new(RegistryService::new(registry, None));
    let shared = open_store(dir, "gateway")?;
    let desk = QuoteDesk::new(shared.clone(), ids.clone(), cfg.max_rounds);
    let tokens = Arc::new(TokenStore::new(shared));
    let mut fed = Federation::new(registry, desk);
    let now = clock.now();
    for section in &cfg.instances {
        let store = open_store(dir, &section.config.domain)?;
        let inst = Instance::open(section.config.clone(), store, ids.clone())?;
        if let Some(p) = &section.policy {
            if &inst.policy()? != p {
                inst.set_policy(p.clone(), now)?;
            }
        }
        tokens.install(
            &section.admin_token,
            Principal::new(Role::Admin, "admin", Some(&section.config.domain)),
            now,
        )?;
        fed.host(Arc::new(inst));
    }
    if let Some(t) = &cfg.registry_admin_token {
        tokens.install(t, Principal::new(Role::Admin, "registry-admin", None), now)?;
    }
    Ok(AppState::new(Arc::new(fed), tokens, clock, ids))
}

/// State for a standalone registry service persisted at `path`.
pub fn registry_state(path: &Path, admin_token: &str) -> Result<AppState> {
    let ids: Arc<dyn IdGen> = Arc::new(RandomIds);
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let registry = Arc::new(RegistryService::open(path)?);
    let store: Arc<dyn Store> = Arc::new(MemoryStore::new());
    let desk = QuoteDesk::new(store.clone(), ids.clone(), opencourier_core::quoting::DEFAULT_MAX_ROUNDS);
    let tokens = Arc::new(TokenStore::new(store));
    tokens.install(admin_token, Principal::new(Role::Admin, "registry-admin", None), clock.now())?;
    Ok(AppState::new(Arc::new(Federation::new(registry, desk)), tokens, clock, ids))
}

/// Serves `router` on `listener` until the process exits, ticking
/// maintenance every `tick` interval.
pub async fn serve(
    state: AppState,
    router: axum::Router,
    listener: tokio::net::TcpListener,
    tick: Duration,
) -> std::io::Result<()> {
    tracing::info!("listening on {}", listener.local_addr()?);
    let ticker = state.clone();
    tokio::spawn(async move {
        let mut iv = tokio::time::interval(tick);
        loop {
            iv.tick().await;
            if let Err(e) = ticker.tick() {
                tracing::warn!(code = %e.code, "maintenance tick failed: {}", e.message);
            }
        }
    });
    axum::serve(listener, router).await
}
