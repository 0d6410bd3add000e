use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    BackendError, Captioner, Diffuser, FakeCaptioner, FakeDiffuser, FakeScorer, RemoteBackend,
    RemoteBackendConfig, Scorer,
};

pub const FAKE_BACKEND_ID: &str = "fake";

/// Backends by id, one map per role.
#[derive(Default, Clone)]
pub struct BackendRegistry {
    captioners: BTreeMap<String, Arc<dyn Captioner>>,
    scorers: BTreeMap<String, Arc<dyn Scorer>>,
    diffusers: BTreeMap<String, Arc<dyn Diffuser>>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("captioners", &self.captioners.keys().collect::<Vec<_>>())
            .field("scorers", &self.scorers.keys().collect::<Vec<_>>())
            .field("diffusers", &self.diffusers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl BackendRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry with the deterministic fakes registered as `"fake"` for every role.
    pub fn with_fakes() -> Self {
        let mut r = Self::new();
        r.register_captioner(Arc::new(FakeCaptioner::new(FAKE_BACKEND_ID)));
        r.register_scorer(Arc::new(FakeScorer::new(FAKE_BACKEND_ID)));
        r.register_diffuser(Arc::new(FakeDiffuser::new(FAKE_BACKEND_ID)));
        r
    }

    pub fn register_captioner(&mut self, b: Arc<dyn Captioner>) {
        self.captioners.insert(b.id().to_string(), b);
    }

    pub fn register_scorer(&mut self, b: Arc<dyn Scorer>) {
        self.scorers.insert(b.id().to_string(), b);
    }

    pub fn register_diffuser(&mut self, b: Arc<dyn Diffuser>) {
        self.diffusers.insert(b.id().to_string(), b);
    }

    /// A remote endpoint serves all three roles under one id.
    pub fn register_remote(&mut self, config: RemoteBackendConfig) -> Result<(), BackendError> {
        let backend = Arc::new(RemoteBackend::new(config)?);
        self.captioners
            .insert(Captioner::id(&*backend).to_string(), backend.clone());
        self.scorers
            .insert(Scorer::id(&*backend).to_string(), backend.clone());
        self.diffusers
            .insert(Diffuser::id(&*backend).to_string(), backend);
        Ok(())
    }

    pub fn captioner(&self, id: &str) -> Result<Arc<dyn Captioner>, BackendError> {
        self.captioners
            .get(id)
            .cloned()
            .ok_or_else(|| BackendError::UnknownBackend(id.into(), "caption"))
    }

    pub fn scorer(&self, id: &str) -> Result<Arc<dyn Scorer>, BackendError> {
        self.scorers
            .get(id)
            .cloned()
            .ok_or_else(|| BackendError::UnknownBackend(id.into(), "score"))
    }

    pub fn diffuser(&self, id: &str) -> Result<Arc<dyn Diffuser>, BackendError> {
        self.diffusers
            .get(id)
            .cloned()
            .ok_or_else(|| BackendError::UnknownBackend(id.into(), "generate"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookups() {
        let r = BackendRegistry::with_fakes();
        assert_eq!(r.scorer("fake").unwrap().embedding_dim(), 64);
        assert!(r.captioner("fake").is_ok());
        assert!(r.diffuser("fake").is_ok());
        assert!(matches!(
            r.scorer("clip"),
            Err(BackendError::UnknownBackend(_, "score"))
        ));
    }

    #[test]
    fn remote_registers_all_roles() {
        let mut r = BackendRegistry::new();
        r.register_remote(RemoteBackendConfig {
            id: "sd".into(),
            url: "http://127.0.0.1:9/".into(),
            ..Default::default()
        })
        .unwrap();
        assert!(r.captioner("sd").is_ok() && r.scorer("sd").is_ok() && r.diffuser("sd").is_ok());
    }
}
