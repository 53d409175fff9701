//! Name → model resolution. Built-in toy models are always available; any
//! other name is looked up as a plugin executable, spawned once and shared.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::backbone::toy::{ToyBackbone, ToyPredictor};
use crate::backbone::BackboneAdapter;
use crate::error::{Error, Result};
use crate::filter::{EmbeddingModel, Eraser};
use crate::metrics::FeatureExtractor;
use crate::plugin::{PluginBackbone, PluginModel, PluginProcess};
use crate::refine::Captioner;
use crate::toy::{ToyCaptioner, ToyEmbedder, ToyEraser, ToyExtractor};

#[derive(Default)]
pub struct Registry {
    processes: Mutex<HashMap<String, Arc<PluginProcess>>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    fn process(&self, name: &str) -> Result<Arc<PluginProcess>> {
        let mut procs = self.processes.lock().map_err(|_| Error::Plugin {
            name: name.to_string(),
            message: "registry lock poisoned".into(),
        })?;
        if let Some(p) = procs.get(name) {
            return Ok(p.clone());
        }
        let p = Arc::new(PluginProcess::discover(name)?);
        log::info!("started plugin '{name}'");
        procs.insert(name.to_string(), p.clone());
        Ok(p)
    }

    fn model(&self, name: &str) -> Result<PluginModel> {
        PluginModel::new(self.process(name)?)
    }

    pub fn backbone(&self, name: &str) -> Result<Arc<dyn BackboneAdapter>> {
        Ok(match name {
            "toy" => Arc::new(ToyBackbone::new(ToyPredictor::Linear)),
            "toy-serial" => Arc::new(ToyBackbone::new(ToyPredictor::Linear).serial(true)),
            "toy-null" => Arc::new(ToyBackbone::new(ToyPredictor::Null)),
            _ => Arc::new(PluginBackbone::new(self.process(name)?)?),
        })
    }

    pub fn embedder(&self, name: &str) -> Result<Arc<dyn EmbeddingModel>> {
        Ok(match name {
            "toy" => Arc::new(ToyEmbedder),
            _ => Arc::new(self.model(name)?),
        })
    }

    pub fn captioner(&self, name: &str) -> Result<Arc<dyn Captioner>> {
        Ok(match name {
            "toy" => Arc::new(ToyCaptioner),
            _ => Arc::new(self.model(name)?),
        })
    }

    pub fn eraser(&self, name: &str) -> Result<Arc<dyn Eraser>> {
        Ok(match name {
            "toy" => Arc::new(ToyEraser),
            _ => Arc::new(self.model(name)?),
        })
    }

    pub fn extractor(&self, name: &str) -> Result<Arc<dyn FeatureExtractor>> {
        Ok(match name {
            "toy" => Arc::new(ToyExtractor),
            _ => Arc::new(self.model(name)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        let r = Registry::new();
        assert_eq!(r.backbone("toy").unwrap().capabilities().name, "toy");
        assert!(r.backbone("toy-serial").unwrap().capabilities().serial);
        assert_eq!(r.embedder("toy").unwrap().dim(), crate::toy::TOY_EMBED_DIM);
        assert!(r.extractor("toy").is_ok());
    }

    #[test]
    fn unknown_name_is_plugin_error() {
        assert!(matches!(
            Registry::new().eraser("no-such-model"),
            Err(Error::Plugin { .. })
        ));
    }
}
