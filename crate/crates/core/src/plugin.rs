//! Out-of-process model adapters.
//!
//! A plugin is an executable named `aerialign-plugin-<name>` found on the
//! directories listed in `AERIALIGN_PLUGIN_PATH`. It reads one JSON request
//! per line on stdin (`{"method": ..., "params": ...}`) and answers each with
//! one line: `{"ok": <value>}` or `{"error": "<message>"}`. One process
//! serves every role it supports; calls are serialized.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backbone::{
    AdapterCapabilities, BackboneAdapter, Latent, NoiseSchedule, PromptCondition,
};
use crate::error::{Error, Result};
use crate::filter::{EmbeddingModel, Eraser};
use crate::metrics::FeatureExtractor;
use crate::raster::{Image, Mask};
use crate::refine::Captioner;
use crate::style::AttentionProjections;

pub const PLUGIN_PATH_ENV: &str = "AERIALIGN_PLUGIN_PATH";
pub const PLUGIN_PREFIX: &str = "aerialign-plugin-";

/// Locate `aerialign-plugin-<name>` on the plugin search path.
pub fn find_plugin(name: &str) -> Result<PathBuf> {
    let not_found = |message: String| Error::Plugin {
        name: name.to_string(),
        message,
    };
    if name.is_empty() || name.contains(['/', '\\']) {
        return Err(not_found("invalid plugin name".into()));
    }
    let paths = std::env::var_os(PLUGIN_PATH_ENV)
        .ok_or_else(|| not_found(format!("not built in and {PLUGIN_PATH_ENV} is not set")))?;
    let file = format!("{PLUGIN_PREFIX}{name}{}", std::env::consts::EXE_SUFFIX);
    std::env::split_paths(&paths)
        .map(|dir| dir.join(&file))
        .find(|p| p.is_file())
        .ok_or_else(|| not_found(format!("no '{file}' on {PLUGIN_PATH_ENV}")))
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A running plugin process.
pub struct PluginProcess {
    name: String,
    channel: Mutex<Channel>,
}

impl PluginProcess {
    pub fn spawn(name: &str, path: &Path) -> Result<Self> {
        let mut child = Command::new(path)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::io(path, e))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            name: name.to_string(),
            channel: Mutex::new(Channel {
                child,
                stdin,
                stdout,
            }),
        })
    }

    pub fn discover(name: &str) -> Result<Self> {
        Self::spawn(name, &find_plugin(name)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Plugin {
            name: self.name.clone(),
            message: message.into(),
        }
    }

    pub fn call_value(&self, method: &str, params: Value) -> Result<Value> {
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| self.err("channel poisoned"))?;
        let mut line = serde_json::to_string(&json!({ "method": method, "params": params }))
            .map_err(|e| self.err(e.to_string()))?;
        line.push('\n');
        ch.stdin
            .write_all(line.as_bytes())
            .and_then(|_| ch.stdin.flush())
            .map_err(|e| self.err(format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = ch
            .stdout
            .read_line(&mut reply)
            .map_err(|e| self.err(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(self.err("process closed its output"));
        }
        let mut v: Value =
            serde_json::from_str(&reply).map_err(|e| self.err(format!("bad reply: {e}")))?;
        if let Some(msg) = v.get("error") {
            return Err(self.err(format!(
                "{method}: {}",
                msg.as_str().unwrap_or("unknown error")
            )));
        }
        v.get_mut("ok")
            .map(Value::take)
            .ok_or_else(|| self.err("reply has neither ok nor error"))
    }

    pub fn call<P: Serialize, R: DeserializeOwned>(&self, method: &str, params: &P) -> Result<R> {
        let p = serde_json::to_value(params).map_err(|e| self.err(e.to_string()))?;
        let v = self.call_value(method, p)?;
        serde_json::from_value(v).map_err(|e| self.err(format!("{method}: bad result: {e}")))
    }
}

impl Drop for PluginProcess {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

/// Capability record plus the noise schedule a backbone plugin reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneInfo {
    pub capabilities: AdapterCapabilities,
    pub alpha_bars: Vec<f64>,
}

pub struct PluginBackbone {
    process: Arc<PluginProcess>,
    caps: AdapterCapabilities,
    schedule: NoiseSchedule,
    projections: AttentionProjections,
}

impl PluginBackbone {
    pub fn new(process: Arc<PluginProcess>) -> Result<Self> {
        let info: BackboneInfo = process.call("backbone_info", &Value::Null)?;
        let schedule = NoiseSchedule::from_alpha_bar(info.alpha_bars)?;
        let projections = process.call("attention_projections", &Value::Null)?;
        let mut caps = info.capabilities;
        // one pipe per process: calls cannot overlap
        caps.serial = true;
        Ok(Self {
            process,
            caps,
            schedule,
            projections,
        })
    }
}

impl BackboneAdapter for PluginBackbone {
    fn capabilities(&self) -> AdapterCapabilities {
        self.caps.clone()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn encode(&self, image: &Image) -> Result<Latent> {
        self.process.call("encode", image)
    }

    fn decode(&self, latent: &Latent) -> Result<Image> {
        self.process.call("decode", latent)
    }

    fn predict_noise(
        &self,
        latent: &Latent,
        t: usize,
        condition: &PromptCondition,
    ) -> Result<Latent> {
        self.process.call("predict_noise", &(latent, t, condition))
    }

    fn attention_projections(&self) -> AttentionProjections {
        self.projections.clone()
    }
}

/// Embedder, captioner, eraser and extractor served by one plugin process.
#[derive(Clone)]
pub struct PluginModel {
    process: Arc<PluginProcess>,
    embed_dim: usize,
    input_size: (usize, usize),
    feature_dim: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModelInfo {
    pub embed_dim: usize,
    pub input_size: (usize, usize),
    pub feature_dim: usize,
}

impl PluginModel {
    pub fn new(process: Arc<PluginProcess>) -> Result<Self> {
        let info: ModelInfo = process.call("model_info", &Value::Null)?;
        Ok(Self {
            process,
            embed_dim: info.embed_dim,
            input_size: info.input_size,
            feature_dim: info.feature_dim,
        })
    }
}

impl EmbeddingModel for PluginModel {
    fn name(&self) -> &str {
        self.process.name()
    }

    fn dim(&self) -> usize {
        self.embed_dim
    }

    fn embed(&self, patch: &Image) -> Result<Vec<f64>> {
        self.process.call("embed_image", patch)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        self.process.call("embed_text", &text)
    }
}

impl Captioner for PluginModel {
    fn name(&self) -> &str {
        self.process.name()
    }

    fn extract(&self, patch: &Image) -> Result<PromptCondition> {
        self.process.call("caption", patch)
    }
}

impl Eraser for PluginModel {
    fn name(&self) -> &str {
        self.process.name()
    }

    fn erase(&self, image: &Image, mask: &Mask) -> Result<Image> {
        self.process.call("erase", &(image, mask))
    }
}

impl FeatureExtractor for PluginModel {
    fn name(&self) -> &str {
        self.process.name()
    }

    fn input_size(&self) -> (usize, usize) {
        self.input_size
    }

    fn dim(&self) -> usize {
        self.feature_dim
    }

    fn extract(&self, image: &Image) -> Result<Vec<f64>> {
        self.process.call("extract", image)
    }
}

/// Models a plugin executable exposes; absent roles answer with an error.
#[derive(Default)]
pub struct PluginServer<'a> {
    pub backbone: Option<&'a dyn BackboneAdapter>,
    pub embedder: Option<&'a dyn EmbeddingModel>,
    pub captioner: Option<&'a dyn Captioner>,
    pub eraser: Option<&'a dyn Eraser>,
    pub extractor: Option<&'a dyn FeatureExtractor>,
}

fn arg<T: DeserializeOwned>(params: Value) -> Result<T> {
    serde_json::from_value(params).map_err(|e| Error::Config(format!("bad params: {e}")))
}

fn ok<T: Serialize>(v: T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Config(e.to_string()))
}

impl PluginServer<'_> {
    fn role<'a, T: ?Sized>(slot: Option<&'a T>, role: &str) -> Result<&'a T> {
        slot.ok_or_else(|| Error::Config(format!("plugin does not provide a {role}")))
    }

    pub fn handle(&self, method: &str, params: Value) -> Result<Value> {
        match method {
            "backbone_info" => {
                let b = Self::role(self.backbone, "backbone")?;
                ok(BackboneInfo {
                    capabilities: b.capabilities(),
                    alpha_bars: b.schedule().alpha_bars().to_vec(),
                })
            }
            "attention_projections" => {
                ok(Self::role(self.backbone, "backbone")?.attention_projections())
            }
            "encode" => ok(Self::role(self.backbone, "backbone")?.encode(&arg::<Image>(params)?)?),
            "decode" => ok(Self::role(self.backbone, "backbone")?.decode(&arg::<Latent>(params)?)?),
            "predict_noise" => {
                let (z, t, c): (Latent, usize, PromptCondition) = arg(params)?;
                ok(Self::role(self.backbone, "backbone")?.predict_noise(&z, t, &c)?)
            }
            "model_info" => ok(ModelInfo {
                embed_dim: self.embedder.map_or(0, |e| e.dim()),
                input_size: self.extractor.map_or((0, 0), |e| e.input_size()),
                feature_dim: self.extractor.map_or(0, |e| e.dim()),
            }),
            "embed_image" => {
                ok(Self::role(self.embedder, "embedder")?.embed(&arg::<Image>(params)?)?)
            }
            "embed_text" => {
                ok(Self::role(self.embedder, "embedder")?.embed_text(&arg::<String>(params)?)?)
            }
            "caption" => {
                ok(Self::role(self.captioner, "captioner")?.extract(&arg::<Image>(params)?)?)
            }
            "erase" => {
                let (img, mask): (Image, Mask) = arg(params)?;
                ok(Self::role(self.eraser, "eraser")?.erase(&img, &mask)?)
            }
            "extract" => {
                ok(Self::role(self.extractor, "extractor")?.extract(&arg::<Image>(params)?)?)
            }
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }

    /// Answer requests until `input` closes.
    pub fn serve<R: BufRead, W: Write>(&self, input: R, mut output: W) -> std::io::Result<()> {
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let reply = match serde_json::from_str::<Value>(&line) {
                Ok(mut req) => {
                    let method = req
                        .get("method")
                        .and_then(Value::as_str)
                        .unwrap_or("")
                        .to_string();
                    let params = req
                        .get_mut("params")
                        .map(Value::take)
                        .unwrap_or(Value::Null);
                    match self.handle(&method, params) {
                        Ok(v) => json!({ "ok": v }),
                        Err(e) => json!({ "error": e.to_string() }),
                    }
                }
                Err(e) => json!({ "error": format!("bad request: {e}") }),
            };
            writeln!(output, "{reply}")?;
            output.flush()?;
        }
        Ok(())
    }
}
