//! Rendering of validated model text through pluggable renderer bindings,
//! with a hermetic plain-text fallback.

mod fallback;
mod process;

use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config_error::ConfigInvalid;
use crate::hash::sha256_hex;
use crate::syntax::{parse_model, Language};

pub use fallback::{fallback_text, render_fallback};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const MIN_TIMEOUT_MS: u64 = 100;
/// Extra time allowed after the timeout for killing and reaping a child.
pub const KILL_GRACE: Duration = Duration::from_millis(500);

pub const BUILTIN_RENDERER_ID: &str = "builtin-fallback";
pub const GRAPHVIZ_PROCESS_ID: &str = "graphviz-process";
pub const PLANTUML_PROCESS_ID: &str = "plantuml-process";
pub const PLANTUML_HTTP_ID: &str = "plantuml-http";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Svg,
    Png,
    Txt,
}

impl OutputFormat {
    pub const fn as_str(&self) -> &'static str {
        match self {
            OutputFormat::Svg => "svg",
            OutputFormat::Png => "png",
            OutputFormat::Txt => "txt",
        }
    }

    pub const fn media_type(&self) -> &'static str {
        match self {
            OutputFormat::Svg => "image/svg+xml",
            OutputFormat::Png => "image/png",
            OutputFormat::Txt => "text/plain; charset=utf-8",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "svg" => Some(OutputFormat::Svg),
            "png" => Some(OutputFormat::Png),
            "txt" | "text" => Some(OutputFormat::Txt),
            _ => None,
        }
    }
}

impl std::fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RendererKind {
    #[default]
    ExternalProcess,
    HttpRenderer,
    BuiltinFallback,
}

fn default_timeout_ms() -> u64 {
    DEFAULT_TIMEOUT_MS
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpreterConfig {
    pub language: Language,
    #[serde(default)]
    pub output_format: OutputFormat,
    /// Graphviz layout engine (dot, neato, fdp, ...); ignored for PlantUML.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout_engine: Option<String>,
    #[serde(default)]
    pub renderer: RendererKind,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// When set, an unavailable renderer is an error instead of a reason to
    /// fall back to the builtin text renderer.
    #[serde(default)]
    pub strict: bool,
}

impl InterpreterConfig {
    pub fn new(language: Language) -> Self {
        InterpreterConfig {
            language,
            output_format: OutputFormat::Svg,
            layout_engine: None,
            renderer: RendererKind::ExternalProcess,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            strict: false,
        }
    }

    /// Hermetic configuration: builtin renderer, txt output.
    pub fn fallback(language: Language) -> Self {
        InterpreterConfig {
            output_format: OutputFormat::Txt,
            renderer: RendererKind::BuiltinFallback,
            ..Self::new(language)
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), ConfigInvalid> {
        if !self.language.is_supported() {
            return Err(ConfigInvalid::new("language", "must be plantuml or graphviz"));
        }
        if self.timeout_ms < MIN_TIMEOUT_MS {
            return Err(ConfigInvalid::new(
                "timeout_ms",
                format!("must be at least {MIN_TIMEOUT_MS}"),
            ));
        }
        if let Some(engine) = &self.layout_engine {
            let ok = !engine.is_empty()
                && engine
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
            if !ok {
                return Err(ConfigInvalid::new("layout_engine", "must be a plain program name"));
            }
        }
        Ok(())
    }
}

/// Declarative renderer bindings: command and endpoint templates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RendererBindings {
    /// Placeholders: `{engine}`, `{format}`. Source on stdin, artifact on stdout.
    pub graphviz_command: String,
    pub graphviz_version_command: String,
    /// Placeholders: `{plantuml_jar}`, `{format}`.
    pub plantuml_command: String,
    pub plantuml_version_command: String,
    pub plantuml_jar: Option<PathBuf>,
    /// Base URL of a PlantUML server; sources are POSTed to `{url}/{format}`.
    pub plantuml_server_url: Option<String>,
    /// Maximum number of renders running at once.
    pub max_concurrent: usize,
}

impl Default for RendererBindings {
    fn default() -> Self {
        RendererBindings {
            graphviz_command: "{engine} -T{format}".into(),
            graphviz_version_command: "{engine} -V".into(),
            plantuml_command: "java -jar {plantuml_jar} -pipe -t{format}".into(),
            plantuml_version_command: "java -jar {plantuml_jar} -version".into(),
            plantuml_jar: None,
            plantuml_server_url: None,
            max_concurrent: 2,
        }
    }
}

impl RendererBindings {
    fn expand(&self, template: &str, engine: &str, format: &str) -> Vec<String> {
        let jar = self
            .plantuml_jar
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "plantuml.jar".into());
        template
            .split_whitespace()
            .map(|arg| {
                arg.replace("{engine}", engine)
                    .replace("{format}", format)
                    .replace("{plantuml_jar}", &jar)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderArtifact {
    pub content_hash: String,
    pub format: OutputFormat,
    #[serde(skip)]
    pub bytes: Vec<u8>,
    pub renderer_id: String,
    pub duration_ms: u64,
    /// Renderer standard-error text, captured even on success.
    pub diagnostics: String,
}

impl RenderArtifact {
    pub fn new(bytes: Vec<u8>, format: OutputFormat, renderer_id: &str, duration_ms: u64, diagnostics: String) -> Self {
        RenderArtifact {
            content_hash: sha256_hex(&bytes),
            format,
            bytes,
            renderer_id: renderer_id.to_string(),
            duration_ms,
            diagnostics,
        }
    }
}

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    ConfigInvalid(#[from] ConfigInvalid),
    #[error("renderer unavailable: {0}")]
    RendererUnavailable(String),
    #[error("renderer exceeded {timeout_ms} ms and was killed")]
    RenderTimeout { timeout_ms: u64 },
    #[error("renderer failed (exit {code:?}): {diagnostics}")]
    RenderFailed { code: Option<i32>, diagnostics: String },
    #[error("{renderer} cannot produce {format} output")]
    UnsupportedFormat { renderer: String, format: OutputFormat },
}

impl RenderError {
    pub const fn code(&self) -> &'static str {
        match self {
            RenderError::ConfigInvalid(_) => "config_invalid",
            RenderError::RendererUnavailable(_) => "renderer_unavailable",
            RenderError::RenderTimeout { .. } => "render_timeout",
            RenderError::RenderFailed { .. } => "render_failed",
            RenderError::UnsupportedFormat { .. } => "unsupported_format",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RendererProbe {
    pub renderer_id: String,
    pub language: Language,
    pub available: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<String>,
}

const PROBE_TIMEOUT: Duration = Duration::from_secs(5);

/// Renders with bounded concurrency over a set of bindings.
#[derive(Clone, Debug)]
pub struct Interpreter {
    bindings: Arc<RendererBindings>,
    slots: Arc<(Mutex<usize>, Condvar)>,
}

impl Default for Interpreter {
    fn default() -> Self {
        Self::new(RendererBindings::default())
    }
}

struct SlotGuard<'a>(&'a (Mutex<usize>, Condvar));

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        let (lock, cv) = self.0;
        *lock.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        cv.notify_one();
    }
}

impl Interpreter {
    pub fn new(bindings: RendererBindings) -> Self {
        Interpreter {
            bindings: Arc::new(bindings),
            slots: Arc::new((Mutex::new(0), Condvar::new())),
        }
    }

    pub fn bindings(&self) -> &RendererBindings {
        &self.bindings
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let (lock, cv) = &*self.slots;
        let limit = self.bindings.max_concurrent.max(1);
        let mut used = lock.lock().unwrap_or_else(|e| e.into_inner());
        while *used >= limit {
            used = cv.wait(used).unwrap_or_else(|e| e.into_inner());
        }
        *used += 1;
        SlotGuard(&self.slots)
    }

    /// Check which renderers could be used, without rendering anything.
    pub fn probe_renderers(&self) -> Vec<RendererProbe> {
        let b = &self.bindings;
        let mut out = Vec::new();

        let gv = process::probe_version(&b.expand(&b.graphviz_version_command, "dot", ""), PROBE_TIMEOUT);
        out.push(RendererProbe {
            renderer_id: GRAPHVIZ_PROCESS_ID.into(),
            language: Language::Graphviz,
            available: gv.is_some(),
            version: gv,
        });

        let jar_present = b.plantuml_jar.as_ref().is_some_and(|p| p.is_file());
        let pu = if jar_present {
            process::probe_version(&b.expand(&b.plantuml_version_command, "", ""), PROBE_TIMEOUT)
        } else {
            None
        };
        out.push(RendererProbe {
            renderer_id: PLANTUML_PROCESS_ID.into(),
            language: Language::Plantuml,
            available: pu.is_some(),
            version: pu,
        });

        let http_ok = b
            .plantuml_server_url
            .as_deref()
            .is_some_and(|url| process::probe_http(url, PROBE_TIMEOUT));
        out.push(RendererProbe {
            renderer_id: PLANTUML_HTTP_ID.into(),
            language: Language::Plantuml,
            available: http_ok,
            version: None,
        });

        for language in [Language::Graphviz, Language::Plantuml] {
            out.push(RendererProbe {
                renderer_id: BUILTIN_RENDERER_ID.into(),
                language,
                available: true,
                version: Some(env!("CARGO_PKG_VERSION").into()),
            });
        }
        out
    }

    /// Render `source`, which the caller has already validated for
    /// `config.language`.
    pub fn render(&self, config: &InterpreterConfig, source: &str) -> Result<RenderArtifact, RenderError> {
        config.validate()?;
        match config.renderer {
            RendererKind::BuiltinFallback => {
                if config.output_format != OutputFormat::Txt {
                    return Err(RenderError::UnsupportedFormat {
                        renderer: BUILTIN_RENDERER_ID.into(),
                        format: config.output_format,
                    });
                }
                let start = Instant::now();
                let parsed = parse_model(config.language, source).map_err(|report| RenderError::RenderFailed {
                    code: None,
                    diagnostics: report.to_string(),
                })?;
                let mut artifact = render_fallback(&parsed.model);
                artifact.duration_ms = start.elapsed().as_millis() as u64;
                Ok(artifact)
            }
            RendererKind::ExternalProcess => {
                let (argv, id, format) = match config.language {
                    Language::Graphviz => {
                        let engine = config.layout_engine.as_deref().unwrap_or("dot");
                        // graphviz has no "txt"; its plain-text layout output is "plain"
                        let fmt = match config.output_format {
                            OutputFormat::Txt => "plain",
                            f => f.as_str(),
                        };
                        (
                            self.bindings.expand(&self.bindings.graphviz_command, engine, fmt),
                            GRAPHVIZ_PROCESS_ID,
                            config.output_format,
                        )
                    }
                    _ => {
                        if !self.bindings.plantuml_jar.as_ref().is_some_and(|p| p.is_file()) {
                            return Err(RenderError::RendererUnavailable(
                                "plantuml jar not configured or missing".into(),
                            ));
                        }
                        (
                            self.bindings
                                .expand(&self.bindings.plantuml_command, "", config.output_format.as_str()),
                            PLANTUML_PROCESS_ID,
                            config.output_format,
                        )
                    }
                };
                let _slot = self.acquire();
                let start = Instant::now();
                let out = process::run(&argv, source.as_bytes(), config.timeout())?;
                finish(out.stdout, format, id, start, out.stderr)
            }
            RendererKind::HttpRenderer => {
                if config.language != Language::Plantuml {
                    return Err(RenderError::RendererUnavailable(
                        "no HTTP renderer binding for graphviz".into(),
                    ));
                }
                let url = self
                    .bindings
                    .plantuml_server_url
                    .as_deref()
                    .ok_or_else(|| RenderError::RendererUnavailable("plantuml server URL not configured".into()))?;
                let _slot = self.acquire();
                let start = Instant::now();
                let bytes = process::post_render(url, config.output_format, source, config.timeout())?;
                finish(bytes, config.output_format, PLANTUML_HTTP_ID, start, String::new())
            }
        }
    }
}

fn finish(
    bytes: Vec<u8>,
    format: OutputFormat,
    id: &str,
    start: Instant,
    diagnostics: String,
) -> Result<RenderArtifact, RenderError> {
    if bytes.is_empty() {
        return Err(RenderError::RenderFailed {
            code: Some(0),
            diagnostics: if diagnostics.is_empty() {
                "renderer produced no output".into()
            } else {
                diagnostics
            },
        });
    }
    Ok(RenderArtifact::new(
        bytes,
        format,
        id,
        start.elapsed().as_millis() as u64,
        diagnostics,
    ))
}

/// Render with the default bindings.
pub fn render(config: &InterpreterConfig, source: &str) -> Result<RenderArtifact, RenderError> {
    Interpreter::default().render(config, source)
}

pub fn probe_renderers() -> Vec<RendererProbe> {
    Interpreter::default().probe_renderers()
}
