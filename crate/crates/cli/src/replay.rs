//! Scripted sessions end to end: the evaluation harness behind `cmi replay`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cmi_core::gateway::load_replay_script;
use cmi_core::interpreter::{Interpreter, InterpreterConfig, OutputFormat, RendererBindings, RendererKind};
use cmi_core::syntax::{diff_models, Language, Model, ModelDiff, ModelMetrics};
use cmi_core::{analyze_response, BlockSummary, Engine, LlmConfig, ModelDescriptor, Store};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct ReplayOptions {
    pub script: PathBuf,
    /// JSON array of prompt strings; missing prompts become "Step n".
    pub prompts: Option<PathBuf>,
    pub out: PathBuf,
    pub model: ModelDescriptor,
    /// Detected from the first response when not given.
    pub language: Option<Language>,
    pub format: OutputFormat,
    pub renderer: RendererKind,
    pub bindings: RendererBindings,
}

impl ReplayOptions {
    pub fn new(script: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        ReplayOptions {
            script: script.into(),
            prompts: None,
            out: out.into(),
            model: ModelDescriptor::gpt4(),
            language: None,
            format: OutputFormat::Txt,
            renderer: RendererKind::BuiltinFallback,
            bindings: RendererBindings::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactFile {
    pub hash: String,
    pub format: OutputFormat,
    pub renderer_id: String,
    pub block_index: usize,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub prompt: String,
    pub blocks: Vec<BlockSummary>,
    /// Metrics of the step's first valid model in the session language.
    pub metrics: Option<ModelMetrics>,
    /// Difference to the most recent earlier model, if any.
    pub diff_from_previous: Option<ModelDiff>,
    pub artifacts: Vec<ArtifactFile>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub script: PathBuf,
    pub model: ModelDescriptor,
    pub language: Language,
    pub conversation_id: String,
    pub store_root: PathBuf,
    pub steps: Vec<StepReport>,
}

impl ReplayReport {
    /// A short human-readable summary, one line per step.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "replayed {} step(s) of {} as {} ({})\n",
            self.steps.len(),
            self.script.display(),
            self.model.name,
            self.language
        );
        for s in &self.steps {
            let counts = s.metrics.as_ref().map_or_else(
                || "no valid model".to_string(),
                |m| {
                    m.counts()
                        .iter()
                        .map(|(k, v)| format!("{k}={v}"))
                        .collect::<Vec<_>>()
                        .join(" ")
                },
            );
            out.push_str(&format!("step {}: {counts}\n", s.step));
            if let Some(d) = &s.diff_from_previous {
                for (what, c) in [
                    ("classes", &d.classes),
                    ("enums", &d.enums),
                    ("attributes", &d.attributes),
                    ("operations", &d.operations),
                    ("relationships", &d.relationships),
                    ("nodes", &d.nodes),
                    ("edges", &d.edges),
                ] {
                    if !c.is_empty() {
                        out.push_str(&format!(
                            "  {what}: +{:?} -{:?} ~{:?}\n",
                            c.added, c.removed, c.modified
                        ));
                    }
                }
            }
            for a in &s.artifacts {
                out.push_str(&format!("  artifact {}\n", a.path.display()));
            }
            for w in &s.warnings {
                out.push_str(&format!("  warning: {w}\n"));
            }
        }
        out
    }
}

fn load_prompts(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: expected a JSON array of strings: {e}", path.display()))
}

fn detect_language(responses: &[String]) -> Language {
    responses
        .iter()
        .flat_map(|r| analyze_response(r))
        .map(|a| a.block.language)
        .find(Language::is_supported)
        .unwrap_or(Language::Plantuml)
}

/// Run every scripted response through a fresh engine rooted at
/// `out/store`, write artifacts under `out/artifacts` and the report to
/// `out/report.json`.
pub fn run_replay(opts: &ReplayOptions) -> Result<ReplayReport, String> {
    let script = load_replay_script(&opts.script).map_err(|e| e.to_string())?;
    let mut prompts = match &opts.prompts {
        Some(p) => load_prompts(p)?,
        None => Vec::new(),
    };
    for n in prompts.len()..script.responses.len() {
        prompts.push(format!("Step {}", n + 1));
    }
    let language = opts.language.unwrap_or_else(|| detect_language(&script.responses));

    std::fs::create_dir_all(&opts.out).map_err(|e| format!("{}: {e}", opts.out.display()))?;
    let store_root = opts.out.join("store");
    if store_root.exists() {
        std::fs::remove_dir_all(&store_root).map_err(|e| format!("{}: {e}", store_root.display()))?;
    }
    let artifact_dir = opts.out.join("artifacts");
    std::fs::create_dir_all(&artifact_dir).map_err(|e| format!("{}: {e}", artifact_dir.display()))?;
    let store = Arc::new(Store::open(&store_root).map_err(|e| e.to_string())?);
    let engine = Engine::new(store, Interpreter::new(opts.bindings.clone()));

    let llm = LlmConfig::replay(&opts.script, opts.model.clone());
    let mut interp = InterpreterConfig::new(language);
    interp.output_format = opts.format;
    interp.renderer = opts.renderer;
    let conversation = engine.create_conversation(llm, interp).map_err(|e| e.to_string())?;

    let mut steps = Vec::new();
    let mut previous: Option<Model> = None;
    for (i, prompt) in prompts.iter().take(script.responses.len()).enumerate() {
        let step = i + 1;
        let outcome = engine
            .submit_prompt(&conversation.id, prompt)
            .map_err(|e| format!("step {step}: {e}"))?;
        let analyzed = analyze_response(&outcome.llm_entry.text);
        let primary = analyzed
            .iter()
            .find(|a| a.block.language == language && a.model.is_some());
        let metrics = primary.and_then(|a| a.summary.metrics.clone());
        let model = primary.and_then(|a| a.model.clone());
        let diff = match (&previous, &model) {
            (Some(old), Some(new)) => diff_models(old, new).ok(),
            _ => None,
        };
        if model.is_some() {
            previous = model;
        }

        let mut artifacts = Vec::new();
        for entry in &outcome.interpreter_entries {
            for a in &entry.artifacts {
                let bytes = engine.store().get_artifact(&a.hash).map_err(|e| e.to_string())?;
                let path = artifact_dir.join(format!("step-{step}-block-{}.{}", a.block_index, a.format.as_str()));
                std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
                artifacts.push(ArtifactFile {
                    hash: a.hash.clone(),
                    format: a.format,
                    renderer_id: a.renderer_id.clone(),
                    block_index: a.block_index,
                    path,
                });
            }
        }
        steps.push(StepReport {
            step,
            prompt: prompt.clone(),
            blocks: outcome.llm_entry.detected_blocks.clone(),
            metrics,
            diff_from_previous: diff,
            artifacts,
            warnings: outcome.warnings,
        });
    }

    let report = ReplayReport {
        script: opts.script.clone(),
        model: opts.model.clone(),
        language,
        conversation_id: conversation.id,
        store_root,
        steps,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    let report_path = opts.out.join("report.json");
    std::fs::write(&report_path, json).map_err(|e| format!("{}: {e}", report_path.display()))?;
    Ok(report)
}
