//! Command-line definitions and their implementations. Every subcommand
//! accepts `--json` for machine-readable output.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmi_core::gateway::{BackendKind, LlmConfig, ModelDescriptor};
use cmi_core::interpreter::{
    render_fallback, Interpreter, InterpreterConfig, OutputFormat, RenderError, RendererKind, BUILTIN_RENDERER_ID,
    DEFAULT_TIMEOUT_MS, MIN_TIMEOUT_MS,
};
use cmi_core::syntax::{extract_blocks, parse_model, Language};
use cmi_core::{Engine, Store};
use serde_json::json;

use crate::api::{self, AppState};
use crate::replay::{run_replay, ReplayOptions};
use crate::service_config::ServiceConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
/// `render` only: the source was valid but no renderer produced output.
pub const EXIT_RENDER_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cmi", version, about = "Conversational conceptual-model interpreter")]
pub struct Cli {
    /// Machine-readable JSON output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Service configuration file (renderer bindings, backend descriptors).
    #[arg(long, global = true, env = "CMI_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Start the HTTP service.
    Serve {
        #[arg(long, env = "CMI_ROOT", default_value = "cmi-data")]
        root: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Detect, validate and render one model file ("-" reads stdin).
    Render(RenderArgs),
    /// Send one prompt through the full pipeline.
    Prompt(PromptArgs),
    /// Run a scripted session and write an evaluation report.
    Replay(ReplayArgs),
    /// Scan the store for dangling references and corrupt data.
    CheckStore {
        #[arg(long, env = "CMI_ROOT", default_value = "cmi-data")]
        root: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LangArg {
    Plantuml,
    Graphviz,
}

impl From<LangArg> for Language {
    fn from(l: LangArg) -> Self {
        match l {
            LangArg::Plantuml => Language::Plantuml,
            LangArg::Graphviz => Language::Graphviz,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Svg,
    Png,
    Txt,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Svg => OutputFormat::Svg,
            FormatArg::Png => OutputFormat::Png,
            FormatArg::Txt => OutputFormat::Txt,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RendererArg {
    ExternalProcess,
    HttpRenderer,
    BuiltinFallback,
}

impl From<RendererArg> for RendererKind {
    fn from(r: RendererArg) -> Self {
        match r {
            RendererArg::ExternalProcess => RendererKind::ExternalProcess,
            RendererArg::HttpRenderer => RendererKind::HttpRenderer,
            RendererArg::BuiltinFallback => RendererKind::BuiltinFallback,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    RemoteChat,
    RemoteReplicate,
    Local,
    Replay,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::RemoteChat => BackendKind::RemoteChatApi,
            BackendArg::RemoteReplicate => BackendKind::RemoteReplicateStyle,
            BackendArg::Local => BackendKind::LocalProcess,
            BackendArg::Replay => BackendKind::Replay,
        }
    }
}

fn timeout_ms(s: &str) -> Result<u64, String> {
    let v: u64 = s.parse().map_err(|e| format!("{e}"))?;
    if v < MIN_TIMEOUT_MS {
        return Err(format!("must be at least {MIN_TIMEOUT_MS}"));
    }
    Ok(v)
}

#[derive(Debug, Args)]
pub struct InterpreterArgs {
    /// Modeling language; detected from the input when omitted.
    #[arg(long, value_enum)]
    pub lang: Option<LangArg>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long, value_enum)]
    pub renderer: Option<RendererArg>,
    /// Graphviz layout engine (dot, neato, fdp, ...).
    #[arg(long)]
    pub layout: Option<String>,
    #[arg(long, value_parser = timeout_ms)]
    pub timeout_ms: Option<u64>,
    /// Fail instead of falling back to the builtin renderer.
    #[arg(long)]
    pub strict: bool,
}

impl InterpreterArgs {
    fn config(
        &self,
        language: Language,
        default_format: OutputFormat,
        default_renderer: RendererKind,
    ) -> InterpreterConfig {
        let mut c = InterpreterConfig::new(language);
        c.output_format = self.format.map_or(default_format, Into::into);
        c.renderer = self.renderer.map_or(default_renderer, Into::into);
        c.layout_engine = self.layout.clone();
        c.timeout_ms = self.timeout_ms.unwrap_or(DEFAULT_TIMEOUT_MS);
        c.strict = self.strict;
        c
    }

    fn given(&self) -> bool {
        self.lang.is_some()
            || self.format.is_some()
            || self.renderer.is_some()
            || self.layout.is_some()
            || self.timeout_ms.is_some()
            || self.strict
    }
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[command(flatten)]
    pub interp: InterpreterArgs,
    /// Write the artifact here instead of standard output.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    /// Model name; known names get their context window.
    #[arg(long)]
    pub model: Option<String>,
    /// Replay script (JSON array of responses).
    #[arg(long)]
    pub script: Option<PathBuf>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API secret.
    #[arg(long)]
    pub credential_ref: Option<String>,
    #[arg(long)]
    pub model_path: Option<PathBuf>,
    #[arg(long)]
    pub local_command: Option<String>,
    #[arg(long)]
    pub system_prompt: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub top_k: Option<u32>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl BackendArgs {
    fn given(&self) -> bool {
        self.backend.is_some()
            || self.model.is_some()
            || self.script.is_some()
            || self.endpoint.is_some()
            || self.credential_ref.is_some()
            || self.model_path.is_some()
            || self.local_command.is_some()
            || self.system_prompt.is_some()
            || self.temperature.is_some()
            || self.top_p.is_some()
            || self.top_k.is_some()
            || self.max_tokens.is_some()
            || self.seed.is_some()
    }

    /// `base` with every given flag applied; a fresh replay configuration
    /// when there is no base.
    fn apply(&self, base: Option<LlmConfig>) -> LlmConfig {
        let mut c = base.unwrap_or_else(|| LlmConfig::replay("", ModelDescriptor::gpt4()));
        if let Some(b) = self.backend {
            c.backend = b.into();
        }
        if let Some(m) = &self.model {
            c.model = ModelDescriptor::for_name(m);
        }
        if let Some(v) = &self.script {
            c.script_path = Some(v.clone());
        }
        if let Some(v) = &self.endpoint {
            c.endpoint_url = Some(v.clone());
        }
        if let Some(v) = &self.credential_ref {
            c.credential_ref = Some(v.clone());
        }
        if let Some(v) = &self.model_path {
            c.local_model_path = Some(v.clone());
        }
        if let Some(v) = &self.local_command {
            c.local_command = Some(v.clone());
        }
        if let Some(v) = &self.system_prompt {
            c.system_prompt = Some(v.clone());
        }
        if let Some(v) = self.temperature {
            c.sampling.temperature = v;
        }
        if let Some(v) = self.top_p {
            c.sampling.top_p = v;
        }
        if let Some(v) = self.top_k {
            c.sampling.top_k = v;
        }
        if let Some(v) = self.max_tokens {
            c.sampling.max_response_tokens = v;
        }
        if self.seed.is_some() {
            c.sampling.seed = self.seed;
        }
        if c.script_path.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            c.script_path = None;
        }
        c
    }
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long, env = "CMI_ROOT", default_value = "cmi-data")]
    pub root: PathBuf,
    /// Existing conversation; a new one is created when omitted.
    #[arg(long)]
    pub conversation: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub interp: InterpreterArgs,
    pub text: String,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub script: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON array of the user prompts, one per scripted response.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value = "gpt-4")]
    pub model: String,
    #[command(flatten)]
    pub interp: InterpreterArgs,
}

/// Parse arguments from the process and run.
pub fn main_exit_code() -> i32 {
    run(Cli::parse())
}

pub fn run(cli: Cli) -> i32 {
    let config = match ServiceConfig::load_or_default(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => return fail(cli.json, "config_invalid", &e),
    };
    match cli.command {
        Command::Serve { root, port, host } => serve(&root, &host, port, config, cli.json),
        Command::Render(args) => render(&args, &config, cli.json),
        Command::Prompt(args) => prompt(&args, &config, cli.json),
        Command::Replay(args) => replay(&args, &config, cli.json),
        Command::CheckStore { root } => check_store(&root, cli.json),
    }
}

fn fail(json: bool, code: &str, message: &str) -> i32 {
    if json {
        println!("{}", json!({ "ok": false, "code": code, "message": message }));
    }
    eprintln!("error: {message}");
    EXIT_FAILURE
}

fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("json values serialize")
    );
}

fn serve(root: &Path, host: &str, port: u16, config: ServiceConfig, json: bool) -> i32 {
    let store = match Store::open(root) {
        Ok(s) => Arc::new(s),
        Err(e) => return fail(json, e.code(), &e.to_string()),
    };
    let engine = Arc::new(Engine::new(store, Interpreter::new(config.renderers.clone())));
    let state = AppState {
        engine,
        config: Arc::new(config),
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => return fail(json, "io_error", &e.to_string()),
    };
    runtime.block_on(async {
        let listener = match tokio::net::TcpListener::bind((host, port)).await {
            Ok(l) => l,
            Err(e) => return fail(json, "io_error", &format!("cannot bind {host}:{port}: {e}")),
        };
        let addr = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
        if json {
            println!("{}", json!({ "listening": addr, "root": root }));
        } else {
            println!("listening on http://{addr} (store {})", root.display());
        }
        let _ = std::io::stdout().flush();
        match api::serve(listener, api::router(state)).await {
            Ok(()) => EXIT_OK,
            Err(e) => fail(json, "io_error", &e.to_string()),
        }
    })
}

fn read_input(path: &Path) -> std::io::Result<String> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        std::fs::read_to_string(path)
    }
}

fn render(args: &RenderArgs, config: &ServiceConfig, json: bool) -> i32 {
    let text = match read_input(&args.file) {
        Ok(t) => t,
        Err(e) => return fail(json, "io_error", &format!("{}: {e}", args.file.display())),
    };
    // Markdown-ish input: render the first block of the wanted language.
    let blocks = extract_blocks(&text);
    let language = args
        .interp
        .lang
        .map(Language::from)
        .or_else(|| blocks.iter().map(|b| b.language).find(Language::is_supported));
    let Some(language) = language else {
        return fail(
            json,
            "validation",
            "no supported modeling language detected; pass --lang",
        );
    };
    let source = if text.contains("```") {
        blocks
            .iter()
            .find(|b| b.language == language)
            .map_or(text.clone(), |b| b.raw.clone())
    } else {
        text.clone()
    };

    let parsed = match parse_model(language, &source) {
        Ok(p) => p,
        Err(report) => {
            for d in &report.diagnostics {
                eprintln!("{}:{d}", args.file.display());
            }
            if json {
                print_json(
                    &json!({ "ok": false, "stage": "validation", "language": language, "diagnostics": report.diagnostics }),
                );
            }
            return EXIT_FAILURE;
        }
    };
    for d in &parsed.report.diagnostics {
        eprintln!("{}:{d}", args.file.display());
    }

    let interp_config = args
        .interp
        .config(language, OutputFormat::Svg, RendererKind::ExternalProcess);
    let interpreter = Interpreter::new(config.renderers.clone());
    let mut warnings = Vec::new();
    let artifact = match interpreter.render(&interp_config, &source) {
        Ok(a) => a,
        Err(e @ (RenderError::RendererUnavailable(_) | RenderError::UnsupportedFormat { .. }))
            if !interp_config.strict =>
        {
            warnings.push(format!("{e}; used {BUILTIN_RENDERER_ID} instead"));
            render_fallback(&parsed.model)
        }
        Err(e) => {
            eprintln!("error: {e}");
            if json {
                print_json(&json!({ "ok": false, "stage": "render", "code": e.code(), "message": e.to_string() }));
            }
            return EXIT_RENDER_FAILED;
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &args.out {
        if let Err(e) = std::fs::write(out, &artifact.bytes) {
            eprintln!("error: {}: {e}", out.display());
            return EXIT_RENDER_FAILED;
        }
    }
    if json {
        print_json(&json!({
            "ok": true,
            "language": language,
            "artifact": artifact,
            "size": artifact.bytes.len(),
            "path": args.out,
            "diagnostics": parsed.report.diagnostics,
            "warnings": warnings,
        }));
    } else if args.out.is_none() {
        let mut stdout = std::io::stdout();
        let _ = stdout.write_all(&artifact.bytes);
        let _ = stdout.flush();
    } else {
        println!(
            "{} ({}, {})",
            artifact.content_hash, artifact.format, artifact.renderer_id
        );
    }
    EXIT_OK
}

fn prompt(args: &PromptArgs, config: &ServiceConfig, json: bool) -> i32 {
    let store = match Store::open(&args.root) {
        Ok(s) => Arc::new(s),
        Err(e) => return fail(json, e.code(), &e.to_string()),
    };
    let engine = Engine::new(store.clone(), Interpreter::new(config.renderers.clone()));
    let id = match &args.conversation {
        Some(id) => {
            let current = match engine.get_conversation(id) {
                Ok(c) => c,
                Err(e) => return fail(json, e.code(), &e.to_string()),
            };
            let llm = args
                .backend
                .given()
                .then(|| args.backend.apply(Some(current.llm_config.clone())));
            let interp = args.interp.given().then(|| {
                let lang = args.interp.lang.map_or(current.interpreter_config.language, Into::into);
                let base = &current.interpreter_config;
                let mut c = args.interp.config(lang, base.output_format, base.renderer);
                if args.interp.layout.is_none() {
                    c.layout_engine = base.layout_engine.clone();
                }
                if args.interp.timeout_ms.is_none() {
                    c.timeout_ms = base.timeout_ms;
                }
                c
            });
            if llm.is_some() || interp.is_some() {
                if let Err(e) = engine.reconfigure(id, llm, interp) {
                    return fail(json, e.code(), &e.to_string());
                }
            }
            id.clone()
        }
        None => {
            let llm = args.backend.apply(None);
            let lang = args.interp.lang.map_or(Language::Plantuml, Into::into);
            let interp = args
                .interp
                .config(lang, OutputFormat::Svg, RendererKind::ExternalProcess);
            match engine.create_conversation(llm, interp) {
                Ok(c) => c.id,
                Err(e) => return fail(json, e.code(), &e.to_string()),
            }
        }
    };
    let outcome = match engine.submit_prompt(&id, &args.text) {
        Ok(o) => o,
        Err(e) => return fail(json, e.code(), &e.to_string()),
    };
    let paths: Vec<PathBuf> = outcome
        .interpreter_entries
        .iter()
        .flat_map(|e| &e.artifacts)
        .map(|a| store.artifact_path(&a.hash))
        .collect();
    if json {
        print_json(&json!({ "ok": true, "conversation_id": id, "outcome": outcome, "artifact_paths": paths }));
    } else {
        println!("conversation {id}");
        println!("{}", outcome.llm_entry.text.trim_end());
        for e in &outcome.interpreter_entries {
            if e.artifacts.is_empty() {
                println!("interpreter: {}", e.text.trim_end());
            }
        }
        for p in &paths {
            println!("artifact: {}", p.display());
        }
        for w in &outcome.warnings {
            eprintln!("warning: {w}");
        }
    }
    EXIT_OK
}

fn replay(args: &ReplayArgs, config: &ServiceConfig, json: bool) -> i32 {
    let mut opts = ReplayOptions::new(&args.script, &args.out);
    opts.prompts = args.prompts.clone();
    opts.model = ModelDescriptor::for_name(&args.model);
    opts.language = args.interp.lang.map(Into::into);
    if let Some(f) = args.interp.format {
        opts.format = f.into();
    }
    if let Some(r) = args.interp.renderer {
        opts.renderer = r.into();
    }
    opts.bindings = config.renderers.clone();
    match run_replay(&opts) {
        Ok(report) => {
            if json {
                print_json(&serde_json::to_value(&report).expect("report serializes"));
            } else {
                print!("{}", report.summary());
                println!("report: {}", args.out.join("report.json").display());
            }
            EXIT_OK
        }
        Err(e) => fail(json, "replay_failed", &e),
    }
}

fn check_store(root: &Path, json: bool) -> i32 {
    if !root.is_dir() {
        return fail(json, "not_found", &format!("{} is not a directory", root.display()));
    }
    let result = Store::open(root).and_then(|s| s.check_store());
    match result {
        Ok(check) => {
            if json {
                print_json(&json!({ "ok": check.is_ok(), "check": check }));
            } else {
                println!(
                    "{} conversation(s), {} entr(ies), {} artifact(s)",
                    check.conversations, check.entries, check.artifacts
                );
                for d in &check.dangling {
                    println!("dangling: {} seq {} -> {}", d.conversation, d.seq, d.hash);
                }
                for b in &check.corrupt_blobs {
                    println!("corrupt blob: {b}");
                }
                for w in &check.log_warnings {
                    println!("log: {w}");
                }
                for m in &check.index_mismatches {
                    println!("index: {m}");
                }
                println!("{}", if check.is_ok() { "ok" } else { "problems found" });
            }
            if check.is_ok() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
        Err(e) => fail(json, e.code(), &e.to_string()),
    }
}
