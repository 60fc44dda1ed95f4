//! `vault`: headless client of the session API.
//!
//! Commands can be chained with a lone `+`, e.g.
//! `vault load toy.csv + run org.vault.tsne --input toy --wait + info`.
//! With `--session FILE` the session is read from and written back to a
//! project archive, so separate invocations can build on each other.

use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use vault_service::server::{self, ServiceConfig};
use vault_service::{ApiError, Session};

#[derive(Parser, Debug)]
#[command(name = "vault", version, about = "Headless visual-analytics session")]
struct Cli {
    /// Project archive holding the session between invocations.
    #[arg(long, global = true)]
    session: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Serve the session over WebSocket.
    Serve(ServeArgs),
    /// Load a CSV file, an MVBIN file or a folder of image bands.
    Load(LoadArgs),
    /// Instantiate a plugin on a dataset.
    Run(RunArgs),
    /// Save the session (`.mvproj`) or the workspace (`.mvwork`).
    Save { path: PathBuf },
    /// Open a project (`.mvproj`) or a workspace (`.mvwork`).
    Open { path: PathBuf },
    /// Print the data hierarchy.
    Info,
    /// Write a dataset to a file.
    Export(ExportArgs),
    /// Set the selection of a dataset.
    Select(SelectArgs),
    /// Print the selection of a dataset.
    Selection { dataset: String },
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    bind: IpAddr,
    /// Defaults to $VAULT_PORT, else 9743.
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    static_dir: Option<PathBuf>,
    #[arg(long, default_value_t = vault_service::protocol::DEFAULT_CHUNK_BYTES)]
    max_chunk_bytes: usize,
}

#[derive(Args, Debug)]
struct LoadArgs {
    #[arg(required_unless_present = "stack")]
    path: Option<PathBuf>,
    #[arg(long, group = "format")]
    csv: bool,
    #[arg(long, group = "format")]
    bin: bool,
    /// Read a folder of grayscale images, one band per file.
    #[arg(long, group = "format", value_name = "DIR")]
    stack: Option<PathBuf>,
    /// Keep every n-th pixel along both axes.
    #[arg(long)]
    subsample: Option<u32>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    delimiter: Option<String>,
    #[arg(long)]
    no_header: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    plugin_id: String,
    /// Dataset name or GUID; repeat for several inputs.
    #[arg(long = "input", required = true)]
    inputs: Vec<String>,
    /// Setting as `name=value`; names match loosely (`updateEvery`).
    #[arg(long = "param", value_name = "K=V")]
    params: Vec<String>,
    /// Return only when the run has finished.
    #[arg(long)]
    wait: bool,
    /// Create the instance without starting it.
    #[arg(long)]
    no_start: bool,
}

#[derive(Args, Debug)]
struct ExportArgs {
    dataset: String,
    #[arg(long, group = "target", required = true)]
    csv: Option<PathBuf>,
    #[arg(long, group = "target")]
    bin: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectArgs {
    dataset: String,
    /// Select the members of this cluster (cluster datasets only).
    #[arg(long, group = "what", required = true)]
    cluster: Option<u64>,
    /// Comma-separated item indices.
    #[arg(long, group = "what", value_delimiter = ',')]
    indices: Option<Vec<usize>>,
    #[arg(long, default_value = "replace")]
    mode: String,
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let mut segments: Vec<Vec<String>> = vec![Vec::new()];
    for a in args.into_iter().skip(1) {
        if a == "+" {
            segments.push(Vec::new());
        } else {
            segments.last_mut().unwrap().push(a);
        }
    }
    let mut parsed = Vec::new();
    for seg in segments {
        let argv = std::iter::once("vault".to_string()).chain(seg);
        match Cli::try_parse_from(argv) {
            Ok(cli) => parsed.push(cli),
            Err(e) => e.exit(),
        }
    }
    let session_file = parsed.iter().find_map(|c| c.session.clone());
    match run(parsed.into_iter().map(|c| c.command).collect(), session_file) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(commands: Vec<Command>, session_file: Option<PathBuf>) -> Result<(), ApiError> {
    let mut session = Session::new();
    session.on_push(|msg| match msg.kind.as_str() {
        "progress" => println!(
            "PROGRESS {} {}/{}",
            msg.payload["instance"].as_str().unwrap_or("?"),
            msg.payload["iteration"],
            msg.payload["total"]
        ),
        "warning" => eprintln!("warning: {}", msg.payload["message"].as_str().unwrap_or("")),
        _ => {}
    });
    if let Some(file) = session_file.as_ref().filter(|f| f.exists()) {
        report(&session.request("project.load", json!({ "path": file }))?.payload);
    }
    for command in commands {
        session = execute(session, command)?;
    }
    if let Some(file) = session_file {
        session.request("project.save", json!({ "path": file }))?;
    }
    Ok(())
}

fn execute(mut session: Session, command: Command) -> Result<Session, ApiError> {
    match command {
        Command::Serve(args) => return serve(session, args),
        Command::Load(args) => {
            let file = || args.path.clone().expect("clap requires a path");
            let (path, format) = match (&args.stack, args.csv, args.bin) {
                (Some(dir), _, _) => (dir.clone(), Some("stack")),
                (None, true, _) => (file(), Some("csv")),
                (None, _, true) => (file(), Some("bin")),
                _ => (file(), None),
            };
            let mut p = json!({ "path": path, "format": format, "name": args.name, "subsample": args.subsample });
            if let Some(d) = args.delimiter {
                p["delimiter"] = json!(d);
            }
            if args.no_header {
                p["header"] = json!(false);
            }
            let reply = session.request("data.load", p)?;
            print_instance(&reply.payload);
            if let Some(node) = reply.payload.get("dataset") {
                println!("{}", node_line(node));
            }
        }
        Command::Run(args) => {
            let mut params = Map::new();
            for kv in &args.params {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| ApiError(format!("parameter `{kv}` is not name=value")))?;
                params.insert(k.trim().to_string(), Value::String(v.trim().to_string()));
            }
            let reply = session.request(
                "plugin.instantiate",
                json!({
                    "pluginId": args.plugin_id,
                    "inputs": args.inputs,
                    "params": params,
                    "start": !args.no_start,
                    "wait": args.wait,
                }),
            )?;
            print_instance(&reply.payload);
        }
        Command::Save { path } => {
            let kind = if is_workspace(&path) { "workspace.save" } else { "project.save" };
            session.request(kind, json!({ "path": path }))?;
            println!("SAVED {}", path.display());
        }
        Command::Open { path } => {
            let kind = if is_workspace(&path) { "workspace.load" } else { "project.load" };
            report(&session.request(kind, json!({ "path": path }))?.payload);
        }
        Command::Info => {
            let reply = session.request("hierarchy.list", Value::Null)?;
            print_hierarchy(&reply.payload);
        }
        Command::Export(args) => {
            let path = args.csv.or(args.bin).expect("clap requires a target");
            session.request("data.export", json!({ "dataset": args.dataset, "path": path }))?;
            println!("EXPORTED {}", path.display());
        }
        Command::Select(args) => {
            let reply = session.request(
                "selection.set",
                json!({
                    "dataset": args.dataset,
                    "cluster": args.cluster,
                    "indices": args.indices,
                    "mode": args.mode,
                }),
            )?;
            println!("SELECTED {} {}", reply.payload["dataset"].as_str().unwrap_or("?"), reply.payload["count"]);
        }
        Command::Selection { dataset } => {
            let reply = session.request("selection.get", json!({ "dataset": dataset }))?;
            let indices = reply.payload["indices"].as_array().cloned().unwrap_or_default();
            let list: Vec<String> = indices.iter().map(Value::to_string).collect();
            println!("SELECTION {} {}", list.len(), list.join(","));
        }
    }
    Ok(session)
}

fn is_workspace(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "mvwork")
}

fn report(payload: &Value) {
    for key in ["skipped", "warnings"] {
        for item in payload[key].as_array().into_iter().flatten() {
            eprintln!("warning: {key}: {item}");
        }
    }
    for id in payload["unbound"].as_array().into_iter().flatten() {
        eprintln!("warning: instance {} is unbound", id.as_str().unwrap_or("?"));
    }
}

fn print_instance(p: &Value) {
    println!(
        "INSTANCE {} {} {}",
        p["id"].as_str().unwrap_or("?"),
        p["pluginId"].as_str().unwrap_or("?"),
        p["state"].as_str().unwrap_or("?")
    );
    if let Some(out) = p["output"].as_str() {
        println!("OUTPUT {out}");
    }
}

fn node_line(n: &Value) -> String {
    let shape = match (n["items"].as_u64(), n["dims"].as_u64()) {
        (Some(items), Some(dims)) => format!("{items}x{dims}"),
        (Some(items), None) => format!("{items}"),
        _ => "-".into(),
    };
    let mut extra = String::new();
    if let Some(img) = n.get("image") {
        extra = format!(" image {}x{}", img["width"], img["height"]);
    }
    if let Some(c) = n["clusters"].as_array() {
        extra = format!(" clusters {}", c.len());
    }
    if n["subset"].as_bool() == Some(true) {
        extra.push_str(" subset");
    }
    format!(
        "{}  {} {}{}  {}",
        n["name"].as_str().unwrap_or("?"),
        n["kind"].as_str().unwrap_or("?"),
        shape,
        extra,
        n["id"].as_str().unwrap_or("?")
    )
}

fn print_hierarchy(payload: &Value) {
    let nodes = payload["nodes"].as_array().cloned().unwrap_or_default();
    println!("HIERARCHY {}", nodes.len());
    fn walk(nodes: &[Value], id: &str, depth: usize) {
        let Some(n) = nodes.iter().find(|n| n["id"] == id) else { return };
        println!("{}{}", "  ".repeat(depth), node_line(n));
        for c in n["children"].as_array().into_iter().flatten() {
            walk(nodes, c.as_str().unwrap_or(""), depth + 1);
        }
    }
    for root in nodes.iter().filter(|n| n["parent"].is_null()) {
        walk(&nodes, root["id"].as_str().unwrap_or(""), 0);
    }
}

fn serve(session: Session, args: ServeArgs) -> Result<Session, ApiError> {
    let mut config = ServiceConfig::from_env().map_err(ApiError)?;
    config.bind_address = args.bind;
    if let Some(port) = args.port {
        config.port = port;
    }
    config.static_dir = args.static_dir;
    config.max_chunk_bytes = args.max_chunk_bytes;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| ApiError(e.to_string()))?;
    runtime.block_on(async move {
        let mut handle = server::start(config, session)
            .await
            .map_err(|e| ApiError(format!("cannot serve: {e}")))?;
        println!("LISTENING {}", handle.ws_url());
        tokio::select! {
            r = handle.wait() => r.map_err(|e| ApiError(e.to_string()))?,
            _ = tokio::signal::ctrl_c() => {}
        }
        handle
            .shutdown()
            .await
            .ok_or_else(|| ApiError("the session thread failed".into()))
    })
}
