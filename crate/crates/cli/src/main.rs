use std::fs::File;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dabxml_core::broadcast::{inspect_stream, load_scenario, run_broadcast};
use dabxml_server::{InputSource, ServerConfig, ServerHandle, StartOptions};

#[derive(Parser)]
#[command(name = "dabxml", version, about = "XML over DAB: broadcaster, stream inspector and receiver server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Emit the frame stream for a scenario file.
    Broadcast {
        #[arg(long)]
        scenario: PathBuf,
        /// A file path, `-` for stdout, or `tcp:<host>:<port>`.
        #[arg(long)]
        out: String,
        #[arg(long)]
        pad_capacity: Option<usize>,
        #[arg(long)]
        segment_size: Option<usize>,
        /// Pace output to this many frames per second.
        #[arg(long)]
        fps: Option<f64>,
    },
    /// Describe the frames, data groups and MOT objects in a stream.
    Inspect {
        /// A file path or `-` for stdin.
        #[arg(long = "in")]
        input: String,
    },
    /// Run the receiver server.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        http_addr: Option<SocketAddr>,
        /// Shorthand for changing only the HTTP port.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        watched_subchannel: Option<u8>,
        /// `none`, `file:<path>` or `tcp:<addr>`.
        #[arg(long)]
        input: Option<InputSource>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        pad_capacity: Option<usize>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let one_line: Vec<&str> = e.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("dabxml: {}", one_line.join(" "));
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<(), String> {
    match command {
        Command::Broadcast { scenario, out, pad_capacity, segment_size, fps } => {
            let mut scenario = load_scenario(&scenario).map_err(|e| e.to_string())?;
            if let Some(cap) = pad_capacity {
                scenario.pad_capacity = cap;
            }
            if let Some(size) = segment_size {
                scenario.segment_size = size;
            }
            let mut sink: Box<dyn Write> = match out.strip_prefix("tcp:") {
                Some(addr) => Box::new(TcpStream::connect(addr).map_err(|e| format!("cannot connect to {addr}: {e}"))?),
                None if out == "-" => Box::new(io::stdout().lock()),
                None => Box::new(File::create(&out).map_err(|e| format!("cannot create {out}: {e}"))?),
            };
            let summary = run_broadcast(&scenario, &mut sink, fps).map_err(|e| e.to_string())?;
            eprintln!("{} frames, {} messages, {} bytes", summary.frames, summary.messages, summary.bytes);
            Ok(())
        }
        Command::Inspect { input } => {
            let source: Box<dyn Read> = match input.as_str() {
                "-" => Box::new(io::stdin().lock()),
                path => Box::new(io::BufReader::new(File::open(path).map_err(|e| format!("cannot open {path}: {e}"))?)),
            };
            let report = inspect_stream(source).to_string();
            match io::stdout().lock().write_all(report.as_bytes()) {
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.to_string()),
                _ => Ok(()),
            }
        }
        Command::Serve { config, http_addr, port, watched_subchannel, input, output_dir, pad_capacity } => {
            let mut config = ServerConfig::load(&config).map_err(|e| e.to_string())?;
            if let Some(addr) = http_addr {
                config.http_addr = addr;
            }
            if let Some(port) = port {
                config.http_addr.set_port(port);
            }
            if let Some(sub) = watched_subchannel {
                config.watched_subchannel = sub;
            }
            if let Some(input) = input {
                config.input = input;
            }
            if let Some(dir) = output_dir {
                config.output_dir = dir;
            }
            if pad_capacity.is_some() {
                config.pad_capacity = pad_capacity;
            }
            let handle = ServerHandle::start(config, StartOptions::default()).map_err(|e| e.to_string())?;
            if let Some(addr) = handle.http_addr() {
                eprintln!("listening on http://{addr}");
            }
            if let Some(addr) = handle.broadcast_addr() {
                eprintln!("accepting broadcast streams on tcp:{addr}");
            }
            handle.wait();
            Ok(())
        }
    }
}
