//! `mobisynth` command-line driver.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use mobisynth::evaluation::{extract_features, holdout_accuracy, summarize_samples, FeatureVector};
use mobisynth::export::{read_track, to_csv, to_geojson, to_gpx, Format, TrackFile};
use mobisynth::identity::{build_identity, IdentityConfig};
use mobisynth::kinematics::Fix;
use mobisynth::obfuscation::{fudge, FudgerState};
use mobisynth::pipeline::{is_weekend, synthesize_day, PipelineConfig, PipelineError, SegmentKind};
use mobisynth::scheduler::SchedulerError;
use mobisynth::traffic::{DiskCache, OfflineProvider, RemoteConfig, RemoteProvider, SystemClock, TrafficProvider, UreqTransport};
use mobisynth::{parse_extract, Extract};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const EXIT_INPUT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_PROVIDER: u8 = 4;

struct Failure {
    code: u8,
    message: String,
}

fn input_error(msg: impl Display) -> Failure {
    Failure { code: EXIT_INPUT, message: msg.to_string() }
}

type CliResult<T> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "mobisynth", version, about = "Synthetic driving trajectories from probabilistic mobility identities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProviderKind {
    Offline,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Parse an OSM extract into a POI and road-graph snapshot.
    Ingest {
        extract: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Synthesize one day for an identity.
    Synth {
        #[arg(long)]
        identity: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value = "offline")]
        provider: ProviderKind,
        /// OSM extract or snapshot; overrides the identity file's `extract`.
        #[arg(long)]
        extract: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "geojson,gpx,csv")]
        formats: Vec<String>,
        /// Directory for cached directions responses (remote provider only).
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare two trajectory sets: pooled |a| statistics and k-NN held-out accuracy.
    Eval {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synthetic: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Rewrite every fix of a trajectory through the location fudger.
    Fudge {
        #[arg(long)]
        grid: f64,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest { extract, output } => ingest(&extract, &output),
        Command::Synth { identity, date, seed, provider, extract, formats, cache, output } => {
            synth(&identity, date, seed, provider, extract.as_deref(), &formats, cache.as_deref(), &output)
        }
        Command::Eval { real, synthetic, k, iterations, test_fraction, seed } => {
            eval(&real, &synthetic, k, iterations, test_fraction, seed)
        }
        Command::Fudge { grid, input, output, seed } => fudge_track(grid, &input, &output, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => input_error(format!("{}: no such file", path.display())),
        _ => input_error(format!("{}: {e}", path.display())),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads an `.osm` extract or a JSON snapshot written by `ingest`.
fn load_extract(path: &Path) -> CliResult<(Extract, String)> {
    let bytes = read_bytes(path)?;
    let digest = sha256_hex(&bytes);
    let is_osm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("osm") || e.eq_ignore_ascii_case("xml"));
    let extract = if is_osm {
        parse_extract(&bytes).map_err(|e| input_error(format!("{}: {e}", path.display())))?
    } else {
        serde_json::from_slice(&bytes).map_err(|e| input_error(format!("{}: not a snapshot: {e}", path.display())))?
    };
    Ok((extract, digest))
}

fn ingest(extract: &Path, output: &Path) -> CliResult<()> {
    let bytes = read_bytes(extract)?;
    let parsed = parse_extract(&bytes).map_err(|e| input_error(format!("{}: {e}", extract.display())))?;
    let mut json = serde_json::to_vec(&parsed).expect("snapshot serializes");
    json.push(b'\n');
    write_file(output, &json)?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "pois {} vertices {} edges {} stop_nodes {}",
        parsed.pois.len(),
        parsed.graph.vertices().len(),
        parsed.graph.edges().len(),
        parsed.graph.stop_nodes().len()
    );
    Ok(())
}

/// Identity file: which extract to use, the identity seed and optional
/// templates for weekdays and weekends.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdentityFile {
    #[serde(default)]
    extract: Option<PathBuf>,
    seed: u64,
    #[serde(default)]
    weekday: Option<IdentityConfig>,
    #[serde(default)]
    weekend: Option<IdentityConfig>,
    #[serde(default)]
    pipeline: Option<PipelineConfig>,
}

#[derive(Serialize)]
struct InputRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    identity: InputRecord,
    extract: InputRecord,
    date: NaiveDate,
    weekend: bool,
    seed: u64,
    identity_seed: u64,
    provider: &'static str,
    config: PipelineConfig,
    outputs: Vec<InputRecord>,
    drives: usize,
    fixes: usize,
}

fn parse_formats(names: &[String]) -> CliResult<Vec<Format>> {
    let mut out = Vec::new();
    for n in names {
        let f = Format::from_extension(n.trim()).ok_or_else(|| input_error(format!("unknown format {n:?}")))?;
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err(input_error("no output formats requested"));
    }
    Ok(out)
}

fn pipeline_failure(e: PipelineError) -> Failure {
    let code = match &e {
        PipelineError::Traffic { .. } | PipelineError::Schedule(SchedulerError::Traffic { .. }) => EXIT_PROVIDER,
        PipelineError::Config(_) | PipelineError::Routing { .. } | PipelineError::Schedule(SchedulerError::Routing { .. }) => EXIT_INPUT,
        _ => EXIT_INFEASIBLE,
    };
    Failure { code, message: e.to_string() }
}

#[allow(clippy::too_many_arguments)]
fn synth(
    identity_path: &Path,
    date: NaiveDate,
    seed: u64,
    provider_kind: ProviderKind,
    extract_override: Option<&Path>,
    formats: &[String],
    cache: Option<&Path>,
    output: &Path,
) -> CliResult<()> {
    let formats = parse_formats(formats)?;
    let id_bytes = read_bytes(identity_path)?;
    let id_file: IdentityFile =
        serde_json::from_slice(&id_bytes).map_err(|e| input_error(format!("{}: {e}", identity_path.display())))?;
    let extract_path = match (extract_override, &id_file.extract) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) if p.is_relative() => identity_path.parent().unwrap_or(Path::new(".")).join(p),
        (None, Some(p)) => p.clone(),
        (None, None) => return Err(input_error("no extract given in the identity file or with --extract")),
    };
    let (extract, extract_digest) = load_extract(&extract_path)?;

    let weekend = is_weekend(date);
    let template = if weekend {
        id_file.weekend.clone().unwrap_or_else(IdentityConfig::weekend)
    } else {
        id_file.weekday.clone().unwrap_or_else(IdentityConfig::weekday)
    };
    let identity = build_identity(&extract.pois, &template, id_file.seed).map_err(|e| input_error(format!("identity: {e}")))?;
    let cfg = id_file.pipeline.clone().unwrap_or_default();

    let offline = OfflineProvider::new(&extract.graph);
    let remote;
    let provider: &dyn TrafficProvider = match provider_kind {
        ProviderKind::Offline => &offline,
        ProviderKind::Remote => {
            let now = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64);
            let config = RemoteConfig::from_env(now).map_err(|e| Failure { code: EXIT_PROVIDER, message: e.to_string() })?;
            let cache = match cache {
                Some(dir) => Some(DiskCache::new(dir).map_err(|e| input_error(e.to_string()))?),
                None => None,
            };
            remote = RemoteProvider::new(config, Box::new(UreqTransport::default()), Arc::new(SystemClock::default()), cache);
            &remote
        }
    };

    let traj = synthesize_day(&identity, date, &extract.graph, provider, &cfg, seed).map_err(pipeline_failure)?;

    fs::create_dir_all(output).map_err(|e| input_error(format!("{}: {e}", output.display())))?;
    let track = TrackFile::from(&traj);
    let mut outputs = Vec::new();
    for f in &formats {
        let name = format!("trajectory.{}", f.extension());
        let body = match f {
            Format::Geojson => to_geojson(&track),
            Format::Gpx => to_gpx(&track, &format!("{date} seed {seed}")),
            Format::Csv => to_csv(&track.fixes).map_err(|e| input_error(e.to_string()))?,
        };
        write_file(&output.join(&name), body.as_bytes())?;
        outputs.push(InputRecord { path: name, sha256: sha256_hex(body.as_bytes()) });
    }
    let manifest = Manifest {
        tool: "mobisynth",
        version: env!("CARGO_PKG_VERSION"),
        command: "synth",
        identity: InputRecord { path: identity_path.display().to_string(), sha256: sha256_hex(&id_bytes) },
        extract: InputRecord { path: extract_path.display().to_string(), sha256: extract_digest },
        date,
        weekend,
        seed,
        identity_seed: id_file.seed,
        provider: match provider_kind {
            ProviderKind::Offline => "offline",
            ProviderKind::Remote => "remote",
        },
        config: cfg,
        outputs,
        drives: traj.drives().count(),
        fixes: traj.fixes.len(),
    };
    let mut body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    body.push(b'\n');
    write_file(&output.join("manifest.json"), &body)?;
    println!("{} fixes, {} drives, {} visits -> {}", traj.fixes.len(), manifest.drives, traj.visits.len(), output.display());
    Ok(())
}

/// Drive segments of every trajectory file in `dir`; a file without span
/// annotations counts as one route.
fn load_routes(dir: &Path) -> CliResult<Vec<Vec<Fix>>> {
    let entries = fs::read_dir(dir).map_err(|e| input_error(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| matches!(e, "geojson" | "csv")))
        .collect();
    paths.sort();
    let mut routes = Vec::new();
    for p in &paths {
        let track = read_track(p).map_err(|e| input_error(e.to_string()))?;
        match &track.segments {
            Some(segs) => {
                for s in segs.iter().filter(|s| s.kind == SegmentKind::Drive && s.end - s.start >= 2) {
                    routes.push(track.fixes[s.start..s.end].to_vec());
                }
            }
            None => routes.push(track.fixes),
        }
    }
    if routes.is_empty() {
        return Err(input_error(format!("{}: no routes found", dir.display())));
    }
    Ok(routes)
}

fn eval(real: &Path, synthetic: &Path, k: usize, iterations: usize, test_fraction: f64, seed: u64) -> CliResult<()> {
    let sets = [("real", load_routes(real)?), ("synthetic", load_routes(synthetic)?)];
    let mut labelled: Vec<(FeatureVector, usize)> = Vec::new();
    for (label, (name, routes)) in sets.iter().enumerate() {
        // drive entry fixes carry no acceleration sample
        let samples: Vec<f64> = routes.iter().flat_map(|r| r[1..].iter().map(|f| f.accel)).filter(|a| a.is_finite()).collect();
        let s = summarize_samples(&samples).map_err(|e| input_error(format!("{name}: {e}")))?;
        println!("{name}: routes {} samples {} mean {:.4} median {:.4} std {:.4}", routes.len(), s.samples, s.mean, s.median, s.std);
        for r in routes {
            labelled.push((extract_features(r).map_err(|e| input_error(format!("{name}: {e}")))?, label));
        }
    }
    let acc = holdout_accuracy(&labelled, k, test_fraction, iterations, seed).map_err(|e| input_error(e.to_string()))?;
    println!("knn k={k} held-out accuracy {acc:.4} over {iterations} splits");
    Ok(())
}

fn fudge_track(grid: f64, input: &Path, output: &Path, seed: u64) -> CliResult<()> {
    if !(grid > 0.0 && grid.is_finite()) {
        return Err(input_error(format!("grid must be positive, got {grid}")));
    }
    if !input.exists() {
        return Err(input_error(format!("{}: no such file", input.display())));
    }
    let track = read_track(input).map_err(|e| input_error(e.to_string()))?;
    let out_format = output
        .extension()
        .and_then(|e| e.to_str())
        .and_then(Format::from_extension)
        .ok_or_else(|| input_error(format!("{}: output must end in .geojson, .gpx or .csv", output.display())))?;
    let mut state: Option<FudgerState> = None;
    let fixes: Vec<Fix> = track
        .fixes
        .iter()
        .map(|f| {
            let now = f.t.floor() as i64;
            let s = *state.get_or_insert_with(|| FudgerState::new(grid, seed, now));
            let s = mobisynth::obfuscation::roll_offset(&s, now);
            state = Some(s);
            Fix { point: fudge(&f.point, &s, now), ..*f }
        })
        .collect();
    let out = TrackFile { fixes, segments: track.segments };
    let body = match out_format {
        Format::Geojson => to_geojson(&out),
        Format::Gpx => to_gpx(&out, "fudged"),
        Format::Csv => to_csv(&out.fixes).map_err(|e| input_error(e.to_string()))?,
    };
    write_file(output, body.as_bytes())?;
    println!("{} fixes fudged onto the {grid} m grid", out.fixes.len());
    Ok(())
}
