use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use trajaudit::config::PipelineConfig;
use trajaudit::format::{read_json, read_jsonl, write_json, write_jsonl};
use trajaudit::ingest::{load_detections, load_ground_truth, save_detections, save_ground_truth, LoadMode};
use trajaudit::miner::{self, EventRecord, NearMissEvent};
use trajaudit::qa::{OpenMode, QaStore};
use trajaudit::refine::{self, Branch};
use trajaudit::scenario::{generate_scenario, presets, ScenarioSpec};
use trajaudit::stabilize;
use trajaudit::tracker::{self, Track, TrackRecord};
use trajaudit::{eval, safety};

use crate::error::{CliError, Kind};
use crate::manifest::{self, Run};
use crate::settings;
use crate::ConfigArgs;

fn read_tracks(path: &Path) -> Result<(Vec<Track>, Option<Branch>), CliError> {
    let records: Vec<TrackRecord> = read_jsonl(path)?;
    Ok(tracker::tracks_from_records(&records)?)
}

fn read_events(path: &Path) -> Result<Vec<NearMissEvent>, CliError> {
    let records: Vec<EventRecord> = read_jsonl(path)?;
    Ok(records.into_iter().map(|r| r.event).collect())
}

fn config(args: &ConfigArgs, run_inputs: &mut Vec<PathBuf>) -> Result<PipelineConfig, CliError> {
    if let Some(p) = &args.config {
        run_inputs.push(p.clone());
    }
    settings::load(args.config.as_deref(), &args.overrides)
}

fn start(command: &str, cfg: &PipelineConfig, inputs: Vec<PathBuf>) -> Run {
    let mut run = Run::new(command, cfg);
    for p in &inputs {
        run.input(p);
    }
    run
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    Anchor,
    Jitter,
    Crossing,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Scenario JSON.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in scenario instead of `--spec`.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    let mut spec: ScenarioSpec = match (&a.spec, a.preset) {
        (Some(p), _) => read_json(p)?,
        (None, Some(Preset::Anchor)) => presets::anchor_lateral_intrusion(0),
        (None, Some(Preset::Jitter)) => presets::jitter_suite(0),
        (None, Some(Preset::Crossing)) => presets::crossing_pair(0),
        (None, None) => return Err(CliError::usage("one of --spec or --preset is required")),
    };
    if let Some(seed) = a.seed {
        spec = match a.preset {
            Some(Preset::Crossing) => presets::crossing_pair(seed),
            _ => ScenarioSpec { seed, ..spec },
        };
    }
    let (stream, gts) = generate_scenario(&spec)?;
    save_detections(&a.out, &stream)?;
    let mut run = Run::new("gen", &spec).seed(spec.seed);
    if let Some(p) = &a.spec {
        run.input(p);
    }
    run.output(&a.out);
    if let Some(gt) = &a.gt {
        save_ground_truth(gt, &gts, spec.dt)?;
        run.output(gt);
    }
    run.write(&manifest::path_for(&a.out))?;
    println!(
        "gen: {} detections over {} frames, {} agents",
        stream.len(),
        spec.frame_count(),
        gts.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Skip malformed detection lines instead of failing.
    #[arg(long)]
    pub lenient: bool,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn track(a: TrackArgs) -> Result<(), CliError> {
    let mut inputs = vec![a.input.clone()];
    let cfg = config(&a.cfg, &mut inputs)?;
    let mode = if a.lenient { LoadMode::Lenient } else { LoadMode::Strict };
    let report = load_detections(&a.input, cfg.dt, mode)?;
    let tracks = tracker::track(&report.stream, &cfg.tracker)?;
    write_jsonl(&a.out, &tracker::track_records(&tracks, None))?;
    let mut run = start("track", &cfg, inputs);
    run.output(&a.out);
    run.write(&manifest::path_for(&a.out))?;
    println!(
        "track: {} detections ({} skipped) -> {} tracks",
        report.stream.len(),
        report.rejected.len(),
        tracks.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct RefineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// b0 (raw), b1 (targeted correction) or b2 (uniform smoothing).
    #[arg(long)]
    pub branch: Branch,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame correction log.
    #[arg(long)]
    pub corrections: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn refine(a: RefineArgs) -> Result<(), CliError> {
    let mut inputs = vec![a.input.clone()];
    let cfg = config(&a.cfg, &mut inputs)?;
    let (tracks, _) = read_tracks(&a.input)?;
    let refined = refine::refine_all(&tracks, a.branch, &cfg.refine);
    let out_tracks: Vec<Track> = refined.iter().map(|r| r.track.clone()).collect();
    write_jsonl(&a.out, &tracker::track_records(&out_tracks, Some(a.branch)))?;
    let mut run = start("refine", &cfg, inputs);
    run.output(&a.out);
    let applied: usize = refined.iter().map(|r| r.corrections.iter().filter(|c| c.applied).count()).sum();
    if let Some(p) = &a.corrections {
        write_jsonl(p, &refine::correction_records(&refined))?;
        run.output(p);
    }
    run.write(&manifest::path_for(&a.out))?;
    println!("refine {}: {} tracks, {} frames corrected", a.branch, refined.len(), applied);
    Ok(())
}

#[derive(Args, Debug)]
pub struct StabilizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Per-frame stabilizer state and per-track dimensions.
    #[arg(long)]
    pub out: PathBuf,
    /// Stabilized poses in the track schema, for `mine` or `eval`.
    #[arg(long)]
    pub tracks_out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn stabilize(a: StabilizeArgs) -> Result<(), CliError> {
    let mut inputs = vec![a.input.clone()];
    let cfg = config(&a.cfg, &mut inputs)?;
    let (tracks, branch) = read_tracks(&a.input)?;
    let stable = stabilize::stabilize_all(&tracks, &cfg.stabilizer);
    write_jsonl(&a.out, &stabilize::stabilized_records(&stable))?;
    let mut run = start("stabilize", &cfg, inputs);
    run.output(&a.out);
    if let Some(p) = &a.tracks_out {
        let out: Vec<Track> = stable.iter().map(|s| s.to_track()).collect();
        write_jsonl(p, &tracker::track_records(&out, branch))?;
        run.output(p);
    }
    run.write(&manifest::path_for(&a.out))?;
    println!("stabilize: {} of {} tracks", stable.len(), tracks.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Events JSONL.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Hotspot CSV with columns cell_x, cell_y, count.
    #[arg(long)]
    pub hotspot: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub cell_size: f64,
    /// Per-frame metrics for every candidate pair.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// QA store whose review decisions set event statuses.
    #[arg(long)]
    pub reviews: Option<PathBuf>,
    /// Status and failure-tag tallies after applying `--reviews`.
    #[arg(long, requires = "reviews")]
    pub feedback_out: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn mine(a: MineArgs) -> Result<(), CliError> {
    if !(a.cell_size.is_finite() && a.cell_size > 0.0) {
        return Err(CliError::usage(format!("--cell-size must be > 0, got {}", a.cell_size)));
    }
    let mut inputs = vec![a.input.clone()];
    let cfg = config(&a.cfg, &mut inputs)?;
    let (tracks, branch) = read_tracks(&a.input)?;
    let mut out = miner::mine(&tracks, &cfg.miner, branch)?;
    let mut feedback = None;
    if let Some(store_dir) = &a.reviews {
        let store = QaStore::open(store_dir.clone(), OpenMode::ReadOnly)?;
        let known: HashSet<&str> = out.events.iter().map(|e| e.event_id.as_str()).collect();
        let (records, other): (Vec<_>, Vec<_>) =
            store.records().into_iter().partition(|r| known.contains(r.event_id.as_str()));
        if !other.is_empty() {
            log::warn!("{} review records refer to events not in this run", other.len());
        }
        feedback = Some(miner::apply_review_feedback(&mut out.events, &records)?);
    }
    write_jsonl(&a.out, &miner::event_records(&out.events))?;
    let mut run = start("mine", &cfg, inputs);
    if let Some(store_dir) = &a.reviews {
        let log = store_dir.join(trajaudit::qa::RECORDS_FILE);
        if log.exists() {
            run.input(&log);
        }
    }
    run.output(&a.out);
    if let Some(p) = &a.summary {
        write_json(p, &out.summary)?;
        run.output(p);
    }
    if let Some(p) = &a.hotspot {
        let grid = miner::hotspot_filtered(&out.events, a.cell_size, false);
        write_hotspot_csv(p, &grid)?;
        run.output(p);
    }
    if let Some(p) = &a.metrics {
        let series: Vec<safety::MetricSeries> = out.pairs.iter().map(|c| c.series.clone()).collect();
        write_jsonl(p, &safety::metric_records(&series))?;
        run.output(p);
    }
    if let (Some(p), Some(stats)) = (&a.feedback_out, &feedback) {
        write_json(p, stats)?;
        run.output(p);
    }
    run.write(&manifest::path_for(&a.out))?;
    println!(
        "mine: {} tracks, {} movement-valid, {} candidate pairs, {} events",
        out.summary.tracks, out.summary.movement_valid_tracks, out.summary.candidate_pairs, out.summary.events
    );
    Ok(())
}

fn write_hotspot_csv(path: &Path, grid: &miner::HotspotGrid) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::new(Kind::Io, format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["cell_x", "cell_y", "count"]).map_err(io)?;
    for c in &grid.cells {
        w.write_record([c.cell_x.to_string(), c.cell_y.to_string(), c.count.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame match details.
    #[arg(long)]
    pub matches: Option<PathBuf>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let mut inputs = vec![a.pred.clone(), a.gt.clone()];
    let cfg = config(&a.cfg, &mut inputs)?;
    let (preds, _) = read_tracks(&a.pred)?;
    let gts = load_ground_truth(&a.gt)?;
    let (report, matches) = eval::evaluate(&preds, &gts, &cfg.eval);
    write_json(&a.out, &report)?;
    let mut run = start("eval", &cfg, inputs);
    run.output(&a.out);
    if let Some(p) = &a.matches {
        write_json(p, &matches)?;
        run.output(p);
    }
    run.write(&manifest::path_for(&a.out))?;
    println!(
        "eval: precision {:.4} recall {:.4} f1 {:.4}",
        report.precision, report.recall, report.f1
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct QaExportArgs {
    #[arg(long)]
    pub events: PathBuf,
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub round: String,
    #[arg(long)]
    pub store: PathBuf,
    /// Tracklet context beyond the event window, in frames. Defaults to `miner.context_frames`.
    #[arg(long)]
    pub margin: Option<u64>,
    /// RFC 3339 timestamp stamped on the round and its items.
    #[arg(long)]
    pub created_at: Option<String>,
    /// Operator note on the round.
    #[arg(long)]
    pub note: Option<String>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

/// `--created-at`, else `SOURCE_DATE_EPOCH`, else the wall clock.
fn created_at(flag: Option<String>) -> Result<String, CliError> {
    if let Some(s) = flag {
        chrono::DateTime::parse_from_rfc3339(&s)
            .map_err(|e| CliError::usage(format!("--created-at {s:?}: {e}")))?;
        return Ok(s);
    }
    if let Ok(raw) = std::env::var("SOURCE_DATE_EPOCH") {
        let secs: i64 = raw
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("SOURCE_DATE_EPOCH {raw:?} is not an integer")))?;
        let t = chrono::DateTime::from_timestamp(secs, 0)
            .ok_or_else(|| CliError::usage(format!("SOURCE_DATE_EPOCH {secs} out of range")))?;
        return Ok(t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    Ok(trajaudit::qa::now_rfc3339())
}

pub fn qa_export(a: QaExportArgs) -> Result<(), CliError> {
    let mut inputs = vec![a.events.clone(), a.tracks.clone()];
    let cfg = config(&a.cfg, &mut inputs)?;
    let stamp = created_at(a.created_at)?;
    let events = read_events(&a.events)?;
    let (tracks, _) = read_tracks(&a.tracks)?;
    let store = QaStore::open(a.store.clone(), OpenMode::ReadWrite)?;
    let snapshot = serde_json::to_value(&cfg).expect("config serializes");
    let margin = a.margin.unwrap_or(cfg.miner.context_frames);
    let report = store.export_queue(&events, &tracks, &a.round, margin, snapshot, &stamp)?;
    if let Some(note) = &a.note {
        store.set_round_note(&a.round, note)?;
    }
    let dir = a.store.join("manifests");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut run = start("qa-export", &cfg, inputs);
    run.output(&a.store.join(trajaudit::qa::INDEX_FILE));
    run.output(&a.store.join(trajaudit::qa::queue_file(&a.round)));
    run.write(&dir.join(format!("qa-export-{}.json", a.round)))?;
    println!(
        "qa-export round {}: {} added, {} already present, {} not pending",
        report.round_id, report.added, report.already_present, report.skipped_not_pending
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "STORE_PATH")]
    pub store: PathBuf,
    #[arg(long, env = "SERVICE_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Built dashboard assets served at `/`.
    #[arg(long, env = "STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
    /// Reject decision submissions with 409.
    #[arg(long)]
    pub read_only: bool,
}

pub fn serve(a: ServeArgs) -> Result<(), CliError> {
    let addr: SocketAddr = a
        .addr
        .parse()
        .map_err(|e| CliError::usage(format!("--addr {:?}: {e}", a.addr)))?;
    let cfg = trajaudit_service::ServiceConfig {
        addr,
        store: a.store,
        static_dir: a.static_dir,
        read_only: a.read_only,
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new(Kind::Other, e.to_string()))?;
    println!("serving on http://{addr}");
    rt.block_on(trajaudit_service::serve(cfg))?;
    Ok(())
}
