//! `mdtrack`: simulate scenarios, track them or replayed detector output,
//! evaluate prediction error and run the ablation grid.
//!
//! Exit codes: 0 success, 2 invalid input, 3 I/O failure, 4 numerical
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mdtrack_core::metrics::{self, aggregate, render_table, MetricSet, PredictionLog};
use mdtrack_core::pipeline::{run_sequence, FrameResult};
use mdtrack_core::sequence::{assemble, read_jsonl, write_jsonl};
use mdtrack_core::synth::{generate, Scenario, ScenarioSpec};
use mdtrack_core::{
    Ablation, ConfigError, CorrespondenceRecord, Detection, DetectionRecord, FormatError,
    GroundTruth, MetricsError, PipelineError, ReplaySource, SequenceRecord, SynthError,
    TrackerConfig,
};

const CORRESPONDENCES: &str = "correspondences.jsonl";
const DETECTIONS: &str = "detections.jsonl";
const GROUND_TRUTH: &str = "ground_truth.jsonl";
const MANIFEST: &str = "manifest.json";
const RESULTS: &str = "results.jsonl";

#[derive(Parser)]
#[command(
    name = "mdtrack",
    version,
    about = "Camera-motion-decoupled tracking toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario as replay files.
    Simulate {
        /// Scenario file (TOML).
        #[arg(long)]
        scenario: PathBuf,
        /// Tracker configuration; its slice length is used for the reference frames.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Track one sequence and write per-frame results.
    Track {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        run: RunOptions,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate tracking results against ground truth.
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Results of a baseline run; defaults to the zero-velocity predictor
        /// on ground truth.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Directory for report.json and report.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the six-row ablation grid over several seeds of a scenario.
    Ablate {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        run: RunOptions,
        /// Number of consecutive seeds, starting at the scenario seed.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Weight per-sequence means by evaluated frames.
        #[arg(long)]
        weighted: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (TOML) generated in memory.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Directory with correspondence, detection and ground-truth files.
    #[arg(long)]
    replay: Option<PathBuf>,
}

#[derive(Args, Default)]
struct RunOptions {
    /// Tracker configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for scenario generation and RANSAC sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Motion decoupling on.
    #[arg(long, overrides_with = "no_md")]
    md: bool,
    #[arg(long, overrides_with = "md")]
    no_md: bool,
    /// Motion prediction on.
    #[arg(long, overrides_with = "no_mp")]
    mp: bool,
    #[arg(long, overrides_with = "mp")]
    no_mp: bool,
    /// Adaptive search region on.
    #[arg(long, overrides_with = "no_asr")]
    asr: bool,
    #[arg(long, overrides_with = "asr")]
    no_asr: bool,
    /// Region scale used when the adaptive region is off.
    #[arg(long)]
    fixed_k: Option<f64>,
}

fn flag(on: bool, off: bool) -> Option<bool> {
    match (on, off) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    }
}

impl RunOptions {
    fn tracker_config(&self) -> Result<TrackerConfig> {
        let mut cfg = match &self.config {
            Some(path) => TrackerConfig::load(path)?,
            None => TrackerConfig::default(),
        };
        if let Some(v) = flag(self.md, self.no_md) {
            cfg.ablation.decouple = v;
        }
        if let Some(v) = flag(self.mp, self.no_mp) {
            cfg.ablation.predict = v;
        }
        if let Some(v) = flag(self.asr, self.no_asr) {
            cfg.ablation.adaptive_region = v;
        }
        if let Some(k) = self.fixed_k {
            cfg.fixed_k = k;
        }
        if let Some(seed) = self.seed {
            cfg.ransac.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct AblationFlags {
    md: bool,
    mp: bool,
    asr: bool,
}

impl From<Ablation> for AblationFlags {
    fn from(a: Ablation) -> Self {
        Self {
            md: a.decouple,
            mp: a.predict,
            asr: a.adaptive_region,
        }
    }
}

/// Written next to every output so a run can be reproduced.
#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    version: &'static str,
    config: Option<String>,
    scenario: Option<String>,
    replay: Option<String>,
    out: String,
    seed: Option<u64>,
    ablation: Option<AblationFlags>,
    fixed_k: Option<f64>,
    frames: u64,
    frame_size: Option<[f64; 2]>,
    files: Vec<&'static str>,
}

impl RunManifest {
    fn new(command: &'static str, out: &Path) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config: None,
            scenario: None,
            replay: None,
            out: out.display().to_string(),
            seed: None,
            ablation: None,
            fixed_k: None,
            frames: 0,
            frame_size: None,
            files: Vec::new(),
        }
    }
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))
}

fn load_scenario(path: &Path, seed: Option<u64>, slice_len: Option<u64>) -> Result<ScenarioSpec> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut spec = ScenarioSpec::from_toml_str(&text)
        .with_context(|| format!("invalid scenario {}", path.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    if let Some(n) = slice_len {
        spec.slice_len = n;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_simulate(
    scenario: &Path,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let slice_len = match &config {
        Some(path) => Some(TrackerConfig::load(path)?.slice_len),
        None => None,
    };
    let spec = load_scenario(scenario, seed, slice_len)?;
    let sc = generate(&spec)?;
    create_dir(out)?;
    write_jsonl(&out.join(CORRESPONDENCES), &sc.correspondences)?;
    write_jsonl(&out.join(DETECTIONS), &sc.detections)?;
    write_jsonl(&out.join(GROUND_TRUTH), &sc.ground_truth)?;

    let mut manifest = RunManifest::new("simulate", out);
    manifest.config = display(&config);
    manifest.scenario = Some(scenario.display().to_string());
    manifest.seed = Some(spec.seed);
    manifest.frames = spec.length;
    manifest.frame_size = Some(spec.frame_size);
    manifest.files = vec![CORRESPONDENCES, DETECTIONS, GROUND_TRUTH];
    write_json(&out.join(MANIFEST), &manifest)?;
    println!(
        "wrote {} frames, {} detection records to {}",
        spec.length,
        sc.detections.len(),
        out.display()
    );
    Ok(())
}

/// Tracker input assembled from either a scenario or replay files.
struct Input {
    frames: Vec<SequenceRecord>,
    provider: ReplaySource,
    init: Detection,
    frame_size: Option<[f64; 2]>,
}

impl From<Scenario> for Input {
    fn from(sc: Scenario) -> Self {
        Self {
            provider: sc.replay_source(),
            init: sc.init_detection(),
            frame_size: Some(sc.spec.frame_size),
            frames: sc.frames,
        }
    }
}

#[derive(serde::Deserialize)]
struct ReplayManifest {
    frame_size: Option<[f64; 2]>,
}

fn load_replay(dir: &Path) -> Result<Input> {
    let correspondences: Vec<CorrespondenceRecord> = read_jsonl(&dir.join(CORRESPONDENCES))?;
    let detections: Vec<DetectionRecord> = read_jsonl(&dir.join(DETECTIONS))?;
    let gt_path = dir.join(GROUND_TRUTH);
    let gt: Option<Vec<GroundTruth>> = if gt_path.exists() {
        Some(read_jsonl(&gt_path)?)
    } else {
        None
    };
    let frames = assemble(&correspondences, gt.as_deref())?;
    let (Some(first), Some(last)) = (frames.first(), frames.last()) else {
        bail!(PipelineError::EmptySequence);
    };
    let init = match first.ground_truth {
        Some(g) => Detection::from_bbox(&g.bbox(), 1.0),
        None => bail!(FormatError::Alignment(format!(
            "{} is needed to initialize the tracker",
            gt_path.display()
        ))),
    };
    let mut provider = ReplaySource::new(detections, first.frame_id, last.frame_id)?;
    let manifest_path = dir.join(MANIFEST);
    let mut frame_size = None;
    if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path)
            .with_context(|| format!("cannot read {}", manifest_path.display()))?;
        let m: ReplayManifest = serde_json::from_str(&text).map_err(|e| FormatError::Parse {
            path: manifest_path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if let Some([w, h]) = m.frame_size {
            provider = provider.with_frame_size(w, h);
            frame_size = Some([w, h]);
        }
    }
    Ok(Input {
        frames,
        provider,
        init,
        frame_size,
    })
}

fn cmd_track(source: &Source, run: &RunOptions, out: &Path) -> Result<()> {
    let cfg = run.tracker_config()?;
    let input = match (&source.scenario, &source.replay) {
        (Some(path), None) => Input::from(generate(&load_scenario(
            path,
            run.seed,
            Some(cfg.slice_len),
        )?)?),
        (None, Some(dir)) => load_replay(dir)?,
        _ => unreachable!("clap enforces exactly one source"),
    };
    let results = run_sequence(&input.frames, &input.init, &cfg, &input.provider)?;
    create_dir(out)?;
    write_jsonl(&out.join(RESULTS), &results)?;

    let mut manifest = RunManifest::new("track", out);
    manifest.config = display(&run.config);
    manifest.scenario = display(&source.scenario);
    manifest.replay = display(&source.replay);
    manifest.seed = run.seed;
    manifest.ablation = Some(cfg.ablation.into());
    manifest.fixed_k = Some(cfg.fixed_k);
    manifest.frames = results.len() as u64;
    manifest.frame_size = input.frame_size;
    manifest.files = vec![RESULTS];
    write_json(&out.join(MANIFEST), &manifest)?;
    println!(
        "tracked {} frames ({}), {} failures",
        results.len(),
        cfg.ablation.label(),
        metrics::count_failures(&results)
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    pipeline: MetricSet,
    baseline: MetricSet,
    baseline_source: &'static str,
    position_error_ratio: f64,
    magnitude_ratio: f64,
}

fn cmd_eval(results: &Path, gt: &Path, baseline: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let res: Vec<FrameResult> = read_jsonl(results)?;
    let truth: Vec<GroundTruth> = read_jsonl(gt)?;
    let pipeline = MetricSet::evaluate(&res, &truth)?;
    let (baseline, source) = match baseline {
        Some(path) => {
            let b: Vec<FrameResult> = read_jsonl(path)?;
            (MetricSet::evaluate(&b, &truth)?, "results")
        }
        None => (
            MetricSet::from_log(&PredictionLog::zero_velocity(&truth))?,
            "zero-velocity",
        ),
    };
    let report = EvalReport {
        pipeline,
        baseline,
        baseline_source: source,
        position_error_ratio: metrics::ratio(pipeline.position_error, baseline.position_error),
        magnitude_ratio: metrics::ratio(pipeline.magnitude, baseline.magnitude),
    };
    let mut table = render_table(&[("pipeline".into(), pipeline), ("baseline".into(), baseline)]);
    table.push_str(&format!(
        "position error ratio {:.3}\n",
        report.position_error_ratio
    ));
    print!("{table}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &report)?;
        fs::write(dir.join("report.txt"), &table)
            .with_context(|| format!("cannot write {}", dir.join("report.txt").display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AblationRow {
    label: &'static str,
    ablation: AblationFlags,
    aggregate: MetricSet,
    per_seed: Vec<MetricSet>,
}

#[derive(Serialize)]
struct AblationReport {
    scenario: String,
    seeds: Vec<u64>,
    weighted: bool,
    rows: Vec<AblationRow>,
    /// Fraction of seeds on which each step of baseline, mp, md+mp,
    /// md+mp+asr strictly lowers the position error.
    paired_ordering: Vec<(String, f64)>,
}

fn cmd_ablate(
    scenario: &Path,
    run: &RunOptions,
    seeds: u64,
    weighted: bool,
    out: &Path,
) -> Result<()> {
    if seeds == 0 {
        bail!(ConfigError::Invalid {
            field: "seeds",
            reason: "must be at least 1".into()
        });
    }
    let base_cfg = run.tracker_config()?;
    let base_spec = load_scenario(scenario, run.seed, Some(base_cfg.slice_len))?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| base_spec.seed.wrapping_add(i)).collect();
    let grid = Ablation::grid();
    let mut per_row: Vec<Vec<MetricSet>> = vec![Vec::new(); grid.len()];
    for &seed in &seed_list {
        let sc = generate(&ScenarioSpec {
            seed,
            ..base_spec.clone()
        })?;
        let provider = sc.replay_source();
        for (row, (_, ablation)) in per_row.iter_mut().zip(grid.iter()) {
            let cfg = TrackerConfig {
                ablation: *ablation,
                ..base_cfg.clone()
            };
            let res = run_sequence(&sc.frames, &sc.init_detection(), &cfg, &provider)?;
            row.push(MetricSet::evaluate(&res, &sc.ground_truth)?);
        }
    }
    let mut rows = Vec::with_capacity(grid.len());
    for ((label, ablation), per_seed) in grid.iter().zip(per_row) {
        rows.push(AblationRow {
            label,
            ablation: (*ablation).into(),
            aggregate: aggregate(&per_seed, weighted)?,
            per_seed,
        });
    }
    let index = |l: &str| rows.iter().position(|r| r.label == l).expect("grid label");
    let chain = ["baseline", "mp", "md+mp", "md+mp+asr"].map(index);
    let paired_ordering = chain
        .windows(2)
        .map(|w| {
            let (a, b) = (&rows[w[0]], &rows[w[1]]);
            let wins = a
                .per_seed
                .iter()
                .zip(&b.per_seed)
                .filter(|(x, y)| x.position_error > y.position_error)
                .count();
            (
                format!("{} > {}", a.label, b.label),
                wins as f64 / seed_list.len() as f64,
            )
        })
        .collect();
    let report = AblationReport {
        scenario: scenario.display().to_string(),
        seeds: seed_list,
        weighted,
        rows,
        paired_ordering,
    };
    let table = render_table(
        &report
            .rows
            .iter()
            .map(|r| (r.label.to_string(), r.aggregate))
            .collect::<Vec<_>>(),
    );
    print!("{table}");
    for (pair, frac) in &report.paired_ordering {
        println!("{pair}: {:.0}% of seeds", 100.0 * frac);
    }
    create_dir(out)?;
    write_json(&out.join("ablation.json"), &report)?;
    fs::write(out.join("ablation.txt"), &table)
        .with_context(|| format!("cannot write {}", out.join("ablation.txt").display()))?;
    Ok(())
}

/// Maps the first recognised error in the chain to an exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<std::io::Error>() {
            return 3;
        }
        if let Some(e) = cause.downcast_ref::<ConfigError>() {
            return if matches!(e, ConfigError::Io { .. }) {
                3
            } else {
                2
            };
        }
        if let Some(e) = cause.downcast_ref::<FormatError>() {
            return if matches!(e, FormatError::Io { .. }) {
                3
            } else {
                2
            };
        }
        if let Some(e) = cause.downcast_ref::<SynthError>() {
            return if matches!(e, SynthError::Geometry { .. }) {
                4
            } else {
                2
            };
        }
        if let Some(e) = cause.downcast_ref::<MetricsError>() {
            return match e {
                MetricsError::Empty => 4,
                MetricsError::Pipeline(_) | MetricsError::Alignment(_) => 2,
            };
        }
        if cause.is::<PipelineError>() || cause.is::<mdtrack_core::DetectorError>() {
            return 2;
        }
        if cause.is::<mdtrack_core::GeometryError>() || cause.is::<mdtrack_core::KalmanError>() {
            return 4;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            config,
            seed,
            out,
        } => cmd_simulate(&scenario, config, seed, &out),
        Command::Track { source, run, out } => cmd_track(&source, &run, &out),
        Command::Eval {
            results,
            gt,
            baseline,
            out,
        } => cmd_eval(&results, &gt, baseline.as_deref(), out.as_deref()),
        Command::Ablate {
            scenario,
            run,
            seeds,
            weighted,
            out,
        } => cmd_ablate(&scenario, &run, seeds, weighted, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
