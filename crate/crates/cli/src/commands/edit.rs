use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use click2mask::backends::{BackendBundle, SyntheticConfig};
use click2mask::engine::{edit, EditOutcome, EvolutionConfig, EvolutionRun};
use click2mask::masks::upscale_mask;
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::imageio::{load_rgb, save_mask, save_rgb};

pub const SEED_ENV: &str = "C2M_SEED";

#[derive(Debug, Clone)]
pub struct EditArgs {
    pub image: PathBuf,
    pub point: (usize, usize),
    pub prompt: String,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trace_dir: Option<PathBuf>,
    pub frames: bool,
    pub backend: String,
}

/// Everything a run needs once flags, config file and environment are merged.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub evolution: EvolutionConfig,
    pub synthetic: SyntheticConfig,
    pub image: PathBuf,
    pub out: PathBuf,
    pub trace_dir: Option<PathBuf>,
    pub point: (usize, usize),
    pub prompt: String,
    pub backend: String,
    pub frames: bool,
}

/// Parses a config file: [`EvolutionConfig`] fields at the top level, plus an
/// optional `"synthetic"` object for the synthetic backend. Missing fields
/// keep their defaults; unknown ones are rejected.
pub fn parse_config(text: &str) -> CliResult<(EvolutionConfig, SyntheticConfig)> {
    let bad = |e: serde_json::Error| CliError::Usage(format!("config: {e}"));
    let mut value: Value = serde_json::from_str(text).map_err(bad)?;
    let Some(obj) = value.as_object_mut() else {
        return Err(CliError::Usage("config: expected a JSON object".into()));
    };
    let synthetic = match obj.remove("synthetic") {
        Some(v) => serde_json::from_value(v).map_err(bad)?,
        None => SyntheticConfig::default(),
    };
    let evolution: EvolutionConfig = serde_json::from_value(value).map_err(bad)?;
    Ok((evolution, synthetic))
}

fn seed_from_env() -> CliResult<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn default_out(image: &Path) -> PathBuf {
    let stem = image.file_stem().map_or("image".into(), |s| s.to_string_lossy());
    image.with_file_name(format!("{stem}_edited.png"))
}

/// Sibling of `out` named `<stem>.scores.json`.
pub fn scores_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or("out".into(), |s| s.to_string_lossy());
    out.with_file_name(format!("{stem}.scores.json"))
}

impl RunConfig {
    pub fn resolve(args: EditArgs) -> CliResult<Self> {
        let (mut evolution, mut synthetic) = match &args.config {
            Some(path) => parse_config(&fs::read_to_string(path).map_err(CliError::io(path))?)?,
            None => (EvolutionConfig::default(), SyntheticConfig::default()),
        };
        if let Some(seed) = seed_from_env()?.or(args.seed) {
            evolution.master_seed = seed;
        }
        // The backend follows the engine's latent factor.
        synthetic.downscale = evolution.downscale;
        evolution.validate()?;
        if args.prompt.trim().is_empty() {
            return Err(CliError::Usage("--prompt must not be empty".into()));
        }
        Ok(Self {
            out: args.out.clone().unwrap_or_else(|| default_out(&args.image)),
            evolution,
            synthetic,
            image: args.image,
            trace_dir: args.trace_dir,
            point: args.point,
            prompt: args.prompt,
            backend: args.backend,
            frames: args.frames,
        })
    }
}

#[derive(Serialize)]
struct CandidateReport {
    seed: u64,
    score: f64,
}

#[derive(Serialize)]
struct RunReport {
    index: usize,
    seed: u64,
    ok: bool,
    error: Option<String>,
    final_area: Option<f64>,
    selected: Option<usize>,
    candidates: Vec<CandidateReport>,
}

#[derive(Serialize)]
struct BestReport {
    evolution: usize,
    candidate: usize,
    seed: u64,
    score: f64,
}

#[derive(Serialize)]
struct ScoresReport {
    prompt: String,
    point: (usize, usize),
    master_seed: u64,
    best: BestReport,
    evolutions: Vec<RunReport>,
}

fn run_report(run: &EvolutionRun) -> RunReport {
    let final_area = run
        .mask
        .as_ref()
        .map(|m| m.count() as f64 / (m.width() * m.height()) as f64);
    match &run.result {
        Ok(set) => RunReport {
            index: run.index,
            seed: run.seed,
            ok: true,
            error: None,
            final_area,
            selected: Some(set.selected),
            candidates: set
                .candidates
                .iter()
                .map(|c| CandidateReport {
                    seed: c.seed,
                    score: c.score,
                })
                .collect(),
        },
        Err(e) => RunReport {
            index: run.index,
            seed: run.seed,
            ok: false,
            error: Some(e.to_string()),
            final_area,
            selected: None,
            candidates: Vec::new(),
        },
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    fs::write(path, text).map_err(CliError::io(path))
}

fn write_traces(dir: &Path, outcome: &[EvolutionRun], frames: bool, downscale: usize) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    for run in outcome {
        let Some(trace) = &run.trace else { continue };
        let path = dir.join(format!("evolution_{}.jsonl", run.index));
        let file = fs::File::create(&path).map_err(CliError::io(&path))?;
        let mut w = BufWriter::new(file);
        for record in &trace.records {
            let line = serde_json::to_string(record).expect("trace records serialize");
            writeln!(w, "{line}").map_err(CliError::io(&path))?;
        }
        w.flush().map_err(CliError::io(&path))?;

        if frames {
            let frame_dir = dir.join(format!("evolution_{}", run.index));
            fs::create_dir_all(&frame_dir).map_err(CliError::io(&frame_dir))?;
            save_mask(&frame_dir.join("frame_init.png"), &upscale_mask(&trace.initial_mask, downscale)?)?;
            for record in &trace.records {
                let frame = upscale_mask(&record.mask, downscale)?;
                save_mask(&frame_dir.join(format!("frame_{:03}.png", record.t)), &frame)?;
            }
        }
    }
    Ok(())
}

pub fn run(args: EditArgs) -> CliResult<()> {
    let cfg = RunConfig::resolve(args)?;
    let backends = BackendBundle::from_key(&cfg.backend, cfg.synthetic).map_err(|e| CliError::Usage(e.to_string()))?;
    let image = load_rgb(&cfg.image)?;
    let (w, h) = image.dims();
    if cfg.point.0 >= w || cfg.point.1 >= h {
        return Err(CliError::Usage(format!(
            "--point {},{} outside image bounds: x must be < {w} and y < {h}",
            cfg.point.0, cfg.point.1
        )));
    }

    let result = edit(&image, &cfg.prompt, cfg.point, &cfg.evolution, &backends);
    let outcome: EditOutcome = match result {
        Ok(o) => o,
        Err(e) => return Err(e.into()),
    };

    if let Some(dir) = &cfg.trace_dir {
        write_traces(dir, &outcome.runs, cfg.frames, cfg.evolution.downscale)?;
    }
    save_rgb(&cfg.out, &outcome.image)?;
    let (ri, ci) = outcome.best;
    let best = outcome.best_candidate();
    let report = ScoresReport {
        prompt: cfg.prompt.clone(),
        point: cfg.point,
        master_seed: cfg.evolution.master_seed,
        best: BestReport {
            evolution: ri,
            candidate: ci,
            seed: best.seed,
            score: best.score,
        },
        evolutions: outcome.runs.iter().map(run_report).collect(),
    };
    write_json(&scores_path(&cfg.out), &report)?;
    println!("wrote {} (score {:.6}, evolution {ri}, seed {})", cfg.out.display(), best.score, best.seed);
    Ok(())
}
