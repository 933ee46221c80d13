//! Command-line front end: `score`, `select`, `synth` and `bench`.
//!
//! Every command reads the input trajectory, keeps a uniformly spaced pool of
//! candidate frames (`--candidates`), pools token grids to `S x S` regions
//! (`--pool`) and scores the candidates with an order-`N` Taylor predictor
//! (`--order`). Frame indices in every output refer to the input file's frame
//! numbering.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{self, format_sig9, SelectionReport, Trajectory};
use crate::selection::{self, SelectionRequest, SelectionResult, Strategy};
use crate::taylor::{residual_series, ResidualSeries, TaylorConfig};
use crate::trajectory::{
    gen_synthetic, pool_tokens, FeatureSequence, PoolConfig, SurpriseEvent, SynthSpec, TokenGridSequence,
};

pub const BENCH_ORDERS: [usize; 4] = [1, 2, 3, 6];
pub const BENCH_POOLS: [usize; 5] = [1, 2, 4, 7, 14];
pub const BENCH_BUDGETS: [usize; 5] = [2, 4, 8, 16, 32];

#[derive(Debug, Parser)]
#[command(name = "taylor-keyframes", version, about = "Keyframe selection from Taylor residuals of feature trajectories")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write per-frame residuals as CSV.
    Score(PipelineArgs),
    /// Select frames and write a JSON report; prints indices to stdout.
    Select(PipelineArgs),
    /// Generate a synthetic trajectory with known surprise events.
    Synth(SynthArgs),
    /// Sweep order, pooling and budget over one or more trajectories.
    Bench(BenchArgs),
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse::<Strategy>().map_err(|e| e.to_string())
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; `score` writes CSV to stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 1)]
    pub pool: usize,
    #[arg(long, default_value_t = 32)]
    pub budget: usize,
    #[arg(long, default_value = "swift_local_max", value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 128)]
    pub candidates: usize,
    #[arg(long, default_value_t = 1)]
    pub window: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub frames: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// Comma-separated `frame:magnitude` steps, e.g. `20:10,50:10`.
    #[arg(long, default_value = "")]
    pub events: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Taylor order the data is meant for; events must be `2(order+1)` apart.
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    /// Emit a `G x G` token grid per frame instead of pooled features.
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub layer: Option<i32>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value = "swift_local_max", value_parser = parse_strategy)]
    pub strategy: Strategy,
    #[arg(long, default_value_t = 128)]
    pub candidates: usize,
    #[arg(long, default_value_t = 1)]
    pub window: usize,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Score(args) => cmd_score(&args, stdout),
        Command::Select(args) => cmd_select(&args, stdout),
        Command::Synth(args) => cmd_synth(&args, stdout),
        Command::Bench(args) => cmd_bench(&args, stdout),
    }
}

/// Candidate frames of one input, ready for scoring.
pub struct Prepared {
    pub trajectory: Trajectory,
    /// Input-file frame number of each candidate.
    pub frame_ids: Vec<usize>,
    pub digest: String,
}

pub fn prepare(path: &Path, candidates: usize) -> Result<Prepared> {
    if candidates == 0 {
        return Err(Error::InvalidConfig("candidate pool must be at least 1".into()));
    }
    let full = io::read_trajectory(path)?;
    let digest = io::payload_digest(&full)?;
    let frame_ids = selection::subsample_candidates(full.frames(), candidates);
    let trajectory = if frame_ids.len() == full.frames() {
        full
    } else {
        full.select_frames(&frame_ids)?
    };
    Ok(Prepared {
        trajectory,
        frame_ids,
        digest,
    })
}

/// Residuals plus the per-frame features the baselines compare.
pub struct Scored {
    pub residuals: ResidualSeries,
    pub features: FeatureSequence,
}

/// Pools (for token grids) and scores a trajectory.
pub fn score_trajectory(traj: &Trajectory, order: usize, pool: usize) -> Result<Scored> {
    let cfg = TaylorConfig::new(order)?;
    match traj {
        Trajectory::Features(f) => Ok(Scored {
            residuals: residual_series(f, cfg)?,
            features: f.clone(),
        }),
        Trajectory::Grid(g) => {
            let regions = pool_tokens(g, PoolConfig::new(pool))?;
            Ok(Scored {
                residuals: residual_series(&regions, cfg)?,
                features: regions.concat_regions(),
            })
        }
    }
}

fn request(args: &PipelineArgs) -> SelectionRequest {
    SelectionRequest::new(args.budget, args.strategy).with_window(args.window)
}

fn to_frame_ids(sel: &SelectionResult, frame_ids: &[usize]) -> Vec<usize> {
    sel.indices.iter().map(|&i| frame_ids[i]).collect()
}

fn comma_list(indices: &[usize]) -> String {
    indices
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn cmd_score(args: &PipelineArgs, stdout: &mut dyn Write) -> Result<()> {
    let prepared = prepare(&args.input, args.candidates)?;
    let scored = score_trajectory(&prepared.trajectory, args.order, args.pool)?;
    let sel = selection::select(&request(args), &scored.residuals, Some(&scored.features))?;
    match &args.output {
        Some(path) => {
            let file = BufWriter::new(fs::File::create(path)?);
            io::write_residuals_csv(file, &scored.residuals, &sel, Some(&prepared.frame_ids))
        }
        None => io::write_residuals_csv(stdout, &scored.residuals, &sel, Some(&prepared.frame_ids)),
    }
}

pub fn cmd_select(args: &PipelineArgs, stdout: &mut dyn Write) -> Result<()> {
    let prepared = prepare(&args.input, args.candidates)?;
    let scored = score_trajectory(&prepared.trajectory, args.order, args.pool)?;
    let sel = selection::select(&request(args), &scored.residuals, Some(&scored.features))?;
    let indices = to_frame_ids(&sel, &prepared.frame_ids);
    if let Some(path) = &args.output {
        let report = SelectionReport {
            strategy: sel.strategy,
            order: args.order,
            pool: scored.residuals.pool,
            budget: args.budget,
            indices: indices.clone(),
            scores: sel.scores.clone(),
            digest: prepared.digest.clone(),
        };
        io::write_selection_json(&report, path)?;
    }
    writeln!(stdout, "{}", comma_list(&indices))?;
    Ok(())
}

/// Parses `frame:magnitude[,frame:magnitude...]`.
pub fn parse_events(spec: &str) -> Result<Vec<SurpriseEvent>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || Error::InvalidConfig(format!("bad event '{item}', expected frame:magnitude"));
            let (frame, mag) = item.split_once(':').ok_or_else(bad)?;
            Ok(SurpriseEvent {
                frame_index: frame.trim().parse().map_err(|_| bad())?,
                jump_magnitude: mag.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Serialize)]
struct EventsSidecar<'a> {
    seed: u64,
    frames: usize,
    dim: usize,
    degree: usize,
    events: &'a [SurpriseEvent],
}

/// `run.ftrj` -> `run.events.json`.
pub fn events_sidecar_path(output: &Path) -> PathBuf {
    output.with_extension("events.json")
}

/// Same offset added to a token at every frame, so pooling any grid shape
/// leaves residuals unchanged.
fn expand_to_grid(features: &FeatureSequence, grid: usize, seed: u64) -> Result<TokenGridSequence> {
    use rand::{Rng, SeedableRng};
    if grid == 0 {
        return Err(Error::InvalidConfig("grid side must be at least 1".into()));
    }
    let dim = features.dim();
    let tokens = grid * grid;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let offsets: Vec<f64> = (0..tokens * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let mut data = Vec::with_capacity(features.frames() * tokens * dim);
    for t in 0..features.frames() {
        let frame = features.frame(t);
        for tok in 0..tokens {
            data.extend(frame.iter().zip(&offsets[tok * dim..(tok + 1) * dim]).map(|(f, o)| f + o));
        }
    }
    TokenGridSequence::new(features.frames(), grid, dim, data)
}

pub fn cmd_synth(args: &SynthArgs, stdout: &mut dyn Write) -> Result<()> {
    let events = parse_events(&args.events)?;
    let gap = 2 * (args.order + 1);
    if let Some(w) = events.windows(2).find(|w| w[1].frame_index > w[0].frame_index && w[1].frame_index - w[0].frame_index < gap) {
        return Err(Error::InvalidConfig(format!(
            "events at {} and {} are closer than 2(N+1) = {gap} frames",
            w[0].frame_index, w[1].frame_index
        )));
    }
    let spec = SynthSpec {
        frames: args.frames,
        dim: args.dim,
        base_degree: args.degree,
        events,
        seed: args.seed,
    };
    let (features, events) = gen_synthetic(&spec)?;
    let mut traj = match args.grid {
        None => Trajectory::Features(features),
        Some(g) => Trajectory::Grid(expand_to_grid(&features, g, args.seed)?),
    };
    if let Some(layer) = args.layer {
        match &mut traj {
            Trajectory::Features(f) => f.layer_index = Some(layer),
            Trajectory::Grid(g) => g.layer_index = Some(layer),
        }
    }
    io::write_trajectory(&traj, &args.output)?;

    let sidecar = EventsSidecar {
        seed: args.seed,
        frames: args.frames,
        dim: args.dim,
        degree: args.degree,
        events: &events,
    };
    let mut json = serde_json::to_string(&sidecar).expect("sidecar serialization is infallible");
    json.push('\n');
    let sidecar_path = events_sidecar_path(&args.output);
    fs::write(&sidecar_path, json)?;
    writeln!(stdout, "{}", comma_list(&events.iter().map(|e| e.frame_index).collect::<Vec<_>>()))?;
    Ok(())
}

/// One line of the bench CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub file_id: String,
    pub order: usize,
    pub pool: String,
    pub budget: usize,
    pub strategy: Strategy,
    pub mean_residual: f64,
    pub max_residual: f64,
    pub selection_digest: String,
    pub jaccard_vs_uniform: f64,
}

impl BenchRow {
    pub const HEADER: &'static str =
        "file_id,order,pool,budget,strategy,mean_residual,max_residual,selection_digest,jaccard_vs_uniform";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.file_id,
            self.order,
            self.pool,
            self.budget,
            self.strategy,
            format_sig9(self.mean_residual),
            format_sig9(self.max_residual),
            self.selection_digest,
            format_sig9(self.jaccard_vs_uniform)
        )
    }
}

/// Clamps every sweep value to `limit` and drops duplicates.
fn clamp_sweep(values: &[usize], limit: usize) -> Vec<usize> {
    let mut out: Vec<usize> = values.iter().map(|&v| v.min(limit)).collect();
    out.dedup();
    out
}

fn indices_digest(indices: &[usize]) -> String {
    let bytes: Vec<u8> = indices.iter().flat_map(|&i| (i as u32).to_le_bytes()).collect();
    io::digest_hex(io::fnv1a64(&bytes))
}

/// Timing of one scoring call, reported on stdout by `bench`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTiming {
    pub file_id: String,
    pub order: usize,
    pub pool: String,
    pub micros: u128,
}

pub fn bench_file(path: &Path, args: &BenchArgs) -> Result<(Vec<BenchRow>, Vec<ScoreTiming>)> {
    let prepared = prepare(path, args.candidates)?;
    let traj = &prepared.trajectory;
    let file_id = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let pools: Vec<Option<usize>> = match traj.grid_side() {
        0 => vec![None],
        g => clamp_sweep(&BENCH_POOLS, g).into_iter().map(Some).collect(),
    };
    let budgets = clamp_sweep(&BENCH_BUDGETS, traj.frames());

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for &order in &BENCH_ORDERS {
        for &pool in &pools {
            let start = Instant::now();
            let scored = score_trajectory(traj, order, pool.unwrap_or(1))?;
            let micros = start.elapsed().as_micros();
            let pool_label = scored.residuals.pool.to_string();
            timings.push(ScoreTiming {
                file_id: file_id.clone(),
                order,
                pool: pool_label.clone(),
                micros,
            });

            let values = &scored.residuals.values;
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let max = values.iter().copied().fold(0.0, f64::max);
            for &budget in &budgets {
                let req = SelectionRequest::new(budget, args.strategy).with_window(args.window);
                let sel = selection::select(&req, &scored.residuals, Some(&scored.features))?;
                let uniform = selection::select_uniform(values.len(), budget);
                rows.push(BenchRow {
                    file_id: file_id.clone(),
                    order,
                    pool: pool_label.clone(),
                    budget,
                    strategy: args.strategy,
                    mean_residual: mean,
                    max_residual: max,
                    selection_digest: indices_digest(&to_frame_ids(&sel, &prepared.frame_ids)),
                    jaccard_vs_uniform: selection::jaccard(&sel.indices, &uniform.indices),
                });
            }
        }
    }
    Ok((rows, timings))
}

pub fn cmd_bench(args: &BenchArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut csv = String::from(BenchRow::HEADER);
    csv.push('\n');
    let mut timing_lines = String::new();
    for path in &args.input {
        let (rows, timings) = bench_file(path, args)?;
        for row in rows {
            csv.push_str(&row.to_csv());
            csv.push('\n');
        }
        for t in timings {
            timing_lines.push_str(&format!(
                "score_us file={} order={} pool={} micros={}\n",
                t.file_id, t.order, t.pool, t.micros
            ));
        }
    }
    match &args.output {
        Some(path) => {
            fs::write(path, csv)?;
            stdout.write_all(timing_lines.as_bytes())?;
        }
        None => {
            stdout.write_all(csv.as_bytes())?;
            stdout.write_all(timing_lines.as_bytes())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_events() {
        let ev = parse_events("10:5, 20:2.5").unwrap();
        assert_eq!(ev.len(), 2);
        assert_eq!(ev[1].frame_index, 20);
        assert_eq!(ev[1].jump_magnitude, 2.5);
        assert!(parse_events("").unwrap().is_empty());
        assert!(parse_events("10").is_err());
        assert!(parse_events("a:1").is_err());
    }

    #[test]
    fn sweeps_are_clamped() {
        assert_eq!(clamp_sweep(&BENCH_BUDGETS, 10), vec![2, 4, 8, 10]);
        assert_eq!(clamp_sweep(&BENCH_POOLS, 14), BENCH_POOLS.to_vec());
        assert_eq!(clamp_sweep(&BENCH_POOLS, 4), vec![1, 2, 4]);
    }

    #[test]
    fn sidecar_path() {
        assert_eq!(events_sidecar_path(Path::new("/tmp/run.ftrj")), Path::new("/tmp/run.events.json"));
    }

    #[test]
    fn grid_expansion_preserves_residuals() {
        let spec = SynthSpec {
            frames: 20,
            dim: 3,
            base_degree: 1,
            events: vec![SurpriseEvent { frame_index: 9, jump_magnitude: 4.0 }],
            seed: 1,
        };
        let (f, _) = gen_synthetic(&spec).unwrap();
        let g = expand_to_grid(&f, 4, 1).unwrap();
        let direct = score_trajectory(&Trajectory::Features(f), 3, 1).unwrap().residuals.values;
        for s in [1, 2, 4] {
            let pooled = score_trajectory(&Trajectory::Grid(g.clone()), 3, s).unwrap().residuals.values;
            for (a, b) in direct.iter().zip(&pooled) {
                assert!((a - b).abs() < 1e-9, "S={s}: {a} vs {b}");
            }
        }
    }
}
