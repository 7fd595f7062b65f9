use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gaterace::config::RunConfig;
use gaterace::control::{feasibility_region, write_boundary_csv, write_feasibility_csv, FeasibilityGrid};
use gaterace::corpus::{generate_corpus, load_corpus, read_ppm, write_corpus};
use gaterace::detect::{
    clean_tpr_by_distance, evaluate_corpus, evaluate_roc, snake_gate_detect, write_distance_csv,
    write_roc_csv,
};
use gaterace::ekf::{parse_replay, replay, write_replay_csv};
use gaterace::pose::{pose_noise_benchmark, write_bench_csv};
use gaterace::racesim::{arc_endpoint_study, run_batch, write_summary_csv};

#[derive(Parser)]
#[command(name = "gaterace", version, about = "Gate detection, pose, filtering and race simulation tools")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config (default `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a labeled synthetic corpus.
    GenCorpus {
        /// Number of frames, overriding `corpus.count`.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run snake gate detection on one PPM frame.
    Detect { image: PathBuf },
    /// Sweep the minimum length and fitness thresholds over a corpus.
    Roc,
    /// Compare LS and PnP position noise over distance.
    PoseBench,
    /// Replay an IMU / position log through the filter.
    EkfReplay { log: PathBuf },
    /// Initial states from which the alignment law passes the gate.
    Feasibility {
        /// Forward speeds to evaluate, overriding `feasibility.vx`.
        #[arg(long, num_args = 1..)]
        vx: Vec<f64>,
    },
    /// Closed-loop runs over the configured track, one per seed.
    Race,
    /// Monte Carlo of open-loop arc endpoints under entry errors.
    ArcStudy,
}

/// Configuration problems, reported with exit code 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            gaterace::Error::Io { .. } => anyhow::Error::new(e),
            other => Invalid(other.to_string()).into(),
        })?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join("config.toml"), cfg.to_toml())
        .with_context(|| format!("writing {}", dir.join("config.toml").display()))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))
}

fn gen_corpus(cfg: &RunConfig, n: Option<usize>) -> Result<()> {
    let dir = out_dir(cfg)?;
    let n = n.unwrap_or(cfg.corpus.count);
    let items = generate_corpus(&cfg.corpus.spec, &cfg.camera.model(), &cfg.bounds, n, cfg.seed);
    write_corpus(&items, cfg.seed, &dir)?;
    let gates: usize = items.iter().map(|i| i.labels.len()).sum();
    println!("wrote {n} frames with {gates} labeled gates to {}", dir.display());
    Ok(())
}

fn detect(cfg: &RunConfig, image: &Path) -> Result<()> {
    let img = read_ppm(image)?;
    let dets = snake_gate_detect(&img, &cfg.detector, &cfg.bounds);
    let dir = out_dir(cfg)?;
    let path = dir.join("detections.csv");
    write_with(&path, |w| {
        writeln!(w, "id,cf,tl_x,tl_y,tr_x,tr_y,bl_x,bl_y,br_x,br_y")?;
        for (i, d) in dets.iter().enumerate() {
            write!(w, "{i},{:.6}", d.cf)?;
            for c in &d.refined {
                write!(w, ",{:.3},{:.3}", c.x, c.y)?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    println!("{}: {} detection(s)", image.display(), dets.len());
    for (i, d) in dets.iter().enumerate() {
        let c = d.centroid();
        println!("  #{i} cf {:.3} center ({:.1}, {:.1}) size {:.1}px", d.cf, c.x, c.y, d.size());
    }
    Ok(())
}

fn roc(cfg: &RunConfig) -> Result<()> {
    let corpus = match &cfg.roc.corpus_dir {
        Some(d) => load_corpus(d)?,
        None => generate_corpus(
            &cfg.corpus.spec,
            &cfg.camera.model(),
            &cfg.bounds,
            cfg.corpus.count,
            cfg.seed,
        ),
    };
    let r = &cfg.roc;
    let rows = evaluate_roc(&corpus, &r.sigma_l, &r.sigma_cf, r.repeats, &cfg.detector, &cfg.bounds, r.match_tol);
    let evals = evaluate_corpus(&corpus, &cfg.detector, &cfg.bounds, r.repeats, r.match_tol);
    let bins = clean_tpr_by_distance(&corpus, &evals, &r.distance_bins);

    let dir = out_dir(cfg)?;
    write_with(&dir.join("roc.csv"), |w| write_roc_csv(&rows, w))?;
    write_with(&dir.join("roc_distance.csv"), |w| write_distance_csv(&bins, w))?;
    println!("{} frames, {} repeat(s)", corpus.len(), r.repeats);
    println!("{:>8} {:>8} {:>8} {:>10}", "sigma_L", "sigma_cf", "tpr", "fp/image");
    for row in &rows {
        let tpr = row.tpr.map_or_else(|| "n/a".into(), |t| format!("{t:.3}"));
        println!("{:>8} {:>8} {:>8} {:>10.4}", row.sigma_l, row.sigma_cf, tpr, row.fp_per_image);
    }
    println!("clean-gate detection rate at sigma_L = {}:", cfg.detector.sigma_l);
    for b in &bins {
        let tpr = b.tpr().map_or_else(|| "n/a".into(), |t| format!("{t:.3}"));
        println!("  {:.1}-{:.1} m: {tpr} ({} gates)", b.lo, b.hi, b.gates);
    }
    Ok(())
}

fn pose_bench(cfg: &RunConfig) -> Result<()> {
    let rows = pose_noise_benchmark(&cfg.pose_bench_config());
    let dir = out_dir(cfg)?;
    write_with(&dir.join("pose_bench.csv"), |w| write_bench_csv(&rows, w))?;
    for r in &rows {
        println!(
            "{:>9} d={:.1} m att={:>4.1} deg rmse={:.4} m{}",
            r.method.to_string(),
            r.distance,
            r.att_noise_deg,
            r.rmse,
            if r.failures > 0 { format!(" ({} failures)", r.failures) } else { String::new() }
        );
    }
    Ok(())
}

fn ekf_replay(cfg: &RunConfig, log: &Path) -> Result<()> {
    let f = fs::File::open(log).with_context(|| format!("opening {}", log.display()))?;
    let rows = parse_replay(io::BufReader::new(f), log)?;
    let result = replay(&rows, &cfg.ekf, cfg.drag)?;
    let dir = out_dir(cfg)?;
    write_with(&dir.join("replay.csv"), |w| write_replay_csv(&result.rows, w))?;
    println!("{} rows, {} position updates", rows.len(), result.updates);
    if let Some(g) = result.largest_gap {
        println!(
            "largest measurement gap {:.2} s ending at t = {:.2} s; estimate jump {:.3} m",
            g.gap, g.t, g.jump
        );
    }
    Ok(())
}

fn feasibility(cfg: &RunConfig, vx: &[f64]) -> Result<()> {
    let base = cfg.feasibility_config();
    let mut speeds = if vx.is_empty() { vec![base.vx] } else { vx.to_vec() };
    if let Some(bad) = speeds.iter().find(|v| !(**v > 0.0)) {
        return Err(Invalid(format!("--vx must be > 0 (got {bad})")).into());
    }
    speeds.sort_by(f64::total_cmp);
    speeds.dedup();
    let dir = out_dir(cfg)?;
    let mut grids: Vec<(f64, FeasibilityGrid)> = Vec::new();
    for &v in &speeds {
        let c = gaterace::control::FeasibilityConfig { vx: v, ..base.clone() };
        let grid = feasibility_region(&c);
        write_with(&dir.join(format!("feasibility_vx{v:.2}.csv")), |w| write_feasibility_csv(&grid, w))?;
        write_with(&dir.join(format!("boundary_vx{v:.2}.csv")), |w| write_boundary_csv(&grid, w))?;
        let cells = grid.xs.len() * grid.ys.len();
        println!("vx = {v:.2} m/s: {} of {cells} start cells feasible", grid.count());
        grids.push((v, grid));
    }
    for pair in grids.windows(2) {
        let ((slow, a), (fast, b)) = (&pair[0], &pair[1]);
        let outside = b.cells_outside(a);
        let cells = (a.xs.len() * a.ys.len()) as f64;
        println!(
            "vx = {fast:.2} region inside vx = {slow:.2} region except {outside} cell(s) ({:.2}%)",
            100.0 * outside as f64 / cells
        );
    }
    Ok(())
}

fn race(cfg: &RunConfig) -> Result<()> {
    let track = cfg.track()?;
    let seeds = cfg.race_seeds();
    let logs = run_batch(&track, &cfg.race_config(), &seeds)?;
    let dir = out_dir(cfg)?;
    for log in &logs {
        let s = log.summary.seed;
        write_with(&dir.join(format!("race_{s}.csv")), |w| log.write_csv(w))?;
        write_with(&dir.join(format!("events_{s}.jsonl")), |w| log.write_events(w))?;
    }
    write_with(&dir.join("race_summary.csv"), |w| write_summary_csv(&logs, w))?;
    let mut complete = 0;
    for log in &logs {
        let s = &log.summary;
        complete += s.completed as usize;
        let jump = s.jumps.iter().cloned().fold(0.0, f64::max);
        println!(
            "seed {:>3}: {}/{} gates, {:.2} s, avg {:.2} m/s, largest reacquisition jump {:.3} m{}",
            s.seed,
            s.gates_passed,
            s.gates,
            s.duration,
            s.avg_speed,
            jump,
            s.crash.as_ref().map(|c| format!(", crash: {c}")).unwrap_or_default()
        );
    }
    println!("{complete}/{} runs passed every gate", logs.len());
    Ok(())
}

fn arc_study(cfg: &RunConfig) -> Result<()> {
    let (ends, stats) = arc_endpoint_study(&cfg.arc_study_config())?;
    let dir = out_dir(cfg)?;
    write_with(&dir.join("arc_endpoints.csv"), |w| {
        writeln!(w, "trial,err_along,err_across,duration,heading_change,altitude_change")?;
        for (i, e) in ends.iter().enumerate() {
            writeln!(
                w,
                "{i},{:.6},{:.6},{:.4},{:.6},{:.6}",
                e.error[0], e.error[1], e.duration, e.heading_change, e.altitude_change
            )?;
        }
        Ok(())
    })?;
    println!(
        "{} arcs: sigma along {:.4} m, across {:.4} m; mean ({:.4}, {:.4}) m; mean endpoint error {:.3} m",
        ends.len(),
        stats.sigma[0],
        stats.sigma[1],
        stats.mean[0],
        stats.mean[1],
        stats.mean_error
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    match &cli.cmd {
        Command::GenCorpus { n } => gen_corpus(&cfg, *n),
        Command::Detect { image } => {
            if !image.is_file() {
                bail!("{}: no such file", image.display());
            }
            detect(&cfg, image)
        }
        Command::Roc => roc(&cfg),
        Command::PoseBench => pose_bench(&cfg),
        Command::EkfReplay { log } => ekf_replay(&cfg, log),
        Command::Feasibility { vx } => feasibility(&cfg, vx),
        Command::Race => race(&cfg),
        Command::ArcStudy => arc_study(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let invalid = e.downcast_ref::<Invalid>().is_some()
                || matches!(e.downcast_ref::<gaterace::Error>(), Some(gaterace::Error::Invalid(_)));
            ExitCode::from(if invalid { 2 } else { 1 })
        }
    }
}

