use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use cardiac_sph::driver::scene::{load_scene, SceneConfig};
use cardiac_sph::driver::sim::{build_geometry, Simulation};
use cardiac_sph::driver::{oracle_aniso_gaussian, oracle_band_diffusion, oracle_exp_diffusion, Snapshot};
use cardiac_sph::error::{ConfigIssue, SimError};

#[derive(Parser)]
#[command(name = "cardiac-sph", version, about = "SPH cardiac electrophysiology and electromechanics")]
struct Cli {
    /// Output directory (default: the scene's `output.dir`, else `out/<name>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for particle loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the scene seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the snapshot interval.
    #[arg(long, global = true)]
    snapshot_every: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a scene to its end time.
    Run { scene: PathBuf },
    /// Generates and relaxes the particles of a scene.
    Relax { scene: PathBuf },
    /// Computes the pseudo-distance and fiber frames of a scene.
    Fibers { scene: PathBuf },
    /// Tabulates an analytic diffusion solution; parameters as `key=value`.
    Oracle {
        case: OracleCase,
        params: Vec<String>,
    },
    /// Runs a scene at successively halved particle spacings and reports the
    /// oracle error of each.
    Convergence {
        scene: PathBuf,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleCase {
    Band,
    Exp,
    Aniso,
}

fn load(path: &Path, cli: &Cli) -> Result<SceneConfig, SimError> {
    let text = fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    let mut cfg = load_scene(&text)?;
    if let Some(s) = cli.seed {
        cfg.scene.seed = s;
    }
    if let Some(t) = cli.snapshot_every {
        cfg.output.snapshot_every = Some(t);
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &SceneConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("out").join(&cfg.scene.name))
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn write_file(path: &Path, f: impl FnOnce(&mut std::io::BufWriter<fs::File>) -> std::io::Result<()>) -> Result<(), SimError> {
    let file = fs::File::create(path).map_err(|e| SimError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    f(&mut w).map_err(|e| SimError::io(path, e))
}

fn parse_params(params: &[String]) -> Result<HashMap<String, f64>, SimError> {
    let mut out = HashMap::new();
    for p in params {
        let bad = || SimError::Config(vec![ConfigIssue { path: p.clone(), message: "expected key=number".into() }]);
        let (k, v) = p.split_once('=').ok_or_else(bad)?;
        out.insert(k.trim().to_string(), v.trim().parse::<f64>().map_err(|_| bad())?);
    }
    Ok(out)
}

fn execute(cli: &Cli) -> Result<(), SimError> {
    match &cli.command {
        Command::Run { scene } => {
            let cfg = load(scene, cli)?;
            let dir = out_dir(cli, &cfg);
            let mut sim = Simulation::build(cfg, base_dir(scene))?;
            let summary = sim.run(Some(&dir))?;
            println!(
                "{}: {} particles, {} steps to t = {} in {:.2} s",
                summary.name, summary.particles, summary.steps, summary.time, summary.wall_seconds
            );
            if let Some((l2, linf)) = summary.oracle_error {
                println!("oracle error: L2 = {l2:.6e}, Linf = {linf:.6e}");
            }
            for w in &summary.warnings {
                println!("warning: {w}");
            }
            if let Some(p) = summary.probe_file {
                println!("probes: {}", p.display());
            }
        }
        Command::Relax { scene } => {
            let cfg = load(scene, cli)?;
            let dir = out_dir(cli, &cfg);
            let geo = build_geometry(&cfg, base_dir(scene))?;
            fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
            match geo.relax_cv {
                Some((a, b)) => println!("{} particles, nearest-neighbor CV {a:.4} -> {b:.4}", geo.points.len()),
                None => println!("{} particles, no relaxation configured", geo.points.len()),
            }
            let snap = Snapshot { positions: &geo.points, ..Default::default() };
            write_file(&dir.join("particles.vtk"), |w| snap.write_vtk(&cfg.scene.name, w))?;
        }
        Command::Fibers { scene } => {
            let cfg = load(scene, cli)?;
            let dir = out_dir(cli, &cfg);
            let geo = build_geometry(&cfg, base_dir(scene))?;
            fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
            let f0: Vec<_> = geo.frames.iter().map(|f| f.f0).collect();
            let s0: Vec<_> = geo.frames.iter().map(|f| f.s0).collect();
            let flagged: Vec<f64> = geo.fiber_flagged.iter().map(|&b| f64::from(u8::from(b))).collect();
            let mut snap = Snapshot { positions: &geo.points, ..Default::default() };
            if let Some(psi) = &geo.psi {
                snap.scalars.push(("psi", psi));
            }
            snap.scalars.push(("flagged", &flagged));
            snap.vectors.push(("f0", &f0));
            snap.vectors.push(("s0", &s0));
            write_file(&dir.join("fibers.vtk"), |w| snap.write_vtk(&cfg.scene.name, w))?;
            println!(
                "{} particles, {} frames copied from a neighbor",
                geo.points.len(),
                geo.fiber_flagged.iter().filter(|&&b| b).count()
            );
        }
        Command::Oracle { case, params } => {
            let p = parse_params(params)?;
            let get = |k: &str, d: f64| p.get(k).copied().unwrap_or(d);
            let n = get("n", 100.0).max(1.0) as usize;
            println!("coordinate,value");
            match case {
                OracleCase::Band => {
                    let (t, c0, d, z1, z2) = (get("t", 1.0), get("c0", 1.0), get("d", 1e-4), get("z1", 0.45), get("z2", 0.55));
                    let z0 = get("z0", 0.5 * (z1 + z2));
                    for i in 0..=n {
                        let z = i as f64 / n as f64;
                        println!("{z:.6},{:.12e}", oracle_band_diffusion(z, t, c0, d, z0, z1, z2));
                    }
                }
                OracleCase::Exp => {
                    let (t, c0, d, z0, t0) = (get("t", 1.0), get("c0", 1.0), get("d", 1e-4), get("z0", 0.5), get("t0", 1.0));
                    for i in 0..=n {
                        let z = i as f64 / n as f64;
                        println!("{z:.6},{:.12e}", oracle_exp_diffusion(z, t, c0, d, z0, t0));
                    }
                }
                OracleCase::Aniso => {
                    let (t, dxx, dyy) = (get("t", 1920.0), get("dxx", 0.09), get("dyy", 0.03));
                    let (x0, y0, len) = (get("x0", 100.0), get("y0", 100.0), get("length", 200.0));
                    for i in 0..=n {
                        let x = len * i as f64 / n as f64;
                        println!("{x:.6},{:.12e}", oracle_aniso_gaussian(x, y0, t, dxx, dyy, x0, y0));
                    }
                }
            }
        }
        Command::Convergence { scene, levels } => {
            let cfg = load(scene, cli)?;
            if cfg.oracle.is_none() {
                return Err(SimError::Config(vec![ConfigIssue {
                    path: "oracle".into(),
                    message: "convergence study needs an [oracle] block".into(),
                }]));
            }
            println!("dp,particles,l2,linf");
            for level in (0..*levels).rev() {
                let mut c = cfg.clone();
                c.scene.dp = cfg.scene.dp * f64::from(1u32 << level);
                let mut sim = Simulation::build(c.clone(), base_dir(scene))?;
                let summary = sim.run(None)?;
                let (l2, linf) = summary.oracle_error.unwrap_or((f64::NAN, f64::NAN));
                println!("{:.6e},{},{l2:.6e},{linf:.6e}", c.scene.dp, summary.particles);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
