use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use spherelets::bench::{
    bench_curve, quartic_constant, rate_study, BenchDataset, DEFAULT_BENCH_SEED, RATE_CALIBRATION_CENTERS,
};
use spherelets::datasets::{
    enneper, euler_spiral, format_float, load_csv, noisy_spiral, sphere_sample, write_csv, Sampling,
};
use spherelets::denoise::{denoise, DenoiseConfig, Method};
use spherelets::embed::{s_tsne, DistanceMode, EmbedConfig};
use spherelets::numeric::seeded_gaussian;
use spherelets::partition::default_n_min;
use spherelets::{DataMatrix, Error, Fitter, SphereletModel, TreeConfig};

#[derive(Parser)]
#[command(name = "spherelets", version, about = "Spherical PCA toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenDataset {
    Euler,
    Spiral,
    Enneper,
    Sphere,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a synthetic point cloud.
    Generate {
        #[arg(long, value_enum)]
        dataset: GenDataset,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Arc-length range (euler), parameter-disk radius (enneper) or sphere radius.
        #[arg(long)]
        param_max: Option<f64>,
        #[arg(long)]
        clean_out: Option<PathBuf>,
    },
    /// Fit a piecewise spherical (or linear) manifold model.
    Fit {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        n_min: Option<usize>,
        #[arg(long, default_value = "spca")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project points onto a fitted model.
    Project {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report_mse: bool,
    },
    /// Denoise a point cloud.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "smbms")]
        method: String,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1)]
        iters: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a point cloud with (spherical) tSNE.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "spherical")]
        mode: String,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1000)]
        iters: usize,
        #[arg(long, default_value_t = 100.0)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// MSE against number of pieces for each method.
    Bench {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        eps_grid: String,
        #[arg(long, default_value = "spca,pca")]
        methods: String,
        #[arg(long, default_value_t = DEFAULT_BENCH_SEED)]
        seed: u64,
        #[arg(long)]
        n_min: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment error against segment scale on the Euler spiral.
    Rate {
        #[arg(long)]
        alpha_grid: String,
        #[arg(long, default_value = "spca,pca")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 4 } else { 3 })
        }
    }
}

fn provenance(seed: Option<u64>) -> Vec<String> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut lines = vec![
        format!("spherelets {}", env!("CARGO_PKG_VERSION")),
        format!("command: spherelets {}", args.join(" ")),
    ];
    if let Some(s) = seed {
        lines.push(format!("seed: {s}"));
    }
    lines
}

fn write_matrix(path: &PathBuf, x: &DataMatrix, seed: Option<u64>) -> Result<(), Error> {
    let out = BufWriter::new(File::create(path)?);
    write_csv(out, x, &provenance(seed))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| Error::Parameter(format!("bad {what} entry '{p}'")))
        })
        .collect()
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Generate {
            dataset,
            n,
            noise,
            seed,
            out,
            param_max,
            clean_out,
        } => {
            let noisy = |clean: &DataMatrix| -> Result<DataMatrix, Error> {
                let eps = seeded_gaussian(clean.nrows(), clean.ncols(), noise, seed.wrapping_add(1))?;
                Ok(clean + eps)
            };
            let (points, clean) = match dataset {
                GenDataset::Euler => {
                    let c = euler_spiral(n, param_max.unwrap_or(2.0), seed, Sampling::Random)?;
                    (noisy(&c.points)?, c.points)
                }
                GenDataset::Spiral => {
                    let c = noisy_spiral(n, noise, seed, Sampling::Random)?;
                    let clean = c.clean.expect("spiral samples carry their clean points");
                    (c.points, clean)
                }
                GenDataset::Enneper => {
                    let x = enneper(n, param_max.unwrap_or(1.0), seed)?;
                    (noisy(&x)?, x)
                }
                GenDataset::Sphere => {
                    let s = sphere_sample(n, 2, 3, &DVector::zeros(3), param_max.unwrap_or(1.0), seed)?;
                    (noisy(&s.points)?, s.points)
                }
            };
            write_matrix(&out, &points, Some(seed))?;
            if let Some(path) = clean_out {
                write_matrix(&path, &clean, Some(seed))?;
            }
        }
        Command::Fit {
            input,
            d,
            eps,
            n_min,
            method,
            out,
        } => {
            let x = load_csv(&input)?;
            let cfg = TreeConfig {
                d,
                eps,
                n_min: n_min.unwrap_or_else(|| default_n_min(d)),
                fitter: method.parse()?,
            };
            let mut model = SphereletModel::fit(&x, &cfg)?;
            model.provenance.command = Some(provenance(None)[1].clone());
            model.save(&out)?;
            println!("pieces: {}", model.pieces_count());
        }
        Command::Project {
            model,
            input,
            out,
            report_mse,
        } => {
            let model = SphereletModel::load(&model)?;
            let x = load_csv(&input)?;
            let projected = model.project_all(&x)?;
            write_matrix(&out, &projected, model.provenance.seed)?;
            if report_mse {
                let report = model.mse(&x)?;
                println!("mse: {}", format_float(report.overall));
                for (cell, v) in &report.per_cell {
                    println!("cell {cell}: n={} mse={}", report.counts[cell], format_float(*v));
                }
            }
        }
        Command::Denoise {
            input,
            method,
            k,
            sigma,
            iters,
            d,
            out,
        } => {
            let x = load_csv(&input)?;
            let cfg = DenoiseConfig {
                method: method.parse::<Method>()?,
                k,
                sigma,
                iters,
                d,
            };
            let result = denoise(&x, &cfg)?;
            write_matrix(&out, &result.points, None)?;
            if result.fallbacks > 0 {
                eprintln!("warning: {} local fits fell back to linear projection", result.fallbacks);
            }
        }
        Command::Embed {
            input,
            mode,
            d,
            m,
            k,
            sigma,
            iters,
            lr,
            seed,
            out,
            log,
        } => {
            let x = load_csv(&input)?;
            let cfg = EmbedConfig {
                m,
                d,
                k,
                sigma,
                iters,
                learning_rate: lr,
                mode: mode.parse::<DistanceMode>()?,
                seed,
                ..EmbedConfig::default()
            };
            let (result, dist) = s_tsne(&x, &cfg)?;
            write_matrix(&out, &result.y, Some(seed))?;
            if let Some(path) = log {
                let mut w = BufWriter::new(File::create(path)?);
                for line in provenance(Some(seed)) {
                    writeln!(w, "# {line}")?;
                }
                writeln!(w, "iter,kl,best_kl")?;
                for r in &result.log {
                    writeln!(w, "{},{},{}", r.iter, format_float(r.kl), format_float(r.best_kl))?;
                }
            }
            if dist.fallbacks > 0 {
                eprintln!("warning: {} neighbourhoods used Euclidean distances", dist.fallbacks);
            }
        }
        Command::Bench {
            dataset,
            d,
            eps_grid,
            methods,
            seed,
            n_min,
            out,
        } => {
            let spec: BenchDataset = dataset.parse()?;
            let (train, test) = spec.load(seed)?;
            let eps: Vec<f64> = parse_list(&eps_grid, "eps")?;
            let methods: Vec<Fitter> = parse_list(&methods, "method")?;
            let records = bench_curve(&train, &test, d, &eps, n_min.unwrap_or_else(|| default_n_min(d)), &methods)?;
            let mut w = BufWriter::new(File::create(out)?);
            for line in provenance(Some(seed)) {
                writeln!(w, "# {line}")?;
            }
            writeln!(w, "method,eps,pieces,train_mse,test_mse,wall_time_s,error")?;
            for r in records {
                writeln!(
                    w,
                    "{},{},{},{},{},{:.6},{}",
                    r.method.name(),
                    format_float(r.eps),
                    r.pieces,
                    format_float(r.train_mse),
                    format_float(r.test_mse),
                    r.wall_time,
                    r.error.unwrap_or_default().replace(',', ";")
                )?;
            }
        }
        Command::Rate {
            alpha_grid,
            methods,
            out,
        } => {
            let alphas: Vec<f64> = parse_list(&alpha_grid, "alpha")?;
            let methods: Vec<Fitter> = parse_list(&methods, "method")?;
            let curves = rate_study(&alphas, &methods, &RATE_CALIBRATION_CENTERS)?;
            let mut w = BufWriter::new(File::create(out)?);
            for line in provenance(None) {
                writeln!(w, "# {line}")?;
            }
            writeln!(w, "method,alpha,mse,slope,theta")?;
            for c in &curves {
                let theta = quartic_constant(c);
                for (a, m) in c.alphas.iter().zip(&c.mse) {
                    writeln!(
                        w,
                        "{},{},{},{},{}",
                        c.method.name(),
                        format_float(*a),
                        format_float(*m),
                        format_float(c.slope),
                        format_float(theta)
                    )?;
                }
            }
        }
    }
    Ok(())
}
