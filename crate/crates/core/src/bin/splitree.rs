use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use splitree::config::ExperimentConfig;
use splitree::cpp::{BranchLaw, CppSampler};
use splitree::forward::{simulate_forward, ForwardOutcome};
use splitree::harness::{
    convergence_study, convergence_to_csv, reports_to_csv, run_validation, write_csv, write_text,
};
use splitree::mc::fold;
use splitree::moments::MomentContext;
use splitree::scale::{clonal_constants, survival_prob, ScaleGrid};
use splitree::{Error, LifespanDistribution, Result};

#[derive(Parser, Debug)]
#[command(name = "splitree", version, about = "Allelic partitions of splitting trees: theory and simulation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// key=value file; command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    b: Option<f64>,
    #[arg(long, global = true)]
    theta: Option<f64>,
    /// exp:RATE, fixed:VALUE, uniform:LO,HI or immortal
    #[arg(long, global = true)]
    lifespan: Option<LifespanDistribution>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    reps: Option<u64>,
    /// output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    grid_step: Option<f64>,
    #[arg(long, global = true)]
    horizon: Option<f64>,
    /// comma-separated times
    #[arg(long, global = true)]
    t: Option<String>,
    #[arg(long, global = true)]
    kmax: Option<usize>,
    #[arg(long, global = true)]
    cap: Option<u64>,
    /// worker threads, 0 for all cores
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// outer quadrature intervals
    #[arg(long, global = true)]
    nodes: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate W, W_theta and the survival probability
    Scale,
    /// Sample allelic partitions from the coalescent point process
    Simulate,
    /// Sample allelic partitions by forward simulation
    Forward,
    /// Evaluate spectrum distributions and moments
    Moments {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        order: u8,
    },
    /// Growth rate, psi'(alpha) and the limit constants c_k
    Limits,
    /// Compare theory with Monte Carlo; exit code 2 on any failed check
    Validate {
        /// comma-separated subset of checks
        #[arg(long)]
        checks: Option<String>,
    },
    /// Large-time convergence trends over a ladder of times
    Converge {
        /// comma-separated times
        #[arg(long)]
        ladder: Option<String>,
    },
}

fn build_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = g.b {
        cfg.b = v;
    }
    if let Some(v) = g.theta {
        cfg.theta = v;
    }
    if let Some(v) = g.lifespan {
        cfg.lifespan = v;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.reps {
        cfg.reps = v;
    }
    if let Some(v) = &g.out {
        cfg.out = v.clone();
    }
    if let Some(v) = g.grid_step {
        cfg.grid_step = v;
    }
    if let Some(v) = g.horizon {
        cfg.horizon = Some(v);
    }
    if let Some(v) = &g.t {
        cfg.apply("t", v)?;
    }
    if let Some(v) = g.kmax {
        cfg.k_max = v;
    }
    if let Some(v) = g.cap {
        cfg.cap = v;
    }
    if let Some(v) = g.threads {
        cfg.threads = v;
    }
    if let Some(v) = g.nodes {
        cfg.quadrature_nodes = v;
    }
    Ok(cfg)
}

fn spectrum_header(k_max: usize) -> String {
    let mut h = String::from("n,z0");
    for k in 1..=k_max {
        h.push_str(&format!(",a{k}"));
    }
    h
}

fn cmd_scale(cfg: &ExperimentConfig) -> Result<()> {
    let params = cfg.params()?;
    let horizon = cfg.grid_horizon();
    let gw = ScaleGrid::build(&params, cfg.grid_step, horizon, false)?;
    let gt = ScaleGrid::build(&params, cfg.grid_step, horizon, true)?;
    let stride = (gw.cells() / 1000).max(1);
    let mut rows = Vec::new();
    for j in (0..=gw.cells()).step_by(stride) {
        let t = gw.node(j);
        let surv = if j == 0 { 1.0 } else { survival_prob(&params, &gw, t)? };
        rows.push(vec![t.to_string(), gw.values()[j].to_string(), gt.values()[j].to_string(), surv.to_string()]);
    }
    let path = cfg.out.join("scale.csv");
    write_csv(&path, "t,w,w_theta,survival", &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_simulate(cfg: &ExperimentConfig) -> Result<()> {
    let params = cfg.params()?;
    let grid = ScaleGrid::build(&params, cfg.grid_step, cfg.grid_horizon(), false)?;
    let mut rows = Vec::new();
    for &t in &cfg.times {
        let law = BranchLaw::new(&grid, 0.0, t)?;
        let k_max = cfg.k_max;
        let part: Vec<Vec<String>> = fold(cfg.seed, cfg.reps, cfg.threads, |acc: &mut Vec<Vec<String>>, rng, i| {
            let s = CppSampler::new().spectrum(&law, params.theta, rng);
            let mut r = vec![t.to_string(), i.to_string(), s.n.to_string(), s.z0.to_string()];
            r.extend((1..=k_max).map(|k| s.a(k as u64).to_string()));
            acc.push(r);
        })?;
        rows.extend(part);
    }
    let path = cfg.out.join("simulate.csv");
    write_csv(&path, &format!("t,replica,{}", spectrum_header(cfg.k_max)), &rows)?;
    println!("wrote {} replicas to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_forward(cfg: &ExperimentConfig) -> Result<()> {
    let params = cfg.params()?;
    let mut rows = Vec::new();
    for &t in &cfg.times {
        let k_max = cfg.k_max;
        let part: Vec<Result<Vec<String>>> = fold(cfg.seed, cfg.reps, cfg.threads, |acc: &mut Vec<Result<Vec<String>>>, rng, i| {
            acc.push(simulate_forward(&params, t, cfg.cap, rng).map(|out| {
                let mut r = vec![t.to_string(), i.to_string()];
                match out {
                    ForwardOutcome::Survived(s) => {
                        r.extend(["1".into(), "0".into(), s.n.to_string(), s.z0.to_string()]);
                        r.extend((1..=k_max).map(|k| s.a(k as u64).to_string()));
                    }
                    ForwardOutcome::Extinct => {
                        r.extend(["0".into(), "0".into(), "0".into(), "0".into()]);
                        r.extend((1..=k_max).map(|_| "0".to_string()));
                    }
                    ForwardOutcome::Overflow => {
                        r.extend(["0".into(), "1".into()]);
                        r.extend((0..k_max + 2).map(|_| String::new()));
                    }
                }
                r
            }));
        })?;
        for r in part {
            rows.push(r?);
        }
    }
    let path = cfg.out.join("forward.csv");
    write_csv(&path, &format!("t,replica,survived,overflow,{}", spectrum_header(cfg.k_max)), &rows)?;
    println!("wrote {} runs to {}", rows.len(), path.display());
    Ok(())
}

fn context(cfg: &ExperimentConfig) -> Result<MomentContext> {
    MomentContext::new(cfg.params()?, cfg.grid_step, cfg.grid_horizon())?.with_quadrature_nodes(cfg.quadrature_nodes)
}

fn cmd_moments(cfg: &ExperimentConfig, order: u8) -> Result<()> {
    let ctx = context(cfg)?;
    let mut rows = Vec::new();
    let mut push = |q: &str, k: usize, l: Option<usize>, t: f64, v: f64| {
        rows.push(vec![q.to_string(), k.to_string(), l.map(|l| l.to_string()).unwrap_or_default(), t.to_string(), v.to_string()]);
    };
    for &t in &cfg.times {
        for k in 0..=cfg.k_max {
            push("pmf_clonal", k, None, t, ctx.pmf_clonal(k as u64, t)?);
        }
        for k in 1..=cfg.k_max {
            push("pmf_population", k, None, t, ctx.pmf_population(k as u64, t)?);
        }
        for (i, m) in ctx.mean_spectrum_row(cfg.k_max, t)?.into_iter().enumerate() {
            push("mean_spectrum", i + 1, None, t, m);
        }
        if order == 2 {
            let so = ctx.second_order_matrix(cfg.k_max, t)?;
            let mean = ctx.mean_spectrum_row(cfg.k_max, t)?;
            for k in 1..=cfg.k_max {
                let mixed = ctx.mixed_mean_row(k, cfg.k_max, t)?;
                for (l, v) in mixed.into_iter().enumerate() {
                    push("mixed_mean", k, Some(l), t, v);
                }
                for l in k..=cfg.k_max {
                    let s = so[k - 1][l - 1];
                    push("second_order", k, Some(l), t, s);
                    let cov = s - mean[k - 1] * mean[l - 1] + if k == l { mean[k - 1] } else { 0.0 };
                    push("covariance", k, Some(l), t, cov);
                }
                push("product_with_population", k, None, t, ctx.product_with_population(k, t)?);
            }
        }
    }
    let path = cfg.out.join("moments.csv");
    write_csv(&path, "quantity,k,l,t,value", &rows)?;
    println!("wrote {} values to {}", rows.len(), path.display());
    Ok(())
}

fn cmd_limits(cfg: &ExperimentConfig) -> Result<()> {
    let params = cfg.params()?;
    let alpha = params.malthusian_alpha();
    let dpsi = params.psi_derivative(alpha);
    let mut rows = vec![
        vec!["alpha".into(), String::new(), alpha.to_string()],
        vec!["psi_prime_alpha".into(), String::new(), dpsi.to_string()],
    ];
    if params.theta > 0.0 {
        let c = clonal_constants(&params, cfg.k_max, 1e-10)?;
        for (i, v) in c.values.iter().enumerate() {
            rows.push(vec!["c".into(), (i + 1).to_string(), v.to_string()]);
        }
        if alpha > 0.0 {
            for (i, v) in c.values.iter().enumerate() {
                rows.push(vec!["c_over_psi_prime".into(), (i + 1).to_string(), (v / dpsi).to_string()]);
            }
        }
        rows.push(vec!["weighted_sum".into(), String::new(), c.weighted_sum().to_string()]);
    }
    let path = cfg.out.join("limits.csv");
    write_csv(&path, "quantity,k,value", &rows)?;
    println!("alpha = {alpha}, psi'(alpha) = {dpsi}; wrote {}", path.display());
    Ok(())
}

fn cmd_validate(cfg: &ExperimentConfig) -> Result<bool> {
    let rows = run_validation(cfg)?;
    let path = cfg.out.join("validation.csv");
    write_text(&path, &reports_to_csv(&rows))?;
    let failed: Vec<_> = rows.iter().filter(|r| !r.passed()).collect();
    for r in &failed {
        println!("FAIL {} ({:?})", r.quantity, r.score);
    }
    println!("{} checks, {} failed; wrote {}", rows.len(), failed.len(), path.display());
    Ok(failed.is_empty())
}

fn cmd_converge(cfg: &ExperimentConfig) -> Result<()> {
    let rows = convergence_study(cfg)?;
    let path = cfg.out.join("convergence.csv");
    write_text(&path, &convergence_to_csv(&rows))?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = build_config(&cli.global)?;
    match &cli.command {
        Command::Validate { checks: Some(c) } => cfg.apply("checks", c)?,
        Command::Converge { ladder: Some(l) } => cfg.apply("ladder", l)?,
        _ => {}
    }
    cfg.validate()?;
    match cli.command {
        Command::Scale => cmd_scale(&cfg)?,
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Forward => cmd_forward(&cfg)?,
        Command::Moments { order } => cmd_moments(&cfg, order)?,
        Command::Limits => cmd_limits(&cfg)?,
        Command::Validate { .. } => return cmd_validate(&cfg),
        Command::Converge { .. } => cmd_converge(&cfg)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Io(_)) {
                eprintln!("check the --out directory");
            }
            ExitCode::from(1)
        }
    }
}
