use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context as _};
use clap::{Parser, Subcommand};
use crn_core::cme::{build_generator, integrate_cme};
use crn_core::experiments::{run_named, EXPERIMENTS};
use crn_core::hje_continuous::{lax_oleinik, HamiltonianContext, LoOptions};
use crn_core::hje_discrete::{crandall_liggett_evolve, DiscreteHamiltonian, ResolventConfig};
use crn_core::rre::integrate_rre;
use crn_core::stochastic::{simulate_path, SeedRecord};
use crn_core::{CrnError, GridFunction, Lattice, ReactionNetwork};
use rayon::prelude::*;

mod inputs;
mod output;

use inputs::{load_distribution, load_grid_data, load_network, parse_vector, Expression, LoadedNetwork};
use output::{num, Provenance, RunManifest, Sink, Table};

#[derive(Parser)]
#[command(name = "crn", version, about = "Stochastic reaction networks and their Hamilton-Jacobi limits")]
struct Cli {
    /// Master seed for Monte Carlo streams
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "CRN_THREADS")]
    threads: Option<usize>,

    /// Output file; a manifest is written beside it
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Experiment configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a network and print its stoichiometry and mass vector
    Validate {
        /// Network file or catalog name
        network: String,
    },
    /// Sample jump paths with the Gillespie algorithm
    Ssa {
        network: String,
        #[arg(long)]
        h: f64,
        /// Initial position, comma separated
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        /// Time horizon
        #[arg(long = "T", alias = "horizon")]
        horizon: f64,
        #[arg(long, default_value_t = 1)]
        paths: usize,
    },
    /// Evolve the master equation on a truncated lattice
    Cme {
        network: String,
        #[arg(long)]
        h: f64,
        /// Box extent per species, comma separated
        #[arg(long = "box")]
        extent: String,
        #[arg(long)]
        t: f64,
        /// `delta:x1,x2,...` or a CSV from a previous run
        #[arg(long)]
        p0: String,
    },
    /// Evolve the lattice Hamilton-Jacobi scheme by backward Euler
    Hje {
        network: String,
        #[arg(long)]
        h: f64,
        #[arg(long = "box")]
        extent: String,
        #[arg(long)]
        dt: f64,
        #[arg(long)]
        t: f64,
        /// Expression in the species names, or a CSV from a previous run
        #[arg(long, allow_hyphen_values = true)]
        u0: String,
        /// Value of u0 outside the box (default: its value at the far corner)
        #[arg(long, allow_hyphen_values = true)]
        far_field: Option<f64>,
    },
    /// Integrate the rate equation
    Rre {
        network: String,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long = "T", alias = "horizon")]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Evaluate the Lax-Oleinik formula by minimising the discrete action
    Lo {
        network: String,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long)]
        t: f64,
        #[arg(long, allow_hyphen_values = true)]
        u0: String,
        /// Interior path nodes
        #[arg(long, default_value_t = 32)]
        nodes: usize,
        /// Half-width of the endpoint search box
        #[arg(long, default_value_t = 3.0)]
        y_radius: f64,
        #[arg(long, default_value_t = 41)]
        y_points: usize,
    },
    /// Run a named experiment and write its report
    Exp {
        /// One of convergence_study, ldp_single_time, mean_field_check, landscape_limit
        name: String,
    },
}

/// Bad input exits with 2, failed computations or checks with 1.
enum Failure {
    Usage(anyhow::Error),
    Run(anyhow::Error),
    ChecksFailed,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<CrnError>() {
            Some(c) if is_input_error(c) => Failure::Usage(e),
            _ => Failure::Run(e),
        }
    }
}

impl From<CrnError> for Failure {
    fn from(e: CrnError) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn is_input_error(e: &CrnError) -> bool {
    use CrnError::*;
    matches!(
        e,
        Syntax { .. }
            | NegativeRate { .. }
            | NonIntegerStoichiometry { .. }
            | DuplicateSpecies(_)
            | UnknownSpecies { .. }
            | InvalidNetwork(_)
            | DimensionMismatch { .. }
            | InvalidArgument(_)
            | NegativeState(_)
            | OffLattice(_)
            | TooFewPaths(_)
            | LatticeTooLarge { .. }
            | UnknownExperiment(_)
    )
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

type Outcome<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::ChecksFailed) => ExitCode::from(1),
    }
}

fn run(cli: &Cli) -> Outcome<()> {
    let started = output::unix_now();
    let mut prov = Provenance::default();
    let mut sink = Sink::new(cli.out.clone());
    let mut seed = None;
    let mut passed = true;

    match &cli.command {
        Command::Validate { network } => {
            let n = network_input(network, &mut prov)?;
            print!("{}", describe(&n));
            return Ok(());
        }
        Command::Ssa { network, h, x0, horizon, paths } => {
            let net = network_input(network, &mut prov)?;
            let x0 = parse_vector(x0, net.n_species(), "x0").map_err(usage)?;
            let s = cli.seed.unwrap_or(0);
            seed = Some(s);
            record(&mut prov, "ssa", &[("h", num(*h)), ("x0", fmt_vec(&x0)), ("T", num(*horizon)), ("paths", paths.to_string()), ("seed", s.to_string())]);
            let samples = (0..*paths as u64)
                .into_par_iter()
                .map(|k| simulate_path(&net, *h, &x0, *horizon, SeedRecord::new(s, k)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut t = Table::new(["path_id".to_string(), "time".to_string()].into_iter().chain(net.species().iter().cloned()));
            for (k, p) in samples.iter().enumerate() {
                let times = std::iter::once(0.0).chain(p.jump_times.iter().copied());
                for (time, state) in times.zip(&p.states) {
                    t.push(row(k, time, state.iter().map(|&c| c as f64 * h)));
                }
                let last = p.final_counts().iter().map(|&c| c as f64 * h);
                t.push(row(k, *horizon, last));
            }
            sink.table(&t)?;
        }
        Command::Cme { network, h, extent, t, p0 } => {
            let net = network_input(network, &mut prov)?;
            let lat = lattice(&net, *h, extent)?;
            if Path::new(p0).is_file() {
                prov.file(Path::new(p0)).map_err(usage)?;
            }
            record(&mut prov, "cme", &[("h", num(*h)), ("box", extent.clone()), ("t", num(*t)), ("p0", p0.clone())]);
            let p0 = load_distribution(p0, net.n_species(), &lat).map_err(usage)?;
            let gen = build_generator(&net, &lat)?;
            let p = integrate_cme(&gen, &p0, *t)?;
            eprintln!("total probability {}", p.sum());
            sink.table(&lattice_table(&net, &p, "probability"))?;
        }
        Command::Hje { network, h, extent, dt, t, u0, far_field } => {
            let net = network_input(network, &mut prov)?;
            let lat = lattice(&net, *h, extent)?;
            if Path::new(u0).is_file() {
                prov.file(Path::new(u0)).map_err(usage)?;
            }
            record(&mut prov, "hje", &[("h", num(*h)), ("box", extent.clone()), ("dt", num(*dt)), ("t", num(*t)), ("u0", u0.clone()), ("far_field", format!("{far_field:?}"))]);
            let f = load_grid_data(u0, net.species(), &lat, *far_field).map_err(usage)?;
            let ctx = DiscreteHamiltonian::new(&net, &lat)?;
            let ev = crandall_liggett_evolve(&ctx, &f, *t, &ResolventConfig::new(*dt))?;
            eprintln!("{} steps, u in [{}, {}]", ev.steps, ev.u.inf(), ev.u.sup());
            sink.table(&lattice_table(&net, &ev.u, "u"))?;
        }
        Command::Rre { network, x0, horizon, dt } => {
            let net = network_input(network, &mut prov)?;
            let x0 = parse_vector(x0, net.n_species(), "x0").map_err(usage)?;
            record(&mut prov, "rre", &[("x0", fmt_vec(&x0)), ("T", num(*horizon)), ("dt", num(*dt))]);
            let path = integrate_rre(&net, &x0, *horizon, *dt)?;
            let mut t = Table::new(std::iter::once("time".to_string()).chain(net.species().iter().cloned()));
            for s in &path {
                t.push(std::iter::once(num(s.t)).chain(s.x.iter().map(|&v| num(v))).collect());
            }
            sink.table(&t)?;
        }
        Command::Lo { network, x, t, u0, nodes, y_radius, y_points } => {
            let net = network_input(network, &mut prov)?;
            let x = parse_vector(x, net.n_species(), "x").map_err(usage)?;
            record(&mut prov, "lo", &[("x", fmt_vec(&x)), ("t", num(*t)), ("u0", u0.clone()), ("nodes", nodes.to_string()), ("y_radius", num(*y_radius)), ("y_points", y_points.to_string())]);
            let expr = Expression::parse(u0, net.species()).map_err(usage)?;
            let ctx = HamiltonianContext::new(&net);
            let opts = LoOptions { nodes: *nodes, y_radius: *y_radius, y_points: *y_points, ..LoOptions::default() };
            let res = lax_oleinik(&ctx, &|y: &[f64]| expr.eval(y), &x, *t, &opts)?;
            println!("value = {}", res.value);
            println!("action = {}", res.action);
            println!("argmax_y = {}", fmt_vec(&res.argmax_y));
            println!("converged = {}", res.quality.converged);
            println!("optimizer_gap = {}", res.quality.optimizer_gap);
            if cli.out.is_some() {
                let delta = t / (res.path.len() - 1) as f64;
                let mut tab = Table::new(["node".to_string(), "time".to_string()].into_iter().chain(net.species().iter().cloned()));
                for (k, g) in res.path.iter().enumerate() {
                    tab.push(row(k, k as f64 * delta, g.iter().copied()));
                }
                sink.table(&tab)?;
            }
            passed = res.quality.converged;
        }
        Command::Exp { name } => {
            if !EXPERIMENTS.contains(&name.as_str()) {
                return Err(usage(anyhow!("unknown experiment `{name}`; expected one of {}", EXPERIMENTS.join(", "))));
            }
            let mut table = match &cli.config {
                Some(path) => {
                    prov.file(path).map_err(usage)?;
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(usage)?;
                    text.parse::<toml::Table>().with_context(|| format!("in {}", path.display())).map_err(usage)?
                }
                None => toml::Table::new(),
            };
            let net_spec = match table.remove("network") {
                Some(toml::Value::String(s)) => resolve_beside(&s, cli.config.as_deref()),
                Some(other) => return Err(usage(anyhow!("`network` must be a string, got {other}"))),
                None => default_network(name).to_string(),
            };
            let net = network_input(&net_spec, &mut prov)?;
            record(&mut prov, "exp", &[("name", name.clone()), ("network", net_spec), ("seed", format!("{:?}", cli.seed))]);
            let report = run_named(name, &net, &table, cli.seed)?;
            seed = report.seed;
            sink.text(&(report.to_json() + "\n"))?;
            if let Some(out) = &cli.out {
                for (key, s) in &report.series {
                    let mut t = Table::new(s.columns.iter().cloned());
                    for r in &s.rows {
                        t.push(r.iter().map(|&v| num(v)).collect());
                    }
                    sink.table_at(&series_path(out, key), &t)?;
                }
            }
            for (k, ok) in &report.checks {
                eprintln!("{} {k}", if *ok { "pass" } else { "FAIL" });
            }
            passed = report.pass;
        }
    }

    if let Some(out) = &cli.out {
        RunManifest::new(prov, seed, started, sink.written()).write_beside(out)?;
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::ChecksFailed)
    }
}

fn network_input(spec: &str, prov: &mut Provenance) -> Outcome<ReactionNetwork> {
    let LoadedNetwork { net, source } = load_network(spec).map_err(usage)?;
    match source {
        Some(p) => prov.file(&p).map_err(usage)?,
        None => prov.arg("network", spec),
    }
    Ok(net)
}

fn record(prov: &mut Provenance, command: &str, args: &[(&str, String)]) {
    prov.arg("command", command);
    for (k, v) in args {
        prov.arg(k, v);
    }
}

fn lattice(net: &ReactionNetwork, h: f64, extent: &str) -> Outcome<Lattice> {
    let ext = parse_vector(extent, net.n_species(), "box").map_err(usage)?;
    Ok(Lattice::from_extent(h, &ext)?)
}

fn lattice_table(net: &ReactionNetwork, g: &GridFunction, column: &str) -> Table {
    let lat = &g.lattice;
    let mut t = Table::new(
        std::iter::once("index".to_string())
            .chain(net.species().iter().cloned())
            .chain(std::iter::once(column.to_string())),
    );
    for (i, &v) in g.values.iter().enumerate() {
        t.push(
            std::iter::once(i.to_string())
                .chain(lat.position(i).into_iter().map(num))
                .chain(std::iter::once(num(v)))
                .collect(),
        );
    }
    t
}

fn row(id: usize, time: f64, values: impl Iterator<Item = f64>) -> Vec<String> {
    [id.to_string(), num(time)].into_iter().chain(values.map(num)).collect()
}

fn fmt_vec(v: &[f64]) -> String {
    format!("({})", v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(","))
}

fn describe(net: &ReactionNetwork) -> String {
    let mut s = format!("N={}\nM={}\n", net.n_species(), net.n_reactions());
    s += &format!("species=({})\n", net.species().join(","));
    for j in 0..net.n_reactions() {
        let nu: Vec<String> = net.reaction_vector(j).iter().map(|v| v.to_string()).collect();
        s += &format!("nu[{j}]=({})\n", nu.join(","));
    }
    match net.mass_vector() {
        Some(m) => s += &format!("m={}\n", fmt_vec(m)),
        None => s += "m=none\n",
    }
    s
}

fn default_network(experiment: &str) -> &'static str {
    match experiment {
        "mean_field_check" => "ab",
        _ => "birth_death",
    }
}

/// Network paths in a config are relative to the config file.
fn resolve_beside(spec: &str, config: Option<&Path>) -> String {
    match config.and_then(Path::parent) {
        Some(dir) if !Path::new(spec).is_absolute() && dir.join(spec).exists() => dir.join(spec).display().to_string(),
        _ => spec.to_string(),
    }
}

/// `report.json` + `errors` -> `report.errors.csv`.
fn series_path(out: &Path, key: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.{key}.csv"))
}
