use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use dvss::experiment::{
    build_graph, build_problem, Experiment, GraphSpec, ProblemSpec, RunConfig, DEFAULT_GRAPH_SEED,
    DEFAULT_PROBLEM_SEED,
};
use dvss::metrics::{
    complexity_sweep, ensemble, format_count, format_float, linear_fit, write_csv, EnsembleSeries,
};
use dvss::problems::{SamplingMode, StochasticProblem, DEFAULT_NU_RADIUS};

use crate::config;
use crate::{Cli, CliError, Command, GlobalOpts};

type Metadata = Vec<(String, String)>;

pub fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Analyze { epsilons } => analyze(g, epsilons),
        Command::Run => simulate(g, Some(1)),
        Command::Mc => simulate(g, None),
        Command::Sweep => sweep(g),
        Command::Compare { configs } => compare(g, configs),
        Command::GenerateGraphs { n, p, count } => generate_graphs(g, *n, *p, *count),
        Command::GenerateProblem {
            n,
            d,
            eig_lo,
            eig_hi,
            zeros,
            noise_sd,
        } => generate_problem(g, *n, *d, *eig_lo, *eig_hi, *zeros, *noise_sd),
    }
}

fn require_config(g: &GlobalOpts) -> Result<&Path, CliError> {
    g.config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config is required for this command".into()))
}

fn load_config(g: &GlobalOpts, path: &Path) -> Result<RunConfig, CliError> {
    let mut cfg = config::load(path)?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(s) = g.graph_seed {
        cfg.set_graph_seed(s);
    }
    if let Some(s) = g.problem_seed {
        cfg.set_problem_seed(s);
    }
    Ok(cfg)
}

fn open_output(g: &GlobalOpts, cfg_out: Option<&PathBuf>) -> Result<Box<dyn Write>, CliError> {
    match g.out.as_ref().or(cfg_out) {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            }
            let f = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn io_err(e: io::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn metadata(exp: &Experiment, hash: &str, replications: usize) -> Metadata {
    let c = exp.problem.constants();
    let cfg = &exp.config;
    let mut m = vec![
        ("dvss_version".to_string(), dvss::VERSION.to_string()),
        ("config_hash".to_string(), hash.to_string()),
    ];
    if let Some(name) = &cfg.name {
        m.push(("name".into(), name.clone()));
    }
    m.push(("algorithm".into(), cfg.algorithm.label().into()));
    m.push((
        "schedule".into(),
        serde_json::to_string(&cfg.schedule).expect("schedule serialises"),
    ));
    m.push(("step".into(), exp.step_note.clone()));
    m.push(("horizon".into(), cfg.horizon.to_string()));
    m.push((
        "seeds".into(),
        format!("{}..{}", cfg.seed, cfg.seed + replications as u64 - 1),
    ));
    m.push(("replications".into(), replications.to_string()));
    m.push(("rho1".into(), format_float(exp.rho1)));
    m.push(("eta".into(), format_float(c.eta)));
    m.push(("lip".into(), format_float(c.lip)));
    m.push(("nu".into(), format_float(c.nu)));
    m
}

fn run_ensemble(exp: &Experiment, replications: usize) -> Result<EnsembleSeries, CliError> {
    let sim = exp.simulation();
    ensemble(&sim, replications, exp.config.seed).map_err(|e| CliError::Config(e.to_string()))
}

fn check_divergence(exp: &Experiment, series: &EnsembleSeries) -> Result<(), CliError> {
    if exp.config.fail_on_divergence && series.diverged_count() > 0 {
        return Err(CliError::Divergence(format!(
            "{} of {} replications diverged (seeds {:?})",
            series.diverged_count(),
            series.statuses.len(),
            series.diverged_seeds
        )));
    }
    Ok(())
}

fn analyze(g: &GlobalOpts, epsilons: &[f64]) -> Result<(), CliError> {
    let cfg = load_config(g, require_config(g)?)?;
    let targets = match (&cfg.sweep, epsilons.is_empty()) {
        (_, false) => epsilons.to_vec(),
        (Some(s), true) => s.epsilons()?,
        (None, true) => Vec::new(),
    };
    let exp = Experiment::build(cfg)?;
    let report = exp.theory_report(&targets)?;
    // the config's `out` names a CSV, so the report only follows --out
    let mut out = open_output(g, None)?;
    serde_json::to_writer_pretty(&mut out, &report).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn simulate(g: &GlobalOpts, force_replications: Option<usize>) -> Result<(), CliError> {
    let mut cfg = load_config(g, require_config(g)?)?;
    if let Some(r) = force_replications {
        cfg.replications = r;
    }
    let hash = config::hash(&cfg);
    let exp = Experiment::build(cfg)?;
    let r = exp.config.replications;
    let series = run_ensemble(&exp, r)?;
    let mut meta = metadata(&exp, &hash, r);
    meta.push(("diverged_count".into(), series.diverged_count().to_string()));
    let mut out = open_output(g, exp.config.out.as_ref())?;
    write_csv(&series, &meta, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)?;
    check_divergence(&exp, &series)
}

fn sweep(g: &GlobalOpts) -> Result<(), CliError> {
    let cfg = load_config(g, require_config(g)?)?;
    let targets = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs a [sweep] table".into()))?
        .epsilons()?;
    let hash = config::hash(&cfg);
    let exp = Experiment::build(cfg)?;
    let r = exp.config.replications;
    let series = run_ensemble(&exp, r)?;
    let rows = complexity_sweep(&series, &targets).map_err(|e| CliError::Config(e.to_string()))?;
    let mut meta = metadata(&exp, &hash, r);
    let reached: Vec<_> = rows.iter().filter(|r| !r.censored()).collect();
    if reached.len() >= 2 {
        let inv: Vec<f64> = reached.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
        let samples: Vec<f64> = reached.iter().map(|r| r.samples.unwrap_or(0.0).max(1.0).ln()).collect();
        let comms: Vec<f64> = reached.iter().map(|r| r.comms.unwrap_or(0.0)).collect();
        if let Ok(f) = linear_fit(&inv, &samples) {
            meta.push(("samples_loglog_slope".into(), format!("{} (r2 {})", format_float(f.slope), format_float(f.r2))));
        }
        if let Ok(f) = linear_fit(&inv, &comms) {
            meta.push(("comms_vs_log_slope".into(), format!("{} (r2 {})", format_float(f.slope), format_float(f.r2))));
        }
    }
    meta.push(("diverged_count".into(), series.diverged_count().to_string()));
    let mut out = open_output(g, exp.config.out.as_ref())?;
    for (k, v) in &meta {
        writeln!(out, "# {k}: {v}").map_err(io_err)?;
    }
    writeln!(out, "epsilon,iterations,samples,comms,censored").map_err(io_err)?;
    for row in &rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            format_float(row.epsilon),
            row.iterations.map(|v| v.to_string()).unwrap_or_default(),
            row.samples.map(format_count).unwrap_or_default(),
            row.comms.map(format_count).unwrap_or_default(),
            row.censored()
        )
        .map_err(io_err)?;
    }
    out.flush().map_err(io_err)?;
    check_divergence(&exp, &series)
}

struct Member {
    label: String,
    series: EnsembleSeries,
}

fn field(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

/// `<stem>_by_iteration.csv` and `<stem>_by_samples.csv` next to `out`.
fn compare_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("compare");
    let dir = out.parent().unwrap_or_else(|| Path::new(""));
    (
        dir.join(format!("{stem}_by_iteration.csv")),
        dir.join(format!("{stem}_by_samples.csv")),
    )
}

fn compare(g: &GlobalOpts, extra: &[PathBuf]) -> Result<(), CliError> {
    let mut paths: Vec<PathBuf> = g.config.iter().cloned().collect();
    paths.extend(extra.iter().cloned());
    if paths.len() < 2 {
        return Err(CliError::Config("compare needs at least two configs".into()));
    }
    let out = g
        .out
        .clone()
        .ok_or_else(|| CliError::Config("compare needs --out (two files are written)".into()))?;
    let mut members: Vec<Member> = Vec::new();
    let mut shared: Option<(GraphSpec, ProblemSpec)> = None;
    let mut hashes = Vec::new();
    for path in &paths {
        let cfg = load_config(g, path)?;
        let key = (cfg.graph.clone(), cfg.problem.clone());
        match &shared {
            None => shared = Some(key),
            Some(s) if *s != key => {
                return Err(CliError::Config(format!(
                    "{} uses a different graph or problem than {}",
                    path.display(),
                    paths[0].display()
                )))
            }
            _ => {}
        }
        hashes.push(config::hash(&cfg));
        let exp = Experiment::build(cfg)?;
        let series = run_ensemble(&exp, exp.config.replications)?;
        check_divergence(&exp, &series)?;
        let mut label = exp
            .config
            .name
            .clone()
            .unwrap_or_else(|| exp.config.algorithm.label().to_string());
        if members.iter().any(|m| m.label == label) {
            label = format!("{label}_{}", members.len());
        }
        members.push(Member { label, series });
    }
    let (by_iter, by_samples) = compare_paths(&out);
    let header_meta = |w: &mut dyn Write| -> io::Result<()> {
        writeln!(w, "# dvss_version: {}", dvss::VERSION)?;
        for (m, h) in members.iter().zip(&hashes) {
            writeln!(w, "# config_hash {}: {h}", m.label)?;
        }
        Ok(())
    };
    let create = |p: &Path| -> Result<BufWriter<File>, CliError> {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    };

    let mut w = create(&by_iter)?;
    header_meta(&mut w).map_err(io_err)?;
    let mut cols = vec!["k".to_string()];
    for m in &members {
        for c in ["e_mean", "e_se", "samples_cum", "comms_cum"] {
            cols.push(format!("{}_{c}", m.label));
        }
    }
    writeln!(w, "{}", cols.join(",")).map_err(io_err)?;
    let len = members.iter().map(|m| m.series.k.len()).max().unwrap_or(0);
    for k in 0..len {
        let mut row = vec![k.to_string()];
        for m in &members {
            let s = &m.series;
            let e = s.e.as_ref().and_then(|v| v.get(k));
            row.push(field(e.map(|x| x.mean)));
            row.push(field(e.and_then(|x| x.se)));
            row.push(s.samples_cum.get(k).map(|v| format_count(*v)).unwrap_or_default());
            row.push(s.comms_cum.get(k).map(|v| format_count(*v)).unwrap_or_default());
        }
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;

    // step functions of e against cumulative samples on the union grid
    let mut grid: Vec<f64> = members.iter().flat_map(|m| m.series.samples_cum.iter().copied()).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut w = create(&by_samples)?;
    header_meta(&mut w).map_err(io_err)?;
    let mut cols = vec!["samples".to_string()];
    cols.extend(members.iter().map(|m| format!("{}_e_mean", m.label)));
    writeln!(w, "{}", cols.join(",")).map_err(io_err)?;
    let mut cursor = vec![None::<usize>; members.len()];
    for s in &grid {
        let mut row = vec![format_count(*s)];
        for (j, m) in members.iter().enumerate() {
            let sc = &m.series.samples_cum;
            let mut idx = cursor[j];
            while idx.map_or(0, |i| i + 1) < sc.len() && sc[idx.map_or(0, |i| i + 1)] <= *s {
                idx = Some(idx.map_or(0, |i| i + 1));
            }
            cursor[j] = idx;
            let e = idx.and_then(|i| m.series.e.as_ref().map(|v| v[i].mean));
            row.push(field(e));
        }
        writeln!(w, "{}", row.join(",")).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn generate_graphs(g: &GlobalOpts, n: usize, p: f64, count: usize) -> Result<(), CliError> {
    let spec = match &g.config {
        Some(path) => load_config(g, path)?.graph,
        None => GraphSpec::ErdosRenyi {
            n,
            p,
            count,
            seed: Some(g.graph_seed.unwrap_or(DEFAULT_GRAPH_SEED)),
        },
    };
    let graph = build_graph(&spec)?;
    let mut out = open_output(g, None)?;
    writeln!(out, "{}", graph.to_json()).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn generate_problem(
    g: &GlobalOpts,
    n: usize,
    d: usize,
    eig_lo: f64,
    eig_hi: f64,
    zeros: usize,
    noise_sd: f64,
) -> Result<(), CliError> {
    let (spec, agents) = match &g.config {
        Some(path) => {
            let cfg = load_config(g, path)?;
            let n = build_graph(&cfg.graph)?.n();
            (cfg.problem, n)
        }
        None => (
            ProblemSpec::Regression {
                d,
                eig_lo,
                eig_hi,
                zeros,
                noise_sd: dvss::experiment::NoiseSpec::Shared(noise_sd),
                seed: Some(g.problem_seed.unwrap_or(DEFAULT_PROBLEM_SEED)),
                nu_radius: DEFAULT_NU_RADIUS,
                sampling: SamplingMode::default(),
            },
            n,
        ),
    };
    let problem = build_problem(&spec, agents)?;
    let mut out = open_output(g, None)?;
    writeln!(out, "{}", problem.to_json()).map_err(io_err)?;
    out.flush().map_err(io_err)
}
