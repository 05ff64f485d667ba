use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use jmstate::config::Config;
use jmstate::diagnostics::{conditional_residuals, observed_vs_predicted, transprob_gof};
use jmstate::domain::JointDataset;
use jmstate::io::{self, FitDocument, ProbabilityRow};
use jmstate::estimate::FittedModel;
use jmstate::msprep::expand_transitions;
use jmstate::simulate::simulate_dataset;
use jmstate::transprob::{
    aalen_johansen_path, counting_panel, nelson_aalen, parametric_transprob_average,
    parametric_transprob_individual, BSource,
};
use jmstate::Error;

#[derive(Parser, Debug)]
#[command(name = "jmstate", version, about = "Joint longitudinal and multi-state models")]
struct Cli {
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Longitudinal CSV (id,time,y,<covariates>).
    #[arg(long)]
    longitudinal: PathBuf,
    /// History CSV (id,time,state).
    #[arg(long)]
    history: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate the data and write one row per transition at risk.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the joint model.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        gh_order: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Cells of the product integral for the transition-probability check.
        #[arg(long)]
        grid_size: Option<usize>,
        /// Skip residual and transition-probability diagnostics.
        #[arg(long)]
        no_diagnostics: bool,
    },
    /// Simulate a dataset from the config's `simulation` section.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_subjects: Option<usize>,
    },
    /// Transition probabilities from a fit.
    Predict {
        /// Fit JSON written by `fit`.
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        s: Option<f64>,
        /// Evaluation times (comma separated).
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
        #[arg(long)]
        grid_size: Option<usize>,
        #[arg(long, value_enum)]
        b_source: Option<BSourceArg>,
        /// Also write per-subject curves.
        #[arg(long)]
        individual: bool,
    },
    /// Residual and transition-probability diagnostics for a fit.
    Gof {
        #[arg(long)]
        fit: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        s: Option<f64>,
        #[arg(long)]
        grid_size: Option<usize>,
        /// Number of evaluation times.
        #[arg(long)]
        n_points: Option<usize>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum BSourceArg {
    EmpiricalBayes,
    Zero,
}

impl From<BSourceArg> for BSource {
    fn from(b: BSourceArg) -> Self {
        match b {
            BSourceArg::EmpiricalBayes => BSource::EmpiricalBayes,
            BSourceArg::Zero => BSource::Zero,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e.downcast_ref::<Error>().is_none_or(Error::is_validation);
            ExitCode::from(if validation { 2 } else { 3 })
        }
    }
}

fn read_config(path: &Path) -> anyhow::Result<Config> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Config::from_json(&text)?)
}

fn read_fit(path: &Path) -> anyhow::Result<FitDocument> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FitDocument::from_json(&text)?)
}

fn load_data(config: &Config, data: &DataArgs) -> anyhow::Result<JointDataset> {
    Ok(io::read_dataset(&data.longitudinal, &data.history, &config.topology()?)?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Prepare { config, data, out } => prepare(&read_config(&config)?, &data, &out),
        Command::Fit { config, data, out, gh_order, seed, grid_size, no_diagnostics } => {
            let mut config = read_config(&config)?;
            if let Some(g) = gh_order {
                config.control.gh_order = g;
            }
            if let Some(s) = seed {
                config.seed = s;
            }
            if let Some(g) = grid_size {
                config.prediction.grid_size = g;
            }
            fit(&config, &data, &out, !no_diagnostics)
        }
        Command::Simulate { config, out, seed, n_subjects } => {
            let mut config = read_config(&config)?;
            if let Some(s) = seed {
                config.seed = s;
            }
            if let (Some(n), Some(sim)) = (n_subjects, config.simulation.as_mut()) {
                sim.n_subjects = n;
            }
            simulate(&config, &out)
        }
        Command::Predict { fit, data, out, s, t, grid_size, b_source, individual } => {
            let doc = read_fit(&fit)?;
            let mut pred = doc.config.prediction.clone();
            if let Some(s) = s {
                pred.s = s;
            }
            if !t.is_empty() {
                pred.times = t;
            }
            if let Some(g) = grid_size {
                pred.grid_size = g;
            }
            if let Some(b) = b_source {
                pred.b_source = b.into();
            }
            pred.individual |= individual;
            let mut doc = doc;
            doc.config.prediction = pred;
            predict(&doc, &data, &out)
        }
        Command::Gof { fit, data, out, s, grid_size, n_points } => {
            let mut doc = read_fit(&fit)?;
            let pred = &mut doc.config.prediction;
            if let Some(s) = s {
                pred.s = s;
            }
            if let Some(g) = grid_size {
                pred.grid_size = g;
            }
            if let Some(n) = n_points {
                pred.n_points = n;
            }
            let dataset = load_data(&doc.config, &data)?;
            let fitted = restore(&doc, &dataset)?;
            fs::create_dir_all(&out)?;
            diagnostics(&doc.config, &fitted, &dataset, &out)
        }
    }
}

fn prepare(config: &Config, data: &DataArgs, out: &Path) -> anyhow::Result<()> {
    let dataset = load_data(config, data)?;
    config.model_spec()?;
    dataset.require_covariates(
        config.model.transition_covariates.iter().map(|c| c.covariate.as_str()),
    )?;
    fs::create_dir_all(out)?;
    let rows = expand_transitions(&dataset, &dataset.topology);
    io::write_transition_rows(&rows, &dataset.covariate_names, io::create(out.join("transitions.csv"))?)?;
    let counts = dataset.transition_counts();
    let summary = serde_json::json!({
        "config": config,
        "version": env!("CARGO_PKG_VERSION"),
        "n_subjects": dataset.n_subjects(),
        "n_observations": dataset.n_observations(),
        "n_rows": rows.len(),
        "transition_counts": counts,
    });
    write_json(&out.join("validation.json"), &summary)?;
    println!(
        "{} subjects, {} marker records, {} transition rows",
        dataset.n_subjects(),
        dataset.n_observations(),
        rows.len()
    );
    Ok(())
}

fn fit(config: &Config, data: &DataArgs, out: &Path, with_diagnostics: bool) -> anyhow::Result<()> {
    let dataset = load_data(config, data)?;
    let spec = config.model_spec()?;
    let fitted = jmstate::estimate::fit_detailed(&dataset, &spec, &config.control)?;
    let doc = FitDocument::new(config, &fitted.result);
    fs::create_dir_all(out)?;
    write_json(&out.join("fit.json"), &doc)?;
    for row in &doc.parameters {
        println!("{:<28} {:>10.4} {:>9.4} {:>9.4}", row.name, row.estimate, row.se, row.p);
    }
    println!("loglik {:.4}", doc.loglik);
    if !doc.flags.is_empty() {
        log::warn!("fit flags: {}", doc.flags.join(", "));
    }
    if with_diagnostics {
        diagnostics(config, &fitted, &dataset, out)?;
    }
    Ok(())
}

fn restore(doc: &FitDocument, dataset: &JointDataset) -> anyhow::Result<FittedModel> {
    let spec = doc.config.model_spec()?;
    Ok(doc.fit_result().restore(dataset, &spec)?)
}

/// Evenly spaced times from `s` to the last follow-up time.
fn default_times(dataset: &JointDataset, s: f64, n: usize) -> Vec<f64> {
    let end = dataset.subjects.iter().map(|x| x.history.last_time()).fold(s, f64::max);
    if n == 0 {
        return Vec::new();
    }
    if n == 1 || end <= s {
        return vec![s];
    }
    (0..n).map(|i| s + (end - s) * i as f64 / (n - 1) as f64).collect()
}

fn diagnostics(
    config: &Config,
    fitted: &FittedModel,
    dataset: &JointDataset,
    out: &Path,
) -> anyhow::Result<()> {
    let pred = &config.prediction;
    let params = fitted.result.parameters(&fitted.model)?;
    let res = conditional_residuals(&params, &fitted.workspaces, dataset)?;
    io::write_residuals(&res, io::create(out.join("residuals.csv"))?)?;
    let bins = observed_vs_predicted(&res, config.n_bins)?;
    io::write_bins(&bins, io::create(out.join("observed_vs_predicted.csv"))?)?;
    let grid = if pred.times.is_empty() { default_times(dataset, pred.s, pred.n_points) } else { pred.times.clone() };
    let report = transprob_gof(
        &fitted.model,
        &params,
        &fitted.workspaces,
        dataset,
        pred.s,
        &grid,
        pred.grid_size,
        pred.b_source,
    )?;
    io::write_gof(&report.rows, io::create(out.join("transprob_gof.csv"))?)?;
    write_json(&out.join("coverage.json"), &report.coverage)?;
    for c in &report.coverage {
        println!(
            "coverage {}->{}: {:.3} of {} points inside the Aalen-Johansen band",
            c.from, c.to, c.fraction, c.n_points
        );
    }
    Ok(())
}

fn predict(doc: &FitDocument, data: &DataArgs, out: &Path) -> anyhow::Result<()> {
    let pred = &doc.config.prediction;
    let dataset = load_data(&doc.config, data)?;
    let fitted = restore(doc, &dataset)?;
    let params = fitted.result.parameters(&fitted.model)?;
    let mut times = if pred.times.is_empty() { default_times(&dataset, pred.s, pred.n_points) } else { pred.times.clone() };
    if let Some(&t) = times.iter().find(|&&t| t < pred.s) {
        return Err(Error::Validation(format!("prediction needs s <= t (got s = {} > t = {t})", pred.s)).into());
    }
    times.sort_by(f64::total_cmp);
    fs::create_dir_all(out)?;
    let avg = parametric_transprob_average(
        &fitted.model,
        &params,
        &fitted.workspaces,
        pred.b_source,
        pred.s,
        &times,
        pred.grid_size,
    )?;
    io::write_probabilities(&io::parametric_rows(pred.s, &times, &avg), false, io::create(out.join("parametric.csv"))?)?;

    let rows = expand_transitions(&dataset, &dataset.topology);
    let panel = counting_panel::<f64>(&rows, &dataset.topology);
    let steps = nelson_aalen(&panel)?;
    let path = aalen_johansen_path(&panel, &steps, pred.s, &times)?;
    io::write_probabilities(&io::aalen_johansen_rows(pred.s, &path), true, io::create(out.join("aalen_johansen.csv"))?)?;

    if pred.individual {
        let curves = fitted
            .workspaces
            .iter()
            .map(|ws| {
                let mats = times
                    .iter()
                    .map(|&t| {
                        parametric_transprob_individual(
                            &fitted.model,
                            &params,
                            ws,
                            pred.b_source,
                            pred.s,
                            t,
                            pred.grid_size,
                        )
                    })
                    .collect::<jmstate::Result<Vec<_>>>()?;
                Ok((ws.id.clone(), io::parametric_rows(pred.s, &times, &mats)))
            })
            .collect::<jmstate::Result<Vec<(String, Vec<ProbabilityRow>)>>>()?;
        io::write_individual_probabilities(&curves, io::create(out.join("individual.csv"))?)?;
    }
    println!("{} evaluation times written to {}", times.len(), out.display());
    Ok(())
}

fn simulate(config: &Config, out: &Path) -> anyhow::Result<()> {
    let design = config.simulation_design()?;
    let sim = simulate_dataset(&design)?;
    fs::create_dir_all(out)?;
    io::write_longitudinal(&sim.dataset, io::create(out.join("longitudinal.csv"))?)?;
    io::write_histories(&sim.dataset, io::create(out.join("history.csv"))?)?;
    let truth = serde_json::json!({
        "config": config,
        "version": env!("CARGO_PKG_VERSION"),
        "truth": sim.truth,
    });
    write_json(&out.join("truth.json"), &truth)?;
    let counts = sim.dataset.transition_counts();
    println!("{} subjects simulated; transition counts {:?}", sim.dataset.n_subjects(), counts);
    Ok(())
}
