//! The command-line surface: fit a model to an observed scene, simulate
//! realizations from a stored model, summarize traces into CSV artifacts,
//! and scaffold configuration files.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 runtime abort.

use std::ffi::OsString;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{model_clusters, posterior_block_densities, subsample, summarize};
use crate::lattice::{disk_template, LatticeDims, Scene};
use crate::model::Mmm;
use crate::pbf::model_from_json;
use crate::prior::PriorConfig;
use crate::rjmcmc::{read_trace, run_chain_with, write_trace_record, ChainError, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ABORT: i32 = 3;

/// Every tunable of a fit, with the reference defaults. The configuration
/// file holds `key = value` lines (# starts a comment); every key is
/// optional, and command-line flags override file values.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub radius: f64,
    pub p_star: f64,
    pub sigma: f64,
    pub nu: f64,
    pub margin: usize,
    pub prob_param_move: f64,
    pub iterations: u64,
    pub burnin: u64,
    pub stride: u64,
    pub seed: u64,
    pub r_ars: usize,
    pub chains: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            radius: 5.0,
            p_star: 0.9,
            sigma: 100.0,
            nu: 0.5,
            margin: 20,
            prob_param_move: 0.55,
            iterations: 1_250_000,
            burnin: 250_000,
            stride: 50,
            seed: 0,
            r_ars: 10,
            chains: 1,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, lineno: usize) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("line {lineno}: bad value for {key}: {e}"))
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<CliConfig, String> {
        let mut cfg = CliConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let lineno = k + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {lineno}: expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "radius" => cfg.radius = parse_value(key, value, lineno)?,
                "p_star" => cfg.p_star = parse_value(key, value, lineno)?,
                "sigma" => cfg.sigma = parse_value(key, value, lineno)?,
                "nu" => cfg.nu = parse_value(key, value, lineno)?,
                "margin" => cfg.margin = parse_value(key, value, lineno)?,
                "prob_param_move" => cfg.prob_param_move = parse_value(key, value, lineno)?,
                "iterations" => cfg.iterations = parse_value(key, value, lineno)?,
                "burnin" => cfg.burnin = parse_value(key, value, lineno)?,
                "stride" => cfg.stride = parse_value(key, value, lineno)?,
                "seed" => cfg.seed = parse_value(key, value, lineno)?,
                "r_ars" => cfg.r_ars = parse_value(key, value, lineno)?,
                "chains" => cfg.chains = parse_value(key, value, lineno)?,
                _ => return Err(format!("line {lineno}: unknown key '{key}'")),
            }
        }
        Ok(cfg)
    }

    pub fn render(&self) -> String {
        format!(
            "# Structure-learning configuration. Every key is optional; the\n\
             # values below are the defaults.\n\
             radius = {}\n\
             p_star = {}\n\
             sigma = {}\n\
             nu = {}\n\
             margin = {}\n\
             prob_param_move = {}\n\
             iterations = {}\n\
             burnin = {}\n\
             stride = {}\n\
             seed = {}\n\
             r_ars = {}\n\
             chains = {}\n",
            self.radius,
            self.p_star,
            self.sigma,
            self.nu,
            self.margin,
            self.prob_param_move,
            self.iterations,
            self.burnin,
            self.stride,
            self.seed,
            self.r_ars,
            self.chains,
        )
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.radius.is_finite() || self.radius <= 0.0 {
            return Err(format!(
                "radius must be a positive number, got {}",
                self.radius
            ));
        }
        if !(self.p_star > 0.0 && self.p_star < 1.0) {
            return Err(format!(
                "p_star must lie strictly in (0, 1), got {}",
                self.p_star
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(format!(
                "sigma must be a positive number, got {}",
                self.sigma
            ));
        }
        if self.chains == 0 {
            return Err("chains must be at least 1".into());
        }
        self.run_config(self.seed).validate()
    }

    /// The sampler configuration for one chain with the given seed.
    pub fn run_config(&self, seed: u64) -> RunConfig {
        RunConfig {
            prior: PriorConfig::new(disk_template(self.radius), self.p_star, self.sigma),
            nu: self.nu,
            r_ars: self.r_ars,
            iterations: self.iterations,
            burnin: self.burnin,
            stride: self.stride,
            prob_param_move: self.prob_param_move,
            seed,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "mmesh",
    version,
    about = "Structure learning, simulation, and posterior summaries for binary Markov mesh models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Sample the posterior over models given an observed scene.
    Fit(FitArgs),
    /// Draw realizations from a stored model file.
    Simulate(SimulateArgs),
    /// Summarize a trace into CSV artifacts.
    Analyze(AnalyzeArgs),
    /// Write a configuration file populated with the defaults.
    InitConfig(InitConfigArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Observed scene file.
    pub scene: PathBuf,
    /// Output trace file (JSON lines). With several chains each file gets a
    /// .<index> suffix.
    pub trace: PathBuf,
    /// Configuration file with key = value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Radius of the disk defining the largest allowed neighborhood.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Prior inclusion weight for higher-order interactions.
    #[arg(long)]
    pub p_star: Option<f64>,
    /// Scale of the Gaussian factor in the parameter prior.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Removal-weight sharpness; 0 removes uniformly.
    #[arg(long)]
    pub nu: Option<f64>,
    /// Width of the unobserved boundary added around the scene.
    #[arg(long)]
    pub margin: Option<usize>,
    /// Probability of a parameter move per iteration.
    #[arg(long)]
    pub prob_param_move: Option<f64>,
    /// Number of iterations to run.
    #[arg(long)]
    pub iterations: Option<u64>,
    /// Burn-in to record for later analysis.
    #[arg(long)]
    pub burnin: Option<u64>,
    /// Thinning stride to record for later analysis.
    #[arg(long)]
    pub stride: Option<u64>,
    /// Seed of the first chain; chain c uses seed + c.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of adaptive-rejection draws behind each proposal Gaussian.
    #[arg(long)]
    pub r_ars: Option<usize>,
    /// Number of independent chains to run concurrently.
    #[arg(long)]
    pub chains: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Model file (JSON).
    pub model: PathBuf,
    /// Lattice rows.
    pub rows: usize,
    /// Lattice columns.
    pub cols: usize,
    /// Number of realizations to write.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Seed of the first realization; realization i uses seed + i.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving scene-<i>.txt files.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Trace file (JSON lines).
    pub trace: PathBuf,
    /// Directory receiving the CSV artifacts.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Iterations to discard before summarizing.
    #[arg(long, default_value_t = 250_000)]
    pub burnin: u64,
    /// Thinning interval over the retained records.
    #[arg(long, default_value_t = 50)]
    pub stride: u64,
    /// Largest number of model clusters to report.
    #[arg(long, default_value_t = 10)]
    pub max_clusters: usize,
    /// Rows of the simulated scenes behind block densities.
    #[arg(long)]
    pub block_rows: Option<usize>,
    /// Columns of the simulated scenes behind block densities.
    #[arg(long)]
    pub block_cols: Option<usize>,
    /// Number of posterior draws behind block densities.
    #[arg(long, default_value_t = 100)]
    pub block_realizations: usize,
    /// Seed for the block-density resampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct InitConfigArgs {
    /// Destination path; prints to standard output when omitted.
    pub path: Option<PathBuf>,
}

fn input_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("mmesh: {msg}");
    EXIT_INPUT
}

/// Quotes a CSV field when it contains a delimiter, quote, or newline.
fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn chain_trace_path(base: &Path, idx: usize, n_chains: usize) -> PathBuf {
    if n_chains == 1 {
        base.to_path_buf()
    } else {
        PathBuf::from(format!("{}.{idx}", base.display()))
    }
}

fn load_config(path: Option<&Path>) -> Result<CliConfig, String> {
    match path {
        None => Ok(CliConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            CliConfig::parse(&text).map_err(|e| format!("{}: {e}", p.display()))
        }
    }
}

fn apply_fit_flags(mut cfg: CliConfig, args: &FitArgs) -> CliConfig {
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        };
    }
    take!(radius);
    take!(p_star);
    take!(sigma);
    take!(nu);
    take!(margin);
    take!(prob_param_move);
    take!(iterations);
    take!(burnin);
    take!(stride);
    take!(seed);
    take!(r_ars);
    take!(chains);
    cfg
}

fn run_one_chain(scene: &Scene, cfg: &CliConfig, idx: usize, trace_path: &Path) -> i32 {
    let run_cfg = cfg.run_config(cfg.seed + idx as u64);
    let file = match fs::File::create(trace_path) {
        Ok(f) => f,
        Err(e) => return input_error(format!("cannot create {}: {e}", trace_path.display())),
    };
    let mut out = BufWriter::new(file);
    let report_every = (run_cfg.iterations / 20).max(1);
    let result = run_chain_with(scene, &run_cfg, |rec| {
        if rec.it % report_every == 0 {
            eprintln!(
                "chain {idx}: iteration {}/{}, interactions {}, log posterior {:.3}",
                rec.it,
                run_cfg.iterations,
                rec.lambda.len(),
                rec.logp
            );
        }
        write_trace_record(&mut out, rec)
    });
    match result {
        Ok(state) => {
            if let Err(e) = out.flush() {
                return input_error(format!("cannot write {}: {e}", trace_path.display()));
            }
            let scene_path = PathBuf::from(format!("{}.final-scene", trace_path.display()));
            if let Err(e) = fs::write(&scene_path, state.scene.render_realization()) {
                return input_error(format!("cannot write {}: {e}", scene_path.display()));
            }
            EXIT_OK
        }
        Err(ChainError::Config(e)) => input_error(e),
        Err(e) => {
            // Keep whatever was already traced for post-mortem inspection.
            let _ = out.flush();
            eprintln!("mmesh: chain {idx} aborted: {e}");
            EXIT_ABORT
        }
    }
}

fn cmd_fit(args: &FitArgs) -> i32 {
    let cfg = match load_config(args.config.as_deref()) {
        Ok(c) => apply_fit_flags(c, args),
        Err(e) => return input_error(e),
    };
    if let Err(e) = cfg.validate() {
        return input_error(e);
    }
    let scene = match Scene::read_file(&args.scene) {
        Ok(s) => s,
        Err(e) => return input_error(e),
    };
    let extended = scene.extend(cfg.margin);
    let statuses: Vec<i32> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for c in 0..cfg.chains {
            let cfg = cfg.clone();
            let extended = &extended;
            let trace_path = chain_trace_path(&args.trace, c, cfg.chains);
            handles.push(scope.spawn(move || run_one_chain(extended, &cfg, c, &trace_path)));
        }
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(EXIT_ABORT))
            .collect()
    });
    statuses.into_iter().max().unwrap_or(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs) -> i32 {
    let text = match fs::read_to_string(&args.model) {
        Ok(t) => t,
        Err(e) => return input_error(format!("{}: {e}", args.model.display())),
    };
    let pbf = match model_from_json(&text) {
        Ok(p) => p,
        Err(e) => return input_error(format!("{}: {e}", args.model.display())),
    };
    let model = Mmm::new(pbf);
    if let Err(e) = fs::create_dir_all(&args.out_dir) {
        return input_error(format!("{}: {e}", args.out_dir.display()));
    }
    let dims = LatticeDims::new(args.rows, args.cols);
    for i in 0..args.count {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed + i as u64);
        let scene = model.simulate(dims, &mut rng);
        if let Err(e) = scene.write_file(&args.out_dir.join(format!("scene-{i}.txt"))) {
            return input_error(e);
        }
    }
    EXIT_OK
}

fn cmd_analyze(args: &AnalyzeArgs) -> i32 {
    if args.stride == 0 {
        return input_error("stride must be at least 1");
    }
    let file = match fs::File::open(&args.trace) {
        Ok(f) => f,
        Err(e) => return input_error(format!("{}: {e}", args.trace.display())),
    };
    let trace = match read_trace(io::BufReader::new(file)) {
        Ok(t) => t,
        Err(e) => return input_error(format!("{}: {e}", args.trace.display())),
    };
    let sub = subsample(&trace, args.burnin, args.stride);
    if sub.is_empty() {
        return input_error(format!(
            "no records left after burn-in {} ({} records in the trace)",
            args.burnin,
            trace.len()
        ));
    }
    let summary = match summarize(&sub.records) {
        Ok(s) => s,
        Err(e) => return input_error(e),
    };
    if let Err(e) = fs::create_dir_all(&args.out_dir) {
        return input_error(format!("{}: {e}", args.out_dir.display()));
    }

    let mut neighbors = String::from("offset_row,offset_col,probability\n");
    for (t, p) in &summary.neighbor_prob {
        neighbors.push_str(&format!("{},{},{}\n", t.row, t.col, p));
    }
    let mut interactions = String::from("rank,interaction,probability\n");
    for (rank, (m, p)) in summary.interaction_prob.iter().enumerate() {
        interactions.push_str(&format!(
            "{},{},{}\n",
            rank + 1,
            csv_field(&m.to_string()),
            p
        ));
    }
    let mut clusters_csv = String::from("cluster_id,mass,n_models,seed_model\n");
    for c in model_clusters(&sub.records, args.max_clusters) {
        let seed_model = c
            .seed
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        clusters_csv.push_str(&format!(
            "{},{},{},{}\n",
            c.id,
            c.mass,
            c.n_models,
            csv_field(&seed_model)
        ));
    }
    let mut scalars = String::from("it,n_interactions,logp\n");
    for (it, n_active, logp) in &summary.scalars {
        scalars.push_str(&format!("{it},{n_active},{logp}\n"));
    }
    let outputs = [
        ("neighbors.csv", neighbors),
        ("interactions.csv", interactions),
        ("clusters.csv", clusters_csv),
        ("trace.csv", scalars),
    ];
    for (name, content) in outputs {
        if let Err(e) = fs::write(args.out_dir.join(name), content) {
            return input_error(format!("cannot write {name}: {e}"));
        }
    }

    if let (Some(rows), Some(cols)) = (args.block_rows, args.block_cols) {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let samples = match posterior_block_densities(
            &sub.records,
            LatticeDims::new(rows, cols),
            args.block_realizations,
            &mut rng,
        ) {
            Ok(s) => s,
            Err(e) => return input_error(e),
        };
        let mut blocks = String::from("config_code,sample_value\n");
        for (code, values) in samples.iter().enumerate() {
            for v in values {
                blocks.push_str(&format!("{code},{v}\n"));
            }
        }
        if let Err(e) = fs::write(args.out_dir.join("blocks.csv"), blocks) {
            return input_error(format!("cannot write blocks.csv: {e}"));
        }
    }
    EXIT_OK
}

fn cmd_init_config(args: &InitConfigArgs) -> i32 {
    let text = CliConfig::default().render();
    match &args.path {
        Some(p) => {
            if let Err(e) = fs::write(p, text) {
                return input_error(format!("{}: {e}", p.display()));
            }
        }
        None => {
            print!("{text}");
            let _ = io::stdout().flush();
        }
    }
    EXIT_OK
}

/// Parses the given argument list and runs the selected command, returning
/// the process exit code.
pub fn run_from<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match &cli.cmd {
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::InitConfig(a) => cmd_init_config(a),
    }
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}
