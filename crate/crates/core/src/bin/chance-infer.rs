use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use chance_infer::demo_sampler::sample_demonstrations;
use chance_infer::gridworld::{build_gridworld, CellMapping, GridSpec};
use chance_infer::inference::{greedy_infer, InferenceConfig, InferenceResult, RiskMode};
use chance_infer::io::{write_heatmap_csv, write_trace_csv, write_values_csv, MdpFile};
use chance_infer::validation::{production, run_suite, SuiteConfig};
use chance_infer::{soft_backup, Candidate, ConstraintSet, DemonstrationSet, Mdp};

/// Infer state and action chance constraints from demonstrations.
#[derive(Parser)]
#[command(name = "chance-infer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a gridworld and sample demonstrations from its ground truth.
    Synthesize {
        /// GridSpec JSON file.
        #[arg(long)]
        spec: PathBuf,
        /// Seed for the demonstration sampler.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of demonstrations.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Output directory for mdp.json, demos.json, ground_truth.json and mapping.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run greedy constraint inference.
    Infer {
        /// MDP JSON file.
        #[arg(long)]
        mdp: PathBuf,
        /// Demonstration JSON file.
        #[arg(long)]
        demos: PathBuf,
        /// Constraints known in advance (ConstraintSet JSON); defaults to none.
        #[arg(long)]
        base: Option<PathBuf>,
        /// Maximum number of constraints to add.
        #[arg(long, default_value_t = 10)]
        max_iters: usize,
        /// Stop once the mean per-demonstration gain (nats) drops below this.
        #[arg(long, default_value_t = 0.05)]
        stop_gain: f64,
        /// Use this threshold for every state candidate instead of the data-driven level.
        #[arg(long)]
        fixed_psi: Option<f64>,
        /// Also write values.csv with V_t(x) under the final constraints.
        #[arg(long)]
        dump_values: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the ratio backup against brute-force references on random instances.
    Validate {
        /// Number of stochastic instances.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Number of deterministic and psi-sweep instances.
        #[arg(long, default_value_t = 50)]
        det_seeds: u64,
        /// Perturb the production backup so the suite must fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write one iteration's candidate scores as a CSV.
    ExportHeatmap {
        /// Directory written by `infer`.
        #[arg(long)]
        result: PathBuf,
        /// Iteration to export, counting from 0.
        #[arg(long)]
        iteration: usize,
        /// mapping.json from `synthesize`, to add grid coordinates.
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Output CSV; defaults to <result>/heatmap/iter_<k>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn synthesize(spec: &Path, seed: u64, n: usize, out: &Path) -> anyhow::Result<()> {
    let spec: GridSpec = read_json(spec)?;
    let world = build_gridworld(&spec)?;
    let violations = world.mdp.validate();
    if !violations.is_empty() {
        bail!("generated kernel is invalid: {violations:?}");
    }
    let demos = sample_demonstrations(&world.mdp, &world.ground_truth, world.start, n, seed)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("mdp.json"), &MdpFile::from(&world.mdp))?;
    write_json(&out.join("demos.json"), &demos)?;
    write_json(&out.join("ground_truth.json"), &world.ground_truth)?;
    write_json(&out.join("mapping.json"), &world.mapping)?;
    let aborts = demos.metadata.as_ref().map_or(0, |m| m.aborts);
    eprintln!(
        "wrote {} demonstrations ({} states, {} aborted rollouts) to {}",
        demos.len(),
        world.mdp.num_states(),
        aborts,
        out.display()
    );
    Ok(())
}

fn load_mdp(path: &Path) -> anyhow::Result<Mdp> {
    let file: MdpFile = read_json(path)?;
    let mdp =
        Mdp::try_from(file).with_context(|| format!("building MDP from {}", path.display()))?;
    let violations = mdp.validate();
    if !violations.is_empty() {
        bail!("{} is not a valid MDP: {violations:?}", path.display());
    }
    Ok(mdp)
}

struct InferArgs {
    mdp: PathBuf,
    demos: PathBuf,
    base: Option<PathBuf>,
    config: InferenceConfig,
    dump_values: bool,
    out: PathBuf,
}

fn describe(c: &Candidate) -> String {
    match c {
        Candidate::State { state, psi } => format!("state {state} psi={psi:.4}"),
        Candidate::Action { action } => format!("action {action}"),
    }
}

fn infer(args: InferArgs) -> anyhow::Result<()> {
    let mdp = load_mdp(&args.mdp)?;
    let demos: DemonstrationSet = read_json(&args.demos)?;
    let base = match &args.base {
        Some(p) => read_json(p)?,
        None => ConstraintSet::unconstrained(mdp.num_states()),
    };
    let result = greedy_infer(&mdp, &demos, &base, &args.config)?;

    fs::create_dir_all(&args.out)?;
    write_json(&args.out.join("result.json"), &result)?;
    write_json(
        &args.out.join("constraints.json"),
        &result.final_constraints,
    )?;
    for trace in &result.trace {
        let path = args
            .out
            .join("trace")
            .join(format!("iter_{}.csv", trace.iteration));
        write_trace_csv(trace, create(&path)?)?;
    }
    if args.dump_values {
        let backup = soft_backup(&mdp, &result.final_constraints)?;
        write_values_csv(&backup, create(&args.out.join("values.csv"))?)?;
    }
    for s in &result.selected {
        println!(
            "iter {:>2}: {:<24} score={:.4} gain={:.4}",
            s.iteration,
            describe(&s.candidate),
            s.score,
            s.gain
        );
    }
    println!("stopped: {:?}", result.status);
    Ok(())
}

fn validate(seeds: u64, det_seeds: u64, inject_fault: bool) -> anyhow::Result<bool> {
    let cfg = SuiteConfig {
        stochastic_seeds: seeds,
        deterministic_seeds: det_seeds,
        monotonicity_seeds: det_seeds,
    };
    let reports = if inject_fault {
        // score candidates against a kernel whose rewards are slightly off
        let faulty = |mdp: &Mdp, base: &ConstraintSet, cands: &[Candidate]| {
            let mut file = MdpFile::from(mdp);
            for r in file.running_reward.iter_mut() {
                r.2 += 0.01 * (r.0 + r.1) as f64;
            }
            production(&Mdp::try_from(file)?, base, cands)
        };
        run_suite(cfg, &faulty)?
    } else {
        run_suite(cfg, &production)?
    };
    let mut ok = true;
    for r in &reports {
        println!("{r}");
        ok &= r.passed;
    }
    Ok(ok)
}

fn export_heatmap(
    result_dir: &Path,
    iteration: usize,
    mapping: Option<&Path>,
    out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let result: InferenceResult = read_json(&result_dir.join("result.json"))?;
    let Some(trace) = result.trace.iter().find(|t| t.iteration == iteration) else {
        bail!(
            "iteration {iteration} not found; {} has {} iterations",
            result_dir.display(),
            result.trace.len()
        );
    };
    let mapping: Option<CellMapping> = mapping.map(read_json).transpose()?;
    let out = out.unwrap_or_else(|| {
        result_dir
            .join("heatmap")
            .join(format!("iter_{iteration}.csv"))
    });
    write_heatmap_csv(trace, mapping.as_ref(), create(&out)?)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Synthesize { spec, seed, n, out } => synthesize(&spec, seed, n, &out)?,
        Command::Infer {
            mdp,
            demos,
            base,
            max_iters,
            stop_gain,
            fixed_psi,
            dump_values,
            out,
        } => {
            if let Some(p) = fixed_psi {
                if !(0.0..=1.0).contains(&p) {
                    bail!("--fixed-psi must lie in [0, 1], got {p}");
                }
            }
            let config = InferenceConfig {
                max_iterations: max_iters,
                stop_gain,
                risk: fixed_psi.map_or(RiskMode::DataDriven, RiskMode::Fixed),
            };
            infer(InferArgs {
                mdp,
                demos,
                base,
                config,
                dump_values,
                out,
            })?
        }
        Command::Validate {
            seeds,
            det_seeds,
            inject_fault,
        } => {
            if !validate(seeds, det_seeds, inject_fault)? {
                return Ok(ExitCode::from(1));
            }
        }
        Command::ExportHeatmap {
            result,
            iteration,
            mapping,
            out,
        } => export_heatmap(&result, iteration, mapping.as_deref(), out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
