//! `arrowtopos`: solve and validate diagram files, run the law suite and
//! train compiled learners.
//!
//! Exit codes: 0 when every check passes, 1 when a check ran and failed,
//! 2 for usage and input errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arrowtopos_core::dsl::{self, Diagram, DslError, SolveOptions};
use arrowtopos_core::finset::exponential::small_arrow_objects;
use arrowtopos_core::finset::{check_currying, classify, exponential, verify_classification, FinFn};
use arrowtopos_core::laws::{self, TrainOptions};
use arrowtopos_core::learn::trace_csv;
use arrowtopos_core::logic::{canonical_stages, characteristic_holds, Forcing, Formula};
use arrowtopos_core::report::{Report, RunConfig};
use arrowtopos_core::transformer::BlockShape;
use arrowtopos_core::finset::Square;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arrowtopos", version, about = "Arrow-category constructions, learners and law checks")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Where to write the command's report, trace or output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override a tolerance, by check name or group: NAME=VALUE.
    #[arg(long = "tolerance", global = true, value_name = "NAME=VALUE")]
    tolerances: Vec<String>,
    /// Print more detail (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the (co)limit of a diagram and verify its universal property.
    Solve {
        file: PathBuf,
        /// Largest test apex for set-level verification.
        #[arg(long, default_value_t = 4)]
        set_bound: usize,
        /// Largest test component for arrow-level verification.
        #[arg(long, default_value_t = 2)]
        arrow_bound: usize,
    },
    /// Check every relation of a diagram pointwise.
    Validate { file: PathBuf },
    /// Characteristic square of a subobject.
    Classify {
        file: PathBuf,
        /// Subobject to classify (default: the first declared).
        #[arg(long)]
        subobject: Option<String>,
    },
    /// Exponential of two arrow objects and the currying bijection.
    Expo {
        file: PathBuf,
        /// Exponent object (default: the first declared arrowobj).
        #[arg(long)]
        base: Option<String>,
        /// Base object (default: the second declared arrowobj).
        #[arg(long)]
        target: Option<String>,
    },
    /// Run the full law suite.
    Laws,
    /// Train the learner compiled from a diagram on a hidden target.
    Train {
        file: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        eps: f64,
        /// Passes over the dataset.
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 8)]
        examples: usize,
    },
    /// Kripke-Joyal forcing of a formula at every small stage.
    Force {
        file: PathBuf,
        formula: String,
        /// Largest component of the stages quantified over.
        #[arg(long, default_value_t = 2)]
        bound: usize,
    },
    /// Permutation equivariance of random Transformer blocks.
    Equivariance {
        #[arg(long, default_value_t = 4)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        h: usize,
        #[arg(long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 4)]
        r: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
    },
}

/// A failure that stops a command: bad input (exit 2) or a check that ran
/// and failed (exit 1).
enum Failure {
    Input(String),
    Check(String),
}

impl From<DslError> for Failure {
    fn from(e: DslError) -> Self {
        match e {
            DslError::Verification(m) => Failure::Check(m),
            other => Failure::Input(other.to_string()),
        }
    }
}

fn input(e: impl ToString) -> Failure {
    Failure::Input(e.to_string())
}

type Outcome = Result<bool, Failure>;

fn load(path: &Path) -> Result<Diagram, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    dsl::parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

struct Output {
    text: String,
}

impl Output {
    fn line(&mut self, s: impl AsRef<str>) {
        self.text.push_str(s.as_ref());
        self.text.push('\n');
    }
}

fn render(f: &FinFn) -> String {
    (0..f.dom().len())
        .map(|x| format!("{} -> {}", f.dom().element(x), f.cod().element(f.at(x))))
        .collect::<Vec<_>>()
        .join(", ")
}

fn finish_report(report: &Report, out: &mut Output, config: &RunConfig) -> Result<(), Failure> {
    out.line(report.to_string());
    if let Some(path) = &config.out {
        fs::write(path, report.to_csv()).map_err(|e| input(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn solve(file: &Path, opts: SolveOptions, out: &mut Output) -> Outcome {
    let d = load(file)?;
    let solution = dsl::solve(&d, opts)?;
    out.line(solution.to_string().trim_end());
    Ok(true)
}

fn validate(file: &Path, out: &mut Output) -> Outcome {
    let d = load(file)?;
    let v = dsl::validate(&d);
    for c in &v.checks {
        match &c.divergence {
            None => out.line(format!("{}: holds", c.name)),
            Some(m) => out.line(format!("{}: FAILS {m}", c.name)),
        }
    }
    if v.checks.is_empty() {
        out.line("no relations to check");
    }
    Ok(v.passed())
}

fn classify_cmd(file: &Path, name: Option<&str>, out: &mut Output) -> Outcome {
    let d = load(file)?;
    let decl = match name {
        Some(n) => d.subobjects.iter().find(|s| s.name == n),
        None => d.subobjects.first(),
    }
    .ok_or_else(|| input("no such subobject"))?;
    let sub = d.subobject(&decl.name).ok_or_else(|| input("subobject does not resolve"))?;
    let sq = sub.as_square();
    let chi = classify(&sq).map_err(input)?;
    out.line(format!("subobject {} of {}: {}", decl.name, decl.of, sub));
    out.line(format!("psi: {}", render(chi.top())));
    out.line(format!("chi: {}", render(chi.bottom())));
    let check = verify_classification(&sq, 1).map_err(input)?;
    out.line(format!(
        "pullback along true recovers the subobject: {}; universal: {}; classifying squares: {}",
        check.recovers, check.universal, check.classifying_squares
    ));
    Ok(check.passed())
}

fn expo_cmd(file: &Path, base: Option<&str>, target: Option<&str>, out: &mut Output) -> Outcome {
    let d = load(file)?;
    let pick = |given: Option<&str>, k: usize| -> Result<FinFn, Failure> {
        let name = match given {
            Some(n) => n.to_string(),
            None => d
                .arrow_objects
                .get(k)
                .map(|(n, _)| n.clone())
                .ok_or_else(|| input("expo needs two arrowobj declarations"))?,
        };
        d.arrow_object(&name).ok_or_else(|| input(format!("unknown arrowobj {name:?}")))
    };
    let (f, g) = (pick(base, 0)?, pick(target, 1)?);
    let exp = exponential(&f, &g);
    out.line(format!("{}^{}: |E| = {}, |F| = {}", g.name(), f.name(), exp.object.dom().len(), exp.object.cod().len()));
    out.line(format!("E = {{ {} }}", exp.object.dom().elements().join(", ")));
    out.line(format!("F = {{ {} }}", exp.object.cod().elements().join(", ")));
    out.line(format!("g^f: {}", render(&exp.object)));
    let mut all = true;
    let tests = small_arrow_objects(2);
    for a in &tests {
        let c = check_currying(&f, &g, a).map_err(input)?;
        all &= c.passed();
    }
    out.line(format!(
        "currying bijection on {} test objects with components of at most 2 elements: {}",
        tests.len(),
        if all { "holds" } else { "FAILS" }
    ));
    Ok(all)
}

fn force_cmd(file: &Path, text: &str, bound: usize, out: &mut Output) -> Outcome {
    let d = load(file)?;
    let universe = d.universe()?;
    let phi = Formula::parse(text).map_err(input)?;
    let context = d.vars.clone();
    universe.check(&phi, &context).map_err(input)?;
    let quantifier_free = phi.quantifier_depth() == 0;
    let mut forcing = Forcing::new(&universe, bound);
    let (mut total, mut forced, mut disagreements) = (0usize, 0usize, 0usize);
    for u in canonical_stages(bound) {
        let homs: Vec<Vec<Square>> = context
            .iter()
            .map(|(_, ty)| Square::hom(&u, universe.object(ty).expect("checked")))
            .collect();
        let mut choice = vec![0usize; homs.len()];
        if homs.iter().any(|h| h.is_empty()) {
            continue;
        }
        loop {
            let env: Vec<(String, Square)> = context
                .iter()
                .zip(&homs)
                .zip(&choice)
                .map(|(((v, _), h), &i)| (v.clone(), h[i].clone()))
                .collect();
            let holds = forcing.forces(&u, &env, &phi).map_err(input)?;
            total += 1;
            forced += usize::from(holds);
            if quantifier_free {
                let alphas: Vec<Square> = env.iter().map(|(_, s)| s.clone()).collect();
                if characteristic_holds(&universe, &phi, &context, &u, &alphas).map_err(input)? != holds {
                    disagreements += 1;
                }
            }
            if u.dom().len() == 1 && u.cod().len() == 1 {
                let names: Vec<String> = env
                    .iter()
                    .map(|(v, s)| format!("{v} = ({}, {})", s.top().cod().element(s.top().at(0)), s.bottom().cod().element(s.bottom().at(0))))
                    .collect();
                out.line(format!("1 |- {phi} at {}: {}", names.join(", "), holds));
            }
            let mut k = 0;
            while k < choice.len() {
                choice[k] += 1;
                if choice[k] < homs[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
            if k == choice.len() {
                break;
            }
        }
    }
    out.line(format!(
        "forced at {forced} of {total} generalized elements from stages with components of at most {bound}"
    ));
    if quantifier_free {
        out.line(format!("characteristic-arrow evaluation disagrees at {disagreements} of them"));
    }
    Ok(disagreements == 0)
}

fn train_cmd(file: &Path, opts: TrainOptions, config: &RunConfig, out: &mut Output) -> Outcome {
    let d = load(file)?;
    let demo = match laws::run_train_demo(&d, config, &opts) {
        Ok(demo) => demo,
        Err(laws::DemoError::Learn(e)) => return Err(Failure::Check(e.to_string())),
        Err(e) => return Err(input(e)),
    };
    let (first, last) = (demo.trace[0], *demo.trace.last().expect("non-empty"));
    out.line(format!("loss {first:.6e} -> {last:.6e} over {} steps", opts.steps));
    out.line(demo.report.to_string());
    if let Some(path) = &config.out {
        fs::write(path, trace_csv(&demo.trace)).map_err(|e| input(format!("{}: {e}", path.display())))?;
    }
    Ok(demo.report.passed())
}

fn run(cli: Cli) -> (Outcome, Output) {
    let mut out = Output { text: String::new() };
    let mut config = RunConfig::new(cli.seed);
    config.verbosity = cli.verbose;
    config.out = cli.out.clone();
    for t in &cli.tolerances {
        if let Err(e) = config.add_override(t) {
            return (Err(input(e)), out);
        }
    }
    let writes_report = matches!(cli.command, Command::Laws | Command::Equivariance { .. } | Command::Train { .. });
    let outcome = match &cli.command {
        Command::Solve {
            file,
            set_bound,
            arrow_bound,
        } => solve(
            file,
            SolveOptions {
                set_bound: *set_bound,
                arrow_bound: *arrow_bound,
            },
            &mut out,
        ),
        Command::Validate { file } => validate(file, &mut out),
        Command::Classify { file, subobject } => classify_cmd(file, subobject.as_deref(), &mut out),
        Command::Expo { file, base, target } => expo_cmd(file, base.as_deref(), target.as_deref(), &mut out),
        Command::Laws => {
            let report = laws::run_laws(&config);
            finish_report(&report, &mut out, &config).map(|_| report.passed())
        }
        Command::Train { file, eps, steps, examples } => {
            let opts = TrainOptions {
                eps: *eps,
                steps: *steps,
                examples: *examples,
                ..TrainOptions::default()
            };
            train_cmd(file, opts, &config, &mut out)
        }
        Command::Force { file, formula, bound } => force_cmd(file, formula, *bound, &mut out),
        Command::Equivariance { d, n, h, m, r, trials } => match BlockShape::new(*d, *n, *h, *m, *r) {
            Ok(shape) => {
                let report = laws::run_equivariance(&config, shape, *trials);
                finish_report(&report, &mut out, &config).map(|_| report.passed())
            }
            Err(e) => Err(input(e)),
        },
    };
    if !writes_report && outcome.is_ok() {
        if let Some(path) = &config.out {
            if let Err(e) = fs::write(path, &out.text) {
                return (Err(input(format!("{}: {e}", path.display()))), out);
            }
        }
    }
    (outcome, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (outcome, out) = run(cli);
    print!("{}", out.text);
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
