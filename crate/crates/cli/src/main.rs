use std::fmt::Write as _;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mcf_core::calculus::structure::structure_diagnostics;
use mcf_core::equations::{EquationSet, Format};
use mcf_core::expr::{Equality, LatexStyle};
use mcf_core::hamiltonian::{hamiltonian_from_legendre, hhdw_equations, legendre_map, HamiltonianSystem};
use mcf_core::lagrangian::{build_lagrangian_system, check_regularity, herglotz_el_equations, latex_style, LagrangianSystem};
use mcf_core::model::{parse_model_str, ModelSpec, SimFormalism};
use mcf_core::numsim::{compile_problem, simulate, SimSettings, Termination};
use mcf_core::sampling::SamplePlan;
use mcf_core::unified::{
    build_unified, constraint_algorithm_with, project_to_hamiltonian, project_to_lagrangian, sr_field_equations,
    LadderOptions, LadderStatus, UnifiedSystem,
};
use mcf_core::Error;

#[derive(Parser)]
#[command(name = "mcf", version, about = "Derive, analyse and simulate action-dependent field theories")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    #[command(flatten)]
    opts: Opts,
}

#[derive(clap::Args, Clone)]
struct Opts {
    /// Formalism: lagrangian, hamiltonian or unified.
    #[arg(long, global = true, value_enum)]
    formalism: Option<Formalism>,
    #[arg(long, global = true, value_enum, default_value_t = OutFormat::Text)]
    format: OutFormat,
    /// Seed for random sample points.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Number of sample points for rank checks.
    #[arg(long, global = true, default_value_t = 8)]
    samples: usize,
    #[arg(long = "max-generations", global = true, default_value_t = 10)]
    max_generations: usize,
    /// Directory receiving the artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Derive the field equations.
    Derive { model: PathBuf },
    /// Regularity and structure diagnostics.
    Check { model: PathBuf },
    /// Skinner-Rusk field equations and the constraint algorithm.
    Unify { model: PathBuf },
    /// Integrate the evolution system in x[0].
    Simulate { model: PathBuf },
    /// Re-render a machine-format equation file.
    Export { file: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Formalism {
    Lagrangian,
    Hamiltonian,
    Unified,
}

impl Formalism {
    fn name(self) -> &'static str {
        match self {
            Formalism::Lagrangian => "lagrangian",
            Formalism::Hamiltonian => "hamiltonian",
            Formalism::Unified => "unified",
        }
    }
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum OutFormat {
    Text,
    Latex,
    Machine,
}

impl OutFormat {
    fn core(self) -> Format {
        match self {
            OutFormat::Text => Format::Text,
            OutFormat::Latex => Format::Latex,
            OutFormat::Machine => Format::Machine,
        }
    }

    fn ext(self) -> &'static str {
        match self {
            OutFormat::Text => "txt",
            OutFormat::Latex => "tex",
            OutFormat::Machine => "eqs",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Model(String),
    Internal(String),
    Ladder(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Model(_) => 1,
            Failure::Internal(_) => 2,
            Failure::Ladder(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Model(m) | Failure::Internal(m) | Failure::Ladder(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Eval(_) | Error::NotClosed | Error::ForeignCoordinate { .. } => Failure::Internal(e.to_string()),
            other => Failure::Model(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Model(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

struct Ctx {
    opts: Opts,
    color: bool,
}

impl Ctx {
    fn paint(&self, s: &str, ok: bool) -> String {
        if self.color {
            format!("\x1b[{}m{s}\x1b[0m", if ok { 32 } else { 31 })
        } else {
            s.to_string()
        }
    }

    /// Print to stdout and, with --out, also write `name` into the output directory.
    fn emit(&self, name: &str, content: &str) -> Outcome {
        if let Some(dir) = &self.opts.out {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), content)?;
        }
        print!("{content}");
        Ok(())
    }

    fn write_only(&self, name: &str, content: &str) -> Outcome {
        match &self.opts.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join(name), content)?;
            }
            None => print!("{content}"),
        }
        Ok(())
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn parse_model_file(path: &Path) -> Result<ModelSpec, Failure> {
    let src = std::fs::read_to_string(path).map_err(|e| Failure::Model(format!("{}: {e}", path.display())))?;
    parse_model_str(&src).map_err(|diags| {
        let mut msg = String::new();
        for d in diags {
            let _ = writeln!(msg, "{}:{d}", path.display());
        }
        Failure::Model(msg.trim_end().to_string())
    })
}

fn hamiltonian(sys: &LagrangianSystem) -> Result<HamiltonianSystem, Failure> {
    Ok(hamiltonian_from_legendre(sys, &legendre_map(sys))?)
}

/// Verifies the unified projections against the direct derivations.
fn cross_check(u: &UnifiedSystem) -> Result<Vec<String>, Failure> {
    let c = sr_field_equations(u);
    let mut verdicts = project_to_lagrangian(u, &c).agrees_with(&herglotz_el_equations(&u.lag));
    if let Ok(ham) = hamiltonian(&u.lag) {
        verdicts.extend(project_to_hamiltonian(u, &c).agrees_with(&hhdw_equations(&ham)));
    }
    let mut warnings = Vec::new();
    let mut failed = Vec::new();
    for (name, v) in verdicts {
        match v {
            Equality::NotEqual { residual, .. } => failed.push(format!("{name} (residual {residual:.3e})")),
            Equality::Inconclusive { reason } => warnings.push(format!("{name}: {reason}")),
            _ => {}
        }
    }
    if !failed.is_empty() {
        return Err(Failure::Internal(format!(
            "unified projections disagree with the direct derivation: {}",
            failed.join(", ")
        )));
    }
    Ok(warnings)
}

fn derive(ctx: &Ctx, path: &Path) -> Outcome {
    let spec = parse_model_file(path)?;
    let sys = build_lagrangian_system(&spec)?;
    let formalism = ctx.opts.formalism.unwrap_or(Formalism::Lagrangian);
    let set = match formalism {
        Formalism::Lagrangian => herglotz_el_equations(&sys),
        Formalism::Hamiltonian => hhdw_equations(&hamiltonian(&sys)?),
        Formalism::Unified => sr_field_equations(&build_unified(&sys)?).to_equation_set(),
    };
    let warnings = cross_check(&build_unified(&sys)?)?;
    let name = format!("{}.{}.{}", stem(path), formalism.name(), ctx.opts.format.ext());
    ctx.emit(&name, &set.render(ctx.opts.format.core(), &latex_style(&spec)))?;
    for w in warnings {
        eprintln!("warning: cross-check inconclusive for {w}");
    }
    Ok(())
}

fn check(ctx: &Ctx, path: &Path) -> Outcome {
    let spec = parse_model_file(path)?;
    let sys = build_lagrangian_system(&spec)?;
    let (samples, seed) = (ctx.opts.samples, ctx.opts.seed);
    let regularity = check_regularity(&sys, &SamplePlan::new(samples, seed));
    let mut out = format!("model {} (m={}, n={})\n", spec.name, spec.m, spec.n);
    let _ = writeln!(out, "regularity: {}", ctx.paint(&regularity.to_string(), regularity.is_regular()));
    let mut section = |title: &str, report: mcf_core::Result<mcf_core::calculus::structure::StructureReport>| -> Outcome {
        let r = report?;
        let _ = writeln!(out, "\n{title}: {}", r.summary());
        out.push_str(&r.to_string());
        if !out.ends_with('\n') {
            out.push('\n');
        }
        Ok(())
    };
    match ctx.opts.formalism.unwrap_or(Formalism::Lagrangian) {
        Formalism::Lagrangian => {
            section("(Theta_L, omega)", structure_diagnostics(&sys.theta, &sys.omega, &SamplePlan::new(samples, seed)))?;
        }
        Formalism::Hamiltonian => {
            let h = hamiltonian(&sys)?;
            section("(Theta_H, omega)", structure_diagnostics(&h.theta, &h.omega, &SamplePlan::new(samples, seed)))?;
        }
        Formalism::Unified => {
            let u = build_unified(&sys)?;
            section(
                "(Theta_W, omega_W)",
                structure_diagnostics(&u.theta_w, &u.omega_w, &SamplePlan::new(samples, seed)),
            )?;
            section("(Theta_0, omega) on W1", structure_diagnostics(&u.theta_0, &u.omega, &u.w1_plan(samples, seed)))?;
        }
    }
    ctx.emit(&format!("{}.check.txt", stem(path)), &out)
}

fn unify(ctx: &Ctx, path: &Path) -> Outcome {
    let spec = parse_model_file(path)?;
    let u = build_unified(&build_lagrangian_system(&spec)?)?;
    let opts = LadderOptions {
        max_generations: ctx.opts.max_generations,
        samples: ctx.opts.samples,
        seed: ctx.opts.seed,
    };
    let c = sr_field_equations(&u);
    let ladder = constraint_algorithm_with(&u, &opts);
    let mut out = match ctx.opts.format {
        OutFormat::Machine => {
            let mut s = c.to_equation_set().to_machine();
            for g in &ladder.generations {
                for k in &g.constraints {
                    let _ = writeln!(s, "constraint\t{}\t{}\t{}", g.index, k.provenance, k.expr);
                }
            }
            let _ = writeln!(s, "status\t{}", ladder.status);
            s
        }
        OutFormat::Latex => c.to_equation_set().to_latex(&latex_style(&spec)),
        OutFormat::Text => format!("{}\n{}", u.summary(), c.to_text()),
    };
    if ctx.opts.format != OutFormat::Machine {
        out.push('\n');
        out.push_str(&ladder.to_text());
        let ok = ladder.status == LadderStatus::Stabilized;
        let _ = writeln!(out, "status: {}", ctx.paint(&ladder.status.to_string(), ok));
    }
    ctx.emit(&format!("{}.unify.{}", stem(path), ctx.opts.format.ext()), &out)?;
    match ladder.status {
        LadderStatus::Stabilized => Ok(()),
        other => Err(Failure::Ladder(format!("constraint algorithm ended with {other}"))),
    }
}

fn run_simulation(ctx: &Ctx, path: &Path) -> Outcome {
    let spec = parse_model_file(path)?;
    let sys = build_lagrangian_system(&spec)?;
    let settings = SimSettings::from_spec(&spec)?;
    let formalism = match ctx.opts.formalism {
        Some(Formalism::Lagrangian) => SimFormalism::Lagrangian,
        Some(Formalism::Hamiltonian) => SimFormalism::Hamiltonian,
        Some(Formalism::Unified) => {
            return Err(Failure::Model("simulation runs in the lagrangian or hamiltonian formalism".into()))
        }
        None => spec.simulate.as_ref().map_or(SimFormalism::Lagrangian, |s| s.formalism),
    };
    let eqs = match formalism {
        SimFormalism::Lagrangian => herglotz_el_equations(&sys),
        SimFormalism::Hamiltonian => hhdw_equations(&hamiltonian(&sys)?),
    };
    let problem = compile_problem(&eqs, &settings)?;
    let run = simulate(&problem, &settings)?;
    let name = stem(path);
    ctx.write_only(&format!("{name}.csv"), &run.report.to_csv())?;
    let summary = run.report.summary();
    if let Some(dir) = &ctx.opts.out {
        std::fs::write(dir.join(format!("{name}.report.txt")), &summary)?;
    }
    let ok = run.report.termination == Termination::Completed;
    eprint!("{}", ctx.paint(&summary, ok));
    match run.report.termination {
        Termination::Completed => Ok(()),
        Termination::NonFinite { t, reason } => Err(Failure::Model(format!("integration stopped at t={t}: {reason}"))),
    }
}

fn export(ctx: &Ctx, file: &Path) -> Outcome {
    let src = std::fs::read_to_string(file).map_err(|e| Failure::Model(format!("{}: {e}", file.display())))?;
    let set = EquationSet::from_machine(&src)?;
    let style = LatexStyle::default();
    let name = format!("{}.{}", stem(file), ctx.opts.format.ext());
    ctx.emit(&name, &set.render(ctx.opts.format.core(), &style))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let color = std::env::var_os("MCF_NO_COLOR").is_none() && std::io::stdout().is_terminal();
    let ctx = Ctx { opts: cli.opts, color };
    let outcome = match &cli.verb {
        Verb::Derive { model } => derive(&ctx, model),
        Verb::Check { model } => check(&ctx, model),
        Verb::Unify { model } => unify(&ctx, model),
        Verb::Simulate { model } => run_simulation(&ctx, model),
        Verb::Export { file } => export(&ctx, file),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
