//! Command-line front end.
//!
//! One TOML config per run (`schema_version = 1`, unknown keys rejected),
//! overridden by `--set key=value` flags. Precedence: flag > file > default.
//! Exit codes: 0 all gates pass, 2 a gate failed, 1 configuration or
//! runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::analysis::{constants_row, infsup_report, lemma_check, theory_constants, CONSTANTS_HEADER, INFSUP_HEADER};
use crate::assembly::{write_triplets, write_vector, AssemblyOptions, PenaltyParams};
use crate::coefficient::{CoefficientField, CoefficientSpec};
use crate::error::{DgError, Result};
use crate::mesh::{ElementOrdering, Mesh};
use crate::output::{num, write_vtk, Csv};
use crate::solver::{solve_vbvp, SolveMethod, SolverOptions, Source, VbvpConfig};
use crate::space::{BrokenSpace, Degrees};
use crate::study::{conservation_of_system, convergence_study, manufactured, CaseId};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "fluxdg", version, about = "Flux-jump penalized DG solver and stability diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set nx=16 --set solver.tol=1e-12`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Shorthand for `--set output_dir=...`.
    #[arg(long, global = true)]
    output_dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve once; write norms, and fields when an output directory is set.
    Solve,
    /// Convergence table over `levels`.
    Converge,
    /// Measured inf-sup and continuity constants against the theory.
    Infsup,
    /// Per-element conservation residuals of a solve.
    Conserve,
    /// Closed-form constants only.
    Constants,
    /// Sampled lemma ratios (needs `seed`).
    Lemmas,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// `auto`, `direct` or `iterative`.
    pub method: String,
    pub tol: f64,
    pub restart: usize,
    pub max_iterations: usize,
    pub dense_limit: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverOptions::default();
        SolverSection {
            method: "auto".into(),
            tol: d.tol,
            restart: d.restart,
            max_iterations: d.max_iterations,
            dense_limit: d.dense_limit,
        }
    }
}

/// Raw run configuration as read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    /// `[x0, x1, y0, y1]`
    pub domain: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// `row_major` or `reversed`.
    pub ordering: String,
    pub p: usize,
    /// Per-element degrees; overrides `p` when present.
    pub degrees: Option<Vec<usize>>,
    pub sigma: f64,
    pub lambda: f64,
    pub zeta: f64,
    pub nu: f64,
    pub theta: f64,
    pub allow_zero_sigma: bool,
    /// Manufactured case `a`, `b`, `c`, or `zero`, or `constant:<f>`.
    pub problem: String,
    /// Coefficient spec; only for non-manufactured problems.
    pub coefficient: Option<String>,
    pub beta: f64,
    pub samples: usize,
    pub seed: Option<u64>,
    /// Mesh levels (`n x n`) for `converge`.
    pub levels: Vec<usize>,
    /// Mesh levels for `infsup`; empty means the configured mesh.
    pub infsup_levels: Vec<usize>,
    pub threads: usize,
    pub output_dir: Option<String>,
    pub vtk_resolution: usize,
    pub dump_matrix: bool,
    pub solver: SolverSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            domain: [0.0, 1.0, 0.0, 1.0],
            nx: 8,
            ny: 8,
            ordering: "row_major".into(),
            p: 2,
            degrees: None,
            sigma: 1.0,
            lambda: 0.0,
            zeta: 0.0,
            nu: 0.0,
            theta: 0.0,
            allow_zero_sigma: false,
            problem: "a".into(),
            coefficient: None,
            beta: -0.4,
            samples: 200,
            seed: None,
            levels: vec![4, 8, 16],
            infsup_levels: Vec::new(),
            threads: 1,
            output_dir: None,
            vtk_resolution: 64,
            dump_matrix: false,
            solver: SolverSection::default(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_override(s: &str) -> Result<toml::Table> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| DgError::Config(format!("override '{s}' is not KEY=VALUE")))?;
    let (key, value) = (key.trim(), value.trim());
    toml::from_str::<toml::Table>(&format!("{key} = {value}"))
        .or_else(|_| toml::from_str::<toml::Table>(&format!("{key} = {}", toml::Value::String(value.into()))))
        .map_err(|e| DgError::Config(format!("bad override '{s}': {e}")))
}

impl RunConfig {
    /// Defaults, then the file, then the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| DgError::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| DgError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            merge(&mut table, parse_override(o)?);
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| DgError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DgError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        let [x0, x1, y0, y1] = self.domain;
        if !(x1 > x0 && y1 > y0) || self.domain.iter().any(|v| !v.is_finite()) {
            return bad(format!("domain {:?} must satisfy x0 < x1 and y0 < y1", self.domain));
        }
        if self.nx == 0 || self.ny == 0 {
            return bad("nx and ny must be >= 1".into());
        }
        match &self.degrees {
            Some(d) if d.len() != self.nx * self.ny => {
                return bad(format!("{} degrees given for {} elements", d.len(), self.nx * self.ny))
            }
            Some(d) if d.contains(&0) => return bad("polynomial degrees must be >= 1".into()),
            None if self.p == 0 => return bad("p must be >= 1".into()),
            _ => {}
        }
        self.params().validate()?;
        self.ordering()?;
        self.solver_options()?;
        let source = self.source()?;
        if matches!(source, Source::Manufactured(_)) && self.coefficient.is_some() {
            return bad("coefficient cannot be set for a manufactured problem; the case fixes K".into());
        }
        if let Some(c) = &self.coefficient {
            c.parse::<CoefficientSpec>()?;
        }
        if self.threads == 0 {
            return bad("threads must be >= 1".into());
        }
        if self.levels.iter().chain(&self.infsup_levels).any(|&n| n == 0) {
            return bad("mesh levels must be >= 1".into());
        }
        if !self.beta.is_finite() {
            return bad("beta must be finite".into());
        }
        Ok(())
    }

    pub fn params(&self) -> PenaltyParams {
        PenaltyParams {
            sigma: self.sigma,
            lambda: self.lambda,
            zeta: self.zeta,
            nu: self.nu,
            theta: self.theta,
            allow_zero_sigma: self.allow_zero_sigma,
        }
    }

    fn ordering(&self) -> Result<ElementOrdering> {
        match self.ordering.as_str() {
            "row_major" => Ok(ElementOrdering::RowMajor),
            "reversed" => Ok(ElementOrdering::Reversed),
            o => Err(DgError::Config(format!("ordering '{o}' (expected row_major or reversed)"))),
        }
    }

    pub fn solver_options(&self) -> Result<SolverOptions> {
        let s = &self.solver;
        let method = match s.method.as_str() {
            "auto" => SolveMethod::Auto,
            "direct" => SolveMethod::Direct,
            "iterative" => SolveMethod::Iterative,
            m => return Err(DgError::Config(format!("solver.method '{m}' (expected auto, direct or iterative)"))),
        };
        if !(s.tol > 0.0) || s.restart == 0 {
            return Err(DgError::Config("solver.tol must be > 0 and solver.restart >= 1".into()));
        }
        Ok(SolverOptions {
            method,
            tol: s.tol,
            restart: s.restart,
            max_iterations: s.max_iterations,
            dense_limit: s.dense_limit,
        })
    }

    pub fn source(&self) -> Result<Source> {
        let p = self.problem.trim();
        if let Some(v) = p.strip_prefix("constant:") {
            return v
                .trim()
                .parse()
                .map(Source::Constant)
                .map_err(|_| DgError::Config(format!("bad constant source '{p}'")));
        }
        match p {
            "zero" => Ok(Source::Zero),
            other => other
                .parse::<CaseId>()
                .map(Source::Manufactured)
                .map_err(|_| DgError::Config(format!("problem '{other}' (expected a, b, c, zero or constant:<f>)"))),
        }
    }

    fn coefficient_spec(&self) -> Result<CoefficientSpec> {
        match self.source()? {
            Source::Manufactured(id) => Ok(manufactured(id).coefficient),
            _ => self.coefficient.as_deref().unwrap_or("constant:1").parse(),
        }
    }

    pub fn vbvp(&self, n: Option<usize>) -> Result<VbvpConfig> {
        let (nx, ny) = n.map_or((self.nx, self.ny), |n| (n, n));
        Ok(VbvpConfig {
            domain: self.domain,
            nx,
            ny,
            ordering: self.ordering()?,
            degrees: self.degrees_for(nx * ny)?,
            params: self.params(),
            coefficient: self.coefficient_spec()?,
            source: self.source()?,
            solver: self.solver_options()?,
            threads: self.threads,
        })
    }

    fn degrees_for(&self, n_elements: usize) -> Result<Degrees> {
        match &self.degrees {
            Some(d) if d.len() == n_elements => Ok(Degrees::PerElement(d.clone())),
            Some(_) => Err(DgError::Config("per-element degrees only apply to the configured mesh".into())),
            None => Ok(Degrees::Uniform(self.p)),
        }
    }

    fn space(&self, n: Option<usize>) -> Result<(Arc<BrokenSpace>, CoefficientField)> {
        let v = self.vbvp(n)?;
        let mesh = Arc::new(Mesh::rectangular_with_ordering(v.domain, v.nx, v.ny, v.ordering)?);
        let space = Arc::new(BrokenSpace::new(mesh, v.degrees)?);
        let k = CoefficientField::new(&v.coefficient, &space)?;
        Ok((space, k))
    }
}

/// What a subcommand produced: named CSV tables and whether its gates held.
struct Outcome {
    tables: Vec<(&'static str, Csv)>,
    gates_pass: bool,
}

fn cmd_solve(cfg: &RunConfig) -> Result<Outcome> {
    let out = solve_vbvp(&cfg.vbvp(None)?)?;
    let max_abs = out.solution.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let mut t = Csv::new(&[
        "fingerprint",
        "dofs",
        "method",
        "relative_residual",
        "triple_norm",
        "l2_norm",
        "h1_norm",
        "max_abs_coeff",
        "l2_error",
        "h1_error",
        "triple_error",
    ]);
    let err = |f: fn(&crate::norms::ErrorNorms) -> f64| out.norms.errors.as_ref().map_or_else(String::new, |e| num(f(e)));
    t.push(vec![
        out.system.fingerprint.clone(),
        out.space.n_dofs().to_string(),
        format!("{:?}", out.report.method).to_lowercase(),
        num(out.report.relative_residual),
        num(out.norms.triple),
        num(out.norms.l2),
        num(out.norms.h1),
        num(max_abs),
        err(|e| e.l2),
        err(|e| e.h1),
        err(|e| e.triple),
    ]);
    if let Some(dir) = &cfg.output_dir {
        let dir = Path::new(dir);
        fs::create_dir_all(dir)?;
        write_vtk(&out.solution, cfg.vtk_resolution, fs::File::create(dir.join("solution.vtk"))?)?;
        fs::write(dir.join("mesh.txt"), out.space.mesh().summary())?;
        if cfg.dump_matrix {
            write_triplets(&out.system.matrix, fs::File::create(dir.join("matrix.txt"))?)?;
            write_vector(&out.system.rhs, fs::File::create(dir.join("rhs.txt"))?)?;
        }
    }
    let gates_pass = out.report.relative_residual <= cfg.solver.tol;
    Ok(Outcome {
        tables: vec![("solve", t)],
        gates_pass,
    })
}

fn cmd_converge(cfg: &RunConfig) -> Result<Outcome> {
    let Source::Manufactured(case) = cfg.source()? else {
        return Err(DgError::Config("converge needs a manufactured problem (a, b or c)".into()));
    };
    if cfg.degrees.is_some() {
        return Err(DgError::Config("converge uses a uniform degree p".into()));
    }
    let table = convergence_study(case, &cfg.params(), &cfg.levels, cfg.p, &cfg.solver_options()?, cfg.threads)?;
    let mut gates_pass = table.errors_strictly_decrease();
    if cfg.p >= 2 {
        // Loose gate borrowed from standard DG behavior.
        gates_pass &= table.last_h1_order().is_some_and(|o| o >= cfg.p as f64 - 0.25);
    }
    Ok(Outcome {
        tables: vec![("converge", table.to_csv())],
        gates_pass,
    })
}

fn cmd_infsup(cfg: &RunConfig) -> Result<Outcome> {
    let levels: Vec<Option<usize>> = if cfg.infsup_levels.is_empty() {
        vec![None]
    } else {
        cfg.infsup_levels.iter().map(|&n| Some(n)).collect()
    };
    let mut t = Csv::new(&INFSUP_HEADER);
    let mut gates_pass = true;
    let opts = AssemblyOptions { threads: cfg.threads };
    for n in levels {
        let (space, k) = cfg.space(n)?;
        let rep = infsup_report(&space, &k, &cfg.params(), cfg.beta, &opts)?;
        gates_pass &= rep.measured.gamma_h > 0.0 && rep.measured.gamma_h <= rep.measured.m_h && rep.continuity_holds();
        t.push(rep.csv_row());
    }
    Ok(Outcome {
        tables: vec![("infsup", t)],
        gates_pass,
    })
}

fn cmd_conserve(cfg: &RunConfig) -> Result<Outcome> {
    let out = solve_vbvp(&cfg.vbvp(None)?)?;
    let f = out.source();
    let rep = conservation_of_system(&out.solution, &out.coefficient, &*f, &out.system.matrix, &out.system.rhs);
    let mut t = Csv::new(&["element", "residual"]);
    for (e, r) in rep.residuals.iter().enumerate() {
        t.push(vec![e.to_string(), num(*r)]);
    }
    let mut s = Csv::new(&["max_abs_residual", "f_l2", "sum_residuals", "global_galerkin_residual"]);
    s.push(vec![
        num(rep.max_abs),
        num(rep.f_l2),
        num(rep.sum),
        num(rep.global_galerkin.unwrap_or(f64::NAN)),
    ]);
    Ok(Outcome {
        gates_pass: rep.passes(1e-10),
        tables: vec![("conserve", t), ("conserve_summary", s)],
    })
}

fn cmd_constants(cfg: &RunConfig) -> Result<Outcome> {
    let (space, k) = cfg.space(None)?;
    let t = theory_constants(&cfg.params(), space.mesh().h(), space.p(), cfg.beta, k.continuity_c());
    let mut csv = Csv::new(&CONSTANTS_HEADER);
    csv.push(constants_row(&t));
    Ok(Outcome {
        tables: vec![("constants", csv)],
        gates_pass: t.xi2_positive,
    })
}

fn cmd_lemmas(cfg: &RunConfig) -> Result<Outcome> {
    let seed = cfg
        .seed
        .ok_or_else(|| DgError::Config("lemmas samples random functions; set `seed`".into()))?;
    let (space, k) = cfg.space(None)?;
    let rep = lemma_check(&space, &k, &cfg.params(), cfg.beta, cfg.samples, seed)?;
    // Lemma failures are findings, not gate failures.
    Ok(Outcome {
        tables: vec![("lemmas", rep.to_csv())],
        gates_pass: true,
    })
}

pub fn execute(command: Command, cfg: &RunConfig, out: &mut dyn Write) -> Result<bool> {
    let outcome = match command {
        Command::Solve => cmd_solve(cfg),
        Command::Converge => cmd_converge(cfg),
        Command::Infsup => cmd_infsup(cfg),
        Command::Conserve => cmd_conserve(cfg),
        Command::Constants => cmd_constants(cfg),
        Command::Lemmas => cmd_lemmas(cfg),
    }?;
    for (i, (name, table)) in outcome.tables.iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        table.write(&mut *out)?;
        if let Some(dir) = &cfg.output_dir {
            fs::create_dir_all(dir)?;
            table.write(fs::File::create(Path::new(dir).join(format!("{name}.csv")))?)?;
        }
    }
    Ok(outcome.gates_pass)
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut overrides = cli.set.clone();
    if let Some(d) = &cli.output_dir {
        overrides.push(format!("output_dir={}", toml::Value::String(d.clone())));
    }
    let result = RunConfig::load(cli.config.as_deref(), &overrides).and_then(|cfg| execute(cli.command, &cfg, out));
    match result {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("one or more gates failed");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::load(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.params(), PenaltyParams::flat(1.0));
    }

    #[test]
    fn override_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "schema_version = 1\nnx = 4\nny = 4\n[solver]\ntol = 1e-11\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["nx=6".into(), "solver.method=direct".into()]).unwrap();
        assert_eq!((cfg.nx, cfg.ny), (6, 4));
        assert_eq!(cfg.solver.tol, 1e-11);
        assert_eq!(cfg.solver.method, "direct");
    }

    #[test]
    fn unknown_key_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "schema_version = 1\nmesh_size = 4\n").unwrap();
        assert!(matches!(RunConfig::load(Some(&path), &[]), Err(DgError::Config(_))));
    }

    #[test]
    fn preconditions_checked() {
        for o in [
            "sigma=0",
            "nx=0",
            "p=0",
            "schema_version=2",
            "problem=\"q\"",
            "domain=[0.0, 0.0, 0.0, 1.0]",
            "coefficient=\"constant:2\"",
            "solver.method=\"lu\"",
        ] {
            assert!(RunConfig::load(None, &[o.to_string()]).is_err(), "{o}");
        }
        let ok = RunConfig::load(None, &["problem=zero".into(), "coefficient=\"checkerboard:1,10\"".into()]);
        assert!(ok.is_ok());
    }

    #[test]
    fn lemmas_need_seed() {
        let mut buf = Vec::new();
        assert_eq!(run(["fluxdg", "lemmas", "--set", "nx=1", "--set", "ny=1"], &mut buf), 1);
        assert_eq!(
            run(["fluxdg", "lemmas", "--set", "nx=1", "--set", "ny=1", "--set", "seed=1", "--set", "samples=3"], &mut buf),
            0
        );
    }
}
