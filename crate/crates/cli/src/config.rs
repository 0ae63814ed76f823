use std::fmt;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use navier_bubble::bubble::Dimension;
use navier_bubble::expansions::Formula;
use navier_bubble::kfield::KField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Closed,
    Quad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemArg {
    #[value(name = "P")]
    P,
    #[value(name = "Q")]
    Q,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormArg {
    Gradient,
    KWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExtremumArg {
    Min,
    Max,
}

/// Comma-separated coordinates of a point in the open unit ball. A single
/// value `v` stands for `v·e_1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Point(pub Vec<f64>);

impl Point {
    pub fn resolve(&self, dim: Dimension) -> Result<Vec<f64>, String> {
        let n = dim.n();
        let coords = match self.0.len() {
            1 => {
                let mut v = vec![0.0; n];
                v[0] = self.0[0];
                v
            }
            len if len == n => self.0.clone(),
            len => return Err(format!("point has {len} coordinates, dimension is {n}")),
        };
        if coords.iter().map(|v| v * v).sum::<f64>() >= 1.0 {
            return Err(format!("point {} is not inside the unit ball", join(&coords)));
        }
        Ok(coords)
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", join(&self.0))
    }
}

/// Comma-separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct List(pub Vec<f64>);

impl fmt::Display for List {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", join(&self.0))
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            let p = p.trim();
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("'{p}' is not a finite number"))
        })
        .collect()
}

fn parse_point(s: &str) -> Result<Point, String> {
    parse_numbers(s).map(Point)
}

fn parse_list(s: &str) -> Result<List, String> {
    parse_numbers(s).map(List)
}

fn parse_dim(s: &str) -> Result<Dimension, String> {
    let n: usize = s.parse().map_err(|_| format!("'{s}' is not a dimension"))?;
    Dimension::new(n).map_err(|e| e.to_string())
}

fn parse_k(s: &str) -> Result<KField, String> {
    KField::from_str(s).and_then(KField::validated).map_err(|e| e.to_string())
}

fn parse_formula(s: &str) -> Result<Formula, String> {
    Formula::from_str(s)
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("'{s}' is not a positive number")),
    }
}

fn parse_nonnegative(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("'{s}' is not a non-negative number")),
    }
}

#[derive(Debug, Clone, PartialEq, Parser)]
#[command(name = "navier-bubble", version, about = "Bubble asymptotics for the nearly critical biharmonic Navier problem on the unit ball")]
pub struct RunConfig {
    /// Output format; `landscape` and `solve-radial` default to csv, the rest to json.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Seed for sampled checks.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Quadrature tolerance override.
    #[arg(long, global = true, value_parser = parse_positive)]
    pub tol: Option<f64>,
    /// Worker cap for parallel scans.
    #[arg(long, global = true, env = "NAVIER_BUBBLE_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand)]
pub enum Command {
    /// Universal constants with a cross-check between methods.
    Constants(ConstantsArgs),
    /// Green function, regular part and its x-gradient.
    Green(GreenArgs),
    /// Direct values against asymptotic expansions over a rate sweep.
    Expand(ExpandArgs),
    /// Root of the concentration-rate balance.
    Reduce(ReduceArgs),
    /// Reduced energy on a grid of centres and rates.
    Landscape(LandscapeArgs),
    /// Existence and nonexistence sign criteria.
    Criteria(CriteriaArgs),
    /// Radial branch continuation in eps.
    SolveRadial(SolveRadialArgs),
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ConstantsArgs {
    #[arg(long, value_parser = parse_dim)]
    pub dim: Dimension,
    #[arg(long, value_enum, default_value = "closed")]
    pub method: MethodArg,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct GreenArgs {
    #[arg(long, value_parser = parse_dim)]
    pub dim: Dimension,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub x: Point,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    pub y: Point,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ExpandArgs {
    #[arg(long, value_parser = parse_dim)]
    pub dim: Dimension,
    #[arg(long, value_parser = parse_formula)]
    pub formula: Formula,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0")]
    pub x: Point,
    #[arg(long, value_parser = parse_list, default_value = "10,20,40,80")]
    pub lambda_sweep: List,
    #[arg(long, value_parser = parse_nonnegative, default_value_t = 0.0)]
    pub eps: f64,
    #[arg(long, value_parser = parse_k, default_value = "const:1")]
    pub k: KField,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct ReduceArgs {
    #[arg(long, value_parser = parse_dim)]
    pub dim: Dimension,
    #[arg(long, value_parser = parse_k, default_value = "const:1")]
    pub k: KField,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0")]
    pub x: Point,
    #[arg(long, value_parser = parse_positive)]
    pub eps: f64,
    #[arg(long)]
    pub drop_delta_k: bool,
    #[arg(long, value_enum, default_value = "P")]
    pub problem: ProblemArg,
    #[arg(long, value_enum, default_value = "gradient")]
    pub form: FormArg,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct LandscapeArgs {
    #[arg(long, value_parser = parse_dim)]
    pub dim: Dimension,
    #[arg(long, value_parser = parse_k, default_value = "const:1")]
    pub k: KField,
    #[arg(long, value_parser = parse_nonnegative, default_value_t = 0.0)]
    pub eps: f64,
    /// Centres `r·e_1`.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true, default_value = "0")]
    pub radii: List,
    #[arg(long, value_parser = parse_positive, default_value_t = 10.0)]
    pub lambda_min: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 80.0)]
    pub lambda_max: f64,
    #[arg(long, default_value_t = 8)]
    pub lambda_count: usize,
    #[arg(long, value_enum, default_value = "min")]
    pub extremum: ExtremumArg,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct CriteriaArgs {
    #[arg(long, value_parser = parse_dim)]
    pub dim: Dimension,
    #[arg(long, value_parser = parse_k, default_value = "const:1")]
    pub k: KField,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true, default_value = "0")]
    pub x0: Point,
    #[arg(long, value_enum, default_value = "P")]
    pub problem: ProblemArg,
}

#[derive(Debug, Clone, PartialEq, Args)]
pub struct SolveRadialArgs {
    #[arg(long, value_parser = parse_dim)]
    pub dim: Dimension,
    #[arg(long, value_parser = parse_k, default_value = "const:1")]
    pub k: KField,
    #[arg(long, value_parser = parse_positive, default_value_t = 0.5)]
    pub eps_start: f64,
    #[arg(long, value_parser = parse_positive, default_value_t = 5e-3)]
    pub eps_end: f64,
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    /// Positive collocation nodes.
    #[arg(long, default_value_t = 160)]
    pub mesh: usize,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Constants(_) => "constants",
            Command::Green(_) => "green",
            Command::Expand(_) => "expand",
            Command::Reduce(_) => "reduce",
            Command::Landscape(_) => "landscape",
            Command::Criteria(_) => "criteria",
            Command::SolveRadial(_) => "solve-radial",
        }
    }

    fn default_format(&self) -> Format {
        match self {
            Command::Landscape(_) | Command::SolveRadial(_) => Format::Csv,
            _ => Format::Json,
        }
    }

    fn flags(&self) -> Vec<(&'static str, String)> {
        let d = |dim: &Dimension| dim.n().to_string();
        match self {
            Command::Constants(a) => vec![("dim", d(&a.dim)), ("method", value_name(a.method))],
            Command::Green(a) => vec![("dim", d(&a.dim)), ("x", a.x.to_string()), ("y", a.y.to_string())],
            Command::Expand(a) => vec![
                ("dim", d(&a.dim)),
                ("formula", a.formula.to_string()),
                ("x", a.x.to_string()),
                ("lambda-sweep", a.lambda_sweep.to_string()),
                ("eps", a.eps.to_string()),
                ("k", a.k.to_string()),
            ],
            Command::Reduce(a) => {
                let mut v = vec![
                    ("dim", d(&a.dim)),
                    ("k", a.k.to_string()),
                    ("x", a.x.to_string()),
                    ("eps", a.eps.to_string()),
                    ("problem", value_name(a.problem)),
                    ("form", value_name(a.form)),
                ];
                if a.drop_delta_k {
                    v.push(("drop-delta-k", String::new()));
                }
                v
            }
            Command::Landscape(a) => vec![
                ("dim", d(&a.dim)),
                ("k", a.k.to_string()),
                ("eps", a.eps.to_string()),
                ("radii", a.radii.to_string()),
                ("lambda-min", a.lambda_min.to_string()),
                ("lambda-max", a.lambda_max.to_string()),
                ("lambda-count", a.lambda_count.to_string()),
                ("extremum", value_name(a.extremum)),
            ],
            Command::Criteria(a) => vec![
                ("dim", d(&a.dim)),
                ("k", a.k.to_string()),
                ("x0", a.x0.to_string()),
                ("problem", value_name(a.problem)),
            ],
            Command::SolveRadial(a) => vec![
                ("dim", d(&a.dim)),
                ("k", a.k.to_string()),
                ("eps-start", a.eps_start.to_string()),
                ("eps-end", a.eps_end.to_string()),
                ("steps", a.steps.to_string()),
                ("mesh", a.mesh.to_string()),
            ],
        }
    }
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

impl RunConfig {
    /// Parses argv (program name first) and fills the format default.
    pub fn try_from_args<I, T>(args: I) -> Result<Self, clap::Error>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        let mut cfg = RunConfig::try_parse_from(args)?;
        cfg.format.get_or_insert(cfg.command.default_format());
        Ok(cfg)
    }

    pub fn format(&self) -> Format {
        self.format.unwrap_or(self.command.default_format())
    }

    /// Canonical argument list, without the program name.
    pub fn to_args(&self) -> Vec<String> {
        let mut args = vec![self.command.name().to_string()];
        for (flag, value) in self.command.flags() {
            if value.is_empty() {
                args.push(format!("--{flag}"));
            } else {
                args.push(format!("--{flag}={value}"));
            }
        }
        args.push(format!("--format={}", value_name(self.format())));
        args.push(format!("--seed={}", self.seed));
        if let Some(tol) = self.tol {
            args.push(format!("--tol={tol}"));
        }
        if let Some(threads) = self.threads {
            args.push(format!("--threads={threads}"));
        }
        args
    }

    /// Workers for parallel scans: available cores, capped by `--threads`.
    pub fn workers(&self) -> usize {
        let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        self.threads.map_or(cores, |t| t.min(cores)).max(1)
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_args().join(" "))
    }
}

impl FromStr for RunConfig {
    type Err = clap::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RunConfig::try_from_args(std::iter::once("navier-bubble").chain(s.split_whitespace()))
    }
}
