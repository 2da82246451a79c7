//! TOML experiment configuration.
//!
//! A config holds either an explicit `[system]` or a `[bet_hedging]` table
//! (which expands to a system), plus optional `[solver]` and `[simulate]`
//! tables. Syntax errors carry the position reported by the TOML parser;
//! model errors found after parsing are tied to the line of the offending
//! table or field.

use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use smjls::bethedging::{Antibiotic, BetHedgingParams, REFERENCE_HORIZON, REFERENCE_MEAN_SOJOURN};
use smjls::numlin::DenseMatrix;
use smjls::optimizer::SolverOptions;
use smjls::posy::{Monomial, PosyOrZero, Posynomial};
use smjls::system::{
    Constraint, DecayOptions, KernelOptions, Mode, ParametrizedSystem, SemiMarkovChain, SojournDistribution,
};
use toml::Spanned;

use crate::error::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: Option<Spanned<SystemSection>>,
    pub bet_hedging: Option<Spanned<BetHedgingSection>>,
    /// Default evaluation point for `decay-rate` and `simulate`.
    pub theta: Option<Spanned<Vec<f64>>>,
    /// Default cost bound for `optimize --mode budget` on an explicit system.
    pub budget: Option<f64>,
    /// Default rate for `optimize --mode performance`.
    pub target_rate: Option<f64>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub simulate: SimulateSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub state_dim: usize,
    pub num_modes: usize,
    pub param_dim: usize,
    pub horizon: f64,
    pub modes: Vec<Spanned<ModeSection>>,
    pub chain: Spanned<ChainSection>,
    pub cost: Option<Spanned<Vec<TermSpec>>>,
    #[serde(default)]
    pub constraints: Vec<Spanned<ConstraintSection>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSection {
    pub offset: Vec<Vec<f64>>,
    /// `n x n` table of posynomial entries; each is `"0"` or a term list.
    pub parametric: Option<Vec<Vec<EntrySpec>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub coeff: f64,
    pub exponents: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EntrySpec {
    Zero(String),
    Terms(Vec<TermSpec>),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSection {
    pub transition: Vec<Vec<f64>>,
    /// One law per mode, used whatever the next mode is.
    pub sojourn_per_mode: Option<Vec<SojournSpec>>,
    /// Full `N x N` table; entry `(j, i)` is the holding time in `j` before
    /// a switch to `i`.
    pub sojourn: Option<Vec<Vec<SojournSpec>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SojournSpec {
    /// Either `scale` or `mean` together with `shape`.
    Weibull {
        scale: Option<f64>,
        mean: Option<f64>,
        shape: f64,
    },
    Exponential {
        rate: f64,
    },
    Uniform,
    Dirac {
        point: f64,
    },
}

impl SojournSpec {
    pub fn build(&self, horizon: f64) -> smjls::Result<SojournDistribution> {
        match *self {
            SojournSpec::Weibull {
                scale: Some(scale),
                mean: None,
                shape,
            } => SojournDistribution::weibull(scale, shape, horizon),
            SojournSpec::Weibull {
                scale: None,
                mean: Some(mean),
                shape,
            } => SojournDistribution::weibull_with_mean(mean, shape, horizon),
            SojournSpec::Weibull { .. } => Err(smjls::Error::InvalidArgument(
                "a Weibull sojourn needs exactly one of `scale` and `mean`".into(),
            )),
            SojournSpec::Exponential { rate } => SojournDistribution::exponential(rate, horizon),
            SojournSpec::Uniform => SojournDistribution::uniform(horizon),
            SojournSpec::Dirac { point } => SojournDistribution::dirac(point, horizon),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    pub terms: Vec<TermSpec>,
    pub bound: f64,
}

/// Overrides of the reference bet-hedging parameters; every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetHedgingSection {
    /// Dose budget (before the shift to `θ`).
    pub budget: Option<f64>,
    /// Shape `q` applied to every antibiotic.
    pub shape: Option<f64>,
    pub growth: Option<Vec<Vec<f64>>>,
    pub switching: Option<Vec<Vec<Vec<f64>>>>,
    pub antibiotics: Option<Vec<AntibioticSpec>>,
    pub horizon: Option<f64>,
    /// Holding time in environment 1 before switching to 2, and back.
    pub sojourn12: Option<SojournSpec>,
    pub sojourn21: Option<SojournSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AntibioticSpec {
    pub max_dose: f64,
    pub offset: f64,
    pub shape: f64,
    pub potency: Vec<f64>,
    pub unit_cost: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub kkt_tol: Option<f64>,
    pub feas_tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
    pub mu0: Option<f64>,
    pub mu_factor: Option<f64>,
    pub mu_min: Option<f64>,
    pub grad_clip: Option<f64>,
    pub decay_tol: Option<f64>,
    pub g_cap: Option<f64>,
    pub panel_nodes: Option<usize>,
    pub check_tol: Option<f64>,
    pub max_panel_nodes: Option<usize>,
}

impl SolverSection {
    pub fn options(&self) -> SolverOptions {
        let d = SolverOptions::default();
        let k = KernelOptions::default();
        let dec = DecayOptions::default();
        SolverOptions {
            kkt_tol: self.kkt_tol.unwrap_or(d.kkt_tol),
            feas_tol: self.feas_tol.unwrap_or(d.feas_tol),
            max_outer: self.max_outer.unwrap_or(d.max_outer),
            max_inner: self.max_inner.unwrap_or(d.max_inner),
            mu0: self.mu0.unwrap_or(d.mu0),
            mu_factor: self.mu_factor.unwrap_or(d.mu_factor),
            mu_min: self.mu_min.unwrap_or(d.mu_min),
            grad_clip: self.grad_clip.unwrap_or(d.grad_clip),
            decay: DecayOptions {
                tol: self.decay_tol.unwrap_or(dec.tol),
                g_cap: self.g_cap.unwrap_or(dec.g_cap),
                kernel: KernelOptions {
                    panel_nodes: self.panel_nodes.unwrap_or(k.panel_nodes),
                    check_tol: self.check_tol.unwrap_or(k.check_tol),
                    max_panel_nodes: self.max_panel_nodes.unwrap_or(k.max_panel_nodes),
                },
            },
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub x0: Option<Vec<f64>>,
    pub sigma0: Option<usize>,
    pub horizon: Option<f64>,
    pub grid_points: Option<usize>,
}

/// What a config describes once validated.
pub enum Model {
    Explicit(ParametrizedSystem),
    BetHedging(BetHedgingParams),
}

pub struct LoadedConfig {
    pub path: PathBuf,
    pub text: String,
    pub file: ConfigFile,
    pub model: Model,
}

impl LoadedConfig {
    pub fn system(&self) -> Result<ParametrizedSystem, CliError> {
        match &self.model {
            Model::Explicit(s) => Ok(s.clone()),
            Model::BetHedging(p) => p.build_system().map_err(|e| self.error_at(None, "bet_hedging", e)),
        }
    }

    pub fn bet_hedging(&self) -> Option<&BetHedgingParams> {
        match &self.model {
            Model::BetHedging(p) => Some(p),
            Model::Explicit(_) => None,
        }
    }

    pub fn solver(&self) -> SolverOptions {
        self.file.solver.options()
    }

    fn error_at(&self, span: Option<&Range<usize>>, field: &str, msg: impl std::fmt::Display) -> CliError {
        located(&self.path, &self.text, span, field, msg)
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn located(path: &Path, text: &str, span: Option<&Range<usize>>, field: &str, msg: impl std::fmt::Display) -> CliError {
    let place = match span {
        Some(s) => format!("{}:{}", path.display(), line_of(text, s.start)),
        None => path.display().to_string(),
    };
    CliError::Config(format!("{place}: {field}: {msg}"))
}

pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(path, text)
}

pub fn parse(path: &Path, text: String) -> Result<LoadedConfig, CliError> {
    let file: ConfigFile = toml::from_str(&text).map_err(|e| {
        let line = e
            .span()
            .map(|s| format!(":{}", line_of(&text, s.start)))
            .unwrap_or_default();
        CliError::Config(format!("{}{line}: {}", path.display(), e.message().trim_end()))
    })?;
    let model = match (&file.system, &file.bet_hedging) {
        (Some(sys), None) => Model::Explicit(build_system(path, &text, sys)?),
        (None, Some(bh)) => Model::BetHedging(build_bet_hedging(path, &text, bh)?),
        (Some(sys), Some(_)) => {
            return Err(located(
                path,
                &text,
                Some(&sys.span()),
                "system",
                "give either [system] or [bet_hedging], not both",
            ))
        }
        (None, None) => {
            return Err(CliError::Config(format!(
                "{}: config needs a [system] or a [bet_hedging] table",
                path.display()
            )))
        }
    };
    let cfg = LoadedConfig {
        path: path.to_path_buf(),
        text,
        file,
        model,
    };
    if let Some(theta) = &cfg.file.theta {
        let system = cfg.system()?;
        system
            .check_params(theta.get_ref())
            .map_err(|e| cfg.error_at(Some(&theta.span()), "theta", e))?;
    }
    Ok(cfg)
}

fn matrix(rows: &[Vec<f64>]) -> smjls::Result<DenseMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().position(|row| row.len() != c) {
        return Err(smjls::Error::Shape(format!(
            "row {bad} has {} entries, row 0 has {c}",
            rows[bad].len()
        )));
    }
    DenseMatrix::new(r, c, rows.concat())
}

fn posynomial(terms: &[TermSpec], dim: usize) -> smjls::Result<Posynomial> {
    let monos = terms
        .iter()
        .map(|t| {
            if t.exponents.len() != dim {
                return Err(smjls::Error::Shape(format!(
                    "term has {} exponents, expected param_dim = {dim}",
                    t.exponents.len()
                )));
            }
            Monomial::new(t.coeff, t.exponents.clone())
        })
        .collect::<smjls::Result<Vec<_>>>()?;
    Posynomial::new(monos)
}

fn entry(spec: &EntrySpec, dim: usize) -> smjls::Result<PosyOrZero> {
    match spec {
        EntrySpec::Zero(s) if s.trim() == "0" => Ok(PosyOrZero::Zero),
        EntrySpec::Zero(s) => Err(smjls::Error::InvalidArgument(format!(
            "entry must be \"0\" or a list of terms, got {s:?}"
        ))),
        EntrySpec::Terms(t) if t.is_empty() => Ok(PosyOrZero::Zero),
        EntrySpec::Terms(t) => Ok(posynomial(t, dim)?.into()),
    }
}

fn build_system(path: &Path, text: &str, sys: &Spanned<SystemSection>) -> Result<ParametrizedSystem, CliError> {
    let at =
        |span: Range<usize>, field: &str, msg: &dyn std::fmt::Display| located(path, text, Some(&span), field, msg);
    let s = sys.get_ref();
    let (n, l) = (s.state_dim, s.param_dim);
    if s.modes.len() != s.num_modes {
        return Err(at(
            sys.span(),
            "system.modes",
            &format!(
                "num_modes = {} but {} [[system.modes]] tables given",
                s.num_modes,
                s.modes.len()
            ),
        ));
    }
    let mut modes = Vec::with_capacity(s.modes.len());
    for (k, m) in s.modes.iter().enumerate() {
        let field = format!("system.modes[{k}]");
        let build = || -> smjls::Result<Mode> {
            let offset = matrix(&m.get_ref().offset)?;
            if offset.rows() != n || offset.cols() != n {
                return Err(smjls::Error::Shape(format!(
                    "offset is {}x{}, state_dim is {n}",
                    offset.rows(),
                    offset.cols()
                )));
            }
            let parametric = match &m.get_ref().parametric {
                None => vec![PosyOrZero::Zero; n * n],
                Some(rows) => {
                    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                        return Err(smjls::Error::Shape(format!("parametric table must be {n}x{n}")));
                    }
                    rows.iter()
                        .flatten()
                        .map(|e| entry(e, l))
                        .collect::<smjls::Result<Vec<_>>>()?
                }
            };
            Mode::new(offset, parametric)
        };
        modes.push(build().map_err(|e| at(m.span(), &field, &e))?);
    }

    let chain_spec = s.chain.get_ref();
    let chain = (|| -> smjls::Result<SemiMarkovChain> {
        let p = matrix(&chain_spec.transition)?;
        if p.rows() != s.num_modes {
            return Err(smjls::Error::Shape(format!(
                "transition matrix has {} rows, num_modes is {}",
                p.rows(),
                s.num_modes
            )));
        }
        match (&chain_spec.sojourn_per_mode, &chain_spec.sojourn) {
            (Some(laws), None) => {
                let laws = laws
                    .iter()
                    .map(|d| d.build(s.horizon))
                    .collect::<smjls::Result<Vec<_>>>()?;
                SemiMarkovChain::per_mode(p, laws)
            }
            (None, Some(table)) => {
                let laws = table
                    .iter()
                    .flatten()
                    .map(|d| d.build(s.horizon))
                    .collect::<smjls::Result<Vec<_>>>()?;
                SemiMarkovChain::new(p, laws)
            }
            _ => Err(smjls::Error::InvalidArgument(
                "give exactly one of `sojourn_per_mode` and `sojourn`".into(),
            )),
        }
    })()
    .map_err(|e| at(s.chain.span(), "system.chain", &e))?;

    let cost = match &s.cost {
        Some(c) => posynomial(c.get_ref(), l).map_err(|e| at(c.span(), "system.cost", &e))?,
        None if l == 0 => Posynomial::new(vec![
            Monomial::constant(1.0, 0).map_err(|e| at(sys.span(), "system", &e))?
        ])
        .map_err(|e| at(sys.span(), "system", &e))?,
        None => return Err(at(sys.span(), "system.cost", &"required when param_dim > 0")),
    };
    let mut constraints = Vec::new();
    for (k, c) in s.constraints.iter().enumerate() {
        let field = format!("system.constraints[{k}]");
        let con = posynomial(&c.get_ref().terms, l)
            .and_then(|p| Constraint::new(p, c.get_ref().bound))
            .map_err(|e| at(c.span(), &field, &e))?;
        constraints.push(con);
    }
    ParametrizedSystem::new(modes, chain, cost, constraints).map_err(|e| at(sys.span(), "system", &e))
}

fn build_bet_hedging(path: &Path, text: &str, bh: &Spanned<BetHedgingSection>) -> Result<BetHedgingParams, CliError> {
    let err = |e: smjls::Error| located(path, text, Some(&bh.span()), "bet_hedging", e);
    let s = bh.get_ref();
    let horizon = s.horizon.unwrap_or(REFERENCE_HORIZON);
    let reference_law = SojournSpec::Weibull {
        scale: None,
        mean: Some(REFERENCE_MEAN_SOJOURN),
        shape: 5.0,
    };
    let f12 = s
        .sojourn12
        .as_ref()
        .unwrap_or(&reference_law)
        .build(horizon)
        .map_err(err)?;
    let f21 = s
        .sojourn21
        .as_ref()
        .unwrap_or(&reference_law)
        .build(horizon)
        .map_err(err)?;
    let mut p = BetHedgingParams::reference_with_sojourns(f12, f21).map_err(err)?;
    if let Some(b) = s.budget {
        p.budget = b;
    }
    if let Some(g) = &s.growth {
        p.growth = g.clone();
    }
    if let Some(w) = &s.switching {
        p.switching = w
            .iter()
            .map(|m| matrix(m))
            .collect::<smjls::Result<Vec<_>>>()
            .map_err(err)?;
    }
    if let Some(abs) = &s.antibiotics {
        p.antibiotics = abs
            .iter()
            .map(|a| Antibiotic {
                max_dose: a.max_dose,
                offset: a.offset,
                shape: a.shape,
                potency: a.potency.clone(),
                unit_cost: a.unit_cost,
            })
            .collect();
    }
    if let Some(q) = s.shape {
        p = p.with_shape(q);
    }
    // surfaces dimension and dose-response problems now rather than per command
    p.build_system().map_err(err)?;
    Ok(p)
}
