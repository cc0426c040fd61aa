//! Temporal structural causal model types.
//!
//! A model is a lagged DAG `G_0 .. G_K` over `N` variables together with one
//! additive mechanism and one noise law per variable. `G_0` holds the
//! instantaneous edges and must be acyclic; `G_k` for `k >= 1` holds edges from
//! time `t - k` to time `t` and may contain self-loops.
//!
//! Regime-switching models carry one `(graph, mechanisms)` pair per regime plus
//! a row-stochastic transition matrix; noise is shared across regimes.
//!
//! Time is 0-based everywhere: a series of length `T` covers `t = 0 .. T-1`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when checking that a transition row sums to one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Elementwise nonlinearity applied to a parent value before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Sin,
    Cos,
    Tanh,
    Abs,
    Square,
    ExpNegAbs,
}

impl Activation {
    pub const ALL: [Activation; 7] = [
        Activation::Identity,
        Activation::Sin,
        Activation::Cos,
        Activation::Tanh,
        Activation::Abs,
        Activation::Square,
        Activation::ExpNegAbs,
    ];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sin => x.sin(),
            Activation::Cos => x.cos(),
            Activation::Tanh => x.tanh(),
            Activation::Abs => x.abs(),
            Activation::Square => x * x,
            Activation::ExpNegAbs => (-x.abs()).exp(),
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sin => "sin",
            Activation::Cos => "cos",
            Activation::Tanh => "tanh",
            Activation::Abs => "abs",
            Activation::Square => "square",
            Activation::ExpNegAbs => "exp_neg_abs",
        }
    }
}

/// Lagged adjacency `G_0 .. G_K` with a topological order witnessing that
/// `G_0` is acyclic.
///
/// `adjacency[k][from * n_vars + to]` is the edge `X^(from)_{t-k} -> X^(to)_t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaggedDag {
    pub n_vars: usize,
    pub max_lag: usize,
    pub adjacency: Vec<Vec<bool>>,
    pub topo_order: Vec<usize>,
}

impl LaggedDag {
    /// Edgeless graph with the identity topological order.
    pub fn empty(n_vars: usize, max_lag: usize) -> Self {
        LaggedDag {
            n_vars,
            max_lag,
            adjacency: vec![vec![false; n_vars * n_vars]; max_lag + 1],
            topo_order: (0..n_vars).collect(),
        }
    }

    #[inline]
    pub fn edge(&self, lag: usize, from: usize, to: usize) -> bool {
        self.adjacency[lag][from * self.n_vars + to]
    }

    pub fn set_edge(&mut self, lag: usize, from: usize, to: usize, present: bool) {
        let n = self.n_vars;
        self.adjacency[lag][from * n + to] = present;
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency
            .iter()
            .map(|m| m.iter().filter(|&&e| e).count())
            .sum()
    }

    /// Parents of `var` across all lags, ordered by `(lag, parent var)`.
    pub fn parents_of(&self, var: usize) -> Vec<Parent> {
        let mut out = Vec::new();
        for lag in 0..=self.max_lag {
            for from in 0..self.n_vars {
                if self.edge(lag, from, var) {
                    out.push(Parent { var: from, lag });
                }
            }
        }
        out
    }

    /// Parents of the unrolled cell `(var, t)` as `(var, time)` pairs.
    /// Parents that would fall before `t = 0` are dropped.
    pub fn unrolled_parents(&self, var: usize, t: usize) -> Result<BTreeSet<(usize, usize)>> {
        if var >= self.n_vars {
            return Err(Error::input(format!(
                "variable {var} out of range for {} variables",
                self.n_vars
            )));
        }
        Ok(self
            .parents_of(var)
            .into_iter()
            .filter(|p| p.lag <= t)
            .map(|p| (p.var, t - p.lag))
            .collect())
    }

    /// Checks that `G_0` admits some topological order, independently of
    /// the stored witness (Kahn's algorithm).
    pub fn instantaneous_is_acyclic(&self) -> bool {
        let n = self.n_vars;
        let mut indegree = vec![0usize; n];
        for from in 0..n {
            for to in 0..n {
                if self.edge(0, from, to) {
                    indegree[to] += 1;
                }
            }
        }
        let mut stack: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = stack.pop() {
            seen += 1;
            for to in 0..n {
                if self.edge(0, v, to) {
                    indegree[to] -= 1;
                    if indegree[to] == 0 {
                        stack.push(to);
                    }
                }
            }
        }
        seen == n
    }
}

/// A lagged parent slot of a mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Parent {
    pub var: usize,
    pub lag: usize,
}

/// Additive mechanism `f_i(x) = sum_j w_ij * phi_ij(x_j) + b_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mechanism {
    pub parents: Vec<Parent>,
    pub weights: Vec<f64>,
    pub activations: Vec<Activation>,
    pub bias: f64,
}

impl Mechanism {
    pub fn constant(bias: f64) -> Self {
        Mechanism {
            parents: Vec::new(),
            weights: Vec::new(),
            activations: Vec::new(),
            bias,
        }
    }

    /// Evaluates the mechanism. `value(parent)` returns the parent's value,
    /// or `None` when it lies before the start of the series.
    #[inline]
    pub fn evaluate(&self, mut value: impl FnMut(Parent) -> Option<f64>) -> f64 {
        let mut acc = self.bias;
        for ((p, w), a) in self.parents.iter().zip(&self.weights).zip(&self.activations) {
            if let Some(x) = value(*p) {
                acc += w * a.apply(x);
            }
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    Uniform,
    Laplace,
}

impl NoiseFamily {
    pub const ALL: [NoiseFamily; 3] = [NoiseFamily::Gaussian, NoiseFamily::Uniform, NoiseFamily::Laplace];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

/// Zero-centred noise law. `scale` is the standard deviation for Gaussian,
/// the half-width for Uniform and the diversity `b` for Laplace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyTag {
    DiverseNonlinear,
    Chain,
    RegimeSwitching,
}

impl FamilyTag {
    pub const ALL: [FamilyTag; 3] = [FamilyTag::DiverseNonlinear, FamilyTag::Chain, FamilyTag::RegimeSwitching];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            FamilyTag::DiverseNonlinear => "diverse_nonlinear",
            FamilyTag::Chain => "chain",
            FamilyTag::RegimeSwitching => "regime_switching",
        }
    }
}

/// Single-regime temporal SCM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tscm {
    pub graph: LaggedDag,
    pub mechanisms: Vec<Mechanism>,
    pub noise: Vec<NoiseSpec>,
    pub family: FamilyTag,
    /// Edge probability drawn for this model, when the family draws one.
    pub edge_prob: Option<f64>,
}

/// One regime of a switching model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub graph: LaggedDag,
    pub mechanisms: Vec<Mechanism>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSwitchingTscm {
    pub regimes: Vec<Regime>,
    pub noise: Vec<NoiseSpec>,
    pub transition: Vec<Vec<f64>>,
    pub edge_prob: Option<f64>,
}

/// Either kind of sampled causal world.
#[derive(Debug, Clone, PartialEq)]
pub enum CausalModel {
    Single(Tscm),
    Switching(RegimeSwitchingTscm),
}

impl CausalModel {
    pub fn n_vars(&self) -> usize {
        self.regime_graph(0).n_vars
    }

    pub fn max_lag(&self) -> usize {
        self.regime_graph(0).max_lag
    }

    pub fn family(&self) -> FamilyTag {
        match self {
            CausalModel::Single(m) => m.family,
            CausalModel::Switching(_) => FamilyTag::RegimeSwitching,
        }
    }

    pub fn noise(&self) -> &[NoiseSpec] {
        match self {
            CausalModel::Single(m) => &m.noise,
            CausalModel::Switching(m) => &m.noise,
        }
    }

    pub fn n_regimes(&self) -> usize {
        match self {
            CausalModel::Single(_) => 1,
            CausalModel::Switching(m) => m.regimes.len(),
        }
    }

    pub fn edge_prob(&self) -> Option<f64> {
        match self {
            CausalModel::Single(m) => m.edge_prob,
            CausalModel::Switching(m) => m.edge_prob,
        }
    }

    pub fn transition(&self) -> Option<&[Vec<f64>]> {
        match self {
            CausalModel::Single(_) => None,
            CausalModel::Switching(m) => Some(&m.transition),
        }
    }

    pub fn regime_graph(&self, regime: usize) -> &LaggedDag {
        match self {
            CausalModel::Single(m) => &m.graph,
            CausalModel::Switching(m) => &m.regimes[regime].graph,
        }
    }

    pub fn regime_mechanisms(&self, regime: usize) -> &[Mechanism] {
        match self {
            CausalModel::Single(m) => &m.mechanisms,
            CausalModel::Switching(m) => &m.regimes[regime].mechanisms,
        }
    }

    pub fn is_switching(&self) -> bool {
        matches!(self, CausalModel::Switching(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionKind {
    Hard,
    Soft,
    TimeVarying,
}

impl InterventionKind {
    pub const ALL: [InterventionKind; 3] = [InterventionKind::Hard, InterventionKind::Soft, InterventionKind::TimeVarying];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            InterventionKind::Hard => "hard",
            InterventionKind::Soft => "soft",
            InterventionKind::TimeVarying => "time_varying",
        }
    }
}

/// Shape of a time-varying clamp trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Profile {
    Step { level: f64 },
    Ramp { start: f64, end: f64 },
    Sinusoidal { amplitude: f64, period: u32 },
    Sampled,
}

impl Profile {
    pub fn code(&self) -> u8 {
        match self {
            Profile::Step { .. } => 0,
            Profile::Ramp { .. } => 1,
            Profile::Sinusoidal { .. } => 2,
            Profile::Sampled => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Profile::Step { .. } => "step",
            Profile::Ramp { .. } => "ramp",
            Profile::Sinusoidal { .. } => "sinusoidal",
            Profile::Sampled => "sampled",
        }
    }
}

/// What the intervention does at its cells. The variant fixes the kind, so
/// exactly one of value / shift / profile exists.
#[derive(Debug, Clone, PartialEq)]
pub enum InterventionAction {
    /// `X := value`.
    Hard { value: f64 },
    /// `X = f(Pa) + shift + eps`, one shift per target in target order.
    Soft { shifts: Vec<f64> },
    /// `X := trajectory[k]` at `times[k]`.
    TimeVarying { profile: Profile, trajectory: Vec<f64> },
}

/// Effect of an intervention on a single cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CellAction {
    Clamp(f64),
    Shift(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterventionSpec {
    /// Distinct target variables in ascending order.
    pub targets: Vec<usize>,
    /// Distinct intervention times in ascending order.
    pub times: Vec<usize>,
    pub action: InterventionAction,
}

impl InterventionSpec {
    pub fn kind(&self) -> InterventionKind {
        match self.action {
            InterventionAction::Hard { .. } => InterventionKind::Hard,
            InterventionAction::Soft { .. } => InterventionKind::Soft,
            InterventionAction::TimeVarying { .. } => InterventionKind::TimeVarying,
        }
    }

    pub fn start(&self) -> usize {
        self.times[0]
    }

    pub fn is_target(&self, var: usize) -> bool {
        self.targets.contains(&var)
    }

    /// Action applied at `(var, t)`, if that cell is intervened.
    pub fn cell_action(&self, var: usize, t: usize) -> Option<CellAction> {
        let target_pos = self.targets.iter().position(|&v| v == var)?;
        let time_pos = self.times.binary_search(&t).ok()?;
        Some(match &self.action {
            InterventionAction::Hard { value } => CellAction::Clamp(*value),
            InterventionAction::Soft { shifts } => CellAction::Shift(shifts[target_pos]),
            InterventionAction::TimeVarying { trajectory, .. } => CellAction::Clamp(trajectory[time_pos]),
        })
    }

    /// Checks structural well-formedness against a model with `n_vars`
    /// variables simulated for `len` steps.
    pub fn check(&self, n_vars: usize, len: usize) -> Result<()> {
        if self.targets.is_empty() {
            return Err(Error::input("intervention has no targets"));
        }
        if self.times.is_empty() {
            return Err(Error::input("intervention has no times"));
        }
        if !self.targets.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::input("intervention targets must be strictly increasing"));
        }
        if !self.times.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::input("intervention times must be strictly increasing"));
        }
        if let Some(&v) = self.targets.iter().find(|&&v| v >= n_vars) {
            return Err(Error::input(format!("intervention target {v} out of range for {n_vars} variables")));
        }
        if let Some(&t) = self.times.iter().find(|&&t| t >= len) {
            return Err(Error::input(format!("intervention time {t} out of range for length {len}")));
        }
        match &self.action {
            InterventionAction::Soft { shifts } if shifts.len() != self.targets.len() => {
                Err(Error::input("soft intervention needs one shift per target"))
            }
            InterventionAction::TimeVarying { trajectory, .. } if trajectory.len() != self.times.len() => {
                Err(Error::input("time-varying trajectory must cover every intervention time"))
            }
            _ => Ok(()),
        }
    }
}

/// A simulated multivariate series, row `t` holding the state at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub n_vars: usize,
    pub values: Vec<f64>,
    pub regime_path: Option<Vec<u8>>,
}

impl Series {
    pub fn zeros(len: usize, n_vars: usize) -> Self {
        Series {
            n_vars,
            values: vec![0.0; len * n_vars],
            regime_path: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len().checked_div(self.n_vars).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, t: usize, var: usize) -> f64 {
        self.values[t * self.n_vars + var]
    }

    #[inline]
    pub fn set(&mut self, t: usize, var: usize, v: f64) {
        self.values[t * self.n_vars + var] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_vars..(t + 1) * self.n_vars]
    }

    pub fn column(&self, var: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(var).step_by(self.n_vars).copied()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// The training target: the interventional value of `var` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryTuple {
    pub var: usize,
    pub time: usize,
    pub target: f64,
}

/// A single structural problem found by [`validate_tscm`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    InstantaneousSelfLoop { regime: usize, var: usize },
    InstantaneousCycle { regime: usize },
    TopoOrderInvalid { regime: usize },
    TopoOrderViolated { regime: usize, from: usize, to: usize },
    ShapeMismatch { regime: usize, detail: String },
    MechanismLength { regime: usize, var: usize },
    ParentGraphMismatch { regime: usize, var: usize },
    NonFiniteParameter { regime: usize, var: usize },
    NoiseScale { var: usize },
    NoiseCount,
    RegimeCount,
    RowNotStochastic { row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::InstantaneousSelfLoop { regime, var } => {
                write!(f, "instantaneous self-loop on variable {var} (regime {regime})")
            }
            Violation::InstantaneousCycle { regime } => write!(f, "instantaneous cycle in G_0 (regime {regime})"),
            Violation::TopoOrderInvalid { regime } => {
                write!(f, "topological order is not a permutation (regime {regime})")
            }
            Violation::TopoOrderViolated { regime, from, to } => {
                write!(f, "instantaneous edge {from}->{to} contradicts topological order (regime {regime})")
            }
            Violation::ShapeMismatch { regime, detail } => write!(f, "shape mismatch (regime {regime}): {detail}"),
            Violation::MechanismLength { regime, var } => {
                write!(f, "mechanism {var} has unequal parent/weight/activation lengths (regime {regime})")
            }
            Violation::ParentGraphMismatch { regime, var } => {
                write!(f, "parent/graph mismatch for mechanism {var} (regime {regime})")
            }
            Violation::NonFiniteParameter { regime, var } => {
                write!(f, "non-finite parameter in mechanism {var} (regime {regime})")
            }
            Violation::NoiseScale { var } => write!(f, "noise scale of variable {var} is not positive"),
            Violation::NoiseCount => write!(f, "noise spec count differs from variable count"),
            Violation::RegimeCount => write!(f, "regime-switching model needs at least two regimes"),
            Violation::RowNotStochastic { row } => write!(f, "transition row {row} is not stochastic"),
        }
    }
}

/// Outcome of [`validate_tscm`]: valid iff no violations were found.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Verdict {
    pub violations: Vec<Violation>,
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant of a model and names each violation.
pub fn validate_tscm(model: &CausalModel) -> Verdict {
    let mut out = Vec::new();
    let n = model.n_vars();
    let k = model.max_lag();

    for r in 0..model.n_regimes() {
        check_regime(r, model.regime_graph(r), model.regime_mechanisms(r), n, k, &mut out);
    }

    if model.noise().len() != n {
        out.push(Violation::NoiseCount);
    }
    for (var, spec) in model.noise().iter().enumerate() {
        if !(spec.scale > 0.0 && spec.scale.is_finite()) {
            out.push(Violation::NoiseScale { var });
        }
    }

    if let CausalModel::Switching(m) = model {
        let r = m.regimes.len();
        if r < 2 {
            out.push(Violation::RegimeCount);
        }
        if m.transition.len() != r {
            out.push(Violation::ShapeMismatch {
                regime: 0,
                detail: format!("transition has {} rows for {r} regimes", m.transition.len()),
            });
        }
        for (row, probs) in m.transition.iter().enumerate() {
            let sum: f64 = probs.iter().sum();
            let ok = probs.len() == r
                && probs.iter().all(|p| (0.0..=1.0).contains(p))
                && (sum - 1.0).abs() <= ROW_SUM_TOLERANCE;
            if !ok {
                out.push(Violation::RowNotStochastic { row });
            }
        }
    }

    Verdict { violations: out }
}

fn check_regime(
    regime: usize,
    graph: &LaggedDag,
    mechanisms: &[Mechanism],
    n: usize,
    k: usize,
    out: &mut Vec<Violation>,
) {
    if graph.n_vars != n || graph.max_lag != k {
        out.push(Violation::ShapeMismatch {
            regime,
            detail: format!("graph is {}x{} with lag {}, expected {n} vars lag {k}", graph.n_vars, graph.n_vars, graph.max_lag),
        });
        return;
    }
    if graph.adjacency.len() != k + 1 || graph.adjacency.iter().any(|m| m.len() != n * n) {
        out.push(Violation::ShapeMismatch {
            regime,
            detail: "adjacency must hold K+1 matrices of size N x N".into(),
        });
        return;
    }
    if mechanisms.len() != n {
        out.push(Violation::ShapeMismatch {
            regime,
            detail: format!("{} mechanisms for {n} variables", mechanisms.len()),
        });
    }

    for var in 0..n {
        if graph.edge(0, var, var) {
            out.push(Violation::InstantaneousSelfLoop { regime, var });
        }
    }
    if !graph.instantaneous_is_acyclic() {
        out.push(Violation::InstantaneousCycle { regime });
    }

    let mut position = vec![usize::MAX; n];
    let mut perm_ok = graph.topo_order.len() == n;
    for (pos, &v) in graph.topo_order.iter().enumerate() {
        if v >= n || position[v] != usize::MAX {
            perm_ok = false;
            break;
        }
        position[v] = pos;
    }
    if !perm_ok {
        out.push(Violation::TopoOrderInvalid { regime });
    } else {
        for from in 0..n {
            for to in 0..n {
                if from != to && graph.edge(0, from, to) && position[from] >= position[to] {
                    out.push(Violation::TopoOrderViolated { regime, from, to });
                }
            }
        }
    }

    for (var, mech) in mechanisms.iter().enumerate().take(n) {
        if mech.parents.len() != mech.weights.len() || mech.parents.len() != mech.activations.len() {
            out.push(Violation::MechanismLength { regime, var });
            continue;
        }
        if !mech.bias.is_finite() || mech.weights.iter().any(|w| !w.is_finite()) {
            out.push(Violation::NonFiniteParameter { regime, var });
        }
        let declared: BTreeSet<Parent> = mech.parents.iter().copied().collect();
        let expected: BTreeSet<Parent> = graph.parents_of(var).into_iter().collect();
        if declared.len() != mech.parents.len() || declared != expected {
            out.push(Violation::ParentGraphMismatch { regime, var });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(graph: LaggedDag) -> CausalModel {
        let n = graph.n_vars;
        let mechanisms = (0..n)
            .map(|v| {
                let parents = graph.parents_of(v);
                Mechanism {
                    weights: vec![1.0; parents.len()],
                    activations: vec![Activation::Identity; parents.len()],
                    parents,
                    bias: 0.0,
                }
            })
            .collect();
        CausalModel::Single(Tscm {
            graph,
            mechanisms,
            noise: vec![
                NoiseSpec {
                    family: NoiseFamily::Gaussian,
                    scale: 1.0
                };
                n
            ],
            family: FamilyTag::DiverseNonlinear,
            edge_prob: None,
        })
    }

    #[test]
    fn minimal_self_lag_model_is_valid() {
        let mut g = LaggedDag::empty(1, 1);
        g.set_edge(1, 0, 0, true);
        assert!(validate_tscm(&single(g)).is_valid());
    }

    #[test]
    fn instantaneous_self_loop_is_rejected() {
        let mut g = LaggedDag::empty(2, 1);
        g.set_edge(0, 0, 0, true);
        let verdict = validate_tscm(&single(g));
        assert!(!verdict.is_valid());
        assert!(verdict
            .violations
            .iter()
            .any(|v| v.to_string().contains("instantaneous self-loop")));
    }

    #[test]
    fn cycle_is_rejected_even_with_consistent_mechanisms() {
        let mut g = LaggedDag::empty(3, 0);
        g.set_edge(0, 0, 1, true);
        g.set_edge(0, 1, 2, true);
        g.set_edge(0, 2, 0, true);
        let verdict = validate_tscm(&single(g));
        assert!(verdict.violations.contains(&Violation::InstantaneousCycle { regime: 0 }));
    }

    #[test]
    fn parent_graph_mismatch_is_named() {
        let mut g = LaggedDag::empty(3, 1);
        g.set_edge(1, 0, 1, true);
        let mut model = single(g);
        if let CausalModel::Single(m) = &mut model {
            m.mechanisms[2].parents.push(Parent { var: 0, lag: 1 });
            m.mechanisms[2].weights.push(0.5);
            m.mechanisms[2].activations.push(Activation::Sin);
        }
        let verdict = validate_tscm(&model);
        assert_eq!(verdict.violations, vec![Violation::ParentGraphMismatch { regime: 0, var: 2 }]);
        assert!(verdict.violations[0].to_string().contains("parent/graph mismatch"));
    }

    #[test]
    fn non_stochastic_transition_is_rejected() {
        let g = LaggedDag::empty(2, 1);
        let regime = Regime {
            mechanisms: vec![Mechanism::constant(0.0); 2],
            graph: g,
        };
        let model = CausalModel::Switching(RegimeSwitchingTscm {
            regimes: vec![regime.clone(), regime],
            noise: vec![
                NoiseSpec {
                    family: NoiseFamily::Uniform,
                    scale: 0.5
                };
                2
            ],
            transition: vec![vec![0.9, 0.1], vec![0.5, 0.6]],
            edge_prob: None,
        });
        assert_eq!(validate_tscm(&model).violations, vec![Violation::RowNotStochastic { row: 1 }]);
    }

    #[test]
    fn unrolled_parents_source_and_chain() {
        let mut g = LaggedDag::empty(2, 1);
        g.set_edge(1, 0, 1, true);
        assert!(g.unrolled_parents(0, 7).unwrap().is_empty());
        let parents = g.unrolled_parents(1, 5).unwrap();
        assert_eq!(parents.into_iter().collect::<Vec<_>>(), vec![(0, 4)]);
        // cold start drops negative times
        assert!(g.unrolled_parents(1, 0).unwrap().is_empty());
        assert!(matches!(g.unrolled_parents(2, 0), Err(Error::Input(_))));
    }

    #[test]
    fn activations_match_definitions() {
        let x = -1.5f64;
        let got: Vec<f64> = Activation::ALL.iter().map(|a| a.apply(x)).collect();
        let want = [x, x.sin(), x.cos(), x.tanh(), 1.5, 2.25, (-1.5f64).exp()];
        assert_eq!(got, want);
        for a in Activation::ALL {
            assert_eq!(Activation::from_code(a.code()), Some(a));
        }
    }

    #[test]
    fn cell_action_resolves_per_target_shift() {
        let spec = InterventionSpec {
            targets: vec![1, 3],
            times: vec![10, 11, 12],
            action: InterventionAction::Soft { shifts: vec![0.5, -2.0] },
        };
        assert_eq!(spec.cell_action(3, 11), Some(CellAction::Shift(-2.0)));
        assert_eq!(spec.cell_action(1, 10), Some(CellAction::Shift(0.5)));
        assert_eq!(spec.cell_action(2, 10), None);
        assert_eq!(spec.cell_action(1, 13), None);
        assert!(spec.check(4, 13).is_ok());
        assert!(spec.check(4, 12).is_err());
        assert!(spec.check(3, 13).is_err());
    }
}
