//! Sampling temporal SCMs and interventions from a configurable prior.
//!
//! The prior factors into a graph prior (random size, random maximum lag, a
//! Beta-distributed edge probability shared by all edges of one model, an
//! Erdős–Rényi `G_0` respecting a random topological order and lagged edges
//! thinned by `p * gamma^k`), a mechanism prior (Gaussian weights and biases
//! with one random activation per parent slot) and a noise prior (random
//! family with a log-uniform scale).
//!
//! All sampled real parameters are rounded to `f32` precision so that the
//! 32-bit values written to a corpus describe the simulated model exactly.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scm::{
    Activation, CausalModel, FamilyTag, InterventionAction, InterventionKind, InterventionSpec, LaggedDag,
    Mechanism, NoiseFamily, NoiseSpec, Parent, Profile, Regime, RegimeSwitchingTscm, Tscm,
};

/// Shortest sequence length that leaves room for a second-half intervention.
pub const MIN_SEQ_LEN: usize = 10;

const MIX_TOLERANCE: f64 = 1e-9;
const MAX_TARGETS: usize = 2;
const MIN_DURATION: usize = 3;
/// Start times are drawn from `floor(T/2) ..= T - START_MARGIN`.
const START_MARGIN: usize = 5;
const MAX_FLOOR_REJECTIONS: usize = 10_000;

/// Rounds to the nearest `f32`, keeping the result as `f64`.
#[inline]
pub(crate) fn to_f32_precision(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyMix {
    pub diverse_nonlinear: f64,
    pub chain: f64,
    pub regime_switching: f64,
}

impl FamilyMix {
    fn weights(&self) -> [f64; 3] {
        [self.diverse_nonlinear, self.chain, self.regime_switching]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionMix {
    pub hard: f64,
    pub soft: f64,
    pub time_varying: f64,
}

impl InterventionMix {
    fn weights(&self) -> [f64; 3] {
        [self.hard, self.soft, self.time_varying]
    }
}

/// Hyperparameters of the prior and of the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub n_min: usize,
    pub n_max: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub edge_alpha: f64,
    pub edge_beta: f64,
    /// Lower bound on the edge probability; draws below it are rejected.
    pub edge_prob_floor: f64,
    /// Replaces the Beta draw with a fixed edge probability.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge_prob_fixed: Option<f64>,
    pub lag_decay: f64,
    pub weight_std: f64,
    pub bias_std: f64,
    pub activations: Vec<Activation>,
    pub noise_scale_min: f64,
    pub noise_scale_max: f64,
    pub family_mix: FamilyMix,
    pub intervention_mix: InterventionMix,
    pub hard_value_std: f64,
    pub soft_shift_mean: f64,
    pub soft_shift_std: f64,
    pub regime_count_choices: Vec<usize>,
    pub sticky_diag: f64,
    pub clip_bound: f64,
    pub seq_len: usize,
    /// Extra leading simulation steps that are discarded.
    pub burn_in: usize,
    /// Draw fresh noise for the interventional run instead of sharing it.
    pub resample_noise: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            n_min: 3,
            n_max: 10,
            k_min: 1,
            k_max: 3,
            edge_alpha: 2.0,
            edge_beta: 5.0,
            edge_prob_floor: 0.0,
            edge_prob_fixed: None,
            lag_decay: 0.7,
            weight_std: 1.0,
            bias_std: 0.5,
            activations: Activation::ALL.to_vec(),
            noise_scale_min: 0.1,
            noise_scale_max: 1.0,
            family_mix: FamilyMix {
                diverse_nonlinear: 0.70,
                chain: 0.15,
                regime_switching: 0.15,
            },
            intervention_mix: InterventionMix {
                hard: 0.5,
                soft: 0.3,
                time_varying: 0.2,
            },
            hard_value_std: 2.0,
            soft_shift_mean: 0.0,
            soft_shift_std: 2.0,
            regime_count_choices: vec![2, 3],
            sticky_diag: 0.9,
            clip_bound: 1e4,
            seq_len: 50,
            burn_in: 0,
            resample_noise: false,
        }
    }
}

impl PriorConfig {
    /// Out-of-distribution preset: larger, denser graphs at maximum lag 3
    /// with only strongly nonlinear activations.
    pub fn ood() -> Self {
        PriorConfig {
            n_min: 8,
            n_max: 10,
            k_min: 3,
            k_max: 3,
            edge_prob_floor: 0.3,
            activations: vec![Activation::Sin, Activation::Cos, Activation::Square, Activation::Tanh],
            family_mix: FamilyMix {
                diverse_nonlinear: 1.0,
                chain: 0.0,
                regime_switching: 0.0,
            },
            ..PriorConfig::default()
        }
    }

    /// Restricts interventions to the hard kind (ablation training regime).
    pub fn hard_only(mut self) -> Self {
        self.intervention_mix = InterventionMix {
            hard: 1.0,
            soft: 0.0,
            time_varying: 0.0,
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::config(msg));
        if !(3 <= self.n_min && self.n_min <= self.n_max) {
            return fail(format!("need 3 <= n_min <= n_max, got {}..{}", self.n_min, self.n_max));
        }
        if self.n_max > u16::MAX as usize {
            return fail(format!("n_max {} too large", self.n_max));
        }
        if !(1 <= self.k_min && self.k_min <= self.k_max && self.k_max <= u16::MAX as usize) {
            return fail(format!("need 1 <= k_min <= k_max, got {}..{}", self.k_min, self.k_max));
        }
        if !(self.edge_alpha > 0.0 && self.edge_beta > 0.0) {
            return fail("edge_alpha and edge_beta must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.edge_prob_floor) {
            return fail("edge_prob_floor must lie in [0, 1]".into());
        }
        if let Some(p) = self.edge_prob_fixed {
            if !(0.0..=1.0).contains(&p) {
                return fail("edge_prob_fixed must lie in [0, 1]".into());
            }
        }
        if !(self.lag_decay > 0.0 && self.lag_decay <= 1.0) {
            return fail(format!("lag_decay must lie in (0, 1], got {}", self.lag_decay));
        }
        for (name, v) in [
            ("weight_std", self.weight_std),
            ("bias_std", self.bias_std),
            ("hard_value_std", self.hard_value_std),
            ("soft_shift_std", self.soft_shift_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and nonnegative"));
            }
        }
        if !self.soft_shift_mean.is_finite() {
            return fail("soft_shift_mean must be finite".into());
        }
        if self.activations.is_empty() {
            return fail("activation dictionary is empty".into());
        }
        if !(self.noise_scale_min > 0.0 && self.noise_scale_min <= self.noise_scale_max && self.noise_scale_max.is_finite()) {
            return fail("need 0 < noise_scale_min <= noise_scale_max".into());
        }
        check_mix("family_mix", &self.family_mix.weights())?;
        check_mix("intervention_mix", &self.intervention_mix.weights())?;
        if self.regime_count_choices.is_empty() || self.regime_count_choices.iter().any(|&r| !(2..=255).contains(&r)) {
            return fail("regime_count_choices must be a nonempty subset of 2..=255".into());
        }
        if !(0.0..=1.0).contains(&self.sticky_diag) {
            return fail("sticky_diag must lie in [0, 1]".into());
        }
        if !(self.clip_bound > 0.0 && self.clip_bound.is_finite()) {
            return fail("clip_bound must be positive and finite".into());
        }
        if !(MIN_SEQ_LEN..=u16::MAX as usize).contains(&self.seq_len) {
            return fail(format!("seq_len must lie in {MIN_SEQ_LEN}..=65535, got {}", self.seq_len));
        }
        if self.seq_len + self.burn_in > u16::MAX as usize {
            return fail("seq_len + burn_in too large".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("prior config is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PriorConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out.copy_from_slice(&Sha256::digest(self.to_toml().as_bytes()));
        out
    }
}

fn check_mix(name: &str, weights: &[f64]) -> Result<()> {
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > MIX_TOLERANCE {
        return Err(Error::config(format!("{name} must be nonnegative and sum to 1, got {weights:?}")));
    }
    Ok(())
}

fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    // rounding slack: fall back to the last class with positive mass
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(weights.len() - 1)
}

fn gaussian<R: Rng + ?Sized>(mean: f64, std: f64, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + std * z
}

/// Draws the per-model edge probability `p`.
pub fn sample_edge_prob<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> f64 {
    if let Some(p) = cfg.edge_prob_fixed {
        return p;
    }
    let beta = Beta::new(cfg.edge_alpha, cfg.edge_beta).expect("validated Beta parameters");
    for _ in 0..MAX_FLOOR_REJECTIONS {
        let p = beta.sample(rng);
        if p >= cfg.edge_prob_floor {
            return p;
        }
    }
    cfg.edge_prob_floor
}

/// Samples a lagged DAG over `n_vars` variables with maximum lag `max_lag`
/// and edge probability `p`.
pub fn sample_graph_with<R: Rng + ?Sized>(n_vars: usize, max_lag: usize, p: f64, cfg: &PriorConfig, rng: &mut R) -> LaggedDag {
    let mut graph = LaggedDag::empty(n_vars, max_lag);
    let order: Vec<usize> = index::sample(rng, n_vars, n_vars).into_vec();
    for (pos, &to) in order.iter().enumerate() {
        for &from in &order[..pos] {
            if rng.random_bool(p) {
                graph.set_edge(0, from, to, true);
            }
        }
    }
    for lag in 1..=max_lag {
        let p_lag = (p * cfg.lag_decay.powi(lag as i32)).clamp(0.0, 1.0);
        for from in 0..n_vars {
            for to in 0..n_vars {
                if rng.random_bool(p_lag) {
                    graph.set_edge(lag, from, to, true);
                }
            }
        }
    }
    graph.topo_order = order;
    graph
}

/// Samples a lagged DAG, returning it together with the edge probability used.
pub fn sample_graph_and_prob<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> (LaggedDag, f64) {
    let n = rng.random_range(cfg.n_min..=cfg.n_max);
    let k = rng.random_range(cfg.k_min..=cfg.k_max);
    let p = sample_edge_prob(cfg, rng);
    (sample_graph_with(n, k, p, cfg, rng), p)
}

pub fn sample_graph<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> LaggedDag {
    sample_graph_and_prob(cfg, rng).0
}

pub fn sample_mechanism<R: Rng + ?Sized>(parents: &[Parent], cfg: &PriorConfig, rng: &mut R) -> Mechanism {
    let mut weights = Vec::with_capacity(parents.len());
    let mut activations = Vec::with_capacity(parents.len());
    for _ in parents {
        weights.push(to_f32_precision(gaussian(0.0, cfg.weight_std, rng)));
        activations.push(cfg.activations[rng.random_range(0..cfg.activations.len())]);
    }
    Mechanism {
        parents: parents.to_vec(),
        weights,
        activations,
        bias: to_f32_precision(gaussian(0.0, cfg.bias_std, rng)),
    }
}

pub fn sample_noise<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> NoiseSpec {
    let family = NoiseFamily::ALL[rng.random_range(0..NoiseFamily::ALL.len())];
    let (lo, hi) = (cfg.noise_scale_min.ln(), cfg.noise_scale_max.ln());
    let log_scale = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let scale = to_f32_precision(log_scale.exp()).clamp(to_f32_precision(cfg.noise_scale_min), cfg.noise_scale_max);
    NoiseSpec { family, scale }
}

fn mechanisms_for<R: Rng + ?Sized>(graph: &LaggedDag, cfg: &PriorConfig, rng: &mut R) -> Vec<Mechanism> {
    (0..graph.n_vars)
        .map(|v| sample_mechanism(&graph.parents_of(v), cfg, rng))
        .collect()
}

/// Path `X_0 -> X_1 -> ... -> X_{N-1}` with lag-1 edges only.
fn chain_graph(n_vars: usize, max_lag: usize) -> LaggedDag {
    let mut graph = LaggedDag::empty(n_vars, max_lag);
    for v in 1..n_vars {
        graph.set_edge(1, v - 1, v, true);
    }
    graph
}

/// Sticky transition matrix: `sticky` on the diagonal, the rest split evenly.
pub fn sticky_transition(n_regimes: usize, sticky: f64) -> Vec<Vec<f64>> {
    let off = (1.0 - sticky) / (n_regimes - 1) as f64;
    (0..n_regimes)
        .map(|r| (0..n_regimes).map(|c| if r == c { sticky } else { off }).collect())
        .collect()
}

/// Draws a complete causal model according to the family mix.
pub fn sample_tscm<R: Rng + ?Sized>(cfg: &PriorConfig, rng: &mut R) -> CausalModel {
    let family = FamilyTag::ALL[categorical(&cfg.family_mix.weights(), rng)];
    match family {
        FamilyTag::DiverseNonlinear => {
            let (graph, p) = sample_graph_and_prob(cfg, rng);
            let mechanisms = mechanisms_for(&graph, cfg, rng);
            let noise = (0..graph.n_vars).map(|_| sample_noise(cfg, rng)).collect();
            CausalModel::Single(Tscm {
                graph,
                mechanisms,
                noise,
                family,
                edge_prob: Some(p),
            })
        }
        FamilyTag::Chain => {
            let n = rng.random_range(cfg.n_min..=cfg.n_max);
            let k = rng.random_range(cfg.k_min..=cfg.k_max);
            let graph = chain_graph(n, k);
            let mechanisms = mechanisms_for(&graph, cfg, rng);
            let noise = (0..n).map(|_| sample_noise(cfg, rng)).collect();
            CausalModel::Single(Tscm {
                graph,
                mechanisms,
                noise,
                family,
                edge_prob: None,
            })
        }
        FamilyTag::RegimeSwitching => {
            let n = rng.random_range(cfg.n_min..=cfg.n_max);
            let k = rng.random_range(cfg.k_min..=cfg.k_max);
            let p = sample_edge_prob(cfg, rng);
            let n_regimes = cfg.regime_count_choices[rng.random_range(0..cfg.regime_count_choices.len())];
            let regimes = (0..n_regimes)
                .map(|_| {
                    let graph = sample_graph_with(n, k, p, cfg, rng);
                    let mechanisms = mechanisms_for(&graph, cfg, rng);
                    Regime { graph, mechanisms }
                })
                .collect();
            let noise = (0..n).map(|_| sample_noise(cfg, rng)).collect();
            CausalModel::Switching(RegimeSwitchingTscm {
                regimes,
                noise,
                transition: sticky_transition(n_regimes, cfg.sticky_diag),
                edge_prob: Some(p),
            })
        }
    }
}

/// Draws an intervention for `model` over a series of length `cfg.seq_len`.
pub fn sample_intervention<R: Rng + ?Sized>(model: &CausalModel, cfg: &PriorConfig, rng: &mut R) -> Result<InterventionSpec> {
    let len = cfg.seq_len;
    if len < MIN_SEQ_LEN {
        return Err(Error::config(format!(
            "seq_len {len} leaves no room for a second-half intervention (need >= {MIN_SEQ_LEN})"
        )));
    }
    let n = model.n_vars();
    let kind = InterventionKind::ALL[categorical(&cfg.intervention_mix.weights(), rng)];

    let n_targets = rng.random_range(1..=MAX_TARGETS.min(n));
    let mut targets = index::sample(rng, n, n_targets).into_vec();
    targets.sort_unstable();

    let start = rng.random_range(len / 2..=len - START_MARGIN);
    let duration = rng.random_range(MIN_DURATION..=len - start);
    let times: Vec<usize> = (start..start + duration).collect();

    let draw_value = |rng: &mut R| to_f32_precision(gaussian(0.0, cfg.hard_value_std, rng));
    let action = match kind {
        InterventionKind::Hard => InterventionAction::Hard { value: draw_value(rng) },
        InterventionKind::Soft => InterventionAction::Soft {
            shifts: targets
                .iter()
                .map(|_| to_f32_precision(gaussian(cfg.soft_shift_mean, cfg.soft_shift_std, rng)))
                .collect(),
        },
        InterventionKind::TimeVarying => {
            let profile = match rng.random_range(0..4u8) {
                0 => Profile::Step { level: draw_value(rng) },
                1 => Profile::Ramp {
                    start: draw_value(rng),
                    end: draw_value(rng),
                },
                2 => Profile::Sinusoidal {
                    amplitude: draw_value(rng),
                    period: rng.random_range(5..=20),
                },
                _ => Profile::Sampled,
            };
            let trajectory = match profile {
                Profile::Sampled => times.iter().map(|_| draw_value(rng)).collect(),
                _ => profile_trajectory(&profile, &times),
            };
            InterventionAction::TimeVarying { profile, trajectory }
        }
    };
    Ok(InterventionSpec { targets, times, action })
}

/// Materializes a deterministic profile over `times`. `Sampled` profiles have
/// no closed form and yield an empty trajectory.
pub fn profile_trajectory(profile: &Profile, times: &[usize]) -> Vec<f64> {
    let t0 = times.first().copied().unwrap_or(0);
    let span = times.last().map_or(0, |&t| t - t0);
    times
        .iter()
        .map(|&t| {
            let v = match *profile {
                Profile::Step { level } => level,
                Profile::Ramp { start, end } => {
                    if span == 0 {
                        start
                    } else {
                        start + (end - start) * (t - t0) as f64 / span as f64
                    }
                }
                Profile::Sinusoidal { amplitude, period } => {
                    amplitude * (std::f64::consts::TAU * (t - t0) as f64 / period as f64).sin()
                }
                Profile::Sampled => return None,
            };
            Some(to_f32_precision(v))
        })
        .collect::<Option<Vec<_>>>()
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::validate_tscm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = PriorConfig::default();
        cfg.validate().unwrap();
        let back = PriorConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
        assert_ne!(PriorConfig::ood().digest(), cfg.digest());
    }

    #[test]
    fn partial_config_file_uses_defaults() {
        let cfg = PriorConfig::from_toml("n_max = 6\nseq_len = 80\n").unwrap();
        assert_eq!(cfg.n_max, 6);
        assert_eq!(cfg.seq_len, 80);
        assert_eq!(cfg.k_max, 3);
        assert!(PriorConfig::from_toml("bogus_key = 1").is_err());
        assert!(PriorConfig::from_toml("lag_decay = 0.0").is_err());
        assert!(PriorConfig::from_toml("n_min = 2").is_err());
        assert!(PriorConfig::from_toml("[family_mix]\ndiverse_nonlinear = 0.5\nchain = 0.2\nregime_switching = 0.2").is_err());
    }

    #[test]
    fn beta_mean_and_variance_match_analytic_moments() {
        let cfg = PriorConfig::default();
        let mut r = rng(1);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_edge_prob(&cfg, &mut r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let (a, b) = (cfg.edge_alpha, cfg.edge_beta);
        let true_mean = a / (a + b);
        let true_var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        assert!((mean - 0.286).abs() < 0.01, "mean {mean}");
        assert!((mean - true_mean).abs() < 3.0 * (true_var / n as f64).sqrt());
        // standard error of the sample variance, using the Beta fourth central moment
        let m4 = {
            let s = a + b;
            let excess = 6.0 * ((a - b).powi(2) * (s + 1.0) - a * b * (s + 2.0)) / (a * b * (s + 2.0) * (s + 3.0));
            (excess + 3.0) * true_var * true_var
        };
        let se_var = ((m4 - true_var * true_var) / n as f64).sqrt();
        assert!((var - true_var).abs() < 3.0 * se_var, "var {var} vs {true_var}");
    }

    #[test]
    fn degenerate_edge_probabilities() {
        let empty = PriorConfig {
            edge_prob_fixed: Some(0.0),
            ..PriorConfig::default()
        };
        let mut r = rng(2);
        for _ in 0..50 {
            let g = sample_graph(&empty, &mut r);
            assert_eq!(g.edge_count(), 0);
        }

        let full = PriorConfig {
            edge_prob_fixed: Some(1.0),
            lag_decay: 1.0,
            ..PriorConfig::default()
        };
        for _ in 0..50 {
            let g = sample_graph(&full, &mut r);
            let n = g.n_vars;
            assert_eq!(g.adjacency[0].iter().filter(|&&e| e).count(), n * (n - 1) / 2);
            for lag in 1..=g.max_lag {
                assert!(g.adjacency[lag].iter().all(|&e| e));
            }
            assert!(validate_tscm(&CausalModel::Single(Tscm {
                mechanisms: mechanisms_for(&g, &full, &mut r),
                noise: vec![sample_noise(&full, &mut r); n],
                graph: g,
                family: FamilyTag::DiverseNonlinear,
                edge_prob: Some(1.0),
            }))
            .is_valid());
        }
    }

    #[test]
    fn lag_edge_frequency_matches_decay_given_p() {
        let cfg = PriorConfig {
            edge_prob_fixed: Some(0.4),
            n_min: 10,
            n_max: 10,
            k_min: 3,
            k_max: 3,
            ..PriorConfig::default()
        };
        let mut r = rng(3);
        let mut counts = [0usize; 4];
        let trials = 500;
        for _ in 0..trials {
            let g = sample_graph(&cfg, &mut r);
            for (lag, c) in counts.iter_mut().enumerate() {
                *c += g.adjacency[lag].iter().filter(|&&e| e).count();
            }
        }
        for lag in 1..=3 {
            let p = 0.4 * 0.7f64.powi(lag as i32);
            let slots = (trials * 100) as f64;
            let freq = counts[lag] as f64 / slots;
            let se = (p * (1.0 - p) / slots).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "lag {lag}: {freq} vs {p}");
        }
        // 45 admissible instantaneous slots per graph
        let slots = (trials * 45) as f64;
        let freq = counts[0] as f64 / slots;
        assert!((freq - 0.4).abs() < 3.0 * (0.24 / slots).sqrt());
    }

    #[test]
    fn activation_frequencies_are_uniform() {
        let cfg = PriorConfig::default();
        let mut r = rng(4);
        let parents: Vec<Parent> = (0..70).map(|v| Parent { var: v, lag: 1 }).collect();
        let mut counts = [0usize; 7];
        for _ in 0..1000 {
            for a in sample_mechanism(&parents, &cfg, &mut r).activations {
                counts[a.code() as usize] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / 70_000.0 - 1.0 / 7.0).abs() < 0.01);
        }
    }

    #[test]
    fn source_mechanism_and_zero_weight_prior() {
        let mut r = rng(5);
        let m = sample_mechanism(&[], &PriorConfig::default(), &mut r);
        assert!(m.parents.is_empty() && m.weights.is_empty());
        assert_eq!(m.evaluate(|_| Some(100.0)), m.bias);

        let cfg = PriorConfig {
            weight_std: 0.0,
            ..PriorConfig::default()
        };
        let parents = [Parent { var: 0, lag: 1 }, Parent { var: 1, lag: 0 }];
        for _ in 0..100 {
            assert!(sample_mechanism(&parents, &cfg, &mut r).weights.iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn noise_family_and_log_scale_distribution() {
        let cfg = PriorConfig::default();
        let mut r = rng(6);
        let n = 30_000;
        let mut counts = [0usize; 3];
        let mut logs = Vec::with_capacity(n);
        for _ in 0..n {
            let s = sample_noise(&cfg, &mut r);
            counts[s.family.code() as usize] += 1;
            assert!((0.1..=1.0).contains(&s.scale), "scale {}", s.scale);
            logs.push(s.scale.ln());
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01);
        }
        // Kolmogorov-Smirnov statistic against Uniform(ln 0.1, ln 1)
        logs.sort_by(f64::total_cmp);
        let (lo, hi) = (0.1f64.ln(), 0.0);
        let ks = logs
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                let above = (i + 1) as f64 / n as f64 - cdf;
                let below = cdf - i as f64 / n as f64;
                above.max(below)
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS {ks}");
    }

    #[test]
    fn family_frequencies_and_regime_transitions() {
        let cfg = PriorConfig::default();
        let mut r = rng(7);
        let n = 10_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let model = sample_tscm(&cfg, &mut r);
            counts[model.family().code() as usize] += 1;
            let verdict = validate_tscm(&model);
            assert!(verdict.is_valid(), "{:?}", verdict.violations);
            if let CausalModel::Switching(m) = &model {
                let rc = m.regimes.len();
                assert!(rc == 2 || rc == 3);
                let off = (1.0 - 0.9) / (rc - 1) as f64;
                for (i, row) in m.transition.iter().enumerate() {
                    for (j, &p) in row.iter().enumerate() {
                        assert_eq!(p, if i == j { 0.9 } else { off });
                    }
                }
            }
        }
        for (c, want) in counts.iter().zip([0.70, 0.15, 0.15]) {
            assert!((*c as f64 / n as f64 - want).abs() < 0.02);
        }
    }

    #[test]
    fn chain_family_is_a_lag_one_path() {
        let cfg = PriorConfig {
            family_mix: FamilyMix {
                diverse_nonlinear: 0.0,
                chain: 1.0,
                regime_switching: 0.0,
            },
            ..PriorConfig::default()
        };
        let mut r = rng(8);
        for _ in 0..100 {
            let model = sample_tscm(&cfg, &mut r);
            let g = model.regime_graph(0);
            assert_eq!(g.edge_count(), g.n_vars - 1);
            for v in 1..g.n_vars {
                assert!(g.edge(1, v - 1, v));
            }
        }
    }

    #[test]
    fn intervention_statistics() {
        let cfg = PriorConfig::default();
        let mut r = rng(9);
        let n = 10_000;
        let mut kinds = [0usize; 3];
        let mut hard_values = Vec::new();
        for _ in 0..n {
            let model = sample_tscm(&cfg, &mut r);
            let spec = sample_intervention(&model, &cfg, &mut r).unwrap();
            spec.check(model.n_vars(), cfg.seq_len).unwrap();
            kinds[spec.kind().code() as usize] += 1;
            assert!(spec.start() >= cfg.seq_len / 2);
            assert!(spec.times.len() >= 3);
            assert!((1..=2).contains(&spec.targets.len()));
            if let InterventionAction::Hard { value } = spec.action {
                hard_values.push(value);
            }
        }
        for (c, want) in kinds.iter().zip([0.5, 0.3, 0.2]) {
            assert!((*c as f64 / n as f64 - want).abs() < 0.02);
        }
        let mean = hard_values.iter().sum::<f64>() / hard_values.len() as f64;
        assert!(mean.abs() < 0.1, "hard value mean {mean}");
    }

    #[test]
    fn short_sequences_are_rejected() {
        let cfg = PriorConfig {
            seq_len: 9,
            ..PriorConfig::default()
        };
        let mut r = rng(10);
        let model = sample_tscm(&PriorConfig::default(), &mut r);
        assert!(matches!(sample_intervention(&model, &cfg, &mut r), Err(Error::Config(_))));
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn profiles_materialize_as_described() {
        let times: Vec<usize> = (20..25).collect();
        assert_eq!(profile_trajectory(&Profile::Step { level: 1.5 }, &times), vec![1.5; 5]);
        assert_eq!(
            profile_trajectory(&Profile::Ramp { start: 0.0, end: 2.0 }, &times),
            vec![0.0, 0.5, 1.0, 1.5, 2.0]
        );
        let sin = profile_trajectory(&Profile::Sinusoidal { amplitude: 2.0, period: 4 }, &times);
        assert_eq!(sin[0], 0.0);
        assert_eq!(sin[1], 2.0);
        assert!(sin[2].abs() < 1e-6);
        assert!(profile_trajectory(&Profile::Sampled, &times).is_empty());
    }

    #[test]
    fn ood_preset_bounds() {
        let cfg = PriorConfig::ood();
        cfg.validate().unwrap();
        let mut r = rng(11);
        for _ in 0..1000 {
            let (g, p) = sample_graph_and_prob(&cfg, &mut r);
            assert!((8..=10).contains(&g.n_vars));
            assert_eq!(g.max_lag, 3);
            assert!(p >= 0.3);
        }
        for _ in 0..200 {
            let model = sample_tscm(&cfg, &mut r);
            for m in model.regime_mechanisms(0) {
                assert!(m.activations.iter().all(|a| cfg.activations.contains(a)));
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = PriorConfig::default();
        for seed in 0..20 {
            let a = sample_tscm(&cfg, &mut rng(seed));
            let b = sample_tscm(&cfg, &mut rng(seed));
            assert_eq!(a, b);
        }
    }
}
