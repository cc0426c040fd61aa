//! Forward simulation of observational and interventional series.
//!
//! Both runs of a pair read the same [`NoiseMatrix`] and regime path, so a
//! cell whose unrolled ancestors are untouched by the intervention comes out
//! bit-identical in both series.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::scm::{CausalModel, CellAction, InterventionSpec, NoiseFamily, NoiseSpec, Series, ROW_SUM_TOLERANCE};

/// `len x n_vars` matrix of exogenous noise draws, row-major by time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrix {
    pub n_vars: usize,
    pub values: Vec<f64>,
}

impl NoiseMatrix {
    pub fn zeros(len: usize, n_vars: usize) -> Self {
        NoiseMatrix {
            n_vars,
            values: vec![0.0; len * n_vars],
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
}

/// Draws one value from a zero-centred noise law.
pub fn sample_noise_value<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> f64 {
    match spec.family {
        NoiseFamily::Gaussian => {
            let z: f64 = StandardNormal.sample(rng);
            spec.scale * z
        }
        NoiseFamily::Uniform => rng.random_range(-spec.scale..=spec.scale),
        NoiseFamily::Laplace => {
            // inverse CDF on u in (-1/2, 1/2)
            let u: f64 = rng.random::<f64>() - 0.5;
            let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
            -spec.scale * u.signum() * tail.ln()
        }
    }
}

pub fn draw_noise<R: Rng + ?Sized>(model: &CausalModel, len: usize, rng: &mut R) -> NoiseMatrix {
    let specs = model.noise();
    let mut values = Vec::with_capacity(len * specs.len());
    for _ in 0..len {
        for spec in specs {
            values.push(sample_noise_value(spec, rng));
        }
    }
    NoiseMatrix {
        n_vars: specs.len(),
        values,
    }
}

fn check_transition(transition: &[Vec<f64>]) -> Result<()> {
    let r = transition.len();
    if r == 0 || r > u8::MAX as usize + 1 {
        return Err(Error::input(format!("transition matrix must have 1..=256 rows, got {r}")));
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != r {
            return Err(Error::input(format!("transition row {i} has {} entries, expected {r}", row.len())));
        }
        let sum: f64 = row.iter().sum();
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::input(format!("transition row {i} is not a probability vector")));
        }
    }
    Ok(())
}

/// Samples a regime path of length `len`; the initial regime is uniform.
pub fn simulate_regime_chain<R: Rng + ?Sized>(transition: &[Vec<f64>], len: usize, rng: &mut R) -> Result<Vec<u8>> {
    check_transition(transition)?;
    let r = transition.len();
    let mut path = Vec::with_capacity(len);
    if len == 0 {
        return Ok(path);
    }
    let mut state = rng.random_range(0..r);
    path.push(state as u8);
    for _ in 1..len {
        let u: f64 = rng.random();
        let row = &transition[state];
        let mut acc = 0.0;
        let mut next = row.iter().rposition(|&p| p > 0.0).unwrap_or(state);
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                next = j;
                break;
            }
        }
        state = next;
        path.push(state as u8);
    }
    Ok(path)
}

fn check_inputs(model: &CausalModel, len: usize, noise: &NoiseMatrix, regime_path: Option<&[u8]>) -> Result<()> {
    let n = model.n_vars();
    if noise.n_vars != n || noise.len() != len || noise.values.len() != len * n {
        return Err(Error::input(format!(
            "noise matrix is {}x{}, expected {len}x{n}",
            noise.len(),
            noise.n_vars
        )));
    }
    match (model.is_switching(), regime_path) {
        (true, None) => Err(Error::input("regime-switching model needs a regime path")),
        (false, Some(_)) => Err(Error::input("regime path given for a single-regime model")),
        (true, Some(path)) => {
            if path.len() != len {
                return Err(Error::input(format!("regime path has length {}, expected {len}", path.len())));
            }
            if let Some(&r) = path.iter().find(|&&r| r as usize >= model.n_regimes()) {
                return Err(Error::input(format!("regime index {r} out of range")));
            }
            Ok(())
        }
        (false, None) => Ok(()),
    }
}

fn run(
    model: &CausalModel,
    len: usize,
    noise: &NoiseMatrix,
    regime_path: Option<&[u8]>,
    clip_bound: f64,
    spec: Option<&InterventionSpec>,
) -> Result<Series> {
    check_inputs(model, len, noise, regime_path)?;
    if let Some(spec) = spec {
        spec.check(model.n_vars(), len)?;
    }
    let n = model.n_vars();
    let mut series = Series::zeros(len, n);
    for t in 0..len {
        let regime = regime_path.map_or(0, |p| p[t] as usize);
        let graph = model.regime_graph(regime);
        let mechanisms = model.regime_mechanisms(regime);
        for &i in &graph.topo_order {
            let action = spec.and_then(|s| s.cell_action(i, t));
            let value = match action {
                Some(CellAction::Clamp(c)) => c,
                _ => {
                    let drive = mechanisms[i].evaluate(|p| (p.lag <= t).then(|| series.get(t - p.lag, p.var)));
                    let shift = match action {
                        Some(CellAction::Shift(delta)) => delta,
                        _ => 0.0,
                    };
                    (drive + shift + noise.get(t, i)).clamp(-clip_bound, clip_bound)
                }
            };
            series.set(t, i, value);
        }
    }
    series.regime_path = regime_path.map(<[u8]>::to_vec);
    Ok(series)
}

/// Simulates `len` steps of the unintervened model.
pub fn simulate_observational(
    model: &CausalModel,
    len: usize,
    noise: &NoiseMatrix,
    regime_path: Option<&[u8]>,
    clip_bound: f64,
) -> Result<Series> {
    run(model, len, noise, regime_path, clip_bound, None)
}

/// Simulates `len` steps under `spec`. Hard and time-varying cells take the
/// clamp value verbatim (never clipped); soft cells add the shift before
/// noise and clipping.
pub fn simulate_interventional(
    model: &CausalModel,
    len: usize,
    spec: &InterventionSpec,
    noise: &NoiseMatrix,
    regime_path: Option<&[u8]>,
    clip_bound: f64,
) -> Result<Series> {
    run(model, len, noise, regime_path, clip_bound, Some(spec))
}

/// Coefficients of `x_{t+1} = c2 * x_t + c1 + c3 * Z_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Coefficients {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Ar1Coefficients {
    /// Stationary variance `c3^2 / (1 - c2^2)`, defined for `|c2| < 1`.
    pub fn stationary_variance(&self) -> Option<f64> {
        (self.c2.abs() < 1.0).then(|| self.c3 * self.c3 / (1.0 - self.c2 * self.c2))
    }

    pub fn stationary_mean(&self) -> Option<f64> {
        (self.c2.abs() < 1.0).then(|| self.c1 / (1.0 - self.c2))
    }
}

/// Euler-Maruyama discretization of `dX = theta (mu - X) dt + sigma_w dW`
/// with step `dt`.
pub fn ou_ar1_coefficients(theta: f64, mu: f64, sigma_w: f64, dt: f64) -> Result<Ar1Coefficients> {
    if !(theta > 0.0) {
        return Err(Error::input(format!("theta must be positive, got {theta}")));
    }
    if !(dt > 0.0) {
        return Err(Error::input(format!("dt must be positive, got {dt}")));
    }
    if !(sigma_w >= 0.0) {
        return Err(Error::input(format!("sigma_w must be nonnegative, got {sigma_w}")));
    }
    Ok(Ar1Coefficients {
        c1: theta * mu * dt,
        c2: 1.0 - theta * dt,
        c3: sigma_w * dt.sqrt(),
    })
}

/// Runs the AR(1) recursion for `steps` steps starting at `x0`; the returned
/// path excludes `x0`.
pub fn simulate_ar1<R: Rng + ?Sized>(coeffs: Ar1Coefficients, x0: f64, steps: usize, rng: &mut R) -> Vec<f64> {
    let mut x = x0;
    (0..steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            x = coeffs.c2 * x + coeffs.c1 + coeffs.c3 * z;
            x
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{sample_intervention, sample_tscm, PriorConfig};
    use crate::scm::{Activation, FamilyTag, InterventionAction, LaggedDag, Mechanism, Parent, Tscm};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn model_with(graph: LaggedDag, mechanisms: Vec<Mechanism>, noise: Vec<NoiseSpec>) -> CausalModel {
        CausalModel::Single(Tscm {
            graph,
            mechanisms,
            noise,
            family: FamilyTag::DiverseNonlinear,
            edge_prob: None,
        })
    }

    fn one_var(family: NoiseFamily, scale: f64) -> CausalModel {
        model_with(
            LaggedDag::empty(1, 1),
            vec![Mechanism::constant(0.0)],
            vec![NoiseSpec { family, scale }],
        )
    }

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        (mean, xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn noise_moments_and_support() {
        let g = draw_noise(&one_var(NoiseFamily::Gaussian, 1.0), 50_000, &mut rng(1));
        let (_, var) = moments(&g.values);
        assert!((var - 1.0).abs() < 0.05, "gaussian variance {var}");

        let u = draw_noise(&one_var(NoiseFamily::Uniform, 0.5), 50_000, &mut rng(2));
        assert!(u.values.iter().all(|x| (-0.5..=0.5).contains(x)));

        let l = draw_noise(&one_var(NoiseFamily::Laplace, 1.0), 50_000, &mut rng(3));
        let mean_abs = l.values.iter().map(|x| x.abs()).sum::<f64>() / 50_000.0;
        assert!((mean_abs - 1.0).abs() < 0.05, "laplace E|X| {mean_abs}");
    }

    #[test]
    fn regime_chain_statistics() {
        let identity = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let path = simulate_regime_chain(&identity, 500, &mut rng(4)).unwrap();
        assert!(path.iter().all(|&r| r == path[0]));

        let sticky = crate::prior::sticky_transition(3, 0.9);
        let path = simulate_regime_chain(&sticky, 10_000, &mut rng(5)).unwrap();
        let stays = path.windows(2).filter(|w| w[0] == w[1]).count();
        assert!((stays as f64 / 9_999.0 - 0.9).abs() < 0.01);

        let half = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let path = simulate_regime_chain(&half, 10_000, &mut rng(6)).unwrap();
        let zeros = path.iter().filter(|&&r| r == 0).count();
        assert!((zeros as f64 / 10_000.0 - 0.5).abs() < 0.02);

        assert!(simulate_regime_chain(&[vec![0.5, 0.4], vec![0.5, 0.5]], 10, &mut rng(7)).is_err());
        assert!(simulate_regime_chain(&[vec![1.0], vec![1.0]], 10, &mut rng(7)).is_err());
    }

    #[test]
    fn vanishing_mechanisms_reproduce_clipped_noise() {
        let mut g = LaggedDag::empty(3, 2);
        g.set_edge(1, 0, 1, true);
        g.set_edge(0, 1, 2, true);
        g.topo_order = vec![0, 1, 2];
        let mechanisms = (0..3)
            .map(|v| {
                let parents = g.parents_of(v);
                Mechanism {
                    weights: vec![0.0; parents.len()],
                    activations: vec![Activation::Square; parents.len()],
                    parents,
                    bias: 0.0,
                }
            })
            .collect();
        let noise_spec = NoiseSpec {
            family: NoiseFamily::Laplace,
            scale: 3.0,
        };
        let model = model_with(g, mechanisms, vec![noise_spec; 3]);
        let noise = draw_noise(&model, 200, &mut rng(8));
        let clip = 2.0;
        let s = simulate_observational(&model, 200, &noise, None, clip).unwrap();
        for (x, e) in s.values.iter().zip(&noise.values) {
            assert_eq!(*x, e.clamp(-clip, clip));
        }
    }

    #[test]
    fn lag_one_copy_dynamics() {
        let mut g = LaggedDag::empty(2, 1);
        g.set_edge(1, 0, 1, true);
        let mechanisms = vec![
            Mechanism::constant(0.0),
            Mechanism {
                parents: vec![Parent { var: 0, lag: 1 }],
                weights: vec![1.0],
                activations: vec![Activation::Identity],
                bias: 0.0,
            },
        ];
        let model = model_with(
            g,
            mechanisms,
            vec![
                NoiseSpec {
                    family: NoiseFamily::Gaussian,
                    scale: 5.0,
                },
                NoiseSpec {
                    family: NoiseFamily::Gaussian,
                    scale: 1.0,
                },
            ],
        );
        let mut noise = draw_noise(&model, 60, &mut rng(9));
        for t in 0..60 {
            noise.values[t * 2 + 1] = 0.0;
        }
        let s = simulate_observational(&model, 60, &noise, None, 4.0).unwrap();
        assert_eq!(s.get(0, 1), 0.0);
        for t in 1..60 {
            assert_eq!(s.get(t, 1), s.get(t - 1, 0).clamp(-4.0, 4.0));
        }
    }

    #[test]
    fn hard_intervention_sets_exact_values() {
        let cfg = PriorConfig {
            n_min: 5,
            ..PriorConfig::default()
        };
        let model = sample_tscm(&cfg, &mut rng(10));
        let len = 50;
        let path = model
            .transition()
            .map(|p| simulate_regime_chain(p, len, &mut rng(11)).unwrap());
        let spec = InterventionSpec {
            targets: vec![4],
            times: (20..=30).collect(),
            action: InterventionAction::Hard { value: 3.0 },
        };
        let noise = draw_noise(&model, len, &mut rng(12));
        let s = simulate_interventional(&model, len, &spec, &noise, path.as_deref(), 1e4).unwrap();
        for t in 20..=30 {
            assert_eq!(s.get(t, 4).to_bits(), 3.0f64.to_bits());
        }
    }

    #[test]
    fn clamp_values_bypass_clipping() {
        let model = one_var(NoiseFamily::Gaussian, 1.0);
        let noise = draw_noise(&model, 20, &mut rng(13));
        let spec = InterventionSpec {
            targets: vec![0],
            times: vec![10, 11, 12],
            action: InterventionAction::Hard { value: 50.0 },
        };
        let s = simulate_interventional(&model, 20, &spec, &noise, None, 10.0).unwrap();
        assert_eq!(s.get(11, 0), 50.0);
        assert!(s.get(13, 0).abs() <= 10.0);
    }

    #[test]
    fn input_errors() {
        let model = one_var(NoiseFamily::Gaussian, 1.0);
        let noise = NoiseMatrix::zeros(10, 1);
        assert!(simulate_observational(&model, 11, &noise, None, 1.0).is_err());
        assert!(simulate_observational(&model, 10, &noise, Some(&[0; 10]), 1.0).is_err());
        let spec = InterventionSpec {
            targets: vec![0],
            times: vec![10],
            action: InterventionAction::Hard { value: 1.0 },
        };
        assert!(matches!(
            simulate_interventional(&model, 10, &spec, &noise, None, 1.0),
            Err(Error::Input(_))
        ));

        let cfg = PriorConfig {
            family_mix: crate::prior::FamilyMix {
                diverse_nonlinear: 0.0,
                chain: 0.0,
                regime_switching: 1.0,
            },
            ..PriorConfig::default()
        };
        let switching = sample_tscm(&cfg, &mut rng(14));
        let noise = draw_noise(&switching, 10, &mut rng(15));
        assert!(simulate_observational(&switching, 10, &noise, None, 1.0).is_err());
        assert!(simulate_observational(&switching, 10, &noise, Some(&[9; 10]), 1.0).is_err());
    }

    #[test]
    fn ou_mapping_plug_in_values() {
        let c = ou_ar1_coefficients(1.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!((c.c1, c.c2, c.c3), (0.0, 0.0, 1.0));
        let c = ou_ar1_coefficients(0.5, 2.0, 1.0, 0.01).unwrap();
        assert_eq!((c.c1, c.c2, c.c3), (0.01, 0.995, 0.1));
        assert!(ou_ar1_coefficients(0.0, 0.0, 1.0, 0.1).is_err());
        assert!(ou_ar1_coefficients(1.0, 0.0, 1.0, -0.1).is_err());
        assert!(ou_ar1_coefficients(1.0, 0.0, -1.0, 0.1).is_err());
    }

    #[test]
    fn ar1_long_run_variance_within_three_standard_errors() {
        // c2 = 0.5 mixes quickly; the asymptotic variance of the sample
        // variance of a Gaussian AR(1) is 2 sigma^4 (1 + rho^2) / (1 - rho^2) / n
        let coeffs = Ar1Coefficients { c1: 0.3, c2: 0.5, c3: 1.0 };
        let target = coeffs.stationary_variance().unwrap();
        let n = 200_000;
        let path = simulate_ar1(coeffs, coeffs.stationary_mean().unwrap(), n, &mut rng(16));
        let (mean, var) = moments(&path);
        let rho: f64 = 0.5;
        let se = (2.0 * target * target * (1.0 + rho * rho) / (1.0 - rho * rho) / n as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} target {target} se {se}");
        assert!((mean - 0.6).abs() < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn simulated_values_are_finite_and_clipped(seed in any::<u64>(), clip in 0.5f64..1e4) {
            let cfg = PriorConfig { clip_bound: clip, ..PriorConfig::default() };
            let mut r = rng(seed);
            let model = sample_tscm(&cfg, &mut r);
            let spec = sample_intervention(&model, &cfg, &mut r).unwrap();
            let len = cfg.seq_len;
            let path = model.transition().map(|p| simulate_regime_chain(p, len, &mut r).unwrap());
            let noise = draw_noise(&model, len, &mut r);
            let obs = simulate_observational(&model, len, &noise, path.as_deref(), clip).unwrap();
            let int = simulate_interventional(&model, len, &spec, &noise, path.as_deref(), clip).unwrap();
            prop_assert!(obs.values.iter().all(|v| v.is_finite() && v.abs() <= clip));
            for t in 0..len {
                for v in 0..model.n_vars() {
                    let x = int.get(t, v);
                    prop_assert!(x.is_finite());
                    if !matches!(spec.cell_action(v, t), Some(CellAction::Clamp(_))) {
                        prop_assert!(x.abs() <= clip);
                    }
                }
            }
            let again = simulate_interventional(&model, len, &spec, &noise, path.as_deref(), clip).unwrap();
            prop_assert_eq!(int, again);
        }
    }
}
