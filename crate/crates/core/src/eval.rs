//! Baseline predictors and the causal-query metric harness.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{classify_sample, QueryClass};
use crate::dataset::{derive_sample_seed, storage_precision, CorpusReader, PairedSample, SampleWorld};
use crate::error::{Error, Result};
use crate::prior::PriorConfig;
use crate::scm::{CellAction, InterventionAction, InterventionSpec, QueryTuple, Series};

/// Effects smaller than this in magnitude count as zero for direction accuracy.
pub const ZERO_EFFECT: f64 = 1e-9;

pub const DEFAULT_VAR_LAG: usize = 1;

/// `x_t = intercept + sum_k a[k-1] x_{t-k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    pub lag: usize,
    pub a: Vec<DMatrix<f64>>,
    pub intercept: DVector<f64>,
}

impl VarModel {
    pub fn n_vars(&self) -> usize {
        self.intercept.len()
    }

    /// One-step conditional mean given `history`, most recent row last.
    fn step(&self, history: &[DVector<f64>]) -> DVector<f64> {
        let mut x = self.intercept.clone();
        for (k, a) in self.a.iter().enumerate() {
            x += a * &history[history.len() - 1 - k];
        }
        x
    }
}

/// Per-variable least squares on `[1, x_{t-1}, ..., x_{t-lag}]`.
///
/// Regressors are centered and the intercept recovered from the means, so a
/// rank-deficient design yields the minimum-norm lag coefficients; a constant
/// series gives zero matrices and the constant as intercept.
pub fn fit_var_ols(series: &Series, lag: usize) -> Result<VarModel> {
    let n = series.n_vars;
    let len = series.len();
    if lag == 0 {
        return Err(Error::input("VAR lag order must be at least 1"));
    }
    if len <= lag * n + lag + 1 {
        return Err(Error::input(format!(
            "series of length {len} too short for a VAR({lag}) on {n} variables (need > {})",
            lag * n + lag + 1
        )));
    }
    if !series.is_finite() {
        return Err(Error::input("cannot fit a VAR to a non-finite series"));
    }
    let rows = len - lag;
    let mut x = DMatrix::<f64>::zeros(rows, n * lag);
    let mut y = DMatrix::<f64>::zeros(rows, n);
    for r in 0..rows {
        let t = r + lag;
        for v in 0..n {
            y[(r, v)] = series.get(t, v);
        }
        for k in 1..=lag {
            for v in 0..n {
                x[(r, (k - 1) * n + v)] = series.get(t - k, v);
            }
        }
    }
    let x_mean = x.row_mean();
    let y_mean = y.row_mean();
    for mut row in x.row_iter_mut() {
        row -= &x_mean;
    }
    for mut row in y.row_iter_mut() {
        row -= &y_mean;
    }
    let svd = x.svd(true, true);
    let max_sv = svd.singular_values.max();
    let eps = max_sv * rows.max(n * lag) as f64 * f64::EPSILON;
    // (n*lag) x n, column i holds the coefficients for variable i
    let b = if max_sv > 0.0 {
        svd.solve(&y, eps).map_err(|e| Error::input(format!("least squares failed: {e}")))?
    } else {
        DMatrix::zeros(n * lag, n)
    };
    let a: Vec<DMatrix<f64>> = (0..lag).map(|k| b.rows(k * n, n).transpose()).collect();
    let intercept = (y_mean - x_mean * &b).transpose();
    if a.iter().any(|m| m.iter().any(|c| !c.is_finite())) || intercept.iter().any(|c| !c.is_finite()) {
        return Err(Error::input("VAR fit produced non-finite coefficients"));
    }
    Ok(VarModel { lag, a, intercept })
}

/// Rolls the VAR forward from the `lag` observed rows preceding the
/// intervention start, with future noise set to zero. Intervened cells are
/// clamped (hard, time-varying) or shifted (soft).
pub fn predict_var(model: &VarModel, context: &Series, spec: &InterventionSpec, query: &QueryTuple) -> Result<f64> {
    predict_var_bounded(model, context, spec, query, None)
}

/// Per-variable `(min, max)` over a series.
pub fn observed_range(series: &Series) -> Vec<(f64, f64)> {
    (0..series.n_vars)
        .map(|v| series.column(v).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x))))
        .collect()
}

/// As [`predict_var`], but each one-step forecast is clamped into
/// `bounds[v]` before the intervention is applied.
pub fn predict_var_bounded(
    model: &VarModel,
    context: &Series,
    spec: &InterventionSpec,
    query: &QueryTuple,
    bounds: Option<&[(f64, f64)]>,
) -> Result<f64> {
    let start = spec.start();
    if start < model.lag {
        return Err(Error::input(format!("intervention at {start} leaves fewer than {} context steps", model.lag)));
    }
    if query.time < start {
        return Err(Error::input(format!("query time {} precedes the intervention start {start}", query.time)));
    }
    if query.var >= model.n_vars() || context.n_vars != model.n_vars() {
        return Err(Error::input("query or context does not match the VAR dimension"));
    }
    if start > context.len() {
        return Err(Error::input("context shorter than the pre-intervention window"));
    }
    if bounds.is_some_and(|b| b.len() != model.n_vars()) {
        return Err(Error::input("one forecast bound per variable required"));
    }
    let mut history: Vec<DVector<f64>> = (start - model.lag..start)
        .map(|t| DVector::from_row_slice(context.row(t)))
        .collect();
    for t in start..=query.time {
        let mut x = model.step(&history);
        for v in 0..model.n_vars() {
            if let Some(&(lo, hi)) = bounds.map(|b| &b[v]) {
                x[v] = x[v].clamp(lo, hi);
            }
            match spec.cell_action(v, t) {
                Some(CellAction::Clamp(c)) => x[v] = c,
                Some(CellAction::Shift(d)) => x[v] += d,
                None => {}
            }
        }
        history.push(x);
    }
    Ok(history.last().expect("at least one step")[query.var])
}

/// Observational mean of the query variable over the context.
pub fn predict_mean(context: &Series, query: &QueryTuple) -> f64 {
    let mut acc = Neumaier::default();
    context.column(query.var).for_each(|v| acc.add(v));
    acc.sum() / context.len() as f64
}

/// Maps a sample and an (possibly altered) intervention to a point prediction
/// of the query cell.
pub trait Predictor: Sync {
    fn name(&self) -> String;
    fn predict(&self, sample: &PairedSample, spec: &InterventionSpec) -> Result<f64>;
}

/// VAR-OLS fitted on each record's observational series.
///
/// With `bounded` set, rollouts stay within the per-variable range of the
/// fitting series; fitted models are frequently explosive on saturated
/// series and unbounded rollouts then run off to astronomically large values.
#[derive(Debug, Clone, Copy)]
pub struct VarPredictor {
    pub lag: usize,
    pub bounded: bool,
}

impl Default for VarPredictor {
    fn default() -> Self {
        VarPredictor {
            lag: DEFAULT_VAR_LAG,
            bounded: true,
        }
    }
}

impl Predictor for VarPredictor {
    fn name(&self) -> String {
        let bound = if self.bounded { "observed-range" } else { "unbounded" };
        format!("var-ols(lag={}, {bound})", self.lag)
    }

    fn predict(&self, sample: &PairedSample, spec: &InterventionSpec) -> Result<f64> {
        let model = fit_var_ols(&sample.obs, self.lag)?;
        let bounds = self.bounded.then(|| observed_range(&sample.obs));
        predict_var_bounded(&model, &sample.obs, spec, &sample.query, bounds.as_deref())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MeanPredictor;

impl Predictor for MeanPredictor {
    fn name(&self) -> String {
        "mean".into()
    }

    fn predict(&self, sample: &PairedSample, _spec: &InterventionSpec) -> Result<f64> {
        Ok(predict_mean(&sample.obs, &sample.query))
    }
}

/// Re-simulates the sample's world under the given intervention with the
/// sample's own noise, so on the true intervention it reproduces the target.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub cfg: PriorConfig,
}

impl Predictor for OraclePredictor {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn predict(&self, sample: &PairedSample, spec: &InterventionSpec) -> Result<f64> {
        let world = SampleWorld::new(&self.cfg, sample.seed)?;
        if world.model != sample.model {
            return Err(Error::input(format!("record seed {} does not regenerate under this config", sample.seed)));
        }
        let int = storage_precision(world.interventional(spec)?);
        Ok(int.get(sample.query.time, sample.query.var))
    }
}

/// Reflects another predictor's effect around the observational baseline.
#[derive(Debug, Clone)]
pub struct SignFlipped<P>(pub P);

impl<P: Predictor> Predictor for SignFlipped<P> {
    fn name(&self) -> String {
        format!("sign-flipped {}", self.0.name())
    }

    fn predict(&self, sample: &PairedSample, spec: &InterventionSpec) -> Result<f64> {
        let base = baseline(sample);
        Ok(base - (self.0.predict(sample, spec)? - base))
    }
}

fn baseline(sample: &PairedSample) -> f64 {
    sample.obs.get(sample.query.time, sample.query.var)
}

/// What the metrics need from one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryRecord {
    pub class: QueryClass,
    pub target: f64,
    /// Observational value at the query cell.
    pub baseline: f64,
}

impl QueryRecord {
    pub fn of(sample: &PairedSample) -> Self {
        QueryRecord {
            class: classify_sample(sample),
            target: sample.query.target,
            baseline: baseline(sample),
        }
    }
}

pub fn query_records(corpus: &CorpusReader) -> Result<Vec<QueryRecord>> {
    (0..corpus.len())
        .into_par_iter()
        .map(|i| corpus.read_record(i).map(|s| QueryRecord::of(&s)))
        .collect()
}

pub fn predict_samples(samples: &[PairedSample], predictor: &dyn Predictor) -> Result<Vec<f64>> {
    samples.par_iter().map(|s| predictor.predict(s, &s.intervention)).collect()
}

/// Predictions for every record, in index order.
pub fn predict_corpus(corpus: &CorpusReader, predictor: &dyn Predictor) -> Result<Vec<f64>> {
    (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let s = corpus.read_record(i)?;
            predictor.predict(&s, &s.intervention)
        })
        .collect()
}

/// Compensated (Neumaier) summation.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

fn mean_of(xs: impl Iterator<Item = f64>, n: usize) -> f64 {
    let mut acc = Neumaier::default();
    xs.for_each(|x| acc.add(x));
    acc.sum() / n as f64
}

/// Metrics over one group of queries.
///
/// `mean_pred`/`mean_gt` average raw values and `mean_abs_pred`/`mean_abs_gt`
/// absolute values; the ratios divide the corresponding means. Effects are
/// measured against the observational value at the query cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub count: usize,
    pub rmse: Option<f64>,
    pub mae: Option<f64>,
    /// MSE over the population variance of the ground truth.
    pub nmse: Option<f64>,
    pub mean_pred: Option<f64>,
    pub mean_gt: Option<f64>,
    pub pred_gt_ratio: Option<f64>,
    pub mean_abs_pred: Option<f64>,
    pub mean_abs_gt: Option<f64>,
    pub abs_pred_gt_ratio: Option<f64>,
    pub mean_abs_effect_pred: Option<f64>,
    pub mean_abs_effect_gt: Option<f64>,
    pub direction_accuracy: Option<f64>,
    /// Pearson correlation of predicted and true effects. Identical effect
    /// vectors score 1 even when constant; any other undefined case scores 0.
    pub effect_corr: Option<f64>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then_some(a / b)
}

fn same_direction(pred: f64, truth: f64) -> bool {
    match (pred.abs() < ZERO_EFFECT, truth.abs() < ZERO_EFFECT) {
        (true, true) => true,
        (false, false) => pred.signum() == truth.signum(),
        _ => false,
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    if x == y {
        return 1.0;
    }
    let n = x.len();
    let mx = mean_of(x.iter().copied(), n);
    let my = mean_of(y.iter().copied(), n);
    let (mut sxy, mut sxx, mut syy) = (Neumaier::default(), Neumaier::default(), Neumaier::default());
    for (a, b) in x.iter().zip(y) {
        sxy.add((a - mx) * (b - my));
        sxx.add((a - mx) * (a - mx));
        syy.add((b - my) * (b - my));
    }
    let denom = (sxx.sum() * syy.sum()).sqrt();
    if denom > 0.0 && denom.is_finite() {
        (sxy.sum() / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

impl Metrics {
    pub fn compute(records: &[QueryRecord], predictions: &[f64]) -> Metrics {
        let n = records.len();
        if n == 0 {
            return Metrics {
                count: 0,
                rmse: None,
                mae: None,
                nmse: None,
                mean_pred: None,
                mean_gt: None,
                pred_gt_ratio: None,
                mean_abs_pred: None,
                mean_abs_gt: None,
                abs_pred_gt_ratio: None,
                mean_abs_effect_pred: None,
                mean_abs_effect_gt: None,
                direction_accuracy: None,
                effect_corr: None,
            };
        }
        let pairs = || records.iter().zip(predictions);
        let mse = mean_of(pairs().map(|(r, p)| (p - r.target) * (p - r.target)), n);
        let mae = mean_of(pairs().map(|(r, p)| (p - r.target).abs()), n);
        let mean_gt = mean_of(records.iter().map(|r| r.target), n);
        let var_gt = mean_of(records.iter().map(|r| (r.target - mean_gt) * (r.target - mean_gt)), n);
        let mean_pred = mean_of(predictions.iter().copied(), n);
        let mean_abs_pred = mean_of(predictions.iter().map(|p| p.abs()), n);
        let mean_abs_gt = mean_of(records.iter().map(|r| r.target.abs()), n);
        let pred_effects: Vec<f64> = pairs().map(|(r, p)| p - r.baseline).collect();
        let true_effects: Vec<f64> = records.iter().map(|r| r.target - r.baseline).collect();
        let agree = pred_effects
            .iter()
            .zip(&true_effects)
            .filter(|(p, t)| same_direction(**p, **t))
            .count();
        Metrics {
            count: n,
            rmse: Some(mse.sqrt()),
            mae: Some(mae),
            nmse: ratio(mse, var_gt),
            mean_pred: Some(mean_pred),
            mean_gt: Some(mean_gt),
            pred_gt_ratio: ratio(mean_pred, mean_gt),
            mean_abs_pred: Some(mean_abs_pred),
            mean_abs_gt: Some(mean_abs_gt),
            abs_pred_gt_ratio: ratio(mean_abs_pred, mean_abs_gt),
            mean_abs_effect_pred: Some(mean_of(pred_effects.iter().map(|e| e.abs()), n)),
            mean_abs_effect_gt: Some(mean_of(true_effects.iter().map(|e| e.abs()), n)),
            direction_accuracy: Some(agree as f64 / n as f64),
            effect_corr: Some(pearson(&pred_effects, &true_effects)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub by_class: BTreeMap<QueryClass, Metrics>,
    pub overall: Metrics,
    /// Mean Gaussian negative log-likelihood, when predictive stds exist.
    pub nll: Option<f64>,
    /// Records left out of the report.
    pub skipped: usize,
}

/// Scores one prediction per record, per query class and overall.
pub fn evaluate(method: &str, records: &[QueryRecord], predictions: &[f64]) -> Result<EvalReport> {
    if records.len() != predictions.len() {
        return Err(Error::input(format!(
            "{} predictions for {} records",
            predictions.len(),
            records.len()
        )));
    }
    let by_class = QueryClass::ALL
        .iter()
        .map(|&c| {
            let (recs, preds): (Vec<QueryRecord>, Vec<f64>) = records
                .iter()
                .zip(predictions)
                .filter(|(r, _)| r.class == c)
                .map(|(r, p)| (*r, *p))
                .unzip();
            (c, Metrics::compute(&recs, &preds))
        })
        .collect();
    Ok(EvalReport {
        method: method.to_string(),
        by_class,
        overall: Metrics::compute(records, predictions),
        nll: None,
        skipped: 0,
    })
}

/// The intervention with every target moved to a uniformly chosen
/// non-target variable (distinct, so two targets may collapse to one when
/// only one other variable exists). Times and values are kept. `None` when
/// the model has no other variable.
pub fn shuffle_targets(spec: &InterventionSpec, n_vars: usize, rng: &mut ChaCha8Rng) -> Option<InterventionSpec> {
    let others: Vec<usize> = (0..n_vars).filter(|v| !spec.is_target(*v)).collect();
    if others.is_empty() {
        return None;
    }
    let k = spec.targets.len().min(others.len());
    let picks = index::sample(rng, others.len(), k).into_vec();
    // pair each kept target slot with its new variable, then restore order
    let mut slots: Vec<(usize, usize)> = picks.iter().enumerate().map(|(slot, &p)| (others[p], slot)).collect();
    slots.sort_unstable();
    let action = match &spec.action {
        InterventionAction::Soft { shifts } => InterventionAction::Soft {
            shifts: slots.iter().map(|&(_, slot)| shifts[slot]).collect(),
        },
        other => other.clone(),
    };
    Some(InterventionSpec {
        targets: slots.iter().map(|&(v, _)| v).collect(),
        times: spec.times.clone(),
        action,
    })
}

/// Reports for the true interventions and for shuffled targets, over the
/// same records. Records with no alternative target are skipped in both.
pub fn shuffled_control(corpus: &CorpusReader, predictor: &dyn Predictor, seed: u64) -> Result<(EvalReport, EvalReport)> {
    let rows: Vec<Option<(QueryRecord, f64, f64)>> = (0..corpus.len())
        .into_par_iter()
        .map(|i| {
            let s = corpus.read_record(i)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_sample_seed(seed, i));
            let Some(shuffled) = shuffle_targets(&s.intervention, s.model.n_vars(), &mut rng) else {
                return Ok(None);
            };
            let normal = predictor.predict(&s, &s.intervention)?;
            let moved = predictor.predict(&s, &shuffled)?;
            Ok(Some((QueryRecord::of(&s), normal, moved)))
        })
        .collect::<Result<_>>()?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let kept: Vec<(QueryRecord, f64, f64)> = rows.into_iter().flatten().collect();
    let records: Vec<QueryRecord> = kept.iter().map(|r| r.0).collect();
    let normal: Vec<f64> = kept.iter().map(|r| r.1).collect();
    let moved: Vec<f64> = kept.iter().map(|r| r.2).collect();
    let mut a = evaluate(&predictor.name(), &records, &normal)?;
    let mut b = evaluate(&format!("{} (shuffled targets)", predictor.name()), &records, &moved)?;
    a.skipped = skipped;
    b.skipped = skipped;
    Ok((a, b))
}

/// Parsed predictive distribution for one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub std: f64,
}

/// Parses `index,mean,std` lines for a corpus of `count` records. A leading
/// header line starting with `index` is allowed.
pub fn parse_predictions(text: &str, count: u64) -> Result<Vec<Prediction>> {
    let mut slots: Vec<Option<Prediction>> = vec![None; count as usize];
    let mut duplicates = Vec::new();
    let mut out_of_range = Vec::new();
    let mut offset = 0u64;
    for (line_no, line) in text.split_inclusive('\n').enumerate() {
        let at = offset;
        offset += line.len() as u64;
        let line = line.trim();
        if line.is_empty() || (line_no == 0 && line.starts_with("index")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [i, m, s] => i.parse::<u64>().ok().zip(m.parse::<f64>().ok()).zip(s.parse::<f64>().ok()),
            _ => None,
        };
        let Some(((index, mean), std)) = parsed else {
            return Err(Error::format(at, format!("line {} is not `index,mean,std`", line_no + 1)));
        };
        if !(std > 0.0 && std.is_finite()) || !mean.is_finite() {
            return Err(Error::format(at, format!("line {}: mean must be finite and std positive", line_no + 1)));
        }
        match slots.get_mut(index as usize) {
            None => out_of_range.push(index),
            Some(Some(_)) => duplicates.push(index),
            Some(slot) => *slot = Some(Prediction { mean, std }),
        }
    }
    let missing: Vec<usize> = slots.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
    if !(missing.is_empty() && duplicates.is_empty() && out_of_range.is_empty()) {
        let list = |v: Vec<String>| -> String {
            let head: Vec<String> = v.iter().take(20).cloned().collect();
            let more = if v.len() > 20 { format!(" (+{} more)", v.len() - 20) } else { String::new() };
            format!("{}{more}", head.join(", "))
        };
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing indices: {}", list(missing.iter().map(|i| i.to_string()).collect())));
        }
        if !duplicates.is_empty() {
            parts.push(format!("duplicate indices: {}", list(duplicates.iter().map(|i| i.to_string()).collect())));
        }
        if !out_of_range.is_empty() {
            parts.push(format!("indices out of range: {}", list(out_of_range.iter().map(|i| i.to_string()).collect())));
        }
        return Err(Error::format(0, parts.join("; ")));
    }
    Ok(slots.into_iter().map(|s| s.expect("checked")).collect())
}

/// Mean negative log-likelihood of the targets under independent Gaussians.
pub fn gaussian_nll(targets: &[f64], predictions: &[Prediction]) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    mean_of(
        targets.iter().zip(predictions).map(|(y, p)| {
            let z = (y - p.mean) / p.std;
            0.5 * (ln_2pi + z * z) + p.std.ln()
        }),
        targets.len(),
    )
}

/// Evaluates the means of a predictions file and its Gaussian NLL.
pub fn score_predictions(method: &str, records: &[QueryRecord], predictions: &[Prediction]) -> Result<EvalReport> {
    let means: Vec<f64> = predictions.iter().map(|p| p.mean).collect();
    let mut report = evaluate(method, records, &means)?;
    let targets: Vec<f64> = records.iter().map(|r| r.target).collect();
    report.nll = Some(gaussian_nll(&targets, predictions));
    Ok(report)
}

pub fn score_predictions_file(corpus: &CorpusReader, path: &std::path::Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    let predictions = parse_predictions(&text, corpus.len())?;
    let records = query_records(corpus)?;
    score_predictions(&format!("predictions file {}", path.display()), &records, &predictions)
}

/// Writes `index,mean,std` lines with round-trip precision.
pub fn write_predictions<W: Write>(predictions: &[Prediction], out: &mut W) -> Result<()> {
    for (i, p) in predictions.iter().enumerate() {
        writeln!(out, "{i},{:?},{:?}", p.mean, p.std)?;
    }
    Ok(())
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("eval report serializes")
    }
}

fn cell(x: Option<f64>) -> String {
    match x {
        Some(v) if v.abs() >= 1e5 => format!("{v:.3e}"),
        Some(v) => format!("{v:.4}"),
        None => "n/a".into(),
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "method: {}", self.method)?;
        let header = [
            "class", "n", "RMSE", "MAE", "NMSE", "MeanPred", "MeanGT", "Pred/GT", "|Pred|", "|GT|", "|P|/|GT|", "|Eff|Pred",
            "|Eff|GT", "DirAcc", "Corr",
        ];
        let widths = [11, 6, 11, 11, 9, 11, 11, 9, 11, 11, 9, 11, 11, 7, 7];
        let row = |f: &mut fmt::Formatter<'_>, cols: Vec<String>| -> fmt::Result {
            let line: Vec<String> = cols.iter().zip(widths).map(|(c, w)| format!("{c:>w$}")).collect();
            writeln!(f, "{}", line.join(" "))
        };
        row(f, header.iter().map(|s| s.to_string()).collect())?;
        let groups = self
            .by_class
            .iter()
            .map(|(c, m)| (c.name().to_string(), m))
            .chain(std::iter::once(("overall".to_string(), &self.overall)));
        for (name, m) in groups {
            row(
                f,
                vec![
                    name,
                    m.count.to_string(),
                    cell(m.rmse),
                    cell(m.mae),
                    cell(m.nmse),
                    cell(m.mean_pred),
                    cell(m.mean_gt),
                    cell(m.pred_gt_ratio),
                    cell(m.mean_abs_pred),
                    cell(m.mean_abs_gt),
                    cell(m.abs_pred_gt_ratio),
                    cell(m.mean_abs_effect_pred),
                    cell(m.mean_abs_effect_gt),
                    cell(m.direction_accuracy),
                    cell(m.effect_corr),
                ],
            )?;
        }
        if let Some(nll) = self.nll {
            writeln!(f, "gaussian nll: {nll:.4}")?;
        }
        if self.skipped > 0 {
            writeln!(f, "skipped records: {}", self.skipped)?;
        }
        writeln!(
            f,
            "MeanPred/MeanGT average raw values; |Pred|/|GT| average absolute values. Effects are relative to the observational value at the query cell."
        )
    }
}
