//! Causal reachability in the unrolled graph, query classification, and
//! corpus-level validation statistics.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{CorpusReader, PairedSample};
use crate::scm::{CausalModel, FamilyTag, InterventionAction, InterventionKind, InterventionSpec, QueryTuple};

/// Cells of the unrolled `len x n_vars` graph reachable from an intervention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachableSet {
    pub n_vars: usize,
    pub len: usize,
    cells: Vec<bool>,
}

impl ReachableSet {
    #[inline]
    pub fn contains(&self, var: usize, t: usize) -> bool {
        var < self.n_vars && t < self.len && self.cells[t * self.n_vars + var]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// `(var, time)` pairs in the set.
    pub fn to_set(&self) -> BTreeSet<(usize, usize)> {
        (0..self.len)
            .flat_map(|t| (0..self.n_vars).map(move |v| (v, t)))
            .filter(|&(v, t)| self.contains(v, t))
            .collect()
    }
}

/// Forward closure of the intervened cells in the unrolled graph.
///
/// An edge `(j, s) -> (i, s + k)` exists when `G_k[j, i]` is set in the
/// regime active at time `s + k`. For regime-switching models, passing
/// `regime_path = None` takes the union of edges over all regimes instead of
/// following the realized path.
pub fn reachable_set(model: &CausalModel, spec: &InterventionSpec, len: usize, regime_path: Option<&[u8]>) -> ReachableSet {
    let n = model.n_vars();
    let k_max = model.max_lag();
    let mut cells = vec![false; len * n];
    let regimes: Vec<usize> = (0..model.n_regimes()).collect();

    for t in 0..len {
        let active: &[usize] = match (model.is_switching(), regime_path) {
            (true, Some(path)) => std::slice::from_ref(&regimes[path[t] as usize]),
            (true, None) => &regimes,
            (false, _) => &regimes[..1],
        };
        let edge = |lag: usize, from: usize, to: usize| active.iter().any(|&r| model.regime_graph(r).edge(lag, from, to));

        let mut frontier = Vec::new();
        for i in 0..n {
            let seeded = spec.is_target(i) && spec.times.binary_search(&t).is_ok();
            let lagged = (1..=k_max.min(t)).any(|lag| (0..n).any(|j| cells[(t - lag) * n + j] && edge(lag, j, i)));
            if seeded || lagged {
                cells[t * n + i] = true;
                frontier.push(i);
            }
        }
        while let Some(j) = frontier.pop() {
            for i in 0..n {
                if !cells[t * n + i] && edge(0, j, i) {
                    cells[t * n + i] = true;
                    frontier.push(i);
                }
            }
        }
    }
    ReachableSet { n_vars: n, len, cells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryClass {
    Intervened,
    Downstream,
    NonCausal,
}

impl QueryClass {
    pub const ALL: [QueryClass; 3] = [QueryClass::Intervened, QueryClass::Downstream, QueryClass::NonCausal];

    pub fn name(self) -> &'static str {
        match self {
            QueryClass::Intervened => "intervened",
            QueryClass::Downstream => "downstream",
            QueryClass::NonCausal => "non_causal",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for QueryClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Class of the cell `(var, time)` given a precomputed reachable set.
pub fn classify_cell(reach: &ReachableSet, spec: &InterventionSpec, var: usize, time: usize) -> QueryClass {
    if spec.is_target(var) {
        QueryClass::Intervened
    } else if reach.contains(var, time) {
        QueryClass::Downstream
    } else {
        QueryClass::NonCausal
    }
}

pub fn classify_query(
    model: &CausalModel,
    spec: &InterventionSpec,
    query: &QueryTuple,
    len: usize,
    regime_path: Option<&[u8]>,
) -> QueryClass {
    let reach = reachable_set(model, spec, len, regime_path);
    classify_cell(&reach, spec, query.var, query.time)
}

/// Class of a stored sample's query, using its realized regime path.
pub fn classify_sample(sample: &PairedSample) -> QueryClass {
    classify_query(
        &sample.model,
        &sample.intervention,
        &sample.query,
        sample.seq_len(),
        sample.obs.regime_path.as_deref(),
    )
}

/// Mean absolute obs/int difference over the intervened cells.
pub fn effect_size(sample: &PairedSample) -> f64 {
    let spec = &sample.intervention;
    let mut total = 0.0;
    let mut count = 0usize;
    for &t in &spec.times {
        for &v in &spec.targets {
            total += (sample.int.get(t, v) - sample.obs.get(t, v)).abs();
            count += 1;
        }
    }
    total / count as f64
}

/// Fixed-width histogram over `[lo, hi)` with explicit under/overflow bins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        }
    }

    pub fn add(&mut self, x: f64) {
        if x < self.lo {
            self.underflow += 1;
        } else if x >= self.hi {
            self.overflow += 1;
        } else {
            let bins = self.counts.len();
            let b = (((x - self.lo) / (self.hi - self.lo)) * bins as f64) as usize;
            self.counts[b.min(bins - 1)] += 1;
        }
    }

    fn merge(&mut self, other: &Histogram) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.underflow += other.underflow;
        self.overflow += other.overflow;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }
}

/// Running sums for mean and standard deviation.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn add(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, o: &Moments) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n.max(1) as f64
    }

    fn std(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        ((self.sum_sq - self.n as f64 * mean * mean) / (self.n - 1) as f64).max(0.0).sqrt()
    }
}

/// Validation statistics over a corpus.
///
/// `effect_size_*` summarize, per record, the mean absolute difference
/// between the interventional and observational series over the intervened
/// cells (targets x intervention times). Frequencies are over readable
/// records; `obs_*`/`int_*` are over all cells of all finite records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub records: u64,
    pub unreadable_records: u64,
    pub diverged_records: u64,
    pub divergence_rate: f64,
    pub family_freqs: Vec<(String, f64)>,
    pub intervention_kind_freqs: Vec<(String, f64)>,
    pub query_class_freqs: Vec<(String, f64)>,
    /// Counts indexed by `n_vars`.
    pub graph_size_histogram: Vec<u64>,
    /// Counts indexed by `max_lag`.
    pub lag_histogram: Vec<u64>,
    pub effect_size_mean: f64,
    pub effect_size_std: f64,
    pub effect_size_median: f64,
    pub obs_mean: f64,
    pub obs_std: f64,
    pub int_mean: f64,
    pub int_std: f64,
    pub edge_prob_mean: Option<f64>,
    pub edge_prob_histogram: Histogram,
    /// Counts indexed by intervention start time.
    pub start_time_histogram: Vec<u64>,
    /// Hard values, soft shifts and time-varying trajectory values.
    pub value_histogram: Histogram,
    pub min_start_time: Option<usize>,
}

#[derive(Debug, Clone)]
struct Partial {
    records: u64,
    unreadable: u64,
    diverged: u64,
    family: [u64; 3],
    kind: [u64; 3],
    class: [u64; 3],
    sizes: Vec<u64>,
    lags: Vec<u64>,
    effects: Vec<f64>,
    obs: Moments,
    int: Moments,
    edge_prob: Moments,
    edge_hist: Histogram,
    starts: Vec<u64>,
    values: Histogram,
}

impl Partial {
    fn new() -> Self {
        Partial {
            records: 0,
            unreadable: 0,
            diverged: 0,
            family: [0; 3],
            kind: [0; 3],
            class: [0; 3],
            sizes: Vec::new(),
            lags: Vec::new(),
            effects: Vec::new(),
            obs: Moments::default(),
            int: Moments::default(),
            edge_prob: Moments::default(),
            edge_hist: Histogram::new(0.0, 1.0, 20),
            starts: Vec::new(),
            values: Histogram::new(-10.0, 10.0, 40),
        }
    }

    fn bump(v: &mut Vec<u64>, i: usize) {
        if v.len() <= i {
            v.resize(i + 1, 0);
        }
        v[i] += 1;
    }

    fn add(&mut self, sample: &PairedSample) {
        self.records += 1;
        if !(sample.obs.is_finite() && sample.int.is_finite() && sample.query.target.is_finite()) {
            self.diverged += 1;
            return;
        }
        self.family[sample.model.family().code() as usize] += 1;
        self.kind[sample.intervention.kind().code() as usize] += 1;
        self.class[classify_sample(sample).index()] += 1;
        Self::bump(&mut self.sizes, sample.model.n_vars());
        Self::bump(&mut self.lags, sample.model.max_lag());
        Self::bump(&mut self.starts, sample.intervention.start());
        self.effects.push(effect_size(sample));
        for &x in &sample.obs.values {
            self.obs.add(x);
        }
        for &x in &sample.int.values {
            self.int.add(x);
        }
        if let Some(p) = sample.model.edge_prob() {
            self.edge_prob.add(p);
            self.edge_hist.add(p);
        }
        match &sample.intervention.action {
            InterventionAction::Hard { value } => self.values.add(*value),
            InterventionAction::Soft { shifts } => shifts.iter().for_each(|&s| self.values.add(s)),
            InterventionAction::TimeVarying { trajectory, .. } => trajectory.iter().for_each(|&c| self.values.add(c)),
        }
    }

    fn merge(mut self, o: Partial) -> Partial {
        self.records += o.records;
        self.unreadable += o.unreadable;
        self.diverged += o.diverged;
        for i in 0..3 {
            self.family[i] += o.family[i];
            self.kind[i] += o.kind[i];
            self.class[i] += o.class[i];
        }
        for (dst, src) in [(&mut self.sizes, &o.sizes), (&mut self.lags, &o.lags), (&mut self.starts, &o.starts)] {
            if dst.len() < src.len() {
                dst.resize(src.len(), 0);
            }
            for (a, b) in dst.iter_mut().zip(src) {
                *a += b;
            }
        }
        self.effects.extend(o.effects);
        self.obs.merge(&o.obs);
        self.int.merge(&o.int);
        self.edge_prob.merge(&o.edge_prob);
        self.edge_hist.merge(&o.edge_hist);
        self.values.merge(&o.values);
        self
    }

    fn finish(mut self) -> StatsReport {
        let valid = (self.records - self.diverged).max(1) as f64;
        let freqs = |counts: &[u64; 3], names: [&str; 3]| -> Vec<(String, f64)> {
            names
                .iter()
                .zip(counts)
                .map(|(n, &c)| (n.to_string(), c as f64 / valid))
                .collect()
        };
        let (eff_mean, eff_std) = {
            let mut m = Moments::default();
            self.effects.iter().for_each(|&e| m.add(e));
            (m.mean(), m.std())
        };
        self.effects.sort_by(f64::total_cmp);
        let median = match self.effects.len() {
            0 => 0.0,
            n if n % 2 == 1 => self.effects[n / 2],
            n => 0.5 * (self.effects[n / 2 - 1] + self.effects[n / 2]),
        };
        let readable = self.records.max(1) as f64;
        StatsReport {
            records: self.records + self.unreadable,
            unreadable_records: self.unreadable,
            diverged_records: self.diverged,
            divergence_rate: self.diverged as f64 / readable,
            family_freqs: freqs(&self.family, FamilyTag::ALL.map(FamilyTag::name)),
            intervention_kind_freqs: freqs(&self.kind, InterventionKind::ALL.map(InterventionKind::name)),
            query_class_freqs: freqs(&self.class, QueryClass::ALL.map(QueryClass::name)),
            min_start_time: self.starts.iter().position(|&c| c > 0),
            graph_size_histogram: self.sizes,
            lag_histogram: self.lags,
            effect_size_mean: eff_mean,
            effect_size_std: eff_std,
            effect_size_median: median,
            obs_mean: self.obs.mean(),
            obs_std: self.obs.std(),
            int_mean: self.int.mean(),
            int_std: self.int.std(),
            edge_prob_mean: (self.edge_prob.n > 0).then(|| self.edge_prob.mean()),
            edge_prob_histogram: self.edge_hist,
            start_time_histogram: self.starts,
            value_histogram: self.values,
        }
    }
}

/// Statistics over in-memory samples.
pub fn sample_stats(samples: &[PairedSample]) -> StatsReport {
    samples
        .par_iter()
        .fold(Partial::new, |mut acc, s| {
            acc.add(s);
            acc
        })
        .reduce(Partial::new, Partial::merge)
        .finish()
}

/// Statistics over a corpus file. Unreadable records are counted, not fatal.
pub fn corpus_stats(corpus: &CorpusReader) -> StatsReport {
    (0..corpus.len())
        .into_par_iter()
        .fold(Partial::new, |mut acc, i| {
            match corpus.read_record(i) {
                Ok(s) => acc.add(&s),
                Err(_) => acc.unreadable += 1,
            }
            acc
        })
        .reduce(Partial::new, Partial::merge)
        .finish()
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats report serializes")
    }
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "records            {}", self.records)?;
        writeln!(f, "unreadable         {}", self.unreadable_records)?;
        writeln!(f, "diverged           {}", self.diverged_records)?;
        writeln!(f, "divergence rate    {:.6}", self.divergence_rate)?;
        for (title, rows) in [
            ("family", &self.family_freqs),
            ("intervention kind", &self.intervention_kind_freqs),
            ("query class", &self.query_class_freqs),
        ] {
            writeln!(f, "{title}:")?;
            for (name, p) in rows.iter() {
                writeln!(f, "  {name:<20} {:>7.3}", p)?;
            }
        }
        writeln!(f, "graph size N:")?;
        for (n, c) in self.graph_size_histogram.iter().enumerate().filter(|(_, &c)| c > 0) {
            writeln!(f, "  {n:>3} {c:>10}")?;
        }
        writeln!(f, "max lag K:")?;
        for (k, c) in self.lag_histogram.iter().enumerate().filter(|(_, &c)| c > 0) {
            writeln!(f, "  {k:>3} {c:>10}")?;
        }
        writeln!(
            f,
            "effect size        mean {:.4}  std {:.4}  median {:.4}",
            self.effect_size_mean, self.effect_size_std, self.effect_size_median
        )?;
        writeln!(f, "observational      mean {:.4}  std {:.4}", self.obs_mean, self.obs_std)?;
        writeln!(f, "interventional     mean {:.4}  std {:.4}", self.int_mean, self.int_std)?;
        match self.edge_prob_mean {
            Some(p) => writeln!(f, "edge probability   mean {p:.4}")?,
            None => writeln!(f, "edge probability   n/a")?,
        }
        let h = &self.edge_prob_histogram;
        let width = (h.hi - h.lo) / h.counts.len() as f64;
        for (b, c) in h.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            writeln!(f, "  [{:.2}, {:.2}) {c:>10}", h.lo + b as f64 * width, h.lo + (b + 1) as f64 * width)?;
        }
        writeln!(f, "intervention start time:")?;
        for (t, c) in self.start_time_histogram.iter().enumerate().filter(|(_, &c)| c > 0) {
            writeln!(f, "  {t:>4} {c:>10}")?;
        }
        let h = &self.value_histogram;
        let width = (h.hi - h.lo) / h.counts.len() as f64;
        writeln!(f, "intervention values (underflow {}, overflow {}):", h.underflow, h.overflow)?;
        for (b, c) in h.counts.iter().enumerate().filter(|(_, &c)| c > 0) {
            writeln!(f, "  [{:>6.2}, {:>6.2}) {c:>10}", h.lo + b as f64 * width, h.lo + (b + 1) as f64 * width)?;
        }
        Ok(())
    }
}
