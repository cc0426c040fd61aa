//! JSON-lines and CSV renderings of samples.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::PairedSample;
use crate::error::{Error, Result};
use crate::scm::{
    Activation, CausalModel, FamilyTag, InterventionAction, InterventionKind, InterventionSpec, LaggedDag, Mechanism,
    NoiseSpec, Parent, Profile, QueryTuple, Regime, RegimeSwitchingTscm, Series, Tscm,
};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonGraph {
    topo_order: Vec<usize>,
    /// `adjacency[lag][from][to]`, 0 or 1.
    adjacency: Vec<Vec<Vec<u8>>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonMechanism {
    /// `[var, lag]` pairs.
    parents: Vec<[usize; 2]>,
    weights: Vec<f64>,
    activations: Vec<Activation>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct JsonProfile {
    #[serde(flatten)]
    shape: Profile,
    trajectory: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonIntervention {
    kind: InterventionKind,
    targets: Vec<usize>,
    times: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shift: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    profile: Option<JsonProfile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonQuery {
    var: usize,
    time: usize,
    target: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    n_vars: usize,
    max_lag: usize,
    seq_len: usize,
    family: FamilyTag,
    edge_prob: Option<f64>,
    graph: Vec<JsonGraph>,
    mechanisms: Vec<Vec<JsonMechanism>>,
    noise: Vec<NoiseSpec>,
    transition: Option<Vec<Vec<f64>>>,
    regime_path: Option<Vec<u8>>,
    intervention: JsonIntervention,
    /// Rows of the observational series.
    obs: Vec<Vec<f64>>,
    int: Vec<Vec<f64>>,
    query: JsonQuery,
    seed: u64,
}

fn rows(s: &Series) -> Vec<Vec<f64>> {
    (0..s.len()).map(|t| s.row(t).to_vec()).collect()
}

fn to_json_graph(g: &LaggedDag) -> JsonGraph {
    let n = g.n_vars;
    JsonGraph {
        topo_order: g.topo_order.clone(),
        adjacency: g
            .adjacency
            .iter()
            .map(|lag| lag.chunks(n).map(|row| row.iter().map(|&e| u8::from(e)).collect()).collect())
            .collect(),
    }
}

/// One JSON object per sample, suitable for a JSON-lines file.
pub fn to_json_line(s: &PairedSample) -> String {
    let m = &s.model;
    let spec = &s.intervention;
    let (value, shift, profile) = match &spec.action {
        InterventionAction::Hard { value } => (Some(*value), None, None),
        InterventionAction::Soft { shifts } => (None, Some(shifts.clone()), None),
        InterventionAction::TimeVarying { profile, trajectory } => (
            None,
            None,
            Some(JsonProfile {
                shape: *profile,
                trajectory: trajectory.clone(),
            }),
        ),
    };
    let record = JsonRecord {
        n_vars: m.n_vars(),
        max_lag: m.max_lag(),
        seq_len: s.seq_len(),
        family: m.family(),
        edge_prob: m.edge_prob(),
        graph: (0..m.n_regimes()).map(|r| to_json_graph(m.regime_graph(r))).collect(),
        mechanisms: (0..m.n_regimes())
            .map(|r| {
                m.regime_mechanisms(r)
                    .iter()
                    .map(|mech| JsonMechanism {
                        parents: mech.parents.iter().map(|p| [p.var, p.lag]).collect(),
                        weights: mech.weights.clone(),
                        activations: mech.activations.clone(),
                        bias: mech.bias,
                    })
                    .collect()
            })
            .collect(),
        noise: m.noise().to_vec(),
        transition: m.transition().map(<[Vec<f64>]>::to_vec),
        regime_path: s.regime_path().map(<[u8]>::to_vec),
        intervention: JsonIntervention {
            kind: spec.kind(),
            targets: spec.targets.clone(),
            times: spec.times.clone(),
            value,
            shift,
            profile,
        },
        obs: rows(&s.obs),
        int: rows(&s.int),
        query: JsonQuery {
            var: s.query.var,
            time: s.query.time,
            target: s.query.target,
        },
        seed: s.seed,
    };
    serde_json::to_string(&record).expect("record serializes")
}

fn bad(msg: impl Into<String>) -> Error {
    Error::input(msg)
}

fn from_json_graph(g: JsonGraph, n: usize, k: usize) -> Result<LaggedDag> {
    if g.adjacency.len() != k + 1 || g.adjacency.iter().any(|lag| lag.len() != n || lag.iter().any(|row| row.len() != n)) {
        return Err(bad(format!("adjacency must be {}x{n}x{n}", k + 1)));
    }
    Ok(LaggedDag {
        n_vars: n,
        max_lag: k,
        adjacency: g.adjacency.iter().map(|lag| lag.iter().flatten().map(|&e| e != 0).collect()).collect(),
        topo_order: g.topo_order,
    })
}

fn from_rows(rows: Vec<Vec<f64>>, n: usize, len: usize, path: &Option<Vec<u8>>) -> Result<Series> {
    if rows.len() != len || rows.iter().any(|r| r.len() != n) {
        return Err(bad(format!("series must be {len}x{n}")));
    }
    Ok(Series {
        n_vars: n,
        values: rows.into_iter().flatten().collect(),
        regime_path: path.clone(),
    })
}

/// Parses a line produced by [`to_json_line`].
pub fn from_json_line(line: &str) -> Result<PairedSample> {
    let rec: JsonRecord = serde_json::from_str(line).map_err(|e| bad(format!("json record: {e}")))?;
    let (n, k, len) = (rec.n_vars, rec.max_lag, rec.seq_len);
    if rec.graph.len() != rec.mechanisms.len() || rec.graph.is_empty() {
        return Err(bad("graph and mechanisms must list the same regimes"));
    }
    if rec.noise.len() != n {
        return Err(bad("noise must list one entry per variable"));
    }
    let mut regimes = Vec::with_capacity(rec.graph.len());
    for (g, mechs) in rec.graph.into_iter().zip(rec.mechanisms) {
        let mechanisms = mechs
            .into_iter()
            .map(|m| Mechanism {
                parents: m.parents.iter().map(|&[var, lag]| Parent { var, lag }).collect(),
                weights: m.weights,
                activations: m.activations,
                bias: m.bias,
            })
            .collect();
        regimes.push(Regime {
            graph: from_json_graph(g, n, k)?,
            mechanisms,
        });
    }
    let model = match rec.transition {
        None if regimes.len() == 1 => {
            let Regime { graph, mechanisms } = regimes.pop().expect("one regime");
            CausalModel::Single(Tscm {
                graph,
                mechanisms,
                noise: rec.noise,
                family: rec.family,
                edge_prob: rec.edge_prob,
            })
        }
        Some(transition) if rec.family == FamilyTag::RegimeSwitching => CausalModel::Switching(RegimeSwitchingTscm {
            regimes,
            noise: rec.noise,
            transition,
            edge_prob: rec.edge_prob,
        }),
        _ => return Err(bad("transition matrix must accompany exactly the multi-regime family")),
    };
    if let Some(path) = &rec.regime_path {
        if path.len() != len || path.iter().any(|&r| r as usize >= model.n_regimes()) {
            return Err(bad("regime path does not match the model"));
        }
    }
    let iv = rec.intervention;
    let action = match (iv.kind, iv.value, iv.shift, iv.profile) {
        (InterventionKind::Hard, Some(value), None, None) => InterventionAction::Hard { value },
        (InterventionKind::Soft, None, Some(shifts), None) => InterventionAction::Soft { shifts },
        (InterventionKind::TimeVarying, None, None, Some(p)) => InterventionAction::TimeVarying {
            profile: p.shape,
            trajectory: p.trajectory,
        },
        _ => return Err(bad("intervention needs exactly the payload matching its kind")),
    };
    let intervention = InterventionSpec {
        targets: iv.targets,
        times: iv.times,
        action,
    };
    intervention.check(n, len)?;
    if rec.query.var >= n || rec.query.time >= len {
        return Err(bad("query cell out of range"));
    }
    Ok(PairedSample {
        obs: from_rows(rec.obs, n, len, &rec.regime_path)?,
        int: from_rows(rec.int, n, len, &rec.regime_path)?,
        model,
        intervention,
        query: QueryTuple {
            var: rec.query.var,
            time: rec.query.time,
            target: rec.query.target,
        },
        seed: rec.seed,
    })
}

/// CSV with header `t,x0,...,x{N-1}`.
pub fn write_series_csv<W: Write>(series: &Series, out: &mut W) -> Result<()> {
    let header: Vec<String> = (0..series.n_vars).map(|v| format!("x{v}")).collect();
    writeln!(out, "t,{}", header.join(","))?;
    for t in 0..series.len() {
        write!(out, "{t}")?;
        for v in series.row(t) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// CSV with header `t,obs_x0,...,int_x0,...` holding both series side by side.
pub fn write_paired_csv<W: Write>(sample: &PairedSample, out: &mut W) -> Result<()> {
    let n = sample.model.n_vars();
    let names: Vec<String> = ["obs", "int"]
        .iter()
        .flat_map(|p| (0..n).map(move |v| format!("{p}_x{v}")))
        .collect();
    writeln!(out, "t,{}", names.join(","))?;
    for t in 0..sample.seq_len() {
        write!(out, "{t}")?;
        for v in sample.obs.row(t).iter().chain(sample.int.row(t)) {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
