//! JSON schemas: graph spec files and experiment reports.
//!
//! Layers and basis indices in spec files are 1-based, so `[1, 2]` is
//! `X_2^(1)`. Voltages are canonical coordinates of the first kind, one
//! array per layer. Every validation failure carries a JSON pointer.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_model::{Edge, VoltageGraph};
use crate::harmonic::RealizationOverrides;
use crate::lie_core::{GradedLieAlgebra, GroupElement, Product};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpecFile {
    pub algebra: AlgebraSpec,
    pub graph: GraphSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub realization_overrides: Option<OverridesSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraSpec {
    pub step: usize,
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub brackets: Vec<BracketSpec>,
}

/// `[left, right] = Σ coef · basis`, each basis element as `[layer, index]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketSpec {
    pub left: [usize; 2],
    pub right: [usize; 2],
    pub terms: Vec<TermSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub basis: [usize; 2],
    pub coef: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeSpec {
    pub id: String,
    pub origin: String,
    pub terminus: String,
    pub inverse: String,
    pub voltage: VoltageSpec,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageSpec {
    pub layers: Vec<Vec<f64>>,
}

/// Coordinates of layers `2..=r` of `Φ_0` per vertex name (the freedom left
/// by harmonicity, e.g. the `κ` parameters of the dice lattice).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverridesSpec {
    #[serde(default)]
    pub higher_layers: BTreeMap<String, Vec<Vec<f64>>>,
}

fn invalid(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation {
        pointer: pointer.into(),
        message: message.into(),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => {}
        }
    }
    out
}

impl GraphSpecFile {
    /// Parses and validates a spec document.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: GraphSpecFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            invalid(
                if pointer.is_empty() { "/".into() } else { pointer },
                e.into_inner().to_string(),
            )
        })?;
        spec.build()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The graph and realization overrides described by the document.
    pub fn build(&self) -> Result<(VoltageGraph, RealizationOverrides)> {
        let alg = Arc::new(self.build_algebra()?);
        let names = &self.graph.vertices;
        let mut vindex = HashMap::new();
        for (i, v) in names.iter().enumerate() {
            if vindex.insert(v.as_str(), i).is_some() {
                return Err(invalid(
                    format!("/graph/vertices/{i}"),
                    format!("duplicate vertex {v:?}"),
                ));
            }
        }
        let mut eindex = HashMap::new();
        for (i, e) in self.graph.edges.iter().enumerate() {
            if eindex.insert(e.id.as_str(), i).is_some() {
                return Err(invalid(
                    format!("/graph/edges/{i}/id"),
                    format!("duplicate edge id {:?}", e.id),
                ));
            }
        }
        let vertex = |name: &str, ptr: String| -> Result<usize> {
            vindex
                .get(name)
                .copied()
                .ok_or_else(|| invalid(ptr, format!("unknown vertex {name:?}")))
        };
        let mut edges = Vec::with_capacity(self.graph.edges.len());
        for (i, e) in self.graph.edges.iter().enumerate() {
            let base = format!("/graph/edges/{i}");
            let inverse = *eindex
                .get(e.inverse.as_str())
                .ok_or_else(|| invalid(format!("{base}/inverse"), format!("unknown edge {:?}", e.inverse)))?;
            let voltage = GroupElement::from_layers(&alg, &e.voltage.layers)
                .map_err(|err| invalid(format!("{base}/voltage/layers"), err.to_string()))?;
            if !e.p.is_finite() {
                return Err(invalid(format!("{base}/p"), "probability must be finite"));
            }
            edges.push(Edge {
                label: e.id.clone(),
                origin: vertex(&e.origin, format!("{base}/origin"))?,
                terminus: vertex(&e.terminus, format!("{base}/terminus"))?,
                inverse,
                voltage,
                p: e.p,
            });
        }
        let g = VoltageGraph::new(alg.clone(), names.clone(), edges).map_err(|err| match err {
            Error::Stochasticity { vertex, .. } => invalid(format!("/graph/vertices/{vertex}"), err.to_string()),
            Error::InversePairing { edge, .. } => invalid(format!("/graph/edges/{edge}/inverse"), err.to_string()),
            Error::Domain(ref m) | Error::Structural(ref m) => invalid("/graph/edges", m.clone()),
            other => invalid("/graph", other.to_string()),
        })?;
        let mut overrides = RealizationOverrides::default();
        if let Some(ov) = &self.realization_overrides {
            let higher: Vec<usize> = alg.layer_dims()[1..].to_vec();
            for (name, layers) in &ov.higher_layers {
                let ptr = format!(
                    "/realization_overrides/higher_layers/{}",
                    name.replace('~', "~0").replace('/', "~1")
                );
                let x = vertex(name, ptr.clone())?;
                if x == 0 {
                    return Err(invalid(ptr, "the base vertex is pinned to the identity"));
                }
                if layers.len() != higher.len() || layers.iter().zip(&higher).any(|(l, d)| l.len() != *d) {
                    return Err(invalid(ptr, format!("expected layers of sizes {higher:?}")));
                }
                overrides.higher_layers.push((x, layers.concat()));
            }
        }
        Ok((g, overrides))
    }

    fn build_algebra(&self) -> Result<GradedLieAlgebra> {
        let a = &self.algebra;
        if a.step != a.layer_dims.len() {
            return Err(invalid(
                "/algebra/step",
                format!("step {} but {} layer dimensions", a.step, a.layer_dims.len()),
            ));
        }
        let dims = &a.layer_dims;
        let check = |b: [usize; 2], ptr: String| -> Result<(usize, usize)> {
            let [layer, index] = b;
            if layer == 0 || layer > dims.len() || index == 0 || index > dims[layer - 1] {
                return Err(invalid(ptr, format!("no basis element [{layer}, {index}]")));
            }
            Ok((layer - 1, index - 1))
        };
        let mut rules = Vec::new();
        for (i, b) in a.brackets.iter().enumerate() {
            let base = format!("/algebra/brackets/{i}");
            let left = check(b.left, format!("{base}/left"))?;
            let right = check(b.right, format!("{base}/right"))?;
            let mut terms = Vec::new();
            for (j, t) in b.terms.iter().enumerate() {
                let (l, k) = check(t.basis, format!("{base}/terms/{j}/basis"))?;
                terms.push((k, l, t.coef));
            }
            rules.push((left, right, terms));
        }
        GradedLieAlgebra::from_layered_brackets(dims, &rules).map_err(|e| invalid("/algebra/brackets", e.to_string()))
    }

    /// The spec document of a graph, with optional overrides.
    pub fn from_graph(g: &VoltageGraph, overrides: &RealizationOverrides) -> Self {
        let alg = g.algebra();
        let locate = |idx: usize| -> [usize; 2] {
            let layer = alg.layer_of(idx);
            [layer, idx - alg.layer_range(layer).start + 1]
        };
        let mut by_pair: BTreeMap<(usize, usize), Vec<TermSpec>> = BTreeMap::new();
        for (i, j, k, c) in alg.structure_constants(Product::Original) {
            if i < j {
                by_pair.entry((i, j)).or_default().push(TermSpec {
                    basis: locate(k),
                    coef: c,
                });
            }
        }
        let brackets = by_pair
            .into_iter()
            .map(|((i, j), terms)| BracketSpec {
                left: locate(i),
                right: locate(j),
                terms,
            })
            .collect();
        let names = g.vertices();
        let edges = g
            .edges()
            .iter()
            .map(|e| EdgeSpec {
                id: e.label.clone(),
                origin: names[e.origin].clone(),
                terminus: names[e.terminus].clone(),
                inverse: g.edges()[e.inverse].label.clone(),
                voltage: VoltageSpec {
                    layers: e.voltage.layers(),
                },
                p: e.p,
            })
            .collect();
        let realization_overrides = if overrides.higher_layers.is_empty() {
            None
        } else {
            let dims = &alg.layer_dims()[1..];
            let mut map = BTreeMap::new();
            for (x, flat) in &overrides.higher_layers {
                let mut layers = Vec::new();
                let mut at = 0;
                for &d in dims {
                    layers.push(flat[at..at + d].to_vec());
                    at += d;
                }
                map.insert(names[*x].clone(), layers);
            }
            Some(OverridesSpec { higher_layers: map })
        };
        GraphSpecFile {
            algebra: AlgebraSpec {
                step: alg.step(),
                layer_dims: alg.layer_dims().to_vec(),
                brackets,
            },
            graph: GraphSpec {
                vertices: names.to_vec(),
                edges,
            },
            realization_overrides,
        }
    }
}

/// One pass/fail line of an experiment report, tied to an acceptance
/// criterion id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: String,
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub ci: [f64; 2],
    pub pass: bool,
}

/// Report of a testing subcommand: config echo, seed, criterion lines and
/// the CSV sidecars written next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub results: Vec<CriterionResult>,
    #[serde(default)]
    pub details: serde_json::Value,
    #[serde(default)]
    pub sidecars: Vec<String>,
    pub pass: bool,
}

/// Writes rows as CSV with every float in `{:.16e}` (17 significant digits).
pub fn write_csv(path: &std::path::Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_model::{dice, triangular, DiceParams, TriangularParams};

    #[test]
    fn presets_round_trip() {
        let g = dice(DiceParams::new(0.2, 0.2, 0.1, 0.3, 0.3, 0.4)).unwrap();
        let ov = RealizationOverrides {
            higher_layers: vec![(1, vec![0.7]), (2, vec![-1.25])],
        };
        let spec = GraphSpecFile::from_graph(&g, &ov);
        let text = spec.to_json().unwrap();
        let back = GraphSpecFile::parse(&text).unwrap();
        assert_eq!(back, spec);
        let (g2, ov2) = back.build().unwrap();
        assert_eq!(ov2, ov);
        assert_eq!(g2.probabilities(), g.probabilities());
        for (a, b) in g.edges().iter().zip(g2.edges()) {
            assert_eq!(a.voltage, b.voltage);
            assert_eq!((a.origin, a.terminus, a.inverse), (b.origin, b.terminus, b.inverse));
        }
        let t = triangular(TriangularParams::with_epsilon(0.4, 0.3, 0.3, 0.1)).unwrap();
        let spec = GraphSpecFile::from_graph(&t, &RealizationOverrides::default());
        assert_eq!(GraphSpecFile::parse(&spec.to_json().unwrap()).unwrap(), spec);
    }

    fn pointer_of(text: &str) -> String {
        match GraphSpecFile::parse(text) {
            Err(Error::Validation { pointer, .. }) => pointer,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_specs_point_at_the_problem() {
        let t = triangular(TriangularParams::with_epsilon(0.4, 0.3, 0.3, 0.1)).unwrap();
        let good: serde_json::Value =
            serde_json::to_value(GraphSpecFile::from_graph(&t, &RealizationOverrides::default())).unwrap();
        let mut v = good.clone();
        v["graph"]["edges"][3]["p"] = serde_json::json!("high");
        assert_eq!(pointer_of(&v.to_string()), "/graph/edges/3/p");
        let mut v = good.clone();
        v["graph"]["edges"][2]["p"] = serde_json::json!(0.9);
        assert_eq!(pointer_of(&v.to_string()), "/graph/vertices/0");
        let mut v = good.clone();
        v["graph"]["edges"][1]["terminus"] = serde_json::json!("nowhere");
        assert_eq!(pointer_of(&v.to_string()), "/graph/edges/1/terminus");
        let mut v = good.clone();
        v["algebra"]["brackets"][0]["terms"][0]["basis"] = serde_json::json!([2, 5]);
        assert_eq!(pointer_of(&v.to_string()), "/algebra/brackets/0/terms/0/basis");
        let mut v = good.clone();
        v["graph"]["edges"][0]["voltage"]["layers"] = serde_json::json!([[1.0]]);
        assert_eq!(pointer_of(&v.to_string()), "/graph/edges/0/voltage/layers");
        let mut v = good;
        v["algebra"]["colour"] = serde_json::json!(1);
        assert_eq!(pointer_of(&v.to_string()), "/algebra/colour");
        assert_eq!(pointer_of("{"), "/");
    }
}
