//! JSON model files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "variables": [{"name": "X", "card": 2, "mirror": "X'"}, ...],
//!   "factors": [
//!     {"id": "H", "axes": ["Y", "X"], "stage": 1, "gate": {"name": "hadamard"}},
//!     {"id": "rho", "axes": ["X", "X'"], "data": [[0.5, 0.0], ...]}
//!   ],
//!   "boxes": [...], "instances": [...], "measured": ["X"]
//! }
//! ```
//!
//! Factor data is row-major in the listed axis order. A factor carries either
//! a builtin gate reference or literal data; the writer uses the gate only
//! when rebuilding it reproduces the stored tensor exactly.

use qmf_core::graph::{BoxDecl, Factor, FactorGraph, GadgetInstance, GateRef, VariableDecl};
use qmf_core::models::gates::{self, GateSet};
use qmf_core::tensor::{Axis, NamedTensor};
use qmf_core::C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {message} (line {line}, column {column})")]
    Syntax {
        path: String,
        message: String,
        line: usize,
        column: usize,
    },

    #[error("{path}: {message}")]
    Schema { path: String, message: String },
}

fn schema(path: impl Into<String>, message: impl ToString) -> ModelFileError {
    ModelFileError::Schema {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub variables: Vec<VariableDecl>,
    pub factors: Vec<FactorRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub boxes: Vec<BoxDecl>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<GadgetInstance>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub measured: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorRecord {
    pub id: String,
    pub axes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<[f64; 2]>>,
}

pub fn parse_model(text: &str) -> Result<FactorGraph, ModelFileError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ModelFile = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        ModelFileError::Syntax {
            path,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })?;
    to_graph(&file)
}

pub fn to_graph(file: &ModelFile) -> Result<FactorGraph, ModelFileError> {
    if file.version != VERSION {
        return Err(schema("version", format!("unsupported version {}", file.version)));
    }
    let mut g = FactorGraph::new();
    for (i, v) in file.variables.iter().enumerate() {
        if v.card == 0 {
            return Err(schema(format!("variables[{i}].card"), format!("variable `{}` has cardinality 0", v.name)));
        }
        g.declare(v.clone()).map_err(|e| schema(format!("variables[{i}]"), e))?;
    }
    for (i, f) in file.factors.iter().enumerate() {
        let path = format!("factors[{i}]");
        let mut axes = Vec::with_capacity(f.axes.len());
        for (k, a) in f.axes.iter().enumerate() {
            let card = g.card(a).map_err(|e| schema(format!("{path}.axes[{k}]"), e))?;
            axes.push(Axis::new(a.clone(), card));
        }
        let tensor = match (&f.gate, &f.data) {
            (Some(gate), None) => {
                if !GateSet::contains(&gate.name) {
                    return Err(schema(format!("{path}.gate.name"), format!("unknown gate `{}`", gate.name)));
                }
                gates::build(gate, &axes).map_err(|e| schema(format!("{path}.gate"), e))?
            }
            (None, Some(data)) => {
                let data = data.iter().map(|[re, im]| C64::new(*re, *im)).collect();
                NamedTensor::new(axes, data).map_err(|e| schema(format!("{path}.data"), e))?
            }
            _ => return Err(schema(path, "a factor needs exactly one of `gate` and `data`")),
        };
        let factor = Factor {
            id: f.id.clone(),
            tensor,
            gate: f.gate.clone(),
            stage: f.stage,
        };
        g.add_factor(factor).map_err(|e| schema(path, e))?;
    }
    for (i, b) in file.boxes.iter().enumerate() {
        g.add_box(b.clone()).map_err(|e| schema(format!("boxes[{i}]"), e))?;
    }
    for (i, inst) in file.instances.iter().enumerate() {
        g.record_instance(inst.clone()).map_err(|e| schema(format!("instances[{i}]"), e))?;
    }
    for (i, m) in file.measured.iter().enumerate() {
        g.declare_measured(m).map_err(|e| schema(format!("measured[{i}]"), e))?;
    }
    g.validate().map_err(|e| schema("", e))?;
    Ok(g)
}

fn gate_reproduces(f: &Factor) -> bool {
    match &f.gate {
        Some(gate) => gates::build(gate, f.tensor.axes()).is_ok_and(|t| t == f.tensor),
        None => false,
    }
}

pub fn to_file(g: &FactorGraph) -> ModelFile {
    let factors = g
        .factors()
        .map(|f| {
            let exact = gate_reproduces(f);
            FactorRecord {
                id: f.id.clone(),
                axes: f.tensor.axis_names().iter().map(|s| s.to_string()).collect(),
                stage: f.stage,
                gate: if exact { f.gate.clone() } else { None },
                data: if exact {
                    None
                } else {
                    Some(f.tensor.data().iter().map(|z| [z.re, z.im]).collect())
                },
            }
        })
        .collect();
    ModelFile {
        version: VERSION,
        variables: g.variables().cloned().collect(),
        factors,
        boxes: g.boxes().cloned().collect(),
        instances: g.instances().cloned().collect(),
        measured: g.measured().to_vec(),
    }
}

/// Pretty-printed JSON with a trailing newline.
pub fn serialize_model(g: &FactorGraph) -> String {
    let mut s = serde_json::to_string_pretty(&to_file(g)).expect("model serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let text = r#"{
            "version": 1,
            "variables": [{"name": "X", "card": 2, "mirror": "X'"}, {"name": "X'", "card": 2, "mirror": "X"}],
            "factors": [{"id": "t", "axes": ["X", "X'"], "gate": {"name": "f_eq"}}]
        }"#;
        let g = parse_model(text).unwrap();
        assert_eq!(g.factor_count(), 1);
        assert_eq!(g.pairs(), vec!["X".to_string()]);
    }

    #[test]
    fn zero_cardinality_is_a_schema_error() {
        let text = r#"{"version": 1, "variables": [{"name": "X", "card": 0}], "factors": []}"#;
        match parse_model(text) {
            Err(ModelFileError::Schema { path, .. }) => assert_eq!(path, "variables[0].card"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn diagnostics_carry_path_and_line() {
        let text = "{\n  \"version\": 1,\n  \"variables\": [{\"name\": \"X\", \"card\": \"two\"}],\n  \"factors\": []\n}";
        match parse_model(text) {
            Err(ModelFileError::Syntax { path, line, .. }) => {
                assert_eq!(path, "variables[0].card");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_and_unknown_references() {
        let unknown_axis = r#"{"version": 1, "variables": [], "factors": [{"id": "f", "axes": ["Q"], "data": [[1, 0]]}]}"#;
        assert!(matches!(parse_model(unknown_axis), Err(ModelFileError::Schema { path, .. }) if path == "factors[0].axes[0]"));
        let unknown_gate = r#"{"version": 1, "variables": [{"name": "X", "card": 2}],
            "factors": [{"id": "f", "axes": ["X"], "gate": {"name": "toffoli"}}]}"#;
        assert!(matches!(parse_model(unknown_gate), Err(ModelFileError::Schema { path, .. }) if path == "factors[0].gate.name"));
        let short = r#"{"version": 1, "variables": [{"name": "X", "card": 2}],
            "factors": [{"id": "f", "axes": ["X"], "data": [[1, 0]]}]}"#;
        assert!(matches!(parse_model(short), Err(ModelFileError::Schema { path, .. }) if path == "factors[0].data"));
        let both = r#"{"version": 1, "variables": [{"name": "X", "card": 2}],
            "factors": [{"id": "f", "axes": ["X"]}]}"#;
        assert!(parse_model(both).is_err());
        let measured = r#"{"version": 1, "variables": [{"name": "X", "card": 2}], "factors": [], "measured": ["X"]}"#;
        assert!(matches!(parse_model(measured), Err(ModelFileError::Schema { path, .. }) if path == "measured[0]"));
    }

    #[test]
    fn inexact_gate_falls_back_to_data() {
        let mut g = FactorGraph::new();
        g.add_variable("X", 2).unwrap();
        g.add_variable("Y", 2).unwrap();
        let t = gates::hadamard("Y", "X").scale(C64::new(2.0, 0.0));
        g.add_factor(Factor::new("H", t).with_gate(GateRef::new("hadamard"))).unwrap();
        let file = to_file(&g);
        assert!(file.factors[0].gate.is_none());
        let back = parse_model(&serialize_model(&g)).unwrap();
        assert_eq!(back.factor("H").unwrap().tensor, g.factor("H").unwrap().tensor);
    }
}
