//! Path diagrams of fitted loadings: covariates feed components through the
//! nonzero entries of `A`, components feed outcomes through the nonzero
//! entries of `Gamma`.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::model::FactorModel;

/// Display names for the rows of `A` and the columns of `Gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramNames {
    pub covariates: Vec<String>,
    pub outcomes: Vec<String>,
}

impl DiagramNames {
    /// `intercept, x1, ..., xm` and `Y1, ..., Yp`.
    pub fn default_for(model: &FactorModel) -> Self {
        let rows = model.a.nrows();
        let covariates = std::iter::once("intercept".to_string())
            .chain((1..rows).map(|j| format!("x{j}")))
            .collect();
        let outcomes = (1..=model.p()).map(|l| format!("Y{l}")).collect();
        Self { covariates, outcomes }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagramOptions {
    /// Entries with `|value| <= threshold` are dropped.
    pub threshold: f64,
    pub edge_labels: bool,
    /// Label outcome nodes as modified outcomes `Y†`.
    pub modified_outcomes: bool,
}

impl Default for DiagramOptions {
    fn default() -> Self {
        Self {
            threshold: 0.0,
            edge_labels: true,
            modified_outcomes: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeRef {
    Covariate(usize),
    Component(usize),
    Outcome(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: NodeRef,
    pub to: NodeRef,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiagram {
    pub covariate_labels: Vec<String>,
    pub outcome_labels: Vec<String>,
    pub components: usize,
    pub edges: Vec<Edge>,
    pub edge_labels: bool,
}

impl PathDiagram {
    pub fn build(model: &FactorModel, names: &DiagramNames, options: &DiagramOptions) -> Result<Self> {
        check_dims("covariate names", (model.a.nrows(), 1), (names.covariates.len(), 1))?;
        check_dims("outcome names", (model.p(), 1), (names.outcomes.len(), 1))?;
        if !(options.threshold >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "threshold must be nonnegative, got {}",
                options.threshold
            )));
        }
        let keep = |v: f64| v != 0.0 && v.abs() > options.threshold;
        let mut edges = Vec::new();
        for j in 0..model.a.nrows() {
            for k in 0..model.d() {
                let v = model.a[(j, k)];
                if keep(v) {
                    edges.push(Edge {
                        from: NodeRef::Covariate(j),
                        to: NodeRef::Component(k),
                        weight: v,
                    });
                }
            }
        }
        for k in 0..model.d() {
            for l in 0..model.p() {
                let v = model.gamma[(k, l)];
                if keep(v) {
                    edges.push(Edge {
                        from: NodeRef::Component(k),
                        to: NodeRef::Outcome(l),
                        weight: v,
                    });
                }
            }
        }
        let outcome_labels = names
            .outcomes
            .iter()
            .enumerate()
            .map(|(l, name)| {
                if !options.modified_outcomes {
                    name.clone()
                } else if *name == format!("Y{}", l + 1) {
                    format!("Y†{}", l + 1)
                } else {
                    format!("{name}†")
                }
            })
            .collect();
        Ok(Self {
            covariate_labels: names.covariates.clone(),
            outcome_labels,
            components: model.d(),
            edges,
            edge_labels: options.edge_labels,
        })
    }

    /// Nodes incident to at least one edge, covariates then components then
    /// outcomes, each by index.
    pub fn nodes(&self) -> Vec<NodeRef> {
        let mut nodes: Vec<NodeRef> = self.edges.iter().flat_map(|e| [e.from, e.to]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn label(&self, node: NodeRef) -> String {
        match node {
            NodeRef::Covariate(j) => self.covariate_labels[j].clone(),
            NodeRef::Component(k) => format!("PC{}", k + 1),
            NodeRef::Outcome(l) => self.outcome_labels[l].clone(),
        }
    }

    /// `(from label, to label)` for every edge, in output order.
    pub fn edge_names(&self) -> Vec<(String, String)> {
        self.edges
            .iter()
            .map(|e| (self.label(e.from), self.label(e.to)))
            .collect()
    }

    pub fn to_dot(&self) -> String {
        let id = |n: NodeRef| match n {
            NodeRef::Covariate(j) => format!("x_{j}"),
            NodeRef::Component(k) => format!("pc_{k}"),
            NodeRef::Outcome(l) => format!("y_{l}"),
        };
        let nodes = self.nodes();
        let mut out = String::from("digraph path_diagram {\n  rankdir=LR;\n");
        type Group = (fn(&NodeRef) -> bool, &'static str);
        let groups: [Group; 3] = [
            (|n| matches!(n, NodeRef::Covariate(_)), "box"),
            (|n| matches!(n, NodeRef::Component(_)), "ellipse"),
            (|n| matches!(n, NodeRef::Outcome(_)), "box"),
        ];
        for (member, shape) in groups {
            let group: Vec<&NodeRef> = nodes.iter().filter(|n| member(n)).collect();
            if group.is_empty() {
                continue;
            }
            out.push_str("  { rank=same;\n");
            for n in group {
                let _ = writeln!(
                    out,
                    "    {} [label=\"{}\", shape={shape}];",
                    id(*n),
                    escape(&self.label(*n))
                );
            }
            out.push_str("  }\n");
        }
        for e in &self.edges {
            if self.edge_labels {
                let _ = writeln!(out, "  {} -> {} [label=\"{:.3}\"];", id(e.from), id(e.to), e.weight);
            } else {
                let _ = writeln!(out, "  {} -> {};", id(e.from), id(e.to));
            }
        }
        out.push_str("}\n");
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// DOT text of the path diagram of `model`.
pub fn export_path_diagram(model: &FactorModel, names: &DiagramNames, options: &DiagramOptions) -> Result<String> {
    Ok(PathDiagram::build(model, names, options)?.to_dot())
}
