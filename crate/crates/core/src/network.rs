//! Node indicators and the thresholded speculative influence network (SIN).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::rank_transform;
use crate::error::{Error, Result};
use crate::te::SIIMatrix;

pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Industrial,
    Financial,
}

impl Group {
    pub fn label(self) -> NodeLabel {
        NodeLabel {
            group: self,
            subsector: None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Industrial => "industrial",
            Group::Financial => "financial",
        })
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "industrial" | "ix" => Ok(Group::Industrial),
            "financial" | "fin" => Ok(Group::Financial),
            other => Err(Error::Config(format!("unknown node group `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeLabel {
    pub group: Group,
    /// e.g. bank, securities, trust, insurance.
    pub subsector: Option<String>,
}

impl FromStr for NodeLabel {
    type Err = Error;

    /// `group` or `group/subsector`.
    fn from_str(s: &str) -> Result<Self> {
        let (g, sub) = match s.split_once('/') {
            Some((g, sub)) => (g, Some(sub.trim().to_string()).filter(|s| !s.is_empty())),
            None => (s, None),
        };
        Ok(Self {
            group: g.parse()?,
            subsector: sub,
        })
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.subsector {
            Some(s) => write!(f, "{}/{s}", self.group),
            None => write!(f, "{}", self.group),
        }
    }
}

/// Group assignment for every node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeGroups {
    labels: BTreeMap<String, NodeLabel>,
}

impl NodeGroups {
    pub fn new() -> Self {
        Self::default()
    }

    /// Labels a node; labeling the same node twice is an error.
    pub fn insert(&mut self, node: impl Into<String>, label: NodeLabel) -> Result<()> {
        let node = node.into();
        if self.labels.contains_key(&node) {
            return Err(Error::Config(format!("node `{node}` is labeled more than once")));
        }
        self.labels.insert(node, label);
        Ok(())
    }

    pub fn with(mut self, node: &str, group: Group) -> Result<Self> {
        self.insert(node, group.label())?;
        Ok(self)
    }

    pub fn get(&self, node: &str) -> Result<&NodeLabel> {
        self.labels
            .get(node)
            .ok_or_else(|| Error::Config(format!("node `{node}` has no group label")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &NodeLabel)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeIndicators {
    pub node: String,
    pub group: Group,
    pub si_to_all: f64,
    pub si_from_all: f64,
    pub si_to_fin: f64,
    pub si_from_fin: f64,
    pub si_to_ix: f64,
    pub si_from_ix: f64,
    pub nsii_on_all: f64,
    pub nsii_on_fin: f64,
    pub nsii_on_ix: f64,
}

impl NodeIndicators {
    pub const NAMES: [&'static str; 9] = [
        "SI-to-All",
        "SI-from-All",
        "SI-to-Fin",
        "SI-from-Fin",
        "SI-to-IX",
        "SI-from-IX",
        "NSII-on-All",
        "NSII-on-Fin",
        "NSII-on-IX",
    ];

    /// Values in the order of [`Self::NAMES`].
    pub fn values(&self) -> [f64; 9] {
        [
            self.si_to_all,
            self.si_from_all,
            self.si_to_fin,
            self.si_from_fin,
            self.si_to_ix,
            self.si_from_ix,
            self.nsii_on_all,
            self.nsii_on_fin,
            self.nsii_on_ix,
        ]
    }

    /// Looks an indicator up by its name (case-insensitive).
    pub fn value(&self, name: &str) -> Result<f64> {
        Self::NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
            .map(|i| self.values()[i])
            .ok_or_else(|| Error::invalid(format!("unknown indicator `{name}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorTable {
    /// One row per matrix node, in matrix order.
    pub rows: Vec<NodeIndicators>,
}

impl IndicatorTable {
    pub fn row(&self, node: &str) -> Result<&NodeIndicators> {
        self.rows
            .iter()
            .find(|r| r.node == node)
            .ok_or_else(|| Error::UnknownNode(node.to_string()))
    }

    /// One indicator across all rows.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        self.rows.iter().map(|r| r.value(name)).collect()
    }
}

/// Gross and net influence sums for each node. Sums skip `j = i`; the net
/// indicators are the differences of the gross ones.
pub fn compute_indicators(m: &SIIMatrix, groups: &NodeGroups) -> Result<IndicatorTable> {
    let nodes = m.nodes();
    let labels = nodes
        .iter()
        .map(|n| groups.get(n).map(|l| l.group))
        .collect::<Result<Vec<_>>>()?;
    let v = m.values();
    let rows = (0..nodes.len())
        .map(|i| {
            let (mut to_all, mut from_all, mut to_fin, mut from_fin, mut to_ix, mut from_ix) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for j in (0..nodes.len()).filter(|&j| j != i) {
                to_all += v[i][j];
                from_all += v[j][i];
                match labels[j] {
                    Group::Financial => {
                        to_fin += v[i][j];
                        from_fin += v[j][i];
                    }
                    Group::Industrial => {
                        to_ix += v[i][j];
                        from_ix += v[j][i];
                    }
                }
            }
            NodeIndicators {
                node: nodes[i].clone(),
                group: labels[i],
                si_to_all: to_all,
                si_from_all: from_all,
                si_to_fin: to_fin,
                si_from_fin: from_fin,
                si_to_ix: to_ix,
                si_from_ix: from_ix,
                nsii_on_all: to_all - from_all,
                nsii_on_fin: to_fin - from_fin,
                nsii_on_ix: to_ix - from_ix,
            }
        })
        .collect();
    Ok(IndicatorTable { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinNode {
    pub id: String,
    pub group: Group,
    pub subsector: Option<String>,
    /// Within-group rank of the sizing indicator.
    pub size: f64,
    /// Within-group rank of %MaxLoss, when losses were given.
    pub color: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinEdge {
    pub source: String,
    pub target: String,
    /// Rescaled NSII in `[0, 1]`.
    pub weight: f64,
    /// NSII before rescaling.
    pub nsii: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SINGraph {
    pub threshold: f64,
    pub nodes: Vec<SinNode>,
    pub edges: Vec<SinEdge>,
}

/// Ranks `values[k]` among the entries of its own group.
fn within_group_ranks(groups: &[Group], values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for g in [Group::Industrial, Group::Financial] {
        let idx: Vec<usize> = (0..values.len()).filter(|&k| groups[k] == g).collect();
        let sub: Vec<f64> = idx.iter().map(|&k| values[k]).collect();
        for (k, r) in idx.into_iter().zip(rank_transform(&sub)) {
            out[k] = r;
        }
    }
    out
}

/// Builds the unidirectional network: each unordered pair with nonzero NSII
/// yields one candidate edge pointing in the positive direction. Candidate
/// weights are min-max rescaled over all candidates (all equal maps to 1);
/// edges whose raw NSII reaches `threshold` are kept.
///
/// Node size is the within-group rank of NSII-on-IX for industrial nodes
/// and of NSII-on-Fin minus SI-from-IX for financial nodes.
pub fn build_sin(
    m: &SIIMatrix,
    groups: &NodeGroups,
    threshold: f64,
    losses: Option<&BTreeMap<String, f64>>,
) -> Result<SINGraph> {
    if !(threshold >= 0.0) || !threshold.is_finite() {
        return Err(Error::invalid(format!("threshold must be a nonnegative number, got {threshold}")));
    }
    let table = compute_indicators(m, groups)?;
    let nodes = m.nodes();
    let n = nodes.len();

    let mut candidates = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let v = m.nsii_at(i, j);
            if v > 0.0 {
                candidates.push((i, j, v));
            } else if v < 0.0 {
                candidates.push((j, i, -v));
            }
        }
    }
    let lo = candidates.iter().map(|c| c.2).fold(f64::INFINITY, f64::min);
    let hi = candidates.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let rescale = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 1.0 };
    let edges = candidates
        .into_iter()
        .filter(|c| c.2 >= threshold)
        .map(|(s, t, v)| SinEdge {
            source: nodes[s].clone(),
            target: nodes[t].clone(),
            weight: rescale(v),
            nsii: v,
        })
        .collect();

    let node_groups: Vec<Group> = table.rows.iter().map(|r| r.group).collect();
    let size_metric: Vec<f64> = table
        .rows
        .iter()
        .map(|r| match r.group {
            Group::Industrial => r.nsii_on_ix,
            Group::Financial => r.nsii_on_fin - r.si_from_ix,
        })
        .collect();
    let sizes = within_group_ranks(&node_groups, &size_metric);
    let colors = match losses {
        Some(losses) => {
            let vals = nodes
                .iter()
                .map(|id| {
                    losses
                        .get(id)
                        .copied()
                        .ok_or_else(|| Error::invalid(format!("no %MaxLoss for node `{id}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Some(within_group_ranks(&node_groups, &vals))
        }
        None => None,
    };

    let sin_nodes = (0..n)
        .map(|k| {
            let label = groups.get(&nodes[k])?;
            Ok(SinNode {
                id: nodes[k].clone(),
                group: label.group,
                subsector: label.subsector.clone(),
                size: sizes[k],
                color: colors.as_ref().map(|c| c[k]),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SINGraph {
        threshold,
        nodes: sin_nodes,
        edges,
    })
}
