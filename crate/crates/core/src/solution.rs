//! Optimal flows in model terms, detached from the column layout.

use serde::{Deserialize, Serialize};

use crate::assembler::{ObjectiveKind, StandardProblem, Variable};
use crate::demand::DemandSet;
use crate::netmodel::{ArcId, Network};
use crate::solver::{SolveResult, SolveStatus};
use crate::{round_sig, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArcFlow {
    pub arc: ArcId,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSolution {
    #[serde(default)]
    pub format: Option<String>,
    pub objective_kind: ObjectiveKind,
    pub status: SolveStatus,
    pub objective: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub max_violation: f64,
    /// Per demand, occupied flows sorted by arc.
    pub flows: Vec<Vec<ArcFlow>>,
    pub rebalancing: Vec<ArcFlow>,
    /// Insufficiency slacks, empty for the efficiency objective.
    pub slack: Vec<f64>,
}

impl FlowSolution {
    /// Maps a solver vector back to flows. For the sufficiency objective the
    /// slacks are reset to their optimal value given the flows,
    /// `max(0, mean time - T_suff)`; the interior-point iterate only reaches
    /// it up to the barrier parameter.
    pub fn from_result(p: &StandardProblem, result: &SolveResult, net: &Network, dem: &DemandSet, t_suff: f64) -> Self {
        let idx = &p.index;
        let mut flows = vec![Vec::new(); idx.n_demands()];
        let mut rebalancing = Vec::with_capacity(idx.road_arcs().len());
        let mut slack = Vec::new();
        for (col, &value) in result.x.iter().enumerate() {
            match idx.variable(col) {
                Some(Variable::Flow { demand, arc }) => flows[demand].push(ArcFlow { arc, value }),
                Some(Variable::Rebalance { arc }) => rebalancing.push(ArcFlow { arc, value }),
                Some(Variable::Slack { .. }) => slack.push(value),
                None => {}
            }
        }
        let mut sol = FlowSolution {
            format: Some(FORMAT_VERSION.into()),
            objective_kind: p.kind,
            status: result.status,
            objective: result.objective,
            duality_gap: result.duality_gap,
            iterations: result.iterations,
            max_violation: result.max_violation,
            flows,
            rebalancing,
            slack,
        };
        if p.kind == ObjectiveKind::CommSuff && result.status == SolveStatus::Optimal {
            sol.slack = (0..dem.demands.len())
                .map(|m| (sol.mean_time(m, net, dem) - t_suff).max(0.0))
                .collect();
            let mut x = result.x.clone();
            for (m, &e) in sol.slack.iter().enumerate() {
                x[idx.slack(m).expect("slack column")] = e;
            }
            sol.objective = p.objective(&x);
        }
        sol
    }

    /// Flow-weighted mean trip time of demand `m`.
    pub fn mean_time(&self, m: usize, net: &Network, dem: &DemandSet) -> f64 {
        self.total_time(m, net) / dem.demands[m].rate
    }

    /// `Σ_a t_a x_a^m`.
    pub fn total_time(&self, m: usize, net: &Network) -> f64 {
        self.flows[m].iter().map(|f| net.arc(f.arc).time_min * f.value).sum()
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// The solution as it reads back from its JSON form, so that anything
    /// derived from it is reproducible from the file alone.
    pub fn rounded(&self) -> Self {
        let mut copy = self.clone();
        copy.format = Some(FORMAT_VERSION.into());
        let round = |v: &mut Vec<ArcFlow>| v.iter_mut().for_each(|f| f.value = round_sig(f.value));
        copy.flows.iter_mut().for_each(round);
        round(&mut copy.rebalancing);
        copy.slack.iter_mut().for_each(|v| *v = round_sig(*v));
        copy.objective = round_sig(copy.objective);
        copy.duality_gap = round_sig(copy.duality_gap);
        copy.max_violation = round_sig(copy.max_violation);
        copy
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NanSafe(&self.rounded())).expect("solution serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let v: FlowSolution = serde_json::from_str(text).map_err(|e| e.to_string())?;
        match v.format.as_deref() {
            None | Some(FORMAT_VERSION) => Ok(v),
            Some(other) => Err(format!("unsupported format {other:?}")),
        }
    }
}

/// serde_json writes non-finite floats as `null`, which then fails to parse
/// back into `f64`. Route scalar fields through `Option`.
struct NanSafe<'a>(&'a FlowSolution);

impl Serialize for NanSafe<'_> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut v = serde_json::to_value(self.0).map_err(serde::ser::Error::custom)?;
        for key in ["objective", "duality_gap", "max_violation"] {
            if v[key].is_null() {
                v[key] = serde_json::json!(f64::MAX);
            }
        }
        v.serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let sol = FlowSolution {
            format: None,
            objective_kind: ObjectiveKind::UtilEff,
            status: SolveStatus::Optimal,
            objective: 20.0,
            duality_gap: 1e-9,
            iterations: 7,
            max_violation: 0.0,
            flows: vec![vec![ArcFlow { arc: 0, value: 0.5 }, ArcFlow { arc: 3, value: 0.25 }]],
            rebalancing: vec![ArcFlow { arc: 2, value: 0.0 }],
            slack: vec![],
        };
        let back = FlowSolution::from_json(&sol.to_json()).unwrap();
        assert_eq!(back.flows, sol.flows);
        assert_eq!(back.objective, 20.0);
        assert_eq!(back.format.as_deref(), Some(FORMAT_VERSION));
    }

    #[test]
    fn non_finite_scalars_survive_serialization() {
        let sol = FlowSolution {
            format: None,
            objective_kind: ObjectiveKind::CommSuff,
            status: SolveStatus::Infeasible,
            objective: f64::NAN,
            duality_gap: f64::NAN,
            iterations: 0,
            max_violation: f64::NAN,
            flows: vec![],
            rebalancing: vec![],
            slack: vec![],
        };
        assert!(FlowSolution::from_json(&sol.to_json()).is_ok());
    }
}
