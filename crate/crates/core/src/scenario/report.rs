use std::collections::BTreeMap;

use serde::Serialize;

use super::config::{Bound, ScenarioName};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<Bound>,
    /// `None` when no tolerance is configured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisSummary {
    pub name: String,
    pub metrics: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub scenario: ScenarioName,
    pub description: String,
    pub provenance: Provenance,
    pub analyses: Vec<AnalysisSummary>,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

impl RunReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.analyses
            .iter()
            .flat_map(|a| &a.metrics)
            .find(|m| m.name == name)
            .map(|m| m.value)
    }

    pub fn failures(&self) -> Vec<&Metric> {
        self.analyses
            .iter()
            .flat_map(|a| &a.metrics)
            .filter(|m| m.passed == Some(false))
            .collect()
    }

    pub fn has_analysis(&self, name: &str) -> bool {
        self.analyses.iter().any(|a| a.name == name)
    }
}

/// Collects metrics for one analysis and checks them against tolerances.
pub(crate) struct SummaryBuilder<'a> {
    summary: AnalysisSummary,
    tolerances: &'a BTreeMap<String, Bound>,
}

impl<'a> SummaryBuilder<'a> {
    pub fn new(name: &str, tolerances: &'a BTreeMap<String, Bound>) -> Self {
        SummaryBuilder {
            summary: AnalysisSummary {
                name: name.to_string(),
                metrics: Vec::new(),
            },
            tolerances,
        }
    }

    pub fn push(&mut self, name: &str, value: f64) {
        let bound = self.tolerances.get(name).copied();
        let passed = bound.map(|b| value.is_finite() && b.admits(value));
        if passed == Some(false) {
            log::warn!("{name} = {value:e} outside {bound:?}");
        }
        self.summary.metrics.push(Metric {
            name: name.to_string(),
            value,
            bound,
            passed,
        });
    }

    pub fn finish(self) -> AnalysisSummary {
        self.summary
    }
}
