//! Machine-readable output. Field names are camelCase on the wire.

use std::collections::BTreeMap;

use sdata_core::ast::Dir;
use sdata_core::conformance::{PreservationReport, ProgressReport};
use sdata_core::netcheck::ScheduleStep;
use sdata_core::runtime::{Label, TraceStep};
use sdata_core::size::Valuation;
use sdata_core::Diagnostic;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticJson {
    pub rule: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub line: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub col: Option<u32>,
}

impl From<&Diagnostic> for DiagnosticJson {
    fn from(d: &Diagnostic) -> Self {
        DiagnosticJson {
            rule: d.rule.to_string(),
            message: d.message.clone(),
            line: d.span.map(|s| s.line),
            col: d.span.map(|s| s.col),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckJson {
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<String>,
    pub diagnostics: Vec<DiagnosticJson>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleStepJson {
    pub actor: String,
    pub event: String,
    pub multiplicity: String,
}

impl From<&ScheduleStep> for ScheduleStepJson {
    fn from(s: &ScheduleStep) -> Self {
        ScheduleStepJson { actor: s.actor.clone(), event: s.event.clone(), multiplicity: s.multiplicity.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelJson {
    /// `tau`, `send` or `recv`.
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<u64>,
}

impl From<&Label> for LabelJson {
    fn from(l: &Label) -> Self {
        match l {
            Label::Internal => LabelJson { kind: "tau".into(), channel: None, index: None },
            Label::Comm(ev) => LabelJson {
                kind: match ev.dir {
                    Dir::Send => "send".into(),
                    Dir::Recv => "recv".into(),
                },
                channel: Some(ev.chan.to_string()),
                index: ev.index.as_ref().and_then(|i| i.as_num()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TraceStepJson {
    pub step: usize,
    pub actor: usize,
    pub label: LabelJson,
    pub buffer_sizes: BTreeMap<String, usize>,
}

impl From<&TraceStep> for TraceStepJson {
    fn from(t: &TraceStep) -> Self {
        TraceStepJson {
            step: t.step,
            actor: t.actor,
            label: (&t.label).into(),
            buffer_sizes: t.buffers.iter().map(|(n, len, _)| (n.clone(), *len)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationJson {
    pub step: usize,
    pub clause: String,
    pub expected: String,
    pub actual: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportJson {
    pub network: String,
    pub sizes: BTreeMap<String, u64>,
    pub scheduler: String,
    pub steps: usize,
    pub outcome: String,
    pub violations: Vec<ViolationJson>,
}

pub fn sizes_json(v: &Valuation) -> BTreeMap<String, u64> {
    v.iter().map(|(k, n)| (k.to_string(), *n)).collect()
}

impl ReportJson {
    pub fn new(network: &str, r: &PreservationReport) -> Self {
        ReportJson {
            network: network.to_string(),
            sizes: sizes_json(&r.sizes),
            scheduler: r.scheduler.clone(),
            steps: r.steps,
            outcome: r.outcome.clone(),
            violations: r
                .violations
                .iter()
                .map(|v| ViolationJson {
                    step: v.step,
                    clause: v.clause.clone(),
                    expected: v.expected.clone(),
                    actual: v.actual.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProgressJson {
    pub network: String,
    pub sizes: BTreeMap<String, u64>,
    pub states: usize,
    pub final_states: usize,
    pub stuck: usize,
    pub errors: Vec<String>,
    pub capacity_ok: bool,
    pub truncated: bool,
    pub holds: bool,
}

impl ProgressJson {
    pub fn new(network: &str, r: &ProgressReport) -> Self {
        ProgressJson {
            network: network.to_string(),
            sizes: sizes_json(&r.sizes),
            states: r.states,
            final_states: r.finals,
            stuck: r.stuck.len(),
            errors: r.errors.clone(),
            capacity_ok: r.capacity_ok,
            truncated: r.truncated,
            holds: r.holds(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sdata_core::ast::Event;
    use sdata_core::SizeExpr;

    #[test]
    fn label_shape() {
        let l = Label::Comm(Event::recv("w").at(SizeExpr::Num(3)));
        let v = serde_json::to_value(TraceStepJson {
            step: 0,
            actor: 1,
            label: (&l).into(),
            buffer_sizes: BTreeMap::from([("w[3]".to_string(), 0)]),
        })
        .unwrap();
        assert_eq!(
            v,
            serde_json::json!({"step": 0, "actor": 1, "label": {"kind": "recv", "channel": "w", "index": 3}, "bufferSizes": {"w[3]": 0}})
        );
    }
}
