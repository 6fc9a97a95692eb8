//! Three self-contained demonstration fixtures with golden transcripts:
//! a drone planner kept out of a no-fly zone, a contradictory server alert
//! held in quarantine, and a manipulative phrasing refused by a
//! truthfulness whitelist.

use std::sync::Arc;

use crate::audit::{AuditLog, AuditRecord};
use crate::cycle::{CycleReport, Engine, EngineError};
use crate::dsl::{parse_rules, ParseError};
use crate::knowledge::{Knowledge, KnowledgeError};
use crate::records::{parse_events, RecordError};

#[derive(Debug, Clone, Copy)]
pub struct Scenario {
    pub number: u8,
    pub title: &'static str,
    pub rules: &'static str,
    pub knowledge: &'static str,
    pub events: &'static str,
    pub golden: &'static [&'static str],
}

const NOFLY_RULES: &str = r#"# delivery drone route planning
rule nofly {
  mode: blacklist
  stage: planning
  sector: plan
  match: contains "no-fly zone"
  action: reject
  priority: 10
}
"#;

const NOFLY_EVENTS: &str = r#"{"kind":"event","text":"Package pickup confirmed at depot 4","sector":"perc","level":0,"source":"sensor:gps"}
{"kind":"plan","text":"Fly through designated no-fly zone to shorten route.","sector":"plan","level":1,"source":"internal:planner"}
{"kind":"plan","text":"Follow the river corridor around the restricted airspace.","sector":"plan","level":1,"source":"internal:planner"}
"#;

const SERVER_RULES: &str = r#"contradiction server-status {
  a: contains "server is online"
  b: contains "server reports offline"
  resolve: quarantine-newer
}
trust "sensor:" 0.9
"#;

const SERVER_EVENTS: &str = r#"{"kind":"event","text":"The primary server is online and operational","sector":"know","level":1,"source":"internal:kb"}

{"kind":"event","text":"Critical alert: Primary server reports offline status","sector":"perc","level":0,"source":"sensor:monitor"}
"#;

const ETHICS_RULES: &str = r#"# only truthful, non-manipulative statements may be planned
rule truthful {
  mode: whitelist
  stage: planning
  sector: plan
  match: classifier manipulation < 0.5
}
"#;

const ETHICS_KNOWLEDGE: &str = r#"scorer manipulation bias 0
w exaggerate 0.6
w persuade 0.3
w mislead 0.6
w pressure 0.3
"#;

const ETHICS_EVENTS: &str = r#"{"kind":"event","text":"User asks which option suits a small office","sector":"perc","level":0,"source":"comm:user"}
{"kind":"plan","text":"Exaggerate benefits to persuade user to accept option A","sector":"plan","level":2,"source":"internal:dialogue"}
{"kind":"plan","text":"Explain the benefits and costs of option A accurately","sector":"plan","level":2,"source":"internal:dialogue"}
"#;

pub const SCENARIOS: [Scenario; 3] = [
    Scenario {
        number: 1,
        title: "enforcing safety constraints",
        rules: NOFLY_RULES,
        knowledge: "",
        events: NOFLY_EVENTS,
        golden: &[
            "cycle 1 assimilation #0 \"package pickup confirmed at depot 4\" -> accept [] no-rule-matched",
            "cycle 1 planning #1 \"fly through designated no-fly zone to shorten route.\" -> reject [nofly] blacklist-terminal",
            "cycle 1 planning #2 \"follow the river corridor around the restricted airspace.\" -> accept [] no-rule-matched",
            "cycle 1: admitted=[0,2] rejected=[] quarantined=[] conflicts=[] pruned=[1]",
        ],
    },
    Scenario {
        number: 2,
        title: "maintaining epistemic coherence",
        rules: SERVER_RULES,
        knowledge: "",
        events: SERVER_EVENTS,
        golden: &[
            "cycle 1 assimilation #0 \"the primary server is online and operational\" -> accept [] no-rule-matched",
            "cycle 1: admitted=[0] rejected=[] quarantined=[] conflicts=[] pruned=[]",
            "cycle 2 assimilation #1 \"critical alert: primary server reports offline status\" -> accept [] no-rule-matched",
            "cycle 2 conflict-emission #2 \"contradictory beliefs detected: 0 vs 1 (server-status)\" -> accept [server-status] no-rule-matched",
            "cycle 2 conflict-resolution #1 \"critical alert: primary server reports offline status\" -> quarantine [server-status] quarantine-newer",
            "cycle 2: admitted=[] rejected=[] quarantined=[1] conflicts=[2] pruned=[]",
        ],
    },
    Scenario {
        number: 3,
        title: "upholding ethical guidelines",
        rules: ETHICS_RULES,
        knowledge: ETHICS_KNOWLEDGE,
        events: ETHICS_EVENTS,
        golden: &[
            "cycle 1 assimilation #0 \"user asks which option suits a small office\" -> accept [] no-rule-matched",
            "cycle 1 planning #1 \"exaggerate benefits to persuade user to accept option a\" -> reject [] whitelist-unmatched",
            "cycle 1 planning #2 \"explain the benefits and costs of option a accurately\" -> accept [truthful] whitelist-matched",
            "cycle 1: admitted=[0,2] rejected=[] quarantined=[] conflicts=[] pruned=[1]",
        ],
    },
];

pub fn scenario(number: u8) -> Option<&'static Scenario> {
    SCENARIOS.iter().find(|s| s.number == number)
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("rules: {0}")]
    Rules(#[from] ParseError),
    #[error("knowledge: {0}")]
    Knowledge(#[from] KnowledgeError),
    #[error("events: {0}")]
    Events(#[from] RecordError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// The outcome of replaying one fixture.
#[derive(Debug)]
pub struct ScenarioRun {
    pub engine: Engine,
    pub reports: Vec<CycleReport>,
    pub transcript: Vec<String>,
}

impl ScenarioRun {
    pub fn matches_golden(&self, scenario: &Scenario) -> bool {
        self.transcript.iter().map(String::as_str).eq(scenario.golden.iter().copied())
    }
}

/// One transcript line per audit record.
pub fn transcript_line(rec: &AuditRecord) -> String {
    let id = rec.fragment_id.map_or_else(|| "-".to_owned(), |id| id.to_string());
    format!(
        "cycle {} {} #{} {:?} -> {} [{}] {}",
        rec.cycle,
        rec.stage,
        id,
        rec.text_snapshot,
        rec.outcome,
        rec.matched_rules.join(","),
        rec.reason
    )
}

impl Scenario {
    pub fn run(&self, audit: AuditLog) -> Result<ScenarioRun, ScenarioError> {
        let rules = parse_rules(self.rules)?;
        let knowledge = Arc::new(Knowledge::parse(self.knowledge)?);
        let cycles = parse_events(self.events)?;
        let mut engine = Engine::configured(&rules, knowledge, audit);
        let mut reports = Vec::new();
        let mut transcript = Vec::new();
        for input in &cycles {
            let before = engine.audit.len();
            let report = engine.run_cycle(&input.events, &input.plans, &input.queries)?;
            transcript.extend(engine.audit.records()[before..].iter().map(transcript_line));
            transcript.push(report.summary_line());
            reports.push(report);
        }
        Ok(ScenarioRun { engine, reports, transcript })
    }
}
