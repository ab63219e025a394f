//! Seeded adaptive-vs-static comparison on the simulated model.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, MockBackend, MockFixtures};
use crate::generation::{FaultSpec, ModelConfig};
use crate::session::{
    export_analysis, Command, CurvePoint, LabelInput, NodeId, NodeStatus, ProbeLabeler, Services, Session,
    SessionConfig, SessionError, VerdictInput,
};

pub const BUNDLED_ROOT_TOPIC: &str = "garments";
pub const BUNDLED_BUDGET: usize = 65;
pub const BUNDLED_SEED: u64 = 1;
const BUNDLED_FAULT_SPEC: &str = include_str!("../fixtures/scenario/fault_spec.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("mock fixtures have no response for {key}")]
    FixtureGap { key: String, topic: Option<String> },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Session(SessionError),
}

impl From<SessionError> for SimError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Gateway(GatewayError::FixtureGap { key, topic, .. }) => SimError::FixtureGap { key, topic },
            other => SimError::Session(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Adaptive,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub root_topic: String,
    pub fault_spec: FaultSpec,
    /// Mock fixture table; the bundled one when unset.
    #[serde(default)]
    pub fixtures: Option<MockFixtures>,
    /// Total number of main prompts.
    pub budget: usize,
    pub seed: u64,
    pub mode: SimMode,
    /// Probability that the simulated evaluator flips a hidden bit.
    #[serde(default)]
    pub evaluator_noise: f64,
    /// Tree parameters for adaptive mode.
    #[serde(default)]
    pub config: SessionConfig,
}

impl SimScenario {
    pub fn bundled(mode: SimMode) -> Self {
        SimScenario {
            root_topic: BUNDLED_ROOT_TOPIC.into(),
            fault_spec: FaultSpec::from_json(BUNDLED_FAULT_SPEC).expect("bundled fault spec parses"),
            fixtures: None,
            budget: BUNDLED_BUDGET,
            seed: BUNDLED_SEED,
            mode,
            evaluator_noise: 0.0,
            config: SessionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mode: SimMode,
    pub bugs: usize,
    pub apr: Option<f64>,
    pub afr: Option<f64>,
    pub main_prompts: usize,
    pub probe_prompts: usize,
    pub curve: Vec<CurvePoint>,
    /// `index,node,bugs,cumulative_bugs` table.
    pub curve_csv: String,
    pub session_json: String,
}

/// Runs a scenario with the simulated evaluator labeling every image.
pub fn run_scenario(scenario: &SimScenario) -> Result<SimResult, SimError> {
    if !(0.0..=1.0).contains(&scenario.evaluator_noise) {
        return Err(SimError::InvalidScenario("evaluator_noise must be in [0, 1]".into()));
    }
    let mut config = scenario.config.clone();
    config.seed = scenario.seed;
    config.model = ModelConfig::Simulated {
        fault_spec: scenario.fault_spec.clone(),
    };
    if config.n_i == 0 || scenario.budget < config.n_i {
        return Err(SimError::InvalidScenario(format!(
            "budget {} must be at least n_i = {}",
            scenario.budget, config.n_i
        )));
    }
    match scenario.mode {
        SimMode::Static => {
            // one batch of `budget` prompts straight from the root topic
            config.n_i = scenario.budget;
            config.d_max = 1;
        }
        SimMode::Adaptive => {
            if !scenario.budget.is_multiple_of(config.n_i) {
                return Err(SimError::InvalidScenario(format!(
                    "budget {} is not a multiple of n_i = {}",
                    scenario.budget, config.n_i
                )));
            }
        }
    }
    config.gateway.mock_sampling_seed = scenario.seed;
    config.validate()?;
    let mut services = Services::from_config(&config)?;
    if let Some(fixtures) = &scenario.fixtures {
        // inline fixtures are not part of the config, so such sessions replay only with the same table
        let backend = MockBackend::with_sampling_seed(fixtures.clone(), scenario.seed);
        let gateway = Gateway::new(Arc::new(backend), config.gateway.clone()).map_err(SessionError::from)?;
        services.gateway = Arc::new(gateway);
    }
    let mut session = Session::with_services(&scenario.root_topic, config, services)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5eed);
    let nodes_needed = scenario.budget / session.config().n_i;

    let mut built = 0;
    let mut i = 0;
    while built < nodes_needed {
        let Some(&id) = session.tree.bfs_order.get(i) else {
            return Err(SimError::InvalidScenario(format!(
                "tree ran out of nodes after {built} of {nodes_needed}; raise d_max or n_t"
            )));
        };
        session.apply(Command::Build { node: id })?;
        label(&mut session, id, scenario.evaluator_noise, &mut noise_rng)?;
        built += 1;
        let decision = session.decide_next(id)?;
        if scenario.mode == SimMode::Adaptive {
            if decision.reflect {
                session.apply(Command::Reflect {
                    node: id,
                    labeler: ProbeLabeler::Simulated,
                })?;
            }
            if decision.expand && built < nodes_needed {
                session.apply(Command::Expand {
                    node: id,
                    topics: None,
                    order: None,
                })?;
            }
        }
        i += 1;
    }

    let metrics = session.metrics();
    let main_prompts = session.tree.nodes.values().map(|n| n.prompts.len()).sum();
    let probe_prompts = session.tree.nodes.values().map(|n| n.probes.len()).sum();
    Ok(SimResult {
        mode: scenario.mode,
        bugs: metrics.bugs,
        apr: metrics.apr,
        afr: metrics.afr,
        main_prompts,
        probe_prompts,
        curve: metrics
            .curve
            .into_iter()
            .filter(|p| session.tree.nodes[&p.node].status != NodeStatus::Draft)
            .collect(),
        curve_csv: export_analysis(&session.tree).bug_curve,
        session_json: session.to_json(),
    })
}

fn label(session: &mut Session, id: NodeId, noise: f64, rng: &mut ChaCha8Rng) -> Result<(), SimError> {
    if noise == 0.0 {
        session.apply(Command::AutoLabel { node: id })?;
        return Ok(());
    }
    let mut verdicts = BTreeMap::new();
    for r in &session.tree.node(id)?.records {
        let hidden = r.image.hidden_pass.unwrap_or(true);
        let flip = rng.gen::<f64>() < noise;
        let v = if hidden != flip { VerdictInput::Pass } else { VerdictInput::Fail };
        verdicts.insert(r.id.clone(), LabelInput::Plain(v));
    }
    session.apply(Command::SubmitVerdicts { node: id, verdicts })?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BugRatio {
    Finite(f64),
    /// Static found no bugs while adaptive found some.
    Infinite,
}

impl BugRatio {
    pub fn at_least(self, floor: f64) -> bool {
        match self {
            BugRatio::Finite(r) => r >= floor,
            BugRatio::Infinite => true,
        }
    }
}

impl std::fmt::Display for BugRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BugRatio::Finite(r) => write!(f, "{r}"),
            BugRatio::Infinite => f.write_str("inf"),
        }
    }
}

impl Serialize for BugRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BugRatio::Finite(r) => s.serialize_f64(*r),
            BugRatio::Infinite => s.serialize_str("inf"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub adaptive_bugs: usize,
    pub static_bugs: usize,
    pub ratio: BugRatio,
    /// Adaptive APR minus static APR.
    pub apr_gap: Option<f64>,
    pub adaptive_main_prompts: usize,
    pub static_main_prompts: usize,
    pub adaptive_probe_prompts: usize,
    pub per_node: Vec<CurvePoint>,
}

pub fn compare(adaptive: &SimResult, static_run: &SimResult) -> Comparison {
    let ratio = match (adaptive.bugs, static_run.bugs) {
        (0, 0) => BugRatio::Finite(1.0),
        (_, 0) => BugRatio::Infinite,
        (a, s) => BugRatio::Finite(a as f64 / s as f64),
    };
    Comparison {
        adaptive_bugs: adaptive.bugs,
        static_bugs: static_run.bugs,
        ratio,
        apr_gap: adaptive.apr.zip(static_run.apr).map(|(a, s)| a - s),
        adaptive_main_prompts: adaptive.main_prompts,
        static_main_prompts: static_run.main_prompts,
        adaptive_probe_prompts: adaptive.probe_prompts,
        per_node: adaptive.curve.clone(),
    }
}
