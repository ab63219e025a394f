use serde::{Deserialize, Serialize};

use super::types::{Label, NodeId, TestNode, TestRecord, TestTree};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputStats {
    pub prompt_id: String,
    pub text: String,
    pub passes: usize,
    pub labeled: usize,
    pub total: usize,
    pub pass_rate: Option<f64>,
    pub is_bug: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub passes: usize,
    pub labeled: usize,
    pub apr: Option<f64>,
    pub afr: Option<f64>,
    pub inputs: Vec<InputStats>,
    pub bugs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub index: usize,
    pub node: NodeId,
    pub bugs: usize,
    pub cumulative_bugs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub passes: usize,
    pub labeled: usize,
    pub apr: Option<f64>,
    pub afr: Option<f64>,
    pub bugs: usize,
    pub curve: Vec<CurvePoint>,
}

fn rates(passes: usize, labeled: usize) -> (Option<f64>, Option<f64>) {
    if labeled == 0 {
        return (None, None);
    }
    let apr = passes as f64 / labeled as f64;
    (Some(apr), Some(1.0 - apr))
}

fn tally<'a>(records: impl IntoIterator<Item = &'a TestRecord>) -> (usize, usize, usize) {
    let (mut passes, mut labeled, mut total) = (0, 0, 0);
    for r in records {
        total += 1;
        match r.label {
            Label::Pass => {
                passes += 1;
                labeled += 1;
            }
            Label::Fail => labeled += 1,
            Label::Pending => {}
        }
    }
    (passes, labeled, total)
}

/// Metrics over the node's main records only; probe records never count.
/// An input is a bug once all of its images are labeled and its pass rate is
/// below `rho_bug`.
pub fn node_metrics(node: &TestNode, rho_bug: f64) -> NodeMetrics {
    let (passes, labeled, _) = tally(&node.records);
    let (apr, afr) = rates(passes, labeled);
    let inputs: Vec<InputStats> = node
        .prompts
        .iter()
        .map(|p| {
            let (passes, labeled, total) = tally(node.records.iter().filter(|r| r.prompt_id == p.id));
            let pass_rate = (labeled > 0).then(|| passes as f64 / labeled as f64);
            let complete = total > 0 && labeled == total;
            InputStats {
                prompt_id: p.id.clone(),
                text: p.text.clone(),
                passes,
                labeled,
                total,
                pass_rate,
                is_bug: complete && pass_rate.is_some_and(|r| r < rho_bug),
            }
        })
        .collect();
    let bugs = inputs.iter().filter(|i| i.is_bug).map(|i| i.prompt_id.clone()).collect();
    NodeMetrics {
        node: node.id,
        passes,
        labeled,
        apr,
        afr,
        inputs,
        bugs,
    }
}

pub fn session_metrics(tree: &TestTree) -> SessionMetrics {
    let rho_bug = tree.config.rho_bug;
    let (mut passes, mut labeled, mut bugs) = (0, 0, 0);
    let mut curve = Vec::with_capacity(tree.bfs_order.len());
    for (index, id) in tree.bfs_order.iter().enumerate() {
        let Some(node) = tree.nodes.get(id) else { continue };
        let m = node_metrics(node, rho_bug);
        passes += m.passes;
        labeled += m.labeled;
        bugs += m.bugs.len();
        curve.push(CurvePoint {
            index,
            node: *id,
            bugs: m.bugs.len(),
            cumulative_bugs: bugs,
        });
    }
    let (apr, afr) = rates(passes, labeled);
    SessionMetrics {
        passes,
        labeled,
        apr,
        afr,
        bugs,
        curve,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorClass {
    Green,
    LightOrange,
    DarkOrange,
}

/// Node color by pass rate: green from 0.6 up, light orange from 0.3, dark
/// orange below.
pub fn color_class(apr: f64) -> ColorClass {
    if apr >= 0.6 {
        ColorClass::Green
    } else if apr >= 0.3 {
        ColorClass::LightOrange
    } else {
        ColorClass::DarkOrange
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_thresholds() {
        let got: Vec<_> = [0.61, 0.60, 0.45, 0.30, 0.29].into_iter().map(color_class).collect();
        assert_eq!(
            got,
            vec![
                ColorClass::Green,
                ColorClass::Green,
                ColorClass::LightOrange,
                ColorClass::LightOrange,
                ColorClass::DarkOrange,
            ]
        );
    }

    #[test]
    fn rates_sum_to_one() {
        for labeled in 1..200usize {
            for passes in 0..=labeled {
                let (apr, afr) = rates(passes, labeled);
                assert_eq!(apr.unwrap() + afr.unwrap(), 1.0);
            }
        }
    }
}
