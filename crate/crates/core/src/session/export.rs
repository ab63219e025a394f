use std::path::Path;

use super::metrics::{node_metrics, session_metrics};
use super::types::TestTree;
use super::SessionError;

/// CSV tables for downstream analysis, keyed by file name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalysisBundle {
    pub node_apr: String,
    pub input_pass_rates: String,
    pub prompt_lengths: String,
    pub bug_curve: String,
}

impl AnalysisBundle {
    pub fn files(&self) -> [(&'static str, &str); 4] {
        [
            ("node_apr.csv", &self.node_apr),
            ("input_pass_rates.csv", &self.input_pass_rates),
            ("prompt_lengths.csv", &self.prompt_lengths),
            ("bug_curve.csv", &self.bug_curve),
        ]
    }
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows cover built nodes only, in breadth-first order.
pub fn export_analysis(tree: &TestTree) -> AnalysisBundle {
    let rho_bug = tree.config.rho_bug;
    let built: Vec<_> = tree
        .bfs_order
        .iter()
        .filter_map(|id| tree.nodes.get(id))
        .filter(|n| !n.prompts.is_empty())
        .collect();

    let mut apr_rows = Vec::new();
    let mut input_rows = Vec::new();
    let mut length_rows = Vec::new();
    for node in &built {
        let m = node_metrics(node, rho_bug);
        apr_rows.push(vec![
            node.id.to_string(),
            node.id.level().to_string(),
            node.topic.clone(),
            serde_json::to_value(node.status).expect("status").as_str().unwrap_or_default().to_string(),
            m.passes.to_string(),
            m.labeled.to_string(),
            opt(m.apr),
            opt(m.afr),
            m.bugs.len().to_string(),
        ]);
        for i in &m.inputs {
            input_rows.push(vec![
                node.id.to_string(),
                i.prompt_id.clone(),
                i.text.clone(),
                i.passes.to_string(),
                i.labeled.to_string(),
                opt(i.pass_rate),
                i.is_bug.to_string(),
            ]);
            let outcome = if i.labeled < i.total {
                "pending"
            } else if i.is_bug {
                "fail"
            } else {
                "pass"
            };
            length_rows.push(vec![
                node.id.level().to_string(),
                i.prompt_id.clone(),
                i.text.split_whitespace().count().to_string(),
                outcome.to_string(),
            ]);
        }
    }
    let built_ids: Vec<_> = built.iter().map(|n| n.id).collect();
    let curve_rows = session_metrics(tree)
        .curve
        .into_iter()
        .filter(|p| built_ids.contains(&p.node))
        .map(|p| {
            vec![
                p.index.to_string(),
                p.node.to_string(),
                p.bugs.to_string(),
                p.cumulative_bugs.to_string(),
            ]
        })
        .collect();
    AnalysisBundle {
        node_apr: table(
            &["node", "level", "topic", "status", "passes", "labeled", "apr", "afr", "bugs"],
            apr_rows,
        ),
        input_pass_rates: table(
            &["node", "prompt_id", "prompt", "passes", "labeled", "pass_rate", "is_bug"],
            input_rows,
        ),
        prompt_lengths: table(&["level", "prompt_id", "words", "verdict"], length_rows),
        bug_curve: table(&["index", "node", "bugs", "cumulative_bugs"], curve_rows),
    }
}

pub fn write_analysis(tree: &TestTree, dir: &Path) -> Result<Vec<std::path::PathBuf>, SessionError> {
    std::fs::create_dir_all(dir).map_err(|e| SessionError::Io(e.to_string()))?;
    let bundle = export_analysis(tree);
    let mut written = Vec::new();
    for (name, body) in bundle.files() {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| SessionError::Io(e.to_string()))?;
        written.push(path);
    }
    Ok(written)
}
