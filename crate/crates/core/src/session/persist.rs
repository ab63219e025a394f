use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Command, Services, Session, SessionError, TestTree};

pub const SESSION_FILE_VERSION: u32 = 1;

/// On-disk session: the tree plus the command log that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub version: u32,
    #[serde(flatten)]
    pub tree: TestTree,
    #[serde(default)]
    pub log: Vec<Command>,
}

impl Session {
    pub fn to_json(&self) -> String {
        let file = SessionFile {
            version: SESSION_FILE_VERSION,
            tree: self.tree.clone(),
            log: self.log.clone(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("session serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|e| SessionError::Io(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| SessionError::Io(e.to_string()))
    }

    pub fn parse_file(text: &str) -> Result<SessionFile, SessionError> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SessionError::CorruptFile(e.to_string()))?;
        let version = value
            .get("version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| SessionError::CorruptFile("missing version".into()))?;
        if version != u64::from(SESSION_FILE_VERSION) {
            return Err(SessionError::VersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: SESSION_FILE_VERSION,
            });
        }
        let file: SessionFile = serde_json::from_value(value).map_err(|e| SessionError::CorruptFile(e.to_string()))?;
        file.tree
            .config
            .validate()
            .map_err(|e| SessionError::CorruptFile(e.to_string()))?;
        if file.tree.compute_bfs_order() != file.tree.bfs_order {
            return Err(SessionError::CorruptFile("bfs_order does not match the tree".into()));
        }
        Ok(file)
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let file = Self::parse_file(text)?;
        let services = Services::from_config(&file.tree.config)?;
        Ok(Session::from_parts(file.tree, file.log, services))
    }

    pub fn from_json_with(text: &str, services: Services) -> Result<Self, SessionError> {
        let file = Self::parse_file(text)?;
        Ok(Session::from_parts(file.tree, file.log, services))
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::Io(e.to_string()))?;
        Self::from_json(&text)
    }
}
