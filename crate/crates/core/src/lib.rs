pub mod api;
pub mod failure_location;
pub mod gateway;
pub mod generation;
pub mod render;
pub mod scene_graph;
pub mod session;
pub mod simulation;
#[doc(hidden)]
pub mod testkit;
pub mod verdict;

pub use scene_graph::{merge, parse_scene_graph, serialize_scene_graph, GraphNode, Relation, SceneGraph, SceneGraphError};
pub use verdict::Verdict;
