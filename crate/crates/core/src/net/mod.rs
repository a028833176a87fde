pub mod checkpoint;
pub mod config;
pub mod graph;
pub mod model;

pub use checkpoint::{Checkpoint, TrainProgress};
pub use config::NetConfig;
pub use graph::{node_graph, Edge, EdgeKind, NodeGraph, NodeId, NodeRole};
pub use model::{Downsample, ForwardOutput, InputEmbed, NestedNode, NodeTrace, Upsample, WiTUnet};
