//! Ego-graph construction, typed edge convolution and the per-segment local
//! graph that maps segment features back to shots.

mod edgeconv;
mod edges;
mod ego;
mod local;

pub use edgeconv::{EdgeConv, EdgeConvCache};
pub use edges::{knn_edges, semantic_edges, temporal_edges, temporal_edges_from, Edge, EdgeKind, Graph};
pub use ego::{build_ego_graph, EgoGcn, EgoGcnCache, EgoGraph, GcnLayer, SEGMENT_KNN};
pub use local::{local_edges, LocalCache, LocalGraph, LOCAL_KNN_COARSE, LOCAL_KNN_FINE};
