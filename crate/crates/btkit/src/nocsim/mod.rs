//! Cycle-level 2D-mesh wormhole NoC simulator: X-Y routing, virtual
//! channels with credit-based backpressure, memory-controller traffic
//! sources, DNN-layer-to-traffic mapping, and per-link bit-transition
//! accounting.

mod engine;
mod mesh;
mod traffic;

pub use engine::{simulate, simulate_workload, LinkReport, SimConfig, SimOutcome, SimReport, TraversalLog};
pub use mesh::{build_mesh, default_mc_positions, xy_next_hop, xy_route, Coord, Dir, LinkInfo, MeshConfig, MeshModel, Routing};
pub use traffic::{map_layer_traffic, values_per_flit, LayerTraffic, Packet, SimFlit};

pub use crate::bits::record_link_traversal;
