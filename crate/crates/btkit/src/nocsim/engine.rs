//! Cycle-level wormhole simulation: per cycle, route computation for new
//! heads, round-robin VC allocation, round-robin switch allocation with
//! credit-based backpressure, one flit per directed link, and per-link
//! toggle accounting against the link's previous pattern.
//!
//! Everything iterates in fixed index order with no RNG, so a run is a pure
//! function of its inputs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::bits::{FlitKind, LinkStatsCounter, Pattern};
use crate::dnn::{
    activation_trace, init_weights, neuron_pair_stream, random_input, ModelKind, ModelSpec,
    Precision, Tensor, WeightSource, Weights,
};
use crate::error::{BtError, Result};
use crate::nocsim::mesh::{build_mesh, Coord, Dir, MeshConfig, MeshModel};
use crate::nocsim::traffic::{map_layer_traffic, values_per_flit, LayerTraffic, Packet, SimFlit};
use crate::ordering::OrderingScheme;

const LOCAL: usize = 4;
const PORTS: usize = 5;

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub mesh: MeshConfig,
    pub model: ModelKind,
    pub precision: Precision,
    pub scheme: OrderingScheme,
    pub seed: u64,
    pub weight_source: WeightSource,
    pub cycle_cap: u64,
    /// PE service latency per pair block, cycles.
    pub service_latency: u64,
    /// Keep per-link traversal logs for offline replay verification.
    pub record_traversals: bool,
}

impl SimConfig {
    pub fn new(mesh: MeshConfig, model: ModelKind, precision: Precision, scheme: OrderingScheme, seed: u64) -> Self {
        Self {
            mesh,
            model,
            precision,
            scheme,
            seed,
            weight_source: WeightSource::RandomInit { seed },
            cycle_cap: 10_000_000,
            service_latency: 4,
            record_traversals: false,
        }
    }
}

/// Per-link totals in a finished run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkReport {
    pub src: Coord,
    pub dst: Coord,
    pub dir: Dir,
    pub toggles: u64,
    pub payload_toggles: u64,
    pub flits: u64,
}

/// Results of one run: per-link toggle/traffic detail plus totals and the
/// configuration echo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub cycles: u64,
    pub injected_flits: u64,
    pub ejected_flits: u64,
    /// Sum of per-link toggles, head flits included.
    pub total_toggles: u64,
    /// Toggle totals over a payload-flits-only wire sequence.
    pub total_payload_toggles: u64,
    pub total_link_flits: u64,
    pub links: Vec<LinkReport>,
}

impl SimReport {
    pub fn total_for(&self, payload_only: bool) -> u64 {
        if payload_only {
            self.total_payload_toggles
        } else {
            self.total_toggles
        }
    }
}

/// One logged traversal: the wire pattern and whether it carried payload.
pub type TraversalLog = Vec<(Pattern, bool)>;

/// A finished run plus optional per-link traversal logs (aligned with
/// `report.links`).
pub struct SimOutcome {
    pub report: SimReport,
    pub logs: Option<Vec<TraversalLog>>,
}

#[derive(Debug)]
struct InputVc {
    fifo: VecDeque<SimFlit>,
    route_port: Option<usize>,
    out_vc: Option<usize>,
}

#[derive(Debug)]
struct Router {
    /// [port][vc]; ports 0..4 are E/W/N/S inputs, 4 is the local port.
    in_vcs: Vec<Vec<InputVc>>,
    /// [out_port][vc] -> owning (in_port, in_vc) from head until tail.
    out_owner: Vec<Vec<Option<(usize, usize)>>>,
    /// [out_dir][vc] free slots in the downstream input VC.
    credits: Vec<Vec<u32>>,
    vc_rr: [usize; PORTS],
    sw_rr: [usize; PORTS],
}

impl Router {
    fn new(vc_count: usize, vc_depth: usize) -> Self {
        Self {
            in_vcs: (0..PORTS)
                .map(|_| {
                    (0..vc_count)
                        .map(|_| InputVc {
                            fifo: VecDeque::new(),
                            route_port: None,
                            out_vc: None,
                        })
                        .collect()
                })
                .collect(),
            out_owner: (0..PORTS).map(|_| vec![None; vc_count]).collect(),
            credits: (0..4).map(|_| vec![vc_depth as u32; vc_count]).collect(),
            vc_rr: [0; PORTS],
            sw_rr: [0; PORTS],
        }
    }
}

/// Packet injector feeding a router's local input port, one flit per cycle,
/// packets spread over the local VCs.
#[derive(Debug)]
struct Source {
    queue: VecDeque<Packet>,
    active: Vec<Option<(Packet, usize)>>,
    credits: Vec<u32>,
    rr: usize,
}

impl Source {
    fn new(vc_count: usize, vc_depth: usize) -> Self {
        Self {
            queue: VecDeque::new(),
            active: (0..vc_count).map(|_| None).collect(),
            credits: vec![vc_depth as u32; vc_count],
            rr: 0,
        }
    }

    fn idle(&self) -> bool {
        self.queue.is_empty() && self.active.iter().all(|a| a.is_none())
    }
}

/// PE sink/source: absorbs operand packets with a fixed service latency per
/// block, then emits its single result packet.
#[derive(Debug, Default)]
struct PeSink {
    expected: u32,
    received: u32,
    busy_until: u64,
    result: Option<Packet>,
    result_queued: bool,
}

struct Move {
    node: usize,
    in_port: usize,
    in_vc: usize,
    out_port: usize,
    out_vc: usize,
}

struct NetSim<'a> {
    mesh: &'a MeshModel,
    vc_count: usize,
    service_latency: u64,
    routers: Vec<Router>,
    sources: Vec<Source>,
    pes: Vec<PeSink>,
    link_all: Vec<LinkStatsCounter>,
    link_payload: Vec<LinkStatsCounter>,
    link_flits: Vec<u64>,
    logs: Option<Vec<TraversalLog>>,
    cycle: u64,
    injected: u64,
    ejected: u64,
}

impl<'a> NetSim<'a> {
    fn new(mesh: &'a MeshModel, record: bool, service_latency: u64) -> Self {
        let cfg = &mesh.config;
        let n = mesh.node_count();
        let width = cfg.link_width;
        Self {
            mesh,
            vc_count: cfg.vc_count,
            service_latency,
            routers: (0..n).map(|_| Router::new(cfg.vc_count, cfg.vc_depth)).collect(),
            sources: (0..n).map(|_| Source::new(cfg.vc_count, cfg.vc_depth)).collect(),
            pes: (0..n).map(|_| PeSink::default()).collect(),
            link_all: mesh.links.iter().map(|_| LinkStatsCounter::new(width)).collect(),
            link_payload: mesh.links.iter().map(|_| LinkStatsCounter::new(width)).collect(),
            link_flits: vec![0; mesh.links.len()],
            logs: record.then(|| mesh.links.iter().map(|_| Vec::new()).collect()),
            cycle: 0,
            injected: 0,
            ejected: 0,
        }
    }

    fn load_layer(&mut self, traffic: LayerTraffic) {
        for (mc_idx, queue) in traffic.mc_queues.into_iter().enumerate() {
            let node = self.mesh.mc_nodes[mc_idx];
            self.sources[node].queue.extend(queue);
        }
        for (pe_idx, &node) in self.mesh.pe_nodes.iter().enumerate() {
            self.pes[node] = PeSink {
                expected: traffic.pe_expected[pe_idx],
                received: 0,
                busy_until: self.cycle,
                result: traffic.pe_results[pe_idx].clone(),
                result_queued: false,
            };
        }
    }

    /// Round-robin pick: the candidate whose flat index follows `ptr` most
    /// closely (wrapping).
    fn rr_pick(candidates: &[(usize, usize)], ptr: usize, vc_count: usize) -> usize {
        let span = PORTS * vc_count;
        let mut best = 0;
        let mut best_key = usize::MAX;
        for (i, &(p, v)) in candidates.iter().enumerate() {
            let flat = p * vc_count + v;
            let key = (flat + span - ptr) % span;
            if key < best_key {
                best_key = key;
                best = i;
            }
        }
        best
    }

    fn step(&mut self) -> Result<()> {
        let n = self.mesh.node_count();
        let vcs = self.vc_count;

        // Route computation for heads newly at the front of their VC.
        for node in 0..n {
            let at = self.mesh.coord_of(node);
            for port in 0..PORTS {
                for vc in 0..vcs {
                    let ivc = &mut self.routers[node].in_vcs[port][vc];
                    if ivc.route_port.is_none() {
                        if let Some(front) = ivc.fifo.front() {
                            if matches!(front.kind, FlitKind::Head | FlitKind::HeadTail) {
                                ivc.route_port = Some(
                                    crate::nocsim::mesh::xy_next_hop(at, front.dst)
                                        .map_or(LOCAL, |d| d.index()),
                                );
                            }
                        }
                    }
                }
            }
        }

        // VC allocation: heads claim a free downstream VC on their output.
        for node in 0..n {
            for out_port in 0..PORTS {
                let mut requests: Vec<(usize, usize)> = Vec::new();
                for port in 0..PORTS {
                    for vc in 0..vcs {
                        let ivc = &self.routers[node].in_vcs[port][vc];
                        if ivc.route_port == Some(out_port) && ivc.out_vc.is_none() {
                            if let Some(front) = ivc.fifo.front() {
                                if matches!(front.kind, FlitKind::Head | FlitKind::HeadTail) {
                                    requests.push((port, vc));
                                }
                            }
                        }
                    }
                }
                if requests.is_empty() {
                    continue;
                }
                for out_vc in 0..vcs {
                    if self.routers[node].out_owner[out_port][out_vc].is_some() {
                        continue;
                    }
                    if requests.is_empty() {
                        break;
                    }
                    let ptr = self.routers[node].vc_rr[out_port];
                    let pick = Self::rr_pick(&requests, ptr, vcs);
                    let (in_port, in_vc) = requests.remove(pick);
                    let router = &mut self.routers[node];
                    router.out_owner[out_port][out_vc] = Some((in_port, in_vc));
                    router.in_vcs[in_port][in_vc].out_vc = Some(out_vc);
                    router.vc_rr[out_port] = (in_port * vcs + in_vc + 1) % (PORTS * vcs);
                }
            }
        }

        // Switch allocation: one winner per output port, at most one grant
        // per input port, credits permitting.
        let mut moves: Vec<Move> = Vec::new();
        for node in 0..n {
            let mut used_in = [false; PORTS];
            for out_port in 0..PORTS {
                let mut candidates: Vec<(usize, usize)> = Vec::new();
                for port in 0..PORTS {
                    if used_in[port] {
                        continue;
                    }
                    for vc in 0..vcs {
                        let ivc = &self.routers[node].in_vcs[port][vc];
                        if ivc.route_port != Some(out_port) || ivc.fifo.is_empty() {
                            continue;
                        }
                        let Some(out_vc) = ivc.out_vc else { continue };
                        if out_port < LOCAL
                            && self.routers[node].credits[out_port][out_vc] == 0
                        {
                            continue;
                        }
                        candidates.push((port, vc));
                    }
                }
                if candidates.is_empty() {
                    continue;
                }
                let ptr = self.routers[node].sw_rr[out_port];
                let pick = Self::rr_pick(&candidates, ptr, vcs);
                let (in_port, in_vc) = candidates[pick];
                let out_vc = self.routers[node].in_vcs[in_port][in_vc].out_vc.unwrap();
                used_in[in_port] = true;
                self.routers[node].sw_rr[out_port] = (in_port * vcs + in_vc + 1) % (PORTS * vcs);
                moves.push(Move {
                    node,
                    in_port,
                    in_vc,
                    out_port,
                    out_vc,
                });
            }
        }

        // Apply: pop, return upstream credit, count toggles, advance or eject.
        for mv in moves {
            let flit = {
                let ivc = &mut self.routers[mv.node].in_vcs[mv.in_port][mv.in_vc];
                let flit = ivc.fifo.pop_front().expect("winner has a flit");
                if matches!(flit.kind, FlitKind::Tail | FlitKind::HeadTail) {
                    ivc.route_port = None;
                    ivc.out_vc = None;
                    self.routers[mv.node].out_owner[mv.out_port][mv.out_vc] = None;
                }
                flit
            };
            if mv.in_port < LOCAL {
                let dir = Dir::ALL[mv.in_port];
                let upstream = self
                    .mesh
                    .neighbor(mv.node, dir)
                    .expect("non-local input port implies a neighbor");
                self.routers[upstream].credits[dir.opposite().index()][mv.in_vc] += 1;
            } else {
                self.sources[mv.node].credits[mv.in_vc] += 1;
            }
            if mv.out_port == LOCAL {
                self.eject(mv.node, &flit);
            } else {
                let dir = Dir::ALL[mv.out_port];
                let link = self
                    .mesh
                    .link_from(mv.node, dir)
                    .expect("switch only grants existing links");
                self.link_all[link].record_pattern(&flit.pattern)?;
                if flit.has_payload {
                    self.link_payload[link].record_pattern(&flit.pattern)?;
                }
                self.link_flits[link] += 1;
                if let Some(logs) = &mut self.logs {
                    logs[link].push((flit.pattern.clone(), flit.has_payload));
                }
                self.routers[mv.node].credits[mv.out_port][mv.out_vc] -= 1;
                let next = self.mesh.neighbor(mv.node, dir).unwrap();
                self.routers[next].in_vcs[dir.opposite().index()][mv.out_vc]
                    .fifo
                    .push_back(flit);
            }
        }

        // Injection: one flit per source per cycle; new packets claim a free
        // local VC round-robin.
        for node in 0..n {
            let src = &mut self.sources[node];
            if !src.queue.is_empty() {
                let start = src.rr;
                for k in 0..vcs {
                    let vc = (start + k) % vcs;
                    if src.active[vc].is_none() {
                        let packet = src.queue.pop_front().unwrap();
                        src.active[vc] = Some((packet, 0));
                        src.rr = (vc + 1) % vcs;
                        break;
                    }
                }
            }
            let start = src.rr;
            for k in 0..vcs {
                let vc = (start + k) % vcs;
                if src.credits[vc] == 0 {
                    continue;
                }
                let Some((packet, idx)) = &mut src.active[vc] else {
                    continue;
                };
                let flit = packet[*idx].clone();
                *idx += 1;
                let done = *idx == packet.len();
                if done {
                    src.active[vc] = None;
                }
                src.credits[vc] -= 1;
                self.routers[node].in_vcs[LOCAL][vc].fifo.push_back(flit);
                self.injected += 1;
                break;
            }
        }

        // PE completion: queue the result once every block is received and
        // the service window has elapsed.
        for &node in &self.mesh.pe_nodes {
            let pe = &mut self.pes[node];
            if pe.expected > 0
                && pe.received == pe.expected
                && !pe.result_queued
                && self.cycle >= pe.busy_until
            {
                if let Some(result) = pe.result.take() {
                    self.sources[node].queue.push_back(result);
                }
                pe.result_queued = true;
            }
        }

        self.cycle += 1;
        Ok(())
    }

    fn eject(&mut self, node: usize, flit: &SimFlit) {
        self.ejected += 1;
        if matches!(flit.kind, FlitKind::Tail | FlitKind::HeadTail) && !self.mesh.is_mc(node) {
            let pe = &mut self.pes[node];
            pe.received += 1;
            pe.busy_until = pe.busy_until.max(self.cycle) + self.service_latency;
        }
    }

    /// Drive one layer's traffic to completion (layer barrier).
    fn run_layer(&mut self, traffic: LayerTraffic, cycle_cap: u64) -> Result<()> {
        let scheduled = traffic.scheduled_flits();
        let target = self.ejected + scheduled;
        self.load_layer(traffic);
        let start = self.cycle;
        while self.ejected < target {
            if self.cycle - start > cycle_cap {
                return Err(BtError::CycleCapExceeded(cycle_cap));
            }
            self.step()?;
        }
        debug_assert!(self.drained());
        Ok(())
    }

    fn drained(&self) -> bool {
        self.sources.iter().all(|s| s.idle())
            && self.routers.iter().all(|r| {
                r.in_vcs
                    .iter()
                    .all(|port| port.iter().all(|vc| vc.fifo.is_empty()))
            })
    }
}

/// Run the configured model through the mesh, layer by layer, and return
/// per-link BT accounting.
pub fn simulate(config: &SimConfig) -> Result<SimOutcome> {
    let model = config.model.build(config.precision);
    let weights = init_weights(&model, &config.weight_source)?;
    let input = random_input(&model, config.seed);
    simulate_workload(config, &model, &weights, &input)
}

/// As [`simulate`], but with caller-supplied model, weights, and input.
pub fn simulate_workload(
    config: &SimConfig,
    model: &ModelSpec,
    weights: &Weights,
    input: &Tensor,
) -> Result<SimOutcome> {
    if model.precision != config.precision {
        return Err(BtError::InvalidMesh(
            "model precision differs from configured precision".into(),
        ));
    }
    values_per_flit(config.mesh.link_width, config.precision)?;
    let mesh = build_mesh(&config.mesh)?;
    if mesh.pe_nodes.is_empty() {
        return Err(BtError::NoPes);
    }
    let (acts, final_out) = activation_trace(model, weights, input)?;
    let mut sim = NetSim::new(&mesh, config.record_traversals, config.service_latency);
    for (i, layer) in model.layers.iter().enumerate() {
        let blocks = neuron_pair_stream(layer, model.precision, &acts[i], weights[i].as_ref())?;
        if blocks.is_empty() {
            continue;
        }
        let outputs = acts.get(i + 1).unwrap_or(&final_out);
        let traffic =
            map_layer_traffic(&mesh, config.scheme, i, &blocks, outputs, config.precision)?;
        sim.run_layer(traffic, config.cycle_cap)?;
    }

    assert_eq!(sim.injected, sim.ejected, "flit conservation violated");
    let links: Vec<LinkReport> = mesh
        .links
        .iter()
        .enumerate()
        .map(|(i, l)| LinkReport {
            src: l.src,
            dst: l.dst,
            dir: l.dir,
            toggles: sim.link_all[i].toggles(),
            payload_toggles: sim.link_payload[i].toggles(),
            flits: sim.link_flits[i],
        })
        .collect();
    let report = SimReport {
        config: config.clone(),
        cycles: sim.cycle,
        injected_flits: sim.injected,
        ejected_flits: sim.ejected,
        total_toggles: links.iter().map(|l| l.toggles).sum(),
        total_payload_toggles: links.iter().map(|l| l.payload_toggles).sum(),
        total_link_flits: links.iter().map(|l| l.flits).sum(),
        links,
    };
    Ok(SimOutcome {
        report,
        logs: sim.logs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::{BitWord, WordWidth};
    use crate::nocsim::mesh::xy_route;
    use crate::ordering::PairBlock;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config(scheme: OrderingScheme) -> SimConfig {
        let mesh = MeshConfig::new(4, 4, 2, 128).unwrap();
        let mut cfg = SimConfig::new(mesh, ModelKind::Lenet, Precision::Fixed8, scheme, 7);
        cfg.record_traversals = true;
        cfg
    }

    /// Hand-driven single-packet run over a 1x2 mesh.
    #[test]
    fn single_packet_bt_matches_offline_replay() {
        let mesh_cfg = MeshConfig {
            rows: 1,
            cols: 2,
            vc_count: 4,
            vc_depth: 4,
            link_width: 128,
            mc_positions: vec![Coord::new(0, 0)],
            routing: crate::nocsim::mesh::Routing::XY,
        };
        let mesh = build_mesh(&mesh_cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<(BitWord, BitWord)> = (0..8)
            .map(|_| {
                (
                    BitWord::new(WordWidth::W8, rng.gen_range(0..256)).unwrap(),
                    BitWord::new(WordWidth::W8, rng.gen_range(0..256)).unwrap(),
                )
            })
            .collect();
        let block = PairBlock::new(pairs, 0).unwrap();
        let outputs = Tensor::from_data(vec![1], vec![0.5]).unwrap();
        let traffic = map_layer_traffic(
            &mesh,
            OrderingScheme::O0Baseline,
            0,
            &[block],
            &outputs,
            Precision::Fixed8,
        )
        .unwrap();

        let mut sim = NetSim::new(&mesh, true, 4);
        sim.run_layer(traffic, 10_000).unwrap();
        assert_eq!(sim.injected, sim.ejected);
        // head + 1 payload flit eastbound, 1 result westbound
        let logs = sim.logs.as_ref().unwrap();
        let east = mesh.link_from(0, Dir::East).unwrap();
        let west = mesh.link_from(1, Dir::West).unwrap();
        assert_eq!(logs[east].len(), 2);
        assert_eq!(logs[west].len(), 1);
        // Offline replay with a naive per-bit loop reproduces the counters.
        for (link, log) in logs.iter().enumerate() {
            let mut prev = Pattern::zeros(128);
            let mut toggles = 0u64;
            for (p, _) in log {
                for (a, b) in prev.limbs().iter().zip(p.limbs()) {
                    let mut x = a ^ b;
                    while x != 0 {
                        toggles += (x & 1) as u64;
                        x >>= 1;
                    }
                }
                prev = p.clone();
            }
            assert_eq!(toggles, sim.link_all[link].toggles(), "link {link}");
        }
    }

    #[test]
    fn flits_follow_xy_links_only() {
        let cfg = tiny_config(OrderingScheme::O0Baseline);
        let out = simulate(&cfg).unwrap();
        // Every traversed link lies on some XY path between an MC and a PE
        // or back; with XY routing no link may carry traffic that an XY path
        // cannot produce. Spot check: links with traffic exist and totals
        // are consistent.
        let total: u64 = out.report.links.iter().map(|l| l.flits).sum();
        assert_eq!(total, out.report.total_link_flits);
        assert!(out.report.total_toggles >= out.report.total_payload_toggles);
        // Replays hold for every link.
        let logs = out.logs.as_ref().unwrap();
        for (i, link) in out.report.links.iter().enumerate() {
            assert_eq!(logs[i].len() as u64, link.flits);
        }
    }

    #[test]
    fn xy_route_and_next_hop_agree() {
        let cfg = MeshConfig::new(8, 8, 4, 128).unwrap();
        for (sx, sy, dx, dy) in [(0u16, 0u16, 7u16, 7u16), (3, 2, 3, 2), (5, 1, 0, 6)] {
            let src = Coord::new(sx, sy);
            let dst = Coord::new(dx, dy);
            let hops = xy_route(src, dst, &cfg).unwrap();
            let mut at = src;
            for hop in hops {
                let next = crate::nocsim::mesh::xy_next_hop(at, dst).unwrap();
                assert_eq!(next, hop);
                at = match hop {
                    Dir::East => Coord::new(at.x + 1, at.y),
                    Dir::West => Coord::new(at.x - 1, at.y),
                    Dir::North => Coord::new(at.x, at.y + 1),
                    Dir::South => Coord::new(at.x, at.y - 1),
                };
            }
            assert_eq!(at, dst);
            assert_eq!(crate::nocsim::mesh::xy_next_hop(at, dst), None);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = tiny_config(OrderingScheme::O1Affiliated);
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        let ja = serde_json::to_string(&a.report).unwrap();
        let jb = serde_json::to_string(&b.report).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn schemes_share_routes_but_not_toggles() {
        let o0 = simulate(&tiny_config(OrderingScheme::O0Baseline)).unwrap();
        let o1 = simulate(&tiny_config(OrderingScheme::O1Affiliated)).unwrap();
        assert_eq!(o0.report.injected_flits, o1.report.injected_flits);
        assert_eq!(o0.report.total_link_flits, o1.report.total_link_flits);
        for (a, b) in o0.report.links.iter().zip(&o1.report.links) {
            assert_eq!(a.flits, b.flits);
        }
        assert_ne!(o0.report.total_toggles, o1.report.total_toggles);
    }
}
