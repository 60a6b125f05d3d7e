//! Out-of-coverage sidelink positioning session.
//!
//! A client UE discovers anchor UEs, selects them, connects to the reference
//! anchor (which doubles as location server), is authorized, and the server
//! runs capability / assistance / measurement exchanges with the target
//! before computing and reporting the fix. Ranges come from round-trip
//! timing, so anchor and target clocks never need to agree.

use alloc::collections::BinaryHeap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{LosLabel, ToaMeasurement, SPEED_OF_LIGHT};
use crate::geom::Point3;
use crate::locate::{ippa, lls, nls_fixed_height, PositionEstimate, RangeObs, SolverParams};
use crate::scene::AnchorSpec;

/// Fixed-point scale for simulated timestamps: light-travel distance in
/// units of 2^-64 m.
const FIXED_SCALE: f64 = 18_446_744_073_709_551_616.0;

fn fixed(meters: f64) -> i128 {
    libm::round(meters * FIXED_SCALE) as i128
}

/// Round-trip range between two unsynchronized devices.
///
/// Both devices timestamp with their own clock; the responder reports its
/// turnaround time, which the initiator subtracts from the round trip.
pub fn rtt_range<R: Rng + ?Sized>(
    clock_offset_a: f64,
    clock_offset_b: f64,
    true_distance: f64,
    processing_delay: f64,
    noise_sigma_m: f64,
    rng: &mut R,
) -> f64 {
    let c = SPEED_OF_LIGHT;
    let flight = fixed(true_distance);
    let turnaround = fixed(processing_delay * c);
    let off_a = fixed(clock_offset_a * c);
    let off_b = fixed(clock_offset_b * c);
    // A sends at true time 0
    let a_tx = off_a;
    let b_rx = flight + off_b;
    let b_tx = b_rx + turnaround;
    let a_rx = flight + turnaround + flight + off_a;
    let round_trip = a_rx - a_tx;
    let reported = b_tx - b_rx;
    let one_way = (round_trip - reported) / 2;
    let range = one_way as f64 / FIXED_SCALE;
    if noise_sigma_m > 0.0 {
        range + Normal::new(0.0, noise_sigma_m).expect("positive sigma").sample(rng)
    } else {
        range
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlpRole {
    ClientUe,
    TargetUe,
    AnchorUe,
    ReferenceAnchorLmf,
}

impl SlpRole {
    pub fn label(&self) -> &'static str {
        match self {
            SlpRole::ClientUe => "client",
            SlpRole::TargetUe => "target",
            SlpRole::AnchorUe => "anchor",
            SlpRole::ReferenceAnchorLmf => "lmf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub role: SlpRole,
    pub id: String,
}

impl NodeId {
    pub fn new(role: SlpRole, id: impl Into<String>) -> Self {
        Self { role, id: id.into() }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.role.label(), self.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    Solicitation,
    DiscoveryResponse,
    AnchorSelection,
    Pc5Setup,
    LocationServiceRequest,
    AuthResult,
    AdditionalAnchors,
    SlppCapability,
    SlppAssistanceData,
    SlppMeasurementRequest,
    SlppMeasurementResponse,
    LocationReport,
}

impl MessageKind {
    pub fn label(&self) -> &'static str {
        match self {
            MessageKind::Solicitation => "Solicitation",
            MessageKind::DiscoveryResponse => "DiscoveryResponse",
            MessageKind::AnchorSelection => "AnchorSelection",
            MessageKind::Pc5Setup => "Pc5Setup",
            MessageKind::LocationServiceRequest => "LocationServiceRequest",
            MessageKind::AuthResult => "AuthResult",
            MessageKind::AdditionalAnchors => "AdditionalAnchors",
            MessageKind::SlppCapability => "SlppCapability",
            MessageKind::SlppAssistanceData => "SlppAssistanceData",
            MessageKind::SlppMeasurementRequest => "SlppMeasurementRequest",
            MessageKind::SlppMeasurementResponse => "SlppMeasurementResponse",
            MessageKind::LocationReport => "LocationReport",
        }
    }
}

/// Message kinds of a successful session in first-occurrence order. The
/// optional additional-anchor step is not part of it.
pub const CANONICAL_SEQUENCE: [MessageKind; 11] = [
    MessageKind::Solicitation,
    MessageKind::DiscoveryResponse,
    MessageKind::AnchorSelection,
    MessageKind::Pc5Setup,
    MessageKind::LocationServiceRequest,
    MessageKind::AuthResult,
    MessageKind::SlppCapability,
    MessageKind::SlppAssistanceData,
    MessageKind::SlppMeasurementRequest,
    MessageKind::SlppMeasurementResponse,
    MessageKind::LocationReport,
];

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Payload {
    Solicitation { target: String },
    DiscoveryResponse { anchor: String, position: [f64; 3] },
    AnchorSelection { anchors: Vec<String>, reference: String },
    Pc5Setup { client: String },
    LocationServiceRequest { target: String, responders: Vec<String> },
    AuthResult { granted: bool },
    AdditionalAnchors { anchors: Vec<String> },
    SlppCapability { methods: Vec<String> },
    SlppAssistanceData { anchors: Vec<(String, [f64; 3])> },
    SlppMeasurementRequest { anchors: Vec<String> },
    SlppMeasurementResponse { anchor: String, range: Option<f64>, sigma: f64 },
    LocationReport { position: [f64; 3], method: String, degraded: bool },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::Solicitation { .. } => MessageKind::Solicitation,
            Payload::DiscoveryResponse { .. } => MessageKind::DiscoveryResponse,
            Payload::AnchorSelection { .. } => MessageKind::AnchorSelection,
            Payload::Pc5Setup { .. } => MessageKind::Pc5Setup,
            Payload::LocationServiceRequest { .. } => MessageKind::LocationServiceRequest,
            Payload::AuthResult { .. } => MessageKind::AuthResult,
            Payload::AdditionalAnchors { .. } => MessageKind::AdditionalAnchors,
            Payload::SlppCapability { .. } => MessageKind::SlppCapability,
            Payload::SlppAssistanceData { .. } => MessageKind::SlppAssistanceData,
            Payload::SlppMeasurementRequest { .. } => MessageKind::SlppMeasurementRequest,
            Payload::SlppMeasurementResponse { .. } => MessageKind::SlppMeasurementResponse,
            Payload::LocationReport { .. } => MessageKind::LocationReport,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlpMessage {
    pub seq: u64,
    pub kind: MessageKind,
    pub from: NodeId,
    pub to: NodeId,
    pub payload: Payload,
}

/// A message produced by a state transition, before sequencing.
#[derive(Debug, Clone, PartialEq)]
pub struct Outgoing {
    pub to: NodeId,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Discovery,
    Selection,
    Setup,
    Authorized,
    Measuring,
    Computed,
    Reported,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{node} cannot accept {kind:?} in phase {phase:?}")]
pub struct ProtocolViolation {
    pub node: String,
    pub kind: MessageKind,
    pub phase: Phase,
}

/// What a node may ask of its surroundings while handling a message.
pub trait SessionContext {
    /// Whether the anchor detects the target during discovery.
    fn discovers(&mut self, anchor_id: &str) -> bool;
    /// Ranging to one anchor from the target; `None` when undetectable.
    fn measure(&mut self, anchor_id: &str) -> Option<(f64, f64)>;
    fn authorize(&mut self, client_id: &str) -> bool;
}

/// Per-node protocol state.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub node: NodeId,
    pub phase: Phase,
    pub collected_measurements: Vec<ToaMeasurement>,
    pub violations: Vec<ProtocolViolation>,
    /// Responses still expected by the location server.
    pub expected_responses: usize,
    pub degraded_allowed: bool,
    /// Client side: anchors that answered the solicitation, in arrival order.
    pub responders: Vec<String>,
    /// Server side: anchors taking part in ranging.
    pub selected: Vec<String>,
    known_positions: Vec<(String, [f64; 3])>,
    client: Option<NodeId>,
    target: Option<NodeId>,
}

impl SessionState {
    pub fn new(node: NodeId) -> Self {
        Self {
            node,
            phase: Phase::Discovery,
            collected_measurements: Vec::new(),
            violations: Vec::new(),
            expected_responses: 0,
            degraded_allowed: false,
            responders: Vec::new(),
            selected: Vec::new(),
            known_positions: Vec::new(),
            client: None,
            target: None,
        }
    }

    fn violation(&mut self, kind: MessageKind) -> ProtocolViolation {
        let v = ProtocolViolation { node: self.node.to_string(), kind, phase: self.phase };
        self.violations.push(v.clone());
        v
    }

    fn enter(&mut self, phase: Phase) {
        debug_assert!(phase >= self.phase);
        self.phase = phase;
    }

    /// Applies one incoming message. On a violation the state is unchanged
    /// apart from the recorded violation.
    pub fn advance(&mut self, msg: &SlpMessage, ctx: &mut dyn SessionContext) -> Result<Vec<Outgoing>, ProtocolViolation> {
        match self.node.role {
            SlpRole::ClientUe => self.advance_client(msg),
            SlpRole::TargetUe => self.advance_target(msg, ctx),
            SlpRole::AnchorUe | SlpRole::ReferenceAnchorLmf => self.advance_anchor(msg, ctx),
        }
    }

    fn advance_client(&mut self, msg: &SlpMessage) -> Result<Vec<Outgoing>, ProtocolViolation> {
        match (&msg.payload, self.phase) {
            (Payload::DiscoveryResponse { anchor, position }, Phase::Discovery) => {
                self.responders.push(anchor.clone());
                self.known_positions.push((anchor.clone(), *position));
                Ok(Vec::new())
            }
            (Payload::AuthResult { granted }, Phase::Setup) => {
                self.enter(if *granted { Phase::Authorized } else { Phase::Denied });
                Ok(Vec::new())
            }
            (Payload::LocationReport { .. }, Phase::Authorized) => {
                self.enter(Phase::Reported);
                Ok(Vec::new())
            }
            _ => Err(self.violation(msg.kind)),
        }
    }

    /// Client side end of discovery: select anchors and contact the server.
    /// `limit` caps the initial selection.
    pub fn close_discovery(&mut self, target: &str, limit: Option<usize>) -> Result<Vec<Outgoing>, ProtocolViolation> {
        if self.node.role != SlpRole::ClientUe || self.phase != Phase::Discovery {
            return Err(self.violation(MessageKind::AnchorSelection));
        }
        self.enter(Phase::Selection);
        if self.responders.is_empty() {
            return Ok(Vec::new());
        }
        let n = limit.unwrap_or(usize::MAX).clamp(1, self.responders.len());
        let chosen: Vec<String> = self.responders[..n].to_vec();
        let reference = chosen[0].clone();
        let lmf = NodeId::new(SlpRole::ReferenceAnchorLmf, reference.clone());
        let mut out: Vec<Outgoing> = chosen
            .iter()
            .map(|a| Outgoing {
                to: if *a == reference { lmf.clone() } else { NodeId::new(SlpRole::AnchorUe, a.clone()) },
                payload: Payload::AnchorSelection { anchors: chosen.clone(), reference: reference.clone() },
            })
            .collect();
        self.enter(Phase::Setup);
        out.push(Outgoing { to: lmf.clone(), payload: Payload::Pc5Setup { client: self.node.id.clone() } });
        out.push(Outgoing {
            to: lmf,
            payload: Payload::LocationServiceRequest { target: target.to_string(), responders: self.responders.clone() },
        });
        Ok(out)
    }

    fn advance_target(&mut self, msg: &SlpMessage, ctx: &mut dyn SessionContext) -> Result<Vec<Outgoing>, ProtocolViolation> {
        match (&msg.payload, self.phase) {
            (Payload::SlppCapability { .. }, Phase::Discovery) => {
                self.enter(Phase::Authorized);
                Ok(alloc::vec![Outgoing {
                    to: msg.from.clone(),
                    payload: Payload::SlppCapability { methods: alloc::vec!["rtt".to_string()] },
                }])
            }
            (Payload::SlppAssistanceData { anchors }, Phase::Authorized) => {
                self.known_positions = anchors.clone();
                Ok(Vec::new())
            }
            (Payload::SlppMeasurementRequest { anchors }, Phase::Authorized) => {
                self.enter(Phase::Measuring);
                Ok(anchors
                    .iter()
                    .map(|a| {
                        let m = ctx.measure(a);
                        Outgoing {
                            to: msg.from.clone(),
                            payload: Payload::SlppMeasurementResponse {
                                anchor: a.clone(),
                                range: m.map(|x| x.0),
                                sigma: m.map_or(0.0, |x| x.1),
                            },
                        }
                    })
                    .collect())
            }
            _ => Err(self.violation(msg.kind)),
        }
    }

    fn advance_anchor(&mut self, msg: &SlpMessage, ctx: &mut dyn SessionContext) -> Result<Vec<Outgoing>, ProtocolViolation> {
        match (&msg.payload, self.phase) {
            (Payload::Solicitation { .. }, Phase::Discovery) => {
                self.enter(Phase::Selection);
                if ctx.discovers(&self.node.id) {
                    let position = self
                        .known_positions
                        .iter()
                        .find(|(id, _)| *id == self.node.id)
                        .map_or([0.0; 3], |p| p.1);
                    Ok(alloc::vec![Outgoing {
                        to: msg.from.clone(),
                        payload: Payload::DiscoveryResponse { anchor: self.node.id.clone(), position },
                    }])
                } else {
                    Ok(Vec::new())
                }
            }
            (Payload::AnchorSelection { reference, .. }, Phase::Selection) => {
                if *reference == self.node.id {
                    self.node.role = SlpRole::ReferenceAnchorLmf;
                    if let Payload::AnchorSelection { anchors, .. } = &msg.payload {
                        self.selected = anchors.clone();
                    }
                }
                self.client = Some(msg.from.clone());
                self.enter(Phase::Setup);
                Ok(Vec::new())
            }
            (Payload::AdditionalAnchors { .. }, Phase::Selection) if self.node.role == SlpRole::AnchorUe => {
                self.enter(Phase::Setup);
                Ok(Vec::new())
            }
            (Payload::Pc5Setup { .. }, Phase::Setup) if self.node.role == SlpRole::ReferenceAnchorLmf => Ok(Vec::new()),
            (Payload::LocationServiceRequest { target, responders }, Phase::Setup)
                if self.node.role == SlpRole::ReferenceAnchorLmf =>
            {
                let client = msg.from.clone();
                self.client = Some(client.clone());
                self.target = Some(NodeId::new(SlpRole::TargetUe, target.clone()));
                if !ctx.authorize(&client.id) {
                    self.enter(Phase::Denied);
                    return Ok(alloc::vec![Outgoing { to: client, payload: Payload::AuthResult { granted: false } }]);
                }
                self.enter(Phase::Authorized);
                let mut out = alloc::vec![Outgoing { to: client, payload: Payload::AuthResult { granted: true } }];
                let missing = 4usize.saturating_sub(self.selected.len());
                let standby: Vec<String> = responders
                    .iter()
                    .filter(|r| !self.selected.contains(r))
                    .take(missing)
                    .cloned()
                    .collect();
                if !standby.is_empty() {
                    for a in &standby {
                        out.push(Outgoing {
                            to: NodeId::new(SlpRole::AnchorUe, a.clone()),
                            payload: Payload::AdditionalAnchors { anchors: standby.clone() },
                        });
                    }
                    self.selected.extend(standby);
                }
                out.push(Outgoing {
                    to: self.target.clone().expect("target set"),
                    payload: Payload::SlppCapability { methods: alloc::vec!["rtt".to_string()] },
                });
                Ok(out)
            }
            (Payload::SlppCapability { .. }, Phase::Authorized) if self.node.role == SlpRole::ReferenceAnchorLmf => {
                self.enter(Phase::Measuring);
                self.expected_responses = self.selected.len();
                let target = msg.from.clone();
                let assistance = self
                    .selected
                    .iter()
                    .map(|a| {
                        let p = self.known_positions.iter().find(|(id, _)| id == a).map_or([0.0; 3], |p| p.1);
                        (a.clone(), p)
                    })
                    .collect();
                Ok(alloc::vec![
                    Outgoing { to: target.clone(), payload: Payload::SlppAssistanceData { anchors: assistance } },
                    Outgoing { to: target, payload: Payload::SlppMeasurementRequest { anchors: self.selected.clone() } },
                ])
            }
            (Payload::SlppMeasurementResponse { anchor, range, sigma }, Phase::Measuring)
                if self.node.role == SlpRole::ReferenceAnchorLmf =>
            {
                if let Some(r) = range {
                    self.collected_measurements.push(ToaMeasurement::new(anchor.clone(), *r, *sigma));
                }
                self.expected_responses = self.expected_responses.saturating_sub(1);
                if self.expected_responses == 0 && (self.collected_measurements.len() >= 4 || self.degraded_allowed) {
                    self.enter(Phase::Computed);
                }
                Ok(Vec::new())
            }
            _ => Err(self.violation(msg.kind)),
        }
    }

    /// Server side: attach the computed fix and address the report.
    pub fn report(&mut self, estimate: &PositionEstimate, degraded: bool) -> Result<Outgoing, ProtocolViolation> {
        if self.node.role != SlpRole::ReferenceAnchorLmf || self.phase != Phase::Computed {
            return Err(self.violation(MessageKind::LocationReport));
        }
        self.enter(Phase::Reported);
        let p = estimate.position;
        Ok(Outgoing {
            to: self.client.clone().expect("client known after setup"),
            payload: Payload::LocationReport { position: [p.x, p.y, p.z], method: estimate.method_tag.clone(), degraded },
        })
    }

    pub(crate) fn set_known_positions(&mut self, positions: Vec<(String, [f64; 3])>) {
        self.known_positions = positions;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlpMethod {
    Lls,
    /// IPPA with every range treated as line of sight.
    Ippa,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlpTopology {
    pub client_id: String,
    pub target_id: String,
    pub target_position: Point3,
    pub target_clock_offset: f64,
    /// Anchor UEs; the first to answer discovery becomes the location server.
    pub anchors: Vec<AnchorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub seed: u64,
    pub latency_s: f64,
    pub discovery_window_s: f64,
    pub processing_delay_s: f64,
    pub noise_sigma_m: f64,
    pub authorized: bool,
    pub degraded_mode: bool,
    /// Cap on anchors chosen by the client; the server tops up to four.
    pub initial_selection: Option<usize>,
    pub floor_height: f64,
    pub method: SlpMethod,
    pub solver: SolverParams,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latency_s: 1e-3,
            discovery_window_s: 20e-3,
            processing_delay_s: 50e-6,
            noise_sigma_m: 0.0,
            authorized: true,
            degraded_mode: false,
            initial_selection: None,
            floor_height: 3.0,
            method: SlpMethod::Lls,
            solver: SolverParams::default(),
        }
    }
}

/// Propagation hook for a session: the path length the ranging signal
/// travels between an anchor and the target, `None` when undetectable.
pub trait SlpChannel {
    fn link_length(&mut self, anchor: &AnchorSpec, target: &Point3) -> Option<f64>;
}

/// Every link is detectable and travels the straight line.
#[derive(Debug, Clone, Copy, Default)]
pub struct LineOfSightChannel;

impl SlpChannel for LineOfSightChannel {
    fn link_length(&mut self, anchor: &AnchorSpec, target: &Point3) -> Option<f64> {
        Some((anchor.position - target).norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    AuthorizationDenied,
    NoDetectablePath,
    InsufficientAnchors,
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlpError {
    #[error("session failed: {reason:?}")]
    SessionFailed { reason: FailureReason, trace: Vec<SlpMessage> },
    #[error(transparent)]
    ProtocolViolation(#[from] ProtocolViolation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub trace: Vec<SlpMessage>,
    pub report: PositionEstimate,
    pub degraded: bool,
}

struct Ctx<'a, C: SlpChannel> {
    topology: &'a SlpTopology,
    channel: &'a mut C,
    config: &'a SessionConfig,
    rng: ChaCha8Rng,
}

impl<C: SlpChannel> SessionContext for Ctx<'_, C> {
    fn discovers(&mut self, anchor_id: &str) -> bool {
        let Some(a) = self.topology.anchors.iter().find(|a| a.id == anchor_id) else {
            return false;
        };
        self.channel.link_length(a, &self.topology.target_position).is_some()
    }

    fn measure(&mut self, anchor_id: &str) -> Option<(f64, f64)> {
        let a = self.topology.anchors.iter().find(|a| a.id == anchor_id)?;
        let length = self.channel.link_length(a, &self.topology.target_position)?;
        let r = rtt_range(
            self.topology.target_clock_offset,
            a.clock_offset,
            length,
            self.config.processing_delay_s,
            self.config.noise_sigma_m,
            &mut self.rng,
        );
        Some((r, self.config.noise_sigma_m))
    }

    fn authorize(&mut self, _client_id: &str) -> bool {
        self.config.authorized
    }
}

enum Event {
    Deliver(SlpMessage),
    CloseDiscovery,
}

struct Scheduler {
    queue: BinaryHeap<Reverse<(u64, u64)>>,
    events: Vec<Option<Event>>,
    trace: Vec<SlpMessage>,
    next_seq: u64,
    latency_ns: u64,
}

impl Scheduler {
    fn push(&mut self, at: u64, event: Event) {
        let key = self.events.len() as u64;
        self.events.push(Some(event));
        self.queue.push(Reverse((at, key)));
    }

    fn send(&mut self, now: u64, from: &NodeId, out: Vec<Outgoing>) {
        for o in out {
            let msg = SlpMessage { seq: self.next_seq, kind: o.payload.kind(), from: from.clone(), to: o.to, payload: o.payload };
            self.next_seq += 1;
            self.trace.push(msg.clone());
            self.push(now + self.latency_ns, Event::Deliver(msg));
        }
    }

    fn pop(&mut self) -> Option<(u64, Event)> {
        let Reverse((t, key)) = self.queue.pop()?;
        Some((t, self.events[key as usize].take().expect("event consumed once")))
    }
}

fn nanos(seconds: f64) -> u64 {
    libm::round(seconds.max(0.0) * 1e9) as u64
}

/// Runs one session to completion on an in-process event queue.
pub fn run_session<C: SlpChannel>(
    topology: &SlpTopology,
    channel: &mut C,
    config: &SessionConfig,
) -> Result<SessionOutcome, SlpError> {
    let client_id = NodeId::new(SlpRole::ClientUe, topology.client_id.clone());
    let target_id = NodeId::new(SlpRole::TargetUe, topology.target_id.clone());
    let mut client = SessionState::new(client_id.clone());
    let mut target = SessionState::new(target_id.clone());
    let positions: Vec<(String, [f64; 3])> = topology
        .anchors
        .iter()
        .map(|a| (a.id.clone(), [a.position.x, a.position.y, a.position.z]))
        .collect();
    let mut anchors: Vec<SessionState> = topology
        .anchors
        .iter()
        .map(|a| {
            let mut s = SessionState::new(NodeId::new(SlpRole::AnchorUe, a.id.clone()));
            s.set_known_positions(positions.clone());
            s.degraded_allowed = config.degraded_mode;
            s
        })
        .collect();
    let mut ctx = Ctx { topology, channel, config, rng: ChaCha8Rng::seed_from_u64(config.seed) };
    let mut sched = Scheduler {
        queue: BinaryHeap::new(),
        events: Vec::new(),
        trace: Vec::new(),
        next_seq: 0,
        latency_ns: nanos(config.latency_s).max(1),
    };

    let solicit = anchors
        .iter()
        .map(|a| Outgoing { to: a.node.clone(), payload: Payload::Solicitation { target: topology.target_id.clone() } })
        .collect();
    sched.send(0, &client_id, solicit);
    sched.push(nanos(config.discovery_window_s), Event::CloseDiscovery);

    let mut outcome: Option<(PositionEstimate, bool)> = None;
    while let Some((now, event)) = sched.pop() {
        match event {
            Event::CloseDiscovery => {
                let out = client.close_discovery(&topology.target_id, config.initial_selection)?;
                sched.send(now, &client_id, out);
            }
            Event::Deliver(msg) => {
                let to = &msg.to;
                if *to == client_id {
                    client.advance(&msg, &mut ctx)?;
                } else if *to == target_id {
                    let out = target.advance(&msg, &mut ctx)?;
                    sched.send(now, &target_id, out);
                } else if let Some(a) = anchors.iter_mut().find(|a| a.node.id == to.id) {
                    let out = a.advance(&msg, &mut ctx)?;
                    let from = a.node.clone();
                    sched.send(now, &from, out);
                    if a.phase == Phase::Computed {
                        let (estimate, degraded) = compute_fix(topology, &a.collected_measurements, config)
                            .map_err(|reason| SlpError::SessionFailed { reason, trace: sched.trace.clone() })?;
                        let report = a.report(&estimate, degraded)?;
                        sched.send(now, &from, alloc::vec![report]);
                        outcome = Some((estimate, degraded));
                    }
                }
            }
        }
    }

    let fail = |reason| SlpError::SessionFailed { reason, trace: sched.trace.clone() };
    if client.phase == Phase::Denied {
        return Err(fail(FailureReason::AuthorizationDenied));
    }
    if client.responders.is_empty() {
        return Err(fail(FailureReason::NoDetectablePath));
    }
    match outcome {
        Some((report, degraded)) if client.phase == Phase::Reported => {
            Ok(SessionOutcome { trace: sched.trace, report, degraded })
        }
        _ => {
            let lmf = anchors.iter().find(|a| a.node.role == SlpRole::ReferenceAnchorLmf);
            let reason = match lmf {
                Some(l) if l.collected_measurements.is_empty() => FailureReason::NoDetectablePath,
                Some(l) if l.collected_measurements.len() < 4 => FailureReason::InsufficientAnchors,
                _ => FailureReason::Stalled,
            };
            Err(fail(reason))
        }
    }
}

fn compute_fix(
    topology: &SlpTopology,
    measurements: &[ToaMeasurement],
    config: &SessionConfig,
) -> Result<(PositionEstimate, bool), FailureReason> {
    if measurements.is_empty() {
        return Err(FailureReason::NoDetectablePath);
    }
    if measurements.len() >= 4 {
        let est = match config.method {
            SlpMethod::Lls => lls(measurements, &topology.anchors),
            SlpMethod::Ippa => {
                let labels = alloc::vec![LosLabel::LoS; measurements.len()];
                ippa(measurements, &labels, &topology.anchors, &config.solver)
            }
        };
        if let Ok(e) = est {
            return Ok((e, false));
        }
    }
    if !config.degraded_mode {
        return Err(FailureReason::InsufficientAnchors);
    }
    let obs: Vec<RangeObs> = measurements
        .iter()
        .filter_map(|m| {
            let a = topology.anchors.iter().find(|a| a.id == m.anchor_id)?;
            Some(RangeObs { anchor: a.position, range: m.range, sigma: m.sigma })
        })
        .collect();
    nls_fixed_height(&obs, config.floor_height / 2.0, &config.solver)
        .map(|e| (e, true))
        .map_err(|_| FailureReason::InsufficientAnchors)
}

/// Message kinds in order of first appearance.
pub fn first_occurrences(trace: &[SlpMessage]) -> Vec<MessageKind> {
    let mut seen = Vec::new();
    for m in trace {
        if !seen.contains(&m.kind) {
            seen.push(m.kind);
        }
    }
    seen
}
