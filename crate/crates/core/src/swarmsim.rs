//! Event-driven fluid simulation of a single swarm.
//!
//! Every active peer receives the same share `C / n` of the aggregate capacity, and all peers
//! download the same file, so peers finish (and cross the seeding threshold) in arrival order.
//! The simulator therefore tracks one cumulative per-peer "work" clock instead of per-peer
//! remaining bytes, which makes every event O(1).

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::SimRng;
use crate::workload::{sample_capacity, sample_interarrival, SwarmSpec};

/// Parameters of the peer-to-peer supply model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupplyModelParams {
    /// Upper bound on the fraction of eligible upload capacity that becomes useful download.
    pub e_max: f64,
    /// Fraction of the file a peer must hold before it uploads.
    pub p0: f64,
    /// Server bandwidth (KBps) at which P2P efficiency saturates.
    pub mu_ref: f64,
    /// File-size uplift on `e_max` per decade of `file_size / ref_size`.
    pub size_uplift_kappa: f64,
    /// KB.
    pub ref_size: f64,
}

impl Default for SupplyModelParams {
    fn default() -> Self {
        SupplyModelParams {
            e_max: 0.85,
            p0: 0.005,
            mu_ref: 100.0,
            size_uplift_kappa: 0.0,
            ref_size: 10_000.0,
        }
    }
}

impl SupplyModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_max > 0.0 && self.e_max <= 1.0) {
            return Err(Error::Config(format!("e_max must be in (0, 1], got {}", self.e_max)));
        }
        if !(self.p0 >= 0.0 && self.p0 < 1.0) {
            return Err(Error::Config(format!("p0 must be in [0, 1), got {}", self.p0)));
        }
        if !(self.mu_ref.is_finite() && self.mu_ref > 0.0) {
            return Err(Error::Config(format!("mu_ref must be positive, got {}", self.mu_ref)));
        }
        if !self.size_uplift_kappa.is_finite() {
            return Err(Error::Config("size_uplift_kappa must be finite".into()));
        }
        if !(self.ref_size.is_finite() && self.ref_size > 0.0) {
            return Err(Error::Config(format!("ref_size must be positive, got {}", self.ref_size)));
        }
        Ok(())
    }

    /// `e_max` after the optional file-size uplift, clamped to `[0, 1]`.
    pub fn effective_e_max(&self, file_size: f64) -> f64 {
        if self.size_uplift_kappa == 0.0 {
            return self.e_max;
        }
        (self.e_max * (1.0 + self.size_uplift_kappa * (file_size / self.ref_size).log10()))
            .clamp(0.0, 1.0)
    }

    /// P2P efficiency with `n` active peers and server bandwidth `x`; zero for a lone peer.
    pub fn efficiency(&self, n: usize, x: f64, file_size: f64) -> f64 {
        if n <= 1 {
            return 0.0;
        }
        let coupling = (x / self.mu_ref).clamp(0.0, 1.0);
        let exponent = i32::try_from(n - 1).unwrap_or(i32::MAX);
        self.effective_e_max(file_size) * (1.0 - (1.0 - coupling).powi(exponent))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Completion,
    Eligible,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Completion => "completion",
            EventKind::Eligible => "eligible",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One processed event. `value` is the upload capacity for arrivals, the download duration
/// for completions and the downloaded KB for eligibility crossings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub peer_id: u64,
    pub value: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeerState {
    pub id: u64,
    pub arrival_time: f64,
    /// KB.
    pub remaining: f64,
    /// KBps.
    pub upload_capacity: f64,
    pub seeding_eligible: bool,
}

#[derive(Clone, Copy, Debug)]
struct Peer {
    id: u64,
    arrival_time: f64,
    /// Value of the work clock at which this peer would have started from zero.
    work_origin: f64,
    upload_capacity: f64,
}

#[derive(Clone, Debug)]
enum Arrivals {
    Poisson { next: f64 },
    Scripted { times: VecDeque<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Checkpoint {
    time: f64,
    delivered: f64,
    peer_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct SwarmState {
    spec: SwarmSpec,
    params: SupplyModelParams,
    x: f64,
    clock: f64,
    rng: SimRng,
    arrivals: Arrivals,
    /// Arrival order; the first `eligible` peers are seeding-eligible.
    peers: VecDeque<Peer>,
    eligible: usize,
    eligible_upload: f64,
    /// KB delivered to each peer that was present since time zero.
    work: f64,
    next_peer_id: u64,
    total_arrivals: u64,
    completed: Vec<(f64, f64)>,
    delivered: f64,
    peer_seconds: f64,
    server_kb: f64,
    checkpoints: Vec<Checkpoint>,
}

/// Next pending event as seen from the current state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PendingEvent {
    pub time: f64,
    pub kind: EventKind,
}

impl SwarmState {
    /// Swarm with Poisson arrivals at `spec.lambda`, starting empty at time zero.
    pub fn new(spec: SwarmSpec, params: SupplyModelParams, x: f64, mut rng: SimRng) -> Result<Self> {
        spec.validate()?;
        let next = sample_interarrival(spec.lambda, &mut rng);
        Self::with_arrivals(spec, params, x, rng, Arrivals::Poisson { next })
    }

    /// Swarm whose arrivals happen exactly at the given times; capacities are still drawn from
    /// the stream.
    pub fn scripted(
        spec: SwarmSpec,
        params: SupplyModelParams,
        x: f64,
        rng: SimRng,
        arrival_times: &[f64],
    ) -> Result<Self> {
        spec.validate()?;
        let mut times: Vec<f64> = arrival_times.to_vec();
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidArgument("arrival times must be finite and >= 0".into()));
        }
        times.sort_by(f64::total_cmp);
        Self::with_arrivals(spec, params, x, rng, Arrivals::Scripted { times: times.into() })
    }

    fn with_arrivals(
        spec: SwarmSpec,
        params: SupplyModelParams,
        x: f64,
        rng: SimRng,
        arrivals: Arrivals,
    ) -> Result<Self> {
        params.validate()?;
        check_bandwidth(x)?;
        Ok(SwarmState {
            spec,
            params,
            x,
            clock: 0.0,
            rng,
            arrivals,
            peers: VecDeque::new(),
            eligible: 0,
            eligible_upload: 0.0,
            work: 0.0,
            next_peer_id: 0,
            total_arrivals: 0,
            completed: Vec::new(),
            delivered: 0.0,
            peer_seconds: 0.0,
            server_kb: 0.0,
            checkpoints: vec![Checkpoint { time: 0.0, delivered: 0.0, peer_seconds: 0.0 }],
        })
    }

    pub fn spec(&self) -> &SwarmSpec {
        &self.spec
    }

    pub fn params(&self) -> &SupplyModelParams {
        &self.params
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn server_bandwidth(&self) -> f64 {
        self.x
    }

    /// Adds a peer at the current clock with `remaining` KB left to download.
    pub fn inject_peer(&mut self, remaining: f64, upload_capacity: f64) -> Result<u64> {
        let s = self.spec.file_size;
        if !(remaining > 0.0 && remaining <= s) {
            return Err(Error::InvalidArgument(format!(
                "remaining must be in (0, {s}], got {remaining}"
            )));
        }
        if !(upload_capacity.is_finite() && upload_capacity >= 0.0) {
            return Err(Error::InvalidArgument("upload capacity must be non-negative".into()));
        }
        let downloaded = s - remaining;
        let origin = self.work - downloaded;
        let id = self.next_peer_id;
        self.next_peer_id += 1;
        self.total_arrivals += 1;
        // Peers stay ordered by progress so completions and crossings remain FIFO.
        let pos = self.peers.partition_point(|p| p.work_origin <= origin);
        self.peers.insert(pos, Peer { id, arrival_time: self.clock, work_origin: origin, upload_capacity });
        if pos < self.eligible || (pos == self.eligible && downloaded >= self.params.p0 * s) {
            self.eligible += 1;
            self.eligible_upload += upload_capacity;
        }
        Ok(id)
    }

    fn admit(&mut self, work_origin: f64, upload_capacity: f64) -> u64 {
        let id = self.next_peer_id;
        self.next_peer_id += 1;
        self.total_arrivals += 1;
        self.peers.push_back(Peer {
            id,
            arrival_time: self.clock,
            work_origin,
            upload_capacity,
        });
        id
    }

    fn mark_next_eligible(&mut self) {
        let p = self.peers[self.eligible];
        self.eligible += 1;
        self.eligible_upload += p.upload_capacity;
    }

    /// Rejects negative or non-finite bandwidth. Takes effect at the current clock.
    pub fn set_server_bandwidth(&mut self, x: f64) -> Result<()> {
        check_bandwidth(x)?;
        self.x = x;
        Ok(())
    }

    pub fn population(&self) -> usize {
        self.peers.len()
    }

    pub fn total_arrivals(&self) -> u64 {
        self.total_arrivals
    }

    /// `(arrival_time, departure_time)` of every finished download, in completion order.
    pub fn completed(&self) -> &[(f64, f64)] {
        &self.completed
    }

    /// KB delivered to peers since time zero.
    pub fn delivered(&self) -> f64 {
        self.delivered
    }

    /// Integral of the population over time.
    pub fn peer_seconds(&self) -> f64 {
        self.peer_seconds
    }

    /// Integral of the server bandwidth over time, KB.
    pub fn server_kb(&self) -> f64 {
        self.server_kb
    }

    pub fn peers(&self) -> Vec<PeerState> {
        let s = self.spec.file_size;
        self.peers
            .iter()
            .enumerate()
            .map(|(i, p)| PeerState {
                id: p.id,
                arrival_time: p.arrival_time,
                remaining: (s - (self.work - p.work_origin)).clamp(0.0, s),
                upload_capacity: p.upload_capacity,
                seeding_eligible: i < self.eligible,
            })
            .collect()
    }

    /// Aggregate capacity available to the swarm right now.
    pub fn aggregate_capacity(&self) -> f64 {
        let n = self.peers.len();
        if n == 0 {
            return 0.0;
        }
        let e = self.params.efficiency(n, self.x, self.spec.file_size);
        self.x + e * self.eligible_upload
    }

    fn per_peer_rate(&self) -> f64 {
        let n = self.peers.len();
        if n == 0 {
            0.0
        } else {
            self.aggregate_capacity() / n as f64
        }
    }

    /// Current download rate of every active peer.
    pub fn compute_rates(&self) -> Vec<(u64, f64)> {
        let r = self.per_peer_rate();
        self.peers.iter().map(|p| (p.id, r)).collect()
    }

    fn next_arrival_time(&self) -> Option<f64> {
        match &self.arrivals {
            Arrivals::Poisson { next } => Some(*next),
            Arrivals::Scripted { times } => times.front().copied(),
        }
    }

    /// The event that would be processed next if the clock were allowed to run freely.
    pub fn next_event(&self) -> Option<PendingEvent> {
        let mut best: Option<PendingEvent> = self
            .next_arrival_time()
            .map(|t| PendingEvent { time: t.max(self.clock), kind: EventKind::Arrival });
        let r = self.per_peer_rate();
        if r > 0.0 {
            let s = self.spec.file_size;
            let mut consider = |time: f64, kind: EventKind| {
                if best.is_none_or(|b| time < b.time) {
                    best = Some(PendingEvent { time, kind });
                }
            };
            if let Some(front) = self.peers.front() {
                let left = (s - (self.work - front.work_origin)).max(0.0);
                consider(self.clock + left / r, EventKind::Completion);
            }
            if let Some(p) = self.peers.get(self.eligible) {
                let left = (self.params.p0 * s - (self.work - p.work_origin)).max(0.0);
                consider(self.clock + left / r, EventKind::Eligible);
            }
        }
        best
    }

    fn integrate(&mut self, dt: f64, r: f64) {
        if dt <= 0.0 {
            return;
        }
        let n = self.peers.len() as f64;
        self.work += r * dt;
        self.delivered += n * r * dt;
        self.peer_seconds += n * dt;
        self.server_kb += self.x * dt;
        self.clock += dt;
    }

    /// Processes events up to and including `until`, returning them in time order.
    pub fn advance(&mut self, until: f64) -> Result<Vec<SimEvent>> {
        let mut events = Vec::new();
        self.run(until, |e| events.push(e))?;
        Ok(events)
    }

    /// Like [`advance`](Self::advance) but only counts the processed events.
    pub fn advance_quiet(&mut self, until: f64) -> Result<usize> {
        let mut count = 0;
        self.run(until, |_| count += 1)?;
        Ok(count)
    }

    fn run(&mut self, until: f64, mut sink: impl FnMut(SimEvent)) -> Result<()> {
        if !(until >= self.clock) || !until.is_finite() {
            return Err(Error::Contract(format!(
                "cannot advance from t={} to t={until}",
                self.clock
            )));
        }
        loop {
            let r = self.per_peer_rate();
            let pending = self.next_event();
            match pending {
                Some(ev) if ev.time <= until => {
                    self.integrate(ev.time - self.clock, r);
                    // Land exactly on the event time, whatever rounding integrate produced.
                    self.clock = ev.time;
                    sink(self.apply(ev.kind));
                }
                _ => {
                    self.integrate(until - self.clock, r);
                    self.clock = until;
                    break;
                }
            }
        }
        self.checkpoints.push(Checkpoint {
            time: self.clock,
            delivered: self.delivered,
            peer_seconds: self.peer_seconds,
        });
        Ok(())
    }

    fn apply(&mut self, kind: EventKind) -> SimEvent {
        let time = self.clock;
        match kind {
            EventKind::Arrival => {
                match &mut self.arrivals {
                    Arrivals::Poisson { next } => {
                        *next = time + sample_interarrival(self.spec.lambda, &mut self.rng);
                    }
                    Arrivals::Scripted { times } => {
                        times.pop_front();
                    }
                }
                let cap = sample_capacity(&self.spec.dist, &mut self.rng);
                let id = self.admit(self.work, cap);
                if self.params.p0 == 0.0 && self.eligible + 1 == self.peers.len() {
                    self.mark_next_eligible();
                }
                SimEvent { time, kind, peer_id: id, value: cap }
            }
            EventKind::Completion => {
                let p = self.peers.pop_front().expect("completion with an empty swarm");
                if self.eligible > 0 {
                    self.eligible -= 1;
                    self.eligible_upload -= p.upload_capacity;
                    if self.eligible == 0 {
                        // Stop rounding residue from accumulating once nobody uploads.
                        self.eligible_upload = 0.0;
                    }
                }
                self.completed.push((p.arrival_time, time));
                SimEvent { time, kind, peer_id: p.id, value: time - p.arrival_time }
            }
            EventKind::Eligible => {
                let p = self.peers[self.eligible];
                self.mark_next_eligible();
                SimEvent { time, kind, peer_id: p.id, value: self.work - p.work_origin }
            }
        }
    }

    /// Mean over downloads completed in `(clock - window, clock]` and the ages of peers still
    /// downloading. `None` when both sets are empty.
    pub fn avg_download_time_window(&self, window: f64) -> Option<f64> {
        let start = self.clock - window;
        let mut sum = 0.0;
        let mut count = 0usize;
        for &(a, d) in self.completed.iter().rev() {
            if d <= start {
                break;
            }
            sum += d - a;
            count += 1;
        }
        for p in &self.peers {
            sum += self.clock - p.arrival_time;
            count += 1;
        }
        (count > 0).then(|| sum / count as f64)
    }

    fn checkpoint_at(&self, t: f64) -> Checkpoint {
        // Checkpoints are time-ordered; take the latest one at or before `t`.
        let idx = self.checkpoints.partition_point(|c| c.time <= t + 1e-9);
        self.checkpoints[idx.saturating_sub(1)]
    }

    /// KB delivered per peer-active-second over the last `epoch` seconds. `None` when no peer
    /// was active.
    pub fn avg_download_rate(&self, epoch: f64) -> Option<f64> {
        let c = self.checkpoint_at(self.clock - epoch);
        let active = self.peer_seconds - c.peer_seconds;
        (active > 0.0).then(|| (self.delivered - c.delivered) / active)
    }

    /// Time-averaged population over `[from, clock]`.
    pub fn mean_population_since(&self, from: f64) -> Option<f64> {
        let c = self.checkpoint_at(from);
        let span = self.clock - c.time;
        (span > 0.0).then(|| (self.peer_seconds - c.peer_seconds) / span)
    }

    /// Mean duration of downloads by peers that arrived at or after `from`.
    pub fn mean_download_time_since(&self, from: f64) -> Option<(f64, usize)> {
        let durations: Vec<f64> = self
            .completed
            .iter()
            .filter(|(a, _)| *a >= from)
            .map(|(a, d)| d - a)
            .collect();
        (!durations.is_empty()).then(|| {
            (durations.iter().sum::<f64>() / durations.len() as f64, durations.len())
        })
    }

    /// KB still owed to resident peers.
    pub fn outstanding(&self) -> f64 {
        self.peers().iter().map(|p| p.remaining).sum()
    }
}

fn check_bandwidth(x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "server bandwidth must be finite and >= 0, got {x}"
        )))
    }
}

pub const EVENT_LOG_HEADER: &str = "time,swarm_id,event_kind,peer_id,value";

/// Writes events as CSV rows (header included).
pub fn write_event_log<W: Write>(mut out: W, swarm_id: &str, events: &[SimEvent]) -> std::io::Result<()> {
    writeln!(out, "{EVENT_LOG_HEADER}")?;
    for e in events {
        writeln!(out, "{},{},{},{},{}", e.time, swarm_id, e.kind, e.peer_id, e.value)?;
    }
    Ok(())
}

pub fn save_event_log(path: &Path, swarm_id: &str, events: &[SimEvent]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_event_log(std::io::BufWriter::new(file), swarm_id, events).map_err(|e| Error::io(path, e))
}
