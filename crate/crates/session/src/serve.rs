//! Live session server: one player at a time over a WebSocket at `/ws`.
//!
//! Each connection gets a dedicated simulation thread. While a trial runs the
//! thread steps the physics at the configured `physics_dt`, catching up to the
//! wall clock, and streams snapshots at `serve.snapshot_rate`. Pointer inputs
//! drive the bowl through a critically damped spring toward the pointer; raw
//! force inputs are applied as given. Inputs hold until replaced.
//!
//! Every finished, aborted or abandoned trial is written to the archive as a
//! `live` log and the manifest is rewritten, so an interrupted session loses
//! at most the trial in flight.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use ballbowl_core::dynamics::{BowlState, SimParams};
use ballbowl_core::protocol::{generate_protocol, Protocol};
use ballbowl_core::sim::{Controller, Observation, Trial, TrialLog};
use ballbowl_core::spectral::time_per_target;
use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::mpsc as tmpsc;

use crate::archive::{read_manifest, write_manifest, write_trial, ArchivedTrial, Manifest, Source, SubjectEntry, MANIFEST_FILE};
use crate::cohort::trial_setup;
use crate::config::{ProfileChoice, SessionConfig};
use crate::error::{Result, SessionError};
use crate::wire::{self, ClientMessage, ErrorCode, ServerMessage, Snapshot, TrialSummary};

/// What the player is currently asking for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PointerInput {
    /// Pointer position on the table plane and the lift toggle.
    Target { xy: [f64; 2], lift: bool },
    /// Force on the bowl, bypassing the pointer coupling (N).
    Force([f64; 3]),
}

impl PointerInput {
    fn from_wire(target: Option<[f64; 2]>, lift: bool, force: Option<[f64; 3]>) -> Option<Self> {
        match (target, force) {
            (Some(xy), None) => Some(Self::Target { xy, lift }),
            (None, Some(f)) => Some(Self::Force(f)),
            _ => None,
        }
    }
}

/// Spring-damper from the pointer to the bowl, critically damped together
/// with the bowl's own viscous damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointerCoupling {
    pub stiffness: f64,
    pub damping_xy: f64,
    pub damping_z: f64,
    pub lift_z: f64,
    pub rest_z: f64,
}

impl PointerCoupling {
    pub fn new(params: &SimParams, frequency: f64, lift_height: f64) -> Self {
        let m = params.virtual_mass;
        let wc = 2.0 * std::f64::consts::PI * frequency;
        Self {
            stiffness: m * wc * wc,
            damping_xy: (2.0 * m * wc - params.virtual_damping).max(0.0),
            damping_z: 2.0 * m * wc,
            lift_z: params.table_height + lift_height,
            rest_z: params.table_height,
        }
    }

    pub fn force(&self, input: PointerInput, bowl: &BowlState) -> [f64; 3] {
        match input {
            PointerInput::Force(f) => f,
            PointerInput::Target { xy, lift } => {
                let z = if lift { self.lift_z } else { self.rest_z };
                let (p, v) = (bowl.position, bowl.velocity);
                [
                    self.stiffness * (xy[0] - p[0]) - self.damping_xy * v[0],
                    self.stiffness * (xy[1] - p[1]) - self.damping_xy * v[1],
                    self.stiffness * (z - p[2]) - self.damping_z * v[2],
                ]
            }
        }
    }
}

/// Zero-order hold over a queue of timed inputs. The server drives trials
/// through this, so a recorded schedule replays headlessly to the same log.
#[derive(Debug, Clone)]
pub struct InputPlayback {
    coupling: PointerCoupling,
    current: PointerInput,
    queue: VecDeque<(f64, PointerInput)>,
}

impl InputPlayback {
    pub fn new(coupling: PointerCoupling) -> Self {
        Self { coupling, current: PointerInput::Force([0.0; 3]), queue: VecDeque::new() }
    }

    /// Apply `input` from trial time `at` on. Equal times keep arrival order.
    pub fn schedule(&mut self, at: f64, input: PointerInput) {
        let pos = self.queue.partition_point(|(t, _)| *t <= at);
        self.queue.insert(pos, (at, input));
    }

    /// Replace the held input; queued inputs still apply at their times.
    pub fn set_now(&mut self, input: PointerInput) {
        self.current = input;
    }

    /// Back to zero force with an empty queue.
    pub fn reset(&mut self) {
        self.current = PointerInput::Force([0.0; 3]);
        self.queue.clear();
    }

    pub fn current(&self) -> PointerInput {
        self.current
    }
}

impl Controller for InputPlayback {
    fn command(&mut self, obs: &Observation<'_>) -> [f64; 3] {
        while self.queue.front().is_some_and(|(at, _)| *at <= obs.t) {
            self.current = self.queue.pop_front().expect("front checked").1;
        }
        self.coupling.force(self.current, &obs.bowl)
    }
}

struct Shared {
    config: SessionConfig,
    archive: PathBuf,
    protocol: Protocol,
    occupied: AtomicBool,
    manifest: Mutex<Manifest>,
}

impl Shared {
    fn next_trial(&self, subject: &str) -> usize {
        let manifest = self.manifest.lock().expect("manifest lock");
        manifest.subjects.iter().find(|s| s.subject == subject).map_or(0, |s| s.trials.len())
    }

    fn persist(&self, subject: &str, log: TrialLog) -> Result<String> {
        let trial = ArchivedTrial { subject: subject.to_string(), group: self.config.group, source: Source::Live, log };
        let entry = write_trial(&self.archive, &trial)?;
        let file = entry.file.clone();
        let mut manifest = self.manifest.lock().expect("manifest lock");
        match manifest.subjects.iter_mut().find(|s| s.subject == subject) {
            Some(s) => s.trials.push(entry),
            None => manifest.subjects.push(SubjectEntry {
                subject: subject.to_string(),
                group: self.config.group,
                profile: ProfileChoice::Human,
                protocol_seed: self.config.protocol_seed,
                trials: vec![entry],
            }),
        }
        write_manifest(&self.archive, &manifest)?;
        Ok(file)
    }
}

/// Releases the single-player slot when the connection ends.
struct Seat(Arc<Shared>);

impl Drop for Seat {
    fn drop(&mut self) {
        self.0.occupied.store(false, Ordering::Release);
    }
}

/// A bound but not yet running server.
pub struct LiveServer {
    listener: TcpListener,
    app: Router,
    archive: PathBuf,
}

impl LiveServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn archive_dir(&self) -> &Path {
        &self.archive
    }

    pub async fn run(self) -> std::io::Result<()> {
        axum::serve(self.listener, self.app).await
    }

    pub async fn run_until(self, shutdown: impl std::future::Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
        axum::serve(self.listener, self.app).with_graceful_shutdown(shutdown).await
    }
}

/// Bind the server. Live logs go to `archive`; an existing archive there is
/// resumed, so a rejoining subject continues at their next trial.
pub async fn bind(config: SessionConfig, archive: &Path, addr: SocketAddr) -> Result<LiveServer> {
    config.validate()?;
    let manifest = if archive.join(MANIFEST_FILE).exists() {
        read_manifest(archive)?
    } else {
        let m = Manifest::new(&config, None);
        write_manifest(archive, &m)?;
        m
    };
    let shared = Arc::new(Shared {
        protocol: generate_protocol(config.protocol_seed),
        config,
        archive: archive.to_path_buf(),
        occupied: AtomicBool::new(false),
        manifest: Mutex::new(manifest),
    });
    let app = Router::new()
        .route("/ws", get(upgrade))
        .route("/health", get(health))
        .with_state(shared);
    let listener = TcpListener::bind(addr).await.map_err(|e| SessionError::Io { path: PathBuf::from(addr.to_string()), source: e })?;
    Ok(LiveServer { listener, app, archive: archive.to_path_buf() })
}

async fn health(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    Json(serde_json::json!({ "status": "ok", "occupied": shared.occupied.load(Ordering::Acquire) }))
}

async fn upgrade(ws: WebSocketUpgrade, State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, shared))
}

enum Command {
    Input { at: Option<f64>, input: PointerInput },
    Start,
    Rest,
}

async fn connection(socket: WebSocket, shared: Arc<Shared>) {
    let (mut sink, mut stream) = socket.split();
    let (out_tx, mut out_rx) = tmpsc::unbounded_channel::<ServerMessage>();
    let writer = tokio::spawn(async move {
        while let Some(msg) = out_rx.recv().await {
            if sink.send(Message::Text(wire::encode(&msg).into())).await.is_err() {
                break;
            }
        }
        let _ = sink.close().await;
    });

    let mut worker: Option<(mpsc::Sender<Command>, thread::JoinHandle<()>, Seat)> = None;
    let error = |code, message: String| ServerMessage::Error { code, message };
    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Close(_) => break,
            Message::Binary(_) => {
                let _ = out_tx.send(error(ErrorCode::Malformed, "binary frames are not accepted".into()));
                continue;
            }
            _ => continue,
        };
        let msg = match wire::decode_client(text.as_str()) {
            Ok(m) => m,
            Err(r) => {
                let _ = out_tx.send(r.into_message());
                continue;
            }
        };
        let command = match (msg, worker.as_ref()) {
            (ClientMessage::Join { .. }, Some(_)) => {
                let _ = out_tx.send(error(ErrorCode::AlreadyJoined, "already joined".into()));
                continue;
            }
            (ClientMessage::Join { subject }, None) => {
                let subject = subject.unwrap_or_else(|| shared.config.subject.clone());
                if subject.is_empty() || !subject.chars().all(|c| c.is_ascii_alphanumeric() || "-_".contains(c)) {
                    let _ = out_tx.send(error(ErrorCode::Malformed, format!("subject id {subject:?} must be [A-Za-z0-9_-]")));
                    continue;
                }
                if shared.occupied.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_err() {
                    let _ = out_tx.send(error(ErrorCode::SessionFull, "another player is connected".into()));
                    break;
                }
                let seat = Seat(shared.clone());
                let (cmd_tx, cmd_rx) = mpsc::channel();
                let (s, o) = (shared.clone(), out_tx.clone());
                let handle = thread::Builder::new()
                    .name(format!("sim-{subject}"))
                    .spawn(move || SimWorker::new(s, subject, o).run(cmd_rx))
                    .expect("spawn simulation thread");
                worker = Some((cmd_tx, handle, seat));
                continue;
            }
            (_, None) => {
                let _ = out_tx.send(error(ErrorCode::NotJoined, "send join first".into()));
                continue;
            }
            (ClientMessage::Input { target, lift, force, at }, Some(_)) => match PointerInput::from_wire(target, lift, force) {
                Some(input) => Command::Input { at, input },
                None => {
                    let _ = out_tx.send(error(ErrorCode::Malformed, "input needs exactly one of target or force".into()));
                    continue;
                }
            },
            (ClientMessage::StartTrial, Some(_)) => Command::Start,
            (ClientMessage::Rest, Some(_)) => Command::Rest,
        };
        if let Some((tx, _, _)) = &worker {
            if tx.send(command).is_err() {
                break;
            }
        }
    }
    drop(out_tx);
    if let Some((tx, handle, seat)) = worker {
        // dropping the sender tells the worker the player is gone
        drop(tx);
        let _ = tokio::task::spawn_blocking(move || handle.join()).await;
        drop(seat);
    }
    let _ = writer.await;
}

struct Running {
    trial: Trial,
    started: Instant,
}

struct SimWorker {
    shared: Arc<Shared>,
    subject: String,
    out: tmpsc::UnboundedSender<ServerMessage>,
    playback: InputPlayback,
    seq: u64,
}

impl SimWorker {
    fn new(shared: Arc<Shared>, subject: String, out: tmpsc::UnboundedSender<ServerMessage>) -> Self {
        let c = &shared.config;
        let coupling = PointerCoupling::new(&c.sim, c.serve.coupling_frequency, c.serve.lift_height);
        Self { playback: InputPlayback::new(coupling), shared, subject, out, seq: 0 }
    }

    fn send(&self, msg: ServerMessage) {
        let _ = self.out.send(msg);
    }

    fn fail(&self, code: ErrorCode, message: impl Into<String>) {
        self.send(ServerMessage::Error { code, message: message.into() });
    }

    /// The next trial of the protocol, positioned but not started.
    fn stage(&self) -> Option<Trial> {
        let index = self.shared.next_trial(&self.subject);
        let spec = *self.shared.protocol.trials.get(index)?;
        match trial_setup(&self.shared.config, spec).and_then(|s| Trial::new(s).map_err(Into::into)) {
            Ok(t) => Some(t),
            Err(e) => {
                self.fail(ErrorCode::Internal, e.to_string());
                None
            }
        }
    }

    fn run(mut self, commands: mpsc::Receiver<Command>) {
        let c = &self.shared.config;
        let period = Duration::from_secs_f64(1.0 / c.serve.snapshot_rate);
        let dt = c.sim.physics_dt;
        self.send(ServerMessage::Welcome {
            subject: self.subject.clone(),
            snapshot_rate: c.serve.snapshot_rate,
            physics_dt: dt,
            record_rate: c.sim.record_rate,
            workspace: c.workspace,
            pendulum_length: c.sim.pendulum_length,
            rim_angle: c.sim.rim_angle,
            total_trials: self.shared.protocol.trials.len(),
            next_trial: self.shared.next_trial(&self.subject),
        });
        let mut staged = self.stage();
        let mut running: Option<Running> = None;
        let mut next_snapshot = Instant::now();
        loop {
            let wake = match &running {
                Some(r) => next_snapshot.min(r.started + Duration::from_secs_f64(r.trial.setup().time_limit)),
                None => next_snapshot,
            };
            let command = match commands.recv_timeout(wake.saturating_duration_since(Instant::now())) {
                Ok(c) => Some(c),
                Err(mpsc::RecvTimeoutError::Timeout) => None,
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    if let Some(r) = running.take() {
                        let mut trial = r.trial;
                        self.catch_up(&mut trial, r.started, dt);
                        trial.abort("client disconnected");
                        self.finish(trial);
                    }
                    return;
                }
            };
            // inputs take effect after the steps already due under the old one
            if let Some(r) = running.as_mut() {
                self.catch_up(&mut r.trial, r.started, dt);
            }
            match command {
                Some(Command::Input { at, input }) => match (at, &running) {
                    (Some(at), _) => self.playback.schedule(at, input),
                    (None, Some(r)) => self.playback.schedule(r.trial.time(), input),
                    (None, None) => self.playback.set_now(input),
                },
                Some(Command::Start) => match (&running, staged.take()) {
                    (Some(_), s) => {
                        staged = s;
                        self.fail(ErrorCode::TrialActive, "a trial is already running");
                    }
                    (None, None) => self.fail(ErrorCode::ProtocolComplete, "all trials of the protocol are done"),
                    (None, Some(trial)) => running = Some(Running { trial, started: Instant::now() }),
                },
                Some(Command::Rest) => match running.take() {
                    Some(r) => {
                        let mut trial = r.trial;
                        trial.abort("ended early by the player");
                        self.finish(trial);
                        staged = self.stage();
                    }
                    None => self.fail(ErrorCode::NoActiveTrial, "no trial is running"),
                },
                None => {}
            }
            if running.as_ref().is_some_and(|r| r.trial.is_finished()) {
                let r = running.take().expect("checked");
                self.finish(r.trial);
                staged = self.stage();
            }
            let now = Instant::now();
            if now >= next_snapshot {
                if let Some(trial) = running.as_ref().map(|r| &r.trial).or(staged.as_ref()) {
                    let snap = self.snapshot(trial, running.is_some());
                    self.send(ServerMessage::Snapshot(snap));
                }
                next_snapshot += period;
                if next_snapshot < now {
                    next_snapshot = now + period;
                }
            }
        }
    }

    /// Step until trial time matches the wall clock since `started`.
    fn catch_up(&mut self, trial: &mut Trial, started: Instant, dt: f64) {
        let due = (started.elapsed().as_secs_f64() / dt).floor();
        while !trial.is_finished() && trial.time() / dt < due - 0.5 {
            let force = self.playback.command(&trial.observation());
            trial.step(force);
        }
    }

    fn finish(&mut self, trial: Trial) {
        // scheduled inputs belong to the trial they were sent for
        self.playback.reset();
        let log = trial.into_log();
        let mut summary = TrialSummary {
            trial_index: log.spec.trial_index,
            set_index: log.spec.set_index,
            flags_collected: log.flags_collected(),
            task_time: log.task_time(),
            duration: log.duration(),
            time_per_target: time_per_target(&log).ok(),
            valid: log.valid,
            fault: log.fault.clone(),
            file: String::new(),
        };
        match self.shared.persist(&self.subject, log) {
            Ok(file) => {
                summary.file = file;
                self.send(ServerMessage::TrialComplete(summary));
            }
            Err(e) => self.fail(ErrorCode::Internal, format!("could not save trial: {e}")),
        }
    }

    fn snapshot(&mut self, trial: &Trial, active: bool) -> Snapshot {
        self.seq += 1;
        let p = trial.physics();
        let s = trial.state();
        Snapshot {
            seq: self.seq,
            active,
            t: trial.time(),
            time_remaining: trial.time_remaining(),
            trial_index: trial.setup().spec.trial_index,
            set_index: trial.setup().spec.set_index,
            bowl: p.bowl.position,
            lifted: p.bowl.lifted,
            ball: p.ball.theta,
            in_bowl: p.ball.in_bowl,
            eligible: s.eligible,
            collected: s.collected_count,
            task_time: s.task_time,
            remaining: s.remaining.clone(),
        }
    }
}
