//! WebSocket teleoperation service.
//!
//! One task owns the [`World`] and steps it on a wall-clock interval.
//! Connection tasks talk to it only through a command channel; telemetry and
//! events fan out as pre-encoded frames on a broadcast channel, so every
//! client receives byte-identical snapshots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use futures_util::{SinkExt, StreamExt};
use magbot_core::simulator::{Command, CommandSource, Scenario};
use serde::Serialize;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio::time::{interval, MissedTickBehavior};
use tokio_tungstenite::tungstenite::Message as Frame;

use crate::config::Config;
use crate::protocol::{
    Ack, ControlMessage, ControlVerb, ErrorCode, ErrorMessage, EventMessage, Hello, Message, Role,
    ServerInfo, PROTOCOL_VERSION,
};
use crate::session::{Limits, Outcome, Session};
use crate::world::World;

/// Frames buffered per client before it starts missing telemetry.
const FEED_CAPACITY: usize = 256;

pub struct ServeOptions {
    pub config: Config,
    pub scenario: Scenario,
    /// Session log destination.
    pub log: Option<PathBuf>,
    /// Simulated seconds after which the service stops by itself.
    pub duration: Option<f64>,
    /// Marker count reported in telemetry.
    pub markers: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ServeSummary {
    pub steps: u64,
    pub time: f64,
    pub sessions: u64,
    pub trajectory_hash: String,
}

enum ToWorld {
    Join {
        requested: Role,
        reply: oneshot::Sender<(u64, Role)>,
    },
    Leave {
        id: u64,
    },
    Command {
        id: u64,
        seq: u64,
        command: Command,
    },
    Control {
        id: u64,
        msg: ControlMessage,
    },
}

/// Stops a running service from anywhere.
#[derive(Clone)]
pub struct Shutdown(Arc<watch::Sender<bool>>);

impl Shutdown {
    pub fn trigger(&self) {
        let _ = self.0.send(true);
    }
}

/// Handle to a started service.
pub struct Running {
    addr: SocketAddr,
    shutdown: Shutdown,
    world: JoinHandle<anyhow::Result<ServeSummary>>,
    accept: JoinHandle<()>,
}

impl Running {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Asks the simulation loop to stop; [`Running::wait`] then returns.
    pub fn shutdown(&self) {
        self.shutdown.trigger();
    }

    pub fn shutdown_handle(&self) -> Shutdown {
        self.shutdown.clone()
    }

    /// Waits for the simulation loop to end and closes the listener.
    pub async fn wait(self) -> anyhow::Result<ServeSummary> {
        let result = self.world.await.context("simulation task panicked");
        self.accept.abort();
        result?
    }
}

/// Binds the listener and starts the simulation loop. A busy port fails here.
pub async fn start(opts: ServeOptions) -> anyhow::Result<Running> {
    let cfg = &opts.config;
    cfg.validate()?;
    if let Some(d) = opts.duration {
        anyhow::ensure!(d > 0.0 && d.is_finite(), "duration must be > 0 (got {d})");
    }
    if matches!(opts.scenario.commands, CommandSource::Scripted(_)) {
        log::warn!(
            "serve ignores the scenario's scripted commands; the driver session commands the robot"
        );
    }
    let addr = format!("{}:{}", cfg.server.bind, cfg.server.port);
    let listener = TcpListener::bind(&addr)
        .await
        .with_context(|| format!("cannot listen on {addr}"))?;
    let local = listener.local_addr()?;

    let log: Option<Box<dyn Write + Send>> = match &opts.log {
        Some(p) => {
            let f =
                File::create(p).with_context(|| format!("creating session log {}", p.display()))?;
            Some(Box::new(BufWriter::new(f)))
        }
        None => None,
    };
    let mut world = World::new(opts.scenario.clone(), log)?;
    world.set_markers(opts.markers);

    let dt = opts.scenario.dt;
    let info = ServerInfo {
        dt,
        telemetry_hz: cfg.server.telemetry_hz,
        v_max: cfg.limits.v_max,
        max_angle_deg: cfg.limits.max_angle_deg,
        patches: opts
            .scenario
            .structure
            .patches
            .iter()
            .map(|p| p.id.clone())
            .collect(),
    };
    let timing = Timing {
        step: Duration::from_secs_f64(dt / cfg.server.realtime_factor),
        telemetry: Duration::from_secs_f64(1.0 / cfg.server.telemetry_hz),
        max_steps: opts
            .duration
            .map(|d| magbot_core::simulator::step_count(d, dt) as u64),
    };

    let (to_world, inbox) = mpsc::channel(64);
    let (feed, _) = broadcast::channel::<Arc<str>>(FEED_CAPACITY);
    let (shutdown, stop) = watch::channel(false);
    let world = tokio::spawn(run_world(world, inbox, feed.clone(), stop, timing));
    let limits = cfg.limits.limits();
    let accept = tokio::spawn(accept_loop(listener, to_world, feed, info, limits));
    log::info!("listening on ws://{local}");
    Ok(Running {
        addr: local,
        shutdown: Shutdown(Arc::new(shutdown)),
        world,
        accept,
    })
}

struct Timing {
    step: Duration,
    telemetry: Duration,
    max_steps: Option<u64>,
}

fn publish(feed: &broadcast::Sender<Arc<str>>, msg: &Message) {
    // No subscribers is not an error.
    let _ = feed.send(Arc::from(msg.encode()));
}

async fn run_world(
    mut world: World,
    mut inbox: mpsc::Receiver<ToWorld>,
    feed: broadcast::Sender<Arc<str>>,
    mut stop: watch::Receiver<bool>,
    timing: Timing,
) -> anyhow::Result<ServeSummary> {
    let mut steps = interval(timing.step);
    steps.set_missed_tick_behavior(MissedTickBehavior::Burst);
    let mut telemetry = interval(timing.telemetry);
    telemetry.set_missed_tick_behavior(MissedTickBehavior::Delay);
    let mut driver: Option<u64> = None;
    let mut next_id = 0u64;
    // Set when the simulator refuses a step; cleared by reset.
    let mut halted = false;

    loop {
        if timing.max_steps.is_some_and(|m| world.steps() >= m) {
            break;
        }
        tokio::select! {
            // Requests win ties with the step timer so a command received
            // before a boundary applies at that boundary.
            biased;
            _ = stop.changed() => break,
            Some(req) = inbox.recv() => match req {
                ToWorld::Join { requested, reply } => {
                    next_id += 1;
                    let role = if requested == Role::Driver && driver.is_none() {
                        driver = Some(next_id);
                        Role::Driver
                    } else {
                        Role::Observer
                    };
                    log::info!("session {next_id} joined as {role:?}");
                    let _ = reply.send((next_id, role));
                }
                ToWorld::Leave { id } => {
                    if driver == Some(id) {
                        driver = None;
                    }
                    log::info!("session {id} left");
                }
                ToWorld::Command { id, seq, command } if driver == Some(id) => world.set_command(seq, command)?,
                ToWorld::Control { id, msg } if driver == Some(id) => {
                    world.control(msg.verb)?;
                    if msg.verb == ControlVerb::Reset {
                        halted = false;
                    }
                }
                ToWorld::Command { id, .. } | ToWorld::Control { id, .. } => {
                    log::warn!("dropping request from session {id}, which is not the driver");
                }
            },
            _ = steps.tick(), if !halted => match world.tick() {
                Ok(events) => {
                    for event in events {
                        publish(&feed, &Message::Event(EventMessage { event }));
                    }
                }
                Err(e) => {
                    log::error!("simulation halted: {e}");
                    halted = true;
                    publish(&feed, &Message::Error(ErrorMessage::new(ErrorCode::Simulation, format!("{e}; reset to continue"))));
                }
            },
            _ = telemetry.tick() => publish(&feed, &Message::Telemetry(Box::new(world.telemetry()))),
        }
    }
    publish(&feed, &Message::Telemetry(Box::new(world.telemetry())));
    world.finish()?;
    Ok(ServeSummary {
        steps: world.steps(),
        time: world.state().time,
        sessions: next_id,
        trajectory_hash: world.trajectory_hash(),
    })
}

async fn accept_loop(
    listener: TcpListener,
    to_world: mpsc::Sender<ToWorld>,
    feed: broadcast::Sender<Arc<str>>,
    info: ServerInfo,
    limits: Limits,
) {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(c) => c,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let (to_world, feed, info) = (to_world.clone(), feed.clone(), info.clone());
        tokio::spawn(async move {
            if let Err(e) = connection(stream, to_world, feed, info, limits).await {
                log::warn!("connection {peer}: {e:#}");
            }
        });
    }
}

type Socket = tokio_tungstenite::WebSocketStream<TcpStream>;

async fn send(ws: &mut Socket, msg: &Message) -> anyhow::Result<()> {
    ws.send(Frame::Text(msg.encode())).await?;
    Ok(())
}

async fn refuse(ws: &mut Socket, err: ErrorMessage) -> anyhow::Result<()> {
    send(ws, &Message::Error(err)).await?;
    ws.close(None).await?;
    Ok(())
}

async fn connection(
    stream: TcpStream,
    to_world: mpsc::Sender<ToWorld>,
    feed: broadcast::Sender<Arc<str>>,
    info: ServerInfo,
    limits: Limits,
) -> anyhow::Result<()> {
    let mut ws = tokio_tungstenite::accept_async(stream).await?;
    let first = loop {
        match ws.next().await {
            Some(Ok(Frame::Text(t))) => break t,
            Some(Ok(Frame::Close(_))) | None => return Ok(()),
            Some(Ok(_)) => continue,
            Some(Err(e)) => return Err(e.into()),
        }
    };
    let requested = match Message::decode(&first) {
        Ok(Message::Hello(h)) if h.version == PROTOCOL_VERSION => h.role,
        Ok(Message::Hello(h)) => {
            let text = format!(
                "protocol version {} is not supported (server speaks {PROTOCOL_VERSION})",
                h.version
            );
            return refuse(
                &mut ws,
                ErrorMessage::new(ErrorCode::Version, text).field("version"),
            )
            .await;
        }
        _ => {
            return refuse(
                &mut ws,
                ErrorMessage::new(ErrorCode::NoSession, "the first message must be hello"),
            )
            .await
        }
    };

    // Subscribe before joining so no snapshot after the hello is missed.
    let mut frames = feed.subscribe();
    // Only the simulation loop and the acceptor keep the feed open.
    drop(feed);
    let (reply, granted) = oneshot::channel();
    to_world
        .send(ToWorld::Join { requested, reply })
        .await
        .context("simulation stopped")?;
    let (id, role) = granted.await.context("simulation stopped")?;
    let hello = Hello {
        version: PROTOCOL_VERSION,
        role,
        session: Some(id),
        server: Some(info),
    };
    let result = serve_session(
        &mut ws,
        &mut frames,
        &to_world,
        Session::new(id, role),
        requested,
        hello,
        limits,
    )
    .await;
    let _ = to_world.send(ToWorld::Leave { id }).await;
    result
}

async fn serve_session(
    ws: &mut Socket,
    frames: &mut broadcast::Receiver<Arc<str>>,
    to_world: &mpsc::Sender<ToWorld>,
    mut session: Session,
    requested: Role,
    hello: Hello,
    limits: Limits,
) -> anyhow::Result<()> {
    let id = session.id;
    send(ws, &Message::Hello(hello)).await?;
    if requested == Role::Driver && session.role == Role::Observer {
        let e = ErrorMessage::new(
            ErrorCode::DriverTaken,
            "another session is driving; joined as observer",
        )
        .warning();
        send(ws, &Message::Error(e)).await?;
    }
    loop {
        tokio::select! {
            frame = ws.next() => match frame {
                Some(Ok(Frame::Text(text))) => {
                    let out = session.handle_text(&text, &limits);
                    // Forward before acknowledging: an ack means the request is queued.
                    match &out {
                        Outcome::Apply(Message::Ack(Ack { seq }), command) => {
                            to_world.send(ToWorld::Command { id, seq: *seq, command: *command }).await?;
                        }
                        Outcome::Control(_, msg) => to_world.send(ToWorld::Control { id, msg: *msg }).await?,
                        _ => {}
                    }
                    send(ws, out.reply()).await?;
                }
                Some(Ok(Frame::Binary(_))) => {
                    send(ws, &Message::Error(ErrorMessage::new(ErrorCode::Malformed, "only text frames are accepted"))).await?;
                }
                Some(Ok(Frame::Close(_))) | None => return Ok(()),
                Some(Ok(_)) => {}
                Some(Err(e)) => return Err(e.into()),
            },
            item = frames.recv() => match item {
                Ok(text) => ws.send(Frame::Text(text.to_string())).await?,
                Err(broadcast::error::RecvError::Lagged(n)) => log::warn!("session {id} skipped {n} frames"),
                Err(broadcast::error::RecvError::Closed) => {
                    ws.close(None).await?;
                    return Ok(());
                }
            },
        }
    }
}
