//! Live mode: the closed loop on its own thread, TCP sessions speaking the
//! line protocol around it.
//!
//! Commands from every session go through one queue that the control thread
//! drains between ticks, so they are never lost and a later `set_reference`
//! simply overwrites an earlier one. Outgoing telemetry is buffered per session
//! with a fixed depth; a slow reader loses frames, never acks or errors, and
//! never stalls the loop.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use anyhow::Context;
use tunnelpilot_core::sim::{builtin_scenario, ClosedLoop, NoiseConfig, RunLog, Scenario, SimCommand, Timing};
use tunnelpilot_core::Config;

use crate::protocol::{parse_command, CommandMessage, ScenarioInfo, ServerMessage, TelemetryFrame};

const MAX_LINE: u64 = 64 * 1024;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub scenario: Scenario,
    pub config: Config,
    pub seed: u64,
    /// Wall-clock time per control tick; normally the sampling time.
    pub tick_period: Duration,
    /// Telemetry frames buffered per session before frames are dropped.
    pub queue_depth: usize,
    /// Where session logs are written on reset and shutdown.
    pub log_dir: Option<PathBuf>,
}

impl ServeOptions {
    pub fn new(scenario: Scenario, config: Config, seed: u64) -> Self {
        Self {
            tick_period: Duration::from_secs_f64(config.nmpc.ts),
            scenario,
            config,
            seed,
            queue_depth: 64,
            log_dir: None,
        }
    }
}

/// The run log of one simulation session and the operator commands applied to
/// it, keyed by the tick before which they took effect.
#[derive(Debug, Clone)]
pub struct SessionRecord {
    pub log: RunLog,
    pub commands: Vec<(u64, SimCommand)>,
}

struct OutState {
    items: VecDeque<(String, bool)>,
    telemetry: usize,
    dropped: u64,
    closed: bool,
}

/// Per-session outgoing queue.
struct Outbox {
    state: Mutex<OutState>,
    ready: Condvar,
    depth: usize,
}

impl Outbox {
    fn new(depth: usize) -> Self {
        Self {
            state: Mutex::new(OutState {
                items: VecDeque::new(),
                telemetry: 0,
                dropped: 0,
                closed: false,
            }),
            ready: Condvar::new(),
            depth,
        }
    }

    fn push(&self, line: String, telemetry: bool) {
        let mut s = self.state.lock().unwrap();
        if s.closed {
            return;
        }
        if telemetry {
            if s.telemetry >= self.depth {
                s.dropped += 1;
                return;
            }
            s.telemetry += 1;
        }
        s.items.push_back((line, telemetry));
        self.ready.notify_one();
    }

    fn pop(&self) -> Option<String> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some((line, telemetry)) = s.items.pop_front() {
                if telemetry {
                    s.telemetry -= 1;
                }
                return Some(line);
            }
            if s.closed {
                return None;
            }
            s = self.ready.wait(s).unwrap();
        }
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }
}

struct Client {
    outbox: Arc<Outbox>,
    stream: TcpStream,
}

type Clients = Arc<Mutex<HashMap<u64, Client>>>;

fn send_to(clients: &Clients, id: u64, msg: &ServerMessage) {
    if let Some(c) = clients.lock().unwrap().get(&id) {
        c.outbox.push(msg.to_line(), false);
    }
}

fn broadcast(clients: &Clients, msg: &ServerMessage, telemetry: bool) {
    let line = msg.to_line();
    for c in clients.lock().unwrap().values() {
        c.outbox.push(line.clone(), telemetry);
    }
}

/// A running server. Dropping it without [`ServerHandle::shutdown`] leaves the
/// threads running until the process exits.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    clients: Clients,
    accept: JoinHandle<()>,
    control: JoinHandle<SessionRecord>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the control loop ends (only on shutdown).
    pub fn wait(self) -> SessionRecord {
        let record = self.control.join().expect("control thread panicked");
        let _ = self.accept.join();
        record
    }

    /// Stops the loop, disconnects every session and returns the current
    /// session's record.
    pub fn shutdown(self) -> SessionRecord {
        self.stop.store(true, Ordering::SeqCst);
        let record = self.control.join().expect("control thread panicked");
        let _ = self.accept.join();
        for (_, c) in self.clients.lock().unwrap().drain() {
            c.outbox.close();
            let _ = c.stream.shutdown(Shutdown::Both);
        }
        record
    }
}

/// Binds, starts the control loop and returns immediately.
pub fn start(addr: impl ToSocketAddrs, options: ServeOptions) -> anyhow::Result<ServerHandle> {
    let listener = TcpListener::bind(addr).context("binding telemetry socket")?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let sim = ClosedLoop::new(options.scenario.clone(), &options.config, options.seed)?;
    let stop = Arc::new(AtomicBool::new(false));
    let clients: Clients = Arc::new(Mutex::new(HashMap::new()));
    let (tx, rx) = mpsc::channel();

    let control = {
        let stop = Arc::clone(&stop);
        let clients = Arc::clone(&clients);
        let options = options.clone();
        std::thread::Builder::new()
            .name("control".into())
            .spawn(move || ControlLoop::new(sim, options, clients, rx).run(&stop))?
    };
    let accept = {
        let stop = Arc::clone(&stop);
        let clients = Arc::clone(&clients);
        let depth = options.queue_depth;
        std::thread::Builder::new()
            .name("accept".into())
            .spawn(move || accept_loop(listener, &stop, clients, tx, depth))?
    };
    Ok(ServerHandle {
        addr: local,
        stop,
        clients,
        accept,
        control,
    })
}

fn accept_loop(
    listener: TcpListener,
    stop: &AtomicBool,
    clients: Clients,
    commands: Sender<(u64, CommandMessage)>,
    depth: usize,
) {
    let next_id = AtomicU64::new(1);
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if let Err(e) = open_session(stream, next_id.fetch_add(1, Ordering::Relaxed), &clients, &commands, depth)
                {
                    eprintln!("session setup failed: {e}");
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                eprintln!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(100));
            }
        }
    }
}

fn open_session(
    stream: TcpStream,
    id: u64,
    clients: &Clients,
    commands: &Sender<(u64, CommandMessage)>,
    depth: usize,
) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let outbox = Arc::new(Outbox::new(depth));
    clients.lock().unwrap().insert(
        id,
        Client {
            outbox: Arc::clone(&outbox),
            stream: stream.try_clone()?,
        },
    );

    let mut writer = stream.try_clone()?;
    let out = Arc::clone(&outbox);
    std::thread::spawn(move || {
        while let Some(line) = out.pop() {
            if writer.write_all(line.as_bytes()).is_err() {
                break;
            }
        }
        out.close();
    });

    let clients = Arc::clone(clients);
    let commands = commands.clone();
    std::thread::spawn(move || {
        let mut reader = BufReader::new(stream);
        let mut line = String::new();
        loop {
            line.clear();
            match (&mut reader).take(MAX_LINE).read_line(&mut line) {
                Ok(0) | Err(_) => break,
                Ok(_) if !line.ends_with('\n') && line.len() as u64 >= MAX_LINE => {
                    outbox.push(
                        ServerMessage::Error {
                            message: "line too long".into(),
                        }
                        .to_line(),
                        false,
                    );
                    break;
                }
                Ok(_) if line.trim().is_empty() => continue,
                Ok(_) => match parse_command(&line) {
                    Ok(cmd) => {
                        if commands.send((id, cmd)).is_err() {
                            break;
                        }
                    }
                    Err(message) => outbox.push(ServerMessage::Error { message }.to_line(), false),
                },
            }
        }
        if let Some(c) = clients.lock().unwrap().remove(&id) {
            c.outbox.close();
        }
    });
    Ok(())
}

struct ControlLoop {
    sim: ClosedLoop,
    options: ServeOptions,
    clients: Clients,
    commands: Receiver<(u64, CommandMessage)>,
    paused: bool,
    faulted: bool,
    record: SessionRecord,
}

fn new_record(sim: &ClosedLoop) -> SessionRecord {
    SessionRecord {
        log: RunLog::new(
            &sim.scenario().name,
            sim.seed(),
            sim.config().param_hash(),
            sim.scenario().duration,
        ),
        commands: Vec::new(),
    }
}

impl ControlLoop {
    fn new(sim: ClosedLoop, options: ServeOptions, clients: Clients, commands: Receiver<(u64, CommandMessage)>) -> Self {
        Self {
            record: new_record(&sim),
            sim,
            options,
            clients,
            commands,
            paused: false,
            faulted: false,
        }
    }

    fn run(mut self, stop: &AtomicBool) -> SessionRecord {
        let mut deadline = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            while let Ok((id, cmd)) = self.commands.try_recv() {
                self.handle(id, cmd);
            }
            if !self.paused && !self.faulted && !self.sim.is_finished() {
                match self.sim.step() {
                    Ok(tick) => {
                        self.record.log.records.push(tick.log);
                        broadcast(&self.clients, &ServerMessage::Telemetry(TelemetryFrame::from_tick(&tick)), true);
                    }
                    Err(e) => {
                        self.faulted = true;
                        self.record.log.fault = Some(e.to_string());
                        broadcast(
                            &self.clients,
                            &ServerMessage::Error {
                                message: format!("simulation fault: {e}"),
                            },
                            false,
                        );
                    }
                }
            }
            deadline += self.options.tick_period;
            let now = Instant::now();
            if deadline > now {
                std::thread::sleep(deadline - now);
            } else {
                deadline = now;
            }
        }
        self.save();
        self.record
    }

    fn save(&self) {
        if let Some(dir) = &self.options.log_dir {
            if let Err(e) = self.record.log.save(dir, Timing::Measured) {
                eprintln!("could not write session log: {e}");
            }
        }
    }

    fn ack(&self, id: u64, cmd: &CommandMessage) {
        send_to(
            &self.clients,
            id,
            &ServerMessage::Ack {
                command: cmd.kind().into(),
            },
        );
    }

    fn reject(&self, id: u64, message: String) {
        send_to(&self.clients, id, &ServerMessage::Error { message });
    }

    fn apply(&mut self, id: u64, cmd: &CommandMessage, sim_cmd: SimCommand) {
        match self.sim.command(sim_cmd) {
            Ok(()) => {
                self.record.commands.push((self.sim.tick(), sim_cmd));
                self.ack(id, cmd);
            }
            Err(e) => self.reject(id, format!("rejected {}: {e}", cmd.kind())),
        }
    }

    fn handle(&mut self, id: u64, cmd: CommandMessage) {
        match &cmd {
            CommandMessage::SetReference { z_r, vx_r, vy_r } => {
                let c = SimCommand::SetReference {
                    z_r: *z_r,
                    vx_r: *vx_r,
                    vy_r: *vy_r,
                };
                self.apply(id, &cmd, c);
            }
            CommandMessage::ReturnCommand => self.apply(id, &cmd, SimCommand::Return),
            CommandMessage::Pause => {
                self.paused = true;
                self.ack(id, &cmd);
            }
            CommandMessage::Resume => {
                self.paused = false;
                self.ack(id, &cmd);
            }
            CommandMessage::Reset { scenario, seed } => match self.reset(scenario, *seed) {
                Ok(()) => self.ack(id, &cmd),
                Err(e) => self.reject(id, format!("rejected reset: {e}")),
            },
            CommandMessage::ScenarioInfo => {
                let info = ScenarioInfo::new(self.sim.scenario(), self.sim.config(), self.sim.seed());
                send_to(&self.clients, id, &ServerMessage::ScenarioInfo(info));
            }
        }
    }

    fn reset(&mut self, name: &str, seed: u64) -> anyhow::Result<()> {
        let scenario = if name == self.options.scenario.name {
            self.options.scenario.clone()
        } else {
            let mut s = builtin_scenario(name)?;
            s.noise = NoiseConfig::from(&self.options.config.sim);
            s
        };
        let sim = ClosedLoop::new(scenario, &self.options.config, seed)?;
        self.save();
        self.record = new_record(&sim);
        self.sim = sim;
        self.paused = false;
        self.faulted = false;
        Ok(())
    }
}
