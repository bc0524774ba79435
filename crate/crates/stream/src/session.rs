//! Server side of the stream: one network thread owns the socket and talks
//! to the training thread through a bounded step queue and a command inbox.

use std::collections::VecDeque;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use insitu_core::SimilarityReport;
use serde::Serialize;
use serde_json::value::RawValue;

use crate::error::{Result, StreamError};
use crate::frame::{raw, read_frame, write_frame, Frame, FrameType};
use crate::message::{
    Bye, ClientHello, GeometryMessage, PruneAck, PruneCommand, PruneProposal, ServerHello, StepBegin, StepEnd,
    PROTOCOL_VERSION,
};
use crate::queue::DropOldest;

/// Step groups buffered for a slow viewer before the oldest is dropped.
pub const DEFAULT_QUEUE_STEPS: usize = 8;

const IDLE_POLL: Duration = Duration::from_millis(10);

/// A viewer that accepts no bytes for this long is dropped.
const WRITE_TIMEOUT: Duration = Duration::from_secs(20);

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub hello: ServerHello,
    pub queue_steps: usize,
    pub handshake_timeout: Duration,
}

impl SessionConfig {
    pub fn new(hello: ServerHello) -> Self {
        SessionConfig {
            hello,
            queue_steps: DEFAULT_QUEUE_STEPS,
            handshake_timeout: Duration::from_secs(5),
        }
    }
}

/// Everything published for one training step.
#[derive(Clone, Debug, Default)]
pub struct StepContent {
    pub filter_counts: Vec<(usize, usize)>,
    pub geometry: Vec<GeometryMessage>,
    pub similarity: Option<SimilarityReport>,
    pub proposal: Option<PruneProposal>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Published {
    /// No viewer: the step was discarded.
    Headless,
    /// Queued as a group of this many frames.
    Queued { frames: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SessionStats {
    pub frames_sent: u64,
    pub steps_sent: u64,
    pub steps_dropped: u64,
    pub viewers: u64,
}

struct StepGroup {
    step: u64,
    frames: Vec<(FrameType, Box<RawValue>)>,
}

struct State {
    queue: DropOldest<StepGroup>,
    control: VecDeque<(FrameType, u64, Box<RawValue>)>,
    commands: Vec<PruneCommand>,
    connected: bool,
    finishing: bool,
    stats: SessionStats,
}

struct Shared {
    state: Mutex<State>,
    wake: Condvar,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn disconnect(&self) {
        let mut s = self.lock();
        if s.connected {
            s.connected = false;
            s.stats.steps_dropped += s.queue.len() as u64;
            s.queue.reset();
            s.control.clear();
        }
        drop(s);
        self.wake.notify_all();
    }
}

pub struct Session {
    shared: Arc<Shared>,
    addr: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

/// Binds `addr` and starts accepting viewers in the background.
pub fn serve(addr: &str, config: SessionConfig) -> Result<Session> {
    let listener = TcpListener::bind(addr).map_err(|source| StreamError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    let local = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    let shared = Arc::new(Shared {
        state: Mutex::new(State {
            queue: DropOldest::new(config.queue_steps),
            control: VecDeque::new(),
            commands: Vec::new(),
            connected: false,
            finishing: false,
            stats: SessionStats::default(),
        }),
        wake: Condvar::new(),
    });
    let worker = Arc::clone(&shared);
    let thread = thread::Builder::new()
        .name("insitu-stream".into())
        .spawn(move || network_loop(listener, &config, &worker))?;
    Ok(Session {
        shared,
        addr: local,
        thread: Some(thread),
    })
}

impl Session {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn is_connected(&self) -> bool {
        self.shared.lock().connected
    }

    /// Blocks until a viewer completes the handshake or `timeout` passes.
    pub fn wait_for_viewer(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut s = self.shared.lock();
        while !s.connected {
            let now = Instant::now();
            if now >= deadline {
                return false;
            }
            s = self
                .shared
                .wake
                .wait_timeout(s, deadline - now)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
        true
    }

    /// Queues one step group. Never waits on the viewer.
    pub fn publish_step(&self, step: u64, content: &StepContent) -> Result<Published> {
        if !self.is_connected() {
            return Ok(Published::Headless);
        }
        let mut frames = Vec::with_capacity(content.geometry.len() + 3);
        frames.push((
            FrameType::StepBegin,
            raw(&StepBegin {
                filter_counts: content.filter_counts.clone(),
            })?,
        ));
        for g in &content.geometry {
            frames.push((FrameType::Geometry, raw(g)?));
        }
        if let Some(r) = &content.similarity {
            frames.push((FrameType::Similarity, raw(r)?));
        }
        if let Some(p) = &content.proposal {
            frames.push((FrameType::PruneProposal, raw(p)?));
        }
        let count = frames.len() + 1;
        let mut s = self.shared.lock();
        if !s.connected {
            return Ok(Published::Headless);
        }
        if let Some(evicted) = s.queue.push(StepGroup { step, frames }) {
            s.stats.steps_dropped += 1;
            // keep the proposal: move it to the next queued group
            let carried = evicted.frames.into_iter().filter(|(k, _)| *k == FrameType::PruneProposal);
            if let Some(front) = s.queue.front_mut() {
                front.frames.extend(carried);
            }
        }
        drop(s);
        self.shared.wake.notify_all();
        Ok(Published::Queued { frames: count })
    }

    /// Commands received since the last call.
    pub fn poll_commands(&self) -> Vec<PruneCommand> {
        std::mem::take(&mut self.shared.lock().commands)
    }

    /// Sends an acknowledgement ahead of any queued step groups.
    pub fn ack(&self, step: u64, ack: &PruneAck) -> Result<()> {
        let body = raw(ack)?;
        let mut s = self.shared.lock();
        if s.connected {
            s.control.push_back((FrameType::PruneAck, step, body));
        }
        drop(s);
        self.shared.wake.notify_all();
        Ok(())
    }

    pub fn stats(&self) -> SessionStats {
        self.shared.lock().stats
    }

    /// Flushes queued frames, says bye to the viewer and stops the server.
    pub fn finish(mut self) -> SessionStats {
        self.stop();
        self.stats()
    }

    fn stop(&mut self) {
        self.shared.lock().finishing = true;
        self.shared.wake.notify_all();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.stop();
    }
}

fn network_loop(listener: TcpListener, config: &SessionConfig, shared: &Arc<Shared>) {
    loop {
        if shared.lock().finishing {
            return;
        }
        match listener.accept() {
            Ok((stream, _)) => {
                if let Some(conn) = handshake(stream, config) {
                    serve_viewer(conn, &listener, shared);
                }
            }
            Err(_) => thread::sleep(IDLE_POLL),
        }
    }
}

struct Connection {
    stream: TcpStream,
    writer: BufWriter<TcpStream>,
    seq: u64,
}

impl Connection {
    fn send<B: Serialize + ?Sized>(&mut self, kind: FrameType, step: u64, body: &B) -> Result<()> {
        let frame = Frame::new(kind, step, self.seq, &body)?;
        self.seq += 1;
        write_frame(&mut self.writer, &frame)
    }

    fn send_raw(&mut self, kind: FrameType, step: u64, body: Box<RawValue>) -> Result<()> {
        let frame = Frame {
            kind,
            step,
            seq: self.seq,
            body,
        };
        self.seq += 1;
        write_frame(&mut self.writer, &frame)
    }
}

fn say_bye(stream: TcpStream, reason: &str) {
    let _ = stream.set_nonblocking(false);
    if let Ok(mut conn) = connection(stream) {
        let _ = conn.send(FrameType::Bye, 0, &Bye { reason: reason.into() });
        let _ = conn.writer.flush();
        let _ = conn.stream.shutdown(Shutdown::Both);
    }
}

fn connection(stream: TcpStream) -> Result<Connection> {
    let writer = BufWriter::new(stream.try_clone()?);
    Ok(Connection { stream, writer, seq: 0 })
}

fn handshake(stream: TcpStream, config: &SessionConfig) -> Option<Connection> {
    stream.set_nonblocking(false).ok()?;
    stream.set_nodelay(true).ok()?;
    stream.set_read_timeout(Some(config.handshake_timeout)).ok()?;
    let mut conn = connection(stream).ok()?;
    let mut reader = BufReader::new(conn.stream.try_clone().ok()?);
    let hello = match read_frame(&mut reader) {
        Ok(Some(f)) if f.kind == FrameType::Hello => f.body::<ClientHello>().ok(),
        _ => None,
    };
    let reason = match hello {
        None => Some("expected hello"),
        Some(h) if h.protocol_version != PROTOCOL_VERSION => Some("unsupported version"),
        Some(_) => None,
    };
    if let Some(reason) = reason {
        let _ = conn.send(FrameType::Bye, 0, &Bye { reason: reason.into() });
        let _ = conn.writer.flush();
        let _ = conn.stream.shutdown(Shutdown::Both);
        return None;
    }
    conn.send(FrameType::Hello, 0, &config.hello).ok()?;
    conn.writer.flush().ok()?;
    conn.stream.set_read_timeout(None).ok()?;
    conn.stream.set_write_timeout(Some(WRITE_TIMEOUT)).ok()?;
    Some(conn)
}

fn serve_viewer(mut conn: Connection, listener: &TcpListener, shared: &Arc<Shared>) {
    {
        let mut s = shared.lock();
        s.connected = true;
        s.queue.reset();
        s.control.clear();
        s.stats.viewers += 1;
    }
    shared.wake.notify_all();

    let reader = match conn.stream.try_clone() {
        Ok(stream) => {
            let inbox = Arc::clone(shared);
            thread::spawn(move || read_commands(stream, &inbox))
        }
        Err(_) => {
            shared.disconnect();
            return;
        }
    };

    let outcome = write_loop(&mut conn, listener, shared);
    if outcome.is_ok() {
        let _ = conn.send(FrameType::Bye, 0, &Bye { reason: "finished".into() });
        let _ = conn.writer.flush();
    }
    let _ = conn.stream.shutdown(Shutdown::Both);
    let _ = reader.join();
    shared.disconnect();
}

/// Writes queued frames until the viewer leaves (`Err`) or the session
/// finishes with everything flushed (`Ok`).
fn write_loop(conn: &mut Connection, listener: &TcpListener, shared: &Shared) -> Result<()> {
    loop {
        let (control, group, dropped) = {
            let mut s = shared.lock();
            loop {
                if !s.connected {
                    return Err(StreamError::Protocol("viewer disconnected".into()));
                }
                if !s.control.is_empty() || !s.queue.is_empty() {
                    break;
                }
                if s.finishing {
                    return Ok(());
                }
                s = shared
                    .wake
                    .wait_timeout(s, IDLE_POLL * 5)
                    .unwrap_or_else(|p| p.into_inner())
                    .0;
                if let Ok((extra, _)) = listener.accept() {
                    say_bye(extra, "viewer already connected");
                }
            }
            let control: Vec<_> = s.control.drain(..).collect();
            (control, s.queue.pop(), s.queue.dropped())
        };
        let mut sent = control.len() as u64;
        for (kind, step, body) in control {
            conn.send_raw(kind, step, body)?;
        }
        let mut steps = 0;
        if let Some(group) = group {
            let frames = group.frames.len() + 1;
            for (kind, body) in group.frames {
                conn.send_raw(kind, group.step, body)?;
            }
            conn.send(FrameType::StepEnd, group.step, &StepEnd { frames, dropped })?;
            sent += frames as u64;
            steps = 1;
        }
        conn.writer.flush()?;
        let mut s = shared.lock();
        s.stats.steps_sent += steps;
        s.stats.frames_sent += sent;
    }
}

fn read_commands(stream: TcpStream, shared: &Shared) {
    let mut reader = BufReader::new(stream);
    loop {
        match read_frame(&mut reader) {
            Ok(Some(frame)) => match frame.kind {
                FrameType::PruneCommand => {
                    if let Ok(cmd) = frame.body::<PruneCommand>() {
                        shared.lock().commands.push(cmd);
                    }
                }
                FrameType::Bye => break,
                _ => {}
            },
            _ => break,
        }
    }
    shared.disconnect();
}
