//! A minimal scripted viewer, used by tests and for checking replays.

use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use insitu_core::{PolyData, SimilarityReport, ViewKind};

use crate::error::{Result, StreamError};
use crate::frame::{read_frame, write_frame, Frame, FrameType};
use crate::message::{
    Bye, ClientHello, GeometryMessage, PruneAck, PruneAction, PruneCommand, PruneProposal, ServerHello, StepBegin,
    StepEnd, PROTOCOL_VERSION,
};

/// One complete `step_begin .. step_end` group.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGroup {
    pub step: u64,
    pub begin: StepBegin,
    pub geometry: Vec<(ViewKind, usize, PolyData)>,
    pub similarity: Option<SimilarityReport>,
    pub proposals: Vec<PruneProposal>,
    pub end: StepEnd,
}

impl StepGroup {
    pub fn geometry(&self, view: ViewKind, layer: usize) -> Option<&PolyData> {
        self.geometry
            .iter()
            .find(|(v, l, _)| *v == view && *l == layer)
            .map(|(_, _, pd)| pd)
    }
}

/// What arrived next from the server.
#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Step(Box<StepGroup>),
    Ack(PruneAck),
    Bye(String),
}

pub struct Viewer {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    last_seq: Option<u64>,
    seq: u64,
    pending_acks: Vec<PruneAck>,
}

impl Viewer {
    /// Connects and performs the handshake with protocol version 1.
    pub fn connect(addr: impl ToSocketAddrs) -> Result<(Viewer, ServerHello)> {
        let mut viewer = Viewer::connect_raw(addr)?;
        viewer.send(FrameType::Hello, &ClientHello {
            protocol_version: PROTOCOL_VERSION,
        })?;
        let frame = viewer.next_frame()?.ok_or_else(|| StreamError::Protocol("closed during handshake".into()))?;
        match frame.kind {
            FrameType::Hello => Ok((viewer, frame.body()?)),
            FrameType::Bye => Err(StreamError::Protocol(format!("refused: {}", frame.body::<Bye>()?.reason))),
            other => Err(StreamError::Protocol(format!("unexpected {other:?} during handshake"))),
        }
    }

    /// Connects without sending anything.
    pub fn connect_raw(addr: impl ToSocketAddrs) -> Result<Viewer> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(60)))?;
        Ok(Viewer {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            last_seq: None,
            seq: 0,
            pending_acks: Vec::new(),
        })
    }

    pub fn set_read_timeout(&self, timeout: Option<Duration>) -> Result<()> {
        self.reader.get_ref().set_read_timeout(timeout)?;
        Ok(())
    }

    pub fn send<B: serde::Serialize>(&mut self, kind: FrameType, body: &B) -> Result<()> {
        let frame = Frame::new(kind, 0, self.seq, body)?;
        self.seq += 1;
        write_frame(&mut self.writer, &frame)?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next raw frame, checking that sequence numbers increase.
    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        let frame = read_frame(&mut self.reader)?;
        if let Some(f) = &frame {
            if let Some(last) = self.last_seq {
                if f.seq <= last {
                    return Err(StreamError::Protocol(format!("seq {} after {last}", f.seq)));
                }
            }
            self.last_seq = Some(f.seq);
        }
        Ok(frame)
    }

    /// Reads until a complete step group, an ack or a bye arrives.
    /// `None` means the connection closed.
    pub fn next_event(&mut self) -> Result<Option<Event>> {
        if !self.pending_acks.is_empty() {
            return Ok(Some(Event::Ack(self.pending_acks.remove(0))));
        }
        let mut group: Option<StepGroup> = None;
        while let Some(frame) = self.next_frame()? {
            match frame.kind {
                FrameType::StepBegin => {
                    if group.is_some() {
                        return Err(StreamError::Protocol("step_begin inside a step group".into()));
                    }
                    group = Some(StepGroup {
                        step: frame.step,
                        begin: frame.body()?,
                        geometry: Vec::new(),
                        similarity: None,
                        proposals: Vec::new(),
                        end: StepEnd { frames: 0, dropped: 0 },
                    });
                }
                FrameType::PruneAck => {
                    let ack: PruneAck = frame.body()?;
                    if group.is_some() {
                        self.pending_acks.push(ack);
                    } else {
                        return Ok(Some(Event::Ack(ack)));
                    }
                }
                FrameType::Bye => return Ok(Some(Event::Bye(frame.body::<Bye>()?.reason))),
                kind => {
                    let g = group
                        .as_mut()
                        .ok_or_else(|| StreamError::Protocol(format!("{kind:?} outside a step group")))?;
                    if frame.step != g.step {
                        return Err(StreamError::Protocol(format!("step {} inside step {}", frame.step, g.step)));
                    }
                    match kind {
                        FrameType::Geometry => {
                            let m: GeometryMessage = frame.body()?;
                            let pd = m.to_polydata()?;
                            g.geometry.push((m.view, m.layer, pd));
                        }
                        FrameType::Similarity => g.similarity = Some(frame.body()?),
                        FrameType::PruneProposal => g.proposals.push(frame.body()?),
                        FrameType::StepEnd => {
                            let mut done = group.take().expect("group checked above");
                            done.end = frame.body()?;
                            return Ok(Some(Event::Step(Box::new(done))));
                        }
                        other => return Err(StreamError::Protocol(format!("unexpected {other:?}"))),
                    }
                }
            }
        }
        if group.is_some() {
            return Err(StreamError::Protocol("connection closed inside a step group".into()));
        }
        Ok(None)
    }

    /// Next complete step group; acks arriving meanwhile are kept for
    /// [`Viewer::next_event`]. `None` on bye or close.
    pub fn next_step(&mut self) -> Result<Option<StepGroup>> {
        let mut held = Vec::new();
        let result = loop {
            match self.next_event()? {
                Some(Event::Step(g)) => break Some(*g),
                Some(Event::Ack(a)) => held.push(a),
                Some(Event::Bye(_)) | None => break None,
            }
        };
        held.append(&mut self.pending_acks);
        self.pending_acks = held;
        Ok(result)
    }

    pub fn command(&mut self, proposal_id: u64, action: PruneAction) -> Result<()> {
        self.send(FrameType::PruneCommand, &PruneCommand { proposal_id, action })
    }

    /// Reads until the ack for `proposal_id`, returning any step groups seen
    /// on the way.
    pub fn await_ack(&mut self, proposal_id: u64) -> Result<(PruneAck, Vec<StepGroup>)> {
        let mut steps = Vec::new();
        if let Some(i) = self.pending_acks.iter().position(|a| a.proposal_id == proposal_id) {
            return Ok((self.pending_acks.remove(i), steps));
        }
        loop {
            match self.next_event()? {
                Some(Event::Ack(a)) if a.proposal_id == proposal_id => return Ok((a, steps)),
                Some(Event::Ack(a)) => self.pending_acks.push(a),
                Some(Event::Step(g)) => steps.push(*g),
                Some(Event::Bye(r)) => return Err(StreamError::Protocol(format!("bye before ack: {r}"))),
                None => return Err(StreamError::Protocol("closed before ack".into())),
            }
        }
    }

    pub fn bye(mut self) -> Result<()> {
        self.send(FrameType::Bye, &Bye { reason: "viewer closed".into() })
    }
}
