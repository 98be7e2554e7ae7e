//! One persistent TCP connection per tree edge. The parent connects to each
//! child; reader threads feed a single inbox.

use std::collections::HashMap;
use std::io::BufReader;
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use super::config::TransportConfig;
use super::wire::{read_frame, write_frame, Message};
use super::Link;
use crate::error::{Error, Result};
use crate::topology::Topology;

enum Incoming {
    Msg(Message),
    Closed { peer: usize, reason: Option<String> },
}

pub struct TcpLink {
    writers: HashMap<usize, TcpStream>,
    inbox: Receiver<Incoming>,
}

pub(crate) fn connect_with_retry(endpoint: &str, timeout: Duration) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    let mut wait = Duration::from_millis(10);
    loop {
        match TcpStream::connect(endpoint) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() + wait > deadline => {
                return Err(Error::Unreachable { endpoint: endpoint.to_string(), reason: e.to_string() })
            }
            Err(_) => {
                thread::sleep(wait);
                wait = (wait * 2).min(Duration::from_millis(250));
            }
        }
    }
}

fn attach(peer: usize, stream: TcpStream, tx: Sender<Incoming>, writers: &mut HashMap<usize, TcpStream>) -> Result<()> {
    stream.set_nodelay(true)?;
    let reader = stream.try_clone()?;
    writers.insert(peer, stream);
    thread::spawn(move || {
        let mut r = BufReader::new(reader);
        loop {
            match read_frame(&mut r) {
                Ok(Some(m)) if m.from == peer => {
                    if tx.send(Incoming::Msg(m)).is_err() {
                        return;
                    }
                }
                Ok(Some(m)) => {
                    log::error!("frame claiming node {} arrived on the link to node {peer}", m.from);
                    let _ = r.get_ref().shutdown(Shutdown::Both);
                    let _ = tx.send(Incoming::Closed { peer, reason: Some("sender id mismatch".into()) });
                    return;
                }
                Ok(None) => {
                    let _ = tx.send(Incoming::Closed { peer, reason: None });
                    return;
                }
                Err(e) => {
                    log::error!("resetting connection to node {peer}: {e}");
                    let _ = r.get_ref().shutdown(Shutdown::Both);
                    let _ = tx.send(Incoming::Closed { peer, reason: Some(e.to_string()) });
                    return;
                }
            }
        }
    });
    Ok(())
}

impl TcpLink {
    /// Binds this node's endpoint, accepts the parent's connection, then
    /// connects to every child.
    pub fn open(id: usize, topology: &Topology, cfg: &TransportConfig) -> Result<Self> {
        let (tx, inbox) = channel();
        let mut writers = HashMap::new();
        if let Some(parent) = topology.parent(id) {
            let ep = cfg.endpoint(id)?;
            let listener =
                TcpListener::bind(ep).map_err(|e| Error::Unreachable { endpoint: ep.to_string(), reason: e.to_string() })?;
            let (stream, addr) = listener.accept()?;
            log::debug!("node {id}: parent {parent} connected from {addr}");
            attach(parent, stream, tx.clone(), &mut writers)?;
        }
        let timeout = Duration::from_millis(cfg.connect_timeout_ms);
        for &child in topology.children(id) {
            let stream = connect_with_retry(cfg.endpoint(child)?, timeout)?;
            attach(child, stream, tx.clone(), &mut writers)?;
        }
        Ok(Self { writers, inbox })
    }
}

impl Link for TcpLink {
    fn send(&mut self, to: usize, msg: Message) -> Result<()> {
        let w = self.writers.get_mut(&to).ok_or_else(|| Error::Protocol(format!("no connection to node {to}")))?;
        write_frame(w, &msg)
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>> {
        let incoming = match timeout {
            Some(t) => match self.inbox.recv_timeout(t) {
                Ok(i) => i,
                Err(RecvTimeoutError::Timeout) => return Ok(None),
                Err(RecvTimeoutError::Disconnected) => return Err(Error::Protocol("all connections closed".into())),
            },
            None => self.inbox.recv().map_err(|_| Error::Protocol("all connections closed".into()))?,
        };
        match incoming {
            Incoming::Msg(m) => Ok(Some(m)),
            Incoming::Closed { peer, reason: Some(r) } => Err(Error::Frame(format!("connection to node {peer} reset: {r}"))),
            Incoming::Closed { peer, reason: None } => Err(Error::Protocol(format!("node {peer} closed its connection"))),
        }
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        for w in self.writers.values() {
            let _ = w.shutdown(Shutdown::Write);
        }
    }
}
