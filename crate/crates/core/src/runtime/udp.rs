//! UDP datagrams with stop-and-wait acknowledgement. A background thread
//! acknowledges every data frame at once, drops duplicates and wakes senders
//! waiting for their ACK.

use std::collections::{HashMap, HashSet};
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use super::arq::{ArqReceiver, ArqSender, DropInjector};
use super::config::{RetryConfig, TransportConfig};
use super::wire::{Message, Payload};
use super::Link;
use crate::error::{Error, Result};

pub const MAX_DATAGRAM: usize = 65_507;
const LINGER: Duration = Duration::from_secs(2);

type AckSet = Arc<(Mutex<HashSet<(usize, u32)>>, Condvar)>;

pub struct UdpLink {
    id: usize,
    socket: Arc<UdpSocket>,
    peers: Vec<SocketAddr>,
    inbox: Receiver<Message>,
    acks: AckSet,
    senders: HashMap<usize, ArqSender>,
    retry: RetryConfig,
    injector: Arc<Mutex<DropInjector>>,
    stop: Arc<AtomicBool>,
}

fn resolve(ep: &str) -> Result<SocketAddr> {
    ep.to_socket_addrs()
        .map_err(|e| Error::Unreachable { endpoint: ep.to_string(), reason: e.to_string() })?
        .next()
        .ok_or_else(|| Error::Unreachable { endpoint: ep.to_string(), reason: "no address".into() })
}

fn send_datagram(socket: &UdpSocket, injector: &Mutex<DropInjector>, to: SocketAddr, frame: &[u8]) -> Result<()> {
    if injector.lock().unwrap().should_drop() {
        log::trace!("dropping datagram to {to}");
        return Ok(());
    }
    socket.send_to(frame, to)?;
    Ok(())
}

impl UdpLink {
    pub fn open(id: usize, cfg: &TransportConfig) -> Result<Self> {
        let peers = cfg.endpoints.iter().map(|e| resolve(e)).collect::<Result<Vec<_>>>()?;
        let own = cfg.endpoint(id)?;
        let socket = UdpSocket::bind(own).map_err(|e| Error::Unreachable { endpoint: own.to_string(), reason: e.to_string() })?;
        socket.set_read_timeout(Some(Duration::from_millis(20)))?;
        let socket = Arc::new(socket);
        let acks: AckSet = Arc::new((Mutex::new(HashSet::new()), Condvar::new()));
        let injector = Arc::new(Mutex::new(DropInjector::new(cfg.drop_every)));
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, inbox) = channel();

        let (sock, acks2, inj, stop2, n) = (socket.clone(), acks.clone(), injector.clone(), stop.clone(), peers.len());
        thread::spawn(move || {
            let mut receiver = ArqReceiver::default();
            let mut buf = vec![0u8; MAX_DATAGRAM + 64];
            let mut linger_until: Option<Instant> = None;
            loop {
                if stop2.load(Ordering::Relaxed) {
                    let until = *linger_until.get_or_insert_with(|| Instant::now() + LINGER);
                    if Instant::now() >= until {
                        return;
                    }
                }
                let (len, src) = match sock.recv_from(&mut buf) {
                    Ok(x) => x,
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
                    Err(e) => {
                        log::debug!("node {id}: receive error {e}");
                        continue;
                    }
                };
                let msg = match Message::decode(&buf[..len]) {
                    Ok(m) => m,
                    Err(e) => {
                        log::error!("node {id}: discarding malformed datagram from {src}: {e}");
                        continue;
                    }
                };
                if msg.from >= n {
                    log::error!("node {id}: datagram from unknown node {}", msg.from);
                    continue;
                }
                if let Payload::Ack { seq } = msg.payload {
                    let (set, cv) = &*acks2;
                    set.lock().unwrap().insert((msg.from, seq));
                    cv.notify_all();
                    continue;
                }
                let ack = Message::new(id, 0, Payload::Ack { seq: msg.seq }).encode();
                if let Err(e) = send_datagram(&sock, &inj, src, &ack) {
                    log::debug!("node {id}: ACK to {src} failed: {e}");
                }
                if receiver.accept(msg.from, msg.seq) && tx.send(msg).is_err() {
                    // Link dropped; keep acknowledging until the linger ends.
                    stop2.store(true, Ordering::Relaxed);
                }
            }
        });

        Ok(Self { id, socket, peers, inbox, acks, senders: HashMap::new(), retry: cfg.udp_retry, injector, stop })
    }

    pub fn dropped(&self) -> u64 {
        self.injector.lock().unwrap().dropped
    }
}

impl Link for UdpLink {
    fn send(&mut self, to: usize, msg: Message) -> Result<()> {
        let addr = *self.peers.get(to).ok_or_else(|| Error::Protocol(format!("no endpoint for node {to}")))?;
        let retry = self.retry;
        let sender = self.senders.entry(to).or_insert_with(|| ArqSender::new(to, retry));
        sender.push(msg);
        let clock = Instant::now();
        let now = || clock.elapsed().as_secs_f64();
        let frame = sender.poll(now())?.expect("idle sender transmits at once");
        if frame.len() > MAX_DATAGRAM {
            return Err(Error::Frame(format!(
                "{}-byte frame does not fit in a datagram; ship a generation recipe instead",
                frame.len()
            )));
        }
        let seq = Message::decode(&frame)?.seq;
        send_datagram(&self.socket, &self.injector, addr, &frame)?;
        let (set, cv) = &*self.acks;
        loop {
            let deadline = sender.deadline().unwrap_or(0.0);
            let mut guard = set.lock().unwrap();
            while !guard.contains(&(to, seq)) && now() < deadline {
                let wait = Duration::from_secs_f64((deadline - now()).max(0.0));
                guard = cv.wait_timeout(guard, wait).unwrap().0;
            }
            if guard.remove(&(to, seq)) {
                sender.on_ack(seq);
                return Ok(());
            }
            drop(guard);
            if let Some(frame) = sender.poll(now())? {
                log::debug!("node {}: resending seq {seq} to node {to}", self.id);
                send_datagram(&self.socket, &self.injector, addr, &frame)?;
            }
        }
    }

    fn recv(&mut self, timeout: Option<Duration>) -> Result<Option<Message>> {
        match timeout {
            Some(t) => match self.inbox.recv_timeout(t) {
                Ok(m) => Ok(Some(m)),
                Err(RecvTimeoutError::Timeout) => Ok(None),
                Err(RecvTimeoutError::Disconnected) => Err(Error::Protocol("receiver thread stopped".into())),
            },
            None => self.inbox.recv().map(Some).map_err(|_| Error::Protocol("receiver thread stopped".into())),
        }
    }

    fn retransmissions(&self) -> u64 {
        self.senders.values().map(|s| s.retransmissions).sum()
    }
}

impl Drop for UdpLink {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}
