//! Message framing shared by the TCP stream, UDP datagrams and the simulator.
//!
//! Frame: `len: u32 LE` (bytes after the prefix), `kind: u8`, `from: u32`,
//! `seq: u32`, `iteration: u32`, then the kind-specific body. All numbers are
//! little-endian.

use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::scenario::{EconomicModelConfig, ScenarioSet, StrategyParams};
use crate::stats::{ReductionSummary, SUMMARY_WIRE_LEN};

pub const HEADER_LEN: usize = 13;
pub const MAX_FRAME_LEN: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Assign = 1,
    Eval = 2,
    Result = 3,
    Shutdown = 4,
    Ack = 5,
}

impl Kind {
    fn from_u8(b: u8) -> Result<Kind> {
        Ok(match b {
            1 => Kind::Assign,
            2 => Kind::Eval,
            3 => Kind::Result,
            4 => Kind::Shutdown,
            5 => Kind::Ack,
            other => return Err(Error::Frame(format!("unknown message kind {other}"))),
        })
    }
}

/// Where a node's scenarios come from.
#[derive(Debug, Clone, PartialEq)]
pub enum AssignSource {
    /// Regenerate locally from the model; every node derives its own range.
    Recipe(EconomicModelConfig),
    /// Scenario blocks for the receiving subtree, keyed by node id.
    Raw(Vec<(usize, ScenarioSet)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assign {
    pub config_digest: u64,
    pub total: usize,
    /// `(node, range)` for the receiver's whole subtree, receiver included.
    pub plan: Vec<(usize, Range<usize>)>,
    pub source: AssignSource,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Assign(Box<Assign>),
    Eval { params: StrategyParams, risk_aversion: f64 },
    Result(ReductionSummary),
    Shutdown,
    Ack { seq: u32 },
}

impl Payload {
    pub fn kind(&self) -> Kind {
        match self {
            Payload::Assign(_) => Kind::Assign,
            Payload::Eval { .. } => Kind::Eval,
            Payload::Result(_) => Kind::Result,
            Payload::Shutdown => Kind::Shutdown,
            Payload::Ack { .. } => Kind::Ack,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub seq: u32,
    pub iteration: u32,
    pub payload: Payload,
}

impl Message {
    pub fn new(from: usize, iteration: u32, payload: Payload) -> Self {
        Self { from, seq: 0, iteration, payload }
    }

    pub fn kind(&self) -> Kind {
        self.payload.kind()
    }

    /// Full frame including the length prefix.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc(Vec::with_capacity(64));
        e.u32(0);
        e.u8(self.kind() as u8);
        e.u32(self.from as u32);
        e.u32(self.seq);
        e.u32(self.iteration);
        match &self.payload {
            Payload::Assign(a) => encode_assign(&mut e, a),
            Payload::Eval { params, risk_aversion } => {
                encode_params(&mut e, params);
                e.f64(*risk_aversion);
            }
            Payload::Result(s) => e.0.extend_from_slice(&s.to_bytes()),
            Payload::Shutdown => {}
            Payload::Ack { seq } => e.u32(*seq),
        }
        let len = (e.0.len() - 4) as u32;
        e.0[..4].copy_from_slice(&len.to_le_bytes());
        e.0
    }

    /// Decodes one complete frame, length prefix included.
    pub fn decode(frame: &[u8]) -> Result<Message> {
        if frame.len() < 4 {
            return Err(Error::Frame("frame shorter than its length prefix".into()));
        }
        let len = u32::from_le_bytes(frame[..4].try_into().unwrap()) as usize;
        if len != frame.len() - 4 {
            return Err(Error::Frame(format!("length prefix {len} but {} bytes follow", frame.len() - 4)));
        }
        Self::decode_body(&frame[4..])
    }

    fn decode_body(body: &[u8]) -> Result<Message> {
        if body.len() < HEADER_LEN {
            return Err(Error::Frame(format!("frame of {} bytes has no room for a header", body.len())));
        }
        let mut d = Dec { buf: body, pos: 0 };
        let kind = Kind::from_u8(d.u8()?)?;
        let from = d.u32()? as usize;
        let seq = d.u32()?;
        let iteration = d.u32()?;
        let payload = match kind {
            Kind::Assign => Payload::Assign(Box::new(decode_assign(&mut d)?)),
            Kind::Eval => {
                let params = decode_params(&mut d)?;
                Payload::Eval { params, risk_aversion: d.f64()? }
            }
            Kind::Result => Payload::Result(ReductionSummary::from_bytes(d.take(SUMMARY_WIRE_LEN)?)?),
            Kind::Shutdown => Payload::Shutdown,
            Kind::Ack => Payload::Ack { seq: d.u32()? },
        };
        if d.pos != body.len() {
            return Err(Error::Frame(format!("{} trailing bytes after {kind:?} body", body.len() - d.pos)));
        }
        Ok(Message { from, seq, iteration, payload })
    }
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> Result<()> {
    w.write_all(&msg.encode())?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `Ok(None)` on a clean end of stream before a prefix.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Message>> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut prefix[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(Error::Frame("stream ended inside a length prefix".into())),
            n => got += n,
        }
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(Error::Frame(format!("frame length {len} exceeds limit")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).map_err(|e| Error::Frame(format!("truncated frame: {e}")))?;
    Message::decode_body(&body).map(Some)
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        self.raw_f64s(v);
    }
    fn raw_f64s(&mut self, v: &[f64]) {
        for x in v {
            self.f64(*x);
        }
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Frame(format!("body truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Frame("count does not fit in memory".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()? as usize;
        self.raw_f64s(n)
    }
    fn raw_f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Frame("array too long".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn encode_params(e: &mut Enc, p: &StrategyParams) {
    e.f64s(&p.weights);
    e.f64(p.contribution_rate);
    e.u8(p.rebalance as u8);
}

fn decode_params(d: &mut Dec<'_>) -> Result<StrategyParams> {
    let weights = d.f64s()?;
    let contribution_rate = d.f64()?;
    let rebalance = match d.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Frame(format!("bad rebalance flag {b}"))),
    };
    StrategyParams::new(weights, contribution_rate, rebalance).map_err(|e| Error::Frame(e.to_string()))
}

fn encode_config(e: &mut Enc, c: &EconomicModelConfig) {
    e.u32(c.indicator_count as u32);
    e.u32(c.period_count as u32);
    e.f64s(&c.drift);
    e.u32(c.covariance.len() as u32);
    for row in &c.covariance {
        e.f64s(row);
    }
    e.f64s(&c.initial_levels);
    e.u64(c.seed);
}

fn decode_config(d: &mut Dec<'_>) -> Result<EconomicModelConfig> {
    let indicator_count = d.u32()? as usize;
    let period_count = d.u32()? as usize;
    let drift = d.f64s()?;
    let rows = d.u32()? as usize;
    if rows > indicator_count {
        return Err(Error::Frame("covariance larger than the indicator count".into()));
    }
    let covariance = (0..rows).map(|_| d.f64s()).collect::<Result<Vec<_>>>()?;
    let initial_levels = d.f64s()?;
    let seed = d.u64()?;
    Ok(EconomicModelConfig { indicator_count, period_count, drift, covariance, initial_levels, seed })
}

fn encode_assign(e: &mut Enc, a: &Assign) {
    e.u64(a.config_digest);
    e.u64(a.total as u64);
    e.u32(a.plan.len() as u32);
    for (node, r) in &a.plan {
        e.u32(*node as u32);
        e.u64(r.start as u64);
        e.u64(r.end as u64);
    }
    match &a.source {
        AssignSource::Recipe(c) => {
            e.u8(0);
            encode_config(e, c);
        }
        AssignSource::Raw(blocks) => {
            e.u8(1);
            e.u32(blocks.len() as u32);
            for (node, set) in blocks {
                e.u32(*node as u32);
                e.u64(set.start() as u64);
                e.u64(set.len() as u64);
                e.u32(set.periods() as u32);
                e.u32(set.indicators() as u32);
                e.u64(set.seed());
                e.u64(set.config_digest());
                e.raw_f64s(set.data());
            }
        }
    }
}

fn decode_assign(d: &mut Dec<'_>) -> Result<Assign> {
    let config_digest = d.u64()?;
    let total = d.usize()?;
    let n = d.u32()? as usize;
    let mut plan = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let node = d.u32()? as usize;
        let start = d.usize()?;
        let end = d.usize()?;
        if start > end || end > total {
            return Err(Error::Frame(format!("bad range {start}..{end} for node {node}")));
        }
        plan.push((node, start..end));
    }
    let source = match d.u8()? {
        0 => AssignSource::Recipe(decode_config(d)?),
        1 => {
            let n = d.u32()? as usize;
            let mut blocks = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                let node = d.u32()? as usize;
                let start = d.usize()?;
                let count = d.usize()?;
                let periods = d.u32()? as usize;
                let indicators = d.u32()? as usize;
                let seed = d.u64()?;
                let digest = d.u64()?;
                let len = count
                    .checked_mul(periods)
                    .and_then(|v| v.checked_mul(indicators))
                    .ok_or_else(|| Error::Frame("block dimensions overflow".into()))?;
                let data = d.raw_f64s(len)?;
                let set = ScenarioSet::from_parts(data, count, periods, indicators, start, seed, digest)
                    .map_err(|e| Error::Frame(e.to_string()))?;
                blocks.push((node, set));
            }
            AssignSource::Raw(blocks)
        }
        t => return Err(Error::Frame(format!("unknown assign source tag {t}"))),
    };
    Ok(Assign { config_digest, total, plan, source })
}
