use std::io::{Read, Write};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::model::{CovarianceFactor, EconomicModelConfig};
use crate::error::{Error, Result};
use crate::par;

pub const SCENARIO_MAGIC: &[u8; 4] = b"SCEN";
pub const SCENARIO_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 * 5;

/// A block of scenarios, stored as a flat `count × periods × indicators`
/// array of indicator levels.
///
/// `start` is the global index of the first scenario, so a worker can hold a
/// contiguous slice of a larger set and still regenerate it bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    data: Vec<f64>,
    count: usize,
    periods: usize,
    indicators: usize,
    start: usize,
    seed: u64,
    config_digest: u64,
}

/// Borrowed view of one scenario: `periods` rows of `indicators` levels.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    levels: &'a [f64],
    periods: usize,
    indicators: usize,
}

impl<'a> Scenario<'a> {
    pub fn new(levels: &'a [f64], periods: usize, indicators: usize) -> Result<Self> {
        if levels.len() != periods * indicators {
            return Err(Error::validation(format!(
                "scenario slice has {} values, expected {periods}x{indicators}",
                levels.len()
            )));
        }
        Ok(Self { levels, periods, indicators })
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn indicators(&self) -> usize {
        self.indicators
    }

    pub fn row(&self, t: usize) -> &'a [f64] {
        &self.levels[t * self.indicators..(t + 1) * self.indicators]
    }

    pub fn levels(&self) -> &'a [f64] {
        self.levels
    }
}

/// Generates `count` scenarios from the model. Scenario `i` draws from its
/// own ChaCha20 stream keyed by `(seed, i)`, so any subset can be produced
/// independently with identical values.
pub fn generate_scenarios(config: &EconomicModelConfig, count: usize) -> Result<ScenarioSet> {
    if count == 0 {
        return Err(Error::validation("scenario count must be at least 1"));
    }
    generate_scenario_range(config, 0..count)
}

pub fn generate_scenario_range(config: &EconomicModelConfig, range: Range<usize>) -> Result<ScenarioSet> {
    config.validate()?;
    if range.is_empty() {
        return Err(Error::validation("scenario range is empty"));
    }
    let factor = config.factor()?;
    let stride = config.period_count * config.indicator_count;
    let blocks = par::map_indices(range.clone(), |i| simulate_path(config, &factor, i));
    let mut data = Vec::with_capacity(range.len() * stride);
    for b in blocks {
        data.extend_from_slice(&b);
    }
    Ok(ScenarioSet {
        data,
        count: range.len(),
        periods: config.period_count,
        indicators: config.indicator_count,
        start: range.start,
        seed: config.seed,
        config_digest: config.digest(),
    })
}

fn simulate_path(config: &EconomicModelConfig, factor: &CovarianceFactor, index: usize) -> Vec<f64> {
    let k = config.indicator_count;
    let t_count = config.period_count;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let mut out = Vec::with_capacity(t_count * k);
    out.extend_from_slice(&config.initial_levels);
    let mut z = vec![0.0; k];
    let mut g = vec![0.0; k];
    for t in 1..t_count {
        for zj in z.iter_mut() {
            *zj = rng.sample(StandardNormal);
        }
        factor.transform(&config.drift, &z, &mut g);
        for j in 0..k {
            let prev = out[(t - 1) * k + j];
            out.push(prev * g[j].exp());
        }
    }
    out
}

impl ScenarioSet {
    pub fn from_parts(
        data: Vec<f64>,
        count: usize,
        periods: usize,
        indicators: usize,
        start: usize,
        seed: u64,
        config_digest: u64,
    ) -> Result<Self> {
        if count == 0 || periods == 0 || indicators == 0 {
            return Err(Error::validation("scenario set dimensions must be positive"));
        }
        if data.len() != count * periods * indicators {
            return Err(Error::validation(format!(
                "scenario data has {} values, expected {count}x{periods}x{indicators}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::validation(format!("indicator level {v} is not strictly positive")));
        }
        Ok(Self { data, count, periods, indicators, start, seed, config_digest })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn indicators(&self) -> usize {
        self.indicators
    }

    /// Global index of the first scenario in this block.
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_digest(&self) -> u64 {
        self.config_digest
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn stride(&self) -> usize {
        self.periods * self.indicators
    }

    /// Scenario at local index `i`.
    pub fn scenario(&self, i: usize) -> Scenario<'_> {
        let s = self.stride();
        Scenario { levels: &self.data[i * s..(i + 1) * s], periods: self.periods, indicators: self.indicators }
    }

    /// Copies local scenarios `range` into a new block.
    pub fn slice(&self, range: Range<usize>) -> Result<ScenarioSet> {
        if range.is_empty() || range.end > self.count {
            return Err(Error::validation(format!(
                "range {range:?} outside scenario set of {}",
                self.count
            )));
        }
        let s = self.stride();
        Ok(ScenarioSet {
            data: self.data[range.start * s..range.end * s].to_vec(),
            count: range.len(),
            periods: self.periods,
            indicators: self.indicators,
            start: self.start + range.start,
            seed: self.seed,
            config_digest: self.config_digest,
        })
    }

    /// SHA-256 of the level data, hex encoded.
    pub fn data_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Binary layout: `"SCEN"`, version `u32`, then `N`, `T`, `K`, seed and
    /// config digest as `u64`, followed by row-major `f64` levels. All
    /// integers and floats are little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(SCENARIO_MAGIC);
        header.extend_from_slice(&SCENARIO_VERSION.to_le_bytes());
        header.extend_from_slice(&(self.count as u64).to_le_bytes());
        header.extend_from_slice(&(self.periods as u64).to_le_bytes());
        header.extend_from_slice(&(self.indicators as u64).to_le_bytes());
        header.extend_from_slice(&self.seed.to_le_bytes());
        header.extend_from_slice(&self.config_digest.to_le_bytes());
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(self.data.len() * 8);
        for v in &self.data {
            body.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&body)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<ScenarioSet> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)
            .map_err(|e| Error::validation(format!("scenario file header: {e}")))?;
        if &header[..4] != SCENARIO_MAGIC {
            return Err(Error::validation("not a scenario file (bad magic)"));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != SCENARIO_VERSION {
            return Err(Error::validation(format!("unsupported scenario file version {version}")));
        }
        let field = |i: usize| u64::from_le_bytes(header[8 + 8 * i..16 + 8 * i].try_into().unwrap());
        let (n, t, k, seed, digest) = (field(0) as usize, field(1) as usize, field(2) as usize, field(3), field(4));
        let values = n
            .checked_mul(t)
            .and_then(|v| v.checked_mul(k))
            .ok_or_else(|| Error::validation("scenario file dimensions overflow"))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != values * 8 {
            return Err(Error::validation(format!(
                "scenario file body has {} bytes, expected {}",
                body.len(),
                values * 8
            )));
        }
        let data = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        ScenarioSet::from_parts(data, n, t, k, 0, seed, digest)
    }

    /// CSV with one row per (scenario, period): `scenario,period,ind0,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["scenario".to_string(), "period".to_string()];
        header.extend((0..self.indicators).map(|j| format!("ind{j}")));
        out.write_record(&header).map_err(csv_err)?;
        for i in 0..self.count {
            let sc = self.scenario(i);
            for t in 0..self.periods {
                let mut rec = vec![(self.start + i).to_string(), t.to_string()];
                rec.extend(sc.row(t).iter().map(|v| format!("{v:.17e}")));
                out.write_record(&rec).map_err(csv_err)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
