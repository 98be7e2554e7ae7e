//! Analytic cluster timing model.
//!
//! A star cluster of `m` machines processing `scen` scenarios is modelled as
//! `rate * scen / m + (m - 1) * tt`: the compute share of one machine plus
//! one sequential transaction per slave. The optimal (binomial) tree replaces
//! the transaction term by `ceil(log2 m) * tt`.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::TopologyKind;

/// Measured cluster runs (minutes) shipped with the crate.
pub const CLUSTER_RUNS_FIXTURE: &str = include_str!("../fixtures/cluster_runs.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfParams {
    /// Minutes per scenario on one machine.
    pub per_scenario_time: f64,
    /// Minutes per sequential transaction.
    pub transaction_time: f64,
    pub machines: usize,
}

impl PerfParams {
    pub fn new(per_scenario_time: f64, transaction_time: f64, machines: usize) -> Result<Self> {
        let p = Self { per_scenario_time, transaction_time, machines };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.per_scenario_time > 0.0) {
            return Err(Error::validation("per_scenario_time must be positive"));
        }
        if !(self.transaction_time >= 0.0) {
            return Err(Error::validation("transaction_time must be non-negative"));
        }
        if self.machines == 0 {
            return Err(Error::validation("machines must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Tcp,
    Udp,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Tcp => "tcp",
            Protocol::Udp => "udp",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tcp" => Ok(Protocol::Tcp),
            "udp" => Ok(Protocol::Udp),
            other => Err(Error::validation(format!("unknown protocol `{other}`"))),
        }
    }
}

/// One measured optimization run. Single-machine runs carry no protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRow {
    pub scenario_count: usize,
    pub machine_count: usize,
    pub duration: f64,
    pub protocol: Option<Protocol>,
}

fn check_counts(scen: usize, m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::validation("machine count must be at least 1"));
    }
    if scen < m {
        return Err(Error::validation(format!("{scen} scenarios cannot occupy {m} machines")));
    }
    Ok(())
}

/// Star (one-level) cluster of `machines` machines: compute share plus
/// `machines - 1` sequential transactions.
pub fn predict_star(scen: usize, machines: usize, p: &PerfParams) -> Result<f64> {
    check_counts(scen, machines)?;
    Ok(p.per_scenario_time * scen as f64 / machines as f64 + (machines - 1) as f64 * p.transaction_time)
}

/// Optimal tree of `machines` machines: compute share plus
/// `ceil(log2 machines)` transaction rounds.
pub fn predict_optimal_tree(scen: usize, machines: usize, p: &PerfParams) -> Result<f64> {
    check_counts(scen, machines)?;
    Ok(p.transaction_time * ceil_log2(machines) as f64 + p.per_scenario_time * scen as f64 / machines as f64)
}

pub fn predict(kind: TopologyKind, scen: usize, machines: usize, p: &PerfParams) -> Result<f64> {
    match kind {
        TopologyKind::Star => predict_star(scen, machines, p),
        TopologyKind::OptimalTree => predict_optimal_tree(scen, machines, p),
        other => Err(Error::UnsupportedSchedule(format!("no timing model for {other}"))),
    }
}

pub fn ceil_log2(m: usize) -> u32 {
    if m <= 1 {
        0
    } else {
        usize::BITS - (m - 1).leading_zeros()
    }
}

/// Least-squares rate through the origin over single-machine rows.
pub fn fit_rate(singles: &[MeasurementRow]) -> Result<f64> {
    let rows: Vec<_> = singles.iter().filter(|r| r.machine_count == 1).collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData("no single-machine rows".into()));
    }
    let sxy: f64 = rows.iter().map(|r| r.scenario_count as f64 * r.duration).sum();
    let sxx: f64 = rows.iter().map(|r| (r.scenario_count as f64).powi(2)).sum();
    Ok(sxy / sxx)
}

/// Single-machine time for `scen / machines` scenarios: the measured row when
/// one exists at exactly that count, otherwise the nearest measured row scaled
/// linearly.
pub fn single_machine_baseline(singles: &[MeasurementRow], scen: usize, machines: usize) -> Result<f64> {
    let rows: Vec<_> = singles.iter().filter(|r| r.machine_count == 1).collect();
    if rows.is_empty() {
        return Err(Error::InsufficientData("no single-machine baseline rows".into()));
    }
    if scen.is_multiple_of(machines) {
        if let Some(r) = rows.iter().find(|r| r.scenario_count == scen / machines) {
            return Ok(r.duration);
        }
    }
    let target = scen as f64 / machines as f64;
    let nearest = rows
        .iter()
        .min_by(|a, b| {
            let da = (a.scenario_count as f64 - target).abs();
            let db = (b.scenario_count as f64 - target).abs();
            da.total_cmp(&db).then(a.scenario_count.cmp(&b.scenario_count))
        })
        .unwrap();
    Ok(nearest.duration * target / nearest.scenario_count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowFit {
    pub row: MeasurementRow,
    pub baseline: f64,
    pub transactions: usize,
    /// `(duration - baseline) / transactions`.
    pub per_machine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransactionFit {
    pub protocol: Protocol,
    pub rows: Vec<RowFit>,
    /// Mean of the per-row values.
    pub transaction_time: f64,
    /// `max |row - mean| / mean` over the rows.
    pub max_relative_spread: f64,
}

/// Per-protocol transaction time from cluster rows against single-machine
/// baselines: `(T_cluster - T_single(scen/m)) / (m - 1)` per row, averaged.
pub fn fit_transaction_time(rows: &[MeasurementRow], singles: &[MeasurementRow]) -> Result<Vec<TransactionFit>> {
    if singles.iter().all(|r| r.machine_count != 1) {
        return Err(Error::InsufficientData("no single-machine baseline rows".into()));
    }
    let cluster: Vec<_> = rows.iter().filter(|r| r.machine_count >= 2).collect();
    if cluster.is_empty() {
        return Err(Error::InsufficientData("no cluster rows to fit".into()));
    }
    let mut fits = Vec::new();
    for protocol in [Protocol::Tcp, Protocol::Udp] {
        let mut per_row = Vec::new();
        for r in cluster.iter().filter(|r| r.protocol == Some(protocol)) {
            let baseline = single_machine_baseline(singles, r.scenario_count, r.machine_count)?;
            let transactions = r.machine_count - 1;
            per_row.push(RowFit {
                row: **r,
                baseline,
                transactions,
                per_machine: (r.duration - baseline) / transactions as f64,
            });
        }
        if per_row.is_empty() {
            continue;
        }
        let mean = per_row.iter().map(|r| r.per_machine).sum::<f64>() / per_row.len() as f64;
        let spread = per_row.iter().map(|r| (r.per_machine - mean).abs()).fold(0.0, f64::max) / mean.abs();
        fits.push(TransactionFit { protocol, rows: per_row, transaction_time: mean, max_relative_spread: spread });
    }
    if fits.is_empty() {
        return Err(Error::InsufficientData("cluster rows carry no protocol".into()));
    }
    Ok(fits)
}

/// Smallest `m` with `cluster_time / tt < m (m - 1)`: from there on another
/// star slave costs more in transactions than it saves in compute.
pub fn break_even_star(scen_cluster_time: f64, tt: f64) -> Result<usize> {
    if !(tt > 0.0) {
        return Err(Error::validation("transaction time must be positive"));
    }
    let ratio = scen_cluster_time / tt;
    let mut m = 1usize;
    while !(ratio < (m * (m - 1)) as f64) {
        m += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub topology: TopologyKind,
    pub scen: usize,
    pub machines: usize,
    pub time: f64,
    pub speedup: f64,
    /// Adding this machine made the run slower than with one fewer.
    pub increases: bool,
}

/// Predicted time and speedup for star and optimal tree over `machines`.
pub fn efficiency_curves(
    scen_list: &[usize],
    machines: std::ops::RangeInclusive<usize>,
    p: &PerfParams,
) -> Result<Vec<CurveRow>> {
    p.validate()?;
    let mut out = Vec::new();
    for kind in [TopologyKind::Star, TopologyKind::OptimalTree] {
        for &scen in scen_list {
            let single = predict(kind, scen, 1, p)?;
            let mut prev: Option<f64> = None;
            for m in machines.clone() {
                if m == 0 || m > scen {
                    continue;
                }
                let time = predict(kind, scen, m, p)?;
                out.push(CurveRow {
                    topology: kind,
                    scen,
                    machines: m,
                    time,
                    speedup: single / time,
                    increases: prev.is_some_and(|t| time > t),
                });
                prev = Some(time);
            }
        }
    }
    Ok(out)
}

/// Largest `m` before the first increase on the given curve, i.e. the
/// machine count beyond which adding machines makes the run slower.
pub fn turning_point(curve: &[CurveRow], kind: TopologyKind, scen: usize) -> Option<usize> {
    let rows: Vec<_> = curve.iter().filter(|r| r.topology == kind && r.scen == scen).collect();
    rows.iter().find(|r| r.increases).map(|r| r.machines - 1)
}

pub fn curves_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from("topology,scen,machines,time,speedup,increases\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{}",
            r.topology, r.scen, r.machines, r.time, r.speedup, r.increases
        );
    }
    s
}

/// Reads `scen,machines,duration,protocol` rows; `protocol` is empty for
/// single-machine runs. Errors name the 1-based line.
pub fn parse_measurements(text: &str) -> Result<Vec<MeasurementRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).flexible(true).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        let err = |message: String| Error::Parse { line, message };
        if rec.len() < 3 || rec.len() > 4 {
            return Err(err(format!("expected 3 or 4 fields, got {}", rec.len())));
        }
        let scenario_count = rec[0].parse::<usize>().map_err(|e| err(format!("scen: {e}")))?;
        let machine_count = rec[1].parse::<usize>().map_err(|e| err(format!("machines: {e}")))?;
        let duration = rec[2].parse::<f64>().map_err(|e| err(format!("duration: {e}")))?;
        let protocol = match rec.get(3).map(str::trim) {
            None | Some("") => None,
            Some(p) => Some(p.parse::<Protocol>().map_err(|e| err(e.to_string()))?),
        };
        if scenario_count == 0 || machine_count == 0 || !(duration > 0.0) {
            return Err(err("scen, machines and duration must be positive".into()));
        }
        if machine_count >= 2 && protocol.is_none() {
            return Err(err("cluster rows need a protocol".into()));
        }
        rows.push(MeasurementRow { scenario_count, machine_count, duration, protocol });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture() -> Vec<MeasurementRow> {
        parse_measurements(CLUSTER_RUNS_FIXTURE).unwrap()
    }

    #[test]
    fn star_reproduces_two_machine_row() {
        let p = PerfParams::new(52.0 / 1000.0, 80.0, 2).unwrap();
        let t = predict_star(2000, 2, &p).unwrap();
        assert!((t - 132.0).abs() < 1e-9);
        assert!((t - 133.0).abs() / 133.0 < 0.01);
    }

    #[test]
    fn free_communication_is_linear_speedup() {
        let p = PerfParams::new(0.05, 0.0, 1).unwrap();
        for m in 1..20 {
            assert_eq!(predict_star(1000, m, &p).unwrap(), 0.05 * 1000.0 / m as f64);
        }
        assert_eq!(predict_optimal_tree(1000, 1, &p).unwrap(), 0.05 * 1000.0);
    }

    #[test]
    fn ten_thousand_on_three_compute_share() {
        let p = PerfParams::new(152.0 / 3000.0, 0.0, 3).unwrap();
        let t = predict_star(10000, 3, &p).unwrap();
        assert!((t - 168.888).abs() < 1e-2, "{t}");
        assert_eq!(t.round(), 169.0);
    }

    #[test]
    fn sixteen_machines_transaction_terms() {
        let p = PerfParams::new(0.01, 10.0, 16).unwrap();
        let compute = 0.01 * 1600.0 / 16.0;
        assert!((predict_optimal_tree(1600, 16, &p).unwrap() - (40.0 + compute)).abs() < 1e-12);
        assert!((predict_star(1600, 16, &p).unwrap() - (150.0 + compute)).abs() < 1e-12);
        assert!(predict_star(3, 4, &p).is_err());
    }

    #[test]
    fn four_machine_tree_speedups_are_reported() {
        let rows = fixture();
        let rate = fit_rate(&rows).unwrap();
        let fits = fit_transaction_time(&rows, &rows).unwrap();
        let tt = fits.iter().find(|f| f.protocol == Protocol::Tcp).unwrap().transaction_time;
        let p = PerfParams::new(rate, tt, 4).unwrap();
        for scen in [10000, 6000] {
            let s = predict_star(scen, 1, &p).unwrap() / predict_optimal_tree(scen, 4, &p).unwrap();
            assert!(s.is_finite() && s > 0.0);
        }
    }

    #[test]
    fn fit_recovers_two_machine_rows() {
        let rows = fixture();
        let fits = fit_transaction_time(&rows, &rows).unwrap();
        let tcp = fits.iter().find(|f| f.protocol == Protocol::Tcp).unwrap();
        let udp = fits.iter().find(|f| f.protocol == Protocol::Udp).unwrap();
        let first_tcp = &tcp.rows[0];
        assert_eq!(first_tcp.baseline, 52.0);
        assert_eq!(first_tcp.per_machine, 81.0);
        assert_eq!(udp.rows[0].per_machine, 7.0);
        let last = tcp.rows.last().unwrap();
        assert_eq!(last.transactions, 2);
        assert!((last.baseline - 168.888).abs() < 1e-2);
        assert!((last.per_machine - 77.5).abs() < 0.1, "{}", last.per_machine);
        assert!(tcp.max_relative_spread <= 0.07, "{}", tcp.max_relative_spread);
    }

    #[test]
    fn identical_rows_have_zero_spread() {
        let singles = [MeasurementRow { scenario_count: 100, machine_count: 1, duration: 10.0, protocol: None }];
        let row = MeasurementRow { scenario_count: 200, machine_count: 2, duration: 13.0, protocol: Some(Protocol::Tcp) };
        let fits = fit_transaction_time(&[row, row, row], &singles).unwrap();
        assert_eq!(fits[0].max_relative_spread, 0.0);
        assert_eq!(fits[0].transaction_time, 3.0);
    }

    #[test]
    fn fit_without_baselines_fails() {
        let row = MeasurementRow { scenario_count: 200, machine_count: 2, duration: 13.0, protocol: Some(Protocol::Tcp) };
        assert!(matches!(fit_transaction_time(&[row], &[]), Err(Error::InsufficientData(_))));
        assert!(matches!(fit_transaction_time(&[], &fixture()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn break_even_examples() {
        assert_eq!(break_even_star(250.0, 75.0).unwrap(), 3);
        assert_eq!(break_even_star(250.0, 7.0).unwrap(), 7);
        assert_eq!(break_even_star(250.0, 250.0).unwrap(), 2);
        assert_eq!(break_even_star(10.0, 400.0).unwrap(), 2);
        assert!(break_even_star(250.0, 0.0).is_err());
    }

    #[test]
    fn curves_mark_increases() {
        let p = PerfParams::new(0.05, 8.0, 1).unwrap();
        let rows = efficiency_curves(&[6000], 1..=16, &p).unwrap();
        assert_eq!(rows.len(), 32);
        let star_turn = turning_point(&rows, TopologyKind::Star, 6000).unwrap();
        // 300/8 = 37.5 lies between 6*5 and 7*6.
        assert_eq!(star_turn, 6);
        let csv = curves_csv(&rows);
        assert!(csv.starts_with("topology,scen,machines,time,speedup,increases\n"));
        assert_eq!(csv.lines().count(), 33);
    }

    #[test]
    fn measurement_parse_errors_name_the_line() {
        let err = parse_measurements("scen,machines,duration,protocol\n100,1,5,\n200,2,x,tcp\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(parse_measurements("scen,machines,duration,protocol\n200,2,5,\n").is_err());
        assert!(parse_measurements("scen,machines,duration,protocol\n200,2,5,ftp\n").is_err());
        assert!(parse_measurements("scen,machines,duration,protocol\n").unwrap().is_empty());
    }

    proptest! {
        #[test]
        fn tree_never_slower_than_star(rate in 1e-4f64..1.0, tt in 0.0f64..100.0, m in 2usize..200, extra in 0usize..10_000) {
            let p = PerfParams::new(rate, tt, m).unwrap();
            let scen = m + extra;
            prop_assert!(predict_optimal_tree(scen, m, &p).unwrap() <= predict_star(scen, m, &p).unwrap());
        }

        #[test]
        fn break_even_monotone_in_tt(t in 1.0f64..1e4, tt in 0.01f64..1e3, bump in 0.0f64..1e3) {
            prop_assert!(break_even_star(t, tt + bump).unwrap() <= break_even_star(t, tt).unwrap());
        }
    }
}
