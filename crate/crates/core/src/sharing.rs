//! Stage C: coverage ledgers and the weight-sharing rules.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::density::format_float;
use crate::scalar::{lit, mass_tol, to_f64, Real};
use crate::transport::TransportPlan;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SharingMethod {
    /// Element-wise minimum of remaining weights.
    Original,
    /// Element-wise maximum of per-agent coverage progress.
    Proposed,
    /// Single global ledger.
    Centralized,
}

impl SharingMethod {
    pub const ALL: [SharingMethod; 3] = [SharingMethod::Original, SharingMethod::Proposed, SharingMethod::Centralized];

    pub fn as_str(&self) -> &'static str {
        match self {
            SharingMethod::Original => "original",
            SharingMethod::Proposed => "proposed",
            SharingMethod::Centralized => "centralized",
        }
    }
}

impl fmt::Display for SharingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SharingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(SharingMethod::Original),
            "proposed" => Ok(SharingMethod::Proposed),
            "centralized" => Ok(SharingMethod::Centralized),
            other => Err(Error::Validation(format!(
                "unknown sharing method {other:?} (expected original, proposed or centralized)"
            ))),
        }
    }
}

/// One agent's view of the remaining weights and of everyone's progress.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageLedger<T: Real> {
    owner: usize,
    agents: usize,
    beta0: Vec<T>,
    beta: Vec<T>,
    /// Row-major `agents × N`; row `l` is the progress of agent `l` as known here.
    progress: Vec<T>,
    share_count: usize,
}

impl<T: Real> CoverageLedger<T> {
    pub fn new(owner: usize, agents: usize, beta0: Vec<T>) -> Result<Self> {
        if owner >= agents {
            return Err(Error::Contract(format!("owner {owner} out of range for {agents} agents")));
        }
        if let Some((j, b)) = beta0.iter().enumerate().find(|(_, b)| !(**b >= T::zero())) {
            return Err(Error::Validation(format!("initial weight {b} at sample {j} is negative")));
        }
        let n = beta0.len();
        Ok(CoverageLedger {
            owner,
            agents,
            beta: beta0.clone(),
            beta0,
            progress: vec![T::zero(); agents * n],
            share_count: 0,
        })
    }

    /// Rebuilds a ledger from stored parts, e.g. a run directory.
    pub fn from_parts(
        owner: usize,
        agents: usize,
        beta0: Vec<T>,
        beta: Vec<T>,
        progress: Vec<T>,
        share_count: usize,
    ) -> Result<Self> {
        let mut led = Self::new(owner, agents, beta0)?;
        let n = led.samples();
        if beta.len() != n {
            return Err(Error::Dimension {
                what: "ledger remaining weights",
                expected: n,
                got: beta.len(),
            });
        }
        if progress.len() != agents * n {
            return Err(Error::Dimension {
                what: "ledger progress matrix",
                expected: agents * n,
                got: progress.len(),
            });
        }
        led.beta = beta;
        led.progress = progress;
        led.share_count = share_count;
        Ok(led)
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn samples(&self) -> usize {
        self.beta0.len()
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn beta0(&self) -> &[T] {
        &self.beta0
    }

    pub fn share_count(&self) -> usize {
        self.share_count
    }

    pub fn progress_row(&self, l: usize) -> &[T] {
        let n = self.samples();
        &self.progress[l * n..(l + 1) * n]
    }

    /// Row-major progress matrix.
    pub fn progress(&self) -> &[T] {
        &self.progress
    }

    pub fn progress_rows(&self) -> Vec<Vec<T>> {
        (0..self.agents).map(|l| self.progress_row(l).to_vec()).collect()
    }

    /// `Σ_j β_j`.
    pub fn remaining(&self) -> T {
        crate::scalar::compensated_sum(self.beta.iter().copied())
    }

    /// Adds this agent's own transport to its progress row and removes it from `β`.
    pub fn record_own_progress(&mut self, plan: &TransportPlan<T>) -> Result<()> {
        self.record_progress(self.owner, plan)
    }

    /// As [`record_own_progress`](Self::record_own_progress) for an arbitrary
    /// row; used by the shared centralized ledger.
    pub fn record_progress(&mut self, row: usize, plan: &TransportPlan<T>) -> Result<()> {
        if row >= self.agents {
            return Err(Error::Contract(format!("progress row {row} out of range")));
        }
        let n = self.samples();
        let tol = mass_tol::<T>();
        for &(j, g) in &plan.entries {
            if j >= n {
                return Err(Error::Contract(format!("plan references sample {j} of {n}")));
            }
            if g < T::zero() || self.beta[j] - g < -tol {
                return Err(Error::Contract(format!(
                    "plan moves {g} from sample {j} holding {}",
                    self.beta[j]
                )));
            }
        }
        for &(j, g) in &plan.entries {
            self.progress[row * n + j] += g;
            let v = self.beta[j] - g;
            self.beta[j] = if v < T::zero() { T::zero() } else { v };
        }
        Ok(())
    }

    /// Recomputes `β = β⁰ − Σ_l Γ_l`, clamped at zero where several agents
    /// have covered the same mass.
    pub fn recompute_from_progress(&mut self) {
        let n = self.samples();
        for j in 0..n {
            let mut used = T::zero();
            for l in 0..self.agents {
                used += self.progress[l * n + j];
            }
            let v = self.beta0[j] - used;
            self.beta[j] = if v < T::zero() { T::zero() } else { v };
        }
    }

    /// Largest deviation between `β` and `max(0, β⁰ − Σ_l Γ_l)`.
    pub fn consistency_error(&self) -> T {
        let n = self.samples();
        let mut worst = T::zero();
        for j in 0..n {
            let mut used = T::zero();
            for l in 0..self.agents {
                used += self.progress[l * n + j];
            }
            let expect = (self.beta0[j] - used).max(T::zero());
            worst = worst.max((self.beta[j] - expect).abs());
        }
        worst
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.agents != other.agents {
            return Err(Error::Dimension {
                what: "ledger agent count",
                expected: self.agents,
                got: other.agents,
            });
        }
        if self.samples() != other.samples() {
            return Err(Error::Dimension {
                what: "ledger sample count",
                expected: self.samples(),
                got: other.samples(),
            });
        }
        Ok(())
    }

    /// Writes one `agent,row_agent,sample_index,gamma` row per nonzero progress entry.
    pub fn write_snapshot<W: Write>(ledgers: &[Self], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["agent", "row_agent", "sample_index", "gamma"])?;
        for led in ledgers {
            let n = led.samples();
            for l in 0..led.agents {
                for j in 0..n {
                    let g = led.progress[l * n + j];
                    if g != T::zero() {
                        w.write_record([
                            led.owner.to_string(),
                            l.to_string(),
                            j.to_string(),
                            format_float(to_f64(g)),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a snapshot back as `(agent, row_agent, sample_index, gamma)` tuples.
    pub fn read_snapshot<R: Read>(input: R) -> Result<Vec<(usize, usize, usize, T)>> {
        let mut r = csv::Reader::from_reader(input);
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse_usize = |i: usize| -> Result<usize> {
                rec.get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Validation(format!("snapshot column {} is not an index", i + 1)))
            };
            let g: f64 = rec
                .get(3)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Validation("snapshot gamma is not a number".into()))?;
            out.push((parse_usize(0)?, parse_usize(1)?, parse_usize(2)?, lit(g)));
        }
        Ok(out)
    }
}

/// Max-merges both progress matrices and recomputes both `β`. Returns whether
/// either ledger changed.
pub fn merge_proposed<T: Real>(r: &mut CoverageLedger<T>, s: &mut CoverageLedger<T>) -> Result<bool> {
    r.check_compatible(s)?;
    let mut changed = false;
    for (a, b) in r.progress.iter_mut().zip(s.progress.iter_mut()) {
        if *a != *b {
            changed = true;
            let m = a.max(*b);
            *a = m;
            *b = m;
        }
    }
    if changed {
        r.recompute_from_progress();
        s.recompute_from_progress();
    }
    r.share_count += 1;
    s.share_count += 1;
    Ok(changed)
}

/// Element-wise minimum of the remaining weights. Progress rows are not
/// exchanged.
pub fn merge_original<T: Real>(r: &mut CoverageLedger<T>, s: &mut CoverageLedger<T>) -> Result<bool> {
    r.check_compatible(s)?;
    let mut changed = false;
    for (a, b) in r.beta.iter_mut().zip(s.beta.iter_mut()) {
        if *a != *b {
            changed = true;
            let m = half_sum_min(*a, *b);
            *a = m;
            *b = m;
        }
    }
    r.share_count += 1;
    s.share_count += 1;
    Ok(changed)
}

/// `min(a, b)` written as `(a + b − |a − b|) / 2`, returning the exact
/// operand when the formula's rounding would differ from it.
pub fn half_sum_min<T: Real>(a: T, b: T) -> T {
    let v = (a + b - (a - b).abs()) * lit::<T>(0.5);
    let m = a.min(b);
    if v == m {
        v
    } else {
        m
    }
}

/// `β⁰ − Σ_l Γ_l` from the agents' own progress rows.
pub fn centralized_remaining<T: Real>(progress: &[Vec<T>], beta0: &[T]) -> Result<Vec<T>> {
    let tol = mass_tol::<T>();
    let mut out = beta0.to_vec();
    for row in progress {
        if row.len() != beta0.len() {
            return Err(Error::Dimension {
                what: "progress row",
                expected: beta0.len(),
                got: row.len(),
            });
        }
        for (o, g) in out.iter_mut().zip(row) {
            *o -= *g;
        }
    }
    for (j, v) in out.iter_mut().enumerate() {
        if *v < -tol {
            return Err(Error::Bookkeeping {
                index: j,
                value: to_f64(*v),
            });
        }
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    Ok(out)
}

/// `δ = β_original − (β⁰ − Σ_l Γ_l)` against a shadow progress ledger.
pub fn omission_delta<T: Real>(beta_original: &[T], shadow_progress: &[Vec<T>], beta0: &[T]) -> Vec<T> {
    beta_original
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let used = shadow_progress.iter().fold(T::zero(), |acc, row| acc + row[j]);
            b - (beta0[j] - used)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn plan(entries: Vec<(usize, f64)>) -> TransportPlan<f64> {
        let alpha = entries.iter().map(|e| e.1).sum();
        TransportPlan {
            entries,
            target: Vector2::zeros(),
            alpha,
        }
    }

    #[test]
    fn own_progress() {
        let mut led = CoverageLedger::new(0, 2, vec![0.5, 0.3, 0.2]).unwrap();
        led.record_own_progress(&plan(vec![(0, 0.3), (1, 0.2)])).unwrap();
        assert_eq!(led.progress_row(0), &[0.3, 0.2, 0.0]);
        assert!((led.beta()[0] - 0.2).abs() < 1e-15);
        assert!((led.beta()[1] - 0.1).abs() < 1e-15);
        let before = led.clone();
        led.record_own_progress(&plan(vec![])).unwrap();
        assert_eq!(led, before);
        led.record_own_progress(&plan(vec![(0, 0.1)])).unwrap();
        assert!((led.progress_row(0)[0] - 0.4).abs() < 1e-15);
        assert!(led.consistency_error() < 1e-15);
    }

    #[test]
    fn overdraw_rejected() {
        let mut led = CoverageLedger::new(0, 1, vec![0.1]).unwrap();
        assert!(matches!(led.record_own_progress(&plan(vec![(0, 0.2)])), Err(Error::Contract(_))));
    }

    #[test]
    fn proposed_propagates_rows() {
        let beta0 = vec![0.25; 4];
        let mut a = CoverageLedger::new(0, 4, beta0.clone()).unwrap();
        let mut c = CoverageLedger::new(2, 4, beta0.clone()).unwrap();
        c.record_own_progress(&plan(vec![(1, 0.1)])).unwrap();
        c.record_own_progress(&plan(vec![(1, 0.1)])).unwrap();
        merge_proposed(&mut a, &mut c).unwrap();
        assert!((a.progress_row(2)[1] - 0.2).abs() < 1e-15);
        assert_eq!(a.progress_row(2), c.progress_row(2));
        assert_eq!(a.beta(), c.beta());
        assert_eq!(a.share_count(), 1);
        let snapshot = (a.clone(), c.clone());
        assert!(!merge_proposed(&mut a, &mut c).unwrap());
        assert_eq!(a.beta(), snapshot.0.beta());
    }

    #[test]
    fn relay_reaches_third_agent() {
        let beta0 = vec![0.5, 0.5];
        let mut r = CoverageLedger::new(0, 3, beta0.clone()).unwrap();
        let mut s = CoverageLedger::new(1, 3, beta0.clone()).unwrap();
        let mut t = CoverageLedger::new(2, 3, beta0).unwrap();
        r.record_own_progress(&plan(vec![(0, 0.3)])).unwrap();
        merge_proposed(&mut r, &mut s).unwrap();
        merge_proposed(&mut s, &mut t).unwrap();
        assert!((t.progress_row(0)[0] - 0.3).abs() < 1e-15);
        assert!((t.beta()[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn original_takes_minimum() {
        let mut r = CoverageLedger::new(0, 2, vec![0.5, 0.5]).unwrap();
        let mut s = CoverageLedger::new(1, 2, vec![0.5, 0.5]).unwrap();
        r.record_own_progress(&plan(vec![(1, 0.3)])).unwrap();
        s.record_own_progress(&plan(vec![(0, 0.1), (1, 0.2)])).unwrap();
        merge_original(&mut r, &mut s).unwrap();
        assert!((r.beta()[0] - 0.4).abs() < 1e-15);
        assert!((r.beta()[1] - 0.2).abs() < 1e-15);
        assert_eq!(r.beta(), s.beta());
        assert_eq!(r.progress_row(1), &[0.0, 0.0]);
        assert!(!merge_original(&mut r, &mut s).unwrap());
    }

    #[test]
    fn half_sum_identity() {
        assert_eq!(half_sum_min(3.0, 5.0), 3.0);
        assert_eq!(half_sum_min(5.0, 3.0), 3.0);
        assert_eq!(half_sum_min(0.1, 0.3), 0.1);
    }

    #[test]
    fn centralized_cases() {
        let beta0: Vec<f64> = vec![0.5, 0.5];
        assert_eq!(centralized_remaining(&[vec![0.0, 0.0]], &beta0).unwrap(), beta0);
        assert_eq!(centralized_remaining(&[vec![0.5, 0.5]], &beta0).unwrap(), vec![0.0, 0.0]);
        let r = centralized_remaining(&[vec![0.3, 0.0], vec![0.0, 0.2]], &beta0).unwrap();
        assert!((r[0] - 0.2).abs() < 1e-15 && (r[1] - 0.3).abs() < 1e-15);
        assert!(matches!(
            centralized_remaining(&[vec![0.6, 0.0]], &beta0),
            Err(Error::Bookkeeping { index: 0, .. })
        ));
    }

    #[test]
    fn delta_zero_without_sharing() {
        let beta0 = vec![0.5, 0.5];
        let mut led = CoverageLedger::new(0, 2, beta0.clone()).unwrap();
        led.record_own_progress(&plan(vec![(0, 0.2)])).unwrap();
        let d = omission_delta(led.beta(), &led.progress_rows(), &beta0);
        assert!(d.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn method_parsing() {
        for m in SharingMethod::ALL {
            assert_eq!(m.as_str().parse::<SharingMethod>().unwrap(), m);
        }
        assert!("gossip".parse::<SharingMethod>().is_err());
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut led = CoverageLedger::new(1, 2, vec![0.5, 0.5]).unwrap();
        led.record_own_progress(&plan(vec![(1, 0.125)])).unwrap();
        let mut buf = Vec::new();
        CoverageLedger::write_snapshot(&[led], &mut buf).unwrap();
        let rows = CoverageLedger::<f64>::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(rows, vec![(1, 1, 1, 0.125)]);
    }
}
