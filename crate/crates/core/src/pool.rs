//! Per-cycle sub-pool windows over the sorted pool.
//!
//! Positions are 0-based and windows half-open. With `w = N / I`:
//!
//! * cycle 1: `[0, round(beta * w))`
//! * interior cycle `i`: `[round((i - 1 + (1 - beta) / 2) * w), round((i - 1 + (1 + beta) / 2) * w))`
//! * cycle `I`: `[round(N - beta * w), N)`
//!
//! Rounding is half-up and every endpoint is clamped to `[0, N]`. `beta = 1`
//! tiles the pool into `I` consecutive segments; `beta > 1` makes adjacent
//! windows overlap and `beta < 1` leaves gaps between them.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::cdd::SortedPool;
use crate::error::{Error, Result};
use crate::featio::SelectionManifest;

// Round-off allowance for endpoints that land on exact halves.
const ROUND_SLACK: f64 = 1e-9;

fn round_half_up(x: f64) -> i64 {
    (x + 0.5 + ROUND_SLACK).floor() as i64
}

fn clamp_pos(x: i64, n: usize) -> usize {
    x.clamp(0, n as i64) as usize
}

/// The window for one cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubPool {
    pub cycle: usize,
    pub start: usize,
    pub end: usize,
    /// Unlabeled rows inside the window, in sorted-position order.
    pub members: Vec<usize>,
    pub beta: f64,
}

impl SubPool {
    pub fn window(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn window_len(&self) -> usize {
        self.end - self.start
    }
}

/// Labeled rows plus the per-cycle manifests that produced them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelState {
    labeled: BTreeSet<usize>,
    per_cycle: Vec<SelectionManifest>,
}

impl LabelState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the label state from a run's manifests.
    pub fn replay(manifests: &[SelectionManifest], n: usize) -> Result<Self> {
        let mut s = Self::new();
        for m in manifests {
            s.commit(m.clone(), n)?;
        }
        Ok(s)
    }

    /// Adds a cycle's selection. Rejects indices outside `[0, n)` and rows
    /// that are already labeled.
    pub fn commit(&mut self, manifest: SelectionManifest, n: usize) -> Result<()> {
        let mut fresh = BTreeSet::new();
        for &i in &manifest.selected {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if self.labeled.contains(&i) || !fresh.insert(i) {
                return Err(Error::DuplicateSelection(i));
            }
        }
        self.labeled.extend(fresh);
        self.per_cycle.push(manifest);
        Ok(())
    }

    /// Marks rows as labeled without recording a cycle.
    pub fn absorb(&mut self, rows: &[usize]) {
        self.labeled.extend(rows.iter().copied());
    }

    pub fn is_labeled(&self, row: usize) -> bool {
        self.labeled.contains(&row)
    }

    pub fn labeled(&self) -> &BTreeSet<usize> {
        &self.labeled
    }

    pub fn labeled_vec(&self) -> Vec<usize> {
        self.labeled.iter().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.labeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labeled.is_empty()
    }

    pub fn per_cycle(&self) -> &[SelectionManifest] {
        &self.per_cycle
    }

    pub fn per_cycle_mut(&mut self) -> &mut [SelectionManifest] {
        &mut self.per_cycle
    }
}

/// Smallest feasible balancing factor: each window must hold at least `k` rows.
pub fn beta_floor(k: usize, cycles: usize, n: usize) -> f64 {
    (k * cycles) as f64 / n as f64
}

pub fn check_beta(beta: f64, k: usize, cycles: usize, n: usize) -> Result<()> {
    let floor = beta_floor(k, cycles, n);
    if !beta.is_finite() || beta < floor - 1e-12 {
        return Err(Error::InfeasibleBeta { beta, floor });
    }
    Ok(())
}

/// Window `[start, end)` in sorted positions for `cycle` of `cycles`.
pub fn window(n: usize, cycles: usize, cycle: usize, beta: f64) -> Result<(usize, usize)> {
    if cycles == 0 || cycle == 0 || cycle > cycles {
        return Err(Error::CycleOutOfRange { cycle, cycles });
    }
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let nf = n as f64;
    let it = cycles as f64;
    let len = round_half_up(beta * nf / it);
    let (start, end) = if cycle == 1 {
        (0, len)
    } else if cycle == cycles {
        (round_half_up(nf - beta * nf / it), n as i64)
    } else {
        let c = (cycle - 1) as f64;
        // (c + (1 -/+ beta)/2) * N/I, kept in one product to limit round-off
        let lo = (2.0 * c + 1.0 - beta) * nf / (2.0 * it);
        let hi = (2.0 * c + 1.0 + beta) * nf / (2.0 * it);
        (round_half_up(lo), round_half_up(hi))
    };
    let start = clamp_pos(start, n);
    let end = clamp_pos(end, n).max(start);
    Ok((start, end))
}

fn members_of(sp: &SortedPool, start: usize, end: usize, labeled: &LabelState) -> Vec<usize> {
    sp.order[start..end]
        .iter()
        .copied()
        .filter(|&r| !labeled.is_labeled(r))
        .collect()
}

/// Builds the sub-pool for `cycle`, excluding already-labeled rows.
pub fn make_subpool(
    sp: &SortedPool,
    cycle: usize,
    cycles: usize,
    beta: f64,
    labeled: &LabelState,
) -> Result<SubPool> {
    let n = sp.len();
    if n < cycles {
        return Err(Error::InvalidParameter(format!(
            "pool of {n} rows cannot be split into {cycles} cycles"
        )));
    }
    let (start, end) = window(n, cycles, cycle, beta)?;
    let members = members_of(sp, start, end, labeled);
    if members.is_empty() {
        return Err(Error::EmptySubPool { cycle });
    }
    Ok(SubPool {
        cycle,
        start,
        end,
        members,
        beta,
    })
}

/// Widens the window of `cycle` symmetrically, `N / I` positions per step,
/// until it holds at least `k` unlabeled rows or spans the whole pool.
/// Returns the (possibly unchanged) sub-pool; an error only if the whole pool
/// has no unlabeled row left.
pub fn widen_to_capacity(
    sp: &SortedPool,
    cycle: usize,
    cycles: usize,
    beta: f64,
    k: usize,
    labeled: &LabelState,
) -> Result<SubPool> {
    let n = sp.len();
    let (mut start, mut end) = window(n, cycles, cycle, beta)?;
    let mut members = members_of(sp, start, end, labeled);
    let (base_start, base_end) = (start, end);
    let step = (n as f64 / cycles as f64).max(1.0);
    let mut steps = 0usize;
    while members.len() < k && (start > 0 || end < n) {
        steps += 1;
        let total = (steps as f64 * step).round() as usize;
        // a side blocked by the pool boundary hands its share to the other side
        let (lo_room, hi_room) = (base_start, n - base_end);
        let hi = (total - (total / 2).min(lo_room)).min(hi_room);
        let lo = (total - hi).min(lo_room);
        start = base_start - lo;
        end = base_end + hi;
        members = members_of(sp, start, end, labeled);
    }
    if members.is_empty() {
        return Err(Error::EmptySubPool { cycle });
    }
    Ok(SubPool {
        cycle,
        start,
        end,
        members,
        beta,
    })
}

/// Overlap and gap structure of all `I` windows for one `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub windows: Vec<(usize, usize)>,
    /// `overlaps[i]` is the overlap between windows `i + 1` and `i + 2` (1-based cycles).
    pub overlaps: Vec<usize>,
    pub gaps: Vec<usize>,
    pub tiles_exactly: bool,
    /// Positions covered by no window.
    pub uncovered: usize,
}

pub fn subpool_coverage(cycles: usize, beta: f64, n: usize) -> Result<Coverage> {
    let windows = (1..=cycles)
        .map(|i| window(n, cycles, i, beta))
        .collect::<Result<Vec<_>>>()?;
    let mut overlaps = Vec::with_capacity(cycles.saturating_sub(1));
    let mut gaps = Vec::with_capacity(cycles.saturating_sub(1));
    for pair in windows.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        overlaps.push(a.1.saturating_sub(b.0));
        gaps.push(b.0.saturating_sub(a.1));
    }
    let mut covered = vec![false; n];
    for &(s, e) in &windows {
        covered[s..e].iter_mut().for_each(|c| *c = true);
    }
    let uncovered = covered.iter().filter(|c| !**c).count();
    let tiles_exactly = overlaps.iter().all(|&o| o == 0)
        && gaps.iter().all(|&g| g == 0)
        && windows.first().is_some_and(|w| w.0 == 0)
        && windows.last().is_some_and(|w| w.1 == n);
    Ok(Coverage {
        windows,
        overlaps,
        gaps,
        tiles_exactly,
        uncovered,
    })
}
