//! Moving flow between units on a fixed lattice: greedy redistribution, its
//! exhaustive oracle, the fixed-pair trajectory and trouble-flow reallocation.

use serde::{Deserialize, Serialize};

use crate::physics::DEFAULT_K;

/// Efficiency estimate a flow plan is scored with.
pub trait FlowEfficiency {
    fn eta(&self, unit: usize, h_net: f64, q: f64) -> f64;

    fn power(&self, unit: usize, h_net: f64, q: f64) -> f64 {
        DEFAULT_K * self.eta(unit, h_net, q) * q * h_net
    }
}

impl<F: Fn(usize, f64, f64) -> f64> FlowEfficiency for F {
    fn eta(&self, unit: usize, h_net: f64, q: f64) -> f64 {
        self(unit, h_net, q)
    }
}

/// One unit taking part in a plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSlot {
    pub unit: usize,
    pub h_net: f64,
    pub base_q: f64,
    pub min_q: f64,
    pub max_q: f64,
}

impl FlowSlot {
    fn q(&self, count: i64, step: f64) -> f64 {
        self.base_q + count as f64 * step
    }

    fn can_take(&self, count: i64, step: f64) -> bool {
        self.q(count + 1, step) <= self.max_q + 1e-9
    }

    fn can_give(&self, count: i64, step: f64) -> bool {
        self.q(count - 1, step) >= self.min_q - 1e-9
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowPlan {
    /// Whole lattice steps per slot, summing to zero.
    pub counts: Vec<i64>,
    /// CFS per slot, `counts · step`.
    pub deltas: Vec<f64>,
    /// (donor slot, receiver slot) in the order accepted.
    pub moves: Vec<(usize, usize)>,
    pub p_before: f64,
    pub p_after: f64,
}

fn total_power(slots: &[FlowSlot], counts: &[i64], est: &impl FlowEfficiency, step: f64) -> f64 {
    slots.iter().zip(counts).map(|(s, &c)| est.power(s.unit, s.h_net, s.q(c, step))).sum()
}

fn plan(
    slots: &[FlowSlot],
    counts: Vec<i64>,
    moves: Vec<(usize, usize)>,
    est: &impl FlowEfficiency,
    step: f64,
) -> FlowPlan {
    let zero = vec![0; slots.len()];
    FlowPlan {
        deltas: counts.iter().map(|&c| c as f64 * step).collect(),
        p_before: total_power(slots, &zero, est, step),
        p_after: total_power(slots, &counts, est, step),
        counts,
        moves,
    }
}

/// Greedy hill climb: each move shifts one step from the unit whose loss is
/// smallest to the unit whose gain is largest, and is taken only if the
/// predicted plant power strictly rises. Stops at the first move that does
/// not pay, or after `max_moves`.
pub fn redistribute_flow(slots: &[FlowSlot], est: &impl FlowEfficiency, step: f64, max_moves: usize) -> FlowPlan {
    let n = slots.len();
    let mut counts = vec![0i64; n];
    let mut moves = Vec::new();
    let mut p: Vec<f64> = slots.iter().map(|s| est.power(s.unit, s.h_net, s.base_q)).collect();
    while moves.len() < max_moves {
        let gain: Vec<Option<(f64, f64)>> = (0..n)
            .map(|i| {
                slots[i].can_take(counts[i], step).then(|| {
                    let up = est.power(slots[i].unit, slots[i].h_net, slots[i].q(counts[i] + 1, step));
                    (up - p[i], up)
                })
            })
            .collect();
        let loss: Vec<Option<(f64, f64)>> = (0..n)
            .map(|i| {
                slots[i].can_give(counts[i], step).then(|| {
                    let down = est.power(slots[i].unit, slots[i].h_net, slots[i].q(counts[i] - 1, step));
                    (p[i] - down, down)
                })
            })
            .collect();
        let mut best: Option<(f64, usize, usize)> = None;
        for d in 0..n {
            let Some((l, _)) = loss[d] else { continue };
            for r in (0..n).filter(|&r| r != d) {
                let Some((g, _)) = gain[r] else { continue };
                if best.is_none_or(|(b, _, _)| g - l > b) {
                    best = Some((g - l, d, r));
                }
            }
        }
        match best {
            Some((delta, d, r)) if delta > 0.0 => {
                counts[d] -= 1;
                counts[r] += 1;
                p[d] = loss[d].unwrap().1;
                p[r] = gain[r].unwrap().1;
                moves.push((d, r));
            }
            _ => break,
        }
    }
    plan(slots, counts, moves, est, step)
}

/// Every lattice allocation with the same total inside the bounds; returns
/// the one with the highest predicted power, earliest in enumeration order
/// on ties.
pub fn exhaustive_redistribution(slots: &[FlowSlot], est: &impl FlowEfficiency, step: f64) -> FlowPlan {
    let range = |s: &FlowSlot| {
        let lo = ((s.min_q - s.base_q) / step - 1e-9).ceil().min(0.0) as i64;
        let hi = ((s.max_q - s.base_q) / step + 1e-9).floor().max(0.0) as i64;
        (lo, hi)
    };
    let ranges: Vec<(i64, i64)> = slots.iter().map(range).collect();
    let mut best: Option<(f64, Vec<i64>)> = None;
    let mut counts = vec![0i64; slots.len()];
    fn walk(i: usize, sum: i64, ranges: &[(i64, i64)], counts: &mut Vec<i64>, visit: &mut dyn FnMut(&[i64])) {
        if i + 1 == ranges.len() {
            let last = -sum;
            if (ranges[i].0..=ranges[i].1).contains(&last) {
                counts[i] = last;
                visit(counts);
            }
            return;
        }
        for c in ranges[i].0..=ranges[i].1 {
            counts[i] = c;
            walk(i + 1, sum + c, ranges, counts, visit);
        }
    }
    if !slots.is_empty() {
        walk(0, 0, &ranges, &mut counts, &mut |c| {
            let p = total_power(slots, c, est, step);
            if best.as_ref().is_none_or(|(b, _)| p > *b) {
                best = Some((p, c.to_vec()));
            }
        });
    }
    let counts = best.map_or_else(|| vec![0; slots.len()], |(_, c)| c);
    plan(slots, counts, Vec::new(), est, step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub moves: usize,
    /// CFS moved from donor to receiver so far.
    pub shifted: f64,
    pub plant_mw: f64,
    /// Plant power above the starting allocation, MW.
    pub gain_mw: f64,
}

/// Donor and receiver by marginal power at the starting allocation.
pub fn marginal_pair(slots: &[FlowSlot], est: &impl FlowEfficiency, step: f64) -> Option<(usize, usize)> {
    let marginal =
        |s: &FlowSlot| (est.power(s.unit, s.h_net, s.base_q + step) - est.power(s.unit, s.h_net, s.base_q)) / step;
    let m: Vec<f64> = slots.iter().map(marginal).collect();
    let receiver = (0..m.len()).max_by(|&a, &b| m[a].total_cmp(&m[b]).then(b.cmp(&a)))?;
    let donor = (0..m.len()).filter(|&i| i != receiver).min_by(|&a, &b| m[a].total_cmp(&m[b]).then(a.cmp(&b)))?;
    Some((donor, receiver))
}

/// Plant power as flow keeps moving from one fixed donor to one fixed
/// receiver, past the point where it stops paying.
pub fn redistribution_path(
    slots: &[FlowSlot],
    est: &impl FlowEfficiency,
    donor: usize,
    receiver: usize,
    step: f64,
    n_moves: usize,
) -> Vec<PathPoint> {
    let mut counts = vec![0i64; slots.len()];
    let p0 = total_power(slots, &counts, est, step);
    let mut out = vec![PathPoint { moves: 0, shifted: 0.0, plant_mw: p0, gain_mw: 0.0 }];
    for m in 1..=n_moves {
        if !slots[donor].can_give(counts[donor], step) || !slots[receiver].can_take(counts[receiver], step) {
            break;
        }
        counts[donor] -= 1;
        counts[receiver] += 1;
        let p = total_power(slots, &counts, est, step);
        out.push(PathPoint { moves: m, shifted: m as f64 * step, plant_mw: p, gain_mw: p - p0 });
    }
    out
}

/// A unit withholding flow for trouble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shed {
    pub unit: usize,
    pub amount: f64,
}

/// A healthy unit that may take flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub unit: usize,
    pub h_net: f64,
    pub q: f64,
    pub max_q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub from: usize,
    pub to: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Reallocation {
    pub transfers: Vec<Transfer>,
    pub unallocated: f64,
}

impl Reallocation {
    /// Net flow change for `unit`: received minus given away.
    pub fn delta(&self, unit: usize) -> f64 {
        self.transfers
            .iter()
            .map(|t| {
                if t.to == unit {
                    t.amount
                } else if t.from == unit {
                    -t.amount
                } else {
                    0.0
                }
            })
            .sum()
    }

    pub fn given(&self, unit: usize) -> f64 {
        self.transfers.iter().filter(|t| t.from == unit).map(|t| t.amount).sum()
    }
}

/// Hands shed flow to receivers in `chunk`-sized pieces, each piece to the
/// receiver with the highest marginal power at its running total. Ties go to
/// the receiver that has taken least so far, then to the lower unit id.
/// Whatever no receiver has room for is left unallocated.
pub fn reallocate_trouble_flow(
    sheds: &[Shed],
    receivers: &[Receiver],
    est: &impl FlowEfficiency,
    chunk: f64,
) -> Reallocation {
    let mut q: Vec<f64> = receivers.iter().map(|r| r.q).collect();
    let mut taken = vec![0.0_f64; receivers.len()];
    let mut out = Reallocation::default();
    for s in sheds {
        let mut left = s.amount.max(0.0);
        while left > 1e-9 {
            let piece = left.min(chunk);
            let pick = (0..receivers.len())
                .filter(|&i| receivers[i].max_q - q[i] > 1e-9)
                .map(|i| {
                    let r = &receivers[i];
                    let amt = piece.min(r.max_q - q[i]);
                    let m = (est.power(r.unit, r.h_net, q[i] + amt) - est.power(r.unit, r.h_net, q[i])) / amt;
                    (i, amt, m)
                })
                .max_by(|a, b| {
                    let tie = (a.2 - b.2).abs() <= 1e-12 * a.2.abs().max(b.2.abs());
                    let by_marginal = if tie { std::cmp::Ordering::Equal } else { a.2.total_cmp(&b.2) };
                    by_marginal
                        .then(taken[b.0].total_cmp(&taken[a.0]))
                        .then(receivers[b.0].unit.cmp(&receivers[a.0].unit))
                });
            let Some((i, amt, _)) = pick else {
                out.unallocated += left;
                break;
            };
            q[i] += amt;
            taken[i] += amt;
            left -= amt;
            match out.transfers.last_mut() {
                Some(t) if t.from == s.unit && t.to == receivers[i].unit => t.amount += amt,
                _ => out.transfers.push(Transfer { from: s.unit, to: receivers[i].unit, amount: amt }),
            }
        }
    }
    out
}
