//! Read scheduling: the windowed greedy reorderer, the per-point serial
//! baseline and an exhaustive optimum for small request lists.
//!
//! All three share the same issue rules. A cycle may touch each bank at most
//! once; requests to the row a bank is already serving this cycle ride along
//! for free, and requests to a bank never overtake earlier requests to the
//! same bank.

use std::collections::{HashMap, HashSet, VecDeque};

use crate::bank::SramBankModel;

/// Issue counts of a schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IssueStats {
    pub cycles: u64,
    /// Row activations after row-sharing collapse.
    pub physical: u64,
    pub requests: u64,
}

impl IssueStats {
    pub fn add(&mut self, other: IssueStats) {
        self.cycles += other.cycles;
        self.physical += other.physical;
        self.requests += other.requests;
    }
}

/// Full per-cycle schedule, indices into the request list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrmSchedule {
    pub cycles: Vec<Vec<usize>>,
    pub physical: u64,
}

impl FrmSchedule {
    pub fn cycle_count(&self) -> u64 {
        self.cycles.len() as u64
    }
}

#[derive(Clone, Copy)]
enum BankState {
    Free,
    Serving(u64),
    Blocked,
}

/// Greedy in-window scheduler; `on_cycle` receives the indices issued each cycle.
fn greedy(requests: &[u64], window: usize, model: &SramBankModel, mut on_cycle: impl FnMut(&[usize])) -> IssueStats {
    assert!(window > 0, "window must be positive");
    let banks = model.bank_count as usize;
    let mut state = vec![BankState::Free; banks];
    let mut touched: Vec<usize> = Vec::with_capacity(banks);
    let mut win: VecDeque<usize> = VecDeque::with_capacity(window);
    let mut next = 0usize;
    let mut issued: Vec<usize> = Vec::with_capacity(window);
    let mut stats = IssueStats { requests: requests.len() as u64, ..Default::default() };

    loop {
        while win.len() < window && next < requests.len() {
            win.push_back(next);
            next += 1;
        }
        if win.is_empty() {
            break;
        }
        issued.clear();
        for &idx in &win {
            let s = model.slot(requests[idx]);
            let b = s.bank as usize;
            match state[b] {
                BankState::Free => {
                    state[b] = BankState::Serving(s.row);
                    touched.push(b);
                    stats.physical += 1;
                    issued.push(idx);
                }
                BankState::Serving(row) if row == s.row => issued.push(idx),
                BankState::Serving(_) => state[b] = BankState::Blocked,
                BankState::Blocked => {}
            }
        }
        for &b in &touched {
            state[b] = BankState::Free;
        }
        touched.clear();
        // issued is a subsequence of win in order
        let mut k = 0;
        win.retain(|&i| {
            if k < issued.len() && issued[k] == i {
                k += 1;
                false
            } else {
                true
            }
        });
        on_cycle(&issued);
        stats.cycles += 1;
    }
    stats
}

/// Greedy oldest-first schedule over a sliding window of `window` pending requests.
pub fn frm_schedule(requests: &[u64], window: usize, model: &SramBankModel) -> FrmSchedule {
    let mut out = FrmSchedule::default();
    let stats = greedy(requests, window, model, |set| out.cycles.push(set.to_vec()));
    out.physical = stats.physical;
    out
}

/// Same as [`frm_schedule`] without materialising the schedule.
pub fn frm_cycles(requests: &[u64], window: usize, model: &SramBankModel) -> IssueStats {
    greedy(requests, window, model, |_| {})
}

/// Cycles to serve one batch in isolation: the longest per-bank sequence of row runs.
fn isolated_batch(batch: &[u64], model: &SramBankModel, last_row: &mut HashMap<u32, u64>, runs: &mut HashMap<u32, u64>) -> IssueStats {
    last_row.clear();
    runs.clear();
    for &a in batch {
        let s = model.slot(a);
        if last_row.insert(s.bank, s.row) != Some(s.row) {
            *runs.entry(s.bank).or_insert(0) += 1;
        }
    }
    IssueStats {
        cycles: runs.values().copied().max().unwrap_or(0),
        physical: runs.values().sum(),
        requests: batch.len() as u64,
    }
}

/// Serial baseline: each consecutive batch of `group` requests (one point at
/// one level) is served alone, with no packing across batches.
pub fn naive_cycles(requests: &[u64], group: usize, model: &SramBankModel) -> IssueStats {
    let mut total = IssueStats::default();
    let mut last_row = HashMap::new();
    let mut runs = HashMap::new();
    for batch in requests.chunks(group.max(1)) {
        total.add(isolated_batch(batch, model, &mut last_row, &mut runs));
    }
    total
}

/// Largest request list accepted by [`optimal_cycles`].
pub const OPTIMAL_MAX_REQUESTS: usize = 12;

/// Minimum cycle count under the shared issue rules, by breadth-first search
/// over every subset of pending requests that may issue together.
///
/// Returns `None` for lists longer than [`OPTIMAL_MAX_REQUESTS`].
pub fn optimal_cycles(requests: &[u64], model: &SramBankModel) -> Option<u64> {
    let n = requests.len();
    if n > OPTIMAL_MAX_REQUESTS {
        return None;
    }
    let full: u32 = if n == 0 { 0 } else { (1u32 << n) - 1 };
    let slots: Vec<_> = requests.iter().map(|&a| model.slot(a)).collect();

    // a set may issue when, per bank, it is a prefix of that bank's pending
    // requests and all of them share one row
    let valid = |done: u32, set: u32| -> bool {
        let mut row_of: HashMap<u32, u64> = HashMap::new();
        let mut stopped: HashSet<u32> = HashSet::new();
        for i in 0..n {
            if done >> i & 1 == 1 {
                continue;
            }
            let s = slots[i];
            if set >> i & 1 == 1 {
                if stopped.contains(&s.bank) {
                    return false;
                }
                match row_of.get(&s.bank) {
                    Some(&r) if r != s.row => return false,
                    _ => {
                        row_of.insert(s.bank, s.row);
                    }
                }
            } else {
                stopped.insert(s.bank);
            }
        }
        true
    };

    let mut seen = vec![false; 1usize << n];
    let mut frontier = vec![0u32];
    seen[0] = true;
    let mut depth = 0u64;
    while !frontier.contains(&full) {
        let mut next = Vec::new();
        for &done in &frontier {
            let rest = full & !done;
            let mut set = rest;
            while set != 0 {
                let reached = done | set;
                if !seen[reached as usize] && valid(done, set) {
                    seen[reached as usize] = true;
                    next.push(reached);
                }
                set = (set - 1) & rest;
            }
        }
        frontier = next;
        depth += 1;
    }
    Some(depth)
}
