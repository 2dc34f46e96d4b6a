use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{AllocationContext, PairOutcome};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::seed::rng_from;

/// Each sub-channel `k` carries `pairs[k]`; `inverse[user]` is its channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Matching {
    pairs: Vec<[usize; 2]>,
    inverse: Vec<usize>,
}

impl Matching {
    pub fn from_pairs(pairs: Vec<[usize; 2]>) -> Result<Self> {
        let n = 2 * pairs.len();
        let mut inverse = vec![usize::MAX; n];
        for (k, p) in pairs.iter().enumerate() {
            for &u in p {
                if u >= n || inverse[u] != usize::MAX {
                    return Err(Error::Invariant(format!("user {u} is not matched exactly once")));
                }
                inverse[u] = k;
            }
        }
        let pairs = pairs.into_iter().map(|[a, b]| [a.min(b), a.max(b)]).collect();
        Ok(Self { pairs, inverse })
    }

    pub fn pairs(&self) -> &[[usize; 2]] {
        &self.pairs
    }

    pub fn channel_of(&self, user: usize) -> usize {
        self.inverse[user]
    }

    pub fn num_subchannels(&self) -> usize {
        self.pairs.len()
    }

    pub fn num_users(&self) -> usize {
        self.inverse.len()
    }

    pub fn partner(&self, user: usize) -> usize {
        let [a, b] = self.pairs[self.inverse[user]];
        if a == user {
            b
        } else {
            a
        }
    }

    /// Users `m` and `j` trade sub-channels.
    pub fn swapped(&self, m: usize, j: usize) -> Self {
        let (km, kj) = (self.inverse[m], self.inverse[j]);
        let mut pairs = self.pairs.clone();
        pairs[km] = [self.partner(m), j];
        pairs[kj] = [self.partner(j), m];
        Self::from_pairs(pairs).expect("swap preserves the bijection")
    }

    /// Whole pairs on channels `k` and `l` trade places.
    pub fn exchanged(&self, k: usize, l: usize) -> Self {
        let mut pairs = self.pairs.clone();
        pairs.swap(k, l);
        Self::from_pairs(pairs).expect("exchange preserves the bijection")
    }

    fn check(&self) -> Result<()> {
        for (u, &k) in self.inverse.iter().enumerate() {
            if !self.pairs[k].contains(&u) {
                return Err(Error::Invariant(format!("user {u} missing from channel {k}")));
            }
        }
        Ok(())
    }
}

/// Uniformly random perfect matching of `2K` users onto `K` channels.
pub fn random_matching(num_subchannels: usize, seed: u64) -> Matching {
    let mut users: Vec<usize> = (0..2 * num_subchannels).collect();
    users.shuffle(&mut rng_from(seed));
    Matching::from_pairs(users.chunks(2).map(|c| [c[0], c[1]]).collect()).expect("perfect")
}

/// Number of failed pairs, then their transmit energy.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Cost {
    pub infeasible: usize,
    /// Transmit energy of feasible pairs.
    pub transmit: f64,
    /// Computation energy of all pairs.
    pub computation: f64,
}

const REL_EPS: f64 = 1e-12;

impl Cost {
    pub fn total(&self) -> f64 {
        if self.infeasible > 0 {
            f64::INFINITY
        } else {
            self.transmit + self.computation
        }
    }

    /// Strictly better, with a relative dead band on energy.
    pub fn better_than(&self, other: &Cost) -> bool {
        if self.infeasible != other.infeasible {
            return self.infeasible < other.infeasible;
        }
        self.transmit < other.transmit - REL_EPS * other.transmit.abs().max(self.transmit.abs())
    }
}

impl std::ops::Add for Cost {
    type Output = Cost;
    fn add(self, o: Cost) -> Cost {
        Cost {
            infeasible: self.infeasible + o.infeasible,
            transmit: self.transmit + o.transmit,
            computation: self.computation + o.computation,
        }
    }
}

/// Every (pair, sub-channel) outcome, computed once.
#[derive(Debug, Clone)]
pub struct CostTable {
    n: usize,
    k: usize,
    outcomes: Vec<PairOutcome>,
}

impl CostTable {
    pub fn build(ctx: &AllocationContext, exec: Execution) -> Result<Self> {
        let n = ctx.len();
        let k = ctx.num_subchannels();
        let keys: Vec<(usize, usize, usize)> = (0..k)
            .flat_map(|c| (0..n).flat_map(move |a| ((a + 1)..n).map(move |b| (c, a, b))))
            .collect();
        let outcomes = exec.map(&keys, |&(c, a, b)| ctx.evaluate(a, b, c)).into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self { n, k, outcomes })
    }

    fn index(&self, a: usize, b: usize, k: usize) -> usize {
        let (a, b) = (a.min(b), a.max(b));
        let per_channel = self.n * (self.n - 1) / 2;
        // offset of row a in the upper triangle
        let row = a * self.n - a * (a + 1) / 2;
        k * per_channel + row + (b - a - 1)
    }

    pub fn outcome(&self, a: usize, b: usize, k: usize) -> &PairOutcome {
        &self.outcomes[self.index(a, b, k)]
    }

    pub fn num_users(&self) -> usize {
        self.n
    }

    pub fn num_subchannels(&self) -> usize {
        self.k
    }

    pub fn pair_cost(&self, a: usize, b: usize, k: usize) -> Cost {
        let s = &self.outcome(a, b, k).solution;
        Cost {
            infeasible: usize::from(!s.feasible),
            transmit: if s.feasible { s.energy.transmit } else { 0.0 },
            computation: s.energy.computation,
        }
    }

    pub fn channel_cost(&self, m: &Matching, k: usize) -> Cost {
        let [a, b] = m.pairs()[k];
        self.pair_cost(a, b, k)
    }

    pub fn cost(&self, m: &Matching) -> Cost {
        (0..m.num_subchannels()).map(|k| self.channel_cost(m, k)).fold(Cost::default(), |a, b| a + b)
    }

    pub fn outcomes_for<'a>(&'a self, m: &'a Matching) -> impl Iterator<Item = &'a PairOutcome> + 'a {
        m.pairs().iter().enumerate().map(move |(k, &[a, b])| self.outcome(a, b, k))
    }
}

/// True iff `m` and `j` swapping channels strictly lowers the combined cost
/// of the two channels involved (nobody outside them is affected).
pub fn swap_blocking_pair(mu: &Matching, m: usize, j: usize, table: &CostTable) -> Result<bool> {
    let (km, kj) = (mu.channel_of(m), mu.channel_of(j));
    if km == kj {
        return Err(Error::domain(format!("users {m} and {j} share sub-channel {km}")));
    }
    let swapped = mu.swapped(m, j);
    let before = table.channel_cost(mu, km) + table.channel_cost(mu, kj);
    let after = table.channel_cost(&swapped, km) + table.channel_cost(&swapped, kj);
    Ok(after.better_than(&before))
}

fn exchange_blocks(mu: &Matching, k: usize, l: usize, table: &CostTable) -> bool {
    let ex = mu.exchanged(k, l);
    let before = table.channel_cost(mu, k) + table.channel_cost(mu, l);
    let after = table.channel_cost(&ex, k) + table.channel_cost(&ex, l);
    after.better_than(&before)
}

/// A matching admits no blocking swap and no improving pair exchange.
pub fn is_exchange_stable(mu: &Matching, table: &CostTable) -> bool {
    let n = mu.num_users();
    for m in 0..n {
        for j in (m + 1)..n {
            if mu.channel_of(m) != mu.channel_of(j) && swap_blocking_pair(mu, m, j, table).expect("different channels") {
                return false;
            }
        }
    }
    let k = mu.num_subchannels();
    !(0..k).any(|a| ((a + 1)..k).any(|b| exchange_blocks(mu, a, b, table)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Swap(usize, usize),
    Exchange(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchOptions {
    pub max_cycles: usize,
    /// Also try trading whole pairs between channels.
    pub pair_exchange: bool,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { max_cycles: 100, pair_exchange: true }
    }
}

#[derive(Debug, Clone)]
pub struct MatchOutcome {
    pub matching: Matching,
    pub cost: Cost,
    pub swaps: usize,
    /// Full scans performed, including the final one without a swap.
    pub cycles: usize,
    /// Cost after the start and after each approved move.
    pub trace: Vec<Cost>,
    pub moves: Vec<Move>,
    pub converged: bool,
}

/// Swap matching from `initial` (or a seeded random matching).
///
/// Each cycle scans users in id order and partners in id order, applying an
/// approved swap as soon as it is found, then tries pair exchanges. The
/// search ends after a cycle without any approved move.
pub fn match_subchannels(table: &CostTable, initial: Option<Matching>, seed: u64, opts: MatchOptions) -> Result<MatchOutcome> {
    let k = table.num_subchannels();
    let mut mu = match initial {
        Some(m) => {
            if m.num_subchannels() != k || m.num_users() != table.num_users() {
                return Err(Error::shape(k, m.num_subchannels()));
            }
            m
        }
        None => random_matching(k, seed),
    };
    let n = table.num_users();
    let mut cost = table.cost(&mu);
    let mut trace = vec![cost];
    let mut moves = Vec::new();
    let mut cycles = 0;
    let mut converged = false;
    while cycles < opts.max_cycles {
        cycles += 1;
        let mut moved = false;
        for m in 0..n {
            for j in 0..n {
                if j == m || mu.channel_of(j) == mu.channel_of(m) {
                    continue;
                }
                if swap_blocking_pair(&mu, m, j, table)? {
                    mu = mu.swapped(m, j);
                    mu.check()?;
                    let next = table.cost(&mu);
                    if !next.better_than(&cost) {
                        return Err(Error::Invariant("approved swap did not lower the total cost".into()));
                    }
                    cost = next;
                    trace.push(cost);
                    moves.push(Move::Swap(m, j));
                    moved = true;
                }
            }
        }
        if opts.pair_exchange {
            for a in 0..k {
                for b in (a + 1)..k {
                    if exchange_blocks(&mu, a, b, table) {
                        mu = mu.exchanged(a, b);
                        cost = table.cost(&mu);
                        trace.push(cost);
                        moves.push(Move::Exchange(a, b));
                        moved = true;
                    }
                }
            }
        }
        if !moved {
            converged = true;
            break;
        }
    }
    Ok(MatchOutcome { swaps: moves.len(), matching: mu, cost, cycles, trace, moves, converged })
}

const BRUTE_FORCE_LIMIT: usize = 12;

fn search(table: &CostTable, used: u32, k: usize, acc: Cost, pairs: &mut Vec<[usize; 2]>, best: &mut Option<(Cost, Vec<[usize; 2]>)>) {
    let n = table.num_users();
    if k == table.num_subchannels() {
        if best.as_ref().is_none_or(|(c, _)| acc.better_than(c)) {
            *best = Some((acc, pairs.clone()));
        }
        return;
    }
    for a in 0..n {
        if used & (1 << a) != 0 {
            continue;
        }
        for b in (a + 1)..n {
            if used & (1 << b) != 0 {
                continue;
            }
            pairs.push([a, b]);
            search(table, used | (1 << a) | (1 << b), k + 1, acc + table.pair_cost(a, b, k), pairs, best);
            pairs.pop();
        }
    }
}

/// Exhaustive minimum over all assignments of user pairs to channels.
/// Near-ties resolve to the lexicographically first assignment.
pub fn brute_force_matching(table: &CostTable, exec: Execution) -> Result<(Matching, Cost)> {
    let n = table.num_users();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Refused(format!("brute force limited to {BRUTE_FORCE_LIMIT} users, got {n}")));
    }
    let firsts: Vec<[usize; 2]> = (0..n).flat_map(|a| ((a + 1)..n).map(move |b| [a, b])).collect();
    let branches = exec.map(&firsts, |&[a, b]| {
        let mut best = None;
        let mut pairs = vec![[a, b]];
        search(table, (1 << a) | (1 << b), 1, table.pair_cost(a, b, 0), &mut pairs, &mut best);
        best
    });
    let (cost, pairs) = branches
        .into_iter()
        .flatten()
        .reduce(|x, y| if y.0.better_than(&x.0) { y } else { x })
        .ok_or_else(|| Error::domain("no users to match"))?;
    Ok((Matching::from_pairs(pairs)?, cost))
}
