//! Sub-channel matching and transmit power allocation.
//!
//! Each sub-channel carries exactly two users. The user that finishes
//! local computation first transmits alone, then shares the channel with
//! its partner under NOMA until the deadline.

mod matching;
mod power;

pub use matching::{
    brute_force_matching, is_exchange_stable, match_subchannels, random_matching, swap_blocking_pair,
    Cost, CostTable, MatchOptions, MatchOutcome, Matching, Move,
};
pub use power::{
    fixed_power_allocate, kkt_audit, kkt_power_allocate, min_power_second_user, oma_power_allocate,
    power_oracle, AccessMode, KktAudit, KktCase, Multipliers, PairInput, PowerSolution,
};

use serde::{Deserialize, Serialize};

use crate::channel::{DeviceProfile, LinkBudget};
use crate::error::{Error, Result};

/// A user taking part in one round's allocation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub id: usize,
    pub device: DeviceProfile,
    /// Model size to upload, in bits.
    pub bits: f64,
    pub is_virtual: bool,
}

impl Participant {
    pub fn new(id: usize, device: DeviceProfile, bits: f64) -> Self {
        Self { id, device, bits, is_virtual: false }
    }

    /// Zero-data placeholder used to fill a sub-channel.
    pub fn virtual_user(id: usize) -> Self {
        Self {
            id,
            device: DeviceProfile {
                cpu_hz: 1.0,
                samples: 0.0,
                cycles_per_bit: 1.0,
                energy_coeff: 1.0,
                distance_m: 1.0,
                max_power_w: 0.0,
            },
            bits: 0.0,
            is_virtual: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerPolicy {
    Kkt,
    /// Every user transmits at `fraction · P_max`.
    Fixed { fraction: f64 },
}

/// Everything needed to price a (pair, sub-channel) combination.
#[derive(Debug, Clone)]
pub struct AllocationContext {
    pub participants: Vec<Participant>,
    /// `gains[i][k]`: normalised gain of participant `i` on sub-channel `k`.
    pub gains: Vec<Vec<f64>>,
    pub budget: LinkBudget,
    pub t_max: f64,
    pub access: AccessMode,
    pub policy: PowerPolicy,
}

impl AllocationContext {
    /// Pads with virtual users up to `2K` participants.
    pub fn new(
        mut participants: Vec<Participant>,
        mut gains: Vec<Vec<f64>>,
        num_subchannels: usize,
        budget: LinkBudget,
        t_max: f64,
        access: AccessMode,
        policy: PowerPolicy,
    ) -> Result<Self> {
        if num_subchannels == 0 {
            return Err(Error::domain("need at least one sub-channel"));
        }
        if gains.len() != participants.len() {
            return Err(Error::shape(participants.len(), gains.len()));
        }
        if let Some(g) = gains.iter().find(|g| g.len() != num_subchannels) {
            return Err(Error::shape(num_subchannels, g.len()));
        }
        let n = 2 * num_subchannels;
        if participants.len() > n {
            return Err(Error::domain(format!(
                "{} participants exceed the {} slots of {num_subchannels} sub-channels",
                participants.len(),
                n
            )));
        }
        let next_id = participants.iter().map(|p| p.id + 1).max().unwrap_or(0);
        for v in 0..(n - participants.len()) {
            participants.push(Participant::virtual_user(next_id + v));
            gains.push(vec![0.0; num_subchannels]);
        }
        Ok(Self { participants, gains, budget, t_max, access, policy })
    }

    pub fn num_subchannels(&self) -> usize {
        self.participants.len() / 2
    }

    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }

    /// Orders `a`, `b` by computation time (ties by id) for sub-channel `k`.
    pub fn pair_input(&self, a: usize, b: usize, k: usize) -> (usize, usize, PairInput) {
        let key = |i: usize| (self.participants[i].device.computation_time(), self.participants[i].id);
        let (f, s) = if key(a).0 < key(b).0 || (key(a).0 == key(b).0 && key(a).1 <= key(b).1) { (a, b) } else { (b, a) };
        let pf = &self.participants[f];
        let ps = &self.participants[s];
        (
            f,
            s,
            PairInput {
                first: pf.device,
                second: ps.device,
                bits_first: pf.bits,
                bits_second: ps.bits,
                gain_first: self.gains[f][k],
                gain_second: self.gains[s][k],
                t_max: self.t_max,
            },
        )
    }

    /// Powers and energy of users `a`, `b` sharing sub-channel `k`.
    pub fn evaluate(&self, a: usize, b: usize, k: usize) -> Result<PairOutcome> {
        let (first, second, input) = self.pair_input(a, b, k);
        let solution = match (self.policy, self.access) {
            (PowerPolicy::Kkt, AccessMode::Noma) => kkt_power_allocate(&input, &self.budget)?,
            (PowerPolicy::Kkt, AccessMode::Oma) => oma_power_allocate(&input, &self.budget)?,
            (PowerPolicy::Fixed { fraction }, access) => fixed_power_allocate(&input, &self.budget, fraction, access)?,
        };
        Ok(PairOutcome { subchannel: k, first, second, solution })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub subchannel: usize,
    /// Participant indices (not user ids).
    pub first: usize,
    pub second: usize,
    pub solution: PowerSolution,
}
