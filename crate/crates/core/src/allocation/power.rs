use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::channel::{sinr_rate, DeviceProfile, EnergyBreakdown, LinkBudget, Powers, TimeBudget};
use crate::error::{Error, Result};

/// Which branch produced a pair's powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KktCase {
    /// No multiplier on the first user's power bounds is active.
    Interior,
    /// `P₁,₁ = 0`.
    P11Zero,
    /// `P₁,₁ = P_max1`.
    P11Max,
    /// `P₁,₂ = 0`: the solo window alone carries the first user's model.
    P12Zero,
    /// The first user has nothing to send.
    Idle,
    /// Orthogonal access, both users time-share the sub-channel.
    Oma,
    FixedPower,
    Oracle,
    Infeasible,
}

impl KktCase {
    pub fn as_str(self) -> &'static str {
        match self {
            KktCase::Interior => "interior",
            KktCase::P11Zero => "p11_zero",
            KktCase::P11Max => "p11_max",
            KktCase::P12Zero => "p12_zero",
            KktCase::Idle => "idle",
            KktCase::Oma => "oma",
            KktCase::FixedPower => "fixed_power",
            KktCase::Oracle => "oracle",
            KktCase::Infeasible => "infeasible",
        }
    }
}

impl std::fmt::Display for KktCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMode {
    #[default]
    Noma,
    Oma,
}

/// One sub-channel's two users with roles already fixed: `first` finishes
/// computing no later than `second`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairInput {
    pub first: DeviceProfile,
    pub second: DeviceProfile,
    pub bits_first: f64,
    pub bits_second: f64,
    pub gain_first: f64,
    pub gain_second: f64,
    pub t_max: f64,
}

impl PairInput {
    /// Deadline-tight windows; `T₂` may be negative when the deadline is missed.
    pub fn times(&self) -> TimeBudget {
        let t1 = self.first.computation_time();
        let t2 = self.second.computation_time();
        TimeBudget {
            t_off_solo: t2 - t1,
            t_off_noma: self.t_max - t2,
            t_com_first: t1,
            t_com_second: t2,
            t_max: self.t_max,
        }
    }

    fn validate(&self) -> Result<()> {
        self.first.validate()?;
        self.second.validate()?;
        for (n, v) in [
            ("bits_first", self.bits_first),
            ("bits_second", self.bits_second),
            ("gain_first", self.gain_first),
            ("gain_second", self.gain_second),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::domain(format!("{n} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.t_max > 0.0) {
            return Err(Error::domain("t_max must be > 0"));
        }
        if self.first.computation_time() > self.second.computation_time() {
            return Err(Error::Invariant("first user must have the smaller computation time".into()));
        }
        Ok(())
    }
}

/// Lagrange multiplier estimates, with the second user's rate constraint
/// oriented as `P₂,min − P₂ ≤ 0` so that `μ₁ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Multipliers {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub mu1: f64,
    pub mu2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSolution {
    pub powers: Powers,
    pub kkt_case: KktCase,
    pub feasible: bool,
    pub times: TimeBudget,
    /// Transmit energy is `+∞` when infeasible.
    pub energy: EnergyBreakdown,
    pub multipliers: Multipliers,
    pub reason: Option<String>,
}

impl PowerSolution {
    fn infeasible(input: &PairInput, reason: impl Into<String>) -> Self {
        Self {
            powers: Powers::default(),
            kkt_case: KktCase::Infeasible,
            feasible: false,
            times: input.times(),
            energy: EnergyBreakdown {
                computation: input.first.computation_energy() + input.second.computation_energy(),
                transmit: f64::INFINITY,
            },
            multipliers: Multipliers::default(),
            reason: Some(reason.into()),
        }
    }

    pub fn total_energy(&self) -> f64 {
        self.energy.total()
    }
}

fn exp2m1(x: f64) -> f64 {
    (x * LN_2).exp_m1()
}

/// `(2^{D/(B·T)} − 1) / g`: the power at which the second user delivers
/// exactly `D` bits in `T` seconds.
pub fn min_power_second_user(bits: f64, t_off: f64, gain2: f64, budget: &LinkBudget) -> Result<f64> {
    if !(bits >= 0.0) {
        return Err(Error::domain("bits must be >= 0"));
    }
    if bits == 0.0 {
        return Ok(0.0);
    }
    if !(t_off > 0.0) {
        return Err(Error::Infeasible(format!("offload window {t_off} s leaves no time to transmit")));
    }
    if !(gain2 > 0.0) {
        return Err(Error::Infeasible("zero channel gain".into()));
    }
    Ok(exp2m1(bits / (budget.bandwidth_hz * t_off)) / gain2)
}

struct SecondUser {
    p2: f64,
    /// `B₁ = 1 + P₂ g₂`.
    b1: f64,
}

fn solve_second(input: &PairInput, budget: &LinkBudget, t: &TimeBudget) -> std::result::Result<SecondUser, String> {
    if input.bits_second == 0.0 {
        return Ok(SecondUser { p2: 0.0, b1: 1.0 });
    }
    let p2 = min_power_second_user(input.bits_second, t.t_off_noma, input.gain_second, budget).map_err(|e| e.to_string())?;
    if p2 > input.second.max_power_w * (1.0 + 1e-12) {
        return Err(format!("second user needs {p2:.3e} W > P_max {:.3e} W", input.second.max_power_w));
    }
    Ok(SecondUser { p2, b1: 1.0 + p2 * input.gain_second })
}

fn finish(input: &PairInput, case: KktCase, powers: Powers, multipliers: Multipliers, t: TimeBudget) -> PowerSolution {
    let transmit = powers.p11 * t.t_off_solo.max(0.0) + (powers.p12 + powers.p2) * t.t_off_noma.max(0.0);
    PowerSolution {
        powers,
        kkt_case: case,
        feasible: true,
        times: t,
        energy: EnergyBreakdown {
            computation: input.first.computation_energy() + input.second.computation_energy(),
            transmit,
        },
        multipliers,
        reason: None,
    }
}

fn common_checks(input: &PairInput, t: &TimeBudget) -> Option<String> {
    if t.t_off_noma < 0.0 {
        return Some(format!(
            "deadline {} s precedes computation time {} s",
            input.t_max, t.t_com_second
        ));
    }
    None
}

/// `μ₁ = T₂ + μ₂ T₂ · B g₁ g₂ P₁,₂ / (ln2 · B₁ (B₁ + P₁,₂ g₁))`.
fn mu1(input: &PairInput, budget: &LinkBudget, t: &TimeBudget, b1: f64, p12: f64, mu2: f64) -> f64 {
    let g1 = input.gain_first;
    let g2 = input.gain_second;
    t.t_off_noma + mu2 * t.t_off_noma * budget.bandwidth_hz * g1 * g2 * p12 / (LN_2 * b1 * (b1 + p12 * g1))
}

/// Closed-form KKT power allocation for a hybrid NOMA pair.
///
/// The second user takes the least power that meets its deadline. For the
/// first user every closed-form branch is evaluated, branches violating the
/// power bounds are discarded and the cheapest survivor is returned. With
/// `u = 1 + P₁,₁g₁` and `v = 1 + P₁,₂g₁/B₁` the interior optimum satisfies
/// `u = B₁v`, so `log₂ v = (D/B − T_d log₂ B₁) / (T_d + T₂)`.
pub fn kkt_power_allocate(input: &PairInput, budget: &LinkBudget) -> Result<PowerSolution> {
    input.validate()?;
    let t = input.times();
    if let Some(r) = common_checks(input, &t) {
        return Ok(PowerSolution::infeasible(input, r));
    }
    let second = match solve_second(input, budget, &t) {
        Ok(s) => s,
        Err(r) => return Ok(PowerSolution::infeasible(input, r)),
    };
    let (p2, b1) = (second.p2, second.b1);
    let a = input.bits_first / budget.bandwidth_hz;
    let (td, tn) = (t.t_off_solo, t.t_off_noma);
    let g1 = input.gain_first;
    let pmax = input.first.max_power_w;
    let bw = budget.bandwidth_hz;

    if a == 0.0 {
        let m = Multipliers {
            lambda2: td,
            lambda4: tn,
            mu1: mu1(input, budget, &t, b1, 0.0, 0.0),
            ..Default::default()
        };
        return Ok(finish(input, KktCase::Idle, Powers { p11: 0.0, p12: 0.0, p2 }, m, t));
    }
    if !(g1 > 0.0) {
        return Ok(PowerSolution::infeasible(input, "first user has zero channel gain"));
    }

    let mut candidates: Vec<(KktCase, f64, f64, Multipliers)> = Vec::new();
    if td > 0.0 && tn > 0.0 {
        let v = (LN_2 * (a - td * b1.log2()) / (td + tn)).exp();
        if v >= 1.0 {
            let p12 = b1 * (v - 1.0) / g1;
            let p11 = (b1 * v - 1.0) / g1;
            let mu2 = b1 * v * LN_2 / (bw * g1);
            candidates.push((KktCase::Interior, p11, p12, Multipliers { mu2, ..Default::default() }));
        }
        let u = 1.0 + pmax * g1;
        let v = (LN_2 * (a - td * u.log2()) / tn).exp();
        if v >= 1.0 {
            let p12 = b1 * (v - 1.0) / g1;
            let mu2 = b1 * v * LN_2 / (bw * g1);
            let lambda1 = td * (b1 * v / u - 1.0);
            candidates.push((KktCase::P11Max, pmax, p12, Multipliers { lambda1, mu2, ..Default::default() }));
        }
    }
    if td > 0.0 {
        let u = (LN_2 * a / td).exp();
        let mu2 = u * LN_2 / (bw * g1);
        let lambda4 = tn * (1.0 - u / b1);
        candidates.push((KktCase::P12Zero, (u - 1.0) / g1, 0.0, Multipliers { lambda4, mu2, ..Default::default() }));
    }
    if tn > 0.0 {
        let v = (LN_2 * a / tn).exp();
        let mu2 = b1 * v * LN_2 / (bw * g1);
        let lambda2 = td * (1.0 - b1 * v);
        candidates.push((KktCase::P11Zero, 0.0, b1 * (v - 1.0) / g1, Multipliers { lambda2, mu2, ..Default::default() }));
    }

    let limit = pmax * (1.0 + 1e-12);
    let best = candidates
        .into_iter()
        .filter(|c| c.1 >= 0.0 && c.1 <= limit && c.2 >= 0.0 && c.2 <= limit)
        .map(|(case, p11, p12, m)| (case, p11.min(pmax), p12.min(pmax), m, p11 * td + p12 * tn))
        .reduce(|x, y| if y.4 < x.4 { y } else { x });
    match best {
        Some((case, p11, p12, mut m, _)) => {
            m.mu1 = mu1(input, budget, &t, b1, p12, m.mu2);
            Ok(finish(input, case, Powers { p11, p12, p2 }, m, t))
        }
        None => Ok(PowerSolution::infeasible(input, "first user cannot deliver its model within P_max")),
    }
}

/// Orthogonal access: the first user sends everything in its solo window.
pub fn oma_power_allocate(input: &PairInput, budget: &LinkBudget) -> Result<PowerSolution> {
    input.validate()?;
    let t = input.times();
    if let Some(r) = common_checks(input, &t) {
        return Ok(PowerSolution::infeasible(input, r));
    }
    let second = match solve_second(input, budget, &t) {
        Ok(s) => s,
        Err(r) => return Ok(PowerSolution::infeasible(input, r)),
    };
    let p11 = if input.bits_first == 0.0 {
        0.0
    } else {
        match min_power_second_user(input.bits_first, t.t_off_solo, input.gain_first, budget) {
            Ok(p) if p <= input.first.max_power_w * (1.0 + 1e-12) => p,
            Ok(p) => return Ok(PowerSolution::infeasible(input, format!("solo window needs {p:.3e} W"))),
            Err(e) => return Ok(PowerSolution::infeasible(input, e.to_string())),
        }
    };
    Ok(finish(input, KktCase::Oma, Powers { p11, p12: 0.0, p2: second.p2 }, Multipliers::default(), t))
}

/// Fixed-power baseline: every active phase runs at `fraction · P_max` for
/// its whole window.
///
/// The second user is on throughout `T₂`. The first user switches each of
/// its two phases on or off and keeps the cheapest combination that still
/// delivers its model; OMA forbids the shared phase. Every such schedule is
/// a feasible point of the KKT problem.
pub fn fixed_power_allocate(input: &PairInput, budget: &LinkBudget, fraction: f64, access: AccessMode) -> Result<PowerSolution> {
    input.validate()?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::domain("fixed power fraction must lie in (0, 1]"));
    }
    let t = input.times();
    if let Some(r) = common_checks(input, &t) {
        return Ok(PowerSolution::infeasible(input, r));
    }
    let bw = budget.bandwidth_hz;
    let (td, tn) = (t.t_off_solo, t.t_off_noma);
    let p_first = fraction * input.first.max_power_w;
    let p2 = if input.bits_second == 0.0 { 0.0 } else { fraction * input.second.max_power_w };
    if input.bits_second > 0.0 && sinr_rate(p2 * input.gain_second, bw) * tn < input.bits_second * (1.0 - 1e-12) {
        return Ok(PowerSolution::infeasible(input, "second user misses the deadline at fixed power"));
    }
    let b1 = 1.0 + p2 * input.gain_second;
    let delivered = |p11: f64, p12: f64| {
        sinr_rate(p11 * input.gain_first, bw) * td + sinr_rate(p12 * input.gain_first / b1, bw) * tn
    };
    let mut options = vec![(0.0, 0.0), (p_first, 0.0)];
    if access == AccessMode::Noma {
        options.extend([(0.0, p_first), (p_first, p_first)]);
    }
    let best = options
        .into_iter()
        .filter(|&(p11, p12)| delivered(p11, p12) >= input.bits_first * (1.0 - 1e-12))
        .map(|(p11, p12)| (p11, p12, p11 * td + p12 * tn))
        .reduce(|x, y| if y.2 < x.2 { y } else { x });
    match best {
        Some((p11, p12, _)) => {
            let mut sol = finish(input, KktCase::FixedPower, Powers { p11, p12, p2 }, Multipliers::default(), t);
            sol.kkt_case = KktCase::FixedPower;
            Ok(sol)
        }
        None => Ok(PowerSolution::infeasible(input, "first user misses the deadline at fixed power")),
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo <= 1e-15 * hi.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    [lo, mid, hi].into_iter().map(|x| (f(x), x)).fold((f64::INFINITY, mid), |b, c| if c.0 < b.0 { c } else { b }).1
}

/// Numerical reference for [`kkt_power_allocate`]: golden-section search
/// over `P₁,₁` with `P₁,₂` set by the first user's rate equality.
pub fn power_oracle(input: &PairInput, budget: &LinkBudget) -> Result<PowerSolution> {
    input.validate()?;
    let t = input.times();
    if let Some(r) = common_checks(input, &t) {
        return Ok(PowerSolution::infeasible(input, r));
    }
    let second = match solve_second(input, budget, &t) {
        Ok(s) => s,
        Err(r) => return Ok(PowerSolution::infeasible(input, r)),
    };
    let (p2, b1) = (second.p2, second.b1);
    let a = input.bits_first / budget.bandwidth_hz;
    let (td, tn) = (t.t_off_solo, t.t_off_noma);
    let g1 = input.gain_first;
    let pmax = input.first.max_power_w;
    let done = |p11: f64, p12: f64| finish(input, KktCase::Oracle, Powers { p11, p12, p2 }, Multipliers::default(), t);
    if a == 0.0 {
        return Ok(done(0.0, 0.0));
    }
    if !(g1 > 0.0) {
        return Ok(PowerSolution::infeasible(input, "first user has zero channel gain"));
    }
    let p12_of = |p11: f64| -> f64 {
        let rest = a - td * (1.0 + p11 * g1).log2();
        if rest <= 0.0 {
            0.0
        } else {
            b1 * exp2m1(rest / tn) / g1
        }
    };
    if tn <= 0.0 {
        let p11 = exp2m1(a / td) / g1;
        return Ok(if p11 <= pmax { done(p11, 0.0) } else { PowerSolution::infeasible(input, "solo window too short") });
    }
    if td <= 0.0 {
        let p12 = p12_of(0.0);
        return Ok(if p12 <= pmax { done(0.0, p12) } else { PowerSolution::infeasible(input, "shared window too short") });
    }
    // beyond this point the solo phase alone carries the model
    let hi = (exp2m1(a / td) / g1).min(pmax);
    if p12_of(hi) > pmax {
        return Ok(PowerSolution::infeasible(input, "first user cannot deliver its model within P_max"));
    }
    let lo = if p12_of(0.0) <= pmax {
        0.0
    } else {
        let (mut l, mut h) = (0.0, hi);
        for _ in 0..200 {
            let m = 0.5 * (l + h);
            if p12_of(m) > pmax {
                l = m;
            } else {
                h = m;
            }
        }
        h
    };
    let energy = |p11: f64| p11 * td + p12_of(p11) * tn;
    let p11 = golden_section(energy, lo, hi, 400);
    Ok(done(p11, p12_of(p11)))
}

/// Residuals of the KKT system at a solution.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktAudit {
    /// Worst power-bound violation relative to `P_max`.
    pub primal: f64,
    /// Relative error of the second user's power equality.
    pub power_equality: f64,
    /// Relative error of the first user's rate equality.
    pub rate_equality: f64,
    /// Largest |multiplier × constraint| product.
    pub complementary: f64,
    /// Most negative multiplier (0 when all are non-negative).
    pub dual: f64,
    /// Largest stationarity residual relative to the window lengths.
    pub stationarity: f64,
}

impl KktAudit {
    pub fn passes(&self, tol: f64) -> bool {
        self.primal <= tol
            && self.power_equality <= tol
            && self.rate_equality <= tol
            && self.complementary <= 1e-8
            && self.dual >= -tol
            && self.stationarity <= tol
    }
}

/// Checks stationarity, primal and dual feasibility and complementary
/// slackness of a KKT solution (rates in bits, base 2).
pub fn kkt_audit(input: &PairInput, budget: &LinkBudget, sol: &PowerSolution) -> Result<KktAudit> {
    if !sol.feasible {
        return Err(Error::Infeasible("cannot audit an infeasible solution".into()));
    }
    let Powers { p11, p12, p2 } = sol.powers;
    let m = sol.multipliers;
    let t = sol.times;
    let (td, tn) = (t.t_off_solo, t.t_off_noma);
    let (g1, g2) = (input.gain_first, input.gain_second);
    let bw = budget.bandwidth_hz;
    let p1max = input.first.max_power_w;
    let p2max = input.second.max_power_w;
    let b1 = 1.0 + p2 * g2;
    let scale1 = p1max.max(f64::MIN_POSITIVE);

    let primal = [
        (p11 - p1max) / scale1,
        -p11 / scale1,
        (p12 - p1max) / scale1,
        -p12 / scale1,
        (p2 - p2max) / p2max.max(f64::MIN_POSITIVE),
        -p2 / p2max.max(f64::MIN_POSITIVE),
    ]
    .into_iter()
    .fold(0.0f64, f64::max);

    let p2min = min_power_second_user(input.bits_second, tn, g2, budget).unwrap_or(0.0);
    let power_equality = if p2min > 0.0 { (p2 - p2min).abs() / p2min } else { p2.abs() };

    let delivered = sinr_rate(p11 * g1, bw) * td + sinr_rate(p12 * g1 / b1, bw) * tn;
    let d = input.bits_first;
    let rate_equality = if d > 0.0 { (delivered - d).abs() / d } else { delivered.abs() };

    let complementary = [
        m.lambda1 * (p11 - p1max),
        m.lambda2 * p11,
        m.lambda3 * (p12 - p1max),
        m.lambda4 * p12,
        m.mu1 * (p2min - p2),
        m.mu2 * (d - delivered),
    ]
    .into_iter()
    .map(f64::abs)
    .fold(0.0, f64::max);

    let dual = [m.lambda1, m.lambda2, m.lambda3, m.lambda4, m.mu1, m.mu2]
        .into_iter()
        .fold(0.0f64, f64::min);

    let u = 1.0 + p11 * g1;
    let w = b1 + p12 * g1;
    let d11 = td - m.mu2 * bw * td * g1 / (LN_2 * u) + m.lambda1 - m.lambda2;
    let d12 = tn - m.mu2 * bw * tn * g1 / (LN_2 * w) + m.lambda3 - m.lambda4;
    let d2 = tn - m.mu1 + m.mu2 * tn * bw * g1 * g2 * p12 / (LN_2 * b1 * w);
    let scale = (td + tn).max(f64::MIN_POSITIVE);
    let stationarity = [d11, d12, if input.bits_second > 0.0 || p12 > 0.0 { d2 } else { 0.0 }]
        .into_iter()
        .map(|r| r.abs() / scale)
        .fold(0.0, f64::max);

    Ok(KktAudit { primal, power_equality, rate_equality, complementary, dual, stationarity })
}
