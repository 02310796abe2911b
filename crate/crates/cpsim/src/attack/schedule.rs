//! Temporal scheduling of malicious messages: random, Poisson-burst, and
//! susceptible-infectious modes. Every mode distributes the global budget
//! `round(lambda * n_agents * horizon)` across the designated attackers via
//! a truncated-normal quota.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::AttackError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttackMode {
    R,
    P,
    S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackProcessParams {
    pub mode: AttackMode,
    /// Number of message-sending agents.
    pub n_agents: usize,
    /// Horizon in frames.
    pub horizon: usize,
    /// Number of malicious agents.
    pub n_malicious: usize,
    /// Proportion of malicious messages among all messages over the horizon.
    pub attack_ratio: f64,
    /// Std-dev of the truncated-normal per-attacker allocation.
    pub alloc_std: f64,
    /// Logistic propagation rate (S-mode only).
    pub propagation_rate: f64,
    pub seed: u64,
}

impl AttackProcessParams {
    /// Global malicious-message budget.
    pub fn total_messages(&self) -> u64 {
        (self.attack_ratio * self.n_agents as f64 * self.horizon as f64).round() as u64
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if self.n_malicious > self.n_agents {
            return Err(AttackError::InvalidParams(
                "n_malicious exceeds n_agents".to_string(),
            ));
        }
        if !(0.0..=1.0).contains(&self.attack_ratio) {
            return Err(AttackError::InvalidParams(
                "attack_ratio must be in [0, 1]".to_string(),
            ));
        }
        let total = self.total_messages();
        if total > 0 && total < self.n_malicious as u64 {
            return Err(AttackError::InvalidParams(format!(
                "budget {total} cannot give each of {} attackers one message",
                self.n_malicious
            )));
        }
        if self.mode == AttackMode::R && total > (self.n_malicious * self.horizon) as u64 {
            return Err(AttackError::InfeasibleSchedule { total, capacity: (self.n_malicious * self.horizon) as u64 });
        }
        if self.mode == AttackMode::S && self.propagation_rate < 0.0 {
            return Err(AttackError::InvalidParams(
                "propagation_rate must be non-negative".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-frame, per-agent attack activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSchedule {
    /// Flat horizon x n_agents boolean matrix, row-major by frame.
    pub active: Vec<bool>,
    pub n_agents: usize,
    pub horizon: usize,
    /// Agent indices designated as attackers, in infection order.
    pub attackers: Vec<usize>,
    /// Messages actually assigned per attacker, aligned with `attackers`.
    pub per_agent_totals: Vec<u64>,
}

impl AttackSchedule {
    fn empty(n_agents: usize, horizon: usize, attackers: Vec<usize>) -> Self {
        let per_agent_totals = vec![0; attackers.len()];
        Self { active: vec![false; n_agents * horizon], n_agents, horizon, attackers, per_agent_totals }
    }

    pub fn is_active(&self, frame: usize, agent: usize) -> bool {
        self.active[frame * self.n_agents + agent]
    }

    fn set(&mut self, frame: usize, agent: usize) {
        self.active[frame * self.n_agents + agent] = true;
    }

    pub fn total_active(&self) -> u64 {
        self.active.iter().filter(|&&a| a).count() as u64
    }
}

/// Rejection-sample a normal truncated to [lo, hi].
fn truncated_normal(mean: f64, std: f64, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> f64 {
    if std <= 0.0 {
        return mean.clamp(lo, hi);
    }
    let d = Normal::new(mean, std).expect("valid normal");
    for _ in 0..10_000 {
        let v = d.sample(rng);
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
    mean.clamp(lo, hi)
}

/// Round real-valued targets to integers in [lo, hi] summing exactly to
/// `total`. Rounds first, then walks the drift back through the entries
/// with the largest rounding error in the needed direction.
fn integerize(targets: &[f64], lo: u64, hi: u64, total: u64) -> Vec<u64> {
    let m = targets.len();
    debug_assert!(lo * m as u64 <= total && total <= hi * m as u64);
    let mut out: Vec<u64> = targets.iter().map(|&t| (t.round() as i64).clamp(lo as i64, hi as i64) as u64).collect();
    let mut sum: i64 = out.iter().map(|&v| v as i64).sum();
    while sum != total as i64 {
        let need_up = sum < total as i64;
        // Entry with the largest gap to its target in the adjustable direction.
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            let room = if need_up { out[i] < hi } else { out[i] > lo };
            if !room {
                continue;
            }
            let err = targets[i] - out[i] as f64;
            let gain = if need_up { err } else { -err };
            if best.map_or(true, |(_, g)| gain > g) {
                best = Some((i, gain));
            }
        }
        let (i, _) = best.expect("feasible bounds leave room to adjust");
        if need_up {
            out[i] += 1;
            sum += 1;
        } else {
            out[i] -= 1;
            sum -= 1;
        }
    }
    out
}

/// Per-attacker quotas: truncated normal around `total/m`, rescaled to sum
/// exactly to `total` within [1, horizon].
fn allocation_quotas(
    total: u64,
    m: usize,
    alloc_std: f64,
    horizon: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u64> {
    let mean = total as f64 / m as f64;
    let raw: Vec<f64> = (0..m)
        .map(|_| truncated_normal(mean, alloc_std, 1.0, horizon as f64, rng))
        .collect();
    let raw_sum: f64 = raw.iter().sum();
    let scaled: Vec<f64> = raw.iter().map(|&r| r * total as f64 / raw_sum).collect();
    integerize(&scaled, 1, horizon as u64, total)
}

/// Designate attackers: a uniform draw of `n_malicious` distinct agents.
fn pick_attackers(params: &AttackProcessParams, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample(rng, params.n_agents, params.n_malicious).into_vec()
}

/// R-mode: each attacker's quota of frames drawn uniformly without
/// replacement over the horizon.
pub fn schedule_r(params: &AttackProcessParams, rng: &mut ChaCha8Rng) -> Result<AttackSchedule, AttackError> {
    params.validate()?;
    let attackers = pick_attackers(params, rng);
    let total = params.total_messages();
    let mut schedule = AttackSchedule::empty(params.n_agents, params.horizon, attackers.clone());
    if total == 0 {
        return Ok(schedule);
    }
    let quotas = allocation_quotas(total, attackers.len(), params.alloc_std, params.horizon, rng);
    for (slot, (&agent, &quota)) in attackers.iter().zip(quotas.iter()).enumerate() {
        let frames = sample(rng, params.horizon, quota as usize);
        for f in frames.iter() {
            schedule.set(f, agent);
        }
        schedule.per_agent_totals[slot] = quota;
    }
    Ok(schedule)
}

/// P-mode: per-frame malicious counts drawn Poisson(lambda * n_agents),
/// clamped to [0, m], resampled until the global budget is met, then
/// assigned to attackers by largest remaining quota deficit.
pub fn schedule_p(params: &AttackProcessParams, rng: &mut ChaCha8Rng) -> Result<AttackSchedule, AttackError> {
    params.validate()?;
    let attackers = pick_attackers(params, rng);
    let m = attackers.len();
    let mut schedule = AttackSchedule::empty(params.n_agents, params.horizon, attackers.clone());
    let total = params.total_messages().min((m * params.horizon) as u64);
    if total == 0 {
        return Ok(schedule);
    }
    let rate = params.attack_ratio * params.n_agents as f64;
    let poisson = Poisson::new(rate).expect("positive rate");
    let draw = |rng: &mut ChaCha8Rng| (poisson.sample(rng) as u64).min(m as u64);
    let mut counts: Vec<u64> = (0..params.horizon).map(|_| draw(rng)).collect();
    let mut sum: u64 = counts.iter().sum();
    // Rejection-resample random frames toward the exact budget.
    let mut attempts = 0usize;
    while sum != total && attempts < 200 * params.horizon {
        let f = rng.gen_range(0..params.horizon);
        let fresh = draw(rng);
        sum = sum - counts[f] + fresh;
        counts[f] = fresh;
        attempts += 1;
    }
    // Deterministic fallback for pathological rates.
    while sum != total {
        let f = rng.gen_range(0..params.horizon);
        if sum < total && counts[f] < m as u64 {
            counts[f] += 1;
            sum += 1;
        } else if sum > total && counts[f] > 0 {
            counts[f] -= 1;
            sum -= 1;
        }
    }

    let quotas = allocation_quotas(total, m, params.alloc_std, params.horizon, rng);
    let mut assigned = vec![0u64; m];
    for (frame, &c) in counts.iter().enumerate() {
        // Pick c distinct attackers: largest deficit first, then fewest
        // assigned, then slot order.
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| {
            let da = quotas[a] as i64 - assigned[a] as i64;
            let db = quotas[b] as i64 - assigned[b] as i64;
            db.cmp(&da).then(assigned[a].cmp(&assigned[b])).then(a.cmp(&b))
        });
        for &slot in order.iter().take(c as usize) {
            schedule.set(frame, attackers[slot]);
            assigned[slot] += 1;
        }
    }
    schedule.per_agent_totals = assigned;
    Ok(schedule)
}

/// S-mode: cumulative malicious-message count follows the logistic ODE
/// `dN/dt = gamma * N * (1 - N / budget)` integrated by explicit Euler with
/// a one-frame step from N = 1; each frame's new messages go to attackers in
/// infection order.
pub fn schedule_s(params: &AttackProcessParams, rng: &mut ChaCha8Rng) -> Result<AttackSchedule, AttackError> {
    params.validate()?;
    let attackers = pick_attackers(params, rng);
    let m = attackers.len();
    let mut schedule = AttackSchedule::empty(params.n_agents, params.horizon, attackers.clone());
    let capacity = params.total_messages();
    if capacity == 0 {
        return Ok(schedule);
    }
    let targets = logistic_cumulative_targets(capacity as f64, params.propagation_rate, params.horizon);
    let mut sent: u64 = 0;
    let mut assigned = vec![0u64; m];
    for (frame, &target) in targets.iter().enumerate() {
        let want = target.saturating_sub(sent);
        let send = want.min(m as u64) as usize;
        for slot in 0..send {
            schedule.set(frame, attackers[slot]);
            assigned[slot] += 1;
        }
        sent += send as u64;
    }
    schedule.per_agent_totals = assigned;
    Ok(schedule)
}

/// Euler trajectory of the logistic cumulative count, rounded and clamped to
/// the capacity; overshoot sticks at the capacity.
pub fn logistic_cumulative_targets(capacity: f64, gamma: f64, horizon: usize) -> Vec<u64> {
    let mut n = 1.0f64.min(capacity);
    let mut out = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        out.push(n.round().clamp(0.0, capacity) as u64);
        n += gamma * n * (1.0 - n / capacity);
        n = n.clamp(0.0, capacity);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;

    fn params(mode: AttackMode) -> AttackProcessParams {
        AttackProcessParams {
            mode,
            n_agents: 4,
            horizon: 40,
            n_malicious: 2,
            attack_ratio: 0.25,
            alloc_std: 2.0,
            propagation_rate: 0.3,
            seed: 1,
        }
    }

    #[test]
    fn r_mode_hits_exact_budget() {
        // lambda=0.25, N_a=4, T=40 -> 40 malicious messages.
        let p = params(AttackMode::R);
        let s = schedule_r(&p, &mut derive(p.seed, "r", &[])).unwrap();
        assert_eq!(s.total_active(), 40);
        assert_eq!(s.per_agent_totals.iter().sum::<u64>(), 40);
    }

    #[test]
    fn r_mode_minimum_allocation_one_each() {
        // Budget of exactly m with zero spread: one frame per attacker.
        let p = AttackProcessParams {
            attack_ratio: 2.0 / (4.0 * 40.0),
            alloc_std: 0.0,
            ..params(AttackMode::R)
        };
        let s = schedule_r(&p, &mut derive(3, "r", &[])).unwrap();
        assert_eq!(s.per_agent_totals, vec![1, 1]);
        assert_eq!(s.total_active(), 2);
    }

    #[test]
    fn r_mode_infeasible_budget_rejected() {
        let p = AttackProcessParams { attack_ratio: 1.0, ..params(AttackMode::R) };
        // 160 messages but only 2 x 40 slots.
        assert!(matches!(
            schedule_r(&p, &mut derive(0, "r", &[])),
            Err(AttackError::InfeasibleSchedule { .. })
        ));
    }

    /// Monte-Carlo mean oracle: across many draws the per-attacker
    /// allocation averages the budget split.
    #[test]
    fn allocation_mean_matches_budget_split() {
        let p = params(AttackMode::R);
        let mean = p.total_messages() as f64 / p.n_malicious as f64; // 20
        let draws = 10_000;
        let mut acc = 0.0;
        for i in 0..draws {
            let mut rng = derive(11, "alloc-mc", &[i]);
            let quotas = allocation_quotas(p.total_messages(), 2, 2.0, p.horizon, &mut rng);
            acc += quotas[0] as f64;
        }
        let empirical = acc / draws as f64;
        assert!((empirical - mean).abs() < 0.1, "mean {empirical} vs {mean}");
    }

    #[test]
    fn only_designated_attackers_active() {
        for seed in 0..10 {
            let p = AttackProcessParams { seed, ..params(AttackMode::R) };
            let s = schedule_r(&p, &mut derive(seed, "r", &[])).unwrap();
            for f in 0..p.horizon {
                for a in 0..p.n_agents {
                    if s.is_active(f, a) {
                        assert!(s.attackers.contains(&a));
                    }
                }
            }
        }
    }

    /// Monte-Carlo vs closed form: Poisson(1.0) mass at zero is 1/e before
    /// clamping.
    #[test]
    fn poisson_zero_mass_matches_closed_form() {
        let poisson = Poisson::new(1.0).unwrap();
        let mut rng = derive(5, "poisson-mc", &[]);
        let n = 10_000;
        let zeros = (0..n).filter(|_| poisson.sample(&mut rng) as u64 == 0).count();
        let rate = zeros as f64 / n as f64;
        assert!((rate - (-1.0f64).exp()).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn p_mode_zero_ratio_is_all_false() {
        let p = AttackProcessParams { attack_ratio: 0.0, ..params(AttackMode::P) };
        let s = schedule_p(&p, &mut derive(0, "p", &[])).unwrap();
        assert_eq!(s.total_active(), 0);
    }

    #[test]
    fn p_mode_saturates_when_rate_is_huge() {
        let p = AttackProcessParams {
            n_malicious: 4,
            attack_ratio: 1.0,
            ..params(AttackMode::P)
        };
        let s = schedule_p(&p, &mut derive(0, "p", &[])).unwrap();
        // Budget 160 = m * T: every attacker active at every frame.
        for f in 0..p.horizon {
            for &a in &s.attackers {
                assert!(s.is_active(f, a));
            }
        }
    }

    #[test]
    fn p_mode_hits_exact_budget() {
        for seed in 0..10 {
            let p = AttackProcessParams { seed, ..params(AttackMode::P) };
            let s = schedule_p(&p, &mut derive(seed, "p", &[])).unwrap();
            assert_eq!(s.total_active(), 40, "seed {seed}");
        }
    }

    #[test]
    fn s_mode_zero_growth_sends_exactly_one() {
        let p = AttackProcessParams { propagation_rate: 0.0, ..params(AttackMode::S) };
        let s = schedule_s(&p, &mut derive(0, "s", &[])).unwrap();
        assert_eq!(s.total_active(), 1);
        assert!(s.is_active(0, s.attackers[0]));
    }

    #[test]
    fn s_mode_saturates_at_capacity() {
        let p = AttackProcessParams {
            horizon: 200,
            attack_ratio: 40.0 / (4.0 * 200.0),
            propagation_rate: 1.5,
            ..params(AttackMode::S)
        };
        assert_eq!(p.total_messages(), 40);
        let s = schedule_s(&p, &mut derive(0, "s", &[])).unwrap();
        assert_eq!(s.total_active(), 40);
    }

    /// Fine-step ODE oracle: the one-frame Euler trajectory stays within one
    /// message of a dt = 0.01 reference at every frame.
    #[test]
    fn s_mode_euler_tracks_fine_step_reference() {
        let capacity = 10.0;
        let gamma = 0.3;
        let horizon = 60;
        let coarse = logistic_cumulative_targets(capacity, gamma, horizon);

        let dt = 0.01;
        let mut n = 1.0f64;
        let mut fine = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            fine.push(n.round().clamp(0.0, capacity) as i64);
            for _ in 0..100 {
                n += dt * gamma * n * (1.0 - n / capacity);
            }
            n = n.clamp(0.0, capacity);
        }
        for (f, (&c, &r)) in coarse.iter().zip(fine.iter()).enumerate() {
            assert!((c as i64 - r).abs() <= 1, "frame {f}: euler {c} vs fine {r}");
        }
    }

    #[test]
    fn s_mode_cumulative_non_decreasing_and_bounded() {
        for seed in 0..8 {
            let p = AttackProcessParams { seed, ..params(AttackMode::S) };
            let s = schedule_s(&p, &mut derive(seed, "s", &[])).unwrap();
            let budget = p.total_messages();
            let mut cum = 0u64;
            for f in 0..p.horizon {
                let frame_count = (0..p.n_agents).filter(|&a| s.is_active(f, a)).count() as u64;
                cum += frame_count;
                assert!(cum <= budget);
            }
        }
    }
}
