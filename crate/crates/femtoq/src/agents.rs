//! Algorithm formulations for the three learners.
//!
//! * DPC-Q: one agent per femtocell, one learning task per subcarrier;
//!   scalar dBm actions, a 6-state space (interference flag x quantized
//!   total-power level), and per-subcarrier rewards.
//! * PDPC-Q: one agent per femtocell, a single task over all subcarriers;
//!   vector actions from a coarse dBm level set, 2 states, aggregate reward.
//! * CPC-Q: one central controller; matrix actions (all femtocells, all
//!   subcarriers), 2 states, global aggregate reward.
//!
//! Rewards come in two flavors: `R1` trades macro protection against own
//! capacity (`exp(-(C_o-target)^2) - exp(-C_n)`), `R0` keeps only the macro
//! protection term. Both penalize a DPC-Q agent that exceeds its linear
//! power budget; PDPC-Q/CPC-Q action sets are pre-filtered to respect the
//! budget, so their rewards carry no overshoot branch.

use crate::error::{Error, Result};
use crate::netmodel::dbm_to_watts;
use crate::qcore::QTable;

/// Power levels used to form PDPC-Q vectors and CPC-Q matrices, in dBm.
pub const DEFAULT_VECTOR_LEVELS_DBM: [f64; 3] = [0.0, 6.0, 12.0];

/// Guardrail exponent for the CPC-Q joint action space: the controller
/// refuses instances with more than `levels^CPCQ_MAX_CELLS` actions.
pub const CPCQ_MAX_CELLS: u32 = 12;

/// Number of DPC-Q task states: interference flag x three power levels.
pub const DPCQ_STATE_COUNT: usize = 6;

/// Which reward shape a learner uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    /// Macro-protection term only.
    R0,
    /// Macro protection minus own-capacity decay.
    R1,
}

// ---------------------------------------------------------------------------
// DPC-Q
// ---------------------------------------------------------------------------

/// Scalar action grid for DPC-Q: an arithmetic progression of dBm levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpcqActionGrid {
    pub min_dbm: f64,
    pub step_dbm: f64,
    pub count: usize,
}

impl Default for DpcqActionGrid {
    /// -20 dBm to +14 dBm in 2 dB steps: 18 levels. The nominal upper end
    /// of the range (the 15 dBm femto budget) is excluded to keep the grid
    /// uniform.
    fn default() -> Self {
        Self { min_dbm: -20.0, step_dbm: 2.0, count: 18 }
    }
}

impl DpcqActionGrid {
    pub fn levels_dbm(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| self.min_dbm + self.step_dbm * i as f64)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 || !(self.step_dbm > 0.0) || !self.min_dbm.is_finite() {
            return Err(Error::Config("DPC-Q action grid must be a non-empty ascending progression".into()));
        }
        Ok(())
    }
}

/// The default DPC-Q action set in dBm.
pub fn dpcq_action_set() -> Vec<f64> {
    DpcqActionGrid::default().levels_dbm()
}

/// State of one DPC-Q task: the macro interference flag on this task's
/// subcarrier and the agent's quantized total transmit power level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DpcqTaskState {
    /// 1 when the macro capacity on this subcarrier is below target.
    pub interference: bool,
    /// 0: comfortably under budget; 1: near/at budget; 2: over budget.
    pub power_level: u8,
}

impl DpcqTaskState {
    /// Flat state index in `[0, 6)`.
    pub fn encode(&self) -> usize {
        debug_assert!(self.power_level < 3);
        (self.interference as usize) * 3 + self.power_level as usize
    }

    pub fn decode(index: usize) -> Self {
        assert!(index < DPCQ_STATE_COUNT, "DPC-Q state index out of range");
        Self {
            interference: index / 3 == 1,
            power_level: (index % 3) as u8,
        }
    }
}

/// Quantize one DPC-Q task's observation into its state.
///
/// The interference flag compares the subcarrier's macro capacity with the
/// per-subcarrier target. The power level quantizes the agent's total
/// power in the dBm domain: level 2 strictly above the budget, level 1
/// from `budget - a2` up to the budget inclusive, level 0 below that.
pub fn dpcq_encode_state(
    macro_capacity_k: f64,
    total_power_w: f64,
    target: f64,
    p_max_femto_dbm: f64,
    _a1_dbm: f64,
    a2_dbm: f64,
) -> DpcqTaskState {
    debug_assert!(total_power_w >= 0.0);
    let interference = macro_capacity_k < target;
    // log10(0) = -inf compares below every threshold, giving level 0.
    let total_dbm = 10.0 * total_power_w.log10() + 30.0;
    let power_level = if total_dbm > p_max_femto_dbm {
        2
    } else if total_dbm >= p_max_femto_dbm - a2_dbm {
        1
    } else {
        0
    };
    DpcqTaskState { interference, power_level }
}

/// Per-subcarrier DPC-Q reward. Within the budget, `R1` is
/// `exp(-(C_o-target)^2) - exp(-C_n)` and `R0` is the first term alone;
/// exceeding the budget yields the flat penalties -2 (`R1`) and -1 (`R0`).
pub fn dpcq_reward(
    kind: RewardKind,
    macro_capacity_k: f64,
    femto_capacity_nk: f64,
    total_power_dbm: f64,
    target: f64,
    p_max_femto_dbm: f64,
) -> f64 {
    debug_assert!(macro_capacity_k >= 0.0 && femto_capacity_nk >= 0.0);
    let within_budget = total_power_dbm <= p_max_femto_dbm;
    let delta = macro_capacity_k - target;
    let reward = match (kind, within_budget) {
        (RewardKind::R1, true) => (-delta * delta).exp() - (-femto_capacity_nk).exp(),
        (RewardKind::R1, false) => -2.0,
        (RewardKind::R0, true) => (-delta * delta).exp(),
        (RewardKind::R0, false) => -1.0,
    };
    if within_budget {
        // Closed bounds: the mathematically open endpoints are reachable in
        // floating point when the exponentials underflow.
        match kind {
            RewardKind::R1 => assert!((-1.0..=1.0).contains(&reward)),
            RewardKind::R0 => assert!((0.0..=1.0).contains(&reward)),
        }
    }
    reward
}

/// One DPC-Q learning agent: a femtocell with an independent Q-table per
/// subcarrier task.
#[derive(Debug, Clone)]
pub struct DpcqAgent {
    pub id: usize,
    /// One table per subcarrier, each `DPCQ_STATE_COUNT` x action count.
    pub tables: Vec<QTable>,
}

impl DpcqAgent {
    pub fn new(id: usize, subcarriers: usize, action_count: usize) -> Self {
        Self {
            id,
            tables: (0..subcarriers)
                .map(|_| QTable::zeros(DPCQ_STATE_COUNT, action_count))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// PDPC-Q
// ---------------------------------------------------------------------------

/// All `levels^K` per-subcarrier power vectors in lexicographic order
/// (first subcarrier most significant), in dBm.
pub fn pdpcq_action_set(subcarriers: usize, levels_dbm: &[f64]) -> Vec<Vec<f64>> {
    assert!(subcarriers >= 1 && !levels_dbm.is_empty());
    let l = levels_dbm.len();
    let total = l.pow(subcarriers as u32);
    (0..total)
        .map(|mut idx| {
            let mut v = vec![0.0; subcarriers];
            for slot in (0..subcarriers).rev() {
                v[slot] = levels_dbm[idx % l];
                idx /= l;
            }
            v
        })
        .collect()
}

/// The PDPC-Q action set restricted to vectors whose linear power total
/// respects the femto budget, preserving lexicographic order. Learners use
/// this set so an over-budget vector is never assigned.
pub fn pdpcq_feasible_action_set(
    subcarriers: usize,
    levels_dbm: &[f64],
    p_max_femto_dbm: f64,
) -> Vec<Vec<f64>> {
    let budget_w = dbm_to_watts(p_max_femto_dbm);
    pdpcq_action_set(subcarriers, levels_dbm)
        .into_iter()
        .filter(|v| v.iter().map(|dbm| dbm_to_watts(*dbm)).sum::<f64>() <= budget_w)
        .collect()
}

/// Aggregate interference state: 1 when the total macro capacity has
/// fallen below the aggregate target.
pub fn pdpcq_encode_state(macro_aggregate: f64, target: f64) -> usize {
    debug_assert!(macro_aggregate >= 0.0);
    usize::from(macro_aggregate < target)
}

/// PDPC-Q reward over aggregates: `exp(-(C_o-target)^2) - exp(-C_n)`.
/// No overshoot branch; the feasible action set already enforces the budget.
pub fn pdpcq_reward(macro_aggregate: f64, femto_aggregate: f64, target: f64) -> f64 {
    debug_assert!(macro_aggregate >= 0.0 && femto_aggregate >= 0.0);
    let delta = macro_aggregate - target;
    let reward = (-delta * delta).exp() - (-femto_aggregate).exp();
    assert!((-1.0..=1.0).contains(&reward));
    reward
}

/// One PDPC-Q agent: a femtocell with a single 2-state task whose actions
/// are the feasible power vectors.
#[derive(Debug, Clone)]
pub struct PdpcqAgent {
    pub id: usize,
    pub table: QTable,
}

impl PdpcqAgent {
    pub fn new(id: usize, action_count: usize) -> Self {
        Self { id, table: QTable::zeros(2, action_count) }
    }
}

// ---------------------------------------------------------------------------
// CPC-Q
// ---------------------------------------------------------------------------

/// Number of raw joint actions, `levels^(n_femto * subcarriers)`.
pub fn cpcq_action_cardinality(n_femto: usize, subcarriers: usize, n_levels: usize) -> u128 {
    (n_levels as u128).pow((n_femto * subcarriers) as u32)
}

/// Decode a raw joint-action index into an `n_femto x subcarriers` dBm
/// matrix. Indices count lexicographically over (femto, subcarrier) with
/// femto 0 / subcarrier 0 most significant.
pub fn cpcq_decode_action(
    mut index: u64,
    n_femto: usize,
    subcarriers: usize,
    levels_dbm: &[f64],
) -> Vec<Vec<f64>> {
    let l = levels_dbm.len() as u64;
    let mut matrix = vec![vec![0.0; subcarriers]; n_femto];
    for n in (0..n_femto).rev() {
        for k in (0..subcarriers).rev() {
            matrix[n][k] = levels_dbm[(index % l) as usize];
            index /= l;
        }
    }
    matrix
}

/// Raw joint-action indices whose matrices keep every femtocell's linear
/// power total within the budget, ascending (= lexicographic) order.
/// Refuses instances past the guardrail with the computed cardinality.
pub fn cpcq_feasible_actions(
    n_femto: usize,
    subcarriers: usize,
    levels_dbm: &[f64],
    p_max_femto_dbm: f64,
) -> Result<Vec<u64>> {
    assert!(n_femto >= 1 && subcarriers >= 1 && !levels_dbm.is_empty());
    let cells = n_femto * subcarriers;
    if cells as u32 > CPCQ_MAX_CELLS {
        return Err(Error::ActionSpaceOverflow {
            cardinality: cpcq_action_cardinality(n_femto, subcarriers, levels_dbm.len()),
            cap: (levels_dbm.len() as u128).pow(CPCQ_MAX_CELLS),
        });
    }
    let budget_w = dbm_to_watts(p_max_femto_dbm);
    let total = (levels_dbm.len() as u64).pow(cells as u32);
    let feasible = (0..total)
        .filter(|idx| {
            let matrix = cpcq_decode_action(*idx, n_femto, subcarriers, levels_dbm);
            matrix
                .iter()
                .all(|row| row.iter().map(|dbm| dbm_to_watts(*dbm)).sum::<f64>() <= budget_w)
        })
        .collect();
    Ok(feasible)
}

/// CPC-Q reward over global aggregates:
/// `exp(-(C_o-target)^2) - exp(-C_femto)`.
pub fn cpcq_reward(macro_aggregate: f64, total_femto: f64, target: f64) -> f64 {
    debug_assert!(macro_aggregate >= 0.0 && total_femto >= 0.0);
    let delta = macro_aggregate - target;
    let reward = (-delta * delta).exp() - (-total_femto).exp();
    assert!((-1.0..=1.0).contains(&reward));
    reward
}

/// The central CPC-Q controller: one 2-state Q-table over the feasible
/// joint actions.
#[derive(Debug, Clone)]
pub struct CpcqController {
    pub table: QTable,
    /// Raw indices of the feasible joint actions, ascending.
    pub feasible: Vec<u64>,
    pub n_femto: usize,
    pub subcarriers: usize,
    pub levels_dbm: Vec<f64>,
}

impl CpcqController {
    pub fn new(
        n_femto: usize,
        subcarriers: usize,
        levels_dbm: &[f64],
        p_max_femto_dbm: f64,
    ) -> Result<Self> {
        let feasible = cpcq_feasible_actions(n_femto, subcarriers, levels_dbm, p_max_femto_dbm)?;
        if feasible.is_empty() {
            return Err(Error::Config(
                "no CPC-Q joint action respects the femto power budget".into(),
            ));
        }
        Ok(Self {
            table: QTable::zeros(2, feasible.len()),
            feasible,
            n_femto,
            subcarriers,
            levels_dbm: levels_dbm.to_vec(),
        })
    }

    /// dBm matrix for the `action`-th feasible joint action.
    pub fn action_matrix(&self, action: usize) -> Vec<Vec<f64>> {
        cpcq_decode_action(
            self.feasible[action],
            self.n_femto,
            self.subcarriers,
            &self.levels_dbm,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dpcq_action_grid_matches_the_stated_range() {
        let levels = dpcq_action_set();
        assert_eq!(levels[0], -20.0);
        let expected = ((15.0f64 - (-20.0)) / 2.0).ceil() as usize;
        assert_eq!(levels.len(), expected);
        assert_eq!(levels.len(), 18);
        for pair in levels.windows(2) {
            assert!((pair[1] - pair[0] - 2.0).abs() < 1e-12);
        }
        assert_eq!(*levels.last().unwrap(), 14.0);
    }

    #[test]
    fn dpcq_state_encoding_examples() {
        // Macro below target and total well under budget.
        let s = dpcq_encode_state(5.2, dbm_to_watts(8.0), 6.0, 15.0, 5.0, 5.0);
        assert_eq!(s, DpcqTaskState { interference: true, power_level: 0 });

        // Boundary: capacity exactly at target counts as protected.
        let s = dpcq_encode_state(6.0, dbm_to_watts(8.0), 6.0, 15.0, 5.0, 5.0);
        assert!(!s.interference);

        // Above the budget.
        let s = dpcq_encode_state(6.0, dbm_to_watts(16.0), 6.0, 15.0, 5.0, 5.0);
        assert_eq!(s.power_level, 2);

        // Boundary between levels 0 and 1 belongs to level 1.
        let s = dpcq_encode_state(6.0, dbm_to_watts(10.0), 6.0, 15.0, 5.0, 5.0);
        assert_eq!(s.power_level, 1);

        // Zero total power is representable and lands in level 0.
        let s = dpcq_encode_state(6.0, 0.0, 6.0, 15.0, 5.0, 5.0);
        assert_eq!(s.power_level, 0);
    }

    #[test]
    fn dpcq_state_codec_is_a_bijection() {
        for idx in 0..DPCQ_STATE_COUNT {
            assert_eq!(DpcqTaskState::decode(idx).encode(), idx);
        }
    }

    #[test]
    fn dpcq_reward_examples() {
        // R1 at the target with zero own capacity: 1 - 1 = 0.
        let r = dpcq_reward(RewardKind::R1, 6.0, 0.0, 8.0, 6.0, 15.0);
        assert!(r.abs() < 1e-12);

        // Over budget.
        assert_eq!(dpcq_reward(RewardKind::R1, 6.0, 1.0, 15.1, 6.0, 15.0), -2.0);
        assert_eq!(dpcq_reward(RewardKind::R0, 6.0, 1.0, 15.1, 6.0, 15.0), -1.0);

        // R0 peaks at exactly 1 when the macro sits on target.
        assert_eq!(dpcq_reward(RewardKind::R0, 6.0, 3.0, 8.0, 6.0, 15.0), 1.0);
    }

    #[test]
    fn rewards_depend_on_macro_capacity_only_through_the_squared_gap() {
        for delta in [0.25, 1.0, 2.5] {
            let above = dpcq_reward(RewardKind::R0, 6.0 + delta, 0.0, 0.0, 6.0, 15.0);
            let below = dpcq_reward(RewardKind::R0, 6.0 - delta, 0.0, 0.0, 6.0, 15.0);
            assert!((above - below).abs() < 1e-12);
        }
    }

    #[test]
    fn pdpcq_action_sets() {
        let one = pdpcq_action_set(1, &DEFAULT_VECTOR_LEVELS_DBM);
        assert_eq!(one, vec![vec![0.0], vec![6.0], vec![12.0]]);

        let three = pdpcq_action_set(3, &DEFAULT_VECTOR_LEVELS_DBM);
        assert_eq!(three.len(), 27);
        assert_eq!(three[0], vec![0.0, 0.0, 0.0]);
        assert_eq!(three[1], vec![0.0, 0.0, 6.0]);
        assert_eq!(three[26], vec![12.0, 12.0, 12.0]);
    }

    #[test]
    fn pdpcq_budget_filter_drops_multi_twelve_vectors() {
        // With a 15 dBm budget, any vector holding two or more 12 dBm
        // entries exceeds the linear total; 27 - 7 = 20 survive.
        let feasible = pdpcq_feasible_action_set(3, &DEFAULT_VECTOR_LEVELS_DBM, 15.0);
        assert_eq!(feasible.len(), 20);
        for v in &feasible {
            let twelves = v.iter().filter(|x| **x == 12.0).count();
            assert!(twelves <= 1);
            let total: f64 = v.iter().map(|d| dbm_to_watts(*d)).sum();
            assert!(total <= dbm_to_watts(15.0));
        }
        // Order is preserved.
        assert_eq!(feasible[0], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn pdpcq_state_boundary_is_inclusive_at_the_target() {
        assert_eq!(pdpcq_encode_state(4.0, 4.0), 0);
        assert_eq!(pdpcq_encode_state(0.0, 4.0), 1);
        assert_eq!(pdpcq_encode_state(9.0, 4.0), 0);
    }

    #[test]
    fn pdpcq_reward_values() {
        assert!((pdpcq_reward(5.0, 50.0, 5.0) - 1.0).abs() < 1e-12);
        assert!(pdpcq_reward(5.0, 0.0, 5.0).abs() < 1e-12);
        let want = (-1.0f64).exp() - 1.0;
        assert!((pdpcq_reward(6.0, 0.0, 5.0) - want).abs() < 1e-12);
        assert!((pdpcq_reward(4.0, 0.0, 5.0) - want).abs() < 1e-12);
    }

    #[test]
    fn cpcq_cardinalities() {
        assert_eq!(cpcq_action_cardinality(2, 3, 3), 729);
        // The raw count at five femtocells over three subcarriers.
        assert_eq!(cpcq_action_cardinality(5, 3, 3), 14_348_907);
    }

    #[test]
    fn cpcq_decode_is_lexicographic_row_major() {
        let levels = DEFAULT_VECTOR_LEVELS_DBM;
        assert_eq!(cpcq_decode_action(0, 2, 2, &levels), vec![vec![0.0, 0.0]; 2]);
        assert_eq!(
            cpcq_decode_action(1, 2, 2, &levels),
            vec![vec![0.0, 0.0], vec![0.0, 6.0]]
        );
        // Index 3^2 flips the first femto's last subcarrier; 3^3 its first.
        assert_eq!(
            cpcq_decode_action(9, 2, 2, &levels),
            vec![vec![0.0, 6.0], vec![0.0, 0.0]]
        );
        assert_eq!(
            cpcq_decode_action(27, 2, 2, &levels),
            vec![vec![6.0, 0.0], vec![0.0, 0.0]]
        );
    }

    #[test]
    fn cpcq_feasible_set_is_the_per_femto_product() {
        // Each femto row independently has 20 feasible choices at K=3.
        let feasible = cpcq_feasible_actions(2, 3, &DEFAULT_VECTOR_LEVELS_DBM, 15.0).unwrap();
        assert_eq!(feasible.len(), 400);
        let sorted = feasible.windows(2).all(|w| w[0] < w[1]);
        assert!(sorted);
    }

    #[test]
    fn cpcq_guardrail_refuses_oversized_instances() {
        let err = cpcq_feasible_actions(5, 3, &DEFAULT_VECTOR_LEVELS_DBM, 15.0).unwrap_err();
        match err {
            crate::error::Error::ActionSpaceOverflow { cardinality, .. } => {
                assert_eq!(cardinality, 14_348_907);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn cpcq_reward_at_target_with_silent_femtos_is_zero() {
        assert!(cpcq_reward(7.0, 0.0, 7.0).abs() < 1e-12);
    }

    #[test]
    fn cpcq_controller_construction() {
        let c = CpcqController::new(2, 3, &DEFAULT_VECTOR_LEVELS_DBM, 15.0).unwrap();
        assert_eq!(c.table.state_count(), 2);
        assert_eq!(c.table.action_count(), 400);
        assert_eq!(c.action_matrix(0), vec![vec![0.0; 3]; 2]);
    }

    proptest! {
        #[test]
        fn within_budget_rewards_stay_in_range(
            target in 5.0f64..20.0,
            delta in -5.0f64..5.0,
            c_n in 0.0f64..25.0,
        ) {
            // Ranges keep both exponentials away from f64 underflow and
            // absorption, where the open bounds genuinely hold.
            let c_o = target + delta;
            let r1 = dpcq_reward(RewardKind::R1, c_o, c_n, 10.0, target, 15.0);
            prop_assert!(r1 > -1.0 && r1 < 1.0);
            let r0 = dpcq_reward(RewardKind::R0, c_o, c_n, 10.0, target, 15.0);
            prop_assert!(r0 > 0.0 && r0 <= 1.0);
            let rp = pdpcq_reward(c_o, c_n, target);
            prop_assert!(rp > -1.0 && rp < 1.0);
        }

        #[test]
        fn dpcq_power_quantizer_is_total_order_consistent(
            total_a in 0.0f64..0.1,
            total_b in 0.0f64..0.1,
        ) {
            // More power never maps to a lower level.
            let (lo, hi) = if total_a <= total_b { (total_a, total_b) } else { (total_b, total_a) };
            let sl = dpcq_encode_state(6.0, lo, 6.0, 15.0, 5.0, 5.0).power_level;
            let sh = dpcq_encode_state(6.0, hi, 6.0, 15.0, 5.0, 5.0).power_level;
            prop_assert!(sl <= sh);
        }
    }
}
