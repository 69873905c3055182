//! Rotating frozen-layer schedule for FFDAPT.
//!
//! Each client freezes a window of `N_k` consecutive layers (circular over
//! `1..=N`), where `N_k` grows with the client's share of the data. A single
//! cursor walks the layer stack across clients and rounds, so consecutive
//! clients freeze adjacent windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::FreezeMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    /// Number of freezable layer groups `N`.
    pub layers: usize,
    /// Per-client sample counts `n_k`, in canonical client order.
    pub samples: Vec<u64>,
    pub rounds: usize,
    /// Upper bound on frozen layers per client.
    pub epsilon: usize,
    pub gamma: f64,
    /// Freeze `N_k + 1` layers per window, reproducing the pseudocode's
    /// inclusive `start..=start + N_k` range verbatim.
    #[serde(default)]
    pub literal_pseudocode: bool,
}

impl ScheduleParams {
    pub fn clients(&self) -> usize {
        self.samples.len()
    }

    pub fn total_samples(&self) -> u64 {
        self.samples.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 3 {
            return Err(Error::invalid(format!("layers {} < 3", self.layers)));
        }
        if self.samples.is_empty() {
            return Err(Error::invalid("at least one client is required"));
        }
        if self.samples.contains(&0) {
            return Err(Error::invalid("every client needs at least one sample"));
        }
        if self.epsilon > self.layers - 1 {
            return Err(Error::invalid(format!(
                "epsilon {} exceeds layers - 1 = {}",
                self.epsilon,
                self.layers - 1
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!("gamma {} must be > 0", self.gamma)));
        }
        Ok(())
    }
}

/// `min(ε, round_half_up(⌈n_k / n · N⌉ · γ))`, clamped to `[0, N - 1]`.
pub fn frozen_count(
    n_k: u64,
    n_total: u64,
    layers: usize,
    epsilon: usize,
    gamma: f64,
) -> Result<usize> {
    if n_k < 1 || n_total < n_k {
        return Err(Error::invalid(format!(
            "need 1 ≤ n_k ≤ n, got n_k={n_k}, n={n_total}"
        )));
    }
    if layers < 3 || epsilon > layers - 1 {
        return Err(Error::invalid(format!(
            "need N ≥ 3 and ε ≤ N - 1, got N={layers}, ε={epsilon}"
        )));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma {gamma} must be > 0")));
    }
    let share = (n_k as u128 * layers as u128).div_ceil(n_total as u128) as f64;
    let scaled = (share * gamma + 0.5).floor();
    let scaled = if scaled > layers as f64 {
        layers
    } else {
        scaled as usize
    };
    Ok(scaled.min(epsilon).min(layers - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub start: usize,
}

impl Default for Cursor {
    fn default() -> Self {
        Cursor { start: 1 }
    }
}

/// Freeze `count` layers starting at the cursor, wrapping past `layers`, and
/// move the cursor just past the window.
pub fn advance(cursor: Cursor, count: usize, layers: usize) -> (FreezeMask, Cursor) {
    debug_assert!((1..=layers).contains(&cursor.start));
    if count == 0 {
        return (FreezeMask::none(), cursor);
    }
    window(cursor.start, cursor.start + count - 1, layers)
}

/// The pseudocode read literally: `end = start + N_k`, so the window holds
/// `N_k + 1` layers.
pub fn advance_literal(cursor: Cursor, count: usize, layers: usize) -> (FreezeMask, Cursor) {
    window(cursor.start, cursor.start + count, layers)
}

fn window(start: usize, end: usize, layers: usize) -> (FreezeMask, Cursor) {
    let (frozen, end) = if end <= layers {
        (FreezeMask::from_indices(start..=end), end)
    } else {
        let end = end - layers;
        (
            FreezeMask::from_indices((start..=layers).chain(1..=end)),
            end,
        )
    };
    let mut next = end + 1;
    if next > layers {
        next -= layers;
    }
    (frozen, Cursor { start: next })
}

/// Precomputed freeze sets for every round and client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreezePlan {
    pub params: ScheduleParams,
    /// `N_k` per client.
    pub counts: Vec<usize>,
    /// `rounds[t][k]` for round `t + 1`, client `k + 1`.
    pub rounds: Vec<Vec<FreezeMask>>,
}

impl FreezePlan {
    pub fn row(&self, round: usize) -> &[FreezeMask] {
        &self.rounds[round - 1]
    }

    /// JSON dump `{"params": .., "rounds": [[[..], ..], ..]}`.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            params: &'a ScheduleParams,
            rounds: &'a [Vec<FreezeMask>],
        }
        serde_json::to_string_pretty(&Dump {
            params: &self.params,
            rounds: &self.rounds,
        })
        .expect("plan serializes")
    }

    /// A plan with no frozen layers, i.e. plain FDAPT.
    pub fn empty(clients: usize, rounds: usize) -> Vec<Vec<FreezeMask>> {
        vec![vec![FreezeMask::none(); clients]; rounds]
    }
}

/// Walk rounds `1..=T` and, inside each round, clients in index order; the
/// cursor is shared by all of them and never reset.
pub fn build_schedule(params: &ScheduleParams) -> Result<FreezePlan> {
    params.validate()?;
    let n_total = params.total_samples();
    let counts = params
        .samples
        .iter()
        .map(|&n_k| frozen_count(n_k, n_total, params.layers, params.epsilon, params.gamma))
        .collect::<Result<Vec<_>>>()?;
    let step = if params.literal_pseudocode {
        advance_literal
    } else {
        advance
    };
    let mut cursor = Cursor::default();
    let mut rounds = Vec::with_capacity(params.rounds);
    for _ in 0..params.rounds {
        let mut row = Vec::with_capacity(counts.len());
        for &count in &counts {
            let (frozen, next) = step(cursor, count, params.layers);
            row.push(frozen);
            cursor = next;
        }
        rounds.push(row);
    }
    Ok(FreezePlan {
        params: params.clone(),
        counts,
        rounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(ix: &[usize]) -> FreezeMask {
        FreezeMask::from_indices(ix.iter().copied())
    }

    #[test]
    fn frozen_count_examples() {
        assert_eq!(frozen_count(75, 100, 6, 5, 1.0).unwrap(), 5);
        assert_eq!(frozen_count(25, 100, 6, 5, 1.0).unwrap(), 2);
        assert_eq!(frozen_count(75, 100, 6, 5, 0.5).unwrap(), 3);
        assert_eq!(frozen_count(1, 100, 6, 5, 0.25).unwrap(), 0);
        assert!(frozen_count(1, 100, 6, 5, 0.0).is_err());
        assert!(frozen_count(0, 100, 6, 5, 1.0).is_err());
        assert!(frozen_count(101, 100, 6, 5, 1.0).is_err());
        assert!(frozen_count(1, 100, 6, 6, 1.0).is_err());
        assert!(frozen_count(1, 100, 2, 1, 1.0).is_err());
    }

    #[test]
    fn frozen_count_is_capped() {
        assert_eq!(frozen_count(100, 100, 6, 5, 4.0).unwrap(), 5);
        assert_eq!(frozen_count(100, 100, 6, 2, 1.0).unwrap(), 2);
    }

    #[test]
    fn advance_examples() {
        assert_eq!(
            advance(Cursor { start: 1 }, 5, 6),
            (set(&[1, 2, 3, 4, 5]), Cursor { start: 6 })
        );
        assert_eq!(
            advance(Cursor { start: 6 }, 2, 6),
            (set(&[6, 1]), Cursor { start: 2 })
        );
        assert_eq!(
            advance(Cursor { start: 4 }, 0, 6),
            (set(&[]), Cursor { start: 4 })
        );
        assert_eq!(
            advance(Cursor { start: 6 }, 1, 6),
            (set(&[6]), Cursor { start: 1 })
        );
    }

    #[test]
    fn literal_window_is_one_wider() {
        assert_eq!(
            advance_literal(Cursor { start: 1 }, 2, 6),
            (set(&[1, 2, 3]), Cursor { start: 4 })
        );
        assert_eq!(
            advance_literal(Cursor { start: 3 }, 0, 6),
            (set(&[3]), Cursor { start: 4 })
        );
    }

    #[test]
    fn hand_traced_two_round_plan() {
        let plan = build_schedule(&ScheduleParams {
            layers: 6,
            samples: vec![75, 25],
            rounds: 2,
            epsilon: 5,
            gamma: 1.0,
            literal_pseudocode: false,
        })
        .unwrap();
        assert_eq!(plan.counts, vec![5, 2]);
        assert_eq!(plan.rounds[0], vec![set(&[1, 2, 3, 4, 5]), set(&[6, 1])]);
        assert_eq!(plan.rounds[1], vec![set(&[2, 3, 4, 5, 6]), set(&[1, 2])]);
    }

    #[test]
    fn single_client_visits_every_layer() {
        let n = 7;
        let plan = build_schedule(&ScheduleParams {
            layers: n,
            samples: vec![10],
            rounds: n,
            epsilon: n - 1,
            gamma: 1.0,
            literal_pseudocode: false,
        })
        .unwrap();
        assert_eq!(plan.counts, vec![n - 1]);
        let mut hits = vec![0; n + 1];
        for row in &plan.rounds {
            for i in row[0].iter() {
                hits[i] += 1;
            }
        }
        assert!(hits[1..].iter().all(|&h| h == n - 1));
        // start advances by N - 1 ≡ -1 (mod N) per round
        assert_eq!(plan.rounds[1][0], set(&[7, 1, 2, 3, 4, 5]));
    }

    #[test]
    fn epsilon_zero_freezes_nothing() {
        let plan = build_schedule(&ScheduleParams {
            layers: 6,
            samples: vec![5, 1, 9],
            rounds: 4,
            epsilon: 0,
            gamma: 2.0,
            literal_pseudocode: false,
        })
        .unwrap();
        assert!(plan.rounds.iter().flatten().all(FreezeMask::is_empty));
    }

    #[test]
    fn invalid_params_rejected() {
        let ok = ScheduleParams {
            layers: 6,
            samples: vec![1, 2],
            rounds: 1,
            epsilon: 5,
            gamma: 1.0,
            literal_pseudocode: false,
        };
        assert!(build_schedule(&ok).is_ok());
        for bad in [
            ScheduleParams {
                epsilon: 6,
                ..ok.clone()
            },
            ScheduleParams {
                layers: 2,
                epsilon: 1,
                ..ok.clone()
            },
            ScheduleParams {
                samples: vec![0, 1],
                ..ok.clone()
            },
            ScheduleParams {
                samples: vec![],
                ..ok.clone()
            },
            ScheduleParams {
                gamma: 0.0,
                ..ok.clone()
            },
        ] {
            assert!(build_schedule(&bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn json_dump_shape() {
        let plan = build_schedule(&ScheduleParams {
            layers: 6,
            samples: vec![75, 25],
            rounds: 2,
            epsilon: 5,
            gamma: 1.0,
            literal_pseudocode: false,
        })
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json()).unwrap();
        assert_eq!(v["rounds"][0][1], serde_json::json!([1, 6]));
        assert_eq!(v["params"]["layers"], 6);
    }
}
