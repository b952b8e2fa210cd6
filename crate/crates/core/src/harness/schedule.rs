//! Which classes arrive in which phase.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Learning from scratch: every phase has the same number of classes.
    Lfs,
    /// Learning from half: the first phase holds half of the classes.
    Lfh,
}

/// How `phases` is read under [`Protocol::Lfh`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseCount {
    /// `phases` counts the incremental phases after the base phase.
    #[default]
    Incremental,
    /// `phases` counts every phase, the base one included.
    Total,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSchedule {
    pub protocol: Protocol,
    pub phase_count: PhaseCount,
    pub classes_total: usize,
    pub class_order_seed: u64,
    /// Class ids per phase; concatenated they give the classifier row order.
    pub phases: Vec<Vec<usize>>,
}

impl PhaseSchedule {
    pub fn class_order(&self) -> Vec<usize> {
        self.phases.concat()
    }
}

pub fn build_schedule(
    protocol: Protocol,
    classes_total: usize,
    phases: usize,
    class_order_seed: u64,
    phase_count: PhaseCount,
) -> Result<PhaseSchedule> {
    if classes_total == 0 || phases == 0 {
        return Err(Error::InvalidSchedule("need at least one class and one phase".into()));
    }
    let mut order: Vec<usize> = (0..classes_total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(class_order_seed));
    let sizes: Vec<usize> = match protocol {
        Protocol::Lfs => {
            if classes_total % phases != 0 {
                return Err(Error::InvalidSchedule(format!(
                    "{classes_total} classes do not split evenly into {phases} phases"
                )));
            }
            vec![classes_total / phases; phases]
        }
        Protocol::Lfh => {
            if classes_total % 2 != 0 {
                return Err(Error::InvalidSchedule(format!(
                    "{classes_total} classes cannot be halved"
                )));
            }
            let incremental = match phase_count {
                PhaseCount::Incremental => phases,
                PhaseCount::Total => phases - 1,
            };
            let rest = classes_total / 2;
            if incremental == 0 || rest % incremental != 0 {
                return Err(Error::InvalidSchedule(format!(
                    "{rest} remaining classes do not split evenly into {incremental} phases"
                )));
            }
            std::iter::once(rest)
                .chain(std::iter::repeat_n(rest / incremental, incremental))
                .collect()
        }
    };
    let mut at = 0;
    let phases = sizes
        .into_iter()
        .map(|n| {
            let p = order[at..at + n].to_vec();
            at += n;
            p
        })
        .collect();
    Ok(PhaseSchedule {
        protocol,
        phase_count,
        classes_total,
        class_order_seed,
        phases,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lfs_even_split() {
        let s = build_schedule(Protocol::Lfs, 10, 5, 1993, PhaseCount::Incremental).unwrap();
        assert_eq!(s.phases.len(), 5);
        assert!(s.phases.iter().all(|p| p.len() == 2));
        let mut all = s.class_order();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn lfh_half_then_even() {
        let s = build_schedule(Protocol::Lfh, 10, 5, 1993, PhaseCount::Incremental).unwrap();
        let sizes: Vec<usize> = s.phases.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 1, 1, 1, 1, 1]);
        let t = build_schedule(Protocol::Lfh, 10, 6, 1993, PhaseCount::Total).unwrap();
        assert_eq!(t.phases, s.phases);
    }

    #[test]
    fn indivisible_is_rejected() {
        assert!(matches!(
            build_schedule(Protocol::Lfs, 10, 3, 1, PhaseCount::Incremental),
            Err(Error::InvalidSchedule(_))
        ));
        assert!(build_schedule(Protocol::Lfh, 10, 2, 1, PhaseCount::Incremental).is_err());
        assert!(build_schedule(Protocol::Lfh, 9, 1, 1, PhaseCount::Incremental).is_err());
    }

    #[test]
    fn order_depends_only_on_seed() {
        let a = build_schedule(Protocol::Lfs, 20, 4, 7, PhaseCount::Incremental).unwrap();
        let b = build_schedule(Protocol::Lfs, 20, 4, 7, PhaseCount::Incremental).unwrap();
        let c = build_schedule(Protocol::Lfs, 20, 4, 8, PhaseCount::Incremental).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.class_order(), c.class_order());
    }
}
