//! Worker assignment proportional to queue depth.

/// Splits `budget` workers over stages in proportion to `depths`.
///
/// Each stage gets the floor of its proportional share, every non-empty
/// queue is raised to at least one worker (taken from the largest
/// assignment), and leftovers go by largest remainder. When the budget is
/// smaller than the number of non-empty queues, the deepest queues get one
/// worker each. Ties resolve by stage order.
pub fn schedule(depths: &[usize], budget: usize) -> Vec<usize> {
    let budget = budget.max(1);
    let mut out = vec![0; depths.len()];
    let active: Vec<usize> = (0..depths.len()).filter(|&i| depths[i] > 0).collect();
    if active.is_empty() {
        return out;
    }
    if budget < active.len() {
        let mut order = active.clone();
        order.sort_by(|&a, &b| depths[b].cmp(&depths[a]).then(a.cmp(&b)));
        for &i in order.iter().take(budget) {
            out[i] = 1;
        }
        return out;
    }
    let total: usize = depths.iter().sum();
    let mut rem = vec![0usize; depths.len()];
    for &i in &active {
        let share = budget * depths[i];
        out[i] = share / total;
        rem[i] = share % total;
        if out[i] == 0 {
            out[i] = 1;
            rem[i] = 0;
        }
    }
    let mut assigned: usize = out.iter().sum();
    while assigned > budget {
        let i = *active
            .iter()
            .filter(|&&i| out[i] > 1)
            .max_by(|&&a, &&b| out[a].cmp(&out[b]).then(rem[b].cmp(&rem[a])).then(b.cmp(&a)))
            .expect("budget >= active stages");
        out[i] -= 1;
        assigned -= 1;
    }
    while assigned < budget {
        let i = *active
            .iter()
            .max_by(|&&a, &&b| rem[a].cmp(&rem[b]).then(b.cmp(&a)))
            .expect("non-empty");
        out[i] += 1;
        rem[i] = 0;
        assigned += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn proportional_example() {
        assert_eq!(schedule(&[90, 10], 10), [9, 1]);
    }

    #[test]
    fn single_active_stage_takes_all() {
        assert_eq!(schedule(&[0, 7, 0], 4), [0, 4, 0]);
    }

    #[test]
    fn budget_one_goes_to_deepest() {
        assert_eq!(schedule(&[3, 9, 9], 1), [0, 1, 0]);
        assert_eq!(schedule(&[0, 0, 0], 3), [0, 0, 0]);
    }

    #[test]
    fn small_queue_still_gets_a_worker() {
        assert_eq!(schedule(&[99, 1], 4), [3, 1]);
        assert_eq!(schedule(&[1, 1, 1], 4), [2, 1, 1]);
    }

    proptest! {
        #[test]
        fn budget_is_spent_and_active_stages_served(
            depths in proptest::collection::vec(0usize..200, 1..6),
            budget in 1usize..32,
        ) {
            let a = schedule(&depths, budget);
            let active = depths.iter().filter(|d| **d > 0).count();
            let sum: usize = a.iter().sum();
            if active == 0 {
                prop_assert_eq!(sum, 0);
            } else {
                prop_assert_eq!(sum, budget.max(active).min(budget));
                for (d, w) in depths.iter().zip(&a) {
                    if *d == 0 { prop_assert_eq!(*w, 0); }
                    if budget >= active && *d > 0 { prop_assert!(*w >= 1); }
                }
            }
        }
    }
}
