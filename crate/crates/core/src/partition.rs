//! Balanced scenario-to-machine assignment.

use std::ops::Range;

use crate::error::{Error, Result};

/// Contiguous ranges, one per machine; machine `i` owns `assignments[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub assignments: Vec<Range<usize>>,
    pub total: usize,
    pub machines: usize,
}

impl PartitionPlan {
    pub fn sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(|r| r.len()).collect()
    }

    pub fn range(&self, machine: usize) -> Range<usize> {
        self.assignments[machine].clone()
    }
}

/// The first `N mod Q` machines get `floor(N/Q) + 1` scenarios, the rest get
/// `floor(N/Q)`. Refuses `N < Q` rather than leaving machines idle.
pub fn balance(scenario_count: usize, machine_count: usize) -> Result<PartitionPlan> {
    if machine_count == 0 {
        return Err(Error::validation("machine count must be at least 1"));
    }
    if scenario_count < machine_count {
        return Err(Error::validation(format!(
            "{scenario_count} scenarios cannot keep {machine_count} machines busy"
        )));
    }
    Ok(split_even(scenario_count, machine_count))
}

/// Same split as [`balance`] but allows `total < parts` (trailing parts empty).
pub(crate) fn split_even(total: usize, parts: usize) -> PartitionPlan {
    let portion = total / parts;
    let rest = total - portion * parts;
    let mut assignments = Vec::with_capacity(parts);
    let mut start = 0;
    for i in 0..parts {
        let len = if i < rest { portion + 1 } else { portion };
        assignments.push(start..start + len);
        start += len;
    }
    PartitionPlan { assignments, total, machines: parts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Literal transcription of the portion/rest loop, counts only.
    fn literal_counts(n: usize, q: usize) -> Vec<usize> {
        let portion_size = n / q;
        let rest = n - portion_size * q;
        let mut out = Vec::new();
        for i in 0..q {
            if i < rest {
                out.push(portion_size + 1);
            }
            if i >= rest {
                out.push(portion_size);
            }
        }
        out
    }

    #[test]
    fn hundred_machines_ten_thousand_ninety_scenarios() {
        let plan = balance(10090, 100).unwrap();
        let sizes = plan.sizes();
        assert!(sizes[..90].iter().all(|s| *s == 101));
        assert!(sizes[90..].iter().all(|s| *s == 100));
    }

    #[test]
    fn six_machines_six_thousand_scenarios() {
        assert_eq!(balance(6000, 6).unwrap().sizes(), vec![1000; 6]);
    }

    #[test]
    fn seven_over_three() {
        let plan = balance(7, 3).unwrap();
        assert_eq!(plan.sizes(), vec![3, 2, 2]);
        assert_eq!(plan.assignments, vec![0..3, 3..5, 5..7]);
    }

    #[test]
    fn too_few_scenarios_is_an_error() {
        assert!(balance(2, 3).is_err());
        assert!(balance(5, 0).is_err());
        assert_eq!(split_even(2, 3).sizes(), vec![1, 1, 0]);
    }

    proptest! {
        #[test]
        fn plan_invariants(q in 1usize..1000, extra in 0usize..100_000) {
            let n = q + extra;
            let plan = balance(n, q).unwrap();
            let sizes = plan.sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert_eq!(plan.assignments[0].start, 0);
            prop_assert_eq!(plan.assignments[q - 1].end, n);
            for w in plan.assignments.windows(2) {
                prop_assert_eq!(w[0].end, w[1].start);
            }
            prop_assert_eq!(sizes, literal_counts(n, q));
        }
    }
}
