use maxweight_ld::dynamics::*;
use maxweight_ld::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// Under work-conserving max-weight on a simplex with equal capacities
    /// the normalised sum of the workload follows the single-queue
    /// recursion.
    #[test]
    fn normalised_sum_is_a_single_queue(
        c in 0.5f64..3.0,
        k in 2usize..5,
        seed_slots in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 4), 1..12),
    ) {
        let caps = vec![c; k];
        let r = RateRegion::simplex(caps.clone()).unwrap();
        let p = Policy::work_conserving();
        let mut w = vec![0.0; k];
        let mut s = 0.0;
        for slot in &seed_slots {
            let a: Vec<f64> = slot[..k].iter().zip(&caps).map(|(x, c)| x * c).collect();
            w = step(&w, &a, &p, &r).unwrap();
            s = (s - 1.0f64).max(0.0) + r.normalized_sum(&a).unwrap();
            prop_assert!((r.normalized_sum(&w).unwrap() - s).abs() <= 1e-9);
        }
    }

    /// With unequal capacities max-weight can serve a short queue with a
    /// large capacity while another queue is past its own, so the sum
    /// recursion only bounds the workload from below.
    #[test]
    fn normalised_sum_lower_bound_with_unequal_capacities(
        caps in prop::collection::vec(0.5f64..3.0, 2..5),
        seed_slots in prop::collection::vec(prop::collection::vec(0.0f64..2.0, 4), 1..12),
    ) {
        let k = caps.len();
        let r = RateRegion::simplex(caps.clone()).unwrap();
        let p = Policy::work_conserving();
        let mut w = vec![0.0; k];
        let mut s = 0.0;
        for slot in &seed_slots {
            let a: Vec<f64> = slot[..k].iter().zip(&caps).map(|(x, c)| x * c).collect();
            w = step(&w, &a, &p, &r).unwrap();
            s = (s - 1.0f64).max(0.0) + r.normalized_sum(&a).unwrap();
            prop_assert!(r.normalized_sum(&w).unwrap() >= s - 1e-9);
        }
    }

    #[test]
    fn trajectory_ends_at_the_finite_horizon_map(
        slots in prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 1..8),
    ) {
        let r = RateRegion::unit_simplex(2);
        let path = ArrivalPath::new(slots.iter().map(|&(a, b)| vec![a, b]).collect()).unwrap();
        for p in [Policy::work_conserving(), Policy::max_weight(), Policy::gps(vec![1.0, 2.0]).unwrap(), Policy::priority(vec![1, 0]).unwrap()] {
            let traj = trajectory(&path, &p, &r, None).unwrap();
            let end = finite_horizon(&path, &p, &r, None).unwrap();
            prop_assert_eq!(traj.last().unwrap(), &end);
            prop_assert_eq!(traj.len(), path.horizon() + 1);
        }
    }
}
