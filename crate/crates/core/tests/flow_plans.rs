use hydrotwin::agents::{
    exhaustive_redistribution, reallocate_trouble_flow, redistribute_flow, FlowSlot, Receiver, Shed,
};
use hydrotwin::physics::DEFAULT_K;
use hydrotwin::statedb::{BinWidths, ClusterRecord, StateDb};
use proptest::prelude::*;

const STEP: f64 = 250.0;

/// Efficiency hill per unit: peak, curvature and peak flow fraction.
type Hill = (f64, f64, f64);

fn hill() -> impl Strategy<Value = Hill> {
    (0.86f64..0.95, 0.05f64..0.4, 0.55f64..0.75)
}

fn eta_of(hills: &[Hill]) -> impl Fn(usize, f64, f64) -> f64 + '_ {
    move |u, _h, q| {
        let (a, c, f) = hills[u];
        a - c * (q / 10_000.0 - f).powi(2)
    }
}

fn slots(n: usize) -> impl Strategy<Value = Vec<FlowSlot>> {
    prop::collection::vec((28.0f64..36.0, 22i64..=42), n).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(u, (h, c))| FlowSlot { unit: u, h_net: h, base_q: c as f64 * STEP, min_q: 5000.0, max_q: 11_000.0 })
            .collect()
    })
}

proptest! {
    #[test]
    fn greedy_plan_is_balanced_and_in_bounds(s in slots(3), hills in prop::collection::vec(hill(), 3)) {
        let eta = eta_of(&hills);
        let plan = redistribute_flow(&s, &eta, STEP, 100);
        prop_assert_eq!(plan.counts.iter().sum::<i64>(), 0);
        prop_assert!(plan.deltas.iter().sum::<f64>().abs() < 1e-9);
        prop_assert!(plan.p_after >= plan.p_before);
        for (slot, d) in s.iter().zip(&plan.deltas) {
            let q = slot.base_q + d;
            prop_assert!(q <= slot.max_q + 1e-9 && (q >= slot.min_q - 1e-9 || *d >= 0.0));
        }
    }

    #[test]
    fn greedy_matches_exhaustive_on_concave_units(s in slots(3), hills in prop::collection::vec(hill(), 3)) {
        let eta = eta_of(&hills);
        let g = redistribute_flow(&s, &eta, STEP, 1000);
        let x = exhaustive_redistribution(&s, &eta, STEP);
        prop_assert!((g.p_after - x.p_after).abs() < 1e-9, "greedy {} exhaustive {}", g.p_after, x.p_after);
    }

    #[test]
    fn reallocation_conserves_shed_flow(
        shed in prop::collection::vec(0.0f64..3000.0, 1..3),
        room in prop::collection::vec((5000.0f64..11_000.0, 0.0f64..3000.0), 1..3),
        hills in prop::collection::vec(hill(), 4),
    ) {
        let n_shed = shed.len();
        let sheds: Vec<Shed> = shed.iter().enumerate().map(|(u, &a)| Shed { unit: u, amount: a }).collect();
        let receivers: Vec<Receiver> = room
            .iter()
            .enumerate()
            .map(|(i, &(q, r))| Receiver { unit: n_shed + i, h_net: 33.0, q, max_q: q + r })
            .collect();
        let hills = [hills.clone(), hills].concat();
        let plan = reallocate_trouble_flow(&sheds, &receivers, &eta_of(&hills), 250.0);
        let total: f64 = shed.iter().sum();
        let moved: f64 = plan.transfers.iter().map(|t| t.amount).sum();
        prop_assert!((moved + plan.unallocated - total).abs() < 1e-6);
        let net: f64 = (0..n_shed + receivers.len()).map(|u| plan.delta(u)).sum();
        prop_assert!(net.abs() < 1e-6);
        for r in &receivers {
            prop_assert!(r.q + plan.delta(r.unit) <= r.max_q + 1e-6);
        }
    }

    #[test]
    fn best_blade_beats_actual_power(
        etas in prop::collection::vec((0.8f64..0.95, 30.0f64..90.0, 0u64..1000), 1..40),
        h in 33.0f64..35.0,
        q in 7000.0f64..9000.0,
        eta_act in 0.8f64..0.95,
    ) {
        let clusters: Vec<ClusterRecord> = etas
            .iter()
            .map(|&(eta, bp, start)| ClusterRecord {
                h_net: h,
                q_sp: q,
                q_act: q,
                gp: 70.0,
                bp,
                p: DEFAULT_K * eta * q * h,
                eta,
                support: 20,
                start,
            })
            .collect();
        let db = StateDb::new(clusters, BinWidths::default(), "prop");
        let p_act = DEFAULT_K * eta_act * q * h;
        let best_eta = etas.iter().map(|e| e.0).fold(f64::MIN, f64::max);
        match db.query_best_bp(h, q, p_act) {
            Some(b) => {
                prop_assert!(b.p_opt > p_act);
                prop_assert!((b.cluster.eta - best_eta).abs() < 1e-15);
            }
            None => prop_assert!(DEFAULT_K * best_eta * q * h <= p_act),
        }
    }
}

#[test]
fn equal_power_ties_go_to_the_earliest_cluster() {
    let c = |bp: f64, start: u64, q: f64| ClusterRecord {
        h_net: 34.0,
        q_sp: q,
        q_act: q,
        gp: 70.0,
        bp,
        p: 0.0,
        eta: 0.9,
        support: 20,
        start,
    };
    // Different flow bins, so the index visits the later cluster first.
    let db = StateDb::new(vec![c(55.0, 900, 7900.0), c(60.0, 100, 8300.0)], BinWidths::default(), "ties");
    let best = db.query_best_bp(34.0, 8100.0, 0.0).unwrap();
    assert_eq!(best.bp, 60.0);
}
