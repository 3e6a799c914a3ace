// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

use proptest::prelude::*;

use amrt_core::control::{Decision, FlowAssignment, PolicyConfig, PolicyState, QueueWindow, Side};
use amrt_core::fabric::{run_scenario, Scenario};

fn window(i: u64, delay_ns: Option<u64>, drops: u64) -> QueueWindow {
    QueueWindow {
        window_index: i,
        start: i * 10_000_000,
        delay_sum_ns: delay_ns.unwrap_or(0) * 10,
        sample_count: if delay_ns.is_some() { 10 } else { 0 },
        drop_count: drops,
    }
}

fn arb_window() -> impl Strategy<Value = (Option<u64>, u64)> {
    (
        prop_oneof![Just(None), (0u64..300_000).prop_map(Some)],
        prop_oneof![4 => Just(0u64), 1 => 1u64..50],
    )
}

proptest! {
    #[test]
    fn each_shift_moves_exactly_one_flow(
        home in prop_oneof![Just(Side::Nic), Just(Side::Host)],
        flows in 1u16..12,
        windows in prop::collection::vec((arb_window(), arb_window()), 1..200),
    ) {
        let cfg = PolicyConfig { home, ..PolicyConfig::default() };
        let initial_host = if home == Side::Host { flows as usize } else { 0 };
        let mut policy = PolicyState::new(cfg, flows as u32, initial_host as u32);
        let mut assign = FlowAssignment::new(7000..7000 + flows, initial_host);
        for (i, ((nd, nl), (hd, hl))) in windows.into_iter().enumerate() {
            let before = assign.nic_flows();
            let d = policy.tick(window(i as u64, nd, nl), window(i as u64, hd, hl));
            let moved = assign.apply(d);
            match d {
                Decision::ShiftToHost(n) => {
                    prop_assert_eq!(n, 1);
                    prop_assert_eq!(assign.nic_flows() + 1, before);
                    // Lowest port still on the NIC.
                    prop_assert!(assign.flows.iter().filter(|f| !assign.on_host.contains(f)).all(|&f| f > moved[0].0));
                }
                Decision::ShiftToNic(n) => {
                    prop_assert_eq!(n, 1);
                    prop_assert_eq!(assign.nic_flows(), before + 1);
                }
                Decision::NoOp => prop_assert!(moved.is_empty()),
            }
            prop_assert_eq!(policy.host_rule_count as usize, assign.on_host.len());
        }
    }
}

/// A minute of steady load well under capacity: once the first windows
/// have passed, the policy has nothing to do.
#[test]
fn steady_load_brings_no_decisions() {
    let s = Scenario::from_toml(
        r#"
name = "steady"
horizon_ms = 60000
[metrics]
bin_ms = 1000
[monitor]
enabled = true
home = "nic"
[[regions]]
id = 5
data = { kind = "zero", size = 65536 }
[[functions]]
name = "store"
app = "store16"
region = 5
[[loads]]
functions = ["store"]
rate = 20000
"#,
    )
    .unwrap();
    let m = run_scenario(&s).unwrap().metrics;
    assert!(m.violations.is_empty());
    assert!(m.completed > 1_000_000);
    let late: Vec<_> = m.decisions.iter().filter(|d| d.t_ms >= 12_000.0).collect();
    assert!(late.is_empty(), "{late:?}");
    assert!(m.windows.len() >= 5_900);
}
