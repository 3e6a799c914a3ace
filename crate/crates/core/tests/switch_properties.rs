// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

mod common;

use std::sync::LazyLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use amrt_core::fabric::{World, CLIENT, HOST, NIC};
use amrt_core::switch::{NodeContext, RoutingDecision, MIGRATION_PORT};
use amrt_core::vm::buffer::{APP_CAPACITY, CAPACITY, OFF_DST_PORT};
use amrt_core::vm::MessageBuffer;
use amrt_core::NodeRole;
use common::ALL_APPS;

fn world() -> World {
    World::build(&amrt_core::fabric::Scenario::from_toml(ALL_APPS).unwrap()).unwrap()
}

/// Follows a message through the switches until it leaves or the stage
/// cap is hit. Returns the number of stages run.
fn follow(w: &World, mut msg: MessageBuffer, mut here: u32, cap: u64) -> u64 {
    for stage in 0..cap {
        msg.base = amrt_core::switch::buffer_base(here, 0, stage % 64);
        let rep = w.switch.process(&mut msg, here);
        match rep.decision {
            RoutingDecision::LocalVm | RoutingDecision::LocalUdma => {}
            RoutingDecision::RemoteNode(n) => here = n,
            RoutingDecision::ReplyToClient | RoutingDecision::Drop(_) => return stage + 1,
        }
    }
    cap
}

static SHARED: LazyLock<World> = LazyLock::new(world);

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn garbage_never_panics_a_switch(
        raw in prop::collection::vec(any::<u8>(), 0..CAPACITY),
        port_pick in 0usize..10,
        node in prop_oneof![Just(CLIENT), Just(NIC), Just(HOST)],
    ) {
        let w = &*SHARED;
        let ports: Vec<u16> = w.functions.values().map(|f| f.copies[0].1).collect();
        let mut raw = raw;
        raw.resize(raw.len().max(OFF_DST_PORT + 2), 0);
        // Mostly registered ports, some migration, some whatever came in.
        let port = match port_pick {
            0..=5 => Some(ports[port_pick % ports.len()]),
            6 | 7 => Some(MIGRATION_PORT),
            _ => None,
        };
        if let Some(p) = port {
            raw[OFF_DST_PORT..OFF_DST_PORT + 2].copy_from_slice(&p.to_le_bytes());
        }
        follow(w, MessageBuffer::from_wire(&raw), node, 256);
    }
}

#[test]
fn accepted_apps_never_trap_on_any_payload() {
    let w = world();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for (name, f) in &w.functions {
        let port = f.copies[0].1;
        for i in 0..2000 {
            let len = rng.random_range(0..=APP_CAPACITY);
            let payload: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let mut msg = MessageBuffer::request(7000, port, &payload);
            let mut here = [CLIENT, NIC, HOST][i % 3];
            if here == CLIENT {
                msg.return_to = Some(CLIENT);
            }
            let mut done = false;
            for stage in 0..4096u64 {
                msg.base = amrt_core::switch::buffer_base(here, 1, stage % 64);
                let rep = w.switch.process(&mut msg, here);
                assert!(rep.trap.is_none(), "{name}, input {i} ({len} bytes): {:?}", rep.trap);
                match rep.decision {
                    RoutingDecision::LocalVm | RoutingDecision::LocalUdma => {}
                    RoutingDecision::RemoteNode(n) => here = n,
                    RoutingDecision::ReplyToClient => {
                        done = true;
                        break;
                    }
                    RoutingDecision::Drop(r) => panic!("{name}, input {i}: dropped {r:?}"),
                }
            }
            assert!(done, "{name}, input {i}: no reply");
        }
    }
}

#[test]
fn one_flow_on_one_queue_is_answered_in_order() {
    let s = amrt_core::fabric::Scenario::from_toml(
        r#"
[[regions]]
id = 5
home = "host"
data = { kind = "zero", size = 65536 }
[[functions]]
name = "store"
app = "store16"
region = 5
"#,
    )
    .unwrap();
    let w = World::build(&s).unwrap();
    let f = &w.functions["store"];
    let port = f.copies[0].1;
    let mut ctx = NodeContext::new(HOST, 0, NodeRole::Host);
    let n = 500u64;
    for i in 0..n {
        let mut m = MessageBuffer::request(7000, port, &f.request.payload(f.keys.key(i % f.keys.count), i));
        m.set_recv_timestamp(i);
        ctx.rx_queue.push_back(m);
    }
    let mut stages = 0;
    while let Some((_, out)) = ctx.process_one(&w.switch) {
        assert!(out.is_none(), "host-homed region sent a message away");
        stages += 1;
    }
    assert_eq!(ctx.drops.total(), 0);
    assert!(stages > n, "nothing yielded");
    let order: Vec<u64> = ctx.tx_queue.iter().map(|m| m.recv_timestamp()).collect();
    assert_eq!(order, (0..n).collect::<Vec<_>>());
}
