// SPDX-License-Identifier: Apache-2.0
// Copyright The amrt Authors

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use amrt_bench::{deployment, request, world, KV};
use amrt_core::apps::mica;
use amrt_core::fabric::{run_scenario, Placement, Scenario};
use amrt_core::verifier::verify;
use amrt_core::vm::{execute, MessageBuffer, VmConfig};

fn verifier(c: &mut Criterion) {
    let layout = mica::Layout { nbuckets: 8192, max_value: 64 };
    let get = layout.get_program(2);
    let put = layout.put_program(2);
    c.bench_function("verify/mica_get", |b| b.iter(|| verify(black_box(&get))));
    c.bench_function("verify/mica_put", |b| b.iter(|| verify(black_box(&put))));
}

fn first_slice(c: &mut Criterion) {
    let w = world(KV);
    let cfg = VmConfig::default();
    for name in ["mica_get", "btree_get", "store16"] {
        let (port, payload) = request(&w, name, 7);
        let img = w.switch.registry.by_port(port).unwrap().clone();
        let fresh = {
            let mut m = MessageBuffer::request(7000, port, &payload);
            m.reset_vm_state(img.function_id());
            m.base = 0x1000_0000;
            m
        };
        c.bench_function(&format!("slice/{name}"), |b| {
            b.iter_batched_ref(|| fresh.clone(), |m| execute(&img, m, &cfg), BatchSize::SmallInput)
        });
    }
}

fn request_by_placement(c: &mut Criterion) {
    let w = world(KV);
    let dep = deployment(&w);
    for at in Placement::ALL {
        let mut i = 0;
        c.bench_function(&format!("request/mica_get/{at:?}"), |b| {
            b.iter(|| {
                i += 1;
                let (port, payload) = request(&w, "mica_get", i);
                dep.run(at, MessageBuffer::request(7000, port, &payload)).0.unwrap()
            })
        });
    }
}

fn simulation(c: &mut Criterion) {
    let s = Scenario::from_toml(&format!("horizon_ms = 20\n{KV}")).unwrap();
    let mut g = c.benchmark_group("fabric");
    g.sample_size(10);
    g.bench_function("store16_20ms", |b| b.iter(|| run_scenario(&s).unwrap().metrics.completed));
    g.finish();
}

criterion_group!(benches, verifier, first_slice, request_by_placement, simulation);
criterion_main!(benches);
