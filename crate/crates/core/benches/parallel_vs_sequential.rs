use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mcf_core::lagrangian::{build_lagrangian_system, herglotz_el_equations};
use mcf_core::numsim::{compile_problem, initial_state, step_rk4, SimSettings};
use mcf_core::{parse_model_str, Exec};

fn rk4_step(c: &mut Criterion) {
    let src = include_str!("../../../models/damped_wave.model");
    let spec = parse_model_str(src).expect("model parses");
    let sys = build_lagrangian_system(&spec).expect("model builds");
    let eqs = herglotz_el_equations(&sys);
    let mut group = c.benchmark_group("rk4_step");
    for nodes in [256usize, 4096, 65536] {
        let mut s = SimSettings::from_spec(&spec).expect("settings");
        s.nodes = nodes;
        s.dt = s.length / nodes as f64 / 4.0;
        let p = compile_problem(&eqs, &s).expect("compiles");
        let st = initial_state(&p, &s).expect("initial state");
        for (label, exec) in [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)] {
            group.bench_with_input(BenchmarkId::new(label, nodes), &st, |b, st| {
                b.iter(|| step_rk4(&p, st, s.dt, exec).expect("step"))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, rk4_step);
criterion_main!(benches);
