use std::hint::black_box;

use cotransport::planner::solve_step_graph;
use cotransport::{mpc_c_step, mpc_p_step, MpcParams};
use cotransport_bench::{corridor_problem, displaced};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const OBSTACLES: [usize; 4] = [1, 2, 5, 7];
const STEP: usize = 30;

fn step_solvers(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    let (penalty, constrained) = (MpcParams::penalty(), MpcParams::constrained());
    for n in OBSTACLES {
        let p = corridor_problem(n);
        let x = displaced(&p, STEP);
        group.bench_with_input(BenchmarkId::new("ours", n), &x, |b, x| {
            b.iter(|| solve_step_graph(&p, STEP, black_box(x)).expect("solves"))
        });
        group.bench_with_input(BenchmarkId::new("mpc_p", n), &x, |b, x| {
            b.iter(|| mpc_p_step(&p, &penalty, STEP, black_box(x)).expect("solves"))
        });
        group.bench_with_input(BenchmarkId::new("mpc_c", n), &x, |b, x| {
            b.iter(|| mpc_c_step(&p, &constrained, STEP, black_box(x)).expect("solves"))
        });
    }
    group.finish();
}

criterion_group!(benches, step_solvers);
criterion_main!(benches);
