use criterion::{criterion_group, criterion_main, Criterion};
use drots_core::case_model::{build_operators, parse_case, GridCase};
use drots_core::milp::solve_lp;
use drots_core::reformulate::{build_deterministic, build_mad, solve_model};
use drots_core::two_stage::{dc_flow, recourse_matrices};
use drots_core::uncertainty::{placement_matrix, Polytope};

fn case14() -> GridCase {
    parse_case(include_str!("../../core/fixtures/case14.json")).expect("bundled 14-bus case")
}

fn bench_lp_solve(c: &mut Criterion) {
    let case = case14();
    let ops = build_operators(&case, None);
    let built = build_deterministic(&case, &ops, 0);
    let mut model = built.model.clone();
    for &z in &built.layout.z {
        model.fix_var(z, 1.0);
    }
    c.bench_function("lp_dc_opf_14bus", |b| b.iter(|| solve_lp(&model, None)));
}

fn bench_model_build(c: &mut Criterion) {
    let case = case14();
    let ops = build_operators(&case, None);
    let placement = placement_matrix(&case, &[5, 10]).unwrap();
    let support = Polytope::from_box(&[-0.3, -0.3], &[0.3, 0.3]);
    c.bench_function("build_mad_14bus", |b| {
        b.iter(|| {
            build_mad(&case, &ops, &[0.0, 0.0], &[0.1, 0.1], &support, 0.05, 1, &placement)
                .unwrap()
        })
    });
}

fn bench_milp_solve(c: &mut Criterion) {
    let case = case14();
    let ops = build_operators(&case, None);
    let built = build_deterministic(&case, &ops, 1);
    c.bench_function("milp_det_switching_14bus", |b| {
        b.iter(|| solve_model(&case, &ops, None, &built).unwrap())
    });
}

fn bench_recourse(c: &mut Criterion) {
    let case = case14();
    let ops = build_operators(&case, None);
    let placement = placement_matrix(&case, &[5, 10]).unwrap();
    let z = vec![1.0; case.num_lines()];
    let mut gamma = vec![0.0; case.num_buses()];
    let gens = drots_core::case_model::generator_buses(&case);
    for &bus in &gens {
        gamma[case.bus_position(bus).unwrap()] = 1.0 / gens.len() as f64;
    }
    c.bench_function("recourse_matrices_14bus", |b| {
        b.iter(|| recourse_matrices(&case, &ops, &z, &gamma, &placement).unwrap())
    });
    let closed = vec![true; case.num_lines()];
    let mut injection = vec![0.0; case.num_buses()];
    injection[0] = 0.5;
    injection[case.num_buses() - 1] = -0.5;
    c.bench_function("dc_flow_14bus", |b| {
        b.iter(|| dc_flow(&case, &ops, &closed, &injection).unwrap())
    });
}

criterion_group!(benches, bench_lp_solve, bench_model_build, bench_milp_solve, bench_recourse);
criterion_main!(benches);
