use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use strb_bench::{example1_model, trained_example1};
use strb_core::estimators::{assemble_residual_rb, dual_norm_y};
use strb_core::{fe_solve, rb_deim_solve, rb_solve, NewtonSettings};

fn factorization(c: &mut Criterion) {
    let model = example1_model(50, 10).unwrap();
    let stiffness = model.ops.stiffness.clone();
    c.bench_function("band_cholesky_factorize_n50", |b| {
        b.iter(|| stiffness.factorize().unwrap())
    });
    let factor = stiffness.factorize().unwrap();
    let rhs = DVector::from_element(stiffness.dim(), 1.0);
    c.bench_function("band_cholesky_solve_n50", |b| {
        b.iter(|| factor.solve(&rhs).unwrap())
    });
}

fn solves(c: &mut Criterion) {
    let trained = trained_example1(30, 100).unwrap();
    let newton = NewtonSettings::default();
    let mu = [3.3];
    let mut group = c.benchmark_group("solve_n30_k100");
    group.sample_size(10);
    group.bench_function("fe", |b| {
        b.iter(|| fe_solve(&trained.model, &mu, &newton).unwrap())
    });
    group.bench_function("rb", |b| {
        b.iter(|| rb_solve(&trained.model, &trained.basis, &mu, &newton).unwrap())
    });
    group.bench_function("rb_deim", |b| {
        b.iter(|| {
            rb_deim_solve(&trained.model, &trained.basis, &trained.deim, &mu, &newton).unwrap()
        })
    });
    group.finish();

    let (reduced, _) = rb_solve(&trained.model, &trained.basis, &mu, &newton).unwrap();
    let y = reduced.lift(&trained.basis);
    let residual = assemble_residual_rb(&trained.model, &mu, &y).unwrap();
    c.bench_function("dual_norm_n30_k100", |b| {
        b.iter(|| dual_norm_y(&residual, &trained.model.ops))
    });
}

criterion_group!(benches, factorization, solves);
criterion_main!(benches);
