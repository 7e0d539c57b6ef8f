use std::f64::consts::PI;

use catenet_core::catenoid::{build_ansatz, refine};
use catenet_core::gluing::assemble;
use catenet_core::mesh::{mean_curvature, shapes::vertical_plane};
use catenet_core::model::{green_apply, k0, PlanarField};
use catenet_core::network::symmetric_ring;
use catenet_core::solver::{assemble_jacobi, contraction_solve};
use catenet_core::{CatenoidLibrary, CatenoidSpec, ContractionParams, Geodesic, RefineParams};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn special_functions(c: &mut Criterion) {
    c.bench_function("k0 on [0.01, 20]", |b| b.iter(|| (1..2000).map(|i| k0(black_box(i as f64 * 0.01))).sum::<f64>()));
}

fn discrete_geometry(c: &mut Criterion) {
    let plane = vertical_plane(&Geodesic::real_axis(), 5.0, 5.0, 0.1);
    c.bench_function("mean curvature, 10k vertices", |b| b.iter(|| mean_curvature(black_box(&plane)).unwrap()));
    c.bench_function("assemble Jacobi, 10k vertices", |b| b.iter(|| assemble_jacobi(black_box(&plane)).unwrap()));
    let f = PlanarField::square(4.0, 0.1).unwrap().map(|s, t, _| (-(s * s + t * t)).exp());
    c.bench_function("green convolution, 81x81", |b| b.iter(|| green_apply(black_box(&f))));
}

fn pipeline(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    let spec = CatenoidSpec::new(1.0, 8.0, 0.25).unwrap();
    let m0 = build_ansatz(&spec).unwrap();
    g.bench_function("refine catenoid h=0.25", |b| b.iter(|| refine(black_box(&m0), RefineParams::default()).unwrap()));
    let eta = 2.0 * ((PI / 6.0).cos() / 3f64.sinh()).asinh();
    let net = symmetric_ring(6, eta).unwrap();
    let mut lib = CatenoidLibrary::new(0.25, 8.0);
    lib.prefetch(&[eta]).unwrap();
    g.bench_function("assemble D=6 ring", |b| b.iter(|| assemble(black_box(&net), &mut lib).unwrap()));
    let s = assemble(&net, &mut lib).unwrap();
    let p = ContractionParams { kappa: -0.5, tol: 1e-4, max_iter: 20, check_embedded: false };
    g.bench_function("contraction D=6 ring", |b| b.iter(|| contraction_solve(black_box(&s.mesh), p).unwrap()));
    g.finish();
}

criterion_group!(benches, special_functions, discrete_geometry, pipeline);
criterion_main!(benches);
