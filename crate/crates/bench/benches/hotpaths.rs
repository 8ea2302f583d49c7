use criterion::{black_box, criterion_group, criterion_main, Criterion};
use peh_core::excitation::NoiseLattice;
use peh_core::mppt::{controller_tick, MpptConfig, MpptMeasurement, MpptState};
use peh_core::params::HarvesterParams;
use peh_core::sca::{enumerate_settings, snap_to_realizable, CapacitorBank, LutTable};
use peh_core::sim::{run_sim, SimOptions};
use peh_core::transducer::{mech_derivatives, MechState};

fn bench_mech_rhs(c: &mut Criterion) {
    let p = HarvesterParams::default();
    c.bench_function("mech_rhs", |b| {
        let s = MechState {
            z: 5e-4,
            z_dot: 0.3,
            h: 2e-4,
        };
        b.iter(|| {
            mech_derivatives(
                black_box(&s),
                black_box(3.0),
                black_box(0.4),
                &p.mech,
                &p.bw,
                p.elec.theta,
            )
        })
    });
}

fn bench_short_run(c: &mut Criterion) {
    let p = HarvesterParams::default();
    c.bench_function("chain_run_100ms", |b| {
        b.iter(|| {
            let opts = SimOptions {
                duration: 0.1,
                noise_enabled: false,
                collect_samples: false,
                ..SimOptions::default()
            };
            run_sim(black_box(&opts), &p).unwrap()
        })
    });
}

fn bench_lattice(c: &mut Criterion) {
    c.bench_function("noise_lattice_5s", |b| {
        b.iter(|| NoiseLattice::generate(black_box(1), 5.0, 0.025, 20.0))
    });
}

fn bench_snap_and_query(c: &mut Criterion) {
    let settings = enumerate_settings(&CapacitorBank::default());
    let lut = LutTable::new(
        (90..=110)
            .map(|f| (f as f64, 10e-9 + (f as f64 - 90.0) * 1e-9))
            .collect(),
    )
    .unwrap();
    c.bench_function("lut_query_snap", |b| {
        b.iter(|| {
            let target = lut.query(black_box(97.3));
            snap_to_realizable(target, &settings)
        })
    });
}

fn bench_controller(c: &mut Criterion) {
    let cfg = MpptConfig::default();
    c.bench_function("controller_tick", |b| {
        let mut st = MpptState::new(0.3, &cfg);
        let mut t = 0.0f64;
        b.iter(|| {
            t += 0.01;
            let m = MpptMeasurement {
                v_storage: 3.0,
                v_out: 1.0,
                p_load: 1e-4 * (1.0 + (t * 7.0).sin() * 0.01),
            };
            controller_tick(&mut st, m, &cfg, (0.01, 0.95), t)
        })
    });
}

criterion_group!(
    benches,
    bench_mech_rhs,
    bench_short_run,
    bench_lattice,
    bench_snap_and_query,
    bench_controller
);
criterion_main!(benches);
