use etank::audit::{passivity_audit, AuditReport, Storage};
use etank::scenarios::{example1_with_valve, random_passive_env, Example1Params};
use etank::sim::{simulate, SimConfig};
use etank::tank::{EnergyLaw, ValveConfig};
use etank::trace::Trace;

fn core_numbers(r: &AuditReport) -> [f64; 9] {
    [
        r.duration,
        r.nominal_dt,
        r.allowance,
        r.delta_storage,
        r.supplied,
        r.dissipated,
        r.worst_violation,
        r.residual_max,
        r.residual_mean,
    ]
}

fn assert_same_audit(trace: &Trace) {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let back = Trace::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.samples.len(), trace.samples.len());
    for storage in [Storage::PlantH, Storage::TotalH] {
        let a = passivity_audit(trace, storage, None).unwrap();
        let b = passivity_audit(&back, storage, None).unwrap();
        for (x, y) in core_numbers(&a).iter().zip(core_numbers(&b)) {
            assert!((x - y).abs() <= 1e-12, "{storage:?}: {x} vs {y}");
        }
        assert_eq!(a.worst_violation_time, b.worst_violation_time);
    }
}

#[test]
fn valve_example_round_trip() {
    let sys = example1_with_valve(
        Example1Params {
            law: EnergyLaw::Quadratic,
            ..Example1Params::default()
        },
        ValveConfig::hard(0.01),
    )
    .unwrap();
    let (trace, _) = simulate(&sys, &SimConfig::new(1e-3, 3.0)).unwrap();
    assert_same_audit(&trace);
}

#[test]
fn environment_case_round_trip() {
    let sys = &random_passive_env(5, 1).unwrap()[0];
    let (trace, _) = simulate(sys, &SimConfig::new(1e-4, 0.5)).unwrap();
    assert_same_audit(&trace);
}

#[test]
fn file_round_trip_is_bit_exact() {
    let sys = &random_passive_env(11, 1).unwrap()[0];
    let (trace, _) = simulate(sys, &SimConfig::new(1e-3, 0.3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    trace.save_csv(&path).unwrap();
    let back = Trace::load_csv(&path).unwrap();
    for (a, b) in trace.samples.iter().zip(&back.samples) {
        assert_eq!(a.t.to_bits(), b.t.to_bits());
        assert_eq!(a.x, b.x);
        assert_eq!(
            [a.x_t, a.h, a.tank_energy, a.h_total, a.alpha, a.p_c, a.p_t, a.p_e, a.p_d],
            [b.x_t, b.h, b.tank_energy, b.h_total, b.alpha, b.p_c, b.p_t, b.p_e, b.p_d]
        );
    }
}
