use etank::audit::{passivity_audit, Storage};
use etank::closed_loop::{detect_escape, DEFAULT_ENERGY_FLOOR, DEFAULT_STATE_BOUND};
use etank::scenarios::{
    example1, fig3_compare, free_mass, random_passive_params, Example1Params, PassiveEnvParams,
};
use etank::sim::{simulate, SimConfig, TerminationReason};
use etank::tank::EnergyLaw;

#[test]
fn example1_matches_closed_form_at_one_second() {
    for law in [EnergyLaw::Exponential, EnergyLaw::Quadratic] {
        let sys = example1(1.0, 1.0, law, 1.0).unwrap();
        let (trace, _) = simulate(&sys, &SimConfig::new(1e-4, 3.0)).unwrap();
        let s = trace.samples.iter().find(|s| (s.t - 1.0).abs() < 1e-9).unwrap();
        assert!((s.x[0] - 1.0).abs() <= 1e-6, "v(1) = {}", s.x[0]);
        assert!((s.tank_energy - 0.5).abs() <= 1e-3, "T(1) = {}", s.tank_energy);
    }
}

#[test]
fn termination_follows_depletion_time_across_grid() {
    let dt = 1e-4;
    for m in [0.5, 1.0, 2.0] {
        for f_bar in [0.5, 1.0, 2.0] {
            let t_bar = Example1Params {
                mass: m,
                f_bar,
                ..Example1Params::default()
            }
            .depletion_time();
            for law in [EnergyLaw::Exponential, EnergyLaw::Quadratic] {
                let sys = example1(m, f_bar, law, 1.0).unwrap();
                let (_, term) = simulate(&sys, &SimConfig::new(dt, t_bar + 1.0)).unwrap();
                let t = term.time().expect("run must terminate");
                assert!((t - t_bar).abs() <= 10.0 * dt, "m={m} F={f_bar} {law:?}: {t} vs {t_bar}");
            }
        }
    }
}

#[test]
fn escape_detection_agrees_with_quadratic_singularity() {
    let cfg = SimConfig::new(1e-4, 3.0);
    let (exp_trace, exp_term) = simulate(&example1(1.0, 1.0, EnergyLaw::Exponential, 1.0).unwrap(), &cfg).unwrap();
    let (_, quad_term) = simulate(&example1(1.0, 1.0, EnergyLaw::Quadratic, 1.0).unwrap(), &cfg).unwrap();
    assert!(matches!(exp_term, TerminationReason::Escape { .. }), "{exp_term}");
    assert!(matches!(quad_term, TerminationReason::Singularity { .. }), "{quad_term}");
    let event = detect_escape(&exp_trace, DEFAULT_STATE_BOUND, DEFAULT_ENERGY_FLOOR).unwrap();
    assert!((event.time - quad_term.time().unwrap()).abs() <= 1e-2);
    assert!((event.time - 2f64.sqrt()).abs() <= 1e-3);
}

#[test]
fn fig3_energy_curves_agree_before_escape() {
    let cmp = fig3_compare(&SimConfig::new(1e-4, 3.0)).unwrap();
    assert!(cmp.max_energy_diff <= 1e-6, "{}", cmp.max_energy_diff);
    assert!(cmp.window_end > 1.40);
}

#[test]
fn free_mass_conserves_everything() {
    let sys = free_mass(2.0, 0.5, EnergyLaw::Quadratic, 1.0).unwrap();
    let (trace, term) = simulate(&sys, &SimConfig::new(1e-3, 1.0)).unwrap();
    assert!(term.is_completed());
    let first = &trace.samples[0];
    for s in &trace.samples {
        assert_eq!(s.h_total, first.h_total);
    }
}

#[test]
fn degenerate_draw_still_audits() {
    let base = random_passive_params(1, 1).unwrap()[0];
    let p = PassiveEnvParams {
        plant_stiffness: 0.0,
        plant_damping: 0.0,
        env_stiffness: 0.0,
        env_damping: 0.0,
        ..base
    };
    let (trace, term) = simulate(&p.build("degenerate").unwrap(), &p.sim_config(1.0)).unwrap();
    assert!(term.is_completed());
    assert!(passivity_audit(&trace, Storage::TotalH, None).unwrap().passed);
}

#[test]
fn plant_storage_audit_holds_with_dissipation() {
    for p in random_passive_params(9, 5).unwrap() {
        let (trace, _) = simulate(&p.build("plant").unwrap(), &p.sim_config(1.0)).unwrap();
        let report = passivity_audit(&trace, Storage::PlantH, None).unwrap();
        assert!(report.passed, "{report}");
    }
}

#[test]
fn seeded_draws_repeat() {
    assert_eq!(random_passive_params(3, 10).unwrap(), random_passive_params(3, 10).unwrap());
    assert_ne!(random_passive_params(3, 10).unwrap(), random_passive_params(4, 10).unwrap());
}
