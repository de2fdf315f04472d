//! Back-time cycles and the Monte-Carlo cycle measure.

use kinetics_core::characteristics::{
    backward_exit, cycle_measure_estimates, sample_cycle, CycleSettings, PhasePoint, WallForce,
    ZeroForce, MC_STEPS_PER_PERIOD, STEPS_PER_PERIOD,
};
use kinetics_core::wall::{FrameClock, WallMotion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn plain() -> CycleSettings {
    CycleSettings {
        with_factors: false,
        ..CycleSettings::default()
    }
}

#[test]
fn single_free_leg_matches_speed_law() {
    // Without force a leg lasts 1/|v₁|; under the flux measure |v₁| is
    // Rayleigh, so P(1/|v₁| < T₀) = exp(−1/(2T₀²)).
    for t0 in [0.8, 2.0] {
        let e = cycle_measure_estimates(&ZeroForce, t0, &[1], 200_000, 3, &plain())[0];
        let exact = (-0.5 / (t0 * t0)).exp();
        assert!(
            (e.estimate - exact).abs() <= 4.0 * e.stderr,
            "T0 {t0}: {e:?} vs {exact}"
        );
    }
}

#[test]
fn sampled_cycles_follow_the_exit_map() {
    let clock = FrameClock::new(&WallMotion::sine(0.05, 1.0).unwrap());
    let force = WallForce { clock: &clock };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = PhasePoint::new(3.0, 0.4, [0.8, 0.3, -0.2]);
    let one = sample_cycle(p, &force, 1, &mut rng, &plain());
    let e = backward_exit(p, &force, 1e3);
    let end = one.points[1];
    assert!((end.t - (p.t - e.t_b)).abs() < 1e-12 && (end.x - e.x_b).abs() < 1e-12);

    let free = sample_cycle(p, &ZeroForce, 6, &mut rng, &plain());
    for w in free.points.windows(2).skip(1) {
        // Wall-to-wall legs last 1/|v₁| of the sampled velocity.
        assert!(((w[0].t - w[1].t) - 1.0 / w[0].v[0].abs()).abs() < 1e-12);
        assert!(w[0].x == 0.0 || w[0].x == 1.0);
    }
}

#[test]
fn estimates_decrease_with_cycle_count() {
    let clock = FrameClock::new(&WallMotion::sine(0.01, 1.0).unwrap());
    let force = WallForce { clock: &clock };
    let st = CycleSettings {
        steps_per_period: MC_STEPS_PER_PERIOD,
        ..CycleSettings::default()
    };
    let ks = [1, 2, 3, 4];
    let est = cycle_measure_estimates(&force, 5.0, &ks, 20_000, 4, &st);
    for w in est.windows(2) {
        assert!(
            w[1].estimate <= w[0].estimate + 3.0 * (w[0].stderr + w[1].stderr),
            "{est:?}"
        );
    }
    let free = cycle_measure_estimates(&ZeroForce, 5.0, &ks, 20_000, 4, &plain());
    assert!(
        free.windows(2).all(|w| w[1].estimate <= w[0].estimate),
        "{free:?}"
    );
}

#[test]
fn coarse_steps_keep_estimates_within_one_percent() {
    let clock = FrameClock::new(&WallMotion::sine(0.01, 1.0).unwrap());
    let force = WallForce { clock: &clock };
    let run = |steps: usize| {
        let st = CycleSettings {
            steps_per_period: steps,
            ..CycleSettings::default()
        };
        cycle_measure_estimates(&force, 20.0, &[1, 3], 2048, 12, &st)
    };
    let (fine, coarse) = (run(STEPS_PER_PERIOD), run(MC_STEPS_PER_PERIOD));
    for (f, c) in fine.iter().zip(&coarse) {
        assert!(f.estimate > 0.0);
        assert!(
            (c.estimate / f.estimate - 1.0).abs() <= 1e-2,
            "{f:?} vs {c:?}"
        );
    }
}
