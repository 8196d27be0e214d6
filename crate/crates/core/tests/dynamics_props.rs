use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tunnelpilot_core::config::ModelParams;
use tunnelpilot_core::dynamics::{derivative, step_euler, step_oracle};
use tunnelpilot_core::{ControlInput, MavState, ObstacleDistances};

fn random_state(rng: &mut ChaCha8Rng) -> MavState {
    MavState::new(
        rng.random_range(0.5..3.0),
        [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..0.5)],
        rng.random_range(-0.3..0.3),
        rng.random_range(-0.3..0.3),
        ObstacleDistances::new([10.0; 5]).unwrap(),
    )
    .unwrap()
}

fn random_input(rng: &mut ChaCha8Rng) -> ControlInput {
    ControlInput::new(
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
        rng.random_range(0.2..0.8),
    )
    .unwrap()
}

fn distance(a: &MavState, b: &MavState) -> f64 {
    a.as_array()
        .iter()
        .zip(b.as_array())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn euler_local_error_is_second_order() {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..20 {
        let x = random_state(&mut rng);
        let u = random_input(&mut rng);
        let err = |ts: f64| distance(&step_euler(&x, &u, ts, &p), &step_oracle(&x, &u, ts, &p, 1000));
        let ratio = err(0.05) / err(0.025);
        assert!((3.5..=4.5).contains(&ratio), "case {case}: ratio {ratio}");
    }
}

#[test]
fn oracle_converges_with_substeps() {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let x = random_state(&mut rng);
        let u = random_input(&mut rng);
        let fine = step_oracle(&x, &u, 0.05, &p, 1000);
        assert!(distance(&step_oracle(&x, &u, 0.05, &p, 10), &fine) < 1e-9);
    }
}

#[test]
fn drag_dissipates_at_hover_input() {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let hover = ControlInput::level(p.hover_thrust());
    for _ in 0..200 {
        let v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let x = MavState::new(1.0, v, 0.0, 0.0, ObstacleDistances::new([10.0; 5]).unwrap()).unwrap();
        for ts in [0.001, 0.01, 0.05] {
            let next = step_euler(&x, &hover, ts, &p);
            let norm = |s: [f64; 3]| s.iter().map(|c| c * c).sum::<f64>().sqrt();
            assert!(norm(next.velocity()) <= norm(x.velocity()));
        }
    }
}

#[test]
fn distance_channels_follow_velocity_only() {
    let p = ModelParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let x = random_state(&mut rng);
        let u = random_input(&mut rng);
        let d = derivative(&x, &u, &p).0;
        let [vx, vy, vz] = x.velocity();
        assert_eq!(&d[6..], &[-vx, vx, -vy, vy, -vz]);
    }
}
