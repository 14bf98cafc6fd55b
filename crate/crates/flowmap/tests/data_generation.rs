//! Snapshot sampling and integration checks against independent references.

mod common;

use common::*;
use flowmap::ode::{
    advance, builtin_system, generate_pairs, integrate_trajectory, read_pairs, write_pairs,
    SamplingConfig, SYSTEM_NAMES,
};
use flowmap::state::StateVector;
use flowmap::Error;
use nalgebra::DVector;
use tempfile::tempdir;

fn config(num_pairs: usize, noise: f64, seed: u64) -> SamplingConfig {
    SamplingConfig {
        num_pairs,
        lag: 0.1,
        noise_level: noise,
        seed,
        substeps: 10,
    }
}

#[test]
fn advance_matches_matrix_exponential_on_linear1() {
    let sys = builtin_system("linear1").unwrap();
    let phi = expm(&(matrices::linear1() * 0.1));
    let x0 = StateVector::new(vec![1.5, 0.3]);
    let x1 = advance(&sys, &x0, 0.1, 100).unwrap();
    let exact = &phi * DVector::from_column_slice(x0.as_slice());
    for i in 0..2 {
        assert!((x1[i] - exact[i]).abs() < 1e-10, "{} vs {}", x1[i], exact[i]);
    }
}

#[test]
fn advance_matches_standalone_rk4_stage_for_stage() {
    // Same scheme, same step count: results must agree to rounding noise.
    let sys = builtin_system("pendulum").unwrap();
    let x0 = [-1.193, -3.876];
    let ours = advance(&sys, &StateVector::new(x0.to_vec()), 0.1, 16).unwrap();
    let theirs = reference_rk4(|x, d| sys.rhs(x, d), &x0, 0.1, 16);
    for i in 0..2 {
        assert!((ours[i] - theirs[i]).abs() < 1e-14);
    }
}

#[test]
fn integrator_is_fourth_order() {
    // Halving the step on a fixed horizon should cut the error ~16x.
    let sys = builtin_system("pendulum").unwrap();
    let x0 = StateVector::new(vec![1.0, 0.0]);
    let truth = advance(&sys, &x0, 1.0, 4096).unwrap();
    let err = |substeps: usize| {
        advance(&sys, &x0, 1.0, substeps)
            .unwrap()
            .distance(&truth)
    };
    let (e8, e16, e32) = (err(8), err(16), err(32));
    assert!(e8 / e16 > 14.0, "first halving ratio {}", e8 / e16);
    assert!(e16 / e32 > 14.0, "second halving ratio {}", e16 / e32);
}

#[test]
fn trajectory_states_match_repeated_advance() {
    let sys = builtin_system("linear2").unwrap();
    let x0 = StateVector::new(vec![1.5, 0.0]);
    let traj = integrate_trajectory(&sys, &x0, 0.1, 5, 20).unwrap();
    assert_eq!(traj.len(), 6);
    let mut x = x0.clone();
    assert_eq!(traj.state(0), &x);
    for k in 1..=5 {
        x = advance(&sys, &x, 0.1, 20).unwrap();
        assert_eq!(traj.state(k), &x, "state {k} must match step-by-step advance");
    }
    assert_eq!(traj.times()[3], 3.0 * 0.1);
}

#[test]
fn sampled_initial_states_stay_inside_the_domain() {
    for name in ["linear1", "pendulum", "electric", "multiscale_true"] {
        let sys = builtin_system(name).unwrap();
        let mut cfg = config(200, 0.0, 99);
        if name == "electric" {
            cfg.lag = 2e-9;
        }
        if name == "multiscale_true" {
            cfg.lag = 0.05;
            cfg.substeps = 50;
        }
        let set = generate_pairs(&sys, &cfg).unwrap();
        for pair in set.iter() {
            for (i, &(lo, hi)) in sys.domain.iter().enumerate() {
                assert!(
                    pair.x1[i] >= lo && pair.x1[i] < hi,
                    "{name}: x1[{i}] = {} outside [{lo}, {hi})",
                    pair.x1[i]
                );
            }
        }
    }
}

#[test]
fn same_seed_reproduces_identical_data() {
    let sys = builtin_system("linear2").unwrap();
    let a = generate_pairs(&sys, &config(50, 0.02, 7)).unwrap();
    let b = generate_pairs(&sys, &config(50, 0.02, 7)).unwrap();
    for (pa, pb) in a.iter().zip(b.iter()) {
        assert_eq!(pa.x1.as_slice(), pb.x1.as_slice());
        assert_eq!(pa.x2.as_slice(), pb.x2.as_slice());
    }
    let c = generate_pairs(&sys, &config(50, 0.02, 8)).unwrap();
    assert_ne!(a.pairs()[0].x1.as_slice(), c.pairs()[0].x1.as_slice());
}

#[test]
fn pair_streams_are_independent_of_count() {
    // Growing the data set keeps the existing pairs bit-identical.
    let sys = builtin_system("linear2").unwrap();
    let small = generate_pairs(&sys, &config(10, 0.05, 3)).unwrap();
    let large = generate_pairs(&sys, &config(40, 0.05, 3)).unwrap();
    for (ps, pl) in small.iter().zip(large.iter()) {
        assert_eq!(ps.x1.as_slice(), pl.x1.as_slice());
        assert_eq!(ps.x2.as_slice(), pl.x2.as_slice());
    }
}

#[test]
fn noise_magnitude_tracks_the_requested_level() {
    // With the same seed, the noiseless run exposes the clean states, so the
    // actual perturbations are observable exactly.
    let sys = builtin_system("linear2").unwrap(); // domain [0,2]^2, half-width 1
    let eta = 0.05;
    let clean = generate_pairs(&sys, &config(10_000, 0.0, 42)).unwrap();
    let noisy = generate_pairs(&sys, &config(10_000, eta, 42)).unwrap();
    for comp in 0..2 {
        let deltas: Vec<f64> = clean
            .iter()
            .zip(noisy.iter())
            .map(|(c, n)| n.x1[comp] - c.x1[comp])
            .collect();
        let std = sample_std(&deltas);
        let expected = eta * 1.0;
        assert!(
            (std - expected).abs() < 0.05 * expected,
            "component {comp}: measured std {std}, expected {expected}"
        );
        let mean = deltas.iter().sum::<f64>() / deltas.len() as f64;
        assert!(mean.abs() < 3.0 * expected / (deltas.len() as f64).sqrt() * 3.0);
    }
}

#[test]
fn noiseless_pairs_lie_on_the_true_flow() {
    let sys = builtin_system("linear1").unwrap();
    let mut cfg = config(100, 0.0, 5);
    cfg.substeps = 100;
    let set = generate_pairs(&sys, &cfg).unwrap();
    let phi = expm(&(matrices::linear1() * 0.1));
    for pair in set.iter() {
        let exact = &phi * DVector::from_column_slice(pair.x1.as_slice());
        for i in 0..2 {
            assert!((pair.x2[i] - exact[i]).abs() < 1e-10);
        }
    }
}

#[test]
fn pair_file_round_trip_is_bit_exact() {
    let sys = builtin_system("pendulum").unwrap();
    let set = generate_pairs(&sys, &config(37, 0.03, 12)).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("pairs.txt");
    write_pairs(&set, &path).unwrap();
    let back = read_pairs(&path).unwrap();
    assert_eq!(back.dim(), set.dim());
    assert_eq!(back.lag(), set.lag());
    assert_eq!(back.count(), set.count());
    assert_eq!(back.origin.system, "pendulum");
    assert_eq!(back.origin.seed, 12);
    assert_eq!(back.origin.noise_level, 0.03);
    for (a, b) in set.iter().zip(back.iter()) {
        assert_eq!(a.x1.as_slice(), b.x1.as_slice());
        assert_eq!(a.x2.as_slice(), b.x2.as_slice());
    }
}

#[test]
fn malformed_pair_files_are_rejected_with_line_numbers() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("bad.txt");

    // Wrong column count on the second data row.
    std::fs::write(
        &path,
        "# system=linear2 n=2 lag=1e-1 noise=0e0 seed=1 count=2\n1 2 3 4\n1 2 3\n",
    )
    .unwrap();
    let err = read_pairs(&path).unwrap_err();
    assert!(matches!(err, Error::Format { line: 3, .. }), "{err}");

    // Unparseable number.
    std::fs::write(
        &path,
        "# system=linear2 n=2 lag=1e-1 noise=0e0 seed=1 count=1\n1 2 x 4\n",
    )
    .unwrap();
    let err = read_pairs(&path).unwrap_err();
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn every_builtin_system_integrates_over_its_own_scales() {
    for &name in SYSTEM_NAMES {
        let sys = builtin_system(name).unwrap();
        let x0 = StateVector::new(
            sys.domain
                .iter()
                .map(|&(lo, hi)| 0.5 * (lo + hi) + 0.25 * (hi - lo))
                .collect(),
        );
        let x1 = advance(&sys, &x0, sys.default_lag, sys.default_substeps).unwrap();
        assert!(x1.is_finite(), "{name} produced a non-finite state");
        assert_eq!(x1.dim(), sys.dim);
    }
}

#[test]
fn stiff_circuit_lag_is_resolved_by_default_substeps() {
    // The oscillator's natural period is 2*pi*sqrt(L*C) ~ 2e-7 s; one default
    // lag must integrate accurately enough that halving the step changes
    // nothing at the 1e-10 level.
    let sys = builtin_system("electric").unwrap();
    let x0 = StateVector::new(vec![1.0, 0.1]);
    let coarse = advance(&sys, &x0, sys.default_lag, sys.default_substeps).unwrap();
    let fine = advance(&sys, &x0, sys.default_lag, sys.default_substeps * 2).unwrap();
    assert!(coarse.distance(&fine) < 1e-10 * x0.norm().max(1.0));
}
