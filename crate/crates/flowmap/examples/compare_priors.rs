//! One system, one budget, three priors: identity, linear, affine.
//!
//! The system is affine plus a weak nonlinearity, so neither fitted prior is
//! exact and the correction network always has real work left. Training loss
//! and correction output track prior quality directly. Rollout error mostly
//! does too, with one instructive wrinkle: the no-intercept linear fit is
//! *biased* on this system, and correcting a biased prior can end up worse
//! over many steps than correcting none at all. The affine prior wins every
//! column by a wide margin.
//!
//! Run with: cargo run --example compare_priors

use flowmap::analysis::{network_norm, trajectory_error};
use flowmap::gresnet::{rollout, train_gresnet};
use flowmap::mlp::TrainConfig;
use flowmap::ode::{builtin_system, generate_pairs, integrate_trajectory, SamplingConfig};
use flowmap::prior::{fit_dmd, fit_mdmd, PriorOperator};
use flowmap::state::StateVector;

fn main() -> flowmap::Result<()> {
    let system = builtin_system("linear3_nonlin")?;
    let lag = 0.1;
    let data = generate_pairs(
        &system,
        &SamplingConfig {
            num_pairs: 1000,
            lag,
            noise_level: 0.0,
            seed: 31,
            substeps: 10,
        },
    )?;
    let train = TrainConfig {
        epochs: 300,
        adam_eps: 1e-4,
        init_seed: 32,
        shuffle_seed: 33,
        ..TrainConfig::default()
    };

    let priors = [
        ("identity", PriorOperator::Identity { dim: data.dim() }),
        ("linear (dmd)", PriorOperator::Dmd(fit_dmd(&data)?.0)),
        ("affine (mdmd)", PriorOperator::Mdmd(fit_mdmd(&data)?.0)),
    ];

    let x0 = StateVector::new(vec![1.5, 0.0]);
    let steps = 20;
    let reference = integrate_trajectory(&system, &x0, lag, steps, 200)?;

    println!("prior            final loss   output rms   max rollout error");
    for (name, prior) in priors {
        let (model, record) = train_gresnet(&prior, &data, &[30, 30, 30], &train)?;
        let err = trajectory_error(&rollout(&model, &x0, steps, None)?.trajectory, &reference)?;
        println!(
            "{:<15} {:>11.3e} {:>12.3e} {:>15.3e}",
            name,
            record.train_loss.last().unwrap(),
            network_norm(&model, &data)?,
            err.max_error
        );
    }
    Ok(())
}
