//! Learn the flow map of an unknown dynamical system from snapshot data.
//!
//! Given observations `(x1, x2)` where `x2` is the system state one fixed time
//! lag after `x1`, this crate builds one-step prediction models of the form
//!
//! ```text
//! x(t + lag) ≈ L(x(t)) + N(x(t))
//! ```
//!
//! where `L` is a cheap *prior* approximation of the flow map and `N` is a small
//! fully connected network trained on the prior's residues `x2 - L(x1)`. The
//! classical ResNet-style time stepper is the special case `L = identity`; a
//! good prior shrinks the job left for the network, which shows up directly as
//! smaller training loss, smaller network output norm, and better long-horizon
//! rollouts.
//!
//! Available priors: identity, best-fit linear map (DMD), best-fit affine map
//! (modified DMD), a coarse reduced ODE integrated over the lag, and an
//! adaptively trained one-hidden-layer network.
//!
//! # Example
//!
//! ```
//! use flowmap::ode::{builtin_system, SamplingConfig, generate_pairs};
//! use flowmap::prior::{fit_mdmd, PriorOperator};
//! use flowmap::gresnet::{train_gresnet, rollout};
//! use flowmap::mlp::TrainConfig;
//! use flowmap::state::StateVector;
//!
//! let system = builtin_system("linear2").unwrap();
//! let cfg = SamplingConfig { num_pairs: 200, lag: 0.1, noise_level: 0.0, seed: 7, substeps: 10 };
//! let data = generate_pairs(&system, &cfg).unwrap();
//!
//! // Affine prior captures this system's flow map almost exactly ...
//! let (map, report) = fit_mdmd(&data).unwrap();
//! assert!(report.rms_residue < 1e-8);
//!
//! // ... so the correction network only has to learn a near-zero residue.
//! let prior = PriorOperator::Mdmd(map);
//! let train = TrainConfig { epochs: 20, ..TrainConfig::default() };
//! let (model, _record) = train_gresnet(&prior, &data, &[30, 30, 30], &train).unwrap();
//! let out = rollout(&model, &StateVector::new(vec![1.5, 0.0]), 20, None).unwrap();
//! assert_eq!(out.trajectory.len(), 21);
//! ```
//!
//! The `examples/` directory walks through each capability end to end; the
//! `flowmap` binary runs the same pipelines from declarative TOML configs.

pub mod analysis; // trajectory error metrics, network norm, power spectra
pub mod error; // crate-wide error type
pub mod experiment; // config-driven experiment runner and run comparison
pub mod gresnet; // prior + correction composition, training, rollout
pub mod mlp; // from-scratch MLP: init, forward, backprop, Adam training
pub mod ode; // built-in systems, RK4 integration, snapshot-pair sampling
pub mod prior; // prior operators: identity, DMD, mDMD, reduced ODE, shallow net
pub mod state; // state vectors, snapshot pair sets, trajectories

mod textio; // line-oriented parsing shared by the text serializers

pub use error::{Error, Result};
