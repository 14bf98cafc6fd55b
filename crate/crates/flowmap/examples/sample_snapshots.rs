//! Sample snapshot pairs from a built-in system and round-trip them to disk.
//!
//! Each pair `(x1, x2)` is one observation of the flow map: `x2` is the state
//! exactly one lag after `x1`, computed by dense RK4 integration from a point
//! drawn uniformly over the system's sampling domain. Pairs are independent
//! draws, not slices of one long trajectory, so they cover the domain evenly.
//!
//! Run with: cargo run --example sample_snapshots

use flowmap::ode::{
    builtin_system, generate_pairs, read_pairs, write_pairs, SamplingConfig, SYSTEM_NAMES,
};

fn main() -> flowmap::Result<()> {
    println!("built-in systems: {}", SYSTEM_NAMES.join(", "));

    let system = builtin_system("pendulum")?;
    println!(
        "\nsystem `{}`: dim {}, default lag {}, domain {:?}",
        system.name, system.dim, system.default_lag, system.domain
    );

    let cfg = SamplingConfig {
        num_pairs: 5,
        lag: system.default_lag,
        noise_level: 0.0,
        seed: 7,
        substeps: 10,
    };
    let clean = generate_pairs(&system, &cfg)?;
    println!("\n{} exact pairs at lag {}:", clean.count(), clean.lag());
    for pair in clean.iter() {
        println!("  x1 = {}  ->  x2 = {}", pair.x1, pair.x2);
    }

    // Same seed, same draws, but with measurement noise: both stored states
    // are perturbed componentwise, std = noise_level * domain half-width.
    let noisy = generate_pairs(
        &system,
        &SamplingConfig {
            noise_level: 0.02,
            ..cfg
        },
    )?;
    println!("\nperturbation sizes at 2% relative noise:");
    for (p, q) in clean.iter().zip(noisy.iter()) {
        println!(
            "  |dx1| = {:.3e}   |dx2| = {:.3e}",
            (&q.x1 - &p.x1).norm(),
            (&q.x2 - &p.x2).norm()
        );
    }

    // Pair sets serialize to a self-describing text format.
    let path = std::env::temp_dir().join("flowmap_pairs_demo.txt");
    write_pairs(&noisy, &path)?;
    let back = read_pairs(&path)?;
    println!(
        "\nwrote and re-read {} pairs via {}",
        back.count(),
        path.display()
    );

    // Some systems expose algebraic observables resolved from the state; the
    // tunnel-diode circuit reports its two resistor branch voltages.
    let circuit = builtin_system("electric")?;
    if let Some(alg) = &circuit.algebraic {
        let x = [0.5, 0.05];
        let values = alg.evaluate(&x);
        println!("\nobservables of `{}` at state {:?}:", circuit.name, x);
        for (name, value) in alg.names.iter().zip(&values) {
            println!("  {name} = {value:.6}");
        }
    }
    Ok(())
}
