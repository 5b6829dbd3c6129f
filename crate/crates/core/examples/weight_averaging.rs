//! Weight-space averaging over a noisy descent trajectory: Gaussian weights
//! per epoch, and how GWA, a uniform mean, an EMA and the last iterate land
//! relative to the optimum.
//!
//! cargo run --example weight_averaging -- [epochs] [sigma2]

use crossmeta::ensemble::{
    baseline_average, default_mu, gaussian_weight, gwa_of_trajectory, normalize_weights, BaselineScheme, GwaState,
    DEFAULT_SIGMA2,
};
use crossmeta::ParamVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> crossmeta::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(12);
    let sigma2: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(DEFAULT_SIGMA2);
    let mu = default_mu(epochs);

    let w: Vec<f64> = (1..=epochs)
        .map(|t| gaussian_weight(t, mu, sigma2))
        .collect::<Result<_, _>>()?;
    println!("mu = {mu}, sigma2 = {sigma2}");
    for (t, n) in normalize_weights(&w)?.iter().enumerate() {
        println!("  epoch {:>2}  {:.4}  {}", t + 1, n, "#".repeat((n * 200.0) as usize));
    }

    // Noisy SGD on a 4-d bowl centred at 1: iterates approach the optimum and
    // then jitter around it.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let target = [1.0; 4];
    let mut theta = vec![-3.0; 4];
    let mut trajectory = Vec::new();
    let mut stream = GwaState::new(mu, sigma2, epochs, 1)?;
    for _ in 0..epochs {
        for (x, c) in theta.iter_mut().zip(&target) {
            *x -= 0.4 * (*x - c) + 0.4 * noise.sample(&mut rng);
        }
        let snap = ParamVector::from_slice(&theta)?;
        stream.update(&snap)?;
        trajectory.push(snap);
    }
    let dist = |p: &ParamVector| {
        p.values()
            .iter()
            .zip(&target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let gwa = gwa_of_trajectory(&trajectory, mu, sigma2)?;
    assert!(gwa.bit_eq(&stream.finalize()?));
    println!("distance to optimum:");
    println!("  last     {:.4}", dist(trajectory.last().unwrap()));
    println!("  gwa      {:.4}", dist(&gwa));
    println!(
        "  uniform  {:.4}",
        dist(&baseline_average(&trajectory, BaselineScheme::Uniform)?)
    );
    println!(
        "  ema 0.7  {:.4}",
        dist(&baseline_average(&trajectory, BaselineScheme::Ema { decay: 0.7 })?)
    );
    Ok(())
}
