use mcir_core::motion::{motion_sequence, MotionKind};
use mcir_core::projector::Geometry;
use mcir_core::simulate::{generate, make_phantom, NoiseModel, PhantomKind};

const SEEDS: u64 = 2000;

/// Noise realisations `d_i − A_i x`, indexed `[seed][gate][bin]`.
fn residuals(num_gates: usize, sigma: f64) -> Vec<Vec<Vec<f64>>> {
    let geom = Geometry::new(16, 16, 4, 8).unwrap();
    let x = make_phantom(PhantomKind::Thorax, 16, 16).unwrap();
    let motion = motion_sequence(MotionKind::Dilatation, num_gates, 0.05).unwrap();
    let clean = generate(&x, &motion, &geom, NoiseModel::new(0.0).unwrap(), 0).unwrap();
    (0..SEEDS)
        .map(|seed| {
            let noisy = generate(&x, &motion, &geom, NoiseModel::new(sigma).unwrap(), seed).unwrap();
            noisy
                .sinograms
                .iter()
                .zip(&clean.sinograms)
                .map(|(d, c)| d.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a - b).collect())
                .collect()
        })
        .collect()
}

#[test]
fn per_bin_variance_is_sigma_squared_over_gates() {
    let (n, sigma) = (4usize, 0.3);
    let target = sigma * sigma / n as f64;
    let eps = residuals(n, sigma);
    let bins = eps[0][0].len();
    let mut ratios = Vec::new();
    for g in 0..n {
        for b in 0..bins {
            let samples: Vec<f64> = eps.iter().map(|s| s[g][b]).collect();
            let mean = samples.iter().sum::<f64>() / SEEDS as f64;
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (SEEDS as f64 - 1.0);
            ratios.push(var / target);
        }
    }
    let pooled = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((0.9..=1.1).contains(&pooled), "pooled ratio {pooled}");
    // each estimate has relative sd sqrt(2/1999) ≈ 0.032
    for r in &ratios {
        assert!((0.8..=1.2).contains(r), "bin ratio {r}");
    }
}

#[test]
fn gates_draw_independent_noise() {
    let eps = residuals(3, 1.0);
    let bins = eps[0][0].len();
    let corr = |g: usize, h: usize, b: usize| {
        let xs: Vec<f64> = eps.iter().map(|s| s[g][b]).collect();
        let ys: Vec<f64> = eps.iter().map(|s| s[h][b]).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / SEEDS as f64, ys.iter().sum::<f64>() / SEEDS as f64);
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    };
    let mut all = Vec::new();
    for (g, h) in [(0, 1), (0, 2), (1, 2)] {
        for b in 0..bins {
            let c = corr(g, h, b);
            // null sd is 1/sqrt(2000) ≈ 0.022
            assert!(c.abs() < 0.11, "gates {g},{h} bin {b}: {c}");
            all.push(c);
        }
    }
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    assert!(mean.abs() < 0.01, "mean cross-correlation {mean}");
}

#[test]
fn neighbouring_bins_are_uncorrelated() {
    let eps = residuals(2, 1.0);
    let bins = eps[0][0].len();
    let mut total = 0.0;
    for b in 0..bins - 1 {
        let c: f64 = eps.iter().map(|s| s[0][b] * s[0][b + 1]).sum::<f64>() / SEEDS as f64 / 0.5;
        assert!(c.abs() < 0.11, "bins {b},{}: {c}", b + 1);
        total += c;
    }
    assert!((total / (bins - 1) as f64).abs() < 0.02);
}
