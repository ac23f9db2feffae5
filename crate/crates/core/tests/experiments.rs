use matrixpower::experiments::{
    explore, generate_microdata, simulate, Estimator, ExploreConfig, SimConfig, SimMethod, SIM_BETA,
};
use matrixpower::moments::{big_five_covariance, BIG_FIVE_SIGMA2};
use matrixpower::numerics::sym_eigen;
use matrixpower::RngStream;

fn moments(v: &[f64]) -> (f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let skew = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
    (mean, var, skew)
}

#[test]
fn microdata_reproduce_population_moments() {
    let n = 1_000_000;
    let data = generate_microdata(n, &mut RngStream::new(99, 0)).unwrap();
    assert_eq!(data.p(), 5);
    let sigma = big_five_covariance::<f64>();
    let cols: Vec<Vec<f64>> = (0..6)
        .map(|j| (0..n).map(|i| data.get(i, j)).collect())
        .collect();
    let means: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    for a in 0..5 {
        assert!(means[a].abs() < 0.005, "mean {a}: {}", means[a]);
        for b in 0..5 {
            let cov = (0..n)
                .map(|i| (cols[a][i] - means[a]) * (cols[b][i] - means[b]))
                .sum::<f64>()
                / n as f64;
            assert!((cov - sigma[(a, b)]).abs() < 0.005, "cov {a},{b}: {cov}");
        }
    }

    let resid: Vec<f64> = (0..n)
        .map(|i| cols[5][i] - (0..5).map(|j| SIM_BETA[j] * cols[j][i]).sum::<f64>())
        .collect();
    let (m, v, _) = moments(&resid);
    assert!(m.abs() < 0.005);
    assert!((v - BIG_FIVE_SIGMA2).abs() < 0.01, "{v}");

    // Project onto the principal axes to recover the component scores.
    let eig = sym_eigen(&sigma).unwrap();
    let component = |k: usize| -> Vec<f64> {
        let u = eig.vectors.column(k);
        let scale = eig.values[k].sqrt();
        (0..n)
            .map(|i| (0..5).map(|j| u[j] * cols[j][i]).sum::<f64>() / scale)
            .collect()
    };
    let (m1, v1, s1) = moments(&component(0));
    assert!(m1.abs() < 0.01 && (v1 - 1.0).abs() < 0.01);
    // Sign of an eigenvector is arbitrary; the skew magnitude is not.
    assert!((s1.abs() - 2.0).abs() < 0.1, "{s1}");
    let (m2, v2, s2) = moments(&component(1));
    assert!(m2.abs() < 0.01 && (v2 - 1.0).abs() < 0.01);
    assert!(s2.abs() < 0.05, "{s2}");
    for k in 2..5 {
        let (m, v, s) = moments(&component(k));
        assert!(
            m.abs() < 0.01 && (v - 1.0).abs() < 0.01 && s.abs() < 0.02,
            "{k}: {m} {v} {s}"
        );
    }
}

#[test]
fn overall_test_needs_fewer_observations_than_r2_increase() {
    let cfg = ExploreConfig {
        draws: 200,
        ..ExploreConfig::default()
    };
    let report = explore(&cfg).unwrap();
    assert_eq!(report.records.len(), 200);
    for r in &report.records {
        let overall = r.n_overall.matrix_sampled.unwrap();
        let uniform = r.n_uniform.matrix_sampled.unwrap();
        assert!(overall <= uniform, "draw {}: {overall} > {uniform}", r.draw);
        assert!(r.n_overall.complete.unwrap() <= overall);
        for s in r.n_single.iter().filter_map(|s| s.matrix_sampled) {
            assert!(s > 0);
        }
    }
    assert_eq!(report.summary.overall_exceeds_uniform, 0);
}

#[test]
fn mean_interval_shrinks_with_replicates() {
    let half_width = |reps| {
        let cfg = SimConfig {
            reps,
            methods: vec![SimMethod::Complete],
            seed: 5,
            ..SimConfig::default()
        };
        let report = simulate(&cfg).unwrap();
        let s = report.estimator(Estimator::Complete).unwrap();
        s.coefficients
            .iter()
            .map(|c| 0.5 * (c.mean_ci[1] - c.mean_ci[0]))
            .collect::<Vec<_>>()
    };
    let small = half_width(300);
    let large = half_width(1200);
    for (a, b) in small.iter().zip(&large) {
        let ratio = a / b;
        assert!((ratio - 2.0).abs() < 0.3, "{ratio}");
    }
}
