use matrixpower::asymptotics;
use matrixpower::design::{builtin_bigfive, design1, design2, Design, Form};
use matrixpower::moments::{
    build_moments, inflate_beta_for_r2, poke_beta_for_r2, r_squared, regression_from_moments,
    MomentStructure, MomentsError, RegressionModel,
};
use matrixpower::numerics::{
    noncentral_chisq_cdf, spd_inverse, sym_eigen, Cholesky, Matrix, SymMatrix,
};
use matrixpower::power::{
    self, apportion, coef_test, r2_increase_uniform, sample_size, unit_cov_beta, wald_power,
    CovarianceKind, PowerSpec,
};
use matrixpower::RngStream;
use proptest::prelude::*;

/// `A Aᵀ / dim + 0.3 I` from a flat vector of entries.
fn spd_from(entries: &[f64], dim: usize) -> SymMatrix<f64> {
    SymMatrix::from_fn(dim, |i, j| {
        let dot: f64 = (0..dim)
            .map(|k| entries[i * dim + k] * entries[j * dim + k])
            .sum();
        dot / dim as f64 + if i == j { 0.3 } else { 0.0 }
    })
}

fn spd_strategy(dim: usize) -> impl Strategy<Value = SymMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, dim * dim).prop_map(move |e| spd_from(&e, dim))
}

fn model_strategy(
    max_p: usize,
) -> impl Strategy<Value = (Vec<f64>, SymMatrix<f64>, RegressionModel<f64>)> {
    (1..=max_p).prop_flat_map(|p| {
        (
            prop::collection::vec(-2.0..2.0f64, p),
            spd_strategy(p),
            -1.0..1.0f64,
            prop::collection::vec(-1.5..1.5f64, p),
            0.2..3.0f64,
        )
            .prop_map(|(mu, s, b0, beta, s2)| (mu, s, RegressionModel::new(b0, beta, s2).unwrap()))
    })
}

fn bigfive_instance() -> impl Strategy<Value = (SymMatrix<f64>, RegressionModel<f64>)> {
    (
        spd_strategy(5),
        prop::collection::vec(-1.0..1.0f64, 5),
        0.3..2.0f64,
    )
        .prop_map(|(s, beta, s2)| (s, RegressionModel::new(0.0, beta, s2).unwrap()))
}

fn max_abs(a: &SymMatrix<f64>, b: &SymMatrix<f64>) -> f64 {
    a.max_abs_diff(b)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spd_inverse_round_trip(dim in 1usize..=30, seed in any::<u64>()) {
        let mut s = RngStream::new(seed, 0);
        let e: Vec<f64> = (0..dim * dim).map(|_| s.std_normal()).collect();
        let a = spd_from(&e, dim);
        let inv = spd_inverse(&a).unwrap();
        let prod = a.to_matrix().matmul(&inv.to_matrix()).unwrap();
        let dev = prod.max_abs_diff(&Matrix::identity(dim));
        prop_assert!(dev < 1e-10, "{dev}");
    }

    #[test]
    fn eigen_reconstructs(dim in 1usize..=12, seed in any::<u64>()) {
        let mut s = RngStream::new(seed, 1);
        let mut a = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                a.set(i, j, s.std_normal());
            }
        }
        let eig = sym_eigen(&a).unwrap();
        let rel = eig.reconstruct().sub(&a).frobenius() / a.frobenius();
        prop_assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn moments_regression_round_trip((mu, sxx, model) in model_strategy(7)) {
        let m = build_moments(&mu, &sxx, &model).unwrap();
        let back = regression_from_moments(&m).unwrap();
        prop_assert!((back.beta0 - model.beta0).abs() < 1e-10);
        prop_assert!((back.sigma2 - model.sigma2).abs() < 1e-10);
        for (a, b) in back.beta.iter().zip(&model.beta) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let again = build_moments(&mu, &sxx, &back).unwrap();
        prop_assert!(max_abs(again.sigma(), m.sigma()) < 1e-10);
    }

    #[test]
    fn inflate_and_poke_hold_sigma2((_, sxx, model) in model_strategy(5), delta in 0.001..0.05f64, j in 0usize..5) {
        let r2 = r_squared(&model, &sxx);
        prop_assume!(r2 + delta < 0.99 && r2 > 1e-3);
        let up = inflate_beta_for_r2(&model, &sxx, delta).unwrap();
        prop_assert_eq!(up.sigma2, model.sigma2);
        prop_assert!((r_squared(&up, &sxx) - (r2 + delta)).abs() < 1e-10);
        let j = j % model.p();
        match poke_beta_for_r2(&model, &sxx, delta, j) {
            Ok(poked) => {
                prop_assert_eq!(poked.sigma2, model.sigma2);
                prop_assert!((r_squared(&poked, &sxx) - (r2 + delta)).abs() < 1e-10);
                for k in (0..model.p()).filter(|&k| k != j) {
                    prop_assert_eq!(poked.beta[k], model.beta[k]);
                }
            }
            Err(MomentsError::NoRealRoot { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn r_squared_scale_invariant((_, sxx, model) in model_strategy(5), a in 0.1..10.0f64) {
        let p = model.p();
        let scaled_cov = SymMatrix::from_fn(p, |i, j| a * a * sxx[(i, j)]);
        let scaled = RegressionModel::new(model.beta0, model.beta.iter().map(|b| b / a).collect(), model.sigma2).unwrap();
        prop_assert!((r_squared(&scaled, &scaled_cov) - r_squared(&model, &sxx)).abs() < 1e-12);
    }

    #[test]
    fn omega_pd_with_matching_determinant((mu, sxx, model) in model_strategy(5)) {
        let m = build_moments(&mu, &sxx, &model).unwrap();
        let omega = Cholesky::factor(m.omega().matrix()).unwrap();
        let sigma = Cholesky::factor(m.sigma()).unwrap();
        prop_assert!((omega.log_det() - sigma.log_det()).abs() < 1e-9);
    }

    #[test]
    fn estimability_ignores_order(perm_forms in Just((0..10).collect::<Vec<usize>>()).prop_shuffle(),
                                  perm_vars in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
                                  drop in 0usize..11) {
        let base = builtin_bigfive();
        // Optionally drop one form so that some designs are singular.
        let forms: Vec<Form> = base.forms().iter().enumerate()
            .filter(|(k, _)| *k != drop)
            .map(|(_, f)| Form { fraction: 1.0 / if drop < 10 { 9.0 } else { 10.0 }, ..f.clone() })
            .collect();
        let reference = Design::new(base.variables().to_vec(), "y", forms.clone()).unwrap();
        let shuffled_forms: Vec<Form> = perm_forms.iter().filter_map(|&k| forms.get(k).cloned()).collect();
        // Renumber variables: new position of old variable v is perm_vars[v].
        let mut names = vec![String::new(); 5];
        for (v, &pos) in perm_vars.iter().enumerate() {
            names[pos] = base.variables()[v].clone();
        }
        let relabeled: Vec<Form> = shuffled_forms.into_iter().map(|f| {
            let mut items: Vec<usize> = f.items.iter().map(|&v| perm_vars[v]).collect();
            items.sort_unstable();
            Form { items, ..f }
        }).collect();
        let permuted = Design::new(names, "y", relabeled).unwrap();
        let a = reference.validate_estimability();
        let b = permuted.validate_estimability();
        prop_assert_eq!(a.singular, b.singular);
        let mut ua: Vec<_> = a.uncovered_pairs.iter().map(|(x, y)| if x < y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) }).collect();
        let mut ub: Vec<_> = b.uncovered_pairs.iter().map(|(x, y)| if x < y { (x.clone(), y.clone()) } else { (y.clone(), x.clone()) }).collect();
        ua.sort();
        ub.sort();
        prop_assert_eq!(ua, ub);
        for c in &a.pair_coverage {
            let other = b.coverage(&c.first, &c.second).unwrap();
            prop_assert_eq!(c.forms.len(), other.forms.len());
        }
    }

    #[test]
    fn information_is_psd_and_scales((sxx, model) in bigfive_instance(), n in 10.0..1e5f64) {
        let m = build_moments(&[0.0; 5], &sxx, &model).unwrap();
        let d = builtin_bigfive();
        let info = asymptotics::information(&m, &d, n).unwrap();
        let eig = sym_eigen(&info.matrix).unwrap();
        let floor = -1e-10 * info.matrix.trace();
        prop_assert!(eig.values.iter().all(|&v| v >= floor));
        // Mean and covariance blocks are orthogonal.
        let means = info.index.mean_count();
        for a in 0..means {
            for b in means..info.index.parameter_count() {
                prop_assert_eq!(info.matrix[(a, b)], 0.0);
            }
        }
        let r1 = asymptotics::report(&m, &d, n).unwrap();
        let r2 = asymptotics::report(&m, &d, 2.0 * n).unwrap();
        let info2 = asymptotics::information(&m, &d, 2.0 * n).unwrap();
        prop_assert!(info2.matrix.max_abs_diff(&info.matrix.scale(2.0)) <= 1e-9 * info2.matrix.max_abs_diag());
        let scale = r1.cov_beta.max_abs_diag();
        prop_assert!(r2.cov_beta.scale(2.0).max_abs_diff(&r1.cov_beta) <= 1e-9 * scale);
        prop_assert!(r2.cov_omega.scale(2.0).max_abs_diff(&r1.cov_omega) <= 1e-9 * r1.cov_omega.max_abs_diag());
    }

    #[test]
    fn missingness_never_helps((sxx, model) in bigfive_instance()) {
        let m = build_moments(&[0.0; 5], &sxx, &model).unwrap();
        let r = asymptotics::report(&m, &builtin_bigfive(), 1.0).unwrap();
        let diff = r.cov_beta.sub(&r.cov_beta_complete);
        let eig = sym_eigen(&diff).unwrap();
        let floor = -1e-9 * r.cov_beta.max_abs_diag();
        prop_assert!(eig.values.iter().all(|&v| v >= floor), "{:?}", eig.values);
        prop_assert!(r.fmi[1..].iter().all(|&f| f > 0.0 && f < 1.0));
    }

    #[test]
    fn power_tends_to_alpha_at_the_null(j in 0usize..5, alpha in 0.01..0.2f64) {
        let sxx = matrixpower::moments::big_five_covariance::<f64>();
        let d = builtin_bigfive();
        let mut beta = vec![0.2; 5];
        beta[j] = 1e-9;
        let alt = RegressionModel::new(0.0, beta, 1.0).unwrap();
        let cov = unit_cov_beta(&[0.0; 5], &sxx, &alt, &d, CovarianceKind::MatrixSampled).unwrap();
        let h = coef_test(5, j, 0.0).unwrap();
        let pw = wald_power(&h, &alt, &cov, 1000.0, alpha).unwrap();
        prop_assert!((pw - alpha).abs() < 1e-6);
    }

    #[test]
    fn sample_size_monotone((sxx, model) in bigfive_instance(), d1 in 0.005..0.02f64, d2 in 0.005..0.02f64) {
        prop_assume!(r_squared(&model, &sxx) + d1.max(d2) < 0.95);
        let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
        let d = builtin_bigfive();
        let n_at = |delta: f64, kind| {
            let spec = r2_increase_uniform(&model, &sxx, delta, 0.05, 0.8).unwrap();
            power::plan(&spec, &[0.0; 5], &sxx, &d, kind).unwrap().n_total
        };
        prop_assert!(n_at(hi, CovarianceKind::MatrixSampled) <= n_at(lo, CovarianceKind::MatrixSampled));
        prop_assert!(n_at(lo, CovarianceKind::Complete) <= n_at(lo, CovarianceKind::MatrixSampled));
    }

    #[test]
    fn apportionment_within_one(n in 1u64..1_000_000, weights in prop::collection::vec(0.01..1.0f64, 1..12)) {
        let counts = apportion(n, &weights);
        let total: f64 = weights.iter().sum();
        prop_assert_eq!(counts.iter().sum::<u64>(), n);
        for (c, w) in counts.iter().zip(&weights) {
            prop_assert!((*c as f64 - w / total * n as f64).abs() <= 1.0);
        }
    }
}

#[test]
fn singular_designs_have_singular_information() {
    for (d, singular) in [
        (design1(), true),
        (design2(), false),
        (builtin_bigfive(), false),
    ] {
        assert_eq!(d.validate_estimability().singular, singular);
        let p = d.p();
        let m = MomentStructure::new(vec![0.0; p + 1], SymMatrix::identity(p + 1)).unwrap();
        let info = asymptotics::information(&m, &d, 100.0).unwrap();
        let eig = sym_eigen(&info.matrix).unwrap();
        let min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = eig.values.iter().cloned().fold(0.0, f64::max);
        assert_eq!(min / max < 1e-12, singular, "{min} {max}");
    }
}

#[test]
fn indefinite_covariance_is_rejected() {
    let s = SymMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
    assert!(MomentStructure::new(vec![0.0, 0.0], s).is_err());
}

#[test]
fn noncentral_chisq_matches_simulation() {
    let draws = 1_000_000;
    for df in [1u32, 5] {
        for lambda in [0.0f64, 5.0, 20.0] {
            let x = df as f64 + lambda;
            let shift = (lambda / df as f64).sqrt();
            let mut s = RngStream::new(17, (df as u64) * 100 + lambda as u64);
            let mut hits = 0usize;
            for _ in 0..draws {
                let v: f64 = (0..df).map(|_| (s.std_normal() + shift).powi(2)).sum();
                if v <= x {
                    hits += 1;
                }
            }
            let p_mc = hits as f64 / draws as f64;
            let se = (p_mc * (1.0 - p_mc) / draws as f64).sqrt();
            let p = noncentral_chisq_cdf(x, df, lambda);
            assert!(
                (p - p_mc).abs() <= 3.0 * se,
                "df {df} lambda {lambda}: {p} vs {p_mc} ± {se}"
            );
        }
    }
}

#[test]
fn power_spec_rejects_bad_levels() {
    let alt = RegressionModel::new(0.0, vec![0.3], 1.0).unwrap();
    assert!(PowerSpec::new(coef_test(1, 0, 0.0).unwrap(), alt.clone(), 1.5, 0.8).is_err());
    assert!(PowerSpec::new(coef_test(1, 0, 0.0).unwrap(), alt, 0.05, 0.0).is_err());
    let cov = SymMatrix::identity(2);
    let spec = PowerSpec::new(
        coef_test(1, 0, 0.0).unwrap(),
        RegressionModel::new(0.0, vec![0.3], 1.0).unwrap(),
        0.05,
        0.8,
    )
    .unwrap();
    assert!(sample_size(&spec, &cov, &[]).is_err());
}
