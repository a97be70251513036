use drdid::glm::{
    fit_logistic, fit_negbin, fit_negbin_fixed, fit_poisson, logistic_loglik, logistic_score,
    negbin_loglik, negbin_score, select_power_order, CountFamily, CvScheme,
};
use drdid::panel::{expand_features, DesignMatrix, FeatureSpec, OutcomeFamily, PanelDataset};
use drdid::rng::substream;
use drdid::sim::{correct_spec, generate_replicate, DgpParams};
use drdid::{Error, FitOptions};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn sim_sample(seed: u64, n: usize) -> PanelDataset {
    let mut rng = substream(seed, &[]);
    generate_replicate(&DgpParams::default(), n, &mut rng)
        .unwrap()
        .data
}

fn controls_before(data: &PanelDataset, spec: &FeatureSpec) -> (DesignMatrix, Vec<f64>) {
    let x = expand_features(data, spec).unwrap();
    let c = data.control_indices();
    let y = data.y_before();
    (x.select_rows(&c), c.iter().map(|&i| y[i]).collect())
}

/// Solves A x = b by Gauss–Jordan with partial pivoting.
#[allow(clippy::needless_range_loop)]
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..n {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..n {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    (0..n).map(|i| b[i] / a[i][i]).collect()
}

fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|j| solve(a.to_vec(), (0..n).map(|i| (i == j) as u8 as f64).collect()))
        .collect();
    (0..n)
        .map(|i| (0..n).map(|j| cols[j][i]).collect())
        .collect()
}

fn col_max(x: &DesignMatrix, j: usize) -> f64 {
    x.column(j).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn rows(x: &DesignMatrix) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i)).collect()
}

/// Plain Newton–Raphson for logistic regression; returns (coef, covariance).
fn oracle_logistic(x: &[Vec<f64>], y: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let q = x[0].len();
    let mut b = vec![0.0; q];
    let mut info = vec![vec![0.0; q]; q];
    for _ in 0..50 {
        let mut grad = vec![0.0; q];
        info = vec![vec![0.0; q]; q];
        for (xi, &yi) in x.iter().zip(y) {
            let eta: f64 = xi.iter().zip(&b).map(|(a, c)| a * c).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            for j in 0..q {
                grad[j] += (yi - p) * xi[j];
                for k in 0..q {
                    info[j][k] += p * (1.0 - p) * xi[j] * xi[k];
                }
            }
        }
        let step = solve(info.clone(), grad);
        for j in 0..q {
            b[j] += step[j];
        }
        if step.iter().all(|s| s.abs() < 1e-13) {
            break;
        }
    }
    (b, invert(&info))
}

/// NB2 log-likelihood without the ln y! constant, coded per unit.
fn oracle_nb_loglik(x: &[Vec<f64>], y: &[f64], b: &[f64], phi: f64) -> f64 {
    let mut ll = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let eta: f64 = xi.iter().zip(b).map(|(a, c)| a * c).sum();
        let m = eta.exp();
        for k in 0..yi as usize {
            ll += (k as f64 + phi).ln();
        }
        ll += yi * (m / (m + phi)).ln() + phi * (phi / (m + phi)).ln();
    }
    ll
}

/// Mean coefficients at fixed φ by Newton on the exact NB Hessian.
fn oracle_nb_beta(x: &[Vec<f64>], y: &[f64], phi: f64, start: &[f64]) -> Vec<f64> {
    let q = x[0].len();
    let mut b = start.to_vec();
    for _ in 0..100 {
        let mut grad = vec![0.0; q];
        let mut hess = vec![vec![0.0; q]; q];
        for (xi, &yi) in x.iter().zip(y) {
            let eta: f64 = xi.iter().zip(&b).map(|(a, c)| a * c).sum();
            let m = eta.exp();
            let r = phi * (yi - m) / (phi + m);
            let w = phi * m * (phi + yi) / ((phi + m) * (phi + m));
            for j in 0..q {
                grad[j] += r * xi[j];
                for k in 0..q {
                    hess[j][k] += w * xi[j] * xi[k];
                }
            }
        }
        let step = solve(hess, grad);
        for j in 0..q {
            b[j] += step[j];
        }
        if step.iter().all(|s| s.abs() < 1e-12) {
            break;
        }
    }
    b
}

#[test]
fn logistic_score_matches_finite_differences() {
    let data = sim_sample(101, 400);
    let x = expand_features(&data, &correct_spec()).unwrap();
    let g = data.treatment_labels();
    let mut rng = substream(7, &[]);
    for _ in 0..5 {
        let coef: Vec<f64> = [-2.0f64, 1.0, -0.2, 0.04]
            .iter()
            .map(|c| c + 0.3 * (rng.random::<f64>() - 0.5) * c.abs().max(0.1))
            .collect();
        let score = logistic_score(&x, &g, &coef);
        for j in 0..coef.len() {
            let h = 1e-4 / col_max(&x, j);
            let mut up = coef.clone();
            let mut down = coef.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (logistic_loglik(&x, &g, &up) - logistic_loglik(&x, &g, &down)) / (2.0 * h);
            let rel = (fd - score[j]).abs() / score[j].abs().max(1.0);
            assert!(rel < 1e-6, "coef {j}: fd {fd} vs analytic {}", score[j]);
        }
    }
}

#[test]
fn negbin_score_matches_finite_differences() {
    let data = sim_sample(102, 600);
    let (x, y) = controls_before(&data, &correct_spec());
    let mut rng = substream(8, &[]);
    for _ in 0..5 {
        let coef: Vec<f64> = [-2.0f64, 0.4, 0.43, -0.022]
            .iter()
            .map(|c| c + 0.3 * (rng.random::<f64>() - 0.5) * c.abs())
            .collect();
        let phi = 0.5 + 4.0 * rng.random::<f64>();
        let (score, dphi) = negbin_score(&x, &y, &coef, phi).unwrap();
        for j in 0..coef.len() {
            let h = 1e-4 / col_max(&x, j);
            let mut up = coef.clone();
            let mut down = coef.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (negbin_loglik(&x, &y, &up, phi).unwrap()
                - negbin_loglik(&x, &y, &down, phi).unwrap())
                / (2.0 * h);
            let rel = (fd - score[j]).abs() / score[j].abs().max(1.0);
            assert!(rel < 1e-6, "coef {j}: fd {fd} vs analytic {}", score[j]);
        }
        let h = 1e-6 * phi;
        let fd = (negbin_loglik(&x, &y, &coef, phi + h).unwrap()
            - negbin_loglik(&x, &y, &coef, phi - h).unwrap())
            / (2.0 * h);
        let rel = (fd - dphi).abs() / dphi.abs().max(1.0);
        assert!(rel < 1e-6, "dispersion: fd {fd} vs analytic {dphi}");
    }
}

#[test]
fn poisson_score_matches_finite_differences() {
    let data = sim_sample(103, 300);
    let (x, y) = controls_before(&data, &correct_spec());
    let coef = [-1.8, 0.3, 0.4, -0.02];
    let (score, dphi) = negbin_score(&x, &y, &coef, f64::INFINITY).unwrap();
    assert_eq!(dphi, 0.0);
    for j in 0..coef.len() {
        let h = 1e-4 / col_max(&x, j);
        let mut up = coef.to_vec();
        let mut down = coef.to_vec();
        up[j] += h;
        down[j] -= h;
        let fd = (negbin_loglik(&x, &y, &up, f64::INFINITY).unwrap()
            - negbin_loglik(&x, &y, &down, f64::INFINITY).unwrap())
            / (2.0 * h);
        assert!((fd - score[j]).abs() / score[j].abs().max(1.0) < 1e-6);
    }
}

#[test]
fn huge_dispersion_reproduces_poisson() {
    let data = sim_sample(104, 2000);
    let (x, y) = controls_before(&data, &correct_spec());
    let options = FitOptions::default();
    let pois = fit_poisson(&x, &y, &options).unwrap();
    let nb = fit_negbin_fixed(&x, &y, 1e8, &options).unwrap();
    assert!(pois.converged && nb.converged);
    assert_eq!(pois.family, CountFamily::Poisson);
    for (a, b) in pois.coefficients.iter().zip(&nb.coefficients) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn intercept_only_fits_match_sample_statistics() {
    let data = sim_sample(105, 1500);
    let one = FeatureSpec::intercept_only();
    let x = expand_features(&data, &one).unwrap();
    let g = data.treatment_labels();
    let options = FitOptions::default();
    let lf = fit_logistic(&x, &g, &options).unwrap();
    let share = g.iter().sum::<f64>() / g.len() as f64;
    for p in lf.predict(&x).unwrap() {
        assert!((p - share).abs() < 1e-12);
    }
    let (xc, yc) = controls_before(&data, &one);
    let mean = yc.iter().sum::<f64>() / yc.len() as f64;
    let nb = fit_negbin(&xc, &yc, &options).unwrap();
    assert!((nb.coefficients[0] - mean.ln()).abs() < 1e-10);
    let pois = fit_poisson(&xc, &yc, &options).unwrap();
    assert!((pois.coefficients[0] - mean.ln()).abs() < 1e-12);
}

#[test]
fn loglik_traces_never_decrease() {
    let options = FitOptions::default();
    for seed in 0..10 {
        let data = sim_sample(200 + seed, 800);
        for spec in [
            correct_spec(),
            FeatureSpec::intercept_only().with_power("x2", 1),
        ] {
            let x = expand_features(&data, &spec).unwrap();
            let lf = fit_logistic(&x, &data.treatment_labels(), &options).unwrap();
            let (xc, yc) = controls_before(&data, &spec);
            let nb = fit_negbin(&xc, &yc, &options).unwrap();
            for trace in [&lf.loglik_trace, &nb.loglik_trace] {
                for w in trace.windows(2) {
                    assert!(
                        w[1] >= w[0] - 1e-12 * (1.0 + w[0].abs()),
                        "{} -> {}",
                        w[0],
                        w[1]
                    );
                }
            }
            assert!(lf.converged && nb.converged);
        }
    }
}

#[test]
fn logistic_score_vanishes_at_the_fit() {
    let data = sim_sample(106, 2000);
    let x = expand_features(&data, &correct_spec()).unwrap();
    let g = data.treatment_labels();
    let fit = fit_logistic(&x, &g, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    let p = fit.predict(&x).unwrap();
    for j in 0..x.ncols() {
        let s: f64 = x
            .column(j)
            .iter()
            .zip(g.iter().zip(&p))
            .map(|(xv, (y, pv))| (y - pv) * xv)
            .sum();
        assert!(s.abs() < 1e-8, "column {j}: {s}");
    }
}

#[test]
fn logistic_dgp_coefficients_match_newton_oracle() {
    let data = sim_sample(107, 2000);
    let x = expand_features(&data, &correct_spec()).unwrap();
    let g = data.treatment_labels();
    let fit = fit_logistic(&x, &g, &FitOptions::default()).unwrap();
    let (oracle, cov) = oracle_logistic(&rows(&x), &g);
    let truth = [-2.0, 1.0, -0.2, 0.04];
    for j in 0..4 {
        assert!(
            (fit.coefficients[j] - oracle[j]).abs() < 1e-7 * (1.0 + oracle[j].abs()),
            "coef {j}: {} vs oracle {}",
            fit.coefficients[j],
            oracle[j]
        );
        let se = cov[j][j].sqrt();
        assert!(
            (oracle[j] - truth[j]).abs() < 3.0 * se,
            "coef {j}: {} is more than 3 SE ({se}) from {}",
            oracle[j],
            truth[j]
        );
    }
}

#[test]
fn negbin_dispersion_matches_grid_search_oracle() {
    let data = sim_sample(108, 2000);
    let (x, y) = controls_before(&data, &correct_spec());
    let fit = fit_negbin(&x, &y, &FitOptions::default()).unwrap();
    assert!(fit.converged);
    assert_eq!(fit.family, CountFamily::Negbin);

    let xr = rows(&x);
    let profile = |log_phi: f64, start: &[f64]| {
        let phi = log_phi.exp();
        let b = oracle_nb_beta(&xr, &y, phi, start);
        (oracle_nb_loglik(&xr, &y, &b, phi), b)
    };
    let start = fit.coefficients.iter().map(|_| 0.0).collect::<Vec<_>>();
    let mut start = start;
    start[0] = (y.iter().sum::<f64>() / y.len() as f64).ln();
    // Coarse grid over φ ∈ [0.1, 100], then golden-section refinement.
    let grid: Vec<f64> = (0..=60)
        .map(|k| (0.1f64).ln() + k as f64 * (1000f64).ln() / 60.0)
        .collect();
    let best = grid
        .iter()
        .map(|&t| (t, profile(t, &start).0))
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
        .0;
    let step = (1000f64).ln() / 60.0;
    let (mut lo, mut hi) = (best - step, best + step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let a = hi - r * (hi - lo);
        let b = lo + r * (hi - lo);
        if profile(a, &start).0 > profile(b, &start).0 {
            hi = b;
        } else {
            lo = a;
        }
    }
    let phi_oracle = (0.5 * (lo + hi)).exp();
    assert!(
        (fit.dispersion - phi_oracle).abs() < 1e-5 * phi_oracle,
        "{} vs oracle {phi_oracle}",
        fit.dispersion
    );
    // SE from the curvature of the profile log-likelihood in φ.
    let h = 1e-3 * phi_oracle;
    let pl = |phi: f64| profile(phi.ln(), &start).0;
    let curv = (pl(phi_oracle + h) - 2.0 * pl(phi_oracle) + pl(phi_oracle - h)) / (h * h);
    let se = (-1.0 / curv).sqrt();
    assert!(
        (phi_oracle - 2.5).abs() < 3.0 * se,
        "φ̂ = {phi_oracle} is more than 3 SE ({se}) from 2.5"
    );
}

#[test]
fn duplicated_columns_are_singular_for_both_families() {
    let data = sim_sample(109, 300);
    let x = expand_features(&data, &correct_spec()).unwrap();
    let mut cols = rows(&x);
    for r in &mut cols {
        let last = r[3];
        r.push(last);
    }
    let mut names = x.names().to_vec();
    names.push("copy".into());
    let dup = DesignMatrix::from_rows(names, &cols).unwrap();
    let options = FitOptions::default();
    assert!(matches!(
        fit_logistic(&dup, &data.treatment_labels(), &options),
        Err(Error::SingularInformation(_))
    ));
    let c = data.control_indices();
    let y: Vec<f64> = c.iter().map(|&i| data.units()[i].y_after).collect();
    assert!(matches!(
        fit_negbin(&dup.select_rows(&c), &y, &options),
        Err(Error::SingularInformation(_))
    ));
}

fn linear_logit_sample(n: usize, seed: u64) -> PanelDataset {
    let mut rng = substream(seed, &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let v: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let g: Vec<bool> = v
        .iter()
        .map(|x| rng.random::<f64>() < 1.0 / (1.0 + (1.0 - 0.8 * x).exp()))
        .collect();
    PanelDataset::from_columns(
        &vec![0.0; n],
        &vec![0.0; n],
        &g,
        &[("v", &v)],
        OutcomeFamily::Count,
    )
    .unwrap()
}

#[test]
fn order_selection_picks_one_for_linear_logit() {
    let data = linear_logit_sample(5000, 31);
    let spec = FeatureSpec::intercept_only().with_power("v", 1);
    let sel = select_power_order(
        &data,
        &spec,
        &[1, 2, 3, 4, 5],
        CvScheme::default_for(data.len()),
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(sel.order, 1, "scores: {:?}", sel.scores);
}

#[test]
fn order_selection_picks_two_for_quadratic_logit() {
    let data = sim_sample(32, 2000);
    let spec = FeatureSpec::linear(&["x1"]).with_power("x2", 1);
    let sel = select_power_order(
        &data,
        &spec,
        &[1, 2, 3, 4, 5],
        CvScheme::Loocv,
        &FitOptions::default(),
    )
    .unwrap();
    assert_eq!(sel.order, 2, "scores: {:?}", sel.scores);
    assert_eq!(sel.spec, correct_spec());
}
