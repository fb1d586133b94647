use approx::assert_relative_eq;
use cbm_proposals::datagen::hexagon::{cluster_labeling, enumerate_arc_concepts};
use cbm_proposals::datagen::{gen_hexagon, gen_vitals, oracle_valid_combinations, HexagonConfig, VitalsConfig};
use cbm_proposals::eval::{coverage_report, match_explanation, CoverageMode, Proposals};
use cbm_proposals::hmc::{hmc_chain, leapfrog};
use cbm_proposals::model::log_posterior_terms;
use cbm_proposals::sampler::run_restarts;
use cbm_proposals::select::{kmeans, kmeans_select};
use cbm_proposals::{
    ConceptParams, Dataset, Execution, GroundTruthCatalog, HmcConfig, LabelParams, Matrix, MetricKind, NamedConcept,
    PriorSpec,
};
use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cluster_concepts() -> Vec<Vec<u8>> {
    enumerate_arc_concepts(&(0..6).collect::<Vec<_>>(), 6)
}

#[test]
fn log_posterior_matches_high_precision_value() {
    let ds = Dataset::from_rows(&[vec![0.5, -1.0], vec![1.5, 0.25], vec![-0.75, 2.0]], vec![1, 0, 1]).unwrap();
    let theta = ConceptParams::new(Matrix::from_vec(2, 2, vec![0.3, -0.2, 0.1, 0.4]).unwrap(), vec![0.05, -0.1]).unwrap();
    let phi = LabelParams { weights: vec![1.2, -0.7], bias: 0.2 };
    let t = log_posterior_terms(&theta, &phi, &ds, &PriorSpec { std_theta: 1.0, std_phi: 1.5 }).unwrap();
    assert_relative_eq!(t.likelihood, -2.0400789658817398534, max_relative = 1e-13);
    assert_relative_eq!(t.theta_prior, -5.6698811992280364597, max_relative = 1e-13);
    assert_relative_eq!(t.phi_prior, -4.4109887017162891125, max_relative = 1e-13);
    assert_relative_eq!(t.total(), -12.120948866826065426, max_relative = 1e-13);
}

#[test]
fn leapfrog_matches_closed_form_oscillator() {
    let target = (1usize, |q: &[f64], g: &mut [f64]| {
        g[0] = -q[0];
        -0.5 * q[0] * q[0]
    });
    let (h, n) = (0.1_f64, 37);
    let (q0, p0) = (0.8, -0.3);
    let (q, p) = leapfrog(&[q0], &[p0], h, n, &target).unwrap();
    // One step is the linear map M with cos(theta) = 1 - h^2/2, so M^n = cos(n theta) I + sin(n theta)/sin(theta) (M - cos(theta) I).
    let c = 1.0 - h * h / 2.0;
    let theta = c.acos();
    let m = [[c, h], [-h * (1.0 - h * h / 4.0), c]];
    let (a, b) = ((n as f64 * theta).cos(), (n as f64 * theta).sin() / theta.sin());
    let qe = a * q0 + b * ((m[0][0] - c) * q0 + m[0][1] * p0);
    let pe = a * p0 + b * (m[1][0] * q0 + (m[1][1] - c) * p0);
    assert_relative_eq!(q[0], qe, epsilon = 1e-12);
    assert_relative_eq!(p[0], pe, epsilon = 1e-12);
}

#[test]
fn hmc_recovers_correlated_gaussian_moments() {
    // Precision matrix of a Gaussian with variances 1 and 2 and covariance 0.8.
    let (s11, s22, s12) = (1.0, 2.0, 0.8);
    let det = s11 * s22 - s12 * s12;
    let (p11, p22, p12) = (s22 / det, s11 / det, -s12 / det);
    let mu = [1.0, -2.0];
    let target = (2usize, move |q: &[f64], g: &mut [f64]| {
        let (x, y) = (q[0] - mu[0], q[1] - mu[1]);
        g[0] = -(p11 * x + p12 * y);
        g[1] = -(p12 * x + p22 * y);
        -0.5 * (p11 * x * x + 2.0 * p12 * x * y + p22 * y * y)
    });
    let cfg = HmcConfig { step_size: 0.3, leapfrog_steps: 6, burn_in_steps: 200, samples_per_restart: 20_000, ..Default::default() };
    let out = hmc_chain(&[0.0, 0.0], &cfg, &target, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let n = out.draws.len() as f64;
    let m0 = out.draws.iter().map(|d| d[0]).sum::<f64>() / n;
    let m1 = out.draws.iter().map(|d| d[1]).sum::<f64>() / n;
    let cov = |i: usize, j: usize, mi: f64, mj: f64| out.draws.iter().map(|d| (d[i] - mi) * (d[j] - mj)).sum::<f64>() / n;
    assert!((m0 - mu[0]).abs() < 0.05, "{m0}");
    assert!((m1 - mu[1]).abs() < 0.05, "{m1}");
    assert!((cov(0, 0, m0, m0) - s11).abs() < 0.1);
    assert!((cov(1, 1, m1, m1) - s22).abs() < 0.15);
    assert!((cov(0, 1, m0, m1) - s12).abs() < 0.1);
}

#[test]
fn tiny_steps_are_almost_always_accepted() {
    let (ds, _) = gen_hexagon(&HexagonConfig { points_per_cluster: 20, ..Default::default() }).unwrap();
    let cfg = HmcConfig { step_size: 1e-6, leapfrog_steps: 3, burn_in_steps: 1, samples_per_restart: 200, restarts: 2, ..Default::default() };
    let pool = run_restarts(&ds, 3, &PriorSpec::default(), &cfg, None).unwrap();
    for stats in &pool.provenance.chain_stats {
        assert!(stats.acceptance_rate() > 0.99, "{stats:?}");
    }
}

#[test]
fn cluster_level_valid_combinations() {
    let concepts = cluster_concepts();
    let labels = cluster_labeling().to_vec();
    assert_eq!(labels, vec![0, 1, 0, 1, 0, 1]);
    let counts: Vec<usize> = (1..=6).map(|s| oracle_valid_combinations(&concepts, &labels, s).len()).collect();
    assert_eq!(counts, vec![0, 0, 6, 198, 1467, 3720]);
    let triples = oracle_valid_combinations(&concepts, &labels, 3);
    assert_eq!(triples, vec![vec![0, 9, 14], vec![0, 11, 12], vec![2, 5, 14], vec![2, 7, 11], vec![4, 5, 12], vec![4, 7, 9]]);
    let mut useful: Vec<usize> = triples.iter().flatten().copied().collect();
    useful.sort_unstable();
    assert_eq!(useful, vec![0, 0, 2, 2, 4, 4, 5, 5, 7, 7, 9, 9, 11, 11, 12, 12, 14, 14]);
}

#[test]
fn alternating_labelings_are_the_only_three_concept_ones() {
    let concepts = cluster_concepts();
    let three: Vec<u32> = (0..64u32)
        .filter(|mask| {
            let labels: Vec<u8> = (0..6).map(|i| ((mask >> i) & 1) as u8).collect();
            cbm_proposals::datagen::min_concepts(&concepts, &labels, 3) == Some(3)
        })
        .collect();
    assert_eq!(three, vec![0b010101, 0b101010]);
}

#[test]
fn hexagon_catalog_agrees_with_cluster_level_oracle() {
    let (ds, cat) = gen_hexagon(&HexagonConfig::default()).unwrap();
    assert_eq!(ds.n(), 1200);
    assert_eq!(cat.concepts.len(), 15);
    assert_eq!(cat.min_concepts, 3);
    assert_eq!(cat.valid_combinations.len(), 6);
    assert_eq!(cat.useful_concepts().len(), 9);
    let concepts = cluster_concepts();
    assert_eq!(cat.valid_combinations, oracle_valid_combinations(&concepts, cluster_labeling(), 3));
}

#[test]
fn vitals_prevalence_matches_binomial_rate() {
    // P(at least 2 of 5 breaches) with each breach at 0.2.
    let expect = 1.0 - 0.8f64.powi(5) - 5.0 * 0.2 * 0.8f64.powi(4);
    assert_relative_eq!(expect, 0.26272, epsilon = 1e-12);
    let mut total = 0.0;
    for seed in 0..5 {
        let (ds, cat) = gen_vitals(&VitalsConfig { seed, ..Default::default() }).unwrap();
        let prevalence = ds.labels().iter().map(|&y| f64::from(y)).sum::<f64>() / ds.n() as f64;
        assert!((0.15..=0.45).contains(&prevalence), "{prevalence}");
        for c in &cat.concepts {
            let rate = c.values.iter().map(|&v| f64::from(v)).sum::<f64>() / ds.n() as f64;
            assert!((rate - 0.2).abs() < 0.03, "{} {rate}", c.name);
        }
        total += prevalence;
    }
    assert!((total / 5.0 - expect).abs() < 0.02);
}

fn brute_force_inertia(points: &[Vec<f64>], k: usize) -> f64 {
    (0..k.pow(points.len() as u32))
        .map(|code| {
            let assign: Vec<usize> = (0..points.len()).map(|i| (code / k.pow(i as u32)) % k).collect();
            (0..k)
                .map(|c| {
                    let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, a)| **a == c).map(|(p, _)| p).collect();
                    if members.is_empty() {
                        return 0.0;
                    }
                    let dim = points[0].len();
                    let mean: Vec<f64> = (0..dim).map(|j| members.iter().map(|m| m[j]).sum::<f64>() / members.len() as f64).collect();
                    members.iter().map(|m| m.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum()
                })
                .sum()
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn kmeans_reaches_brute_force_optimum_on_separated_points() {
    let points = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![0.0, 0.2], vec![5.0, 5.0], vec![5.2, 5.1], vec![4.9, 5.3]];
    for seed in 0..10 {
        let fit = kmeans(&points, 2, seed, Execution::Sequential);
        assert_relative_eq!(fit.inertia, brute_force_inertia(&points, 2), epsilon = 1e-9);
    }
}

#[test]
fn kmeans_members_are_the_scanned_medoids() {
    let points: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
    for seed in 0..5 {
        let fit = kmeans(&points, 4, seed, Execution::Sequential);
        let set = kmeans_select(&points, 4, MetricKind::Euclidean, seed).unwrap();
        for (c, &member) in set.member_ids.iter().enumerate() {
            let d = |i: usize| points[i].iter().zip(&fit.centroids[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let best = (0..points.len()).filter(|&i| fit.assignment[i] == c).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap();
            assert_eq!(member, best);
        }
    }
}

fn fixture_catalog() -> GroundTruthCatalog {
    let concepts = vec![
        vec![1, 1, 0, 0, 0, 0, 1, 1],
        vec![0, 1, 1, 0, 1, 0, 0, 1],
        vec![1, 0, 0, 0, 1, 1, 1, 0],
        vec![0, 0, 1, 1, 1, 1, 0, 0],
    ];
    GroundTruthCatalog {
        concepts: concepts.into_iter().enumerate().map(|(i, values)| NamedConcept { name: format!("c{i}"), values }).collect(),
        valid_combinations: vec![vec![0, 1], vec![1, 2], vec![2, 3]],
        min_concepts: 2,
        labeling_provenance: "fixture".into(),
    }
}

fn column_matrix(cols: &[&[f64]]) -> Matrix {
    let n = cols[0].len();
    let data = (0..n).flat_map(|i| cols.iter().map(move |c| c[i])).collect();
    Matrix::from_vec(n, cols.len(), data).unwrap()
}

/// Independent re-scan: a set matches combination `c` if some assignment of columns to the
/// combination's concepts has every column at F1 >= 0.9 in one of the two polarities.
fn rescan(m: &Matrix, cat: &GroundTruthCatalog) -> Option<usize> {
    let f1 = |pred: &[u8], truth: &[u8]| {
        let tp = pred.iter().zip(truth).filter(|(p, t)| **p == 1 && **t == 1).count() as f64;
        let wrong = pred.iter().zip(truth).filter(|(p, t)| p != t).count() as f64;
        2.0 * tp / (2.0 * tp + wrong)
    };
    let ok = |col: usize, concept: usize| {
        let pred: Vec<u8> = m.column(col).iter().map(|&v| u8::from(v >= 0.5)).collect();
        let neg: Vec<u8> = pred.iter().map(|v| 1 - v).collect();
        let truth = &cat.concepts[concept].values;
        f1(&pred, truth) >= 0.9 || f1(&neg, truth) >= 0.9
    };
    cat.valid_combinations.iter().position(|combo| {
        combo.iter().permutations(combo.len()).any(|perm| perm.iter().enumerate().all(|(col, &&c)| ok(col, c)))
    })
}

#[test]
fn evaluation_fixture_agrees_with_rescan() {
    let cat = fixture_catalog();
    let f = |v: &[u8], flip: bool| -> Vec<f64> {
        v.iter().map(|&b| if (b == 1) != flip { 0.8 } else { 0.2 }).collect()
    };
    let c: Vec<&Vec<u8>> = cat.concepts.iter().map(|c| &c.values).collect();
    let sets = vec![
        column_matrix(&[&f(c[3], false), &f(c[2], true)]),
        column_matrix(&[&f(c[1], false), &f(c[0], false)]),
        column_matrix(&[&f(c[0], false), &f(c[3], false)]),
        column_matrix(&[&f(c[2], true), &f(c[1], false)]),
        column_matrix(&[&f(c[1], false), &f(c[2], false)]),
    ];
    let expect: Vec<Option<usize>> = sets.iter().map(|m| rescan(m, &cat)).collect();
    assert_eq!(expect, vec![Some(2), Some(0), None, Some(1), Some(1)]);
    let got: Vec<Option<usize>> = sets.iter().map(|m| match_explanation(m, &cat, 0.9)).collect();
    assert_eq!(got, expect);

    let rep = coverage_report(&Proposals::Sets(sets.iter().collect()), &cat, &CoverageMode::Explanations, 0.9).unwrap();
    assert_eq!(rep.found, 3);
    assert_eq!(rep.eligible, 3);
    assert_eq!(rep.min_m, Some(1));
    let rep = coverage_report(&Proposals::Sets(sets.iter().collect()), &cat, &CoverageMode::Completions { pinned: vec![0] }, 0.9).unwrap();
    assert_eq!((rep.found, rep.eligible, rep.min_m), (1, 1, Some(2)));
}
