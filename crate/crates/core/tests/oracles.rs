mod common;

use common::*;
use netclt_core::asymptotics::{limiting_variance_quadrature, q_term};
use netclt_core::cutnorm::{block_sum_value, cut_norm_exact, cut_norm_heuristic};
use netclt_core::estimation::{
    ade_exact, exposure_fractions, ht_estimate, linearized_main_term, Experiment,
};
use netclt_core::graphs::{check_graph_conditions, half_graph, sparsify};
use netclt_core::kernels::Kernel;
use netclt_core::outcomes::ProfileTerm;
use netclt_core::{ExperimentConfig, OutcomeProfile, TreatmentVector};
use rand::Rng;

#[test]
fn ht_matches_definition() {
    let mut r = rng(1);
    for _ in 0..200 {
        let n = r.random_range(1..40);
        let g = random_graph(n, r.random_range(0.0..1.0), &mut r);
        let v = random_outcomes(n, &mut r);
        let pi = r.random_range(0.05..0.95);
        let w = random_treatments(n, pi, &mut r);
        let got = ht_estimate(&g, &v, &w).unwrap();
        let want = ht_oracle(&g, &v, w.as_slice(), pi);
        assert!(
            (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
            "{got} vs {want}"
        );
    }
}

#[test]
fn ade_matches_binomial_sum_on_large_degrees() {
    let mut r = rng(2);
    for _ in 0..20 {
        let n = r.random_range(20..120);
        let g = random_graph(n, r.random_range(0.2..1.0), &mut r);
        let v = random_outcomes(n, &mut r);
        let pi = r.random_range(0.05..0.95);
        let got = ade_exact(&g, &v, pi).unwrap();
        let want = ade_by_binomial_sum(&g, &v, pi);
        assert!(
            (got - want).abs() <= 1e-10 * (1.0 + want.abs()),
            "{got} vs {want}"
        );
    }
}

#[test]
fn main_term_has_mean_zero() {
    let mut r = rng(3);
    for _ in 0..10 {
        let n = r.random_range(2..=10);
        let g = random_graph(n, 0.5, &mut r);
        let v = random_outcomes(n, &mut r);
        let pi: f64 = r.random_range(0.1..0.9);
        let mut total: f64 = 0.0;
        for mask in 0u32..(1 << n) {
            let bits: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let k = bits.iter().filter(|&&b| b).count() as i32;
            let p = pi.powi(k) * (1.0 - pi).powi(n as i32 - k);
            total +=
                p * linearized_main_term(&g, &v, &TreatmentVector::new(bits, pi).unwrap()).unwrap();
        }
        assert!(total.abs() < 1e-12, "{total}");
    }
}

#[test]
fn exposure_fractions_by_hand() {
    let g = half_graph(4);
    let w = TreatmentVector::new(vec![true, false, true, true], 0.5).unwrap();
    // Neighbors (1-based): 1:{4} 2:{3,4} 3:{2,4} 4:{1,2,3}.
    assert_eq!(
        exposure_fractions(&g, &w).unwrap(),
        vec![1.0, 1.0, 0.5, 2.0 / 3.0]
    );
}

#[test]
fn reference_closed_form_pieces() {
    // R(u) = ℓ(u,1,½)/½ + ℓ(u,0,½)/½ = 16u + 15 and Q(u) = -4 ln(1-u), so
    // σ² = ¼ E[(16U + 15 - 4 ln(1-U))²] = 2395/12.
    let p = OutcomeProfile::reference();
    for u in [0.0, 0.2, 0.7, 1.0] {
        let f = p.at(u);
        let r = 2.0 * (f.value(1, 0.5, 0) + f.value(0, 0.5, 0));
        assert!((r - (16.0 * u + 15.0)).abs() < 1e-12);
    }
    assert_eq!(p.at(1.0).value(1, 1.0, 0), 19.0);

    let e = |k: i32| -> f64 {
        // E[(-ln(1-U))^k] = k!, E[U (-ln(1-U))] = 3/4.
        (1..=k).product::<i32>() as f64
    };
    let (eu, eu2, eul) = (0.5, 1.0 / 3.0, 0.75);
    let second = 256.0 * eu2
        + 2.0 * 16.0 * 15.0 * eu
        + 225.0
        + 16.0 * e(2)
        + 2.0 * 4.0 * (16.0 * eul + 15.0 * e(1));
    assert!((0.25 * second - 2395.0 / 12.0).abs() < 1e-12);

    let quad =
        limiting_variance_quadrature(&Kernel::HalfGraphIndicator, &p, 0.5, 8192, 2048).unwrap();
    assert!((quad - 2395.0 / 12.0).abs() < 0.05, "{quad}");
    // The reported 0.1994 is σ²/n at n = 1000.
    assert!((quad / 1000.0 - 0.1994).abs() < 5e-4);
}

#[test]
fn q_term_for_a_two_block_kernel() {
    // L = [[1, 0], [0, 1]]: marginal ½ on both halves, so for u < ½
    // Q(u) = ∫₀^½ 2 gap(x) dx with gap ≡ 4.
    let k = Kernel::step(
        netclt_core::SquareMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
    )
    .unwrap();
    let q = q_term(&k, &OutcomeProfile::reference(), 0.5, 0.25, 512).unwrap();
    assert!((q - 4.0).abs() < 1e-12);

    // ℓ = t·w·x²: the exposure derivative at π for latent s is 2πs,
    // so Q = ∫₀^½ 2·2πs ds = π/2.
    let p = OutcomeProfile::from_terms(&[ProfileTerm {
        coef: 1.0,
        t: 1,
        w: 1,
        x: 2,
    }])
    .unwrap();
    let q = q_term(&k, &p, 0.3, 0.25, 512).unwrap();
    assert!((q - 0.15).abs() < 1e-5, "{q}");
}

#[test]
fn exact_cut_norm_matches_brute_force() {
    let mut r = rng(6);
    for _ in 0..40 {
        let n = r.random_range(1..=6);
        let a = random_matrix(n, &mut r);
        let got = cut_norm_exact(&a, 20).unwrap();
        assert!((got.value - cut_norm_brute_force(&a)).abs() < 1e-12);
        let recomputed = block_sum_value(&a, &got.witness_s, &got.witness_t);
        assert!((recomputed - got.value).abs() < 1e-12);
        let h = cut_norm_heuristic(&a, 16, &mut r).unwrap();
        assert!(h.value <= got.value + 1e-12);
        assert!((block_sum_value(&a, &h.witness_s, &h.witness_t) - h.value).abs() < 1e-12);
    }
}

#[test]
fn sparsify_edge_count_moments() {
    let g = half_graph(30);
    let m = g.edge_count() as f64;
    let rho = 0.3;
    let counts: Vec<f64> = (0..10_000u64)
        .map(|s| sparsify(&g, rho, &mut rng(s)).unwrap().edge_count() as f64)
        .collect();
    let var = rho * (1.0 - rho) * m;
    let mean = mean(&counts);
    assert!(
        (mean - rho * m).abs() < 3.0 * (var / counts.len() as f64).sqrt(),
        "{mean}"
    );
    let sample_var = sd(&counts).powi(2);
    assert!(
        (sample_var / var - 1.0).abs() < 0.2,
        "{sample_var} vs {var}"
    );
}

#[test]
fn graph_conditions_on_complete_graph() {
    let g = netclt_core::ExposureGraph::complete(4);
    let r = check_graph_conditions(&g, 1.0, 1.0).unwrap();
    assert_eq!(r.gamma_sum, 36);
    assert_eq!(r.sum_d2, 36);
    assert_eq!(r.delta_n, 3);
}

#[test]
fn superpopulation_mean_tracks_mean_tau_bar() {
    let mut c = ExperimentConfig::preset("paper_sec4_dense").unwrap();
    c.n = 100;
    c.design = netclt_core::ExperimentDesign::Superpopulation;
    c.variance.enabled = false;
    let r = netclt_core::harness::run_replications(&c).unwrap();
    let hat: Vec<f64> = r.records.iter().map(|x| x.tau_hat).collect();
    let bar: Vec<f64> = r.records.iter().map(|x| x.tau_bar).collect();
    let diff: Vec<f64> = hat.iter().zip(&bar).map(|(a, b)| a - b).collect();
    let se = sd(&diff) / (diff.len() as f64).sqrt();
    assert!((mean(&hat) - mean(&bar)).abs() < 4.0 * se);
}

#[test]
fn experiment_record_agrees_with_free_functions() {
    let mut r = rng(8);
    let n = 25;
    let g = random_graph(n, 0.3, &mut r);
    let v = random_outcomes(n, &mut r);
    let e = Experiment::new(g.clone(), v.clone(), 0.4).unwrap();
    let w = random_treatments(n, 0.4, &mut r);
    let rec = e.record(&w).unwrap();
    assert_eq!(rec.tau_hat, ht_estimate(&g, &v, &w).unwrap());
    assert_eq!(rec.tau_bar, ade_exact(&g, &v, 0.4).unwrap());
    assert!((rec.main_term - linearized_main_term(&g, &v, &w).unwrap()).abs() < 1e-15);
}
