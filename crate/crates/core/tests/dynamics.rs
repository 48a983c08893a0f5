//! SCQA trajectories against Ehrenfest relations, invariants and the Fock
//! reference.

mod common;

use scqa::linalg::{max_abs, RMat, RVec};
use scqa::oracle::{
    gaussian_to_fock, oracle_correlation, oracle_expect, oracle_moments, truncation_study,
    weyl_quantize, Evolver,
};
use scqa::phasespace::{standard_j, GaussianState, PhaseDim};
use scqa::response::{
    permutation_terms, propagator_discrepancy, waiting_propagators, waiting_propagators_integrated,
    Interaction, ResponseEngine,
};
use scqa::scqa::{
    conservation_monitor, ehrenfest_residual, integrate, stationary_solve, Closure,
    IntegratorOptions, StationaryOptions,
};
use scqa::weyl::PolySymbol;

use common::{one, random_state, rng};

fn harmonic() -> PolySymbol {
    PolySymbol::from_real_terms(one(), &[(&[2, 0], 0.5), (&[0, 2], 0.5)]).unwrap()
}

fn quartic(lambda: f64) -> PolySymbol {
    PolySymbol::from_real_terms(one(), &[(&[2, 0], 0.5), (&[0, 2], 0.5), (&[0, 4], lambda)])
        .unwrap()
}

fn quadratic() -> PolySymbol {
    PolySymbol::from_real_terms(one(), &[(&[2, 0], 0.6), (&[1, 1], 0.2), (&[0, 2], 0.4)]).unwrap()
}

fn state(mean: [f64; 2], cov: [f64; 3]) -> GaussianState {
    GaussianState::new(
        RVec::from_vec(mean.to_vec()),
        RMat::from_row_slice(2, 2, &[cov[0], cov[1], cov[1], cov[2]]),
        1.0,
    )
    .unwrap()
}

/// Sorted `ν_k` with `±iν_k` the eigenvalues of `JM`.
fn symplectic_spectrum(cov: &RMat, dim: PhaseDim) -> Vec<f64> {
    let jm = standard_j(dim).matrix() * cov;
    let mut nu: Vec<f64> = jm
        .complex_eigenvalues()
        .iter()
        .map(|z| z.im.abs())
        .collect();
    nu.sort_by(|a, b| a.partial_cmp(b).unwrap());
    nu.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    nu
}

#[test]
fn ehrenfest_battery() {
    let observables: Vec<PolySymbol> = [[0, 1], [1, 0], [0, 2], [1, 1], [0, 3]]
        .iter()
        .map(|e| PolySymbol::monomial(one(), e, 1.0).unwrap())
        .collect();
    let initial = state([0.4, -0.3], [0.6, 0.1, 0.55]);
    for h in [harmonic(), quartic(0.1)] {
        let traj = integrate(&h, &initial, 3.0, &IntegratorOptions::default()).unwrap();
        for t in [0.5, 1.3, 2.4] {
            for a in &observables {
                let r = ehrenfest_residual(a, &h, &traj, t, 1e-3).unwrap();
                assert!(r <= 1e-5, "residual {r:.2e} at t = {t}");
            }
        }
    }
}

#[test]
fn symplectic_spectrum_is_conserved() {
    let two = PhaseDim::new(2).unwrap();
    let h = PolySymbol::from_real_terms(
        two,
        &[
            (&[2, 0, 0, 0], 0.5),
            (&[0, 2, 0, 0], 0.5),
            (&[0, 0, 2, 0], 0.5),
            (&[0, 0, 0, 2], 0.8),
            (&[0, 0, 4, 0], 0.1),
            (&[0, 0, 2, 2], 0.05),
        ],
    )
    .unwrap();
    let initial = random_state(&mut rng(11), 2, 1.0);
    let nu0 = symplectic_spectrum(initial.cov(), two);
    let opts = IntegratorOptions {
        record_every: 500,
        ..Default::default()
    };
    let traj = integrate(&h, &initial, 5.0, &opts).unwrap();
    for s in &traj.samples {
        let nu = symplectic_spectrum(&s.cov, two);
        assert_eq!(nu.len(), nu0.len());
        for (a, b) in nu.iter().zip(&nu0) {
            assert!(
                (a - b).abs() <= 1e-8 * b,
                "ν drifted to {a} from {b} at t = {}",
                s.t
            );
        }
    }
}

#[test]
fn frozen_and_integrated_propagators_agree_at_equilibrium() {
    let h = quartic(0.1);
    let eq = stationary_solve(
        &h,
        &GaussianState::thermal(one(), 0.6, 1.0).unwrap(),
        &StationaryOptions::default(),
    )
    .unwrap();
    let times = [3.0, 1.7, 0.4, 0.0];
    let frozen = waiting_propagators(&h, &eq, &times).unwrap();
    let integrated =
        waiting_propagators_integrated(&h, &eq, &times, &IntegratorOptions::default()).unwrap();
    let gap = propagator_discrepancy(&frozen, &integrated);
    assert!(gap <= 1e-8, "discrepancy {gap:.2e}");
}

#[test]
fn quadratic_with_linear_terms_is_exact() {
    let h = PolySymbol::from_real_terms(
        one(),
        &[
            (&[2, 0], 0.5),
            (&[0, 2], 0.5),
            (&[0, 1], 0.3),
            (&[1, 0], -0.2),
        ],
    )
    .unwrap();
    let d = 40;
    let initial = state([0.1, 0.2], [0.6, 0.05, 0.5]);
    let opts = IntegratorOptions {
        record_every: 250,
        ..Default::default()
    };
    let traj = integrate(&h, &initial, 5.0, &opts).unwrap();
    let evolver = Evolver::new(&weyl_quantize(&h, d, 1.0).unwrap()).unwrap();
    let rho = gaussian_to_fock(&initial, d).unwrap();
    for s in &traj.samples {
        let (mean, cov) = oracle_moments(&evolver.evolve(&rho, s.t), 1.0).unwrap();
        assert!((&s.mean - mean).amax() <= 1e-6, "mean off at t = {}", s.t);
        assert!(
            max_abs(&(&s.cov - cov)) <= 1e-6,
            "covariance off at t = {}",
            s.t
        );
    }
}

#[test]
fn ordered_products_match_fock_correlations() {
    let eq = stationary_solve(
        &quadratic(),
        &GaussianState::thermal(one(), 0.7, 1.0).unwrap(),
        &StationaryOptions::default(),
    )
    .unwrap();
    let v = PolySymbol::from_real_terms(
        one(),
        &[
            (&[0, 1], 1.0),
            (&[1, 1], 0.3),
            (&[0, 3], 0.2),
            (&[2, 0], -0.1),
        ],
    )
    .unwrap();
    let d = 60;
    let h_op = weyl_quantize(&quadratic(), d, 1.0).unwrap();
    let v_op = weyl_quantize(&v, d, 1.0).unwrap();
    let rho = gaussian_to_fock(&eq, d).unwrap();
    for times in [vec![1.2, 0.3], vec![2.0, 0.9, 0.1]] {
        let order = times.len() - 1;
        let engine = ResponseEngine::new(
            &quadratic(),
            &eq,
            &Interaction::Polynomial(v.clone().into()),
            order,
        )
        .unwrap();
        for term in permutation_terms(order).unwrap() {
            let ordered: Vec<f64> = term.sigma.iter().map(|&s| times[s - 1]).collect();
            let r = engine.response_r(&term, &times).unwrap();
            let o = oracle_correlation(&h_op, &rho, &v_op, &ordered).unwrap();
            assert!((r - o).norm() <= 1e-8, "σ = {:?}: {r} vs {o}", term.sigma);
        }
    }
}

#[test]
fn wave_packet_closure() {
    let initial = state([0.4, -0.3], [0.6, 0.1, 0.55]);
    let wick = IntegratorOptions {
        record_every: 1000,
        ..Default::default()
    };
    let packet = IntegratorOptions {
        closure: Closure::WavePacket,
        ..wick.clone()
    };

    // a quadratic Hamiltonian makes the two closures coincide
    let a = integrate(&quadratic(), &initial, 2.0, &wick).unwrap();
    let b = integrate(&quadratic(), &initial, 2.0, &packet).unwrap();
    assert!(max_abs(&(&a.last().cov - &b.last().cov)) <= 1e-12);
    assert!((&a.last().mean - &b.last().mean).amax() <= 1e-12);

    // with x⁴ the packet misses the ⟨x²⟩ feedback and ⟨H⟩ drifts, but the
    // flow stays symplectic
    let a = integrate(&quartic(0.1), &initial, 2.0, &wick).unwrap();
    let b = integrate(&quartic(0.1), &initial, 2.0, &packet).unwrap();
    assert!((&a.last().mean - &b.last().mean).amax() > 1e-3);
    assert!(b.samples.iter().all(|s| s.symplectic_residual <= 1e-8));
    let report = conservation_monitor(&b);
    assert!(report.energy > 1e-3 && report.det_m <= 1e-10);
}

#[test]
fn quartic_reference_converges_and_tracks_scqa_briefly() {
    let h = quartic(0.1);
    let initial = state([0.3, 0.5], [0.5, 0.0, 0.5]);
    let x2 = PolySymbol::monomial(one(), &[0, 2], 1.0).unwrap();
    let t = 1.0;
    let report = truncation_study(
        |d| {
            let evolver = Evolver::new(&weyl_quantize(&h, d, 1.0)?)?;
            let rho = evolver.evolve(&gaussian_to_fock(&initial, d)?, t);
            oracle_expect(&weyl_quantize(&x2, d, 1.0)?, &rho)
        },
        &[40, 60, 80, 100],
        1e-8,
    )
    .unwrap();
    assert!(report.converged, "differences {:?}", report.differences);

    // SCQA carries an O(t²) covariance error for x⁴, so agreement is only
    // expected over a short horizon
    let at = |t: f64| {
        let s = integrate(&h, &initial, t, &IntegratorOptions::default())
            .unwrap()
            .last()
            .clone();
        s.cov[(1, 1)] + s.mean[1] * s.mean[1]
    };
    let short = 0.05;
    let evolver = Evolver::new(&weyl_quantize(&h, 80, 1.0).unwrap()).unwrap();
    let rho = evolver.evolve(&gaussian_to_fock(&initial, 80).unwrap(), short);
    let exact_short = oracle_expect(&weyl_quantize(&x2, 80, 1.0).unwrap(), &rho)
        .unwrap()
        .re;
    assert!((at(short) - exact_short).abs() <= 1e-3);
    let exact_long = report.values[report.values.len() - 1].re;
    assert!((at(t) - exact_long).abs() > 1e-3);
}
