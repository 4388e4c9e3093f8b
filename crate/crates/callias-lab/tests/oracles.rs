//! Sanity checks of the reference computations themselves, against cases
//! with textbook answers.

mod common;

use std::f64::consts::PI;

use faer::{c64, Mat};

#[test]
fn phase_winding_of_plain_loops() {
    let n = 257;
    for w in [-2i64, -1, 0, 1, 3] {
        let loop_pts: Vec<c64> = (0..n)
            .map(|j| c64::new(0.0, 2.0 * PI * w as f64 * j as f64 / n as f64).exp())
            .collect();
        let wind = common::phase_winding(&loop_pts);
        assert!(
            (wind - w as f64).abs() < 1e-9,
            "winding {wind} for expected {w}"
        );
    }
    // Off-center loop around the origin still winds once.
    let loop_pts: Vec<c64> = (0..n)
        .map(|j| {
            let t = 2.0 * PI * j as f64 / n as f64;
            c64::new(0.3 + t.cos(), 0.1 + t.sin())
        })
        .collect();
    assert!((common::phase_winding(&loop_pts) - 1.0).abs() < 1e-9);
}

#[test]
fn endpoint_flow_of_mass_flip_on_zero_map() {
    // The 2 -> 1 dimensional zero map: endpoints diag(-m,-m,m) -> diag(m,m,-m),
    // net flow +1 = (columns - rows).
    let m0 = Mat::from_fn(3, 3, |i, j| {
        if i != j {
            c64::new(0.0, 0.0)
        } else {
            c64::new(if i < 2 { -1.0 } else { 1.0 }, 0.0)
        }
    });
    let m1 = Mat::from_fn(3, 3, |i, j| {
        if i != j {
            c64::new(0.0, 0.0)
        } else {
            c64::new(if i < 2 { 1.0 } else { -1.0 }, 0.0)
        }
    });
    assert_eq!(common::endpoint_flow(m0.as_ref(), m1.as_ref()), 1);
}

#[test]
fn kernel_dims_detects_constructed_kernel() {
    let mut rng = common::seeded_rng(41);
    // 7x5 of rank 3: kernel dims (2, 4).
    let a = common::random_matrix(&mut rng, 7, 3);
    let b = common::random_matrix(&mut rng, 3, 5);
    let t = &a * &b;
    assert_eq!(common::kernel_dims(t.as_ref(), 1e-10), (2, 4));
}

#[test]
fn hofstadter_bands_and_chern_numbers() {
    let theta = 2.0 * PI / 3.0;
    // Band edges: three bands, gapped at one-third and two-thirds filling.
    let mut all: Vec<f64> = Vec::new();
    for i in 0..40 {
        for j in 0..40 {
            let h = common::hofstadter_bloch(
                theta,
                3,
                2.0 * PI * i as f64 / 40.0,
                2.0 * PI * j as f64 / 40.0,
            );
            all.extend(common::eigenvalues(h.as_ref()));
        }
    }
    all.sort_by(f64::total_cmp);
    let n = all.len() / 3;
    let gap1 = all[n] - all[n - 1];
    let gap2 = all[2 * n] - all[2 * n - 1];
    assert!(gap1 > 0.5, "first gap {gap1}");
    assert!(gap2 > 0.5, "second gap {gap2}");
    // Fermi levels inside the gaps, used verbatim by the interface tests.
    let ef1 = 0.5 * (all[n] + all[n - 1]);
    let ef2 = 0.5 * (all[2 * n] + all[2 * n - 1]);
    assert!((-1.5..-1.2).contains(&ef1), "first-gap Fermi level {ef1}");
    assert!((1.2..1.5).contains(&ef2), "second-gap Fermi level {ef2}");

    // Chern numbers of the spectral projections below each gap: the lowest
    // gap carries 1, the next carries -1, all three bands together 0.
    let chern = |n_occ: usize| {
        common::plaquette_chern(24, n_occ, &|k1, k2| {
            common::hofstadter_bloch(theta, 3, k1, k2)
        })
    };
    let c1 = chern(1);
    let c2 = chern(2);
    let c3 = chern(3);
    assert!((c1 - 1.0).abs() < 1e-6, "one-band Chern {c1}");
    assert!((c2 + 1.0).abs() < 1e-6, "two-band Chern {c2}");
    assert!(c3.abs() < 1e-9, "full-space Chern {c3}");
}

#[test]
fn random_unitary_is_unitary() {
    let mut rng = common::seeded_rng(7);
    let u = common::random_unitary(&mut rng, 9);
    let gram = u.adjoint() * &u;
    let mut dev = 0.0f64;
    for i in 0..9 {
        for j in 0..9 {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((gram[(i, j)] - c64::new(target, 0.0)).norm());
        }
    }
    assert!(dev < 1e-12);
}
