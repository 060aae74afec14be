//! Property tests for the spec-level invariants that hold for all inputs.

use gridmend_core::attack::craft_dc;
use gridmend_core::dataset::{Normalizer, WindowSample};
use gridmend_core::estimation::{dc_estimate, MeasurementVector};
use gridmend_core::grid::StateVector;
use gridmend_core::pipeline::{identify, IdentificationThresholds};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn well_spread(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}

prop_compose! {
    /// A random observable system: m x n Gaussian-ish H with m > n,
    /// positive weights, and arbitrary z.
    fn observable_system()(n in 2usize..6)(
        n in Just(n),
        m in (8usize..16),
        h_vals in prop::collection::vec(-1.0f64..1.0, 16 * 6),
        w_vals in prop::collection::vec(0.2f64..5.0, 16),
        x_vals in prop::collection::vec(-2.0f64..2.0, 6),
        c_vals in prop::collection::vec(-0.5f64..0.5, 6),
    ) -> (DMatrix<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
        let h = DMatrix::from_fn(m, n, |r, c| h_vals[r * 6 + c]);
        let w = DVector::from_fn(m, |r, _| w_vals[r]);
        let x = DVector::from_fn(n, |r, _| x_vals[r]);
        let c = DVector::from_fn(n, |r, _| c_vals[r]);
        (h, w, x, c)
    }
}

proptest! {
    #[test]
    fn dc_estimate_is_exact_on_noise_free_linear_data(
        (h, w, x, _) in observable_system()
    ) {
        let z = &h * &x;
        let meas = MeasurementVector::new(z, w).unwrap();
        if let Ok(est) = dc_estimate(&h, &meas) {
            let err = (&est.x_est - &x).amax();
            prop_assert!(err < 1e-9, "recovery error {err}");
        }
        // A singular draw is legal; skip it rather than fail.
    }

    #[test]
    fn dc_stealth_identity_preserves_the_objective(
        (h, w, x, c) in observable_system(),
        noise in prop::collection::vec(-0.3f64..0.3, 16),
    ) {
        let mut z = &h * &x;
        for (row, v) in z.iter_mut().enumerate() {
            *v += noise[row];
        }
        let meas = MeasurementVector::new(z.clone(), w.clone()).unwrap();
        let Ok(base) = dc_estimate(&h, &meas) else { return Ok(()); };
        let a = craft_dc(&h, &c).unwrap();
        let attacked = MeasurementVector::new(z + a, w).unwrap();
        let hit = dc_estimate(&h, &attacked).unwrap();
        prop_assert!((hit.objective - base.objective).abs() <= 1e-9,
            "objective moved from {} to {}", base.objective, hit.objective);
    }

    #[test]
    fn normalizer_apply_then_invert_is_identity(
        rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 2..20),
    ) {
        prop_assume!(rows.iter().all(|r| well_spread(r)));
        let w = 2;
        let samples: Vec<WindowSample> = rows.chunks(w).filter(|c| c.len() == w).map(|chunk| {
            let flat: Vec<f64> = chunk.concat();
            WindowSample {
                inputs: flat.clone(),
                target: flat,
                attack_mask: vec![false; 6],
                meta: 0,
            }
        }).collect();
        prop_assume!(!samples.is_empty());
        let norm = Normalizer::fit(&samples).unwrap();
        let mut buf = samples[0].inputs.clone();
        norm.apply_matrix(&mut buf);
        norm.invert_matrix(&mut buf);
        for (got, want) in buf.iter().zip(samples[0].inputs.iter()) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identify_is_monotone_in_thresholds(
        theta_a in prop::collection::vec(-0.5f64..0.5, 4),
        dv in prop::collection::vec(-0.05f64..0.05, 4),
        t_small in 0.001f64..0.02,
        scale in 1.0f64..5.0,
    ) {
        let mut a = StateVector::new(theta_a.clone(), vec![1.0; 4]).unwrap();
        a.theta[0] = 0.0;
        let mut b = a.clone();
        for i in 0..4 {
            b.theta[i] += dv[i];
            b.v[i] = (b.v[i] + dv[i]).max(0.1);
        }
        let tight = IdentificationThresholds { theta: t_small, v: t_small };
        let loose = IdentificationThresholds { theta: t_small * scale, v: t_small * scale };
        let (flag_tight, _) = identify(&a, &b, &tight);
        let (flag_loose, _) = identify(&a, &b, &loose);
        for k in &flag_loose {
            prop_assert!(flag_tight.contains(k), "raising thresholds added {k}");
        }
    }
}
