use proptest::prelude::*;
use scse::model::{build_alpha_profile, build_coupling_matrix, effective_alpha, shape_normalization, shape_weight};
use scse::{CouplingSpec, ShapeFunction};

fn shape_strategy() -> impl Strategy<Value = ShapeFunction> {
    prop_oneof![Just(ShapeFunction::flat()), (-0.5f64..=0.5).prop_map(ShapeFunction::with_tilt)]
}

proptest! {
    #[test]
    fn shape_weights_sum_to_one(w in 1usize..64, shape in shape_strategy()) {
        let w_i = w as i64;
        let total: f64 = (-w_i..=w_i).map(|z| shape_weight(&shape, z, w).unwrap()).sum::<f64>() / w as f64;
        prop_assert!((total - 1.0).abs() < 1e-12, "sum {}", total);
        let c = shape_normalization(&shape, w).unwrap();
        prop_assert!((c - shape_normalization(&ShapeFunction::flat(), w).unwrap()).abs() < 1e-12);
        prop_assert_eq!(shape_weight(&shape, w_i + 1, w).unwrap(), 0.0);
        prop_assert!((-w_i..=w_i).all(|z| shape_weight(&shape, z, w).unwrap() >= 0.0));
    }

    #[test]
    fn coupling_is_banded_and_interior_rows_sum_to_strength(
        w in 1usize..6,
        extra in 1usize..30,
        shape in shape_strategy(),
        j in 0.5f64..2.0,
    ) {
        let l = 2 * w + 1 + extra;
        let spec = CouplingSpec::new(l, w, 1, 0.5, 0.8).with_shape(shape).with_strength(j);
        let m = build_coupling_matrix::<f64>(&spec).unwrap();
        for q in 0..l {
            for r in 0..l {
                if q.abs_diff(r) > w {
                    prop_assert_eq!(m.get(q, r), 0.0);
                }
            }
        }
        for q in w..l - w {
            prop_assert!((m.row_sum(q) - j).abs() < 1e-12);
        }
    }

    #[test]
    fn effective_alpha_monotone_in_seed(
        alpha_b in 0.1f64..0.9,
        ds in 0.0f64..0.6,
        bump in 0.0f64..0.3,
        ws in 1usize..20,
    ) {
        let l = 60;
        let alpha_s = alpha_b + ds;
        let base = effective_alpha(&CouplingSpec::new(l, 1, ws, alpha_b, alpha_s));
        let stronger = effective_alpha(&CouplingSpec::new(l, 1, ws, alpha_b, alpha_s + bump));
        let larger = effective_alpha(&CouplingSpec::new(l, 1, ws + 1, alpha_b, alpha_s));
        prop_assert!(stronger >= base);
        prop_assert!(larger >= base - 1e-15);
        let profile = build_alpha_profile::<f64>(&CouplingSpec::new(l, 1, ws, alpha_b, alpha_s)).unwrap();
        let mean = profile.0.iter().sum::<f64>() / l as f64;
        prop_assert!((mean - base).abs() < 1e-12);
    }
}

#[test]
fn config_document_round_trips() {
    let spec = CouplingSpec::new(400, 3, 20, 0.25, 1.0).with_shape(ShapeFunction::tilted(-0.5));
    let text = serde_json::to_string(&spec).unwrap();
    for key in ["\"L\"", "\"w\"", "\"w_s\"", "\"alpha_b\"", "\"alpha_s\"", "\"shape\"", "\"A\"", "\"J\"", "\"boundary\""] {
        assert!(text.contains(key), "{key} missing from {text}");
    }
    let back: CouplingSpec = serde_json::from_str(&text).unwrap();
    assert_eq!(back, spec);
}
