mod common;

#[test]
fn backprop_matches_central_differences() {
    for seed in [3, 11] {
        let checks = common::gradient_check(24, seed);
        assert!(checks.len() >= 20);
        assert!(checks.iter().filter(|c| c.1.abs() > 1e-6).count() >= checks.len() / 2);
        for (name, a, n, rel) in &checks {
            assert!(*rel <= 1e-4, "{name}: analytic {a:e} numeric {n:e} rel {rel:e}");
        }
    }
}
