use dhformer::tensor::Primitive;
use dhformer::verify::{gradient_suite, naive_ssim, quick_suites};
use dhformer::metrics::ssim;
use dhformer::Tensor;

#[test]
fn quick_suites_pass() {
    for s in quick_suites(None) {
        println!("{}", s.line());
        assert!(s.passed, "{}", s.line());
    }
}

#[test]
fn injected_fault_names_only_that_primitive() {
    for prim in [Primitive::Mul, Primitive::Softmax, Primitive::Sum, Primitive::Conv2d] {
        let s = gradient_suite(Some(prim));
        assert!(!s.passed);
        let failing: Vec<&str> = s
            .detail
            .trim_start_matches("failing: ")
            .split(", ")
            .map(|f| f.split(' ').next().unwrap())
            .filter(|f| !f.starts_with("model:"))
            .collect();
        assert_eq!(failing, vec![prim.name()], "{}", s.detail);
    }
}

#[test]
fn naive_ssim_oracle_on_identical_and_flat_images() {
    let x = Tensor::from_fn(&[1, 3, 12, 13], |i| (i % 17) as f64 / 17.0).unwrap();
    assert!((naive_ssim(&x, &x, 1.0).unwrap() - 1.0).abs() < 1e-12);
    let flat = Tensor::full(&[1, 3, 12, 12], 0.5).unwrap();
    let other = Tensor::full(&[1, 3, 12, 12], 0.25).unwrap();
    // flat windows: contrast and structure terms are 1
    let c1 = 0.01f64.powi(2);
    let expect = (2.0 * 0.5 * 0.25 + c1) / (0.25 + 0.0625 + c1);
    assert!((naive_ssim(&flat, &other, 1.0).unwrap() - expect).abs() < 1e-12);
    assert!((ssim(&flat, &other, 1.0).unwrap() - expect).abs() < 1e-12);
}
