use biot_th::{resolve, Real, Settings, WORKERS_ENV};

// own test binary: the environment is process-wide
#[test]
fn environment_caps_workers() {
    let s = Settings { n: Some(2), dt: Some(Real::Number(0.5)), workers: Some(8), ..Default::default() };
    let c = resolve(s).unwrap();
    std::env::remove_var(WORKERS_ENV);
    assert_eq!(c.effective_workers(), 8);
    std::env::set_var(WORKERS_ENV, "3");
    assert_eq!(c.effective_workers(), 3);
    std::env::set_var(WORKERS_ENV, "junk");
    assert_eq!(c.effective_workers(), 8);
    std::env::remove_var(WORKERS_ENV);
}
