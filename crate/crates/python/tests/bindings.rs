use pyo3::prelude::*;
use pyo3::types::PyModule;

fn with_module<T>(f: impl FnOnce(&Bound<'_, PyModule>) -> PyResult<T>) -> T {
    Python::attach(|py| {
        let m = PyModule::new(py, "pyrfexplore").unwrap();
        pyrfexplore::register(&m).unwrap();
        f(&m).unwrap()
    })
}

#[test]
fn plan_and_evaluate_agree() {
    let (planned, evaluated) = with_module(|m| {
        let mdp = m.getattr("Mdp")?.call_method1("double_chain", (7, 5))?;
        let (value, actions): (f64, Vec<Vec<usize>>) = mdp.call_method0("plan")?.extract()?;
        let evaluated: f64 = mdp.call_method1("evaluate", (actions,))?.extract()?;
        Ok((value, evaluated))
    });
    assert!((planned - evaluated).abs() < 1e-12);
    assert!(planned > 0.0);
}

#[test]
fn confidence_primitives() {
    let (value, divergence) = with_module(|m| {
        let (value, _): (f64, Vec<f64>) = m.getattr("kl_ball_max")?.call1((vec![0.5, 0.5], vec![0.0, 1.0], 0.02))?.extract()?;
        let divergence: f64 = m.getattr("kl")?.call1((vec![0.5, 0.5], vec![0.5, 0.5]))?.extract()?;
        Ok((value, divergence))
    });
    assert!((value - 0.59901).abs() < 1e-4);
    assert_eq!(divergence, 0.0);
}

#[test]
fn bad_inputs_raise_value_error() {
    Python::attach(|py| {
        let m = PyModule::new(py, "pyrfexplore").unwrap();
        pyrfexplore::register(&m).unwrap();
        let err = m.getattr("kl").unwrap().call1((vec![0.5, 0.5], vec![1.0])).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}

#[test]
fn agents_run_from_python() {
    let (rf_stopped, rf_error, bpi_value, optimal) = with_module(|m| {
        let mdp = m.getattr("Mdp")?.call_method1("double_chain", (5, 3))?;
        let rf = m.getattr("explore_reward_free")?.call1((&mdp, 1.0))?;
        let bpi = m.getattr("identify_best_policy")?.call1((&mdp, 0.3))?;
        let (optimal, _): (f64, Vec<Vec<usize>>) = mdp.call_method0("plan")?.extract()?;
        Ok((
            rf.getattr("stopped")?.extract::<bool>()?,
            rf.getattr("worst_error")?.extract::<f64>()?,
            bpi.getattr("recommended_value")?.extract::<f64>()?,
            optimal,
        ))
    });
    assert!(rf_stopped);
    assert!(rf_error <= 1.0);
    assert!(optimal - bpi_value <= 0.3);
}
