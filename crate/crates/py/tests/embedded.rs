//! Calls the module through an embedded interpreter.

use gridcast_py::gridcast_module;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module<R>(f: impl FnOnce(Python<'_>, &Bound<'_, PyModule>) -> R) -> R {
    static INIT: std::sync::Once = std::sync::Once::new();
    INIT.call_once(|| {
        pyo3::append_to_inittab!(gridcast_module);
        Python::initialize();
    });
    Python::attach(|py| {
        let m = py.import("gridcast").unwrap();
        f(py, &m)
    })
}

#[test]
fn geometry_and_metrics() {
    with_module(|_, m| {
        let area: f64 = m.getattr("coverage_m2").unwrap().call1((192, 320, 0.1)).unwrap().extract().unwrap();
        assert_eq!(area, 614.4);

        let labels: Vec<Vec<usize>> = m
            .getattr("rasterize")
            .unwrap()
            .call1((4, 4, 1.0, vec![(0.0, 0.0, 2.0, 2.0, 0.0, 0usize)]))
            .unwrap()
            .extract()
            .unwrap();
        let vru = labels.iter().flatten().filter(|&&c| c == 0).count();
        assert_eq!(vru, 4);

        let d = m.getattr("metrics").unwrap().call1((1u64, 1u64, 0u64, 2u64)).unwrap();
        let d = d.cast::<PyDict>().unwrap();
        let iou: f64 = d.get_item("iou").unwrap().unwrap().extract().unwrap();
        assert_eq!(iou, 0.5);
        let none = m.getattr("metrics").unwrap().call1((0u64, 0u64, 0u64, 3u64)).unwrap();
        assert!(none.cast::<PyDict>().unwrap().get_item("recall").unwrap().unwrap().is_none());
    });
}

#[test]
fn bad_inputs_raise_value_errors() {
    with_module(|py, m| {
        let err = m.getattr("rasterize").unwrap().call1((4, 4, 1.0, vec![(0.0, 0.0, 1.0, 1.0, 0.0, 7usize)])).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let err = m.getattr("fuse_average").unwrap().call1((2, 2, vec![vec![0.5f32; 3]])).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
        let err = m.getattr("coverage_m2").unwrap().call1((0, 4, 1.0)).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
