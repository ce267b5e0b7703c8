use pyo3::prelude::*;
use pyo3::types::PyDict;

use lattice_ot_py::lattice_ot_py;

fn with_module(code: &std::ffi::CStr) -> PyResult<()> {
    pyo3::append_to_inittab!(lattice_ot_py);
    Python::initialize();
    Python::attach(|py| {
        let globals = PyDict::new(py);
        py.run(code, Some(&globals), None)
    })
}

#[test]
fn functions_are_exposed_and_validate_input() {
    with_module(
        cr#"
import math
import lattice_ot_py as lo
assert abs(lo.log_mean(1.0, math.e) - (math.e - 1.0)) < 1e-12
h = lo.heat([1.2, 0.8, 1.0, 0.9, 1.1, 1.0, 1.0, 1.0, 1.0], 0.01, dim=2)
assert abs(sum(h) - 9.0) < 1e-12
c = lo.choose_constants(0.1, 0.5)
assert abs(c["ell"] - 1.362249346120314e-3) < 1e-15
try:
    lo.heat([1.0, 2.0, 1.0], 0.1)
    raise SystemExit("mass violation accepted")
except ValueError:
    pass
try:
    lo.distance([1.0] * 8, [1.0] * 8, metric="cubic")
    raise SystemExit("unknown metric accepted")
except ValueError:
    pass
"#,
    )
    .unwrap();
}
