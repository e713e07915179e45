use hybridcal_py::hybridcal_py;
use pyo3::prelude::*;

#[test]
fn module_round_trips_a_pose_and_reports_errors() {
    pyo3::append_to_inittab!(hybridcal_py);
    Python::initialize();
    Python::attach(|py| {
        py.run(
            c"
import hybridcal_py as hc
p = hc.RigidTransform.from_euler_deg([1.0, 2.0, 3.0], [0.5, 0.0, 0.0])
e = p.euler_deg()
assert all(abs(a - b) < 1e-9 for a, b in zip(e, [1.0, 2.0, 3.0])), e
cam = hc.CameraModel(900.0, 900.0, 812.0, 617.0, 1624, 1234)
assert cam.k[0][2] == 812.0
try:
    hc.CameraModel(-1.0, 900.0, 812.0, 617.0, 1624, 1234)
    raise AssertionError('negative focal length accepted')
except hc.HybridcalError as err:
    assert 'InvalidCamera' in str(err) or 'Camera' in str(err), err
",
            None,
            None,
        )
    })
    .unwrap();
}
