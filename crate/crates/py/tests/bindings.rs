use pyo3::prelude::*;
use pyo3::types::PyDict;
use pyo3::wrap_pymodule;

fn run(code: &std::ffi::CStr) {
    Python::attach(|py| {
        let m = wrap_pymodule!(nclosure_py::nclosure_py)(py);
        let globals = PyDict::new(py);
        globals.set_item("nc", m).unwrap();
        if let Err(e) = py.run(code, Some(&globals), None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn helpers_match_the_core_library() {
    run(c"
assert nc.iterations_per_epoch(125, 8, 6) == 4
assert abs(nc.lr_at(18, 0.075, 0.97, 18) - 0.07275) < 1e-15
assert nc.five_number_summary([]) is None
assert nc.experiments() == ['toy', 'exp1_rom', 'exp2_subgrid', 'exp3a_bio0d', 'exp3b_bio1d']
");
}

#[test]
fn untrained_closure_reproduces_the_baseline() {
    run(c"
exp = nc.Experiment('toy')
ev = exp.evaluate()
assert ev['runs']['closure']['states'] == ev['runs']['baseline']['states']
assert set(ev['runs']['baseline']['windows']) == {'train', 'val', 'predict'}
assert len(ev['times']) == 201
");
}

#[test]
fn training_updates_parameters_and_history() {
    run(c"
exp = nc.Experiment('toy', closure='markovian')
p0 = exp.params
recs = exp.train(epochs=2)
assert [r['epoch'] for r in recs] == [0, 1, 2]
assert recs[0]['batch_loss'] is None
assert exp.params != p0 and exp.epoch == 2
more = exp.train(epochs=1)
assert [r['epoch'] for r in more] == [3]
assert len(exp.history) == 4
");
}

#[test]
fn bad_arguments_raise_value_error() {
    run(c"
for args in [('exp9',), ('toy', 'continuous')]:
    try:
        nc.Experiment(*args)
    except ValueError:
        pass
    else:
        raise AssertionError(args)
try:
    nc.Experiment('toy').evaluate([0.0])
except ValueError:
    pass
else:
    raise AssertionError('short parameter vector accepted')
try:
    nc.Experiment.from_toml('experiment = \"toy\"\\nunknown = 1\\n')
except ValueError:
    pass
else:
    raise AssertionError('unknown key accepted')
");
}
