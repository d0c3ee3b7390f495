//! Drives the module through an embedded interpreter.

use std::ffi::CString;
use std::sync::Once;

use cmgnn::cmgnn;
use pyo3::prelude::*;
use pyo3::types::PyDict;

static INIT: Once = Once::new();

fn run(code: &str) {
    INIT.call_once(|| pyo3::append_to_inittab!(cmgnn));
    Python::attach(|py| {
        let globals = PyDict::new(py);
        let code = CString::new(format!("import cmgnn\n{code}")).unwrap();
        if let Err(e) = py.run(&code, Some(&globals), None) {
            e.print(py);
            panic!("python code failed");
        }
    });
}

#[test]
fn corpus_and_graphs() {
    run(r#"
c = cmgnn.SessionCorpus(3, [[1, 2, 3, 2], [2, 3]])
assert len(c) == 2 and c.n_items == 3
assert c.examples() == [([1], 2), ([1, 2], 3), ([1, 2, 3], 2), ([2], 3)]
nodes, edges = cmgnn.local_graph([1, 2, 1])
assert nodes == [1, 2]
assert (1, 2, "in_out") in edges and (1, 1, "self_loop") in edges
g = cmgnn.global_graph(c, eps=1, max_neighbors=5)
assert g[1] == [(3, 3), (1, 1)]
op = cmgnn.hypergraph_operator(c)
assert all(abs(sum(r) - 1.0) < 1e-12 for r in op)
"#);
}

#[test]
fn config_and_errors() {
    run(r#"
cfg = cmgnn.TrainingConfig(dim=8, epochs=1)
assert cfg.get("dim") == "8"
assert cmgnn.TrainingConfig.parse(cfg.render()).hash() == cfg.hash()
try:
    cmgnn.TrainingConfig(unknown_key=1)
    raise AssertionError("accepted unknown key")
except cmgnn.CmgnnError:
    pass
try:
    cmgnn.SessionCorpus(2, [[1, 5]])
    raise AssertionError("accepted out-of-range item")
except cmgnn.CmgnnError:
    pass
"#);
}

#[test]
fn metrics_and_baselines() {
    run(r#"
m = cmgnn.metrics_from_ranks([1, 3, 12, 30])
assert m[0] == (10, 50.0, 33.3333)
c = cmgnn.SessionCorpus(3, [[1, 2], [1, 2], [1, 3]])
assert cmgnn.baseline("pop", c, [3]) == [1, 2, 3]
assert cmgnn.baseline("itemknn", c, [1])[-1] == 1
"#);
}

#[test]
fn train_score_save_load() {
    let dir = std::env::temp_dir().join(format!("cmgnn-bindings-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.ckpt");
    run(&format!(
        r#"
train, test = cmgnn.planted_markov(n_items=12, n_train=40, n_test=10, seed=3)
cfg = cmgnn.TrainingConfig(dim=8, epochs=2, batch_size=16)
model = cmgnn.Model.train(cfg, train)
assert [h[0] for h in model.history] == [1, 2]
s = model.scores([1, 2])
assert len(s) == 12 and abs(sum(s) - 1.0) < 1e-9
top = model.recommend([1, 2], k=3)
assert len(top) == 3 and top[0][1] >= top[1][1] >= top[2][1]
report = model.evaluate(test.examples())
assert [r[0] for r in report] == [10, 20]
model.save({path:?})
again = cmgnn.Model.load({path:?})
assert again.scores([1, 2]) == s
assert again.config.hash() == cfg.hash()
"#,
        path = path.to_string_lossy()
    ));
    std::fs::remove_dir_all(&dir).ok();
}
