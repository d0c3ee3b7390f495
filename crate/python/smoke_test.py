"""Smoke test for the cmgnn extension module.

Build and run from the repository root:

    cargo build -p cmgnn-python --release --features extension-module
    cp target/release/libcmgnn.so python/cmgnn.so
    python3 python/smoke_test.py
"""

import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import cmgnn  # noqa: E402


def check_corpus_and_graphs():
    corpus = cmgnn.SessionCorpus(4, [[1, 2, 3, 2], [2, 3, 4], [4, 1]])
    assert len(corpus) == 3 and corpus.n_items == 4
    assert len(corpus.examples()) == 3 + 2 + 1
    nodes, edges = cmgnn.local_graph([1, 2, 3, 2])
    assert nodes == [1, 2, 3]
    assert (2, 3, "in_out") in edges
    neighbors = cmgnn.global_graph(corpus, eps=2, max_neighbors=3)
    assert len(neighbors) == 4
    op = cmgnn.hypergraph_operator(corpus)
    assert all(abs(sum(row) - 1.0) < 1e-12 for row in op)


def check_metrics():
    report = dict((k, (p, mrr)) for k, p, mrr in cmgnn.metrics_from_ranks([1, 3, 12, 30]))
    assert report[10] == (50.0, 33.3333), report


def check_training(workdir):
    train, test = cmgnn.planted_markov(n_items=15, n_train=80, n_test=20, seed=11)
    cfg = cmgnn.TrainingConfig(dim=8, epochs=2, batch_size=16, seed=3)
    model = cmgnn.Model.train(cfg, train)
    assert len(model.history) == 2
    scores = model.scores([1, 2, 3])
    assert len(scores) == 15 and abs(sum(scores) - 1.0) < 1e-9
    top = model.recommend([1, 2, 3], k=5)
    assert [p for _, p in top] == sorted((p for _, p in top), reverse=True)
    report = model.evaluate(test.examples())
    for _, precision, mrr in report:
        assert 0.0 <= mrr <= precision <= 100.0

    path = os.path.join(workdir, "model.ckpt")
    model.save(path)
    loaded = cmgnn.Model.load(path)
    assert loaded.scores([1, 2, 3]) == scores
    assert loaded.evaluate(test.examples()) == report
    return report


def check_errors():
    try:
        cmgnn.TrainingConfig(not_a_key=1)
    except cmgnn.CmgnnError:
        pass
    else:
        raise AssertionError("unknown config key accepted")


def main():
    check_corpus_and_graphs()
    check_metrics()
    check_errors()
    with tempfile.TemporaryDirectory() as workdir:
        report = check_training(workdir)
    labels = cmgnn.gradcheck(seed=2024)
    assert all(passed for _, _, passed in labels), labels
    print("cmgnn", cmgnn.__version__, "smoke test passed:", report)


if __name__ == "__main__":
    main()
