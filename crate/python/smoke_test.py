"""Smoke test for the posbias_py extension.

Build with `cargo build --release -p posbias-py`, then make the library
importable (e.g. copy target/release/libposbias_py.so to posbias_py.so on
PYTHONPATH) and run this script.
"""

import json
import math
import pathlib
import tempfile

import posbias_py as pb


def main():
    sentences = pb.segment_sentences("First one. Second one! Third?")
    assert len(sentences) == 3, sentences
    assert pb.estimate_tokens("a  b\tc") == 3
    assert pb.truncate("One two. Three four five.", 2) == "One two."
    assert [pb.removal_count(n, 0.25) for n in (1, 4, 5)] == [1, 1, 2]

    fit = pb.ols([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], [2.0, 3.0, 0.0])
    assert all(abs(a - b) < 1e-12 for a, b in zip(fit.coefficients, [2.0, 3.0]))
    assert abs(fit.r_squared - 1.0) < 1e-12

    assert abs(pb.student_t_p(1.0, 1.0) - 0.5) < 1e-9
    stat = pb.pearson([1, 2, 3, 4], [2, 4, 6, 8.5])
    assert stat.r > 0.99 and stat.n == 4

    doc = "Alpha beta gamma. Delta epsilon zeta. Eta theta iota."
    begin, end = pb.embed([doc, "Needle text here. " + doc], "toy-decay")
    assert abs(math.sqrt(sum(x * x for x in begin)) - 1.0) < 1e-9
    assert pb.cosine(begin, end) < 1.0

    prof = pb.exposure([(4, 0.5), (8, 0.5)], 8, samples=100, update="log1p")
    assert prof.t[0] == 100 and prof.verdict == "NonIncreasing"

    with tempfile.TemporaryDirectory() as tmp:
        config = pathlib.Path(tmp) / "run.json"
        config.write_text(json.dumps({
            "providers": ["toy-uniform"],
            "synthetic": [{"docs": 5, "min_sentences": 6, "max_sentences": 10, "seed": 1}],
            "output_dir": "out",
        }))
        assert pb.run(str(config), "ablate", kind="insert") == 0
        raw = pathlib.Path(tmp) / "out" / "ablate-insert" / "raw.jsonl"
        assert len(raw.read_text().splitlines()) == 75

    print("posbias_py smoke test passed")


if __name__ == "__main__":
    main()
