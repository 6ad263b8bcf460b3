"""Smoke test for the normscene extension module.

Build and install first, e.g. `maturin build --release -m crates/py/Cargo.toml`
and `pip install` the wheel from target/wheels.
"""

import json
import os
import sys
import tempfile

import normscene


def check(cond, what):
    print(("ok   " if cond else "FAIL ") + what)
    if not cond:
        sys.exit(1)


def main():
    check(normscene.init_interval(True) == (1.0, 1.0), "first yes gives [1,1]")
    check(normscene.interval_after([False, True]) == (0.0, 0.5), "no then yes gives [0,0.5]")
    check(normscene.interval_after([True, False]) == (0.5, 1.0), "yes then no gives [0.5,1]")

    with tempfile.TemporaryDirectory() as tmp:
        manifest = normscene.synth(os.path.join(tmp, "data"), json.dumps({"seed": 7}))
        dim, actions, episodes = normscene.load_manifest(manifest)
        check(dim == 32 and len(episodes) == 10, "synthetic manifest has 10 episodes of dim 32")

        report, kb = normscene.replay(manifest, seed=3)
        check(report["novelty_accuracy_new"] >= 0.8, "novel episodes flagged")
        check(report["novelty_accuracy_known"] >= 0.8, "known episodes recognised")
        check(len(kb.categories) == 5, "five categories learned")

        path = os.path.join(tmp, "kb.json")
        kb.save(path)
        again = normscene.KnowledgeBase.load(path)
        check(again.to_json() == kb.to_json(), "save/load round trip")

        ep = episodes[-1]
        a = again.assess(ep["frames"])
        check(a["verdict"] == "known" and a["predicted_label"] == ep["label"], "revisit predicted as " + ep["label"])

    fresh = normscene.KnowledgeBase(4, seed=1)
    first = [[0.0, 0.0, 0.0, 0.0], [0.1, 0.0, 0.0, 0.0]]
    check(fresh.assess(first)["verdict"] == "novel", "empty knowledge base sees novelty")
    fresh.learn("office", first)
    questions = fresh.next_questions("office")
    check(len(questions) == 3, "three questions asked")
    norms = fresh.record_answers("office", [(a, op, True) for a, op in questions])
    check(all(n["alpha"] == 1.0 and n["beta"] == 1.0 for n in norms), "yes answers give [1,1]")

    try:
        fresh.assess([[1.0, 2.0]])
    except normscene.NormsceneError as e:
        check("dimension" in str(e), "dimension mismatch raises")
    else:
        check(False, "dimension mismatch raises")

    outcome = fresh.process_episode("v2", first, "office", {"walk": False}, fallback=True)
    check(outcome["confirmed_label"] == "office" and len(outcome["answers"]) == 3, "scripted visit")
    print("all good")


if __name__ == "__main__":
    main()
