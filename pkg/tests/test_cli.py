import io
import json

import pytest

from twdescent.cli import CAPS, InputError, dump, emit, main, parse
from twdescent.functors import twist
from twdescent.twisted import generate_instance, random_cohesive
from twdescent.cohesive import CohesiveModule
from builders import complex_on, one_open, xyz


def run(*argv):
    out = io.StringIO()
    code = main(list(argv), out)
    text = out.getvalue()
    return code, json.loads(text) if text else None


def gen(tmp_path, name, *extra):
    path = tmp_path / name
    code, _ = run("gen", *extra, "-o", str(path))
    assert code == 0
    return path


def test_gen_is_byte_identical(tmp_path):
    a = gen(tmp_path, "a.json", "--seed", "4", "--opens", "3", "--kind", "higher")
    b = gen(tmp_path, "b.json", "--seed", "4", "--opens", "3", "--kind", "higher")
    assert a.read_bytes() == b.read_bytes()


def test_round_trip(tmp_path):
    for kind, g in (("gauge", "0"), ("higher", "1"), ("global", "2"), ("cone", "0")):
        p = gen(tmp_path, f"{kind}.json", "--seed", "2", "--kind", kind, "--g", g, "--max-rank", "1")
        text = p.read_text()
        assert dump(parse(text)) == text


def test_validate_twist_image(tmp_path):
    p = gen(tmp_path, "g.json", "--seed", "1", "--kind", "global", "--g", "1")
    code, rep = run("validate", str(p))
    assert code == 0 and rep["ok"] and rep["checks"]["maurer_cartan"] and rep["checks"]["global_flat"]


def test_validate_perturbed_entry(tmp_path):
    s = xyz()
    C = complex_on(frozenset(s.points), {x: {0: 1, 1: 1} for x in "xyz"}, {(x, 0): [[1]] for x in "xyz"})
    doc = json.loads(emit(twist(CohesiveModule(C.graded, C.d), s)))
    comp = next(c for c in doc["twist"] if c["index"] == [0, 1])
    blk = next(b for b in comp["blocks"] if b["degree"] == 0)
    blk["entries"][0] = "5/3"
    p = tmp_path / "p.json"
    p.write_text(json.dumps(doc))
    code, rep = run("validate", str(p))
    assert code == 1
    assert rep["failures"][0]["where"] == dict(k=1, index=[0, 1], point="y")


def test_validate_condition_one(tmp_path):
    p = gen(tmp_path, "g.json", "--seed", "6", "--kind", "global", "--hi", "2", "--max-rank", "3")
    doc = json.loads(p.read_text())
    assert any(o["connection"] for o in doc["objects"])
    doc["twist"] = []
    p.write_text(json.dumps(doc))
    code, rep = run("validate", str(p))
    assert code == 1 and "condition 1" in rep["failures"][0]["message"]


def test_input_errors(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"format\": \n")
    code, rep = run("validate", str(bad))
    assert code == 2 and rep["input_error"]["path"].endswith(":3:1")
    p = gen(tmp_path, "g.json", "--seed", "1")
    doc = json.loads(p.read_text())
    doc["twist"][0]["blocks"][0]["shape"] = [9, 9]
    bad.write_text(json.dumps(doc))
    code, rep = run("validate", str(bad))
    assert code == 2 and rep["input_error"]["path"] == "$.twist[0].blocks[0].shape"
    code, _ = run("gen", "--seed", "1", "--opens", str(CAPS["opens"] + 1))
    assert code == 2
    code, rep = run("gen", "--seed", "1", "--kind", "cone", "--max-rank", "3", "--hi", "2")
    assert code == 2 and "cap" in rep["input_error"]["message"]


def test_caps_enforced_at_parse():
    rng = __import__("random").Random(0)
    s = one_open(("x",))
    E = random_cohesive(rng, frozenset({"x"}), 0, 0, 3, 0)
    doc = json.loads(emit(twist(E, s)))
    doc["objects"][0]["ranks"][0][2] = 4
    with pytest.raises(InputError, match="exceeds cap"):
        parse(json.dumps(doc))
    doc["meta"]["derived"] = True
    with pytest.raises(InputError, match="shape|ranks require"):
        parse(json.dumps(doc))
    doc = json.loads(emit(twist(E, s)))
    doc["twist"].append(dict(index=[0] * 6, blocks=[]))
    with pytest.raises(InputError, match="Cech length"):
        parse(json.dumps(doc))


def test_globalize_single_open(tmp_path):
    rng = __import__("random").Random(3)
    s = one_open(("x", "y"))
    E = random_cohesive(rng, frozenset(s.points), 0, 2, 2, 0)
    src = tmp_path / "one.json"
    src.write_text(emit(twist(E, s)))
    out = tmp_path / "out.json"
    code, rep = run("globalize", str(src), "-o", str(out))
    assert code == 0 and rep["ok"]
    got = {(x, n): r for x, n, r in json.loads(out.read_text())["global"]["ranks"]}
    for st in rep["transcript"]:
        if st["stage"] == "glue":
            for x, r in st["kernel_ranks"].items():
                assert got.get((x.strip("'"), st["degree"]), 0) == r
    code, rep2 = run("validate", str(out))
    assert code == 0 and rep2["ok"]


def test_globalize_twist_image_and_invalid(tmp_path):
    p = gen(tmp_path, "g.json", "--seed", "2", "--kind", "global", "--hi", "2")
    code, rep = run("globalize", str(p))
    assert code == 0 and rep["checks"]["homotopy_equivalence"]
    doc = json.loads(p.read_text())
    doc["objects"][0]["ranks"] = doc["objects"][0]["ranks"][:-1]
    p.write_text(json.dumps(doc))
    out = tmp_path / "never.json"
    code, _ = run("globalize", str(p), "-o", str(out))
    assert code != 0 and not out.exists()


def test_descend(tmp_path):
    p = gen(tmp_path, "h.json", "--seed", "5", "--kind", "higher", "--g", "1")
    code, rep = run("descend", str(p))
    assert code == 0 and rep["checks"]["homotopy_equivalence"]
    p0 = gen(tmp_path, "z.json", "--seed", "5", "--kind", "higher")
    _, d = run("descend", str(p0))
    _, g = run("globalize", str(p0))
    assert d["certificates"]["global_ranks"] == g["certificates"]["global_ranks"]
    doc = json.loads(p.read_text())
    comp = next(c for c in doc["twist"] if len(c["index"]) == 2 and c["blocks"])
    comp["blocks"][0]["entries"][0] = "7"
    p.write_text(json.dumps(doc))
    code, rep = run("descend", str(p))
    assert code == 1 and "descend" not in rep["checks"] and not rep["checks"]["maurer_cartan"]


def test_hom(tmp_path):
    p = gen(tmp_path, "e.json", "--seed", "3", "--kind", "global", "--g", "1")
    code, rep = run("hom", str(p), str(p))
    assert code == 0 and rep["certificates"]["p_ranks"]["0"] >= 1
    q = gen(tmp_path, "t.json", "--seed", "3")
    code, rep = run("hom", str(p), str(q))
    assert code == 2


def test_report_is_deterministic(tmp_path):
    p = gen(tmp_path, "g.json", "--seed", "9", "--kind", "higher", "--opens", "3")
    assert run("globalize", str(p)) == run("globalize", str(p))
