"""Command line: JSON instance files, caps, and machine-readable verification reports.

Exit status is 0 when every requested check passed, 1 on a verification
failure and 2 on an input error.
"""
import argparse
import hashlib
import json
import sys
import time

from . import linalg as la
from .bundles import GradedBundle, GradedMap, cohomology, popcount
from .cech import Cochain
from .cohesive import CohesiveModule, validate_cohesive
from .functors import twist
from .globalize import GlobalizeError, descend_cohesive, globalize, hom_comparison
from .site import Site, SiteError
from .twisted import (TwistedComplex, TwistedMorphism, generate_instance, random_cohesive, random_site,
                      tw_d, validate_mc)

FORMAT = "twdescent-instance/1"
REPORT = "twdescent-report/1"
CAPS = dict(opens=4, points=8, amplitude=4, rank=3, g=2, cech_length=5)


class InputError(ValueError):
    """Malformed or out-of-cap input; carries the JSON key path."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


# ---------------------------------------------------------------- emit

def _point_order(site):
    return {x: k for k, x in enumerate(site.points)}


def _ranks_out(G, order):
    return [[x, n, G.rank(x, n)] for x in sorted(G.ranks, key=order.get) for n in G.degrees(x)]


def _blocks_out(M, order):
    out = []
    for (x, mono, n) in sorted(M.blocks, key=lambda k: (order[k[0]], k[1], k[2])):
        B = M.blocks[(x, mono, n)]
        out.append(dict(point=x, mono=mono, degree=n, shape=[B.nrows(), B.ncols()],
                        entries=la.to_strings(B)))
    return out


def _cochain_out(c, order):
    return [dict(index=list(I), blocks=_blocks_out(M, order))
            for I, M in sorted(c.comps.items(), key=lambda kv: (len(kv[0]), kv[0]))]


def _module_out(E, order):
    return dict(ranks=_ranks_out(E.graded, order), connection=_blocks_out(E.conn, order))


def emit(T, global_module=None, morphisms=(), meta=None):
    """Canonical JSON text for a twisted complex plus optional global and morphism blocks."""
    order = _point_order(T.site)
    doc = dict(format=FORMAT,
               site=dict(points=list(T.site.points),
                         opens=[[x for x in T.site.points if x in U] for U in T.site.opens]),
               algebra=dict(g=T.g),
               objects=[_module_out(E, order) for E in T.objects],
               twist=_cochain_out(T.a, order))
    if global_module is not None:
        doc["global"] = _module_out(global_module, order)
    if morphisms:
        doc["morphisms"] = [dict(name=name, source=s, target=t, degree=phi["degree"],
                                 components=phi["components"]) if isinstance(phi, dict) else
                            dict(name=name, source=s, target=t, degree=phi.degree,
                                 components=_cochain_out(phi.body, order))
                            for name, s, t, phi in morphisms]
    doc["meta"] = dict(meta or {})
    doc["meta"]["caps"] = CAPS
    return json.dumps(doc, indent=1) + "\n"


# ---------------------------------------------------------------- parse

def _need(d, key, path, kind=None):
    if not isinstance(d, dict) or key not in d:
        raise InputError(path, f"missing key '{key}'")
    v = d[key]
    if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind is int:
        raise InputError(f"{path}.{key}", f"expected {kind.__name__}")
    return v


def _int(v, path):
    if not isinstance(v, int) or isinstance(v, bool):
        raise InputError(path, "expected an integer")
    return v


def _ranks_in(rows, domain, path, rank_cap):
    ranks = {}
    if not isinstance(rows, list):
        raise InputError(path, "expected a list of [point, degree, rank]")
    for k, row in enumerate(rows):
        p = f"{path}[{k}]"
        if not isinstance(row, list) or len(row) != 3:
            raise InputError(p, "expected [point, degree, rank]")
        x, n, r = row[0], _int(row[1], p + "[1]"), _int(row[2], p + "[2]")
        if x not in domain:
            raise InputError(p, f"point {x!r} outside the open")
        if r < 0:
            raise InputError(p, "negative rank")
        if rank_cap is not None and r > rank_cap:
            raise InputError(p, f"rank {r} exceeds cap {rank_cap}")
        if n in ranks.get(x, {}):
            raise InputError(p, "duplicate (point, degree)")
        ranks.setdefault(x, {})[n] = r
    return GradedBundle(domain, ranks)


def _map_in(blocks, src, tgt, degree, g, path):
    out = {}
    if not isinstance(blocks, list):
        raise InputError(path, "expected a list of blocks")
    for k, b in enumerate(blocks):
        p = f"{path}[{k}]"
        x = _need(b, "point", p)
        mono = _int(_need(b, "mono", p), p + ".mono")
        n = _int(_need(b, "degree", p), p + ".degree")
        shape = _need(b, "shape", p, list)
        entries = _need(b, "entries", p, list)
        if x not in src.domain:
            raise InputError(p, f"point {x!r} outside the support")
        if not 0 <= mono < (1 << g):
            raise InputError(p + ".mono", f"exterior monomial {mono} needs more than g = {g} generators")
        want = [tgt.rank(x, n + degree - popcount(mono)), src.rank(x, n)]
        if shape != want:
            raise InputError(p + ".shape", f"declared {shape}, ranks require {want}")
        if len(entries) != want[0] * want[1]:
            raise InputError(p + ".entries", f"expected {want[0] * want[1]} entries")
        try:
            vals = [la.Q(_rational(v)) for v in entries]
        except (ValueError, TypeError, ZeroDivisionError):
            raise InputError(p + ".entries", "entries must be 'p/q' strings or integers") from None
        if (x, mono, n) in out:
            raise InputError(p, "duplicate block")
        out[(x, mono, n)] = la.from_flat(want[0], want[1], vals)
    return GradedMap(src, tgt, degree, out, g)


def _rational(v):
    if isinstance(v, bool) or not isinstance(v, (int, str)):
        raise TypeError(v)
    if isinstance(v, str):
        s = v.strip()
        num, _, den = s.partition("/")
        int(num)
        if den:
            if int(den) == 0:
                raise ZeroDivisionError(v)
        if "." in s or "e" in s.lower():
            raise ValueError(v)
    return v


def _cochain_in(items, degree, src_objs, tgt_objs, site, g, path):
    comps = {}
    if not isinstance(items, list):
        raise InputError(path, "expected a list of components")
    for k, c in enumerate(items):
        p = f"{path}[{k}]"
        I = _need(c, "index", p, list)
        if not I or any(not isinstance(i, int) or isinstance(i, bool) or not 0 <= i < site.n_opens for i in I):
            raise InputError(p + ".index", f"bad multi-index {I}")
        if len(I) > CAPS["cech_length"]:
            raise InputError(p + ".index", f"Cech length {len(I)} exceeds cap {CAPS['cech_length']}")
        I = tuple(I)
        sup = site.support(I)
        if not sup:
            raise InputError(p + ".index", f"multi-index {list(I)} has empty intersection")
        if I in comps:
            raise InputError(p, "duplicate multi-index")
        src = src_objs[I[-1]].graded.restrict(sup)
        tgt = tgt_objs[I[0]].graded.restrict(sup)
        comps[I] = _map_in(_need(c, "blocks", p), src, tgt, degree - len(I) + 1, g, p + ".blocks")
    return Cochain(degree, comps)


class Instance:
    """A parsed instance file."""

    def __init__(self, complex, global_module=None, morphisms=None, meta=None):
        self.complex = complex
        self.global_module = global_module
        self.morphisms = morphisms or {}
        self.meta = meta or {}


def parse(text, where="<input>"):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{where}:{e.lineno}:{e.colno}", e.msg) from None
    if not isinstance(doc, dict):
        raise InputError("$", "top level must be an object")
    fmt = doc.get("format")
    if fmt != FORMAT:
        raise InputError("$.format", f"unsupported format {fmt!r}, expected {FORMAT!r}")
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise InputError("$.meta", "expected an object")
    rank_cap = None if meta.get("derived") else CAPS["rank"]
    sb = _need(doc, "site", "$", dict)
    pts = _need(sb, "points", "$.site", list)
    opens = _need(sb, "opens", "$.site", list)
    if any(isinstance(x, bool) or not isinstance(x, (int, str)) for x in pts):
        raise InputError("$.site.points", "points must be strings or integers")
    if len(pts) > CAPS["points"]:
        raise InputError("$.site.points", f"{len(pts)} points exceed cap {CAPS['points']}")
    if len(opens) > CAPS["opens"]:
        raise InputError("$.site.opens", f"{len(opens)} opens exceed cap {CAPS['opens']}")
    if any(not isinstance(u, list) for u in opens):
        raise InputError("$.site.opens", "each open is a list of points")
    try:
        site = Site(pts, opens)
    except (SiteError, TypeError) as e:
        raise InputError("$.site", str(e)) from None
    g = _int(_need(_need(doc, "algebra", "$", dict), "g", "$.algebra"), "$.algebra.g")
    if not 0 <= g <= CAPS["g"]:
        raise InputError("$.algebra.g", f"g = {g} outside 0..{CAPS['g']}")
    ob = _need(doc, "objects", "$", list)
    if len(ob) != site.n_opens:
        raise InputError("$.objects", f"{len(ob)} objects for {site.n_opens} opens")
    objs = [_module_in(o, site.opens[i], g, f"$.objects[{i}]", rank_cap) for i, o in enumerate(ob)]
    _amplitude([E.graded for E in objs], "$.objects")
    a = _cochain_in(_need(doc, "twist", "$", list), 1, objs, objs, site, g, "$.twist")
    try:
        T = TwistedComplex(site, objs, a, g)
    except ValueError as e:
        raise InputError("$.twist", str(e)) from None
    E = None
    if "global" in doc:
        E = _module_in(doc["global"], frozenset(site.points), g, "$.global", rank_cap)
        _amplitude([E.graded], "$.global")
    morphisms = {}
    for k, m in enumerate(doc.get("morphisms", [])):
        p = f"$.morphisms[{k}]"
        name = _need(m, "name", p, str)
        deg = _int(_need(m, "degree", p), p + ".degree")
        ends = (_need(m, "source", p, str), _need(m, "target", p, str))
        if ends == ("self", "self"):
            body = _cochain_in(_need(m, "components", p, list), deg, objs, objs, site, g, p + ".components")
            morphisms[name] = TwistedMorphism(T, T, body)
        else:
            # endpoints outside this file are kept as raw data
            morphisms[name] = dict(source=ends[0], target=ends[1], degree=deg, components=m["components"])
    return Instance(T, E, morphisms, meta)


def _module_in(o, domain, g, path, rank_cap):
    G = _ranks_in(_need(o, "ranks", path), frozenset(domain), path + ".ranks", rank_cap)
    conn = _map_in(o.get("connection", []), G, G, 1, g, path + ".connection")
    return CohesiveModule(G, conn, g)


def _amplitude(gs, path):
    ds = [b for G in gs for b in (G.bounds() or ())]
    if ds and max(ds) - min(ds) > CAPS["amplitude"]:
        raise InputError(path, f"amplitude {max(ds) - min(ds)} exceeds cap {CAPS['amplitude']}")


def dump(inst):
    """Emit a parsed instance again; canonical files come back byte for byte."""
    ms = [(n, p["source"], p["target"], p) if isinstance(p, dict) else (n, "self", "self", p)
          for n, p in inst.morphisms.items()]
    return emit(inst.complex, inst.global_module, ms, {k: v for k, v in inst.meta.items() if k != "caps"})


def load(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise InputError(path, e.strerror) from None
    return parse(text, path)


# ---------------------------------------------------------------- reports

def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(w) for k, w in v.items()}
    if isinstance(v, (list, tuple, set, frozenset)):
        seq = sorted(v, key=repr) if isinstance(v, (set, frozenset)) else v
        return [_jsonable(w) for w in seq]
    if isinstance(v, (bool, int, str)) or v is None:
        return v
    return str(v)


def _cochain_summary(c):
    return dict(degree=c.degree, components=len(c.comps),
                blocks=sum(len(M.blocks) for M in c.comps.values()),
                levels=sorted({len(I) - 1 for I in c.comps}))


def _residual(c):
    """Nonzero block count of a cochain; zero backs an ok."""
    return sum(len(M.blocks) for M in c.comps.values())


class Reporter:
    def __init__(self, command, seed=None, timings=False):
        self.doc = dict(format=REPORT, command=command, ok=True, checks={}, failures=[],
                        certificates={}, transcript=[])
        if seed is not None:
            self.doc["seed"] = seed
        self.timings = {} if timings else None
        self._t = None

    def stage(self, name):
        now = time.perf_counter()
        if self.timings is not None and self._t is not None:
            self.timings[self._t[0]] = round(now - self._t[1], 4)
        self._t = (name, now)

    def check(self, name, ok, where=None, message=None):
        self.doc["checks"][name] = bool(ok)
        if not ok:
            self.doc["ok"] = False
            f = dict(check=name)
            if where is not None:
                f["where"] = where
            if message:
                f["message"] = message
            self.doc["failures"].append(f)

    def fail(self, stage, message, where=None):
        self.check(stage, False, where, message)

    def text(self):
        self.stage(None)
        if self.timings is not None:
            self.doc["timings"] = self.timings
        return json.dumps(_jsonable(self.doc), indent=1) + "\n"


def _verdict(rep, name, v):
    rep.check(name, v.ok, None if v.ok else dict(zip(("k", "index", "point"), v.where))
              if isinstance(v.where, tuple) and len(v.where) == 3 else v.where, None if v.ok else v.message)


def _validate(inst, rep):
    rep.stage("validate")
    _verdict(rep, "maurer_cartan", validate_mc(inst.complex))
    for i, E in enumerate(inst.complex.objects):
        v = validate_cohesive(E)
        if not v.ok:
            _verdict(rep, f"object_{i}_flat", v)
    if inst.global_module is not None:
        _verdict(rep, "global_flat", validate_cohesive(inst.global_module))
    for name, phi in sorted(inst.morphisms.items()):
        if isinstance(phi, TwistedMorphism):
            r = _residual(tw_d(phi, phi.src, phi.tgt))
            rep.check(f"morphism_{name}_closed", r == 0, None if r == 0 else dict(nonzero_blocks=r))
    return rep.doc["ok"]


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def cmd_validate(args, rep):
    inst = load(args.file)
    _validate(inst, rep)


def cmd_globalize(args, rep):
    inst = load(args.file)
    F = inst.complex
    if not _validate(inst, rep):
        return
    if F.g:
        rep.fail("input", "globalize expects complexes of bundles (g = 0); use descend")
        return
    rep.stage("globalize")
    try:
        R = globalize(F, homotopy=not args.no_homotopy)
    except GlobalizeError as e:
        rep.fail("globalize/" + e.stage, str(e), e.where)
        return
    for k, v in R.checks.items():
        rep.check(k, v)
    for k, v in R.residuals.items():
        rep.check(f"residual_level_{k}", v)
    rep.doc["transcript"] = R.transcript
    E = R.module
    rep.doc["certificates"] = dict(
        global_ranks=_ranks_out(E.graded, _point_order(F.site)),
        cohomology={n: {repr(x): r for x, r in d.items()} for n, d in cohomology(R.complex).items()},
        phi=_cochain_summary(R.phi.body))
    if R.homotopy is not None and R.homotopy.ok:
        rep.doc["certificates"]["homotopy"] = dict(inverse=_cochain_summary(R.homotopy.inverse.body),
                                                   h_src=_cochain_summary(R.homotopy.h_src),
                                                   h_tgt=_cochain_summary(R.homotopy.h_tgt))
    if args.output and rep.doc["ok"]:
        meta = dict(derived=True, source_sha256=_digest(args.file), command="globalize")
        _write(args.output, emit(R.phi.src, E, [("phi", "self", "input", R.phi)], meta))


def cmd_descend(args, rep):
    inst = load(args.file)
    F = inst.complex
    if not _validate(inst, rep):
        return
    rep.stage("descend")
    try:
        D = descend_cohesive(F, homotopy=not args.no_homotopy)
    except GlobalizeError as e:
        rep.fail("descend/" + e.stage, str(e), e.where)
        return
    for k, v in D.base.checks.items():
        rep.check(f"globalize_{k}", v)
    for k, v in D.checks.items():
        rep.check(k, v)
    rep.doc["transcript"] = D.base.transcript + [dict(stage="lift", **s) if isinstance(s, dict) else
                                                 dict(stage="lift", info=s) for s in D.steps]
    order = _point_order(F.site)
    rep.doc["certificates"] = dict(global_ranks=_ranks_out(D.module.graded, order),
                                   phi=_cochain_summary(D.phi.body))
    if D.homotopy is not None and D.homotopy.ok:
        rep.doc["certificates"]["homotopy"] = dict(inverse=_cochain_summary(D.homotopy.inverse.body),
                                                   h_src=_cochain_summary(D.homotopy.h_src),
                                                   h_tgt=_cochain_summary(D.homotopy.h_tgt))
    if args.output and rep.doc["ok"]:
        meta = dict(derived=True, source_sha256=_digest(args.file), command="descend")
        _write(args.output, emit(D.phi.src, D.module, [("phi", "self", "input", D.phi)], meta))


def cmd_hom(args, rep):
    a, b = load(args.file_a), load(args.file_b)
    for tag, inst in (("a", a), ("b", b)):
        if inst.global_module is None:
            raise InputError(f"{tag}:$.global", "hom needs files with a global block")
    if a.complex.site != b.complex.site:
        raise InputError("b:$.site", "both files must share the site")
    E, F = a.global_module, b.global_module
    for tag, M in (("a", E), ("b", F)):
        _verdict(rep, f"{tag}_flat", validate_cohesive(M))
    if not rep.doc["ok"]:
        return
    rep.stage("hom")
    H = hom_comparison(E, F, a.complex.site)
    for t in H.degrees:
        rep.check(f"degree_{t}", H.p_ranks[t] == H.tw_ranks[t] == H.map_ranks[t])
    rep.doc["certificates"] = dict(degrees=H.degrees, p_ranks=H.p_ranks, tw_ranks=H.tw_ranks,
                                   map_ranks=H.map_ranks)


def cmd_gen(args, rep):
    for name, v, cap in (("opens", args.opens, CAPS["opens"]), ("points", args.points, CAPS["points"]),
                         ("rank", args.max_rank, CAPS["rank"]), ("g", args.g, CAPS["g"]),
                         ("amplitude", args.hi - args.lo, CAPS["amplitude"])):
        if not 0 <= v <= cap:
            raise InputError(f"--{name}", f"{v} outside the cap 0..{cap}")
    meta = dict(seed=args.seed, kind=args.kind, opens=args.opens, points=args.points, lo=args.lo, hi=args.hi,
                max_rank=args.max_rank, g=args.g)
    if args.kind == "global":
        import random
        rng = random.Random(args.seed)
        site = random_site(rng, args.opens, args.points)
        E = random_cohesive(rng, frozenset(site.points), args.lo, args.hi, args.max_rank, args.g)
        text = emit(twist(E, site), E, meta=meta)
    else:
        inst = generate_instance(args.seed, args.opens, args.points, args.lo, args.hi, args.max_rank, args.g,
                                 higher=args.kind == "higher", mode="cone" if args.kind == "cone" else "gauge")
        text = emit(inst.complex, meta=meta)
    try:
        parse(text)
    except InputError as e:
        raise InputError("gen", f"generated instance breaks a cap ({e}); lower --max-rank") from None
    if args.output:
        _write(args.output, text)
    else:
        sys.stdout.write(text)
    return True


def _digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def build_parser():
    p = argparse.ArgumentParser(prog="twdescent", description="Exact descent for twisted complexes on finite covers.")
    p.add_argument("--timings", action="store_true", help="include stage timings in the report")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="Maurer-Cartan and flatness battery")
    v.add_argument("file")
    for name, helptext in (("globalize", "global complex E and phi: T(E) -> F"),
                           ("descend", "global cohesive module E with T(E) ~ F")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("file")
        c.add_argument("-o", "--output", help="write the global object as an instance file")
        c.add_argument("--no-homotopy", action="store_true", help="skip the homotopy-inverse certificate")
    h = sub.add_parser("hom", help="compare hom cohomology before and after twisting")
    h.add_argument("file_a")
    h.add_argument("file_b")
    gen = sub.add_parser("gen", help="emit a replayable generated instance")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--kind", choices=["gauge", "higher", "cone", "global"], default="gauge")
    gen.add_argument("--opens", type=int, default=2)
    gen.add_argument("--points", type=int, default=3)
    gen.add_argument("--lo", type=int, default=0)
    gen.add_argument("--hi", type=int, default=1)
    gen.add_argument("--max-rank", type=int, default=2)
    gen.add_argument("--g", type=int, default=0)
    gen.add_argument("-o", "--output")
    return p


COMMANDS = dict(validate=cmd_validate, globalize=cmd_globalize, descend=cmd_descend, hom=cmd_hom, gen=cmd_gen)


def main(argv=None, out=None):
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    rep = Reporter(args.command, getattr(args, "seed", None), args.timings)
    try:
        if COMMANDS[args.command](args, rep):
            return 0
    except InputError as e:
        rep.doc["ok"] = False
        rep.doc["input_error"] = dict(path=e.path, message=str(e))
        out.write(rep.text())
        return 2
    out.write(rep.text())
    return 0 if rep.doc["ok"] else 1


if __name__ == "__main__":
    sys.exit(main())
