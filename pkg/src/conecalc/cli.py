"""Batch command line front end.

Every subcommand reads a function spec (a file or inline JSON), runs one
operation and writes CSV or JSON data to stdout or atomically to ``--out``.

Exit codes: 0 PASS or success, 2 input error, 3 FAIL, 4 INCONCLUSIVE,
5 numeric budget exhausted.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import re
import sys
import tempfile

import numpy as np

from . import __version__
from . import composition as C
from . import simulate as SIM
from . import stable as S
from .checker import TAU, FunctionHandle, check_bernstein, check_branching, check_cm
from .cones import BernsteinTriple, BranchingTriple, CompletelyMonotoneRep
from .cones import from_json as triple_from_json
from .cones import to_json as triple_to_json
from .errors import (
    CapabilityError,
    ConeCalcError,
    DomainError,
    EstimationError,
    EvaluationError,
    RepresentationError,
)
from .measures import PowerExp, RadonMeasure

EXIT_OK, EXIT_INPUT, EXIT_FAIL, EXIT_INCONCLUSIVE, EXIT_BUDGET = 0, 2, 3, 4, 5
_VERDICT_EXIT = {"PASS": EXIT_OK, "INTERNAL": EXIT_OK, "FAIL": EXIT_FAIL, "NOT_INTERNAL": EXIT_FAIL,
                 "INCONCLUSIVE": EXIT_INCONCLUSIVE}


class InputError(ConeCalcError, ValueError):
    """Malformed command line input."""


# ---------------------------------------------------------------------------
# function specs
# ---------------------------------------------------------------------------

_TERM = re.compile(r"^([0-9.]+(?:[eE][+-]?[0-9]+)?)?\*?(q(?:\^([0-9.]+))?)?$")


def parse_polynomial(text: str) -> dict:
    """``"2+q+3q^2"`` as ``{power: coefficient}``; coefficients are nonnegative."""
    terms: dict = {}
    for raw in text.replace(" ", "").split("+"):
        m = _TERM.match(raw)
        if not raw or m is None or not (m.group(1) or m.group(2)):
            raise InputError(f"cannot parse polynomial term {raw!r}")
        coef = float(m.group(1)) if m.group(1) else 1.0
        power = float(m.group(3) or 1.0) if m.group(2) else 0.0
        terms[power] = terms.get(power, 0.0) + coef
    return terms


def _polynomial(text: str):
    terms = parse_polynomial(text)
    if all(c >= 0 for c in terms.values()):
        if set(terms) <= {1.0, 2.0}:
            return BranchingTriple(terms.get(1.0, 0.0), terms.get(2.0, 0.0))
        if set(terms) <= {0.0, 1.0}:
            return BernsteinTriple(terms.get(0.0, 0.0), terms.get(1.0, 0.0))
    items = sorted(terms.items())
    return FunctionHandle(lambda q: sum(c * np.asarray(q, float) ** p for p, c in items), label=text)


def _builtin(name: str, doc: dict):
    if name == "e_alpha":
        if "alpha" not in doc:
            raise InputError("e_alpha needs 'alpha'")
        return S.e_alpha_triple(float(doc["alpha"]), float(doc.get("scale", 1.0)))
    if name == "gamma_exponent":
        # log(1 + q) with Levy density exp(-x)/x
        return BernsteinTriple(0.0, 0.0, RadonMeasure.family(PowerExp(-1.0, 1.0, 1.0)))
    if name == "identity":
        return BernsteinTriple(0.0, 1.0)
    if name == "square":
        return BranchingTriple(0.0, 1.0)
    if "q" in name:
        return _polynomial(name)
    raise InputError(f"unknown builtin {name!r}")


def _as_handle(obj) -> FunctionHandle:
    return C.handle(obj)


def _op(doc: dict):
    op = doc["op"]
    args = [resolve(a) for a in doc.get("args", [])]

    def need(k):
        if len(args) != k:
            raise InputError(f"op {op!r} takes {k} argument(s)")

    if op == "compose":
        need(2)
        return C.compose(args[0], args[1])
    if op == "subordinate":
        need(2)
        outer, inner = args
        if not (isinstance(outer, BernsteinTriple) and isinstance(inner, BernsteinTriple)):
            raise InputError("subordinate needs two Bernstein triples")
        return C.bochner_subordinate(inner, outer)
    if op == "invert":
        need(1)
        return C.invert_branching(args[0])
    if op == "ladder":
        need(1)
        which = doc.get("which", "inv_phi_prime")
        lad = C.ladder_functions(args[0])
        if which not in lad:
            raise InputError(f"unknown ladder function {which!r}")
        return lad[which]
    if op == "reciprocal":
        need(1)
        return C.reciprocal_cm(args[0])
    if op in ("add", "mul"):
        if not args:
            raise InputError(f"op {op!r} needs arguments")
        hs = [_as_handle(a) for a in args]

        def ev(q, hs=hs):
            out = hs[0](q)
            for h in hs[1:]:
                out = out + h(q) if op == "add" else out * h(q)
            return out

        return FunctionHandle(ev, label=op)
    if op == "power":
        need(1)
        h, k = _as_handle(args[0]), float(doc.get("exponent", 2.0))
        return FunctionHandle(lambda q: h(q) ** k, label=f"({h.label})^{k:g}")
    raise InputError(f"unknown op {op!r}")


def resolve(doc):
    """Turn a function spec into a triple or a :class:`FunctionHandle`."""
    if isinstance(doc, str):
        return _builtin(doc, {})
    if not isinstance(doc, dict):
        raise InputError("a function spec must be a JSON object or a builtin name")
    if "op" in doc:
        return _op(doc)
    if "cone" in doc:
        return triple_from_json(doc)
    name = doc.get("builtin", doc.get("name"))
    if name is None:
        raise InputError("spec needs one of 'cone', 'builtin' or 'op'")
    return _builtin(str(name), doc)


def load_spec(text: str):
    """``--spec`` value: a path to a JSON file, inline JSON or a bare builtin name."""
    if os.path.isfile(text):
        with open(text) as fh:
            text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = text.strip()
    return resolve(doc)


def parse_grid(text: str) -> np.ndarray:
    """``start:stop:points[:log|lin]`` or a comma separated list."""
    try:
        if ":" not in text:
            return np.array([float(v) for v in text.split(",") if v.strip()])
        parts = text.split(":")
        if len(parts) not in (3, 4):
            raise ValueError
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        mode = parts[3] if len(parts) == 4 else "log"
    except ValueError as exc:
        raise InputError(f"bad grid {text!r}: use start:stop:points:log or a list") from exc
    if n < 1:
        raise InputError("grid needs at least one point")
    if mode == "log":
        if a <= 0 or b <= 0:
            raise InputError("log grid needs positive endpoints")
        return np.geomspace(a, b, n)
    if mode == "lin":
        return np.linspace(a, b, n)
    raise InputError(f"grid mode must be log or lin, got {mode!r}")


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _num(v) -> str:
    return repr(float(v))


def _header(**fields) -> dict:
    d = {"version": __version__, "tolerance": TAU}
    d.update(fields)
    return d


def _csv(header: dict, columns: list, rows) -> str:
    buf = io.StringIO()
    for k in sorted(header):
        buf.write(f"# {k}={header[k]}\n")
    buf.write(",".join(columns) + "\n")
    for r in rows:
        buf.write(",".join(v if isinstance(v, str) else _num(v) for v in r) + "\n")
    return buf.getvalue()


def _json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_output(text: str, out: str | None) -> None:
    """Write to stdout, or replace ``out`` atomically."""
    if out is None:
        sys.stdout.write(text)
        return
    d = os.path.dirname(os.path.abspath(out))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".conecalc-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _grid(args, default: str) -> np.ndarray:
    return parse_grid(args.grid or default)


def cmd_eval(args) -> int:
    f = _as_handle(load_spec(args.spec))
    q = _grid(args, "1e-2:1e2:25:log")
    vals = f(q)
    if args.format == "json":
        text = _json({**_header(), "q": q, "value": vals})
    else:
        text = _csv(_header(), ["q", "value"], zip(q, vals))
    write_output(text, args.out)
    return EXIT_OK


def _b_down_flag(obj, cone: str):
    rep = obj if not isinstance(obj, FunctionHandle) else obj.meta.get("triple")
    if cone == "B1":
        return rep.in_b1 if isinstance(rep, CompletelyMonotoneRep) else None
    return rep.decreasing if isinstance(rep, BernsteinTriple) else None


def cmd_check(args) -> int:
    obj = load_spec(args.spec)
    h = _as_handle(obj)
    q = _grid(args, "1e-2:1e2:25:log")
    K = args.order
    cone = args.cone
    if cone in ("CM", "B1"):
        cert = check_cm(h, K, q)
    elif cone in ("B2", "B2down"):
        cert = check_bernstein(h, K, q)
    else:
        cert = check_branching(h, K, q)
    cert.cone = cone
    if cone in ("B1", "B2down") and cert.passed:
        # the extra condition is a property of the representing measure
        flag = _b_down_flag(obj, cone)
        if flag is None:
            cert.verdict, cert.reason = "INCONCLUSIVE", "representational condition needs a cone triple"
        elif not flag:
            cert.verdict = "FAIL"
            cert.witness = {"condition": "infinite B1 mass" if cone == "B1" else "measure has no decreasing density"}
    write_output(_json({**_header(), **cert.to_json()}), args.out)
    return _VERDICT_EXIT[cert.verdict]


def cmd_internal(args) -> int:
    obj = load_spec(args.spec)
    cert = C.is_internal(obj, args.order, _grid(args, "1e-2:1e2:25:log"))
    write_output(_json({**_header(), **cert.to_json()}), args.out)
    return _VERDICT_EXIT[cert.verdict]


def cmd_stable_density(args) -> int:
    alpha = S.check_alpha(args.alpha)
    xs = parse_grid(args.x_grid)
    ts = parse_grid(args.t_grid)
    rows = []
    for x in xs:
        for t in ts:
            d = S.stable_density(alpha, float(x), float(t), info=True)
            bound = float(S.lemma1_bound(alpha, float(x), float(t)))
            rows.append((alpha, x, t, float(d), bound, d.info.method, str(d.info.terms_used)))
    hdr = _header(relative_slack=1e-9)
    if args.format == "json":
        keys = ["alpha", "x", "t", "density", "bound", "method", "terms"]
        text = _json({**hdr, "rows": [dict(zip(keys, r[:-1] + (int(r[-1]),))) for r in rows]})
    else:
        text = _csv(hdr, ["alpha", "x", "t", "density", "bound", "method", "terms"], rows)
    write_output(text, args.out)
    return EXIT_OK


def _branching(obj) -> BranchingTriple:
    if not isinstance(obj, BranchingTriple):
        raise InputError("this command needs a branching mechanism (cone B3)")
    return obj


def cmd_nu_alpha(args) -> int:
    psi = _branching(load_spec(args.spec))
    ts = _grid(args, "1e-2:1e2:25:log")
    vals = S.nu_alpha_density(psi.jumps, args.alpha, ts)
    hdr = _header(alpha=args.alpha)
    if args.format == "json":
        text = _json({**hdr, "t": ts, "density": vals})
    else:
        text = _csv(hdr, ["t", "density"], zip(ts, np.atleast_1d(vals)))
    write_output(text, args.out)
    return EXIT_OK


def cmd_invert(args) -> int:
    obj = load_spec(args.spec)
    if not isinstance(obj, (BranchingTriple, FunctionHandle)):
        raise InputError("invert needs a branching mechanism")
    inv = C.invert_branching(obj)
    p = _grid(args, "1e-2:1e2:25:log")
    vals = inv(p)
    hdr = _header(inverse_relative_step=4e-16)
    if args.format == "json":
        text = _json({**hdr, "p": p, "value": vals})
    else:
        text = _csv(hdr, ["p", "value"], zip(p, vals))
    write_output(text, args.out)
    return EXIT_OK


def cmd_compose(args) -> int:
    outer = load_spec(args.spec)
    if args.alpha is not None:
        triple = C.compose_with_e_alpha_triple(_branching(outer), args.alpha)
    else:
        if args.inner is None:
            raise InputError("compose needs --alpha or --inner")
        inner = load_spec(args.inner)
        if isinstance(outer, BernsteinTriple) and isinstance(inner, BernsteinTriple):
            triple = C.bochner_subordinate(inner, outer)
        else:
            raise InputError("compose --inner needs two Bernstein triples")
    write_output(_json({**_header(), "triple": triple_to_json(triple)}), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    obj = load_spec(args.spec)
    if not isinstance(obj, BernsteinTriple):
        raise InputError("simulate needs a Bernstein triple")
    q = _grid(args, "0.5,1,2")
    if args.outer is not None:
        outer = load_spec(args.outer)
        if not isinstance(outer, BernsteinTriple):
            raise InputError("--outer needs a Bernstein triple")
        rep = SIM.subordination_mc_check(obj, outer, args.t, args.n, q, args.seed, args.eps)
        scheme = "subordinated"
    else:
        st = S.stable_scale(obj)
        if st is not None and st[0] == 0:
            _, k, alpha = st
            batch = SIM.sample_stable(alpha, k * args.t, args.n, args.seed)
            batch.t = args.t
        else:
            batch = SIM.sample_subordinator(obj, args.t, args.n, args.seed, args.eps)
        rep = SIM.laplace_check(batch, lambda s: float(obj(s)), q, batch.bias_bound)
        scheme = batch.scheme
    doc = {**_header(seed=args.seed, eps=args.eps, scheme=scheme, sigma_multiplier=4), **rep.to_json()}
    write_output(_json(doc), args.out)
    return _VERDICT_EXIT[rep.verdict]


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conecalc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"conecalc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, spec=True, fmt=True):
        if spec:
            sp.add_argument("--spec", required=True, help="function spec: JSON file, inline JSON or builtin name")
        sp.add_argument("--grid", help="start:stop:points[:log|lin] or comma list")
        sp.add_argument("--out", help="output file (written atomically)")
        if fmt:
            sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("eval", help="evaluate a function on a grid")
    common(sp)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("check", help="cone membership certificate")
    common(sp, fmt=False)
    sp.add_argument("--cone", required=True, choices=("CM", "B1", "B2", "B2down", "B3"))
    sp.add_argument("--order", type=int, default=8)
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("internal", help="internality certificate")
    common(sp, fmt=False)
    sp.add_argument("--order", type=int, default=8)
    sp.set_defaults(func=cmd_internal)

    sp = sub.add_parser("stable-density", help="stable densities and their bound")
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--x-grid", required=True)
    sp.add_argument("--t-grid", required=True)
    sp.add_argument("--out")
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_stable_density)

    sp = sub.add_parser("nu-alpha", help="Levy density nu_alpha of Psi o e_alpha")
    common(sp)
    sp.add_argument("--alpha", type=float, required=True)
    sp.set_defaults(func=cmd_nu_alpha)

    sp = sub.add_parser("invert", help="inverse of a branching mechanism")
    common(sp)
    sp.set_defaults(func=cmd_invert)

    sp = sub.add_parser("compose", help="triple of Psi o e_alpha or of a Bochner subordination")
    common(sp, fmt=False)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--alpha", type=float)
    g.add_argument("--inner", help="inner Bernstein triple spec")
    sp.set_defaults(func=cmd_compose)

    sp = sub.add_parser("simulate", help="Monte Carlo check of a Laplace exponent")
    common(sp, fmt=False)
    sp.add_argument("--t", type=float, default=1.0)
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--outer", help="outer Bernstein triple spec for a subordination check")
    sp.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (EvaluationError, EstimationError) as exc:
        print(f"conecalc: numeric budget exhausted: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except CapabilityError as exc:
        print(f"conecalc: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, RepresentationError, DomainError, ValueError, KeyError, TypeError, OSError) as exc:
        print(f"conecalc: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
