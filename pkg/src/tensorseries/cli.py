"""Command-line front end: build constructions from files, run demos.

Exit codes: 0 success, 1 usage/input error, 2 certificate or scheme-contract
violation. All randomness flows from --seed (default 0), so runs are fully
deterministic by default. Output files are written atomically (temp + rename).

File formats
------------
targets      plain CSV matrix, one row per line (rows = dim X)
grid input   CSV with header ``t,y1,...,yd``, strictly increasing t
reps         JSON: spaces, target matrix, list of {x, y} vector pairs
traces       CSV: ``m,error,certified_bound,block``
stress       JSON with the report fields of both probes
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import construct, norms, schemes, verify
from .model import CoefficientTensor, ElementaryTensor, Representation, SpaceSpec


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_matrix_csv(path: str) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append([float(cell) for cell in line.split(",")])
    if not rows:
        raise ValueError(f"{path}: no rows")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise ValueError(f"{path}: ragged rows (widths {sorted(widths)})")
    return np.array(rows)


def _space_dict(s: SpaceSpec) -> dict:
    return {"dim": s.dim, "vector_norm_kind": s.vector_norm_kind}


def _space_from(d: dict) -> SpaceSpec:
    dim = int(d["dim"])
    return SpaceSpec(dim, d["vector_norm_kind"], dim_cap=max(64, dim))


def representation_to_dict(rep: Representation, certificate=None) -> dict:
    out = {
        "space_x": _space_dict(rep.target.space_x),
        "space_y": _space_dict(rep.target.space_y),
        "target": rep.target.coeffs.tolist(),
        "terms": [{"x": t.x.tolist(), "y": t.y.tolist()} for t in rep.terms],
    }
    if certificate is not None:
        out["certificate"] = {
            "c": certificate.c,
            "worst_prefix_ratio": certificate.worst_prefix_ratio,
            "n_used": certificate.n_used,
            "zero_target": certificate.zero_target,
        }
    return out


def representation_from_dict(d: dict) -> Representation:
    sx = _space_from(d["space_x"])
    sy = _space_from(d["space_y"])
    target = CoefficientTensor(sx, sy, np.array(d["target"], dtype=float))
    terms = tuple(
        ElementaryTensor(np.array(t["x"], dtype=float), np.array(t["y"], dtype=float))
        for t in d["terms"]
    )
    return Representation(terms, target)


def save_representation(path: str, rep: Representation, certificate=None) -> None:
    _atomic_write(path, json.dumps(representation_to_dict(rep, certificate), indent=2) + "\n")


def load_representation(path: str) -> Representation:
    with open(path) as fh:
        return representation_from_dict(json.load(fh))


def stream_to_dict(stream) -> dict:
    return {
        "space_x": _space_dict(stream.space_x),
        "space_y": _space_dict(stream.space_y),
        "c": stream.c,
        "norm_kind": stream.norm_kind,
        "final_certified_error": stream.final_certified_error,
        "blocks": [
            {
                "index": b.index,
                "start": b.start,
                "stop": b.stop,
                "block_norm": b.block_norm,
                "stage_bound": r.stage_bound,
                "prefix_bound": r.prefix_bound,
                "worst_prefix_ratio": r.worst_prefix_ratio,
                "fallback_eps": r.fallback_eps,
            }
            for b, r in zip(stream.blocks, stream.certificates)
        ],
        "terms": [{"x": t.x.tolist(), "y": t.y.tolist()} for t in stream.terms],
    }


_NORM_CHOICES = norms.NORM_KINDS
_SCHEME_CHOICES = ("svd", "interp", "dict", "cauchy")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of defaults; explicit flags win")
    p.add_argument("--norm", choices=_NORM_CHOICES, default=None)
    p.add_argument("--c", type=float, default=None, help="prefix bound constant (> 1)")
    p.add_argument("--tol", type=float, default=None, help="certified-error stop tolerance")
    p.add_argument("--max-terms", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trials", type=int, default=None)
    p.add_argument("--in", dest="in_path", default=None, help="input file")
    p.add_argument("--out", default=None, help="output path (or basename for multi-file output)")
    p.add_argument("--scheme", choices=_SCHEME_CHOICES, default=None)


_DEFAULTS = {
    "norm": "frobenius",
    "c": 2.0,
    "tol": 1e-6,
    "max_terms": None,
    "seed": 0,
    "trials": 1000,
    "in_path": None,
    "out": None,
    "scheme": "svd",
}


class RunConfig:
    """Merged flag/config-file parameters with the shared validity checks."""

    def __init__(self, args: argparse.Namespace):
        merged = dict(_DEFAULTS)
        if args.config:
            with open(args.config) as fh:
                file_conf = json.load(fh)
            unknown = set(file_conf) - set(_DEFAULTS)
            if unknown:
                raise ValueError(f"unknown config keys: {sorted(unknown)}")
            merged.update(file_conf)
        for key in _DEFAULTS:
            val = getattr(args, key, None)
            if val is not None:
                merged[key] = val
        self.norm = merged["norm"]
        self.c = float(merged["c"])
        self.tol = float(merged["tol"])
        self.max_terms = merged["max_terms"]
        self.seed = int(merged["seed"])
        self.trials = int(merged["trials"])
        self.in_path = merged["in_path"]
        self.out = merged["out"]
        self.scheme = merged["scheme"]
        if not (self.c > 1.0) or not math.isfinite(self.c):
            raise ValueError(f"--c must be > 1, got {self.c}")
        if not (self.tol > 0.0):
            raise ValueError(f"--tol must be positive, got {self.tol}")
        if self.norm not in _NORM_CHOICES:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.trials < 1:
            raise ValueError("--trials must be >= 1")

    def require_in(self) -> str:
        if not self.in_path:
            raise ValueError("--in is required")
        return self.in_path

    def require_out(self) -> str:
        if not self.out:
            raise ValueError("--out is required")
        return self.out


def cmd_flatten(cfg: RunConfig) -> int:
    in_path = cfg.require_in()
    out_path = cfg.require_out()
    if in_path.endswith(".json"):
        rep = load_representation(in_path)
        ev = norms.NormEvaluator(cfg.norm, rep.target.space_x, rep.target.space_y)
    else:
        matrix = load_matrix_csv(in_path)
        sx, sy = norms.default_spaces(cfg.norm, *matrix.shape)
        u = CoefficientTensor(sx, sy, matrix)
        rep = construct.expand(u)
        ev = norms.NormEvaluator(cfg.norm, sx, sy)
    flat, cert = construct.flatten_bounded(rep, ev, cfg.c)
    save_representation(out_path, flat, cert)
    print(
        f"flatten: {rep.n_terms} -> {flat.n_terms} terms, n = {cert.n_used}, "
        f"worst prefix ratio {cert.worst_prefix_ratio:.6f} (c = {cfg.c})"
        + (" [zero target]" if cert.zero_target else "")
    )
    return 0


def _build_scheme(cfg: RunConfig):
    in_path = cfg.require_in()
    if cfg.scheme == "svd":
        matrix = load_matrix_csv(in_path)
        sx, sy = norms.default_spaces(cfg.norm, *matrix.shape)
        u = CoefficientTensor(sx, sy, matrix)
        # nuclear tail sums dominate the frobenius truncation error, so they
        # stay valid certificates for any norm below nuclear
        error_norm = "spectral" if cfg.norm == "spectral" else "nuclear"
        scheme = schemes.svd_truncation_scheme(u, error_norm)
        ev = norms.NormEvaluator(cfg.norm, sx, sy)
        return scheme, ev, u
    if cfg.scheme == "interp":
        f = schemes.GridFunction.from_csv(in_path)
        scheme = schemes.grid_interpolation_scheme(f)
        ev = scheme.norm_evaluator()
        target = CoefficientTensor(scheme.space_x, scheme.space_y, f.values)
        return scheme, ev, target
    if cfg.scheme == "cauchy":
        with open(in_path) as fh:
            data = json.load(fh)
        stages = []
        tensors = []
        for entry in data["stages"]:
            matrix = np.array(entry["matrix"], dtype=float)
            sx, sy = norms.default_spaces(cfg.norm, *matrix.shape)
            tensors.append(CoefficientTensor(sx, sy, matrix))
            stages.append((tensors[-1], float(entry["bound"])))
        scheme = schemes.cauchy_adapter(stages)
        ev = norms.NormEvaluator(cfg.norm, tensors[0].space_x, tensors[0].space_y)
        return scheme, ev, tensors[-1]
    if cfg.scheme == "dict":
        with open(in_path) as fh:
            data = json.load(fh)
        target = np.array(data["target"], dtype=float)
        atoms = [
            construct.DictionaryAtom(np.array(a, dtype=float), i)
            for i, a in enumerate(data["atoms"])
        ]
        return (target, atoms), None, None
    raise ValueError(f"unknown scheme {cfg.scheme!r}")


def _family_for(dim: int):
    try:
        return norms.nested_sup_family(dim)
    except ValueError:
        return norms.SeminormFamily([norms.MaskedAbsSup(tuple(range(dim)))])


def cmd_telescope(cfg: RunConfig) -> int:
    out_base = cfg.require_out()
    built, ev, target = _build_scheme(cfg)
    if cfg.scheme == "dict":
        target_vec, atoms = built
        stream = construct.dense_span_series(
            target_vec, atoms, _family_for(target_vec.shape[0]), c=cfg.c, tol=cfg.tol
        )
        payload = {
            "c": stream.c,
            "final_certified_error": stream.final_certified_error,
            "stages": [
                {
                    "index": s.index,
                    "atoms_used": s.atoms_used,
                    "residual": s.residual,
                    "bound": s.bound,
                    "fallback_eps": s.fallback_eps,
                }
                for s in stream.stages
            ],
            "terms": [{"lambda": t.lam, "atom_id": t.atom_id} for t in stream.terms],
        }
        _atomic_write(out_base + ".terms.json", json.dumps(payload, indent=2) + "\n")
        print(
            f"telescope(dict): {stream.n_terms} terms over {len(stream.blocks)} stages, "
            f"certified error {stream.final_certified_error:.3e}"
        )
        return 0
    stop = construct.StopRule(certified_error=cfg.tol)
    # measured first-stage error may sit well under the default envelope; give
    # schemes with slow first stages room while keeping the schedule geometric
    envelope = 4.0 * (float(ev(built.stage(1).tensor)) + built.stage(1).bound + 1.0)
    stream = construct.telescope(
        built, ev, c=cfg.c, stop=stop, envelope_scale=envelope, reference=target
    )
    trace = verify.convergence_trace(stream, target, ev, max_terms=cfg.max_terms)
    trace_path = out_base + ".trace.csv"
    trace.to_csv(trace_path)
    _atomic_write(out_base + ".terms.json", json.dumps(stream_to_dict(stream), indent=2) + "\n")
    final_err = trace.rows[-1].error if trace.rows else 0.0
    print(
        f"telescope({cfg.scheme}): {stream.n_terms} terms in {stream.n_blocks} blocks, "
        f"certified error {stream.final_certified_error:.3e}, "
        f"measured final error {final_err:.3e}"
    )
    print(f"wrote {trace_path} and {out_base}.terms.json")
    return 0


def cmd_stress(cfg: RunConfig) -> int:
    rep = load_representation(cfg.require_in())
    out_path = cfg.require_out()
    ev = norms.NormEvaluator(cfg.norm, rep.target.space_x, rep.target.space_y)
    perm = verify.permutation_stress(rep.terms, rep.target, ev, cfg.trials, cfg.seed)
    sub = verify.subset_bound_scan(rep.terms, rep.target, ev, cfg.trials, cfg.seed)
    payload = {"permutation": perm.to_json_dict(), "subset": sub.to_json_dict()}
    _atomic_write(out_path, json.dumps(payload, indent=2) + "\n")
    def _fmt(v):
        return "n/a (zero target)" if v is None else f"{v:.6f}"
    print(f"permutation worst prefix ratio: {_fmt(perm.worst_prefix_ratio_over_permutations)}"
          + (" [exhaustive]" if perm.exhaustive else ""))
    print(f"subset worst ratio:             {_fmt(sub.worst_subset_ratio)}"
          + (" [exhaustive]" if sub.exhaustive else ""))
    print(verify.EXPLORATORY_NOTE)
    return 0


def _circle_grid(points: int = 257) -> schemes.GridFunction:
    t = np.linspace(0.0, 1.0, points)
    values = np.vstack([np.cos(2 * np.pi * t), np.sin(2 * np.pi * t)])
    return schemes.GridFunction(grid=t, values=values)


def cmd_ck_demo(cfg: RunConfig) -> int:
    out_base = cfg.out or "ck_demo"
    tol = cfg.tol if cfg.tol != _DEFAULTS["tol"] else 1e-3
    f = _circle_grid()
    scheme = schemes.grid_interpolation_scheme(f)
    ev = scheme.norm_evaluator()
    target = CoefficientTensor(scheme.space_x, scheme.space_y, f.values)
    print("uniform approximation of the closed curve t -> (cos 2 pi t, sin 2 pi t)")
    print("stage errors (piecewise-linear interpolation on dyadic subgrids):")
    prev = None
    for j in range(1, scheme.levels + 1):
        b = scheme.stage(j).bound
        note = f"  factor {prev / b:.2f}" if prev and b > 0 else ""
        print(f"  level {j}: sup error {b:.6e}{note}")
        prev = b
    stream = construct.telescope(
        scheme,
        ev,
        c=cfg.c,
        stop=construct.StopRule(certified_error=tol),
        envelope_scale=4.0 * (float(ev(target)) + 1.0),
        reference=target,
    )
    trace = verify.convergence_trace(stream, target, ev)
    trace.to_csv(out_base + ".trace.csv")
    _atomic_write(out_base + ".terms.json", json.dumps(stream_to_dict(stream), indent=2) + "\n")
    final = trace.rows[-1].error if trace.rows else 0.0
    print(
        f"series: {stream.n_terms} hat-function terms in {stream.n_blocks} blocks; "
        f"certified uniform error {stream.final_certified_error:.3e}, measured {final:.3e}"
    )
    print(f"wrote {out_base}.trace.csv and {out_base}.terms.json")
    return 0


def cmd_span_demo(cfg: RunConfig) -> int:
    out_base = cfg.out or "span_demo"
    tol = cfg.tol if cfg.tol != _DEFAULTS["tol"] else 1e-4
    t = np.linspace(0.0, 1.0, 33)
    target = np.exp(t)
    atoms = [construct.DictionaryAtom(t**k, k) for k in range(13)]
    family = norms.nested_sup_family(33)
    stream = construct.dense_span_series(target, atoms, family, c=cfg.c, tol=tol)
    print("scalar series for exp(t) over sampled monomials t^0 .. t^12")
    for s in stream.stages:
        print(
            f"  stage {s.index}: atoms {s.atoms_used}, residual {s.residual:.3e} "
            f"(required {s.bound:.3e})"
        )
    finest = family.at(len(family))
    final = float(finest(stream.partial_sum(stream.n_terms) - target))
    payload = {
        "terms": [{"lambda": x.lam, "atom_id": x.atom_id} for x in stream.terms],
        "final_sup_residual": final,
    }
    _atomic_write(out_base + ".terms.json", json.dumps(payload, indent=2) + "\n")
    print(f"{stream.n_terms} terms; final sup residual {final:.3e}")
    print(f"wrote {out_base}.terms.json")
    return 0


_COMMANDS = {
    "flatten": cmd_flatten,
    "telescope": cmd_telescope,
    "stress": cmd_stress,
    "ck-demo": cmd_ck_demo,
    "span-demo": cmd_span_demo,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensorseries",
        description="Convergent series of elementary tensors with certified bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("flatten", "re-represent a tensor with bounded prefixes"),
        ("telescope", "build a certified series from an approximation scheme"),
        ("stress", "permutation/subset probes on a stored representation"),
        ("ck-demo", "built-in uniform series for a vector-valued curve"),
        ("span-demo", "built-in scalar series over a monomial dictionary"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(args)
        return _COMMANDS[args.command](cfg)
    except (construct.CertificateViolationError, construct.SchemeContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except construct.DictionaryBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
