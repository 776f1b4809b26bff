"""Command-line front end.

Exit codes: 0 success, 1 validation failure, 2 numerical degeneracy,
3 I/O or schema error.  Every flag may also be set through an environment
variable ``RBP_<FLAG>`` (``RBP_TOL``, ``RBP_T_MAX``, ``RBP_SEED``, ``RBP_INIT``,
``RBP_CAP``); explicit flags win.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from . import bp, diagnostics, exact, gaussian, hilbert
from .errors import EnumerationCapError, ReciprocalError, SchemaError
from .model import model_from_dict, validate_model

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE, EXIT_IO = 0, 1, 2, 3
ENV_PREFIX = "RBP_"


@dataclass
class RunConfig:
    subcommand: str
    input: str = "-"
    output: str = "-"
    tol: float = bp.DEFAULT_TOL
    t_max: int | None = None
    seed: int | None = None
    init: str = "uniform"
    csv: bool = False
    cap: int = exact.ENUMERATION_CAP
    node: int | None = None
    n_samples: int = 1000
    verb: str | None = None
    check_samples: int = 0

    def problems(self):
        out = []
        if not self.tol > 0:
            out.append("tol must be > 0")
        if self.t_max is not None and self.t_max < 0:
            out.append("t_max must be >= 0")
        if not self.input:
            out.append("input path must be nonempty")
        if self.n_samples < 0:
            out.append("n must be >= 0")
        return out


# -- output helpers -------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, complex):
        return [x.real, x.imag]
    return x


def dumps(doc):
    # repr-based float formatting round-trips every double exactly
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _read_doc(path):
    try:
        text = sys.stdin.read() if path == "-" else open(path, encoding="utf-8").read()
    except OSError as exc:
        raise SchemaError(f"cannot read input: {exc.strerror}", "$") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg} (line {exc.lineno})", "$") from None


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError as exc:
            raise SchemaError(f"cannot write output: {exc.strerror}", "$") from None


def _beliefs_csv(beliefs):
    D = beliefs.shape[1]
    return _csv_text(["node"] + [f"p{a}" for a in range(D)], ([k, *row] for k, row in enumerate(beliefs)))


def _nodes(cfg, model):
    return range(model.num_nodes) if cfg.node is None else [cfg.node % model.num_nodes]


# -- subcommands ------------------------------------------------------------------


def cmd_validate(cfg):
    model = model_from_dict(_read_doc(cfg.input))
    problems = validate_model(model)
    doc = {"valid": not problems, "violations": problems,
           "alphabet_size": model.alphabet_size, "num_nodes": model.num_nodes}
    return (EXIT_OK if not problems else EXIT_INVALID), dumps(doc)


def _load_valid_model(cfg):
    from .model import check_model

    return check_model(model_from_dict(_read_doc(cfg.input)))


def cmd_smooth(cfg):
    model = _load_valid_model(cfg)
    init = bp.init_messages(model, cfg.init, cfg.seed)
    res = bp.bp_run(model, init, tol=cfg.tol, t_max=cfg.t_max)
    beliefs = bp.compute_beliefs(model, res.messages).beliefs
    if cfg.csv:
        return EXIT_OK, _beliefs_csv(beliefs)
    return EXIT_OK, dumps({
        "beliefs": beliefs,
        "converged": res.converged,
        "iterations": res.iterations,
        "trace": res.trace,
        "tol": cfg.tol,
    })


def cmd_exact(cfg):
    model = _load_valid_model(cfg)
    transfer = exact.exact_marginals_transfer(model).beliefs
    doc = {"transfer": transfer}
    code = EXIT_OK
    try:
        brute = exact.exact_marginals_bruteforce(exact.joint_table(model, cap=cfg.cap)).beliefs
        doc["bruteforce"] = brute
        doc["max_abs_diff"] = float(np.max(np.abs(brute - transfer)))
    except EnumerationCapError as exc:
        doc["error"] = {"type": "EnumerationCapError", "message": str(exc)}
        code = EXIT_DEGENERATE
    if cfg.csv:
        return code, _beliefs_csv(transfer)
    return code, dumps(doc)


def cmd_diagnose(cfg):
    model = _load_valid_model(cfg)
    T = bp.loop_transfer_matrices(model)
    nodes = []
    for k in _nodes(cfg, model):
        C = T.forward[k]
        entry = {
            "node": k,
            "spectral": diagnostics.spectral_report(C).to_dict(),
            "stability": diagnostics.stability_report(C).to_dict(),
            "contraction": hilbert.contraction_ratio(C).to_dict(),
            "similarity_residual": T.similarity_residual(k),
        }
        try:
            entry["accuracy"] = diagnostics.accuracy_decomposition(model, k).to_dict()
        except ReciprocalError as exc:
            entry["accuracy"] = {"error": {"type": type(exc).__name__, "message": str(exc)}}
        nodes.append(entry)
    return EXIT_OK, dumps({"alphabet_size": model.alphabet_size, "num_nodes": model.num_nodes, "nodes": nodes})


def cmd_correct(cfg):
    model = _load_valid_model(cfg)
    rows = [(k, diagnostics.binary_correction(model, k)) for k in _nodes(cfg, model)]
    if cfg.csv:
        return EXIT_OK, _csv_text(["node", "p0", "p1"], ([k, *p] for k, p in rows))
    return EXIT_OK, dumps({"corrected": [{"node": k, "posterior": p} for k, p in rows]})


def cmd_compare(cfg):
    model = _load_valid_model(cfg)
    init = bp.init_messages(model, cfg.init, cfg.seed)
    res = bp.bp_run(model, init, tol=cfg.tol, t_max=cfg.t_max)
    b = bp.compute_beliefs(model, res.messages).beliefs
    p = exact.exact_marginals_transfer(model).beliefs
    rows = []
    for k in range(model.num_nodes):
        row = {"node": k, "bp": b[k], "exact": p[k], "bp_vs_exact": float(np.max(np.abs(b[k] - p[k])))}
        try:
            dec = diagnostics.accuracy_decomposition(model, k)
            row["beta"] = dec.beta
            # p - b = (1 - beta)(q - b)
            row["predicted_gap"] = float(abs(1 - dec.beta) * np.max(np.abs(dec.q_residual - dec.belief)))
        except ReciprocalError as exc:
            row["decomposition_error"] = str(exc)
        if model.alphabet_size == 2:
            c = diagnostics.binary_correction(model, k, belief=b[k])
            row["corrected"] = c
            row["corrected_vs_exact"] = float(np.max(np.abs(c - p[k])))
        rows.append(row)
    doc = {"converged": res.converged, "iterations": res.iterations, "nodes": rows}
    doc["max_bp_vs_exact"] = max(r["bp_vs_exact"] for r in rows)
    if model.alphabet_size == 2:
        doc["max_corrected_vs_exact"] = max(r["corrected_vs_exact"] for r in rows)
    return EXIT_OK, dumps(doc)


def _samples_out(cfg, samples, integer):
    if cfg.csv:
        header = [f"x{j}" for j in range(samples.shape[1])]
        if integer:
            return _csv_text(header, samples.tolist())
        return _csv_text(header, samples)
    return dumps({"samples": samples, "seed": cfg.seed})


def cmd_sample(cfg):
    doc = _read_doc(cfg.input)
    if isinstance(doc, list) or (isinstance(doc, dict) and "blocks" in doc):
        blocks = gaussian.SecondOrderBlocks.from_dict(doc)
        return EXIT_OK, _samples_out(cfg, gaussian.sample_gaussian_rp(blocks, cfg.n_samples, cfg.seed), False)
    from .model import check_model

    model = check_model(model_from_dict(doc))
    return EXIT_OK, _samples_out(cfg, exact.sample_joint(model, cfg.n_samples, cfg.seed), True)


def cmd_gauss(cfg):
    blocks = gaussian.SecondOrderBlocks.from_dict(_read_doc(cfg.input))
    verb = cfg.verb
    if verb == "assemble":
        P = gaussian.assemble_precision(blocks)
        return EXIT_OK, dumps({"precision": P, "block_dim": blocks.block_dim})
    if verb == "check":
        rep = gaussian.validate_blocks(blocks, require_pd=True)
        if rep["constraints_ok"]:
            P = gaussian.assemble_precision(blocks)
            L = blocks.num_blocks
            rep["zero_block_pairs"] = sorted(gaussian.ci_pattern(P, blocks.block_dim))
            rep["non_neighbor_pairs"] = sorted(
                (i, j) for i in range(L) for j in range(i + 1, L) if min(j - i, L - (j - i)) > 1
            )
            rep["markov_subclass"] = gaussian.markov_subclass_check(blocks)
            rep["noise_covariance_matches_precision"] = bool(np.array_equal(gaussian.noise_covariance(blocks), P))
            if cfg.check_samples and rep["positive_definite"]:
                X = gaussian.sample_gaussian_rp(blocks, cfg.check_samples, cfg.seed)
                rep["empirical"] = gaussian.empirical_precision_check(X, blocks)
        return (EXIT_OK if rep["well_posed"] else EXIT_INVALID), dumps(rep)
    if verb == "sample":
        X = gaussian.sample_gaussian_rp(blocks, cfg.n_samples, cfg.seed)
        return EXIT_OK, _csv_text([f"x{j}" for j in range(X.shape[1])], X)
    raise SchemaError(f"unknown gauss verb {verb!r}", "$")


COMMANDS = {
    "validate": cmd_validate,
    "smooth": cmd_smooth,
    "exact": cmd_exact,
    "diagnose": cmd_diagnose,
    "correct": cmd_correct,
    "compare": cmd_compare,
    "sample": cmd_sample,
    "gauss": cmd_gauss,
}


def dispatch(cfg: RunConfig) -> int:
    """Run one subcommand, write its artifact, and return the exit status."""
    bad = cfg.problems()
    if bad:
        _write(cfg.output, dumps({"error": {"type": "ConfigError", "message": "; ".join(bad)}}))
        return EXIT_INVALID
    try:
        code, text = COMMANDS[cfg.subcommand](cfg)
    except ReciprocalError as exc:
        body = {"type": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, SchemaError):
            body["path"] = exc.path
        if getattr(exc, "violations", None):
            body["violations"] = exc.violations
        text, code = dumps({"error": body}), exc.exit_code
        print(f"error: {exc}", file=sys.stderr)
    try:
        _write(cfg.output, text)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


def _env(name, cast, default):
    raw = os.environ.get(ENV_PREFIX + name)
    return default if raw is None else cast(raw)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("input", nargs="?", default="-", help="model JSON path, '-' for stdin")
    common.add_argument("-o", "--output", default="-")
    common.add_argument("--tol", type=float, default=None)
    common.add_argument("--t-max", type=int, default=None)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--init", choices=["uniform", "random"], default=None)
    common.add_argument("--csv", action="store_true")
    common.add_argument("--cap", type=int, default=None, help="brute-force enumeration cap")
    common.add_argument("--node", type=int, default=None)
    common.add_argument("-n", "--n-samples", type=int, default=1000)

    parser = argparse.ArgumentParser(prog="reciprocal-bp", description="Loopy belief propagation, exact inference and diagnostics for hidden reciprocal loop models.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "validate": "report model invariant violations",
        "smooth": "parallel loopy BP beliefs and convergence trace",
        "exact": "exact marginals (transfer matrix and brute force)",
        "diagnose": "spectral, stability, contraction and accuracy report",
        "correct": "binary-corrected posteriors",
        "compare": "BP vs exact vs corrected, per node",
        "sample": "exact discrete samples, or Gaussian samples for a blocks file",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    g = sub.add_parser("gauss", help="Gaussian second-order model: assemble | check | sample")
    g.add_argument("verb", choices=["assemble", "check", "sample"])
    for a in common._actions:
        g._add_action(a)
    g.add_argument("--check-samples", type=int, default=0,
                   help="with 'check', also test the empirical precision of this many samples")
    return parser


def parse_config(argv=None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    return RunConfig(
        subcommand=ns.subcommand,
        input=ns.input,
        output=ns.output,
        tol=ns.tol if ns.tol is not None else _env("TOL", float, bp.DEFAULT_TOL),
        t_max=ns.t_max if ns.t_max is not None else _env("T_MAX", int, None),
        seed=ns.seed if ns.seed is not None else _env("SEED", int, None),
        init=ns.init or _env("INIT", str, "uniform"),
        csv=ns.csv,
        cap=ns.cap if ns.cap is not None else _env("CAP", int, exact.ENUMERATION_CAP),
        node=ns.node,
        n_samples=ns.n_samples,
        verb=getattr(ns, "verb", None),
        check_samples=getattr(ns, "check_samples", 0),
    )


def main(argv=None):
    try:
        cfg = parse_config(argv)
    except ValueError as exc:  # bad env override
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return dispatch(cfg)


if __name__ == "__main__":
    sys.exit(main())
