"""Command line entry point: ``verify``, ``solve``, ``plot`` and ``decompose``.

Exit codes: 0 when every check passes, 1 when a check or a solve fails,
2 for usage and configuration errors.  ``CMCB_THREADS`` caps the number of
BLAS/OpenMP threads; it is read before numpy is imported.
"""

from __future__ import annotations

import os
import sys

_threads = os.environ.get("CMCB_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import datetime as _dt  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
from dataclasses import dataclass, field  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SUITES = ("identities", "kernel", "wente", "green", "moments", "corrected-order")


class UsageError(Exception):
    """Bad arguments or configuration; maps to exit code 2."""


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    outputs: list[str] = field(default_factory=list)
    versions: str = ""

    def to_json(self, timestamp: str | None = None) -> str:
        payload = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "outputs": self.outputs,
            "versions": self.versions,
            # outside the determinism contract
            "timestamp": timestamp or _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def versions() -> str:
    import matplotlib
    import scipy

    from . import __version__

    return f"artifact {__version__}; numpy {np.__version__}; scipy {scipy.__version__}; matplotlib {matplotlib.__version__}"


# -- verify ---------------------------------------------------------------------------------

def _suite_moments(args):
    from .balancing import SphereQuadrature, exact_moment, moment_certificate, odd_moment_defect, sphere_moments
    from .records import close_record

    q = SphereQuadrature.product()
    second, fourth = sphere_moments(q)
    recs = [
        close_record("second[1][1] = 4pi/3", second[1, 1], 4 * math.pi / 3, 1e-8),
        close_record("second[0][1] = 0", second[0, 1], 0.0, 1e-8),
        close_record("fourth[1][1][2][2] = 4pi/15", fourth[1, 1, 2, 2], 4 * math.pi / 15, 1e-8),
        close_record("fourth[1][1][1][1] = 4pi/5", fourth[1, 1, 1, 1], 4 * math.pi / 5, 1e-8),
        close_record("all second moments", float(np.abs(second - exact_moment(2)).max()), 0.0, 1e-8),
        close_record("all fourth moments", float(np.abs(fourth - exact_moment(4)).max()), 0.0, 1e-8),
        close_record("moments up to order 6", moment_certificate(q), 0.0, 1e-8),
        close_record("odd moments vanish", odd_moment_defect(q), 0.0, 1e-12),
    ]
    return recs, {"nodes": int(q.nodes.shape[0]), "degree": q.degree}


def _load_model(path: str | None):
    from .curvature import InconsistentCurvature, make_model

    if path is None:
        return make_model("flat")
    spec = _read_json(path)
    if not isinstance(spec, dict) or "kind" not in spec:
        raise UsageError(f"{path}: model file needs a 'kind' key")
    try:
        return make_model(spec["kind"], **spec.get("params", {}))
    except InconsistentCurvature as exc:
        raise UsageError(f"{path}: {exc}") from exc


def _suite_identities(args):
    from .bubble import RationalMap, bubble_energy, omega, omega_jet
    from .curvature import christoffel_expansion, christoffel_from_metric, metric_expansion
    from .curvature import _riemann_symmetry_defect
    from .records import close_record

    model = _load_model(args.model)
    c = model.curvature
    rng = np.random.default_rng(args.seed)
    z = rng.normal(size=(1000, 2)) * 3
    jet = omega_jet(z[:200])
    recs = [
        close_record("|omega| = 1", float(np.abs(np.linalg.norm(omega(z), axis=-1) - 1).max()), 0.0, 1e-12),
        close_record("<omega_x, omega_y> = 0", float(np.abs((jet.wx * jet.wy).sum(-1)).max()), 0.0, 1e-12),
        close_record("|omega_x|^2 = |omega_y|^2",
                     float(np.abs((jet.wx**2).sum(-1) - (jet.wy**2).sum(-1)).max()), 0.0, 1e-12),
        close_record("Riemann symmetries", _riemann_symmetry_defect(c.riem), 0.0, 1e-12),
        close_record("second Bianchi identity", c.second_bianchi_defect(), 0.0, 1e-10),
        close_record("contracted Bianchi |2 divRic - dScal|",
                     float(np.abs(2 * c.divric - c.dscal).max()), 0.0, 1e-10),
    ]
    y = rng.normal(size=3) * 0.1
    gam = christoffel_expansion(c, y, 1.0)
    ref = christoffel_from_metric(lambda p: metric_expansion(c, p)[0], y)
    recs.append(close_record("Christoffel expansion vs metric differences", float(np.abs(gam - ref).max()),
                             0.0, 1e-3 * max(1.0, float(np.abs(c.riem).max()))))
    maps = {1: RationalMap([0, 1], [1]), 2: RationalMap([0, 0, 1], [1, 0.3]), 3: RationalMap([1, 0, 0, 1], [0, 1])}
    for k, r in maps.items():
        e = bubble_energy(r)
        recs.append(close_record(f"energy of degree-{k} bubble = 8 pi k", e, 8 * math.pi * k, 1e-5 * 8 * math.pi * k))
    return recs, {"model": model.to_dict()}


def _suite_kernel(args):
    from .linearized import NoSpectralGap, kernel_dimension
    from .records import CheckRecord, bound_record, close_record

    try:
        ks = kernel_dimension(20.0, 256)
    except NoSpectralGap as exc:
        return [CheckRecord("spectral gap", math.nan, 10.0, math.nan, 0.0, False, str(exc))], {}
    recs = [
        close_record("near-kernel dimension", ks.dimension, 3, 0),
        bound_record("gap ratio >= 10", 10.0, ks.gap),
        bound_record("largest subspace angle", float(np.max(ks.angles)), 5e-2),
    ]
    recs += [bound_record(f"relative error of {k}", v, 5e-2) for k, v in ks.relative_errors.items()]
    return recs, {"singular_values": ks.singular_values.tolist(), "dimension": ks.dimension, "gap": ks.gap}


def _suite_wente(args):
    from .estimates import wente_check, wente_corpus
    from .records import bound_record

    corpus = wente_corpus(50, seed=args.seed if args.seed else 20240531)
    disk = [wente_check(v, "disk-w1").ratio for v in corpus]
    plane = [wente_check(v, "plane-w2").ratio for v in corpus]
    recs = [
        bound_record("max disk ratio <= 1/pi + 0.02", max(disk), 1 / math.pi + 0.02),
        bound_record("max plane ratio <= 2/pi + 0.02", max(plane), 2 / math.pi + 0.02),
    ]
    return recs, {"disk": disk, "plane": plane}


def _suite_green(args):
    from .estimates import green_weight_bound
    from .records import bound_record

    ratios = {}
    for r in (0.0, 1.0, 10.0, 100.0, 1000.0):
        ratios[r] = green_weight_bound((r, 0.0))[1]
    spread = max(ratios.values()) / min(ratios.values())
    return [bound_record("max/min of lhs (1+|z0|)/log(2+|z0|)", spread, 20.0)], {
        "ratios": {str(k): v for k, v in ratios.items()}
    }


def corrected_order_series(L: float = 4.0, n: int = 256, eps_list=(0.08, 0.04), seed: int = 3):
    """Floor-subtracted residuals of the plain and corrected bubble on a random model."""
    from .bubble import SimpleBubble, sample_bubbles
    from .corrected import CorrectedBubble, expanded_residual, sample_corrected
    from .curvature import CurvatureData, random_compliant_dric

    rng = np.random.default_rng(seed)
    A = 0.5 * rng.normal(size=(3, 3))
    c = CurvatureData.from_ricci(A + A.T, random_compliant_dric(rng))
    b = SimpleBubble.identity()
    plain = sample_bubbles([b], L, n)
    flat = expanded_residual(plain, c, 0.0)
    unc, cor = [], []
    for eps in eps_list:
        unc.append((expanded_residual(plain, c, eps) - flat).max)
        cb = CorrectedBubble(b, c, eps)
        cor.append((expanded_residual(sample_corrected(cb, L, n), c, eps) - flat).max)
    return {"eps": list(eps_list), "uncorrected": unc, "corrected": cor, "L": L, "grid_n": n}


def _suite_corrected_order(args):
    from .records import ratio_record

    s = corrected_order_series(seed=args.seed if args.seed else 3)
    ru = s["uncorrected"][0] / s["uncorrected"][1]
    rc = s["corrected"][0] / s["corrected"][1]
    recs = [
        ratio_record("uncorrected eps vs eps/2 ratio ~ 4", ru, 4.0, 0.25, s["uncorrected"][0], s["uncorrected"][1]),
        ratio_record("corrected eps vs eps/2 ratio ~ 8", rc, 8.0, 0.30, s["corrected"][0], s["corrected"][1]),
    ]
    return recs, s


_SUITES = {
    "identities": _suite_identities,
    "kernel": _suite_kernel,
    "wente": _suite_wente,
    "green": _suite_green,
    "moments": _suite_moments,
    "corrected-order": _suite_corrected_order,
}


def cmd_verify(args) -> int:
    from .records import dump_records

    if args.suite not in _SUITES:
        raise UsageError(f"unknown suite '{args.suite}'; expected one of {', '.join(SUITES)}")
    recs, data = _SUITES[args.suite](args)
    report = dump_records(recs, suite=args.suite, seed=args.seed, data=_plain(data))
    _emit(report, args.out)
    return EXIT_OK if all(r.passed for r in recs) else EXIT_FAIL


# -- solve ----------------------------------------------------------------------------------

_SOLVE_KEYS = {
    "mode": str, "metric": dict, "L": (int, float), "grid_n": int, "eps": (int, float), "eps_list": list,
    "projection": str, "newton_tol": (int, float), "newton_max_iter": int, "damping": (int, float), "seed": int,
    "diagnostics": bool,
}


def parse_solve_config(raw) -> dict:
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    for k, v in raw.items():
        if k not in _SOLVE_KEYS:
            raise UsageError(f"unknown config key '{k}'")
        if isinstance(v, bool) and _SOLVE_KEYS[k] is not bool:
            raise UsageError(f"config key '{k}' has the wrong type")
        if not isinstance(v, _SOLVE_KEYS[k]):
            raise UsageError(f"config key '{k}' has the wrong type")
    cfg = {"mode": "solve", "L": 6.0, "grid_n": 129, "projection": "kernel", "newton_tol": 1e-9,
           "newton_max_iter": 20, "damping": 1.0, "seed": 0, "diagnostics": True}
    cfg.update(raw)
    if cfg["mode"] not in ("solve", "drift"):
        raise UsageError("config key 'mode' must be 'solve' or 'drift'")
    if "metric" not in cfg:
        raise UsageError("config key 'metric' is required")
    if "kind" not in cfg["metric"]:
        raise UsageError("config key 'metric.kind' is required")
    if cfg["projection"] not in ("kernel", "translation"):
        raise UsageError("config key 'projection' must be 'kernel' or 'translation'")
    if cfg["mode"] == "solve" and "eps" not in cfg:
        raise UsageError("config key 'eps' is required in solve mode")
    if cfg["mode"] == "drift":
        if "eps_list" not in cfg or not cfg["eps_list"]:
            raise UsageError("config key 'eps_list' is required in drift mode")
        if not all(isinstance(e, (int, float)) and not isinstance(e, bool) for e in cfg["eps_list"]):
            raise UsageError("config key 'eps_list' must hold numbers")
    return cfg


def _metric_from(cfg: dict):
    from .curvature import InconsistentCurvature, make_model

    m = cfg["metric"]
    unknown = set(m) - {"kind", "params"}
    if unknown:
        raise UsageError(f"unknown config key 'metric.{sorted(unknown)[0]}'")
    try:
        return make_model(m["kind"], **m.get("params", {}))
    except InconsistentCurvature as exc:
        raise UsageError(f"config key 'metric': {exc}") from exc


def cmd_solve(args) -> int:
    from .solver import DriftTable, NonConvergence, SolveConfig, drift_experiment, force_projection, newton_solve
    from .solver import DriftRow, ExpansionDomainError, SingularJacobian, default_initial

    cfg = parse_solve_config(_read_json(args.config))
    metric = _metric_from(cfg)
    out_dir = Path(args.out_dir or Path(args.config).with_suffix("").name + "_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, res_path, man_path = out_dir / "results.csv", out_dir / "results.json", out_dir / "manifest.json"
    outputs = [str(csv_path), str(res_path)]
    status = EXIT_OK
    if cfg["mode"] == "drift":
        try:
            table = drift_experiment(metric, cfg["eps_list"], cfg["L"], cfg["grid_n"], cfg["projection"],
                                     newton_tol=cfg["newton_tol"])
        except NonConvergence as exc:
            table, status = exc.partial, EXIT_FAIL
            print(f"error: {exc}", file=sys.stderr)
        except (ExpansionDomainError, SingularJacobian) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
        except ValueError as exc:
            raise UsageError(f"config: {exc}") from exc
    else:
        try:
            scfg = SolveConfig(cfg["L"], cfg["grid_n"], float(cfg["eps"]), metric,
                               newton_tol=cfg["newton_tol"], newton_max_iter=cfg["newton_max_iter"],
                               damping=cfg["damping"])
        except ValueError as exc:
            raise UsageError(f"config: {exc}") from exc
        f0 = default_initial(scfg)
        try:
            force = force_projection(f0, scfg, fields=cfg["projection"])
            sol = newton_solve(scfg, f0, diagnostics=cfg["diagnostics"])
        except (ExpansionDomainError, SingularJacobian) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAIL
        nrm = float(np.linalg.norm(force))
        table = DriftTable([DriftRow(scfg.eps, sol.center, force, force / nrm if nrm else 0 * force,
                                     sol.final_residual, sol.iterations, sol.converged, sol.conformality_defect,
                                     sol.diagnostics.estim_product if sol.diagnostics else math.nan)],
                           cfg["projection"], scfg.to_dict(), sol.converged)
        snap = out_dir / "solution.bin"
        sol.field.save(str(snap))
        outputs += [str(snap), str(snap) + ".json"]
        if not sol.converged:
            status = EXIT_FAIL
            print(f"error: Newton stopped at residual {sol.final_residual:.3g}", file=sys.stderr)
    csv_path.write_text(table.to_csv())
    res_path.write_text(table.manifest())
    outputs.append(str(man_path))
    man = RunManifest("solve", {**cfg, "resolved_metric": metric.to_dict()}, int(cfg["seed"]), outputs, versions())
    man_path.write_text(man.to_json())
    print(csv_path.read_text(), end="")
    return status


# -- plot -------------------------------------------------------------------------------------

def cmd_plot(args) -> int:
    from .plotting import PLOT_KINDS, SchemaMismatch, render_file

    if args.kind not in PLOT_KINDS:
        raise UsageError(f"unknown plot kind '{args.kind}'")
    out = args.out or str(Path(args.results).with_suffix("")) + f"_{args.kind}.svg"
    try:
        render_file(args.results, args.kind, out)
    except (SchemaMismatch, json.JSONDecodeError) as exc:
        if os.path.exists(out):
            os.remove(out)
        raise UsageError(f"{args.results}: {exc}") from exc
    print(out)
    return EXIT_OK


# -- decompose ----------------------------------------------------------------------------------

def cmd_decompose(args) -> int:
    from .decompose import ExtractionError, check_decomposition, energy_quantization_check, extract_bubbles
    from .grid import Field2D

    side = _read_json(args.field + ".json")
    try:
        data = Path(args.field).read_bytes()
        f = Field2D.from_bytes(data, side)
    except (OSError, KeyError, ValueError) as exc:
        raise UsageError(f"{args.field}: {exc}") from exc
    try:
        ens, rep = extract_bubbles(f, defect_threshold=args.threshold)
    except ExtractionError as exc:
        payload = {"error": str(exc), "partial": None if exc.partial is None else exc.partial.to_dict()}
        _emit(json.dumps(_plain(payload), indent=2, sort_keys=True), args.out)
        return EXIT_FAIL
    report = check_decomposition(f, ens)
    try:
        energy_ratio = energy_quantization_check(ens, f)
    except ValueError:
        energy_ratio = math.nan
    payload = {
        "ensemble": ens.to_dict(),
        "report": report.to_dict(),
        "energy_ratio": energy_ratio,
        "weighted_sup_defect": rep.extra["weighted_sup_defect"],
    }
    _emit(json.dumps(_plain(payload), indent=2, sort_keys=True), args.out)
    return EXIT_OK if report.orthogonality_ok else EXIT_FAIL


# -- plumbing ---------------------------------------------------------------------------------

def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else None
    if isinstance(x, np.integer):
        return int(x)
    return x


def _read_json(path: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    print(text)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cmcbubble", description="Bubble analysis toolkit for large-H surfaces.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    v = sub.add_parser("verify", help="run an invariant suite")
    v.add_argument("suite", help=", ".join(SUITES))
    v.add_argument("--model", help="JSON file with a metric model {kind, params} (identities suite)")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", help="also write the JSON report here")
    s = sub.add_parser("solve", help="run a Newton solve or a drift sweep from a JSON config")
    s.add_argument("config")
    s.add_argument("--out-dir")
    pl = sub.add_parser("plot", help="render an SVG from a results file")
    pl.add_argument("results")
    pl.add_argument("--kind", required=True)
    pl.add_argument("--out")
    d = sub.add_parser("decompose", help="extract bubbles from a field snapshot")
    d.add_argument("field", help="raw little-endian doubles; sidecar at <field>.json")
    d.add_argument("--threshold", type=float, default=1e-3)
    d.add_argument("--out")
    return p


_COMMANDS = {"verify": cmd_verify, "solve": cmd_solve, "plot": cmd_plot, "decompose": cmd_decompose}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
