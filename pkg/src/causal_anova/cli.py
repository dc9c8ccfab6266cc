"""Command line entry points.

Subcommands: estimate (point estimates and intervals from a CSV), test
(randomization test for a factor group), screen (factor screen plus
surviving pairwise interactions), simulate (repeated-trial studies on the
built-in synthetic processes), rerun (re-execute the command recorded in an
output's manifest).

Every output embeds a manifest carrying the tool name, version and the exact
argument vector, so any result can be reproduced with `rerun`. Exit codes:
0 success, 2 bad input data, 3 degenerate outcome variance, 4 other
numerical failure, 5 bad configuration or usage.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys

from . import __version__
from .core import EstimandSpec, interaction, total
from .errors import (
    CausalAnovaError,
    ConfigError,
    DegenerateVariance,
    InputError,
    NumericalError,
)
from .estimators import METHODS, estimate_many
from .inference import (
    RandomizationConfig,
    hierarchical_screen,
    randomization_test,
)
from .io import load_dataset
from .nuisance import LearnerConfig, make_fold_plan
from .simulation import (
    NormalFactor,
    StudyCell,
    UniformFactor,
    additive_gaussian_dgp,
    coverage_grid_cells,
    cubic_interaction_dgp,
    custom_polynomial_dgp,
    run_study,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage problems map to exit code 5
        raise ConfigError(message)


# ---------------------------------------------------------------------------
# Shared argument plumbing


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--schema", help="JSON schema naming outcome and factor kinds")
    p.add_argument("--outcome", help="outcome column name (required without --schema)")


def _add_learner_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learner", default="auto", choices=("auto", "cellmean", "polyls"))
    p.add_argument("--degree", type=int, default=3, help="polynomial degree per factor")
    p.add_argument("--interaction-order", type=int, default=2)
    p.add_argument("--ridge", type=float, default=1e-8)
    p.add_argument("--mc-draws", type=int, default=2000)
    p.add_argument("--mc-seed", type=int, default=0)


def _add_fold_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--folds", type=int, default=2)
    p.add_argument("--fold-seed", type=int, default=0)


def _add_out_arg(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", default="-", help="output path, '-' for stdout")


def _learner_from_args(args) -> LearnerConfig:
    return LearnerConfig(
        learner=args.learner,
        degree=args.degree,
        interaction_order=args.interaction_order,
        ridge=args.ridge,
        mc_draws=args.mc_draws,
        mc_seed=args.mc_seed,
    )


def _resolve_ref(ref: str, names) -> int:
    ref = ref.strip()
    if ref in names:
        return list(names).index(ref)
    try:
        pos = int(ref)
    except ValueError:
        raise InputError(
            f"unknown factor {ref!r}; available: {', '.join(names)}"
        ) from None
    if not 1 <= pos <= len(names):
        raise InputError(f"factor position {pos} out of range 1..{len(names)}")
    return pos - 1


def parse_estimand(text: str, names) -> EstimandSpec:
    """'total:W1,W3' or 'interaction:1,3'; references are names or 1-based."""
    kind, sep, rest = text.partition(":")
    kind = kind.strip()
    if not sep:
        raise ConfigError(f"estimand {text!r} needs the form kind:factors")
    refs = [r for r in rest.split(",") if r.strip()]
    if kind == "total":
        if not refs:
            raise ConfigError(f"estimand {text!r} names no factors")
        idx = [_resolve_ref(r, names) for r in refs]
        if len(set(idx)) != len(idx):
            raise ConfigError(f"estimand {text!r} repeats a factor")
        return total(*idx)
    if kind == "interaction":
        if len(refs) != 2:
            raise ConfigError(f"estimand {text!r} must name exactly two factors")
        a, b = (_resolve_ref(r, names) for r in refs)
        if a == b:
            raise ConfigError(f"estimand {text!r} repeats a factor")
        return interaction(a, b)
    raise ConfigError(f"unknown estimand kind {kind!r} (use total or interaction)")


def _parse_methods(text: str, allowed=METHODS) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    if not methods:
        raise ConfigError("no methods given")
    for m in methods:
        if m not in allowed:
            raise ConfigError(f"unknown method {m!r} (use {', '.join(allowed)})")
    return methods


def _manifest(command: str, argv: list[str]) -> dict:
    return {
        "tool": "causal-anova",
        "version": __version__,
        "command": command,
        "argv": list(argv),
    }


def _write_text(path: str, text: str) -> None:
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _set_to_json(cs) -> dict:
    high = None if math.isinf(cs.high) else cs.high
    return {"kind": cs.kind, "low": cs.low, "high": high}


# ---------------------------------------------------------------------------
# Subcommands


def _cmd_estimate(args, argv) -> int:
    data = load_dataset(args.data, args.schema, args.outcome)
    names = data.factor_names
    specs = [parse_estimand(s, names) for s in args.estimand]
    methods = _parse_methods(args.methods)
    plan = make_fold_plan(data.n, args.folds, args.fold_seed)
    learner = _learner_from_args(args)
    results = estimate_many(data, plan, learner, specs, methods, args.alpha)
    payload = {
        "manifest": _manifest("estimate", argv),
        "results": [
            results[(spec, m)][0].to_dict() for spec in specs for m in methods
        ],
    }
    _write_text(args.out, json.dumps(payload, indent=2) + "\n")
    return 0


def _cmd_test(args, argv) -> int:
    data = load_dataset(args.data, args.schema, args.outcome)
    subset = frozenset(_resolve_ref(r, data.factor_names) for r in args.factors.split(","))
    config = RandomizationConfig(
        num_permutations=args.permutations,
        statistic=args.statistic,
        num_folds=args.folds,
        fold_seed=args.fold_seed,
        seed=args.seed,
        learner=_learner_from_args(args),
    )
    res = randomization_test(data, subset, config)
    payload = {
        "manifest": _manifest("test", argv),
        "test": {
            "factors": [data.factor_names[k] for k in sorted(res.subset)],
            "p_value": res.p_value,
            "observed_stat": res.observed_stat,
            "num_permutations": res.num_permutations,
            "statistic": res.statistic,
            "permuted_stats": list(res.permuted_stats),
        },
    }
    if args.alpha is not None:
        payload["test"]["alpha"] = args.alpha
        payload["test"]["reject"] = res.p_value <= args.alpha
    _write_text(args.out, json.dumps(payload, indent=2) + "\n")
    return 0


def _screen_csv_lines(res) -> list[str]:
    # interaction targets carry commas, so rows go through a CSV writer
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow("target,kind,estimate,se,ci_lo,ci_hi,p_value,decision".split(","))
    for row in res.rows:
        cs = row.confidence_set
        writer.writerow(
            [
                row.target,
                row.kind,
                _csv_num(row.estimate),
                _csv_num(row.std_error),
                _csv_num(cs.low),
                _csv_num(cs.high),
                _csv_num(row.p_value),
                row.decision,
            ]
        )
    return buf.getvalue().splitlines()


def _csv_num(value) -> str:
    if value is None:
        return ""
    return repr(float(value))


def _cmd_screen(args, argv) -> int:
    data = load_dataset(args.data, args.schema, args.outcome)
    config = RandomizationConfig(
        num_permutations=args.permutations,
        statistic=args.statistic,
        num_folds=args.folds,
        fold_seed=args.fold_seed,
        seed=args.seed,
        learner=_learner_from_args(args),
    )
    res = hierarchical_screen(data, args.alpha, config, args.method, args.fallback)
    payload = {
        "manifest": _manifest("screen", argv),
        "alpha": res.alpha,
        "rows": [
            {
                "target": row.target,
                "kind": row.kind,
                "decision": row.decision,
                "confidence_set": _set_to_json(row.confidence_set),
                "p_value": row.p_value,
                "estimate": row.estimate,
                "std_error": row.std_error,
            }
            for row in res.rows
        ],
        "trace": list(res.trace),
    }
    _write_text(args.out, json.dumps(payload, indent=2) + "\n")
    if args.csv_out is not None:
        lines = ["# manifest: " + json.dumps(_manifest("screen", argv))]
        lines.extend(_screen_csv_lines(res))
        _write_text(args.csv_out, "\n".join(lines) + "\n")
    return 0


def _default_estimands(num_factors: int) -> tuple[EstimandSpec, ...]:
    singles = [total(k) for k in range(num_factors)]
    pairs = [
        interaction(k, j) for k in range(num_factors) for j in range(k + 1, num_factors)
    ]
    return tuple(singles + pairs)


def _grid_dgp(entry):
    if isinstance(entry, str):
        if entry == "cubic_interaction":
            return cubic_interaction_dgp()
        if entry == "additive_gaussian":
            return additive_gaussian_dgp()
        raise InputError(f"grid file: unknown dgp {entry!r}")
    if not isinstance(entry, dict):
        raise InputError("grid file: dgp must be a name or an object")
    if set(entry) - {"name", "sigma", "noise_sd", "noise_variance", "factors", "terms"}:
        raise InputError(f"grid file: unknown dgp keys {sorted(set(entry) - {'name', 'sigma', 'noise_sd', 'noise_variance', 'factors', 'terms'})}")
    name = entry.get("name", "custom")
    if name == "cubic_interaction" and "factors" not in entry:
        kwargs = {}
        if "sigma" in entry:
            kwargs["sigma"] = float(entry["sigma"])
        if "noise_variance" in entry:
            kwargs["noise_sd"] = math.sqrt(float(entry["noise_variance"]))
        elif "noise_sd" in entry:
            kwargs["noise_sd"] = float(entry["noise_sd"])
        return cubic_interaction_dgp(**kwargs)
    if name == "additive_gaussian" and "factors" not in entry:
        return additive_gaussian_dgp()
    factors = []
    for f in entry.get("factors", ()):
        dist = f.get("dist")
        if dist == "uniform":
            factors.append(UniformFactor(float(f.get("low", -1.0)), float(f.get("high", 1.0))))
        elif dist == "normal":
            factors.append(NormalFactor(float(f.get("mean", 0.0)), float(f.get("sd", 1.0))))
        else:
            raise InputError(f"grid file: unknown factor dist {dist!r}")
    terms = [(float(c), tuple(int(e) for e in expo)) for c, expo in entry.get("terms", ())]
    try:
        return custom_polynomial_dgp(
            factors,
            terms,
            noise_sd=entry.get("noise_sd"),
            noise_variance=entry.get("noise_variance"),
            name=name,
        )
    except ConfigError as exc:
        raise InputError(f"grid file: {exc}") from exc


def _cells_from_grid(path: str) -> list[StudyCell]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("cells"), list) or not doc["cells"]:
        raise InputError(f"{path}: grid file needs a non-empty 'cells' list")
    allowed = {"dgp", "n", "trials", "methods", "estimands", "alpha", "folds", "learner"}
    cells = []
    for i, cell in enumerate(doc["cells"]):
        if not isinstance(cell, dict):
            raise InputError(f"{path}: cell {i} is not an object")
        unknown = set(cell) - allowed
        if unknown:
            raise InputError(f"{path}: cell {i} has unknown keys {sorted(unknown)}")
        dgp = _grid_dgp(cell.get("dgp", "cubic_interaction"))
        names = dgp.factor_names()
        estimands = tuple(
            parse_estimand(s, names) for s in cell.get("estimands", ())
        ) or _default_estimands(dgp.num_factors)
        learner_entry = cell.get("learner", "true")
        if learner_entry == "true":
            learner = None
        elif isinstance(learner_entry, dict):
            learner = LearnerConfig(**learner_entry)
        else:
            raise InputError(f"{path}: cell {i} learner must be 'true' or an object")
        try:
            cells.append(
                StudyCell(
                    dgp=dgp,
                    n=int(cell.get("n", 1000)),
                    trials=int(cell.get("trials", 100)),
                    methods=tuple(cell.get("methods", ("if", "eif"))),
                    estimands=estimands,
                    alpha=float(cell.get("alpha", 0.05)),
                    num_folds=int(cell.get("folds", 2)),
                    learner=learner,
                )
            )
        except TypeError as exc:
            raise InputError(f"{path}: cell {i}: {exc}") from exc
    return cells


def _cmd_simulate(args, argv) -> int:
    methods = tuple(_parse_methods(args.methods))
    if args.grid is not None:
        if args.preset is not None or args.dgp != "cubic_interaction":
            raise ConfigError("--grid replaces --preset and --dgp")
        cells = _cells_from_grid(args.grid)
    elif args.preset == "coverage":
        cells = coverage_grid_cells(
            sigma=args.sigma,
            n_grid=tuple(args.n) if args.n else (250, 500, 1000, 2000),
            trials=args.trials,
            methods=methods,
            alpha=args.alpha,
        )
    else:
        if args.dgp == "cubic_interaction":
            dgp = cubic_interaction_dgp(sigma=args.sigma, noise_sd=args.noise_sd)
        elif args.dgp == "additive_gaussian":
            dgp = additive_gaussian_dgp()
        else:
            raise ConfigError(f"unknown dgp {args.dgp!r}")
        names = dgp.factor_names()
        if args.estimand:
            estimands = tuple(parse_estimand(s, names) for s in args.estimand)
        else:
            estimands = _default_estimands(dgp.num_factors)
        learner = None if args.learner == "true" else _learner_from_args(args)
        cells = [
            StudyCell(
                dgp=dgp,
                n=n,
                trials=args.trials,
                methods=methods,
                estimands=estimands,
                alpha=args.alpha,
                num_folds=args.folds,
                learner=learner,
            )
            for n in (args.n or [1000])
        ]
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    result = run_study(cells, master_seed=args.master_seed, workers=workers)
    lines = ["# manifest: " + json.dumps(_manifest("simulate", argv))]
    lines.extend(result.to_csv_lines(timing=args.timing))
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_rerun(args, argv) -> int:
    try:
        with open(args.manifest) as fh:
            first = fh.readline()
            if first.startswith("# manifest:"):
                manifest = json.loads(first[len("# manifest:") :])
            else:
                fh.seek(0)
                obj = json.load(fh)
                manifest = obj.get("manifest", obj)
    except OSError as exc:
        raise InputError(f"cannot read {args.manifest}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.manifest}: invalid manifest ({exc})") from exc
    if manifest.get("tool") != "causal-anova":
        raise InputError(f"{args.manifest}: not a causal-anova manifest")
    inner = manifest.get("argv")
    if not isinstance(inner, list) or not inner:
        raise InputError(f"{args.manifest}: manifest has no argument vector")
    if inner[0] == "rerun":
        raise InputError("refusing to rerun a rerun")
    if args.out is not None:
        inner = list(inner)
        if "--out" in inner:
            inner[inner.index("--out") + 1] = args.out
        else:
            inner.extend(["--out", args.out])
    return _dispatch(inner)


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="causal-anova", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"causal-anova {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="estimate explained-variability shares")
    _add_data_args(p_est)
    p_est.add_argument(
        "--estimand",
        action="append",
        required=True,
        help="total:REFS or interaction:REF,REF (name or 1-based position); repeatable",
    )
    p_est.add_argument("--methods", default="if", help="comma list of plugin,if,eif")
    p_est.add_argument("--alpha", type=float, default=0.05)
    _add_fold_args(p_est)
    _add_learner_args(p_est)
    _add_out_arg(p_est)
    p_est.set_defaults(func=_cmd_estimate)

    p_test = sub.add_parser("test", help="randomization test for a factor group")
    _add_data_args(p_test)
    p_test.add_argument("--factors", required=True, help="comma list of factor refs")
    p_test.add_argument("--permutations", type=int, default=999)
    p_test.add_argument("--statistic", default="plugin", choices=("plugin", "if"))
    p_test.add_argument("--seed", type=int, default=0, help="permutation stream seed")
    p_test.add_argument("--alpha", type=float, default=None)
    _add_fold_args(p_test)
    _add_learner_args(p_test)
    _add_out_arg(p_test)
    p_test.set_defaults(func=_cmd_test)

    p_scr = sub.add_parser("screen", help="factor screen plus surviving interactions")
    _add_data_args(p_scr)
    p_scr.add_argument("--alpha", type=float, default=0.05)
    p_scr.add_argument("--permutations", type=int, default=999)
    p_scr.add_argument("--statistic", default="plugin", choices=("plugin", "if"))
    p_scr.add_argument("--seed", type=int, default=0)
    p_scr.add_argument("--method", default="if", choices=("if", "eif"))
    p_scr.add_argument("--fallback", default="point_zero", choices=("point_zero", "half_line"))
    p_scr.add_argument("--csv-out", default=None, help="also write the decision table as CSV")
    _add_fold_args(p_scr)
    _add_learner_args(p_scr)
    _add_out_arg(p_scr)
    p_scr.set_defaults(func=_cmd_screen)

    p_sim = sub.add_parser("simulate", help="repeated-trial study on a synthetic process")
    p_sim.add_argument("--preset", choices=("coverage",), help="built-in study grid")
    p_sim.add_argument("--grid", default=None, help="JSON study grid file (replaces --preset/--dgp)")
    p_sim.add_argument(
        "--dgp",
        default="cubic_interaction",
        choices=("cubic_interaction", "additive_gaussian"),
    )
    p_sim.add_argument("--sigma", type=float, default=1.0)
    p_sim.add_argument("--noise-sd", type=float, default=math.sqrt(0.5))
    p_sim.add_argument("--n", type=int, nargs="+", help="sample sizes, one cell each")
    p_sim.add_argument("--trials", type=int, default=100)
    p_sim.add_argument("--methods", default="if,eif")
    p_sim.add_argument("--estimand", action="append", help="repeatable; default totals and pairs")
    p_sim.add_argument("--alpha", type=float, default=0.05)
    p_sim.add_argument(
        "--learner",
        default="true",
        choices=("true", "auto", "cellmean", "polyls"),
        help="'true' injects the exact nuisances of the process",
    )
    p_sim.add_argument("--degree", type=int, default=3)
    p_sim.add_argument("--interaction-order", type=int, default=2)
    p_sim.add_argument("--ridge", type=float, default=1e-8)
    p_sim.add_argument("--mc-draws", type=int, default=2000)
    p_sim.add_argument("--mc-seed", type=int, default=0)
    p_sim.add_argument("--folds", type=int, default=2)
    p_sim.add_argument("--master-seed", type=int, default=0)
    p_sim.add_argument("--workers", type=int, default=None,
                       help="parallel trial workers (default: all cores)")
    p_sim.add_argument("--timing", action="store_true", help="fill the seconds column")
    _add_out_arg(p_sim)
    p_sim.set_defaults(func=_cmd_simulate)

    p_rer = sub.add_parser("rerun", help="re-execute the command in an output manifest")
    p_rer.add_argument("--manifest", required=True, help="JSON output or manifest-headed CSV")
    p_rer.add_argument("--out", default=None, help="override the original output path")
    p_rer.set_defaults(func=_cmd_rerun)

    return parser


def _dispatch(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args, argv)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        return _dispatch(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DegenerateVariance as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except CausalAnovaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
