"""Command-line front end.

    rotmarg fit data.csv --response y --backend amp --out-dir out/
    rotmarg oracle data.csv --response y --out-dir out/
    rotmarg simulate --preset fig1 --out-dir out/

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
Result files are byte-identical for identical inputs, flags and seed,
whatever ``--threads`` is; wall-clock timing goes to a separate timing.json.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np

from rotmarg import __version__
from rotmarg.amp import AmpConfig
from rotmarg.bcr import BcrConfig
from rotmarg.core import Dataset, SpikeSlabPrior, standardize
from rotmarg.exact import MAX_EXACT_P, exact_inclusion_probs
from rotmarg.marginals import fit_marginals
from rotmarg.sim import ConfigError, SimConfig, run_study

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
RESULT_COLUMNS = ("feature", "lambda_j", "m_j", "psi_j", "converged", "backend")
PRESETS = ("fig1", "fig23")

log = logging.getLogger("rotmarg")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_csv(path, response=None):
    """Read a headed numeric CSV into ``(y, X, feature_names)``.

    ``response`` is a column name or a 0-based index; default is the first
    column.  Empty, non-numeric or non-finite cells are rejected.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8") from exc
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if response is None:
        ridx = 0
    elif response in header:
        ridx = header.index(response)
    else:
        try:
            ridx = int(response)
        except ValueError:
            raise DataError(f"response column {response!r} not found in header") from None
        if not 0 <= ridx < len(header):
            raise DataError(f"response index {ridx} out of range for {len(header)} columns")
    if len(header) < 2:
        raise UsageError("the input has no feature columns besides the response")
    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, found {len(row)}")
        for k, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"row {i}, column {header[k]!r}: non-numeric value {cell!r}") from None
            if not np.isfinite(v):
                raise DataError(f"row {i}, column {header[k]!r}: missing or non-finite value {cell!r}")
            values[i - 2, k] = v
    if values.shape[0] < 2:
        raise DataError("need at least two data rows")
    features = [h for k, h in enumerate(header) if k != ridx]
    return values[:, ridx], np.delete(values, ridx, axis=1), features


def _sha256_file(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_digest(command, config, inputs) -> str:
    blob = json.dumps({"command": command, "config": config, "inputs": inputs}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def verify_manifest(path) -> bool:
    """Recompute the digest of a manifest.json and compare with the stored one."""
    m = json.loads(Path(path).read_text())
    return config_digest(m["command"], m["config"], m["inputs"]) == m["digest"]


def _write_manifest(out_dir, command, config, inputs, outputs, seed):
    digest = config_digest(command, config, inputs)
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "seed": seed,
        "digest": digest,
        "outputs": sorted(outputs),
        "version": __version__,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return digest


def _write_timing(out_dir, started, wall):
    (out_dir / "timing.json").write_text(
        json.dumps({"started_unix": started, "wall_clock_seconds": wall}, indent=1) + "\n"
    )


def _result_csv(digest, rows):
    buf = io.StringIO()
    buf.write(f"# manifest_digest={digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def _load_data(args):
    y, X, features = read_csv(args.input, args.response)
    data = Dataset.from_arrays(y, X)
    if not args.no_standardize:
        try:
            data = standardize(data)
        except ValueError as exc:
            raise DataError(str(exc)) from exc
    inputs = {"file": Path(args.input).name, "sha256": _sha256_file(args.input), "response": args.response}
    return data, features, inputs


def _prior_from_args(args):
    sigma2 = 0.5 if args.sigma2 is None else args.sigma2
    psi = 10.0 * sigma2 if args.psi is None else args.psi
    try:
        return SpikeSlabPrior(args.lam, psi, sigma2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_fit(args) -> int:
    started = time.time()
    data, features, inputs = _load_data(args)
    prior = _prior_from_args(args)
    try:
        if args.backend == "bcr":
            cfg = BcrConfig(kappa=args.kappa, m=args.m, K=args.K, seed=args.seed,
                            full_mixture_variance=args.full_mixture_variance)
        else:
            cfg = AmpConfig(max_iter=args.max_iter, damping=args.damping, seed=args.seed,
                            variant=args.amp_variant, tune_hyperparams=args.tune)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    tuned, results = fit_marginals(data, prior, args.backend, cfg, tune=args.tune, threads=args.threads)
    config = {
        "backend": args.backend,
        "prior": {"lam": prior.lam, "psi": prior.psi, "sigma2": prior.sigma2},
        "tuned_prior": {"lam": tuned.lam, "psi": tuned.psi, "sigma2": tuned.sigma2},
        "tune": args.tune,
        "standardize": not args.no_standardize,
        "backend_config": _config_dict(cfg),
    }
    rows = [(features[r.index_j], r.inclusion_prob, r.slab_mean, r.slab_var, r.converged, args.backend) for r in results]
    return _finish_table(args, "fit", config, inputs, rows, started,
                         failed=any(not np.isfinite(r.inclusion_prob) for r in results))


def cmd_oracle(args) -> int:
    started = time.time()
    data, features, inputs = _load_data(args)
    if data.p > MAX_EXACT_P:
        raise UsageError(
            f"p={data.p} exceeds the exact-enumeration cap of {MAX_EXACT_P}; use 'rotmarg fit' instead"
        )
    prior = _prior_from_args(args)
    probs = exact_inclusion_probs(data, prior)
    config = {
        "backend": "exact",
        "prior": {"lam": prior.lam, "psi": prior.psi, "sigma2": prior.sigma2},
        "standardize": not args.no_standardize,
    }
    nan = float("nan")
    rows = [(features[j], float(probs[j]), nan, nan, True, "exact") for j in range(data.p)]
    return _finish_table(args, "oracle", config, inputs, rows, started, failed=not np.all(np.isfinite(probs)))


def _finish_table(args, command, config, inputs, rows, started, failed):
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = _write_manifest(out_dir, command, config, inputs, ["inclusion_probs.csv"], args.seed)
    (out_dir / "inclusion_probs.csv").write_text(_result_csv(digest, rows))
    _write_timing(out_dir, started, time.time() - started)
    return EXIT_NUMERICAL if failed else EXIT_OK


def _config_dict(cfg):
    return asdict(cfg)


def load_sim_config(args) -> SimConfig:
    if (args.config is None) == (args.preset is None):
        raise UsageError("give exactly one of --config or --preset")
    if args.preset is not None:
        text = resources.files("rotmarg").joinpath("presets", f"{args.preset}.json").read_text()
    else:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError("config must be a JSON object")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.replicates is not None:
        raw["replicates"] = args.replicates
    try:
        return SimConfig.from_dict(raw)
    except (ConfigError, TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def cmd_simulate(args) -> int:
    started = time.time()
    config = load_sim_config(args)
    result = run_study(config, threads=args.threads)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"result.json": None, "summary.csv": result.summary_csv()}
    if result.boxes:
        outputs["boxes.csv"] = result.boxes_csv()
    digest = _write_manifest(out_dir, "simulate", config.to_dict(), {}, list(outputs), config.seed)
    payload = json.loads(result.to_json())
    payload["manifest_digest"] = digest
    outputs["result.json"] = json.dumps(payload, sort_keys=True, indent=1) + "\n"
    for name, text in outputs.items():
        if name.endswith(".csv"):
            text = f"# manifest_digest={digest}\n" + text
        (out_dir / name).write_text(text)
    _write_timing(out_dir, started, time.time() - started)
    print(result.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rotmarg", description="Approximate spike-and-slab marginal inclusion probabilities.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(p):
        p.add_argument("input", help="CSV file with a header row")
        p.add_argument("--response", default=None, help="response column name or 0-based index (default: first)")
        p.add_argument("--lambda", dest="lam", type=float, default=0.1, help="prior inclusion probability")
        p.add_argument("--psi", type=float, default=None, help="slab variance (default 10 * sigma2)")
        p.add_argument("--sigma2", type=float, default=None, help="noise variance (default 0.5)")
        p.add_argument("--no-standardize", action="store_true")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out-dir", default=".")

    fit = sub.add_parser("fit", help="approximate inclusion probabilities with BCR or AMP")
    data_args(fit)
    fit.add_argument("--backend", choices=("bcr", "amp"), default="amp")
    fit.add_argument("--tune", action="store_true", help="estimate lambda (and sigma2) from the data")
    fit.add_argument("--m", type=int, default=None, help="BCR projection dimension")
    fit.add_argument("--K", type=int, default=10, help="number of BCR projections")
    fit.add_argument("--kappa", type=float, default=None, help="BCR prior variance (default psi)")
    fit.add_argument("--full-mixture-variance", action="store_true")
    fit.add_argument("--max-iter", type=int, default=200)
    fit.add_argument("--damping", type=float, default=0.5)
    fit.add_argument("--amp-variant", choices=("vamp", "amp", "serial"), default="vamp")
    fit.set_defaults(func=cmd_fit)

    oracle = sub.add_parser("oracle", help="exact inclusion probabilities by enumeration (p <= 20)")
    data_args(oracle)
    oracle.set_defaults(func=cmd_oracle)

    sim = sub.add_parser("simulate", help="run a simulation study")
    sim.add_argument("--config", default=None, help="JSON file with SimConfig keys")
    sim.add_argument("--preset", choices=PRESETS, default=None)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--replicates", type=int, default=None)
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--out-dir", default=".")
    sim.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rotmarg: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"rotmarg: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (np.linalg.LinAlgError, FloatingPointError, RuntimeError) as exc:
        print(f"rotmarg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
