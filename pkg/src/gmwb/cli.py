"""Command line entry point.

``gmwb run`` prices a configuration and appends rows to ``results.csv`` in the
output directory, with a JSON sidecar per configuration fingerprint.  With
``--server URL`` the request is posted to a running service instead of being
executed in-process; both paths share the same request/response schema.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, build_config
from .estimators import EstimatorError
from .lsmc import ALGORITHMS, SolverError
from .service.schemas import CSV_COLUMNS, FeeRequest, FeeResponse, PriceResponse, VerifyResponse
from .verify import SUITES

log = logging.getLogger("gmwb")


def _add_experiment_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML experiment file")
    p.add_argument("--preset", choices=("table1", "table2", "table3", "custom"))
    p.add_argument("--paths", type=int, help="trajectories per run (M)")
    p.add_argument("--runs", type=int, help="independent runs")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float, help="asset volatility")
    p.add_argument("--alpha", type=float, help="annual fee")
    p.add_argument("--algo", choices=ALGORITHMS)
    p.add_argument("--regressor", choices=("ols", "mlp"))
    p.add_argument("--rate-mode", choices=("constant", "vasicek"))
    p.add_argument("--lower-mode", choices=("fresh", "in_sample"))
    p.add_argument("--grid", type=int, help="control grid size")
    p.add_argument("--epochs", type=int, help="network training epochs")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output directory (default: $GMWB_OUTPUT_DIR or ./results)")
    p.add_argument("--server", help="post to a running service at this base URL")


def _overrides(ns) -> dict:
    o: dict = {}

    def put(section, key, value):
        if value is not None:
            o.setdefault(section, {})[key] = value

    put("solver", "paths", ns.paths)
    put("solver", "algorithm", ns.algo)
    put("solver", "regressor", ns.regressor)
    put("solver", "grid_size", ns.grid)
    if ns.epochs is not None:
        o.setdefault("solver", {})["train"] = {"epochs": ns.epochs}
    put("estimator", "runs", ns.runs)
    put("estimator", "seed", ns.seed)
    put("estimator", "lower_mode", ns.lower_mode)
    put("model", "sigma_s", ns.sigma)
    put("model", "rate_mode", ns.rate_mode)
    put("contract", "fee", ns.alpha)
    put("output", "dir", ns.out)
    if ns.threads is not None:
        o["threads"] = ns.threads
    return o


def _post(server: str, route: str, body: dict, timeout: float | None = None) -> dict:
    import httpx

    r = httpx.post(server.rstrip("/") + route, json=body, timeout=timeout)
    if r.status_code >= 400:
        try:
            detail = r.json()
        except ValueError:
            detail = {"detail": r.text}
        raise ConfigError(f"server returned {r.status_code}: {detail.get('detail')}",
                          field=detail.get("field"))
    return r.json()


def _setup_logging(out_dir: Path | None, verbose: bool):
    handlers: list = [logging.StreamHandler(sys.stderr)]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(out_dir / "gmwb.log"))
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, handlers=handlers,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    logging.getLogger("gmwb").setLevel(logging.INFO)


def write_results(resp: PriceResponse, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "results.csv"
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(CSV_COLUMNS)
        for row in resp.rows:
            d = row.model_dump()
            w.writerow(["" if d[c] is None else d[c] for c in CSV_COLUMNS])
    sidecar = out_dir / f"{resp.rows[0].fingerprint}.json"
    sidecar.write_text(json.dumps(resp.model_dump(mode="json"), indent=2))
    return path


def cmd_run(ns) -> int:
    cfg = build_config(ns.preset, ns.config, _overrides(ns))
    out_dir = cfg.output_dir()
    _setup_logging(out_dir, ns.verbose)
    if ns.server:
        resp = PriceResponse.model_validate(_post(ns.server, "/price",
                                                  cfg.model_dump(mode="json")))
    else:
        from .service import handlers
        resp = handlers.price(cfg)
    path = write_results(resp, out_dir)
    for row in resp.rows:
        se = "n/a" if row.se is None else f"{row.se:.5f}"
        print(f"{row.kind:5s} ({row.mode}) mean={row.mean:.5f} se={se} runs={row.runs} "
              f"M={row.n_paths} [{row.fingerprint}]")
    print(f"results appended to {path}")
    return 0


def cmd_fee(ns) -> int:
    cfg = build_config(ns.preset, ns.config, _overrides(ns))
    _setup_logging(None, ns.verbose)
    req = FeeRequest(config=cfg, tolerance=ns.tolerance, bracket=(ns.lo, ns.hi))
    if ns.server:
        resp = FeeResponse.model_validate(_post(ns.server, "/fair-fee", req.model_dump(mode="json")))
    else:
        from .service import handlers
        resp = handlers.fair_fee(req)
    print(f"alpha* = {resp.alpha_star:.6f}  |V0 - w0| = {resp.residual:.2e}  "
          f"({resp.iterations} bisection steps)")
    return 0


def cmd_verify(ns) -> int:
    _setup_logging(None, ns.verbose)
    if ns.server:
        resp = VerifyResponse.model_validate(_post(ns.server, f"/verify/{ns.suite}", {}))
        for c in resp.checks:
            print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.measured} | target {c.target}")
    else:
        from .service import handlers
        resp = handlers.verify(ns.suite, echo=print)
    print(f"suite {ns.suite}: {'passed' if resp.passed else 'FAILED'}")
    return 0 if resp.passed else 1


def cmd_serve(ns) -> int:
    import uvicorn

    uvicorn.run("gmwb.service.app:app", host=ns.host, port=ns.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmwb", description="GMWB pricing by least-squares MC")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="price a configuration")
    _add_experiment_flags(run)
    run.set_defaults(func=cmd_run)
    fee = sub.add_parser("fair-fee", help="solve for the fee that prices at par")
    _add_experiment_flags(fee)
    fee.add_argument("--tolerance", type=float, default=1e-3)
    fee.add_argument("--lo", type=float, default=0.0)
    fee.add_argument("--hi", type=float, default=0.05)
    fee.set_defaults(func=cmd_fee)
    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("suite", choices=sorted(SUITES))
    ver.add_argument("--server")
    ver.set_defaults(func=cmd_verify)
    srv = sub.add_parser("serve", help="start the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)
    srv.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, EstimatorError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
