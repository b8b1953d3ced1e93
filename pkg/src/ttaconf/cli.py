"""Command-line client for the ttaconf service.

Every subcommand talks to the HTTP API: to a remote service when --server
is given, otherwise to an in-process instance of the same app, so batch
use needs no running daemon and both paths exercise identical code.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import httpx


def make_client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=3600.0)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _post(client, path: str, payload: dict) -> dict:
    response = client.post(path, json=payload)
    if response.status_code != 200:
        try:
            detail = response.json()
        except ValueError:
            detail = {"error": "http", "detail": response.text}
        raise SystemExit(f"error [{response.status_code}]: {json.dumps(detail)}")
    return response.json()


def _parse_floats(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _write(path: Path, content: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content)
    print(f"wrote {path}", file=sys.stderr)


def _add_score_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--score", choices=["aps", "raps"], default="raps")
    parser.add_argument("--k-reg", type=int, default=None,
                        help="RAPS rank threshold (default: auto-tune)")
    parser.add_argument("--lam", type=float, default=None,
                        help="RAPS penalty weight (default: auto-tune)")
    parser.add_argument("--no-randomized", action="store_true",
                        help="drop the u * p(y) randomization term")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--server", default=None, help="remote service URL (default: in-process)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output-dir", default=None)
    parser.add_argument("--format", choices=["json", "markdown", "csv"], default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ttaconf",
        description="Test-time-augmented conformal prediction over logit files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="repeated-split experiment over a tensor file")
    run.add_argument("--tensor", default=None)
    run.add_argument("--plan", default=None,
                     help="experiment plan document; replaces the other flags")
    run.add_argument("--alphas", default="0.1", help="comma-separated miscoverage levels")
    run.add_argument("--methods", default="baseline,tta_avg,tta_learned")
    run.add_argument("--beta", type=float, default=0.2)
    run.add_argument("--n-splits", type=int, default=10)
    run.add_argument("--val-downsample", type=float, default=1.0,
                     help="keep this fraction of the validation half (size sweep)")
    run.add_argument("--workers", type=int, default=1,
                     help="splits to run concurrently (output is identical)")
    _add_score_args(run)
    _add_common(run)

    sim = sub.add_parser("simulate", help="Monte Carlo coverage on synthetic data")
    sim.add_argument("--n-examples", type=int, default=2000)
    sim.add_argument("--n-classes", type=int, default=10)
    sim.add_argument("--n-augs", type=int, default=4)
    sim.add_argument("--signal", default="1.0", help="per-augmentation signal strengths")
    sim.add_argument("--noise", default="1.0", help="per-augmentation noise scales")
    sim.add_argument("--separation", type=float, default=4.0)
    sim.add_argument("--alpha", type=float, default=0.1)
    sim.add_argument("--use-tta", choices=["none", "avg", "learned"], default="none")
    sim.add_argument("--n-trials", type=int, default=100)
    sim.add_argument("--beta", type=float, default=0.2)
    sim.add_argument("--val-fraction", type=float, default=0.5)
    _add_score_args(sim)
    _add_common(sim)

    ana = sub.add_parser("analyze", help="rank-shift / top-k / class tables")
    ana.add_argument("--tensor", required=True)
    ana.add_argument("--alpha", type=float, default=0.1)
    ana.add_argument("--methods", default="baseline,tta_learned")
    ana.add_argument("--beta", type=float, default=0.2)
    ana.add_argument("--n-splits", type=int, default=10)
    _add_score_args(ana)
    _add_common(ana)

    syn = sub.add_parser("synth", help="write a synthetic logit tensor file")
    syn.add_argument("--out", required=True)
    syn.add_argument("--n-examples", type=int, default=2000)
    syn.add_argument("--n-classes", type=int, default=10)
    syn.add_argument("--n-augs", type=int, default=4)
    syn.add_argument("--signal", default="1.0")
    syn.add_argument("--noise", default="1.0")
    syn.add_argument("--separation", type=float, default=4.0)
    syn.add_argument("--label-weights", default=None)
    syn.add_argument("--server", default=None)
    syn.add_argument("--seed", type=int, default=0)

    ins = sub.add_parser("inspect", help="print a tensor file header")
    ins.add_argument("tensor")
    ins.add_argument("--server", default=None)
    ins.add_argument("--format", choices=["json", "text"], default="text")

    cal = sub.add_parser("calibrate", help="fit one predictor and serialize it")
    cal.add_argument("--tensor", required=True)
    cal.add_argument("--alpha", type=float, default=0.1)
    cal.add_argument("--method", choices=["baseline", "tta_avg", "tta_learned"],
                     default="tta_learned")
    cal.add_argument("--beta", type=float, default=0.2)
    cal.add_argument("--out", required=True, help="where to write the predictor document")
    _add_score_args(cal)
    cal.add_argument("--server", default=None)
    cal.add_argument("--seed", type=int, default=0)

    pred = sub.add_parser("predict", help="apply a serialized predictor")
    pred.add_argument("--predictor", required=True, help="predictor document path")
    pred.add_argument("--tensor", default=None, help="tensor file to predict on")
    pred.add_argument("--probs-json", default=None,
                      help="JSON file with a list of probability vectors")
    pred.add_argument("--out", default=None, help="write set members as JSON here")
    pred.add_argument("--server", default=None)
    pred.add_argument("--seed", type=int, default=0)

    srv = sub.add_parser("serve", help="run the HTTP service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int, default=8000)

    return parser


def cmd_run(args) -> int:
    if args.plan:
        from .harness import plan_from_document

        plan = plan_from_document(Path(args.plan).read_text())
        payload = plan.to_fields()
        if not args.output_dir:
            args.output_dir = payload.pop("output_dir", None)
        else:
            payload.pop("output_dir", None)
    elif args.tensor:
        payload = {
            "tensor_path": args.tensor,
            "alphas": _parse_floats(args.alphas),
            "score": args.score,
            "k_reg": args.k_reg,
            "lam": args.lam,
            "randomized": not args.no_randomized,
            "methods": [m.strip() for m in args.methods.split(",") if m.strip()],
            "beta": args.beta,
            "n_splits": args.n_splits,
            "seed": args.seed,
            "val_downsample": args.val_downsample,
        }
    else:
        raise SystemExit("error: run needs --tensor or --plan")
    payload["max_workers"] = args.workers
    with make_client(args.server) as client:
        body = _post(client, "/run", payload)
    if args.output_dir:
        _write(Path(args.output_dir) / "report.json", body["report_json"])
        _write(Path(args.output_dir) / "report.md", body["report_markdown"])
    if args.format == "markdown":
        print(body["report_markdown"], end="")
    elif args.format == "csv":
        print(_cells_csv(body["report"]["cells"]), end="")
    else:
        print(body["report_json"], end="")
    return 0


def _cells_csv(cells: list[dict]) -> str:
    cols = ["alpha", "method", "mean_set_size", "std_set_size",
            "mean_coverage", "std_coverage", "mean_sscv", "std_sscv"]
    lines = [",".join(cols)]
    for cell in cells:
        lines.append(",".join("" if cell[c] is None else repr(cell[c])
                              if isinstance(cell[c], float) else str(cell[c])
                              for c in cols))
    return "\n".join(lines) + "\n"


def cmd_simulate(args) -> int:
    signal = _parse_floats(args.signal)
    noise = _parse_floats(args.noise)
    payload = {
        "n_examples": args.n_examples,
        "n_classes": args.n_classes,
        "n_augs": args.n_augs,
        "signal_strength": signal if len(signal) > 1 else signal[0],
        "noise_scale": noise if len(noise) > 1 else noise[0],
        "separation": args.separation,
        "alpha": args.alpha,
        "score": args.score,
        "k_reg": args.k_reg,
        "lam": args.lam,
        "randomized": not args.no_randomized,
        "use_tta": args.use_tta,
        "n_trials": args.n_trials,
        "seed": args.seed,
        "beta": args.beta,
        "val_fraction": args.val_fraction,
    }
    with make_client(args.server) as client:
        body = _post(client, "/simulate", payload)
    if args.output_dir:
        _write(Path(args.output_dir) / "coverage_histogram.csv", body["histogram_csv"])
        summary = {k: v for k, v in body.items() if k != "histogram_csv"}
        _write(Path(args.output_dir) / "simulate.json",
               json.dumps(summary, sort_keys=True, indent=2) + "\n")
    if args.format == "csv":
        print(body["histogram_csv"], end="")
    else:
        printable = {k: v for k, v in body.items() if k not in ("histogram_csv", "coverages")}
        print(json.dumps(printable, sort_keys=True, indent=2))
    return 0


def cmd_analyze(args) -> int:
    payload = {
        "tensor_path": args.tensor,
        "alpha": args.alpha,
        "score": args.score,
        "k_reg": args.k_reg,
        "lam": args.lam,
        "randomized": not args.no_randomized,
        "methods": [m.strip() for m in args.methods.split(",") if m.strip()],
        "beta": args.beta,
        "n_splits": args.n_splits,
        "seed": args.seed,
    }
    with make_client(args.server) as client:
        body = _post(client, "/analyze", payload)
    if args.output_dir:
        for name, content in body["csv"].items():
            if content:
                _write(Path(args.output_dir) / f"{name}.csv", content)
    if args.format == "csv":
        for name, content in body["csv"].items():
            print(f"# {name}")
            print(content)
    else:
        slim = {k: v for k, v in body.items() if k != "csv"}
        print(json.dumps(slim, sort_keys=True, indent=2))
    return 0


def cmd_synth(args) -> int:
    signal = _parse_floats(args.signal)
    noise = _parse_floats(args.noise)
    payload = {
        "out_path": args.out,
        "n_examples": args.n_examples,
        "n_classes": args.n_classes,
        "n_augs": args.n_augs,
        "signal_strength": signal if len(signal) > 1 else signal[0],
        "noise_scale": noise if len(noise) > 1 else noise[0],
        "separation": args.separation,
        "label_weights": _parse_floats(args.label_weights) if args.label_weights else None,
        "seed": args.seed,
    }
    with make_client(args.server) as client:
        body = _post(client, "/synth", payload)
    print(json.dumps(body, sort_keys=True, indent=2))
    return 0


def cmd_inspect(args) -> int:
    with make_client(args.server) as client:
        body = _post(client, "/inspect", {"path": args.tensor})
    if args.format == "json":
        print(json.dumps(body, sort_keys=True, indent=2))
    else:
        print(f"TTAC v{body['version']}: {body['path']}")
        print(f"  examples: {body['n_examples']}")
        print(f"  augmentations: {body['n_augs']} ({', '.join(body['aug_names'])})")
        print(f"  classes: {body['n_classes']}")
    return 0


def cmd_calibrate(args) -> int:
    payload = {
        "tensor_path": args.tensor,
        "alpha": args.alpha,
        "score": args.score,
        "k_reg": args.k_reg,
        "lam": args.lam,
        "randomized": not args.no_randomized,
        "method": args.method,
        "beta": args.beta,
        "seed": args.seed,
    }
    with make_client(args.server) as client:
        body = _post(client, "/calibrate", payload)
    _write(Path(args.out), body["predictor_document"])
    info = {k: body[k] for k in ("q_hat", "n_cal", "k_reg", "lam", "weights")}
    print(json.dumps(info, sort_keys=True, indent=2))
    return 0


def cmd_predict(args) -> int:
    payload: dict = {
        "predictor_document": Path(args.predictor).read_text(),
        "seed": args.seed,
    }
    if args.probs_json:
        payload["probs"] = json.loads(Path(args.probs_json).read_text())
    elif args.tensor:
        payload["tensor_path"] = args.tensor
    else:
        raise SystemExit("error: predict needs --tensor or --probs-json")
    with make_client(args.server) as client:
        body = _post(client, "/predict", payload)
    if args.out:
        _write(Path(args.out), json.dumps(body, sort_keys=True, indent=2) + "\n")
    summary = {
        "avg_set_size": body["avg_set_size"],
        "coverage": body["coverage"],
        "n_examples": len(body["sets"]),
    }
    print(json.dumps(summary, sort_keys=True, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=args.host, port=args.port)
    return 0


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
    "inspect": cmd_inspect,
    "calibrate": cmd_calibrate,
    "predict": cmd_predict,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SystemExit:
        raise
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
