"""Command-line front end: one subcommand per experiment, plus ``serve``.

Exit codes: 0 all asserted invariants passed, 1 invariant failure,
2 usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .errors import (HardyLabError, NumericalError, PropertyViolation,
                     UsageError)
from .experiments import EXPERIMENTS, make_config, parse_overrides, run

_STATUS_EXIT = {"ok": 0, "invariant": 1, "usage": 2, "numerical": 3,
                "error": 3}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="hardylab",
        description="Numerical experiments for heat control with an "
                    "inverse-square boundary potential.",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override one config key (JSON value or string)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--server",
                        help="base URL of a running service; the run is "
                             "posted there instead of executing locally")
    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _gather_config(args, name):
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise UsageError("config must be a JSON object")
        if data.get("experiment", name) != name:
            raise UsageError(
                f"config file names experiment {data['experiment']!r}, "
                f"but the {name!r} subcommand was invoked"
            )
    data.update(parse_overrides(args.overrides))
    if args.out:
        data["out_dir"] = args.out
    data["experiment"] = name
    return make_config(data)


def _print_record(record, out=None):
    out = out if out is not None else sys.stdout
    for failure in record.failures:
        print(f"FAIL {failure}", file=out)
    for path in record.artifacts:
        print(f"wrote {path}", file=out)
    if record.manifest_path:
        print(f"wrote {record.manifest_path}", file=out)
    if record.error:
        print(f"{record.status}: {record.error}", file=sys.stderr)
    verdict = "PASS" if record.passed else record.status.upper()
    print(f"{record.experiment}: {verdict}", file=out)


def _remote_run(server, config):
    import urllib.error
    import urllib.request

    url = f"{server.rstrip('/')}/experiments/{config.experiment}/run"
    payload = config.model_dump(mode="json")
    payload.pop("experiment")
    req = urllib.request.Request(
        url,
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req) as resp:
            record = json.loads(resp.read().decode())
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode(errors="replace")
        print(f"server rejected the run ({exc.code}): {detail}",
              file=sys.stderr)
        return 2
    except urllib.error.URLError as exc:
        print(f"cannot reach service at {server}: {exc.reason}",
              file=sys.stderr)
        return 2
    for failure in record.get("failures", []):
        print(f"FAIL {failure}")
    for path in record.get("artifacts", []):
        print(f"remote wrote {record.get('out_dir', '')}/{path}")
    if record.get("error"):
        print(f"{record['status']}: {record['error']}", file=sys.stderr)
    verdict = "PASS" if record.get("passed") else record.get("status", "error").upper()
    print(f"{record.get('experiment')}: {verdict}")
    return _STATUS_EXIT.get(record.get("status"), 3) if not record.get("passed") \
        else 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            import uvicorn

            from .service.app import app
            uvicorn.run(app, host=args.host, port=args.port)
            return 0
        config = _gather_config(args, args.command)
        if args.server:
            return _remote_run(args.server, config)
        record = run(config)
        _print_record(record)
        return record.exit_code
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except PropertyViolation as exc:
        print(f"invariant failure: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except HardyLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
