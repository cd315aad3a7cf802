"""Command-line client for the service.

Verbs: synth, train, eval, gradcheck, selftest. Each reads a JSON config
file, applies ``--set key=value`` overrides (dotted paths, strictly
checked), and posts the job to the service. By default the service app
runs in-process; ``--server URL`` targets a remote instance instead.

Any failure prints a single-line JSON object on stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field

import httpx

from .errors import ConfigError, RotcomposeError, UsageError
from .jobconfig import apply_overrides

VERBS = ("synth", "train", "eval", "gradcheck", "selftest")


@dataclass
class Command:
    verb: str
    config_path: str | None = None
    overrides: list[str] = field(default_factory=list)
    output_dir: str = "."
    server: str | None = None


def parse_command(argv: list[str]) -> Command:
    """Parse an argument vector into a validated Command."""
    if not argv:
        raise UsageError(f"missing verb; expected one of {{{', '.join(VERBS)}}}")
    verb = argv[0]
    if verb in ("-h", "--help"):
        _parser().parse_args(["--help"])
    if verb not in VERBS:
        raise UsageError(
            f"unknown verb {verb!r}; expected one of {{{', '.join(VERBS)}}}")
    parser = _parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports its own message
        raise UsageError(f"invalid arguments for {verb!r}") from exc
    cmd = Command(verb=verb, config_path=ns.config, overrides=ns.set or [],
                  output_dir=ns.output_dir, server=ns.server)
    if cmd.verb in ("synth", "train", "eval") and cmd.config_path is None \
            and not cmd.overrides:
        raise UsageError(f"{verb} needs --config and/or --set overrides")
    return cmd


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotcompose",
        description="Compose image-text queries, train, and evaluate retrieval.")
    parser.add_argument("verb", choices=VERBS)
    parser.add_argument("--config", help="path to a JSON config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key (dotted path)")
    parser.add_argument("--output-dir", default=".",
                        help="directory for run outputs")
    parser.add_argument("--server", default=None,
                        help="remote service URL; default runs in-process")
    return parser


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient
    from .service.app import app
    return TestClient(app, raise_server_exceptions=False)


def _load_config(cmd: Command) -> dict:
    config: dict = {}
    if cmd.config_path:
        try:
            with open(cmd.config_path, encoding="utf-8") as fh:
                config = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {cmd.config_path}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {cmd.config_path}: invalid JSON ({exc})")
    return apply_overrides(config, cmd.overrides, cmd.verb)


def run(cmd: Command) -> int:
    """Execute a parsed command against the service; returns the exit status."""
    config = _load_config(cmd) if cmd.verb != "selftest" else {}
    body: dict = {"output_dir": cmd.output_dir}
    if cmd.verb != "selftest":
        body["config"] = config
    with _client(cmd.server) as client:
        resp = client.post(f"/{cmd.verb}", json=body)
    if resp.status_code != 200:
        try:
            detail = resp.json()
        except ValueError:
            detail = {"error": "HTTPError", "message": resp.text}
        print(json.dumps(detail, sort_keys=True), file=sys.stderr)
        return 1
    payload = resp.json()
    _report(cmd.verb, payload)
    if cmd.verb == "gradcheck" and not payload["passed"]:
        return 1
    if cmd.verb == "selftest" and not payload["passed"]:
        return 1
    return 0


def _report(verb: str, payload: dict):
    if verb == "synth":
        for f in payload["files"]:
            print(f"wrote {f}")
    elif verb == "train":
        for f in payload["checkpoints"] + payload["metrics_files"]:
            print(f"wrote {f}")
        print(json.dumps(payload["summary"], sort_keys=True))
    elif verb == "eval":
        print(f"wrote {payload['report_file']}")
        print(json.dumps(payload["report"]["recall"], sort_keys=True))
    elif verb == "gradcheck":
        print(f"max relative error {payload['max_rel_error']:.3e} "
              f"(threshold {payload['threshold']:.0e}): "
              f"{'pass' if payload['passed'] else 'FAIL'}")
    elif verb == "selftest":
        for c in payload["checks"]:
            status = "pass" if c["passed"] else "FAIL"
            print(f"{status}  {c['name']}  {c['detail']}")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cmd = parse_command(argv)
        return run(cmd)
    except RotcomposeError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)},
                         sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
