"""``evolgym`` command suite: serve, gen-instructions, collect, train-bc, evolve, eval, report.

Exit codes: 0 success, 1 user error (bad config, missing or malformed
inputs), 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time
from pathlib import Path
from typing import Any, Sequence

from .config import ConfigError, RunConfig, load_config
from .controller import (EnvClient, HttpEnvClient, LocalEnvClient, RolloutConfig, collect_expert,
                         collection_summary, evaluate, score_table)
from .core import (DomainError, EvolGymError, InstructionSet, ParseError, TrajectoryDataset,
                   check_instructions_disjoint)
from .envs import REGISTRY, GenerationError, generate_instruction_set
from .evol import Compiler, DatasetError, agent_evol, bc_train
from .policy import LogLinearPolicy, OraclePolicy, RemotePolicy
from .protocol import EnvServer, SessionManager
from .report import write_report

log = logging.getLogger("evolgym")


class UserError(EvolGymError):
    """A failed precondition the user can fix."""


USER_ERRORS = (UserError, ConfigError, DomainError, ParseError, GenerationError, DatasetError,
               FileNotFoundError, KeyError)


# -- artifacts -------------------------------------------------------------------

class Layout:
    def __init__(self, out: Path, cfg: RunConfig):
        self.out = out
        self.instructions = out / cfg.paths.instructions
        self.datasets = out / cfg.paths.datasets
        self.run = out / cfg.paths.run_dir

    def instruction_file(self, env: str) -> Path:
        return self.instructions / f"{env}.jsonl"

    @property
    def d_s(self) -> Path:
        return self.datasets / "D_s.jsonl"

    @property
    def snapshots(self) -> Path:
        return self.run / "snapshots"

    @property
    def bc_snapshot(self) -> Path:
        return self.snapshots / "bc.json"

    @property
    def final_snapshot(self) -> Path:
        return self.snapshots / "final.json"


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path: Path) -> Any:
    if not path.exists():
        raise UserError(f"missing input {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UserError(f"{path}: invalid JSON ({exc.msg})") from None


def require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise UserError(f"missing {path}; {hint}")
    return path


def load_instructions(layout: Layout, cfg: RunConfig) -> InstructionSet:
    files = [require(layout.instruction_file(env), "run 'evolgym gen-instructions' first")
             for env in cfg.environments]
    ins = InstructionSet.load(*files)
    check_instructions_disjoint(list(ins))
    return ins


def make_client(cfg: RunConfig, instructions: InstructionSet | None) -> EnvClient:
    urls = {n: e.url for n, e in cfg.environments.items() if e.url}
    if urls:
        if len(urls) != len(cfg.environments):
            raise UserError("either every environment or none must set 'url'")
        return HttpEnvClient(urls)
    specs = {n: REGISTRY[n] for n in cfg.environments}
    return LocalEnvClient(SessionManager(specs, cfg.difficulties(), instructions))


def rollout_config(cfg: RunConfig, seed: int) -> RolloutConfig:
    return RolloutConfig(cfg.rollout.temperature, cfg.rollout.samples, cfg.rollout.concurrency, seed)


def load_policy(path: Path) -> LogLinearPolicy:
    require(path, "train a policy first")
    try:
        return LogLinearPolicy.load(path)
    except (ValueError, KeyError) as exc:
        raise UserError(f"{path}: not a policy snapshot ({exc})") from None


# -- commands ----------------------------------------------------------------------

def serve_groups(cfg: RunConfig, envs: Sequence[str] | None, port: int | None) -> list[tuple[list[str], int]]:
    """Environment groups and their ports; ``port`` is the first of consecutive ports in per_env mode."""
    names = list(envs) if envs else list(cfg.environments)
    missing = [n for n in names if n not in cfg.environments]
    if missing:
        raise UserError(f"--env {missing[0]!r} is not configured")
    if cfg.server == "multi":
        return [(names, port if port is not None else cfg.environments[names[0]].port)]
    if port is None:
        return [([n], cfg.environments[n].port) for n in names]
    return [([n], port + i if port else 0) for i, n in enumerate(names)]


def cmd_serve(cfg: RunConfig, args) -> int:
    servers: list[EnvServer] = []
    groups = serve_groups(cfg, args.env, args.port)
    try:
        for names, port in groups:
            manager = SessionManager({n: REGISTRY[n] for n in names},
                                     {n: cfg.difficulties()[n] for n in names})
            try:
                server = EnvServer(manager, port=port)
            except OSError as exc:
                raise UserError(f"cannot bind port {port} for {', '.join(names)}: {exc.strerror}") from None
            servers.append(server)
        for (names, _), server in zip(groups, servers):
            server.start()
            for n in names:
                print(f"READY {n} {server.url}", flush=True)
    except BaseException:
        for s in servers:
            s.server_close()
        raise
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    limit = args.duration
    t0 = time.monotonic()
    while not stop.is_set() and (limit is None or time.monotonic() - t0 < limit):
        stop.wait(0.2)
    for s in servers:
        s.stop()
    return 0


def cmd_gen_instructions(cfg: RunConfig, args, layout: Layout) -> int:
    layout.instructions.mkdir(parents=True, exist_ok=True)
    for env, e in cfg.environments.items():
        ins = generate_instruction_set(env, e.total, e.eval, e.bc, args.seed, cfg.difficulties()[env])
        check_instructions_disjoint(list(ins))
        ins.save(layout.instruction_file(env))
        c = ins.counts()[env]
        print(f"{env}: {len(ins)} instructions (bc {c['bc']}, evolve {c['evolve']}, eval {c['eval']}) "
              f"-> {layout.instruction_file(env)}")
    return 0


def _source_policy(cfg: RunConfig, args):
    if args.source == "oracle":
        maze = cfg.environments.get("maze")
        size = cfg.difficulties().get("maze", 7) if maze else 7
        return OraclePolicy(size)
    if args.source == "remote":
        if cfg.policy.kind != "remote":
            raise UserError("--source remote needs policy.kind = remote in the config")
        return RemotePolicy(cfg.endpoint())
    return load_policy(Path(args.snapshot))


def cmd_collect(cfg: RunConfig, args, layout: Layout) -> int:
    if args.source == "snapshot" and not args.snapshot:
        raise UserError("--source snapshot needs --snapshot PATH")
    ins = load_instructions(layout, cfg)
    subset = ins.split(args.split)
    if not subset:
        raise UserError(f"no instructions in split {args.split!r}")
    client = make_client(cfg, ins)
    result = collect_expert(_source_policy(cfg, args), subset, client, rollout_config(cfg, args.seed),
                            threshold=args.threshold)
    layout.datasets.mkdir(parents=True, exist_ok=True)
    result.dataset.save(layout.d_s)
    summary = collection_summary(result, subset)
    print(summary)
    write_json(layout.datasets / "collect_manifest.json", {
        "kind": "collect", "source": args.source, "split": args.split, "threshold": args.threshold,
        "seed": args.seed, "attempted": result.attempted, "kept": len(result.dataset),
        "failures": result.failures, "per_env": {k: len(v) for k, v in sorted(result.dataset.by_env().items())},
    })
    return 0


def _require_trainable(cfg: RunConfig) -> None:
    if cfg.policy.kind != "log_linear":
        raise UserError("training needs policy.kind = log_linear")


def cmd_train_bc(cfg: RunConfig, args, layout: Layout) -> int:
    _require_trainable(cfg)
    ins = load_instructions(layout, cfg)
    d_s = TrajectoryDataset.load(require(layout.d_s, "run 'evolgym collect' first"), "D_s")
    d_s.validate_against(ins)
    client = make_client(cfg, ins)
    tc = cfg.train_config()
    result = bc_train(LogLinearPolicy(), d_s, Compiler(client, ins), tc)
    layout.snapshots.mkdir(parents=True, exist_ok=True)
    result.policy.save(layout.bc_snapshot)
    for e, loss in enumerate(result.losses, 1):
        print(f"epoch {e}: loss {loss:.4f}")
    write_json(layout.run / "bc_manifest.json", {
        "kind": "train_bc", "config": tc.to_dict(), "seed": args.seed, "dataset_size": len(d_s),
        "losses": result.losses, "snapshot": layout.bc_snapshot.name, "digest": result.policy.digest(),
    })
    return 0


def cmd_evolve(cfg: RunConfig, args, layout: Layout) -> int:
    _require_trainable(cfg)
    ins = load_instructions(layout, cfg)
    base = load_policy(require(layout.bc_snapshot, "run 'evolgym train-bc' first"))
    d_s = TrajectoryDataset.load(require(layout.d_s, "run 'evolgym collect' first"), "D_s")
    d_s.validate_against(ins)
    client = make_client(cfg, ins)
    tc = cfg.train_config()
    (layout.run / "datasets").mkdir(parents=True, exist_ok=True)
    layout.snapshots.mkdir(parents=True, exist_ok=True)

    def hook(rec, policy, d_m):
        policy.save(layout.snapshots / f"iter{rec.iteration}.json")
        d_m.save(layout.run / "datasets" / f"D_{rec.iteration}.jsonl")
        print(f"iteration {rec.iteration}: explored {rec.explored}, successes {rec.successes}, "
              f"merged {rec.merged}, eval {100 * rec.eval.overall['success_rate']:.2f}", flush=True)

    res = agent_evol(base, d_s, ins.evolve_pool(), ins.eval(), client, Compiler(client, ins), tc,
                     rollout_config(cfg, args.seed), hook=hook)
    res.policy.save(layout.final_snapshot)
    write_json(layout.run / "manifest.json", res.manifest(tc, {"seed": args.seed, "d_s_size": len(d_s)}))
    # wall-clock times live apart from the manifest so reruns stay byte-identical
    write_json(layout.run / "timings.json", {"iteration_seconds": res.timings()})
    rows = {"BC_base": res.base_eval} if res.base_eval else {}
    rows.update({f"iter{r.iteration}": r.eval for r in res.iterations})
    print(score_table(rows))
    return 0


def cmd_eval(cfg: RunConfig, args, layout: Layout) -> int:
    ins = load_instructions(layout, cfg)
    if args.source == "oracle" or args.source == "remote":
        policy = _source_policy(cfg, args)
        name = args.source
    else:
        path = Path(args.snapshot) if args.snapshot else (
            layout.final_snapshot if layout.final_snapshot.exists() else layout.bc_snapshot)
        policy = load_policy(path)
        name = path.stem
    report = evaluate(policy, ins.eval(), make_client(cfg, ins), rollout_config(cfg, args.seed))
    write_json(layout.run / f"eval_{name}.json", report.to_dict())
    print(score_table({name: report}))
    return 0


def cmd_report(cfg: RunConfig, args, layout: Layout) -> int:
    paths = [Path(p) for p in args.manifest] or [layout.run / "manifest.json"]
    manifests = {}
    for p in paths:
        m = read_json(require(p, "run 'evolgym evolve' first"))
        if m.get("kind") != "evolve" or "iterations" not in m:
            raise UserError(f"{p}: not an evolution manifest")
        manifests[p.parent.name if len(paths) > 1 else "run"] = m
    written = write_report(manifests, layout.run if not args.manifest else layout.out)
    print((layout.run / "report.txt").read_text() if not args.manifest else written["table"].read_text())
    for k, p in written.items():
        print(f"wrote {p}")
    return 0


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, default=None, help="overrides rollout.seed")
    common.add_argument("--out", default=".", help="root directory for artifacts")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="evolgym", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("serve", parents=[common], help="serve environments over HTTP")
    s.add_argument("--duration", type=float, default=None, help="stop after this many seconds")
    s.add_argument("--env", action="append", help="serve only this environment; repeatable")
    s.add_argument("--port", type=int, default=None,
                   help="port of the first service (later ones take the next ports; 0 picks free ports)")
    sub.add_parser("gen-instructions", parents=[common], help="generate instruction sets")
    for name in ("collect", "eval"):
        c = sub.add_parser(name, parents=[common])
        c.add_argument("--source", choices=("oracle", "remote", "snapshot"),
                       default="oracle" if name == "collect" else "snapshot")
        c.add_argument("--snapshot", help="policy snapshot for --source snapshot")
        if name == "collect":
            c.add_argument("--split", choices=("bc", "evolve", "eval"), default="bc")
            c.add_argument("--threshold", type=float, default=1.0, help="minimum reward to keep")
    sub.add_parser("train-bc", parents=[common], help="behavioral cloning on D_s")
    sub.add_parser("evolve", parents=[common], help="alternate exploration and learning")
    r = sub.add_parser("report", parents=[common], help="CSV, table and figure from manifests")
    r.add_argument("--manifest", action="append", default=[], help="manifest(s) to report; repeatable")
    return p


COMMANDS = {"gen-instructions": cmd_gen_instructions, "collect": cmd_collect, "train-bc": cmd_train_bc,
            "evolve": cmd_evolve, "eval": cmd_eval, "report": cmd_report}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is None:
            args.seed = cfg.rollout.seed
        if args.command == "serve":
            return cmd_serve(cfg, args)
        return COMMANDS[args.command](cfg, args, Layout(Path(args.out), cfg))
    except USER_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
