"""``devneg`` command-line entry point.

Every subcommand accepts the shared flags ``--config PATH``, ``--seed U64``,
``--jobs N``, ``--out DIR`` and ``--format {table,records}``. Reports go to
stdout and, with ``--out``, to a file in that directory; both are fully
determined by the resolved configuration and never depend on ``--jobs``.
The configuration fingerprint is logged to stderr.

Exit codes: 0 when the command succeeds and its checks pass, 1 when a check
fails, 2 on usage or configuration errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .harness import report
from .harness.config import (
    COMPONENTS,
    TIERS,
    ConfigError,
    RunConfig,
    calibration_fingerprint,
    load_calibration,
    load_config,
)

log = logging.getLogger("devneg")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
U64 = 1 << 64


class UsageError(Exception):
    pass


@dataclass
class Outcome:
    """What a subcommand produced: a table, a JSON-able record, a verdict."""

    name: str
    text: str
    record: object
    ok: bool = True
    artifacts: dict = field(default_factory=dict)  # file name -> bytes, written next to the report under --out


# helpers -------------------------------------------------------------------------


def _u64(value: str) -> int:
    try:
        v = int(value, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if not 0 <= v < U64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive(value: str) -> int:
    try:
        v = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {value!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        changes["trials"] = args.trials
    spec = cfg.spec.with_(**changes) if changes else cfg.spec
    tier = getattr(args, "tier", None) or cfg.tier
    return RunConfig(spec, tier, cfg.ablation, cfg.baseline)


def _seed(args, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    if args.config:
        return load_config(args.config).spec.seed
    return default


def _fingerprint(command: str, payload: dict) -> str:
    blob = json.dumps({"command": command, "calibration": calibration_fingerprint(), **payload}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# run / ablate ----------------------------------------------------------------------


def cmd_run(args) -> Outcome:
    from .harness.runner import compare_baselines, run_suite

    cfg = _run_config(args)
    fp = cfg.fingerprint()
    log.info("config fingerprint %s", fp)
    cal = load_calibration()
    band = cal["success_band"]
    if args.compare:
        cmp = compare_baselines(cfg.spec, cfg.tier, jobs=args.jobs)
        text = report.comparison_table(cmp)
        rec = {
            "fingerprint": fp,
            "rows": {k: r.record() for k, r in cmp.rows.items()},
            "checks": cmp.checks,
            "calibration_band": band,
        }
        return Outcome("compare", _with_header(fp, text), rec, cmp.ok)
    rep = run_suite(cfg.spec, cfg.tier, cfg.ablation, cfg.baseline, jobs=args.jobs)
    conserved = abs(math.fsum(rep.breakdown.values()) - rep.latency_ms) <= 1.0
    checks = {"breakdown sums to total latency within 1 ms": conserved}
    text = (
        report.table([rep])
        + report.breakdown_table(rep)
        + f"calibration target: full-system success in [{band[0]}, {band[1]}] "
        f"(mean over {cal['band_seeds']} seeds); this run {rep.success_rate:.3f}\n"
        + report.checks_table(checks)
    )
    rec = {"fingerprint": fp, "report": rep.record(), "checks": checks, "calibration_band": band}
    return Outcome("run", _with_header(fp, text), rec, all(checks.values()))


def cmd_ablate(args) -> Outcome:
    from .harness.runner import run_ablations

    cfg = _run_config(args)
    components = tuple(dict.fromkeys(args.disable)) if args.disable else COMPONENTS
    fp = _fingerprint("ablate", {"run": cfg.fingerprint(), "components": list(components)})
    log.info("config fingerprint %s", fp)
    full, rows = run_ablations(cfg.spec, cfg.tier, components, jobs=args.jobs)
    rec = {"fingerprint": fp, "full": full.record(), "rows": [r.record() for r in rows]}
    return Outcome("ablate", _with_header(fp, report.ablation_table(full, rows)), rec, all(r.ok for r in rows))


def _with_header(fp: str, text: str) -> str:
    return f"fingerprint {fp}\n{text}"


# bench -------------------------------------------------------------------------------


def cmd_bench(args) -> Outcome:
    """Crypto primitives at a deployment key size.

    Correctness results and artifact sizes form the report. Wall-clock
    timings depend on the machine, so they are logged to stderr only and
    the report stays reproducible.
    """
    from . import paillier
    from .audit import AuditLog, DecisionKind
    from .feasibility import run_overlap_protocol
    from .proofs import PrivateConstraint, prove_in_range, verify_in_range
    from .protocol.attestation import DEFAULT_CODE_HASH, DEFAULT_REGISTRY, AttestationRecord, attest_session
    from ._rng import derive_seed

    seed = _seed(args)
    fp = _fingerprint("bench", {"seed": seed, "key_bits": args.key_bits, "repeat": args.repeat})
    log.info("config fingerprint %s", fp)
    timings: dict[str, list[float]] = {}

    def timed(name: str, fn: Callable):
        t0 = time.perf_counter()
        out = fn()
        timings.setdefault(name, []).append((time.perf_counter() - t0) * 1000.0)
        return out

    rows: dict[str, object] = {}
    for i in range(args.repeat):
        s = derive_seed(seed, "bench", i)
        kp = timed("paillier_keygen", lambda: paillier.generate_keypair(args.key_bits, derive_seed(s, "key")))
        res, _ = timed("feasibility", lambda: run_overlap_protocol(5_000_000, 4_200_000, kp, derive_seed(s, "feas")))
        c = timed("commit_bounds", lambda: PrivateConstraint.create(4_000_000, 5_000_000, "buyer", derive_seed(s, "c")))
        sid = derive_seed(s, "session").to_bytes(8, "big")
        proof = timed("range_prove", lambda: prove_in_range(4_500_000, c, sid, derive_seed(s, "p")))
        valid = timed(
            "range_verify", lambda: verify_in_range(4_500_000, c.commitment_min, c.commitment_max, proof, sid)
        )
        a = AttestationRecord("buyer", DEFAULT_CODE_HASH)
        b = AttestationRecord("seller", DEFAULT_CODE_HASH)
        status, _ = timed("attestation", lambda: attest_session(a, b, DEFAULT_REGISTRY))
        audit = AuditLog()

        def fill():
            for t in range(100):
                audit.append(DecisionKind.OFFER_SENT, "bench", f"offer {4_000_000 + t}", timestamp=t)

        timed("audit_append_100", fill)
        mp = timed("merkle_prove", lambda: audit.prove_inclusion(57))
        included = audit.verify_inclusion(audit.records[57], mp)
        rows = {
            "feasible": res.feasible,
            "feasibility_transcript": res.transcript_hash.hex(),
            "range_proof_bytes": proof.size,
            "range_proof_valid": valid,
            "attestation": status.value,
            "audit_root": audit.root.hex(),
            "merkle_proof_len": len(mp.siblings),
            "merkle_inclusion_valid": included,
        }
    for name, ms in sorted(timings.items()):
        ms = sorted(ms)
        log.info("bench %-18s median %10.2f ms  (n=%d)", name, ms[len(ms) // 2], len(ms))
    ok = bool(rows["feasible"] and rows["range_proof_valid"] and rows["merkle_inclusion_valid"])
    ok = ok and rows["attestation"] == "established"
    lines = [f"fingerprint {fp}", f"bench at {args.key_bits}-bit Paillier, {args.repeat} repeat(s)"]
    lines += [f"  {k:<24} {v}" for k, v in rows.items()]
    lines.append("  (wall-clock timings are written to stderr)")
    rec = {"fingerprint": fp, "key_bits": args.key_bits, "results": rows}
    return Outcome("bench", "\n".join(lines) + "\n", rec, ok)


# audit-verify ------------------------------------------------------------------------


def cmd_audit_verify(args) -> Outcome:
    from .audit import verify_log_file

    path = Path(args.log)
    if not path.is_file():
        raise UsageError(f"no such log file: {path}")
    data = path.read_bytes()
    fp = _fingerprint("audit-verify", {"log_sha256": hashlib.sha256(data).hexdigest()})
    log.info("config fingerprint %s", fp)
    chk = verify_log_file(path)
    if chk.ok:
        text = f"ok: {chk.records} records, merkle root {chk.root.hex()}\n"
    else:
        text = f"TAMPERED: first_bad={chk.first_bad} ({chk.detail}); {chk.records} records parsed\n"
    rec = {"ok": chk.ok, "records": chk.records, "first_bad": chk.first_bad, "detail": chk.detail, "root": chk.root.hex()}
    return Outcome("audit", text, rec, chk.ok)


# prove / verify ----------------------------------------------------------------------


def cmd_prove(args) -> Outcome:
    from .proofs import PrivateConstraint, RangeProofError, prove_in_range
    from ._rng import derive_seed

    seed = _seed(args)
    if not 0 <= args.min <= args.max:
        raise UsageError("need 0 <= --min <= --max")
    sid = args.session.encode()
    fp = _fingerprint("prove", {"seed": seed, "min": args.min, "max": args.max, "offer": args.offer, "session": args.session})
    log.info("config fingerprint %s", fp)
    try:
        c = PrivateConstraint.create(args.min, args.max, args.role, derive_seed(seed, "prove", "commit"))
        proof = prove_in_range(args.offer, c, sid, derive_seed(seed, "prove", "proof"))
    except (RangeProofError, ValueError) as exc:
        return Outcome("proof", f"refused: {exc}\n", {"ok": False, "error": str(exc)}, False)
    rec = {
        "offer": args.offer,
        "session_id": sid.hex(),
        "commitment_min": c.commitment_min.hex(),
        "commitment_max": c.commitment_max.hex(),
        "proof": proof.encode().hex(),
    }
    text = f"range proof for offer {args.offer}: {proof.size} bytes, session {args.session!r}\n"
    # the proof document is what `verify` reads, so it is written whatever the report format
    return Outcome("proof", text, rec, True, {"proof.json": report.records(rec).encode()})


def cmd_verify(args) -> Outcome:
    from .proofs import Commitment, verify_in_range

    try:
        doc = json.loads(Path(args.proof).read_text())
        offer = int(doc["offer"])
        sid = bytes.fromhex(doc["session_id"])
        cmin = Commitment(bytes.fromhex(doc["commitment_min"]))
        cmax = Commitment(bytes.fromhex(doc["commitment_max"]))
        blob = bytes.fromhex(doc["proof"])
    except OSError as exc:
        raise UsageError(f"cannot read proof file: {exc}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"malformed proof document: {exc!r}") from None
    fp = _fingerprint("verify", {"proof_sha256": hashlib.sha256(blob).hexdigest(), "offer": offer})
    log.info("config fingerprint %s", fp)
    ok = verify_in_range(offer, cmin, cmax, blob, sid)
    text = f"{'valid' if ok else 'INVALID'}: offer {offer} against the committed range\n"
    return Outcome("verify", text, {"offer": offer, "valid": ok}, ok)


# migrate ---------------------------------------------------------------------------------


def cmd_migrate(args) -> Outcome:
    from .state_codec import (
        CheckpointStore,
        ImportanceParams,
        ItemClass,
        StateItem,
        compress,
        compression_ratio,
        importance,
        restore,
        synthetic_state,
    )

    seed = _seed(args)
    tier = args.tier or (load_config(args.config).tier if args.config else "mid")
    fp = _fingerprint("migrate", {"seed": seed, "tier": tier, "size_mb": args.size_mb})
    log.info("config fingerprint %s", fp)
    params = ImportanceParams.for_tier(tier)
    now = 40
    state, goal = synthetic_state(int(args.size_mb * 2**20), seed=seed, now=now, params=params)
    base = compress(state, params, goal, now, seed=seed)
    store = CheckpointStore()
    store.add(base)
    restored = restore(base)
    want = {it.id: it.encode() for it in state if importance(it, goal, params, now) > params.tau}
    got = {it.id: it.encode() for it in restored.stm}
    lossless = want == got

    # one more round of conversation, migrated as a delta against the checkpoint
    later = now + 1
    extra = [StateItem(f"live{i}", ItemClass.MESSAGE, later, b"counter offer %d" % i, goal) for i in range(3)]
    state2 = list(state) + extra
    delta = compress(state2, params, goal, later, base=base, store=store, seed=seed)
    full2 = compress(state2, params, goal, later, seed=seed)
    a, b = restore(delta, store), restore(full2)
    equivalent = [x.encode() for x in a.stm] == [x.encode() for x in b.stm] and [
        x.encode() for x in a.ltm
    ] == [x.encode() for x in b.ltm]

    ratio = compression_ratio(state, base)
    checks = {
        "criticals restored losslessly": lossless,
        "conversation continuity preserved": restored.continuity,
        "delta restore equals full restore": equivalent,
    }
    rec = {
        "fingerprint": fp,
        "tier": tier,
        "raw_bytes": sum(len(it.encode()) for it in state),
        "compressed_bytes": base.size,
        "compression": round(ratio, 6),
        "delta_bytes": delta.size,
        "critical_items": len(got),
        "checks": checks,
    }
    lines = [f"fingerprint {fp}", f"migration round trip, tier {tier}, {args.size_mb:g} MB synthetic state"]
    lines += [f"  {k:<18} {rec[k]}" for k in ("raw_bytes", "compressed_bytes", "compression", "delta_bytes", "critical_items")]
    return Outcome("migrate", "\n".join(lines) + "\n" + report.checks_table(checks), rec, all(checks.values()))


# distill -------------------------------------------------------------------------------


def cmd_distill(args) -> Outcome:
    from .world_model import agreement, distill

    cal = load_calibration()
    seed = args.seed if args.seed is not None else cal["student_seed"]
    epochs = args.epochs or cal["student_epochs"]
    fp = _fingerprint("distill", {"seed": seed, "epochs": epochs, "dataset_size": args.dataset_size})
    log.info("config fingerprint %s", fp)
    try:
        student = distill(dataset_size=args.dataset_size, epochs=epochs, seed=seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    agree = agreement(student, seed=seed)
    ok = agree >= 0.9
    weights = student.to_bytes()
    rec = {
        "fingerprint": fp,
        "epochs": epochs,
        "dataset_size": args.dataset_size,
        "agreement": round(agree, 6),
        "weights_sha256": hashlib.sha256(weights).hexdigest(),
    }
    text = (
        f"fingerprint {fp}\nstudent top-1 agreement with teacher on held-out data: {agree:.4f} "
        f"(threshold 0.90) [{'PASS' if ok else 'FAIL'}]\n"
    )
    return Outcome("distill", text, rec, ok, {"student.bin": weights})


# parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario config (INI)")
    common.add_argument("--seed", type=_u64, metavar="U64", help="root seed; overrides the config")
    common.add_argument("--jobs", type=_positive, default=1, metavar="N", help="worker processes for trials")
    common.add_argument("--out", metavar="DIR", help="also write the report into DIR")
    common.add_argument("--format", choices=("table", "records"), default="table")

    p = argparse.ArgumentParser(prog="devneg", description="Device-native negotiation experiments and artifact tools.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    r = sub.add_parser("run", parents=[common], help="run a scenario suite")
    r.add_argument("--trials", type=_positive)
    r.add_argument("--tier", choices=TIERS)
    r.add_argument("--compare", action="store_true", help="run every baseline on paired seeds")
    r.set_defaults(fn=cmd_run)

    a = sub.add_parser("ablate", parents=[common], help="disable components on paired seeds")
    a.add_argument("--disable", action="append", choices=COMPONENTS, default=[], help="repeatable; default all")
    a.add_argument("--trials", type=_positive)
    a.add_argument("--tier", choices=TIERS)
    a.set_defaults(fn=cmd_ablate)

    b = sub.add_parser("bench", parents=[common], help="crypto primitives at deployment key size")
    b.add_argument("--key-bits", type=int, default=2048, choices=(512, 1024, 2048, 3072))
    b.add_argument("--repeat", type=_positive, default=3)
    b.set_defaults(fn=cmd_bench)

    v = sub.add_parser("audit-verify", parents=[common], help="validate an audit log file")
    v.add_argument("log", metavar="PATH")
    v.set_defaults(fn=cmd_audit_verify)

    pr = sub.add_parser("prove", parents=[common], help="standalone range proof for one offer")
    pr.add_argument("--min", type=int, required=True)
    pr.add_argument("--max", type=int, required=True)
    pr.add_argument("--offer", type=int, required=True)
    pr.add_argument("--role", choices=("buyer", "seller"), default="buyer")
    pr.add_argument("--session", default="devneg-cli", help="session id the proof is bound to")
    pr.set_defaults(fn=cmd_prove)

    ve = sub.add_parser("verify", parents=[common], help="check a proof document written by prove")
    ve.add_argument("proof", metavar="PATH")
    ve.set_defaults(fn=cmd_verify)

    m = sub.add_parser("migrate", parents=[common], help="state compress / restore round trip")
    m.add_argument("--tier", choices=TIERS)
    m.add_argument("--size-mb", type=float, default=8.0)
    m.set_defaults(fn=cmd_migrate)

    d = sub.add_parser("distill", parents=[common], help="train the student world model")
    d.add_argument("--epochs", type=_positive)
    d.add_argument("--dataset-size", type=int, default=5000)
    d.set_defaults(fn=cmd_distill)
    return p


def _emit(out: Outcome, args) -> None:
    body = report.records(out.record) if args.format == "records" else out.text
    sys.stdout.write(body)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        suffix = "json" if args.format == "records" else "txt"
        (d / f"{out.name}.{suffix}").write_text(body)
        for name, data in sorted(out.artifacts.items()):
            (d / name).write_bytes(data)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse prints usage and help hints itself
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        out = args.fn(args)
        _emit(out, args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"devneg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK if out.ok else EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
