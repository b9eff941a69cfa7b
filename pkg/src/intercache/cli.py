"""Command-line entry point: ``intercache {gen-workload,run,report,verify}``."""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

from .cache import LatentCache
from .config import (CONFIG_ENV_VAR, MODES, ConfigError, RunConfig, apply_overrides, load_config,
                     with_profile)
from .serving import (Pipeline, aggregate, process_request, read_records, warm_start,
                      write_records, write_summary, write_windows_csv)
from .world import Vocabulary, gen_workload, read_vocabulary, read_workload, write_vocabulary, write_workload


def _parse_sets(pairs) -> list[tuple[str, str]]:
    out = []
    for item in pairs or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out.append((key.strip(), value.strip()))
    return out


def _config(args) -> RunConfig:
    path = args.config or os.environ.get(CONFIG_ENV_VAR) or None
    cfg = load_config(path)
    if args.profile:
        cfg = with_profile(cfg, args.profile)
    # overrides win over the profile as well as the file
    return apply_overrides(cfg, _parse_sets(args.set))


def _vocab_path(workload: Path) -> Path:
    return workload.with_name(workload.stem + ".vocab.json")


def cmd_gen_workload(args) -> int:
    cfg = _config(args)
    vocab = Vocabulary(cfg.workload.vocab_seed)
    items = gen_workload(cfg.workload, cfg.model, vocab)
    out = Path(args.out)
    write_workload(out, items, vocab, cfg.workload.warm_start)
    write_vocabulary(_vocab_path(out), vocab)
    clusters = len({it.cluster for it in items})
    distinct = len({it.scene for it in items})
    print(f"wrote {len(items)} requests ({cfg.workload.warm_start} warm-start, "
          f"{len(items) - cfg.workload.warm_start} test) from {clusters} clusters, "
          f"{distinct} distinct scenes -> {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    overrides = {"mode": args.mode, "records_path": args.records, "summary_path": args.summary,
                 "csv_path": args.csv, "cache_dir": args.cache_dir}
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    if args.no_reference:
        cfg = replace(cfg, reference_oracle=False)
    if args.workload:
        wl = Path(args.workload)
        vpath = _vocab_path(wl)
        vocab = read_vocabulary(vpath) if vpath.is_file() else Vocabulary(cfg.workload.vocab_seed)
        warm, test = read_workload(wl, vocab)
    else:
        vocab = Vocabulary(cfg.workload.vocab_seed)
        items = gen_workload(cfg.workload, cfg.model, vocab)
        warm, test = items[:cfg.workload.warm_start], items[cfg.workload.warm_start:]
    pipe = Pipeline.build(cfg, vocab)
    if args.load_cache:
        pipe.cache = LatentCache.load(args.load_cache, cfg.model.dtype)
    warm_start(warm, pipe)
    pipe.frozen = cfg.cache.frozen
    dumps = []
    records = []
    for i, item in enumerate(test):
        _, rec = process_request(item.scene, i, pipe, cluster=item.cluster,
                                 mask_log=dumps if args.mask_dump else None)
        records.append(rec)
        if args.verbose:
            print(f"[{i}] hit={rec.hit} m={rec.m} K=({rec.k1},{rec.k2}) "
                  f"compute={rec.compute_fraction:.3f} {rec.prompt}")
    if not records:
        raise ConfigError("the test stream is empty")
    summary = aggregate(records, cfg.window)
    write_records(cfg.records_path, records, cfg.reference_oracle)
    write_summary(cfg.summary_path, summary)
    write_windows_csv(cfg.csv_path, summary)
    if cfg.cache_dir:
        pipe.cache.save(cfg.cache_dir)
    if args.mask_dump:
        Path(args.mask_dump).write_text("\n\n".join(dumps) + "\n")
    o = summary["overall"]
    hit_speedup = o["hit_speedup_proxy"]
    print(f"mode={cfg.mode} requests={o['requests']} hit_rate={o['hit_rate']:.3f} "
          f"mean_compute={o['mean_compute_fraction']:.4f} speedup_proxy={o['speedup_proxy']:.3f} "
          f"hit_speedup_proxy={'-' if hit_speedup is None else f'{hit_speedup:.3f}'}")
    return 0


def _fmt(v, spec=".3f"):
    return "-" if v is None else format(v, spec)


def format_report(records, window: int) -> str:
    lines = []
    modes = sorted({r["mode"] for r in records})
    for mode in modes:
        sub = [r for r in records if r["mode"] == mode]
        summary = aggregate(sub, window)
        lines.append(f"== mode: {mode} ==")
        lines.append(f"{'window':>13}  {'n':>5}  {'hit rate':>8}  {'compute':>8}  {'align':>7}")
        for w in summary["windows"]:
            lines.append(f"{w['start']:>6}-{w['end']:<6}  {w['requests']:>5}  {w['hit_rate']:>8.3f}  "
                         f"{w['mean_compute_fraction']:>8.4f}  {_fmt(w['mean_align_normalized']):>7}")
        o = summary["overall"]
        lines.append(f"{'total':>13}  {o['requests']:>5}  {o['hit_rate']:>8.3f}  "
                     f"{o['mean_compute_fraction']:>8.4f}  {_fmt(o['mean_align_normalized']):>7}")
        lines.append(f"speedup proxy {o['speedup_proxy']:.3f}, hit-only {_fmt(o['hit_speedup_proxy'])}")
        lines.append("")
    return "\n".join(lines)


def cmd_report(args) -> int:
    records = read_records(args.records)
    if not records:
        raise ConfigError(f"{args.records}: no records")
    print(format_report(records, args.window))
    return 0


def cmd_verify(args) -> int:
    from .verify import run_checks
    results = run_checks()
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intercache",
                                     description="Inter-request latent caching simulator for a toy video DiT.")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_args(p):
        p.add_argument("--config", help=f"INI config file (default: ${CONFIG_ENV_VAR})")
        p.add_argument("--profile", choices=("distilled", "vanilla"))
        p.add_argument("--set", action="append", metavar="GROUP.KEY=VALUE",
                       help="override a config key; repeatable")

    p = sub.add_parser("gen-workload", help="write a clustered workload file")
    config_args(p)
    p.add_argument("--out", default="workload.jsonl")
    p.set_defaults(func=cmd_gen_workload)

    p = sub.add_parser("run", help="simulate a request stream")
    config_args(p)
    p.add_argument("--workload", help="workload file (default: generate from config)")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--records")
    p.add_argument("--summary")
    p.add_argument("--csv")
    p.add_argument("--cache-dir", help="save the final cache here")
    p.add_argument("--load-cache", help="start from a saved cache directory")
    p.add_argument("--mask-dump", help="write text renderings of stage-2 masks here")
    p.add_argument("--no-reference", action="store_true", help="skip full-compute reference runs")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="summarize a records file")
    p.add_argument("records")
    p.add_argument("--window", type=int, default=100)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="run the built-in invariant checks")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
