"""Command-line interface.

Every subcommand resolves its flags into a manifest written next to its
outputs, so a run can be reproduced exactly.  Data goes to files and stdout;
progress goes to stderr.  Exit codes: 0 success, 1 precondition or input
error, 2 verification failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, allocate, harness, modelio, nn, probes, quantize


def _err(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 1


def _progress(msg: str):
    print(msg, file=sys.stderr)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _out_dir(args) -> Path:
    out = Path(args.out if args.out else os.environ.get("QALLOC_OUTDIR", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(args, out: Path, outputs: list[Path]):
    payload = {
        "format_version": modelio.FORMAT_VERSION,
        "tool": f"qalloc {__version__}",
        "command": args.command,
        "config": {k: v for k, v in vars(args).items() if k not in ("func", "command")},
        "outputs": {p.name: _sha256(p) for p in sorted(outputs, key=lambda p: p.name)},
    }
    modelio.write_json(out / "manifest.json", payload)


def _load_merged_profiles(paths):
    """Merge one or more partial profile files (t-only and p-only runs)."""
    merged: dict[int, dict] = {}
    meta = {}
    for path in paths:
        profiles, m = modelio.load_profiles(path)
        meta.update(m)
        for p in profiles:
            rec = merged.setdefault(p.index, {})
            prev = rec.get("profile")
            if prev is None:
                rec["profile"] = p
            else:
                t = prev.t if prev.t == prev.t else p.t
                pp = prev.p if prev.p == prev.p else p.p
                scale = prev.noise_scale if prev.noise_scale == prev.noise_scale else p.noise_scale
                dacc = prev.delta_acc if prev.delta_acc == prev.delta_acc else p.delta_acc
                rec["profile"] = probes.LayerProfile(
                    index=p.index, kind=p.kind, s=p.s, t=t, p=pp, noise_scale=scale,
                    delta_acc=dacc, b_probe=max(prev.b_probe, p.b_probe),
                    weight_range=p.weight_range,
                    copied_t=prev.copied_t or p.copied_t,
                    degenerate=prev.degenerate or p.degenerate)
    out = [merged[i]["profile"] for i in sorted(merged)]
    for p in out:
        if p.t != p.t or p.p != p.p:
            raise modelio.LoadError(
                f"layer {p.index}: profiles incomplete (t={p.t}, p={p.p}); "
                "supply both an estimate-t and an estimate-p output")
    return out, meta


def cmd_gen_model(args) -> int:
    out = _out_dir(args)
    spec = modelio.default_fixture(seed=args.seed)
    model = modelio.gen_model(spec)
    paths = modelio.save_model(model, out / args.name)
    _write_manifest(args, out, list(paths))
    sizes = model.layer_sizes()
    print(f"model: {len(model.layers)} layers, d={model.d}, "
          f"weighted layer sizes {list(sizes)}, total params {sum(sizes)}")
    return 0


def cmd_gen_data(args) -> int:
    out = _out_dir(args)
    model = modelio.load_model(args.model)
    dataset = modelio.gen_dataset(model, args.n, seed=args.seed)
    paths = modelio.save_dataset(dataset, out / args.name)
    _write_manifest(args, out, list(paths))
    acc = nn.evaluate_accuracy(model, dataset)
    print(f"dataset: {len(dataset)} teacher-labelled samples, baseline accuracy {acc}")
    return 0


def cmd_margins(args) -> int:
    model = modelio.load_model(args.model)
    dataset = modelio.load_dataset(args.data)
    stats = probes.margin_stats(model, dataset, threads=args.threads)
    print(f"mean margin power (z1-z2)^2/2: {stats.mean_r_star!r} over {stats.n} samples")
    if args.out:
        out = _out_dir(args)
        path = modelio.write_json(out / "margins.json", {
            "format_version": modelio.FORMAT_VERSION,
            "mean_r_star": stats.mean_r_star, "n": stats.n,
            "counts": list(stats.counts), "bin_edges": list(stats.bin_edges)})
        _write_manifest(args, out, [path])
    return 0


def cmd_estimate_t(args) -> int:
    out = _out_dir(args)
    model = modelio.load_model(args.model)
    dataset = modelio.load_dataset(args.data)
    config = probes.ProbeConfig(delta_acc=args.delta_acc, seed=args.seed,
                                acc_tolerance=args.acc_tolerance, max_iters=args.max_iters,
                                last_n=args.last_n, threads=args.threads)
    acc_f = nn.evaluate_accuracy(model, dataset, threads=args.threads)
    margins = probes.margin_stats(model, dataset, threads=args.threads)
    _progress(f"baseline accuracy {acc_f}, mean margin {margins.mean_r_star:.6g}")
    t_probes = probes.estimate_t(model, dataset, config, margins=margins)
    delta = config.delta_acc if config.delta_acc is not None else 0.5 * acc_f
    profiles = []
    for r in t_probes:
        layer = model.layers[r.index]
        w = layer.weights
        profiles.append(probes.LayerProfile(
            index=r.index, kind=layer.kind, s=layer.param_count, t=r.t, p=float("nan"),
            noise_scale=r.noise_scale, delta_acc=delta, b_probe=0,
            weight_range=(float(w.min()), float(w.max())), copied_t=r.copied))
    path = modelio.save_profiles(profiles, out / "profiles_t.json", meta={
        "baseline_accuracy": acc_f, "mean_r_star": margins.mean_r_star,
        "delta_acc": delta, "seed": args.seed})
    csv_path = modelio.save_profiles_csv(profiles, out / "profiles_t.csv")
    _write_manifest(args, out, [path, csv_path])
    for r in t_probes:
        print(f"layer {r.index}: t={r.t!r} (k={r.noise_scale!r}, drop={r.accuracy_drop}, "
              f"iters={r.iterations}{', copied' if r.copied else ''})")
    return 0


def cmd_estimate_p(args) -> int:
    out = _out_dir(args)
    model = modelio.load_model(args.model)
    dataset = modelio.load_dataset(args.data)
    p_probes = probes.estimate_p(model, dataset, b_probe=args.b_probe, threads=args.threads)
    profiles = []
    for r in p_probes:
        layer = model.layers[r.index]
        w = layer.weights
        profiles.append(probes.LayerProfile(
            index=r.index, kind=layer.kind, s=layer.param_count, t=float("nan"), p=r.p,
            noise_scale=float("nan"), delta_acc=float("nan"), b_probe=r.b_probe,
            weight_range=(float(w.min()), float(w.max())), degenerate=r.degenerate))
    path = modelio.save_profiles(profiles, out / "profiles_p.json",
                                 meta={"b_probe": args.b_probe})
    csv_path = modelio.save_profiles_csv(profiles, out / "profiles_p.csv")
    _write_manifest(args, out, [path, csv_path])
    for r in p_probes:
        flag = " (degenerate)" if r.degenerate else ""
        print(f"layer {r.index}: p={r.p!r} at b={r.b_probe}{flag}")
    return 0


def cmd_allocate(args) -> int:
    out = _out_dir(args)
    profiles, _ = _load_merged_profiles(args.profiles)
    sizes = [p.s for p in profiles]
    pinned = None
    if args.fc_bits is not None:
        pinned = {i: args.fc_bits for i, p in enumerate(profiles) if p.kind == "dense"}
    if args.method == "adaptive":
        allocation = allocate.allocate_adaptive(profiles, args.b1, pinned=pinned)
    elif args.method == "sqnr":
        allocation = allocate.allocate_sqnr(sizes, args.b1, pinned=pinned)
    else:
        allocation = allocate.allocate_equal(int(round(args.b1)), sizes)
    path = modelio.save_allocation(allocation, out / "allocation.json")
    _write_manifest(args, out, [path])
    b_real = ", ".join(f"{b:g}" for b in allocation.b_real)
    print(f"method={allocation.method} b=({b_real}) b_int={list(allocation.b_int)} "
          f"size_bits={allocation.size_bits}")
    return 0


def cmd_quantize(args) -> int:
    out = _out_dir(args)
    model = modelio.load_model(args.model)
    allocation = modelio.load_allocation(args.allocation)
    q = quantize.quantize_model(model, allocation)
    paths = modelio.save_model(q, out / args.name)
    _write_manifest(args, out, list(paths))
    print(f"quantized model written with b={list(allocation.b_int)}, "
          f"size_bits={allocation.size_bits}")
    return 0


def cmd_evaluate(args) -> int:
    model = modelio.load_model(args.model)
    dataset = modelio.load_dataset(args.data)
    acc = nn.evaluate_accuracy(model, dataset, threads=args.threads)
    print(f"top1 {acc!r} on {len(dataset)} samples")
    if args.out:
        out = _out_dir(args)
        path = modelio.write_json(out / "evaluation.json", {
            "format_version": modelio.FORMAT_VERSION, "top1": acc, "n": len(dataset)})
        _write_manifest(args, out, [path])
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    model = modelio.load_model(args.model)
    dataset = modelio.load_dataset(args.data)
    profiles, _ = _load_merged_profiles(args.profiles)
    anchors = _parse_grid(args.b1_grid)
    methods = tuple(args.methods.split(","))
    _progress(f"sweeping {len(anchors)} anchors x {methods}")
    curves = harness.sweep(model, dataset, profiles, b1_values=anchors, methods=methods,
                           max_variants=args.max_variants, fc_bits=args.fc_bits,
                           threads=args.threads)
    points = sorted((p for pts in curves.values() for p in pts),
                    key=lambda p: (p.method, p.b1, p.variant))
    path = modelio.save_curve(points, out / "curve.csv")
    _write_manifest(args, out, [path])
    print(f"{len(points)} curve points -> {path}")
    return 0


def cmd_compare(args) -> int:
    out = _out_dir(args)
    curves: dict[str, list[harness.CurvePoint]] = {}
    for path in args.curves:
        for row in modelio.load_curve(path):
            pt = harness.CurvePoint(row["method"], row["b1"], row["variant"],
                                    row["size_bits"], row["size_mb"], row["top1"])
            curves.setdefault(pt.method, []).append(pt)
    if len(curves) < 2:
        return _err(f"need curves from at least two methods, found {sorted(curves)}")
    report = harness.compare(curves, candidate=args.candidate)
    path = modelio.write_json(out / "comparison.json", harness.comparison_payload(report))
    _write_manifest(args, out, [path])
    for e in report.entries:
        if e.disjoint:
            print(f"{report.candidate} vs {e.baseline}: no overlapping accuracy range")
        else:
            print(f"{report.candidate} vs {e.baseline}: dominance {e.dominance_fraction:.2%} "
                  f"over {len(e.accuracies)} matched levels, "
                  f"median size ratio {sorted(e.ratios)[len(e.ratios) // 2]:.3f}")
    return 0


def cmd_lemma_check(args) -> int:
    report = probes.lemma_check(args.d, args.delta, args.trials, seed=args.seed)
    status = "ok" if report.passed else "VIOLATED"
    print(f"d={report.d} delta={report.delta}: flip rate {report.flip_rate} "
          f"<= bound {report.bound}: {status}")
    if args.out:
        out = _out_dir(args)
        path = modelio.write_json(out / "lemma.json", {
            "format_version": modelio.FORMAT_VERSION, **asdict(report),
            "passed": report.passed})
        _write_manifest(args, out, [path])
    return 0 if report.passed else 2


def cmd_verify(args) -> int:
    if args.model:
        model = modelio.load_model(args.model)
        dataset = modelio.load_dataset(args.data) if args.data else modelio.gen_dataset(
            model, args.n, seed=args.fixture_seed + 1)
    else:
        _progress("no model given; generating the default fixture")
        model = modelio.gen_model(modelio.default_fixture(seed=args.fixture_seed))
        dataset = modelio.gen_dataset(model, args.n, seed=args.fixture_seed + 1)
    config = harness.VerifyConfig(
        seed=args.seed, threads=args.threads,
        quantizer_weights=10_000 if args.quick else 100_000,
        lemma_trials=2000 if args.quick else 10_000,
        kkt_sets=20 if args.quick else 100,
        grid_step=0.05 if args.quick else 0.01,
        anchors=tuple(_parse_grid(args.b1_grid)) if args.b1_grid else None,
        max_variants=4 if args.quick else 16)
    results = harness.verify(model, dataset, config)
    failures = 0
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
        failures += 0 if r.passed else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    if args.out:
        out = _out_dir(args)
        path = modelio.write_json(out / "verify.json", {
            "format_version": modelio.FORMAT_VERSION,
            "results": [asdict(r) for r in results]})
        _write_manifest(args, out, [path])
    return 0 if failures == 0 else 2


def _parse_grid(text: str | None):
    """Anchor grid: 'lo:hi:step' or a comma-separated list."""
    if not text:
        return harness.default_anchor_grid()
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        n = int(round((hi - lo) / step))
        return [lo + i * step for i in range(n + 1)]
    return [float(v) for v in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qalloc",
        description="Adaptive per-layer bit-width allocation for network quantization.")
    parser.add_argument("--version", action="version", version=f"qalloc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=fn, command=name)
        p.add_argument("--out", help="output directory (default: $QALLOC_OUTDIR or .)")
        p.add_argument("--threads", type=int, default=1, help="worker thread cap")
        return p

    p = add("gen-model", cmd_gen_model, "generate the deterministic fixture model")
    p.add_argument("--seed", type=int, default=modelio.DEFAULT_SEED)
    p.add_argument("--name", default="fixture", help="output file prefix")

    p = add("gen-data", cmd_gen_data, "generate a teacher-labelled dataset for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--seed", type=int, default=modelio.DEFAULT_SEED + 1)
    p.add_argument("--name", default="data", help="output file prefix")

    p = add("margins", cmd_margins, "decision-margin statistics on the last feature map")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = add("estimate-t", cmd_estimate_t, "per-layer robustness t via noise binary search")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--delta-acc", type=float, default=None,
                   help="target accuracy drop (default: half of baseline)")
    p.add_argument("--acc-tolerance", type=float, default=0.005)
    p.add_argument("--max-iters", type=int, default=40)
    p.add_argument("--last-n", type=int, default=None,
                   help="probe only the last N weighted layers, copy t backward")
    p.add_argument("--seed", type=int, default=0)

    p = add("estimate-p", cmd_estimate_p, "per-layer noise coefficient p at a probe bit-width")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--b-probe", type=int, default=10)

    p = add("allocate", cmd_allocate, "closed-form bit-width allocation from profiles")
    p.add_argument("--profiles", action="append", required=True,
                   help="profiles JSON (repeat to merge t-only and p-only files)")
    p.add_argument("--method", choices=("adaptive", "sqnr", "equal"), default="adaptive")
    p.add_argument("--b1", type=float, required=True, help="anchor bit-width")
    p.add_argument("--fc-bits", type=int, default=None, help="pin dense layers to this bit-width")

    p = add("quantize", cmd_quantize, "apply an allocation to a model")
    p.add_argument("--model", required=True)
    p.add_argument("--allocation", required=True)
    p.add_argument("--name", default="quantized", help="output file prefix")

    p = add("evaluate", cmd_evaluate, "top-1 accuracy of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)

    p = add("sweep", cmd_sweep, "size-vs-accuracy curves over an anchor grid")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--profiles", action="append", required=True)
    p.add_argument("--b1-grid", default=None, help="lo:hi:step or comma list (default 4:12:0.5)")
    p.add_argument("--methods", default="adaptive,sqnr,equal")
    p.add_argument("--max-variants", type=int, default=16)
    p.add_argument("--fc-bits", type=int, default=None)

    p = add("compare", cmd_compare, "matched-accuracy size ratios between methods")
    p.add_argument("--curves", nargs="+", required=True, help="curve CSV files")
    p.add_argument("--candidate", default=None)

    p = add("lemma-check", cmd_lemma_check, "Monte Carlo check of the noise bound")
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)

    p = add("verify", cmd_verify, "run the full verification battery")
    p.add_argument("--model", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--n", type=int, default=2000, help="dataset size when generating")
    p.add_argument("--seed", type=int, default=0, help="seed for probes and checks")
    p.add_argument("--fixture-seed", type=int, default=modelio.DEFAULT_SEED,
                   help="seed for generating the fixture when no model is given")
    p.add_argument("--b1-grid", default=None)
    p.add_argument("--quick", action="store_true", help="scaled-down battery for smoke tests")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (modelio.LoadError, probes.CalibrationError, nn.ShapeError, ValueError) as e:
        return _err(str(e))
    except OSError as e:
        return _err(str(e))


if __name__ == "__main__":
    sys.exit(main())
