"""Command-line surface for the offline-training / online-prediction
workflow.

Subcommands::

    polyhom rve gen        synthetic textured RVE -> .npz
    polyhom dataset build  RVEs -> homogenized-stiffness labels + graphs
    polyhom train gnn      dataset -> graph-network checkpoint + loss CSV
    polyhom ablate n       depth sweep -> validation-error table CSV
    polyhom infer          RVE + checkpoint -> material-network params
    polyhom predict        params + load program -> history + texture CSVs
    polyhom unitcell export params -> voxel unit-cell RVE
    polyhom polefigure     orientations -> stereographic pole histogram CSV
    polyhom metrics        prediction vs reference -> metrics JSON

All randomness derives from a single ``--seed`` recorded in every output;
every file carries a schema version.  Exit codes: 0 success, 2 input or
validation failure, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time

import numpy as np

from . import cp, fft, gnn, graphs, metrics, network, rotations, rve, sampling

DATASET_FORMAT_VERSION = 1
HISTORY_FORMAT_VERSION = 1
TEXTURE_FORMAT_VERSION = 1
POLEFIG_FORMAT_VERSION = 1
REPORT_FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

# Named texture classes: (components, background weight).  "strong" is a
# near-single-orientation texture, "weak" a mild preference, "uniform" the
# random background only.
TEXTURE_CLASSES = {
    "strong": ([(np.array([1.0, 0.0, 0.0, 0.0]), 5e5, np.radians(5.0))], 1.0),
    "weak": ([(np.array([1.0, 0.0, 0.0, 0.0]), 5.0, np.radians(15.0))], 1.0),
    "uniform": ([], 1.0),
}


def texture_spec(name):
    if name not in TEXTURE_CLASSES:
        raise ValueError(
            f"unknown texture class {name!r}; choose from "
            f"{sorted(TEXTURE_CLASSES)}")
    comps, bg = TEXTURE_CLASSES[name]
    return rve.TextureSpec(
        components=[rve.TextureComponent(q, w, s) for q, w, s in comps],
        background_weight=bg)


# ------------------------------------------------------------------
# small CSV/JSON helpers (seed + schema version in every header)
# ------------------------------------------------------------------

def _write_csv(path, header_meta, columns, rows):
    with open(path, "w", newline="") as f:
        for k, v in header_meta.items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f)
        w.writerow(columns)
        w.writerows(rows)


def _read_csv(path):
    meta, rows = {}, []
    with open(path, newline="") as f:
        for line in f:
            if line.startswith("#"):
                k, _, v = line[1:].strip().partition("=")
                meta[k.strip()] = v.strip()
                continue
            rows.append(line)
    r = list(csv.reader(rows))
    return meta, r[0], r[1:]


# ------------------------------------------------------------------
# rve gen
# ------------------------------------------------------------------

def cmd_rve_gen(args):
    spec = texture_spec(args.texture)
    triple = (args.c11, args.c12, args.c44)
    r = rve.make_rve(args.dims, args.grains, spec, triple, seed=args.seed)
    r.meta.update(texture=args.texture, seed=args.seed)
    rve.save_rve(r, args.out)
    # texture class + seed ride alongside in a small JSON sidecar so the
    # dataset builder can do the class-balanced split
    with open(str(args.out) + ".json", "w") as f:
        json.dump({"version": rve.RVE_FORMAT_VERSION,
                   "texture": args.texture, "seed": args.seed,
                   "dims": args.dims, "grains": args.grains}, f)
    print(f"wrote {args.out} ({args.grains} grains, {args.dims}^3, "
          f"texture={args.texture}, seed={args.seed})")


# ------------------------------------------------------------------
# dataset build
# ------------------------------------------------------------------

def _rve_texture_class(path):
    try:
        with open(str(path) + ".json") as f:
            return json.load(f).get("texture", "unknown")
    except FileNotFoundError:
        return "unknown"


def label_rve(r, n_pairs, depth, seed, tol=1e-8):
    """Graph, reduced orientation sample, and FFT stiffness labels for one
    RVE.  Returns (features, edges, sample, C_crystal (P,6,6), C_dns)."""
    vol = r.volume_fractions()
    sample, _dev = sampling.tacs_run(r.orientations, depth, weights=vol,
                                     seed=seed)
    graph = graphs.build_graph(r, sample)
    triples = rve.sample_elastic_triples(n_pairs, seed=seed + 1)
    Cc = np.empty((n_pairs, 6, 6))
    Cd = np.empty((n_pairs, 6, 6))
    for p, (c11, c12, c44) in enumerate(triples):
        C0 = rotations.cubic_stiffness(c11, c12, c44)
        Cs = np.array([rotations.rotate_stiffness(C0, q)
                       for q in r.orientations])
        prob = fft.FftProblem(r.grain_ids, Cs, tol=tol)
        Cc[p] = C0
        Cd[p] = fft.homogenized_stiffness(prob)
    return graph.features, graph.edges, sample, Cc, Cd


def cmd_dataset_build(args):
    arrays = {"version": DATASET_FORMAT_VERSION, "seed": args.seed,
              "depth": args.depth, "n_entries": len(args.rves)}
    classes = []
    for i, path in enumerate(args.rves):
        r = rve.load_rve(path)
        feats, edges, sample, Cc, Cd = label_rve(
            r, args.pairs, args.depth, seed=args.seed + 100 * i,
            tol=args.tol)
        arrays[f"e{i}_features"] = feats
        arrays[f"e{i}_edges"] = edges
        arrays[f"e{i}_sample"] = sample
        arrays[f"e{i}_Cc"] = Cc
        arrays[f"e{i}_Cdns"] = Cd
        classes.append(_rve_texture_class(path))
        print(f"labeled {path} ({args.pairs} pairs)")
    arrays["classes"] = np.array(classes)
    np.savez_compressed(args.out, **arrays)
    print(f"wrote {args.out} ({len(args.rves)} entries, "
          f"{args.pairs} pairs each, depth={args.depth}, seed={args.seed})")


def load_dataset(path):
    """Dataset file -> (entries, classes, depth, seed)."""
    with np.load(path, allow_pickle=False) as d:
        if int(d["version"]) != DATASET_FORMAT_VERSION:
            raise ValueError(
                f"unsupported dataset version {d['version']}")
        n = int(d["n_entries"])
        entries = [gnn.DatasetEntry(
            features=d[f"e{i}_features"], edges=d[f"e{i}_edges"],
            sample_quats=d[f"e{i}_sample"], C_crystal=d[f"e{i}_Cc"],
            C_dns=d[f"e{i}_Cdns"]) for i in range(n)]
        classes = [str(c) for c in d["classes"]]
        return entries, classes, int(d["depth"]), int(d["seed"])


def split_by_class(entries, classes, seed, fractions=(0.8, 0.1, 0.1)):
    """Per-texture-class 80/10/10 split; returns (train, val, test) lists."""
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for cls in sorted(set(classes)):
        idx = [i for i, c in enumerate(classes) if c == cls]
        idx = list(rng.permutation(idx))
        n = len(idx)
        n_test = int(round(fractions[2] * n))
        n_val = int(round(fractions[1] * n))
        n_val = min(n_val, n - n_test)
        cut1 = n - n_test - n_val
        cut2 = n - n_test
        for part, sl in zip(parts, (idx[:cut1], idx[cut1:cut2], idx[cut2:])):
            part.extend(sl)
    return tuple([entries[i] for i in part] for part in parts)


# ------------------------------------------------------------------
# train gnn / ablate n
# ------------------------------------------------------------------

def _train_on_dataset(dataset_path, depth, args):
    entries, classes, ds_depth, _ = load_dataset(dataset_path)
    if depth != ds_depth:
        raise ValueError(
            f"requested depth {depth} but dataset was reduced at depth "
            f"{ds_depth}; rebuild the dataset")
    train, val, test = split_by_class(entries, classes, args.seed)
    cfg = gnn.EndToEndConfig(lr=args.lr, epochs=args.epochs, seed=args.seed,
                             patience=args.patience)
    model, history = gnn.train_end_to_end(train, depth, cfg,
                                          val_dataset=val or None)
    test_loss = None
    if test:
        import torch
        with torch.no_grad():
            test_loss = float(gnn.pipeline_loss(
                model, [gnn._entry_tensors(e) for e in test], depth))
    return model, history, test_loss


def cmd_train_gnn(args):
    t0 = time.time()
    model, history, test_loss = _train_on_dataset(args.dataset, args.depth,
                                                  args)
    model.save(args.out)
    _write_csv(args.history, {"version": HISTORY_FORMAT_VERSION,
                              "seed": args.seed, "depth": args.depth,
                              "test_loss": test_loss,
                              "runtime_s": round(time.time() - t0, 3)},
               ["epoch", "train_loss", "val_loss"], history)
    best_val = min(h[2] for h in history)
    print(f"wrote {args.out}; best val loss {best_val:.5f}"
          + (f", test loss {test_loss:.5f}" if test_loss is not None else ""))


def cmd_ablate_n(args):
    rows = []
    for depth, ds_path in zip(args.depths, args.datasets):
        t0 = time.time()
        _, history, test_loss = _train_on_dataset(ds_path, depth, args)
        best_val = min(h[2] for h in history)
        rows.append([depth, f"{best_val:.8f}",
                     "" if test_loss is None else f"{test_loss:.8f}",
                     round(time.time() - t0, 3)])
        print(f"depth {depth}: best val loss {best_val:.5f}")
    _write_csv(args.out, {"version": HISTORY_FORMAT_VERSION,
                          "seed": args.seed},
               ["depth", "val_loss", "test_loss", "runtime_s"], rows)
    print(f"wrote {args.out}")


# ------------------------------------------------------------------
# infer / predict / unitcell / polefigure / metrics
# ------------------------------------------------------------------

def cmd_infer(args):
    r = rve.load_rve(args.rve)
    model = gnn.GnnModel.load(args.model)
    vol = r.volume_fractions()
    sample, _ = sampling.tacs_run(r.orientations, model.depth, weights=vol,
                                  seed=args.seed)
    graph = graphs.build_graph(r, sample)
    params = gnn.predict_params(model, graph.features, graph.edges, sample)
    params.save(args.out)
    print(f"wrote {args.out} (depth {params.depth}, seed={args.seed})")


def _load_program(args):
    if args.program == "cyclic":
        return [cp.LoadSegment((0, 0), args.rate, target=args.target),
                cp.LoadSegment((0, 0), -args.rate, until_zero_stress=True),
                cp.LoadSegment((0, 0), args.rate, target=args.target)]
    if args.program == "tension":
        return [cp.LoadSegment((0, 0), args.rate, target=args.target)]
    if args.program == "shear":
        return [cp.LoadSegment((1, 0), args.rate, target=args.target - 1.0)]
    raise ValueError(f"unknown load program {args.program!r}")


_F_COLS = [f"F{i+1}{j+1}" for i in range(3) for j in range(3)]
_P_COLS = [f"P{i+1}{j+1}" for i in range(3) for j in range(3)]


def cmd_predict(args):
    params = network.OdmnParams.load(args.params)
    solver = cp.OnlineSolver(params, cp.CpParams())
    program = _load_program(args)
    hist, snaps = cp.run_program(solver, program, dt=args.dt,
                                 snapshot_every=args.snapshot_every,
                                 max_steps=args.max_steps)
    rows = [[t] + list(F.reshape(-1)) + list(P.reshape(-1)) + [hm]
            for t, F, P, hm in zip(hist["t"], hist["F"], hist["P"],
                                   hist["hill_mandel"])]
    _write_csv(args.history, {"version": HISTORY_FORMAT_VERSION,
                              "program": args.program, "dt": args.dt},
               ["t"] + _F_COLS + _P_COLS + ["hill_mandel"], rows)
    trows = []
    for si, (t, quats, w) in enumerate(snaps):
        for i, (q, wi) in enumerate(zip(quats, w)):
            trows.append([si, t, i, *q, wi])
    _write_csv(args.texture, {"version": TEXTURE_FORMAT_VERSION},
               ["snapshot", "t", "leaf", "q0", "q1", "q2", "q3", "weight"],
               trows)
    print(f"wrote {args.history} ({len(rows)} steps) and {args.texture} "
          f"({len(snaps)} snapshots)")


def cmd_unitcell_export(args):
    params = network.OdmnParams.load(args.params)
    cell = cp.export_analogous_unit_cell(params, args.dims)
    rve.save_rve(cell, args.out)
    print(f"wrote {args.out} ({args.dims}^3, {cell.n_grains} subdomains)")


_POLES = {"100": np.array([[1., 0, 0], [0, 1, 0], [0, 0, 1]]),
          "111": np.array([[1., 1, 1], [1, -1, 1], [-1, 1, 1], [1, 1, -1]])
          / np.sqrt(3.0)}


def pole_figure_histogram(quats, weights, family="111", bins=32):
    """Stereographic-projection histogram of a pole family.

    Poles are mapped to the upper hemisphere (antipodal equivalence) and
    projected as (x/(1+z), y/(1+z)) into [-1, 1]^2.  Returns (bins, bins)
    counts weighted by grain weight.
    """
    dirs = _POLES[family]
    H = np.zeros((bins, bins))
    for q, w in zip(quats, weights):
        R = rotations.matrix_from_quat(q)
        for d in dirs:
            for sgn in (1.0, -1.0):
                v = sgn * (R @ d)
                if v[2] < 0:
                    continue
                x = v[0] / (1.0 + v[2])
                y = v[1] / (1.0 + v[2])
                i = min(int((x + 1.0) / 2.0 * bins), bins - 1)
                j = min(int((y + 1.0) / 2.0 * bins), bins - 1)
                H[i, j] += w
    return H


def cmd_polefigure(args):
    r = rve.load_rve(args.rve)
    H = pole_figure_histogram(r.orientations, r.volume_fractions(),
                              family=args.family, bins=args.bins)
    rows = [[i, j, H[i, j]] for i in range(args.bins)
            for j in range(args.bins) if H[i, j] > 0]
    _write_csv(args.out, {"version": POLEFIG_FORMAT_VERSION,
                          "family": args.family, "bins": args.bins},
               ["i", "j", "weight"], rows)
    print(f"wrote {args.out}")


def _history_series(path, component):
    _, cols, rows = _read_csv(path)
    if component not in cols:
        raise ValueError(f"column {component!r} not in {path} "
                         f"(have {cols})")
    c = cols.index(component)
    return np.array([float(r[c]) for r in rows])


def cmd_metrics(args):
    report = {"version": REPORT_FORMAT_VERSION}
    if args.pred_history:
        p = _history_series(args.pred_history, args.component)
        r = _history_series(args.ref_history, args.component)
        if len(p) != len(r):
            raise ValueError(
                f"history length mismatch: {len(p)} vs {len(r)}")
        mean_rel, max_rel = metrics.relative_errors(r, p)
        report["component"] = args.component
        report["mean_rel_error"] = mean_rel
        report["max_rel_error"] = max_rel
    if args.pred_rve:
        rp = rve.load_rve(args.pred_rve)
        rr = rve.load_rve(args.ref_rve)
        hp = sampling.build_histogram(rp.orientations,
                                      rp.volume_fractions())
        hr = sampling.build_histogram(rr.orientations,
                                      rr.volume_fractions())
        report["texture_index"] = metrics.texture_index(hp, hr)
    if len(report) == 1:
        raise ValueError("nothing to compare: pass --pred-history/"
                         "--ref-history and/or --pred-rve/--ref-rve")
    with open(args.out, "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report, indent=2))


# ------------------------------------------------------------------
# argument parsing
# ------------------------------------------------------------------

def build_parser():
    top = argparse.ArgumentParser(
        prog="polyhom",
        description="Polycrystal homogenization surrogate pipeline")
    top.add_argument("--config", help="JSON file of default option values "
                     "(flags override)")
    sub = top.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("rve", help="RVE generation").add_subparsers(
        dest="sub", required=True).add_parser("gen")
    p.add_argument("--texture", default="uniform",
                   choices=sorted(TEXTURE_CLASSES))
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--grains", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--c11", type=float, default=107.3)
    p.add_argument("--c12", type=float, default=60.8)
    p.add_argument("--c44", type=float, default=28.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rve_gen)

    p = sub.add_parser("dataset", help="dataset labeling").add_subparsers(
        dest="sub", required=True).add_parser("build")
    p.add_argument("--rves", nargs="+", required=True)
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset_build)

    p = sub.add_parser("train", help="training").add_subparsers(
        dest="sub", required=True).add_parser("gnn")
    p.add_argument("--dataset", required=True)
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--history", required=True)
    p.set_defaults(func=cmd_train_gnn)

    p = sub.add_parser("ablate", help="depth ablation").add_subparsers(
        dest="sub", required=True).add_parser("n")
    p.add_argument("--datasets", nargs="+", required=True,
                   help="one dataset file per depth, same order as --depths")
    p.add_argument("--depths", nargs="+", type=int, required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate_n)

    p = sub.add_parser("infer", help="RVE + checkpoint -> network params")
    p.add_argument("--rve", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("predict", help="online nonlinear prediction")
    p.add_argument("--params", required=True)
    p.add_argument("--program", default="tension",
                   choices=["tension", "cyclic", "shear"])
    p.add_argument("--target", type=float, default=1.05)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--snapshot-every", type=int, default=50)
    p.add_argument("--max-steps", type=int, default=20000)
    p.add_argument("--history", required=True)
    p.add_argument("--texture", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("unitcell", help="unit-cell export").add_subparsers(
        dest="sub", required=True).add_parser("export")
    p.add_argument("--params", required=True)
    p.add_argument("--dims", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_unitcell_export)

    p = sub.add_parser("polefigure", help="pole-figure histogram CSV")
    p.add_argument("--rve", required=True)
    p.add_argument("--family", default="111", choices=sorted(_POLES))
    p.add_argument("--bins", type=int, default=32)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_polefigure)

    p = sub.add_parser("metrics", help="prediction-vs-reference metrics")
    p.add_argument("--pred-history")
    p.add_argument("--ref-history")
    p.add_argument("--component", default="P11")
    p.add_argument("--pred-rve")
    p.add_argument("--ref-rve")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)
    return top


def _all_parsers(parser):
    """The parser plus every (nested) subcommand parser."""
    out = [parser]
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                out.extend(_all_parsers(child))
    return out


def main(argv=None):
    parser = build_parser()
    args, _ = parser.parse_known_args(argv)
    if getattr(args, "config", None):
        # subparsers re-apply their own defaults over the parent namespace,
        # so config defaults must be installed on every leaf parser
        try:
            with open(args.config) as f:
                overrides = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            print(f"error: bad config file: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        for sp in _all_parsers(parser):
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k: v for k, v in overrides.items()
                               if k in known})
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return EXIT_OK
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (fft.FftConvergenceError, cp.LocalNewtonError,
            cp.OnlineNewtonError, network.DivergenceError,
            gnn.TrainingAbort, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
