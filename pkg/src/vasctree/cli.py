"""Command-line front end tying the pipeline together.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Lattice coordinates in flags are given as x,y (column,row); graph JSON
stores positions row-major as [y, x].
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .errors import DataError, NumericalError
from .hemo import SimConfig, delta_p_av, morph_stats, propagate, root_and_orient
from .loss import LossConfig, total_loss
from .metrics import accuracy, betti_error, cal, cldice, dice, hausdorff
from .murray import build_table, fixed_table
from .raster import ARTERY, VEIN, MaskGrid, ScalarField, edt
from .skeleton import soft_skeleton, thin
from .synth import gen_av_pair, gen_tree
from .vessgraph import bifurcations, extract_graph, graph_from_json, graph_to_json


def _check_threads_env():
    val = os.environ.get("VASCTREE_THREADS")
    if val is None:
        return
    try:
        n = int(val)
    except ValueError as exc:
        raise DataError(f"VASCTREE_THREADS must be an integer, got {val!r}") from exc
    if n < 1:
        raise DataError("VASCTREE_THREADS must be >= 1")


def _parse_coords(text: str, n: int, flag: str):
    parts = text.split(",")
    if len(parts) != n:
        raise DataError(f"{flag} expects {n} comma-separated values, got {text!r}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise DataError(f"{flag}: {exc}") from exc


def _out(text: str, path: str | None):
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _cmd_edt(args) -> int:
    mask = fileio.read_mask(args.mask)
    field = edt(mask, cls=args.cls, physical=args.physical)
    fileio.write_field(args.output, field)
    return 0


def _cmd_skeletonize(args) -> int:
    mask = fileio.read_mask(args.mask)
    if args.soft:
        field = ScalarField(mask.labels.astype(np.float64), mask.spacing)
        sk = soft_skeleton(field, args.iters)
        fileio.write_field(args.output, sk)
    else:
        fileio.write_mask(args.output, thin(mask))
    return 0


def _cmd_graph(args) -> int:
    mask = fileio.read_mask(args.mask)
    cls = {"artery": ARTERY, "vein": VEIN, None: ARTERY}[args.cls]
    g = extract_graph(mask, cls=cls, um_per_px=args.um_per_px)
    Path(args.output).write_text(graph_to_json(g))
    return 0


def _cmd_calibrate(args) -> int:
    records = []
    for path in args.graphs:
        g = graph_from_json(Path(path).read_text())
        records.extend(bifurcations(g))
    if not records:
        raise NumericalError("no bifurcation records in the given graphs")
    table = build_table(records)
    fileio.write_table(args.output, table)
    lo, hi = table.ci
    sys.stdout.write(f"pooled alpha 95% CI: ({lo:.4f}, {hi:.4f}) "
                     f"from {table.n_records} accepted records\n")
    return 0


def _cmd_murray_loss(args) -> int:
    prob = fileio.read_field(args.prob)
    rm = fileio.read_field(args.radius)
    gt = fileio.read_mask(args.gt)
    rm_gt = fileio.read_field(args.gt_radius)
    table = fileio.read_table(args.table)
    cfg = LossConfig(um_per_px=args.um_per_px)
    report = total_loss(prob, rm, gt, rm_gt, table, cfg)
    doc = json.loads(report.to_json())
    if args.gradcheck:
        doc["gradcheck"] = _gradcheck(prob, rm, gt, rm_gt, table, cfg,
                                      report, args.gradcheck)
    _out(json.dumps(doc, indent=1), args.output)
    return 0


def _gradcheck(prob, rm, gt, rm_gt, table, cfg, report, n_cells: int,
               h: float = 1e-4, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    shape = prob.dims
    cells = [tuple(int(rng.integers(1, s - 1)) for s in shape)
             for _ in range(n_cells)]

    def total_at(p_values, rm_values):
        return total_loss(ScalarField(p_values, prob.spacing),
                          ScalarField(rm_values, rm.spacing),
                          gt, rm_gt, table, cfg).total

    grad_p = next(iter(report.grad_p.values()))
    checked = passed = 0
    for cell in cells:
        for which, grad in (("p", grad_p), ("rm", report.grad_rm)):
            base = prob.values if which == "p" else rm.values
            plus, minus = base.copy(), base.copy()
            plus[cell] += h
            minus[cell] -= h
            if which == "p" and (plus[cell] > 1 or minus[cell] < 0):
                continue
            if which == "p":
                fd = (total_at(plus, rm.values) - total_at(minus, rm.values)) / (2 * h)
            else:
                fd = (total_at(prob.values, plus) - total_at(prob.values, minus)) / (2 * h)
            an = grad[cell]
            checked += 1
            denom = max(abs(fd), abs(an))
            if denom <= 1e-9 or abs(fd - an) / denom < 1e-3:
                passed += 1
    return {"checked": checked, "passed": passed,
            "pass_rate": passed / checked if checked else 1.0}


def _cmd_metrics(args) -> int:
    pred = fileio.read_mask(args.pred)
    gt = fileio.read_mask(args.gt)
    spacing = None
    if args.spacing is not None:
        spacing = (args.spacing,) * pred.ndim
        pred = MaskGrid(pred.labels, spacing)
        gt = MaskGrid(gt.labels, spacing)
    multi = int(pred.labels.max(initial=0)) > 1 or int(gt.labels.max(initial=0)) > 1
    classes = [(ARTERY, "artery"), (VEIN, "vein")] if multi else [(ARTERY, "vessel")]
    header = ["id", "acc"]
    row = [Path(args.pred).stem, f"{accuracy(pred, gt):.6f}"]
    for cls, name in classes:
        b0, b1 = betti_error(pred, gt, cls)
        header += [f"{name}_dice", f"{name}_cldice", f"{name}_b0_err",
                   f"{name}_b1_err", f"{name}_hd"]
        row += [f"{dice(pred, gt, cls):.6f}", f"{cldice(pred, gt, cls):.6f}",
                str(b0), str(b1), f"{hausdorff(pred, gt, cls):.6f}"]
    c = cal(pred, gt)
    header += ["cal_c", "cal_a", "cal_l", "cal"]
    row += [f"{c.connectivity:.6f}", f"{c.area:.6f}", f"{c.length:.6f}",
            f"{c.product:.6f}"]
    _out(",".join(header) + "\n" + ",".join(row), args.output)
    return 0


def _cmd_simulate(args) -> int:
    art = graph_from_json(Path(args.artery).read_text())
    ven = graph_from_json(Path(args.vein).read_text())
    x, y = _parse_coords(args.disc, 2, "--disc")
    mx, my, mr = _parse_coords(args.macula, 3, "--macula")
    cfg = SimConfig(p_in=args.p_in, p_out=args.p_out, eta=args.eta,
                    k_scale=args.k_scale, disc=(y, x),
                    macula_center=(my, mx), macula_radius=mr,
                    venous_sign=args.venous_sign)
    table = fileio.read_table(args.table) if args.table else fixed_table(args.alpha)
    art_fg = propagate(root_and_orient(art, cfg.disc, cls="artery"), cfg, table)
    ven_fg = propagate(root_and_orient(ven, cfg.disc, cls="vein"), cfg, table)
    value, per_path = delta_p_av(art_fg, ven_fg, cfg)
    doc = {
        "delta_p_av": value,
        "p_in": cfg.p_in,
        "p_out": cfg.p_out,
        "per_path": per_path,
        "flags": [dict(r, **{"class": name})
                  for fg, name in ((art_fg, "artery"), (ven_fg, "vein"))
                  for r in fg.removed_edges],
    }
    _out(json.dumps(doc, indent=1), args.output)
    return 0


def _cmd_morph_stats(args) -> int:
    lines = ["class,n_angles,branch_angle_deg,radius_continuity,bifurcation_asymmetry"]
    for path in args.graphs:
        g = graph_from_json(Path(path).read_text())
        st = morph_stats(g)
        lines.append(f"{g.cls},{len(st.branch_angles_deg)},{st.mean_angle:.4f},"
                     f"{st.mean_radius_continuity:.4f},{st.mean_asymmetry:.4f}")
    _out("\n".join(lines), args.output)
    return 0


def _cmd_synth_tree(args) -> int:
    tree = gen_tree(args.alpha, args.depth, args.root_radius,
                    branch_angle=args.branch_angle,
                    length_ratio=args.length_ratio, seed=args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_pgm(out / "mask.pgm", tree.mask)
    fileio.write_field(out / "rm_gt.grid", tree.rm_gt)
    (out / "graph.json").write_text(graph_to_json(tree.graph))
    return 0


def _cmd_synth_av_pair(args) -> int:
    pair = gen_av_pair(args.alpha, args.depth, args.root_radius,
                       branch_angle=args.branch_angle,
                       length_ratio=args.length_ratio, seed=args.seed,
                       artery_scale=args.artery_scale)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_pgm(out / "artery.pgm", pair.artery_mask)
    fileio.write_pgm(out / "vein.pgm", pair.vein_mask)
    fileio.write_pgm(out / "labels.pgm", pair.labeled)
    (out / "artery.json").write_text(graph_to_json(pair.artery_graph))
    (out / "vein.json").write_text(graph_to_json(pair.vein_graph))
    meta = {
        "disc_xy": [pair.disc[1], pair.disc[0]],
        "macula_xy": [pair.macula_center[1], pair.macula_center[0]],
        "macula_radius": pair.macula_radius,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    return 0


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="vasctree",
                                  description="Vascular-tree analysis toolkit")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("edt", help="exact Euclidean distance transform")
    p.add_argument("mask")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--class", dest="cls", type=int, default=1)
    p.add_argument("--physical", action="store_true",
                   help="scale axes by spacing (anisotropic grids)")
    p.set_defaults(func=_cmd_edt)

    p = sub.add_parser("skeletonize", help="hard thinning or soft skeleton")
    p.add_argument("mask")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--soft", action="store_true")
    p.add_argument("--iters", type=int, default=None)
    p.set_defaults(func=_cmd_skeletonize)

    p = sub.add_parser("graph", help="extract a calibrated vessel graph")
    p.add_argument("mask")
    p.add_argument("--um-per-px", type=float, required=True)
    p.add_argument("--class", dest="cls", choices=["artery", "vein"], default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_graph)

    p = sub.add_parser("calibrate", help="build the width-exponent table")
    p.add_argument("graphs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("murray-loss", help="evaluate the composite loss")
    p.add_argument("--prob", required=True)
    p.add_argument("--radius", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--gt-radius", required=True)
    p.add_argument("--table", required=True)
    p.add_argument("--um-per-px", type=float, default=1.0)
    p.add_argument("--gradcheck", type=int, default=0, metavar="N")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_murray_loss)

    p = sub.add_parser("metrics", help="segmentation and topology metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--spacing", type=float, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("simulate", help="hemodynamic simulation")
    p.add_argument("--artery", required=True)
    p.add_argument("--vein", required=True)
    p.add_argument("--disc", required=True, metavar="X,Y")
    p.add_argument("--macula", required=True, metavar="CX,CY,R")
    p.add_argument("--table", default=None)
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--venous-sign", choices=["paper", "physical"], default="paper")
    p.add_argument("--p-in", type=float, default=76.9)
    p.add_argument("--p-out", type=float, default=21.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--k-scale", type=float, default=1.0)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("morph-stats", help="branch-angle / continuity / asymmetry")
    p.add_argument("graphs", nargs="+")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_morph_stats)

    p = sub.add_parser("synth", help="deterministic synthetic fixtures")
    synth_sub = p.add_subparsers(dest="synth_command", required=True)
    for name, fn in (("tree", _cmd_synth_tree), ("av-pair", _cmd_synth_av_pair)):
        q = synth_sub.add_parser(name)
        q.add_argument("--alpha", type=float, default=3.0)
        q.add_argument("--depth", type=int, default=3)
        q.add_argument("--root-radius", type=float, default=8.0)
        q.add_argument("--branch-angle", type=float, default=55.0)
        q.add_argument("--length-ratio", type=float, default=0.72)
        q.add_argument("--seed", type=int, default=0)
        if name == "av-pair":
            q.add_argument("--artery-scale", type=float, default=1.0)
        q.add_argument("-o", "--output", required=True)
        q.set_defaults(func=fn)
    return top


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _check_threads_env()
        return args.func(args)
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return 3
    except NumericalError as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
