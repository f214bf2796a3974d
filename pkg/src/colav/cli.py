"""Command-line interface.

Subcommands: synth (generate a scene), train, eval, viz (SVG), report
(ablation table), pretrain-patch (patch autoencoder), gradcheck (finite
difference verification). Configuration is a flat JSON namespace: defaults
< --config file < explicit flags, with --ablation expanding to the three
loss-composition booleans. Exit codes: 0 success, 1 missing files or
invalid configuration, 2 non-finite training loss.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import model as M
from . import training as T
from .data import Scene, load_scenes, stack_windows
from .losses import collision_mask
from .metrics import MetricsReport, ade_fde_min, ecfl
from .sampling import SamplingConfig
from .synth import SceneSpec, generate_scene, write_scene
from .viz import render_svg

_MODEL_KEYS = {f.name for f in dataclasses.fields(M.ModelConfig)}
_SAMP_KEYS = {f.name for f in dataclasses.fields(SamplingConfig)}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(T.TrainConfig)}
_EXTRA_KEYS = {"stride"}


def build_configs(flat: dict):
    """Split a flat config dict into the three dataclass configs."""
    unknown = set(flat) - _MODEL_KEYS - _SAMP_KEYS - _TRAIN_KEYS - _EXTRA_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    model_kwargs = {k: v for k, v in flat.items() if k in _MODEL_KEYS}
    if "conv_channels" in model_kwargs:
        model_kwargs["conv_channels"] = tuple(model_kwargs["conv_channels"])
    model_cfg = M.ModelConfig(**model_kwargs)
    samp_cfg = SamplingConfig(**{k: v for k, v in flat.items() if k in _SAMP_KEYS})
    train_cfg = T.TrainConfig(**{k: v for k, v in flat.items() if k in _TRAIN_KEYS})
    return model_cfg, samp_cfg, train_cfg


def _load_flat_config(args) -> dict:
    flat: dict = {}
    if getattr(args, "config", None):
        cfg_path = Path(args.config)
        if not cfg_path.exists():
            raise FileNotFoundError(str(cfg_path))
        loaded = json.loads(cfg_path.read_text())
        if not isinstance(loaded, dict):
            raise ValueError(f"{cfg_path}: config must be a JSON object")
        flat.update(loaded)
    if getattr(args, "ablation", None):
        preset = T.ABLATIONS[args.ablation]
        flat.update(preset)
    overrides = {
        "epochs": getattr(args, "epochs", None),
        "batch_size": getattr(args, "batch_size", None),
        "lr": getattr(args, "lr", None),
        "momentum": getattr(args, "momentum", None),
        "k_samples": getattr(args, "k_samples", None),
        "lambda_env": getattr(args, "lambda_env", None),
        "lambda_nce": getattr(args, "lambda_nce", None),
        "stride": getattr(args, "stride", None),
        "seed": getattr(args, "seed", None),
    }
    flat.update({k: v for k, v in overrides.items() if v is not None})
    return flat


# ---- synth --------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SceneSpec(
        layout=args.layout,
        width_m=args.width,
        height_m=args.height,
        meters_per_pixel=args.mpp,
        density=args.density,
        n_pedestrians=args.peds,
        speed_range=(args.speed_min, args.speed_max),
        clearance_m=args.clearance,
        jitter_std_m=args.jitter,
        seed=args.seed,
        name=args.name,
    )
    occ_map, tracks = generate_scene(spec)
    paths = write_scene(args.out, spec, occ_map, tracks)
    n_points = sum(len(t.points) for t in tracks)
    print(f"scene '{spec.name}': {len(tracks)} pedestrians, {n_points} points")
    print(f"manifest: {paths['manifest']}")
    return 0


# ---- train --------------------------------------------------------------------


def cmd_train(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.resume:
        state, model_cfg, samp_cfg, train_cfg = T.load_state(args.resume)
        if args.epochs is not None:
            train_cfg = dataclasses.replace(train_cfg, epochs=args.epochs)
    else:
        flat = _load_flat_config(args)
        model_cfg, samp_cfg, train_cfg = build_configs(flat)
        state = None
    stride = args.stride if args.stride is not None else 1
    scenes = load_scenes(args.manifest, model_cfg.t_obs, model_cfg.t_pred, stride)
    if args.init_patch:
        init_params_arrays, _, _ = M.load_checkpoint(args.init_patch)
        patch_group = {k: v for k, v in init_params_arrays.items() if k.startswith("patch.")}
    else:
        patch_group = None

    log_path = out / "train_log.jsonl"
    ckpt_path = out / "model.ckpt"
    label = T.ablation_label(model_cfg, train_cfg)
    with open(log_path, "w") as log_file:

        def on_epoch(row: dict) -> None:
            log_file.write(json.dumps(row, sort_keys=True) + "\n")

        try:
            if state is None and patch_group is not None:
                rng = np.random.default_rng(np.random.SeedSequence((train_cfg.seed, 0)))
                params = T.init_train_params(model_cfg, train_cfg, rng)
                for key, value in patch_group.items():
                    if key in params and params[key].shape == value.shape:
                        params[key] = value.copy()
                state = T.TrainState(
                    params=params,
                    velocity={k: np.zeros_like(v) for k, v in params.items()},
                    epoch=0,
                )
            state, _ = T.train(scenes, model_cfg, samp_cfg, train_cfg, state=state, on_epoch=on_epoch)
        except T.NonFiniteLossError as err:
            diag_path = out / "diagnostic.json"
            diag_path.write_text(json.dumps(err.diagnostics, indent=2, sort_keys=True) + "\n")
            print(f"error: {err} (diagnostics in {diag_path})", file=sys.stderr)
            return 2
    T.save_state(ckpt_path, state, model_cfg, samp_cfg, train_cfg)
    (out / "config.json").write_text(
        json.dumps(
            {
                "ablation": label,
                "model": model_cfg.to_dict(),
                "sampling": dataclasses.asdict(samp_cfg),
                "train": train_cfg.to_dict(),
                "stride": stride,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    print(f"trained through epoch {state.epoch - 1} -> {ckpt_path}")
    return 0


# ---- eval ---------------------------------------------------------------------


def evaluate_scenes(
    scenes: list[Scene],
    params: dict | None,
    model_cfg: M.ModelConfig,
    k: int,
    seed: int,
    segment_check: bool = False,
    per_scene: bool = False,
    oracle: bool = False,
) -> MetricsReport:
    """Pooled metrics over every window of every scene.

    With `oracle` the ground-truth future is fed back as a single sample,
    which validates the metric pipeline (ADE = FDE = 0, ECFL = 100 on maps
    whose ground truth never collides).
    """
    tot_ade = tot_fde = 0.0
    tot_glued = 0
    tot_hits = 0
    tot_samples = 0
    scene_rows = {}
    for si, scene in enumerate(scenes):
        if not scene.windows:
            continue
        past, future = stack_windows(scene.windows)
        if oracle:
            preds = future[:, None, :, :].copy()
        else:
            rng = np.random.default_rng(np.random.SeedSequence((seed, si)))
            preds = M.predict(params, model_cfg, past, scene.occ_map, k=k, rng=rng)
        ade, fde = ade_fde_min(preds, future)
        hits = int(collision_mask(preds, scene.occ_map, segment_check).sum())
        n, kk = preds.shape[0], preds.shape[1]
        tot_ade += ade * n
        tot_fde += fde * n
        tot_glued += n
        tot_hits += hits
        tot_samples += n * kk
        if per_scene:
            scene_rows[scene.name] = {
                "ade": ade,
                "fde": fde,
                "ecfl": 100.0 - 100.0 * hits / (n * kk),
                "n_pedestrians": n,
            }
    if tot_glued == 0:
        raise ValueError("no evaluable windows in any scene")
    return MetricsReport(
        ade=tot_ade / tot_glued,
        fde=tot_fde / tot_glued,
        ecfl=100.0 - 100.0 * tot_hits / tot_samples,
        n_pedestrians=tot_glued,
        k_samples=1 if oracle else k,
        per_scene=scene_rows,
    )


def cmd_eval(args) -> int:
    if not args.oracle and not args.checkpoint:
        print("error: --checkpoint required unless --oracle", file=sys.stderr)
        return 1
    params = None
    meta = {}
    if args.checkpoint:
        ckpt = Path(args.checkpoint)
        if not ckpt.exists():
            raise FileNotFoundError(str(ckpt))
        state, model_cfg, _, train_cfg = T.load_state(ckpt)
        params = state.params
        meta = {"ablation": T.ablation_label(model_cfg, train_cfg), "train_seed": train_cfg.seed}
    else:
        model_cfg = M.ModelConfig(use_map=False)
    k = args.k if args.k is not None else model_cfg.k_samples
    scenes = load_scenes(args.manifest, model_cfg.t_obs, model_cfg.t_pred, args.stride)
    reports = [
        evaluate_scenes(
            scenes,
            params,
            model_cfg,
            k=k,
            seed=args.seed + run,
            segment_check=args.segment_check,
            per_scene=args.per_scene,
            oracle=args.oracle,
        )
        for run in range(args.runs)
    ]
    report = reports[0]
    report.extra.update(meta)
    report.extra["eval_seed"] = args.seed
    report.extra["runs"] = args.runs
    if args.runs > 1:
        for name in ("ade", "fde", "ecfl"):
            vals = np.array([getattr(r, name) for r in reports])
            report.extra[f"{name}_mean"] = float(vals.mean())
            report.extra[f"{name}_std"] = float(vals.std(ddof=0))
        report.ade = report.extra["ade_mean"]
        report.fde = report.extra["fde_mean"]
        report.ecfl = report.extra["ecfl_mean"]
    text = report.to_json()
    print(text)
    if args.out:
        out = Path(args.out)
        if out.is_dir():
            out = out / "metrics.json"
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n")
    return 0


# ---- viz ----------------------------------------------------------------------


def cmd_viz(args) -> int:
    scenes = load_scenes(args.manifest)
    scene = None
    if args.scene:
        for s in scenes:
            if s.name == args.scene:
                scene = s
                break
        if scene is None:
            print(f"error: scene {args.scene!r} not in manifest", file=sys.stderr)
            return 1
    else:
        scene = scenes[0]
    past = future = preds = collide = None
    if scene.windows:
        limit = min(len(scene.windows), args.max_windows)
        past, future = stack_windows(scene.windows[:limit])
        if args.checkpoint:
            ckpt = Path(args.checkpoint)
            if not ckpt.exists():
                raise FileNotFoundError(str(ckpt))
            state, model_cfg, _, _ = T.load_state(ckpt)
            rng = np.random.default_rng(np.random.SeedSequence((args.seed, 0)))
            preds = M.predict(state.params, model_cfg, past, scene.occ_map, k=args.k, rng=rng)
            collide = collision_mask(preds, scene.occ_map)
    svg = render_svg(scene.occ_map, past, future, preds, collide)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return 0


# ---- report -------------------------------------------------------------------

_ROW_ORDER = ["baseline", "map", "envcol", "mapnce", "ecam"]


def cmd_report(args) -> int:
    runs_dir = Path(args.runs_dir)
    if not runs_dir.exists():
        raise FileNotFoundError(str(runs_dir))
    groups: dict[str, list[dict]] = {}
    for path in sorted(runs_dir.glob("**/metrics.json")):
        doc = json.loads(path.read_text())
        groups.setdefault(doc.get("ablation", "custom"), []).append(doc)
    if not groups:
        print(f"error: no metrics.json under {runs_dir}", file=sys.stderr)
        return 1
    order = [a for a in _ROW_ORDER if a in groups] + sorted(set(groups) - set(_ROW_ORDER))
    lines = [f"{'ablation':<10} {'runs':>4}  {'ADE':>14}  {'FDE':>14}  {'ECFL':>14}  {'Coll%':>14}"]
    for name in order:
        docs = groups[name]
        cells = [f"{name:<10} {len(docs):>4}"]
        for key in ("ade", "fde", "ecfl", "coll"):
            if key == "coll":
                vals = np.array([100.0 - d["ecfl"] for d in docs])
            else:
                vals = np.array([d[key] for d in docs])
            cells.append(f"{vals.mean():8.3f} +-{vals.std(ddof=0):5.3f}")
        lines.append("  ".join(cells))
    table = "\n".join(lines) + "\n"
    print(table, end="")
    if args.out:
        Path(args.out).write_text(table)
    return 0


# ---- pretrain-patch -----------------------------------------------------------


def cmd_pretrain_patch(args) -> int:
    from .autodiff import Tensor

    flat = _load_flat_config(args)
    model_cfg, _, _ = build_configs(flat)
    if not model_cfg.use_map:
        model_cfg = dataclasses.replace(model_cfg, use_map=True)
    scenes = load_scenes(args.manifest)
    rng = np.random.default_rng(np.random.SeedSequence((args.seed, 100)))
    grids = []
    for scene in scenes:
        rows, cols = np.nonzero(scene.occ_map.cells == 1)
        if rows.size == 0:
            continue
        take = rng.integers(0, rows.size, size=args.patches_per_scene)
        centers_pix = np.stack([cols[take] + 0.5, rows[take] + 0.5], axis=-1)
        centers = scene.occ_map.pixel_to_world(centers_pix)
        headings = rng.uniform(-np.pi, np.pi, size=take.size)
        grids.append(
            scene.occ_map.patch_stack(
                centers,
                headings,
                size=model_cfg.patch_size,
                cell_size=model_cfg.patch_cell_m,
                forward_offset=model_cfg.patch_forward_m,
            )
        )
    if not grids:
        print("error: no walkable cells to sample patches from", file=sys.stderr)
        return 1
    data = np.concatenate(grids, axis=0)
    init_rng = np.random.default_rng(np.random.SeedSequence((args.seed, 101)))
    full = M.init_params(model_cfg, init_rng)
    params = {k: v for k, v in full.items() if k.startswith("patch.")}
    h, s2 = model_cfg.hidden_dim, model_cfg.patch_size**2
    bound = 1.0 / np.sqrt(h)
    params["recon.w1"] = init_rng.uniform(-bound, bound, (h, 256))
    params["recon.b1"] = init_rng.uniform(-bound, bound, (256,))
    b2 = 1.0 / np.sqrt(256)
    params["recon.w2"] = init_rng.uniform(-b2, b2, (256, s2))
    params["recon.b2"] = init_rng.uniform(-b2, b2, (s2,))
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    n = data.shape[0]
    for epoch in range(args.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence((args.seed, 102, epoch))
        ).permutation(n)
        losses = []
        for start in range(0, n, args.batch_size):
            idx = order[start : start + args.batch_size]
            batch = data[idx]
            tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            emb = M.encode_patches(tensors, model_cfg, Tensor(batch))
            hid = (emb @ tensors["recon.w1"] + tensors["recon.b1"]).relu()
            logits = hid @ tensors["recon.w2"] + tensors["recon.b2"]
            prob = logits.sigmoid()
            target = batch.reshape(idx.size, -1)
            eps = 1e-7
            bce = -(
                target * (prob + eps).log() + (1.0 - target) * (1.0 - prob + eps).log()
            ).mean()
            bce.backward()
            for key, p in params.items():
                g = tensors[key].grad
                if g is None:
                    continue
                v = velocity[key]
                v *= args.momentum
                v += g
                p -= args.lr * v
            losses.append(float(bce.data))
        print(f"epoch {epoch}: recon_bce {np.mean(losses):.4f}")
    M.save_checkpoint(
        args.out,
        params,
        {"model": model_cfg.to_dict(), "objective": "patch-reconstruction"},
        meta={"epochs": args.epochs, "seed": args.seed},
    )
    print(f"wrote {args.out}")
    return 0


# ---- gradcheck ------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    names = list(T.ABLATIONS) if args.ablation == "all" else [args.ablation]
    worst = 0.0
    for name in names:
        report = T.run_gradcheck(name, seed=args.seed, fd_step=args.fd_step)
        worst = max(worst, report["max_rel_err"])
        print(
            f"{name:<9} max_rel_err={report['max_rel_err']:.3e} "
            f"params={report['n_params']} "
            f"nonargmin_grad={report['variety_nonargmin_grad_max']:.1e} "
            f"colliding={report['breakdown']['colliding_fraction']:.2f}"
        )
    ok = worst < args.threshold
    print(f"gradcheck {'PASS' if ok else 'FAIL'} (worst {worst:.3e}, threshold {args.threshold:g})")
    return 0 if ok else 1


# ---- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="colav",
        description="Collision-aware trajectory prediction toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--name", default="scene")
    p.add_argument("--layout", default="corridor", choices=["corridor", "rooms", "random-blocks"])
    p.add_argument("--width", type=float, default=40.0)
    p.add_argument("--height", type=float, default=12.0)
    p.add_argument("--mpp", type=float, default=0.1)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--peds", type=int, default=20)
    p.add_argument("--speed-min", type=float, default=0.8)
    p.add_argument("--speed-max", type=float, default=1.6)
    p.add_argument("--clearance", type=float, default=0.5)
    p.add_argument("--jitter", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a predictor")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ablation", choices=list(T.ABLATIONS), default=None)
    p.add_argument("--config", default=None, help="flat JSON config file")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--init-patch", default=None, help="patch-pretraining checkpoint")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--k-samples", type=int, default=None)
    p.add_argument("--lambda-env", type=float, default=None)
    p.add_argument("--lambda-nce", type=float, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--per-scene", action="store_true")
    p.add_argument("--segment-check", action="store_true")
    p.add_argument("--oracle", action="store_true", help="feed ground truth back as the prediction")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("viz", help="render a scene (and predictions) to SVG")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default="viz.svg")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--scene", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--max-windows", type=int, default=8)
    p.set_defaults(func=cmd_viz)

    p = sub.add_parser("report", help="aggregate eval outputs into a table")
    p.add_argument("--runs-dir", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pretrain-patch", help="pretrain the patch encoder by reconstruction")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--patches-per-scene", type=int, default=256)
    p.set_defaults(func=cmd_pretrain_patch)

    p = sub.add_parser("gradcheck", help="verify gradients by finite differences")
    p.add_argument("--ablation", default="all", choices=["all", *T.ABLATIONS])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as err:
        print(f"error: missing file: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
