"""Command-line front end.

Commands: ``infer`` (run the recurrent engine on a stereo pair), ``eval``
(score a prediction against ground truth), ``synth`` (generate a synthetic
pair with exact ground truth), ``depth-analyze`` (affine alignment and
ratio-map spread of a relative depth map), ``bench`` (lookup timing).

Exit codes: 0 ok, 1 internal error, 2 bad input, 3 empty evaluation.
Configuration precedence: built-in defaults < ``--config`` JSON file <
explicit flags.  ``SCALESTEREO_OUT`` sets the default output directory.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np

from . import __version__, kernels
from .benchmark import compare_backends
from .config import EngineConfig, LookupConfig
from .dataio import (DataFormatError, load_weights, read_disp_png16, read_image,
                     read_pfm_disparity, write_disp_png16, write_image,
                     write_pfm)
from .depth_provider import load_external_depth
from .encoders import MissingWeightError, generate_weights
from .evalkit import (DEFAULT_THRESHOLDS, EmptyEvaluationError, affine_align,
                      compute_metrics, ratio_map_std)
from .scene_synth import Layer, SceneSpec, synth_scene
from .updater import run_inference

OUT_ENV = "SCALESTEREO_OUT"


class InputError(click.ClickException):
    exit_code = 2


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _read_file(path: str) -> bytes:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"input file not found: {path}")
    return p.read_bytes()


def _out_dir(out: str | None) -> Path:
    path = Path(out or os.environ.get(OUT_ENV, "out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _parse_floats(text: str, flag: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise InputError(f"{flag} expects comma-separated numbers, got {text!r}")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = json.loads(_read_file(path))
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(cfg, dict):
        raise InputError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve_engine_config(file_cfg: dict, iters, su_iters, radius, levels,
                           eta, eps, scale_factors) -> EngineConfig:
    def pick(flag, key, default):
        if flag is not None:
            return flag
        return file_cfg.get(key, default)

    base = EngineConfig()
    factors = scale_factors
    if factors is not None:
        factors = _parse_floats(factors, "--scale-factors")
    try:
        lookup = LookupConfig(
            radius=int(pick(radius, "radius", base.lookup.radius)),
            num_levels=int(pick(levels, "levels", base.lookup.num_levels)),
            scale_factors=tuple(pick(factors, "scale_factors",
                                     base.lookup.scale_factors)),
        )
        return EngineConfig(
            eta=float(pick(eta, "eta", base.eta)),
            eps=float(pick(eps, "eps", base.eps)),
            su_iters=int(pick(su_iters, "su_iters", base.su_iters)),
            total_iters=int(pick(iters, "iters", base.total_iters)),
            lookup=lookup,
            hidden_channels=int(file_cfg.get("hidden_channels", base.hidden_channels)),
            feat_channels=int(file_cfg.get("feat_channels", base.feat_channels)),
            context_channels=int(file_cfg.get("context_channels", base.context_channels)),
            aux_channels=int(file_cfg.get("aux_channels", base.aux_channels)),
            corr_channels=int(file_cfg.get("corr_channels", base.corr_channels)),
            disp_channels=int(file_cfg.get("disp_channels", base.disp_channels)),
            head_channels=int(file_cfg.get("head_channels", base.head_channels)),
        )
    except ValueError as exc:
        raise InputError(str(exc))


def _load_disparity(path: str) -> tuple[np.ndarray, np.ndarray]:
    data = _read_file(path)
    try:
        if data[:2] == b"Pf":
            return read_pfm_disparity(data)
        return read_disp_png16(data)
    except DataFormatError as exc:
        raise InputError(f"cannot read disparity file {path}: {exc}")


@click.group(name="scalestereo")
@click.version_option(__version__)
def cli():
    """Recurrent stereo disparity engine with scale-recovery updates."""


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def _infer_one(left_path: str, right_path: str, depth_path: str | None,
               weights, weight_meta: dict, cfg: EngineConfig, mode: str,
               out_dir: Path, stem: str, save_iters: bool) -> Path:
    left_bytes = _read_file(left_path)
    right_bytes = _read_file(right_path)
    try:
        left = read_image(left_bytes)
        right = read_image(right_bytes)
    except Exception as exc:
        raise InputError(f"cannot decode stereo pair: {exc}")
    if left.shape != right.shape:
        raise InputError(
            f"left/right image sizes differ: {left.shape[1:]} vs {right.shape[1:]}")
    if left.shape[1] % 16 or left.shape[2] % 16:
        raise InputError(
            f"image size {left.shape[1]}x{left.shape[2]} must be divisible by 16")
    quarter = (left.shape[1] // 4, left.shape[2] // 4)
    depth = None
    inputs = {"left": str(left_path), "left_sha256": _sha256(left_bytes),
              "right": str(right_path), "right_sha256": _sha256(right_bytes)}
    if depth_path is not None:
        try:
            depth = load_external_depth(depth_path, quarter)
        except (ValueError, OSError) as exc:
            raise InputError(f"cannot load depth map {depth_path}: {exc}")
        inputs["depth"] = str(depth_path)
        inputs["depth_sha256"] = _sha256(_read_file(depth_path))
    result = run_inference(left, right, depth, weights, cfg, mode=mode)

    pfm_path = out_dir / f"{stem}.pfm"
    png_path = out_dir / f"{stem}.png"
    pfm_bytes = write_pfm(result.final)
    png_bytes = write_disp_png16(result.final)
    pfm_path.write_bytes(pfm_bytes)
    png_path.write_bytes(png_bytes)
    outputs = {"pfm": pfm_path.name, "pfm_sha256": _sha256(pfm_bytes),
               "png16": png_path.name, "png16_sha256": _sha256(png_bytes)}
    if save_iters:
        for i, disp in enumerate(result.disparities, start=1):
            (out_dir / f"{stem}_iter{i:03d}.pfm").write_bytes(write_pfm(disp))
        outputs["per_iteration"] = f"{stem}_iter*.pfm"
    series = [{"iteration": t.iteration, "phase": t.phase,
               "mean_disparity": float(np.mean(d))}
              for t, d in zip(result.trace, result.disparities)]
    manifest = {
        "command": "infer",
        "version": __version__,
        "backend": kernels.BACKEND,
        "mode": mode,
        "config": asdict(cfg),
        "inputs": inputs,
        "weights": weight_meta,
        "outputs": outputs,
        "iterations": series,
    }
    mpath = out_dir / f"{stem}.manifest.json"
    mpath.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return pfm_path


def _resolve_weights(weights_path: str | None, seed: int, cfg: EngineConfig):
    if weights_path is not None:
        data = _read_file(weights_path)
        try:
            bundle = load_weights(data)
        except DataFormatError as exc:
            raise InputError(f"cannot load weights {weights_path}: {exc}")
        return bundle, {"path": str(weights_path), "sha256": _sha256(data)}
    bundle = generate_weights(cfg, seed=seed)
    return bundle, {"seed": seed}


@cli.command()
@click.option("--left", required=True, help="Left image (PNG) or a directory of them.")
@click.option("--right", required=True, help="Right image (PNG) or a directory.")
@click.option("--depth", default=None, help="Relative inverse-depth map (PFM/PNG16).")
@click.option("--mode", type=click.Choice(["learned", "oracle"]), default="learned")
@click.option("--weights", "weights_path", default=None,
              help="Weight bundle file; omit to generate from --seed.")
@click.option("--seed", default=0, show_default=True, type=int,
              help="Seed for generated weights.")
@click.option("--iters", default=None, type=int, help="Total update iterations.")
@click.option("--su-iters", default=None, type=int, help="Scale-update iterations.")
@click.option("--radius", default=None, type=int, help="Pyramid lookup radius.")
@click.option("--levels", default=None, type=int, help="Correlation pyramid levels.")
@click.option("--eta", default=None, type=float, help="Initialization width ratio.")
@click.option("--eps", default=None, type=float, help="Disparity floor.")
@click.option("--scale-factors", default=None,
              help="Comma-separated scale-lookup factors.")
@click.option("--config", "config_path", default=None, help="JSON config file.")
@click.option("--out", default=None, help=f"Output directory (default ${OUT_ENV} or ./out).")
@click.option("--save-iters", is_flag=True, help="Also write per-iteration maps.")
@click.option("--jobs", default=1, show_default=True, type=int,
              help="Parallel workers when --left/--right are directories.")
def infer(left, right, depth, mode, weights_path, seed, iters, su_iters, radius,
          levels, eta, eps, scale_factors, config_path, out, save_iters, jobs):
    """Estimate disparity for a rectified stereo pair."""
    cfg = _resolve_engine_config(_load_config_file(config_path), iters, su_iters,
                                 radius, levels, eta, eps, scale_factors)
    out_dir = _out_dir(out)
    bundle, meta = _resolve_weights(weights_path, seed, cfg)
    if Path(left).is_dir() != Path(right).is_dir():
        raise InputError("--left and --right must both be files or both directories")
    if Path(left).is_dir():
        lefts = sorted(p for p in Path(left).iterdir() if p.suffix.lower() == ".png")
        if not lefts:
            raise InputError(f"no PNG images in {left}")
        pairs = []
        for lp in lefts:
            rp = Path(right) / lp.name
            if not rp.is_file():
                raise InputError(f"input file not found: {rp}")
            pairs.append((str(lp), str(rp), lp.stem + "_disp"))
        if depth is not None:
            raise InputError("--depth is only supported for single-pair runs")

        def job(args):
            lp, rp, stem = args
            return _infer_one(lp, rp, None, bundle, meta, cfg, mode, out_dir,
                              stem, save_iters)

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(job, pairs))
        else:
            results = [job(p) for p in pairs]
        for path in results:
            click.echo(f"wrote {path}")
    else:
        path = _infer_one(left, right, depth, bundle, meta, cfg, mode, out_dir,
                          "disp", save_iters)
        click.echo(f"wrote {path}")


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

@cli.command(name="eval")
@click.option("--pred", required=True, help="Predicted disparity (PFM/PNG16).")
@click.option("--gt", required=True, help="Ground-truth disparity (PFM/PNG16).")
@click.option("--thresholds", default="1,2,3", show_default=True,
              help="Comma-separated Bad-N thresholds in pixels.")
@click.option("--out", default=None, help="Optional JSON report path.")
def eval_cmd(pred, gt, thresholds, out):
    """Score a disparity prediction against ground truth."""
    d_pred, _ = _load_disparity(pred)
    d_gt, mask = _load_disparity(gt)
    if d_pred.shape != d_gt.shape:
        raise InputError(
            f"prediction {d_pred.shape} and ground truth {d_gt.shape} differ in size")
    report = compute_metrics(d_pred, d_gt, mask,
                             _parse_floats(thresholds, "--thresholds")
                             or DEFAULT_THRESHOLDS)
    click.echo(report.to_text())
    if out:
        Path(out).write_text(report.to_json() + "\n")


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def _parse_layer(text: str) -> Layer:
    parts = text.split(",")
    if len(parts) != 5:
        raise InputError(
            f"--layer expects 'y0,x0,y1,x1,disparity', got {text!r}")
    try:
        y0, x0, y1, x1, d = (int(v) for v in parts)
    except ValueError:
        raise InputError(f"--layer expects integers, got {text!r}")
    return Layer(y0=y0, x0=x0, y1=y1, x1=x1, disparity=d)


@cli.command()
@click.option("--height", default=128, show_default=True, type=int)
@click.option("--width", default=256, show_default=True, type=int)
@click.option("--bg-disparity", default=4, show_default=True, type=int)
@click.option("--layer", "layers", multiple=True,
              help="Layer as 'y0,x0,y1,x1,disparity'; repeatable, far to near.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--out", default=None, help="Output directory.")
def synth(height, width, bg_disparity, layers, seed, out):
    """Generate a textured stereo pair with exact ground truth."""
    try:
        spec = SceneSpec(height=height, width=width,
                         background_disparity=bg_disparity,
                         layers=tuple(_parse_layer(t) for t in layers), seed=seed)
        left, right, d_gt, valid = synth_scene(spec)
    except ValueError as exc:
        raise InputError(str(exc))
    out_dir = _out_dir(out)
    files = {
        "left.png": write_image(left),
        "right.png": write_image(right),
        "gt.pfm": write_pfm(np.where(valid, d_gt, np.inf)),
        "valid.png": write_disp_png16(valid.astype(float) * 256.0),
    }
    for name, data in files.items():
        (out_dir / name).write_bytes(data)
    manifest = {
        "command": "synth",
        "version": __version__,
        "scene": {"height": height, "width": width,
                  "background_disparity": bg_disparity, "seed": seed,
                  "layers": [[l.y0, l.x0, l.y1, l.x1, l.disparity]
                             for l in spec.layers]},
        "outputs": {name: _sha256(data) for name, data in files.items()},
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    click.echo(f"wrote scene to {out_dir}")


# ---------------------------------------------------------------------------
# depth-analyze
# ---------------------------------------------------------------------------

@cli.command(name="depth-analyze")
@click.option("--depth", required=True, help="Relative depth map (PFM/PNG16).")
@click.option("--gt", required=True, help="Ground-truth disparity (PFM/PNG16).")
def depth_analyze(depth, gt):
    """Affine-align a relative depth map and report EPE and ratio spread."""
    z, _ = _load_disparity(depth)
    d_gt, mask = _load_disparity(gt)
    if z.shape != d_gt.shape:
        raise InputError(
            f"depth {z.shape} and ground truth {d_gt.shape} differ in size")
    fit = affine_align(z, d_gt, mask)
    aligned = fit.scale * z + fit.shift
    _, std = ratio_map_std(d_gt, aligned, mask)
    click.echo(f"epe={fit.epe_after:.6f}")
    click.echo(f"ratio_std={std:.6f}")
    click.echo(f"scale={fit.scale:.6f}")
    click.echo(f"shift={fit.shift:.6f}")
    click.echo(f"degenerate={str(fit.degenerate).lower()}")


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

@cli.command()
@click.option("--height", default=64, show_default=True, type=int)
@click.option("--width", default=128, show_default=True, type=int)
@click.option("--iters", default=32, show_default=True, type=int)
@click.option("--repeats", default=5, show_default=True, type=int)
def bench(height, width, iters, repeats):
    """Time the correlation lookups: direct vs precomputed, per backend."""
    for result in compare_backends(height, width, iters, repeats):
        click.echo(result.format_row())


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except InputError as exc:
        click.echo(f"error: {exc.message}", err=True)
        return 2
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 2
    except click.ClickException as exc:
        click.echo(f"error: {exc.message}", err=True)
        return 1
    except EmptyEvaluationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except (DataFormatError, MissingWeightError, FileNotFoundError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # pragma: no cover - internal failures
        click.echo(f"internal error: {exc}", err=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
