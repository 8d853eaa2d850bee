"""Command line interface.

Subcommands: embed-info, denoise, baseline, sweep, synthetic,
schedule dump, noise add|estimate.

Every run appends a JSON line to a manifest (default dmid_manifest.jsonl next
to the first output); re-executing a manifest entry reproduces the outputs
bit-exactly. A flat key=value config file can pre-set any long option of a
subcommand; explicit flags win. The default seed comes from $DMID_SEED.

Exit codes:
  0  success
  2  usage error (argparse)
  3  invalid configuration
  4  unreadable or malformed file
  5  noise level beyond the schedule's range
  6  image too small for the operation
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, imageio, manifest, metrics, synthetic
from .denoisers import (
    GaussianDenoiser,
    GaussianMixtureDenoiser,
    GaussianMixturePrior,
    GaussianPrior,
    PatchDctDenoiser,
    wrap_x0_denoiser,
)
from .ensemble import EnsembleConfig, run_ensemble
from .errors import (
    ConfigurationError,
    ImageFormatError,
    ImageSizeError,
    SaturationError,
)
from .iterative import IterationSchedule, run_iterative
from .metrics import psnr
from .sampler import InferenceConfig
from .schedule import build_linear_schedule, dump_schedule_rows, select_timestep
from .transform import (
    GAUSSIAN,
    NoiseModel,
    PixelImage,
    estimate_sigma,
    from_latent,
    to_latent,
)

EXIT_CODES = {
    ConfigurationError: 3,
    ImageFormatError: 4,
    SaturationError: 5,
    ImageSizeError: 6,
}


def default_seed() -> int:
    return int(os.environ.get("DMID_SEED", "0"))


def bundled_image() -> PixelImage:
    with resources.as_file(resources.files("dmid") / "data" / "test128.pgm") as p:
        return imageio.read_pgm(p)


def make_denoiser(spec: str, schedule):
    """Build a denoiser from its config name.

    gaussian:<mu>,<s>  exact Gaussian-prior posterior denoiser
    gmm:<spec-file>    exact mixture posterior denoiser (JSON component list)
    dct:<patch>,<stride>,<k>  patch-DCT hard threshold, adapted to the
                              eps contract
    """
    kind, _, rest = spec.partition(":")
    try:
        if kind == "gaussian":
            mu, s = (float(v) for v in rest.split(","))
            return GaussianDenoiser(GaussianPrior(mean=mu, std=s))
        if kind == "gmm":
            components = json.loads(Path(rest).read_text())["components"]
            return GaussianMixtureDenoiser(
                GaussianMixturePrior.from_components([tuple(c) for c in components]))
        if kind == "dct":
            patch, stride, k = rest.split(",")
            cfg = PatchDctDenoiser(patch_size=int(patch), stride=int(stride),
                                   threshold_multiplier=float(k))
            return wrap_x0_denoiser(cfg, schedule)
    except (ValueError, KeyError, OSError) as e:
        raise ConfigurationError(f"bad denoiser spec {spec!r}: {e}") from e
    raise ConfigurationError(f"unknown denoiser kind {kind!r}")


def _schedule_from(cfg: dict):
    return build_linear_schedule(cfg.get("timesteps", 1000),
                                 cfg.get("beta_start", 1e-4),
                                 cfg.get("beta_end", 0.02))


def _center_crop(image: PixelImage, size: int) -> PixelImage:
    if image.height < size or image.width < size:
        raise ImageSizeError(f"cannot center-crop {image.height}x{image.width} to {size}")
    y0 = (image.height - size) // 2
    x0 = (image.width - size) // 2
    return PixelImage(data=image.data[:, y0:y0 + size, x0:x0 + size],
                      value_range=image.value_range)


def _load_input(cfg: dict) -> PixelImage:
    image = bundled_image() if cfg["input"] == "bundled" else imageio.load_image(cfg["input"])
    if cfg.get("center_crop"):
        image = _center_crop(image, cfg["center_crop"])
    return image


# ---------------------------------------------------------------------------
# command implementations (dict-in, paths-out; reused by manifest rerun)


def run_embed_info(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    schedule = _schedule_from(cfg)
    sigma_latent = 2.0 * cfg["sigma"] / 255.0
    plan = select_timestep(schedule, sigma_latent)
    out.write(f"sigma255       {cfg['sigma']:.6g}\n"
              f"sigma_latent   {sigma_latent:.9g}\n"
              f"N              {plan.N}\n"
              f"scale          {plan.scale:.12g}\n"
              f"matched_sigma  {plan.matched_sigma:.12g}\n")
    return []


def run_denoise(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    schedule = _schedule_from(cfg)
    image = _load_input(cfg)
    sigma = cfg["sigma"]
    if cfg.get("blind"):
        sigma = estimate_sigma(image)
        out.write(f"estimated_sigma {sigma:.4f}\n")
    model = NoiseModel(kind=cfg.get("noise_kind", GAUSSIAN), sigma=sigma,
                       gain=cfg.get("gain", 1.0))
    latent = to_latent(image, model)
    plan = select_timestep(schedule, latent.sigma_latent)
    st = 0 if plan.N == 0 else min(cfg["st"], plan.N)
    base = InferenceConfig(N=plan.N, sampling_steps=st, gamma=cfg["gamma"],
                           seed=cfg["seed"])
    denoiser = make_denoiser(cfg["denoiser"], schedule)
    result = run_ensemble(latent, EnsembleConfig(base=base, repeats=cfg["rt"]),
                          schedule, denoiser, jobs=cfg.get("jobs", 1))
    restored = from_latent(result, model, image.value_range)
    imageio.save_image(cfg["output"], restored)
    if cfg.get("reference"):
        ref = imageio.load_image(cfg["reference"])
        if cfg.get("center_crop"):
            ref = _center_crop(ref, cfg["center_crop"])
        report = psnr(restored, ref, peak=ref.span)
        out.write(f"mse {report.mse:.6f}\npsnr {report.psnr:.4f}\n")
    return [cfg["output"]]


def run_baseline(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    image = _load_input(cfg)
    model = NoiseModel(kind=GAUSSIAN, sigma=cfg["sigma"])
    latent = to_latent(image, model)
    if cfg.get("gamma_decay", "geometric") != "geometric":
        raise ConfigurationError(f"unknown gamma decay {cfg['gamma_decay']!r}")
    gammas = IterationSchedule.geometric(cfg["iters"])
    dct_cfg = _dct_from_spec(cfg["denoiser"])
    result = run_iterative(latent, gammas, dct_cfg, latent.sigma_latent)
    restored = from_latent(result, model, image.value_range)
    imageio.save_image(cfg["output"], restored)
    if cfg.get("reference"):
        ref = imageio.load_image(cfg["reference"])
        report = psnr(restored, ref, peak=ref.span)
        out.write(f"mse {report.mse:.6f}\npsnr {report.psnr:.4f}\n")
    return [cfg["output"]]


def _dct_from_spec(spec: str) -> PatchDctDenoiser:
    kind, _, rest = spec.partition(":")
    if kind != "dct":
        raise ConfigurationError("baseline requires a dct:<patch>,<stride>,<k> denoiser")
    if not rest:
        return PatchDctDenoiser()
    patch, stride, k = rest.split(",")
    return PatchDctDenoiser(patch_size=int(patch), stride=int(stride),
                            threshold_multiplier=float(k))


def _sweep_cell(cfg, schedule, latent, model, image, ref, denoiser, st, rt, seed):
    start = time.perf_counter()
    plan = select_timestep(schedule, latent.sigma_latent)
    base = InferenceConfig(N=plan.N, sampling_steps=min(st, plan.N),
                           gamma=cfg["gamma"], seed=seed)
    result = run_ensemble(latent, EnsembleConfig(base=base, repeats=rt),
                          schedule, denoiser)
    restored = from_latent(result, model, image.value_range)
    wall_ms = (time.perf_counter() - start) * 1e3
    report = psnr(restored, ref, peak=ref.span)
    return report.mse, report.psnr, wall_ms


def run_sweep(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    schedule = _schedule_from(cfg)
    image = _load_input(cfg)
    ref = imageio.load_image(cfg["reference"]) if cfg.get("reference") else None
    if ref is None:
        raise ConfigurationError("sweep requires --ref for mse/psnr columns")
    model = NoiseModel(kind=GAUSSIAN, sigma=cfg["sigma"])
    latent = to_latent(image, model)
    denoiser = make_denoiser(cfg["denoiser"], schedule)
    image_id = Path(str(cfg["input"])).stem
    chash = manifest.config_hash({k: cfg[k] for k in sorted(cfg) if k != "csv"})

    cells = [(st, rt, seed)
             for st in cfg["st_grid"] for rt in cfg["rt_grid"] for seed in cfg["seeds"]]
    done = set()
    csv_path = Path(cfg["csv"])
    existing_rows = []
    if csv_path.exists():
        with open(csv_path, newline="") as f:
            for row in csv.DictReader(f):
                existing_rows.append(row)
                if row.get("config_hash") == chash:
                    done.add((int(row["st"]), int(row["rt"]), int(row["seed"])))
    todo = [c for c in cells if c not in done]

    def evaluate(cell):
        st, rt, seed = cell
        try:
            m, p, wall = _sweep_cell(cfg, schedule, latent, model, image, ref,
                                     denoiser, st, rt, seed)
            return cell, (f"{m:.8f}", f"{p:.5f}", f"{wall:.1f}")
        except Exception as e:  # record the failure, keep sweeping
            print(f"sweep cell st={st} rt={rt} seed={seed} failed: {e}",
                  file=sys.stderr)
            return cell, ("", "", "")

    jobs = max(1, cfg.get("jobs", 1))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(evaluate, todo))
    else:
        results = dict(evaluate(c) for c in todo)

    fields = list(metrics.CSV_COLUMNS) + ["config_hash"]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fields)
    writer.writeheader()
    for row in existing_rows:
        writer.writerow({k: row.get(k, "") for k in fields})
    for st, rt, seed in cells:       # fixed order regardless of job count
        if (st, rt, seed) in done:
            continue
        m, p, wall = results[(st, rt, seed)]
        writer.writerow({
            "image_id": image_id, "sigma": cfg["sigma"], "st": st, "rt": rt,
            "gamma": cfg["gamma"], "seed": seed, "mse": m, "psnr": p,
            "wall_ms": wall, "lpips": "", "fid": "", "config_hash": chash,
        })
    imageio._atomic_write(csv_path, buf.getvalue().encode())
    return [str(csv_path)]


def run_synthetic(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    prefix = Path(cfg["out_prefix"])
    clean_path = prefix.with_name(prefix.name + "_clean" + cfg["format"])
    noisy_path = prefix.with_name(prefix.name + "_noisy" + cfg["format"])
    for p in (clean_path, noisy_path):
        if p.exists() and not cfg.get("force"):
            raise ConfigurationError(f"{p} exists; pass --force to overwrite")

    kind = cfg["kind"]
    if kind == "image":
        clean = bundled_image()
    elif kind == "gaussian":
        values = synthetic.sample_gaussian(
            GaussianPrior(mean=cfg["mu"], std=cfg["std"]), cfg["n"], cfg["seed"])
        clean = PixelImage(data=values.reshape(1, 1, -1), value_range=(-8.0, 8.0))
    elif kind == "gmm":
        if not cfg.get("gmm_spec"):
            raise ConfigurationError("--kind gmm requires --gmm-spec")
        try:
            components = json.loads(Path(cfg["gmm_spec"]).read_text())["components"]
        except (KeyError, ValueError, OSError) as e:
            raise ConfigurationError(
                f"bad gmm spec {cfg['gmm_spec']!r}: {e}") from e
        prior = GaussianMixturePrior.from_components([tuple(c) for c in components])
        values = synthetic.sample_gmm(prior, cfg["n"], cfg["seed"])
        clean = PixelImage(data=values.reshape(1, 1, -1), value_range=(-8.0, 8.0))
    else:
        raise ConfigurationError(f"unknown synthetic kind {kind!r}")

    noisy = synthetic.add_awgn(clean, cfg["sigma"], cfg["seed"] + 1)
    imageio.save_image(clean_path, clean)
    imageio.save_image(noisy_path, noisy)
    return [str(clean_path), str(noisy_path)]


def run_schedule_dump(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    schedule = _schedule_from(cfg)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["t", "beta", "alpha_bar", "d"])
    for row in dump_schedule_rows(schedule):
        writer.writerow([row[0], f"{row[1]:.12g}", f"{row[2]:.17g}", f"{row[3]:.17g}"])
    if cfg.get("output"):
        imageio._atomic_write(cfg["output"], buf.getvalue().encode())
        return [cfg["output"]]
    out.write(buf.getvalue())
    return []


def run_noise_add(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    image = _load_input(cfg)
    noisy = synthetic.add_awgn(image, cfg["sigma"], cfg["seed"])
    imageio.save_image(cfg["output"], noisy)
    return [cfg["output"]]


def run_noise_estimate(cfg: dict, out=None) -> list[str]:
    out = out or sys.stdout
    image = _load_input(cfg)
    out.write(f"sigma {estimate_sigma(image):.4f}\n")
    return []


_COMMANDS = {
    "embed-info": run_embed_info,
    "denoise": run_denoise,
    "baseline": run_baseline,
    "sweep": run_sweep,
    "synthetic": run_synthetic,
    "schedule-dump": run_schedule_dump,
    "noise-add": run_noise_add,
    "noise-estimate": run_noise_estimate,
}


def execute_snapshot(command: str, config: dict, output_override: dict) -> list[str]:
    """Re-execute a recorded run; used by manifest.rerun."""
    cfg = dict(config)
    cfg.update(output_override)
    return _COMMANDS[command](cfg)


# ---------------------------------------------------------------------------
# argument parsing


def _add_schedule_args(p):
    p.add_argument("--timesteps", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)


def _add_io_args(p, output=True):
    p.add_argument("--in", dest="input", default="bundled",
                   help="input image path, or 'bundled' for the packaged test image")
    if output:
        p.add_argument("--out", dest="output", required=True)
    p.add_argument("--center-crop", type=int, default=0,
                   help="opt-in center crop size before processing")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmid",
        description="Diffusion-based image denoising via adaptive embedding "
                    "and ensembling.",
        epilog="Exit codes: 0 success, 2 usage, 3 bad configuration, "
               "4 unreadable file, 5 noise level out of range, 6 image too small.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--config", help="flat key=value file of option defaults")
    parser.add_argument("--manifest", default="dmid_manifest.jsonl")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed-info", help="print the embedding plan for a noise level")
    p.add_argument("--sigma", type=float, required=True, help="noise std on the 0-255 scale")
    _add_schedule_args(p)

    p = sub.add_parser("denoise", help="full denoising pipeline")
    _add_io_args(p)
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--blind", action="store_true", help="estimate sigma from the input")
    p.add_argument("--st", type=int, default=3, help="sampling steps per inference")
    p.add_argument("--rt", type=int, default=1, help="inference repeats to average")
    p.add_argument("--gamma", type=float, default=0.85)
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--denoiser", default="dct:8,4,3.0")
    p.add_argument("--noise-kind", default=GAUSSIAN,
                   choices=[GAUSSIAN, "poisson-gaussian"])
    p.add_argument("--gain", type=float, default=1.0)
    p.add_argument("--ref", dest="reference", help="clean reference for metrics")
    p.add_argument("--jobs", type=int, default=1)
    _add_schedule_args(p)

    p = sub.add_parser("baseline", help="iterative re-noising baseline")
    _add_io_args(p)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--gamma-decay", default="geometric")
    p.add_argument("--denoiser", default="dct:8,4,3.0")
    p.add_argument("--ref", dest="reference")

    p = sub.add_parser("sweep", help="S_t x R_t x seed ablation grid")
    _add_io_args(p, output=False)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--ref", dest="reference", required=True)
    p.add_argument("--st", dest="st_grid", type=_int_list, default=[1, 2, 5, 10])
    p.add_argument("--rt", dest="rt_grid", type=_int_list, default=[1])
    p.add_argument("--seeds", type=_int_list, default=[0])
    p.add_argument("--gamma", type=float, default=0.85)
    p.add_argument("--denoiser", default="dct:8,4,3.0")
    p.add_argument("--csv", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _add_schedule_args(p)

    p = sub.add_parser("synthetic", help="generate paired clean/noisy data")
    p.add_argument("--kind", required=True, choices=["gaussian", "gmm", "image"])
    p.add_argument("--mu", type=float, default=0.0)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--gmm-spec", help="JSON file with a 'components' list")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--sigma", type=float, required=True, help="AWGN std in source units")
    p.add_argument("--seed", type=int, default=default_seed())
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--format", default=".raw", choices=[".raw", ".f64", ".pgm"])
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("schedule", help="schedule utilities")
    ssub = p.add_subparsers(dest="subcommand", required=True)
    pd = ssub.add_parser("dump", help="write the t,beta,alpha_bar,d audit CSV")
    _add_schedule_args(pd)
    pd.add_argument("--out", dest="output")

    p = sub.add_parser("noise", help="noise utilities")
    nsub = p.add_subparsers(dest="subcommand", required=True)
    pa = nsub.add_parser("add", help="inject deterministic AWGN")
    _add_io_args(pa)
    pa.add_argument("--sigma", type=float, required=True)
    pa.add_argument("--seed", type=int, default=default_seed())
    pe = nsub.add_parser("estimate", help="blind noise level estimate")
    _add_io_args(pe, output=False)

    return parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _apply_config_file(argv: list[str]) -> list[str]:
    """Splice key=value pairs from --config FILE in right after the
    subcommand, so explicit flags still win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    injected = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        injected.append(f"--{key.strip().replace('_', '-')}")
        if value.strip():
            injected.append(value.strip())
    rest = argv[:i] + argv[i + 2:]
    # find the subcommand token (first occurrence of a known command name,
    # so values of earlier top-level options are not mistaken for it)
    for j, tok in enumerate(rest):
        if tok in _COMMANDS or tok in ("schedule", "noise"):
            sub_end = j + 1
            if tok in ("schedule", "noise") and len(rest) > j + 1:
                sub_end = j + 2
            return rest[:sub_end] + injected + rest[sub_end:]
    return rest + injected


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _apply_config_file(argv)
    except OSError as e:
        print(f"dmid: cannot read config file: {e}", file=sys.stderr)
        return 4
    parser = build_parser()
    args = parser.parse_args(argv)

    command = args.command
    if getattr(args, "subcommand", None):
        command = f"{command}-{args.subcommand}"
    cfg = {k: v for k, v in vars(args).items()
           if k not in ("command", "subcommand", "config", "manifest")}

    start = time.perf_counter()
    try:
        outputs = _COMMANDS[command](cfg)
    except tuple(EXIT_CODES) as e:
        print(f"dmid: {e}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(e, klass):
                return code
        return 1
    except OSError as e:
        print(f"dmid: {e}", file=sys.stderr)
        return 4
    wall_ms = (time.perf_counter() - start) * 1e3

    inputs = {}
    if cfg.get("input") and cfg["input"] != "bundled" and os.path.exists(cfg["input"]):
        inputs["input"] = cfg["input"]
    if cfg.get("reference") and os.path.exists(cfg["reference"]):
        inputs["reference"] = cfg["reference"]
    manifest.append_entry(args.manifest, command, cfg, inputs, outputs, wall_ms)
    return 0


if __name__ == "__main__":
    sys.exit(main())
