"""Command-line entry point: train, sample, sweep, eval, deploy-export.

Every run writes the exact resolved RunConfig next to its artifacts, so an
ODE-mode experiment re-runs bit-identically from the saved JSON. Exit codes:
0 success, 1 user/config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import analog, config as config_mod, data, evaluate, experiments
from . import latent as latent_mod
from . import plots, solver, training
from .config import ConfigError
from .data import DataError
from .device import DeviceError
from .solver import SolverError
from .training import TrainingError


def _load_config(args):
    if args.config:
        cfg = config_mod.load(args.config)
    else:
        cfg = config_mod.RunConfig()
    if args.set:
        cfg = config_mod.apply_overrides(cfg, args.set)
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    return cfg


def _out_dir(cfg):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config_mod.save(cfg, out / "resolved_config.json")
    return out


def _save_losses(losses, path):
    np.savetxt(path, np.column_stack([np.arange(len(losses)), losses]),
               delimiter=",", header="step,loss", comments="")


def _save_weight_csvs(net, out, prefix="score"):
    for k, (W, b) in enumerate(net.layer_params()):
        np.savetxt(out / f"{prefix}_w{k}.csv", W, delimiter=",")
        np.savetxt(out / f"{prefix}_b{k}.csv", b[None], delimiter=",")


def cmd_train(args):
    cfg = _load_config(args)
    out = _out_dir(cfg)
    if cfg.experiment == "ring":
        net, losses = experiments.train_ring_score(cfg)
        net.save(out / "score_net.json")
        _save_weight_csvs(net, out)
        _save_losses(losses, out / "score_loss.csv")
    else:
        source = "synthetic" if args.synthetic else "emnist"
        data_dir = args.data_dir or os.environ.get("MEMDIFF_DATA_DIR")
        dataset = experiments.letters_dataset(cfg, source, data_dir)
        data.save_dataset_csv(dataset, out / "dataset.csv")
        enc, dec, net, vae_losses, score_losses = experiments.train_letters(
            cfg, dataset)
        latent_mod.save_vae(enc, dec, out / "vae.json", spec=cfg.latent)
        net.save(out / "score_net.json")
        _save_weight_csvs(net, out)
        _save_losses(vae_losses, out / "vae_loss.csv")
        _save_losses(score_losses, out / "score_loss.csv")
    print(f"wrote model files to {out}")
    return 0


def _load_model(cfg, model_dir):
    model_dir = Path(model_dir or cfg.output_dir)
    net_path = model_dir / "score_net.json"
    if not net_path.exists():
        raise ConfigError(f"no trained model at {net_path}; run train first")
    net = training.DigitalMLP.load(net_path)
    vae = None
    if (model_dir / "vae.json").exists():
        vae = latent_mod.load_vae(model_dir / "vae.json")
    return net, vae, model_dir


def _slice_states(trajs, lab_times):
    """Sample positions at the recorded times closest to each requested one."""
    out = {}
    for t in lab_times:
        idx = np.argmin(np.abs(trajs[0].times - t))
        out[t] = np.array([tr.states[idx] for tr in trajs])
    return out


def cmd_sample(args):
    cfg = _load_config(args)
    out = _out_dir(cfg)
    net, vae, model_dir = _load_model(cfg, args.model_dir)
    if args.digital:
        builder = experiments.digital_builder(net, cfg.schedule)
    else:
        anet = experiments.deploy_score_net(net, cfg)
        builder = experiments.analog_builder(anet, cfg.schedule)
    count = args.count or cfg.sample_count
    labels_out = None
    if cfg.experiment == "ring":
        trajs = solver.batch_trajectories(builder, cfg.schedule, cfg.solver,
                                          count)
        finals = np.array([t.final for t in trajs])
    else:
        all_trajs = []
        labels_out = []
        import dataclasses as _dc
        for cls in range(cfg.latent.n_classes):
            scfg = _dc.replace(cfg.solver, seed=cfg.solver.seed + cls)
            all_trajs.extend(solver.batch_trajectories(
                builder, cfg.schedule, scfg, count, label=cls,
                guidance=cfg.guidance))
            labels_out.extend([cls] * count)
        trajs = all_trajs
        labels_out = np.array(labels_out)
        finals = np.array([t.final for t in trajs])
    solver.save_endpoints(finals, labels_out, out / "endpoints.csv")
    for i, traj in enumerate(trajs[:5]):
        solver.save_trajectory(traj, out / f"trajectory_{i}.csv")
    plots.scatter_svg(finals, out / "endpoints.svg", labels=labels_out,
                      title=f"{cfg.experiment} endpoints")
    slice_times = [float(s) for s in args.slices.split(",")] if args.slices \
        else []
    for t, states in _slice_states(trajs, slice_times).items():
        plots.scatter_svg(states, out / f"slice_{t:.3f}s.svg",
                          labels=labels_out, title=f"lab time {t:.3f} s")
    if cfg.experiment == "letters" and vae is not None:
        _, decoder, _ = vae
        adec = None
        mode = "digital" if args.digital else "analog"
        if mode == "analog":
            rng = np.random.default_rng(cfg.seeds["deploy"] + 1)
            adec = latent_mod.deploy_decoder(decoder, cfg.device, rng)
        img_dir = out / "images"
        img_dir.mkdir(exist_ok=True)
        for cls in range(cfg.latent.n_classes):
            pts = finals[labels_out == cls][:args.images_per_class]
            imgs = experiments.decode_batch(
                decoder, pts, mode=mode, analog_decoder=adec,
                seed=cfg.seeds["deploy"] + 2 + cls)
            for i, img in enumerate(imgs):
                name = cfg.latent.class_names[cls]
                plots.save_pgm(img, img_dir / f"{name}_{i:03d}.pgm")
    print(f"wrote {len(finals)} endpoints to {out}")
    return 0


def cmd_sweep(args):
    cfg = _load_config(args)
    out = _out_dir(cfg)
    net, vae, _ = _load_model(cfg, args.model_dir)
    if cfg.experiment == "ring":
        truth = experiments.ring_truth(cfg)
    else:
        reps = 4
        mu, logvar, _ = None, None, None
        enc, _, _ = vae
        dataset = experiments.letters_dataset(cfg, "synthetic")
        mu, logvar, _ = enc.forward(dataset.images[:, None])
        rng = np.random.default_rng(cfg.seeds["data"] + 5)
        truth = np.concatenate([mu + np.exp(0.5 * logvar) *
                                rng.normal(size=mu.shape)
                                for _ in range(reps)])
    grid = evaluate.noise_sweep(
        net, cfg.schedule, truth,
        write_fracs=cfg.sweep_write_fracs, read_fracs=cfg.sweep_read_fracs,
        mode=args.mode, repeats=cfg.sweep_repeats, count=cfg.sweep_count,
        base_device=cfg.device, kl_cfg=cfg.kl, solver_cfg=cfg.solver,
        master_seed=cfg.seeds["sweep"])
    evaluate.save_sweep_csv(grid, out / "sweep.csv")
    plots.heatmap_svg(grid.kl_results, grid.read_sigmas, grid.write_sigmas,
                      out / "sweep.svg", title=f"KL vs noise ({args.mode})")
    n_failed = int(np.sum(~np.isfinite(grid.raw)))
    if n_failed:
        print(f"warning: {n_failed} sweep cells failed (NaN in sweep.csv)")
    print(f"wrote sweep grid to {out}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    rows = np.atleast_2d(np.loadtxt(args.samples, delimiter=",", skiprows=1))
    if rows.shape[1] < 4:
        raise ConfigError(f"malformed endpoints CSV {args.samples}")
    labels = rows[:, 1].astype(int)
    points = rows[:, 2:]
    metrics = {}
    if cfg.experiment == "ring":
        metrics["kl"] = experiments.ring_kl(cfg, points)
    else:
        centers = cfg.latent.centers
        metrics["latent_accuracy"] = evaluate.nearest_center_accuracy(
            points, labels, centers)
        for cls, name in enumerate(cfg.latent.class_names):
            sel = labels == cls
            if np.any(sel):
                metrics[f"accuracy_{name}"] = \
                    evaluate.nearest_center_accuracy(points[sel], labels[sel],
                                                     centers)
        if args.reference_csv:
            ref = np.atleast_2d(np.loadtxt(args.reference_csv, delimiter=",",
                                           skiprows=1))
            metrics["kl"] = evaluate.histogram_kl(points, ref[:, 2:], cfg.kl)
    out_path = Path(args.output or "metrics.json")
    with open(out_path, "w") as f:
        json.dump(metrics, f, indent=2)
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_deploy_export(args):
    cfg = _load_config(args)
    out = _out_dir(cfg)
    net, vae, _ = _load_model(cfg, args.model_dir)
    anet = experiments.deploy_score_net(net, cfg)
    analog.export_network(anet, out / "deployed", prefix="score_layer")
    if vae is not None:
        _, decoder, _ = vae
        rng = np.random.default_rng(cfg.seeds["deploy"] + 1)
        adec = latent_mod.deploy_decoder(decoder, cfg.device, rng)
        analog.export_network(adec.net, out / "deployed",
                              prefix="decoder_layer")
    print(f"exported crossbar conductances to {out / 'deployed'}")
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="memdiff",
        description="Analog in-memory diffusion-solver simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="RunConfig JSON path")
        sp.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config entry (dotted keys)")
        sp.add_argument("--output-dir", help="artifact directory")

    sp = sub.add_parser("train", help="train score net (and VAE for letters)")
    common(sp)
    sp.add_argument("--synthetic", action="store_true",
                    help="use the procedural glyph dataset")
    sp.add_argument("--data-dir", help="EMNIST IDX directory "
                                       "(default $MEMDIFF_DATA_DIR)")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("sample", help="deploy and generate samples")
    common(sp)
    sp.add_argument("--model-dir", help="directory with trained model files")
    sp.add_argument("--count", type=int, help="samples (per class)")
    sp.add_argument("--digital", action="store_true",
                    help="skip crossbar deployment, run the float network")
    sp.add_argument("--slices", help="comma-separated lab times for "
                                     "snapshot scatters, e.g. 0.2,0.5,1.0")
    sp.add_argument("--images-per-class", type=int, default=10)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("sweep", help="write/read noise sweep")
    common(sp)
    sp.add_argument("--model-dir")
    sp.add_argument("--mode", choices=["ode", "sde"], default="ode")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eval", help="metrics from an endpoints CSV")
    common(sp)
    sp.add_argument("--samples", required=True, help="endpoints CSV")
    sp.add_argument("--reference-csv", help="reference endpoints CSV")
    sp.add_argument("--output", help="metrics JSON path")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("deploy-export",
                        help="program crossbars and export conductances")
    common(sp)
    sp.add_argument("--model-dir")
    sp.set_defaults(func=cmd_deploy_export)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DataError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except (SolverError, TrainingError, DeviceError,
            FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
