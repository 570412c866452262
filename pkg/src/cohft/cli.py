"""Command-line entry point: gen-data, train, eval, infer, check."""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import chft
from . import tensor as T
from .checks import run_all_checks
from .config import RunConfig, load_config
from .data import PhantomSpec, generate_dataset, load_pair, read_manifest
from .losses import LossConfig, gradient_map, loss_c, loss_in, psnr, ssim
from .model import (count_parameters, forward, init_model, load_state_arrays,
                    named_parameters, preset, state_arrays)
from .optim import AdamW
from .resample import bicubic_upsample
from .tensor import Tensor


def _dtype(cfg: RunConfig):
    return np.float32 if cfg.precision == "f32" else np.float64


def _model(cfg: RunConfig, safe_start=True):
    mc = preset(cfg.preset, r=cfg.r)
    state = init_model(mc, seed=cfg.seed, dtype=_dtype(cfg), safe_start=safe_start)
    return mc, state


def _out_dir(cfg: RunConfig):
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out / "config_echo.txt")
    return out


def cmd_gen_data(cfg: RunConfig):
    spec = PhantomSpec(seed=cfg.seed, side=cfg.side, ellipses_min=cfg.ellipses_min,
                       ellipses_max=cfg.ellipses_max, blur_sigma=cfg.blur_sigma,
                       noise_sigma=cfg.noise_sigma)
    ids = generate_dataset(cfg.data_dir, cfg.samples, cfg.r, spec)
    _out_dir(cfg)
    print(f"wrote {len(ids)} samples to {cfg.data_dir}")
    return 0


def _sample_losses(pair, state, mc, lcfg):
    i_out, r_out = forward(pair.t2_lr, pair.t2_lr_grad, pair.t1_hr_grad, state, mc)
    gt = Tensor(np.asarray(pair.t2_hr, dtype=i_out.data.dtype))
    li = loss_in(i_out, gt, lcfg)
    lc = loss_c(r_out, gradient_map(gt, lcfg.epsilon_grad), lcfg)
    return i_out, r_out, li, lc


def cmd_train(cfg: RunConfig):
    out = _out_dir(cfg)
    ids = read_manifest(cfg.data_dir)
    pairs = [load_pair(cfg.data_dir, sid) for sid in ids]
    mc, state = _model(cfg)
    mc.preflight(pairs[0].t2_lr.shape[0], pairs[0].t2_lr.shape[1])
    lcfg = LossConfig(alpha=cfg.alpha, lam=cfg.lam)
    opt = AdamW(named_parameters(state), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    ckpt_path = out / "checkpoint.chft"

    step = 0
    stop = False
    with open(out / "train_log.csv", "w", newline="") as logf:
        log = csv.writer(logf)
        log.writerow(["step", "total", "loss_in", "loss_c"])
        for epoch in range(cfg.epochs):
            opt.lr = cfg.lr * 0.5 ** (epoch // cfg.lr_halve_epochs)
            order = rng.permutation(len(pairs))
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                with T.Tape() as tape:
                    li_sum = lc_sum = None
                    for idx in batch:
                        _, _, li, lc = _sample_losses(pairs[idx], state, mc, lcfg)
                        li_sum = li if li_sum is None else li_sum + li
                        lc_sum = lc if lc_sum is None else lc_sum + lc
                    scale = 1.0 / len(batch)
                    li_mean = scale * li_sum
                    lc_mean = scale * lc_sum
                    total = li_mean + cfg.lam * lc_mean
                if not np.isfinite(total.item()):
                    print(f"training diverged: non-finite loss at step {step + 1}", file=sys.stderr)
                    return 1
                grads = T.backward(total, tape)
                opt.step(grads)
                step += 1
                log.writerow([step, f"{total.item():.8f}",
                              f"{li_mean.item():.8f}", f"{lc_mean.item():.8f}"])
                if cfg.steps and step >= cfg.steps:
                    stop = True
                    break
            chft.save_container(ckpt_path, state_arrays(state))
            if stop:
                break
    chft.save_container(ckpt_path, state_arrays(state))
    print(f"trained {step} steps ({count_parameters(state)} parameters); "
          f"checkpoint at {ckpt_path}")
    return 0


def _load_checkpoint(cfg, path):
    mc, state = _model(cfg)
    load_state_arrays(state, chft.load_container(path))
    return mc, state


def cmd_eval(cfg: RunConfig, checkpoint):
    out = _out_dir(cfg)
    mc, state = _load_checkpoint(cfg, checkpoint)
    lcfg = LossConfig(alpha=cfg.alpha, lam=cfg.lam)
    ids = read_manifest(cfg.data_dir)
    rows = []
    for sid in ids:
        pair = load_pair(cfg.data_dir, sid)
        i_out, r_out, li, lc = _sample_losses(pair, state, mc, lcfg)
        total = li.item() + cfg.lam * lc.item()
        up = bicubic_upsample(pair.t2_lr[:, :, 0].astype(np.float64), cfg.r)[:, :, None]
        rows.append([
            sid,
            psnr(i_out.data, pair.t2_hr),
            ssim(Tensor(i_out.data.astype(np.float64)), Tensor(pair.t2_hr), lcfg).item(),
            li.item(), lc.item(), total,
            psnr(up, pair.t2_hr),
            ssim(Tensor(up), Tensor(pair.t2_hr), lcfg).item(),
        ])
    path = out / "metrics.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "psnr_db", "ssim", "loss_in", "loss_c", "total",
                    "psnr_bicubic", "ssim_bicubic"])
        for row in rows:
            w.writerow([row[0]] + [f"{v:.6f}" if math.isfinite(v) else "inf" for v in row[1:]])
    mean_psnr = float(np.mean([r[1] for r in rows]))
    mean_bic = float(np.mean([r[6] for r in rows]))
    print(f"evaluated {len(rows)} samples: mean PSNR {mean_psnr:.3f} dB "
          f"(bicubic {mean_bic:.3f} dB); report at {path}")
    return 0


def cmd_infer(cfg: RunConfig, checkpoint, t2_lr_path, t2_lr_grad_path, t1_hr_grad_path):
    out = _out_dir(cfg)
    mc, state = _load_checkpoint(cfg, checkpoint)
    i_in = chft.load_tensor(t2_lr_path)
    r_s = chft.load_tensor(t2_lr_grad_path)
    r_c = chft.load_tensor(t1_hr_grad_path)
    i_out, r_out = forward(i_in, r_s, r_c, state, mc)
    chft.save_tensor(out / "i_out.chft", i_out.data)
    chft.save_tensor(out / "r_out.chft", r_out.data)
    print(f"wrote {out / 'i_out.chft'} and {out / 'r_out.chft'}")
    return 0


def cmd_check(cfg: RunConfig):
    results = run_all_checks(cfg.seed)
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        line = f"[{status}] {r.name}"
        if r.detail:
            line += f"  ({r.detail})"
        print(line)
        failed += 0 if r.passed else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="cohft",
                                     description="guided MR super-resolution reference implementation")
    parser.add_argument("--config", metavar="PATH", default=None,
                        help="plain-text key=value configuration file")
    parser.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        dest="overrides", help="override one configuration key (repeatable)")
    parser.add_argument("--out", metavar="DIR", default=None, help="output directory")
    parser.add_argument("--seed", metavar="N", type=int, default=None)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", help="generate a synthetic paired dataset")
    sub.add_parser("train", help="train from the configured dataset")
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the dataset")
    p_eval.add_argument("checkpoint")
    p_infer = sub.add_parser("infer", help="super-resolve one sample")
    p_infer.add_argument("checkpoint")
    p_infer.add_argument("t2_lr")
    p_infer.add_argument("t2_lr_grad")
    p_infer.add_argument("t1_hr_grad")
    sub.add_parser("check", help="run the invariant and gradient verification suite")
    args = parser.parse_args(argv)

    overrides = list(args.overrides)
    if args.out is not None:
        overrides.append(f"out_dir={args.out}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    cfg = load_config(args.config, overrides)

    if args.command == "gen-data":
        return cmd_gen_data(cfg)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint)
    if args.command == "infer":
        return cmd_infer(cfg, args.checkpoint, args.t2_lr, args.t2_lr_grad, args.t1_hr_grad)
    if args.command == "check":
        return cmd_check(cfg)
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
