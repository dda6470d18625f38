"""Command line interface.

Exit codes: 0 success, 2 validation error, 3 I/O or file-format error.
"""
import csv
import functools
from dataclasses import replace
import logging
import sys

import click
import numpy as np

from .channel import generate_dataset, load_dataset, path_statistics, save_dataset
from .config import load_run_config
from .errors import ConfigError, FormatError
from .fileio import fmatrix_from_bytes, load_fmatrix, save_fmatrix, write_fmatrix_csv
from .modem import NotUnitaryError, ber_sweep, dft_matrix, identity_matrix, write_ber_csv
from .numerics import unitarity_residual
from .objective import core_inverse, fairness_from_diagonal, mse_diagonal, trace_invariance_check
from .training import finalize_modulation, load_checkpoint, save_checkpoint, train

EXIT_VALIDATION = 2
EXIT_IO = 3


def _guard(fn):
    """Map library exceptions onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NotUnitaryError as exc:
            click.echo(f"error: modulation file fails unitarity ({exc})", err=True)
            sys.exit(EXIT_VALIDATION)
        except FormatError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_IO)
        except (ConfigError, ValueError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_IO)

    return wrapper


config_option = click.option(
    "--config", "config_path", type=click.Path(dir_okay=False), default=None,
    help="YAML run configuration (defaults apply when omitted).",
)
jobs_option = click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True,
                           help="Worker cap; 1 is the bit-exact sequential path.")


def _load_dataset_for(cfg, path):
    ds = load_dataset(path)
    if ds.config != cfg.system:
        raise ConfigError(
            f"dataset {path} was generated with a different system configuration "
            f"(N={ds.config.N}, N_g={ds.config.N_g}, P={ds.config.P}) than the config file "
            f"(N={cfg.system.N}, N_g={cfg.system.N_g}, P={cfg.system.P})"
        )
    return ds


def _mean_fairness(dataset, f, sigma2, variant):
    h = dataset.matrices()
    minv = core_inverse(h, sigma2)
    e = mse_diagonal(minv, np.broadcast_to(f, minv.shape), sigma2)
    return float(np.mean(fairness_from_diagonal(e, variant)))


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose):
    """Modulation optimization for delay-scale spread acoustic channels."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(message)s")


@main.command("gen-dataset")
@config_option
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--seed", type=int, default=None, help="Defaults to dataset.train_seed.")
@click.option("--count", type=int, required=True)
@jobs_option
@_guard
def gen_dataset(config_path, out_path, seed, count, jobs):
    """Draw channel realizations and write a UWAD file."""
    cfg = load_run_config(config_path)
    if count < 1:
        raise ConfigError("--count must be >= 1")
    seed = cfg.dataset.train_seed if seed is None else seed
    ds = generate_dataset(cfg.system, seed, count, jobs=jobs)
    save_dataset(ds, out_path)
    st = path_statistics(ds)
    click.echo(f"wrote {count} realizations to {out_path} (seed {seed})")
    if "mean_interarrival" in st:
        click.echo(f"mean inter-arrival: {st['mean_interarrival'] * 1e3:.4f} ms")
        click.echo(f"decay slope over guard: {st['decay_slope_db']:.3f} dB")
    click.echo(f"Doppler scale range: [{st['a_min']:.6g}, {st['a_max_observed']:.6g}] "
               f"(a_max {st['a_max']:.6g})")
    click.echo(f"last arrival beyond guard: {st['fraction_beyond_guard'] * 100:.2f}% of realizations")


@main.command("train")
@config_option
@click.option("--train", "train_path", required=True, type=click.Path(dir_okay=False))
@click.option("--test", "test_path", required=True, type=click.Path(dir_okay=False))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(dir_okay=False))
@click.option("--fmatrix", "f_path", required=True, type=click.Path(dir_okay=False))
@click.option("--log", "log_path", type=click.Path(dir_okay=False), default=None,
              help="Training log CSV (default: <checkpoint>.log.csv).")
@click.option("--resume", "resume_path", type=click.Path(dir_okay=False), default=None)
@click.option("--seed", type=int, default=None, help="Override train.seed.")
@click.option("--epochs", type=int, default=None, help="Override train.epochs.")
@jobs_option
@_guard
def train_cmd(config_path, train_path, test_path, ckpt_path, f_path, log_path,
              resume_path, seed, epochs, jobs):
    """Train the network, then write checkpoint, log and modulation matrix."""
    cfg = load_run_config(config_path)
    tcfg = cfg.train
    if seed is not None:
        tcfg = replace(tcfg, seed=seed)
    if epochs is not None:
        tcfg = replace(tcfg, epochs=epochs)
    train_set = _load_dataset_for(cfg, train_path)
    test_set = _load_dataset_for(cfg, test_path)
    state = None
    if resume_path is not None:
        state, _ = load_checkpoint(resume_path)
    log_path = log_path or f"{ckpt_path}.log.csv"
    state = train(train_set, test_set, tcfg, state=state, log_path=log_path, jobs=jobs)
    save_checkpoint(state, tcfg, ckpt_path)
    f, consistency = finalize_modulation(state, test_set)
    save_fmatrix(f, f_path)

    n = cfg.system.N
    s2 = tcfg.train_sigma2
    learned = _mean_fairness(test_set, f, s2, tcfg.profile_variant)
    dft = _mean_fairness(test_set, dft_matrix(n), s2, tcfg.profile_variant)
    ident = _mean_fairness(test_set, identity_matrix(n), s2, tcfg.profile_variant)
    stop = "early stop" if state.stopped_early else "epoch limit"
    click.echo(f"trained {state.epoch} epochs ({state.step} steps, {stop})")
    click.echo(f"consistency mean q(F_m, F): {consistency:.6g} "
               f"(epoch 1: {state.history[0].consistency:.6g})")
    click.echo(f"mean test fairness objective: learned {learned:.6g}, "
               f"dft {dft:.6g}, identity {ident:.6g}")
    click.echo(f"unitarity residual: {unitarity_residual(f):.3e}")
    click.echo(f"wrote {ckpt_path}, {log_path}, {f_path}")


def _resolve_f(fmatrix_path, builtin, n):
    if (fmatrix_path is None) == (builtin is None):
        raise ConfigError("give exactly one of --fmatrix or --builtin")
    if builtin == "identity":
        return identity_matrix(n)
    if builtin == "dft":
        return dft_matrix(n)
    return load_fmatrix(fmatrix_path)


def _parse_snr(text):
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --snr list {text!r}") from exc


@main.command("eval-ber")
@config_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path(dir_okay=False))
@click.option("--fmatrix", "f_path", type=click.Path(dir_okay=False), default=None)
@click.option("--builtin", type=click.Choice(["identity", "dft"]), default=None)
@click.option("--snr", "snr_text", default=None, help="Comma separated SNR list in dB.")
@click.option("--trials", type=int, default=None, help="Trials per realization.")
@click.option("--seed", type=int, default=None, help="Override eval.seed.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--plot-data", "plot_path", type=click.Path(dir_okay=False), default=None,
              help="Optional TSV of snr_db and log10(ber).")
@jobs_option
@_guard
def eval_ber(config_path, dataset_path, f_path, builtin, snr_text, trials, seed, out_path,
             plot_path, jobs):
    """Monte Carlo BER sweep with LMMSE equalization."""
    cfg = load_run_config(config_path)
    ds = _load_dataset_for(cfg, dataset_path)
    f = _resolve_f(f_path, builtin, cfg.system.N)
    if f.shape[0] != cfg.system.N:
        raise ConfigError(f"modulation matrix is {f.shape[0]}x{f.shape[0]}, config has N = {cfg.system.N}")
    snr = _parse_snr(snr_text) if snr_text else list(cfg.eval.snr_db)
    trials = cfg.eval.trials if trials is None else trials
    seed = cfg.eval.seed if seed is None else seed
    points = ber_sweep(f, ds, snr, trials, seed=seed, jobs=jobs)
    write_ber_csv(points, out_path)
    if plot_path:
        with open(plot_path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter="\t", lineterminator="\n")
            w.writerow(["snr_db", "log10_ber"])
            for p in points:
                w.writerow([repr(p.snr_db), repr(float(np.log10(p.ber))) if p.ber > 0 else "-inf"])
    for p in points:
        click.echo(f"{p.snr_db:6.2f} dB  BER {p.ber:.4e}  ({p.bit_errors}/{p.bits})")


@main.command("inspect")
@config_option
@click.option("--dataset", "dataset_path", required=True, type=click.Path(dir_okay=False))
@click.option("--fmatrix", "f_path", required=True, type=click.Path(dir_okay=False))
@click.option("--snr", "snr_db", type=float, default=None,
              help="SNR in dB (default: the training noise level).")
@click.option("--mse-csv", "mse_path", type=click.Path(dir_okay=False), default=None,
              help="Per-symbol MSE of the first channel under each modulation.")
@_guard
def inspect(config_path, dataset_path, f_path, snr_db, mse_path):
    """Unitarity, trace invariance and per-symbol MSE report."""
    cfg = load_run_config(config_path)
    ds = _load_dataset_for(cfg, dataset_path)
    f = load_fmatrix(f_path)
    n = cfg.system.N
    if f.shape[0] != n:
        raise ConfigError(f"modulation matrix is {f.shape[0]}x{f.shape[0]}, config has N = {n}")
    s2 = cfg.train.train_sigma2 if snr_db is None else 10.0 ** (-snr_db / 10.0)
    mods = {"identity": identity_matrix(n), "dft": dft_matrix(n), "learned": f}
    h = ds.matrices()
    dev = max(trace_invariance_check(hk, s2, list(mods.values())) for hk in h)
    minv = core_inverse(h, s2)
    click.echo(f"unitarity residual ||F^H F - I||_F: {unitarity_residual(f):.3e}")
    click.echo(f"trace invariance max relative deviation over {len(ds)} channels: {dev:.3e}")
    profiles = {}
    for name, m in mods.items():
        e = mse_diagonal(minv, np.broadcast_to(m, minv.shape), s2)
        profiles[name] = e[0]
        click.echo(f"{name:>8}: first channel e_H min {e[0].min():.5g} max {e[0].max():.5g} "
                   f"std {e[0].std():.5g}; dataset mean std {e.std(axis=1).mean():.5g}")
    if mse_path:
        with open(mse_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["symbol"] + [f"e_{k}" for k in profiles])
            for k in range(n):
                w.writerow([k] + [repr(float(profiles[name][k])) for name in profiles])


@main.command("export-f")
@click.option("--fmatrix", "f_path", required=True, type=click.Path(dir_okay=False))
@click.option("--format", "fmt", type=click.Choice(["csv", "binary"]), default="csv",
              show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@_guard
def export_f(f_path, fmt, out_path):
    """Export a UWAF modulation matrix as CSV (row, col, re, im) or binary."""
    if fmt == "binary":
        with open(f_path, "rb") as src:
            buf = src.read()
        fmatrix_from_bytes(buf)  # validate before passing through
        with open(out_path, "wb") as dst:
            dst.write(buf)
    else:
        write_fmatrix_csv(load_fmatrix(f_path), out_path)
    click.echo(f"wrote {out_path}")


if __name__ == "__main__":
    main()
