"""
Command-line entry point

    python -m app.cli <subcommand> [--config FILE] [--key value ...]

Subcommands: simulate, filter, estimate, fisher, mc-table, converge, hist.
Settings come from a `key = value` file and are overridden by flags; every
key is also accepted as a flag (`--n_replicates 50` or `--n-replicates 50`).
"""

from typing import Callable, Dict, List, Optional, Sequence, TextIO
import argparse
import json
import logging
import os
import sys

import numpy as np
from pydantic import ValidationError

from app.config import configure_logging, settings
from app.exceptions import ConfigError, MultiscaleError
from app.schemas.experiments import McConfig
from app.schemas.model import ExampleTag, ModelSpec
from app.schemas.paths import Path
from app.schemas.run_config import RunConfig
from app.services.experiment_service import filter_convergence_study, run_mc_study
from app.services.inference_service import (
    fisher_closed,
    fisher_numeric,
    likelihood_profile,
    mle,
    reduced_filter,
    theoretical_stderr,
)
from app.services.model_service import DEFAULT_BOUNDS, example_model, reduce
from app.services.particle_service import marginal_particle_filter, particle_filter
from app.services.simulate_service import derive_seed, simulate_multiscale
from app.utils.config_file import read_config_file
from app.utils.csv_io import columns_to_rows, path_to_rows, read_path_csv, write_csv


logger = logging.getLogger(__name__)

# True parameters of the three estimation tables
DEFAULT_ALPHAS = {
    ExampleTag.EXAMPLE1: [0.0, 1.0, 1.5],
    ExampleTag.EXAMPLE2: [0.5, 1.0, 1.5],
    ExampleTag.EXAMPLE3: [0.7, 1.0, 1.8],
}

# Keys each subcommand cannot run without (example is required by RunConfig)
REQUIRED_KEYS = {
    "simulate": ("alpha",),
    "fisher": ("alpha",),
    "hist": ("alpha",),
    "converge": ("alpha",),
}

TABLE_COLUMNS = ["alpha", "mean_estimate", "empirical_stderr", "theoretical_stderr", "n_ok", "n_fail"]


class _RaisingParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(None, message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _RaisingParser(prog="msfm", description=__doc__.strip().splitlines()[0], allow_abbrev=False)
    parser.add_argument("subcommand", choices=list(SUBCOMMANDS))
    parser.add_argument("--config", dest="config_file", default=None)
    for name in RunConfig.model_fields:
        if name == "subcommand":
            continue
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        parser.add_argument(*flags, dest=name, default=argparse.SUPPRESS)
    return parser


def _one_line(message: str) -> str:
    return " ".join(str(message).split())


def _config_error(e: ValidationError) -> ConfigError:
    first = e.errors()[0]
    key = ".".join(str(part) for part in first["loc"]) or None
    return ConfigError(key, _one_line(first["msg"]))


def parse_config(argv: Sequence[str]) -> RunConfig:
    """
    Build a RunConfig from the command line (and an optional config file)

    Args:
        argv: Arguments without the program name

    Returns:
        Validated RunConfig; seed falls back to MSFM_SEED

    Raises:
        ConfigError: Unknown key, malformed or out-of-range value, or a
            missing required key; the error names the key
    """
    parser = _build_parser()
    args, unknown = parser.parse_known_args(list(argv))
    if unknown:
        flag = next((item for item in unknown if item.startswith("-")), unknown[0])
        raise ConfigError(flag.lstrip("-"), "unknown key")

    values: Dict[str, object] = {}
    if args.config_file:
        values.update(read_config_file(args.config_file))
    overrides = {key: value for key, value in vars(args).items() if key not in ("subcommand", "config_file")}
    values.update(overrides)

    for key in values:
        if key not in RunConfig.model_fields or key == "subcommand":
            raise ConfigError(key, "unknown key")
    if values.get("seed") in (None, "") and settings.MSFM_SEED is not None:
        values["seed"] = settings.MSFM_SEED

    try:
        config = RunConfig(subcommand=args.subcommand, **values)
    except ValidationError as e:
        raise _config_error(e) from None

    for key in REQUIRED_KEYS.get(config.subcommand, ()):
        if getattr(config, key) is None:
            raise ConfigError(key, f"required by {config.subcommand}")
    if config.subcommand in ("filter", "estimate") and config.input is None and config.alpha is None:
        raise ConfigError("alpha", f"required by {config.subcommand} when no input file is given")
    if config.subcommand == "filter" and config.filter_theta is None:
        raise ConfigError("theta", "required by filter when no alpha is given")
    return config


def resolved_seed(config: RunConfig) -> int:
    return 0 if config.seed is None else config.seed


def theta_bounds(config: RunConfig):
    if config.theta_lo is None and config.theta_hi is None:
        return None
    lo, hi = DEFAULT_BOUNDS[config.example]
    return (
        lo if config.theta_lo is None else config.theta_lo,
        hi if config.theta_hi is None else config.theta_hi,
    )


def build_model(config: RunConfig) -> ModelSpec:
    return example_model(
        config.example,
        Sigma=config.Sigma,
        sigma=config.sigma,
        delta=config.delta,
        theta_bounds=theta_bounds(config),
    )


def mc_config(config: RunConfig, alpha: float) -> McConfig:
    """Monte Carlo row for one true parameter of a run config"""
    return McConfig(
        example_tag=config.example,
        true_alpha=alpha,
        n_replicates=config.n_replicates,
        T=config.T,
        delta=config.delta,
        dt=config.dt,
        Sigma=config.Sigma,
        sigma=config.sigma,
        theta_bounds=theta_bounds(config),
        root_seed=resolved_seed(config),
        fisher_T=config.fisher_T,
    )


def observations(config: RunConfig, model: ModelSpec) -> Path:
    if config.input is not None:
        return read_path_csv(config.input, seed=resolved_seed(config), delta=config.delta)
    return simulate_multiscale(model, config.alpha, config.T, config.dt, resolved_seed(config))


def _output_dir(config: RunConfig) -> str:
    directory = config.output or "."
    os.makedirs(directory, exist_ok=True)
    return directory


def run_simulate(config: RunConfig, out: TextIO) -> None:
    path = simulate_multiscale(build_model(config), config.alpha, config.T, config.dt, resolved_seed(config))
    write_csv(config.output, ["t", "Y", "U", "X"], path_to_rows(path), default=out)


def run_filter(config: RunConfig, out: TextIO) -> None:
    model = build_model(config)
    obs = observations(config, model)
    theta = config.filter_theta

    if config.method in ("particle", "marginal"):
        run = marginal_particle_filter if config.method == "marginal" else particle_filter
        result, log_evidence = run(model, theta, obs, N=config.n_particles, seed=derive_seed(resolved_seed(config), 1))
        logger.info(f"[Filter] particle log-evidence {log_evidence:.6g}")
        columns = {"t": result.times, "pi_h": result.pi_h, "ess": result.ess}
    else:
        result = reduced_filter(model, theta, obs)
        spread = result.sigma_hat if result.sigma_hat is not None else result.pi_h * (1.0 - result.pi_h)
        columns = {"t": result.times, "pi_h": result.pi_h, "sigma_hat": spread}
    write_csv(config.output, list(columns), columns_to_rows(columns), default=out)


def run_estimate(config: RunConfig, out: TextIO) -> None:
    model = build_model(config)
    obs = observations(config, model)
    result = mle(model, obs)
    out.write(json.dumps(result.model_dump()) + "\n")

    if config.profile is not None:
        lo, hi = model.theta_bounds
        grid = np.linspace(lo, hi, settings.MLE_GRID_POINTS)
        columns = {"theta": grid, "loglik": likelihood_profile(model, obs, grid)}
        write_csv(config.profile, ["theta", "loglik"], columns_to_rows(columns))


def run_fisher(config: RunConfig, out: TextIO) -> None:
    model = build_model(config)
    if model.slow_kind == "chain":
        fisher = fisher_numeric(model, config.alpha, config.fisher_T, settings.FISHER_DT, resolved_seed(config))
        method = "numeric"
    else:
        fisher = fisher_closed(reduce(model), config.alpha)
        method = "closed"
    stderr = theoretical_stderr(fisher, config.T) if fisher > 0.0 else None
    out.write(json.dumps({"alpha": config.alpha, "fisher": fisher, "theoretical_stderr": stderr, "method": method}) + "\n")


def run_mc_table(config: RunConfig, out: TextIO) -> None:
    rows = []
    for alpha in config.alphas or DEFAULT_ALPHAS[config.example]:
        result = run_mc_study(mc_config(config, alpha), jobs=config.jobs, n_bins=config.n_bins)
        rows.append({
            "alpha": result.alpha,
            "mean_estimate": result.mean_estimate,
            "empirical_stderr": result.empirical_stderr,
            "theoretical_stderr": result.theoretical_stderr,
            "n_ok": result.n_ok,
            "n_fail": result.n_fail,
        })
    write_csv(os.path.join(_output_dir(config), "table.csv"), TABLE_COLUMNS, rows)


def run_hist(config: RunConfig, out: TextIO) -> None:
    result = run_mc_study(mc_config(config, config.alpha), jobs=config.jobs, n_bins=config.n_bins)
    hist = result.histogram
    directory = _output_dir(config)
    write_csv(
        os.path.join(directory, "hist.csv"),
        ["bin_left", "bin_right", "density"],
        columns_to_rows({"bin_left": hist.bin_edges[:-1], "bin_right": hist.bin_edges[1:], "density": hist.density}),
    )
    write_csv(
        os.path.join(directory, "overlay.csv"),
        ["x", "pdf"],
        columns_to_rows({"x": hist.overlay_x, "pdf": hist.overlay_pdf}),
    )


def run_converge(config: RunConfig, out: TextIO) -> None:
    table = filter_convergence_study(
        config.example,
        config.alpha,
        config.deltas,
        config.n_particles,
        config.n_replicates,
        T=config.T,
        dt=config.dt,
        Sigma=config.Sigma,
        sigma=config.sigma,
        root_seed=resolved_seed(config),
        particles="bootstrap" if config.method == "particle" else "marginal",
    )
    rows = [{"delta": row.delta, "mse": row.mse, "stderr": row.mc_stderr} for row in table.rows]
    write_csv(config.output, ["delta", "mse", "stderr"], rows, default=out)


SUBCOMMANDS: Dict[str, Callable[[RunConfig, TextIO], None]] = {
    "simulate": run_simulate,
    "filter": run_filter,
    "estimate": run_estimate,
    "fisher": run_fisher,
    "mc-table": run_mc_table,
    "converge": run_converge,
    "hist": run_hist,
}


def dispatch(config: RunConfig, out: Optional[TextIO] = None, err: Optional[TextIO] = None) -> int:
    """
    Run the subcommand of a parsed config

    Returns:
        0 on success, 1 on any error (reported as one line on err)
    """
    out = out or sys.stdout
    err = err or sys.stderr
    handler = SUBCOMMANDS.get(config.subcommand)
    if handler is None:
        err.write(f"error: unknown subcommand {config.subcommand}\n")
        return 1
    try:
        handler(config, out)
    except (MultiscaleError, ValueError, OSError) as e:
        err.write(f"error: {config.subcommand}: {_one_line(e)}\n")
        return 1
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    try:
        config = parse_config(sys.argv[1:] if argv is None else argv)
    except ConfigError as e:
        sys.stderr.write(f"error: {_one_line(e)}\n")
        return 2
    return dispatch(config)


if __name__ == "__main__":
    sys.exit(main())
