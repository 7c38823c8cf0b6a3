"""Configuration-driven command line front end.

Subcommands: ``simulate`` (Monte-Carlo deviation curves), ``theory``
(model curves plus step-size bounds), ``compare`` (merged
simulation/theory curves with a deviation report), and ``aec``
(delayless echo-cancellation run scoring ERLE).  Experiments are
described by an INI file with sections ``[run]``, ``[filterbank]``,
``[channel]``, ``[input]``, ``[algorithm]`` and optional per-algorithm
override sections ``[algorithm.<name>]``; see ``example_config()`` or
the README for the full schema.

Every run writes CSV files (with a config-hash comment line), a text
summary, and a JSON manifest sufficient to re-run bit-identically.
Exit status: 0 on success, 1 on errors, 2 when any trial diverged.
The PROXSAF_LOG environment variable sets the log level.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import _backend, filterbank, theory
from .experiments import (
    AlgorithmConfig,
    ChannelSpec,
    ExperimentConfig,
    InputSpec,
    algorithm_config,
    build_bank,
    erle_series,
    monte_carlo,
    noise_variance_for_snr,
    resolve_regularization,
    run_trial,
)

log = logging.getLogger("proxsaf")

DB_FLOOR = -300.0
MSD_THRESHOLD_DB = -20.0

_ALGORITHM_KEYS = {
    "step_size": float,
    "beta": float,
    "beta_mode": str,
    "tau": float,
    "regularization": float,
    "prop_rule": str,
    "zeta": float,
    "epsilon": float,
    "rho": float,
    "gamma": float,
}


class ConfigError(ValueError):
    """Configuration problem, annotated with the offending key path."""


def _get(section, key, cast, path, default=None, required=False):
    raw = section.get(key, None)
    if raw is None or raw.strip() == "":
        if required:
            raise ConfigError(f"{path}.{key}: required key is missing")
        return default
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{path}.{key}: cannot parse {raw!r} as {cast.__name__}") from exc


def _known_keys(section, allowed, path):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def parse_config(path) -> ExperimentConfig:
    """Read and validate an experiment definition file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")

    known_sections = {"run", "filterbank", "channel", "input", "algorithm"}
    for name in parser.sections():
        base = name.split(".", 1)[0]
        if base not in known_sections:
            raise ConfigError(f"{name}: unknown section")

    run = parser["run"] if parser.has_section("run") else {}
    _known_keys(run, {"mode", "trials", "total_samples", "seed", "snr_db",
                      "steady_state_window", "erle_smoothing", "stats_frames"}, "run")
    fb_sec = parser["filterbank"] if parser.has_section("filterbank") else {}
    _known_keys(fb_sec, {"num_subbands", "prototype_length", "prototype_file"}, "filterbank")
    ch = parser["channel"] if parser.has_section("channel") else {}
    _known_keys(ch, {"kind", "length", "nonzeros", "file", "seed", "value_scale",
                     "change_at", "change_shift"}, "channel")
    inp = parser["input"] if parser.has_section("input") else {}
    _known_keys(inp, {"kind", "ar_coefficient", "wav_file"}, "input")
    alg_sec = parser["algorithm"] if parser.has_section("algorithm") else {}
    _known_keys(alg_sec, {"names"} | set(_ALGORITHM_KEYS), "algorithm")

    names_raw = _get(alg_sec, "names", str, "algorithm", default="pnsaf")
    names = [n.strip() for n in names_raw.split(",") if n.strip()]
    if not names:
        raise ConfigError("algorithm.names: at least one algorithm is required")

    shared = {
        key: _get(alg_sec, key, cast, "algorithm")
        for key, cast in _ALGORITHM_KEYS.items()
        if key in alg_sec and str(alg_sec.get(key, "")).strip() != ""
    }
    algorithms = []
    for name in names:
        overrides = dict(shared)
        sec_name = f"algorithm.{name}"
        if parser.has_section(sec_name):
            sec = parser[sec_name]
            _known_keys(sec, set(_ALGORITHM_KEYS), sec_name)
            for key, cast in _ALGORITHM_KEYS.items():
                value = _get(sec, key, cast, sec_name)
                if value is not None:
                    overrides[key] = value
        try:
            algorithms.append(algorithm_config(name, **overrides))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"algorithm.{name}: {exc}") from exc

    change_at = _get(ch, "change_at", int, "channel")
    channel = ChannelSpec(
        kind=_get(ch, "kind", str, "channel", default="type1"),
        length=_get(ch, "length", int, "channel", default=128),
        nonzeros=_get(ch, "nonzeros", int, "channel", default=8),
        file=_get(ch, "file", str, "channel"),
        seed=_get(ch, "seed", int, "channel", default=0),
        value_scale=_get(ch, "value_scale", str, "channel", default="variance"),
        change_at=change_at,
        change_shift=_get(ch, "change_shift", int, "channel", default=12),
    )
    input_spec = InputSpec(
        kind=_get(inp, "kind", str, "input", default="ar1"),
        ar_coefficient=_get(inp, "ar_coefficient", float, "input", default=0.8),
        wav_file=_get(inp, "wav_file", str, "input"),
    )
    config = ExperimentConfig(
        algorithms=tuple(algorithms),
        num_subbands=_get(fb_sec, "num_subbands", int, "filterbank", default=4),
        prototype_length=_get(fb_sec, "prototype_length", int, "filterbank"),
        prototype_file=_get(fb_sec, "prototype_file", str, "filterbank"),
        channel=channel,
        input=input_spec,
        snr_db=_get(run, "snr_db", float, "run", default=30.0),
        trials=_get(run, "trials", int, "run", default=100),
        total_samples=_get(run, "total_samples", int, "run", default=50_000),
        seed=_get(run, "seed", int, "run", default=1234),
        steady_state_window=_get(run, "steady_state_window", int, "run", default=500),
        mode=_get(run, "mode", str, "run", default="system_id"),
        erle_smoothing=_get(run, "erle_smoothing", float, "run", default=0.996),
        stats_frames=_get(run, "stats_frames", int, "run", default=None),
    )
    try:
        config.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return config


def emit_config(config: ExperimentConfig) -> str:
    """Normalized INI text capturing the full effective configuration."""
    parser = configparser.ConfigParser()
    parser["run"] = {
        "mode": config.mode,
        "trials": str(config.trials),
        "total_samples": str(config.total_samples),
        "seed": str(config.seed),
        "snr_db": repr(config.snr_db),
        "steady_state_window": str(config.steady_state_window),
        "erle_smoothing": repr(config.erle_smoothing),
    }
    if config.stats_frames is not None:
        parser["run"]["stats_frames"] = str(config.stats_frames)
    fb_sec = {"num_subbands": str(config.num_subbands)}
    if config.prototype_length is not None:
        fb_sec["prototype_length"] = str(config.prototype_length)
    if config.prototype_file:
        fb_sec["prototype_file"] = str(config.prototype_file)
    parser["filterbank"] = fb_sec
    ch = config.channel
    ch_sec = {
        "kind": ch.kind,
        "length": str(ch.length),
        "nonzeros": str(ch.nonzeros),
        "seed": str(ch.seed),
        "value_scale": ch.value_scale,
        "change_shift": str(ch.change_shift),
    }
    if ch.file:
        ch_sec["file"] = str(ch.file)
    if ch.change_at is not None:
        ch_sec["change_at"] = str(ch.change_at)
    parser["channel"] = ch_sec
    inp_sec = {"kind": config.input.kind, "ar_coefficient": repr(config.input.ar_coefficient)}
    if config.input.wav_file:
        inp_sec["wav_file"] = str(config.input.wav_file)
    parser["input"] = inp_sec
    parser["algorithm"] = {"names": ", ".join(a.name for a in config.algorithms)}
    for alg in config.algorithms:
        sec = {
            "step_size": repr(alg.step_size),
            "beta": repr(alg.beta),
            "beta_mode": alg.beta_mode,
            "tau": repr(alg.tau),
            "prop_rule": alg.prop_rule,
            "zeta": repr(alg.zeta),
            "epsilon": repr(alg.epsilon),
            "rho": repr(alg.rho),
            "gamma": repr(alg.gamma),
        }
        if alg.regularization is not None:
            sec["regularization"] = repr(alg.regularization)
        parser[f"algorithm.{alg.name}"] = sec
    import io

    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(emit_config(config).encode()).hexdigest()[:16]


def example_config() -> str:
    """A ready-to-edit configuration showing every section."""
    cfg = ExperimentConfig(
        algorithms=(
            algorithm_config("pnsaf", step_size=0.5, regularization=1e-3),
            algorithm_config("pfbs_pnsaf", step_size=0.5, beta=9e-5, regularization=1e-3),
        )
    )
    return emit_config(cfg)


# ---------------------------------------------------------------------------
# output helpers


def _floor_db(values: np.ndarray) -> tuple[np.ndarray, bool]:
    clipped = bool(np.any(values < DB_FLOOR))
    return np.maximum(values, DB_FLOOR), clipped


def write_csv(path: Path, header: list[str], columns: list[np.ndarray], digest: str) -> None:
    rows = len(columns[0])
    with open(path, "w") as fh:
        fh.write(f"# config={digest}\n")
        fh.write(",".join(header) + "\n")
        for r in range(rows):
            fh.write(",".join(_fmt(col[r]) for col in columns) + "\n")


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    v = float(value)
    return "nan" if np.isnan(v) else f"{v:.6f}"


def write_manifest(out_dir: Path, name: str, payload: dict) -> Path:
    path = out_dir / f"{name}_manifest.json"
    tmp = path.with_suffix(".json.tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def iterations_to_threshold(values_db: np.ndarray, threshold_db: float = MSD_THRESHOLD_DB):
    hits = np.flatnonzero(values_db <= threshold_db)
    return int(hits[0]) if hits.size else None


def merge_series(sim_db: np.ndarray, theory_db: np.ndarray) -> np.ndarray:
    if sim_db.shape != theory_db.shape:
        raise ValueError(
            f"series lengths differ: simulation {sim_db.shape[0]} vs theory {theory_db.shape[0]}"
        )
    return np.abs(theory_db - sim_db)


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> int:
    digest = config_hash(config)
    channel = config.channel.build()
    start = time.time()
    outputs, lines = [], []
    diverged_total = 0
    clipped_any = False
    for alg in config.algorithms:
        log.info("simulate: %s", alg.name)
        result = monte_carlo(config, channel, alg, workers=workers)
        values, clipped = _floor_db(result.series.values_db)
        clipped_any |= clipped
        k = np.arange(values.size)
        path = out_dir / f"sim_{alg.name}.csv"
        write_csv(path, ["k", "msd_db"], [k, values], digest)
        outputs.append(str(path))
        hit = iterations_to_threshold(values)
        diverged_total += result.series.diverged_trials
        lines.append(
            f"{alg.name}: steady_state_msd_db={result.steady_state_msd_db:.2f} "
            f"iters_to_{int(-MSD_THRESHOLD_DB)}dB={hit if hit is not None else 'never'} "
            f"trials={result.series.num_trials} diverged={result.series.diverged_trials}"
        )
    summary = out_dir / "simulate_summary.txt"
    summary.write_text(
        "\n".join(lines)
        + (f"\nnote: values clipped at {DB_FLOOR} dB floor\n" if clipped_any else "\n")
    )
    outputs.append(str(summary))
    write_manifest(out_dir, "simulate", {
        "command": "simulate",
        "config": emit_config(config),
        "config_hash": digest,
        "seed": config.seed,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - start, 3),
        "diverged_trials": diverged_total,
        "backend": _backend.backend_name(),
    })
    return 2 if diverged_total else 0


def _theory_inputs(config: ExperimentConfig, stats_frames: int | None = None):
    """Bank, channel, and subband statistics for the model commands."""
    bank = build_bank(config)
    channel = config.channel.build()
    m = channel.length
    frames = stats_frames or config.stats_frames or max(20 * m, 50_000)
    seq = np.random.SeedSequence(config.seed).spawn(2)
    stats = filterbank.estimate_subband_statistics(
        bank, lambda n: config.input.generate(n, seq[0]), m, frames
    )
    pilot = config.input.generate(min(max(config.total_samples, 100_000), 400_000), seq[1])
    clean = lfilter(channel.impulse_response, [1.0], pilot)
    sigma_v2 = noise_variance_for_snr(clean, config.snr_db)
    stats = filterbank.SubbandStatistics(
        stats.autocorrelation,
        stats.input_variances,
        filterbank.subband_noise_variances(bank, sigma_v2),
    )
    return bank, channel, stats, float(np.mean(pilot**2))


_THEORY_RULES = {"identity": "identity", "simplified": "simplified"}


def _run_theory_curve(config, alg, channel, stats, bank, input_power):
    if alg.prop_rule not in _THEORY_RULES:
        raise ConfigError(
            f"algorithm.{alg.name}.prop_rule: no closed-form gain model for "
            f"{alg.prop_rule!r}; theory supports identity and simplified rules"
        )
    if alg.beta_mode == "auto":
        raise ConfigError(
            f"algorithm.{alg.name}.beta_mode: the transient model covers fixed beta only"
        )
    n = bank.num_subbands
    num_iters = config.total_samples // n
    delta = resolve_regularization(alg, config.input, input_power, n, channel.length)
    holdoff = min(num_iters,
                  max(0, -(-(channel.length + bank.filter_length - 1) // n) - 1))
    msd, emse, state = theory.run_transient(
        channel.impulse_response, stats, alg.step_size, alg.beta, delta,
        num_iters, alg.zeta, alg.epsilon, rule=_THEORY_RULES[alg.prop_rule],
        startup_delay=holdoff,
    )
    return msd, emse, state, delta


def cmd_theory(config: ExperimentConfig, out_dir: Path) -> int:
    digest = config_hash(config)
    start = time.time()
    bank, channel, stats, input_power = _theory_inputs(config)
    outputs, lines = [], []
    for alg in config.algorithms:
        log.info("theory: %s", alg.name)
        msd, emse, state, delta = _run_theory_curve(config, alg, channel, stats, bank, input_power)
        with np.errstate(divide="ignore"):
            msd_db, clipped1 = _floor_db(10.0 * np.log10(msd))
            emse_db, clipped2 = _floor_db(10.0 * np.log10(emse))
        path = out_dir / f"theory_{alg.name}.csv"
        write_csv(path, ["k", "msd_db", "emse_db"],
                  [np.arange(msd.size), msd_db, emse_db], digest)
        outputs.append(str(path))
        bounds = theory.stability_bounds(stats, state.gains_mean, delta)
        try:
            ss = theory.steady_state_msd(stats, alg.step_size, delta)
            ss_text = f"{10.0 * np.log10(ss['msd']):.2f}"
        except theory.StabilityError:
            ss_text = "unstable"
        lines.append(
            f"{alg.name}: mu_mean_max={bounds['mu_mean_max']:.4f} "
            f"mu_ms_max={bounds['mu_ms_max']:.4f} mu_practical={bounds['mu_practical']:.4f} "
            f"steady_state_msd_db(no threshold correction)={ss_text} "
            f"final_theory_msd_db={msd_db[-1]:.2f}"
        )
    report = out_dir / "theory_bounds.txt"
    report.write_text("\n".join(lines) + "\n")
    outputs.append(str(report))
    write_manifest(out_dir, "theory", {
        "command": "theory",
        "config": emit_config(config),
        "config_hash": digest,
        "seed": config.seed,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - start, 3),
        "diverged_trials": 0,
        "backend": _backend.backend_name(),
    })
    return 0


def cmd_compare(config: ExperimentConfig, out_dir: Path, workers: int = 1) -> int:
    digest = config_hash(config)
    start = time.time()
    bank, channel, stats, input_power = _theory_inputs(config)
    outputs, lines = [], []
    diverged_total = 0
    for alg in config.algorithms:
        log.info("compare: %s", alg.name)
        result = monte_carlo(config, channel, alg, workers=workers)
        sim_db, _ = _floor_db(result.series.values_db)
        msd, _, _, _ = _run_theory_curve(config, alg, channel, stats, bank, input_power)
        with np.errstate(divide="ignore"):
            th_db, _ = _floor_db(10.0 * np.log10(msd))
        deviation = merge_series(sim_db, th_db)
        path = out_dir / f"compare_{alg.name}.csv"
        write_csv(path, ["k", "sim_msd_db", "theory_msd_db"],
                  [np.arange(sim_db.size), sim_db, th_db], digest)
        outputs.append(str(path))
        tail = deviation[min(10, deviation.size - 1):]
        diverged_total += result.series.diverged_trials
        lines.append(
            f"{alg.name}: max_deviation_db={np.nanmax(deviation):.3f} "
            f"max_deviation_db_after_10={np.nanmax(tail):.3f} "
            f"diverged={result.series.diverged_trials}"
        )
    report = out_dir / "compare_report.txt"
    report.write_text("\n".join(lines) + "\n")
    outputs.append(str(report))
    write_manifest(out_dir, "compare", {
        "command": "compare",
        "config": emit_config(config),
        "config_hash": digest,
        "seed": config.seed,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - start, 3),
        "diverged_trials": diverged_total,
        "backend": _backend.backend_name(),
    })
    return 2 if diverged_total else 0


def cmd_aec(config: ExperimentConfig, out_dir: Path) -> int:
    if config.mode != "aec":
        config = replace(config, mode="aec")
    digest = config_hash(config)
    start = time.time()
    channel = config.channel.build()
    bank = build_bank(config)
    outputs, lines = [], []
    diverged_total = 0
    for alg in config.algorithms:
        log.info("aec: %s", alg.name)
        trial = run_trial(config, channel, config.seed, alg, bank=bank)
        if trial.diverged:
            diverged_total += 1
        series = erle_series(trial.desired_signal, trial.error_signal, config.erle_smoothing)
        path = out_dir / f"erle_{alg.name}.csv"
        write_csv(path, ["n", "erle_db"],
                  [np.arange(series.values_db.size), series.values_db], digest)
        outputs.append(str(path))
        tail = series.values_db[int(0.8 * series.values_db.size):]
        line = (
            f"{alg.name}: mean_erle_final20pct_db={np.nanmean(tail):.2f} "
            f"diverged={trial.diverged}"
        )
        if channel.change_schedule is not None:
            k = _reconvergence_index(trial.msd, channel, config.num_subbands)
            line += f" reconverged_at_sample={k * config.num_subbands if k is not None else 'never'}"
        if series.clipped:
            line += " (erle clipped at +100 dB)"
        lines.append(line)
    summary = out_dir / "aec_summary.txt"
    summary.write_text("\n".join(lines) + "\n")
    outputs.append(str(summary))
    write_manifest(out_dir, "aec", {
        "command": "aec",
        "config": emit_config(config),
        "config_hash": digest,
        "seed": config.seed,
        "outputs": outputs,
        "wall_clock_s": round(time.time() - start, 3),
        "diverged_trials": diverged_total,
        "backend": _backend.backend_name(),
    })
    return 2 if diverged_total else 0


def _reconvergence_index(msd: np.ndarray, channel, num_subbands: int):
    """First post-change iteration back within 1 dB of the pre-change level."""
    change_frame = channel.change_schedule.at_sample // num_subbands
    if change_frame <= 0 or change_frame >= msd.size:
        return None
    pre_window = msd[max(0, change_frame - 200): change_frame]
    pre_db = 10.0 * np.log10(np.mean(pre_window))
    with np.errstate(divide="ignore"):
        post_db = 10.0 * np.log10(msd[change_frame:])
    hits = np.flatnonzero(post_db <= pre_db + 1.0)
    return int(change_frame + hits[0]) if hits.size else None


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="proxsaf",
        description="Sparse-aware subband adaptive filtering experiments",
    )
    parser.add_argument("command", choices=["simulate", "theory", "compare", "aec"])
    parser.add_argument("--config", required=True, help="experiment definition (INI)")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default="proxsaf_out", help="output directory")
    parser.add_argument("--trials", type=int, default=None, help="override run.trials")
    parser.add_argument("--workers", type=int, default=1, help="parallel trial workers")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=os.environ.get("PROXSAF_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.trials is not None:
            config = replace(config, trials=args.trials)
        config.validate()
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(config, out_dir, workers=args.workers)
        if args.command == "theory":
            return cmd_theory(config, out_dir)
        if args.command == "compare":
            return cmd_compare(config, out_dir, workers=args.workers)
        return cmd_aec(config, out_dir)
    except (ConfigError, ValueError, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
