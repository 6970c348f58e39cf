"""Command-line entry point.

Usage:
  {program} train [options]
  {program} eval [options] [--checkpoints=DIR]
  {program} replay [options]
  {program} export-dataset [options]
  {program} validate-config [options]
  {program} (-h | --help)

Commands:
  train             Train one run per seed and write metrics, a summary
                    and checkpoints to the output directory.
  eval              Evaluate checkpoints written by train.
  replay            Train with the critic session replaying a cassette.
  export-dataset    Train and write the annotated trajectories.
  validate-config   Check the configuration and exit.

Options:
  -h --help                 Show this help.
  -c FILE --config=FILE     TOML run file.
  --env=ENV                 Environment and scenario, e.g. matrix,
                            spaceworld:10x10, lbf:8x8-2p-2f-c,
                            rware:tiny-2p.
  --critic=KIND             shared, oracle, llm_mca or llm_taca.
  --seeds=SEEDS             Number of seeds or a comma separated list.
  --iterations=N            Training iterations per seed.
  --episodes-per-iter=N     Episodes per iteration and critic call.
  --endpoint=URL            Chat-completions endpoint base URL.
  --model=NAME              Model name sent to the endpoint.
  --replay=CASSETTE         Replay critic responses from a cassette.
  --record=CASSETTE         Record critic responses to a cassette.
  --out=DIR                 Output directory.
  --parallel                Train seeds in parallel threads.
  --normalization=MODE      symmetric, sum_preserving or none.
  --checkpoints=DIR         Checkpoint directory (default: checkpoints
                            in the output directory).
  -v --verbose              Log debug messages.

The API key of live and recording critic sessions is read from the
LLM_API_KEY environment variable (a .env file in the working directory is
loaded first).
"""

import json
import logging
import logging.handlers
import math
import os
import sys

import docopt
import pandas as pd

from .config import load_config, load_environment
from .environments import make_env
from .exceptions import ConfigError, MarlCreditError, UsageError
from .policy import DQNAgent, load_checkpoint
from .trainer import (
    CHECKPOINT_SUFFIX,
    SEED_SPACE,
    MetricsRecord,
    aggregate_evaluations,
    evaluate,
    run_experiment,
)


log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_DEGRADED = 3

VERBS = ("train", "eval", "replay", "export-dataset", "validate-config")

METRICS_COLUMNS = ("iteration", "seed", "train_return", "eval_mean",
                   "eval_ci95", "loss", "epsilon", "degraded")

LOG_FORMAT = "%(asctime)s - %(levelname)s - [%(name)s] %(message)s"
LOG_FILE = "marlcredit.log"

_installed_handlers = []


def configure_logging(out_dir, verbose=False):
    """Rotating log file in ``out_dir`` plus console output on stderr."""
    root = logging.getLogger()
    for handler in _installed_handlers:
        root.removeHandler(handler)
        handler.close()
    del _installed_handlers[:]
    level = logging.DEBUG if verbose else logging.INFO
    formatter = logging.Formatter(LOG_FORMAT)
    os.makedirs(out_dir, exist_ok=True)
    file_handler = logging.handlers.RotatingFileHandler(
        os.path.join(out_dir, LOG_FILE), maxBytes=5 * 1024 * 1024,
        backupCount=3, encoding="utf-8")
    console_handler = logging.StreamHandler(sys.stderr)
    for handler in (file_handler, console_handler):
        handler.setFormatter(formatter)
        handler.setLevel(level)
        root.addHandler(handler)
        _installed_handlers.append(handler)
    root.setLevel(level)
    sys.excepthook = handle_exception


def handle_exception(exc_type, exc_value, exc_traceback):
    if issubclass(exc_type, KeyboardInterrupt):
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return
    log.critical("Uncaught exception",
                 exc_info=(exc_type, exc_value, exc_traceback))


def _metrics_row(record):
    def optional(value):
        return float("nan") if value is None else value
    return {
        "iteration": record.iteration,
        "seed": record.seed,
        "train_return": record.train_return,
        "eval_mean": optional(record.eval_mean),
        "eval_ci95": optional(record.eval_ci95),
        "loss": record.loss,
        "epsilon": record.epsilon,
        "degraded": int(record.degraded),
    }


def emit_metrics_csv(metrics, path):
    """Write one CSV row per metrics record; missing values are empty."""
    if not metrics:
        raise UsageError("No metrics to write")
    frame = pd.DataFrame([_metrics_row(r) for r in metrics],
                         columns=list(METRICS_COLUMNS))
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    frame.to_csv(path, index=False, na_rep="", lineterminator="\n")
    return path


def emit_summary_json(summary, path):
    with open(path, "w", encoding="utf-8") as summary_file:
        json.dump(summary, summary_file, indent=2, sort_keys=True)
        summary_file.write("\n")
    return path


def _int_flag(arguments, name):
    value = arguments[name]
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigError("{} expects an integer, got {!r}".format(
            name, value))


def _seeds_flag(value):
    if value is None:
        return None
    try:
        if "," in value:
            return [int(s) for s in value.split(",") if s.strip()]
        return int(value)
    except ValueError:
        raise ConfigError("--seeds expects a count or a list, got {!r}"
                          .format(value))


def _overrides(arguments, verb):
    return {
        "env": arguments["--env"],
        "critic": arguments["--critic"],
        "seeds": _seeds_flag(arguments["--seeds"]),
        "iterations": _int_flag(arguments, "--iterations"),
        "episodes_per_iteration": _int_flag(arguments,
                                            "--episodes-per-iter"),
        "endpoint": arguments["--endpoint"],
        "model": arguments["--model"],
        "replay": arguments["--replay"],
        "record": arguments["--record"],
        "out": arguments["--out"],
        "parallel": True if arguments["--parallel"] else None,
        "normalization": arguments["--normalization"],
        "export_dataset": verb == "export-dataset" or None,
    }


def _load(arguments, verb):
    overrides = _overrides(arguments, verb)
    if verb == "replay":
        if overrides["record"]:
            raise ConfigError("replay cannot be combined with --record")
        overrides["replay_mode"] = True
    return load_config(arguments["--config"], overrides)


def command_train(config, arguments):
    out = config.out_dir
    result = run_experiment(config, os.path.join(out, "checkpoints"))
    emit_metrics_csv(result.records, os.path.join(out, "metrics.csv"))
    summary = result.summary()
    emit_summary_json(summary, os.path.join(out, "summary.json"))
    if summary["mean"] is not None:
        log.info("Final evaluation return %.3f%s", summary["mean"],
                 "" if summary["ci95"] is None
                 else " +/- {:.3f}".format(summary["ci95"]))
    if result.degraded_iterations:
        log.warning("%d iteration(s) fell back to shared reward",
                    result.degraded_iterations)
        return EXIT_DEGRADED
    return EXIT_OK


def load_agents(directory, seed, num_agents):
    agents = []
    for i in range(1, num_agents + 1):
        path = os.path.join(directory, "seed{}".format(seed),
                            "agent{}{}".format(i, CHECKPOINT_SUFFIX))
        net = load_checkpoint(path)
        agents.append(DQNAgent(net.obs_dim, net.action_count, net.d_task,
                               replay_capacity=1, net=net))
    return agents


def command_eval(config, arguments):
    directory = arguments["--checkpoints"]
    if not directory:
        directory = os.path.join(config.out_dir, "checkpoints")
    env = make_env(config.env, config.env_params)
    records = []
    for seed in config.seeds:
        agents = load_agents(directory, seed, env.num_agents)
        returns = evaluate(agents, env, config.eval_episodes,
                           seed + SEED_SPACE)
        records.append(MetricsRecord(0, seed, float("nan"), float("nan"),
                                     0.0, eval_returns=tuple(returns)))
        log.info("seed %d: mean evaluation return %.3f", seed,
                 math.fsum(returns) / len(returns))
    aggregate_evaluations(records)
    emit_metrics_csv(records, os.path.join(config.out_dir, "eval.csv"))
    print("mean {:.3f}{}".format(
        records[0].eval_mean,
        "" if records[0].eval_ci95 is None
        else " +/- {:.3f}".format(records[0].eval_ci95)))
    return EXIT_OK


def command_validate(config, arguments):
    print("ok: {} with {} critic, {} seed(s), {} iteration(s)".format(
        config.env, config.critic.kind.value, len(config.seeds),
        config.iterations))
    return EXIT_OK


COMMANDS = {
    "train": command_train,
    "replay": command_train,
    "export-dataset": command_train,
    "eval": command_eval,
    "validate-config": command_validate,
}


def _error(message):
    print("marlcredit: error: {}".format(message), file=sys.stderr)


def run_command(argv=None):
    """Run one command and return its exit code."""
    try:
        arguments = docopt.docopt(__doc__.format(program="marlcredit"), argv)
    except docopt.DocoptExit as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    verb = next(v for v in VERBS if arguments[v])
    load_environment()
    try:
        config = _load(arguments, verb)
    except ConfigError as exc:
        _error(exc)
        return EXIT_CONFIG
    try:
        if verb != "validate-config":
            configure_logging(config.out_dir, arguments["--verbose"])
        return COMMANDS[verb](config, arguments)
    except ConfigError as exc:
        _error(exc)
        return EXIT_CONFIG
    except (MarlCreditError, OSError) as exc:
        log.debug("Command %s failed", verb, exc_info=True)
        _error(exc)
        return EXIT_RUNTIME


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
