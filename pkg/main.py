import json
import logging
import os
import sys

import click
from dotenv import load_dotenv

# Registers the Strong PC, multi-slot and compact message layouts with the decoder
import msc_engine  # noqa: F401
import spc_engine  # noqa: F401
import wire_compact  # noqa: F401
from errors import DecodeError, EngineFault, InvariantViolation, ScenarioError
from scenario import execute, load_scenario
from simnet import fmt_time
from suites import SUITES, run_suite, sweep
from wire_format import describe, hexdump

load_dotenv()

logger = logging.getLogger("prefixconsensus")

EXIT_OK = 0
EXIT_FAULT = 1
EXIT_SCENARIO = 2
EXIT_INVARIANT = 3


def default_out_dir() -> str:
    return os.getenv("PREFIXCONSENSUS_OUT_DIR", "runs")


def configure_logging(quiet: bool):
    level = logging.WARNING if quiet else os.getenv("PREFIXCONSENSUS_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)


def fail(code: int, message: str):
    click.echo(message, err=True)
    sys.exit(code)


def guarded(fn):
    """Map library errors onto the documented exit codes"""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ScenarioError as e:
            fail(EXIT_SCENARIO, f"scenario error at {e.path}: {e.detail}")
        except InvariantViolation as e:
            pointer = f" (transcript: {e.transcript})" if e.transcript else ""
            seed = f" seed={e.seed}" if e.seed is not None else ""
            fail(EXIT_INVARIANT, f"invariant violated: {e.name}: {e.detail}{seed}{pointer}")
        except EngineFault as e:
            fail(EXIT_FAULT, f"engine fault: {e}")
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@click.group()
@click.option("--quiet", is_flag=True, help="Only print warnings and the final result.")
@click.pass_context
def cli(ctx, quiet):
    """Simulate Prefix Consensus protocols and check their properties."""
    configure_logging(quiet)
    ctx.obj = {"quiet": quiet}


@cli.command()
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False),
              help="TOML scenario file.")
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Artifact directory.")
@click.option("--codec", type=click.Choice(["plain", "compact"]), default=None, help="Override the codec.")
@click.pass_context
@guarded
def run(ctx, scenario_path, seed, out, codec):
    """Run one scenario, write metrics and transcript, check its invariants."""
    scenario = load_scenario(scenario_path, seed=seed, codec=codec)
    outcome = execute(scenario, out_dir=out or scenario.out or default_out_dir())
    metrics = outcome.result.metrics
    click.echo(f"{scenario.name}: {scenario.protocol} n={scenario.n} f={scenario.f} codec={scenario.codec} "
               f"seed={scenario.seed}")
    for stage in ("opt", "low", "high", "grade", "decide"):
        times = {p: t for p, t in metrics.times(stage).items() if p in outcome.result.honest}
        if times:
            click.echo(f"  {stage}: t={fmt_time(max(times.values()))} ({len(times)} parties)")
    if scenario.protocol == "msc":
        click.echo(f"  slots decided: {outcome.summary['slots_decided']}, "
                   f"censored slots: {outcome.summary['censored_slots']}, "
                   f"demotions: {outcome.summary['demotions']}")
    click.echo(f"  messages: {metrics.messages}, bytes: {metrics.bytes}, transcript: {outcome.result.transcript_hash}")
    click.echo(f"  checks passed: {', '.join(outcome.passed) or 'none'}")
    for name, path in sorted(outcome.artifacts.items()):
        click.echo(f"  {name}: {path}")


@cli.command("sweep")
@click.option("--scenario", "scenario_path", required=True, type=click.Path(dir_okay=False),
              help="Template scenario; n and f are varied.")
@click.option("--n", "ns", type=int, multiple=True, help="Values of n (repeatable).")
@click.option("--fixed-length", is_flag=True, help="Keep the template's L instead of L = n.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--codec", type=click.Choice(["plain", "compact"]), default=None)
@click.pass_context
@guarded
def sweep_cmd(ctx, scenario_path, ns, fixed_length, workers, seed, out, codec):
    """Sweep n, tabulate messages and bytes, and fit growth exponents."""
    template = load_scenario(scenario_path, seed=seed, codec=codec)
    report = sweep(template, ns or None, l_equals_n=not fixed_length, out_dir=out or default_out_dir(),
                   workers=workers, quiet=ctx.obj["quiet"])
    click.echo(report.table.to_string(index=False))
    click.echo(f"message exponent: {report.exponents['messages']:.2f}")
    click.echo(f"byte exponent: {report.exponents['bytes']:.2f}")
    for name, path in sorted(report.paths.items()):
        click.echo(f"{name}: {path}")


@cli.command()
@click.argument("suite", type=click.Choice(sorted(SUITES)))
@click.option("--runs", type=int, default=None, help="Seeded runs (suite default when omitted).")
@click.option("--n", "ns", type=int, multiple=True, help="Values of n (repeatable).")
@click.option("--protocol", "protocols", multiple=True,
              type=click.Choice(["pc3", "pc_opt", "pc_5f1", "spc", "msc", "graded", "binary", "validated"]))
@click.option("--f", "f", type=int, default=None, help="Byzantine bound for the censorship suite.")
@click.option("--slots", type=int, default=None, help="Slots for the censorship and leaderless suites.")
@click.option("--seed", type=int, default=None, help="First seed.")
@click.option("--workers", type=int, default=None)
@click.option("--no-fuzz", is_flag=True, help="Start every run post-GST.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Write the suite report here.")
@click.pass_context
@guarded
def check(ctx, suite, runs, ns, protocols, f, slots, seed, workers, no_fuzz, out):
    """Run a property suite; exits 3 with the reproducer seed on the first violation."""
    options = {"runs": runs, "seed": seed, "quiet": ctx.obj["quiet"]}
    if suite in ("upperbound", "validity", "consistency", "availability", "agreement", "graded", "proofs"):
        options.update({"ns": list(ns) or None, "protocols": list(protocols) or None, "workers": workers,
                        "fuzz": not no_fuzz})
    elif suite == "censorship":
        options.update({"f": f, "slots": slots})
    elif suite == "leaderless":
        options.update({"n": ns[0] if ns else None, "slots": slots})
    report = run_suite(suite, **options)
    summary = report.to_dict()
    click.echo(f"{suite}: {report.runs} runs, all passed")
    for name, count in summary["passed"].items():
        click.echo(f"  {name}: {count}")
    for key, value in summary["stats"].items():
        click.echo(f"  {key}: {value}")
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, f"check_{suite}.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, ensure_ascii=False)


@cli.command()
@click.argument("data")
@click.option("--file", "from_file", is_flag=True, help="Treat DATA as a path to a binary frame.")
def decode(data, from_file):
    """Hex-dump and decode one framed message (hex string or file)."""
    try:
        if from_file:
            with open(data, "rb") as fh:
                raw = fh.read()
        else:
            raw = bytes.fromhex("".join(data.split()))
    except (OSError, ValueError) as e:
        fail(EXIT_SCENARIO, f"cannot read frame: {e}")
    click.echo(hexdump(raw))
    try:
        info = describe(raw)
    except DecodeError as e:
        fail(EXIT_SCENARIO, f"decode error at {e.field}: {e}")
    click.echo(f"codec={info['codec']} tag={info['tag']} kind={info['kind']} body_len={info['body_len']}")
    click.echo(repr(info["message"]))


if __name__ == "__main__":
    cli()
