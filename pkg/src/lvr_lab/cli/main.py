from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from ..decomposition import constant_benchmark, decompose, rebalancing_benchmark
from .config import load_config
from .ingest import ingest_price_csv
from .runner import classify_error, parse_pool_string, run


def _fail(exc: BaseException, json_errors: bool, out_dir: Path | None = None) -> None:
    kind, status = classify_error(exc)
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "line", None) is not None:
        payload["line"] = exc.line
    if out_dir is not None:
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / "error.json").write_text(json.dumps(payload, indent=2) + "\n")
        except OSError:
            pass
    if json_errors:
        click.echo(json.dumps(payload), err=True)
    else:
        click.echo(f"{kind}: {exc}", err=True)
    sys.exit(status)


def _echo_summary(result: dict, indent: str = "  ") -> None:
    for key, value in result.items():
        if isinstance(value, float):
            click.echo(f"{indent}{key}: {value:.6g}")
        elif isinstance(value, (int, str, bool)) or value is None:
            click.echo(f"{indent}{key}: {value}")
        elif isinstance(value, dict) and {"mean", "se"} <= set(value):
            click.echo(f"{indent}{key}: {value['mean']:.6g} +/- {value['se']:.2g}")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def main(verbose: bool):
    """Loss-versus-rebalancing lab: CFMM value functions, arbitrage replay and LVR."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command("run")
@click.argument("config_file", type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="Output directory (overrides outputs.dir).")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--seed", type=click.IntRange(min=0), default=None, help="Override monte_carlo.seed.")
@click.option("--json-errors", is_flag=True, help="Report failures as JSON on stderr.")
def run_cmd(config_file, out_dir, threads, seed, json_errors):
    """Run the scenario described by CONFIG_FILE (TOML)."""
    out = Path(out_dir) if out_dir else None
    try:
        cfg = load_config(config_file)
        out = out or Path(cfg.outputs.dir)
        summary = run(cfg, out, threads=threads, seed=seed)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured exit
        _fail(exc, json_errors, out)
    click.echo(f"mode {summary['mode']} (seed {summary['seed']}) -> {out}")
    _echo_summary(summary["result"])


@main.command("decompose")
@click.option("--prices", "prices_file", required=True, type=click.Path(dir_okay=False),
              help="CSV with header t,price.")
@click.option("--pool", "pool_spec", required=True,
              help="Pool spec, e.g. constant-product:L=1 or range-order:L=1,P_a=1,P_b=4.")
@click.option("--sigma", required=True, type=click.FloatRange(min=0),
              help="Volatility per sqrt(time unit of the CSV) for the closed-form LVR leg.")
@click.option("--benchmark", "benchmarks", multiple=True,
              help="Extra benchmark: 'rebalancing' or a constant holding quantity.")
@click.option("--realized", is_flag=True, help="Also emit the realized-variance LVR column.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=".", show_default=True)
@click.option("--json-errors", is_flag=True)
def decompose_cmd(prices_file, pool_spec, sigma, benchmarks, realized, out_dir, json_errors):
    """Decompose LP P&L on an external price series."""
    out = Path(out_dir)
    try:
        pool = parse_pool_string(pool_spec)
        path = ingest_price_csv(prices_file)
        extra = []
        for b in benchmarks:
            if b == "rebalancing":
                extra.append(rebalancing_benchmark(pool))
            else:
                try:
                    extra.append(constant_benchmark(float(b)))
                except ValueError as exc:
                    from ..errors import ConfigError

                    raise ConfigError(f"unknown benchmark {b!r}") from exc
        rep = decompose(pool, path, sigma, extra, realized=realized)
        out.mkdir(parents=True, exist_ok=True)
        rep.to_csv(out / "decomposition.csv")
        summary = {"mode": "decompose-external", "prices": str(prices_file), "pool": pool_spec,
                   "sigma": sigma, "result": rep.summary()}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except Exception as exc:  # noqa: BLE001
        _fail(exc, json_errors, out)
    click.echo(f"decomposed {path.steps} steps -> {out}")
    _echo_summary(summary["result"])


if __name__ == "__main__":
    main()
