import csv
import json
import logging
import math
import time
from collections.abc import Iterable, Iterator, Mapping
from contextlib import ContextDecorator, contextmanager
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np
import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

import mdframe as md
from mdframe.exceptions import (
    DegenerateSetupError,
    MDFrameError,
    NotAFrameError,
    TailNotConvergedError,
    TruncationNotConvergedError,
)

logger = logging.getLogger(__name__)

console = Console()
err_console = Console(stderr=True)
app = typer.Typer(add_completion=False)

EXIT_IDENTITY = 1
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3

EXACT_TOL = 1e-12
FACTORIZATION_TOL = 1e-10
CONSISTENCY_TOL = 1e-6
RECONSTRUCTION_TOL = 1e-8
GRAM_ORDER = 8
QUASI_RANGE = 4


DELTA_OPT = typer.Option(2.0, "--delta", help="Scale δ > 1; a = δ^p and b = δ^q.")
P_OPT = typer.Option(1, "--p", help="Dilation order p (coprime to q).")
Q_OPT = typer.Option(1, "--q", help="Modulation order q (coprime to p).")
N_OPT = typer.Option(4, "--n-cells", help="Cells per δ-step of the grid.")
K_OPT = typer.Option(256, "--xi-samples", help="Initial ξ-samples per cell.")
J_OPT = typer.Option(32, "--fourier-trunc", help="Initial Laurent degree window of duals.")
M_OPT = typer.Option(64, "--m-max", help="Initial modulation cutoff |m| ≤ m_max.")
TOL_OPT = typer.Option(1e-8, "--tol", help="Relative tolerance of the coefficient tail.")
SEED_OPT = typer.Option(0, "--seed", help="Seed for random windows and sample points.")
OUT_OPT = typer.Option(None, "-o", "--output", help="Write the JSON report here.")

WINDOW_ARG = typer.Argument(
    ..., exists=True, dir_okay=False, help="Window file (JSON step function)."
)


@dataclass(frozen=True, slots=True)
class RunConfig:
    """Resolved numeric knobs of one CLI run; part of every report."""

    command: str
    n_cells: int = 4
    xi_samples: int = 256
    fourier_trunc: int = 32
    m_max: int = 64
    tol: float = 1e-8
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("n_cells", "xi_samples", "fourier_trunc", "m_max", "tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name}={getattr(self, name)!r} must be positive")
        k = self.xi_samples
        if k < md.frames.K_MIN or k & (k - 1):
            raise ValueError(
                f"xi_samples={k} must be a power of two and at least {md.frames.K_MIN}"
            )
        if self.seed < 0:
            raise ValueError(f"seed={self.seed} must be non-negative")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class Stopwatch(ContextDecorator):
    """Log the wall-clock time of a block at DEBUG."""

    __slots__ = ("_label", "_start", "elapsed")

    def __init__(self, label: str) -> None:
        self._label = label
        self._start = 0.0
        self.elapsed = 0.0

    def __enter__(self) -> "Stopwatch":
        self._start = time.perf_counter()
        logger.debug("%s started", self._label)
        return self

    def __exit__(self, exc_type, exc, exc_tb) -> bool:
        self.elapsed = time.perf_counter() - self._start
        logger.debug("%s took %.3fs", self._label, self.elapsed)
        return False


def _configure_logging(verbosity: int) -> None:
    if verbosity <= 0:
        return
    level = logging.DEBUG if verbosity > 1 else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=err_console, show_path=False)],
        force=True,
    )


@contextmanager
def _input_errors() -> Iterator[None]:
    try:
        yield
    except (MDFrameError, ValueError, KeyError, TypeError, OSError) as exc:
        if isinstance(exc, ArithmeticError):
            raise
        err_console.print(f"error: {exc}", markup=False)
        raise typer.Exit(EXIT_INPUT) from exc


def _table() -> Table:
    gray = "#666666"
    table = Table(header_style=gray, style=gray)
    table.add_column("", justify="left", style="#FFB270", no_wrap=True)
    table.add_column("value", justify="right", style="#FFEC71", no_wrap=True)
    table.add_column("comment", justify="right", style=gray, no_wrap=True)
    return table


def _fmt(value: float) -> str:
    return f"{value:.6g}"


def _load_json(path: Path) -> Any:
    return json.loads(path.read_text())


def _load_window(path: Path) -> md.signal.StepFunction:
    return md.signal.StepFunction.from_dict(_load_json(path))


def _write_json(path: Path, payload: Mapping[str, Any]) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    logger.info("wrote %s", path)


def _write_csv(path: Path, header: list[str], rows: Iterable[list[Any]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    logger.info("wrote %s", path)


def _report(config: RunConfig, **fields: Any) -> dict[str, Any]:
    return {"version": md.__version__, "config": config.to_dict(), **fields}


@app.callback(invoke_without_command=True)
def version(
    show: bool = typer.Option(
        False, "--version", "-V", help="Show app version and exit."
    ),
    verbose: int = typer.Option(
        0, "--verbose", "-v", count=True, help="Log progress; repeat for debug."
    ),
) -> None:
    if show:
        typer.echo(f"{md.__name__} {md.__version__}")
        raise typer.Exit()
    _configure_logging(verbose)


@app.command()
def params(delta: float = DELTA_OPT, p: int = P_OPT, q: int = Q_OPT) -> None:
    """Show the lattice derived from (δ, p, q) and the density verdict.

    Example:
    $ mdframe params --delta 2 --p 2 --q 3
    """
    with _input_errors():
        setup = md.lattice.derive_params(delta, p, q)
        certificate = md.lattice.partition_certificate(p, q)
        bijection = md.lattice.residue_bijection(p, q)
    try:
        pair = md.lattice.unique_bezout(p, q)
    except DegenerateSetupError:
        pair = None

    table = _table()
    table.add_row("a", _fmt(setup.a), f"δ^{p}")
    table.add_row("b", _fmt(setup.b), f"δ^{q}")
    table.add_row("beta", _fmt(setup.beta), f"δ^{setup.period}")
    table.add_row("log_b a", str(setup.log_b_a), "p/q")
    table.add_row("bound gap", _fmt(setup.bound_gap), "B/A lower limit")
    if pair is None:
        table.add_row("bezout", "n/a", "p or q is 1")
    else:
        table.add_row("bezout", f"({pair.r_prime}, {pair.s_prime})", "pr' + qs' = pq + 1")
    tiling = "ok" if certificate.tiles_unit_interval else "broken"
    table.add_row("tiling", tiling, f"{len(certificate.intervals)} intervals")
    if setup.density_ok:
        table.add_row("density", "ok", "log_b a ≤ 1")
    else:
        table.add_row("density", "violated", f"log_b a = {setup.log_b_a} > 1")
    table.add_row("tight possible", "yes" if setup.tight_possible else "no", "a = b")
    console.print(table)

    gray = "#666666"
    residues = Table(header_style=gray, style=gray)
    residues.add_column("(r, s)", justify="left", style="#FFB270", no_wrap=True)
    residues.add_column("residue", justify="right", style="#FFEC71", no_wrap=True)
    residues.add_column("interval", justify="right", style=gray, no_wrap=True)
    for interval in certificate.intervals:
        residue = bijection.forward[interval.r, interval.s]
        residues.add_row(
            f"({interval.r}, {interval.s})",
            str(residue),
            f"[{interval.lo}, {interval.hi})",
        )
    console.print(residues)


@app.command()
def synthesize(
    spec_path: Path = typer.Argument(
        ..., exists=True, dir_okay=False, help="Synthesis spec file (JSON)."
    ),
    output: Path = typer.Option(..., "-o", "--output", help="Write the window here."),
    xi_samples: int = K_OPT,
) -> None:
    """Build the window with Ψ = U·[diag(λ); 0]·V and show its predicted verdict.

    Example:
    $ mdframe synthesize spec.json -o window.json
    """
    with _input_errors():
        RunConfig("synthesize", xi_samples=xi_samples)
        spec = md.frames.SynthesisSpec.from_dict(_load_json(spec_path))
        with Stopwatch("synthesize"):
            result = md.frames.synthesize(spec)
        _write_json(output, result.psi.to_dict())

    prediction = md.frames.predict(spec, xi_samples)
    table = _table()
    table.add_row("window cells", f"[{result.psi.i_min}, {result.psi.i_max})", f"N={spec.n_cells}")
    table.add_row("complete", str(prediction.complete).lower(), "all λ_s nonzero")
    table.add_row("frame", str(prediction.frame).lower(), "|λ_s| bounded below")
    table.add_row("A", _fmt(prediction.A_est), "predicted")
    table.add_row("B", _fmt(prediction.B_est), "predicted")
    if prediction.zero_cells:
        cells = ", ".join(map(str, prediction.zero_cells))
        table.add_row("zero cells", cells, "λ_s ≡ 0")
    console.print(table)


@app.command()
def analyze(
    window_path: Path = WINDOW_ARG,
    xi_samples: int = K_OPT,
    dump_psi: Path | None = typer.Option(
        None, "--dump-psi", help="Write the transform matrix (JSON)."
    ),
    dump_eigs: Path | None = typer.Option(
        None, "--dump-eigs", help="Write the eigenvalues of Ψ*Ψ (CSV)."
    ),
    output: Path | None = OUT_OPT,
) -> None:
    """Decide completeness and the frame property of a window and estimate its bounds.

    Example:
    $ mdframe analyze window.json -o report.json
    """
    with _input_errors():
        window = _load_window(window_path)
        config = RunConfig("analyze", n_cells=window.n_cells, xi_samples=xi_samples)
        with Stopwatch("analyze"):
            Psi, spectral, verdict = md.frames.analyze(window, xi_samples)

    if dump_psi is not None:
        _write_json(dump_psi, Psi.to_dict())
    if dump_eigs is not None:
        header = ["cell_index", "xi"] + [f"lambda_{s + 1}" for s in range(Psi.params.p)]
        _write_csv(dump_eigs, header, spectral.rows())
    if output is not None:
        history = [[k, lo, hi] for k, lo, hi in spectral.history]
        payload = _report(
            config,
            **verdict.to_dict(),
            lambda_min=spectral.lambda_min_global,
            lambda_max=spectral.lambda_max_global,
            history=history,
        )
        _write_json(output, payload)

    table = _table()
    table.add_row("density", "ok" if verdict.density_ok else "violated", "p ≤ q")
    table.add_row("complete", str(verdict.complete).lower(), "rank Ψ = p a.e.")
    table.add_row("frame", str(verdict.frame).lower(), "λ_min > 0")
    table.add_row("A", _fmt(verdict.A_est), "lower frame bound")
    table.add_row("B", _fmt(verdict.B_est), "upper frame bound")
    table.add_row("bound gap", _fmt(verdict.bound_gap), "δ^(q-1)")
    table.add_row("K", str(verdict.K_final), "converged" if verdict.converged else "not converged")
    if verdict.failure_cells:
        table.add_row("failure cells", ", ".join(map(str, verdict.failure_cells)), "rank < p")
    console.print(table)

    if not verdict.converged:
        raise typer.Exit(EXIT_CONVERGENCE)


@app.command()
def coeffs(
    window_path: Path = WINDOW_ARG,
    signal_path: Path = typer.Argument(
        ..., exists=True, dir_okay=False, help="Signal file (JSON step function)."
    ),
    m_max: int = M_OPT,
    tol: float = TOL_OPT,
    output: Path | None = typer.Option(
        None, "-o", "--output", help="Write the coefficients (CSV)."
    ),
) -> None:
    """Compute ⟨f, Λ_m D_{a^j}ψ⟩ by two routes and compare Σ|c|² with the exact total.

    Example:
    $ mdframe coeffs window.json signal.json --m-max 128 -o coeffs.csv
    """
    with _input_errors():
        RunConfig("coeffs", m_max=m_max, tol=tol)
        psi = _load_window(window_path)
        f = _load_window(signal_path)
        f, psi = md.signal.align(f, psi)

    code = 0
    try:
        with Stopwatch("coeffs"):
            report = md.frames.analysis_coefficients(f, psi, m_max, tol)
    except TailNotConvergedError as exc:
        err_console.print(f"warning: {exc}", markup=False)
        report = exc.report
        code = EXIT_CONVERGENCE

    if output is not None:
        header = ["m", "j", "re", "im", "route_discrepancy"]
        _write_csv(output, header, report.rows())

    table = _table()
    table.add_row("coefficients", f"{report.time.size:_}", f"|m| ≤ {m_max}")
    table.add_row("max discrepancy", _fmt(report.max_discrepancy), "time vs transform")
    table.add_row("exact total", _fmt(report.exact_total), "transform side")
    table.add_row("time total", _fmt(report.time_total), "periodized")
    table.add_row("truncated sum", _fmt(report.truncated_total), f"|m| ≤ {report.m_max_final}")
    table.add_row("relative gap", _fmt(report.relative_gap), f"tol {tol:g}")
    console.print(table)

    if code:
        raise typer.Exit(code)


def _identity_suite(
    window: md.signal.StepFunction, config: RunConfig
) -> dict[str, tuple[float | None, float]]:
    """Return identity name -> (residual or None if not applicable, threshold)."""
    params = window.params
    n_cells = window.n_cells
    scale = max(1.0, float(np.max(np.abs(window.values), initial=0.0)))
    norm_sq = window.norm_sq()
    results: dict[str, tuple[float | None, float]] = {}

    gram = md.signal.modulation_gram(params, n_cells, GRAM_ORDER)
    results["modulation gram"] = (
        float(np.max(np.abs(gram - np.eye(gram.shape[0])))),
        EXACT_TOL,
    )

    norm_scale = max(1.0, norm_sq)
    theta = md.transform.theta(window)
    results["theta unitarity"] = (abs(theta.norm_sq() - norm_sq) / norm_scale, EXACT_TOL)
    gam = md.transform.gamma(window)
    results["gamma unitarity"] = (abs(gam.norm_sq() - norm_sq) / norm_scale, EXACT_TOL)

    quasi = max(
        md.transform.check_quasi_periodicity(window, j, m)
        for j in range(-QUASI_RANGE, QUASI_RANGE + 1)
        for m in range(-QUASI_RANGE, QUASI_RANGE + 1)
    )
    results["quasi-periodicity"] = (quasi, EXACT_TOL)

    Psi = md.transform.transform_matrix(window)
    recurrences = md.transform.check_recurrences(Psi)
    results["dilation recurrences"] = (
        max(recurrences.by_shift.values(), default=0.0),
        EXACT_TOL,
    )
    results["delta-step recurrence"] = (recurrences.delta_step, EXACT_TOL)
    results["bounds consistency"] = (
        md.frames.bounds_consistency(Psi, config.xi_samples),
        CONSISTENCY_TOL,
    )

    rng = np.random.default_rng(config.seed)
    points = list(zip(1 + (params.b - 1) * rng.uniform(size=8), rng.uniform(size=8)))
    factorization = max(
        md.transform.check_analysis_factorization(window, m, 0, r, points)
        for m in (-1, 0, 1)
        for r in range(params.q)
    )
    results["analysis factorization"] = (factorization, FACTORIZATION_TOL)

    rebuilt = md.transform.window_from_matrix(Psi)
    results["matrix round trip"] = (rebuilt.distance(window) / scale, EXACT_TOL)
    inverted = md.transform.theta_inverse(theta)
    results["theta round trip"] = (inverted.distance(window) / scale, EXACT_TOL)
    reread = md.signal.StepFunction.from_dict(json.loads(json.dumps(window.to_dict())))
    results["file round trip"] = (reread.distance(window) / scale, EXACT_TOL)

    try:
        duals = md.frames.dual_windows(
            Psi, config.xi_samples, config.fourier_trunc
        )
        residual = md.frames.reconstruct(window, window, duals).residual
    except NotAFrameError:
        residual = None
    except TruncationNotConvergedError:
        residual = math.inf
    results["dual reconstruction"] = (residual, RECONSTRUCTION_TOL)
    return results


@app.command()
def verify(
    window_path: Path = WINDOW_ARG,
    xi_samples: int = K_OPT,
    fourier_trunc: int = J_OPT,
    seed: int = SEED_OPT,
    output: Path | None = OUT_OPT,
) -> None:
    """Run the identity suite on a window and show the largest residual of each.

    Example:
    $ mdframe verify window.json
    """
    with _input_errors():
        window = _load_window(window_path)
        config = RunConfig(
            "verify",
            n_cells=window.n_cells,
            xi_samples=xi_samples,
            fourier_trunc=fourier_trunc,
            seed=seed,
        )
    with Stopwatch("verify"):
        results = _identity_suite(window, config)

    failed = [
        name
        for name, (residual, threshold) in results.items()
        if residual is not None and not residual < threshold
    ]

    table = _table()
    for name, (residual, threshold) in results.items():
        if residual is None:
            table.add_row(name, "n/a", "not applicable")
        else:
            status = "pass" if name not in failed else "FAIL"
            table.add_row(name, _fmt(residual), f"{status} < {threshold:g}")
    console.print(table)

    if output is not None:
        identities = {
            name: {"residual": residual, "threshold": threshold, "passed": name not in failed}
            for name, (residual, threshold) in results.items()
        }
        _write_json(output, _report(config, identities=identities, failed=failed))

    if failed:
        err_console.print(f"failed identities: {', '.join(failed)}")
        raise typer.Exit(EXIT_IDENTITY)


@app.command()
def density(
    p: int = P_OPT,
    q: int = Q_OPT,
    trials: int = typer.Option(5, "--trials", help="Random windows tried when p > q."),
    seed: int = SEED_OPT,
    delta: float = DELTA_OPT,
    n_cells: int = N_OPT,
    xi_samples: int = K_OPT,
    output: Path | None = OUT_OPT,
) -> None:
    """Demonstrate that MD frames exist exactly when p ≤ q.

    Example:
    $ mdframe density --p 2 --q 3 --trials 5 --seed 42
    """
    with _input_errors():
        config = RunConfig("density", n_cells=n_cells, xi_samples=xi_samples, seed=seed)
        if trials < 1:
            raise ValueError(f"trials={trials} must be positive")
        exists = md.frames.density_verdict(p, q)
        setup = md.lattice.derive_params(delta, p, q)

    fields: dict[str, Any]
    table = _table()
    table.add_row("log_b a", str(setup.log_b_a), "p/q")
    table.add_row("density", "ok" if exists else "violated", "log_b a ≤ 1")
    if exists:
        synthesis = md.frames.synthesize(md.frames.witness_spec(setup, n_cells))
        _, verdict = md.frames.frame_bounds(synthesis.Psi, xi_samples)
        passed = verdict.frame
        fields = {"witness": verdict.to_dict()}
        table.add_row("witness frame", str(verdict.frame).lower(), "λ_s ≡ 1")
        if verdict.frame:
            tightness = md.frames.tightness_check(verdict, setup)
            passed = tightness.gap_holds
            fields["ratio"] = tightness.ratio
            table.add_row("A", _fmt(verdict.A_est), "lower frame bound")
            table.add_row("B", _fmt(verdict.B_est), "upper frame bound")
            table.add_row("B/A", _fmt(tightness.ratio), f"≥ δ^(q-1) = {_fmt(setup.bound_gap)}")
            table.add_row("tight", str(tightness.tight).lower(), "possible only if a = b")
    else:
        rng = np.random.default_rng(seed)
        incomplete = 0
        for _ in range(trials):
            window = md.signal.random_window(setup, n_cells, rng)
            Psi = md.transform.transform_matrix(window)
            incomplete += not md.frames.completeness(Psi).complete
        passed = incomplete == trials
        fields = {"trials": trials, "incomplete": incomplete}
        table.add_row("incomplete", f"{incomplete}/{trials}", "random windows")
    console.print(table)

    if output is not None:
        _write_json(output, _report(config, density_ok=exists, passed=passed, **fields))
    if not passed:
        raise typer.Exit(EXIT_IDENTITY)


def main() -> None:
    """Canonical entry point for CLI execution."""
    app()
