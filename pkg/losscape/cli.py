"""Command-line interface for losscape."""

import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd  # type: ignore[import-untyped]
from rich.console import Console
from rich.logging import RichHandler
from rich.panel import Panel
from rich.table import Table

from losscape import __version__
from losscape.activations import (
    audit_activation,
    audit_grid,
    make_activation,
    softplus_growth_constants,
)
from losscape.autodiff import gradient_check
from losscape.certify import (
    CertificationReport,
    PreconditionError,
    SeparabilityStatus,
    certify_independent_inputs,
    certify_main,
    certify_nondegenerate_minimum,
    certify_separable,
    check_feature_rank,
    check_separability,
)
from losscape.config import (
    ExperimentConfig,
    load_config,
    override,
    parse_config,
    parse_int_list,
)
from losscape.construct import (
    ConstructionError,
    construct_full_rank_net,
    interpolate_output_layer,
    rank_probe,
)
from losscape.losses import LabeledDataset, audit_loss, make_loss
from losscape.models import SUPPORTED_ACTIVATIONS, SUPPORTED_LOSSES
from losscape.network import Architecture, NetworkParams, forward
from losscape.store import (
    load_params,
    read_dataset,
    read_labeled_features,
    save_params,
    write_frame,
    write_json,
)
from losscape.trainer import TrainResult, TrainStatus, initial_params, train_network

console = Console()

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NEGATIVE = 2

CERTIFIABLE_ACTIVATIONS = [
    name for name, info in SUPPORTED_ACTIVATIONS.items() if info["certifiable"]
]
REGRESSION_LOSSES = [
    name for name, info in SUPPORTED_LOSSES.items() if info["family"] == "regression"
]
THEOREMS = ["independent", "main", "corollary", "separable"]


def _configure_logging(verbose: int) -> None:
    if verbose == 0:
        level = logging.WARNING
    elif verbose == 1:
        level = logging.INFO
    else:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )


def _int_list_option(
    ctx: click.Context, param: click.Parameter, value: Optional[str]
) -> Optional[Tuple[int, ...]]:
    if value is None:
        return None
    return parse_int_list(value, param.name or "value")


def experiment_options(func: Callable[..., Any]) -> Callable[..., Any]:
    """Options shared by commands that read an experiment config."""
    options = [
        click.option(
            "--config",
            "-c",
            type=click.Path(exists=True, dir_okay=False),
            help="Experiment YAML or JSON file",
        ),
        click.option(
            "--dataset",
            "-d",
            type=click.Path(exists=True, dir_okay=False),
            help="Dataset CSV",
        ),
        click.option(
            "--widths",
            callback=_int_list_option,
            help="Layer widths, e.g. 2,5,1",
        ),
        click.option(
            "--activation",
            "activation_name",
            type=click.Choice(CERTIFIABLE_ACTIVATIONS),
            help="Activation kind",
        ),
        click.option("--alpha", type=float, help="Softplus sharpness"),
        click.option(
            "--loss",
            "loss_name",
            type=click.Choice(list(SUPPORTED_LOSSES)),
            help="Loss kind",
        ),
        click.option("--delta", type=float, help="Loss scale parameter"),
        click.option(
            "--seed",
            "seeds",
            type=int,
            multiple=True,
            help="Seed; repeat for several runs",
        ),
        click.option(
            "--output-dir",
            "-o",
            type=click.Path(file_okay=False),
            help="Directory for results",
        ),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def _experiment(config: Optional[str], **flags: Any) -> ExperimentConfig:
    base = load_config(config) if config else parse_config({})
    flags["seeds"] = tuple(flags["seeds"]) if flags.get("seeds") else None
    return override(base, **flags)


def _require_dataset(exp: ExperimentConfig) -> str:
    if not exp.dataset:
        raise click.UsageError(
            "A dataset is required (--dataset or 'dataset' in the config)"
        )
    return exp.dataset


def _require_k(exp: ExperimentConfig) -> int:
    if exp.k is None:
        raise click.UsageError("The wide layer is required (--k or 'k' in the config)")
    return exp.k


def _verdict_style(positive: bool) -> str:
    return "green" if positive else "yellow"


@click.group()
@click.version_option(version=__version__)
@click.option("--verbose", "-v", count=True, help="Show progress logs (-vv for debug)")
def cli(verbose: int) -> None:
    """losscape - certify global optimality of critical points in wide networks."""
    _configure_logging(verbose)


@cli.command("grad-check")
@click.option(
    "--configs",
    "-n",
    type=int,
    default=20,
    show_default=True,
    help="Random configurations",
)
@click.option(
    "--loss",
    "losses",
    type=click.Choice(REGRESSION_LOSSES),
    multiple=True,
    help="Losses to check (default: squared, pseudo_huber, cauchy)",
)
@click.option(
    "--tolerance",
    type=float,
    default=1e-5,
    show_default=True,
    help="Largest acceptable relative error",
)
@click.option("--seed", type=int, help="Seed (default: LOSSCAPE_SEED or 0)")
def grad_check(
    configs: int, losses: Tuple[str, ...], tolerance: float, seed: Optional[int]
) -> int:
    """Compare backpropagation with central differences on random networks."""
    exp = parse_config({} if seed is None else {"seeds": [seed]})
    rng = np.random.default_rng(exp.seeds[0])
    loss_names = losses or ("squared", "pseudo_huber", "cauchy")

    rows = []
    with console.status("[bold green]Checking gradients..."):
        for _ in range(configs):
            for activation_name in ("sigmoid", "tanh", "softplus"):
                for loss_name in loss_names:
                    check = gradient_check(
                        rng, make_activation(activation_name), make_loss(loss_name)
                    )
                    rows.append(
                        {
                            "activation": activation_name,
                            "loss": loss_name,
                            "error": check.error,
                        }
                    )

    frame = pd.DataFrame(rows)
    worst = frame.groupby(["activation", "loss"], sort=False)["error"].max()
    table = Table(title=f"Gradient check ({configs} configurations)")
    table.add_column("Activation", style="cyan")
    table.add_column("Loss", style="yellow")
    table.add_column("Max relative error", justify="right")
    for (activation_name, loss_name), error in worst.items():
        style = "green" if error <= tolerance else "red"
        table.add_row(activation_name, loss_name, f"[{style}]{error:.3e}[/{style}]")
    console.print(table)

    overall = float(worst.max())
    console.print(
        f"[bold]Max relative error:[/bold] {overall:.3e} (tolerance {tolerance:g})"
    )
    return EXIT_OK if overall <= tolerance else EXIT_NEGATIVE


def _train_one(
    args: Tuple[ExperimentConfig, int],
) -> Tuple[int, NetworkParams, TrainResult]:
    exp, seed = args
    data = read_dataset(_require_dataset(exp), exp.label_encoding)
    cfg = exp.train_config(seed)
    params0 = initial_params(exp.architecture(), cfg)
    params, result = train_network(params0, data, exp.loss.build(), cfg)
    return seed, params, result


@cli.command()
@experiment_options
@click.option("--max-iters", type=int, help="Iteration cap")
@click.option("--eps-crit", type=float, help="Gradient-norm threshold")
@click.option(
    "--jobs", "-j", type=int, default=1, show_default=True, help="Parallel seeds"
)
def train(
    config: Optional[str],
    max_iters: Optional[int],
    eps_crit: Optional[float],
    jobs: int,
    **flags: Any,
) -> int:
    """Train one network per seed; write params JSON and history CSV for each."""
    exp = _experiment(config, max_iters=max_iters, eps_crit=eps_crit, **flags)
    _require_dataset(exp)
    exp.architecture()
    output_dir = Path(exp.output_dir)

    console.print(Panel("losscape - training", style="blue"))
    console.print(f"[bold]Widths:[/bold] {list(exp.widths)}")
    console.print(f"[bold]Loss:[/bold] {exp.loss.build().describe()}")
    console.print(f"[bold]Seeds:[/bold] {list(exp.seeds)}")

    runs = [(exp, seed) for seed in exp.seeds]
    with console.status("[bold green]Training..."):
        if jobs > 1 and len(runs) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                outcomes = list(pool.map(_train_one, runs))
        else:
            outcomes = [_train_one(run_args) for run_args in runs]

    table = Table(title="Training runs")
    table.add_column("Seed", style="cyan")
    table.add_column("Status")
    table.add_column("Phi", justify="right")
    table.add_column("Grad norm", justify="right")
    table.add_column("Iterations", justify="right")

    rows = []
    for seed, params, result in outcomes:
        save_params(
            output_dir / f"params_seed{seed}.json",
            params,
            {"seed": seed, "status": result.status.value},
        )
        write_frame(output_dir / f"history_seed{seed}.csv", result.history_frame())
        rows.append(
            {
                "seed": seed,
                "status": result.status.value,
                "objective": result.objective,
                "grad_norm": result.grad_norm,
                "iterations": result.iterations,
            }
        )
        style = _verdict_style(result.status is TrainStatus.CONVERGED)
        table.add_row(
            str(seed),
            f"[{style}]{result.status.value}[/{style}]",
            f"{result.objective:.3e}",
            f"{result.grad_norm:.3e}",
            str(result.iterations),
        )
    write_frame(output_dir / "train_summary.csv", pd.DataFrame(rows))
    console.print(table)

    converged = all(result.status is TrainStatus.CONVERGED for _, _, result in outcomes)
    return EXIT_OK if converged else EXIT_NEGATIVE


def _certify_one(
    theorem: str, params: NetworkParams, exp: ExperimentConfig, data: LabeledDataset
) -> CertificationReport:
    loss = exp.loss.build()
    if theorem == "independent":
        return certify_independent_inputs(params, data, loss, exp.tolerances)
    k = _require_k(exp)
    if theorem == "separable":
        return certify_separable(params, data, k, exp.tolerances)
    if theorem == "corollary":
        return certify_nondegenerate_minimum(params, data, loss, k, exp.tolerances)
    subset = exp.subset or tuple(range(k + 1, params.depth + 1))
    return certify_main(params, data, loss, k, subset, exp.tolerances)


@cli.command()
@experiment_options
@click.option(
    "--theorem",
    "-t",
    type=click.Choice(THEOREMS),
    required=True,
    help="Which optimality theorem to check",
)
@click.option(
    "--params",
    "-p",
    "params_paths",
    type=click.Path(exists=True, dir_okay=False),
    multiple=True,
    required=True,
    help="Params JSON; repeat for several",
)
@click.option("--k", type=int, help="Wide layer")
@click.option(
    "--subset",
    callback=_int_list_option,
    help="Layers I for the non-degeneracy block, e.g. 2,3",
)
@click.option("--eps-crit", type=float, help="Gradient-norm threshold")
@click.option("--eps-phi", type=float, help="Slack on Phi against the global minimum")
@click.option("--tau-nd", type=float, help="Non-degeneracy threshold")
def certify(
    config: Optional[str],
    theorem: str,
    params_paths: Tuple[str, ...],
    k: Optional[int],
    subset: Optional[Tuple[int, ...]],
    eps_crit: Optional[float],
    eps_phi: Optional[float],
    tau_nd: Optional[float],
    **flags: Any,
) -> int:
    """Check the hypotheses of a theorem at trained parameters and write reports."""
    exp = _experiment(
        config,
        k=k,
        subset=subset,
        eps_crit=eps_crit,
        eps_phi=eps_phi,
        tau_nd=tau_nd,
        **flags,
    )
    missing_next = exp.k is not None and exp.k + 1 not in exp.subset
    if theorem == "main" and exp.subset and missing_next:
        raise PreconditionError(
            f"The layer subset {list(exp.subset)} must contain k+1 = {exp.k + 1}"
        )
    data = read_dataset(_require_dataset(exp), exp.label_encoding)
    output_dir = Path(exp.output_dir)

    table = Table(title=f"Certification ({theorem})")
    table.add_column("Params", style="cyan")
    table.add_column("Verdict")
    table.add_column("Grad norm", justify="right")
    table.add_column("Phi", justify="right")
    table.add_column("Failed conditions")

    rows = []
    all_certified = True
    for path in params_paths:
        params = load_params(path)
        report = _certify_one(theorem, params, exp, data)
        write_json(output_dir / f"report_{Path(path).stem}.json", report.to_dict())
        all_certified = all_certified and report.certified
        style = _verdict_style(report.certified)
        table.add_row(
            path,
            f"[{style}]{report.verdict.value}[/{style}]",
            f"{report.grad_norm:.3e}",
            f"{report.objective:.3e}",
            ", ".join(report.failed_conditions()) or "-",
        )
        rows.append(
            {
                "params": path,
                "theorem": report.theorem,
                "verdict": report.verdict.value,
                "grad_norm": report.grad_norm,
                "objective": report.objective,
                "global_min_reference": report.global_min_reference,
                "consistent": report.consistent,
            }
        )
    write_frame(output_dir / "summary.csv", pd.DataFrame(rows))
    console.print(table)
    return EXIT_OK if all_certified else EXIT_NEGATIVE


@cli.command()
@experiment_options
@click.option("--k", type=int, help="Wide layer")
@click.option(
    "--interpolate",
    is_flag=True,
    help="Also fit the output layer so that F_L = Y (needs k = L-1)",
)
def construct(
    config: Optional[str], k: Optional[int], interpolate: bool, **flags: Any
) -> int:
    """Build parameters whose layer k has rank([F_k, 1]) = N; write params and trace."""
    exp = _experiment(config, k=k, **flags)
    data = read_dataset(_require_dataset(exp), exp.label_encoding)
    wide = _require_k(exp)
    seed = exp.seeds[0]

    params, trace = construct_full_rank_net(
        data.X,
        exp.architecture(),
        wide,
        np.random.default_rng(seed),
        exp.train.init_scale,
    )
    if interpolate:
        params = interpolate_output_layer(params, data.X, data.Y)

    rank = check_feature_rank(forward(params, data.X), wide)
    output_dir = Path(exp.output_dir)
    save_params(output_dir / "params.json", params, {"seed": seed})
    write_json(output_dir / "construction_trace.json", trace.to_dict())

    console.print(
        f"[bold]rank([F_{wide}, 1]):[/bold] {rank.rank} of {rank.required} "
        f"at alpha={trace.alpha_final:g}"
    )
    return EXIT_OK if rank.satisfied else EXIT_NEGATIVE


@cli.command("probe-rank")
@click.option(
    "--dataset",
    "-d",
    type=click.Path(exists=True, dir_okay=False),
    help="Dataset CSV; random inputs when omitted",
)
@click.option(
    "--widths", callback=_int_list_option, required=True, help="Layer widths"
)
@click.option(
    "--activation",
    "activation_name",
    type=click.Choice(list(SUPPORTED_ACTIVATIONS)),
    default="sigmoid",
    show_default=True,
)
@click.option(
    "--alpha", type=float, default=1.0, show_default=True, help="Softplus sharpness"
)
@click.option("--k", type=int, required=True, help="Layer whose features are probed")
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option(
    "--samples", type=int, default=6, show_default=True, help="N for random inputs"
)
@click.option("--init-scale", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, help="Seed (default: LOSSCAPE_SEED or 0)")
@click.option(
    "--output-dir",
    "-o",
    type=click.Path(file_okay=False),
    default="results",
    show_default=True,
)
def probe_rank(
    dataset: Optional[str],
    widths: Tuple[int, ...],
    activation_name: str,
    alpha: float,
    k: int,
    trials: int,
    samples: int,
    init_scale: float,
    seed: Optional[int],
    output_dir: str,
) -> int:
    """Count random draws of layers 1..k with rank([F_k, 1]) < N."""
    exp = parse_config({} if seed is None else {"seeds": [seed]})
    data_stream, trial_stream = np.random.SeedSequence(exp.seeds[0]).spawn(2)

    activation = make_activation(activation_name, alpha, allow_identity=True)
    if dataset:
        X = read_dataset(dataset).X
    else:
        X = np.random.default_rng(data_stream).standard_normal((samples, widths[0]))

    arch = Architecture(widths, activation)
    probe = rank_probe(arch, X, k, trials, init_scale, trial_stream)
    out = Path(output_dir)
    write_frame(
        out / "probe_trials.csv",
        pd.DataFrame(
            {
                "trial": range(probe.trials),
                "rank": probe.ranks,
                "deficient": [rank < probe.required for rank in probe.ranks],
            }
        ),
    )
    write_json(
        out / "probe_summary.json",
        {
            "widths": list(widths),
            "activation": activation.describe(),
            "k": k,
            "samples": int(X.shape[0]),
            "trials": probe.trials,
            "required": probe.required,
            "deficient": probe.deficient,
            "fraction": probe.fraction,
            "seed": exp.seeds[0],
        },
    )
    console.print(
        f"[bold]Deficient draws:[/bold] {probe.deficient} of {probe.trials} "
        f"({probe.fraction:.3%})"
    )
    return EXIT_OK


@cli.command("audit-activation")
@click.option(
    "--activation",
    "activation_name",
    type=click.Choice(CERTIFIABLE_ACTIVATIONS),
    required=True,
)
@click.option(
    "--alpha", type=float, default=1.0, show_default=True, help="Softplus sharpness"
)
@click.option(
    "--rho",
    help="Growth constants rho1,rho2,rho3,rho4 (default: softplus constants)",
)
@click.option(
    "--half-width",
    type=float,
    default=50.0,
    show_default=True,
    help="Grid is [-T, T]",
)
@click.option("--points", type=int, default=10_000, show_default=True)
def audit_activation_command(
    activation_name: str,
    alpha: float,
    rho: Optional[str],
    half_width: float,
    points: int,
) -> int:
    """Audit the boundedness or growth assumption of an activation on a grid."""
    activation = make_activation(activation_name, alpha)
    grid = audit_grid(half_width, points)
    if activation.bounds is not None and rho is None:
        result = audit_activation(activation, "bounded", grid)
    else:
        if rho is None:
            constants = softplus_growth_constants(alpha)
        else:
            values = [float(part) for part in rho.split(",")]
            if len(values) != 4:
                raise click.BadParameter(
                    "expected four comma-separated values", param_hint="--rho"
                )
            constants = (values[0], values[1], values[2], values[3])
        result = audit_activation(activation, constants, grid)

    style = "green" if result.passed else "red"
    verdict = "pass" if result.passed else "fail"
    console.print(
        f"[bold]{activation.describe()}[/bold] ({result.mode}): "
        f"[{style}]{verdict}[/{style}] - {result.detail}"
    )
    return EXIT_OK if result.passed else EXIT_NEGATIVE


@cli.command("audit-loss")
@click.option(
    "--loss", "loss_name", type=click.Choice(REGRESSION_LOSSES), required=True
)
@click.option("--delta", type=float, default=1.0, show_default=True)
@click.option("--mix", type=float, default=0.5, show_default=True)
@click.option("--width", type=float, default=1.0, show_default=True)
def audit_loss_command(loss_name: str, delta: float, mix: float, width: float) -> int:
    """Check that stationary points of a regression loss are global minima on a grid."""
    loss = make_loss(loss_name, delta, mix, width)
    result = audit_loss(loss)  # type: ignore[arg-type]
    style = "green" if result.passed else "red"
    verdict = "pass" if result.passed else "fail"
    console.print(
        f"[bold]{loss.describe()}[/bold]: [{style}]{verdict}[/{style}] "
        f"({result.violations} spurious stationary points, "
        f"grid minimum {result.grid_minimum:.6g})"
    )
    return EXIT_OK if result.passed else EXIT_NEGATIVE


@cli.command()
@click.argument("features", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--output",
    "-o",
    type=click.Path(dir_okay=False),
    help="Write the certificate as JSON",
)
def separability(features: str, output: Optional[str]) -> int:
    """Decide one-vs-rest linear separability of a classification CSV."""
    F, classes, m = read_labeled_features(features)
    certificate = check_separability(F, classes, m)
    if output:
        write_json(output, certificate.to_dict())

    separable = certificate.status is SeparabilityStatus.SEPARABLE
    style = _verdict_style(separable)
    method = certificate.method.value if certificate.method else "-"
    status = certificate.status.value
    console.print(f"[bold]Status:[/bold] [{style}]{status}[/{style}] via {method}")
    if certificate.min_margin is not None:
        console.print(f"[bold]Min margin:[/bold] {certificate.min_margin:.6g}")
    if certificate.failing_class is not None:
        console.print(
            "[bold]Class without a separating plane:[/bold] "
            f"{certificate.failing_class + 1}"
        )
    return EXIT_OK if separable else EXIT_NEGATIVE


def _describe_parameters(parameters: Dict[str, str]) -> str:
    return ", ".join(f"{name} ({doc})" for name, doc in parameters.items()) or "-"


@cli.command()
def catalog() -> int:
    """List supported activations and losses."""
    table = Table(title="Activations")
    table.add_column("Key", style="cyan")
    table.add_column("Name", style="green")
    table.add_column("Formula")
    table.add_column("Assumption", style="yellow")
    table.add_column("Parameters")
    for key, info in SUPPORTED_ACTIVATIONS.items():
        parameters = _describe_parameters(info["parameters"])
        table.add_row(key, info["name"], info["formula"], info["kind"], parameters)
    console.print(table)

    table = Table(title="Losses")
    table.add_column("Key", style="cyan")
    table.add_column("Name", style="green")
    table.add_column("Formula")
    table.add_column("Family", style="yellow")
    table.add_column("Parameters")
    for key, loss_info in SUPPORTED_LOSSES.items():
        table.add_row(
            key,
            loss_info["name"],
            loss_info["formula"],
            loss_info["family"],
            _describe_parameters(loss_info["parameters"]),
        )
    console.print(table)
    return EXIT_OK


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI and return its exit code instead of exiting.

    0 when the command succeeded with a positive verdict, 2 when it ran but
    the verdict is negative, 1 on usage, input or I/O errors.
    """
    args = list(argv) if argv is not None else None
    try:
        result = cli.main(args=args, prog_name="losscape", standalone_mode=False)
    except click.exceptions.Abort:
        console.print("[bold red]Error:[/bold red] Aborted")
        return EXIT_ERROR
    except click.ClickException as e:
        e.show()
        return EXIT_ERROR
    except (ValueError, OSError, ConstructionError, ArithmeticError) as e:
        console.print(f"[bold red]Error:[/bold red] {e}")
        return EXIT_ERROR
    return result if isinstance(result, int) else EXIT_OK


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
