"""
Discrete one-dimensional optimal transport between density samples.

With the squared ground cost the optimal map is the monotone rearrangement
T = F_source^-1 o F_target, computed from piecewise-linear CDFs. The returned map
satisfies f_target(x) = f_source(T(x)) * T'(x), and the displacement interpolation

    f(x, t) = f_source(x(1 - t) + t T(x)) * |(1 - t) + t T'(x)|

moves from the source (t = 0) to the target (t = 1).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from tqdm import tqdm

from models.constants import NORMALIZED_CHECK_TOLERANCE, SUPPORT_CDF_CUTOFF
from models.density import DensitySample
from models.errors import (DegenerateSupport, GridMismatch, MeasuringError, NotNormalized,
                           ParameterOutOfRange)
from models.transport import TransportPlan

logger = logging.getLogger(__name__)

DEFAULT_OT_TOLERANCE = 5e-2


def cdf(sample):
    """Piecewise-linear CDF at the grid nodes, pinned to 0 at the first node and 1 at the last."""
    values = cumulative_trapezoid(sample.values, dx=sample.grid.spacing, initial=0.0)
    return values / values[-1]


def quantile(cdf_values, nodes, levels):
    """
    Invert a nondecreasing piecewise-linear CDF.

    Each level u maps to the leftmost x with F(x) = u, linearly interpolated between the
    bracketing nodes, so plateaus resolve to their left end.
    """
    levels = np.asarray(levels, dtype=float)
    upper = np.searchsorted(cdf_values, levels, side="left")
    upper = np.clip(upper, 0, nodes.size - 1)
    lower = np.maximum(upper - 1, 0)

    f_low, f_up = cdf_values[lower], cdf_values[upper]
    span = f_up - f_low
    with np.errstate(divide="ignore", invalid="ignore"):
        fraction = np.where(span > 0, (levels - f_low) / span, 1.0)
    fraction = np.clip(fraction, 0.0, 1.0)
    result = nodes[lower] + fraction * (nodes[upper] - nodes[lower])
    return np.where(upper == 0, nodes[0], result)


def _check_pair(src, tgt):
    if not src.grid.same_as(tgt.grid):
        raise GridMismatch("Source and target samples live on different grids")
    for role, sample in (("source", src), ("target", tgt)):
        mass = sample.mass
        if abs(mass - 1.0) > NORMALIZED_CHECK_TOLERANCE or np.any(sample.values < 0):
            raise NotNormalized(f"The {role} sample is not a unit-mass density (mass {mass:.12f})")


def _effective_support(cdf_values):
    return (cdf_values >= SUPPORT_CDF_CUTOFF) & (cdf_values <= 1.0 - SUPPORT_CDF_CUTOFF)


def push_forward_residual(src, tgt, map_values, map_derivative, support):
    """
    Largest |f_target(x) - f_source(T(x)) T'(x)| over interior support nodes,
    relative to max f_target.
    """
    x = src.grid.nodes
    pushed = np.interp(map_values, x, src.values) * map_derivative
    interior = support.copy()
    interior[[0, -1]] = False
    if not np.any(interior):
        return 0.0
    scale = np.max(tgt.values)
    return float(np.max(np.abs(tgt.values[interior] - pushed[interior])) / scale)


def solve_monotone(src, tgt, source_index=0, target_index=1, tolerance=DEFAULT_OT_TOLERANCE):
    """
    Solve the 1-D transport problem between two unit-mass samples on a shared grid.

    Args:
        src (DensitySample): Source density (the sample at t = 0)
        tgt (DensitySample): Target density (the sample at t = 1)
        source_index (int): Data set index of the source, recorded on the plan
        target_index (int): Data set index of the target, recorded on the plan
        tolerance (float): Push-forward residual above which a warning is logged

    Returns:
        TransportPlan: Monotone map, its derivative, the squared-distance cost and the
            push-forward residual relative to max f_target
    """
    _check_pair(src, tgt)
    grid = src.grid
    x = grid.nodes

    cdf_src = cdf(src)
    cdf_tgt = cdf(tgt)
    support = _effective_support(cdf_tgt)
    if support.sum() < 2 or _effective_support(cdf_src).sum() < 2:
        raise DegenerateSupport(
            f"Samples {source_index}->{target_index}: effective support spans fewer than two nodes")

    map_values = quantile(cdf_src, x, cdf_tgt)
    first, last = np.flatnonzero(support)[[0, -1]]
    map_values[:first] = map_values[first]
    map_values[last + 1:] = map_values[last]
    map_values = np.maximum.accumulate(map_values)

    map_derivative = np.maximum(np.gradient(map_values, grid.spacing), 0.0)
    cost = float(np.trapezoid((x - map_values) ** 2 * tgt.values, dx=grid.spacing))

    residual = push_forward_residual(src, tgt, map_values, map_derivative, support)
    if residual > tolerance:
        logger.warning(f"Plan {source_index}->{target_index}: push-forward residual "
                       f"{residual:.3e} exceeds tolerance {tolerance:.3e}")

    return TransportPlan(source_index=source_index, target_index=target_index, grid=grid,
                         map_values=map_values, map_derivative=map_derivative, cost=cost,
                         residual=residual, support=support, source_values=src.values)


def interpolate(plan, t, source=None, renormalize=True):
    """
    Evaluate the displacement interpolation at parameter t.

    Args:
        plan (TransportPlan): Plan to follow
        t (float): Curve parameter in [0, 1]
        source (DensitySample, optional): The plan's source density when the plan does not carry it
        renormalize (bool): Divide out residual discretization drift of the mass

    Returns:
        DensitySample: f(x, t) on the grid
    """
    if not 0.0 <= t <= 1.0:
        raise ParameterOutOfRange(f"Curve parameter t must lie in [0, 1], got {t}")
    if source is not None:
        if not source.grid.same_as(plan.grid):
            raise GridMismatch("The source sample does not live on the plan's grid")
        source_values = source.values
    elif plan.source_values is not None:
        source_values = plan.source_values
    else:
        raise ParameterOutOfRange("The plan carries no source density; pass `source`")

    x = plan.grid.nodes
    position = x * (1.0 - t) + t * plan.map_values
    jacobian = np.abs((1.0 - t) + t * plan.map_derivative)
    values = np.interp(position, x, source_values) * jacobian

    if renormalize:
        mass = plan.grid.mass(values)
        if mass > 0:
            values = values / mass
    return DensitySample(grid=plan.grid, values=values,
                         label={"source": plan.source_index, "target": plan.target_index, "t": float(t)})


@dataclass(eq=False)
class DisplacementCurve:
    """Parametric curve t -> f(x, t) through the data manifold defined by a plan."""
    plan: TransportPlan
    source: DensitySample = None

    def eval(self, t, renormalize=True):
        return interpolate(self.plan, t, source=self.source, renormalize=renormalize)

    def sample(self, ts):
        """Intermediate densities for each t in ts."""
        return [self.eval(t) for t in ts]


def pairwise_plans(ds, pairs, tolerance=DEFAULT_OT_TOLERANCE, workers=1, progress=False):
    """
    Solve one plan per (source, target) index pair.

    Independent pairs may run on worker threads; the output keeps the input order.

    Args:
        ds (DataSet): Data set the indices refer to
        pairs (list of tuple): (source_index, target_index) pairs
        tolerance (float): Push-forward residual tolerance
        workers (int): Thread count
        progress (bool): Show a progress bar

    Returns:
        list of TransportPlan: One plan per pair, input order
    """
    pairs = [(int(i), int(j)) for i, j in pairs]
    count = len(ds)
    for i, j in pairs:
        if not (0 <= i < count and 0 <= j < count):
            raise ParameterOutOfRange(f"Pair ({i}, {j}) is out of range for {count} samples")

    def solve(pair):
        i, j = pair
        try:
            return solve_monotone(ds.samples[i], ds.samples[j], source_index=i, target_index=j,
                                  tolerance=tolerance)
        except MeasuringError as e:
            e.pair = pair
            logger.error(f"Transport failed for pair {pair}: {str(e)}")
            raise

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            iterator = executor.map(solve, pairs)
            plans = list(tqdm(iterator, total=len(pairs), desc="Transport plans", disable=not progress))
    else:
        plans = [solve(pair) for pair in tqdm(pairs, desc="Transport plans", disable=not progress)]

    logger.info(f"Solved {len(plans)} transport plans")
    return plans


def wasserstein_matrix(ds, tolerance=DEFAULT_OT_TOLERANCE, workers=1, progress=False):
    """
    Squared transport costs between all samples.

    Each unordered pair is solved once (source = lower index) and mirrored.
    """
    count = len(ds)
    upper = [(i, j) for i in range(count) for j in range(i + 1, count)]
    plans = pairwise_plans(ds, upper, tolerance=tolerance, workers=workers, progress=progress)
    distances = np.zeros((count, count))
    for plan in plans:
        distances[plan.source_index, plan.target_index] = plan.cost
        distances[plan.target_index, plan.source_index] = plan.cost
    return distances


def save_plan_csv(plan, path):
    """Write a plan as x, T, T' columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"x": plan.grid.nodes, "T": plan.map_values, "T_prime": plan.map_derivative}).to_csv(
        path, index=False)
    return path


def load_plan_csv(path, grid, source_index, target_index, cost, residual=0.0):
    """Read a plan written by save_plan_csv back onto `grid`."""
    frame = pd.read_csv(path, float_precision="round_trip")
    if len(frame) != grid.size or not np.array_equal(frame["x"].to_numpy(), grid.nodes):
        raise GridMismatch(f"Plan file {path} does not match the data set grid")
    return TransportPlan(source_index=int(source_index), target_index=int(target_index), grid=grid,
                         map_values=frame["T"].to_numpy(dtype=float),
                         map_derivative=frame["T_prime"].to_numpy(dtype=float),
                         cost=float(cost), residual=float(residual))
