"""Picard-style linearization of nonlinear equations around GP field estimates."""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import GprcError, GridError, MissingFieldError
from .gp import (
    GprcModel, NoiseConfig, OptimizerConfig, default_hyper, predict_field, train,
)
from .operators import linearize_equation, zero_index

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PicardConfig:
    max_iters: int = 1
    eps_rmse: float = 1e-6
    eval_grid: np.ndarray = None


def default_eval_grid(domain, n1d=200, n2d=30):
    """200 points on a 1-D domain, a 30 x 30 lattice on a 2-D one."""
    domain = np.asarray(domain, dtype=float)
    n = n1d if len(domain) == 1 else n2d
    axes = [np.linspace(lo, hi, n) for lo, hi in domain]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def initial_guess(data, eq, opt=None, eval_grid=None, functionals=None, noise=None):
    """Unconstrained GP regression estimate of ``u`` and its derivatives.

    ``functionals=None`` uses every functional of ``eq``; an empty list gives
    ``u`` only. The returned estimate carries posterior-mean evaluators in
    ``fields`` so it can seed a linearization.
    """
    grid = default_eval_grid(data.domain) if eval_grid is None else eval_grid
    noise = NoiseConfig() if noise is None else noise
    model = train(GprcModel(data, None, default_hyper(data), noise), opt)
    if functionals is None:
        functionals = eq.functionals
    functionals = list(dict.fromkeys([zero_index(data.dim), *map(tuple, functionals)]))
    return predict_field(model, grid, functionals)


def stopping_metric(prev, nxt):
    """Mean over the grid of the summed squared change of every functional."""
    if prev.grid.shape != nxt.grid.shape or not np.allclose(prev.grid, nxt.grid, rtol=0, atol=1e-12):
        raise GridError("field estimates are on different grids")
    total = np.zeros(len(prev.grid))
    for k, v in prev.mean.items():
        if k not in nxt.mean:
            raise MissingFieldError(k, "stopping metric")
        total += (np.asarray(nxt.mean[k]) - np.asarray(v)) ** 2
    return float(np.mean(total))


def picard_solve(data, eq, theta, cfg=None, chi=None, opt=None, noise=None, *,
                 guess=None, start=None, refit=True, points=None):
    """GPRC estimate at ``theta``, iterating the linearization for nonlinear equations.

    Parameters
    ----------
    guess : FieldEstimate, optional
        Initial estimate on ``cfg.eval_grid`` (computed by
        :func:`initial_guess` when absent); its ``fields`` seed the freeze.
    start : GprcModel, optional
        Model whose hyperparameters warm-start training. Without it training
        uses random restarts from the guess's hyperparameters.
    refit : bool
        If False and ``start`` is given, reuse its hyperparameters untrained.
    points : array, optional
        Extra points stacked before the evaluation grid in the output.

    Returns the final estimate on ``[points; eval_grid]`` with ``iterations``,
    ``metric`` (the last :func:`stopping_metric`) and ``history`` (every
    iteration's metric) set.
    """
    cfg = PicardConfig() if cfg is None else cfg
    opt = OptimizerConfig() if opt is None else opt
    eval_grid = default_eval_grid(data.domain) if cfg.eval_grid is None else np.asarray(cfg.eval_grid)
    eval_grid = eval_grid.reshape(-1, data.dim)
    if guess is None:
        guess = initial_guess(data, eq, opt, eval_grid, noise=noise)
    if guess.grid.shape != eval_grid.shape:
        raise GridError("initial guess is not on the evaluation grid")
    noise = guess.model.noise if noise is None else noise
    grid = eval_grid if points is None else np.vstack([np.asarray(points).reshape(-1, data.dim), eval_grid])
    k0 = len(grid) - len(eval_grid)

    if start is not None:
        hyper, noise_cur = start.hyper, replace(noise, sigma_u2=start.noise.sigma_u2)
    else:
        hyper = guess.model.hyper
        noise_cur = replace(noise, sigma_u2=guess.model.noise.sigma_u2) if noise.train_sigma_u2 else noise
    frozen = guess.fields
    prev = guess
    metric = float("nan")
    history = []
    est = None
    for it in range(1, max(1, cfg.max_iters) + 1):
        try:
            op = linearize_equation(eq, theta, frozen)
            model = GprcModel(data, op, hyper, noise_cur, tuple(np.asarray(theta, float)), frozen)
            if refit or start is None:
                model = train(model, opt, warm_start=start is not None or it > 1)
            est = predict_field(model, grid, eq.functionals, chi)
        except GprcError as exc:
            exc.args = (f"{exc.args[0] if exc.args else exc} [Picard iteration {it}]",) + exc.args[1:]
            raise
        metric = stopping_metric(prev, est.subset(slice(k0, None)))
        history.append(metric)
        log.debug("Picard iteration %d: metric %.3e", it, metric)
        if eq.is_linear or metric < cfg.eps_rmse:
            break
        frozen = est.fields
        prev = est.subset(slice(k0, None))
        hyper, noise_cur = model.hyper, model.noise
    est.iterations = it
    est.metric = metric
    est.history = history
    return est
