"""Nearest-point projection between hypersurfaces of C^4 and the induced errors.

The distance is measured with the cone metric ``ddbar rho^2`` frozen at the
source point, so a projection solves

    minimise (q - p)^H A (q - p)   subject to   F_t(q) = 0,

where ``A = G(p)^T`` for the complex Hessian ``G[j, k] = d_j dbar_k rho^2``
(so that ``v^H A v = v^T G conj(v)`` is the squared length).  Stationarity
gives ``q = p + lam A^{-1} conj(grad F_t(q))``.  The scalar
``lam`` is found by complex Newton on ``F_t(p) + [F_t(p + lam v) - F_t(p)]``
with the increment expanded exactly, and ``F_t(p)`` taken as the coefficient
difference ``(F_t - F_s)(p)``.  Displacements therefore carry full relative
precision however small they are, which is what the decay measurements need.

Derived quantities use charts of source and target that share their free
coordinates; in such charts the projection reads ``w -> w + Delta(w)`` and its
real differential is ``I + E``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cone_geometry import Hypersurface, ambient_metric, partial, volume_form_coeff
from .complex_diff import (
    DEFAULT_FD,
    Chart,
    FDConfig,
    build_chart,
    ddbar,
    log1p_complex,
    real_jacobian,
    real_metric,
    standard_J,
)


class ProjectionError(RuntimeError):
    """Projection iteration failed to converge or was ill-conditioned."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


@dataclass(frozen=True)
class ProjectionResult:
    source: np.ndarray
    target: np.ndarray
    multiplier: complex
    iterations: int
    residual: float
    displacement: float
    step: np.ndarray  # target - source, computed without cancellation


def _project(p, Xs: Hypersurface, Xt: Hypersurface, maxiter: int = 30, G=None):
    """Batch projection; returns ``(step, lam, iterations)``."""
    p = np.asarray(p, dtype=complex)
    G = ambient_metric(p) if G is None else G
    if not np.all(np.isfinite(G)):
        raise ProjectionError("ambient metric singular at source (R = 0)")
    A = np.swapaxes(G, -1, -2)
    off = Xt.offset(Xs, p)
    lam = np.zeros(p.shape[:-1], dtype=complex)
    step = np.zeros_like(p)
    if np.all(off == 0):
        return step, lam, 0
    trace = []
    for it in range(1, maxiter + 1):
        v = np.linalg.solve(A, np.conj(Xt.grad(p + step))[..., None])[..., 0]
        for _ in range(60):
            r = off + Xt.increment(p, lam[..., None] * v)
            d = np.sum(Xt.grad(p + lam[..., None] * v) * v, axis=-1)
            dl = r / d
            lam = lam - dl
            if np.all(np.abs(dl) <= 1e-15 * np.abs(lam)):
                break
        new = lam[..., None] * v
        change = np.max(np.abs(new - step) / np.maximum(np.abs(new).max(axis=-1, keepdims=True), 1e-300))
        step = new
        trace.append(float(change))
        if change <= 1e-14:
            return step, lam, it
    raise ProjectionError("projection did not converge", trace)


def nearest_point(p, X_target: Hypersurface, X_source: Hypersurface, maxiter: int = 30) -> ProjectionResult:
    """Nearest point of ``X_target`` to ``p`` on ``X_source`` in the frozen cone metric.

    The first Newton step from ``lam = 0`` reproduces the seed that shifts ``z``
    by ``-(b/a) y`` for the family ``a z + b y + f``.
    """
    p = np.asarray(p, dtype=complex)
    G = ambient_metric(p)
    step, lam, it = _project(p, X_source, X_target, maxiter, G)
    q = p + step
    disp = float(np.sqrt(max(np.real(step @ G @ np.conj(step)), 0.0)))
    return ProjectionResult(p, q, complex(lam), it, float(abs(X_target(q))), disp, step)


def optimality_residual(res: ProjectionResult, X_target: Hypersurface) -> float:
    """``1 - |cos angle|`` between ``G^T (q - p)`` and ``conj(grad F_t(q))``."""
    a = ambient_metric(res.source).T @ res.step
    b = np.conj(X_target.grad(res.target))
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0:
        return 0.0
    return float(1 - abs(np.vdot(a, b)) / (na * nb))


def displacement_map(chart: Chart, Xs: Hypersurface, Xt: Hypersurface):
    """``dw -> Delta(dw)``: free-coordinate displacement of the projection."""
    free = list(chart.free)

    def f(dw):
        pts = chart.embed(dw)
        step, _, _ = _project(pts, Xs, Xt)
        return step[..., free]

    return f


def projection_jacobian(p, Xs: Hypersurface, Xt: Hypersurface, fd: FDConfig = DEFAULT_FD):
    """Real Jacobian ``E`` of ``Delta`` in a source chart at ``p`` (``dG = I + E``)."""
    ch = build_chart(p, Xs)
    E = real_jacobian(displacement_map(ch, Xs, Xt), ch, fd)
    return E, ch


def _metric_norm(A: np.ndarray, S: np.ndarray) -> float:
    C = np.linalg.cholesky(S)  # S = C C^T
    return float(np.linalg.norm(C.T @ A @ np.linalg.inv(C.T), 2))


@dataclass(frozen=True)
class ComplexStructureError:
    norm: float
    Jb: np.ndarray
    difference: np.ndarray
    condition: float


def complex_structure_error(p, Xs: Hypersurface, Xt: Hypersurface, potential,
                            fd: FDConfig = DEFAULT_FD, detail: bool = False):
    """``|J_b - J|`` at ``p`` in the metric of ``potential`` on the source.

    ``J_b = dG^{-1} J dG``, so ``J_b - J = (I + E)^{-1} [J, E]`` is formed
    without subtracting nearly equal matrices.
    """
    E, ch = projection_jacobian(p, Xs, Xt, fd)
    n = ch.dim
    J = standard_J(n)
    M = np.eye(2 * n) + E
    cond = float(np.linalg.cond(M))
    if cond > 1e8:
        raise ProjectionError("projection differential is ill-conditioned")
    diff = np.linalg.solve(M, J @ E - E @ J)
    S = real_metric(ddbar(potential, ch, fd).H)
    norm = _metric_norm(diff, S)
    if detail:
        return ComplexStructureError(norm, J + diff, diff, cond)
    return norm


@dataclass(frozen=True)
class VolumePullback:
    coefficient: complex  # of G^* Omega_t in the source chart, (3,0) part
    ratio_minus_one: complex  # Omega_b / Omega - 1
    real_log_ratio: float  # log of (Omega_b ^ conj) / (Omega ^ conj) as 6-forms


def pullback_volume(p, Xs: Hypersurface, Xt: Hypersurface, fd: FDConfig = DEFAULT_FD) -> VolumePullback:
    """Pullback of the residue form of ``X_t`` under the projection, in a source chart."""
    E, ch = projection_jacobian(p, Xs, Xt, fd)
    n = ch.dim
    k = ch.solved
    p = ch.base
    step, _, _ = _project(p, Xs, Xt)
    dks, dkt = partial(Xs, k), partial(Xt, k)
    num = dkt.offset(dks, p) + dkt.increment(p, step)
    eps_c = complex(num / dks(p))
    M = 0.5 * ((E[:n, :n] + E[n:, n:]) + 1j * (E[n:, :n] - E[:n, n:]))
    logdet = np.sum(log1p_complex(np.linalg.eigvals(M)))
    log_ratio = logdet - log1p_complex(eps_c)
    a, b = float(log_ratio.real), float(log_ratio.imag)
    rm1 = np.expm1(a) * np.exp(1j * b) + complex(-2 * np.sin(b / 2) ** 2, np.sin(b))
    cs = complex(volume_form_coeff(p, Xs, ch))
    ev = np.linalg.eigvals(E)
    real_log = float(np.real(np.sum(log1p_complex(ev)))) - 2 * float(np.real(log1p_complex(eps_c)))
    return VolumePullback(cs * (1 + rm1), rm1, real_log)


def inverse_projection(q, Xs: Hypersurface, Xt: Hypersurface, k: int, maxiter: int = 40):
    """Points ``p`` of ``X_s`` with ``G(p) = q``, keeping coordinate ``k`` solved.

    Fixed-point iteration ``w <- w_q - Delta(w)`` in charts sharing free coordinates.
    """
    q = np.asarray(q, dtype=complex)
    free = [j for j in range(q.shape[-1]) if j != k]
    dw = np.zeros(q.shape[:-1] + (len(free),), dtype=complex)
    ch = Chart(Xs, k, q)  # base need not lie on X_s; the solve corrects it
    for _ in range(maxiter):
        pts = _embed_batch(ch, dw)
        step, _, _ = _project(pts, Xs, Xt)
        new = -step[..., free]
        if np.all(np.abs(new - dw) <= 1e-15 * (np.abs(q[..., free]) + 1e-300)):
            dw = new
            break
        dw = new
    return _embed_batch(ch, dw)


def _embed_batch(ch: Chart, dw):
    if ch.base.ndim == 1:
        return ch.embed(dw)
    out = np.empty(dw.shape[:-1] + (ch.base.shape[-1],), dtype=complex)
    for i in np.ndindex(ch.base.shape[:-1]):
        out[i] = Chart(ch.X, ch.solved, ch.base[i]).embed(dw[i])
    return out


def pushed_potential(p, Xs: Hypersurface, Xt: Hypersurface, phi):
    """``(Phi o G^{-1}, G(p))``: the potential transported to the target hypersurface.

    ``phi`` may be a sequence of terms; a matching tuple of transported terms
    is returned, sharing the inverse projections.
    """
    p = np.asarray(p, dtype=complex)
    step, _, _ = _project(p, Xs, Xt)
    q = p + step
    k = build_chart(q, Xt).solved
    cache = {}

    def source_points(pts):
        pts = np.asarray(pts, dtype=complex)
        key = pts.tobytes()
        if key not in cache:
            cache.clear()
            flat = pts.reshape(-1, pts.shape[-1])
            cache[key] = inverse_projection(flat, Xs, Xt, k).reshape(pts.shape)
        return cache[key]

    def transport(f):
        return lambda pts: f(source_points(pts))

    if isinstance(phi, (list, tuple)):
        return tuple(transport(f) for f in phi), q
    return transport(phi), q
