"""Spectral calculus for operators self-adjoint in L^2(mu).

Every function of H is evaluated through one dense eigendecomposition;
the subordination and Fourier routes exist to be compared against it.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from app.core.logging import logger
from app.models.exceptions import (
    MultiplierError,
    SpectralError,
    SubordinationError,
    VerificationError,
)
from app.models.operators import DiscreteOperator, SpectralDecomposition
from app.models.space import Stagger

RESIDUAL_TOLERANCE = 1e-9


def eigendecompose(H: DiscreteOperator) -> SpectralDecomposition:
    """Eigensystem of H, orthonormal in the mu-inner product.

    Raises:
        SpectralError: H is not a node operator, the solver fails, the
            reconstruction residual exceeds 1e-9 ||H||, or an eigenvalue sits
            clearly below the shift epsilon.
    """
    if H.domain is not Stagger.NODES or H.codomain is not Stagger.NODES:
        raise SpectralError(f"{H.tag} must act on node functions")
    matrix = H.dense()
    mu = H.space.node_measure
    root = np.sqrt(mu)

    symmetric = root[:, None] * matrix / root[None, :]
    symmetric = 0.5 * (symmetric + symmetric.T)
    try:
        values, vectors = scipy.linalg.eigh(symmetric)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SpectralError(f"Eigendecomposition of {H.tag} failed: {e}") from e
    vectors = vectors / root[:, None]

    scale = float(np.linalg.norm(matrix))
    residual = float(np.linalg.norm(matrix - (vectors * values) @ (vectors.T * mu)))
    if residual > RESIDUAL_TOLERANCE * scale:
        raise SpectralError(
            f"Reconstruction residual {residual:.3e} of {H.tag} exceeds "
            f"{RESIDUAL_TOLERANCE} * {scale:.3e}"
        )

    floor = H.epsilon
    slack = 1e-10 + 1e-11 * abs(float(values[-1]))
    if values[0] < floor - slack:
        raise SpectralError(
            f"{H.tag} has eigenvalue {values[0]:.6g} below its shift {floor}"
        )
    values = np.maximum(values, floor)

    logger.info(
        f"Decomposed {H.tag}: n={values.size}, spectrum [{values[0]:.4g}, "
        f"{values[-1]:.4g}], residual {residual:.2e}"
    )
    return SpectralDecomposition(
        space=H.space,
        eigenvalues=values,
        vectors=vectors,
        measure=mu,
        epsilon=H.epsilon,
        residual=residual,
        tag=H.tag,
    )


def _operator(decomposition: SpectralDecomposition, values: np.ndarray, tag: str):
    matrix = decomposition.synthesize(values)
    if np.iscomplexobj(matrix) and not np.any(np.imag(values)):
        matrix = np.real(matrix)
    return DiscreteOperator(
        space=decomposition.space, tag=tag, matrix=matrix, epsilon=decomposition.epsilon
    )


def apply_function(
    decomposition: SpectralDecomposition,
    F: Callable[[np.ndarray], np.ndarray],
    tag: str | None = None,
) -> DiscreteOperator:
    """F(H) = V F(Lambda) V^T diag(mu).

    Raises:
        SpectralError: F is NaN or infinite at an eigenvalue.
    """
    values = np.asarray(F(decomposition.eigenvalues))
    if values.shape == ():
        values = np.full(decomposition.n, values)
    bad = ~np.isfinite(values)
    if bad.any():
        where = decomposition.eigenvalues[bad][0]
        raise SpectralError(f"F is undefined at eigenvalue {where:.6g}")
    return _operator(decomposition, values, tag or f"F({decomposition.tag})")


def propagator(decomposition: SpectralDecomposition, z: complex) -> DiscreteOperator:
    """e^{-zH} for Re z >= 0; complex entries when z is not real."""
    z = complex(z)
    if z.real < 0:
        raise SpectralError(f"propagator needs Re z >= 0, got {z}")
    if z == 0:
        return DiscreteOperator(
            space=decomposition.space,
            tag="I",
            matrix=np.eye(decomposition.n),
            epsilon=decomposition.epsilon,
        )
    factor = z.real if z.imag == 0 else z
    return apply_function(
        decomposition,
        lambda lam: np.exp(-factor * lam),
        tag=f"exp(-{z:.4g}{decomposition.tag})",
    )


def inv_sqrt(decomposition: SpectralDecomposition) -> DiscreteOperator:
    """H^-1/2 by exact spectral calculus."""
    if decomposition.lambda_min <= 0:
        raise SpectralError(
            f"H^-1/2 needs a positive spectrum, got {decomposition.lambda_min:.3g}"
        )
    return apply_function(
        decomposition, lambda lam: lam**-0.5, tag=f"{decomposition.tag}^-1/2"
    )


@dataclass
class SubordinationParams:
    sigma_max: float | None = None
    panels: int = 2000
    tolerance: float = 1e-6


def subordination_error_bound(
    decomposition: SpectralDecomposition, params: SubordinationParams
) -> float:
    """A-priori relative error of the trapezoid rule: tail plus aliasing."""
    lam_min, lam_max = decomposition.lambda_min, decomposition.lambda_max
    sigma_max = params.sigma_max or 12.0 / math.sqrt(lam_min)
    step = sigma_max / params.panels
    tail = math.exp(-(sigma_max**2) * lam_min)
    aliasing = 2.0 * math.exp(-(math.pi**2) / (step**2 * lam_max))
    return tail + aliasing


def required_panels(
    decomposition: SpectralDecomposition, params: SubordinationParams
) -> int:
    """Smallest panel count whose aliasing term stays below the tolerance."""
    sigma_max = params.sigma_max or 12.0 / math.sqrt(decomposition.lambda_min)
    log_term = math.log(4.0 / params.tolerance)
    step = math.pi / math.sqrt(decomposition.lambda_max * log_term)
    return max(params.panels, math.ceil(sigma_max / step))


def inv_sqrt_subordination(
    decomposition: SpectralDecomposition,
    params: SubordinationParams | None = None,
) -> DiscreteOperator:
    """H^-1/2 = (2/sqrt(pi)) int_0^inf e^{-sigma^2 H} d sigma by the trapezoid rule.

    The quadrature acts on the eigenvalues, which is the operator sum of the
    sampled propagators e^{-sigma_i^2 H}.

    Raises:
        SubordinationError: Spectrum not bounded away from 0, or an a-priori
            error above the tolerance.
    """
    params = params or SubordinationParams()
    if decomposition.lambda_min <= 0:
        raise SubordinationError(
            f"subordination diverges: smallest eigenvalue {decomposition.lambda_min:.3g}"
        )
    if params.panels < 1:
        raise SubordinationError(f"panels must be >= 1, got {params.panels}")
    bound = subordination_error_bound(decomposition, params)
    if bound > params.tolerance:
        raise SubordinationError(
            f"quadrature error bound {bound:.3e} exceeds tolerance {params.tolerance:.1e}; "
            f"use at least {required_panels(decomposition, params)} panels"
        )

    sigma_max = params.sigma_max or 12.0 / math.sqrt(decomposition.lambda_min)
    sigma = np.linspace(0.0, sigma_max, params.panels + 1)
    weights = np.full(sigma.size, sigma_max / params.panels)
    weights[[0, -1]] *= 0.5

    lam = decomposition.eigenvalues
    values = np.zeros_like(lam)
    for start in range(0, lam.size, 512):
        block = lam[start : start + 512]
        values[start : start + 512] = np.exp(-np.outer(block, sigma**2)) @ weights
    values *= 2.0 / math.sqrt(math.pi)

    exact = lam**-0.5
    measured = float(np.max(np.abs(values - exact) / exact))
    operator = _operator(decomposition, values, f"{decomposition.tag}^-1/2[sub]")
    operator.meta.update(
        {"error_bound": bound, "relative_error": measured, "panels": params.panels}
    )
    logger.info(
        f"Subordination H^-1/2: bound {bound:.2e}, spectral deviation {measured:.2e}"
    )
    return operator


def fourier_calculus_crosscheck(
    decomposition: SpectralDecomposition,
    F: Callable[[np.ndarray], np.ndarray],
    r: float,
    xi_max: float = 64.0,
    panels: int = 2**14,
    grid_points: int = 4097,
    tolerance: float | None = None,
) -> DiscreteOperator:
    """F(H) as int g_hat(xi) e^{-(1 - i xi) H / r} d xi with g(u) = F(r u) e^u.

    F must vanish beyond r. The result carries the max-abs deviation from
    :func:`apply_function` in ``meta["deviation"]`` and the same deviation
    relative to the largest entry of F(H) in ``meta["relative_deviation"]``.

    Raises:
        MultiplierError: F does not vanish on (r, 4r].
        VerificationError: The relative deviation exceeds ``tolerance``, i.e.
            the truncation at xi_max or the panel count is too coarse.
    """
    if r <= 0:
        raise MultiplierError(f"r must be positive, got {r}")
    outside = np.abs(np.asarray(F(r * np.linspace(1.0, 4.0, 257)[1:]), dtype=complex))
    u = np.linspace(0.0, 1.0, grid_points)
    g = np.asarray(F(r * u), dtype=complex) * np.exp(u)
    peak = float(np.max(np.abs(g))) if g.size else 0.0
    if np.max(outside) > 1e-12 * max(peak, 1e-300):
        raise MultiplierError(f"F is not supported in [0, {r}]")

    du = u[1] - u[0]
    u_weights = np.full(u.size, du)
    u_weights[[0, -1]] *= 0.5
    xi = np.linspace(-xi_max, xi_max, panels + 1)
    xi_weights = np.full(xi.size, 2 * xi_max / panels)
    xi_weights[[0, -1]] *= 0.5

    lam = decomposition.eigenvalues / r
    values = np.zeros(lam.size, dtype=complex)
    for start in range(0, xi.size, 512):
        block = xi[start : start + 512]
        g_hat = np.exp(-1j * np.outer(block, u)) @ (g * u_weights) / (2 * math.pi)
        kernel = np.exp(-np.outer(lam, 1.0 - 1j * block))
        values += kernel @ (g_hat * xi_weights[start : start + 512])

    operator = _operator(decomposition, values, f"F({decomposition.tag})[fourier]")
    reference = apply_function(decomposition, F).dense()
    deviation = float(np.max(np.abs(operator.dense() - reference))) if reference.size else 0.0
    scale = float(np.max(np.abs(reference))) if reference.size else 0.0
    relative = deviation / scale if scale > 0 else deviation
    operator.meta.update(
        {
            "deviation": deviation,
            "relative_deviation": relative,
            "xi_max": xi_max,
            "panels": panels,
        }
    )
    logger.info(f"Fourier cross-check at xi_max={xi_max}: deviation {deviation:.3e}")
    if tolerance is not None and relative > tolerance:
        raise VerificationError(
            f"Fourier cross-check deviates by {relative:.3e} (relative) at xi_max={xi_max}, "
            f"{panels} panels; tolerance {tolerance:.1e}"
        )
    return operator
