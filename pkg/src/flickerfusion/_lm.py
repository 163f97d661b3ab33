"""Levenberg-Marquardt minimizer for ``sum(residuals(x)**2)``."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class LMResult:
    x: np.ndarray
    loss: float
    n_iter: int
    converged: bool
    history: list = field(default_factory=list)
    message: str = ""


def levenberg_marquardt(fun, jac, x0, max_iter=200, tol=1e-10, damping=1e-3,
                        max_damping=1e12):
    """Minimize the squared norm of ``fun(x)`` with Marquardt scaling.

    ``jac(x)`` returns the ``(m, n)`` Jacobian of ``fun``. Steps are only
    accepted when they lower the loss, so ``history`` (the loss after each
    accepted step, starting with the initial loss) is non-increasing.
    """
    x = np.asarray(x0, dtype=float).copy()
    r = fun(x)
    loss = float(r @ r)
    history = [loss]
    lam = damping
    for it in range(1, max_iter + 1):
        J = jac(x)
        g = J.T @ r
        if np.max(np.abs(g)) <= tol * max(1.0, loss):
            return LMResult(x, loss, it - 1, True, history, "gradient below tolerance")
        A = J.T @ J
        diag = np.maximum(np.diag(A), 1e-12)
        while True:
            try:
                step = np.linalg.solve(A + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                x_new = x + step
                r_new = fun(x_new)
                loss_new = float(r_new @ r_new)
                if np.isfinite(loss_new) and loss_new < loss:
                    break
            lam *= 10.0
            if lam > max_damping:
                return LMResult(x, loss, it, True, history, "no descent direction left")
        improvement = loss - loss_new
        x, r, loss = x_new, r_new, loss_new
        history.append(loss)
        lam = max(lam / 10.0, 1e-12)
        small_step = np.linalg.norm(step) <= tol * (np.linalg.norm(x) + tol)
        if improvement <= tol * max(loss, tol) or small_step:
            return LMResult(x, loss, it, True, history, "loss change below tolerance")
    return LMResult(x, loss, max_iter, False, history, "maximum iterations reached")
