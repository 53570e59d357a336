"""scikit-learn style wrapper around the robust-queueing solvers.

Nothing is learned from data: ``fit`` only builds the model template and
loads (or builds) the w surface it needs, and ``predict`` solves one fixed
point per ``(lambda, alpha)`` row.  Being an estimator lets the solver sit
in model-selection tooling, for instance a grid search over ``b``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .config import model_from_config
from .exceptions import ParameterError
from .rqcore import SQRT2, Algorithm, derived_measures, solve
from .wck import load_or_build_surface

__all__ = ["RobustQueueingRegressor"]


class RobustQueueingRegressor(RegressorMixin, BaseEstimator):
    """Mean virtual waiting time as a function of ``X = [[lambda, alpha], ...]``.

    Parameters
    ----------
    algorithm : {"first", "refined"}
    b : float or "calibrated"
    interarrival, service, patience : family name or distribution record
        Shapes only; means are set from each row.
    mu : float
    cache_dir : str, optional
        Where the w surface is cached.
    strict : bool
        Raise instead of clamping when the refined solver leaves the surface.
    """

    def __init__(self, algorithm="refined", b=SQRT2, interarrival="exponential", service="exponential",
                 patience="exponential", mu=1.0, cache_dir=None, strict=False):
        self.algorithm = algorithm
        self.b = b
        self.interarrival = interarrival
        self.service = service
        self.patience = patience
        self.mu = mu
        self.cache_dir = cache_dir
        self.strict = strict

    def fit(self, X=None, y=None):
        """Prepare the template model and the w surface; ``X`` and ``y`` are ignored."""
        algo = Algorithm(self.algorithm)
        if isinstance(self.b, str) and self.b != "calibrated":
            raise ParameterError(f"b must be a number or 'calibrated', got {self.b!r}")
        self.template_ = model_from_config({"lambda": 1.0, "alpha": 1.0, "mu": self.mu,
                                            "interarrival": self.interarrival, "service": self.service,
                                            "patience": self.patience})
        self.k_ = self.template_.zero_exp.k
        self.surface_ = load_or_build_surface(self.k_, cache_dir=self.cache_dir) if algo is Algorithm.REFINED else None
        return self

    def _models(self, X):
        check_is_fitted(self, "template_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ParameterError(f"X needs two columns (lambda, alpha), got {X.shape[1]}")
        return [self.template_.with_lam(lam).with_alpha(a) for lam, a in X]

    def solutions(self, X):
        return [solve(m, self.algorithm, self.b, self.surface_, self.strict) for m in self._models(X)]

    def predict(self, X) -> np.ndarray:
        return np.array([s.z for s in self.solutions(X)])

    def predict_derived(self, X) -> np.ndarray:
        """Columns ``p_abandon, mean_wait_served, mean_queue_effective``."""
        out = []
        for m in self._models(X):
            d = derived_measures(solve(m, self.algorithm, self.b, self.surface_, self.strict), m)
            out.append([d.p_abandon, d.mean_wait_served, d.mean_queue_effective])
        return np.array(out)
