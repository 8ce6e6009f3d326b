"""scikit-learn style wrapper that maps ``(d, E_c)`` rows to tick statistics.

There is nothing to learn from data here; ``fit`` only validates the input
shape, so the wrapper exists to drop the clock into pipelines and grid tools.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import sweep
from .model import ClockParams

OUTPUT_COLUMNS = ("t_tick", "dt_tick", "nu_tick", "N")


class ClockStatistics(TransformerMixin, BaseEstimator):
    """Tick statistics of the clock for each ``(d, E_c)`` input row.

    Rows whose evaluation fails produce ``nan`` in every output column.

    Parameters
    ----------
    backend : {"chain", "analytic", "quantum"}
    boundary : {"leaky", "absorbing"}
        Top-of-ladder convention for the chain and analytic backends.
    quantum_method : {"resolvent", "quadrature"}
    g, gamma_h, gamma_c, Gamma, T_c, T_h, E_w : float
        Fixed clock parameters shared by every row.
    rtol, atol, eps : float
        Integrator settings for ``quantum_method="quadrature"``.

    Examples
    --------
    >>> est = ClockStatistics(backend="chain", boundary="absorbing")
    >>> est.fit_transform([[10, 1.0], [20, 2.0]]).shape
    (2, 4)
    """

    def __init__(
        self,
        backend="chain",
        boundary="leaky",
        quantum_method="resolvent",
        g=0.05,
        gamma_h=0.05,
        gamma_c=0.05,
        Gamma=0.05,
        T_c=1.0,
        T_h=1000.0,
        E_w=1.0,
        rtol=1e-8,
        atol=1e-12,
        eps=1e-9,
    ):
        self.backend = backend
        self.boundary = boundary
        self.quantum_method = quantum_method
        self.g = g
        self.gamma_h = gamma_h
        self.gamma_c = gamma_c
        self.Gamma = Gamma
        self.T_c = T_c
        self.T_h = T_h
        self.E_w = E_w
        self.rtol = rtol
        self.atol = atol
        self.eps = eps

    def _template(self) -> ClockParams:
        return ClockParams(
            g=self.g, gamma_h=self.gamma_h, gamma_c=self.gamma_c, Gamma=self.Gamma,
            T_c=self.T_c, T_h=self.T_h, E_w=self.E_w,
        )

    def _check_X(self, X, reset):
        X = check_array(X, dtype=float, ensure_all_finite=True)
        if X.shape[1] != 2:
            raise ValueError(f"expected 2 columns (d, E_c), got {X.shape[1]}")
        if reset:
            self.n_features_in_ = 2
        d = X[:, 0]
        if np.any(d != np.round(d)) or np.any(d < 2):
            raise ValueError("column 0 must hold integer ladder sizes d >= 2")
        return X

    def fit(self, X, y=None):
        if self.backend not in sweep.BACKENDS:
            raise ValueError(f"backend must be one of {sweep.BACKENDS}")
        self._check_X(X, reset=True)
        self.template_ = self._template()
        return self

    def transform(self, X):
        check_is_fitted(self, "template_")
        X = self._check_X(X, reset=False)
        out = np.full((X.shape[0], len(OUTPUT_COLUMNS)), np.nan)
        options = dict(boundary=self.boundary, quantum_method=self.quantum_method,
                       rtol=self.rtol, atol=self.atol, eps=self.eps)
        for i, (d, E_c) in enumerate(X):
            record = sweep.compute_record(
                self.template_.replace(d=int(d), E_c=float(E_c)), self.backend, **options
            )
            if record.ok:
                out[i] = [record.t_tick, record.dt_tick, record.nu_tick, record.N]
        return out

    def predict(self, X):
        """Accuracy ``N`` for each row."""
        return self.transform(X)[:, 3]

    def get_feature_names_out(self, input_features=None):
        return np.array(OUTPUT_COLUMNS, dtype=object)

    def score(self, X, y):
        """Negative mean relative error of the predicted ``N`` against ``y``."""
        y = np.asarray(y, dtype=float)
        pred = self.predict(X)
        return -float(np.mean(np.abs(pred - y) / np.abs(y))) if len(y) else math.nan
