"""Hidden monotone maps from metric inverse depth (mm^-1) to the relative
channel a monocular network would produce."""
import abc

import numpy as np


class DepthWarp(object):
    @abc.abstractmethod
    def __call__(self, inverse_depth):
        """Relative value for each metric inverse depth; must be non-negative
        and increasing."""


class IdentityWarp(DepthWarp):
    def __call__(self, inverse_depth):
        return np.maximum(np.asarray(inverse_depth, dtype=float), 0.0)


class QuadraticWarp(DepthWarp):
    """Inverse of y = alpha2 m^2 + alpha1 m + alpha0, so a quadratic fit
    recovers the coefficients exactly."""

    def __init__(self, alpha2=2e-8, alpha1=4e-6, alpha0=1e-4):
        if alpha2 < 0 or alpha1 <= 0:
            raise ValueError('quadratic warp needs alpha2 >= 0 and alpha1 > 0 to be monotone')
        self.alpha2 = float(alpha2)
        self.alpha1 = float(alpha1)
        self.alpha0 = float(alpha0)

    @property
    def coefficients(self):
        return np.array([self.alpha2, self.alpha1, self.alpha0])

    def __call__(self, inverse_depth):
        shifted = np.maximum(np.asarray(inverse_depth, dtype=float) - self.alpha0, 0.0)
        # positive root written without cancellation; alpha2 = 0 gives shifted / alpha1
        return 2.0 * shifted / (self.alpha1 + np.sqrt(self.alpha1 ** 2 + 4.0 * self.alpha2 * shifted))


class PowerWarp(DepthWarp):
    """m = scale * y^gamma; outside the quadratic family for gamma != 1, 1/2."""

    def __init__(self, gamma=0.7, scale=1000.0):
        if gamma <= 0 or scale <= 0:
            raise ValueError('power warp needs positive gamma and scale')
        self.gamma = float(gamma)
        self.scale = float(scale)

    def __call__(self, inverse_depth):
        return self.scale * np.maximum(np.asarray(inverse_depth, dtype=float), 0.0) ** self.gamma
