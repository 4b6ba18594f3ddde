import math

import numpy as np

from .exceptions import InvalidArgument


class MaskSchedule:
    """
    Base class for masking schedules. Subclasses define the mask fraction
    m(t) = 1 - alpha_bar(t) on [0, 1] with m(0) = 0 and m(1) = 1, its
    derivative, and its inverse.
    """

    name = None

    def mask_fraction(self, t):
        raise NotImplementedError("mask_fraction() must be implemented by a schedule")

    def mask_rate(self, t):
        raise NotImplementedError("mask_rate() must be implemented by a schedule")

    def inverse(self, fraction):
        raise NotImplementedError("inverse() must be implemented by a schedule")

    def alpha_bar(self, t):
        """
        Survival probability: the chance a token is still unmasked at time t.
        """
        return 1.0 - self.mask_fraction(t)

    def alpha_bar_prime(self, t):
        return -self.mask_rate(t)

    def label(self):
        """
        The config string that parses back into this schedule.
        """
        return self.name

    def __repr__(self):
        return "<%s %s>" % (self.__class__.__name__, self.label())

    def __eq__(self, other):
        return isinstance(other, MaskSchedule) and self.label() == other.label()

    def __hash__(self):
        return hash(self.label())


class LinearSchedule(MaskSchedule):
    name = "linear"

    def mask_fraction(self, t):
        return np.asarray(t, dtype=float) * 1.0

    def mask_rate(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def inverse(self, fraction):
        return np.asarray(fraction, dtype=float) * 1.0


class CosineSchedule(MaskSchedule):
    name = "cosine"

    def mask_fraction(self, t):
        return 1.0 - np.cos(np.pi * np.asarray(t, dtype=float) / 2)

    def mask_rate(self, t):
        return np.pi / 2 * np.sin(np.pi * np.asarray(t, dtype=float) / 2)

    def inverse(self, fraction):
        fraction = np.clip(np.asarray(fraction, dtype=float), 0.0, 1.0)
        return 2 / np.pi * np.arccos(1.0 - fraction)


class PolynomialSchedule(MaskSchedule):
    name = "poly"

    def __init__(self, power=2.0):
        if power <= 0:
            raise InvalidArgument("Polynomial schedule needs a positive power")
        self.power = float(power)

    def mask_fraction(self, t):
        return np.asarray(t, dtype=float) ** self.power

    def mask_rate(self, t):
        return self.power * np.asarray(t, dtype=float) ** (self.power - 1)

    def inverse(self, fraction):
        fraction = np.clip(np.asarray(fraction, dtype=float), 0.0, 1.0)
        return fraction ** (1.0 / self.power)

    def label(self):
        return "poly:%g" % self.power


class GeometricSchedule(MaskSchedule):
    """
    m(t) = (r^t - 1) / (r - 1), normalised so both endpoints are exact.
    """

    name = "geo"

    def __init__(self, ratio=20.0):
        if ratio <= 0 or ratio == 1:
            raise InvalidArgument("Geometric schedule needs a positive ratio other than 1")
        self.ratio = float(ratio)
        self._log_ratio = math.log(self.ratio)

    def mask_fraction(self, t):
        return np.expm1(self._log_ratio * np.asarray(t, dtype=float)) / (
            self.ratio - 1
        )

    def mask_rate(self, t):
        return (
            self._log_ratio
            * np.exp(self._log_ratio * np.asarray(t, dtype=float))
            / (self.ratio - 1)
        )

    def inverse(self, fraction):
        fraction = np.clip(np.asarray(fraction, dtype=float), 0.0, 1.0)
        return np.log1p(fraction * (self.ratio - 1)) / self._log_ratio

    def label(self):
        return "geo:%g" % self.ratio


SCHEDULES = {
    LinearSchedule.name: LinearSchedule,
    CosineSchedule.name: CosineSchedule,
    PolynomialSchedule.name: PolynomialSchedule,
    GeometricSchedule.name: GeometricSchedule,
}


def parse_schedule(value):
    """
    Parses ``linear``, ``cosine``, ``poly:<p>`` or ``geo:<r>``; bare ``poly``
    and ``geo`` take the defaults p = 2 and r = 20.
    """
    if isinstance(value, MaskSchedule):
        return value
    name, _, argument = str(value).strip().lower().partition(":")
    try:
        schedule_class = SCHEDULES[name]
    except KeyError:
        raise InvalidArgument(
            "Unknown schedule %r (expected one of %s)" % (value, ", ".join(SCHEDULES))
        )
    if not argument:
        return schedule_class()
    if schedule_class in (LinearSchedule, CosineSchedule):
        raise InvalidArgument("Schedule %r takes no parameter" % name)
    try:
        return schedule_class(float(argument))
    except ValueError:
        raise InvalidArgument("Bad schedule parameter in %r" % (value,))
