"""Exception types shared across the toolkit."""


class ZoomabsError(Exception):
    """Base class for all toolkit errors."""


class NonFinite(ZoomabsError):
    """An integration produced NaN or infinity (trajectory blow-up)."""


class InputOutOfRange(ZoomabsError):
    """A control input lies outside the admissible input box."""


class UnsupportedRho(ZoomabsError):
    """The decrease-rate function is not of the supported (linear) form."""


class RangeExceeded(ZoomabsError):
    """A box needs lattice indices beyond the quantizer range."""


class EmptyContraction(ZoomabsError):
    """Shrinking a region by its margin leaves no interior."""


class DegenerateRegion(ZoomabsError):
    """A generated region would be too small to contain its own margin."""


class PrecisionBreach(ZoomabsError):
    """The quantization parameters violate the active precision budget."""


class EmptyMenu(ZoomabsError):
    """No lattice target is reachable; the input grid is too coarse."""


class InputMismatch(ZoomabsError):
    """Two transition systems do not share the same input alphabet."""


class RelationBreach(ZoomabsError):
    """A concrete trajectory left the closeness tube of its abstract twin."""


class NoPath(ZoomabsError):
    """The search frontier was exhausted without reaching the target."""


class ScenarioError(ZoomabsError):
    """A scenario file is malformed or inconsistent."""
