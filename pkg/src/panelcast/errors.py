"""Exception hierarchy shared by all panelcast modules."""


class PanelcastError(Exception):
    """Base class for library errors."""


class ValidationError(PanelcastError, ValueError):
    """Invalid inputs or configuration."""


class NumericalError(PanelcastError, ArithmeticError):
    """A numerical routine could not produce a trustworthy answer."""


class ZeroOverlap(NumericalError):
    def __init__(self, s, t):
        self.s, self.t = int(s), int(t)
        super().__init__(f"no unit observed at both times {self.s} and {self.t}")


class RankTooLarge(ValidationError):
    pass


class AllZeroSpectrum(NumericalError):
    pass


class SingularGram(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class DegenerateUnit(NumericalError):
    def __init__(self, unit):
        self.unit = int(unit)
        super().__init__(f"unit {self.unit} has no usable loading estimate")


class UnsupportedOrder(ValidationError):
    """Inference formulas only cover first-order dynamics."""


class UnstableDgp(ValidationError):
    pass


class MissingAux(ValidationError):
    pass


class TooShort(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class NoPositiveActuals(ValidationError):
    pass
