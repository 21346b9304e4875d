import numpy as np
import pytest

from hmprior.core import ConstraintSet, HyperBox, SummaryConstraint
from hmprior.models import LinearGaussianModel, ModelSpec
from hmprior.simbank import SimulationBank, build_bank


class AffineModel(ModelSpec):
    """S = a + b * lambda exactly."""
    name = "affine"

    def __init__(self, a=2.0, b=3.0):
        super().__init__(1, 1, ("S1",), ("lambda",))
        self.a, self.b = a, b

    def simulate(self, natural, seed):
        return np.array([self.a + self.b * natural[0]])


class ScaleNoiseModel(ModelSpec):
    """S ~ N(0, exp(2 lambda))."""
    name = "scale_noise"

    def __init__(self):
        super().__init__(1, 1, ("S1",), ("lambda",))

    def simulate(self, natural, seed):
        return np.array([np.exp(natural[0]) * np.random.default_rng(seed).standard_normal()])


class FailingModel(ModelSpec):
    name = "failing"

    def __init__(self):
        super().__init__(1, 1, ("S1",), ("lambda",))

    def simulate(self, natural, seed):
        raise ValueError("solver blew up")


class PartlyDegenerateModel(ModelSpec):
    """NaN summary below lambda = 0.5, N(lambda, 1) above."""
    name = "partly_degenerate"

    def __init__(self):
        super().__init__(1, 1, ("S1",), ("lambda",))

    def simulate(self, natural, seed):
        if natural[0] < 0.5:
            return np.array([np.nan])
        return np.array([natural[0] + np.random.default_rng(seed).standard_normal()])


@pytest.fixture
def unit_box():
    return HyperBox(lower=[0.0], upper=[1.0])


@pytest.fixture
def affine_model():
    return AffineModel()


@pytest.fixture
def scale_noise_model():
    return ScaleNoiseModel()


@pytest.fixture
def failing_model():
    return FailingModel()


@pytest.fixture
def partly_degenerate_model():
    return PartlyDegenerateModel()


@pytest.fixture
def gaussian_model():
    return LinearGaussianModel(a=1.0, b=2.0, c=0.5)


@pytest.fixture
def gaussian_bank(gaussian_model, unit_box):
    return build_bank(gaussian_model, unit_box, 20_000, seed=11)


@pytest.fixture
def mode_constraints():
    """A plausible value at the predictive mode of N(lambda, 1) on [-1, 1]."""
    return ConstraintSet((SummaryConstraint(0, plausible=(0.0,)),), labels=("S1",))


def make_bank(lambdas, summaries, mad=None, waves=None):
    lambdas = np.asarray(lambdas, dtype=float)
    summaries = np.asarray(summaries, dtype=float).reshape(len(lambdas), -1)
    mad = np.ones(lambdas.shape[1]) if mad is None else np.asarray(mad, dtype=float)
    waves = np.zeros(len(lambdas), dtype=int) if waves is None else np.asarray(waves)
    return SimulationBank(lambdas=lambdas, summaries=summaries, mad=mad, waves=waves,
                          labels=tuple(f"S{j + 1}" for j in range(summaries.shape[1])))


@pytest.fixture
def bank_factory():
    return make_bank
