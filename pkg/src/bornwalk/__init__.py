"""Random-walk model of quantum measurement: stochastic unitaries, eigenstate
detection and Monte Carlo estimation of selection probabilities."""

__version__ = "0.1.0"
