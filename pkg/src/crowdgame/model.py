"""Domain types and closed-form evaluations for the sensor data-trading game.

A cloud of RF-powered sensors shares an uplink to a single access point.
Sensor i receives wireless power p_i, spends a fixed circuit power c_i, and
transmits with the remainder.  Its achievable rate is the interference-coupled
Shannon map

    r_i = b_i * log2(1 + beta_i / (sum_{j != i} beta_j + sigma^2)),
    beta_i = g_i * max(p_i - c_i, 0) / d_i^alpha_i.

The map is injective on the feasible power box, so rates can be used as the
strategy variable.  The constructive inverse works through the SINR
decomposition: with gamma_i = 2^(r_i/b_i) - 1 and t_i = gamma_i/(1+gamma_i),

    T = sum_j t_j  (must stay below 1),
    S = sigma^2 * T / (1 - T),
    beta_i = t_i * (S + sigma^2),
    p_i = c_i + beta_i * d_i^alpha_i / g_i.

Sensors earn lambda_i per unit rate, pay phi * p_i * (d^t_i)^eta for the
wireless power transfer, and proportionally share the blockchain's quadratic
power bill a*(m*R)^2 + b*(m*R) + c, where R is the total admitted rate.

Everything in this module is a pure function of its arguments; GameConfig is
treated as immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

LN2 = math.log(2.0)

#: Feasibility margin on the load T = sum_j gamma_j/(1+gamma_j); rate vectors
#: with T >= 1 - margin are rejected (powers would blow up).
DEFAULT_FEASIBILITY_MARGIN = 1e-9

#: Power cap applied when a sensor does not specify max_received_power.
DEFAULT_POWER_CAP = 10.0

# Rate and power profiles are plain float arrays indexed by sensor id.
RateVector = np.ndarray
PowerVector = np.ndarray


class InfeasibilityError(Exception):
    """Base class for rate vectors outside the image of the power box."""


class InfeasibleRates(InfeasibilityError):
    """Requested rates need load T >= 1; no finite powers achieve them."""

    def __init__(self, load: float):
        super().__init__(f"rate vector infeasible: load T={load!r} >= 1")
        self.load = load


class PowerBoundExceeded(InfeasibilityError):
    """Inverting the rates pushes some sensor past its power cap."""

    def __init__(self, sensor: int, power: float, cap: float):
        super().__init__(
            f"sensor {sensor}: required power {power!r} exceeds cap {cap!r}"
        )
        self.sensor = sensor
        self.power = power
        self.cap = cap


def _require(cond: bool, name: str, msg: str):
    if not cond:
        raise ValueError(f"{name}: {msg}")


@dataclass(frozen=True)
class SensorParams:
    """Physical and economic constants of one sensor."""

    bandwidth: float          # b_i, uplink bandwidth
    channel_gain: float       # g_i
    ap_distance: float        # d_i, sensor to access point
    path_loss_exp: float      # alpha_i, uplink path-loss exponent
    circuit_power: float      # c_i, fixed sensing/circuit drain
    unit_rate_price: float    # lambda_i, revenue per unit rate
    beacon_distance: float    # d^t_i, sensor to RF-energy beacon
    max_received_power: float = DEFAULT_POWER_CAP  # p^u_i

    def __post_init__(self):
        for name in (
            "bandwidth", "channel_gain", "ap_distance", "path_loss_exp",
            "circuit_power", "unit_rate_price", "beacon_distance",
            "max_received_power",
        ):
            _require(math.isfinite(getattr(self, name)), name, "must be finite")
        _require(self.bandwidth > 0, "bandwidth", "must be > 0")
        _require(self.channel_gain > 0, "channel_gain", "must be > 0")
        _require(self.ap_distance > 0, "ap_distance", "must be > 0")
        _require(self.path_loss_exp > 0, "path_loss_exp", "must be > 0")
        _require(self.beacon_distance > 0, "beacon_distance", "must be > 0")
        _require(self.circuit_power >= 0, "circuit_power", "must be >= 0")
        _require(self.unit_rate_price >= 0, "unit_rate_price", "must be >= 0")
        _require(
            self.max_received_power >= self.circuit_power,
            "max_received_power",
            "must be >= circuit_power (sensor could never transmit)",
        )


@dataclass(frozen=True)
class BlockchainParams:
    """Coefficients of the blockchain power bill a*(m*R)^2 + b*(m*R) + c."""

    quad_coeff: float      # a
    lin_coeff: float       # b
    const_coeff: float     # c
    compute_coeff: float   # m, computational power per unit rate

    def __post_init__(self):
        for name in ("quad_coeff", "lin_coeff", "const_coeff", "compute_coeff"):
            v = getattr(self, name)
            _require(math.isfinite(v), name, "must be finite")
            _require(v >= 0, name, "must be >= 0")
        _require(self.compute_coeff > 0, "compute_coeff", "must be > 0")


@dataclass
class GameConfig:
    """One game instance: the sensor list plus the shared environment.

    The per-sensor constants are mirrored into numpy arrays at construction
    so that the hot evaluation paths avoid per-call list traversal.  Treat
    instances as immutable; they are safe to share across threads.
    """

    sensors: list[SensorParams]
    noise_variance: float      # sigma^2
    power_price: float         # phi, price per unit transferred power
    wpt_path_loss_exp: float   # eta
    blockchain: BlockchainParams

    # cached per-sensor arrays (derived, excluded from comparisons)
    bandwidths: np.ndarray = field(init=False, repr=False, compare=False)
    gains: np.ndarray = field(init=False, repr=False, compare=False)
    ap_distances: np.ndarray = field(init=False, repr=False, compare=False)
    path_loss_exps: np.ndarray = field(init=False, repr=False, compare=False)
    circuit_powers: np.ndarray = field(init=False, repr=False, compare=False)
    rate_prices: np.ndarray = field(init=False, repr=False, compare=False)
    beacon_distances: np.ndarray = field(init=False, repr=False, compare=False)
    power_caps: np.ndarray = field(init=False, repr=False, compare=False)
    inv_gain_pathloss: np.ndarray = field(init=False, repr=False, compare=False)
    wpt_factors: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        _require(len(self.sensors) >= 1, "sensors", "need at least one sensor")
        _require(
            math.isfinite(self.noise_variance) and self.noise_variance > 0,
            "noise_variance", "must be finite and > 0",
        )
        _require(self.power_price >= 0, "power_price", "must be >= 0")
        # eta = 0 is allowed: charging cost then ignores beacon distance
        _require(self.wpt_path_loss_exp >= 0, "wpt_path_loss_exp", "must be >= 0")
        grab = lambda name: np.array([getattr(s, name) for s in self.sensors])
        self.bandwidths = grab("bandwidth")
        self.gains = grab("channel_gain")
        self.ap_distances = grab("ap_distance")
        self.path_loss_exps = grab("path_loss_exp")
        self.circuit_powers = grab("circuit_power")
        self.rate_prices = grab("unit_rate_price")
        self.beacon_distances = grab("beacon_distance")
        self.power_caps = grab("max_received_power")
        # d_i^alpha_i / g_i converts beta_i back to transmit power
        self.inv_gain_pathloss = self.ap_distances**self.path_loss_exps / self.gains
        # phi * (d^t_i)^eta converts received power to charging cost
        self.wpt_factors = self.power_price * self.beacon_distances**self.wpt_path_loss_exp

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)


@dataclass(frozen=True)
class RateInversion:
    """SINR decomposition produced while inverting the rate map.

    gamma[i] = 2^(r_i/b_i) - 1 is the per-sensor SINR, beta[i] the received
    interference-normalized power, beta_sum their total S, and load the
    feasibility load T = sum_j gamma_j/(1+gamma_j) which must stay below 1.
    """

    gamma: np.ndarray
    beta: np.ndarray
    beta_sum: float
    load: float


@dataclass
class EquilibriumResult:
    """Converged (or best-effort) strategy profile with per-sensor accounts."""

    rates: np.ndarray
    powers: np.ndarray
    utilities: np.ndarray
    fees: np.ndarray
    fee_shares: np.ndarray
    iterations: int
    converged: bool
    residual: float
    trace: np.ndarray  # iterate history, shape (k, n_sensors), trace[0] = init


def _as_profile(values, cfg: GameConfig, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape != (cfg.n_sensors,):
        raise ValueError(
            f"{name} has shape {arr.shape}, expected ({cfg.n_sensors},)"
        )
    return arr


def _check_sensor_id(i: int, cfg: GameConfig):
    if not 0 <= i < cfg.n_sensors:
        raise IndexError(f"sensor id {i} out of range [0, {cfg.n_sensors})")


# ---------------------------------------------------------------------------
# forward map, inverse map
# ---------------------------------------------------------------------------

def forward_rates(powers: PowerVector, cfg: GameConfig) -> RateVector:
    """Rates achieved by a received-power profile.

    Sensors at or below circuit power transmit nothing (their transmit power
    is clamped at zero), so the map stays total on the whole power box.
    """
    p = _as_profile(powers, cfg, "powers")
    beta = cfg.gains * np.maximum(p - cfg.circuit_powers, 0.0) / (
        cfg.ap_distances**cfg.path_loss_exps
    )
    interference = beta.sum() - beta + cfg.noise_variance
    return cfg.bandwidths * np.log1p(beta / interference) / LN2


def invert_rates(
    rates: RateVector,
    cfg: GameConfig,
    feasibility_margin: float = DEFAULT_FEASIBILITY_MARGIN,
) -> tuple[PowerVector, RateInversion]:
    """Received powers that realize a rate profile exactly.

    Closed form: the per-sensor SINRs gamma_i determine the load
    T = sum gamma_i/(1+gamma_i); the aggregate S = sigma^2*T/(1-T) then fixes
    every beta_i = (gamma_i/(1+gamma_i))*(S+sigma^2) and hence every power.
    forward_rates reproduces the input to round-trip precision.

    Raises:
        InfeasibleRates: T >= 1 - feasibility_margin, the rates lie outside
            the image of any finite power profile.
        PowerBoundExceeded: some sensor would need more than its power cap.
    """
    r = _as_profile(rates, cfg, "rates")
    if not np.all(np.isfinite(r)) or np.any(r < 0):
        raise ValueError("rates must be finite and >= 0")
    x = r / cfg.bandwidths
    gamma = np.expm1(LN2 * x)
    t = -np.expm1(-LN2 * x)          # gamma/(1+gamma), computed stably
    load = float(t.sum())
    if load >= 1.0 - feasibility_margin:
        raise InfeasibleRates(load)
    beta_sum = cfg.noise_variance * load / (1.0 - load)
    beta = t * (beta_sum + cfg.noise_variance)
    p = cfg.circuit_powers + beta * cfg.inv_gain_pathloss
    over = np.nonzero(p > cfg.power_caps)[0]
    if over.size:
        i = int(over[0])
        raise PowerBoundExceeded(i, float(p[i]), float(cfg.power_caps[i]))
    return p, RateInversion(gamma=gamma, beta=beta, beta_sum=beta_sum, load=load)


# ---------------------------------------------------------------------------
# blockchain cost sharing, charging cost
# ---------------------------------------------------------------------------

def blockchain_power(total_rate: float, bc: BlockchainParams) -> float:
    """Power bill of the blockchain at a given total admitted rate."""
    x = bc.compute_coeff * total_rate
    return bc.quad_coeff * x * x + bc.lin_coeff * x + bc.const_coeff


def transaction_fee(i: int, rates: RateVector, cfg: GameConfig) -> float:
    """Sensor i's proportional share of the blockchain power bill.

    When the total rate is zero there is no service to bill; every share is
    zero and the fixed cost stays unallocated.
    """
    _check_sensor_id(i, cfg)
    r = _as_profile(rates, cfg, "rates")
    total = float(r.sum())
    if total <= 0.0:
        return 0.0
    return float(r[i]) / total * blockchain_power(total, cfg.blockchain)


def wpt_cost(i: int, p_i: float, cfg: GameConfig) -> float:
    """Charging cost phi * p_i * (d^t_i)^eta for sensor i."""
    _check_sensor_id(i, cfg)
    return float(cfg.wpt_factors[i]) * p_i


# ---------------------------------------------------------------------------
# utilities
# ---------------------------------------------------------------------------

def _fees_all(r: np.ndarray, cfg: GameConfig) -> np.ndarray:
    total = float(r.sum())
    if total <= 0.0:
        return np.zeros_like(r)
    return r / total * blockchain_power(total, cfg.blockchain)


def _utilities_all(
    r: np.ndarray, cfg: GameConfig, powers: np.ndarray | None = None
) -> np.ndarray:
    """Per-sensor utilities of a rate profile (single inversion, one pass)."""
    if powers is None:
        powers, _ = invert_rates(r, cfg)
    return cfg.rate_prices * r - cfg.wpt_factors * powers - _fees_all(r, cfg)


def utility_rate_space(i: int, rates: RateVector, cfg: GameConfig) -> float:
    """Utility of sensor i with rates as the strategy variable.

    Equals utility_power_space evaluated at the inverted powers; infeasible
    rate profiles propagate InfeasibleRates / PowerBoundExceeded.
    """
    _check_sensor_id(i, cfg)
    r = _as_profile(rates, cfg, "rates")
    powers, _ = invert_rates(r, cfg)
    return (
        float(cfg.rate_prices[i]) * float(r[i])
        - wpt_cost(i, float(powers[i]), cfg)
        - transaction_fee(i, r, cfg)
    )


def utility_power_space(i: int, powers: PowerVector, cfg: GameConfig) -> float:
    """Utility of sensor i evaluated entirely in power space."""
    _check_sensor_id(i, cfg)
    p = _as_profile(powers, cfg, "powers")
    r = forward_rates(p, cfg)
    return (
        float(cfg.rate_prices[i]) * float(r[i])
        - wpt_cost(i, float(p[i]), cfg)
        - transaction_fee(i, r, cfg)
    )


# ---------------------------------------------------------------------------
# derivatives in rate space
# ---------------------------------------------------------------------------

def utility_gradient(i: int, rates: RateVector, cfg: GameConfig) -> float:
    """d u_i / d r_i by central difference (the normative implementation).

    Relative step h = max(1e-6, 1e-6 * r_i).  If a perturbed point leaves the
    feasible region the step is shrunk once by 10x before giving up.
    """
    _check_sensor_id(i, cfg)
    r = _as_profile(rates, cfg, "rates")
    if r[i] <= 0.0:
        raise ValueError("utility_gradient needs a strictly interior r_i > 0")
    h = max(1e-6, 1e-6 * float(r[i]))
    if r[i] - h < 0.0:
        h = 0.5 * float(r[i])
    for attempt in range(2):
        try:
            up = utility_rate_space(i, _with_entry(r, i, r[i] + h), cfg)
            dn = utility_rate_space(i, _with_entry(r, i, r[i] - h), cfg)
            return (up - dn) / (2.0 * h)
        except InfeasibilityError:
            if attempt == 1:
                raise
            h *= 0.1
    raise AssertionError("unreachable")


def utility_gradient_analytic(i: int, rates: RateVector, cfg: GameConfig) -> float:
    """Closed-form d u_i / d r_i from the SINR decomposition.

    Optional accelerator; must agree with utility_gradient to 1e-5 relative
    (enforced by the test suite).
    """
    _check_sensor_id(i, cfg)
    r = _as_profile(rates, cfg, "rates")
    return float(gradient_all(r, cfg)[i])


def gradient_all(r: np.ndarray, cfg: GameConfig) -> np.ndarray:
    """Analytic gradients d u_i / d r_i for every sensor at once."""
    x = r / cfg.bandwidths
    z = np.exp2(-x)                 # 2^(-r/b)
    t = 1.0 - z
    load = float(t.sum())
    if load >= 1.0:
        raise InfeasibleRates(load)
    eps = 1.0 - load
    tp = (LN2 / cfg.bandwidths) * z     # dt/dr
    dbeta = cfg.noise_variance * tp * (eps + t) / (eps * eps)
    dpower_cost = cfg.wpt_factors * cfg.inv_gain_pathloss * dbeta
    bc = cfg.blockchain
    rho = float(r.sum())
    am2 = bc.quad_coeff * bc.compute_coeff**2
    if rho > 0.0:
        dfee = (
            am2 * rho
            + bc.lin_coeff * bc.compute_coeff
            + bc.const_coeff / rho
            + r * (am2 - bc.const_coeff / rho**2)
        )
    else:
        dfee = np.zeros_like(r)
    return cfg.rate_prices - dpower_cost - dfee


def utility_second_derivative(i: int, rates: RateVector, cfg: GameConfig) -> float:
    """d^2 u_i / d r_i^2 at an interior rate profile.

    The charging-cost term is evaluated by a second central difference of the
    inverted power p_i(r_i); the fee term has the closed form
    -2*a*m^2 + 2*c*sum_{j != i} r_j / (sum_j r_j)^3.
    """
    _check_sensor_id(i, cfg)
    r = _as_profile(rates, cfg, "rates")
    if r[i] <= 0.0:
        raise ValueError(
            "utility_second_derivative needs a strictly interior r_i > 0"
        )
    h = max(1e-4, 1e-4 * float(r[i]))
    if r[i] - h < 0.0:
        h = 0.5 * float(r[i])
    for attempt in range(2):
        try:
            p0, _ = invert_rates(r, cfg)
            pp, _ = invert_rates(_with_entry(r, i, r[i] + h), cfg)
            pm, _ = invert_rates(_with_entry(r, i, r[i] - h), cfg)
            d2p = (float(pp[i]) - 2.0 * float(p0[i]) + float(pm[i])) / (h * h)
            break
        except InfeasibilityError:
            if attempt == 1:
                raise
            h *= 0.1
    bc = cfg.blockchain
    rho = float(r.sum())
    am2 = bc.quad_coeff * bc.compute_coeff**2
    fee_term = -2.0 * am2
    if rho > 0.0:
        fee_term += 2.0 * bc.const_coeff * (rho - float(r[i])) / rho**3
    return -float(cfg.wpt_factors[i]) * d2p + fee_term


def _with_entry(r: np.ndarray, i: int, value: float) -> np.ndarray:
    out = r.copy()
    out[i] = value
    return out
