"""Fixed-step closed-loop simulation of plant plus controller.

The coupled system is integrated with explicit RK4 at a fixed step (default
1 ms). Outputs (box projection of d, nonnegative projections of the filter
states, subgradient selection) are recomputed inside every internal stage,
so projections act on stage values and determinism is exact: the same
scenario and configuration always produce bit-identical logs. Disturbance
events are step changes in p_m snapped to the nearest grid point.

The hot path packs the whole state into one flat vector

    y = [ theta_e | omega_g | d | mu | phi | varphi+ | varphi- ]

and evaluates the right-hand side as one precomputed affine operator applied
to (y, p_l, eta+, eta-, g, z) plus the disturbance feedthrough. The readable
per-module functions in `dynamics` and `controller` define the semantics;
the packed operator is tested to match them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import MISMATCH_SOURCES, ControllerState, init_controller
from .costs import SELECTION_RULES, CostBatch, normalize_selection_rule
from .dynamics import PlantState
from .errors import NumericalError, ValidationError
from .network import NetworkModel, load_network


@dataclass(frozen=True)
class ControllerConfig:
    """Run-time controller options: selection rule, mismatch source, time scale."""

    selection: str = "minnorm"
    mismatch: str = "model"
    epsilon: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "selection", normalize_selection_rule(self.selection))
        if self.mismatch not in MISMATCH_SOURCES:
            raise ValidationError(f"mismatch source must be one of {MISMATCH_SOURCES}, got {self.mismatch!r}")
        if not self.epsilon > 0:
            raise ValidationError("controller time scale epsilon must be positive")


@dataclass(frozen=True)
class Event:
    """Step change of p_m at one bus at a given time."""

    time: float
    bus: int
    delta_p_m: float


@dataclass
class Scenario:
    """A disturbance experiment: network, horizon, events, controller config."""

    network_path: Path
    t_end: float
    dt: float
    events: list[Event] = field(default_factory=list)
    config: ControllerConfig = field(default_factory=ControllerConfig)
    init_plant: Path | None = None
    init_controller: Path | None = None
    log_decimation: int = 1

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValidationError("scenario dt must be positive")
        if self.t_end < 0:
            raise ValidationError("scenario t_end must be nonnegative")
        if self.log_decimation < 1:
            raise ValidationError("log_decimation must be a positive integer")
        for ev in self.events:
            if not 0 <= ev.time <= self.t_end:
                raise ValidationError(f"event time {ev.time} outside [0, t_end={self.t_end}]")

    def load_model(self) -> NetworkModel:
        model = load_network(self.network_path)
        for ev in self.events:
            if not 0 <= ev.bus < model.n:
                raise ValidationError(f"event references unknown bus {ev.bus}")
        return model


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file (strict JSON schema)."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: scenario document must be an object")
    allowed = {"network", "t_end", "dt", "events", "controller", "init", "log_decimation"}
    unknown = set(data) - allowed
    if unknown:
        raise ValidationError(f"{path}: unknown scenario fields {sorted(unknown)}")
    for req in ("network", "t_end", "dt"):
        if req not in data:
            raise ValidationError(f"{path}: scenario needs field '{req}'")

    base = path.parent
    events = []
    for i, raw in enumerate(data.get("events", [])):
        if not isinstance(raw, dict) or set(raw) != {"time", "bus", "delta_p_m"}:
            raise ValidationError(f"{path}: events[{i}] must have exactly time, bus, delta_p_m")
        events.append(Event(time=float(raw["time"]), bus=int(raw["bus"]), delta_p_m=float(raw["delta_p_m"])))

    cfg_raw = data.get("controller", {})
    if not isinstance(cfg_raw, dict):
        raise ValidationError(f"{path}: controller section must be an object")
    unknown = set(cfg_raw) - {"selection", "mismatch", "epsilon"}
    if unknown:
        raise ValidationError(f"{path}: unknown controller fields {sorted(unknown)}")
    config = ControllerConfig(
        selection=cfg_raw.get("selection", "minnorm"),
        mismatch=cfg_raw.get("mismatch", "model"),
        epsilon=float(cfg_raw.get("epsilon", 1.0)),
    )

    init_raw = data.get("init", {})
    if not isinstance(init_raw, dict) or set(init_raw) - {"plant", "controller"}:
        raise ValidationError(f"{path}: init section allows only 'plant' and 'controller' paths")

    return Scenario(
        network_path=base / str(data["network"]),
        t_end=float(data["t_end"]),
        dt=float(data["dt"]),
        events=events,
        config=config,
        init_plant=base / init_raw["plant"] if "plant" in init_raw else None,
        init_controller=base / init_raw["controller"] if "controller" in init_raw else None,
        log_decimation=int(data.get("log_decimation", 1)),
    )


def load_plant_state(path: str | Path, model: NetworkModel) -> PlantState:
    """Warm-start plant state from a flat vector file: theta_e | omega_g."""
    try:
        vec = np.loadtxt(Path(path), dtype=float).reshape(-1)
    except OSError as exc:
        raise ValidationError(f"cannot read plant warm-start file {path}: {exc}") from exc
    except ValueError as exc:
        raise ValidationError(f"plant warm-start file {path} is not a flat numeric vector: {exc}") from exc
    m, g = model.m, model.generator_index.size
    if vec.size != m + g:
        raise ValidationError(f"plant warm-start must have length {m + g} (theta_e | omega_g), got {vec.size}")
    state = PlantState(theta_e=vec[:m], omega_g=vec[m:])
    state.validate(model)
    return state


class ClosedLoop:
    """Precompiled closed-loop right-hand side over the packed state vector."""

    def __init__(self, model: NetworkModel, config: ControllerConfig | None = None):
        self.model = model
        self.config = config or ControllerConfig()
        n, m = model.n, model.m
        gidx = model.generator_index
        lidx = model.load_index
        g = gidx.size
        self.n, self.m, self.g = n, m, g

        # Packed layout offsets.
        self.sl_theta = slice(0, m)
        self.sl_og = slice(m, m + g)
        self.sl_d = slice(m + g, m + g + n)
        self.sl_mu = slice(m + g + n, m + g + 2 * n)
        self.sl_phi = slice(m + g + 2 * n, m + g + 3 * n)
        self.sl_vp = slice(m + g + 3 * n, m + g + 3 * n + m)
        self.sl_vm = slice(m + g + 3 * n + m, m + g + 3 * n + 2 * m)
        self.dim = m + g + 3 * n + 2 * m

        C = model.incidence
        B = model.susceptances
        L = model.laplacian
        D = model.damping
        M = model.inertia_generators
        Cw = C * B
        self.C, self.B, self.L = C, B, L
        self.box_lower = model.load_box.lower
        self.box_upper = model.load_box.upper
        self.batch = CostBatch(model.costs)

        S = self.dim
        # Frequency as an affine map: omega = Wy @ y + Wpl @ p_l + Wpm @ p_m.
        Wy = np.zeros((n, S))
        Wy[gidx, m + np.arange(g)] = 1.0
        Wpl = np.zeros((n, n))
        Wpm = np.zeros((n, n))
        if lidx.size:
            Wy[np.ix_(lidx, np.arange(m))] = -Cw[lidx] / D[lidx, None]
            Wpl[lidx, lidx] = -1.0 / D[lidx]
            Wpm[lidx, lidx] = 1.0 / D[lidx]

        # Generator acceleration: dog = Vy @ y + Vpl @ p_l + Vpm @ p_m.
        tmp_y = -D[:, None] * Wy
        tmp_y[:, :m] -= Cw
        Vy = tmp_y[gidx] / M[:, None]
        Vpl = (-D[:, None] * Wpl - np.eye(n))[gidx] / M[:, None]
        Vpm = (np.eye(n) - D[:, None] * Wpm)[gidx] / M[:, None]

        # Input stack for the fused operator: [y | p_l | eta+ | eta- | g | z].
        U = S + 3 * n + 2 * m
        self.u_pl = slice(S, S + n)
        self.u_ep = slice(S + n, S + n + m)
        self.u_em = slice(S + n + m, S + n + 2 * m)
        self.u_g = slice(S + n + 2 * m, S + 2 * n + 2 * m)
        self.u_z = slice(S + 2 * n + 2 * m, U)

        K = np.zeros((S, U))
        Kpm = np.zeros((S, n))
        k0 = np.zeros(S)
        eye_n = np.eye(n)
        eye_m = np.eye(m)

        # theta_e' = C^T omega
        K[self.sl_theta, :S] = C.T @ Wy
        K[self.sl_theta, self.u_pl] = C.T @ Wpl
        Kpm[self.sl_theta] = C.T @ Wpm
        # omega_g'
        K[self.sl_og, :S] = Vy
        K[self.sl_og, self.u_pl] = Vpl
        Kpm[self.sl_og] = Vpm
        # d' = -d + p_l + omega - g - z - mu
        K[self.sl_d, :S] = Wy
        K[self.sl_d.start + np.arange(n), self.sl_d.start + np.arange(n)] -= 1.0
        K[self.sl_d.start + np.arange(n), self.sl_mu.start + np.arange(n)] -= 1.0
        K[self.sl_d, self.u_pl] = Wpl + eye_n
        K[self.sl_d, self.u_g] = -eye_n
        K[self.sl_d, self.u_z] = -eye_n
        Kpm[self.sl_d] = Wpm
        # mu' = z
        K[self.sl_mu, self.u_z] = eye_n
        # phi' = -L(mu + z) + C(eta- - eta+)
        K[self.sl_phi, self.sl_mu] = -L
        K[self.sl_phi, self.u_z] = -L
        K[self.sl_phi, self.u_ep] = -C
        K[self.sl_phi, self.u_em] = C
        # varphi+' = -varphi+ + eta+ + C^T phi - theta_max
        K[self.sl_vp, self.sl_phi] = C.T
        K[self.sl_vp.start + np.arange(m), self.sl_vp.start + np.arange(m)] = -1.0
        K[self.sl_vp, self.u_ep] = eye_m
        k0[self.sl_vp] = -model.angle_upper
        # varphi-' = -varphi- + eta- + theta_min - C^T phi
        K[self.sl_vm, self.sl_phi] = -C.T
        K[self.sl_vm.start + np.arange(m), self.sl_vm.start + np.arange(m)] = -1.0
        K[self.sl_vm, self.u_em] = eye_m
        k0[self.sl_vm] = model.angle_lower

        # Global controller time scale.
        eps = self.config.epsilon
        if eps != 1.0:
            ctrl_rows = slice(self.sl_d.start, S)
            K[ctrl_rows] *= eps
            Kpm[ctrl_rows] *= eps
            k0[ctrl_rows] *= eps

        self.K = K
        self.Kpm = Kpm
        self.k0 = k0
        self._Wy, self._Wpl, self._Wpm = Wy, Wpl, Wpm
        self._Vy, self._Vpl, self._Vpm = Vy, Vpl, Vpm
        self._Cw = Cw
        self._D = D
        self._M = M
        self._gidx = gidx
        self._u = np.empty(U)

    # -- state packing ------------------------------------------------------

    def pack(self, plant: PlantState, ctrl: ControllerState) -> np.ndarray:
        return np.concatenate([plant.theta_e, plant.omega_g, ctrl.pack()])

    def unpack(self, y: np.ndarray) -> tuple[PlantState, ControllerState]:
        plant = PlantState(theta_e=y[self.sl_theta].copy(), omega_g=y[self.sl_og].copy())
        ctrl = ControllerState(
            d=y[self.sl_d].copy(),
            mu=y[self.sl_mu].copy(),
            phi=y[self.sl_phi].copy(),
            varphi_plus=y[self.sl_vp].copy(),
            varphi_minus=y[self.sl_vm].copy(),
        )
        return plant, ctrl

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.dim)

    # -- right-hand side ----------------------------------------------------

    def feedthrough(self, p_m: np.ndarray) -> np.ndarray:
        """Constant part of the RHS for a fixed p_m segment."""
        return self.Kpm @ p_m + self.k0

    def _signals(self, y: np.ndarray, p_m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        p_l = np.clip(y[self.sl_d], self.box_lower, self.box_upper)
        eta_p = np.maximum(y[self.sl_vp], 0.0)
        eta_m = np.maximum(y[self.sl_vm], 0.0)
        if self.config.mismatch == "model":
            mis = p_l - p_m
        else:
            # Measurement path: rebuild p_l - p_m from frequency, generator
            # acceleration and line flows (exact on the linear plant).
            omega = self._Wy @ y + self._Wpl @ p_l + self._Wpm @ p_m
            dog = self._Vy @ y + self._Vpl @ p_l + self._Vpm @ p_m
            mis = -self._D * omega - self._Cw @ y[self.sl_theta]
            mis[self._gidx] -= self._M * dog
        z = mis + self.L @ y[self.sl_phi]
        return p_l, eta_p, eta_m, z

    def rhs(self, y: np.ndarray, p_m: np.ndarray, aff: np.ndarray | None = None) -> np.ndarray:
        """Packed derivative dy/dt."""
        if aff is None:
            aff = self.feedthrough(p_m)
        p_l, eta_p, eta_m, z = self._signals(y, p_m)
        u = self._u
        u[: self.dim] = y
        u[self.u_pl] = p_l
        u[self.u_ep] = eta_p
        u[self.u_em] = eta_m
        u[self.u_g] = self.batch.select(p_l, self.config.selection)
        u[self.u_z] = z
        return self.K @ u + aff

    def rk4(self, y: np.ndarray, p_m: np.ndarray, dt: float, aff: np.ndarray, k1: np.ndarray | None = None) -> np.ndarray:
        if k1 is None:
            k1 = self.rhs(y, p_m, aff)
        k2 = self.rhs(y + (0.5 * dt) * k1, p_m, aff)
        k3 = self.rhs(y + (0.5 * dt) * k2, p_m, aff)
        k4 = self.rhs(y + dt * k3, p_m, aff)
        return y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)

    # -- observation --------------------------------------------------------

    def observe(self, y: np.ndarray, p_m: np.ndarray) -> dict:
        """Logged signals at a state: omega, outputs, flows, running cost."""
        p_l, eta_p, eta_m, z = self._signals(y, p_m)
        omega = self._Wy @ y + self._Wpl @ p_l + self._Wpm @ p_m
        flows = self.B * y[self.sl_theta]
        cost = float(self.batch.value(p_l).sum())
        return {"omega": omega, "p_l": p_l, "eta_plus": eta_p, "eta_minus": eta_m, "z": z, "flows": flows, "cost": cost}


def step(
    model: NetworkModel,
    plant: PlantState,
    ctrl: ControllerState,
    p_m: np.ndarray,
    dt: float,
    config: ControllerConfig | None = None,
) -> tuple[PlantState, ControllerState]:
    """One RK4 step of the coupled system; projections applied inside stages."""
    if not dt > 0:
        raise ValidationError("step size dt must be positive")
    loop = ClosedLoop(model, config)
    y = loop.pack(plant, ctrl)
    p_m = np.asarray(p_m, dtype=float)
    y_next = loop.rk4(y, p_m, dt, loop.feedthrough(p_m))
    if not np.all(np.isfinite(y_next)):
        raise NumericalError("non-finite state after one integration step")
    return loop.unpack(y_next)


@dataclass
class TrajectoryLog:
    """Uniformly decimated record of a closed-loop run."""

    times: np.ndarray
    theta_e: np.ndarray
    omega: np.ndarray
    d: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    varphi_plus: np.ndarray
    varphi_minus: np.ndarray
    p_l: np.ndarray
    eta_plus: np.ndarray
    eta_minus: np.ndarray
    flows: np.ndarray
    cost: np.ndarray
    lyapunov: np.ndarray
    p_m_final: np.ndarray

    def final_plant(self, model: NetworkModel) -> PlantState:
        return PlantState(theta_e=self.theta_e[-1].copy(), omega_g=self.omega[-1][model.generator_index].copy())

    def final_controller(self) -> ControllerState:
        return ControllerState(
            d=self.d[-1].copy(),
            mu=self.mu[-1].copy(),
            phi=self.phi[-1].copy(),
            varphi_plus=self.varphi_plus[-1].copy(),
            varphi_minus=self.varphi_minus[-1].copy(),
        )

    def to_csv(self, path: str | Path) -> None:
        n = self.omega.shape[1]
        m = self.theta_e.shape[1]
        cols = ["t"]
        cols += [f"theta_e[{k}]" for k in range(m)]
        cols += [f"omega[{j}]" for j in range(n)]
        cols += [f"d[{j}]" for j in range(n)]
        cols += [f"mu[{j}]" for j in range(n)]
        cols += [f"phi[{j}]" for j in range(n)]
        cols += [f"varphi_plus[{k}]" for k in range(m)]
        cols += [f"varphi_minus[{k}]" for k in range(m)]
        cols += [f"p_l[{j}]" for j in range(n)]
        cols += [f"eta_plus[{k}]" for k in range(m)]
        cols += [f"eta_minus[{k}]" for k in range(m)]
        cols += [f"flow[{k}]" for k in range(m)]
        cols += ["V", "cost"]
        data = np.column_stack(
            [
                self.times,
                self.theta_e,
                self.omega,
                self.d,
                self.mu,
                self.phi,
                self.varphi_plus,
                self.varphi_minus,
                self.p_l,
                self.eta_plus,
                self.eta_minus,
                self.flows,
                self.lyapunov,
                self.cost,
            ]
        )
        np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")


def _initial_states(scenario: Scenario, model: NetworkModel) -> tuple[PlantState, ControllerState]:
    plant = load_plant_state(scenario.init_plant, model) if scenario.init_plant else PlantState.zero(model)
    ctrl = init_controller(model, scenario.init_controller)
    ctrl.validate(model)
    plant.validate(model)
    return plant, ctrl


def run(scenario: Scenario, model: NetworkModel | None = None) -> TrajectoryLog:
    """Integrate a scenario from t=0 to t_end, logging at the configured decimation."""
    if model is None:
        model = scenario.load_model()
    else:
        for ev in scenario.events:
            if not 0 <= ev.bus < model.n:
                raise ValidationError(f"event references unknown bus {ev.bus}")
    loop = ClosedLoop(model, scenario.config)
    plant, ctrl = _initial_states(scenario, model)
    y = loop.pack(plant, ctrl)
    dt = scenario.dt
    n_steps = int(round(scenario.t_end / dt))

    events_at: dict[int, list[Event]] = {}
    for ev in scenario.events:
        k = min(max(int(round(ev.time / dt)), 0), n_steps)
        events_at.setdefault(k, []).append(ev)

    dec = scenario.log_decimation
    record_steps = [k for k in range(n_steps + 1) if k % dec == 0 or k == n_steps]
    n_rec = len(record_steps)
    n, m = model.n, model.m
    out = {
        "times": np.empty(n_rec),
        "theta_e": np.empty((n_rec, m)),
        "omega": np.empty((n_rec, n)),
        "d": np.empty((n_rec, n)),
        "mu": np.empty((n_rec, n)),
        "phi": np.empty((n_rec, n)),
        "varphi_plus": np.empty((n_rec, m)),
        "varphi_minus": np.empty((n_rec, m)),
        "p_l": np.empty((n_rec, n)),
        "eta_plus": np.empty((n_rec, m)),
        "eta_minus": np.empty((n_rec, m)),
        "flows": np.empty((n_rec, m)),
        "cost": np.empty(n_rec),
    }

    p_m = np.zeros(n)
    aff = loop.feedthrough(p_m)
    rec = 0
    for k in range(n_steps + 1):
        if k in events_at:
            for ev in events_at[k]:
                p_m[ev.bus] += ev.delta_p_m
            aff = loop.feedthrough(p_m)
        if k % dec == 0 or k == n_steps:
            if not np.all(np.isfinite(y)):
                raise NumericalError(f"non-finite state at t={k * dt:g}s")
            obs = loop.observe(y, p_m)
            out["times"][rec] = k * dt
            out["theta_e"][rec] = y[loop.sl_theta]
            out["omega"][rec] = obs["omega"]
            out["d"][rec] = y[loop.sl_d]
            out["mu"][rec] = y[loop.sl_mu]
            out["phi"][rec] = y[loop.sl_phi]
            out["varphi_plus"][rec] = y[loop.sl_vp]
            out["varphi_minus"][rec] = y[loop.sl_vm]
            out["p_l"][rec] = obs["p_l"]
            out["eta_plus"][rec] = obs["eta_plus"]
            out["eta_minus"][rec] = obs["eta_minus"]
            out["flows"][rec] = obs["flows"]
            out["cost"][rec] = obs["cost"]
            rec += 1
        if k < n_steps:
            y = loop.rk4(y, p_m, dt, aff)

    return TrajectoryLog(lyapunov=np.full(n_rec, np.nan), p_m_final=p_m, **out)


@dataclass
class SettleResult:
    """Outcome of settling: final states, elapsed simulated time, convergence flag."""

    plant: PlantState
    ctrl: ControllerState
    t: float
    converged: bool
    residual: float

    @property
    def timed_out(self) -> bool:
        return not self.converged


def settle(
    model: NetworkModel,
    p_m: np.ndarray,
    tol: float = 1e-7,
    t_max: float = 600.0,
    plant: PlantState | None = None,
    ctrl: ControllerState | None = None,
    config: ControllerConfig | None = None,
    dt: float = 1e-3,
) -> SettleResult:
    """Integrate under constant p_m until the full state derivative is below tol.

    A timeout is reported via converged=False, not an exception: slow
    convergence is a finding, not a crash.
    """
    if not tol > 0:
        raise ValidationError("settle tolerance must be positive")
    loop = ClosedLoop(model, config)
    plant = plant or PlantState.zero(model)
    ctrl = ctrl or init_controller(model)
    y = loop.pack(plant, ctrl)
    p_m = np.asarray(p_m, dtype=float)
    aff = loop.feedthrough(p_m)
    n_steps = int(np.ceil(t_max / dt))
    t = 0.0
    residual = np.inf
    for k in range(n_steps + 1):
        k1 = loop.rhs(y, p_m, aff)
        residual = float(np.max(np.abs(k1)))
        if not np.isfinite(residual):
            raise NumericalError(f"non-finite state while settling at t={t:g}s")
        if residual < tol:
            plant_f, ctrl_f = loop.unpack(y)
            return SettleResult(plant=plant_f, ctrl=ctrl_f, t=t, converged=True, residual=residual)
        if k == n_steps:
            break
        y = loop.rk4(y, p_m, dt, aff, k1=k1)
        t = (k + 1) * dt
    plant_f, ctrl_f = loop.unpack(y)
    return SettleResult(plant=plant_f, ctrl=ctrl_f, t=t, converged=False, residual=residual)
