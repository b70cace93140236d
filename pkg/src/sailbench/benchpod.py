"""Benchpods: isolated execution of one scenario end to end.

A pod owns everything one scenario needs: generated datasets, the resolved
converter chains, a solver seeded from (run seed, scenario id), and a clock.
It replays the problem's event stream, routes training and test pairs to the
solver, folds losses through the tuple's metric, and emits measurement rows.
Nothing in here touches shared state, so pods can run on any lane in any
order without changing a single byte of output.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import datagen, evalrun, metrics
from .evalrun import EvalContext, GradientRef, PredictRef, full_run
from .planner import Scenario, resolve_model_compat
from .rng import derive_seed
from .simulator import velocity_verlet
from .solvers import (
    ShapeMismatch,
    SolverError,
    TrainingDiverged,
    UnsupportedGradient,
    make_solver,
)
from .typesys import apply_chain

CALIBRATION = 10.0


class PodError(Exception):
    pass


class ProvisionError(PodError):
    """The scenario cannot be materialized into a runnable pod."""


# -------------------------------------------------------------------- clocks


class SimulatedClock:
    """Deterministic clock: time is charged flops over hardware peak."""

    def __init__(self, peak_flops: float, calibration: float = CALIBRATION):
        self.peak_flops = peak_flops
        self.calibration = calibration
        self.seconds = 0.0

    def charge(self, flops: float) -> None:
        self.seconds += flops / self.peak_flops * self.calibration

    def elapsed_ms(self) -> float:
        return round(self.seconds * 1000.0, 6)


class NativeClock:
    def __init__(self):
        self.start = time.perf_counter()

    def charge(self, flops: float) -> None:
        pass

    def elapsed_ms(self) -> float:
        return round((time.perf_counter() - self.start) * 1000.0, 6)


# ------------------------------------------------------------------ pod spec


@dataclass
class PodSpec:
    scenario: Scenario
    problem: object  # ModuleRecord
    model: object
    hardware_meta: dict
    software: str
    chain_in: list  # ConverterEdge
    chain_out: list
    solver_kind: str
    hp: dict
    epochs: int
    seed: int  # derived per scenario
    data_seed: int  # shared across scenarios of one run
    mode: str = "simulated"
    problem_meta: object = None
    tape: object = None
    metric_name: str = ""
    metric_builtin: str = ""
    metric_params: dict = field(default_factory=dict)


def provision(scenario: Scenario, repo, run_seed: int, mode: str = "simulated",
              max_chain: int = 3) -> "Pod":
    """Resolve records, chains, and seeds into a ready-to-run pod."""
    problem = repo.by_id(scenario.modules["problem"])
    model = repo.by_id(scenario.modules["model"])
    hardware = repo.by_id(scenario.modules["hardware"])
    software = repo.by_id(scenario.modules["software"])
    if None in (problem, model, hardware, software):
        raise ProvisionError(f"scenario {scenario.sid} references unknown modules")

    ctx = EvalContext(bindings=dict(scenario.hp))
    try:
        problem_meta, tape = evalrun.dry_run(problem.decl, ctx)
    except evalrun.EvalError as e:
        raise ProvisionError(f"problem {problem.name} rejected bindings: {e}")
    try:
        model_meta, _ = evalrun.dry_run(model.decl)
    except evalrun.EvalError as e:
        raise ProvisionError(f"model {model.name} failed dry run: {e}")

    chain_in, chain_out, reason = resolve_model_compat(
        problem_meta, model_meta, repo.graph, max_chain
    )
    if chain_in is None:
        raise ProvisionError(f"{model.name} no longer fits {problem.name}: {reason}")

    solver_kind = str(model_meta.meta.get("solver", ""))
    if not solver_kind:
        raise ProvisionError(f"model {model.name} names no solver")

    return Pod(
        PodSpec(
            scenario=scenario,
            problem=problem,
            model=model,
            hardware_meta=dict(hardware.meta.meta),
            software=software.name,
            chain_in=chain_in,
            chain_out=chain_out,
            solver_kind=solver_kind,
            hp=dict(scenario.hp),
            epochs=int(model_meta.meta.get("epochs", 1)),
            seed=derive_seed(run_seed, scenario.sid),
            data_seed=derive_seed(run_seed, "data"),
            mode=mode,
            problem_meta=problem_meta,
            tape=tape,
            metric_name=scenario.names["metric"],
            metric_builtin=scenario.metric_builtin,
            metric_params=dict(scenario.metric_params),
        )
    )


# ------------------------------------------------------------------- the pod


class Pod:
    def __init__(self, spec: PodSpec, solver_factory=make_solver):
        self.spec = spec
        self.solver_factory = solver_factory
        self.rows: list = []
        self.clock = self._make_clock()
        stats = spec.problem_meta.data_stats
        self.d_in = 8 if spec.solver_kind == "perm_sum" \
            else max(1, int(stats.get("input_width", 1)))
        self.classes = max(1, int(stats.get("classes", 1)))
        self.main_task = "classify" if self.classes > 1 else "predict"

    def _make_clock(self):
        if self.spec.mode == "native":
            return NativeClock()
        peak = float(self.spec.hardware_meta.get("peak_flops", 1e9))
        return SimulatedClock(peak)

    # -- data ----------------------------------------------------------

    def _generate_data(self) -> dict:
        data: dict = {}
        for node in self.spec.tape.nodes:
            if not node.prim.startswith("Data.") or node.prim == "Data.Input":
                continue
            name = node.prim.split(".", 1)[1]
            args = tuple(a["value"] for a in node.args if a["kind"] == "lit")
            try:
                data[node.id] = datagen.generate(name, args, self.spec.data_seed)
            except datagen.GeneratorError as e:
                raise PodError(f"source {name}: {e}")
        return data

    # -- run -----------------------------------------------------------

    def run(self) -> list:
        spec = self.spec
        data = self._generate_data()
        ctx = EvalContext(bindings=dict(spec.hp))
        buckets = self._route_events(
            full_run(spec.problem.decl, ctx, data, tape=spec.tape)
        )

        self._open_solvers: list = []
        try:
            state = None
            if "pretrain" in spec.scenario.tasks and buckets["pretrain"]:
                state = self._pretrain_phase(buckets["pretrain"])
            solver = self._train_phase(buckets["train"], state)
            self._test_phase(solver, buckets["test"])
            self._fixture_phase(solver, buckets["fixtures"])
        finally:
            for s in getattr(self, "_open_solvers", []):
                if hasattr(s, "close"):
                    s.close()
        return self.rows

    def _route_events(self, events) -> dict:
        buckets = {"pretrain": [], "train": [], "test": [], "fixtures": []}
        for ev in events:
            if ev.prim == "Fail.When":
                raise PodError(f"rejected at runtime: {ev.args[0]}")
            if ev.prim == "Train.Pretrain":
                buckets["pretrain"].append((ev.args[0], ev.args[1]))
            elif ev.prim in ("Train.Classify", "Train.Predict"):
                buckets["train"].append((ev.args[0], ev.args[1]))
            elif ev.prim == "Test.Compare":
                buckets["test"].append((ev.args[0], ev.args[1]))
            elif ev.prim.startswith("Test."):
                buckets["fixtures"].append(ev)
            # Gradient.Input events mark differentiation points; the fixture
            # that consumes the GradientRef does the actual work.
        return buckets

    # -- phases --------------------------------------------------------------

    def _convert_x(self, raw):
        x = apply_chain(self.spec.chain_in, raw)
        if isinstance(x, list):
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64)

    def _stack(self, pairs, task: str):
        xs = [self._convert_x(x) for x, _ in pairs]
        if self.spec.solver_kind == "perm_sum":
            x_arr = xs  # ragged by design: one embed matrix per sample
        else:
            x_arr = np.stack(xs) if xs else np.zeros((0, self.d_in))
        if task == "classify":
            y_arr = np.array([int(y) for _, y in pairs], dtype=int)
        elif task == "pretrain":
            y_arr = np.stack([np.asarray(y, dtype=np.float64).reshape(-1)
                              for _, y in pairs])
        else:
            y_arr = np.array([float(y) for _, y in pairs], dtype=np.float64)
        return x_arr, y_arr

    def _fps(self) -> float:
        from .orchestrator import layer_shapes

        shapes = layer_shapes(self.spec.solver_kind, self.d_in,
                              self.classes if self.main_task == "classify" else 1,
                              self.spec.hp, {})
        return sum(2.0 * a * b for a, b in shapes) or 2.0 * self.d_in

    def _emit(self, phase: str, it: int, metric: str, value: float) -> None:
        self.rows.append(
            metrics.MeasurementRecord(
                sid=self.spec.scenario.sid,
                phase=phase,
                it=it,
                metric=metric,
                v=float(value),
                wall_ms=self.clock.elapsed_ms(),
                seed=self.spec.seed,
            )
        )

    def _pretrain_phase(self, pairs) -> dict:
        spec = self.spec
        x, y = self._stack(pairs, "pretrain")
        d_out = y.shape[1]
        solver = self._make_solver("pretrain", d_out, phase="pretrain")
        fps = self._fps()
        for epoch in range(spec.epochs):
            loss = self._fit(solver, x, y, epoch)
            self.clock.charge(fps * len(pairs))
            self._emit("pretrain", epoch, "pretrain_loss", loss)
        return solver.save()

    def _train_phase(self, pairs, carried: dict | None):
        spec = self.spec
        d_out = self.classes if self.main_task == "classify" else 1
        solver = self._make_solver(self.main_task, d_out, phase="train")
        if carried is not None and hasattr(solver, "carry_hidden"):
            try:
                solver.carry_hidden(carried, derive_seed(spec.seed, "head"))
            except ShapeMismatch as e:
                raise PodError(f"weight carry failed: {e}")
        if not pairs:
            return solver
        x, y = self._stack(pairs, self.main_task)
        fps = self._fps()
        epochs = spec.epochs
        for epoch in range(epochs):
            loss = self._fit(solver, x, y, epoch)
            self.clock.charge(fps * len(pairs))
            self._emit("train", epoch, "train_loss", loss)
        return solver

    def _fit(self, solver, x, y, epoch: int) -> float:
        try:
            return solver.fit_epoch(x, y, epoch)
        except TrainingDiverged as e:
            raise PodError(str(e))

    def _test_phase(self, solver, pairs) -> None:
        if not pairs:
            return
        spec = self.spec
        x, y = self._stack(pairs, self.main_task)
        if spec.solver_kind == "knn":
            n_train = len(solver.x)
            self.clock.charge(2.0 * self.d_in * max(1, n_train) * len(pairs))
        else:
            self.clock.charge(self._fps() * len(pairs))
        losses = solver.per_sample_loss(x, y)

        fold = metrics.make_metric(spec.metric_builtin, spec.metric_params,
                                   clock=self.clock)
        for loss in losses:
            fold.step(float(loss))
        self._emit("test", 0, "test_loss", float(np.mean(losses)))
        value = fold.finalize()
        if value is not None:
            self._emit("test", 0, spec.metric_name, value)

    # -- trajectory fixture ------------------------------------------------

    def _fixture_phase(self, solver, fixtures) -> None:
        for ev in fixtures:
            if ev.prim != "Test.Trajectory":
                continue
            gref, ref = ev.args[0], ev.args[1]
            if not isinstance(gref, GradientRef):
                raise PodError("Test.Trajectory needs a Gradient.Input argument")
            try:
                rmsd = self._run_trajectory(solver, gref.input, np.asarray(ref))
            except UnsupportedGradient:
                continue  # solver cannot provide forces; fixture does not apply
            self._emit("fixture", 0, "traj_rmsd", rmsd)

    def _run_trajectory(self, solver, atoms, ref: np.ndarray) -> float:
        h = float(self.spec.hp.get("step_h", 0.01))
        steps = int(self.spec.hp.get("steps", 10))
        pos0 = np.array([a.pos for a in atoms], dtype=np.float64)
        vel0 = np.array([a.vel for a in atoms], dtype=np.float64)
        zs = [a.z for a in atoms]

        def force_fn(pos: np.ndarray) -> np.ndarray:
            return -self._energy_grad(solver, zs, pos, vel0)

        states = velocity_verlet(pos0, vel0, force_fn, h, steps)
        self.clock.charge(2.0 * self._fps() * steps)
        traj = np.concatenate([p.reshape(-1) for p, _ in states])
        if traj.shape != ref.reshape(-1).shape:
            raise PodError(
                f"trajectory shape {traj.shape} does not match reference "
                f"{ref.reshape(-1).shape}"
            )
        return float(np.sqrt(np.mean((traj - ref.reshape(-1)) ** 2)))

    def _energy_grad(self, solver, zs, pos: np.ndarray, vel: np.ndarray) -> np.ndarray:
        """d(model energy)/d(positions), pulled back through the input chain.

        Embeddings lay out [z, pos, vel, 0]; position sensitivities live in
        slots 1..3 of each per-atom gradient row.  Velocity features are held
        at their initial values during integration.
        """
        n = len(zs)
        embeds = np.zeros((n, 8), dtype=np.float64)
        for i in range(n):
            embeds[i, 0] = float(zs[i])
            embeds[i, 1:4] = pos[i]
            embeds[i, 4:7] = vel[i]
        if self.spec.solver_kind == "perm_sum":
            g = solver.grad_input(embeds)
        else:
            g = solver.grad_input(embeds.reshape(-1)).reshape(n, 8)
        return g[:, 1:4].copy()

    def _make_solver(self, task: str, d_out: int, phase: str):
        seed = derive_seed(self.spec.seed, phase)
        if self.spec.solver_kind == "external":
            from . import external

            binary = str(self.spec.model.meta.meta.get("binary", ""))
            try:
                cmd = external.resolve_plugin(binary)
                solver = external.ExternalSolver(
                    cmd, self.d_in, d_out, task, self.spec.hp, seed
                )
            except external.ProtocolError as e:
                raise ProvisionError(str(e))
            if not hasattr(self, "_open_solvers"):
                self._open_solvers = []
            self._open_solvers.append(solver)
            return solver
        try:
            return self.solver_factory(
                self.spec.solver_kind,
                self.d_in,
                d_out,
                task,
                self.spec.hp,
                seed,
            )
        except SolverError as e:
            raise ProvisionError(str(e))
