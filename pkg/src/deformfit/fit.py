"""Template-to-target fitting: Adam on control-point offsets through the
deformation layer, minimizing a point-set loss plus regularizers."""

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .ffd import apply_field, backprop_offsets, compute_weights
from .metrics import SizeMismatchError, chamfer_grad, emd_exact, emd_fixed_correspondence
from .regularizers import RegularizerWeights, lattice_smoothness, offset_l1

LOSS_KINDS = ("chamfer", "emd_fixed", "emd_true")
TRACE_HEADER = "iter,total,data,reg_l1,reg_smooth,grad_norm"

# emd_true recomputes an exact assignment every iteration; O(n^3) per step.
EMD_TRUE_MAX_POINTS = 256


class ConfigError(ValueError):
    pass


class FitDivergedError(RuntimeError):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class FitConfig:
    loss: str = "chamfer"
    iterations: int = 2000
    lr_initial: float = 5e-4
    lr_final: float = 5e-5
    lr_drop_iteration: int = 1500
    adam_beta1: float = 0.95
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    lambda_smooth: float = 0.05
    lambda_l1: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind: {self.loss!r}")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if not (self.lr_initial > 0 and self.lr_final > 0):
            raise ConfigError("learning rates must be positive")
        if self.lr_final > self.lr_initial:
            raise ConfigError("lr_final must not exceed lr_initial")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ConfigError("adam_epsilon must be positive")

    @property
    def regularizer_weights(self):
        return RegularizerWeights(lambda_smooth=self.lambda_smooth, lambda_l1=self.lambda_l1)


def parse_config(text, base=None):
    """Parse flat 'key=value' lines into a FitConfig; unknown keys are errors."""
    cfg = base or FitConfig()
    types = {f.name: type(getattr(cfg, f.name)) for f in fields(FitConfig)}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"unknown config key: {key!r}")
        try:
            updates[key] = value if types[key] is str else types[key](value)
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
    return replace(cfg, **updates)


def load_config(path, base=None):
    with open(path) as fh:
        return parse_config(fh.read(), base=base)


def write_config(path, cfg: FitConfig):
    with open(path, "w") as fh:
        for f in fields(FitConfig):
            fh.write(f"{f.name}={getattr(cfg, f.name)}\n")


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros(cls, shape):
        return cls(first_moment=np.zeros(shape), second_moment=np.zeros(shape))


def adam_step(state: AdamState, gradients, lr, beta1=0.95, beta2=0.999, epsilon=1e-8):
    """One bias-corrected Adam update; returns the new state and the offset delta."""
    g = np.asarray(gradients, dtype=float)
    if g.shape != state.first_moment.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.first_moment.shape}")
    t = state.step_count + 1
    m = beta1 * state.first_moment + (1.0 - beta1) * g
    v = beta2 * state.second_moment + (1.0 - beta2) * np.square(g)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    delta = -lr * m_hat / (np.sqrt(v_hat) + epsilon)
    return AdamState(first_moment=m, second_moment=v, step_count=t), delta


@dataclass
class FitTrace:
    """Per-iteration (iteration, total, data, reg_l1, reg_smooth, grad_norm)."""

    records: list = field(default_factory=list)

    def append(self, iteration, total, data, reg_l1, reg_smooth, grad_norm):
        self.records.append((iteration, total, data, reg_l1, reg_smooth, grad_norm))

    @property
    def totals(self):
        return np.array([r[1] for r in self.records])

    @property
    def data_losses(self):
        return np.array([r[2] for r in self.records])

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(TRACE_HEADER + "\n")
            for it, total, data, r1, rs, gn in self.records:
                fh.write(f"{it},{total:.9g},{data:.9g},{r1:.9g},{rs:.9g},{gn:.9g}\n")


def total_loss(template, offsets, target, lattice, weights: RegularizerWeights,
               loss_kind="chamfer", frozen_assignment=None, weight_tensor=None):
    """Data loss of the deformed template against the target plus weighted
    regularizers; returns (total, per-offset gradients, term breakdown)."""
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind: {loss_kind!r}")
    wt = weight_tensor if weight_tensor is not None else compute_weights(lattice, template)
    offsets = np.asarray(offsets, dtype=float)
    deformed = apply_field(wt, template, offsets)

    if loss_kind == "chamfer":
        data, point_grads = chamfer_grad(deformed, target)
    elif loss_kind == "emd_fixed":
        if frozen_assignment is None:
            raise ValueError("emd_fixed requires a frozen assignment")
        data, point_grads = emd_fixed_correspondence(deformed, target, frozen_assignment)
    else:  # emd_true
        if len(deformed) > EMD_TRUE_MAX_POINTS:
            raise ValueError(f"emd_true limited to {EMD_TRUE_MAX_POINTS} points")
        assignment = emd_exact(deformed, target)
        data, point_grads = emd_fixed_correspondence(deformed, target, assignment)

    reg_l1, l1_grads = offset_l1(template, deformed)
    reg_smooth, smooth_grads = lattice_smoothness(offsets, lattice)

    total = data + weights.lambda_l1 * reg_l1 + weights.lambda_smooth * reg_smooth
    grads = backprop_offsets(wt, point_grads + weights.lambda_l1 * l1_grads)
    grads += weights.lambda_smooth * smooth_grads
    return total, grads, {"data": data, "reg_l1": reg_l1, "reg_smooth": reg_smooth}


def fit_deformation(template, target, lattice, config: FitConfig):
    """Optimize offsets from zero with Adam; returns (offsets, trace).

    The learning rate drops from lr_initial to lr_final at lr_drop_iteration.
    For the emd_fixed loss the correspondence is computed once on the
    undeformed template and frozen for the whole run.
    """
    wt = compute_weights(lattice, template)
    frozen = None
    if config.loss == "emd_fixed":
        if len(template) != len(target):
            raise SizeMismatchError("emd_fixed requires equal point counts; resample first")
        frozen = emd_exact(template, target)

    offsets = np.zeros((lattice.num_controls, 3))
    state = AdamState.zeros(offsets.shape)
    trace = FitTrace()
    reg_weights = config.regularizer_weights
    for it in range(config.iterations):
        lr = config.lr_initial if it < config.lr_drop_iteration else config.lr_final
        total, grads, parts = total_loss(
            template, offsets, target, lattice, reg_weights,
            loss_kind=config.loss, frozen_assignment=frozen, weight_tensor=wt,
        )
        grad_norm = float(np.linalg.norm(grads))
        trace.append(it, total, parts["data"], parts["reg_l1"], parts["reg_smooth"], grad_norm)
        if not np.isfinite(total):
            raise FitDivergedError(f"non-finite loss at iteration {it}", trace)
        state, delta = adam_step(state, grads, lr, beta1=config.adam_beta1,
                                 beta2=config.adam_beta2, epsilon=config.adam_epsilon)
        offsets = offsets + delta
    return offsets, trace
