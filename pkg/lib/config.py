"""
Design specifications and their flat key = value config files.

A config file holds one `key = value` per line with `#` comments. Keys are
DesignSpec field names; list values are comma separated. Shipped presets
live in presets/ at the repository root and can be named instead of a path.
"""

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from lib.adapt import AdaptParams
from lib.fem import MaterialLaw
from lib.filters import FilterParams

logger = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).resolve().parent.parent / "presets"
MODES = ("adaptive", "baseline")
PLANES = ("stress", "strain")

DEFAULT_OUT_DIR = "runs/latest"
DEFAULT_RUNS_DIR = "runs"

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


@dataclass
class DesignSpec:
    """Every input of a design run. Defaults follow the reference setup."""

    name: str = "custom"
    c_lower: list[float] = field(default_factory=lambda: [0.05, 0.055, 1.0, 0.01, 0.0])
    c_upper: list[float] = field(default_factory=lambda: [0.08, 0.08, 2.0, 1.0, 0.58])

    # material and SIMP
    rho_min: float = 1e-4
    p: float = 4.0
    s: float = 4.0
    E: float = 1.0
    nu: float = 0.3
    k11: float = 1.0
    k22: float = 1.0
    plane: str = "stress"

    # outer loop and optimizer
    ctol: float = 0.01
    kmax: int = 100
    kfmax: int = 25
    tol: float = 1e-5
    topt: float = 1e-5
    it_first: int = 100
    it_rest: int = 10
    it_baseline: int = 100

    # filters
    tau: float = 0.02
    beta: float = 5.0
    eta: float = 0.5

    # adaptation
    hybrid: bool = True
    rho_th: float = 0.9
    h_iso: float = 0.03
    max_elements: int = 6000
    aspect_ratio_max: float = 100.0
    h_min: float = 1e-3
    h_max: float = 0.5
    adapt_max_iter: int = 20

    # meshes, seeding, mode
    n: int = 30
    baseline_n: int = 50
    seed: int = 0
    mode: str = "adaptive"

    # verification
    verify_threshold: float = 0.75
    verify_h: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            ValueError: If any field is out of range
        """
        lower, upper = np.asarray(self.c_lower, float), np.asarray(self.c_upper, float)
        if lower.shape != (5,) or upper.shape != (5,):
            raise ValueError("c_lower and c_upper need exactly 5 entries each")
        if np.any(lower > upper):
            raise ValueError(f"Constraint bounds not ordered: {self.c_lower} > {self.c_upper}")
        if not 0.0 < self.rho_min < 1.0:
            raise ValueError(f"rho_min must lie in (0, 1), got {self.rho_min}")
        if self.kmax < 1:
            raise ValueError(f"kmax must be >= 1, got {self.kmax}")
        if self.kfmax < 0:
            raise ValueError(f"kfmax must be >= 0, got {self.kfmax}")
        if self.n < 1 or self.baseline_n < 1:
            raise ValueError(f"Mesh subdivisions must be >= 1, got n={self.n}")
        if min(self.it_first, self.it_rest, self.it_baseline) < 1:
            raise ValueError("Optimizer iteration counts must be >= 1")
        if self.tol <= 0 or self.topt <= 0 or self.ctol < 0:
            raise ValueError("tol and topt must be positive, ctol non-negative")
        if self.mode not in MODES:
            raise ValueError(f"Unknown mode {self.mode!r} (expected one of {MODES})")
        if self.plane not in PLANES:
            raise ValueError(f"Unknown plane {self.plane!r} (expected one of {PLANES})")
        if not 0.0 < self.h_min < self.h_max:
            raise ValueError(f"Need 0 < h_min < h_max, got {self.h_min}, {self.h_max}")
        if self.max_elements < 2 or self.aspect_ratio_max < 1:
            raise ValueError("max_elements must be >= 2 and aspect_ratio_max >= 1")
        if not 0.0 < self.verify_threshold < 1.0 or not 0.0 < self.verify_h <= 0.5:
            raise ValueError("verify_threshold must lie in (0, 1) and verify_h in (0, 0.5]")
        # the parameter objects validate their own ranges
        self.law()
        self.filter_params()
        self.adapt_params()

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.c_lower, dtype=float)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.c_upper, dtype=float)

    def law(self) -> MaterialLaw:
        return MaterialLaw(E=self.E, nu=self.nu, k11=self.k11, k22=self.k22, p=self.p, s=self.s)

    def filter_params(self) -> FilterParams:
        return FilterParams(tau=self.tau, beta=self.beta, eta=self.eta)

    def adapt_params(self) -> AdaptParams:
        return AdaptParams(
            hybrid=self.hybrid,
            rho_th=self.rho_th,
            h_iso=self.h_iso,
            max_iter=self.adapt_max_iter,
            rho_min=self.rho_min,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def _convert(name: str, raw: str, default):
    if isinstance(default, bool):
        value = raw.strip().lower()
        if value in _TRUE:
            return True
        if value in _FALSE:
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, list):
        return [float(v) for v in raw.split(",") if v.strip()]
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_spec(text: str, **overrides) -> DesignSpec:
    """
    Parse config text into a DesignSpec.

    Args:
        text: Config file contents
        **overrides: Field values applied after the file (e.g. seed, mode)

    Raises:
        ValueError: On unknown keys, malformed lines or invalid values
    """
    defaults = DesignSpec()
    known = {f.name: getattr(defaults, f.name) for f in fields(DesignSpec)}
    values = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"Line {number}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ValueError(f"Line {number}: unknown key {key!r}")
        try:
            values[key] = _convert(key, raw, known[key])
        except ValueError as e:
            raise ValueError(f"Line {number}: bad value for {key}: {e}") from e

    for key, value in overrides.items():
        if key not in known:
            raise ValueError(f"Unknown override {key!r}")
        if value is not None:
            values[key] = value
    return DesignSpec(**values)


def list_presets() -> list[str]:
    """Names of the shipped presets."""
    return sorted(p.stem for p in PRESET_DIR.glob("*.cfg"))


def resolve_config(path_or_preset: str) -> Path:
    """
    Map a preset name or a file path to a config file.

    Raises:
        ValueError: If neither a file nor a preset of that name exists
    """
    path = Path(path_or_preset)
    if path.is_file():
        return path
    preset = PRESET_DIR / f"{path_or_preset}.cfg"
    if preset.is_file():
        return preset
    raise ValueError(
        f"No config file or preset named {path_or_preset!r} "
        f"(presets: {', '.join(list_presets())})"
    )


def load_spec(path_or_preset: str, **overrides) -> DesignSpec:
    """Load a DesignSpec from a config file or preset name."""
    path = resolve_config(path_or_preset)
    logger.debug(f"Loading design spec from {path}")
    return parse_spec(path.read_text(), **overrides)


def dump_spec(spec: DesignSpec) -> str:
    """Config text that parses back to spec."""
    lines = []
    for key, value in spec.to_dict().items():
        if isinstance(value, list):
            value = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def out_dir() -> str:
    return os.environ.get("CELLDESIGN_OUT_DIR", DEFAULT_OUT_DIR)


def runs_dir() -> str:
    return os.environ.get("CELLDESIGN_RUNS_DIR", DEFAULT_RUNS_DIR)
