"""Correlation filter training in the Fourier domain.

A model is a bank of per-channel filters f (stored as spectra f_hat) fit
to a memory of feature samples x_j with decaying weights alpha_j, under a
spatial penalty that suppresses filter energy away from the target.  The
objective, with c = 1/(H*W) the Parseval factor, reads

    E(f) = c * sum_j alpha_j * || sum_d f_hat^d . x_hat_j^d - y_hat ||^2
         + c^3 * sum_d || w_hat (*) f_hat^d ||^2

where "." is per-bin multiplication and "(*)" circular convolution over
frequency.  The second term equals sum_d || w . f^d ||^2 for the spatial
mask w carried by the taps of w_hat; truncating w_hat to a small support
keeps the normal equations cheap while preserving that identity for the
effective (inverse-transformed) mask.

Setting the gradient to zero gives the linear system A f = b with

    A(f)^d = sum_j alpha_j conj(x_hat_j^d) (sum_e x_hat_j^e f_hat^e)
           + c^2 * Wh(W(f_hat^d))          (W = convolve by w_hat)
    b^d    = sum_j alpha_j conj(x_hat_j^d) y_hat

solved by conjugate gradients under the real inner product
Re<u, v> = sum Re(conj(u) v), warm-started across updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid
from .errors import ConfigError, InvalidInputError, NumericalError, ShapeError
from .training import SampleWeights


# ---------------------------------------------------------------------------
# spatial regularization


@dataclass(frozen=True)
class RegTaps:
    """Truncated spectrum of the spatial penalty mask.

    offsets: (K, 2) integer frequency offsets (wrap-signed).
    coeffs:  (K,) complex DFT coefficients of the mask at those offsets.
    shape:   the (H, W) grid the taps were built for.
    """

    offsets: np.ndarray
    coeffs: np.ndarray
    shape: tuple[int, int]

    def apply(self, spectrum: np.ndarray) -> np.ndarray:
        "Circular convolution of a (..., H, W) spectrum by w_hat."
        out = np.zeros_like(spectrum)
        for (di, dj), c in zip(self.offsets, self.coeffs):
            out += c * np.roll(spectrum, (di, dj), axis=(-2, -1))
        return out

    def apply_adjoint(self, spectrum: np.ndarray) -> np.ndarray:
        out = np.zeros_like(spectrum)
        for (di, dj), c in zip(self.offsets, self.coeffs):
            out += np.conj(c) * np.roll(spectrum, (-di, -dj), axis=(-2, -1))
        return out

    def effective_mask(self) -> np.ndarray:
        "The spatial mask actually enforced after truncation."
        full = np.zeros(self.shape, dtype=np.complex128)
        h, w = self.shape
        for (di, dj), c in zip(self.offsets, self.coeffs):
            full[di % h, dj % w] = c
        return np.fft.ifft2(full).real


def bowl_mask(shape: tuple[int, int], target_size: tuple[float, float],
              base: float = 1e-2, edge_factor: float = 10.0) -> np.ndarray:
    """Quadratic spatial penalty: small over the target, rising outside.

    w(t) = base + c1 * ((t1/a)^2 + (t2/b)^2) on wrap-signed cell
    coordinates, with c1 set so the largest grid value is
    edge_factor * base.
    """
    if base <= 0 or edge_factor < 1:
        raise ConfigError(f"bad mask parameters base={base}, "
                          f"edge_factor={edge_factor}")
    h, w = shape
    a, b = target_size
    t1 = grid.signed_index(np.arange(h), h)[:, None] / a
    t2 = grid.signed_index(np.arange(w), w)[None, :] / b
    q = t1 ** 2 + t2 ** 2
    qmax = q.max()
    if qmax == 0:
        return np.full(shape, base)
    return base + (edge_factor - 1.0) * base * q / qmax


def reg_taps(mask: np.ndarray, support: int = 5) -> RegTaps:
    "Truncate the mask spectrum to a centred support x support window."
    if support < 1 or support % 2 == 0:
        raise ConfigError(f"support must be odd and positive, got {support}")
    h, w = mask.shape
    if support > min(h, w):
        raise ConfigError(f"support {support} exceeds grid {mask.shape}")
    spectrum = np.fft.fft2(mask)
    r = support // 2
    offsets = []
    coeffs = []
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            offsets.append((di, dj))
            coeffs.append(spectrum[di % h, dj % w])
    return RegTaps(np.array(offsets), np.array(coeffs), (h, w))


# ---------------------------------------------------------------------------
# channel projection


@dataclass(frozen=True)
class ProjectionResult:
    matrix: np.ndarray                 # (raw_channels, out_channels)
    retained_energy_fraction: float
    rank_deficient: bool


def init_projection(channel_stacks, out_channels: int) -> ProjectionResult:
    """Orthonormal channel-reduction basis from sample second moments.

    channel_stacks: iterable of (D, H, W) arrays.  The basis consists of
    the leading eigenvectors of the uncentred channel covariance
    sum_pixels x x^T accumulated over all given samples.
    """
    second = None
    for stack in channel_stacks:
        d = stack.shape[0]
        flat = stack.reshape(d, -1)
        gram = flat @ flat.T
        second = gram if second is None else second + gram
    if second is None:
        raise InvalidInputError("need at least one sample for projection")
    d = second.shape[0]
    if not 1 <= out_channels <= d:
        raise ConfigError(
            f"out_channels must be in [1, {d}], got {out_channels}")
    eigvals, eigvecs = np.linalg.eigh(second)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    total = float(eigvals.sum())
    if total == 0.0:
        raise InvalidInputError("all feature channels are identically zero")
    retained = float(eigvals[:out_channels].sum()) / total
    tol = d * np.finfo(np.float64).eps * eigvals[0]
    deficient = int(np.sum(eigvals > tol)) < out_channels
    return ProjectionResult(eigvecs[:, :out_channels], retained, deficient)


def project_channels(channels: np.ndarray, matrix: np.ndarray | None) -> np.ndarray:
    if matrix is None:
        return channels
    if channels.shape[0] != matrix.shape[0]:
        raise ShapeError(f"projection expects {matrix.shape[0]} channels, "
                         f"got {channels.shape[0]}")
    return np.einsum("dc,dhw->chw", matrix, channels)


def sample_spectrum(channels: np.ndarray, matrix: np.ndarray | None = None) -> np.ndarray:
    "Project raw channels (optional) and transform to the Fourier domain."
    return np.fft.fft2(project_channels(channels, matrix), axes=(-2, -1))


# ---------------------------------------------------------------------------
# training


@dataclass
class CGReport:
    iterations_run: int
    converged: bool
    initial_loss: float
    final_loss: float
    loss_history: list = field(default_factory=list)
    relative_residual: float = float("nan")


def _rip(u: np.ndarray, v: np.ndarray) -> float:
    "Real inner product on complex coefficient arrays."
    return float(np.sum((np.conj(u) * v).real))


class FilterBank:
    """One model branch: filters, sample memory, weights, trainer."""

    def __init__(self, label: np.ndarray, taps: RegTaps, *,
                 learning_rate: float, max_samples: int,
                 cg_tolerance: float = 1e-6, name: str = ""):
        if label.shape != taps.shape:
            raise ShapeError(f"label grid {label.shape} does not match "
                             f"mask grid {taps.shape}")
        if max_samples < 1:
            raise ConfigError(f"max_samples must be >= 1, got {max_samples}")
        self.label_spectrum = np.fft.fft2(label)
        self.taps = taps
        self.memory: list[np.ndarray] = []
        self.weights = SampleWeights(learning_rate)
        self.max_samples = max_samples
        self.cg_tolerance = cg_tolerance
        self.name = name
        self.filters: np.ndarray | None = None

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.label_spectrum.shape

    def _check_sample(self, spectrum: np.ndarray) -> None:
        if spectrum.ndim != 3 or spectrum.shape[1:] != self.grid_shape:
            raise ShapeError(f"sample shape {spectrum.shape} does not match "
                             f"grid {self.grid_shape}")
        if self.memory and spectrum.shape[0] != self.memory[0].shape[0]:
            raise ShapeError("sample channel count changed mid-run")

    def set_initial_samples(self, spectra) -> None:
        spectra = list(spectra)
        if not spectra:
            raise InvalidInputError("need at least one initial sample")
        for s in spectra:
            self._check_sample(s)
        self.memory = [np.asarray(s, dtype=np.complex128) for s in spectra]
        self.weights.add_initial(len(spectra))
        if self.filters is None:
            self.filters = np.zeros_like(self.memory[0])

    def add_sample(self, spectrum: np.ndarray) -> None:
        self._check_sample(spectrum)
        self.memory.insert(0, np.asarray(spectrum, dtype=np.complex128))
        self.weights.add_sample()
        dropped = self.weights.trim(self.max_samples)
        if dropped:
            del self.memory[self.max_samples:]

    def _apply_operator(self, f: np.ndarray, alphas: np.ndarray) -> np.ndarray:
        out = np.zeros_like(f)
        for alpha, x in zip(alphas, self.memory):
            response = np.sum(x * f, axis=0)
            out += alpha * np.conj(x) * response[None]
        c = grid.parseval_factor(self.grid_shape)
        out += (c * c) * self.taps.apply_adjoint(self.taps.apply(f))
        return out

    def _rhs(self, alphas: np.ndarray) -> np.ndarray:
        b = np.zeros_like(self.memory[0])
        for alpha, x in zip(alphas, self.memory):
            b += alpha * np.conj(x) * self.label_spectrum[None]
        return b

    def loss(self, f: np.ndarray | None = None) -> float:
        "Objective value at the given (default: current) filters."
        if f is None:
            f = self.filters
        if f is None or not self.memory:
            raise InvalidInputError("bank has no samples or filters yet")
        alphas = self.weights.weights()
        c = grid.parseval_factor(self.grid_shape)
        data = 0.0
        for alpha, x in zip(alphas, self.memory):
            response = np.sum(x * f, axis=0)
            data += alpha * float(np.sum(np.abs(response - self.label_spectrum) ** 2))
        reg = float(np.sum(np.abs(self.taps.apply(f)) ** 2))
        return c * data + c ** 3 * reg

    def train(self, iterations: int, tolerance: float | None = None) -> CGReport:
        """Run conjugate-gradient steps on the normal equations.

        Warm-starts from the current filters.  Loss history is recovered
        from the tracked residual (A f = b - r), costing no extra
        operator applications.
        """
        if not self.memory:
            raise InvalidInputError("cannot train an empty bank")
        if iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {iterations}")
        tol = self.cg_tolerance if tolerance is None else tolerance
        alphas = self.weights.weights()
        c = grid.parseval_factor(self.grid_shape)
        label_energy = float(np.sum(np.abs(self.label_spectrum) ** 2))

        f = self.filters.copy()
        b = self._rhs(alphas)

        def loss_from_residual(fv, rv):
            # E/c = <f, Af> - 2<b, f> + ||y||^2 with Af = b - r
            return c * (label_energy - _rip(b, fv) - _rip(fv, rv))

        r = b - self._apply_operator(f, alphas)
        rs = _rip(r, r)
        b_norm = np.sqrt(_rip(b, b))
        history = [loss_from_residual(f, r)]
        report = CGReport(0, False, history[0], history[0], history)

        if b_norm == 0.0:
            report.converged = True
            report.relative_residual = 0.0
            self.filters = f
            return report

        p = r.copy()
        for it in range(iterations):
            if np.sqrt(rs) <= tol * b_norm:
                report.converged = True
                break
            ap = self._apply_operator(p, alphas)
            denom = _rip(p, ap)
            if not np.isfinite(denom) or denom <= 0.0:
                raise NumericalError(
                    f"conjugate gradient broke down (curvature {denom})",
                    iteration=it)
            step = rs / denom
            f += step * p
            r -= step * ap
            rs_new = _rip(r, r)
            if not np.isfinite(rs_new):
                raise NumericalError("residual diverged", iteration=it)
            history.append(loss_from_residual(f, r))
            report.iterations_run = it + 1
            p = r + (rs_new / rs) * p
            rs = rs_new
        else:
            report.converged = bool(np.sqrt(rs) <= tol * b_norm)

        report.final_loss = history[-1]
        report.relative_residual = float(np.sqrt(rs) / b_norm)
        self.filters = f
        return report

    def score_map(self, spectrum: np.ndarray) -> np.ndarray:
        "Correlation response of the current filters on a sample spectrum."
        if self.filters is None:
            raise InvalidInputError("bank is untrained")
        self._check_sample(spectrum)
        return np.fft.ifft2(np.sum(spectrum * self.filters, axis=0)).real


def closed_form_single_channel(x_spectrum: np.ndarray, label_spectrum: np.ndarray,
                               ridge: float) -> np.ndarray:
    """Direct per-bin solution for one channel, one sample, constant mask.

    With a constant spatial mask w0 the penalty reduces to a ridge term
    with lambda = w0^2, giving f_hat = conj(x) y / (|x|^2 + lambda).
    """
    return np.conj(x_spectrum) * label_spectrum / (np.abs(x_spectrum) ** 2 + ridge)


def constant_mask_taps(shape: tuple[int, int], value: float) -> RegTaps:
    "Taps representing a constant spatial mask (pure ridge penalty)."
    h, w = shape
    return RegTaps(np.array([[0, 0]]),
                   np.array([value * h * w], dtype=np.complex128), shape)
