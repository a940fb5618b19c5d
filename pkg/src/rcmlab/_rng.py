"""Counter-based uniform variates keyed by (seed, stream, counter).

Every random number in the package is a pure function of its key, so
results never depend on evaluation order or on the backend doing the work.
The mixer is the splitmix64 finaliser; the scalar form is compiled for the
numba kernels and the same body runs element-wise on uint64 arrays.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

# stream ids for the non-path consumers; path samples use stream = sample index
STREAM_PAIRS = 0xC0DE_0001
STREAM_FAMILY = 0xC0DE_0002
STREAM_START = 0xC0DE_0003


def _mix_py(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


_mix = njit(_mix_py)


def _u64(x):
    return np.uint64(int(x) & 0xFFFFFFFFFFFFFFFF)


def stream_state(seed, stream):
    """Initial state of one stream (uint64 scalar)."""
    s = np.array([_u64(seed)], dtype=np.uint64) + GOLDEN
    key = _mix_py(s)
    return _mix_py(key ^ np.array([_u64(stream)], dtype=np.uint64))[0]


def _uniform_at_py(state, counter):
    with np.errstate(over="ignore"):
        z = _mix(state + (np.uint64(counter) + _ONE) * GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _INV53


@njit
def _uniform_at_nb(state, counter):
    z = _mix(state + (np.uint64(counter) + _ONE) * GOLDEN)
    return (np.float64(z >> _S11) + 0.5) * _INV53


#: open-interval uniform for one (stream state, counter) pair
uniform_at = _uniform_at_nb if HAVE_NUMBA else _uniform_at_py


def uniforms(seed, stream, counters):
    """Vectorised uniforms on (0, 1) for an array of counters in one stream."""
    state = stream_state(seed, stream)
    c = np.asarray(counters).astype(np.uint64)
    with np.errstate(over="ignore"):
        z = _mix_py(state + (c + _ONE) * GOLDEN)
    return ((z >> _S11).astype(np.float64) + 0.5) * _INV53


def stream_states(seed, streams):
    """Stream states for many streams at once (uint64 array)."""
    s = np.array([_u64(seed)], dtype=np.uint64) + GOLDEN
    key = _mix_py(s)[0]
    st = np.asarray(streams).astype(np.uint64)
    return _mix_py(key ^ st)
