import os
import subprocess
import sys

import numpy as np
import pytest

SCRIPT = """
import sys, numpy as np
from rcmlab import BACKEND, ConductanceLaw, LatticeSpec, run_batch, sample_environment
from rcmlab import _rng
from rcmlab._kernels import alias_rows
env = sample_environment(ConductanceLaw.polynomial_tail(1, 0.5), LatticeSpec(0, 2, 6), seed=3)
o = env.sites.origin
res = run_batch(env, np.full(2000, o), 5.0, seed=11, domain=env.sites.ball(o, 4))
prob, alias = alias_rows(env.w_block(np.arange(20), np.arange(env.n)))
np.savez(sys.argv[1], backend=BACKEND, u=_rng.uniforms(7, 1, np.arange(1000)), prob=prob,
         alias=alias, **res)
"""


def _run(backend, path):
    env = dict(os.environ, RCMLAB_BACKEND=backend)
    subprocess.run([sys.executable, "-c", SCRIPT, str(path)], env=env, check=True)
    return np.load(path)


def test_backends_agree(tmp_path):
    pytest.importorskip("numba")
    a = _run("numba", tmp_path / "a.npz")
    b = _run("numpy", tmp_path / "b.npz")
    assert (str(a["backend"]), str(b["backend"])) == ("numba", "numpy")
    for k in ("u", "prob", "alias", "final", "exit_site", "njumps", "status"):
        assert np.array_equal(a[k], b[k]), k
    # holding times: same uniforms, log may round differently in the last bit
    fin = np.isfinite(a["exit_time"])
    assert np.array_equal(fin, np.isfinite(b["exit_time"]))
    assert np.allclose(a["exit_time"][fin], b["exit_time"][fin], rtol=1e-14, atol=0)


def test_unknown_backend_rejected():
    env = dict(os.environ, RCMLAB_BACKEND="fortran")
    out = subprocess.run([sys.executable, "-c", "import rcmlab"], env=env, capture_output=True, text=True)
    assert out.returncode != 0 and "RCMLAB_BACKEND" in out.stderr
