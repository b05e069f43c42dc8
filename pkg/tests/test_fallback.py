"""The pure-Python kernel path (QUANTJOINT_DISABLE_JIT=1) must reproduce the compiled path."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

SCRIPT = r"""
import json
from quantjoint._jit import USING_NUMBA
from quantjoint.distributions import rng_stream
from quantjoint.joint import run_chain
from quantjoint.model import McmcSettings, ModelSpec
from quantjoint.simulate import scenario, simulate
data, _ = simulate(scenario("default", n=15, n_visits=4), rng_stream(4))
s = run_chain(data, ModelSpec(grid_k=3, mcmc=McmcSettings(12, 2, 1, seed=9)))
print(json.dumps({"numba": USING_NUMBA, "draws": s.draws.tolist()}))
"""


def _run(disable):
    env = dict(os.environ, QUANTJOINT_DISABLE_JIT="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@pytest.mark.slow
def test_python_path_matches_compiled():
    jit, py = _run(False), _run(True)
    assert jit["numba"] is True and py["numba"] is False
    np.testing.assert_allclose(np.array(py["draws"]), np.array(jit["draws"]), rtol=1e-8, atol=1e-10)
