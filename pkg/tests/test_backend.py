import json
import os
import subprocess
import sys

from nhclt import _backend

SCRIPT = """
import json
from nhclt import _backend
from nhclt.montecarlo import total_reward_samples
from nhclt.reference import random_instance
b = random_instance(3, 4, 6, 1)
t = total_reward_samples(b.law, b.rewards, 5, 300).totals
print(json.dumps({"name": _backend.name, "totals": t.tolist()}))
"""


def run(env_extra):
    env = {k: v for k, v in os.environ.items() if k != "NHCLT_PURE_PYTHON"}
    env.update(env_extra)
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, check=True,
                         capture_output=True, text=True).stdout
    return json.loads(out)


def test_forced_fallback_gives_identical_samples():
    pure = run({"NHCLT_PURE_PYTHON": "1"})
    default = run({})
    assert pure["name"] == "python"
    assert default["name"] == _backend.name
    assert pure["totals"] == default["totals"]


def test_selected_backend_exports():
    assert _backend.impl in (_backend.python_impl, _backend.compiled_impl)
    assert _backend.delta_rows is _backend.impl.delta_rows
    assert _backend.sample_chain is _backend.impl.sample_chain
