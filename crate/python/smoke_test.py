"""Smoke test for the `hdm` Python extension.

Build first with `cargo build --release -p hdm-py`, then run
`python3 python/smoke_test.py`. The script copies the built shared library
to a temporary directory under the module name and imports it from there.
"""

import json
import math
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def load_extension():
    for profile in ("release", "debug"):
        for name in ("libhdm.so", "libhdm.dylib", "hdm.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                tmp = Path(tempfile.mkdtemp())
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                shutil.copy(lib, tmp / f"hdm{suffix}")
                sys.path.insert(0, str(tmp))
                import hdm

                return hdm
    sys.exit("extension not built; run `cargo build --release -p hdm-py` first")


def main():
    hdm = load_extension()

    pd = hdm.Game.bimatrix([[3, 0], [5, 1]], [[3, 5], [0, 1]])
    assert pd.num_players == 2 and pd.action_counts == [2, 2]
    assert hdm.pure_nash(pd) == [[1, 1]]

    assert hdm.logit_qbr([1.0, 2.0, 3.0], 0.0) == [1 / 3] * 3
    profile, residual, _ = hdm.qbr_equilibrium(pd, 1.0)
    assert residual < 1e-8 and all(abs(sum(s) - 1) < 1e-12 for s in profile)

    qbr0 = json.dumps({"model": "logit_qbr", "params": {"lambda": 0.0}})
    assert hdm.predict(pd, qbr0, 0) == [0.5, 0.5]
    assert hdm.predict(pd, json.dumps({"model": "best_response"}), 0) == [0.0, 1.0]
    try:
        hdm.predict(pd, json.dumps({"model": "logit_qbr", "params": {"lambda": -1}}), 0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative lambda accepted")

    assert hdm.pt_value(0.0) == 0.0
    assert hdm.pt_weight(0.0) == 0.0 and hdm.pt_weight(1.0) == 1.0
    assert hdm.pt_value(-1.0) < -hdm.pt_value(1.0)
    selfish = json.dumps({"w_selfish": 1.0})
    same = hdm.transform_game_social(pd, [selfish, selfish])
    assert json.loads(same.to_json()) == json.loads(pd.to_json())

    scenario = hdm.FogScenario()
    trace = hdm.run_negotiation(scenario, 1)
    assert trace.converged
    prices, demands = trace.prices()[-1], trace.demands()[-1]
    spend = sum(c * r for c, r in zip(prices, demands))
    assert math.isclose(spend, scenario.budget, rel_tol=1e-9)
    again = hdm.run_negotiation(scenario.with_noise(0.1, True), 42)
    assert again.to_csv() == hdm.run_negotiation(scenario.with_noise(0.1, True), 42).to_csv()

    fit = json.loads(
        hdm.fit_mle(
            json.dumps({"model": "logit_qbr", "params": {"lambda": 1.0}}),
            str(ROOT / "data" / "qbr_lambda2.jsonl"),
            grid_points=11,
            refine_iters=1,
        )
    )
    assert 1.7 <= fit["params"][0] <= 2.3, fit["params"]

    print("python smoke test passed")


if __name__ == "__main__":
    main()
