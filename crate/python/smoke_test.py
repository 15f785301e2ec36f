"""Smoke test for the tidesim Python extension.

Build and install it first:

    cd crates/python && maturin build --release -o dist && pip install dist/*.whl

then run `python python/smoke_test.py`.
"""

import math
import re

import tidesim_py as ts


def with_value(config: str, key: str, value: str) -> str:
    return re.sub(rf"^{key} = .*$", f"{key} = {value}", config, flags=re.MULTILINE)


def main() -> None:
    config = ts.default_config()
    assert ts.validate(config) == []
    assert ts.validate(with_value(config, "tolerance", "0"))

    run = ts.simulate(config)
    times = run["time"]
    assert times[0] == 0.0 and times[-1] == 125000.0
    assert abs(run["eccentricity"][0] - 0.6) < 1e-9
    closest = min(run["distance"])
    # released at apoapsis, so periapsis is r0 (1 - e) / (1 + e)
    assert abs(closest - 1e8 * 0.4 / 1.6) < 0.01 * 2.5e7, closest
    print(f"simulate: {len(times)} samples, {run['accepted_steps']} accepted steps")

    two_body = with_value(config, "number_of_bodies", "2")
    study = ts.study(two_body, fault=1e-4)
    verdict = study["classification"]["verdict"]
    assert verdict == "NumericalArtifact", verdict
    for level in study["injection_recovery"]:
        error = abs(level["recovered"] - level["injected"]) / abs(level["injected"])
        assert error < 0.25, level
    print(f"study: {verdict}, {len(study['levels'])} levels")

    text = ts.explain(config)
    assert "Status: explanandum supported" in text, text
    assert "{" not in text
    print("explain:", text.strip().splitlines()[-1])

    try:
        ts.simulate(with_value(config, "tolerance", "1e-12"))
    except RuntimeError as err:
        assert "step" in str(err)
    else:
        raise AssertionError("an unreachable tolerance must fail")

    assert "[[sentences]]" in ts.pattern_source()
    assert math.isfinite(run["energy"][0])
    print("smoke test passed")


if __name__ == "__main__":
    main()
