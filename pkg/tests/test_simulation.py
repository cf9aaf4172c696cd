import numpy as np
import pytest

from phidiv.errors import ConfigError
from phidiv.simulation import (
    COLUMNS, RmseRecord, ScenarioConfig, bundled_config, emit_results, format_results,
    parse_config, replicate_rng, run_scenario, thread_cap,
)

SMALL = """
# tiny grid
family = rc
n_clusters = 30
m = 11
rho2 = 0.2
lambdas = 0, 2/3
replicates = 6
seed = 9
"""


def test_parse_config():
    cfg = parse_config(SMALL)
    assert cfg.families == ("random_clumped",)
    assert cfg.lambdas == (0.0, 2 / 3)
    assert cfg.replicates == 6
    assert cfg.d == 3 and cfg.k == 4


@pytest.mark.parametrize("text, field", [
    (SMALL.replace("replicates = 6", "replicates = 0"), "replicates"),
    (SMALL.replace("rho2 = 0.2", "rho2 = 1.5"), "rho2"),
    (SMALL.replace("m = 11", "m = eleven"), "m"),
    (SMALL + "colour = blue\n", "colour"),
    (SMALL.replace("n_clusters = 30", ""), "n_clusters"),
])
def test_config_errors_name_the_field(text, field):
    with pytest.raises(ConfigError, match=field):
        parse_config(text)


def test_bundled_configs():
    grid = {1: 60, 2: 15, 3: 10, 4: 10, 5: 10}
    for i, cells in grid.items():
        cfg = bundled_config(f"scenario{i}")
        assert len(cfg.cells()) == cells
        assert cfg.lambdas == (0.0, 2 / 3, 1.0, 1.5, 2.0, 2.5)
    assert bundled_config("scenario4").rho2 == (0.75,)
    # 20 rho2 values x 3 families x 6 lambdas
    assert len(bundled_config("scenario1").cells()) * 6 == 360


def test_replicate_streams_are_distinct():
    a = replicate_rng(1, 0, 0).random(4)
    assert np.array_equal(a, replicate_rng(1, 0, 0).random(4))
    assert not np.array_equal(a, replicate_rng(1, 0, 1).random(4))
    assert not np.array_equal(a, replicate_rng(1, 1, 0).random(4))


def test_run_and_emit_is_reproducible(tmp_path):
    cfg = parse_config(SMALL)
    a = format_results(run_scenario(cfg, workers=1))
    b = format_results(run_scenario(cfg, workers=2, chunk=2))
    assert a == b
    lines = a.strip().split("\n")
    assert lines[0] == ",".join(COLUMNS)
    assert len(lines) == 1 + 2
    path = tmp_path / "out.csv"
    emit_results(run_scenario(cfg, workers=1), path)
    assert path.read_text() == a


def test_seed_changes_values_not_shape():
    cfg = parse_config(SMALL)
    a = run_scenario(cfg, workers=1)
    b = run_scenario(cfg.with_overrides(seed=10), workers=1)
    assert len(a) == len(b)
    assert [r.rmse_beta for r in a] != [r.rmse_beta for r in b]


def test_records_are_sane():
    cfg = parse_config(SMALL)
    for r in run_scenario(cfg, workers=1):
        assert r.rmse_beta >= 0 and r.rmse_rho2_binder >= 0 and r.rmse_rho2_moments >= 0
        assert r.failures + r.replicates_used == cfg.replicates


def test_failures_are_counted():
    # two clusters cannot support twelve coefficients
    cfg = parse_config(SMALL.replace("n_clusters = 30", "n_clusters = 2"))
    recs = run_scenario(cfg, workers=1)
    assert all(r.failures > 0 for r in recs)
    text = format_results(recs)
    assert text.count("\n") == 3


def test_empty_records_rejected():
    with pytest.raises(ConfigError):
        format_results([])


def test_six_significant_digits():
    rec = RmseRecord("random_clumped", 60, 21, 0.25, 2 / 3, 0.123456789, 1.0, 2e-7, 5, 0)
    row = format_results([rec]).split("\n")[1]
    assert row == "random_clumped,60,21,0.25,0.666667,0.123457,1,2e-07,5,0"


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("PHIDIV_THREADS", "2")
    assert thread_cap(8) == 2
    monkeypatch.setenv("PHIDIV_THREADS", "x")
    with pytest.raises(ConfigError):
        thread_cap(8)


def test_dm_rho_zero_centred():
    cfg = ScenarioConfig(families=("dm",), n_clusters=(60,), m=(21,), rho2=(0.0,),
                         lambdas=(0.0,), replicates=40, seed=3)
    rec = run_scenario(cfg, workers=1)[0]
    assert rec.failures == 0
    assert rec.rmse_rho2_binder < 0.02 and rec.rmse_rho2_moments < 0.02


@pytest.mark.slow
def test_rmse_beta_decreases_with_n():
    cfg = bundled_config("scenario2").with_overrides(n_clusters=(10, 150), replicates=200)
    recs = run_scenario(cfg)
    small = [r.rmse_beta for r in recs if r.n == 10]
    large = [r.rmse_beta for r in recs if r.n == 150]
    assert all(b < a for a, b in zip(small, large))
