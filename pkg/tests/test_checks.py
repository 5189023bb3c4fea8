from ssmko.checks import check_decay_identity, check_dual_path, check_knockout_contract


def test_suites_pass_on_small_budgets():
    for res in (check_dual_path(5, seed=3), check_decay_identity(100, seed=4), check_knockout_contract(10, seed=5)):
        assert res.passed, res.line()
        assert res.line().startswith("PASS")
