import pytest

from echotrail.core import Action
from echotrail.inference import EpisodeResult
from echotrail.metrics import compute_metrics, reasonable_ops
from echotrail.sim import UnknownTaskError


def result(task_id, success, steps, changed=None, finish=True, flags=None):
    changed = changed if changed is not None else [True] * steps
    flags = flags if flags is not None else [success]
    return EpisodeResult(task_id, 0, success, flags, steps, [Action.back()] * steps, changed, finish)


def test_rrr_four_steps_against_expert_five(env):
    assert env.expert_length("note_todo") == 5
    rep = compute_metrics([result("note_todo", True, 4, flags=[True, True])], env)
    assert rep.rrr == 125.0


def test_rrr_ignores_failures(env):
    base = [result("note_todo", True, 5, flags=[True, True])]
    with_fail = base + [result("note_todo", False, 30, flags=[True, False], finish=False)]
    a, b = compute_metrics(base, env), compute_metrics(with_fail, env)
    assert a.rrr == b.rrr == 100.0
    assert a.sr == 100.0 and b.sr == 50.0
    assert a.sub_sr == 100.0 and b.sub_sr == 75.0


def test_no_successes_flags_rrr(env):
    rep = compute_metrics([result("wifi_off", False, 3, flags=[False])], env)
    assert rep.rrr == 0.0 and not rep.overall.rrr_defined


def test_ror_counts_state_changes_and_successful_finish():
    r = result("wifi_off", True, 4, changed=[True, False, True, True])
    assert reasonable_ops(r) == (4, 5)
    r = result("wifi_off", False, 2, changed=[True, False])
    assert reasonable_ops(r) == (1, 3)
    r = result("wifi_off", False, 2, changed=[True, False], finish=False)
    assert reasonable_ops(r) == (1, 2)


def test_difficulty_buckets_and_per_task(env):
    rs = [result("open_clock", True, 1), result("set_timer_5m", False, 9),
          result("carol_block", True, 9, flags=[True] * 4)]
    rep = compute_metrics(rs, env)
    assert rep.difficulty["easy"].sr == 100.0
    assert rep.difficulty["medium"].sr == 0.0
    assert rep.difficulty["hard"].sr == 100.0
    assert set(rep.per_task) == {"open_clock", "set_timer_5m", "carol_block"}


def test_deterministic_report(env):
    rs = [result("open_clock", True, 2), result("wifi_off", False, 5)]
    assert compute_metrics(rs, env).to_dict() == compute_metrics(list(rs), env).to_dict()


def test_unknown_task(env):
    with pytest.raises(UnknownTaskError):
        compute_metrics([result("nope", True, 1)], env)
