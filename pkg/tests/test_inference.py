import random

from echotrail.core import Action, ActionHistory
from echotrail.experiments import expert_memory
from echotrail.inference import (ContextRecord, assemble_context, baseline_action, format_memories,
                                 guide_pointer, guide_step, intent_similarity, label_overlap, run_task)
from echotrail.retrieval import RetrievalConfig

GOLDEN_CONTEXT = """\
## Task
Turn off Wi-Fi
## Memories (1)
Memory expert-wifi_off: Turn off Wi-Fi
1. {interface: App home screen home_launcher: widgets [button:Clock, button:Notes, button:Settings, \
button:Contacts, button:Messenger, button:Weather, button:News] | intent: Turn off Wi-Fi | action: Click(app_settings)}
2. {interface: App settings screen settings_main: widgets [button:Network, button:Display, button:Sound, \
button:About phone, button:Tips] | intent: Turn off Wi-Fi | action: Click(set_network)}
3. {interface: App settings screen settings_network: widgets [toggle:Wi-Fi, toggle:Bluetooth, \
toggle:Airplane mode, button:Hotspot, button:Data usage] | intent: Turn off Wi-Fi | action: Click(net_wifi)}
## History
1. Click(app_settings)
## Current screen
App settings screen settings_main: widgets [button:Network, button:Display, button:Sound, button:About phone, \
button:Tips]
"""


def wifi_context(env, memories=True):
    db = expert_memory(env)
    task = env.task("wifi_off")
    mems = format_memories([r for r in db.records if r.id == "expert-wifi_off"]) if memories else []
    state = env.initial_state(task, 0)
    eff = env.apply(state, Action.click("app_settings"))
    return assemble_context(task.instruction, mems, ActionHistory((Action.click("app_settings"),)),
                            eff.new_observation)


def test_format_memories_golden(env):
    ctx = wifi_context(env)
    (mem,) = ctx.memories
    assert mem.header == "Turn off Wi-Fi"
    assert len(mem.steps) == 3
    assert mem.steps[2].endswith("| intent: Turn off Wi-Fi | action: Click(net_wifi)}")


def test_context_render_golden(env):
    ctx = wifi_context(env)
    assert isinstance(ctx, ContextRecord)
    assert ctx.render() == GOLDEN_CONTEXT
    assert ctx.render() == wifi_context(env).render()


def test_guide_follows_memory(env):
    ctx = wifi_context(env)
    assert guide_step(ctx, random.Random(0)) == Action.click("set_network")


def test_guide_pointer_skips_ahead_on_widgets_only():
    guide = [Action.click("a"), Action.back(), Action.click("b"), Action.click("c")]
    assert guide_pointer(guide, [Action.click("a")]) == 1
    assert guide_pointer(guide, [Action.click("b")]) == 3
    assert guide_pointer(guide, [Action.home()]) == 0


def test_label_overlap_and_similarity():
    assert label_overlap(frozenset("ab"), frozenset("ab")) == 1.0
    assert label_overlap(frozenset("ab"), frozenset("bc")) == 1 / 3
    assert intent_similarity("switch Wi-Fi off", "Turn off Wi-Fi") > 0.5
    assert intent_similarity("mute the chat", "Set a timer") == 0.0


def test_baseline_opens_hinted_app(env):
    ctx = assemble_context(env.task("wifi_off").instruction, [], ActionHistory(), env.reset("wifi_off"))
    assert baseline_action(ctx, random.Random(0)) == Action.click("app_settings")


def test_k_zero_equals_baseline_policy(env):
    db = expert_memory(env)
    for task in env.tasks:
        a = run_task(task, db, RetrievalConfig(K=0), 3, env)
        b = run_task(task, None, RetrievalConfig(K=0), 3, env, policy=baseline_action)
        assert a.to_dict() == b.to_dict()


def test_expert_memory_solves_everything(env):
    db = expert_memory(env)
    for task in env.tasks:
        r = run_task(task, db, RetrievalConfig(K=2), 0, env)
        assert r.success and r.steps_taken == len(task.expert_steps), task.id
        assert r.finish_emitted


def test_episode_result_invariants(env):
    for task in env.tasks[:8]:
        r = run_task(task, None, RetrievalConfig(K=0), 1, env)
        assert r.steps_taken <= 30
        assert len(r.observations) == r.steps_taken + 1
        if r.success:
            assert all(r.sub_goal_flags)


def test_run_task_is_deterministic(env, small_run):
    cfg = RetrievalConfig(K=2)
    for task in env.tasks[:10]:
        assert run_task(task, small_run.d_mem, cfg, 5, env).to_dict() == \
            run_task(task, small_run.d_mem, cfg, 5, env).to_dict()


def test_rejected_memories_are_worse_than_none(env):
    from echotrail.core import abstract_trajectory, summarize_observation
    from echotrail.experiments import ExplorationCache, run_suite
    from echotrail.memory import MemoryDB
    from echotrail.metrics import compute_metrics
    cache = ExplorationCache(env)
    poisoned, baseline = [], []
    for seed in range(4):
        db = MemoryDB(enforce_gate=False)
        for ep in cache.get(seed, 200, True).episodes:
            if ep.trajectory.steps and ep.score < 4:
                db.add(abstract_trajectory(ep.trajectory, summarize_observation))
        poisoned += run_suite(db, RetrievalConfig(K=2), seed, env)
        baseline += run_suite(None, RetrievalConfig(K=0), seed, env)
    assert compute_metrics(poisoned, env).sr < compute_metrics(baseline, env).sr
