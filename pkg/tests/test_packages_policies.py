import pytest

from lagoon.bench import TestSetup, generate_setup
from lagoon.runtime import (
    ALL,
    BEST_OF,
    AgentId,
    CollectionPackage,
    ControlPackage,
    DuplicateNameError,
    Envelope,
    LoadReport,
    Migration,
    PackageError,
    Registry,
    TaskFileError,
    TaskPackage,
    balance,
    collect,
    controller_select,
    parse_task_file,
    reassemble,
    split,
    worker_target,
)
from lagoon.runtime.packages import CANCEL_TASK, SHUTDOWN, callback_channel, check_channel

from helpers import three_job


def _task(**kw):
    return TaskPackage(instance_ref="canonical:single-small", **kw)


# -- packages ---------------------------------------------------------------------


def test_envelope_json_roundtrip():
    env = Envelope("Task", {"task": _task().to_dict()}, 7, callback_channel("x/sink"))
    env.note("a", "hello")
    back = Envelope.from_json(env.to_json())
    assert back == env
    assert len(env.id) == 32


def test_envelope_ids_unique():
    assert len({Envelope("Result", {}).id for _ in range(1000)}) == 1000


@pytest.mark.parametrize("bad", [
    lambda: Envelope("Bogus", {}),
    lambda: Envelope("Task", {}, priority=10),
    lambda: TaskPackage(),
    lambda: TaskPackage(instance={}, instance_ref="x"),
    lambda: _task(budget=0),
    lambda: _task(repetitions=0),
    lambda: _task(seed=2**64),
    lambda: _task(processing_steps=["teleport"]),
    lambda: TaskPackage.from_dict({"instance_ref": "x", "colour": 1}),
    lambda: CollectionPackage([]),
    lambda: CollectionPackage([_task()], "Median"),
    lambda: ControlPackage("Reboot"),
    lambda: ControlPackage(CANCEL_TASK),
    lambda: ControlPackage(SHUTDOWN, {"type": "agent"}),
    lambda: check_channel({"type": "file"}),
    lambda: LoadReport("n", "a", 3, 0, 2),
])
def test_malformed_packages(bad):
    with pytest.raises(PackageError):
        bad()


def test_task_resolves_inline_and_canonical():
    inst = three_job()
    assert TaskPackage(instance=inst.to_dict()).resolve_instance() == inst
    assert _task().resolve_instance().L == 16


def test_control_cancel_by_package():
    ctl = ControlPackage(CANCEL_TASK, {"type": "package", "id": "abc"})
    assert ctl.cancel_id == "abc"
    assert ControlPackage.from_dict(ctl.to_dict()) == ctl


# -- registry ----------------------------------------------------------------------


def test_registry_lookup_and_events():
    reg = Registry()
    events = []
    reg.add_listener(lambda kind, agents: events.append((kind, [a.name for a in agents])))
    reg.register(AgentId("n1", "b", "Worker"))
    reg.register(AgentId("n1", "a", "Worker"))
    reg.register(AgentId("n2", "c", "Collector"))
    assert [a.name for a in reg.lookup("Worker")] == ["a", "b"]
    with pytest.raises(DuplicateNameError):
        reg.register(AgentId("n3", "a", "Worker"))
    assert [a.name for a in reg.deregister_node("n1")] in (["b", "a"], ["a", "b"])
    assert reg.lookup("Worker") == []
    assert reg.deregister("c").role == "Collector"
    assert len(reg) == 0
    assert events[-2][0] == "left" and sorted(events[-2][1]) == ["a", "b"]
    assert AgentId.from_dict(AgentId("n", "x", "Worker", "rds").to_dict()) == AgentId("n", "x", "Worker", "rds")


# -- controller ----------------------------------------------------------------------


def test_controller_rules():
    single = generate_setup(TestSetup(1, "uniform", 16, 3), 0)
    multi = generate_setup(TestSetup(2, "uniform", 16, 3), 0)
    assert controller_select(_task(algorithm="pso"), multi) == ("pso", {})
    assert controller_select(_task(budget=1000), single)[0] == "rds"
    algo, params = controller_select(_task(budget=1000), multi)
    assert algo == "cc" and (params["reinits"], params["rds_iters"]) == (3, 332)
    assert controller_select(_task(budget=10000), multi)[0] == "rds"
    assert controller_select(_task(budget=50), multi)[0] == "rds"


# -- splitter ---------------------------------------------------------------------------


def test_split_seeds():
    subs = split(_task(seed=42, repetitions=100))
    assert [s.seed for s in subs] == list(range(42, 142))
    assert all(s.repetitions == 1 for s in subs)
    one = _task(seed=3)
    assert split(one) == [one]


def test_reassemble_orders_by_seed():
    out = reassemble([{"seed": 2, "makespan": 5.0}, {"seed": 1, "makespan": 7.0},
                      {"seed": 3, "status": "failed"}])
    assert [r["seed"] for r in out["results"]] == [1, 2, 3]
    assert out["best"]["seed"] == 2


# -- collector ---------------------------------------------------------------------------


def _member(ms):
    return {"best": {"makespan": ms, "seed": 0}, "results": []}


def test_collect_best_of():
    out = collect(BEST_OF, {"a": _member(415), "b": _member(398), "c": _member(402)})
    assert out["best"]["makespan"] == 398 and out["provenance"] == "b"


def test_collect_best_of_with_failure():
    out = collect(BEST_OF, {"a": _member(415), "b": {"status": "failed", "error": "x"}, "c": _member(402)})
    assert out["best"]["makespan"] == 402 and out["failures"] == ["b"]


def test_collect_all_keeps_members():
    members = {"a": _member(415), "b": _member(398)}
    out = collect(ALL, members)
    assert out["members"] == members and out["failures"] == []


# -- load balancing ------------------------------------------------------------------------


def test_balance_example():
    me = LoadReport("n1", "lb1", 4, 10, 4)
    peer = LoadReport("n2", "lb2", 0, 0, 4)
    assert balance(me, [peer]) == [Migration("lb2", 2)]


def test_balance_ignores_busy_and_stale_peers():
    me = LoadReport("n1", "lb1", 4, 20, 4, timestamp=100.0)
    busy = LoadReport("n2", "lb2", 4, 3, 4, timestamp=100.0)
    stale = LoadReport("n3", "lb3", 0, 0, 4, timestamp=90.0)
    fresh = LoadReport("n4", "lb4", 0, 1, 4, timestamp=99.0)
    assert balance(me, [busy, stale, fresh], now=100.0, heartbeat=1.0) == [Migration("lb4", 12)]
    assert balance(LoadReport("n1", "lb1", 2, 8, 4), [fresh]) == []


def test_worker_target():
    assert worker_target(4, 0) == 0
    assert worker_target(4, 2) == 2
    assert worker_target(4, 9) == 4


# -- task files --------------------------------------------------------------------------


def test_parse_three_tasks():
    text = """[
  {"instance_ref": "canonical:single-small", "algorithm": "rds", "budget": 500},
  {"instance_ref": "canonical:dual-uniform", "priority": 8, "repetitions": 3},
  {"instance_ref": "x.json", "output": {"type": "file", "path": "out.jsonl"}}
]"""
    items = parse_task_file(text)
    assert len(items) == 3
    assert items[1][1] == 8 and items[1][0].repetitions == 3
    assert items[2][2] == {"type": "file", "path": "out.jsonl"}


def test_parse_empty_file():
    assert parse_task_file("") == []
    assert parse_task_file("   \n") == []


def test_parse_error_names_line():
    text = '[\n  {"instance_ref": "a", "budget": 0},\n  {"instance_ref": "b"}\n]'
    with pytest.raises(TaskFileError, match="line 2"):
        parse_task_file(text)
    with pytest.raises(TaskFileError, match="line 3"):
        parse_task_file('[\n {"instance_ref": "a"},\n {"instance_ref": }\n]')
