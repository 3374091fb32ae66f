"""Built-in pool contents and pool management."""

import pytest

from masgen.demo import demo_backend
from masgen.dsl import ExecCode, serialize
from masgen.pool import DuplicateMas, MasPool, UnknownName, builtin_pool, load_manifest
from masgen.runtime import count_calls, execute
from masgen.sandbox import ScriptedSandbox

REQUIRED_BUILTINS = {
    "direct", "cot", "5_cot_sc", "self_refine", "quality_diversity", "3_debate",
    "5_expert_decide", "5_refine_decide", "2_code_2_direct_ensemble", "code_test_refine",
    "step_back", "ensemble_format",
}


@pytest.fixture(scope="module")
def pool():
    return builtin_pool()


class TestBuiltins:
    def test_at_least_twelve_entries(self, pool):
        assert len(pool) >= 12

    def test_required_structures_present(self, pool):
        assert REQUIRED_BUILTINS <= set(pool.names())

    def test_five_way_self_consistency_costs_six(self, pool):
        assert count_calls(pool.get("5_cot_sc").program) == 6

    def test_cot_costs_one(self, pool):
        assert count_calls(pool.get("cot").program) == 1

    def test_all_entries_valid_and_distinct(self, pool):
        assert len(pool.unique_fingerprints()) == len(pool)
        for entry in pool:
            assert entry.program.output_var

    def test_code_capable_flag_matches_exec_presence(self, pool):
        for entry in pool:
            has_exec = any(isinstance(s, ExecCode) for s in _walk(entry.program.steps))
            assert entry.code_capable == has_exec

    def test_order_stable_across_loads(self, pool):
        assert pool.names() == builtin_pool().names()

    def test_whole_pool_smoke_executes_ok(self, pool):
        backend = demo_backend()
        sandbox = ScriptedSandbox()
        for entry in pool:
            result = execute(entry.program, "QUERY-2: widgets for scenario 2?", backend, sandbox=sandbox)
            assert result.ok, f"{entry.name}: {result.failure}"


def _walk(steps):
    for step in steps:
        yield step
        if hasattr(step, "body"):
            yield from _walk(step.body)


class TestPoolManagement:
    def test_add_from_file(self, pool, tmp_path):
        path = tmp_path / "extra.masl"
        path.write_text(serialize(pool.get("cot").program).replace("mas cot", "mas cot_variant")
                        .replace("Task:", "Assignment:"), encoding="utf-8")
        mine = MasPool()
        entry = mine.add_from_file(path, tags=("general",))
        assert entry.name == "cot_variant"
        assert len(mine) == 1

    def test_duplicate_rejected(self, pool, tmp_path):
        path = tmp_path / "dup.masl"
        path.write_text(serialize(pool.get("cot").program), encoding="utf-8")
        mine = MasPool()
        mine.add_from_file(path)
        with pytest.raises(DuplicateMas):
            mine.add_from_file(path)

    def test_whitespace_variant_is_duplicate(self, pool, tmp_path):
        canonical = serialize(pool.get("cot").program)
        (tmp_path / "a.masl").write_text(canonical, encoding="utf-8")
        (tmp_path / "b.masl").write_text(canonical.replace("call final", "call   final") + "\n\n",
                                         encoding="utf-8")
        mine = MasPool()
        mine.add_from_file(tmp_path / "a.masl")
        with pytest.raises(DuplicateMas):
            mine.add_from_file(tmp_path / "b.masl")

    def test_get_unknown(self, pool):
        with pytest.raises(UnknownName):
            pool.get("never_heard_of_it")

    def test_manifest_loading(self, pool, tmp_path):
        extra = tmp_path / "extra.masl"
        extra.write_text(serialize(pool.get("direct").program).replace("mas direct", "mas direct2")
                         .replace("{query}", "Q: {query}"), encoding="utf-8")
        manifest = tmp_path / "pool.yaml"
        manifest.write_text(
            "include_builtins: true\nentries:\n  - path: extra.masl\n    tags: [general]\n",
            encoding="utf-8",
        )
        loaded = load_manifest(manifest)
        assert loaded.names() == pool.names() + ["direct2"]
        assert loaded.get("direct2").tags == ("general",)
