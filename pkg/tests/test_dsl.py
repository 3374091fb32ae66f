"""Parser, serializer, fingerprint, and block-extraction behavior."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from masgen.dsl import (
    ErrorKind,
    BlockNotFound,
    FanOut,
    LlmCall,
    Loop,
    Marker,
    MaslError,
    PromptTemplate,
    Render,
    Return,
    extract_block,
    fingerprint,
    locate_block,
    parse_mas,
    serialize,
    wrap_block,
)
from masgen.runtime import count_calls

MINIMAL = '''
mas tiny

prompt ask """
Task: {query}
"""

call out = ask(query=query) role=assistant
return out
'''

FAN_OUT_AGGREGATE = '''
mas five_way

prompt solve """
Task: {query}
"""

prompt combine """
Task:
{query}

{#each sols}
Solution {i+1}:
{item}

{/each}
Pick the best.
"""

fanout sols count=5:
  call s = solve(query=query) role=solver
call final = combine(query=query, sols=sols) role=decider
return final
'''


def expect_error(source: str, kind: ErrorKind) -> MaslError:
    with pytest.raises(MaslError) as excinfo:
        parse_mas(source)
    assert excinfo.value.kind is kind, f"expected {kind}, got {excinfo.value.kind}: {excinfo.value}"
    return excinfo.value


class TestParse:
    def test_smallest_program(self):
        program = parse_mas(MINIMAL)
        assert program.name == "tiny"
        assert len(program.prompts) == 1
        assert len(program.steps) == 2
        assert program.output_var == "out"
        assert not program.code_capable

    def test_missing_return(self):
        source = MINIMAL.replace("return out\n", "")
        expect_error(source, ErrorKind.MISSING_RETURN)

    def test_fanout_render_aggregate(self):
        program = parse_mas(FAN_OUT_AGGREGATE)
        assert count_calls(program) == 6
        fan = program.steps[0]
        assert isinstance(fan, FanOut) and fan.count == 5

    def test_comments_and_blank_lines_ignored(self):
        source = "# header comment\n" + MINIMAL.replace("call out", "\n\n# step comment\ncall out")
        assert parse_mas(source) == parse_mas(MINIMAL)

    def test_role_defaults_to_template_name(self):
        source = MINIMAL.replace(" role=assistant", "")
        program = parse_mas(source)
        call = program.steps[0]
        assert isinstance(call, LlmCall) and call.role_tag == "ask"

    def test_temperature_attribute(self):
        source = MINIMAL.replace("role=assistant", "role=assistant temp=0.3")
        call = parse_mas(source).steps[0]
        assert call.temperature == pytest.approx(0.3)

    def test_error_carries_line_number(self):
        err = expect_error(MINIMAL.replace("call out = ask(query=query) role=assistant",
                                           "call out = ask(query=nope) role=assistant"),
                           ErrorKind.UNDEFINED_VARIABLE)
        assert err.line == 8

    @pytest.mark.parametrize("mutation, kind", [
        (("call out = ask(query=query) role=assistant", "summon out = ask(query=query)"),
         ErrorKind.UNKNOWN_STEP_KIND),
        (("call out = ask(query=query) role=assistant", "call out = ask(query=missing) role=assistant"),
         ErrorKind.UNDEFINED_VARIABLE),
        (("call out = ask(query=query) role=assistant", "call out = ask() role=assistant"),
         ErrorKind.UNRESOLVED_PLACEHOLDER),
        (("call out = ask(query=query) role=assistant", "call out = ask(query=query, extra=query) role=assistant"),
         ErrorKind.UNKNOWN_PLACEHOLDER),
        (("call out = ask(query=query) role=assistant", "call out = missing(query=query) role=assistant"),
         ErrorKind.UNKNOWN_TEMPLATE),
        (("call out = ask(query=query) role=assistant", "call query = ask(query=query) role=assistant"),
         ErrorKind.RESERVED_NAME),
        (("return out", "return out\ncall late = ask(query=query) role=assistant"),
         ErrorKind.MISPLACED_RETURN),
    ])
    def test_validation_mutations(self, mutation, kind):
        old, new = mutation
        expect_error(MINIMAL.replace(old, new), kind)

    def test_duplicate_variable(self):
        source = MINIMAL.replace("return out", "call out = ask(query=query) role=again\nreturn out")
        expect_error(source, ErrorKind.DUPLICATE_VARIABLE)

    def test_duplicate_prompt(self):
        source = MINIMAL + '\nprompt ask """\nAgain {query}\n"""\n'
        expect_error(source, ErrorKind.DUPLICATE_PROMPT)

    def test_fanout_limit(self):
        expect_error(FAN_OUT_AGGREGATE.replace("count=5", "count=17"), ErrorKind.LIMIT_EXCEEDED)

    def test_loop_limit(self):
        source = MINIMAL.replace("return out", "loop out rounds=9:\n  call out = ask(query=query)\nreturn out")
        expect_error(source, ErrorKind.LIMIT_EXCEEDED)

    def test_empty_body(self):
        source = MINIMAL.replace("return out", "fanout xs count=2:\nreturn out")
        expect_error(source, ErrorKind.EMPTY_BODY)

    def test_list_into_scalar_slot(self):
        source = FAN_OUT_AGGREGATE.replace("call final = combine(query=query, sols=sols)",
                                           "call final = solve(query=sols)")
        expect_error(source, ErrorKind.KIND_MISMATCH)

    def test_scalar_into_each_slot(self):
        source = FAN_OUT_AGGREGATE.replace("combine(query=query, sols=sols)", "combine(query=query, sols=query)")
        expect_error(source, ErrorKind.KIND_MISMATCH)

    def test_return_list_rejected(self):
        source = FAN_OUT_AGGREGATE.replace("call final = combine(query=query, sols=sols) role=decider\nreturn final",
                                           "return sols")
        expect_error(source, ErrorKind.KIND_MISMATCH)

    def test_return_inside_body(self):
        source = FAN_OUT_AGGREGATE.replace("call s = solve(query=query) role=solver",
                                           "call s = solve(query=query) role=solver\n  return s")
        expect_error(source, ErrorKind.MISPLACED_RETURN)

    def test_bad_marker(self):
        source = MINIMAL.replace("return out", "extract x = out marker=WEIRD\nreturn x")
        expect_error(source, ErrorKind.INVALID_VALUE)

    def test_zero_timeout(self):
        source = MINIMAL.replace("return out", "exec x = out timeout=0\nreturn x")
        expect_error(source, ErrorKind.INVALID_VALUE)

    def test_tab_indentation(self):
        expect_error(MINIMAL.replace("call out", "\tcall out"), ErrorKind.SYNTAX)

    def test_unterminated_prompt(self):
        expect_error('mas x\n\nprompt p """\nno closing\n', ErrorKind.SYNTAX)

    def test_unbalanced_brace_in_template(self):
        expect_error(MINIMAL.replace("Task: {query}", "Task: {query} }"), ErrorKind.SYNTAX)

    def test_exec_marks_code_capable(self):
        source = MINIMAL.replace(
            "return out", "extract code = out marker=CODE_TAGS\nexec result = code timeout=5\nreturn result"
        )
        assert parse_mas(source).code_capable


class TestSerialize:
    def test_idempotent(self):
        program = parse_mas(FAN_OUT_AGGREGATE)
        once = serialize(program)
        assert serialize(parse_mas(once)) == once

    def test_round_trip_structural_equality(self):
        program = parse_mas(FAN_OUT_AGGREGATE)
        assert parse_mas(serialize(program)) == program

    def test_prompt_order_normalized(self):
        solve_def = 'prompt solve """\nTask: {query}\n"""\n'
        # move the solve prompt definition from before combine to after it
        without = FAN_OUT_AGGREGATE.replace(solve_def + "\n", "")
        reordered = without.replace("fanout sols count=5:", solve_def + "\nfanout sols count=5:")
        assert reordered != FAN_OUT_AGGREGATE
        assert serialize(parse_mas(reordered)) == serialize(parse_mas(FAN_OUT_AGGREGATE))

    def test_binding_order_normalized(self):
        source = FAN_OUT_AGGREGATE.replace("combine(query=query, sols=sols)", "combine(sols=sols, query=query)")
        assert serialize(parse_mas(source)) == serialize(parse_mas(FAN_OUT_AGGREGATE))


class TestFingerprint:
    def test_whitespace_invariance(self):
        noisy = MINIMAL.replace("call out", "\n\n\ncall   out").replace("return out", "return    out\n\n# tail\n")
        assert fingerprint(parse_mas(noisy)) == fingerprint(parse_mas(MINIMAL))

    def test_prompt_word_change_differs(self):
        changed = MINIMAL.replace("Task: {query}", "Job: {query}")
        assert fingerprint(parse_mas(changed)) != fingerprint(parse_mas(MINIMAL))

    def test_dedup_counts_unique(self):
        programs = [parse_mas(MINIMAL), parse_mas(MINIMAL.replace("call out ", "call  out ")),
                    parse_mas(MINIMAL.replace("Task:", "Goal:"))]
        assert len({fingerprint(p) for p in programs}) == 2

    def test_fingerprint_matches_serialization_equality(self):
        a, b = parse_mas(MINIMAL), parse_mas(FAN_OUT_AGGREGATE)
        assert (fingerprint(a) == fingerprint(b)) == (serialize(a) == serialize(b))


class TestExtractBlock:
    def test_code_tags(self):
        assert extract_block("<CODE>X</CODE>", [Marker.CODE_TAGS]) == "X"

    def test_fenced_in_prose(self):
        text = "Here you go:\n```python\nbody line\n```\nthanks"
        assert extract_block(text, [Marker.FENCED]) == "body line"

    def test_not_found(self):
        with pytest.raises(BlockNotFound):
            extract_block("no blocks here", [Marker.CODE_TAGS, Marker.FENCED])

    def test_marker_precedence(self):
        text = "```\nfenced\n```\n<Code Solution>sol</Code Solution>\n<CODE>tagged</CODE>"
        assert extract_block(text) == "tagged"
        assert extract_block(text, [Marker.SOLUTION_TAGS, Marker.FENCED]) == "sol"

    def test_innermost_of_first_pair(self):
        text = "<CODE>outer <CODE>inner</CODE> tail</CODE>"
        assert extract_block(text, [Marker.CODE_TAGS]) == "inner"

    def test_trims_blank_lines(self):
        assert extract_block("<CODE>\n\n  \nbody\n\n</CODE>", [Marker.CODE_TAGS]) == "body"

    def test_locate_reports_prefix_position(self):
        text = "reasoning first\n<CODE>\nmas x\n</CODE>"
        marker, start, content = locate_block(text)
        assert marker is Marker.CODE_TAGS
        assert text[:start] == "reasoning first\n"
        assert content == "mas x"

    @given(st.lists(st.text(alphabet="abcdef xyz.,:=", max_size=20), max_size=5))
    def test_wrap_then_extract_is_identity(self, middle):
        # alphabet excludes backticks and angle brackets, so no marker collisions
        body = "\n".join(["first line"] + middle + ["last line"])
        for marker in Marker:
            assert extract_block(wrap_block(body, marker), [marker]) == body


# ---------------------------------------------------------------------------
# Random-program round-trip
# ---------------------------------------------------------------------------

_FILLER = st.text(alphabet="abcdefgh ._,", min_size=1, max_size=12).map(str.strip).filter(bool)


@st.composite
def programs(draw):
    prompts: dict[str, PromptTemplate] = {}
    counter = {"v": 0, "p": 0}

    def fresh(prefix: str) -> str:
        counter[prefix] += 1
        return f"{prefix}{counter[prefix]}"

    def make_template(scalars: list[str], lists: list[str]) -> tuple[str, dict[str, str]]:
        bound_scalars = draw(st.lists(st.sampled_from(scalars), max_size=2, unique=True)) if scalars else []
        lines = [draw(_FILLER)]
        bindings = {}
        for var in bound_scalars:
            placeholder = fresh("v")
            lines.append(f"{draw(_FILLER)} {{{placeholder}}}")
            bindings[placeholder] = var
        if lists and draw(st.booleans()):
            placeholder = fresh("v")
            lines += [f"{{#each {placeholder}}}", "Item {i+1}:", "{item}", "{/each}"]
            bindings[placeholder] = draw(st.sampled_from(lists))
        name = fresh("p")
        prompts[name] = PromptTemplate("\n".join(lines))
        return name, bindings

    def make_call(scalars, lists):
        template, bindings = make_template(scalars, lists)
        return LlmCall(out=fresh("v"), template=template, bindings=bindings, role_tag=fresh("v"),
                       temperature=draw(st.sampled_from([None, 0.0, 0.5, 1.0])))

    steps = []
    scalars, lists = ["query"], []
    for _ in range(draw(st.integers(1, 4))):
        carry_candidates = [s for s in scalars if s != "query"]
        kind = draw(st.sampled_from(["call", "render", "fanout"] + (["loop"] if carry_candidates else [])))
        if kind == "fanout":
            body_scalars = scalars + ["branch"]
            body = [make_call(body_scalars, lists) for _ in range(draw(st.integers(1, 2)))]
            step = FanOut(out=fresh("v"), count=draw(st.integers(1, 16)), body=tuple(body))
            lists.append(step.out)
        elif kind == "loop":
            carry = draw(st.sampled_from(carry_candidates))
            template, bindings = make_template(scalars, lists)
            rebind = LlmCall(out=carry, template=template, bindings=bindings, role_tag=fresh("v"))
            step = Loop(carry=carry, rounds=draw(st.integers(1, 8)), body=(rebind,))
        elif kind == "render":
            template, bindings = make_template(scalars, lists)
            step = Render(out=fresh("v"), template=template, bindings=bindings)
            scalars.append(step.out)
        else:
            step = make_call(scalars, lists)
            scalars.append(step.out)
        steps.append(step)
    steps.append(Return(var=draw(st.sampled_from([s for s in scalars if s != "branch"]))))
    from masgen.dsl import MasProgram

    return MasProgram(name=fresh("v"), prompts=prompts, steps=tuple(steps))


@settings(max_examples=60, deadline=None)
@given(programs())
def test_random_program_round_trip(program):
    canonical = serialize(program)
    reparsed = parse_mas(canonical)
    assert reparsed == program
    assert serialize(reparsed) == canonical
    assert fingerprint(reparsed) == fingerprint(program)
