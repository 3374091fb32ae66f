"""Compact MASL reference used inside prompts for models that must emit it.

docs/masl_reference.md is the full human-facing reference; this string is the
condensed version given to refiner models and to off-the-shelf generator
models that have never seen the language.
"""

GRAMMAR_PRIMER = '''MASL quick reference (the workflow language for multi-agent systems):
- A program starts with `mas <name>` (lowercase identifier), then prompt definitions, then steps.
- `prompt <name> """` ... `"""` defines a prompt template (closing triple quote alone on its line).
  `{placeholder}` slots are filled at call time. A group of lines between `{#each <listvar>}` and
  `{/each}` (each tag alone on its own line) repeats once per element of a bound list; inside it,
  `{item}` is the element and `{i+1}` its 1-based number.
- Steps, one per line, executed top to bottom (indent block bodies by two spaces):
  - `call <out> = <template>(<placeholder>=<var>, ...) role=<tag>` renders the template, sends it to
    the model as one agent inference, and stores the reply in <out>.
  - `render <out> = <template>(...)` renders a template into a variable without any model call.
  - `fanout <out> count=<n>:` runs its indented body n times independently; inside the body, the
    variable `branch` holds "1".."n"; <out> becomes the list of each branch's last value. n is at
    most 16.
  - `loop <carry> rounds=<n>:` repeats its indented body n times; reassigning <carry> inside the
    body threads a value through rounds. n is at most 8.
  - `extract <out> = <var> marker=CODE_TAGS` pulls a delimited block (<CODE>...</CODE>; also
    SOLUTION_TAGS or FENCED) out of a variable's text.
  - `exec <out> = <var> timeout=<seconds>` runs the variable's text as Python code in a sandbox;
    captured stdout plus the value of the code's `output` variable land in <out>.
  - `return <var>` ends the program with that variable as the answer; exactly one, as the last step.
- The user's question is always available as the variable `query`. Every variable must be assigned
  before it is used; every template placeholder must be bound at the call site.

Example program:

mas 3_sample_decide

prompt solve """
Task: {query}

Please solve the task step by step, showing your reasoning before stating the final answer.
"""

prompt decide """
Task:
{query}

{#each sols}
Solution {i+1}:
{item}

{/each}
Given all the above solutions, reason over them carefully and provide a final answer to the task.
"""

fanout sols count=3:
  call s = solve(query=query) role=solver
call final = decide(query=query, sols=sols) role=decider
return final'''
