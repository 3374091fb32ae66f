"""masgen: build, execute, and learn query-adaptive multi-agent systems.

The package has three layers:

* ``masgen.dsl`` — MASL, the workflow language one program per multi-agent
  system, plus canonical serialization and fingerprints.
* ``masgen.runtime`` / ``masgen.backends`` / ``masgen.sandbox`` — execution of
  a program against a chat-completion backend with transcripts and budgets.
* ``masgen.corpus`` / ``masgen.evaluator`` / ``masgen.pipeline`` /
  ``masgen.generator`` — the data side: verifiable query pools, binary
  query-program scoring, consistency-oriented pair selection and refinement,
  SFT export, and the generator-driven inference frontend.
"""

__version__ = "0.1.0"
