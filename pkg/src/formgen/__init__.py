"""formgen: long-form token-music generation with explicit musical form.

Submodules
----------
forms         part-based form documents: parse, validate, serialize
rvq           residual vector quantization codec and frame-rate math
patterns      token-grid interleavings (parallel / delay / flatten)
backends      toy and remote autoregressive token-model backends
sampling      CFG blending, transition/decay schedules, the decode loop
synth         toy sinusoid synthesizer and WAV io
orchestrator  form -> plan -> rendered piece with manifest
optimizer     two-phase LLM prompt optimization scored by MOS
mos           rating aggregation, rater qualification, group comparison
service       HTTP rating-task service
cli           operator entry point (``formgen`` command)
"""

__version__ = "0.1.0"
