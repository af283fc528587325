#!/usr/bin/env python3
"""Regenerates core/src/prompt_templates.inc from tests/fixtures/prompts/*.txt."""
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent
IDS = ["mobile_eval", "web_eval", "osgenesis_mobile_cot", "osgenesis_web_cot", "vwa_cot", "mind2web_cot"]

out = ["// Generated by tools/gen_prompt_templates.py; do not edit by hand.", ""]
for ident in IDS:
    body = (ROOT / "tests/fixtures/prompts" / f"{ident}.txt").read_text()
    assert ")TPL\"" not in body
    out.append(f"constexpr std::string_view k_{ident} = R\"TPL({body})TPL\";")
    out.append("")
(ROOT / "core/src/prompt_templates.inc").write_text("\n".join(out))
