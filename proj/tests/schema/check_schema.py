"""Checks script files against docs/schema/stagecraft-script.v1.schema.json."""

import json
import sys
from pathlib import Path

try:
    import jsonschema
except ImportError:
    print("jsonschema not installed; skipping")
    sys.exit(77)

root = Path(sys.argv[1])
schema = json.loads((root / "docs/schema/stagecraft-script.v1.schema.json").read_text())
validator = jsonschema.Draft202012Validator(schema)
validator.check_schema(schema)

good = [root / "scripts/harrow_quay.json", root / "tests/golden/generation_script.json"]
for path in good:
    errors = list(validator.iter_errors(json.loads(path.read_text())))
    if errors:
        sys.exit(f"{path}: {errors[0].message}")

# Structural breakage the schema must catch on its own.
base = json.loads(good[0].read_text())
broken = {
    "two players": lambda d: d["roster"][1].update(is_player=True),
    "no scenes key": lambda d: d.pop("scenes"),
    "bad mode": lambda d: d["scenes"][0].update(mode="cinematic"),
    "plot without id": lambda d: d["scenes"][0]["plots"][0].pop("id"),
    "wrong schema id": lambda d: d.update(schema="stagecraft-script/v2"),
}
for name, mutate in broken.items():
    doc = json.loads(json.dumps(base))
    mutate(doc)
    if validator.is_valid(doc):
        sys.exit(f"schema accepted a script with {name}")
print(f"{len(good)} scripts valid, {len(broken)} broken variants rejected")
