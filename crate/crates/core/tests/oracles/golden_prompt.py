# Renders fixtures/golden_prompt.txt from the template with a single-pass
# substitution, independently of the Rust implementation.
import re
from pathlib import Path

here = Path(__file__).resolve().parent
template = (here / "../../templates/patch_prompt.txt").read_text()
example = (here / "../../templates/example.patch").read_text().rstrip("\n")

values = {
    "problem_statement": "QuerySet.union() drops {repo} ordering when combined with values().",
    "repo": "django/django",
    "base_commit": "4c086d7da4c5cf23935a5340dbb9a8d6835cf7cc",
    "retrieved_context": "### Memory 1: django__django-11001 (django/django)\nsuccess: true",
    "hints_text": "Look at compiler.get_combinator_sql",
    "text_files": "django/db/models/query.py\ndjango/db/models/sql/compiler.py",
    "patch_example_content": example,
}

out = re.sub(r"\{(\w+)\}", lambda m: values.get(m.group(1), m.group(0)), template)
(here / "../fixtures/golden_prompt.txt").write_text(out)
print(len(out))
