"""Runs every CLI subcommand on a tiny configuration and validates the JSON it emits."""
import json
import math
import pathlib
import subprocess
import sys
import tempfile

import jsonschema
from referencing import Registry, Resource


def load_registry(schema_dir):
    schemas = {}
    for path in sorted(schema_dir.glob("*.schema.json")):
        schema = json.loads(path.read_text())
        jsonschema.Draft202012Validator.check_schema(schema)
        schemas[schema["$id"]] = schema
    registry = Registry().with_resources((k, Resource.from_contents(v)) for k, v in schemas.items())
    return schemas, registry


def all_finite(value):
    if isinstance(value, float):
        return math.isfinite(value)
    if isinstance(value, dict):
        return all(all_finite(v) for v in value.values())
    if isinstance(value, list):
        return all(all_finite(v) for v in value)
    return True


def main():
    cli, schema_dir = pathlib.Path(sys.argv[1]), pathlib.Path(sys.argv[2])
    schemas, registry = load_registry(schema_dir)
    failures = []
    checked = 0

    def check(doc, schema_id, label):
        nonlocal checked
        validator = jsonschema.Draft202012Validator(schemas[schema_id], registry=registry)
        errors = sorted(validator.iter_errors(doc), key=str)
        if errors:
            failures.append(f"{label}: {errors[0].message}")
        if not all_finite(doc):
            failures.append(f"{label}: non-finite value")
        checked += 1

    def run(*args):
        proc = subprocess.run([str(cli), *args], capture_output=True, text=True)
        if proc.returncode != 0:
            failures.append(f"{' '.join(args)} exited {proc.returncode}: {proc.stderr.strip()}")
        return proc

    with tempfile.TemporaryDirectory() as tmp:
        t = pathlib.Path(tmp)
        config = {"model": {"gla": {"dim": 8, "num_blocks": 2, "coarse_extent": [2, 2], "samples": 4,
                                    "cell_fine": 2}, "train_extent": [32, 32]},
                  "train": {"epochs": 1, "batch_size": 2}, "count": 4, "extent": [32, 32]}
        check(config, "config.schema.json", "config")
        (t / "config.json").write_text(json.dumps(config))
        cfg = str(t / "config.json")
        run("gen", "--config", cfg, "--seed", "3", "--out", str(t / "data"))
        run("gen", "--config", cfg, "--seed", "4", "--count", "2", "--out", str(t / "holdout"))
        run("train", "--config", cfg, "--seed", "1", "--data", str(t / "data"), "--holdout", str(t / "holdout"),
            "--out", str(t / "weights"))
        run("match", "--weights", str(t / "weights"), "--pair", str(t / "data" / "pair_0"), "--out",
            str(t / "match"), "--viz")
        run("eval", "--weights", str(t / "weights"), "--data", str(t / "holdout"), "--out", str(t / "eval.json"))
        run("bench", "--sizes", "32,64", "--timing", "--out", str(t / "bench.json"))
        run("ablate", "--config", cfg, "--seed", "2", "--data", str(t / "data"), "--holdout", str(t / "holdout"),
            "--out", str(t / "ablation.json"))

        def load(p):
            return json.loads((t / p).read_text())

        try:
            check(load("data/manifest.json"), "dataset_manifest.schema.json", "manifest")
            check(load("data/pair_0/meta.json"), "pair_meta.schema.json", "pair meta")
            check(load("weights/manifest.json"), "weights_manifest.schema.json", "weights manifest")
            check(load("weights/metrics.json"), "metrics.schema.json", "metrics")
            check(load("match/match_summary.json"), "match_summary.schema.json", "match summary")
            for n, line in enumerate((t / "match" / "matches.jsonl").read_text().splitlines()):
                m = json.loads(line)
                check(m, "match_line.schema.json", f"match line {n}")
                if not (0 <= m["xa"] <= 31 and 0 <= m["ya"] <= 31 and 0 <= m["xb"] <= 31 and 0 <= m["yb"] <= 31):
                    failures.append(f"match line {n}: coordinate out of bounds")
            check(load("eval.json"), "eval_report.schema.json", "eval report")
            check(load("bench.json"), "bench_report.schema.json", "bench report")
            check(load("ablation.json"), "ablation_report.schema.json", "ablation report")
        except (OSError, json.JSONDecodeError) as e:
            failures.append(f"missing or unreadable output: {e}")

        check({"error": "x", "epoch": 0, "step": 1, "pair_seeds": [5], "config": config},
              "diverged_batch.schema.json", "diverged batch sample")

    for f in failures:
        print("FAIL", f)
    print(f"validated {checked} documents, {len(failures)} failures")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
