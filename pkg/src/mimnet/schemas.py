"""Versioned JSON schemas for every report the CLI emits.

Each schema's ``$id`` names the format and version; the corresponding
payloads embed the same tag in their ``schema`` field.
"""

METRICS_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "$id": "mimnet-metrics/1",
    "type": "object",
    "required": ["schema", "n_samples", "iou", "niou", "pd", "fa", "roc", "auc"],
    "properties": {
        "schema": {"const": "mimnet-metrics/1"},
        "n_samples": {"type": "integer", "minimum": 0},
        "iou": {"type": "number", "minimum": 0, "maximum": 1},
        "niou": {"type": "number", "minimum": 0, "maximum": 1},
        "pd": {"type": "number", "minimum": 0, "maximum": 1},
        "fa": {"type": "number", "minimum": 0, "maximum": 1},
        "fa_per_million": {"type": "number", "minimum": 0},
        "roc": {
            "type": "array",
            "items": {
                "type": "array",
                "items": {"type": "number", "minimum": 0, "maximum": 1},
                "minItems": 2,
                "maxItems": 2,
            },
        },
        "auc": {"type": "number", "minimum": 0, "maximum": 1},
    },
    "additionalProperties": False,
}

FLOPS_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "$id": "mimnet-flops/1",
    "type": "object",
    "required": ["schema", "dims", "convention", "analytic", "measured"],
    "properties": {
        "schema": {"const": "mimnet-flops/1"},
        "dims": {
            "type": "object",
            "required": ["n", "m", "c", "d", "state_dim", "inner_width"],
            "properties": {k: {"type": "integer", "minimum": 0}
                           for k in ("n", "m", "c", "d", "state_dim", "inner_width")},
        },
        "convention": {"type": "string"},
        "analytic": {
            "type": "object",
            "required": ["ssm", "mim_block", "transformer_block", "per_stage"],
            "properties": {
                "ssm": {"type": "number", "minimum": 0},
                "mim_block": {"type": "number", "minimum": 0},
                "transformer_block": {"type": "number", "minimum": 0},
                "per_stage": {"type": "array", "items": {"type": "object"}},
            },
        },
        "measured": {
            "type": "object",
            "required": ["total", "encoder", "breakdown"],
            "properties": {
                "total": {"type": "number", "minimum": 0},
                "encoder": {"type": "number", "minimum": 0},
                "breakdown": {
                    "type": "object",
                    "additionalProperties": {
                        "type": "object",
                        "additionalProperties": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
    },
    "additionalProperties": False,
}

BENCH_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "$id": "mimnet-bench/1",
    "type": "object",
    "required": ["schema", "repeats", "image_hw", "mean_seconds", "stddev_seconds"],
    "properties": {
        "schema": {"const": "mimnet-bench/1"},
        "repeats": {"type": "integer", "minimum": 1},
        "image_hw": {
            "type": "array",
            "items": {"type": "integer", "minimum": 1},
            "minItems": 2,
            "maxItems": 2,
        },
        "mean_seconds": {"type": "number", "minimum": 0},
        "stddev_seconds": {"type": "number", "minimum": 0},
        "parameter_count": {"type": "integer", "minimum": 0},
    },
    "additionalProperties": False,
}

MANIFEST_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "$id": "mimnet-manifest/1",
    "type": "object",
    "required": ["schema", "samples", "split", "seed"],
    "properties": {
        "schema": {"const": "mimnet-manifest/1"},
        "samples": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "image", "mask"],
                "properties": {
                    "id": {"type": "string"},
                    "image": {"type": "string"},
                    "mask": {"type": "string"},
                },
                "additionalProperties": False,
            },
        },
        "split": {
            "type": "object",
            "required": ["train", "test"],
            "properties": {
                "train": {"type": "array", "items": {"type": "string"}},
                "test": {"type": "array", "items": {"type": "string"}},
            },
            "additionalProperties": False,
        },
        "seed": {"type": "integer"},
    },
    "additionalProperties": False,
}

ALL_SCHEMAS = {
    "mimnet-metrics/1": METRICS_SCHEMA,
    "mimnet-flops/1": FLOPS_SCHEMA,
    "mimnet-bench/1": BENCH_SCHEMA,
    "mimnet-manifest/1": MANIFEST_SCHEMA,
}
