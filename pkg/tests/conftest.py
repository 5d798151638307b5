import numpy as np
import pytest

from atomic_data import default_constants, default_rows
from config_manager import preset
from constants import Preset
from count_statistics import PreparedState, count_distribution, normalization_cutoff
from inference import CountHistogram
from output_manager import OutputManager


@pytest.fixture
def dline():
    return default_constants()


@pytest.fixture
def rows():
    return default_rows()


@pytest.fixture
def final_config():
    return preset(Preset.FINAL)


@pytest.fixture
def sigma_config():
    return preset(Preset.SIGMA)


@pytest.fixture
def pi_config():
    return preset(Preset.PI)


@pytest.fixture
def low_depth_config():
    return preset(Preset.LOW_DEPTH)


def synthetic_histogram(params, n_shots, seed, prepared=PreparedState.BRIGHT):
    """Multinomial draw of `n_shots` counts from the analytic distribution."""
    counts = np.arange(normalization_cutoff(params) + 1)
    probs = count_distribution(counts, params, prepared)
    tallies = np.random.default_rng(seed).multinomial(n_shots, probs / probs.sum())
    bins = {int(n): int(t) for n, t in zip(counts, tallies) if t}
    return CountHistogram(bins, n_shots, prepared)


@pytest.fixture
def make_histogram():
    return synthetic_histogram


_JSON_TYPES = {
    "object": lambda v: isinstance(v, dict),
    "array": lambda v: isinstance(v, list),
    "string": lambda v: isinstance(v, str),
    "boolean": lambda v: isinstance(v, bool),
    "integer": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "null": lambda v: v is None,
}


def schema_errors(value, schema, root=None, path="$"):
    """Violations of the keywords our bundled schemas use, as readable strings."""
    root = schema if root is None else root
    if "$ref" in schema:
        target = root
        for part in schema["$ref"].lstrip("#/").split("/"):
            target = target[part]
        return schema_errors(value, target, root, path)
    errors = []
    types = schema.get("type")
    if types is not None:
        types = [types] if isinstance(types, str) else types
        if not any(_JSON_TYPES[t](value) for t in types):
            return [f"{path}: {value!r} is not of type {types}"]
    if "const" in schema and value != schema["const"]:
        errors.append(f"{path}: expected {schema['const']!r}")
    if "enum" in schema and value not in schema["enum"]:
        errors.append(f"{path}: {value!r} not in {schema['enum']}")
    if _JSON_TYPES["number"](value):
        if "minimum" in schema and value < schema["minimum"]:
            errors.append(f"{path}: {value} < {schema['minimum']}")
        if "maximum" in schema and value > schema["maximum"]:
            errors.append(f"{path}: {value} > {schema['maximum']}")
        if "exclusiveMinimum" in schema and value <= schema["exclusiveMinimum"]:
            errors.append(f"{path}: {value} <= {schema['exclusiveMinimum']}")
        if "exclusiveMaximum" in schema and value >= schema["exclusiveMaximum"]:
            errors.append(f"{path}: {value} >= {schema['exclusiveMaximum']}")
    if isinstance(value, list):
        if len(value) < schema.get("minItems", 0) or len(value) > schema.get("maxItems", len(value)):
            errors.append(f"{path}: length {len(value)} out of range")
        if "items" in schema:
            for i, item in enumerate(value):
                errors += schema_errors(item, schema["items"], root, f"{path}[{i}]")
    if isinstance(value, dict):
        properties = schema.get("properties", {})
        errors += [f"{path}: missing '{key}'" for key in schema.get("required", []) if key not in value]
        extra = schema.get("additionalProperties", True)
        for key, item in value.items():
            if key in properties:
                errors += schema_errors(item, properties[key], root, f"{path}.{key}")
            elif extra is False:
                errors.append(f"{path}: unexpected '{key}'")
            elif isinstance(extra, dict):
                errors += schema_errors(item, extra, root, f"{path}.{key}")
    return errors


@pytest.fixture
def schema_violations():
    """Check decoded JSON against a bundled schema by name."""
    def check(data, name):
        return schema_errors(data, OutputManager.load_schema(name))
    return check
