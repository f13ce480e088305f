import asyncio
import json
from pathlib import Path

import pytest

from src.bean.ConfigModel import PipelineConfig
from src.bean.DomainModel import validate_example
from src.client.BackendClient import LocalBackendClient, ScriptedBackendClient
from src.client.BackendRegistry import BackendRegistry
from src.client.InferenceCache import InferenceCache

FIXTURES = Path(__file__).parent / "fixtures"


def run(coro):
    return asyncio.run(coro)


def load_fixture_examples(name):
    lines = (FIXTURES / name).read_text(encoding="utf-8").splitlines()
    return [validate_example(json.loads(line)) for line in lines if line.strip()]


def scripted_registry(name, cache_dir=None):
    client = ScriptedBackendClient.from_file(FIXTURES / f"{name}_backend.json", backend_id=name)
    cache = InferenceCache(cache_dir) if cache_dir else None
    return BackendRegistry({name: client}, cache)


def scripted_pipeline(name, **overrides):
    backends = {f"{op}_backend_id": name for op in ("annotator", "qg", "qa", "lerc", "nli")}
    return PipelineConfig(**{**backends, **overrides})


def heuristic_registry(cache_dir=None):
    cache = InferenceCache(cache_dir) if cache_dir else None
    return BackendRegistry({"heuristic": LocalBackendClient("heuristic")}, cache)


@pytest.fixture
def table1_example():
    return load_fixture_examples("table1.jsonl")[0]


@pytest.fixture
def table2_example():
    return load_fixture_examples("table2.jsonl")[0]


@pytest.fixture
def corpus_examples():
    examples = []
    for path in sorted((FIXTURES / "corpus").glob("*.jsonl")):
        examples.extend(validate_example(json.loads(line), require_label=True)
                        for line in path.read_text(encoding="utf-8").splitlines() if line.strip())
    return examples
