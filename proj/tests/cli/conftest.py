import json
import os
import pathlib
import subprocess

import jsonschema
import pytest

HERE = pathlib.Path(__file__).resolve().parent
DATA = HERE / "data"
SCHEMA = json.loads((HERE.parents[1] / "schemas" / "report.schema.json").read_text())


class Result:
    def __init__(self, proc):
        self.code = proc.returncode
        self.stdout = proc.stdout
        self.stderr = proc.stderr

    def json(self):
        doc = json.loads(self.stdout)
        jsonschema.validate(doc, SCHEMA)
        return doc


@pytest.fixture(scope="session")
def binary():
    path = os.environ.get("METASTAB_BIN")
    if not path:
        path = str(HERE.parents[1] / "build" / "metastab")
    if not pathlib.Path(path).exists():
        pytest.skip("metastab binary not built")
    return str(pathlib.Path(path).resolve())


@pytest.fixture
def run(binary, tmp_path):
    def _run(*args, env=None, cwd=None):
        full_env = dict(os.environ)
        full_env.pop("METASTAB_TOL", None)
        full_env.update(env or {})
        proc = subprocess.run([binary, *map(str, args)], capture_output=True, text=True,
                              env=full_env, cwd=cwd or tmp_path, timeout=300)
        return Result(proc)

    return _run


@pytest.fixture
def data():
    return DATA


@pytest.fixture
def schema():
    return SCHEMA
