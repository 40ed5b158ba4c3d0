import json

import numpy as np
import pytest

from solokit.io import (InputError, format_report, instances_from_json, instances_to_json, read_instances,
                        read_tensor, write_instances, write_tensor)
from solokit.masks import BinaryMask, Instance, InstanceSet

from conftest import random_set


def test_json_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    s = random_set(rng, 12, 9, 13, n_classes=4)
    s = s.with_instances(list(s) + [Instance(0.1 + 0.2, 0, BinaryMask.zeros(9, 13)),
                                    Instance(1 / 3, 1, BinaryMask(np.ones((9, 13))))])
    path = tmp_path / "set.json"
    write_instances(path, s)
    back = read_instances(path)
    assert back == s
    assert [i.score for i in back] == [i.score for i in s]


def test_document_shape():
    s = InstanceSet(2, 2, (Instance(0.5, 3, BinaryMask([[0, 1], [0, 0]])),))
    assert instances_to_json(s) == {"height": 2, "width": 2,
                                    "instances": [{"score": 0.5, "class": 3, "counts": [2, 1, 1]}]}


@pytest.mark.parametrize("doc,field", [
    ({"width": 2, "instances": []}, "height"),
    ({"height": 2, "width": 2, "instances": [{"class": 0, "counts": [4]}]}, "score"),
    ({"height": 2, "width": 2, "instances": [{"score": 0.5, "class": "a", "counts": [4]}]}, "class"),
    ({"height": 2, "width": 2, "instances": [{"score": 0.5, "class": 0, "counts": [3]}]}, "counts"),
    ({"height": 2, "width": 2, "instances": [{"score": 1.5, "class": 0, "counts": [4]}]}, "score"),
])
def test_malformed_names_field(doc, field):
    with pytest.raises(InputError, match=field):
        instances_from_json(doc)


def test_bad_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(InputError):
        read_instances(p)


def test_tensor_roundtrip(tmp_path):
    t = np.random.default_rng(1).normal(size=(3, 4, 5))
    p = tmp_path / "t.bin"
    write_tensor(p, t)
    raw = p.read_bytes()
    assert raw[:12] == np.array([3, 4, 5], dtype="<u4").tobytes()
    assert len(raw) == 12 + 8 * t.size
    np.testing.assert_array_equal(read_tensor(p), t)


def test_tensor_truncated(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(np.array([2, 2, 1], dtype="<u4").tobytes() + b"\0" * 8)
    with pytest.raises(InputError):
        read_tensor(p)


def test_report_shortest_roundtrip():
    text = format_report({"a": 0.1 + 0.2, "b": 3, "c": 1.0})
    assert text == "a=0.30000000000000004\nb=3\nc=1.0\n"
    assert float(text.splitlines()[0].split("=")[1]) == 0.1 + 0.2
