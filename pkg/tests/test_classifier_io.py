"""TensorFile format and the backend invocation protocol."""

from __future__ import annotations

import json
import os
import stat
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepspec import tensorfile
from sleepspec.backend import (
    BackendDescriptor,
    BackendFailed,
    CapabilityMissing,
    RowNotNormalized,
    invoke_input_grad,
    invoke_predict,
    invoke_train,
)
from sleepspec.refcnn import init_xavier, save_checkpoint
from sleepspec.refcnn.service import backend_input_grad, backend_predict
from tests.backend_conformance import build_fixture_corpus, run_conformance


class TestTensorFile:
    @pytest.mark.parametrize(
        "dtype,maker",
        [
            (np.float32, lambda rng, shape: rng.standard_normal(shape).astype(np.float32)),
            (np.uint8, lambda rng, shape: rng.integers(0, 256, shape).astype(np.uint8)),
            (np.int64, lambda rng, shape: rng.integers(-(2**40), 2**40, shape)),
        ],
    )
    def test_round_trip_bit_exact(self, tmp_path, dtype, maker):
        rng = np.random.default_rng(0)
        for shape in [(3,), (2, 5), (2, 3, 4, 3), (1, 1, 1, 1, 1, 1, 1, 1)]:
            array = maker(rng, shape)
            path = tmp_path / "t.tnsr"
            tensorfile.write_tensor(path, array)
            back = tensorfile.read_tensor(path)
            assert back.dtype == dtype
            assert back.shape == array.shape
            assert back.tobytes() == array.tobytes()

    @given(st.lists(st.integers(min_value=1, max_value=5), min_size=1, max_size=4))
    @settings(max_examples=30, deadline=None)
    def test_round_trip_property(self, dims):
        import tempfile

        rng = np.random.default_rng(sum(dims))
        array = rng.standard_normal(dims).astype(np.float32)
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "x.tnsr")
            tensorfile.write_tensor(path, array)
            np.testing.assert_array_equal(tensorfile.read_tensor(path), array)

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(tensorfile.MalformedTensor):
            tensorfile.write_tensor(tmp_path / "x.tnsr", np.zeros(3, dtype=np.float16))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.tnsr"
        path.write_bytes(b"NOTMAGIC" + b"\x01\x01" + b"\x00" * 16)
        with pytest.raises(tensorfile.MalformedTensor):
            tensorfile.read_tensor(path)

    def test_payload_length_checked(self, tmp_path):
        path = tmp_path / "x.tnsr"
        tensorfile.write_tensor(path, np.zeros((2, 2), dtype=np.float32))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(tensorfile.MalformedTensor):
            tensorfile.read_tensor(path)

    def test_rank_limit(self, tmp_path):
        with pytest.raises(tensorfile.MalformedTensor):
            tensorfile.write_tensor(
                tmp_path / "x.tnsr", np.zeros((1,) * 9, dtype=np.float32)
            )


def write_mock_backend(tmp_path, body: str) -> list[str]:
    """A python-script mock backend; returns the argv prefix."""
    script = tmp_path / "mock_backend.py"
    script.write_text(
        textwrap.dedent(
            """\
            import argparse, json, struct, sys
            import numpy as np

            def write_tensor(path, array):
                array = np.ascontiguousarray(array)
                code = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2, np.dtype(np.int64): 3}[array.dtype]
                with open(path, "wb") as fh:
                    fh.write(b"TNSR0001" + struct.pack("<BB", code, array.ndim))
                    fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
                    fh.write(array.tobytes())

            def manifest_len(path):
                with open(path) as fh:
                    return sum(1 for line in fh if line.strip())

            parser = argparse.ArgumentParser()
            sub = parser.add_subparsers(dest="command", required=True)
            t = sub.add_parser("train"); t.add_argument("--train", required=True); t.add_argument("--val", required=True); t.add_argument("--out", required=True); t.add_argument("--config")
            for name in ("predict", "input-grad"):
                p = sub.add_parser(name); p.add_argument("--model", required=True); p.add_argument("--manifest", required=True); p.add_argument("--out", required=True)
            args = parser.parse_args()
            """
        )
        + textwrap.dedent(body)
    )
    return [sys.executable, str(script)]


CANNED_OK = """\
import pathlib
if args.command == "train":
    for p in (args.train, args.val):
        if not pathlib.Path(p).exists():
            print("missing manifest", file=sys.stderr); sys.exit(1)
    out = pathlib.Path(args.out); out.mkdir(parents=True, exist_ok=True)
    meta = {"backend_name": "mock", "mode": "external", "classes": ["W","N1","N2","N3","R"], "created_at": "2000-01-01T00:00:00Z", "config": {}}
    (out / "model.meta.json").write_text(json.dumps(meta))
elif args.command == "predict":
    n = manifest_len(args.manifest)
    write_tensor(args.out, np.full((n, 5), 0.2, dtype=np.float32))
else:
    n = manifest_len(args.manifest)
    write_tensor(args.out, np.ones((n, 32, 32, 3), dtype=np.float32))
"""


class TestProtocol:
    def test_builtin_conformance_in_process(self, tmp_path):
        backend = BackendDescriptor(
            mode="builtin",
            config={
                "arch": "cm4 fcr8 fcs5",
                "batch_size": 10,
                "learning_rate": 1e-3,
                "max_epochs": 2,
                "patience": 1,
                "seed": 0,
            },
        )
        artifacts = run_conformance(backend, tmp_path)
        assert artifacts["meta"]["backend_name"] == "refcnn"

    def test_builtin_conformance_as_subprocess(self, tmp_path):
        backend = BackendDescriptor(
            mode="external",
            executable=(sys.executable, "-m", "sleepspec.backend_cli"),
        )
        # config file flows through --config
        config = {
            "arch": "cm4 fcr8 fcs5",
            "batch_size": 10,
            "learning_rate": 1e-3,
            "max_epochs": 2,
            "patience": 1,
            "seed": 0,
        }
        backend = BackendDescriptor(
            mode="external",
            executable=(sys.executable, "-m", "sleepspec.backend_cli"),
            config=config,
        )
        run_conformance(backend, tmp_path)

    def test_builtin_subprocess_grads_match_in_process(self, tmp_path):
        manifest, train_m, val_m = build_fixture_corpus(tmp_path, n_bins=16)
        model_dir = tmp_path / "model"
        params = init_xavier("cm4 fcr8 fcs5", input_hw=(16, 16), seed=5)
        save_checkpoint(params, model_dir)
        in_process = backend_input_grad(
            model_dir, manifest, tmp_path / "grads_inproc.tnsr"
        )
        backend = BackendDescriptor(
            mode="external",
            executable=(sys.executable, "-m", "sleepspec.backend_cli"),
        )
        via_subprocess = invoke_input_grad(
            backend, model_dir, manifest, tmp_path / "grads_sub.tnsr"
        )
        assert via_subprocess.tobytes() == in_process.tobytes()

    def test_mock_external_backend_accepted(self, tmp_path):
        exe = write_mock_backend(tmp_path, CANNED_OK)
        backend = BackendDescriptor(mode="external", executable=tuple(exe))
        run_conformance(backend, tmp_path)

    def test_wrong_rank_rejected(self, tmp_path):
        body = CANNED_OK.replace(
            'np.ones((n, 32, 32, 3), dtype=np.float32)',
            'np.ones((n, 32, 32), dtype=np.float32)',
        )
        exe = write_mock_backend(tmp_path, body)
        backend = BackendDescriptor(mode="external", executable=tuple(exe))
        manifest, train_m, val_m = build_fixture_corpus(tmp_path)
        model_dir = tmp_path / "model"
        invoke_train(backend, train_m, val_m, model_dir)
        with pytest.raises(tensorfile.MalformedTensor):
            invoke_input_grad(backend, model_dir, manifest, tmp_path / "g.tnsr")

    def test_unnormalized_rows_rejected(self, tmp_path):
        body = CANNED_OK.replace(
            'np.full((n, 5), 0.2, dtype=np.float32)',
            'np.full((n, 5), 0.3, dtype=np.float32)',
        )
        exe = write_mock_backend(tmp_path, body)
        backend = BackendDescriptor(mode="external", executable=tuple(exe))
        manifest, train_m, val_m = build_fixture_corpus(tmp_path)
        model_dir = tmp_path / "model"
        invoke_train(backend, train_m, val_m, model_dir)
        with pytest.raises(RowNotNormalized):
            invoke_predict(backend, model_dir, manifest, tmp_path / "p.tnsr")

    def test_nonzero_exit_reports_stderr(self, tmp_path):
        body = 'print("boom", file=sys.stderr); sys.exit(3)\n'
        exe = write_mock_backend(tmp_path, body)
        backend = BackendDescriptor(mode="external", executable=tuple(exe))
        manifest, train_m, val_m = build_fixture_corpus(tmp_path)
        with pytest.raises(BackendFailed, match="boom"):
            invoke_train(backend, train_m, val_m, tmp_path / "model")

    def test_capability_gate(self, tmp_path):
        backend = BackendDescriptor(
            mode="builtin", capabilities=frozenset({"train", "predict"})
        )
        with pytest.raises(CapabilityMissing):
            invoke_input_grad(backend, tmp_path, tmp_path / "m.jsonl", tmp_path / "g")

    def test_alignment_under_concatenation(self, tmp_path):
        from sleepspec.dataset import read_manifest, write_manifest

        manifest, _, _ = build_fixture_corpus(tmp_path, n_bins=16)
        entries = read_manifest(manifest)
        half_a, half_b = entries[:4], entries[4:]
        pa, pb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        write_manifest(half_a, pa)
        write_manifest(half_b, pb)
        model_dir = tmp_path / "model"
        params = init_xavier("cm4 fcr8 fcs5", input_hw=(16, 16), seed=6)
        save_checkpoint(params, model_dir)
        probs_a = backend_predict(model_dir, pa, tmp_path / "pa.tnsr")
        probs_b = backend_predict(model_dir, pb, tmp_path / "pb.tnsr")
        probs_all = backend_predict(model_dir, manifest, tmp_path / "pall.tnsr")
        np.testing.assert_allclose(
            probs_all, np.concatenate([probs_a, probs_b]), atol=1e-6
        )
