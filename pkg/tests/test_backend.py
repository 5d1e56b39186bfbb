import os
import subprocess
import sys

import numpy as np
import pytest

from qadv import _backend
from qadv.fileio import atomic_write_text, fmt, pgm_bytes, read_pgm, sha256_array, sha256_file, write_pgm


def backend_in_subprocess(env_value):
    env = dict(os.environ)
    env.pop("QADV_PURE_PYTHON", None)
    if env_value is not None:
        env["QADV_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "import qadv; print(qadv.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


class TestSelection:
    def test_env_forces_fallback(self):
        assert backend_in_subprocess("1") == "python"

    @pytest.mark.skipif(not _backend.HAVE_CYTHON, reason="extension not built")
    def test_compiled_preferred(self):
        assert backend_in_subprocess(None) == "cython"

    def test_default_backend(self):
        out = _backend.simulate_batch(1, [0], [0], [-1], [[np.pi]], backend=None)
        np.testing.assert_allclose(np.abs(out[0]), [0, 1], atol=1e-15)


class TestFileIO:
    def test_pgm_round_trip(self, tmp_path):
        img = np.linspace(0, 1, 12).reshape(3, 4)
        write_pgm(tmp_path / "a.pgm", img)
        back = read_pgm(tmp_path / "a.pgm")
        np.testing.assert_allclose(back / 255, img, atol=0.5 / 255)

    def test_pgm_needs_2d(self):
        with pytest.raises(ValueError):
            pgm_bytes(np.zeros(4))

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        atomic_write_text(tmp_path / "sub" / "x.txt", "hello")
        assert [p.name for p in (tmp_path / "sub").iterdir()] == ["x.txt"]
        assert len(sha256_file(tmp_path / "sub" / "x.txt")) == 64

    def test_fmt_round_trips(self):
        for v in (0.1, 1 / 3, -2.5e-300, 12345.678):
            assert float(fmt(v)) == v

    def test_array_hash_sees_shape(self):
        a = np.arange(6.0)
        assert sha256_array(a) != sha256_array(a.reshape(2, 3))
