"""Generators, BSNR noise, metrics, and file-format round trips."""

import math

import numpy as np
import pytest

from tvbayes.errors import FileFormatError
from tvbayes.harness import (
    RunReport,
    add_noise_bsnr,
    make_image_2d,
    make_signal_1d,
    metrics,
    read_pgm,
    read_signal_csv,
    read_table_csv,
    shepp_logan_value,
    write_pgm,
    write_signal_csv,
    write_table_csv,
)
from tvbayes.operators import LatticeSpec, build_diff_operator


class TestSignals:
    def test_blocky_plateaus(self):
        sig = make_signal_1d("blocky", 100)
        assert sig.shape == (100,)
        assert sig.min() >= 0.0 and sig.max() <= 1.0
        assert len(np.unique(sig)) >= 3  # at least 3 plateaus

    def test_blocky_difference_sparsity(self):
        for n in (64, 100, 250):
            sig = make_signal_1d("blocky", n)
            d = build_diff_operator(LatticeSpec(1, n))
            jumps = np.count_nonzero(d.matvec(sig))
            assert jumps <= len(np.unique(sig)) + 1

    def test_blocky_smooth_has_curved_segment(self):
        sig = make_signal_1d("blocky_smooth", 200)
        t = np.arange(200) / 200
        inside = (t >= 0.5) & (t < 0.8)
        second = sig[2:] - 2 * sig[1:-1] + sig[:-2]
        assert np.all(np.abs(second[inside[1:-1]]) > 0)
        assert sig.min() >= 0.0 and sig.max() <= 1.0

    def test_deterministic(self):
        np.testing.assert_array_equal(make_signal_1d("blocky", 100),
                                      make_signal_1d("blocky", 100))

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            make_signal_1d("blocky", 4)
        with pytest.raises(ValueError):
            make_signal_1d("triangle", 100)


class TestImages:
    def test_blocks42_piecewise_constant(self):
        img = make_image_2d("blocks42")
        assert img.shape == (42, 42)
        assert img.min() >= 0.0 and img.max() <= 1.0
        lat = LatticeSpec(42, 42)
        d = build_diff_operator(lat)
        nonzero = np.count_nonzero(d.matvec(lat.to_stacked(img)))
        assert nonzero < 0.2 * d.n_rows  # differences are sparse

    def test_blocks42_scales(self):
        img = make_image_2d("blocks42", 84)
        assert img.shape == (84, 84)

    def test_shepp_logan_membership_oracle(self):
        img = make_image_2d("shepp_logan", 200)
        assert img.shape == (200, 200)
        coords = (2.0 * np.arange(200) + 1.0 - 200) / 200
        rng = np.random.default_rng(0)
        for _ in range(200):
            i, j = rng.integers(200), rng.integers(200)
            want = shepp_logan_value(coords[j], -coords[i])
            assert img[i, j] == pytest.approx(want, abs=1e-12)

    def test_shepp_logan_skull_interior_above_background(self):
        img = make_image_2d("shepp_logan", 200)
        # center of the phantom sits inside the two big ellipses
        assert img[100, 100] > 0.0
        # corners are background
        assert img[0, 0] == 0.0 and img[-1, -1] == 0.0
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_shepp_logan_skull_ring(self):
        # the band between the two outermost ellipses is the brightest
        # structure (value 1); it shows up on the vertical midline near y=0.9
        img = make_image_2d("shepp_logan", 200)
        assert img.max() == pytest.approx(1.0)
        column = img[:, 100]
        assert column[4] == 0.0          # above the skull: background
        assert np.any(column[5:15] == 1.0)  # skull ring
        assert column[100] == pytest.approx(0.2, abs=1e-12)  # interior

    def test_shepp_logan_centered_ellipses_mirror(self):
        # the x-centered ellipses rasterise symmetrically; probe rows that
        # only those ellipses touch (the tumor pair and bottom trio differ
        # in size, so the full phantom is not mirror symmetric)
        img = make_image_2d("shepp_logan", 200)
        rows = np.concatenate([np.arange(0, 55), np.arange(140, 150)])
        np.testing.assert_allclose(img[rows], img[rows][:, ::-1], atol=1e-12)


class TestBsnr:
    def test_definition_at_zero_db(self):
        rng = np.random.default_rng(1)
        sig = rng.normal(size=10_000)
        _, sigma = add_noise_bsnr(sig, 0.0, rng)
        assert sigma ** 2 == pytest.approx(np.var(sig), rel=1e-12)

    def test_infinite_bsnr_is_noiseless(self):
        rng = np.random.default_rng(2)
        sig = rng.normal(size=100)
        noisy, sigma = add_noise_bsnr(sig, 1000.0, rng)
        assert sigma == pytest.approx(0.0, abs=1e-40)
        np.testing.assert_allclose(noisy, sig, atol=1e-40)

    def test_achieves_target_within_half_db(self):
        rng = np.random.default_rng(3)
        sig = rng.normal(size=10_000)
        noisy, sigma = add_noise_bsnr(sig, 30.0, rng)
        measured = 10 * math.log10(np.var(sig) / np.var(noisy - sig))
        assert 29.5 <= measured <= 30.5

    def test_rejects_constant_input(self):
        with pytest.raises(ValueError):
            add_noise_bsnr(np.ones(50), 30.0, np.random.default_rng(0))


class TestMetrics:
    def test_exact_match(self):
        x = np.array([1.0, 2.0, 3.0])
        m = metrics(x, x)
        assert m["rel_l2"] == 0.0
        assert m["psnr"] == math.inf

    def test_unit_perturbation(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=50)
        x /= np.linalg.norm(x)
        pert = rng.normal(size=50)
        pert /= np.linalg.norm(pert)
        m = metrics(x + 0.1 * pert, x)
        assert m["rel_l2"] == pytest.approx(0.1, rel=1e-12)

    def test_independent_recomputation(self):
        rng = np.random.default_rng(5)
        x_hat, x = rng.normal(size=30), rng.normal(size=30)
        m = metrics(x_hat, x)
        assert m["rel_l2"] == pytest.approx(
            np.linalg.norm(x_hat - x) / np.linalg.norm(x), rel=1e-14)
        assert m["psnr"] == pytest.approx(
            10 * np.log10(x.max() ** 2 * 30 / np.sum((x_hat - x) ** 2)),
            rel=1e-14)


class TestPgm:
    def test_p5_round_trip(self, tmp_path):
        rng = np.random.default_rng(6)
        img = rng.uniform(size=(7, 9))
        path = tmp_path / "img.pgm"
        write_pgm(path, img, binary=True)
        back = read_pgm(path)
        # exact after 8-bit quantisation
        np.testing.assert_array_equal(np.rint(img * 255) / 255, back)
        write_pgm(path, back, binary=True)
        np.testing.assert_array_equal(read_pgm(path), back)

    def test_p2_equals_p5(self, tmp_path):
        rng = np.random.default_rng(7)
        img = rng.uniform(size=(5, 4))
        write_pgm(tmp_path / "a.pgm", img, binary=True)
        write_pgm(tmp_path / "b.pgm", img, binary=False)
        np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"),
                                      read_pgm(tmp_path / "b.pgm"))

    def test_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P2 # comment\n# another\n 2 2\n255\n0 128\n255 64\n")
        img = read_pgm(path)
        np.testing.assert_allclose(img, [[0, 128 / 255], [1.0, 64 / 255]])

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(FileFormatError) as exc:
            read_pgm(path)
        assert exc.value.offset == 0

    def test_truncated_payload_offset(self, tmp_path):
        path = tmp_path / "trunc.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(FileFormatError) as exc:
            read_pgm(path)
        assert "truncated" in str(exc.value)
        assert exc.value.offset is not None

    def test_value_above_maxval(self, tmp_path):
        path = tmp_path / "over.pgm"
        path.write_bytes(b"P2\n2 1\n100\n50 101\n")
        with pytest.raises(FileFormatError):
            read_pgm(path)


class TestCsv:
    def test_signal_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(8)
        sig = rng.normal(size=64) * 10.0 ** rng.integers(-8, 8, size=64)
        path = tmp_path / "sig.csv"
        write_signal_csv(path, sig)
        np.testing.assert_array_equal(read_signal_csv(path), sig)

    def test_table_round_trip(self, tmp_path):
        rows = [(1.0, 2.5, -0.125), (4.0, 5.0, 6.0)]
        path = tmp_path / "t.csv"
        write_table_csv(path, ["a", "b", "c"], rows)
        header, body = read_table_csv(path)
        assert header == ["a", "b", "c"]
        np.testing.assert_array_equal(body, np.asarray(rows))

    def test_malformed_csv(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("value\nnot_a_number\n")
        with pytest.raises(FileFormatError):
            read_signal_csv(path)


class TestRunReport:
    def test_json_round_trip(self, tmp_path):
        rep = RunReport(estimator="ias", config={"tol": 1e-6}, iterations=12,
                        converged=True, nu=3.5, lam=120.0, seed=7,
                        metrics={"rel_l2": 0.1, "psnr": 30.0},
                        wall_time_s=0.5, outputs={"estimate": "x.csv"})
        path = tmp_path / "report.json"
        rep.to_json(path)
        back = RunReport.from_json(path)
        assert back == rep

    def test_rejects_unknown_schema(self, tmp_path):
        path = tmp_path / "r.json"
        path.write_text('{"schema_version": 99}')
        with pytest.raises(FileFormatError):
            RunReport.from_json(path)
