import csv
import json
import os

import numpy as np
import pytest

from conftest import SMALL_DIMS, TINY_PARAMS
from csi_mtl import (
    CrossPairMatrix,
    ModelConfig,
    RegimeArtifacts,
    SpatialFrequencyChannel,
    build_model,
    compare_regimes,
    cross_pair_matrix,
    nmse_db,
    zf_sum_spectral_efficiency,
)
from csi_mtl import evaluation as ev
from csi_mtl.channel_data import _angular_image
from csi_mtl.errors import DimensionMismatchError, InvalidArgumentError


def random_channels(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_unitary(rng, n):
    q, r = np.linalg.qr(random_channels(rng, (n, n)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


# ------------------------------------------------------------------ nmse_db

def test_nmse_self_reconstruction_hits_floor():
    h = random_channels(np.random.default_rng(0), (5, 8, 4))
    assert nmse_db(h, h) == ev.NMSE_FLOOR_DB == -300.0


def test_nmse_zero_prediction_is_exactly_zero_db():
    h = random_channels(np.random.default_rng(1), (6, 8, 4))
    assert nmse_db(h, np.zeros_like(h)) == 0.0


def test_nmse_matches_brute_force():
    rng = np.random.default_rng(2)
    h = rng.standard_normal((9, 2, 8, 4)).astype(np.float32)
    h_hat = h + 0.1 * rng.standard_normal(h.shape).astype(np.float32)
    ratios = [np.sum((h[i].astype(np.float64) - h_hat[i]) ** 2) / np.sum(h[i].astype(np.float64) ** 2)
              for i in range(9)]
    assert nmse_db(h, h_hat) == pytest.approx(10.0 * np.log10(np.mean(ratios)), abs=1e-12)


def test_nmse_real_and_complex_forms_agree():
    rng = np.random.default_rng(3)
    h = random_channels(rng, (7, 8, 4))
    h_hat = h + 0.05 * random_channels(rng, (7, 8, 4))
    stacked = np.stack([h.real, h.imag], axis=1)
    stacked_hat = np.stack([h_hat.real, h_hat.imag], axis=1)
    assert nmse_db(h, h_hat) == nmse_db(stacked, stacked_hat)


def test_nmse_single_sample_forms():
    rng = np.random.default_rng(4)
    h = random_channels(rng, (8, 4))
    h_hat = h + 0.1 * random_channels(rng, (8, 4))
    assert nmse_db(h, h_hat) == nmse_db(h[None], h_hat[None])
    stacked = np.stack([h.real, h.imag], axis=0)
    stacked_hat = np.stack([h_hat.real, h_hat.imag], axis=0)
    assert nmse_db(stacked, stacked_hat) == nmse_db(h, h_hat)


def test_nmse_rotation_invariance():
    rng = np.random.default_rng(5)
    h = random_channels(rng, (6, 8, 4))
    h_hat = h + 0.2 * random_channels(rng, (6, 8, 4))
    base = nmse_db(h, h_hat)
    q = random_unitary(rng, 4)
    assert abs(nmse_db(h @ q, h_hat @ q) - base) <= 1e-6
    u = random_unitary(rng, 8)
    assert abs(nmse_db(u @ h, u @ h_hat) - base) <= 1e-6
    phase = np.exp(1j * 0.7)
    assert abs(nmse_db(phase * h, phase * h_hat) - base) <= 1e-6


def test_nmse_near_identical_clamped_at_floor():
    h = random_channels(np.random.default_rng(6), (4, 8, 4))
    h_hat = h * (1.0 + 1e-16)
    assert nmse_db(h, h_hat) == -300.0


def test_nmse_excludes_zero_norm_samples_with_warning():
    rng = np.random.default_rng(7)
    h = random_channels(rng, (5, 8, 4))
    h_hat = h + 0.1 * random_channels(rng, (5, 8, 4))
    h[2] = 0.0
    with pytest.warns(UserWarning, match="zero-norm"):
        got = nmse_db(h, h_hat)
    keep = [0, 1, 3, 4]
    assert got == nmse_db(h[keep], h_hat[keep])


def test_nmse_all_zero_rejected():
    z = np.zeros((3, 8, 4), dtype=np.complex128)
    with pytest.warns(UserWarning):
        with pytest.raises(InvalidArgumentError):
            nmse_db(z, z + 1.0)


def test_nmse_shape_mismatch_rejected():
    with pytest.raises(DimensionMismatchError):
        nmse_db(np.zeros((2, 8, 4), dtype=np.complex128), np.zeros((2, 4, 8), dtype=np.complex128))


# ------------------------------------------------------- cross-pair matrix

def tiny_cfg(family, role, ratio="1/4", n_tasks=1):
    kw = dict(TINY_PARAMS)
    if n_tasks > 1:
        kw["n_tasks"] = n_tasks
    return ModelConfig(family, role, ratio, dims=SMALL_DIMS[1:], **kw)


@pytest.fixture(scope="module")
def pair_models():
    return {
        "csinet-indoor": (build_model(tiny_cfg("csinet", "encoder"), seed=1),
                          build_model(tiny_cfg("csinet", "decoder"), seed=2)),
        "stnet-indoor": (build_model(tiny_cfg("stnet", "encoder"), seed=3),
                         build_model(tiny_cfg("stnet", "decoder"), seed=4)),
    }


def test_cross_pair_matrix_diag_matches_reconstruction(pair_models, small_sets):
    encoders = [(k, enc) for k, (enc, _) in pair_models.items()]
    decoders = [(k, dec) for k, (_, dec) in pair_models.items()]
    datasets = [small_sets["test"], small_sets["test"]]
    m = cross_pair_matrix(encoders, decoders, datasets, batch_size=6)
    assert m.row_labels == ["csinet-indoor", "stnet-indoor"]
    assert np.all(np.isfinite(m.entries))
    for i, (label, (enc, dec)) in enumerate(pair_models.items()):
        direct = ev.reconstruction_nmse_db(enc, dec.forward, datasets[i], batch_size=6)
        assert m.entry(label, label) == direct


def test_cross_pair_matrix_marks_incompatible_codes(pair_models, small_sets, tmp_path):
    narrow = build_model(tiny_cfg("csinet", "decoder", ratio="1/16"), seed=5)
    encoders = [("csinet-indoor", pair_models["csinet-indoor"][0])]
    decoders = [("csinet-indoor", pair_models["csinet-indoor"][1]), ("narrow", narrow)]
    m = cross_pair_matrix(encoders, decoders, [small_sets["test"]])
    assert np.isfinite(m.entries[0, 0])
    assert np.isnan(m.entries[0, 1])
    path = tmp_path / "pairs.csv"
    m.write_csv(path)
    rows = list(csv.reader(open(path, encoding="utf-8")))
    assert rows[0] == ["encoder\\decoder", "csinet-indoor", "narrow"]
    assert rows[1][0] == "csinet-indoor"
    assert float(rows[1][1]) == m.entries[0, 0]
    assert rows[1][2] == "incompatible"


def test_cross_pair_matrix_requires_dataset_per_row(pair_models, small_sets):
    encoders = [(k, enc) for k, (enc, _) in pair_models.items()]
    with pytest.raises(InvalidArgumentError):
        cross_pair_matrix(encoders, encoders, [small_sets["test"]])


def test_diagonal_dominance_margin_logic():
    m = CrossPairMatrix(["a", "b"], ["a", "b"],
                        np.array([[-20.0, -5.0], [-4.0, -15.0]]))
    assert m.diagonally_dominant(10.0)
    assert not m.diagonally_dominant(16.0)
    with_nan = CrossPairMatrix(["a", "b"], ["a", "b"],
                               np.array([[-20.0, np.nan], [np.nan, -15.0]]))
    assert with_nan.diagonally_dominant(100.0)


def test_reconstruction_nmse_batch_size_invariant(pair_models, small_sets):
    enc, dec = pair_models["csinet-indoor"]
    a = ev.reconstruction_nmse_db(enc, dec.forward, small_sets["test"], batch_size=5)
    b = ev.reconstruction_nmse_db(enc, dec.forward, small_sets["test"], batch_size=100)
    assert a == pytest.approx(b, abs=1e-4)


def test_untrained_pair_reconstructs_no_better_than_minus_one_db(pair_models, small_sets):
    for enc, dec in pair_models.values():
        assert ev.reconstruction_nmse_db(enc, dec.forward, small_sets["test"]) >= -1.0


# ------------------------------------------------------------ zero forcing

def zf_oracle(channels, snr_db):
    """Per-subcarrier ZF from the rows h_k^H with equal per-user power."""
    k, n_sub, n_tx = channels.shape
    rho = 10.0 ** (snr_db / 10.0)
    ses, isrs = [], []
    for n in range(n_sub):
        hn = channels[:, n, :]  # (K, n_tx), rows are h^H
        w = hn.conj().T @ np.linalg.inv(hn @ hn.conj().T)
        w = w / (np.sqrt(k) * np.linalg.norm(w, axis=0, keepdims=True))
        cross = np.abs(hn @ w) ** 2
        sig = np.diag(cross)
        interf = cross.sum(axis=1) - sig
        isrs.append(interf / sig)
        sinr = (rho / k) * sig / ((rho / k) * interf + 1.0)
        ses.append(np.sum(np.log2(1.0 + sinr)))
    return float(np.mean(ses)), float(np.max(isrs))


@pytest.mark.parametrize("k", [1, 2, 4])
def test_zf_perfect_csi_nulls_interference(k):
    rng = np.random.default_rng(10 + k)
    h = random_channels(rng, (k, 8, 32))
    se_oracle, max_isr = zf_oracle(h, 10.0)
    assert max_isr < 1e-10
    se = zf_sum_spectral_efficiency(h, h, 10.0)
    assert se == pytest.approx(se_oracle, rel=1e-9)


def test_zf_single_user_closed_form():
    rng = np.random.default_rng(20)
    h = random_channels(rng, (1, 16, 32))
    for snr in (0.0, 10.0, 20.0):
        rho = 10.0 ** (snr / 10.0)
        expect = np.mean(np.log2(1.0 + rho * np.sum(np.abs(h[0]) ** 2, axis=1)))
        assert zf_sum_spectral_efficiency(h, h, snr) == pytest.approx(expect, rel=1e-9)


def test_zf_se_monotone_in_snr():
    rng = np.random.default_rng(21)
    h = random_channels(rng, (2, 8, 32))
    recon = h + 0.1 * random_channels(rng, (2, 8, 32))
    ses = [zf_sum_spectral_efficiency(h, recon, snr) for snr in (0, 5, 10, 15, 20)]
    assert all(b > a for a, b in zip(ses, ses[1:]))


def test_zf_reconstructed_csi_not_better_than_perfect():
    rng = np.random.default_rng(22)
    h = random_channels(rng, (4, 8, 32))
    for scale in (0.05, 0.2, 0.5):
        recon = h + scale * random_channels(rng, (4, 8, 32))
        for snr in (0, 10, 20):
            assert (zf_sum_spectral_efficiency(h, recon, snr)
                    <= zf_sum_spectral_efficiency(h, h, snr))


def test_zf_rank_deficient_recon_warns_and_stays_finite():
    rng = np.random.default_rng(23)
    one = random_channels(rng, (1, 8, 32))
    dup = np.concatenate([one, one], axis=0)
    with pytest.warns(UserWarning, match="rank-deficient"):
        se = zf_sum_spectral_efficiency(dup, dup, 10.0)
    assert np.isfinite(se) and se >= 0.0


def test_zf_more_users_than_antennas_rejected():
    rng = np.random.default_rng(24)
    h = random_channels(rng, (5, 8, 4))
    with pytest.raises(InvalidArgumentError):
        zf_sum_spectral_efficiency(h, h, 10.0)


def test_zf_shape_mismatch_rejected():
    rng = np.random.default_rng(25)
    with pytest.raises(DimensionMismatchError):
        zf_sum_spectral_efficiency(random_channels(rng, (2, 8, 16)),
                                   random_channels(rng, (2, 8, 8)), 10.0)


def test_zf_accepts_channel_objects_and_arrays_equally():
    rng = np.random.default_rng(26)
    h = random_channels(rng, (2, 8, 16))
    objs = [SpatialFrequencyChannel(h[i]) for i in range(2)]
    assert zf_sum_spectral_efficiency(objs, objs, 5.0) == zf_sum_spectral_efficiency(h, h, 5.0)


def test_zf_rejects_malformed_input():
    with pytest.raises(InvalidArgumentError):
        zf_sum_spectral_efficiency(np.zeros((2, 8, 16)), np.zeros((2, 8, 16)), 10.0)


# ---------------------------------------------------------- SE over models

def test_lift_zero_pads_the_delay_tail(small_sets):
    ds = small_sets["test"]
    lifted = ev._lift(ds, ds.tensors, ds.n_subcarriers)
    assert lifted.shape == (len(ds), ds.n_subcarriers, ds.n_tx)
    back = _angular_image(lifted)
    assert np.allclose(back[:, :ds.n_delay], ds.raw(), atol=1e-6)
    assert np.max(np.abs(back[:, ds.n_delay:])) < 1e-12


def independent_artifacts():
    return RegimeArtifacts("independent", {
        "enc0": build_model(tiny_cfg("csinet", "encoder"), seed=1),
        "dec0": build_model(tiny_cfg("csinet", "decoder"), seed=2),
        "enc1": build_model(tiny_cfg("stnet", "encoder"), seed=3),
        "dec1": build_model(tiny_cfg("stnet", "decoder"), seed=4),
    }, {})


def joint_artifacts():
    return RegimeArtifacts("joint", {
        "enc0": build_model(tiny_cfg("csinet", "encoder"), seed=1),
        "enc1": build_model(tiny_cfg("stnet", "encoder"), seed=3),
        "dec": build_model(tiny_cfg("stnet", "decoder"), seed=5),
    }, {})


def hard_artifacts():
    return RegimeArtifacts("hard_sharing", {
        "enc0": build_model(tiny_cfg("csinet", "encoder"), seed=1),
        "enc1": build_model(tiny_cfg("stnet", "encoder"), seed=3),
        "dec": build_model(tiny_cfg("stnet", "shared_stem_decoder", n_tasks=2), seed=6),
    }, {})


def test_decode_fn_routes_per_regime():
    code = np.random.default_rng(30).random((3, 32), dtype=np.float32)
    ind = independent_artifacts()
    assert np.array_equal(ind.decode_fn(1)(code), ind.models["dec1"].forward(code))
    joint = joint_artifacts()
    assert np.array_equal(joint.decode_fn(0)(code), joint.decode_fn(1)(code))
    hard = hard_artifacts()
    assert np.array_equal(hard.decode_fn(1)(code), hard.models["dec"].forward(code, task=1))
    assert not np.array_equal(hard.decode_fn(0)(code), hard.decode_fn(1)(code))


def test_regime_se_curve_shape_and_monotonicity(task_pair):
    datasets = [t.dataset("test") for t in task_pair]
    curve = ev.regime_se_curve(independent_artifacts(), datasets, se_samples=8, batch_size=4)
    assert curve.snr_points == [0, 5, 10, 15, 20]
    assert len(curve.se_values) == 5
    assert curve.config == {"k_users": 2, "regime": "independent", "samples": 8}
    assert all(se > 0 for se in curve.se_values)
    assert all(b > a for a, b in zip(curve.se_values, curve.se_values[1:]))


def test_regime_se_curve_uses_leading_subset(task_pair):
    datasets = [t.dataset("test") for t in task_pair]
    full = ev.regime_se_curve(independent_artifacts(), datasets, snr_grid=(10,), se_samples=6)
    again = ev.regime_se_curve(independent_artifacts(), datasets, snr_grid=(10,), se_samples=6,
                               batch_size=3)
    assert full.se_values == pytest.approx(again.se_values, rel=1e-6)


# -------------------------------------------------------- regime comparison

def test_compare_regimes_lists_missing_regimes_as_gaps(task_pair):
    report = compare_regimes(task_pair, {"independent": independent_artifacts()},
                             snr_grid=(10,), se_samples=4)
    assert report.gaps == ["missing artifacts for regime joint",
                           "missing artifacts for regime hard_sharing"]
    assert list(report.per_task_nmse) == ["independent"]
    assert report.ordering == ["independent"]
    assert report.reductions_pct == {}


def test_compare_regimes_full_report(task_pair, tmp_path):
    artifacts = {"independent": independent_artifacts(), "joint": joint_artifacts(),
                 "hard_sharing": hard_artifacts()}
    report = compare_regimes(task_pair, artifacts, snr_grid=(0, 10), se_samples=6)
    assert report.gaps == []
    labels = [t.name for t in task_pair]
    for regime in artifacts:
        assert sorted(report.per_task_nmse[regime]) == sorted(labels)
        assert report.param_counts[regime]["total"] > 0
    assert report.ordering == ["joint", "hard_sharing", "independent"]
    assert set(report.reductions_pct) == {"joint", "hard_sharing"}
    assert all(v > 0 for v in report.reductions_pct.values())
    assert list(report.matrices) == ["independent"]
    assert {c.config["regime"] for c in report.se_curves} == set(artifacts)
    assert report.annotations == ev.REFERENCE_FULL_SCALE

    out = tmp_path / "report"
    report.write(out)
    files = sorted(os.listdir(out))
    assert files == ["cross_pairs_independent.csv", "param_counts.json",
                     "per_task_nmse.csv", "se_curves.csv"]
    payload = json.load(open(out / "param_counts.json", encoding="utf-8"))
    assert payload["reference_full_scale"] == ev.REFERENCE_FULL_SCALE
    assert payload["ordering"] == ["joint", "hard_sharing", "independent"]
    rows = list(csv.reader(open(out / "per_task_nmse.csv", encoding="utf-8")))
    assert rows[0] == ["regime", "task", "nmse_db"]
    assert len(rows) == 1 + 3 * len(labels)
    for row in rows[1:]:
        float(row[2])
    se_rows = list(csv.reader(open(out / "se_curves.csv", encoding="utf-8")))
    assert se_rows[0] == ["regime", "snr_db", "se_bps_hz"]
    assert len(se_rows) == 1 + 3 * 2


def test_report_write_is_deterministic(task_pair, tmp_path):
    artifacts = {"independent": independent_artifacts()}
    a, b = tmp_path / "a", tmp_path / "b"
    compare_regimes(task_pair, artifacts, snr_grid=(10,), se_samples=4).write(a)
    compare_regimes(task_pair, artifacts, snr_grid=(10,), se_samples=4).write(b)
    for name in os.listdir(a):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
