import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spepattern import tensor as T
from spepattern.errors import ContractError, DimensionError
from spepattern.optim import grad_check
from spepattern.symmetry import (
    OP_ORDER,
    PRESETS,
    SpeConfig,
    SymmetryOp,
    apply_symmetry,
    enumerate_configs,
    parse_spe,
    spe_loss,
    symmetrize,
    symmetry_residual,
    verify_dataset,
)
from spepattern.tensor import Tensor

H, V, P, N = SymmetryOp.HFLIP, SymmetryOp.VFLIP, SymmetryOp.PFLIP, SymmetryOp.NFLIP


def index_map_oracle(x, op):
    """Pixel-by-pixel reflection written straight from the index conventions."""
    h, w = x.shape
    out = np.empty_like(x)
    for i in range(h):
        for j in range(w):
            src = {"h": (h - 1 - i, j), "v": (i, w - 1 - j), "n": (j, i), "p": (w - 1 - j, h - 1 - i)}[op.value]
            out[i, j] = x[src]
    return out


square = st.integers(0, 2**31 - 1).map(lambda s: np.random.default_rng(s).normal(size=(2, 3, 5, 5)).astype(np.float32))


class TestOperators:
    def test_hflip_example(self):
        np.testing.assert_array_equal(apply_symmetry(np.array([[1, 0], [0, 0]]), H), [[0, 0], [1, 0]])

    def test_nflip_symmetric_matrix(self):
        m = np.array([[1, 2], [2, 1]])
        np.testing.assert_array_equal(apply_symmetry(m, N), m)

    @pytest.mark.parametrize("op", list(SymmetryOp))
    def test_matches_index_oracle(self, rng, op):
        x = rng.normal(size=(4, 4))
        np.testing.assert_array_equal(apply_symmetry(x, op), index_map_oracle(x, op))

    @pytest.mark.parametrize("op", [P, N])
    def test_diagonal_needs_square(self, op):
        with pytest.raises(DimensionError):
            apply_symmetry(np.zeros((1, 1, 3, 4)), op)

    def test_rectangular_axis_flips_allowed(self):
        assert apply_symmetry(np.zeros((3, 4)), H).shape == (3, 4)

    @settings(max_examples=25, deadline=None)
    @given(square)
    def test_involution_and_norm(self, x):
        for op in SymmetryOp:
            tx = apply_symmetry(x, op)
            assert apply_symmetry(tx, op).tobytes() == x.tobytes()
            # a reflection permutes pixels, so the norm is preserved exactly
            assert np.array_equal(np.sort(tx, axis=None), np.sort(x, axis=None))

    @settings(max_examples=25, deadline=None)
    @given(square)
    def test_compositions_are_rotation(self, x):
        rot180 = x[..., ::-1, ::-1]
        np.testing.assert_array_equal(apply_symmetry(apply_symmetry(x, H), V), rot180)
        np.testing.assert_array_equal(apply_symmetry(apply_symmetry(x, P), N), rot180)

    @pytest.mark.parametrize("op", list(SymmetryOp))
    def test_self_adjoint(self, rng, op):
        c = rng.normal(size=(1, 2, 4, 4))
        x = Tensor(rng.normal(size=(1, 2, 4, 4)), requires_grad=True)
        T.sum(apply_symmetry(x, op) * Tensor(c)).backward()
        np.testing.assert_array_equal(x.grad, apply_symmetry(c, op))
        assert grad_check(lambda t: T.sum(apply_symmetry(t, op) * Tensor(c)), x.data) < 1e-9


class TestResidual:
    @pytest.mark.parametrize("op", list(SymmetryOp))
    def test_constant_is_symmetric(self, op):
        assert symmetry_residual(np.full((3, 4, 4), 0.7), op) == 0.0

    def test_example_value(self):
        assert symmetry_residual(np.array([[1.0, 0.0], [0.0, 0.0]]), H) == pytest.approx(np.sqrt(2))

    @pytest.mark.parametrize("op", list(SymmetryOp))
    def test_invariant_under_op(self, rng, op):
        x = rng.normal(size=(3, 5, 5))
        assert symmetry_residual(x, op) == pytest.approx(symmetry_residual(apply_symmetry(x, op), op), rel=1e-12)

    def test_bounded(self, rng):
        for _ in range(20):
            x = rng.normal(size=(4, 4))
            assert 0 <= symmetry_residual(x, P) <= 2

    def test_zero_image(self):
        assert symmetry_residual(np.zeros((2, 2)), H) == 0.0


class TestSpeLoss:
    def test_symmetric_image_zero(self, rng):
        x = symmetrize(rng.normal(size=(2, 3, 6, 6)).astype(np.float32), "hv")
        assert spe_loss(Tensor(x), PRESETS["hv"]).item() == 0.0

    def test_example_value(self):
        x = Tensor(np.array([[[[1.0, 0.0], [0.0, 0.0]]]]))
        brute = np.mean([np.mean((x.data - index_map_oracle(x.data[0, 0], op)) ** 2) for op in (H, V)])
        assert brute == 0.5
        assert spe_loss(x, PRESETS["hv"]).item() == pytest.approx(0.5)

    def test_interleaved_schedule(self):
        cfg = PRESETS["[hv;np]"]
        assert cfg.active_ops(0) == (H, V)
        assert cfg.active_ops(1) == (N, P)
        assert cfg.active_ops(2) == (H, V)

    def test_interleaved_normalizes_by_active_subset(self, rng):
        x = Tensor(rng.normal(size=(1, 1, 4, 4)))
        inter = PRESETS["[hv;np]"]
        assert spe_loss(x, inter, 1).item() == pytest.approx(spe_loss(x, PRESETS["np"]).item(), rel=1e-6)

    def test_empty_subset_rejected(self):
        with pytest.raises(ContractError):
            SpeConfig(((),))

    def test_l1(self):
        x = Tensor(np.array([[[[1.0, 0.0], [0.0, 0.0]]]]))
        assert spe_loss(x, SpeConfig.joint("h", similarity="l1")).item() == pytest.approx(0.5)

    def test_lpips_is_an_unfilled_slot(self):
        with pytest.raises(NotImplementedError):
            spe_loss(Tensor(np.zeros((1, 1, 2, 2))), SpeConfig.joint("h", similarity="lpips"))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.sampled_from(["hv", "np", "hvnp", "h", "n"]), st.booleans())
    def test_zero_iff_symmetric(self, seed, name, make_symmetric):
        x = np.random.default_rng(seed).normal(size=(1, 2, 4, 4))
        if make_symmetric:
            x = symmetrize(x, name)
        cfg = SpeConfig.joint(name)
        loss = spe_loss(Tensor(x), cfg).item()
        worst = max(symmetry_residual(x, op) for op in cfg.ops)
        assert (loss == 0.0) == (worst == 0.0)
        assert loss >= 0

    @pytest.mark.parametrize("name", ["hv", "np", "hvnp"])
    def test_invariant_under_active_op(self, rng, name):
        x = rng.normal(size=(2, 3, 6, 6)).astype(np.float32)
        cfg = PRESETS[name]
        base = spe_loss(Tensor(x), cfg).item()
        for op in cfg.ops:
            assert spe_loss(Tensor(apply_symmetry(x, op)), cfg).item() == pytest.approx(base, abs=1e-6)

    def test_monotone_in_asymmetry(self, rng):
        x = rng.normal(size=(1, 3, 6, 6))
        s = symmetrize(x, "hv")
        losses = [spe_loss(Tensor((1 - t) * s + t * x), PRESETS["hv"]).item() for t in (0, 0.25, 0.5, 0.75, 1)]
        assert losses == sorted(losses)
        assert losses[0] == pytest.approx(0, abs=1e-20)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    @pytest.mark.parametrize("name", ["hv", "hvnp", "[hv;np]"])
    def test_gradient(self, seed, name):
        x = np.random.default_rng(seed).normal(size=(2, 2, 4, 4))
        assert grad_check(lambda t: spe_loss(t, PRESETS[name], seed), x) < 1e-6


class TestConfigs:
    def test_powerset(self):
        configs = enumerate_configs(OP_ORDER)
        joint = [c for c in configs if not c.interleaved]
        assert len(joint) == 15
        assert len({c.name for c in joint}) == 15
        assert [c.name for c in configs if c.interleaved] == ["[hv;np]"]

    def test_presets_tagged(self):
        tags = {c.tag: c for c in enumerate_configs(OP_ORDER) if c.tag}
        assert set(tags) == {"hv", "np", "hvnp", "[hv;np]"}
        assert tags["hv"] == SpeConfig.joint([H, V])
        assert tags["[hv;np]"].subsets == ((H, V), (N, P))

    def test_duplicates_rejected(self):
        with pytest.raises(ContractError):
            enumerate_configs([H, H])

    def test_subset_base(self):
        assert len(enumerate_configs("hv")) == 3

    @pytest.mark.parametrize("text,name", [("hv", "hv"), ("vh", "hv"), ("hvnp", "hvnp"), ("pn", "np"),
                                           ("[hv;np]", "[hv;np]"), ("[hv,np]", "[hv;np]"), ("hv,np", "[hv;np]")])
    def test_parse(self, text, name):
        assert parse_spe(text).name == name

    def test_parse_none(self):
        assert parse_spe("none") is None

    def test_roundtrip_dict(self):
        cfg = parse_spe("[hv;np]", weight=0.5)
        assert SpeConfig.from_dict(cfg.to_dict()) == cfg


class TestVerify:
    def test_symmetrized_dataset(self, rng):
        patches = [symmetrize(rng.normal(size=(3, 8, 8)), "hv") for _ in range(5)]
        report = verify_dataset(patches, OP_ORDER)
        assert {H, V} <= set(report.common_set)

    def test_injected_asymmetric_patch(self, rng):
        patches = [symmetrize(rng.normal(size=(3, 8, 8)), "hvnp") for _ in range(5)]
        assert set(verify_dataset(patches).common_set) == set(OP_ORDER)
        patches.append(symmetrize(rng.normal(size=(3, 8, 8)), "h"))
        assert verify_dataset(patches).common_set == (H,)

    def test_constant_dataset(self):
        report = verify_dataset([np.full((1, 4, 4), c) for c in (-0.5, 0.0, 0.9)])
        assert set(report.common_set) == set(OP_ORDER)

    def test_empty(self):
        with pytest.raises(ContractError):
            verify_dataset([])

    def test_diagonal_on_rectangular(self):
        with pytest.raises(ContractError):
            verify_dataset([np.zeros((1, 4, 6))], "hn")

    def test_json_schema(self, rng):
        report = verify_dataset([symmetrize(rng.normal(size=(1, 4, 4)), "hv")], "hvnp")
        d = json.loads(report.to_json())
        assert set(d) == {"per_image", "common_set", "epsilon"}
        assert d["per_image"][0]["id"] == "000000"
        assert set(d["per_image"][0]["residuals"]) == {"h", "v", "n", "p"}
        assert d["common_set"] == ["h", "v"]

    def test_order_independent(self, rng):
        patches = [symmetrize(rng.normal(size=(1, 4, 4)), s) for s in ("hv", "h", "hvnp")]
        assert verify_dataset(patches).common_set == verify_dataset(patches[::-1]).common_set


class TestSymmetrize:
    @pytest.mark.parametrize("ops", ["h", "hv", "np", "hvnp", "n", "hp"])
    def test_exact_and_idempotent(self, rng, ops):
        x = rng.normal(size=(3, 7, 7)).astype(np.float32)
        s = symmetrize(x, ops)
        for op in ops:
            assert np.array_equal(apply_symmetry(s, op), s)
        assert np.array_equal(symmetrize(s, ops), s)

    def test_group_average_of_group(self, rng):
        # h and n generate the full dihedral group of order 8, hence p and v too
        s = symmetrize(rng.normal(size=(5, 5)), "hn")
        for op in SymmetryOp:
            assert np.array_equal(apply_symmetry(s, op), s)
