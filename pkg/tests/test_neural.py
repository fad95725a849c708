import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from fewshot_d2t.neural import (
    CheckpointError,
    ModelConfig,
    NoiseConfig,
    Seq2Seq,
    apply_noise,
    decode,
    encode,
    load_checkpoint,
    loss_nll,
    pad_batch,
    save_checkpoint,
    shift_targets,
)

V = 20


def tiny(sharing="enc", dim=8, layers=2, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    m = Seq2Seq(ModelConfig(vocab_size=V, emb_dim=dim, hidden=dim, layers=layers, dropout=0.0, sharing=sharing))
    return m.to(dtype).eval()


# -- encode --


def test_encode_deterministic_and_mean():
    m = tiny()
    s1, r1 = encode(m, [5, 6, 7], "data")
    s2, r2 = encode(m, [5, 6, 7], "data")
    assert torch.equal(r1, r2)
    assert torch.allclose(r1, s1.mean(0))
    states, rep = encode(m, [9], "text")
    assert states.shape[0] == 1 and torch.equal(rep, states[0])


def test_encode_shared_sides_identical():
    m = tiny("enc")
    assert torch.equal(encode(m, [4, 5, 6], "data")[1], encode(m, [4, 5, 6], "text")[1])
    m = tiny("none")
    assert not torch.equal(encode(m, [4, 5, 6], "data")[1], encode(m, [4, 5, 6], "text")[1])


def test_encode_empty():
    with pytest.raises(ValueError):
        encode(tiny(), [], "data")


def test_pooling_order_agnostic():
    m = tiny()
    src, sl = pad_batch([[4, 5, 6, 7]], m.cfg)
    out = m.encode(src, sl, "data")
    perm = torch.tensor([3, 1, 0, 2])
    from fewshot_d2t.neural import EncoderOutput
    shuffled = EncoderOutput(out.states[:, perm], out.mask[:, perm], out.final)
    assert torch.allclose(out.pooled, shuffled.pooled, atol=1e-7)


def test_padding_does_not_change_representation():
    m = tiny()
    a = m.represent([[4, 5]], "data")
    b = m.represent([[4, 5], [4, 5, 6, 7, 8, 9]], "data")[:1]
    np.testing.assert_allclose(a, b, atol=1e-6)


# -- parameter sharing --


def _lstm(i, h, layers):
    return sum(4 * h * ((i if l == 0 else h) + h) + 8 * h for l in range(layers))


def _expected_params(sharing, v, e, h, L):
    enc = v * e + _lstm(e, h, L)
    dec = v * e + _lstm(e, h, L) + h * h + 2 * h * h + h * v + v
    n_enc = 1 if sharing in ("enc", "both") else 2
    n_dec = 1 if sharing in ("dec", "both") else 2
    side = 2 * e if sharing in ("dec", "both") else 0
    return n_enc * enc + n_dec * dec + side


@pytest.mark.parametrize("sharing", ["none", "enc", "dec", "both"])
def test_parameter_counts(sharing):
    m = Seq2Seq(ModelConfig(vocab_size=50, emb_dim=6, hidden=10, layers=2, sharing=sharing))
    assert m.n_parameters() == _expected_params(sharing, 50, 6, 10, 2)


def test_sharing_both_smaller_than_none():
    counts = {s: Seq2Seq(ModelConfig(vocab_size=50, emb_dim=6, hidden=10, layers=2, sharing=s)).n_parameters()
              for s in ["none", "enc", "dec", "both"]}
    assert counts["both"] < counts["enc"] < counts["none"]
    assert counts["both"] < counts["dec"] < counts["none"]


def test_exclusive_parameters():
    m = tiny("enc")
    ids = {id(p) for p in m.exclusive_parameters("text")}
    assert ids == {id(p) for p in m.decoders["text"].parameters()}
    assert ids.isdisjoint({id(p) for p in m.encoders.parameters()})
    assert tiny("both").exclusive_parameters("text") == []


# -- decoding --


@pytest.mark.parametrize("seed", range(5))
def test_beam_one_equals_greedy(seed):
    m = tiny(seed=seed)
    src = [[3 + (seed + i) % 15 for i in range(6)]]
    assert m.generate(src, "data", "text", 15, mode="beam", beam_size=1) == m.generate(src, "data", "text", 15)


def _briefly_trained(seed):
    torch.manual_seed(seed)
    m = Seq2Seq(ModelConfig(vocab_size=V, emb_dim=8, hidden=16, layers=1, dropout=0.0))
    opt = torch.optim.Adam(m.parameters(), lr=1e-2)
    g = torch.Generator().manual_seed(seed)
    pairs = [(torch.randint(3, V, (5,), generator=g).tolist(), torch.randint(3, V, (4,), generator=g).tolist())
             for _ in range(8)]
    s, sl = pad_batch([p[0] for p in pairs], m.cfg, add_eos=True)
    t, tl = pad_batch([p[1] for p in pairs], m.cfg)
    for _ in range(15):  # enough to learn eos, far from converged
        opt.zero_grad()
        m.nll(s, sl, "data", t, tl, "text").backward()
        opt.step()
    return m.eval()


@pytest.mark.parametrize("seed", range(3))
def test_beam_score_dominates_greedy(seed):
    m = _briefly_trained(seed)
    checked = 0
    for i in range(20):
        src, sl = pad_batch([[3 + (seed * 7 + i * j) % 17 for j in range(1, 6)]], m.cfg, add_eos=True)
        enc = m.encode(src, sl, "data")
        g = m.greedy(enc, "text", 12)[0]
        b, score = m.beam(enc, "text", 3, 12)
        if len(g) < 12 and len(b) < 12:  # both finished with eos
            assert score == pytest.approx(m.sequence_logprob(enc, b, "text"), abs=1e-4)
            assert score >= m.sequence_logprob(enc, g, "text") - 1e-5
            checked += 1
    assert checked >= 10


def test_overfit_single_pair_decodes_target():
    torch.manual_seed(0)
    m = Seq2Seq(ModelConfig(vocab_size=V, emb_dim=16, hidden=32, layers=1, dropout=0.0))
    opt = torch.optim.Adam(m.parameters(), lr=1e-2)
    src, tgt = [4, 5, 6, 7], [9, 10, 11, 12, 13, 10]
    s, sl = pad_batch([src], m.cfg, add_eos=True)
    t, tl = pad_batch([tgt], m.cfg)
    for _ in range(150):
        opt.zero_grad()
        m.nll(s, sl, "data", t, tl, "text").backward()
        opt.step()
    m.eval()
    assert decode(m, src, "text", mode="greedy", max_len=20) == tgt
    assert decode(m, src, "text", mode="beam", beam_size=3, max_len=20) == tgt


def test_generate_bad_mode():
    with pytest.raises(ValueError):
        tiny().generate([[4]], "data", "text", 5, mode="nucleus")


# -- noise --


def test_noise_identity_and_full_drop():
    ids = list(range(4, 14))
    assert apply_noise(ids, NoiseConfig(0.0, 1), seed=1) == ids
    assert apply_noise(ids, NoiseConfig(1.0, 1), seed=1) == [0] * 10
    out = apply_noise([1] + ids + [2], NoiseConfig(1.0, 1), seed=1, special_ids={1, 2})
    assert out == [1] + [0] * 10 + [2]


def test_noise_displacement_bound_window_three():
    ids = list(range(10, 20))
    for seed in range(500):
        out = apply_noise(ids, NoiseConfig(0.0, 3), seed=seed)
        assert out == apply_noise(ids, NoiseConfig(0.0, 3), seed=seed)
        for pos, tok in enumerate(out):
            assert abs(pos - ids.index(tok)) <= 2


@given(st.lists(st.integers(3, 30), min_size=1, max_size=25), st.floats(0, 1), st.integers(1, 5), st.integers(0, 10**6))
@settings(max_examples=100)
def test_noise_preserves_length_and_survivors(ids, p, w, seed):
    out = apply_noise(ids, NoiseConfig(p, w), seed=seed)
    assert len(out) == len(ids)
    survivors = [t for t in out if t != 0]
    # every survivor comes from the input, with multiplicity
    from collections import Counter
    assert not Counter(survivors) - Counter(ids)
    assert len(survivors) + out.count(0) == len(ids)


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(1.5, 3)
    with pytest.raises(ValueError):
        NoiseConfig(0.1, 0)


# -- loss --


def test_loss_uniform_logits():
    logits = torch.zeros(2, 3, 7)
    targets = torch.tensor([[1, 2, 3], [4, 5, 0]])
    assert loss_nll(logits, targets, pad_id=0).item() == pytest.approx(math.log(7))


def test_loss_large_margin():
    targets = torch.tensor([[1, 2]])
    logits = torch.full((1, 2, 5), -50.0)
    logits[0, 0, 1] = logits[0, 1, 2] = 50.0
    assert loss_nll(logits, targets, pad_id=0).item() < 1e-6


def test_loss_hand_computed():
    logits = torch.tensor([[[2.0, 1.0, 0.0], [0.0, 0.0, 3.0]]])
    targets = torch.tensor([[0, 1]])
    # position 0: -log(e^2 / (e^2 + e + 1)); position 1: -log(1 / (2 + e^3))
    l0 = -(2.0 - math.log(math.exp(2) + math.exp(1) + 1))
    l1 = -(0.0 - math.log(2 + math.exp(3)))
    assert loss_nll(logits, targets, pad_id=-100).item() == pytest.approx((l0 + l1) / 2, rel=1e-6)
    # padding is excluded from the mean
    assert loss_nll(logits, torch.tensor([[0, 9]]), pad_id=9).item() == pytest.approx(l0, rel=1e-6)


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        loss_nll(torch.zeros(2, 3, 5), torch.zeros(2, 4, dtype=torch.long))


def test_shift_targets():
    cfg = ModelConfig(vocab_size=V)
    t, tl = pad_batch([[5, 6], [7]], cfg)
    tin, tout = shift_targets(t, tl, cfg)
    assert tin.tolist() == [[1, 5, 6], [1, 7, 0]]
    assert tout.tolist() == [[5, 6, 2], [7, 2, 0]]


def finite_difference_check(n_coords=100, seed=0, eps=1e-4):
    """Compare autograd against central differences on random parameter coordinates.

    Runs in float64; gradients of the tiny model are ~1e-7, so ``eps`` is large
    enough to keep round-off well below the tolerance.
    """
    m = tiny("enc", dim=8, layers=2, seed=seed, dtype=torch.float64)
    src, sl = pad_batch([[4, 5, 6, 7], [8, 9, 10]], m.cfg, add_eos=True)
    tgt, tl = pad_batch([[11, 12, 13], [14, 15, 16, 17]], m.cfg)

    def f():
        return m.nll(src, sl, "data", tgt, tl, "text")

    m.zero_grad()
    f().backward()
    params = [p for p in m.parameters() if p.grad is not None]
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_coords):
            p = params[rng.integers(len(params))]
            flat = p.view(-1)
            i = int(rng.integers(flat.numel()))
            old = flat[i].item()
            flat[i] = old + eps
            up = f().item()
            flat[i] = old - eps
            down = f().item()
            flat[i] = old
            num = (up - down) / (2 * eps)
            ana = p.grad.view(-1)[i].item()
            scale = max(abs(num), abs(ana))
            if scale > 1e-7:
                worst = max(worst, abs(num - ana) / scale)
            else:
                worst = max(worst, abs(num - ana) / 1e-7)
    return worst


def test_gradient_finite_differences():
    assert finite_difference_check() < 1e-3


# -- checkpoints --


def test_checkpoint_roundtrip(tmp_path):
    m = tiny()
    save_checkpoint(tmp_path / "m.pt", m, "abc", extra={"k": 1})
    m2, blob = load_checkpoint(tmp_path / "m.pt", "abc")
    assert blob["extra"] == {"k": 1}
    for (n1, p1), (n2, p2) in zip(m.state_dict().items(), m2.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)
    with pytest.raises(CheckpointError, match="vocabulary"):
        load_checkpoint(tmp_path / "m.pt", "other")


def test_checkpoint_version(tmp_path):
    torch.save({"version": 99}, tmp_path / "bad.pt")
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "bad.pt")
