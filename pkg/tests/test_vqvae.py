import math

import numpy as np
import pytest

from hivevq import numkernel as nk
from hivevq import vqvae
from hivevq.errors import NumericError, ParameterError, ShapeError
from tests.test_numkernel import assert_close_rel, finite_diff


def brute_force_nearest(z_e, entries):
    """Index of the nearest entry by normalized L2, ties to smallest index."""
    out = []
    for z in z_e:
        zn = z / math.sqrt(sum(v * v for v in z))
        best, best_d = None, None
        for k, e in enumerate(entries):
            en = e / math.sqrt(sum(v * v for v in e))
            d = 0.0
            for a, b in zip(zn, en):
                d += (a - b) ** 2
            if best_d is None or d < best_d:
                best, best_d = k, d
        out.append(best)
    return np.array(out)


def make_book(entries, decay=0.99):
    entries = np.asarray(entries, dtype=np.float64)
    k = entries.shape[0]
    return vqvae.Codebook(
        entries=entries,
        ema_cluster_size=np.ones(k),
        ema_embed_sum=entries.copy(),
        decay=decay,
        usage_counts=np.zeros(k, dtype=np.int64),
        initialized=True,
    )


def tiny_model(input_dim=5, k=4, hidden=(4, 3, 3), seed=0, dropout=0.0):
    return vqvae.VqVae.create(
        input_dim=input_dim,
        k=k,
        hidden=hidden,
        seed=seed,
        dropout_rate=dropout,
        allow_nonstandard_k=True,
    )


def pad_latent(rows):
    """Embed low-dim test vectors into the fixed 128-dim latent space."""
    rows = np.asarray(rows, dtype=np.float64)
    out = np.zeros((rows.shape[0], vqvae.LATENT_DIM))
    out[:, : rows.shape[1]] = rows
    return out


class TestQuantize:
    def test_exact_match(self):
        entries = pad_latent(np.eye(4))
        book = make_book(entries)
        q = vqvae.quantize(book, pad_latent([[0.0, 0.0, 0.0, 1.0]]))
        assert q.indices.tolist() == [3]
        assert np.array_equal(q.quantized[0], entries[3])

    def test_equidistant_tie_takes_lower_index(self):
        book = make_book(pad_latent([[1.0, 0.0], [-1.0, 0.0]]))
        q = vqvae.quantize(book, pad_latent([[0.0, 1.0]]))
        assert q.indices.tolist() == [0]

    def test_duplicate_entries_tie(self):
        e = np.zeros((3, vqvae.LATENT_DIM))
        e[0, 0] = 5.0
        e[1, :2] = [3.0, 4.0]
        e[2, :2] = [3.0, 4.0]
        book = make_book(e)
        q = vqvae.quantize(book, pad_latent([[3.1, 4.1]]))
        assert q.indices.tolist() == [1]

    def test_matches_brute_force(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            k = int(rng.integers(2, 9))
            n = int(rng.integers(1, 6))
            entries = rng.normal(size=(k, vqvae.LATENT_DIM))
            z = rng.normal(size=(n, vqvae.LATENT_DIM))
            book = make_book(entries)
            got = vqvae.quantize(book, z).indices
            assert np.array_equal(got, brute_force_nearest(z, entries))

    def test_quantized_is_raw_entry(self):
        entries = pad_latent([[10.0, 0.0], [0.0, 0.2]])
        book = make_book(entries)
        q = vqvae.quantize(book, pad_latent([[0.0, 5.0]]))
        assert q.indices.tolist() == [1]
        assert np.array_equal(q.quantized[0], entries[1])  # un-normalized

    def test_soft_assign_rows_sum_to_one(self):
        rng = np.random.default_rng(22)
        book = make_book(rng.normal(size=(6, vqvae.LATENT_DIM)))
        q = vqvae.quantize(book, rng.normal(size=(9, vqvae.LATENT_DIM)))
        assert np.max(np.abs(q.soft_assign.sum(axis=1) - 1.0)) < 1e-9

    def test_zero_latent_rejected(self):
        book = make_book(pad_latent([[1.0], [2.0]]))
        with pytest.raises(NumericError):
            vqvae.quantize(book, np.zeros((1, vqvae.LATENT_DIM)))

    def test_identical_entries_all_map_to_zero(self):
        e = np.tile(np.linspace(1, 2, vqvae.LATENT_DIM), (5, 1))
        book = make_book(e)
        rng = np.random.default_rng(23)
        q = vqvae.quantize(book, rng.normal(size=(20, vqvae.LATENT_DIM)))
        assert np.all(q.indices == 0)

    def test_dim_mismatch(self):
        book = make_book(pad_latent([[1.0], [2.0]]))
        with pytest.raises(ShapeError):
            vqvae.quantize(book, np.ones((2, 3)))


class TestEmaUpdate:
    def test_decay_free_limit_gives_batch_mean(self):
        book = make_book(pad_latent([[1.0, 0.0], [0.0, 1.0]]), decay=0.0)
        z = pad_latent([[2.0, 2.0], [4.0, 6.0]])
        updated = vqvae.ema_update(book, z, np.array([0, 0]))
        expected = z.mean(axis=0) * 2.0 / (2.0 + vqvae.EPS_LAPLACE)
        assert np.allclose(updated.entries[0], expected, atol=1e-12)

    def test_never_assigned_decays_geometrically(self):
        book = make_book(pad_latent([[1.0, 1.0], [3.0, 0.0]]), decay=0.9)
        size0 = book.ema_cluster_size[1]
        z = pad_latent([[1.0, 1.0]])
        for _ in range(7):
            book = vqvae.ema_update(book, z, np.array([0]))
        assert abs(book.ema_cluster_size[1] - size0 * 0.9**7) < 1e-10

    def test_single_frame_update_closed_form(self):
        old_sum = pad_latent([[2.0, 2.0], [5.0, 5.0]])
        book = vqvae.Codebook(
            entries=old_sum.copy(),
            ema_cluster_size=np.array([1.0, 1.0]),
            ema_embed_sum=old_sum.copy(),
            decay=0.99,
            usage_counts=np.zeros(2, dtype=np.int64),
            initialized=True,
        )
        z = pad_latent([[10.0, 0.0]])
        updated = vqvae.ema_update(book, z, np.array([0]))
        assert np.allclose(updated.ema_embed_sum[0], 0.99 * old_sum[0] + 0.01 * z[0], atol=1e-12)
        assert abs(updated.ema_cluster_size[0] - (0.99 * 1.0 + 0.01 * 1.0)) < 1e-12

    def test_usage_counts_accumulate(self):
        book = make_book(pad_latent([[1.0, 0.0], [0.0, 1.0]]))
        z = pad_latent([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]])
        updated = vqvae.ema_update(book, z, np.array([0, 0, 1]))
        assert updated.usage_counts.tolist() == [2, 1]


class TestCompositeLoss:
    def test_all_terms_vanish(self):
        x = np.random.default_rng(30).normal(size=(3, 6))
        z = np.abs(np.random.default_rng(31).normal(size=(3, 8))) + 0.1
        soft = np.full((3, 4), 0.25)
        total, parts = vqvae.composite_loss(x, x, z, z, soft, vqvae.LossWeights(), "full")
        assert total == pytest.approx(0.0, abs=1e-12)
        assert parts.diversity == pytest.approx(0.0, abs=1e-12)

    def test_unit_mse(self):
        x = np.zeros((1, 4))
        x[0, 0] = 1.0
        x_hat = np.zeros((1, 4))
        total, parts = vqvae.composite_loss(x, x_hat, x, x, np.ones((1, 1)), vqvae.LossWeights(), "warmup")
        assert total == 1.0
        assert parts.recon == 1.0

    def test_hand_computed_two_frame_batch(self):
        x = np.array([[1.0, 0.0], [0.0, 2.0]])
        x_hat = np.zeros((2, 2))
        z_e = np.array([[1.0, 0.0], [0.0, 1.0]])
        z_q = np.array([[0.5, 0.0], [0.0, 0.5]])
        soft = np.array([[0.5, 0.5], [0.25, 0.75]])
        total, parts = vqvae.composite_loss(x, x_hat, z_e, z_q, soft, vqvae.LossWeights(), "full")
        recon = (1.0 + 4.0) / 2.0
        quant = (0.25 + 0.25) / 2.0
        p = [0.375, 0.625]
        div = math.log(2.0) + sum(v * math.log(v) for v in p)
        expected = recon + 0.1 * (quant + 0.25 * quant + 0.1 * div)
        assert total == pytest.approx(expected, abs=1e-12)
        assert parts.recon == pytest.approx(recon, abs=1e-15)
        assert parts.diversity == pytest.approx(div, abs=1e-12)

    def test_warmup_returns_recon_only(self):
        x = np.ones((2, 3))
        x_hat = np.zeros((2, 3))
        total, parts = vqvae.composite_loss(x, x_hat, x, x, np.ones((1, 1)), vqvae.LossWeights(), "warmup")
        assert total == parts.recon == 3.0
        assert parts.codebook == parts.commit == parts.diversity == 0.0

    def test_breakdown_recombines(self):
        rng = np.random.default_rng(33)
        w = vqvae.LossWeights()
        soft = rng.dirichlet(np.ones(5), size=4)
        total, p = vqvae.composite_loss(
            rng.normal(size=(4, 6)),
            rng.normal(size=(4, 6)),
            rng.normal(size=(4, 7)),
            rng.normal(size=(4, 7)),
            soft,
            w,
            "full",
        )
        recomposed = p.recon + w.lam * (p.codebook + w.beta * p.commit + w.gamma * p.diversity)
        assert abs(total - recomposed) < 1e-12

    def test_diversity_nonnegative_and_zero_iff_uniform(self):
        rng = np.random.default_rng(34)
        for _ in range(50):
            soft = rng.dirichlet(np.ones(6), size=8)
            assert vqvae.diversity_value(soft) >= -1e-15
        uniform = np.full((3, 6), 1.0 / 6.0)
        assert vqvae.diversity_value(uniform) == pytest.approx(0.0, abs=1e-12)
        skew = np.zeros((2, 6))
        skew[:, 0] = 1.0
        assert vqvae.diversity_value(skew) > 0.1


class TestGradientRouting:
    def test_straight_through_copies_gradient(self):
        rng = np.random.default_rng(40)
        z = nk.wrap(rng.normal(size=(3, 4)))
        tape = nk.Tape()
        st = vqvae.straight_through(z, rng.normal(size=(3, 4)), tape)
        g = rng.normal(size=(3, 4))
        nk.backward(tape, st, seed_grad=g)
        assert np.array_equal(z.grad, g)

    def test_commit_gradient_matches_fd(self):
        rng = np.random.default_rng(41)
        z_val = nk.Param(rng.normal(size=(4, 6)))
        z_q = rng.normal(size=(4, 6))

        def loss():
            return float(vqvae.commit_loss_op(nk.wrap(z_val.value), z_q).value)

        tape = nk.Tape()
        node = nk.wrap(z_val.value)
        out = vqvae.commit_loss_op(node, z_q, tape)
        nk.backward(tape, out)
        (fd,) = finite_diff(loss, [z_val])
        assert_close_rel(node.grad, fd)

    def test_diversity_gradient_matches_fd(self):
        rng = np.random.default_rng(42)
        z_val = nk.Param(rng.normal(size=(5, vqvae.LATENT_DIM)))
        entries = rng.normal(size=(4, vqvae.LATENT_DIM))

        def loss():
            node = nk.wrap(z_val.value)
            out, _ = vqvae.diversity_loss_op(node, entries)
            return float(out.value)

        tape = nk.Tape()
        node = nk.wrap(z_val.value)
        out, _ = vqvae.diversity_loss_op(node, entries, tape=tape)
        nk.backward(tape, out)
        (fd,) = finite_diff(loss, [z_val])
        assert_close_rel(node.grad, fd, rel=1e-4)

    def test_full_phase_backward_leaves_codebook_untouched(self):
        model = tiny_model()
        rng = np.random.default_rng(43)
        x = rng.normal(size=(8, 5))
        latents = model.eval_latents(x)
        model.codebook = model.codebook.initialize_from(latents, rng)
        before = model.codebook.entries.copy()
        tape, loss_node, _, _, _ = model.train_forward(x, "full", epoch=11, batch=0)
        grads = model.loss_backward(tape, loss_node)
        assert not any("codebook" in name for name in grads)
        for p in model.params():
            p.value -= 0.01 * p.grad
        assert np.array_equal(model.codebook.entries, before)

    def test_codebook_perturbation_changes_loss_value(self):
        model = tiny_model()
        rng = np.random.default_rng(44)
        x = rng.normal(size=(8, 5))
        model.codebook = model.codebook.initialize_from(model.eval_latents(x), rng)
        _, loss_a, _, _, _ = model.train_forward(x, "full", epoch=11, batch=0)
        model.codebook.entries += 0.5
        _, loss_b, _, _, _ = model.train_forward(x, "full", epoch=11, batch=0)
        assert float(loss_a.value) != float(loss_b.value)

    def test_warmup_loss_gradient_matches_fd(self):
        model = tiny_model(input_dim=4, hidden=(3, 2, 2))
        rng = np.random.default_rng(45)
        x = rng.normal(size=(3, 4))

        def loss():
            tape, node, _, _, _ = model.train_forward(x, "warmup", epoch=1, batch=0)
            return float(node.value)

        tape, node, _, _, _ = model.train_forward(x, "warmup", epoch=1, batch=0)
        nk.backward(tape, node)
        params = model.params()
        analytic = [p.grad.copy() for p in params]
        fd = finite_diff(loss, params)
        for a, f in zip(analytic, fd):
            assert_close_rel(a, f)


class TestNets:
    def test_encoder_output_dim_is_latent(self):
        model = tiny_model()
        z = vqvae.encode(model.encoder, np.random.default_rng(50).normal(size=(7, 5)))
        assert z.shape == (7, vqvae.LATENT_DIM)

    def test_decoder_output_dim(self):
        model = tiny_model()
        x = vqvae.decode(model.decoder, np.random.default_rng(51).normal(size=(3, vqvae.LATENT_DIM)))
        assert x.shape == (3, 5)

    def test_eval_deterministic(self):
        model = tiny_model(dropout=0.1)  # dropout must not apply in eval mode
        x = np.random.default_rng(52).normal(size=(4, 5))
        assert np.array_equal(vqvae.encode(model.encoder, x), vqvae.encode(model.encoder, x))

    def test_zero_input_zeroed_final_dense_is_finite(self):
        model = tiny_model()
        final = model.encoder.stages[-1].dense
        final.weight.value[...] = 0.0
        final.bias.value[...] = 0.0
        z = vqvae.encode(model.encoder, np.zeros((2, 5)))
        assert np.all(np.isfinite(z))

    def test_default_architecture_dims(self):
        enc = vqvae.EncoderNet.create(vqvae.DEFAULT_INPUT_DIM)
        dims = [(b.dense.in_dim, b.dense.out_dim) for b in enc.stages]
        assert dims == [(1295, 1024), (1024, 512), (512, 512), (512, 128)]
        assert enc.residual_at == 2
        dec = vqvae.DecoderNet.create(vqvae.DEFAULT_INPUT_DIM)
        ddims = [(b.dense.in_dim, b.dense.out_dim) for b in dec.stages]
        assert ddims == [(128, 512), (512, 512), (512, 1024)]
        assert (dec.final.in_dim, dec.final.out_dim) == (1024, 1295)
        assert dec.residual_at == 1

    def test_final_decoder_stage_is_affine(self):
        model = tiny_model()
        final = model.decoder.final
        rng = np.random.default_rng(53)
        u, v = rng.normal(size=(1, final.in_dim)), rng.normal(size=(1, final.in_dim))
        a, b = 2.5, -1.25
        f = lambda t: nk.dense_forward(final, t).value
        lhs = f(a * u + b * v)
        rhs = a * f(u) + b * f(v) - (a + b - 1.0) * f(np.zeros_like(u))
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_wrong_input_dim(self):
        model = tiny_model()
        with pytest.raises(ShapeError):
            vqvae.encode(model.encoder, np.zeros((2, 6)))
        with pytest.raises(ShapeError):
            vqvae.decode(model.decoder, np.zeros((2, 64)))

    def test_nonstandard_k_needs_flag(self):
        with pytest.raises(ParameterError):
            vqvae.Codebook.create(16)
        assert vqvae.Codebook.create(16, allow_nonstandard_k=True).k == 16
        assert vqvae.Codebook.create(64).k == 64


class TestCheckpoint:
    def test_save_load_save_byte_identical(self):
        model = tiny_model(seed=7)
        rng = np.random.default_rng(60)
        model.codebook = model.codebook.initialize_from(rng.normal(size=(10, vqvae.LATENT_DIM)), rng)
        model.phase = "full"
        raw = vqvae.save_model(model, extra_meta={"note": 1})
        loaded, meta, _ = vqvae.load_model(raw)
        raw2 = vqvae.save_model(loaded, extra_meta={"note": 1})
        assert raw == raw2
        assert meta["note"] == 1

    def test_load_restores_values(self):
        model = tiny_model(seed=8)
        x = np.random.default_rng(61).normal(size=(3, 5))
        raw = vqvae.save_model(model)
        loaded, _, _ = vqvae.load_model(raw)
        assert np.array_equal(model.eval_latents(x), loaded.eval_latents(x))

    def test_bad_magic(self):
        with pytest.raises(Exception):
            vqvae.load_container(b"JUNKxxxx")
