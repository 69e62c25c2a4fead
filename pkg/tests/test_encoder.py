import numpy as np
import pytest
import torch

from keyecho.encoder import (EncoderConfig, KeystrokeEncoder, grl, stats_pool)

CFG = EncoderConfig(mel_bins=40, channels=32, embedding_dim=48, num_keys=26,
                    num_domains=4)


def _model(seed=0):
    torch.manual_seed(seed)
    model = KeystrokeEncoder(CFG)
    model.eval()
    return model


class TestFrameEncode:
    def test_preserves_frame_count(self):
        model = _model()
        x = torch.randn(2, 40, 24)
        assert model.frame_encode(x).shape == (2, CFG.channels, 24)

    def test_deterministic_in_eval(self):
        model = _model()
        x = torch.randn(1, 40, 10)
        with torch.no_grad():
            a, b = model.frame_encode(x), model.frame_encode(x)
        torch.testing.assert_close(a, b, rtol=0, atol=0)

    def test_sensitive_to_mel_permutation(self):
        model = _model()
        x = torch.randn(1, 40, 10)
        perm = torch.randperm(40, generator=torch.Generator().manual_seed(1))
        with torch.no_grad():
            diff = (model.frame_encode(x) -
                    model.frame_encode(x[:, perm, :])).norm()
        assert diff > 0

    def test_rejects_wrong_mel_bins(self):
        with pytest.raises(ValueError, match="mel bins"):
            _model().frame_encode(torch.randn(1, 39, 10))


class TestStatsPool:
    def test_constant_features(self):
        x = torch.full((1, 5, 9), 3.25)
        pooled = stats_pool(x)
        torch.testing.assert_close(pooled[0, :5], torch.full((5,), 3.25))
        torch.testing.assert_close(pooled[0, 5:], torch.zeros(5))

    def test_single_frame(self):
        x = torch.randn(1, 4, 1)
        pooled = stats_pool(x)
        torch.testing.assert_close(pooled[0, :4], x[0, :, 0])
        torch.testing.assert_close(pooled[0, 4:], torch.zeros(4))

    def test_hand_arithmetic(self):
        # one channel, frames [1, 3] -> mean 2, population std 1
        pooled = stats_pool(torch.tensor([[[1.0, 3.0]]]))
        assert pooled[0, 0].item() == pytest.approx(2.0)
        assert pooled[0, 1].item() == pytest.approx(1.0)

    def test_matches_direct_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            c, l = rng.integers(1, 12), rng.integers(1, 30)
            x = rng.standard_normal((c, l))
            pooled = stats_pool(torch.as_tensor(x).unsqueeze(0))[0].numpy()
            np.testing.assert_allclose(pooled[:c], x.mean(axis=1), atol=1e-6)
            np.testing.assert_allclose(pooled[c:], x.std(axis=1), atol=1e-6)

    def test_frame_permutation_invariant(self):
        x = torch.randn(2, 6, 15, dtype=torch.float64)
        perm = torch.randperm(15, generator=torch.Generator().manual_seed(2))
        torch.testing.assert_close(stats_pool(x), stats_pool(x[:, :, perm]))

    def test_empty_frames_rejected(self):
        with pytest.raises(ValueError):
            stats_pool(torch.zeros(1, 4, 0))


class TestProjectEmbed:
    def test_linear_at_zero_bias(self):
        model = _model()
        with torch.no_grad():
            model.embed_head.bias.zero_()
            a = torch.randn(1, 2 * CFG.channels)
            b = torch.randn(1, 2 * CFG.channels)
            lhs = model.project_embed(a + b)
            rhs = model.project_embed(a) + model.project_embed(b)
        torch.testing.assert_close(lhs, rhs, rtol=1e-5, atol=1e-6)
        torch.testing.assert_close(
            model.project_embed(torch.zeros(1, 2 * CFG.channels)),
            torch.zeros(1, CFG.embedding_dim))

    def test_output_dimension(self):
        cfg = EncoderConfig(channels=128, embedding_dim=192)
        torch.manual_seed(0)
        model = KeystrokeEncoder(cfg)
        out = model.project_embed(torch.randn(3, 256))
        assert out.shape == (3, 192)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            _model().project_embed(torch.randn(1, 7))


class TestGrl:
    def test_forward_identity(self):
        z = torch.randn(4, 8)
        torch.testing.assert_close(grl(z, 1.0), z)

    def test_backward_scales_negatively(self):
        z = torch.randn(6, dtype=torch.float64, requires_grad=True)
        lam = 0.7
        f = (grl(z, lam) ** 2).sum()
        f.backward()
        torch.testing.assert_close(z.grad, -lam * 2 * z.detach())

    def test_lambda_zero_kills_gradient(self):
        z = torch.randn(5, requires_grad=True)
        (grl(z, 0.0) ** 2).sum().backward()
        torch.testing.assert_close(z.grad, torch.zeros(5))

    def test_gradient_matches_finite_differences(self):
        # d/dz of f(grl(z)) == -lam * central-difference of f at z
        torch.manual_seed(3)
        lam = 1.3
        head = torch.nn.Linear(8, 3).double()
        labels = torch.tensor([1])

        def domain_loss(v):
            logits = head(v.unsqueeze(0))
            return torch.nn.functional.cross_entropy(logits, labels)

        z = torch.randn(8, dtype=torch.float64, requires_grad=True)
        loss = domain_loss(grl(z, lam))
        loss.backward()
        eps = 1e-6
        fd = torch.zeros(8, dtype=torch.float64)
        with torch.no_grad():
            for i in range(8):
                up, down = z.detach().clone(), z.detach().clone()
                up[i] += eps
                down[i] -= eps
                fd[i] = (domain_loss(up) - domain_loss(down)) / (2 * eps)
        rel = (z.grad + lam * fd).norm() / (lam * fd).norm()
        assert rel < 1e-4


class TestHeads:
    def test_key_posterior_normalized(self):
        model = _model()
        z = torch.randn(5, CFG.embedding_dim)
        post = model.key_posterior(z)
        assert post.shape == (5, CFG.num_keys)
        torch.testing.assert_close(post.sum(dim=-1), torch.ones(5))
        assert (post > 0).all()

    def test_uniform_on_equal_logits(self):
        model = _model()
        with torch.no_grad():
            model.key_head.weight.zero_()
            model.key_head.bias.zero_()
            post = model.key_posterior(torch.randn(1, CFG.embedding_dim))
        torch.testing.assert_close(post, torch.full((1, CFG.num_keys),
                                                    1.0 / CFG.num_keys))

    def test_shift_invariance(self):
        torch.manual_seed(1)
        logits = torch.randn(3, 26)
        a = torch.softmax(logits, dim=-1)
        b = torch.softmax(logits + 5.0, dim=-1)
        torch.testing.assert_close(a, b, rtol=1e-5, atol=1e-6)

    def test_domain_posterior_normalized(self):
        model = _model()
        z = torch.randn(4, CFG.embedding_dim)
        post = model.domain_posterior(z)
        assert post.shape == (4, CFG.num_domains)
        torch.testing.assert_close(post.sum(dim=-1), torch.ones(4))


class TestGrlMinimaxDirection:
    def test_encoder_step_increases_domain_loss(self):
        # One gradient step through GRL moves the embedding parameters
        # against the (frozen) domain head on the same batch.
        torch.manual_seed(0)
        model = KeystrokeEncoder(EncoderConfig(
            mel_bins=12, channels=16, embedding_dim=16, num_keys=4,
            num_domains=3))
        model.eval()  # frozen BN statistics keep the comparison exact
        x = torch.randn(32, 12, 9)
        d = torch.randint(0, 3, (32,))

        def domain_loss():
            z = model.embed(x)
            logits = model.domain_head(grl(z, 1.0))
            return torch.nn.functional.cross_entropy(logits, d)

        # Train the head alone briefly so its loss is not at chance level
        # (GRL only affects gradients upstream of it, not the head's own).
        head_opt = torch.optim.SGD(model.domain_head.parameters(), lr=0.5)
        for _ in range(50):
            loss = domain_loss()
            head_opt.zero_grad()
            loss.backward()
            head_opt.step()

        with torch.no_grad():
            before = float(domain_loss())
        encoder_params = [p for n, p in model.named_parameters()
                          if not n.startswith("domain_head")]
        opt = torch.optim.SGD(encoder_params, lr=1e-3)
        loss = domain_loss()
        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            after = float(domain_loss())
        assert after > before
