"""
Test the hierarchical VAE: posteriors, encoder/decoder contracts, losses and checkpoints.
"""

import numpy as np
import pytest
import torch

from src.core.config import DHVAEConfig
from src.core.errors import CheckpointMismatch, ShapeMismatch
from src.core.motion import MotionLayout
from src.data.synthetic import synth_dataset
from src.dhvae.checkpoint import VAE_KIND, load_state, read_checkpoint, save_checkpoint
from src.dhvae.losses import (
    dhvae_total_loss,
    elbo_loss,
    elbo_terms,
    flat_elbo_loss,
    joint_loss,
)
from src.dhvae.model import DHVAE, DHVAEOutput
from src.dhvae.posterior import (
    GaussianPosterior,
    LatentTriple,
    kl_diag_gaussian,
    reparameterize,
)
from src.motion.normalization import fit_feature_stats, normalize_array
from src.motion.skeleton import load_skeleton


def small_config(**changes) -> DHVAEConfig:
    values = dict(
        feature_dim=94, latent_dim=16, hidden_dim=32, heads=4, dropout=0.0,
        enc_layers_individual=1, cotransformer_layers=1, dec_layers=1, max_frames=16,
    )
    values.update(changes)
    return DHVAEConfig(**values)


def small_model(seed: int = 0, **changes) -> DHVAE:
    torch.manual_seed(seed)
    return DHVAE(small_config(**changes)).eval()


def standard_triple(batch: int, l: int, d: int, dtype=torch.float32) -> LatentTriple:
    posts = {k: GaussianPosterior.standard_normal((batch, l, d), dtype) for k in "abo"}
    zeros = torch.zeros(batch, l, d, dtype=dtype)
    return LatentTriple(z_o=zeros, z_a=zeros, z_b=zeros, posteriors=posts)


def test_kl_closed_form_cases():
    """KL is zero at the prior and d/2 for a unit mean shift."""
    d = 12
    assert float(kl_diag_gaussian(GaussianPosterior(torch.zeros(1, 1, d), torch.zeros(1, 1, d)))) == 0.0
    assert float(kl_diag_gaussian(GaussianPosterior(torch.ones(1, 1, d), torch.zeros(1, 1, d)))) == d / 2


def test_kl_matches_monte_carlo():
    """Analytic KL against E_q[log q - log p] over 10^5 draws, 20 posteriors."""
    rng = np.random.default_rng(0)
    generator = torch.Generator().manual_seed(0)
    d = 16
    for _ in range(20):
        mean = torch.as_tensor(rng.uniform(1.0, 2.0, size=(1, 1, d)) * rng.choice([-1, 1], size=(1, 1, d)))
        log_var = torch.as_tensor(rng.uniform(-0.5, 0.5, size=(1, 1, d)))
        posterior = GaussianPosterior(mean, log_var)

        q = torch.distributions.Normal(mean[0, 0], posterior.std[0, 0])
        p = torch.distributions.Normal(torch.zeros(d, dtype=torch.float64), torch.ones(d, dtype=torch.float64))
        eps = torch.randn((100_000, d), generator=generator, dtype=torch.float64)
        z = mean[0, 0] + posterior.std[0, 0] * eps
        estimate = (q.log_prob(z) - p.log_prob(z)).sum(dim=-1).mean()

        analytic = kl_diag_gaussian(posterior)
        assert abs(float(analytic) - float(estimate)) / float(analytic) < 0.01


def test_kl_is_nonnegative():
    generator = torch.Generator().manual_seed(1)
    for _ in range(50):
        mean = torch.randn((3, 2, 8), generator=generator)
        log_var = 3 * torch.randn((3, 2, 8), generator=generator)
        assert float(kl_diag_gaussian(GaussianPosterior(mean, log_var))) >= 0.0


def test_posterior_clamp():
    raw = torch.tensor([[-100.0, 0.0, 100.0]])
    posterior = GaussianPosterior.from_raw(torch.zeros(1, 3), raw)
    assert posterior.log_variance.tolist() == [[-30.0, 0.0, 20.0]]
    with pytest.raises(ShapeMismatch):
        GaussianPosterior(torch.zeros(2, 3), torch.zeros(3, 2))


def test_reparameterize():
    """Vanishing sigma returns the mean; seeds reproduce; moments match N(0, 1)."""
    mean = torch.linspace(-1, 1, 16, dtype=torch.float64).reshape(1, 1, 16)
    tight = GaussianPosterior(mean, torch.full_like(mean, -40.0))
    assert torch.max(torch.abs(reparameterize(tight, noise_seed=0) - mean)) < 1e-8

    unit = GaussianPosterior.standard_normal((100_000, 1, 1), torch.float64)
    first = reparameterize(unit, noise_seed=5)
    assert torch.equal(first, reparameterize(unit, noise_seed=5))
    assert abs(float(first.mean())) < 0.02
    assert abs(float(first.var()) - 1.0) < 0.05


def test_encoder_shapes_and_determinism():
    cfg = small_config()
    model = small_model()
    x = torch.randn(2, 12, cfg.feature_dim)
    posterior, embedding = model.encode_individual(x, "a")
    assert tuple(posterior.mean.shape) == (2, cfg.latent_tokens, cfg.latent_dim)
    assert tuple(embedding.shape) == (2, 12, cfg.hidden_dim)

    again, _ = model.encode_individual(x, "a")
    assert torch.equal(posterior.mean, again.mean)

    with pytest.raises(ShapeMismatch):
        model.encode_individual(torch.randn(2, 12, 10), "a")
    with pytest.raises(ShapeMismatch):
        model.encode_individual(torch.randn(1, cfg.max_frames + 1, cfg.feature_dim), "b")


def test_cotransformer_symmetry():
    """Equal inputs give equal branches; swapping persons leaves z_o unchanged."""
    model = small_model(seed=3, cotransformer_layers=2)
    x_a = torch.randn(3, 10, 94)
    x_b = torch.randn(3, 10, 94)
    _, emb_a = model.encode_individual(x_a, "a")
    _, emb_b = model.encode_individual(x_b, "b")

    out_a, out_b = model.fuse_outputs(emb_a, emb_a)
    assert torch.equal(out_a, out_b)

    forward = model.cotransformer_fuse(emb_a, emb_b)
    swapped = model.cotransformer_fuse(emb_b, emb_a)
    assert torch.allclose(forward.mean, swapped.mean, atol=1e-6)
    assert torch.allclose(forward.log_variance, swapped.log_variance, atol=1e-6)

    with pytest.raises(ShapeMismatch):
        model.cotransformer_fuse(emb_a, emb_b[:, :5])


def test_decode_contracts():
    cfg = small_config(latent_tokens=2)
    model = small_model(seed=1, latent_tokens=2)
    z = torch.randn(2, 2, cfg.latent_dim)
    triple = LatentTriple(z_o=torch.randn(2, 2, cfg.latent_dim), z_a=z, z_b=z.clone())
    recon_a, recon_b = model.decode(triple, 9)
    assert tuple(recon_a.shape) == (2, 9, cfg.feature_dim)
    assert torch.equal(recon_a, recon_b)

    with pytest.raises(ShapeMismatch):
        model.decode(LatentTriple.from_tokens(torch.randn(1, 3, cfg.latent_dim)), 9)


def test_elbo_bookkeeping():
    """Zero at perfect reconstruction under the prior; total equals its terms."""
    x = torch.randn(2, 6, 94, dtype=torch.float64)
    perfect = DHVAEOutput(recon_a=x, recon_b=x, triple=standard_triple(2, 1, 8, torch.float64))
    total, terms = elbo_loss(x, x, perfect, kl_weight=0.001)
    assert float(total) == 0.0

    model = small_model(seed=2).double().train()
    x_a = torch.randn(2, 6, 94, dtype=torch.float64)
    x_b = torch.randn(2, 6, 94, dtype=torch.float64)
    output = model(x_a, x_b, generator=torch.Generator().manual_seed(0))
    total, terms = elbo_loss(x_a, x_b, output, kl_weight=0.25)
    expected = terms.recon_a + terms.recon_b + 0.25 * (terms.kl_a + terms.kl_b + terms.kl_o)
    assert abs(float(total) - float(expected)) < 1e-10
    assert set(terms.as_dict()) == {"recon_a", "recon_b", "kl_a", "kl_b", "kl_o"}


def test_elbo_gradient_matches_finite_differences():
    """gradcheck of the ELBO with respect to posterior parameters and reconstructions."""
    generator = torch.Generator().manual_seed(4)
    x_a = torch.randn(2, 3, 5, dtype=torch.float64, generator=generator)
    x_b = torch.randn(2, 3, 5, dtype=torch.float64, generator=generator)

    def loss(mean_a, log_var_o, recon_a):
        posteriors = {
            "a": GaussianPosterior(mean_a, torch.zeros_like(mean_a)),
            "b": GaussianPosterior(torch.zeros_like(mean_a), torch.zeros_like(mean_a)),
            "o": GaussianPosterior(torch.ones_like(log_var_o), log_var_o),
        }
        return elbo_terms(x_a, x_b, recon_a, x_b, posteriors, 0.1).total

    inputs = (
        torch.randn(2, 1, 4, dtype=torch.float64, generator=generator, requires_grad=True),
        torch.randn(2, 1, 4, dtype=torch.float64, generator=generator, requires_grad=True),
        torch.randn(2, 3, 5, dtype=torch.float64, generator=generator, requires_grad=True),
    )
    assert torch.autograd.gradcheck(loss, inputs, eps=1e-6, atol=1e-8, rtol=1e-4)


def test_total_loss_and_joint_term():
    skeleton = load_skeleton("toy8")
    pairs = synth_dataset(0, 2, skeleton, MotionLayout.IH262, (8, 8))
    stats = fit_feature_stats(pairs)
    x_a = torch.as_tensor(np.stack([normalize_array(p.person_a.data, stats) for p in pairs]))
    x_b = torch.as_tensor(np.stack([normalize_array(p.person_b.data, stats) for p in pairs]))

    assert float(joint_loss(x_a, x_b, x_a, x_b, stats, MotionLayout.IH262, skeleton)) == 0.0
    shifted = joint_loss(x_a, x_b, x_a + 0.1, x_b, stats, MotionLayout.IH262, skeleton)
    assert float(shifted) > 0.0

    elbo = torch.tensor(1.5, dtype=torch.float64)
    joint = torch.tensor(0.2, dtype=torch.float64)
    triplet = torch.tensor(0.7, dtype=torch.float64)
    cfg = small_config(joint_weight=0.0, triplet_weight=0.0)
    assert float(dhvae_total_loss(elbo, joint, triplet, cfg)) == 1.5
    cfg = small_config(joint_weight=2.0, triplet_weight=0.5)
    assert abs(float(dhvae_total_loss(elbo, joint, triplet, cfg)) - (1.5 + 0.4 + 0.35)) < 1e-12


def test_flat_elbo_reduces_to_reconstruction_at_prior():
    x = torch.randn(2, 4, 6, dtype=torch.float64)
    prior = GaussianPosterior.standard_normal((2, 1, 3), torch.float64)
    assert float(flat_elbo_loss(x, x, prior, 0.5)) == 0.0
    shifted = GaussianPosterior(torch.ones(2, 1, 3, dtype=torch.float64), torch.zeros(2, 1, 3, dtype=torch.float64))
    assert abs(float(flat_elbo_loss(x, x, shifted, 0.5)) - 0.75) < 1e-12


def test_ablation_variants():
    """Two-branch model reports a zero z_o with no KL; residual-MLP fusion runs."""
    x = torch.randn(2, 8, 94)
    two_branch = small_model(use_global_latent=False)
    posts = two_branch.encode(x, x)
    assert torch.count_nonzero(posts["o"].mean) == 0
    assert float(kl_diag_gaussian(posts["o"])) == 0.0
    assert tuple(two_branch(x, x).recon_b.shape) == (2, 8, 94)

    mlp = small_model(fusion="residual_mlp")
    assert tuple(mlp.latent_means(x, x).to_tokens().shape) == (2, 3, 16)

    separate = small_model(share_person_weights=False)
    assert separate.encoder_a is not separate.encoder_b


def test_checkpoint_reproduces_outputs(tmp_path):
    model = small_model(seed=7)
    path = tmp_path / "vae.ckpt"
    save_checkpoint(path, model, VAE_KIND, {"note": "unit"}, {"stats": None})

    header, arrays = read_checkpoint(path, VAE_KIND)
    assert header["config"] == {"note": "unit"}
    restored = small_model(seed=99)
    load_state(restored, arrays)
    x = torch.randn(1, 10, 94)
    assert torch.equal(model(x, x).recon_a, restored(x, x).recon_a)

    with pytest.raises(CheckpointMismatch):
        load_state(small_model(latent_dim=8), arrays)
    with pytest.raises(CheckpointMismatch):
        read_checkpoint(path, "denoiser_checkpoint")


def main():
    """Run all tests."""
    print("=" * 60)
    print("DHVAE TESTS")
    print("=" * 60)
    test_kl_closed_form_cases()
    test_kl_matches_monte_carlo()
    test_kl_is_nonnegative()
    test_posterior_clamp()
    test_reparameterize()
    test_encoder_shapes_and_determinism()
    test_cotransformer_symmetry()
    test_decode_contracts()
    test_elbo_bookkeeping()
    test_elbo_gradient_matches_finite_differences()
    test_total_loss_and_joint_term()
    test_flat_elbo_reduces_to_reconstruction_at_prior()
    test_ablation_variants()
    print("✓ All DHVAE tests passed")


if __name__ == "__main__":
    main()
