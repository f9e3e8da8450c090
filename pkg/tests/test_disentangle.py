import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import fd_pairs, rel_err, toy_batch, toy_model
from vts.decoder import reconstruction_loss
from vts.disentangle import (
    DisentangleConfig,
    SpeakerClassifier,
    cross_entropy,
    discriminator_loss,
    entropy,
    generator_loss,
    gradient_reversal,
    revgrad_loss,
)


def uniform_classifier(kind="linear", d_v=64, k=4):
    clf = SpeakerClassifier(kind, d_v, k).double()
    with torch.no_grad():
        clf.head.weight.zero_()
        clf.head.bias.zero_()
    return clf


# --- entropy / cross-entropy --------------------------------------------------------

@pytest.mark.parametrize("k", [2, 4, 10])
def test_entropy_uniform_is_log_k(k):
    p = torch.full((k,), 1.0 / k, dtype=torch.float64)
    assert entropy(p).item() == pytest.approx(math.log(k), abs=1e-9)


def test_entropy_one_hot_is_zero():
    assert entropy(torch.tensor([0.0, 1.0, 0.0, 0.0], dtype=torch.float64)).item() == 0.0


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=8).filter(lambda v: sum(v) > 1e-3))
def test_entropy_bounds(v):
    p = torch.tensor(v, dtype=torch.float64)
    p = p / p.sum()
    h = entropy(p).item()
    assert -1e-12 <= h <= math.log(len(v)) + 1e-12


def test_cross_entropy_values():
    p = torch.tensor([0.7, 0.2, 0.1], dtype=torch.float64)
    assert cross_entropy(0, p).item() == pytest.approx(0.356675, abs=1e-6)
    assert cross_entropy(0, p).item() == pytest.approx(-math.log(0.7), abs=1e-12)
    assert cross_entropy(2, torch.full((4,), 0.25, dtype=torch.float64)).item() == pytest.approx(math.log(4), abs=1e-9)
    assert cross_entropy(1, torch.tensor([0.0, 1.0], dtype=torch.float64)).item() == 0.0


def test_cross_entropy_floor_keeps_finite():
    v = cross_entropy(0, torch.tensor([0.0, 1.0], dtype=torch.float64)).item()
    assert v == pytest.approx(-math.log(1e-12))


def test_invalid_distributions_rejected():
    with pytest.raises(ValueError):
        entropy(torch.tensor([0.5, 0.6]))
    with pytest.raises(ValueError):
        entropy(torch.tensor([1.5, -0.5]))
    with pytest.raises(ValueError):
        cross_entropy(3, torch.tensor([0.5, 0.5]))


# --- loss plug-in values ------------------------------------------------------------

def test_generator_loss_plug_in():
    clf = uniform_classifier()
    target = torch.randn(2, 16, 40, dtype=torch.float64)
    feats = torch.randn(2, 4, 64, dtype=torch.float64)
    val = generator_loss(target.clone(), target, clf, feats, lam=1e-4).item()
    assert val == pytest.approx(-1e-4 * math.log(4), abs=1e-9)


def test_revgrad_loss_plug_in_and_zero_lambda():
    clf = uniform_classifier()
    target = torch.randn(2, 16, 40, dtype=torch.float64)
    pred = target + 0.1
    feats = torch.randn(2, 4, 64, dtype=torch.float64)
    spk = torch.tensor([0, 3])
    assert revgrad_loss(target.clone(), target, clf, feats, spk, 1e-4).item() == pytest.approx(1e-4 * math.log(4), abs=1e-9)
    assert revgrad_loss(pred, target, clf, feats, spk, 0.0).item() == reconstruction_loss(pred, target).item()
    assert generator_loss(pred, target, clf, feats, 0.0).item() == reconstruction_loss(pred, target).item()


def test_discriminator_loss_uniform():
    clf = uniform_classifier()
    feats = torch.randn(3, 5, 64, dtype=torch.float64)
    assert discriminator_loss(clf, feats, [0, 1, 2]).item() == pytest.approx(math.log(4), abs=1e-9)


def test_config_validation():
    assert DisentangleConfig().lam == 1e-4
    assert DisentangleConfig(classifier="MLP").classifier == "mlp"
    with pytest.raises(ValueError):
        DisentangleConfig(mode="adversarial")
    with pytest.raises(ValueError):
        DisentangleConfig(lam=-1)


# --- classifier ---------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["linear", "mlp"])
def test_classifier_outputs_distribution(kind):
    torch.manual_seed(0)
    clf = SpeakerClassifier(kind, 64, 4).double()
    p = clf(torch.randn(5, 7, 64, dtype=torch.float64) * 10)
    assert p.shape == (5, 4)
    assert (p >= 0).all()
    assert torch.allclose(p.sum(-1), torch.ones(5, dtype=torch.float64), atol=1e-12)


@pytest.mark.parametrize("kind", ["linear", "mlp"])
def test_classifier_pools_over_time(kind):
    torch.manual_seed(0)
    clf = SpeakerClassifier(kind, 64, 4).double()
    x = torch.randn(1, 9, 64, dtype=torch.float64)
    assert torch.allclose(clf(x), clf(x[:, torch.randperm(9)]), atol=1e-12)
    with pytest.raises(ValueError):
        clf(x[:, :0])


def test_zero_weights_give_uniform():
    p = uniform_classifier()(torch.randn(2, 3, 64, dtype=torch.float64))
    assert torch.allclose(p, torch.full((2, 4), 0.25, dtype=torch.float64))


# --- gradient reversal --------------------------------------------------------------

def test_reversal_forward_identity_and_negated_gradient():
    x = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
    y = gradient_reversal(x)
    assert torch.equal(y, x)
    w = torch.randn(4, 3, dtype=torch.float64)
    (y * w).sum().backward()
    assert torch.equal(x.grad, -w)


def test_reversal_matches_finite_differences():
    x = torch.randn(6, dtype=torch.float64, requires_grad=True)

    def f(v):
        return torch.sin(v).pow(2).sum()

    f(gradient_reversal(x)).backward()
    for i in range(6):
        e = torch.zeros(6, dtype=torch.float64)
        e[i] = 1e-3
        n = (f(x.detach() + e) - f(x.detach() - e)).item() / 2e-3
        assert rel_err(-x.grad[i].item(), n) < 1e-4


# --- composite objectives on a 2-speaker toy network --------------------------------

def _toy(kind="linear"):
    model = toy_model("SI", kind)
    video, mel, spk, _ = toy_batch()
    return model, video, mel, spk


@pytest.mark.parametrize("group", ["frontend.conv3d.weight", "frontend.lstm.weight_hh_l0", "frontend.resnet.1.conv1.weight"])
def test_revgrad_frontend_gradient_is_mse_minus_ce(group):
    lam = 0.5
    model, video, mel, spk = _toy()
    param = dict(model.named_parameters())[group]

    def joint():
        pred, feats = model(video, mel, spk)
        return revgrad_loss(pred, mel, model.classifier, feats, spk, lam)

    def oracle():
        pred, feats = model(video, mel, spk)
        return reconstruction_loss(pred, mel) - lam * cross_entropy(spk, model.classifier(feats)).mean()

    for a, n in fd_pairs(joint, param, n=3, oracle=oracle):
        assert rel_err(a, n) < 1e-4


def test_revgrad_classifier_gradient_is_plain_ce():
    lam = 0.5
    model, video, mel, spk = _toy()
    param = model.classifier.head.weight

    def joint():
        pred, feats = model(video, mel, spk)
        return revgrad_loss(pred, mel, model.classifier, feats, spk, lam)

    def oracle():
        pred, feats = model(video, mel, spk)
        return reconstruction_loss(pred, mel) + lam * cross_entropy(spk, model.classifier(feats)).mean()

    for a, n in fd_pairs(joint, param, n=4, oracle=oracle):
        assert rel_err(a, n) < 1e-4


def test_revgrad_step_lowers_true_speaker_confidence():
    # With reconstruction already perfect, a small descent step on the frontend through
    # the reversed path must make the classifier less sure of the true speaker.
    model, video, mel, spk = _toy()
    with torch.no_grad():
        target = model(video, mel, spk)[0]

    def ce():
        feats = model.frontend(video)
        return cross_entropy(spk, model.classifier(feats)).mean()

    before = ce().item()
    model.zero_grad()
    pred, feats = model(video, mel, spk)
    revgrad_loss(target, target, model.classifier, feats, spk, 1.0).backward()
    # the frontend's objective goes up along the direction that raises confidence
    grads = [p.grad for p in model.frontend.parameters()]
    model.zero_grad()
    ce().backward()
    conf_dir = [-p.grad for p in model.frontend.parameters()]
    assert sum((g * d).sum() for g, d in zip(grads, conf_dir)).item() > 0
    with torch.no_grad():
        for p, g in zip(model.frontend.parameters(), grads):
            p -= 1e-4 * g
    assert ce().item() > before


def test_dispel_gradient_partitioning():
    model, video, mel, spk = _toy("mlp")
    pred, feats = model(video, mel, spk)
    discriminator_loss(model.classifier, feats, spk).backward(retain_graph=True)
    assert all(p.grad is None or not p.grad.any() for p in model.frontend.parameters())
    assert any(p.grad is not None and p.grad.any() for p in model.classifier.parameters())
    model.zero_grad(set_to_none=True)
    generator_loss(pred, mel, model.classifier, feats, 0.5).backward()
    assert all(p.grad is None or not p.grad.any() for p in model.classifier.parameters())
    assert any(p.grad is not None and p.grad.any() for p in model.frontend.parameters())


def test_generator_step_raises_entropy():
    # at perfect reconstruction the first-order change of the entropy along -dL_g is >= 0
    model, video, mel, spk = _toy()
    with torch.no_grad():
        target = model(video, mel, spk)[0]
    pred, feats = model(video, mel, spk)
    generator_loss(pred, target, model.classifier, feats, 1.0).backward()
    step = [-p.grad.clone() for p in model.frontend.parameters()]
    model.zero_grad()
    h = entropy(model.classifier(model.frontend(video))).mean()
    h.backward()
    dh = sum((p.grad * s).sum() for p, s in zip(model.frontend.parameters(), step)).item()
    assert dh >= 0
