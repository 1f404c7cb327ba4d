"""End-to-end acceptance gate.

One test per guarantee, each printing a single pass line:
  1. every loss matches a straight-from-the-formula reference,
  2. analytic loss gradients match central finite differences,
  3. ranking metrics match exhaustive brute-force enumeration,
  4. structural invariants (stream sharing, reconstruction, gradient
     separation, plan validation, checkpoint round trip),
  5. the desk-scale recipe learns (rank-1 at least 5x chance),
  6. the full loss set is directionally better than the id+triplet baseline,
  7. repeat runs are byte-for-byte deterministic.
"""

import json

import numpy as np
import pytest
import torch

from hwdnet import losses, trainer
from hwdnet.config import DEFAULTS, DESK_PRESET
from hwdnet.data import DatasetIndex, generate_synthetic_dataset
from hwdnet.metrics import cmc_curve, evaluate_protocol, mean_average_precision
from hwdnet.models import (
    ClassifierHeads,
    DecoupleConfig,
    Decoupler,
    RelationPlan,
    TwoStreamEncoder,
    restrainer_transform,
    weight_distance,
)
from hwdnet.models.encoder import PlanError

from oracles import (
    brute_force_cmc,
    brute_force_map,
    finite_diff_grads,
    ref_centroid_loss,
    ref_cross_entropy_sum,
    ref_triplet,
    ref_weight_restrainer,
    relative_grad_error,
)

NUM_TRAIN_IDS = 40
NUM_TEST_IDS = 20
GALLERY_SEEDS = tuple(range(10))


def _identity_head(x):
    return x


# ---------------------------------------------------------------------------
# 1. loss reference equivalence
# ---------------------------------------------------------------------------

def test_losses_match_reference_implementations():
    rng = np.random.default_rng(0)
    labels = np.array([0, 0, 1, 1])  # 2 ids x 2 samples per modality
    y = torch.tensor(labels)

    torch.manual_seed(0)
    encoder = TwoStreamEncoder(RelationPlan.from_name("s2")).double()
    triples = list(encoder.related_tensor_triples())

    for _ in range(200):
        z_rgb = rng.normal(size=(4, 6))
        z_ir = rng.normal(size=(4, 6))
        t_rgb, t_ir = torch.tensor(z_rgb), torch.tensor(z_ir)

        got = float(losses.id_loss(torch.cat([t_rgb, t_ir]), _identity_head,
                                   torch.cat([y, y])))
        ref = ref_cross_entropy_sum(np.concatenate([z_rgb, z_ir]),
                                    np.concatenate([labels, labels]))
        assert abs(got - ref) < 1e-6

        got = float(losses.cross_modality_triplet(t_rgb, t_ir, y, y, 0.5))
        assert abs(got - ref_triplet(z_rgb, z_ir, labels, labels, 0.5)) < 1e-6

        orient_logits = rng.normal(size=(4, 8))
        orient_labels = rng.integers(0, 8, size=4)
        got = float(losses.orientation_loss(torch.tensor(orient_logits),
                                            _identity_head,
                                            torch.tensor(orient_labels)))
        assert abs(got - ref_cross_entropy_sum(orient_logits, orient_labels)) < 1e-6

        for mode in ("single_modality", "cross_modality"):
            got = float(losses.similarity_enforcement_loss(
                t_rgb, y, t_ir, y, mode=mode))
            assert abs(got - ref_centroid_loss(z_rgb, labels, z_ir, labels,
                                               mode)) < 1e-6

        with torch.no_grad():
            for _, _, a, b, w_rgb, w_ir in triples:
                for t in (a, b, w_rgb, w_ir):
                    t.copy_(torch.tensor(rng.normal(size=tuple(t.shape))))
        pairs = [(a.detach().numpy(), b.detach().numpy(),
                  w_rgb.detach().numpy(), w_ir.detach().numpy())
                 for _, _, a, b, w_rgb, w_ir in triples]
        assert abs(float(encoder.restrainer_loss().detach())
                   - ref_weight_restrainer(pairs)) < 1e-6
    print("loss reference equivalence over 200 random batches per loss: PASS")


# ---------------------------------------------------------------------------
# 2. gradient checks
# ---------------------------------------------------------------------------

def _check_grads(make_loss, tensors, tol=1e-4):
    value = make_loss()
    analytic = torch.autograd.grad(value, tensors)
    numeric = finite_diff_grads(make_loss, tensors)
    for g_a, g_n in zip(analytic, numeric):
        assert relative_grad_error(g_a, g_n) < tol


def _triplet_is_smooth_here(z_rgb, z_ir, y, margin, gap=1e-2):
    """True when no hinge sits at its kink and no min/max distance is tied."""
    with torch.no_grad():
        for anchors, ya, others, yo in ((z_rgb, y, z_ir, y), (z_ir, y, z_rgb, y)):
            d = torch.cdist(anchors, others)
            for i in range(len(anchors)):
                pos = sorted(float(d[i, j]) for j in range(len(others))
                             if yo[j] == ya[i])
                neg = sorted(float(d[i, j]) for j in range(len(others))
                             if yo[j] != ya[i])
                if abs(margin + pos[0] - neg[-1]) < gap:
                    return False
                if len(pos) > 1 and pos[1] - pos[0] < gap:
                    return False
                if len(neg) > 1 and neg[-1] - neg[-2] < gap:
                    return False
    return True


def test_loss_gradients_match_finite_differences():
    torch.manual_seed(1)
    y = torch.tensor([0, 0, 1, 1])

    for _ in range(3):
        mu = torch.randn(4, 6, dtype=torch.float64, requires_grad=True)
        _check_grads(lambda: losses.id_loss(mu, _identity_head,
                                            torch.tensor([0, 1, 2, 3])), [mu])

        ups = torch.randn(4, 8, dtype=torch.float64, requires_grad=True)
        _check_grads(lambda: losses.orientation_loss(
            ups, _identity_head, torch.tensor([0, 3, 5, 7])), [ups])

        for mode in ("single_modality", "cross_modality"):
            mu_rgb = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
            mu_ir = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
            _check_grads(lambda m=mode: losses.similarity_enforcement_loss(
                mu_rgb, y, mu_ir, y, mode=m), [mu_rgb, mu_ir])

        a = torch.randn((), dtype=torch.float64, requires_grad=True)
        b = torch.randn((), dtype=torch.float64, requires_grad=True)
        w_rgb = torch.randn(3, 3, dtype=torch.float64, requires_grad=True)
        w_ir = torch.randn(3, 3, dtype=torch.float64, requires_grad=True)
        _check_grads(lambda: weight_distance(restrainer_transform(a, b, w_rgb),
                                             w_ir), [a, b, w_rgb, w_ir])

    # hinge loss: resample until no term sits at a kink or a min/max tie
    margin = 0.5
    checked = 0
    while checked < 3:
        z_rgb = torch.randn(4, 3, dtype=torch.float64)
        z_ir = torch.randn(4, 3, dtype=torch.float64)
        if not _triplet_is_smooth_here(z_rgb, z_ir, y, margin):
            continue
        z_rgb.requires_grad_(True)
        z_ir.requires_grad_(True)
        value = losses.cross_modality_triplet(z_rgb, z_ir, y, y, margin)
        if float(value.detach()) == 0.0:
            continue  # flat region: nothing to compare
        _check_grads(lambda: losses.cross_modality_triplet(z_rgb, z_ir, y, y,
                                                           margin),
                     [z_rgb, z_ir])
        checked += 1
    print("finite-difference gradient checks for every loss: PASS")


# ---------------------------------------------------------------------------
# 3. ranking metric oracle equivalence
# ---------------------------------------------------------------------------

def test_ranking_metrics_match_brute_force():
    # the worked example: positives at ranks 1 and 3 -> AP = (1 + 2/3)/2
    dist = np.array([[0.1, 0.2, 0.3]])
    assert abs(mean_average_precision(dist, [0], [0, 1, 0]) - 0.833333) < 1e-6

    rng = np.random.default_rng(3)
    for _ in range(1000):
        nq = int(rng.integers(1, 5))
        ng = int(rng.integers(2, 7))
        gallery_ids = rng.integers(0, 3, size=ng)
        query_ids = rng.choice(gallery_ids, size=nq)
        dist = rng.random((nq, ng))
        got_cmc = cmc_curve(dist, query_ids, gallery_ids, max_rank=ng)
        ref_cmc = brute_force_cmc(dist, query_ids, gallery_ids, max_rank=ng)
        assert np.max(np.abs(got_cmc - ref_cmc)) < 1e-9
        got_map = mean_average_precision(dist, query_ids, gallery_ids)
        assert abs(got_map - brute_force_map(dist, query_ids, gallery_ids)) < 1e-9
    print("CMC/mAP equal brute-force enumeration on 1000 random cases: PASS")


# ---------------------------------------------------------------------------
# 4. structural invariants
# ---------------------------------------------------------------------------

def test_structural_invariants(tmp_path):
    # (a) fully shared plan: the two streams are one function
    torch.manual_seed(4)
    enc = TwoStreamEncoder(RelationPlan.from_name("s0"))
    enc.eval()
    x = torch.randn(2, 3, 32, 24)
    assert torch.equal(enc(x, "rgb").features, enc(x, "ir").features)

    # (b) reconstruction identities
    split = Decoupler(8, DecoupleConfig(variant="split"))
    z = torch.randn(5, 8)
    out = split(z)
    assert torch.equal(torch.cat([out.upsilon, out.mu], dim=1), z)
    sub = Decoupler(8, DecoupleConfig(variant="subtraction"))
    for p in sub.predictor.parameters():
        with torch.no_grad():
            p.normal_()
    out = sub(z)
    assert torch.equal(out.mu, z - out.upsilon)

    # (c) gradient separation through the split decoupler
    heads = ClassifierHeads(split.d_mu, 3, split.d_upsilon)
    y = torch.tensor([0, 0, 1, 1])
    z_rgb = torch.randn(4, 8, requires_grad=True)
    z_ir = torch.randn(4, 8, requires_grad=True)
    d_rgb, d_ir = split(z_rgb), split(z_ir)
    orient = losses.orientation_loss(torch.cat([d_rgb.upsilon, d_ir.upsilon]),
                                     heads, torch.tensor([0, 1, 2, 3] * 2))
    g = torch.autograd.grad(orient, [z_rgb, z_ir])
    for grad in g:
        assert torch.all(grad[:, split.d_upsilon:] == 0)
    invariant = (losses.id_loss(torch.cat([d_rgb.mu, d_ir.mu]), heads,
                                torch.cat([y, y]))
                 + losses.cross_modality_triplet(d_rgb.mu, d_ir.mu, y, y, 0.5)
                 + losses.similarity_enforcement_loss(d_rgb.mu, y, d_ir.mu, y,
                                                      mode="cross_modality"))
    g = torch.autograd.grad(invariant, [z_rgb, z_ir])
    for grad in g:
        assert torch.all(grad[:, :split.d_upsilon] == 0)

    # (d) only shared-prefix relation plans are valid
    with pytest.raises(PlanError):
        RelationPlan((False, True, False, False, False))

    # (e) checkpoint round trip is bit-exact
    cfg = dict(DEFAULTS, **{"batch.height": 32, "batch.width": 24})
    model = trainer.build_model(cfg, 4)
    optimizer = trainer.build_optimizer(model, cfg)
    rng = np.random.default_rng(0)
    first = tmp_path / "a.pt"
    trainer.save_checkpoint(first, model, optimizer, 0, 0, cfg, rng, 4)
    state = trainer.load_checkpoint(first)
    model2, cfg2 = trainer.restore_model(state)
    optimizer2 = trainer.build_optimizer(model2, cfg2)
    optimizer2.load_state_dict(state["optimizer"])
    rng2 = np.random.default_rng(0)
    rng2.bit_generator.state = state["numpy_rng"]
    torch.set_rng_state(state["torch_rng"])
    second = tmp_path / "b.pt"
    trainer.save_checkpoint(second, model2, optimizer2, 0, 0, state["config"],
                            rng2, 4)
    assert first.read_bytes() == second.read_bytes()
    print("structural invariants (sharing, reconstruction, separation, "
          "plan validation, checkpoint round trip): PASS")


# ---------------------------------------------------------------------------
# 5-7. desk-scale experiment suite (shared fixtures)
# ---------------------------------------------------------------------------

def desk_cfg(seed=0, **overrides):
    cfg = dict(DEFAULTS)
    cfg.update(DESK_PRESET)
    cfg["train.seed"] = seed
    cfg.update(overrides)
    return cfg


@pytest.fixture(scope="module")
def benchmark(tmp_path_factory):
    """Synthetic benchmark: 40 train + 20 test identities, 8 per modality."""
    root = tmp_path_factory.mktemp("bench")
    index = generate_synthetic_dataset(NUM_TRAIN_IDS + NUM_TEST_IDS, 8, 0, root)
    train = DatasetIndex([r for r in index.records if r.identity < NUM_TRAIN_IDS])
    test = DatasetIndex([r for r in index.records if r.identity >= NUM_TRAIN_IDS])
    return train, test


def run_and_evaluate(cfg, train_index, test_index, out_dir):
    ckpt = trainer.train(cfg, train_index, out_dir)
    state = trainer.load_checkpoint(ckpt)
    model, mcfg = trainer.restore_model(state)
    height, width = int(mcfg["batch.height"]), int(mcfg["batch.width"])
    report = evaluate_protocol(
        lambda recs: model.embed_records(recs, height, width),
        test_index, "ir2rgb", "single", GALLERY_SEEDS)
    return report


@pytest.fixture(scope="module")
def full_seed0_report(benchmark, tmp_path_factory):
    train, test = benchmark
    out = tmp_path_factory.mktemp("full_seed0")
    return run_and_evaluate(desk_cfg(seed=0), train, test, out)


def test_desk_scale_learning(benchmark, full_seed0_report):
    train, test = benchmark
    chance = 1.0 / NUM_TEST_IDS

    cfg = desk_cfg(seed=0)
    model = trainer.build_model(cfg, train.num_identities)
    untrained = evaluate_protocol(
        lambda recs: model.embed_records(recs, int(cfg["batch.height"]),
                                         int(cfg["batch.width"])),
        test, "ir2rgb", "single", GALLERY_SEEDS)
    assert abs(untrained.cmc[0] - chance) <= 0.1, \
        f"untrained rank-1 {untrained.cmc[0]:.3f} not near chance {chance:.3f}"

    rank1 = full_seed0_report.cmc[0]
    assert rank1 >= 5 * chance, \
        f"trained rank-1 {rank1:.3f} below {5 * chance:.2f}"
    print(f"desk-scale learning: PASS (trained rank-1 {rank1:.3f} >= "
          f"{5 * chance:.2f}; untrained {untrained.cmc[0]:.3f} ~ chance)")


def test_auxiliary_losses_help_on_average(benchmark, full_seed0_report,
                                          tmp_path_factory):
    train, test = benchmark
    baseline_flags = {"loss.enable.wr": False, "loss.enable.orient": False,
                      "loss.enable.centroid": False}
    full_maps, base_maps = [], []
    for seed in (0, 1, 2):
        if seed == 0:
            full = full_seed0_report
        else:
            full = run_and_evaluate(desk_cfg(seed=seed), train, test,
                                    tmp_path_factory.mktemp(f"full_{seed}"))
        base = run_and_evaluate(desk_cfg(seed=seed, **baseline_flags), train,
                                test, tmp_path_factory.mktemp(f"base_{seed}"))
        full_maps.append(full.map)
        base_maps.append(base.map)
    mean_full, mean_base = np.mean(full_maps), np.mean(base_maps)
    assert mean_full >= mean_base, \
        f"full mAP {mean_full:.3f} < baseline mAP {mean_base:.3f}"
    print(f"auxiliary losses directionally help: PASS (mean mAP full "
          f"{mean_full:.3f} >= baseline {mean_base:.3f} over 3 seeds)")


def test_repeat_run_is_byte_identical(benchmark, full_seed0_report,
                                      tmp_path_factory):
    train, test = benchmark
    repeat = run_and_evaluate(desk_cfg(seed=0), train, test,
                              tmp_path_factory.mktemp("repeat"))
    first_json = full_seed0_report.to_json()
    second_json = repeat.to_json()
    assert first_json.encode() == second_json.encode()
    # sanity: reports carry real content, not trivially-equal empties
    assert json.loads(first_json)["num_queries"] == NUM_TEST_IDS * 8
    print("repeat training+evaluation is byte-identical: PASS")
