"""Discriminator, human-likeness loss, and adversarial training loop."""
import numpy as np
import pytest

from mapdrive import driving_models as dm
from mapdrive import human_like as hl
from mapdrive import learncore as lc
from mapdrive import sim_world as sw


def small_config(variant="m"):
    return dm.ModelConfig(variant=variant, k=2, encoder_widths=(12, 8),
                          lstm_hidden=6, head_widths=(8, 6, 4),
                          semantic_widths=(5, 5, 5),
                          attention_widths=(10, 8, 19))


def real_drivelets(rng, b, n):
    delta = rng.normal(0.0, 40.0, (b, n))
    v = rng.normal(38.0, 6.0, (b, n))
    return np.stack([delta, v], axis=2).reshape(b, 2 * n)


@pytest.fixture(scope="module")
def tiny_log():
    world = sw.build_world(seed=0)
    style = sw.DriverStyle(noise_scale=0.5)
    return sw.simulate_episode(world, style, seed=20, duration=8.0)


# --- drivelet type ------------------------------------------------------------

def test_drivelet_validation():
    d = hl.Drivelet.from_actions([[10.0, 30.0], [12.0, 31.0]])
    assert d.n == 2
    assert np.array_equal(d.values, [10.0, 30.0, 12.0, 31.0])
    with pytest.raises(ValueError):
        hl.Drivelet(np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ValueError):
        hl.Drivelet(np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        hl.Drivelet.from_actions(np.zeros((2, 3)))


# --- discriminator forward ------------------------------------------------------

def test_build_discriminator_shapes_and_determinism():
    a = hl.build_discriminator(n=2, seed=4)
    b = hl.build_discriminator(n=2, seed=4)
    c = hl.build_discriminator(n=2, seed=5)
    assert a.params["d0.w"].shape == (4, 10)
    assert a.params["d1.w"].shape == (10, 10)
    assert a.params["d2.w"].shape == (10, 10)
    assert a.params["d3.w"].shape == (10, 1)
    assert len(a.params) == 8
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data)
               for k in a.params)
    with pytest.raises(ValueError):
        hl.build_discriminator(n=0)


def test_zero_final_layer_outputs_half():
    disc = hl.build_discriminator(n=2, seed=0)
    disc.params["d3.w"].data[:] = 0.0
    disc.params["d3.b"].data[:] = 0.0
    rng = np.random.default_rng(0)
    x = real_drivelets(rng, 5, 2)
    p = hl.discriminator_prob(disc, x)
    assert p.shape == (5, 1)
    assert np.array_equal(p.data, np.full((5, 1), 0.5))
    p2 = hl.discriminator_prob(disc, x)
    assert np.array_equal(p.data, p2.data)


def test_discriminator_input_forms_and_dim_check():
    disc = hl.build_discriminator(n=2, seed=1)
    rng = np.random.default_rng(1)
    row = real_drivelets(rng, 1, 2)[0]
    p_vec = hl.discriminator_prob(disc, row)
    p_obj = hl.discriminator_prob(disc, hl.Drivelet(row))
    p_mat = hl.discriminator_prob(disc, row[None, :])
    assert np.array_equal(p_vec.data, p_obj.data)
    assert np.array_equal(p_vec.data, p_mat.data)
    assert 0.0 < float(p_vec.data[0, 0]) < 1.0
    with pytest.raises(ValueError):
        hl.discriminator_prob(disc, np.zeros(6))


def test_discriminator_gradients_match_finite_differences():
    disc = hl.build_discriminator(n=2, seed=2)
    rng = np.random.default_rng(2)
    x = real_drivelets(rng, 6, 2)
    y = np.array([1.0, 0, 1, 0, 1, 0])[:, None]

    def loss_value():
        return float(lc.bce(hl.discriminator_prob(disc, x), y).data)

    loss = lc.bce(hl.discriminator_prob(disc, x), y)
    lc.backward(loss)
    grads = {k: p.grad.copy() for k, p in disc.params.items()}
    for name, p in disc.params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            h = 1e-6 * max(1.0, abs(orig))
            flat[i] = orig + h
            up = loss_value()
            flat[i] = orig - h
            dn = loss_value()
            flat[i] = orig
            fd = (up - dn) / (2 * h)
            an = grads[name].reshape(-1)[i]
            assert abs(fd - an) <= 1e-9 + 1e-5 * max(abs(fd), abs(an)), \
                (name, i, fd, an)


def test_input_gradient_reaches_drivelet():
    disc = hl.build_discriminator(n=2, seed=3)
    rng = np.random.default_rng(3)
    x = lc.param(real_drivelets(rng, 4, 2))
    loss = lc.neg_log(hl.discriminator_prob(disc, x))
    lc.backward(loss)
    assert x.grad is not None and np.any(x.grad != 0.0)
    # finite-difference spot check on the input side
    an = x.grad[1, 2]
    orig = x.data[1, 2]
    h = 1e-5
    x.data[1, 2] = orig + h
    up = float(lc.neg_log(hl.discriminator_prob(disc, lc.tensor(x.data))).data)
    x.data[1, 2] = orig - h
    dn = float(lc.neg_log(hl.discriminator_prob(disc, lc.tensor(x.data))).data)
    x.data[1, 2] = orig
    fd = (up - dn) / (2 * h)
    assert abs(fd - an) <= 1e-9 + 1e-5 * max(abs(fd), abs(an))


# --- human-likeness loss ----------------------------------------------------------

def test_human_like_loss_reference_values():
    disc = hl.build_discriminator(n=1, seed=6)
    disc.params["d3.w"].data[:] = 0.0
    x = np.array([[20.0, 35.0]])
    disc.params["d3.b"].data[:] = 0.0            # D = 0.5
    assert float(hl.human_like_loss(disc, x).data) == pytest.approx(
        np.log(2.0), abs=1e-15)
    p = np.exp(-1.0)                             # D = e^-1 -> loss 1
    disc.params["d3.b"].data[:] = np.log(p / (1 - p))
    assert float(hl.human_like_loss(disc, x).data) == pytest.approx(1.0,
                                                                    abs=1e-12)
    disc.params["d3.b"].data[:] = 60.0           # D saturates at 1 -> ~0
    assert float(hl.human_like_loss(disc, x).data) == pytest.approx(0.0,
                                                                    abs=1e-12)


def test_human_like_loss_never_touches_disc_params():
    disc = hl.build_discriminator(n=2, seed=7)
    rng = np.random.default_rng(4)
    x = lc.param(real_drivelets(rng, 4, 2))
    loss = hl.human_like_loss(disc, x)
    lc.backward(loss)
    assert x.grad is not None and np.any(x.grad != 0.0)
    for p in disc.params.values():
        assert p.grad is None


def test_adversarial_term_reaches_policy_parameters(tiny_log):
    policy = dm.build_model(small_config(), seed=8)
    disc = hl.build_discriminator(n=2, seed=8)
    ds = dm.WindowDataset([tiny_log], policy.config.k, 2, with_masks=False)
    windows, targets = ds.batch([0, 5, 9])
    pred = dm.predictions_norm(policy, windows, 3)
    real = lc.mul(pred, lc.tensor(np.tile(np.tile(dm.ACTION_SCALE, 2),
                                          (3, 1))))
    loss = hl.human_like_loss(disc, real)
    lc.backward(loss)
    before = {k: p.data.copy() for k, p in disc.params.items()}
    assert np.any(policy.params["steer.out.w"].grad != 0.0)
    assert np.any(policy.params["img.0.w"].grad != 0.0)
    opt = lc.AdamState(policy.params, lr=1e-3)
    lc.adam_step(policy.params, opt)
    for k, p in disc.params.items():
        assert np.array_equal(p.data, before[k])


# --- discriminator training ---------------------------------------------------------

def test_discriminator_learns_separable_sets():
    disc = hl.build_discriminator(n=1, seed=9)
    opt = lc.AdamState(disc.params, lr=1e-3)
    rng = np.random.default_rng(5)
    accs = []
    for _ in range(300):
        human = np.stack([rng.normal(0, 10, 16),
                          rng.normal(45, 3, 16)], axis=1)
        machine = np.stack([rng.normal(0, 10, 16),
                            rng.normal(15, 3, 16)], axis=1)
        _, acc = hl.discriminator_update(disc, opt, human, machine)
        accs.append(acc)
    assert np.mean(accs[-50:]) > 0.95


def test_indistinguishable_sets_settle_near_chance():
    disc = hl.build_discriminator(n=2, seed=10)
    opt = lc.AdamState(disc.params, lr=1e-3)
    rng = np.random.default_rng(6)
    pool = real_drivelets(rng, 600, 2)
    accs = []
    for _ in range(400):
        human = pool[rng.integers(0, len(pool), 32)]
        machine = pool[rng.integers(0, len(pool), 32)]
        _, acc = hl.discriminator_update(disc, opt, human, machine)
        accs.append(acc)
    assert abs(np.mean(accs[-80:]) - 0.5) <= 0.05


# --- adversarial training loop --------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        hl.AdvTrainConfig(lam=-0.1).validate()
    with pytest.raises(ValueError):
        hl.AdvTrainConfig(lam=float("nan")).validate()
    with pytest.raises(ValueError):
        hl.AdvTrainConfig(ratio=0).validate()
    with pytest.raises(ValueError):
        hl.AdvTrainConfig(n=0).validate()
    with pytest.raises(ValueError):
        hl.AdvTrainConfig(lr=0.0).validate()
    assert hl.AdvTrainConfig().validate().lam == 0.5


def test_lambda_zero_matches_pure_imitation_bitwise(tiny_log):
    a = dm.build_model(small_config(), seed=11)
    b = dm.build_model(small_config(), seed=11)
    dm.train_imitation(a, [tiny_log], epochs=1, steps_per_epoch=8,
                       batch_size=4, n=2, seed=3, lr=1e-4)
    disc = hl.build_discriminator(n=2, seed=11)
    cfg = hl.AdvTrainConfig(lam=0.0, n=2, ratio=2, batch_size=4, epochs=1,
                            steps_per_epoch=8, seed=3, lr=1e-4)
    hl.train_adversarial(b, disc, [tiny_log], cfg)
    for k in a.params:
        assert np.array_equal(a.params[k].data, b.params[k].data), k


def test_lambda_positive_diverges_from_imitation(tiny_log):
    a = dm.build_model(small_config(), seed=12)
    b = dm.build_model(small_config(), seed=12)
    dm.train_imitation(a, [tiny_log], epochs=1, steps_per_epoch=8,
                       batch_size=4, n=2, seed=3, lr=1e-4)
    disc = hl.build_discriminator(n=2, seed=12)
    cfg = hl.AdvTrainConfig(lam=0.5, n=2, ratio=1, batch_size=4, epochs=1,
                            steps_per_epoch=8, seed=3, lr=1e-4)
    hl.train_adversarial(b, disc, [tiny_log], cfg)
    assert any(not np.array_equal(a.params[k].data, b.params[k].data)
               for k in a.params)


def test_adversarial_training_deterministic(tiny_log):
    results = []
    for _ in range(2):
        policy = dm.build_model(small_config(), seed=13)
        disc = hl.build_discriminator(n=2, seed=13)
        cfg = hl.AdvTrainConfig(lam=0.5, n=2, batch_size=4, epochs=2,
                                steps_per_epoch=4, seed=9)
        hist = hl.train_adversarial(policy, disc, [tiny_log], cfg)
        results.append((hist,
                        {k: p.data.copy() for k, p in policy.params.items()},
                        {k: p.data.copy() for k, p in disc.params.items()}))
    assert results[0][0] == results[1][0]
    for k in results[0][1]:
        assert np.array_equal(results[0][1][k], results[1][1][k])
    for k in results[0][2]:
        assert np.array_equal(results[0][2][k], results[1][2][k])


def test_history_rows_and_csv(tmp_path, tiny_log):
    policy = dm.build_model(small_config(), seed=14)
    disc = hl.build_discriminator(n=2, seed=14)
    cfg = hl.AdvTrainConfig(lam=0.5, n=2, batch_size=4, epochs=2,
                            steps_per_epoch=3, seed=1)
    hist = hl.train_adversarial(policy, disc, [tiny_log], cfg)
    assert [row["epoch"] for row in hist] == [0, 1]
    for row in hist:
        assert set(row) == {"epoch", "imit_loss", "hum_loss", "disc_acc"}
        assert 0.0 <= row["disc_acc"] <= 1.0
        assert np.isfinite(row["imit_loss"]) and np.isfinite(row["hum_loss"])
    path = tmp_path / "history.csv"
    hl.write_history(path, hist)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "epoch,imit_loss,hum_loss,disc_acc"
    assert len(lines) == 3
    vals = lines[1].split(",")
    assert int(vals[0]) == 0
    assert float(vals[1]) == pytest.approx(hist[0]["imit_loss"])


def test_nonfinite_policy_aborts(tiny_log):
    policy = dm.build_model(small_config(), seed=15)
    policy.params["steer.out.w"].data[0, 0] = np.nan
    disc = hl.build_discriminator(n=2, seed=15)
    cfg = hl.AdvTrainConfig(lam=0.0, n=2, batch_size=4, epochs=1,
                            steps_per_epoch=2, seed=0)
    with pytest.raises(FloatingPointError):
        hl.train_adversarial(policy, disc, [tiny_log], cfg)


def test_mismatched_n_and_short_dataset_raise(tiny_log):
    policy = dm.build_model(small_config(), seed=16)
    disc = hl.build_discriminator(n=3, seed=16)
    cfg = hl.AdvTrainConfig(lam=0.5, n=2, batch_size=4, epochs=1,
                            steps_per_epoch=1, seed=0)
    with pytest.raises(ValueError):
        hl.train_adversarial(policy, disc, [tiny_log], cfg)
    disc2 = hl.build_discriminator(n=2, seed=16)
    big = hl.AdvTrainConfig(lam=0.5, n=2, batch_size=10_000, epochs=1,
                            steps_per_epoch=1, seed=0)
    with pytest.raises(ValueError):
        hl.train_adversarial(policy, disc2, [tiny_log], big)


def saturated_sine_log(rng, T=240, f=10, feature_noise=0.5):
    """Smooth plateau-heavy periodic actions seen through noisy phase features.

    Human drivelets concentrate in two dense modes (the plateaus) plus sparse
    transition arcs. A regressor trained only part-way undershoots into the
    thin mid-region between the modes, which is exactly the flaw a
    distribution-matching term can fix.
    """
    phase = 2 * np.pi * np.arange(T) / 80.0
    s = np.tanh(3.0 * np.sin(phase))
    actions = np.stack([30.0 * s, 40.0 + 8.0 * s], axis=1)
    feats = np.zeros((T, dm.N_FEATURES))
    feats[:, 0] = np.sin(phase) + rng.normal(0, feature_noise, T)
    feats[:, 1] = np.cos(phase) + rng.normal(0, feature_noise, T)
    return sw.DrivingLog(
        world=None, route=None, style=sw.DriverStyle(), f=f, seed=0,
        miss_rate=0.0, blur=0.0, t=np.arange(T) / f, poses=np.zeros((T, 3)),
        actions=actions, offsets=np.zeros(T), features=feats,
        feature_rows=[{} for _ in range(T)],
        ego_u8=np.zeros((T, 4, 64, 64), np.uint8),
        map_u8=np.zeros((T, 3, 64, 64), np.uint8),
        mask_u8=np.zeros((T, 19, 64, 64), np.uint8))


def all_drivelets(policy, log, n):
    """Teacher-forced machine drivelets plus the aligned human ones."""
    ds = dm.WindowDataset([log], policy.config.k, n, with_masks=False)
    scale = np.tile(dm.ACTION_SCALE, n)
    machine = np.empty((len(ds), 2 * n))
    human = np.empty((len(ds), 2 * n))
    for i in range(0, len(ds), 32):
        idx = list(range(i, min(i + 32, len(ds))))
        windows, targets = ds.batch(idx)
        pred = dm.predictions_norm(policy, windows, len(idx)).data
        machine[i:i + len(idx)] = pred * scale
        human[i:i + len(idx)] = targets
    return machine, human


def test_toy_ab_lambda_reduces_cluster_disagreement():
    """Seeded A/B on the saturated-sine toy task.

    Both arms share an imitation pretrain that leaves the steering amplitude
    undershooting, then fine-tune identically except for lambda. The
    adversarial term should pull machine drivelets onto the dense human
    plateau modes and cut nearest-cluster disagreement.
    """
    from mapdrive import evaluation as ev

    rng = np.random.default_rng(11)
    log = saturated_sine_log(rng)
    n = 3
    cfg_toy = dm.ModelConfig(variant="m", k=2, encoder_widths=(12, 8),
                             lstm_hidden=6, head_widths=(16, 12, 8),
                             semantic_widths=(16, 16, 16))
    base = dm.build_model(cfg_toy, seed=21)
    dm.train_imitation(base, [log], epochs=1, steps_per_epoch=150,
                       batch_size=8, n=n, seed=13, lr=2e-3)
    lam0, lam1 = base.clone(), base.clone()
    cfg = dict(n=n, batch_size=8, epochs=2, steps_per_epoch=150,
               seed=14, lr=2e-4, ratio=4, disc_lr=3e-3)
    hl.train_adversarial(lam0, hl.build_discriminator(n=n, seed=21), [log],
                         hl.AdvTrainConfig(lam=0.0, **cfg))
    hl.train_adversarial(lam1, hl.build_discriminator(n=n, seed=21), [log],
                         hl.AdvTrainConfig(lam=1.0, **cfg))

    mach0, human = all_drivelets(lam0, log, n)
    mach1, _ = all_drivelets(lam1, log, n)
    cm = ev.kmeans_fit(human, k=8, seed=0)
    h_assign = ev.assign_clusters(cm, human)
    dis0 = float(np.mean(ev.assign_clusters(cm, mach0) != h_assign))
    dis1 = float(np.mean(ev.assign_clusters(cm, mach1) != h_assign))
    assert dis0 > 0.3        # imitation alone really is off-distribution
    assert dis1 < dis0


def test_discriminator_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    mean, scale = hl.fit_input_stats(real_drivelets(rng, 64, 3))
    disc = hl.build_discriminator(n=3, seed=17, input_mean=mean,
                                  input_scale=scale)
    path = tmp_path / "disc.ckpt"
    hl.save_discriminator(path, disc)
    back = hl.load_discriminator(path)
    assert back.n == 3
    assert np.array_equal(back.input_mean, disc.input_mean)
    assert np.array_equal(back.input_scale, disc.input_scale)
    rng = np.random.default_rng(7)
    x = real_drivelets(rng, 4, 3)
    assert np.array_equal(hl.discriminator_prob(disc, x).data,
                          hl.discriminator_prob(back, x).data)
